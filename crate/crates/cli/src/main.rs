//! `fedanomaly`: generate data, train (pooled or federated), score, attack,
//! and benchmark from one binary. Every subcommand reads an optional TOML
//! config and applies flag overrides on top.

mod commands;
mod config;
mod errors;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fedanomaly::model::TrainConfig;
use fedanomaly::ot::OtMode;
use fedanomaly::protocol::{InferStrategy, NoiseSpec};

use crate::errors::CliError;

#[derive(Parser)]
#[command(
    name = "fedanomaly",
    version,
    about = "Federated transaction anomaly detection with oblivious flag lookups"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic transaction and account corpus.
    GenData(GenDataArgs),
    /// Train the detector on pooled plaintext data.
    TrainCentralized(TrainCentralizedArgs),
    /// Train across hub, aggregator, and banks without pooling flags.
    TrainFederated(TrainFederatedArgs),
    /// Score transactions with a trained checkpoint.
    Infer(InferArgs),
    /// Run the membership-inference attack across a noise grid.
    AttackMia(AttackMiaArgs),
    /// Time the cost components of a run.
    Bench(BenchArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Flag overrides for the training section of the config.
#[derive(Args)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Per-sample gradient clip bound; 0 disables clipping.
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Aggregation noise: none, gaussian:<sigma>, or laplace:<lambda>.
    #[arg(long)]
    noise: Option<NoiseSpec>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train with the defensive-flag input zeroed.
    #[arg(long)]
    flag_blind: Option<bool>,
}

impl TrainOverrides {
    fn apply(&self, t: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.lr0 {
            t.lr0 = v;
        }
        if let Some(v) = self.weight_decay {
            t.weight_decay = v;
        }
        if let Some(v) = self.clip_norm {
            t.clip_norm = if v == 0.0 { None } else { Some(v) };
        }
        if let Some(v) = self.noise {
            t.noise = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.flag_blind {
            t.flag_blind = v;
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    transactions: Option<usize>,
    #[arg(long)]
    accounts: Option<usize>,
    #[arg(long)]
    banks: Option<u32>,
    #[arg(long)]
    anomaly_rate: Option<f64>,
    /// Probability that an anomalous transaction hits a flagged account.
    #[arg(long)]
    flag_correlation: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainCentralizedArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory holding transactions.csv and accounts.csv.
    #[arg(long, default_value = "out")]
    data: PathBuf,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Args)]
struct TrainFederatedArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory holding transactions.csv and accounts.csv.
    #[arg(long, default_value = "out")]
    data: PathBuf,
    #[command(flatten)]
    train: TrainOverrides,
    /// In-process deterministic network, or real sockets.
    #[arg(long, value_enum, default_value_t = Transport::Sim)]
    transport: Transport,
    /// Oblivious-transfer construction: ideal or crypto.
    #[arg(long)]
    ot: Option<OtMode>,
    /// Skip bank lookups on rows the hub already labels non-anomalous.
    #[arg(long)]
    ot_reduction: Option<bool>,
    /// Reuse per-account transfer keys across epochs.
    #[arg(long)]
    key_cache: Option<bool>,
    /// Which party this process plays in a tcp run.
    #[arg(long, default_value_t = Role::All)]
    role: Role,
    #[arg(long)]
    host: Option<String>,
    /// Parties listen on base-port + 0 (hub), + 1 (aggregator), + 2 + i (bank i).
    #[arg(long)]
    base_port: Option<u16>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory holding transactions.csv and accounts.csv.
    #[arg(long, default_value = "out")]
    data: PathBuf,
    /// Checkpoint to score with; defaults to <out>/checkpoint.bin.
    #[arg(long)]
    model: Option<PathBuf>,
    /// How the hub reads a reconstructed score: direct or round.
    #[arg(long)]
    strategy: Option<InferStrategy>,
    /// Noise added to each reconstructed score, e.g. gaussian:0.01.
    #[arg(long)]
    infer_noise: Option<NoiseSpec>,
    /// Score every row or only the held-out test rows.
    #[arg(long, value_enum, default_value_t = Split::All)]
    split: Split,
}

#[derive(Args)]
struct AttackMiaArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory holding transactions.csv and accounts.csv.
    #[arg(long, default_value = "out")]
    data: PathBuf,
    #[command(flatten)]
    train: TrainOverrides,
    /// Comma-separated training-noise grid, e.g. none,gaussian:0.1.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<String>,
    /// Comma-separated known-fraction grid, e.g. 0.1,0.2,0.5.
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    /// Shadow models per grid point.
    #[arg(long)]
    shadows: Option<usize>,
    #[arg(long)]
    attack_seed: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Multiplies every component's work size.
    #[arg(long, default_value_t = 1)]
    scale: u32,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
enum Transport {
    Sim,
    Tcp,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
enum Split {
    All,
    Test,
}

/// Party selector for tcp runs. `All` spawns one child process per party
/// and merges their outputs.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Role {
    All,
    Hub,
    Aggregator,
    Bank(u32),
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Role, String> {
        match s {
            "all" => Ok(Role::All),
            "hub" => Ok(Role::Hub),
            "aggregator" => Ok(Role::Aggregator),
            other => match other.strip_prefix("bank:") {
                Some(i) => {
                    i.parse().map(Role::Bank).map_err(|e| format!("bad bank index {i:?}: {e}"))
                }
                None => Err(format!(
                    "unknown role {other:?}; expected all, hub, aggregator, or bank:<i>"
                )),
            },
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::All => write!(f, "all"),
            Role::Hub => write!(f, "hub"),
            Role::Aggregator => write!(f, "aggregator"),
            Role::Bank(i) => write!(f, "bank:{i}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => commands::gen_data::run(a),
        Command::TrainCentralized(a) => commands::train_centralized::run(a),
        Command::TrainFederated(a) => commands::train_federated::run(a),
        Command::Infer(a) => commands::infer::run(a),
        Command::AttackMia(a) => commands::attack::run(a),
        Command::Bench(a) => commands::bench::run(a),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn role_round_trips_through_strings() {
        for role in [Role::All, Role::Hub, Role::Aggregator, Role::Bank(3)] {
            assert_eq!(role.to_string().parse::<Role>().unwrap(), role);
        }
        assert!("bank:".parse::<Role>().is_err());
        assert!("banker".parse::<Role>().is_err());
    }

    #[test]
    fn zero_clip_norm_override_disables_clipping() {
        let ov = TrainOverrides {
            epochs: None,
            batch_size: None,
            lr0: None,
            weight_decay: None,
            clip_norm: Some(0.0),
            noise: None,
            seed: None,
            flag_blind: None,
        };
        let mut t = TrainConfig::default();
        ov.apply(&mut t);
        assert_eq!(t.clip_norm, None);
    }
}
