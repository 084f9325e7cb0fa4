//! The TOML run configuration: one file drives every subcommand, flags
//! override individual fields on top of it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use fedanomaly::data::{DatasetConfig, PipelineConfig};
use fedanomaly::model::TrainConfig;
use fedanomaly::ot::OtMode;
use fedanomaly::privacy::AttackConfig;
use fedanomaly::protocol::{NoiseSpec, SessionConfig};

use crate::errors::{io_err, CliError};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub session: SessionSettings,
    pub attack: AttackSettings,
    pub tcp: TcpSettings,
}

/// The session knobs that make sense in a config file. Wire-level fields
/// (session id, frame cap, delivery order) stay at library defaults so two
/// runs of the same file are comparable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct SessionSettings {
    pub ot: OtMode,
    pub ot_reduction: bool,
    pub key_cache: bool,
    pub infer_noise: NoiseSpec,
    pub hub_seed: u64,
    pub aggregator_seed: u64,
    pub bank_seed_base: u64,
    pub fraction_bits: u32,
}

impl Default for SessionSettings {
    fn default() -> Self {
        let s = SessionConfig::default();
        SessionSettings {
            ot: s.ot_mode,
            ot_reduction: s.ot_reduction,
            key_cache: s.key_cache,
            infer_noise: s.infer_noise,
            hub_seed: s.hub_seed,
            aggregator_seed: s.aggregator_seed,
            bank_seed_base: s.bank_seed_base,
            fraction_bits: s.fraction_bits,
        }
    }
}

impl SessionSettings {
    pub fn to_session(&self) -> SessionConfig {
        SessionConfig {
            ot_mode: self.ot,
            ot_reduction: self.ot_reduction,
            key_cache: self.key_cache,
            infer_noise: self.infer_noise,
            hub_seed: self.hub_seed,
            aggregator_seed: self.aggregator_seed,
            bank_seed_base: self.bank_seed_base,
            fraction_bits: self.fraction_bits,
            ..SessionConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct AttackSettings {
    #[serde(flatten)]
    pub base: AttackConfig,
    /// Training-noise settings swept by `attack-mia`, as `NoiseSpec` strings.
    pub grid: Vec<String>,
    /// Known-fractions swept by `attack-mia`; empty means just `base.alpha`.
    pub alphas: Vec<f64>,
}

impl Default for AttackSettings {
    fn default() -> Self {
        AttackSettings {
            base: AttackConfig::default(),
            grid: vec!["none".into(), "gaussian:0.1".into(), "gaussian:0.2".into()],
            alphas: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct TcpSettings {
    pub host: String,
    /// Parties listen on `base_port + wire tag`, so a run with n banks uses
    /// `base_port .. base_port + 2 + n`.
    pub base_port: u16,
}

impl Default for TcpSettings {
    fn default() -> Self {
        TcpSettings { host: "127.0.0.1".into(), base_port: 47310 }
    }
}

/// Reads the config file if one was given, otherwise starts from defaults.
/// TOML has no way to write `None`, so `clip-norm = 0.0` means "clipping
/// off" and is normalized here.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let mut cfg: RunConfig = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io_err(p))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
    };
    if cfg.train.clip_norm == Some(0.0) {
        cfg.train.clip_norm = None;
    }
    cfg.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
    cfg.attack.base.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

/// Writes the fully resolved config, so spawned party processes and replays
/// see exactly what this run used.
pub fn save_config_toml(path: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| CliError::Config(format!("serialize config: {e}")))?;
    std::fs::write(path, text).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.dataset.n_transactions, cfg.dataset.n_transactions);
        assert_eq!(back.train.epochs, cfg.train.epochs);
        assert_eq!(back.session.ot, cfg.session.ot);
        assert_eq!(back.attack.base.alpha, cfg.attack.base.alpha);
        assert_eq!(back.tcp.base_port, cfg.tcp.base_port);
    }

    #[test]
    fn partial_file_fills_in_defaults() {
        let text = "[train]\nepochs = 3\n\n[session]\not = \"crypto\"\n";
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.session.ot, OtMode::Crypto);
        assert!(cfg.session.ot_reduction);
    }

    #[test]
    fn zero_clip_norm_means_disabled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[train]\nclip-norm = 0.0\n").unwrap();
        let cfg = load_config(Some(&p)).unwrap();
        assert_eq!(cfg.train.clip_norm, None);
    }

    #[test]
    fn bad_toml_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "train = \"not a table\"").unwrap();
        match load_config(Some(&p)) {
            Err(CliError::Config(msg)) => assert!(msg.contains("c.toml")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn session_settings_map_onto_session_config() {
        let mut s = SessionSettings::default();
        s.infer_noise = NoiseSpec::Gaussian { sigma: 0.5 };
        s.ot = OtMode::Crypto;
        let sc = s.to_session();
        assert_eq!(sc.ot_mode, OtMode::Crypto);
        assert_eq!(sc.infer_noise, NoiseSpec::Gaussian { sigma: 0.5 });
        assert_eq!(sc.session_id, SessionConfig::default().session_id);
    }
}
