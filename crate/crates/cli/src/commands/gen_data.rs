use fedanomaly::data::{generate_synthetic, write_accounts_csv, write_transactions_csv};

use crate::commands::ensure_out;
use crate::config::load_config;
use crate::errors::CliError;
use crate::manifest::write_manifest;
use crate::GenDataArgs;

pub fn run(args: GenDataArgs) -> Result<(), CliError> {
    let mut cfg = load_config(args.common.config.as_deref())?;
    if let Some(v) = args.transactions {
        cfg.dataset.n_transactions = v;
    }
    if let Some(v) = args.accounts {
        cfg.dataset.n_accounts = v;
    }
    if let Some(v) = args.banks {
        cfg.dataset.n_banks = v;
    }
    if let Some(v) = args.anomaly_rate {
        cfg.dataset.anomaly_rate = v;
    }
    if let Some(v) = args.flag_correlation {
        cfg.dataset.flag_correlation = v;
    }
    if let Some(v) = args.seed {
        cfg.dataset.seed = v;
    }

    let out = &args.common.out;
    ensure_out(out)?;
    let data = generate_synthetic(&cfg.dataset)?;
    write_transactions_csv(&out.join("transactions.csv"), &data.transactions)?;
    write_accounts_csv(&out.join("accounts.csv"), &data.accounts)?;

    let outputs = ["transactions.csv".to_string(), "accounts.csv".to_string()];
    write_manifest(out, "gen-data", &cfg, &outputs, None)?;
    let anomalous = data.transactions.iter().filter(|t| t.label.is_anomalous()).count();
    println!(
        "wrote {} transactions ({} anomalous) and {} accounts to {}",
        data.transactions.len(),
        anomalous,
        data.accounts.len(),
        out.display()
    );
    Ok(())
}
