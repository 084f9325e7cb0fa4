use fedanomaly::privacy::{sweep_tradeoff, write_tradeoff_csv, AttackConfig};
use fedanomaly::protocol::NoiseSpec;

use crate::commands::{ensure_out, load_prepared};
use crate::config::load_config;
use crate::errors::CliError;
use crate::manifest::write_manifest;
use crate::AttackMiaArgs;

fn parse_grid(specs: &[String]) -> Result<Vec<NoiseSpec>, CliError> {
    specs
        .iter()
        .map(|s| s.parse().map_err(|e| CliError::Config(format!("noise grid entry {s:?}: {e}"))))
        .collect()
}

pub fn run(args: AttackMiaArgs) -> Result<(), CliError> {
    let mut cfg = load_config(args.common.config.as_deref())?;
    args.train.apply(&mut cfg.train);
    if let Some(v) = args.shadows {
        cfg.attack.base.shadows = v;
    }
    if let Some(v) = args.attack_seed {
        cfg.attack.base.seed = v;
    }
    if !args.grid.is_empty() {
        cfg.attack.grid = args.grid.clone();
    }
    if !args.alphas.is_empty() {
        cfg.attack.alphas = args.alphas.clone();
    }

    let grid = parse_grid(&cfg.attack.grid)?;
    let alphas = if cfg.attack.alphas.is_empty() {
        vec![cfg.attack.base.alpha]
    } else {
        cfg.attack.alphas.clone()
    };
    let attacks: Vec<AttackConfig> = alphas
        .iter()
        .map(|&alpha| AttackConfig { alpha, ..cfg.attack.base.clone() })
        .collect();

    let out = &args.common.out;
    ensure_out(out)?;
    let data = load_prepared(&args.data, &cfg)?;
    let rows = sweep_tradeoff(&data, &cfg.train, &grid, &attacks, &cfg.session.to_session())?;
    write_tradeoff_csv(&out.join("tradeoff.csv"), &rows)?;

    println!("noise          alpha   attack  baseline  auprc");
    for r in &rows {
        let noise = if r.param == 0.0 {
            r.noise_family.clone()
        } else {
            format!("{}:{}", r.noise_family, r.param)
        };
        println!(
            "{noise:<14} {:<7} {:<7.4} {:<9.4} {:.4}",
            r.alpha, r.mia_success, r.baseline, r.auprc
        );
    }

    let outputs = ["tradeoff.csv".to_string()];
    write_manifest(out, "attack-mia", &cfg, &outputs, None)?;
    Ok(())
}
