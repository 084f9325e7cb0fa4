//! Flag-recovery attack against the trained detector, and the sweep
//! machinery that maps out the privacy-utility tradeoff.
//!
//! The attacker here is the hub itself: it already holds every
//! transaction and the final model, and wants the banks' flag bits. It
//! knows the flags of an `alpha` fraction of accounts, trains shadow
//! detectors on those rows with the exact production pipeline, teaches a
//! classifier to tell correct flag guesses from wrong ones by how the
//! shadows score them, and then applies that classifier to the accounts
//! it does not know. Reported success covers only receivers of anomalous
//! transactions; every non-anomalous receiver is unflagged by
//! construction, so predicting those is vacuous.

use std::cell::Cell;
use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{upsample, DataError, PreparedDataset, FEATURE_COUNT};
use crate::model::{
    auprc, detector_input, score_with_true_flags, train_centralized, train_plain, Mlp, ModelError,
    TrainConfig, TrainData,
};
use crate::protocol::{
    infer_in_sim, train_in_sim, InferStrategy, NoiseSpec, ProtocolError, SessionConfig,
};
use crate::rng::labeled_rng;

#[derive(Debug, thiserror::Error)]
pub enum PrivacyError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("flag of unknown account {account} read before scoring began")]
    GuardTripped { account: u32 },
    #[error("bad attack configuration: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Access-guarded view of the per-account flag bits.
///
/// The attack pipeline is only ever allowed to read flags of accounts in
/// its known set; the rest stay sealed until [`begin_scoring`] opens them
/// for the final accuracy measurement. An early read fails and is counted,
/// so a test (or an assert) can prove the pipeline never peeked.
///
/// [`begin_scoring`]: GuardedFlagStore::begin_scoring
pub struct GuardedFlagStore<'a> {
    flags: &'a [bool],
    known: Vec<bool>,
    scoring: Cell<bool>,
    trips: Cell<u64>,
}

impl<'a> GuardedFlagStore<'a> {
    pub fn new(flags: &'a [bool], known_accounts: &BTreeSet<u32>) -> Self {
        let known = (0..flags.len()).map(|a| known_accounts.contains(&(a as u32))).collect();
        GuardedFlagStore { flags, known, scoring: Cell::new(false), trips: Cell::new(0) }
    }

    pub fn is_known(&self, account: u32) -> bool {
        self.known[account as usize]
    }

    /// The flag bit, if this reader is entitled to it right now.
    pub fn flag(&self, account: u32) -> Result<bool, PrivacyError> {
        if !self.known[account as usize] && !self.scoring.get() {
            self.trips.set(self.trips.get() + 1);
            return Err(PrivacyError::GuardTripped { account });
        }
        Ok(self.flags[account as usize])
    }

    /// Opens the unknown flags for the final accuracy computation.
    pub fn begin_scoring(&self) {
        self.scoring.set(true);
    }

    /// How many times something tried to read a sealed flag.
    pub fn trips(&self) -> u64 {
        self.trips.get()
    }
}

/// Attacker strength and classifier hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct AttackConfig {
    /// Fraction of accounts whose flags the attacker already knows.
    pub alpha: f64,
    /// Shadow detectors trained on splits of the known rows.
    pub shadows: usize,
    /// Hidden widths of the attack classifier.
    pub attack_hidden: Vec<usize>,
    pub attack_epochs: usize,
    pub attack_lr: f64,
    pub attack_batch: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            alpha: 0.2,
            shadows: 5,
            attack_hidden: vec![128, 64, 64],
            attack_epochs: 10,
            attack_lr: 1e-2,
            attack_batch: 256,
            seed: 7,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), PrivacyError> {
        if !(self.alpha.is_finite() && 0.0 < self.alpha && self.alpha < 1.0) {
            return Err(PrivacyError::Config("alpha must lie strictly between 0 and 1".into()));
        }
        if self.shadows == 0 {
            return Err(PrivacyError::Config("at least one shadow model is required".into()));
        }
        if self.attack_epochs == 0 || self.attack_batch == 0 {
            return Err(PrivacyError::Config("attack training needs epochs and a batch size".into()));
        }
        if !(self.attack_lr.is_finite() && self.attack_lr > 0.0) {
            return Err(PrivacyError::Config("attack learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// What one attack run measured.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackResult {
    /// Fraction of anomalous unknown-flag rows whose receiver flag the
    /// attack recovered.
    pub success_rate: f64,
    /// Success of the no-effort attacker that always guesses the
    /// unflagged state for those same rows.
    pub baseline_rate: f64,
    /// Target model quality on the held-out test rows, scored with true
    /// flags.
    pub auprc: f64,
    /// Rows the rates were measured over.
    pub evaluated_rows: usize,
}

/// Success rate of guessing flag 0 on every row.
fn guess_zero_rate(truths: &[bool]) -> f64 {
    if truths.is_empty() {
        return 0.0;
    }
    truths.iter().filter(|&&t| !t).count() as f64 / truths.len() as f64
}

/// The anomalous-class share the training multiset realizes, used to give
/// shadow models the same class balance the target saw.
fn realized_upsample_ratio(data: &PreparedDataset) -> f64 {
    let anomalous = data.train_rows.iter().filter(|&&r| data.labels[r]).count();
    let normal = data.train_rows.len() - anomalous;
    if normal == 0 {
        1.0
    } else {
        anomalous as f64 / normal as f64
    }
}

/// One classifier row: the detector's input under a flag guess, plus the
/// score some model gave it.
fn attack_row(features: &crate::data::FeatureVector, guess: bool, model: &Mlp) -> Vec<f64> {
    let mut x = detector_input(features, guess);
    let score = model.forward(&x);
    x.push(score);
    x
}

fn assert_identical_pipeline(shadow: &TrainConfig, target: &TrainConfig) {
    assert_eq!(shadow.epochs, target.epochs, "shadow epochs must match the target");
    assert_eq!(shadow.batch_size, target.batch_size, "shadow batch size must match the target");
    assert_eq!(shadow.lr0, target.lr0, "shadow learning rate must match the target");
    assert_eq!(shadow.weight_decay, target.weight_decay, "shadow decay must match the target");
    assert_eq!(shadow.clip_norm, target.clip_norm, "shadow clipping must match the target");
    assert_eq!(shadow.noise, target.noise, "shadow noise must match the target");
    assert_eq!(shadow.seed, target.seed, "shadow seed must match the target");
    assert_eq!(shadow.flag_blind, target.flag_blind, "shadow flag use must match the target");
}

/// Runs the full flag-recovery attack against a freshly trained target.
///
/// The target is trained over the federated protocol with `target_cfg` and
/// `session`; the attacker then builds shadows, the classifier, and its
/// guesses exactly as documented on the module. Unknown flags are read
/// only through the guard, and only after scoring begins; the run asserts
/// the guard never tripped.
pub fn run_mia(
    data: &PreparedDataset,
    target_cfg: &TrainConfig,
    attack: &AttackConfig,
    session: &SessionConfig,
) -> Result<AttackResult, PrivacyError> {
    attack.validate()?;
    let n_accounts = data.account_flags.len();
    if n_accounts < 2 {
        return Err(PrivacyError::Config("need at least two accounts to split".into()));
    }

    // Known accounts: a seeded alpha fraction, whole accounts only.
    let mut order: Vec<u32> = (0..n_accounts as u32).collect();
    order.shuffle(&mut labeled_rng(attack.seed, "mia-known-split"));
    let n_known = ((n_accounts as f64 * attack.alpha).round() as usize).clamp(1, n_accounts - 1);
    let known: BTreeSet<u32> = order[..n_known].iter().copied().collect();
    let guard = GuardedFlagStore::new(&data.account_flags, &known);

    // The system under attack.
    let target = train_in_sim(data, target_cfg, session)?;

    // Deduplicated training rows, split by flag knowledge.
    let base_rows: BTreeSet<usize> = data.train_rows.iter().copied().collect();
    let (known_rows, unknown_rows): (Vec<usize>, Vec<usize>) =
        base_rows.into_iter().partition(|&r| guard.is_known(data.receiver_account[r]));
    if known_rows.is_empty() {
        return Err(PrivacyError::Config("no training rows with known flags".into()));
    }

    let ratio = realized_upsample_ratio(data);
    let known_accounts: Vec<u32> = known.iter().copied().collect();

    let mut attack_inputs: Vec<Vec<f64>> = Vec::new();
    let mut attack_labels: Vec<bool> = Vec::new();
    for s in 0..attack.shadows {
        // Fresh account-level split of the known set per shadow, half and
        // half: the held-out half is where the classifier's training rows
        // come from, so it gets an equal share.
        let mut accs = known_accounts.clone();
        accs.shuffle(&mut labeled_rng(attack.seed, &format!("mia-shadow-split-{s}")));
        let cut = (accs.len() / 2).clamp(1, accs.len() - 1);
        let train_accs: BTreeSet<u32> = accs[..cut].iter().copied().collect();

        let shadow_train: Vec<usize> = known_rows
            .iter()
            .copied()
            .filter(|&r| train_accs.contains(&data.receiver_account[r]))
            .collect();
        let shadow_test: Vec<usize> = known_rows
            .iter()
            .copied()
            .filter(|&r| !train_accs.contains(&data.receiver_account[r]))
            .collect();
        if shadow_train.is_empty() || shadow_test.is_empty() {
            return Err(PrivacyError::Config(format!(
                "known rows too small to split for shadow {s}"
            )));
        }

        // Flags for the shadow's rows, all within the known set.
        let mut flag_bits = vec![false; data.n_rows()];
        for &r in shadow_train.iter().chain(&shadow_test) {
            flag_bits[r] = guard.flag(data.receiver_account[r])?;
        }

        // Same class balance the target trained under. A split with no
        // anomalous rows at all has nothing to upsample and trains as-is.
        let sub_labels: Vec<bool> = shadow_train.iter().map(|&r| data.labels[r]).collect();
        let shadow_rows: Vec<usize> = if sub_labels.iter().any(|&l| l) {
            upsample(
                &sub_labels,
                ratio,
                &mut labeled_rng(attack.seed, &format!("mia-shadow-upsample-{s}")),
            )?
            .into_iter()
            .map(|i| shadow_train[i])
            .collect()
        } else {
            shadow_train.clone()
        };

        let shadow_cfg = target_cfg.clone();
        assert_identical_pipeline(&shadow_cfg, target_cfg);
        let shadow = train_centralized(
            &TrainData {
                features: &data.features,
                labels: &data.labels,
                flag_bits: &flag_bits,
                rows: &shadow_rows,
            },
            &shadow_cfg,
        )?;

        // Both guesses per held-out transaction, labeled by correctness.
        for &row in &shadow_test {
            let truth = flag_bits[row];
            for guess in [false, true] {
                attack_inputs.push(attack_row(&data.features[row], guess, &shadow));
                attack_labels.push(guess == truth);
            }
        }
    }

    let mut dims = Vec::with_capacity(attack.attack_hidden.len() + 2);
    dims.push(FEATURE_COUNT + 2);
    dims.extend_from_slice(&attack.attack_hidden);
    dims.push(1);
    let attack_net = train_plain(
        &attack_inputs,
        &attack_labels,
        &dims,
        attack.attack_epochs,
        attack.attack_batch,
        attack.attack_lr,
        attack.seed,
    )?;

    // Guess the sealed flags, then open them to grade the guesses.
    let mut predictions: Vec<bool> = Vec::new();
    let mut judged_rows: Vec<usize> = Vec::new();
    for &row in &unknown_rows {
        if !data.labels[row] {
            continue;
        }
        let s0 = attack_net.forward(&attack_row(&data.features[row], false, &target.model));
        let s1 = attack_net.forward(&attack_row(&data.features[row], true, &target.model));
        // Strict comparison: a tie keeps the unflagged guess.
        predictions.push(s1 > s0);
        judged_rows.push(row);
    }
    if judged_rows.is_empty() {
        return Err(PrivacyError::Config(
            "no anomalous rows with unknown flags to evaluate".into(),
        ));
    }

    guard.begin_scoring();
    let truths: Vec<bool> = judged_rows
        .iter()
        .map(|&r| guard.flag(data.receiver_account[r]))
        .collect::<Result<_, _>>()?;
    let correct = predictions.iter().zip(&truths).filter(|(p, t)| p == t).count();
    assert_eq!(guard.trips(), 0, "attack pipeline read a sealed flag");

    let scores =
        score_with_true_flags(&target.model, &data.features, &data.flag_bits, &data.test_rows);
    let test_labels: Vec<bool> = data.test_rows.iter().map(|&r| data.labels[r]).collect();

    Ok(AttackResult {
        success_rate: correct as f64 / judged_rows.len() as f64,
        baseline_rate: guess_zero_rate(&truths),
        auprc: auprc(&scores, &test_labels)?,
        evaluated_rows: judged_rows.len(),
    })
}

/// One line of the privacy-utility table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub noise_family: String,
    pub param: f64,
    pub alpha: f64,
    pub mia_success: f64,
    pub baseline: f64,
    pub auprc: f64,
    pub seed: u64,
}

fn noise_family(noise: NoiseSpec) -> (&'static str, f64) {
    match noise {
        NoiseSpec::None => ("none", 0.0),
        NoiseSpec::Gaussian { sigma } => ("gaussian", sigma),
        NoiseSpec::Laplace { lambda } => ("laplace", lambda),
    }
}

/// Full target-train plus attack per (noise, attacker) pair.
pub fn sweep_tradeoff(
    data: &PreparedDataset,
    base_cfg: &TrainConfig,
    grid: &[NoiseSpec],
    attacks: &[AttackConfig],
    session: &SessionConfig,
) -> Result<Vec<TradeoffRow>, PrivacyError> {
    if grid.is_empty() {
        return Err(PrivacyError::Config("empty noise grid".into()));
    }
    if attacks.is_empty() {
        return Err(PrivacyError::Config("no attack configurations".into()));
    }
    let mut rows = Vec::with_capacity(grid.len() * attacks.len());
    for &noise in grid {
        let cfg = TrainConfig { noise, ..base_cfg.clone() };
        let (family, param) = noise_family(noise);
        for attack in attacks {
            let r = run_mia(data, &cfg, attack, session)?;
            rows.push(TradeoffRow {
                noise_family: family.to_string(),
                param,
                alpha: attack.alpha,
                mia_success: r.success_rate,
                baseline: r.baseline_rate,
                auprc: r.auprc,
                seed: attack.seed,
            });
        }
    }
    Ok(rows)
}

pub fn write_tradeoff_csv(path: &Path, rows: &[TradeoffRow]) -> Result<(), PrivacyError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// AUPRC of both inference answer strategies at each score-noise level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceNoiseRow {
    pub sigma: f64,
    pub direct_auprc: f64,
    pub round_auprc: f64,
}

/// Scores the test split through the inference protocol at every noise
/// level, once per answer strategy. Both strategies face identical noise
/// draws, so the comparison is paired.
pub fn sweep_inference_noise(
    data: &PreparedDataset,
    model: &Mlp,
    sigmas: &[f64],
    session: &SessionConfig,
) -> Result<Vec<InferenceNoiseRow>, PrivacyError> {
    if sigmas.is_empty() {
        return Err(PrivacyError::Config("empty sigma grid".into()));
    }
    let labels: Vec<bool> = data.test_rows.iter().map(|&r| data.labels[r]).collect();
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(PrivacyError::Config(format!("bad inference sigma {sigma}")));
        }
        let noisy = SessionConfig {
            infer_noise: if sigma == 0.0 {
                NoiseSpec::None
            } else {
                NoiseSpec::Gaussian { sigma }
            },
            ..*session
        };
        let direct = infer_in_sim(data, model, &data.test_rows, InferStrategy::Direct, &noisy)?;
        let round = infer_in_sim(data, model, &data.test_rows, InferStrategy::Round, &noisy)?;
        rows.push(InferenceNoiseRow {
            sigma,
            direct_auprc: auprc(&direct.scores, &labels)?,
            round_auprc: auprc(&round.scores, &labels)?,
        });
    }
    Ok(rows)
}
