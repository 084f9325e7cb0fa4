//! Calibrated noise for aggregate perturbation.
//!
//! Sampling is hand-rolled on top of the seeded CSPRNG with a fixed
//! two-words-per-draw budget, so every party can reproduce a noise stream
//! exactly from a seed regardless of platform libm differences in other
//! samplers.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::rng::SeedRng;

/// Which distribution perturbs an aggregate, and how strongly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NoiseSpec {
    None,
    Gaussian { sigma: f64 },
    Laplace { lambda: f64 },
}

impl NoiseSpec {
    pub fn is_none(self) -> bool {
        self == NoiseSpec::None
    }

    /// Standard deviation of the marginal distribution, 0 for `None`.
    pub fn std_dev(self) -> f64 {
        match self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Gaussian { sigma } => sigma,
            NoiseSpec::Laplace { lambda } => lambda * std::f64::consts::SQRT_2,
        }
    }
}

/// Default calibration: Gaussian with standard deviation ten times the
/// gradient clipping bound, sized so a single account's worst-case
/// contribution is well inside one noise standard deviation.
pub fn noise_default(clip: f64) -> NoiseSpec {
    NoiseSpec::Gaussian { sigma: 10.0 * clip }
}

#[derive(Debug, thiserror::Error)]
#[error("bad noise spec {0:?}: expected \"none\", \"gaussian:<sigma>\" or \"laplace:<lambda>\"")]
pub struct NoiseSpecParseError(String);

impl FromStr for NoiseSpec {
    type Err = NoiseSpecParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || NoiseSpecParseError(s.to_string());
        if s.eq_ignore_ascii_case("none") {
            return Ok(NoiseSpec::None);
        }
        let (family, param) = s.split_once(':').ok_or_else(bad)?;
        let value: f64 = param.parse().map_err(|_| bad())?;
        if !(value.is_finite() && value > 0.0) {
            return Err(bad());
        }
        match family.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(NoiseSpec::Gaussian { sigma: value }),
            "laplace" => Ok(NoiseSpec::Laplace { lambda: value }),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for NoiseSpec {
    type Error = NoiseSpecParseError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseSpec::None => write!(f, "none"),
            NoiseSpec::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            NoiseSpec::Laplace { lambda } => write!(f, "laplace:{lambda}"),
        }
    }
}

impl From<NoiseSpec> for String {
    fn from(n: NoiseSpec) -> String {
        n.to_string()
    }
}

/// 53-bit mantissa scale: maps a `>> 11` word into [0, 1).
const U53: f64 = 1.0 / (1u64 << 53) as f64;

/// One standard normal draw via the Box-Muller transform, keeping only the
/// cosine branch. Always consumes exactly two RNG words.
pub fn sample_standard_normal(rng: &mut SeedRng) -> f64 {
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * U53; // (0, 1]
    let u2 = (rng.next_u64() >> 11) as f64 * U53; // [0, 1)
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// One standard (unit-scale) Laplace draw via inverse CDF. Consumes exactly
/// two RNG words so the per-draw budget matches the normal sampler.
pub fn sample_standard_laplace(rng: &mut SeedRng) -> f64 {
    let u = ((rng.next_u64() >> 11) as f64 + 0.5) * U53; // (0, 1)
    let _ = rng.next_u64();
    let p = u - 0.5;
    -p.signum() * (1.0 - 2.0 * p.abs()).ln()
}

/// One draw from `spec`. `None` consumes no RNG words and returns 0.
pub fn sample_noise(spec: NoiseSpec, rng: &mut SeedRng) -> f64 {
    match spec {
        NoiseSpec::None => 0.0,
        NoiseSpec::Gaussian { sigma } => sigma * sample_standard_normal(rng),
        NoiseSpec::Laplace { lambda } => lambda * sample_standard_laplace(rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::labeled_rng;

    #[test]
    fn default_calibration_is_ten_times_the_clip_bound() {
        assert_eq!(noise_default(100.0), NoiseSpec::Gaussian { sigma: 1000.0 });
        assert_eq!(noise_default(1.0), NoiseSpec::Gaussian { sigma: 10.0 });
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["none", "gaussian:0.2", "laplace:0.1", "gaussian:1000"] {
            let spec: NoiseSpec = s.parse().unwrap();
            let again: NoiseSpec = spec.to_string().parse().unwrap();
            assert_eq!(spec, again);
        }
        assert!("gaussian".parse::<NoiseSpec>().is_err());
        assert!("gaussian:-1".parse::<NoiseSpec>().is_err());
        assert!("cauchy:1".parse::<NoiseSpec>().is_err());
        assert!("gaussian:nan".parse::<NoiseSpec>().is_err());
    }

    #[test]
    fn normal_sampler_moments_are_right() {
        let mut rng = labeled_rng(99, "noise-test");
        let n = 200_000;
        let samples: Vec<f64> = (0..n).map(|_| sample_standard_normal(&mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
        // Tail sanity: about 4.6% of mass lies beyond two sigma.
        let beyond = samples.iter().filter(|s| s.abs() > 2.0).count() as f64 / n as f64;
        assert!((beyond - 0.0455).abs() < 0.005, "two-sigma tail {beyond}");
    }

    #[test]
    fn laplace_sampler_moments_are_right() {
        let mut rng = labeled_rng(7, "noise-test");
        let n = 200_000;
        let samples: Vec<f64> = (0..n).map(|_| sample_standard_laplace(&mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 2.0).abs() < 0.05, "var {var} (unit laplace has variance 2)");
        // Median of |x| for unit Laplace is ln 2.
        let mut abs: Vec<f64> = samples.iter().map(|s| s.abs()).collect();
        abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((abs[n / 2] - std::f64::consts::LN_2).abs() < 0.01);
    }

    #[test]
    fn draws_consume_a_fixed_word_budget() {
        let mut reference = labeled_rng(3, "noise-test");
        let words: Vec<u64> = (0..3).map(|_| reference.next_u64()).collect();

        let mut a = labeled_rng(3, "noise-test");
        let _ = sample_standard_normal(&mut a);
        assert_eq!(a.next_u64(), words[2], "normal draw eats exactly two words");

        let mut b = labeled_rng(3, "noise-test");
        let _ = sample_standard_laplace(&mut b);
        assert_eq!(b.next_u64(), words[2], "laplace draw eats exactly two words");

        let mut c = labeled_rng(3, "noise-test");
        let _ = sample_noise(NoiseSpec::None, &mut c);
        assert_eq!(c.next_u64(), words[0], "disabled noise eats nothing");
    }

    #[test]
    fn scaled_draws_track_the_spec_std() {
        for spec in [NoiseSpec::Gaussian { sigma: 250.0 }, NoiseSpec::Laplace { lambda: 40.0 }] {
            let mut rng = labeled_rng(11, "noise-test");
            let n = 100_000;
            let samples: Vec<f64> = (0..n).map(|_| sample_noise(spec, &mut rng)).collect();
            let mean = samples.iter().sum::<f64>() / n as f64;
            let std =
                (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            assert!((std - spec.std_dev()).abs() < 0.03 * spec.std_dev(), "{spec}: std {std}");
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let draw = |seed| {
            let mut rng = labeled_rng(seed, "noise-test");
            sample_standard_normal(&mut rng)
        };
        assert_eq!(draw(1), draw(1));
        assert_ne!(draw(1), draw(2));
    }
}
