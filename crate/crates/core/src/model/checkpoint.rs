//! Versioned binary model checkpoints.
//!
//! Layout, all little-endian:
//! magic "FAMC" | version u32 | layer count u32 | dims u32 each |
//! parameters f64 each (flat order) | stat columns u32 | means | stds.

use std::path::Path;

use super::mlp::Mlp;
use super::ModelError;
use crate::data::NormStats;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FAMC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Caps that keep a corrupt header from provoking absurd allocations.
const MAX_LAYERS: usize = 64;
const MAX_DIM: u32 = 1 << 20;

pub fn save_checkpoint(path: &Path, model: &Mlp, norm: &NormStats) -> Result<(), ModelError> {
    let params = model.params_flat();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(ModelError::NonFinite);
    }
    if norm.mean.len() != norm.std.len() {
        return Err(ModelError::ShapeMismatch {
            expected: norm.mean.len(),
            got: norm.std.len(),
        });
    }
    let mut out = Vec::with_capacity(16 + params.len() * 8);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.dims().len() as u32).to_le_bytes());
    for &d in model.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for p in &params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&(norm.mean.len() as u32).to_le_bytes());
    for v in norm.mean.iter().chain(&norm.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.at + n > self.bytes.len() {
            return Err(ModelError::Checkpoint("truncated".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>, ModelError> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let x = self.f64()?;
            if !x.is_finite() {
                return Err(ModelError::NonFinite);
            }
            v.push(x);
        }
        Ok(v)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(Mlp, NormStats), ModelError> {
    let bytes = std::fs::read(path)?;
    let mut c = Cursor { bytes: &bytes, at: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let n_layers = c.u32()? as usize;
    if !(2..=MAX_LAYERS).contains(&n_layers) {
        return Err(ModelError::Checkpoint("implausible layer count".into()));
    }
    let mut dims = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let d = c.u32()?;
        if d == 0 || d > MAX_DIM {
            return Err(ModelError::Checkpoint("implausible layer size".into()));
        }
        dims.push(d as usize);
    }
    let param_count: usize =
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let params = c.f64_vec(param_count)?;
    let n_stats = c.u32()? as usize;
    if n_stats > MAX_DIM as usize {
        return Err(ModelError::Checkpoint("implausible stat count".into()));
    }
    let mean = c.f64_vec(n_stats)?;
    let std = c.f64_vec(n_stats)?;
    if c.at != bytes.len() {
        return Err(ModelError::Checkpoint("trailing bytes".into()));
    }
    let model = Mlp::from_parts(&dims, &params)?;
    Ok((model, NormStats { mean, std }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::labeled_rng;

    fn sample() -> (Mlp, NormStats) {
        let model = Mlp::new(&[6, 5, 1], &mut labeled_rng(1, "ckpt-test"));
        let norm = NormStats {
            mean: vec![1.0, -2.5, 0.0, 3.25, 9.0, 0.125],
            std: vec![1.0, 2.0, 0.5, 1.0, 4.0, 1.0],
        };
        (model, norm)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (model, norm) = sample();
        save_checkpoint(&path, &model, &norm).unwrap();
        let (loaded_model, loaded_norm) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_model.dims(), model.dims());
        assert_eq!(loaded_model.params_flat(), model.params_flat());
        assert_eq!(loaded_norm, norm);
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (model, norm) = sample();
        save_checkpoint(&path, &model, &norm).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::Checkpoint(m)) if m == "bad magic"));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        std::fs::write(&path, &bad_version).unwrap();
        assert!(
            matches!(load_checkpoint(&path), Err(ModelError::Checkpoint(m)) if m.contains("version"))
        );

        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::Checkpoint(m)) if m == "truncated"));

        let mut long = good.clone();
        long.push(0);
        std::fs::write(&path, &long).unwrap();
        assert!(
            matches!(load_checkpoint(&path), Err(ModelError::Checkpoint(m)) if m == "trailing bytes")
        );
    }

    #[test]
    fn non_finite_parameters_are_refused_on_save() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (mut model, norm) = sample();
        let mut params = model.params_flat();
        params[3] = f64::NAN;
        model.set_params_flat(&params).unwrap();
        assert!(matches!(save_checkpoint(&path, &model, &norm), Err(ModelError::NonFinite)));
    }
}
