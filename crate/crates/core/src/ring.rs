//! Fixed-point arithmetic in the ring Z_2^64.
//!
//! A real value x is stored as the two's-complement residue of
//! round(x * 2^f) for a fraction-bit count f (default 24). Addition and
//! subtraction wrap silently; that wrapping is what lets additive masks
//! cancel exactly, so secret-shared sums reconstruct without error. The
//! only lossy step is the initial rounding, bounded by 2^-(f+1) per value.
//!
//! Model arithmetic stays in f64; values cross into the ring only at the
//! protocol boundary (updates, masks, noise) and cross back on decode.

use serde::{Deserialize, Serialize};

/// Default fraction-bit count for protocol values.
pub const DEFAULT_FRACTION_BITS: u32 = 24;

/// One residue mod 2^64.
pub type RingElement = u64;

/// Arithmetic and shape errors for ring values.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RingError {
    #[error("value {value:e} overflows the fixed-point range at {fraction_bits} fraction bits")]
    Overflow { value: f64, fraction_bits: u32 },
    #[error("non-finite value cannot be encoded")]
    NonFinite,
    #[error("length mismatch: {left} vs {right} elements")]
    LengthMismatch { left: usize, right: usize },
    #[error("fraction-bit mismatch: {left} vs {right}")]
    FractionMismatch { left: u32, right: u32 },
}

/// Encodes `x` with `f` fraction bits.
///
/// Fails when x is not finite or |round(x * 2^f)| >= 2^63.
pub fn encode(x: f64, f: u32) -> Result<RingElement, RingError> {
    if !x.is_finite() {
        return Err(RingError::NonFinite);
    }
    let scaled = (x * (f64::from(2u32)).powi(f as i32)).round();
    // 2^63 is exactly representable in f64, so the strict bound is exact.
    if scaled >= 9_223_372_036_854_775_808.0 || scaled <= -9_223_372_036_854_775_808.0 {
        return Err(RingError::Overflow { value: x, fraction_bits: f });
    }
    Ok((scaled as i64) as u64)
}

/// Decodes a residue back to f64, interpreting it as two's complement.
pub fn decode(v: RingElement, f: u32) -> f64 {
    (v as i64) as f64 / (f64::from(2u32)).powi(f as i32)
}

/// Vector of residues sharing one fraction-bit count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedVector {
    elems: Vec<RingElement>,
    fraction_bits: u32,
}

impl FixedVector {
    /// Wraps raw residues.
    pub fn from_elems(elems: Vec<RingElement>, fraction_bits: u32) -> Self {
        FixedVector { elems, fraction_bits }
    }

    /// Encodes a slice of reals elementwise.
    pub fn encode(xs: &[f64], fraction_bits: u32) -> Result<Self, RingError> {
        let elems = xs.iter().map(|&x| encode(x, fraction_bits)).collect::<Result<_, _>>()?;
        Ok(FixedVector { elems, fraction_bits })
    }

    /// All-zero vector.
    pub fn zeros(len: usize, fraction_bits: u32) -> Self {
        FixedVector { elems: vec![0; len], fraction_bits }
    }

    /// Decodes elementwise.
    pub fn decode(&self) -> Vec<f64> {
        self.elems.iter().map(|&v| decode(v, self.fraction_bits)).collect()
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn fraction_bits(&self) -> u32 {
        self.fraction_bits
    }

    pub fn elems(&self) -> &[RingElement] {
        &self.elems
    }

    fn check_shape(&self, rhs: &Self) -> Result<(), RingError> {
        if self.elems.len() != rhs.elems.len() {
            return Err(RingError::LengthMismatch { left: self.elems.len(), right: rhs.elems.len() });
        }
        if self.fraction_bits != rhs.fraction_bits {
            return Err(RingError::FractionMismatch {
                left: self.fraction_bits,
                right: rhs.fraction_bits,
            });
        }
        Ok(())
    }

    /// Elementwise wrapping sum.
    pub fn add(&self, rhs: &Self) -> Result<Self, RingError> {
        self.check_shape(rhs)?;
        let elems =
            self.elems.iter().zip(&rhs.elems).map(|(&a, &b)| a.wrapping_add(b)).collect();
        Ok(FixedVector { elems, fraction_bits: self.fraction_bits })
    }

    /// Elementwise wrapping difference.
    pub fn sub(&self, rhs: &Self) -> Result<Self, RingError> {
        self.check_shape(rhs)?;
        let elems =
            self.elems.iter().zip(&rhs.elems).map(|(&a, &b)| a.wrapping_sub(b)).collect();
        Ok(FixedVector { elems, fraction_bits: self.fraction_bits })
    }

    /// In-place wrapping sum.
    pub fn add_assign(&mut self, rhs: &Self) -> Result<(), RingError> {
        self.check_shape(rhs)?;
        for (a, &b) in self.elems.iter_mut().zip(&rhs.elems) {
            *a = a.wrapping_add(b);
        }
        Ok(())
    }

    /// In-place wrapping difference.
    pub fn sub_assign(&mut self, rhs: &Self) -> Result<(), RingError> {
        self.check_shape(rhs)?;
        for (a, &b) in self.elems.iter_mut().zip(&rhs.elems) {
            *a = a.wrapping_sub(b);
        }
        Ok(())
    }

    /// Little-endian byte image, 8 bytes per element.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.elems.len() * 8);
        for &e in &self.elems {
            out.extend_from_slice(&e.to_le_bytes());
        }
        out
    }

    /// Parses a little-endian byte image. Fails on ragged length.
    pub fn from_le_bytes(bytes: &[u8], fraction_bits: u32) -> Result<Self, RingError> {
        if bytes.len() % 8 != 0 {
            return Err(RingError::LengthMismatch { left: bytes.len(), right: bytes.len() / 8 * 8 });
        }
        let elems = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(FixedVector { elems, fraction_bits })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_zero_is_zero() {
        assert_eq!(encode(0.0, 24).unwrap(), 0);
    }

    #[test]
    fn encode_three_halves_at_sixteen_bits() {
        assert_eq!(encode(1.5, 16).unwrap(), 98_304);
    }

    #[test]
    fn encode_minus_one_wraps_to_top() {
        assert_eq!(encode(-1.0, 24).unwrap(), u64::MAX - (1 << 24) + 1);
    }

    // Exact-rational check: the encoding of 1/10 must be the integer closest
    // to 2^24/10, i.e. |10 * enc - 2^24| <= 5, which puts the decoded value
    // within 2^-24 of 0.1.
    #[test]
    fn tenth_matches_rational_oracle() {
        let enc = encode(0.1, 24).unwrap();
        assert_eq!(enc, 1_677_722);
        let err_times_ten = (10i128 * enc as i128 - (1i128 << 24)).abs();
        assert!(err_times_ten <= 5, "not the nearest multiple: {err_times_ten}");
        assert!((decode(enc, 24) - 0.1).abs() <= 2f64.powi(-24));
    }

    #[test]
    fn decode_encode_round_trip_is_exact_on_grid() {
        // Values already on the fixed-point grid survive unchanged.
        for v in [0.0, 1.0, -3.5, 123.0625, -0.000244140625] {
            assert_eq!(decode(encode(v, 24).unwrap(), 24), v);
        }
    }

    #[test]
    fn overflow_is_rejected() {
        assert!(matches!(encode(1e300, 24), Err(RingError::Overflow { .. })));
        assert!(matches!(encode(f64::NAN, 24), Err(RingError::NonFinite)));
        // Largest representable magnitude at f=24 is just under 2^39.
        assert!(encode(2f64.powi(39), 24).is_err());
        assert!(encode(2f64.powi(39) - 1.0, 24).is_ok());
    }

    #[test]
    fn wraparound_at_top_of_ring_is_silent() {
        let top = FixedVector::from_elems(vec![i64::MAX as u64], 24);
        let one = FixedVector::from_elems(vec![1], 24);
        let wrapped = top.add(&one).unwrap();
        // 2^63 - 1 + 1 = 2^63, which two's complement reads as -2^63.
        assert_eq!(wrapped.elems()[0], 1u64 << 63);
        assert_eq!(decode(wrapped.elems()[0], 24), -(2f64.powi(39)));
        // And adding the same again keeps wrapping deterministically.
        assert_eq!(wrapped.add(&wrapped).unwrap().elems()[0], 0);
    }

    #[test]
    fn shape_mismatches_are_typed() {
        let a = FixedVector::zeros(3, 24);
        let b = FixedVector::zeros(4, 24);
        let c = FixedVector::zeros(3, 16);
        assert!(matches!(a.add(&b), Err(RingError::LengthMismatch { .. })));
        assert!(matches!(a.add(&c), Err(RingError::FractionMismatch { .. })));
    }

    #[test]
    fn byte_image_round_trips() {
        let v = FixedVector::from_elems(vec![0, 1, u64::MAX, 0x0123_4567_89ab_cdef], 24);
        let bytes = v.to_le_bytes();
        assert_eq!(FixedVector::from_le_bytes(&bytes, 24).unwrap(), v);
        assert!(FixedVector::from_le_bytes(&bytes[..9], 24).is_err());
    }

    proptest! {
        #[test]
        fn add_commutes_and_sub_inverts(a in proptest::collection::vec(any::<u64>(), 1..32),
                                        b in proptest::collection::vec(any::<u64>(), 1..32)) {
            let n = a.len().min(b.len());
            let x = FixedVector::from_elems(a[..n].to_vec(), 24);
            let y = FixedVector::from_elems(b[..n].to_vec(), 24);
            prop_assert_eq!(x.add(&y).unwrap(), y.add(&x).unwrap());
            prop_assert_eq!(x.add(&y).unwrap().sub(&y).unwrap(), x.clone());
            let zero = FixedVector::zeros(n, 24);
            prop_assert_eq!(x.add(&zero).unwrap(), x);
        }

        #[test]
        fn encoded_sum_tracks_real_sum(x in -1e6f64..1e6, y in -1e6f64..1e6) {
            let fx = FixedVector::encode(&[x], 24).unwrap();
            let fy = FixedVector::encode(&[y], 24).unwrap();
            let sum = fx.add(&fy).unwrap().decode()[0];
            // Two roundings of 2^-25 each.
            prop_assert!((sum - (x + y)).abs() <= 2f64.powi(-24));
        }
    }
}
