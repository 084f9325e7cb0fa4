//! Prime-order group interface for the Diffie-Hellman transfer.
//!
//! The construction needs nothing beyond exponent arithmetic: scalar
//! sampling, base-point and arbitrary-point multiplication, point
//! addition/subtraction, and a fixed 32-byte encoding. Any constant-time
//! prime-order group fits; the shipped instantiation is ristretto255.

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_POINT;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use rand::RngCore;

use super::OtError;
use crate::rng::SeedRng;

/// Group operations the transfer construction relies on.
pub trait OtGroup {
    type Scalar: Clone;
    type Point: Clone + PartialEq;

    fn random_scalar(rng: &mut SeedRng) -> Self::Scalar;
    fn basepoint_mul(s: &Self::Scalar) -> Self::Point;
    fn mul(p: &Self::Point, s: &Self::Scalar) -> Self::Point;
    fn add(a: &Self::Point, b: &Self::Point) -> Self::Point;
    fn sub(a: &Self::Point, b: &Self::Point) -> Self::Point;
    fn to_bytes(p: &Self::Point) -> [u8; 32];
    fn from_bytes(bytes: &[u8; 32]) -> Result<Self::Point, OtError>;
}

/// ristretto255 instantiation.
pub struct Ristretto;

impl OtGroup for Ristretto {
    type Scalar = Scalar;
    type Point = RistrettoPoint;

    fn random_scalar(rng: &mut SeedRng) -> Scalar {
        // Wide reduction keeps the sampling uniform without tying the group
        // crate to our RNG crate's trait versions.
        let mut wide = [0u8; 64];
        rng.fill_bytes(&mut wide);
        Scalar::from_bytes_mod_order_wide(&wide)
    }

    fn basepoint_mul(s: &Scalar) -> RistrettoPoint {
        RISTRETTO_BASEPOINT_POINT * s
    }

    fn mul(p: &RistrettoPoint, s: &Scalar) -> RistrettoPoint {
        p * s
    }

    fn add(a: &RistrettoPoint, b: &RistrettoPoint) -> RistrettoPoint {
        a + b
    }

    fn sub(a: &RistrettoPoint, b: &RistrettoPoint) -> RistrettoPoint {
        a - b
    }

    fn to_bytes(p: &RistrettoPoint) -> [u8; 32] {
        p.compress().to_bytes()
    }

    fn from_bytes(bytes: &[u8; 32]) -> Result<RistrettoPoint, OtError> {
        CompressedRistretto::from_slice(bytes)
            .map_err(|_| OtError::InvalidPoint)?
            .decompress()
            .ok_or(OtError::InvalidPoint)
    }
}
