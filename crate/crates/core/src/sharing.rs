//! 2-of-2 additive secret sharing over Z_2^64.
//!
//! A vector x splits into r and x - r with r drawn uniformly from the ring,
//! so either share alone is uniform noise and the pair sums back to x
//! exactly. Linearity is the load-bearing property: parties add shares (or
//! public constants) locally and the reconstruction tracks the plaintext
//! sum with no error beyond the original encoding.

use rand::RngCore;

use crate::party::PartyId;
use crate::ring::{FixedVector, RingError};
use crate::rng::SeedRng;

/// One party's additive share of a fixed-point vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Share {
    pub holder: PartyId,
    pub payload: FixedVector,
}

/// Sharing-layer errors.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SharingError {
    #[error("shares must be held by distinct parties, both at {0}")]
    SameHolder(PartyId),
    #[error("shares held by different parties: {0} vs {1}")]
    HolderMismatch(PartyId, PartyId),
    #[error(transparent)]
    Ring(#[from] RingError),
}

/// Uniform ring vector of the same shape as `like`.
pub fn random_mask(like_len: usize, fraction_bits: u32, rng: &mut SeedRng) -> FixedVector {
    let elems = (0..like_len).map(|_| rng.next_u64()).collect();
    FixedVector::from_elems(elems, fraction_bits)
}

/// Splits `x` into two uniformly random shares for the given holders.
pub fn share(
    x: &FixedVector,
    holder_a: PartyId,
    holder_b: PartyId,
    rng: &mut SeedRng,
) -> (Share, Share) {
    let r = random_mask(x.len(), x.fraction_bits(), rng);
    let rest = x.sub(&r).expect("mask has the shape of x");
    (Share { holder: holder_a, payload: r }, Share { holder: holder_b, payload: rest })
}

/// Recombines a share pair into the plaintext vector.
pub fn reconstruct(a: &Share, b: &Share) -> Result<FixedVector, SharingError> {
    if a.holder == b.holder {
        return Err(SharingError::SameHolder(a.holder));
    }
    Ok(a.payload.add(&b.payload)?)
}

/// Adds two shares held by the same party (share of the sum).
pub fn add_shares(a: &Share, b: &Share) -> Result<Share, SharingError> {
    if a.holder != b.holder {
        return Err(SharingError::HolderMismatch(a.holder, b.holder));
    }
    Ok(Share { holder: a.holder, payload: a.payload.add(&b.payload)? })
}

/// Adds a public constant to one share; the pair then reconstructs x + c.
pub fn add_constant(a: &Share, c: &FixedVector) -> Result<Share, SharingError> {
    Ok(Share { holder: a.holder, payload: a.payload.add(c)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{labeled_rng, rng_from_seed, seed_from_u64};
    use proptest::prelude::*;

    fn fv(xs: &[f64]) -> FixedVector {
        FixedVector::encode(xs, 24).unwrap()
    }

    #[test]
    fn reconstruct_inverts_share() {
        let mut rng = labeled_rng(3, "sharing-test");
        let x = fv(&[0.5, -2.25, 1000.0, 0.0]);
        let (a, b) = share(&x, PartyId::Hub, PartyId::Bank(0), &mut rng);
        assert_eq!(reconstruct(&a, &b).unwrap(), x);
        // A share plus zeros reconstructs with a zero partner.
        let zeros = Share { holder: PartyId::Bank(0), payload: FixedVector::zeros(4, 24) };
        let whole = Share { holder: PartyId::Hub, payload: x.clone() };
        assert_eq!(reconstruct(&whole, &zeros).unwrap(), x);
    }

    #[test]
    fn same_seed_same_shares() {
        let x = fv(&[1.0, 2.0, 3.0]);
        let mut r1 = rng_from_seed(seed_from_u64(9));
        let mut r2 = rng_from_seed(seed_from_u64(9));
        let (a1, b1) = share(&x, PartyId::Hub, PartyId::Bank(0), &mut r1);
        let (a2, b2) = share(&x, PartyId::Hub, PartyId::Bank(0), &mut r2);
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn holder_checks_are_enforced() {
        let mut rng = labeled_rng(4, "sharing-test");
        let x = fv(&[1.0]);
        let (a, b) = share(&x, PartyId::Hub, PartyId::Bank(0), &mut rng);
        assert!(matches!(add_shares(&a, &b), Err(SharingError::HolderMismatch(..))));
        let a2 = a.clone();
        assert!(matches!(reconstruct(&a, &a2), Err(SharingError::SameHolder(..))));
    }

    proptest! {
        // Linearity: reconstruct(share(x) + share(y)) == x + y, exactly.
        #[test]
        fn sharing_is_linear(xs in proptest::collection::vec(-1e4f64..1e4, 1..24), seed in any::<u64>()) {
            let mut rng = rng_from_seed(seed_from_u64(seed));
            let x = fv(&xs);
            let ys: Vec<f64> = xs.iter().map(|v| v * 0.5 - 1.0).collect();
            let y = fv(&ys);
            let (x0, x1) = share(&x, PartyId::Hub, PartyId::Aggregator, &mut rng);
            let (y0, y1) = share(&y, PartyId::Hub, PartyId::Aggregator, &mut rng);
            let s0 = add_shares(&x0, &y0).unwrap();
            let s1 = add_shares(&x1, &y1).unwrap();
            prop_assert_eq!(reconstruct(&s0, &s1).unwrap(), x.add(&y).unwrap());
        }

        #[test]
        fn constant_shift_lands_on_one_side(xs in proptest::collection::vec(-1e4f64..1e4, 1..16), seed in any::<u64>()) {
            let mut rng = rng_from_seed(seed_from_u64(seed));
            let x = fv(&xs);
            let c = fv(&vec![0.25; xs.len()]);
            let (a, b) = share(&x, PartyId::Hub, PartyId::Aggregator, &mut rng);
            let shifted = add_constant(&b, &c).unwrap();
            prop_assert_eq!(reconstruct(&a, &shifted).unwrap(), x.add(&c).unwrap());
        }
    }
}
