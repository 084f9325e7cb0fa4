//! Identities of the three protocol roles.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A protocol participant: the training/query hub, the noise-adding
/// aggregator, or one of the flag-holding banks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PartyId {
    /// Routes transactions, owns the model, drives every session.
    Hub,
    /// Sums bank shares per batch and adds calibrated noise.
    Aggregator,
    /// Holds account flags for one member bank, indexed from zero.
    Bank(u32),
}

impl PartyId {
    /// Stable numeric tag used on the wire: 0 hub, 1 aggregator, 2 + i for bank i.
    pub fn wire_tag(self) -> u32 {
        match self {
            PartyId::Hub => 0,
            PartyId::Aggregator => 1,
            PartyId::Bank(i) => 2 + i,
        }
    }

    /// Inverse of [`wire_tag`](Self::wire_tag). Total: every u32 maps to a party.
    pub fn from_wire_tag(tag: u32) -> PartyId {
        match tag {
            0 => PartyId::Hub,
            1 => PartyId::Aggregator,
            i => PartyId::Bank(i - 2),
        }
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartyId::Hub => write!(f, "hub"),
            PartyId::Aggregator => write!(f, "aggregator"),
            PartyId::Bank(i) => write!(f, "bank:{i}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_tag_round_trips() {
        for p in [PartyId::Hub, PartyId::Aggregator, PartyId::Bank(0), PartyId::Bank(41)] {
            assert_eq!(PartyId::from_wire_tag(p.wire_tag()), p);
        }
    }
}
