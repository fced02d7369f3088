//! Transaction fees and their distribution to signing validators.
//!
//! A confirmed transaction's fee is shared among the validators that signed
//! it, each receiving `floor(α · m/M · fee)` for its stake `m`, provided `m`
//! is at least `θ·M`. With `α ≤ 3` nobody holding less than a third of the
//! stake can earn back more than they pay in fees, so issuing transactions
//! always costs something.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::confirm::StakeMap;
use crate::crypto::PublicKey;
use crate::message::{MessageId, Transaction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub const fn new(num: u64, den: u64) -> Self {
        Ratio { num, den }
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FeePolicy {
    pub base: u64,
    pub per_input: u64,
    pub per_output: u64,
    /// Share of a fee that is redistributed, scaled by stake.
    pub alpha: Ratio,
    /// Minimum stake fraction for a validator to earn anything.
    pub theta: Ratio,
}

impl Default for FeePolicy {
    fn default() -> Self {
        FeePolicy {
            base: 1,
            per_input: 0,
            per_output: 0,
            alpha: Ratio::new(1, 1),
            theta: Ratio::new(0, 1),
        }
    }
}

impl FeePolicy {
    pub fn fee_of(&self, tx: &Transaction) -> u64 {
        self.base + self.per_input * tx.inputs.len() as u64 + self.per_output * tx.outputs.len() as u64
    }

    fn eligible(&self, stake: u64, total: u64) -> bool {
        stake > 0 && stake as u128 * self.theta.den as u128 >= self.theta.num as u128 * total as u128
    }

    /// `floor(α · stake · fee / total)`.
    pub fn share(&self, stake: u64, fee: u64, total: u64) -> u64 {
        if total == 0 || !self.eligible(stake, total) {
            return 0;
        }
        let num = self.alpha.num as u128 * stake as u128 * fee as u128;
        let den = self.alpha.den as u128 * total as u128;
        u64::try_from(num / den).unwrap_or(u64::MAX)
    }

    /// Whether an issuer with `stake` pays strictly more in fees than it can
    /// earn back from its own transaction.
    pub fn cost_incurred(&self, stake: u64, fee: u64, total: u64) -> bool {
        fee > self.share(stake, fee, total)
    }

    /// A stake below a third of `total` for which the issuer earns its fee
    /// back, if any exists for this fee.
    pub fn cost_witness(&self, fee: u64, total: u64) -> Option<u64> {
        (1..total)
            .take_while(|&m| (3 * m as u128) < total as u128)
            .find(|&m| !self.cost_incurred(m, fee, total))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeeRecord {
    pub tx: MessageId,
    pub fee: u64,
    pub distributed: u64,
    /// Every validator eligible by stake signed the transaction.
    pub full_participation: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FeeLedger {
    pub accrued: BTreeMap<PublicKey, u64>,
    pub charged: u64,
    pub distributed: u64,
    pub records: Vec<FeeRecord>,
}

impl FeeLedger {
    /// Charges `fee` for a confirmed transaction and pays out each eligible
    /// signer's share. `stakes` is the stake distribution the confirmation
    /// was measured against.
    pub fn accrue(
        &mut self,
        policy: &FeePolicy,
        tx: MessageId,
        fee: u64,
        stakes: &StakeMap,
        signers: &BTreeSet<PublicKey>,
        total: u64,
    ) -> &FeeRecord {
        let mut distributed = 0;
        let mut full = true;
        for (v, &m) in stakes {
            if !policy.eligible(m, total) {
                continue;
            }
            if !signers.contains(v) {
                full = false;
                continue;
            }
            let s = policy.share(m, fee, total);
            *self.accrued.entry(*v).or_insert(0) += s;
            distributed += s;
        }
        self.charged += fee;
        self.distributed += distributed;
        self.records.push(FeeRecord { tx, fee, distributed, full_participation: full });
        self.records.last().expect("just pushed")
    }

    /// Σ distributed ≤ α · Σ charged.
    pub fn conserves(&self, policy: &FeePolicy) -> bool {
        self.distributed as u128 * policy.alpha.den as u128 <= policy.alpha.num as u128 * self.charged as u128
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shares_follow_stake() {
        let p = FeePolicy { base: 10, ..FeePolicy::default() };
        let k = |b| PublicKey([b; 32]);
        let stakes: StakeMap = [(k(1), 4), (k(2), 4), (k(3), 2)].into_iter().collect();
        let mut l = FeeLedger::default();
        let r = l.accrue(&p, MessageId::default(), 10, &stakes, &[k(1), k(2), k(3)].into_iter().collect(), 10).clone();
        assert_eq!(r.distributed, 10);
        assert!(r.full_participation);
        assert_eq!(l.accrued[&k(1)], 4);
        let r = l.accrue(&p, MessageId::default(), 10, &stakes, &[k(1), k(2)].into_iter().collect(), 10).clone();
        assert_eq!(r.distributed, 8);
        assert!(!r.full_participation);
        assert!(l.conserves(&p));
    }

    #[test]
    fn theta_excludes_small_validators() {
        let p = FeePolicy { theta: Ratio::new(1, 4), ..FeePolicy::default() };
        assert_eq!(p.share(2, 100, 10), 0);
        assert_eq!(p.share(3, 100, 10), 30);
    }

    #[test]
    fn alpha_above_three_breaks_cost() {
        let over = FeePolicy { alpha: Ratio::new(31, 10), ..FeePolicy::default() };
        let m = over.cost_witness(1000, 300).expect("witness");
        assert!(3 * m < 300);
        assert!(!over.cost_incurred(m, 1000, 300));
    }

    proptest! {
        #[test]
        fn alpha_three_always_costs(total in 1u64..10_000, fee in 1u64..10_000, frac in 0.0f64..1.0) {
            let p = FeePolicy { alpha: Ratio::new(3, 1), ..FeePolicy::default() };
            let m = ((total as f64 / 3.0) * frac) as u64;
            prop_assume!(3 * m < total);
            prop_assert!(p.cost_incurred(m, fee, total));
        }
    }
}
