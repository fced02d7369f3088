//! Cheap, recursion-free stake bounds that can be split across workers.
//!
//! Outputs are partitioned by the leading bits of their owner key; each
//! worker sums its own partition and the partial sums are merged in
//! partition order, so the result is identical for any partition count.

use rayon::prelude::*;
use serde::Serialize;

use super::{exceeds_two_thirds, ConfirmError};
use crate::bitset::BitSet;
use crate::dag::{Body, DagStore};
use crate::message::MessageId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVerdict {
    /// A certificate certainly exists (the full ack set of the store).
    Certifiable,
    /// No certificate can exist in this store.
    NotCertifiable,
    Abstain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StakeBounds {
    pub tx: MessageId,
    /// Stake the signers certainly hold when measured over the whole store.
    pub lower: u64,
    /// Stake the signers can hold under any choice of acks.
    pub upper: u64,
    pub total: u64,
    pub verdict: BoundVerdict,
}

pub fn partition_of(owner_prefix: [u8; 2], partitions: usize) -> usize {
    let v = u16::from_be_bytes(owner_prefix) as usize;
    (v * partitions) >> 16
}

pub fn stake_bounds(
    s: &DagStore,
    tx: &MessageId,
    partitions: usize,
) -> Result<StakeBounds, ConfirmError> {
    let partitions = partitions.max(1);
    let t = s.idx(tx)?;
    if !s.entry(t).is_tx() {
        return Err(ConfirmError::NotTransaction(*tx));
    }
    let mut signers = vec![false; s.keys().len()];
    for &a in &s.entry(t).signed_by {
        if let Body::Ack { validator, .. } = s.entry(a).body {
            signers[validator] = true;
        }
    }
    let everything = BitSet::full(s.len());
    let dep = s.dependents_within(t, &everything);
    let rival = s.tx_inputs(t).iter().any(|&slot| {
        s.outputs()[slot].spenders.iter().any(|&w| w != t)
    });

    // per partition: (certainly held by signers, possibly held by signers,
    // possibly held by everyone else)
    let worker = |part: usize| -> (u64, u64, u64) {
        let (mut certain, mut possible, mut others) = (0u64, 0u64, 0u64);
        for o in s.outputs() {
            if partition_of([o.output.owner.0[0], o.output.owner.0[1]], partitions) != part {
                continue;
            }
            if dep.contains(o.producer) {
                continue;
            }
            if signers[o.validator] {
                possible += o.output.value;
                let unspent = o.spenders.iter().all(|w| dep.contains(*w));
                if o.producer == 0 && unspent {
                    certain += o.output.value;
                }
            } else {
                others += o.output.value;
            }
        }
        (certain, possible, others)
    };
    let partials: Vec<(u64, u64, u64)> = if partitions == 1 {
        vec![worker(0)]
    } else {
        (0..partitions).into_par_iter().map(worker).collect()
    };

    let m = s.total_stake();
    let (mut certain, mut possible, mut others) = (0u64, 0u64, 0u64);
    for (c, p, o) in &partials {
        certain += c;
        possible += p;
        others += o;
    }
    let lower = certain.max(m.saturating_sub(others));
    let any_signer = signers.iter().any(|&b| b);
    let verdict = if !any_signer || s.is_void(t) || !exceeds_two_thirds(possible, m) {
        BoundVerdict::NotCertifiable
    } else if !rival && exceeds_two_thirds(lower, m) {
        BoundVerdict::Certifiable
    } else {
        BoundVerdict::Abstain
    };
    Ok(StakeBounds {
        tx: *tx,
        lower,
        upper: possible,
        total: m,
        verdict,
    })
}
