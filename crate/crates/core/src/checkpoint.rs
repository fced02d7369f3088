//! Checkpoints: summarising a confirmed prefix so newcomers can skip it.
//!
//! A checkpoint over a frontier `T` lists the confirmed, still unspent
//! outputs of `past(T)`. Honest validators sign it only if they recompute
//! exactly the same summary. It counts as confirmed once its signers held
//! more than two thirds of the stake at some point in `past(T)`: in the
//! genesis allocation, in the past of one of its acknowledgements, or in
//! `past(T)` itself. A newcomer then starts from the summary plus whatever
//! came after, instead of the full history.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitset::BitSet;
use crate::confirm::{exceeds_two_thirds, Checker, StakeMap, TxStatus};
use crate::crypto::{KeyScheme, SecretKey};
use crate::dag::{Body, DagError, DagStore, Ingest, MsgIdx, RejectReason};
use crate::message::{
    header, Checkpoint, DecodeError, Message, MessageId, Reader, SummaryEntry, Writer,
    ENCODING_VERSION,
};

const KIND_CHECKPOINT_CERTIFICATE: u8 = 0x06;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error("frontier is empty")]
    EmptyFrontier,
    #[error("confirmation of {0:?} inside the frontier's past is unresolved")]
    Unresolved(MessageId),
    #[error("{0:?} is not a checkpoint")]
    NotCheckpoint(MessageId),
    #[error("bad checkpoint certificate: {0}")]
    BadCertificate(&'static str),
    #[error("checkpoint is malformed: {0}")]
    Invalid(RejectReason),
    #[error("post-checkpoint message rejected: {0}")]
    Rejected(RejectReason),
}

/// Evidence that a checkpoint is confirmed. `basis` names the point whose
/// stake distribution was used: `None` for the root allocation, otherwise an
/// acknowledgement in `past(T)` or the checkpoint itself (meaning `past(T)`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointCertificate {
    pub checkpoint: MessageId,
    pub acks: BTreeSet<MessageId>,
    pub basis: Option<MessageId>,
    pub stakes: StakeMap,
    pub signed_sum: u64,
    pub total: u64,
}

impl CheckpointCertificate {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        header(&mut w, KIND_CHECKPOINT_CERTIFICATE);
        w.raw32(&self.checkpoint.0);
        w.id_set(self.acks.iter());
        match &self.basis {
            None => w.u8(0),
            Some(b) => {
                w.u8(1);
                w.raw32(&b.0);
            }
        }
        w.len(self.stakes.len());
        for (k, v) in &self.stakes {
            w.raw32(&k.0);
            w.u64(*v);
        }
        w.u64(self.signed_sum);
        w.u64(self.total);
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let v = r.u8()?;
        if v != ENCODING_VERSION {
            return Err(DecodeError::Version(v));
        }
        let k = r.u8()?;
        if k != KIND_CHECKPOINT_CERTIFICATE {
            return Err(DecodeError::Kind(k));
        }
        let checkpoint = r.id()?;
        let acks = r.id_set()?;
        let basis = match r.u8()? {
            0 => None,
            1 => Some(r.id()?),
            _ => return Err(DecodeError::NonCanonical("basis flag")),
        };
        let n = r.len(40)?;
        let mut stakes = StakeMap::new();
        for _ in 0..n {
            let key = r.key()?;
            if stakes.last_key_value().is_some_and(|(l, _)| *l >= key) {
                return Err(DecodeError::NonCanonical("stake keys not strictly sorted"));
            }
            stakes.insert(key, r.u64()?);
        }
        let signed_sum = r.u64()?;
        let total = r.u64()?;
        r.finish()?;
        Ok(CheckpointCertificate { checkpoint, acks, basis, stakes, signed_sum, total })
    }
}

fn frontier_scope(s: &DagStore, frontier: &BTreeSet<MessageId>) -> Result<BitSet, CheckpointError> {
    if frontier.is_empty() {
        return Err(CheckpointError::EmptyFrontier);
    }
    let idx = frontier.iter().map(|f| s.idx(f)).collect::<Result<Vec<_>, _>>()?;
    Ok(s.past_bits(&idx))
}

/// Confirmed unspent outputs of `past(frontier)`, sorted by owner key.
pub fn summarize(
    s: &DagStore,
    checker: &mut Checker,
    frontier: &BTreeSet<MessageId>,
) -> Result<Vec<SummaryEntry>, CheckpointError> {
    let scope = frontier_scope(s, frontier)?;
    let confirmed = checker.confirmed_in_scope(s, &scope);
    let (lo, hi) = checker.stake_in_scope(s, &scope);
    if lo != hi {
        let t = scope
            .iter()
            .find(|&t| s.entry(t).is_tx() && !confirmed.contains(t))
            .map(|t| s.entry(t).id)
            .unwrap_or_default();
        return Err(CheckpointError::Unresolved(t));
    }
    let mut out: Vec<SummaryEntry> = s
        .outputs()
        .iter()
        .filter(|o| confirmed.contains(o.producer))
        .filter(|o| !o.spenders.iter().any(|&w| confirmed.contains(w)))
        .map(|o| SummaryEntry { output_ref: o.output_ref, output: o.output, validator: s.key(o.validator) })
        .collect();
    out.sort_by_key(|a| (a.output.owner, a.output_ref));
    Ok(out)
}

pub fn make_checkpoint(
    s: &DagStore,
    checker: &mut Checker,
    frontier: BTreeSet<MessageId>,
    creator: &SecretKey,
) -> Result<Checkpoint, CheckpointError> {
    let summary = summarize(s, checker, &frontier)?;
    Ok(Checkpoint::new_signed(s.scheme().as_ref(), creator, frontier, summary))
}

/// What an honest validator checks before signing: the summary recomputes
/// exactly from its own store, and the frontier's past is settled.
pub fn checkpoint_is_accurate(s: &DagStore, checker: &mut Checker, cp: &Checkpoint) -> bool {
    matches!(summarize(s, checker, &cp.frontier), Ok(sum) if sum == cp.summary)
        && matches!(is_settled(s, checker, &cp.frontier), Ok(true))
}

/// Whether every transaction in `past(frontier)` is decided there: confirmed,
/// or never confirmable because it or an ancestor conflicts with a
/// transaction confirmed there.
///
/// A summary forgets pending spends. If a pending transaction is pruned,
/// later acks can still confirm it in the full history, or its mere presence
/// can block a rival; neither is visible from the summary, so bootstrapped
/// stores would disagree.
pub fn is_settled(
    s: &DagStore,
    checker: &mut Checker,
    frontier: &BTreeSet<MessageId>,
) -> Result<bool, CheckpointError> {
    let scope = frontier_scope(s, frontier)?;
    let confirmed = checker.confirmed_in_scope(s, &scope);
    let mut dead = BitSet::new();
    // admission order puts parents first
    for t in scope.iter().filter(|&t| s.entry(t).is_tx() && !confirmed.contains(t)) {
        let rival = s
            .tx_inputs(t)
            .iter()
            .any(|&slot| s.outputs()[slot].spenders.iter().any(|&w| w != t && confirmed.contains(w)));
        if rival || s.tx_parents(t).any(|p| dead.contains(p)) {
            dead.insert(t);
        } else {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Stake distributions the checkpoint's signers may be measured against, in
/// a fixed order: root allocation, acks in `past(T)` by admission, `past(T)`.
fn basis_points(s: &DagStore, cp_idx: MsgIdx, frontier: &BitSet) -> Vec<(Option<MessageId>, Option<BitSet>)> {
    let mut points = vec![(None, None)];
    for a in frontier.iter().filter(|&a| s.entry(a).is_ack()) {
        points.push((Some(s.entry(a).id), Some(s.entry(a).past.clone())));
    }
    points.push((Some(s.entry(cp_idx).id), Some(frontier.clone())));
    points
}

fn stakes_at(s: &DagStore, checker: &mut Checker, scope: &Option<BitSet>) -> StakeMap {
    match scope {
        None => {
            let mut m = StakeMap::new();
            for o in s.outputs().iter().filter(|o| o.producer == 0) {
                *m.entry(s.key(o.validator)).or_insert(0) += o.output.value;
            }
            m
        }
        Some(b) => checker.stake_in_scope(s, b).0,
    }
}

fn checkpoint_of(s: &DagStore, id: &MessageId) -> Result<(MsgIdx, Checkpoint), CheckpointError> {
    let i = s.idx(id)?;
    match &*s.entry(i).msg {
        Message::Checkpoint(c) if s.entry(i).body == Body::Checkpoint => Ok((i, c.clone())),
        _ => Err(CheckpointError::NotCheckpoint(*id)),
    }
}

/// Searches for a certificate confirming the checkpoint `id`.
pub fn confirm_checkpoint(
    s: &DagStore,
    checker: &mut Checker,
    id: &MessageId,
) -> Result<Option<CheckpointCertificate>, CheckpointError> {
    let (ci, cp) = checkpoint_of(s, id)?;
    let frontier = frontier_scope(s, &cp.frontier)?;
    let mut first: BTreeMap<crate::dag::KeyIdx, MsgIdx> = BTreeMap::new();
    for &a in &s.entry(ci).signed_by {
        if let Body::Ack { validator, .. } = s.entry(a).body {
            first.entry(validator).or_insert(a);
        }
    }
    if first.is_empty() {
        return Ok(None);
    }
    let m = s.total_stake();
    for (basis, scope) in basis_points(s, ci, &frontier) {
        let all = stakes_at(s, checker, &scope);
        let stakes: StakeMap = first
            .keys()
            .map(|&k| (s.key(k), all.get(&s.key(k)).copied().unwrap_or(0)))
            .collect();
        let sum: u64 = stakes.values().sum();
        if exceeds_two_thirds(sum, m) {
            return Ok(Some(CheckpointCertificate {
                checkpoint: *id,
                acks: first.values().map(|&a| s.entry(a).id).collect(),
                basis,
                stakes,
                signed_sum: sum,
                total: m,
            }));
        }
    }
    Ok(None)
}

/// Full verification against a store that still holds `past(T)`.
pub fn verify_checkpoint_certificate(
    s: &DagStore,
    checker: &mut Checker,
    cert: &CheckpointCertificate,
) -> Result<(), CheckpointError> {
    let (ci, cp) = checkpoint_of(s, &cert.checkpoint)?;
    let frontier = frontier_scope(s, &cp.frontier)?;
    let scope = match &cert.basis {
        None => None,
        Some(b) if *b == cert.checkpoint => Some(frontier.clone()),
        Some(b) => {
            let bi = s.idx(b)?;
            if !frontier.contains(bi) || !s.entry(bi).is_ack() {
                return Err(CheckpointError::BadCertificate("basis is not an ack in the frontier's past"));
            }
            Some(s.entry(bi).past.clone())
        }
    };
    let all = stakes_at(s, checker, &scope);
    let mut signers = BTreeSet::new();
    for a in &cert.acks {
        let ai = s.idx(a)?;
        match &s.entry(ai).body {
            Body::Ack { validator, signed, .. } if signed.contains(&ci) => {
                signers.insert(s.key(*validator));
            }
            _ => return Err(CheckpointError::BadCertificate("listed ack does not sign the checkpoint")),
        }
    }
    let stakes: StakeMap = signers.iter().map(|k| (*k, all.get(k).copied().unwrap_or(0))).collect();
    if stakes != cert.stakes {
        return Err(CheckpointError::BadCertificate("stakes do not match"));
    }
    check_numbers(cert, s.total_stake())
}

fn check_numbers(cert: &CheckpointCertificate, total: u64) -> Result<(), CheckpointError> {
    if cert.total != total {
        return Err(CheckpointError::BadCertificate("total stake differs"));
    }
    if cert.stakes.values().sum::<u64>() != cert.signed_sum {
        return Err(CheckpointError::BadCertificate("stake sum differs"));
    }
    if !exceeds_two_thirds(cert.signed_sum, cert.total) {
        return Err(CheckpointError::BadCertificate("signers do not exceed two thirds"));
    }
    Ok(())
}

/// Builds a store rooted at `cp` from the messages outside `past(T)`.
///
/// Only what the newcomer can check without the pruned history is checked
/// here: the checkpoint's own signature and commitment, and that the
/// certificate's acks are among `post`, sign the checkpoint, and carry
/// recorded stakes above the threshold. Anything `post` references that is
/// not itself in `post` is taken to be pruned.
pub fn bootstrap(
    cp: Checkpoint,
    cert: &CheckpointCertificate,
    post: &[Message],
    scheme: Arc<dyn KeyScheme>,
) -> Result<DagStore, CheckpointError> {
    let cp_msg = Message::Checkpoint(cp.clone());
    cp_msg
        .check_standalone(scheme.as_ref())
        .map_err(|e| CheckpointError::Invalid(e.into()))?;
    let cp_id = cp_msg.id();
    if cert.checkpoint != cp_id {
        return Err(CheckpointError::BadCertificate("certificate is for another checkpoint"));
    }
    check_numbers(cert, cp.total())?;
    let post_ids: HashSet<MessageId> = post.iter().map(Message::id).collect();
    let mut signers = BTreeSet::new();
    for a in &cert.acks {
        let ack = post.iter().find_map(|m| match m {
            Message::Ack(ack) if m.id() == *a => Some(ack),
            _ => None,
        });
        match ack {
            Some(ack) if ack.signed.contains(&cp_id) => {
                signers.insert(ack.validator);
            }
            _ => return Err(CheckpointError::BadCertificate("listed ack missing or not signing the checkpoint")),
        }
    }
    if signers != cert.stakes.keys().copied().collect() {
        return Err(CheckpointError::BadCertificate("stake table does not match the signers"));
    }
    let mut pruned: HashSet<MessageId> = cp.frontier.iter().copied().collect();
    pruned.extend(cp.summary.iter().map(|e| e.output_ref.tx));
    for m in post {
        pruned.extend(m.references());
    }
    pruned.retain(|id| !post_ids.contains(id) && *id != cp_id);
    let mut store = DagStore::from_checkpoint(cp, pruned, scheme).map_err(CheckpointError::Invalid)?;
    for m in post {
        if m.id() == cp_id {
            continue;
        }
        if let Ingest::Rejected(r) = store.ingest(m.clone()) {
            log::debug!("bootstrap: dropping {:?}: {r}", m.id());
        }
    }
    Ok(store)
}

/// Differences between a bootstrapped store and the full store it was cut
/// from, as (transaction, status in full, status in bootstrapped).
pub fn pruning_mismatches(
    full: &DagStore,
    full_checker: &mut Checker,
    pruned: &DagStore,
    pruned_checker: &mut Checker,
) -> Result<Vec<(MessageId, TxStatus, TxStatus)>, CheckpointError> {
    let Message::Checkpoint(cp) = &*pruned.entry(0).msg else {
        return Err(CheckpointError::NotCheckpoint(pruned.root_id()));
    };
    let before = frontier_scope(full, &cp.frontier)?;
    let mut out = Vec::new();
    for t in full.transactions() {
        if before.contains(t) {
            continue;
        }
        let id = full.entry(t).id;
        let f = full_checker.status(full, &id).map_err(|_| CheckpointError::NotCheckpoint(id))?;
        let p = if pruned.contains(&id) {
            pruned_checker.status(pruned, &id).map_err(|_| CheckpointError::NotCheckpoint(id))?
        } else {
            TxStatus::Unconfirmed
        };
        if f != p {
            out.push((id, f, p));
        }
    }
    Ok(out)
}
