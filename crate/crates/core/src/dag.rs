//! Content-addressed message store.
//!
//! Messages are admitted only once everything they reference is present;
//! anything arriving early is parked in a bounded buffer and drained as soon
//! as its last missing reference shows up. Admitted messages get dense indices
//! in admission order, and every entry carries its reflexive-transitive past
//! as a bitset so scope queries stay cheap.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::bitset::BitSet;
use crate::crypto::{KeyScheme, PublicKey, TestScheme};
use crate::message::{
    Checkpoint, Genesis, Message, MessageId, Output, OutputRef, VerifyError,
};

pub type MsgIdx = usize;
pub type KeyIdx = usize;
pub type SlotIdx = usize;

pub const DEFAULT_BUFFER_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RejectReason {
    #[error(transparent)]
    Invalid(#[from] VerifyError),
    #[error("a different message with the same id is already stored")]
    IdCollision,
    #[error("genesis does not match this store's root")]
    ForeignGenesis,
    #[error("output {0:?} does not exist")]
    UnknownOutput(OutputRef),
    #[error("{0:?} is not a transaction and has no outputs")]
    NotSpendable(MessageId),
    #[error("acknowledgement signs {0:?}, which is not a transaction or checkpoint")]
    SignsNonTransaction(MessageId),
    #[error("previous-ack pointer {0:?} is not an acknowledgement")]
    PrevNotAck(MessageId),
    #[error("owner key {0:?} already owns another output")]
    KeyReuse(PublicKey),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("unknown message {0:?}")]
    UnknownId(MessageId),
    #[error("{0:?} is not a transaction")]
    NotTransaction(MessageId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ingest {
    /// The message (and possibly buffered descendants) entered the store.
    /// `dropped` lists buffered descendants that turned out to be invalid.
    Admitted {
        drained: Vec<MessageId>,
        dropped: Vec<(MessageId, RejectReason)>,
    },
    Buffered { missing: BTreeSet<MessageId> },
    Rejected(RejectReason),
}

impl Ingest {
    pub fn is_admitted(&self) -> bool {
        matches!(self, Ingest::Admitted { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Root,
    Tx {
        inputs: Vec<SlotIdx>,
        outputs: Vec<SlotIdx>,
        validator: KeyIdx,
    },
    Ack {
        validator: KeyIdx,
        prev: Option<MsgIdx>,
        signed: Vec<MsgIdx>,
    },
    Checkpoint,
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub id: MessageId,
    pub msg: Arc<Message>,
    bytes: Arc<[u8]>,
    pub refs: Vec<MsgIdx>,
    /// Reflexive-transitive past, including the root.
    pub past: BitSet,
    /// Transactions this one depends on through spends, itself and the root
    /// included. Empty for non-transactions.
    pub spend_ancestors: BitSet,
    pub body: Body,
    /// Acknowledgements that sign this message.
    pub signed_by: Vec<MsgIdx>,
}

impl Entry {
    pub fn is_tx(&self) -> bool {
        matches!(self.body, Body::Tx { .. })
    }
    pub fn is_ack(&self) -> bool {
        matches!(self.body, Body::Ack { .. })
    }
}

#[derive(Debug, Clone)]
pub struct OutputRecord {
    pub output_ref: OutputRef,
    pub output: Output,
    pub validator: KeyIdx,
    pub producer: MsgIdx,
    pub spenders: Vec<MsgIdx>,
}

#[derive(Debug, Clone)]
struct Pending {
    msg: Message,
    missing: BTreeSet<MessageId>,
}

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

fn next_uid() -> u64 {
    NEXT_UID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug)]
pub struct DagStore {
    uid: u64,
    scheme: Arc<dyn KeyScheme>,
    entries: Vec<Entry>,
    index: HashMap<MessageId, MsgIdx>,
    /// Ids folded into a checkpoint root; references to them resolve to it.
    pruned: HashSet<MessageId>,
    /// Transactions spending outputs the checkpoint dropped as spent; they
    /// lost to a rival before the checkpoint and can never be confirmed.
    void: BitSet,
    outputs: Vec<OutputRecord>,
    output_index: HashMap<OutputRef, SlotIdx>,
    owners: HashSet<PublicKey>,
    keys: Vec<PublicKey>,
    key_index: HashMap<PublicKey, KeyIdx>,
    outputs_by_validator: Vec<Vec<SlotIdx>>,
    acks_by_validator: Vec<Vec<MsgIdx>>,
    /// (validator, prev) pairs already used; a repeat is a fork.
    chain_links: HashSet<(KeyIdx, Option<MsgIdx>)>,
    byzantine: BTreeSet<PublicKey>,
    pending: HashMap<MessageId, Pending>,
    pending_order: VecDeque<MessageId>,
    waiting: HashMap<MessageId, Vec<MessageId>>,
    buffer_cap: usize,
    total: u64,
}

impl Clone for DagStore {
    fn clone(&self) -> Self {
        DagStore {
            uid: next_uid(),
            scheme: self.scheme.clone(),
            entries: self.entries.clone(),
            index: self.index.clone(),
            pruned: self.pruned.clone(),
            void: self.void.clone(),
            outputs: self.outputs.clone(),
            output_index: self.output_index.clone(),
            owners: self.owners.clone(),
            keys: self.keys.clone(),
            key_index: self.key_index.clone(),
            outputs_by_validator: self.outputs_by_validator.clone(),
            acks_by_validator: self.acks_by_validator.clone(),
            chain_links: self.chain_links.clone(),
            byzantine: self.byzantine.clone(),
            pending: self.pending.clone(),
            pending_order: self.pending_order.clone(),
            waiting: self.waiting.clone(),
            buffer_cap: self.buffer_cap,
            total: self.total,
        }
    }
}

impl DagStore {
    pub fn new(genesis: Genesis) -> Result<Self, RejectReason> {
        Self::with_scheme(genesis, Arc::new(TestScheme))
    }

    pub fn with_scheme(genesis: Genesis, scheme: Arc<dyn KeyScheme>) -> Result<Self, RejectReason> {
        let msg = Message::Genesis(genesis.clone());
        msg.check_standalone(scheme.as_ref())?;
        let id = msg.id();
        let roots = genesis
            .allocations
            .iter()
            .enumerate()
            .map(|(i, a)| (OutputRef { tx: id, index: i as u32 }, a.output, a.validator))
            .collect();
        Self::with_root(msg, roots, HashSet::new(), scheme)
    }

    /// A store rooted at a checkpoint. `pruned` are ids folded into it;
    /// references to them count as references to the root.
    pub fn from_checkpoint(
        cp: Checkpoint,
        pruned: HashSet<MessageId>,
        scheme: Arc<dyn KeyScheme>,
    ) -> Result<Self, RejectReason> {
        let roots = cp
            .summary
            .iter()
            .map(|e| (e.output_ref, e.output, e.validator))
            .collect();
        let msg = Message::Checkpoint(cp);
        msg.check_standalone(scheme.as_ref())?;
        Self::with_root(msg, roots, pruned, scheme)
    }

    fn with_root(
        msg: Message,
        roots: Vec<(OutputRef, Output, PublicKey)>,
        pruned: HashSet<MessageId>,
        scheme: Arc<dyn KeyScheme>,
    ) -> Result<Self, RejectReason> {
        let bytes: Arc<[u8]> = msg.encode().into();
        let id = MessageId::of_bytes(&bytes);
        let mut s = DagStore {
            uid: next_uid(),
            scheme,
            entries: Vec::new(),
            index: HashMap::new(),
            pruned,
            void: BitSet::new(),
            outputs: Vec::new(),
            output_index: HashMap::new(),
            owners: HashSet::new(),
            keys: Vec::new(),
            key_index: HashMap::new(),
            outputs_by_validator: Vec::new(),
            acks_by_validator: Vec::new(),
            chain_links: HashSet::new(),
            byzantine: BTreeSet::new(),
            pending: HashMap::new(),
            pending_order: VecDeque::new(),
            waiting: HashMap::new(),
            buffer_cap: DEFAULT_BUFFER_CAP,
            total: 0,
        };
        let mut slots = Vec::new();
        for (r, o, v) in roots {
            if !s.owners.insert(o.owner) {
                return Err(RejectReason::KeyReuse(o.owner));
            }
            let v = s.intern(v);
            slots.push(s.push_output(r, o, v, 0));
            s.total = s
                .total
                .checked_add(o.value)
                .ok_or(VerifyError::Overflow)?;
        }
        s.entries.push(Entry {
            id,
            msg: Arc::new(msg),
            bytes,
            refs: Vec::new(),
            past: BitSet::singleton(0),
            spend_ancestors: BitSet::singleton(0),
            body: Body::Root,
            signed_by: Vec::new(),
        });
        s.index.insert(id, 0);
        Ok(s)
    }

    pub fn set_buffer_cap(&mut self, cap: usize) {
        self.buffer_cap = cap.max(1);
    }

    /// Identity of this store instance; clones get a fresh one.
    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn scheme(&self) -> &Arc<dyn KeyScheme> {
        &self.scheme
    }

    // -----------------------------------------------------------------
    // ingest

    pub fn ingest_bytes(&mut self, bytes: &[u8]) -> Result<Ingest, crate::message::DecodeError> {
        Ok(self.ingest(Message::decode(bytes)?))
    }

    pub fn ingest(&mut self, msg: Message) -> Ingest {
        let bytes = msg.encode();
        let id = MessageId::of_bytes(&bytes);
        if let Some(&i) = self.index.get(&id) {
            return if *self.entries[i].bytes == bytes[..] {
                Ingest::Admitted { drained: vec![], dropped: vec![] }
            } else {
                Ingest::Rejected(RejectReason::IdCollision)
            };
        }
        if self.pruned.contains(&id) {
            return Ingest::Admitted { drained: vec![], dropped: vec![] };
        }
        if matches!(msg, Message::Genesis(_)) {
            return Ingest::Rejected(RejectReason::ForeignGenesis);
        }
        if let Some(p) = self.pending.get(&id) {
            return Ingest::Buffered { missing: p.missing.clone() };
        }
        if let Err(e) = msg.check_standalone(self.scheme.as_ref()) {
            return Ingest::Rejected(e.into());
        }
        let missing: BTreeSet<MessageId> = msg
            .references()
            .into_iter()
            .filter(|r| !self.index.contains_key(r) && !self.pruned.contains(r))
            .collect();
        if !missing.is_empty() {
            for m in &missing {
                self.waiting.entry(*m).or_default().push(id);
            }
            self.pending.insert(id, Pending { msg, missing: missing.clone() });
            self.pending_order.push_back(id);
            self.enforce_cap();
            return Ingest::Buffered { missing };
        }
        match self.admit(id, msg, bytes) {
            Ok(()) => {
                let (drained, dropped) = self.drain(id);
                Ingest::Admitted { drained, dropped }
            }
            Err(r) => Ingest::Rejected(r),
        }
    }

    fn enforce_cap(&mut self) {
        while self.pending.len() > self.buffer_cap {
            let Some(old) = self.pending_order.pop_front() else { break };
            if self.pending.remove(&old).is_some() {
                log::warn!("pending buffer full, dropping oldest message {old:?}");
            }
        }
    }

    fn drain(&mut self, first: MessageId) -> (Vec<MessageId>, Vec<(MessageId, RejectReason)>) {
        let mut drained = Vec::new();
        let mut dropped = Vec::new();
        let mut queue = VecDeque::from([first]);
        while let Some(x) = queue.pop_front() {
            for w in self.waiting.remove(&x).unwrap_or_default() {
                let ready = match self.pending.get_mut(&w) {
                    Some(p) => {
                        p.missing.remove(&x);
                        p.missing.is_empty()
                    }
                    None => false,
                };
                if !ready {
                    continue;
                }
                let p = self.pending.remove(&w).expect("checked above");
                let bytes = p.msg.encode();
                match self.admit(w, p.msg, bytes) {
                    Ok(()) => {
                        drained.push(w);
                        queue.push_back(w);
                    }
                    Err(r) => {
                        log::debug!("dropping buffered {w:?}: {r}");
                        dropped.push((w, r));
                    }
                }
            }
        }
        self.pending_order.retain(|id| self.pending.contains_key(id));
        (drained, dropped)
    }

    fn intern(&mut self, k: PublicKey) -> KeyIdx {
        if let Some(&i) = self.key_index.get(&k) {
            return i;
        }
        let i = self.keys.len();
        self.keys.push(k);
        self.key_index.insert(k, i);
        self.outputs_by_validator.push(Vec::new());
        self.acks_by_validator.push(Vec::new());
        i
    }

    fn push_output(&mut self, r: OutputRef, o: Output, v: KeyIdx, producer: MsgIdx) -> SlotIdx {
        let slot = self.outputs.len();
        self.outputs.push(OutputRecord {
            output_ref: r,
            output: o,
            validator: v,
            producer,
            spenders: Vec::new(),
        });
        self.output_index.insert(r, slot);
        self.outputs_by_validator[v].push(slot);
        slot
    }

    /// Resolves a referenced id to an index; pruned ids resolve to the root.
    fn resolve(&self, id: &MessageId) -> MsgIdx {
        if self.pruned.contains(id) {
            0
        } else {
            self.index[id]
        }
    }

    fn admit(&mut self, id: MessageId, msg: Message, bytes: Vec<u8>) -> Result<(), RejectReason> {
        let idx = self.entries.len();
        let mut past = BitSet::singleton(idx);
        let mut spend_ancestors = BitSet::new();
        let body;
        let refs: Vec<MsgIdx>;
        match &msg {
            Message::Genesis(_) => return Err(RejectReason::ForeignGenesis),
            Message::Transaction(t) => {
                let mut slots = Vec::with_capacity(t.inputs.len());
                let mut void = false;
                for r in &t.inputs {
                    match self.output_index.get(r) {
                        Some(&s) => slots.push(s),
                        None if self.pruned.contains(&r.tx) => void = true,
                        None => {
                            let e = &self.entries[self.index[&r.tx]];
                            return Err(match e.body {
                                Body::Tx { .. } | Body::Root => RejectReason::UnknownOutput(*r),
                                _ => RejectReason::NotSpendable(r.tx),
                            });
                        }
                    }
                }
                let known = |r: &OutputRef| self.output_index.get(r).map(|&s| self.outputs[s].output);
                if void {
                    t.verify_known(self.scheme.as_ref(), known)?;
                } else {
                    t.verify_against(self.scheme.as_ref(), known)?;
                }
                let mut fresh = HashSet::new();
                for o in &t.outputs {
                    if self.owners.contains(&o.owner) || !fresh.insert(o.owner) {
                        return Err(RejectReason::KeyReuse(o.owner));
                    }
                }
                let mut producers: BTreeSet<MsgIdx> =
                    slots.iter().map(|&s| self.outputs[s].producer).collect();
                if void {
                    producers.insert(0);
                    self.void.insert(idx);
                }
                refs = producers.into_iter().collect();
                spend_ancestors.insert(idx);
                for &p in &refs {
                    spend_ancestors.union_with(&self.entries[p].spend_ancestors);
                }
                let validator = self.intern(t.validator);
                let mut outs = Vec::with_capacity(t.outputs.len());
                for (i, o) in t.outputs.iter().enumerate() {
                    self.owners.insert(o.owner);
                    outs.push(self.push_output(
                        OutputRef { tx: id, index: i as u32 },
                        *o,
                        validator,
                        idx,
                    ));
                }
                for &s in &slots {
                    self.outputs[s].spenders.push(idx);
                }
                body = Body::Tx { inputs: slots, outputs: outs, validator };
            }
            Message::Ack(a) => {
                let prev = match &a.prev {
                    None => None,
                    Some(p) if self.pruned.contains(p) => Some(0),
                    Some(p) => {
                        let pi = self.index[p];
                        if !self.entries[pi].is_ack() {
                            return Err(RejectReason::PrevNotAck(*p));
                        }
                        Some(pi)
                    }
                };
                let mut signed = Vec::new();
                for s in &a.signed {
                    let si = self.resolve(s);
                    match self.entries[si].body {
                        Body::Tx { .. } | Body::Checkpoint => signed.push(si),
                        Body::Root if si == 0 && matches!(*self.entries[0].msg, Message::Checkpoint(_)) => {}
                        Body::Root if self.pruned.contains(s) => {}
                        _ => return Err(RejectReason::SignsNonTransaction(*s)),
                    }
                }
                let validator = self.intern(a.validator);
                let chain_prev = prev.filter(|&p| p != 0);
                if let Some(p) = chain_prev {
                    if let Body::Ack { validator: pv, .. } = self.entries[p].body {
                        if pv != validator {
                            log::debug!("ack {id:?} chains onto another validator's ack");
                            self.byzantine.insert(a.validator);
                        }
                    }
                }
                // The first link out of a pruned prefix is ambiguous, so only
                // in-store links are checked for forks.
                if prev != Some(0) && !self.chain_links.insert((validator, chain_prev)) {
                    log::debug!("validator {:?} forked its ack chain", a.validator);
                    self.byzantine.insert(a.validator);
                }
                let mut r: BTreeSet<MsgIdx> = signed.iter().copied().collect();
                r.extend(prev);
                if a.signed.iter().any(|s| self.resolve(s) == 0) {
                    r.insert(0);
                }
                refs = r.into_iter().collect();
                for &s in &signed {
                    self.entries[s].signed_by.push(idx);
                }
                self.acks_by_validator[validator].push(idx);
                body = Body::Ack { validator, prev: chain_prev, signed };
            }
            Message::Checkpoint(c) => {
                refs = c
                    .frontier
                    .iter()
                    .map(|f| self.resolve(f))
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                body = Body::Checkpoint;
            }
        }
        for &r in &refs {
            past.union_with(&self.entries[r].past);
        }
        self.entries.push(Entry {
            id,
            msg: Arc::new(msg),
            bytes: bytes.into(),
            refs,
            past,
            spend_ancestors,
            body,
            signed_by: Vec::new(),
        });
        self.index.insert(id, idx);
        Ok(())
    }

    // -----------------------------------------------------------------
    // queries

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn root_id(&self) -> MessageId {
        self.entries[0].id
    }

    /// Total stake M: the value held by the root's outputs.
    pub fn total_stake(&self) -> u64 {
        self.total
    }

    pub fn contains(&self, id: &MessageId) -> bool {
        self.index.contains_key(id)
    }

    /// Whether `i` spends an output the checkpoint root no longer holds.
    pub fn is_void(&self, i: MsgIdx) -> bool {
        self.void.contains(i)
    }

    pub fn is_pruned(&self, id: &MessageId) -> bool {
        self.pruned.contains(id)
    }

    pub fn index_of(&self, id: &MessageId) -> Option<MsgIdx> {
        self.index.get(id).copied()
    }

    pub fn idx(&self, id: &MessageId) -> Result<MsgIdx, DagError> {
        self.index_of(id).ok_or(DagError::UnknownId(*id))
    }

    pub fn entry(&self, i: MsgIdx) -> &Entry {
        &self.entries[i]
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn get(&self, id: &MessageId) -> Option<&Message> {
        self.index_of(id).map(|i| &*self.entries[i].msg)
    }

    pub fn encoded(&self, i: MsgIdx) -> &[u8] {
        &self.entries[i].bytes
    }

    pub fn outputs(&self) -> &[OutputRecord] {
        &self.outputs
    }

    pub fn output(&self, r: &OutputRef) -> Option<&OutputRecord> {
        self.output_index.get(r).map(|&s| &self.outputs[s])
    }

    pub fn key(&self, k: KeyIdx) -> PublicKey {
        self.keys[k]
    }

    pub fn keys(&self) -> &[PublicKey] {
        &self.keys
    }

    pub fn key_idx(&self, k: &PublicKey) -> Option<KeyIdx> {
        self.key_index.get(k).copied()
    }

    pub fn outputs_delegated_to(&self, k: KeyIdx) -> &[SlotIdx] {
        &self.outputs_by_validator[k]
    }

    pub fn acks_of(&self, k: KeyIdx) -> &[MsgIdx] {
        &self.acks_by_validator[k]
    }

    pub fn byzantine(&self) -> &BTreeSet<PublicKey> {
        &self.byzantine
    }

    pub fn pending_ids(&self) -> BTreeSet<MessageId> {
        self.pending.keys().copied().collect()
    }

    pub fn transactions(&self) -> impl Iterator<Item = MsgIdx> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_tx())
            .map(|(i, _)| i)
    }

    pub fn acks(&self) -> impl Iterator<Item = MsgIdx> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_ack())
            .map(|(i, _)| i)
    }

    pub fn tx_inputs(&self, i: MsgIdx) -> &[SlotIdx] {
        match &self.entries[i].body {
            Body::Tx { inputs, .. } => inputs,
            _ => &[],
        }
    }

    pub fn tx_outputs(&self, i: MsgIdx) -> &[SlotIdx] {
        match &self.entries[i].body {
            Body::Tx { outputs, .. } => outputs,
            _ => &[],
        }
    }

    /// Transactions whose outputs `i` spends (the root included).
    pub fn tx_parents(&self, i: MsgIdx) -> impl Iterator<Item = MsgIdx> + '_ {
        match &self.entries[i].body {
            Body::Tx { .. } => self.entries[i].refs.as_slice(),
            _ => &[],
        }
        .iter()
        .copied()
    }

    pub fn past_bits(&self, ids: &[MsgIdx]) -> BitSet {
        let mut b = BitSet::new();
        for &i in ids {
            b.union_with(&self.entries[i].past);
        }
        b
    }

    pub fn bits_to_ids(&self, b: &BitSet) -> BTreeSet<MessageId> {
        b.iter().map(|i| self.entries[i].id).collect()
    }

    pub fn ids_to_bits(&self, ids: &BTreeSet<MessageId>) -> Result<BitSet, DagError> {
        ids.iter().map(|id| self.idx(id)).collect()
    }

    /// Reflexive-transitive past of `ids`, root included.
    pub fn past(&self, ids: &[MessageId]) -> Result<BTreeSet<MessageId>, DagError> {
        let idxs = ids.iter().map(|i| self.idx(i)).collect::<Result<Vec<_>, _>>()?;
        Ok(self.bits_to_ids(&self.past_bits(&idxs)))
    }

    fn tx_idx(&self, id: &MessageId) -> Result<MsgIdx, DagError> {
        let i = self.idx(id)?;
        match self.entries[i].body {
            Body::Tx { .. } | Body::Root => Ok(i),
            _ => Err(DagError::NotTransaction(*id)),
        }
    }

    /// Whether `a` spends, directly or transitively, an output of `b`.
    /// Reflexive; every transaction depends on the root.
    pub fn depends(&self, a: &MessageId, b: &MessageId) -> Result<bool, DagError> {
        let (a, b) = (self.tx_idx(a)?, self.tx_idx(b)?);
        Ok(self.entries[a].spend_ancestors.contains(b))
    }

    pub fn depends_idx(&self, a: MsgIdx, b: MsgIdx) -> bool {
        self.entries[a].spend_ancestors.contains(b)
    }

    /// Two transactions conflict when something each depends on spends a
    /// common input. A transaction never conflicts with itself.
    pub fn conflicts(&self, a: &MessageId, b: &MessageId) -> Result<bool, DagError> {
        let (a, b) = (self.tx_idx(a)?, self.tx_idx(b)?);
        Ok(self.conflicts_idx(a, b))
    }

    pub fn conflicts_idx(&self, a: MsgIdx, b: MsgIdx) -> bool {
        if a == b {
            return false;
        }
        let anc_b = &self.entries[b].spend_ancestors;
        self.entries[a].spend_ancestors.iter().any(|u| {
            self.tx_inputs(u).iter().any(|&s| {
                self.outputs[s]
                    .spenders
                    .iter()
                    .any(|&w| w != u && anc_b.contains(w))
            })
        })
    }

    /// Whether any transaction in `scope` spends `output`.
    pub fn spent_in(&self, output: &OutputRef, scope: &BTreeSet<MessageId>) -> bool {
        self.output(output).is_some_and(|o| {
            o.spenders
                .iter()
                .any(|&s| scope.contains(&self.entries[s].id))
        })
    }

    /// `t` and everything in `scope` that spends from it, transitively.
    pub fn dependents_within(&self, t: MsgIdx, scope: &BitSet) -> BitSet {
        let mut out = BitSet::singleton(t);
        let mut stack = vec![t];
        while let Some(u) = stack.pop() {
            for &s in self.tx_outputs(u) {
                for &w in &self.outputs[s].spenders {
                    if scope.contains(w) && !out.contains(w) {
                        out.insert(w);
                        stack.push(w);
                    }
                }
            }
        }
        out
    }

    /// Canonical description of the store's contents, independent of the
    /// order messages arrived in.
    pub fn fingerprint(&self) -> MessageId {
        let mut admitted: Vec<_> = self.index.keys().copied().collect();
        admitted.sort();
        let pending = self.pending_ids();
        let mut buf = Vec::new();
        for id in &admitted {
            buf.extend_from_slice(&id.0);
        }
        buf.push(0xff);
        for id in &pending {
            buf.extend_from_slice(&id.0);
        }
        buf.push(0xff);
        for k in &self.byzantine {
            buf.extend_from_slice(&k.0);
        }
        MessageId::of_bytes(&buf)
    }

    /// Every admitted message except the root, in admission order.
    pub fn messages(&self) -> impl Iterator<Item = &Message> + '_ {
        self.entries[1..].iter().map(|e| &*e.msg)
    }
}
