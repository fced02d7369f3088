//! Ledger messages, their canonical byte encoding, and self-contained checks.
//!
//! Every message is identified by the SHA-256 of its canonical encoding. The
//! encoding is versioned, starts with a one-byte kind tag, length-prefixes
//! every variable-size field, and admits exactly one byte string per value
//! (sets are written sorted and decoding rejects anything else), so
//! `decode(encode(m)) == m` and `encode(decode(b)) == b` whenever decoding
//! succeeds.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::{KeyScheme, PublicKey, SecretKey, Signature};

pub const ENCODING_VERSION: u8 = 1;

const KIND_GENESIS: u8 = 0x01;
const KIND_TRANSACTION: u8 = 0x02;
const KIND_ACK: u8 = 0x03;
const KIND_CHECKPOINT: u8 = 0x04;
pub(crate) const KIND_CERTIFICATE: u8 = 0x05;
/// Added to a kind tag when encoding the payload a signature covers.
const UNSIGNED_FLAG: u8 = 0x80;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MessageId(pub [u8; 32]);

impl MessageId {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        MessageId(Sha256::digest(bytes).into())
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..8])
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let v = hex::decode(s).ok()?;
        Some(MessageId(v.try_into().ok()?))
    }
}

impl fmt::Debug for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.short())
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for MessageId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for MessageId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        MessageId::from_hex(&s).ok_or_else(|| serde::de::Error::custom("bad message id"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Output {
    pub value: u64,
    pub owner: PublicKey,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OutputRef {
    pub tx: MessageId,
    pub index: u32,
}

/// A genesis output together with the validator its stake is delegated to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Allocation {
    pub output: Output,
    pub validator: PublicKey,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Genesis {
    pub allocations: Vec<Allocation>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub inputs: Vec<OutputRef>,
    pub outputs: Vec<Output>,
    /// Validator the stake of every output is delegated to.
    pub validator: PublicKey,
    /// One signature per input, by that input's owner, over the unsigned payload.
    pub signatures: Vec<Signature>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ack {
    pub validator: PublicKey,
    pub prev: Option<MessageId>,
    /// Transactions (or checkpoints) this acknowledgement signs. These are
    /// also its references, together with `prev`.
    pub signed: BTreeSet<MessageId>,
    pub signature: Signature,
}

/// One unspent output carried over by a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub output_ref: OutputRef,
    pub output: Output,
    pub validator: PublicKey,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Checkpoint {
    pub frontier: BTreeSet<MessageId>,
    /// Confirmed unspent outputs of the frontier's past, sorted by owner key.
    pub summary: Vec<SummaryEntry>,
    /// Stake per validator implied by `summary`, sorted by key.
    pub stakes: Vec<(PublicKey, u64)>,
    pub commitment: MessageId,
    pub creator: PublicKey,
    pub signature: Signature,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Message {
    Genesis(Genesis),
    Transaction(Transaction),
    Ack(Ack),
    Checkpoint(Checkpoint),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("input truncated")]
    Truncated,
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("unsupported encoding version {0}")]
    Version(u8),
    #[error("unknown message kind tag {0:#04x}")]
    Kind(u8),
    #[error("non-canonical encoding: {0}")]
    NonCanonical(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("transaction has no inputs")]
    NoInputs,
    #[error("transaction has no outputs")]
    NoOutputs,
    #[error("input {0:?} listed twice")]
    DuplicateInput(OutputRef),
    #[error("output {0} has zero value")]
    ZeroValue(usize),
    #[error("expected {expected} signatures, found {found}")]
    MissingSignature { expected: usize, found: usize },
    #[error("inputs carry {inputs} but outputs carry {outputs}")]
    ValueImbalance { inputs: u128, outputs: u128 },
    #[error("signature {0} does not verify")]
    BadSignature(usize),
    #[error("input {0:?} cannot be resolved")]
    UnknownInput(OutputRef),
    #[error("acknowledgement signs nothing")]
    EmptyAck,
    #[error("genesis allocates nothing")]
    EmptyGenesis,
    #[error("total value overflows")]
    Overflow,
    #[error("checkpoint commitment does not match its summary")]
    BadCommitment,
    #[error("checkpoint stake table does not match its summary")]
    BadStakeTable,
    #[error("checkpoint summary is not sorted by owner key")]
    UnsortedSummary,
}

// ---------------------------------------------------------------------------
// encoding primitives

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    pub fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("collection exceeds u32::MAX"));
    }
    pub fn raw32(&mut self, v: &[u8; 32]) {
        self.buf.extend_from_slice(v);
    }
    pub fn bytes(&mut self, v: &[u8]) {
        self.len(v.len());
        self.buf.extend_from_slice(v);
    }
    pub fn output_ref(&mut self, r: &OutputRef) {
        self.raw32(&r.tx.0);
        self.u32(r.index);
    }
    pub fn output(&mut self, o: &Output) {
        self.u64(o.value);
        self.raw32(&o.owner.0);
    }
    pub fn id_set<'a>(&mut self, ids: impl ExactSizeIterator<Item = &'a MessageId>) {
        self.len(ids.len());
        for id in ids {
            self.raw32(&id.0);
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < n {
            return Err(DecodeError::Truncated);
        }
        let (h, t) = self.buf.split_at(n);
        self.buf = t;
        Ok(h)
    }
    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// Collection length, sanity-bounded by the bytes left so hostile input
    /// cannot trigger huge allocations.
    pub fn len(&mut self, min_item: usize) -> Result<usize, DecodeError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item.max(1)) > self.buf.len() {
            return Err(DecodeError::Truncated);
        }
        Ok(n)
    }
    pub fn raw32(&mut self) -> Result<[u8; 32], DecodeError> {
        Ok(self.take(32)?.try_into().unwrap())
    }
    pub fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let n = self.len(1)?;
        Ok(self.take(n)?.to_vec())
    }
    pub fn id(&mut self) -> Result<MessageId, DecodeError> {
        Ok(MessageId(self.raw32()?))
    }
    pub fn key(&mut self) -> Result<PublicKey, DecodeError> {
        Ok(PublicKey(self.raw32()?))
    }
    pub fn output_ref(&mut self) -> Result<OutputRef, DecodeError> {
        Ok(OutputRef {
            tx: self.id()?,
            index: self.u32()?,
        })
    }
    pub fn output(&mut self) -> Result<Output, DecodeError> {
        Ok(Output {
            value: self.u64()?,
            owner: self.key()?,
        })
    }
    pub fn id_set(&mut self) -> Result<BTreeSet<MessageId>, DecodeError> {
        let n = self.len(32)?;
        let mut out = BTreeSet::new();
        let mut last: Option<MessageId> = None;
        for _ in 0..n {
            let id = self.id()?;
            if last.is_some_and(|l| l >= id) {
                return Err(DecodeError::NonCanonical("id set not strictly sorted"));
            }
            last = Some(id);
            out.insert(id);
        }
        Ok(out)
    }
    pub fn finish(self) -> Result<(), DecodeError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(DecodeError::TrailingBytes(self.buf.len()))
        }
    }
}

pub(crate) fn header(w: &mut Writer, kind: u8) {
    w.u8(ENCODING_VERSION);
    w.u8(kind);
}

// ---------------------------------------------------------------------------
// message encoding

impl Message {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Message::Genesis(_) => "genesis",
            Message::Transaction(_) => "tx",
            Message::Ack(_) => "ack",
            Message::Checkpoint(_) => "checkpoint",
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        self.write(&mut w, true);
        w.buf
    }

    /// Bytes covered by the message's signature(s): the encoding with the
    /// signature fields left out and a distinct tag.
    pub fn signing_payload(&self) -> Vec<u8> {
        let mut w = Writer::default();
        self.write(&mut w, false);
        w.buf
    }

    pub fn id(&self) -> MessageId {
        MessageId::of_bytes(&self.encode())
    }

    fn write(&self, w: &mut Writer, signed: bool) {
        let flag = if signed { 0 } else { UNSIGNED_FLAG };
        match self {
            Message::Genesis(g) => {
                header(w, KIND_GENESIS | flag);
                w.len(g.allocations.len());
                for a in &g.allocations {
                    w.output(&a.output);
                    w.raw32(&a.validator.0);
                }
            }
            Message::Transaction(t) => {
                header(w, KIND_TRANSACTION | flag);
                w.len(t.inputs.len());
                for i in &t.inputs {
                    w.output_ref(i);
                }
                w.len(t.outputs.len());
                for o in &t.outputs {
                    w.output(o);
                }
                w.raw32(&t.validator.0);
                if signed {
                    w.len(t.signatures.len());
                    for s in &t.signatures {
                        w.bytes(&s.0);
                    }
                }
            }
            Message::Ack(a) => {
                header(w, KIND_ACK | flag);
                w.raw32(&a.validator.0);
                match &a.prev {
                    None => w.u8(0),
                    Some(p) => {
                        w.u8(1);
                        w.raw32(&p.0);
                    }
                }
                w.id_set(a.signed.iter());
                if signed {
                    w.bytes(&a.signature.0);
                }
            }
            Message::Checkpoint(c) => {
                header(w, KIND_CHECKPOINT | flag);
                w.id_set(c.frontier.iter());
                write_summary(w, &c.summary);
                w.len(c.stakes.len());
                for (k, v) in &c.stakes {
                    w.raw32(&k.0);
                    w.u64(*v);
                }
                w.raw32(&c.commitment.0);
                w.raw32(&c.creator.0);
                if signed {
                    w.bytes(&c.signature.0);
                }
            }
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
        let mut r = Reader::new(bytes);
        let version = r.u8()?;
        if version != ENCODING_VERSION {
            return Err(DecodeError::Version(version));
        }
        let msg = match r.u8()? {
            KIND_GENESIS => {
                let n = r.len(72)?;
                let mut allocations = Vec::with_capacity(n);
                for _ in 0..n {
                    allocations.push(Allocation {
                        output: r.output()?,
                        validator: r.key()?,
                    });
                }
                Message::Genesis(Genesis { allocations })
            }
            KIND_TRANSACTION => {
                let n = r.len(36)?;
                let inputs = (0..n).map(|_| r.output_ref()).collect::<Result<_, _>>()?;
                let n = r.len(40)?;
                let outputs = (0..n).map(|_| r.output()).collect::<Result<_, _>>()?;
                let validator = r.key()?;
                let n = r.len(4)?;
                let signatures = (0..n)
                    .map(|_| r.bytes().map(Signature))
                    .collect::<Result<_, _>>()?;
                Message::Transaction(Transaction {
                    inputs,
                    outputs,
                    validator,
                    signatures,
                })
            }
            KIND_ACK => {
                let validator = r.key()?;
                let prev = match r.u8()? {
                    0 => None,
                    1 => Some(r.id()?),
                    _ => return Err(DecodeError::NonCanonical("prev flag")),
                };
                let signed = r.id_set()?;
                let signature = Signature(r.bytes()?);
                Message::Ack(Ack {
                    validator,
                    prev,
                    signed,
                    signature,
                })
            }
            KIND_CHECKPOINT => {
                let frontier = r.id_set()?;
                let summary = read_summary(&mut r)?;
                let n = r.len(40)?;
                let stakes = (0..n)
                    .map(|_| Ok((r.key()?, r.u64()?)))
                    .collect::<Result<_, DecodeError>>()?;
                let commitment = r.id()?;
                let creator = r.key()?;
                let signature = Signature(r.bytes()?);
                Message::Checkpoint(Checkpoint {
                    frontier,
                    summary,
                    stakes,
                    commitment,
                    creator,
                    signature,
                })
            }
            k => return Err(DecodeError::Kind(k)),
        };
        r.finish()?;
        Ok(msg)
    }

    /// Ids this message points at. A message can only be admitted once all of
    /// them are.
    pub fn references(&self) -> BTreeSet<MessageId> {
        match self {
            Message::Genesis(_) => BTreeSet::new(),
            Message::Transaction(t) => t.inputs.iter().map(|i| i.tx).collect(),
            Message::Ack(a) => a.signed.iter().copied().chain(a.prev).collect(),
            Message::Checkpoint(c) => c.frontier.clone(),
        }
    }

    /// Checks that need nothing beyond the message itself. Input-dependent
    /// transaction checks live in [`Transaction::verify_against`].
    pub fn check_standalone(&self, scheme: &dyn KeyScheme) -> Result<(), VerifyError> {
        match self {
            Message::Genesis(g) => {
                if g.allocations.is_empty() {
                    return Err(VerifyError::EmptyGenesis);
                }
                if let Some(i) = g.allocations.iter().position(|a| a.output.value == 0) {
                    return Err(VerifyError::ZeroValue(i));
                }
                g.allocations
                    .iter()
                    .try_fold(0u64, |s, a| s.checked_add(a.output.value))
                    .ok_or(VerifyError::Overflow)?;
                Ok(())
            }
            Message::Transaction(t) => t.check_shape(),
            Message::Ack(a) => {
                if a.signed.is_empty() {
                    return Err(VerifyError::EmptyAck);
                }
                if !scheme.verify(&a.validator, &self.signing_payload(), &a.signature) {
                    return Err(VerifyError::BadSignature(0));
                }
                Ok(())
            }
            Message::Checkpoint(c) => {
                if !scheme.verify(&c.creator, &self.signing_payload(), &c.signature) {
                    return Err(VerifyError::BadSignature(0));
                }
                c.check_summary()
            }
        }
    }
}

fn write_summary(w: &mut Writer, summary: &[SummaryEntry]) {
    w.len(summary.len());
    for e in summary {
        w.output_ref(&e.output_ref);
        w.output(&e.output);
        w.raw32(&e.validator.0);
    }
}

fn read_summary(r: &mut Reader<'_>) -> Result<Vec<SummaryEntry>, DecodeError> {
    let n = r.len(108)?;
    (0..n)
        .map(|_| {
            Ok(SummaryEntry {
                output_ref: r.output_ref()?,
                output: r.output()?,
                validator: r.key()?,
            })
        })
        .collect()
}

impl Genesis {
    pub fn total(&self) -> u64 {
        self.allocations.iter().map(|a| a.output.value).sum()
    }

    pub fn into_message(self) -> Message {
        Message::Genesis(self)
    }
}

impl Transaction {
    /// Builds and signs a transaction. `owner_keys[i]` must own `inputs[i]`.
    pub fn new_signed(
        scheme: &dyn KeyScheme,
        inputs: Vec<OutputRef>,
        outputs: Vec<Output>,
        validator: PublicKey,
        owner_keys: &[&SecretKey],
    ) -> Transaction {
        let mut tx = Transaction {
            inputs,
            outputs,
            validator,
            signatures: Vec::new(),
        };
        let payload = Message::Transaction(tx.clone()).signing_payload();
        tx.signatures = owner_keys.iter().map(|sk| scheme.sign(sk, &payload)).collect();
        tx
    }

    pub fn value(&self) -> u64 {
        self.outputs.iter().map(|o| o.value).sum()
    }

    fn check_shape(&self) -> Result<(), VerifyError> {
        if self.inputs.is_empty() {
            return Err(VerifyError::NoInputs);
        }
        if self.outputs.is_empty() {
            return Err(VerifyError::NoOutputs);
        }
        let mut seen = BTreeSet::new();
        for i in &self.inputs {
            if !seen.insert(*i) {
                return Err(VerifyError::DuplicateInput(*i));
            }
        }
        if let Some(i) = self.outputs.iter().position(|o| o.value == 0) {
            return Err(VerifyError::ZeroValue(i));
        }
        if self.signatures.len() != self.inputs.len() {
            return Err(VerifyError::MissingSignature {
                expected: self.inputs.len(),
                found: self.signatures.len(),
            });
        }
        Ok(())
    }

    /// Full validity check given a way to look up the outputs being spent.
    /// Shape and the signatures over inputs `resolve` knows; balance is not
    /// checked. For transactions whose other inputs were pruned away.
    pub fn verify_known(
        &self,
        scheme: &dyn KeyScheme,
        resolve: impl Fn(&OutputRef) -> Option<Output>,
    ) -> Result<(), VerifyError> {
        self.check_shape()?;
        let payload = Message::Transaction(self.clone()).signing_payload();
        for (i, (r, sig)) in self.inputs.iter().zip(&self.signatures).enumerate() {
            if let Some(o) = resolve(r) {
                if !scheme.verify(&o.owner, &payload, sig) {
                    return Err(VerifyError::BadSignature(i));
                }
            }
        }
        Ok(())
    }

    pub fn verify_against(
        &self,
        scheme: &dyn KeyScheme,
        resolve: impl Fn(&OutputRef) -> Option<Output>,
    ) -> Result<(), VerifyError> {
        self.check_shape()?;
        let spent = self
            .inputs
            .iter()
            .map(|r| resolve(r).ok_or(VerifyError::UnknownInput(*r)))
            .collect::<Result<Vec<_>, _>>()?;
        let inputs: u128 = spent.iter().map(|o| o.value as u128).sum();
        let outputs: u128 = self.outputs.iter().map(|o| o.value as u128).sum();
        if inputs != outputs {
            return Err(VerifyError::ValueImbalance { inputs, outputs });
        }
        let payload = Message::Transaction(self.clone()).signing_payload();
        for (i, (o, sig)) in spent.iter().zip(&self.signatures).enumerate() {
            if !scheme.verify(&o.owner, &payload, sig) {
                return Err(VerifyError::BadSignature(i));
            }
        }
        Ok(())
    }
}

impl Ack {
    pub fn new_signed(
        scheme: &dyn KeyScheme,
        sk: &SecretKey,
        prev: Option<MessageId>,
        signed: BTreeSet<MessageId>,
    ) -> Ack {
        let mut ack = Ack {
            validator: scheme.public_of(sk),
            prev,
            signed,
            signature: Signature::default(),
        };
        ack.signature = scheme.sign(sk, &Message::Ack(ack.clone()).signing_payload());
        ack
    }
}

impl Checkpoint {
    pub fn commitment_of(summary: &[SummaryEntry]) -> MessageId {
        let mut w = Writer::default();
        w.buf.extend_from_slice(b"abc/summary");
        write_summary(&mut w, summary);
        MessageId::of_bytes(&w.buf)
    }

    pub fn stakes_of(summary: &[SummaryEntry]) -> Vec<(PublicKey, u64)> {
        let mut m = std::collections::BTreeMap::new();
        for e in summary {
            *m.entry(e.validator).or_insert(0u64) += e.output.value;
        }
        m.into_iter().collect()
    }

    pub fn total(&self) -> u64 {
        self.summary.iter().map(|e| e.output.value).sum()
    }

    pub fn new_signed(
        scheme: &dyn KeyScheme,
        creator: &SecretKey,
        frontier: BTreeSet<MessageId>,
        mut summary: Vec<SummaryEntry>,
    ) -> Checkpoint {
        summary.sort_by(|a, b| {
            (a.output.owner, a.output_ref).cmp(&(b.output.owner, b.output_ref))
        });
        let mut cp = Checkpoint {
            frontier,
            stakes: Self::stakes_of(&summary),
            commitment: Self::commitment_of(&summary),
            summary,
            creator: scheme.public_of(creator),
            signature: Signature::default(),
        };
        cp.signature = scheme.sign(creator, &Message::Checkpoint(cp.clone()).signing_payload());
        cp
    }

    fn check_summary(&self) -> Result<(), VerifyError> {
        let sorted = self.summary.windows(2).all(|w| {
            (w[0].output.owner, w[0].output_ref) < (w[1].output.owner, w[1].output_ref)
        });
        if !sorted {
            return Err(VerifyError::UnsortedSummary);
        }
        if Self::commitment_of(&self.summary) != self.commitment {
            return Err(VerifyError::BadCommitment);
        }
        if Self::stakes_of(&self.summary) != self.stakes {
            return Err(VerifyError::BadStakeTable);
        }
        Ok(())
    }
}
