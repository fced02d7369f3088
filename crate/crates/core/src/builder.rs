//! Hand-assembling DAGs from human-readable names.
//!
//! Owners and validators are plain names ("p1", "v2"); their keys are derived
//! deterministically from the name. Because owner keys are never reused, an
//! output is addressed by the name of its owner.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{seed_for_name, KeyScheme, PublicKey, SecretKey, TestScheme};
use crate::dag::{DagStore, Ingest, RejectReason};
use crate::message::{
    Ack, Allocation, Checkpoint, Genesis, Message, MessageId, Output, OutputRef, SummaryEntry,
    Transaction,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("no output is owned by `{0}`")]
    UnknownOwner(String),
    #[error("label `{0}` used twice")]
    DuplicateLabel(String),
    #[error("owner `{0}` already holds an output")]
    DuplicateOwner(String),
    #[error("genesis must be set before other messages")]
    NoGenesis,
    #[error("store rejected `{0}`: {1}")]
    Rejected(String, RejectReason),
}

#[derive(Debug, Clone)]
pub struct DagBuilder {
    scheme: Arc<dyn KeyScheme>,
    genesis: Option<Genesis>,
    labels: BTreeMap<String, MessageId>,
    names: BTreeMap<MessageId, String>,
    owned: BTreeMap<String, (OutputRef, Output)>,
    /// Non-genesis messages in creation order.
    messages: Vec<(String, Message)>,
}

impl Default for DagBuilder {
    fn default() -> Self {
        Self::new(Arc::new(TestScheme))
    }
}

pub fn key_for(scheme: &dyn KeyScheme, name: &str) -> (PublicKey, SecretKey) {
    scheme.keygen(seed_for_name(name))
}

impl DagBuilder {
    pub fn new(scheme: Arc<dyn KeyScheme>) -> Self {
        DagBuilder {
            scheme,
            genesis: None,
            labels: BTreeMap::new(),
            names: BTreeMap::new(),
            owned: BTreeMap::new(),
            messages: Vec::new(),
        }
    }

    pub fn pk(&self, name: &str) -> PublicKey {
        key_for(self.scheme.as_ref(), name).0
    }

    pub fn sk(&self, name: &str) -> SecretKey {
        key_for(self.scheme.as_ref(), name).1
    }

    fn label(&mut self, label: &str, id: MessageId) -> Result<(), BuildError> {
        if self.labels.insert(label.to_string(), id).is_some() {
            return Err(BuildError::DuplicateLabel(label.into()));
        }
        self.names.insert(id, label.to_string());
        Ok(())
    }

    fn own(&mut self, owner: &str, r: OutputRef, o: Output) -> Result<(), BuildError> {
        if self.owned.insert(owner.to_string(), (r, o)).is_some() {
            return Err(BuildError::DuplicateOwner(owner.into()));
        }
        Ok(())
    }

    /// `allocations` are (owner, value, validator).
    pub fn genesis(&mut self, allocations: &[(&str, u64, &str)]) -> Result<MessageId, BuildError> {
        let g = Genesis {
            allocations: allocations
                .iter()
                .map(|(o, v, val)| Allocation {
                    output: Output { value: *v, owner: self.pk(o) },
                    validator: self.pk(val),
                })
                .collect(),
        };
        let id = Message::Genesis(g.clone()).id();
        for (i, a) in g.allocations.iter().enumerate() {
            self.own(allocations[i].0, OutputRef { tx: id, index: i as u32 }, a.output)?;
        }
        self.label("genesis", id)?;
        self.genesis = Some(g);
        Ok(id)
    }

    pub fn output_of(&self, owner: &str) -> Result<(OutputRef, Output), BuildError> {
        self.owned
            .get(owner)
            .copied()
            .ok_or_else(|| BuildError::UnknownOwner(owner.into()))
    }

    pub fn id(&self, label: &str) -> Result<MessageId, BuildError> {
        self.labels
            .get(label)
            .copied()
            .ok_or_else(|| BuildError::UnknownLabel(label.into()))
    }

    pub fn name_of(&self, id: &MessageId) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &BTreeMap<String, MessageId> {
        &self.labels
    }

    /// Spends the outputs owned by `inputs`, creating one output per
    /// (owner, value), delegated to `validator`.
    pub fn tx(
        &mut self,
        label: &str,
        inputs: &[&str],
        outputs: &[(&str, u64)],
        validator: &str,
    ) -> Result<MessageId, BuildError> {
        let refs = inputs
            .iter()
            .map(|i| self.output_of(i).map(|(r, _)| r))
            .collect::<Result<Vec<_>, _>>()?;
        let sks: Vec<SecretKey> = inputs.iter().map(|i| self.sk(i)).collect();
        let outs: Vec<Output> = outputs
            .iter()
            .map(|(o, v)| Output { value: *v, owner: self.pk(o) })
            .collect();
        let tx = Transaction::new_signed(
            self.scheme.as_ref(),
            refs,
            outs.clone(),
            self.pk(validator),
            &sks.iter().collect::<Vec<_>>(),
        );
        self.push_tx(label, tx, outputs.iter().map(|(o, _)| *o))
    }

    /// Adds an externally built transaction; `owners` name its outputs.
    pub fn push_tx<'a>(
        &mut self,
        label: &str,
        tx: Transaction,
        owners: impl Iterator<Item = &'a str>,
    ) -> Result<MessageId, BuildError> {
        let msg = Message::Transaction(tx.clone());
        let id = msg.id();
        self.label(label, id)?;
        for (i, owner) in owners.enumerate() {
            self.own(owner, OutputRef { tx: id, index: i as u32 }, tx.outputs[i])?;
        }
        self.messages.push((label.to_string(), msg));
        Ok(id)
    }

    pub fn ack(
        &mut self,
        label: &str,
        validator: &str,
        prev: Option<&str>,
        signs: &[&str],
    ) -> Result<MessageId, BuildError> {
        let prev = prev.map(|p| self.id(p)).transpose()?;
        let signed = signs
            .iter()
            .map(|s| self.id(s))
            .collect::<Result<BTreeSet<_>, _>>()?;
        let ack = Ack::new_signed(self.scheme.as_ref(), &self.sk(validator), prev, signed);
        self.push(label, Message::Ack(ack))
    }

    pub fn checkpoint(
        &mut self,
        label: &str,
        creator: &str,
        frontier: &[&str],
        summary: Vec<SummaryEntry>,
    ) -> Result<MessageId, BuildError> {
        let frontier = frontier
            .iter()
            .map(|s| self.id(s))
            .collect::<Result<BTreeSet<_>, _>>()?;
        let cp = Checkpoint::new_signed(self.scheme.as_ref(), &self.sk(creator), frontier, summary);
        self.push(label, Message::Checkpoint(cp))
    }

    pub fn push(&mut self, label: &str, msg: Message) -> Result<MessageId, BuildError> {
        let id = msg.id();
        self.label(label, id)?;
        self.messages.push((label.to_string(), msg));
        Ok(id)
    }

    pub fn genesis_message(&self) -> Result<&Genesis, BuildError> {
        self.genesis.as_ref().ok_or(BuildError::NoGenesis)
    }

    pub fn messages(&self) -> &[(String, Message)] {
        &self.messages
    }

    pub fn message(&self, label: &str) -> Result<&Message, BuildError> {
        self.messages
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, m)| m)
            .ok_or_else(|| BuildError::UnknownLabel(label.into()))
    }

    pub fn empty_store(&self) -> Result<DagStore, BuildError> {
        DagStore::with_scheme(self.genesis_message()?.clone(), self.scheme.clone())
            .map_err(|e| BuildError::Rejected("genesis".into(), e))
    }

    /// A store holding every message built so far, ingested in creation
    /// order. Any rejection is an error.
    pub fn store(&self) -> Result<DagStore, BuildError> {
        let mut s = self.empty_store()?;
        for (label, m) in &self.messages {
            if let Ingest::Rejected(r) = s.ingest(m.clone()) {
                return Err(BuildError::Rejected(label.clone(), r));
            }
        }
        Ok(s)
    }

    /// A store holding only the listed labels.
    pub fn store_with(&self, labels: &[&str]) -> Result<DagStore, BuildError> {
        let mut s = self.empty_store()?;
        for l in labels {
            if let Ingest::Rejected(r) = s.ingest(self.message(l)?.clone()) {
                return Err(BuildError::Rejected(l.to_string(), r));
            }
        }
        Ok(s)
    }
}
