//! Honest participant logic: wallets that pay and validators that sign.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{KeyScheme, PublicKey, SecretKey};
use crate::message::{Ack, Genesis, MessageId, Output, OutputRef, Transaction};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WalletError {
    #[error("insufficient funds: need {needed}, have {available}")]
    InsufficientFunds { needed: u64, available: u64 },
    #[error("payment amounts must be positive")]
    ZeroAmount,
    #[error("output {0:?} is not owned by this wallet")]
    NotOwned(OutputRef),
}

/// Holds spendable outputs. Every output it receives or creates gets a fresh
/// key, and an output leaves the spendable set the moment it is spent, so an
/// honest wallet can never double-spend.
#[derive(Debug, Clone)]
pub struct Wallet {
    scheme: Arc<dyn KeyScheme>,
    seed_base: u64,
    next_key: u64,
    /// Keys handed out but not yet seen holding an output.
    expected: HashMap<PublicKey, SecretKey>,
    owned: BTreeMap<OutputRef, (Output, SecretKey)>,
}

impl Wallet {
    /// `seed_base` must differ between wallets; keys are derived from it.
    pub fn new(seed_base: u64, scheme: Arc<dyn KeyScheme>) -> Self {
        Wallet {
            scheme,
            seed_base,
            next_key: 0,
            expected: HashMap::new(),
            owned: BTreeMap::new(),
        }
    }

    /// A never-used receiving key.
    pub fn fresh_key(&mut self) -> PublicKey {
        let seed = self.seed_base.wrapping_mul(1 << 20).wrapping_add(self.next_key);
        self.next_key += 1;
        let (pk, sk) = self.scheme.keygen(seed);
        self.expected.insert(pk, sk);
        pk
    }

    fn claim(&mut self, r: OutputRef, o: Output) {
        if let Some(sk) = self.expected.remove(&o.owner) {
            self.owned.insert(r, (o, sk));
        }
    }

    pub fn observe_genesis(&mut self, id: MessageId, g: &Genesis) {
        for (i, a) in g.allocations.iter().enumerate() {
            self.claim(OutputRef { tx: id, index: i as u32 }, a.output);
        }
    }

    /// Picks up outputs of `tx` addressed to this wallet.
    pub fn observe_tx(&mut self, id: MessageId, tx: &Transaction) {
        for (i, o) in tx.outputs.iter().enumerate() {
            self.claim(OutputRef { tx: id, index: i as u32 }, *o);
        }
    }

    pub fn balance(&self) -> u64 {
        self.owned.values().map(|(o, _)| o.value).sum()
    }

    pub fn spendable(&self) -> impl Iterator<Item = (&OutputRef, &Output)> {
        self.owned.iter().map(|(r, (o, _))| (r, o))
    }

    /// Pays `payments` (recipient key, amount), delegating the new outputs
    /// to `validator`. Inputs are chosen largest first; any excess goes back
    /// to a fresh key of this wallet.
    pub fn pay(
        &mut self,
        payments: &[(PublicKey, u64)],
        validator: PublicKey,
    ) -> Result<Transaction, WalletError> {
        let needed = payment_total(payments)?;
        let available = self.balance();
        if available < needed {
            return Err(WalletError::InsufficientFunds { needed, available });
        }
        let mut by_value: Vec<(OutputRef, u64)> =
            self.owned.iter().map(|(r, (o, _))| (*r, o.value)).collect();
        by_value.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut inputs = Vec::new();
        let mut sum = 0;
        for (r, v) in by_value {
            if sum >= needed {
                break;
            }
            inputs.push(r);
            sum += v;
        }
        let tx = self.build_from(&inputs, payments, validator)?;
        for r in &inputs {
            self.owned.remove(r);
        }
        Ok(tx)
    }

    /// Builds a payment from explicit inputs without marking them spent.
    /// Honest code goes through [`Wallet::pay`]; this is the hook an
    /// adversarial wallet uses to spend the same output twice.
    pub fn build_from(
        &mut self,
        inputs: &[OutputRef],
        payments: &[(PublicKey, u64)],
        validator: PublicKey,
    ) -> Result<Transaction, WalletError> {
        let needed = payment_total(payments)?;
        let mut sum = 0u64;
        let mut keys = Vec::new();
        for r in inputs {
            let (o, sk) = self.owned.get(r).ok_or(WalletError::NotOwned(*r))?;
            sum += o.value;
            keys.push(sk.clone());
        }
        if sum < needed {
            return Err(WalletError::InsufficientFunds { needed, available: sum });
        }
        let mut outputs: Vec<Output> = payments
            .iter()
            .map(|&(owner, value)| Output { value, owner })
            .collect();
        if sum > needed {
            let change = self.fresh_key();
            outputs.push(Output { value: sum - needed, owner: change });
        }
        Ok(Transaction::new_signed(
            self.scheme.as_ref(),
            inputs.to_vec(),
            outputs,
            validator,
            &keys.iter().collect::<Vec<_>>(),
        ))
    }

    /// Drops an output from the spendable set (used after an out-of-band spend).
    pub fn forget(&mut self, r: &OutputRef) {
        self.owned.remove(r);
    }
}

fn payment_total(payments: &[(PublicKey, u64)]) -> Result<u64, WalletError> {
    if payments.is_empty() || payments.iter().any(|p| p.1 == 0) {
        return Err(WalletError::ZeroAmount);
    }
    Ok(payments.iter().map(|p| p.1).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignDecision {
    Sign,
    /// An earlier-seen transaction already spends one of the inputs.
    RefuseConflict(MessageId),
}

/// An honest validator: signs a transaction unless it has already seen
/// another one spending the same input, and batches everything it signed
/// since its last activation into one acknowledgement chained onto the
/// previous one.
#[derive(Debug, Clone)]
pub struct ValidatorState {
    scheme: Arc<dyn KeyScheme>,
    sk: SecretKey,
    pk: PublicKey,
    last_ack: Option<MessageId>,
    first_seen: HashMap<OutputRef, MessageId>,
    decisions: BTreeMap<MessageId, SignDecision>,
    outbox: BTreeSet<MessageId>,
    /// Everything signed, in signing order.
    signed: Vec<MessageId>,
}

impl ValidatorState {
    pub fn new(sk: SecretKey, scheme: Arc<dyn KeyScheme>) -> Self {
        let pk = scheme.public_of(&sk);
        ValidatorState {
            scheme,
            sk,
            pk,
            last_ack: None,
            first_seen: HashMap::new(),
            decisions: BTreeMap::new(),
            outbox: BTreeSet::new(),
            signed: Vec::new(),
        }
    }

    pub fn key(&self) -> PublicKey {
        self.pk
    }

    pub fn last_ack(&self) -> Option<MessageId> {
        self.last_ack
    }

    pub fn decision(&self, tx: &MessageId) -> Option<SignDecision> {
        self.decisions.get(tx).copied()
    }

    pub fn signed(&self) -> &[MessageId] {
        &self.signed
    }

    /// First-seen-wins signing rule. Deciding twice on the same transaction
    /// returns the original decision.
    pub fn on_transaction(&mut self, id: MessageId, tx: &Transaction) -> SignDecision {
        if let Some(d) = self.decisions.get(&id) {
            return *d;
        }
        let rival = tx
            .inputs
            .iter()
            .find_map(|i| self.first_seen.get(i).copied().filter(|s| *s != id));
        for i in &tx.inputs {
            self.first_seen.entry(*i).or_insert(id);
        }
        let d = match rival {
            Some(r) => SignDecision::RefuseConflict(r),
            None => {
                self.outbox.insert(id);
                self.signed.push(id);
                SignDecision::Sign
            }
        };
        self.decisions.insert(id, d);
        d
    }

    /// Queues an already-vetted message (a checkpoint, or a transaction being
    /// re-listed) for the next acknowledgement.
    pub fn endorse(&mut self, id: MessageId) {
        self.outbox.insert(id);
    }

    pub fn has_outbox(&self) -> bool {
        !self.outbox.is_empty()
    }

    /// Emits one acknowledgement covering the outbox, chained onto the
    /// previous one. `None` if there is nothing to sign.
    pub fn emit_ack(&mut self) -> Option<Ack> {
        if self.outbox.is_empty() {
            return None;
        }
        let signed = std::mem::take(&mut self.outbox);
        let ack = Ack::new_signed(self.scheme.as_ref(), &self.sk, self.last_ack, signed);
        self.last_ack = Some(crate::message::Message::Ack(ack.clone()).id());
        Some(ack)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::TestScheme;
    use crate::message::{Allocation, Message};

    fn funded(values: &[u64]) -> (Wallet, MessageId) {
        let scheme: Arc<dyn KeyScheme> = Arc::new(TestScheme);
        let mut w = Wallet::new(1, scheme.clone());
        let validator = scheme.keygen(999).0;
        let g = Genesis {
            allocations: values
                .iter()
                .map(|&value| Allocation { output: Output { value, owner: w.fresh_key() }, validator })
                .collect(),
        };
        let id = Message::Genesis(g.clone()).id();
        w.observe_genesis(id, &g);
        (w, id)
    }

    #[test]
    fn exact_change_and_no_reuse() {
        let (mut w, _) = funded(&[5, 3]);
        let to = TestScheme.keygen(50).0;
        let v = TestScheme.keygen(51).0;
        let tx = w.pay(&[(to, 4)], v).unwrap();
        assert_eq!(tx.inputs.len(), 1);
        assert_eq!(tx.outputs.iter().map(|o| o.value).collect::<Vec<_>>(), vec![4, 1]);
        assert_eq!(w.balance(), 3);
        // change becomes spendable once the wallet sees its own transaction
        w.observe_tx(Message::Transaction(tx.clone()).id(), &tx);
        assert_eq!(w.balance(), 4);
        let keys: BTreeSet<_> = tx.outputs.iter().map(|o| o.owner).collect();
        assert_eq!(keys.len(), 2);
    }

    #[test]
    fn insufficient_funds() {
        let (mut w, _) = funded(&[2]);
        let to = TestScheme.keygen(50).0;
        assert_eq!(
            w.pay(&[(to, 3)], to).unwrap_err(),
            WalletError::InsufficientFunds { needed: 3, available: 2 }
        );
        assert_eq!(w.balance(), 2);
    }

    #[test]
    fn validator_refuses_second_spender() {
        let (mut w, _) = funded(&[4]);
        let r = *w.spendable().next().unwrap().0;
        let (a, b) = (TestScheme.keygen(60).0, TestScheme.keygen(61).0);
        let t1 = w.build_from(&[r], &[(a, 4)], a).unwrap();
        let t2 = w.build_from(&[r], &[(b, 4)], b).unwrap();
        let (i1, i2) = (Message::Transaction(t1.clone()).id(), Message::Transaction(t2.clone()).id());
        let mut v = ValidatorState::new(TestScheme.keygen(70).1, Arc::new(TestScheme));
        assert_eq!(v.on_transaction(i1, &t1), SignDecision::Sign);
        assert_eq!(v.on_transaction(i2, &t2), SignDecision::RefuseConflict(i1));
        assert_eq!(v.on_transaction(i1, &t1), SignDecision::Sign);
        let ack = v.emit_ack().unwrap();
        assert_eq!(ack.signed, [i1].into_iter().collect());
        assert!(v.emit_ack().is_none());
    }

    #[test]
    fn acks_chain() {
        let mut v = ValidatorState::new(TestScheme.keygen(70).1, Arc::new(TestScheme));
        v.endorse(MessageId([1; 32]));
        let a1 = v.emit_ack().unwrap();
        v.endorse(MessageId([2; 32]));
        let a2 = v.emit_ack().unwrap();
        assert_eq!(a1.prev, None);
        assert_eq!(a2.prev, Some(Message::Ack(a1).id()));
    }
}
