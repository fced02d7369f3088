//! The adversary's stake budget and its scripted behaviour.
//!
//! The budget `x` is an upper estimate of the stake the adversary controls.
//! It starts at the genesis stake delegated to adversarial validators. When
//! a transaction delegating to the adversary is issued, the honest part of
//! its value is added; when a transaction delegating to an honest validator
//! is confirmed, the adversarial part of its inputs is taken off. Nothing is
//! refunded when a charged transaction never confirms. Safety is only
//! promised while `3x < M`.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::crypto::PublicKey;
use crate::message::{Genesis, MessageId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("adversary budget {x} is not below a third of the total stake {total}")]
pub struct BudgetViolation {
    pub x: u64,
    pub total: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum BudgetEvent {
    Issued { tx: MessageId, charge: u64 },
    Confirmed { tx: MessageId, credit: u64 },
}

/// Value of a transaction and the part of its inputs whose producers
/// delegated to the adversary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxStakeFlow {
    pub value: u64,
    pub adversarial_inputs: u64,
    pub delegated_to_adversary: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AdversaryBudget {
    adversary: BTreeSet<PublicKey>,
    initial: u64,
    x: u64,
    total: u64,
    events: Vec<BudgetEvent>,
}

impl AdversaryBudget {
    pub fn new(adversary: BTreeSet<PublicKey>, genesis: &Genesis) -> Self {
        let initial = genesis
            .allocations
            .iter()
            .filter(|a| adversary.contains(&a.validator))
            .map(|a| a.output.value)
            .sum();
        AdversaryBudget { adversary, initial, x: initial, total: genesis.total(), events: Vec::new() }
    }

    pub fn is_adversarial(&self, validator: &PublicKey) -> bool {
        self.adversary.contains(validator)
    }

    pub fn x(&self) -> u64 {
        self.x
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn events(&self) -> &[BudgetEvent] {
        &self.events
    }

    pub fn check(&self) -> Result<(), BudgetViolation> {
        if (3 * self.x as u128) < self.total as u128 {
            Ok(())
        } else {
            Err(BudgetViolation { x: self.x, total: self.total })
        }
    }

    pub fn on_issue(&mut self, tx: MessageId, flow: TxStakeFlow) {
        if flow.delegated_to_adversary {
            let charge = flow.value - flow.adversarial_inputs.min(flow.value);
            self.x += charge;
            self.events.push(BudgetEvent::Issued { tx, charge });
        }
    }

    pub fn on_confirm(&mut self, tx: MessageId, flow: TxStakeFlow) {
        if !flow.delegated_to_adversary {
            let credit = flow.adversarial_inputs.min(self.x);
            self.x -= credit;
            self.events.push(BudgetEvent::Confirmed { tx, credit });
        }
    }

    /// Recomputes `x` from the event log alone.
    pub fn replay(&self) -> u64 {
        self.events.iter().fold(self.initial, |x, e| match e {
            BudgetEvent::Issued { charge, .. } => x + charge,
            BudgetEvent::Confirmed { credit, .. } => x - credit,
        })
    }
}

/// How an adversarial validator behaves when left to itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ByzantineMode {
    /// Never acknowledges anything on its own.
    Silent,
    /// Signs every transaction it sees, conflicting ones included.
    SignAll,
    /// Signs everything, pointing each ack at a random earlier one of its
    /// own (or at none), forking its chain.
    Equivocate,
}

/// Scripted adversary moves, keyed by scenario labels and agent names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum AdversaryAction {
    /// Spend the same output twice. Each version is delivered promptly to
    /// its own audience; everyone else gets it `release_after` steps later,
    /// or only on an explicit release when `None`.
    IssueDoubleSpend {
        labels: (String, String),
        wallet: String,
        first: Payment,
        second: Payment,
        first_to: Vec<String>,
        second_to: Vec<String>,
        release_after: Option<u64>,
    },
    /// An ack from an adversarial validator with an arbitrary `prev`.
    ForkAckChain {
        label: String,
        validator: String,
        prev: Option<String>,
        signs: Vec<String>,
        to: Option<Vec<String>>,
        release_after: Option<u64>,
    },
    /// A normally chained ack shown only to some recipients at first.
    SignSelective {
        label: String,
        validator: String,
        signs: Vec<String>,
        to: Vec<String>,
        release_after: Option<u64>,
    },
    /// Hold every delivery of a message until a step.
    Withhold { message: String, until: u64 },
    /// Release held deliveries of a message to the given recipients now.
    ReleaseTo { message: String, to: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Payment {
    pub to: String,
    pub amount: u64,
    pub validator: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{Allocation, Output};

    fn genesis(adv: PublicKey, honest: PublicKey) -> Genesis {
        Genesis {
            allocations: vec![
                Allocation { output: Output { value: 2, owner: PublicKey([1; 32]) }, validator: adv },
                Allocation { output: Output { value: 8, owner: PublicKey([2; 32]) }, validator: honest },
            ],
        }
    }

    #[test]
    fn budget_rules() {
        let (a, h) = (PublicKey([10; 32]), PublicKey([11; 32]));
        let mut b = AdversaryBudget::new([a].into_iter().collect(), &genesis(a, h));
        assert_eq!(b.x(), 2);
        // honest money moved to the adversary: charged in full at issue
        b.on_issue(MessageId([1; 32]), TxStakeFlow { value: 1, adversarial_inputs: 0, delegated_to_adversary: true });
        assert_eq!(b.x(), 3);
        assert!(b.check().is_ok());
        // adversarial money moved to an honest validator: credited on confirmation
        b.on_confirm(MessageId([2; 32]), TxStakeFlow { value: 2, adversarial_inputs: 2, delegated_to_adversary: false });
        assert_eq!(b.x(), 1);
        assert_eq!(b.replay(), b.x());
        b.on_issue(MessageId([3; 32]), TxStakeFlow { value: 3, adversarial_inputs: 0, delegated_to_adversary: true });
        assert_eq!(b.check(), Err(BudgetViolation { x: 4, total: 10 }));
    }
}
