//! Asynchronous, consensus-relaxed proof-of-stake payments.
//!
//! Transactions spend outputs and delegate the stake they carry to a
//! validator; validators acknowledge transactions they have not seen
//! conflicts for, and a transaction is final once acknowledgements from
//! validators holding more than two thirds of the stake cover it. There is
//! no total order and no leader. The crate contains the ledger itself
//! ([`message`], [`dag`], [`confirm`], [`checkpoint`], [`econ`]), the honest
//! participants ([`agents`]) and a deterministic adversarial network
//! simulator ([`netsim`], [`adversary`], [`scenario`]).

pub mod bitset;
pub mod builder;
pub mod checkpoint;
pub mod agents;
pub mod adversary;
pub mod confirm;
pub mod crypto;
pub mod dag;
pub mod econ;
pub mod message;
pub mod netsim;
pub mod scenario;

pub use confirm::{Checker, CheckerConfig, ConfirmationCertificate, ConfirmedSet, TxStatus};
pub use crypto::{KeyScheme, PublicKey, SecretKey, Signature, TestScheme};
pub use dag::{DagStore, Ingest, RejectReason};
pub use message::{Ack, Allocation, Checkpoint, Genesis, Message, MessageId, Output, OutputRef, Transaction};
