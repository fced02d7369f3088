use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{exceeds_two_thirds, StakeMap};
use crate::message::{header, DecodeError, MessageId, Reader, Writer, ENCODING_VERSION, KIND_CERTIFICATE};

/// Evidence that a transaction is confirmed.
///
/// `acks` meet the stake threshold for `tx`; `support` are the acks whose
/// past confirms every transaction `tx` spends from. `stakes` lists each
/// signer's stake as the certificate's scope sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfirmationCertificate {
    pub tx: MessageId,
    pub acks: BTreeSet<MessageId>,
    pub support: BTreeSet<MessageId>,
    pub stakes: StakeMap,
    pub signed_sum: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CertificateError {
    #[error("message {0:?} is not in the store")]
    Missing(MessageId),
    #[error("{0:?} is not an acknowledgement")]
    NotAck(MessageId),
    #[error("certified message is not a transaction")]
    NotTransaction,
    #[error("the transaction spends an output dropped by the checkpoint")]
    Void,
    #[error("no acknowledgement in the certificate's past signs the transaction")]
    NoSigners,
    #[error("certificate was issued under a different total stake")]
    TotalMismatch,
    #[error("recorded signer stakes do not match the recomputed ones")]
    StakeMismatch,
    #[error("recorded stake sum does not match the listed stakes")]
    SumMismatch,
    #[error("signers do not exceed two thirds of the stake")]
    BelowThreshold,
    #[error("dependency {0:?} is not confirmed in the certificate's past")]
    DependencyUnconfirmed(MessageId),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

impl ConfirmationCertificate {
    /// The recorded numbers pass the integer threshold test.
    pub fn threshold_check(&self) -> bool {
        exceeds_two_thirds(self.signed_sum, self.total)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        header(&mut w, KIND_CERTIFICATE);
        w.raw32(&self.tx.0);
        w.id_set(self.acks.iter());
        w.id_set(self.support.iter());
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
        if k != KIND_CERTIFICATE {
            return Err(DecodeError::Kind(k));
        }
        let tx = r.id()?;
        let acks = r.id_set()?;
        let support = r.id_set()?;
        let n = r.len(40)?;
        let mut stakes = StakeMap::new();
        let mut last = None;
        for _ in 0..n {
            let key = r.key()?;
            if last.is_some_and(|l| l >= key) {
                return Err(DecodeError::NonCanonical("stake keys not strictly sorted"));
            }
            last = Some(key);
            stakes.insert(key, r.u64()?);
        }
        let signed_sum = r.u64()?;
        let total = r.u64()?;
        r.finish()?;
        Ok(ConfirmationCertificate { tx, acks, support, stakes, signed_sum, total })
    }
}
