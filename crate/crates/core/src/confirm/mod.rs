//! Confirmation: deciding which transactions are final.
//!
//! A transaction `t` is confirmed in a scope `P` (a set of admitted messages)
//! when every transaction it spends from is confirmed in `P` and some set of
//! acknowledgements `A` in `P` certifies it:
//!
//! * at least one ack in `past(A)` signs `t`, and no other transaction in
//!   `past(A)` spends one of `t`'s inputs;
//! * the validators signing `t` within `past(A)` hold more than two thirds of
//!   the total stake, where stake is measured in `past(A)` with `t` and
//!   everything spending from it taken out.
//!
//! Stake in a scope is the value of outputs produced by transactions
//! confirmed in that scope and not spent by a transaction confirmed in it.
//! Removing `t` before measuring makes the definition well-founded: the
//! recursion always descends into a strictly smaller scope. Since the verdict
//! for `A` depends only on `past(A)`, certificates are transferable between
//! stores, and a confirmation never goes away as a store grows.
//!
//! Evaluation is three-valued. Stakes are tracked as intervals so most
//! thresholds are settled without recursing, and every sub-result is
//! memoised by scope. The certificate search tries a handful of natural ack
//! sets first and then falls back to a bounded exhaustive enumeration; past
//! the bound a transaction is reported as unresolved rather than guessed.

mod bounds;
mod certificate;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use crate::bitset::BitSet;
use crate::crypto::PublicKey;
use crate::dag::{Body, DagError, DagStore, KeyIdx, MsgIdx};
use crate::message::MessageId;

pub use bounds::{stake_bounds, BoundVerdict, StakeBounds};
pub use certificate::{CertificateError, ConfirmationCertificate};

/// Stake delegated to each validator.
pub type StakeMap = BTreeMap<PublicKey, u64>;

pub const DEFAULT_EXHAUSTIVE_MAX_CHOICES: u64 = 1 << 16;

/// `3·signed > 2·total`, in exact integer arithmetic.
pub fn exceeds_two_thirds(signed: u64, total: u64) -> bool {
    3 * signed as u128 > 2 * total as u128
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tri {
    Yes,
    No,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Confirmed,
    Unconfirmed,
    Unresolved,
}

impl TxStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TxStatus::Confirmed => "confirmed",
            TxStatus::Unconfirmed => "unconfirmed",
            TxStatus::Unresolved => "unresolved",
        }
    }
}

impl From<Tri> for TxStatus {
    fn from(t: Tri) -> Self {
        match t {
            Tri::Yes => TxStatus::Confirmed,
            Tri::No => TxStatus::Unconfirmed,
            Tri::Unknown => TxStatus::Unresolved,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfirmError {
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error("{0:?} is not a transaction")]
    NotTransaction(MessageId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckerConfig {
    /// Try the cheap candidate ack sets.
    pub greedy: bool,
    /// Fall back to enumerating ack sets.
    pub exhaustive: bool,
    /// Enumeration budget; larger searches are reported as unresolved.
    pub exhaustive_max_choices: u64,
    /// Also consider ack sets holding acks that do not sign the
    /// transaction, which only add context. Without it candidates are one
    /// signing ack (or none) per validator.
    pub context_acks: bool,
    /// Cap on candidate evaluations per queried transaction. Queries that
    /// run out report unresolved instead of an exact answer.
    pub work_limit: Option<u64>,
}

impl Default for CheckerConfig {
    fn default() -> Self {
        CheckerConfig {
            greedy: true,
            exhaustive: true,
            exhaustive_max_choices: DEFAULT_EXHAUSTIVE_MAX_CHOICES,
            context_acks: true,
            work_limit: None,
        }
    }
}

impl CheckerConfig {
    /// Candidates restricted to signing acks: cheap enough for long-running
    /// simulations, where every agent re-evaluates after each delivery.
    pub fn signing_only() -> Self {
        CheckerConfig { context_acks: false, ..CheckerConfig::default() }
    }

    /// Caps every query at `limit` candidate evaluations; a transaction
    /// that needs more is reported unresolved for now.
    pub fn bounded(limit: u64) -> Self {
        CheckerConfig { work_limit: Some(limit), ..CheckerConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CertificateSearch {
    Found(ConfirmationCertificate),
    NotFound,
    Unresolved,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfirmedSet {
    /// Confirmed transactions, the root included.
    pub confirmed: BTreeSet<MessageId>,
    /// Transactions the bounded search could not decide.
    pub unresolved: BTreeSet<MessageId>,
}

impl ConfirmedSet {
    pub fn status(&self, id: &MessageId) -> TxStatus {
        if self.confirmed.contains(id) {
            TxStatus::Confirmed
        } else if self.unresolved.contains(id) {
            TxStatus::Unresolved
        } else {
            TxStatus::Unconfirmed
        }
    }
}

type ScopeId = u32;


#[derive(Debug, Clone, PartialEq, Eq)]
enum Search {
    Found(Vec<MsgIdx>),
    NotFound,
    Unresolved,
}

#[derive(Debug, Clone, Copy)]
struct Verdict {
    tri: Tri,
}

/// Stateful evaluator bound to one store at a time. Memoised results are
/// keyed by scope, so they stay valid as the store grows; switching to a
/// different store clears them.
#[derive(Debug)]
pub struct Checker {
    config: CheckerConfig,
    store_uid: u64,
    scopes: HashMap<Arc<BitSet>, ScopeId>,
    scope_sets: Vec<Arc<BitSet>>,
    status_memo: HashMap<(ScopeId, MsgIdx), Tri>,
    search_memo: HashMap<(ScopeId, MsgIdx), Search>,
    verdict_memo: HashMap<(ScopeId, MsgIdx), Verdict>,
    /// Winning ack sets per transaction with the candidate scope they
    /// spanned. The verdict only depends on that scope, so a winner wins
    /// again wherever it spans the same one.
    winners: HashMap<MsgIdx, Vec<(Vec<MsgIdx>, ScopeId)>>,
    /// Scopes in which a transaction provably has no certificate. See
    /// `restricts` for where that carries over.
    refuted: HashMap<MsgIdx, Vec<Arc<BitSet>>>,
    /// Scopes closed under taking the past. There every candidate ack set
    /// spans its own past, so a search only depends on which acks are
    /// usable; results are also kept under that key.
    closed: HashSet<ScopeId>,
    by_acks: HashMap<(MsgIdx, BitSet), Search>,
    /// Per scope, transactions that might be confirmed in some part of it.
    plausible: HashMap<ScopeId, Arc<BitSet>>,
    work: u64,
    truncated: bool,
}

impl Default for Checker {
    fn default() -> Self {
        Self::new(CheckerConfig::default())
    }
}

/// Lower/upper bound on a stake total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Interval {
    lo: u64,
    hi: u64,
}

impl Checker {
    pub fn new(config: CheckerConfig) -> Self {
        Checker {
            config,
            store_uid: 0,
            scopes: HashMap::new(),
            scope_sets: Vec::new(),
            status_memo: HashMap::new(),
            search_memo: HashMap::new(),
            verdict_memo: HashMap::new(),
            winners: HashMap::new(),
            refuted: HashMap::new(),
            closed: HashSet::new(),
            by_acks: HashMap::new(),
            plausible: HashMap::new(),
            work: 0,
            truncated: false,
        }
    }

    pub fn config(&self) -> CheckerConfig {
        self.config
    }

    fn sync(&mut self, s: &DagStore) {
        if s.uid() != self.store_uid {
            *self = Checker::new(self.config);
            self.store_uid = s.uid();
        }
    }

    fn intern(&mut self, b: BitSet) -> ScopeId {
        if let Some(&id) = self.scopes.get(&b) {
            return id;
        }
        let id = self.scope_sets.len() as ScopeId;
        let b = Arc::new(b);
        self.scope_sets.push(b.clone());
        self.scopes.insert(b, id);
        id
    }

    fn scope(&self, id: ScopeId) -> Arc<BitSet> {
        self.scope_sets[id as usize].clone()
    }

    fn top(&mut self, s: &DagStore) -> ScopeId {
        self.sync(s);
        let id = self.intern(BitSet::full(s.len()));
        self.closed.insert(id);
        id
    }

    fn fresh_budget(&mut self) {
        self.work = 0;
        self.truncated = false;
    }

    /// Whether an undecided result may be memoised: not if it only stems
    /// from running out of budget.
    fn keep_unknown(&self) -> bool {
        !self.truncated
    }

    fn tx_of(&self, s: &DagStore, id: &MessageId) -> Result<MsgIdx, ConfirmError> {
        let i = s.idx(id)?;
        if !s.entry(i).is_tx() {
            return Err(ConfirmError::NotTransaction(*id));
        }
        Ok(i)
    }

    // -----------------------------------------------------------------
    // public API

    /// Three-valued status of a transaction in the whole store.
    pub fn status(&mut self, s: &DagStore, id: &MessageId) -> Result<TxStatus, ConfirmError> {
        let i = s.idx(id)?;
        if i == 0 {
            return Ok(TxStatus::Confirmed);
        }
        let t = self.tx_of(s, id)?;
        let top = self.top(s);
        self.fresh_budget();
        Ok(self.status_in(s, top, t).into())
    }

    pub fn confirmed_set(&mut self, s: &DagStore) -> ConfirmedSet {
        let top = self.top(s);
        let mut out = ConfirmedSet::default();
        out.confirmed.insert(s.root_id());
        let txs: Vec<MsgIdx> = s.transactions().collect();
        for t in txs {
            self.fresh_budget();
            match self.status_in(s, top, t) {
                Tri::Yes => {
                    out.confirmed.insert(s.entry(t).id);
                }
                Tri::Unknown => {
                    out.unresolved.insert(s.entry(t).id);
                }
                Tri::No => {}
            }
        }
        out
    }

    /// Certificate for a confirmed transaction. A transaction whose own
    /// threshold is met but whose dependencies are not confirmed yields
    /// `NotFound`.
    pub fn find_certificate(
        &mut self,
        s: &DagStore,
        id: &MessageId,
    ) -> Result<CertificateSearch, ConfirmError> {
        let t = self.tx_of(s, id)?;
        let top = self.top(s);
        self.fresh_budget();
        Ok(match self.status_in(s, top, t) {
            Tri::No => CertificateSearch::NotFound,
            Tri::Unknown => CertificateSearch::Unresolved,
            Tri::Yes => CertificateSearch::Found(self.build_certificate(s, top, t)),
        })
    }

    /// Stake per validator in `past(acks)`, measured against the confirmed
    /// set of that scope.
    pub fn delegated_stake(
        &mut self,
        s: &DagStore,
        acks: &[MessageId],
    ) -> Result<StakeMap, ConfirmError> {
        self.sync(s);
        let idx = acks.iter().map(|a| s.idx(a)).collect::<Result<Vec<_>, _>>()?;
        let q = self.intern(s.past_bits(&idx));
        Ok(self.stake_map(s, q).0)
    }

    /// Stake as a certificate for `tx` sees it: measured in `past(acks)` with
    /// `tx` and everything spending from it taken out.
    pub fn delegated_stake_excluding(
        &mut self,
        s: &DagStore,
        acks: &[MessageId],
        tx: &MessageId,
    ) -> Result<StakeMap, ConfirmError> {
        self.sync(s);
        let t = self.tx_of(s, tx)?;
        let idx = acks.iter().map(|a| s.idx(a)).collect::<Result<Vec<_>, _>>()?;
        let mut pa = s.past_bits(&idx);
        let dep = s.dependents_within(t, &pa);
        pa.difference_with(&dep);
        let q = self.intern(pa);
        Ok(self.stake_map(s, q).0)
    }

    /// Stake per validator in an arbitrary past-closed scope, as
    /// (lower, upper) maps. They coincide unless some confirmation inside
    /// the scope is unresolved.
    pub fn stake_in_scope(&mut self, s: &DagStore, scope: &BitSet) -> (StakeMap, StakeMap) {
        self.sync(s);
        let q = self.intern(scope.clone());
        self.stake_map(s, q)
    }

    /// Confirmed set of an arbitrary past-closed scope.
    pub fn confirmed_in_scope(&mut self, s: &DagStore, scope: &BitSet) -> BitSet {
        self.sync(s);
        let q = self.intern(scope.clone());
        let mut out = BitSet::singleton(0);
        for t in scope.iter().filter(|&t| s.entry(t).is_tx()) {
            self.fresh_budget();
            if self.status_in(s, q, t) == Tri::Yes {
                out.insert(t);
            }
        }
        out
    }

    // -----------------------------------------------------------------
    // evaluation

    fn status_in(&mut self, s: &DagStore, q: ScopeId, w: MsgIdx) -> Tri {
        if w == 0 {
            return Tri::Yes;
        }
        if !self.scope_sets[q as usize].contains(w) || s.is_void(w) {
            return Tri::No;
        }
        if let Some(&r) = self.status_memo.get(&(q, w)) {
            return r;
        }
        let parents: Vec<MsgIdx> = s.tx_parents(w).collect();
        let mut parents_unknown = false;
        let mut result = None;
        for p in parents {
            match self.status_in(s, q, p) {
                Tri::No => {
                    result = Some(Tri::No);
                    break;
                }
                Tri::Unknown => parents_unknown = true,
                Tri::Yes => {}
            }
        }
        let result = result.unwrap_or_else(|| match self.search(s, q, w) {
            Search::NotFound => Tri::No,
            Search::Unresolved => Tri::Unknown,
            Search::Found(_) if parents_unknown => Tri::Unknown,
            Search::Found(_) => Tri::Yes,
        });
        if result != Tri::Unknown || self.keep_unknown() {
            self.status_memo.insert((q, w), result);
        }
        result
    }

    /// A winning ack set recorded for `t` that spans the same candidate
    /// scope inside `p` as when it won.
    fn known_winner(&self, s: &DagStore, p: &BitSet, t: MsgIdx) -> Option<Vec<MsgIdx>> {
        self.winners.get(&t)?.iter().find_map(|(acks, x)| {
            if !acks.iter().all(|&a| p.contains(a)) {
                return None;
            }
            let x = &self.scope_sets[*x as usize];
            if !x.is_subset(p) {
                return None;
            }
            let mut pa = s.past_bits(acks);
            pa.intersect_with(p);
            (pa == **x).then(|| acks.clone())
        })
    }

    /// Status from memo and exact shortcuts only, without searching.
    fn quick_status(&mut self, s: &DagStore, q: ScopeId, w: MsgIdx) -> Tri {
        if w == 0 {
            return Tri::Yes;
        }
        if let Some(&r) = self.status_memo.get(&(q, w)) {
            return r;
        }
        let p = self.scope(q);
        if !p.contains(w) || s.is_void(w) || !s.entry(w).signed_by.iter().any(|&a| p.contains(a)) {
            self.status_memo.insert((q, w), Tri::No);
            return Tri::No;
        }
        let parents: Vec<MsgIdx> = s.tx_parents(w).collect();
        let mut all_yes = true;
        for u in parents {
            match self.quick_status(s, q, u) {
                Tri::No => {
                    self.status_memo.insert((q, w), Tri::No);
                    return Tri::No;
                }
                Tri::Unknown => all_yes = false,
                Tri::Yes => {}
            }
        }
        if all_yes && self.known_winner(s, &p, w).is_some() {
            self.status_memo.insert((q, w), Tri::Yes);
            return Tri::Yes;
        }
        Tri::Unknown
    }

    /// Whether `t` has a certificate among the acks of scope `q`.
    fn search(&mut self, s: &DagStore, q: ScopeId, t: MsgIdx) -> Search {
        if let Some(r) = self.search_memo.get(&(q, t)) {
            return r.clone();
        }
        let usable = self.closed.contains(&q).then(|| usable_acks(s, &self.scope_sets[q as usize], t));
        if let Some(u) = &usable {
            if let Some(r) = self.by_acks.get(&(t, u.clone())) {
                let r = r.clone();
                self.search_memo.insert((q, t), r.clone());
                return r;
            }
        }
        let r = self.search_uncached(s, q, t);
        if let Some(u) = usable {
            // an unresolved search is retried once the usable acks change
            self.by_acks.insert((t, u), r.clone());
        }
        if r != Search::Unresolved || self.keep_unknown() {
            self.search_memo.insert((q, t), r.clone());
        }
        r
    }

    fn search_uncached(&mut self, s: &DagStore, q: ScopeId, t: MsgIdx) -> Search {
        let p = self.scope(q);
        if let Some(acks) = self.known_winner(s, &p, t) {
            return Search::Found(acks);
        }
        // Largest refuted scope that p restricts to; ack sets inside it
        // span scopes that were already tried there.
        let mut known: Option<Arc<BitSet>> = None;
        for r in self.refuted.get(&t).into_iter().flatten() {
            if p.is_subset(r) && restricts(s, r, &p) {
                return Search::NotFound;
            }
            if r.is_subset(&p)
                && known.as_ref().is_none_or(|k| k.len() < r.len())
                && restricts(s, &p, r)
            {
                known = Some(r.clone());
            }
        }
        let closed = self.closed.contains(&q);
        let r = self.search_fresh(s, &p, closed, t, known.as_deref());
        if r == Search::NotFound && self.config.exhaustive {
            let list = self.refuted.entry(t).or_default();
            list.retain(|old| !(old.is_subset(&p) && restricts(s, &p, old)));
            list.push(p);
        }
        r
    }

    fn search_fresh(
        &mut self,
        s: &DagStore,
        p: &Arc<BitSet>,
        closed: bool,
        t: MsgIdx,
        known: Option<&BitSet>,
    ) -> Search {
        // Nothing with a transaction competing for t's inputs in its past
        // can be part of a certificate's scope.
        let rivals: Vec<MsgIdx> = s
            .tx_inputs(t)
            .iter()
            .flat_map(|&slot| s.outputs()[slot].spenders.iter().copied())
            .filter(|&w| w != t && p.contains(w))
            .collect();
        let tainted = |a: MsgIdx| rivals.iter().any(|&r| s.entry(a).past.contains(r));
        let region: BitSet = if rivals.is_empty() { (**p).clone() } else { p.iter().filter(|&x| !tainted(x)).collect() };
        let signing: Vec<MsgIdx> = s.entry(t).signed_by.iter().copied().filter(|&a| region.contains(a)).collect();
        if signing.is_empty() {
            return Search::NotFound;
        }

        // Whatever A is chosen, signer stake can only come from value
        // flowing to validators signing t somewhere in the region.
        let m = s.total_stake();
        let mut signer_keys = vec![false; s.keys().len()];
        for &a in &signing {
            if let Body::Ack { validator, .. } = s.entry(a).body {
                signer_keys[validator] = true;
            }
        }
        // With context acks in play refutations get expensive, which pays
        // for first narrowing down what can be confirmed at all.
        let plausible = if self.config.context_acks { Some(self.plausible(s, p)) } else { None };
        let mut rest = region.clone();
        rest.difference_with(&s.dependents_within(t, p));
        let possible = |w: MsgIdx| plausible.as_ref().is_none_or(|g| g.contains(w));
        if !exceeds_two_thirds(flow_bound(s, &rest, &signer_keys, possible), m) {
            return Search::NotFound;
        }

        let fresh = |a: &MsgIdx| known.is_none_or(|k| !k.contains(*a));
        let mut signing_by: BTreeMap<KeyIdx, Vec<MsgIdx>> = BTreeMap::new();
        for &a in &signing {
            if let Body::Ack { validator, .. } = s.entry(a).body {
                signing_by.entry(validator).or_default().push(a);
            }
        }
        let mut acks_by: BTreeMap<KeyIdx, Vec<MsgIdx>> = BTreeMap::new();
        for x in region.iter() {
            if let Body::Ack { validator, .. } = s.entry(x).body {
                acks_by.entry(validator).or_default().push(x);
            }
        }
        if !acks_by.values().flatten().any(fresh) {
            return Search::NotFound;
        }

        let mut unknown = false;
        let mut tried: HashSet<ScopeId> = HashSet::new();
        let mut attempt = |this: &mut Self, acks: &[MsgIdx], pa: BitSet| -> Option<Search> {
            let pid = this.intern(pa);
            if !tried.insert(pid) {
                return None;
            }
            if closed {
                this.closed.insert(pid);
            }
            match this.verdict(s, pid, t) {
                Tri::Yes => {
                    let acks = tips(s, acks);
                    this.winners.entry(t).or_default().push((acks.clone(), pid));
                    Some(Search::Found(acks))
                }
                Tri::Unknown => {
                    unknown = true;
                    None
                }
                Tri::No => None,
            }
        };
        let span = |acks: &[MsgIdx]| {
            let mut pa = s.past_bits(acks);
            pa.intersect_with(p);
            pa
        };

        if self.config.greedy {
            let earliest: Vec<MsgIdx> = signing_by.values().map(|v| v[0]).collect();
            let latest: Vec<MsgIdx> = signing_by.values().map(|v| *v.last().unwrap()).collect();
            let mut candidates = vec![earliest.clone(), latest];
            if self.config.context_acks {
                candidates.push(acks_by.values().flatten().copied().collect());
                for tip in acks_by.values().flat_map(|v| tips(s, v)) {
                    let mut c = earliest.clone();
                    c.push(tip);
                    candidates.push(c);
                }
            }
            for c in candidates {
                if c.iter().any(fresh) {
                    if let Some(r) = attempt(self, &c, span(&c)) {
                        return r;
                    }
                }
            }
        }

        if !self.config.exhaustive {
            // Without the exhaustive pass, failure of the cheap candidates
            // is as far as this configuration goes.
            return if unknown { Search::Unresolved } else { Search::NotFound };
        }

        let cap = self.config.exhaustive_max_choices;
        let mut visits = 0u64;
        let mut run = |this: &mut Self, all: &[Vec<Vec<MsgIdx>>], visits: &mut u64| -> Option<Search> {
            // Combinations made only of acks inside `known` were refuted
            // before; the rest are split by the first validator contributing
            // something new.
            let (old, new): (Vec<Vec<_>>, Vec<Vec<_>>) = all
                .iter()
                .map(|c| c.iter().cloned().partition(|ch: &Vec<MsgIdx>| !ch.iter().any(fresh)))
                .unzip();
            for i in (0..all.len()).filter(|&i| !new[i].is_empty()) {
                let choices: Vec<&Vec<Vec<MsgIdx>>> = (0..all.len())
                    .map(|j| if j < i { &old[j] } else if j == i { &new[j] } else { &all[j] })
                    .collect();
                let mut acks = Vec::new();
                let mut leaf = |acks: &[MsgIdx], past: &BitSet| {
                    let mut pa = past.clone();
                    pa.intersect_with(p);
                    attempt(this, acks, pa)
                };
                let mut walk = Walk { s, choices: &choices, visits: &mut *visits, cap, leaf: &mut leaf };
                if let Some(r) = walk.go(0, &mut acks, &BitSet::new()) {
                    return Some(r);
                }
            }
            None
        };

        // Signing acks alone, one per validator, come first; they settle
        // almost every case.
        let singles: Vec<Vec<Vec<MsgIdx>>> = signing_by
            .values()
            .map(|acks| {
                let mut c: Vec<Vec<MsgIdx>> = acks.iter().rev().map(|&a| vec![a]).collect();
                c.push(Vec::new());
                c
            })
            .collect();
        if let Some(r) = run(self, &singles, &mut visits) {
            return r;
        }
        if !self.config.context_acks {
            return if unknown { Search::Unresolved } else { Search::NotFound };
        }

        // Then every ack set of the region: one choice per validator, staying
        // out or contributing an antichain of its own acks. Each ack set has
        // the same past as exactly one such combination.
        let mut all = Vec::new();
        let mut product = 1u64;
        for acks in acks_by.values() {
            let mut c = antichains(s, acks, cap);
            c.reverse();
            c.push(Vec::new());
            product = product.saturating_mul(c.len() as u64);
            if product > cap {
                return Search::Unresolved;
            }
            all.push(c);
        }
        visits = 0;
        if let Some(r) = run(self, &all, &mut visits) {
            return r;
        }
        if unknown {
            Search::Unresolved
        } else {
            Search::NotFound
        }
    }

    /// Over-approximates what can be confirmed in any subset of `p`: the
    /// largest set of transactions whose parents are in it and whose
    /// signers could reach the threshold if only its members spent.
    fn plausible(&mut self, s: &DagStore, p: &Arc<BitSet>) -> Arc<BitSet> {
        let pid = self.intern((**p).clone());
        if let Some(g) = self.plausible.get(&pid) {
            return g.clone();
        }
        let m = s.total_stake();
        let mut keep = BitSet::singleton(0);
        let mut candidates = Vec::new();
        for w in s.transactions().filter(|&w| p.contains(w)) {
            let mut keys = vec![false; s.keys().len()];
            let mut any = false;
            for &a in &s.entry(w).signed_by {
                if let (true, Body::Ack { validator, .. }) = (p.contains(a), &s.entry(a).body) {
                    keys[*validator] = true;
                    any = true;
                }
            }
            if any {
                keep.insert(w);
                let mut rest = (**p).clone();
                rest.remove(w);
                candidates.push((w, keys, rest));
            }
        }
        loop {
            let mut changed = false;
            for (w, keys, rest) in &candidates {
                if !keep.contains(*w) {
                    continue;
                }
                let ok = s.tx_parents(*w).all(|x| keep.contains(x))
                    && exceeds_two_thirds(flow_bound(s, rest, keys, |x| keep.contains(x)), m);
                if !ok {
                    keep.remove(*w);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let keep = Arc::new(keep);
        self.plausible.insert(pid, keep.clone());
        keep
    }

    /// Verdict of the certificate condition for `t` given the scope `pa`
    /// spanned by a candidate ack set.
    fn verdict(&mut self, s: &DagStore, pa: ScopeId, t: MsgIdx) -> Tri {
        if let Some(v) = self.verdict_memo.get(&(pa, t)) {
            return v.tri;
        }
        if let Some(limit) = self.config.work_limit {
            if self.work >= limit {
                self.truncated = true;
                return Tri::Unknown;
            }
        }
        self.work += 1;
        let tri = match self.verdict_parts(s, pa, t) {
            None => Tri::No,
            Some((q, signers)) => self.threshold(s, q, &signers),
        };
        if tri != Tri::Unknown || self.keep_unknown() {
            self.verdict_memo.insert((pa, t), Verdict { tri });
        }
        tri
    }

    /// Signers of `t` within `pa` and the erased scope their stake is
    /// measured in; `None` if there are no signers or a rival spend is
    /// visible.
    fn verdict_parts(&mut self, s: &DagStore, pa: ScopeId, t: MsgIdx) -> Option<(ScopeId, Vec<bool>)> {
        let scope = self.scope(pa);
        if !scope.contains(t) {
            return None;
        }
        let mut signers = vec![false; s.keys().len()];
        let mut any = false;
        for &a in &s.entry(t).signed_by {
            if scope.contains(a) {
                if let Body::Ack { validator, .. } = s.entry(a).body {
                    signers[validator] = true;
                    any = true;
                }
            }
        }
        if !any {
            return None;
        }
        for &slot in s.tx_inputs(t) {
            if s.outputs()[slot]
                .spenders
                .iter()
                .any(|&w| w != t && scope.contains(w))
            {
                return None;
            }
        }
        let dep = s.dependents_within(t, &scope);
        let mut q = (*scope).clone();
        q.difference_with(&dep);
        Some((self.intern(q), signers))
    }

    fn threshold(&mut self, s: &DagStore, q: ScopeId, signers: &[bool]) -> Tri {
        let m = s.total_stake();
        let scope = self.scope(q);
        // Start from what the memo already knows, then settle undecided
        // outputs one by one, largest first, until the verdict is clear.
        let mut own = Interval::default();
        let mut comp_hi = 0u64;
        let mut open: Vec<(u64, usize, bool)> = Vec::new();
        for slot in 0..s.outputs().len() {
            let o = &s.outputs()[slot];
            if !scope.contains(o.producer) {
                continue;
            }
            let mine = signers[o.validator];
            let value = o.output.value;
            let (lo, hi) = self.output_live(s, q, &scope, slot, false);
            if mine {
                own.lo += if lo { value } else { 0 };
                own.hi += if hi { value } else { 0 };
            } else if hi {
                comp_hi += value;
            }
            if lo != hi {
                open.push((value, slot, mine));
            }
        }
        let decide = |own: &Interval, comp_hi: u64| {
            // Confirmed unspent value in any scope is at least M, so the
            // complement's upper bound also bounds the signers from below.
            if exceeds_two_thirds(own.lo.max(m.saturating_sub(comp_hi)), m) {
                Some(Tri::Yes)
            } else if !exceeds_two_thirds(own.hi, m) {
                Some(Tri::No)
            } else {
                None
            }
        };
        if let Some(v) = decide(&own, comp_hi) {
            return v;
        }
        let others: Vec<bool> = signers.iter().map(|x| !x).collect();
        let flows = |this: &Self| {
            let possible = |w: MsgIdx| this.status_memo.get(&(q, w)) != Some(&Tri::No);
            (flow_bound(s, &scope, signers, possible), flow_bound(s, &scope, &others, possible))
        };
        let (mut own_flow, mut comp_flow) = flows(self);
        let tight = |own: &Interval, comp_hi: u64, own_flow: u64, comp_flow: u64| {
            let own = Interval { lo: own.lo, hi: own.hi.min(own_flow) };
            decide(&own, comp_hi.min(comp_flow))
        };
        if let Some(v) = tight(&own, comp_hi, own_flow, comp_flow) {
            return v;
        }
        open.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for (value, slot, mine) in open {
            let (lo, hi) = self.output_live(s, q, &scope, slot, true);
            // the coarse pass counted it as possibly but not certainly live
            if mine {
                own.lo += if lo { value } else { 0 };
                own.hi -= if hi { 0 } else { value };
            } else if !hi {
                comp_hi -= value;
            }
            if let Some(v) = tight(&own, comp_hi, own_flow, comp_flow) {
                return v;
            }
        }
        (own_flow, comp_flow) = flows(self);
        tight(&own, comp_hi, own_flow, comp_flow).unwrap_or(Tri::Unknown)
    }

    /// Whether an output is (certainly, possibly) live in `q`.
    fn output_live(&mut self, s: &DagStore, q: ScopeId, scope: &BitSet, slot: usize, exact: bool) -> (bool, bool) {
        let o = &s.outputs()[slot];
        let look = |this: &mut Self, w: MsgIdx| -> Tri {
            if exact {
                this.status_in(s, q, w)
            } else {
                this.quick_status(s, q, w)
            }
        };
        let produced = look(self, o.producer);
        if produced == Tri::No {
            return (false, false);
        }
        let mut spent = Tri::No;
        for &w in &o.spenders {
            if !scope.contains(w) {
                continue;
            }
            match look(self, w) {
                Tri::Yes => {
                    spent = Tri::Yes;
                    break;
                }
                Tri::Unknown => spent = Tri::Unknown,
                Tri::No => {}
            }
        }
        (
            produced == Tri::Yes && spent == Tri::No,
            spent != Tri::Yes,
        )
    }

    /// Stake map of a scope as (lower, upper). Validators that ever held an
    /// output in the scope appear in both, with zero if nothing is left.
    fn stake_map(&mut self, s: &DagStore, q: ScopeId) -> (StakeMap, StakeMap) {
        let scope = self.scope(q);
        let mut lo = StakeMap::new();
        let mut hi = StakeMap::new();
        for slot in 0..s.outputs().len() {
            let o = &s.outputs()[slot];
            if !scope.contains(o.producer) {
                continue;
            }
            let key = s.key(o.validator);
            let (l, h) = self.output_live(s, q, &scope, slot, true);
            let value = s.outputs()[slot].output.value;
            *lo.entry(key).or_insert(0) += if l { value } else { 0 };
            *hi.entry(key).or_insert(0) += if h { value } else { 0 };
        }
        (lo, hi)
    }

    fn build_certificate(&mut self, s: &DagStore, top: ScopeId, t: MsgIdx) -> ConfirmationCertificate {
        let Search::Found(acks) = self.search(s, top, t) else {
            unreachable!("certificate requested for a transaction without one")
        };
        // Dependencies are witnessed by their own certificates.
        let mut support = BTreeSet::new();
        let mut stack: Vec<MsgIdx> = s.tx_parents(t).filter(|&p| p != 0).collect();
        let mut seen = BTreeSet::new();
        while let Some(p) = stack.pop() {
            if !seen.insert(p) {
                continue;
            }
            if let Search::Found(a) = self.search(s, top, p) {
                support.extend(a);
            }
            stack.extend(s.tx_parents(p).filter(|&g| g != 0));
        }
        let support: Vec<MsgIdx> = support.into_iter().collect();
        let (stakes, _) = self.signer_stakes(s, &acks, t).expect("found certificate has signers");
        let signed_sum = stakes.values().sum();
        ConfirmationCertificate {
            tx: s.entry(t).id,
            acks: acks.iter().map(|&a| s.entry(a).id).collect(),
            support: tips(s, &support).iter().map(|&a| s.entry(a).id).collect(),
            stakes,
            signed_sum,
            total: s.total_stake(),
        }
    }

    /// Exact (lower-bound if undecidable) stake of each signer of `t` as
    /// the ack set `acks` sees it, plus the verdict.
    fn signer_stakes(&mut self, s: &DagStore, acks: &[MsgIdx], t: MsgIdx) -> Option<(StakeMap, Tri)> {
        let pa = self.intern(s.past_bits(acks));
        let tri = self.verdict(s, pa, t);
        let (q, signers) = self.verdict_parts(s, pa, t)?;
        let (lo, _) = self.stake_map(s, q);
        let stakes = (0..s.keys().len())
            .filter(|&k| signers[k])
            .map(|k| (s.key(k), lo.get(&s.key(k)).copied().unwrap_or(0)))
            .collect();
        Some((stakes, tri))
    }

    /// Checks a certificate against the messages of `s`. Only `past(acks ∪
    /// support)` is consulted, so the result is the same in any store that
    /// contains it.
    pub fn verify_certificate(
        &mut self,
        s: &DagStore,
        cert: &ConfirmationCertificate,
    ) -> Result<(), CertificateError> {
        self.sync(s);
        let t = s.idx(&cert.tx).map_err(|_| CertificateError::Missing(cert.tx))?;
        if !s.entry(t).is_tx() {
            return Err(CertificateError::NotTransaction);
        }
        if s.is_void(t) {
            return Err(CertificateError::Void);
        }
        let lookup = |ids: &BTreeSet<MessageId>| -> Result<Vec<MsgIdx>, CertificateError> {
            ids.iter()
                .map(|a| {
                    let i = s.idx(a).map_err(|_| CertificateError::Missing(*a))?;
                    if s.entry(i).is_ack() {
                        Ok(i)
                    } else {
                        Err(CertificateError::NotAck(*a))
                    }
                })
                .collect()
        };
        let acks = lookup(&cert.acks)?;
        let support = lookup(&cert.support)?;
        if acks.is_empty() {
            return Err(CertificateError::NoSigners);
        }
        if cert.total != s.total_stake() {
            return Err(CertificateError::TotalMismatch);
        }
        let (stakes, tri) = self
            .signer_stakes(s, &acks, t)
            .ok_or(CertificateError::NoSigners)?;
        if stakes != cert.stakes {
            return Err(CertificateError::StakeMismatch);
        }
        if stakes.values().sum::<u64>() != cert.signed_sum {
            return Err(CertificateError::SumMismatch);
        }
        if tri != Tri::Yes {
            return Err(CertificateError::BelowThreshold);
        }
        let mut all = acks;
        all.extend(support);
        let scope = self.intern(s.past_bits(&all));
        let parents: Vec<MsgIdx> = s.tx_parents(t).collect();
        for p in parents {
            if self.status_in(s, scope, p) != Tri::Yes {
                return Err(CertificateError::DependencyUnconfirmed(s.entry(p).id));
            }
        }
        Ok(())
    }
}

/// Depth-first walk over one choice per validator, carrying the chosen
/// acks and their joint past. A choice already inside that past changes
/// nothing and is skipped.
struct Walk<'a, F> {
    s: &'a DagStore,
    choices: &'a [&'a Vec<Vec<MsgIdx>>],
    visits: &'a mut u64,
    cap: u64,
    leaf: &'a mut F,
}

impl<F: FnMut(&[MsgIdx], &BitSet) -> Option<Search>> Walk<'_, F> {
    fn go(&mut self, depth: usize, acks: &mut Vec<MsgIdx>, past: &BitSet) -> Option<Search> {
        if depth == self.choices.len() {
            return if acks.is_empty() { None } else { (self.leaf)(acks, past) };
        }
        for ch in self.choices[depth] {
            *self.visits += 1;
            if *self.visits > self.cap {
                return Some(Search::Unresolved);
            }
            if !ch.is_empty() && ch.iter().all(|&a| past.contains(a)) {
                continue;
            }
            let mark = acks.len();
            let r = if ch.is_empty() {
                self.go(depth + 1, acks, past)
            } else {
                let mut next = past.clone();
                for &a in ch {
                    next.union_with(&self.s.entry(a).past);
                    acks.push(a);
                }
                self.go(depth + 1, acks, &next)
            };
            acks.truncate(mark);
            if r.is_some() {
                return r;
            }
        }
        None
    }
}

/// Acks of `p` whose past holds no transaction competing with `t`.
fn usable_acks(s: &DagStore, p: &BitSet, t: MsgIdx) -> BitSet {
    let rivals: Vec<MsgIdx> = s
        .tx_inputs(t)
        .iter()
        .flat_map(|&slot| s.outputs()[slot].spenders.iter().copied())
        .filter(|&w| w != t && p.contains(w))
        .collect();
    p.iter()
        .filter(|&a| s.entry(a).is_ack() && !rivals.iter().any(|&r| s.entry(a).past.contains(r)))
        .collect()
}

/// Upper bound on the value live at validators in `pick` under any
/// confirmed set of `scope`: each output holds either its own value or
/// whatever its possible spenders pass on. Conflicting spenders are added,
/// not maximised, so the bound holds even if both end up confirmed.
fn flow_bound(s: &DagStore, scope: &BitSet, pick: &[bool], possible: impl Fn(MsgIdx) -> bool) -> u64 {
    fn walk(
        s: &DagStore,
        scope: &BitSet,
        pick: &[bool],
        possible: &dyn Fn(MsgIdx) -> bool,
        memo: &mut [Option<u64>],
        slot: usize,
    ) -> u64 {
        if let Some(v) = memo[slot] {
            return v;
        }
        let o = &s.outputs()[slot];
        let own = if pick[o.validator] { o.output.value } else { 0 };
        let mut passed = 0u64;
        for &w in &o.spenders {
            if scope.contains(w) && possible(w) && s.entry(w).signed_by.iter().any(|&a| scope.contains(a)) {
                let mut through = 0u64;
                for &out in s.tx_outputs(w) {
                    through = through.saturating_add(walk(s, scope, pick, possible, memo, out));
                }
                // transactions are balanced, so no input hands on more
                // than it holds
                passed = passed.saturating_add(through.min(o.output.value));
            }
        }
        let v = own.max(passed);
        memo[slot] = Some(v);
        v
    }
    let mut memo = vec![None; s.outputs().len()];
    (0..s.outputs().len())
        .filter(|&g| s.outputs()[g].producer == 0)
        .map(|g| walk(s, scope, pick, &possible, &mut memo, g))
        .fold(0u64, u64::saturating_add)
}

/// Whether `inner`, a subset of `outer`, is `outer` cut down to a
/// past-closed set: nothing of `outer` outside `inner` lies in the past of
/// something inside. Then any ack set within `inner` spans the same scope
/// in both.
fn restricts(s: &DagStore, outer: &BitSet, inner: &BitSet) -> bool {
    let mut extra = outer.clone();
    extra.difference_with(inner);
    extra.is_empty() || inner.iter().all(|m| s.entry(m).past.is_disjoint(&extra))
}

/// Maximal elements of an ack set (same past, fewer ids).
fn tips(s: &DagStore, acks: &[MsgIdx]) -> Vec<MsgIdx> {
    let set: BTreeSet<MsgIdx> = acks.iter().copied().collect();
    set.iter()
        .copied()
        .filter(|&a| !set.iter().any(|&b| b != a && s.entry(b).past.contains(a)))
        .collect()
}

/// Non-empty antichains of one validator's acks (in store order), at most
/// `cap + 1` of them.
fn antichains(s: &DagStore, acks: &[MsgIdx], cap: u64) -> Vec<Vec<MsgIdx>> {
    fn go(s: &DagStore, acks: &[MsgIdx], i: usize, cur: &mut Vec<MsgIdx>, out: &mut Vec<Vec<MsgIdx>>, cap: u64) {
        if out.len() as u64 > cap {
            return;
        }
        if i == acks.len() {
            if !cur.is_empty() {
                out.push(cur.clone());
            }
            return;
        }
        go(s, acks, i + 1, cur, out, cap);
        let a = acks[i];
        if cur.iter().all(|&b| !s.entry(a).past.contains(b)) {
            cur.push(a);
            go(s, acks, i + 1, cur, out, cap);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(s, acks, 0, &mut Vec::new(), &mut out, cap);
    out
}
