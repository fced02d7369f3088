//! Deterministic asynchronous network simulation.
//!
//! Every agent keeps its own store. Messages are broadcast to all other
//! active agents and delivered one per step in an order chosen by the
//! scheduling policy; the adversary sees every message the moment it is
//! sent and may reorder, hold back, or target deliveries, but never forge
//! honest messages. Runs are a pure function of the scenario: the same
//! scenario produces the same event log byte for byte.
//!
//! An omniscient store receives every message at send time. Safety (no two
//! conflicting transactions confirmed, no confirmation ever lost) is checked
//! against it after every acknowledgement.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::adversary::{AdversaryAction, AdversaryBudget, BudgetViolation, ByzantineMode, TxStakeFlow};
use crate::agents::{SignDecision, ValidatorState, Wallet};
use crate::builder::key_for;
use crate::checkpoint;
use crate::confirm::{CertificateSearch, Checker, CheckerConfig, TxStatus};
use crate::crypto::{seed_for_name, KeyScheme, PublicKey, SecretKey, TestScheme};
use crate::dag::{DagStore, Ingest};
use crate::econ::{FeeLedger, FeePolicy};
use crate::message::{Ack, Allocation, Genesis, Message, MessageId, OutputRef};

pub type AgentId = usize;

pub const DEFAULT_HORIZON: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Wallet,
    Validator,
    Observer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentSpec {
    pub name: String,
    pub role: Role,
    pub honest: bool,
    /// Behaviour of an adversarial validator between scripted moves.
    pub mode: ByzantineMode,
    /// Joins late (with full history replay) instead of at the start.
    pub joins_at: Option<u64>,
    pub leaves_at: Option<u64>,
}

impl AgentSpec {
    pub fn new(name: &str, role: Role) -> Self {
        AgentSpec {
            name: name.to_string(),
            role,
            honest: true,
            mode: ByzantineMode::Silent,
            joins_at: None,
            leaves_at: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenesisSpec {
    pub owner: String,
    pub value: u64,
    pub validator: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayRule {
    pub from: Option<String>,
    pub to: Option<String>,
    pub delay: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Policy {
    /// Oldest message first.
    Fifo,
    /// Uniformly random among deliverable messages.
    SeededRandom(u64),
    /// Oldest first, with per-link delays; the first matching rule applies.
    ScriptedDelay(Vec<DelayRule>),
}

impl Policy {
    pub fn name(&self) -> String {
        match self {
            Policy::Fifo => "fifo".into(),
            Policy::SeededRandom(s) => format!("random:{s}"),
            Policy::ScriptedDelay(_) => "scripted".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Pay {
        label: String,
        from: String,
        to: Vec<(String, u64)>,
        validator: String,
    },
    Adversary(AdversaryAction),
    Join(String),
    Leave(String),
    Cut { from: String, to: String },
    Checkpoint { label: String, creator: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedAction {
    pub at: u64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimSpec {
    pub name: String,
    pub agents: Vec<AgentSpec>,
    pub genesis: Vec<GenesisSpec>,
    pub policy: Policy,
    pub horizon: u64,
    pub actions: Vec<TimedAction>,
    pub fees: FeePolicy,
    /// Agent whose view drives hop measurements.
    pub observer: Option<String>,
    /// Check the omniscient store after every acknowledgement.
    pub check_safety: bool,
    /// Evaluator settings for every store in the run.
    pub checker: CheckerConfig,
}

impl SimSpec {
    pub fn new(name: &str) -> Self {
        SimSpec {
            name: name.into(),
            agents: Vec::new(),
            genesis: Vec::new(),
            policy: Policy::Fifo,
            horizon: DEFAULT_HORIZON,
            actions: Vec::new(),
            fees: FeePolicy::default(),
            observer: None,
            check_safety: true,
            checker: CheckerConfig::signing_only(),
        }
    }

    fn agent(&self, name: &str) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.name == name)
    }

    fn is_adversarial_validator(&self, name: &str) -> bool {
        self.agent(name).is_some_and(|a| a.role == Role::Validator && !a.honest)
    }

    fn is_adversarial(&self, name: &str) -> bool {
        self.agent(name).is_some_and(|a| !a.honest)
    }

    /// Conservative bound on the adversary budget over the whole scenario:
    /// adversarial genesis delegation, adversary-owned money that could be
    /// re-delegated, honest payments to the adversary, and everything an
    /// honest wallet could move when it delegates to an adversarial
    /// validator. Only scenarios with `3·bound < M` are guaranteed safe.
    pub fn budget_bound(&self) -> u64 {
        let mut funds: BTreeMap<&str, u64> = BTreeMap::new();
        let mut bound = 0u64;
        for g in &self.genesis {
            *funds.entry(&g.owner).or_insert(0) += g.value;
            if self.is_adversarial_validator(&g.validator) || self.is_adversarial(&g.owner) {
                bound += g.value;
            }
        }
        for a in &self.actions {
            if let Action::Pay { to, .. } = &a.action {
                for (r, v) in to {
                    *funds.entry(r).or_insert(0) += v;
                }
            }
        }
        for a in &self.actions {
            if let Action::Pay { from, to, validator, .. } = &a.action {
                if self.is_adversarial(from) {
                    continue;
                }
                if self.is_adversarial_validator(validator) {
                    bound += funds.get(from.as_str()).copied().unwrap_or(0);
                } else {
                    bound += to.iter().filter(|(r, _)| self.is_adversarial(r)).map(|(_, v)| v).sum::<u64>();
                }
            }
        }
        bound
    }

    pub fn total_stake(&self) -> u64 {
        self.genesis.iter().map(|g| g.value).sum()
    }

    pub fn check_budget(&self) -> Result<(), BudgetViolation> {
        let x = self.budget_bound();
        let total = self.total_stake();
        if (3 * x as u128) < total as u128 {
            Ok(())
        } else {
            Err(BudgetViolation { x, total })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("agent `{0}` declared twice")]
    DuplicateAgent(String),
    #[error("`{0}` is not a wallet")]
    NotWallet(String),
    #[error("`{0}` is not a validator")]
    NotValidator(String),
    #[error("genesis is invalid: {0}")]
    Genesis(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Delivery {
    seq: u64,
    msg: MessageId,
    to: AgentId,
    level: u32,
}

#[derive(Debug)]
enum Ready {
    Ordered(BTreeMap<u64, Delivery>),
    Random(Vec<Delivery>),
}

impl Ready {
    fn push(&mut self, d: Delivery) {
        match self {
            Ready::Ordered(m) => {
                m.insert(d.seq, d);
            }
            Ready::Random(v) => v.push(d),
        }
    }

    fn len(&self) -> usize {
        match self {
            Ready::Ordered(m) => m.len(),
            Ready::Random(v) => v.len(),
        }
    }

    fn take_where(&mut self, f: impl Fn(&Delivery) -> bool) -> Vec<Delivery> {
        match self {
            Ready::Ordered(m) => {
                let keys: Vec<u64> = m.values().filter(|d| f(d)).map(|d| d.seq).collect();
                keys.into_iter().filter_map(|k| m.remove(&k)).collect()
            }
            Ready::Random(v) => {
                let (take, keep): (Vec<_>, Vec<_>) = v.drain(..).partition(|d| f(d));
                *v = keep;
                take
            }
        }
    }
}

#[derive(Debug)]
struct ByzValidator {
    sk: SecretKey,
    last: Option<MessageId>,
    own: Vec<MessageId>,
    outbox: BTreeSet<MessageId>,
}

#[derive(Debug)]
struct Agent {
    name: String,
    role: Role,
    honest: bool,
    mode: ByzantineMode,
    active: bool,
    store: DagStore,
    checker: Checker,
    wallet: Option<Wallet>,
    validator: Option<ValidatorState>,
    byz: Option<ByzValidator>,
    /// Own transactions not yet seen confirmed.
    awaiting: BTreeSet<MessageId>,
    seen_confirmed: BTreeSet<MessageId>,
}

/// When and after how many hops an agent first saw a transaction confirmed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Observation {
    pub step: u64,
    pub hops: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IssuedTx {
    pub label: String,
    pub id: MessageId,
    pub issuer: String,
    pub honest: bool,
    pub value: u64,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Nothing left to deliver or do.
    Quiescent,
    /// Stopped at the horizon with deliveries still pending.
    Horizon,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SafetyReport {
    pub checks: u64,
    pub violations: Vec<String>,
}

impl SafetyReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

pub struct World {
    scheme: Arc<dyn KeyScheme>,
    spec: SimSpec,
    names: BTreeMap<String, AgentId>,
    agents: Vec<Agent>,
    genesis_id: MessageId,
    emitted: Vec<MessageId>,
    messages: HashMap<MessageId, Message>,
    levels: HashMap<MessageId, u32>,
    labels: BTreeMap<String, MessageId>,
    label_of: HashMap<MessageId, String>,
    ready: Ready,
    timed: BTreeMap<(u64, u64), Delivery>,
    parked: Vec<Delivery>,
    pending_withholds: BTreeMap<String, u64>,
    cut: BTreeSet<(AgentId, AgentId)>,
    step: u64,
    seq: u64,
    actions: VecDeque<TimedAction>,
    rng: ChaCha8Rng,
    log: String,
    global: DagStore,
    global_checker: Checker,
    global_confirmed: BTreeSet<MessageId>,
    safety: SafetyReport,
    budget: AdversaryBudget,
    budget_ok: bool,
    fees: FeeLedger,
    observer: Option<AgentId>,
    observations: BTreeMap<(AgentId, MessageId), Observation>,
    issued: Vec<IssuedTx>,
    outcome: Option<Outcome>,
}

impl World {
    pub fn new(spec: SimSpec) -> Result<World, SimError> {
        Self::with_scheme(spec, Arc::new(TestScheme))
    }

    pub fn with_scheme(spec: SimSpec, scheme: Arc<dyn KeyScheme>) -> Result<World, SimError> {
        let mut names = BTreeMap::new();
        for (i, a) in spec.agents.iter().enumerate() {
            if names.insert(a.name.clone(), i).is_some() {
                return Err(SimError::DuplicateAgent(a.name.clone()));
            }
        }
        let lookup = |n: &str| names.get(n).copied().ok_or_else(|| SimError::UnknownAgent(n.into()));

        let mut wallets: Vec<Option<Wallet>> = spec
            .agents
            .iter()
            .map(|a| (a.role == Role::Wallet).then(|| Wallet::new(seed_for_name(&a.name), scheme.clone())))
            .collect();
        let mut allocations = Vec::new();
        for g in &spec.genesis {
            let o = lookup(&g.owner)?;
            let v = lookup(&g.validator)?;
            if spec.agents[v].role != Role::Validator {
                return Err(SimError::NotValidator(g.validator.clone()));
            }
            let w = wallets[o].as_mut().ok_or_else(|| SimError::NotWallet(g.owner.clone()))?;
            allocations.push(Allocation {
                output: crate::message::Output { value: g.value, owner: w.fresh_key() },
                validator: key_for(scheme.as_ref(), &g.validator).0,
            });
        }
        let genesis = Genesis { allocations };
        let genesis_id = Message::Genesis(genesis.clone()).id();
        let base = DagStore::with_scheme(genesis.clone(), scheme.clone())
            .map_err(|e| SimError::Genesis(e.to_string()))?;

        let mut agents = Vec::new();
        for (i, a) in spec.agents.iter().enumerate() {
            let mut wallet = wallets[i].take();
            if let Some(w) = wallet.as_mut() {
                w.observe_genesis(genesis_id, &genesis);
            }
            let sk = key_for(scheme.as_ref(), &a.name).1;
            let (validator, byz) = match (a.role, a.honest) {
                (Role::Validator, true) => (Some(ValidatorState::new(sk, scheme.clone())), None),
                (Role::Validator, false) => (
                    None,
                    Some(ByzValidator { sk, last: None, own: Vec::new(), outbox: BTreeSet::new() }),
                ),
                _ => (None, None),
            };
            agents.push(Agent {
                name: a.name.clone(),
                role: a.role,
                honest: a.honest,
                mode: a.mode,
                active: a.joins_at.is_none(),
                store: base.clone(),
                checker: Checker::new(spec.checker),
                wallet,
                validator,
                byz,
                awaiting: BTreeSet::new(),
                seen_confirmed: BTreeSet::new(),
            });
        }

        let adversary: BTreeSet<PublicKey> = spec
            .agents
            .iter()
            .filter(|a| a.role == Role::Validator && !a.honest)
            .map(|a| key_for(scheme.as_ref(), &a.name).0)
            .collect();
        let budget = AdversaryBudget::new(adversary, &genesis);
        let budget_ok = budget.check().is_ok();

        let mut actions: Vec<TimedAction> = spec.actions.clone();
        for a in &spec.agents {
            if let Some(at) = a.joins_at {
                actions.push(TimedAction { at, action: Action::Join(a.name.clone()) });
            }
            if let Some(at) = a.leaves_at {
                actions.push(TimedAction { at, action: Action::Leave(a.name.clone()) });
            }
        }
        actions.sort_by_key(|a| a.at);

        let observer = match &spec.observer {
            Some(n) => Some(lookup(n)?),
            None => spec.agents.iter().position(|a| a.role == Role::Observer),
        };
        let (ready, seed) = match &spec.policy {
            Policy::SeededRandom(s) => (Ready::Random(Vec::new()), *s),
            _ => (Ready::Ordered(BTreeMap::new()), seed_for_name(&spec.name)),
        };

        Ok(World {
            scheme,
            names,
            agents,
            genesis_id,
            emitted: Vec::new(),
            messages: HashMap::new(),
            levels: HashMap::new(),
            labels: BTreeMap::new(),
            label_of: HashMap::new(),
            ready,
            timed: BTreeMap::new(),
            parked: Vec::new(),
            pending_withholds: BTreeMap::new(),
            cut: BTreeSet::new(),
            step: 0,
            seq: 0,
            actions: actions.into(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            log: String::new(),
            global: base,
            global_checker: Checker::new(spec.checker),
            global_confirmed: BTreeSet::new(),
            safety: SafetyReport::default(),
            budget,
            budget_ok,
            fees: FeeLedger::default(),
            observer,
            observations: BTreeMap::new(),
            issued: Vec::new(),
            outcome: None,
            spec,
        })
    }

    // -----------------------------------------------------------------
    // accessors

    pub fn spec(&self) -> &SimSpec {
        &self.spec
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn log(&self) -> &str {
        &self.log
    }

    pub fn global_store(&self) -> &DagStore {
        &self.global
    }

    pub fn global_checker(&mut self) -> (&DagStore, &mut Checker) {
        (&self.global, &mut self.global_checker)
    }

    pub fn confirmed(&self) -> &BTreeSet<MessageId> {
        &self.global_confirmed
    }

    pub fn safety(&self) -> &SafetyReport {
        &self.safety
    }

    pub fn budget(&self) -> &AdversaryBudget {
        &self.budget
    }

    /// Whether `3x < M` held after every budget event.
    pub fn budget_respected(&self) -> bool {
        self.budget_ok
    }

    pub fn fees(&self) -> &FeeLedger {
        &self.fees
    }

    pub fn issued(&self) -> &[IssuedTx] {
        &self.issued
    }

    pub fn labels(&self) -> &BTreeMap<String, MessageId> {
        &self.labels
    }

    pub fn label_of(&self, id: &MessageId) -> Option<&str> {
        self.label_of.get(id).map(String::as_str)
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn genesis_id(&self) -> MessageId {
        self.genesis_id
    }

    pub fn agent_id(&self, name: &str) -> Option<AgentId> {
        self.names.get(name).copied()
    }

    pub fn agent_names(&self) -> impl Iterator<Item = &str> {
        self.agents.iter().map(|a| a.name.as_str())
    }

    pub fn agent_store(&self, a: AgentId) -> &DagStore {
        &self.agents[a].store
    }

    pub fn agent_role(&self, a: AgentId) -> Role {
        self.agents[a].role
    }

    pub fn agent_is_honest(&self, a: AgentId) -> bool {
        self.agents[a].honest
    }

    pub fn agent_is_active(&self, a: AgentId) -> bool {
        self.agents[a].active
    }

    pub fn observation(&self, agent: AgentId, tx: &MessageId) -> Option<Observation> {
        self.observations.get(&(agent, *tx)).copied()
    }

    pub fn observer(&self) -> Option<AgentId> {
        self.observer
    }

    /// Deliveries still waiting (ready, delayed, or held/cut).
    pub fn undelivered(&self) -> usize {
        self.ready.len() + self.timed.len() + self.parked.len()
    }

    /// All messages sent so far, in sending order.
    pub fn sent(&self) -> impl Iterator<Item = &Message> {
        self.emitted.iter().map(|id| &self.messages[id])
    }

    pub fn message(&self, id: &MessageId) -> Option<&Message> {
        self.messages.get(id)
    }

    fn event(&mut self, kind: &str, id: Option<MessageId>, actor: &str, detail: &str) {
        let id = id.map(|i| i.short()).unwrap_or_else(|| "-".into());
        let _ = writeln!(self.log, "step={} kind={} id={} actor={} {}", self.step, kind, id, actor, detail);
    }

    // -----------------------------------------------------------------
    // running

    /// Runs until quiescence or the horizon.
    pub fn run(&mut self) -> Outcome {
        loop {
            if let Some(o) = self.advance() {
                return o;
            }
        }
    }

    /// Performs one delivery (after any actions due). Returns the outcome
    /// once the run is over.
    pub fn advance(&mut self) -> Option<Outcome> {
        if let Some(o) = self.outcome {
            return Some(o);
        }
        loop {
            self.run_due_actions();
            self.release_timed();
            if self.step >= self.spec.horizon {
                let o = if self.ready.len() + self.timed.len() > 0 || !self.actions.is_empty() {
                    Outcome::Horizon
                } else {
                    Outcome::Quiescent
                };
                if o == Outcome::Horizon {
                    self.event("deadlock", None, "-", &format!("pending={}", self.undelivered()));
                }
                self.outcome = Some(o);
                return Some(o);
            }
            if let Some(d) = self.pick() {
                self.deliver(d);
                self.step += 1;
                return None;
            }
            let next_action = self.actions.front().map(|a| a.at);
            let next_timed = self.timed.keys().next().map(|k| k.0);
            match next_action.into_iter().chain(next_timed).min() {
                Some(n) => self.step = n.max(self.step + 1).min(self.spec.horizon),
                None => {
                    self.outcome = Some(Outcome::Quiescent);
                    return self.outcome;
                }
            }
        }
    }

    /// Steps until `agent` sees `tx` confirmed or `max_steps` pass.
    pub fn await_confirmation(&mut self, agent: AgentId, tx: &MessageId, max_steps: u64) -> Option<Observation> {
        let until = self.step + max_steps;
        loop {
            if let Some(o) = self.observation(agent, tx) {
                return Some(o);
            }
            if self.step >= until || self.advance().is_some() {
                return self.observation(agent, tx);
            }
        }
    }

    fn run_due_actions(&mut self) {
        while self.actions.front().is_some_and(|a| a.at <= self.step) {
            let a = self.actions.pop_front().expect("checked");
            self.perform(a.action);
        }
    }

    fn release_timed(&mut self) {
        while let Some((&k, _)) = self.timed.iter().next() {
            if k.0 > self.step {
                break;
            }
            let d = self.timed.remove(&k).expect("present");
            self.ready.push(d);
        }
    }

    fn pick(&mut self) -> Option<Delivery> {
        match &mut self.ready {
            Ready::Ordered(m) => m.pop_first().map(|(_, d)| d),
            Ready::Random(v) => {
                if v.is_empty() {
                    None
                } else {
                    let i = self.rng.gen_range(0..v.len());
                    Some(v.swap_remove(i))
                }
            }
        }
    }

    fn delay_for(&self, from: Option<AgentId>, to: AgentId) -> u64 {
        let Policy::ScriptedDelay(rules) = &self.spec.policy else { return 0 };
        let from = from.map(|f| self.agents[f].name.as_str());
        let to = self.agents[to].name.as_str();
        rules
            .iter()
            .find(|r| {
                r.from.as_deref().is_none_or(|f| Some(f) == from) && r.to.as_deref().is_none_or(|t| t == to)
            })
            .map_or(0, |r| r.delay)
    }

    fn enqueue(&mut self, msg: MessageId, from: Option<AgentId>, to: AgentId, level: u32, hold: Option<Option<u64>>) {
        self.seq += 1;
        let d = Delivery { seq: self.seq, msg, to, level };
        if from.is_some_and(|f| self.cut.contains(&(f, to))) {
            self.parked.push(d);
            return;
        }
        let withheld = self.label_of.get(&msg).and_then(|l| self.pending_withholds.get(l)).copied();
        let mut release = self.step + self.delay_for(from, to);
        if let Some(u) = withheld {
            release = release.max(u);
        }
        match hold {
            Some(None) => self.parked.push(d),
            Some(Some(after)) => {
                self.timed.insert((release.max(self.step + after), d.seq), d);
            }
            None if release > self.step => {
                self.timed.insert((release, d.seq), d);
            }
            None => self.ready.push(d),
        }
    }

    /// Sends `msg` from `from` (or from the adversary when `None`). With an
    /// audience, everyone else's copy is held: released `release_after`
    /// steps later, or only on request when that is `None`.
    fn broadcast(
        &mut self,
        from: Option<AgentId>,
        label: Option<&str>,
        msg: Message,
        level: u32,
        audience: Option<(&BTreeSet<AgentId>, Option<u64>)>,
    ) -> MessageId {
        let id = msg.id();
        if self.messages.contains_key(&id) {
            return id;
        }
        if let Some(l) = label {
            self.labels.insert(l.to_string(), id);
            self.label_of.insert(id, l.to_string());
        }
        self.messages.insert(id, msg.clone());
        self.emitted.push(id);
        self.levels.insert(id, level);
        self.observe_globally(&msg, id);
        for to in 0..self.agents.len() {
            if Some(to) == from || !self.agents[to].active {
                continue;
            }
            let hold = audience.and_then(|(aud, after)| (!aud.contains(&to)).then_some(after));
            self.enqueue(id, from, to, level, hold);
        }
        id
    }

    fn deliver(&mut self, d: Delivery) {
        if !self.agents[d.to].active {
            return;
        }
        let msg = self.messages[&d.msg].clone();
        let outcome = self.agents[d.to].store.ingest(msg);
        let name = self.agents[d.to].name.clone();
        let mut admitted = Vec::new();
        let detail = match &outcome {
            Ingest::Admitted { drained, dropped } => {
                admitted.push(d.msg);
                admitted.extend(drained.iter().copied());
                let mut s = format!("admitted drained={}", drained.len());
                if !dropped.is_empty() {
                    let _ = write!(s, " dropped={}", dropped.len());
                }
                s
            }
            Ingest::Buffered { missing } => format!("buffered missing={}", missing.len()),
            Ingest::Rejected(r) => format!("rejected reason=\"{r}\""),
        };
        self.event("deliver", Some(d.msg), &name, &detail);
        for id in &admitted {
            self.react(d.to, *id);
        }
        self.activate(d.to, d.level + 1);
        if !admitted.is_empty() {
            self.track(d.to, d.level);
        }
    }

    /// An agent processes a message newly admitted to its store.
    fn react(&mut self, a: AgentId, id: MessageId) {
        let msg = self.agents[a].store.get(&id).expect("admitted").clone();
        let agent = &mut self.agents[a];
        match &msg {
            Message::Transaction(tx) => {
                if let Some(w) = agent.wallet.as_mut() {
                    w.observe_tx(id, tx);
                }
                if let Some(v) = agent.validator.as_mut() {
                    let d = v.on_transaction(id, tx);
                    let name = agent.name.clone();
                    match d {
                        SignDecision::Sign => self.event("sign", Some(id), &name, ""),
                        SignDecision::RefuseConflict(r) => {
                            self.event("refuse", Some(id), &name, &format!("rival={}", r.short()))
                        }
                    }
                } else if let Some(b) = agent.byz.as_mut() {
                    if agent.mode != ByzantineMode::Silent {
                        b.outbox.insert(id);
                    }
                }
            }
            Message::Checkpoint(cp) if agent.validator.is_some() => {
                let ok = checkpoint::checkpoint_is_accurate(&agent.store, &mut agent.checker, cp);
                let name = agent.name.clone();
                if ok {
                    let frontier = agent.store.ids_to_bits(&cp.frontier).unwrap_or_default();
                    let past = {
                        let idx: Vec<_> = frontier.iter().collect();
                        agent.store.past_bits(&idx)
                    };
                    let summarized: BTreeSet<MessageId> = cp.summary.iter().map(|e| e.output_ref.tx).collect();
                    let v = agent.validator.as_mut().expect("checked");
                    v.endorse(id);
                    let relist: Vec<MessageId> = v
                        .signed()
                        .iter()
                        .copied()
                        .filter(|t| {
                            let inside = agent.store.index_of(t).is_some_and(|i| past.contains(i));
                            !inside && !summarized.contains(t)
                        })
                        .collect();
                    for t in relist {
                        v.endorse(t);
                    }
                    self.event("endorse", Some(id), &name, "");
                } else {
                    self.event("refuse", Some(id), &name, "inaccurate checkpoint");
                }
            }
            _ => {}
        }
    }

    /// End of an activation: validators acknowledge what they signed.
    fn activate(&mut self, a: AgentId, level: u32) {
        let agent = &mut self.agents[a];
        let ack = if let Some(v) = agent.validator.as_mut() {
            v.emit_ack()
        } else if let Some(b) = agent.byz.as_mut() {
            if b.outbox.is_empty() {
                None
            } else {
                let prev = match agent.mode {
                    ByzantineMode::Equivocate => {
                        let k = self.rng.gen_range(0..=b.own.len());
                        (k < b.own.len()).then(|| b.own[k])
                    }
                    _ => b.last,
                };
                let signed = std::mem::take(&mut b.outbox);
                Some(Ack::new_signed(self.scheme.as_ref(), &b.sk, prev, signed))
            }
        } else {
            None
        };
        if let Some(ack) = ack {
            self.emit_ack(a, None, ack, level, None);
        }
    }

    fn emit_ack(
        &mut self,
        a: AgentId,
        label: Option<&str>,
        ack: Ack,
        level: u32,
        audience: Option<(&BTreeSet<AgentId>, Option<u64>)>,
    ) -> MessageId {
        let msg = Message::Ack(ack);
        let id = msg.id();
        if let Some(b) = self.agents[a].byz.as_mut() {
            b.last = Some(id);
            b.own.push(id);
        }
        let n = match &msg {
            Message::Ack(x) => x.signed.len(),
            _ => 0,
        };
        self.agents[a].store.ingest(msg.clone());
        let name = self.agents[a].name.clone();
        self.event("ack", Some(id), &name, &format!("signs={n}"));
        self.broadcast(Some(a), label, msg, level, audience);
        self.track(a, level);
        id
    }

    /// Confirmation bookkeeping for the observer and for issuing wallets.
    fn track(&mut self, a: AgentId, level: u32) {
        let is_observer = self.observer == Some(a);
        if !is_observer && self.agents[a].awaiting.is_empty() {
            return;
        }
        let agent = &mut self.agents[a];
        let mut newly = Vec::new();
        if is_observer {
            let cs = agent.checker.confirmed_set(&agent.store);
            for id in cs.confirmed {
                if id != self.genesis_id && agent.seen_confirmed.insert(id) {
                    newly.push(id);
                }
            }
        }
        let awaiting: Vec<MessageId> = agent.awaiting.iter().copied().collect();
        for id in awaiting {
            if agent.seen_confirmed.contains(&id) {
                agent.awaiting.remove(&id);
                continue;
            }
            if agent.checker.status(&agent.store, &id) == Ok(TxStatus::Confirmed) {
                agent.awaiting.remove(&id);
                agent.seen_confirmed.insert(id);
                newly.push(id);
            }
        }
        let name = self.agents[a].name.clone();
        for id in newly {
            let tx_level = self.levels.get(&id).copied().unwrap_or(1);
            let hops = level.saturating_sub(tx_level) + 1;
            self.observations.insert((a, id), Observation { step: self.step, hops });
            self.event("confirm", Some(id), &name, &format!("hops={hops}"));
        }
    }

    // -----------------------------------------------------------------
    // omniscient view

    fn stake_flow(&self, tx: &crate::message::Transaction) -> TxStakeFlow {
        let adversarial_inputs = tx
            .inputs
            .iter()
            .filter_map(|r| self.global.output(r))
            .filter(|o| self.budget.is_adversarial(&self.global.key(o.validator)))
            .map(|o| o.output.value)
            .sum();
        TxStakeFlow {
            value: tx.value(),
            adversarial_inputs,
            delegated_to_adversary: self.budget.is_adversarial(&tx.validator),
        }
    }

    fn observe_globally(&mut self, msg: &Message, id: MessageId) {
        let r = self.global.ingest(msg.clone());
        if let Ingest::Rejected(reason) = &r {
            self.event("invalid", Some(id), "-", &format!("reason=\"{reason}\""));
            return;
        }
        match msg {
            Message::Transaction(tx) => {
                let flow = self.stake_flow(tx);
                self.budget.on_issue(id, flow);
                self.note_budget();
            }
            Message::Ack(_) if self.spec.check_safety => self.check_safety(),
            _ => {}
        }
    }

    fn note_budget(&mut self) {
        if self.budget.check().is_err() && self.budget_ok {
            self.budget_ok = false;
            let x = self.budget.x();
            self.event("budget", None, "-", &format!("exceeded x={x} total={}", self.budget.total()));
        }
    }

    fn check_safety(&mut self) {
        self.safety.checks += 1;
        let cs = self.global_checker.confirmed_set(&self.global);
        for lost in self.global_confirmed.difference(&cs.confirmed) {
            self.safety.violations.push(format!("step {}: confirmation of {} lost", self.step, lost.short()));
        }
        let newly: Vec<MessageId> = cs.confirmed.difference(&self.global_confirmed).copied().collect();
        // Conflicts among confirmed transactions always surface as two
        // confirmed spenders of one output, since confirmation is closed
        // under dependencies.
        for id in &newly {
            if *id == self.global.root_id() {
                continue;
            }
            let i = self.global.index_of(id).expect("confirmed ids are stored");
            for &slot in self.global.tx_inputs(i) {
                for &w in &self.global.outputs()[slot].spenders {
                    let wid = self.global.entry(w).id;
                    if w != i && cs.confirmed.contains(&wid) {
                        self.safety.violations.push(format!(
                            "step {}: conflicting transactions {} and {} both confirmed",
                            self.step,
                            id.short(),
                            wid.short()
                        ));
                    }
                }
            }
            for p in self.global.tx_parents(i) {
                if !cs.confirmed.contains(&self.global.entry(p).id) {
                    self.safety.violations.push(format!(
                        "step {}: {} confirmed before its dependency {}",
                        self.step,
                        id.short(),
                        self.global.entry(p).id.short()
                    ));
                }
            }
        }
        self.global_confirmed = cs.confirmed;
        for id in newly {
            if id == self.global.root_id() {
                continue;
            }
            self.on_global_confirmation(id);
        }
    }

    fn on_global_confirmation(&mut self, id: MessageId) {
        let Some(Message::Transaction(tx)) = self.global.get(&id).cloned() else { return };
        let flow = self.stake_flow(&tx);
        self.budget.on_confirm(id, flow);
        self.note_budget();
        let cert = match self.global_checker.find_certificate(&self.global, &id) {
            Ok(CertificateSearch::Found(c)) => c,
            _ => return,
        };
        let acks: Vec<MessageId> = cert.acks.iter().copied().collect();
        let Ok(stakes) = self.global_checker.delegated_stake_excluding(&self.global, &acks, &id) else {
            return;
        };
        let signers: BTreeSet<PublicKey> = cert.stakes.keys().copied().collect();
        let fee = self.spec.fees.fee_of(&tx);
        let total = self.global.total_stake();
        let policy = self.spec.fees;
        let rec = self.fees.accrue(&policy, id, fee, &stakes, &signers, total).clone();
        self.event("fee", Some(id), "-", &format!("fee={} distributed={}", rec.fee, rec.distributed));
    }

    /// Omniscient-store statuses of every transaction sent.
    pub fn statuses(&mut self) -> BTreeMap<MessageId, TxStatus> {
        let cs = self.global_checker.confirmed_set(&self.global);
        self.global
            .transactions()
            .map(|t| {
                let id = self.global.entry(t).id;
                (id, cs.status(&id))
            })
            .collect()
    }

    /// Honest transactions some active honest agent has not seen confirmed.
    pub fn unconfirmed_honest(&mut self) -> Vec<(String, MessageId)> {
        let honest: Vec<MessageId> = self.issued.iter().filter(|t| t.honest).map(|t| t.id).collect();
        let mut missing = Vec::new();
        for agent in self.agents.iter_mut().filter(|a| a.honest && a.active) {
            let cs = agent.checker.confirmed_set(&agent.store);
            for id in &honest {
                if !cs.confirmed.contains(id) {
                    missing.push((agent.name.clone(), *id));
                }
            }
        }
        missing
    }

    // -----------------------------------------------------------------
    // actions

    fn audience(&self, names: &[String]) -> BTreeSet<AgentId> {
        names.iter().filter_map(|n| self.agent_id(n)).collect()
    }

    fn resolve(&self, label: &str) -> Option<MessageId> {
        self.labels.get(label).copied()
    }

    fn perform(&mut self, action: Action) {
        match action {
            Action::Pay { label, from, to, validator } => self.pay(&label, &from, &to, &validator),
            Action::Join(name) => {
                let Some(a) = self.agent_id(&name) else { return };
                if self.agents[a].active {
                    return;
                }
                self.agents[a].active = true;
                self.event("join", None, &name, &format!("replay={}", self.emitted.len()));
                let history = self.emitted.clone();
                for id in history {
                    let level = self.levels[&id];
                    self.enqueue(id, None, a, level, None);
                }
            }
            Action::Leave(name) => {
                let Some(a) = self.agent_id(&name) else { return };
                self.agents[a].active = false;
                self.ready.take_where(|d| d.to == a);
                self.timed.retain(|_, d| d.to != a);
                self.parked.retain(|d| d.to != a);
                self.event("leave", None, &name, "");
            }
            Action::Cut { from, to } => {
                if let (Some(f), Some(t)) = (self.agent_id(&from), self.agent_id(&to)) {
                    self.cut.insert((f, t));
                    self.event("cut", None, &from, &format!("to={to}"));
                }
            }
            Action::Checkpoint { label, creator } => self.make_checkpoint(&label, &creator),
            Action::Adversary(a) => self.adversary(a),
        }
    }

    fn pay(&mut self, label: &str, from: &str, to: &[(String, u64)], validator: &str) {
        let (Some(f), Some(v)) = (self.agent_id(from), self.agent_id(validator)) else {
            self.event("skip", None, from, &format!("label={label} unknown agent"));
            return;
        };
        let vkey = key_for(self.scheme.as_ref(), &self.agents[v].name).0;
        let mut payments = Vec::new();
        for (r, amount) in to {
            let Some(ri) = self.agent_id(r) else { continue };
            let Some(w) = self.agents[ri].wallet.as_mut() else { continue };
            payments.push((w.fresh_key(), *amount));
        }
        let Some(w) = self.agents[f].wallet.as_mut() else {
            self.event("skip", None, from, &format!("label={label} not a wallet"));
            return;
        };
        let tx = match w.pay(&payments, vkey) {
            Ok(tx) => tx,
            Err(e) => {
                self.event("skip", None, from, &format!("label={label} reason=\"{e}\""));
                return;
            }
        };
        let honest = self.agents[f].honest;
        self.issue(f, label, tx, honest, None);
    }

    fn issue(
        &mut self,
        f: AgentId,
        label: &str,
        tx: crate::message::Transaction,
        honest: bool,
        audience: Option<(&BTreeSet<AgentId>, Option<u64>)>,
    ) -> MessageId {
        let msg = Message::Transaction(tx.clone());
        let id = msg.id();
        let agent = &mut self.agents[f];
        agent.store.ingest(msg.clone());
        if let Some(w) = agent.wallet.as_mut() {
            w.observe_tx(id, &tx);
        }
        if honest {
            agent.awaiting.insert(id);
        }
        let name = agent.name.clone();
        self.issued.push(IssuedTx {
            label: label.to_string(),
            id,
            issuer: name.clone(),
            honest,
            value: tx.value(),
            step: self.step,
        });
        self.event("issue", Some(id), &name, &format!("label={label} value={}", tx.value()));
        self.broadcast(Some(f), Some(label), msg, 1, audience);
        id
    }

    fn make_checkpoint(&mut self, label: &str, creator: &str) {
        let Some(c) = self.agent_id(creator) else { return };
        let agent = &mut self.agents[c];
        let referenced: BTreeSet<usize> = agent.store.entries().iter().flat_map(|e| e.refs.iter().copied()).collect();
        let frontier: BTreeSet<MessageId> = (1..agent.store.len())
            .filter(|i| !referenced.contains(i))
            .map(|i| agent.store.entry(i).id)
            .collect();
        if frontier.is_empty() {
            self.event("skip", None, creator, &format!("label={label} empty frontier"));
            return;
        }
        let sk = key_for(self.scheme.as_ref(), creator).1;
        match checkpoint::make_checkpoint(&agent.store, &mut agent.checker, frontier, &sk) {
            Ok(cp) => {
                let msg = Message::Checkpoint(cp);
                agent.store.ingest(msg.clone());
                let id = msg.id();
                self.event("checkpoint", Some(id), creator, &format!("label={label}"));
                self.broadcast(Some(c), Some(label), msg, 1, None);
                // the creator acts on its own checkpoint like any recipient
                self.react(c, id);
                self.activate(c, 2);
            }
            Err(e) => self.event("skip", None, creator, &format!("label={label} reason=\"{e}\"")),
        }
    }

    fn adversary(&mut self, action: AdversaryAction) {
        match action {
            AdversaryAction::IssueDoubleSpend { labels, wallet, first, second, first_to, second_to, release_after } => {
                let Some(w) = self.agent_id(&wallet) else { return };
                let needed = first.amount.max(second.amount);
                let recipient_key = |this: &mut Self, name: &str| {
                    this.agent_id(name).and_then(|r| this.agents[r].wallet.as_mut().map(|w| w.fresh_key()))
                };
                let (Some(k1), Some(k2)) = (recipient_key(self, &first.to), recipient_key(self, &second.to)) else {
                    self.event("skip", None, &wallet, "double spend: unknown recipient");
                    return;
                };
                let v1 = key_for(self.scheme.as_ref(), &first.validator).0;
                let v2 = key_for(self.scheme.as_ref(), &second.validator).0;
                let Some(wal) = self.agents[w].wallet.as_mut() else { return };
                let mut outs: Vec<(OutputRef, u64)> = wal.spendable().map(|(r, o)| (*r, o.value)).collect();
                outs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                let mut inputs = Vec::new();
                let mut sum = 0;
                for (r, v) in outs {
                    if sum >= needed {
                        break;
                    }
                    inputs.push(r);
                    sum += v;
                }
                let built = wal
                    .build_from(&inputs, &[(k1, first.amount)], v1)
                    .and_then(|a| wal.build_from(&inputs, &[(k2, second.amount)], v2).map(|b| (a, b)));
                let (t1, t2) = match built {
                    Ok(p) => p,
                    Err(e) => {
                        self.event("skip", None, &wallet, &format!("double spend: {e}"));
                        return;
                    }
                };
                for r in &inputs {
                    wal.forget(r);
                }
                let (a1, a2) = (self.audience(&first_to), self.audience(&second_to));
                self.issue(w, &labels.0, t1, false, Some((&a1, release_after)));
                self.issue(w, &labels.1, t2, false, Some((&a2, release_after)));
            }
            AdversaryAction::ForkAckChain { label, validator, prev, signs, to, release_after } => {
                let Some(v) = self.agent_id(&validator) else { return };
                let prev = match prev {
                    None => None,
                    Some(p) => match self.resolve(&p) {
                        Some(id) => Some(id),
                        None => {
                            self.event("skip", None, &validator, &format!("label={label} unknown prev"));
                            return;
                        }
                    },
                };
                self.scripted_ack(v, &label, prev, &signs, to.as_deref(), release_after);
            }
            AdversaryAction::SignSelective { label, validator, signs, to, release_after } => {
                let Some(v) = self.agent_id(&validator) else { return };
                let prev = self.agents[v].byz.as_ref().and_then(|b| b.last);
                self.scripted_ack(v, &label, prev, &signs, Some(&to), release_after);
            }
            AdversaryAction::Withhold { message, until } => {
                match self.resolve(&message) {
                    Some(id) => {
                        let held = self.ready.take_where(|d| d.msg == id);
                        for d in held {
                            self.timed.insert((until, d.seq), d);
                        }
                    }
                    None => {
                        self.pending_withholds.insert(message.clone(), until);
                    }
                }
                self.event("withhold", self.resolve(&message), "adversary", &format!("until={until}"));
            }
            AdversaryAction::ReleaseTo { message, to } => {
                let Some(id) = self.resolve(&message) else { return };
                let aud = self.audience(&to);
                let mut released: Vec<Delivery> = Vec::new();
                let (take, keep): (Vec<_>, Vec<_>) =
                    self.parked.drain(..).partition(|d| d.msg == id && aud.contains(&d.to));
                self.parked = keep;
                released.extend(take);
                let keys: Vec<(u64, u64)> = self
                    .timed
                    .iter()
                    .filter(|(_, d)| d.msg == id && aud.contains(&d.to))
                    .map(|(k, _)| *k)
                    .collect();
                for k in keys {
                    released.extend(self.timed.remove(&k));
                }
                released.sort();
                let n = released.len();
                for d in released {
                    self.ready.push(d);
                }
                self.event("release", Some(id), "adversary", &format!("deliveries={n}"));
            }
        }
    }

    fn scripted_ack(
        &mut self,
        v: AgentId,
        label: &str,
        prev: Option<MessageId>,
        signs: &[String],
        to: Option<&[String]>,
        release_after: Option<u64>,
    ) {
        let name = self.agents[v].name.clone();
        let Some(sk) = self.agents[v].byz.as_ref().map(|b| b.sk.clone()) else {
            self.event("skip", None, &name, &format!("label={label} validator is honest"));
            return;
        };
        let mut signed = BTreeSet::new();
        for s in signs {
            match self.resolve(s) {
                Some(id) => {
                    signed.insert(id);
                }
                None => {
                    self.event("skip", None, &name, &format!("label={label} unknown `{s}`"));
                    return;
                }
            }
        }
        let ack = Ack::new_signed(self.scheme.as_ref(), &sk, prev, signed);
        let aud = to.map(|t| self.audience(t));
        self.emit_ack(v, Some(label), ack, 2, aud.as_ref().map(|a| (a, release_after)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn honest_spec(policy: Policy) -> SimSpec {
        let mut s = SimSpec::new("unit");
        for v in ["v1", "v2", "v3", "v4"] {
            s.agents.push(AgentSpec::new(v, Role::Validator));
        }
        for w in ["alice", "bob"] {
            s.agents.push(AgentSpec::new(w, Role::Wallet));
        }
        s.agents.push(AgentSpec::new("obs", Role::Observer));
        for (i, v) in ["v1", "v2", "v3", "v4"].iter().enumerate() {
            s.genesis.push(GenesisSpec { owner: if i % 2 == 0 { "alice" } else { "bob" }.into(), value: 5, validator: v.to_string() });
        }
        s.actions.push(TimedAction {
            at: 0,
            action: Action::Pay { label: "t1".into(), from: "alice".into(), to: vec![("bob".into(), 3)], validator: "v2".into() },
        });
        s.policy = policy;
        s
    }

    #[test]
    fn single_payment_confirms_in_two_hops() {
        let mut w = World::new(honest_spec(Policy::Fifo)).unwrap();
        assert_eq!(w.run(), Outcome::Quiescent);
        let t1 = w.labels()["t1"];
        let obs = w.agent_id("obs").unwrap();
        assert_eq!(w.observation(obs, &t1).unwrap().hops, 2);
        let alice = w.agent_id("alice").unwrap();
        assert_eq!(w.observation(alice, &t1).unwrap().hops, 2);
        assert!(w.safety().holds());
        assert!(w.unconfirmed_honest().is_empty());
        assert_eq!(w.undelivered(), 0);
    }

    #[test]
    fn runs_are_reproducible() {
        let run = || {
            let mut w = World::new(honest_spec(Policy::SeededRandom(9))).unwrap();
            w.run();
            w.log().to_string()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn cut_link_prevents_termination() {
        let mut spec = honest_spec(Policy::Fifo);
        for v in ["v1", "v2", "v3", "v4"] {
            spec.actions.insert(0, TimedAction { at: 0, action: Action::Cut { from: "alice".into(), to: v.into() } });
        }
        let mut w = World::new(spec).unwrap();
        w.run();
        assert!(!w.unconfirmed_honest().is_empty());
        assert!(w.undelivered() > 0);
    }
}
