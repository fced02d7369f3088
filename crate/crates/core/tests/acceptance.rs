//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. A numeric argument runs only that criterion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use abc_core::builder::DagBuilder;
use abc_core::checkpoint::{bootstrap, confirm_checkpoint, is_settled, pruning_mismatches, summarize};
use abc_core::confirm::{stake_bounds, BoundVerdict};
use abc_core::confirm::CertificateSearch;
use abc_core::econ::{FeeLedger, FeePolicy, Ratio};
use abc_core::netsim::{Outcome, SimSpec, World};
use abc_core::scenario::{random_dag, random_sim, run_scenario, DagParams, RunOptions, Scenario, SimParams, FIGURES};
use abc_core::{Checker, DagStore, Message, MessageId, OutputRef, PublicKey, TxStatus};

type Res = Result<String, String>;
type Criterion = (u32, &'static str, fn(&mut Shared) -> Res);

const FIGURE_BUDGET: Duration = Duration::from_secs(1);
const SAFETY_SIMS: u64 = 1000;
const SAFETY_BUDGET: Duration = Duration::from_secs(60);
const TERMINATION_SIMS: u64 = 200;
const ORACLE_DAGS: u64 = 300;
const PARTITIONS: [usize; 3] = [2, 4, 8];
const MAX_PERMUTED: usize = 8;
const CHECKPOINT_PAIRS: usize = 200;
const DETERMINISM_SIMS: u64 = 100;

fn main() -> ExitCode {
    let only: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let criteria: [Criterion; 9] = [
        (1, "figure replay", figures),
        (2, "safety under adversarial schedules", safety),
        (3, "honest termination and two-hop finality", termination),
        (4, "certificate search matches exhaustive oracle", oracle),
        (5, "partitioned stake bounds", bounds),
        (6, "delivery-order independence", permutations),
        (7, "fee accounting", fees),
        (8, "checkpoint pruning equivalence", pruning),
        (9, "deterministic replay", determinism),
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t = Instant::now();
        let r = f(&mut shared);
        let ms = t.elapsed().as_millis();
        match r {
            Ok(detail) => println!("PASS {n} {name}: {detail} [{ms} ms]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n} {name}: {detail} [{ms} ms]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------------
// the randomized safety suite, shared by criteria 2, 5 and 7

#[derive(Default)]
struct Shared {
    suite: Option<Vec<SuiteRun>>,
    suite_time: Duration,
}

struct SuiteRun {
    seed: u64,
    world: World,
}

/// α = 1 and a fee equal to the total stake, so every share is exact and
/// rounding cannot hide a missing signer.
fn suite_spec(seed: u64) -> SimSpec {
    let mut spec = random_sim(seed, &SimParams::default());
    spec.fees = FeePolicy { base: spec.total_stake(), ..FeePolicy::default() };
    spec
}

fn suite(shared: &mut Shared) -> &mut Vec<SuiteRun> {
    if shared.suite.is_none() {
        let t = Instant::now();
        let runs = (0..SAFETY_SIMS)
            .map(|seed| {
                let mut world = World::new(suite_spec(seed)).expect("generated scenarios are valid");
                world.run();
                SuiteRun { seed, world }
            })
            .collect();
        shared.suite_time = t.elapsed();
        shared.suite = Some(runs);
    }
    shared.suite.as_mut().expect("just filled")
}

fn conflicting_pair(s: &DagStore, confirmed: &BTreeSet<MessageId>) -> Option<(MessageId, MessageId)> {
    for t in s.transactions() {
        let id = s.entry(t).id;
        if !confirmed.contains(&id) {
            continue;
        }
        for &slot in s.tx_inputs(t) {
            for &w in &s.outputs()[slot].spenders {
                let wid = s.entry(w).id;
                if w != t && confirmed.contains(&wid) {
                    return Some((id, wid));
                }
            }
        }
    }
    None
}

// ---------------------------------------------------------------------
// 1

fn figures(_: &mut Shared) -> Res {
    let mut times = Vec::new();
    for (name, text) in FIGURES {
        let sc = Scenario::parse(text).map_err(|e| format!("{name}: {e}"))?;
        let t = Instant::now();
        let out = run_scenario(&sc, &RunOptions::default()).map_err(|e| format!("{name}: {e}"))?;
        let took = t.elapsed();
        if out.report.exit_code() != 0 {
            return Err(format!("{name}: expectations missed: {:?}", out.report.expectations.iter().filter(|e| !e.passed).collect::<Vec<_>>()));
        }
        if took >= FIGURE_BUDGET {
            return Err(format!("{name} took {took:?}"));
        }
        times.push(format!("{name} {}ms", took.as_millis()));
    }
    Ok(format!("{} fixtures, each < 1 s ({})", FIGURES.len(), times.join(", ")))
}

// ---------------------------------------------------------------------
// 2

fn safety(shared: &mut Shared) -> Res {
    let runs = suite(shared);
    let (mut checks, mut txs, mut confirmed, mut unresolved, mut adversarial, mut tracker_over) = (0, 0, 0, 0, 0, 0);
    for r in runs.iter_mut() {
        let w = &mut r.world;
        let spec = w.spec();
        if spec.agents.len() > 12 || w.issued().len() > 60 {
            return Err(format!("seed {}: scenario exceeds the size limits", r.seed));
        }
        if spec.check_budget().is_err() {
            return Err(format!("seed {}: adversary budget not below a third", r.seed));
        }
        tracker_over += !w.budget_respected() as usize;
        if !matches!(spec.policy, abc_core::netsim::Policy::SeededRandom(_)) {
            return Err(format!("seed {}: not a seeded random schedule", r.seed));
        }
        adversarial += spec.agents.iter().any(|a| !a.honest) as usize;
        if let Some(v) = w.safety().violations.first() {
            return Err(format!("seed {}: {v}", r.seed));
        }
        checks += w.safety().checks;
        // recompute from scratch: same set, no conflicting pair
        let cached = w.confirmed().clone();
        let mut fresh = Checker::new(w.spec().checker);
        let cs = fresh.confirmed_set(w.global_store());
        if cs.confirmed != cached {
            return Err(format!("seed {}: fresh evaluation differs from the running one", r.seed));
        }
        if let Some((a, b)) = conflicting_pair(w.global_store(), &cs.confirmed) {
            return Err(format!("seed {}: {} and {} both confirmed", r.seed, a.short(), b.short()));
        }
        txs += w.global_store().transactions().count();
        confirmed += cs.confirmed.len() - 1;
        unresolved += cs.unresolved.len();
    }
    let time = shared.suite_time;
    if time >= SAFETY_BUDGET {
        return Err(format!("{SAFETY_SIMS} scenarios took {time:?}"));
    }
    Ok(format!(
        "{SAFETY_SIMS} scenarios ({adversarial} with adversaries), {txs} txs, {confirmed} confirmed, \
         {unresolved} unresolved, 0 conflicts, 0 lost confirmations over {checks} checks, simulated in {:.1} s; \
         budget precheck 3x < M passed for all (issue-time tracker over a third in {tracker_over})",
        time.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------
// 3

fn termination(_: &mut Shared) -> Res {
    let mut honest = 0;
    for seed in 0..TERMINATION_SIMS {
        let p = SimParams { adversary: false, random_schedule: true, ..SimParams::default() };
        let mut w = World::new(random_sim(seed, &p)).map_err(|e| e.to_string())?;
        if w.run() != Outcome::Quiescent {
            return Err(format!("seed {seed}: horizon reached"));
        }
        if let Some((agent, id)) = w.unconfirmed_honest().first() {
            return Err(format!("seed {seed}: {agent} never confirmed {}", id.short()));
        }
        honest += w.issued().iter().filter(|t| t.honest).count();
    }
    let mut hops = 0;
    for seed in 0..TERMINATION_SIMS {
        let p = SimParams { adversary: false, random_schedule: false, ..SimParams::default() };
        let mut w = World::new(random_sim(seed, &p)).map_err(|e| e.to_string())?;
        w.run();
        if let Some((agent, id)) = w.unconfirmed_honest().first() {
            return Err(format!("fifo seed {seed}: {agent} never confirmed {}", id.short()));
        }
        let obs = w.observer().ok_or("no observer")?;
        for t in w.issued().iter().filter(|t| t.honest) {
            match w.observation(obs, &t.id) {
                Some(o) if o.hops == 2 => hops += 1,
                other => return Err(format!("fifo seed {seed}: {} observed as {other:?}", t.label)),
            }
        }
    }
    Ok(format!(
        "{TERMINATION_SIMS} random-order scenarios: all {honest} honest txs confirmed by every honest agent; \
         {TERMINATION_SIMS} fifo scenarios: {hops} txs at exactly 2 hops"
    ))
}

// ---------------------------------------------------------------------
// 4: a from-scratch oracle over message ids, enumerating every ack subset

struct Oracle<'a> {
    msgs: HashMap<MessageId, &'a Message>,
    genesis: MessageId,
    allocations: Vec<(OutputRef, u64, PublicKey)>,
    total: u64,
    memo: HashMap<(Vec<MessageId>, MessageId), bool>,
}

impl<'a> Oracle<'a> {
    fn new(genesis: &'a Message, rest: &'a [(String, Message)]) -> Self {
        let Message::Genesis(g) = genesis else { panic!("not a genesis") };
        let gid = genesis.id();
        let allocations = g
            .allocations
            .iter()
            .enumerate()
            .map(|(i, a)| (OutputRef { tx: gid, index: i as u32 }, a.output.value, a.validator))
            .collect::<Vec<_>>();
        let total = allocations.iter().map(|a| a.1).sum();
        let mut msgs: HashMap<MessageId, &Message> = rest.iter().map(|(_, m)| (m.id(), m)).collect();
        msgs.insert(gid, genesis);
        Oracle { msgs, genesis: gid, allocations, total, memo: HashMap::new() }
    }

    fn tx(&self, id: &MessageId) -> Option<&'a abc_core::Transaction> {
        match self.msgs.get(id) {
            Some(Message::Transaction(t)) => Some(t),
            _ => None,
        }
    }

    fn past(&self, roots: &[MessageId]) -> BTreeSet<MessageId> {
        let mut out = BTreeSet::new();
        let mut stack = roots.to_vec();
        while let Some(m) = stack.pop() {
            if out.insert(m) {
                stack.extend(self.msgs[&m].references());
            }
        }
        out.insert(self.genesis);
        out
    }

    /// Every output produced inside `scope`: (ref, value, validator).
    fn outputs(&self, scope: &BTreeSet<MessageId>) -> Vec<(OutputRef, u64, PublicKey)> {
        let mut out = self.allocations.clone();
        for id in scope {
            if let Some(t) = self.tx(id) {
                for (i, o) in t.outputs.iter().enumerate() {
                    out.push((OutputRef { tx: *id, index: i as u32 }, o.value, t.validator));
                }
            }
        }
        out
    }

    fn live(&mut self, scope: &BTreeSet<MessageId>, r: &OutputRef) -> bool {
        if !self.confirmed(scope, &r.tx) {
            return false;
        }
        let spenders: Vec<MessageId> =
            scope.iter().filter(|w| self.tx(w).is_some_and(|t| t.inputs.contains(r))).copied().collect();
        !spenders.iter().any(|w| self.confirmed(scope, w))
    }

    fn stake(&mut self, scope: &BTreeSet<MessageId>) -> BTreeMap<PublicKey, u64> {
        let mut m = BTreeMap::new();
        for (r, value, v) in self.outputs(scope) {
            let live = self.live(scope, &r);
            *m.entry(v).or_insert(0) += if live { value } else { 0 };
        }
        m
    }

    fn confirmed(&mut self, scope: &BTreeSet<MessageId>, t: &MessageId) -> bool {
        if *t == self.genesis {
            return true;
        }
        if !scope.contains(t) {
            return false;
        }
        let key = (scope.iter().copied().collect::<Vec<_>>(), *t);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let tx = self.tx(t).expect("a transaction");
        let parents: BTreeSet<MessageId> = tx.inputs.iter().map(|i| i.tx).collect();
        let mut result = parents.iter().all(|p| self.confirmed(scope, p));
        if result {
            let acks: Vec<MessageId> =
                scope.iter().filter(|m| matches!(self.msgs[m], Message::Ack(_))).copied().collect();
            let mut seen = BTreeSet::new();
            result = (1u32..1 << acks.len()).any(|mask| {
                let chosen: Vec<MessageId> =
                    acks.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, a)| *a).collect();
                // erased scopes are not past-closed: stay inside them
                let x: BTreeSet<MessageId> = self.past(&chosen).intersection(scope).copied().collect();
                seen.insert(x.clone()) && self.certifies(&x, t)
            });
        }
        self.memo.insert(key, result);
        result
    }

    fn certifies(&mut self, x: &BTreeSet<MessageId>, t: &MessageId) -> bool {
        let tx = self.tx(t).expect("a transaction");
        let signers: BTreeSet<PublicKey> = x
            .iter()
            .filter_map(|m| match self.msgs[m] {
                Message::Ack(a) if a.signed.contains(t) => Some(a.validator),
                _ => None,
            })
            .collect();
        if signers.is_empty() {
            return false;
        }
        let rival = x
            .iter()
            .any(|w| w != t && self.tx(w).is_some_and(|o| o.inputs.iter().any(|i| tx.inputs.contains(i))));
        if rival {
            return false;
        }
        let mut dep = BTreeSet::from([*t]);
        loop {
            let more: Vec<MessageId> = x
                .iter()
                .filter(|w| !dep.contains(*w) && self.tx(w).is_some_and(|o| o.inputs.iter().any(|i| dep.contains(&i.tx))))
                .copied()
                .collect();
            if more.is_empty() {
                break;
            }
            dep.extend(more);
        }
        let y: BTreeSet<MessageId> = x.difference(&dep).copied().collect();
        let stake = self.stake(&y);
        let signed: u64 = stake.iter().filter(|(v, _)| signers.contains(v)).map(|(_, s)| s).sum();
        3 * signed > 2 * self.total
    }
}

fn oracle(_: &mut Shared) -> Res {
    let (mut txs, mut yes, mut stake_checks) = (0, 0, 0);
    for seed in 0..ORACLE_DAGS {
        let b = random_dag(seed, &DagParams::default()).map_err(|e| e.to_string())?;
        let s = b.store().map_err(|e| e.to_string())?;
        let genesis = Message::Genesis(b.genesis_message().map_err(|e| e.to_string())?.clone());
        let mut o = Oracle::new(&genesis, b.messages());
        let everything: BTreeSet<MessageId> = o.msgs.keys().copied().collect();
        let mut checker = Checker::default();
        let acks: Vec<MessageId> = s.acks().map(|a| s.entry(a).id).collect();
        if acks.len() > 12 {
            return Err(format!("seed {seed}: {} acks", acks.len()));
        }
        for t in s.transactions() {
            let id = s.entry(t).id;
            let expect = o.confirmed(&everything, &id);
            let got = checker.find_certificate(&s, &id).map_err(|e| e.to_string())?;
            match (&got, expect) {
                (CertificateSearch::Found(c), true) => {
                    checker.verify_certificate(&s, c).map_err(|e| format!("seed {seed}: own certificate fails: {e}"))?;
                    yes += 1;
                }
                (CertificateSearch::NotFound, false) => {}
                _ => return Err(format!("seed {seed} {}: search {got:?}, oracle {expect}", b.name_of(&id).unwrap_or("?"))),
            }
            txs += 1;
        }
        // stake over single acks, all acks and a few random subsets
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut subsets: Vec<Vec<MessageId>> = acks.iter().map(|a| vec![*a]).collect();
        subsets.push(acks.clone());
        for _ in 0..4 {
            subsets.push(acks.iter().filter(|_| rng.gen_bool(0.5)).copied().collect());
        }
        for sub in subsets.into_iter().filter(|s| !s.is_empty()) {
            let scope = o.past(&sub);
            let expect = o.stake(&scope);
            let got = checker.delegated_stake(&s, &sub).map_err(|e| e.to_string())?;
            if got != expect {
                return Err(format!("seed {seed}: delegated stake {got:?}, recomputed {expect:?}"));
            }
            stake_checks += 1;
        }
    }
    Ok(format!(
        "{ORACLE_DAGS} DAGs, {txs} txs ({yes} confirmable), {stake_checks} stake maps, 0 disagreements"
    ))
}

// ---------------------------------------------------------------------
// 5

fn bounds(shared: &mut Shared) -> Res {
    let runs = suite(shared);
    let (mut compared, mut cert, mut not, mut abstain) = (0, 0, 0, 0);
    for r in runs.iter_mut() {
        let (s, checker) = r.world.global_checker();
        let cs = checker.confirmed_set(s);
        for t in s.transactions() {
            let id = s.entry(t).id;
            let seq = stake_bounds(s, &id, 1).map_err(|e| e.to_string())?;
            let seq_bytes = serde_json::to_vec(&seq).expect("serializable");
            for n in PARTITIONS {
                let par = stake_bounds(s, &id, n).map_err(|e| e.to_string())?;
                if serde_json::to_vec(&par).expect("serializable") != seq_bytes {
                    return Err(format!("seed {}: {n} partitions differ from sequential", r.seed));
                }
                compared += 1;
            }
            let parents = s.tx_parents(t).all(|p| cs.confirmed.contains(&s.entry(p).id));
            match (seq.verdict, cs.status(&id)) {
                (BoundVerdict::Certifiable, TxStatus::Unconfirmed) if parents => {
                    return Err(format!("seed {}: {} certifiable by bounds but unconfirmed", r.seed, id.short()))
                }
                (BoundVerdict::NotCertifiable, TxStatus::Confirmed) => {
                    return Err(format!("seed {}: {} confirmed but not certifiable", r.seed, id.short()))
                }
                (BoundVerdict::Certifiable, _) => cert += 1,
                (BoundVerdict::NotCertifiable, _) => not += 1,
                (BoundVerdict::Abstain, _) => abstain += 1,
            }
        }
    }
    Ok(format!(
        "{compared} partitioned results byte-identical; verdicts {cert} certifiable / {not} not / {abstain} abstain, 0 contradictions"
    ))
}

// ---------------------------------------------------------------------
// 6

/// Every ordering of `items`, by Heap's algorithm.
fn for_each_permutation<T: Clone>(items: &[T], mut f: impl FnMut(&[T]) -> Result<(), String>) -> Result<(), String> {
    let mut a = items.to_vec();
    let n = a.len();
    let mut c = vec![0; n];
    f(&a)?;
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            f(&a)?;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(())
}

fn permutations(_: &mut Shared) -> Res {
    let (mut dags, mut orders, mut largest) = (0, 0u64, 0);
    let params = DagParams { max_validators: 3, max_txs: 5, max_acks: 5, conflict_rate: 0.3, fork_rate: 0.2 };
    let (mut full_size, mut smaller): (Vec<(DagBuilder, Vec<Message>)>, Vec<_>) = (Vec::new(), Vec::new());
    // DAGs of exactly eight messages, plus smaller ones
    let mut seed = 0;
    while full_size.len() < 8 || smaller.len() < 16 {
        if seed > 100_000 {
            return Err(format!("only {} DAGs of {MAX_PERMUTED} messages", full_size.len()));
        }
        let b = random_dag(seed, &params).map_err(|e| e.to_string())?;
        seed += 1;
        // identical messages share an id and are stored once
        let mut msgs: Vec<Message> = Vec::new();
        for (_, m) in b.messages() {
            if !msgs.contains(m) {
                msgs.push(m.clone());
            }
        }
        let n = msgs.len();
        if n == MAX_PERMUTED && full_size.len() < 8 {
            full_size.push((b, msgs));
        } else if n < MAX_PERMUTED && smaller.len() < 16 && seed % 3 == 0 {
            smaller.push((b, msgs));
        }
    }
    let sources: Vec<_> = full_size.into_iter().chain(smaller).collect();
    for (b, msgs) in &sources {
        let reference = {
            let s = b.store().map_err(|e| e.to_string())?;
            Checker::default().confirmed_set(&s)
        };
        let mut k = 0u64;
        for_each_permutation(msgs, |order| {
            let mut s = b.empty_store().map_err(|e| e.to_string())?;
            // every 64th order also reuses one checker across the arrivals
            let incremental = k.is_multiple_of(64);
            let mut live = Checker::default();
            for m in order {
                s.ingest(m.clone());
                if incremental {
                    live.confirmed_set(&s);
                }
            }
            if s.len() != msgs.len() + 1 {
                return Err(format!("order {k}: {} of {} messages admitted", s.len() - 1, msgs.len()));
            }
            let got = if incremental { live.confirmed_set(&s) } else { Checker::default().confirmed_set(&s) };
            if got != reference {
                return Err(format!("order {k}: confirmed set differs"));
            }
            k += 1;
            Ok(())
        })?;
        orders += k;
        dags += 1;
        largest = largest.max(msgs.len());
    }
    Ok(format!("{dags} DAGs of up to {largest} messages, {orders} delivery orders, one confirmed set each"))
}

// ---------------------------------------------------------------------
// 7

fn fees(shared: &mut Shared) -> Res {
    let runs = suite(shared);
    let (mut records, mut full, mut equal_runs, mut short_runs) = (0, 0, 0, 0);
    for r in runs.iter() {
        let l: &FeeLedger = r.world.fees();
        let accrued: u64 = l.accrued.values().sum();
        if accrued != l.distributed || accrued > l.charged {
            return Err(format!("seed {}: accrued {accrued}, charged {}", r.seed, l.charged));
        }
        for rec in &l.records {
            if rec.distributed > rec.fee || (rec.distributed == rec.fee) != rec.full_participation {
                return Err(format!("seed {}: record {rec:?}", r.seed));
            }
            full += rec.full_participation as usize;
        }
        records += l.records.len();
        let all_full = l.records.iter().all(|r| r.full_participation);
        if (accrued == l.charged) != all_full {
            return Err(format!("seed {}: equality does not track full participation", r.seed));
        }
        if accrued == l.charged {
            equal_runs += 1;
        } else {
            short_runs += 1;
        }
    }
    if equal_runs == 0 || short_runs == 0 {
        return Err(format!("only one side exercised ({equal_runs} equal, {short_runs} short)"));
    }

    // α = 3 + 1/100: an issuer below a third of the stake earns its fee back
    let over = FeePolicy { alpha: Ratio::new(301, 100), ..FeePolicy::default() };
    let at_bound = FeePolicy { alpha: Ratio::new(3, 1), ..FeePolicy::default() };
    let (fee, total) = (1000, 1000);
    let m = over.cost_witness(fee, total).ok_or("no witness above the bound")?;
    let mut ledger = FeeLedger::default();
    let issuer_validator = PublicKey([1; 32]);
    let stakes = [(issuer_validator, m), (PublicKey([2; 32]), total - m)].into_iter().collect();
    let signers = stakes_keys(&stakes);
    ledger.accrue(&over, MessageId::default(), fee, &stakes, &signers, total);
    if 3 * m >= total || ledger.accrued[&issuer_validator] < fee {
        return Err(format!("witness m={m} does not recoup the fee"));
    }
    for total in 2..200 {
        for fee in 1..50 {
            if let Some(m) = at_bound.cost_witness(fee, total) {
                return Err(format!("α = 3 admits a witness: fee {fee}, total {total}, stake {m}"));
            }
        }
    }
    Ok(format!(
        "{} runs, {records} fee records: accrued ≤ charged everywhere, equal in {equal_runs} runs \
         (all {full} fully signed records exact); α = 301/100 witness stake {m} of {total} earns {} ≥ fee {fee}; \
         α = 3 has none",
        runs.len(),
        ledger.accrued[&issuer_validator]
    ))
}

fn stakes_keys(m: &BTreeMap<PublicKey, u64>) -> BTreeSet<PublicKey> {
    m.keys().copied().collect()
}

// ---------------------------------------------------------------------
// 8

fn owner_names() -> impl Iterator<Item = String> {
    (0..8).map(|i| format!("g{i}")).chain((0..64).map(|i| format!("o{i}"))).chain((0..64).map(|i| format!("p{i}")))
}

/// A random DAG, a checkpoint over a random frontier signed by every
/// validator, and random traffic after it. `None` if no settled frontier
/// turns up.
fn checkpoint_case(seed: u64) -> Result<Option<(DagBuilder, MessageId)>, String> {
    let e = |e: abc_core::builder::BuildError| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let params = DagParams { max_validators: 4, max_txs: 8, max_acks: 8, ..DagParams::default() };
    let mut b = random_dag(seed, &params).map_err(e)?;
    let pre = b.store().map_err(e)?;
    let ack_labels: Vec<String> =
        b.messages().iter().filter(|(_, m)| matches!(m, Message::Ack(_))).map(|(l, _)| l.clone()).collect();
    // a random frontier whose past is settled, as honest signers require
    let mut checker = Checker::default();
    let mut chosen = None;
    for _ in 0..8 {
        let mut frontier: Vec<String> = ack_labels.iter().filter(|_| rng.gen_bool(0.6)).cloned().collect();
        if frontier.is_empty() {
            let Some(a) = ack_labels.choose(&mut rng) else { return Ok(None) };
            frontier.push(a.clone());
        }
        let ids: BTreeSet<MessageId> = frontier.iter().map(|f| b.id(f)).collect::<Result<_, _>>().map_err(e)?;
        if matches!(is_settled(&pre, &mut checker, &ids), Ok(true)) {
            if let Ok(summary) = summarize(&pre, &mut checker, &ids) {
                chosen = Some((frontier, summary));
                break;
            }
        }
    }
    let Some((frontier, summary)) = chosen else { return Ok(None) };
    let frontier: Vec<&str> = frontier.iter().map(String::as_str).collect();
    let summary_refs: BTreeSet<OutputRef> = summary.iter().map(|s| s.output_ref).collect();
    let validators: Vec<String> =
        (0..params.max_validators).map(|i| format!("v{i}")).filter(|v| pre.key_idx(&b.pk(v)).is_some()).collect();
    let creator = validators.choose(&mut rng).ok_or("no validators")?.clone();
    let cp = b.checkpoint("cp", &creator, &frontier, summary).map_err(e)?;

    // Validators behave honestly after the checkpoint: never sign a
    // transaction spending an input they saw spent by one they signed.
    let inputs_of = |b: &DagBuilder, id: &MessageId| -> Vec<OutputRef> {
        match b.messages().iter().find(|(_, m)| m.id() == *id) {
            Some((_, Message::Transaction(t))) => t.inputs.clone(),
            _ => Vec::new(),
        }
    };
    let mut last: BTreeMap<String, String> = BTreeMap::new();
    let mut seen_spent: BTreeMap<String, BTreeSet<OutputRef>> = BTreeMap::new();
    for (l, m) in b.messages() {
        if let Message::Ack(a) = m {
            if let Some(v) = validators.iter().find(|v| b.pk(v) == a.validator) {
                last.insert(v.clone(), l.clone());
                for t in &a.signed {
                    seen_spent.entry(v.clone()).or_default().extend(inputs_of(&b, t));
                }
            }
        }
    }
    // live outputs after the checkpoint, and a few stale ones for conflicts
    let mut live: Vec<(String, u64)> = Vec::new();
    let mut stale: Vec<(String, u64)> = Vec::new();
    for name in owner_names() {
        if let Ok((r, o)) = b.output_of(&name) {
            if summary_refs.contains(&r) {
                live.push((name, o.value));
            } else {
                stale.push((name, o.value));
            }
        }
    }
    let mut post_txs: Vec<String> = Vec::new();
    let mut next = 0;
    let mut round = 0;
    for _ in 0..rng.gen_range(1..=3) {
        for _ in 0..rng.gen_range(0..=3) {
            let pool = if !stale.is_empty() && (live.is_empty() || rng.gen_bool(0.15)) { &mut stale } else { &mut live };
            if pool.is_empty() {
                break;
            }
            let i = rng.gen_range(0..pool.len());
            let (owner, value) = pool.swap_remove(i);
            let out = format!("p{next}");
            next += 1;
            let label = format!("u{}", post_txs.len());
            let v = validators.choose(&mut rng).expect("non-empty").clone();
            b.tx(&label, &[&owner], &[(&out, value)], &v).map_err(e)?;
            live.push((out, value));
            post_txs.push(label);
        }
        let mut order = validators.clone();
        order.shuffle(&mut rng);
        for v in order {
            if round > 0 && rng.gen_bool(0.3) {
                continue;
            }
            let mut signs: Vec<&str> = Vec::new();
            for t in &post_txs {
                let ins = inputs_of(&b, &b.id(t).map_err(e)?);
                let spent = seen_spent.entry(v.clone()).or_default();
                if rng.gen_bool(0.7) && ins.iter().all(|i| !spent.contains(i)) {
                    spent.extend(ins);
                    signs.push(t);
                }
            }
            if round == 0 {
                signs.push("cp");
            }
            if signs.is_empty() {
                continue;
            }
            let label = format!("c{round}{v}");
            b.ack(&label, &v, last.get(&v).map(String::as_str), &signs).map_err(e)?;
            last.insert(v.clone(), label);
        }
        round += 1;
    }
    Ok(Some((b, cp)))
}

fn pruning(_: &mut Shared) -> Res {
    let (mut pairs, mut skipped, mut post_txs, mut post_confirmed) = (0, 0, 0, 0);
    let mut unsafe_histories = 0;
    let mut seed = 0;
    while pairs < CHECKPOINT_PAIRS {
        if seed > 20 * CHECKPOINT_PAIRS as u64 {
            return Err(format!("only {pairs} usable pairs"));
        }
        let case = checkpoint_case(seed)?;
        seed += 1;
        let Some((b, cp_id)) = case else {
            skipped += 1;
            continue;
        };
        let full = b.store().map_err(|e| e.to_string())?;
        let mut fc = Checker::default();
        // a byzantine supermajority can confirm both sides of a double
        // spend; no summary can preserve that, so such histories are out
        if conflicting_pair(&full, &fc.confirmed_set(&full).confirmed).is_some() {
            unsafe_histories += 1;
            continue;
        }
        let Some(cert) = confirm_checkpoint(&full, &mut fc, &cp_id).map_err(|e| e.to_string())? else {
            skipped += 1;
            continue;
        };
        let Some(Message::Checkpoint(cp)) = full.get(&cp_id).cloned() else { unreachable!() };
        let frontier: Vec<MessageId> = cp.frontier.iter().copied().collect();
        let before = full.past(&frontier).map_err(|e| e.to_string())?;
        let post: Vec<Message> =
            full.messages().filter(|m| !before.contains(&m.id())).cloned().collect();
        let pruned = bootstrap(cp, &cert, &post, full.scheme().clone()).map_err(|e| format!("seed {}: {e}", seed - 1))?;
        let mut pc = Checker::default();
        let diff = pruning_mismatches(&full, &mut fc, &pruned, &mut pc).map_err(|e| e.to_string())?;
        if let Some((t, a, p)) = diff.first() {
            return Err(format!("seed {}: {} is {a:?} in full history, {p:?} after pruning", seed - 1, t.short()));
        }
        for t in full.transactions().filter(|&t| !before.contains(&full.entry(t).id)) {
            post_txs += 1;
            post_confirmed += (fc.status(&full, &full.entry(t).id).ok() == Some(TxStatus::Confirmed)) as usize;
        }
        pairs += 1;
    }
    Ok(format!(
        "{pairs} pairs ({skipped} candidates skipped: no settled frontier or unconfirmed checkpoint; \
         {unsafe_histories} unsafe histories), {post_txs} post-checkpoint txs ({post_confirmed} confirmed), 0 mismatches"
    ))
}

// ---------------------------------------------------------------------
// 9

fn determinism(_: &mut Shared) -> Res {
    let mut bytes = 0;
    for seed in 0..DETERMINISM_SIMS {
        let logs: Vec<String> = (0..2)
            .map(|_| {
                let mut w = World::new(suite_spec(seed)).expect("valid");
                w.run();
                w.log().to_string()
            })
            .collect();
        if logs[0] != logs[1] || logs[0].is_empty() {
            return Err(format!("seed {seed}: logs differ"));
        }
        bytes += logs[0].len();
    }
    for (name, text) in FIGURES {
        let sc = Scenario::parse(text).map_err(|e| e.to_string())?;
        let a = run_scenario(&sc, &RunOptions::default()).map_err(|e| e.to_string())?;
        let b = run_scenario(&sc, &RunOptions::default()).map_err(|e| e.to_string())?;
        let json = |o: &abc_core::scenario::RunArtifacts| serde_json::to_string(&o.report).expect("serializable");
        if a.log != b.log || json(&a) != json(&b) {
            return Err(format!("{name}: reruns differ"));
        }
    }
    Ok(format!("{DETERMINISM_SIMS} scenarios rerun with identical logs ({bytes} bytes), {} fixtures identical", FIGURES.len()))
}
