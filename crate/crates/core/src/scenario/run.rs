//! Executing scenarios and reporting on them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use super::{Body, DagItem, DagScript, ExpectLine, Expectation, Scenario, ScenarioError};
use crate::builder::{key_for, DagBuilder};
use crate::checkpoint::{self, bootstrap, confirm_checkpoint, pruning_mismatches, summarize};
use crate::confirm::{stake_bounds, BoundVerdict};
use crate::confirm::{CertificateSearch, Checker, CheckerConfig, ConfirmationCertificate, TxStatus};
use crate::crypto::{PublicKey, TestScheme};
use crate::dag::{DagStore, Ingest};
use crate::message::{Message, MessageId};
use crate::netsim::{Outcome, Policy, SafetyReport, World};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub horizon: Option<u64>,
    /// `fifo`, `random` or `scripted`.
    pub policy: Option<String>,
    /// Cross-check statuses against the partitioned stake bounds.
    pub partitions: Option<usize>,
    /// Evaluator settings; unset keeps the scenario's own.
    pub checker: Option<CheckerConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CertificateLine {
    pub acks: Vec<String>,
    pub signed_sum: u64,
    pub total: u64,
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TxLine {
    pub label: String,
    pub id: MessageId,
    pub status: TxStatus,
    pub value: u64,
    pub hops: Option<u32>,
    pub certificate: Option<CertificateLine>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeeSummary {
    pub charged: u64,
    pub distributed: u64,
    pub conserves: bool,
    pub accrued: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BudgetSummary {
    /// Bound checked before the run.
    pub bound: u64,
    /// Budget tracked during the run.
    pub tracked: u64,
    pub total: u64,
    pub respected: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BoundsSummary {
    pub partitions: usize,
    pub identical_to_sequential: bool,
    pub contradictions: Vec<String>,
    pub certifiable: usize,
    pub not_certifiable: usize,
    pub abstain: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExpectationResult {
    pub line: usize,
    pub description: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub mode: &'static str,
    pub policy: Option<String>,
    pub steps: u64,
    pub outcome: Option<Outcome>,
    pub deadlock: bool,
    pub undelivered: usize,
    pub transactions: Vec<TxLine>,
    pub confirmed_value: u64,
    pub unconfirmed_value: u64,
    pub total_value: u64,
    pub fees: Option<FeeSummary>,
    pub safety: SafetyReport,
    pub budget: Option<BudgetSummary>,
    pub bounds: Option<BoundsSummary>,
    /// Internal consistency checks that failed.
    pub invariant_failures: Vec<String>,
    pub expectations: Vec<ExpectationResult>,
}

impl Report {
    /// 0 all expectations met, 1 some expectation missed, 3 an internal
    /// invariant was violated.
    pub fn exit_code(&self) -> i32 {
        if !self.invariant_failures.is_empty() || !self.safety.holds() {
            3
        } else if self.expectations.iter().any(|e| !e.passed) {
            1
        } else {
            0
        }
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: Report,
    pub log: String,
    /// Root first, then every other message in admission order.
    pub messages: Vec<Message>,
    pub certificates: Vec<(String, ConfirmationCertificate)>,
}

pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<RunArtifacts, ScenarioError> {
    match &sc.body {
        Body::Dag(d) => run_dag(sc, d, opts),
        Body::Sim(_) => run_sim(sc, opts),
    }
}

fn yes(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn result(line: &ExpectLine, description: String, passed: bool, detail: String) -> ExpectationResult {
    ExpectationResult { line: line.line, description, passed, detail }
}

/// Statuses, certificates and consistency checks shared by both modes.
struct Assessment {
    transactions: Vec<TxLine>,
    certificates: Vec<(String, ConfirmationCertificate)>,
    failures: Vec<String>,
    bounds: Option<BoundsSummary>,
}

fn assess(
    s: &DagStore,
    checker: &mut Checker,
    label: &dyn Fn(&MessageId) -> String,
    partitions: Option<usize>,
) -> Assessment {
    let cs = checker.confirmed_set(s);
    let mut transactions = Vec::new();
    let mut certificates = Vec::new();
    let mut failures = Vec::new();
    for t in s.transactions() {
        let id = s.entry(t).id;
        let status = cs.status(&id);
        let value = match &*s.entry(t).msg {
            Message::Transaction(tx) => tx.value(),
            _ => 0,
        };
        let mut certificate = None;
        if status == TxStatus::Confirmed {
            match checker.find_certificate(s, &id) {
                Ok(CertificateSearch::Found(cert)) => {
                    let verified = checker.verify_certificate(s, &cert).is_ok();
                    if !verified {
                        failures.push(format!("certificate for {} does not verify", label(&id)));
                    }
                    certificate = Some(CertificateLine {
                        acks: cert.acks.iter().map(label).collect(),
                        signed_sum: cert.signed_sum,
                        total: cert.total,
                        verified,
                    });
                    certificates.push((label(&id), cert));
                }
                other => failures.push(format!("{} is confirmed but its certificate search gave {other:?}", label(&id))),
            }
        }
        transactions.push(TxLine { label: label(&id), id, status, value, hops: None, certificate });
    }

    let bounds = partitions.map(|n| {
        let mut b = BoundsSummary {
            partitions: n,
            identical_to_sequential: true,
            contradictions: Vec::new(),
            certifiable: 0,
            not_certifiable: 0,
            abstain: 0,
        };
        for t in s.transactions() {
            let id = s.entry(t).id;
            let (Ok(par), Ok(seq)) = (stake_bounds(s, &id, n), stake_bounds(s, &id, 1)) else { continue };
            let (pj, sj) = (serde_json::to_string(&par).unwrap_or_default(), serde_json::to_string(&seq).unwrap_or_default());
            if pj != sj {
                b.identical_to_sequential = false;
            }
            let status = cs.status(&id);
            let parents_confirmed = s.tx_parents(t).all(|p| cs.confirmed.contains(&s.entry(p).id));
            match par.verdict {
                BoundVerdict::Certifiable => {
                    b.certifiable += 1;
                    if parents_confirmed && status == TxStatus::Unconfirmed {
                        b.contradictions.push(format!("{} certifiable by bounds but unconfirmed", label(&id)));
                    }
                }
                BoundVerdict::NotCertifiable => {
                    b.not_certifiable += 1;
                    if status == TxStatus::Confirmed {
                        b.contradictions.push(format!("{} confirmed but not certifiable by bounds", label(&id)));
                    }
                }
                BoundVerdict::Abstain => b.abstain += 1,
            }
        }
        if !b.identical_to_sequential {
            failures.push(format!("stake bounds differ between {n} partitions and one"));
        }
        failures.extend(b.contradictions.iter().cloned());
        b
    });
    Assessment { transactions, certificates, failures, bounds }
}

fn values(txs: &[TxLine]) -> (u64, u64, u64) {
    let confirmed: u64 = txs.iter().filter(|t| t.status == TxStatus::Confirmed).map(|t| t.value).sum();
    let unconfirmed: u64 = txs.iter().filter(|t| t.status != TxStatus::Confirmed).map(|t| t.value).sum();
    (confirmed, unconfirmed, txs.iter().map(|t| t.value).sum())
}

// ---------------------------------------------------------------------------
// dag mode

fn build(script: &DagScript) -> Result<DagBuilder, ScenarioError> {
    let mut b = DagBuilder::default();
    let alloc: Vec<(&str, u64, &str)> =
        script.genesis.iter().map(|(o, v, val)| (o.as_str(), *v, val.as_str())).collect();
    b.genesis(&alloc)?;
    for item in &script.items {
        match item {
            DagItem::Tx { label, inputs, outputs, validator } => {
                let ins: Vec<&str> = inputs.iter().map(String::as_str).collect();
                let outs: Vec<(&str, u64)> = outputs.iter().map(|(o, v)| (o.as_str(), *v)).collect();
                b.tx(label, &ins, &outs, validator)?;
            }
            DagItem::Ack { label, validator, prev, signs } => {
                let signs: Vec<&str> = signs.iter().map(String::as_str).collect();
                b.ack(label, validator, prev.as_deref(), &signs)?;
            }
            DagItem::Checkpoint { label, creator, frontier } => {
                let s = b.store()?;
                let mut c = Checker::default();
                let f = frontier.iter().map(|l| b.id(l)).collect::<Result<BTreeSet<_>, _>>()?;
                let summary = summarize(&s, &mut c, &f)?;
                let fr: Vec<&str> = frontier.iter().map(String::as_str).collect();
                b.checkpoint(label, creator, &fr, summary)?;
            }
        }
    }
    Ok(b)
}

fn names_in(script: &DagScript) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    for (o, _, v) in &script.genesis {
        names.insert(o.clone());
        names.insert(v.clone());
    }
    for item in &script.items {
        match item {
            DagItem::Tx { outputs, validator, .. } => {
                names.extend(outputs.iter().map(|(o, _)| o.clone()));
                names.insert(validator.clone());
            }
            DagItem::Ack { validator, .. } => {
                names.insert(validator.clone());
            }
            DagItem::Checkpoint { creator, .. } => {
                names.insert(creator.clone());
            }
        }
    }
    names
}

fn run_dag(sc: &Scenario, script: &DagScript, opts: &RunOptions) -> Result<RunArtifacts, ScenarioError> {
    let b = build(script)?;
    let s = b.store()?;
    let mut checker = Checker::new(opts.checker.unwrap_or_default());
    let label = |id: &MessageId| b.name_of(id).map(str::to_string).unwrap_or_else(|| id.short());
    let a = assess(&s, &mut checker, &label, opts.partitions);
    let key_names: BTreeMap<PublicKey, String> = names_in(script).into_iter().map(|n| (b.pk(&n), n)).collect();

    let mut log = String::new();
    for (l, m) in b.messages() {
        let _ = writeln!(log, "step=- kind=define id={} actor=- label={l} type={}", m.id().short(), m.kind_name());
    }

    let mut expectations = Vec::new();
    for e in &sc.expectations {
        expectations.push(check_dag(e, &b, &s, &mut checker, &a.transactions, &key_names));
    }
    let (confirmed_value, unconfirmed_value, total_value) = values(&a.transactions);
    let mut failures = a.failures;
    if confirmed_value + unconfirmed_value != total_value {
        failures.push("transaction values do not reconcile".into());
    }
    let mut messages = vec![Message::Genesis(b.genesis_message()?.clone())];
    messages.extend(s.messages().cloned());
    Ok(RunArtifacts {
        report: Report {
            scenario: sc.name.clone(),
            mode: "dag",
            policy: None,
            steps: 0,
            outcome: None,
            deadlock: false,
            undelivered: s.pending_ids().len(),
            transactions: a.transactions,
            confirmed_value,
            unconfirmed_value,
            total_value,
            fees: None,
            safety: SafetyReport::default(),
            budget: None,
            bounds: a.bounds,
            invariant_failures: failures,
            expectations,
        },
        log,
        messages,
        certificates: a.certificates,
    })
}

fn check_dag(
    e: &ExpectLine,
    b: &DagBuilder,
    s: &DagStore,
    checker: &mut Checker,
    txs: &[TxLine],
    key_names: &BTreeMap<PublicKey, String>,
) -> ExpectationResult {
    match dag_expectation(e, b, s, checker, txs, key_names) {
        Ok(r) => r,
        Err(err) => result(e, describe(&e.expectation), false, err.to_string()),
    }
}

fn describe(e: &Expectation) -> String {
    match e {
        Expectation::Status { label, status, hops } => match hops {
            Some(h) => format!("{label} {} in {h} hops", status.as_str()),
            None => format!("{label} {}", status.as_str()),
        },
        Expectation::Certificate { label, .. } => format!("certificate for {label}"),
        Expectation::Depends { a, b, value } => format!("{a} depends on {b}: {}", yes(*value)),
        Expectation::Conflicts { a, b, value } => format!("{a} conflicts with {b}: {}", yes(*value)),
        Expectation::Past { of, .. } => format!("past of {}", of.join(",")),
        Expectation::Byzantine { validator, value } => format!("{validator} byzantine: {}", yes(*value)),
        Expectation::Stake { view, excluding, .. } => match excluding {
            Some(x) => format!("stake in past({}) without {x}", view.join(",")),
            None => format!("stake in past({})", view.join(",")),
        },
        Expectation::Summary { checkpoint, .. } => format!("summary of {checkpoint}"),
        Expectation::CheckpointConfirmed { label, value } => format!("{label} confirmed: {}", yes(*value)),
        Expectation::Bootstrap { checkpoint } => format!("bootstrap from {checkpoint} matches full history"),
        Expectation::OrderIndependent => "reverse ingest gives the same store".into(),
        Expectation::Termination => "every honest transaction confirmed everywhere".into(),
    }
}

fn label_list(b: &DagBuilder, ids: &BTreeSet<MessageId>) -> Vec<String> {
    let mut v: Vec<String> = ids.iter().map(|i| b.name_of(i).map(str::to_string).unwrap_or_else(|| i.short())).collect();
    v.sort();
    v
}

fn sorted(v: &[String]) -> Vec<String> {
    let mut v = v.to_vec();
    v.sort();
    v
}

fn dag_expectation(
    e: &ExpectLine,
    b: &DagBuilder,
    s: &DagStore,
    checker: &mut Checker,
    txs: &[TxLine],
    key_names: &BTreeMap<PublicKey, String>,
) -> Result<ExpectationResult, ScenarioError> {
    let d = describe(&e.expectation);
    let ids = |labels: &[String]| labels.iter().map(|l| b.id(l)).collect::<Result<Vec<_>, _>>();
    Ok(match &e.expectation {
        Expectation::Status { label, status, .. } => {
            let id = b.id(label)?;
            let got = txs.iter().find(|t| t.id == id).map(|t| t.status);
            match got {
                Some(g) => result(e, d, g == *status, format!("got {}", g.as_str())),
                None => result(e, d, false, "not a transaction".into()),
            }
        }
        Expectation::Certificate { label, view, acks, sum } => {
            let sub;
            let store = if view.is_empty() {
                s
            } else {
                let v: Vec<&str> = view.iter().map(String::as_str).collect();
                sub = b.store_with(&v)?;
                &sub
            };
            let mut c = Checker::new(checker.config());
            match c.find_certificate(store, &b.id(label)?) {
                Ok(CertificateSearch::Found(cert)) => {
                    let got_acks = label_list(b, &cert.acks);
                    let verified = c.verify_certificate(store, &cert).is_ok();
                    let ok = verified
                        && acks.as_ref().is_none_or(|a| sorted(a) == got_acks)
                        && sum.is_none_or(|x| x == cert.signed_sum);
                    result(e, d, ok, format!("acks={} sum={} verified={}", got_acks.join(","), cert.signed_sum, yes(verified)))
                }
                other => result(e, d, false, format!("search gave {other:?}")),
            }
        }
        Expectation::Depends { a, b: other, value } => {
            let got = s.depends(&b.id(a)?, &b.id(other)?).map_err(|e| ScenarioError::Config(e.to_string()))?;
            result(e, d, got == *value, format!("got {}", yes(got)))
        }
        Expectation::Conflicts { a, b: other, value } => {
            let got = s.conflicts(&b.id(a)?, &b.id(other)?).map_err(|e| ScenarioError::Config(e.to_string()))?;
            result(e, d, got == *value, format!("got {}", yes(got)))
        }
        Expectation::Past { of, is } => {
            let past = s.past(&ids(of)?).map_err(|e| ScenarioError::Config(e.to_string()))?;
            let got = label_list(b, &past);
            result(e, d, got == sorted(is), format!("got {}", got.join(",")))
        }
        Expectation::Byzantine { validator, value } => {
            let got = s.byzantine().contains(&b.pk(validator));
            result(e, d, got == *value, format!("got {}", yes(got)))
        }
        Expectation::Stake { view, excluding, stakes } => {
            let acks = ids(view)?;
            let map = match excluding {
                Some(x) => checker.delegated_stake_excluding(s, &acks, &b.id(x)?),
                None => checker.delegated_stake(s, &acks),
            }
            .map_err(|e| ScenarioError::Config(e.to_string()))?;
            let mut ok = true;
            let mut got = Vec::new();
            for (name, want) in stakes {
                let have = map.get(&b.pk(name)).copied().unwrap_or(0);
                ok &= have == *want;
                got.push(format!("{name}:{have}"));
            }
            result(e, d, ok, format!("got {}", got.join(",")))
        }
        Expectation::Summary { checkpoint, entries } => {
            let Message::Checkpoint(cp) = b.message(checkpoint)? else {
                return Ok(result(e, d, false, "not a checkpoint".into()));
            };
            let mut got: Vec<(String, u64)> = cp
                .summary
                .iter()
                .map(|en| {
                    let owner = key_names.get(&en.output.owner).cloned().unwrap_or_else(|| en.output.owner.short());
                    (owner, en.output.value)
                })
                .collect();
            got.sort();
            let mut want = entries.clone();
            want.sort();
            let shown: Vec<String> = got.iter().map(|(o, v)| format!("{o}:{v}")).collect();
            let accurate = checkpoint::checkpoint_is_accurate(s, checker, cp);
            result(e, d, got == want && accurate, format!("got {} accurate={}", shown.join(","), yes(accurate)))
        }
        Expectation::CheckpointConfirmed { label, value } => {
            let cert = confirm_checkpoint(s, checker, &b.id(label)?)?;
            let got = match &cert {
                Some(c) => checkpoint::verify_checkpoint_certificate(s, checker, c).is_ok(),
                None => false,
            };
            result(e, d, got == *value, format!("got {}", yes(got)))
        }
        Expectation::Bootstrap { checkpoint } => {
            let id = b.id(checkpoint)?;
            let Message::Checkpoint(cp) = b.message(checkpoint)?.clone() else {
                return Ok(result(e, d, false, "not a checkpoint".into()));
            };
            let Some(cert) = confirm_checkpoint(s, checker, &id)? else {
                return Ok(result(e, d, false, "checkpoint is not confirmed".into()));
            };
            let before = s.past(&cp.frontier.iter().copied().collect::<Vec<_>>()).map_err(|e| ScenarioError::Config(e.to_string()))?;
            let post: Vec<Message> = s.messages().filter(|m| !before.contains(&m.id())).cloned().collect();
            let pruned = bootstrap(cp, &cert, &post, s.scheme().clone())?;
            let mut pc = Checker::new(checker.config());
            let mism = pruning_mismatches(s, checker, &pruned, &mut pc)?;
            let detail = if mism.is_empty() {
                format!("{} post-checkpoint messages", post.len())
            } else {
                mism.iter()
                    .map(|(id, f, p)| format!("{}: full {} pruned {}", label_list(b, &[*id].into()).join(""), f.as_str(), p.as_str()))
                    .collect::<Vec<_>>()
                    .join("; ")
            };
            result(e, d, mism.is_empty(), detail)
        }
        Expectation::OrderIndependent => {
            let mut r = b.empty_store()?;
            for (_, m) in b.messages().iter().rev() {
                if let Ingest::Rejected(x) = r.ingest(m.clone()) {
                    return Ok(result(e, d, false, format!("rejected: {x}")));
                }
            }
            let mut rc = Checker::new(checker.config());
            let same = r.fingerprint() == s.fingerprint()
                && rc.confirmed_set(&r) == checker.confirmed_set(s);
            result(e, d, same, String::new())
        }
        Expectation::Termination => result(e, d, false, "only meaningful for simulations".into()),
    })
}

// ---------------------------------------------------------------------------
// sim mode

fn run_sim(sc: &Scenario, opts: &RunOptions) -> Result<RunArtifacts, ScenarioError> {
    let Body::Sim(spec) = &sc.body else { unreachable!("checked by caller") };
    let mut spec = spec.clone();
    let seed = opts.seed.or(match spec.policy {
        Policy::SeededRandom(s) => Some(s),
        _ => None,
    });
    if let Some(p) = &opts.policy {
        spec.policy = match p.as_str() {
            "fifo" => Policy::Fifo,
            "random" => Policy::SeededRandom(seed.unwrap_or(0)),
            "scripted" => match &spec.policy {
                Policy::ScriptedDelay(r) => Policy::ScriptedDelay(r.clone()),
                _ => Policy::ScriptedDelay(Vec::new()),
            },
            other => return Err(ScenarioError::Config(format!("unknown policy `{other}`"))),
        };
    } else if let (Some(s), Policy::SeededRandom(_)) = (opts.seed, &spec.policy) {
        spec.policy = Policy::SeededRandom(s);
    }
    if let Some(h) = opts.horizon {
        spec.horizon = h;
    }
    if let Some(c) = opts.checker {
        spec.checker = c;
    }
    let bound = spec.budget_bound();
    if !sc.budget_unchecked {
        spec.check_budget()?;
    }
    let policy_name = spec.policy.name();
    let key_names: BTreeMap<PublicKey, String> =
        spec.agents.iter().map(|a| (key_for(&TestScheme, &a.name).0, a.name.clone())).collect();

    let mut w = World::new(spec)?;
    let outcome = w.run();

    let labels: BTreeMap<MessageId, String> = w.labels().iter().map(|(l, id)| (*id, l.clone())).collect();
    let label = |id: &MessageId| labels.get(id).cloned().unwrap_or_else(|| id.short());
    let observer = w.observer();
    let issuers: BTreeMap<MessageId, String> = w.issued().iter().map(|t| (t.id, t.issuer.clone())).collect();
    let hops_of = |w: &World, id: &MessageId| -> Option<u32> {
        observer
            .and_then(|o| w.observation(o, id))
            .or_else(|| issuers.get(id).and_then(|n| w.agent_id(n)).and_then(|a| w.observation(a, id)))
            .map(|o| o.hops)
    };

    let store = w.global_store().clone();
    let mut checker = Checker::new(w.spec().checker);
    let mut a = assess(&store, &mut checker, &label, opts.partitions);
    for t in &mut a.transactions {
        t.hops = hops_of(&w, &t.id);
    }

    let missing = w.unconfirmed_honest();
    let mut expectations = Vec::new();
    for e in &sc.expectations {
        let d = describe(&e.expectation);
        let r = match &e.expectation {
            Expectation::Status { label: l, status, hops } => match w.labels().get(l) {
                None => result(e, d, false, "no such transaction was issued".into()),
                Some(id) => {
                    let line = a.transactions.iter().find(|t| t.id == *id);
                    match line {
                        None => result(e, d, false, "never reached the network".into()),
                        Some(t) => {
                            let ok = t.status == *status && hops.is_none_or(|h| t.hops == Some(h));
                            let shown = t.hops.map_or("-".into(), |h| h.to_string());
                            result(e, d, ok, format!("got {} hops={shown}", t.status.as_str()))
                        }
                    }
                }
            },
            Expectation::Termination => {
                let shown: Vec<String> = missing.iter().take(5).map(|(n, id)| format!("{n}:{}", label(id))).collect();
                result(e, d, missing.is_empty(), if missing.is_empty() { String::new() } else { format!("missing {}", shown.join(",")) })
            }
            _ => result(e, d, false, "only meaningful for dag scenarios".into()),
        };
        expectations.push(r);
    }

    let (confirmed_value, unconfirmed_value, total_value) = values(&a.transactions);
    let mut failures = a.failures;
    if confirmed_value + unconfirmed_value != total_value {
        failures.push("transaction values do not reconcile".into());
    }
    let global_confirmed: BTreeSet<MessageId> = a
        .transactions
        .iter()
        .filter(|t| t.status == TxStatus::Confirmed)
        .map(|t| t.id)
        .collect();
    let tracked: BTreeSet<MessageId> = w.confirmed().iter().copied().filter(|id| *id != w.genesis_id()).collect();
    if w.spec().check_safety && tracked != global_confirmed {
        failures.push("confirmations tracked during the run differ from the final store".into());
    }
    let fees = w.fees();
    let policy = w.spec().fees;
    if !fees.conserves(&policy) {
        failures.push("fees paid out exceed the inflation bound".into());
    }
    if w.budget().replay() != w.budget().x() {
        failures.push("budget log does not replay to the tracked budget".into());
    }
    let fee_summary = FeeSummary {
        charged: fees.charged,
        distributed: fees.distributed,
        conserves: fees.conserves(&policy),
        accrued: fees
            .accrued
            .iter()
            .map(|(k, v)| (key_names.get(k).cloned().unwrap_or_else(|| k.short()), *v))
            .collect(),
    };
    let mut messages = vec![Message::Genesis(match store.entry(0).msg.as_ref() {
        Message::Genesis(g) => g.clone(),
        _ => unreachable!("simulations start from a genesis"),
    })];
    messages.extend(store.messages().cloned());

    Ok(RunArtifacts {
        report: Report {
            scenario: sc.name.clone(),
            mode: "sim",
            policy: Some(policy_name),
            steps: w.step_count(),
            outcome: Some(outcome),
            deadlock: outcome == Outcome::Horizon,
            undelivered: w.undelivered(),
            transactions: a.transactions,
            confirmed_value,
            unconfirmed_value,
            total_value,
            fees: Some(fee_summary),
            safety: w.safety().clone(),
            budget: Some(BudgetSummary {
                bound,
                tracked: w.budget().x(),
                total: w.budget().total(),
                respected: w.budget_respected(),
            }),
            bounds: a.bounds,
            invariant_failures: failures,
            expectations,
        },
        log: w.log().to_string(),
        messages,
        certificates: a.certificates,
    })
}

// ---------------------------------------------------------------------------
// rendering

pub fn render_text(r: &Report) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "scenario {}", r.scenario);
    let _ = writeln!(o, "mode {}", r.mode);
    if let Some(p) = &r.policy {
        let _ = writeln!(o, "policy {p}");
    }
    if let Some(out) = r.outcome {
        let out = match out {
            Outcome::Quiescent => "quiescent",
            Outcome::Horizon => "horizon",
        };
        let _ = writeln!(o, "run steps={} outcome={out} deadlock={} undelivered={}", r.steps, yes(r.deadlock), r.undelivered);
    }
    for t in &r.transactions {
        let _ = write!(o, "tx {} id={} status={} value={}", t.label, t.id.short(), t.status.as_str(), t.value);
        if let Some(h) = t.hops {
            let _ = write!(o, " hops={h}");
        }
        if let Some(c) = &t.certificate {
            let _ = write!(o, " acks={} stake={}/{} verified={}", c.acks.join(","), c.signed_sum, c.total, yes(c.verified));
        }
        o.push('\n');
    }
    let _ = writeln!(o, "value confirmed={} unconfirmed={} total={}", r.confirmed_value, r.unconfirmed_value, r.total_value);
    if let Some(f) = &r.fees {
        let _ = writeln!(o, "fees charged={} distributed={} conserves={}", f.charged, f.distributed, yes(f.conserves));
        for (v, amt) in &f.accrued {
            let _ = writeln!(o, "fee-share {v} {amt}");
        }
    }
    if let Some(b) = &r.budget {
        let _ = writeln!(o, "budget bound={} tracked={} total={} respected={}", b.bound, b.tracked, b.total, yes(b.respected));
    }
    if let Some(b) = &r.bounds {
        let _ = writeln!(
            o,
            "bounds partitions={} identical={} certifiable={} not-certifiable={} abstain={} contradictions={}",
            b.partitions,
            yes(b.identical_to_sequential),
            b.certifiable,
            b.not_certifiable,
            b.abstain,
            b.contradictions.len()
        );
    }
    if r.mode == "sim" {
        let _ = writeln!(o, "safety holds={} checks={}", yes(r.safety.holds()), r.safety.checks);
    }
    for v in &r.safety.violations {
        let _ = writeln!(o, "safety-violation {v}");
    }
    for f in &r.invariant_failures {
        let _ = writeln!(o, "invariant-failure {f}");
    }
    for e in &r.expectations {
        let _ = write!(o, "expect line={} {} {}", e.line, if e.passed { "pass" } else { "FAIL" }, e.description);
        if !e.detail.is_empty() {
            let _ = write!(o, " ({})", e.detail);
        }
        o.push('\n');
    }
    let verdict = match r.exit_code() {
        0 => "ok",
        1 => "mismatch",
        _ => "invariant-violation",
    };
    let _ = writeln!(o, "result {verdict}");
    o
}
