//! Scenario files: a line-oriented text format describing either a
//! hand-built DAG (`mode dag`) or a simulated network run (`mode sim`),
//! plus the outcomes expected of it.
//!
//! ```text
//! abc-scenario 1
//! name single-payment
//! mode sim
//! policy fifo
//! validator name=v1
//! wallet name=alice
//! genesis owner=alice value=5 validator=v1
//! pay at=0 label=t1 from=alice to=bob:3 validator=v1
//! expect label=t1 status=confirmed hops=2
//! ```
//!
//! Every directive is one line: a keyword followed by `key=value` fields
//! and bare flags. Lists are comma separated; `#` starts a comment.

mod generate;
mod run;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::adversary::{AdversaryAction, BudgetViolation, ByzantineMode, Payment};
use crate::builder::BuildError;
use crate::checkpoint::CheckpointError;
use crate::confirm::TxStatus;
use crate::econ::{FeePolicy, Ratio};
use crate::netsim::{Action, AgentSpec, DelayRule, GenesisSpec, Policy, Role, SimError, SimSpec, TimedAction};

pub use generate::{random_dag, random_sim, DagParams, SimParams};
pub use run::{
    render_text, run_scenario, CertificateLine, ExpectationResult, Report, RunArtifacts, RunOptions, TxLine,
};

pub const HEADER: &str = "abc-scenario 1";

/// The worked-example scenarios shipped with the crate, by name.
pub const FIGURES: &[(&str, &str)] = &[
    ("fig1-spending", include_str!("../../fixtures/fig1-spending.abc")),
    ("fig2-double-spend", include_str!("../../fixtures/fig2-double-spend.abc")),
    ("fig3-certificates", include_str!("../../fixtures/fig3-certificates.abc")),
    ("fig4-contested", include_str!("../../fixtures/fig4-contested.abc")),
    ("fig8-checkpoint", include_str!("../../fixtures/fig8-checkpoint.abc")),
    ("single-payment", include_str!("../../fixtures/single-payment.abc")),
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Budget(#[from] BudgetViolation),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DagItem {
    Tx { label: String, inputs: Vec<String>, outputs: Vec<(String, u64)>, validator: String },
    Ack { label: String, validator: String, prev: Option<String>, signs: Vec<String> },
    /// Summary is computed from the messages defined so far.
    Checkpoint { label: String, creator: String, frontier: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DagScript {
    pub genesis: Vec<(String, u64, String)>,
    pub items: Vec<DagItem>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expectation {
    Status { label: String, status: TxStatus, hops: Option<u32> },
    /// Certificate for `label`, found in the store restricted to `view`
    /// (everything when empty).
    Certificate { label: String, view: Vec<String>, acks: Option<Vec<String>>, sum: Option<u64> },
    Depends { a: String, b: String, value: bool },
    Conflicts { a: String, b: String, value: bool },
    Past { of: Vec<String>, is: Vec<String> },
    Byzantine { validator: String, value: bool },
    /// Stake per validator in `past(view)`, with `excluding` and its
    /// spend-dependents erased when given.
    Stake { view: Vec<String>, excluding: Option<String>, stakes: Vec<(String, u64)> },
    Summary { checkpoint: String, entries: Vec<(String, u64)> },
    CheckpointConfirmed { label: String, value: bool },
    /// Bootstrapping from the checkpoint yields the full store's statuses.
    Bootstrap { checkpoint: String },
    /// Ingesting in reverse order yields the same store.
    OrderIndependent,
    /// Every honest transaction confirmed at every honest agent.
    Termination,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectLine {
    pub line: usize,
    pub expectation: Expectation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Dag(DagScript),
    Sim(SimSpec),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub body: Body,
    pub expectations: Vec<ExpectLine>,
    /// Skip the adversary budget precheck (for scenarios meant to break it).
    pub budget_unchecked: bool,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        Parser::default().parse(text)
    }

    pub fn is_sim(&self) -> bool {
        matches!(self.body, Body::Sim(_))
    }
}

struct Line<'a> {
    no: usize,
    keyword: &'a str,
    fields: BTreeMap<&'a str, &'a str>,
    flags: BTreeSet<&'a str>,
}

impl<'a> Line<'a> {
    fn err(&self, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Parse { line: self.no, message: message.into() }
    }

    fn req(&self, key: &str) -> Result<&'a str, ScenarioError> {
        self.fields
            .get(key)
            .copied()
            .ok_or_else(|| self.err(format!("`{}` needs `{key}=`", self.keyword)))
    }

    fn opt(&self, key: &str) -> Option<&'a str> {
        self.fields.get(key).copied()
    }

    fn num<T: std::str::FromStr>(&self, key: &str, v: &str) -> Result<T, ScenarioError> {
        v.parse().map_err(|_| self.err(format!("`{key}` is not a number: `{v}`")))
    }

    fn req_num<T: std::str::FromStr>(&self, key: &str) -> Result<T, ScenarioError> {
        self.num(key, self.req(key)?)
    }

    fn opt_num<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ScenarioError> {
        self.opt(key).map(|v| self.num(key, v)).transpose()
    }

    fn list(&self, key: &str) -> Vec<String> {
        self.opt(key).map(split_list).unwrap_or_default()
    }

    fn amounts(&self, key: &str) -> Result<Vec<(String, u64)>, ScenarioError> {
        split_list(self.req(key)?)
            .into_iter()
            .map(|item| {
                let (name, v) = item
                    .split_once(':')
                    .ok_or_else(|| self.err(format!("`{key}` entries look like name:amount")))?;
                Ok((name.to_string(), self.num(key, v)?))
            })
            .collect()
    }

    fn boolean(&self, key: &str) -> Result<bool, ScenarioError> {
        match self.opt(key).unwrap_or("yes") {
            "yes" | "true" => Ok(true),
            "no" | "false" => Ok(false),
            v => Err(self.err(format!("`{key}` must be yes or no, not `{v}`"))),
        }
    }

    fn ratio(&self, key: &str, default: Ratio) -> Result<Ratio, ScenarioError> {
        let Some(v) = self.opt(key) else { return Ok(default) };
        let (n, d) = v.split_once('/').unwrap_or((v, "1"));
        let r = Ratio::new(self.num(key, n)?, self.num(key, d)?);
        if r.den == 0 {
            return Err(self.err(format!("`{key}` has a zero denominator")));
        }
        Ok(r)
    }

    fn release(&self) -> Result<Option<u64>, ScenarioError> {
        match self.opt("release") {
            None | Some("never") => Ok(None),
            Some(v) => Ok(Some(self.num("release", v)?)),
        }
    }
}

fn split_list(v: &str) -> Vec<String> {
    v.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect()
}

fn status_of(l: &Line, v: &str) -> Result<TxStatus, ScenarioError> {
    match v {
        "confirmed" => Ok(TxStatus::Confirmed),
        "unconfirmed" => Ok(TxStatus::Unconfirmed),
        "unresolved" => Ok(TxStatus::Unresolved),
        _ => Err(l.err(format!("unknown status `{v}`"))),
    }
}

#[derive(Default)]
struct Parser {
    name: Option<String>,
    mode: Option<&'static str>,
    seed: Option<u64>,
    policy: Option<String>,
    delays: Vec<DelayRule>,
    horizon: Option<u64>,
    fees: Option<FeePolicy>,
    agents: Vec<AgentSpec>,
    genesis: Vec<GenesisSpec>,
    dag: Vec<DagItem>,
    actions: Vec<TimedAction>,
    expectations: Vec<ExpectLine>,
    observer: Option<String>,
    budget_unchecked: bool,
    safety_unchecked: bool,
}

impl Parser {
    fn parse(mut self, text: &str) -> Result<Scenario, ScenarioError> {
        let mut seen_header = false;
        for (i, raw) in text.lines().enumerate() {
            let no = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if !seen_header {
                if content != HEADER {
                    return Err(ScenarioError::Parse { line: no, message: format!("expected `{HEADER}`") });
                }
                seen_header = true;
                continue;
            }
            let mut words = content.split_whitespace();
            let keyword = words.next().expect("non-empty");
            let mut line = Line { no, keyword, fields: BTreeMap::new(), flags: BTreeSet::new() };
            let mut positional = Vec::new();
            for w in words {
                match w.split_once('=') {
                    Some((k, v)) => {
                        if line.fields.insert(k, v).is_some() {
                            return Err(line.err(format!("`{k}` given twice")));
                        }
                    }
                    None => {
                        line.flags.insert(w);
                        positional.push(w);
                    }
                }
            }
            self.directive(&line, &positional)?;
        }
        if !seen_header {
            return Err(ScenarioError::Parse { line: 0, message: format!("missing `{HEADER}` header") });
        }
        self.finish()
    }

    fn one<'a>(l: &Line, positional: &[&'a str]) -> Result<&'a str, ScenarioError> {
        match positional {
            [v] => Ok(v),
            _ => Err(l.err(format!("`{}` takes exactly one value", l.keyword))),
        }
    }

    fn sim_only(&self, l: &Line) -> Result<(), ScenarioError> {
        match self.mode {
            Some("sim") => Ok(()),
            _ => Err(l.err(format!("`{}` needs `mode sim` first", l.keyword))),
        }
    }

    fn dag_only(&self, l: &Line) -> Result<(), ScenarioError> {
        match self.mode {
            Some("dag") => Ok(()),
            _ => Err(l.err(format!("`{}` needs `mode dag` first", l.keyword))),
        }
    }

    fn agent(&mut self, l: &Line, role: Role) -> Result<(), ScenarioError> {
        let mut a = AgentSpec::new(l.req("name")?, role);
        a.honest = !l.flags.contains("adversary");
        a.mode = match l.opt("mode") {
            None if a.honest => ByzantineMode::Silent,
            None => ByzantineMode::SignAll,
            Some("silent") => ByzantineMode::Silent,
            Some("sign-all") => ByzantineMode::SignAll,
            Some("equivocate") => ByzantineMode::Equivocate,
            Some(m) => return Err(l.err(format!("unknown validator mode `{m}`"))),
        };
        a.joins_at = l.opt_num("join")?;
        a.leaves_at = l.opt_num("leave")?;
        if role == Role::Observer {
            self.observer.get_or_insert_with(|| a.name.clone());
        }
        self.agents.push(a);
        Ok(())
    }

    fn timed(&mut self, l: &Line, action: Action) -> Result<(), ScenarioError> {
        self.sim_only(l)?;
        self.actions.push(TimedAction { at: l.req_num("at")?, action });
        Ok(())
    }

    fn directive(&mut self, l: &Line, positional: &[&str]) -> Result<(), ScenarioError> {
        match l.keyword {
            "name" => self.name = Some(Self::one(l, positional)?.to_string()),
            "mode" => {
                self.mode = Some(match Self::one(l, positional)? {
                    "dag" => "dag",
                    "sim" => "sim",
                    m => return Err(l.err(format!("unknown mode `{m}`"))),
                })
            }
            "seed" => self.seed = Some(l.num("seed", Self::one(l, positional)?)?),
            "policy" => {
                let p = Self::one(l, positional)?;
                if !matches!(p, "fifo" | "random" | "scripted") {
                    return Err(l.err(format!("unknown policy `{p}`")));
                }
                self.policy = Some(p.to_string());
            }
            "delay" => self.delays.push(DelayRule {
                from: l.opt("from").map(str::to_string),
                to: l.opt("to").map(str::to_string),
                delay: l.req_num("steps")?,
            }),
            "horizon" => self.horizon = Some(l.num("horizon", Self::one(l, positional)?)?),
            "fee" => {
                let d = FeePolicy::default();
                self.fees = Some(FeePolicy {
                    base: l.opt_num("base")?.unwrap_or(d.base),
                    per_input: l.opt_num("per_input")?.unwrap_or(d.per_input),
                    per_output: l.opt_num("per_output")?.unwrap_or(d.per_output),
                    alpha: l.ratio("alpha", d.alpha)?,
                    theta: l.ratio("theta", d.theta)?,
                });
            }
            "budget" => match Self::one(l, positional)? {
                "unchecked" => self.budget_unchecked = true,
                v => return Err(l.err(format!("unknown budget option `{v}`"))),
            },
            "safety" => match Self::one(l, positional)? {
                "unchecked" => self.safety_unchecked = true,
                v => return Err(l.err(format!("unknown safety option `{v}`"))),
            },
            "validator" => self.agent(l, Role::Validator)?,
            "wallet" => self.agent(l, Role::Wallet)?,
            "observer" => self.agent(l, Role::Observer)?,
            "genesis" => self.genesis.push(GenesisSpec {
                owner: l.req("owner")?.to_string(),
                value: l.req_num("value")?,
                validator: l.req("validator")?.to_string(),
            }),
            "tx" => {
                self.dag_only(l)?;
                self.dag.push(DagItem::Tx {
                    label: l.req("label")?.into(),
                    inputs: l.list("inputs"),
                    outputs: l.amounts("outputs")?,
                    validator: l.req("validator")?.into(),
                });
            }
            "ack" => {
                self.dag_only(l)?;
                self.dag.push(DagItem::Ack {
                    label: l.req("label")?.into(),
                    validator: l.req("validator")?.into(),
                    prev: l.opt("prev").map(str::to_string),
                    signs: l.list("signs"),
                });
            }
            "checkpoint" if self.mode == Some("dag") => self.dag.push(DagItem::Checkpoint {
                label: l.req("label")?.into(),
                creator: l.req("creator")?.into(),
                frontier: l.list("frontier"),
            }),
            "checkpoint" => {
                let action = Action::Checkpoint { label: l.req("label")?.into(), creator: l.req("creator")?.into() };
                self.timed(l, action)?
            }
            "pay" => {
                let action = Action::Pay {
                    label: l.req("label")?.into(),
                    from: l.req("from")?.into(),
                    to: l.amounts("to")?,
                    validator: l.req("validator")?.into(),
                };
                self.timed(l, action)?
            }
            "doublespend" => {
                let labels = l.list("labels");
                let [a, b] = labels.as_slice() else {
                    return Err(l.err("`labels` needs exactly two labels"));
                };
                let payment = |key: &str| -> Result<Payment, ScenarioError> {
                    let v = l.req(key)?;
                    let (amt, validator) =
                        v.split_once('@').ok_or_else(|| l.err(format!("`{key}` looks like name:amount@validator")))?;
                    let (to, amount) =
                        amt.split_once(':').ok_or_else(|| l.err(format!("`{key}` looks like name:amount@validator")))?;
                    Ok(Payment { to: to.into(), amount: l.num(key, amount)?, validator: validator.into() })
                };
                let action = Action::Adversary(AdversaryAction::IssueDoubleSpend {
                    labels: (a.clone(), b.clone()),
                    wallet: l.req("wallet")?.into(),
                    first: payment("first")?,
                    second: payment("second")?,
                    first_to: l.list("first-to"),
                    second_to: l.list("second-to"),
                    release_after: l.release()?,
                });
                self.timed(l, action)?
            }
            "forkack" => {
                let action = Action::Adversary(AdversaryAction::ForkAckChain {
                    label: l.req("label")?.into(),
                    validator: l.req("validator")?.into(),
                    prev: l.opt("prev").map(str::to_string),
                    signs: l.list("signs"),
                    to: l.opt("to").map(split_list),
                    release_after: l.release()?,
                });
                self.timed(l, action)?
            }
            "signselective" => {
                let action = Action::Adversary(AdversaryAction::SignSelective {
                    label: l.req("label")?.into(),
                    validator: l.req("validator")?.into(),
                    signs: l.list("signs"),
                    to: l.list("to"),
                    release_after: l.release()?,
                });
                self.timed(l, action)?
            }
            "withhold" => {
                let action = Action::Adversary(AdversaryAction::Withhold {
                    message: l.req("message")?.into(),
                    until: l.req_num("until")?,
                });
                self.timed(l, action)?
            }
            "release" => {
                let action = Action::Adversary(AdversaryAction::ReleaseTo {
                    message: l.req("message")?.into(),
                    to: l.list("to"),
                });
                self.timed(l, action)?
            }
            "cut" => {
                let action = Action::Cut { from: l.req("from")?.into(), to: l.req("to")?.into() };
                self.timed(l, action)?
            }
            "join" => {
                let action = Action::Join(l.req("agent")?.into());
                self.timed(l, action)?
            }
            "leave" => {
                let action = Action::Leave(l.req("agent")?.into());
                self.timed(l, action)?
            }
            k if k.starts_with("expect") => {
                let e = self.expectation(l)?;
                self.expectations.push(ExpectLine { line: l.no, expectation: e });
            }
            k => return Err(l.err(format!("unknown directive `{k}`"))),
        }
        Ok(())
    }

    fn expectation(&self, l: &Line) -> Result<Expectation, ScenarioError> {
        let pair = || -> Result<(String, String), ScenarioError> { Ok((l.req("a")?.into(), l.req("b")?.into())) };
        Ok(match l.keyword {
            "expect" => {
                let hops = l.opt_num("hops")?;
                if hops.is_some() && self.mode != Some("sim") {
                    return Err(l.err("`hops` only applies to simulations"));
                }
                Expectation::Status { label: l.req("label")?.into(), status: status_of(l, l.req("status")?)?, hops }
            }
            "expect-certificate" => Expectation::Certificate {
                label: l.req("label")?.into(),
                view: l.list("view"),
                acks: l.opt("acks").map(split_list),
                sum: l.opt_num("sum")?,
            },
            "expect-depends" => {
                let (a, b) = pair()?;
                Expectation::Depends { a, b, value: l.boolean("value")? }
            }
            "expect-conflicts" => {
                let (a, b) = pair()?;
                Expectation::Conflicts { a, b, value: l.boolean("value")? }
            }
            "expect-past" => Expectation::Past { of: l.list("of"), is: l.list("is") },
            "expect-byzantine" => {
                Expectation::Byzantine { validator: l.req("validator")?.into(), value: l.boolean("value")? }
            }
            "expect-stake" => Expectation::Stake {
                view: l.list("view"),
                excluding: l.opt("excluding").map(str::to_string),
                stakes: l.amounts("stakes")?,
            },
            "expect-summary" => {
                Expectation::Summary { checkpoint: l.req("checkpoint")?.into(), entries: l.amounts("entries")? }
            }
            "expect-checkpoint" => {
                Expectation::CheckpointConfirmed { label: l.req("label")?.into(), value: l.boolean("confirmed")? }
            }
            "expect-bootstrap" => Expectation::Bootstrap { checkpoint: l.req("checkpoint")?.into() },
            "expect-order-independent" => Expectation::OrderIndependent,
            "expect-termination" => Expectation::Termination,
            k => return Err(l.err(format!("unknown expectation `{k}`"))),
        })
    }

    fn finish(self) -> Result<Scenario, ScenarioError> {
        let name = self.name.unwrap_or_else(|| "unnamed".into());
        let body = match self.mode {
            Some("dag") => {
                if !self.actions.is_empty() {
                    return Err(ScenarioError::Config("timed actions need `mode sim`".into()));
                }
                Body::Dag(DagScript {
                    genesis: self.genesis.into_iter().map(|g| (g.owner, g.value, g.validator)).collect(),
                    items: self.dag,
                })
            }
            Some("sim") => {
                let seed = self.seed.unwrap_or(0);
                let policy = match self.policy.as_deref() {
                    None | Some("fifo") if self.delays.is_empty() => Policy::Fifo,
                    Some("random") => Policy::SeededRandom(seed),
                    _ => Policy::ScriptedDelay(self.delays),
                };
                let mut spec = SimSpec::new(&name);
                spec.agents = self.agents;
                spec.genesis = self.genesis;
                spec.policy = policy;
                spec.horizon = self.horizon.unwrap_or(crate::netsim::DEFAULT_HORIZON);
                spec.actions = self.actions;
                spec.fees = self.fees.unwrap_or_default();
                spec.observer = self.observer;
                spec.check_safety = !self.safety_unchecked;
                Body::Sim(spec)
            }
            _ => return Err(ScenarioError::Config("missing `mode dag` or `mode sim`".into())),
        };
        Ok(Scenario { name, body, expectations: self.expectations, budget_unchecked: self.budget_unchecked })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sim_scenario() {
        let s = Scenario::parse(
            "abc-scenario 1\n# comment\nname demo\nmode sim\npolicy random\nseed 7\n\
             validator name=v1\nvalidator name=v2 adversary mode=equivocate\nwallet name=a\n\
             genesis owner=a value=5 validator=v1\n\
             pay at=3 label=t1 from=a to=a:2 validator=v1\n\
             doublespend at=4 labels=x,y wallet=a first=a:1@v1 second=a:1@v2 first-to=v1 second-to=v2 release=10\n\
             expect label=t1 status=confirmed hops=2\n",
        )
        .unwrap();
        let Body::Sim(spec) = &s.body else { panic!() };
        assert_eq!(spec.policy, Policy::SeededRandom(7));
        assert_eq!(spec.agents[1].mode, ByzantineMode::Equivocate);
        assert!(!spec.agents[1].honest);
        assert_eq!(spec.actions.len(), 2);
        assert_eq!(s.expectations.len(), 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Scenario::parse("abc-scenario 1\nmode dag\ntx label=t1\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Parse { line: 3, .. }), "{e}");
        let e = Scenario::parse("nonsense\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Parse { line: 1, .. }));
        let e = Scenario::parse("abc-scenario 1\nmode dag\nexpect label=t status=confirmed hops=2\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Parse { line: 3, .. }));
    }
}
