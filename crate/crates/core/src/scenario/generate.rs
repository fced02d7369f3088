//! Seeded random scenarios and DAGs for the property suites.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adversary::{AdversaryAction, ByzantineMode, Payment};
use crate::builder::{BuildError, DagBuilder};
use crate::econ::FeePolicy;
use crate::netsim::{Action, AgentSpec, GenesisSpec, Policy, Role, SimSpec, TimedAction};

#[derive(Debug, Clone, Copy)]
pub struct SimParams {
    /// Upper bound on agents of every kind.
    pub max_agents: usize,
    /// Upper bound on transactions issued.
    pub max_txs: usize,
    /// Include an adversarial validator and wallet.
    pub adversary: bool,
    /// Deliver in random order; otherwise oldest first.
    pub random_schedule: bool,
    pub fees: FeePolicy,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams { max_agents: 12, max_txs: 60, adversary: true, random_schedule: true, fees: FeePolicy::default() }
    }
}

/// A random scenario whose adversary provably stays below a third of the
/// stake (`SimSpec::check_budget` passes).
pub fn random_sim(seed: u64, p: &SimParams) -> SimSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = SimSpec::new(&format!("random-{seed}"));
    spec.fees = p.fees;
    spec.policy = if p.random_schedule { Policy::SeededRandom(rng.gen()) } else { Policy::Fifo };

    let budget = p.max_agents.max(4);
    let adversary_agents = if p.adversary { 2 } else { 0 };
    let room = budget - 1 - adversary_agents;
    let n_validators = rng.gen_range(3..=(room / 2).clamp(3, 5));
    let n_wallets = rng.gen_range(2..=(room - n_validators).clamp(2, 5));

    let validators: Vec<String> = (0..n_validators).map(|i| format!("v{i}")).collect();
    let wallets: Vec<String> = (0..n_wallets).map(|i| format!("w{i}")).collect();
    for v in &validators {
        spec.agents.push(AgentSpec::new(v, Role::Validator));
    }
    for w in &wallets {
        spec.agents.push(AgentSpec::new(w, Role::Wallet));
    }
    spec.agents.push(AgentSpec::new("obs", Role::Observer));

    let mut honest_total = 0u64;
    for w in &wallets {
        for _ in 0..rng.gen_range(1..=3) {
            let value = rng.gen_range(3..=20);
            honest_total += value;
            spec.genesis.push(GenesisSpec {
                owner: w.clone(),
                value,
                validator: validators.choose(&mut rng).expect("non-empty").clone(),
            });
        }
    }

    let mut adversary_value = 0;
    if p.adversary {
        let mut bad_v = AgentSpec::new("x-val", Role::Validator);
        bad_v.honest = false;
        bad_v.mode = *[ByzantineMode::Silent, ByzantineMode::SignAll, ByzantineMode::Equivocate]
            .choose(&mut rng)
            .expect("non-empty");
        let mut bad_w = AgentSpec::new("x-wal", Role::Wallet);
        bad_w.honest = false;
        spec.agents.push(bad_v);
        spec.agents.push(bad_w);
        // strictly below a third of the final total: 3a < honest + a
        let cap = (honest_total.saturating_sub(1)) / 2;
        let a = rng.gen_range(1..=cap.max(1)).min(cap);
        if a > 0 {
            let first = rng.gen_range(1..=a);
            spec.genesis.push(GenesisSpec { owner: "x-wal".into(), value: first, validator: "x-val".into() });
            if a > first {
                spec.genesis.push(GenesisSpec { owner: "x-wal".into(), value: a - first, validator: "x-val".into() });
            }
            adversary_value = a;
        }
    }

    let n_txs = rng.gen_range(1..=p.max_txs.max(1));
    let mut issued = 0;
    let mut labels: Vec<String> = Vec::new();
    let mut spare = {
        let m = honest_total + adversary_value;
        // adversary budget left for honest payments to the adversary
        ((m - 1) / 3).saturating_sub(adversary_value)
    };
    let mut at = 0u64;
    while issued < n_txs {
        at += rng.gen_range(0..30);
        if p.adversary && rng.gen_bool(0.25) && issued + 2 <= n_txs {
            let pick = |rng: &mut ChaCha8Rng| -> Vec<String> {
                let mut all: Vec<String> = validators.clone();
                all.push("x-val".into());
                all.into_iter().filter(|_| rng.gen_bool(0.5)).collect()
            };
            let payment = |rng: &mut ChaCha8Rng| Payment {
                to: wallets.choose(rng).expect("non-empty").clone(),
                amount: rng.gen_range(1..=3),
                validator: if rng.gen_bool(0.5) { "x-val".into() } else { validators.choose(rng).expect("non-empty").clone() },
            };
            let (a, b) = (format!("d{issued}a"), format!("d{issued}b"));
            let first = payment(&mut rng);
            let second = payment(&mut rng);
            let (first_to, second_to) = (pick(&mut rng), pick(&mut rng));
            let release_after = if rng.gen_bool(0.8) { Some(rng.gen_range(1..200)) } else { None };
            spec.actions.push(TimedAction {
                at,
                action: Action::Adversary(AdversaryAction::IssueDoubleSpend {
                    labels: (a.clone(), b.clone()),
                    wallet: "x-wal".into(),
                    first,
                    second,
                    first_to,
                    second_to,
                    release_after,
                }),
            });
            labels.push(a);
            labels.push(b);
            issued += 2;
            continue;
        }
        if p.adversary && !labels.is_empty() && rng.gen_bool(0.15) {
            let k = rng.gen_range(1..=3.min(labels.len()));
            let signs: Vec<String> = labels.choose_multiple(&mut rng, k).cloned().collect();
            let to: Vec<String> = validators.iter().filter(|_| rng.gen_bool(0.5)).cloned().collect();
            let action = if rng.gen_bool(0.5) {
                AdversaryAction::ForkAckChain {
                    label: format!("f{at}-{issued}"),
                    validator: "x-val".into(),
                    prev: None,
                    signs,
                    to: Some(to),
                    release_after: Some(rng.gen_range(1..100)),
                }
            } else {
                AdversaryAction::SignSelective {
                    label: format!("s{at}-{issued}"),
                    validator: "x-val".into(),
                    signs,
                    to,
                    release_after: if rng.gen_bool(0.7) { Some(rng.gen_range(1..100)) } else { None },
                }
            };
            spec.actions.push(TimedAction { at, action: Action::Adversary(action) });
            continue;
        }
        let from = wallets.choose(&mut rng).expect("non-empty").clone();
        let mut to = Vec::new();
        for _ in 0..rng.gen_range(1..=2) {
            let amount = rng.gen_range(1..=6);
            if p.adversary && spare >= amount && rng.gen_bool(0.1) {
                spare -= amount;
                to.push(("x-wal".to_string(), amount));
            } else {
                to.push((wallets.choose(&mut rng).expect("non-empty").clone(), amount));
            }
        }
        let label = format!("t{issued}");
        spec.actions.push(TimedAction {
            at,
            action: Action::Pay {
                label: label.clone(),
                from,
                to,
                validator: validators.choose(&mut rng).expect("non-empty").clone(),
            },
        });
        labels.push(label);
        issued += 1;
    }
    debug_assert!(spec.check_budget().is_ok(), "generator overshot the budget");
    spec
}

#[derive(Debug, Clone, Copy)]
pub struct DagParams {
    pub max_validators: usize,
    pub max_txs: usize,
    pub max_acks: usize,
    /// Chance that a transaction reuses an already spent output.
    pub conflict_rate: f64,
    /// Chance that an ack breaks its validator's chain.
    pub fork_rate: f64,
}

impl Default for DagParams {
    fn default() -> Self {
        DagParams { max_validators: 5, max_txs: 10, max_acks: 12, conflict_rate: 0.25, fork_rate: 0.1 }
    }
}

/// A random DAG: genesis, transactions (some conflicting) and acks, in an
/// order where every message follows its references.
pub fn random_dag(seed: u64, p: &DagParams) -> Result<DagBuilder, BuildError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = DagBuilder::default();
    let n_val = rng.gen_range(2..=p.max_validators.max(2));
    let validators: Vec<String> = (0..n_val).map(|i| format!("v{i}")).collect();
    let n_gen = rng.gen_range(2..=5);
    let mut unspent: Vec<(String, u64)> = Vec::new();
    let mut spent: Vec<(String, u64)> = Vec::new();
    let mut alloc = Vec::new();
    for i in 0..n_gen {
        let owner = format!("g{i}");
        let value = rng.gen_range(1..=6);
        alloc.push((owner.clone(), value, validators.choose(&mut rng).expect("non-empty").clone()));
        unspent.push((owner, value));
    }
    let alloc_ref: Vec<(&str, u64, &str)> = alloc.iter().map(|(o, v, val)| (o.as_str(), *v, val.as_str())).collect();
    b.genesis(&alloc_ref)?;

    let n_txs = rng.gen_range(1..=p.max_txs.max(1));
    let n_acks = rng.gen_range(1..=p.max_acks.max(1));
    let mut txs: Vec<String> = Vec::new();
    let mut last_ack: Vec<Option<String>> = vec![None; n_val];
    let mut own_acks: Vec<Vec<String>> = vec![Vec::new(); n_val];
    let (mut made_txs, mut made_acks) = (0, 0);
    let mut next_owner = 0;
    while made_txs < n_txs || made_acks < n_acks {
        let want_tx = made_acks >= n_acks || (made_txs < n_txs && (txs.is_empty() || rng.gen_bool(0.45)));
        if want_tx {
            let reuse = !spent.is_empty() && rng.gen_bool(p.conflict_rate);
            let (owner, value) = if reuse || unspent.is_empty() {
                match spent.choose(&mut rng) {
                    Some(x) => x.clone(),
                    None => break,
                }
            } else {
                let i = rng.gen_range(0..unspent.len());
                let x = unspent.swap_remove(i);
                spent.push(x.clone());
                x
            };
            let mut outs = Vec::new();
            let split = if value > 1 && rng.gen_bool(0.5) { rng.gen_range(1..value) } else { value };
            for v in [split, value - split] {
                if v > 0 {
                    let o = format!("o{next_owner}");
                    next_owner += 1;
                    outs.push((o.clone(), v));
                    unspent.push((o, v));
                }
            }
            let label = format!("t{made_txs}");
            let outs_ref: Vec<(&str, u64)> = outs.iter().map(|(o, v)| (o.as_str(), *v)).collect();
            b.tx(&label, &[&owner], &outs_ref, validators.choose(&mut rng).expect("non-empty"))?;
            txs.push(label);
            made_txs += 1;
        } else {
            let v = rng.gen_range(0..n_val);
            let k = rng.gen_range(1..=3.min(txs.len()));
            let signs: Vec<&str> = txs.choose_multiple(&mut rng, k).map(String::as_str).collect();
            let prev = if rng.gen_bool(p.fork_rate) {
                own_acks[v].choose(&mut rng).cloned().filter(|_| rng.gen_bool(0.5))
            } else {
                last_ack[v].clone()
            };
            let label = format!("a{made_acks}");
            b.ack(&label, &validators[v], prev.as_deref(), &signs)?;
            last_ack[v] = Some(label.clone());
            own_acks[v].push(label);
            made_acks += 1;
        }
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_scenarios_respect_budget() {
        for seed in 0..200 {
            let s = random_sim(seed, &SimParams::default());
            assert!(s.check_budget().is_ok(), "seed {seed}");
            assert!(s.agents.len() <= 12);
        }
    }

    #[test]
    fn generated_dags_build() {
        for seed in 0..100 {
            let b = random_dag(seed, &DagParams::default()).unwrap();
            b.store().unwrap();
        }
    }
}
