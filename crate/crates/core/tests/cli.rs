use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use abc_core::{ConfirmationCertificate, Message};

fn abc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abc")).args(args).output().expect("binary runs")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name).to_string_lossy().into_owned()
}

fn split_log(bytes: &[u8]) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut rest = bytes;
    while !rest.is_empty() {
        let n = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
        out.push(rest[4..4 + n].to_vec());
        rest = &rest[4 + n..];
    }
    out
}

fn join_log(parts: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in parts {
        out.extend_from_slice(&(p.len() as u32).to_be_bytes());
        out.extend_from_slice(p);
    }
    out
}

fn emit(dir: &Path, scenario: &str) -> PathBuf {
    let out = dir.join("out");
    let o = abc(&["run", &fixture(scenario), "--emit-certificates", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    out
}

#[test]
fn replay_figures_passes() {
    let o = abc(&["replay-figures"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), abc_core::scenario::FIGURES.len());
}

#[test]
fn emitted_certificate_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let out = emit(dir.path(), "fig2-double-spend.abc");
    let o = abc(&["verify", out.join("dag.bin").to_str().unwrap(), out.join("t2.cert").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn tampered_sum_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = emit(dir.path(), "fig2-double-spend.abc");
    let path = out.join("t1.cert");
    let mut cert = ConfirmationCertificate::decode(&std::fs::read(&path).unwrap()).unwrap();
    cert.signed_sum -= 2;
    std::fs::write(&path, cert.encode()).unwrap();
    let o = abc(&["verify", out.join("dag.bin").to_str().unwrap(), path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_ancestor_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = emit(dir.path(), "fig2-double-spend.abc");
    let parts = split_log(&std::fs::read(out.join("dag.bin")).unwrap());
    let cert = ConfirmationCertificate::decode(&std::fs::read(out.join("t2.cert")).unwrap()).unwrap();
    // drop the transaction V1 signs (t1), an ancestor of the certificate
    let t1 = parts
        .iter()
        .position(|p| matches!(Message::decode(p).unwrap(), Message::Transaction(_)) && Message::decode(p).unwrap().id() != cert.tx)
        .unwrap();
    let dropped = Message::decode(&parts[t1]).unwrap().id();
    let mut kept = parts.clone();
    kept.remove(t1);
    let pruned = dir.path().join("pruned.bin");
    std::fs::write(&pruned, join_log(&kept)).unwrap();
    let o = abc(&["verify", pruned.to_str().unwrap(), out.join("t2.cert").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(&dropped.to_string()));
}

#[test]
fn parse_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.abc");
    std::fs::write(&p, "abc-scenario 1\nmode dag\ntx label=t1\n").unwrap();
    let o = abc(&["run", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn missed_expectation_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("wrong.abc");
    let text = std::fs::read_to_string(fixture("fig2-double-spend.abc")).unwrap().replace(
        "expect label=t4 status=unconfirmed",
        "expect label=t4 status=confirmed",
    );
    std::fs::write(&p, text).unwrap();
    assert_eq!(abc(&["run", p.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn same_seed_same_log() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<(Option<i32>, Vec<u8>, Vec<u8>)> = (0..2)
        .map(|i| {
            let log = dir.path().join(format!("log{i}"));
            let o = abc(&["run", &fixture("single-payment.abc"), "--policy", "random", "--seed", "9", "--log", log.to_str().unwrap()]);
            (o.status.code(), o.stdout, std::fs::read(log).unwrap())
        })
        .collect();
    assert!(!runs[0].2.is_empty());
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = emit(dir.path(), "fig8-checkpoint.abc");
    let dag = out.join("dag.bin");
    let cp = split_log(&std::fs::read(&dag).unwrap())
        .iter()
        .map(|p| Message::decode(p).unwrap())
        .find(|m| matches!(m, Message::Checkpoint(_)))
        .unwrap();
    let o = abc(&["checkpoint", "bootstrap", dag.to_str().unwrap(), "--checkpoint", &cp.id().to_string()[..12]]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let Message::Checkpoint(c) = &cp else { unreachable!() };
    let frontier: Vec<String> = c.frontier.iter().map(|f| f.to_string()).collect();
    let made = dir.path().join("cp.bin");
    let o = abc(&[
        "checkpoint",
        "make",
        dag.to_str().unwrap(),
        "--frontier",
        &frontier.join(","),
        "--creator",
        "v2",
        "--out",
        made.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    // same frontier, same creator: the very same checkpoint
    assert_eq!(Message::decode(&std::fs::read(made).unwrap()).unwrap().id(), cp.id());
}
