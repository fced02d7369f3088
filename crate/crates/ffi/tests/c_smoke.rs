use std::path::Path;
use std::process::Command;

// Compiles a small C program against the generated header and the static
// library and runs it on a shipped fixture.
#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    // test builds refresh the copy next to the test binary; the one a level
    // up is only updated by plain builds and may be stale
    let deps = exe.parent().unwrap();
    let lib = [deps, deps.parent().unwrap()]
        .iter()
        .map(|d| d.join("libabc_ffi.a"))
        .find(|p| p.exists())
        .expect("static library built next to the tests");
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let st = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler is available");
    assert!(st.success());
    let fixture = manifest.join("../core/fixtures/fig2-double-spend.abc");
    let out = Command::new(&bin).arg(fixture).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
