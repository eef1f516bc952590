//! End-to-end checks of the command-line surface: exit codes, the
//! machine-readable format, and byte-for-byte determinism of seeded runs.

use std::path::PathBuf;
use std::process::Command;

fn corpus(name: &str) -> String {
    format!("{}/corpus/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn coeq(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_coeq"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn exit_codes_cover_the_contract() {
    // 0: accepted proof
    assert_eq!(coeq(&["demo", "fig5"]).status.code(), Some(0));
    // 1: rejected proof
    assert_eq!(coeq(&["demo", "sec53"]).status.code(), Some(1));
    // 2: parse error
    let bad = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("bad.strm");
    std::fs::write(&bad, "def a = tau tau\n").unwrap();
    assert_eq!(
        coeq(&["check", bad.to_str().unwrap(), &corpus("fig5.prf")])
            .status
            .code(),
        Some(2)
    );
    // 2: missing mandatory seed for the fuzzer
    assert_eq!(
        coeq(&["laws-fuzz", "--samples", "10"]).status.code(),
        Some(2)
    );
    // 3: universe cap exceeded
    let growing = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("growing.strm");
    std::fs::write(&growing, "def x = tau . (x ++ y)\ndef y = vis 0 . eps\n").unwrap();
    let out = coeq(&[
        "bisim",
        growing.to_str().unwrap(),
        "--rel",
        "eutt",
        "--pairs",
        "x,y",
        "--cap",
        "16",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn check_command_equals_demo_on_the_checked_in_corpus() {
    let out = coeq(&["check", &corpus("fig1.strm"), &corpus("fig5.prf")]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("proof accepted"), "{stdout}");
    assert!(stdout.contains("audit pass"), "{stdout}");
}

#[test]
fn machine_output_reports_the_rejection_site() {
    let out = coeq(&["--format", "machine", "demo", "sec53"]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        stdout.contains("step=2 rule=closure_U result=rejected reason=context-tag-violation"),
        "{stdout}"
    );
}

#[test]
fn bisim_membership_matches_the_engine() {
    let out = coeq(&[
        "bisim",
        &corpus("fig1.strm"),
        "--rel",
        "eutt",
        "--pairs",
        "s0,t0",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "true");
}

#[test]
fn universe_cap_environment_variable_is_honored() {
    let growing = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("growing2.strm");
    std::fs::write(&growing, "def x = tau . (x ++ y)\ndef y = vis 0 . eps\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_coeq"))
        .args([
            "bisim",
            growing.to_str().unwrap(),
            "--rel",
            "eutt",
            "--pairs",
            "x,y",
        ])
        .env("COEQ_UNIVERSE_CAP", "16")
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn seeded_machine_output_is_byte_identical() {
    let args = [
        "--format",
        "machine",
        "laws-fuzz",
        "--samples",
        "200",
        "--seed",
        "7",
        "--euttg-samples",
        "20",
    ];
    let a = coeq(&args);
    let b = coeq(&args);
    assert_eq!(
        a.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&a.stdout)
    );
    assert_eq!(a.stdout, b.stdout);

    let a = coeq(&["--format", "machine", "demo", "fig10"]);
    let b = coeq(&["--format", "machine", "demo", "fig10"]);
    assert_eq!(a.stdout, b.stdout);
}
