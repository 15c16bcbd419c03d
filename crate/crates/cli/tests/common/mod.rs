#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn uem() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_uem"));
    c.env_remove("UEM_THREADS");
    c
}

pub fn run(args: &[&str]) -> Output {
    uem().args(args).output().expect("spawn uem")
}

pub fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "uem {args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8 stdout")
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf8 path")
}

/// Writes a synthetic dataset under `dir/name` and returns its directory.
pub fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["synth", "--out", p(&out)];
    args.extend_from_slice(extra);
    run_ok(&args);
    out
}

pub fn schema(name: &str) -> serde_json::Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{name}.schema.json"));
    serde_json::from_str(&std::fs::read_to_string(&path).expect("schema file")).expect("schema json")
}

/// Error messages for `instance` against the named shipped schema.
pub fn schema_errors(name: &str, instance: &serde_json::Value) -> Vec<String> {
    let v = jsonschema::validator_for(&schema(name)).expect("schema compiles");
    v.iter_errors(instance).map(|e| format!("{}: {e}", e.instance_path)).collect()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("json output")).expect("valid json")
}
