mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::fixture_path;

fn zk(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_zkinfer"));
    cmd.args(args).env_remove("ZKINFER_CONFIG");
    if let Some(c) = config {
        cmd.env("ZKINFER_CONFIG", c);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Self { _dir: dir, root }
    }

    fn p(&self, name: &str) -> String {
        self.root.join(name).to_str().unwrap().to_string()
    }

    fn write(&self, name: &str, body: &str) -> String {
        fs::write(self.root.join(name), body).unwrap();
        self.p(name)
    }

    /// compile -> witness -> prove on a fixture; returns (circuit, input,
    /// output, witness, proof).
    fn honest(&self, fixture: &str) -> [String; 5] {
        let m = fixture_path(&format!("{fixture}.json"));
        let i = fixture_path(&format!("{fixture}_input.json")).to_str().unwrap().to_string();
        let (c, o, w, p) = (self.p("c.txt"), self.p("out.json"), self.p("w.bin"), self.p("p.bin"));
        assert_eq!(code(&zk(&["compile", "-m", m.to_str().unwrap(), "-c", &c], None)), 0);
        assert_eq!(code(&zk(&["witness", "-c", &c, "-i", &i, "-o", &o, "-w", &w], None)), 0);
        assert_eq!(code(&zk(&["prove", "-c", &c, "-w", &w, "-p", &p], None)), 0);
        [c, i, o, w, p]
    }
}

fn verify(a: &[String; 5]) -> Output {
    zk(&["verify", "-c", &a[0], "-i", &a[1], "-o", &a[2], "-w", &a[3], "-p", &a[4]], None)
}

#[test]
fn honest_run_and_long_flags() {
    let r = Run::new();
    let a = r.honest("single_conv");
    let out = verify(&a);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("OK "));
    let long = zk(
        &["verify", "--circuit", &a[0], "--input", &a[1], "--output", &a[2], "--witness", &a[3], "--proof", &a[4]],
        None,
    );
    assert_eq!(code(&long), 0);
}

#[test]
fn rerun_is_byte_identical() {
    let r1 = Run::new();
    let r2 = Run::new();
    let a = r1.honest("single_gemm");
    let b = r2.honest("single_gemm");
    for k in [0, 2, 3, 4] {
        assert_eq!(fs::read(&a[k]).unwrap(), fs::read(&b[k]).unwrap(), "artifact {k} differs");
    }
    // No absolute paths leak into artifacts.
    let dir = r1.root.to_str().unwrap();
    for k in [0, 2] {
        assert!(!fs::read_to_string(&a[k]).unwrap().contains(dir));
    }
}

#[test]
fn json_mode_prints_counts_and_digest() {
    let r = Run::new();
    let c = r.p("c.txt");
    let m = fixture_path("single_gemm.json");
    let out = zk(&["--json", "compile", "-m", m.to_str().unwrap(), "-c", &c], None);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["counts"]["n_constraints"].as_u64().unwrap() > 0);
    assert!(v["total_cost"].as_u64().unwrap() > 0);
    assert_eq!(v["circuit_digest"].as_str().unwrap().len(), 64);
    assert!(v["seconds"].as_f64().is_some());
}

#[test]
fn compile_failures() {
    let r = Run::new();
    let c = r.p("c.txt");
    assert_eq!(code(&zk(&["compile", "-m", &r.p("missing.json"), "-c", &c], None)), 1);
    let bad = r.write("bad.json", "{ not json");
    assert_eq!(code(&zk(&["compile", "-m", &bad, "-c", &c], None)), 2);

    let softmax = r.write(
        "softmax.json",
        r#"{"format_version": 1, "input": {"name": "x", "shape": [1, 4]}, "output": "y",
            "nodes": [{"name": "sm", "op": "Softmax", "inputs": ["x"], "output": "y"}],
            "initializers": {}}"#,
    );
    let out = zk(&["compile", "-m", &softmax, "-c", &c], None);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("Softmax"));

    let huge = r.write(
        "huge.json",
        r#"{"format_version": 1, "input": {"name": "x", "shape": [1, 2]}, "output": "y",
            "nodes": [{"name": "fc", "op": "Gemm", "inputs": ["x", "w"], "output": "y"}],
            "initializers": {"w": {"shape": [2, 1], "data": [[1e6], [1.0]]}}}"#,
    );
    assert_eq!(code(&zk(&["compile", "-m", &huge, "-c", &c], None)), 4);

    let cfg = r.write("cfg.json", r#"{"quant": {"scale_exponent": 16, "nu": 32, "kappa": 32, "bogus": 1}}"#);
    let m = fixture_path("single_gemm.json");
    assert_eq!(code(&zk(&["--config", &cfg, "compile", "-m", m.to_str().unwrap(), "-c", &c], None)), 2);
    assert_eq!(code(&zk(&["compile", "-m", m.to_str().unwrap(), "-c", &c], Some(Path::new(&cfg)))), 2);
    assert_eq!(code(&zk(&["compile", "-m", &c, "-c", &c], None)), 2, "repeated path");
}

#[test]
fn witness_failures() {
    let r = Run::new();
    let a = r.honest("single_gemm");
    let (o, w) = (r.p("o2.json"), r.p("w2.bin"));
    let short = r.write("short.json", r#"{"input": [0.1, 0.2], "shape": [1, 2]}"#);
    assert_eq!(code(&zk(&["witness", "-c", &a[0], "-i", &short, "-o", &o, "-w", &w], None)), 5);
    let lying = r.write("lying.json", r#"{"input": [0.1, 0.2], "shape": [1, 4]}"#);
    assert_ne!(code(&zk(&["witness", "-c", &a[0], "-i", &lying, "-o", &o, "-w", &w], None)), 0);
    let big = r.write("big.json", r#"{"input": [0.1, 0.2, 5.0, 0.0], "shape": [1, 4]}"#);
    assert_eq!(code(&zk(&["witness", "-c", &a[0], "-i", &big, "-o", &o, "-w", &w], None)), 5);
    let garbage = r.write("garbage.json", "[1, 2");
    assert_eq!(code(&zk(&["witness", "-c", &a[0], "-i", &garbage, "-o", &o, "-w", &w], None)), 2);

    // Recompile at another scale and pair the new circuit with the old sidecar.
    let sidecar = format!("{}.qmodel.json", a[0]);
    let old = fs::read(&sidecar).unwrap();
    let cfg = r.write("s12.json", r#"{"quant": {"scale_exponent": 12, "nu": 32, "kappa": 32}}"#);
    let m = fixture_path("single_gemm.json");
    assert_eq!(code(&zk(&["--config", &cfg, "compile", "-m", m.to_str().unwrap(), "-c", &a[0]], None)), 0);
    fs::write(&sidecar, old).unwrap();
    assert_eq!(code(&zk(&["witness", "-c", &a[0], "-i", &a[1], "-o", &o, "-w", &w], None)), 6);
}

#[test]
fn prove_failures() {
    let r = Run::new();
    let a = r.honest("single_gemm");
    let p = r.p("p2.bin");
    let bytes = fs::read(&a[3]).unwrap();

    let trunc = r.p("trunc.bin");
    fs::write(&trunc, &bytes[..bytes.len() - 3]).unwrap();
    assert_eq!(code(&zk(&["prove", "-c", &a[0], "-w", &trunc, "-p", &p], None)), 2);

    // Flip a byte in the value area.
    let flipped = r.p("flip.bin");
    let mut f = bytes.clone();
    let at = f.len() - 40;
    f[at] ^= 0x01;
    fs::write(&flipped, &f).unwrap();
    let c = code(&zk(&["prove", "-c", &a[0], "-w", &flipped, "-p", &p], None));
    assert!(c == 7 || c == 6, "exit {c}");

    // Witness written for another circuit.
    let r2 = Run::new();
    let b = r2.honest("single_conv");
    assert_eq!(code(&zk(&["prove", "-c", &a[0], "-w", &b[3], "-p", &p], None)), 6);
    assert_eq!(code(&zk(&["prove", "-c", &a[0], "-w", &r.p("nope.bin"), "-p", &p], None)), 1);
}

#[test]
fn verify_rejections() {
    let r = Run::new();
    let a = r.honest("single_gemm");

    let mut out: serde_json::Value = serde_json::from_str(&fs::read_to_string(&a[2]).unwrap()).unwrap();
    out["output"][0] = serde_json::json!(out["output"][0].as_i64().unwrap() + 1);
    let edited = r.write("edited.json", &out.to_string());
    let o = zk(&["verify", "-c", &a[0], "-i", &a[1], "-o", &edited, "-w", &a[3], "-p", &a[4]], None);
    assert_eq!(code(&o), 8);
    assert!(stderr(&o).contains("io_digest"), "{}", stderr(&o));

    // Proof from another model's run.
    let r2 = Run::new();
    let b = r2.honest("single_conv");
    let o = zk(&["verify", "-c", &a[0], "-i", &a[1], "-o", &a[2], "-w", &a[3], "-p", &b[4]], None);
    assert_eq!(code(&o), 8);
    assert!(stderr(&o).contains("circuit_digest"), "{}", stderr(&o));

    let junk = r.write("junk.bin", "not a proof");
    assert_eq!(code(&zk(&["verify", "-c", &a[0], "-i", &a[1], "-o", &a[2], "-w", &a[3], "-p", &junk], None)), 2);
    let other_input = r.write("in2.json", r#"{"input": [0.5, 0.5, 0.5, 0.5], "shape": [1, 4]}"#);
    assert_eq!(code(&zk(&["verify", "-c", &a[0], "-i", &other_input, "-o", &a[2], "-w", &a[3], "-p", &a[4]], None)), 8);
}

#[test]
fn bench_writes_report() {
    let r = Run::new();
    let out = zk(
        &["bench", "--kind", "breadth", "--sizes", "8,6,12", "--iterations", "1", "--out", &r.p("bench")],
        None,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let md = fs::read_to_string(r.root.join("bench/report.md")).unwrap();
    assert!(md.contains("| 6 |") && md.contains("--"), "{md}");
    assert!(md.contains("h=6"));
    let records = zkinfer::bench::read_records(&r.root.join("bench/records.csv")).unwrap();
    assert_eq!(records.len(), 3);
    assert!(records[0].verify_s.is_some() && records[1].compile_s.is_none());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&zk(&["compile"], None)), 2);
    assert_eq!(code(&zk(&["frobnicate"], None)), 2);
    assert_eq!(code(&zk(&["--help"], None)), 0);
}
