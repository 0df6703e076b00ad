use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qpolar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpolar")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn params_on_bec_file() {
    let dir = tempfile::tempdir().unwrap();
    let ch = dir.path().join("bec05.json");
    fs::write(&ch, r#"{"p":2,"m":1,"output_size":3,"transition":[[0.5,0,0.5],[0,0.5,0.5]],"input_dist":[0.5,0.5]}"#).unwrap();
    let out = qpolar(&["params", "--channel", s(&ch)]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["params"]["H"], serde_json::json!(0.5));
    assert_eq!(v["holder"]["pass"], serde_json::json!(true));
}

#[test]
fn malformed_channel_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let ch = dir.path().join("bad.json");
    fs::write(&ch, r#"{"p":2,"m":1,"output_size":2,"transition":[[0.5,0.5],[0.9,0.3]]}"#).unwrap();
    let out = qpolar(&["params", "--channel", s(&ch)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 1"));
}

#[test]
fn bad_flags_exit_one() {
    assert_eq!(qpolar(&["simulate", "--trials", "3"]).status.code(), Some(1));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let built = qpolar(&["construct", "--zchan", "0.4", "--n", "3", "--pi", "0.1", "--kernels", "random", "--seed", "3", "--out", s(&spec)]);
    assert!(built.status.success(), "{}", String::from_utf8_lossy(&built.stderr));
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for (out, jobs) in [(&a, "1"), (&b, "3")] {
        let r = qpolar(&["--jobs", jobs, "simulate", "--spec", s(&spec), "--zchan", "0.4", "--trials", "1", "--seed", "7", "--out", s(out)]);
        assert!(r.status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn encode_decode_over_noiseless_link() {
    let dir = tempfile::tempdir().unwrap();
    let ch = dir.path().join("clean.json");
    fs::write(&ch, r#"{"p":3,"m":1,"output_size":3,"transition":[[1,0,0],[0,1,0],[0,0,1]]}"#).unwrap();
    let spec = dir.path().join("spec.json");
    assert!(qpolar(&["construct", "--channel", s(&ch), "--n", "2", "--pi", "0.3", "--kernels", "random", "--seed", "1", "--out", s(&spec)])
        .status
        .success());
    let msg = dir.path().join("msg.json");
    fs::write(&msg, "[2,0,1,1]").unwrap();
    let word = dir.path().join("word.json");
    assert!(qpolar(&["encode", "--spec", s(&spec), "--message", s(&msg), "--seed", "5", "--out", s(&word)]).status.success());
    let back = dir.path().join("back.json");
    let r = qpolar(&["decode", "--spec", s(&spec), "--received", s(&word), "--channel", s(&ch), "--seed", "5", "--out", s(&back)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let got: Vec<u64> = serde_json::from_str(&fs::read_to_string(&back).unwrap()).unwrap();
    assert_eq!(got, vec![2, 0, 1, 1]);
}

#[test]
fn transform_and_kernel_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out = qpolar(&["transform", "--bec", "0.5", "--index", "2"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["path"], serde_json::json!([2]));
    let k = dir.path().join("k.json");
    assert!(qpolar(&["kernel", "--mode", "sample", "--q", "3", "--ell", "3", "--seed", "4", "--out", s(&k)]).status.success());
    let cert = qpolar(&["kernel", "--mode", "certify", "--kernel", s(&k), "--channel", s(&k)]);
    assert_eq!(cert.status.code(), Some(1));
    let cert = qpolar(&["kernel", "--mode", "search", "--bsc", "0.1", "--ell", "3", "--seed", "2"]);
    assert!(cert.status.success());
    let v: serde_json::Value = serde_json::from_slice(&cert.stdout).unwrap();
    assert_eq!(v["w_report"]["overall"], serde_json::json!(true));
}

#[test]
fn process_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let stats = dir.path().join("stats.csv");
    let r = qpolar(&[
        "process", "--bec", "0.5", "--n", "4", "--paths", "64", "--seed", "1", "--trace-out", s(&trace), "--stats-out", s(&stats),
    ]);
    assert!(r.status.success());
    let t = fs::read_to_string(&trace).unwrap();
    assert!(t.lines().nth(1).unwrap() == "depth,H,Z_mad,S_max,exact");
    assert_eq!(fs::read_to_string(&stats).unwrap().lines().count(), 6);
}

#[test]
fn verify_passes() {
    let out = qpolar(&["verify", "--seed", "2", "--channels", "6"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pass"], serde_json::json!(true));
}
