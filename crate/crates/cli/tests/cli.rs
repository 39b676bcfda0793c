use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dptree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dptree")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn invalid_eps_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.csv");
    let res = dptree(&["baseline-laplace", "--depth", "4", "--fixture", "zeros", "--eps", "-1", "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("invalid-parameter"));
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);

    let cfg = dir.path().join("e.toml");
    fs::write(
        &cfg,
        "mechanisms = [\"laplace\"]\neps = 0.0\nalpha = 0.5\neta = 0.05\ntrials = 5\nseed = 1\nout = \"r.csv\"\nfixtures = [\"zeros\"]\n[tree]\ndepths = [3]\n",
    )
    .unwrap();
    assert_eq!(dptree(&["run", "--config", s(&cfg)]).status.code(), Some(2));
    assert!(!dir.path().join("r.csv").exists());
}

#[test]
fn exit_codes_by_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cyc = dir.path().join("cyc.tsv");
    fs::write(&cyc, "a\tb\nb\ta\n").unwrap();
    let res = dptree(&["aggregate", "--tree", s(&cyc), "--fixture", "zeros"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("cycle"));

    let tree = dir.path().join("t.tsv");
    fs::write(&tree, "r\t-\na\tr\nb\tr\n").unwrap();
    let counts = dir.path().join("c.tsv");
    fs::write(&counts, "a\t-1\n").unwrap();
    let res = dptree(&["aggregate", "--tree", s(&tree), "--counts", s(&counts)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("negative-count"));

    let args = ["estimate", "--depth", "5", "--fixture", "zeros", "--alpha", "0.5", "--eta", "0.05", "--tau", "10", "--eps", "1"];
    assert_eq!(dptree(&args).status.code(), Some(3));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(dptree(&forced).status.code(), Some(0));

    let res = dptree(&["aggregate", "--depth", "40", "--generate", "complete-binary", "--fixture", "zeros"]);
    assert_eq!(res.status.code(), Some(4));

    // Usage errors share the input-error code.
    assert_eq!(dptree(&["estimate", "--depth", "3"]).status.code(), Some(2));
}

#[test]
fn aggregate_matches_hand_sums() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("t.tsv");
    fs::write(&tree, "r\t-\na\tr\nb\tr\n").unwrap();
    let counts = dir.path().join("c.tsv");
    fs::write(&counts, "a\t3\n").unwrap();
    let out = dir.path().join("w.csv");
    let res = dptree(&["aggregate", "--tree", s(&tree), "--counts", s(&counts), "--out", s(&out)]);
    assert!(res.status.success());
    let text = fs::read_to_string(&out).unwrap();
    let values: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(values, ["3.0", "3.0", "0.0"]);
}

#[test]
fn clamp_rejects_missing_raw_values() {
    let dir = tempfile::tempdir().unwrap();
    let tree = dir.path().join("t.tsv");
    fs::write(&tree, "r\t-\na\tr\nb\tr\n").unwrap();
    let raw = dir.path().join("raw.tsv");
    fs::write(&raw, "r\t1\na\t1\n").unwrap();
    let res = dptree(&["clamp", "--tree", s(&tree), "--fixture", "zeros", "--raw", s(&raw), "--eps", "1"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("`b`"));
}

#[test]
fn run_summaries_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("e.toml");
    fs::write(
        &cfg,
        "mechanisms = [\"laplace\", \"estimate\"]\neps = 1.0\nalpha = 0.5\neta = 0.05\ntrials = 300\nseed = 4\nout = \"r.csv\"\nfixtures = [\"zeros\", \"heavy-leaf:4\"]\n[tree]\ndepths = [7]\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("r{threads}.csv"));
        let res = dptree(&["--threads", threads, "run", "--config", s(&cfg), "--out", s(&out)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        outputs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.pop().unwrap()).unwrap();
    assert!(text.starts_with("node_id,metric,value,stderr,trials,eps,delta,alpha,eta,seed,d\n"));
    assert!(text.contains("*,estimate.precondition_met,1.0,"));
}
