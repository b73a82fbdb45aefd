use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const EIGHT_RULES: &str = "\
@000 011
@000 101
@00* 11*
@110 ***
@111 ***
@*** 011
@*** 010
@0** 0**
";

fn tang(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tang"))
        .current_dir(dir)
        .env_remove("TANG_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tang(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str], command: &str) -> String {
    let out = tang(dir, args);
    assert!(!out.status.success(), "{args:?} should fail");
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with(&format!("error[{command}]: ")), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    err
}

fn eight_rules_dir() -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("eight_rules.txt"), EIGHT_RULES).unwrap();
    let universe: String = (0..8)
        .flat_map(|x| (0..8).map(move |y| format!("{x} {y}\n")))
        .collect();
    fs::write(dir.path().join("universe.txt"), universe).unwrap();
    let path = dir.path().to_path_buf();
    (dir, path)
}

fn field(csv: &str, row: usize, name: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == name).unwrap();
    lines
        .nth(row)
        .unwrap()
        .split(',')
        .nth(col)
        .unwrap()
        .to_string()
}

fn train_eight_rules(dir: &Path, out: &str) {
    ok(
        dir,
        &[
            "--out-dir",
            out,
            "train",
            "eight_rules.txt",
            "--schema",
            "p3,p3",
            "--trace",
            "universe.txt",
            "--neurons",
            "32",
        ],
    );
}

#[test]
fn build_eight_rules_reports_five_tuples() {
    let (_d, dir) = eight_rules_dir();
    let out = ok(&dir, &["build", "eight_rules.txt", "--schema", "p3,p3"]);
    assert!(out.contains("tuples=5 rules=8"), "{out}");
    assert!(out.starts_with("tuple\tsignature\trules\tmax_precedence\n"));
    assert!(dir.join("index.tss").exists());
    let inspected = ok(&dir, &["inspect", "index.tss"]);
    assert!(
        inspected.contains("tuples=5 rules=8 mismatches=0"),
        "{inspected}"
    );
}

#[test]
fn build_generated_counts_distinct_signatures() {
    let (_d, dir) = eight_rules_dir();
    ok(
        &dir,
        &[
            "--seed",
            "4",
            "gen",
            "--rules",
            "1000",
            "--uniform-signatures",
        ],
    );
    let text = fs::read_to_string(dir.join("rules.txt")).unwrap();
    let sigs: HashSet<(String, String)> = text
        .lines()
        .filter(|l| l.starts_with('@'))
        .map(|l| {
            let mut t = l.split_whitespace();
            let len = |tok: &str| tok.rsplit('/').next().unwrap().to_string();
            (len(t.next().unwrap()), len(t.next().unwrap()))
        })
        .collect();
    let out = ok(&dir, &["build", "rules.txt"]);
    assert!(
        out.contains(&format!("tuples={} rules=1000", sigs.len())),
        "{out}"
    );
}

#[test]
fn build_empty_ruleset_fails() {
    let (_d, dir) = eight_rules_dir();
    fs::write(dir.join("empty.txt"), "").unwrap();
    let err = fails(&dir, &["build", "empty.txt"], "build");
    assert!(err.contains("no rules"), "{err}");
}

#[test]
fn train_and_eval_eight_rules() {
    let (_d, dir) = eight_rules_dir();
    train_eight_rules(&dir, "a");
    let summary = fs::read_to_string(dir.join("a/train_summary.csv")).unwrap();
    let acc: f64 = field(&summary, 0, "accuracy").parse().unwrap();
    assert!(acc >= 0.95, "{summary}");
    assert_eq!(field(&summary, 0, "status"), "ok");

    let out = ok(
        &dir,
        &[
            "eval",
            "--index",
            "a/index.tss",
            "--model",
            "a/model.bin",
            "--trace",
            "universe.txt",
            "--name",
            "eight_rules",
        ],
    );
    let model: f64 = field(&out, 0, "model_acc").parse().unwrap();
    let class: f64 = field(&out, 0, "class_acc").parse().unwrap();
    assert!(class >= model, "{out}");
    assert_eq!(field(&out, 0, "tuple_count"), "5");
    assert_eq!(fs::read_to_string(dir.join("eval.csv")).unwrap(), out);
}

#[test]
fn training_is_reproducible() {
    let (_d, dir) = eight_rules_dir();
    train_eight_rules(&dir, "a");
    train_eight_rules(&dir, "b");
    for f in ["train_log.csv", "model.bin", "index.tss"] {
        assert_eq!(
            fs::read(dir.join("a").join(f)).unwrap(),
            fs::read(dir.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let log = fs::read_to_string(dir.join("a/train_log.csv")).unwrap();
    assert!(log.starts_with("round,epoch,lr,loss,eval_accuracy,alpha\n"));
}

#[test]
fn unreachable_target_is_flagged() {
    let (_d, dir) = eight_rules_dir();
    ok(&dir, &["gen", "--rules", "300", "--uniform-signatures"]);
    ok(
        &dir,
        &[
            "train",
            "rules.txt",
            "--packets",
            "500",
            "--epochs",
            "1",
            "--max-rounds",
            "1",
            "--beta",
            "0.999",
        ],
    );
    let summary = fs::read_to_string(dir.join("train_summary.csv")).unwrap();
    assert_eq!(field(&summary, 0, "status"), "below_threshold", "{summary}");
    assert_eq!(field(&summary, 0, "converged"), "false");
}

#[test]
fn eval_with_perfect_predictor() {
    let (_d, dir) = eight_rules_dir();
    ok(&dir, &["build", "eight_rules.txt", "--schema", "p3,p3"]);
    let out = ok(
        &dir,
        &[
            "eval",
            "--index",
            "index.tss",
            "--oracle",
            "--trace",
            "universe.txt",
        ],
    );
    assert_eq!(
        out.lines().next().unwrap(),
        "ruleset,model_acc,class_acc,tuple_count,mean_mem_accesses"
    );
    assert_eq!(field(&out, 0, "model_acc"), "1.000000");
    assert_eq!(field(&out, 0, "class_acc"), "1.000000");
}

#[test]
fn eval_errors() {
    let (_d, dir) = eight_rules_dir();
    ok(&dir, &["build", "eight_rules.txt", "--schema", "p3,p3"]);
    fails(
        &dir,
        &["eval", "--index", "index.tss", "--model", "missing.bin"],
        "eval",
    );
    fails(&dir, &["eval", "--index", "index.tss"], "eval");
    fails(&dir, &["eval", "--index", "nope.tss", "--oracle"], "eval");
}

#[test]
fn bench_verifies_and_reports() {
    let (_d, dir) = eight_rules_dir();
    train_eight_rules(&dir, ".");
    let out = ok(
        &dir,
        &[
            "bench",
            "--index",
            "index.tss",
            "--model",
            "model.bin",
            "--trace",
            "universe.txt",
            "--lanes",
            "1,4",
            "--batch-size",
            "16",
            "--baseline",
            "pstss,linear",
        ],
    );
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "engine,lanes,batch_size,packets,elapsed_s,mpps");
    let engines: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(engines, ["tang", "tang", "pstss", "linear"]);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(3) == Some("64")));

    let err = fails(
        &dir,
        &[
            "bench",
            "--index",
            "index.tss",
            "--oracle",
            "--baseline",
            "tcam",
        ],
        "bench",
    );
    assert!(err.contains("tcam"), "{err}");
}

#[test]
fn update_sim_script_with_injected_throughput() {
    let (_d, dir) = eight_rules_dir();
    ok(&dir, &["build", "eight_rules.txt", "--schema", "p3,p3"]);
    fs::write(
        dir.join("script.txt"),
        "+@000 100\n!throughput 10.23\n---\n+@100 0**\n-2\n!throughput 9.45\n",
    )
    .unwrap();
    let out = ok(
        &dir,
        &[
            "update-sim",
            "--index",
            "index.tss",
            "--oracle",
            "--script",
            "script.txt",
            "--packets-per-window",
            "200",
        ],
    );
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(
        lines[0],
        "window_index,packets,elapsed,throughput,decision_taken"
    );
    assert!(
        lines[1].starts_with("0,200,") && lines[1].ends_with(",10.230000,none"),
        "{out}"
    );
    assert!(
        lines[2].starts_with("1,200,") && lines[2].ends_with(",9.450000,incremental"),
        "{out}"
    );
    let detail = fs::read_to_string(dir.join("update_sim_detail.csv")).unwrap();
    assert_eq!(field(&detail, 0, "mismatch_count"), "0");
    assert_eq!(field(&detail, 1, "mismatch_count"), "1");
    assert_eq!(field(&detail, 1, "updates_applied"), "2");
}

#[test]
fn update_sim_immediate_only() {
    let (_d, dir) = eight_rules_dir();
    ok(&dir, &["gen", "--rules", "200"]);
    ok(&dir, &["build", "rules.txt"]);
    let out = ok(
        &dir,
        &[
            "update-sim",
            "--index",
            "index.tss",
            "--fixed-tuple",
            "0",
            "--no-deferred",
            "--windows",
            "4",
            "--churn",
            "20",
            "--packets-per-window",
            "1000",
        ],
    );
    assert_eq!(out.lines().count(), 5);
    assert!(out.lines().skip(1).all(|l| l.ends_with(",none")), "{out}");
    let detail = fs::read_to_string(dir.join("update_sim_detail.csv")).unwrap();
    let m: Vec<u64> = (0..4)
        .map(|r| field(&detail, r, "mismatch_count").parse().unwrap())
        .collect();
    assert!(m.windows(2).all(|w| w[0] <= w[1]), "{m:?}");
}

#[test]
fn update_sim_empty_script() {
    let (_d, dir) = eight_rules_dir();
    ok(&dir, &["build", "eight_rules.txt", "--schema", "p3,p3"]);
    fs::write(dir.join("empty.txt"), "# nothing\n").unwrap();
    let out = ok(
        &dir,
        &[
            "update-sim",
            "--index",
            "index.tss",
            "--oracle",
            "--script",
            "empty.txt",
        ],
    );
    assert_eq!(
        out,
        "window_index,packets,elapsed,throughput,decision_taken\n"
    );
}

#[test]
fn out_dir_from_environment() {
    let (_d, dir) = eight_rules_dir();
    let out = Command::new(env!("CARGO_BIN_EXE_tang"))
        .current_dir(&dir)
        .env("TANG_OUT_DIR", "envout")
        .args(["build", "eight_rules.txt", "--schema", "p3,p3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.join("envout/index.tss").exists());
}

#[test]
fn inspect_model() {
    let (_d, dir) = eight_rules_dir();
    train_eight_rules(&dir, ".");
    let out = ok(&dir, &["inspect", "model.bin"]);
    assert!(
        out.starts_with("model input_dim=2 neurons=32 blocks=2 classes=5"),
        "{out}"
    );
    fs::write(dir.join("junk.bin"), b"junk").unwrap();
    fails(&dir, &["inspect", "junk.bin"], "inspect");
}
