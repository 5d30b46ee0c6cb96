use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: [&str; 8] = ["--d-model", "32", "--n-heads", "2", "--d-ff", "64", "--batch-size", "8"];

fn ilm(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ilm"))
        .args(args)
        .env("ILM_RUN_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn ilm")
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = ilm(root, args);
    assert!(out.status.success(), "ilm {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(root: &Path, args: &[&str]) -> i32 {
    ilm(root, args).status.code().unwrap()
}

fn gen(root: &Path, task: &str, dir: &str, n_train: &str) -> PathBuf {
    let out = root.join(dir);
    ok(root, &["gen-data", task, "--out-dir", out.to_str().unwrap(), "--n-train", n_train, "--n-test", "12"]);
    out
}

fn train(root: &Path, data: &Path, out: &Path, variant: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--data", data.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--variant", variant];
    args.extend(SMALL);
    args.extend(extra);
    ok(root, &args);
    out.join("model.ckpt")
}

fn jsonl(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn gen_data_is_deterministic_and_guarded() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let a = gen(root, "zebra", "a", "30");
    let b = gen(root, "zebra", "b", "30");
    for f in ["train.txt", "test.txt", "train.txt.manifest.json", "task.json", "vocab.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let a_str = a.to_str().unwrap();
    assert_eq!(code(root, &["gen-data", "zebra", "--out-dir", a_str]), 4);
    assert_eq!(code(root, &["gen-data", "zebra", "--out-dir", a_str, "--n-train", "5", "--force"]), 0);
    assert_eq!(fs::read_to_string(a.join("train.txt")).unwrap().lines().count(), 5);
    assert_eq!(code(root, &["gen-data", "star-unknown"]), 2);
}

#[test]
fn star_easy_default_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let dir = ok(root, &["gen-data", "star-easy"]);
    let dir = PathBuf::from(dir.trim());
    assert!(dir.starts_with(root), "default output lives under the run root");
    let count = |split: &str| {
        let m: Value = serde_json::from_str(&fs::read_to_string(dir.join(format!("{split}.txt.manifest.json"))).unwrap()).unwrap();
        m["count"].as_u64().unwrap()
    };
    assert_eq!((count("train"), count("test")), (50_000, 5_000));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = gen(root, "star-desk", "data", "64");
    let common = ["--log-every", "2", "--checkpoint-every", "4", "--lr", "1e-3"];
    let full = train(root, &data, &root.join("full"), "ilm", &[&common[..], &["--steps", "12"]].concat());
    train(root, &data, &root.join("split"), "ilm", &[&common[..], &["--steps", "6"]].concat());
    // a plain rerun must not clobber the existing run
    let split = root.join("split");
    let mut again = vec!["train", "--data", data.to_str().unwrap(), "--out-dir", split.to_str().unwrap()];
    again.extend(SMALL);
    assert_eq!(code(root, &again), 4);
    let resumed = train(root, &data, &root.join("split"), "ilm", &[&common[..], &["--steps", "12", "--resume"]].concat());
    assert_eq!(fs::read(&full).unwrap(), fs::read(&resumed).unwrap());
    let metrics = |d: &str| fs::read_to_string(root.join(d).join("metrics.jsonl")).unwrap();
    assert_eq!(metrics("full"), metrics("split"));
    assert_eq!(jsonl(&metrics("full")).len(), 6);

    let m: Value = serde_json::from_str(&fs::read_to_string(root.join("split/run.json")).unwrap()).unwrap();
    assert_eq!(m["step"], 12);
    for c in m["checkpoints"].as_array().unwrap() {
        assert!(root.join("split").join(c.as_str().unwrap()).exists());
    }
    assert!(Path::new(m["data_dir"].as_str().unwrap()).is_absolute());
}

#[test]
fn config_precedence_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = gen(root, "star-desk", "data", "16");
    let cfg = root.join("c.toml");
    fs::write(&cfg, "lr = 0.002\nsteps = 5\nvariant = \"arm\"\n").unwrap();
    let out = root.join("run");
    train(root, &data, &out, "mdm", &["--config", cfg.to_str().unwrap(), "--steps", "2"]);
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["lr"], 0.002, "file beats default");
    assert_eq!(m["config"]["steps"], 2, "flag beats file");
    assert_eq!(m["config"]["variant"], "mdm");
    assert_eq!(m["config"]["batch_size"], 8);
    // the snapshot reproduces the run
    let snap: Value = toml::from_str::<toml::Value>(&fs::read_to_string(out.join("config.toml")).unwrap())
        .map(|t| serde_json::to_value(t).unwrap())
        .unwrap();
    assert_eq!(snap, m["config"]);

    fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let d = data.to_str().unwrap();
    assert_eq!(code(root, &["train", "--data", d, "--config", cfg.to_str().unwrap()]), 2);
    assert_eq!(code(root, &["train", "--data", d, "--max-seq-len", "5", "--steps", "1"]), 2);
    assert_eq!(code(root, &["train", "--data", root.join("missing").to_str().unwrap()]), 3);
    assert_eq!(code(root, &["train", "--data", d, "--variant", "gpt"]), 2);
}

#[test]
fn sample_counts_seeds_and_decoder_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = gen(root, "star-desk", "data", "16");
    let ilm_ckpt = train(root, &data, &root.join("ilm"), "ilm", &["--steps", "2"]);
    let c = ilm_ckpt.to_str().unwrap();
    let traj = root.join("t.jsonl");
    let a = ok(root, &["sample", "--ckpt", c, "-n", "5", "--seed", "3", "--trajectories", traj.to_str().unwrap()]);
    assert_eq!(jsonl(&a).len(), 5);
    let b = ok(root, &["sample", "--ckpt", c, "-n", "5", "--seed", "3"]);
    assert_eq!(a, b);
    let t = jsonl(&fs::read_to_string(&traj).unwrap());
    assert_eq!(t.len(), 5);
    for (s, tr) in jsonl(&a).iter().zip(&t) {
        let n_tokens = s["text"].as_str().unwrap().split_whitespace().count();
        assert_eq!(tr["steps"].as_array().unwrap().len(), n_tokens);
    }
    assert_eq!(code(root, &["sample", "--ckpt", c, "--steps", "4"]), 2);

    let mdm = train(root, &data, &root.join("mdm"), "mdm", &["--steps", "2"]);
    let metrics = root.join("sweep.jsonl");
    let out = ok(root, &["sample", "--ckpt", mdm.to_str().unwrap(), "-n", "3", "--steps", "2,4,8", "--metrics", metrics.to_str().unwrap()]);
    assert_eq!(jsonl(&out).len(), 9);
    let sweep = jsonl(&fs::read_to_string(&metrics).unwrap());
    assert_eq!(sweep.iter().map(|r| r["steps"].as_u64().unwrap()).collect::<Vec<_>>(), vec![2, 4, 8]);
    assert!(sweep.iter().all(|r| r["seconds_per_token"].as_f64().unwrap() > 0.0));
    assert_eq!(code(root, &["sample", "--ckpt", mdm.to_str().unwrap(), "--top-k", "2"]), 2);
    assert_eq!(code(root, &["sample", "--ckpt", root.join("nope.ckpt").to_str().unwrap()]), 3);
}

#[test]
fn eval_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = gen(root, "stories", "data", "32");
    let ilm_ckpt = train(root, &data, &root.join("ilm"), "ilm", &["--steps", "2"]);
    let ev = train(root, &data, &root.join("ev"), "arm", &["--steps", "2"]);
    let (c, e) = (ilm_ckpt.to_str().unwrap(), ev.to_str().unwrap());

    assert_eq!(code(root, &["eval", "--mode", "generation", "--ckpt", c]), 2);
    assert_eq!(code(root, &["eval", "--mode", "infill", "--ckpt", c]), 2);

    let r: Value = serde_json::from_str(&ok(root, &["eval", "--mode", "infill", "--ckpt", c, "--evaluator", e, "-n", "6"])).unwrap();
    for k in ["d_nll_gt", "d_ent_gt", "d_nll_inp", "d_ent_inp"] {
        assert!(r["metrics"][k].is_number(), "{k} missing: {r}");
    }
    assert_eq!(r["nll_unit"], "nats/token");

    // plain-text samples; JSONL from `sample` is read the same way
    let samples = root.join("s.txt");
    fs::write(&samples, "once there was a cat .\n\nthe dog went home .\n").unwrap();
    let s = samples.to_str().unwrap();
    let r: Value = serde_json::from_str(&ok(root, &["eval", "--mode", "generation", "--samples", s, "--evaluator", e])).unwrap();
    assert!(r["metrics"]["nll"].as_f64().unwrap() > 0.0);
    assert_eq!(r["metrics"]["n_samples"], 2);
    let sampled = root.join("s.jsonl");
    ok(root, &["sample", "--ckpt", e, "-n", "4", "--out", sampled.to_str().unwrap()]);
    let r: Value =
        serde_json::from_str(&ok(root, &["eval", "--mode", "generation", "--samples", sampled.to_str().unwrap(), "--evaluator", e]))
            .unwrap();
    assert_eq!(r["metrics"]["n_samples"].as_u64().unwrap() + r["metrics"]["n_excluded"].as_u64().unwrap(), 4);

    let r: Value = serde_json::from_str(&ok(root, &["eval", "--mode", "accuracy", "--ckpt", c, "-n", "3"])).unwrap();
    assert_eq!(r["metrics"]["n"], 3);

    let empty = root.join("empty.txt");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(root, &["eval", "--mode", "accuracy", "--ckpt", c, "--test", empty.to_str().unwrap()]), 4);
}

#[test]
fn infill_fills_only_blanks() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = gen(root, "stories", "data", "16");
    let ilm_ckpt = train(root, &data, &root.join("ilm"), "ilm", &["--steps", "2"]);
    let mdm = train(root, &data, &root.join("mdm"), "mdm", &["--steps", "2"]);
    let input = root.join("tpl.txt");
    fs::write(&input, "once there was a <gap> went home .\n").unwrap();
    let out = jsonl(&ok(root, &["infill", "--ckpt", ilm_ckpt.to_str().unwrap(), "--input", input.to_str().unwrap()]));
    let text = out[0]["text"].as_str().unwrap();
    assert!(text.starts_with("once there was a") && text.ends_with("went home ."), "{text}");

    fs::write(&input, "once there was a <mask> <mask> went home .\n").unwrap();
    let out = jsonl(&ok(root, &["infill", "--ckpt", mdm.to_str().unwrap(), "--input", input.to_str().unwrap()]));
    let words: Vec<&str> = out[0]["text"].as_str().unwrap().split(' ').collect();
    assert_eq!(words.len(), 9);
    assert_eq!(&words[..4], ["once", "there", "was", "a"]);
    assert!(!words.contains(&"<mask>"));
}

#[test]
fn oracle_check_passes_and_guards() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let table = ok(root, &["oracle-check"]);
    assert_eq!(table.lines().filter(|l| l.ends_with("pass")).count(), 6);
    assert_eq!(code(root, &["oracle-check", "--max-len", "3", "--inject-slot-off-by-one"]), 4);
    assert_eq!(code(root, &["oracle-check", "--max-len", "7"]), 2);
}
