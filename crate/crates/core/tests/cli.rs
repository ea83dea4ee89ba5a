use std::path::Path;
use std::process::{Command, Output};

use duse_core::cli::{self, parse_config, RunConfig};

const SMALL: &str = "\
# tiny run
encoder.layers = 2
encoder.model_dim = 16
encoder.heads = 2
encoder.ff_dim = 32
encoder.embed_dim = 8
encoder.max_seq_len = 20
htpc.n = 2
htpc.mapper_hidden = 16
lsea.heads = 2
train.classes = 3
train.clips_per_class = 4
train.eval_clips_per_class = 3
train.frames = 2
train.epochs = 2
train.batch = 4
";

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.conf");
    std::fs::write(&path, SMALL).unwrap();
    path
}

fn duse(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_duse"));
    cmd.args(args).env_remove("DUSE_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn train_then_eval_reproduces_final_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path());
    let out = dir.path().join("run");
    let overrides = vec![format!("paths.out={}", out.display())];
    let cfg = parse_config(Some(&conf), &overrides, None, false).unwrap();
    let trained = cli::cmd_train(&cfg).unwrap();
    let evaluated = cli::cmd_eval(&trained.checkpoint, &[]).unwrap();
    assert_eq!(evaluated, trained.report.final_metrics);

    let header = cfg.header();
    for file in ["metrics.csv", "metrics.json", "confusion.csv"] {
        let body = std::fs::read_to_string(out.join(file)).unwrap();
        assert!(body.lines().next().unwrap().contains(header.trim_start_matches("# ")), "{file}");
    }
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[1], "epoch,loss,uar,war");
    assert_eq!(lines.len(), 2 + cfg.epochs);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["history"].as_array().unwrap().len(), cfg.epochs);
    assert_eq!(json["final"]["war"].as_f64().unwrap(), trained.report.final_metrics.war);
}

#[test]
fn dump_writes_traces_and_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path());
    let out = dir.path().join("run");
    let cfg = parse_config(Some(&conf), &[format!("paths.out={}", out.display())], None, false).unwrap();
    let trained = cli::cmd_train(&cfg).unwrap();
    let dumped = cli::cmd_dump(&cfg, &trained.checkpoint).unwrap();
    assert_eq!(dumped.clips, 9);
    assert!(dumped.trace_written);

    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.lines().any(|l| l == "clip_id,frame,w"));
    assert!(trace.lines().any(|l| l == "clip_id,head,class,alpha"));
    let embed = std::fs::read_to_string(out.join("embed.csv")).unwrap();
    let rows: Vec<&str> = embed.lines().skip_while(|l| *l != "clip_id,label,x,y").skip(1).collect();
    assert_eq!(rows.len(), 9);
}

#[test]
fn header_hash_ignores_paths_and_tracks_the_seed() {
    let a = parse_config(None, &["paths.out=/tmp/a".into()], None, false).unwrap();
    let b = parse_config(None, &["paths.out=/tmp/b".into()], None, false).unwrap();
    assert_eq!(a.header(), b.header());
    let c = parse_config(None, &[], Some("11"), false).unwrap();
    assert_eq!(c.seed, 11);
    assert_ne!(c.hash(), a.hash());
    assert!(c.header().ends_with("seed=11"));
}

#[test]
fn binary_trains_evaluates_and_honours_the_seed_variable() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path());
    let out = dir.path().join("bin-run");
    let (conf, out_s) = (conf.to_str().unwrap(), out.to_str().unwrap());
    let train = duse(&["train", "--config", conf, "--out", out_s], &[("DUSE_SEED", "3")]);
    assert!(train.status.success(), "{}", text(&train.stderr));
    assert!(text(&train.stdout).contains("checkpoint"));
    let header = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(header.lines().next().unwrap().ends_with("seed=3"));

    let eval = duse(&["eval", "--out", out_s], &[]);
    assert!(eval.status.success(), "{}", text(&eval.stderr));
    assert!(text(&eval.stdout).starts_with("uar "));

    let dump = duse(&["dump", "--checkpoint", out.join("checkpoint.bin").to_str().unwrap(), "--out", out_s], &[]);
    assert!(dump.status.success(), "{}", text(&dump.stderr));
    assert!(out.join("embed.csv").exists());
}

#[test]
fn configuration_errors_exit_nonzero_and_name_the_key() {
    let cases: [(&[&str], &str); 4] = [
        (&["train", "--set", "lsea.beta=1.5"], "lsea.beta"),
        (&["train", "--set", "train.nonsense=1"], "train.nonsense"),
        (&["train", "--set", "encoder.layers=two"], "encoder.layers"),
        (&["train", "--set", "encoder.profile=large", "--set", "htpc.strategy=deep"], "htpc.strategy"),
    ];
    for (args, key) in cases {
        let out = duse(args, &[]);
        assert!(!out.status.success(), "{args:?}");
        assert!(text(&out.stderr).contains(key), "{args:?}: {}", text(&out.stderr));
    }
}

#[test]
fn force_deep_lifts_the_large_profile_exclusion() {
    let overrides = ["encoder.profile=large".to_string(), "htpc.strategy=deep".to_string()];
    assert!(parse_config(None, &overrides, None, false).is_err());
    assert!(parse_config(None, &overrides, None, true).is_ok());
}

#[test]
fn missing_checkpoint_and_unwritable_output_fail() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.bin");
    let out = duse(&["eval", "--checkpoint", missing.to_str().unwrap()], &[]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("none.bin"));

    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = RunConfig { out: blocker.join("sub"), ..RunConfig::default() };
    assert!(cli::cmd_train(&cfg).is_err());
}

#[test]
fn gradcheck_exit_code_follows_the_verdict() {
    let out = duse(&["gradcheck"], &[]);
    let stdout = text(&out.stdout);
    assert!(stdout.starts_with("max relative error"), "{stdout}");
    let passed = stdout.lines().next().unwrap().ends_with("(pass)");
    assert_eq!(out.status.success(), passed, "{stdout}");
}

#[test]
fn ablate_writes_one_row_per_beta() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_config(dir.path());
    let out = dir.path().join("abl");
    let res = duse(
        &["ablate", "--config", conf.to_str().unwrap(), "--set", "ablate.grid=beta", "--set", "train.epochs=1", "--out", out.to_str().unwrap()],
        &[],
    );
    assert!(res.status.success(), "{}", text(&res.stderr));
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 4);
    for (row, beta) in rows.iter().zip(["0.3", "0.5", "0.7", "0.9"]) {
        assert!(row.starts_with(&format!("beta={beta},")), "{row}");
    }
}
