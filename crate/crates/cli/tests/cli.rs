use std::path::Path;
use std::process::{Command, Output};

fn seaice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seaice")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path) {
    let o = seaice(&["synth", "--seed", "2", "--years", "3", "--rows", "16", "--cols", "16", "--out", p(dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn unknown_flags_fail_with_one_line() {
    let o = seaice(&["train", "--data", "x", "--out", "y", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: usage: "), "{err}");
}

#[test]
fn errors_name_their_category() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let o = seaice(&["train", "--data", p(&data), "--regime", "r", "--out", p(&tmp.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: precondition: "), "{}", stderr(&o));

    let o = seaice(&["evaluate", "--model", "trend9w2", "--data", p(&data), "--out", p(&tmp.path().join("e"))]);
    assert!(stderr(&o).starts_with("error: config: "), "{}", stderr(&o));

    let o = seaice(&["synth", "--years", "1", "--out", p(&tmp.path().join("s"))]);
    assert!(!o.status.success());
}

#[test]
fn baselines_evaluate_and_merge() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let mut dirs = Vec::new();
    for model in ["persistence", "climatology", "trend"] {
        let out = tmp.path().join(model);
        let o = seaice(&["evaluate", "--model", model, "--data", p(&data), "--out", p(&out), "--render", "2021-06-01"]);
        assert!(o.status.success(), "{}", stderr(&o));
        for f in ["summary.csv", "per_date.csv", "by_lead.csv", "month_lead.csv", "miz_month.csv"] {
            assert!(out.join(f).exists(), "{model}: {f}");
        }
        assert!(out.join("barents_2021-06-01_1.ppm").exists());
        dirs.push(out);
    }
    let summary = std::fs::read_to_string(dirs[0].join("summary.csv")).unwrap();
    assert_eq!(summary.lines().filter(|l| l.starts_with("persistence,barents,MAE,")).count(), 1);

    let merged = tmp.path().join("merged.csv");
    let mut args = vec!["report"];
    args.extend(dirs.iter().map(|d| p(d)));
    args.extend(["--out", p(&merged)]);
    let o = seaice(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let body = std::fs::read_to_string(&merged).unwrap();
    assert!(body.starts_with("model,region,metric,mean,std,runs\n"));
    // Persistence appears in all three summaries.
    assert!(body.lines().any(|l| l.starts_with("persistence,barents,MAE,") && l.ends_with(",3")), "{body}");
}

#[test]
fn train_forecast_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let run = tmp.path().join("run");
    let o = seaice(&[
        "--threads", "1", "train", "--data", p(&data), "--regime", "r", "--dout", "2", "--pretrain",
        p(&tmp.path().join("stage1")), "--pretrain-epochs", "1", "--finetune-epochs", "1", "--depth", "1", "--out",
        p(&run),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("stage1/best.sigw").exists());
    let manifest = seaice_core::kv::read(&run.join("manifest.txt")).unwrap();
    assert_eq!(manifest["regime"], "r");
    assert_eq!(manifest["d_out"], "2");

    let fc = tmp.path().join("fc");
    let o = seaice(&["forecast", "--checkpoint", p(&run), "--data", p(&data), "--base-date", "2021-05-10", "--out", p(&fc)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for lead in 1..=2 {
        let s = seaice_core::store::read_stack(&fc.join(format!("barents_2021-05-10_{lead}.sigs"))).unwrap();
        assert_eq!((s.rows, s.cols), (16, 16));
        assert!(s.channel("sic").unwrap().iter().filter(|v| v.is_finite()).all(|v| (0.0..=100.0).contains(v)));
    }
}
