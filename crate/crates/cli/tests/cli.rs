use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

const TINY: &str = "\
# tiny architecture for fast runs
synth.scale=2
synth.hr_size=32
synth.count=3
corrector.channels=8
corrector.num_rg=1
corrector.rcabs_per_rg=1
corrector.reduction=4
sr.channels=8
sr.num_fsag=1
sr.fsabs_per_fsag=1
sr.heads=2
sr.window=4
sr.fab_squeeze_channels=2
sr.scale=2
train.batch=2
train.lr_patch=8
";

/// Runs the CLI in-process and returns (exit code, stdout).
fn lce(args: &[&str]) -> (u8, String) {
    let mut out = Vec::new();
    let argv = std::iter::once("lce").chain(args.iter().copied());
    let code = lce_cli::run(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Work {
    _tmp: TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

impl Work {
    fn new() -> Self {
        let tmp = TempDir::new().unwrap();
        let root = tmp.path().to_path_buf();
        let config = root.join("tiny.config");
        fs::write(&config, TINY).unwrap();
        let data = root.join("data");
        let (code, _) = lce(&["synth", "--config", s(&config), "--out", s(&data)]);
        assert_eq!(code, 0);
        Work {
            _tmp: tmp,
            root,
            config,
            data,
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn train_corrector(&self, out: &Path, steps: &str) -> PathBuf {
        let (code, stdout) = lce(&[
            "train", "--stage", "corrector", "--config", s(&self.config), "--data", s(&self.data), "--out", s(out),
            "--steps", steps,
        ]);
        assert_eq!(code, 0, "{stdout}");
        out.join("corrector.lcec")
    }
}

fn pngs(dir: &Path) -> usize {
    fs::read_dir(dir)
        .map(|d| d.filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count())
        .unwrap_or(0)
}

#[test]
fn synth_layout_and_determinism() {
    let w = Work::new();
    for sub in ["hr", "lr", "clr_gt"] {
        assert_eq!(pngs(&w.data.join(sub)), 3, "{sub}");
    }
    assert!(w.data.join("kernels/0002.lcet").exists());
    let resolved = fs::read_to_string(w.data.join("synth.config")).unwrap();
    assert!(resolved.contains("synth.count=3\n"));

    let again = w.path("again");
    let (code, stdout) = lce(&["synth", "--config", s(&w.config), "--out", s(&again)]);
    assert_eq!(code, 0);
    assert!(stdout.contains("wrote 3 triplet(s)"), "{stdout}");
    assert_eq!(
        fs::read(w.data.join("manifest.tsv")).unwrap(),
        fs::read(again.join("manifest.tsv")).unwrap()
    );
    assert_eq!(fs::read(w.data.join("lr/0001.png")).unwrap(), fs::read(again.join("lr/0001.png")).unwrap());

    // the resolved config reproduces the run
    let third = w.path("third");
    let (code, _) = lce(&["synth", "--config", s(&w.data.join("synth.config")), "--out", s(&third)]);
    assert_eq!(code, 0);
    assert_eq!(
        fs::read(w.data.join("manifest.tsv")).unwrap(),
        fs::read(third.join("manifest.tsv")).unwrap()
    );
}

#[test]
fn synth_empty_and_anisotropic() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty");
    let (code, _) = lce(&["synth", "--count", "0", "--out", s(&empty)]);
    assert_eq!(code, 0);
    let manifest = fs::read_to_string(empty.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 1, "header only: {manifest}");

    let aniso = tmp.path().join("aniso");
    let (code, stdout) = lce(&[
        "synth", "--kind", "anisotropic", "--count", "100", "--scale", "4", "--set", "synth.hr_size=32", "--out",
        s(&aniso),
    ]);
    assert_eq!(code, 0);
    assert!(stdout.contains("anisotropic"), "{stdout}");
    let manifest = fs::read_to_string(aniso.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 101);
}

#[test]
fn usage_and_config_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(lce(&["synth", "--set", "synth.bogus=1", "--out", s(&out)]).0, 2);
    assert_eq!(lce(&["synth", "--set", "seed=abc", "--out", s(&out)]).0, 2);
    assert_eq!(lce(&["nope"]).0, 2);
    assert_eq!(lce(&["verify", "everything"]).0, 2);
    assert_eq!(lce(&["train", "--stage", "decoder"]).0, 2);
    assert_eq!(lce(&["synth"]).0, 2, "missing --out");
    assert!(!out.exists());
}

#[test]
fn io_errors_exit_3() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("missing");
    assert_eq!(lce(&["eval", "--baseline", "bicubic", "--data", s(&missing)]).0, 3);
    assert_eq!(lce(&["info", "--config", s(&missing.join("a.config"))]).0, 3);
    assert_eq!(
        lce(&["eval", "--checkpoint", s(&missing.join("x.lcec")), "--data", s(&missing)]).0,
        3
    );
}

#[test]
fn corrector_smoke_run_writes_one_checkpoint() {
    let w = Work::new();
    let out = w.path("corr");
    let ck = w.train_corrector(&out, "10");
    assert!(ck.exists());
    let cks = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "lcec"))
        .count();
    assert_eq!(cks, 1);
    let loss = fs::read_to_string(out.join("corrector_loss.tsv")).unwrap();
    assert_eq!(loss.lines().next(), Some("step\tloss"));
    assert_eq!(loss.lines().count(), 11);
    let resolved = fs::read_to_string(out.join("corrector.config")).unwrap();
    assert!(resolved.contains("train.steps=10\n"));
    assert!(resolved.contains("train.lr_patch=8\n"));

    let (code, stdout) = lce(&["eval", "--checkpoint", s(&ck), "--data", s(&w.data), "--out", s(&out)]);
    assert_eq!(code, 0);
    assert!(stdout.contains("corrected LR vs CLR"), "{stdout}");
    let tsv = fs::read_to_string(out.join("corrector_metrics.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 5, "{tsv}");
    assert!(tsv.lines().last().unwrap().starts_with("mean\t"));
}

#[test]
fn resume_checks_the_config_digest() {
    let w = Work::new();
    let out = w.path("corr");
    let ck = w.train_corrector(&out, "2");
    let other = w.path("other");
    let (code, _) = lce(&[
        "train", "--stage", "corrector", "--config", s(&w.config), "--set", "corrector.channels=12", "--data",
        s(&w.data), "--out", s(&other), "--steps", "4", "--resume", s(&ck),
    ]);
    assert_eq!(code, 2);
    let (code, stdout) = lce(&[
        "train", "--stage", "corrector", "--config", s(&w.config), "--data", s(&w.data), "--out", s(&other),
        "--steps", "4", "--resume", s(&ck),
    ]);
    assert_eq!(code, 0, "{stdout}");
}

#[test]
fn sr_pipeline_eval_dump_and_analysis() {
    let w = Work::new();
    let corr = w.train_corrector(&w.path("corr"), "3");

    let sr_out = w.path("sr");
    let base = ["train", "--stage", "sr", "--config", s(&w.config), "--data", s(&w.data), "--out", s(&sr_out), "--steps", "3"];
    let (code, _) = lce(&[&base[..], &["--mode", "case3"]].concat());
    assert_eq!(code, 2, "case3 without a corrector is a usage error");

    // corrector trained for another architecture
    let wide = w.path("wide");
    let (code, _) = lce(&[
        "train", "--stage", "corrector", "--config", s(&w.config), "--set", "corrector.channels=12", "--data",
        s(&w.data), "--out", s(&wide), "--steps", "1",
    ]);
    assert_eq!(code, 0);
    let (code, _) = lce(&[&base[..], &["--corrector", s(&wide.join("corrector.lcec"))]].concat());
    assert_eq!(code, 2);

    let (code, stdout) = lce(&[&base[..], &["--corrector", s(&corr)]].concat());
    assert_eq!(code, 0, "{stdout}");
    let ck = sr_out.join("sr.lcec");

    let run_eval = |dir: &Path| {
        let dump = dir.join("dump");
        let (code, _) = lce(&["eval", "--checkpoint", s(&ck), "--data", s(&w.data), "--out", s(dir), "--dump", s(&dump)]);
        assert_eq!(code, 0);
        assert_eq!(pngs(&dump), 3);
        fs::read(dir.join("metrics.tsv")).unwrap()
    };
    let a = run_eval(&w.path("eval_a"));
    let b = run_eval(&w.path("eval_b"));
    assert_eq!(a, b, "reruns are byte-identical");
    assert_eq!(
        fs::read(w.path("eval_a/dump/0001.png")).unwrap(),
        fs::read(w.path("eval_b/dump/0001.png")).unwrap()
    );
    assert!(w.path("eval_a/eval.config").exists());

    // stdout mode prints only the table
    let (code, stdout) = lce(&["eval", "--baseline", "bicubic", "--data", s(&w.data)]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().next(), Some("image_id\tpsnr\tssim"));
    assert_eq!(stdout.lines().count(), 5);

    let an = w.path("analysis");
    let (code, stdout) = lce(&[
        "analyze", "--corrector", s(&corr), "--data", s(&w.data), "--out", s(&an), "--features-from", s(&ck),
        "--layers", "extractor.fab0,body.out",
    ]);
    assert_eq!(code, 0, "{stdout}");
    let stats = fs::read_to_string(an.join("lc_stats.tsv")).unwrap();
    for key in ["mu\t", "b\t", "high_freq_ratio\t"] {
        assert!(stats.lines().any(|l| l.starts_with(key)), "{key} in {stats}");
    }
    assert!(an.join("lr_gap_stats.tsv").exists());
    let hist = fs::read_to_string(an.join("lc_histogram.tsv")).unwrap();
    assert_eq!(hist.lines().count(), 1 + 201);
    assert_eq!(pngs(&an.join("features")), 16, "8 channels per selected layer");

    // the corrector checkpoint is not an SR model
    let (code, _) = lce(&["analyze", "--corrector", s(&ck), "--data", s(&w.data), "--out", s(&an)]);
    assert_eq!(code, 2);
}

#[test]
fn ablation_writes_three_checkpoints_and_a_table() {
    let w = Work::new();
    let corr = w.train_corrector(&w.path("corr"), "2");
    let out = w.path("ablation");
    let (code, stdout) = lce(&[
        "train", "--stage", "sr", "--modes", "case1,case2,case3", "--config", s(&w.config), "--data", s(&w.data),
        "--out", s(&out), "--corrector", s(&corr), "--steps", "2",
    ]);
    assert_eq!(code, 0, "{stdout}");
    for m in ["case1", "case2", "case3"] {
        assert!(out.join(m).join("sr.lcec").exists(), "{m}");
    }
    let table = fs::read_to_string(out.join("ablation.tsv")).unwrap();
    let lines: Vec<_> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("case1\tno\tno\t"));
    assert!(lines[3].starts_with("case3\tyes\tyes\t"));
}

#[test]
fn verify_and_info() {
    let (code, stdout) = lce(&["verify", "fft"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("[PASS] fft/parseval_rel"));
    let (code, stdout) = lce(&["verify", "params"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("fab_c144_params_rel_dev"));
    let (code, stdout) = lce(&["info", "--set", "mode=case1", "--height", "16", "--width", "16"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("corrector\t0\t0"), "{stdout}");
    assert!(stdout.contains("#Params"));
}

#[test]
fn binary_exit_codes_and_thread_env() {
    let bin = env!("CARGO_BIN_EXE_lce");
    let status = Command::new(bin).args(["verify", "kernels"]).output().unwrap().status;
    assert_eq!(status.code(), Some(0));
    let status = Command::new(bin).args(["verify", "fft"]).env("LCE_THREADS", "zero").output().unwrap().status;
    assert_eq!(status.code(), Some(2));
    let status = Command::new(bin).args(["verify", "fft"]).env("LCE_THREADS", "1").output().unwrap().status;
    assert_eq!(status.code(), Some(0));
    let status = Command::new(bin).arg("--help").output().unwrap().status;
    assert_eq!(status.code(), Some(0));
}
