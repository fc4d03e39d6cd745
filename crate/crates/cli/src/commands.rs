use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use lce_core::analysis::{correction_error, dump_feature_maps, ErrorAccumulator};
use lce_core::degrade::synth::{load_dataset, synth_dataset, Sample};
use lce_core::degrade::KernelShape;
use lce_core::io::checkpoint::Checkpoint;
use lce_core::nets::{CorrectorModel, LceModel, Mode};
use lce_core::train::{
    evaluate_bicubic, evaluate_corrector, evaluate_identity, evaluate_model, mean_metrics, metrics_tsv, model_tensors,
    train_corrector, train_sr, ImageMetrics, Resume, RunIo, Stage, TrainReport,
};
use lce_core::verify::{self, Check, MODEL_MULTADDS_REFERENCE, MODEL_PARAMS_REFERENCE};

use crate::config::{
    arch_metadata, config_from_checkpoint, corrector_digest, model_digest, write_text, RunConfig,
};
use crate::error::{CliError, CliResult};
use crate::{Baseline, Command, ConfigArgs, Suite};

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(|e| CliError::Io(format!("stdout: {e}")))
    };
}

pub fn dispatch(cmd: Command, out: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::Synth {
            config,
            out: dir,
            hr,
            count,
            kind,
            scale,
            seed,
        } => {
            let mut cfg = resolve(&config)?;
            set_opt(&mut cfg, "paths.out", dir.map(|p| p.display().to_string()))?;
            set_opt(&mut cfg, "paths.hr", hr.map(|p| p.display().to_string()))?;
            set_opt(&mut cfg, "synth.count", count)?;
            set_opt(&mut cfg, "synth.kind", kind)?;
            set_opt(&mut cfg, "synth.scale", scale)?;
            set_opt(&mut cfg, "seed", seed)?;
            synth(&cfg, out)
        }
        Command::Train {
            config,
            stage,
            mode,
            modes,
            data,
            test,
            out: dir,
            corrector,
            steps,
            seed,
            resume,
        } => {
            let stage: Stage = stage.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
            let mut cfg = resolve(&config)?;
            set_opt(&mut cfg, "mode", mode)?;
            set_opt(&mut cfg, "paths.data", data.map(|p| p.display().to_string()))?;
            set_opt(&mut cfg, "paths.test", test.map(|p| p.display().to_string()))?;
            set_opt(&mut cfg, "paths.out", dir.map(|p| p.display().to_string()))?;
            set_opt(&mut cfg, "paths.corrector", corrector.map(|p| p.display().to_string()))?;
            set_opt(&mut cfg, "train.steps", steps)?;
            set_opt(&mut cfg, "seed", seed)?;
            let modes = modes
                .iter()
                .map(|m| m.parse::<Mode>().map_err(|e| CliError::Usage(format!("{e}"))))
                .collect::<CliResult<Vec<_>>>()?;
            match stage {
                Stage::Corrector if !modes.is_empty() => Err(CliError::Usage("--modes applies to --stage sr".into())),
                Stage::Corrector => train_corrector_cmd(&cfg, resume.as_deref(), out),
                Stage::Sr if modes.is_empty() => train_sr_cmd(&cfg, resume.as_deref(), out).map(|_| ()),
                Stage::Sr if resume.is_some() => Err(CliError::Usage("--resume cannot be combined with --modes".into())),
                Stage::Sr => ablation(&cfg, &modes, out),
            }
        }
        Command::Eval {
            checkpoint,
            data,
            out: dir,
            dump,
            baseline,
        } => eval(checkpoint.as_deref(), &data, dir.as_deref(), dump.as_deref(), baseline, out),
        Command::Analyze {
            corrector,
            data,
            out: dir,
            features_from,
            layers,
            image,
        } => analyze(&corrector, &data, &dir, features_from.as_deref(), &layers, image, out),
        Command::Verify { suite } => verify_cmd(suite, out),
        Command::Info { config, height, width } => info(&resolve(&config)?, height, width, out),
    }
}

fn resolve(args: &ConfigArgs) -> CliResult<RunConfig> {
    RunConfig::resolve(&args.files, &args.overrides)
}

fn set_opt<V: ToString>(cfg: &mut RunConfig, key: &str, v: Option<V>) -> CliResult<()> {
    match v {
        Some(v) => cfg.set(key, &v.to_string()),
        None => Ok(()),
    }
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing {what} (flag or `{}` config key)", config_key(what))))
}

fn config_key(what: &str) -> &'static str {
    match what {
        "--data" => "paths.data",
        "--out" => "paths.out",
        _ => "paths.corrector",
    }
}

fn load_samples(dir: &Path) -> CliResult<Vec<Sample>> {
    Ok(load_dataset(dir)?)
}

/// Writes `text` to `dir/name`, or prints it when there is no directory.
fn emit(dir: Option<&Path>, name: &str, text: &str, out: &mut dyn Write) -> CliResult<()> {
    match dir {
        Some(d) => write_text(&d.join(name), text),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

fn synth(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let dir = require(&cfg.paths_out, "--out")?;
    let scfg = cfg.synth();
    let rows = synth_dataset(cfg.paths_hr.as_deref(), &scfg, dir)?;
    cfg.write(&dir.join("synth.config"), None)?;
    let d = scfg.distribution;
    say!(out, "wrote {} triplet(s) to {}", rows.len(), dir.display())?;
    say!(
        out,
        "scale x{}  noise sigma {}  kernel size {}  hr {}",
        scfg.scale,
        scfg.noise_sigma,
        d.size,
        if cfg.paths_hr.is_some() { "crops" } else { "procedural" }
    )?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in &rows {
        let spread = match r.kernel.shape {
            KernelShape::Isotropic { sigma } => sigma,
            KernelShape::Anisotropic { lambda1, lambda2, .. } => lambda1.max(lambda2),
        };
        lo = lo.min(spread);
        hi = hi.max(spread);
    }
    let label = match d.kind {
        lce_core::degrade::synth::KernelKind::Isotropic => "isotropic sigma",
        lce_core::degrade::synth::KernelKind::Anisotropic => "anisotropic max lambda",
    };
    if rows.is_empty() {
        say!(out, "{label}: no kernels drawn")
    } else {
        say!(out, "{label}: {lo:.4} .. {hi:.4}")
    }
}

fn report_training(stage: Stage, r: &TrainReport, dir: &Path, out: &mut dyn Write) -> CliResult<()> {
    let first = r.losses.first().map_or(f32::NAN, |l| l.1);
    let last = r.losses.last().map_or(f32::NAN, |l| l.1);
    say!(
        out,
        "{}: {} step(s), loss {first:.5} -> {last:.5}, {} checkpoint(s) in {}",
        stage.name(),
        r.losses.len(),
        r.checkpoints.len(),
        dir.display()
    )
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Ok(Checkpoint::load(path)?)
}

fn train_corrector_cmd(cfg: &RunConfig, resume: Option<&Path>, out: &mut dyn Write) -> CliResult<()> {
    let data = require(&cfg.paths_data, "--data")?;
    let dir = require(&cfg.paths_out, "--out")?;
    cfg.corrector.validate()?;
    let samples = load_samples(data)?;
    if samples.is_empty() {
        return Err(CliError::Config(format!("dataset {} is empty", data.display())));
    }
    let tcfg = cfg.train(Stage::Corrector);
    let mut model = CorrectorModel::<f32>::new(cfg.corrector, cfg.seed)?;
    let io = RunIo {
        out_dir: Some(dir),
        digest: corrector_digest(&cfg.corrector),
        metadata: arch_metadata(Stage::Corrector, cfg),
    };
    cfg.write(&dir.join("corrector.config"), Some(Stage::Corrector))?;
    let ck = resume.map(load_checkpoint).transpose()?;
    let report = train_corrector(&mut model, &samples, &tcfg, &io, ck.as_ref().map(|c| Resume { checkpoint: c }))?;
    report_training(Stage::Corrector, &report, dir, out)
}

/// A corrector checkpoint's weights, checked against the configured
/// architecture.
fn corrector_weights(cfg: &RunConfig) -> CliResult<Checkpoint> {
    let path = cfg.paths_corrector.as_deref().ok_or_else(|| {
        CliError::Usage(format!(
            "mode {} needs a trained corrector: run `lce train --stage corrector` first and pass its \
             corrector.lcec via --corrector (or paths.corrector)",
            cfg.mode
        ))
    })?;
    let ck = load_checkpoint(path)?;
    if ck.meta("stage") != Some(Stage::Corrector.name()) {
        return Err(CliError::Config(format!("{} is not a corrector checkpoint", path.display())));
    }
    if ck.digest != corrector_digest(&cfg.corrector) {
        return Err(CliError::Config(format!(
            "{} was trained with a different corrector architecture than the corrector.* keys in effect",
            path.display()
        )));
    }
    Ok(model_tensors(&ck))
}

fn build_sr_model(cfg: &RunConfig) -> CliResult<LceModel<f32>> {
    let mut model = LceModel::<f32>::new(cfg.lce(), cfg.seed)?;
    if cfg.mode.uses_corrector() {
        let ck = corrector_weights(cfg)?;
        let prefix = format!("{}.", CorrectorModel::<f32>::PREFIX);
        let loaded = model.store.load_prefix(&ck, &prefix)?;
        let expected = model.store.iter().filter(|(_, p)| p.name.starts_with(&prefix)).count();
        if loaded != expected {
            return Err(CliError::Config(format!(
                "corrector checkpoint supplied {loaded} of {expected} corrector tensors"
            )));
        }
    }
    Ok(model)
}

fn train_sr_cmd(cfg: &RunConfig, resume: Option<&Path>, out: &mut dyn Write) -> CliResult<LceModel<f32>> {
    let data = require(&cfg.paths_data, "--data")?;
    let dir = require(&cfg.paths_out, "--out")?;
    let samples = load_samples(data)?;
    if samples.is_empty() {
        return Err(CliError::Config(format!("dataset {} is empty", data.display())));
    }
    if let Some(s) = samples.iter().find(|s| s.row.scale != cfg.sr.scale) {
        return Err(CliError::Config(format!(
            "dataset scale x{} does not match sr.scale={}",
            s.row.scale, cfg.sr.scale
        )));
    }
    let mut model = build_sr_model(cfg)?;
    let io = RunIo {
        out_dir: Some(dir),
        digest: model_digest(&cfg.lce()),
        metadata: arch_metadata(Stage::Sr, cfg),
    };
    cfg.write(&dir.join("sr.config"), Some(Stage::Sr))?;
    let ck = resume.map(load_checkpoint).transpose()?;
    let report = train_sr(&mut model, &samples, &cfg.train(Stage::Sr), &io, ck.as_ref().map(|c| Resume { checkpoint: c }))?;
    report_training(Stage::Sr, &report, dir, out)?;
    Ok(model)
}

/// Header and rows of the ablation table.
pub fn ablation_tsv(rows: &[(Mode, f64, f64)]) -> String {
    let mut s = String::from("case\tcorrector\tclr_features\tpsnr\tssim\n");
    for (mode, psnr, ssim) in rows {
        let yes = |b: bool| if b { "yes" } else { "no" };
        let _ = writeln!(
            s,
            "{mode}\t{}\t{}\t{psnr:.6}\t{ssim:.6}",
            yes(mode.uses_corrector()),
            yes(*mode == Mode::Case3)
        );
    }
    s
}

fn ablation(cfg: &RunConfig, modes: &[Mode], out: &mut dyn Write) -> CliResult<()> {
    let dir = require(&cfg.paths_out, "--out")?.to_path_buf();
    let test_dir = cfg.paths_test.clone().or_else(|| cfg.paths_data.clone());
    let test = load_samples(require(&test_dir, "--data")?)?;
    let mut rows = Vec::new();
    for &mode in modes {
        let mut sub = cfg.clone();
        sub.mode = mode;
        sub.paths_out = Some(dir.join(mode.to_string()));
        let model = train_sr_cmd(&sub, None, out)?;
        let (psnr, ssim) = mean_metrics(&evaluate_model(&model, &test, None)?);
        say!(out, "{mode}: psnr {psnr:.4} dB  ssim {ssim:.4}")?;
        rows.push((mode, psnr, ssim));
    }
    write_text(&dir.join("ablation.tsv"), &ablation_tsv(&rows))
}

/// Rebuilds a model from a checkpoint's recorded architecture.
pub enum Loaded {
    Corrector(CorrectorModel<f32>),
    Sr(LceModel<f32>),
}

pub fn load_model(path: &Path) -> CliResult<(Loaded, RunConfig)> {
    let ck = model_tensors(&load_checkpoint(path)?);
    let (stage, cfg) = config_from_checkpoint(&ck)?;
    let incompatible = |e: lce_core::Error| {
        CliError::Config(format!("{} does not fit its recorded architecture: {e}", path.display()))
    };
    let model = match stage {
        Stage::Corrector => {
            let mut m = CorrectorModel::<f32>::new(cfg.corrector, 0)?;
            m.store.load_all(&ck).map_err(incompatible)?;
            Loaded::Corrector(m)
        }
        Stage::Sr => {
            let mut m = LceModel::<f32>::new(cfg.lce(), 0)?;
            m.store.load_all(&ck).map_err(incompatible)?;
            Loaded::Sr(m)
        }
    };
    Ok((model, cfg))
}

fn summarize(label: &str, rows: &[ImageMetrics], out: &mut dyn Write) -> CliResult<()> {
    let (p, s) = mean_metrics(rows);
    say!(out, "{label}: {} image(s), mean psnr {p:.4} dB, mean ssim {s:.4}", rows.len())
}

fn eval(
    checkpoint: Option<&Path>,
    data: &Path,
    dir: Option<&Path>,
    dump: Option<&Path>,
    baseline: Option<Baseline>,
    out: &mut dyn Write,
) -> CliResult<()> {
    let samples = load_samples(data)?;
    let mut quiet = std::io::sink();
    // keep stdout clean for the TSV when there is no output directory
    let log: &mut dyn Write = if dir.is_some() { &mut *out } else { &mut quiet };
    match (baseline, checkpoint) {
        (Some(_), Some(_)) => Err(CliError::Usage("--baseline and --checkpoint are exclusive".into())),
        (None, None) => Err(CliError::Usage("eval needs --checkpoint or --baseline".into())),
        (Some(Baseline::Bicubic), None) => {
            let scale = samples.first().map_or(1, |s| s.row.scale);
            if samples.iter().any(|s| s.row.scale != scale) {
                return Err(CliError::Config("dataset mixes scale factors".into()));
            }
            let rows = evaluate_bicubic(&samples, scale, dump)?;
            summarize("bicubic", &rows, log)?;
            emit(dir, "bicubic_metrics.tsv", &metrics_tsv(&rows), out)
        }
        (None, Some(path)) => {
            let (model, mut cfg) = load_model(path)?;
            cfg.paths_data = Some(data.to_path_buf());
            cfg.paths_out = dir.map(Path::to_path_buf);
            match model {
                Loaded::Corrector(m) => {
                    if dump.is_some() {
                        return Err(CliError::Usage("--dump applies to SR checkpoints".into()));
                    }
                    let rows = evaluate_corrector(&m, &samples)?;
                    let reference = evaluate_identity(&samples)?;
                    summarize("corrected LR vs CLR", &rows, log)?;
                    summarize("uncorrected LR vs CLR", &reference, log)?;
                    if let Some(d) = dir {
                        cfg.write(&d.join("eval.config"), None)?;
                        write_text(&d.join("lr_metrics.tsv"), &metrics_tsv(&reference))?;
                    }
                    emit(dir, "corrector_metrics.tsv", &metrics_tsv(&rows), out)
                }
                Loaded::Sr(m) => {
                    if let Some(s) = samples.iter().find(|s| s.row.scale != m.scale()) {
                        return Err(CliError::Config(format!(
                            "checkpoint is x{} but the dataset is x{}",
                            m.scale(),
                            s.row.scale
                        )));
                    }
                    let rows = evaluate_model(&m, &samples, dump)?;
                    summarize("sr", &rows, log)?;
                    if let Some(d) = dir {
                        cfg.write(&d.join("eval.config"), None)?;
                    }
                    emit(dir, "metrics.tsv", &metrics_tsv(&rows), out)
                }
            }
        }
    }
}

/// Error reports for the corrector output and for the raw LR input, both
/// measured against the ground-truth CLR.
fn analyze(
    corrector: &Path,
    data: &Path,
    dir: &Path,
    features_from: Option<&Path>,
    layers: &[String],
    image: usize,
    out: &mut dyn Write,
) -> CliResult<()> {
    let (model, mut cfg) = load_model(corrector)?;
    let Loaded::Corrector(model) = model else {
        return Err(CliError::Config(format!("{} is not a corrector checkpoint", corrector.display())));
    };
    let samples = load_samples(data)?;
    if samples.is_empty() {
        return Err(CliError::Config(format!("dataset {} is empty", data.display())));
    }
    let (mut lc, mut gap) = (ErrorAccumulator::new(), ErrorAccumulator::new());
    for s in &samples {
        let clr = model.infer(&s.triplet.lr)?.map(|v| v.clamp(0.0, 1.0));
        lc.add(&correction_error(&clr, &s.triplet.clr_gt)?)?;
        gap.add(&correction_error(&s.triplet.clr_gt, &s.triplet.lr)?)?;
    }
    let (lc, gap) = (lc.finish()?, gap.finish()?);
    let images = samples.len() as f64;
    lc.write(dir, "lc_", &[("images", images)])?;
    gap.write(dir, "lr_gap_", &[("images", images)])?;
    cfg.paths_data = Some(data.to_path_buf());
    cfg.paths_out = Some(dir.to_path_buf());
    cfg.paths_corrector = Some(corrector.to_path_buf());
    cfg.write(&dir.join("analyze.config"), None)?;
    for (label, r) in [("corrector error (clr_gt - clr)", &lc), ("lr gap (lr - clr_gt)", &gap)] {
        say!(
            out,
            "{label}: mu {:.3e}  b {:.3e}  high_freq_ratio {:.4}",
            r.mu,
            r.b,
            r.high_freq_ratio
        )?;
    }
    if let Some(path) = features_from {
        let (m, _) = load_model(path)?;
        let Loaded::Sr(m) = m else {
            return Err(CliError::Config(format!("{} is not an SR checkpoint", path.display())));
        };
        let s = samples
            .get(image)
            .ok_or_else(|| CliError::Usage(format!("--image {image} out of range ({} images)", samples.len())))?;
        let names: Vec<&str> = layers.iter().map(String::as_str).collect();
        let files = dump_feature_maps(&m, &s.triplet.lr, &names, &dir.join("features"))?;
        say!(out, "wrote {} feature map(s)", files.len())?;
    } else if !layers.is_empty() {
        return Err(CliError::Usage("--layers needs --features-from".into()));
    }
    Ok(())
}

pub fn suite_names(suite: Suite) -> Vec<&'static str> {
    match suite {
        Suite::Fft => vec!["fft"],
        Suite::Grad => vec!["grad"],
        Suite::Kernels => vec!["kernels"],
        Suite::Params => vec!["params"],
        Suite::Metrics => vec!["metrics"],
        Suite::Analysis => vec!["analysis"],
        Suite::All => verify::SUITES.to_vec(),
    }
}

fn verify_cmd(suite: Suite, out: &mut dyn Write) -> CliResult<()> {
    let mut checks: Vec<Check> = Vec::new();
    for name in suite_names(suite) {
        let found = verify::run_suite(name).expect("known suite")?;
        for c in &found {
            say!(out, "{c}")?;
        }
        checks.extend(found);
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    say!(out, "{} check(s), {failed} failed", checks.len())?;
    if failed > 0 {
        Err(CliError::Verify(failed))
    } else {
        Ok(())
    }
}

fn info(cfg: &RunConfig, h: usize, w: usize, out: &mut dyn Write) -> CliResult<()> {
    let model = LceModel::<f32>::new(cfg.lce(), 0)?;
    let m = model.count_multadds(h, w);
    let p = |prefixes: &[&str]| prefixes.iter().map(|x| model.store.count_prefix(x)).sum::<usize>();
    let rows = [
        ("corrector", p(&["corrector."]), m.corrector),
        ("clr_extractor", p(&["extractor.", "fuse."]), m.extractor),
        ("lr_branch", p(&["lr_branch."]), m.lr_branch),
        ("body", p(&["body."]), m.body),
        ("upsample", p(&["upsample.", "tail."]), m.upsample),
    ];
    say!(out, "mode {}  scale x{}  input {h}x{w}", cfg.mode, cfg.sr.scale)?;
    say!(out, "part\tparams\tmultadds")?;
    for (name, params, ma) in rows {
        say!(out, "{name}\t{params}\t{ma}")?;
    }
    let (total, total_ma) = (model.count_params(), m.total());
    say!(out, "total\t{total}\t{total_ma}")?;
    say!(
        out,
        "#Params {:.2}M (reference 14.66M, {:+.2}%)  Mult-Adds {:.2}G (reference 894.16G at 180x320, {:+.2}%)",
        total as f64 / 1e6,
        100.0 * (total as f64 - MODEL_PARAMS_REFERENCE) / MODEL_PARAMS_REFERENCE,
        total_ma as f64 / 1e9,
        100.0 * (total_ma as f64 - MODEL_MULTADDS_REFERENCE) / MODEL_MULTADDS_REFERENCE
    )
}
