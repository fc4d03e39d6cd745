//! Flat `key=value` run configuration with dotted section prefixes.
//!
//! Every key has a default; files and `--set` overrides are applied in
//! order and unknown keys are rejected. Blank lines and `#` comments are
//! ignored in files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lce_core::degrade::synth::{KernelDistribution, KernelKind, SynthConfig};
use lce_core::io::checkpoint::{digest_text, Checkpoint, ConfigDigest};
use lce_core::nets::{CorrectorConfig, LceConfig, Mode, SrConfig};
use lce_core::train::{AdamConfig, Augment, Schedule, Stage, TrainConfig};

use crate::error::{CliError, CliResult};

/// Prefix of checkpoint metadata keys holding architecture settings.
pub const META_PREFIX: &str = "config.";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    pub synth_kind: KernelKind,
    pub synth_scale: usize,
    pub synth_noise_sigma: f64,
    pub synth_count: usize,
    pub synth_hr_size: usize,
    /// Range overrides; `None` takes the per-kind default.
    pub synth_sigma: Option<(f64, f64)>,
    pub synth_lambda: Option<(f64, f64)>,
    pub synth_theta: Option<(f64, f64)>,
    pub synth_kernel_size: Option<usize>,
    pub corrector: CorrectorConfig,
    pub sr: SrConfig,
    pub train_steps: Option<usize>,
    pub train_batch: Option<usize>,
    pub train_lr_patch: Option<usize>,
    pub train_lr: f64,
    pub train_milestones: Vec<f64>,
    pub train_adam: AdamConfig,
    pub train_augment: Augment,
    pub train_checkpoint_every: usize,
    pub paths_data: Option<PathBuf>,
    pub paths_test: Option<PathBuf>,
    pub paths_out: Option<PathBuf>,
    pub paths_hr: Option<PathBuf>,
    pub paths_corrector: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            mode: Mode::Case3,
            synth_kind: KernelKind::Isotropic,
            synth_scale: 4,
            synth_noise_sigma: 0.0,
            synth_count: 100,
            synth_hr_size: 256,
            synth_sigma: None,
            synth_lambda: None,
            synth_theta: None,
            synth_kernel_size: None,
            corrector: CorrectorConfig::default(),
            sr: SrConfig::default(),
            train_steps: None,
            train_batch: None,
            train_lr_patch: None,
            train_lr: Schedule::default().base,
            train_milestones: Schedule::default().milestones,
            train_adam: AdamConfig::default(),
            train_augment: Augment::default(),
            train_checkpoint_every: 0,
            paths_data: None,
            paths_test: None,
            paths_out: None,
            paths_hr: None,
            paths_corrector: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "mode",
    "synth.kind",
    "synth.scale",
    "synth.noise_sigma",
    "synth.count",
    "synth.hr_size",
    "synth.sigma_min",
    "synth.sigma_max",
    "synth.lambda_min",
    "synth.lambda_max",
    "synth.theta_min",
    "synth.theta_max",
    "synth.kernel_size",
    "corrector.channels",
    "corrector.num_rg",
    "corrector.rcabs_per_rg",
    "corrector.reduction",
    "corrector.input_residual",
    "sr.channels",
    "sr.num_fsag",
    "sr.fsabs_per_fsag",
    "sr.heads",
    "sr.window",
    "sr.mlp_ratio",
    "sr.fab_squeeze_channels",
    "sr.scale",
    "train.steps",
    "train.batch",
    "train.lr_patch",
    "train.lr",
    "train.milestones",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.flips",
    "train.rotations",
    "train.checkpoint_every",
    "paths.data",
    "paths.test",
    "paths.out",
    "paths.hr",
    "paths.corrector",
];

fn parse<T: FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse()
        .map_err(|_| CliError::Config(format!("invalid value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> CliResult<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Config(format!("invalid boolean `{v}` for `{key}`"))),
    }
}

fn parse_auto(key: &str, v: &str) -> CliResult<Option<usize>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn set_lo(slot: &mut Option<(f64, f64)>, dflt: (f64, f64), lo: f64) {
    slot.get_or_insert(dflt).0 = lo;
}

fn set_hi(slot: &mut Option<(f64, f64)>, dflt: (f64, f64), hi: f64) {
    slot.get_or_insert(dflt).1 = hi;
}

impl RunConfig {
    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        let d = self.distribution_defaults();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "mode" => self.mode = v.parse().map_err(|e| CliError::Config(format!("{e}")))?,
            "synth.kind" => self.synth_kind = KernelKind::parse(v).map_err(|e| CliError::Config(format!("{e}")))?,
            "synth.scale" => self.synth_scale = parse(key, v)?,
            "synth.noise_sigma" => self.synth_noise_sigma = parse(key, v)?,
            "synth.count" => self.synth_count = parse(key, v)?,
            "synth.hr_size" => self.synth_hr_size = parse(key, v)?,
            "synth.sigma_min" => set_lo(&mut self.synth_sigma, d.sigma, parse(key, v)?),
            "synth.sigma_max" => set_hi(&mut self.synth_sigma, d.sigma, parse(key, v)?),
            "synth.lambda_min" => set_lo(&mut self.synth_lambda, d.lambda, parse(key, v)?),
            "synth.lambda_max" => set_hi(&mut self.synth_lambda, d.lambda, parse(key, v)?),
            "synth.theta_min" => set_lo(&mut self.synth_theta, d.theta, parse(key, v)?),
            "synth.theta_max" => set_hi(&mut self.synth_theta, d.theta, parse(key, v)?),
            "synth.kernel_size" => self.synth_kernel_size = Some(parse(key, v)?),
            "corrector.channels" => self.corrector.channels = parse(key, v)?,
            "corrector.num_rg" => self.corrector.num_rg = parse(key, v)?,
            "corrector.rcabs_per_rg" => self.corrector.rcabs_per_rg = parse(key, v)?,
            "corrector.reduction" => self.corrector.reduction = parse(key, v)?,
            "corrector.input_residual" => self.corrector.input_residual = parse(key, v)?,
            "sr.channels" => self.sr.channels = parse(key, v)?,
            "sr.num_fsag" => self.sr.num_fsag = parse(key, v)?,
            "sr.fsabs_per_fsag" => self.sr.fsabs_per_fsag = parse(key, v)?,
            "sr.heads" => self.sr.heads = parse(key, v)?,
            "sr.window" => self.sr.window = parse(key, v)?,
            "sr.mlp_ratio" => self.sr.mlp_ratio = parse(key, v)?,
            "sr.fab_squeeze_channels" => self.sr.fab_squeeze_channels = parse(key, v)?,
            "sr.scale" => self.sr.scale = parse(key, v)?,
            "train.steps" => self.train_steps = parse_auto(key, v)?,
            "train.batch" => self.train_batch = parse_auto(key, v)?,
            "train.lr_patch" => self.train_lr_patch = parse_auto(key, v)?,
            "train.lr" => self.train_lr = parse(key, v)?,
            "train.milestones" => {
                self.train_milestones = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|m| parse(key, m.trim())).collect::<CliResult<_>>()?
                }
            }
            "train.beta1" => self.train_adam.beta1 = parse(key, v)?,
            "train.beta2" => self.train_adam.beta2 = parse(key, v)?,
            "train.eps" => self.train_adam.eps = parse(key, v)?,
            "train.flips" => self.train_augment.flips = parse_bool(key, v)?,
            "train.rotations" => self.train_augment.rotations = parse_bool(key, v)?,
            "train.checkpoint_every" => self.train_checkpoint_every = parse(key, v)?,
            "paths.data" => self.paths_data = opt_path(v),
            "paths.test" => self.paths_test = opt_path(v),
            "paths.out" => self.paths_out = opt_path(v),
            "paths.hr" => self.paths_hr = opt_path(v),
            "paths.corrector" => self.paths_corrector = opt_path(v),
            other => return Err(CliError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` string as given to `--set`.
    pub fn set_pair(&mut self, pair: &str) -> CliResult<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected key=value, got `{pair}`")))?;
        self.set(k, v)
    }

    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.set_pair(line)
                .map_err(|e| CliError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Defaults, then each config file, then each override.
    pub fn resolve(files: &[PathBuf], overrides: &[String]) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        for f in files {
            let text = std::fs::read_to_string(f).map_err(|e| CliError::Io(format!("{}: {e}", f.display())))?;
            cfg.apply_text(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", f.display())))?;
        }
        for o in overrides {
            cfg.set_pair(o)?;
        }
        Ok(cfg)
    }

    fn distribution_defaults(&self) -> KernelDistribution {
        KernelDistribution::defaults(self.synth_kind, self.synth_scale)
    }

    pub fn distribution(&self) -> KernelDistribution {
        let mut d = self.distribution_defaults();
        if let Some(r) = self.synth_sigma {
            d.sigma = r;
        }
        if let Some(r) = self.synth_lambda {
            d.lambda = r;
        }
        if let Some(r) = self.synth_theta {
            d.theta = r;
        }
        if let Some(s) = self.synth_kernel_size {
            d.size = s;
        }
        d
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            distribution: self.distribution(),
            scale: self.synth_scale,
            noise_sigma: self.synth_noise_sigma,
            count: self.synth_count,
            seed: self.seed,
            hr_size: self.synth_hr_size,
        }
    }

    pub fn lce(&self) -> LceConfig {
        LceConfig {
            corrector: self.corrector,
            sr: self.sr,
            mode: self.mode,
        }
    }

    pub fn train(&self, stage: Stage) -> TrainConfig {
        let d = TrainConfig::defaults(stage);
        TrainConfig {
            stage,
            steps: self.train_steps.unwrap_or(d.steps),
            batch: self.train_batch.unwrap_or(d.batch),
            lr_patch: self.train_lr_patch.unwrap_or(d.lr_patch),
            schedule: Schedule {
                base: self.train_lr,
                milestones: self.train_milestones.clone(),
            },
            adam: self.train_adam,
            seed: self.seed,
            augment: self.train_augment,
            checkpoint_every: self.train_checkpoint_every,
        }
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = self.distribution();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_else(|| "auto".into());
        vec![
            ("seed", self.seed.to_string()),
            ("mode", self.mode.to_string()),
            (
                "synth.kind",
                match self.synth_kind {
                    KernelKind::Isotropic => "isotropic".into(),
                    KernelKind::Anisotropic => "anisotropic".into(),
                },
            ),
            ("synth.scale", self.synth_scale.to_string()),
            ("synth.noise_sigma", self.synth_noise_sigma.to_string()),
            ("synth.count", self.synth_count.to_string()),
            ("synth.hr_size", self.synth_hr_size.to_string()),
            ("synth.sigma_min", d.sigma.0.to_string()),
            ("synth.sigma_max", d.sigma.1.to_string()),
            ("synth.lambda_min", d.lambda.0.to_string()),
            ("synth.lambda_max", d.lambda.1.to_string()),
            ("synth.theta_min", d.theta.0.to_string()),
            ("synth.theta_max", d.theta.1.to_string()),
            ("synth.kernel_size", d.size.to_string()),
            ("corrector.channels", self.corrector.channels.to_string()),
            ("corrector.num_rg", self.corrector.num_rg.to_string()),
            ("corrector.rcabs_per_rg", self.corrector.rcabs_per_rg.to_string()),
            ("corrector.reduction", self.corrector.reduction.to_string()),
            ("corrector.input_residual", self.corrector.input_residual.to_string()),
            ("sr.channels", self.sr.channels.to_string()),
            ("sr.num_fsag", self.sr.num_fsag.to_string()),
            ("sr.fsabs_per_fsag", self.sr.fsabs_per_fsag.to_string()),
            ("sr.heads", self.sr.heads.to_string()),
            ("sr.window", self.sr.window.to_string()),
            ("sr.mlp_ratio", self.sr.mlp_ratio.to_string()),
            ("sr.fab_squeeze_channels", self.sr.fab_squeeze_channels.to_string()),
            ("sr.scale", self.sr.scale.to_string()),
            ("train.steps", opt(self.train_steps)),
            ("train.batch", opt(self.train_batch)),
            ("train.lr_patch", opt(self.train_lr_patch)),
            ("train.lr", self.train_lr.to_string()),
            (
                "train.milestones",
                self.train_milestones.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("train.beta1", self.train_adam.beta1.to_string()),
            ("train.beta2", self.train_adam.beta2.to_string()),
            ("train.eps", self.train_adam.eps.to_string()),
            ("train.flips", self.train_augment.flips.to_string()),
            ("train.rotations", self.train_augment.rotations.to_string()),
            ("train.checkpoint_every", self.train_checkpoint_every.to_string()),
            ("paths.data", path(&self.paths_data)),
            ("paths.test", path(&self.paths_test)),
            ("paths.out", path(&self.paths_out)),
            ("paths.hr", path(&self.paths_hr)),
            ("paths.corrector", path(&self.paths_corrector)),
        ]
    }

    /// Fully resolved text; parsing it back yields an equal config apart
    /// from `auto` training sizes, which stay unset.
    pub fn to_text(&self, stage: Option<Stage>) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let v = match (k, stage) {
                ("train.steps", Some(st)) => self.train(st).steps.to_string(),
                ("train.batch", Some(st)) => self.train(st).batch.to_string(),
                ("train.lr_patch", Some(st)) => self.train(st).lr_patch.to_string(),
                ("train.steps" | "train.batch" | "train.lr_patch", None) if v == "auto" => continue,
                _ => v,
            };
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn write(&self, path: &Path, stage: Option<Stage>) -> CliResult<()> {
        write_text(path, &self.to_text(stage))
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Text identifying the corrector architecture alone.
pub fn corrector_canonical(c: &CorrectorConfig) -> String {
    format!(
        "corrector.channels={}\ncorrector.num_rg={}\ncorrector.rcabs_per_rg={}\ncorrector.reduction={}\ncorrector.input_residual={}\n",
        c.channels, c.num_rg, c.rcabs_per_rg, c.reduction, c.input_residual
    )
}

pub fn corrector_digest(c: &CorrectorConfig) -> ConfigDigest {
    digest_text(&corrector_canonical(c))
}

pub fn model_digest(cfg: &LceConfig) -> ConfigDigest {
    digest_text(&cfg.canonical())
}

/// Architecture keys stamped into checkpoints so a model can be rebuilt
/// from the checkpoint alone.
pub fn arch_metadata(stage: Stage, cfg: &RunConfig) -> Vec<(String, String)> {
    let keep = |k: &str| match stage {
        Stage::Corrector => k.starts_with("corrector."),
        Stage::Sr => k == "mode" || k.starts_with("sr.") || (cfg.mode.uses_corrector() && k.starts_with("corrector.")),
    };
    cfg.entries()
        .into_iter()
        .filter(|(k, _)| keep(k))
        .map(|(k, v)| (format!("{META_PREFIX}{k}"), v))
        .collect()
}

/// Rebuilds the architecture recorded by [`arch_metadata`] and checks it
/// against the checkpoint digest.
pub fn config_from_checkpoint(ck: &Checkpoint) -> CliResult<(Stage, RunConfig)> {
    let stage: Stage = ck
        .meta("stage")
        .ok_or_else(|| CliError::Config("checkpoint has no `stage` metadata".into()))?
        .parse()
        .map_err(|e| CliError::Config(format!("{e}")))?;
    let mut cfg = RunConfig::default();
    for (k, v) in &ck.metadata {
        if let Some(key) = k.strip_prefix(META_PREFIX) {
            cfg.set(key, v)?;
        }
    }
    if stage == Stage::Corrector {
        cfg.mode = Mode::Case3;
    }
    let expected = match stage {
        Stage::Corrector => corrector_digest(&cfg.corrector),
        Stage::Sr => model_digest(&cfg.lce()),
    };
    if expected != ck.digest {
        return Err(CliError::Config(
            "checkpoint digest does not match its recorded architecture".into(),
        ));
    }
    Ok((stage, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set_pair("sr.channels=32").unwrap();
        cfg.set_pair("synth.sigma_max=1.5").unwrap();
        cfg.set_pair("train.milestones=0.5,0.8").unwrap();
        cfg.set_pair("paths.data=/tmp/x").unwrap();
        let text = cfg.to_text(None);
        let mut back = RunConfig::default();
        back.apply_text(&text).unwrap();
        assert_eq!(back.to_text(None), text);
        assert_eq!(back.sr.channels, 32);
        assert_eq!(back.distribution().sigma, (0.2, 1.5));
        assert_eq!(back.train_milestones, vec![0.5, 0.8]);
        assert_eq!(back.paths_data, Some(PathBuf::from("/tmp/x")));
    }

    #[test]
    fn every_key_is_settable_and_listed() {
        let cfg = RunConfig::default();
        let listed: Vec<_> = cfg.entries().into_iter().map(|(k, _)| k).collect();
        assert_eq!(listed, KEYS);
        for (k, v) in cfg.entries() {
            RunConfig::default().set(k, &v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set("sr.chanels", "3"), Err(CliError::Config(_))));
        assert!(matches!(cfg.set("seed", "x"), Err(CliError::Config(_))));
        assert!(matches!(cfg.set_pair("seed"), Err(CliError::Config(_))));
        assert!(matches!(cfg.set("train.flips", "maybe"), Err(CliError::Config(_))));
        let err = cfg.apply_text("# c\n\nseed=1\nbogus=2\n").unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }

    #[test]
    fn stage_resolution_fills_training_sizes() {
        let cfg = RunConfig::default();
        let text = cfg.to_text(Some(Stage::Sr));
        assert!(text.contains("train.lr_patch=64\n"));
        assert!(!cfg.to_text(None).contains("train.lr_patch"));
    }

    #[test]
    fn checkpoint_metadata_rebuilds_the_architecture() {
        let mut cfg = RunConfig::default();
        cfg.set_pair("sr.channels=48").unwrap();
        cfg.set_pair("mode=case2").unwrap();
        let ck = Checkpoint {
            digest: model_digest(&cfg.lce()),
            metadata: [vec![("stage".to_string(), "sr".to_string())], arch_metadata(Stage::Sr, &cfg)].concat(),
            tensors: Vec::new(),
        };
        let (stage, back) = config_from_checkpoint(&ck).unwrap();
        assert_eq!(stage, Stage::Sr);
        assert_eq!(back.lce(), cfg.lce());
        let mut tampered = ck.clone();
        tampered.digest[0] ^= 1;
        assert!(config_from_checkpoint(&tampered).is_err());
    }
}
