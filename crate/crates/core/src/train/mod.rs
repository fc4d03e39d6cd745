//! Two-stage L1 training: corrector against the corrected-LR ground truth,
//! then the super-resolver with the corrector frozen.

mod adam;
mod batch;
mod eval;

pub use adam::{Adam, AdamConfig};
pub use batch::{assemble, check_pairs, slot_rng, Augment, Batch, TrainPair};
pub use eval::{
    evaluate_bicubic, evaluate_corrector, evaluate_identity, evaluate_model, mean_metrics, metrics_tsv, quantize_image,
    ImageMetrics,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::degrade::synth::Sample;
use crate::error::{Error, Result};
use crate::io::checkpoint::{digest_hex, Checkpoint, ConfigDigest};
use crate::nets::{Bound, CorrectorModel, LceModel, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Corrector,
    Sr,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Corrector => "corrector",
            Stage::Sr => "sr",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corrector" => Ok(Stage::Corrector),
            "sr" => Ok(Stage::Sr),
            _ => Err(Error::invalid("stage", format!("unknown stage `{s}` (corrector|sr)"))),
        }
    }
}

/// Piecewise-constant rate: `base` halved at each milestone fraction of the run.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub base: f64,
    pub milestones: Vec<f64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            base: 2e-4,
            milestones: vec![0.5, 0.75, 0.9],
        }
    }
}

impl Schedule {
    pub fn rate(&self, step: usize, total: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| step >= (m * total as f64).round() as usize)
            .count();
        self.base * 0.5f64.powi(passed as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub steps: usize,
    pub batch: usize,
    pub lr_patch: usize,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    pub seed: u64,
    pub augment: Augment,
    /// Periodic checkpoint interval in steps; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn defaults(stage: Stage) -> Self {
        TrainConfig {
            stage,
            steps: 1000,
            batch: 8,
            lr_patch: match stage {
                Stage::Corrector => 48,
                Stage::Sr => 64,
            },
            schedule: Schedule::default(),
            adam: AdamConfig::default(),
            seed: 0,
            augment: Augment::default(),
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self, window: Option<usize>) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.lr_patch == 0 {
            return Err(Error::invalid("train config", "steps, batch and patch must be positive"));
        }
        if self.batch > 0xffff {
            return Err(Error::invalid("train config", "batch too large"));
        }
        if !(self.schedule.base.is_finite() && self.schedule.base > 0.0) {
            return Err(Error::invalid("train config", "learning rate must be positive"));
        }
        if let Some(w) = window {
            if self.lr_patch % w != 0 {
                return Err(Error::invalid(
                    "train config",
                    format!("LR patch {} must be a multiple of the window {w}", self.lr_patch),
                ));
            }
        }
        Ok(())
    }
}

/// Where a run writes its artefacts and what it stamps into checkpoints.
#[derive(Clone, Debug)]
pub struct RunIo<'a> {
    pub out_dir: Option<&'a Path>,
    pub digest: ConfigDigest,
    pub metadata: Vec<(String, String)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// `(step, loss)` for every executed step.
    pub losses: Vec<(usize, f32)>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    pub fn loss_tsv(&self) -> String {
        let mut s = String::from("step\tloss\n");
        for (step, l) in &self.losses {
            let _ = writeln!(s, "{step}\t{l}");
        }
        s
    }
}

/// Trailing moving average of the loss curve with window `w` (defined from
/// step `w - 1` onwards).
pub fn moving_average(losses: &[f32], w: usize) -> Vec<f64> {
    if w == 0 || losses.len() < w {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(losses.len() - w + 1);
    let mut acc: f64 = losses[..w].iter().map(|&v| v as f64).sum();
    out.push(acc / w as f64);
    for i in w..losses.len() {
        acc += losses[i] as f64 - losses[i - w] as f64;
        out.push(acc / w as f64);
    }
    out
}

/// Training state restored from a checkpoint.
pub struct Resume<'a> {
    pub checkpoint: &'a Checkpoint,
}

fn checkpoint_for(store: &ParamStore<f32>, adam: &Adam<f32>, io: &RunIo<'_>, stage: Stage, step: usize) -> Checkpoint {
    let mut ck = store.to_checkpoint(io.digest, io.metadata.clone());
    ck.metadata.push(("stage".into(), stage.name().into()));
    ck.metadata.push(("step".into(), step.to_string()));
    ck.tensors.extend(adam.state_tensors(store));
    ck
}

/// Parameter tensors of a training checkpoint (optimiser state removed).
pub fn model_tensors(ck: &Checkpoint) -> Checkpoint {
    Checkpoint {
        digest: ck.digest,
        metadata: ck.metadata.clone(),
        tensors: ck.tensors.iter().filter(|(n, _)| !n.starts_with("adam.")).cloned().collect(),
    }
}

fn restore(store: &mut ParamStore<f32>, adam: &mut Adam<f32>, io: &RunIo<'_>, ck: &Checkpoint) -> Result<usize> {
    if ck.digest != io.digest {
        return Err(Error::DigestMismatch {
            expected: digest_hex(&io.digest),
            found: digest_hex(&ck.digest),
        });
    }
    let step: usize = ck
        .meta("step")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format {
            kind: "lcec",
            msg: "checkpoint has no step".into(),
        })?;
    store.load_all(&model_tensors(ck))?;
    adam.load_state(store, &ck.tensors, step as u64)?;
    Ok(step)
}

/// Generic loop: `predict` maps a batch to a prediction compared with the
/// batch target under L1.
fn fit<F>(
    store: &mut ParamStore<f32>,
    pairs: &[TrainPair],
    scale: usize,
    cfg: &TrainConfig,
    io: &RunIo<'_>,
    resume: Option<Resume<'_>>,
    predict: F,
) -> Result<TrainReport>
where
    F: for<'t> Fn(&Bound<'t, f32>, &'t Tape<f32>, &Batch) -> Result<Var<'t, f32>>,
{
    check_pairs(pairs, cfg.lr_patch, scale)?;
    let mut adam = Adam::new(store, cfg.adam);
    let start = match resume {
        Some(r) => restore(store, &mut adam, io, r.checkpoint)?,
        None => 0,
    };
    let mut report = TrainReport::default();
    let stage = cfg.stage.name();
    let mut tape = Tape::new();
    for step in start..cfg.steps {
        let batch = assemble(pairs, cfg.batch, cfg.lr_patch, scale, cfg.augment, cfg.seed, step as u64);
        tape.clear();
        let grads = {
            let p = store.bind(&tape);
            let pred = predict(&p, &tape, &batch)?;
            let loss = pred.l1_loss(tape.constant(batch.target.clone()))?;
            report.losses.push((step, loss.value().item()));
            tape.backward(loss)?;
            p.grads(&tape)?
        };
        adam.update(store, &grads, cfg.schedule.rate(step, cfg.steps))?;
        let done = step + 1;
        if let Some(dir) = io.out_dir {
            let periodic = cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.steps;
            if periodic || done == cfg.steps {
                let path = if periodic {
                    dir.join(format!("{stage}_step{done:06}.lcec"))
                } else {
                    dir.join(format!("{stage}.lcec"))
                };
                checkpoint_for(store, &adam, io, cfg.stage, done).save(&path)?;
                report.checkpoints.push(path);
            }
        }
    }
    if let Some(dir) = io.out_dir {
        let path = dir.join(format!("{stage}_loss.tsv"));
        crate::io::write_file(&path, report.loss_tsv().as_bytes())?;
    }
    Ok(report)
}

/// Corrector training pairs `(lr, clr_gt)`.
pub fn corrector_pairs(samples: &[Sample]) -> Vec<TrainPair> {
    samples
        .iter()
        .map(|s| TrainPair {
            lr: s.triplet.lr.clone(),
            target: s.triplet.clr_gt.clone(),
            clr: None,
        })
        .collect()
}

pub fn train_corrector(
    model: &mut CorrectorModel<f32>,
    samples: &[Sample],
    cfg: &TrainConfig,
    io: &RunIo<'_>,
    resume: Option<Resume<'_>>,
) -> Result<TrainReport> {
    cfg.validate(None)?;
    let pairs = corrector_pairs(samples);
    let CorrectorModel { store, net } = model;
    let net = &*net;
    fit(store, &pairs, 1, cfg, io, resume, |p, tape, b| {
        net.forward(p, tape.constant(b.lr.clone()))
    })
}

/// SR training pairs `(lr, hr)`; when the model has a corrector its output
/// on each full LR image is computed once and cropped alongside.
pub fn sr_pairs(model: &LceModel<f32>, samples: &[Sample]) -> Result<Vec<TrainPair>> {
    samples
        .iter()
        .map(|s| {
            let clr = match &model.corrector {
                Some(net) => {
                    let tape = Tape::no_grad();
                    let p = model.store.bind(&tape);
                    let lr = tape.constant(s.triplet.lr.clone().reshape(&batch_shape(&s.triplet.lr))?);
                    Some(net.forward(&p, lr)?.value().as_ref().clone().reshape(s.triplet.lr.shape())?)
                }
                None => None,
            };
            Ok(TrainPair {
                lr: s.triplet.lr.clone(),
                target: s.triplet.hr.clone(),
                clr,
            })
        })
        .collect()
}

/// Trains the super-resolver with the corrector (if any) frozen.
pub fn train_sr(
    model: &mut LceModel<f32>,
    samples: &[Sample],
    cfg: &TrainConfig,
    io: &RunIo<'_>,
    resume: Option<Resume<'_>>,
) -> Result<TrainReport> {
    cfg.validate(Some(model.config.sr.window))?;
    model.set_corrector_frozen(true);
    let pairs = sr_pairs(model, samples)?;
    let scale = model.scale();
    // The parameters are moved out while the loop runs so the layer
    // structure can be borrowed by the forward closure.
    let mut store = std::mem::take(&mut model.store);
    let net = &*model;
    let report = fit(&mut store, &pairs, scale, cfg, io, resume, |p, tape, b| {
        let lr = tape.constant(b.lr.clone());
        let clr = b.clr.as_ref().map(|c| tape.constant(c.clone()));
        Ok(net.forward_taps(p, lr, clr, None)?.sr)
    });
    model.store = store;
    report
}

fn batch_shape(x: &Tensor<f32>) -> Vec<usize> {
    let mut s = vec![1];
    s.extend_from_slice(x.shape());
    s
}

/// Bit-level equality of two tensors.
pub fn bit_identical(a: &Tensor<f32>, b: &Tensor<f32>) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}
