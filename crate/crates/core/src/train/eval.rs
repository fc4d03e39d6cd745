//! Held-out evaluation: per-image luma PSNR/SSIM tables.

use std::fmt::Write as _;
use std::path::Path;

use crate::degrade::bicubic_upsample;
use crate::degrade::synth::Sample;
use crate::error::Result;
use crate::io::save_rgb;
use crate::metrics::evaluate_rgb;
use crate::nets::{CorrectorModel, LceModel};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub image_id: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Clamps a network output to the valid pixel range.
pub fn quantize_image(x: &Tensor<f32>) -> Tensor<f32> {
    x.map(|v| v.clamp(0.0, 1.0))
}

fn image_id(s: &Sample) -> String {
    format!("{:04}", s.row.index)
}

/// Mean PSNR and SSIM; `(0, 0)` for an empty table.
pub fn mean_metrics(rows: &[ImageMetrics]) -> (f64, f64) {
    if rows.is_empty() {
        return (0.0, 0.0);
    }
    let n = rows.len() as f64;
    (
        rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    )
}

/// `image_id, psnr, ssim` with a trailing `mean` row.
pub fn metrics_tsv(rows: &[ImageMetrics]) -> String {
    let mut s = String::from("image_id\tpsnr\tssim\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{:.6}\t{:.6}", r.image_id, r.psnr, r.ssim);
    }
    let (p, q) = mean_metrics(rows);
    let _ = writeln!(s, "mean\t{p:.6}\t{q:.6}");
    s
}

fn row(s: &Sample, pred: &Tensor<f32>, target: &Tensor<f32>, shave: usize) -> Result<ImageMetrics> {
    let m = evaluate_rgb(pred, target, shave)?;
    Ok(ImageMetrics {
        image_id: image_id(s),
        psnr: m.psnr_db,
        ssim: m.ssim,
    })
}

/// SR output against HR with a border shave equal to the scale. With
/// `dump`, each SR image is written as `{image_id}.png`.
pub fn evaluate_model(model: &LceModel<f32>, samples: &[Sample], dump: Option<&Path>) -> Result<Vec<ImageMetrics>> {
    let scale = model.scale();
    samples
        .iter()
        .map(|s| {
            let (sr, _) = model.infer(&s.triplet.lr)?;
            let sr = quantize_image(&sr);
            if let Some(dir) = dump {
                save_rgb(&dir.join(format!("{}.png", image_id(s))), &sr)?;
            }
            row(s, &sr, &s.triplet.hr, scale)
        })
        .collect()
}

/// Bicubic upsampling of the LR input against HR.
pub fn evaluate_bicubic(samples: &[Sample], scale: usize, dump: Option<&Path>) -> Result<Vec<ImageMetrics>> {
    samples
        .iter()
        .map(|s| {
            let up = bicubic_upsample(&s.triplet.lr, scale)?;
            if let Some(dir) = dump {
                save_rgb(&dir.join(format!("{}.png", image_id(s))), &up)?;
            }
            row(s, &up, &s.triplet.hr, scale)
        })
        .collect()
}

/// Corrector output against the corrected-LR ground truth, unshaved.
pub fn evaluate_corrector(model: &CorrectorModel<f32>, samples: &[Sample]) -> Result<Vec<ImageMetrics>> {
    samples
        .iter()
        .map(|s| {
            let clr = quantize_image(&model.infer(&s.triplet.lr)?);
            row(s, &clr, &s.triplet.clr_gt, 0)
        })
        .collect()
}

/// The do-nothing corrector: LR input against the corrected-LR ground truth.
pub fn evaluate_identity(samples: &[Sample]) -> Result<Vec<ImageMetrics>> {
    samples.iter().map(|s| row(s, &s.triplet.lr, &s.triplet.clr_gt, 0)).collect()
}
