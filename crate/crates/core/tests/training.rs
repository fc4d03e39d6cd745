use lce_core::degrade::synth::{load_dataset, synth_dataset, KernelDistribution, KernelKind, Sample, SynthConfig};
use lce_core::io::checkpoint::digest_text;
use lce_core::nets::{CorrectorConfig, CorrectorModel};
use lce_core::train::{
    evaluate_corrector, evaluate_identity, mean_metrics, moving_average, train_corrector, Augment, RunIo, Stage,
    TrainConfig,
};

fn one_image(hr: usize, seed: u64) -> (tempfile::TempDir, Vec<Sample>) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        distribution: KernelDistribution::defaults(KernelKind::Isotropic, 2),
        scale: 2,
        noise_sigma: 0.0,
        count: 1,
        seed,
        hr_size: hr,
    };
    synth_dataset(None, &cfg, dir.path()).unwrap();
    let samples = load_dataset(dir.path()).unwrap();
    (dir, samples)
}

fn io() -> RunIo<'static> {
    RunIo {
        out_dir: None,
        digest: digest_text("integration"),
        metadata: vec![],
    }
}

/// Batch of one whole LR image with augmentation off: every step sees the same batch.
fn fixed_batch(steps: usize, lr_side: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch: 1,
        lr_patch: lr_side,
        augment: Augment {
            flips: false,
            rotations: false,
        },
        ..TrainConfig::defaults(Stage::Corrector)
    }
}

#[test]
fn fixed_batch_moving_average_never_rises() {
    let (_d, samples) = one_image(32, 11);
    let cfg = CorrectorConfig {
        channels: 8,
        num_rg: 1,
        rcabs_per_rg: 2,
        reduction: 4,
        input_residual: false,
    };
    let mut model = CorrectorModel::<f32>::new(cfg, 2).unwrap();
    let report = train_corrector(&mut model, &samples, &fixed_batch(600, 16), &io(), None).unwrap();
    let losses: Vec<f32> = report.losses.iter().map(|l| l.1).collect();
    let ma = moving_average(&losses, 50);
    assert_eq!(ma.len(), 551);
    let rises: Vec<usize> = (1..ma.len()).filter(|&i| ma[i] > ma[i - 1]).collect();
    assert!(rises.is_empty(), "moving average rises at {rises:?}");
    assert!(ma[ma.len() - 1] < ma[0] / 2.0);
}

#[test]
fn two_group_corrector_overfits_one_image() {
    let (_d, samples) = one_image(32, 5);
    let cfg = CorrectorConfig {
        channels: 16,
        num_rg: 2,
        rcabs_per_rg: 5,
        reduction: 4,
        input_residual: false,
    };
    let mut model = CorrectorModel::<f32>::new(cfg, 1).unwrap();
    let mut train = fixed_batch(3000, 16);
    train.schedule.base = 1e-3;
    train_corrector(&mut model, &samples, &train, &io(), None).unwrap();
    let clr = mean_metrics(&evaluate_corrector(&model, &samples).unwrap());
    let identity = mean_metrics(&evaluate_identity(&samples).unwrap());
    assert!(clr.0 >= 45.0, "overfit CLR PSNR {:.2} dB (uncorrected {:.2} dB)", clr.0, identity.0);
}
