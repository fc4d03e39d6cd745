use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// One training image: LR input, target (same size or `scale` times larger)
/// and an optional precomputed corrected LR aligned with the input.
#[derive(Clone, Debug)]
pub struct TrainPair {
    pub lr: Tensor<f32>,
    pub target: Tensor<f32>,
    pub clr: Option<Tensor<f32>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augment {
    pub flips: bool,
    pub rotations: bool,
}

impl Default for Augment {
    fn default() -> Self {
        Augment {
            flips: true,
            rotations: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub lr: Tensor<f32>,
    pub target: Tensor<f32>,
    pub clr: Option<Tensor<f32>>,
}

/// Independent stream for `(seed, step, slot)`.
pub fn slot_rng(seed: u64, step: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((step << 16) | (slot & 0xffff));
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct View {
    hflip: bool,
    vflip: bool,
    transpose: bool,
}

/// Square crop of side `size` at `(y, x)` of a `3 x H x W` image, then the
/// view transform (transpose first, then flips).
fn crop_view(img: &Tensor<f32>, y: usize, x: usize, size: usize, v: View) -> Tensor<f32> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    debug_assert!(y + size <= h && x + size <= w);
    let d = img.data();
    Tensor::from_fn(&[3, size, size], |i| {
        let (c, r, q) = (i / (size * size), (i / size) % size, i % size);
        let r = if v.vflip { size - 1 - r } else { r };
        let q = if v.hflip { size - 1 - q } else { q };
        let (r, q) = if v.transpose { (q, r) } else { (r, q) };
        d[c * h * w + (y + r) * w + x + q]
    })
}

fn stack(items: &[Tensor<f32>]) -> Tensor<f32> {
    let mut shape = vec![items.len()];
    shape.extend_from_slice(items[0].shape());
    let data = items.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(&shape, data).expect("equal item shapes")
}

/// Validates that every pair supports crops of `patch` LR pixels with the
/// given target scale.
pub fn check_pairs(pairs: &[TrainPair], patch: usize, scale: usize) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::invalid("training data", "no training images"));
    }
    for (i, p) in pairs.iter().enumerate() {
        let (h, w) = match p.lr.shape() {
            &[3, h, w] => (h, w),
            s => return Err(Error::invalid("training data", format!("image {i}: LR must be 3 x H x W, got {s:?}"))),
        };
        if h < patch || w < patch {
            return Err(Error::invalid("training data", format!("image {i}: {h}x{w} LR smaller than patch {patch}")));
        }
        if p.target.shape() != [3, h * scale, w * scale] {
            return Err(Error::invalid(
                "training data",
                format!("image {i}: target {:?} is not {scale}x the LR {h}x{w}", p.target.shape()),
            ));
        }
        if let Some(c) = &p.clr {
            if c.shape() != p.lr.shape() {
                return Err(Error::shape("training data", c.shape(), p.lr.shape()));
            }
        }
    }
    Ok(())
}

/// Draws the batch for `step`: slot `j` picks an image, a crop position and
/// a view from its own stream `(seed, step, j)`.
pub fn assemble(pairs: &[TrainPair], batch: usize, patch: usize, scale: usize, aug: Augment, seed: u64, step: u64) -> Batch {
    let items = par::map_range(batch, |slot| {
        let mut rng = slot_rng(seed, step, slot as u64);
        let p = &pairs[rng.random_range(0..pairs.len())];
        let (h, w) = (p.lr.shape()[1], p.lr.shape()[2]);
        let y = rng.random_range(0..=h - patch);
        let x = rng.random_range(0..=w - patch);
        let view = View {
            hflip: aug.flips && rng.random_bool(0.5),
            vflip: aug.flips && rng.random_bool(0.5),
            transpose: aug.rotations && rng.random_bool(0.5),
        };
        (
            crop_view(&p.lr, y, x, patch, view),
            crop_view(&p.target, y * scale, x * scale, patch * scale, view),
            p.clr.as_ref().map(|c| crop_view(c, y, x, patch, view)),
        )
    });
    let lr: Vec<_> = items.iter().map(|t| t.0.clone()).collect();
    let target: Vec<_> = items.iter().map(|t| t.1.clone()).collect();
    let clr: Option<Vec<_>> = items.iter().map(|t| t.2.clone()).collect();
    Batch {
        lr: stack(&lr),
        target: stack(&target),
        clr: clr.map(|c| stack(&c)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(seed: u32) -> TrainPair {
        let lr = Tensor::from_fn(&[3, 6, 6], |i| (i as u32 * 7 + seed) as f32);
        let target = Tensor::from_fn(&[3, 12, 12], |i| {
            let (c, y, x) = (i / 144, (i / 12) % 12, i % 12);
            lr.data()[c * 36 + (y / 2) * 6 + x / 2]
        });
        TrainPair {
            clr: Some(lr.clone()),
            lr,
            target,
        }
    }

    #[test]
    fn views_are_consistent_across_scales() {
        let pairs = vec![pair(0), pair(1)];
        for step in 0..20 {
            let b = assemble(&pairs, 3, 4, 2, Augment::default(), 5, step);
            assert_eq!(b.lr.shape(), &[3, 3, 4, 4]);
            assert_eq!(b.target.shape(), &[3, 3, 8, 8]);
            assert_eq!(b.clr.as_ref().unwrap(), &b.lr);
            // nearest-upsampled target must agree with the LR crop under the same view
            for n in 0..3 {
                for c in 0..3 {
                    for y in 0..8 {
                        for x in 0..8 {
                            let t = b.target.data()[((n * 3 + c) * 8 + y) * 8 + x];
                            let l = b.lr.data()[((n * 3 + c) * 4 + y / 2) * 4 + x / 2];
                            assert_eq!(t, l);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_and_step_dependent() {
        let pairs = vec![pair(0), pair(1), pair(2)];
        let a = assemble(&pairs, 4, 3, 2, Augment::default(), 9, 7);
        assert_eq!(a, assemble(&pairs, 4, 3, 2, Augment::default(), 9, 7));
        assert_ne!(a, assemble(&pairs, 4, 3, 2, Augment::default(), 9, 8));
    }

    #[test]
    fn pair_validation() {
        assert!(check_pairs(&[pair(0)], 4, 2).is_ok());
        assert!(check_pairs(&[pair(0)], 7, 2).is_err());
        assert!(check_pairs(&[pair(0)], 4, 1).is_err());
        assert!(check_pairs(&[], 4, 2).is_err());
    }
}
