use super::layers::Conv;
use super::params::{Bound, Init};
use crate::error::Result;
use crate::real::Real;
use crate::spectral::half_width;
use crate::tensor::ops::PoolMode;
use crate::tensor::Var;

/// Frequency attention block.
///
/// Two 3x3 convs squeeze to `squeeze` channels and back; the result is
/// taken to the half spectrum, rectified, and reweighted per frequency by a
/// map computed from channel-max of the real parts and channel-mean of the
/// imaginary parts (7x7 conv, sigmoid), then transformed back.
#[derive(Clone, Debug)]
pub struct Fab {
    pub conv1: Conv,
    pub conv2: Conv,
    pub map: Conv,
    pub channels: usize,
    pub squeeze: usize,
}

impl Fab {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, channels: usize, squeeze: usize) -> Self {
        init.scope(name, |i| Fab {
            conv1: Conv::new(i, "conv1", channels, squeeze, 3, true),
            conv2: Conv::new(i, "conv2", squeeze, channels, 3, true),
            map: Conv::new(i, "map", 2, 1, 7, false),
            channels,
            squeeze,
        })
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let y = self.conv2.forward(p, self.conv1.forward(p, x)?)?;
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let wf = half_width(w);
        let yf = y.rfft2()?.relu()?;
        let part = |k| yf.narrow(0, k, 1)?.reshape(&[b, c, h, wf]);
        let re = part(0)?.pool_channel(PoolMode::Max)?;
        let im = part(1)?.pool_channel(PoolMode::Avg)?;
        let att = self.map.forward(p, Var::concat(&[re, im], 1)?)?.sigmoid()?;
        let att = att.reshape(&[1, b, 1, h, wf])?;
        yf.mul_bcast(att)?.irfft2(w)
    }

    pub fn params(&self) -> usize {
        self.conv1.params() + self.conv2.params() + self.map.params()
    }

    /// Convolutions plus `5 N log2 N` per plane transform (`N = H W`), one
    /// forward and one inverse transform per channel.
    pub fn multadds(&self, h: usize, w: usize) -> u64 {
        let n = (h * w) as f64;
        let fft = if n > 1.0 { 5.0 * n * n.log2() } else { 0.0 };
        self.conv1.multadds(h, w)
            + self.conv2.multadds(h, w)
            + self.map.multadds(h, half_width(w))
            + (2.0 * self.channels as f64 * fft).round() as u64
    }
}
