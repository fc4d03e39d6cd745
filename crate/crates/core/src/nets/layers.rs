use super::params::{Bound, Init, ParamId};
use crate::error::Result;
use crate::real::Real;
use crate::tensor::ops::Padding;
use crate::tensor::Var;

/// Stride-1 convolution with "same" output extents.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub reflect: bool,
}

impl Conv {
    /// Fan-in uniform init, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weight and bias.
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, in_ch: usize, out_ch: usize, kernel: usize, reflect: bool) -> Self {
        init.scope(name, |i| {
            let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
            Conv {
                weight: i.uniform("weight", &[out_ch, in_ch, kernel, kernel], bound),
                bias: Some(i.uniform("bias", &[out_ch], bound)),
                in_ch,
                out_ch,
                kernel,
                reflect,
            }
        })
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let pad = self.kernel / 2;
        let pad = if self.reflect && pad > 0 {
            Padding::Reflect(pad)
        } else {
            Padding::Zero(pad)
        };
        x.conv2d(p.get(self.weight), self.bias.map(|b| p.get(b)), 1, pad)
    }

    pub fn params(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel + if self.bias.is_some() { self.out_ch } else { 0 }
    }

    pub fn multadds(&self, h: usize, w: usize) -> u64 {
        (self.out_ch * self.in_ch * self.kernel * self.kernel) as u64 * (h * w) as u64
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_f: usize,
    pub out_f: usize,
}

impl Linear {
    /// Truncated-normal (std 0.02) weight, zero bias.
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, in_f: usize, out_f: usize, bias: bool) -> Self {
        init.scope(name, |i| Linear {
            weight: i.trunc_normal("weight", &[out_f, in_f], 0.02),
            bias: bias.then(|| i.constant("bias", &[out_f], 0.0)),
            in_f,
            out_f,
        })
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.linear(p.get(self.weight), self.bias.map(|b| p.get(b)))
    }

    /// Per token.
    pub fn multadds(&self) -> u64 {
        (self.in_f * self.out_f) as u64
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, ch: usize) -> Self {
        init.scope(name, |i| LayerNorm {
            gamma: i.constant("gamma", &[ch], 1.0),
            beta: i.constant("beta", &[ch], 0.0),
        })
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(p.get(self.gamma), p.get(self.beta), Self::EPS)
    }
}

/// Token MLP: linear, GELU, linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, ch: usize, hidden: usize) -> Self {
        init.scope(name, |i| Mlp {
            fc1: Linear::new(i, "fc1", ch, hidden, true),
            fc2: Linear::new(i, "fc2", hidden, ch, true),
        })
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.fc2.forward(p, self.fc1.forward(p, x)?.gelu()?)
    }

    pub fn multadds(&self) -> u64 {
        self.fc1.multadds() + self.fc2.multadds()
    }
}
