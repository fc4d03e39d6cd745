use super::c;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Tensor, Var};

impl<'t, T: Real> Var<'t, T> {
    /// Normalises each trailing-axis vector to zero mean and unit variance,
    /// then applies `gamma * x + beta`.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        let (gv, bv) = (gamma.value(), beta.value());
        let ch = *x.shape().last().unwrap_or(&0);
        if ch == 0 {
            return Err(Error::invalid("layer_norm", "empty channel axis"));
        }
        if gv.shape() != [ch] || bv.shape() != [ch] {
            return Err(Error::shape("layer_norm", gv.shape(), &[ch]));
        }
        let rows = x.len() / ch;
        let eps: T = c(eps);
        let inv_c: T = c(1.0 / ch as f64);
        let mut xhat = Tensor::zeros(x.shape());
        let mut inv_std = vec![T::zero(); rows];
        let mut out = Tensor::zeros(x.shape());
        for r in 0..rows {
            let row = &x.data()[r * ch..(r + 1) * ch];
            let mean = row.iter().copied().sum::<T>() * inv_c;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for k in 0..ch {
                let h = (row[k] - mean) * is;
                xhat.data_mut()[r * ch + k] = h;
                out.data_mut()[r * ch + k] = h * gv.data()[k] + bv.data()[k];
            }
        }
        self.tape.record("layer_norm", out, &[self, gamma, beta], move |g, need| {
            let gx = need[0].then(|| {
                let mut gx = Tensor::zeros(xhat.shape());
                for r in 0..rows {
                    let gr = &g.data()[r * ch..(r + 1) * ch];
                    let hr = &xhat.data()[r * ch..(r + 1) * ch];
                    let mut mean_d = T::zero();
                    let mut mean_dh = T::zero();
                    for k in 0..ch {
                        let d = gr[k] * gv.data()[k];
                        mean_d += d;
                        mean_dh += d * hr[k];
                    }
                    mean_d *= inv_c;
                    mean_dh *= inv_c;
                    for k in 0..ch {
                        let d = gr[k] * gv.data()[k];
                        gx.data_mut()[r * ch + k] = inv_std[r] * (d - mean_d - hr[k] * mean_dh);
                    }
                }
                gx
            });
            let mut gg = Tensor::zeros(&[ch]);
            let mut gb = Tensor::zeros(&[ch]);
            for r in 0..rows {
                for k in 0..ch {
                    let gi = g.data()[r * ch + k];
                    gg.data_mut()[k] += gi * xhat.data()[r * ch + k];
                    gb.data_mut()[k] += gi;
                }
            }
            vec![gx, need[1].then_some(gg), need[2].then_some(gb)]
        })
    }

    /// Softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut out = Tensor::zeros(&shape);
        if inner == 1 {
            for (src, dst) in x.data().chunks(len).zip(out.data_mut().chunks_mut(len)) {
                let mx = src.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let mut total = T::zero();
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = (v - mx).exp();
                    total += *d;
                }
                let inv = T::one() / total;
                dst.iter_mut().for_each(|d| *d *= inv);
            }
        } else {
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let mut mx = T::neg_infinity();
                    for k in 0..len {
                        mx = mx.max(x.data()[at(k)]);
                    }
                    let mut total = T::zero();
                    for k in 0..len {
                        let e = (x.data()[at(k)] - mx).exp();
                        out.data_mut()[at(k)] = e;
                        total += e;
                    }
                    for k in 0..len {
                        out.data_mut()[at(k)] /= total;
                    }
                }
            }
        }
        let y = out.clone();
        self.tape.record("softmax", out, &[self], move |g, _| {
            let mut gx = Tensor::zeros(y.shape());
            if inner == 1 {
                let rows = g.data().chunks(len).zip(y.data().chunks(len));
                for ((gs, ys), dst) in rows.zip(gx.data_mut().chunks_mut(len)) {
                    let dot: T = gs.iter().zip(ys).map(|(&a, &b)| a * b).sum();
                    for ((d, &gv), &yv) in dst.iter_mut().zip(gs).zip(ys) {
                        *d = yv * (gv - dot);
                    }
                }
                return vec![Some(gx)];
            }
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let dot: T = (0..len).map(|k| g.data()[at(k)] * y.data()[at(k)]).sum();
                    for k in 0..len {
                        gx.data_mut()[at(k)] = y.data()[at(k)] * (g.data()[at(k)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_op, random_tensor};
    use crate::tensor::Tape;

    #[test]
    fn layer_norm_two_channel_case() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(&[1, 2], vec![1.0, 3.0]).unwrap());
        let g = tape.leaf(Tensor::ones(&[2]));
        let b = tape.leaf(Tensor::zeros(&[2]));
        let y = x.layer_norm(g, b, 1e-12).unwrap().value();
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_constant_gives_beta() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[3, 4], 7.0));
        let g = tape.leaf(Tensor::full(&[4], 2.0));
        let b = tape.leaf(Tensor::new(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let y = x.layer_norm(g, b, 1e-5).unwrap().value();
        for r in 0..3 {
            for k in 0..4 {
                assert!((y.data()[r * 4 + k] - b.value().data()[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_output_statistics() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(random_tensor(&[16, 32], 3));
        let g = tape.leaf(Tensor::full(&[32], 1.5));
        let b = tape.leaf(Tensor::full(&[32], 0.25));
        let y = x.layer_norm(g, b, 1e-5).unwrap().value();
        for row in y.data().chunks(32) {
            let mean = row.iter().sum::<f64>() / 32.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
            assert!((mean - 0.25).abs() < 1e-4);
            assert!((var - 2.25).abs() < 1e-3 * 2.25);
        }
    }

    #[test]
    fn softmax_uniform_and_normalised() {
        let tape = Tape::<f64>::new();
        let z = tape.leaf(Tensor::zeros(&[3]));
        let s = z.softmax(0).unwrap().value();
        assert!(s.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        let x = tape.leaf(random_tensor(&[4, 5, 6], 9).map(|v| v * 10.0));
        for axis in 0..3 {
            let y = x.softmax(axis).unwrap().value();
            assert!(y.data().iter().all(|&v| v >= 0.0));
            let total: f64 = y.sum();
            let groups = 4.0 * 5.0 * 6.0 / [4.0, 5.0, 6.0][axis];
            assert!((total - groups).abs() < 1e-6 * groups);
        }
    }

    #[test]
    fn norm_gradients() {
        check_op(&[&[3, 5, 6], &[6], &[6]], |_, v| v[0].layer_norm(v[1], v[2], 1e-5), 1e-5);
        check_op(&[&[3, 5, 6]], |_, v| v[0].softmax(2), 1e-5);
        check_op(&[&[3, 5, 6]], |_, v| v[0].softmax(1), 1e-5);
    }
}
