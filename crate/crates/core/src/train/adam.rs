use crate::error::{Error, Result};
use crate::nets::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected adaptive-moment optimiser with one moment pair per
/// parameter of the store it was created for.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Real = f32> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect::<Vec<_>>();
        Adam {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// Applies one update to every unfrozen parameter. `grads` is in store
    /// order; a missing gradient on an unfrozen parameter is an error.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::invalid("adam", "gradient list does not match the parameter store"));
        }
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.frozen, p.name.clone())).collect();
        for (k, (_, frozen, name)) in ids.iter().enumerate() {
            if !frozen && grads[k].is_none() {
                return Err(Error::MissingGradient(name.clone()));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let (ob1, ob2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
        let step_size = T::from_f64(lr / bc1);
        let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
        let eps = T::from_f64(eps);
        for (k, (id, frozen, _)) in ids.into_iter().enumerate() {
            if frozen {
                continue;
            }
            let g = grads[k].as_ref().expect("checked above");
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let p = store.value_mut(id).data_mut();
            if g.len() != p.len() {
                return Err(Error::shape("adam", &[g.len()], &[p.len()]));
            }
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + ob1 * gi;
                v[i] = b2 * v[i] + ob2 * gi * gi;
                p[i] -= step_size * m[i] / (v[i].sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }

    /// Moment buffers as named tensors for checkpointing.
    pub fn state_tensors(&self, store: &ParamStore<T>) -> Vec<(String, Tensor<f32>)> {
        let mut out = Vec::with_capacity(2 * store.len());
        for (k, (_, p)) in store.iter().enumerate() {
            out.push((format!("adam.m.{}", p.name), self.m[k].cast()));
            out.push((format!("adam.v.{}", p.name), self.v[k].cast()));
        }
        out
    }

    pub fn load_state(&mut self, store: &ParamStore<T>, tensors: &[(String, Tensor<f32>)], step: u64) -> Result<()> {
        let find = |name: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.cast::<T>())
                .ok_or_else(|| Error::Format {
                    kind: "lcec",
                    msg: format!("missing optimiser state `{name}`"),
                })
        };
        for (k, (_, p)) in store.iter().enumerate() {
            self.m[k] = find(&format!("adam.m.{}", p.name))?;
            self.v[k] = find(&format!("adam.v.{}", p.name))?;
        }
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Tensor::full(&[1], v));
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = store(0.5);
        let mut adam = Adam::new(&s, AdamConfig::default());
        adam.update(&mut s, &[Some(Tensor::zeros(&[1]))], 1e-2).unwrap();
        assert_eq!(s.value("x").unwrap().item(), 0.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(0.0);
        let mut adam = Adam::new(&s, AdamConfig::default());
        adam.update(&mut s, &[Some(Tensor::ones(&[1]))], 1e-3).unwrap();
        let x = s.value("x").unwrap().item();
        assert!((x + 1e-3).abs() < 1e-9, "{x}");
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn missing_gradient_errors_unless_frozen() {
        let mut s = store(1.0);
        let mut adam = Adam::new(&s, AdamConfig::default());
        assert!(matches!(adam.update(&mut s, &[None], 1e-3), Err(Error::MissingGradient(_))));
        s.set_frozen("x", true);
        adam.update(&mut s, &[None], 1e-3).unwrap();
        assert_eq!(s.value("x").unwrap().item(), 1.0);
    }

    #[test]
    fn state_roundtrip() {
        let mut s = store(1.0);
        let mut adam = Adam::new(&s, AdamConfig::default());
        adam.update(&mut s, &[Some(Tensor::full(&[1], 0.3))], 1e-3).unwrap();
        let mut other = Adam::new(&s, AdamConfig::default());
        other.load_state(&s, &adam.state_tensors(&s), adam.step).unwrap();
        let back: Adam<f64> = other;
        assert_eq!(back.step, 1);
        assert!((back.m[0].item() - adam.m[0].item()).abs() < 1e-7);
    }
}
