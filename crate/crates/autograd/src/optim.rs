use crate::params::ParamStore;
use crate::{Result, Scalar, Tensor, TensorError};

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First and second moments, one slot per store entry (buffers stay `None`).
    pub moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let moments = store
            .entries()
            .iter()
            .map(|e| e.trainable.then(|| (Tensor::zeros(e.value.shape().to_vec()), Tensor::zeros(e.value.shape().to_vec()))))
            .collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments }
    }

    /// One update with learning rate `lr`. `grads` is indexed like the store;
    /// missing gradients are treated as zero.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.moments.len() != store.len() {
            return Err(TensorError::Shape("optimizer state does not match parameter store".into()));
        }
        self.step += 1;
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let step_size = T::from_f64_lossy(lr / c1);
        let c2_sqrt = T::from_f64_lossy(c2.sqrt());
        let eps = T::from_f64_lossy(self.eps);
        for ((id, slot), g) in store.ids().collect::<Vec<_>>().into_iter().zip(self.moments.iter_mut()).zip(grads) {
            let Some((m, v)) = slot else { continue };
            let p = store.get_mut(id);
            match g {
                Some(g) => {
                    p.expect_same_shape(g, "adam")?;
                    for (((pv, mv), vv), &gv) in
                        p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data())
                    {
                        *mv = b1 * *mv + (T::one() - b1) * gv;
                        *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                        *pv -= step_size * *mv / ((*vv).sqrt() / c2_sqrt + eps);
                    }
                }
                None => {
                    for ((pv, mv), vv) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()) {
                        *mv = b1 * *mv;
                        *vv = b2 * *vv;
                        *pv -= step_size * *mv / ((*vv).sqrt() / c2_sqrt + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", Tensor::new(vec![2], vec![3.0, -2.0]).unwrap(), true);
        let mut opt = Adam::new(&store);
        for _ in 0..2000 {
            let g = store.get(id).map(|v| 2.0 * v);
            opt.step(&mut store, &[Some(g)], 0.05).unwrap();
        }
        assert!(store.get(id).data().iter().all(|v| v.abs() < 1e-3));
    }
}
