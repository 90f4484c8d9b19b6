use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{lit, Gradients, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors with gradient accumulators.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Array2<T>>,
    grads: Vec<Array2<T>>,
    frozen: Vec<bool>,
}

impl<T: Real> ParamStore<T> {
    pub fn add(&mut self, name: impl Into<String>, value: Array2<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "parameter {name} registered twice"
        );
        self.grads.push(Array2::zeros(value.raw_dim()));
        self.values.push(value);
        self.names.push(name);
        self.frozen.push(false);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Array2<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Array2<T> {
        &self.grads[id.0]
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(T::zero());
        }
    }

    /// Adds a tape's parameter gradients into the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.params() {
            self.grads[id.0] += g;
        }
    }

    /// Number of scalars in non-frozen parameters.
    pub fn trainable_count(&self) -> usize {
        self.values
            .iter()
            .zip(&self.frozen)
            .filter(|(_, &f)| !f)
            .map(|(v, _)| v.len())
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn grad_norm(&self, id: ParamId) -> f64 {
        self.grads[id.0]
            .iter()
            .map(|g| g.to_f64_lossless().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Adam moment state, separable from the hyperparameters for checkpointing.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Array2<T>>,
    pub v: Vec<Array2<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: AdamState {
                step: 0,
                m: store.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect(),
                v: store.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect(),
            },
        }
    }

    /// One bias-corrected Adam update of every non-frozen parameter.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.state.step += 1;
        let t = self.state.step as i32;
        let (b1, b2) = (lit::<T>(self.beta1), lit::<T>(self.beta2));
        let c1 = lit::<T>(1.0 - self.beta1.powi(t));
        let c2 = lit::<T>(1.0 - self.beta2.powi(t));
        let lr = lit::<T>(self.lr);
        let eps = lit::<T>(self.eps);
        let one = T::one();
        for i in 0..store.values.len() {
            if store.frozen[i] {
                continue;
            }
            Zip::from(&mut store.values[i])
                .and(&store.grads[i])
                .and(&mut self.state.m[i])
                .and(&mut self.state.v[i])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::default();
        let w = store.add("w", array![[1.0]]);
        let mut adam = Adam::new(&store, 0.001);
        assert_eq!(adam.lr, 0.001);
        store.grads[w.0][[0, 0]] = 1.0;
        adam.step(&mut store);
        let moved = 1.0 - store.value(w)[[0, 0]];
        // lr * 1 / (1 + eps)
        assert!((moved - 0.001 / (1.0 + 1e-8)).abs() < 1e-15, "{moved}");
    }

    #[test]
    fn zero_gradient_leaves_param() {
        let mut store = ParamStore::<f32>::default();
        let w = store.add("w", array![[0.25, -2.0]]);
        let mut adam = Adam::new(&store, 0.001);
        adam.step(&mut store);
        assert_eq!(store.value(w), &array![[0.25, -2.0]]);
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut store = ParamStore::<f64>::default();
        let w = store.add("w", array![[1.0]]);
        store.set_frozen(w, true);
        store.grads[w.0].fill(3.0);
        let mut adam = Adam::new(&store, 0.1);
        adam.step(&mut store);
        assert_eq!(store.value(w)[[0, 0]], 1.0);
        assert_eq!(store.trainable_count(), 0);
        assert_eq!(store.total_count(), 1);
    }
}
