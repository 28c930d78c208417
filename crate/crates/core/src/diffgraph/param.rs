use ndarray::Array2;
use rand::prelude::*;

use crate::diffgraph::scalar::{sc, Scalar};

/// Handle to a named parameter array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter arrays with per-parameter Adam moment accumulators.
#[derive(Debug, Clone)]
pub struct ParamStore<S: Scalar> {
    names: Vec<String>,
    values: Vec<Array2<S>>,
    grads: Vec<Array2<S>>,
    m: Vec<Array2<S>>,
    v: Vec<Array2<S>>,
    step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: &str, value: Array2<S>) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {}",
            name
        );
        let shape = value.raw_dim();
        self.names.push(name.to_string());
        self.values.push(value);
        self.grads.push(Array2::zeros(shape));
        self.m.push(Array2::zeros(shape));
        self.v.push(Array2::zeros(shape));
        ParamId(self.names.len() - 1)
    }

    /// Xavier-style uniform fan-in initialization for a convolution weight of
    /// logical shape (k * c_in, c_out).
    pub fn add_conv_weight(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut StdRng,
    ) -> ParamId {
        let bound = (1.0 / rows as f64).sqrt();
        let w = Array2::from_shape_fn((rows, cols), |_| sc::<S>(rng.random_range(-bound..bound)));
        self.add(name, w)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<S> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<S> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Array2<S> {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Array2<S> {
        &mut self.grads[id.0]
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(S::zero());
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        let f = sc::<S>(factor);
        for g in &mut self.grads {
            g.mapv_inplace(|x| x * f);
        }
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Trainable scalars whose name starts with `prefix`.
    pub fn param_count_prefixed(&self, prefix: &str) -> usize {
        self.names
            .iter()
            .zip(&self.values)
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    pub fn names_prefixed<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Array2<S>)> {
        self.names
            .iter()
            .zip(&self.values)
            .filter(move |(n, _)| n.starts_with(prefix))
            .map(|(n, v)| (n.as_str(), v))
    }

    /// Standard Adam update with bias correction over all parameters, or only
    /// those in `subset` when given. Gradients are left untouched.
    pub fn adam_step(&mut self, learning_rate: f64, subset: Option<&[ParamId]>) {
        self.step += 1;
        let t = self.step as f64;
        let b1 = sc::<S>(ADAM_BETA1);
        let b2 = sc::<S>(ADAM_BETA2);
        let one = S::one();
        let corr1 = 1.0 - ADAM_BETA1.powf(t);
        let corr2 = 1.0 - ADAM_BETA2.powf(t);
        let rate = sc::<S>(learning_rate * corr2.sqrt() / corr1);
        let eps = sc::<S>(ADAM_EPS * corr2.sqrt());
        let ids: Vec<usize> = match subset {
            Some(ids) => ids.iter().map(|p| p.0).collect(),
            None => (0..self.values.len()).collect(),
        };
        for i in ids {
            let g = &self.grads[i];
            let m = &mut self.m[i];
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = b1 * *m + (one - b1) * g;
            });
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = b2 * *v + (one - b2) * g * g;
            });
            let value = &mut self.values[i];
            ndarray::Zip::from(value)
                .and(&self.m[i])
                .and(&self.v[i])
                .for_each(|p, &m, &v| {
                    *p = *p - rate * m / (v.sqrt() + eps);
                });
        }
    }
}
