use rand::Rng;

use super::Tensor2;

/// Handle to one parameter tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient and Adam moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor2,
    pub grad: Tensor2,
    pub(crate) m: Tensor2,
    pub(crate) v: Tensor2,
}

impl Param {
    fn new(name: String, value: Tensor2) -> Self {
        let (r, c) = value.shape();
        Self {
            name,
            value,
            grad: Tensor2::zeros(r, c),
            m: Tensor2::zeros(r, c),
            v: Tensor2::zeros(r, c),
        }
    }

    pub fn first_moment(&self) -> &Tensor2 {
        &self.m
    }

    pub fn second_moment(&self) -> &Tensor2 {
        &self.v
    }
}

/// Ordered collection of named parameters plus the optimizer step counter.
///
/// Declaration order is significant: checkpoints store tensors in this order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    pub(crate) step: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor2) -> ParamId {
        self.params.push(Param::new(name.into(), value));
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform weights: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-a..a))
            .collect();
        let value = Tensor2::from_vec(rows, cols, data).expect("sized above");
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Tensor2::zeros(rows, cols))
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &Tensor2 {
        &self.params[id.0].value
    }

    #[inline]
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.params[id.0].value
    }

    #[inline]
    pub fn grad(&self, id: ParamId) -> &Tensor2 {
        &self.params[id.0].grad
    }

    /// Adds `delta` into the gradient of `id`.
    pub(crate) fn accumulate(&mut self, id: ParamId, delta: &[f64]) {
        let g = self.params[id.0].grad.as_mut_slice();
        debug_assert_eq!(g.len(), delta.len());
        for (a, d) in g.iter_mut().zip(delta) {
            *a += d;
        }
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.as_mut_slice().fill(0.0);
        }
    }

    pub fn max_abs_grad(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.grad.max_abs()))
    }

    /// Copies parameter values (not gradients or moments) from `other`.
    pub fn copy_values_from(&mut self, other: &ParamSet) {
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.value = src.value.clone();
        }
    }

    /// Snapshot of the parameter values in declaration order.
    pub fn values(&self) -> Vec<Tensor2> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }
}

#[cfg(test)]
impl ParamSet {
    pub(crate) fn get_mut_for_test(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }
}
