//! Named parameter storage, dense layers and the Adam optimizer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Array, Element, Gradients, Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered table of named parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Element> {
    names: Vec<String>,
    values: Vec<Array<T>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array<T>] {
        &mut self.values
    }

    pub fn get(&self, id: ParamId) -> &Array<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<T> {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Array::all_finite)
    }

    /// Every parameter as a gradient-tracking leaf of `graph`.
    pub fn bind<'g>(&self, graph: &'g Graph<T>) -> Bound<'g, T> {
        Bound {
            leaves: self.values.iter().map(|v| graph.param(v.clone())).collect(),
        }
    }

    /// Every parameter as a constant of `graph`.
    pub fn bind_frozen<'g>(&self, graph: &'g Graph<T>) -> Bound<'g, T> {
        Bound {
            leaves: self.values.iter().map(|v| graph.constant(v.clone())).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Array::cast).collect(),
        }
    }

    /// Zero-filled arrays shaped like every parameter.
    pub fn zeros_like(&self) -> Vec<Array<T>> {
        self.values.iter().map(|v| Array::zeros(v.shape())).collect()
    }

    /// Replaces every value, checking names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Checkpoint("parameter names do not match the model".into()));
        }
        for (name, (dst, src)) in self.names.iter().zip(self.values.iter_mut().zip(&other.values)) {
            if dst.shape() != src.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has shape {:?}, model expects {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}

/// Graph leaves for a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound<'g, T: Element> {
    leaves: Vec<Tensor<'g, T>>,
}

impl<'g, T: Element> Bound<'g, T> {
    /// Wraps caller-made leaves, in store order.
    pub fn from_leaves(leaves: Vec<Tensor<'g, T>>) -> Self {
        Self { leaves }
    }

    pub fn get(&self, id: ParamId) -> Tensor<'g, T> {
        self.leaves[id.0]
    }

    pub fn leaves(&self) -> &[Tensor<'g, T>] {
        &self.leaves
    }

    /// Gradients in store order; parameters the loss does not reach get
    /// zeros.
    pub fn collect(&self, grads: &Gradients<T>) -> Vec<Array<T>> {
        self.leaves.iter().map(|t| grads.get_or_zeros(t)).collect()
    }
}

/// `U(−a, a)` with `a = √(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Element>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::lit(rng.gen_range(-a..a)))
        .collect();
    Array::new(vec![fan_in, fan_out], data).expect("sized")
}

/// `y = x·W (+ b)` on row vectors, `W` stored `in × out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(rng, fan_in, fan_out));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Array::zeros(&[fan_out])));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<'g, T: Element>(&self, p: &Bound<'g, T>, x: Tensor<'g, T>) -> Result<Tensor<'g, T>> {
        let y = x.matmul(p.get(self.weight))?;
        match self.bias {
            Some(b) => y.add_row(p.get(b)),
            None => Ok(y),
        }
    }
}

/// Stack of [`Linear`] layers with relu between them, and optionally after
/// the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_last: bool,
}

impl Mlp {
    /// `widths = [in, h1, …, out]`.
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        widths: &[usize],
        relu_last: bool,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1], true))
            .collect();
        Self { layers, relu_last }
    }

    pub fn forward<'g, T: Element>(&self, p: &Bound<'g, T>, mut x: Tensor<'g, T>) -> Result<Tensor<'g, T>> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(p, x)?;
            if i < last || self.relu_last {
                x = x.relu();
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Element> {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<Array<T>>,
    v: Vec<Array<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: store.zeros_like(),
            v: store.zeros_like(),
        }
    }

    /// One bias-corrected update of every parameter.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Array<T>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::invalid(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (i, (g, p)) in grads.iter().zip(store.values()).enumerate() {
            if g.shape() != p.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of '{}'", store.names()[i])));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = store.values_mut()[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j].to_f64().expect("finite");
                let mj = beta1 * m[j].to_f64().expect("finite") + (1.0 - beta1) * gj;
                let vj = beta2 * v[j].to_f64().expect("finite") + (1.0 - beta2) * gj * gj;
                m[j] = T::lit(mj);
                v[j] = T::lit(vj);
                let update = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
                p[j] = T::lit(p[j].to_f64().expect("finite") - update);
            }
        }
        Ok(())
    }
}

/// Elementwise `acc += g` over matching gradient lists.
pub fn accumulate<T: Element>(acc: &mut [Array<T>], grads: &[Array<T>]) {
    for (a, g) in acc.iter_mut().zip(grads) {
        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
            *x = *x + *y;
        }
    }
}

pub fn scale<T: Element>(grads: &mut [Array<T>], s: f64) {
    let s = T::lit(s);
    for g in grads {
        for x in g.data_mut() {
            *x = *x * s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn xavier_bounds_and_determinism() {
        let draw = || xavier_uniform::<f32>(&mut ChaCha8Rng::seed_from_u64(1), 6, 10);
        let w = draw();
        assert_eq!(w.shape(), &[6, 10]);
        let a = (6.0f64 / 16.0).sqrt() as f32;
        assert!(w.data().iter().all(|x| x.abs() <= a));
        assert_eq!(w, draw());
    }

    #[test]
    fn linear_forward_adds_bias_per_row() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut store, &mut rng, "l", 2, 1, true);
        *store.get_mut(lin.weight) = Array::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        *store.get_mut(lin.bias.unwrap()) = Array::from_vec(vec![0.5]);
        let g = Graph::new();
        let p = store.bind(&g);
        let x = g.constant(Array::new(vec![2, 2], vec![1.0, 1.0, 0.0, 3.0]).unwrap());
        assert_eq!(lin.forward(&p, x).unwrap().value().data(), &[3.5, 6.5]);
        assert_eq!(store.names(), ["l.weight", "l.bias"]);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Array::from_vec(vec![1.0, -2.0]));
        let before = store.clone();
        let mut adam = Adam::new(&store, AdamConfig::default());
        adam.step(&mut store, &[Array::zeros(&[2])]).unwrap();
        assert_eq!(store, before);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Array::from_vec(vec![0.0; 4]));
        let mut adam = Adam::new(&store, AdamConfig::default());
        adam.step(&mut store, &[Array::from_vec(vec![3.0, -0.5, 1e-3, 100.0])]).unwrap();
        for (x, sign) in store.values()[0].data().iter().zip([-1.0, 1.0, -1.0, -1.0]) {
            assert!(x * sign > 0.0);
            assert!((0.99e-3..=1e-3).contains(&x.abs()), "{x}");
        }
    }

    #[test]
    fn adam_rejects_mismatches() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Array::from_vec(vec![0.0; 2]));
        let mut adam = Adam::new(&store, AdamConfig::default());
        assert!(adam.step(&mut store, &[]).is_err());
        assert!(adam.step(&mut store, &[Array::zeros(&[3])]).is_err());
        assert!(adam.step(&mut store, &[Array::from_vec(vec![f64::NAN, 0.0])]).is_err());
    }
}
