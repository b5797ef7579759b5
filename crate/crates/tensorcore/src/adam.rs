//! Named parameter storage and the Adam optimizer with decoupled weight decay.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::tensor::Tensor;

/// One named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Whether weight decay applies (weight matrices yes, biases and norm
    /// parameters no).
    pub decay: bool,
}

/// Ordered collection of named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Float> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Appends a parameter; returns its position. Names must be unique.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>, decay: bool) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, tensor, decay });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.params[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(move |i| &mut self.params[i].tensor)
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.params[i].tensor
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.params[i].tensor
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Keeps only the parameters for which `keep` returns true.
    pub fn retain(&mut self, mut keep: impl FnMut(&Param<T>) -> bool) {
        self.params.retain(|p| keep(p));
        self.index = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
    }

    /// Appends every parameter of `other`.
    pub fn extend(&mut self, other: ParamStore<T>) {
        for p in other.params {
            self.push(p.name, p.tensor, p.decay);
        }
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.push(p.name.clone(), p.tensor.cast(), p.decay);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments for every parameter, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Float> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.tensor.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One Adam update in place.
///
/// Moments are bias-corrected; decay is decoupled, subtracting
/// `lr * weight_decay * param` from parameters flagged for decay.
pub fn adam_step<T: Float>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(TensorError::InvalidArgument {
            op: "adam_step",
            msg: format!("learning rate must be positive, got {lr}"),
        });
    }
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TensorError::InvalidArgument {
            op: "adam_step",
            msg: format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.tensor.shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: p.tensor.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(TensorError::NonFinite(format!("gradient of {}", p.name)));
        }
    }

    state.t += 1;
    let cfg = state.config;
    let t = state.t as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one_m_b1 = T::from_f64(1.0 - cfg.beta1);
    let one_m_b2 = T::from_f64(1.0 - cfg.beta2);
    let c1 = T::from_f64(1.0 - cfg.beta1.powi(t));
    let c2 = T::from_f64(1.0 - cfg.beta2.powi(t));
    let eps = T::from_f64(cfg.eps);
    let lr_t = T::from_f64(lr);
    let decay = T::from_f64(lr * cfg.weight_decay);

    for (i, g) in grads.iter().enumerate() {
        let apply_decay = params.params()[i].decay && cfg.weight_decay != 0.0;
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let w = params.tensor_mut(i).data_mut();
        for j in 0..w.len() {
            let gj = g.data()[j];
            m[j] = b1 * m[j] + one_m_b1 * gj;
            v[j] = b2 * v[j] + one_m_b2 * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            let mut update = lr_t * m_hat / (v_hat.sqrt() + eps);
            if apply_decay {
                update += decay * w[j];
            }
            w[j] -= update;
        }
    }
    Ok(())
}
