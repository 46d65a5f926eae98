//! Named trainable parameters and the Adam optimizer.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result, TensorError};
use crate::tensor::Tensor;

struct ParamInner {
    name: String,
    value: RefCell<Tensor>,
}

/// A trainable tensor. Cloning shares the same underlying parameter, which
/// is how modules share weights.
#[derive(Clone)]
pub struct Param(Rc<ParamInner>);

impl std::fmt::Debug for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Param({}, {:?})", self.0.name, self.shape())
    }
}

impl Param {
    pub fn new(name: impl Into<String>, init: Tensor) -> Param {
        Param(Rc::new(ParamInner {
            name: name.into(),
            value: RefCell::new(init.detach().requires_grad()),
        }))
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    /// The current leaf. Ops built from it record onto the tape.
    pub fn tensor(&self) -> Tensor {
        self.0.value.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.borrow().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.0.value.borrow().numel()
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.value.borrow().grad_vec()
    }

    pub fn zero_grad(&self) {
        self.0.value.borrow().zero_grad();
    }

    /// Replaces the values with a fresh leaf (drops any gradient).
    pub fn set_data(&self, data: Vec<f32>) -> Result<()> {
        let shape = self.shape();
        let t = Tensor::from_vec(data, &shape)?.requires_grad();
        *self.0.value.borrow_mut() = t;
        Ok(())
    }

    pub fn ptr_eq(&self, other: &Param) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }
}

struct StoreInner {
    params: Vec<Param>,
    rng: ChaCha8Rng,
}

/// Registry of parameters with hierarchical dotted names.
#[derive(Clone)]
pub struct VarStore {
    inner: Rc<RefCell<StoreInner>>,
    prefix: String,
}

impl VarStore {
    pub fn new(seed: u64) -> VarStore {
        VarStore {
            inner: Rc::new(RefCell::new(StoreInner {
                params: Vec::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            })),
            prefix: String::new(),
        }
    }

    /// A view that prefixes every registered name with `name.`.
    pub fn sub(&self, name: impl AsRef<str>) -> VarStore {
        VarStore {
            inner: self.inner.clone(),
            prefix: self.full_name(name.as_ref()),
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Registers a parameter. Panics on duplicate names, which is always a
    /// model-construction bug.
    pub fn register(&self, name: &str, init: Tensor) -> Param {
        let full = self.full_name(name);
        let mut inner = self.inner.borrow_mut();
        assert!(
            inner.params.iter().all(|p| p.name() != full),
            "duplicate parameter name `{full}`"
        );
        let p = Param::new(full, init);
        inner.params.push(p.clone());
        p
    }

    pub fn randn(&self, name: &str, shape: &[usize], std: f32) -> Param {
        let t = Tensor::randn(shape, std, &mut self.inner.borrow_mut().rng);
        self.register(name, t)
    }

    /// Uniform in `±bound`.
    pub fn uniform(&self, name: &str, shape: &[usize], bound: f32) -> Param {
        let t = Tensor::rand_uniform(shape, -bound, bound, &mut self.inner.borrow_mut().rng);
        self.register(name, t)
    }

    pub fn zeros(&self, name: &str, shape: &[usize]) -> Param {
        self.register(name, Tensor::zeros(shape))
    }

    pub fn ones(&self, name: &str, shape: &[usize]) -> Param {
        self.register(name, Tensor::ones(shape))
    }

    pub fn next_u64(&self) -> u64 {
        self.inner.borrow_mut().rng.gen()
    }

    /// All parameters registered under this view's prefix, in registration
    /// order.
    pub fn params(&self) -> Vec<Param> {
        let inner = self.inner.borrow();
        inner
            .params
            .iter()
            .filter(|p| {
                self.prefix.is_empty()
                    || p.name() == self.prefix
                    || p.name().starts_with(&format!("{}.", self.prefix))
            })
            .cloned()
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(Param::numel).sum()
    }

    pub fn get(&self, name: &str) -> Option<Param> {
        let full = self.full_name(name);
        self.inner
            .borrow()
            .params
            .iter()
            .find(|p| p.name() == full)
            .cloned()
    }

    pub fn zero_grad(&self) {
        for p in self.params() {
            p.zero_grad();
        }
    }

    /// Copies values by name from `(name, shape, data)` records. Every
    /// parameter must be present with a matching shape.
    pub fn load_records(&self, records: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        for p in self.params() {
            let rec = records
                .iter()
                .find(|(n, _, _)| n == p.name())
                .ok_or_else(|| {
                    TensorError::Checkpoint(format!("missing parameter `{}`", p.name()))
                })?;
            if rec.1 != p.shape() {
                return Err(TensorError::Checkpoint(format!(
                    "parameter `{}` has shape {:?} in checkpoint, model expects {:?}",
                    p.name(),
                    rec.1,
                    p.shape()
                )));
            }
            p.set_data(rec.2.clone())?;
        }
        Ok(())
    }

    pub fn records(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        self.params()
            .iter()
            .map(|p| (p.name().to_string(), p.shape(), p.tensor().to_vec()))
            .collect()
    }

    pub fn names(&self) -> BTreeSet<String> {
        self.params().iter().map(|p| p.name().to_string()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moments per parameter and the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> AdamState {
        AdamState {
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update. `grads[i] == None` leaves parameter `i`
/// and its moments untouched; the step counter always advances.
pub fn adam_step(
    params: &mut [Vec<f32>],
    grads: &[Option<&[f32]>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return Err(invalid(
            "adam_step",
            format!("learning rate must be positive, got {}", cfg.lr),
        ));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(invalid(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, p) in params.iter().enumerate() {
        let g_len = grads[i].map_or(p.len(), <[f32]>::len);
        if g_len != p.len() || state.m[i].len() != p.len() || state.v[i].len() != p.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: vec![p.len()],
                rhs: vec![g_len],
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - (cfg.beta1 as f64).powi(t);
    let bc2 = 1.0 - (cfg.beta2 as f64).powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let Some(g) = grads[i] else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] as f64 / bc1;
            let v_hat = v[j] as f64 / bc2;
            p[j] -= (cfg.lr as f64 * m_hat / (v_hat.sqrt() + cfg.eps as f64)) as f32;
        }
    }
    Ok(())
}

/// Adam over a fixed list of [`Param`]s.
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
    params: Vec<Param>,
}

impl Adam {
    pub fn new(params: Vec<Param>, config: AdamConfig) -> Adam {
        let sizes: Vec<usize> = params.iter().map(Param::numel).collect();
        Adam {
            config,
            state: AdamState::new(&sizes),
            params,
        }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    /// Applies one update from the gradients currently on the parameters.
    pub fn step(&mut self) -> Result<()> {
        let grads: Vec<Option<Vec<f32>>> = self.params.iter().map(Param::grad).collect();
        let grad_refs: Vec<Option<&[f32]>> = grads.iter().map(|g| g.as_deref()).collect();
        let mut values: Vec<Vec<f32>> = self.params.iter().map(|p| p.tensor().to_vec()).collect();
        adam_step(&mut values, &grad_refs, &mut self.state, &self.config)?;
        for (p, v) in self.params.iter().zip(values) {
            p.set_data(v)?;
        }
        Ok(())
    }

    /// Moments as checkpoint records, named after their parameters.
    pub fn records(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut out = vec![("optim.step".to_string(), vec![1], vec![self.state.t as f32])];
        for (i, p) in self.params.iter().enumerate() {
            out.push((
                format!("optim.m.{}", p.name()),
                p.shape(),
                self.state.m[i].clone(),
            ));
            out.push((
                format!("optim.v.{}", p.name()),
                p.shape(),
                self.state.v[i].clone(),
            ));
        }
        out
    }

    pub fn load_records(&mut self, records: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        let find = |name: &str| {
            records.iter().find(|(n, _, _)| n == name).ok_or_else(|| {
                TensorError::Checkpoint(format!("missing optimizer record `{name}`"))
            })
        };
        let step = find("optim.step")?;
        self.state.t = step.2[0] as u64;
        for (i, p) in self.params.iter().enumerate() {
            let m = find(&format!("optim.m.{}", p.name()))?;
            let v = find(&format!("optim.v.{}", p.name()))?;
            if m.2.len() != p.numel() || v.2.len() != p.numel() {
                return Err(TensorError::Checkpoint(format!(
                    "optimizer moments for `{}` have wrong size",
                    p.name()
                )));
            }
            self.state.m[i] = m.2.clone();
            self.state.v[i] = v.2.clone();
        }
        Ok(())
    }
}
