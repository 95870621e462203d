//! SGD with momentum, Newton-Schulz gradient orthogonalization, and the
//! MuSGD blend of the two.
//!
//! One [`OptimState`] belongs to exactly one parameter matrix. Steps mutate
//! only that state, so distinct parameters may be stepped in parallel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::ParamMatrix;
use crate::scalar::Real;

/// Newton-Schulz polar iteration settings.
///
/// `order = p` selects the degree `2p + 1` member of the Newton-Schulz
/// family `X <- X * sum_{j<=p} c_j (I - X^T X)^j` with
/// `c_j = binom(2j, j) / 4^j`; `p = 1` is the classic cubic
/// `X <- 1.5 X - 0.5 X X^T X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewtonSchulz {
    pub iterations: usize,
    pub order: usize,
}

impl NewtonSchulz {
    pub const CUBIC: NewtonSchulz = NewtonSchulz { iterations: 5, order: 1 };
}

impl Default for NewtonSchulz {
    fn default() -> Self {
        NewtonSchulz { iterations: 5, order: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Orthogonalized<T> {
    pub matrix: ParamMatrix<T>,
    /// Set when the input was all zeros and no polar factor exists.
    pub degenerate: bool,
}

/// Approximates the orthogonal polar factor `U V^T` of `g` with the default
/// order and `iterations` steps.
pub fn newton_schulz<T: Real>(g: &ParamMatrix<T>, iterations: usize) -> Result<Orthogonalized<T>> {
    newton_schulz_with(g, &NewtonSchulz { iterations, ..NewtonSchulz::default() })
}

pub fn newton_schulz_with<T: Real>(g: &ParamMatrix<T>, cfg: &NewtonSchulz) -> Result<Orthogonalized<T>> {
    if cfg.iterations == 0 {
        return Err(Error::arg("iterations", "must be >= 1"));
    }
    if cfg.order == 0 {
        return Err(Error::arg("order", "must be >= 1"));
    }
    if !g.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    if g.max_abs() == T::zero() {
        return Ok(Orthogonalized { matrix: g.clone(), degenerate: true });
    }

    // Iterate on the wide orientation so the Gram matrix is the small one.
    let tall = g.rows() > g.cols();
    let mut x = if tall { g.transpose() } else { g.clone() };
    let scale = spectral_scale(&x);
    x = x.scaled(T::one() / scale);

    let coeffs = series_coefficients::<T>(cfg.order);
    let n = x.rows();
    let eye = ParamMatrix::<T>::identity(n);
    for _ in 0..cfg.iterations {
        let e = eye.sub(&x.gram_rows());
        // Horner evaluation of sum_j c_j E^j.
        let mut poly = eye.scaled(coeffs[cfg.order]);
        for &c in coeffs[..cfg.order].iter().rev() {
            poly = e.matmul(&poly);
            for i in 0..n {
                poly[(i, i)] = poly[(i, i)] + c;
            }
        }
        x = poly.matmul(&x);
    }
    let matrix = if tall { x.transpose() } else { x };
    Ok(Orthogonalized { matrix, degenerate: false })
}

/// `binom(2j, j) / 4^j` for `j = 0..=order`: the series of `(1 - x)^(-1/2)`.
fn series_coefficients<T: Real>(order: usize) -> Vec<T> {
    let mut c = Vec::with_capacity(order + 1);
    let mut v = 1.0f64;
    c.push(T::one());
    for j in 1..=order {
        v *= (2 * j - 1) as f64 / (2 * j) as f64;
        c.push(T::lit(v));
    }
    c
}

/// Normalizer close to the largest singular value of a wide matrix.
///
/// A power-iteration estimate (a lower bound) is combined with half of an
/// upper bound so the normalized top singular value stays below `sqrt(2)`,
/// inside the convergence region of the series.
fn spectral_scale<T: Real>(x: &ParamMatrix<T>) -> T {
    let gram = x.gram_rows();
    let n = gram.rows();
    let upper = gram.inf_norm().min(gram.frobenius_norm());

    let mut v: Vec<T> = (0..n).map(|i| T::one() + T::lit(0.5) * T::from_count(i).sin()).collect();
    let mut estimate = T::zero();
    for _ in 0..32 {
        let norm = v.iter().map(|&a| a * a).sum::<T>().sqrt();
        if norm == T::zero() {
            break;
        }
        v.iter_mut().for_each(|a| *a = *a / norm);
        let w: Vec<T> = (0..n).map(|i| gram.row(i).iter().zip(&v).map(|(&a, &b)| a * b).sum()).collect();
        let rayleigh: T = w.iter().zip(&v).map(|(&a, &b)| a * b).sum();
        let converged = (rayleigh - estimate).abs() <= T::epsilon() * rayleigh;
        estimate = estimate.max(rayleigh);
        v = w;
        if converged {
            break;
        }
    }
    estimate.max(upper / T::lit(2.0)).sqrt()
}

/// Hyperparameters shared by the SGD-momentum and MuSGD updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig<T> {
    pub lr: T,
    pub beta: T,
    /// Weight of the momentum branch; `1 - alpha_mix` goes to the
    /// orthogonalized gradient.
    pub alpha_mix: T,
    pub ns: NewtonSchulz,
}

impl<T: Real> OptimConfig<T> {
    pub fn new(lr: T) -> Self {
        OptimConfig { lr, beta: T::lit(0.9), alpha_mix: T::lit(0.5), ns: NewtonSchulz::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= T::zero() && self.lr.is_finite()) {
            return Err(Error::arg("lr", format!("must be finite and >= 0, got {}", self.lr)));
        }
        if !(self.beta >= T::zero() && self.beta < T::one()) {
            return Err(Error::arg("beta", format!("{} not in [0, 1)", self.beta)));
        }
        if !(self.alpha_mix >= T::zero() && self.alpha_mix <= T::one()) {
            return Err(Error::arg("alpha_mix", format!("{} not in [0, 1]", self.alpha_mix)));
        }
        if self.ns.iterations == 0 || self.ns.order == 0 {
            return Err(Error::arg("ns", "iterations and order must be >= 1"));
        }
        Ok(())
    }
}

/// Momentum buffer plus hyperparameters for one parameter matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState<T> {
    pub buffer: ParamMatrix<T>,
    pub config: OptimConfig<T>,
}

impl<T: Real> OptimState<T> {
    pub fn new(shape: (usize, usize), config: OptimConfig<T>) -> Result<Self> {
        config.validate()?;
        Ok(OptimState { buffer: ParamMatrix::zeros(shape.0, shape.1), config })
    }
}

fn check_step_inputs<T: Real>(theta: &ParamMatrix<T>, state: &OptimState<T>, g: &ParamMatrix<T>) -> Result<()> {
    state.buffer.ensure_shape(g)?;
    theta.ensure_shape(g)?;
    if !g.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(())
}

/// `v <- beta * v + g`.
pub fn momentum_update<'a, T: Real>(state: &'a mut OptimState<T>, g: &ParamMatrix<T>) -> Result<&'a ParamMatrix<T>> {
    state.buffer.ensure_shape(g)?;
    if !g.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    let beta = state.config.beta;
    for (v, &gi) in state.buffer.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *v = beta * *v + gi;
    }
    Ok(&state.buffer)
}

/// `theta <- theta - lr * v_{t+1}`.
pub fn sgd_baseline_step<T: Real>(
    theta: &mut ParamMatrix<T>,
    state: &mut OptimState<T>,
    g: &ParamMatrix<T>,
) -> Result<()> {
    check_step_inputs(theta, state, g)?;
    let lr = state.config.lr;
    let v = momentum_update(state, g)?;
    for (t, &vi) in theta.as_mut_slice().iter_mut().zip(v.as_slice()) {
        *t = *t - lr * vi;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepInfo {
    /// The gradient was all zeros, so the orthogonal branch contributed nothing.
    pub degenerate: bool,
    /// Vector-shaped parameter; only the momentum branch applies.
    pub vector_bypass: bool,
}

/// `theta <- theta - lr * (alpha_mix * v_{t+1} + (1 - alpha_mix) * NS(g))`.
///
/// The raw gradient (not the momentum buffer) is orthogonalized. Vector
/// parameters skip orthogonalization and take the pure momentum step. A
/// non-finite gradient rejects the step and leaves both `theta` and `state`
/// untouched.
pub fn musgd_step<T: Real>(
    theta: &mut ParamMatrix<T>,
    state: &mut OptimState<T>,
    g: &ParamMatrix<T>,
) -> Result<StepInfo> {
    check_step_inputs(theta, state, g)?;
    let cfg = state.config;
    if theta.is_vector() {
        sgd_baseline_step(theta, state, g)?;
        return Ok(StepInfo { degenerate: false, vector_bypass: true });
    }
    let ortho = if cfg.alpha_mix < T::one() { Some(newton_schulz_with(g, &cfg.ns)?) } else { None };
    let v = momentum_update(state, g)?;
    let mix = T::one() - cfg.alpha_mix;
    match &ortho {
        Some(o) => {
            for ((t, &vi), &oi) in theta.as_mut_slice().iter_mut().zip(v.as_slice()).zip(o.matrix.as_slice()) {
                *t = *t - cfg.lr * (cfg.alpha_mix * vi + mix * oi);
            }
        }
        None => {
            for (t, &vi) in theta.as_mut_slice().iter_mut().zip(v.as_slice()) {
                *t = *t - cfg.lr * (cfg.alpha_mix * vi);
            }
        }
    }
    Ok(StepInfo { degenerate: ortho.is_some_and(|o| o.degenerate), vector_bypass: false })
}

/// Optimizer selection for training loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Musgd,
}

impl OptimizerKind {
    pub fn step<T: Real>(
        self,
        theta: &mut ParamMatrix<T>,
        state: &mut OptimState<T>,
        g: &ParamMatrix<T>,
    ) -> Result<()> {
        match self {
            OptimizerKind::Sgd => sgd_baseline_step(theta, state, g),
            OptimizerKind::Musgd => musgd_step(theta, state, g).map(|_| ()),
        }
    }
}
