//! Seeded SGD-momentum vs MuSGD convergence comparisons.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::ParamMatrix;
use crate::optim::{NewtonSchulz, OptimConfig, OptimState, OptimizerKind};
use crate::rng;
use crate::toytrain::{TrainConfig, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    /// Ill-conditioned matrix quadratic `0.5 tr(E^T H E)`, `E = theta - theta*`.
    Quadratic,
    /// Multinomial logistic regression on Gaussian clusters.
    Logistic,
    /// The toy detector head on dense scenes.
    Toyhead,
}

impl Problem {
    pub const ALL: [Problem; 3] = [Problem::Quadratic, Problem::Logistic, Problem::Toyhead];

    pub fn name(self) -> &'static str {
        match self {
            Problem::Quadratic => "quadratic",
            Problem::Logistic => "logistic",
            Problem::Toyhead => "toyhead",
        }
    }

    pub fn default_lr(self) -> f64 {
        match self {
            Problem::Quadratic => 0.02,
            Problem::Logistic => 0.1,
            Problem::Toyhead => TrainConfig::default().lr,
        }
    }
}

impl std::str::FromStr for Problem {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Problem::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::arg("problem", format!("unknown `{s}` (valid: quadratic, logistic, toyhead)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub problem: Problem,
    pub steps: usize,
    pub lr: f64,
    pub beta: f64,
    pub alpha_mix: f64,
    pub ns_iterations: usize,
    pub seed: u64,
}

impl CompareConfig {
    pub fn new(problem: Problem, seed: u64) -> Self {
        CompareConfig {
            problem,
            steps: 200,
            lr: problem.default_lr(),
            beta: 0.9,
            alpha_mix: 0.5,
            ns_iterations: 5,
            seed,
        }
    }

    fn optim(&self) -> Result<OptimConfig<f64>> {
        let cfg = OptimConfig {
            lr: self.lr,
            beta: self.beta,
            alpha_mix: self.alpha_mix,
            ns: NewtonSchulz { iterations: self.ns_iterations, ..NewtonSchulz::default() },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Loss of both optimizers after `step` updates (step 0 is the start).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparePoint {
    pub step: usize,
    pub loss_sgd: f64,
    pub loss_musgd: f64,
}

/// A differentiable objective over one parameter matrix.
trait Objective {
    fn init(&self) -> ParamMatrix<f64>;
    fn loss_grad(&self, theta: &ParamMatrix<f64>) -> (f64, ParamMatrix<f64>);
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

struct Quadratic {
    h: ParamMatrix<f64>,
    target: ParamMatrix<f64>,
}

impl Quadratic {
    const DIM: usize = 16;

    fn new(seed: u64) -> Self {
        let n = Self::DIM;
        let mut rng = rng::stream(seed, rng::streams::PROBLEM);
        // Orthogonal basis by Gram-Schmidt on a Gaussian matrix.
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
        while q.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| gaussian(&mut rng)).collect();
            for u in &q {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 {
                q.push(v.into_iter().map(|a| a / norm).collect());
            }
        }
        // Eigenvalues log-spaced over [0.01, 1].
        let eig: Vec<f64> = (0..n).map(|i| 10f64.powf(-2.0 * i as f64 / (n - 1) as f64)).collect();
        let h = ParamMatrix::from_fn(n, n, |r, c| (0..n).map(|k| eig[k] * q[k][r] * q[k][c]).sum());
        let target = ParamMatrix::from_fn(n, n, |_, _| gaussian(&mut rng));
        Quadratic { h, target }
    }
}

impl Objective for Quadratic {
    fn init(&self) -> ParamMatrix<f64> {
        ParamMatrix::zeros(Self::DIM, Self::DIM)
    }

    fn loss_grad(&self, theta: &ParamMatrix<f64>) -> (f64, ParamMatrix<f64>) {
        let e = theta.sub(&self.target);
        let g = self.h.matmul(&e);
        let loss = 0.5 * e.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum::<f64>();
        (loss, g)
    }
}

struct Logistic {
    x: Vec<Vec<f64>>,
    y: Vec<usize>,
}

impl Logistic {
    const FEATURES: usize = 16;
    const CLASSES: usize = 8;
    const SAMPLES: usize = 256;

    fn new(seed: u64) -> Self {
        let mut rng = rng::stream(seed, rng::streams::PROBLEM);
        let means: Vec<Vec<f64>> =
            (0..Self::CLASSES).map(|_| (0..Self::FEATURES).map(|_| 1.5 * gaussian(&mut rng)).collect()).collect();
        let mut x = Vec::with_capacity(Self::SAMPLES);
        let mut y = Vec::with_capacity(Self::SAMPLES);
        for i in 0..Self::SAMPLES {
            let c = i % Self::CLASSES;
            x.push(means[c].iter().map(|m| m + gaussian(&mut rng)).collect());
            y.push(c);
        }
        Logistic { x, y }
    }
}

impl Objective for Logistic {
    fn init(&self) -> ParamMatrix<f64> {
        ParamMatrix::zeros(Self::CLASSES, Self::FEATURES)
    }

    fn loss_grad(&self, theta: &ParamMatrix<f64>) -> (f64, ParamMatrix<f64>) {
        let n = self.x.len() as f64;
        let mut grad = ParamMatrix::zeros(Self::CLASSES, Self::FEATURES);
        let mut loss = 0.0;
        for (xi, &yi) in self.x.iter().zip(&self.y) {
            let z: Vec<f64> =
                (0..Self::CLASSES).map(|k| theta.row(k).iter().zip(xi).map(|(a, b)| a * b).sum()).collect();
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - z[yi];
            for k in 0..Self::CLASSES {
                let d = (z[k] - lse).exp() - f64::from(u8::from(k == yi));
                for (j, &xj) in xi.iter().enumerate() {
                    grad[(k, j)] += d * xj / n;
                }
            }
        }
        (loss / n, grad)
    }
}

fn run_objective(obj: &dyn Objective, kind: OptimizerKind, cfg: &CompareConfig) -> Result<Vec<f64>> {
    let mut theta = obj.init();
    let mut state = OptimState::new(theta.shape(), cfg.optim()?)?;
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let (loss, g) = obj.loss_grad(&theta);
        losses.push(loss);
        kind.step(&mut theta, &mut state, &g)?;
    }
    losses.push(obj.loss_grad(&theta).0);
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Diverged {
            epoch: 0,
            detail: format!("{} run produced a non-finite loss", cfg.problem.name()),
        });
    }
    Ok(losses)
}

fn run_toyhead(kind: OptimizerKind, cfg: &CompareConfig) -> Result<Vec<f64>> {
    let base = TrainConfig::default();
    let tc = TrainConfig {
        optimizer: kind,
        seed: cfg.seed,
        lr: cfg.lr,
        beta: cfg.beta,
        alpha_mix: cfg.alpha_mix,
        ns_iterations: cfg.ns_iterations,
        ..base
    };
    let mut trainer = Trainer::new(&tc)?;
    let per_epoch = trainer.batches_per_epoch();
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    losses.push(trainer.objective(0)?.l_total);
    for step in 0..cfg.steps {
        let epoch = (step / per_epoch) as u32;
        trainer.step(epoch, step % per_epoch)?;
        losses.push(trainer.objective(epoch)?.l_total);
    }
    Ok(losses)
}

/// Runs both optimizers from the same start for `cfg.steps` updates.
pub fn compare(cfg: &CompareConfig) -> Result<Vec<ComparePoint>> {
    cfg.optim()?;
    let (sgd, musgd) = match cfg.problem {
        Problem::Quadratic => {
            let q = Quadratic::new(cfg.seed);
            (run_objective(&q, OptimizerKind::Sgd, cfg)?, run_objective(&q, OptimizerKind::Musgd, cfg)?)
        }
        Problem::Logistic => {
            let l = Logistic::new(cfg.seed);
            (run_objective(&l, OptimizerKind::Sgd, cfg)?, run_objective(&l, OptimizerKind::Musgd, cfg)?)
        }
        Problem::Toyhead => (run_toyhead(OptimizerKind::Sgd, cfg)?, run_toyhead(OptimizerKind::Musgd, cfg)?),
    };
    Ok(sgd
        .into_iter()
        .zip(musgd)
        .enumerate()
        .map(|(step, (loss_sgd, loss_musgd))| ComparePoint { step, loss_sgd, loss_musgd })
        .collect())
}
