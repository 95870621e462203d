use std::io::Write;

use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::head::{assignment_candidates, forward, scene_loss, HeadOutput, ToyHead};
use super::scene::{generate_scenes, Difficulty, SceneLayout, SyntheticScene};
use crate::assign::{assign_fixed, assign_one_to_one, assign_stal, AssignmentResult, QualityExponents, StalConfig};
use crate::error::{Error, Result};
use crate::matrix::ParamMatrix;
use crate::optim::{NewtonSchulz, OptimConfig, OptimState, OptimizerKind};
use crate::postprocess::csv_io::csv_to_io;
use crate::rng;
use crate::sched_loss::{lambda_at, total_loss, LossBreakdown, ProgLossSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignerKind {
    /// One-to-many, fixed IoU threshold `fixed_tau`.
    Fixed,
    /// One-to-many, size-adaptive threshold.
    Stal,
    /// Greedy one-to-one matching.
    OneToOne,
}

impl std::str::FromStr for AssignerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(AssignerKind::Fixed),
            "stal" => Ok(AssignerKind::Stal),
            "one_to_one" | "one-to-one" => Ok(AssignerKind::OneToOne),
            other => Err(Error::arg("assigner", format!("unknown `{other}` (fixed, stal, one_to_one)"))),
        }
    }
}

/// Training run description; every field has a default so a JSON file only
/// needs the overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u32,
    pub assigner: AssignerKind,
    pub optimizer: OptimizerKind,
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub seed: u64,
    pub difficulty: Difficulty,
    pub train_scenes: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta: f64,
    pub alpha_mix: f64,
    pub ns_iterations: usize,
    pub fixed_tau: f64,
    pub tau_base: f64,
    pub alpha_decay: f64,
    pub gamma: f64,
    pub delta: f64,
    pub layout: SceneLayout,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            assigner: AssignerKind::OneToOne,
            optimizer: OptimizerKind::Musgd,
            lambda_start: 0.7,
            lambda_end: 0.3,
            seed: rng::DEFAULT_SEED,
            difficulty: Difficulty::Dense,
            train_scenes: 48,
            batch_size: 8,
            lr: 0.05,
            beta: 0.9,
            alpha_mix: 0.5,
            ns_iterations: 5,
            fixed_tau: 0.5,
            tau_base: 0.5,
            alpha_decay: 0.8,
            gamma: 1.0,
            delta: 1.0,
            layout: SceneLayout::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::arg("epochs", "must be >= 1"));
        }
        if self.train_scenes == 0 {
            return Err(Error::arg("train_scenes", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size", "must be >= 1"));
        }
        if !(self.fixed_tau > 0.0 && self.fixed_tau <= 1.0) {
            return Err(Error::arg("fixed_tau", format!("{} not in (0, 1]", self.fixed_tau)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::arg("gamma", "must be finite and >= 0"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::arg("delta", "must be finite and >= 0"));
        }
        self.layout.validate()?;
        self.stal()?;
        self.schedule()?;
        self.optim()?.validate()
    }

    pub fn stal(&self) -> Result<StalConfig<f64>> {
        StalConfig::new(self.tau_base, self.alpha_decay)
    }

    /// Cosine schedule over the run; the final epoch gets `lambda_end`.
    pub fn schedule(&self) -> Result<ProgLossSchedule<f64>> {
        ProgLossSchedule::new(self.lambda_start, self.lambda_end, self.epochs.saturating_sub(1).max(1))
    }

    pub fn optim(&self) -> Result<OptimConfig<f64>> {
        if self.ns_iterations == 0 {
            return Err(Error::arg("ns_iterations", "must be >= 1"));
        }
        let cfg = OptimConfig {
            lr: self.lr,
            beta: self.beta,
            alpha_mix: self.alpha_mix,
            ns: NewtonSchulz { iterations: self.ns_iterations, ..NewtonSchulz::default() },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The training scene set.
    pub fn scenes(&self) -> Result<Vec<SyntheticScene>> {
        generate_scenes(self.seed, rng::streams::SCENES, self.train_scenes, self.difficulty, self.layout)
    }

    /// A held-out scene set drawn like the training set.
    pub fn eval_scenes(&self, count: usize) -> Result<Vec<SyntheticScene>> {
        generate_scenes(self.seed, rng::streams::EVAL_SCENES, count, self.difficulty, self.layout)
    }
}

/// Labels every cell of `scene` against its objects using the configured
/// assigner and the head's current predictions.
pub fn assign_scene(cfg: &TrainConfig, scene: &SyntheticScene, out: &HeadOutput) -> Result<AssignmentResult<f64>> {
    let cands = assignment_candidates(scene, out);
    match cfg.assigner {
        AssignerKind::Fixed => assign_fixed(&scene.gts, &cands, cfg.fixed_tau),
        AssignerKind::Stal => assign_stal(&scene.gts, &cands, &cfg.stal()?),
        AssignerKind::OneToOne => {
            assign_one_to_one(&scene.gts, &cands, &QualityExponents { gamma: cfg.gamma, delta: cfg.delta })
        }
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub lambda: f64,
    /// Mean per-scene losses before each batch's update.
    pub l_cls: f64,
    pub l_box: f64,
    pub l_total: f64,
    /// Training-set metrics after the epoch's updates.
    pub duplicate_rate: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub initial: ToyHead,
    pub head: ToyHead,
    pub metrics: Vec<EpochMetrics>,
}

fn add_scaled(acc: &mut ParamMatrix<f64>, g: &ParamMatrix<f64>, k: f64) {
    for (a, &b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *a += k * b;
    }
}

/// Step-level training state: the scene set, head and one optimizer state
/// per weight matrix.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    scenes: Vec<SyntheticScene>,
    schedule: ProgLossSchedule<f64>,
    head: ToyHead,
    st_cls: OptimState<f64>,
    st_reg: OptimState<f64>,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let head = ToyHead::init(&cfg.layout, cfg.seed);
        let optim = cfg.optim()?;
        Ok(Trainer {
            scenes: cfg.scenes()?,
            schedule: cfg.schedule()?,
            st_cls: OptimState::new(head.w_cls.shape(), optim)?,
            st_reg: OptimState::new(head.w_reg.shape(), optim)?,
            head,
            cfg: cfg.clone(),
        })
    }

    pub fn head(&self) -> &ToyHead {
        &self.head
    }

    pub fn scenes(&self) -> &[SyntheticScene] {
        &self.scenes
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.scenes.len().div_ceil(self.cfg.batch_size)
    }

    /// Classification weight for `epoch`; epochs past the schedule keep
    /// `lambda_end`.
    pub fn lambda(&self, epoch: u32) -> Result<f64> {
        lambda_at(&self.schedule, epoch.min(self.schedule.total_epochs))
    }

    /// Losses and weighted gradients summed over `scenes` at the current
    /// weights.
    fn accumulate(
        &self,
        scenes: &[SyntheticScene],
        lambda: f64,
    ) -> Result<(f64, f64, ParamMatrix<f64>, ParamMatrix<f64>)> {
        let mut g_cls = ParamMatrix::zeros(self.head.w_cls.rows(), self.head.w_cls.cols());
        let mut g_reg = ParamMatrix::zeros(4, self.head.w_reg.cols());
        let (mut l_cls, mut l_box) = (0.0, 0.0);
        for sc in scenes {
            let out = forward(&self.head, sc)?;
            let asg = assign_scene(&self.cfg, sc, &out)?;
            let sl = scene_loss(&self.head, sc, &out, &asg)?;
            l_cls += sl.l_cls;
            l_box += sl.l_box;
            add_scaled(&mut g_cls, &sl.grad_cls, lambda);
            add_scaled(&mut g_reg, &sl.grad_reg, 1.0 - lambda);
        }
        Ok((l_cls, l_box, g_cls, g_reg))
    }

    /// Mean losses over the whole training set at the current weights.
    pub fn objective(&self, epoch: u32) -> Result<LossBreakdown<f64>> {
        let (l_cls, l_box, _, _) = self.accumulate(&self.scenes, 0.0)?;
        let n = self.scenes.len() as f64;
        total_loss(l_cls / n, l_box / n, &self.schedule, epoch.min(self.schedule.total_epochs))
    }

    /// One optimizer update on batch `batch` of `epoch`. Returns the summed
    /// (not averaged) per-scene losses seen before the update.
    pub fn step(&mut self, epoch: u32, batch: usize) -> Result<(f64, f64)> {
        let lambda = self.lambda(epoch)?;
        let bs = self.cfg.batch_size;
        let part = &self.scenes[(batch * bs).min(self.scenes.len())..((batch + 1) * bs).min(self.scenes.len())];
        if part.is_empty() {
            return Err(Error::arg("batch", format!("{batch} >= {}", self.batches_per_epoch())));
        }
        let (l_cls, l_box, mut g_cls, mut g_reg) = self.accumulate(part, lambda)?;
        if !(l_cls.is_finite() && l_box.is_finite() && g_cls.is_finite() && g_reg.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                detail: format!("non-finite loss or gradient (l_cls={l_cls}, l_box={l_box})"),
            });
        }
        let k = 1.0 / part.len() as f64;
        g_cls = g_cls.scaled(k);
        g_reg = g_reg.scaled(k);
        self.cfg.optimizer.step(&mut self.head.w_cls, &mut self.st_cls, &g_cls)?;
        self.cfg.optimizer.step(&mut self.head.w_reg, &mut self.st_reg, &g_reg)?;
        if !(self.head.w_cls.is_finite() && self.head.w_reg.is_finite()) {
            return Err(Error::Diverged { epoch, detail: "non-finite weights after update".into() });
        }
        Ok((l_cls, l_box))
    }

    pub fn into_head(self) -> ToyHead {
        self.head
    }
}

/// Runs the full training loop. Scenes are visited in a fixed order and
/// all randomness derives from `cfg.seed`, so equal configs give
/// bit-identical outcomes.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg)?;
    let initial = trainer.head().clone();
    let mut metrics = Vec::with_capacity(cfg.epochs as usize);
    for epoch in 0..cfg.epochs {
        let (mut sum_cls, mut sum_box) = (0.0, 0.0);
        for batch in 0..trainer.batches_per_epoch() {
            let (c, b) = trainer.step(epoch, batch)?;
            sum_cls += c;
            sum_box += b;
        }
        let n = trainer.scenes().len() as f64;
        let loss = total_loss(sum_cls / n, sum_box / n, &trainer.schedule, epoch.min(trainer.schedule.total_epochs))?;
        let eval = evaluate(trainer.head(), trainer.scenes())?;
        metrics.push(EpochMetrics {
            epoch,
            lambda: loss.lambda_t,
            l_cls: loss.l_cls,
            l_box: loss.l_box,
            l_total: loss.l_total,
            duplicate_rate: eval.duplicate_rate,
            recall: eval.recall,
        });
    }
    Ok(TrainOutcome { initial, head: trainer.into_head(), metrics })
}

pub const METRICS_HEADER: [&str; 7] = ["epoch", "lambda", "l_cls", "l_box", "l_total", "duplicate_rate", "recall"];

/// Writes `epoch,lambda,l_cls,l_box,l_total,duplicate_rate,recall` rows
/// after optional `#` comment lines.
pub fn write_metrics_csv<W: Write>(mut writer: W, comments: &[String], metrics: &[EpochMetrics]) -> Result<()> {
    for c in comments {
        writeln!(writer, "# {c}")?;
    }
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    wtr.write_record(METRICS_HEADER).map_err(csv_to_io)?;
    for m in metrics {
        wtr.serialize(m).map_err(csv_to_io)?;
    }
    wtr.flush()?;
    Ok(())
}
