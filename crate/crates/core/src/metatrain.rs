//! Meta learning of GAN initializations over several environments, followed
//! by fine-tuning on a target environment.
//!
//! Each meta iteration adapts the shared parameters `theta` to every
//! environment with `inner_steps` plain gradient steps of size `alpha`,
//! evaluates the loss gradient at the adapted parameters `psi_i` on a fresh,
//! disjoint batch, and moves `theta` along `-sum_i grad L_i(psi_i)`. The
//! adapted parameters are treated as constants of `theta` (first-order
//! meta gradient). Generator and discriminator follow this rule separately,
//! each with its own loss.
//!
//! The outer move is either a plain step of size `beta` or an Adam step with
//! learning rate `beta`; `beta` may decay geometrically over the run.
//!
//! The loop itself is written against [`MetaObjective`], so any model with a
//! gradient step and a gradient evaluation can be meta-trained.

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::cgan::{
    disc_loss, disc_loss_grad, gan_update, gen_loss_grad, generate, sample_noise, Condition, GanPair,
    GanSpec,
};
use crate::error::{Error, Result};
use crate::ndnet::{Batch, OptimizerState, ParamVector};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetaGradMode {
    #[default]
    FirstOrder,
}

/// How the summed meta gradient moves the shared parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OuterOptimizer {
    /// `theta - beta * g`.
    Sgd,
    /// Adam with learning rate `beta`, using the pair's own optimizer state.
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    /// Inner-loop step size.
    pub alpha: f64,
    /// Meta step size at the first meta iteration.
    pub beta: f64,
    /// Meta step size at the last iteration relative to `beta`; the step
    /// decays geometrically in between.
    pub beta_final_ratio: f64,
    /// Fine-tuning step size.
    pub gamma: f64,
    pub inner_steps: usize,
    pub meta_iters: usize,
    pub fine_tune_iters: usize,
    pub batch_size: usize,
    pub meta_grad_mode: MetaGradMode,
    pub outer_optimizer: OuterOptimizer,
    pub seed: u64,
    /// Trace every this many meta iterations.
    pub log_interval: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            alpha: 0.01,
            beta: 0.005,
            beta_final_ratio: 1.0,
            gamma: 0.01,
            inner_steps: 1,
            meta_iters: 10_000,
            fine_tune_iters: 1_000,
            batch_size: 64,
            meta_grad_mode: MetaGradMode::FirstOrder,
            outer_optimizer: OuterOptimizer::Adam,
            seed: 0,
            log_interval: 100,
        }
    }
}

impl MetaConfig {
    /// Meta step size used at iteration `it` (counted from 1).
    pub fn beta_at(&self, it: usize) -> f64 {
        if self.meta_iters <= 1 || self.beta_final_ratio == 1.0 {
            return self.beta;
        }
        let progress = (it.saturating_sub(1)) as f64 / (self.meta_iters - 1) as f64;
        self.beta * self.beta_final_ratio.powf(progress)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a finite non-negative step, got {v}")));
            }
        }
        if !(self.beta_final_ratio > 0.0 && self.beta_final_ratio.is_finite()) {
            return Err(Error::invalid("beta_final_ratio must be positive"));
        }
        if self.inner_steps < 1 {
            return Err(Error::invalid("inner_steps must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.log_interval < 1 {
            return Err(Error::invalid("log_interval must be at least 1"));
        }
        Ok(())
    }
}

/// A model family that can be meta-trained with first-order updates.
pub trait MetaObjective {
    type Model: Clone;
    type Task;
    type Batch;
    /// Per-task loss record.
    type Loss: Clone;

    /// `count` mutually disjoint batches drawn from `task` when it is large
    /// enough.
    fn sample_batches(&self, task: &Self::Task, count: usize, rng: &mut StreamRng) -> Result<Vec<Self::Batch>>;

    /// One inner gradient step of size `alpha`.
    fn inner_step(
        &self,
        model: &Self::Model,
        task: &Self::Task,
        batch: &Self::Batch,
        alpha: f64,
        rng: &mut StreamRng,
    ) -> Result<(Self::Model, Self::Loss)>;

    /// Loss and gradient blocks of `model` on `batch`.
    fn gradient(
        &self,
        model: &Self::Model,
        task: &Self::Task,
        batch: &Self::Batch,
        rng: &mut StreamRng,
    ) -> Result<(Self::Loss, Vec<ParamVector>)>;

    /// Moves `model` against `grads` with step size `step`, block by block.
    fn descend(&self, model: &Self::Model, grads: &[ParamVector], step: f64) -> Result<Self::Model>;
}

/// Loss records from one meta iteration.
#[derive(Debug, Clone)]
pub struct MetaStepLosses<L> {
    /// Loss of each inner step, per task.
    pub inner: Vec<Vec<L>>,
    /// Loss at the adapted parameters on the meta batch, per task.
    pub meta: Vec<L>,
}

/// `steps` inner steps on fresh batches; `model` is not modified.
pub fn adapt<O: MetaObjective>(
    obj: &O,
    model: &O::Model,
    task: &O::Task,
    alpha: f64,
    steps: usize,
    rng: &mut StreamRng,
) -> Result<(O::Model, Vec<O::Loss>)> {
    let batches = obj.sample_batches(task, steps, rng)?;
    run_inner(obj, model, task, &batches, alpha, rng)
}

fn run_inner<O: MetaObjective>(
    obj: &O,
    model: &O::Model,
    task: &O::Task,
    batches: &[O::Batch],
    alpha: f64,
    rng: &mut StreamRng,
) -> Result<(O::Model, Vec<O::Loss>)> {
    let mut psi = model.clone();
    let mut losses = Vec::with_capacity(batches.len());
    for b in batches {
        let (next, loss) = obj.inner_step(&psi, task, b, alpha, rng)?;
        psi = next;
        losses.push(loss);
    }
    Ok((psi, losses))
}

/// One first-order meta update over all tasks.
pub fn first_order_meta_step<O: MetaObjective>(
    obj: &O,
    model: &O::Model,
    tasks: &[O::Task],
    alpha: f64,
    beta: f64,
    inner_steps: usize,
    rng: &mut StreamRng,
) -> Result<(O::Model, MetaStepLosses<O::Loss>)> {
    if tasks.is_empty() {
        return Err(Error::invalid("meta step needs at least one task"));
    }
    let mut sum: Option<Vec<ParamVector>> = None;
    let mut inner = Vec::with_capacity(tasks.len());
    let mut meta = Vec::with_capacity(tasks.len());
    for task in tasks {
        let mut batches = obj.sample_batches(task, inner_steps + 1, rng)?;
        let meta_batch = batches.pop().expect("inner_steps + 1 batches");
        let (psi, inner_losses) = run_inner(obj, model, task, &batches, alpha, rng)?;
        let (loss, grads) = obj.gradient(&psi, task, &meta_batch, rng)?;
        match sum.as_mut() {
            None => sum = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.add_scaled(g, 1.0);
                }
            }
        }
        inner.push(inner_losses);
        meta.push(loss);
    }
    let next = obj.descend(model, &sum.expect("nonempty tasks"), beta)?;
    Ok((next, MetaStepLosses { inner, meta }))
}

/// One environment's training data, already encoded for the networks.
#[derive(Debug, Clone)]
pub struct GanTask {
    pub data: Batch,
    pub cond: Condition,
}

impl GanTask {
    pub fn new(data: Batch, cond: Condition) -> Result<Self> {
        if data.rows() == 0 {
            return Err(Error::invalid("task dataset is empty"));
        }
        Ok(GanTask { data, cond })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanLosses {
    pub disc: f64,
    pub gen: f64,
}

/// The conditional GAN as a meta-learning objective: discriminator and
/// generator parameters are the two gradient blocks, in that order.
#[derive(Debug, Clone, Copy)]
pub struct GanObjective {
    pub batch_size: usize,
    pub outer: OuterOptimizer,
}

/// Row indices for `count` batches of `size`; disjoint when the dataset has
/// at least `count * size` rows, otherwise each batch is drawn independently.
fn disjoint_indices(rows: usize, size: usize, count: usize, rng: &mut StreamRng) -> Vec<Vec<usize>> {
    let size = size.min(rows);
    if count * size <= rows {
        let all = sample_indices(rng, rows, count * size).into_vec();
        all.chunks(size).map(<[usize]>::to_vec).collect()
    } else {
        (0..count)
            .map(|_| sample_indices(rng, rows, size).into_vec())
            .collect()
    }
}

impl MetaObjective for GanObjective {
    type Model = GanPair;
    type Task = GanTask;
    type Batch = Batch;
    type Loss = GanLosses;

    fn sample_batches(&self, task: &GanTask, count: usize, rng: &mut StreamRng) -> Result<Vec<Batch>> {
        if task.data.rows() == 0 {
            return Err(Error::invalid("task dataset is empty"));
        }
        Ok(disjoint_indices(task.data.rows(), self.batch_size, count, rng)
            .iter()
            .map(|idx| task.data.select(idx))
            .collect())
    }

    fn inner_step(
        &self,
        model: &GanPair,
        task: &GanTask,
        batch: &Batch,
        alpha: f64,
        rng: &mut StreamRng,
    ) -> Result<(GanPair, GanLosses)> {
        let (gen_opt, disc_opt) = (model.gen_opt.clone(), model.disc_opt.clone());
        let out = gan_update(&model.clone().with_sgd(alpha), batch, &task.cond, rng)?;
        Ok((
            out.pair.with_optimizers(gen_opt, disc_opt),
            GanLosses {
                disc: out.disc_loss,
                gen: out.gen_loss,
            },
        ))
    }

    fn gradient(
        &self,
        model: &GanPair,
        task: &GanTask,
        batch: &Batch,
        rng: &mut StreamRng,
    ) -> Result<(GanLosses, Vec<ParamVector>)> {
        let n = batch.rows();
        let noise = sample_noise(model.spec.noise_dim, n, rng);
        let fake = generate(model, &noise, &task.cond)?;
        let (disc, d_grad) = disc_loss_grad(model, batch, &fake, &task.cond)?;
        let noise = sample_noise(model.spec.noise_dim, n, rng);
        let (gen, g_grad) = gen_loss_grad(model, &noise, &task.cond)?;
        Ok((GanLosses { disc, gen }, vec![d_grad, g_grad]))
    }

    fn descend(&self, model: &GanPair, grads: &[ParamVector], step: f64) -> Result<GanPair> {
        let mut out = model.clone();
        match self.outer {
            OuterOptimizer::Sgd => {
                let sgd = OptimizerState::sgd(step);
                out.disc_params = sgd.step(&model.disc_params, &grads[0])?.0;
                out.gen_params = sgd.step(&model.gen_params, &grads[1])?.0;
            }
            OuterOptimizer::Adam => {
                let mut d = model.disc_opt.clone();
                let mut g = model.gen_opt.clone();
                d.learning_rate = step;
                g.learning_rate = step;
                (out.disc_params, out.disc_opt) = d.step(&model.disc_params, &grads[0])?;
                (out.gen_params, out.gen_opt) = g.step(&model.gen_params, &grads[1])?;
            }
        }
        Ok(out)
    }
}

/// `steps` GAN steps with plain gradient descent of size `alpha` on batches
/// from `task`. Returns the adapted pair; `pair` itself is left untouched.
pub fn inner_adapt(
    pair: &GanPair,
    task: &GanTask,
    alpha: f64,
    steps: usize,
    batch_size: usize,
    rng: &mut StreamRng,
) -> Result<GanPair> {
    let obj = GanObjective {
        batch_size,
        outer: OuterOptimizer::Sgd,
    };
    adapt(&obj, pair, task, alpha, steps, rng).map(|(p, _)| p)
}

/// One logged point of a meta-training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub iteration: usize,
    /// Last inner-step losses per task.
    pub inner_losses: Vec<GanLosses>,
    /// Losses at the adapted parameters on the meta batches, per task.
    pub adapted_losses: Vec<GanLosses>,
    /// Sum of the adapted discriminator losses.
    pub meta_loss: f64,
    /// Discriminator loss of `theta` on held-out data, averaged over tasks.
    pub validation_loss: Option<f64>,
    /// Mean `||h||^2` (physical units) of generator samples, per task.
    pub path_gains: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetaTrace {
    pub records: Vec<MetaRecord>,
}

impl MetaTrace {
    /// CSV with one row per record.
    pub fn to_csv(&self) -> String {
        let m = self.records.first().map_or(0, |r| r.path_gains.len());
        let mut out = String::from("iteration");
        for i in 0..m {
            out.push_str(&format!(",disc_loss_{i},gen_loss_{i}"));
        }
        out.push_str(",meta_loss,validation_loss");
        for i in 0..m {
            out.push_str(&format!(",path_gain_{i}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.iteration.to_string());
            for i in 0..m {
                match r.inner_losses.get(i) {
                    Some(l) => out.push_str(&format!(",{:e},{:e}", l.disc, l.gen)),
                    None => out.push_str(",,"),
                }
            }
            out.push_str(&format!(",{:e},", r.meta_loss));
            if let Some(v) = r.validation_loss {
                out.push_str(&format!("{v:e}"));
            }
            for g in &r.path_gains {
                out.push_str(&format!(",{g:e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// What to measure at each logged iteration.
#[derive(Debug, Clone)]
pub struct TraceOptions {
    /// Encoding normalization; synthesized samples are multiplied by it
    /// before measuring path gain.
    pub norm_scale: f64,
    /// Generator samples per task for the path-gain curve.
    pub eval_samples: usize,
    /// Held-out data per task, same order as the tasks.
    pub validation: Vec<Batch>,
}

fn synthesized_path_gain(pair: &GanPair, cond: &Condition, n: usize, norm: f64, seed: u64) -> Result<f64> {
    let noise = sample_noise(pair.spec.noise_dim, n, &mut rng::stream(seed, cond.index() as u64));
    let out = generate(pair, &noise, cond)?;
    let total: f64 = out.as_slice().iter().map(|v| v * v).sum();
    Ok(total / n as f64 * norm * norm)
}

fn trace_record(
    pair: &GanPair,
    tasks: &[GanTask],
    iteration: usize,
    losses: Option<&MetaStepLosses<GanLosses>>,
    opts: &TraceOptions,
    seed: u64,
) -> Result<MetaRecord> {
    let path_gains = if opts.eval_samples > 0 {
        tasks
            .iter()
            .map(|t| synthesized_path_gain(pair, &t.cond, opts.eval_samples, opts.norm_scale, seed))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let validation_loss = if opts.validation.is_empty() {
        None
    } else {
        let mut total = 0.0;
        for (t, v) in tasks.iter().zip(&opts.validation) {
            let noise = sample_noise(pair.spec.noise_dim, v.rows(), &mut rng::stream(seed, 1_000 + t.cond.index() as u64));
            let fake = generate(pair, &noise, &t.cond)?;
            total += disc_loss(pair, v, &fake, &t.cond)?;
        }
        Some(total / opts.validation.len() as f64)
    };
    let (inner_losses, adapted_losses, meta_loss) = match losses {
        Some(l) => (
            l.inner.iter().filter_map(|v| v.last().copied()).collect(),
            l.meta.clone(),
            l.meta.iter().map(|x| x.disc).sum(),
        ),
        None => (Vec::new(), Vec::new(), f64::NAN),
    };
    Ok(MetaRecord {
        iteration,
        inner_losses,
        adapted_losses,
        meta_loss,
        validation_loss,
        path_gains,
    })
}

/// One meta iteration on the GAN objective.
pub fn meta_step(
    pair: &GanPair,
    tasks: &[GanTask],
    cfg: &MetaConfig,
    rng: &mut StreamRng,
) -> Result<(GanPair, MetaStepLosses<GanLosses>)> {
    cfg.validate()?;
    let obj = GanObjective {
        batch_size: cfg.batch_size,
        outer: cfg.outer_optimizer,
    };
    first_order_meta_step(&obj, pair, tasks, cfg.alpha, cfg.beta, cfg.inner_steps, rng)
}

/// Meta-trains a freshly initialized pair for `cfg.meta_iters` iterations.
///
/// The trace holds iteration 0 (the initialization) and every
/// `cfg.log_interval`-th iteration after it.
pub fn meta_train(
    spec: &GanSpec,
    tasks: &[GanTask],
    cfg: &MetaConfig,
    opts: &TraceOptions,
) -> Result<(GanPair, MetaTrace)> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::invalid("meta training needs at least one task"));
    }
    if !opts.validation.is_empty() && opts.validation.len() != tasks.len() {
        return Err(Error::invalid("one validation set per task is required"));
    }
    let eval_seed = rng::child_seed(cfg.seed, 2);
    let mut pair = GanPair::init(spec.clone(), &mut rng::stream(cfg.seed, 0))?;
    let mut rng = rng::stream(cfg.seed, 1);
    let mut trace = MetaTrace::default();
    trace.records.push(trace_record(&pair, tasks, 0, None, opts, eval_seed)?);
    let mut step_cfg = cfg.clone();
    for it in 1..=cfg.meta_iters {
        step_cfg.beta = cfg.beta_at(it);
        let (next, losses) = meta_step(&pair, tasks, &step_cfg, &mut rng)?;
        pair = next;
        if it % cfg.log_interval == 0 {
            trace
                .records
                .push(trace_record(&pair, tasks, it, Some(&losses), opts, eval_seed)?);
        }
    }
    Ok((pair, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineTuneRecord {
    pub iteration: usize,
    pub disc_loss: f64,
    pub gen_loss: f64,
}

/// `cfg.fine_tune_iters` GAN steps with gradient descent of size
/// `cfg.gamma`, starting from `pair`, on batches from the target task.
pub fn fine_tune(pair: &GanPair, target: &GanTask, cfg: &MetaConfig) -> Result<(GanPair, Vec<FineTuneRecord>)> {
    cfg.validate()?;
    if target.data.rows() == 0 {
        return Err(Error::invalid("fine-tuning dataset is empty"));
    }
    let obj = GanObjective {
        batch_size: cfg.batch_size,
        outer: cfg.outer_optimizer,
    };
    let mut rng = rng::stream(rng::child_seed(cfg.seed, 3), 0);
    let mut current = pair.clone();
    let mut trace = Vec::with_capacity(cfg.fine_tune_iters);
    for it in 1..=cfg.fine_tune_iters {
        let batch = obj.sample_batches(target, 1, &mut rng)?.pop().expect("one batch");
        let (next, loss) = obj.inner_step(&current, target, &batch, cfg.gamma, &mut rng)?;
        current = next;
        trace.push(FineTuneRecord {
            iteration: it,
            disc_loss: loss.disc,
            gen_loss: loss.gen,
        });
    }
    Ok((current, trace))
}

/// The no-meta baseline: the fine-tuning procedure from a fresh random
/// initialization.
pub fn train_cgan(spec: &GanSpec, target: &GanTask, cfg: &MetaConfig) -> Result<(GanPair, Vec<FineTuneRecord>)> {
    let pair = GanPair::init(spec.clone(), &mut rng::stream(cfg.seed, 0))?;
    fine_tune(&pair, target, cfg)
}

/// Meta-gradient norm helper for convergence checks.
pub fn grad_norm(grads: &[ParamVector]) -> f64 {
    grads.iter().map(|g| g.norm().powi(2)).sum::<f64>().sqrt()
}
