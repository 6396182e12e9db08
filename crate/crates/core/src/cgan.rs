//! Conditional GAN over encoded channel vectors.
//!
//! The generator maps `[z; c]` to a real vector of length `data_dim`; the
//! discriminator maps `[x; c]` to the probability that `x` is real. Both see
//! the condition `c` as a one-hot vector appended to their input.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chanmodel::{ComplexVec, Source, WirelessDataset};
use crate::error::{Error, Result};
use crate::ndnet::{
    backward_tape, forward_batch, forward_tape, init_params, Batch, HiddenActivation, MlpSpec,
    OptimizerState, OutputActivation, ParamVector,
};

/// Clamp applied to discriminator outputs before taking logs.
pub const PREDICTION_EPS: f64 = 1e-12;

/// One-hot environment selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    index: usize,
    num_envs: usize,
}

impl Condition {
    pub fn new(index: usize, num_envs: usize) -> Result<Self> {
        if index >= num_envs {
            return Err(Error::invalid(format!(
                "condition index {index} out of range for {num_envs} environments"
            )));
        }
        Ok(Condition { index, num_envs })
    }

    /// Parses a one-hot vector; anything else is rejected.
    pub fn from_one_hot(values: &[f64]) -> Result<Self> {
        let mut hot = None;
        for (i, &v) in values.iter().enumerate() {
            if v == 1.0 {
                if hot.replace(i).is_some() {
                    return Err(Error::invalid("condition has more than one active entry"));
                }
            } else if v != 0.0 {
                return Err(Error::invalid(format!("condition entry {i} is {v}, not 0 or 1")));
            }
        }
        let index = hot.ok_or_else(|| Error::invalid("condition has no active entry"))?;
        Condition::new(index, values.len())
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn num_envs(&self) -> usize {
        self.num_envs
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.num_envs];
        v[self.index] = 1.0;
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Generator minimizes `mean log(1 - D(G(z|c)|c))`.
    Minimax,
    /// Generator minimizes `mean -log D(G(z|c)|c)`.
    NonSaturating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanSpec {
    pub noise_dim: usize,
    pub num_envs: usize,
    pub data_dim: usize,
    pub gen_spec: MlpSpec,
    pub disc_spec: MlpSpec,
    pub loss_variant: LossVariant,
    /// Samples the discriminator judges jointly: each of its inputs is
    /// `pack` consecutive samples side by side plus the condition. One is
    /// the plain conditional GAN.
    #[serde(default = "one")]
    pub pack: usize,
}

fn one() -> usize {
    1
}

impl GanSpec {
    /// Generator with relu hidden layers and linear output; discriminator
    /// with leaky-relu(0.2) hidden layers and sigmoid output. Both use
    /// `hidden` for their hidden widths.
    pub fn standard(noise_dim: usize, num_envs: usize, data_dim: usize, hidden: &[usize]) -> Result<Self> {
        Self::packed(noise_dim, num_envs, data_dim, hidden, 1)
    }

    /// As [`GanSpec::standard`], with a discriminator that sees `pack`
    /// samples per decision. Batches fed to it must be multiples of `pack`.
    pub fn packed(noise_dim: usize, num_envs: usize, data_dim: usize, hidden: &[usize], pack: usize) -> Result<Self> {
        if pack == 0 {
            return Err(Error::invalid("pack must be at least 1"));
        }
        let mut gw = vec![noise_dim + num_envs];
        gw.extend_from_slice(hidden);
        gw.push(data_dim);
        let mut dw = vec![pack * data_dim + num_envs];
        dw.extend_from_slice(hidden);
        dw.push(1);
        let spec = GanSpec {
            noise_dim,
            num_envs,
            data_dim,
            gen_spec: MlpSpec::new(gw, HiddenActivation::Relu, OutputActivation::Linear)?,
            disc_spec: MlpSpec::new(
                dw,
                HiddenActivation::LeakyRelu { slope: 0.2 },
                OutputActivation::Sigmoid,
            )?,
            loss_variant: LossVariant::NonSaturating,
            pack,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen_spec.validate()?;
        self.disc_spec.validate()?;
        if self.noise_dim == 0 || self.num_envs == 0 || self.data_dim == 0 {
            return Err(Error::invalid("noise_dim, num_envs, and data_dim must be positive"));
        }
        if self.gen_spec.input_width() != self.noise_dim + self.num_envs {
            return Err(Error::invalid("generator input width must be noise_dim + num_envs"));
        }
        if self.gen_spec.output_width() != self.data_dim {
            return Err(Error::invalid("generator output width must be data_dim"));
        }
        if self.pack == 0 {
            return Err(Error::invalid("pack must be at least 1"));
        }
        if self.disc_spec.input_width() != self.pack * self.data_dim + self.num_envs {
            return Err(Error::invalid("discriminator input width must be pack * data_dim + num_envs"));
        }
        if self.disc_spec.output_width() != 1 || self.disc_spec.output_activation != OutputActivation::Sigmoid {
            return Err(Error::invalid("discriminator must end in a single sigmoid unit"));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    fn check_condition(&self, cond: &Condition) -> Result<()> {
        if cond.num_envs() != self.num_envs {
            return Err(Error::invalid(format!(
                "condition has {} environments, GAN expects {}",
                cond.num_envs(),
                self.num_envs
            )));
        }
        Ok(())
    }
}

/// Generator and discriminator parameters with their optimizer states.
#[derive(Debug, Clone, PartialEq)]
pub struct GanPair {
    pub spec: GanSpec,
    pub gen_params: ParamVector,
    pub disc_params: ParamVector,
    pub gen_opt: OptimizerState,
    pub disc_opt: OptimizerState,
}

impl GanPair {
    /// Fresh He-uniform initialization with the default Adam optimizers.
    pub fn init<R: Rng + ?Sized>(spec: GanSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let gen_params = init_params(&spec.gen_spec, rng);
        let disc_params = init_params(&spec.disc_spec, rng);
        Ok(GanPair {
            gen_opt: OptimizerState::gan_adam(gen_params.len()),
            disc_opt: OptimizerState::gan_adam(disc_params.len()),
            spec,
            gen_params,
            disc_params,
        })
    }

    pub fn from_params(spec: GanSpec, gen_params: ParamVector, disc_params: ParamVector) -> Result<Self> {
        spec.validate()?;
        if gen_params.len() != spec.gen_spec.param_count() || disc_params.len() != spec.disc_spec.param_count() {
            return Err(Error::invalid("parameter lengths do not match the GAN spec"));
        }
        Ok(GanPair {
            gen_opt: OptimizerState::gan_adam(gen_params.len()),
            disc_opt: OptimizerState::gan_adam(disc_params.len()),
            spec,
            gen_params,
            disc_params,
        })
    }

    pub fn with_optimizers(mut self, gen_opt: OptimizerState, disc_opt: OptimizerState) -> Self {
        self.gen_opt = gen_opt;
        self.disc_opt = disc_opt;
        self
    }

    /// Both optimizers replaced by plain gradient descent with step `lr`.
    pub fn with_sgd(self, lr: f64) -> Self {
        self.with_optimizers(OptimizerState::sgd(lr), OptimizerState::sgd(lr))
    }

    /// Digest of the spec and both parameter vectors.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.spec.digest().as_bytes());
        h.update(self.gen_params.digest().as_bytes());
        h.update(self.disc_params.digest().as_bytes());
        hex::encode(h.finalize())
    }

    pub fn generator_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.spec.gen_spec.digest().as_bytes());
        h.update(self.gen_params.digest().as_bytes());
        hex::encode(h.finalize())
    }
}

/// Interleaves `(Re, Im)` of each entry and divides by `scale`.
pub fn encode_sample(h: &ComplexVec, scale: f64) -> Vec<f64> {
    h.0.iter().flat_map(|c| [c.re / scale, c.im / scale]).collect()
}

/// Inverse of [`encode_sample`].
pub fn decode_sample(v: &[f64], scale: f64) -> ComplexVec {
    ComplexVec(
        v.chunks_exact(2)
            .map(|p| Complex64::new(p[0] * scale, p[1] * scale))
            .collect(),
    )
}

/// Physical-unit samples of `ds`, encoded with normalization `scale`.
pub fn encode_dataset(ds: &WirelessDataset, scale: f64) -> Batch {
    let rows: Vec<Vec<f64>> = (0..ds.len())
        .map(|i| encode_sample(&ds.physical(i), scale))
        .collect();
    if rows.is_empty() {
        return Batch::zeros(0, 2 * ds.nt);
    }
    Batch::from_rows(&rows).expect("dataset samples share nt")
}

/// `-x log p - (1 - x) log(1 - p)` with `p` clamped to `[eps, 1 - eps]`.
pub fn cross_entropy(label: f64, prediction: f64) -> f64 {
    let p = prediction.clamp(PREDICTION_EPS, 1.0 - PREDICTION_EPS);
    -label * p.ln() - (1.0 - label) * (1.0 - p).ln()
}

/// Derivative of [`cross_entropy`] with respect to the prediction; zero where
/// the clamp is active.
fn cross_entropy_grad(label: f64, prediction: f64) -> f64 {
    if !(PREDICTION_EPS..=1.0 - PREDICTION_EPS).contains(&prediction) {
        return 0.0;
    }
    -label / prediction + (1.0 - label) / (1.0 - prediction)
}

/// Standard-normal noise, one row per sample.
pub fn sample_noise<R: Rng + ?Sized>(noise_dim: usize, n: usize, rng: &mut R) -> Batch {
    let data = (0..n * noise_dim).map(|_| rng.sample(StandardNormal)).collect();
    Batch::from_vec(n, noise_dim, data).expect("sized noise buffer")
}

/// Generator outputs `G(z|c)` for every noise row.
pub fn generate(pair: &GanPair, noise: &Batch, cond: &Condition) -> Result<Batch> {
    pair.spec.check_condition(cond)?;
    forward_batch(&pair.spec.gen_spec, &pair.gen_params, &noise.append_to_rows(&cond.one_hot()))
}

fn check_batch(batch: &Batch, width: usize, what: &str) -> Result<()> {
    if batch.rows() == 0 {
        return Err(Error::invalid(format!("{what} batch is empty")));
    }
    if batch.cols() != width {
        return Err(Error::invalid(format!(
            "{what} batch has width {}, expected {width}",
            batch.cols()
        )));
    }
    Ok(())
}

/// Discriminator input rows: `pack` consecutive samples then the condition.
fn disc_input(spec: &GanSpec, batch: &Batch, c: &[f64]) -> Result<Batch> {
    if batch.rows() % spec.pack != 0 {
        return Err(Error::invalid(format!(
            "batch of {} rows is not a multiple of the pack size {}",
            batch.rows(),
            spec.pack
        )));
    }
    if spec.pack == 1 {
        return Ok(batch.append_to_rows(c));
    }
    let packed = Batch::from_vec(batch.rows() / spec.pack, spec.pack * spec.data_dim, batch.as_slice().to_vec())?;
    Ok(packed.append_to_rows(c))
}

/// Discriminator loss and its gradient with respect to the discriminator
/// parameters.
pub fn disc_loss_grad(pair: &GanPair, real: &Batch, fake: &Batch, cond: &Condition) -> Result<(f64, ParamVector)> {
    let spec = &pair.spec;
    spec.check_condition(cond)?;
    check_batch(real, spec.data_dim, "real")?;
    check_batch(fake, spec.data_dim, "fake")?;
    let c = cond.one_hot();
    let (real_in, fake_in) = (disc_input(spec, real, &c)?, disc_input(spec, fake, &c)?);
    let (nr, nf) = (real_in.rows(), fake_in.rows());
    let mut stacked = Vec::with_capacity((nr + nf) * real_in.cols());
    stacked.extend_from_slice(real_in.as_slice());
    stacked.extend_from_slice(fake_in.as_slice());
    let input = Batch::from_vec(nr + nf, real_in.cols(), stacked)?;
    let tape = forward_tape(&spec.disc_spec, &pair.disc_params, &input)?;
    let out = tape.output().as_slice();
    let mut loss_real = 0.0;
    let mut loss_fake = 0.0;
    let mut grad_out = Vec::with_capacity(nr + nf);
    for (i, &p) in out.iter().enumerate() {
        if i < nr {
            loss_real += cross_entropy(1.0, p);
            grad_out.push(cross_entropy_grad(1.0, p) / nr as f64);
        } else {
            loss_fake += cross_entropy(0.0, p);
            grad_out.push(cross_entropy_grad(0.0, p) / nf as f64);
        }
    }
    let (grad, _) = backward_tape(
        &spec.disc_spec,
        &pair.disc_params,
        &tape,
        &Batch::from_vec(nr + nf, 1, grad_out)?,
    )?;
    Ok((loss_real / nr as f64 + loss_fake / nf as f64, grad))
}

/// `mean CE(1, D(x|c)) + mean CE(0, D(fake|c))`.
pub fn disc_loss(pair: &GanPair, real: &Batch, fake: &Batch, cond: &Condition) -> Result<f64> {
    let spec = &pair.spec;
    spec.check_condition(cond)?;
    check_batch(real, spec.data_dim, "real")?;
    check_batch(fake, spec.data_dim, "fake")?;
    let c = cond.one_hot();
    let mean_ce = |batch: &Batch, label: f64| -> Result<f64> {
        let out = forward_batch(&spec.disc_spec, &pair.disc_params, &disc_input(spec, batch, &c)?)?;
        Ok(out.as_slice().iter().map(|&p| cross_entropy(label, p)).sum::<f64>() / out.rows() as f64)
    };
    Ok(mean_ce(real, 1.0)? + mean_ce(fake, 0.0)?)
}

fn gen_term(variant: LossVariant, p: f64) -> (f64, f64) {
    let q = p.clamp(PREDICTION_EPS, 1.0 - PREDICTION_EPS);
    let active = (PREDICTION_EPS..=1.0 - PREDICTION_EPS).contains(&p);
    match variant {
        LossVariant::Minimax => ((1.0 - q).ln(), if active { -1.0 / (1.0 - q) } else { 0.0 }),
        LossVariant::NonSaturating => (-q.ln(), if active { -1.0 / q } else { 0.0 }),
    }
}

/// Generator loss and its gradient with respect to the generator parameters,
/// chained through the (fixed) discriminator.
pub fn gen_loss_grad(pair: &GanPair, noise: &Batch, cond: &Condition) -> Result<(f64, ParamVector)> {
    let spec = &pair.spec;
    spec.check_condition(cond)?;
    check_batch(noise, spec.noise_dim, "noise")?;
    let c = cond.one_hot();
    let gen_tape = forward_tape(&spec.gen_spec, &pair.gen_params, &noise.append_to_rows(&c))?;
    let disc_tape = forward_tape(&spec.disc_spec, &pair.disc_params, &disc_input(spec, gen_tape.output(), &c)?)?;
    let n = disc_tape.output().rows();
    let mut loss = 0.0;
    let mut grad_out = Vec::with_capacity(n);
    for &p in disc_tape.output().as_slice() {
        let (l, g) = gen_term(spec.loss_variant, p);
        loss += l;
        grad_out.push(g / n as f64);
    }
    let (_, dx) = backward_tape(
        &spec.disc_spec,
        &pair.disc_params,
        &disc_tape,
        &Batch::from_vec(n, 1, grad_out)?,
    )?;
    let dfake = dx.leading_columns(spec.pack * spec.data_dim).into_vec();
    let (grad, _) = backward_tape(
        &spec.gen_spec,
        &pair.gen_params,
        &gen_tape,
        &Batch::from_vec(noise.rows(), spec.data_dim, dfake)?,
    )?;
    Ok((loss / n as f64, grad))
}

pub fn gen_loss(pair: &GanPair, noise: &Batch, cond: &Condition) -> Result<f64> {
    check_batch(noise, pair.spec.noise_dim, "noise")?;
    let fake = generate(pair, noise, cond)?;
    let out = forward_batch(
        &pair.spec.disc_spec,
        &pair.disc_params,
        &disc_input(&pair.spec, &fake, &cond.one_hot())?,
    )?;
    let total: f64 = out
        .as_slice()
        .iter()
        .map(|&p| gen_term(pair.spec.loss_variant, p).0)
        .sum();
    Ok(total / out.rows() as f64)
}

/// Result of one alternating update.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub pair: GanPair,
    pub disc_loss: f64,
    pub gen_loss: f64,
}

/// Discriminator update on fresh fakes followed by a generator update on
/// fresh noise. Reported losses are the ones each update descended, measured
/// before it was applied.
pub(crate) fn gan_update<R: Rng + ?Sized>(
    pair: &GanPair,
    real: &Batch,
    cond: &Condition,
    rng: &mut R,
) -> Result<StepOutcome> {
    let n = real.rows();
    let noise = sample_noise(pair.spec.noise_dim, n, rng);
    let fake = generate(pair, &noise, cond)?;
    let (d_loss, d_grad) = disc_loss_grad(pair, real, &fake, cond)?;
    let (disc_params, disc_opt) = pair.disc_opt.step(&pair.disc_params, &d_grad)?;
    let mut next = GanPair {
        disc_params,
        disc_opt,
        ..pair.clone()
    };
    let noise = sample_noise(pair.spec.noise_dim, n, rng);
    let (g_loss, g_grad) = gen_loss_grad(&next, &noise, cond)?;
    let (gen_params, gen_opt) = next.gen_opt.step(&next.gen_params, &g_grad)?;
    next.gen_params = gen_params;
    next.gen_opt = gen_opt;
    Ok(StepOutcome {
        pair: next,
        disc_loss: d_loss,
        gen_loss: g_loss,
    })
}

/// One discriminator update then one generator update, each through the
/// pair's own optimizer. Returns the new pair with both losses re-evaluated
/// after the updates on the batches that drove them.
pub fn gan_step<R: Rng + ?Sized>(pair: &GanPair, real: &Batch, cond: &Condition, rng: &mut R) -> Result<StepOutcome> {
    pair.spec.check_condition(cond)?;
    check_batch(real, pair.spec.data_dim, "real")?;
    let n = real.rows();
    let noise_d = sample_noise(pair.spec.noise_dim, n, rng);
    let fake = generate(pair, &noise_d, cond)?;
    let (_, d_grad) = disc_loss_grad(pair, real, &fake, cond)?;
    let (disc_params, disc_opt) = pair.disc_opt.step(&pair.disc_params, &d_grad)?;
    let mut next = GanPair {
        disc_params,
        disc_opt,
        ..pair.clone()
    };
    let noise_g = sample_noise(pair.spec.noise_dim, n, rng);
    let (_, g_grad) = gen_loss_grad(&next, &noise_g, cond)?;
    let (gen_params, gen_opt) = next.gen_opt.step(&next.gen_params, &g_grad)?;
    next.gen_params = gen_params;
    next.gen_opt = gen_opt;
    let disc_loss = disc_loss(&next, real, &fake, cond)?;
    let gen_loss = gen_loss(&next, &noise_g, cond)?;
    Ok(StepOutcome {
        pair: next,
        disc_loss,
        gen_loss,
    })
}

/// `n` generator samples for `cond`, decoded with `scale` into physical units.
pub fn synthesize<R: Rng + ?Sized>(
    pair: &GanPair,
    cond: &Condition,
    n: usize,
    scale: f64,
    rng: &mut R,
) -> Result<WirelessDataset> {
    if n == 0 {
        return Err(Error::invalid("synthesize needs n >= 1"));
    }
    if pair.spec.data_dim % 2 != 0 {
        return Err(Error::invalid("data_dim must be even to decode complex channels"));
    }
    if !(scale > 0.0) {
        return Err(Error::invalid(format!("scale {scale} must be positive")));
    }
    let noise = sample_noise(pair.spec.noise_dim, n, rng);
    let out = generate(pair, &noise, cond)?;
    let samples = out.iter_rows().map(|r| decode_sample(r, scale)).collect();
    let ds = WirelessDataset::new(pair.spec.data_dim / 2, samples, cond.index(), 1.0)?;
    Ok(ds
        .with_meta("source", Source::Synthesized.as_str())
        .with_meta("method", "cgan")
        .with_meta("generator_digest", pair.generator_digest())
        .with_meta("decode_scale", format!("{scale:e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndnet::{finite_diff_grad, sigmoid};
    use crate::rng::stream;

    fn tiny_spec(variant: LossVariant) -> GanSpec {
        let mut s = GanSpec::standard(3, 2, 4, &[6, 5]).unwrap();
        s.loss_variant = variant;
        s
    }

    fn random_batch<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Batch {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Batch::from_vec(rows, cols, data).unwrap()
    }

    /// A discriminator whose output is the constant sigmoid(bias).
    fn constant_disc(pair: &mut GanPair, bias: f64) {
        let n = pair.disc_params.len();
        let p = pair.disc_params.as_mut_slice();
        p.iter_mut().for_each(|v| *v = 0.0);
        p[n - 1] = bias;
    }

    #[test]
    fn condition_one_hot() {
        let c = Condition::new(1, 5).unwrap();
        assert_eq!(c.one_hot(), vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(Condition::from_one_hot(&c.one_hot()).unwrap(), c);
        assert!(Condition::new(5, 5).is_err());
        assert!(Condition::from_one_hot(&[0.0, 0.0]).is_err());
        assert!(Condition::from_one_hot(&[1.0, 1.0]).is_err());
        assert!(Condition::from_one_hot(&[0.5, 0.0]).is_err());
    }

    #[test]
    fn spec_wiring_is_validated() {
        let mut s = tiny_spec(LossVariant::Minimax);
        assert!(s.validate().is_ok());
        s.noise_dim = 4;
        assert!(s.validate().is_err());
        let mut s = tiny_spec(LossVariant::Minimax);
        s.disc_spec.output_activation = OutputActivation::Linear;
        assert!(s.validate().is_err());
    }

    #[test]
    fn encode_examples() {
        let h = ComplexVec(vec![Complex64::new(1.0, 2.0)]);
        assert_eq!(encode_sample(&h, 1.0), vec![1.0, 2.0]);
        let h = ComplexVec(vec![Complex64::new(2.0, 0.0), Complex64::new(0.0, -4.0)]);
        assert_eq!(encode_sample(&h, 2.0), vec![1.0, 0.0, 0.0, -2.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(1.0, 0.9) - 0.105_360_515_657_826_3).abs() < 1e-15);
        assert!((cross_entropy(0.0, 0.5) - std::f64::consts::LN_2).abs() < 1e-15);
        let at_one = cross_entropy(1.0, 1.0);
        assert!(at_one > 0.0 && (at_one - 1e-12).abs() < 1e-15);
        assert!(cross_entropy(0.0, 1.0).is_finite());
    }

    #[test]
    fn constant_half_discriminator_losses() {
        let mut rng = stream(1, 0);
        let mut pair = GanPair::init(tiny_spec(LossVariant::Minimax), &mut rng).unwrap();
        constant_disc(&mut pair, 0.0);
        let cond = Condition::new(0, 2).unwrap();
        let real = random_batch(5, 4, &mut rng);
        let fake = random_batch(3, 4, &mut rng);
        let l = disc_loss(&pair, &real, &fake, &cond).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let noise = random_batch(4, 3, &mut rng);
        let g = gen_loss(&pair, &noise, &cond).unwrap();
        assert!((g + std::f64::consts::LN_2).abs() < 1e-12);
        pair.spec.loss_variant = LossVariant::NonSaturating;
        let g = gen_loss(&pair, &noise, &cond).unwrap();
        assert!((g - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_discriminator_losses_vanish() {
        let mut rng = stream(2, 0);
        let mut pair = GanPair::init(tiny_spec(LossVariant::NonSaturating), &mut rng).unwrap();
        let cond = Condition::new(1, 2).unwrap();
        // D = 1 everywhere: generator's non-saturating loss is ~0
        constant_disc(&mut pair, 80.0);
        let g = gen_loss(&pair, &random_batch(3, 3, &mut rng), &cond).unwrap();
        assert!(g.abs() < 1e-11);
        // perfect discriminator: real scored 1, fake scored 0
        let n = pair.disc_params.len();
        let p = pair.disc_params.as_mut_slice();
        p.iter_mut().for_each(|v| *v = 0.0);
        // hidden widths 6,5: route the first data coordinate through
        p[0] = 1.0; // layer 0, unit 0 <- x0
        let l1 = pair.spec.disc_spec.layers()[1];
        p[l1.weight_offset] = 1.0; // layer 1, unit 0 <- unit 0
        let l2 = pair.spec.disc_spec.layers()[2];
        p[l2.weight_offset] = 200.0;
        p[n - 1] = -100.0;
        let real = Batch::from_rows(&[vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        let fake = Batch::from_rows(&[vec![0.0, 0.0, 0.0, 0.0]]).unwrap();
        let l = disc_loss(&pair, &real, &fake, &cond).unwrap();
        assert!(l < 1e-10, "{l}");
    }

    #[test]
    fn empty_batches_are_rejected() {
        let mut rng = stream(3, 0);
        let pair = GanPair::init(tiny_spec(LossVariant::Minimax), &mut rng).unwrap();
        let cond = Condition::new(0, 2).unwrap();
        let empty = Batch::zeros(0, 4);
        let one = random_batch(1, 4, &mut rng);
        assert!(disc_loss(&pair, &empty, &one, &cond).is_err());
        assert!(disc_loss(&pair, &one, &empty, &cond).is_err());
        assert!(gen_loss(&pair, &Batch::zeros(0, 3), &cond).is_err());
        assert!(gan_step(&pair, &empty, &cond, &mut rng).is_err());
    }

    /// Empirical expectations written out directly from the discriminator
    /// outputs of individual samples.
    #[test]
    fn disc_loss_matches_direct_expectation() {
        let mut rng = stream(4, 0);
        let pair = GanPair::init(tiny_spec(LossVariant::Minimax), &mut rng).unwrap();
        let cond = Condition::new(1, 2).unwrap();
        let real = random_batch(7, 4, &mut rng);
        let noise = random_batch(5, 3, &mut rng);
        let fake = generate(&pair, &noise, &cond).unwrap();
        let d = |x: &[f64]| {
            let mut v = x.to_vec();
            v.extend(cond.one_hot());
            crate::ndnet::forward(&pair.spec.disc_spec, &pair.disc_params, &v).unwrap()[0]
        };
        let e_real: f64 = real.iter_rows().map(|x| d(x).ln()).sum::<f64>() / 7.0;
        let e_fake: f64 = fake.iter_rows().map(|x| (1.0 - d(x)).ln()).sum::<f64>() / 5.0;
        let want = -(e_real + e_fake);
        let got = disc_loss(&pair, &real, &fake, &cond).unwrap();
        assert!((got - want).abs() < 1e-12);
        let (got2, _) = disc_loss_grad(&pair, &real, &fake, &cond).unwrap();
        assert!((got2 - want).abs() < 1e-12);
        let want_g = fake.iter_rows().map(|x| (1.0 - d(x)).ln()).sum::<f64>() / 5.0;
        assert!((gen_loss(&pair, &noise, &cond).unwrap() - want_g).abs() < 1e-12);
    }

    fn rel_err(a: &ParamVector, b: &ParamVector) -> f64 {
        let num = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        num / a.norm().max(b.norm()).max(1e-12)
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        for (seed, variant) in [(5, LossVariant::Minimax), (6, LossVariant::NonSaturating)] {
            let mut rng = stream(seed, 0);
            let pair = GanPair::init(tiny_spec(variant), &mut rng).unwrap();
            let cond = Condition::new(0, 2).unwrap();
            let real = random_batch(4, 4, &mut rng);
            let fake = random_batch(3, 4, &mut rng);
            let noise = random_batch(5, 3, &mut rng);

            let (_, dg) = disc_loss_grad(&pair, &real, &fake, &cond).unwrap();
            let fd = finite_diff_grad(
                |p| {
                    let mut q = pair.clone();
                    q.disc_params = p.clone();
                    disc_loss(&q, &real, &fake, &cond).unwrap()
                },
                &pair.disc_params,
                1e-5,
            );
            assert!(rel_err(&dg, &fd) < 1e-6, "disc {}", rel_err(&dg, &fd));

            let (_, gg) = gen_loss_grad(&pair, &noise, &cond).unwrap();
            let fd = finite_diff_grad(
                |p| {
                    let mut q = pair.clone();
                    q.gen_params = p.clone();
                    gen_loss(&q, &noise, &cond).unwrap()
                },
                &pair.gen_params,
                1e-5,
            );
            assert!(rel_err(&gg, &fd) < 1e-6, "gen {}", rel_err(&gg, &fd));
        }
    }

    #[test]
    fn gan_step_with_zero_rates_keeps_parameters() {
        let mut rng = stream(7, 0);
        let pair = GanPair::init(tiny_spec(LossVariant::NonSaturating), &mut rng)
            .unwrap()
            .with_sgd(0.0);
        let cond = Condition::new(1, 2).unwrap();
        let real = random_batch(8, 4, &mut rng);
        let out = gan_step(&pair, &real, &cond, &mut rng).unwrap();
        assert_eq!(out.pair.gen_params, pair.gen_params);
        assert_eq!(out.pair.disc_params, pair.disc_params);
        assert!(out.disc_loss.is_finite() && out.gen_loss.is_finite());
    }

    #[test]
    fn gan_step_is_deterministic() {
        let mut rng = stream(8, 0);
        let pair = GanPair::init(tiny_spec(LossVariant::NonSaturating), &mut rng).unwrap();
        let cond = Condition::new(0, 2).unwrap();
        let real = random_batch(8, 4, &mut rng);
        let a = gan_step(&pair, &real, &cond, &mut stream(9, 0)).unwrap();
        let b = gan_step(&pair, &real, &cond, &mut stream(9, 0)).unwrap();
        assert_eq!(a.pair, b.pair);
        assert_eq!(a.disc_loss.to_bits(), b.disc_loss.to_bits());
        assert_ne!(a.pair.gen_params, pair.gen_params);
    }

    #[test]
    fn synthesize_examples() {
        let mut rng = stream(10, 0);
        let mut pair = GanPair::init(tiny_spec(LossVariant::NonSaturating), &mut rng).unwrap();
        let cond = Condition::new(1, 2).unwrap();
        let ds = synthesize(&pair, &cond, 1, 0.5, &mut stream(11, 0)).unwrap();
        let z = sample_noise(3, 1, &mut stream(11, 0));
        let mut input = z.row(0).to_vec();
        input.extend(cond.one_hot());
        let want = decode_sample(
            &crate::ndnet::forward(&pair.spec.gen_spec, &pair.gen_params, &input).unwrap(),
            0.5,
        );
        assert_eq!(ds.samples[0], want);
        assert_eq!(ds.condition_index, 1);
        assert_eq!(ds.source(), Some("synthesized"));

        pair.gen_params = ParamVector::zeros(pair.gen_params.len());
        let ds = synthesize(&pair, &cond, 10, 1.0, &mut rng).unwrap();
        assert!(ds.samples.iter().all(|s| s.norm_sqr() == 0.0));
        assert!(synthesize(&pair, &cond, 0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-16);
    }

    proptest::proptest! {
        #[test]
        fn encode_round_trips(values in proptest::collection::vec(-1e6f64..1e6, 1..8), k in 0i32..6) {
            let scale = 2f64.powi(k);
            let h = ComplexVec(values.chunks(2).map(|c| Complex64::new(c[0], *c.get(1).unwrap_or(&0.0))).collect());
            let back = decode_sample(&encode_sample(&h, scale), scale);
            proptest::prop_assert_eq!(back, h);
        }

        #[test]
        fn losses_are_permutation_invariant(seed in 0u64..1000) {
            let mut rng = stream(seed, 0);
            let pair = GanPair::init(tiny_spec(LossVariant::NonSaturating), &mut rng).unwrap();
            let cond = Condition::new(0, 2).unwrap();
            let real = random_batch(6, 4, &mut rng);
            let fake = random_batch(6, 4, &mut rng);
            let perm = [3usize, 0, 5, 1, 4, 2];
            let a = disc_loss(&pair, &real, &fake, &cond).unwrap();
            let b = disc_loss(&pair, &real.select(&perm), &fake.select(&perm), &cond).unwrap();
            proptest::prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
