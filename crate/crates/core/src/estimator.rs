//! Deep-learning channel estimator used to score training datasets.
//!
//! Observation model: the transmitter sounds `Np` unit-norm pilot beams
//! `f_p` (the first `Np` columns of the unitary DFT matrix by default) and the
//! receiver sees `y_p = f_p^H h + n_p` with `n_p ~ CN(0, sigma^2)`. SNR is per
//! pilot beam against the reference channel power: `sigma^2 =
//! (signal_power / nt) * 10^(-snr_db / 10)`. An MLP maps the encoded `y` to
//! the encoded `h`, both divided by the reference amplitude
//! `sqrt(signal_power / (2 nt))`, and is trained on the squared channel
//! error.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cgan::{decode_sample, encode_sample};
use crate::chanmodel::{ComplexVec, WirelessDataset};
use crate::error::{Error, Result};
use crate::ndnet::{
    backward_tape, forward_batch, forward_tape, init_params, Batch, HiddenActivation, MlpSpec,
    OptimizerState, OutputActivation, ParamVector,
};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotConfig {
    pub nt: usize,
    pub num_pilots: usize,
    /// Pilot beams `f_p`, each of length `nt`.
    #[serde(skip)]
    pub pilots: Vec<ComplexVec>,
    pub snr_grid_db: Vec<f64>,
    /// Reference `E||h||^2` against which SNR is defined.
    pub signal_power: f64,
    pub seed: u64,
}

/// Column `k` of the unitary `n x n` DFT matrix.
pub fn dft_column(n: usize, k: usize) -> ComplexVec {
    let amp = 1.0 / (n as f64).sqrt();
    ComplexVec(
        (0..n)
            .map(|i| Complex64::from_polar(amp, -TAU * (i * k) as f64 / n as f64))
            .collect(),
    )
}

impl PilotConfig {
    /// First `num_pilots` DFT beams.
    pub fn dft(nt: usize, num_pilots: usize, snr_grid_db: Vec<f64>, signal_power: f64, seed: u64) -> Result<Self> {
        let cfg = PilotConfig {
            nt,
            num_pilots,
            pilots: (0..num_pilots).map(|k| dft_column(nt, k)).collect(),
            snr_grid_db,
            signal_power,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nt == 0 || self.num_pilots == 0 || self.num_pilots > self.nt {
            return Err(Error::invalid(format!(
                "need 1 <= num_pilots <= nt, got {} pilots for nt = {}",
                self.num_pilots, self.nt
            )));
        }
        if self.pilots.len() != self.num_pilots {
            return Err(Error::invalid("pilot matrix column count differs from num_pilots"));
        }
        for (p, f) in self.pilots.iter().enumerate() {
            if f.len() != self.nt {
                return Err(Error::invalid(format!("pilot {p} has length {}", f.len())));
            }
            if (f.norm_sqr() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("pilot {p} is not unit-norm")));
            }
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("SNR grid must be nonempty and finite"));
        }
        if !(self.signal_power > 0.0 && self.signal_power.is_finite()) {
            return Err(Error::invalid("signal_power must be positive"));
        }
        Ok(())
    }

    pub fn noise_variance(&self, snr_db: f64) -> f64 {
        self.signal_power / self.nt as f64 * 10f64.powf(-snr_db / 10.0)
    }

    /// Amplitude that normalizes network inputs and outputs.
    pub fn reference_amplitude(&self) -> f64 {
        (self.signal_power / (2.0 * self.nt as f64)).sqrt()
    }
}

fn observe_with_variance<R: Rng + ?Sized>(h: &ComplexVec, cfg: &PilotConfig, variance: f64, rng: &mut R) -> Vec<f64> {
    let sigma = (variance / 2.0).sqrt();
    let mut y = Vec::with_capacity(2 * cfg.num_pilots);
    for f in &cfg.pilots {
        let mut v: Complex64 = f.0.iter().zip(&h.0).map(|(fi, hi)| fi.conj() * hi).sum();
        if sigma > 0.0 {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            v += Complex64::new(sigma * re, sigma * im);
        }
        y.push(v.re);
        y.push(v.im);
    }
    y
}

/// Encoded pilot observation `(Re y_1, Im y_1, ..., Re y_Np, Im y_Np)`.
pub fn simulate_pilots<R: Rng + ?Sized>(h: &ComplexVec, cfg: &PilotConfig, snr_db: f64, rng: &mut R) -> Result<Vec<f64>> {
    if h.len() != cfg.nt {
        return Err(Error::invalid(format!("channel has length {}, expected {}", h.len(), cfg.nt)));
    }
    Ok(observe_with_variance(h, cfg, cfg.noise_variance(snr_db), rng))
}

/// Noiseless observation, for sanity checks.
pub fn observe_noiseless(h: &ComplexVec, cfg: &PilotConfig) -> Vec<f64> {
    observe_with_variance(h, cfg, 0.0, &mut rng::stream(0, 0))
}

/// Anything that maps pilot observations to channel estimates.
pub trait ChannelEstimator {
    /// One row of encoded observations in, one row of encoded physical
    /// channel estimates (`2 nt` values) out.
    fn estimate(&self, observations: &Batch) -> Result<Batch>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorTraining {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate at the end of training relative to the start; decays
    /// geometrically per epoch.
    pub final_lr_ratio: f64,
}

impl Default for EstimatorTraining {
    fn default() -> Self {
        EstimatorTraining {
            hidden: vec![256; 5],
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            final_lr_ratio: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorNet {
    pub spec: MlpSpec,
    pub params: ParamVector,
    /// Normalization amplitude applied to inputs and outputs.
    pub amplitude: f64,
    pub training: EstimatorTraining,
}

impl EstimatorNet {
    pub fn new_untrained(cfg: &PilotConfig, training: &EstimatorTraining, rng: &mut StreamRng) -> Result<Self> {
        cfg.validate()?;
        let mut widths = vec![2 * cfg.num_pilots];
        widths.extend_from_slice(&training.hidden);
        widths.push(2 * cfg.nt);
        let spec = MlpSpec::new(widths, HiddenActivation::Relu, OutputActivation::Linear)?;
        let params = init_params(&spec, rng);
        Ok(EstimatorNet {
            spec,
            params,
            amplitude: cfg.reference_amplitude(),
            training: training.clone(),
        })
    }
}

impl ChannelEstimator for EstimatorNet {
    fn estimate(&self, observations: &Batch) -> Result<Batch> {
        let mut x = observations.clone();
        x.as_mut_slice().iter_mut().for_each(|v| *v /= self.amplitude);
        let mut out = forward_batch(&self.spec, &self.params, &x)?;
        out.as_mut_slice().iter_mut().for_each(|v| *v *= self.amplitude);
        Ok(out)
    }
}

/// Adam training on `(observation, channel)` pairs; observations are
/// regenerated every epoch with fresh noise at SNRs drawn from the grid.
pub fn train_estimator(train_set: &WirelessDataset, cfg: &PilotConfig, training: &EstimatorTraining) -> Result<EstimatorNet> {
    train_estimator_validated(train_set, cfg, training, None).map(|(net, _)| net)
}

/// Mean over the SNR grid of `10 log10 NMSE`.
pub fn mean_nmse_db(points: &[MsePoint]) -> f64 {
    points.iter().map(|p| 10.0 * p.nmse.log10()).sum::<f64>() / points.len() as f64
}

/// As [`train_estimator`], scoring the network on `validation` after every
/// epoch with [`mean_nmse_db`] and returning the best-scoring epoch's
/// parameters along with the per-epoch scores. Validation noise is fixed
/// across epochs and independent of [`eval_mse`]'s test noise.
pub fn train_estimator_validated(
    train_set: &WirelessDataset,
    cfg: &PilotConfig,
    training: &EstimatorTraining,
    validation: Option<&WirelessDataset>,
) -> Result<(EstimatorNet, Vec<f64>)> {
    if train_set.is_empty() {
        return Err(Error::invalid("estimator training set is empty"));
    }
    if train_set.nt != cfg.nt {
        return Err(Error::invalid("training set nt differs from pilot config"));
    }
    if training.batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let mut net = EstimatorNet::new_untrained(cfg, training, &mut rng::stream(cfg.seed, 0))?;
    let mut rng = rng::stream(cfg.seed, 1);
    let amp = net.amplitude;
    let channels: Vec<ComplexVec> = (0..train_set.len()).map(|i| train_set.physical(i)).collect();
    let targets: Vec<Vec<f64>> = channels.iter().map(|h| encode_sample(h, amp)).collect();
    let mut opt = OptimizerState::adam(training.learning_rate, 0.9, 0.999, 1e-8, net.params.len());
    let mut order: Vec<usize> = (0..channels.len()).collect();
    let (din, dout) = (2 * cfg.num_pilots, 2 * cfg.nt);
    let val_cfg = PilotConfig {
        seed: rng::child_seed(cfg.seed, 7),
        ..cfg.clone()
    };
    let mut scores = Vec::new();
    let mut best: Option<(f64, ParamVector)> = None;
    for epoch in 0..training.epochs {
        let progress = epoch as f64 / training.epochs.max(1) as f64;
        opt.learning_rate = training.learning_rate * training.final_lr_ratio.powf(progress);
        order.shuffle(&mut rng);
        for chunk in order.chunks(training.batch_size) {
            let mut x = Vec::with_capacity(chunk.len() * din);
            let mut t = Vec::with_capacity(chunk.len() * dout);
            for &i in chunk {
                let snr = cfg.snr_grid_db[rng.random_range(0..cfg.snr_grid_db.len())];
                let y = simulate_pilots(&channels[i], cfg, snr, &mut rng)?;
                x.extend(y.iter().map(|v| v / amp));
                t.extend_from_slice(&targets[i]);
            }
            let m = chunk.len();
            let tape = forward_tape(&net.spec, &net.params, &Batch::from_vec(m, din, x)?)?;
            let grad_out: Vec<f64> = tape
                .output()
                .as_slice()
                .iter()
                .zip(&t)
                .map(|(o, y)| 2.0 * (o - y) / m as f64)
                .collect();
            let (g, _) = backward_tape(&net.spec, &net.params, &tape, &Batch::from_vec(m, dout, grad_out)?)?;
            let (p, o) = opt.step(&net.params, &g)?;
            net.params = p;
            opt = o;
        }
        if let Some(val) = validation {
            let score = mean_nmse_db(&eval_mse(&net, val, &val_cfg)?);
            scores.push(score);
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, net.params.clone()));
            }
        }
    }
    if let Some((_, params)) = best {
        net.params = params;
    }
    Ok((net, scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsePoint {
    pub snr_db: f64,
    pub nmse: f64,
    /// Test channels with zero norm, left out of the mean.
    pub excluded: usize,
}

/// NMSE `mean ||h_hat - h||^2 / ||h||^2` at every grid SNR, with noise for
/// test sample `i` at grid point `k` drawn from its own stream.
pub fn eval_mse<E: ChannelEstimator + ?Sized>(est: &E, test_set: &WirelessDataset, cfg: &PilotConfig) -> Result<Vec<MsePoint>> {
    if test_set.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    if test_set.nt != cfg.nt {
        return Err(Error::invalid("test set nt differs from pilot config"));
    }
    let channels: Vec<ComplexVec> = (0..test_set.len()).map(|i| test_set.physical(i)).collect();
    let mut points = Vec::with_capacity(cfg.snr_grid_db.len());
    for (k, &snr) in cfg.snr_grid_db.iter().enumerate() {
        let seed = rng::child_seed(cfg.seed, 100 + k as u64);
        let rows = channels
            .iter()
            .enumerate()
            .map(|(i, h)| simulate_pilots(h, cfg, snr, &mut rng::stream(seed, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let est_rows = est.estimate(&Batch::from_rows(&rows)?)?;
        if est_rows.rows() != channels.len() || est_rows.cols() != 2 * cfg.nt {
            return Err(Error::invalid("estimator returned a batch of the wrong shape"));
        }
        let mut total = 0.0;
        let mut used = 0usize;
        for (h, row) in channels.iter().zip(est_rows.iter_rows()) {
            let power = h.norm_sqr();
            if power == 0.0 {
                continue;
            }
            let h_hat = decode_sample(row, 1.0);
            let err: f64 = h_hat.0.iter().zip(&h.0).map(|(a, b)| (a - b).norm_sqr()).sum();
            total += err / power;
            used += 1;
        }
        if used == 0 {
            return Err(Error::invalid("every test channel has zero norm"));
        }
        points.push(MsePoint {
            snr_db: snr,
            nmse: total / used as f64,
            excluded: channels.len() - used,
        });
    }
    Ok(points)
}

/// CSV rows `snr_db,nmse,dataset_label,seed` (no header).
pub fn mse_csv_rows(points: &[MsePoint], label: &str, seed: u64) -> String {
    points
        .iter()
        .map(|p| format!("{},{:e},{label},{seed}\n", p.snr_db, p.nmse))
        .collect()
}
