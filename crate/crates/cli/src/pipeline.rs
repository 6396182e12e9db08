//! Pipeline stages shared by the subcommands, and the end-to-end MSE
//! comparison run.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use widac_core::cgan::{encode_dataset, synthesize, Condition, GanPair, GanSpec};
use widac_core::chanmodel::{generate_dataset, path_gain_variance, WirelessDataset};
use widac_core::dataio::{load_checkpoint, save_checkpoint};
use widac_core::estimator::{eval_mse, train_estimator_validated, EstimatorNet, EstimatorTraining, MsePoint, PilotConfig};
use widac_core::metatrain::{fine_tune, meta_train, train_cgan, FineTuneRecord, GanTask, MetaTrace, TraceOptions};
use widac_core::metrics::{loss_gap_report, path_gain, LossGapOptions, LossGapReport};
use widac_core::ndnet::MlpSpec;
use widac_core::rng::{self, child_seed};

use crate::config::PipelineConfig;
use crate::manifest::Staging;

/// Labels under which sub-seeds are derived from the run seed.
pub mod seeds {
    pub const META_DATA: u64 = 10;
    pub const VALIDATION: u64 = 11;
    pub const TARGET: u64 = 20;
    pub const PILOTS: u64 = 30;
    pub const TEST: u64 = 40;
    pub const GENIE_TRAIN: u64 = 41;
    pub const SYNTH: u64 = 50;
    pub const GAIN_EVAL: u64 = 60;
    pub const SMOTE: u64 = 70;
    pub const SINGLE: u64 = 80;
    pub const LOSS_GAP: u64 = 90;
}

/// Every derived seed, for the manifest.
pub fn seed_table(seed: u64, num_meta: usize) -> BTreeMap<String, u64> {
    use seeds::*;
    let mut t = BTreeMap::from([
        ("run".to_string(), seed),
        ("target".into(), child_seed(seed, TARGET)),
        ("pilots".into(), child_seed(seed, PILOTS)),
        ("test".into(), child_seed(seed, TEST)),
        ("genie_train".into(), child_seed(seed, GENIE_TRAIN)),
        ("synth".into(), child_seed(seed, SYNTH)),
        ("gain_eval".into(), child_seed(seed, GAIN_EVAL)),
        ("smote".into(), child_seed(seed, SMOTE)),
        ("single".into(), child_seed(seed, SINGLE)),
        ("loss_gap".into(), child_seed(seed, LOSS_GAP)),
    ]);
    for i in 0..num_meta {
        t.insert(format!("meta_data_{i}"), meta_data_seed(seed, i));
        t.insert(format!("validation_{i}"), child_seed(child_seed(seed, VALIDATION), i as u64));
    }
    t
}

fn meta_data_seed(seed: u64, i: usize) -> u64 {
    child_seed(child_seed(seed, seeds::META_DATA), i as u64)
}

/// Genie datasets of one run.
pub struct GenieSets {
    pub meta: Vec<WirelessDataset>,
    pub validation: Vec<WirelessDataset>,
    pub target: WirelessDataset,
    pub test: WirelessDataset,
    pub genie_train: WirelessDataset,
}

pub fn meta_sets(cfg: &PipelineConfig) -> anyhow::Result<Vec<WirelessDataset>> {
    let e = &cfg.environments;
    e.meta_freqs_ghz
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            generate_dataset(&cfg.channel_at(f, meta_data_seed(cfg.seed, i)), e.meta_samples, i)
                .with_context(|| format!("generating meta environment {i} ({f} GHz)"))
        })
        .collect()
}

pub fn target_set(cfg: &PipelineConfig) -> anyhow::Result<WirelessDataset> {
    let e = &cfg.environments;
    let ch = cfg.channel_at(e.target_freq_ghz, child_seed(cfg.seed, seeds::TARGET));
    Ok(generate_dataset(&ch, e.target_samples, cfg.target_condition())?)
}

pub fn genie_sets(cfg: &PipelineConfig) -> anyhow::Result<GenieSets> {
    let e = &cfg.environments;
    let validation = e
        .meta_freqs_ghz
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let s = child_seed(child_seed(cfg.seed, seeds::VALIDATION), i as u64);
            generate_dataset(&cfg.channel_at(f, s), e.validation_samples, i)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let at_target = |label: u64, n: usize| {
        generate_dataset(&cfg.channel_at(e.target_freq_ghz, child_seed(cfg.seed, label)), n, cfg.target_condition())
    };
    Ok(GenieSets {
        meta: meta_sets(cfg)?,
        validation,
        target: target_set(cfg)?,
        test: at_target(seeds::TEST, e.test_samples)?,
        genie_train: at_target(seeds::GENIE_TRAIN, e.synth_samples)?,
    })
}

/// Encoding scale shared by every network of a run: the per-entry RMS of the
/// pooled meta data.
pub fn norm_scale(meta: &[WirelessDataset]) -> anyhow::Result<f64> {
    let mut total = 0.0;
    for d in meta {
        total += path_gain(d)?;
    }
    let nt = meta.first().context("no meta datasets")?.nt;
    Ok((total / meta.len() as f64 / (2.0 * nt as f64)).sqrt())
}

pub fn gan_spec(cfg: &PipelineConfig) -> anyhow::Result<GanSpec> {
    let g = &cfg.gan;
    let mut spec = GanSpec::packed(g.noise_dim, cfg.num_envs(), 2 * cfg.channel.nt, &g.hidden, g.pack)?;
    spec.loss_variant = g.loss;
    Ok(spec)
}

pub fn task(ds: &WirelessDataset, num_envs: usize, norm: f64) -> anyhow::Result<GanTask> {
    Ok(GanTask::new(encode_dataset(ds, norm), Condition::new(ds.condition_index, num_envs)?)?)
}

/// Sidecar stored next to every GAN checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanInfo {
    /// Encoding scale; generator outputs times this are physical channels.
    pub norm_scale: f64,
    /// Center frequency (GHz) of each condition index.
    pub condition_freqs_ghz: Vec<f64>,
    pub stage: String,
}

impl GanInfo {
    pub fn new(cfg: &PipelineConfig, norm_scale: f64, stage: &str) -> Self {
        let mut f = cfg.environments.meta_freqs_ghz.clone();
        f.push(cfg.environments.target_freq_ghz);
        GanInfo {
            norm_scale,
            condition_freqs_ghz: f,
            stage: stage.into(),
        }
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

pub fn save_gan_with_info(st: &mut Staging, name: &str, pair: &GanPair, info: &GanInfo) -> anyhow::Result<()> {
    widac_core::dataio::save_gan(pair, &st.path(&format!("{name}.wgp")))?;
    st.write_json(&format!("{name}.json"), info)
}

pub fn load_gan_with_info(path: &Path) -> anyhow::Result<(GanPair, GanInfo)> {
    let pair = widac_core::dataio::load_gan(path)?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).with_context(|| format!("reading GAN sidecar {}", side.display()))?;
    Ok((pair, serde_json::from_str(&text).with_context(|| format!("parsing {}", side.display()))?))
}

/// Mean physical path gain of `n` generator samples for condition `index`.
pub fn synth_gain(pair: &GanPair, index: usize, n: usize, norm: f64, seed: u64) -> anyhow::Result<f64> {
    let cond = Condition::new(index, pair.spec.num_envs)?;
    let ds = synthesize(pair, &cond, n, norm, &mut rng::stream(child_seed(seed, seeds::GAIN_EVAL), index as u64))?;
    Ok(path_gain(&ds)?)
}

pub fn synth_set(pair: &GanPair, index: usize, n: usize, norm: f64, seed: u64) -> anyhow::Result<WirelessDataset> {
    let cond = Condition::new(index, pair.spec.num_envs)?;
    Ok(synthesize(pair, &cond, n, norm, &mut rng::stream(child_seed(seed, seeds::SYNTH), 0))?
        .with_meta("generator_digest", pair.generator_digest())
        .with_meta("seed", seed.to_string()))
}

pub fn pilot_config(cfg: &PipelineConfig, signal_power: f64) -> anyhow::Result<PilotConfig> {
    Ok(PilotConfig::dft(
        cfg.channel.nt,
        cfg.estimator.num_pilots,
        cfg.estimator.snr_grid_db.clone(),
        signal_power,
        child_seed(cfg.seed, seeds::PILOTS),
    )?)
}

/// Sidecar stored next to every estimator checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorInfo {
    pub spec: MlpSpec,
    pub amplitude: f64,
    pub training: EstimatorTraining,
    /// Pilot settings; the beams are the first `num_pilots` DFT columns.
    pub pilots: PilotConfig,
    /// Validation score per epoch (mean dB NMSE), if validation was used.
    pub validation_scores: Vec<f64>,
}

pub fn save_estimator(
    st: &mut Staging,
    name: &str,
    net: &EstimatorNet,
    pilots: &PilotConfig,
    scores: &[f64],
) -> anyhow::Result<()> {
    save_checkpoint(&net.spec.digest(), &net.params, &st.path(&format!("{name}.wck")))?;
    st.write_json(
        &format!("{name}.json"),
        &EstimatorInfo {
            spec: net.spec.clone(),
            amplitude: net.amplitude,
            training: net.training.clone(),
            pilots: pilots.clone(),
            validation_scores: scores.to_vec(),
        },
    )
}

pub fn load_estimator(path: &Path) -> anyhow::Result<(EstimatorNet, PilotConfig)> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).with_context(|| format!("reading estimator sidecar {}", side.display()))?;
    let info: EstimatorInfo = serde_json::from_str(&text).with_context(|| format!("parsing {}", side.display()))?;
    let params = load_checkpoint(path, &info.spec)?;
    let p = &info.pilots;
    let pilots = PilotConfig::dft(p.nt, p.num_pilots, p.snr_grid_db.clone(), p.signal_power, p.seed)?;
    let net = EstimatorNet {
        spec: info.spec,
        params,
        amplitude: info.amplitude,
        training: info.training,
    };
    Ok((net, pilots))
}

pub const MSE_HEADER: &str = "snr_db,nmse,dataset_label,seed\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub label: String,
    pub points: Vec<MsePoint>,
    /// Epoch kept after validation, counted from zero.
    pub kept_epoch: Option<usize>,
}

impl Curve {
    pub fn nmse_db(&self) -> Vec<f64> {
        self.points.iter().map(|p| 10.0 * p.nmse.log10()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub freq_ghz: f64,
    /// Closed-form `P0 / (f^2 R^2)`.
    pub genie: f64,
    /// Mean over the genie training samples.
    pub real: f64,
    pub synthesized: f64,
}

impl GainRow {
    pub fn rel_error(&self) -> f64 {
        (self.synthesized - self.genie) / self.genie
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetGains {
    pub freq_ghz: f64,
    pub genie: f64,
    pub real: f64,
    pub meta_only: f64,
    pub fine_tuned: f64,
    pub cgan: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fig3aReport {
    pub seed: u64,
    pub norm_scale: f64,
    pub curves: Vec<Curve>,
    pub meta_gains: Vec<GainRow>,
    pub target_gains: TargetGains,
    pub loss_gap: LossGapReport,
}

impl Fig3aReport {
    pub fn curve(&self, label: &str) -> Option<&Curve> {
        self.curves.iter().find(|c| c.label == label)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from(MSE_HEADER);
        for c in &self.curves {
            out.push_str(&widac_core::estimator::mse_csv_rows(&c.points, &c.label, self.seed));
        }
        out
    }
}

/// Everything the MSE comparison run produces.
pub struct Fig3aRun {
    pub report: Fig3aReport,
    pub meta_pair: GanPair,
    pub fine_tuned: GanPair,
    pub cgan: GanPair,
    pub trace: MetaTrace,
    pub fine_tune_log: Vec<FineTuneRecord>,
    pub cgan_log: Vec<FineTuneRecord>,
    pub estimators: Vec<(String, EstimatorNet, Vec<f64>)>,
    pub pilots: PilotConfig,
}

pub const LABELS: [&str; 3] = ["genie", "dwidac", "cgan"];

/// Meta-trains over the meta environments, fine-tunes on the target, trains
/// the no-meta baseline on the same target samples, then trains one
/// estimator per training set (genie, fine-tuned synthetic, baseline
/// synthetic) and measures NMSE on a shared genie test set.
pub fn run_fig3a(cfg: &PipelineConfig, log: &mut dyn FnMut(&str)) -> anyhow::Result<Fig3aRun> {
    cfg.validate()?;
    let seed = cfg.seed;
    let sets = genie_sets(cfg)?;
    let norm = norm_scale(&sets.meta)?;
    let spec = gan_spec(cfg)?;
    let envs = cfg.num_envs();
    let tasks = sets.meta.iter().map(|d| task(d, envs, norm)).collect::<anyhow::Result<Vec<_>>>()?;
    let mcfg = cfg.meta_config();
    let opts = TraceOptions {
        norm_scale: norm,
        eval_samples: cfg.meta.trace_samples,
        validation: sets.validation.iter().map(|d| encode_dataset(d, norm)).collect(),
    };
    log(&format!("meta-training {} iterations", mcfg.meta_iters));
    let (meta_pair, trace) = meta_train(&spec, &tasks, &mcfg, &opts)?;

    let n_eval = cfg.diagnostics.eval_samples;
    let mut meta_gains = Vec::new();
    for (i, (&f, d)) in cfg.environments.meta_freqs_ghz.iter().zip(&sets.meta).enumerate() {
        meta_gains.push(GainRow {
            freq_ghz: f,
            genie: path_gain_variance(&cfg.channel_at(f, 0)),
            real: path_gain(d)?,
            synthesized: synth_gain(&meta_pair, i, n_eval, norm, seed)?,
        });
    }

    log("fine-tuning and training the baseline");
    let target_task = task(&sets.target, envs, norm)?;
    let (fine_tuned, fine_tune_log) = fine_tune(&meta_pair, &target_task, &mcfg)?;
    let (cgan, cgan_log) = train_cgan(&spec, &target_task, &mcfg)?;
    let tc = cfg.target_condition();
    let tf = cfg.environments.target_freq_ghz;
    let target_gains = TargetGains {
        freq_ghz: tf,
        genie: path_gain_variance(&cfg.channel_at(tf, 0)),
        real: path_gain(&sets.target)?,
        meta_only: synth_gain(&meta_pair, tc, n_eval, norm, seed)?,
        fine_tuned: synth_gain(&fine_tuned, tc, n_eval, norm, seed)?,
        cgan: synth_gain(&cgan, tc, n_eval, norm, seed)?,
    };
    let meta_with_conds = sets
        .meta
        .iter()
        .map(|d| Ok((d.clone(), Condition::new(d.condition_index, envs)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let loss_gap = loss_gap_report(
        &meta_pair,
        &meta_with_conds,
        &(sets.target.clone(), Condition::new(tc, envs)?),
        &LossGapOptions {
            norm_scale: norm,
            bins: cfg.diagnostics.bins,
            range: None,
            seed: child_seed(seed, seeds::LOSS_GAP),
        },
    )?;

    let n_synth = cfg.environments.synth_samples;
    let train_sets = [
        sets.genie_train.clone(),
        synth_set(&fine_tuned, tc, n_synth, norm, seed)?,
        synth_set(&cgan, tc, n_synth, norm, seed)?,
    ];
    let pilots = pilot_config(cfg, path_gain(&sets.target)?)?;
    let training = cfg.estimator_training();
    let validation = cfg.estimator.validate_on_target.then_some(&sets.target);
    let mut curves = Vec::new();
    let mut estimators = Vec::new();
    for (label, ds) in LABELS.iter().zip(&train_sets) {
        log(&format!("training estimator on {label} data"));
        let (net, scores) = train_estimator_validated(ds, &pilots, &training, validation)?;
        let kept_epoch = scores
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i);
        curves.push(Curve {
            label: label.to_string(),
            points: eval_mse(&net, &sets.test, &pilots)?,
            kept_epoch,
        });
        estimators.push((label.to_string(), net, scores));
    }
    Ok(Fig3aRun {
        report: Fig3aReport {
            seed,
            norm_scale: norm,
            curves,
            meta_gains,
            target_gains,
            loss_gap,
        },
        meta_pair,
        fine_tuned,
        cgan,
        trace,
        fine_tune_log,
        cgan_log,
        estimators,
        pilots,
    })
}

pub fn fine_tune_csv(log: &[FineTuneRecord]) -> String {
    let mut out = String::from("iteration,disc_loss,gen_loss\n");
    for r in log {
        out.push_str(&format!("{},{:e},{:e}\n", r.iteration, r.disc_loss, r.gen_loss));
    }
    out
}
