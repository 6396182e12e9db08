//! Subcommands. Each one reads its inputs, computes everything, and only then
//! publishes its outputs and the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};
use widac_core::baselines::{flops_generator, flops_smote, flops_table_csv, flops_table_json, smote_generate};
use widac_core::cgan::Condition;
use widac_core::chanmodel::{generate_dataset, WirelessDataset};
use widac_core::dataio::{load_dataset, save_dataset};
use widac_core::estimator::{eval_mse, mse_csv_rows, train_estimator_validated};
use widac_core::metatrain::{fine_tune, meta_train, train_cgan, TraceOptions};
use widac_core::metrics::{loss_gap_report, path_gain, tv_distance, Feature, LossGapOptions};
use widac_core::ndnet::{HiddenActivation, MlpSpec, OutputActivation};
use widac_core::rng::{self, child_seed};

use crate::config::PipelineConfig;
use crate::manifest::{sha256_file, Manifest, Staging, TOOL};
use crate::pipeline::{self, seeds, GanInfo};

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Genie datasets for every environment, or one file with --freq.
    GenChannels(GenChannelsArgs),
    /// Meta-train the conditional GAN over the meta environments.
    MetaTrain(MetaTrainArgs),
    /// Fine-tune a meta-trained GAN on target samples.
    FineTune(FineTuneArgs),
    /// Train the conditional GAN on target samples from scratch.
    TrainCgan(TrainCganArgs),
    /// Draw samples from a trained GAN.
    Synthesize(SynthesizeArgs),
    /// Train a channel estimator on a dataset.
    TrainEstimator(TrainEstimatorArgs),
    /// NMSE of a saved estimator on a saved test set.
    Evaluate(EvaluateArgs),
    /// SMOTE oversampling of a dataset.
    Smote(SmoteArgs),
    /// Per-sample FLOPs of the generator and of SMOTE.
    FlopsReport(FlopsArgs),
    /// Path gains, total variation and loss gap of a GAN.
    Diagnostics(DiagnosticsArgs),
    /// The full MSE comparison: meta-train, fine-tune, baseline, estimators.
    #[command(name = "repro-fig3a")]
    #[serde(rename = "repro-fig3a")]
    ReproFig3a(NoArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct NoArgs {}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenChannelsArgs {
    /// Center frequency in GHz; writes a single dataset.
    #[arg(long)]
    pub freq: Option<f64>,
    /// Samples in the single dataset.
    #[arg(long, requires = "freq")]
    pub n: Option<usize>,
    #[arg(long, requires = "freq", default_value_t = 0)]
    pub condition: usize,
    /// File name of the single dataset inside the output directory.
    #[arg(long, requires = "freq", default_value = "channels.wdc")]
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct MetaTrainArgs {
    /// Meta datasets in condition order; generated from the config if absent.
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FineTuneArgs {
    #[arg(long)]
    pub gan: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainCganArgs {
    #[arg(long)]
    pub target: PathBuf,
    /// Encoding scale; taken from this GAN's sidecar to match a meta run.
    #[arg(long)]
    pub norm_from: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub gan: PathBuf,
    /// Condition index; defaults to the target environment.
    #[arg(long)]
    pub condition: Option<usize>,
    /// Sample count; defaults to environments.synth_samples.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value = "synth.wdc")]
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainEstimatorArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Real samples for picking the best epoch.
    #[arg(long)]
    pub validate: Option<PathBuf>,
    /// Dataset whose path gain defines the SNR; defaults to --validate, then --train.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value = "estimator")]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub estimator: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value = "estimator")]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SmoteArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Sample count; defaults to environments.synth_samples.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value = "smote.wdc")]
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FlopsArgs {
    /// SMOTE source dataset size.
    #[arg(long, default_value_t = 200_000)]
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DiagnosticsArgs {
    #[arg(long)]
    pub gan: PathBuf,
    /// Meta datasets in condition order; generated from the config if absent.
    #[arg(long, num_args = 1..)]
    pub meta: Vec<PathBuf>,
    /// Target samples; generated from the config if absent.
    #[arg(long)]
    pub target: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenChannels(_) => "gen-channels",
            Command::MetaTrain(_) => "meta-train",
            Command::FineTune(_) => "fine-tune",
            Command::TrainCgan(_) => "train-cgan",
            Command::Synthesize(_) => "synthesize",
            Command::TrainEstimator(_) => "train-estimator",
            Command::Evaluate(_) => "evaluate",
            Command::Smote(_) => "smote",
            Command::FlopsReport(_) => "flops-report",
            Command::Diagnostics(_) => "diagnostics",
            Command::ReproFig3a(_) => "repro-fig3a",
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = match self {
            Command::MetaTrain(a) => a.data.clone(),
            Command::FineTune(a) => vec![a.gan.clone(), a.target.clone()],
            Command::TrainCgan(a) => std::iter::once(a.target.clone()).chain(a.norm_from.clone()).collect(),
            Command::Synthesize(a) => vec![a.gan.clone()],
            Command::TrainEstimator(a) => std::iter::once(a.train.clone())
                .chain(a.validate.clone())
                .chain(a.reference.clone())
                .collect(),
            Command::Evaluate(a) => vec![a.estimator.clone(), a.test.clone()],
            Command::Smote(a) => vec![a.input.clone()],
            Command::Diagnostics(a) => std::iter::once(a.gan.clone())
                .chain(a.meta.clone())
                .chain(a.target.clone())
                .collect(),
            _ => vec![],
        };
        // sidecars are inputs too
        let sides: Vec<PathBuf> = match self {
            Command::FineTune(a) => vec![pipeline::sidecar_path(&a.gan)],
            Command::TrainCgan(a) => a.norm_from.iter().map(|p| pipeline::sidecar_path(p)).collect(),
            Command::Synthesize(a) => vec![pipeline::sidecar_path(&a.gan)],
            Command::Evaluate(a) => vec![pipeline::sidecar_path(&a.estimator)],
            Command::Diagnostics(a) => vec![pipeline::sidecar_path(&a.gan)],
            _ => vec![],
        };
        v.extend(sides);
        v
    }

    fn check_outputs(&self) -> anyhow::Result<()> {
        for name in match self {
            Command::GenChannels(a) => vec![&a.output],
            Command::Synthesize(a) => vec![&a.output],
            Command::Smote(a) => vec![&a.output],
            Command::TrainEstimator(a) => vec![&a.name],
            _ => vec![],
        } {
            let p = Path::new(name);
            if name.is_empty() || p.components().count() != 1 || p.file_name().is_none() {
                bail!("output name `{name}` must be a plain file name inside the output directory");
            }
        }
        Ok(())
    }
}

fn load(path: &Path) -> anyhow::Result<WirelessDataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn digest_inputs(cmd: &Command) -> anyhow::Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    for p in cmd.inputs() {
        m.insert(p.display().to_string(), sha256_file(&p)?);
    }
    Ok(m)
}

/// Runs `cmd` with `cfg`, publishing outputs and `manifest.json` into
/// `out_dir`. Progress goes to `log`.
pub fn execute(cmd: &Command, cfg: &PipelineConfig, out_dir: &Path, log: &mut dyn FnMut(&str)) -> anyhow::Result<Manifest> {
    cfg.validate()?;
    cmd.check_outputs()?;
    let manifest = Manifest {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cmd.clone(),
        config: cfg.clone(),
        config_digest: cfg.digest(),
        seeds: pipeline::seed_table(cfg.seed, cfg.num_meta()),
        inputs: digest_inputs(cmd)?,
        outputs: BTreeMap::new(),
    };
    let mut st = Staging::new(out_dir)?;
    match cmd {
        Command::GenChannels(a) => gen_channels(a, cfg, &mut st)?,
        Command::MetaTrain(a) => meta_train_cmd(a, cfg, &mut st, log)?,
        Command::FineTune(a) => {
            let (pair, info) = pipeline::load_gan_with_info(&a.gan)?;
            let target = load(&a.target)?;
            let t = pipeline::task(&target, pair.spec.num_envs, info.norm_scale)?;
            log("fine-tuning");
            let (tuned, trace) = fine_tune(&pair, &t, &cfg.meta_config())?;
            pipeline::save_gan_with_info(&mut st, "fine_tuned", &tuned, &GanInfo { stage: "fine-tuned".into(), ..info })?;
            st.write("fine_tune.csv", pipeline::fine_tune_csv(&trace))?;
        }
        Command::TrainCgan(a) => {
            let target = load(&a.target)?;
            let norm = match &a.norm_from {
                Some(p) => pipeline::load_gan_with_info(p)?.1.norm_scale,
                None => pipeline::norm_scale(std::slice::from_ref(&target))?,
            };
            let spec = pipeline::gan_spec(cfg)?;
            let t = pipeline::task(&target, spec.num_envs, norm)?;
            log("training the baseline conditional GAN");
            let (pair, trace) = train_cgan(&spec, &t, &cfg.meta_config())?;
            pipeline::save_gan_with_info(&mut st, "cgan", &pair, &GanInfo::new(cfg, norm, "cgan"))?;
            st.write("cgan_train.csv", pipeline::fine_tune_csv(&trace))?;
        }
        Command::Synthesize(a) => {
            let (pair, info) = pipeline::load_gan_with_info(&a.gan)?;
            let cond = a.condition.unwrap_or(cfg.target_condition());
            let n = a.n.unwrap_or(cfg.environments.synth_samples);
            let ds = pipeline::synth_set(&pair, cond, n, info.norm_scale, cfg.seed)?;
            save_dataset(&ds, &st.path(&a.output))?;
        }
        Command::TrainEstimator(a) => {
            let train = load(&a.train)?;
            let validate = a.validate.as_deref().map(load).transpose()?;
            let reference = match (&a.reference, &validate) {
                (Some(p), _) => load(p)?,
                (None, Some(v)) => v.clone(),
                (None, None) => train.clone(),
            };
            let pilots = pipeline::pilot_config(cfg, path_gain(&reference)?)?;
            log("training estimator");
            let (net, scores) = train_estimator_validated(&train, &pilots, &cfg.estimator_training(), validate.as_ref())?;
            pipeline::save_estimator(&mut st, &a.name, &net, &pilots, &scores)?;
        }
        Command::Evaluate(a) => {
            let (net, pilots) = pipeline::load_estimator(&a.estimator)?;
            let test = load(&a.test)?;
            let points = eval_mse(&net, &test, &pilots)?;
            let mut csv = String::from(pipeline::MSE_HEADER);
            csv.push_str(&mse_csv_rows(&points, &a.label, cfg.seed));
            st.write("mse.csv", csv)?;
            st.write_json("mse.json", &points)?;
        }
        Command::Smote(a) => {
            let input = load(&a.input)?;
            let n = a.n.unwrap_or(cfg.environments.synth_samples);
            let mut r = rng::stream(child_seed(cfg.seed, seeds::SMOTE), 0);
            let ds = smote_generate(&input, cfg.smote.k, n, &mut r)?;
            save_dataset(&ds, &st.path(&a.output))?;
        }
        Command::FlopsReport(a) => {
            let configured = pipeline::gan_spec(cfg)?.gen_spec;
            let reference = MlpSpec::new(vec![9, 256, 256, 256, 16], HiddenActivation::Relu, OutputActivation::Linear)?;
            let mut gen_cfg = flops_generator(&configured)?;
            gen_cfg.method = "meta-cgan generator (configured)".into();
            let mut gen_ref = flops_generator(&reference)?;
            gen_ref.method = "meta-cgan generator (reference)".into();
            let smote = flops_smote(a.n, 2 * cfg.channel.nt as u64, cfg.smote.k as u64)?;
            let reports = [gen_cfg, gen_ref, smote];
            st.write("flops.json", flops_table_json(&reports)? + "\n")?;
            st.write("flops.csv", flops_table_csv(&reports))?;
        }
        Command::Diagnostics(a) => diagnostics(a, cfg, &mut st)?,
        Command::ReproFig3a(_) => {
            let run = pipeline::run_fig3a(cfg, log)?;
            let info = |stage: &str| GanInfo::new(cfg, run.report.norm_scale, stage);
            st.write("mse_curves.csv", run.report.csv())?;
            st.write_json("fig3a_report.json", &run.report)?;
            st.write("meta_trace.csv", run.trace.to_csv())?;
            st.write("fine_tune.csv", pipeline::fine_tune_csv(&run.fine_tune_log))?;
            st.write("cgan_train.csv", pipeline::fine_tune_csv(&run.cgan_log))?;
            pipeline::save_gan_with_info(&mut st, "meta_gan", &run.meta_pair, &info("meta"))?;
            pipeline::save_gan_with_info(&mut st, "fine_tuned", &run.fine_tuned, &info("fine-tuned"))?;
            pipeline::save_gan_with_info(&mut st, "cgan", &run.cgan, &info("cgan"))?;
            for (label, net, scores) in &run.estimators {
                pipeline::save_estimator(&mut st, &format!("estimator_{label}"), net, &run.pilots, scores)?;
            }
        }
    }
    st.commit(manifest)
}

fn gen_channels(a: &GenChannelsArgs, cfg: &PipelineConfig, st: &mut Staging) -> anyhow::Result<()> {
    if let Some(f) = a.freq {
        let n = a.n.context("--n is required with --freq")?;
        let ch = cfg.channel_at(f, child_seed(cfg.seed, seeds::SINGLE));
        save_dataset(&generate_dataset(&ch, n, a.condition)?, &st.path(&a.output))?;
        return Ok(());
    }
    let sets = pipeline::genie_sets(cfg)?;
    for (i, d) in sets.meta.iter().enumerate() {
        save_dataset(d, &st.path(&format!("meta_{i}.wdc")))?;
    }
    save_dataset(&sets.target, &st.path("target.wdc"))?;
    save_dataset(&sets.test, &st.path("test.wdc"))?;
    save_dataset(&sets.genie_train, &st.path("genie_train.wdc"))?;
    Ok(())
}

fn meta_sets_or_files(files: &[PathBuf], cfg: &PipelineConfig) -> anyhow::Result<Vec<WirelessDataset>> {
    if files.is_empty() {
        return pipeline::meta_sets(cfg);
    }
    if files.len() != cfg.num_meta() {
        bail!(
            "got {} meta datasets, config lists {} meta environments",
            files.len(),
            cfg.num_meta()
        );
    }
    let sets = files.iter().map(|p| load(p)).collect::<anyhow::Result<Vec<_>>>()?;
    for (i, d) in sets.iter().enumerate() {
        if d.condition_index != i {
            bail!("meta dataset {i} carries condition index {}", d.condition_index);
        }
    }
    Ok(sets)
}

fn meta_train_cmd(a: &MetaTrainArgs, cfg: &PipelineConfig, st: &mut Staging, log: &mut dyn FnMut(&str)) -> anyhow::Result<()> {
    let sets = meta_sets_or_files(&a.data, cfg)?;
    let norm = pipeline::norm_scale(&sets)?;
    let spec = pipeline::gan_spec(cfg)?;
    let tasks = sets
        .iter()
        .map(|d| pipeline::task(d, spec.num_envs, norm))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let opts = TraceOptions {
        norm_scale: norm,
        eval_samples: cfg.meta.trace_samples,
        validation: vec![],
    };
    log(&format!("meta-training {} iterations", cfg.meta.meta_iters));
    let (pair, trace) = meta_train(&spec, &tasks, &cfg.meta_config(), &opts)?;
    pipeline::save_gan_with_info(st, "meta_gan", &pair, &GanInfo::new(cfg, norm, "meta"))?;
    st.write("meta_trace.csv", trace.to_csv())?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ConditionDiagnostics {
    condition: usize,
    freq_ghz: f64,
    real_path_gain: f64,
    synth_path_gain: f64,
    tv_path_gain: f64,
}

fn diagnostics(a: &DiagnosticsArgs, cfg: &PipelineConfig, st: &mut Staging) -> anyhow::Result<()> {
    let (pair, info) = pipeline::load_gan_with_info(&a.gan)?;
    let meta = meta_sets_or_files(&a.meta, cfg)?;
    let target = match &a.target {
        Some(p) => load(p)?,
        None => pipeline::target_set(cfg)?,
    };
    let envs = pair.spec.num_envs;
    let n = cfg.diagnostics.eval_samples;
    let mut max_gain: f64 = 0.0;
    for d in &meta {
        max_gain = max_gain.max(path_gain(d)?);
    }
    let range = (0.0, 4.0 * max_gain);
    let mut rows = Vec::new();
    for d in meta.iter().chain(std::iter::once(&target)) {
        let c = d.condition_index;
        let synth = widac_core::cgan::synthesize(
            &pair,
            &Condition::new(c, envs)?,
            n,
            info.norm_scale,
            &mut rng::stream(child_seed(cfg.seed, seeds::GAIN_EVAL), c as u64),
        )?;
        rows.push(ConditionDiagnostics {
            condition: c,
            freq_ghz: info.condition_freqs_ghz.get(c).copied().unwrap_or(f64::NAN),
            real_path_gain: path_gain(d)?,
            synth_path_gain: path_gain(&synth)?,
            tv_path_gain: tv_distance(d, &synth, Feature::PathGainPerSample, cfg.diagnostics.bins, range)?,
        });
    }
    let with_conds = meta
        .iter()
        .map(|d| Ok((d.clone(), Condition::new(d.condition_index, envs)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let tc = Condition::new(target.condition_index, envs)?;
    let gap = loss_gap_report(
        &pair,
        &with_conds,
        &(target, tc),
        &LossGapOptions {
            norm_scale: info.norm_scale,
            bins: cfg.diagnostics.bins,
            range: None,
            seed: child_seed(cfg.seed, seeds::LOSS_GAP),
        },
    )?;
    st.write_json(
        "diagnostics.json",
        &serde_json::json!({ "conditions": rows, "loss_gap": gap }),
    )
}

/// Re-runs the command recorded in a manifest and compares every output
/// digest. Returns the names of outputs whose digests differ.
pub fn replay(manifest_path: &Path, out_dir: &Path, log: &mut dyn FnMut(&str)) -> anyhow::Result<Vec<String>> {
    let old = Manifest::load(manifest_path)?;
    if old.tool != TOOL {
        bail!("manifest was written by `{}`, not {TOOL}", old.tool);
    }
    if old.config.digest() != old.config_digest {
        bail!("manifest config does not match its recorded digest");
    }
    for (p, want) in &old.inputs {
        let got = sha256_file(Path::new(p))?;
        if &got != want {
            bail!("input {p} changed since the recorded run");
        }
    }
    let new = execute(&old.command, &old.config, out_dir, log)?;
    let mut differ: Vec<String> = old
        .outputs
        .iter()
        .filter(|(k, v)| new.outputs.get(*k) != Some(v))
        .map(|(k, _)| k.clone())
        .collect();
    differ.extend(new.outputs.keys().filter(|k| !old.outputs.contains_key(*k)).cloned());
    Ok(differ)
}
