//! Pipeline configuration: presets, TOML overrides, validation.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use widac_core::cgan::LossVariant;
use widac_core::chanmodel::ChannelConfig;
use widac_core::estimator::EstimatorTraining;
use widac_core::metatrain::{MetaConfig, MetaGradMode, OuterOptimizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub channel: ChannelSection,
    pub environments: EnvironmentSection,
    pub gan: GanSection,
    pub meta: MetaSection,
    pub estimator: EstimatorSection,
    pub diagnostics: DiagnosticsSection,
    pub smote: SmoteSection,
}

/// Physical parameters shared by every environment; only the center
/// frequency differs between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub nt: usize,
    pub num_paths: usize,
    pub power_gain: f64,
    pub distance_m: f64,
    pub aod_low: f64,
    pub aod_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    /// Meta-training environments, condition index = position.
    pub meta_freqs_ghz: Vec<f64>,
    /// Target environment; its condition index follows the meta ones.
    pub target_freq_ghz: f64,
    pub meta_samples: usize,
    pub target_samples: usize,
    /// Size of every estimator training set, synthesized or genie.
    pub synth_samples: usize,
    pub test_samples: usize,
    /// Held-out genie samples per meta environment for the validation loss.
    pub validation_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanSection {
    pub noise_dim: usize,
    pub hidden: Vec<usize>,
    pub pack: usize,
    pub loss: LossVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSection {
    pub alpha: f64,
    pub beta: f64,
    pub beta_final_ratio: f64,
    pub gamma: f64,
    pub inner_steps: usize,
    pub meta_iters: usize,
    pub fine_tune_iters: usize,
    pub batch_size: usize,
    pub meta_grad_mode: MetaGradMode,
    pub outer_optimizer: OuterOptimizer,
    pub log_interval: usize,
    /// Generator samples per condition for the logged path gains.
    pub trace_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub num_pilots: usize,
    pub snr_grid_db: Vec<f64>,
    /// Keep the epoch that scores best on the real target samples.
    pub validate_on_target: bool,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub final_lr_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub bins: usize,
    /// Generator samples per condition when measuring path gains.
    pub eval_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoteSection {
    pub k: usize,
}

impl PipelineConfig {
    pub fn preset(scale: Scale) -> Self {
        let desk = PipelineConfig {
            seed: 0,
            channel: ChannelSection {
                nt: 8,
                num_paths: 3,
                power_gain: 784.0,
                distance_m: 1.0,
                aod_low: 0.0,
                aod_high: std::f64::consts::TAU,
            },
            environments: EnvironmentSection {
                meta_freqs_ghz: vec![28.0, 37.0, 41.0, 60.0],
                target_freq_ghz: 39.0,
                meta_samples: 2000,
                target_samples: 800,
                synth_samples: 20_000,
                test_samples: 10_000,
                validation_samples: 500,
            },
            gan: GanSection {
                noise_dim: 128,
                hidden: vec![128; 3],
                pack: 2,
                loss: LossVariant::NonSaturating,
            },
            meta: MetaSection {
                alpha: 0.03,
                beta: 1e-3,
                beta_final_ratio: 0.01,
                gamma: 0.005,
                inner_steps: 1,
                meta_iters: 6000,
                fine_tune_iters: 200,
                batch_size: 64,
                meta_grad_mode: MetaGradMode::FirstOrder,
                outer_optimizer: OuterOptimizer::Adam,
                log_interval: 100,
                trace_samples: 1000,
            },
            estimator: EstimatorSection {
                num_pilots: 8,
                snr_grid_db: (0..=6).map(|k| 5.0 * k as f64).collect(),
                validate_on_target: true,
                hidden: vec![256; 5],
                epochs: 15,
                batch_size: 64,
                learning_rate: 1e-3,
                final_lr_ratio: 0.1,
            },
            diagnostics: DiagnosticsSection {
                bins: 50,
                eval_samples: 20_000,
            },
            smote: SmoteSection { k: 5 },
        };
        match scale {
            Scale::Desk => desk,
            Scale::Paper => {
                let mut c = desk;
                c.environments.meta_samples = 20_000;
                c.environments.synth_samples = 200_000;
                c.gan = GanSection {
                    noise_dim: 8,
                    hidden: vec![256; 3],
                    pack: 1,
                    loss: LossVariant::NonSaturating,
                };
                let m = MetaConfig::default();
                c.meta.alpha = m.alpha;
                c.meta.beta = m.beta;
                c.meta.beta_final_ratio = m.beta_final_ratio;
                c.meta.gamma = m.gamma;
                c.meta.meta_iters = 130_000;
                c.meta.fine_tune_iters = m.fine_tune_iters;
                c.estimator.epochs = EstimatorTraining::default().epochs;
                c
            }
        }
    }

    /// Preset for `scale` with `text` (TOML) merged over it key by key.
    pub fn from_toml_over(scale: Scale, text: &str) -> anyhow::Result<Self> {
        let overrides: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        let mut base = toml::Table::try_from(Self::preset(scale)).context("serializing preset")?;
        merge(&mut base, overrides);
        let cfg: PipelineConfig = serde_path_to_error::deserialize(toml::Value::Table(base))
            .map_err(|e| anyhow::anyhow!("config field `{}`: {}", e.path(), e.inner()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(scale: Scale, path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => {
                let cfg = Self::preset(scale);
                cfg.validate()?;
                Ok(cfg)
            }
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml_over(scale, &text).with_context(|| format!("in config {}", p.display()))
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes to JSON");
        hex::encode(Sha256::digest(json))
    }

    pub fn num_meta(&self) -> usize {
        self.environments.meta_freqs_ghz.len()
    }

    /// Meta environments plus the target.
    pub fn num_envs(&self) -> usize {
        self.num_meta() + 1
    }

    pub fn target_condition(&self) -> usize {
        self.num_meta()
    }

    pub fn channel_at(&self, freq_ghz: f64, seed: u64) -> ChannelConfig {
        let c = &self.channel;
        ChannelConfig {
            nt: c.nt,
            num_paths: c.num_paths,
            power_gain: c.power_gain,
            center_freq: freq_ghz,
            distance: c.distance_m,
            aod_low: c.aod_low,
            aod_high: c.aod_high,
            seed,
        }
    }

    pub fn meta_config(&self) -> MetaConfig {
        let m = &self.meta;
        MetaConfig {
            alpha: m.alpha,
            beta: m.beta,
            beta_final_ratio: m.beta_final_ratio,
            gamma: m.gamma,
            inner_steps: m.inner_steps,
            meta_iters: m.meta_iters,
            fine_tune_iters: m.fine_tune_iters,
            batch_size: m.batch_size,
            meta_grad_mode: m.meta_grad_mode,
            outer_optimizer: m.outer_optimizer,
            seed: self.seed,
            log_interval: m.log_interval,
        }
    }

    pub fn estimator_training(&self) -> EstimatorTraining {
        let e = &self.estimator;
        EstimatorTraining {
            hidden: e.hidden.clone(),
            epochs: e.epochs,
            batch_size: e.batch_size,
            learning_rate: e.learning_rate,
            final_lr_ratio: e.final_lr_ratio,
        }
    }

    /// Checks every field, reporting the first violation by its path.
    pub fn validate(&self) -> anyhow::Result<()> {
        fn positive(path: &str, v: f64) -> anyhow::Result<()> {
            if !(v > 0.0 && v.is_finite()) {
                bail!("config field `{path}`: must be a positive finite number, got {v}");
            }
            Ok(())
        }
        fn at_least(path: &str, v: usize, min: usize) -> anyhow::Result<()> {
            if v < min {
                bail!("config field `{path}`: must be at least {min}, got {v}");
            }
            Ok(())
        }
        let c = &self.channel;
        at_least("channel.nt", c.nt, 1)?;
        at_least("channel.num_paths", c.num_paths, 1)?;
        positive("channel.power_gain", c.power_gain)?;
        positive("channel.distance_m", c.distance_m)?;
        if !(0.0 <= c.aod_low && c.aod_low < c.aod_high && c.aod_high <= std::f64::consts::TAU) {
            bail!("config field `channel.aod_low`/`channel.aod_high`: need 0 <= low < high <= 2 pi");
        }
        let e = &self.environments;
        if e.meta_freqs_ghz.is_empty() {
            bail!("config field `environments.meta_freqs_ghz`: needs at least one frequency");
        }
        for (i, f) in e.meta_freqs_ghz.iter().enumerate() {
            positive(&format!("environments.meta_freqs_ghz[{i}]"), *f)?;
        }
        positive("environments.target_freq_ghz", e.target_freq_ghz)?;
        at_least("environments.meta_samples", e.meta_samples, 2)?;
        at_least("environments.target_samples", e.target_samples, 2)?;
        at_least("environments.synth_samples", e.synth_samples, 1)?;
        at_least("environments.test_samples", e.test_samples, 1)?;
        at_least("environments.validation_samples", e.validation_samples, 1)?;
        let g = &self.gan;
        at_least("gan.noise_dim", g.noise_dim, 1)?;
        at_least("gan.pack", g.pack, 1)?;
        for (i, w) in g.hidden.iter().enumerate() {
            at_least(&format!("gan.hidden[{i}]"), *w, 1)?;
        }
        let m = &self.meta;
        positive("meta.alpha", m.alpha)?;
        positive("meta.beta", m.beta)?;
        positive("meta.beta_final_ratio", m.beta_final_ratio)?;
        positive("meta.gamma", m.gamma)?;
        at_least("meta.inner_steps", m.inner_steps, 1)?;
        at_least("meta.batch_size", m.batch_size, 1)?;
        at_least("meta.log_interval", m.log_interval, 1)?;
        at_least("meta.trace_samples", m.trace_samples, 1)?;
        if m.batch_size % g.pack != 0 {
            bail!("config field `meta.batch_size`: must be a multiple of gan.pack ({})", g.pack);
        }
        if e.meta_samples < (m.inner_steps + 1) * m.batch_size {
            bail!(
                "config field `environments.meta_samples`: needs at least (inner_steps + 1) * batch_size = {}",
                (m.inner_steps + 1) * m.batch_size
            );
        }
        let s = &self.estimator;
        at_least("estimator.num_pilots", s.num_pilots, 1)?;
        if s.num_pilots > c.nt {
            bail!("config field `estimator.num_pilots`: at most channel.nt ({}) DFT beams exist", c.nt);
        }
        if s.snr_grid_db.is_empty() || s.snr_grid_db.iter().any(|v| !v.is_finite()) {
            bail!("config field `estimator.snr_grid_db`: needs at least one finite value");
        }
        for (i, w) in s.hidden.iter().enumerate() {
            at_least(&format!("estimator.hidden[{i}]"), *w, 1)?;
        }
        at_least("estimator.epochs", s.epochs, 1)?;
        at_least("estimator.batch_size", s.batch_size, 1)?;
        positive("estimator.learning_rate", s.learning_rate)?;
        positive("estimator.final_lr_ratio", s.final_lr_ratio)?;
        at_least("diagnostics.bins", self.diagnostics.bins, 1)?;
        at_least("diagnostics.eval_samples", self.diagnostics.eval_samples, 1)?;
        at_least("smote.k", self.smote.k, 1)?;
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for s in [Scale::Desk, Scale::Paper] {
            let c = PipelineConfig::preset(s);
            c.validate().unwrap();
            assert_eq!(PipelineConfig::from_toml_over(s, &c.to_toml()).unwrap(), c);
        }
    }

    #[test]
    fn overrides_merge_into_preset() {
        let c = PipelineConfig::from_toml_over(Scale::Desk, "seed = 7\n[meta]\nalpha = 0.5\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.meta.alpha, 0.5);
        assert_eq!(c.meta.beta, PipelineConfig::preset(Scale::Desk).meta.beta);
    }

    #[test]
    fn errors_name_the_field() {
        let e = PipelineConfig::from_toml_over(Scale::Desk, "[meta]\nalpha = \"fast\"\n").unwrap_err();
        assert!(e.to_string().contains("meta.alpha"), "{e}");
        let e = PipelineConfig::from_toml_over(Scale::Desk, "[meta]\nalpah = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("alpah"), "{e}");
        let e = PipelineConfig::from_toml_over(Scale::Desk, "[meta]\nalpha = -1.0\n").unwrap_err();
        assert!(e.to_string().contains("meta.alpha"), "{e}");
        let e = PipelineConfig::from_toml_over(Scale::Desk, "[gan]\nhidden = [4, 0]\n").unwrap_err();
        assert!(e.to_string().contains("gan.hidden[1]"), "{e}");
    }

    #[test]
    fn committed_example_matches_desk_preset() {
        let text = include_str!("../../../configs/desk.toml");
        let parsed: PipelineConfig = toml::from_str(text).unwrap();
        assert_eq!(parsed, PipelineConfig::preset(Scale::Desk));
    }

    #[test]
    fn digest_tracks_content() {
        let a = PipelineConfig::preset(Scale::Desk);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }
}
