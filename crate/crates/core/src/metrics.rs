//! Dataset quality metrics: mean path gain, histogram total-variation
//! distance, and the loss-gap diagnostic that compares a GAN's loss on a new
//! environment against its average loss on the meta-training environments.

use serde::{Deserialize, Serialize};

use crate::cgan::{disc_loss, encode_dataset, generate, sample_noise, Condition, GanPair};
use crate::chanmodel::WirelessDataset;
use crate::error::{Error, Result};
use crate::rng;

/// Mean `||h||^2` over the dataset, in physical units.
pub fn path_gain(ds: &WirelessDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::invalid("path gain of an empty dataset"));
    }
    let total: f64 = ds.samples.iter().map(|s| s.norm_sqr()).sum();
    Ok(total / ds.len() as f64 / (ds.scale * ds.scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    /// `||h||^2` of each sample, physical units.
    PathGainPerSample,
    /// Every real part of every entry, physical units.
    RealPartFlattened,
}

fn feature_values(ds: &WirelessDataset, feature: Feature) -> Vec<f64> {
    let inv = 1.0 / ds.scale;
    match feature {
        Feature::PathGainPerSample => ds.samples.iter().map(|s| s.norm_sqr() * inv * inv).collect(),
        Feature::RealPartFlattened => ds
            .samples
            .iter()
            .flat_map(|s| s.0.iter().map(move |c| c.re * inv))
            .collect(),
    }
}

/// Normalized histogram over `bins` equal-width bins spanning `[lo, hi]`;
/// values outside the range land in the first or last bin.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if !(lo < hi) {
        return Err(Error::invalid(format!("histogram range [{lo}, {hi}] is empty")));
    }
    if values.is_empty() {
        return Err(Error::invalid("histogram of no values"));
    }
    let mut counts = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = ((v - lo) / width).floor();
        let b = if b.is_nan() || b < 0.0 {
            0
        } else {
            (b as usize).min(bins - 1)
        };
        counts[b] += 1.0;
    }
    let n = values.len() as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    Ok(counts)
}

/// `0.5 * sum |p_b - q_b|` for two histograms on shared bins.
pub fn tv_between(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Total-variation distance between the histograms of one scalar feature.
pub fn tv_distance(
    a: &WirelessDataset,
    b: &WirelessDataset,
    feature: Feature,
    bins: usize,
    range: (f64, f64),
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("total variation of an empty dataset"));
    }
    let p = histogram(&feature_values(a, feature), bins, range.0, range.1)?;
    let q = histogram(&feature_values(b, feature), bins, range.0, range.1)?;
    Ok(tv_between(&p, &q))
}

/// Loss gap next to a total-variation proxy, for the run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossGapReport {
    /// `|L_target - mean_i L_i|` with `L` the discriminator loss.
    pub gap: f64,
    pub target_loss: f64,
    pub meta_losses: Vec<f64>,
    /// TV distance between the pooled meta datasets and the target.
    pub tv_proxy: f64,
    pub feature: Feature,
    pub bins: usize,
    pub range: (f64, f64),
}

/// Settings for [`loss_gap_report`].
#[derive(Debug, Clone)]
pub struct LossGapOptions {
    /// Normalization used when encoding samples for the networks.
    pub norm_scale: f64,
    pub bins: usize,
    /// Histogram range; `None` uses `[0, 4 * max meta path gain]`.
    pub range: Option<(f64, f64)>,
    pub seed: u64,
}

pub fn loss_gap_report(
    pair: &GanPair,
    meta: &[(WirelessDataset, Condition)],
    target: &(WirelessDataset, Condition),
    opts: &LossGapOptions,
) -> Result<LossGapReport> {
    if meta.is_empty() {
        return Err(Error::invalid("loss gap needs at least one meta dataset"));
    }
    if meta.iter().any(|(d, _)| d.is_empty()) || target.0.is_empty() {
        return Err(Error::invalid("loss gap datasets must be nonempty"));
    }
    // every dataset sees the same noise stream, so identical inputs give identical losses
    let loss_on = |(ds, cond): &(WirelessDataset, Condition)| -> Result<f64> {
        let real = encode_dataset(ds, opts.norm_scale);
        let noise = sample_noise(pair.spec.noise_dim, real.rows(), &mut rng::stream(opts.seed, 0));
        let fake = generate(pair, &noise, cond)?;
        disc_loss(pair, &real, &fake, cond)
    };
    let meta_losses = meta.iter().map(loss_on).collect::<Result<Vec<_>>>()?;
    let target_loss = loss_on(target)?;
    let mean = meta_losses.iter().sum::<f64>() / meta_losses.len() as f64;

    let mut pooled = meta[0].0.clone();
    pooled.samples.clear();
    pooled.scale = 1.0;
    for (ds, _) in meta {
        pooled.samples.extend((0..ds.len()).map(|i| ds.physical(i)));
    }
    let range = match opts.range {
        Some(r) => r,
        None => {
            let mut max_gain: f64 = 0.0;
            for (ds, _) in meta {
                max_gain = max_gain.max(path_gain(ds)?);
            }
            (0.0, 4.0 * max_gain.max(f64::MIN_POSITIVE))
        }
    };
    let feature = Feature::PathGainPerSample;
    let tv_proxy = tv_distance(&pooled, &target.0, feature, opts.bins, range)?;
    Ok(LossGapReport {
        gap: (target_loss - mean).abs(),
        target_loss,
        meta_losses,
        tv_proxy,
        feature,
        bins: opts.bins,
        range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgan::GanSpec;
    use crate::chanmodel::{generate_dataset, ChannelConfig, ComplexVec};
    use num_complex::Complex64;

    fn ds(samples: Vec<Vec<(f64, f64)>>, scale: f64) -> WirelessDataset {
        let nt = samples[0].len();
        WirelessDataset::new(
            nt,
            samples
                .into_iter()
                .map(|s| ComplexVec(s.into_iter().map(|(r, i)| Complex64::new(r, i)).collect()))
                .collect(),
            0,
            scale,
        )
        .unwrap()
    }

    #[test]
    fn path_gain_examples() {
        assert_eq!(path_gain(&ds(vec![vec![(0.0, 0.0); 3]; 4], 1.0)).unwrap(), 0.0);
        assert_eq!(path_gain(&ds(vec![vec![(1.0, 0.0), (0.0, 1.0)]], 1.0)).unwrap(), 2.0);
        let mut empty = ds(vec![vec![(1.0, 0.0)]], 1.0);
        empty.samples.clear();
        assert!(path_gain(&empty).is_err());
    }

    #[test]
    fn genie_path_gain_matches_closed_form() {
        let d = generate_dataset(&ChannelConfig::default(), 100_000, 0).unwrap();
        assert!((path_gain(&d).unwrap() - 1.0).abs() < 0.02);
    }

    #[test]
    fn path_gain_ignores_stored_scale() {
        let d = generate_dataset(&ChannelConfig::default(), 200, 0).unwrap();
        let r = d.rescaled(3.7).unwrap().rescaled(0.01).unwrap();
        let (a, b) = (path_gain(&d).unwrap(), path_gain(&r).unwrap());
        assert!(((a - b) / a).abs() < 1e-12);
    }

    #[test]
    fn tv_examples() {
        let a = generate_dataset(&ChannelConfig::default(), 500, 0).unwrap();
        let tv = tv_distance(&a, &a, Feature::PathGainPerSample, 50, (0.0, 4.0)).unwrap();
        assert_eq!(tv, 0.0);

        let lo = ds(vec![vec![(0.1, 0.0)], vec![(0.2, 0.0)]], 1.0);
        let hi = ds(vec![vec![(0.9, 0.0)]], 1.0);
        let tv = tv_distance(&lo, &hi, Feature::RealPartFlattened, 4, (0.0, 1.0)).unwrap();
        assert_eq!(tv, 1.0);

        // p = (1/2, 1/2, 0), q = (0, 1/2, 1/2)
        let p = ds(vec![vec![(0.5, 0.0)], vec![(1.5, 0.0)]], 1.0);
        let q = ds(vec![vec![(1.5, 0.0)], vec![(2.5, 0.0)]], 1.0);
        let tv = tv_distance(&p, &q, Feature::RealPartFlattened, 3, (0.0, 3.0)).unwrap();
        assert!((tv - 0.5).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_mass_goes_to_edge_bins() {
        let h = histogram(&[-5.0, 0.5, 99.0, f64::NAN], 2, 0.0, 1.0).unwrap();
        assert_eq!(h, vec![0.5, 0.5]);
        assert!(histogram(&[1.0], 0, 0.0, 1.0).is_err());
        assert!(histogram(&[1.0], 3, 1.0, 1.0).is_err());
    }

    #[test]
    fn loss_gap_is_zero_for_identical_target() {
        let spec = GanSpec::standard(4, 2, 16, &[8]).unwrap();
        let pair = GanPair::init(spec, &mut rng::stream(0, 0)).unwrap();
        let d = generate_dataset(&ChannelConfig::default(), 300, 0).unwrap();
        let c = Condition::new(0, 2).unwrap();
        let opts = LossGapOptions {
            norm_scale: 0.25,
            bins: 50,
            range: None,
            seed: 1,
        };
        let meta = vec![(d.clone(), c)];
        let r = loss_gap_report(&pair, &meta, &(d.clone(), c), &opts).unwrap();
        assert_eq!(r.gap, 0.0);
        assert_eq!(r.tv_proxy, 0.0);

        // target equal to the pooled meta data
        let e = generate_dataset(&ChannelConfig { seed: 4, ..Default::default() }, 300, 1).unwrap();
        let mut pooled = d.clone();
        pooled.samples.extend(e.samples.iter().cloned());
        let meta = vec![(d, c), (e, Condition::new(1, 2).unwrap())];
        let r = loss_gap_report(&pair, &meta, &(pooled, c), &opts).unwrap();
        assert!(r.tv_proxy < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn tv_is_a_metric_on_histograms(
            a in proptest::collection::vec(0.0f64..4.0, 1..60),
            b in proptest::collection::vec(0.0f64..4.0, 1..60),
            c in proptest::collection::vec(0.0f64..4.0, 1..60),
        ) {
            let h = |v: &[f64]| histogram(v, 10, 0.0, 4.0).unwrap();
            let (p, q, r) = (h(&a), h(&b), h(&c));
            let pq = tv_between(&p, &q);
            proptest::prop_assert!((0.0..=1.0 + 1e-12).contains(&pq));
            proptest::prop_assert!((pq - tv_between(&q, &p)).abs() < 1e-15);
            proptest::prop_assert!(tv_between(&p, &r) <= pq + tv_between(&q, &r) + 1e-12);
        }
    }
}
