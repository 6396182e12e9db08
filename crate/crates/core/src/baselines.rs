//! SMOTE-style interpolation baseline and per-sample FLOPs accounting.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chanmodel::{ComplexVec, WirelessDataset};
use crate::error::{Error, Result};
use crate::ndnet::MlpSpec;

/// One synthetic draw: base sample, chosen neighbor, interpolation weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoteDraw {
    pub base: usize,
    pub neighbor: usize,
    pub lambda: f64,
}

fn sq_dist(a: &ComplexVec, b: &ComplexVec) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| (x - y).norm_sqr()).sum()
}

/// Indices of the `k` nearest other samples, ties broken by index.
fn nearest(samples: &[ComplexVec], base: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = samples
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != base)
        .map(|(j, s)| (sq_dist(&samples[base], s), j))
        .collect();
    let k = k.min(d.len());
    d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<(f64, usize)> = d[..k].to_vec();
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out.into_iter().map(|(_, j)| j).collect()
}

/// Like [`smote_generate`], also returning how each sample was made.
pub fn smote_generate_traced<R: Rng + ?Sized>(
    ds: &WirelessDataset,
    k: usize,
    n: usize,
    rng: &mut R,
) -> Result<(WirelessDataset, Vec<SmoteDraw>)> {
    if k == 0 {
        return Err(Error::invalid("SMOTE needs k >= 1"));
    }
    if ds.len() < k + 1 {
        return Err(Error::invalid(format!(
            "SMOTE with k = {k} needs at least {} samples, got {}",
            k + 1,
            ds.len()
        )));
    }
    let physical: Vec<ComplexVec> = (0..ds.len()).map(|i| ds.physical(i)).collect();
    let mut neighbors: Vec<Option<Vec<usize>>> = vec![None; physical.len()];
    let mut samples = Vec::with_capacity(n);
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let base = rng.random_range(0..physical.len());
        let nn = neighbors[base].get_or_insert_with(|| nearest(&physical, base, k));
        let neighbor = nn[rng.random_range(0..nn.len())];
        let lambda: f64 = rng.random();
        let (x, y) = (&physical[base], &physical[neighbor]);
        samples.push(ComplexVec(x.0.iter().zip(&y.0).map(|(a, b)| a + (b - a) * lambda).collect()));
        draws.push(SmoteDraw { base, neighbor, lambda });
    }
    let out = WirelessDataset::new(ds.nt, samples, ds.condition_index, 1.0)?
        .with_meta("source", "synthesized")
        .with_meta("method", "smote")
        .with_meta("k", &k.to_string())
        .with_meta("parent_digest", &ds.digest());
    Ok((out, draws))
}

/// `n` samples, each `x + lambda (x_nn - x)` for a uniform base `x`, one of
/// its `k` nearest neighbors and `lambda ~ U[0, 1)`. Output is in physical
/// units.
pub fn smote_generate<R: Rng + ?Sized>(ds: &WirelessDataset, k: usize, n: usize, rng: &mut R) -> Result<WirelessDataset> {
    smote_generate_traced(ds, k, n, rng).map(|(d, _)| d)
}

pub const GENERATOR_CONVENTION: &str =
    "per dense layer: 2*in*out for multiply-accumulates, plus out for bias adds, plus out for the activation (counted for linear outputs too)";
pub const SMOTE_CONVENTION: &str =
    "per generated sample: n*(2*dim+1) for brute-force squared distances, plus ceil(k*log2 n) for neighbor selection, plus 3*dim for interpolation";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub method: String,
    /// Floating-point operations per generated sample.
    pub flops: u64,
    pub convention: String,
    pub assumptions: BTreeMap<String, String>,
}

pub fn flops_generator(spec: &MlpSpec) -> Result<FlopsReport> {
    spec.validate()?;
    let flops: u64 = spec
        .layers()
        .iter()
        .map(|l| (2 * l.inputs * l.outputs + 2 * l.outputs) as u64)
        .sum();
    let widths = spec
        .layer_widths
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(",");
    Ok(FlopsReport {
        method: "meta-cgan generator".into(),
        flops,
        convention: GENERATOR_CONVENTION.into(),
        assumptions: BTreeMap::from([("layer_widths".into(), format!("[{widths}]"))]),
    })
}

pub fn flops_smote(n_dataset: u64, dim: u64, k: u64) -> Result<FlopsReport> {
    if n_dataset == 0 || dim == 0 || k == 0 {
        return Err(Error::invalid("flops_smote arguments must be positive"));
    }
    let select = (k as f64 * (n_dataset as f64).log2()).ceil() as u64;
    let flops = n_dataset * (2 * dim + 1) + select + 3 * dim;
    Ok(FlopsReport {
        method: "smote".into(),
        flops,
        convention: SMOTE_CONVENTION.into(),
        assumptions: BTreeMap::from([
            ("n".into(), n_dataset.to_string()),
            ("dim".into(), dim.to_string()),
            ("k".into(), k.to_string()),
        ]),
    })
}

pub fn flops_table_json(reports: &[FlopsReport]) -> Result<String> {
    serde_json::to_string_pretty(reports).map_err(|e| Error::Format(e.to_string()))
}

/// `method,flops,convention` with a header row.
pub fn flops_table_csv(reports: &[FlopsReport]) -> String {
    let mut out = String::from("method,flops,convention\n");
    for r in reports {
        out.push_str(&format!("{},{},\"{}\"\n", r.method, r.flops, r.convention.replace('"', "\"\"")));
    }
    out
}
