//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use widac_core::cgan::{
    disc_loss, disc_loss_grad, gan_step, gen_loss, gen_loss_grad, generate, sample_noise, Condition, GanPair,
    GanSpec,
};
use widac_core::metatrain::{first_order_meta_step, MetaObjective};
use widac_core::ndnet::{
    backward_tape, forward_batch, forward_tape, Batch, HiddenActivation, MlpSpec, OptimizerState,
    OutputActivation, ParamVector,
};
use widac_core::rng::{self, StreamRng};
use widac_core::Result;

/// Central differences written out here, not taken from the library.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(max |a|, max |b|)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn normal_batch(rows: usize, cols: usize, r: &mut StreamRng) -> Batch {
    Batch::from_vec(rows, cols, (0..rows * cols).map(|_| r.sample(StandardNormal)).collect()).unwrap()
}

/// Worst relative error of backprop against central differences over `count`
/// random small networks. The loss is a fixed random linear functional of
/// the batch output, so its output gradient is exactly the weight matrix.
pub fn mlp_gradient_errors(count: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, 0);
    (0..count)
        .map(|_| {
            let depth = r.random_range(1..=4);
            let widths: Vec<usize> = (0..=depth).map(|_| r.random_range(1..=6)).collect();
            let hidden = if r.random_bool(0.5) {
                HiddenActivation::Relu
            } else {
                HiddenActivation::LeakyRelu { slope: r.random_range(0.05..0.5) }
            };
            let out = if r.random_bool(0.5) { OutputActivation::Linear } else { OutputActivation::Sigmoid };
            let spec = MlpSpec::new(widths, hidden, out).unwrap();
            // generic parameters: zero-initialized biases would sit on relu kinks
            let params = ParamVector::new((0..spec.param_count()).map(|_| 0.7 * r.sample::<f64, _>(StandardNormal)).collect());
            let rows = r.random_range(1..=4);
            let x = normal_batch(rows, spec.input_width(), &mut r);
            let w = normal_batch(rows, spec.output_width(), &mut r);
            let loss = |p: &[f64]| -> f64 {
                let y = forward_batch(&spec, &ParamVector::new(p.to_vec()), &x).unwrap();
                y.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
            };
            let tape = forward_tape(&spec, &params, &x).unwrap();
            let (g, _) = backward_tape(&spec, &params, &tape, &w).unwrap();
            rel_err(g.as_slice(), &central_diff(&loss, params.as_slice(), 1e-6))
        })
        .collect()
}

/// Relative errors of the discriminator-loss gradient and of the generator
/// loss gradient (through the discriminator) against central differences.
pub fn gan_gradient_errors(seed: u64) -> (f64, f64) {
    let spec = GanSpec::standard(3, 2, 4, &[5, 4]).unwrap();
    let mut r = rng::stream(seed, 0);
    let pair = GanPair::init(spec.clone(), &mut r).unwrap();
    let cond = Condition::new(1, 2).unwrap();
    let real = normal_batch(6, 4, &mut r);
    let fake = generate(&pair, &sample_noise(3, 6, &mut r), &cond).unwrap();
    let noise = sample_noise(3, 6, &mut r);

    let (_, dg) = disc_loss_grad(&pair, &real, &fake, &cond).unwrap();
    let d_loss = |p: &[f64]| {
        let q = GanPair::from_params(spec.clone(), pair.gen_params.clone(), ParamVector::new(p.to_vec())).unwrap();
        disc_loss(&q, &real, &fake, &cond).unwrap()
    };
    let d_err = rel_err(dg.as_slice(), &central_diff(&d_loss, pair.disc_params.as_slice(), 1e-6));

    let (_, gg) = gen_loss_grad(&pair, &noise, &cond).unwrap();
    let g_loss = |p: &[f64]| {
        let q = GanPair::from_params(spec.clone(), ParamVector::new(p.to_vec()), pair.disc_params.clone()).unwrap();
        gen_loss(&q, &noise, &cond).unwrap()
    };
    let g_err = rel_err(gg.as_slice(), &central_diff(&g_loss, pair.gen_params.as_slice(), 1e-6));
    (d_err, g_err)
}

/// Tasks `L_i(x) = 0.5 (x - c_i)' A_i (x - c_i)` with symmetric positive
/// definite `A_i`.
pub struct Quadratic {
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub dim: usize,
}

impl Quadratic {
    pub fn random(dim: usize, r: &mut StreamRng) -> Self {
        let m: Vec<f64> = (0..dim * dim).map(|_| r.sample(StandardNormal)).collect();
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                a[i * dim + j] = (0..dim).map(|k| m[k * dim + i] * m[k * dim + j]).sum::<f64>();
            }
            a[i * dim + i] += 1.0;
        }
        let c = (0..dim).map(|_| r.sample(StandardNormal)).collect();
        Quadratic { a, c, dim }
    }

    pub fn loss(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.c).map(|(a, b)| a - b).collect();
        let ad = self.mul(&d);
        0.5 * d.iter().zip(&ad).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.c).map(|(a, b)| a - b).collect();
        self.mul(&d)
    }

    fn mul(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.a[i * self.dim + j] * v[j]).sum())
            .collect()
    }
}

struct QuadObjective;

impl MetaObjective for QuadObjective {
    type Model = ParamVector;
    type Task = Quadratic;
    type Batch = ();
    type Loss = f64;

    fn sample_batches(&self, _: &Quadratic, count: usize, _: &mut StreamRng) -> Result<Vec<()>> {
        Ok(vec![(); count])
    }

    fn inner_step(&self, m: &ParamVector, t: &Quadratic, _: &(), alpha: f64, _: &mut StreamRng) -> Result<(ParamVector, f64)> {
        let mut next = m.clone();
        next.add_scaled(&ParamVector::new(t.grad(m.as_slice())), -alpha);
        Ok((next, t.loss(m.as_slice())))
    }

    fn gradient(&self, m: &ParamVector, t: &Quadratic, _: &(), _: &mut StreamRng) -> Result<(f64, Vec<ParamVector>)> {
        Ok((t.loss(m.as_slice()), vec![ParamVector::new(t.grad(m.as_slice()))]))
    }

    fn descend(&self, m: &ParamVector, grads: &[ParamVector], step: f64) -> Result<ParamVector> {
        let mut next = m.clone();
        next.add_scaled(&grads[0], -step);
        Ok(next)
    }
}

/// Relative error between the library's first-order meta direction and the
/// central-difference gradient of `x -> sum_i L_i(x - alpha grad L_i(x))`.
pub fn quadratic_meta_error(alpha: f64, seed: u64) -> f64 {
    let mut r = rng::stream(seed, 0);
    let dim = 5;
    let tasks: Vec<Quadratic> = (0..3).map(|_| Quadratic::random(dim, &mut r)).collect();
    let x: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
    let theta = ParamVector::new(x.clone());
    let (next, _) = first_order_meta_step(&QuadObjective, &theta, &tasks, alpha, 1.0, 1, &mut r).unwrap();
    let direction: Vec<f64> = x.iter().zip(next.as_slice()).map(|(a, b)| a - b).collect();
    let composed = |p: &[f64]| -> f64 {
        tasks
            .iter()
            .map(|t| {
                let g = t.grad(p);
                let psi: Vec<f64> = p.iter().zip(&g).map(|(a, b)| a - alpha * b).collect();
                t.loss(&psi)
            })
            .sum()
    };
    rel_err(&direction, &central_diff(&composed, &x, 1e-5))
}

pub struct ToyOutcome {
    pub means: [f64; 2],
    pub disc_on_fake: [f64; 2],
    pub steps: usize,
    pub elapsed: Duration,
}

/// Conditional GAN on two unit-variance 1-D Gaussians with means -2 and +2.
pub fn toy_conditioning(seed: u64, steps: usize) -> ToyOutcome {
    let start = Instant::now();
    let spec = GanSpec::standard(4, 2, 1, &[32, 32]).unwrap();
    let mut r = rng::stream(seed, 0);
    let mut pair = GanPair::init(spec, &mut r).unwrap();
    let (gl, dl) = (pair.gen_params.len(), pair.disc_params.len());
    pair = pair.with_optimizers(
        OptimizerState::adam(1e-3, 0.5, 0.999, 1e-8, gl),
        OptimizerState::adam(1e-3, 0.5, 0.999, 1e-8, dl),
    );
    let targets = [-2.0, 2.0];
    let conds = [Condition::new(0, 2).unwrap(), Condition::new(1, 2).unwrap()];
    for _ in 0..steps / 2 {
        for (mu, c) in targets.iter().zip(&conds) {
            let real = Batch::from_vec(64, 1, (0..64).map(|_| mu + r.sample::<f64, _>(StandardNormal)).collect()).unwrap();
            pair = gan_step(&pair, &real, c, &mut r).unwrap().pair;
        }
    }
    let mut means = [0.0; 2];
    let mut disc_on_fake = [0.0; 2];
    let mut eval = rng::stream(seed, 1);
    for (k, c) in conds.iter().enumerate() {
        let fake = generate(&pair, &sample_noise(4, 4000, &mut eval), c).unwrap();
        means[k] = fake.as_slice().iter().sum::<f64>() / 4000.0;
        let d_in = fake.append_to_rows(&c.one_hot());
        let d = forward_batch(&pair.spec.disc_spec, &pair.disc_params, &d_in).unwrap();
        disc_on_fake[k] = d.as_slice().iter().sum::<f64>() / 4000.0;
    }
    ToyOutcome {
        means,
        disc_on_fake,
        steps: steps / 2 * 2,
        elapsed: start.elapsed(),
    }
}

/// Round trips and corruption cases for the binary formats, as named checks.
pub fn persistence_checks(dir: &std::path::Path) -> Vec<(&'static str, bool)> {
    use widac_core::chanmodel::{generate_dataset, ChannelConfig};
    use widac_core::dataio::*;
    use widac_core::Error;

    let mut out = Vec::new();
    let ds = generate_dataset(&ChannelConfig::at_frequency(39.0), 37, 4)
        .unwrap()
        .rescaled(0.3)
        .unwrap()
        .with_meta("note", "round trip \u{00e9}");
    let p = dir.join("set.wdc");
    save_dataset(&ds, &p).unwrap();
    let back = load_dataset(&p).unwrap();
    let bits = |d: &widac_core::chanmodel::WirelessDataset| -> Vec<u64> {
        d.samples.iter().flat_map(|s| s.0.iter().flat_map(|c| [c.re.to_bits(), c.im.to_bits()])).collect()
    };
    out.push((
        "dataset round trip is bit-exact",
        bits(&back) == bits(&ds)
            && back.scale.to_bits() == ds.scale.to_bits()
            && back.meta == ds.meta
            && back.nt == ds.nt
            && back.condition_index == ds.condition_index,
    ));

    let bytes = std::fs::read(&p).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    out.push(("bad magic is a format error", matches!(decode_dataset_file(&bad), Err(Error::Format(_)))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    out.push(("unknown version is a format error", matches!(decode_dataset_file(&bad), Err(Error::Format(_)))));
    let cut = bytes.len() - 5;
    out.push((
        "truncated body is a corruption error at the file end",
        matches!(decode_dataset_file(&bytes[..cut]), Err(Error::Corruption { offset, .. }) if offset == cut as u64),
    ));
    out.push((
        "missing file is an i/o error",
        matches!(load_dataset(&dir.join("absent.wdc")), Err(Error::Io { .. })),
    ));

    let spec = MlpSpec::new(vec![9, 256, 256, 256, 16], HiddenActivation::Relu, OutputActivation::Linear).unwrap();
    let params = ParamVector::new((0..spec.param_count()).map(|i| (i as f64).sin() / 3.0).collect());
    let c = dir.join("gen.wck");
    save_checkpoint(&spec.digest(), &params, &c).unwrap();
    let loaded = load_checkpoint(&c, &spec).unwrap();
    out.push((
        "checkpoint round trip is bit-exact",
        loaded.as_slice().iter().map(|v| v.to_bits()).eq(params.as_slice().iter().map(|v| v.to_bits())),
    ));
    let size = std::fs::metadata(&c).unwrap().len();
    out.push(("checkpoint size is header plus 8 bytes per parameter", size == (CHECKPOINT_HEADER + 8 * 138_256) as u64));
    let other = MlpSpec::new(vec![9, 256, 256, 256, 16], HiddenActivation::LeakyRelu { slope: 0.2 }, OutputActivation::Linear).unwrap();
    out.push((
        "wrong spec is a compatibility error",
        matches!(load_checkpoint(&c, &other), Err(Error::Compatibility(_))),
    ));
    let cbytes = std::fs::read(&c).unwrap();
    let t = dir.join("cut.wck");
    std::fs::write(&t, &cbytes[..cbytes.len() - 3]).unwrap();
    out.push((
        "truncated checkpoint is a corruption error",
        matches!(read_checkpoint(&t), Err(Error::Corruption { .. })),
    ));

    let pair = GanPair::init(GanSpec::packed(5, 3, 16, &[12, 7], 2).unwrap(), &mut rng::stream(3, 0)).unwrap();
    let g = dir.join("pair.wgp");
    save_gan(&pair, &g).unwrap();
    let back = load_gan_expecting(&g, &pair.spec).unwrap();
    out.push(("gan checkpoint round trip is bit-exact", back.digest() == pair.digest()));
    out
}
