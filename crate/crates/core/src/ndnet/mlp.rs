//! Fully connected networks over flat parameter vectors.
//!
//! Canonical parameter layout, shared by every checkpoint: layers in order
//! from input to output; for each layer with `in` inputs and `out` outputs,
//! the `out x in` weight matrix in row-major order (row `o` holds the weights
//! feeding output unit `o`), followed by the `out` biases. A layer computes
//! `y = act(W x + b)`.

use matrixmultiply::dgemm;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::batch::Batch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
    LeakyRelu { slope: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Act {
    Relu,
    Leaky(f64),
    Linear,
    Sigmoid,
}

impl Act {
    fn apply(self, x: f64) -> f64 {
        match self {
            Act::Relu => x.max(0.0),
            Act::Leaky(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Act::Linear => x,
            Act::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Act::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Act::Leaky(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Act::Linear => 1.0,
            Act::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Architecture of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

/// Position of one layer inside a [`ParamVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

impl MlpSpec {
    pub fn new(
        layer_widths: Vec<usize>,
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        let spec = MlpSpec {
            layer_widths,
            hidden_activation,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::invalid("an MLP needs at least an input and an output width"));
        }
        if let Some(i) = self.layer_widths.iter().position(|&w| w == 0) {
            return Err(Error::invalid(format!("layer width {i} is zero")));
        }
        if let HiddenActivation::LeakyRelu { slope } = self.hidden_activation {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::invalid(format!(
                    "leaky relu slope {slope} must lie in (0, 1)"
                )));
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated spec")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut offset = 0;
        self.layer_widths
            .windows(2)
            .map(|w| {
                let shape = LayerShape {
                    inputs: w[0],
                    outputs: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset += shape.param_count();
                shape
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    fn activation(&self, layer: usize) -> Act {
        if layer + 1 == self.num_layers() {
            match self.output_activation {
                OutputActivation::Linear => Act::Linear,
                OutputActivation::Sigmoid => Act::Sigmoid,
            }
        } else {
            match self.hidden_activation {
                HiddenActivation::Relu => Act::Relu,
                HiddenActivation::LeakyRelu { slope } => Act::Leaky(slope),
            }
        }
    }
}

/// Flat weights and biases of one network, in the canonical layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.0.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::Numeric {
                index,
                value: self.0[index],
            }),
            None => Ok(()),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamVector, scale: f64) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Hex SHA-256 over the little-endian bytes of every entry.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.0 {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    fn check_len(&self, spec: &MlpSpec) -> Result<()> {
        if self.len() != spec.param_count() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, spec needs {}",
                self.len(),
                spec.param_count()
            )));
        }
        Ok(())
    }
}

/// He-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases.
pub fn init_params<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> ParamVector {
    let mut params = vec![0.0; spec.param_count()];
    for layer in spec.layers() {
        let bound = (6.0 / layer.inputs as f64).sqrt();
        for w in &mut params[layer.weight_offset..layer.bias_offset] {
            *w = rng.random_range(-bound..=bound);
        }
    }
    ParamVector(params)
}

/// Intermediate values of a batched forward pass, kept for [`backward_tape`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// `values[0]` is the input; `values[l + 1]` is the output of layer `l`.
    values: Vec<Batch>,
    /// Pre-activation of each layer.
    pre: Vec<Batch>,
}

impl Tape {
    pub fn output(&self) -> &Batch {
        self.values.last().expect("tape holds the input")
    }

    pub fn into_output(mut self) -> Batch {
        self.values.pop().expect("tape holds the input")
    }

    pub fn batch_size(&self) -> usize {
        self.values[0].rows()
    }
}

/// `out (rows x n) = x (rows x k) * W^T` for `W` stored `n x k` row-major.
fn affine(x: &Batch, w: &[f64], bias: &[f64], n: usize) -> Batch {
    let (m, k) = (x.rows(), x.cols());
    let mut out = Batch::zeros(m, n);
    for r in 0..m {
        out.row_mut(r).copy_from_slice(bias);
    }
    if m > 0 {
        // SAFETY: all pointers reference live buffers of the stated shapes.
        unsafe {
            dgemm(
                m,
                k,
                n,
                1.0,
                x.as_slice().as_ptr(),
                k as isize,
                1,
                w.as_ptr(),
                1,
                k as isize,
                1.0,
                out.as_mut_slice().as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    out
}

fn check_input(spec: &MlpSpec, params: &ParamVector, cols: usize) -> Result<()> {
    params.check_len(spec)?;
    if cols != spec.input_width() {
        return Err(Error::invalid(format!(
            "input width {cols} does not match network input width {}",
            spec.input_width()
        )));
    }
    Ok(())
}

pub fn forward_tape(spec: &MlpSpec, params: &ParamVector, inputs: &Batch) -> Result<Tape> {
    check_input(spec, params, inputs.cols())?;
    let p = params.as_slice();
    let mut values = Vec::with_capacity(spec.num_layers() + 1);
    let mut pre = Vec::with_capacity(spec.num_layers());
    values.push(inputs.clone());
    for (l, layer) in spec.layers().iter().enumerate() {
        let act = spec.activation(l);
        let z = affine(
            &values[l],
            &p[layer.weight_offset..layer.bias_offset],
            &p[layer.bias_offset..layer.bias_offset + layer.outputs],
            layer.outputs,
        );
        let mut y = z.clone();
        y.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
        pre.push(z);
        values.push(y);
    }
    Ok(Tape { values, pre })
}

pub fn forward_batch(spec: &MlpSpec, params: &ParamVector, inputs: &Batch) -> Result<Batch> {
    forward_tape(spec, params, inputs).map(Tape::into_output)
}

pub fn forward(spec: &MlpSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    forward_batch(spec, params, &Batch::row_vector(input)).map(Batch::into_vec)
}

/// Reverse pass over a recorded forward pass.
///
/// Returns the parameter gradient summed over the batch rows and the gradient
/// with respect to every input row.
pub fn backward_tape(
    spec: &MlpSpec,
    params: &ParamVector,
    tape: &Tape,
    output_grad: &Batch,
) -> Result<(ParamVector, Batch)> {
    params.check_len(spec)?;
    let out = tape.output();
    if output_grad.rows() != out.rows() || output_grad.cols() != out.cols() {
        return Err(Error::invalid(format!(
            "output gradient is {}x{}, forward output is {}x{}",
            output_grad.rows(),
            output_grad.cols(),
            out.rows(),
            out.cols()
        )));
    }
    let p = params.as_slice();
    let m = tape.batch_size();
    let mut grad = vec![0.0; p.len()];
    let mut delta = output_grad.clone();
    let layers = spec.layers();
    for (l, layer) in layers.iter().enumerate().rev() {
        let act = spec.activation(l);
        let (k, n) = (layer.inputs, layer.outputs);
        // through the activation
        for ((d, &z), &y) in delta
            .as_mut_slice()
            .iter_mut()
            .zip(tape.pre[l].as_slice())
            .zip(tape.values[l + 1].as_slice())
        {
            *d *= act.derivative(z, y);
        }
        let x = &tape.values[l];
        // dW (n x k) = delta^T (n x m) * x (m x k)
        if m > 0 {
            // SAFETY: shapes match the buffers they point into.
            unsafe {
                dgemm(
                    n,
                    m,
                    k,
                    1.0,
                    delta.as_slice().as_ptr(),
                    1,
                    n as isize,
                    x.as_slice().as_ptr(),
                    k as isize,
                    1,
                    0.0,
                    grad[layer.weight_offset..].as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
        }
        let gb = &mut grad[layer.bias_offset..layer.bias_offset + n];
        for r in delta.iter_rows() {
            for (g, d) in gb.iter_mut().zip(r) {
                *g += d;
            }
        }
        // dx (m x k) = delta (m x n) * W (n x k)
        let mut dx = Batch::zeros(m, k);
        if m > 0 {
            // SAFETY: as above.
            unsafe {
                dgemm(
                    m,
                    n,
                    k,
                    1.0,
                    delta.as_slice().as_ptr(),
                    n as isize,
                    1,
                    p[layer.weight_offset..].as_ptr(),
                    k as isize,
                    1,
                    0.0,
                    dx.as_mut_slice().as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
        }
        delta = dx;
    }
    Ok((ParamVector(grad), delta))
}

/// Single-sample reverse pass: gradients of `output_grad . f(input)`.
pub fn backward(
    spec: &MlpSpec,
    params: &ParamVector,
    input: &[f64],
    output_grad: &[f64],
) -> Result<(ParamVector, Vec<f64>)> {
    let tape = forward_tape(spec, params, &Batch::row_vector(input))?;
    if output_grad.len() != spec.output_width() {
        return Err(Error::invalid(format!(
            "output gradient has length {}, network output width is {}",
            output_grad.len(),
            spec.output_width()
        )));
    }
    let (g, dx) = backward_tape(spec, params, &tape, &Batch::row_vector(output_grad))?;
    Ok((g, dx.into_vec()))
}

/// Central-difference gradient of `loss` at `params`.
pub fn finite_diff_grad<F>(loss: F, params: &ParamVector, step: f64) -> ParamVector
where
    F: Fn(&ParamVector) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = params.clone();
    let mut grad = vec![0.0; params.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = probe.0[i];
        probe.0[i] = orig + step;
        let up = loss(&probe);
        probe.0[i] = orig - step;
        let down = loss(&probe);
        probe.0[i] = orig;
        *g = (up - down) / (2.0 * step);
    }
    ParamVector(grad)
}
