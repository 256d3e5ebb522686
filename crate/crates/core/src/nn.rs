//! Fully connected network with rectifier hidden layers and exact
//! reverse-mode gradients.
//!
//! Inputs are batched row-wise: a `(batch, in)` matrix maps to a
//! `(batch, out)` matrix. Parameter gradients are sums over the batch; the
//! caller folds any `1/N` into the output gradient.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputActivation {
    Linear,
    /// `scale * tanh(z)`, keeping every output inside `[-scale, scale]`.
    TanhScaled(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    /// `(out, in)` per layer.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    output: OutputActivation,
}

/// Activations recorded by [`Mlp::forward`], consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[k]` the output of layer k.
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

/// Gradients mirroring an [`Mlp`], plus the gradient with respect to the
/// input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub input: Array2<f64>,
}

impl GradientSet {
    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Multiply every parameter gradient by `k`.
    pub fn scale(&mut self, k: f64) {
        self.weights.iter_mut().for_each(|w| *w *= k);
        self.biases.iter_mut().for_each(|b| *b *= k);
        self.input *= k;
    }
}

impl Mlp {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
    pub fn init_random<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                rng.random_range(-bound..=bound)
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            output,
        })
    }

    /// All-zero parameters.
    pub fn zeros(layer_sizes: &[usize], output: OutputActivation) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights: layer_sizes
                .windows(2)
                .map(|p| Array2::zeros((p[1], p[0])))
                .collect(),
            biases: layer_sizes.windows(2).map(|p| Array1::zeros(p[1])).collect(),
            output,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// Flattened parameters, layer by layer: row-major weights then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: self.parameter_count(),
                actual: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().unwrap());
            b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    fn same_architecture(&self, other: &Mlp) -> bool {
        self.layer_sizes == other.layer_sizes && self.output == other.output
    }

    fn activate_output(&self, z: &mut Array2<f64>) {
        if let OutputActivation::TanhScaled(s) = self.output {
            z.mapv_inplace(|v| s * v.tanh());
        }
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: input.ncols(),
            });
        }
        Ok(())
    }

    /// Batched forward pass keeping the activations for [`Mlp::backward`].
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&input)?;
        let last = self.weights.len() - 1;
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        activations.push(input.to_owned());
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = activations[k].dot(&w.t());
            z += b;
            if k == last {
                self.activate_output(&mut z);
            } else {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Batched forward pass without a cache.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let last = self.weights.len() - 1;
        let mut a = input.to_owned();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(&w.t());
            z += b;
            if k == last {
                self.activate_output(&mut z);
            } else {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a)
    }

    /// Single-sample evaluation.
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|_| Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: input.len(),
            })?;
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    /// Reverse-mode gradients of `sum(output_gradient * output)`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_gradient: ArrayView2<f64>,
    ) -> Result<GradientSet> {
        let n_layers = self.weights.len();
        if cache.activations.len() != n_layers + 1
            || cache
                .activations
                .iter()
                .zip(&self.layer_sizes)
                .any(|(a, &d)| a.ncols() != d)
        {
            return Err(Error::ArchitectureMismatch(
                "forward cache does not match this network".into(),
            ));
        }
        let batch = cache.batch_size();
        if output_gradient.dim() != (batch, self.output_dim()) {
            return Err(Error::DimensionMismatch {
                expected: batch * self.output_dim(),
                actual: output_gradient.len(),
            });
        }

        let mut grad_w = vec![Array2::zeros((0, 0)); n_layers];
        let mut grad_b = vec![Array1::zeros(0); n_layers];

        // delta = dL/dz for the current layer
        let mut delta = output_gradient.to_owned();
        if let OutputActivation::TanhScaled(s) = self.output {
            Zip::from(&mut delta)
                .and(cache.output())
                .for_each(|d, &y| {
                    let t = y / s;
                    *d *= s * (1.0 - t * t);
                });
        }
        for k in (0..n_layers).rev() {
            let a_prev = &cache.activations[k];
            grad_w[k] = delta.t().dot(a_prev);
            grad_b[k] = delta.sum_axis(Axis(0));
            let mut d_prev = delta.dot(&self.weights[k]);
            if k > 0 {
                Zip::from(&mut d_prev).and(a_prev).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = d_prev;
        }
        Ok(GradientSet {
            weights: grad_w,
            biases: grad_b,
            input: delta,
        })
    }

    fn check_gradients(&self, grads: &GradientSet) -> Result<()> {
        let shapes_match = grads.weights.len() == self.weights.len()
            && grads
                .weights
                .iter()
                .zip(&self.weights)
                .all(|(g, w)| g.dim() == w.dim())
            && grads
                .biases
                .iter()
                .zip(&self.biases)
                .all(|(g, b)| g.dim() == b.dim());
        if !shapes_match {
            return Err(Error::ArchitectureMismatch(
                "gradient set does not match this network".into(),
            ));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        Ok(())
    }

    /// Plain gradient descent: `theta -= lr * grad`.
    pub fn apply_gradients(&mut self, grads: &GradientSet, learning_rate: f64) -> Result<()> {
        self.check_gradients(grads)?;
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            w.scaled_add(-learning_rate, g);
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            b.scaled_add(-learning_rate, g);
        }
        Ok(())
    }

    /// `self = tau * source + (1 - tau) * self`.
    pub fn soft_update(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        if !self.same_architecture(source) {
            return Err(Error::ArchitectureMismatch(format!(
                "{:?} vs {:?}",
                self.layer_sizes, source.layer_sizes
            )));
        }
        if tau == 1.0 {
            self.weights.clone_from(&source.weights);
            self.biases.clone_from(&source.biases);
            return Ok(());
        }
        for (t, s) in self.weights.iter_mut().zip(&source.weights) {
            Zip::from(t).and(s).for_each(|t, &s| *t = tau * s + (1.0 - tau) * *t);
        }
        for (t, s) in self.biases.iter_mut().zip(&source.biases) {
            Zip::from(t).and(s).for_each(|t, &s| *t = tau * s + (1.0 - tau) * *t);
        }
        Ok(())
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::invalid("layer_sizes", "need at least input and output"));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::invalid("layer_sizes", "zero-width layer"));
    }
    Ok(())
}

// Checkpoint encoding

pub(crate) const MLP_MAGIC: &[u8; 8] = b"UAMMLP\0\0";
pub const MLP_FORMAT_VERSION: u32 = 1;

const TAG_RELU: u8 = 0;
const TAG_LINEAR: u8 = 0;
const TAG_TANH_SCALED: u8 = 1;

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::CheckpointTruncated(what),
        _ => Error::io(what, e),
    })
}

pub(crate) fn read_u8<R: Read>(r: &mut R, what: &'static str) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b, what)?;
    Ok(b[0])
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &'static str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R, what: &'static str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}

fn write_all<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_all(bytes).map_err(|e| Error::io("writing checkpoint", e))
}

impl Mlp {
    /// Header (magic, version, layer sizes, activation tags, parameter
    /// count) followed by each layer's row-major weights then biases, all
    /// little-endian.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        write_all(w, MLP_MAGIC)?;
        write_all(w, &MLP_FORMAT_VERSION.to_le_bytes())?;
        write_all(w, &(self.layer_sizes.len() as u32).to_le_bytes())?;
        for &s in &self.layer_sizes {
            write_all(w, &(s as u32).to_le_bytes())?;
        }
        write_all(w, &[TAG_RELU])?;
        match self.output {
            OutputActivation::Linear => {
                write_all(w, &[TAG_LINEAR])?;
                write_all(w, &0f64.to_le_bytes())?;
            }
            OutputActivation::TanhScaled(s) => {
                write_all(w, &[TAG_TANH_SCALED])?;
                write_all(w, &s.to_le_bytes())?;
            }
        }
        write_all(w, &(self.parameter_count() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.parameter_count() * 8);
        for v in self.parameters() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        write_all(w, &buf)
    }

    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic, "network magic")?;
        if &magic != MLP_MAGIC {
            return Err(Error::CheckpointMagic(
                String::from_utf8_lossy(&magic).into_owned(),
            ));
        }
        let version = read_u32(r, "network version")?;
        if version != MLP_FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: MLP_FORMAT_VERSION,
            });
        }
        let n = read_u32(r, "layer count")? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::CheckpointShape(format!("{n} layers")));
        }
        let mut sizes = Vec::with_capacity(n);
        for _ in 0..n {
            sizes.push(read_u32(r, "layer sizes")? as usize);
        }
        if sizes.contains(&0) {
            return Err(Error::CheckpointShape(format!("zero-width layer in {sizes:?}")));
        }
        let hidden = read_u8(r, "activation tags")?;
        if hidden != TAG_RELU {
            return Err(Error::CheckpointShape(format!("hidden activation tag {hidden}")));
        }
        let out_tag = read_u8(r, "activation tags")?;
        let scale = read_f64(r, "activation tags")?;
        let output = match out_tag {
            TAG_LINEAR => OutputActivation::Linear,
            TAG_TANH_SCALED => OutputActivation::TanhScaled(scale),
            t => return Err(Error::CheckpointShape(format!("output activation tag {t}"))),
        };
        let count = read_u64(r, "parameter count")? as usize;
        let mut net = Mlp::zeros(&sizes, output)?;
        if count != net.parameter_count() {
            return Err(Error::CheckpointShape(format!(
                "layer sizes {sizes:?} imply {} parameters, header says {count}",
                net.parameter_count()
            )));
        }
        let mut raw = vec![0u8; count * 8];
        read_exact(r, &mut raw, "network parameters")?;
        let params: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        net.set_parameters(&params)?;
        Ok(net)
    }
}
