//! MLP autoencoder: shape, initialization, forward pass, backprop.
//!
//! The encoder maps input -> hidden... -> latent and the decoder mirrors
//! it in reverse back to the input width. Hidden layers (including the
//! latent layer) use tanh; the final reconstruction layer is linear, so
//! intermediate values stay bounded while outputs are unconstrained.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::params::{ModelLayout, ParameterVector, SegmentDescriptor};

/// Widths of an encoder/decoder pair. The decoder mirrors the encoder,
/// so only the encoder side is specified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AutoencoderShape {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
}

impl AutoencoderShape {
    /// Default stack for a given input width: one hidden layer of
    /// max(4, input) units and a latent width of max(2, input/2).
    pub fn with_defaults(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![input_dim.max(4)],
            latent_dim: (input_dim / 2).max(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 || self.latent_dim < 1 {
            return Err(Error::Config(format!(
                "autoencoder needs input_dim >= 1 and latent_dim >= 1, got {} and {}",
                self.input_dim, self.latent_dim
            )));
        }
        if self.hidden_dims.iter().any(|&h| h < 1) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    /// Full stack widths: input, hidden..., latent, reversed hidden..., input.
    pub fn stack_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(2 * self.hidden_dims.len() + 3);
        dims.push(self.input_dim);
        dims.extend(&self.hidden_dims);
        dims.push(self.latent_dim);
        dims.extend(self.hidden_dims.iter().rev());
        dims.push(self.input_dim);
        dims
    }

    pub fn n_encoder_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    /// Build the segment layout for this shape: weight and bias segments
    /// per layer, encoder first, tiled without gaps.
    pub fn layout(&self) -> Result<Arc<ModelLayout>> {
        self.validate()?;
        let dims = self.stack_dims();
        let n_layers = dims.len() - 1;
        let n_enc = self.n_encoder_layers();
        let mut segments = Vec::with_capacity(2 * n_layers);
        let mut offset = 0;
        let mut encoder_end = 0;
        for l in 0..n_layers {
            let (inp, out) = (dims[l], dims[l + 1]);
            let side = if l < n_enc { "enc" } else { "dec" };
            let idx = if l < n_enc { l } else { l - n_enc };
            segments.push(SegmentDescriptor {
                name: format!("{side}{idx}.w"),
                dims: vec![out, inp],
                offset,
            });
            offset += out * inp;
            segments.push(SegmentDescriptor {
                name: format!("{side}{idx}.b"),
                dims: vec![out],
                offset,
            });
            offset += out;
            if l + 1 == n_enc {
                encoder_end = offset;
            }
        }
        Ok(Arc::new(ModelLayout {
            segments,
            encoder_span: 0..encoder_end,
            decoder_span: encoder_end..offset,
            stack_dims: dims,
            n_encoder_layers: n_enc,
            total_len: offset,
        }))
    }
}

/// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out)) per layer),
/// zero biases, deterministic for a given seed.
pub fn init_params(shape: &AutoencoderShape, seed: u64) -> Result<ParameterVector> {
    let layout = shape.layout()?;
    let mut values = vec![0.0; layout.total_len];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in 0..layout.n_layers() {
        let (inp, out) = layout.layer_dims(l);
        let bound = (6.0 / (inp + out) as f64).sqrt();
        let seg = layout.weight_segment(l);
        for v in &mut values[seg.offset..seg.offset + seg.len()] {
            *v = rng.random_range(-bound..=bound);
        }
        // Bias segments stay zero.
    }
    ParameterVector::new(values, layout)
}

/// Per-layer activations of a (partial) forward pass. `activations[0]`
/// is the input batch; `activations[l+1]` is the output of layer `l`.
pub struct ForwardCache {
    pub activations: Vec<Array2<f64>>,
    pub n_layers: usize,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.activations[self.n_layers]
    }
}

/// Forward output exposed to callers: the latent code and the
/// reconstruction of the input batch.
pub struct ForwardOutput {
    pub latent: Array2<f64>,
    pub reconstruction: Array2<f64>,
}

/// Run layers `0..n_layers` on `batch`, keeping every activation.
pub fn forward_cached(
    params: &ParameterVector,
    batch: &Array2<f64>,
    n_layers: usize,
) -> Result<ForwardCache> {
    let layout = params.layout();
    if batch.ncols() != layout.input_dim() {
        return Err(Error::Shape(format!(
            "batch width {} does not match model input width {}",
            batch.ncols(),
            layout.input_dim()
        )));
    }
    let mut activations = Vec::with_capacity(n_layers + 1);
    activations.push(batch.clone());
    for l in 0..n_layers {
        let w = params.weight(l);
        let b = params.bias(l);
        let prev = &activations[l];
        let mut next: Array2<f64> = prev.dot(&w.t());
        let bias = Array1::from_iter(b.iter().copied());
        next += &bias;
        if !layout.layer_is_linear(l) {
            next.mapv_inplace(f64::tanh);
        }
        activations.push(next);
    }
    Ok(ForwardCache {
        activations,
        n_layers,
    })
}

/// Full forward pass: latent code plus reconstruction.
pub fn forward(params: &ParameterVector, batch: &Array2<f64>) -> Result<ForwardOutput> {
    let layout = params.layout();
    let cache = forward_cached(params, batch, layout.n_layers())?;
    Ok(ForwardOutput {
        latent: cache.activations[layout.n_encoder_layers].clone(),
        reconstruction: cache.activations[layout.n_layers()].clone(),
    })
}

/// Backpropagate `d_output` (gradient w.r.t. the cache's final
/// activation) through the cached layers, accumulating parameter
/// gradients into `grad`.
pub fn backprop(
    params: &ParameterVector,
    cache: &ForwardCache,
    d_output: Array2<f64>,
    grad: &mut [f64],
) {
    let layout = params.layout();
    let mut d_h = d_output;
    for l in (0..cache.n_layers).rev() {
        let post = &cache.activations[l + 1];
        let pre_input = &cache.activations[l];
        // tanh'(a) = 1 - tanh(a)^2, expressed via the stored activation.
        let d_a = if layout.layer_is_linear(l) {
            d_h
        } else {
            let mut d = d_h;
            d.zip_mut_with(post, |g, &h| *g *= 1.0 - h * h);
            d
        };
        let w_seg = layout.weight_segment(l);
        let b_seg = layout.bias_segment(l);
        let d_w = d_a.t().dot(pre_input);
        let (out_dim, in_dim) = d_w.dim();
        for r in 0..out_dim {
            for c in 0..in_dim {
                grad[w_seg.offset + r * in_dim + c] += d_w[[r, c]];
            }
        }
        for (j, g) in d_a.sum_axis(ndarray::Axis(0)).iter().enumerate() {
            grad[b_seg.offset + j] += g;
        }
        d_h = d_a.dot(&params.weight(l));
    }
}
