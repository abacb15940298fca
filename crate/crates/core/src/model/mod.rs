//! The local client model: an MLP autoencoder trained to reconstruct
//! its feature slice, with an optional in-batch contrastive term on the
//! latent codes. Gradients are analytic; the optimizer is plain SGD.

mod autoencoder;
mod contrastive;
mod params;

pub use autoencoder::{forward, init_params, AutoencoderShape, ForwardOutput};
pub use params::{ModelLayout, ParameterVector, SegmentDescriptor};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Loss components for one batch. `total` is always computed as
/// `reconstruction + lambda * contrastive` in the same floating
/// arithmetic the caller would use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub reconstruction: f64,
    pub contrastive: f64,
    pub lambda: f64,
    pub total: f64,
    pub diverged: bool,
}

impl LossReport {
    fn new(reconstruction: f64, contrastive: f64, lambda: f64) -> Self {
        Self {
            reconstruction,
            contrastive,
            lambda,
            total: reconstruction + lambda * contrastive,
            diverged: false,
        }
    }

    pub fn diverged_report(lambda: f64) -> Self {
        Self {
            reconstruction: f64::NAN,
            contrastive: f64::NAN,
            lambda,
            total: f64::NAN,
            diverged: true,
        }
    }
}

/// Mean-squared reconstruction loss plus `lambda` times the contrastive
/// term, with the exact analytic gradient in the same layout as
/// `params`.
///
/// The contrastive views are drawn from `mask_seed`, so the whole
/// computation is a pure function of (params, batch, hyperparameters,
/// mask_seed). Non-finite intermediate values yield a report flagged
/// diverged with a zero gradient instead of propagating NaN.
pub fn loss_and_grad(
    params: &ParameterVector,
    batch: &Array2<f64>,
    lambda: f64,
    temperature: f64,
    mask_seed: u64,
) -> Result<(LossReport, ParameterVector)> {
    let layout = params.layout();
    if batch.ncols() != layout.input_dim() {
        return Err(Error::Shape(format!(
            "batch width {} does not match model input width {}",
            batch.ncols(),
            layout.input_dim()
        )));
    }
    let rows = batch.nrows();
    if lambda > 0.0 {
        if rows < 2 {
            return Err(Error::Shape(format!(
                "contrastive term needs a batch of >= 2 rows, got {rows}"
            )));
        }
        if !(temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
    }
    if params.diverged() || !params.all_finite() {
        return Ok((
            LossReport::diverged_report(lambda),
            diverged_grad(params),
        ));
    }

    let n_layers = layout.n_layers();
    let n_enc = layout.n_encoder_layers;
    let cells = (rows * batch.ncols()) as f64;

    let cache = autoencoder::forward_cached(params, batch, n_layers)?;
    let recon = cache.output();
    if recon.iter().any(|v| !v.is_finite()) {
        return Ok((
            LossReport::diverged_report(lambda),
            diverged_grad(params),
        ));
    }

    let mut diff = recon - batch;
    let recon_loss = diff.iter().map(|e| e * e).sum::<f64>() / cells;

    let mut grad = vec![0.0; params.len()];
    diff.mapv_inplace(|e| 2.0 * e / cells);
    autoencoder::backprop(params, &cache, diff, &mut grad);

    let mut cont_loss = 0.0;
    if lambda > 0.0 {
        let (view1, view2) = contrastive::masked_views(batch, mask_seed);
        let cache1 = autoencoder::forward_cached(params, &view1, n_enc)?;
        let cache2 = autoencoder::forward_cached(params, &view2, n_enc)?;
        let (loss, mut d_z1, mut d_z2) =
            contrastive::ntxent_loss_grad(cache1.output(), cache2.output(), temperature);
        cont_loss = loss;
        d_z1.mapv_inplace(|v| v * lambda);
        d_z2.mapv_inplace(|v| v * lambda);
        autoencoder::backprop(params, &cache1, d_z1, &mut grad);
        autoencoder::backprop(params, &cache2, d_z2, &mut grad);
    }

    let report = LossReport::new(recon_loss, cont_loss, lambda);
    if !report.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Ok((
            LossReport::diverged_report(lambda),
            diverged_grad(params),
        ));
    }
    let grad_vec = ParameterVector::new(grad, params.layout_arc())
        .expect("gradient shares the parameter layout");
    Ok((report, grad_vec))
}

fn diverged_grad(params: &ParameterVector) -> ParameterVector {
    let mut g = ParameterVector::zeros_like(params);
    g.set_diverged(true);
    g
}

/// One plain gradient-descent step: `out[i] = params[i] - eta * grad[i]`.
pub fn sgd_step(
    params: &ParameterVector,
    grad: &ParameterVector,
    eta: f64,
) -> Result<ParameterVector> {
    if !params.same_layout(grad) {
        return Err(Error::Layout(
            "parameter and gradient layouts differ".into(),
        ));
    }
    if !(eta > 0.0) {
        return Err(Error::Config(format!("learning rate must be > 0, got {eta}")));
    }
    let values: Vec<f64> = params
        .values()
        .iter()
        .zip(grad.values())
        .map(|(p, g)| p - eta * g)
        .collect();
    let mut out = ParameterVector::new(values, params.layout_arc())?;
    if params.diverged() || grad.diverged() {
        out.set_diverged(true);
    }
    out.refresh_divergence();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_shape() -> AutoencoderShape {
        AutoencoderShape {
            input_dim: 4,
            hidden_dims: vec![3],
            latent_dim: 2,
        }
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.5..1.5))
    }

    #[test]
    fn parameter_count_matches_hand_count() {
        // Stack 4 -> 3 -> 2 -> 3 -> 4; each layer holds out*in weights
        // plus out biases.
        let hand_count = (4 * 3 + 3) + (3 * 2 + 2) + (2 * 3 + 3) + (3 * 4 + 4);
        assert_eq!(hand_count, 48);
        let params = init_params(&small_shape(), 0).unwrap();
        assert_eq!(params.len(), hand_count);
    }

    #[test]
    fn init_is_deterministic_and_biases_are_zero() {
        let a = init_params(&small_shape(), 5).unwrap();
        let b = init_params(&small_shape(), 5).unwrap();
        assert_eq!(a.values(), b.values());

        let layout = a.layout();
        for l in 0..layout.n_layers() {
            let seg = layout.bias_segment(l);
            assert!(a.values()[seg.offset..seg.offset + seg.len()]
                .iter()
                .all(|&v| v == 0.0));
        }
        // Weight bound for the first layer: sqrt(6/(4+3)).
        let bound = (6.0f64 / 7.0).sqrt();
        let w = a.weight(0);
        assert!(w.iter().all(|&v| v.abs() <= bound));
        assert!(w.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn layout_tiles_exactly_and_spans_are_disjoint() {
        let params = init_params(&small_shape(), 1).unwrap();
        let layout = params.layout();
        let mut offset = 0;
        for seg in &layout.segments {
            assert_eq!(seg.offset, offset);
            offset += seg.len();
        }
        assert_eq!(offset, layout.total_len);
        assert_eq!(layout.encoder_span.start, 0);
        assert_eq!(layout.encoder_span.end, layout.decoder_span.start);
        assert_eq!(layout.decoder_span.end, layout.total_len);
        // Encoder: (4*3+3) + (3*2+2) = 23 values.
        assert_eq!(layout.encoder_span.end, 23);
    }

    #[test]
    fn forward_zero_params_reconstructs_zero() {
        let shape = small_shape();
        let layout = shape.layout().unwrap();
        let params = ParameterVector::new(vec![0.0; layout.total_len], layout).unwrap();
        let batch = random_batch(5, 4, 2);
        let out = forward(&params, &batch).unwrap();
        assert!(out.reconstruction.iter().all(|&v| v == 0.0));
        assert!(out.latent.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_rows_are_independent() {
        let params = init_params(&small_shape(), 3).unwrap();
        let batch = random_batch(8, 4, 7);
        let full = forward(&params, &batch).unwrap();
        for i in 0..8 {
            let row = batch.row(i).insert_axis(ndarray::Axis(0)).to_owned();
            let single = forward(&params, &row).unwrap();
            for j in 0..4 {
                assert!(
                    (full.reconstruction[[i, j]] - single.reconstruction[[0, j]]).abs() < 1e-12
                );
            }
        }
    }

    /// Independent naive forward pass over the same layout, written with
    /// plain loops; used as an oracle for the ndarray implementation.
    fn naive_forward(params: &ParameterVector, batch: &Array2<f64>) -> Array2<f64> {
        let layout = params.layout();
        let rows = batch.nrows();
        let mut h: Vec<Vec<f64>> = (0..rows).map(|i| batch.row(i).to_vec()).collect();
        for l in 0..layout.n_layers() {
            let (in_dim, out_dim) = layout.layer_dims(l);
            let w_seg = layout.weight_segment(l);
            let b_seg = layout.bias_segment(l);
            let w = &params.values()[w_seg.offset..w_seg.offset + w_seg.len()];
            let b = &params.values()[b_seg.offset..b_seg.offset + b_seg.len()];
            let mut next = vec![vec![0.0; out_dim]; rows];
            for (row_in, row_out) in h.iter().zip(next.iter_mut()) {
                for (o, out_cell) in row_out.iter_mut().enumerate() {
                    let mut acc = b[o];
                    for (i, x) in row_in.iter().enumerate() {
                        acc += w[o * in_dim + i] * x;
                    }
                    *out_cell = if layout.layer_is_linear(l) {
                        acc
                    } else {
                        acc.tanh()
                    };
                }
            }
            h = next;
        }
        let out_dim = h[0].len();
        Array2::from_shape_fn((rows, out_dim), |(i, j)| h[i][j])
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let params = init_params(&small_shape(), 3).unwrap();
        let batch = random_batch(6, 4, 3);
        let ours = forward(&params, &batch).unwrap().reconstruction;
        let oracle = naive_forward(&params, &batch);
        for (a, b) in ours.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let params = init_params(&small_shape(), 3).unwrap();
        let batch = random_batch(4, 5, 3);
        assert!(matches!(forward(&params, &batch), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_dataset_has_zero_loss_and_zero_recon_gradient() {
        // The all-zeros dataset is exactly representable (tanh(0) = 0),
        // so the reconstruction loss and its gradient vanish.
        let params = init_params(&small_shape(), 9).unwrap();
        let batch = Array2::<f64>::zeros((4, 4));
        let (report, grad) = loss_and_grad(&params, &batch, 0.0, 0.5, 0).unwrap();
        assert_eq!(report.reconstruction, 0.0);
        assert!(grad.values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn total_is_reconstruction_plus_lambda_contrastive() {
        let params = init_params(&small_shape(), 11).unwrap();
        let batch = random_batch(4, 4, 11);
        let (report, _) = loss_and_grad(&params, &batch, 1.0, 0.5, 11).unwrap();
        assert!(report.contrastive > 0.0);
        assert_eq!(
            report.total,
            report.reconstruction + report.lambda * report.contrastive
        );
    }

    #[test]
    fn losses_are_non_negative() {
        for seed in 0..10u64 {
            let params = init_params(&small_shape(), seed).unwrap();
            let batch = random_batch(5, 4, seed + 100);
            let (report, _) = loss_and_grad(&params, &batch, 0.3, 0.5, seed).unwrap();
            assert!(report.reconstruction >= 0.0);
            assert!(report.contrastive >= 0.0);
        }
    }

    #[test]
    fn contrastive_requires_two_rows() {
        let params = init_params(&small_shape(), 1).unwrap();
        let batch = random_batch(1, 4, 1);
        assert!(matches!(
            loss_and_grad(&params, &batch, 0.1, 0.5, 0),
            Err(Error::Shape(_))
        ));
        // Without the contrastive term a single row is fine.
        assert!(loss_and_grad(&params, &batch, 0.0, 0.5, 0).is_ok());
    }

    /// Central finite differences of the total loss at 50 coordinates.
    fn finite_difference_check(shape: &AutoencoderShape, lambda: f64, seed: u64) {
        let params = init_params(shape, seed).unwrap();
        let batch = random_batch(4, shape.input_dim, seed + 1);
        let mask_seed = seed + 2;
        let (_, grad) = loss_and_grad(&params, &batch, lambda, 0.5, mask_seed).unwrap();

        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
        for _ in 0..50 {
            let idx = rng.random_range(0..params.len());
            let mut plus = params.clone();
            plus.values_mut()[idx] += h;
            let mut minus = params.clone();
            minus.values_mut()[idx] -= h;
            let (lp, _) = loss_and_grad(&plus, &batch, lambda, 0.5, mask_seed).unwrap();
            let (lm, _) = loss_and_grad(&minus, &batch, lambda, 0.5, mask_seed).unwrap();
            let numeric = (lp.total - lm.total) / (2.0 * h);
            let analytic = grad.values()[idx];
            let denom = numeric.abs().max(analytic.abs()).max(1e-8);
            let rel = (numeric - analytic).abs() / denom;
            assert!(
                rel < 1e-4,
                "coordinate {idx}: analytic {analytic}, numeric {numeric}, rel {rel}"
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences_mse_only() {
        finite_difference_check(&small_shape(), 0.0, 21);
    }

    #[test]
    fn gradient_matches_finite_differences_with_contrastive() {
        finite_difference_check(&small_shape(), 1.0, 22);
        finite_difference_check(&small_shape(), 0.1, 23);
    }

    #[test]
    fn gradient_matches_finite_differences_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for round in 0..4u64 {
            let shape = AutoencoderShape {
                input_dim: rng.random_range(2..6),
                hidden_dims: vec![rng.random_range(2..5)],
                latent_dim: rng.random_range(1..4),
            };
            finite_difference_check(&shape, 0.0, 200 + round);
            finite_difference_check(&shape, 0.1, 300 + round);
        }
    }

    #[test]
    fn sgd_step_arithmetic() {
        let shape = AutoencoderShape {
            input_dim: 1,
            hidden_dims: vec![],
            latent_dim: 1,
        };
        let layout = shape.layout().unwrap();
        // Stack 1 -> 1 -> 1: two weights, two biases; use the first two
        // slots for the worked example.
        assert_eq!(layout.total_len, 4);
        let params = ParameterVector::new(vec![1.0, 2.0, 0.0, 0.0], layout.clone()).unwrap();
        let grad = ParameterVector::new(vec![0.5, -0.5, 0.0, 0.0], layout).unwrap();
        let next = sgd_step(&params, &grad, 0.1).unwrap();
        assert_eq!(next.values()[0], 0.95);
        assert_eq!(next.values()[1], 2.05);
    }

    #[test]
    fn sgd_zero_gradient_is_fixed_point() {
        let params = init_params(&small_shape(), 4).unwrap();
        let zero = ParameterVector::zeros_like(&params);
        let next = sgd_step(&params, &zero, 0.05).unwrap();
        assert_eq!(next.values(), params.values());
    }

    #[test]
    fn sgd_contraction_matches_quadratic_closed_form() {
        // On f(w) = mu/2 * ||w - w*||^2 the step w <- w - eta*mu*(w - w*)
        // contracts the distance by (1 - eta*mu) per step.
        let shape = AutoencoderShape {
            input_dim: 1,
            hidden_dims: vec![],
            latent_dim: 1,
        };
        let layout = shape.layout().unwrap();
        let target = [0.3, -0.2, 0.1, 0.4];
        let mut w = ParameterVector::new(vec![1.0, 1.0, 1.0, 1.0], layout.clone()).unwrap();
        let (eta, mu) = (0.1, 1.5);
        let start_dist: f64 = w
            .values()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        for _ in 0..2 {
            let grad_values: Vec<f64> = w.values().iter().zip(target).map(|(a, b)| mu * (a - b)).collect();
            let grad = ParameterVector::new(grad_values, layout.clone()).unwrap();
            w = sgd_step(&w, &grad, eta).unwrap();
        }
        let end_dist: f64 = w
            .values()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let predicted = (1.0 - eta * mu).powi(2).powi(2) * start_dist;
        assert!((end_dist - predicted).abs() < 1e-12, "{end_dist} vs {predicted}");
    }

    #[test]
    fn sgd_rejects_layout_mismatch() {
        let a = init_params(&small_shape(), 1).unwrap();
        let other = AutoencoderShape {
            input_dim: 3,
            hidden_dims: vec![3],
            latent_dim: 2,
        };
        let b = init_params(&other, 1).unwrap();
        assert!(matches!(sgd_step(&a, &b, 0.1), Err(Error::Layout(_))));
    }

    #[test]
    fn pipeline_layouts_are_identical() {
        let params = init_params(&small_shape(), 8).unwrap();
        let batch = random_batch(4, 4, 8);
        let (_, grad) = loss_and_grad(&params, &batch, 0.1, 0.5, 8).unwrap();
        let next = sgd_step(&params, &grad, 0.05).unwrap();
        assert_eq!(params.layout(), grad.layout());
        assert_eq!(params.layout(), next.layout());
        assert_eq!(params.layout().segments, next.layout().segments);
    }

    #[test]
    fn train_one_batch_is_deterministic() {
        let params = init_params(&small_shape(), 8).unwrap();
        let batch = random_batch(4, 4, 8);
        let (r1, g1) = loss_and_grad(&params, &batch, 0.1, 0.5, 77).unwrap();
        let (r2, g2) = loss_and_grad(&params, &batch, 0.1, 0.5, 77).unwrap();
        assert_eq!(r1.total, r2.total);
        assert_eq!(g1.values(), g2.values());
    }

    #[test]
    fn diverged_params_yield_flagged_report() {
        let mut params = init_params(&small_shape(), 8).unwrap();
        params.values_mut()[0] = f64::INFINITY;
        params.refresh_divergence();
        assert!(params.diverged());
        let batch = random_batch(4, 4, 8);
        let (report, grad) = loss_and_grad(&params, &batch, 0.1, 0.5, 0).unwrap();
        assert!(report.diverged);
        assert!(grad.diverged());
        assert!(grad.values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let params = init_params(&small_shape(), 12).unwrap();
        let bytes = params.to_bytes();
        let back = ParameterVector::from_bytes(&bytes).unwrap();
        assert_eq!(back.values(), params.values());
        assert_eq!(back.layout(), params.layout());
        assert_eq!(back.diverged(), params.diverged());
    }

    #[test]
    fn checkpoint_rejects_truncated_input() {
        let params = init_params(&small_shape(), 12).unwrap();
        let bytes = params.to_bytes();
        let truncated = &bytes[..bytes.len() - 3];
        assert!(ParameterVector::from_bytes(truncated).is_err());
    }
}
