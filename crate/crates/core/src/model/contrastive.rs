//! In-batch contrastive objective on latent codes.
//!
//! Two views of every row are made by zeroing complementary random
//! halves of the input features (one split per call, drawn from the mask
//! seed). The two views of a row form the positive pair; all other rows
//! in the batch act as negatives. The loss is the normalized
//! temperature-scaled cross entropy over cosine similarities.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const NORM_FLOOR: f64 = 1e-12;

/// Produce the two masked views of a batch. The feature indices are
/// shuffled once per call; the first half is zeroed in view one and the
/// remaining features are zeroed in view two.
pub fn masked_views(batch: &Array2<f64>, mask_seed: u64) -> (Array2<f64>, Array2<f64>) {
    let d = batch.ncols();
    let mut order: Vec<usize> = (0..d).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let half = d / 2;

    let mut view1 = batch.clone();
    let mut view2 = batch.clone();
    for (pos, &col) in order.iter().enumerate() {
        let target = if pos < half { &mut view1 } else { &mut view2 };
        target.column_mut(col).fill(0.0);
    }
    (view1, view2)
}

/// NT-Xent loss over stacked latent codes, with its gradient w.r.t. both
/// view embeddings. `z1[i]` and `z2[i]` are the positive pair for row i.
pub fn ntxent_loss_grad(
    z1: &Array2<f64>,
    z2: &Array2<f64>,
    temperature: f64,
) -> (f64, Array2<f64>, Array2<f64>) {
    let b = z1.nrows();
    let dim = z1.ncols();
    let n = 2 * b;
    debug_assert!(b >= 2, "contrastive loss needs at least 2 rows");
    debug_assert_eq!(z2.dim(), (b, dim));

    // Stack: rows 0..b are view one, rows b..2b view two.
    let mut z = Array2::<f64>::zeros((n, dim));
    z.slice_mut(ndarray::s![..b, ..]).assign(z1);
    z.slice_mut(ndarray::s![b.., ..]).assign(z2);

    let norms: Vec<f64> = (0..n)
        .map(|i| z.row(i).dot(&z.row(i)).sqrt().max(NORM_FLOOR))
        .collect();

    // Cosine similarities; the diagonal is never used.
    let mut sim = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let s = z.row(i).dot(&z.row(j)) / (norms[i] * norms[j]);
            sim[[i, j]] = s;
            sim[[j, i]] = s;
        }
    }

    let positive = |i: usize| if i < b { i + b } else { i - b };

    // Softmax over each anchor's non-self logits, numerically shifted.
    let mut loss = 0.0;
    let mut softmax = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let mut max_logit = f64::NEG_INFINITY;
        for j in 0..n {
            if j != i {
                max_logit = max_logit.max(sim[[i, j]] / temperature);
            }
        }
        let mut denom = 0.0;
        for j in 0..n {
            if j != i {
                let e = ((sim[[i, j]] / temperature) - max_logit).exp();
                softmax[[i, j]] = e;
                denom += e;
            }
        }
        for j in 0..n {
            if j != i {
                softmax[[i, j]] /= denom;
            }
        }
        let pos_logit = sim[[i, positive(i)]] / temperature;
        loss += -(pos_logit - max_logit) + denom.ln();
    }
    loss /= n as f64;

    // d loss / d sim(i,j) collects both anchors that use the entry; the
    // (i, j) iteration then routes it into z_i via the cosine chain rule.
    let mut d_z = Array2::<f64>::zeros((n, dim));
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let g_ij = (softmax[[i, j]] - f64::from(j == positive(i))) / n as f64;
            let g_ji = (softmax[[j, i]] - f64::from(i == positive(j))) / n as f64;
            let w = (g_ij + g_ji) / temperature;
            if w == 0.0 {
                continue;
            }
            // d sim(i,j) / d z_i = z_j/(r_i r_j) - sim * z_i / r_i^2
            let s = sim[[i, j]];
            let ri = norms[i];
            let rj = norms[j];
            for c in 0..dim {
                d_z[[i, c]] += w * (z[[j, c]] / (ri * rj) - s * z[[i, c]] / (ri * ri));
            }
        }
    }

    let d_z1 = d_z.slice(ndarray::s![..b, ..]).to_owned();
    let d_z2 = d_z.slice(ndarray::s![b.., ..]).to_owned();
    (loss, d_z1, d_z2)
}
