//! The adversary: model-scaling poisoning applied by a designated
//! subset of clients, plus the detectability telemetry (update norm and
//! statistical distance against the clean parameters).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParameterVector;

/// Attack parameters for one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Fraction of clients poisoned, in [0, 1].
    pub p_c: f64,
    /// Scaling level alpha applied to poisoned parameters, > 0.
    pub p_l: f64,
    /// Detection bound on ||delta||; monitored, never enforced.
    pub epsilon: f64,
    /// Detection bound on the statistical distance; monitored only.
    pub tau: f64,
    /// Seed for sampling the poisoned set.
    pub seed: u64,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_c) {
            return Err(Error::Config(format!("p_c must be in [0, 1], got {}", self.p_c)));
        }
        if !(self.p_l > 0.0) {
            return Err(Error::Config(format!("p_l must be > 0, got {}", self.p_l)));
        }
        if self.epsilon < 0.0 || self.tau < 0.0 {
            return Err(Error::Config("epsilon and tau must be >= 0".into()));
        }
        Ok(())
    }
}

/// The clients designated adversarial for a whole experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoisonedSet {
    members: Vec<usize>,
}

impl PoisonedSet {
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, client: usize) -> bool {
        self.members.binary_search(&client).is_ok()
    }
}

/// Number of poisoned clients for a fraction `p_c` of `k` clients:
/// round-half-up of `p_c * k`.
pub fn poisoned_count(k: usize, p_c: f64) -> usize {
    (p_c * k as f64).round() as usize
}

/// Sample the poisoned set once, before training: a uniformly random
/// subset of size round(p_c * k), deterministic per seed.
pub fn choose_poisoned(k: usize, p_c: f64, seed: u64) -> Result<PoisonedSet> {
    if k < 1 {
        return Err(Error::Config("client count must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&p_c) {
        return Err(Error::Config(format!("p_c must be in [0, 1], got {p_c}")));
    }
    let size = poisoned_count(k, p_c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members = rand::seq::index::sample(&mut rng, k, size).into_vec();
    members.sort_unstable();
    Ok(PoisonedSet { members })
}

/// Multiply every parameter by alpha; the layout is untouched.
pub fn scale_attack(params: &ParameterVector, alpha: f64) -> ParameterVector {
    let mut out = params.clone();
    for v in out.values_mut() {
        *v *= alpha;
    }
    out.refresh_divergence();
    out
}

/// Detectability telemetry for one poisoned update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub delta_norm: f64,
    pub stats_distance: f64,
    pub norm_ok: bool,
    pub stats_ok: bool,
}

/// Compare a poisoned update to its clean counterpart: the L2 norm of
/// the difference against `epsilon`, and the Euclidean distance between
/// the (mean, sd) summaries against `tau`. Both bounds are inclusive.
pub fn check_constraints(
    clean: &ParameterVector,
    poisoned: &ParameterVector,
    epsilon: f64,
    tau: f64,
) -> Result<ConstraintCheck> {
    if !clean.same_layout(poisoned) {
        return Err(Error::Layout(
            "clean and poisoned parameter layouts differ".into(),
        ));
    }
    let delta_norm = clean
        .values()
        .iter()
        .zip(poisoned.values())
        .map(|(c, p)| (p - c) * (p - c))
        .sum::<f64>()
        .sqrt();
    let (mc, sc) = clean.mean_sd();
    let (mp, sp) = poisoned.mean_sd();
    let stats_distance = ((mp - mc).powi(2) + (sp - sc).powi(2)).sqrt();
    Ok(ConstraintCheck {
        delta_norm,
        stats_distance,
        norm_ok: delta_norm <= epsilon,
        stats_ok: stats_distance <= tau,
    })
}
