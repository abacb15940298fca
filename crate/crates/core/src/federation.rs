//! The coordinator: random client selection, parameter averaging, and
//! the batch-level training loop.
//!
//! Every batch, each client takes one SGD step on its own feature
//! slice, poisoned clients rescale their parameters, the server
//! averages the parameters of a freshly drawn client subset, and the
//! result is broadcast to everyone. Selection gates only the
//! aggregation; all clients keep training and all receive the average.

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{self, AttackConfig, ConstraintCheck, PoisonedSet};
use crate::data::{TabularDataset, VerticalPartition};
use crate::error::{Error, Result};
use crate::model::{
    init_params, loss_and_grad, sgd_step, AutoencoderShape, LossReport, ParameterVector,
};
use crate::seeds::derive_seed;

/// Uniform random selection of `m` clients per round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub r_l: f64,
    pub m: usize,
    pub seed: u64,
}

impl SelectionPolicy {
    /// `m = max(1, round(k * r_l))`, so a ratio of 0.2 over 8 clients
    /// selects 2 per round.
    pub fn new(k: usize, r_l: f64, seed: u64) -> Result<Self> {
        if k < 1 {
            return Err(Error::Config("client count must be >= 1".into()));
        }
        if !(r_l > 0.0 && r_l <= 1.0) {
            return Err(Error::Config(format!(
                "selection ratio r_l must be in (0, 1], got {r_l}"
            )));
        }
        let m = ((k as f64 * r_l).round() as usize).clamp(1, k);
        Ok(Self { r_l, m, seed })
    }
}

/// Draw the round-`t` subset: `m` clients without replacement, a fresh
/// deterministic draw per (seed, t).
pub fn select_clients(k: usize, policy: &SelectionPolicy, t: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(policy.seed, "round", t));
    let mut chosen = rand::seq::index::sample(&mut rng, k, policy.m.min(k)).into_vec();
    chosen.sort_unstable();
    chosen
}

/// Coordinate-wise arithmetic mean of the given parameter vectors. Any
/// diverged input flags the aggregate diverged.
///
/// Each coordinate's addends are summed in a canonical order, so the
/// result is exactly invariant to the order in which updates arrive.
pub fn aggregate(updates: &[&ParameterVector]) -> Result<ParameterVector> {
    let Some(first) = updates.first() else {
        return Err(Error::Config("cannot aggregate an empty update set".into()));
    };
    for u in updates {
        if !first.same_layout(u) {
            return Err(Error::Layout(
                "aggregation inputs have differing layouts".into(),
            ));
        }
    }
    let inv = 1.0 / updates.len() as f64;
    let mut addends = vec![0.0; updates.len()];
    let values: Vec<f64> = (0..first.len())
        .map(|i| {
            for (slot, u) in addends.iter_mut().zip(updates) {
                *slot = u.values()[i];
            }
            addends.sort_unstable_by(f64::total_cmp);
            addends.iter().sum::<f64>() * inv
        })
        .collect();
    let mut out = ParameterVector::new(values, first.layout_arc())?;
    if updates.iter().any(|u| u.diverged()) {
        out.set_diverged(true);
    }
    out.refresh_divergence();
    Ok(out)
}

/// Independent seeds for each random stream of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSeeds {
    pub init: u64,
    pub select: u64,
    pub poison: u64,
    pub mask: u64,
}

/// Who adopts the aggregated parameters after each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BroadcastPolicy {
    /// Every client receives the aggregate each round.
    All,
    /// Only the selected clients receive it; the rest keep training
    /// their local parameters until their next selection.
    SelectedOnly,
}

/// Everything the training loop needs for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub k: usize,
    pub r_l: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub lambda: f64,
    pub temperature: f64,
    pub attack: AttackConfig,
    pub shape: AutoencoderShape,
    pub seeds: StreamSeeds,
    pub broadcast: BroadcastPolicy,
    /// Keep a copy of the global parameters every this many rounds.
    pub checkpoint_every: Option<usize>,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Config(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.lambda > 0.0 && !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        self.attack.validate()?;
        self.shape.validate()?;
        SelectionPolicy::new(self.k, self.r_l, self.seeds.select)?;
        Ok(())
    }
}

/// What happened in one aggregation round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub t: usize,
    pub selected: Vec<usize>,
    pub poisoned_selected: Vec<usize>,
    pub client_losses: Vec<LossReport>,
    /// Whether each client's parameters were diverged this round.
    pub client_diverged: Vec<bool>,
    pub agg_norm: f64,
    pub diverged: bool,
}

/// One poisoned client's detectability telemetry at one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackTelemetryRow {
    pub t: usize,
    pub client: usize,
    pub check: ConstraintCheck,
}

/// Complete record of one federated run.
#[derive(Debug, Clone)]
pub struct FederatedRun {
    pub k: usize,
    pub batches_per_epoch: usize,
    pub epochs: usize,
    pub poisoned: PoisonedSet,
    pub traces: Vec<RoundTrace>,
    pub final_client_params: Vec<ParameterVector>,
    pub global: ParameterVector,
    pub ever_diverged: Vec<bool>,
    pub checkpoints: Vec<(usize, ParameterVector)>,
    pub attack_telemetry: Vec<AttackTelemetryRow>,
}

impl FederatedRun {
    pub fn rounds(&self) -> usize {
        self.traces.len()
    }

    /// Mean reconstruction loss per client over the final epoch's rounds.
    pub fn final_epoch_mean_recon(&self) -> Vec<f64> {
        let last = self.traces.len() - self.batches_per_epoch;
        let mut sums = vec![0.0; self.k];
        for trace in &self.traces[last..] {
            for (s, report) in sums.iter_mut().zip(&trace.client_losses) {
                *s += report.reconstruction;
            }
        }
        sums.iter()
            .map(|s| s / self.batches_per_epoch as f64)
            .collect()
    }
}

/// Zero-padded per-client feature matrices, all of the partition's
/// maximum slice width so every client shares one model layout.
fn client_matrices(
    ds: &TabularDataset,
    partition: &VerticalPartition,
) -> Vec<Array2<f64>> {
    let n = ds.n_rows();
    let width = partition.max_width();
    partition
        .assignments()
        .iter()
        .map(|cols| {
            let mut m = Array2::<f64>::zeros((n, width));
            for (slot, &col) in cols.iter().enumerate() {
                m.column_mut(slot).assign(&ds.column(col));
            }
            m
        })
        .collect()
}

/// Run the full training loop: local step per client per batch,
/// poisoned rescaling, aggregation over a random subset, broadcast.
/// Divergence is recorded, never fatal.
pub fn run_federated(
    spec: &RunSpec,
    ds: &TabularDataset,
    partition: &VerticalPartition,
) -> Result<FederatedRun> {
    spec.validate()?;
    if partition.n_clients() != spec.k {
        return Err(Error::Config(format!(
            "partition has {} clients but spec.k = {}",
            partition.n_clients(),
            spec.k
        )));
    }
    if spec.shape.input_dim != partition.max_width() {
        return Err(Error::Config(format!(
            "model input width {} does not match the widest client slice {}",
            spec.shape.input_dim,
            partition.max_width()
        )));
    }

    let n = ds.n_rows();
    let batches_per_epoch = n.div_ceil(spec.batch_size);
    let data = client_matrices(ds, partition);
    let poisoned = attack::choose_poisoned(spec.k, spec.attack.p_c, spec.attack.seed)?;
    let policy = SelectionPolicy::new(spec.k, spec.r_l, spec.seeds.select)?;

    let mut global = init_params(&spec.shape, spec.seeds.init)?;
    let mut clients: Vec<ParameterVector> = vec![global.clone(); spec.k];
    let mut ever_diverged = vec![false; spec.k];

    let mut traces = Vec::with_capacity(spec.epochs * batches_per_epoch);
    let mut checkpoints = Vec::new();
    let mut attack_telemetry = Vec::new();

    let mut t: usize = 0;
    for _epoch in 0..spec.epochs {
        for b in 0..batches_per_epoch {
            let row_start = b * spec.batch_size;
            let row_end = n.min(row_start + spec.batch_size);
            // A singleton tail batch cannot form contrastive pairs;
            // train it on reconstruction alone.
            let lambda = if row_end - row_start >= 2 { spec.lambda } else { 0.0 };
            let mask_seed = derive_seed(spec.seeds.mask, "round", t as u64);

            let mut client_losses = Vec::with_capacity(spec.k);
            let mut client_diverged = Vec::with_capacity(spec.k);
            for c in 0..spec.k {
                if clients[c].diverged() {
                    client_losses.push(LossReport::diverged_report(lambda));
                    client_diverged.push(true);
                    ever_diverged[c] = true;
                    continue;
                }
                let batch = data[c].slice(s![row_start..row_end, ..]).to_owned();
                let (report, grad) =
                    loss_and_grad(&clients[c], &batch, lambda, spec.temperature, mask_seed)?;
                if report.diverged {
                    clients[c].set_diverged(true);
                    ever_diverged[c] = true;
                    client_losses.push(report);
                    client_diverged.push(true);
                    continue;
                }
                clients[c] = sgd_step(&clients[c], &grad, spec.eta)?;
                if clients[c].diverged() {
                    ever_diverged[c] = true;
                }
                client_losses.push(report);
                client_diverged.push(clients[c].diverged());
            }

            // Poisoning happens after the local update, before the
            // server sees anything.
            for &p in poisoned.members() {
                if clients[p].diverged() {
                    continue;
                }
                let clean = clients[p].clone();
                clients[p] = attack::scale_attack(&clean, spec.attack.p_l);
                if clients[p].diverged() {
                    ever_diverged[p] = true;
                    client_diverged[p] = true;
                }
                let check = attack::check_constraints(
                    &clean,
                    &clients[p],
                    spec.attack.epsilon,
                    spec.attack.tau,
                )?;
                attack_telemetry.push(AttackTelemetryRow { t, client: p, check });
            }

            let selected = select_clients(spec.k, &policy, t as u64);
            let poisoned_selected: Vec<usize> = selected
                .iter()
                .copied()
                .filter(|&c| poisoned.contains(c))
                .collect();
            let update_refs: Vec<&ParameterVector> =
                selected.iter().map(|&c| &clients[c]).collect();
            global = aggregate(&update_refs)?;
            let agg_norm = global.l2_norm();
            let agg_diverged = global.diverged();

            match spec.broadcast {
                BroadcastPolicy::All => {
                    for (c, client) in clients.iter_mut().enumerate() {
                        *client = global.clone();
                        if agg_diverged {
                            ever_diverged[c] = true;
                        }
                    }
                }
                BroadcastPolicy::SelectedOnly => {
                    for &c in &selected {
                        clients[c] = global.clone();
                        if agg_diverged {
                            ever_diverged[c] = true;
                        }
                    }
                }
            }

            traces.push(RoundTrace {
                t,
                selected,
                poisoned_selected,
                client_losses,
                client_diverged,
                agg_norm,
                diverged: agg_diverged,
            });
            if let Some(every) = spec.checkpoint_every {
                if every > 0 && t % every == 0 {
                    checkpoints.push((t, global.clone()));
                }
            }
            t += 1;
        }
    }

    Ok(FederatedRun {
        k: spec.k,
        batches_per_epoch,
        epochs: spec.epochs,
        poisoned,
        traces,
        final_client_params: clients,
        global,
        ever_diverged,
        checkpoints,
        attack_telemetry,
    })
}

/// Bitmask of selected clients, bit `k` set when client `k` is in S_t.
pub fn selection_bitmask(selected: &[usize]) -> u64 {
    selected.iter().fold(0u64, |mask, &c| mask | (1u64 << c))
}
