//! Experiment configuration, execution, and persistence.
//!
//! One [`ExperimentConfig`] describes a grid cell: attack and selection
//! parameters, training hyperparameters, and the dataset. Running a
//! cell produces a results directory `<out>/<cell_id>/` holding the
//! round trace, attack telemetry, checkpoints, and a deterministic
//! `report.json`; a grid run adds a `manifest.json` over all cells.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::bounds::{self, ExposureCheck};
use crate::data::{self, SyntheticSpec, TabularDataset, VerticalPartition};
use crate::error::{Error, Result};
use crate::federation::{
    run_federated, selection_bitmask, BroadcastPolicy, FederatedRun, RunSpec, StreamSeeds,
};
use crate::metrics::{classify_failures, CellOutcome, FailureRule};
use crate::model::AutoencoderShape;
use crate::seeds::derive_seed;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn default_k() -> usize {
    8
}
fn default_p_l() -> f64 {
    1.0
}
fn default_r_l() -> f64 {
    1.0
}
fn default_epochs() -> usize {
    5
}
fn default_batch_size() -> usize {
    32
}
fn default_eta() -> f64 {
    0.05
}
fn default_lambda() -> f64 {
    0.1
}
fn default_temperature() -> f64 {
    0.5
}
fn default_kappa() -> f64 {
    1.5
}
fn default_master_seed() -> u64 {
    42
}
fn default_inf() -> f64 {
    f64::INFINITY
}
fn default_delimiter() -> String {
    ",".into()
}
fn default_broadcast() -> BroadcastPolicy {
    BroadcastPolicy::All
}

/// Where a cell's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic {
        rows: usize,
        cols: usize,
        latent_rank: usize,
        noise_sd: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_column: Option<String>,
        #[serde(default = "default_delimiter")]
        delimiter: String,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            rows: 100,
            cols: 16,
            latent_rank: 4,
            noise_sd: 0.05,
        }
    }
}

impl DatasetSpec {
    /// A short label for grouping table rows.
    pub fn label(&self) -> String {
        match self {
            DatasetSpec::Synthetic {
                rows,
                cols,
                latent_rank,
                ..
            } => format!("synthetic-{rows}x{cols}-r{latent_rank}"),
            DatasetSpec::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into()),
        }
    }

    pub fn load(&self, data_seed: u64) -> Result<TabularDataset> {
        let ds = match self {
            DatasetSpec::Synthetic {
                rows,
                cols,
                latent_rank,
                noise_sd,
            } => data::synthesize(&SyntheticSpec {
                rows: *rows,
                cols: *cols,
                latent_rank: *latent_rank,
                noise_sd: *noise_sd,
                seed: data_seed,
            })?,
            DatasetSpec::Csv {
                path,
                label_column,
                delimiter,
            } => {
                let delim = delimiter.as_bytes().first().copied().ok_or_else(|| {
                    Error::Config("delimiter must be a single character".into())
                })?;
                data::load_csv(path, label_column.as_deref(), delim)?
            }
        };
        Ok(data::normalize(&ds))
    }
}

/// Optional overrides of the shared autoencoder stack.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub hidden_dims: Option<Vec<usize>>,
    #[serde(default)]
    pub latent_dim: Option<usize>,
}

impl ModelSpec {
    pub fn shape_for(&self, input_dim: usize) -> AutoencoderShape {
        let mut shape = AutoencoderShape::with_defaults(input_dim);
        if let Some(h) = &self.hidden_dims {
            shape.hidden_dims = h.clone();
        }
        if let Some(l) = self.latent_dim {
            shape.latent_dim = l;
        }
        shape
    }
}

/// One cell of the experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub p_c: f64,
    #[serde(default = "default_p_l")]
    pub p_l: f64,
    #[serde(default = "default_r_l")]
    pub r_l: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    #[serde(default = "default_inf", with = "maybe_infinite")]
    pub epsilon: f64,
    #[serde(default = "default_inf", with = "maybe_infinite")]
    pub tau: f64,
    /// Who adopts the aggregate each round: every client, or only the
    /// selected ones (the rest keep their local parameters).
    #[serde(default = "default_broadcast")]
    pub broadcast: BroadcastPolicy,
    /// Checkpoint the global parameters every this many rounds; 0 = off.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    /// Sweep definition used by the `grid` subcommand; single-cell runs
    /// ignore it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize from empty config")
    }
}

/// Seeds of every random stream, all derived from the master seed.
/// Cells sharing a master seed share data, initialization, selection,
/// and poisoned-set draws, which keeps attack settings comparable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedSeeds {
    pub data: u64,
    pub partition: u64,
    pub init: u64,
    pub select: u64,
    pub poison: u64,
    pub mask: u64,
}

impl DerivedSeeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            data: derive_seed(master, "data", 0),
            partition: derive_seed(master, "partition", 0),
            init: derive_seed(master, "init", 0),
            select: derive_seed(master, "select", 0),
            poison: derive_seed(master, "poison", 0),
            mask: derive_seed(master, "mask", 0),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.p_c) {
            return Err(Error::Config(format!("p_c must be in [0, 1], got {}", self.p_c)));
        }
        if !(self.p_l > 0.0) {
            return Err(Error::Config(format!("p_l must be > 0, got {}", self.p_l)));
        }
        if !(self.r_l > 0.0 && self.r_l <= 1.0) {
            return Err(Error::Config(format!(
                "r_l must be in (0, 1], got {}",
                self.r_l
            )));
        }
        if !(self.kappa > 1.0) {
            return Err(Error::Config(format!(
                "kappa must be > 1, got {}",
                self.kappa
            )));
        }
        if let DatasetSpec::Synthetic { rows, cols, .. } = &self.dataset {
            if *cols < self.k {
                return Err(Error::Config(format!(
                    "dataset has fewer columns than clients (d={cols} < k={}); every client needs at least one column",
                    self.k
                )));
            }
            if *rows < 1 {
                return Err(Error::Config("dataset needs at least one row".into()));
            }
        }
        Ok(())
    }

    /// Stable identifier used for the results subdirectory.
    pub fn cell_id(&self) -> String {
        format!(
            "k{}_pc{}_pl{}_rl{}_seed{}",
            self.k, self.p_c, self.p_l, self.r_l, self.master_seed
        )
    }

    pub fn seeds(&self) -> DerivedSeeds {
        DerivedSeeds::from_master(self.master_seed)
    }

    fn attack(&self, seeds: &DerivedSeeds) -> AttackConfig {
        AttackConfig {
            p_c: self.p_c,
            p_l: self.p_l,
            epsilon: self.epsilon,
            tau: self.tau,
            seed: seeds.poison,
        }
    }

    fn run_spec(&self, seeds: &DerivedSeeds, width: usize) -> RunSpec {
        RunSpec {
            k: self.k,
            r_l: self.r_l,
            epochs: self.epochs,
            batch_size: self.batch_size,
            eta: self.eta,
            lambda: self.lambda,
            temperature: self.temperature,
            attack: self.attack(seeds),
            shape: self.model.shape_for(width),
            seeds: StreamSeeds {
                init: seeds.init,
                select: seeds.select,
                poison: seeds.poison,
                mask: seeds.mask,
            },
            broadcast: self.broadcast,
            checkpoint_every: if self.checkpoint_every > 0 {
                Some(self.checkpoint_every)
            } else {
                None
            },
        }
    }

    fn is_control(&self) -> bool {
        self.p_c == 0.0 && self.p_l == 1.0 && self.r_l == 1.0
    }

    /// The matched control: no poisoning, identity scale, full
    /// participation, same seeds.
    pub fn control(&self) -> ExperimentConfig {
        ExperimentConfig {
            p_c: 0.0,
            p_l: 1.0,
            r_l: 1.0,
            ..self.clone()
        }
    }
}

mod maybe_infinite {
    //! Detection bounds default to infinity, which neither JSON nor
    //! every TOML writer can hold as a number; non-finite values
    //! serialize as the string "inf"/"-inf" and parse back from either
    //! a number or a string.
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum NumOrStr {
            Num(f64),
            Str(String),
        }
        match NumOrStr::deserialize(d)? {
            NumOrStr::Num(n) => Ok(n),
            NumOrStr::Str(s) => s
                .parse::<f64>()
                .map_err(|_| serde::de::Error::custom(format!("not a number: '{s}'"))),
        }
    }
}

mod nullable_floats {
    //! JSON cannot hold non-finite floats; diverged losses serialize as
    //! null and read back as NaN.
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opts: Vec<Option<f64>> = v
            .iter()
            .map(|x| if x.is_finite() { Some(*x) } else { None })
            .collect();
        opts.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opts: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opts.into_iter().map(|o| o.unwrap_or(f64::NAN)).collect())
    }
}

/// Outcome of one cell, written as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub cell_id: String,
    pub config: ExperimentConfig,
    pub seeds: DerivedSeeds,
    pub client_failed: Vec<bool>,
    pub failure_percentage: f64,
    #[serde(with = "nullable_floats")]
    pub final_losses: Vec<f64>,
    #[serde(with = "nullable_floats")]
    pub control_final_losses: Vec<f64>,
    pub diverged_clients: Vec<bool>,
    pub attack_exposure: ExposureCheck,
    pub rounds: usize,
    /// Wall time is non-deterministic, so it lives in `timing.json`
    /// next to the report instead of inside it.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl ExperimentReport {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_outcome(&self) -> CellOutcome {
        CellOutcome {
            dataset: self.config.dataset.label(),
            p_c: self.config.p_c,
            p_l: self.config.p_l,
            r_l: self.config.r_l,
            master_seed: self.config.master_seed,
            client_failed: self.client_failed.clone(),
            final_losses: self.final_losses.clone(),
        }
    }
}

/// Write `content` to `path` atomically: temp file in the same
/// directory, then rename.
pub fn write_atomic(path: &Path, content: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Render the per-round trace in the pinned column order. One row per
/// (round, client).
pub fn trace_csv(run: &FederatedRun) -> String {
    let mut out =
        String::from("t,selected_bitmask,poisoned_selected_count,client_id,loss_recon,loss_cont,agg_norm,diverged\n");
    for trace in &run.traces {
        let mask = selection_bitmask(&trace.selected);
        for c in 0..run.k {
            let report = &trace.client_losses[c];
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                trace.t,
                mask,
                trace.poisoned_selected.len(),
                c,
                report.reconstruction,
                report.contrastive,
                trace.agg_norm,
                u8::from(trace.client_diverged[c]),
            ));
        }
    }
    out
}

/// Render the attack telemetry rows.
pub fn attack_csv(run: &FederatedRun) -> String {
    let mut out = String::from("t,client,delta_norm,stats_distance,norm_ok,stats_ok\n");
    for row in &run.attack_telemetry {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.t,
            row.client,
            row.check.delta_norm,
            row.check.stats_distance,
            row.check.norm_ok,
            row.check.stats_ok
        ));
    }
    out
}

/// Everything produced by one cell execution, before persistence.
pub struct CellExecution {
    pub report: ExperimentReport,
    pub run: FederatedRun,
    pub control: FederatedRun,
}

/// Run one cell in memory: data prep, partition, the attacked run, the
/// matched control, and failure classification.
pub fn execute_cell(config: &ExperimentConfig) -> Result<CellExecution> {
    config.validate()?;
    let started = Instant::now();
    let seeds = config.seeds();
    let ds = config.dataset.load(seeds.data)?;
    let partition: VerticalPartition = data::partition_vertical(&ds, config.k, seeds.partition)?;
    let width = partition.max_width();

    let spec = config.run_spec(&seeds, width);
    let run = run_federated(&spec, &ds, &partition)?;
    let control = if config.is_control() {
        run.clone()
    } else {
        let control_spec = config.control().run_spec(&seeds, width);
        run_federated(&control_spec, &ds, &partition)?
    };

    let rule = FailureRule {
        kappa: config.kappa,
        divergence_fails: true,
    };
    let failures = classify_failures(&run, &control, &rule)?;
    let exposure = bounds::attack_bound_check(
        &bounds::selection_rounds(&run),
        config.k,
        config.p_c,
        config.r_l,
    )?;

    let report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        cell_id: config.cell_id(),
        config: config.clone(),
        seeds,
        client_failed: failures.failed,
        failure_percentage: failures.failure_percentage,
        final_losses: failures.final_losses,
        control_final_losses: failures.control_final_losses,
        diverged_clients: failures.diverged,
        attack_exposure: exposure,
        rounds: run.rounds(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok(CellExecution {
        report,
        run,
        control,
    })
}

/// Run one cell and persist its artifacts under `<out>/<cell_id>/`.
/// The report is written last and atomically, so a finished directory
/// always holds a complete report.
pub fn run_single(config: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    let execution = execute_cell(config)?;
    let cell_dir = out.join(config.cell_id());
    std::fs::create_dir_all(&cell_dir)?;

    write_atomic(
        &cell_dir.join("trace.csv"),
        trace_csv(&execution.run).as_bytes(),
    )?;
    write_atomic(
        &cell_dir.join("attack.csv"),
        attack_csv(&execution.run).as_bytes(),
    )?;
    if !execution.run.checkpoints.is_empty() {
        let ckpt_dir = cell_dir.join("checkpoints");
        std::fs::create_dir_all(&ckpt_dir)?;
        for (t, params) in &execution.run.checkpoints {
            params.write_file(&ckpt_dir.join(format!("round_{t:06}.params")))?;
        }
    }
    let json = serde_json::to_string_pretty(&execution.report)?;
    write_atomic(&cell_dir.join("report.json"), json.as_bytes())?;
    // Timing is observability, not part of the deterministic artifact.
    let timing = format!("{{\"wall_time_s\": {}}}\n", execution.report.wall_time_s);
    std::fs::write(cell_dir.join("timing.json"), timing)?;
    Ok(execution.report)
}

/// Value lists for a sweep. A preset replaces the explicit lists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub p_c: Option<Vec<f64>>,
    #[serde(default)]
    pub p_l: Option<Vec<f64>>,
    #[serde(default)]
    pub r_l: Option<Vec<f64>>,
    #[serde(default)]
    pub master_seeds: Option<Vec<u64>>,
}

/// The default 19-cell reconstruction: one clean control plus the full
/// cross of the published attack values p_c in {0.2, 0.5}, p_l in
/// {0.1, 0.5, 2}, r_l in {1, 0.2, 0.8}. The composition is recorded in
/// the manifest; identity-scale (p_l = 1) columns can be added with an
/// explicit grid.
pub const PAPER19_COMPOSITION: &str =
    "control (p_c=0, p_l=1, r_l=1) + {0.2,0.5} x {0.1,0.5,2} x {1,0.2,0.8}";

fn paper19_cells(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let mut cells = Vec::with_capacity(19);
    let mut push = |p_c: f64, p_l: f64, r_l: f64| {
        cells.push(ExperimentConfig {
            p_c,
            p_l,
            r_l,
            ..base.clone()
        });
    };
    push(0.0, 1.0, 1.0);
    for &p_c in &[0.2, 0.5] {
        for &p_l in &[0.1, 0.5, 2.0] {
            for &r_l in &[1.0, 0.2, 0.8] {
                push(p_c, p_l, r_l);
            }
        }
    }
    cells
}

/// Expand a grid spec into concrete cells (cross product, outer product
/// over master seeds).
pub fn grid_cells(base: &ExperimentConfig, grid: &GridSpec) -> Result<Vec<ExperimentConfig>> {
    let seeds = grid
        .master_seeds
        .clone()
        .unwrap_or_else(|| vec![base.master_seed]);
    if seeds.is_empty() {
        return Err(Error::Config("master_seeds must not be empty".into()));
    }

    let per_seed: Vec<ExperimentConfig> = match grid.preset.as_deref() {
        Some("paper19") => {
            if grid.p_c.is_some() || grid.p_l.is_some() || grid.r_l.is_some() {
                return Err(Error::Config(
                    "preset and explicit value lists are mutually exclusive".into(),
                ));
            }
            paper19_cells(base)
        }
        Some(other) => {
            return Err(Error::Config(format!("unknown grid preset '{other}'")));
        }
        None => {
            let p_cs = grid.p_c.clone().unwrap_or_else(|| vec![base.p_c]);
            let p_ls = grid.p_l.clone().unwrap_or_else(|| vec![base.p_l]);
            let r_ls = grid.r_l.clone().unwrap_or_else(|| vec![base.r_l]);
            if p_cs.is_empty() || p_ls.is_empty() || r_ls.is_empty() {
                return Err(Error::Config("grid value lists must not be empty".into()));
            }
            let mut cells = Vec::new();
            for &p_c in &p_cs {
                for &p_l in &p_ls {
                    for &r_l in &r_ls {
                        cells.push(ExperimentConfig {
                            p_c,
                            p_l,
                            r_l,
                            ..base.clone()
                        });
                    }
                }
            }
            cells
        }
    };

    let mut cells = Vec::with_capacity(per_seed.len() * seeds.len());
    for &seed in &seeds {
        for cell in &per_seed {
            cells.push(ExperimentConfig {
                master_seed: seed,
                ..cell.clone()
            });
        }
    }
    Ok(cells)
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub cell_id: String,
    pub p_c: f64,
    pub p_l: f64,
    pub r_l: f64,
    pub master_seed: u64,
    pub seeds: DerivedSeeds,
    pub status: String,
    pub report: Option<String>,
}

/// Grid-level index of all cells and their seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub preset: Option<String>,
    pub composition: Option<String>,
    pub base: ExperimentConfig,
    pub cells: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Run every cell of the grid (in parallel up to `workers` threads),
/// persist per-cell artifacts, and write a manifest. Per-cell failures
/// are recorded and do not stop the sweep.
pub fn run_grid(
    base: &ExperimentConfig,
    grid: &GridSpec,
    out: &Path,
    workers: Option<usize>,
) -> Result<Manifest> {
    let cells = grid_cells(base, grid)?;
    for cell in &cells {
        cell.validate()?;
    }
    std::fs::create_dir_all(out)?;

    let execute = |cell: &ExperimentConfig| -> (ExperimentConfig, std::result::Result<ExperimentReport, String>) {
        (cell.clone(), run_single(cell, out).map_err(|e| e.to_string()))
    };
    let mut results: Vec<(ExperimentConfig, std::result::Result<ExperimentReport, String>)> =
        if let Some(n) = workers {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            pool.install(|| {
                use rayon::prelude::*;
                cells.par_iter().map(execute).collect()
            })
        } else {
            use rayon::prelude::*;
            cells.par_iter().map(execute).collect()
        };
    results.sort_by(|a, b| a.0.cell_id().cmp(&b.0.cell_id()));

    let entries: Vec<ManifestEntry> = results
        .iter()
        .map(|(cell, outcome)| ManifestEntry {
            cell_id: cell.cell_id(),
            p_c: cell.p_c,
            p_l: cell.p_l,
            r_l: cell.r_l,
            master_seed: cell.master_seed,
            seeds: cell.seeds(),
            status: match outcome {
                Ok(_) => "ok".into(),
                Err(e) => format!("error: {e}"),
            },
            report: outcome
                .as_ref()
                .ok()
                .map(|r| format!("{}/report.json", r.cell_id)),
        })
        .collect();

    let manifest = Manifest {
        schema_version: REPORT_SCHEMA_VERSION,
        preset: grid.preset.clone(),
        composition: grid
            .preset
            .as_deref()
            .and_then(|p| (p == "paper19").then(|| PAPER19_COMPOSITION.to_string())),
        base: base.clone(),
        cells: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&out.join("manifest.json"), json.as_bytes())?;
    Ok(manifest)
}

/// Load every completed cell report referenced by a results directory's
/// manifest.
pub fn load_outcomes(results_dir: &Path) -> Result<Vec<ExperimentReport>> {
    let manifest = Manifest::read(&results_dir.join("manifest.json"))?;
    let mut reports = Vec::new();
    for entry in &manifest.cells {
        if let Some(rel) = &entry.report {
            reports.push(ExperimentReport::read(&results_dir.join(rel))?);
        }
    }
    Ok(reports)
}

/// Output format for the report builder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Build failure tables (both poolings) and the stability summary from
/// a results directory, writing them next to the manifest. Returns the
/// paths written. An insufficient-run stability summary is skipped and
/// reported in the second element rather than failing the tables.
pub fn write_report_files(
    results_dir: &Path,
    format: OutputFormat,
) -> Result<(Vec<PathBuf>, Option<String>)> {
    use crate::metrics::{failure_table, stability_summary, stability_to_csv, GroupParam, Pooling};

    let reports = load_outcomes(results_dir)?;
    if reports.is_empty() {
        return Err(Error::Config(format!(
            "no completed cells in {}",
            results_dir.display()
        )));
    }
    let outcomes: Vec<CellOutcome> = reports.iter().map(|r| r.to_outcome()).collect();

    let mut written = Vec::new();
    for param in [GroupParam::Pc, GroupParam::Pl, GroupParam::Rl] {
        for (pooling, suffix) in [
            (Pooling::PerClientRun, ""),
            (Pooling::PerExperiment, "_per_experiment"),
        ] {
            let table = failure_table(&outcomes, param, pooling)?;
            let stem = format!("failure_table_{}{}", param.file_stem(), suffix);
            match format {
                OutputFormat::Csv => {
                    let path = results_dir.join(format!("{stem}.csv"));
                    write_atomic(&path, table.to_csv().as_bytes())?;
                    written.push(path);
                }
                OutputFormat::Json => {
                    let path = results_dir.join(format!("{stem}.json"));
                    write_atomic(&path, serde_json::to_string_pretty(&table)?.as_bytes())?;
                    written.push(path);
                }
            }
        }
    }

    let mut stability_note = None;
    match stability_summary(&outcomes) {
        Ok(rows) => match format {
            OutputFormat::Csv => {
                let path = results_dir.join("stability.csv");
                write_atomic(&path, stability_to_csv(&rows).as_bytes())?;
                written.push(path);
            }
            OutputFormat::Json => {
                let path = results_dir.join("stability.json");
                write_atomic(&path, serde_json::to_string_pretty(&rows)?.as_bytes())?;
                written.push(path);
            }
        },
        Err(e) => stability_note = Some(e.to_string()),
    }
    Ok((written, stability_note))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast_config() -> ExperimentConfig {
        ExperimentConfig {
            k: 4,
            epochs: 2,
            batch_size: 16,
            dataset: DatasetSpec::Synthetic {
                rows: 32,
                cols: 8,
                latent_rank: 2,
                noise_sd: 0.3,
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn defaults_parse_from_empty_toml() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.k, 8);
        assert_eq!(cfg.p_l, 1.0);
        assert_eq!(cfg.batch_size, 32);
        assert!(cfg.epsilon.is_infinite());
        cfg.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = fast_config();
        let text = toml::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml_str("bogus_key = 3").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn validation_names_the_violated_precondition() {
        let cfg = ExperimentConfig {
            k: 20,
            ..fast_config()
        };
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("fewer columns than clients"));
    }

    #[test]
    fn cell_id_is_stable() {
        let cfg = ExperimentConfig {
            p_c: 0.2,
            p_l: 0.1,
            r_l: 0.2,
            ..fast_config()
        };
        assert_eq!(cfg.cell_id(), "k4_pc0.2_pl0.1_rl0.2_seed42");
    }

    #[test]
    fn control_cell_reports_zero_failures() {
        let report = execute_cell(&fast_config()).unwrap().report;
        assert_eq!(report.failure_percentage, 0.0);
        assert!(report.client_failed.iter().all(|&f| !f));
    }

    #[test]
    fn worked_example_cell_produces_report_with_two_selected() {
        let cfg = ExperimentConfig {
            k: 8,
            p_c: 0.2,
            p_l: 0.1,
            r_l: 0.2,
            dataset: DatasetSpec::Synthetic {
                rows: 32,
                cols: 16,
                latent_rank: 4,
                noise_sd: 0.3,
            },
            epochs: 2,
            ..ExperimentConfig::default()
        };
        let execution = execute_cell(&cfg).unwrap();
        for trace in &execution.run.traces {
            assert_eq!(trace.selected.len(), 2);
        }
        assert_eq!(execution.report.rounds, 2 * 1);
    }

    #[test]
    fn run_single_writes_all_artifacts_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            p_c: 0.5,
            p_l: 0.5,
            r_l: 0.8,
            checkpoint_every: 2,
            ..fast_config()
        };
        let report_a = run_single(&cfg, dir.path()).unwrap();
        let cell = dir.path().join(cfg.cell_id());
        let trace_a = std::fs::read(cell.join("trace.csv")).unwrap();
        let json_a = std::fs::read(cell.join("report.json")).unwrap();
        assert!(cell.join("attack.csv").exists());
        assert!(cell.join("checkpoints").join("round_000000.params").exists());

        let report_b = run_single(&cfg, dir.path()).unwrap();
        let trace_b = std::fs::read(cell.join("trace.csv")).unwrap();
        let json_b = std::fs::read(cell.join("report.json")).unwrap();
        assert_eq!(trace_a, trace_b, "trace.csv must be byte-identical");
        assert_eq!(json_a, json_b, "report.json must be byte-identical");
        assert_eq!(report_a.failure_percentage, report_b.failure_percentage);
    }

    #[test]
    fn report_json_round_trips_including_nonfinite_losses() {
        let mut report = execute_cell(&fast_config()).unwrap().report;
        report.final_losses[0] = f64::NAN;
        let json = serde_json::to_string(&report).unwrap();
        let back: ExperimentReport = serde_json::from_str(&json).unwrap();
        assert!(back.final_losses[0].is_nan());
        assert_eq!(back.final_losses[1], report.final_losses[1]);
    }

    #[test]
    fn paper19_preset_has_19_cells() {
        let grid = GridSpec {
            preset: Some("paper19".into()),
            ..GridSpec::default()
        };
        let cells = grid_cells(&fast_config(), &grid).unwrap();
        assert_eq!(cells.len(), 19);
        let controls = cells.iter().filter(|c| c.is_control()).count();
        assert_eq!(controls, 1);
        // All cells distinct.
        let mut ids: Vec<String> = cells.iter().map(|c| c.cell_id()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 19);
    }

    #[test]
    fn explicit_grid_is_a_cross_product() {
        let grid = GridSpec {
            p_c: Some(vec![0.0, 0.2, 0.5]),
            ..GridSpec::default()
        };
        let cells = grid_cells(&fast_config(), &grid).unwrap();
        assert_eq!(cells.len(), 3);

        let grid2 = GridSpec {
            p_c: Some(vec![0.2, 0.5]),
            r_l: Some(vec![0.2, 1.0]),
            master_seeds: Some(vec![1, 2, 3]),
            ..GridSpec::default()
        };
        assert_eq!(grid_cells(&fast_config(), &grid2).unwrap().len(), 12);
    }

    #[test]
    fn grid_writes_manifest_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec {
            p_c: Some(vec![0.0, 0.5]),
            ..GridSpec::default()
        };
        let manifest = run_grid(&fast_config(), &grid, dir.path(), Some(2)).unwrap();
        assert_eq!(manifest.cells.len(), 2);
        assert!(manifest.cells.iter().all(|c| c.status == "ok"));
        let outcomes = load_outcomes(dir.path()).unwrap();
        assert_eq!(outcomes.len(), 2);
    }

    #[test]
    fn grid_results_are_worker_count_independent() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let grid = GridSpec {
            p_c: Some(vec![0.0, 0.5]),
            p_l: Some(vec![0.5, 2.0]),
            ..GridSpec::default()
        };
        run_grid(&fast_config(), &grid, dir_a.path(), Some(1)).unwrap();
        run_grid(&fast_config(), &grid, dir_b.path(), Some(4)).unwrap();
        let manifest_a = std::fs::read(dir_a.path().join("manifest.json")).unwrap();
        let manifest_b = std::fs::read(dir_b.path().join("manifest.json")).unwrap();
        assert_eq!(manifest_a, manifest_b);
        for report in load_outcomes(dir_a.path()).unwrap() {
            let other = ExperimentReport::read(
                &dir_b.path().join(format!("{}/report.json", report.cell_id)),
            )
            .unwrap();
            assert_eq!(report, other);
        }
    }
}
