//! Failure classification and table statistics.
//!
//! A client counts as failed when it diverged, or when its final-epoch
//! mean reconstruction loss exceeds kappa times the same client's loss
//! in the matched control run (same seeds, no attack, full
//! participation). Tables pool failures across runs grouped by one
//! attack/selection parameter; the stability summary reports the mean
//! over settings of the cross-run standard deviation of final losses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::FederatedRun;

/// How a client is declared failed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureRule {
    /// Loss-ratio threshold against the matched control, > 1.
    pub kappa: f64,
    /// Whether divergence alone counts as failure.
    pub divergence_fails: bool,
}

impl Default for FailureRule {
    fn default() -> Self {
        Self {
            kappa: 1.5,
            divergence_fails: true,
        }
    }
}

impl FailureRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 1.0) {
            return Err(Error::Config(format!(
                "kappa must be > 1, got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// Per-client failure flags for one run against its control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub failed: Vec<bool>,
    pub failure_percentage: f64,
    pub final_losses: Vec<f64>,
    pub control_final_losses: Vec<f64>,
    pub diverged: Vec<bool>,
}

/// Classify each client of `run` against the matched `control` run.
pub fn classify_failures(
    run: &FederatedRun,
    control: &FederatedRun,
    rule: &FailureRule,
) -> Result<FailureReport> {
    rule.validate()?;
    if run.k != control.k {
        return Err(Error::Config(format!(
            "run has {} clients but control has {}",
            run.k, control.k
        )));
    }
    if run.rounds() != control.rounds() || run.batches_per_epoch != control.batches_per_epoch {
        return Err(Error::Config(
            "run and control must share epochs and batch schedule".into(),
        ));
    }

    let final_losses = run.final_epoch_mean_recon();
    let control_final_losses = control.final_epoch_mean_recon();
    let mut failed = Vec::with_capacity(run.k);
    for c in 0..run.k {
        let f = if run.ever_diverged[c] {
            rule.divergence_fails
        } else if !final_losses[c].is_finite() {
            true
        } else if !control_final_losses[c].is_finite() {
            false
        } else {
            final_losses[c] > rule.kappa * control_final_losses[c]
        };
        failed.push(f);
    }
    let failure_percentage =
        100.0 * failed.iter().filter(|&&f| f).count() as f64 / run.k as f64;
    Ok(FailureReport {
        failed,
        failure_percentage,
        final_losses,
        control_final_losses,
        diverged: run.ever_diverged.clone(),
    })
}

/// One completed experiment cell, reduced to what tables need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub dataset: String,
    pub p_c: f64,
    pub p_l: f64,
    pub r_l: f64,
    pub master_seed: u64,
    pub client_failed: Vec<bool>,
    pub final_losses: Vec<f64>,
}

impl CellOutcome {
    fn any_failed(&self) -> bool {
        self.client_failed.iter().any(|&f| f)
    }

    fn param(&self, p: GroupParam) -> f64 {
        match p {
            GroupParam::Pc => self.p_c,
            GroupParam::Pl => self.p_l,
            GroupParam::Rl => self.r_l,
        }
    }
}

/// Which attack/selection parameter a table groups by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupParam {
    Pc,
    Pl,
    Rl,
}

impl GroupParam {
    pub fn name(&self) -> &'static str {
        match self {
            GroupParam::Pc => "p_c",
            GroupParam::Pl => "p_l",
            GroupParam::Rl => "r_l",
        }
    }

    pub fn file_stem(&self) -> &'static str {
        match self {
            GroupParam::Pc => "pc",
            GroupParam::Pl => "pl",
            GroupParam::Rl => "rl",
        }
    }
}

/// How failures pool into a cell percentage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    /// failed client-runs / client-runs in the (dataset, value) group.
    PerClientRun,
    /// runs with any failed client in the group, over all of the
    /// dataset's runs in the whole collection.
    PerExperiment,
}

/// Failure percentages grouped by one parameter; rows are datasets,
/// columns the parameter's observed values. Absent cells stay `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureTable {
    pub param: GroupParam,
    pub pooling: Pooling,
    pub columns: Vec<f64>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

fn sorted_distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Build the failure table for one grouping parameter.
pub fn failure_table(
    outcomes: &[CellOutcome],
    param: GroupParam,
    pooling: Pooling,
) -> Result<FailureTable> {
    if outcomes.is_empty() {
        return Err(Error::Config("no outcomes to tabulate".into()));
    }
    let columns = sorted_distinct(outcomes.iter().map(|o| o.param(param)));
    let mut datasets: Vec<String> = outcomes.iter().map(|o| o.dataset.clone()).collect();
    datasets.sort();
    datasets.dedup();

    let mut rows = Vec::with_capacity(datasets.len());
    for dataset in datasets {
        let ds_outcomes: Vec<&CellOutcome> = outcomes
            .iter()
            .filter(|o| o.dataset == dataset)
            .collect();
        let ds_total_runs = ds_outcomes.len() as f64;
        let mut cells = Vec::with_capacity(columns.len());
        for &value in &columns {
            let group: Vec<&&CellOutcome> = ds_outcomes
                .iter()
                .filter(|o| o.param(param) == value)
                .collect();
            if group.is_empty() {
                cells.push(None);
                continue;
            }
            let cell = match pooling {
                Pooling::PerClientRun => {
                    let failed: usize = group
                        .iter()
                        .map(|o| o.client_failed.iter().filter(|&&f| f).count())
                        .sum();
                    let total: usize = group.iter().map(|o| o.client_failed.len()).sum();
                    100.0 * failed as f64 / total as f64
                }
                Pooling::PerExperiment => {
                    let failed_runs = group.iter().filter(|o| o.any_failed()).count();
                    100.0 * failed_runs as f64 / ds_total_runs
                }
            };
            cells.push(Some(cell));
        }
        rows.push((dataset, cells));
    }
    Ok(FailureTable {
        param,
        pooling,
        columns,
        rows,
    })
}

impl FailureTable {
    /// Render in the paper's table shape: one dataset per row, one
    /// column per parameter value, empty cells for absent combinations.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("dataset");
        for c in &self.columns {
            out.push_str(&format!(",{}", c));
        }
        out.push('\n');
        for (dataset, cells) in &self.rows {
            out.push_str(dataset);
            for cell in cells {
                match cell {
                    Some(v) => out.push_str(&format!(",{}", v)),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Total failed client-runs across all cells, for conservation
    /// checks across grouping parameters.
    pub fn total_failed_clients(outcomes: &[CellOutcome]) -> usize {
        outcomes
            .iter()
            .map(|o| o.client_failed.iter().filter(|&&f| f).count())
            .sum()
    }
}

/// Mean over settings of the cross-run sd of final losses, per dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub dataset: String,
    pub mu_std: f64,
    pub settings: usize,
    pub runs: usize,
}

/// Stability of surviving clients' final losses across runs. Runs with
/// r_l = 0.2 are excluded, failed clients are dropped from each run's
/// mean, and each (p_c, p_l, r_l) setting contributes the population sd
/// of its runs' mean losses.
pub fn stability_summary(outcomes: &[CellOutcome]) -> Result<Vec<StabilityRow>> {
    let kept: Vec<&CellOutcome> = outcomes
        .iter()
        .filter(|o| (o.r_l - 0.2).abs() > 1e-9)
        .collect();

    let mut datasets: Vec<String> = kept.iter().map(|o| o.dataset.clone()).collect();
    datasets.sort();
    datasets.dedup();

    let mut rows = Vec::new();
    for dataset in datasets {
        let ds: Vec<&&CellOutcome> = kept.iter().filter(|o| o.dataset == dataset).collect();
        if ds.len() < 2 {
            return Err(Error::Config(format!(
                "stability summary needs >= 2 runs per dataset after excluding r_l = 0.2; '{dataset}' has {}",
                ds.len()
            )));
        }
        // Group runs by attack/selection setting.
        let mut groups: BTreeMap<(u64, u64, u64), Vec<f64>> = BTreeMap::new();
        let mut used_runs = 0;
        for o in &ds {
            let survivors: Vec<f64> = o
                .final_losses
                .iter()
                .zip(&o.client_failed)
                .filter(|(loss, &failed)| !failed && loss.is_finite())
                .map(|(loss, _)| *loss)
                .collect();
            if survivors.is_empty() {
                continue;
            }
            let run_loss = survivors.iter().sum::<f64>() / survivors.len() as f64;
            let key = (o.p_c.to_bits(), o.p_l.to_bits(), o.r_l.to_bits());
            groups.entry(key).or_default().push(run_loss);
            used_runs += 1;
        }
        let sds: Vec<f64> = groups
            .values()
            .map(|losses| {
                let n = losses.len() as f64;
                let mean = losses.iter().sum::<f64>() / n;
                (losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n).sqrt()
            })
            .collect();
        if sds.is_empty() {
            return Err(Error::Config(format!(
                "stability summary for '{dataset}' has no surviving runs"
            )));
        }
        let mu_std = sds.iter().sum::<f64>() / sds.len() as f64;
        rows.push(StabilityRow {
            dataset,
            mu_std,
            settings: sds.len(),
            runs: used_runs,
        });
    }
    Ok(rows)
}

/// CSV rendering of the stability rows.
pub fn stability_to_csv(rows: &[StabilityRow]) -> String {
    let mut out = String::from("dataset,mu_std,settings,runs\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.dataset, row.mu_std, row.settings, row.runs
        ));
    }
    out
}
