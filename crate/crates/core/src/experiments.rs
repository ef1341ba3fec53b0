//! Multi-run orchestration: protocol comparisons with percentile bands,
//! parameter grid search and the ADRA parameter sweep.
//!
//! Within one comparison every run reuses the base `event_seed`, so all
//! protocols and runs see the same activation pattern. Run `r` uses the agent
//! seed `derive_seed(base.agent_seed, r)`.

use std::io::Write;
use std::ops::RangeInclusive;

use crate::par::*;
use serde::{Deserialize, Serialize};

use crate::agents::{AdraParams, AdraTable, Protocol};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::simulator::{run, BatchRecord, Event, RunSummary, SimConfig};
use crate::stats;

pub const DEFAULT_RUNS: usize = 50;
pub const DEFAULT_PERCENTILES: [f64; 2] = [10.0, 90.0];

fn default_runs() -> usize {
    DEFAULT_RUNS
}

fn default_percentiles() -> [f64; 2] {
    DEFAULT_PERCENTILES
}

/// One swept parameter and its candidate values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub base: SimConfig,
    /// Protocols to compare; the grid search tunes the first one.
    pub protocols: Vec<Protocol>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Lower and upper percentile of the per-batch bands.
    #[serde(default = "default_percentiles")]
    pub percentiles: [f64; 2],
    #[serde(default)]
    pub grid: Vec<GridAxis>,
}

impl ExperimentSpec {
    pub fn new(base: SimConfig, protocols: Vec<Protocol>) -> Self {
        Self { base, protocols, runs: DEFAULT_RUNS, percentiles: DEFAULT_PERCENTILES, grid: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.protocols.is_empty() {
            return Err(Error::Config("at least one protocol is required".into()));
        }
        let [lo, hi] = self.percentiles;
        if !(0.0..=100.0).contains(&lo) || !(lo..=100.0).contains(&hi) {
            return Err(Error::Config("percentiles must satisfy 0 <= low <= high <= 100".into()));
        }
        self.base.validate()?;
        self.protocols.iter().try_for_each(Protocol::validate)
    }

    /// Configuration of run `run` for `protocol`.
    pub fn run_config(&self, protocol: &Protocol, run: usize) -> SimConfig {
        let mut config = self.base.clone();
        config.protocol = protocol.clone();
        config.agent_seed = derive_seed(self.base.agent_seed, run as u64);
        config
    }
}

/// Per-batch statistic across runs. Fields are `None` for batches in which no
/// run had an active user.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Band {
    pub batch_start: u64,
    pub mean: Option<f64>,
    pub low: Option<f64>,
    pub high: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Band {
    fn from_samples(batch_start: u64, samples: &[f64], [lo, hi]: [f64; 2]) -> Self {
        let sorted = stats::sorted(samples);
        Band {
            batch_start,
            mean: stats::mean(&sorted),
            low: stats::percentile(&sorted, lo),
            high: stats::percentile(&sorted, hi),
            min: sorted.first().copied(),
            max: sorted.last().copied(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolComparison {
    pub protocol: String,
    /// Overall mean AoI of each run.
    pub run_mean_aoi: Vec<f64>,
    pub run_utilization: Vec<f64>,
    /// Mean over runs of the overall mean AoI.
    pub mean_aoi: f64,
    pub utilization: f64,
    /// Fraction of all batches (over all runs) with utilization below 0.8.
    pub low_utilization_fraction: f64,
    pub aoi_bands: Vec<Band>,
    pub utilization_bands: Vec<Band>,
    /// Active users at the start of each batch (shared by all runs).
    pub batch_users: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub percentiles: [f64; 2],
    pub rows: Vec<ProtocolComparison>,
    /// Activation log shared by every run.
    pub events: Vec<Event>,
}

fn summarize(protocol: &Protocol, runs: &[RunSummary], percentiles: [f64; 2]) -> ProtocolComparison {
    let run_mean_aoi: Vec<f64> = runs.iter().map(|r| r.mean_aoi.unwrap_or(f64::NAN)).collect();
    let run_utilization: Vec<f64> = runs.iter().map(RunSummary::utilization).collect();
    let batches = runs[0].batches.len();
    let mut aoi_bands = Vec::with_capacity(batches);
    let mut utilization_bands = Vec::with_capacity(batches);
    let mut low = 0usize;
    for b in 0..batches {
        let rows: Vec<&BatchRecord> = runs.iter().map(|r| &r.batches[b]).collect();
        let t = rows[0].t_start;
        let aoi: Vec<f64> = rows.iter().filter_map(|r| r.mean_aoi).collect();
        let util: Vec<f64> = rows.iter().map(|r| r.utilization).collect();
        low += util.iter().filter(|&&u| u < 0.8).count();
        aoi_bands.push(Band::from_samples(t, &aoi, percentiles));
        utilization_bands.push(Band::from_samples(t, &util, percentiles));
    }
    ProtocolComparison {
        protocol: protocol.name().to_string(),
        mean_aoi: stats::mean(&run_mean_aoi).unwrap_or(f64::NAN),
        utilization: stats::mean(&run_utilization).unwrap_or(f64::NAN),
        low_utilization_fraction: low as f64 / (batches * runs.len()) as f64,
        run_mean_aoi,
        run_utilization,
        aoi_bands,
        utilization_bands,
        batch_users: runs[0].batches.iter().map(|b| b.n).collect(),
    }
}

/// Simulates every protocol `spec.runs` times against one shared event stream.
pub fn compare_protocols(spec: &ExperimentSpec) -> Result<Comparison> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> =
        (0..spec.protocols.len()).flat_map(|p| (0..spec.runs).map(move |r| (p, r))).collect();
    let results =
        jobs.into_par_iter().map(|(p, r)| run(&spec.run_config(&spec.protocols[p], r))).collect::<Result<Vec<_>>>()?;
    let events = results[0].events.clone();
    let rows = results
        .chunks(spec.runs)
        .zip(&spec.protocols)
        .map(|(runs, protocol)| summarize(protocol, runs, spec.percentiles))
        .collect();
    Ok(Comparison { percentiles: spec.percentiles, rows, events })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn percentile_label(p: f64) -> String {
    format!("p{p}")
}

/// Writes `protocol,mean_aoi,utilization,low_utilization_fraction,runs`.
pub fn write_comparison_csv<W: Write>(comparison: &Comparison, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["protocol", "mean_aoi", "utilization", "low_utilization_fraction", "runs"])?;
    for row in &comparison.rows {
        wtr.write_record([
            row.protocol.clone(),
            row.mean_aoi.to_string(),
            row.utilization.to_string(),
            row.low_utilization_fraction.to_string(),
            row.run_mean_aoi.len().to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes `batch_start,n,mean,p<lo>,p<hi>,min,max` for one band series.
pub fn write_bands_csv<W: Write>(bands: &[Band], users: &[usize], percentiles: [f64; 2], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let (lo, hi) = (percentile_label(percentiles[0]), percentile_label(percentiles[1]));
    wtr.write_record(["batch_start", "n", "mean", lo.as_str(), hi.as_str(), "min", "max"])?;
    for (band, n) in bands.iter().zip(users) {
        wtr.write_record([
            band.batch_start.to_string(),
            n.to_string(),
            fmt_opt(band.mean),
            fmt_opt(band.low),
            fmt_opt(band.high),
            fmt_opt(band.min),
            fmt_opt(band.max),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MeanAoi,
    Utilization,
}

impl Objective {
    /// True iff `a` is strictly better than `b`.
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Objective::MeanAoi => a < b,
            Objective::Utilization => a > b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridPoint {
    pub values: Vec<f64>,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub names: Vec<String>,
    /// Every grid point in lexicographic order of the axes.
    pub points: Vec<GridPoint>,
    pub best: usize,
}

impl GridResult {
    pub fn best_point(&self) -> &GridPoint {
        &self.points[self.best]
    }
}

fn set_param(protocol: &mut Protocol, name: &str, value: f64) -> Result<()> {
    match protocol {
        Protocol::AlohaQ { learning_rate } if name == "learning_rate" => {
            *learning_rate = value;
            Ok(())
        }
        other => match other.params_mut() {
            Some(params) => params.set(name, value),
            None => Err(Error::Config(format!("protocol `{}` has no parameter `{name}`", other.name()))),
        },
    }
}

/// Cartesian product of the axes, last axis varying fastest.
fn grid_points(axes: &[GridAxis]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect()
    })
}

/// Objective of one parameter vector, averaged over the spec's runs.
pub fn evaluate_point(spec: &ExperimentSpec, values: &[f64], objective: Objective) -> Result<f64> {
    let mut protocol = spec.protocols[0].clone();
    for (axis, &v) in spec.grid.iter().zip(values) {
        set_param(&mut protocol, &axis.name, v)?;
    }
    protocol.validate()?;
    let scores = (0..spec.runs)
        .into_par_iter()
        .map(|r| {
            let summary = run(&spec.run_config(&protocol, r))?;
            Ok(match objective {
                Objective::MeanAoi => summary.mean_aoi.unwrap_or(f64::INFINITY),
                Objective::Utilization => summary.utilization(),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Exhaustive search over `spec.grid` for the first protocol. Ties keep the
/// earliest point in lexicographic grid order.
pub fn grid_search(spec: &ExperimentSpec, objective: Objective) -> Result<GridResult> {
    spec.validate()?;
    if spec.grid.is_empty() || spec.grid.iter().any(|a| a.values.is_empty()) {
        return Err(Error::Config("grid search needs at least one value on every axis".into()));
    }
    let points = grid_points(&spec.grid);
    let scored = points
        .into_par_iter()
        .map(|values| evaluate_point(spec, &values, objective).map(|objective| GridPoint { values, objective }))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, p) in scored.iter().enumerate().skip(1) {
        if objective.better(p.objective, scored[best].objective) {
            best = i;
        }
    }
    Ok(GridResult { names: spec.grid.iter().map(|a| a.name.clone()).collect(), points: scored, best })
}

/// Writes one row per grid point: the parameter values, then `objective`.
pub fn write_grid_csv<W: Write>(result: &GridResult, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = result.names.clone();
    header.push("objective".into());
    wtr.write_record(&header)?;
    for p in &result.points {
        let mut row: Vec<String> = p.values.iter().map(f64::to_string).collect();
        row.push(p.objective.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Search space of the ADRA sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct AdraSweep {
    pub users: RangeInclusive<usize>,
    pub access_probs: Vec<f64>,
    /// AoI thresholds as multiples of `n`; 1 is always included.
    pub threshold_factors: Vec<f64>,
    pub slots: u64,
    pub seed: u64,
}

impl Default for AdraSweep {
    fn default() -> Self {
        Self {
            users: 1..=32,
            access_probs: (1..=20).map(|i| i as f64 / 20.0).collect(),
            threshold_factors: (0..=12).map(|i| i as f64 / 4.0).collect(),
            slots: 20_000,
            seed: 1,
        }
    }
}

impl AdraSweep {
    fn thresholds(&self, n: usize) -> Vec<f64> {
        let mut out: Vec<f64> = std::iter::once(1.0)
            .chain(self.threshold_factors.iter().map(|f| (f * n as f64).round().max(1.0)))
            .collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AdraCandidate {
    pub n: usize,
    pub access_prob: f64,
    pub aoi_threshold: f64,
    pub mean_aoi: f64,
}

/// Simulated mean AoI of ADRA with fixed parameters at a static `n`.
pub fn adra_mean_aoi(n: usize, params: AdraParams, slots: u64, seed: u64) -> Result<f64> {
    let mut table = AdraTable::new();
    table.insert(n, params)?;
    let mut config = SimConfig::static_population(n, 5, slots, Protocol::Adra { table });
    config.agent_seed = seed;
    Ok(run(&config)?.mean_aoi.unwrap_or(f64::INFINITY))
}

/// For every `n`, the grid point `(p, θ)` with the lowest simulated mean AoI.
/// Ties keep the smaller `p`, then the smaller `θ`.
pub fn adra_oracle(sweep: &AdraSweep) -> Result<(AdraTable, Vec<AdraCandidate>)> {
    let cells: Vec<(usize, f64, f64)> = sweep
        .users
        .clone()
        .flat_map(|n| {
            let thetas = sweep.thresholds(n);
            sweep.access_probs.iter().flat_map(move |&p| thetas.clone().into_iter().map(move |th| (n, p, th)))
        })
        .collect();
    let scored = cells
        .into_par_iter()
        .map(|(n, p, th)| {
            let params = AdraParams { access_prob: p, aoi_threshold: th };
            let seed = derive_seed(sweep.seed, n as u64);
            adra_mean_aoi(n, params, sweep.slots, seed).map(|mean_aoi| AdraCandidate {
                n,
                access_prob: p,
                aoi_threshold: th,
                mean_aoi,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut table = AdraTable::new();
    let mut winners = Vec::new();
    for n in sweep.users.clone() {
        let best = scored
            .iter()
            .filter(|c| c.n == n)
            .fold(None::<&AdraCandidate>, |best, c| match best {
                Some(b) if b.mean_aoi <= c.mean_aoi => Some(b),
                _ => Some(c),
            })
            .ok_or_else(|| Error::Config("ADRA sweep grid is empty".into()))?;
        table.insert(n, AdraParams { access_prob: best.access_prob, aoi_threshold: best.aoi_threshold })?;
        winners.push(*best);
    }
    Ok((table, winners))
}
