//! Subcommand configs and their execution.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use maqt_core::agents::{AgentParams, Protocol};
use maqt_core::experiments::{
    adra_oracle as run_adra_oracle, compare_protocols, grid_search, write_bands_csv, write_comparison_csv,
    write_grid_csv, AdraSweep, ExperimentSpec, GridAxis, Objective,
};
use maqt_core::simulator::{
    measure_resettling, resettle_base, run as run_simulation, write_batches_csv, write_events_csv, EventKind,
    SimConfig, DEFAULT_SETTLE_CAP,
};
use maqt_core::tree_analysis::bounds_table;

use crate::config::{load_config, CliError, CliResult, Manifest, MANIFEST_FILE};
use crate::{BoundsArgs, Common, Verbosity};

fn resolve<C>(common: &Common, subcommand: &str, default: impl FnOnce() -> C) -> CliResult<C>
where
    C: serde::de::DeserializeOwned + Serialize,
{
    match &common.config {
        Some(path) => load_config(path, subcommand),
        None => Ok(default()),
    }
}

fn reject(present: bool, flag: &str, subcommand: &str) -> CliResult<()> {
    if present {
        return Err(CliError::Config(format!("{flag} does not apply to `{subcommand}`")));
    }
    Ok(())
}

fn protocol_flag(common: &Common) -> CliResult<Option<Protocol>> {
    common.protocol.as_deref().map(Protocol::from_name).transpose().map_err(CliError::from)
}

fn apply_seeds(common: &Common, base: &mut SimConfig) {
    if let Some(s) = common.event_seed {
        base.event_seed = s;
    }
    if let Some(s) = common.agent_seed {
        base.agent_seed = s;
    }
}

/// Collects output files in memory, then writes them with the manifest.
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn add(
        &mut self,
        name: impl Into<String>,
        write: impl FnOnce(&mut Vec<u8>) -> maqt_core::Result<()>,
    ) -> CliResult<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.files.push((name.into(), buf));
        Ok(())
    }

    fn finish<C: Serialize>(
        self,
        out: &Path,
        subcommand: &str,
        config: C,
        seeds: (Option<u64>, Option<u64>),
        verbosity: Verbosity,
    ) -> CliResult<()> {
        fs::create_dir_all(out)
            .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", out.display())))?;
        let names = self.files.iter().map(|(n, _)| n.clone()).collect();
        let manifest = Manifest::new(subcommand, config, seeds, names)?;
        for (name, bytes) in &self.files {
            write_file(&out.join(name), bytes)?;
        }
        write_file(&out.join(MANIFEST_FILE), manifest.to_json()?.as_bytes())?;
        if verbosity == Verbosity::Verbose {
            eprintln!("config sha256 {}", manifest.config_sha256);
            for name in manifest.outputs.iter().map(String::as_str).chain([MANIFEST_FILE]) {
                eprintln!("wrote {}", out.join(name).display());
            }
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn warn(verbosity: Verbosity, warnings: &[String]) {
    if verbosity != Verbosity::Quiet {
        for w in warnings {
            eprintln!("warning: {w}");
        }
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

pub fn simulate(common: &Common, verbosity: Verbosity) -> CliResult<()> {
    reject(common.runs.is_some(), "--runs", "simulate")?;
    let mut config: SimConfig =
        resolve(common, "simulate", || SimConfig::dynamic_scenario(Protocol::Maqt { params: AgentParams::default() }))?;
    if let Some(p) = protocol_flag(common)? {
        config.protocol = p;
    }
    apply_seeds(common, &mut config);
    config.validate()?;
    warn(verbosity, &config.warnings());

    let summary = run_simulation(&config)?;
    let mut out = Outputs::new();
    out.add("batches.csv", |w| write_batches_csv(&summary.batches, w))?;
    out.add("events.csv", |w| write_events_csv(&summary.events, w))?;
    if verbosity != Verbosity::Quiet {
        println!(
            "{}: {} slots, mean AoI {}, utilization {:.4}, {} events, {} settled slots",
            config.protocol.name(),
            summary.slots,
            fmt_opt(summary.mean_aoi),
            summary.utilization(),
            summary.events.len(),
            summary.settled_slots()
        );
    }
    let seeds = (Some(config.event_seed), Some(config.agent_seed));
    out.finish(&common.out, "simulate", config, seeds, verbosity)
}

fn default_experiment() -> ExperimentSpec {
    let protocols = Protocol::NAMES.iter().map(|n| Protocol::from_name(n).expect("builtin name")).collect();
    ExperimentSpec::new(SimConfig::dynamic_scenario(Protocol::RoundRobin), protocols)
}

fn apply_experiment_flags(common: &Common, spec: &mut ExperimentSpec, first_only: bool) -> CliResult<()> {
    if let Some(p) = protocol_flag(common)? {
        if first_only && !spec.protocols.is_empty() {
            spec.protocols[0] = p;
        } else {
            spec.protocols = vec![p];
        }
    }
    if let Some(r) = common.runs {
        spec.runs = r;
    }
    apply_seeds(common, &mut spec.base);
    spec.validate()?;
    Ok(())
}

pub fn compare(common: &Common, verbosity: Verbosity) -> CliResult<()> {
    let mut spec: ExperimentSpec = resolve(common, "compare", default_experiment)?;
    apply_experiment_flags(common, &mut spec, false)?;
    for p in &spec.protocols {
        let mut c = spec.base.clone();
        c.protocol = p.clone();
        warn(verbosity, &c.warnings());
    }

    let comparison = compare_protocols(&spec)?;
    let mut out = Outputs::new();
    out.add("comparison.csv", |w| write_comparison_csv(&comparison, w))?;
    out.add("events.csv", |w| write_events_csv(&comparison.events, w))?;
    for row in &comparison.rows {
        out.add(format!("aoi_bands_{}.csv", row.protocol), |w| {
            write_bands_csv(&row.aoi_bands, &row.batch_users, comparison.percentiles, w)
        })?;
        out.add(format!("utilization_bands_{}.csv", row.protocol), |w| {
            write_bands_csv(&row.utilization_bands, &row.batch_users, comparison.percentiles, w)
        })?;
    }
    if verbosity != Verbosity::Quiet {
        println!("{:<14} {:>10} {:>12} {:>10}", "protocol", "mean AoI", "utilization", "util<0.8");
        for row in &comparison.rows {
            println!(
                "{:<14} {:>10.4} {:>12.4} {:>10.4}",
                row.protocol, row.mean_aoi, row.utilization, row.low_utilization_fraction
            );
        }
    }
    let seeds = (Some(spec.base.event_seed), Some(spec.base.agent_seed));
    out.finish(&common.out, "compare", spec, seeds, verbosity)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub j_min: u32,
    pub j_max: u32,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self { n_min: 1, n_max: 12, j_min: 1, j_max: 8 }
    }
}

/// Above this the enumeration is no longer interactive.
const MAX_BOUNDS_DEPTH: u32 = 10;

pub fn bounds(args: &BoundsArgs, verbosity: Verbosity) -> CliResult<()> {
    let common = &args.common;
    reject(common.runs.is_some(), "--runs", "bounds")?;
    reject(common.protocol.is_some(), "--protocol", "bounds")?;
    reject(common.event_seed.is_some() || common.agent_seed.is_some(), "seed flags", "bounds")?;
    let mut config: BoundsConfig = resolve(common, "bounds", BoundsConfig::default)?;
    config.n_min = args.n_min.unwrap_or(config.n_min);
    config.n_max = args.n_max.unwrap_or(config.n_max);
    config.j_min = args.j_min.unwrap_or(config.j_min);
    config.j_max = args.j_max.unwrap_or(config.j_max);
    if config.n_min == 0 || config.n_min > config.n_max {
        return Err(CliError::Config("need 1 <= n_min <= n_max".into()));
    }
    if config.j_min > config.j_max || config.j_max > MAX_BOUNDS_DEPTH {
        return Err(CliError::Config(format!("need j_min <= j_max <= {MAX_BOUNDS_DEPTH}")));
    }

    let rows = bounds_table(config.n_min..=config.n_max, config.j_min..=config.j_max);
    let mut out = Outputs::new();
    out.add("bounds.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n", "depth", "best", "worst", "skew"])?;
        for r in &rows {
            let skew = r.skew.map(|s| s.to_string()).unwrap_or_default();
            wtr.write_record([r.n.to_string(), r.depth.to_string(), r.best.to_string(), r.worst.to_string(), skew])?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    if verbosity != Verbosity::Quiet {
        println!("{} feasible (n, J) pairs", rows.len());
    }
    out.finish(&common.out, "bounds", config, (None, None), verbosity)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResettleConfig {
    #[serde(default = "default_resettle_base")]
    pub base: SimConfig,
    #[serde(default = "default_resettle_users")]
    pub users: Vec<usize>,
    #[serde(default = "default_resettle_events")]
    pub events: Vec<EventKind>,
    #[serde(default = "default_resettle_runs")]
    pub runs: usize,
    /// Slots allowed for each settling phase before a trial times out.
    #[serde(default = "default_cap")]
    pub cap: u64,
}

fn default_resettle_base() -> SimConfig {
    resettle_base(5)
}

fn default_resettle_users() -> Vec<usize> {
    vec![13, 18, 23, 28]
}

fn default_resettle_events() -> Vec<EventKind> {
    vec![EventKind::Arrive, EventKind::Depart]
}

fn default_resettle_runs() -> usize {
    50
}

fn default_cap() -> u64 {
    DEFAULT_SETTLE_CAP
}

impl Default for ResettleConfig {
    fn default() -> Self {
        Self {
            base: default_resettle_base(),
            users: default_resettle_users(),
            events: default_resettle_events(),
            runs: default_resettle_runs(),
            cap: default_cap(),
        }
    }
}

pub fn resettle(common: &Common, verbosity: Verbosity) -> CliResult<()> {
    let mut config: ResettleConfig = resolve(common, "resettle", ResettleConfig::default)?;
    if let Some(p) = protocol_flag(common)? {
        config.base.protocol = p;
    }
    if let Some(r) = common.runs {
        config.runs = r;
    }
    apply_seeds(common, &mut config.base);
    if config.runs == 0 || config.cap == 0 {
        return Err(CliError::Config("runs and cap must be at least 1".into()));
    }
    if config.users.is_empty() || config.users.contains(&0) || config.events.is_empty() {
        return Err(CliError::Config("need at least one user count >= 1 and one event".into()));
    }
    config.base.validate()?;

    let mut cells = Vec::new();
    for &n in &config.users {
        for &event in &config.events {
            cells.push(measure_resettling(&config.base, n, event, config.runs, config.cap)?);
        }
    }
    let mut out = Outputs::new();
    out.add("resettle.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n", "event", "runs", "timeouts", "min", "q1", "median", "mean", "q3", "max"])?;
        for c in &cells {
            let mut row = vec![c.n.to_string(), event_name(c.event).into(), c.runs.to_string(), c.timeouts.to_string()];
            row.extend(
                [c.min, c.q1, c.median, c.mean, c.q3, c.max].map(|x| x.map(|v| v.to_string()).unwrap_or_default()),
            );
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    out.add("resettle_trials.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n", "event", "run", "initial_settle", "resettle", "timeout"])?;
        for c in &cells {
            for (run, t) in c.trials.iter().enumerate() {
                let opt = |x: Option<u64>| x.map(|v| v.to_string()).unwrap_or_default();
                wtr.write_record([
                    c.n.to_string(),
                    event_name(c.event).into(),
                    run.to_string(),
                    opt(t.initial_settle),
                    opt(t.resettle),
                    (t.resettle.is_none() as u8).to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    })?;
    if verbosity != Verbosity::Quiet {
        println!("{:>4} {:<7} {:>9} {:>9} {:>9} {:>9}", "n", "event", "mean", "median", "max", "timeouts");
        for c in &cells {
            println!(
                "{:>4} {:<7} {:>9} {:>9} {:>9} {:>9}",
                c.n,
                event_name(c.event),
                fmt_opt(c.mean),
                fmt_opt(c.median),
                fmt_opt(c.max),
                c.timeouts
            );
        }
    }
    let seeds = (Some(config.base.event_seed), Some(config.base.agent_seed));
    out.finish(&common.out, "resettle", config, seeds, verbosity)
}

fn event_name(e: EventKind) -> &'static str {
    match e {
        EventKind::Arrive => "arrive",
        EventKind::Depart => "depart",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub experiment: ExperimentSpec,
    #[serde(default = "default_objective")]
    pub objective: Objective,
}

fn default_objective() -> Objective {
    Objective::MeanAoi
}

impl Default for SweepConfig {
    fn default() -> Self {
        let base = SimConfig::static_population(8, 5, 5_000, Protocol::Maqt { params: AgentParams::default() });
        let mut experiment = ExperimentSpec::new(base.clone(), vec![base.protocol]);
        experiment.runs = 5;
        experiment.grid = vec![
            GridAxis { name: "alpha_minus".into(), values: vec![-0.3, -0.5, -0.7] },
            GridAxis { name: "gamma1".into(), values: vec![1.5, 1.8, 2.1] },
        ];
        Self { experiment, objective: Objective::MeanAoi }
    }
}

pub fn sweep(common: &Common, verbosity: Verbosity) -> CliResult<()> {
    let mut config: SweepConfig = resolve(common, "sweep", SweepConfig::default)?;
    apply_experiment_flags(common, &mut config.experiment, true)?;
    if config.experiment.grid.is_empty() {
        return Err(CliError::Config("sweep needs at least one grid axis".into()));
    }

    let result = grid_search(&config.experiment, config.objective)?;
    let mut out = Outputs::new();
    out.add("grid.csv", |w| write_grid_csv(&result, w))?;
    if verbosity != Verbosity::Quiet {
        let best = result.best_point();
        let params: Vec<String> = result.names.iter().zip(&best.values).map(|(n, v)| format!("{n}={v}")).collect();
        println!("{} points; best {} objective {:.4}", result.points.len(), params.join(" "), best.objective);
    }
    let base = &config.experiment.base;
    let seeds = (Some(base.event_seed), Some(base.agent_seed));
    out.finish(&common.out, "sweep", config, seeds, verbosity)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdraOracleConfig {
    pub users_min: usize,
    pub users_max: usize,
    pub access_probs: Vec<f64>,
    /// AoI thresholds as multiples of `n`.
    pub threshold_factors: Vec<f64>,
    pub slots: u64,
    pub seed: u64,
}

impl Default for AdraOracleConfig {
    fn default() -> Self {
        let s = AdraSweep::default();
        Self {
            users_min: *s.users.start(),
            users_max: *s.users.end(),
            access_probs: s.access_probs,
            threshold_factors: s.threshold_factors,
            slots: s.slots,
            seed: s.seed,
        }
    }
}

pub fn adra_oracle(common: &Common, verbosity: Verbosity) -> CliResult<()> {
    reject(common.runs.is_some(), "--runs", "adra-oracle")?;
    reject(common.protocol.is_some(), "--protocol", "adra-oracle")?;
    reject(common.event_seed.is_some(), "--event-seed", "adra-oracle")?;
    let mut config: AdraOracleConfig = resolve(common, "adra-oracle", AdraOracleConfig::default)?;
    if let Some(s) = common.agent_seed {
        config.seed = s;
    }
    if config.users_min == 0 || config.users_min > config.users_max || config.slots == 0 {
        return Err(CliError::Config("need 1 <= users_min <= users_max and slots >= 1".into()));
    }
    if config.access_probs.is_empty() || config.access_probs.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(CliError::Config("access_probs must be non-empty and lie in (0, 1]".into()));
    }
    if config.threshold_factors.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(CliError::Config("threshold_factors must be finite and non-negative".into()));
    }

    let sweep = AdraSweep {
        users: config.users_min..=config.users_max,
        access_probs: config.access_probs.clone(),
        threshold_factors: config.threshold_factors.clone(),
        slots: config.slots,
        seed: config.seed,
    };
    let (table, winners) = run_adra_oracle(&sweep)?;
    let mut out = Outputs::new();
    out.add("adra_table.csv", |w| table.write_csv(w))?;
    out.add("adra_oracle.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n", "access_prob", "aoi_threshold", "mean_aoi"])?;
        for c in &winners {
            wtr.write_record([
                c.n.to_string(),
                c.access_prob.to_string(),
                c.aoi_threshold.to_string(),
                c.mean_aoi.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    if verbosity != Verbosity::Quiet {
        println!("{} table entries", table.len());
    }
    let seed = Some(config.seed);
    out.finish(&common.out, "adra-oracle", config, (None, seed), verbosity)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_configs_serialize_round_trip() {
        let r = ResettleConfig::default();
        let back: ResettleConfig = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        let s = SweepConfig::default();
        let back: SweepConfig = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        let a = AdraOracleConfig::default();
        assert_eq!((a.users_min, a.users_max, a.slots), (1, 32, 20_000));
    }

    #[test]
    fn resettle_config_fills_defaults() {
        let c: ResettleConfig = serde_json::from_str(r#"{"users": [4], "runs": 3}"#).unwrap();
        assert_eq!(c.users, vec![4]);
        assert_eq!(c.events, default_resettle_events());
        assert_eq!(c.cap, DEFAULT_SETTLE_CAP);
    }

    #[test]
    fn default_experiment_lists_every_protocol() {
        let spec = default_experiment();
        let names: Vec<&str> = spec.protocols.iter().map(Protocol::name).collect();
        assert_eq!(names, Protocol::NAMES);
        assert_eq!(spec.runs, 50);
    }
}
