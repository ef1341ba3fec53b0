//! WebAssembly bindings for the browser demo.
//!
//! Each export returns a JSON string. The `*_json` functions hold the logic
//! and are plain Rust so they can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use maqt_core::agents::{Feedback, Protocol};
use maqt_core::simulator::{run, Event, SimConfig, Simulation};
use maqt_core::tree_analysis::{bounds_table, mean_network_aoi_of, BoundsRow};

pub const MAX_BOUNDS_USERS: usize = 16;
pub const MAX_BOUNDS_DEPTH: u32 = 8;
pub const MAX_TRACE_DEPTH: u32 = 7;
pub const MAX_TRACE_SLOTS: u32 = 1024;
/// Slots a trace waits for the network to settle.
pub const SETTLE_CAP: u64 = 200_000;

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

pub fn bounds_json(n_max: usize, j_max: u32) -> Result<String, String> {
    if !(1..=MAX_BOUNDS_USERS).contains(&n_max) || !(1..=MAX_BOUNDS_DEPTH).contains(&j_max) {
        return Err(format!("need 1 <= n <= {MAX_BOUNDS_USERS} and 1 <= J <= {MAX_BOUNDS_DEPTH}"));
    }
    let rows: Vec<BoundsRow> = bounds_table(1..=n_max, 1..=j_max);
    to_json(&rows)
}

#[derive(Debug, Serialize)]
pub struct TraceUser {
    pub id: usize,
    pub level: u32,
}

#[derive(Debug, Serialize)]
pub struct TraceSlot {
    pub t: u64,
    pub feedback: Feedback,
    pub delivered: Option<usize>,
    /// AoI of every user at the end of the slot.
    pub aoi: Vec<u64>,
}

#[derive(Debug, Serialize)]
pub struct SettledTrace {
    pub n: usize,
    pub depth: u32,
    pub settled_at: u64,
    pub users: Vec<TraceUser>,
    /// Mean AoI the leaf levels predict for a settled tree.
    pub predicted_mean_aoi: f64,
    /// Time average of the per-slot mean AoI over whole periods of the trace.
    pub realized_mean_aoi: f64,
    pub slots: Vec<TraceSlot>,
}

/// Runs static mAQT until every agent holds a frozen, conflict-free schedule,
/// then records `slots` further slots.
pub fn settled_trace_json(n: usize, depth: u32, seed: u64, slots: u32) -> Result<String, String> {
    if depth > MAX_TRACE_DEPTH || n == 0 || n > 1 << depth {
        return Err(format!("need J <= {MAX_TRACE_DEPTH} and 1 <= n <= 2^J"));
    }
    if slots == 0 || slots > MAX_TRACE_SLOTS {
        return Err(format!("need 1 <= slots <= {MAX_TRACE_SLOTS}"));
    }
    let mut config = SimConfig::static_population(n, depth, SETTLE_CAP, Protocol::from_name("maqt").unwrap());
    config.agent_seed = seed;
    let mut sim = Simulation::new(config).map_err(|e| e.to_string())?;

    // Settled agents only transmit on their frozen schedule, so a run of
    // successes as long as the deepest period rules out overlaps and gaps.
    let mut clean = 0u64;
    let levels = loop {
        if sim.now() >= SETTLE_CAP {
            return Err(format!("no settled tree within {SETTLE_CAP} slots; try another seed"));
        }
        let rec = sim.step().map_err(|e| e.to_string())?;
        match frozen_levels(&sim, n) {
            Some(levels) if rec.feedback == Feedback::Success => {
                clean += 1;
                if clean >= 1 << levels.iter().max().copied().unwrap_or(0) {
                    break levels;
                }
            }
            _ => clean = 0,
        }
    };
    let settled_at = sim.now();
    let predicted = mean_network_aoi_of(&levels).map_err(|e| e.to_string())?;

    let mut trace = Vec::with_capacity(slots as usize);
    let mut aoi_sum = 0.0;
    let period = 1u64 << levels.iter().max().copied().unwrap_or(0);
    let whole = (slots as u64 / period).max(1) * period;
    for i in 0..slots as u64 {
        let rec = sim.step().map_err(|e| e.to_string())?;
        if i < whole {
            aoi_sum += rec.mean_aoi.unwrap_or(0.0);
        }
        let aoi = (0..n).map(|id| sim.user(id).aoi().unwrap_or(0)).collect();
        trace.push(TraceSlot { t: rec.t, feedback: rec.feedback, delivered: rec.delivered, aoi });
    }
    let realized = aoi_sum / whole.min(slots as u64) as f64;

    to_json(&SettledTrace {
        n,
        depth,
        settled_at,
        users: levels.iter().enumerate().map(|(id, &level)| TraceUser { id, level }).collect(),
        predicted_mean_aoi: predicted,
        realized_mean_aoi: realized,
        slots: trace,
    })
}

/// Leaf levels by user id when every agent is settled.
fn frozen_levels(sim: &Simulation, n: usize) -> Option<Vec<u32>> {
    let mut levels = Vec::with_capacity(n);
    for id in 0..n {
        let agent = sim.user(id).agent()?.as_qt()?;
        if !agent.is_settled() {
            return None;
        }
        levels.push(agent.primary()?.level());
    }
    Some(levels)
}

#[derive(Debug, Serialize)]
pub struct BatchPoint {
    pub t_start: u64,
    pub n: usize,
    pub utilization: f64,
    pub mean_aoi: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct DynamicRun {
    pub protocol: String,
    pub mean_aoi: Option<f64>,
    pub utilization: f64,
    pub batches: Vec<BatchPoint>,
    pub events: Vec<Event>,
}

/// The 32-user dynamic scenario for one protocol.
pub fn dynamic_run_json(protocol: &str, event_seed: u64, agent_seed: u64) -> Result<String, String> {
    let protocol = Protocol::from_name(protocol).map_err(|e| e.to_string())?;
    let mut config = SimConfig::dynamic_scenario(protocol);
    config.event_seed = event_seed;
    config.agent_seed = agent_seed;
    let summary = run(&config).map_err(|e| e.to_string())?;
    to_json(&DynamicRun {
        protocol: config.protocol.name().to_string(),
        mean_aoi: summary.mean_aoi,
        utilization: summary.utilization(),
        batches: summary
            .batches
            .iter()
            .map(|b| BatchPoint { t_start: b.t_start, n: b.n, utilization: b.utilization, mean_aoi: b.mean_aoi })
            .collect(),
        events: summary.events,
    })
}

#[wasm_bindgen(js_name = boundsTable)]
pub fn bounds_table_js(n_max: u32, j_max: u32) -> Result<String, JsError> {
    bounds_json(n_max as usize, j_max).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = settledTrace)]
pub fn settled_trace_js(n: u32, depth: u32, seed: u32, slots: u32) -> Result<String, JsError> {
    settled_trace_json(n as usize, depth, seed as u64, slots).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = dynamicRun)]
pub fn dynamic_run_js(protocol: &str, event_seed: u32, agent_seed: u32) -> Result<String, JsError> {
    dynamic_run_json(protocol, event_seed as u64, agent_seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = protocolNames)]
pub fn protocol_names() -> Vec<String> {
    Protocol::NAMES.iter().map(|s| s.to_string()).collect()
}
