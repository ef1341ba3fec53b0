//! Slotted collision channel with activation dynamics and AoI bookkeeping.
//!
//! Each slot runs in a fixed order: activity flips, decisions, ternary
//! feedback, agent updates, then the AoI recursion
//! `Δ_i ← 1` after a delivered update and `Δ_i ← Δ_i + 1` otherwise.
//! Slot records report the AoI values in force at the start of the slot.

use std::io::Write;

use crate::par::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{rr_schedule, Agent, Decision, Feedback, Protocol, SlotContext};
use crate::error::{Error, Result};
use crate::policy_tree::{AgentParams, MAX_DEPTH};
use crate::rng::{derive_seed, user_stream, StreamKind};
use crate::stats;

pub const DEFAULT_BATCH: u64 = 100;

/// Cap on slots spent waiting for a tree to (re)settle.
pub const DEFAULT_SETTLE_CAP: u64 = 100_000;

fn default_batch() -> u64 {
    DEFAULT_BATCH
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Total user population `M`.
    pub users: usize,
    /// Mean state-holding time `k` in slots; each user flips state with
    /// probability `1/k` per slot. `None` keeps the population static.
    #[serde(default)]
    pub holding_time: Option<f64>,
    /// Users active at `t = 0` (ids `0..n0`).
    pub initial_active: usize,
    /// Number of slots `T`.
    pub horizon: u64,
    /// Policy-tree depth `J`; ALOHA-Q uses frames of `2^J` slots.
    pub depth: u32,
    #[serde(default = "default_batch")]
    pub batch: u64,
    pub protocol: Protocol,
    #[serde(default)]
    pub event_seed: u64,
    #[serde(default)]
    pub agent_seed: u64,
}

impl SimConfig {
    /// Dynamic scenario: 32 users, `k = 50 000`, 16 initially active,
    /// 50 000 slots, depth 5, batches of 100 slots.
    pub fn dynamic_scenario(protocol: Protocol) -> Self {
        Self {
            users: 32,
            holding_time: Some(50_000.0),
            initial_active: 16,
            horizon: 50_000,
            depth: 5,
            batch: DEFAULT_BATCH,
            protocol,
            event_seed: 1,
            agent_seed: 1,
        }
    }

    /// `n` always-active users.
    pub fn static_population(n: usize, depth: u32, horizon: u64, protocol: Protocol) -> Self {
        Self {
            users: n,
            holding_time: None,
            initial_active: n,
            horizon,
            depth,
            batch: DEFAULT_BATCH,
            protocol,
            event_seed: 1,
            agent_seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.users == 0 {
            return fail("users must be at least 1".into());
        }
        if self.initial_active == 0 || self.initial_active > self.users {
            return fail(format!("initial_active must lie in 1..={}", self.users));
        }
        if self.horizon == 0 {
            return fail("horizon must be at least 1 slot".into());
        }
        if self.batch == 0 {
            return fail("batch must be at least 1 slot".into());
        }
        if self.depth > MAX_DEPTH {
            return fail(format!("depth must be at most {MAX_DEPTH}"));
        }
        if let Some(k) = self.holding_time {
            if !(k >= 1.0 && k.is_finite()) {
                return fail("holding_time must be a finite number of slots >= 1".into());
            }
        }
        self.protocol.validate()
    }

    /// Non-fatal configuration concerns.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let (Protocol::Maqt { .. }, Some(k)) = (&self.protocol, self.holding_time) {
            if k / (self.users as f64) < 2000.0 {
                out.push(format!(
                    "events arrive every {:.0} slots on average; mAQT may rarely stay settled",
                    k / self.users as f64
                ));
            }
        }
        if self.users > 1usize << self.depth.min(usize::BITS - 1) {
            out.push(format!("more users ({}) than depth-{} leaves", self.users, self.depth));
        }
        out
    }

    fn activation_prob(&self) -> f64 {
        self.holding_time.map_or(0.0, |k| 1.0 / k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Arrive,
    Depart,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub t: u64,
    pub user_id: usize,
    pub event: EventKind,
}

#[derive(Clone, Debug)]
pub struct UserState {
    aoi: u64,
    agent: Option<Agent>,
}

impl UserState {
    pub fn is_active(&self) -> bool {
        self.agent.is_some()
    }

    /// Current AoI; `None` while inactive.
    pub fn aoi(&self) -> Option<u64> {
        self.agent.as_ref().map(|_| self.aoi)
    }

    pub fn agent(&self) -> Option<&Agent> {
        self.agent.as_ref()
    }
}

/// Outcome of one slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotRecord {
    pub t: u64,
    /// Active users during the slot.
    pub n: usize,
    pub transmitters: usize,
    pub feedback: Feedback,
    /// The user whose update got through, on a success.
    pub delivered: Option<usize>,
    /// Mean AoI over active users at the start of the slot.
    pub mean_aoi: Option<f64>,
    /// Observer view: the last `2^J` slots (including this one) were successes.
    pub settled: bool,
}

/// True iff the last `2^depth` outcomes are all successes.
pub fn detect_settled(history: &[Feedback], depth: u32) -> bool {
    let window = 1usize << depth;
    history.len() >= window && history[history.len() - window..].iter().all(|f| *f == Feedback::Success)
}

pub struct Simulation {
    config: SimConfig,
    activation_prob: f64,
    t: u64,
    users: Vec<UserState>,
    event_rngs: Vec<ChaCha8Rng>,
    agent_rngs: Vec<ChaCha8Rng>,
    active_ids: Vec<usize>,
    decisions: Vec<Decision>,
    success_streak: u64,
    events: Vec<Event>,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let users = config.users;
        let event_rngs = (0..users).map(|id| user_stream(config.event_seed, StreamKind::Events, id)).collect();
        let agent_rngs = (0..users).map(|id| user_stream(config.agent_seed, StreamKind::Agents, id)).collect();
        let mut sim = Self {
            activation_prob: config.activation_prob(),
            t: 0,
            users: (0..users).map(|_| UserState { aoi: 0, agent: None }).collect(),
            event_rngs,
            agent_rngs,
            active_ids: Vec::with_capacity(users),
            decisions: Vec::with_capacity(users),
            success_streak: 0,
            events: Vec::new(),
            config,
        };
        for id in 0..sim.config.initial_active {
            sim.bring_up(id)?;
        }
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Index of the next slot to simulate.
    pub fn now(&self) -> u64 {
        self.t
    }

    pub fn user(&self, id: usize) -> &UserState {
        &self.users[id]
    }

    pub fn active_ids(&self) -> Vec<usize> {
        (0..self.users.len()).filter(|&id| self.users[id].is_active()).collect()
    }

    pub fn active_count(&self) -> usize {
        self.users.iter().filter(|u| u.is_active()).count()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn success_streak(&self) -> u64 {
        self.success_streak
    }

    pub fn is_settled(&self) -> bool {
        self.success_streak >= 1u64 << self.config.depth
    }

    fn bring_up(&mut self, id: usize) -> Result<()> {
        let agent = self.config.protocol.spawn(self.config.depth, &mut self.agent_rngs[id])?;
        let user = &mut self.users[id];
        user.aoi = 1;
        user.agent = Some(agent);
        Ok(())
    }

    /// Activates `id` at the current slot. Returns false if it already was active.
    pub fn activate(&mut self, id: usize) -> Result<bool> {
        if self.users[id].is_active() {
            return Ok(false);
        }
        self.bring_up(id)?;
        self.events.push(Event { t: self.t, user_id: id, event: EventKind::Arrive });
        Ok(true)
    }

    /// Deactivates `id`, discarding its agent state.
    pub fn deactivate(&mut self, id: usize) -> bool {
        let user = &mut self.users[id];
        if user.agent.take().is_none() {
            return false;
        }
        user.aoi = 0;
        self.events.push(Event { t: self.t, user_id: id, event: EventKind::Depart });
        true
    }

    pub fn step(&mut self) -> Result<SlotRecord> {
        let t = self.t;

        if self.activation_prob > 0.0 {
            for id in 0..self.users.len() {
                if self.event_rngs[id].gen::<f64>() < self.activation_prob {
                    if self.users[id].is_active() {
                        self.deactivate(id);
                    } else {
                        self.activate(id)?;
                    }
                }
            }
        }

        self.active_ids.clear();
        self.active_ids.extend((0..self.users.len()).filter(|&id| self.users[id].is_active()));
        let n = self.active_ids.len();
        let mean_aoi = (n > 0).then(|| {
            let total: u64 = self.active_ids.iter().map(|&id| self.users[id].aoi).sum();
            total as f64 / n as f64
        });

        let rr_turn = match self.config.protocol {
            Protocol::RoundRobin => rr_schedule(&self.active_ids, t),
            _ => None,
        };
        let adra = match &self.config.protocol {
            Protocol::Adra { table } => Some(table),
            _ => None,
        };

        self.decisions.clear();
        let mut transmitters = 0;
        let mut last_tx = None;
        for &id in &self.active_ids {
            let user = &mut self.users[id];
            let ctx = SlotContext { active_users: n, aoi: user.aoi, rr_turn: rr_turn == Some(id), adra };
            let agent = user.agent.as_mut().expect("active users carry an agent");
            let d = agent.decide(&ctx, &mut self.agent_rngs[id])?;
            if d.transmits() {
                transmitters += 1;
                last_tx = Some(id);
            }
            self.decisions.push(d);
        }

        let feedback = Feedback::from_transmitters(transmitters);
        let delivered = if feedback == Feedback::Success { last_tx } else { None };

        for (&id, &d) in self.active_ids.iter().zip(&self.decisions) {
            let user = &mut self.users[id];
            let agent = user.agent.as_mut().expect("active users carry an agent");
            agent.observe(feedback, d, &mut self.agent_rngs[id])?;
            user.aoi = if delivered == Some(id) { 1 } else { user.aoi + 1 };
        }

        if feedback == Feedback::Success {
            self.success_streak += 1;
        } else {
            self.success_streak = 0;
        }
        self.t += 1;

        Ok(SlotRecord { t, n, transmitters, feedback, delivered, mean_aoi, settled: self.is_settled() })
    }
}

/// Per-batch metrics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchRecord {
    pub t_start: u64,
    /// Active users at the first slot of the batch.
    pub n: usize,
    pub utilization: f64,
    /// Average of the per-slot active mean AoI; slots with no active user are skipped.
    pub mean_aoi: Option<f64>,
    pub settled_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub batches: Vec<BatchRecord>,
    pub events: Vec<Event>,
    /// Half-open `[start, end)` slot ranges during which the observer saw a settled tree.
    pub settled_intervals: Vec<(u64, u64)>,
    pub slots: u64,
    pub successes: u64,
    /// Time average of the active mean AoI over slots with at least one active user.
    pub mean_aoi: Option<f64>,
}

impl RunSummary {
    pub fn utilization(&self) -> f64 {
        self.successes as f64 / self.slots as f64
    }

    pub fn settled_slots(&self) -> u64 {
        self.settled_intervals.iter().map(|(a, b)| b - a).sum()
    }
}

struct BatchAccumulator {
    t_start: u64,
    n: usize,
    slots: u64,
    successes: u64,
    aoi_sum: f64,
    aoi_slots: u64,
    settled: u64,
}

impl BatchAccumulator {
    fn finish(&self) -> BatchRecord {
        BatchRecord {
            t_start: self.t_start,
            n: self.n,
            utilization: self.successes as f64 / self.slots as f64,
            mean_aoi: (self.aoi_slots > 0).then(|| self.aoi_sum / self.aoi_slots as f64),
            settled_fraction: self.settled as f64 / self.slots as f64,
        }
    }
}

/// Runs a full simulation. Deterministic in `(event_seed, agent_seed)`.
pub fn run(config: &SimConfig) -> Result<RunSummary> {
    run_with(config, |_| {})
}

/// Like [`run`], calling `observer` with every slot record.
pub fn run_with<F: FnMut(&SlotRecord)>(config: &SimConfig, mut observer: F) -> Result<RunSummary> {
    let mut sim = Simulation::new(config.clone())?;
    let mut batches = Vec::with_capacity((config.horizon / config.batch + 1) as usize);
    let mut acc: Option<BatchAccumulator> = None;
    let mut intervals = Vec::new();
    let mut settled_since: Option<u64> = None;
    let (mut successes, mut aoi_sum, mut aoi_slots) = (0u64, 0.0f64, 0u64);

    for _ in 0..config.horizon {
        let rec = sim.step()?;
        observer(&rec);

        if rec.t % config.batch == 0 {
            if let Some(done) = acc.take() {
                batches.push(done.finish());
            }
            acc = Some(BatchAccumulator {
                t_start: rec.t,
                n: rec.n,
                slots: 0,
                successes: 0,
                aoi_sum: 0.0,
                aoi_slots: 0,
                settled: 0,
            });
        }
        let b = acc.as_mut().expect("batch opened at t = 0");
        b.slots += 1;
        if rec.feedback == Feedback::Success {
            b.successes += 1;
            successes += 1;
        }
        if let Some(m) = rec.mean_aoi {
            b.aoi_sum += m;
            b.aoi_slots += 1;
            aoi_sum += m;
            aoi_slots += 1;
        }
        if rec.settled {
            b.settled += 1;
        }
        match (rec.settled, settled_since) {
            (true, None) => settled_since = Some(rec.t),
            (false, Some(start)) => {
                intervals.push((start, rec.t));
                settled_since = None;
            }
            _ => {}
        }
    }
    if let Some(done) = acc.take() {
        batches.push(done.finish());
    }
    if let Some(start) = settled_since {
        intervals.push((start, config.horizon));
    }

    Ok(RunSummary {
        batches,
        events: sim.events().to_vec(),
        settled_intervals: intervals,
        slots: config.horizon,
        successes,
        mean_aoi: (aoi_slots > 0).then(|| aoi_sum / aoi_slots as f64),
    })
}

/// Writes `t_start,n,utilization,mean_aoi,settled_fraction` rows.
pub fn write_batches_csv<W: Write>(batches: &[BatchRecord], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for b in batches {
        wtr.serialize(b)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes `t,user_id,event` rows.
pub fn write_events_csv<W: Write>(events: &[Event], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["t", "user_id", "event"])?;
    for e in events {
        let kind = match e.event {
            EventKind::Arrive => "arrive",
            EventKind::Depart => "depart",
        };
        wtr.write_record([e.t.to_string(), e.user_id.to_string(), kind.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Result of one resettling trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ResettleTrial {
    /// Slots until the fresh network first settled.
    pub initial_settle: Option<u64>,
    /// Slots from the injected event until the tree was settled again.
    pub resettle: Option<u64>,
}

/// Distribution of resettling times for one `(n, event)` cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResettleStats {
    pub n: usize,
    pub event: EventKind,
    pub runs: usize,
    /// Trials that never settled (initially or after the event) within the cap.
    pub timeouts: usize,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
    #[serde(skip)]
    pub trials: Vec<ResettleTrial>,
}

/// Settles a static network of `n` users, injects one arrival or departure
/// and counts the slots until a full window of `2^J` post-event successes.
pub fn resettle_trial(base: &SimConfig, n: usize, event: EventKind, run: u64, cap: u64) -> Result<ResettleTrial> {
    let mut config = base.clone();
    config.users = config.users.max(n + 1);
    config.initial_active = n;
    config.holding_time = None;
    config.event_seed = derive_seed(base.event_seed, run);
    config.agent_seed = derive_seed(base.agent_seed, run);
    let window = 1u64 << config.depth;
    let mut sim = Simulation::new(config.clone())?;

    let mut initial = None;
    for slot in 1..=cap {
        sim.step()?;
        if sim.is_settled() {
            initial = Some(slot);
            break;
        }
    }
    if initial.is_none() {
        return Ok(ResettleTrial { initial_settle: None, resettle: None });
    }

    match event {
        EventKind::Arrive => {
            let id = (0..config.users).find(|&id| !sim.user(id).is_active()).expect("one spare user");
            sim.activate(id)?;
        }
        EventKind::Depart => {
            let active = sim.active_ids();
            let mut pick = user_stream(config.event_seed, StreamKind::Control, 0);
            let id = active[pick.gen_range(0..active.len())];
            sim.deactivate(id);
        }
    }

    let mut streak = 0u64;
    for slot in 1..=cap {
        let rec = sim.step()?;
        streak = if rec.feedback == Feedback::Success { streak + 1 } else { 0 };
        if streak >= window {
            return Ok(ResettleTrial { initial_settle: initial, resettle: Some(slot) });
        }
    }
    Ok(ResettleTrial { initial_settle: initial, resettle: None })
}

/// Runs `runs` independent resettling trials (in parallel) and summarizes them.
pub fn measure_resettling(
    base: &SimConfig,
    n: usize,
    event: EventKind,
    runs: usize,
    cap: u64,
) -> Result<ResettleStats> {
    let trials = (0..runs as u64)
        .into_par_iter()
        .map(|run| resettle_trial(base, n, event, run, cap))
        .collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = trials.iter().filter_map(|t| t.resettle).map(|t| t as f64).collect();
    let sorted = stats::sorted(&times);
    Ok(ResettleStats {
        n,
        event,
        runs,
        timeouts: runs - times.len(),
        min: sorted.first().copied(),
        q1: stats::percentile(&sorted, 25.0),
        median: stats::percentile(&sorted, 50.0),
        mean: stats::mean(&sorted),
        q3: stats::percentile(&sorted, 75.0),
        max: sorted.last().copied(),
        trials,
    })
}

/// Default mAQT configuration used by the resettling experiment.
pub fn resettle_base(depth: u32) -> SimConfig {
    SimConfig::static_population(1, depth, 1, Protocol::Maqt { params: AgentParams::default() })
}
