//! The binary policy tree.
//!
//! A [`Schedule`] `(c, 2^l)` prescribes a transmission whenever the local slot
//! counter satisfies `t mod 2^l == c`. The two children of `(c, 2^l)` split its
//! slots between them, so a set of schedules is collision-free exactly when no
//! member is an ancestor of another.
//!
//! Schedules are addressed in heap order (`index = 2^l - 1 + c`), which is also
//! the storage order of [`WeightTable`].

use std::cell::Cell;
use std::fmt;

use rand::distributions::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported tree depth. A depth-24 table already holds 32M weights.
pub const MAX_DEPTH: u32 = 24;

/// A node `(offset, 2^level)` of the policy tree.
///
/// Field order gives the derived `Ord` the level-major order used for
/// tie-breaking: lower level first, then lower offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Schedule {
    level: u32,
    offset: u64,
}

impl Schedule {
    pub const ROOT: Schedule = Schedule { level: 0, offset: 0 };

    pub fn new(offset: u64, level: u32) -> Result<Self> {
        if level > MAX_DEPTH || offset >= 1u64 << level {
            return Err(Error::InvalidSchedule { offset, level });
        }
        Ok(Self { level, offset })
    }

    pub fn offset(self) -> u64 {
        self.offset
    }

    pub fn level(self) -> u32 {
        self.level
    }

    /// Number of slots between two prescribed transmissions.
    pub fn period(self) -> u64 {
        1u64 << self.level
    }

    pub fn prescribes(self, t: u64) -> bool {
        t & (self.period() - 1) == self.offset
    }

    /// Heap index: the root is 0, level `l` occupies `2^l - 1 .. 2^{l+1} - 1`.
    pub fn index(self) -> usize {
        (self.period() - 1 + self.offset) as usize
    }

    pub fn from_index(index: usize) -> Self {
        let level = (index + 1).ilog2();
        let offset = (index + 1 - (1usize << level)) as u64;
        Self { level, offset }
    }

    /// The two children `(c, 2^{l+1})` and `(c + 2^l, 2^{l+1})`.
    pub fn children(self, depth: u32) -> Result<(Schedule, Schedule)> {
        if self.level >= depth {
            return Err(Error::NoChildren(self, depth));
        }
        let level = self.level + 1;
        Ok((Schedule { level, offset: self.offset }, Schedule { level, offset: self.offset + self.period() }))
    }

    pub fn parent(self) -> Option<Schedule> {
        (self.level > 0).then(|| Schedule { level: self.level - 1, offset: self.offset & ((self.period() >> 1) - 1) })
    }

    /// True when `self` lies on the path from the root to `other` (including `other`).
    pub fn is_ancestor_or_self(self, other: Schedule) -> bool {
        self.level <= other.level && other.offset & (self.period() - 1) == self.offset
    }

    /// Two schedules conflict when one is an ancestor of (or equal to) the
    /// other, which is exactly when their prescribed slot sets intersect.
    pub fn conflicts(self, other: Schedule) -> bool {
        self.is_ancestor_or_self(other) || other.is_ancestor_or_self(self)
    }

    /// The same schedule seen by a user whose counter runs `shift` slots ahead.
    pub fn shifted(self, shift: u64) -> Schedule {
        Schedule { level: self.level, offset: self.offset.wrapping_add(shift) & (self.period() - 1) }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.offset, self.period())
    }
}

/// The `depth + 1` schedules that prescribe slot `t`, ordered root to leaf.
pub fn active_set(t: u64, depth: u32) -> Vec<Schedule> {
    (0..=depth).map(|level| Schedule { level, offset: t & ((1u64 << level) - 1) }).collect()
}

/// Number of schedules in a depth-`depth` tree: `2^{J+1} - 1`.
pub fn tree_size(depth: u32) -> usize {
    (1usize << (depth + 1)) - 1
}

/// Learning parameters shared by the policy-tree agents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentParams {
    /// Selection threshold; schedules above it join the policy (ALOHA-QT only).
    pub eta: f64,
    /// Per-slot probability of relinquishing the active schedules (ALOHA-QT only).
    pub epsilon: f64,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    /// Relative amplitude of the initialization noise.
    pub gamma0: f64,
    /// Per-level decay of the initial weights.
    pub gamma1: f64,
    pub w_init: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self { eta: 0.95, epsilon: 0.02, alpha_plus: 0.2, alpha_minus: -0.5, gamma0: 0.1, gamma1: 1.8, w_init: 0.25 }
    }
}

impl AgentParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.eta > 0.0 && self.eta < 1.0, "eta must lie in (0, 1)"),
            (self.epsilon >= 0.0 && self.epsilon < 1.0, "epsilon must lie in [0, 1)"),
            (self.alpha_plus > 0.0, "alpha_plus must be positive"),
            (self.alpha_minus < 0.0, "alpha_minus must be negative"),
            (self.gamma0 >= 0.0 && self.gamma0 <= 1.0, "gamma0 must lie in [0, 1]"),
            (self.gamma1 >= 1.0, "gamma1 must be at least 1"),
            (self.w_init > 0.0 && self.w_init <= 1.0, "w_init must lie in (0, 1]"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::InvalidParams((*msg).into())),
            None => Ok(()),
        }
    }

    /// Sets a parameter by its field name; used by grid sweeps.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "eta" => &mut self.eta,
            "epsilon" => &mut self.epsilon,
            "alpha_plus" => &mut self.alpha_plus,
            "alpha_minus" => &mut self.alpha_minus,
            "gamma0" => &mut self.gamma0,
            "gamma1" => &mut self.gamma1,
            "w_init" => &mut self.w_init,
            other => return Err(Error::InvalidParams(format!("unknown agent parameter `{other}`"))),
        };
        *slot = value;
        Ok(())
    }
}

/// One weight per schedule of a depth-`J` tree, stored in heap order.
///
/// Every method that reads or writes weights adds the number of entries it
/// touched to an internal counter (see [`WeightTable::touches`]), which lets
/// callers verify per-slot cost bounds. [`WeightTable::as_slice`] is exempt.
#[derive(Clone, Debug)]
pub struct WeightTable {
    depth: u32,
    weights: Vec<f64>,
    sum: f64,
    touches: Cell<u64>,
}

impl WeightTable {
    pub fn filled(depth: u32, value: f64) -> Result<Self> {
        if depth > MAX_DEPTH {
            return Err(Error::InvalidParams(format!("tree depth {depth} exceeds {MAX_DEPTH}")));
        }
        let weights = vec![value; tree_size(depth)];
        Ok(Self::from_weights(depth, weights))
    }

    fn from_weights(depth: u32, weights: Vec<f64>) -> Self {
        let sum = weights.iter().sum();
        Self { depth, weights, sum, touches: Cell::new(0) }
    }

    /// Builds a table from explicit heap-ordered weights.
    pub fn from_vec(depth: u32, weights: Vec<f64>) -> Result<Self> {
        if depth > MAX_DEPTH || weights.len() != tree_size(depth) {
            return Err(Error::InvalidParams(format!(
                "expected {} weights for depth {depth}, got {}",
                tree_size(depth.min(MAX_DEPTH)),
                weights.len()
            )));
        }
        Ok(Self::from_weights(depth, weights))
    }

    /// Initial weights `(w_init / γ₁^l)·(1 − γ₀ + γ₀·u)` with a fresh `u` per schedule.
    pub fn init<R: Rng + ?Sized>(depth: u32, params: &AgentParams, rng: &mut R) -> Result<Self> {
        let mut table = Self::filled(depth, 0.0)?;
        let mut scale = params.w_init;
        for level in 0..=depth {
            let start = (1usize << level) - 1;
            for w in &mut table.weights[start..start + (1usize << level)] {
                let u: f64 = rng.sample(Open01);
                *w = scale * (1.0 - params.gamma0 + params.gamma0 * u);
            }
            scale /= params.gamma1;
        }
        table.recompute_sum();
        table.touch(table.weights.len());
        Ok(table)
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Heap-ordered view of the weights. Does not count as a touch.
    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// Cached sum of all weights, kept current by every mutating method.
    pub fn sum(&self) -> f64 {
        self.sum
    }

    /// Total number of entries read or written so far.
    pub fn touches(&self) -> u64 {
        self.touches.get()
    }

    fn touch(&self, n: usize) {
        self.touches.set(self.touches.get() + n as u64);
    }

    fn recompute_sum(&mut self) {
        self.sum = self.weights.iter().sum();
    }

    pub fn get(&self, s: Schedule) -> f64 {
        self.touch(1);
        self.weights[s.index()]
    }

    pub fn set(&mut self, s: Schedule, value: f64) {
        self.touch(1);
        let w = &mut self.weights[s.index()];
        self.sum += value - *w;
        *w = value;
    }

    /// Schedule with the largest weight. Exact ties go to the lowest level,
    /// then the lowest offset (i.e. the lowest heap index).
    pub fn argmax(&self) -> Schedule {
        self.touch(self.weights.len());
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate().skip(1) {
            if w > self.weights[best] {
                best = i;
            }
        }
        Schedule::from_index(best)
    }

    /// All schedules whose weight strictly exceeds `eta`, in heap order.
    pub fn above(&self, eta: f64) -> Vec<Schedule> {
        self.touch(self.weights.len());
        self.weights.iter().enumerate().filter(|(_, &w)| w > eta).map(|(i, _)| Schedule::from_index(i)).collect()
    }

    /// Multiplies each listed weight by `e^{α·u}` with a fresh `u ∈ (0,1)` per schedule.
    pub fn multiplicative_update<R: Rng + ?Sized>(&mut self, actives: &[Schedule], alpha: f64, rng: &mut R) {
        self.touch(actives.len());
        for s in actives {
            let u: f64 = rng.sample(Open01);
            let w = &mut self.weights[s.index()];
            let next = *w * (alpha * u).exp();
            self.sum += next - *w;
            *w = next;
        }
    }

    /// Sets every listed weight to zero.
    pub fn relinquish(&mut self, actives: &[Schedule]) {
        self.touch(actives.len());
        for s in actives {
            let w = &mut self.weights[s.index()];
            self.sum -= *w;
            *w = 0.0;
        }
    }

    /// Redistributes the weight lost since the table summed to `sum_before`.
    ///
    /// Fires only when mass was lost and the current sum is below
    /// `w_init·|S|`; every schedule then receives a share `δ·X_σ/ΣX` with
    /// i.i.d. uniform `X_σ`. Returns whether the redistribution happened.
    pub fn normalize<R: Rng + ?Sized>(&mut self, sum_before: f64, w_init: f64, rng: &mut R) -> bool {
        let current = self.sum;
        let delta = sum_before - current;
        if !(delta > 0.0 && current < w_init * self.weights.len() as f64) {
            return false;
        }
        let shares: Vec<f64> = (0..self.weights.len()).map(|_| rng.sample(Open01)).collect();
        let total: f64 = shares.iter().sum();
        self.touch(self.weights.len());
        for (w, x) in self.weights.iter_mut().zip(&shares) {
            *w += delta * x / total;
        }
        self.recompute_sum();
        true
    }

    /// Clamps every weight to at most 1. Idempotent.
    pub fn enforce_bounds(&mut self) {
        self.touch(self.weights.len());
        for w in &mut self.weights {
            *w = w.min(1.0);
        }
        self.recompute_sum();
    }
}
