//! Mean-AoI analysis of settled policy trees.
//!
//! Once every active user holds one non-conflicting leaf and every slot is a
//! success, the tree is a full binary tree and user `i` at level `l_i` sees a
//! sawtooth AoI of period `2^{l_i}`. Only the multiset of leaf levels matters
//! for the network mean, so realizations are stored as sorted level lists.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Deepest level accepted in a realization; keeps Kraft sums inside `u128`.
const MAX_LEVEL: u32 = 120;

/// Sorted leaf levels of a settled tree. Always satisfies `Σ 2^{-l_i} = 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SettledRealization {
    levels: Vec<u32>,
}

impl SettledRealization {
    pub fn new(mut levels: Vec<u32>) -> Result<Self> {
        levels.sort_unstable();
        if !kraft_complete(&levels) {
            return Err(Error::InvalidRealization { levels });
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn users(&self) -> usize {
        self.levels.len()
    }

    pub fn height(&self) -> u32 {
        *self.levels.last().expect("realizations are never empty")
    }

    pub fn min_level(&self) -> u32 {
        self.levels[0]
    }

    /// `Σ 2^{l_i}`, the total of the users' AoI periods.
    pub fn period_sum(&self) -> u128 {
        self.levels.iter().map(|&l| 1u128 << l).sum()
    }

    /// The fully balanced tree for `n` leaves: levels `⌈log₂ n⌉ − 1` and `⌈log₂ n⌉`.
    pub fn balanced(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Infeasible { n, depth: 0 });
        }
        let h = min_depth(n);
        let upper = (1usize << h) - n;
        let mut levels = vec![h.saturating_sub(1); upper];
        levels.resize(n, h);
        Self::new(levels)
    }

    /// The fully skewed tree `{1, 2, …, n−2, n−1, n−1}`.
    pub fn skewed(n: usize) -> Result<Self> {
        if n < 2 || n as u32 > MAX_LEVEL {
            return Err(Error::Infeasible { n, depth: MAX_LEVEL });
        }
        let mut levels: Vec<u32> = (1..n as u32).collect();
        levels.push(n as u32 - 1);
        Self::new(levels)
    }

    pub fn is_fully_balanced(&self) -> bool {
        self.height() - self.min_level() <= 1
    }

    /// Removes the deepest sibling pair (its parent becomes a leaf) and splits
    /// a leaf at `l_min` into two children. Leaf count is unchanged.
    pub fn balance_move(&self, l_min: u32) -> Result<Self> {
        let h = self.height();
        if l_min >= h || !self.levels.contains(&l_min) {
            return Err(Error::InvalidParams(format!("no leaf at level {l_min} above the deepest level {h}")));
        }
        let mut levels = self.levels.clone();
        for _ in 0..2 {
            let i = levels.iter().rposition(|&l| l == h).expect("a full binary tree has a deepest pair");
            levels.remove(i);
        }
        levels.push(h - 1);
        let i = levels.iter().position(|&l| l == l_min).expect("checked above");
        levels.remove(i);
        levels.extend([l_min + 1, l_min + 1]);
        Self::new(levels)
    }
}

/// Exact Kraft equality using integers scaled by `2^{max level}`.
fn kraft_complete(levels: &[u32]) -> bool {
    let Some(&h) = levels.iter().max() else {
        return false;
    };
    if h > MAX_LEVEL {
        return false;
    }
    let total: u128 = levels.iter().map(|&l| 1u128 << (h - l)).sum();
    total == 1u128 << h
}

/// Long-run mean AoI of a user holding a level-`l` leaf: `(2^l + 1) / 2`.
pub fn mean_user_aoi(level: u32) -> f64 {
    ((1u128 << level) as f64 + 1.0) / 2.0
}

/// Network mean AoI `½·(1 + (1/n)·Σ 2^{l_i})`.
pub fn mean_network_aoi(r: &SettledRealization) -> f64 {
    0.5 * (1.0 + r.period_sum() as f64 / r.users() as f64)
}

/// Same as [`mean_network_aoi`] but validates raw levels first.
pub fn mean_network_aoi_of(levels: &[u32]) -> Result<f64> {
    SettledRealization::new(levels.to_vec()).map(|r| mean_network_aoi(&r))
}

/// `⌈log₂ n⌉`: the shallowest depth that offers one leaf per user.
pub fn min_depth(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Depth to provision for at most `max_users` simultaneously active users.
pub fn recommend_depth(max_users: usize) -> u32 {
    min_depth(max_users)
}

fn check_feasible(n: usize, depth: u32) -> Result<()> {
    if n == 0 || depth > MAX_LEVEL || (depth < usize::BITS && n > 1usize << depth) {
        return Err(Error::Infeasible { n, depth });
    }
    Ok(())
}

/// Every leaf-level multiset of `n` leaves with height at most `depth`.
///
/// Walks the tree level by level, deciding how many of the nodes available at
/// each level become leaves; the rest split into twice as many nodes below.
/// Each multiset corresponds to exactly one sequence of per-level leaf counts,
/// so the output is duplicate-free. Sorted ascending.
pub fn enumerate_realizations(n: usize, depth: u32) -> Result<Vec<SettledRealization>> {
    check_feasible(n, depth)?;
    let mut out = Vec::new();
    let mut levels = Vec::with_capacity(n);
    enumerate_from(0, 1, n, depth, &mut levels, &mut out);
    out.sort();
    Ok(out)
}

fn enumerate_from(
    level: u32,
    avail: usize,
    remaining: usize,
    depth: u32,
    levels: &mut Vec<u32>,
    out: &mut Vec<SettledRealization>,
) {
    if level == depth {
        if avail == remaining {
            let mut done = levels.clone();
            done.extend(std::iter::repeat_n(level, avail));
            out.push(SettledRealization { levels: done });
        }
        return;
    }
    for leaves in 0..=avail.min(remaining) {
        let internal = avail - leaves;
        let rest = remaining - leaves;
        if !splits_feasible(internal, rest, depth - level) {
            continue;
        }
        if internal == 0 {
            let mut done = levels.clone();
            done.extend(std::iter::repeat_n(level, leaves));
            out.push(SettledRealization { levels: done });
            continue;
        }
        let mark = levels.len();
        levels.extend(std::iter::repeat_n(level, leaves));
        enumerate_from(level + 1, 2 * internal, rest, depth, levels, out);
        levels.truncate(mark);
    }
}

/// Can `internal` nodes, each split at least once and at most `below` more
/// levels, end up with exactly `rest` leaves?
fn splits_feasible(internal: usize, rest: usize, below: u32) -> bool {
    if internal == 0 {
        return rest == 0;
    }
    if below == 0 || rest < 2 * internal {
        return false;
    }
    below >= usize::BITS || rest <= internal.saturating_mul(1usize << below.min(usize::BITS - 1))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Extreme {
    Best,
    Worst,
}

/// Memoized search over the same level-by-level choices as the enumerator,
/// keeping only the extremal `Σ 2^{l_i}` per state.
struct ExtremeSearch {
    depth: u32,
    extreme: Extreme,
    memo: HashMap<(u32, usize, usize), Option<Partial>>,
}

/// `Σ 2^{l_i}` and the `(level, count)` choices reaching it.
type Partial = (u128, Vec<(u32, usize)>);

impl ExtremeSearch {
    fn solve(&mut self, level: u32, avail: usize, remaining: usize) -> Option<Partial> {
        if let Some(hit) = self.memo.get(&(level, avail, remaining)) {
            return hit.clone();
        }
        let mut best: Option<(u128, Vec<(u32, usize)>)> = None;
        if level == self.depth {
            if avail == remaining {
                best = Some(((avail as u128) << level, vec![(level, avail)]));
            }
        } else {
            for leaves in 0..=avail.min(remaining) {
                let internal = avail - leaves;
                let rest = remaining - leaves;
                if !splits_feasible(internal, rest, self.depth - level) {
                    continue;
                }
                let here = (leaves as u128) << level;
                let candidate = if internal == 0 {
                    Some((here, vec![(level, leaves)]))
                } else {
                    self.solve(level + 1, 2 * internal, rest).map(|(v, mut counts)| {
                        counts.push((level, leaves));
                        (v + here, counts)
                    })
                };
                if let Some(c) = candidate {
                    let better = match (&best, self.extreme) {
                        (None, _) => true,
                        (Some(b), Extreme::Worst) => c.0 > b.0,
                        (Some(b), Extreme::Best) => c.0 < b.0,
                    };
                    if better {
                        best = Some(c);
                    }
                }
            }
        }
        self.memo.insert((level, avail, remaining), best.clone());
        best
    }
}

fn extremal_realization(n: usize, depth: u32, extreme: Extreme) -> Result<SettledRealization> {
    check_feasible(n, depth)?;
    let mut search = ExtremeSearch { depth, extreme, memo: HashMap::new() };
    let (_, counts) = search.solve(0, 1, n).ok_or(Error::Infeasible { n, depth })?;
    let levels = counts.into_iter().flat_map(|(level, count)| std::iter::repeat_n(level, count)).collect();
    SettledRealization::new(levels)
}

/// The least balanced realization reachable under a depth cap.
pub fn worst_case_realization(n: usize, depth: u32) -> Result<SettledRealization> {
    extremal_realization(n, depth, Extreme::Worst)
}

pub fn best_case_realization(n: usize, depth: u32) -> Result<SettledRealization> {
    extremal_realization(n, depth, Extreme::Best)
}

/// Upper bound on the settled network mean AoI for `n` users under depth `depth`.
pub fn worst_case_aoi(n: usize, depth: u32) -> Result<f64> {
    worst_case_realization(n, depth).map(|r| mean_network_aoi(&r))
}

/// Lower bound on the settled network mean AoI; attained by the balanced tree.
pub fn best_case_aoi(n: usize, depth: u32) -> Result<f64> {
    best_case_realization(n, depth).map(|r| mean_network_aoi(&r))
}

/// Drop in mean network AoI from one balancing move: `(3/2n)(2^{l_max−1} − 2^{l_min})`.
pub fn balance_delta(l_max: u32, l_min: u32, n: usize) -> f64 {
    debug_assert!(l_max > l_min);
    let diff = (1i128 << (l_max - 1)) - (1i128 << l_min);
    1.5 * diff as f64 / n as f64
}

/// Mean network AoI of the fully skewed tree: `½·(1 + (3·2^{n−1} − 2)/n)`.
///
/// Derived from the leaf multiset `{1, …, n−2, n−1, n−1}`. The form
/// `½·(1 + (3·2^n − 1)/(2n))` overshoots it (5.25 instead of 5.1 at `n = 5`).
pub fn skew_bound(n: usize) -> f64 {
    assert!(n >= 2, "a skewed tree needs at least two leaves");
    let periods = 3.0 * 2f64.powi(n as i32 - 1) - 2.0;
    0.5 * (1.0 + periods / n as f64)
}

/// One row of the depth-selection table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsRow {
    pub n: usize,
    pub depth: u32,
    pub best: f64,
    pub worst: f64,
    /// Populated when `depth ≥ n − 1`, where the worst case is the skewed tree.
    pub skew: Option<f64>,
}

/// Bounds for every feasible `(n, J)` pair in the given ranges.
pub fn bounds_table(users: std::ops::RangeInclusive<usize>, depths: std::ops::RangeInclusive<u32>) -> Vec<BoundsRow> {
    let mut rows = Vec::new();
    for n in users {
        for depth in depths.clone() {
            if check_feasible(n, depth).is_err() {
                continue;
            }
            let best = best_case_aoi(n, depth).expect("feasible");
            let worst = worst_case_aoi(n, depth).expect("feasible");
            let skew = (n >= 2 && depth as usize >= n - 1).then(|| skew_bound(n));
            rows.push(BoundsRow { n, depth, best, worst, skew });
        }
    }
    rows
}
