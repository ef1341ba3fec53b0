//! Policy-tree agents: ALOHA-QT and its settled-tree variant mAQT.

use rand::Rng;

use super::{Decision, Feedback};
use crate::error::{Error, Result};
use crate::policy_tree::{active_set, AgentParams, Schedule, WeightTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QtVariant {
    /// Threshold-based multi-schedule selection with voluntary relinquishment.
    AlohaQt,
    /// Single primary schedule, no relinquishment, frozen once the tree settles.
    Maqt,
}

/// Weight-table entries touched by each step during the most recent slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepCounts {
    pub select: u64,
    pub update: u64,
    pub relinquish: u64,
    pub normalize: u64,
    pub bound: u64,
}

impl StepCounts {
    pub fn total(&self) -> u64 {
        self.select + self.update + self.relinquish + self.normalize + self.bound
    }
}

#[derive(Clone, Debug)]
pub struct QtAgent {
    variant: QtVariant,
    params: AgentParams,
    depth: u32,
    /// Local slot counter `t_i`.
    counter: u64,
    weights: WeightTable,
    /// Current policy; for mAQT always exactly the primary schedule.
    selected: Vec<Schedule>,
    actives: Vec<Schedule>,
    settled: bool,
    success_streak: u64,
    counts: StepCounts,
}

impl QtAgent {
    /// Fresh agent with initialized weights and `t_i = 0`.
    pub fn new<R: Rng + ?Sized>(variant: QtVariant, depth: u32, params: AgentParams, rng: &mut R) -> Result<Self> {
        let weights = WeightTable::init(depth, &params, rng)?;
        Ok(Self::with_weights(variant, params, weights))
    }

    pub fn with_weights(variant: QtVariant, params: AgentParams, weights: WeightTable) -> Self {
        let depth = weights.depth();
        Self {
            variant,
            params,
            depth,
            counter: 0,
            weights,
            selected: Vec::new(),
            actives: active_set(0, depth),
            settled: false,
            success_streak: 0,
            counts: StepCounts::default(),
        }
    }

    /// Starts the local counter at `t0` instead of 0.
    pub fn with_counter(mut self, t0: u64) -> Self {
        self.counter = t0;
        self.actives = active_set(t0, self.depth);
        self
    }

    pub fn variant(&self) -> QtVariant {
        self.variant
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn weights(&self) -> &WeightTable {
        &self.weights
    }

    pub fn selected(&self) -> &[Schedule] {
        &self.selected
    }

    pub fn actives(&self) -> &[Schedule] {
        &self.actives
    }

    pub fn is_settled(&self) -> bool {
        self.settled
    }

    pub fn success_streak(&self) -> u64 {
        self.success_streak
    }

    /// Per-step table accesses of the last slot.
    pub fn step_counts(&self) -> StepCounts {
        self.counts
    }

    /// Highest-weight schedule (the one mAQT transmits on).
    pub fn primary(&self) -> Option<Schedule> {
        self.selected.first().copied()
    }

    fn settle_window(&self) -> u64 {
        1u64 << self.depth
    }

    /// Steps 1–3: refresh the active set, select the policy, decide.
    pub fn decide(&mut self) -> Decision {
        self.counts = StepCounts::default();
        if self.settled {
            let frozen = self.selected[0];
            return Decision::from(frozen.prescribes(self.counter));
        }

        self.actives = active_set(self.counter, self.depth);

        let before = self.weights.touches();
        self.selected.clear();
        let primary = self.weights.argmax();
        self.selected.push(primary);
        if self.variant == QtVariant::AlohaQt {
            let extra = self.weights.above(self.params.eta);
            self.selected.extend(extra.into_iter().filter(|s| *s != primary));
        }
        self.counts.select = self.weights.touches() - before;

        // A selected schedule intersects the active set iff it prescribes t_i.
        let t = self.counter;
        Decision::from(self.selected.iter().any(|s| s.prescribes(t)))
    }

    /// Steps 4–9 for the slot in which `decision` was emitted.
    pub fn observe<R: Rng + ?Sized>(&mut self, feedback: Feedback, decision: Decision, rng: &mut R) -> Result<()> {
        if decision.transmits() && feedback == Feedback::Idle {
            return Err(Error::ProtocolViolation);
        }

        if self.settled {
            self.counter += 1;
            if feedback == Feedback::Success {
                self.success_streak += 1;
            } else {
                self.settled = false;
                self.success_streak = 0;
            }
            return Ok(());
        }

        let alpha = match (feedback, decision) {
            (Feedback::Idle, Decision::Silent) | (Feedback::Success, Decision::Transmit) => self.params.alpha_plus,
            _ => self.params.alpha_minus,
        };
        let sum_before = self.weights.sum();

        let mark = self.weights.touches();
        self.weights.multiplicative_update(&self.actives, alpha, rng);
        let after_update = self.weights.touches();
        self.counts.update = after_update - mark;

        if self.variant == QtVariant::AlohaQt {
            let u: f64 = rng.gen();
            if u <= self.params.epsilon {
                self.weights.relinquish(&self.actives);
            }
        }
        let after_relinquish = self.weights.touches();
        self.counts.relinquish = after_relinquish - after_update;

        self.weights.normalize(sum_before, self.params.w_init, rng);
        let after_normalize = self.weights.touches();
        self.counts.normalize = after_normalize - after_relinquish;

        self.weights.enforce_bounds();
        self.counts.bound = self.weights.touches() - after_normalize;

        self.counter += 1;

        if self.variant == QtVariant::Maqt {
            if feedback == Feedback::Success {
                self.success_streak += 1;
                if self.success_streak >= self.settle_window() {
                    self.settled = true;
                }
            } else {
                self.success_streak = 0;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy_tree::tree_size;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s(offset: u64, level: u32) -> Schedule {
        Schedule::new(offset, level).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn equal_weights_select_root_and_transmit() {
        let table = WeightTable::filled(3, 0.2).unwrap();
        for t0 in [0, 1, 5, 6] {
            let mut agent =
                QtAgent::with_weights(QtVariant::Maqt, AgentParams::default(), table.clone()).with_counter(t0);
            assert_eq!(agent.decide(), Decision::Transmit);
            assert_eq!(agent.primary(), Some(Schedule::ROOT));
        }
    }

    #[test]
    fn settled_maqt_transmits_only_on_frozen_schedule() {
        let mut table = WeightTable::filled(5, 0.01).unwrap();
        table.set(s(3, 2), 1.0);
        let mut agent = QtAgent::with_weights(QtVariant::Maqt, AgentParams::default(), table);
        let mut r = rng();
        let mut slot = 0u64;
        while !agent.is_settled() {
            let d = agent.decide();
            // The rest of the network fills every other slot.
            agent.observe(Feedback::Success, d, &mut r).unwrap();
            slot += 1;
            assert!(slot <= 32);
        }
        assert_eq!(agent.primary(), Some(s(3, 2)));
        for _ in 0..64 {
            let t = agent.counter();
            let d = agent.decide();
            assert_eq!(d.transmits(), s(3, 2).prescribes(t));
            agent.observe(Feedback::Success, d, &mut r).unwrap();
        }
    }

    #[test]
    fn aloha_qt_transmits_when_argmax_is_active() {
        let mut table = WeightTable::filled(3, 0.1).unwrap();
        // Above-threshold schedules that do not prescribe slot 0.
        table.set(s(1, 1), 0.97);
        table.set(s(3, 2), 0.99);
        table.set(s(0, 3), 0.995);
        let mut agent = QtAgent::with_weights(QtVariant::AlohaQt, AgentParams::default(), table);
        assert_eq!(agent.decide(), Decision::Transmit);
        assert_eq!(agent.selected().len(), 3);
        assert_eq!(agent.primary(), Some(s(0, 3)));
    }

    #[test]
    fn aloha_qt_threshold_schedules_trigger_transmission() {
        let mut table = WeightTable::filled(3, 0.1).unwrap();
        table.set(s(1, 1), 0.97);
        table.set(s(0, 3), 0.99);
        // t = 1: the argmax (0,8) is idle but (1,2) is above η and active.
        let mut agent = QtAgent::with_weights(QtVariant::AlohaQt, AgentParams::default(), table).with_counter(1);
        assert_eq!(agent.decide(), Decision::Transmit);
        let mut maqt = agent.clone();
        maqt.variant = QtVariant::Maqt;
        assert_eq!(maqt.decide(), Decision::Silent);
    }

    #[test]
    fn success_with_transmission_rewards_active_path() {
        let params = AgentParams { epsilon: 0.0, ..AgentParams::default() };
        let mut agent = QtAgent::new(QtVariant::AlohaQt, 4, params, &mut rng()).unwrap();
        let d = agent.decide();
        let actives = agent.actives().to_vec();
        let before: Vec<f64> = actives.iter().map(|a| agent.weights().as_slice()[a.index()]).collect();
        agent.observe(Feedback::Success, d, &mut rng()).unwrap();
        for (a, old) in actives.iter().zip(before) {
            assert!(agent.weights().as_slice()[a.index()] > old);
        }
    }

    #[test]
    fn success_without_transmission_penalizes_active_path() {
        let mut table = WeightTable::filled(3, 0.1).unwrap();
        table.set(s(1, 1), 0.5);
        let mut agent = QtAgent::with_weights(QtVariant::Maqt, AgentParams::default(), table);
        assert_eq!(agent.decide(), Decision::Silent);
        let actives = agent.actives().to_vec();
        let before: Vec<f64> = actives.iter().map(|a| agent.weights().as_slice()[a.index()]).collect();
        let sum_before = agent.weights().sum();
        agent.observe(Feedback::Success, Decision::Silent, &mut rng()).unwrap();
        // Normalization hands part of the loss back, but never all of it to the active path.
        let after: f64 = actives.iter().map(|a| agent.weights().as_slice()[a.index()]).sum();
        assert!(after < before.iter().sum::<f64>());
        assert!((agent.weights().sum() - sum_before).abs() < 1e-9);
    }

    #[test]
    fn transmit_on_idle_is_a_protocol_violation() {
        let mut agent = QtAgent::new(QtVariant::Maqt, 2, AgentParams::default(), &mut rng()).unwrap();
        let d = agent.decide();
        assert!(d.transmits());
        assert!(matches!(agent.observe(Feedback::Idle, d, &mut rng()), Err(Error::ProtocolViolation)));
    }

    #[test]
    fn collision_unsettles_and_pipeline_resumes() {
        let mut table = WeightTable::filled(2, 0.01).unwrap();
        table.set(s(1, 1), 1.0);
        let mut agent = QtAgent::with_weights(QtVariant::Maqt, AgentParams::default(), table);
        let mut r = rng();
        for _ in 0..4 {
            let d = agent.decide();
            agent.observe(Feedback::Success, d, &mut r).unwrap();
        }
        assert!(agent.is_settled());

        // Settled slots touch no weights.
        let touches = agent.weights().touches();
        let d = agent.decide();
        agent.observe(Feedback::Success, d, &mut r).unwrap();
        assert_eq!(agent.weights().touches(), touches);
        assert_eq!(agent.step_counts().total(), 0);

        // A newcomer collides on our slot.
        let d = agent.decide();
        agent.observe(Feedback::Collision, d, &mut r).unwrap();
        assert!(!agent.is_settled());
        assert_eq!(agent.success_streak(), 0);
        assert_eq!(agent.weights().touches(), touches);

        let d = agent.decide();
        agent.observe(Feedback::Collision, d, &mut r).unwrap();
        assert!(agent.weights().touches() > touches);
        assert!(agent.step_counts().total() > 0);
    }

    #[test]
    fn step_counts_respect_complexity_bounds() {
        let depth = 5;
        let size = tree_size(depth) as u64;
        let mut r = rng();
        for variant in [QtVariant::AlohaQt, QtVariant::Maqt] {
            let mut agent = QtAgent::new(variant, depth, AgentParams::default(), &mut r).unwrap();
            for slot in 0..500 {
                let d = agent.decide();
                let f = if slot % 3 == 0 {
                    Feedback::Collision
                } else if d.transmits() {
                    Feedback::Success
                } else {
                    Feedback::Idle
                };
                agent.observe(f, d, &mut r).unwrap();
                let c = agent.step_counts();
                let select_bound = if variant == QtVariant::AlohaQt { 2 * size } else { size };
                assert_eq!(c.select, select_bound);
                assert_eq!(c.update, depth as u64 + 1);
                match variant {
                    QtVariant::AlohaQt => assert!(c.relinquish == 0 || c.relinquish == depth as u64 + 1),
                    QtVariant::Maqt => assert_eq!(c.relinquish, 0),
                }
                assert!(c.normalize <= size);
                assert_eq!(c.bound, size);
            }
        }
    }
}
