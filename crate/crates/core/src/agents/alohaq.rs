//! ALOHA-Q: each user learns one slot in a fixed frame of `F` slots.

use rand::Rng;

use super::{Decision, Feedback};
use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 0.1;

/// Upper bound of the uniform noise used to break initial Q-value ties.
const INIT_NOISE: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct AlohaQAgent {
    q_values: Vec<f64>,
    chosen_slot: usize,
    counter: u64,
    learning_rate: f64,
}

impl AlohaQAgent {
    pub fn new<R: Rng + ?Sized>(frame_size: usize, learning_rate: f64, rng: &mut R) -> Result<Self> {
        if frame_size == 0 {
            return Err(Error::InvalidParams("ALOHA-Q frame size must be positive".into()));
        }
        if !(learning_rate > 0.0 && learning_rate <= 1.0) {
            return Err(Error::InvalidParams("ALOHA-Q learning rate must lie in (0, 1]".into()));
        }
        let q_values: Vec<f64> = (0..frame_size).map(|_| rng.gen::<f64>() * INIT_NOISE).collect();
        let mut agent = Self { q_values, chosen_slot: 0, counter: 0, learning_rate };
        agent.chosen_slot = agent.argmax();
        Ok(agent)
    }

    pub fn frame_size(&self) -> usize {
        self.q_values.len()
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q_values
    }

    pub fn chosen_slot(&self) -> usize {
        self.chosen_slot
    }

    /// Position of the current slot inside the frame.
    pub fn frame_position(&self) -> usize {
        (self.counter % self.q_values.len() as u64) as usize
    }

    fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &q) in self.q_values.iter().enumerate().skip(1) {
            if q > self.q_values[best] {
                best = i;
            }
        }
        best
    }

    pub fn decide(&self) -> Decision {
        Decision::from(self.frame_position() == self.chosen_slot)
    }

    pub fn observe(&mut self, feedback: Feedback, decision: Decision) -> Result<()> {
        if decision.transmits() {
            let reward = match feedback {
                Feedback::Success => 1.0,
                Feedback::Collision => -1.0,
                Feedback::Idle => return Err(Error::ProtocolViolation),
            };
            let q = &mut self.q_values[self.chosen_slot];
            *q += self.learning_rate * (reward - *q);
        }
        self.counter += 1;
        if self.frame_position() == 0 {
            self.chosen_slot = self.argmax();
        }
        Ok(())
    }
}
