//! Medium-access policies behind one per-slot interface.

mod alohaq;
mod baselines;
mod qt;

pub use alohaq::{AlohaQAgent, DEFAULT_LEARNING_RATE};
pub use baselines::{adra_decide, rr_schedule, sa_decide, AdraParams, AdraTable};
pub use qt::{QtAgent, QtVariant, StepCounts};

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::policy_tree::AgentParams;

/// Ternary slot outcome broadcast by the access point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    Idle,
    Success,
    Collision,
}

impl Feedback {
    pub fn from_transmitters(count: usize) -> Self {
        match count {
            0 => Feedback::Idle,
            1 => Feedback::Success,
            _ => Feedback::Collision,
        }
    }
}

impl fmt::Display for Feedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Feedback::Idle => "idle",
            Feedback::Success => "success",
            Feedback::Collision => "collision",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Decision {
    Transmit,
    Silent,
}

impl Decision {
    pub fn transmits(self) -> bool {
        self == Decision::Transmit
    }
}

impl From<bool> for Decision {
    fn from(transmit: bool) -> Self {
        if transmit {
            Decision::Transmit
        } else {
            Decision::Silent
        }
    }
}

fn default_learning_rate() -> f64 {
    DEFAULT_LEARNING_RATE
}

/// Protocol selector with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Protocol {
    Maqt {
        #[serde(default)]
        params: AgentParams,
    },
    AlohaQt {
        #[serde(default)]
        params: AgentParams,
    },
    AlohaQ {
        #[serde(default = "default_learning_rate")]
        learning_rate: f64,
    },
    SlottedAloha,
    Adra {
        #[serde(default)]
        table: AdraTable,
    },
    RoundRobin,
}

impl Protocol {
    pub const NAMES: [&'static str; 6] = ["maqt", "aloha-qt", "aloha-q", "slotted-aloha", "adra", "round-robin"];

    /// Protocol with default parameters, by its kebab-case name.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "maqt" => Protocol::Maqt { params: AgentParams::default() },
            "aloha-qt" => Protocol::AlohaQt { params: AgentParams::default() },
            "aloha-q" => Protocol::AlohaQ { learning_rate: DEFAULT_LEARNING_RATE },
            "slotted-aloha" => Protocol::SlottedAloha,
            "adra" => Protocol::Adra { table: AdraTable::builtin() },
            "round-robin" => Protocol::RoundRobin,
            other => {
                return Err(Error::Config(format!(
                    "unknown protocol `{other}` (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Maqt { .. } => "maqt",
            Protocol::AlohaQt { .. } => "aloha-qt",
            Protocol::AlohaQ { .. } => "aloha-q",
            Protocol::SlottedAloha => "slotted-aloha",
            Protocol::Adra { .. } => "adra",
            Protocol::RoundRobin => "round-robin",
        }
    }

    pub fn params(&self) -> Option<&AgentParams> {
        match self {
            Protocol::Maqt { params } | Protocol::AlohaQt { params } => Some(params),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut AgentParams> {
        match self {
            Protocol::Maqt { params } | Protocol::AlohaQt { params } => Some(params),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Protocol::Maqt { params } | Protocol::AlohaQt { params } => params.validate(),
            Protocol::AlohaQ { learning_rate } if !(*learning_rate > 0.0 && *learning_rate <= 1.0) => {
                Err(Error::InvalidParams("ALOHA-Q learning rate must lie in (0, 1]".into()))
            }
            Protocol::Adra { table } if table.is_empty() => Err(Error::InvalidParams("ADRA table is empty".into())),
            _ => Ok(()),
        }
    }

    /// Freshly initialized agent for a user that just became active.
    pub fn spawn<R: Rng + ?Sized>(&self, depth: u32, rng: &mut R) -> Result<Agent> {
        Ok(match self {
            Protocol::Maqt { params } => Agent::Qt(QtAgent::new(QtVariant::Maqt, depth, *params, rng)?),
            Protocol::AlohaQt { params } => Agent::Qt(QtAgent::new(QtVariant::AlohaQt, depth, *params, rng)?),
            Protocol::AlohaQ { learning_rate } => {
                Agent::AlohaQ(AlohaQAgent::new(1usize << depth, *learning_rate, rng)?)
            }
            Protocol::SlottedAloha => Agent::SlottedAloha,
            Protocol::Adra { .. } => Agent::Adra,
            Protocol::RoundRobin => Agent::RoundRobin,
        })
    }
}

/// What the simulator tells an agent at the start of a slot. The active-user
/// count, ADRA table and round-robin turn are genie information that only the
/// baselines use.
#[derive(Clone, Copy, Debug)]
pub struct SlotContext<'a> {
    pub active_users: usize,
    pub aoi: u64,
    pub rr_turn: bool,
    pub adra: Option<&'a AdraTable>,
}

/// Per-user protocol state.
#[derive(Clone, Debug)]
pub enum Agent {
    Qt(QtAgent),
    AlohaQ(AlohaQAgent),
    SlottedAloha,
    Adra,
    RoundRobin,
}

impl Agent {
    pub fn decide<R: Rng + ?Sized>(&mut self, ctx: &SlotContext<'_>, rng: &mut R) -> Result<Decision> {
        Ok(match self {
            Agent::Qt(agent) => agent.decide(),
            Agent::AlohaQ(agent) => agent.decide(),
            Agent::SlottedAloha => sa_decide(ctx.active_users, rng),
            Agent::Adra => {
                let table = ctx.adra.ok_or_else(|| Error::Config("ADRA agent without a parameter table".into()))?;
                adra_decide(ctx.aoi, table.get(ctx.active_users)?, rng)
            }
            Agent::RoundRobin => Decision::from(ctx.rr_turn),
        })
    }

    pub fn observe<R: Rng + ?Sized>(&mut self, feedback: Feedback, decision: Decision, rng: &mut R) -> Result<()> {
        match self {
            Agent::Qt(agent) => agent.observe(feedback, decision, rng),
            Agent::AlohaQ(agent) => agent.observe(feedback, decision),
            _ if decision.transmits() && feedback == Feedback::Idle => Err(Error::ProtocolViolation),
            _ => Ok(()),
        }
    }

    pub fn as_qt(&self) -> Option<&QtAgent> {
        match self {
            Agent::Qt(agent) => Some(agent),
            _ => None,
        }
    }

    pub fn as_aloha_q(&self) -> Option<&AlohaQAgent> {
        match self {
            Agent::AlohaQ(agent) => Some(agent),
            _ => None,
        }
    }

    /// Number of learned weights the agent stores.
    pub fn weight_count(&self) -> usize {
        match self {
            Agent::Qt(agent) => agent.weights().len(),
            Agent::AlohaQ(agent) => agent.frame_size(),
            _ => 0,
        }
    }
}
