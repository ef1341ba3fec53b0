use thiserror::Error;

use crate::policy_tree::Schedule;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schedule offset {offset} out of range for level {level}")]
    InvalidSchedule { offset: u64, level: u32 },

    #[error("schedule {0} is a leaf of a depth-{1} tree and has no children")]
    NoChildren(Schedule, u32),

    #[error("leaf levels {levels:?} do not form a full binary tree (Kraft sum != 1)")]
    InvalidRealization { levels: Vec<u32> },

    #[error("{n} users cannot settle in a depth-{depth} tree")]
    Infeasible { n: usize, depth: u32 },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("protocol violation: transmitted but feedback reported an idle slot")]
    ProtocolViolation,

    #[error("no ADRA parameters for {0} active users")]
    MissingAdraEntry(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
