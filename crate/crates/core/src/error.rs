use thiserror::Error;

use crate::bounds::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),

    #[error("division by zero in the prime field")]
    DivisionByZero,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("evaluation points are not pairwise distinct")]
    DegenerateNodes,

    #[error("group index {index} out of range (only {groups} groups)")]
    BadGroupIndex { index: usize, groups: usize },

    #[error("pair ({0}, {1}) is not ordered i < j")]
    BadPairOrder(usize, usize),

    #[error("group size {v} is invalid for {servers} servers")]
    BadGroupSize { v: usize, servers: usize },

    #[error("straggler count s = {s} is not below H/2 = {servers}/2")]
    InfeasibleResiliency { s: usize, servers: usize },

    #[error("parameters rejected: {}", list_violations(.0))]
    InfeasibleParams(Vec<Violation>),

    #[error("gradient length {p} is not divisible by k = {k} and padding is disabled")]
    Chunking { p: usize, k: usize },

    #[error("client {client} shares only {usable} usable groups with receiver {receiver}, {needed} needed")]
    PlanInfeasible {
        receiver: usize,
        client: usize,
        usable: usize,
        needed: usize,
    },

    #[error("server {server} lacks the share of client {client} required by the plan")]
    PlanViolation { server: usize, client: usize },

    #[error("receiver {receiver} cannot decode: {reason}")]
    DecodeUnderdetermined { receiver: usize, reason: String },

    #[error("conflicting values received for group {group}")]
    InconsistentShares { group: usize },

    #[error("colluder set of size {size} exceeds the threshold {threshold}")]
    ThresholdExceeded { size: usize, threshold: usize },

    #[error("{worlds} worlds exceed the enumeration budget of {budget}")]
    TooLargeToEnumerate { worlds: u128, budget: u128 },

    #[error("malformed input: {0}")]
    Parse(String),
}

fn list_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
