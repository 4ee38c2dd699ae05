//! Closed-form load bounds and the parameter feasibility gate.
//!
//! Loads are exact rationals. With `G = floor(H/v)` groups and recovery
//! dimension `k = G - floor(2s/v) - T_h`:
//!
//! ```text
//! lower:  C_up   >= H / (H - 2s - T_h)
//!         C_down >= (H - 2s) / (H - 2s - T_h)
//! LCM:    C_up    = G v / k
//!         C_down <= (k + T_h) / k * (E - 1 - ceil((E - 1) / B) + v)
//!         B       = C(G - max(s - G (v - 1), 0), G - floor(2s/v))
//! ```

use std::fmt;

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::ffield::is_prime;
use crate::network::binomial;
use crate::protocol::Params;

pub type Load = Ratio<u64>;

/// One failed feasibility constraint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// `s < H/2` is required for any resilient protocol.
    Resiliency { stragglers: usize, servers: usize },
    /// Server collusion limit `T_h <= H - 2s - 1`.
    ServerCollusion { colluders: usize, limit: i64 },
    /// Client collusion limit `T_c <= E - 2`.
    ClientCollusion { colluders: usize, limit: i64 },
    /// Group size must satisfy `1 <= v <= H`.
    GroupSize { group_size: usize, servers: usize },
    /// `k = floor(H/v) - floor(2s/v) - T_h >= 1`.
    RecoveryDimension { k: i64 },
    /// The field must hold `k + T_h + floor(H/v)` distinct points.
    FieldSize { prime: u64, needed: u64 },
    NotPrime { prime: u64 },
    EmptyGradient,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Resiliency { stragglers, servers } => write!(
                f,
                "resiliency requires s < H/2 (s = {stragglers}, H = {servers})"
            ),
            Violation::ServerCollusion { colluders, limit } => write!(
                f,
                "server collusion limit T_h <= H - 2s - 1 = {limit} violated (T_h = {colluders})"
            ),
            Violation::ClientCollusion { colluders, limit } => write!(
                f,
                "client collusion limit T_c <= E - 2 = {limit} violated (T_c = {colluders})"
            ),
            Violation::GroupSize { group_size, servers } => {
                write!(f, "group size v = {group_size} must lie in 1..={servers}")
            }
            Violation::RecoveryDimension { k } => write!(
                f,
                "group size constraint floor(H/v) - floor(2s/v) - T_h >= 1 violated (k = {k})"
            ),
            Violation::FieldSize { prime, needed } => write!(
                f,
                "field of size {prime} cannot hold {needed} distinct evaluation points"
            ),
            Violation::NotPrime { prime } => write!(f, "field size {prime} is not prime"),
            Violation::EmptyGradient => write!(f, "gradient length must be positive"),
        }
    }
}

/// Every violated constraint, in a fixed order. Empty means feasible.
pub fn violations(params: &Params) -> Vec<Violation> {
    let h = params.servers as i64;
    let s = params.stragglers as i64;
    let mut out = Vec::new();
    if 2 * s >= h {
        out.push(Violation::Resiliency {
            stragglers: params.stragglers,
            servers: params.servers,
        });
    }
    let th_limit = h - 2 * s - 1;
    if params.server_colluders as i64 > th_limit {
        out.push(Violation::ServerCollusion {
            colluders: params.server_colluders,
            limit: th_limit,
        });
    }
    let tc_limit = params.clients as i64 - 2;
    if params.client_colluders as i64 > tc_limit {
        out.push(Violation::ClientCollusion {
            colluders: params.client_colluders,
            limit: tc_limit,
        });
    }
    if params.group_size == 0 || params.group_size > params.servers {
        out.push(Violation::GroupSize {
            group_size: params.group_size,
            servers: params.servers,
        });
    } else {
        let k = params.recovery_dim_signed();
        if k < 1 {
            out.push(Violation::RecoveryDimension { k });
        } else {
            let needed = (k as u64) + params.server_colluders as u64 + params.groups() as u64;
            if params.prime < needed {
                out.push(Violation::FieldSize {
                    prime: params.prime,
                    needed,
                });
            }
        }
    }
    if !is_prime(params.prime) {
        out.push(Violation::NotPrime {
            prime: params.prime,
        });
    }
    if params.grad_len == 0 {
        out.push(Violation::EmptyGradient);
    }
    out
}

pub fn validate_params(params: &Params) -> Result<()> {
    let v = violations(params);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::InfeasibleParams(v))
    }
}

/// Lower bounds and the loads achieved by LCM, side by side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundSet {
    pub c_up_lower: Load,
    pub c_down_lower: Load,
    pub c_up_lcm: Load,
    pub c_down_lcm: Load,
}

pub fn bound_set(params: &Params) -> Result<BoundSet> {
    let (c_up_lower, c_down_lower) = lower_bounds(params)?;
    let (c_up_lcm, c_down_lcm) = achievable_loads(params)?;
    Ok(BoundSet {
        c_up_lower,
        c_down_lower,
        c_up_lcm,
        c_down_lcm,
    })
}

/// `(H / (H - 2s - T_h), (H - 2s) / (H - 2s - T_h))`.
pub fn lower_bounds(params: &Params) -> Result<(Load, Load)> {
    let h = params.servers as i64;
    let s = params.stragglers as i64;
    let den = h - 2 * s - params.server_colluders as i64;
    if den < 1 {
        return Err(Error::InfeasibleParams(vec![Violation::ServerCollusion {
            colluders: params.server_colluders,
            limit: h - 2 * s - 1,
        }]));
    }
    let den = den as u64;
    Ok((
        Ratio::new(h as u64, den),
        Ratio::new((h - 2 * s) as u64, den),
    ))
}

/// Balls-and-bins guarantee on the size of the aggregated set:
/// `ceil((E - 1) / B)`.
pub fn aggregation_lower_bound(params: &Params) -> u64 {
    let g = params.groups() as i64;
    let v = params.group_size as i64;
    let s = params.stragglers as i64;
    let dead = (s - g * (v - 1)).max(0);
    let bins = binomial((g - dead).max(0) as u64, params.nodes() as u64);
    let others = params.clients.saturating_sub(1) as u128;
    match bins {
        Some(0) => 0,
        Some(b) => others.div_ceil(b) as u64,
        // more bins than any client count
        None => u64::from(others > 0),
    }
}

/// `(C_up^LCM, C_down^LCM)`.
pub fn achievable_loads(params: &Params) -> Result<(Load, Load)> {
    validate_params(params)?;
    let g = params.groups() as u64;
    let v = params.group_size as u64;
    let k = params.recovery_dim() as u64;
    let nodes = params.nodes() as u64;
    let e = params.clients as u64;
    let c_up = Ratio::new(g * v, k);
    let c_down = Ratio::new(nodes * (e - 1 - aggregation_lower_bound(params) + v), k);
    Ok((c_up, c_down))
}

/// Specialisation at `v = 1`: `C_up = H / (H - 2s - T_h)` and
/// `C_down <= (H - 2s) / (H - 2s - T_h) * (E - ceil((E - 1) / C(H - s, s)))`.
pub fn unit_group_loads(params: &Params) -> Result<(Load, Load)> {
    let h = params.servers as u64;
    let s = params.stragglers as u64;
    let t_h = params.server_colluders as u64;
    let e = params.clients as u64;
    let den = (h - 2 * s)
        .checked_sub(t_h)
        .filter(|d| *d > 0)
        .ok_or_else(|| Error::InfeasibleParams(vec![Violation::RecoveryDimension { k: 0 }]))?;
    let bins = binomial(h - s, s).unwrap_or(u128::MAX);
    let m = ((e - 1) as u128).div_ceil(bins) as u64;
    Ok((Ratio::new(h, den), Ratio::new((h - 2 * s) * (e - m), den)))
}

/// Specialisation at `v = 2s + 1`: both loads equal
/// `floor(H / (2s+1)) (2s+1) / (floor(H / (2s+1)) - T_h)`.
pub fn wide_group_loads(params: &Params) -> Result<(Load, Load)> {
    let width = 2 * params.stragglers as u64 + 1;
    let g = params.servers as u64 / width;
    let t_h = params.server_colluders as u64;
    let den = g
        .checked_sub(t_h)
        .filter(|d| *d > 0)
        .ok_or_else(|| Error::InfeasibleParams(vec![Violation::RecoveryDimension { k: 0 }]))?;
    let load = Ratio::new(g * width, den);
    Ok((load, load))
}
