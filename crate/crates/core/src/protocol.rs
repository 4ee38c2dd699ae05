//! One LCM aggregation round.
//!
//! Clients mask their gradients, split the masked vector into `k` chunks,
//! append `T_h` noise vectors and send the evaluation of the resulting
//! interpolant at `alpha_g` to every server of group `g`. For the downlink,
//! each receiver picks `k + T_h` groups that jointly hold the shares of as
//! many other clients as possible (the aggregated set `M`); servers in those
//! groups send partial sums over `M`, and the shares of every remaining
//! client are forwarded one by one. The receiver interpolates each
//! polynomial, adds its own masked gradient and the masks cancel.
//!
//! Within a group, the partial sum over `M` may be split across several
//! servers of that group when no single server holds every share. The
//! receiver adds the parts back together before interpolating.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::bounds::{validate_params, Load};
use crate::error::{Error, Result};
use crate::ffield::{Fe, Field, FieldVec};
use crate::lagrange::{encode_client, interpolate_to_targets, EvalPoints};
use crate::masking::{client_noise, mix64, ClientSecret, MaskSet};
use crate::network::{binomial, combinations, make_groups, FailureTable, Grouping, VisibleTable};

/// Candidate evaluations above which the group-set search turns greedy.
pub const EXACT_SEARCH_BUDGET: u128 = 1_000_000;

/// Protocol constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Params {
    /// `E`
    pub clients: usize,
    /// `H`
    pub servers: usize,
    /// `s`, maximum straggling links per client
    pub stragglers: usize,
    /// `T_h`
    pub server_colluders: usize,
    /// `T_c`
    pub client_colluders: usize,
    /// `v`, servers per group
    pub group_size: usize,
    /// `p`, gradient length in field symbols
    pub grad_len: usize,
    /// field modulus
    pub prime: u64,
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        validate_params(self)
    }

    /// `floor(H / v)`
    pub fn groups(&self) -> usize {
        self.servers / self.group_size.max(1)
    }

    pub(crate) fn recovery_dim_signed(&self) -> i64 {
        let v = self.group_size.max(1);
        self.groups() as i64 - (2 * self.stragglers / v) as i64 - self.server_colluders as i64
    }

    /// `k = floor(H/v) - floor(2s/v) - T_h`; zero when infeasible.
    pub fn recovery_dim(&self) -> usize {
        self.recovery_dim_signed().max(0) as usize
    }

    /// `k + T_h = floor(H/v) - floor(2s/v)`, the evaluations per polynomial.
    pub fn nodes(&self) -> usize {
        self.recovery_dim() + self.server_colluders
    }

    /// Gradient length rounded up to a multiple of `k`.
    pub fn padded_len(&self) -> usize {
        let k = self.recovery_dim().max(1);
        self.grad_len.div_ceil(k) * k
    }

    pub fn needs_padding(&self) -> bool {
        self.padded_len() != self.grad_len
    }

    /// Length of one chunk, share or downlink payload.
    pub fn chunk_len(&self) -> usize {
        self.padded_len() / self.recovery_dim().max(1)
    }

    pub fn field(&self) -> Result<Field> {
        Field::new(self.prime)
    }

    pub fn grouping(&self) -> Result<Grouping> {
        make_groups(self.servers, self.group_size)
    }

    /// `beta_r = r`, `alpha_j = k + T_h + j`.
    pub fn points(&self) -> Result<EvalPoints> {
        EvalPoints::canonical(&self.field()?, self.nodes(), self.groups())
    }
}

/// One coded share, sent to every server of `group`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UplinkShare {
    pub client: usize,
    pub group: usize,
    pub payload: FieldVec,
}

/// Encodes a client's masked gradient into one share per group.
pub fn client_encode(params: &Params, client: &ClientSecret, points: &EvalPoints) -> Result<Vec<UplinkShare>> {
    let k = params.recovery_dim();
    if k == 0 || !client.masked.len().is_multiple_of(k) {
        return Err(Error::Chunking {
            p: client.masked.len(),
            k,
        });
    }
    let field = params.field()?;
    let chunks = client.masked.chunks(k)?;
    let shares = encode_client(&field, &chunks, &client.noise, points)?;
    Ok(shares
        .into_iter()
        .enumerate()
        .map(|(group, payload)| UplinkShare {
            client: client.client_id,
            group,
            payload,
        })
        .collect())
}

/// `u^{j,m}`: what server `j` received, one slot per client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inbox {
    pub server: usize,
    pub group: usize,
    pub entries: Vec<Option<FieldVec>>,
}

/// Downlink plan for one receiver.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggregationPlan {
    pub receiver: usize,
    /// The `k + T_h` groups carrying the partial sums; empty when `M` is.
    pub agg_groups: Vec<usize>,
    /// `M`, excluding the receiver.
    pub agg_set: Vec<usize>,
    /// Per group in `agg_groups`: which server sums which part of `M`.
    pub agg_parts: BTreeMap<usize, Vec<(usize, Vec<usize>)>>,
    /// Clients outside `M`: `(group, server)` pairs forwarding their shares.
    pub forwards: BTreeMap<usize, Vec<(usize, usize)>>,
    /// Largest client set found sharing one group set, before sets of size
    /// one are turned into plain forwards.
    pub best_cover: usize,
    /// Whether the group sets were searched exhaustively.
    pub exact: bool,
}

impl AggregationPlan {
    /// Servers executing each group's partial sum.
    pub fn agg_servers(&self) -> BTreeMap<usize, Vec<usize>> {
        self.agg_parts
            .iter()
            .map(|(g, parts)| (*g, parts.iter().map(|(s, _)| *s).collect()))
            .collect()
    }

    pub fn message_count(&self) -> usize {
        self.agg_parts.values().map(Vec::len).sum::<usize>()
            + self.forwards.values().map(Vec::len).sum::<usize>()
    }
}

/// Plans the downlink for `visible.observer()` from its visible columns only.
///
/// Group sets `S` of size `k + T_h` are ranked by the size of
/// `M(S) = {l : every group of S is usable between l and the receiver}`,
/// then by the number of downlink messages, then lexicographically. The
/// search is exhaustive while `C(G, k+T_h) * v^(k+T_h)` stays within
/// [`EXACT_SEARCH_BUDGET`] and greedy beyond. An aggregated set of a single
/// client is no cheaper than forwarding it, so it is forwarded instead.
pub fn plan_downlink(params: &Params, visible: &VisibleTable, grouping: &Grouping) -> Result<AggregationPlan> {
    let receiver = visible.observer();
    let need = params.nodes();
    let others: Vec<usize> = (0..visible.clients()).filter(|&l| l != receiver).collect();

    let mut usable: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &l in &others {
        let u = visible.usable_groups(grouping, l);
        if u.len() < need {
            return Err(Error::PlanInfeasible {
                receiver,
                client: l,
                usable: u.len(),
                needed: need,
            });
        }
        usable.insert(l, u);
    }
    let members = |set: &[usize]| -> Vec<usize> {
        others
            .iter()
            .copied()
            .filter(|l| set.iter().all(|g| usable[l].binary_search(g).is_ok()))
            .collect()
    };

    let g = grouping.len();
    let candidates = binomial(g as u64, need as u64)
        .and_then(|c| c.checked_mul((grouping.group_size() as u128).checked_pow(need as u32)?));
    let exact = candidates.is_some_and(|c| c <= EXACT_SEARCH_BUDGET);

    let (mut agg_groups, mut agg_set) = if exact {
        let sets = combinations(g, need);
        let sizes: Vec<usize> = sets.iter().map(|s| members(s).len()).collect();
        let best = sizes.iter().copied().max().unwrap_or(0);
        let mut chosen: Option<(usize, usize)> = None;
        for (idx, _) in sizes.iter().enumerate().filter(|(_, n)| **n == best) {
            let cost = if best >= 2 {
                let m = members(&sets[idx]);
                cover_parts(visible, grouping, &sets[idx], &m)
                    .values()
                    .map(Vec::len)
                    .sum()
            } else {
                0
            };
            if chosen.is_none_or(|(c, _)| cost < c) {
                chosen = Some((cost, idx));
            }
            if best < 2 {
                break;
            }
        }
        match chosen {
            Some((_, idx)) => (sets[idx].clone(), members(&sets[idx])),
            None => (Vec::new(), Vec::new()),
        }
    } else {
        let mut s: Vec<usize> = Vec::with_capacity(need);
        for _ in 0..need {
            let next = (0..g)
                .filter(|c| !s.contains(c))
                .max_by_key(|&c| {
                    let mut t = s.clone();
                    t.push(c);
                    (members(&t).len(), std::cmp::Reverse(c))
                })
                .expect("at least k + T_h groups exist");
            s.push(next);
        }
        s.sort_unstable();
        let m = members(&s);
        (s, m)
    };

    let best_cover = agg_set.len();
    if agg_set.len() < 2 {
        agg_groups.clear();
        agg_set.clear();
    }
    let agg_parts = if agg_set.is_empty() {
        BTreeMap::new()
    } else {
        cover_parts(visible, grouping, &agg_groups, &agg_set)
    };

    let mut forwards = BTreeMap::new();
    for &l in others.iter().filter(|l| agg_set.binary_search(l).is_err()) {
        let route = usable[&l]
            .iter()
            .take(need)
            .map(|&grp| {
                let server = grouping
                    .members(grp)
                    .iter()
                    .copied()
                    .find(|&h| visible.works(l, h) == Some(true))
                    .expect("usable group has a linked server");
                (grp, server)
            })
            .collect();
        forwards.insert(l, route);
    }

    Ok(AggregationPlan {
        receiver,
        agg_groups,
        agg_set,
        agg_parts,
        forwards,
        best_cover,
        exact,
    })
}

/// For every group, a smallest set of receiver-linked servers jointly holding
/// the shares of all of `set`. Each client is summed at the lowest-id server
/// of the cover that has it.
fn cover_parts(
    visible: &VisibleTable,
    grouping: &Grouping,
    groups: &[usize],
    set: &[usize],
) -> BTreeMap<usize, Vec<(usize, Vec<usize>)>> {
    groups
        .iter()
        .map(|&grp| (grp, min_cover(visible, grouping.members(grp), set)))
        .collect()
}

const MAX_EXACT_COVER: usize = 16;

fn min_cover(visible: &VisibleTable, servers: &[usize], set: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let holds: Vec<(usize, Vec<bool>)> = servers
        .iter()
        .filter_map(|&h| {
            let col = visible.column(h)?;
            Some((h, set.iter().map(|&l| col[l]).collect()))
        })
        .collect();
    let covers = |pick: &[usize]| (0..set.len()).all(|i| pick.iter().any(|&c| holds[c].1[i]));

    let pick: Vec<usize> = if holds.len() <= MAX_EXACT_COVER {
        (1..=holds.len())
            .flat_map(|size| combinations(holds.len(), size))
            .find(|p| covers(p))
            .unwrap_or_default()
    } else {
        let mut pick = Vec::new();
        let mut left: Vec<bool> = vec![true; set.len()];
        while left.iter().any(|&b| b) {
            let best = (0..holds.len())
                .max_by_key(|&c| {
                    let gain = (0..set.len()).filter(|&i| left[i] && holds[c].1[i]).count();
                    (gain, std::cmp::Reverse(c))
                })
                .expect("non-empty");
            for (i, l) in left.iter_mut().enumerate() {
                if holds[best].1[i] {
                    *l = false;
                }
            }
            pick.push(best);
        }
        pick.sort_unstable();
        pick
    };

    let mut parts: Vec<(usize, Vec<usize>)> = pick.iter().map(|&c| (holds[c].0, Vec::new())).collect();
    for (i, &l) in set.iter().enumerate() {
        let slot = pick.iter().position(|&c| holds[c].1[i]).expect("cover");
        parts[slot].1.push(l);
    }
    parts.retain(|(_, clients)| !clients.is_empty());
    parts
}

/// What a downlink message carries.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum DownlinkKind {
    /// Sum of the listed clients' shares for the message's group.
    Aggregate(Vec<usize>),
    /// One client's share, verbatim.
    Forward(usize),
}

/// `W_i^{j,m}`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DownlinkMsg {
    pub server: usize,
    pub receiver: usize,
    pub group: usize,
    pub kind: DownlinkKind,
    pub payload: FieldVec,
}

/// Runs a receiver's plan against the servers' inboxes.
pub fn server_execute(params: &Params, plan: &AggregationPlan, inboxes: &[Inbox]) -> Result<Vec<DownlinkMsg>> {
    let field = params.field()?;
    let by_server: BTreeMap<usize, &Inbox> = inboxes.iter().map(|b| (b.server, b)).collect();
    let share = |server: usize, client: usize| -> Result<&FieldVec> {
        by_server
            .get(&server)
            .and_then(|b| b.entries.get(client))
            .and_then(Option::as_ref)
            .ok_or(Error::PlanViolation { server, client })
    };

    let mut out = Vec::new();
    for (&group, parts) in &plan.agg_parts {
        for (server, clients) in parts {
            let mut acc = FieldVec::zeros(params.chunk_len());
            for &l in clients {
                acc = field.add_vec(&acc, share(*server, l)?)?;
            }
            out.push(DownlinkMsg {
                server: *server,
                receiver: plan.receiver,
                group,
                kind: DownlinkKind::Aggregate(clients.clone()),
                payload: acc,
            });
        }
    }
    for (&client, route) in &plan.forwards {
        for &(group, server) in route {
            out.push(DownlinkMsg {
                server,
                receiver: plan.receiver,
                group,
                kind: DownlinkKind::Forward(client),
                payload: share(server, client)?.clone(),
            });
        }
    }
    Ok(out)
}

/// Recovers `sum_i g_i` from the messages delivered to `own.client_id`.
pub fn client_decode(
    params: &Params,
    msgs: &[DownlinkMsg],
    own: &ClientSecret,
    points: &EvalPoints,
) -> Result<FieldVec> {
    let field = params.field()?;
    let receiver = own.client_id;
    let k = params.recovery_dim();
    let need = params.nodes();
    let width = params.chunk_len();
    let underdetermined = |reason: String| Error::DecodeUnderdetermined { receiver, reason };

    // group -> part -> payload, and client -> group -> payload
    let mut aggregates: BTreeMap<usize, BTreeMap<Vec<usize>, &FieldVec>> = BTreeMap::new();
    let mut forwards: BTreeMap<usize, BTreeMap<usize, &FieldVec>> = BTreeMap::new();
    for m in msgs.iter().filter(|m| m.receiver == receiver) {
        if m.payload.len() != width {
            return Err(Error::Dimension {
                expected: width,
                got: m.payload.len(),
            });
        }
        let slot = match &m.kind {
            DownlinkKind::Aggregate(part) => {
                let mut part = part.clone();
                part.sort_unstable();
                aggregates.entry(m.group).or_default().entry(part)
            }
            DownlinkKind::Forward(l) => {
                // keyed by a one-element vector so both maps share the logic
                let map = forwards.entry(*l).or_default();
                match map.get(&m.group) {
                    Some(prev) if *prev != &m.payload => {
                        return Err(Error::InconsistentShares { group: m.group })
                    }
                    _ => {
                        map.insert(m.group, &m.payload);
                    }
                }
                continue;
            }
        };
        match slot {
            std::collections::btree_map::Entry::Occupied(e) if *e.get() != &m.payload => {
                return Err(Error::InconsistentShares { group: m.group })
            }
            std::collections::btree_map::Entry::Occupied(_) => {}
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(&m.payload);
            }
        }
    }

    let agg_set: BTreeSet<usize> = aggregates
        .values()
        .flat_map(|parts| parts.keys().flatten().copied())
        .collect();
    let mut accounted: BTreeSet<usize> = agg_set.clone();
    for &l in forwards.keys() {
        if !accounted.insert(l) {
            return Err(underdetermined(format!("client {l} is both aggregated and forwarded")));
        }
    }
    accounted.insert(receiver);
    if accounted.len() != params.clients || accounted.iter().any(|&c| c >= params.clients) {
        let missing: Vec<usize> = (0..params.clients).filter(|c| !accounted.contains(c)).collect();
        return Err(underdetermined(format!("no messages for clients {missing:?}")));
    }

    let targets = &points.betas()[..k];
    let mut total: Vec<FieldVec> = own.masked.chunks(k)?;

    let mut add_recovered = |samples: Vec<(Fe, FieldVec)>| -> Result<()> {
        let recovered = interpolate_to_targets(&field, &samples, need, targets)?;
        for (acc, r) in total.iter_mut().zip(&recovered) {
            *acc = field.add_vec(acc, r)?;
        }
        Ok(())
    };

    if !agg_set.is_empty() {
        let mut samples = Vec::new();
        for (&group, parts) in &aggregates {
            let mut seen = BTreeSet::new();
            for part in parts.keys() {
                for &l in part {
                    if !seen.insert(l) {
                        return Err(Error::InconsistentShares { group });
                    }
                }
            }
            if seen != agg_set {
                continue;
            }
            let sum = field.sum_vecs(width, parts.values().copied())?;
            samples.push((points.alpha(group)?, sum));
        }
        if samples.len() < need {
            return Err(underdetermined(format!(
                "{} complete evaluations of the aggregate, {need} needed",
                samples.len()
            )));
        }
        samples.truncate(need);
        add_recovered(samples)?;
    }
    for (&l, by_group) in &forwards {
        if by_group.len() < need {
            return Err(underdetermined(format!(
                "{} evaluations for client {l}, {need} needed",
                by_group.len()
            )));
        }
        let samples = by_group
            .iter()
            .take(need)
            .map(|(&grp, &v)| Ok((points.alpha(grp)?, v.clone())))
            .collect::<Result<Vec<_>>>()?;
        add_recovered(samples)?;
    }

    let mut out = FieldVec::concat(&total).into_inner();
    out.truncate(params.grad_len);
    Ok(FieldVec::new(out))
}

/// All client-side randomness and inputs of one round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundInputs {
    /// Gradients already padded to [`Params::padded_len`].
    pub gradients: Vec<FieldVec>,
    pub masks: MaskSet,
    /// `T_h` noise vectors per client.
    pub noise: Vec<Vec<FieldVec>>,
}

impl RoundInputs {
    /// Pads the gradients and derives masks and noise from `seed`.
    pub fn from_seed(params: &Params, gradients: &[FieldVec], seed: u64) -> Result<Self> {
        let field = params.field()?;
        if gradients.len() != params.clients {
            return Err(Error::Dimension {
                expected: params.clients,
                got: gradients.len(),
            });
        }
        let padded = params.padded_len();
        let gradients = gradients
            .iter()
            .map(|g| {
                if g.len() != params.grad_len {
                    return Err(Error::Dimension {
                        expected: params.grad_len,
                        got: g.len(),
                    });
                }
                let mut v = g.clone().into_inner();
                v.resize(padded, Fe::ZERO);
                Ok(FieldVec::new(v))
            })
            .collect::<Result<Vec<_>>>()?;
        let masks = MaskSet::from_seed(&field, seed, params.clients, padded);
        let noise = (0..params.clients)
            .map(|i| client_noise(&field, seed, i, params.server_colluders, params.chunk_len()))
            .collect();
        Ok(RoundInputs {
            gradients,
            masks,
            noise,
        })
    }

    /// Replaces every pairwise mask with zero.
    pub fn without_masks(mut self) -> Self {
        self.masks = MaskSet::zeros(self.masks.clients(), self.masks.len());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UplinkRecord {
    pub client: usize,
    pub server: usize,
    pub group: usize,
    pub payload: FieldVec,
    pub delivered: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DownlinkRecord {
    pub msg: DownlinkMsg,
    pub delivered: bool,
}

/// Everything that happened in a round, including client-local state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transcript {
    pub params: Params,
    pub table: FailureTable,
    pub secrets: Vec<ClientSecret>,
    pub masks: MaskSet,
    pub uplink: Vec<UplinkRecord>,
    pub inboxes: Vec<Inbox>,
    pub plans: Vec<AggregationPlan>,
    pub downlink: Vec<DownlinkRecord>,
}

/// Symbol counts and normalised loads of one round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadReport {
    /// `q_i`, counting replication and straggled sends.
    pub uplink: Vec<usize>,
    /// `q_i^j`
    pub uplink_per_server: Vec<Vec<usize>>,
    /// `d_i^m`, delivered symbols only.
    pub downlink: Vec<usize>,
    /// Normaliser: the padded gradient length.
    pub norm: usize,
    pub c_up: Load,
    pub c_down: Load,
}

impl LoadReport {
    pub fn client_c_up(&self, client: usize) -> Load {
        Load::new(self.uplink[client] as u64, self.norm as u64)
    }

    pub fn client_c_down(&self, client: usize) -> Load {
        Load::new(self.downlink[client] as u64, self.norm as u64)
    }
}

pub fn measure_loads(transcript: &Transcript) -> LoadReport {
    let params = &transcript.params;
    let mut uplink = vec![0; params.clients];
    let mut per_server = vec![vec![0; params.servers]; params.clients];
    for r in &transcript.uplink {
        uplink[r.client] += r.payload.len();
        per_server[r.client][r.server] += r.payload.len();
    }
    let mut downlink = vec![0; params.clients];
    for r in transcript.downlink.iter().filter(|r| r.delivered) {
        downlink[r.msg.receiver] += r.msg.payload.len();
    }
    let norm = params.padded_len().max(1);
    let ratio = |v: &[usize]| Load::new(v.iter().copied().max().unwrap_or(0) as u64, norm as u64);
    LoadReport {
        c_up: ratio(&uplink),
        c_down: ratio(&downlink),
        uplink,
        uplink_per_server: per_server,
        downlink,
        norm,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundOutcome {
    /// Per-client decoded aggregate, length `p`.
    pub decoded: Vec<FieldVec>,
    pub loads: LoadReport,
    pub transcript: Transcript,
}

/// Mask, encode, deliver, plan, execute and decode for every client.
pub fn run_round(params: &Params, gradients: &[FieldVec], table: &FailureTable, seed: u64) -> Result<RoundOutcome> {
    params.validate()?;
    let inputs = RoundInputs::from_seed(params, gradients, seed)?;
    run_round_with(params, &inputs, table)
}

pub fn run_round_with(params: &Params, inputs: &RoundInputs, table: &FailureTable) -> Result<RoundOutcome> {
    params.validate()?;
    check_table(params, table)?;
    let plans = plan_all(params, table)?;
    run_round_planned(params, inputs, table, plans)
}

fn check_table(params: &Params, table: &FailureTable) -> Result<()> {
    if table.clients() != params.clients || table.servers() != params.servers {
        return Err(Error::Dimension {
            expected: params.clients * params.servers,
            got: table.clients() * table.servers(),
        });
    }
    Ok(())
}

/// One downlink plan per receiver for the given failure table.
fn plan_all(params: &Params, table: &FailureTable) -> Result<Vec<AggregationPlan>> {
    let grouping = params.grouping()?;
    (0..params.clients)
        .map(|receiver| plan_downlink(params, &table.visible_columns(receiver), &grouping))
        .collect()
}

fn run_round_planned(
    params: &Params,
    inputs: &RoundInputs,
    table: &FailureTable,
    plans: Vec<AggregationPlan>,
) -> Result<RoundOutcome> {
    if plans.len() != params.clients {
        return Err(Error::Dimension {
            expected: params.clients,
            got: plans.len(),
        });
    }
    let field = params.field()?;
    let points = params.points()?;
    let grouping = params.grouping()?;

    let secrets = inputs
        .gradients
        .iter()
        .zip(&inputs.noise)
        .enumerate()
        .map(|(i, (g, z))| ClientSecret::new(&field, i, g.clone(), &inputs.masks, z.clone()))
        .collect::<Result<Vec<_>>>()?;

    let mut uplink = Vec::new();
    let mut inboxes: Vec<Inbox> = grouping
        .groups()
        .iter()
        .enumerate()
        .flat_map(|(g, members)| {
            members.iter().map(move |&server| Inbox {
                server,
                group: g,
                entries: vec![None; params.clients],
            })
        })
        .collect();
    for secret in &secrets {
        for share in client_encode(params, secret, &points)? {
            for &server in grouping.members(share.group) {
                let delivered = table.works(share.client, server);
                if delivered {
                    let slot = inboxes
                        .iter_mut()
                        .find(|b| b.server == server)
                        .expect("grouped server has an inbox");
                    slot.entries[share.client] = Some(share.payload.clone());
                }
                uplink.push(UplinkRecord {
                    client: share.client,
                    server,
                    group: share.group,
                    payload: share.payload.clone(),
                    delivered,
                });
            }
        }
    }

    let mut downlink = Vec::new();
    let mut decoded = Vec::with_capacity(params.clients);
    for (secret, plan) in secrets.iter().zip(&plans) {
        let receiver = secret.client_id;
        let msgs = server_execute(params, plan, &inboxes)?;
        let mut delivered_msgs = Vec::new();
        for msg in msgs {
            let delivered = table.works(receiver, msg.server);
            if delivered {
                delivered_msgs.push(msg.clone());
            }
            downlink.push(DownlinkRecord { msg, delivered });
        }
        decoded.push(client_decode(params, &delivered_msgs, secret, &points)?);
    }

    let transcript = Transcript {
        params: *params,
        table: table.clone(),
        secrets,
        masks: inputs.masks.clone(),
        uplink,
        inboxes,
        plans,
        downlink,
    };
    Ok(RoundOutcome {
        decoded,
        loads: measure_loads(&transcript),
        transcript,
    })
}

/// Result of all rounds run against one failure table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternOutcome {
    pub pattern_id: u128,
    pub c_up: Load,
    pub c_down: Load,
    pub client_c_down: Vec<Load>,
    /// Rounds whose decoded aggregate differed from the plaintext sum, per
    /// client, summed over all draws.
    pub mismatches: usize,
    pub draws: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepConfig {
    pub seed: u64,
    /// Gradient draws per pattern.
    pub draws: usize,
    pub disable_masks: bool,
}

/// Per-round seed, independent of scheduling.
pub fn round_seed(seed: u64, pattern_id: u128, draw: usize) -> u64 {
    let lo = pattern_id as u64;
    let hi = (pattern_id >> 64) as u64;
    mix64(mix64(mix64(seed ^ lo) ^ hi) ^ draw as u64)
}

/// Random gradients for one round.
pub fn random_gradients(params: &Params, seed: u64) -> Result<Vec<FieldVec>> {
    let field = params.field()?;
    let mut rng = ChaCha20Rng::seed_from_u64(mix64(seed ^ 0x6772_6164));
    Ok((0..params.clients)
        .map(|_| field.uniform_vec(params.grad_len, &mut rng))
        .collect())
}

/// Runs `draws` rounds per pattern in parallel and checks every client's
/// output against the plaintext sum. Output order follows `patterns`.
pub fn sweep_patterns(
    params: &Params,
    patterns: &[(u128, FailureTable)],
    config: &SweepConfig,
) -> Result<Vec<PatternOutcome>> {
    params.validate()?;
    let field = params.field()?;
    let draws = config.draws.max(1);
    patterns
        .par_iter()
        .map(|(id, table)| {
            let mut mismatches = 0;
            let mut loads: Option<LoadReport> = None;
            check_table(params, table)?;
            let plans = plan_all(params, table)?;
            for d in 0..draws {
                let rs = round_seed(config.seed, *id, d);
                let grads = random_gradients(params, rs)?;
                let mut inputs = RoundInputs::from_seed(params, &grads, rs)?;
                if config.disable_masks {
                    inputs = inputs.without_masks();
                }
                let out = run_round_planned(params, &inputs, table, plans.clone())?;
                let expect = field.sum_vecs(params.grad_len, &grads)?;
                mismatches += out.decoded.iter().filter(|v| **v != expect).count();
                if loads.is_none() {
                    loads = Some(out.loads);
                }
            }
            let loads = loads.expect("at least one draw");
            Ok(PatternOutcome {
                pattern_id: *id,
                c_up: loads.c_up,
                c_down: loads.c_down,
                client_c_down: (0..params.clients).map(|i| loads.client_c_down(i)).collect(),
                mismatches,
                draws,
            })
        })
        .collect()
}

fn hex_width(q: u64) -> usize {
    let bits = 64 - (q - 1).leading_zeros() as usize;
    bits.div_ceil(4).max(1)
}

fn payload_hex(q: u64, v: &FieldVec) -> String {
    let w = hex_width(q);
    let mut s = String::with_capacity(w * v.len());
    for e in v {
        let _ = write!(s, "{:0w$x}", e.value());
    }
    s
}

/// One line of the transcript log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LogLine {
    Up {
        client: usize,
        server: usize,
        group: usize,
        delivered: bool,
        payload: Vec<u64>,
    },
    Down {
        server: usize,
        receiver: usize,
        kind: DownlinkKind,
        group: usize,
        delivered: bool,
        payload: Vec<u64>,
    },
}

impl Transcript {
    /// Line-oriented log of every message:
    ///
    /// ```text
    /// # lcm-transcript E=.. H=.. s=.. th=.. tc=.. v=.. p=.. q=..
    /// up <client> <server> share <group> ok|lost <hex>
    /// down <server> <receiver> agg:<c>,<c>.. <group> ok|lost <hex>
    /// down <server> <receiver> fwd:<c> <group> ok|lost <hex>
    /// ```
    ///
    /// Ids are 0-based. Each payload element is written as lowercase hex,
    /// zero-padded to the width of `q - 1`.
    pub fn to_log(&self) -> String {
        let p = &self.params;
        let mut out = format!(
            "# lcm-transcript E={} H={} s={} th={} tc={} v={} p={} q={}\n",
            p.clients, p.servers, p.stragglers, p.server_colluders, p.client_colluders, p.group_size, p.grad_len, p.prime
        );
        let status = |d: bool| if d { "ok" } else { "lost" };
        for r in &self.uplink {
            let _ = writeln!(
                out,
                "up {} {} share {} {} {}",
                r.client,
                r.server,
                r.group,
                status(r.delivered),
                payload_hex(p.prime, &r.payload)
            );
        }
        for r in &self.downlink {
            let kind = match &r.msg.kind {
                DownlinkKind::Aggregate(c) => {
                    format!("agg:{}", c.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","))
                }
                DownlinkKind::Forward(c) => format!("fwd:{c}"),
            };
            let _ = writeln!(
                out,
                "down {} {} {} {} {} {}",
                r.msg.server,
                r.msg.receiver,
                kind,
                r.msg.group,
                status(r.delivered),
                payload_hex(p.prime, &r.msg.payload)
            );
        }
        out
    }
}

/// Parses a transcript log back into message lines.
pub fn parse_log(text: &str, prime: u64) -> Result<Vec<LogLine>> {
    let w = hex_width(prime);
    let bad = |l: &str| Error::Parse(format!("bad transcript line: {l}"));
    let num = |s: &str, l: &str| s.parse::<usize>().map_err(|_| bad(l));
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split(' ').collect();
            if f.len() != 7 {
                return Err(bad(l));
            }
            let delivered = match f[5] {
                "ok" => true,
                "lost" => false,
                _ => return Err(bad(l)),
            };
            if !f[6].len().is_multiple_of(w) {
                return Err(bad(l));
            }
            let payload = (0..f[6].len() / w)
                .map(|i| u64::from_str_radix(&f[6][i * w..(i + 1) * w], 16).map_err(|_| bad(l)))
                .collect::<Result<Vec<_>>>()?;
            match f[0] {
                "up" if f[3] == "share" => Ok(LogLine::Up {
                    client: num(f[1], l)?,
                    server: num(f[2], l)?,
                    group: num(f[4], l)?,
                    delivered,
                    payload,
                }),
                "down" => {
                    let kind = if let Some(rest) = f[3].strip_prefix("agg:") {
                        DownlinkKind::Aggregate(
                            rest.split(',').map(|c| num(c, l)).collect::<Result<Vec<_>>>()?,
                        )
                    } else if let Some(rest) = f[3].strip_prefix("fwd:") {
                        DownlinkKind::Forward(num(rest, l)?)
                    } else {
                        return Err(bad(l));
                    };
                    Ok(LogLine::Down {
                        server: num(f[1], l)?,
                        receiver: num(f[2], l)?,
                        kind,
                        group: num(f[4], l)?,
                        delivered,
                        payload,
                    })
                }
                _ => Err(bad(l)),
            }
        })
        .collect()
}
