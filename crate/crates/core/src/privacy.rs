//! Privacy checks.
//!
//! Two kinds: an algebraic one (the noise block `U_B` of the encoding matrix
//! must be invertible for every `T_h` groups) and exact independence tests at
//! tiny parameters. The latter enumerate every assignment of gradients, masks
//! and noise and compare the induced distributions of an adversary's view as
//! integer multisets, so "zero mutual information" is tested exactly.
//!
//! For colluding clients the view contains the colluders' own masks and
//! noise. Because that randomness is independent of all gradients, the view
//! distributions agree iff they agree for every fixed value of it, which is
//! how the client oracle splits the enumeration.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ffield::{Field, FieldVec};
use crate::lagrange::{is_invertible, ub_submatrix, CoeffMatrix};
use crate::network::{combinations, FailureTable, PatternSpace};
use crate::protocol::{Inbox, Params, Transcript};

/// Default cap on enumerated worlds per oracle call.
pub const DEFAULT_WORLD_BUDGET: u128 = 100_000_000;

/// A colluding set.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Adversary {
    Servers(Vec<usize>),
    Clients(Vec<usize>),
}

impl Adversary {
    pub fn members(&self) -> &[usize] {
        match self {
            Adversary::Servers(m) | Adversary::Clients(m) => m,
        }
    }

    fn threshold(&self, params: &Params) -> usize {
        match self {
            Adversary::Servers(_) => params.server_colluders,
            Adversary::Clients(_) => params.client_colluders,
        }
    }

    fn check(&self, params: &Params) -> Result<()> {
        let threshold = self.threshold(params);
        let size = self.members().len();
        if size > threshold {
            return Err(Error::ThresholdExceeded { size, threshold });
        }
        Ok(())
    }
}

impl fmt::Display for Adversary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Adversary::Servers(m) => write!(f, "servers{m:?}"),
            Adversary::Clients(m) => write!(f, "clients{m:?}"),
        }
    }
}

/// What a colluding client knows about itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColluderState {
    pub client: usize,
    pub gradient: FieldVec,
    pub masks: BTreeMap<(usize, usize), FieldVec>,
    pub noise: Vec<FieldVec>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdversaryView {
    pub adversary: Adversary,
    pub inboxes: Vec<Inbox>,
    /// Empty for colluding servers.
    pub own: Vec<ColluderState>,
}

/// Extracts the adversary's view of a round. Colluding servers see their own
/// inboxes; colluding clients see their own secrets and the full inbox of
/// every server linked to at least one of them.
pub fn collusion_view(transcript: &Transcript, adversary: &Adversary) -> Result<AdversaryView> {
    adversary.check(&transcript.params)?;
    let holds = |server: usize| match adversary {
        Adversary::Servers(m) => m.contains(&server),
        Adversary::Clients(m) => m.iter().any(|&c| transcript.table.works(c, server)),
    };
    let inboxes = transcript
        .inboxes
        .iter()
        .filter(|b| holds(b.server))
        .cloned()
        .collect();
    let own = match adversary {
        Adversary::Servers(_) => Vec::new(),
        Adversary::Clients(m) => m
            .iter()
            .map(|&c| {
                let secret = &transcript.secrets[c];
                ColluderState {
                    client: c,
                    gradient: secret.gradient.clone(),
                    masks: transcript.masks.involving(c),
                    noise: secret.noise.clone(),
                }
            })
            .collect(),
    };
    Ok(AdversaryView {
        adversary: adversary.clone(),
        inboxes,
        own,
    })
}

/// Multiset of encoded views over a set of equally likely worlds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExactDistribution {
    sorted: Vec<u64>,
}

impl ExactDistribution {
    fn from_keys(mut keys: Vec<u64>) -> Self {
        keys.sort_unstable();
        ExactDistribution { sorted: keys }
    }

    pub fn total(&self) -> usize {
        self.sorted.len()
    }

    /// `(outcome, multiplicity)` in increasing outcome order.
    pub fn counts(&self) -> Vec<(u64, usize)> {
        let mut out: Vec<(u64, usize)> = Vec::new();
        for &k in &self.sorted {
            match out.last_mut() {
                Some((last, n)) if *last == k => *n += 1,
                _ => out.push((k, 1)),
            }
        }
        out
    }
}

/// Two inputs the adversary can tell apart.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    /// Gradient tuples, `E` rows of `p` values.
    pub gradients_a: Vec<Vec<u64>>,
    pub gradients_b: Vec<Vec<u64>>,
    /// Values of the colluders' own masks and noise the comparison was
    /// conditioned on; empty for colluding servers.
    pub fixed_randomness: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Independent,
    Dependent(Witness),
}

impl Verdict {
    pub fn is_independent(&self) -> bool {
        matches!(self, Verdict::Independent)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Independent => write!(f, "independent"),
            Verdict::Dependent(w) => write!(
                f,
                "dependent a={:?} b={:?} fixed={:?}",
                w.gradients_a, w.gradients_b, w.fixed_randomness
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleOptions {
    pub budget: u128,
    /// Protocol violation used as a negative control.
    pub disable_masks: bool,
    /// Protocol violation used as a negative control.
    pub disable_noise: bool,
    /// Accept colluder sets above the threshold.
    pub allow_over_threshold: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            budget: DEFAULT_WORLD_BUDGET,
            disable_masks: false,
            disable_noise: false,
            allow_over_threshold: false,
        }
    }
}

/// Flat variable layout of one world: gradients, then masks, then noise.
struct Layout {
    q: u64,
    clients: usize,
    p: usize,
    chunk: usize,
    k: usize,
    t_h: usize,
    pairs: Vec<(usize, usize)>,
    masks: bool,
    noise: bool,
    /// Encoding matrix rows, one per group.
    coeffs: Vec<Vec<u64>>,
}

impl Layout {
    fn new(params: &Params, options: &OracleOptions) -> Result<Self> {
        params.validate()?;
        let k = params.recovery_dim();
        if !params.grad_len.is_multiple_of(k) {
            return Err(Error::Chunking {
                p: params.grad_len,
                k,
            });
        }
        let field = params.field()?;
        let matrix = CoeffMatrix::new(&field, &params.points()?)?;
        let coeffs = (0..matrix.rows())
            .map(|j| matrix.row(j).iter().map(|e| e.value()).collect())
            .collect();
        let e = params.clients;
        Ok(Layout {
            q: params.prime,
            clients: e,
            p: params.grad_len,
            chunk: params.grad_len / k,
            k,
            t_h: params.server_colluders,
            pairs: (0..e).flat_map(|i| (i + 1..e).map(move |j| (i, j))).collect(),
            masks: !options.disable_masks,
            noise: !options.disable_noise,
            coeffs,
        })
    }

    fn grad_vars(&self) -> usize {
        self.clients * self.p
    }

    fn mask_base(&self) -> usize {
        self.grad_vars()
    }

    fn noise_base(&self) -> usize {
        self.mask_base() + if self.masks { self.pairs.len() * self.p } else { 0 }
    }

    fn vars(&self) -> usize {
        self.noise_base() + if self.noise { self.clients * self.t_h * self.chunk } else { 0 }
    }

    fn mask_vars(&self, pair: usize) -> std::ops::Range<usize> {
        let start = self.mask_base() + pair * self.p;
        if self.masks {
            start..start + self.p
        } else {
            start..start
        }
    }

    fn noise_vars(&self, client: usize) -> std::ops::Range<usize> {
        let start = self.noise_base() + client * self.t_h * self.chunk;
        if self.noise {
            start..start + self.t_h * self.chunk
        } else {
            start..start
        }
    }

    fn worlds(&self) -> Option<u128> {
        (self.q as u128).checked_pow(u32::try_from(self.vars()).ok()?)
    }

    fn check_budget(&self, budget: u128) -> Result<()> {
        match self.worlds() {
            Some(w) if w <= budget => Ok(()),
            w => Err(Error::TooLargeToEnumerate {
                worlds: w.unwrap_or(u128::MAX),
                budget,
            }),
        }
    }

    /// Ensures `entries` shares pack into one `u64` key; reports the number
    /// of distinct views otherwise.
    fn check_key_width(&self, entries: usize) -> Result<()> {
        let digits = u32::try_from(entries * self.chunk).unwrap_or(u32::MAX);
        let views = (self.q as u128).checked_pow(digits).unwrap_or(u128::MAX);
        if views > u64::MAX as u128 {
            return Err(Error::TooLargeToEnumerate {
                worlds: views,
                budget: u64::MAX as u128,
            });
        }
        Ok(())
    }

    /// Masked gradients of all clients, row-major, into `y`.
    fn mask_all(&self, x: &[u64], y: &mut [u64]) {
        let q = self.q;
        y.copy_from_slice(&x[..self.grad_vars()]);
        if !self.masks {
            return;
        }
        for (idx, &(i, j)) in self.pairs.iter().enumerate() {
            for c in 0..self.p {
                let s = x[self.mask_base() + idx * self.p + c];
                y[i * self.p + c] = (y[i * self.p + c] + s) % q;
                y[j * self.p + c] = (y[j * self.p + c] + q - s) % q;
            }
        }
    }

    /// Appends the share of `client` for `group` to `digits`.
    fn push_share(&self, x: &[u64], y: &[u64], client: usize, group: usize, digits: &mut Vec<u64>) {
        let q = self.q;
        let row = &self.coeffs[group];
        let masked = &y[client * self.p..(client + 1) * self.p];
        for c in 0..self.chunk {
            let mut acc = 0;
            for (r, &u) in row[..self.k].iter().enumerate() {
                acc = (acc + u * masked[r * self.chunk + c] % q) % q;
            }
            if self.noise {
                let base = self.noise_base() + client * self.t_h * self.chunk;
                for t in 0..self.t_h {
                    acc = (acc + row[self.k + t] * x[base + t * self.chunk + c] % q) % q;
                }
            }
            digits.push(acc);
        }
    }

    /// The view of one world, one digit per share coordinate.
    fn view(&self, x: &[u64], entries: &[(usize, usize)]) -> Vec<u64> {
        let mut y = vec![0; self.grad_vars()];
        self.mask_all(x, &mut y);
        let mut digits = Vec::with_capacity(entries.len() * self.chunk);
        for &(client, group) in entries {
            self.push_share(x, &y, client, group, &mut digits);
        }
        digits
    }

    /// The view is linear in the world variables; column `v` is the view of
    /// the unit world `x_v = 1`.
    fn linear_view(&self, entries: &[(usize, usize)]) -> LinearView {
        let mut x = vec![0; self.vars()];
        let cols = (0..self.vars())
            .map(|v| {
                x[v] = 1;
                let col = self.view(&x, entries);
                x[v] = 0;
                col
            })
            .collect();
        LinearView { q: self.q, cols }
    }

    fn gradients(&self, x: &[u64]) -> Vec<Vec<u64>> {
        x[..self.grad_vars()].chunks(self.p).map(<[u64]>::to_vec).collect()
    }

    fn set_gradients(&self, x: &mut [u64], mut index: u128) {
        for v in (0..self.grad_vars()).rev() {
            x[v] = (index % self.q as u128) as u64;
            index /= self.q as u128;
        }
    }
}

struct LinearView {
    q: u64,
    cols: Vec<Vec<u64>>,
}

impl LinearView {
    fn digits(&self, x: &[u64]) -> Vec<u64> {
        let width = self.cols.first().map_or(0, Vec::len);
        let mut d = vec![0; width];
        for (col, &xv) in self.cols.iter().zip(x) {
            if xv != 0 {
                for (di, &c) in d.iter_mut().zip(col) {
                    *di = (*di + c * xv) % self.q;
                }
            }
        }
        d
    }

    fn pack(&self, digits: &[u64]) -> u64 {
        digits.iter().fold(0, |key, &d| key * self.q + d)
    }

    /// Distribution of the view over every assignment of `inner`, the other
    /// variables as set in `x`. Stepping one variable by one adds its column,
    /// wrap-around included, so each world costs one column addition per
    /// changed variable.
    fn distribution(&self, x: &mut [u64], inner: &[usize]) -> ExactDistribution {
        for &v in inner {
            x[v] = 0;
        }
        let mut d = self.digits(x);
        let mut keys = Vec::with_capacity((self.q as usize).pow(inner.len() as u32));
        let mut counter = vec![0; inner.len()];
        'worlds: loop {
            keys.push(self.pack(&d));
            let mut i = inner.len();
            loop {
                if i == 0 {
                    break 'worlds;
                }
                i -= 1;
                for (di, &c) in d.iter_mut().zip(&self.cols[inner[i]]) {
                    *di += c;
                    if *di >= self.q {
                        *di -= self.q;
                    }
                }
                counter[i] += 1;
                if counter[i] < self.q {
                    break;
                }
                counter[i] = 0;
            }
        }
        ExactDistribution::from_keys(keys)
    }
}

/// Advances the digits at `vars` like a counter; false after wrapping.
fn odometer(x: &mut [u64], vars: &[usize], q: u64) -> bool {
    for &v in vars.iter().rev() {
        x[v] += 1;
        if x[v] < q {
            return true;
        }
        x[v] = 0;
    }
    false
}

/// `(client, group)` shares held by the given servers, one per distinct pair.
fn held_shares(params: &Params, table: &FailureTable, servers: &[usize], skip: &[usize]) -> Result<Vec<(usize, usize)>> {
    let grouping = params.grouping()?;
    let mut entries: Vec<(usize, usize)> = servers
        .iter()
        .filter_map(|&h| Some((h, grouping.group_of(h)?)))
        .flat_map(|(h, g)| {
            (0..params.clients)
                .filter(move |&i| table.works(i, h) && !skip.contains(&i))
                .map(move |i| (i, g))
        })
        .collect();
    entries.sort_unstable();
    entries.dedup();
    Ok(entries)
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

/// Tests whether the inboxes of `servers` under `table` are independent of
/// the gradients.
pub fn mi_server_oracle(
    params: &Params,
    servers: &[usize],
    table: &FailureTable,
    options: &OracleOptions,
) -> Result<Verdict> {
    let adversary = Adversary::Servers(servers.to_vec());
    if !options.allow_over_threshold {
        adversary.check(params)?;
    }
    check_table(params, table)?;
    let layout = Layout::new(params, options)?;
    layout.check_budget(options.budget)?;
    let entries = held_shares(params, table, servers, &[])?;
    layout.check_key_width(entries.len())?;
    let view = layout.linear_view(&entries);

    let inner: Vec<usize> = (layout.grad_vars()..layout.vars()).collect();
    let tuples = (layout.q as u128).pow(layout.grad_vars() as u32);
    let mut x = vec![0; layout.vars()];
    let reference = view.distribution(&mut x, &inner);
    let reference_grads = layout.gradients(&x);

    let witness = (1..tuples as u64).into_par_iter().find_map_first(|t| {
        let mut x = vec![0; layout.vars()];
        layout.set_gradients(&mut x, t as u128);
        (view.distribution(&mut x, &inner) != reference).then(|| Witness {
            gradients_a: reference_grads.clone(),
            gradients_b: layout.gradients(&x),
            fixed_randomness: Vec::new(),
        })
    });
    Ok(witness.map_or(Verdict::Independent, Verdict::Dependent))
}

/// Tests whether the view of colluding `clients` under `table` depends on the
/// honest gradients beyond the colluders' own gradients and the total.
pub fn mi_client_oracle(
    params: &Params,
    clients: &[usize],
    table: &FailureTable,
    options: &OracleOptions,
) -> Result<Verdict> {
    let adversary = Adversary::Clients(clients.to_vec());
    if !options.allow_over_threshold {
        adversary.check(params)?;
    }
    check_table(params, table)?;
    if clients.is_empty() {
        return Ok(Verdict::Independent);
    }
    let layout = Layout::new(params, options)?;
    layout.check_budget(options.budget)?;
    let reachable: Vec<usize> = (0..params.servers)
        .filter(|&h| clients.iter().any(|&c| table.works(c, h)))
        .collect();
    // Colluders' own shares are fixed once their gradients and randomness are.
    let entries = held_shares(params, table, &reachable, clients)?;
    layout.check_key_width(entries.len())?;
    let view = layout.linear_view(&entries);

    let mut fixed: Vec<usize> = Vec::new();
    for (idx, &(i, j)) in layout.pairs.iter().enumerate() {
        if clients.contains(&i) || clients.contains(&j) {
            fixed.extend(layout.mask_vars(idx));
        }
    }
    for &c in clients {
        fixed.extend(layout.noise_vars(c));
    }
    let inner: Vec<usize> = (layout.grad_vars()..layout.vars())
        .filter(|v| !fixed.contains(v))
        .collect();

    // Gradient tuples grouped by what the colluders are allowed to learn.
    let tuples = (layout.q as u128).pow(layout.grad_vars() as u32);
    let mut classes: BTreeMap<Vec<u64>, Vec<u128>> = BTreeMap::new();
    let mut x = vec![0; layout.vars()];
    for t in 0..tuples {
        layout.set_gradients(&mut x, t);
        let g = layout.gradients(&x);
        let mut class: Vec<u64> = clients.iter().flat_map(|&c| g[c].clone()).collect();
        class.extend((0..layout.p).map(|c| g.iter().map(|row| row[c]).sum::<u64>() % layout.q));
        classes.entry(class).or_default().push(t);
    }

    let classes: Vec<Vec<u128>> = classes.into_values().filter(|c| c.len() > 1).collect();
    let witness = classes.par_iter().find_map_first(|members| {
        let mut x = vec![0; layout.vars()];
        loop {
            layout.set_gradients(&mut x, members[0]);
            let reference = view.distribution(&mut x, &inner);
            let reference_grads = layout.gradients(&x);
            for &t in &members[1..] {
                layout.set_gradients(&mut x, t);
                if view.distribution(&mut x, &inner) != reference {
                    return Some(Witness {
                        gradients_a: reference_grads,
                        gradients_b: layout.gradients(&x),
                        fixed_randomness: fixed.iter().map(|&v| x[v]).collect(),
                    });
                }
            }
            if !odometer(&mut x, &fixed, layout.q) {
                return None;
            }
        }
    });
    Ok(witness.map_or(Verdict::Independent, Verdict::Dependent))
}

/// First `T_h`-subset of groups whose noise block is singular, if any.
pub fn ub_invertibility_sweep(params: &Params) -> Result<Option<Vec<usize>>> {
    params.validate()?;
    let t_h = params.server_colluders;
    if t_h == 0 {
        return Ok(None);
    }
    let field: Field = params.field()?;
    let points = params.points()?;
    for groups in combinations(params.groups(), t_h) {
        let ub = ub_submatrix(&field, &groups, &points, params.recovery_dim())?;
        if !is_invertible(&field, &ub)? {
            return Ok(Some(groups));
        }
    }
    Ok(None)
}

/// Outcome of a privacy sweep.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepReport {
    /// `(pattern, colluder set)` pairs enumerated directly.
    pub enumerated: usize,
    /// Pairs covered because their view is a function of an enumerated view
    /// under full connectivity.
    pub certified: u128,
    pub failure: Option<(u128, Adversary, Witness)>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

fn colluder_sets(n: usize, max: usize) -> Vec<Vec<usize>> {
    (1..=max.min(n)).flat_map(|size| combinations(n, size)).collect()
}

/// Every pattern of `Omega(s)`, for sweeps that enumerate all of them.
pub fn all_patterns(params: &Params) -> Result<Vec<(u128, FailureTable)>> {
    Ok(PatternSpace::new(params.clients, params.servers, params.stragglers)?
        .enumerate()
        .collect())
}

/// Runs the server oracle for every non-empty set of at most `T_h` servers.
///
/// See [`client_sweep`] for which patterns are enumerated and which are
/// certified.
pub fn server_sweep(
    params: &Params,
    options: &OracleOptions,
    direct: &[(u128, FailureTable)],
) -> Result<SweepReport> {
    let sets = colluder_sets(params.servers, params.server_colluders);
    sweep(params, direct, &sets, Adversary::Servers, |set, table| {
        mi_server_oracle(params, set, table, options)
    })
}

/// Runs the client oracle for every non-empty set of at most `T_c` clients.
///
/// Each set is enumerated under full connectivity, where its view is the
/// largest. Under any other pattern the view keeps a subset of the same
/// inboxes and entries, a function of the full view, so independence carries
/// over; those pairs are counted as certified. `direct` patterns are
/// additionally enumerated on their own.
pub fn client_sweep(
    params: &Params,
    options: &OracleOptions,
    direct: &[(u128, FailureTable)],
) -> Result<SweepReport> {
    let sets = colluder_sets(params.clients, params.client_colluders);
    sweep(params, direct, &sets, Adversary::Clients, |set, table| {
        mi_client_oracle(params, set, table, options)
    })
}

fn sweep(
    params: &Params,
    direct: &[(u128, FailureTable)],
    sets: &[Vec<usize>],
    adversary: fn(Vec<usize>) -> Adversary,
    oracle: impl Fn(&[usize], &FailureTable) -> Result<Verdict>,
) -> Result<SweepReport> {
    let space = PatternSpace::new(params.clients, params.servers, params.stragglers)?;
    let full = FailureTable::all_ones(params.clients, params.servers);
    let full_id = space.index_of(&full).expect("full connectivity is a pattern");
    let mut tables = vec![(full_id, full)];
    tables.extend(direct.iter().filter(|(id, _)| *id != full_id).cloned());
    tables.sort_by_key(|(id, _)| *id);
    tables.dedup_by_key(|(id, _)| *id);

    let mut enumerated = 0;
    let mut certified = 0;
    for set in sets {
        for (id, table) in &tables {
            enumerated += 1;
            if let Verdict::Dependent(w) = oracle(set, table)? {
                return Ok(SweepReport {
                    enumerated,
                    certified,
                    failure: Some((*id, adversary(set.clone()), w)),
                });
            }
        }
        certified += space.count() - tables.len() as u128;
    }
    Ok(SweepReport {
        enumerated,
        certified,
        failure: None,
    })
}
