//! Server grouping, failure tables and the space of straggling patterns.
//!
//! A failure table has one row per client and one column per server; a set
//! bit means the link works in both directions for the round. Each row may
//! have at most `s` zeros. Rows with at most `s` zeros are enumerated in a
//! fixed order and a table is a base-`R` number over its rows, which gives a
//! stateless index <-> table bijection that parallel workers can split.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

/// `floor(H / v)` disjoint groups of `v` consecutive servers; the leftover
/// servers are dropped and carry no traffic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grouping {
    servers: usize,
    groups: Vec<Vec<usize>>,
    dropped: Vec<usize>,
}

pub fn make_groups(servers: usize, v: usize) -> Result<Grouping> {
    if v == 0 || v > servers {
        return Err(Error::BadGroupSize { v, servers });
    }
    let count = servers / v;
    Ok(Grouping {
        servers,
        groups: (0..count).map(|g| (g * v..(g + 1) * v).collect()).collect(),
        dropped: (count * v..servers).collect(),
    })
}

impl Grouping {
    pub fn servers(&self) -> usize {
        self.servers
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group_size(&self) -> usize {
        self.groups.first().map_or(0, Vec::len)
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.groups[group]
    }

    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    pub fn group_of(&self, server: usize) -> Option<usize> {
        let v = self.group_size();
        (v > 0 && server < self.groups.len() * v).then(|| server / v)
    }
}

/// `E x H` link table.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct FailureTable {
    clients: usize,
    servers: usize,
    bits: Vec<bool>,
}

impl FailureTable {
    pub fn all_ones(clients: usize, servers: usize) -> Self {
        FailureTable {
            clients,
            servers,
            bits: vec![true; clients * servers],
        }
    }

    pub fn from_rows(rows: Vec<Vec<bool>>) -> Result<Self> {
        let servers = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != servers) {
            return Err(Error::Dimension {
                expected: servers,
                got: bad.len(),
            });
        }
        Ok(FailureTable {
            clients: rows.len(),
            servers,
            bits: rows.concat(),
        })
    }

    /// All links work except the listed `(client, server)` pairs.
    pub fn with_stragglers(clients: usize, servers: usize, broken: &[(usize, usize)]) -> Self {
        let mut t = Self::all_ones(clients, servers);
        for &(i, j) in broken {
            t.set(i, j, false);
        }
        t
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    pub fn works(&self, client: usize, server: usize) -> bool {
        self.bits[client * self.servers + server]
    }

    pub fn set(&mut self, client: usize, server: usize, up: bool) {
        self.bits[client * self.servers + server] = up;
    }

    pub fn row(&self, client: usize) -> &[bool] {
        &self.bits[client * self.servers..(client + 1) * self.servers]
    }

    pub fn column(&self, server: usize) -> Vec<bool> {
        (0..self.clients).map(|i| self.works(i, server)).collect()
    }

    pub fn stragglers(&self, client: usize) -> usize {
        self.row(client).iter().filter(|b| !**b).count()
    }

    pub fn max_stragglers(&self) -> usize {
        (0..self.clients).map(|i| self.stragglers(i)).max().unwrap_or(0)
    }

    /// Groups in which some server is linked to both `sender` and `receiver`.
    pub fn usable_groups(&self, grouping: &Grouping, sender: usize, receiver: usize) -> Vec<usize> {
        usable_by(grouping, |h| self.works(sender, h) && self.works(receiver, h))
    }

    /// Columns of the servers linked to `client`: what that client learns
    /// when the servers report which uplinks they received.
    pub fn visible_columns(&self, client: usize) -> VisibleTable {
        VisibleTable {
            observer: client,
            clients: self.clients,
            servers: self.servers,
            columns: (0..self.servers)
                .map(|j| self.works(client, j).then(|| self.column(j)))
                .collect(),
        }
    }
}

fn usable_by(grouping: &Grouping, linked: impl Fn(usize) -> bool) -> Vec<usize> {
    grouping
        .groups()
        .iter()
        .enumerate()
        .filter(|(_, members)| members.iter().any(|&h| linked(h)))
        .map(|(g, _)| g)
        .collect()
}

impl fmt::Display for FailureTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.clients {
            let row: String = self.row(i).iter().map(|&b| if b { '1' } else { '0' }).collect();
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for FailureTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<String> = (0..self.clients)
            .map(|i| self.row(i).iter().map(|&b| if b { '1' } else { '0' }).collect())
            .collect();
        write!(f, "FailureTable[{}]", rows.join("/"))
    }
}

impl FromStr for FailureTable {
    type Err = Error;

    /// Rows of `0`/`1`, one per client. Blank lines and `#` comments are skipped.
    fn from_str(s: &str) -> Result<Self> {
        let rows = s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.chars()
                    .map(|c| match c {
                        '1' => Ok(true),
                        '0' => Ok(false),
                        other => Err(Error::Parse(format!("unexpected {other:?} in failure table"))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Err(Error::Parse("empty failure table".into()));
        }
        Self::from_rows(rows)
    }
}

/// What one client knows about the table: only the columns of the servers it
/// is linked to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisibleTable {
    observer: usize,
    clients: usize,
    servers: usize,
    columns: Vec<Option<Vec<bool>>>,
}

impl VisibleTable {
    pub fn observer(&self) -> usize {
        self.observer
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    pub fn visible_servers(&self) -> Vec<usize> {
        (0..self.servers).filter(|&j| self.columns[j].is_some()).collect()
    }

    pub fn column(&self, server: usize) -> Option<&[bool]> {
        self.columns[server].as_deref()
    }

    /// `Some(bit)` for a visible column, `None` otherwise.
    pub fn works(&self, client: usize, server: usize) -> Option<bool> {
        self.columns[server].as_ref().map(|c| c[client])
    }

    /// Usable groups between `sender` and the observing client.
    pub fn usable_groups(&self, grouping: &Grouping, sender: usize) -> Vec<usize> {
        usable_by(grouping, |h| self.works(sender, h) == Some(true))
    }
}

/// The set of failure tables with at most `s` zeros per row.
#[derive(Clone, Debug)]
pub struct PatternSpace {
    clients: usize,
    servers: usize,
    max_stragglers: usize,
    rows: Vec<Vec<bool>>,
}

/// How to draw tables from a [`PatternSpace`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PatternMode {
    Enumerate,
    Sample { n: usize, seed: u64 },
    WorstCase { budget: u128 },
}

pub const DEFAULT_WORST_CASE_BUDGET: u128 = 1_000_000;

impl PatternSpace {
    pub fn new(clients: usize, servers: usize, s: usize) -> Result<Self> {
        if 2 * s >= servers {
            return Err(Error::InfeasibleResiliency { s, servers });
        }
        let mut rows = Vec::new();
        for zeros in 0..=s {
            for combo in combinations(servers, zeros) {
                let mut row = vec![true; servers];
                for j in combo {
                    row[j] = false;
                }
                rows.push(row);
            }
        }
        Ok(PatternSpace {
            clients,
            servers,
            max_stragglers: s,
            rows,
        })
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    pub fn max_stragglers(&self) -> usize {
        self.max_stragglers
    }

    /// Number of admissible rows, `sum_{t <= s} C(H, t)`.
    pub fn rows_per_client(&self) -> usize {
        self.rows.len()
    }

    /// `|Omega(s)|`, saturating at `u128::MAX`.
    pub fn count(&self) -> u128 {
        let r = self.rows.len() as u128;
        (0..self.clients).try_fold(1u128, |acc, _| acc.checked_mul(r)).unwrap_or(u128::MAX)
    }

    pub fn contains(&self, t: &FailureTable) -> bool {
        t.clients() == self.clients
            && t.servers() == self.servers
            && t.max_stragglers() <= self.max_stragglers
    }

    /// Table number `index`; client 0 is the most significant digit.
    pub fn table_at(&self, index: u128) -> FailureTable {
        let r = self.rows.len() as u128;
        let mut digits = vec![0usize; self.clients];
        let mut rest = index;
        for d in digits.iter_mut().rev() {
            *d = (rest % r) as usize;
            rest /= r;
        }
        FailureTable::from_rows(digits.iter().map(|&d| self.rows[d].clone()).collect())
            .expect("rows share a width")
    }

    /// Inverse of [`PatternSpace::table_at`].
    pub fn index_of(&self, t: &FailureTable) -> Option<u128> {
        if !self.contains(t) {
            return None;
        }
        let r = self.rows.len() as u128;
        let mut index = 0u128;
        for i in 0..self.clients {
            let d = self.rows.iter().position(|row| row.as_slice() == t.row(i))?;
            index = index.checked_mul(r)?.checked_add(d as u128)?;
        }
        Some(index)
    }

    pub fn enumerate(&self) -> impl Iterator<Item = (u128, FailureTable)> + '_ {
        (0..self.count()).map(move |i| (i, self.table_at(i)))
    }

    /// `n` i.i.d. uniform tables. Rows are independent and uniform over the
    /// admissible rows, which makes the table uniform over the whole space.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(u128, FailureTable)> {
        (0..n)
            .map(|_| {
                let rows: Vec<Vec<bool>> = (0..self.clients)
                    .map(|_| self.rows[rng.gen_range(0..self.rows.len())].clone())
                    .collect();
                let t = FailureTable::from_rows(rows).expect("rows share a width");
                (self.index_of(&t).expect("sampled from the space"), t)
            })
            .collect()
    }

    /// Every table when the space fits the budget. Otherwise a deterministic
    /// adversarial family: each row packs its `s` zeros into consecutive
    /// grouped servers starting at group `(shift + i * stride) mod G`, so
    /// different rows knock out different groups and the sets of groups
    /// shared between clients shrink.
    pub fn worst_case(&self, grouping: &Grouping, budget: u128) -> Vec<(u128, FailureTable)> {
        if self.count() <= budget {
            return self.enumerate().collect();
        }
        let g = grouping.len().max(1);
        let v = grouping.group_size().max(1);
        let grouped = g * v;
        let s = self.max_stragglers.min(grouped);
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for stride in 1..=g {
            for shift in 0..g {
                let mut t = FailureTable::all_ones(self.clients, self.servers);
                for i in 0..self.clients {
                    let start = ((shift + i * stride) % g) * v;
                    for z in 0..s {
                        t.set(i, (start + z) % grouped, false);
                    }
                }
                let id = self.index_of(&t).expect("rows stay within s zeros");
                if seen.insert(id) {
                    out.push((id, t));
                }
            }
        }
        out
    }

    pub fn stream(&self, mode: &PatternMode, grouping: &Grouping) -> Vec<(u128, FailureTable)> {
        match mode {
            PatternMode::Enumerate => self.enumerate().collect(),
            PatternMode::Sample { n, seed } => {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(*seed);
                self.sample(*n, &mut rng)
            }
            PatternMode::WorstCase { budget } => self.worst_case(grouping, *budget),
        }
    }
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[pos] += 1;
        for i in pos + 1..k {
            idx[i] = idx[i - 1] + 1;
        }
    }
}

/// `C(n, k)`, or `None` on overflow.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grouping_examples() {
        let g = make_groups(6, 3).unwrap();
        assert_eq!(g.groups(), &[vec![0, 1, 2], vec![3, 4, 5]]);
        assert!(g.dropped().is_empty());
        let g = make_groups(6, 1).unwrap();
        assert_eq!(g.len(), 6);
        assert!(g.groups().iter().enumerate().all(|(i, m)| m == &vec![i]));
        let g = make_groups(7, 3).unwrap();
        assert_eq!(g.groups(), &[vec![0, 1, 2], vec![3, 4, 5]]);
        assert_eq!(g.dropped(), &[6]);
        assert_eq!(g.group_of(6), None);
        assert_eq!(g.group_of(4), Some(1));
        assert_eq!(make_groups(4, 0), Err(Error::BadGroupSize { v: 0, servers: 4 }));
        assert_eq!(make_groups(4, 5), Err(Error::BadGroupSize { v: 5, servers: 4 }));
    }

    #[test]
    fn small_spaces() {
        let space = PatternSpace::new(1, 2, 1);
        // s < H/2 fails for H = 2, s = 1.
        assert_eq!(space.unwrap_err(), Error::InfeasibleResiliency { s: 1, servers: 2 });

        let space = PatternSpace::new(1, 3, 1).unwrap();
        let tables: Vec<String> = space.enumerate().map(|(_, t)| t.to_string()).collect();
        assert_eq!(tables, vec!["111\n", "011\n", "101\n", "110\n"]);

        let space = PatternSpace::new(2, 3, 1).unwrap();
        assert_eq!(space.count(), 16);
        assert_eq!(space.enumerate().count(), 16);

        let space = PatternSpace::new(3, 5, 0).unwrap();
        let all: Vec<_> = space.enumerate().collect();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].1, FailureTable::all_ones(3, 5));
    }

    #[test]
    fn row_count_matches_binomial_sum() {
        for h in 1..9usize {
            for s in 0..h.div_ceil(2) {
                let space = PatternSpace::new(2, h, s).unwrap();
                let closed: u128 = (0..=s).map(|t| binomial(h as u64, t as u64).unwrap()).sum();
                assert_eq!(space.rows_per_client() as u128, closed);
                assert_eq!(space.count(), closed * closed);
            }
        }
    }

    #[test]
    fn enumeration_is_a_bijection() {
        let space = PatternSpace::new(3, 4, 1).unwrap();
        assert_eq!(space.count(), 125);
        let mut seen = std::collections::HashSet::new();
        for (i, t) in space.enumerate() {
            assert!(t.max_stragglers() <= 1);
            assert_eq!(space.index_of(&t), Some(i));
            assert!(seen.insert(t));
        }
    }

    #[test]
    fn sampling_stays_in_space_and_is_reproducible() {
        let space = PatternSpace::new(5, 7, 2).unwrap();
        let a = space.sample(50, &mut ChaCha8Rng::seed_from_u64(3));
        let b = space.sample(50, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(a.iter().all(|(i, t)| space.contains(t) && space.table_at(*i) == *t));
    }

    #[test]
    fn worst_case_falls_back_to_heuristic() {
        let space = PatternSpace::new(20, 10, 1).unwrap();
        let grouping = make_groups(10, 1).unwrap();
        let fam = space.worst_case(&grouping, 1000);
        assert!(!fam.is_empty());
        assert!(fam.iter().all(|(_, t)| t.max_stragglers() == 1));
        let small = PatternSpace::new(2, 4, 1).unwrap();
        assert_eq!(small.worst_case(&grouping, 1000).len(), 25);
    }

    #[test]
    fn usable_group_examples() {
        let g1 = make_groups(4, 1).unwrap();
        let t = FailureTable::all_ones(2, 4);
        assert_eq!(t.usable_groups(&g1, 0, 1), vec![0, 1, 2, 3]);
        // sender misses server 1, receiver misses server 2 (1-based)
        let t = FailureTable::with_stragglers(2, 4, &[(0, 0), (1, 1)]);
        assert_eq!(t.usable_groups(&g1, 0, 1), vec![2, 3]);
        // v = 2: group {1, 2} has no server seen by both
        let g2 = make_groups(4, 2).unwrap();
        assert_eq!(t.usable_groups(&g2, 0, 1), vec![1]);
    }

    #[test]
    fn visible_columns_examples() {
        let t = FailureTable::all_ones(2, 3);
        assert_eq!(t.visible_columns(0).visible_servers(), vec![0, 1, 2]);
        let t = FailureTable::with_stragglers(2, 3, &[(0, 1)]);
        let vis = t.visible_columns(0);
        assert_eq!(vis.visible_servers(), vec![0, 2]);
        assert_eq!(vis.works(1, 1), None);
        assert_eq!(vis.column(2), Some(&[true, true][..]));
    }

    #[test]
    fn table_text_format() {
        let t: FailureTable = "111\n# comment\n\n101\n".parse().unwrap();
        assert_eq!(t, FailureTable::with_stragglers(2, 3, &[(1, 1)]));
        assert_eq!(t.to_string().parse::<FailureTable>().unwrap(), t);
        assert!("11\n1\n".parse::<FailureTable>().is_err());
        assert!("1x1\n".parse::<FailureTable>().is_err());
        assert!("".parse::<FailureTable>().is_err());
    }

    #[test]
    fn combinations_and_binomials() {
        assert_eq!(combinations(4, 2).len(), 6);
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
        assert!(combinations(2, 3).is_empty());
        assert_eq!(binomial(5, 4), Some(5));
        assert_eq!(binomial(3, 5), Some(0));
        assert_eq!(binomial(60, 30), Some(118_264_581_564_861_424));
        assert_eq!(binomial(300, 150), None);
    }

    /// Exhaustive check of the two counting claims behind the downlink plan:
    /// every sender/receiver pair shares at least `G - floor(2s/v)` groups, and
    /// at most `floor(s/v)` groups are cut off from any one client.
    #[test]
    fn pair_guarantee_and_full_failure_bound() {
        for (h, s, v) in [(4, 1, 1), (5, 2, 1), (6, 1, 1), (6, 1, 3), (7, 2, 3), (7, 1, 2), (6, 2, 5), (5, 1, 2)] {
            let grouping = make_groups(h, v).unwrap();
            let g = grouping.len();
            let space = PatternSpace::new(2, h, s).unwrap();
            for (_, t) in space.enumerate() {
                let usable = t.usable_groups(&grouping, 0, 1);
                assert!(usable.len() + (2 * s) / v >= g, "h={h} s={s} v={v} {t:?}");
                for c in 0..2 {
                    let dead = grouping
                        .groups()
                        .iter()
                        .filter(|m| m.iter().all(|&j| !t.works(c, j)))
                        .count();
                    assert!(dead <= s / v);
                }
            }
        }
    }
}
