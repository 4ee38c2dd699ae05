//! Lagrange interpolation over `F_q`: the coefficient rows that turn chunks
//! and noise into group shares, decoding by interpolation, and the noise-block
//! submatrix used to check server-side privacy.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::ffield::{Fe, Field, FieldVec};

/// Interpolation nodes `betas` (data chunks first, then noise) and the group
/// evaluation points `alphas`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalPoints {
    betas: Vec<Fe>,
    alphas: Vec<Fe>,
}

impl EvalPoints {
    /// Validates distinctness within and across the two point sets.
    pub fn new(betas: Vec<Fe>, alphas: Vec<Fe>) -> Result<Self> {
        let mut seen = HashSet::new();
        if !betas.iter().chain(&alphas).all(|x| seen.insert(*x)) {
            return Err(Error::DegenerateNodes);
        }
        Ok(EvalPoints { betas, alphas })
    }

    /// `beta_r = r` for `r = 1..=nodes`, `alpha_j = nodes + j` for `j = 1..=groups`.
    pub fn canonical(field: &Field, nodes: usize, groups: usize) -> Result<Self> {
        if ((nodes + groups) as u64) >= field.modulus() {
            return Err(Error::DegenerateNodes);
        }
        let betas = (1..=nodes as u64).map(|r| field.elem(r)).collect();
        let alphas = (1..=groups as u64)
            .map(|j| field.elem(nodes as u64 + j))
            .collect();
        Self::new(betas, alphas)
    }

    pub fn betas(&self) -> &[Fe] {
        &self.betas
    }

    pub fn alphas(&self) -> &[Fe] {
        &self.alphas
    }

    pub fn alpha(&self, group: usize) -> Result<Fe> {
        self.alphas.get(group).copied().ok_or(Error::BadGroupIndex {
            index: group,
            groups: self.alphas.len(),
        })
    }
}

/// Barycentric form of the Lagrange basis on a fixed node set. The weights
/// are computed once and reused for every evaluation target.
#[derive(Clone, Debug)]
pub struct LagrangeBasis {
    field: Field,
    nodes: Vec<Fe>,
    weights: Vec<Fe>,
}

impl LagrangeBasis {
    pub fn new(field: &Field, nodes: &[Fe]) -> Result<Self> {
        let mut weights = Vec::with_capacity(nodes.len());
        for (r, &br) in nodes.iter().enumerate() {
            let mut denom = Fe::ONE;
            for (l, &bl) in nodes.iter().enumerate() {
                if l != r {
                    denom = field.mul(denom, field.sub(br, bl));
                }
            }
            weights.push(field.inv(denom).map_err(|_| Error::DegenerateNodes)?);
        }
        Ok(LagrangeBasis {
            field: *field,
            nodes: nodes.to_vec(),
            weights,
        })
    }

    pub fn nodes(&self) -> &[Fe] {
        &self.nodes
    }

    /// Values of every basis polynomial at `x`:
    /// entry `r` is `prod_{l != r} (x - b_l) / (b_r - b_l)`.
    pub fn row(&self, x: Fe) -> Vec<Fe> {
        let f = &self.field;
        if let Some(hit) = self.nodes.iter().position(|&b| b == x) {
            let mut e = vec![Fe::ZERO; self.nodes.len()];
            e[hit] = Fe::ONE;
            return e;
        }
        let n = self.nodes.len();
        // suffix[r] = prod_{l >= r} (x - b_l)
        let mut suffix = vec![Fe::ONE; n + 1];
        for r in (0..n).rev() {
            suffix[r] = f.mul(suffix[r + 1], f.sub(x, self.nodes[r]));
        }
        let mut prefix = Fe::ONE;
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            out.push(f.mul(f.mul(prefix, suffix[r + 1]), self.weights[r]));
            prefix = f.mul(prefix, f.sub(x, self.nodes[r]));
        }
        out
    }

    /// Evaluates the interpolant through `(nodes[r], values[r])` at `x`.
    pub fn evaluate(&self, values: &[&FieldVec], x: Fe) -> Result<FieldVec> {
        self.field.combine(&self.row(x), values)
    }
}

/// Row `r -> prod_{l != r} (alpha - beta_l) / (beta_r - beta_l)`.
pub fn coeff_row(field: &Field, alpha: Fe, betas: &[Fe]) -> Result<Vec<Fe>> {
    Ok(LagrangeBasis::new(field, betas)?.row(alpha))
}

/// The full encoding matrix: one row per group point, one column per node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoeffMatrix {
    rows: Vec<Vec<Fe>>,
}

impl CoeffMatrix {
    pub fn new(field: &Field, points: &EvalPoints) -> Result<Self> {
        let basis = LagrangeBasis::new(field, points.betas())?;
        Ok(CoeffMatrix {
            rows: points.alphas().iter().map(|&a| basis.row(a)).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn row(&self, j: usize) -> &[Fe] {
        &self.rows[j]
    }

    pub fn get(&self, j: usize, r: usize) -> Fe {
        self.rows[j][r]
    }
}

/// Encodes `k` data chunks and `T_h` noise vectors into one share per group:
/// share `j` is the interpolant through the betas evaluated at `alpha_j`.
pub fn encode_client(
    field: &Field,
    chunks: &[FieldVec],
    noise: &[FieldVec],
    points: &EvalPoints,
) -> Result<Vec<FieldVec>> {
    let nodes = points.betas().len();
    if chunks.len() + noise.len() != nodes {
        return Err(Error::Dimension {
            expected: nodes - noise.len().min(nodes),
            got: chunks.len(),
        });
    }
    let inputs: Vec<&FieldVec> = chunks.iter().chain(noise).collect();
    let width = inputs.first().map_or(0, |v| v.len());
    if let Some(bad) = inputs.iter().find(|v| v.len() != width) {
        return Err(Error::Dimension {
            expected: width,
            got: bad.len(),
        });
    }
    let basis = LagrangeBasis::new(field, points.betas())?;
    points
        .alphas()
        .iter()
        .map(|&a| basis.evaluate(&inputs, a))
        .collect()
}

/// Interpolates through exactly `needed` samples and evaluates at `targets`.
pub fn interpolate_to_targets(
    field: &Field,
    samples: &[(Fe, FieldVec)],
    needed: usize,
    targets: &[Fe],
) -> Result<Vec<FieldVec>> {
    if samples.len() != needed {
        return Err(Error::Dimension {
            expected: needed,
            got: samples.len(),
        });
    }
    let xs: Vec<Fe> = samples.iter().map(|(x, _)| *x).collect();
    let ys: Vec<&FieldVec> = samples.iter().map(|(_, y)| y).collect();
    let basis = LagrangeBasis::new(field, &xs)?;
    targets.iter().map(|&t| basis.evaluate(&ys, t)).collect()
}

/// Rows of the encoding matrix for the given groups, restricted to the
/// noise columns `k..k+T_h`.
pub fn ub_submatrix(
    field: &Field,
    groups: &[usize],
    points: &EvalPoints,
    k: usize,
) -> Result<Vec<Vec<Fe>>> {
    let nodes = points.betas().len();
    if k > nodes {
        return Err(Error::Dimension {
            expected: nodes,
            got: k,
        });
    }
    let t_h = nodes - k;
    if groups.len() != t_h {
        return Err(Error::Dimension {
            expected: t_h,
            got: groups.len(),
        });
    }
    let basis = LagrangeBasis::new(field, points.betas())?;
    groups
        .iter()
        .map(|&g| Ok(basis.row(points.alpha(g)?)[k..].to_vec()))
        .collect()
}

/// Rank test by Gaussian elimination.
pub fn is_invertible(field: &Field, matrix: &[Vec<Fe>]) -> Result<bool> {
    Ok(rank(field, matrix)? == matrix.len())
}

fn rank(field: &Field, matrix: &[Vec<Fe>]) -> Result<usize> {
    let n = matrix.len();
    if let Some(bad) = matrix.iter().find(|row| row.len() != n) {
        return Err(Error::Dimension {
            expected: n,
            got: bad.len(),
        });
    }
    let mut m = matrix.to_vec();
    let mut rank = 0;
    for col in 0..n {
        let Some(pivot) = (rank..n).find(|&r| !m[r][col].is_zero()) else {
            continue;
        };
        m.swap(rank, pivot);
        let inv = field.inv(m[rank][col])?;
        for r in rank + 1..n {
            let factor = field.mul(m[r][col], inv);
            if factor.is_zero() {
                continue;
            }
            let (top, bottom) = m.split_at_mut(r);
            for (x, &y) in bottom[0][col..].iter_mut().zip(&top[rank][col..]) {
                *x = field.sub(*x, field.mul(factor, y));
            }
        }
        rank += 1;
    }
    Ok(rank)
}
