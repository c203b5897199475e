//! Detector response matrices: loss, dark counts and optical crosstalk, their
//! composition `M = M_ct · M_dk · M_loss`, and the naive inverse.
//!
//! A [`ResponseMatrix`] maps an input photon number `m` (column) to a
//! detected count `n` (row). Columns cover `0..=n_in`; rows cover
//! `0..=n_out` with `n_out >= n_in` for the adaptive builders, so that the
//! mass dark counts and crosstalk push above `n_in` is kept. All three
//! elementary matrices only move counts in one direction (loss down, dark and
//! crosstalk up), which makes row-cropping exact: rows `0..=R` of a product
//! depend only on rows `0..=R` of its factors.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::distributions::{poisson_pmf, ProbVec, TRUNC_TOL};
use crate::error::{Error, Result};
use crate::special::{binomial_head, binomial_row};

/// Refuse [`invert_reconstruct`] above this condition estimate.
pub const MAX_CONDITION: f64 = 1e12;

/// Per-stage tail target for adaptive rows; several stages compose into one
/// matrix, so each gets a fraction of the overall tolerance.
const STAGE_TOL: f64 = TRUNC_TOL / 10.0;

/// Safety cap on adaptive row growth.
const MAX_ROWS: usize = 20_000;

/// Detection efficiency, dark-count mean and overall crosstalk probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub eta: f64,
    pub lambda_dk: f64,
    pub epsilon: f64,
}

impl DetectorParams {
    pub fn new(eta: f64, lambda_dk: f64, epsilon: f64) -> Result<Self> {
        let p = Self {
            eta,
            lambda_dk,
            epsilon,
        };
        p.validate()?;
        Ok(p)
    }

    /// Lossless, dark-free, crosstalk-free detector.
    pub fn ideal() -> Self {
        Self {
            eta: 1.0,
            lambda_dk: 0.0,
            epsilon: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_eta(self.eta)?;
        check_lambda(self.lambda_dk)?;
        check_epsilon(self.epsilon)
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eta) {
        Ok(())
    } else {
        Err(Error::domain(format!("efficiency eta must be in [0, 1], got {eta}")))
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("dark-count mean must be finite and >= 0, got {lambda}")))
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if (0.0..1.0).contains(&eps) {
        Ok(())
    } else {
        Err(Error::domain(format!("crosstalk probability must be in [0, 1), got {eps}")))
    }
}

/// Overall crosstalk probability from the per-neighbour probability on a
/// four-neighbour lattice.
pub fn epsilon_from_nearest_neighbor(epsilon_nn: f64) -> f64 {
    1.0 - (1.0 - epsilon_nn).powi(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Loss,
    Dark,
    Crosstalk,
    Composite,
}

impl fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixKind::Loss => "loss",
            MatrixKind::Dark => "dark",
            MatrixKind::Crosstalk => "crosstalk",
            MatrixKind::Composite => "composite",
        })
    }
}

impl FromStr for MatrixKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(MatrixKind::Loss),
            "dark" => Ok(MatrixKind::Dark),
            "crosstalk" => Ok(MatrixKind::Crosstalk),
            "composite" => Ok(MatrixKind::Composite),
            other => Err(Error::domain(format!("unknown matrix kind '{other}'"))),
        }
    }
}

/// Conditional probabilities `M(n|m)`; rows are detected counts, columns are
/// incoming photon numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    kind: MatrixKind,
    data: DMatrix<f64>,
}

impl ResponseMatrix {
    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    /// Largest input photon number (last column).
    pub fn n_in(&self) -> usize {
        self.data.ncols() - 1
    }

    /// Largest detected count (last row).
    pub fn n_out(&self) -> usize {
        self.data.nrows() - 1
    }

    /// Entry `M(n|m)`, zero outside the stored range.
    pub fn get(&self, n: usize, m: usize) -> f64 {
        if n < self.data.nrows() && m < self.data.ncols() {
            self.data[(n, m)]
        } else {
            0.0
        }
    }

    pub fn column(&self, m: usize) -> Vec<f64> {
        self.data.column(m).iter().copied().collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.data.column_iter().map(|c| c.sum()).collect()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Keep rows `0..=n_out` (and at most as many columns).
    pub fn crop_rows(&self, n_out: usize) -> Self {
        let rows = (n_out + 1).min(self.data.nrows());
        Self {
            kind: self.kind,
            data: self.data.rows(0, rows).into_owned(),
        }
    }

    /// Top-left square block covering `0..=n_in` on both axes.
    pub fn square(&self) -> Self {
        let k = self.data.ncols().min(self.data.nrows());
        Self {
            kind: self.kind,
            data: self.data.view((0, 0), (k, k)).into_owned(),
        }
    }

    /// Plain-text dump: header `n_max kind`, then one whitespace-separated
    /// row per detected count. `n_max` is the last column index; the number
    /// of rows is given by the number of lines.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n_in(), self.kind);
        for r in self.data.row_iter() {
            let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty matrix file"))?;
        let mut parts = header.split_whitespace();
        let n_max: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse(1, "header must be `n_max kind`"))?;
        let kind: MatrixKind = parts
            .next()
            .ok_or_else(|| Error::parse(1, "missing matrix kind"))?
            .parse()
            .map_err(|e: Error| Error::parse(1, e.to_string()))?;
        let mut values = Vec::new();
        let mut rows = 0;
        for (i, line) in lines {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(i + 1, e.to_string()))?;
            if row.len() != n_max + 1 {
                return Err(Error::parse(
                    i + 1,
                    format!("expected {} columns, found {}", n_max + 1, row.len()),
                ));
            }
            values.extend(row);
            rows += 1;
        }
        if rows == 0 {
            return Err(Error::parse(2, "matrix has no rows"));
        }
        Ok(Self {
            kind,
            data: DMatrix::from_row_slice(rows, n_max + 1, &values),
        })
    }
}

fn from_columns(kind: MatrixKind, n_in: usize, n_out: usize, col: impl Fn(usize) -> Vec<f64>) -> ResponseMatrix {
    let mut data = DMatrix::zeros(n_out + 1, n_in + 1);
    for m in 0..=n_in {
        for (n, v) in col(m).into_iter().enumerate().take(n_out + 1) {
            data[(n, m)] = v;
        }
    }
    ResponseMatrix { kind, data }
}

/// Binomial loss `C(m,n) η^n (1-η)^(m-n)`, square on `0..=n_max`.
pub fn loss_matrix(eta: f64, n_max: usize) -> Result<ResponseMatrix> {
    loss_matrix_shaped(eta, n_max, n_max)
}

pub fn loss_matrix_shaped(eta: f64, n_in: usize, n_out: usize) -> Result<ResponseMatrix> {
    check_eta(eta)?;
    Ok(from_columns(MatrixKind::Loss, n_in, n_out, |m| binomial_head(m, eta, n_out)))
}

/// Poisson dark counts `λ^(n-m) e^(-λ) / (n-m)!`. Rows extend past `n_max`
/// until every column's tail is negligible.
pub fn dark_matrix(lambda_dk: f64, n_max: usize) -> Result<ResponseMatrix> {
    check_lambda(lambda_dk)?;
    let headroom = crate::distributions::SourceModel::Poisson { n_bar: lambda_dk }
        .adaptive_n_max(STAGE_TOL)?;
    dark_matrix_shaped(lambda_dk, n_max, n_max + headroom)
}

pub fn dark_matrix_shaped(lambda_dk: f64, n_in: usize, n_out: usize) -> Result<ResponseMatrix> {
    check_lambda(lambda_dk)?;
    let pois = poisson_pmf(lambda_dk, n_out)?.into_vec();
    Ok(from_columns(MatrixKind::Dark, n_in, n_out, |m| {
        let mut col = vec![0.0; n_out + 1];
        for n in m..=n_out {
            col[n] = pois[n - m];
        }
        col
    }))
}

/// Staged crosstalk recursion.
///
/// `M(n|m) = Σ_k C(m,k) ε^k (1-ε)^(m-k) M(n-m|k)` for `n >= m > 0`, with
/// `M(0|0) = 1` and zero otherwise: each of the `m` elements fired in a stage
/// triggers at most one element in the next stage, and the `k` newly
/// triggered elements must account for the remaining `n - m` counts.
/// The table is filled in increasing `n`, so every lookup `M(n-m|k)` is
/// already available.
struct CrosstalkTable {
    epsilon: f64,
    rows: Vec<Vec<f64>>,
    stage: Vec<Vec<f64>>,
}

impl CrosstalkTable {
    fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            rows: vec![vec![1.0]],
            stage: vec![vec![1.0]],
        }
    }

    /// Append row `n = rows.len()`, storing `M(n|m)` for `m = 0..=n`.
    fn push_row(&mut self) {
        let n = self.rows.len();
        while self.stage.len() <= n {
            let next = self.stage.len();
            self.stage.push(binomial_row(next, self.epsilon));
        }
        let mut row = vec![0.0; n + 1];
        for (m, slot) in row.iter_mut().enumerate().skip(1) {
            let rest = n - m;
            let kmax = m.min(rest);
            *slot = self.stage[m][..=kmax]
                .iter()
                .zip(&self.rows[rest][..=kmax])
                .map(|(w, t)| w * t)
                .sum();
        }
        self.rows.push(row);
    }

    fn get(&self, n: usize, m: usize) -> f64 {
        if m <= n {
            self.rows[n][m]
        } else {
            0.0
        }
    }

    fn into_matrix(self, n_in: usize, n_out: usize) -> ResponseMatrix {
        let mut data = DMatrix::zeros(n_out + 1, n_in + 1);
        for n in 0..=n_out {
            for m in 0..=n_in.min(n) {
                data[(n, m)] = self.get(n, m);
            }
        }
        ResponseMatrix {
            kind: MatrixKind::Crosstalk,
            data,
        }
    }
}

/// Crosstalk matrix on columns `0..=n_max`, rows grown until the last
/// (heaviest-tailed) column has lost less than the stage tolerance.
pub fn crosstalk_matrix(epsilon: f64, n_max: usize) -> Result<ResponseMatrix> {
    check_epsilon(epsilon)?;
    let mut table = CrosstalkTable::new(epsilon);
    let mut col_sum = if n_max == 0 { 1.0 } else { 0.0 };
    let mut n_out = 0;
    while n_out < n_max || 1.0 - col_sum >= STAGE_TOL {
        if n_out >= MAX_ROWS {
            return Err(Error::domain(format!(
                "crosstalk tail for epsilon={epsilon} does not fit in {MAX_ROWS} rows"
            )));
        }
        table.push_row();
        n_out += 1;
        col_sum += table.get(n_out, n_max);
    }
    Ok(table.into_matrix(n_max, n_out))
}

pub fn crosstalk_matrix_shaped(epsilon: f64, n_in: usize, n_out: usize) -> Result<ResponseMatrix> {
    check_epsilon(epsilon)?;
    let mut table = CrosstalkTable::new(epsilon);
    for _ in 0..n_out {
        table.push_row();
    }
    Ok(table.into_matrix(n_in, n_out))
}

fn product(kind: MatrixKind, a: &ResponseMatrix, b: &ResponseMatrix) -> Result<ResponseMatrix> {
    if a.data.ncols() != b.data.nrows() {
        return Err(Error::Dimension {
            expected: a.data.ncols(),
            found: b.data.nrows(),
        });
    }
    Ok(ResponseMatrix {
        kind,
        data: &a.data * &b.data,
    })
}

/// Full response `M_ct · M_dk · M_loss` on input photon numbers
/// `0..=n_max`, with adaptive rows.
pub fn compose(params: &DetectorParams, n_max: usize) -> Result<ResponseMatrix> {
    params.validate()?;
    let loss = loss_matrix(params.eta, n_max)?;
    let dark = dark_matrix(params.lambda_dk, n_max)?;
    let ct = crosstalk_matrix(params.epsilon, dark.n_out())?;
    let inner = product(MatrixKind::Composite, &dark, &loss)?;
    product(MatrixKind::Composite, &ct, &inner)
}

/// Rows `0..=n_out` of the full response on inputs `0..=n_in`. Exact for the
/// kept rows; whatever is missing from a column is the probability of
/// detecting more than `n_out`.
pub fn compose_shaped(params: &DetectorParams, n_in: usize, n_out: usize) -> Result<ResponseMatrix> {
    params.validate()?;
    let loss = loss_matrix_shaped(params.eta, n_in, n_out)?;
    let dark = dark_matrix_shaped(params.lambda_dk, n_out, n_out)?;
    let ct = crosstalk_matrix_shaped(params.epsilon, n_out, n_out)?;
    let inner = product(MatrixKind::Composite, &dark, &loss)?;
    product(MatrixKind::Composite, &ct, &inner)
}

/// `M · p`; the input must cover exactly the matrix columns.
pub fn apply(m: &ResponseMatrix, p: &ProbVec) -> Result<ProbVec> {
    Ok(ProbVec::from_raw(apply_raw(m, p.as_slice())?))
}

pub(crate) fn apply_raw(m: &ResponseMatrix, p: &[f64]) -> Result<Vec<f64>> {
    if p.len() != m.data.ncols() {
        return Err(Error::Dimension {
            expected: m.data.ncols(),
            found: p.len(),
        });
    }
    let mut out = vec![0.0; m.data.nrows()];
    for (j, &pj) in p.iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        for (o, &mij) in out.iter_mut().zip(m.data.column(j).iter()) {
            *o += mij * pj;
        }
    }
    Ok(out)
}

/// Result of the naive inverse: possibly negative entries, unclipped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconstruction {
    pub values: Vec<f64>,
    /// 2-norm condition number of the inverted block.
    pub condition: f64,
}

impl Reconstruction {
    pub fn has_negative(&self) -> bool {
        self.values.iter().any(|&v| v < 0.0)
    }
}

/// Solve `M p_o = p_m` on the square block `0..=n_in` of `m`.
///
/// `p_measured` must have exactly `n_in + 1` entries. Fails with
/// [`Error::IllConditioned`] when the condition estimate exceeds
/// [`MAX_CONDITION`].
pub fn invert_reconstruct(m: &ResponseMatrix, p_measured: &[f64]) -> Result<Reconstruction> {
    let sq = m.square();
    let k = sq.data.ncols();
    if sq.data.nrows() != k {
        return Err(Error::Dimension {
            expected: k,
            found: sq.data.nrows(),
        });
    }
    if p_measured.len() != k {
        return Err(Error::Dimension {
            expected: k,
            found: p_measured.len(),
        });
    }
    let sv = sq.data.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let b = nalgebra::DVector::from_column_slice(p_measured);
    let x = sq
        .data
        .lu()
        .solve(&b)
        .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    Ok(Reconstruction {
        values: x.iter().copied().collect(),
        condition,
    })
}
