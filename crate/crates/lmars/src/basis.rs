//! Finite hinge basis induced by a set of design points.
//!
//! Every design matrix column is a tensor product of hinges
//! `prod_{k in S(alpha)} (x_k - u_k)_+` with knots `u_k` drawn from the
//! per-dimension knot grid `{0} ∪ {observed values} ∪ {1}`. Columns whose
//! knot vector is all-zero are products of linear terms and stay unpenalized;
//! every other column contributes its absolute coefficient to the variation
//! budget.

use crate::error::{Error, Result};
use crate::estimator::ScalingTransform;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

/// Coefficients smaller than this are treated as LASSO zeros and dropped
/// from fitted models.
pub const COEF_DROP_TOL: f64 = 1e-12;

/// Per-dimension sorted knot lists `0 = u_0 < u_1 < ... < u_{n_k} = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct KnotGrid {
    knots: Vec<Vec<f64>>,
}

impl KnotGrid {
    /// Builds the grid from an `n x d` matrix of points in `[0,1]^d`:
    /// each dimension's list is the sorted, deduplicated union of `{0}`,
    /// the observed column values, and `{1}`.
    ///
    /// Deduplication uses exact floating-point equality; values that arrive
    /// identical collapse to one knot.
    pub fn from_design(x: ArrayView2<'_, f64>) -> Result<Self> {
        let d = x.ncols();
        if d == 0 {
            return Err(Error::Argument("design matrix has no columns".into()));
        }
        let mut knots = Vec::with_capacity(d);
        for k in 0..d {
            let mut vals: Vec<f64> = Vec::with_capacity(x.nrows() + 2);
            vals.push(0.0);
            for (i, &v) in x.column(k).iter().enumerate() {
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Error::Domain(format!(
                        "design value {v} at row {i}, column {k} lies outside [0, 1]"
                    )));
                }
                vals.push(v);
            }
            vals.push(1.0);
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            knots.push(vals);
        }
        Ok(KnotGrid { knots })
    }

    /// Grid with explicit per-dimension knot lists (must satisfy the
    /// invariants: strictly increasing, first 0, last 1).
    pub fn from_lists(knots: Vec<Vec<f64>>) -> Result<Self> {
        for (k, list) in knots.iter().enumerate() {
            if list.len() < 2 || list[0] != 0.0 || *list.last().unwrap() != 1.0 {
                return Err(Error::Argument(format!(
                    "knot list for dimension {k} must start at 0 and end at 1"
                )));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Argument(format!(
                    "knot list for dimension {k} is not strictly increasing"
                )));
            }
        }
        Ok(KnotGrid { knots })
    }

    pub fn dims(&self) -> usize {
        self.knots.len()
    }

    /// `n_k`: one less than the number of knots in dimension `k`. Knots with
    /// index `0..n_k` are admissible hinge knots; the final knot 1 never is,
    /// since `(x - 1)_+` vanishes identically on `[0, 1]`.
    pub fn segments(&self, k: usize) -> usize {
        self.knots[k].len() - 1
    }

    pub fn knots(&self, k: usize) -> &[f64] {
        &self.knots[k]
    }
}

/// One basis column: an interaction pattern `alpha` (0/1 per dimension, not
/// all zero) and knot indices `l`, one per active dimension, each in
/// `[0, n_k - 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasisIndex {
    pub alpha: Vec<u8>,
    pub l: Vec<usize>,
}

impl BasisIndex {
    /// True when some knot index is nonzero, i.e. the column carries at
    /// least one genuine hinge and is subject to the budget.
    pub fn penalized(&self) -> bool {
        self.l.iter().any(|&li| li != 0)
    }

    pub fn order(&self) -> usize {
        self.alpha.iter().filter(|&&a| a == 1).count()
    }
}

/// Enumerates `J^s = {(alpha, l) : 0 < |alpha| <= s, l_k in [0, n_k - 1]}`
/// in a deterministic order: `alpha` ascending as a binary integer with
/// dimension 1 as the least significant bit, then `l` row-major (last active
/// dimension fastest). `|J^d| = prod(1 + n_k) - 1`.
pub fn enumerate_basis(knots: &KnotGrid, s: usize) -> Result<Vec<BasisIndex>> {
    let d = knots.dims();
    if s < 1 || s > d {
        return Err(Error::Argument(format!(
            "interaction cap s = {s} must satisfy 1 <= s <= d = {d}"
        )));
    }
    let mut out = Vec::new();
    for code in 1u64..(1u64 << d) {
        let alpha: Vec<u8> = (0..d).map(|k| ((code >> k) & 1) as u8).collect();
        let active: Vec<usize> = (0..d).filter(|&k| alpha[k] == 1).collect();
        if active.len() > s {
            continue;
        }
        let limits: Vec<usize> = active.iter().map(|&k| knots.segments(k)).collect();
        let mut l = vec![0usize; active.len()];
        loop {
            out.push(BasisIndex {
                alpha: alpha.clone(),
                l: l.clone(),
            });
            // row-major increment: last active dimension fastest
            let mut pos = active.len();
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                l[pos] += 1;
                if l[pos] < limits[pos] {
                    break;
                }
                l[pos] = 0;
            }
            if l.iter().all(|&li| li == 0) {
                break;
            }
        }
    }
    Ok(out)
}

/// `prod_{j in S(alpha)} (x_j - t_j)_+` with `t` listing knots for active
/// dimensions in ascending dimension order.
pub fn eval_term(alpha: &[u8], t: &[f64], x: &[f64]) -> f64 {
    let mut prod = 1.0;
    let mut ti = 0;
    for (k, &a) in alpha.iter().enumerate() {
        if a == 1 {
            let h = x[k] - t[ti];
            if h <= 0.0 {
                return 0.0;
            }
            prod *= h;
            ti += 1;
        }
    }
    prod
}

/// Builds the `n x |basis|` design matrix together with the penalization
/// mask. Column order matches `basis`; entries are computed by the same
/// `eval_term` used for model evaluation, so `m[[i, j]]` equals the term
/// value at row `i` exactly.
pub fn design_matrix(
    x: ArrayView2<'_, f64>,
    basis: &[BasisIndex],
    knots: &KnotGrid,
) -> (Array2<f64>, Vec<bool>) {
    let n = x.nrows();
    let mut m = Array2::zeros((n, basis.len()));
    let mask: Vec<bool> = basis.iter().map(|b| b.penalized()).collect();
    let ts: Vec<Vec<f64>> = basis
        .iter()
        .map(|b| {
            let active: Vec<usize> = (0..b.alpha.len()).filter(|&k| b.alpha[k] == 1).collect();
            active
                .iter()
                .zip(b.l.iter())
                .map(|(&k, &li)| knots.knots(k)[li])
                .collect()
        })
        .collect();
    for i in 0..n {
        let row: Vec<f64> = x.row(i).to_vec();
        for (j, b) in basis.iter().enumerate() {
            m[[i, j]] = eval_term(&b.alpha, &ts[j], &row);
        }
    }
    (m, mask)
}

/// Which coordinate system a model's knots live in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Scaled,
    Original,
}

/// One additive term `coef * prod_{k in S(alpha)} (x_k - knot)_+`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarsTerm {
    /// 0/1 interaction pattern, length `d`.
    pub alpha: Vec<u8>,
    /// Knots for active dimensions, ascending dimension order, length `|alpha|`.
    pub knots: Vec<f64>,
    pub coef: f64,
}

/// Solver metadata carried on fitted models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    #[serde(rename = "V")]
    pub v: f64,
    pub s: usize,
    pub converged: bool,
    pub objective: f64,
}

/// A fitted model: intercept plus a finite list of hinge-product terms.
///
/// Zero-coefficient terms are never stored and no two terms share the same
/// `(alpha, knots)` pair. When `domain_tag` is `Scaled`, every knot lies in
/// `[0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarsModel {
    pub version: u32,
    pub d: usize,
    pub domain_tag: DomainTag,
    pub intercept: f64,
    pub terms: Vec<MarsTerm>,
    pub transform: Option<ScalingTransform>,
    pub fit_meta: Option<FitMeta>,
}

pub const MODEL_JSON_VERSION: u32 = 1;

impl MarsModel {
    /// Intercept-only model.
    pub fn constant(d: usize, intercept: f64) -> Self {
        MarsModel {
            version: MODEL_JSON_VERSION,
            d,
            domain_tag: DomainTag::Scaled,
            intercept,
            terms: Vec::new(),
            transform: None,
            fit_meta: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_JSON_VERSION {
            return Err(Error::Argument(format!(
                "model version {} not supported (expected {MODEL_JSON_VERSION})",
                self.version
            )));
        }
        let mut seen: Vec<(&[u8], &[f64])> = Vec::with_capacity(self.terms.len());
        for term in &self.terms {
            if term.alpha.len() != self.d {
                return Err(Error::Argument("term alpha length must equal d".into()));
            }
            if term.alpha.iter().all(|&a| a == 0) {
                return Err(Error::Argument("term alpha must not be all zero".into()));
            }
            let order = term.alpha.iter().filter(|&&a| a == 1).count();
            if term.knots.len() != order {
                return Err(Error::Argument(
                    "term knot count must equal interaction order".into(),
                ));
            }
            if self.domain_tag == DomainTag::Scaled
                && term.knots.iter().any(|&t| !(0.0..1.0).contains(&t))
            {
                return Err(Error::Domain(
                    "scaled-domain knots must lie in [0, 1)".into(),
                ));
            }
            if term.coef == 0.0 {
                return Err(Error::Argument("zero-coefficient terms must be dropped".into()));
            }
            let key = (term.alpha.as_slice(), term.knots.as_slice());
            if seen.iter().any(|&(a, t)| a == key.0 && t == key.1) {
                return Err(Error::Argument(
                    "duplicate (alpha, knots) pair in model terms".into(),
                ));
            }
            seen.push(key);
        }
        Ok(())
    }

    /// Evaluates the stored representation at `x` directly, with no domain
    /// transform (see [`crate::estimator::predict`] for transform handling).
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut acc = self.intercept;
        for term in &self.terms {
            acc += term.coef * eval_term(&term.alpha, &term.knots, x);
        }
        acc
    }

    /// Sum of absolute coefficients over terms with a nonzero knot vector:
    /// the variation of the finite model. Terms that are pure products of
    /// linear factors (all knots zero) do not count.
    pub fn vmars_finite(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.knots.iter().any(|&k| k != 0.0))
            .map(|t| t.coef.abs())
            .sum()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let model: MarsModel = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}
