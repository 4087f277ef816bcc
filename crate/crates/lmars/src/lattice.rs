//! Difference-operator formulation for equally spaced lattice designs.
//!
//! Data on the lattice `{(i_1/n_1, ..., i_d/n_d)}` is treated as a tensor
//! `theta` indexed by `I_0 = [0:(n_1-1)] x ... x [0:(n_d-1)]`. Mixed
//! differences `D^(alpha)` generalize second differences to tensors; the
//! stacked transform `H^(2)` collects them into one same-shaped tensor whose
//! inverse is a pair of cumulative-sum passes. The weighted absolute sum
//! `V_2(theta)` of qualifying differences is the discrete variation, and the
//! constrained fit on a lattice reduces to the same masked-L1 least-squares
//! problem as the general design, over a smaller column set.

use crate::basis::{eval_term, DomainTag, FitMeta, MarsModel, MarsTerm, COEF_DROP_TOL, MODEL_JSON_VERSION};
use crate::error::{Error, Result};
use crate::solver::{solve, LassoProblem, DEFAULT_MAX_ITER, DEFAULT_TOL};
use ndarray::{Array1, Array2};
use std::io::{BufRead, Write};
use std::path::Path;

/// Shape of a lattice tensor: per-dimension sizes `n_k >= 2` and index
/// offsets `a_k` (zero except inside difference-operator recursions).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeShape {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl LatticeShape {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        let offsets = vec![0; sizes.len()];
        Self::with_offsets(sizes, offsets)
    }

    pub fn with_offsets(sizes: Vec<usize>, offsets: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Argument("lattice shape needs at least one dimension".into()));
        }
        if offsets.len() != sizes.len() {
            return Err(Error::Argument("offsets length must match sizes length".into()));
        }
        if let Some(k) = sizes.iter().position(|&n| n < 2) {
            return Err(Error::Argument(format!(
                "lattice size n_{} = {} violates n_k >= 2",
                k + 1,
                sizes[k]
            )));
        }
        Ok(LatticeShape { sizes, offsets })
    }

    pub fn dims(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A real tensor over a lattice shape, stored row-major with dimension 1
/// slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeField {
    shape: LatticeShape,
    values: Vec<f64>,
}

impl LatticeField {
    pub fn new(shape: LatticeShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::Argument(format!(
                "value count {} does not match shape volume {}",
                values.len(),
                shape.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("lattice field contains non-finite values".into()));
        }
        Ok(LatticeField { shape, values })
    }

    pub fn shape(&self) -> &LatticeShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at a multi-index relative to the shape's offsets.
    pub fn at(&self, idx: &[usize]) -> f64 {
        self.values[linear_offset(idx, &self.shape.sizes)]
    }
}

fn linear_offset(idx: &[usize], sizes: &[usize]) -> usize {
    let mut off = 0;
    for (i, n) in idx.iter().zip(sizes) {
        debug_assert!(i < n);
        off = off * n + i;
    }
    off
}

/// Calls `f` with every multi-index of the given sizes in row-major order.
fn for_each_index(sizes: &[usize], mut f: impl FnMut(&[usize])) {
    let d = sizes.len();
    let mut idx = vec![0usize; d];
    if sizes.iter().any(|&n| n == 0) {
        return;
    }
    loop {
        f(&idx);
        let mut k = d;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < sizes[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// A tensor over a product of inclusive index ranges; the working type of
/// the difference recursion.
#[derive(Clone, Debug, PartialEq)]
struct Block {
    ranges: Vec<(usize, usize)>,
    values: Vec<f64>,
}

impl Block {
    fn sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(|&(s, e)| e - s + 1).collect()
    }
}

/// Joint first difference along every axis: the output is indexed by ranges
/// shifted up by one, with entries `sum_{delta in {0,1}^d} (-1)^{|delta|}
/// theta_{i - delta}`.
fn d_joint(b: &Block) -> Result<Block> {
    let d = b.ranges.len();
    let out_ranges: Vec<(usize, usize)> = b.ranges.iter().map(|&(s, e)| (s + 1, e)).collect();
    if out_ranges.iter().any(|&(s, e)| s > e) {
        return Err(Error::Structure(
            "difference produced an empty index range; lattice too small for this order".into(),
        ));
    }
    let in_sizes = b.sizes();
    let out_sizes: Vec<usize> = out_ranges.iter().map(|&(s, e)| e - s + 1).collect();
    let mut values = Vec::with_capacity(out_sizes.iter().product());
    let mut rel = vec![0usize; d];
    for_each_index(&out_sizes, |idx| {
        let mut acc = 0.0;
        for code in 0..(1u32 << d) {
            let mut sign = 1.0;
            for (k, r) in rel.iter_mut().enumerate() {
                // idx is relative to out_ranges, which sit one above the
                // input ranges, so the input-relative index is idx[k] + 1.
                let delta = ((code >> k) & 1) as usize;
                *r = idx[k] + 1 - delta;
                if delta == 1 {
                    sign = -sign;
                }
            }
            acc += sign * b.values[linear_offset(&rel, &in_sizes)];
        }
        values.push(acc);
    });
    Ok(Block { ranges: out_ranges, values })
}

fn diff_block(b: &Block, alpha: &[usize]) -> Result<Block> {
    if alpha.iter().all(|&a| a == 0) {
        return Ok(b.clone());
    }
    if alpha.iter().all(|&a| a > 0) {
        let db = d_joint(b)?;
        let next: Vec<usize> = alpha.iter().map(|a| a - 1).collect();
        return diff_block(&db, &next);
    }
    // Slice dimensions with alpha_k = 0 at their current range start, recurse
    // on the remaining dimensions, then re-embed the dropped dimensions as
    // singletons at the same start values.
    let keep: Vec<usize> = (0..alpha.len()).filter(|&k| alpha[k] > 0).collect();
    let in_sizes = b.sizes();
    let sub_ranges: Vec<(usize, usize)> = keep.iter().map(|&k| b.ranges[k]).collect();
    let sub_sizes: Vec<usize> = sub_ranges.iter().map(|&(s, e)| e - s + 1).collect();
    let mut sub_values = Vec::with_capacity(sub_sizes.iter().product());
    let mut full = vec![0usize; alpha.len()];
    for_each_index(&sub_sizes, |idx| {
        for (pos, &k) in keep.iter().enumerate() {
            full[k] = idx[pos];
        }
        for k in 0..alpha.len() {
            if alpha[k] == 0 {
                full[k] = 0; // relative position of the range start
            }
        }
        sub_values.push(b.values[linear_offset(&full, &in_sizes)]);
    });
    let sub_alpha: Vec<usize> = keep.iter().map(|&k| alpha[k]).collect();
    let sub = diff_block(&Block { ranges: sub_ranges, values: sub_values }, &sub_alpha)?;
    // Singleton insertion preserves row-major order, so values carry over.
    let mut ranges = Vec::with_capacity(alpha.len());
    let mut pos = 0;
    for k in 0..alpha.len() {
        if alpha[k] > 0 {
            ranges.push(sub.ranges[pos]);
            pos += 1;
        } else {
            let start = b.ranges[k].0;
            ranges.push((start, start));
        }
    }
    Ok(Block { ranges, values: sub.values })
}

/// A mixed difference `D^(alpha) theta` together with its index set
/// `I_0^(alpha)`: per dimension, a singleton at `a_k + alpha_k` when
/// `alpha_k < max alpha`, and the range `[a_k + max alpha, a_k + n_k - 1]`
/// when `alpha_k = max alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffResult {
    pub alpha: Vec<usize>,
    /// Inclusive per-dimension index ranges.
    pub index_set: Vec<(usize, usize)>,
    /// Row-major values over `index_set`.
    pub values: Vec<f64>,
}

impl DiffResult {
    pub fn sizes(&self) -> Vec<usize> {
        self.index_set.iter().map(|&(s, e)| e - s + 1).collect()
    }

    /// Value at an absolute multi-index inside `index_set`.
    pub fn at(&self, idx: &[usize]) -> f64 {
        let rel: Vec<usize> = idx
            .iter()
            .zip(&self.index_set)
            .map(|(&i, &(s, _))| i - s)
            .collect();
        self.values[linear_offset(&rel, &self.sizes())]
    }
}

/// Applies the mixed difference operator of order `alpha` (components 0, 1,
/// or 2) to `theta`.
pub fn diff(theta: &LatticeField, alpha: &[usize]) -> Result<DiffResult> {
    let d = theta.shape.dims();
    if alpha.len() != d {
        return Err(Error::Argument(format!(
            "alpha length {} does not match lattice dimension {d}",
            alpha.len()
        )));
    }
    if alpha.iter().any(|&a| a > 2) {
        return Err(Error::UnsupportedOrder(alpha.to_vec()));
    }
    let ranges: Vec<(usize, usize)> = theta
        .shape
        .offsets
        .iter()
        .zip(&theta.shape.sizes)
        .map(|(&a, &n)| (a, a + n - 1))
        .collect();
    let block = diff_block(
        &Block { ranges, values: theta.values.clone() },
        alpha,
    )?;
    Ok(DiffResult {
        alpha: alpha.to_vec(),
        index_set: block.ranges,
        values: block.values,
    })
}

fn require_zero_offsets(shape: &LatticeShape, what: &str) -> Result<()> {
    if shape.offsets.iter().any(|&a| a != 0) {
        return Err(Error::Argument(format!("{what} requires zero offsets")));
    }
    Ok(())
}

/// The stacked difference transform: a same-shaped tensor carrying
/// `(D^(beta) theta)_i` at each index `i`, with `beta_k = min(i_k, 2)`.
/// Indices in `{0,1}^d` carry `(D^(i) theta)_i`; every other index belongs
/// to exactly one block `I_0^(beta)` with `max beta = 2`.
pub fn h2(theta: &LatticeField) -> Result<LatticeField> {
    require_zero_offsets(&theta.shape, "h2")?;
    let d = theta.shape.dims();
    let sizes = theta.shape.sizes.clone();
    let mut out = vec![f64::NAN; theta.values.len()];

    let mut beta = vec![0usize; d];
    loop {
        // validity: the block I_0^(beta) is nonempty
        let m = *beta.iter().max().unwrap();
        let valid = beta
            .iter()
            .zip(&sizes)
            .all(|(&bk, &nk)| if bk == m { m <= nk - 1 } else { bk <= nk - 1 });
        if valid {
            let result = diff(theta, &beta)?;
            let out_sizes = result.sizes();
            let mut abs = vec![0usize; d];
            let mut pos = 0usize;
            for_each_index(&out_sizes, |idx| {
                for k in 0..d {
                    abs[k] = result.index_set[k].0 + idx[k];
                }
                if m == 2 {
                    out[linear_offset(&abs, &sizes)] = result.values[pos];
                } else if abs == beta {
                    // single carried entry for beta in {0,1}^d
                    out[linear_offset(&abs, &sizes)] = result.values[pos];
                }
                pos += 1;
            });
        }
        // next beta in {0,1,2}^d
        let mut k = d;
        loop {
            if k == 0 {
                let field = LatticeField::new(theta.shape.clone(), out)
                    .map_err(|_| Error::Structure("h2 left unassigned entries".into()))?;
                return Ok(field);
            }
            k -= 1;
            beta[k] += 1;
            if beta[k] <= 2 {
                break;
            }
            beta[k] = 0;
        }
    }
}

/// Inverts [`h2`] by two passes of cumulative sums: first within each block
/// `I_0^(alpha)` for `alpha in {0,1}^d \ {0}` along its active dimensions,
/// then over the whole tensor along every dimension. Exact on integer
/// inputs.
pub fn reconstruct(h: &LatticeField) -> Result<LatticeField> {
    require_zero_offsets(&h.shape, "reconstruct")?;
    let d = h.shape.dims();
    let sizes = h.shape.sizes.clone();
    let mut out = h.values.clone();
    let strides: Vec<usize> = {
        let mut s = vec![1usize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            s[k] = s[k + 1] * sizes[k + 1];
        }
        s
    };

    // First pass: within each block (i_k = 0 off the active set, i_k >= 1 on
    // it), accumulate along every active dimension.
    for code in 1u64..(1u64 << d) {
        let active: Vec<usize> = (0..d).filter(|&k| (code >> k) & 1 == 1).collect();
        for &axis in &active {
            // iterate over block positions with the axis coordinate fixed at 1
            let iter_sizes: Vec<usize> = (0..d)
                .map(|k| {
                    if k == axis {
                        1
                    } else if (code >> k) & 1 == 1 {
                        sizes[k] - 1
                    } else {
                        1
                    }
                })
                .collect();
            for_each_index(&iter_sizes, |idx| {
                let mut base = 0usize;
                for k in 0..d {
                    let coord = if k == axis {
                        1
                    } else if (code >> k) & 1 == 1 {
                        idx[k] + 1
                    } else {
                        0
                    };
                    base += coord * strides[k];
                }
                for i in 2..sizes[axis] {
                    let prev = base + (i - 2) * strides[axis];
                    out[prev + strides[axis]] += out[prev];
                }
            });
        }
    }

    // Second pass: plain cumulative sums along every dimension of the full
    // tensor.
    for axis in 0..d {
        let iter_sizes: Vec<usize> = (0..d)
            .map(|k| if k == axis { 1 } else { sizes[k] })
            .collect();
        for_each_index(&iter_sizes, |idx| {
            let mut base = 0usize;
            for k in 0..d {
                if k != axis {
                    base += idx[k] * strides[k];
                }
            }
            for i in 1..sizes[axis] {
                let cur = base + (i - 1) * strides[axis];
                out[cur + strides[axis]] += out[cur];
            }
        });
    }

    LatticeField::new(h.shape.clone(), out)
}

fn qualifying_betas(sizes: &[usize]) -> Vec<Vec<usize>> {
    let d = sizes.len();
    let mut betas = Vec::new();
    let mut beta = vec![0usize; d];
    loop {
        let m = *beta.iter().max().unwrap();
        if m == 2 {
            let nonempty = beta
                .iter()
                .zip(sizes)
                .all(|(&bk, &nk)| if bk == 2 { nk >= 3 } else { true });
            if nonempty {
                betas.push(beta.clone());
            }
        }
        let mut k = d;
        loop {
            if k == 0 {
                return betas;
            }
            k -= 1;
            beta[k] += 1;
            if beta[k] <= 2 {
                break;
            }
            beta[k] = 0;
        }
    }
}

/// The discrete variation
/// `V_2(theta) = sum_beta (prod_k n_k^(beta_k - [beta_k = 2])) * sum |D^(beta) theta|`
/// over `beta in {0,1,2}^d` with `max beta = 2`.
pub fn v2(theta: &LatticeField) -> Result<f64> {
    require_zero_offsets(&theta.shape, "v2")?;
    let sizes = &theta.shape.sizes;
    let mut total = 0.0;
    for beta in qualifying_betas(sizes) {
        let weight: f64 = beta
            .iter()
            .zip(sizes)
            .map(|(&bk, &nk)| (nk as f64).powi(bk as i32 - i32::from(bk == 2)))
            .product();
        let d_beta = diff(theta, &beta)?;
        let abs_sum: f64 = d_beta.values.iter().map(|v| v.abs()).sum();
        total += weight * abs_sum;
    }
    Ok(total)
}

/// The same quantity computed through the stacked transform:
/// `sum_alpha (prod_k n_k^alpha_k) * sum_{i in I_0^(alpha) \ {alpha}} |(H^(2) theta)_i|`
/// over `alpha in {0,1}^d \ {0}`. Kept as an independent route for
/// cross-checking [`v2`].
pub fn v2_via_h2(theta: &LatticeField) -> Result<f64> {
    let h = h2(theta)?;
    let d = theta.shape.dims();
    let sizes = &theta.shape.sizes;
    let mut total = 0.0;
    for code in 1u64..(1u64 << d) {
        let alpha: Vec<usize> = (0..d).map(|k| ((code >> k) & 1) as usize).collect();
        let weight: f64 = alpha
            .iter()
            .zip(sizes)
            .map(|(&ak, &nk)| (nk as f64).powi(ak as i32))
            .product();
        let iter_sizes: Vec<usize> = alpha
            .iter()
            .zip(sizes)
            .map(|(&ak, &nk)| if ak == 1 { nk - 1 } else { 1 })
            .collect();
        let mut abs_sum = 0.0;
        let mut idx_abs = vec![0usize; d];
        for_each_index(&iter_sizes, |idx| {
            for k in 0..d {
                idx_abs[k] = if alpha[k] == 1 { idx[k] + 1 } else { 0 };
            }
            if idx_abs
                .iter()
                .zip(&alpha)
                .all(|(&i, &a)| i == a)
            {
                return; // exclude the corner i = alpha
            }
            abs_sum += h.at(&idx_abs).abs();
        });
        total += weight * abs_sum;
    }
    Ok(total)
}

/// Result of a lattice fit: the fitted tensor and the model it represents.
#[derive(Clone, Debug)]
pub struct LatticeFit {
    pub theta_hat: LatticeField,
    pub model: MarsModel,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

/// Fits the constrained least-squares problem on a lattice with budget `v`
/// and interaction cap `s`, using the default solver settings.
pub fn fit_lattice(y: &LatticeField, v: f64, s: usize) -> Result<LatticeFit> {
    fit_lattice_config(y, v, s, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

/// [`fit_lattice`] with explicit solver tolerance and iteration cap.
pub fn fit_lattice_config(
    y: &LatticeField,
    v: f64,
    s: usize,
    tol: f64,
    max_iter: usize,
) -> Result<LatticeFit> {
    require_zero_offsets(&y.shape, "fit_lattice")?;
    let d = y.shape.dims();
    if s < 1 || s > d {
        return Err(Error::Argument(format!(
            "interaction cap s = {s} must satisfy 1 <= s <= d = {d}"
        )));
    }
    if !(v >= 0.0) {
        return Err(Error::Argument(format!("budget V = {v} must be nonnegative")));
    }
    let sizes = &y.shape.sizes;
    let n = y.shape.len();

    // Reduced column set: (alpha, l) with l_k in [0 : n_k - 2] on active
    // dimensions and |alpha| <= s. Same deterministic order as the general
    // basis enumeration.
    struct Col {
        alpha: Vec<u8>,
        l: Vec<usize>,
        knots: Vec<f64>,
        active: Vec<usize>,
    }
    let mut cols: Vec<Col> = Vec::new();
    for code in 1u64..(1u64 << d) {
        let alpha: Vec<u8> = (0..d).map(|k| ((code >> k) & 1) as u8).collect();
        let active: Vec<usize> = (0..d).filter(|&k| alpha[k] == 1).collect();
        if active.len() > s {
            continue;
        }
        let limits: Vec<usize> = active.iter().map(|&k| sizes[k] - 1).collect();
        let mut l = vec![0usize; active.len()];
        loop {
            let knots: Vec<f64> = active
                .iter()
                .zip(&l)
                .map(|(&k, &lk)| lk as f64 / sizes[k] as f64)
                .collect();
            cols.push(Col { alpha: alpha.clone(), l: l.clone(), knots, active: active.clone() });
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

    let p = cols.len();
    let mut m = Array2::zeros((n, p));
    let mut x_row = vec![0.0f64; d];
    let mut row = 0usize;
    for_each_index(sizes, |idx| {
        for k in 0..d {
            x_row[k] = idx[k] as f64 / sizes[k] as f64;
        }
        for (j, col) in cols.iter().enumerate() {
            m[[row, j]] = eval_term(&col.alpha, &col.knots, &x_row);
        }
        row += 1;
    });
    let mask: Vec<bool> = cols.iter().map(|c| c.l.iter().any(|&li| li != 0)).collect();

    // Warm start from the coefficients that interpolate y exactly: the
    // stacked transform gives omega_(alpha,l) = (prod n_k^alpha_k) *
    // (H^(2) y)_(l + alpha), whose penalized L1 norm is V_2(y). Projecting
    // it onto the budget keeps the start feasible.
    let h = h2(y)?;
    let mut omega = vec![0.0f64; p];
    let mut idx_abs = vec![0usize; d];
    for (j, col) in cols.iter().enumerate() {
        for k in 0..d {
            idx_abs[k] = 0;
        }
        for (pos, &k) in col.active.iter().enumerate() {
            idx_abs[k] = col.l[pos] + 1;
        }
        let weight: f64 = col
            .active
            .iter()
            .map(|&k| sizes[k] as f64)
            .product();
        omega[j] = weight * h.at(&idx_abs);
    }
    let intercept0 = y.values[0];

    let problem = LassoProblem::new(Array1::from_vec(y.values.clone()), m, mask, v)?
        .with_tol(tol)
        .with_max_iter(max_iter)
        .with_warm_start(intercept0, omega);
    let sol = solve(&problem)?;

    let terms: Vec<MarsTerm> = cols
        .iter()
        .zip(sol.gamma.iter())
        .filter(|(_, &g)| g.abs() >= COEF_DROP_TOL)
        .map(|(col, &g)| MarsTerm {
            alpha: col.alpha.clone(),
            knots: col.knots.clone(),
            coef: g,
        })
        .collect();
    let model = MarsModel {
        version: MODEL_JSON_VERSION,
        d,
        domain_tag: DomainTag::Scaled,
        intercept: sol.intercept,
        terms,
        transform: None,
        fit_meta: Some(FitMeta { v, s, converged: sol.converged, objective: sol.objective }),
    };
    let theta_hat = LatticeField::new(y.shape.clone(), sol.fitted.to_vec())?;
    Ok(LatticeFit {
        theta_hat,
        model,
        iterations: sol.iterations,
        converged: sol.converged,
        objective: sol.objective,
    })
}

/// Reads a lattice tensor from CSV with header `i_1,...,i_d,value`. The
/// shape is inferred from the indices and validated for completeness.
pub fn read_tensor_csv(path: &Path) -> Result<LatticeField> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "empty file".into() })??;
    let cols: Vec<&str> = header.split(',').map(|c| c.trim()).collect();
    if cols.len() < 2 || cols.last() != Some(&"value") {
        return Err(Error::Parse {
            line: 1,
            message: "expected header i_1,...,i_d,value".into(),
        });
    }
    let d = cols.len() - 1;
    let mut entries: Vec<(Vec<usize>, f64)> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        if fields.len() != d + 1 {
            return Err(Error::Parse {
                line: lineno + 2,
                message: format!("expected {} fields, found {}", d + 1, fields.len()),
            });
        }
        let mut idx = Vec::with_capacity(d);
        for f in &fields[..d] {
            idx.push(f.parse::<usize>().map_err(|e| Error::Parse {
                line: lineno + 2,
                message: format!("bad index '{f}': {e}"),
            })?);
        }
        let value = fields[d].parse::<f64>().map_err(|e| Error::Parse {
            line: lineno + 2,
            message: format!("bad value '{}': {e}", fields[d]),
        })?;
        entries.push((idx, value));
    }
    if entries.is_empty() {
        return Err(Error::Parse { line: 2, message: "no data rows".into() });
    }
    let sizes: Vec<usize> = (0..d)
        .map(|k| entries.iter().map(|(idx, _)| idx[k]).max().unwrap() + 1)
        .collect();
    let volume: usize = sizes.iter().product();
    if entries.len() != volume {
        return Err(Error::Structure(format!(
            "tensor has {} rows but inferred shape {:?} needs {}",
            entries.len(),
            sizes,
            volume
        )));
    }
    let shape = LatticeShape::new(sizes.clone())?;
    let mut values = vec![f64::NAN; volume];
    for (idx, value) in entries {
        let off = linear_offset(&idx, &sizes);
        if !values[off].is_nan() {
            return Err(Error::Structure(format!("duplicate index {idx:?}")));
        }
        values[off] = value;
    }
    LatticeField::new(shape, values)
}

/// Writes a lattice tensor as CSV in row-major order with full float
/// precision.
pub fn write_tensor_csv(path: &Path, field: &LatticeField) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let d = field.shape.dims();
    let header: Vec<String> = (1..=d).map(|k| format!("i_{k}")).collect();
    writeln!(out, "{},value", header.join(","))?;
    let mut row = 0usize;
    let mut err = None;
    for_each_index(&field.shape.sizes, |idx| {
        if err.is_some() {
            return;
        }
        let idx_s: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
        if let Err(e) = writeln!(out, "{},{:.16e}", idx_s.join(","), field.values[row]) {
            err = Some(e);
        }
        row += 1;
    });
    match err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use approx::assert_abs_diff_eq;

    fn field(sizes: &[usize], values: Vec<f64>) -> LatticeField {
        LatticeField::new(LatticeShape::new(sizes.to_vec()).unwrap(), values).unwrap()
    }

    /// Independent route for D^(alpha): the closed form
    /// `sum_{0 <= delta <= alpha} (-1)^|delta| prod C(alpha_k, delta_k) theta_{i-delta}`
    /// over the index set built directly from its definition.
    fn diff_oracle(theta: &LatticeField, alpha: &[usize]) -> DiffResult {
        let sizes = theta.shape().sizes();
        let d = sizes.len();
        let m = *alpha.iter().max().unwrap();
        let index_set: Vec<(usize, usize)> = (0..d)
            .map(|k| {
                if alpha[k] == m {
                    (m, sizes[k] - 1)
                } else {
                    (alpha[k], alpha[k])
                }
            })
            .collect();
        let out_sizes: Vec<usize> = index_set.iter().map(|&(s, e)| e - s + 1).collect();
        let binom = |n: usize, k: usize| -> f64 {
            match (n, k) {
                (_, 0) => 1.0,
                (2, 1) => 2.0,
                (n, k) if n == k => 1.0,
                _ => 0.0,
            }
        };
        let mut values = Vec::new();
        let mut deltas: Vec<Vec<usize>> = vec![vec![]];
        for &ak in alpha {
            let mut next = Vec::new();
            for base in &deltas {
                for dk in 0..=ak {
                    let mut e = base.clone();
                    e.push(dk);
                    next.push(e);
                }
            }
            deltas = next;
        }
        for_each_index(&out_sizes, |idx| {
            let abs: Vec<usize> = idx
                .iter()
                .zip(&index_set)
                .map(|(&i, &(s, _))| i + s)
                .collect();
            let mut acc = 0.0;
            for delta in &deltas {
                let sign = if delta.iter().sum::<usize>() % 2 == 0 { 1.0 } else { -1.0 };
                let coef: f64 = alpha
                    .iter()
                    .zip(delta)
                    .map(|(&a, &dk)| binom(a, dk))
                    .product();
                let at: Vec<usize> = abs.iter().zip(delta).map(|(&i, &dk)| i - dk).collect();
                acc += sign * coef * theta.at(&at);
            }
            values.push(acc);
        });
        DiffResult { alpha: alpha.to_vec(), index_set, values }
    }

    #[test]
    fn diff_second_difference_1d() {
        let theta = field(&[3], vec![1.0, 2.0, 4.0]);
        let d2 = diff(&theta, &[2]).unwrap();
        assert_eq!(d2.index_set, vec![(2, 2)]);
        assert_eq!(d2.values, vec![1.0]);
    }

    #[test]
    fn diff_constant_field_vanishes() {
        let theta = field(&[3, 4], vec![7.5; 12]);
        for alpha in [[1, 0], [0, 1], [1, 1], [2, 1], [2, 2], [0, 2]] {
            let r = diff(&theta, &alpha).unwrap();
            assert!(r.values.iter().all(|&v| v == 0.0), "alpha {alpha:?}");
        }
    }

    #[test]
    fn diff_bilinear_field_vanishes_under_21() {
        let mut values = Vec::new();
        for i1 in 0..5 {
            for i2 in 0..4 {
                values.push((i1 * i2) as f64);
            }
        }
        let theta = field(&[5, 4], values);
        let r = diff(&theta, &[2, 1]).unwrap();
        assert_eq!(r.index_set, vec![(2, 4), (1, 1)]);
        assert!(r.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diff_matches_worked_example_formula() {
        // (D^(2,1) theta)_{i1,1} = theta_{i1,1} - theta_{i1,0} - 2 theta_{i1-1,1}
        //                        + 2 theta_{i1-1,0} + theta_{i1-2,1} - theta_{i1-2,0}
        let mut rng = CounterRng::new(2);
        let sizes = [5usize, 3usize];
        let values: Vec<f64> = (0..15).map(|_| rng.normal()).collect();
        let theta = field(&sizes, values);
        let r = diff(&theta, &[2, 1]).unwrap();
        assert_eq!(r.index_set, vec![(2, 4), (1, 1)]);
        for i1 in 2..5 {
            let want = theta.at(&[i1, 1]) - theta.at(&[i1, 0]) - 2.0 * theta.at(&[i1 - 1, 1])
                + 2.0 * theta.at(&[i1 - 1, 0])
                + theta.at(&[i1 - 2, 1])
                - theta.at(&[i1 - 2, 0]);
            assert_abs_diff_eq!(r.at(&[i1, 1]), want, epsilon = 1e-12);
        }
    }

    #[test]
    fn diff_agrees_with_direct_formula_on_random_fields() {
        let mut rng = CounterRng::new(17);
        for sizes in [vec![4usize], vec![3, 5], vec![3, 4, 3]] {
            let volume: usize = sizes.iter().product();
            let values: Vec<f64> = (0..volume).map(|_| rng.normal()).collect();
            let theta = field(&sizes, values);
            let d = sizes.len();
            let mut alpha = vec![0usize; d];
            loop {
                let m = *alpha.iter().max().unwrap();
                let feasible = sizes
                    .iter()
                    .zip(&alpha)
                    .all(|(&nk, &ak)| if ak == m { nk > m } else { nk > ak });
                if feasible {
                    let got = diff(&theta, &alpha).unwrap();
                    let want = diff_oracle(&theta, &alpha);
                    assert_eq!(got.index_set, want.index_set, "alpha {alpha:?}");
                    for (g, w) in got.values.iter().zip(&want.values) {
                        assert_abs_diff_eq!(g, w, epsilon = 1e-10);
                    }
                }
                let mut k = d;
                loop {
                    if k == 0 {
                        break;
                    }
                    k -= 1;
                    alpha[k] += 1;
                    if alpha[k] <= 2 {
                        break;
                    }
                    alpha[k] = 0;
                }
                if alpha.iter().all(|&a| a == 0) {
                    break;
                }
            }
        }
    }

    #[test]
    fn diff_rejects_high_order_and_small_lattices() {
        let theta = field(&[3], vec![1.0, 2.0, 3.0]);
        assert!(matches!(diff(&theta, &[3]), Err(Error::UnsupportedOrder(_))));
        let tiny = field(&[2], vec![1.0, 2.0]);
        assert!(matches!(diff(&tiny, &[2]), Err(Error::Structure(_))));
    }

    #[test]
    fn diff_respects_offsets() {
        let shape = LatticeShape::with_offsets(vec![4], vec![3]).unwrap();
        let theta = LatticeField::new(shape, vec![1.0, 3.0, 6.0, 10.0]).unwrap();
        let r = diff(&theta, &[1]).unwrap();
        assert_eq!(r.index_set, vec![(4, 6)]);
        assert_eq!(r.values, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn h2_1d_expansion() {
        let theta = field(&[4], vec![2.0, 5.0, 3.0, 8.0]);
        let h = h2(&theta).unwrap();
        // (theta0, theta1-theta0, theta2-2theta1+theta0, theta3-2theta2+theta1)
        assert_eq!(h.values(), &[2.0, 3.0, -5.0, 7.0]);
    }

    #[test]
    fn h2_constant_has_single_nonzero() {
        let theta = field(&[3, 3], vec![4.0; 9]);
        let h = h2(&theta).unwrap();
        assert_eq!(h.at(&[0, 0]), 4.0);
        assert_eq!(h.values().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn h2_affine_multilinear_supported_on_corner() {
        // theta = b0 + b1 i1 + b2 i2 + b3 i1 i2 on a 4x4 grid: every entry of
        // H^(2) outside {0,1}^2 vanishes.
        let (b0, b1, b2, b3) = (2.0, -1.0, 0.5, 3.0);
        let mut values = Vec::new();
        for i1 in 0..4 {
            for i2 in 0..4 {
                let (x, y) = (i1 as f64, i2 as f64);
                values.push(b0 + b1 * x + b2 * y + b3 * x * y);
            }
        }
        let theta = field(&[4, 4], values);
        let h = h2(&theta).unwrap();
        for i1 in 0..4 {
            for i2 in 0..4 {
                if i1 >= 2 || i2 >= 2 {
                    assert_abs_diff_eq!(h.at(&[i1, i2]), 0.0, epsilon = 1e-12);
                }
            }
        }
        assert_abs_diff_eq!(h.at(&[0, 0]), b0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.at(&[1, 0]), b1, epsilon = 1e-12);
        assert_abs_diff_eq!(h.at(&[0, 1]), b2, epsilon = 1e-12);
        assert_abs_diff_eq!(h.at(&[1, 1]), b3, epsilon = 1e-12);
    }

    #[test]
    fn reconstruct_unit_impulses() {
        // impulse at 0 integrates to the constant field 1
        let mut h = vec![0.0; 5];
        h[0] = 1.0;
        let theta = reconstruct(&field(&[5], h)).unwrap();
        assert_eq!(theta.values(), &[1.0; 5]);

        // impulse at index 1 integrates to theta_i = i
        let mut h = vec![0.0; 5];
        h[1] = 1.0;
        let theta = reconstruct(&field(&[5], h)).unwrap();
        assert_eq!(theta.values(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn h2_reconstruct_inverse_on_integers() {
        let mut rng = CounterRng::new(23);
        for sizes in [vec![4usize], vec![5, 3], vec![3, 4, 2], vec![2, 2, 2]] {
            let volume: usize = sizes.iter().product();
            let values: Vec<f64> = (0..volume)
                .map(|_| (rng.below(21) as f64) - 10.0)
                .collect();
            let theta = field(&sizes, values.clone());
            let round = reconstruct(&h2(&theta).unwrap()).unwrap();
            assert_eq!(round.values(), values.as_slice(), "sizes {sizes:?}");
        }
    }

    #[test]
    fn v2_reference_values() {
        assert_eq!(v2(&field(&[4], vec![0.0, 1.0, 2.0, 3.0])).unwrap(), 0.0);
        assert_eq!(v2(&field(&[4], vec![0.0, 0.0, 1.0, 3.0])).unwrap(), 8.0);
        // multilinear on a 4x4 grid
        let mut values = Vec::new();
        for i1 in 0..4 {
            for i2 in 0..4 {
                values.push(1.0 + 2.0 * i1 as f64 - 3.0 * i2 as f64 + 0.5 * (i1 * i2) as f64);
            }
        }
        assert_abs_diff_eq!(v2(&field(&[4, 4], values)).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn v2_invariant_under_multilinear_shifts() {
        let mut rng = CounterRng::new(41);
        let sizes = [5usize, 4usize];
        let base: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
        let theta = field(&sizes, base.clone());
        let v_base = v2(&theta).unwrap();
        let shifted: Vec<f64> = {
            let mut out = base.clone();
            let mut pos = 0;
            for i1 in 0..5 {
                for i2 in 0..4 {
                    out[pos] += 1.5 - 2.0 * i1 as f64 + 0.25 * i2 as f64 + 0.75 * (i1 * i2) as f64;
                    pos += 1;
                }
            }
            out
        };
        let v_shift = v2(&field(&sizes, shifted)).unwrap();
        assert_abs_diff_eq!(v_base, v_shift, epsilon = 1e-9 * (1.0 + v_base));
    }

    #[test]
    fn v2_routes_agree() {
        let mut rng = CounterRng::new(67);
        for sizes in [vec![5usize], vec![4, 4], vec![3, 4, 3], vec![2, 5, 3]] {
            let volume: usize = sizes.iter().product();
            let values: Vec<f64> = (0..volume).map(|_| rng.normal()).collect();
            let theta = field(&sizes, values);
            let a = v2(&theta).unwrap();
            let b = v2_via_h2(&theta).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-10 * (1.0 + a));
        }
    }

    #[test]
    fn index_sets_partition() {
        // {alpha} together with {I_0^(beta) : beta in J_alpha} tiles
        // I_0^(alpha) for every alpha in {0,1}^d \ {0}.
        for sizes in [vec![4usize, 5usize], vec![3, 3, 4]] {
            let d = sizes.len();
            for code in 1u64..(1u64 << d) {
                let alpha: Vec<usize> = (0..d).map(|k| ((code >> k) & 1) as usize).collect();
                // enumerate I_0^(alpha)
                let mut members: std::collections::HashSet<Vec<usize>> = Default::default();
                let iter_sizes: Vec<usize> = alpha
                    .iter()
                    .zip(&sizes)
                    .map(|(&ak, &nk)| if ak == 1 { nk - 1 } else { 1 })
                    .collect();
                for_each_index(&iter_sizes, |idx| {
                    let abs: Vec<usize> = (0..d)
                        .map(|k| if alpha[k] == 1 { idx[k] + 1 } else { 0 })
                        .collect();
                    members.insert(abs);
                });
                // tile with {alpha} and the blocks of J_alpha
                let mut covered: std::collections::HashSet<Vec<usize>> = Default::default();
                covered.insert(alpha.clone());
                let mut beta = alpha.clone();
                // J_alpha: beta_k = 0 where alpha_k = 0, beta_k in {1,2} where
                // alpha_k = 1, max beta = 2
                let active: Vec<usize> = (0..d).filter(|&k| alpha[k] == 1).collect();
                for mask in 0u64..(1u64 << active.len()) {
                    for (pos, &k) in active.iter().enumerate() {
                        beta[k] = if (mask >> pos) & 1 == 1 { 2 } else { 1 };
                    }
                    if beta.iter().max() != Some(&2) {
                        continue;
                    }
                    let m = 2;
                    let ok = beta
                        .iter()
                        .zip(&sizes)
                        .all(|(&bk, &nk)| if bk == m { nk > m } else { true });
                    if !ok {
                        continue;
                    }
                    let block_sizes: Vec<usize> = beta
                        .iter()
                        .zip(&sizes)
                        .map(|(&bk, &nk)| if bk == m { nk - m } else { 1 })
                        .collect();
                    for_each_index(&block_sizes, |idx| {
                        let abs: Vec<usize> = (0..d)
                            .map(|k| if beta[k] == m { idx[k] + m } else { beta[k] })
                            .collect();
                        assert!(covered.insert(abs), "overlap for alpha {alpha:?}");
                    });
                }
                assert_eq!(covered, members, "tiling mismatch for alpha {alpha:?}");
            }
        }
    }

    #[test]
    fn fit_lattice_v0_is_affine_regression() {
        let mut rng = CounterRng::new(3);
        let n = 8usize;
        let values: Vec<f64> = (0..n).map(|i| 0.7 * i as f64 + rng.normal()).collect();
        let y = field(&[n], values.clone());
        let fit = fit_lattice(&y, 0.0, 1).unwrap();
        // closed-form least-squares line against x = i/n
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let xm = xs.iter().sum::<f64>() / n as f64;
        let ym = values.iter().sum::<f64>() / n as f64;
        let slope = xs
            .iter()
            .zip(&values)
            .map(|(x, v)| (x - xm) * (v - ym))
            .sum::<f64>()
            / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
        let icept = ym - slope * xm;
        for (i, &x) in xs.iter().enumerate() {
            assert_abs_diff_eq!(fit.theta_hat.values()[i], icept + slope * x, epsilon = 1e-6);
        }
    }

    #[test]
    fn fit_lattice_interpolates_at_full_budget() {
        let mut rng = CounterRng::new(29);
        let values: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
        let y = field(&[4, 5], values.clone());
        let budget = v2(&y).unwrap();
        let fit = fit_lattice(&y, budget, 2).unwrap();
        for (got, want) in fit.theta_hat.values().iter().zip(&values) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-8);
        }
        assert!(fit.objective < 1e-16);
    }

    #[test]
    fn fit_lattice_model_matches_theta_on_lattice() {
        let mut rng = CounterRng::new(53);
        let sizes = [5usize, 4usize];
        let values: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
        let y = field(&sizes, values);
        let budget = 0.4 * v2(&y).unwrap();
        let fit = fit_lattice(&y, budget, 2).unwrap();
        let mut pos = 0;
        for i1 in 0..sizes[0] {
            for i2 in 0..sizes[1] {
                let x = [i1 as f64 / sizes[0] as f64, i2 as f64 / sizes[1] as f64];
                assert_abs_diff_eq!(
                    fit.model.evaluate(&x),
                    fit.theta_hat.values()[pos],
                    epsilon = 1e-8
                );
                pos += 1;
            }
        }
        let v_hat = v2(&fit.theta_hat).unwrap();
        assert!(v_hat <= budget * (1.0 + 1e-8) + 1e-10, "V2(theta_hat) = {v_hat} > {budget}");
    }

    #[test]
    fn tensor_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut rng = CounterRng::new(71);
        let values: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let theta = field(&[3, 4], values);
        write_tensor_csv(&path, &theta).unwrap();
        let back = read_tensor_csv(&path).unwrap();
        assert_eq!(theta, back);
    }

    #[test]
    fn tensor_csv_rejects_size_one_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "i_1,i_2,value\n0,0,1.0\n1,0,2.0\n").unwrap();
        let err = read_tensor_csv(&path).unwrap_err();
        assert!(err.to_string().contains("n_k >= 2"), "got: {err}");
    }
}
