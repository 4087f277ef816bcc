//! k-fold cross-validation over a budget grid.
//!
//! Fold membership is a seeded uniform shuffle split; every fold's fit
//! re-runs the whole estimator pipeline on that fold's training points, so
//! knot placement never sees held-out data. Held-out points outside the
//! training hull evaluate through the hinges' natural linear extrapolation.

use crate::error::{Error, Result};
use crate::estimator::{fit, loss, predict, FitConfig};
use crate::rng::CounterRng;
use crate::solver::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use ndarray::{ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct CvConfig {
    /// Number of folds (default 10).
    pub folds: usize,
    /// Explicit budget grid; `None` derives one with [`default_grid`].
    pub grid: Option<Vec<f64>>,
    /// Size of the derived geometric grid when `grid` is `None`.
    pub grid_count: usize,
    /// Seed for fold assignment (and subsampling when enabled).
    pub seed: u64,
    /// Interaction cap passed through to each fit.
    pub s: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
    pub scale_inputs: bool,
    /// Optional fraction in (0, 1]: cross-validate on a seeded random
    /// subsample of the data instead of all of it.
    pub subsample: Option<f64>,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            grid: None,
            grid_count: 8,
            seed: 0,
            s: None,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            scale_inputs: false,
            subsample: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub grid: Vec<f64>,
    pub mean_mse: Vec<f64>,
    pub se_mse: Vec<f64>,
    pub best_v: f64,
    pub seed: u64,
    pub folds: usize,
}

/// Budget grid `{0} ∪ {geometric from V_hat/100 to V_hat}` where `V_hat` is
/// the penalized absolute-coefficient sum of the minimum-norm least-squares
/// solution on the full design matrix. A degenerate design (`V_hat = 0`,
/// e.g. the response already lies in the span of the unpenalized columns)
/// yields `[0.0]`.
pub fn default_grid(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    s: usize,
    count: usize,
) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::Argument(format!("grid count {count} must be at least 2")));
    }
    let knots = crate::basis::KnotGrid::from_design(x)?;
    let basis = crate::basis::enumerate_basis(&knots, s)?;
    let (m, mask) = crate::basis::design_matrix(x, &basis, &knots);
    let n = x.nrows();
    let p = m.ncols();

    // minimum-norm least squares on [1 | M] via SVD
    let mut b = nalgebra::DMatrix::zeros(n, p + 1);
    for i in 0..n {
        b[(i, 0)] = 1.0;
        for j in 0..p {
            b[(i, j + 1)] = m[[i, j]];
        }
    }
    let rhs = nalgebra::DVector::from_iterator(n, y.iter().copied());
    let svd = b.svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &v| a.max(v));
    let w = svd
        .solve(&rhs, smax * 1e-12)
        .map_err(|e| Error::Numeric(format!("svd solve failed: {e}")))?;
    let v_hat: f64 = mask
        .iter()
        .enumerate()
        .filter(|(_, &p)| p)
        .map(|(j, _)| w[j + 1].abs())
        .sum();

    let y_scale = 1.0 + y.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    if v_hat <= 1e-10 * y_scale {
        return Ok(vec![0.0]);
    }
    let mut grid = vec![0.0];
    let lo = v_hat / 100.0;
    let ratio = 100.0f64.powf(1.0 / (count - 1) as f64);
    for i in 0..count {
        grid.push(lo * ratio.powi(i as i32));
    }
    Ok(grid)
}

/// Seeded shuffle split into `k` folds with sizes differing by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    CounterRng::new(seed).shuffle(&mut order);
    let mut assignment = vec![0usize; n];
    for (pos, &idx) in order.iter().enumerate() {
        assignment[idx] = pos % k;
    }
    assignment
}

/// Runs cross-validation with an explicit fold assignment (values in
/// `[0, folds)`) and an explicit grid. The building block behind
/// [`cross_validate`].
pub fn cross_validate_with_folds(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    assignment: &[usize],
    grid: &[f64],
    config: &CvConfig,
) -> Result<CvResult> {
    let n = x.nrows();
    if assignment.len() != n {
        return Err(Error::Argument("fold assignment length must match rows".into()));
    }
    let k = config.folds;
    if k < 2 || k > n {
        return Err(Error::Argument(format!("folds = {k} must satisfy 2 <= k <= n = {n}")));
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) || grid[0] < 0.0 {
        return Err(Error::Argument(
            "grid must be nonempty, nonnegative, strictly increasing".into(),
        ));
    }
    for fold in 0..k {
        let size = assignment.iter().filter(|&&f| f == fold).count();
        if size < 2 {
            return Err(Error::Argument(format!(
                "fold {fold} has {size} points; need at least 2"
            )));
        }
    }

    let mut jobs: Vec<(usize, usize)> = Vec::with_capacity(grid.len() * k);
    for vi in 0..grid.len() {
        for fold in 0..k {
            jobs.push((vi, fold));
        }
    }
    let cell_mse: Vec<f64> = jobs
        .par_iter()
        .map(|&(vi, fold)| -> Result<f64> {
            let train_idx: Vec<usize> =
                (0..n).filter(|&i| assignment[i] != fold).collect();
            let test_idx: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
            let x_train = x.select(Axis(0), &train_idx);
            let y_train = y.select(Axis(0), &train_idx);
            let x_test = x.select(Axis(0), &test_idx);
            let y_test = y.select(Axis(0), &test_idx);
            let mut fc = FitConfig::new(grid[vi])
                .with_scaling(config.scale_inputs)
                .with_tol(config.tol)
                .with_max_iter(config.max_iter);
            if let Some(s) = config.s {
                fc = fc.with_s(s);
            }
            let model = fit(x_train.view(), y_train.view(), &fc)?;
            let pred = predict(&model, x_test.view())?;
            loss(pred.view(), y_test.view())
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut mean_mse = Vec::with_capacity(grid.len());
    let mut se_mse = Vec::with_capacity(grid.len());
    for vi in 0..grid.len() {
        let cells = &cell_mse[vi * k..(vi + 1) * k];
        let mean = cells.iter().sum::<f64>() / k as f64;
        let var = cells.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (k - 1) as f64;
        mean_mse.push(mean);
        se_mse.push((var / k as f64).sqrt());
    }
    let mut best = 0usize;
    for vi in 1..grid.len() {
        if mean_mse[vi] < mean_mse[best] {
            best = vi;
        }
    }
    Ok(CvResult {
        grid: grid.to_vec(),
        mean_mse,
        se_mse,
        best_v: grid[best],
        seed: config.seed,
        folds: k,
    })
}

/// Seeded k-fold cross-validation over the configured (or derived) budget
/// grid. Identical configuration and seed reproduce the result bit for bit.
pub fn cross_validate(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    config: &CvConfig,
) -> Result<CvResult> {
    let (x_used, y_used) = match config.subsample {
        Some(frac) => {
            if !(frac > 0.0 && frac <= 1.0) {
                return Err(Error::Argument(format!(
                    "subsample fraction {frac} must lie in (0, 1]"
                )));
            }
            let n = x.nrows();
            let keep = ((frac * n as f64).ceil() as usize).max(2).min(n);
            let mut order: Vec<usize> = (0..n).collect();
            CounterRng::new(config.seed.wrapping_add(1)).shuffle(&mut order);
            let mut idx = order[..keep].to_vec();
            idx.sort_unstable();
            (x.select(Axis(0), &idx), y.select(Axis(0), &idx))
        }
        None => (x.to_owned(), y.to_owned()),
    };
    let grid = match &config.grid {
        Some(g) => g.clone(),
        None => {
            let s = config.s.unwrap_or(x_used.ncols());
            let (gx, gy) = if config.scale_inputs {
                let t = crate::estimator::ScalingTransform::fit(x_used.view())?;
                (t.apply(x_used.view()), y_used.clone())
            } else {
                (x_used.clone(), y_used.clone())
            };
            default_grid(gx.view(), gy.view(), s, config.grid_count)?
        }
    };
    let assignment = fold_assignment(x_used.nrows(), config.folds, config.seed);
    cross_validate_with_folds(x_used.view(), y_used.view(), &assignment, &grid, config)
}

/// Writes the report CSV: `V,mean_mse,se_mse,selected`.
pub fn write_cv_report(path: &Path, result: &CvResult) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "V,mean_mse,se_mse,selected")?;
    for i in 0..result.grid.len() {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{}",
            result.grid[i],
            result.mean_mse[i],
            result.se_mse[i],
            u8::from(result.grid[i] == result.best_v)
        )?;
    }
    Ok(())
}
