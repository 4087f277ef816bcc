//! Variation of smooth functions on `[0,1]^d`.
//!
//! For a function with continuous mixed partials up to order two per
//! variable, the variation equals the sum over `beta in {0,1,2}^d` with
//! `max beta = 2` of the L1 norm of `f^(beta)` over the face where
//! coordinates with `beta_l = 2` run over `[0,1]` and the rest are pinned at
//! 0. This module evaluates that sum numerically to set oracle budgets for
//! simulations.

use crate::error::{Error, Result};
use std::sync::Arc;

type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type PartialEvaluator = Arc<dyn Fn(&[usize], &[f64]) -> f64 + Send + Sync>;

/// A callback-backed function on `[0,1]^d`, optionally with an analytic
/// mixed-partial evaluator `(beta, x) -> d^beta f(x)`.
#[derive(Clone)]
pub struct SmoothFunction {
    dims: usize,
    f: Evaluator,
    partial: Option<PartialEvaluator>,
}

impl SmoothFunction {
    pub fn new(dims: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        SmoothFunction { dims, f: Arc::new(f), partial: None }
    }

    pub fn with_partials(
        mut self,
        partial: impl Fn(&[usize], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.partial = Some(Arc::new(partial));
        self
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

impl std::fmt::Debug for SmoothFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothFunction")
            .field("dims", &self.dims)
            .field("analytic_partials", &self.partial.is_some())
            .finish()
    }
}

/// Fourth-order central stencil for the first derivative.
const D1_OFFSETS: [f64; 4] = [-2.0, -1.0, 1.0, 2.0];
const D1_WEIGHTS: [f64; 4] = [1.0 / 12.0, -8.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0];
/// Fourth-order central stencil for the second derivative.
const D2_OFFSETS: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];
const D2_WEIGHTS: [f64; 5] = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];

/// Mixed partial of order `beta` at `x` by tensor-product central stencils
/// with per-axis step `h`. Axes pinned at 0 shift the stencil center inward
/// by `2h` so no node leaves `[0,1]`.
fn fd_partial(f: &Evaluator, beta: &[usize], x: &[f64], h: f64) -> f64 {
    struct Axis {
        dim: usize,
        center: f64,
        second: bool,
    }
    let mut axes = Vec::new();
    for (k, &b) in beta.iter().enumerate() {
        if b == 0 {
            continue;
        }
        let mut center = x[k];
        if center - 2.0 * h < 0.0 {
            center = 2.0 * h;
        } else if center + 2.0 * h > 1.0 {
            center = 1.0 - 2.0 * h;
        }
        axes.push(Axis { dim: k, center, second: b == 2 });
    }
    let mut point = x.to_vec();
    fn recurse(f: &Evaluator, axes: &[Axis], point: &mut [f64], h: f64) -> f64 {
        match axes.split_first() {
            None => f(point),
            Some((axis, rest)) => {
                let (offsets, weights): (&[f64], &[f64]) = if axis.second {
                    (&D2_OFFSETS, &D2_WEIGHTS)
                } else {
                    (&D1_OFFSETS, &D1_WEIGHTS)
                };
                let scale = if axis.second { h * h } else { h };
                let mut acc = 0.0;
                for (o, w) in offsets.iter().zip(weights) {
                    point[axis.dim] = axis.center + o * h;
                    acc += w * recurse(f, rest, point, h);
                }
                point[axis.dim] = axis.center;
                acc / scale
            }
        }
    }
    recurse(f, &axes, &mut point, h)
}

/// Step floor per total stencil order: high-order mixed stencils divide by
/// `h^q`, and below these floors round-off in f64 swamps the truncation
/// error.
fn effective_step(h: f64, total_order: usize) -> f64 {
    match total_order {
        0..=4 => h,
        5 => h.max(1e-2),
        _ => h.max(2e-2),
    }
}

/// Numerically evaluates the smooth-function variation by midpoint
/// quadrature with `grid_points_per_axis` points per free axis. Mixed
/// partials come from the analytic evaluator when present, otherwise from
/// central finite differences with step `fd_step`.
pub fn vmars_smooth(f: &SmoothFunction, grid_points_per_axis: usize, fd_step: f64) -> Result<f64> {
    let d = f.dims;
    if d == 0 || d > 3 {
        return Err(Error::Argument(format!(
            "smooth variation supports 1 <= d <= 3, got {d}"
        )));
    }
    let m = grid_points_per_axis;
    if m < 16 {
        return Err(Error::Argument(format!(
            "grid_points_per_axis = {m} must be at least 16"
        )));
    }
    if !(fd_step > 0.0) && f.partial.is_none() {
        return Err(Error::Argument("fd_step must be positive".into()));
    }

    let mut total = 0.0;
    let mut beta = vec![0usize; d];
    loop {
        if beta.iter().max() == Some(&2) {
            let free: Vec<usize> = (0..d).filter(|&k| beta[k] == 2).collect();
            let q: usize = beta.iter().sum();
            let h = effective_step(fd_step, q);
            let cell = (1.0 / m as f64).powi(free.len() as i32);
            let mut x = vec![0.0f64; d];
            let mut face_sum = 0.0;
            let grid_sizes = vec![m; free.len()];
            let mut bad = false;
            for_each_grid(&grid_sizes, |idx| {
                if bad {
                    return;
                }
                for (pos, &k) in free.iter().enumerate() {
                    x[k] = (idx[pos] as f64 + 0.5) / m as f64;
                }
                let value = match &f.partial {
                    Some(p) => p(&beta, &x),
                    None => fd_partial(&f.f, &beta, &x, h),
                };
                if !value.is_finite() {
                    bad = true;
                    return;
                }
                face_sum += value.abs();
            });
            if bad {
                return Err(Error::Numeric(
                    "function evaluator returned a non-finite value".into(),
                ));
            }
            total += cell * face_sum;
        }
        let mut k = d;
        loop {
            if k == 0 {
                return Ok(total);
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

fn for_each_grid(sizes: &[usize], mut f: impl FnMut(&[usize])) {
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
