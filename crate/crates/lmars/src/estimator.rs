//! General-design fitting pipeline: scaling, basis construction, constrained
//! solve, model assembly, prediction, and loss.

use crate::basis::{
    design_matrix, enumerate_basis, DomainTag, FitMeta, KnotGrid, MarsModel, MarsTerm,
    COEF_DROP_TOL, MODEL_JSON_VERSION,
};
use crate::error::{Error, Result};
use crate::solver::{solve, LassoProblem, DEFAULT_MAX_ITER, DEFAULT_TOL};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

/// Per-dimension min-max map `x -> (x - min) / range` and its inverse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingTransform {
    pub mins: Vec<f64>,
    pub ranges: Vec<f64>,
}

impl ScalingTransform {
    /// Learns the map sending each observed column onto `[0, 1]` with the
    /// minimum at 0 and the maximum at 1.
    pub fn fit(x: ArrayView2<'_, f64>) -> Result<Self> {
        let d = x.ncols();
        let mut mins = Vec::with_capacity(d);
        let mut ranges = Vec::with_capacity(d);
        for k in 0..d {
            let col = x.column(k);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in col.iter() {
                if !v.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite value in column {k}"
                    )));
                }
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if !(hi > lo) {
                return Err(Error::DegenerateRange { column: k });
            }
            mins.push(lo);
            ranges.push(hi - lo);
        }
        Ok(ScalingTransform { mins, ranges })
    }

    pub fn identity(d: usize) -> Self {
        ScalingTransform { mins: vec![0.0; d], ranges: vec![1.0; d] }
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for k in 0..self.mins.len() {
            let (m, r) = (self.mins[k], self.ranges[k]);
            out.column_mut(k).mapv_inplace(|v| (v - m) / r);
        }
        out
    }

    pub fn invert(&self, x_scaled: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x_scaled.to_owned();
        for k in 0..self.mins.len() {
            let (m, r) = (self.mins[k], self.ranges[k]);
            out.column_mut(k).mapv_inplace(|v| m + v * r);
        }
        out
    }
}

/// Settings for a single fit.
#[derive(Clone, Debug)]
pub struct FitConfig {
    /// Variation budget.
    pub v: f64,
    /// Interaction cap; `None` means `d`.
    pub s: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
    /// Min-max scale the inputs before fitting. Off by default for library
    /// calls (simulations already live on `[0,1]^d`); the CLI turns it on.
    pub scale_inputs: bool,
}

impl FitConfig {
    pub fn new(v: f64) -> Self {
        FitConfig {
            v,
            s: None,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            scale_inputs: false,
        }
    }

    pub fn with_s(mut self, s: usize) -> Self {
        self.s = Some(s);
        self
    }

    pub fn with_scaling(mut self, on: bool) -> Self {
        self.scale_inputs = on;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }
}

/// Fits the budget-constrained model: optional scaling, knot construction
/// from the (scaled) design, basis enumeration up to the interaction cap,
/// design matrix, constrained solve, and assembly of the fitted model with
/// numeric zeros dropped.
pub fn fit(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, config: &FitConfig) -> Result<MarsModel> {
    let n = x.nrows();
    let d = x.ncols();
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 rows, got {n}")));
    }
    if y.len() != n {
        return Err(Error::Argument(format!(
            "response length {} does not match {n} rows",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("input data contains non-finite values".into()));
    }
    let s = config.s.unwrap_or(d);

    let (x_scaled, transform) = if config.scale_inputs {
        let t = ScalingTransform::fit(x)?;
        (t.apply(x), Some(t))
    } else {
        (x.to_owned(), None)
    };

    let knots = KnotGrid::from_design(x_scaled.view())?;
    let basis = enumerate_basis(&knots, s)?;
    let (m, mask) = design_matrix(x_scaled.view(), &basis, &knots);
    let problem = LassoProblem::new(y.to_owned(), m, mask, config.v)?
        .with_tol(config.tol)
        .with_max_iter(config.max_iter);
    let sol = solve(&problem)?;

    let terms: Vec<MarsTerm> = basis
        .iter()
        .zip(sol.gamma.iter())
        .filter(|(_, &g)| g.abs() >= COEF_DROP_TOL)
        .map(|(b, &g)| {
            let active: Vec<usize> = (0..d).filter(|&k| b.alpha[k] == 1).collect();
            let knot_vals: Vec<f64> = active
                .iter()
                .zip(b.l.iter())
                .map(|(&k, &li)| knots.knots(k)[li])
                .collect();
            MarsTerm { alpha: b.alpha.clone(), knots: knot_vals, coef: g }
        })
        .collect();

    Ok(MarsModel {
        version: MODEL_JSON_VERSION,
        d,
        domain_tag: DomainTag::Scaled,
        intercept: sol.intercept,
        terms,
        transform,
        fit_meta: Some(FitMeta {
            v: config.v,
            s,
            converged: sol.converged,
            objective: sol.objective,
        }),
    })
}

/// Evaluates the model rowwise. Scaled-domain models with a stored transform
/// accept raw inputs and scale them first; original-domain models evaluate
/// their stored representation directly.
pub fn predict(model: &MarsModel, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if x.ncols() != model.d {
        return Err(Error::Argument(format!(
            "model has d = {}, input has {} columns",
            model.d,
            x.ncols()
        )));
    }
    let data = match (&model.domain_tag, &model.transform) {
        (DomainTag::Scaled, Some(t)) => t.apply(x),
        _ => x.to_owned(),
    };
    let mut out = Array1::zeros(x.nrows());
    let mut row = vec![0.0f64; model.d];
    for i in 0..x.nrows() {
        for k in 0..model.d {
            row[k] = data[[i, k]];
        }
        out[i] = model.evaluate(&row);
    }
    Ok(out)
}

/// Mean squared difference.
pub fn loss(pred: ArrayView1<'_, f64>, truth: ArrayView1<'_, f64>) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Argument(format!(
            "length mismatch: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Argument("empty vectors".into()));
    }
    Ok(pred
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Rewrites a scaled-domain model in the original coordinates: each term
/// `b * prod (x_k - t_k)_+` becomes
/// `(b / prod r_k) * prod (X_k - (m_k + t_k r_k))_+`. Predictions are
/// unchanged; the result is a rendering, not the stored form.
pub fn to_original_domain(model: &MarsModel) -> Result<MarsModel> {
    if model.domain_tag != DomainTag::Scaled {
        return Err(Error::Argument("model is already in the original domain".into()));
    }
    let transform = model
        .transform
        .as_ref()
        .ok_or_else(|| Error::Argument("model has no transform to invert".into()))?;
    let terms = model
        .terms
        .iter()
        .map(|term| {
            let active: Vec<usize> = (0..model.d).filter(|&k| term.alpha[k] == 1).collect();
            let mut coef = term.coef;
            let mut knots = Vec::with_capacity(term.knots.len());
            for (&k, &t) in active.iter().zip(term.knots.iter()) {
                coef /= transform.ranges[k];
                knots.push(transform.mins[k] + t * transform.ranges[k]);
            }
            MarsTerm { alpha: term.alpha.clone(), knots, coef }
        })
        .collect();
    Ok(MarsModel {
        version: model.version,
        d: model.d,
        domain_tag: DomainTag::Original,
        intercept: model.intercept,
        terms,
        transform: Some(transform.clone()),
        fit_meta: model.fit_meta.clone(),
    })
}
