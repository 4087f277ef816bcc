//! Command-line front end: fit / predict / cv / simulate / lattice-check.
//!
//! Exit codes: 0 success, 1 usage or parse problems, 2 numeric
//! non-convergence, 3 I/O failures.

use crate::basis::MarsModel;
use crate::error::{Error, Result};
use crate::estimator::{fit, predict, to_original_domain, FitConfig};
use crate::lattice::{fit_lattice_config, read_tensor_csv, v2, v2_via_h2};
use crate::selection::{cross_validate, write_cv_report, CvConfig};
use crate::sim::{lattice_design, read_experiment, run_experiment, write_report_csv, write_summary_json};
use crate::solver::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use clap::{Args, Parser, Subcommand};
use ndarray::{Array1, Array2};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "lmars",
    version,
    about = "Budget-constrained MARS regression: hinge-product least squares under an L1 variation budget"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a model to CSV data and write it as JSON.
    Fit(FitArgs),
    /// Evaluate a saved model on new points.
    Predict(PredictArgs),
    /// Pick the budget by k-fold cross-validation, then fit.
    Cv(CvArgs),
    /// Run a simulation experiment from a spec file.
    Simulate(SimulateArgs),
    /// Diagnostics for a lattice tensor: variation, transform sparsity, and
    /// the residual between the two fit formulations.
    LatticeCheck(LatticeCheckArgs),
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Training data CSV with a header row.
    pub data: PathBuf,
    /// Output path for the model JSON.
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    /// Variation budget.
    #[arg(long = "V")]
    pub v: f64,
    /// Interaction cap (default: number of covariates).
    #[arg(long)]
    pub s: Option<usize>,
    /// Response column name (default: last column).
    #[arg(long)]
    pub response: Option<String>,
    /// Skip min-max scaling of the covariates.
    #[arg(long)]
    pub no_scale: bool,
    /// Solver relative-convergence tolerance.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    /// Solver iteration cap.
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Also print the fitted equation rewritten in the original domain.
    #[arg(long)]
    pub original_domain: bool,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Model JSON written by `fit` or `cv`.
    pub model: PathBuf,
    /// Points CSV with a header row.
    pub data: PathBuf,
    /// Output CSV of predictions.
    #[arg(long, default_value = "predictions.csv")]
    pub out: PathBuf,
    /// Column to ignore (e.g. the response when predicting on a training
    /// file). With no flag, a single extra column is dropped from the end.
    #[arg(long)]
    pub response: Option<String>,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    /// Training data CSV with a header row.
    pub data: PathBuf,
    /// Output path for the per-budget report CSV.
    #[arg(long, default_value = "cv_report.csv")]
    pub out_report: PathBuf,
    /// Output path for the refit model at the selected budget.
    #[arg(long, default_value = "model.json")]
    pub out_model: PathBuf,
    /// Number of folds.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Comma-separated budget grid, e.g. "0,5,15" (default: derived).
    #[arg(long)]
    pub grid: Option<String>,
    /// Number of points in the derived geometric grid.
    #[arg(long, default_value_t = 8)]
    pub grid_count: usize,
    /// Fold-assignment seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Interaction cap (default: number of covariates).
    #[arg(long)]
    pub s: Option<usize>,
    /// Response column name (default: last column).
    #[arg(long)]
    pub response: Option<String>,
    /// Skip min-max scaling of the covariates.
    #[arg(long)]
    pub no_scale: bool,
    /// Cross-validate on a random fraction of the data in (0, 1].
    #[arg(long)]
    pub subsample: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Experiment spec (TOML, or JSON by extension).
    pub spec: PathBuf,
    /// Per-repetition report CSV.
    #[arg(long, default_value = "sim_report.csv")]
    pub out_report: PathBuf,
    /// Summary JSON.
    #[arg(long, default_value = "sim_summary.json")]
    pub out_summary: PathBuf,
}

#[derive(Args, Debug)]
pub struct LatticeCheckArgs {
    /// Lattice tensor CSV with header i_1,...,i_d,value.
    pub data: PathBuf,
    /// Budget for the dual-formulation residual check (default: V2(y)/2).
    #[arg(long = "V")]
    pub v: Option<f64>,
    /// Interaction cap (default: tensor dimension).
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
}

/// Parsed contents of a data CSV: column names, covariate matrix, response.
#[derive(Debug)]
pub struct DataSet {
    pub names: Vec<String>,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

/// Reads a CSV with a header row; the response column defaults to the last
/// one and may be overridden by name. All fields must parse as f64.
pub fn read_data_csv(path: &Path, response: Option<&str>) -> Result<DataSet> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "empty file".into() })?;
    let names: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    if names.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "need at least one covariate column and a response column".into(),
        });
    }
    let response_idx = match response {
        Some(name) => names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Argument(format!("response column '{name}' not found")))?,
        None => names.len() - 1,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        if fields.len() != names.len() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {} fields, found {}", names.len(), fields.len()),
            });
        }
        let mut row = Vec::with_capacity(fields.len());
        for f in fields {
            row.push(f.parse::<f64>().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("bad number '{f}': {e}"),
            })?);
        }
        rows.push(row);
    }
    let n = rows.len();
    let d = names.len() - 1;
    let mut x = Array2::zeros((n, d));
    let mut y = Array1::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        let mut col = 0;
        for (j, &val) in row.iter().enumerate() {
            if j == response_idx {
                y[i] = val;
            } else {
                x[[i, col]] = val;
                col += 1;
            }
        }
    }
    let mut feature_names = names.clone();
    feature_names.remove(response_idx);
    Ok(DataSet { names: feature_names, x, y })
}

/// Reads a covariate-only CSV for prediction. A model expecting `d` columns
/// accepts a file with `d+1` columns by dropping the named response column,
/// or the last column when no name is given.
pub fn read_points_csv(path: &Path, d: usize, response: Option<&str>) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "empty file".into() })?;
    let names: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    let drop_idx: Option<usize> = match response {
        Some(name) => Some(
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Argument(format!("response column '{name}' not found")))?,
        ),
        None if names.len() == d + 1 => Some(names.len() - 1),
        None => None,
    };
    let expected = if drop_idx.is_some() { d + 1 } else { d };
    if names.len() != expected {
        return Err(Error::Argument(format!(
            "model expects {d} covariates but file has {} columns",
            names.len()
        )));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        if fields.len() != names.len() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {} fields, found {}", names.len(), fields.len()),
            });
        }
        let mut row = Vec::with_capacity(d);
        for (j, f) in fields.iter().enumerate() {
            if Some(j) == drop_idx {
                continue;
            }
            row.push(f.parse::<f64>().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("bad number '{f}': {e}"),
            })?);
        }
        rows.push(row);
    }
    let n = rows.len();
    let mut x = Array2::zeros((n, d));
    for (i, row) in rows.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            x[[i, k]] = v;
        }
    }
    Ok(x)
}

fn render_term(term: &crate::basis::MarsTerm, names: &[String]) -> String {
    let mut parts = Vec::new();
    let mut ti = 0;
    for (k, &a) in term.alpha.iter().enumerate() {
        if a == 1 {
            let name = names.get(k).cloned().unwrap_or_else(|| format!("x{}", k + 1));
            let t = term.knots[ti];
            if t == 0.0 {
                parts.push(name);
            } else {
                parts.push(format!("({name} - {t:.6})_+"));
            }
            ti += 1;
        }
    }
    format!("{:+.6e} * {}", term.coef, parts.join(" * "))
}

fn count_basis_columns(model_d: usize, x_scaled: &Array2<f64>, s: usize) -> Result<(usize, usize)> {
    let knots = crate::basis::KnotGrid::from_design(x_scaled.view())?;
    let basis = crate::basis::enumerate_basis(&knots, s)?;
    let penalized = basis.iter().filter(|b| b.penalized()).count();
    debug_assert_eq!(model_d, knots.dims());
    Ok((basis.len(), penalized))
}

pub fn cmd_fit(args: &FitArgs) -> Result<i32> {
    if args.original_domain && args.no_scale {
        return Err(Error::Argument(
            "--original-domain requires scaling; drop --no-scale".into(),
        ));
    }
    let data = read_data_csv(&args.data, args.response.as_deref())?;
    let mut config = FitConfig::new(args.v)
        .with_scaling(!args.no_scale)
        .with_tol(args.tol)
        .with_max_iter(args.max_iter);
    if let Some(s) = args.s {
        config = config.with_s(s);
    }
    let model = fit(data.x.view(), data.y.view(), &config)?;
    model.save(&args.out)?;

    let d = data.x.ncols();
    let s = args.s.unwrap_or(d);
    let x_scaled = match &model.transform {
        Some(t) => t.apply(data.x.view()),
        None => data.x.clone(),
    };
    let (n_cols, n_pen) = count_basis_columns(d, &x_scaled, s)?;
    let meta = model.fit_meta.as_ref().expect("fit always records meta");
    println!("n = {}, d = {d}", data.x.nrows());
    println!("columns |J^s| = {n_cols} ({n_pen} penalized)");
    println!("objective = {:.16e}", meta.objective);
    println!("sum |gamma_pen| = {:.16e}", model.vmars_finite());
    println!("converged = {}", meta.converged);
    println!("terms kept = {}", model.terms.len());
    println!("model written to {}", args.out.display());

    if args.original_domain {
        let original = to_original_domain(&model)?;
        println!("original-domain equation:");
        println!("  intercept {:+.6e}", original.intercept);
        for term in &original.terms {
            println!("  {}", render_term(term, &data.names));
        }
    }
    Ok(if meta.converged { 0 } else { 2 })
}

pub fn cmd_predict(args: &PredictArgs) -> Result<i32> {
    let model = MarsModel::load(&args.model)?;
    let x = read_points_csv(&args.data, model.d, args.response.as_deref())?;
    let pred = predict(&model, x.view())?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    writeln!(out, "prediction")?;
    for &p in pred.iter() {
        writeln!(out, "{p:.16e}")?;
    }
    println!("{} predictions written to {}", pred.len(), args.out.display());
    Ok(0)
}

pub fn cmd_cv(args: &CvArgs) -> Result<i32> {
    let data = read_data_csv(&args.data, args.response.as_deref())?;
    let grid = match &args.grid {
        Some(text) => {
            let mut values = Vec::new();
            for piece in text.split(',') {
                values.push(piece.trim().parse::<f64>().map_err(|e| {
                    Error::Argument(format!("bad grid value '{piece}': {e}"))
                })?);
            }
            Some(values)
        }
        None => None,
    };
    let config = CvConfig {
        folds: args.folds,
        grid,
        grid_count: args.grid_count,
        seed: args.seed,
        s: args.s,
        tol: args.tol,
        max_iter: args.max_iter,
        scale_inputs: !args.no_scale,
        subsample: args.subsample,
    };
    let result = cross_validate(data.x.view(), data.y.view(), &config)?;
    write_cv_report(&args.out_report, &result)?;
    if result.grid.len() == 1 && result.grid[0] == 0.0 {
        eprintln!("warning: derived grid is degenerate (V_hat = 0); only V = 0 was assessed");
    }
    println!("{:>14} {:>14} {:>14} selected", "V", "mean_mse", "se_mse");
    for i in 0..result.grid.len() {
        println!(
            "{:>14.6e} {:>14.6e} {:>14.6e} {}",
            result.grid[i],
            result.mean_mse[i],
            result.se_mse[i],
            if result.grid[i] == result.best_v { "*" } else { "" }
        );
    }
    println!("best V = {:.16e}", result.best_v);

    let mut fc = FitConfig::new(result.best_v)
        .with_scaling(!args.no_scale)
        .with_tol(args.tol)
        .with_max_iter(args.max_iter);
    if let Some(s) = args.s {
        fc = fc.with_s(s);
    }
    let model = fit(data.x.view(), data.y.view(), &fc)?;
    model.save(&args.out_model)?;
    println!(
        "report written to {}; model at best V written to {}",
        args.out_report.display(),
        args.out_model.display()
    );
    Ok(0)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let spec = read_experiment(&args.spec)?;
    let report = run_experiment(&spec)?;
    write_report_csv(&args.out_report, &report)?;
    write_summary_json(&args.out_summary, &report)?;
    match report.se {
        Some(se) => println!("mean risk = {:.6e} +- {:.6e} (se)", report.mean_risk, se),
        None => println!("mean risk = {:.6e} (single repetition)", report.mean_risk),
    }
    println!(
        "report written to {}; summary written to {}",
        args.out_report.display(),
        args.out_summary.display()
    );
    Ok(0)
}

pub fn cmd_lattice_check(args: &LatticeCheckArgs) -> Result<i32> {
    let y = read_tensor_csv(&args.data)?;
    let d = y.shape().dims();
    let v2_direct = v2(&y)?;
    let v2_stacked = v2_via_h2(&y)?;
    println!("shape: {:?}", y.shape().sizes());
    println!("V2(y) = {v2_direct:.16e}");
    println!("V2(y) via stacked transform = {v2_stacked:.16e}");
    println!(
        "route agreement = {:.3e}",
        (v2_direct - v2_stacked).abs() / (1.0 + v2_direct)
    );

    let h = crate::lattice::h2(&y)?;
    let nonzero = h.values().iter().filter(|v| v.abs() > 1e-12).count();
    println!(
        "H2(y) sparsity: {nonzero} of {} entries above 1e-12",
        h.values().len()
    );

    let budget = args.v.unwrap_or(v2_direct / 2.0);
    let s = args.s.unwrap_or(d);
    let lattice_fit = fit_lattice_config(&y, budget, s, args.tol, args.max_iter)?;

    // general-design route on the same points
    let x = lattice_design(y.shape());
    let y_vec = Array1::from_vec(y.values().to_vec());
    let mut fc = FitConfig::new(budget)
        .with_tol(args.tol)
        .with_max_iter(args.max_iter)
        .with_s(s);
    fc.scale_inputs = false;
    let model = fit(x.view(), y_vec.view(), &fc)?;
    let general_fitted = predict(&model, x.view())?;
    let diff_sq: f64 = lattice_fit
        .theta_hat
        .values()
        .iter()
        .zip(general_fitted.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let scale = 1.0 + y_vec.dot(&y_vec).sqrt();
    let residual = diff_sq.sqrt() / scale;
    println!("dual-formulation residual at V = {budget:.6e}: {residual:.3e}");
    if !lattice_fit.converged {
        return Ok(2);
    }
    Ok(0)
}

/// Dispatches a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Cv(args) => cmd_cv(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::LatticeCheck(args) => cmd_lattice_check(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
