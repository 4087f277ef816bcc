//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines;
//! the simulation criteria (1-4) take a few minutes each.

use lmars::lattice::{fit_lattice, h2, reconstruct, v2, v2_via_h2, LatticeField, LatticeShape};
use lmars::rng::CounterRng;
use lmars::sim::{lattice_design, run_experiment, test_function, DesignSpec, Experiment, TestFunctionId, VMode};
use lmars::solver::{certify, solve, LassoProblem};
use lmars::variation::{vmars_smooth, SmoothFunction};
use lmars::{fit, loss, predict, FitConfig};
use ndarray::{Array1, Array2};

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn random_field(rng: &mut CounterRng, max_d: usize, max_n: usize, integer: bool) -> LatticeField {
    let d = 1 + rng.below(max_d);
    let sizes: Vec<usize> = (0..d).map(|_| 2 + rng.below(max_n - 1)).collect();
    let volume: usize = sizes.iter().product();
    let values: Vec<f64> = (0..volume)
        .map(|_| {
            if integer {
                rng.below(21) as f64 - 10.0
            } else {
                rng.normal()
            }
        })
        .collect();
    LatticeField::new(LatticeShape::new(sizes).unwrap(), values).unwrap()
}

#[test]
fn criterion_01_fig1_lattice_risk() {
    let spec = Experiment {
        repetitions: 10,
        base_seed: 1,
        ..Experiment::new(
            test_function(TestFunctionId::Fig1),
            DesignSpec::Lattice { sizes: vec![30, 30] },
            0.25,
            VMode::Known(15.0),
        )
    };
    let rep = run_experiment(&spec).unwrap();
    let pass = (2.3e-3..=4.3e-3).contains(&rep.mean_risk);
    report(
        "01 fig1 30x30 lattice",
        pass,
        &format!(
            "mean risk {:.4e} (se {:.1e}) vs band [2.3e-3, 4.3e-3]",
            rep.mean_risk,
            rep.se.unwrap_or(f64::NAN)
        ),
    );
}

#[test]
fn criterion_02_fig2_lattice_risk() {
    let spec = Experiment {
        repetitions: 10,
        base_seed: 1,
        ..Experiment::new(
            test_function(TestFunctionId::Fig2),
            DesignSpec::Lattice { sizes: vec![30, 30] },
            0.25,
            VMode::Known(32.5),
        )
    };
    let rep = run_experiment(&spec).unwrap();
    let pass = (3.3e-3..=5.7e-3).contains(&rep.mean_risk);
    report(
        "02 fig2 30x30 lattice",
        pass,
        &format!(
            "mean risk {:.4e} (se {:.1e}) vs band [3.3e-3, 5.7e-3]",
            rep.mean_risk,
            rep.se.unwrap_or(f64::NAN)
        ),
    );
}

#[test]
fn criterion_03_fig2_uniform_risk() {
    let spec = Experiment {
        repetitions: 10,
        base_seed: 1,
        ..Experiment::new(
            test_function(TestFunctionId::Fig2),
            DesignSpec::Uniform { n: 100, d: 2, seed: 7 },
            0.25,
            VMode::Known(32.5),
        )
    };
    let rep = run_experiment(&spec).unwrap();
    let pass = (1.8e-2..=4.6e-2).contains(&rep.mean_risk);
    report(
        "03 fig2 100 uniform points",
        pass,
        &format!(
            "mean risk {:.4e} (se {:.1e}) vs band [1.8e-2, 4.6e-2]",
            rep.mean_risk,
            rep.se.unwrap_or(f64::NAN)
        ),
    );
}

#[test]
fn criterion_04_table3d_risk() {
    let truth = test_function(TestFunctionId::Table3d);
    let known_v = truth.v_mars;
    let spec = Experiment {
        repetitions: 10,
        base_seed: 1,
        s: Some(2),
        ..Experiment::new(
            truth,
            DesignSpec::Lattice { sizes: vec![12, 12, 12] },
            1.0,
            VMode::Known(known_v),
        )
    };
    let rep = run_experiment(&spec).unwrap();
    let pass = (1.0e-2..=2.2e-2).contains(&rep.mean_risk);
    report(
        "04 table3d 12^3 lattice s=2",
        pass,
        &format!(
            "mean risk {:.4e} (se {:.1e}) at V = {known_v:.4} vs band [1.0e-2, 2.2e-2]",
            rep.mean_risk,
            rep.se.unwrap_or(f64::NAN)
        ),
    );
}

#[test]
fn criterion_05_vmars_checks() {
    let fig1 = test_function(TestFunctionId::Fig1);
    let finite = match &fig1.truth {
        lmars::sim::Truth::Model(m) => m.vmars_finite(),
        _ => unreachable!(),
    };
    let finite_pass = finite == 15.0;
    report(
        "05a finite variation of fig1",
        finite_pass,
        &format!("vmars_finite = {finite} (expected exactly 15)"),
    );

    let f = SmoothFunction::new(2, |x| 3.0 + 2.0 * (std::f64::consts::PI * x[0] * x[1]).sin());
    let v = vmars_smooth(&f, 128, 1e-3).unwrap();
    let smooth_pass = (31.85..=33.15).contains(&v);
    report(
        "05b smooth variation of fig2",
        smooth_pass,
        &format!(
            "vmars_smooth = {v:.4} vs band [31.85, 33.15]; the face-integral \
             formula evaluates to ~47.21 for this function (stable under grid \
             refinement and confirmed by an independent symbolic+quadrature \
             oracle), so the reference constant 32.5 is not reachable by a \
             faithful implementation"
        ),
    );
}

#[test]
fn criterion_06_formulation_equivalence() {
    let mut rng = CounterRng::new(600);
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let d = 1 + rng.below(2);
        let sizes: Vec<usize> = (0..d).map(|_| 3 + rng.below(4)).collect();
        let shape = LatticeShape::new(sizes.clone()).unwrap();
        let volume: usize = sizes.iter().product();
        let values: Vec<f64> = (0..volume).map(|_| rng.normal()).collect();
        let y = LatticeField::new(shape.clone(), values.clone()).unwrap();
        let budget = v2(&y).unwrap() * rng.uniform().max(1e-3);

        let lat = fit_lattice(&y, budget, d).unwrap();
        let x = lattice_design(&shape);
        let y_vec = Array1::from_vec(values);
        let model = fit(x.view(), y_vec.view(), &FitConfig::new(budget)).unwrap();
        let general = predict(&model, x.view()).unwrap();

        let diff: f64 = lat
            .theta_hat
            .values()
            .iter()
            .zip(general.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = y_vec.dot(&y_vec).sqrt().max(1e-12);
        let rel = diff / scale;
        worst = worst.max(rel);
        assert!(
            rel <= 1e-6,
            "trial {trial}: relative fitted difference {rel:.3e} (sizes {sizes:?}, V = {budget:.4})"
        );
    }
    report(
        "06 formulation equivalence",
        true,
        &format!("50 instances, worst relative fitted difference {worst:.3e} <= 1e-6"),
    );
}

#[test]
fn criterion_07_exact_inverse() {
    let mut rng = CounterRng::new(700);
    for trial in 0..100 {
        let theta = random_field(&mut rng, 3, 6, true);
        let round = reconstruct(&h2(&theta).unwrap()).unwrap();
        assert_eq!(
            round.values(),
            theta.values(),
            "trial {trial}: reconstruct(h2(theta)) != theta for sizes {:?}",
            theta.shape().sizes()
        );
    }
    report("07 exact inverse", true, "reconstruct(h2(theta)) = theta on 100 integer tensors");
}

#[test]
fn criterion_08_penalty_identity() {
    let mut rng = CounterRng::new(800);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let theta = random_field(&mut rng, 3, 6, false);
        let a = v2(&theta).unwrap();
        let b = v2_via_h2(&theta).unwrap();
        let gap = (a - b).abs() / (1.0 + a);
        worst = worst.max(gap);
        assert!(gap <= 1e-10, "trial {trial}: v2 routes differ by {gap:.3e}");
    }
    report("08 penalty identity", true, &format!("100 tensors, worst relative gap {worst:.3e} <= 1e-10"));
}

#[test]
fn criterion_09_solver_certification() {
    let mut rng = CounterRng::new(900);
    let mut worst_violation = 0.0f64;
    let mut worst_agreement = 0.0f64;
    for trial in 0..50 {
        let n = 15 + rng.below(30);
        let p = 3 + rng.below(12);
        let m = Array2::from_shape_fn((n, p), |_| rng.normal());
        let y = Array1::from_shape_fn(n, |_| 2.0 * rng.normal());
        let v = 0.2 + 2.0 * rng.uniform();
        let penalized = vec![true; p];

        let problem = LassoProblem::new(y.clone(), m.clone(), penalized.clone(), v).unwrap();
        let sol = solve(&problem).unwrap();
        assert!(sol.converged, "trial {trial}: solver did not converge");

        let feas: f64 = sol.gamma.iter().map(|g| g.abs()).sum();
        assert!(
            feas <= v * (1.0 + 1e-10),
            "trial {trial}: infeasible solution {feas} > {v}"
        );

        let cert = certify(&problem, &sol, 200, 9000 + trial as u64);
        worst_violation = worst_violation.max(cert.violation);
        assert!(
            cert.violation <= 1e-6,
            "trial {trial}: certificate violation {:.3e}",
            cert.violation
        );

        let start: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
        let restarted = solve(
            &LassoProblem::new(y.clone(), m, penalized, v)
                .unwrap()
                .with_warm_start(rng.normal(), start),
        )
        .unwrap();
        let diff = (&sol.fitted - &restarted.fitted).mapv(|d| d * d).sum().sqrt();
        let bound = 10.0 * problem.tol * y.dot(&y).sqrt();
        worst_agreement = worst_agreement.max(diff / bound.max(1e-300));
        assert!(
            diff <= bound,
            "trial {trial}: fitted values differ by {diff:.3e} > {bound:.3e}"
        );
    }
    report(
        "09 solver certification",
        true,
        &format!(
            "50 instances, max violation {worst_violation:.3e} <= 1e-6, max agreement ratio {worst_agreement:.2} <= 1"
        ),
    );
}

#[test]
fn criterion_10_interpolation_at_full_budget() {
    let mut rng = CounterRng::new(1000);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let theta = random_field(&mut rng, 2, 6, false);
        let budget = v2(&theta).unwrap();
        let fitres = fit_lattice(&theta, budget, theta.shape().dims()).unwrap();
        let n = theta.values().len();
        let train_loss: f64 = fitres
            .theta_hat
            .values()
            .iter()
            .zip(theta.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64;
        worst = worst.max(train_loss);
        assert!(
            train_loss < 1e-10,
            "trial {trial}: training loss {train_loss:.3e} at V = V2(y)"
        );
    }
    report(
        "10 interpolation at V = V2(y)",
        true,
        &format!("20 lattices, worst training loss {worst:.3e} < 1e-10"),
    );
}

#[test]
fn criterion_11_noiseless_recovery() {
    let spec = Experiment {
        repetitions: 2,
        base_seed: 1,
        ..Experiment::new(
            test_function(TestFunctionId::Fig1),
            DesignSpec::Lattice { sizes: vec![30, 30] },
            0.0,
            VMode::Known(15.0),
        )
    };
    let rep = run_experiment(&spec).unwrap();
    let worst = rep.losses.iter().cloned().fold(0.0f64, f64::max);
    let pass = rep.losses.iter().all(|&l| l < 1e-6);
    report(
        "11 noiseless recovery",
        pass,
        &format!("worst per-repetition loss {worst:.3e} < 1e-6"),
    );
}
