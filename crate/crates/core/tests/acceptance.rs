//! Acceptance criteria 1 to 9. Each test prints one `criterion N: PASS|FAIL`
//! line; run with `--nocapture` to see them all.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};

use eplkit::bma::{bma_predict_general, bma_predict_sel, Member, ModelEnsemble};
use eplkit::calibration::{calibrate_linex, calibrate_quantile, CalibrationTarget};
use eplkit::decision::{epl, optimize, Method, Optimizer};
use eplkit::design::{neg_posterior_variance, neg_squared_error, optimal_sample_size, voi, Arm, CostFunction, GaussianKnownVariance};
use eplkit::eigen::{default_losses, optimize_eigen, spectral_decompose, CorrelationMatrix, VectorPosterior};
use eplkit::loss::*;
use eplkit::model_selection::{choose_baf, choose_epl, DecisionTable, ModelEvidence};
use eplkit::posterior::{DiscretePosterior, Posterior, SamplePosterior};
use eplkit::rng::{substream, DEFAULT_SEED};

fn report(n: u32, ok: bool, detail: &str) {
    println!("criterion {n}: {}  {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// --- 1 -------------------------------------------------------------------

#[test]
fn criterion_1_calibration_numbers() {
    let t0 = Instant::now();
    let psi = calibrate_linex(&CalibrationTarget::tail_mass(0.03, 1.0).paper_exact(true)).unwrap();
    let q = calibrate_quantile(0.03).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_eplkit"))
        .args(["--format", "csv", "calibrate", "--prevention-share", "0.03", "--sigma", "1", "--paper-exact"])
        .output()
        .unwrap();
    let elapsed = t0.elapsed();
    let csv = String::from_utf8(out.stdout).unwrap();
    let ok = psi == -3.76
        && q == 0.97
        && out.status.success()
        && csv.lines().any(|l| l == "psi,-3.76")
        && csv.lines().any(|l| l == "q,0.97")
        && elapsed < Duration::from_secs(1);
    report(1, ok, &format!("psi={psi:?} q={q:?} cli_ok={} in {elapsed:?}", out.status.success()));
}

// --- 2 -------------------------------------------------------------------

/// How the sampling error of the action on draws is linearized.
#[derive(Clone, Copy)]
enum Influence {
    Mean,
    Quantile(f64),
    Linex(f64),
    Reciprocal,
    WeightedMean,
}

const EXCEED: WeightFn = WeightFn::Exceedance {
    kappa: 1.0,
    above: 3.0,
    below: 1.0,
};

fn criterion_2_losses() -> Vec<(&'static str, LossSpec, Influence, bool)> {
    vec![
        ("SEL", LossSpec::Sel, Influence::Mean, false),
        ("MTC(1)", LossSpec::Mtc { rho: 1.0 }, Influence::Quantile(0.5), false),
        ("QTL(0.25)", LossSpec::Qtl { q: 0.25 }, Influence::Quantile(0.25), false),
        ("QTL(0.5)", LossSpec::Qtl { q: 0.5 }, Influence::Quantile(0.5), false),
        ("QTL(0.97)", LossSpec::Qtl { q: 0.97 }, Influence::Quantile(0.97), false),
        ("LNX(0.5)", LossSpec::Linex { psi: 0.5 }, Influence::Linex(0.5), false),
        ("LNX(-0.5)", LossSpec::Linex { psi: -0.5 }, Influence::Linex(-0.5), false),
        ("LNX(2)", LossSpec::Linex { psi: 2.0 }, Influence::Linex(2.0), false),
        ("LNX(-2)", LossSpec::Linex { psi: -2.0 }, Influence::Linex(-2.0), false),
        ("GAM", LossSpec::Gam { alpha: 1.0, nu: 2.0 }, Influence::Reciprocal, true),
        ("PWD(1)", LossSpec::Pwd { lambda: 1.0 }, Influence::Reciprocal, true),
        ("PWD(-1)", LossSpec::Pwd { lambda: -1.0 }, Influence::Mean, true),
        ("weighted-SEL", LossSpec::weighted(EXCEED, LossSpec::Sel), Influence::WeightedMean, false),
    ]
}

/// Monte Carlo standard error of the action estimated from `n` draws,
/// linearized at the optimum `a`. Variances are exact posterior moments:
/// sample spreads badly understate heavy-tailed terms like exp(ψ(a - Y)).
fn action_std_err(inf: Influence, post: &Posterior, n: usize, a: f64) -> f64 {
    let n = n as f64;
    match inf {
        Influence::Mean => (post.moments().1 / n).sqrt(),
        Influence::Quantile(q) => (q * (1.0 - q) / n).sqrt() / post.density_or_mass(a),
        Influence::Linex(psi) => {
            // at the optimum E exp(ψ(a - Y)) = 1
            let second = (2.0 * psi * a + post.log_mgf_neg(2.0 * psi).unwrap()).exp();
            ((second - 1.0) / n).sqrt() / psi.abs()
        }
        Influence::Reciprocal => {
            let m1 = post.expect(|y| 1.0 / y).unwrap();
            let m2 = post.expect(|y| 1.0 / (y * y)).unwrap();
            a * a * ((m2 - m1 * m1) / n).sqrt()
        }
        Influence::WeightedMean => {
            let w = |y: f64| EXCEED.eval(y);
            let ew = post.try_expect_with(w, &[1.0]).unwrap();
            let v = post.try_expect_with(|y| Ok((w(y)? * (y - a)).powi(2)), &[1.0]).unwrap();
            (v / n).sqrt() / ew
        }
    }
}

fn draws_for(post: &Posterior, rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    match post {
        Posterior::Gaussian(_) => {
            let (m, v) = post.moments();
            let d = Normal::new(m, v.sqrt()).unwrap();
            (0..n).map(|_| d.sample(rng)).collect()
        }
        Posterior::Gamma(_) => {
            // shape = mean²/var, scale = var/mean
            let (m, v) = post.moments();
            let d = Gamma::new(m * m / v, v / m).unwrap();
            (0..n).map(|_| d.sample(rng)).collect()
        }
        _ => unreachable!(),
    }
}

#[test]
fn criterion_2_closed_form_vs_numeric() {
    let t0 = Instant::now();
    let posts = [
        ("Gaussian(0,1)", Posterior::gaussian(0.0, 1.0).unwrap()),
        ("Gaussian(3,2)", Posterior::gaussian(3.0, 2.0).unwrap()),
        ("Gamma(3,1)", Posterior::gamma(3.0, 1.0).unwrap()),
    ];
    let numeric = Optimizer::numeric();
    let mut checked = 0;
    let mut skipped = Vec::new();
    let mut failures = Vec::new();
    let mut worst_se: f64 = 0.0;
    for (pi, (pname, post)) in posts.iter().enumerate() {
        let mut rng = substream(DEFAULT_SEED, "acceptance-draws", pi as u64);
        let draws = draws_for(post, &mut rng, 100_000);
        let samples = Posterior::Samples(SamplePosterior::from_values(draws.iter().copied()).unwrap());
        let positive = matches!(post, Posterior::Gamma(_));
        for (lname, spec, inf, needs_positive) in criterion_2_losses() {
            if needs_positive && !positive {
                skipped.push(format!("{lname} on {pname} (needs positive support)"));
                continue;
            }
            if let LossSpec::Linex { psi } = spec {
                if post.log_mgf_neg(psi).is_err() {
                    skipped.push(format!("{lname} on {pname} (divergent mgf)"));
                    continue;
                }
            }
            let cf = optimize(&spec, post).unwrap();
            if !cf.method.is_closed_form() {
                failures.push(format!("{lname} on {pname}: no closed form"));
                continue;
            }
            let num = numeric.optimize(&spec, post).unwrap();
            checked += 1;
            if !close(num.action, cf.action, 1e-6 * (1.0 + cf.action.abs())) {
                failures.push(format!("{lname} on {pname}: numeric {} vs closed {}", num.action, cf.action));
            }

            // E exp(2(Y - a)) under Gamma(3, 1) is infinite, so the Monte
            // Carlo error of the LINEX estimate is unbounded.
            if let (LossSpec::Linex { psi }, true) = (&spec, positive) {
                if post.log_mgf_neg(2.0 * psi).is_err() {
                    skipped.push(format!("{lname} on {pname} samples (infinite-variance estimator)"));
                    continue;
                }
            }
            let num_s = numeric.optimize(&spec, &samples).unwrap();
            let cf_s = optimize(&spec, &samples).unwrap();
            let se = action_std_err(inf, post, draws.len(), cf.action);
            checked += 1;
            let z = (num_s.action - cf.action).abs() / se;
            worst_se = worst_se.max(z);
            if z > 3.0 {
                failures.push(format!("{lname} on {pname} samples: {} vs {} ({z:.2} SE)", num_s.action, cf.action));
            }
            // both paths on the same draws must reach the same minimum
            let loss = compose(&spec).unwrap();
            let (e_num, e_cf) = (epl(&loss, &samples, num_s.action).unwrap(), epl(&loss, &samples, cf_s.action).unwrap());
            if !close(e_num, e_cf, 1e-9 * (1.0 + e_cf)) {
                failures.push(format!("{lname} on {pname} samples: epl {e_num} vs {e_cf}"));
            }
        }
    }
    let elapsed = t0.elapsed();
    for s in &skipped {
        println!("  skipped: {s}");
    }
    for f in &failures {
        println!("  failed: {f}");
    }
    let ok = failures.is_empty() && elapsed < Duration::from_secs(60);
    report(
        2,
        ok,
        &format!("{checked} comparisons, {} skipped, worst sample deviation {worst_se:.2} SE, {elapsed:?}", skipped.len()),
    );
}

// --- 3 -------------------------------------------------------------------

#[test]
fn criterion_3_ordering() {
    let gamma = Posterior::gamma(3.0, 1.0).unwrap();
    let mode = optimize(&LossSpec::ZeroOne, &gamma).unwrap();
    let median = optimize(&LossSpec::Mtc { rho: 1.0 }, &gamma).unwrap();
    let mean = optimize(&LossSpec::Sel, &gamma).unwrap();
    let paths = mode.method == Method::ClosedForm("posterior_mode")
        && median.method == Method::ClosedForm("posterior_median")
        && mean.method == Method::ClosedForm("posterior_mean");
    let order = close(mode.action, 2.0, 1e-12) && mode.action < median.action && median.action < mean.action && close(mean.action, 3.0, 1e-12);

    let mut rng = substream(DEFAULT_SEED, "acceptance-ordering", 0);
    let mut posts = vec![
        Posterior::gaussian(0.0, 1.0).unwrap(),
        Posterior::gaussian(3.0, 2.0).unwrap(),
        gamma.clone(),
    ];
    for p in posts.clone() {
        posts.push(Posterior::Samples(SamplePosterior::from_values(draws_for(&p, &mut rng, 20_000)).unwrap()));
    }
    let mut linex_cases = 0;
    let mut linex_ok = true;
    let mut qtl_ok = true;
    for p in &posts {
        for psi in [-0.1, -0.5, -2.0] {
            let spec = LossSpec::Linex { psi };
            match optimize(&spec, p) {
                Ok(d) => {
                    linex_cases += 1;
                    linex_ok &= d.action > p.mean();
                }
                // divergent mgf on Gamma(3,1) with ψ = -2
                Err(e) => linex_ok &= e.is_numeric() && matches!(p, Posterior::Gamma(_)),
            }
        }
        let qs: Vec<f64> = (1..=9)
            .map(|i| optimize(&LossSpec::Qtl { q: i as f64 / 10.0 }, p).unwrap().action)
            .collect();
        qtl_ok &= qs.windows(2).all(|w| w[0] <= w[1]);
    }
    report(
        3,
        paths && order && linex_ok && qtl_ok,
        &format!(
            "mode={:?} median={:?} mean={:?}; linex above mean in {linex_cases} cases; qtl monotone on {} posteriors",
            mode.action,
            median.action,
            mean.action,
            posts.len()
        ),
    );
}

// --- 4 -------------------------------------------------------------------

#[test]
fn criterion_4_model_selection() {
    let mut rng = substream(DEFAULT_SEED, "acceptance-models", 0);
    let mut uniform_agree = 0;
    let mut scale_ok = true;
    let mut uniform = 0;
    for i in 0..1000 {
        let m = rng.random_range(2..=6);
        let lik: Vec<f64> = (0..m).map(|_| rng.random_range(1e-6..1.0)).collect();
        let prior = if i % 2 == 0 {
            vec![1.0 / m as f64; m]
        } else {
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|x| x / s).collect()
        };
        let table = DecisionTable::zero_one(m);
        let ev = ModelEvidence::new(lik.clone(), prior.clone()).unwrap();
        let scaled = ModelEvidence::new(lik.iter().map(|l| l * 1e3).collect(), prior).unwrap();
        let (baf, epl) = (choose_baf(&ev), choose_epl(&ev, &table).unwrap().index);
        if i % 2 == 0 {
            uniform += 1;
            uniform_agree += (baf == epl) as usize;
        }
        scale_ok &= choose_baf(&scaled) == baf && choose_epl(&scaled, &table).unwrap().index == epl;
    }
    let counter = ModelEvidence::new(vec![0.6, 0.4], vec![0.3, 0.7]).unwrap();
    let (c_baf, c_epl) = (choose_baf(&counter), choose_epl(&counter, &DecisionTable::zero_one(2)).unwrap().index);
    let ok = uniform_agree == uniform && scale_ok && c_baf == 0 && c_epl == 1;
    report(
        4,
        ok,
        &format!(
            "uniform-prior agreement {uniform_agree}/{uniform}; scaling invariant={scale_ok}; counterexample BAF=M{} EPL=M{}",
            c_baf + 1,
            c_epl + 1
        ),
    );
}

// --- 5 -------------------------------------------------------------------

fn random_correlation(n: usize, rng: &mut ChaCha8Rng) -> CorrelationMatrix {
    let k = n + 2;
    let a: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let c: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (0..k).map(|t| a[i][t] * a[j][t]).sum()).collect())
        .collect();
    let rows = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 1.0 } else { c[i][j] / (c[i][i] * c[j][j]).sqrt() })
                .collect()
        })
        .collect();
    CorrelationMatrix::new(rows).unwrap()
}

#[test]
fn criterion_5_eigenspace() {
    let mut rng = substream(DEFAULT_SEED, "acceptance-eigen", 0);
    let (mut max_dev, mut max_orth, mut max_rec, mut max_trace) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..100 {
        let n = 1 + i % 6;
        let r = random_correlation(n, &mut rng);
        let d = spectral_decompose(&r).unwrap();
        let draws: Vec<Vec<f64>> = (0..10_000)
            .map(|_| (0..n).map(|k| 10.0 * k as f64 + rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let weights: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.1..1.0)).collect();
        let post = VectorPosterior::new(draws, Some(weights)).unwrap();
        let pred = optimize_eigen(&d, &post, &default_losses(&d, &LossSpec::Sel)).unwrap();
        for (a, m) in pred.action.iter().zip(post.mean()) {
            max_dev = max_dev.max((a - m).abs());
        }
        max_orth = max_orth.max(d.orthonormality_residual());
        max_rec = max_rec.max(d.reconstruction_residual(&r));
        max_trace = max_trace.max((d.eigenvalues().iter().sum::<f64>() - n as f64).abs());
    }
    let ok = max_dev <= 1e-8 && max_orth <= 1e-10 && max_rec <= 1e-10 && max_trace <= 1e-10;
    report(
        5,
        ok,
        &format!("max |δ*-mean|={max_dev:.1e} orth={max_orth:.1e} recon={max_rec:.1e} trace={max_trace:.1e}"),
    );
}

// --- 6 -------------------------------------------------------------------

fn ensemble(members: Vec<(f64, LossSpec)>, p: Vec<f64>) -> ModelEnsemble {
    let labels: Vec<String> = (1..=members.len()).map(|k| format!("M{k}")).collect();
    let members = members
        .into_iter()
        .zip(&labels)
        .map(|((mu, loss), l)| Member::new(l.clone(), Posterior::gaussian(mu, 1.0).unwrap(), loss))
        .collect();
    ModelEnsemble::new(members, DiscretePosterior::new(p, labels).unwrap()).unwrap()
}

#[test]
fn criterion_6_bma() {
    let sel = |p: Vec<f64>| ensemble(vec![(0.0, LossSpec::Sel), (2.0, LossSpec::Sel)], p);
    let half = bma_predict_sel(&sel(vec![0.5, 0.5])).unwrap().action;
    let skew = bma_predict_sel(&sel(vec![0.8, 0.2])).unwrap().action;
    let single = bma_predict_sel(&ensemble(vec![(1.7, LossSpec::Sel)], vec![1.0])).unwrap().action;
    let arithmetic = close(half, 1.0, 1e-12) && close(skew, 0.4, 1e-12) && close(single, 1.7, 1e-12);

    let mut general_dev: f64 = 0.0;
    for p in [vec![0.5, 0.5], vec![0.8, 0.2], vec![0.1, 0.9]] {
        let e = sel(p);
        general_dev = general_dev.max((bma_predict_general(&e).unwrap().action - bma_predict_sel(&e).unwrap().action).abs());
    }

    let lnx = LossSpec::Linex { psi: -2.0 };
    let mix = ensemble(vec![(0.0, lnx.clone()), (2.0, lnx.clone())], vec![0.5, 0.5]);
    let general = bma_predict_general(&mix).unwrap().action;
    let loss = compose(&lnx).unwrap();
    let (g0, g2) = (Posterior::gaussian(0.0, 1.0).unwrap(), Posterior::gaussian(2.0, 1.0).unwrap());
    let mut best = (f64::INFINITY, f64::NAN);
    for i in 0..=6000 {
        let a = -1.0 + i as f64 * 1e-3;
        let v = 0.5 * epl(&loss, &g0, a).unwrap() + 0.5 * epl(&loss, &g2, a).unwrap();
        if v < best.0 {
            best = (v, a);
        }
    }
    let ok = arithmetic && general_dev <= 1e-6 && (general - best.1).abs() <= 1e-3;
    report(
        6,
        ok,
        &format!(
            "0.5/0.5→{half:?} 0.8/0.2→{skew:?}; general vs SEL {general_dev:.1e}; linex mixture {general:.6} vs grid {:.3}",
            best.1
        ),
    );
}

// --- 7 -------------------------------------------------------------------

#[test]
fn criterion_7_sampling_design() {
    let t0 = Instant::now();
    let model = GaussianKnownVariance::new(0.0, 1.0, vec![1.0, 1.0]).unwrap();
    let grid: Vec<usize> = (0..=30).collect();
    let design = optimal_sample_size(&model, 0, &LossSpec::Sel, 100.0, &CostFunction::linear(1.0, 1.0).unwrap(), &grid, 1000, DEFAULT_SEED)
        .unwrap();
    let n_ok = design.n_star.abs_diff(9) <= 1;

    let arm = Arm::new(vec![(0, 5)]);
    let self_var = voi(&model, &arm, &arm, neg_posterior_variance, 10_000, DEFAULT_SEED).unwrap();
    let self_sq = voi(&model, &arm, &arm, neg_squared_error, 10_000, DEFAULT_SEED).unwrap();
    let self_ok = self_var.mean == 0.0 && self_sq.mean == 0.0 && self_sq.std_err == 0.0;

    let base = Arm::new(vec![(0, 1)]);
    let ext = Arm::new(vec![(0, 1), (1, 1)]);
    let sixth = 1.0 / 6.0;
    let v_var = voi(&model, &base, &ext, neg_posterior_variance, 10_000, DEFAULT_SEED).unwrap();
    let v_sq = voi(&model, &base, &ext, neg_squared_error, 10_000, DEFAULT_SEED).unwrap();
    let conj_ok = (v_var.mean - sixth).abs() <= 3.0 * v_var.std_err + 1e-12 && (v_sq.mean - sixth).abs() <= 3.0 * v_sq.std_err;
    let elapsed = t0.elapsed();
    report(
        7,
        n_ok && self_ok && conj_ok && elapsed < Duration::from_secs(120),
        &format!(
            "n*={}; self-arm {:?}/{:?}; VOI -var {:.6}±{:.1e}, -sq.err {:.4}±{:.4} (1/6={sixth:.4}); {elapsed:?}",
            design.n_star, self_var.mean, self_sq.mean, v_var.mean, v_var.std_err, v_sq.mean, v_sq.std_err
        ),
    );
}

// --- 8 -------------------------------------------------------------------

#[test]
fn criterion_8_loss_properties() {
    let mut rng = substream(DEFAULT_SEED, "acceptance-losses", 0);
    let mut cases = 0usize;
    let mut bad = Vec::new();
    let mut check = |ok: bool, what: String| {
        cases += 1;
        if !ok && bad.len() < 10 {
            bad.push(what);
        }
    };
    for _ in 0..10_000 {
        let a: f64 = rng.random_range(-20.0..20.0);
        let y: f64 = rng.random_range(-20.0..20.0);
        let (ap, yp): (f64, f64) = (rng.random_range(0.01..30.0), rng.random_range(0.01..30.0));
        let rho = rng.random_range(0.2..4.0);
        let q = rng.random_range(0.01..0.99);
        let psi = rng.random_range(-2.0..2.0);
        let lambda = rng.random_range(-3.0..3.0);
        let nu = rng.random_range(1.01..5.0);

        let real = [
            LossSpec::Sel,
            LossSpec::Mtc { rho },
            LossSpec::ZeroOne,
            LossSpec::Qtl { q },
            LossSpec::Linex { psi },
            LossSpec::potential_gg(rho),
        ];
        for spec in &real {
            let l = compose(spec).unwrap();
            let v = l.eval(a, y).unwrap();
            check(v >= 0.0, format!("{spec} negative at ({a}, {y})"));
            check(l.eval(y, y).unwrap() == 0.0, format!("{spec} nonzero at truth {y}"));
        }
        for spec in [LossSpec::Pwd { lambda }, LossSpec::Gam { alpha: 1.0, nu }] {
            let l = compose(&spec).unwrap();
            check(l.eval(ap, yp).unwrap() >= -1e-12 * yp, format!("{spec} negative at ({ap}, {yp})"));
            check(l.eval(yp, yp).unwrap().abs() <= 1e-12 * yp, format!("{spec} nonzero at truth {yp}"));
        }

        // under-prediction costs more for q > 1/2, ψ < 0 and λ < 0
        let d = rng.random_range(0.01..0.99) * yp;
        let qa = 0.5 + q / 2.0;
        check(eval_qtl(qa, yp - d, yp) > eval_qtl(qa, yp + d, yp), format!("qtl({qa}) asymmetry"));
        let neg_psi = -psi.abs() - 0.01;
        check(
            eval_linex(neg_psi, yp - d, yp).unwrap() > eval_linex(neg_psi, yp + d, yp).unwrap(),
            format!("linex({neg_psi}) asymmetry"),
        );
        let neg_lambda = -lambda.abs() - 0.01;
        check(
            eval_pwd(neg_lambda, yp - d, yp).unwrap() > eval_pwd(neg_lambda, yp + d, yp).unwrap(),
            format!("pwd({neg_lambda}) asymmetry"),
        );

        // continuity across the series switch at |λ - λ₀| = 1e-6
        for l0 in [0.0, -1.0] {
            for side in [-1.0, 1.0] {
                let inside = eval_pwd(l0 + side * 1e-6 * (1.0 - 1e-9), ap, yp).unwrap();
                let outside = eval_pwd(l0 + side * 1e-6 * (1.0 + 1e-9), ap, yp).unwrap();
                check(close(inside, outside, 1e-6), format!("pwd switch at {l0} ({ap}, {yp})"));
                let at = eval_pwd(l0, ap, yp).unwrap();
                let near = eval_pwd(l0 + side * 1e-9, ap, yp).unwrap();
                check(close(at, near, 1e-6), format!("pwd limit at {l0} ({ap}, {yp})"));
            }
        }

        let pot = compose(&LossSpec::potential_gg(rho)).unwrap().eval(a, y).unwrap();
        let mtc = compose(&LossSpec::Mtc { rho }).unwrap().eval(a, y).unwrap();
        check(close(pot, mtc, 1e-12), format!("potential vs mtc({rho}) at ({a}, {y}): {pot} {mtc}"));
    }
    for b in &bad {
        println!("  failed: {b}");
    }
    report(8, bad.is_empty() && cases >= 10_000, &format!("{cases} checks over 10000 random cases"));
}

// --- 9 -------------------------------------------------------------------

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run_into(dir: &Path, args: &[&str], threads: &str) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_eplkit"))
        .env("RAYON_NUM_THREADS", threads)
        .arg("--out")
        .arg(dir)
        .args(["--format", "csv"])
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_9_determinism() {
    let dir = scenario_dir();
    let runs: Vec<Vec<String>> = [
        ("predict.toml", "predict"),
        ("compare_models.toml", "compare-models"),
        ("multivar.toml", "multivar"),
        ("bma.toml", "bma"),
        ("risk_curve.toml", "risk-curve"),
        ("design_n.toml", "design-n"),
        ("voi.toml", "voi"),
    ]
    .iter()
    .map(|(f, v)| vec!["--scenario".into(), dir.join(f).to_string_lossy().into_owned(), v.to_string()])
    .chain([["calibrate", "--prevention-share", "0.03", "--sigma", "1", "--paper-exact"]
        .iter()
        .map(|s| s.to_string())
        .collect()])
    .collect();
    let mut files = 0;
    let mut mismatched = Vec::new();
    for args in &runs {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        // a second run on one thread also checks that parallel reduction order is fixed
        let out_a = run_into(a.path(), &args, "4");
        let out_b = run_into(b.path(), &args, "1");
        let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
        files += fa.len();
        if fa.is_empty() || fa != fb || out_a != out_b {
            mismatched.push(args.last().unwrap().to_string());
        }
    }
    report(
        9,
        mismatched.is_empty(),
        &format!("{} verbs, {files} CSV artifacts byte-identical across runs; mismatched: {mismatched:?}", runs.len()),
    );
}
