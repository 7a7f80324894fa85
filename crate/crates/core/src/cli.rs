//! Command-line front end: parse a scenario, run one verb, print a table
//! and/or CSV, and write artifacts under `--out`.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numeric failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::bma::{bma_predict_general, bma_predict_sel};
use crate::calibration::{calibrate_linex, calibrate_quantile};
use crate::decision::{epl, lower_envelope, tail_risk_curve, OptimalDecision, Optimizer};
use crate::design::{neg_posterior_variance, neg_squared_error, optimal_sample_size, voi, voi_paired, Estimate};
use crate::eigen::{default_losses, epl_multivariate, estimate_correlation, optimize_eigen, spectral_decompose};
use crate::error::{Error, Result};
use crate::loss::compose;
use crate::model_selection::{choose_baf, choose_epl};
use crate::posterior::Posterior;
use crate::rng::DEFAULT_SEED;
use crate::scenario::{read_values, CalibrationDoc, PosteriorDoc, Scenario};

#[derive(Debug, Parser)]
#[command(name = "eplkit", version, about = "Optimal Bayes predictions under general loss functions")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Scenario file (TOML, schema_version = 1).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Directory for CSV artifacts and the scenario echo.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// What to print on standard output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
    Both,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Optimal prediction for the scenario posterior and loss.
    Predict,
    /// Bayes-factor and decision-table model choice.
    CompareModels,
    /// Eigenspace prediction of a vector-valued predictand.
    Multivar,
    /// Bayesian-model-averaged prediction.
    Bma,
    /// LINEX and quantile parameters from cost asymmetries.
    Calibrate(CalibrateArgs),
    /// Tail probability against loss over a threshold grid.
    RiskCurve,
    /// Cost-aware optimal sample size.
    DesignN,
    /// Value of information of extra data.
    Voi,
}

impl Verb {
    fn name(&self) -> &'static str {
        match self {
            Verb::Predict => "predict",
            Verb::CompareModels => "compare-models",
            Verb::Multivar => "multivar",
            Verb::Bma => "bma",
            Verb::Calibrate(_) => "calibrate",
            Verb::RiskCurve => "risk-curve",
            Verb::DesignN => "design-n",
            Verb::Voi => "voi",
        }
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
struct CalibrateArgs {
    /// Share of the budget spent on prevention, e.g. 0.03.
    #[arg(long)]
    prevention_share: Option<f64>,
    /// Target Gaussian multiple z_q, e.g. 1.88.
    #[arg(long)]
    gaussian_multiple: Option<f64>,
    /// Posterior standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Round z_q to two decimals.
    #[arg(long)]
    paper_exact: bool,
}

/// A verb's output: key/value rows for the table and named CSV artifacts.
#[derive(Debug, Default)]
struct Report {
    rows: Vec<(String, String)>,
    artifacts: Vec<(String, String)>,
}

impl Report {
    fn row(&mut self, k: impl Into<String>, v: impl Into<String>) {
        self.rows.push((k.into(), v.into()));
    }

    fn table(&self) -> String {
        let w = self.rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        self.rows.iter().map(|(k, v)| format!("{k:<w$}  {v}\n")).collect()
    }
}

/// Shortest round-trip form, always with a decimal point or exponent.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn csv_of(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(vec![]);
    let io = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Invalid(e.to_string()))
}

fn describe(doc: &PosteriorDoc) -> String {
    match doc {
        PosteriorDoc::Gaussian { mean, sd } => format!("gaussian(mean={}, sd={})", num(*mean), num(*sd)),
        PosteriorDoc::Gamma { shape, rate } => format!("gamma(shape={}, rate={})", num(*shape), num(*rate)),
        PosteriorDoc::Beta { alpha, beta } => format!("beta(alpha={}, beta={})", num(*alpha), num(*beta)),
        PosteriorDoc::Samples { path } => format!("samples({path})"),
    }
}

fn decision_row(path: &str, d: &OptimalDecision) -> Vec<String> {
    vec![path.into(), num(d.action), num(d.epl), d.method.tag().into(), d.method.to_string()]
}

/// Run the CLI with explicit arguments and output streams; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    2
                }
            };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "eplkit {}: error: {e}", cli.verb.name());
            if e.is_numeric() {
                3
            } else {
                2
            }
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let mut sc = match &cli.scenario {
        Some(p) => Scenario::read(p)?,
        None if matches!(cli.verb, Verb::Calibrate(_)) => Scenario::empty(),
        None => {
            return Err(Error::Invalid(format!(
                "--scenario is required for `{}`",
                cli.verb.name()
            )))
        }
    };
    let seed = cli.seed.or(sc.seed).unwrap_or(DEFAULT_SEED);
    sc.seed = Some(seed);
    if let Verb::Calibrate(a) = &cli.verb {
        let mut doc = sc.calibration.clone().unwrap_or_default();
        if a.prevention_share.is_some() || a.gaussian_multiple.is_some() {
            doc.prevention_share = a.prevention_share;
            doc.gaussian_multiple = a.gaussian_multiple;
        }
        doc.sigma = a.sigma.or(doc.sigma);
        doc.paper_exact |= a.paper_exact;
        sc.calibration = Some(doc);
    }

    let mut report = Report::default();
    report.row("verb", cli.verb.name());
    report.row("seed", seed.to_string());
    match &cli.verb {
        Verb::Predict => predict(&sc, &mut report)?,
        Verb::CompareModels => compare_models(&sc, &mut report)?,
        Verb::Multivar => multivar(&sc, &mut report)?,
        Verb::Bma => bma(&sc, &mut report)?,
        Verb::Calibrate(_) => calibrate(&sc, &mut report)?,
        Verb::RiskCurve => risk_curve(&sc, &mut report)?,
        Verb::DesignN => design_n(&sc, seed, &mut report)?,
        Verb::Voi => value_of_information(&sc, seed, &mut report)?,
    }

    let io = |path: &std::path::Path| {
        let path = path.display().to_string();
        move |e: std::io::Error| Error::Io {
            path: path.clone(),
            message: e.to_string(),
        }
    };
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for (name, body) in &report.artifacts {
            let p = dir.join(format!("{name}.csv"));
            std::fs::write(&p, body).map_err(io(&p))?;
        }
        let p = dir.join(format!("{}.scenario.toml", cli.verb.name()));
        std::fs::write(&p, sc.to_toml()?).map_err(io(&p))?;
    }
    let stdout = |e: std::io::Error| Error::Io {
        path: "<stdout>".into(),
        message: e.to_string(),
    };
    if matches!(cli.format, Format::Table | Format::Both) {
        write!(out, "{}", report.table()).map_err(stdout)?;
    }
    if matches!(cli.format, Format::Csv | Format::Both) {
        for (i, (_, body)) in report.artifacts.iter().enumerate() {
            if i > 0 || cli.format == Format::Both {
                writeln!(out).map_err(stdout)?;
            }
            write!(out, "{body}").map_err(stdout)?;
        }
    }
    Ok(())
}

fn predict(sc: &Scenario, r: &mut Report) -> Result<()> {
    let post = sc.posterior()?;
    let spec = sc.loss()?;
    r.row("posterior", describe(sc.posterior.as_ref().expect("checked by posterior()")));
    r.row("loss", spec.to_string());
    let d = Optimizer::default().optimize(&spec, &post)?;
    r.row("action", num(d.action));
    r.row("epl", num(d.epl));
    r.row("method", d.method.tag());
    r.row("detail", d.method.to_string());
    let mut rows = vec![decision_row("default", &d)];
    if sc.predict.as_ref().is_some_and(|p| p.check_numeric) {
        let n = Optimizer::numeric().optimize(&spec, &post)?;
        r.row("numeric_action", num(n.action));
        r.row("numeric_epl", num(n.epl));
        r.row("numeric_detail", n.method.to_string());
        rows.push(decision_row("numeric", &n));
    }
    r.artifacts.push((
        "predict".into(),
        csv_of(&["path", "action", "epl", "method", "detail"], &rows)?,
    ));
    Ok(())
}

fn compare_models(sc: &Scenario, r: &mut Report) -> Result<()> {
    let ev = sc.evidence()?;
    let table = sc.decision_table(ev.len())?;
    let choice = choose_epl(&ev, &table)?;
    let baf = choose_baf(&ev);
    let labels = ev.labels();
    let p = choice.posterior.probabilities();
    r.row("posterior", p.iter().map(|x| num(*x)).collect::<Vec<_>>().join(", "));
    r.row("epl", choice.epl.iter().map(|x| num(*x)).collect::<Vec<_>>().join(", "));
    r.row("choice_epl", format!("{} ({})", choice.index + 1, labels[choice.index]));
    r.row("choice_baf", format!("{} ({})", baf + 1, labels[baf]));
    r.row("method", "closed_form");
    let rows: Vec<Vec<String>> = (0..ev.len())
        .map(|k| {
            vec![
                (k + 1).to_string(),
                labels[k].clone(),
                num(ev.likelihoods()[k]),
                num(ev.prior()[k]),
                num(p[k]),
                num(choice.epl[k]),
                (k == choice.index).to_string(),
                (k == baf).to_string(),
            ]
        })
        .collect();
    r.artifacts.push((
        "compare_models".into(),
        csv_of(
            &["model", "label", "likelihood", "prior", "posterior", "epl", "epl_choice", "baf_choice"],
            &rows,
        )?,
    ));
    Ok(())
}

fn multivar(sc: &Scenario, r: &mut Report) -> Result<()> {
    let (corr, post, losses) = sc.multivar_inputs()?;
    let corr = match corr {
        Some(c) => {
            r.row("correlation", "given");
            c
        }
        None => {
            r.row("correlation", "estimated from draws");
            let draws: Vec<Vec<f64>> = (0..post.len()).map(|j| post.draw(j).to_vec()).collect();
            estimate_correlation(&draws)?
        }
    };
    if corr.dim() != post.dim() {
        return Err(Error::DimensionMismatch {
            expected: corr.dim(),
            found: post.dim(),
        });
    }
    let decomp = spectral_decompose(&corr)?;
    let losses = match losses {
        Some(l) => l,
        None => default_losses(&decomp, &sc.loss()?),
    };
    let pred = optimize_eigen(&decomp, &post, &losses)?;
    let joint = epl_multivariate(&decomp, &post, &losses, &pred.action)?;
    r.row("site", post.site().unwrap_or("-"));
    r.row("draws", post.len().to_string());
    r.row("eigenvalues", decomp.eigenvalues().iter().map(|x| num(*x)).collect::<Vec<_>>().join(", "));
    r.row("action", pred.action.iter().map(|x| num(*x)).collect::<Vec<_>>().join(", "));
    r.row("epl", num(joint));
    let mean = post.mean();
    let rows: Vec<Vec<String>> = pred
        .action
        .iter()
        .zip(&mean)
        .enumerate()
        .map(|(k, (a, m))| vec![(k + 1).to_string(), num(*a), num(*m)])
        .collect();
    r.artifacts.push(("multivar".into(), csv_of(&["coordinate", "action", "posterior_mean"], &rows)?));
    let rows: Vec<Vec<String>> = pred
        .components
        .iter()
        .enumerate()
        .map(|(i, d)| {
            vec![
                (i + 1).to_string(),
                num(decomp.eigenvalues()[i]),
                losses[i].to_string(),
                num(d.action),
                num(d.epl),
                d.method.tag().into(),
            ]
        })
        .collect();
    r.artifacts.push((
        "multivar_eigen".into(),
        csv_of(&["eigenspace", "eigenvalue", "loss", "gamma", "epl", "method"], &rows)?,
    ));
    Ok(())
}

fn bma(sc: &Scenario, r: &mut Report) -> Result<()> {
    let ens = sc.ensemble()?;
    let mean = bma_predict_sel(&ens)?;
    let general = bma_predict_general(&ens)?;
    for (m, p) in ens.members().iter().zip(ens.model_posterior().probabilities()) {
        r.row(format!("member {}", m.label), format!("p={} loss={}", num(*p), m.loss));
    }
    r.row("bma_mean", num(mean.action));
    r.row("bma_mean_epl", num(mean.epl));
    r.row("general_action", num(general.action));
    r.row("general_epl", num(general.epl));
    r.row("general_method", general.method.tag());
    r.artifacts.push((
        "bma".into(),
        csv_of(
            &["path", "action", "epl", "method", "detail"],
            &[decision_row("bma_mean", &mean), decision_row("general", &general)],
        )?,
    ));
    let rows: Vec<Vec<String>> = ens
        .members()
        .iter()
        .zip(ens.model_posterior().probabilities())
        .map(|(m, p)| vec![m.label.clone(), num(*p), num(m.posterior.mean()), m.loss.to_string()])
        .collect();
    r.artifacts.push((
        "bma_members".into(),
        csv_of(&["label", "probability", "posterior_mean", "loss"], &rows)?,
    ));
    Ok(())
}

fn calibrate(sc: &Scenario, r: &mut Report) -> Result<()> {
    let doc: &CalibrationDoc = sc.calibration_target().expect("filled from flags");
    let mut rows = Vec::new();
    if let Some(share) = doc.prevention_share {
        let q = calibrate_quantile(share)?;
        r.row("q", num(q));
        rows.push(vec!["q".to_string(), num(q)]);
    }
    if let Some(target) = doc.target()? {
        let z = target.z_q()?;
        let psi = calibrate_linex(&target)?;
        r.row("z_q", num(z));
        r.row("sigma", num(target.sigma));
        r.row("psi", num(psi));
        rows.push(vec!["z_q".into(), num(z)]);
        rows.push(vec!["sigma".into(), num(target.sigma)]);
        rows.push(vec!["psi".into(), num(psi)]);
    }
    if rows.is_empty() {
        return Err(Error::Invalid(
            "nothing to calibrate: give --prevention-share, or --gaussian-multiple with --sigma".into(),
        ));
    }
    r.row("paper_exact", doc.paper_exact.to_string());
    r.row("method", "closed_form");
    rows.push(vec!["paper_exact".into(), doc.paper_exact.to_string()]);
    r.artifacts.push(("calibrate".into(), csv_of(&["quantity", "value"], &rows)?));
    Ok(())
}

fn risk_curve(sc: &Scenario, r: &mut Report) -> Result<()> {
    let post: Posterior = sc.posterior()?;
    let spec = sc.loss()?;
    let loss = compose(&spec)?;
    let doc = sc.risk_curve()?;
    let kappa = doc.kappa.values()?;
    let action = match doc.action {
        Some(a) => {
            r.row("action_source", "given");
            a
        }
        None => {
            let d = Optimizer::default().optimize(&spec, &post)?;
            r.row("action_source", format!("optimal ({})", d.method.tag()));
            d.action
        }
    };
    r.row("posterior", describe(sc.posterior.as_ref().expect("checked by posterior()")));
    r.row("loss", spec.to_string());
    r.row("action", num(action));
    r.row("epl", num(epl(&loss, &post, action)?));
    r.row("points", kappa.len().to_string());
    r.artifacts.push(("risk_curve".into(), tail_risk_curve(&loss, &post, action, &kappa)?.to_csv()));
    if let Some(grid) = &doc.envelope_actions {
        let env = lower_envelope(&loss, &post, &kappa, &grid.values()?)?;
        r.artifacts.push(("risk_envelope".into(), env.to_csv()));
    }
    Ok(())
}

fn design_n(sc: &Scenario, seed: u64, r: &mut Report) -> Result<()> {
    let model = sc.joint_model()?;
    let spec = sc.loss()?;
    let (doc, cost, grid) = sc.design()?;
    let d = optimal_sample_size(model.as_ref(), doc.source, &spec, doc.tau, &cost, &grid, doc.n_mc, seed)?;
    r.row("loss", spec.to_string());
    r.row("tau", num(doc.tau));
    r.row("n_mc", doc.n_mc.to_string());
    r.row("n_star", d.n_star.to_string());
    if let Some(p) = d.curve.iter().find(|p| p.n == d.n_star) {
        r.row("objective", num(p.objective));
        r.row("std_err", num(doc.tau * p.std_err));
    }
    r.row("method", "monte_carlo");
    r.artifacts.push(("design_n".into(), d.to_csv()));
    Ok(())
}

fn value_of_information(sc: &Scenario, seed: u64, r: &mut Report) -> Result<()> {
    let (doc, base, ext) = sc.voi()?;
    let est: Estimate = match (&doc.base_values_path, &doc.extended_values_path) {
        (Some(b), Some(e)) => {
            r.row("source", "paired value files");
            voi_paired(&read_values(&sc.resolve(b))?, &read_values(&sc.resolve(e))?)?
        }
        (None, None) => {
            let model = sc.joint_model()?;
            r.row("source", "joint model");
            match doc.value.as_str() {
                "neg_posterior_variance" => voi(model.as_ref(), &base, &ext, neg_posterior_variance, doc.n_mc, seed)?,
                "neg_squared_error" => voi(model.as_ref(), &base, &ext, neg_squared_error, doc.n_mc, seed)?,
                other => return Err(Error::Invalid(format!("unknown value function `{other}`"))),
            }
        }
        _ => {
            return Err(Error::Invalid(
                "[voi] needs both `base_values_path` and `extended_values_path`, or neither".into(),
            ))
        }
    };
    r.row("value", doc.value.clone());
    r.row("voi", num(est.mean));
    r.row("std_err", num(est.std_err));
    r.row("replicates", est.replicates.to_string());
    r.row("method", "monte_carlo");
    r.artifacts.push((
        "voi".into(),
        csv_of(
            &["voi", "std_err", "replicates", "seed", "value"],
            &[vec![
                num(est.mean),
                num(est.std_err),
                est.replicates.to_string(),
                seed.to_string(),
                doc.value.clone(),
            ]],
        )?,
    ));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(args.iter().map(|s| s.to_string()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn calibrate_flags() {
        let (code, out, _) = run_str(&["eplkit", "calibrate", "--prevention-share", "0.03", "--sigma", "1", "--paper-exact"]);
        assert_eq!(code, 0);
        assert!(out.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["psi", "-3.76"]), "{out}");
        assert!(out.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["q", "0.97"]), "{out}");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run_str(&["eplkit", "frobnicate"]).0, 2);
        assert_eq!(run_str(&["eplkit", "predict"]).0, 2);
        assert_eq!(run_str(&["eplkit", "calibrate"]).0, 2);
        assert_eq!(run_str(&["eplkit", "--help"]).0, 0);
        let (code, _, err) = run_str(&["eplkit", "predict", "--scenario", "/nonexistent/x.toml"]);
        assert_eq!(code, 2);
        assert!(err.contains("/nonexistent/x.toml"));
    }

    #[test]
    fn csv_quoting() {
        let s = csv_of(&["a", "b"], &[vec!["1".into(), "x, y".into()]]).unwrap();
        assert_eq!(s, "a,b\n1,\"x, y\"\n");
    }
}
