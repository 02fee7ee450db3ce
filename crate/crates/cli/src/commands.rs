use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use betalink::diagnostics::{
    aic, cook_distance, fit_null_model, hat_matrix_diag, marginal_impact, mse_fit, r2_generalized, residual_ordinary,
    residual_weighted2, sic, simulated_envelope,
};
use betalink::inference::{link_adequacy_test, reset_test, z_test};
use betalink::simulate::{run_mc_study, McScenario};
use betalink::{fit, Error, FitTrace, FittedModel, ParamId, ParamVector, ResponseVector, TestKind};

use crate::config::{ModelConfig, ScenarioFile};
use crate::data::{derived_terms, load_csv};
use crate::output::{fmt_num, Table};

const KINDS: [TestKind; 4] = [TestKind::LikelihoodRatio, TestKind::Wald, TestKind::Score, TestKind::Gradient];

fn prepare_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

fn load_model(path: &Path) -> Result<FittedModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))
}

struct Inputs {
    config: ModelConfig,
    y: ResponseVector,
    mean_names: Vec<String>,
    dispersion_names: Vec<String>,
}

fn load_inputs(config: &Path, data: &Path) -> Result<(Inputs, betalink::ModelSpec)> {
    let config = ModelConfig::load(config)?;
    let dataset = load_csv(data, &config)?;
    let spec = dataset.spec(&config)?;
    let inputs = Inputs {
        y: dataset.response()?,
        mean_names: config.mean.design_names(),
        dispersion_names: config.dispersion.design_names(),
        config,
    };
    Ok((inputs, spec))
}

/// Loads config, data and a saved fit, checking the fit belongs to them.
fn load_fitted(config: &Path, data: &Path, model: &Path) -> Result<(Inputs, FittedModel)> {
    let (inputs, spec) = load_inputs(config, data)?;
    let fitted = load_model(model)?;
    if fitted.spec != spec {
        bail!(
            "model {} was not fitted to this data and config (designs or links differ)",
            model.display()
        );
    }
    Ok((inputs, fitted))
}

fn write_trace(trace: &FitTrace, path: &Path) -> Result<()> {
    let mut t = Table::new(["iteration", "loglik", "max_abs_gradient"]);
    t.comment("lambda1_start", fmt_num(trace.lambda1_start))
        .comment("lambda2_start", fmt_num(trace.lambda2_start))
        .comment("converged", trace.converged);
    for e in &trace.entries {
        t.push(vec![e.iteration.to_string(), fmt_num(e.loglik), fmt_num(e.max_abs_gradient)]);
    }
    t.write(path)
}

fn param_label(inputs: &Inputs, id: ParamId) -> (&'static str, String) {
    match id {
        ParamId::Beta(i) => ("mean", inputs.mean_names[i].clone()),
        ParamId::Gamma(j) => ("dispersion", inputs.dispersion_names[j].clone()),
        ParamId::Lambda1 => ("mean", "lambda1".into()),
        ParamId::Lambda2 => ("dispersion", "lambda2".into()),
    }
}

/// Fits the model and writes `parameters.csv`, `summary.csv`,
/// `observations.csv` and `model.json`. A non-converged fit writes
/// `trace.csv` and returns the estimator's error.
pub fn cmd_fit(config: &Path, data: &Path, out: &Path) -> Result<FittedModel> {
    let (inputs, spec) = load_inputs(config, data)?;
    prepare_out_dir(out)?;
    let options = &inputs.config.fit;
    let fitted = match fit(&spec, &inputs.y, options) {
        Ok(f) => f,
        Err(Error::NonConvergence { trace }) => {
            let path = out.join("trace.csv");
            write_trace(&trace, &path)?;
            return Err(anyhow!(Error::NonConvergence { trace })
                .context(format!("fit did not converge; optimizer trace written to {}", path.display())));
        }
        Err(e) => return Err(e.into()),
    };
    let y = &inputs.y;

    let mut params = Table::new(["submodel", "parameter", "estimate", "std_error", "z", "p_value"]);
    let se = fitted.std_errors();
    // Each λ row follows its own submodel's coefficients.
    let mut order: Vec<(usize, ParamId)> = fitted.param_ids().into_iter().enumerate().collect();
    order.sort_by_key(|(_, id)| matches!(id, ParamId::Gamma(_) | ParamId::Lambda2));
    for (k, id) in order {
        let (submodel, name) = param_label(&inputs, id);
        let (z, p) = z_test(&fitted, id, 0.0).map_or((f64::NAN, f64::NAN), |t| (t.statistic, t.p_value));
        params.push(vec![
            submodel.into(),
            name,
            fmt_num(fitted.theta_hat.get(id)),
            fmt_num(se[k]),
            fmt_num(z),
            fmt_num(p),
        ]);
    }
    params.write(&out.join("parameters.csv"))?;

    let r2 = match fit_null_model(y, options).and_then(|null| r2_generalized(&fitted, &null)) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("warning: generalized R² unavailable: {e}");
            f64::NAN
        }
    };
    let mut summary = Table::new(["quantity", "value"]);
    let mut row = |k: &str, v: String| summary.push(vec![k.into(), v]);
    row("n", fitted.n().to_string());
    row("parameters", fitted.n_estimated().to_string());
    row("mean_link", spec.mean_link().name().into());
    row("dispersion_link", spec.dispersion_link().name().into());
    row("loglik", fmt_num(fitted.loglik));
    row("aic", fmt_num(aic(&fitted)));
    row("sic", fmt_num(sic(&fitted)));
    row("r2_g", fmt_num(r2));
    row("mse_fit", fmt_num(mse_fit(&fitted, y)?));
    row("mean_mu", fmt_num(fitted.surfaces.mu.mean()));
    row("mean_y", fmt_num(y.mean()));
    row("converged", fitted.converged.to_string());
    row("iterations", fitted.iterations.to_string());
    row("lambda1_start", fmt_num(fitted.start_used.lambda1));
    row("lambda2_start", fmt_num(fitted.start_used.lambda2));
    row("fisher_singular", fitted.fisher_singular.to_string());
    summary.write(&out.join("summary.csv"))?;

    let s = &fitted.surfaces;
    let r = residual_ordinary(&fitted, y)?;
    let r_pp = residual_weighted2(&fitted, y)?;
    let h = hat_matrix_diag(&fitted)?;
    let cook = cook_distance(&fitted, y)?;
    let mut obs = Table::new(["y", "mu", "sigma", "eta1", "eta2", "r", "r_pp", "h", "cook"]);
    for t in 0..fitted.n() {
        obs.push_numbers(&[y.values()[t], s.mu[t], s.sigma[t], s.eta1[t], s.eta2[t], r[t], r_pp[t], h[t], cook[t]]);
    }
    obs.write(&out.join("observations.csv"))?;

    let json = serde_json::to_string_pretty(&fitted)?;
    std::fs::write(out.join("model.json"), json).context("writing model.json")?;
    Ok(fitted)
}

/// Plot data for the four diagnostic panels plus specification tests.
pub fn cmd_diagnose(
    config: &Path,
    data: &Path,
    model: &Path,
    k: usize,
    alpha: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let (inputs, fitted) = load_fitted(config, data, model)?;
    prepare_out_dir(out)?;
    let y = &inputs.y;
    let options = &inputs.config.fit;

    let r_pp = residual_weighted2(&fitted, y)?;
    let mut residuals = Table::new(["index", "r_pp"]);
    for (t, v) in r_pp.iter().enumerate() {
        residuals.push(vec![(t + 1).to_string(), fmt_num(*v)]);
    }
    residuals.write(&out.join("residuals.csv"))?;

    let mut fo = Table::new(["index", "observed", "fitted"]);
    for t in 0..fitted.n() {
        fo.push(vec![(t + 1).to_string(), fmt_num(y.values()[t]), fmt_num(fitted.surfaces.mu[t])]);
    }
    fo.write(&out.join("fitted_observed.csv"))?;

    let cook = cook_distance(&fitted, y)?;
    let mut ct = Table::new(["index", "cook"]);
    for (t, v) in cook.iter().enumerate() {
        ct.push(vec![(t + 1).to_string(), fmt_num(*v)]);
    }
    ct.write(&out.join("cook.csv"))?;

    let band = simulated_envelope(&fitted, y, k, alpha, seed, options)?;
    let mut env = Table::new(["score", "lower", "mean", "upper", "observed"]);
    env.comment("outside_fraction", fmt_num(band.outside_fraction))
        .comment("k", band.k)
        .comment("alpha", fmt_num(band.alpha))
        .comment("seed", seed);
    for t in 0..band.residuals.len() {
        env.push_numbers(&[band.scores[t], band.lower[t], band.mean[t], band.upper[t], band.residuals[t]]);
    }
    env.write(&out.join("envelope.csv"))?;

    let mut tests = Table::new(["test", "kind", "statistic", "dof", "p_value"]);
    let mut record = |name: &str, kind: TestKind, result: betalink::Result<betalink::TestResult>| match result {
        Ok(t) => tests.push(vec![
            name.into(),
            kind.to_string(),
            fmt_num(t.statistic),
            t.dof.to_string(),
            fmt_num(t.p_value),
        ]),
        Err(e) => {
            eprintln!("warning: {name} ({kind}) unavailable: {e}");
            tests.push(vec![name.into(), kind.to_string(), "NaN".into(), "2".into(), "NaN".into()]);
        }
    };
    for kind in KINDS {
        record("reset", kind, reset_test(&fitted, y, kind, options));
    }
    if fitted.spec.lambda1_free() && fitted.spec.lambda2_free() {
        for kind in KINDS {
            record(
                "link_adequacy",
                kind,
                link_adequacy_test(&fitted, y, inputs.config.link_null, kind, options),
            );
        }
    }
    tests.write(&out.join("tests.csv"))?;
    Ok(())
}

/// One summary CSV per scenario, named after it. Every scenario is run; the
/// first study-level failure is returned afterwards.
pub fn cmd_simulate(scenarios: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let file = ScenarioFile::load(scenarios)?;
    prepare_out_dir(out)?;
    let mut first_error = None;
    for cfg in &file.scenarios {
        let theta = ParamVector::new(&cfg.beta, &cfg.gamma, cfg.lambda1, cfg.lambda2);
        let seed = seed.unwrap_or(cfg.seed);
        let scenario = McScenario::new(cfg.mean_link, cfg.dispersion_link, theta, cfg.n, cfg.replications, seed)
            .with_context(|| format!("scenario '{}'", cfg.name))?;
        let summary = match run_mc_study(&scenario, &cfg.fit) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("scenario '{}': {e}", cfg.name);
                first_error.get_or_insert(anyhow!(e).context(format!("scenario '{}'", cfg.name)));
                continue;
            }
        };
        let mut header = vec!["statistic".to_string()];
        header.extend(summary.names.iter().cloned());
        let mut t = Table::new(header);
        t.comment("scenario", &cfg.name)
            .comment("n", cfg.n)
            .comment("replications", cfg.replications)
            .comment("seed", seed)
            .comment("converged", summary.converged)
            .comment("non_converged", summary.failed);
        if summary.sd_undefined() {
            t.comment("sd_undefined", "fewer than two converged replications");
        }
        for (label, values) in [
            ("truth", &summary.truth),
            ("mean", &summary.mean),
            ("bias", &summary.bias),
            ("RB", &summary.relative_bias),
            ("SD", &summary.sd),
            ("MSE", &summary.mse),
        ] {
            let mut row = vec![label.to_string()];
            row.extend(values.iter().map(|&v| fmt_num(v)));
            t.push(row);
        }
        t.write(&out.join(format!("{}.csv", cfg.name)))?;
    }
    first_error.map_or(Ok(()), Err)
}

/// Per-observation `∂μ_t/∂x_tj` for one mean covariate.
pub fn cmd_marginal(config: &Path, data: &Path, model: &Path, covariate: &str, out: &Path) -> Result<()> {
    let (inputs, fitted) = load_fitted(config, data, model)?;
    let mean = &inputs.config.mean;
    if !mean.columns.iter().any(|c| c == covariate) {
        bail!("'{covariate}' is not a column of the mean submodel");
    }
    let j = inputs
        .mean_names
        .iter()
        .position(|n| n == covariate)
        .expect("listed column is in the design");
    prepare_out_dir(out)?;
    let impact = marginal_impact(&fitted, j, &derived_terms(mean))?;
    let x = fitted.spec.x();
    let mut t = Table::new(["x", "impact", "mu"]);
    t.comment("covariate", covariate);
    for row in 0..fitted.n() {
        t.push_numbers(&[x[(row, j)], impact[row], fitted.surfaces.mu[row]]);
    }
    t.write(&out.join(format!("marginal_{covariate}.csv")))
}

/// Exit code for an error: 3 when estimation failed to converge, 2 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let non_convergence = err.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<Error>(),
            Some(Error::NonConvergence { .. } | Error::RestrictedFit { .. } | Error::StudyFailed { .. })
        )
    });
    if non_convergence {
        3
    } else {
        2
    }
}
