//! `bva`: bias-variance diagnostics for prediction bundles.
//!
//! Every subcommand writes a schema-versioned JSON report (or, for the
//! generators, a bundle directory) to `--out`, and exits with the stable
//! code of the first error class it hits.

mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use bva_core::alignment::{self, FitOptions, SampleFilter, XConvention};
use bva_core::calibration::{self, GeneratorConfig, GroupingScheme, Reference, BOOTSTRAP_RESAMPLES};
use bva_core::ensemble::{self, Loss, PROB_FLOOR};
use bva_core::io::{self, records, svg};
use bva_core::neural_collapse::{self as nc, NcParams};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use report::Report;

#[derive(Parser)]
#[command(name = "bva", version, about = "Bias-variance diagnostics for ensemble predictions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a bundle and summarise its shape and metadata.
    Validate(ValidateArgs),
    /// Per-sample bias, variance and risk records.
    Decompose(DecomposeArgs),
    /// Log-log alignment fit of variance on bias.
    Regress(RegressArgs),
    /// Calibration errors and the bias-variance gap bound.
    Calibrate(CalibrateArgs),
    /// Disagreement against test error for one-hot ensembles.
    Gde(GdeArgs),
    /// Write a Dirichlet-calibrated synthetic bundle.
    GenCalibrated(GenCalibratedArgs),
    /// Neural-collapse model tools.
    #[command(subcommand)]
    Nc(NcCommand),
}

#[derive(Subcommand)]
enum NcCommand {
    /// Write a synthetic neural-collapse bundle.
    Simulate(NcSimulateArgs),
    /// Compare closed forms with quadrature and Monte Carlo.
    Verify(NcVerifyArgs),
}

#[derive(Args, Serialize)]
struct ValidateArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum LossArg {
    Mse,
    Kl,
}

#[derive(Args, Serialize)]
struct DecomposeArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, value_enum, default_value = "mse")]
    loss: LossArg,
    /// Records file, `.csv` or JSON lines.
    #[arg(long)]
    out: PathBuf,
    /// Summary report path; stdout when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FilterArg {
    Correct,
    All,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum XArg {
    #[value(name = "log-bias2")]
    #[serde(rename = "log-bias2")]
    LogBias2,
    LogBias,
}

#[derive(Args, Serialize)]
struct RegressArgs {
    /// Records written by `decompose`.
    #[arg(long)]
    decomp: PathBuf,
    #[arg(long, value_enum, default_value = "correct")]
    filter: FilterArg,
    #[arg(long, value_enum, default_value = "log-bias2")]
    x: XArg,
    /// Samples with bias² or variance below this are excluded.
    #[arg(long, default_value = "2.2250738585072014e-308")]
    floor: f64,
    /// Two-column Q-Q table (theoretical, sample).
    #[arg(long)]
    qq: Option<PathBuf>,
    /// Scatter plot of the fitted points.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// fit.json path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SchemeArg {
    Bin,
    Preimage,
    Sample,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ReferenceArg {
    Labels,
    Truth,
    MeanFunction,
}

#[derive(Args, Serialize)]
struct CalibrateArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value_t = 15)]
    bins: usize,
    #[arg(long, value_enum, default_value = "bin")]
    scheme: SchemeArg,
    /// Defaults to truth for the sample scheme and labels otherwise.
    #[arg(long, value_enum)]
    reference: Option<ReferenceArg>,
    /// Bootstrap resamples for the gap standard error; 0 disables.
    #[arg(long, default_value_t = BOOTSTRAP_RESAMPLES)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct GdeArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct GenCalibratedArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    samples: usize,
    #[arg(long)]
    models: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 10.0)]
    kappa: f64,
    #[arg(long)]
    one_hot: bool,
    #[arg(long)]
    seed: u64,
    /// Bundle directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct NcSimulateArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    s: f64,
    #[arg(long)]
    samples: usize,
    #[arg(long)]
    models: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long)]
    seed: u64,
    /// Bundle directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct NcVerifyArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    s: f64,
    #[arg(long, default_value_t = 1_000_000)]
    draws: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn validate(a: &ValidateArgs) -> Result<()> {
    let b = io::read_bundle(&a.bundle)?;
    let result = json!({
        "num_models": b.num_models(),
        "num_samples": b.num_samples(),
        "num_classes": b.num_classes(),
        "has_truth": b.true_conditional().is_some(),
        "has_logits": b.logits().is_some(),
        "metadata": b.metadata(),
    });
    Report::new("validate", a, result).emit(a.out.as_deref())
}

fn decompose(a: &DecomposeArgs) -> Result<()> {
    let b = io::read_bundle(&a.bundle)?;
    let loss = match a.loss {
        LossArg::Mse => Loss::Mse,
        LossArg::Kl => Loss::Kl,
    };
    let d = ensemble::decompose(&b, loss)?;
    records::write_records_file(&a.out, &d)?;
    let mean = |f: fn(&ensemble::SampleDecomposition) -> f64| d.iter().map(f).sum::<f64>() / d.len() as f64;
    let mut result = json!({
        "records": a.out,
        "num_samples": d.len(),
        "accuracy": mean(|x| if x.correct { 1.0 } else { 0.0 }),
        "mean_bias_sq": mean(|x| x.bias_sq),
        "mean_variance": mean(|x| x.variance),
        "mean_risk": mean(|x| x.risk),
        "mean_uncertainty": mean(|x| x.uncertainty),
    });
    if let LossArg::Kl = a.loss {
        result["kl_floor"] = json!(PROB_FLOOR);
        result["mean_kl_bias"] = json!(mean(|x| x.kl_bias.unwrap_or(f64::NAN)));
        result["mean_kl_variance"] = json!(mean(|x| x.kl_variance.unwrap_or(f64::NAN)));
    }
    Report::new("decompose", a, result).emit(a.summary.as_deref())
}

fn regress(a: &RegressArgs) -> Result<()> {
    let d = records::read_records_file(&a.decomp)?;
    let opts = FitOptions {
        filter: match a.filter {
            FilterArg::Correct => SampleFilter::CorrectOnly,
            FilterArg::All => SampleFilter::All,
        },
        x_convention: match a.x {
            XArg::LogBias2 => XConvention::LogBiasSquared,
            XArg::LogBias => XConvention::LogBias,
        },
        floor: a.floor,
    };
    let fit = alignment::fit_loglog(&d, &opts)?;
    let lin = alignment::linear_constants(&fit)?;
    let shape = alignment::residual_shape(&fit.residuals).ok();
    if let Some(path) = &a.qq {
        let pairs = alignment::qq_residuals(&fit)?;
        report::write_qq(path, &pairs)?;
    }
    if let Some(path) = &a.svg {
        let points: Vec<svg::ScatterPoint> = fit
            .points
            .iter()
            .map(|p| svg::ScatterPoint {
                x: p.x,
                y: p.y,
                correct: p.correct,
            })
            .collect();
        // unit alignment y = x + E in the chosen convention
        let (slope, x_label) = match opts.x_convention {
            XConvention::LogBiasSquared => (1.0, "log bias²"),
            XConvention::LogBias => (2.0, "log bias"),
        };
        let text = svg::scatter_svg(&points, Some((slope, fit.intercept)), x_label, "log variance")?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let result = json!({
        "slope": fit.slope,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
        "n_used": fit.n_used,
        "n_excluded": fit.n_excluded,
        "n_below_floor": fit.n_below_floor,
        "x_convention": fit.x_convention,
        "c_hat": lin.c_hat,
        "d_hat": lin.d_hat,
        "residual_skewness": shape.map(|s| s.0),
        "residual_excess_kurtosis": shape.map(|s| s.1),
    });
    Report::new("regress", a, result).emit(a.out.as_deref())
}

fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let b = io::read_bundle(&a.bundle)?;
    let scheme = match a.scheme {
        SchemeArg::Bin => GroupingScheme::Bin { num_bins: a.bins },
        SchemeArg::Preimage => GroupingScheme::Preimage,
        SchemeArg::Sample => GroupingScheme::Sample,
    };
    let reference = match a.reference {
        None => Reference::default_for(scheme),
        Some(ReferenceArg::Labels) => Reference::Labels,
        Some(ReferenceArg::Truth) => Reference::Truth,
        Some(ReferenceArg::MeanFunction) => Reference::MeanFunction,
    };
    let r = calibration::calibration_report(&b, scheme, reference)?;
    let se = match a.bootstrap {
        0 => None,
        n => Some(calibration::gap_bootstrap_se(&b, scheme, reference, n, a.seed)?),
    };
    let result = json!({
        "resolved_scheme": scheme,
        "resolved_reference": reference,
        "bvg_grouping": "confidence group of the predicted class",
        "ece": r.ece,
        "cce": r.cce,
        "cwce": r.cwce,
        "bvg_mean": r.bvg_mean,
        "uncertainty_mean": r.uncertainty_mean,
        "lhs_gap": r.lhs_gap,
        "rhs_bound": r.rhs_bound,
        "bootstrap_se": se,
        "confidence_groups": r.confidence_groups,
    });
    Report::new("calibrate", a, result).emit(a.out.as_deref())
}

fn gde(a: &GdeArgs) -> Result<()> {
    let b = io::read_bundle(&a.bundle)?;
    let r = calibration::gde_metrics(&b)?;
    Report::new("gde", a, serde_json::to_value(r)?).emit(a.out.as_deref())
}

fn gen_calibrated(a: &GenCalibratedArgs) -> Result<()> {
    let cfg = GeneratorConfig {
        num_classes: a.classes,
        num_samples: a.samples,
        num_models: a.models,
        alpha: a.alpha,
        kappa: a.kappa,
        one_hot: a.one_hot,
        seed: a.seed,
    };
    let b = calibration::generate_calibrated_ensemble(&cfg)?;
    io::write_bundle(&b, &a.out)?;
    Report::new("gen-calibrated", a, json!({ "bundle": a.out, "metadata": b.metadata() })).emit(None)
}

fn nc_params(classes: usize, s: f64, mu: f64, beta: f64, seed: u64) -> NcParams {
    NcParams {
        mu,
        beta,
        ..NcParams::new(classes, s, seed)
    }
}

fn nc_simulate(a: &NcSimulateArgs) -> Result<()> {
    let p = nc_params(a.classes, a.s, a.mu, a.beta, a.seed);
    let b = nc::sample_nc_ensemble(&p, a.samples, a.models)?;
    io::write_bundle(&b, &a.out)?;
    Report::new("nc-simulate", a, json!({ "bundle": a.out, "metadata": b.metadata() })).emit(None)
}

fn nc_verify(a: &NcVerifyArgs) -> Result<()> {
    let p = nc_params(a.classes, a.s, a.mu, a.beta, a.seed);
    let cf = nc::closed_form_bv(&p)?;
    let quad = nc::phi_quadrature(cf.k_prime, cf.c)?;
    let mc = nc::mc_oracle_bv(&p, a.draws)?;
    let t = mc.true_class();
    let binary = if a.classes == 2 {
        Some(nc::closed_form_bv_k2(a.s)?)
    } else {
        None
    };
    let result = json!({
        "closed_form": cf,
        "phi_quadrature": quad,
        "phi_abs_diff": (cf.phi - quad).abs(),
        "binary_form": binary,
        "monte_carlo": mc.entries,
        "z_mean": (t.mean - cf.mean_true_class) / t.se_mean,
        "z_bias": (t.bias - cf.bias_true_class) / t.se_mean,
        "z_std": (t.std - cf.std_true_class) / t.se_std,
    });
    Report::new("nc-verify", a, result).emit(a.out.as_deref())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate(a) => validate(&a).context("validate"),
        Command::Decompose(a) => decompose(&a).context("decompose"),
        Command::Regress(a) => regress(&a).context("regress"),
        Command::Calibrate(a) => calibrate(&a).context("calibrate"),
        Command::Gde(a) => gde(&a).context("gde"),
        Command::GenCalibrated(a) => gen_calibrated(&a).context("gen-calibrated"),
        Command::Nc(NcCommand::Simulate(a)) => nc_simulate(&a).context("nc simulate"),
        Command::Nc(NcCommand::Verify(a)) => nc_verify(&a).context("nc verify"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<bva_core::Error>().map_or(1, |e| e.exit_code());
            ExitCode::from(code as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn floor_flag_defaults_to_the_library_floor() {
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from(["bva", "regress", "--decomp", "d.jsonl"]).unwrap();
        match cli.command {
            Command::Regress(a) => assert_eq!(a.floor, alignment::DEFAULT_EXCLUSION_FLOOR),
            _ => unreachable!(),
        }
    }
}
