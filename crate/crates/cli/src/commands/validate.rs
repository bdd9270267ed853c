use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Subcommand;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use flare_core::denoiser::{DenoiserModel, ModelConfig};
use flare_core::diffusion::{NoiseRealization, BETA_MAX, BETA_MIN};
use flare_core::eval::{
    cross_term_study, lemma1_check, prop1_mc_check, sketch_convergence_study, synthetic_sketch_instance, unroll_check,
    CrossTermReport, DeviationSummary, Prop1Check, SketchStudyReport,
};
use flare_core::laplace::{DenseCovariance, PosteriorKind, PosteriorOperator};
use flare_core::laplace::assemble_ggn;
use flare_core::linalg::{IndexSet, Matrix};
use flare_core::rng::{derive_seed, rng_from_seed, sub_rng};

use super::{load_checkpoint, load_data, progress, write_manifest, Context, FileDigest};
use crate::config::{stream, Resolved};
use crate::error::Outcome;
use crate::io::{write_json, write_rows, write_text};
use crate::plot::{loglog, Series};

pub const UNROLL_TOLERANCE: f64 = 1e-10;
pub const LEMMA1_TOLERANCE: f64 = 1e-8;
pub const SLOPE_TARGET: f64 = -0.5;
pub const SLOPE_TOLERANCE: f64 = 0.2;
pub const FULL_SUBNET_TOLERANCE: f64 = 1e-10;
pub const PROP1_LINEAR_TOLERANCE: f64 = 0.05;
pub const PROP1_NONLINEAR_TOLERANCE: f64 = 0.10;
/// Prior variance of the head-only check, where `ε` is linear in `δθ`.
pub const PROP1_HEAD_VARIANCE: f64 = 0.04;
/// Covariance scale of the all-parameter check.
pub const PROP1_SCALE: f64 = 1e-4;
/// In percent.
pub const CROSS_TERM_THRESHOLD: f64 = 0.01;
pub const CROSS_TERM_ALPHA: f64 = 1e-4;

#[derive(Debug, Clone, Subcommand)]
pub enum Study {
    /// Recursion against the unrolled sum on random instances.
    Unroll,
    /// Pseudoinverse quadratic form against the least-squares solution.
    Lemma1,
    /// Random-subnetwork trace error against subnetwork size.
    Sketch,
    /// Monte Carlo one-step covariance against its linearization.
    Prop1 {
        /// Uses the checkpoint's EMA parameters instead of a small random
        /// model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Size of the parameter cross-covariance term along shared paths.
    CrossTerm {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Training data for the curvature; regenerated from the config
        /// when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Dumps the noise schedule and checks its invariants.
    Schedule,
}

impl Study {
    pub fn name(&self) -> &'static str {
        match self {
            Study::Unroll => "unroll",
            Study::Lemma1 => "lemma1",
            Study::Sketch => "sketch",
            Study::Prop1 { .. } => "prop1",
            Study::CrossTerm { .. } => "cross_term",
            Study::Schedule => "schedule",
        }
    }
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    study: &'a str,
    pass: bool,
    criteria: Vec<String>,
    result: T,
}

struct Written {
    pass: bool,
    summary: String,
    outputs: Vec<String>,
    inputs: BTreeMap<&'static str, FileDigest>,
}

pub fn validate(ctx: &Context, study: &Study) -> anyhow::Result<Outcome> {
    let r = ctx.config.resolve(None)?;
    let name = study.name();
    let mut rng = sub_rng(r.sub_seed(stream::STUDY), 0);
    let report_file = format!("validate_{name}.json");
    let csv_file = format!("validate_{name}.csv");
    let report = |pass: bool, criteria: Vec<String>, result: &dyn erased::Json| -> anyhow::Result<()> {
        write_json(&ctx.path(&report_file), &Report { study: name, pass, criteria, result: erased::Wrap(result) })
    };
    let w = match study {
        Study::Unroll | Study::Lemma1 => {
            let (s, tol): (DeviationSummary, f64) = if matches!(study, Study::Unroll) {
                (unroll_check(r.eval.trials, &mut rng)?, UNROLL_TOLERANCE)
            } else {
                (lemma1_check(r.eval.trials, &mut rng)?, LEMMA1_TOLERANCE)
            };
            let pass = s.max_relative_deviation < tol;
            report(pass, vec![format!("max relative deviation < {tol:e}")], &s)?;
            write_rows(
                &ctx.path(&csv_file),
                &["trial", "relative_deviation"],
                s.deviations.iter().enumerate().map(|(i, v)| vec![i.to_string(), v.to_string()]),
            )?;
            Written {
                pass,
                summary: format!("max relative deviation {:.3e} over {} trials (tolerance {tol:e})", s.max_relative_deviation, s.trials),
                outputs: vec![report_file.clone(), csv_file.clone()],
                inputs: BTreeMap::new(),
            }
        }
        Study::Sketch => sketch(ctx, &r, &mut rng, &report, &csv_file, &report_file)?,
        Study::Prop1 { checkpoint } => prop1(ctx, &r, checkpoint.as_deref(), &mut rng, &report, &report_file, &csv_file)?,
        Study::CrossTerm { checkpoint, data } => {
            cross_term(ctx, checkpoint, data.as_deref(), &mut rng, &report, &report_file, &csv_file)?
        }
        Study::Schedule => schedule_study(ctx, &r, &report, &report_file)?,
    };
    let outputs: Vec<&str> = w.outputs.iter().map(String::as_str).collect();
    write_manifest(ctx, &format!("validate_{name}_manifest.json"), &format!("validate {name}"), &r, w.inputs, &outputs, ())?;
    println!("validate {name}: {}: {}", w.summary, if w.pass { "pass" } else { "FAIL" });
    Ok(Outcome::from_pass(w.pass))
}

/// Lets the per-study reports share one writer without boxing generics.
mod erased {
    use serde::Serialize;

    pub trait Json {
        fn value(&self) -> serde_json::Result<serde_json::Value>;
    }

    impl<T: Serialize> Json for T {
        fn value(&self) -> serde_json::Result<serde_json::Value> {
            serde_json::to_value(self)
        }
    }

    pub struct Wrap<'a>(pub &'a dyn Json);

    impl Serialize for Wrap<'_> {
        fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            self.0.value().map_err(serde::ser::Error::custom)?.serialize(s)
        }
    }
}

type ReportFn<'a> = dyn Fn(bool, Vec<String>, &dyn erased::Json) -> anyhow::Result<()> + 'a;

fn sketch(
    ctx: &Context,
    r: &Resolved,
    rng: &mut flare_core::rng::Rng,
    report: &ReportFn<'_>,
    csv_file: &str,
    report_file: &str,
) -> anyhow::Result<Written> {
    let spec = r.eval.sketch;
    progress(format!(
        "sketch study: p = {}, nd = {}, d = {}, grid {:?}, {} trials",
        spec.p, spec.nd, spec.d, r.eval.m_grid, r.eval.sketch_trials
    ));
    let (j_pop, j_t) = synthetic_sketch_instance(&spec, rng)?;
    let s: SketchStudyReport = sketch_convergence_study(&j_pop, &j_t, &r.eval.m_grid, r.eval.sketch_trials, rng)?;
    let slope_ok = s.slope.is_some_and(|v| (v - SLOPE_TARGET).abs() <= SLOPE_TOLERANCE);
    let pass = s.monotone && slope_ok && s.error_at_full < FULL_SUBNET_TOLERANCE;
    report(
        pass,
        vec![
            "mean error decreases monotonically in m".into(),
            format!("log-log slope within {SLOPE_TARGET} ± {SLOPE_TOLERANCE}"),
            format!("error at m = p below {FULL_SUBNET_TOLERANCE:e}"),
        ],
        &s,
    )?;
    let rows = s.m_grid.iter().zip(&s.trial_errors).flat_map(|(m, errs)| {
        errs.iter().enumerate().map(move |(k, e)| vec![m.to_string(), k.to_string(), e.to_string()])
    });
    write_rows(&ctx.path(csv_file), &["m", "trial", "relative_error"], rows)?;
    let ms: Vec<f64> = s.m_grid.iter().map(|&m| m as f64).collect();
    let reference: Vec<f64> = ms.iter().map(|m| s.mean_errors[0] * (ms[0] / m).sqrt()).collect();
    let svg = loglog(
        "random-subnetwork trace error",
        "subnetwork size m",
        "mean relative trace error",
        &[Series { label: "observed", x: &ms, y: &s.mean_errors }, Series { label: "m^-1/2", x: &ms, y: &reference }],
    );
    write_text(&ctx.path("validate_sketch.svg"), &svg)?;
    Ok(Written {
        pass,
        summary: format!(
            "slope {}, monotone {}, error at m = p {:.3e}",
            s.slope.map_or("n/a".into(), |v| format!("{v:.3}")),
            s.monotone,
            s.error_at_full
        ),
        outputs: vec![report_file.into(), csv_file.into(), "validate_sketch.svg".into()],
        inputs: BTreeMap::new(),
    })
}

#[derive(Serialize)]
struct Prop1Result {
    t: usize,
    x_t: Vec<f64>,
    param_count: usize,
    linear_head: Prop1Check,
    all_parameters: Prop1Check,
}

fn diagonal(index_set: IndexSet, variance: f64) -> anyhow::Result<DenseCovariance> {
    let n = index_set.len();
    Ok(DenseCovariance::new(index_set, Matrix::from_fn(n, n, |i, j| if i == j { variance } else { 0.0 }))?)
}

fn prop1(
    ctx: &Context,
    r: &Resolved,
    checkpoint: Option<&Path>,
    rng: &mut flare_core::rng::Rng,
    report: &ReportFn<'_>,
    report_file: &str,
    csv_file: &str,
) -> anyhow::Result<Written> {
    let mut inputs = BTreeMap::new();
    let (model, schedule) = match checkpoint {
        Some(path) => {
            let (ck, _, schedule) = load_checkpoint(ctx, path)?;
            inputs.insert("checkpoint", FileDigest::of(path)?);
            (ck.ema, schedule)
        }
        None => {
            let cfg = ModelConfig {
                data_dim: r.model.data_dim,
                hidden: 8,
                n_blocks: 1,
                time_embed_dim: 4,
                total_steps: r.schedule_steps,
            };
            (DenoiserModel::init(cfg, r.sub_seed(stream::INIT))?, super::schedule(r)?)
        }
    };
    let d = model.config().data_dim;
    let t = (schedule.steps() / 2).max(1);
    let x_t: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let draws = r.eval.prop1_draws;
    progress(format!("prop1: p = {}, S = {draws}, t = {t}", model.param_count()));
    let head = diagonal(model.last_layer_indices(), PROP1_HEAD_VARIANCE)?;
    let linear_head = prop1_mc_check(&model, &head, &schedule, &x_t, t, draws, rng)?;
    let full = diagonal(IndexSet::full(model.param_count())?, PROP1_SCALE)?;
    let all_parameters = prop1_mc_check(&model, &full, &schedule, &x_t, t, draws, rng)?;
    let pass = linear_head.relative_error < PROP1_LINEAR_TOLERANCE && all_parameters.relative_error < PROP1_NONLINEAR_TOLERANCE;
    let result = Prop1Result { t, x_t, param_count: model.param_count(), linear_head, all_parameters };
    report(
        pass,
        vec![
            format!("head-only posterior (variance {PROP1_HEAD_VARIANCE}): relative trace error < {PROP1_LINEAR_TOLERANCE}"),
            format!("all parameters (variance {PROP1_SCALE:e}): relative trace error < {PROP1_NONLINEAR_TOLERANCE}"),
        ],
        &result,
    )?;
    write_rows(
        &ctx.path(csv_file),
        &["check", "draws", "mc_trace", "analytic_trace", "relative_error"],
        [("linear_head", &result.linear_head), ("all_parameters", &result.all_parameters)].into_iter().map(|(n, c)| {
            vec![n.into(), c.draws.to_string(), c.mc_trace.to_string(), c.analytic_trace.to_string(), c.relative_error.to_string()]
        }),
    )?;
    Ok(Written {
        pass,
        summary: format!(
            "relative trace error {:.4} (head) and {:.4} (all parameters)",
            result.linear_head.relative_error, result.all_parameters.relative_error
        ),
        outputs: vec![report_file.into(), csv_file.into()],
        inputs,
    })
}

fn cross_term(
    ctx: &Context,
    checkpoint: &Path,
    data: Option<&Path>,
    rng: &mut flare_core::rng::Rng,
    report: &ReportFn<'_>,
    report_file: &str,
    csv_file: &str,
) -> anyhow::Result<Written> {
    let (ck, r, schedule) = load_checkpoint(ctx, checkpoint)?;
    let model = &ck.ema;
    let (train, data_digest) = load_data(&r, data)?;
    let mut inputs = BTreeMap::from([("checkpoint", FileDigest::of(checkpoint)?)]);
    if let Some(dg) = data_digest {
        inputs.insert("data", dg);
    }
    let p = model.param_count();
    let mut pair_rng = rng_from_seed(r.sub_seed(stream::PAIRS));
    let ggn = assemble_ggn(model, &train.samples, &schedule, &IndexSet::full(p)?, r.n_pairs, &mut pair_rng)?;
    let posterior = PosteriorOperator::new(PosteriorKind::FullDense, ggn, r.eval.cross_term_lambda)?;
    let d = model.config().data_dim;
    let noise_seed = r.sub_seed(stream::NOISE);
    let noises: Vec<NoiseRealization> = (0..r.eval.paths as u64)
        .map(|i| NoiseRealization::generate(derive_seed(noise_seed, i), d, schedule.steps()))
        .collect();
    let mut thresholds = r.eval.thresholds.clone();
    if !thresholds.contains(&CROSS_TERM_THRESHOLD) {
        thresholds.push(CROSS_TERM_THRESHOLD);
    }
    progress(format!(
        "cross-term study: p = {p}, {} paths, S = {}, T = {}",
        noises.len(),
        r.eval.draws,
        schedule.steps()
    ));
    let s: CrossTermReport = cross_term_study(model, &posterior, &schedule, &noises, r.eval.draws, &thresholds, rng)?;
    let test = s.tests.iter().find(|t| t.tau == CROSS_TERM_THRESHOLD).expect("threshold added above");
    let pass = s.mean < CROSS_TERM_THRESHOLD && test.p_value < CROSS_TERM_ALPHA;
    report(
        pass,
        vec![
            format!("mean |Δu/u| < {CROSS_TERM_THRESHOLD}%"),
            format!("one-sided t-test rejects mean ≥ {CROSS_TERM_THRESHOLD}% at p < {CROSS_TERM_ALPHA:e}"),
        ],
        &s,
    )?;
    write_rows(
        &ctx.path(csv_file),
        &["path", "u_no_cross", "u_with_cross", "percent_change"],
        (0..s.u_no_cross.len()).map(|i| {
            vec![i.to_string(), s.u_no_cross[i].to_string(), s.u_with_cross[i].to_string(), s.percent_changes[i].to_string()]
        }),
    )?;
    Ok(Written {
        pass,
        summary: format!("mean |Δu/u| = {:.5}% (max {:.5}%), p = {:.3e} against {CROSS_TERM_THRESHOLD}%", s.mean, s.max, test.p_value),
        outputs: vec![report_file.into(), csv_file.into()],
        inputs,
    })
}

#[derive(Serialize)]
struct ScheduleResult {
    steps: usize,
    hash: String,
    violations: Vec<String>,
}

fn schedule_study(ctx: &Context, r: &Resolved, report: &ReportFn<'_>, report_file: &str) -> anyhow::Result<Written> {
    let schedule = super::schedule(r)?;
    let rows: Vec<[f64; 7]> = schedule.rows().collect();
    let mut violations = Vec::new();
    let mut prev_bar = 1.0;
    for row in &rows {
        let [t, beta, alpha, bar, a, b, tilde] = *row;
        if row.iter().any(|v| !v.is_finite()) {
            violations.push(format!("t = {t}: non-finite entry"));
        }
        if !(BETA_MIN..=BETA_MAX).contains(&beta) || (alpha - (1.0 - beta)).abs() > 1e-15 {
            violations.push(format!("t = {t}: β = {beta} outside [{BETA_MIN}, {BETA_MAX}] or α ≠ 1 − β"));
        }
        if !(bar < prev_bar && bar > 0.0) {
            violations.push(format!("t = {t}: ᾱ not strictly decreasing in (0, 1)"));
        }
        if !(a > 0.0 && b > 0.0 && (0.0..=beta).contains(&tilde)) {
            violations.push(format!("t = {t}: coefficients out of range"));
        }
        prev_bar = bar;
    }
    let pass = violations.is_empty();
    write_rows(
        &ctx.path("schedule.csv"),
        &["t", "beta", "alpha", "bar_alpha", "a", "b", "tilde_beta"],
        rows.iter().map(|row| {
            let mut cells = vec![(row[0] as usize).to_string()];
            cells.extend(row[1..].iter().map(|v| v.to_string()));
            cells
        }),
    )?;
    let id = crate::checkpoint::ScheduleId::of(ctx.config.schedule.kind, &schedule);
    let result = ScheduleResult { steps: schedule.steps(), hash: id.hash, violations };
    report(
        pass,
        vec!["β in range, ᾱ strictly decreasing, α = 1 − β, 0 ≤ β̃ ≤ β, a and b positive".into()],
        &result,
    )?;
    Ok(Written {
        pass,
        summary: format!("T = {}, {} violations", schedule.steps(), result.violations.len()),
        outputs: vec![report_file.into(), "schedule.csv".into()],
        inputs: BTreeMap::new(),
    })
}
