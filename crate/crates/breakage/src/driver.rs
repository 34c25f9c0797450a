//! Orchestration: build a configured experiment, run it, evaluate bounds, and
//! write the output files (moment table, snapshots, machine-readable
//! summary with a digest manifest).

use crate::config::{ExperimentConfig, SweepParameter};
use crate::diagnostics::{
    mass_below_size, moment, oracle_constant_kernel_moment, predict_existence_upper,
    predict_m0_envelope, predict_m_lambda_lower, predict_t0, shatter_bound_table, EnvelopeRegime,
    ShatterParams,
};
use crate::error::{Error, Result};
use crate::grid::{project_initial, DensityState, Projection, SizeGrid};
use crate::integrator::{integrate, EventConfig, RunResult, SeriesSpec};
use crate::model::{certify_assumptions, AssumptionReport};
use crate::operator::{precompute_operator, PrecomputedOperator};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// A bound evaluated from the projected initial data, or the reason it does
/// not apply.
#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum BoundOutcome {
    Value {
        value: f64,
        parameters: BTreeMap<String, f64>,
    },
    NotApplicable {
        not_applicable: String,
    },
}

impl BoundOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            BoundOutcome::Value { value, .. } => Some(*value),
            BoundOutcome::NotApplicable { .. } => None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundsReport {
    pub t0: BoundOutcome,
    pub existence_upper: BoundOutcome,
    pub m0_envelope_regime: String,
    /// `(m, bound)` rows, empty unless `alpha < 0`.
    pub shatter_table: Vec<(f64, f64)>,
    pub certification: AssumptionReport,
}

/// Evaluate every applicable analytic bound from the projected initial data.
pub fn evaluate_bounds(cfg: &ExperimentConfig, initial: &DensityState) -> Result<BoundsReport> {
    let kernel = cfg.kernel_spec();
    let daughter = cfg.daughter_spec();
    let lambda = kernel.lambda();
    let rho = moment(initial, 1.0);
    let m0 = moment(initial, 0.0);
    let beta0 = daughter.beta0();

    let t0 = match predict_t0(rho, m0, lambda, beta0) {
        Ok(value) => BoundOutcome::Value {
            value,
            parameters: BTreeMap::from([
                ("rho".into(), rho),
                ("M0".into(), m0),
                ("lambda".into(), lambda),
                ("beta0".into(), beta0),
            ]),
        },
        Err(Error::NotApplicable(_)) => BoundOutcome::NotApplicable {
            not_applicable: "lambda >= 1, global existence".into(),
        },
        Err(e) => return Err(e),
    };

    let existence_upper = if lambda < 1.0 {
        let gamma = daughter.gamma(lambda)?;
        let ml0 = moment(initial, lambda);
        match predict_existence_upper(gamma, ml0) {
            Ok(value) => BoundOutcome::Value {
                value,
                parameters: BTreeMap::from([
                    ("gamma_lambda".into(), gamma),
                    ("M_lambda0".into(), ml0),
                ]),
            },
            Err(e) => BoundOutcome::NotApplicable {
                not_applicable: e.to_string(),
            },
        }
    } else {
        BoundOutcome::NotApplicable {
            not_applicable: "lambda >= 1, global existence".into(),
        }
    };

    let shatter_table = if kernel.alpha() < 0.0 {
        let sb = cfg.shatter_bound.clone().unwrap_or_default();
        let params = ShatterParams {
            rho,
            alpha: kernel.alpha(),
            beta: kernel.beta(),
            nu: daughter.nu(),
            m0_order: sb.m0,
            m_m0: moment(initial, sb.m0),
        };
        shatter_bound_table(&params, &cfg.shatter_m_grid(), |m| moment(initial, m))?
    } else {
        Vec::new()
    };

    // default certification norm order, pulled inside the admissible range
    // for strongly singular daughters
    let nu = daughter.nu();
    let p = if nu < 0.0 {
        (1.5f64).min(0.5 * (1.0 + 1.0 / nu.abs())).max(1.01)
    } else {
        1.5
    };
    let certification = certify_assumptions(&kernel, &daughter, p, 1e-6)?;

    Ok(BoundsReport {
        t0,
        existence_upper,
        m0_envelope_regime: if lambda < 1.0 { "sub" } else { "super" }.into(),
        shatter_table,
        certification,
    })
}

/// A measured margin against an analytic bound curve.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CheckOutcome {
    pub observed: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Run outcomes checked against the applicable bound curves.
#[derive(Clone, Debug, Default, Serialize)]
pub struct BoundChecks {
    /// Max of `M0(t) / envelope(t)`; passes when below `1 + envelope_tol`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m0_envelope: Option<CheckOutcome>,
    /// Min of `M_lambda(t) / comparison(t)` inside the comparison window;
    /// the stated pass threshold is `1 - 0.05`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_lambda_lower: Option<CheckOutcome>,
    /// Max relative deviation from the constant-kernel closed form over the
    /// tracked moment orders.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<CheckOutcome>,
}

const LOWER_COMPARISON_TOL: f64 = 0.05;

fn evaluate_bound_checks(
    cfg: &ExperimentConfig,
    initial: &DensityState,
    result: &crate::integrator::RunResult,
) -> BoundChecks {
    let kernel = cfg.kernel_spec();
    let daughter = cfg.daughter_spec();
    let lambda = kernel.lambda();
    let rho = moment(initial, 1.0);
    let m00 = moment(initial, 0.0);
    let beta0 = daughter.beta0();
    let tol = cfg.diagnostics.envelope_tol;
    let mut checks = BoundChecks::default();

    let regime = if lambda < 1.0 {
        EnvelopeRegime::Sub
    } else {
        EnvelopeRegime::Super
    };
    let mut max_ratio: f64 = 0.0;
    let mut any = false;
    for snap in &result.snapshots {
        if let Ok(env) = predict_m0_envelope(snap.time(), regime, rho, beta0, lambda, m00) {
            max_ratio = max_ratio.max(moment(snap, 0.0) / env);
            any = true;
        }
    }
    if any {
        checks.m0_envelope = Some(CheckOutcome {
            observed: max_ratio,
            tolerance: tol,
            pass: max_ratio <= 1.0 + tol,
        });
    }

    if lambda < 1.0 {
        if let Ok(gamma) = daughter.gamma(lambda) {
            let ml0 = moment(initial, lambda);
            // the comparison curve diverges at the window end, where any
            // finite solution trivially falls below it; stay clear of it
            let horizon = 0.9 / (4.0 * (gamma - 1.0) * ml0);
            let mut min_ratio = f64::INFINITY;
            let mut any = false;
            for snap in &result.snapshots {
                if snap.time() > horizon {
                    continue;
                }
                if let Ok(comparison) = predict_m_lambda_lower(snap.time(), gamma, ml0) {
                    min_ratio = min_ratio.min(moment(snap, lambda) / comparison);
                    any = true;
                }
            }
            if any {
                checks.m_lambda_lower = Some(CheckOutcome {
                    observed: min_ratio,
                    tolerance: LOWER_COMPARISON_TOL,
                    pass: min_ratio >= 1.0 - LOWER_COMPARISON_TOL,
                });
            }
        }
    }

    if cfg.diagnostics.oracle {
        if let Some(rows) = oracle_deviation_rows(cfg, result) {
            let worst = rows
                .iter()
                .map(|r| r.rel_deviation.abs())
                .fold(0.0f64, f64::max);
            checks.oracle = Some(CheckOutcome {
                observed: worst,
                tolerance: tol,
                pass: worst <= tol,
            });
        }
    }
    checks
}

struct OracleRow {
    time: f64,
    order: f64,
    measured: f64,
    predicted: f64,
    rel_deviation: f64,
}

fn oracle_deviation_rows(
    cfg: &ExperimentConfig,
    result: &crate::integrator::RunResult,
) -> Option<Vec<OracleRow>> {
    if !cfg.diagnostics.oracle {
        return None;
    }
    let nu = cfg.daughter.nu;
    let series = &result.series;
    let m00 = series.moment_at(0, 0.0)?;
    let mut rows = Vec::new();
    for (r, &t) in series.times.iter().enumerate() {
        for (c, &m) in series.orders.iter().enumerate() {
            let m_m0 = series.values[0][c];
            if m_m0 <= 0.0 {
                continue;
            }
            if let Ok(predicted) = oracle_constant_kernel_moment(t, m, nu, m_m0, m00) {
                let measured = series.values[r][c];
                rows.push(OracleRow {
                    time: t,
                    order: m,
                    measured,
                    predicted,
                    rel_deviation: measured / predicted - 1.0,
                });
            }
        }
    }
    Some(rows)
}

fn write_oracle_table(rows: &[OracleRow]) -> Vec<u8> {
    let mut out = String::from("time,order,measured,predicted,rel_deviation\n");
    for r in rows {
        out.push_str(&format!(
            "{:.11e},{},{:.11e},{:.11e},{:.11e}\n",
            r.time, r.order, r.measured, r.predicted, r.rel_deviation
        ));
    }
    out.into_bytes()
}

#[derive(Clone, Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct EventsSummary {
    pub m0_blowup_time: Option<f64>,
    pub shatter_time: Option<f64>,
}

/// Machine-readable run summary with stable keys.
#[derive(Serialize)]
pub struct RunSummary {
    pub status: String,
    pub events: EventsSummary,
    pub bounds: BoundsReport,
    pub bound_checks: BoundChecks,
    pub files: Vec<FileDigest>,
    /// TOML echo of the configuration that produced the run.
    pub config: String,
    pub method: String,
    pub final_time: f64,
    pub final_moments: BTreeMap<String, f64>,
    pub escaped_mass: f64,
    pub clipped_mass: f64,
    pub ledger_drift: f64,
    pub projection_loss: f64,
    pub steps_accepted: u64,
    pub steps_rejected: u64,
    pub wall_time_s: f64,
}

pub struct RunOutput {
    pub projection: Projection,
    pub bounds: BoundsReport,
    pub result: RunResult,
    pub summary: RunSummary,
}

/// Build the grid, operator, and initial state for a configuration.
pub fn build_components(
    cfg: &ExperimentConfig,
) -> Result<(Arc<SizeGrid>, PrecomputedOperator, Projection)> {
    let grid = SizeGrid::build(cfg.grid.x_min, cfg.grid.x_max, cfg.grid.cells)?;
    let kernel = cfg.kernel_spec();
    let daughter = cfg.daughter_spec();
    let window = cfg.truncation_window()?;
    let op = precompute_operator(&grid, &kernel, window.as_ref(), &daughter)?;
    let projection = project_initial(&grid, &cfg.initial_condition())?;
    Ok((grid, op, projection))
}

/// Warning when the truncation window pokes outside the grid span.
pub fn window_warning(cfg: &ExperimentConfig) -> Option<String> {
    let w = cfg.truncation_window().ok().flatten()?;
    if w.lower() < cfg.grid.x_min || w.upper() > cfg.grid.x_max {
        Some(format!(
            "window ({:.3e}, {:.3e}) extends beyond the grid [{:.3e}, {:.3e}]; \
             truncation is inactive outside the grid",
            w.lower(),
            w.upper(),
            cfg.grid.x_min,
            cfg.grid.x_max
        ))
    } else {
        None
    }
}

/// Execute one simulation; write `moments.csv`, `snapshots/`, and
/// `summary.json` under `out_dir` when given.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutput> {
    if cfg.sweep.is_some() {
        return Err(Error::Config(
            "configuration contains a sweep section; use the sweep command".into(),
        ));
    }
    run_single(cfg, out_dir)
}

fn run_single(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutput> {
    let start = std::time::Instant::now();
    let (_, op, projection) = build_components(cfg)?;
    let bounds = evaluate_bounds(cfg, &projection.state)?;

    let events = EventConfig {
        m0_blowup_factor: cfg.events.m0_blowup_factor,
        shatter_fraction: cfg.events.shatter_fraction,
        shatter_size: cfg.shatter_size(),
    };
    let series_spec = SeriesSpec {
        moment_orders: cfg.diagnostics.moment_orders.clone(),
        tail_probes: cfg.tail_probes(),
    };
    let result = integrate(
        &op,
        &projection.state,
        &cfg.step_control(),
        cfg.time.t_end,
        &cfg.output_times(),
        &events,
        &series_spec,
    )?;

    let mut files = Vec::new();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let mut csv = Vec::new();
        result.series.write_csv(&mut csv)?;
        files.push(write_with_digest(dir, "moments.csv", &csv)?);

        let snapdir = dir.join("snapshots");
        fs::create_dir_all(&snapdir)?;
        for (i, snap) in result.snapshots.iter().enumerate() {
            let mut buf = Vec::new();
            snap.write_snapshot(&mut buf)?;
            let name = format!("snapshots/snapshot_{i:04}.dat");
            files.push(write_with_digest(dir, &name, &buf)?);
        }

        if let Some(rows) = oracle_deviation_rows(cfg, &result) {
            files.push(write_with_digest(
                dir,
                "oracle.csv",
                &write_oracle_table(&rows),
            )?);
        }
    }

    let bound_checks = evaluate_bound_checks(cfg, &projection.state, &result);

    let mut final_moments = BTreeMap::new();
    if let Some(last) = result.snapshots.last() {
        for &m in &cfg.diagnostics.moment_orders {
            final_moments.insert(format!("M_{m}"), moment(last, m));
        }
    }

    let summary = RunSummary {
        status: result.status.as_str().to_string(),
        events: EventsSummary {
            m0_blowup_time: result.events.m0_blowup_time,
            shatter_time: result.events.shatter_time,
        },
        bounds: bounds.clone(),
        bound_checks,
        files: files.clone(),
        config: cfg.to_toml(),
        method: result.method.to_string(),
        final_time: result.end_time,
        final_moments,
        escaped_mass: result.escaped_mass,
        clipped_mass: result.clipped_mass,
        ledger_drift: result.ledger_drift,
        projection_loss: projection.projection_loss,
        steps_accepted: result.stats.accepted,
        steps_rejected: result.stats.rejected,
        wall_time_s: start.elapsed().as_secs_f64(),
    };

    if let Some(dir) = out_dir {
        let json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
        fs::write(dir.join("summary.json"), json)?;
    }

    Ok(RunOutput {
        projection,
        bounds,
        result,
        summary,
    })
}

fn write_with_digest(dir: &Path, name: &str, bytes: &[u8]) -> Result<FileDigest> {
    let path = dir.join(name);
    fs::write(&path, bytes)?;
    Ok(FileDigest {
        path: name.to_string(),
        sha256: hex::encode(Sha256::digest(bytes)),
    })
}

/// Monotonicity verdict with strict comparisons under a 1e-6 slack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    StrictlyIncreasing,
    StrictlyDecreasing,
    Inconclusive,
}

pub fn classify_trend(values: &[f64]) -> Trend {
    const SLACK: f64 = 1e-6;
    if values.len() < 2 {
        return Trend::Inconclusive;
    }
    if values.windows(2).all(|w| w[1] > w[0] + SLACK) {
        Trend::StrictlyIncreasing
    } else if values.windows(2).all(|w| w[1] < w[0] - SLACK) {
        Trend::StrictlyDecreasing
    } else {
        Trend::Inconclusive
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub status: String,
    /// First crossing of the shatter fraction.
    pub shatter_onset: Option<f64>,
    /// (mass below the shatter size + escaped) / M1(0) at the probe time.
    pub below_eps_fraction: f64,
    pub escaped_mass: f64,
    pub ledger_drift: f64,
    /// Max relative oracle deviation over tracked orders, when enabled.
    pub oracle_deviation: Option<f64>,
}

#[derive(Serialize)]
pub struct SweepReport {
    pub parameter: String,
    pub probe_time: f64,
    pub points: Vec<SweepPoint>,
    pub fraction_trend: Trend,
    pub onset_trend: Trend,
    pub fraction_variation: f64,
    /// Shattering bound table of the last (usually best-resolved) point.
    pub shatter_table: Vec<(f64, f64)>,
}

fn apply_sweep_value(
    base: &ExperimentConfig,
    param: SweepParameter,
    value: f64,
) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    match param {
        SweepParameter::WindowLower => {
            let w = cfg.window.as_mut().ok_or_else(|| {
                Error::Config("sweep over window.lower needs a window section".into())
            })?;
            if w.n.is_some() {
                return Err(Error::Config(
                    "sweep over window.lower needs explicit lower/upper cutoffs".into(),
                ));
            }
            w.lower = Some(value);
        }
        SweepParameter::GridXMin => cfg.grid.x_min = value,
        SweepParameter::GridCells => {
            if value <= 0.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!(
                    "grid.cells sweep values must be positive integers, got {value}"
                )));
            }
            cfg.grid.cells = value as usize;
        }
        SweepParameter::RelTol => cfg.control.rel_tol = value,
    }
    cfg.sweep = None;
    cfg.validate()?;
    Ok(cfg)
}

fn oracle_deviation(cfg: &ExperimentConfig, out: &RunOutput) -> Option<f64> {
    let rows = oracle_deviation_rows(cfg, &out.result)?;
    Some(
        rows.iter()
            .map(|r| r.rel_deviation.abs())
            .fold(0.0, f64::max),
    )
}

/// Run one simulation per sweep value in a worker pool; per-point outputs go
/// to `point_<k>/` under `out_dir`.
pub fn run_sweep(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<SweepReport> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("configuration has no sweep section".into()))?;
    let param = SweepParameter::parse(&sweep.parameter)?;
    let probe_time = sweep.probe_time.unwrap_or(cfg.time.t_end);

    let jobs: Vec<(usize, ExperimentConfig, Option<PathBuf>)> = sweep
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut point_cfg = apply_sweep_value(cfg, param, v)?;
            // the probe must be an output time so the metric needs no
            // re-integration
            let mut times = point_cfg.output_times();
            if !times.iter().any(|&t| (t - probe_time).abs() < 1e-12) {
                times.push(probe_time);
                times.sort_by(|a, b| a.partial_cmp(b).unwrap());
            }
            point_cfg.time.output_times = Some(times);
            point_cfg.time.output_count = None;
            Ok((i, point_cfg, out_dir.map(|d| d.join(format!("point_{i}")))))
        })
        .collect::<Result<_>>()?;

    let mut outputs: Vec<(usize, f64, RunOutput, ExperimentConfig)> = jobs
        .into_par_iter()
        .map(|(i, point_cfg, dir)| {
            let out = run_single(&point_cfg, dir.as_deref())?;
            Ok((i, sweep.values[i], out, point_cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    outputs.sort_by_key(|(i, ..)| *i);

    let mut points = Vec::with_capacity(outputs.len());
    let mut shatter_table = Vec::new();
    for (_, value, out, point_cfg) in &outputs {
        let m1_initial = moment(&out.projection.state, 1.0);
        let row = out
            .result
            .snapshots
            .iter()
            .position(|s| (s.time() - probe_time).abs() < 1e-9)
            .ok_or_else(|| {
                Error::Config(format!(
                    "run ended before the probe time {probe_time} (status {})",
                    out.result.status.as_str()
                ))
            })?;
        let below = mass_below_size(&out.result.snapshots[row], point_cfg.shatter_size())
            + out.result.escaped_at_snapshots[row];
        points.push(SweepPoint {
            value: *value,
            status: out.result.status.as_str().to_string(),
            shatter_onset: out.result.events.shatter_time,
            below_eps_fraction: below / m1_initial,
            escaped_mass: out.result.escaped_mass,
            ledger_drift: out.result.ledger_drift,
            oracle_deviation: oracle_deviation(point_cfg, out),
        });
        shatter_table = out.bounds.shatter_table.clone();
    }

    let fractions: Vec<f64> = points.iter().map(|p| p.below_eps_fraction).collect();
    let onsets: Vec<f64> = points.iter().filter_map(|p| p.shatter_onset).collect();
    let report = SweepReport {
        parameter: sweep.parameter.clone(),
        probe_time,
        points,
        fraction_trend: classify_trend(&fractions),
        onset_trend: if onsets.len() == outputs.len() {
            classify_trend(&onsets)
        } else {
            Trend::Inconclusive
        },
        fraction_variation: fractions.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - fractions.iter().cloned().fold(f64::INFINITY, f64::min),
        shatter_table,
    };

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_vec_pretty(&report).expect("report serializes");
        fs::write(dir.join("sweep_report.json"), json)?;
    }
    Ok(report)
}
