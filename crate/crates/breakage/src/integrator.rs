//! Adaptive time integration of the sectional system with positivity
//! handling and event detection.
//!
//! The stepper is the embedded Bogacki-Shampine 3(2) pair (FSAL). Blow-up is
//! an expected outcome for sub-linear kernels, so it is reported as an event
//! and a distinct run status, never as an error; a collapsing step size below
//! the floor is likewise reported as a status for downstream interpretation.

use crate::diagnostics::{mass_below_edge, moment, MomentSeries};
use crate::error::{Error, Result};
use crate::grid::DensityState;
use crate::numeric::Csum;
use crate::operator::PrecomputedOperator;
use serde::Serialize;

/// Identifier of the embedded pair, recorded in run metadata.
pub const METHOD: &str = "bogacki-shampine-3(2)";

/// Fraction of the real-axis stability interval of the pair used as the step
/// cap against the fastest per-particle loss frequency.
const STABILITY_SPAN: f64 = 2.0;

/// Step-size controller settings.
#[derive(Clone, Copy, Debug)]
pub struct StepControl {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub dt_init: Option<f64>,
    pub dt_min: f64,
    pub safety: f64,
    pub max_steps: u64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            abs_tol: 1e-12,
            dt_init: None,
            dt_min: 1e-14,
            safety: 0.9,
            max_steps: 2_000_000,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("rel_tol must be positive".into()));
        }
        if !(self.abs_tol > 0.0) {
            return Err(Error::Config("abs_tol must be positive".into()));
        }
        if !(self.dt_min > 0.0) {
            return Err(Error::Config("dt_min must be positive".into()));
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return Err(Error::Config("safety factor must lie in (0,1)".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Event thresholds. `shatter_size` is the small-size cutoff below which mass
/// counts towards the shattering metric.
#[derive(Clone, Copy, Debug)]
pub struct EventConfig {
    pub m0_blowup_factor: f64,
    pub shatter_fraction: f64,
    pub shatter_size: f64,
}

impl EventConfig {
    pub fn with_default_size(m0_blowup_factor: f64, shatter_fraction: f64, x_min: f64) -> Self {
        Self {
            m0_blowup_factor,
            shatter_fraction,
            shatter_size: 100.0 * x_min,
        }
    }
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            m0_blowup_factor: 1e3,
            shatter_fraction: 0.1,
            shatter_size: f64::NAN, // resolved against the grid by the driver
        }
    }
}

/// Resolved event context for a specific run.
#[derive(Clone, Copy, Debug)]
pub struct EventContext {
    pub m0_threshold: f64,
    pub shatter_threshold: f64,
    /// Grid edge index bounding the shatter-size region from above.
    pub eps_edge: usize,
}

/// Instantaneous event predicate values.
#[derive(Clone, Copy, Debug, Default)]
pub struct EventState {
    pub m0: f64,
    pub shatter_metric: f64,
    pub m0_flag: bool,
    pub shatter_flag: bool,
}

/// Evaluate the event predicates on a state. Pure; crossing times are
/// interpolated by the integration loop.
pub fn detect_events(state: &DensityState, escaped_mass: f64, ctx: &EventContext) -> EventState {
    let m0 = state.total_number();
    let shatter_metric = mass_below_edge(state, ctx.eps_edge) + escaped_mass;
    EventState {
        m0,
        shatter_metric,
        m0_flag: m0 >= ctx.m0_threshold,
        shatter_flag: shatter_metric >= ctx.shatter_threshold,
    }
}

/// First-crossing times, when observed.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct EventFlags {
    pub m0_blowup_time: Option<f64>,
    pub shatter_time: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    BlowupDetected,
    StepFloorHit,
    MaxStepsHit,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::BlowupDetected => "blowup_detected",
            RunStatus::StepFloorHit => "step_floor_hit",
            RunStatus::MaxStepsHit => "max_steps_hit",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evaluations: u64,
}

/// Everything a run produces.
pub struct RunResult {
    pub status: RunStatus,
    pub method: &'static str,
    pub snapshots: Vec<DensityState>,
    pub escaped_at_snapshots: Vec<f64>,
    pub escaped_mass: f64,
    /// Cumulative mass removed by the positivity clip (negative when clips
    /// raised values to zero).
    pub clipped_mass: f64,
    pub events: EventFlags,
    pub stats: StepStats,
    pub series: MomentSeries,
    /// Max relative drift of (pivot-measure grid mass + escaped + clipped)
    /// over all accepted steps.
    pub ledger_drift: f64,
    pub end_time: f64,
}

/// Moment orders and tail probes recorded at each output time.
#[derive(Clone, Debug)]
pub struct SeriesSpec {
    pub moment_orders: Vec<f64>,
    pub tail_probes: Vec<f64>,
}

struct Hermite<'a> {
    t0: f64,
    h: f64,
    y0: &'a [f64],
    y1: &'a [f64],
    f0: &'a [f64],
    f1: &'a [f64],
    e0: f64,
    e1: f64,
    de0: f64,
    de1: f64,
}

impl Hermite<'_> {
    /// Cubic Hermite interpolation (third order) on the step.
    fn eval(&self, t: f64, out: &mut [f64]) -> f64 {
        let th = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let h00 = (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th);
        let h10 = th * (1.0 - th) * (1.0 - th);
        let h01 = th * th * (3.0 - 2.0 * th);
        let h11 = th * th * (th - 1.0);
        for i in 0..out.len() {
            out[i] = h00 * self.y0[i]
                + h10 * self.h * self.f0[i]
                + h01 * self.y1[i]
                + h11 * self.h * self.f1[i];
        }
        h00 * self.e0 + h10 * self.h * self.de0 + h01 * self.e1 + h11 * self.h * self.de1
    }
}

/// Advance the sectional system from `initial` to `t_end`.
///
/// Snapshots are produced at `output_times` (inside the integrated span) by
/// cubic Hermite interpolation of accepted steps. Negative cell values within
/// `abs_tol` of zero are clipped after each accepted step with the clipped
/// mass logged; a step producing a deeper negative value is rejected.
pub fn integrate(
    op: &PrecomputedOperator,
    initial: &DensityState,
    control: &StepControl,
    t_end: f64,
    output_times: &[f64],
    events: &EventConfig,
    series_spec: &SeriesSpec,
) -> Result<RunResult> {
    control.validate()?;
    let t0 = initial.time();
    if !(t_end > t0) {
        return Err(Error::Config(format!(
            "t_end={t_end} must exceed the initial time {t0}"
        )));
    }
    for w in output_times.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Config(
                "output times must be strictly increasing".into(),
            ));
        }
    }
    if let (Some(&first), Some(&last)) = (output_times.first(), output_times.last()) {
        if first < t0 - 1e-12 || last > t_end * (1.0 + 1e-12) {
            return Err(Error::Config(
                "output times must lie within [initial time, t_end]".into(),
            ));
        }
    }
    if initial.values().iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("initial state has negative cells".into()));
    }

    let grid = op.grid().clone();
    let n = grid.cell_count();
    let widths = grid.widths().to_vec();
    let pivots = grid.pivots().to_vec();

    let m1_initial = moment(initial, 1.0);
    let ctx = EventContext {
        m0_threshold: events.m0_blowup_factor * initial.total_number().max(f64::MIN_POSITIVE),
        shatter_threshold: events.shatter_fraction * m1_initial,
        eps_edge: grid.nearest_edge(events.shatter_size),
    };

    let tail_edges: Vec<usize> = series_spec
        .tail_probes
        .iter()
        .map(|&p| grid.nearest_edge(p))
        .collect();
    let mut series = MomentSeries::new(
        series_spec.moment_orders.clone(),
        tail_edges.iter().map(|&e| grid.edges()[e]).collect(),
    );

    let mut y = initial.values().to_vec();
    let mut escaped = 0.0f64;
    let mut clipped = Csum::new();
    let mut t = t0;

    let ledger = |values: &[f64], esc: f64, clip: f64| -> f64 {
        let mut s = Csum::new();
        for i in 0..n {
            s.add(values[i] * widths[i] * pivots[i]);
        }
        s.value() + esc + clip
    };
    let ledger0 = ledger(&y, escaped, 0.0);
    let mut ledger_drift = 0.0f64;

    let mut stats = StepStats::default();
    let mut flags = EventFlags::default();
    let mut snapshots: Vec<DensityState> = Vec::new();
    let mut escaped_at: Vec<f64> = Vec::new();
    let mut next_out = 0usize;

    let emit = |state: DensityState,
                esc: f64,
                series: &mut MomentSeries,
                snapshots: &mut Vec<DensityState>,
                escaped_at: &mut Vec<f64>| {
        series.push_row(&state, esc, m1_initial, &tail_edges);
        snapshots.push(state);
        escaped_at.push(esc);
    };

    // initial emission if requested
    while next_out < output_times.len() && output_times[next_out] <= t0 + 1e-300 {
        let state = DensityState::new(grid.clone(), y.clone(), t0)?;
        emit(state, escaped, &mut series, &mut snapshots, &mut escaped_at);
        next_out += 1;
    }

    let mut scratch = vec![0.0; n];
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut interp = vec![0.0; n];

    let (mut e1, mut max_rate) = op.rhs_into_with_rate(&y, &mut scratch, &mut k1);
    stats.rhs_evaluations += 1;

    let mut prev_events = detect_events(
        &DensityState::new(grid.clone(), y.clone(), t)?,
        escaped,
        &ctx,
    );
    if prev_events.shatter_flag {
        flags.shatter_time = Some(t0);
    }

    // initial step: fraction of the fastest cell time scale
    let mut h = control.dt_init.unwrap_or_else(|| {
        let mut rate: f64 = 0.0;
        for i in 0..n {
            rate =
                rate.max(k1[i].abs() / (control.abs_tol + control.rel_tol * y[i].abs().max(1.0)));
        }
        if rate > 0.0 {
            (0.01 / rate).min((t_end - t0) / 10.0)
        } else {
            (t_end - t0) / 100.0
        }
    });

    let status = 'outer: loop {
        if t >= t_end - 1e-14 * t_end.abs().max(1.0) {
            break RunStatus::Completed;
        }
        if stats.accepted + stats.rejected >= control.max_steps {
            break RunStatus::MaxStepsHit;
        }
        // Stability cap: fully decayed cells keep their loss frequency, and
        // letting the step exceed the explicit stability limit would make
        // them oscillate at the clip threshold instead of staying empty.
        if max_rate > 0.0 {
            h = h.min(STABILITY_SPAN / max_rate);
        }
        h = h.min(t_end - t);

        // Bogacki-Shampine stages
        for i in 0..n {
            ytmp[i] = y[i] + 0.5 * h * k1[i];
        }
        let e2 = op.rhs_into(&ytmp, &mut scratch, &mut k2);
        for i in 0..n {
            ytmp[i] = y[i] + 0.75 * h * k2[i];
        }
        let e3 = op.rhs_into(&ytmp, &mut scratch, &mut k3);
        for i in 0..n {
            ynew[i] = y[i] + h * (2.0 / 9.0 * k1[i] + 1.0 / 3.0 * k2[i] + 4.0 / 9.0 * k3[i]);
        }
        let enew = escaped + h * (2.0 / 9.0 * e1 + 1.0 / 3.0 * e2 + 4.0 / 9.0 * e3);
        let (e4, rate4) = op.rhs_into_with_rate(&ynew, &mut scratch, &mut k4);
        stats.rhs_evaluations += 3;

        let mut err_sq = 0.0;
        let mut finite = true;
        for i in 0..n {
            if !ynew[i].is_finite() {
                finite = false;
                break;
            }
            let e = h
                * (-5.0 / 72.0 * k1[i] + 1.0 / 12.0 * k2[i] + 1.0 / 9.0 * k3[i]
                    - 1.0 / 8.0 * k4[i]);
            let sc = control.abs_tol + control.rel_tol * y[i].abs().max(ynew[i].abs());
            err_sq += (e / sc) * (e / sc);
        }
        let err_norm = if finite {
            (err_sq / n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        let negative_overshoot = finite && ynew.iter().any(|&v| v < -control.abs_tol);

        if err_norm <= 1.0 && !negative_overshoot {
            // accepted: dense output over (t, t+h]
            let hermite = Hermite {
                t0: t,
                h,
                y0: &y,
                y1: &ynew,
                f0: &k1,
                f1: &k4,
                e0: escaped,
                e1: enew,
                de0: e1,
                de1: e4,
            };
            while next_out < output_times.len()
                && output_times[next_out] <= t + h + 1e-14 * (t + h).abs()
            {
                let tt = output_times[next_out];
                let esc_i = hermite.eval(tt, &mut interp);
                for v in interp.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                let state = DensityState::new(grid.clone(), interp.clone(), tt)?;
                emit(state, esc_i, &mut series, &mut snapshots, &mut escaped_at);
                next_out += 1;
            }

            t += h;
            std::mem::swap(&mut y, &mut ynew);
            escaped = enew;
            std::mem::swap(&mut k1, &mut k4);
            e1 = e4;
            max_rate = rate4;

            // positivity clip within tolerance, with the mass logged
            for i in 0..n {
                if y[i] < 0.0 {
                    clipped.add(y[i] * widths[i] * pivots[i]);
                    y[i] = 0.0;
                }
            }

            stats.accepted += 1;
            let l = ledger(&y, escaped, clipped.value());
            ledger_drift = ledger_drift.max((l - ledger0).abs() / ledger0.abs().max(1e-300));

            let state = DensityState::new(grid.clone(), y.clone(), t)?;
            let ev = detect_events(&state, escaped, &ctx);
            if ev.shatter_flag && flags.shatter_time.is_none() {
                let cross = if ev.shatter_metric > prev_events.shatter_metric {
                    t - h
                        + h * (ctx.shatter_threshold - prev_events.shatter_metric)
                            / (ev.shatter_metric - prev_events.shatter_metric)
                } else {
                    t
                };
                flags.shatter_time = Some(cross.clamp(t - h, t));
            }
            if ev.m0_flag && flags.m0_blowup_time.is_none() {
                let cross = if ev.m0 > prev_events.m0 {
                    t - h + h * (ctx.m0_threshold - prev_events.m0) / (ev.m0 - prev_events.m0)
                } else {
                    t
                };
                flags.m0_blowup_time = Some(cross.clamp(t - h, t));
                break 'outer RunStatus::BlowupDetected;
            }
            prev_events = ev;

            let grow = if err_norm > 0.0 {
                control.safety * err_norm.powf(-1.0 / 3.0)
            } else {
                5.0
            };
            h *= grow.clamp(0.2, 5.0);
        } else {
            stats.rejected += 1;
            h *= if negative_overshoot || !finite {
                0.5
            } else {
                (control.safety * err_norm.powf(-1.0 / 3.0)).clamp(0.1, 0.9)
            };
            if h < control.dt_min {
                break RunStatus::StepFloorHit;
            }
        }
    };

    Ok(RunResult {
        status,
        method: METHOD,
        snapshots,
        escaped_at_snapshots: escaped_at,
        escaped_mass: escaped,
        clipped_mass: clipped.value(),
        events: flags,
        stats,
        series,
        ledger_drift,
        end_time: t,
    })
}
