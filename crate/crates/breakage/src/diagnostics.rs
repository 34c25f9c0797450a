//! Moments, tails, conservation residuals, and the analytic bound curves the
//! solver is checked against.
//!
//! Moments use closed-form cell integrals of `x^m` against the piecewise
//! constant reconstruction rather than pivot values times widths; on a
//! geometric grid the two differ by a uniform `m`-dependent factor of order
//! `(r-1)^2`, and the closed form keeps that bias out of envelope
//! comparisons.

use crate::error::{Error, Result};
use crate::grid::DensityState;
use crate::model::{DaughterSpec, KernelSpec};
use crate::numeric::Csum;
use serde::Serialize;
use std::io::Write;

/// `M_m = int x^m f dx` via closed-form cell integrals (`m = -1` uses the
/// logarithmic primitive).
pub fn moment(state: &DensityState, m: f64) -> f64 {
    let grid = state.grid();
    let mut acc = Csum::new();
    if m == 0.0 {
        for i in 0..state.values().len() {
            acc.add(state.values()[i] * grid.widths()[i]);
        }
    } else if m == 1.0 {
        for i in 0..state.values().len() {
            acc.add(state.values()[i] * grid.mass_weights()[i]);
        }
    } else {
        for i in 0..state.values().len() {
            acc.add(state.values()[i] * grid.cell_moment_weight(i, m));
        }
    }
    acc.value()
}

/// Partial mass strictly below grid edge `edge`, splitting no cells.
pub fn mass_below_edge(state: &DensityState, edge: usize) -> f64 {
    let grid = state.grid();
    let mut acc = Csum::new();
    for i in 0..edge.min(state.values().len()) {
        acc.add(state.values()[i] * grid.mass_weights()[i]);
    }
    acc.value()
}

/// Partial mass below an arbitrary size, splitting the straddling cell by its
/// closed-form mass integral. Grid-artifact-free, used by event metrics.
pub fn mass_below_size(state: &DensityState, eps: f64) -> f64 {
    let grid = state.grid();
    let edges = grid.edges();
    let mut acc = Csum::new();
    for i in 0..state.values().len() {
        if edges[i + 1] <= eps {
            acc.add(state.values()[i] * grid.mass_weights()[i]);
        } else if edges[i] < eps {
            acc.add(state.values()[i] * 0.5 * (eps * eps - edges[i] * edges[i]));
        } else {
            break;
        }
    }
    acc.value()
}

/// Tail mass at `x`: the exact partial mass above the nearest grid edge.
/// Returns `(tail, snapped_edge)`.
pub fn tail_mass(state: &DensityState, x: f64) -> (f64, f64) {
    let grid = state.grid();
    let edge = grid.nearest_edge(x);
    let mut acc = Csum::new();
    for i in edge..state.values().len() {
        acc.add(state.values()[i] * grid.mass_weights()[i]);
    }
    (acc.value(), grid.edges()[edge])
}

/// Guaranteed-existence horizon for sub-linear kernels,
/// `T0 = M0^(lambda-1) / ((1-lambda)(beta0-2) rho^lambda)`.
pub fn predict_t0(rho: f64, m0: f64, lambda: f64, beta0: f64) -> Result<f64> {
    if !(lambda >= 0.0 && lambda < 1.0) {
        return Err(Error::NotApplicable(format!(
            "T0 requires lambda in [0,1); lambda={lambda} has global existence"
        )));
    }
    if !(beta0 > 2.0) || !(rho > 0.0) || !(m0 > 0.0) {
        return Err(Error::Hypothesis(format!(
            "T0 requires beta0 > 2, rho > 0, M0 > 0; got beta0={beta0}, rho={rho}, M0={m0}"
        )));
    }
    Ok(m0.powf(lambda - 1.0) / ((1.0 - lambda) * (beta0 - 2.0) * rho.powf(lambda)))
}

/// Existence-time bound `1/(4 (gamma_lambda - 1) M_lambda(0))`.
pub fn predict_existence_upper(gamma_lambda: f64, m_lambda0: f64) -> Result<f64> {
    if !(gamma_lambda > 1.0) {
        return Err(Error::Hypothesis(format!(
            "existence bound requires gamma_lambda > 1, got {gamma_lambda}"
        )));
    }
    if !(m_lambda0 > 0.0) {
        return Err(Error::Hypothesis(format!(
            "existence bound requires M_lambda(0) > 0, got {m_lambda0}"
        )));
    }
    Ok(1.0 / (4.0 * (gamma_lambda - 1.0) * m_lambda0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeRegime {
    /// `lambda in [1,2]`: exponential envelope.
    Super,
    /// `lambda in [0,1)`: envelope diverging at `T0`.
    Sub,
}

/// Number-moment envelope at time `t`.
pub fn predict_m0_envelope(
    t: f64,
    regime: EnvelopeRegime,
    rho: f64,
    beta0: f64,
    lambda: f64,
    m0: f64,
) -> Result<f64> {
    match regime {
        EnvelopeRegime::Super => {
            if !(1.0..=2.0).contains(&lambda) {
                return Err(Error::Hypothesis(format!(
                    "super envelope requires lambda in [1,2], got {lambda}"
                )));
            }
            Ok((rho * (beta0 - 2.0) * t).exp() * (rho + m0))
        }
        EnvelopeRegime::Sub => {
            let t0 = predict_t0(rho, m0, lambda, beta0)?;
            if t >= t0 {
                return Err(Error::Domain(format!(
                    "sub envelope undefined at t={t} >= T0={t0}"
                )));
            }
            let base =
                m0.powf(lambda - 1.0) - (1.0 - lambda) * (beta0 - 2.0) * rho.powf(lambda) * t;
            Ok(base.powf(-1.0 / (1.0 - lambda)))
        }
    }
}

/// Solution of the comparison equation `L' = 4 (gamma-1) L^2`:
/// `M_lambda(0) / (1 - 4 (gamma-1) M_lambda(0) t)`.
pub fn predict_m_lambda_lower(t: f64, gamma_lambda: f64, m_lambda0: f64) -> Result<f64> {
    let horizon = predict_existence_upper(gamma_lambda, m_lambda0)?;
    if t >= horizon {
        return Err(Error::Domain(format!(
            "comparison window ends at {horizon}, got t={t}"
        )));
    }
    if t < 0.0 {
        return Err(Error::Domain("t must be non-negative".into()));
    }
    Ok(m_lambda0 / (1.0 - 4.0 * (gamma_lambda - 1.0) * m_lambda0 * t))
}

/// Parameters for the shattering time bound.
#[derive(Clone, Copy, Debug)]
pub struct ShatterParams {
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
    /// Superlinear moment order with finite initial moment.
    pub m0_order: f64,
    pub m_m0: f64,
}

/// Upper bound on the lifetime of a mass-conserving solution for `alpha < 0`:
/// `(m+nu+1)/(|alpha| delta2) rho^(-alpha/(1-m)) M_m(0)^(alpha/(1-m))` with
/// `delta2 = rho^((m0-beta)/(m0-1)) M_m0(0)^((beta-1)/(m0-1))`.
///
/// The bound tends to zero as `m` decreases to `-nu-1`, which is the sweep
/// the per-`m` table makes visible.
pub fn predict_shatter_upper(p: &ShatterParams, m: f64, m_m: f64) -> Result<f64> {
    if !(p.alpha < 0.0) {
        return Err(Error::Config(format!(
            "shattering bound requires alpha < 0, got {}",
            p.alpha
        )));
    }
    if !(p.nu > -1.0 && p.nu <= 0.0) {
        return Err(Error::Config(format!(
            "requires nu in (-1,0], got {}",
            p.nu
        )));
    }
    if !(m >= -p.nu - 1.0 && m < 0.0) {
        return Err(Error::Config(format!(
            "requires m in [-nu-1, 0) = [{}, 0), got {m}",
            -p.nu - 1.0
        )));
    }
    if !(p.m0_order > 1.0) {
        return Err(Error::Config(format!(
            "requires a superlinear moment order m0 > 1, got {}",
            p.m0_order
        )));
    }
    if !(p.rho > 0.0 && p.m_m0 > 0.0 && m_m > 0.0) {
        return Err(Error::Config("moments must be positive and finite".into()));
    }
    let delta2 = p.rho.powf((p.m0_order - p.beta) / (p.m0_order - 1.0))
        * p.m_m0.powf((p.beta - 1.0) / (p.m0_order - 1.0));
    Ok((m + p.nu + 1.0) / (p.alpha.abs() * delta2)
        * p.rho.powf(-p.alpha / (1.0 - m))
        * m_m.powf(p.alpha / (1.0 - m)))
}

/// Shattering bound evaluated over a grid of `m` values.
pub fn shatter_bound_table(
    p: &ShatterParams,
    m_grid: &[f64],
    moments: impl Fn(f64) -> f64,
) -> Result<Vec<(f64, f64)>> {
    let mut rows = Vec::with_capacity(m_grid.len());
    for &m in m_grid {
        rows.push((m, predict_shatter_upper(p, m, moments(m))?));
    }
    Ok(rows)
}

/// Closed-form moment solution for the constant kernel (`alpha = beta = 0`):
/// `M_m(t) = M_m(0) (1 - (2/(nu+1)) M0(0) t)^(-(1-m)(nu+1)/(nu+m+1))`.
///
/// Derived from the weak form with `phi = z^m`: the pairing weight reduces to
/// `(1-m)/(nu+m+1) (x^m + y^m)`, closing the moment hierarchy on
/// `M_m' = 2 (1-m)/(nu+m+1) M_m M0`. Verified against direct high-order
/// integration of that two-equation system in the tests.
pub fn oracle_constant_kernel_moment(t: f64, m: f64, nu: f64, m_m0: f64, m00: f64) -> Result<f64> {
    if m + nu + 1.0 <= 0.0 {
        return Err(Error::DivergentMoment(format!(
            "oracle moment of order {m} diverges for nu={nu}"
        )));
    }
    let blowup = (nu + 1.0) / (2.0 * m00);
    if t >= blowup {
        return Err(Error::Domain(format!(
            "oracle undefined at t={t} >= blow-up time {blowup}"
        )));
    }
    let base = 1.0 - 2.0 / (nu + 1.0) * m00 * t;
    Ok(m_m0 * base.powf(-(1.0 - m) * (nu + 1.0) / (nu + m + 1.0)))
}

/// Analytic moment hierarchy right side for the power-law kernel,
/// `dM_m/dt = (1-m)/(nu+m+1) [M_(m+a) M_b + M_(m+b) M_a]`.
pub fn moment_hierarchy_rhs(
    m: f64,
    moments: impl Fn(f64) -> f64,
    kernel: &KernelSpec,
    daughter: &DaughterSpec,
) -> Result<f64> {
    let nu = daughter.nu();
    if m + nu + 1.0 <= 0.0 {
        return Err(Error::DivergentMoment(format!(
            "hierarchy moment of order {m} diverges for nu={nu}"
        )));
    }
    let (a, b) = (kernel.alpha(), kernel.beta());
    Ok((1.0 - m) / (nu + m + 1.0) * (moments(m + a) * moments(b) + moments(m + b) * moments(a)))
}

/// Time series of moments, tails, and conservation residuals along a run.
#[derive(Clone, Debug, Serialize)]
pub struct MomentSeries {
    pub times: Vec<f64>,
    pub orders: Vec<f64>,
    /// `values[row][col]` aligned with `times` x `orders`.
    pub values: Vec<Vec<f64>>,
    /// Snapped tail probe edges.
    pub tail_probes: Vec<f64>,
    pub tails: Vec<Vec<f64>>,
    pub escaped: Vec<f64>,
    /// `|M1(t) + escaped(t) - M1(0)| / M1(0)`.
    pub mass_residual: Vec<f64>,
}

impl MomentSeries {
    pub fn new(orders: Vec<f64>, tail_probes: Vec<f64>) -> Self {
        Self {
            times: Vec::new(),
            orders,
            values: Vec::new(),
            tail_probes,
            tails: Vec::new(),
            escaped: Vec::new(),
            mass_residual: Vec::new(),
        }
    }

    pub fn push_row(
        &mut self,
        state: &DensityState,
        escaped: f64,
        m1_initial: f64,
        tail_edges: &[usize],
    ) {
        self.times.push(state.time());
        self.values
            .push(self.orders.iter().map(|&m| moment(state, m)).collect());
        let grid = state.grid();
        self.tails.push(
            tail_edges
                .iter()
                .map(|&e| {
                    let mut acc = Csum::new();
                    for i in e..state.values().len() {
                        acc.add(state.values()[i] * grid.mass_weights()[i]);
                    }
                    acc.value()
                })
                .collect(),
        );
        self.escaped.push(escaped);
        let m1 = moment(state, 1.0);
        self.mass_residual
            .push((m1 + escaped - m1_initial).abs() / m1_initial.abs().max(1e-300));
    }

    /// Column index of moment order `m`.
    pub fn order_index(&self, m: f64) -> Option<usize> {
        self.orders.iter().position(|&o| o == m)
    }

    pub fn moment_at(&self, row: usize, m: f64) -> Option<f64> {
        self.order_index(m).map(|c| self.values[row][c])
    }

    /// Delimiter-separated table with 12 significant digits:
    /// `time,M_<m>,...,tail@<edge>,...,escaped,mass_residual`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = String::from("time");
        for m in &self.orders {
            header.push_str(&format!(",M_{m}"));
        }
        for p in &self.tail_probes {
            header.push_str(&format!(",tail@{p:.6e}"));
        }
        header.push_str(",escaped,mass_residual");
        writeln!(out, "{header}")?;
        for r in 0..self.times.len() {
            let mut row = format!("{:.11e}", self.times[r]);
            for v in &self.values[r] {
                row.push_str(&format!(",{v:.11e}"));
            }
            for v in &self.tails[r] {
                row.push_str(&format!(",{v:.11e}"));
            }
            row.push_str(&format!(
                ",{:.11e},{:.11e}",
                self.escaped[r], self.mass_residual[r]
            ));
            writeln!(out, "{row}")?;
        }
        Ok(())
    }
}
