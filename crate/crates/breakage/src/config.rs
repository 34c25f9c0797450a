//! Experiment configuration: a single TOML file describes kernel, daughter,
//! grid, initial data, time stepping, diagnostics, and optional sweeps.
//! No environment variables influence the numerics.

use crate::error::{Error, Result};
use crate::grid::InitialCondition;
use crate::integrator::StepControl;
use crate::model::{DaughterSpec, KernelSpec, TruncationWindow};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelSection,
    pub daughter: DaughterSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowSection>,
    pub grid: GridSection,
    pub initial: InitialSection,
    pub time: TimeSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub events: EventsSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shatter_bound: Option<ShatterBoundSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DaughterSection {
    pub nu: f64,
}

/// Either the symmetric form `n` (window `(1/n, n)`) or explicit cutoffs.
#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub x_min: f64,
    pub x_max: f64,
    pub cells: usize,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InitialSection {
    Exponential {
        amplitude: f64,
        rate: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        support: Option<[f64; 2]>,
    },
    Monodisperse {
        mass: f64,
        location: f64,
    },
    PowerLaw {
        prefactor: f64,
        exponent: f64,
        lower: f64,
        upper: f64,
    },
    Tabulated {
        points: Vec<[f64; 2]>,
    },
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_count: Option<usize>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub rel_tol: f64,
    pub abs_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_init: Option<f64>,
    pub dt_min: f64,
    pub safety: f64,
    pub max_steps: u64,
}

impl Default for ControlSection {
    fn default() -> Self {
        let c = StepControl::default();
        Self {
            rel_tol: c.rel_tol,
            abs_tol: c.abs_tol,
            dt_init: None,
            dt_min: c.dt_min,
            safety: c.safety,
            max_steps: c.max_steps,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EventsSection {
    pub m0_blowup_factor: f64,
    pub shatter_fraction: f64,
    /// Defaults to `100 * x_min` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shatter_size: Option<f64>,
}

impl Default for EventsSection {
    fn default() -> Self {
        Self {
            m0_blowup_factor: 1e3,
            shatter_fraction: 0.1,
            shatter_size: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub moment_orders: Vec<f64>,
    /// Explicit probes; when absent, `tail_probe_count` log-spaced probes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_probes: Option<Vec<f64>>,
    pub tail_probe_count: usize,
    /// Compare runs against the constant-kernel closed form (requires
    /// `alpha = beta = 0`).
    pub oracle: bool,
    pub envelope_tol: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            moment_orders: vec![0.0, 0.5, 1.0, 2.0],
            tail_probes: None,
            tail_probe_count: 16,
            oracle: false,
            envelope_tol: 0.02,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ShatterBoundSection {
    /// Superlinear moment order used in `delta2`.
    pub m0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_grid: Option<Vec<f64>>,
}

impl Default for ShatterBoundSection {
    fn default() -> Self {
        Self {
            m0: 2.0,
            m_grid: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// One of `window.lower`, `grid.x_min`, `grid.cells`, `control.rel_tol`.
    pub parameter: String,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_time: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParameter {
    WindowLower,
    GridXMin,
    GridCells,
    RelTol,
}

impl SweepParameter {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "window.lower" => Ok(Self::WindowLower),
            "grid.x_min" => Ok(Self::GridXMin),
            "grid.cells" => Ok(Self::GridCells),
            "control.rel_tol" => Ok(Self::RelTol),
            other => Err(Error::Config(format!(
                "unknown sweep parameter {other:?}; expected one of \
                 window.lower, grid.x_min, grid.cells, control.rel_tol"
            ))),
        }
    }
}

impl ExperimentConfig {
    /// Parse from TOML; parse errors carry line/column references.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Cross-field consistency checks; run before anything is built.
    pub fn validate(&self) -> Result<()> {
        KernelSpec::new(self.kernel.alpha, self.kernel.beta)?;
        DaughterSpec::new(self.daughter.nu)?;
        if !(self.grid.x_min > 0.0 && self.grid.x_max > self.grid.x_min) {
            return Err(Error::Config(format!(
                "grid bounds must satisfy 0 < x_min < x_max, got ({}, {})",
                self.grid.x_min, self.grid.x_max
            )));
        }
        if self.grid.cells == 0 {
            return Err(Error::Config("grid.cells must be at least 1".into()));
        }
        if let Some(w) = &self.window {
            self.build_window_from(w)?;
        }
        if !(self.time.t_end > 0.0) {
            return Err(Error::Config("time.t_end must be positive".into()));
        }
        if self.time.output_times.is_none() && self.time.output_count.is_none() {
            return Err(Error::Config(
                "time needs either output_times or output_count".into(),
            ));
        }
        if let Some(times) = &self.time.output_times {
            for w in times.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::Config(
                        "output_times must be strictly increasing".into(),
                    ));
                }
            }
            if times.first().copied().unwrap_or(0.0) < 0.0
                || times.last().copied().unwrap_or(0.0) > self.time.t_end * (1.0 + 1e-12)
            {
                return Err(Error::Config(
                    "output_times must lie within [0, t_end]".into(),
                ));
            }
        }
        self.step_control().validate()?;
        if self.diagnostics.oracle && (self.kernel.alpha != 0.0 || self.kernel.beta != 0.0) {
            return Err(Error::Config(
                "diagnostics.oracle requires the constant kernel alpha = beta = 0".into(),
            ));
        }
        if let Some(sb) = &self.shatter_bound {
            if self.kernel.alpha >= 0.0 {
                return Err(Error::Config("shatter_bound requires alpha < 0".into()));
            }
            if !(sb.m0 > 1.0) {
                return Err(Error::Config("shatter_bound.m0 must exceed 1".into()));
            }
            if let Some(grid) = &sb.m_grid {
                let lo = -self.daughter.nu - 1.0;
                if grid.iter().any(|&m| m < lo || m >= 0.0) {
                    return Err(Error::Config(format!(
                        "shatter_bound.m_grid entries must lie in [{lo}, 0)"
                    )));
                }
            }
        }
        if let Some(sweep) = &self.sweep {
            SweepParameter::parse(&sweep.parameter)?;
            if sweep.values.len() < 2 {
                return Err(Error::Config("sweep needs at least two values".into()));
            }
            let inc = sweep.values.windows(2).all(|w| w[1] > w[0]);
            let dec = sweep.values.windows(2).all(|w| w[1] < w[0]);
            if !inc && !dec {
                return Err(Error::Config(
                    "sweep values must be strictly monotone".into(),
                ));
            }
            if let Some(p) = sweep.probe_time {
                if !(p > 0.0 && p <= self.time.t_end) {
                    return Err(Error::Config(
                        "sweep.probe_time must lie in (0, t_end]".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        KernelSpec::new(self.kernel.alpha, self.kernel.beta).expect("validated")
    }

    pub fn daughter_spec(&self) -> DaughterSpec {
        DaughterSpec::new(self.daughter.nu).expect("validated")
    }

    fn build_window_from(&self, w: &WindowSection) -> Result<TruncationWindow> {
        match (w.n, w.lower, w.upper) {
            (Some(n), None, None) => TruncationWindow::symmetric(n),
            (None, Some(lo), Some(hi)) => TruncationWindow::explicit(lo, hi),
            _ => Err(Error::Config(
                "window needs either `n` or both `lower` and `upper`".into(),
            )),
        }
    }

    pub fn truncation_window(&self) -> Result<Option<TruncationWindow>> {
        self.window
            .as_ref()
            .map(|w| self.build_window_from(w))
            .transpose()
    }

    pub fn initial_condition(&self) -> InitialCondition {
        match &self.initial {
            InitialSection::Exponential {
                amplitude,
                rate,
                support,
            } => InitialCondition::Exponential {
                amplitude: *amplitude,
                rate: *rate,
                support: support.map(|s| (s[0], s[1])),
            },
            InitialSection::Monodisperse { mass, location } => InitialCondition::Monodisperse {
                mass: *mass,
                location: *location,
            },
            InitialSection::PowerLaw {
                prefactor,
                exponent,
                lower,
                upper,
            } => InitialCondition::PowerLaw {
                prefactor: *prefactor,
                exponent: *exponent,
                lower: *lower,
                upper: *upper,
            },
            InitialSection::Tabulated { points } => InitialCondition::Tabulated {
                points: points.iter().map(|p| (p[0], p[1])).collect(),
            },
        }
    }

    pub fn step_control(&self) -> StepControl {
        StepControl {
            rel_tol: self.control.rel_tol,
            abs_tol: self.control.abs_tol,
            dt_init: self.control.dt_init,
            dt_min: self.control.dt_min,
            safety: self.control.safety,
            max_steps: self.control.max_steps,
        }
    }

    pub fn output_times(&self) -> Vec<f64> {
        if let Some(times) = &self.time.output_times {
            return times.clone();
        }
        let count = self.time.output_count.unwrap_or(11).max(2);
        (0..count)
            .map(|i| self.time.t_end * i as f64 / (count - 1) as f64)
            .collect()
    }

    /// Log-spaced tail probes strictly inside the grid window.
    pub fn tail_probes(&self) -> Vec<f64> {
        if let Some(p) = &self.diagnostics.tail_probes {
            return p.clone();
        }
        let k = self.diagnostics.tail_probe_count.max(1);
        let (l0, l1) = (self.grid.x_min.ln(), self.grid.x_max.ln());
        (0..k)
            .map(|i| (l0 + (l1 - l0) * (i as f64 + 0.5) / k as f64).exp())
            .collect()
    }

    pub fn shatter_size(&self) -> f64 {
        self.events.shatter_size.unwrap_or(100.0 * self.grid.x_min)
    }

    /// Default `m` grid for the shattering bound table: an approach to the
    /// divergent order `-nu-1` from above.
    pub fn shatter_m_grid(&self) -> Vec<f64> {
        if let Some(sb) = &self.shatter_bound {
            if let Some(g) = &sb.m_grid {
                return g.clone();
            }
        }
        let lo = -self.daughter.nu - 1.0;
        // fractions of the way from 0 down to the divergent order lo
        [0.1, 0.25, 0.4, 0.55, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99]
            .iter()
            .map(|f| f * lo)
            .collect()
    }
}
