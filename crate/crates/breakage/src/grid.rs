//! Geometric size grid and cell-averaged density states.

use crate::error::{Error, Result};
use crate::numeric::Csum;
use std::io::Write;
use std::sync::Arc;

/// Geometric mesh on `[x_min, x_max]` with `N` cells.
///
/// Edges satisfy `edges[i+1]/edges[i] = r` with `r = (x_max/x_min)^(1/N)`;
/// pivots are the geometric means of adjacent edges. Power-law kernels and
/// daughters are scale free, so a geometric mesh gives uniform relative
/// resolution and closed-form cell moments.
#[derive(Debug, PartialEq)]
pub struct SizeGrid {
    edges: Vec<f64>,
    pivots: Vec<f64>,
    widths: Vec<f64>,
    /// Closed-form cell masses per unit value, `int_cell x dx`.
    mass_weights: Vec<f64>,
    ratio: f64,
}

impl SizeGrid {
    pub fn build(x_min: f64, x_max: f64, cells: usize) -> Result<Arc<Self>> {
        if !(x_min > 0.0) || !(x_max > x_min) {
            return Err(Error::Config(format!(
                "grid bounds must satisfy 0 < x_min < x_max, got ({x_min}, {x_max})"
            )));
        }
        if cells == 0 {
            return Err(Error::Config("grid needs at least one cell".into()));
        }
        let n = cells;
        let log_span = (x_max / x_min).ln();
        let mut edges: Vec<f64> = (0..=n)
            .map(|i| x_min * (log_span * i as f64 / n as f64).exp())
            .collect();
        edges[0] = x_min;
        edges[n] = x_max;
        for i in 0..n {
            if edges[i + 1] <= edges[i] {
                return Err(Error::Config(
                    "grid too fine for the requested span: edges not strictly increasing".into(),
                ));
            }
        }
        let pivots: Vec<f64> = (0..n).map(|i| (edges[i] * edges[i + 1]).sqrt()).collect();
        let widths: Vec<f64> = (0..n).map(|i| edges[i + 1] - edges[i]).collect();
        let mass_weights: Vec<f64> = (0..n)
            .map(|i| 0.5 * (edges[i + 1] * edges[i + 1] - edges[i] * edges[i]))
            .collect();
        let ratio = (log_span / n as f64).exp();
        Ok(Arc::new(Self {
            edges,
            pivots,
            widths,
            mass_weights,
            ratio,
        }))
    }

    pub fn cell_count(&self) -> usize {
        self.pivots.len()
    }

    pub fn x_min(&self) -> f64 {
        self.edges[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.edges.last().unwrap()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn pivots(&self) -> &[f64] {
        &self.pivots
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// `int_cell x dx` for each cell.
    pub fn mass_weights(&self) -> &[f64] {
        &self.mass_weights
    }

    /// Edge ratio `r > 1`.
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// Closed-form `int_cell x^m dx`; the `m = -1` case uses the logarithm.
    pub fn cell_moment_weight(&self, i: usize, m: f64) -> f64 {
        let (a, b) = (self.edges[i], self.edges[i + 1]);
        if (m + 1.0).abs() < 1e-14 {
            (b / a).ln()
        } else {
            (b.powf(m + 1.0) - a.powf(m + 1.0)) / (m + 1.0)
        }
    }

    /// Index of the cell containing `x`, if any.
    pub fn locate(&self, x: f64) -> Option<usize> {
        if x < self.x_min() || x > self.x_max() {
            return None;
        }
        let i = match self.edges.binary_search_by(|e| e.partial_cmp(&x).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        Some(i.min(self.cell_count() - 1))
    }

    /// Index of the edge nearest to `x` (by log distance).
    pub fn nearest_edge(&self, x: f64) -> usize {
        let x = x.clamp(self.x_min(), self.x_max());
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &e) in self.edges.iter().enumerate() {
            let d = (e.ln() - x.ln()).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn same_mesh(&self, other: &SizeGrid) -> bool {
        self.edges == other.edges
    }
}

/// Cell-averaged number density at a point in time.
///
/// `values[i]` approximates the average of `f` over cell `i`, so cell `i`
/// holds `values[i] * width(i)` particles and `values[i] * int_cell x dx`
/// mass.
#[derive(Clone, Debug)]
pub struct DensityState {
    grid: Arc<SizeGrid>,
    values: Vec<f64>,
    time: f64,
}

impl DensityState {
    pub fn new(grid: Arc<SizeGrid>, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::Contract(format!(
                "state length {} does not match grid with {} cells",
                values.len(),
                grid.cell_count()
            )));
        }
        Ok(Self { grid, values, time })
    }

    pub fn zero(grid: Arc<SizeGrid>) -> Self {
        let n = grid.cell_count();
        Self {
            grid,
            values: vec![0.0; n],
            time: 0.0,
        }
    }

    pub fn grid(&self) -> &Arc<SizeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn number(&self, i: usize) -> f64 {
        self.values[i] * self.grid.widths()[i]
    }

    pub fn cell_mass(&self, i: usize) -> f64 {
        self.values[i] * self.grid.mass_weights()[i]
    }

    pub fn total_number(&self) -> f64 {
        let mut s = Csum::new();
        for i in 0..self.values.len() {
            s.add(self.number(i));
        }
        s.value()
    }

    /// Mass in the sectional conservation measure, `sum_i n_i x_i`, which the
    /// operator preserves exactly (up to tracked escape).
    pub fn pivot_mass(&self) -> f64 {
        let piv = self.grid.pivots();
        let w = self.grid.widths();
        let mut s = Csum::new();
        for i in 0..self.values.len() {
            s.add(self.values[i] * w[i] * piv[i]);
        }
        s.value()
    }

    /// Columnar snapshot: `# time=<t>` then
    /// `edge_left edge_right pivot value number mass` per cell.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# time={:.11e}", self.time)?;
        let g = &self.grid;
        for i in 0..self.values.len() {
            writeln!(
                out,
                "{:.11e} {:.11e} {:.11e} {:.11e} {:.11e} {:.11e}",
                g.edges()[i],
                g.edges()[i + 1],
                g.pivots()[i],
                self.values[i],
                self.number(i),
                self.cell_mass(i),
            )?;
        }
        Ok(())
    }
}

/// Closed-form initial conditions for projection onto a grid.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialCondition {
    /// `f(x) = amplitude * exp(-rate x)`, optionally cut to a support interval.
    Exponential {
        amplitude: f64,
        rate: f64,
        support: Option<(f64, f64)>,
    },
    /// All mass at one location, deposited into the containing cell.
    Monodisperse { mass: f64, location: f64 },
    /// `f(x) = prefactor * x^exponent` on `[lower, upper]`.
    PowerLaw {
        prefactor: f64,
        exponent: f64,
        lower: f64,
        upper: f64,
    },
    /// Piecewise-linear interpolation through `(x, f)` samples.
    Tabulated { points: Vec<(f64, f64)> },
}

/// A projected initial state together with the mass unaccounted for because
/// it lay outside `[x_min, x_max]`.
#[derive(Clone, Debug)]
pub struct Projection {
    pub state: DensityState,
    /// Continuum mass of the data over its full support.
    pub total_mass: f64,
    /// Continuum mass outside the grid window.
    pub projection_loss: f64,
}

fn exp_number_integral(rate: f64, a: f64, b: f64) -> f64 {
    // int_a^b e^{-r x} dx
    ((-rate * a).exp() - (-rate * b).exp()) / rate
}

fn exp_mass_integral(rate: f64, a: f64, b: f64) -> f64 {
    // int_a^b x e^{-r x} dx
    let f = |x: f64| -(x / rate + 1.0 / (rate * rate)) * (-rate * x).exp();
    f(b) - f(a)
}

fn pow_integral(q: f64, a: f64, b: f64) -> f64 {
    if (q + 1.0).abs() < 1e-14 {
        (b / a).ln()
    } else {
        (b.powf(q + 1.0) - a.powf(q + 1.0)) / (q + 1.0)
    }
}

/// Project a closed-form density onto the grid by exact cell integration
/// (exponential, power law, tabulated) or mass-preserving deposition
/// (monodisperse).
pub fn project_initial(grid: &Arc<SizeGrid>, f: &InitialCondition) -> Result<Projection> {
    let n = grid.cell_count();
    let edges = grid.edges();
    let mut values = vec![0.0; n];

    let (total_mass, on_grid_mass) = match f {
        InitialCondition::Exponential {
            amplitude,
            rate,
            support,
        } => {
            if !(*amplitude >= 0.0) || !(*rate > 0.0) {
                return Err(Error::Config(
                    "exponential data needs amplitude >= 0 and rate > 0".into(),
                ));
            }
            let (lo, hi) = support.unwrap_or((0.0, f64::INFINITY));
            if !(hi > lo) || lo < 0.0 {
                return Err(Error::Config(format!("bad support interval ({lo}, {hi})")));
            }
            for i in 0..n {
                let a = edges[i].max(lo);
                let b = edges[i + 1].min(hi);
                if b > a {
                    values[i] = amplitude * exp_number_integral(*rate, a, b) / grid.widths()[i];
                }
            }
            let total = amplitude * exp_mass_integral(*rate, lo, hi.min(1e306));
            let a = grid.x_min().max(lo);
            let b = grid.x_max().min(hi);
            let on_grid = if b > a {
                amplitude * exp_mass_integral(*rate, a, b)
            } else {
                0.0
            };
            (total, on_grid)
        }
        InitialCondition::Monodisperse { mass, location } => {
            if !(*mass > 0.0) {
                return Err(Error::Config("monodisperse mass must be positive".into()));
            }
            let cell = grid.locate(*location).ok_or_else(|| {
                Error::Config(format!(
                    "monodisperse location {location} lies outside the grid [{}, {}]",
                    grid.x_min(),
                    grid.x_max()
                ))
            })?;
            values[cell] = mass / grid.mass_weights()[cell];
            (*mass, *mass)
        }
        InitialCondition::PowerLaw {
            prefactor,
            exponent,
            lower,
            upper,
        } => {
            if !(*prefactor >= 0.0) || !(*lower > 0.0) || !(*upper > *lower) {
                return Err(Error::Config("bad power-law parameters".into()));
            }
            for i in 0..n {
                let a = edges[i].max(*lower);
                let b = edges[i + 1].min(*upper);
                if b > a {
                    values[i] = prefactor * pow_integral(*exponent, a, b) / grid.widths()[i];
                }
            }
            let total = prefactor * pow_integral(exponent + 1.0, *lower, *upper);
            let a = grid.x_min().max(*lower);
            let b = grid.x_max().min(*upper);
            let on_grid = if b > a {
                prefactor * pow_integral(exponent + 1.0, a, b)
            } else {
                0.0
            };
            (total, on_grid)
        }
        InitialCondition::Tabulated { points } => {
            if points.len() < 2 {
                return Err(Error::Config(
                    "tabulated data needs at least two points".into(),
                ));
            }
            for w in points.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(Error::Config("tabulated abscissae must increase".into()));
                }
            }
            // exact integrals of the piecewise-linear interpolant
            let seg_integrals = |a: f64, b: f64, weight_x: bool| -> f64 {
                let mut acc = Csum::new();
                for w in points.windows(2) {
                    let (x0, f0) = w[0];
                    let (x1, f1) = w[1];
                    let lo = a.max(x0);
                    let hi = b.min(x1);
                    if hi <= lo {
                        continue;
                    }
                    let slope = (f1 - f0) / (x1 - x0);
                    let fa = f0 + slope * (lo - x0);
                    let fb = f0 + slope * (hi - x0);
                    if weight_x {
                        // int x (c0 + c1 x) dx with linear reconstruction
                        let c1 = slope;
                        let c0 = fa - c1 * lo;
                        acc.add(
                            c0 * (hi * hi - lo * lo) / 2.0
                                + c1 * (hi * hi * hi - lo * lo * lo) / 3.0,
                        );
                    } else {
                        acc.add(0.5 * (fa + fb) * (hi - lo));
                    }
                }
                acc.value()
            };
            for i in 0..n {
                values[i] = seg_integrals(edges[i], edges[i + 1], false) / grid.widths()[i];
            }
            let (x0, x1) = (points[0].0, points.last().unwrap().0);
            let total = seg_integrals(x0, x1, true);
            let on_grid = seg_integrals(grid.x_min().max(x0), grid.x_max().min(x1), true);
            (total, on_grid)
        }
    };

    let state = DensityState::new(grid.clone(), values, 0.0)?;
    Ok(Projection {
        state,
        total_mass,
        projection_loss: (total_mass - on_grid_mass).max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::moment;

    #[test]
    fn build_examples() {
        let g = SizeGrid::build(1e-4, 1e4, 8).unwrap();
        assert!((g.ratio() - 10.0).abs() < 1e-12);
        for (i, &e) in g.edges().iter().enumerate() {
            let expect = 1e-4 * 10f64.powi(i as i32);
            assert!((e - expect).abs() <= 1e-12 * expect);
        }

        let g = SizeGrid::build(1.0, 2.0, 1).unwrap();
        assert_eq!(g.cell_count(), 1);
        assert_eq!(g.edges(), &[1.0, 2.0]);

        assert!(SizeGrid::build(2.0, 1.0, 4).is_err());
        assert!(SizeGrid::build(0.0, 1.0, 4).is_err());
    }

    #[test]
    fn pivots_sit_inside_cells() {
        let g = SizeGrid::build(1e-3, 1e3, 77).unwrap();
        for i in 0..g.cell_count() {
            assert!(g.edges()[i] < g.pivots()[i] && g.pivots()[i] < g.edges()[i + 1]);
        }
    }

    #[test]
    fn exponential_projection_reproduces_gamma_moments() {
        let g = SizeGrid::build(1e-4, 1e3, 256).unwrap();
        let p = project_initial(
            &g,
            &InitialCondition::Exponential {
                amplitude: 1.0,
                rate: 1.0,
                support: None,
            },
        )
        .unwrap();
        let m0 = moment(&p.state, 0.0);
        let m1 = moment(&p.state, 1.0);
        assert!((m0 - 1.0).abs() < 1e-3, "M0 = {m0}");
        assert!((m1 - 1.0).abs() < 1e-3, "M1 = {m1}");
        assert!(p.projection_loss < 1e-3);
        // M2 of e^-x is Gamma(3) = 2 within projection error
        let m2 = moment(&p.state, 2.0);
        assert!((m2 - 2.0).abs() < 5e-3, "M2 = {m2}");
    }

    #[test]
    fn monodisperse_projection_is_exact_single_cell() {
        let g = SizeGrid::build(1e-2, 1e2, 64).unwrap();
        let p = project_initial(
            &g,
            &InitialCondition::Monodisperse {
                mass: 1.0,
                location: 1.0,
            },
        )
        .unwrap();
        let nonzero: Vec<usize> = (0..64).filter(|&i| p.state.values()[i] != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert!((moment(&p.state, 1.0) - 1.0).abs() < 1e-14);
        assert_eq!(p.projection_loss, 0.0);

        assert!(project_initial(
            &g,
            &InitialCondition::Monodisperse {
                mass: 1.0,
                location: 1e4
            }
        )
        .is_err());
    }

    #[test]
    fn off_window_data_reports_loss() {
        let g = SizeGrid::build(10.0, 100.0, 16).unwrap();
        let p = project_initial(
            &g,
            &InitialCondition::Exponential {
                amplitude: 1.0,
                rate: 1.0,
                support: None,
            },
        )
        .unwrap();
        assert!(p.projection_loss > 0.9, "mode at x=1 lies below the grid");
    }

    #[test]
    fn tabulated_projection_integrates_the_interpolant() {
        let g = SizeGrid::build(0.5, 8.0, 32).unwrap();
        // hat function peaking at x = 2
        let p = project_initial(
            &g,
            &InitialCondition::Tabulated {
                points: vec![(1.0, 0.0), (2.0, 1.0), (4.0, 0.0)],
            },
        )
        .unwrap();
        // number: area of the hat = 1.5; mass: int x f = 5/6 + 8/3 = 3.5
        let m0 = moment(&p.state, 0.0);
        assert!((m0 - 1.5).abs() < 2e-2 * 1.5, "M0 = {m0}");
        assert!(
            (p.total_mass - 3.5).abs() < 1e-12,
            "mass = {}",
            p.total_mass
        );
        assert_eq!(p.projection_loss, 0.0);

        assert!(project_initial(
            &g,
            &InitialCondition::Tabulated {
                points: vec![(2.0, 1.0), (1.0, 0.0)]
            }
        )
        .is_err());
    }

    #[test]
    fn snapshot_format() {
        let g = SizeGrid::build(1.0, 4.0, 2).unwrap();
        let s = DensityState::new(g, vec![1.0, 0.5], 0.25).unwrap();
        let mut buf = Vec::new();
        s.write_snapshot(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# time=2.50000000000e-1");
        let row: Vec<&str> = lines.next().unwrap().split(' ').collect();
        assert_eq!(row.len(), 6);
    }
}
