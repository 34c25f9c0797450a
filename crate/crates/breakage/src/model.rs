//! Collision kernels, daughter distributions, and numeric certification of
//! their structural hypotheses.
//!
//! The kernel family is `K(x,y) = x^a y^b + x^b y^a` with `a <= b <= 1`; its
//! homogeneity degree `lambda = a + b` separates global existence
//! (`lambda in [1,2]`) from finite-time behaviour (`lambda in [0,1)`).
//!
//! The built-in daughter family is the power law
//! `b(z,x) = (nu+2) z^nu x^(-nu-1)` on `0 < z < x`, `nu in (-1, 0]`. Each
//! parent fragments into pieces no larger than itself and the fragment mass
//! equals the parent mass, so total mass is conserved collision by collision.

use crate::error::{Error, Result};
use crate::numeric::quad_de;
use serde::Serialize;

/// Power-law collision kernel `K(x,y) = x^alpha y^beta + x^beta y^alpha`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    alpha: f64,
    beta: f64,
    lambda: f64,
}

impl KernelSpec {
    /// Requires `alpha <= beta <= 1` and finite exponents.
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::Config("kernel exponents must be finite".into()));
        }
        if alpha > beta {
            return Err(Error::Config(format!(
                "kernel requires alpha <= beta, got alpha={alpha}, beta={beta}"
            )));
        }
        if beta > 1.0 {
            return Err(Error::Config(format!(
                "kernel requires beta <= 1, got beta={beta}"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            lambda: alpha + beta,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Homogeneity degree `alpha + beta`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Collision rate for sizes `x, y > 0`, optionally truncated to a window.
    ///
    /// The expression `x^a y^b + x^b y^a` is symmetric term by term, so the
    /// returned value is bit-identical under swapping `x` and `y`.
    pub fn eval(&self, window: Option<&TruncationWindow>, x: f64, y: f64) -> Result<f64> {
        if !(x > 0.0) || !(y > 0.0) {
            return Err(Error::Domain(format!(
                "kernel arguments must be positive, got x={x}, y={y}"
            )));
        }
        if let Some(w) = window {
            if !w.contains(x) || !w.contains(y) {
                return Ok(0.0);
            }
        }
        Ok(x.powf(self.alpha) * y.powf(self.beta) + x.powf(self.beta) * y.powf(self.alpha))
    }
}

/// Size window `(lower, upper)` outside which the kernel is switched off.
///
/// The symmetric form is `(1/n, n)` for `n > 1`; the cutoffs are stored
/// separately so sweeps can move the lower one on its own.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationWindow {
    lower: f64,
    upper: f64,
}

impl TruncationWindow {
    /// Symmetric window `(1/n, n)`, `n > 1`.
    pub fn symmetric(n: f64) -> Result<Self> {
        if !(n > 1.0) {
            return Err(Error::Config(format!(
                "truncation parameter must exceed 1, got n={n}"
            )));
        }
        Ok(Self {
            lower: 1.0 / n,
            upper: n,
        })
    }

    /// Window with independent cutoffs `0 < lower < upper`.
    pub fn explicit(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0) || !(upper > lower) {
            return Err(Error::Config(format!(
                "window cutoffs must satisfy 0 < lower < upper, got ({lower}, {upper})"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// Open-interval membership.
    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lower < x && x < self.upper
    }
}

/// A single-parent fragment density `b(z, x)` for `0 < z < x`.
///
/// The two-parent distribution is `b(z,x) + b(z,y)`: each collision partner
/// fragments independently into pieces smaller than itself. Implementations
/// must conserve the parent mass, `int_0^x z b(z,x) dz = x`; this is what
/// [`certify`] checks numerically.
pub trait DaughterDistribution {
    fn eval(&self, z: f64, x: f64) -> f64;
}

/// Power-law daughter `b(z,x) = (nu+2) z^nu x^(-nu-1)`, `nu in (-1, 0]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DaughterSpec {
    nu: f64,
}

impl DaughterSpec {
    /// Requires `nu in (-1, 0]`; the constants below all stay finite there.
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu > -1.0 && nu <= 0.0) {
            return Err(Error::Config(format!(
                "daughter exponent must lie in (-1, 0], got nu={nu}"
            )));
        }
        Ok(Self { nu })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Total fragment count per collision, `beta0 = 2(nu+2)/(nu+1)`.
    ///
    /// Always exceeds 2: every collision creates particles.
    pub fn beta0(&self) -> f64 {
        2.0 * (self.nu + 2.0) / (self.nu + 1.0)
    }

    /// `gamma_lambda = (nu+2)/(nu+lambda+1)`, the lambda-moment of the
    /// fragments relative to the parent. Exceeds 1 for `lambda in [0,1)`.
    pub fn gamma(&self, lambda: f64) -> Result<f64> {
        let d = self.nu + lambda + 1.0;
        if d <= 0.0 {
            return Err(Error::DivergentMoment(format!(
                "gamma undefined for lambda={lambda} with nu={}",
                self.nu
            )));
        }
        Ok((self.nu + 2.0) / d)
    }

    /// `B_p = 2(nu+2)^p/(1+nu p)`, valid for `p in (1,2)` with `p < 1/|nu|`.
    pub fn bp(&self, p: f64) -> Result<f64> {
        if !(p > 1.0 && p < 2.0) {
            return Err(Error::Config(format!("p must lie in (1,2), got p={p}")));
        }
        if 1.0 + self.nu * p <= 0.0 {
            return Err(Error::Config(format!(
                "p={p} out of admissible range for nu={}: requires p < 1/|nu|",
                self.nu
            )));
        }
        Ok(2.0 * (self.nu + 2.0).powf(p) / (1.0 + self.nu * p))
    }

    /// Fragment density at size `z` from a parent of size `x`.
    pub fn eval(&self, z: f64, x: f64) -> Result<f64> {
        if !(z > 0.0) || !(x > 0.0) {
            return Err(Error::Domain(format!(
                "daughter arguments must be positive, got z={z}, x={x}"
            )));
        }
        if z >= x {
            return Ok(0.0);
        }
        Ok((self.nu + 2.0) * z.powf(self.nu) * x.powf(-self.nu - 1.0))
    }

    /// Closed-form partial moment
    /// `int_a^c z^m b(z,x) dz = (nu+2)/(m+nu+1) x^(-nu-1) (c^(m+nu+1) - a^(m+nu+1))`.
    ///
    /// Requires `0 <= a <= c <= x` and `m + nu + 1 > 0`. This is the only
    /// daughter integral the sectional tables use; no quadrature enters the
    /// hot path.
    pub fn partial_moment(&self, m: f64, x: f64, a: f64, c: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::Domain(format!(
                "parent size must be positive, got x={x}"
            )));
        }
        if !(0.0 <= a && a <= c && c <= x * (1.0 + 1e-12)) {
            return Err(Error::Domain(format!(
                "moment limits must satisfy 0 <= a <= c <= x, got a={a}, c={c}, x={x}"
            )));
        }
        let q = m + self.nu + 1.0;
        if q <= 0.0 {
            return Err(Error::DivergentMoment(format!(
                "daughter moment of order m={m} diverges for nu={}",
                self.nu
            )));
        }
        let c = c.min(x);
        Ok((self.nu + 2.0) / q * x.powf(-self.nu - 1.0) * (c.powf(q) - a.powf(q)))
    }
}

impl DaughterDistribution for DaughterSpec {
    fn eval(&self, z: f64, x: f64) -> f64 {
        DaughterSpec::eval(self, z, x).unwrap_or(0.0)
    }
}

/// Analytic constants a daughter family claims to satisfy; [`certify`]
/// compares them against direct quadrature of the density.
#[derive(Clone, Copy, Debug)]
pub struct DaughterConstants {
    pub beta0: f64,
    pub bp: f64,
    pub gamma: f64,
}

/// Outcome of certifying the daughter hypotheses on a sample of parent sizes.
#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub nu: f64,
    pub lambda: f64,
    pub p: f64,
    pub beta0_numeric: f64,
    pub beta0_analytic: f64,
    pub bp_numeric: f64,
    pub bp_analytic: f64,
    pub gamma_numeric: f64,
    pub gamma_analytic: f64,
    /// `max_x |int_0^x z b(z,x) dz - x| / x` over the sampled parents.
    pub mass_moment_residual: f64,
    pub tolerance: f64,
    pub all_pass: bool,
}

fn log_sample(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..count)
        .map(|j| (l0 + (l1 - l0) * j as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Certify a daughter family against claimed constants by quadrature.
///
/// Integrates the fragment count, the `p`-norm, the `lambda`-moment, and the
/// mass moment of `daughter` over parents sampled logarithmically on
/// `[1e-6, 1e6]`, then compares with `claimed`.
pub fn certify<D: DaughterDistribution>(
    daughter: &D,
    lambda: f64,
    p: f64,
    claimed: DaughterConstants,
    tolerance: f64,
    parents: &[f64],
) -> AssumptionReport {
    let quad_tol = (tolerance * 1e-2).min(1e-9);
    let mut beta0_num: f64 = 0.0;
    let mut bp_num: f64 = 0.0;
    let mut gamma_num = f64::INFINITY;
    let mut mass_res: f64 = 0.0;

    for &x in parents {
        let count = quad_de(|z| daughter.eval(z, x), 0.0, x, quad_tol).value;
        beta0_num = beta0_num.max(2.0 * count);

        let pnorm = quad_de(|z| daughter.eval(z, x).powf(p), 0.0, x, quad_tol).value;
        bp_num = bp_num.max(2.0 * x.powf(p - 1.0) * pnorm);

        let lmom = quad_de(|z| z.powf(lambda) * daughter.eval(z, x), 0.0, x, quad_tol).value;
        gamma_num = gamma_num.min(lmom / x.powf(lambda));

        let mass = quad_de(|z| z * daughter.eval(z, x), 0.0, x, quad_tol).value;
        mass_res = mass_res.max((mass - x).abs() / x);
    }

    let rel = |num: f64, ana: f64| (num - ana).abs() / ana.abs().max(f64::MIN_POSITIVE);
    let all_pass = rel(beta0_num, claimed.beta0) <= tolerance
        && rel(bp_num, claimed.bp) <= tolerance
        && rel(gamma_num, claimed.gamma) <= tolerance
        && mass_res <= tolerance;

    AssumptionReport {
        nu: f64::NAN,
        lambda,
        p,
        beta0_numeric: beta0_num,
        beta0_analytic: claimed.beta0,
        bp_numeric: bp_num,
        bp_analytic: claimed.bp,
        gamma_numeric: gamma_num,
        gamma_analytic: claimed.gamma,
        mass_moment_residual: mass_res,
        tolerance,
        all_pass,
    }
}

/// Certify the built-in power-law family against its own analytic constants.
///
/// Parents are sampled on a fixed 49-point logarithmic grid over
/// `[1e-6, 1e6]`; the hypotheses are scale-homogeneous for the power-law
/// family, so sparse sampling suffices.
pub fn certify_assumptions(
    kernel: &KernelSpec,
    daughter: &DaughterSpec,
    p: f64,
    tolerance: f64,
) -> Result<AssumptionReport> {
    let claimed = DaughterConstants {
        beta0: daughter.beta0(),
        bp: daughter.bp(p)?,
        gamma: daughter.gamma(kernel.lambda())?,
    };
    let parents = log_sample(1e-6, 1e6, 49);
    let mut report = certify(daughter, kernel.lambda(), p, claimed, tolerance, &parents);
    report.nu = daughter.nu();
    Ok(report)
}
