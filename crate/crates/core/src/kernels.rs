//! Kernel families `h(t, τ)`, their integrated forms `h̃(t, τ) = ∫_τ^{t_n} h(t, s) ds`,
//! and the reduced-rank basis matrix over a knot grid.
//!
//! All integrated kernels are non-increasing in `τ`: they equal one for knots
//! well in the past of `t` and fall to zero for knots in its future. The tail-up,
//! tail-down and Gaussian kernels are normalized to unit mass over the real
//! line, so their integrated forms plateau at one.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::stats::{std_normal_pdf, std_normal_sf};
use crate::warp::WarpField;
use crate::{FmmError, Result};

/// Length of the standardized time domain `t_n - t_0`.
pub const DOMAIN_SPAN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KernelFamily {
    /// Brownian motion: point-mass kernel, step-function integrated kernel.
    Bm,
    /// Integrated Brownian motion: boxcar kernel, ramp integrated kernel.
    Ibm,
    /// Triangle over the past `[t - φ, t]`.
    TailUp,
    /// Triangle over the future `[t, t + φ]`.
    TailDown,
    /// Gaussian density with scale `φ`.
    Gaussian,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 5] = [
        KernelFamily::Bm,
        KernelFamily::Ibm,
        KernelFamily::TailUp,
        KernelFamily::TailDown,
        KernelFamily::Gaussian,
    ];

    pub fn code(self) -> &'static str {
        match self {
            KernelFamily::Bm => "BM",
            KernelFamily::Ibm => "IBM",
            KernelFamily::TailUp => "TU",
            KernelFamily::TailDown => "TD",
            KernelFamily::Gaussian => "G",
        }
    }

    /// Position in [`KernelFamily::ALL`]; used as the model index `l`.
    pub fn index(self) -> usize {
        KernelFamily::ALL.iter().position(|&f| f == self).unwrap()
    }

    /// BM and IBM carry no range parameter.
    pub fn is_phi_free(self) -> bool {
        matches!(self, KernelFamily::Bm | KernelFamily::Ibm)
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for KernelFamily {
    type Err = FmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BM" => Ok(KernelFamily::Bm),
            "IBM" => Ok(KernelFamily::Ibm),
            "TU" => Ok(KernelFamily::TailUp),
            "TD" => Ok(KernelFamily::TailDown),
            "G" => Ok(KernelFamily::Gaussian),
            other => Err(FmmError::Unknown(format!("kernel family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Temporal range; ignored by the φ-free families.
    pub phi: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, phi: f64) -> Result<Self> {
        if family.is_phi_free() {
            return Ok(KernelSpec { family, phi: 0.0 });
        }
        if !(phi.is_finite() && phi > 0.0) {
            return Err(FmmError::InvalidArgument(format!(
                "kernel {family} needs φ > 0, got {phi}"
            )));
        }
        Ok(KernelSpec { family, phi })
    }
}

fn check_finite(t: f64, tau: f64) -> Result<()> {
    if t.is_finite() && tau.is_finite() {
        Ok(())
    } else {
        Err(FmmError::NonFinite(format!("kernel argument (t={t}, τ={tau})")))
    }
}

/// Kernel `h(t, τ)`.
///
/// For BM the kernel is a Dirac mass at `τ = t`; this returns `+∞` there and
/// zero elsewhere.
pub fn eval_h(kernel: &KernelSpec, t: f64, tau: f64) -> Result<f64> {
    check_finite(t, tau)?;
    let phi = kernel.phi;
    Ok(match kernel.family {
        KernelFamily::Bm => {
            if tau == t {
                f64::INFINITY
            } else {
                0.0
            }
        }
        KernelFamily::Ibm => {
            if tau <= t {
                1.0
            } else {
                0.0
            }
        }
        KernelFamily::TailUp => {
            if tau >= t - phi && tau <= t {
                2.0 * (tau - (t - phi)) / (phi * phi)
            } else {
                0.0
            }
        }
        KernelFamily::TailDown => {
            if tau >= t && tau <= t + phi {
                2.0 * (t + phi - tau) / (phi * phi)
            } else {
                0.0
            }
        }
        KernelFamily::Gaussian => std_normal_pdf((tau - t) / phi) / phi,
    })
}

#[inline]
fn h_tilde_unchecked(family: KernelFamily, phi: f64, t: f64, tau: f64) -> f64 {
    match family {
        KernelFamily::Bm => {
            if tau <= t {
                1.0
            } else {
                0.0
            }
        }
        KernelFamily::Ibm => {
            if tau <= t {
                (t - tau) / DOMAIN_SPAN
            } else {
                0.0
            }
        }
        KernelFamily::TailUp => {
            if tau <= t - phi {
                1.0
            } else if tau <= t {
                let u = (t - tau) / phi;
                2.0 * u - u * u
            } else {
                0.0
            }
        }
        KernelFamily::TailDown => {
            if tau <= t {
                1.0
            } else if tau <= t + phi {
                let v = (tau - t) / phi;
                1.0 - (2.0 * v - v * v)
            } else {
                0.0
            }
        }
        KernelFamily::Gaussian => std_normal_sf((tau - t) / phi),
    }
}

/// Integrated kernel `h̃(t, τ)` in closed form.
pub fn eval_h_tilde(kernel: &KernelSpec, t: f64, tau: f64) -> Result<f64> {
    check_finite(t, tau)?;
    Ok(h_tilde_unchecked(kernel.family, kernel.phi, t, tau))
}

/// Points where `h(t, ·)` has a kink or a jump.
fn breakpoints(kernel: &KernelSpec, t: f64) -> Vec<f64> {
    match kernel.family {
        KernelFamily::Bm | KernelFamily::Ibm => vec![t],
        KernelFamily::TailUp => vec![t - kernel.phi, t],
        KernelFamily::TailDown => vec![t, t + kernel.phi],
        KernelFamily::Gaussian => vec![],
    }
}

/// Composite trapezoid rule on `[a, b]`, split at `breaks` so that jumps fall
/// on segment ends. Segment ends use one-sided values. The `n` intervals are
/// shared between segments in proportion to their length.
pub(crate) fn trapezoid_split<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], n: usize) -> f64 {
    let mut cuts = vec![a];
    cuts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    cuts.push(b);
    let total = b - a;
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let k = ((n as f64 * (hi - lo) / total).round() as usize).max(1);
        let h = (hi - lo) / k as f64;
        let mut seg = 0.5 * (f(lo.next_up()) + f(hi.next_down()));
        for i in 1..k {
            seg += f(lo + i as f64 * h);
        }
        acc += seg * h;
    }
    acc
}

/// Trapezoid-rule quadrature of `∫_τ^1 h(t, s) ds` with about `n_quad` intervals.
///
/// This is an independent check on [`eval_h_tilde`]: it only calls
/// [`eval_h`]. The range is split where `h(t, ·)` jumps so the rule keeps its
/// second-order accuracy. The Dirac kernel of BM cannot be sampled on a grid,
/// so its mass is added analytically. IBM is divided by [`DOMAIN_SPAN`] to
/// match the normalized ramp.
pub fn h_tilde_oracle(kernel: &KernelSpec, t: f64, tau: f64, n_quad: usize) -> Result<f64> {
    check_finite(t, tau)?;
    if n_quad < 100 {
        return Err(FmmError::InvalidArgument(format!(
            "n_quad must be at least 100, got {n_quad}"
        )));
    }
    let upper = DOMAIN_SPAN;
    if tau >= upper {
        return Ok(0.0);
    }
    if kernel.family == KernelFamily::Bm {
        return Ok(if tau <= t && t <= upper { 1.0 } else { 0.0 });
    }
    let f = |s: f64| eval_h(kernel, t, s).unwrap_or(0.0);
    let integral = trapezoid_split(f, tau, upper, &breakpoints(kernel, t), n_quad);
    Ok(if kernel.family == KernelFamily::Ibm {
        integral / DOMAIN_SPAN
    } else {
        integral
    })
}

/// Equally spaced knots on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotGrid {
    pub knots: Vec<f64>,
    pub spacing: f64,
}

impl KnotGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(FmmError::InvalidArgument(format!("need at least 2 knots, got {m}")));
        }
        let spacing = 1.0 / (m - 1) as f64;
        let mut knots: Vec<f64> = (0..m).map(|j| j as f64 * spacing).collect();
        knots[m - 1] = 1.0;
        Ok(KnotGrid { knots, spacing })
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }
}

/// `n × m` matrix of integrated kernels: row `i` is `h̃(w(t_i), ·)` over the knots.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    pub h: DMatrix<f64>,
    pub kernel: KernelSpec,
    pub warp_id: String,
    pub query_times: Vec<f64>,
}

impl BasisMatrix {
    pub fn nrows(&self) -> usize {
        self.h.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.h.ncols()
    }
}

/// Evaluate the basis at (warped) query times. Knots are never warped.
pub fn build_basis(
    query_times: &[f64],
    knots: &KnotGrid,
    kernel: &KernelSpec,
    warp: &WarpField,
) -> Result<BasisMatrix> {
    let warped = query_times
        .iter()
        .map(|&t| warp.eval(t))
        .collect::<Result<Vec<f64>>>()?;
    let h = basis_from_warped_times(&warped, knots, kernel)?;
    Ok(BasisMatrix {
        h,
        kernel: *kernel,
        warp_id: warp.id.clone(),
        query_times: query_times.to_vec(),
    })
}

/// Raw basis matrix for times that are already in the warped domain.
pub fn basis_from_warped_times(
    warped_times: &[f64],
    knots: &KnotGrid,
    kernel: &KernelSpec,
) -> Result<DMatrix<f64>> {
    if let Some(t) = warped_times.iter().find(|t| !t.is_finite()) {
        return Err(FmmError::NonFinite(format!("query time {t}")));
    }
    let (n, m) = (warped_times.len(), knots.len());
    let (family, phi) = (kernel.family, kernel.phi);
    Ok(DMatrix::from_fn(n, m, |i, j| {
        h_tilde_unchecked(family, phi, warped_times[i], knots.knots[j])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn spec(f: KernelFamily, phi: f64) -> KernelSpec {
        KernelSpec::new(f, phi).unwrap()
    }

    #[test]
    fn ibm_kernel_is_indicator_of_past() {
        let k = spec(KernelFamily::Ibm, 0.0);
        assert_eq!(eval_h(&k, 0.6, 0.2).unwrap(), 1.0);
        assert_eq!(eval_h(&k, 0.6, 0.6).unwrap(), 1.0);
        assert_eq!(eval_h(&k, 0.6, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn triangle_and_gaussian_peaks() {
        let tu = spec(KernelFamily::TailUp, 0.1);
        assert!((eval_h(&tu, 0.5, 0.5).unwrap() - 20.0).abs() < 1e-12);
        let g = spec(KernelFamily::Gaussian, 0.1);
        let expected = 1.0 / (0.1 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((eval_h(&g, 0.5, 0.5).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 3.989).abs() < 1e-3);
    }

    #[test]
    fn kernels_have_unit_mass() {
        // trapezoid over a range wide enough to hold the full support
        for f in [KernelFamily::TailUp, KernelFamily::TailDown, KernelFamily::Gaussian] {
            let k = spec(f, 0.07);
            let f_h = |s: f64| eval_h(&k, 0.5, s).unwrap();
            let mass = trapezoid_split(f_h, -1.0, 2.0, &breakpoints(&k, 0.5), 300_000);
            assert!((mass - 1.0).abs() < 1e-6, "{f}: mass {mass}");
        }
    }

    #[test]
    fn closed_form_examples() {
        let bm = spec(KernelFamily::Bm, 0.0);
        assert_eq!(eval_h_tilde(&bm, 0.7, 0.3).unwrap(), 1.0);
        assert_eq!(eval_h_tilde(&bm, 0.7, 0.9).unwrap(), 0.0);
        let g = spec(KernelFamily::Gaussian, 0.05);
        assert!((eval_h_tilde(&g, 0.4, 0.4).unwrap() - 0.5).abs() < 1e-15);
        let tu = spec(KernelFamily::TailUp, 0.1);
        assert_eq!(eval_h_tilde(&tu, 0.5, 0.35).unwrap(), 1.0);
        assert!((eval_h_tilde(&tu, 0.5, 0.45).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(eval_h_tilde(&tu, 0.5, 0.55).unwrap(), 0.0);
        let td = spec(KernelFamily::TailDown, 0.1);
        assert_eq!(eval_h_tilde(&td, 0.5, 0.45).unwrap(), 1.0);
        assert!((eval_h_tilde(&td, 0.5, 0.55).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(eval_h_tilde(&td, 0.5, 0.65).unwrap(), 0.0);
        assert!(eval_h_tilde(&g, f64::NAN, 0.1).is_err());
    }

    #[test]
    fn oracle_examples() {
        let g = spec(KernelFamily::Gaussian, 0.05);
        assert!((h_tilde_oracle(&g, 0.5, 0.5, 100_000).unwrap() - 0.5).abs() < 1e-5);
        let tu = spec(KernelFamily::TailUp, 0.1);
        // the analytic value by hand: 2(0.05)/0.1 - 0.05²/0.01
        assert!((h_tilde_oracle(&tu, 0.5, 0.45, 100_000).unwrap() - 0.75).abs() < 1e-5);
        for f in KernelFamily::ALL {
            assert_eq!(h_tilde_oracle(&spec(f, 0.1), 0.5, 1.0, 1000).unwrap(), 0.0);
        }
        assert!(h_tilde_oracle(&g, 0.5, 0.5, 10).is_err());
    }

    #[test]
    fn closed_forms_match_oracle_away_from_upper_boundary() {
        let mut rng = rng_from_seed(11);
        for f in [KernelFamily::Ibm, KernelFamily::TailUp, KernelFamily::TailDown, KernelFamily::Gaussian] {
            for _ in 0..20 {
                let phi: f64 = rng.random_range(0.001..0.1);
                let t: f64 = rng.random_range(0.0..(1.0 - 8.0 * phi));
                let tau: f64 = rng.random_range(0.0..1.0);
                let k = spec(f, phi);
                let a = eval_h_tilde(&k, t, tau).unwrap();
                let b = h_tilde_oracle(&k, t, tau, 100_000).unwrap();
                assert!((a - b).abs() < 1e-4, "{f} t={t} τ={tau} φ={phi}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn knot_grid_is_regular() {
        let g = KnotGrid::new(401).unwrap();
        assert_eq!(g.knots[0], 0.0);
        assert_eq!(g.knots[400], 1.0);
        for w in g.knots.windows(2) {
            assert!((w[1] - w[0] - g.spacing).abs() < 1e-12);
        }
        assert!(KnotGrid::new(1).is_err());
    }

    #[test]
    fn bm_basis_on_knots_is_lower_triangular() {
        let knots = KnotGrid::new(6).unwrap();
        let b = build_basis(&knots.knots, &knots, &spec(KernelFamily::Bm, 0.0), &WarpField::identity(101)).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(b.h[(i, j)], if j <= i { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn single_row_gaussian_basis() {
        let knots = KnotGrid::new(11).unwrap();
        let k = spec(KernelFamily::Gaussian, 0.2);
        let b = build_basis(&[1.0], &knots, &k, &WarpField::identity(101)).unwrap();
        for j in 0..11 {
            let expect = 1.0 - crate::stats::std_normal_cdf((knots.knots[j] - 1.0) / 0.2);
            assert!((b.h[(0, j)] - expect).abs() < 1e-14);
        }
        assert!(b.h.row(0).iter().zip(b.h.row(0).iter().skip(1)).all(|(a, c)| a > c));
    }

    #[test]
    fn identity_warp_equals_linear_field() {
        let knots = KnotGrid::new(50).unwrap();
        let times: Vec<f64> = (0..37).map(|i| i as f64 / 36.0).collect();
        let grid: Vec<f64> = (0..401).map(|i| i as f64 / 400.0).collect();
        let linear = WarpField::from_values("lin", grid.clone(), grid, None).unwrap();
        for f in KernelFamily::ALL {
            let k = spec(f, 0.03);
            let a = build_basis(&times, &knots, &k, &WarpField::identity(401)).unwrap();
            let b = build_basis(&times, &knots, &k, &linear).unwrap();
            assert!((a.h - b.h).abs().max() < 1e-12);
        }
    }

    #[test]
    fn rows_are_monotone_and_bounded() {
        let knots = KnotGrid::new(80).unwrap();
        let times: Vec<f64> = (0..60).map(|i| (i as f64 / 59.0).powf(1.3)).collect();
        for f in KernelFamily::ALL {
            let b = build_basis(&times, &knots, &spec(f, 0.04), &WarpField::identity(401)).unwrap();
            for i in 0..b.nrows() {
                for j in 1..b.ncols() {
                    assert!(b.h[(i, j)] <= b.h[(i, j - 1)]);
                }
                for j in 0..b.ncols() {
                    let v = b.h[(i, j)];
                    assert!(v >= 0.0);
                    if f != KernelFamily::Ibm {
                        assert!(v <= 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn family_codes_round_trip() {
        for f in KernelFamily::ALL {
            assert_eq!(f.code().parse::<KernelFamily>().unwrap(), f);
        }
        assert!("XYZ".parse::<KernelFamily>().is_err());
    }
}
