//! Analytic level-sets, force and boundary-data fields, and the random
//! samplers producing problem instances.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Maximum number of draws any rejection sampler may take.
pub const REJECTION_BUDGET: usize = 100_000;

/// A pure real-valued field on the unit square.
#[derive(Clone)]
pub struct ScalarField(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>);

impl ScalarField {
    pub fn new(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_, _| c)
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.0)(x, y)
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ScalarField(..)")
    }
}

/// Closed interval `[lo, hi]`, serialized as a two-element array.
pub type Interval = (f64, f64);

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): Interval) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub(crate) fn check_interval(name: &str, (lo, hi): Interval) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::InvalidArgument(format!(
            "range {name} = [{lo}, {hi}] is not a valid interval"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Ellipses

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseParams {
    pub x0: f64,
    pub y0: f64,
    pub lx: f64,
    pub ly: f64,
    pub theta: f64,
}

impl EllipseParams {
    /// Half-extents of the axis-aligned bounding box of the rotated ellipse.
    pub fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let hw = (self.lx * self.lx * c * c + self.ly * self.ly * s * s).sqrt();
        let hh = (self.lx * self.lx * s * s + self.ly * self.ly * c * c).sqrt();
        (hw, hh)
    }

    pub fn fits_in_box(&self, margin: f64) -> bool {
        let (hw, hh) = self.half_extents();
        self.x0 - hw >= margin
            && self.x0 + hw <= 1.0 - margin
            && self.y0 - hh >= margin
            && self.y0 + hh <= 1.0 - margin
    }

    pub fn field(self) -> ScalarField {
        ScalarField::new(move |x, y| ellipse_levelset(&self, x, y))
    }
}

pub fn ellipse_levelset(p: &EllipseParams, x: f64, y: f64) -> f64 {
    let (s, c) = p.theta.sin_cos();
    let dx = x - p.x0;
    let dy = y - p.y0;
    let a = dx * c + dy * s;
    let b = dx * s - dy * c;
    -1.0 + a * a / (p.lx * p.lx) + b * b / (p.ly * p.ly)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EllipseRanges {
    pub x0: Interval,
    pub y0: Interval,
    pub lx: Interval,
    pub ly: Interval,
    pub theta: Interval,
}

impl Default for EllipseRanges {
    fn default() -> Self {
        Self {
            x0: (0.2, 0.8),
            y0: (0.2, 0.8),
            lx: (0.2, 0.45),
            ly: (0.2, 0.45),
            theta: (0.0, PI),
        }
    }
}

impl EllipseRanges {
    pub fn validate(&self) -> Result<()> {
        check_interval("x0", self.x0)?;
        check_interval("y0", self.y0)?;
        check_interval("lx", self.lx)?;
        check_interval("ly", self.ly)?;
        check_interval("theta", self.theta)?;
        if self.lx.0 <= 0.0 || self.ly.0 <= 0.0 {
            return Err(Error::InvalidArgument("ellipse semi-axes must be positive".into()));
        }
        Ok(())
    }
}

/// Draws ellipse parameters until the rotated bounding box lies inside
/// `[margin, 1 - margin]²`.
pub fn sample_ellipse<R: Rng + ?Sized>(
    rng: &mut R,
    ranges: &EllipseRanges,
    margin: f64,
) -> Result<EllipseParams> {
    if !(0.0..0.2).contains(&margin) {
        return Err(Error::InvalidArgument(format!(
            "ellipse margin {margin} outside [0, 0.2)"
        )));
    }
    for _ in 0..REJECTION_BUDGET {
        let p = EllipseParams {
            x0: uniform(rng, ranges.x0),
            y0: uniform(rng, ranges.y0),
            lx: uniform(rng, ranges.lx),
            ly: uniform(rng, ranges.ly),
            theta: uniform(rng, ranges.theta),
        };
        if p.fits_in_box(margin) {
            return Ok(p);
        }
    }
    Err(Error::SamplerBudget {
        what: "ellipse",
        budget: REJECTION_BUDGET,
    })
}

/// Default ellipse margin for an `nx`-node grid: two cells.
pub fn default_margin(nx: usize) -> f64 {
    2.0 / (nx.max(2) - 1) as f64
}

// ---------------------------------------------------------------------------
// Sum of three Gaussians

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSumParams {
    pub centers: [[f64; 2]; 3],
    /// Widths along x (σ_k) and y (γ_k); they enter as `2σ_k` in the exponent.
    pub sigma: [f64; 3],
    pub gamma: [f64; 3],
}

impl GaussianSumParams {
    pub fn psi(&self, x: f64, y: f64) -> f64 {
        (0..3)
            .map(|k| {
                let dx = x - self.centers[k][0];
                let dy = y - self.centers[k][1];
                (-dx * dx / (2.0 * self.sigma[k]) - dy * dy / (2.0 * self.gamma[k])).exp()
            })
            .sum()
    }

    /// Maximum of ψ over the nodes of an `nx × ny` grid on the unit square.
    pub fn nodal_max(&self, nx: usize, ny: usize) -> f64 {
        let mut m = f64::NEG_INFINITY;
        for i in 0..nx {
            let x = i as f64 / (nx - 1) as f64;
            for j in 0..ny {
                let y = j as f64 / (ny - 1) as f64;
                m = m.max(self.psi(x, y));
            }
        }
        m
    }
}

/// `φ = −ψ + M/2` with `M` the nodal maximum of ψ on the given grid.
pub fn gaussian_sum_levelset(p: &GaussianSumParams, nx: usize, ny: usize) -> Result<ScalarField> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidArgument(format!("grid {nx}x{ny} smaller than 2x2")));
    }
    let half_max = 0.5 * p.nodal_max(nx, ny);
    let p = *p;
    Ok(ScalarField::new(move |x, y| -p.psi(x, y) + half_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianShapeRanges {
    pub center: Interval,
    pub width: Interval,
}

impl Default for GaussianShapeRanges {
    fn default() -> Self {
        Self {
            center: (0.25, 0.75),
            width: (0.01, 0.04),
        }
    }
}

impl GaussianShapeRanges {
    pub fn validate(&self) -> Result<()> {
        check_interval("center", self.center)?;
        check_interval("width", self.width)?;
        if self.width.0 <= 0.0 {
            return Err(Error::InvalidArgument("gaussian widths must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Force and boundary data

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceParams {
    pub amplitude: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
}

impl ForceParams {
    pub fn field(self) -> ScalarField {
        ScalarField::new(move |x, y| gaussian_force(&self, x, y))
    }
}

pub fn gaussian_force(p: &ForceParams, x: f64, y: f64) -> f64 {
    let dx = x - p.mu0;
    let dy = y - p.mu1;
    p.amplitude
        * (-dx * dx / (2.0 * p.sigma_x * p.sigma_x) - dy * dy / (2.0 * p.sigma_y * p.sigma_y)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForceRanges {
    /// Range of |A|.
    pub amplitude: Interval,
    /// When false, A is restricted to positive values.
    pub allow_negative: bool,
    pub mu: Interval,
    pub sigma: Interval,
    /// The force center must satisfy φ(μ0, μ1) < threshold.
    pub interior_threshold: f64,
}

impl Default for ForceRanges {
    fn default() -> Self {
        Self {
            amplitude: (20.0, 30.0),
            allow_negative: true,
            mu: (0.2, 0.8),
            sigma: (0.15, 0.45),
            interior_threshold: -0.15,
        }
    }
}

impl ForceRanges {
    pub fn validate(&self) -> Result<()> {
        check_interval("amplitude", self.amplitude)?;
        check_interval("mu", self.mu)?;
        check_interval("sigma", self.sigma)?;
        if self.sigma.0 <= 0.0 {
            return Err(Error::InvalidArgument("force widths must be positive".into()));
        }
        Ok(())
    }
}

/// Draws force parameters; the center is drawn uniformly on
/// `mu² ∩ {φ < threshold}` by rejection.
pub fn sample_force<R: Rng + ?Sized>(
    rng: &mut R,
    phi: &ScalarField,
    ranges: &ForceRanges,
) -> Result<ForceParams> {
    let magnitude = uniform(rng, ranges.amplitude);
    let amplitude = if ranges.allow_negative && rng.random::<bool>() {
        -magnitude
    } else {
        magnitude
    };
    let (mu0, mu1) = sample_interior_point(rng, phi, ranges.mu, ranges.interior_threshold)?;
    Ok(ForceParams {
        amplitude,
        mu0,
        mu1,
        sigma_x: uniform(rng, ranges.sigma),
        sigma_y: uniform(rng, ranges.sigma),
    })
}

pub(crate) fn sample_interior_point<R: Rng + ?Sized>(
    rng: &mut R,
    phi: &ScalarField,
    range: Interval,
    threshold: f64,
) -> Result<(f64, f64)> {
    for _ in 0..REJECTION_BUDGET {
        let x = uniform(rng, range);
        let y = uniform(rng, range);
        if phi.eval(x, y) < threshold {
            return Ok((x, y));
        }
    }
    Err(Error::SamplerBudget {
        what: "force center",
        budget: REJECTION_BUDGET,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BoundaryParams {
    pub fn field(self) -> ScalarField {
        ScalarField::new(move |x, y| polynomial_cosine_bc(&self, x, y))
    }
}

pub fn polynomial_cosine_bc(p: &BoundaryParams, x: f64, y: f64) -> f64 {
    p.alpha * ((x - 0.5).powi(2) - (y - 0.5).powi(2)) * (p.beta * y * PI).cos()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryRanges {
    pub alpha: Interval,
    pub beta: Interval,
}

impl Default for BoundaryRanges {
    fn default() -> Self {
        Self {
            alpha: (-0.8, 0.8),
            beta: (-0.8, 0.8),
        }
    }
}

impl BoundaryRanges {
    pub fn validate(&self) -> Result<()> {
        check_interval("alpha", self.alpha)?;
        check_interval("beta", self.beta)
    }
}

pub fn sample_bc<R: Rng + ?Sized>(rng: &mut R, ranges: &BoundaryRanges) -> BoundaryParams {
    BoundaryParams {
        alpha: uniform(rng, ranges.alpha),
        beta: uniform(rng, ranges.beta),
    }
}

// ---------------------------------------------------------------------------
// Latin hypercube

/// `n × ranges.len()` Latin hypercube design, row-major. In each column,
/// exactly one sample falls in each of the `n` equal strata of its range,
/// placed uniformly within the stratum.
pub fn latin_hypercube<R: Rng + ?Sized>(
    n: usize,
    ranges: &[Interval],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("latin hypercube needs n >= 1".into()));
    }
    for (k, &(lo, hi)) in ranges.iter().enumerate() {
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "latin hypercube dimension {k}: lo {lo} must be below hi {hi}"
            )));
        }
    }
    let mut design = vec![vec![0.0; ranges.len()]; n];
    for (d, &(lo, hi)) in ranges.iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        // Fisher-Yates, explicit so the draw sequence is part of our contract.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            strata.swap(i, j);
        }
        for (row, &s) in strata.iter().enumerate() {
            let u = (s as f64 + rng.random::<f64>()) / n as f64;
            design[row][d] = (lo + (hi - lo) * u).min(hi);
        }
    }
    Ok(design)
}

// ---------------------------------------------------------------------------
// Hausdorff distance

pub fn hausdorff_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("hausdorff distance of an empty set".into()));
    }
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)))
}

fn directed_hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ellipse_examples() {
        let p = EllipseParams { x0: 0.5, y0: 0.5, lx: 0.3, ly: 0.2, theta: 0.0 };
        assert_eq!(ellipse_levelset(&p, 0.5, 0.5), -1.0);
        for theta in [0.0, 0.3, 1.2, 2.9] {
            let p = EllipseParams { theta, ..p };
            let v = ellipse_levelset(&p, 0.5 + 0.3 * theta.cos(), 0.5 + 0.3 * theta.sin());
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-14);
        }
        let p = EllipseParams { x0: 0.5, y0: 0.5, lx: 0.25, ly: 0.25, theta: 0.0 };
        assert_abs_diff_eq!(ellipse_levelset(&p, 1.0, 0.5), 3.0, epsilon = 1e-14);
    }

    #[test]
    fn ellipse_half_turn_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = sample_ellipse(&mut rng, &EllipseRanges::default(), 0.0).unwrap();
            let q = EllipseParams { theta: p.theta + PI, ..p };
            let (x, y) = (rng.random::<f64>(), rng.random::<f64>());
            assert!((ellipse_levelset(&p, x, y) - ellipse_levelset(&q, x, y)).abs() <= 1e-12);
        }
    }

    #[test]
    fn accepted_ellipses_respect_margin_and_corners() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let margin = default_margin(64);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..1000 {
            let p = sample_ellipse(&mut rng, &EllipseRanges::default(), margin).unwrap();
            let (hw, hh) = p.half_extents();
            assert!(p.x0 - hw >= margin && p.x0 + hw <= 1.0 - margin);
            assert!(p.y0 - hh >= margin && p.y0 + hh <= 1.0 - margin);
            for (x, y) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
                assert!(ellipse_levelset(&p, x, y) >= 0.0);
            }
            lo = lo.min(p.lx);
            hi = hi.max(p.lx);
        }
        assert!(lo >= 0.2 && hi <= 0.45);
    }

    #[test]
    fn ellipse_sampler_is_deterministic() {
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            sample_ellipse(&mut rng, &EllipseRanges::default(), 0.05).unwrap()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn ellipse_sampler_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let impossible = EllipseRanges { lx: (0.55, 0.6), ly: (0.55, 0.6), ..Default::default() };
        assert!(matches!(
            sample_ellipse(&mut rng, &impossible, 0.0),
            Err(Error::SamplerBudget { .. })
        ));
        assert!(sample_ellipse(&mut rng, &EllipseRanges::default(), 0.25).is_err());
    }

    #[test]
    fn gaussian_sum_examples() {
        let p = GaussianSumParams {
            centers: [[0.5, 0.5]; 3],
            sigma: [0.02; 3],
            gamma: [0.03; 3],
        };
        let phi = gaussian_sum_levelset(&p, 5, 5).unwrap();
        assert_abs_diff_eq!(phi.eval(0.5, 0.5), -1.5, epsilon = 1e-14);

        // Single effective Gaussian: the other two are far away and tiny.
        let p = GaussianSumParams {
            centers: [[0.25, 0.75], [50.0, 50.0], [-50.0, 40.0]],
            sigma: [0.03, 1e-4, 1e-4],
            gamma: [0.02, 1e-4, 1e-4],
        };
        let phi = gaussian_sum_levelset(&p, 9, 9).unwrap();
        assert_abs_diff_eq!(phi.eval(0.25, 0.75), -0.5 * p.psi(0.25, 0.75), epsilon = 1e-14);
    }

    #[test]
    fn gaussian_sum_strictly_below_half_max_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = GaussianShapeRanges::default();
        for _ in 0..20 {
            let p = GaussianSumParams {
                centers: [[0.0; 2]; 3].map(|_| [uniform(&mut rng, r.center), uniform(&mut rng, r.center)]),
                sigma: [0.0; 3].map(|_| uniform(&mut rng, r.width)),
                gamma: [0.0; 3].map(|_| uniform(&mut rng, r.width)),
            };
            let (nx, ny) = (17, 13);
            let m = p.nodal_max(nx, ny);
            let phi = gaussian_sum_levelset(&p, nx, ny).unwrap();
            let mut attained = false;
            for i in 0..nx {
                for j in 0..ny {
                    let (x, y) = (i as f64 / 16.0, j as f64 / 12.0);
                    let v = phi.eval(x, y);
                    assert!(v < 0.5 * m);
                    attained |= v == -0.5 * m;
                }
            }
            assert!(attained);
        }
    }

    #[test]
    fn force_examples() {
        let p = ForceParams { amplitude: 20.0, mu0: 0.4, mu1: 0.6, sigma_x: 0.2, sigma_y: 0.2 };
        assert_eq!(gaussian_force(&p, 0.4, 0.6), 20.0);
        assert_abs_diff_eq!(gaussian_force(&p, 0.6, 0.6), 12.130613194252668, epsilon = 1e-12);
        assert!(gaussian_force(&p, 0.4 + 10.0 * 0.2, 0.6).abs() < 1e-20 * 20.0);
    }

    #[test]
    fn bc_examples() {
        for (a, b) in [(0.3, -0.2), (-0.8, 0.8)] {
            assert_eq!(polynomial_cosine_bc(&BoundaryParams { alpha: a, beta: b }, 0.5, 0.5), 0.0);
        }
        assert_eq!(polynomial_cosine_bc(&BoundaryParams { alpha: 1.0, beta: 0.0 }, 1.0, 0.5), 0.25);
        assert_eq!(polynomial_cosine_bc(&BoundaryParams { alpha: 0.8, beta: 0.5 }, 0.0, 1.0), 0.0);
    }

    #[test]
    fn force_sampler_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ranges = ForceRanges::default();
        for _ in 0..300 {
            let e = sample_ellipse(&mut rng, &EllipseRanges::default(), 0.03).unwrap();
            let phi = e.field();
            let f = sample_force(&mut rng, &phi, &ranges).unwrap();
            assert!(phi.eval(f.mu0, f.mu1) < -0.15);
            assert!((20.0..=30.0).contains(&f.amplitude.abs()));
            assert!((0.15..=0.45).contains(&f.sigma_x) && (0.15..=0.45).contains(&f.sigma_y));
        }
        let positive = ForceRanges { allow_negative: false, ..ranges };
        let phi = ScalarField::constant(-1.0);
        for _ in 0..100 {
            assert!(sample_force(&mut rng, &phi, &positive).unwrap().amplitude > 0.0);
        }
        let outside = ScalarField::constant(1.0);
        assert!(sample_force(&mut rng, &outside, &ranges).is_err());
    }

    #[test]
    fn force_center_uniform_when_everything_is_inside() {
        // Chi-square test over 4x4 bins, 2000 draws, 15 dof. The 99.9% quantile is 37.70.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let phi = ScalarField::constant(-1.0);
        let mut bins = [0usize; 16];
        for _ in 0..2000 {
            let f = sample_force(&mut rng, &phi, &ForceRanges::default()).unwrap();
            let bx = (((f.mu0 - 0.2) / 0.6 * 4.0) as usize).min(3);
            let by = (((f.mu1 - 0.2) / 0.6 * 4.0) as usize).min(3);
            bins[bx * 4 + by] += 1;
        }
        let expected = 2000.0 / 16.0;
        let chi2: f64 = bins.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 37.70, "chi2 = {chi2}");
    }

    #[test]
    fn lhs_small_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = latin_hypercube(1, &[(2.0, 3.0), (-1.0, 1.0)], &mut rng).unwrap();
        assert!((2.0..=3.0).contains(&d[0][0]) && (-1.0..=1.0).contains(&d[0][1]));

        let d = latin_hypercube(4, &[(0.0, 1.0)], &mut rng).unwrap();
        let mut col: Vec<f64> = d.iter().map(|r| r[0]).collect();
        col.sort_by(f64::total_cmp);
        for (k, v) in col.iter().enumerate() {
            assert!(*v >= k as f64 * 0.25 && *v <= (k + 1) as f64 * 0.25);
        }
        assert!(latin_hypercube(0, &[(0.0, 1.0)], &mut rng).is_err());
        assert!(latin_hypercube(3, &[(1.0, 1.0)], &mut rng).is_err());
    }

    #[test]
    fn lhs_stratification_by_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let ranges: Vec<Interval> = (0..12).map(|k| (k as f64 - 3.0, 2.0 * k as f64 + 1.0)).collect();
        let n = 100;
        let d = latin_hypercube(n, &ranges, &mut rng).unwrap();
        for (c, &(lo, hi)) in ranges.iter().enumerate() {
            let mut hits = vec![0usize; n];
            for row in &d {
                let s = (((row[c] - lo) / (hi - lo)) * n as f64).floor() as usize;
                hits[s.min(n - 1)] += 1;
            }
            assert!(hits.iter().all(|&h| h == 1), "column {c}");
        }
    }

    #[test]
    fn lhs_deterministic() {
        let run = || latin_hypercube(30, &[(0.0, 1.0); 5], &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let (a, b) = (run(), run());
        for (ra, rb) in a.iter().zip(&b) {
            for (x, y) in ra.iter().zip(rb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn hausdorff_examples() {
        let a = [[0.1, 0.2], [0.4, 0.9], [0.3, 0.3]];
        assert_eq!(hausdorff_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(hausdorff_distance(&[[0.0, 0.0]], &[[3.0, 4.0]]).unwrap(), 5.0);
        assert!(hausdorff_distance(&[], &a).is_err());

        let circle = |r: f64| -> Vec<[f64; 2]> {
            (0..64)
                .map(|k| {
                    let t = 2.0 * PI * k as f64 / 64.0;
                    [0.5 + r * t.cos(), 0.5 + r * t.sin()]
                })
                .collect()
        };
        let d = hausdorff_distance(&circle(0.2), &circle(0.3)).unwrap();
        assert_abs_diff_eq!(d, 0.1, epsilon = 1e-3);
    }

    #[test]
    fn hausdorff_metric_axioms_on_small_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let set = |rng: &mut ChaCha8Rng| -> Vec<[f64; 2]> {
            let n = rng.random_range(1..=8);
            (0..n).map(|_| [rng.random(), rng.random()]).collect()
        };
        for _ in 0..300 {
            let (a, b, c) = (set(&mut rng), set(&mut rng), set(&mut rng));
            let ab = hausdorff_distance(&a, &b).unwrap();
            let ba = hausdorff_distance(&b, &a).unwrap();
            let bc = hausdorff_distance(&b, &c).unwrap();
            let ac = hausdorff_distance(&a, &c).unwrap();
            assert_eq!(ab, ba);
            assert!(ac <= ab + bc + 1e-15);
        }
    }
}
