//! Finite-size-scaling analysis: pseudo-critical points, extrapolation to
//! infinite size, Binder crossings, data collapse and exponent extraction,
//! with the κ rescaling that applies above the upper critical dimension.

use argmin::core::{CostFunction, Error as ArgminError, Executor, State};
use argmin::solver::brent::BrentOpt;
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{derive_seed, SimRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FssError {
    #[error("need at least {need} sizes, got {got}")]
    TooFewSizes { need: usize, got: usize },
    #[error("need at least {need} control points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("peak of the L = {size} curve lies at the scan edge (control {control}); widen the scan")]
    EdgePeak { size: usize, control: f64 },
    #[error("quadratic fit around the L = {size} maximum is not concave")]
    NotConcave { size: usize },
    #[error("fit did not converge; residuals {residuals:?}")]
    NoConvergence { residuals: Vec<f64> },
    #[error("non-positive value {value} at L = {size}")]
    NonPositive { size: usize, value: f64 },
    #[error("no overlap between rescaled curves")]
    Degenerate,
    #[error("correlation fit window is empty: need 2 <= r <= L/4 for every size")]
    WindowTooSmall,
    #[error("no non-zero field values")]
    NoCrossover,
    #[error("singular least-squares system")]
    Singular,
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub control: f64,
    pub value: f64,
    pub stderr: f64,
}

/// One observable against the control parameter (temperature or `g`) at a
/// single size, sorted by control value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub size: usize,
    pub points: Vec<ScalingPoint>,
}

impl ScalingCurve {
    pub fn new(size: usize, mut points: Vec<ScalingPoint>) -> Self {
        points.sort_by(|a, b| a.control.total_cmp(&b.control));
        Self { size, points }
    }

    pub fn from_arrays(size: usize, control: &[f64], value: &[f64], stderr: &[f64]) -> Self {
        let points = control
            .iter()
            .zip(value)
            .zip(stderr)
            .map(|((&c, &v), &s)| ScalingPoint {
                control: c,
                value: v,
                stderr: s,
            })
            .collect();
        Self::new(size, points)
    }

    /// Linear interpolation of value and stderr at `x` inside the curve.
    pub fn interpolate(&self, x: f64) -> Option<(f64, f64)> {
        interpolate(&self.points, x, |p| p.control)
    }
}

fn interpolate(
    points: &[ScalingPoint],
    x: f64,
    key: impl Fn(&ScalingPoint) -> f64,
) -> Option<(f64, f64)> {
    let n = points.len();
    if n == 0 || x < key(&points[0]) || x > key(&points[n - 1]) {
        return None;
    }
    let k = points.partition_point(|p| key(p) <= x);
    if k == n {
        let p = &points[n - 1];
        return Some((p.value, p.stderr));
    }
    let (a, b) = (&points[k - 1], &points[k]);
    let t = (x - key(a)) / (key(b) - key(a));
    let v = (1.0 - t) * a.value + t * b.value;
    let s = ((1.0 - t).powi(2) * a.stderr.powi(2) + t * t * b.stderr.powi(2)).sqrt();
    Some((v, s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exponent {
    Nu,
    Beta,
    Gamma,
    Alpha,
    Delta,
    Eta,
    Kappa,
    HausdorffDimension,
    /// `1/ν` as it appears in scaling powers.
    InvNu,
    GammaOverNu,
    BetaOverNu,
    AlphaOverNu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub name: Exponent,
    pub value: f64,
    pub stderr: f64,
    pub method: String,
    /// Control or distance window the fit used.
    pub window: Option<(f64, f64)>,
    /// Reduced χ² or collapse quality `S`.
    pub quality: Option<f64>,
}

impl ExponentEstimate {
    pub fn new(name: Exponent, value: f64, stderr: f64, method: impl Into<String>) -> Self {
        Self {
            name,
            value,
            stderr: stderr.abs(),
            method: method.into(),
            window: None,
            quality: None,
        }
    }
}

/// Weighted linear least squares.
#[derive(Debug, Clone)]
struct LinearFit {
    coef: Vec<f64>,
    cov: DMatrix<f64>,
    chi2: f64,
    dof: usize,
}

/// Fits `y ≈ X c` with weights `1/σ²`. Uses unit weights and the residual
/// variance when any `σ` is zero. Covariances are inflated by the reduced
/// χ² when it exceeds one.
fn weighted_lsq(rows: &[Vec<f64>], y: &[f64], sigma: &[f64]) -> Result<LinearFit, FssError> {
    let n = rows.len();
    let p = rows.first().map(|r| r.len()).unwrap_or(0);
    if n < p || p == 0 {
        return Err(FssError::TooFewPoints { need: p.max(1), got: n });
    }
    let weighted = sigma.iter().all(|&s| s > 0.0 && s.is_finite());
    let w: Vec<f64> = if weighted { sigma.iter().map(|s| 1.0 / (s * s)).collect() } else { vec![1.0; n] };
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let wx = DMatrix::from_fn(n, p, |i, j| rows[i][j] * w[i]);
    let normal = x.transpose() * &wx;
    let rhs = wx.transpose() * DVector::from_column_slice(y);
    let inv = normal.clone().try_inverse().ok_or(FssError::Singular)?;
    let coef = &inv * rhs;
    let chi2: f64 = (0..n)
        .map(|i| {
            let fit: f64 = (0..p).map(|j| rows[i][j] * coef[j]).sum();
            w[i] * (y[i] - fit).powi(2)
        })
        .sum();
    let dof = n - p;
    let scale = match (weighted, dof) {
        (_, 0) => 1.0,
        (true, d) => (chi2 / d as f64).max(1.0),
        (false, d) => chi2 / d as f64,
    };
    Ok(LinearFit {
        coef: coef.iter().copied().collect(),
        cov: inv * scale,
        chi2,
        dof,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub size: usize,
    pub control: f64,
    pub control_stderr: f64,
    pub height: f64,
    pub height_stderr: f64,
}

/// Pseudo-critical point from a quadratic fit to the 5 points around the
/// maximum. When 7 points are available the shift of the vertex between
/// the 5- and 7-point windows is added to the error as a systematic term
/// (the quadratic model is only exact for a symmetric peak).
pub fn locate_peak(curve: &ScalingCurve) -> Result<Peak, FssError> {
    let pts = &curve.points;
    let n = pts.len();
    if n < 5 {
        return Err(FssError::TooFewPoints { need: 5, got: n });
    }
    let imax = (0..n)
        .max_by(|&a, &b| pts[a].value.total_cmp(&pts[b].value))
        .unwrap();
    if imax == 0 || imax == n - 1 {
        return Err(FssError::EdgePeak {
            size: curve.size,
            control: pts[imax].control,
        });
    }
    let peak = quadratic_vertex(curve, imax, 5)?;
    if n < 7 {
        return Ok(peak);
    }
    let Ok(wide) = quadratic_vertex(curve, imax, 7) else {
        return Ok(peak);
    };
    Ok(Peak {
        control_stderr: peak.control_stderr.hypot(wide.control - peak.control),
        height_stderr: peak.height_stderr.hypot(wide.height - peak.height),
        ..peak
    })
}

fn quadratic_vertex(curve: &ScalingCurve, imax: usize, width: usize) -> Result<Peak, FssError> {
    let pts = &curve.points;
    let n = pts.len();
    let lo = imax.saturating_sub(width / 2).min(n - width);
    let window = &pts[lo..lo + width];
    let x0 = pts[imax].control;
    let rows: Vec<Vec<f64>> = window
        .iter()
        .map(|p| {
            let u = p.control - x0;
            vec![1.0, u, u * u]
        })
        .collect();
    let y: Vec<f64> = window.iter().map(|p| p.value).collect();
    let s: Vec<f64> = window.iter().map(|p| p.stderr).collect();
    let fit = weighted_lsq(&rows, &y, &s)?;
    let (a, b, c) = (fit.coef[0], fit.coef[1], fit.coef[2]);
    if !(c < 0.0) {
        return Err(FssError::NotConcave { size: curve.size });
    }
    let u = -b / (2.0 * c);
    let (wlo, whi) = (window[0].control, window[width - 1].control);
    if x0 + u <= wlo || x0 + u >= whi {
        return Err(FssError::EdgePeak {
            size: curve.size,
            control: x0 + u,
        });
    }
    let height = a - b * b / (4.0 * c);
    let grad_u = [0.0, -1.0 / (2.0 * c), b / (2.0 * c * c)];
    let grad_h = [1.0, -b / (2.0 * c), b * b / (4.0 * c * c)];
    let quad = |g: &[f64; 3]| -> f64 {
        let mut v = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                v += g[i] * fit.cov[(i, j)] * g[j];
            }
        }
        v.max(0.0).sqrt()
    };
    Ok(Peak {
        size: curve.size,
        control: x0 + u,
        control_stderr: quad(&grad_u),
        height,
        height_stderr: quad(&grad_h),
    })
}

/// `T*(L) = T_c + a L^{-ω}` fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcFit {
    pub tc: f64,
    pub tc_stderr: f64,
    /// Shift exponent `ω`, an estimate of `1/ν` (times κ above the upper
    /// critical dimension).
    pub omega: f64,
    pub omega_stderr: f64,
    pub amplitude: f64,
    pub residuals: Vec<f64>,
    pub chi2: f64,
}

const OMEGA_RANGE: (f64, f64) = (0.05, 6.0);
const BOOTSTRAP_FITS: usize = 200;

struct Profile<'a> {
    sizes: &'a [f64],
    t: &'a [f64],
    sigma: &'a [f64],
}

impl Profile<'_> {
    fn linear(&self, omega: f64) -> Result<LinearFit, FssError> {
        let rows: Vec<Vec<f64>> = self.sizes.iter().map(|l| vec![1.0, l.powf(-omega)]).collect();
        weighted_lsq(&rows, self.t, self.sigma)
    }
}

impl CostFunction for &Profile<'_> {
    type Param = f64;
    type Output = f64;
    fn cost(&self, omega: &f64) -> Result<f64, ArgminError> {
        Ok(self.linear(*omega).map(|f| f.chi2).unwrap_or(f64::INFINITY))
    }
}

fn fit_shift(sizes: &[f64], t: &[f64], sigma: &[f64]) -> Result<(f64, f64, f64, f64), FssError> {
    let profile = Profile { sizes, t, sigma };
    let (lo, hi) = OMEGA_RANGE;
    let grid: Vec<f64> = (0..=240).map(|i| lo * (hi / lo).powf(i as f64 / 240.0)).collect();
    let costs: Vec<f64> = grid.iter().map(|&w| (&profile).cost(&w).unwrap()).collect();
    let ib = (0..grid.len()).min_by(|&a, &b| costs[a].total_cmp(&costs[b])).unwrap();
    let a = grid[ib.saturating_sub(1)];
    let b = grid[(ib + 1).min(grid.len() - 1)];
    let mut omega = grid[ib];
    if b > a {
        let solver = BrentOpt::new(a, b).set_tolerance(1e-12, 1e-14);
        if let Ok(res) = Executor::new(&profile, solver)
            .configure(|s| s.param(omega).max_iters(200))
            .run()
        {
            if let Some(&w) = res.state().get_best_param() {
                if (&profile).cost(&w).unwrap() <= costs[ib] {
                    omega = w;
                }
            }
        }
    }
    let lin = profile.linear(omega)?;
    let (mut tc, mut amp) = (lin.coef[0], lin.coef[1]);
    gauss_newton_polish(sizes, t, sigma, &mut tc, &mut amp, &mut omega);
    let edge = omega <= lo * 1.01 || omega >= hi * 0.99;
    let chi2 = chi2_shift(sizes, t, sigma, tc, amp, omega);
    Ok((tc, amp, omega, if edge { f64::NAN } else { chi2 }))
}

fn chi2_shift(sizes: &[f64], t: &[f64], sigma: &[f64], tc: f64, amp: f64, omega: f64) -> f64 {
    let weighted = sigma.iter().all(|&s| s > 0.0);
    sizes
        .iter()
        .zip(t)
        .zip(sigma)
        .map(|((l, y), s)| {
            let r = y - tc - amp * l.powf(-omega);
            if weighted {
                (r / s).powi(2)
            } else {
                r * r
            }
        })
        .sum()
}

fn gauss_newton_polish(sizes: &[f64], t: &[f64], sigma: &[f64], tc: &mut f64, amp: &mut f64, omega: &mut f64) {
    let weighted = sigma.iter().all(|&s| s > 0.0);
    let n = sizes.len();
    let mut best = chi2_shift(sizes, t, sigma, *tc, *amp, *omega);
    for _ in 0..50 {
        let mut jac = DMatrix::zeros(n, 3);
        let mut res = DVector::zeros(n);
        for i in 0..n {
            let w = if weighted { 1.0 / sigma[i] } else { 1.0 };
            let p = sizes[i].powf(-*omega);
            res[i] = w * (t[i] - *tc - *amp * p);
            jac[(i, 0)] = w;
            jac[(i, 1)] = w * p;
            jac[(i, 2)] = -w * *amp * p * sizes[i].ln();
        }
        let svd = jac.svd(true, true);
        let Ok(step) = svd.solve(&res, 1e-13) else { return };
        let (nt, na, nw) = (*tc + step[0], *amp + step[1], *omega + step[2]);
        let c = chi2_shift(sizes, t, sigma, nt, na, nw);
        if !(c <= best) || !(nw > 0.0) {
            return;
        }
        *tc = nt;
        *amp = na;
        *omega = nw;
        let done = step.norm() < 1e-15 * (1.0 + tc.abs());
        best = c;
        if done || best == 0.0 {
            return;
        }
    }
}

/// Extrapolates pseudo-critical points `(L, T*, σ)` to infinite size.
///
/// Errors come from a parametric bootstrap over the peak uncertainties
/// seeded by `seed`.
pub fn extrapolate_tc(peaks: &[(usize, f64, f64)], seed: u64) -> Result<TcFit, FssError> {
    if peaks.len() < 3 {
        return Err(FssError::TooFewSizes { need: 3, got: peaks.len() });
    }
    let sizes: Vec<f64> = peaks.iter().map(|p| p.0 as f64).collect();
    let t: Vec<f64> = peaks.iter().map(|p| p.1).collect();
    let sigma: Vec<f64> = peaks.iter().map(|p| p.2).collect();
    let (tc, amp, omega, chi2) = fit_shift(&sizes, &t, &sigma)?;
    let residuals: Vec<f64> = sizes
        .iter()
        .zip(&t)
        .map(|(l, y)| y - tc - amp * l.powf(-omega))
        .collect();
    if !chi2.is_finite() {
        return Err(FssError::NoConvergence { residuals });
    }
    let (mut tc_se, mut omega_se) = (0.0, 0.0);
    if sigma.iter().any(|&s| s > 0.0) {
        let mut rng = SimRng::seed_from_u64(seed);
        let mut tcs = Vec::new();
        let mut omegas = Vec::new();
        for _ in 0..BOOTSTRAP_FITS {
            let ts: Vec<f64> = t
                .iter()
                .zip(&sigma)
                .map(|(y, s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    y + s * z
                })
                .collect();
            if let Ok((a, _, w, c)) = fit_shift(&sizes, &ts, &sigma) {
                if c.is_finite() {
                    tcs.push(a);
                    omegas.push(w);
                }
            }
        }
        if tcs.len() < BOOTSTRAP_FITS / 2 {
            return Err(FssError::NoConvergence { residuals });
        }
        tc_se = std_dev(&tcs);
        omega_se = std_dev(&omegas);
    }
    Ok(TcFit {
        tc,
        tc_stderr: tc_se,
        omega,
        omega_stderr: omega_se,
        amplitude: amp,
        residuals,
        chi2,
    })
}

fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCrossing {
    pub small: usize,
    pub large: usize,
    pub crossing: Option<f64>,
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport {
    pub pairs: Vec<PairCrossing>,
    /// Every pair of adjacent sizes shows a stable crossing.
    pub transition_detected: bool,
    /// Crossing of the largest pair.
    pub tc: Option<f64>,
    pub tc_stderr: Option<f64>,
}

/// Significance (in standard errors) required before the sign of
/// `U_large - U_small` counts.
pub const CROSSING_SIGNIFICANCE: f64 = 3.0;
/// Minimum number of points on each side of a crossing.
const CROSSING_SUPPORT: usize = 2;

/// Binder-cumulant crossings between adjacent sizes.
///
/// A crossing is stable when, for some split of the control grid,
/// `U_large - U_small` pooled over the points below it is significantly
/// positive and pooled over the points above it significantly negative,
/// with no majority of significant contradictions on either side. It is
/// located by linear interpolation across the sign change nearest the split.
pub fn binder_crossing(curves: &[ScalingCurve]) -> Result<CrossingReport, FssError> {
    if curves.len() < 2 {
        return Err(FssError::TooFewSizes { need: 2, got: curves.len() });
    }
    let mut sorted: Vec<&ScalingCurve> = curves.iter().collect();
    sorted.sort_by_key(|c| c.size);
    let mut pairs = Vec::new();
    for w in sorted.windows(2) {
        let (small, large) = (w[0], w[1]);
        let found = pair_crossing(small, large)?;
        pairs.push(PairCrossing {
            small: small.size,
            large: large.size,
            crossing: found.map(|f| f.0),
            stderr: found.map(|f| f.1),
        });
    }
    let detected = pairs.iter().all(|p| p.crossing.is_some());
    let last = pairs.last().unwrap();
    Ok(CrossingReport {
        transition_detected: detected,
        tc: last.crossing,
        tc_stderr: last.stderr,
        pairs,
    })
}

fn pair_crossing(small: &ScalingCurve, large: &ScalingCurve) -> Result<Option<(f64, f64)>, FssError> {
    let mut xs = Vec::new();
    let mut d = Vec::new();
    let mut sd = Vec::new();
    for p in &small.points {
        if let Some((v, s)) = large.interpolate(p.control) {
            xs.push(p.control);
            d.push(v - p.value);
            sd.push((s * s + p.stderr * p.stderr).sqrt());
        }
    }
    if xs.len() < 3 {
        return Err(FssError::Degenerate);
    }
    let sign: Vec<i8> = d
        .iter()
        .zip(&sd)
        .map(|(&v, &s)| {
            if v > CROSSING_SIGNIFICANCE * s && v > 0.0 {
                1
            } else if v < -CROSSING_SIGNIFICANCE * s && v < 0.0 {
                -1
            } else {
                0
            }
        })
        .collect();
    // Near a crossing, and wherever both cumulants approach the same limit
    // (2/3 deep in the ordered phase, 0 deep in the disordered one), single
    // differences are small, so each side is judged on its pooled
    // difference. The split maximises the weaker of the two sides.
    let n = xs.len();
    let pooled = |r: std::ops::Range<usize>| {
        r.clone().map(|i| d[i]).sum::<f64>() / r.map(|i| sd[i] * sd[i]).sum::<f64>().sqrt()
    };
    let mut best: Option<(usize, f64)> = None;
    for split in CROSSING_SUPPORT..=n.saturating_sub(CROSSING_SUPPORT) {
        let score = pooled(0..split).min(-pooled(split..n));
        if score.is_finite() && best.is_none_or(|b| score > b.1) {
            best = Some((split, score));
        }
    }
    let Some((split, score)) = best else { return Ok(None) };
    let against_low = sign[..split].iter().filter(|&&s| s < 0).count();
    let against_high = sign[split..].iter().filter(|&&s| s > 0).count();
    if score < CROSSING_SIGNIFICANCE || against_low * 2 >= split || against_high * 2 >= n - split {
        return Ok(None);
    }
    // The crossing itself is the sign change closest to the split.
    let Some(last_pos) = (0..n - 1)
        .filter(|&i| d[i] > 0.0 && d[i + 1] <= 0.0)
        .min_by_key(|&i| (i + 1).abs_diff(split))
    else {
        return Ok(None);
    };
    let idx = [last_pos, last_pos + 1];
    let xc = idx.iter().map(|&i| xs[i]).sum::<f64>() / idx.len() as f64;
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| vec![1.0, xs[i] - xc]).collect();
    let y: Vec<f64> = idx.iter().map(|&i| d[i]).collect();
    let s: Vec<f64> = idx.iter().map(|&i| sd[i]).collect();
    let fit = weighted_lsq(&rows, &y, &s)?;
    let (a, b) = (fit.coef[0], fit.coef[1]);
    if !(b < 0.0) {
        return Ok(None);
    }
    let u = -a / b;
    let var = (fit.cov[(0, 0)] + 2.0 * u * fit.cov[(0, 1)] + u * u * fit.cov[(1, 1)]) / (b * b);
    Ok(Some((xc + u, var.max(0.0).sqrt())))
}

/// Parameters of a scaling collapse. `inv_nu` and `ratio` are the
/// effective powers of `L` (already multiplied by κ where it applies).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseParams {
    pub tc: f64,
    pub inv_nu: f64,
    /// `p/ν`: the rescaled observable is `y L^{-p/ν}`.
    pub ratio: f64,
}

fn rescale(curves: &[ScalingCurve], p: &CollapseParams) -> Vec<(usize, Vec<ScalingPoint>)> {
    curves
        .iter()
        .map(|c| {
            let l = c.size as f64;
            let sx = l.powf(p.inv_nu);
            let sy = l.powf(-p.ratio);
            let mut pts: Vec<ScalingPoint> = c
                .points
                .iter()
                .map(|q| ScalingPoint {
                    control: sx * (q.control - p.tc) / p.tc,
                    value: q.value * sy,
                    stderr: q.stderr * sy,
                })
                .collect();
            pts.sort_by(|a, b| a.control.total_cmp(&b.control));
            (c.size, pts)
        })
        .collect()
}

/// Collapse quality `S`: mean over every point lying inside another size's
/// rescaled range of `(y - Y)² / (σ² + σ_Y²)`, where `Y` interpolates
/// linearly between the two nearest points of that other size.
pub fn collapse_quality(curves: &[ScalingCurve], params: &CollapseParams) -> Result<f64, FssError> {
    if curves.len() < 3 {
        return Err(FssError::TooFewSizes { need: 3, got: curves.len() });
    }
    if !(params.tc != 0.0) || !params.tc.is_finite() {
        return Err(FssError::Invalid(format!("critical point {}", params.tc)));
    }
    let scaled = rescale(curves, params);
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, (_, pts)) in scaled.iter().enumerate() {
        for p in pts {
            for (b, (_, other)) in scaled.iter().enumerate() {
                if a == b {
                    continue;
                }
                if let Some((v, s)) = interpolate(other, p.control, |q| q.control) {
                    let var = p.stderr * p.stderr + s * s;
                    if !(var > 0.0) {
                        return Err(FssError::Invalid("collapse needs positive error bars".into()));
                    }
                    total += (p.value - v).powi(2) / var;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(FssError::Degenerate);
    }
    Ok(total / count as f64)
}

/// Which collapse parameters are held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CollapseConstraints {
    pub tc: Option<f64>,
    pub inv_nu: Option<f64>,
    pub ratio: Option<f64>,
}

/// Search box for the free collapse parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseBounds {
    pub tc: (f64, f64),
    pub inv_nu: (f64, f64),
    pub ratio: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseFit {
    pub params: CollapseParams,
    pub stderr: CollapseParams,
    pub quality: f64,
}

pub const COLLAPSE_RESTARTS: usize = 20;

struct CollapseCost<'a> {
    curves: &'a [ScalingCurve],
    fixed: CollapseConstraints,
    bounds: CollapseBounds,
}

impl CollapseCost<'_> {
    fn params(&self, free: &[f64]) -> CollapseParams {
        let mut it = free.iter();
        CollapseParams {
            tc: self.fixed.tc.unwrap_or_else(|| *it.next().unwrap()),
            inv_nu: self.fixed.inv_nu.unwrap_or_else(|| *it.next().unwrap()),
            ratio: self.fixed.ratio.unwrap_or_else(|| *it.next().unwrap()),
        }
    }

    fn inside(&self, p: &CollapseParams) -> bool {
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        (self.fixed.tc.is_some() || within(p.tc, self.bounds.tc))
            && (self.fixed.inv_nu.is_some() || within(p.inv_nu, self.bounds.inv_nu))
            && (self.fixed.ratio.is_some() || within(p.ratio, self.bounds.ratio))
    }

    fn eval(&self, free: &[f64]) -> f64 {
        let p = self.params(free);
        if !self.inside(&p) {
            return 1e30;
        }
        collapse_quality(self.curves, &p).unwrap_or(1e30)
    }

    fn free_ranges(&self) -> Vec<(f64, f64)> {
        let mut r = Vec::new();
        if self.fixed.tc.is_none() {
            r.push(self.bounds.tc);
        }
        if self.fixed.inv_nu.is_none() {
            r.push(self.bounds.inv_nu);
        }
        if self.fixed.ratio.is_none() {
            r.push(self.bounds.ratio);
        }
        r
    }
}

impl CostFunction for &CollapseCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, p: &Vec<f64>) -> Result<f64, ArgminError> {
        Ok(self.eval(p))
    }
}

fn simplex_minimize(cost: &CollapseCost, start: &[f64], ranges: &[(f64, f64)]) -> (Vec<f64>, f64) {
    let mut simplex = vec![start.to_vec()];
    for (i, &(lo, hi)) in ranges.iter().enumerate() {
        let mut v = start.to_vec();
        let step = 0.1 * (hi - lo);
        v[i] = if v[i] + step <= hi { v[i] + step } else { v[i] - step };
        simplex.push(v);
    }
    let solver = match NelderMead::new(simplex).with_sd_tolerance(1e-10) {
        Ok(s) => s,
        Err(_) => return (start.to_vec(), cost.eval(start)),
    };
    match Executor::new(cost, solver).configure(|s| s.max_iters(3000)).run() {
        Ok(res) => {
            let st = res.state();
            match st.get_best_param() {
                Some(p) => (p.clone(), st.get_best_cost()),
                None => (start.to_vec(), cost.eval(start)),
            }
        }
        Err(_) => (start.to_vec(), cost.eval(start)),
    }
}

fn coarse_starts(cost: &CollapseCost, ranges: &[(f64, f64)], count: usize) -> Vec<Vec<f64>> {
    let per_axis = match ranges.len() {
        1 => 40,
        2 => 12,
        _ => 7,
    };
    let mut grid: Vec<Vec<f64>> = vec![vec![]];
    for &(lo, hi) in ranges {
        let mut next = Vec::new();
        for g in &grid {
            for k in 0..per_axis {
                let mut v = g.clone();
                v.push(lo + (hi - lo) * (k as f64 + 0.5) / per_axis as f64);
                next.push(v);
            }
        }
        grid = next;
    }
    let mut scored: Vec<(f64, Vec<f64>)> = grid.into_iter().map(|g| (cost.eval(&g), g)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored.into_iter().take(count).map(|s| s.1).collect()
}

fn collapse_search(cost: &CollapseCost, restarts: usize) -> Result<(CollapseParams, f64), FssError> {
    let ranges = cost.free_ranges();
    if ranges.is_empty() {
        let p = cost.params(&[]);
        return Ok((p, collapse_quality(cost.curves, &p)?));
    }
    let mut best: Option<(CollapseParams, f64)> = None;
    for start in coarse_starts(cost, &ranges, restarts) {
        let (x, s) = simplex_minimize(cost, &start, &ranges);
        let p = cost.params(&x);
        let better = match &best {
            None => true,
            Some((bp, bs)) => s < *bs - 1e-12 || ((s - bs).abs() <= 1e-12 && p.inv_nu.abs() < bp.inv_nu.abs()),
        };
        if better {
            best = Some((p, s));
        }
    }
    let (p, s) = best.unwrap();
    if s >= 1e29 {
        return Err(FssError::Degenerate);
    }
    Ok((p, s))
}

/// Minimises [`collapse_quality`] over the free parameters by Nelder–Mead
/// from the best points of a coarse grid. Errors come from refitting
/// Gaussian-resampled curves `n_bootstrap` times.
pub fn fit_collapse(
    curves: &[ScalingCurve],
    fixed: CollapseConstraints,
    bounds: CollapseBounds,
    n_bootstrap: usize,
    seed: u64,
) -> Result<CollapseFit, FssError> {
    if curves.len() < 3 {
        return Err(FssError::TooFewSizes { need: 3, got: curves.len() });
    }
    let cost = CollapseCost { curves, fixed, bounds };
    let (params, quality) = collapse_search(&cost, COLLAPSE_RESTARTS)?;
    let mut samples = Vec::new();
    for i in 0..n_bootstrap {
        let mut rng = SimRng::seed_from_u64(derive_seed(seed, &[i as u64]));
        let resampled: Vec<ScalingCurve> = curves
            .iter()
            .map(|c| {
                let pts = c
                    .points
                    .iter()
                    .map(|p| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        ScalingPoint {
                            value: p.value + p.stderr * z,
                            ..*p
                        }
                    })
                    .collect();
                ScalingCurve::new(c.size, pts)
            })
            .collect();
        let bc = CollapseCost {
            curves: &resampled,
            fixed,
            bounds,
        };
        let start: Vec<f64> = [
            fixed.tc.is_none().then_some(params.tc),
            fixed.inv_nu.is_none().then_some(params.inv_nu),
            fixed.ratio.is_none().then_some(params.ratio),
        ]
        .into_iter()
        .flatten()
        .collect();
        let (x, s) = simplex_minimize(&bc, &start, &bc.free_ranges());
        if s < 1e29 {
            samples.push(bc.params(&x));
        }
    }
    let se = |f: fn(&CollapseParams) -> f64| std_dev(&samples.iter().map(f).collect::<Vec<_>>());
    Ok(CollapseFit {
        params,
        stderr: CollapseParams {
            tc: se(|p| p.tc),
            inv_nu: se(|p| p.inv_nu),
            ratio: se(|p| p.ratio),
        },
        quality,
    })
}

/// `κ = d / (2q)` above the upper critical dimension `2q`, else 1.
pub fn kappa_exponent(d: usize, q: f64) -> f64 {
    let du = 2.0 * q;
    if du < d as f64 {
        d as f64 / du
    } else {
        1.0
    }
}

/// Effective `L` power `p κ / ν` from a bare ratio `p/ν`.
pub fn qfss_rescale(ratio: f64, kappa: f64) -> f64 {
    ratio * kappa
}

/// Bare ratio `p/ν` from a fitted effective power.
pub fn qfss_bare(effective: f64, kappa: f64) -> f64 {
    effective / kappa
}

/// Log-log slope of peak heights `(L, height, σ)` against `L`, divided by κ.
pub fn exponent_from_peaks(
    heights: &[(usize, f64, f64)],
    name: Exponent,
    kappa: f64,
) -> Result<ExponentEstimate, FssError> {
    if heights.len() < 3 {
        return Err(FssError::TooFewSizes { need: 3, got: heights.len() });
    }
    if let Some(&(size, value, _)) = heights.iter().find(|h| !(h.1 > 0.0)) {
        return Err(FssError::NonPositive { size, value });
    }
    let rows: Vec<Vec<f64>> = heights.iter().map(|h| vec![1.0, (h.0 as f64).ln()]).collect();
    let y: Vec<f64> = heights.iter().map(|h| h.1.ln()).collect();
    let s: Vec<f64> = heights.iter().map(|h| h.2 / h.1).collect();
    let fit = weighted_lsq(&rows, &y, &s)?;
    let slope = fit.coef[1];
    let se = fit.cov[(1, 1)].max(0.0).sqrt();
    let lmin = heights.iter().map(|h| h.0).min().unwrap() as f64;
    let lmax = heights.iter().map(|h| h.0).max().unwrap() as f64;
    let mut est = ExponentEstimate::new(name, qfss_bare(slope, kappa), qfss_bare(se, kappa), "peak-height log-log slope");
    est.window = Some((lmin, lmax));
    est.quality = Some(if fit.dof > 0 { fit.chi2 / fit.dof as f64 } else { 0.0 });
    Ok(est)
}

/// `G(r)` of one size at the critical point, indexed by `r = 0..=L/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationProfile {
    pub size: usize,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// η from finite-size scaling of `G(r)` at fixed `r/L`:
/// `ln G(xL) = c_x - (d - 2 + η) ln L`, one intercept per ratio `x` and a
/// common slope. Ratios are `r/L_min` for `2 ≤ r ≤ L_min/4`.
pub fn extract_eta(profiles: &[CorrelationProfile], d: usize) -> Result<ExponentEstimate, FssError> {
    if profiles.len() < 2 {
        return Err(FssError::TooFewSizes { need: 2, got: profiles.len() });
    }
    let lmin = profiles.iter().map(|p| p.size).min().unwrap();
    let ratios: Vec<usize> = (2..=lmin / 4).collect();
    if ratios.is_empty() {
        return Err(FssError::WindowTooSmall);
    }
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut s = Vec::new();
    for p in profiles {
        if p.size % lmin != 0 {
            return Err(FssError::Invalid(format!(
                "size {} is not a multiple of {lmin}",
                p.size
            )));
        }
        let scale = p.size / lmin;
        for (k, &r0) in ratios.iter().enumerate() {
            let r = r0 * scale;
            let g = p.values.get(r).copied().ok_or(FssError::WindowTooSmall)?;
            if !(g > 0.0) {
                continue;
            }
            let mut row = vec![0.0; ratios.len() + 1];
            row[k] = 1.0;
            row[ratios.len()] = (p.size as f64).ln();
            rows.push(row);
            y.push(g.ln());
            s.push(p.stderr.get(r).copied().unwrap_or(0.0) / g);
        }
    }
    let fit = weighted_lsq(&rows, &y, &s)?;
    let k = ratios.len();
    let slope = fit.coef[k];
    let mut est = ExponentEstimate::new(
        Exponent::Eta,
        -slope - d as f64 + 2.0,
        fit.cov[(k, k)].max(0.0).sqrt(),
        "G(xL) vs L at fixed r/L",
    );
    est.window = Some((2.0, (lmin / 4) as f64));
    est.quality = Some(if fit.dof > 0 { fit.chi2 / fit.dof as f64 } else { 0.0 });
    Ok(est)
}

/// How the field enters the magnetisation scaling variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldScaling {
    /// `h L^{βδ/ν}` (gap exponent `y_h = βδ`).
    #[default]
    Gap,
    /// `h L^{δ/ν}` as literally written.
    Literal,
}

/// δ from collapsing `M L^{β/ν}` against `h L^{a}` at `T_c`, where the
/// fitted `a` is `βδ/ν` (gap form) or `δ/ν` (literal form).
///
/// `curves` hold `M(h)` per size with the field as control value.
pub fn extract_delta(
    curves: &[ScalingCurve],
    beta_over_nu: f64,
    inv_nu: f64,
    form: FieldScaling,
    seed: u64,
) -> Result<ExponentEstimate, FssError> {
    if curves.len() < 3 {
        return Err(FssError::TooFewSizes { need: 3, got: curves.len() });
    }
    let fielded: Vec<ScalingCurve> = curves
        .iter()
        .map(|c| ScalingCurve::new(c.size, c.points.iter().filter(|p| p.control > 0.0).copied().collect()))
        .collect();
    if fielded.iter().any(|c| c.points.len() < 2) {
        return Err(FssError::NoCrossover);
    }
    // Collapse on ln h, where the rescaling is a shift: x = ln h + a ln L.
    let logged: Vec<ScalingCurve> = fielded
        .iter()
        .map(|c| {
            let l = c.size as f64;
            let f = l.powf(beta_over_nu);
            let pts = c
                .points
                .iter()
                .map(|p| ScalingPoint {
                    control: p.control.ln(),
                    value: p.value * f,
                    stderr: p.stderr * f,
                })
                .collect();
            ScalingCurve::new(c.size, pts)
        })
        .collect();
    let quality = |a: f64| -> f64 { shifted_quality(&logged, a).unwrap_or(1e30) };
    let grid: Vec<f64> = (0..=400).map(|i| 0.02 * i as f64).collect();
    let ib = (0..grid.len())
        .min_by(|&x, &y| quality(grid[x]).total_cmp(&quality(grid[y])))
        .unwrap();
    let a = golden_refine(&quality, grid[ib.saturating_sub(1)], grid[(ib + 1).min(grid.len() - 1)]);
    let s_best = quality(a);
    if s_best >= 1e29 {
        return Err(FssError::Degenerate);
    }
    let mut samples = Vec::new();
    for i in 0..50u64 {
        let mut rng = SimRng::seed_from_u64(derive_seed(seed, &[i]));
        let resampled: Vec<ScalingCurve> = logged
            .iter()
            .map(|c| {
                let pts = c
                    .points
                    .iter()
                    .map(|p| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        ScalingPoint {
                            value: p.value + p.stderr * z,
                            ..*p
                        }
                    })
                    .collect();
                ScalingCurve::new(c.size, pts)
            })
            .collect();
        let q = |x: f64| shifted_quality(&resampled, x).unwrap_or(1e30);
        samples.push(golden_refine(&q, (a - 0.5).max(0.0), a + 0.5));
    }
    let a_se = std_dev(&samples);
    let (delta, delta_se, method) = match form {
        FieldScaling::Gap => (a / beta_over_nu, a_se / beta_over_nu.abs(), "M_h collapse, gap form h L^(beta delta/nu)"),
        FieldScaling::Literal => (a / inv_nu, a_se / inv_nu.abs(), "M_h collapse, literal form h L^(delta/nu)"),
    };
    let mut est = ExponentEstimate::new(Exponent::Delta, delta, delta_se, method);
    est.quality = Some(s_best);
    Ok(est)
}

fn shifted_quality(curves: &[ScalingCurve], a: f64) -> Result<f64, FssError> {
    let shifted: Vec<ScalingCurve> = curves
        .iter()
        .map(|c| {
            let shift = a * (c.size as f64).ln();
            let pts = c
                .points
                .iter()
                .map(|p| ScalingPoint {
                    control: p.control + shift,
                    ..*p
                })
                .collect();
            ScalingCurve::new(c.size, pts)
        })
        .collect();
    // tc = -1 turns the reduced control (x - tc)/tc back into x + 1.
    collapse_quality(
        &shifted,
        &CollapseParams {
            tc: -1.0,
            inv_nu: 0.0,
            ratio: 0.0,
        },
    )
}

fn golden_refine(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..80 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    0.5 * (a + b)
}

/// `α = 2 - d ν / κ`.
pub fn alpha_hyperscaling(nu: &ExponentEstimate, d: usize, kappa: f64) -> ExponentEstimate {
    ExponentEstimate::new(
        Exponent::Alpha,
        2.0 - d as f64 * nu.value / kappa,
        d as f64 * nu.stderr / kappa,
        "hyperscaling 2 - d nu / kappa",
    )
}

/// Whether two estimates differ by more than twice their combined error.
pub fn disagree(a: &ExponentEstimate, b: &ExponentEstimate) -> bool {
    let s = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    (a.value - b.value).abs() > 2.0 * s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HausdorffRow {
    pub q: f64,
    pub eta: f64,
    pub eta_stderr: f64,
    pub hausdorff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HausdorffReport {
    pub rows: Vec<HausdorffRow>,
    /// Slope of `H_D` against `q` (weighted when errors are available).
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    pub intercept: Option<f64>,
}

/// `H_D = 2 - η` per order, plus a linear fit of `H_D` against `q`.
pub fn hausdorff_report(etas: &[(f64, f64, f64)]) -> HausdorffReport {
    let rows: Vec<HausdorffRow> = etas
        .iter()
        .map(|&(q, eta, se)| HausdorffRow {
            q,
            eta,
            eta_stderr: se,
            hausdorff: 2.0 - eta,
        })
        .collect();
    let mut report = HausdorffReport {
        rows,
        slope: None,
        slope_stderr: None,
        intercept: None,
    };
    let distinct = {
        let mut qs: Vec<f64> = etas.iter().map(|e| e.0).collect();
        qs.sort_by(f64::total_cmp);
        qs.dedup();
        qs.len()
    };
    if distinct >= 2 {
        let rows: Vec<Vec<f64>> = report.rows.iter().map(|r| vec![1.0, r.q]).collect();
        let y: Vec<f64> = report.rows.iter().map(|r| r.hausdorff).collect();
        let s: Vec<f64> = report.rows.iter().map(|r| r.eta_stderr).collect();
        if let Ok(fit) = weighted_lsq(&rows, &y, &s) {
            report.intercept = Some(fit.coef[0]);
            report.slope = Some(fit.coef[1]);
            report.slope_stderr = Some(fit.cov[(1, 1)].max(0.0).sqrt());
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn curve(size: usize, xs: &[f64], f: impl Fn(f64) -> f64, err: f64) -> ScalingCurve {
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        ScalingCurve::from_arrays(size, xs, &ys, &vec![err; xs.len()])
    }

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn parabola_peak() {
        let c = curve(8, &linspace(1.7, 2.3, 7), |t| 1.0 - (t - 2.0).powi(2), 0.01);
        let p = locate_peak(&c).unwrap();
        assert_relative_eq!(p.control, 2.0, epsilon = 1e-12);
        assert_relative_eq!(p.height, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn monotone_curve_is_an_edge_peak() {
        let c = curve(8, &linspace(1.0, 2.0, 9), |t| t, 0.01);
        assert!(matches!(locate_peak(&c), Err(FssError::EdgePeak { .. })));
        let short = curve(8, &linspace(1.0, 2.0, 4), |t| -t * t, 0.01);
        assert!(matches!(locate_peak(&short), Err(FssError::TooFewPoints { .. })));
    }

    #[test]
    fn exact_shift_extrapolation() {
        let peaks: Vec<(usize, f64, f64)> = [8usize, 16, 32, 64]
            .iter()
            .map(|&l| (l, 2.0 + 3.0 / l as f64, 0.0))
            .collect();
        let fit = extrapolate_tc(&peaks, 1).unwrap();
        assert!((fit.tc - 2.0).abs() < 1e-10, "{fit:?}");
        assert!((fit.omega - 1.0).abs() < 1e-8);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-10));
        assert!(matches!(
            extrapolate_tc(&peaks[..2], 1),
            Err(FssError::TooFewSizes { .. })
        ));
    }

    #[test]
    fn crossing_of_two_lines() {
        let xs = linspace(1.0, 2.0, 11);
        let a = curve(8, &xs, |t| 0.5 - 0.2 * (t - 1.5), 0.001);
        let b = curve(16, &xs, |t| 0.5 - 0.4 * (t - 1.5), 0.001);
        let r = binder_crossing(&[a, b]).unwrap();
        assert!(r.transition_detected);
        assert_relative_eq!(r.tc.unwrap(), 1.5, epsilon = 1e-9);
    }

    #[test]
    fn weak_high_side_counts_when_pooled() {
        // Above 1.5 each difference is only about 1.4 standard errors.
        let shape = |xs: &[f64], count: usize| {
            let a = curve(8, xs, |_| 0.3, 0.001);
            let b = curve(16, xs, |t| if t < 1.5 { 0.35 } else { 0.298 }, 0.001);
            let r = binder_crossing(&[a, b]).unwrap();
            assert_eq!(xs.iter().filter(|&&t| t > 1.5).count(), count);
            r
        };
        let wide = shape(&linspace(1.0, 2.2, 13), 7);
        assert!(wide.transition_detected);
        assert!(wide.tc.unwrap() > 1.4 && wide.tc.unwrap() < 1.6);
        let narrow = shape(&linspace(1.0, 1.7, 8), 2);
        assert!(!narrow.transition_detected);
    }

    #[test]
    fn weak_low_side_counts_when_pooled() {
        // Both cumulants saturate below 1.5, leaving 1.4 standard errors.
        let xs = linspace(1.0, 2.2, 13);
        let a = curve(8, &xs, |t| if t < 1.5 { 0.664 } else { 0.5 - (t - 1.5) }, 0.001);
        let b = curve(16, &xs, |t| if t < 1.5 { 0.666 } else { 0.45 - 2.0 * (t - 1.5) }, 0.001);
        let r = binder_crossing(&[a, b]).unwrap();
        assert!(r.transition_detected);
        assert!(r.tc.unwrap() > 1.4 && r.tc.unwrap() < 1.5);
    }

    #[test]
    fn no_crossing_when_larger_size_is_always_lower() {
        let xs = linspace(0.3, 3.0, 15);
        let a = curve(16, &xs, |t| 0.66 * (-t).exp(), 0.001);
        let b = curve(32, &xs, |t| 0.66 * (-2.0 * t).exp(), 0.001);
        let r = binder_crossing(&[a, b]).unwrap();
        assert!(!r.transition_detected);
        assert!(r.tc.is_none());
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(kappa_exponent(1, 0.25), 2.0);
        assert_eq!(kappa_exponent(1, 0.75), 1.0);
        assert_eq!(kappa_exponent(2, 0.5), 2.0);
        assert_eq!(kappa_exponent(1, 0.5), 1.0);
        assert_eq!(qfss_rescale(1.75, 1.0), 1.75);
    }

    #[test]
    fn peak_slope_is_exact_on_power_law() {
        let h: Vec<(usize, f64, f64)> = [8usize, 16, 32, 64].iter().map(|&l| (l, 0.3 * (l as f64).powf(1.75), 0.0)).collect();
        let e = exponent_from_peaks(&h, Exponent::GammaOverNu, 1.0).unwrap();
        assert_relative_eq!(e.value, 1.75, epsilon = 1e-12);
        let bad = [(8, 1.0, 0.1), (16, -1.0, 0.1), (32, 2.0, 0.1)];
        assert!(matches!(
            exponent_from_peaks(&bad, Exponent::GammaOverNu, 1.0),
            Err(FssError::NonPositive { .. })
        ));
    }

    #[test]
    fn hausdorff_arithmetic() {
        let r = hausdorff_report(&[(0.6, 1.4, 0.05), (0.9, 1.1, 0.05)]);
        assert_relative_eq!(r.rows[0].hausdorff, 0.6, epsilon = 1e-12);
        assert_relative_eq!(r.slope.unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(hausdorff_report(&[(2.0, 0.25, 0.0)]).rows[0].hausdorff, 1.75);
        assert!(hausdorff_report(&[(2.0, 0.25, 0.0)]).slope.is_none());
    }

    #[test]
    fn alpha_from_hyperscaling() {
        let nu = ExponentEstimate::new(Exponent::Nu, 1.0, 0.1, "test");
        assert_relative_eq!(alpha_hyperscaling(&nu, 2, 1.0).value, 0.0);
        let mf = ExponentEstimate::new(Exponent::Nu, 4.0, 0.1, "test");
        assert_relative_eq!(alpha_hyperscaling(&mf, 1, 2.0).value, 0.0);
    }
}
