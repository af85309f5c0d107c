//! Fractional lattice couplings.
//!
//! The coupling between two spins a distance `r` apart is the Riesz
//! finite-difference coefficient `J(r) = (-1)^(r+1) C(q, q/2 + r)`, where
//! `C` is the binomial coefficient generalised through the Gamma function.
//! Its lattice Fourier transform is `C(q, q/2) - 2 Σ J(r) cos(k r)
//! = |2 sin(k/2)|^q`, and for large `r` it decays as
//! `A r^-(1+q) (1 + c2 r^-2 + ...)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{is_integer, ln_gamma_ratio, ln_gamma_signed, sin_pi};

/// Largest table the generator will allocate.
pub const MAX_TABLE_LEN: usize = 500_000_000;

/// Upper bound on the fractional order accepted by simulation entry points.
pub const MAX_SIMULATED_ORDER: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("fractional order must be finite and positive, got {0}")]
    InvalidOrder(f64),
    #[error("simulation requires 0 < q <= 2, got q = {0}")]
    NotSimulable(f64),
    #[error("generalized binomial C({q}, {x}) hits a non-cancelling Gamma pole")]
    GammaPole { q: f64, x: f64 },
    #[error("distance must be at least 1")]
    ZeroDistance,
    #[error("table length {0} outside 1..={MAX_TABLE_LEN}")]
    TableSize(usize),
    #[error("periodic lattice size must be even and >= 2, got {0}")]
    LatticeSize(usize),
    #[error("tail tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("image sum for r = {r} did not reach tolerance {tolerance:e} (bound {bound:e})")]
    TailNotConverged { r: usize, tolerance: f64, bound: f64 },
    #[error("fit window [{lo}, {hi}] invalid for a table of length {len}")]
    Window { lo: usize, hi: usize, len: usize },
    #[error("non-positive value {value:e} at r = {r} inside fit window")]
    NonPositive { r: usize, value: f64 },
}

/// The order `q` of the fractional derivative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FractionalOrder(f64);

impl FractionalOrder {
    pub fn new(q: f64) -> Result<Self, CouplingError> {
        if q.is_finite() && q > 0.0 {
            Ok(Self(q))
        } else {
            Err(CouplingError::InvalidOrder(q))
        }
    }

    /// Constructs an order usable by the Monte Carlo engine (`q <= 2`).
    pub fn simulable(q: f64) -> Result<Self, CouplingError> {
        let order = Self::new(q)?;
        order.check_simulable()?;
        Ok(order)
    }

    pub fn check_simulable(self) -> Result<(), CouplingError> {
        if self.0 <= MAX_SIMULATED_ORDER {
            Ok(())
        } else {
            Err(CouplingError::NotSimulable(self.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// True when `q/2` is an integer, in which case only finitely many
    /// couplings are non-zero.
    pub fn is_local(self) -> bool {
        is_integer(self.0 / 2.0)
    }

    /// Amplitude `A = Γ(q+1) sin(πq/2) / π` of the leading power law.
    pub fn amplitude(self) -> f64 {
        let q = self.0;
        libm::tgamma(q + 1.0) * sin_pi(q / 2.0) / PI
    }

    /// Coefficient `c2` of the `r^-(3+q)` correction relative to the
    /// leading term.
    pub fn subleading_coefficient(self) -> f64 {
        let q = self.0;
        q * (1.0 + q) * (2.0 + q) / 24.0
    }
}

impl TryFrom<f64> for FractionalOrder {
    type Error = CouplingError;
    fn try_from(q: f64) -> Result<Self, Self::Error> {
        Self::new(q)
    }
}

impl From<FractionalOrder> for f64 {
    fn from(q: FractionalOrder) -> f64 {
        q.0
    }
}

impl std::fmt::Display for FractionalOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// `Γ(q+1) / (Γ(x+1) Γ(q-x+1))` for real `q > -1`.
pub fn generalized_binomial(q: f64, x: f64) -> Result<f64, CouplingError> {
    if !q.is_finite() || !x.is_finite() || q <= -1.0 {
        return Err(CouplingError::GammaPole { q, x });
    }
    // C(q, x) = C(q, q - x); work on the side where x + 1 > 0.
    let x = if x < q / 2.0 { q - x } else { x };
    let z = q - x + 1.0;
    if z > 0.0 {
        let (lz, sz) = ln_gamma_signed(z);
        let ln = ln_gamma_ratio(q + 1.0, x + 1.0) - lz;
        return Ok(sz * ln.exp());
    }
    if is_integer(z) {
        return Ok(0.0);
    }
    // 1/Γ(z) = sin(πz) Γ(1-z) / π with 1 - z = x - q > 0.
    let (lq, _) = ln_gamma_signed(q + 1.0);
    let ln = lq + ln_gamma_ratio(x - q, x + 1.0);
    Ok(sin_pi(z) / PI * ln.exp())
}

/// Coupling `J(r) = (-1)^(r+1) C(q, q/2 + r)` evaluated from Gamma functions.
pub fn coupling(q: FractionalOrder, r: usize) -> Result<f64, CouplingError> {
    if r == 0 {
        return Err(CouplingError::ZeroDistance);
    }
    let qv = q.value();
    let rf = r as f64;
    if qv / 2.0 - rf + 1.0 > 0.0 {
        let sign = if r % 2 == 1 { 1.0 } else { -1.0 };
        return Ok(sign * generalized_binomial(qv, qv / 2.0 + rf)?);
    }
    if q.is_local() {
        return Ok(0.0);
    }
    Ok(continuous_coupling(q, rf))
}

/// Smooth continuation `A Γ(x - q/2) / Γ(x + 1 + q/2)`, valid for `x > q/2 + 1`.
fn continuous_coupling(q: FractionalOrder, x: f64) -> f64 {
    let h = q.value() / 2.0;
    q.amplitude() * ln_gamma_ratio(x - h, x + 1.0 + h).exp()
}

/// Exact tail `Σ_{s >= 0} J(x + s)` of the smooth continuation.
///
/// The ratio `Γ(x - q/2) / Γ(x + q/2)` is an antidifference of `J`, so the
/// sum telescopes to `J(x) (x + q/2) / q`.
pub fn coupling_tail(q: FractionalOrder, x: f64) -> f64 {
    if q.is_local() {
        return 0.0;
    }
    let h = q.value() / 2.0;
    continuous_coupling(q, x) * (x + h) / q.value()
}

/// Real-space couplings `J(1..=r_max)` for a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingTable {
    q: FractionalOrder,
    values: Vec<f64>,
    central: f64,
}

impl CouplingTable {
    /// Builds the table with the ratio recurrence
    /// `J(r+1) = J(r) (r - q/2) / (r + 1 + q/2)` seeded from `J(1)`.
    pub fn build(q: FractionalOrder, r_max: usize) -> Result<Self, CouplingError> {
        if r_max == 0 || r_max > MAX_TABLE_LEN {
            return Err(CouplingError::TableSize(r_max));
        }
        let h = q.value() / 2.0;
        let mut values = Vec::with_capacity(r_max);
        let mut j = coupling(q, 1)?;
        values.push(j);
        for r in 1..r_max {
            let rf = r as f64;
            j *= (rf - h) / (rf + 1.0 + h);
            values.push(j);
        }
        let central = generalized_binomial(q.value(), h)?;
        Ok(Self { q, values, central })
    }

    pub fn order(&self) -> FractionalOrder {
        self.q
    }

    pub fn r_max(&self) -> usize {
        self.values.len()
    }

    /// `J(r)` for `1 <= r <= r_max`.
    pub fn get(&self, r: usize) -> Option<f64> {
        r.checked_sub(1).and_then(|i| self.values.get(i).copied())
    }

    /// `J(r)` from the table when available, otherwise from Gamma functions.
    pub fn at(&self, r: usize) -> f64 {
        match self.get(r) {
            Some(v) => v,
            None => coupling(self.q, r).unwrap_or(0.0),
        }
    }

    /// Values `J(1), J(2), ...`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `C(q, q/2)`, the on-site coefficient.
    pub fn central(&self) -> f64 {
        self.central
    }

    /// `Σ_{r >= 1} J(r)` with the tail beyond the table added analytically.
    pub fn total(&self) -> f64 {
        let head: f64 = kahan_sum(self.values.iter().copied());
        head + coupling_tail(self.q, (self.r_max() + 1) as f64)
    }

    /// `C(q, q/2) - 2 Σ_{r >= 1} J(r) cos(k r)`, the lattice Fourier
    /// transform reconstructed from real-space values.
    ///
    /// The oscillating tail beyond the table is summed by repeated
    /// summation by parts (an Euler transform in the finite differences of
    /// `J`), which converges geometrically once `r_max |1 - e^{ik}| >> 1`.
    pub fn spectral_sum(&self, k: f64) -> f64 {
        let z_re = (1.0 - k.cos(), -k.sin()); // 1 - e^{ik}
        let gap = (z_re.0 * z_re.0 + z_re.1 * z_re.1).sqrt();
        let n = self.r_max();
        const TERMS: usize = 6;
        if gap < 1e-12 || n <= TERMS + 1 {
            return self.central - 2.0 * self.total();
        }
        let cut = n - TERMS;
        let head = kahan_sum((1..cut).map(|r| self.values[r - 1] * (k * r as f64).cos()));
        // Σ_{r >= R} a_r z^r = z^R Σ_j (Δ^j a)_R z^j / (1 - z)^{j+1}, z = e^{ik}
        let mut diffs: Vec<f64> = self.values[cut - 1..].to_vec();
        let mut tail = (0.0, 0.0);
        let inv = complex_inv(z_re);
        let mut factor = complex_mul(cis(k * cut as f64), inv);
        for _ in 0..TERMS {
            tail.0 += diffs[0] * factor.0;
            tail.1 += diffs[0] * factor.1;
            for i in 0..diffs.len() - 1 {
                diffs[i] = diffs[i + 1] - diffs[i];
            }
            diffs.pop();
            factor = complex_mul(complex_mul(factor, cis(k)), inv);
        }
        self.central - 2.0 * (head + tail.0)
    }
}

fn cis(a: f64) -> (f64, f64) {
    (a.cos(), a.sin())
}

fn complex_mul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn complex_inv(a: (f64, f64)) -> (f64, f64) {
    let n = a.0 * a.0 + a.1 * a.1;
    (a.0 / n, -a.1 / n)
}

pub(crate) fn kahan_sum(it: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in it {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// `|2 sin(k/2)|^q`, the momentum-space interaction.
pub fn momentum_coupling(q: FractionalOrder, k: f64) -> f64 {
    (2.0 * (k / 2.0).sin()).abs().powf(q.value())
}

/// Image-summed couplings `J_L(r) = Σ_n J(|r + nL|)` on a ring of `L` sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicCouplingTable {
    q: FractionalOrder,
    size: usize,
    values: Vec<f64>,
    tail_tolerance: f64,
    tail_bound: f64,
}

const MIN_IMAGES: usize = 16;
const MAX_IMAGES: usize = 1 << 24;

impl PeriodicCouplingTable {
    /// Sums lattice images of `table` for a ring of `size` sites.
    ///
    /// Images are added explicitly up to `n0` periods; the remainder is an
    /// Euler–Maclaurin estimate built on the exact telescoping tail of `J`.
    /// `n0` doubles until the magnitude of the last correction kept, used as
    /// the error bound, is below `tail_tolerance`.
    pub fn new(
        table: &CouplingTable,
        size: usize,
        tail_tolerance: f64,
    ) -> Result<Self, CouplingError> {
        if size < 2 || size % 2 != 0 {
            return Err(CouplingError::LatticeSize(size));
        }
        if !(tail_tolerance > 0.0) {
            return Err(CouplingError::Tolerance(tail_tolerance));
        }
        let q = table.order();
        let half = size / 2;
        let mut values = Vec::with_capacity(half);
        let mut worst = 0.0f64;
        for r in 1..=half {
            let (v, bound) = image_sum(table, r, size, tail_tolerance)?;
            worst = worst.max(bound);
            values.push(v);
        }
        Ok(Self {
            q,
            size,
            values,
            tail_tolerance,
            tail_bound: worst,
        })
    }

    pub fn order(&self) -> FractionalOrder {
        self.q
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `J_L(r)` for the minimum-image distance of any `r` (0 yields 0).
    pub fn at(&self, r: usize) -> f64 {
        let r = r % self.size;
        let d = r.min(self.size - r);
        if d == 0 {
            0.0
        } else {
            self.values[d - 1]
        }
    }

    /// `J_L(1..=L/2)`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tail_tolerance(&self) -> f64 {
        self.tail_tolerance
    }

    /// Largest per-entry truncation bound actually achieved.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }
}

fn image_sum(
    table: &CouplingTable,
    r: usize,
    size: usize,
    tolerance: f64,
) -> Result<(f64, f64), CouplingError> {
    let q = table.order();
    let offsets = [r, size - r];
    if q.is_local() {
        // Only distances up to q/2 carry a coupling.
        let reach = (q.value() / 2.0) as usize;
        let mut total = 0.0;
        for &a in &offsets {
            let mut d = a;
            while d <= reach {
                total += table.at(d);
                d += size;
            }
        }
        return Ok((total, 0.0));
    }
    let mut n0 = MIN_IMAGES.max(256usize.div_ceil(size));
    loop {
        let mut total = 0.0;
        let mut bound = 0.0;
        for &a in &offsets {
            let direct = kahan_sum((0..n0).map(|n| table.at(a + n * size)));
            let (tail, b) = image_tail(q, (a + n0 * size) as f64, size as f64);
            total += direct + tail;
            bound += b;
        }
        if bound <= tolerance {
            return Ok((total, bound));
        }
        if n0 >= MAX_IMAGES {
            return Err(CouplingError::TailNotConverged {
                r,
                tolerance,
                bound,
            });
        }
        n0 *= 2;
    }
}

/// `Σ_{n >= 0} J(y + n L)` and an error estimate, for `y >> L`.
fn image_tail(q: FractionalOrder, y: f64, period: f64) -> (f64, f64) {
    let a = q.amplitude();
    let s = 1.0 + q.value();
    let c2 = q.subleading_coefficient();
    let j0 = continuous_coupling(q, y);
    let d1 = -a * (s * y.powf(-s - 1.0) + c2 * (s + 2.0) * y.powf(-s - 3.0));
    let d3 = -a
        * (s * (s + 1.0) * (s + 2.0) * y.powf(-s - 3.0)
            + c2 * (s + 2.0) * (s + 3.0) * (s + 4.0) * y.powf(-s - 5.0));
    // ∫_y^∞ J from the unit-step antidifference.
    let integral = coupling_tail(q, y) - j0 / 2.0 + d1 / 12.0 - d3 / 720.0;
    let sum = integral / period + j0 / 2.0 - period * d1 / 12.0
        + period.powi(3) * d3 / 720.0;
    let bound = (period.powi(3) * d3 / 720.0).abs() + (d3 / 720.0 / period).abs();
    (sum, bound)
}

/// Log-spaced distinct integers covering `[lo, hi]`.
pub(crate) fn log_spaced(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<usize> = (0..count)
        .map(|i| {
            let t = i as f64 / (count - 1).max(1) as f64;
            (a + t * (b - a)).exp().round() as usize
        })
        .map(|r| r.clamp(lo, hi))
        .collect();
    out.dedup();
    out
}

fn check_window(table: &CouplingTable, lo: usize, hi: usize) -> Result<(), CouplingError> {
    if lo < 1 || lo >= hi || hi > table.r_max() {
        return Err(CouplingError::Window {
            lo,
            hi,
            len: table.r_max(),
        });
    }
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x`.
pub(crate) fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(x, y) in points {
        sx += x.ln();
        sy += y.ln();
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, y) in points {
        let dx = x.ln() - mx;
        sxy += dx * (y.ln() - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

const FIT_POINTS: usize = 400;

/// Log-log slope of `J(r)` over `[r_lo, r_hi]`; tends to `-(1 + q)`.
pub fn asymptotic_exponent(
    table: &CouplingTable,
    r_lo: usize,
    r_hi: usize,
) -> Result<f64, CouplingError> {
    check_window(table, r_lo, r_hi)?;
    let mut pts = Vec::new();
    for r in log_spaced(r_lo, r_hi, FIT_POINTS) {
        let v = table.values[r - 1];
        if !(v > 0.0) {
            return Err(CouplingError::NonPositive { r, value: v });
        }
        pts.push((r as f64, v));
    }
    Ok(log_log_slope(&pts))
}

/// Amplitude of the leading `r^-(1+q)` term, fitted over the last decade
/// of the table.
pub fn leading_amplitude(table: &CouplingTable) -> Result<f64, CouplingError> {
    let hi = table.r_max();
    let lo = (hi / 10).max(1);
    check_window(table, lo, hi)?;
    let s = 1.0 + table.order().value();
    let mut acc = 0.0;
    let rs = log_spaced(lo, hi, FIT_POINTS);
    for &r in &rs {
        let v = table.values[r - 1];
        if !(v > 0.0) {
            return Err(CouplingError::NonPositive { r, value: v });
        }
        acc += v * (r as f64).powf(s);
    }
    Ok(acc / rs.len() as f64)
}

/// Residual `J(r) - A r^-(1+q)` over `[r_lo, r_hi]` after removing the
/// leading power law with amplitude `amplitude`.
pub fn residual_subleading(
    table: &CouplingTable,
    amplitude: f64,
    r_lo: usize,
    r_hi: usize,
) -> Result<Vec<(usize, f64)>, CouplingError> {
    check_window(table, r_lo, r_hi)?;
    let s = 1.0 + table.order().value();
    Ok((r_lo..=r_hi)
        .map(|r| (r, table.values[r - 1] - amplitude * (r as f64).powf(-s)))
        .collect())
}

/// Log-log slope of a residual series; tends to `-(3 + q)`.
pub fn residual_exponent(residuals: &[(usize, f64)]) -> Result<f64, CouplingError> {
    let lo = residuals.first().map(|p| p.0).unwrap_or(0);
    let hi = residuals.last().map(|p| p.0).unwrap_or(0);
    if residuals.len() < 2 || lo < 1 {
        return Err(CouplingError::Window { lo, hi, len: residuals.len() });
    }
    let picks = log_spaced(lo, hi, FIT_POINTS);
    let mut pts = Vec::with_capacity(picks.len());
    for r in picks {
        let v = residuals[r - lo].1;
        if !(v > 0.0) {
            return Err(CouplingError::NonPositive { r, value: v });
        }
        pts.push((r as f64, v));
    }
    Ok(log_log_slope(&pts))
}
