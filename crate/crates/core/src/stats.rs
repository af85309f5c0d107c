//! Estimators for M, χ, C, U and G(r) with binning-based autocorrelation
//! times and block-bootstrap error bars.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{derive_seed, CorrelationBlocks, Measurement, SimRng};
use crate::parallel::{map_indexed, Parallelism};

/// Minimum measurements accepted by [`estimate_observables`].
pub const MIN_MEASUREMENTS: usize = 100;
/// Minimum block count for the bootstrap.
pub const MIN_BLOCKS: usize = 20;
/// Coarsest binning level keeps at least this many bins.
const MIN_BINS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error("bootstrap needs at least {MIN_BLOCKS} blocks, got {0}")]
    TooFewBlocks(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauStatus {
    /// Three successive binning levels agree within their errors.
    Plateau,
    /// No plateau; the value from the coarsest level is reported.
    NoPlateau,
    /// The series is constant.
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauEstimate {
    /// Integrated autocorrelation time in units of the series spacing,
    /// `0.5` for uncorrelated data.
    pub tau: f64,
    pub status: TauStatus,
    /// Bin size at which the estimate was taken.
    pub bin_size: usize,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Integrated autocorrelation time from the growth of bin-mean variance
/// with bin size: `τ_b = b σ²_b / (2 σ²_1)`.
pub fn autocorrelation_time(series: &[f64]) -> Result<TauEstimate, StatsError> {
    if series.len() < MIN_MEASUREMENTS {
        return Err(StatsError::InsufficientSamples {
            need: MIN_MEASUREMENTS,
            got: series.len(),
        });
    }
    let var0 = variance(series);
    let scale = series.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if var0 <= 1e-28 * scale * scale || var0 == 0.0 {
        return Ok(TauEstimate {
            tau: 0.5,
            status: TauStatus::ZeroVariance,
            bin_size: 1,
        });
    }
    let mut levels: Vec<(usize, f64, f64)> = Vec::new();
    let mut bins: Vec<f64> = series.to_vec();
    let mut size = 1usize;
    while bins.len() >= MIN_BINS {
        let nb = bins.len();
        let tau = size as f64 * variance(&bins) / (2.0 * var0);
        let err = tau * (2.0 / (nb - 1) as f64).sqrt();
        levels.push((size, tau, err));
        bins = bins.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect();
        size *= 2;
    }
    for w in levels.windows(3) {
        let (a, b, c) = (w[0], w[1], w[2]);
        if (b.1 - a.1).abs() <= b.2 && (c.1 - b.1).abs() <= c.2 {
            return Ok(TauEstimate {
                tau: ((a.1 + b.1 + c.1) / 3.0).max(0.5),
                status: TauStatus::Plateau,
                bin_size: b.0,
            });
        }
    }
    let last = *levels.last().expect("at least one binning level");
    Ok(TauEstimate {
        tau: last.1.max(0.5),
        status: TauStatus::NoPlateau,
        bin_size: last.0,
    })
}

/// Additive block summary that can be averaged across resampled blocks.
pub trait BlockStat: Clone + Send + Sync {
    fn zeroed(&self) -> Self;
    fn add_scaled(&mut self, other: &Self, weight: f64);
}

impl BlockStat for f64 {
    fn zeroed(&self) -> Self {
        0.0
    }
    fn add_scaled(&mut self, other: &Self, weight: f64) {
        *self += weight * other;
    }
}

impl BlockStat for Vec<f64> {
    fn zeroed(&self) -> Self {
        vec![0.0; self.len()]
    }
    fn add_scaled(&mut self, other: &Self, weight: f64) {
        for (a, b) in self.iter_mut().zip(other) {
            *a += weight * b;
        }
    }
}

fn average<B: BlockStat>(blocks: &[B], picks: impl Iterator<Item = usize>) -> B {
    let mut acc = blocks[0].zeroed();
    let w = 1.0 / blocks.len() as f64;
    for i in picks {
        acc.add_scaled(&blocks[i], w);
    }
    acc
}

/// Block bootstrap: resamples equal-length blocks with replacement and
/// returns the full-sample estimate with the standard deviation of the
/// resampled estimates.
///
/// Each resample draws from its own generator seeded from `rng`, so the
/// result is independent of `parallelism`.
pub fn bootstrap<B, F, R>(
    blocks: &[B],
    estimator: F,
    n_resamples: usize,
    rng: &mut R,
    parallelism: Parallelism,
) -> Result<(f64, f64), StatsError>
where
    B: BlockStat,
    F: Fn(&B) -> f64 + Sync + Send,
    R: Rng + ?Sized,
{
    if blocks.len() < MIN_BLOCKS {
        return Err(StatsError::TooFewBlocks(blocks.len()));
    }
    let n = blocks.len();
    let value = estimator(&average(blocks, 0..n));
    let base: u64 = rng.random();
    let ids: Vec<u64> = (0..n_resamples as u64).collect();
    let samples = map_indexed(&ids, parallelism, |_, &i| {
        let mut r = SimRng::seed_from_u64(derive_seed(base, &[i]));
        let picks: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
        estimator(&average(blocks, picks.into_iter()))
    });
    let finite: Vec<f64> = samples.into_iter().filter(|v| v.is_finite()).collect();
    let stderr = if finite.len() > 1 { variance(&finite).sqrt() } else { 0.0 };
    Ok((value, stderr))
}

/// Block means of every per-measurement moment an estimator needs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub e: f64,
    pub e2: f64,
    pub m: f64,
    pub abs_m: f64,
    pub m2: f64,
    pub m4: f64,
    pub abs_m_e: f64,
    pub m2_e: f64,
    pub m4_e: f64,
}

impl Moments {
    fn from_measurement(x: &Measurement) -> Self {
        Self {
            e: x.energy,
            e2: x.energy * x.energy,
            m: x.m,
            abs_m: x.abs_m,
            m2: x.m2,
            m4: x.m4,
            abs_m_e: x.abs_m * x.energy,
            m2_e: x.m2 * x.energy,
            m4_e: x.m4 * x.energy,
        }
    }

    fn accumulate(&mut self, o: &Self, w: f64) {
        self.e += w * o.e;
        self.e2 += w * o.e2;
        self.m += w * o.m;
        self.abs_m += w * o.abs_m;
        self.m2 += w * o.m2;
        self.m4 += w * o.m4;
        self.abs_m_e += w * o.abs_m_e;
        self.m2_e += w * o.m2_e;
        self.m4_e += w * o.m4_e;
    }

    /// Means of the moments over `measurements`.
    pub fn block(measurements: &[Measurement]) -> Self {
        let mut acc = Self::default();
        let w = 1.0 / measurements.len() as f64;
        for x in measurements {
            acc.accumulate(&Self::from_measurement(x), w);
        }
        acc
    }
}

impl BlockStat for Moments {
    fn zeroed(&self) -> Self {
        Self::default()
    }
    fn add_scaled(&mut self, other: &Self, weight: f64) {
        self.accumulate(other, weight);
    }
}

/// Splits measurements into consecutive blocks of `block_len`, dropping a
/// partial tail.
pub fn block_moments(measurements: &[Measurement], block_len: usize) -> Vec<Moments> {
    measurements
        .chunks_exact(block_len.max(1))
        .map(Moments::block)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnetizationConvention {
    /// `M = ⟨|m|⟩`.
    #[default]
    Absolute,
    /// `M = ⟨m⟩`.
    Signed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinderConvention {
    /// `U = 1 - ⟨m⁴⟩ / (3 ⟨m²⟩²)`.
    #[default]
    Squared,
    /// `U = 1 - ⟨m⁴⟩ / (3 ⟨m²⟩)`, kept for comparison only.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub magnetization: MagnetizationConvention,
    pub binder: BinderConvention,
    pub n_resamples: usize,
    pub seed: u64,
    pub parallelism: Parallelism,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            magnetization: MagnetizationConvention::Absolute,
            binder: BinderConvention::Squared,
            n_resamples: 200,
            seed: 0x5eed,
            parallelism: Parallelism::Sequential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    M,
    Chi,
    C,
    U,
    /// `dU/dβ` from energy cross-correlations.
    DuDbeta,
    /// `d ln⟨|m|⟩ / dβ`.
    DlnmDbeta,
    G(usize),
}

impl Observable {
    pub fn label(&self) -> String {
        match self {
            Observable::M => "M".into(),
            Observable::Chi => "chi".into(),
            Observable::C => "C".into(),
            Observable::U => "U".into(),
            Observable::DuDbeta => "dU_dbeta".into(),
            Observable::DlnmDbeta => "dlnM_dbeta".into(),
            Observable::G(r) => format!("G({r})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableEstimate {
    pub observable: Observable,
    pub value: f64,
    pub stderr: f64,
    pub tau_int: f64,
    pub n_effective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSet {
    pub n_measurements: usize,
    pub block_len: usize,
    /// Fewer than [`MIN_BLOCKS`] blocks of length `2τ_int` were available;
    /// error bars are likely underestimated.
    pub underresolved: bool,
    pub m: ObservableEstimate,
    pub chi: ObservableEstimate,
    pub c: ObservableEstimate,
    pub u: ObservableEstimate,
    pub du_dbeta: ObservableEstimate,
    pub dlnm_dbeta: ObservableEstimate,
    pub g: Vec<ObservableEstimate>,
}

impl ObservableSet {
    pub fn get(&self, o: Observable) -> Option<&ObservableEstimate> {
        match o {
            Observable::M => Some(&self.m),
            Observable::Chi => Some(&self.chi),
            Observable::C => Some(&self.c),
            Observable::U => Some(&self.u),
            Observable::DuDbeta => Some(&self.du_dbeta),
            Observable::DlnmDbeta => Some(&self.dlnm_dbeta),
            Observable::G(r) => self.g.get(r),
        }
    }

    pub fn all(&self) -> Vec<ObservableEstimate> {
        let mut v = vec![self.m, self.chi, self.c, self.u, self.du_dbeta, self.dlnm_dbeta];
        v.extend_from_slice(&self.g);
        v
    }
}

/// Point estimators on averaged moments.
pub mod estimators {
    use super::*;

    pub fn magnetization(x: &Moments, conv: MagnetizationConvention) -> f64 {
        match conv {
            MagnetizationConvention::Absolute => x.abs_m,
            MagnetizationConvention::Signed => x.m,
        }
    }

    /// `χ = N (⟨m²⟩ - M²)`.
    pub fn susceptibility(x: &Moments, n_sites: f64, conv: MagnetizationConvention) -> f64 {
        let m = magnetization(x, conv);
        n_sites * (x.m2 - m * m)
    }

    /// `C = β² (⟨E²⟩ - ⟨E⟩²) / N`, i.e. per spin.
    pub fn specific_heat(x: &Moments, n_sites: f64, beta: f64) -> f64 {
        beta * beta * (x.e2 - x.e * x.e) / n_sites
    }

    pub fn binder(x: &Moments, conv: BinderConvention) -> f64 {
        match conv {
            BinderConvention::Squared => 1.0 - x.m4 / (3.0 * x.m2 * x.m2),
            BinderConvention::Literal => 1.0 - x.m4 / (3.0 * x.m2),
        }
    }

    /// `dU/dβ` with `d⟨X⟩/dβ = ⟨X⟩⟨E⟩ - ⟨X E⟩`.
    pub fn binder_derivative(x: &Moments) -> f64 {
        let d2 = x.m2 * x.e - x.m2_e;
        let d4 = x.m4 * x.e - x.m4_e;
        -(d4 * x.m2 - 2.0 * x.m4 * d2) / (3.0 * x.m2 * x.m2 * x.m2)
    }

    pub fn log_magnetization_derivative(x: &Moments) -> f64 {
        x.e - x.abs_m_e / x.abs_m
    }
}

/// Estimates every observable from one replica's measurements.
///
/// `correlation` supplies the `G(r)` accumulators; when absent the `G`
/// list is empty.
pub fn estimate_observables(
    measurements: &[Measurement],
    correlation: Option<&CorrelationBlocks>,
    n_sites: usize,
    beta: f64,
    options: &EstimatorOptions,
) -> Result<ObservableSet, StatsError> {
    let n = measurements.len();
    if n < MIN_MEASUREMENTS {
        return Err(StatsError::InsufficientSamples {
            need: MIN_MEASUREMENTS,
            got: n,
        });
    }
    let series = |f: fn(&Measurement) -> f64| -> Vec<f64> { measurements.iter().map(f).collect() };
    let tau_of = |s: &[f64]| autocorrelation_time(s).map(|t| t.tau).unwrap_or(0.5);
    let tau_e = tau_of(&series(|x| x.energy));
    let tau_abs = tau_of(&series(|x| x.abs_m));
    let tau_m = tau_of(&series(|x| x.m));
    let tau_m2 = tau_of(&series(|x| x.m2));
    let tau_m4 = tau_of(&series(|x| x.m4));
    let tau_max = [tau_e, tau_abs, tau_m2, tau_m4].into_iter().fold(0.5, f64::max);

    let mut block_len = (2.0 * tau_max).ceil() as usize;
    let mut underresolved = false;
    if n / block_len < MIN_BLOCKS {
        block_len = n / MIN_BLOCKS;
        underresolved = true;
    }
    let blocks = block_moments(measurements, block_len);
    let nf = n_sites as f64;
    let mut rng = SimRng::seed_from_u64(options.seed);
    let conv_m = options.magnetization;
    let conv_u = options.binder;
    let mut boot = |f: &(dyn Fn(&Moments) -> f64 + Sync + Send)| {
        bootstrap(&blocks, f, options.n_resamples, &mut rng, options.parallelism)
    };
    let make = |o: Observable, (value, stderr): (f64, f64), tau: f64| ObservableEstimate {
        observable: o,
        value,
        stderr,
        tau_int: tau,
        n_effective: n as f64 / (2.0 * tau),
    };
    let tau_mag = match conv_m {
        MagnetizationConvention::Absolute => tau_abs,
        MagnetizationConvention::Signed => tau_m,
    };
    let m = make(
        Observable::M,
        boot(&|x| estimators::magnetization(x, conv_m))?,
        tau_mag,
    );
    let chi = make(
        Observable::Chi,
        boot(&|x| estimators::susceptibility(x, nf, conv_m))?,
        tau_m2.max(tau_mag),
    );
    let c = make(Observable::C, boot(&|x| estimators::specific_heat(x, nf, beta))?, tau_e);
    let u = make(Observable::U, boot(&|x| estimators::binder(x, conv_u))?, tau_m2.max(tau_m4));
    let du = make(
        Observable::DuDbeta,
        boot(&estimators::binder_derivative)?,
        tau_max,
    );
    let dlnm = make(
        Observable::DlnmDbeta,
        boot(&estimators::log_magnetization_derivative)?,
        tau_max,
    );

    let mut g = Vec::new();
    if let Some(corr) = correlation {
        g = correlation_estimates(measurements, corr, options, &mut rng, tau_m2)?;
    }
    Ok(ObservableSet {
        n_measurements: n,
        block_len,
        underresolved,
        m,
        chi,
        c,
        u,
        du_dbeta: du,
        dlnm_dbeta: dlnm,
        g,
    })
}

/// `G(r) = ⟨c(r)⟩ - ⟨m⟩²` with a joint block bootstrap over the stored
/// correlation blocks and the matching magnetization blocks.
fn correlation_estimates(
    measurements: &[Measurement],
    corr: &CorrelationBlocks,
    options: &EstimatorOptions,
    rng: &mut SimRng,
    tau: f64,
) -> Result<Vec<ObservableEstimate>, StatsError> {
    let range = corr.total.len();
    let n = measurements.len();
    let mean_m = measurements.iter().map(|x| x.m).sum::<f64>() / n as f64;
    let c_mean = corr.mean();
    let joint: Vec<Vec<f64>> = corr
        .blocks
        .iter()
        .enumerate()
        .map(|(b, cb)| {
            let start = b * corr.block_len;
            let chunk = &measurements[start..(start + corr.block_len).min(n)];
            let mut v = cb.clone();
            v.push(chunk.iter().map(|x| x.m).sum::<f64>() / chunk.len() as f64);
            v
        })
        .collect();
    let mut out = Vec::with_capacity(range);
    for r in 0..range {
        let value = c_mean[r] - mean_m * mean_m;
        let stderr = if joint.len() >= MIN_BLOCKS {
            bootstrap(
                &joint,
                |v: &Vec<f64>| v[r] - v[range] * v[range],
                options.n_resamples,
                rng,
                options.parallelism,
            )?
            .1
        } else {
            f64::NAN
        };
        out.push(ObservableEstimate {
            observable: Observable::G(r),
            value,
            stderr,
            tau_int: tau,
            n_effective: n as f64 / (2.0 * tau),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut SimRng) -> f64 {
        StandardNormal.sample(rng)
    }

    #[test]
    fn tau_iid_is_half() {
        let mut rng = SimRng::seed_from_u64(1);
        let x: Vec<f64> = (0..100_000).map(|_| normal(&mut rng)).collect();
        let t = autocorrelation_time(&x).unwrap();
        assert!((t.tau - 0.5).abs() < 0.1, "{t:?}");
    }

    #[test]
    fn tau_ar1() {
        let mut rng = SimRng::seed_from_u64(2);
        let rho = 0.9;
        let mut v = 0.0;
        let x: Vec<f64> = (0..1_000_000)
            .map(|_| {
                v = rho * v + normal(&mut rng);
                v
            })
            .collect();
        let t = autocorrelation_time(&x).unwrap();
        let exact = (1.0 + rho) / (2.0 * (1.0 - rho));
        assert!((t.tau - exact).abs() < 0.2 * exact, "{t:?}");
        assert_eq!(t.status, TauStatus::Plateau);
    }

    #[test]
    fn tau_constant_is_flagged() {
        let t = autocorrelation_time(&vec![0.3; 500]).unwrap();
        assert_eq!(t.status, TauStatus::ZeroVariance);
        assert!(autocorrelation_time(&[1.0; 50]).is_err());
    }

    #[test]
    fn bootstrap_mean_of_normals() {
        let mut rng = SimRng::seed_from_u64(3);
        let x: Vec<f64> = (0..10_000).map(|_| normal(&mut rng)).collect();
        let blocks: Vec<f64> = x.chunks(100).map(mean).collect();
        let (v, se) = bootstrap(&blocks, |b: &f64| *b, 1000, &mut rng, Parallelism::Sequential).unwrap();
        assert!(v.abs() < 0.05);
        assert!((se - 0.01).abs() < 0.002, "stderr {se}");
    }

    #[test]
    fn bootstrap_constant_and_too_few() {
        let mut rng = SimRng::seed_from_u64(4);
        let blocks = vec![2.5; 40];
        let (v, se) = bootstrap(&blocks, |b: &f64| *b, 100, &mut rng, Parallelism::Sequential).unwrap();
        assert_eq!((v, se), (2.5, 0.0));
        assert!(matches!(
            bootstrap(&blocks[..10], |b: &f64| *b, 100, &mut rng, Parallelism::Sequential),
            Err(StatsError::TooFewBlocks(10))
        ));
    }

    #[test]
    fn bootstrap_independent_of_parallelism() {
        let blocks: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let a = bootstrap(&blocks, |b: &f64| *b, 300, &mut SimRng::seed_from_u64(9), Parallelism::Sequential).unwrap();
        let b = bootstrap(&blocks, |b: &f64| *b, 300, &mut SimRng::seed_from_u64(9), Parallelism::Threads(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ordered_stream() {
        let ms: Vec<Measurement> = (0..500).map(|i| Measurement::new(i, -10.0, 1.0)).collect();
        let s = estimate_observables(&ms, None, 10, 1.0, &EstimatorOptions::default()).unwrap();
        assert!((s.m.value - 1.0).abs() < 1e-12);
        assert!(s.chi.value.abs() < 1e-10);
        assert!((s.u.value - 2.0 / 3.0).abs() < 1e-12);
        assert!(s.c.value.abs() < 1e-10);
    }

    #[test]
    fn gaussian_binder_vanishes() {
        let mut rng = SimRng::seed_from_u64(5);
        let ms: Vec<Measurement> = (0..400_000)
            .map(|i| Measurement::new(i, 0.0, 0.1 * normal(&mut rng)))
            .collect();
        let s = estimate_observables(&ms, None, 100, 1.0, &EstimatorOptions::default()).unwrap();
        assert!(s.u.value.abs() < 0.01, "U = {}", s.u.value);
    }

    #[test]
    fn too_few_measurements() {
        let ms: Vec<Measurement> = (0..50).map(|i| Measurement::new(i, 0.0, 0.5)).collect();
        assert!(estimate_observables(&ms, None, 4, 1.0, &EstimatorOptions::default()).is_err());
    }

    #[test]
    fn stderr_shrinks_with_sample_size() {
        let mut rng = SimRng::seed_from_u64(6);
        let x: Vec<f64> = (0..40_000).map(|_| normal(&mut rng)).collect();
        let se = |data: &[f64]| {
            let blocks: Vec<f64> = data.chunks(100).map(mean).collect();
            bootstrap(&blocks, |b: &f64| *b, 2000, &mut SimRng::seed_from_u64(1), Parallelism::Sequential)
                .unwrap()
                .1
        };
        let ratio = se(&x[..20_000]) / se(&x);
        assert!((ratio - 2f64.sqrt()).abs() < 0.2 * 2f64.sqrt(), "ratio {ratio}");
    }
}
