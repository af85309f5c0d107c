//! Finite-size-scaling pipeline over a record store: per-point estimates,
//! critical points, exponents and plot tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::campaign::Mode;
use crate::engine::derive_seed;
use crate::fss::{
    alpha_hyperscaling, binder_crossing, disagree, exponent_from_peaks, extract_delta, extract_eta,
    extrapolate_tc, fit_collapse, hausdorff_report, kappa_exponent, locate_peak, CollapseBounds,
    CollapseConstraints, CollapseFit, CorrelationProfile, CrossingReport, Exponent, ExponentEstimate,
    FieldScaling, FssError, HausdorffReport, ScalingCurve, ScalingPoint, TcFit,
};
use crate::lattice::Geometry;
use crate::parallel::{map_indexed, Parallelism};
use crate::stats::{
    estimate_observables, BinderConvention, EstimatorOptions, MagnetizationConvention, Observable, ObservableSet,
};
use crate::store::{load_store, StoreError, StoredPoint};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("the record store holds no successful points")]
    EmptyStore,
    #[error("q = {q}: {got} system sizes with zero-field data, at least 3 are needed")]
    InsufficientSizes { q: f64, got: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Which estimate of the effective `1/ν` feeds the bare exponents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuMethod {
    /// Collapse of the Binder cumulant.
    #[default]
    Collapse,
    /// Peak heights of `dU/dβ` (classical modes only).
    Derivative,
}

/// Analysis settings, read from the `[analysis]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub magnetization: MagnetizationConvention,
    pub binder: BinderConvention,
    pub n_resamples: usize,
    pub seed: u64,
    pub field_scaling: FieldScaling,
    /// Overrides `κ = max(1, d/(2q))`.
    pub kappa: Option<f64>,
    pub nu_method: NuMethod,
    /// Half-width of the collapse window in `|X - X_c| / X_c`.
    pub collapse_window: f64,
    /// Parametric bootstrap refits for collapse and δ errors.
    pub n_bootstrap_fits: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            magnetization: MagnetizationConvention::Absolute,
            binder: BinderConvention::Squared,
            n_resamples: 200,
            seed: 0,
            field_scaling: FieldScaling::Gap,
            kappa: None,
            nu_method: NuMethod::Collapse,
            collapse_window: 0.1,
            n_bootstrap_fits: 50,
        }
    }
}

/// Estimates of one grid point.
#[derive(Debug, Clone)]
pub struct PointEstimates {
    pub q: f64,
    pub size: usize,
    pub control: f64,
    pub field: f64,
    pub dtau: Option<f64>,
    pub set: ObservableSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRow {
    pub observable: String,
    pub size: usize,
    pub control: f64,
    pub control_stderr: f64,
    pub height: f64,
    pub height_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub value: f64,
    pub stderr: f64,
    pub method: String,
}

/// Results for one `(q, Δτ)` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub q: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dtau: Option<f64>,
    pub control: String,
    pub sizes: Vec<usize>,
    pub kappa: f64,
    pub transition_detected: bool,
    pub crossing: Option<CrossingReport>,
    pub pseudo_critical: Vec<PeakRow>,
    pub shift_fit: Option<TcFit>,
    pub critical_point: Option<CriticalPoint>,
    pub collapse: Option<CollapseFit>,
    /// Exponents used downstream, one per name.
    pub exponents: Vec<ExponentEstimate>,
    /// Estimates from secondary routes, kept for comparison.
    pub alternatives: Vec<ExponentEstimate>,
    pub alpha_disagreement: Option<bool>,
    pub hausdorff_dimension: Option<f64>,
    pub notes: Vec<String>,
}

impl GroupReport {
    pub fn exponent(&self, name: Exponent) -> Option<&ExponentEstimate> {
        self.exponents.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub manifest_hash: String,
    pub mode: Mode,
    pub analysis: AnalysisConfig,
    pub groups: Vec<GroupReport>,
    pub hausdorff: Option<HausdorffReport>,
    pub underresolved_points: Vec<String>,
}

impl Report {
    pub fn group(&self, q: f64) -> Option<&GroupReport> {
        self.groups.iter().find(|g| (g.q - q).abs() < 1e-12)
    }
}

/// Everything `analyze` produces, ready to be written out.
#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub report: Report,
    pub estimates: Vec<PointEstimates>,
}

fn geometry_of(mode: Mode, size: usize, slices: Option<usize>) -> Geometry {
    match mode {
        Mode::Classical1d => Geometry::chain(size),
        Mode::Classical2d => Geometry::grid(size, size),
        Mode::Quantum1d => Geometry::grid(size, slices.unwrap_or(2)),
    }
}

fn estimate_points(
    points: &[StoredPoint],
    config: &AnalysisConfig,
    parallelism: Parallelism,
) -> Vec<Result<PointEstimates, String>> {
    map_indexed(points, parallelism, |_, p| {
        let key = p.record.key;
        let geometry = geometry_of(key.mode, key.size, p.record.slices);
        let options = EstimatorOptions {
            magnetization: config.magnetization,
            binder: config.binder,
            n_resamples: config.n_resamples,
            seed: derive_seed(config.seed, &[p.record.seed]),
            parallelism: crate::parallel::Parallelism::Sequential,
        };
        estimate_observables(&p.measurements, p.correlation.as_ref(), geometry.sites(), key.beta(), &options)
            .map(|set| PointEstimates {
                q: key.q,
                size: key.size,
                control: key.control,
                field: key.field,
                dtau: key.dtau,
                set,
            })
            .map_err(|e| format!("{}: {e}", p.record.stem))
    })
}

/// `(q, Δτ)` identity with a total order.
type GroupKey = (u64, u64);

fn group_key(q: f64, dtau: Option<f64>) -> GroupKey {
    (q.to_bits(), dtau.map_or(0, f64::to_bits))
}

fn curve(points: &[&PointEstimates], size: usize, f: impl Fn(&PointEstimates) -> Option<(f64, f64)>) -> ScalingCurve {
    let pts = points
        .iter()
        .filter(|p| p.size == size)
        .filter_map(|p| {
            f(p).map(|(value, stderr)| ScalingPoint {
                control: p.control,
                value,
                stderr,
            })
        })
        .collect();
    ScalingCurve::new(size, pts)
}

fn observable(o: Observable) -> impl Fn(&PointEstimates) -> Option<(f64, f64)> {
    move |p| p.set.get(o).map(|e| (e.value, e.stderr))
}

/// Linear interpolation of `(value, stderr)` at `x` between the two
/// bracketing control points of a size.
fn at_control(points: &[&PointEstimates], size: usize, x: f64, f: impl Fn(&PointEstimates) -> Option<(f64, f64)>) -> Option<(f64, f64)> {
    let mut pts: Vec<(f64, (f64, f64))> = points
        .iter()
        .filter(|p| p.size == size)
        .filter_map(|p| f(p).map(|v| (p.control, v)))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let i = pts.windows(2).position(|w| w[0].0 <= x && x <= w[1].0)?;
    let ((x0, (v0, s0)), (x1, (v1, s1))) = (pts[i], pts[i + 1]);
    let w = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
    let v = (1.0 - w) * v0 + w * v1;
    let s = (((1.0 - w) * s0).powi(2) + (w * s1).powi(2)).sqrt();
    Some((v, s))
}

fn note(notes: &mut Vec<String>, what: &str, e: impl std::fmt::Display) {
    notes.push(format!("{what}: {e}"));
}

fn scaled(mut est: ExponentEstimate, name: Exponent, factor: f64, factor_se: f64, method: &str) -> ExponentEstimate {
    let value = est.value * factor;
    let rel = |v: f64, s: f64| if v != 0.0 { s / v } else { 0.0 };
    let se = value.abs() * (rel(est.value, est.stderr).powi(2) + rel(factor, factor_se).powi(2)).sqrt();
    est.name = name;
    est.value = value;
    est.stderr = se;
    est.method = method.to_string();
    est
}

/// Evaluates an estimate at the critical point and adds, in quadrature,
/// the largest shift seen when the critical point moves by one standard
/// error either way.
fn with_critical_spread(
    f: impl Fn(f64) -> Result<ExponentEstimate, FssError>,
    xc: f64,
    xc_stderr: f64,
) -> Result<ExponentEstimate, FssError> {
    let mut est = f(xc)?;
    let shift = [xc - xc_stderr, xc + xc_stderr]
        .iter()
        .filter_map(|&x| f(x).ok())
        .map(|e| (e.value - est.value).abs())
        .fold(0.0, f64::max);
    est.stderr = est.stderr.hypot(shift);
    Ok(est)
}

struct GroupInput<'a> {
    mode: Mode,
    q: f64,
    dtau: Option<f64>,
    zero_field: Vec<&'a PointEstimates>,
    with_field: Vec<&'a PointEstimates>,
}

fn analyze_group(input: &GroupInput, config: &AnalysisConfig, seed: u64) -> GroupReport {
    let mode = input.mode;
    let pts = &input.zero_field;
    let mut sizes: Vec<usize> = pts.iter().map(|p| p.size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let d = mode.dimension();
    let kappa = config.kappa.unwrap_or_else(|| kappa_exponent(d, input.q));
    let mut notes = Vec::new();
    let mut exponents = Vec::new();
    let mut alternatives = Vec::new();

    let curves_of = |o: Observable| -> Vec<ScalingCurve> { sizes.iter().map(|&l| curve(pts, l, observable(o))).collect() };
    let u_curves = curves_of(Observable::U);
    let crossing = match binder_crossing(&u_curves) {
        Ok(c) => Some(c),
        Err(e) => {
            note(&mut notes, "binder crossing", e);
            None
        }
    };
    let transition_detected = crossing.as_ref().is_some_and(|c| c.transition_detected);

    let mut pseudo_critical = Vec::new();
    let mut peaks_of = |o: Observable, curves: &[ScalingCurve], notes: &mut Vec<String>| -> Vec<PeakRow> {
        let mut rows = Vec::new();
        for c in curves {
            match locate_peak(c) {
                Ok(p) => rows.push(PeakRow {
                    observable: o.label(),
                    size: c.size,
                    control: p.control,
                    control_stderr: p.control_stderr,
                    height: p.height,
                    height_stderr: p.height_stderr,
                }),
                Err(e) => note(notes, &format!("{} peak at L = {}", o.label(), c.size), e),
            }
        }
        pseudo_critical.extend(rows.iter().cloned());
        rows
    };
    let chi_peaks = peaks_of(Observable::Chi, &curves_of(Observable::Chi), &mut notes);
    let c_peaks = peaks_of(Observable::C, &curves_of(Observable::C), &mut notes);
    let du_peaks = if mode.is_quantum() {
        Vec::new()
    } else {
        // U falls with T, so dU/dβ is positive near the transition.
        peaks_of(Observable::DuDbeta, &curves_of(Observable::DuDbeta), &mut notes)
    };

    let shift_fit = if chi_peaks.len() >= 3 {
        let input: Vec<(usize, f64, f64)> = chi_peaks.iter().map(|p| (p.size, p.control, p.control_stderr)).collect();
        match extrapolate_tc(&input, derive_seed(seed, &[1])) {
            Ok(f) => Some(f),
            Err(e) => {
                note(&mut notes, "pseudo-critical extrapolation", e);
                None
            }
        }
    } else {
        None
    };

    let critical_point = match &crossing {
        Some(c) if c.transition_detected => match (c.tc, c.tc_stderr) {
            (Some(value), Some(stderr)) => Some(CriticalPoint {
                value,
                stderr,
                method: "Binder crossing of the two largest sizes".into(),
            }),
            _ => None,
        },
        _ => None,
    };

    let mut collapse = None;
    let mut alpha_disagreement = None;
    let mut hausdorff_dimension = None;
    if let Some(cp) = &critical_point {
        let xc = cp.value;
        let w = config.collapse_window;
        let windowed: Vec<ScalingCurve> = u_curves
            .iter()
            .map(|c| {
                let p = c.points.iter().filter(|p| ((p.control - xc) / xc).abs() <= w).copied().collect();
                ScalingCurve::new(c.size, p)
            })
            .filter(|c| c.points.len() >= 2)
            .collect();
        let half = (3.0 * cp.stderr).max(0.01 * xc);
        let bounds = CollapseBounds {
            tc: (xc - half, xc + half),
            inv_nu: (0.05, 5.0),
            ratio: (0.0, 0.0),
        };
        let fixed = CollapseConstraints {
            ratio: Some(0.0),
            ..Default::default()
        };
        let mut nu_eff: Option<(f64, f64, String)> = None;
        match fit_collapse(&windowed, fixed, bounds, config.n_bootstrap_fits, derive_seed(seed, &[2])) {
            Ok(fit) => {
                let mut e = ExponentEstimate::new(
                    Exponent::InvNu,
                    fit.params.inv_nu / kappa,
                    fit.stderr.inv_nu / kappa,
                    "Binder cumulant collapse",
                );
                e.window = Some((xc * (1.0 - w), xc * (1.0 + w)));
                e.quality = Some(fit.quality);
                if config.nu_method == NuMethod::Collapse {
                    nu_eff = Some((fit.params.inv_nu, fit.stderr.inv_nu, e.method.clone()));
                    exponents.push(e);
                } else {
                    alternatives.push(e);
                }
                collapse = Some(fit);
            }
            Err(e) => note(&mut notes, "Binder collapse", e),
        }
        if !du_peaks.is_empty() {
            let h: Vec<(usize, f64, f64)> = du_peaks.iter().map(|p| (p.size, p.height, p.height_stderr)).collect();
            match exponent_from_peaks(&h, Exponent::InvNu, kappa) {
                Ok(mut e) => {
                    e.method = "dU/dbeta peak heights".into();
                    if config.nu_method == NuMethod::Derivative || nu_eff.is_none() {
                        nu_eff = Some((e.value * kappa, e.stderr * kappa, e.method.clone()));
                        exponents.retain(|x| x.name != Exponent::InvNu);
                        exponents.push(e);
                    } else {
                        alternatives.push(e);
                    }
                }
                Err(e) => note(&mut notes, "dU/dbeta peak scaling", e),
            }
        }
        if let Some(f) = &shift_fit {
            if f.omega > 0.0 {
                alternatives.push(ExponentEstimate::new(
                    Exponent::InvNu,
                    f.omega / kappa,
                    f.omega_stderr / kappa,
                    "chi peak shift exponent",
                ));
            }
        }

        if let Some((inv_eff, inv_eff_se, method)) = nu_eff {
            let nu = ExponentEstimate::new(
                Exponent::Nu,
                kappa / inv_eff,
                kappa * inv_eff_se / (inv_eff * inv_eff),
                &method,
            );
            exponents.push(nu.clone());

            if chi_peaks.len() >= 3 {
                let h: Vec<(usize, f64, f64)> = chi_peaks.iter().map(|p| (p.size, p.height, p.height_stderr)).collect();
                match exponent_from_peaks(&h, Exponent::GammaOverNu, kappa) {
                    Ok(r) => {
                        exponents.push(scaled(r.clone(), Exponent::Gamma, nu.value, nu.stderr, "chi peak heights x nu"));
                        exponents.push(r);
                    }
                    Err(e) => note(&mut notes, "chi peak scaling", e),
                }
            }

            let beta_over_nu_at = |x: f64| {
                let m_at: Vec<(usize, f64, f64)> = sizes
                    .iter()
                    .filter_map(|&l| at_control(pts, l, x, observable(Observable::M)).map(|(v, s)| (l, v, s)))
                    .collect();
                exponent_from_peaks(&m_at, Exponent::BetaOverNu, kappa).map(|mut r| {
                    r.value = -r.value;
                    r
                })
            };
            let mut beta_over_nu = None;
            match with_critical_spread(beta_over_nu_at, xc, cp.stderr) {
                Ok(mut r) => {
                    r.method = "M at the critical point".into();
                    beta_over_nu = Some(r.value);
                    exponents.push(scaled(r.clone(), Exponent::Beta, nu.value, nu.stderr, "M scaling x nu"));
                    exponents.push(r);
                }
                Err(e) => note(&mut notes, "M scaling at the critical point", e),
            }

            let alpha_hs = alpha_hyperscaling(&nu, d, kappa);
            if c_peaks.len() >= 3 {
                let h: Vec<(usize, f64, f64)> = c_peaks.iter().map(|p| (p.size, p.height, p.height_stderr)).collect();
                match exponent_from_peaks(&h, Exponent::AlphaOverNu, kappa) {
                    Ok(r) => {
                        let a = scaled(r.clone(), Exponent::Alpha, nu.value, nu.stderr, "C peak heights x nu");
                        alpha_disagreement = Some(disagree(&a, &alpha_hs));
                        exponents.push(a);
                        exponents.push(r);
                        alternatives.push(alpha_hs);
                    }
                    Err(e) => {
                        note(&mut notes, "C peak scaling", e);
                        exponents.push(alpha_hs);
                    }
                }
            } else {
                exponents.push(alpha_hs);
            }

            let eta_at = |x: f64| {
                let profiles: Vec<CorrelationProfile> = sizes
                    .iter()
                    .filter_map(|&l| {
                        let vals: Option<Vec<(f64, f64)>> =
                            (0..=l / 2).map(|r| at_control(pts, l, x, observable(Observable::G(r)))).collect();
                        vals.map(|v| CorrelationProfile {
                            size: l,
                            values: v.iter().map(|x| x.0).collect(),
                            stderr: v.iter().map(|x| x.1).collect(),
                        })
                    })
                    .collect();
                extract_eta(&profiles, d)
            };
            match with_critical_spread(eta_at, xc, cp.stderr) {
                Ok(eta) => {
                    hausdorff_dimension = Some(2.0 - eta.value);
                    exponents.push(eta);
                }
                Err(e) => note(&mut notes, "eta", e),
            }

            if !input.with_field.is_empty() {
                match (beta_over_nu, delta_curves(&input.with_field, pts, xc)) {
                    (Some(bn), Ok(curves)) => {
                        match extract_delta(&curves, bn * kappa, inv_eff, config.field_scaling, derive_seed(seed, &[3])) {
                            Ok(e) => exponents.push(e),
                            Err(e) => note(&mut notes, "delta", e),
                        }
                    }
                    (None, _) => notes.push("delta: needs beta/nu".into()),
                    (_, Err(e)) => notes.push(format!("delta: {e}")),
                }
            }
        } else {
            notes.push("no estimate of 1/nu; bare exponents skipped".into());
        }
        exponents.push(ExponentEstimate::new(Exponent::Kappa, kappa, 0.0, "max(1, d / 2q)"));
    } else if !transition_detected {
        notes.push("no transition detected; exponents not extracted".into());
    }

    GroupReport {
        q: input.q,
        dtau: input.dtau,
        control: mode.control_name().into(),
        sizes,
        kappa,
        transition_detected,
        crossing,
        pseudo_critical,
        shift_fit,
        critical_point,
        collapse,
        exponents,
        alternatives,
        alpha_disagreement,
        hausdorff_dimension,
        notes,
    }
}

/// `M(h)` per size at the scan control closest to `xc`, with the zero-field
/// point of that control prepended when available.
fn delta_curves(with_field: &[&PointEstimates], zero: &[&PointEstimates], xc: f64) -> Result<Vec<ScalingCurve>, String> {
    let mut controls: Vec<f64> = with_field.iter().map(|p| p.control).collect();
    controls.sort_by(f64::total_cmp);
    controls.dedup();
    let control = *controls
        .iter()
        .min_by(|a, b| (*a - xc).abs().total_cmp(&(*b - xc).abs()))
        .ok_or("no field scan")?;
    let mut sizes: Vec<usize> = with_field.iter().filter(|p| p.control == control).map(|p| p.size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let curves = sizes
        .iter()
        .map(|&l| {
            let mut pts: Vec<ScalingPoint> = with_field
                .iter()
                .chain(zero.iter())
                .filter(|p| p.size == l && p.control == control && p.field >= 0.0)
                .map(|p| ScalingPoint {
                    control: p.field,
                    value: p.set.m.value,
                    stderr: p.set.m.stderr,
                })
                .collect();
            pts.sort_by(|a, b| a.control.total_cmp(&b.control));
            ScalingCurve::new(l, pts)
        })
        .collect();
    Ok(curves)
}

/// Runs the full pipeline on the store in `dir`.
pub fn analyze(dir: &Path, config: &AnalysisConfig, parallelism: Parallelism) -> Result<AnalysisOutput, AnalysisError> {
    let (manifest, points) = load_store(dir)?;
    if points.is_empty() {
        return Err(AnalysisError::EmptyStore);
    }
    let mode = manifest.config.mode;
    let mut estimates = Vec::new();
    let mut underresolved = Vec::new();
    for (p, r) in points.iter().zip(estimate_points(&points, config, parallelism)) {
        match r {
            Ok(e) => {
                if e.set.underresolved {
                    underresolved.push(p.record.stem.clone());
                }
                estimates.push(e);
            }
            Err(e) => log::warn!("{e}"),
        }
    }
    if estimates.is_empty() {
        return Err(AnalysisError::EmptyStore);
    }

    let mut groups: BTreeMap<GroupKey, GroupInput> = BTreeMap::new();
    for e in &estimates {
        let g = groups.entry(group_key(e.q, e.dtau)).or_insert_with(|| GroupInput {
            mode,
            q: e.q,
            dtau: e.dtau,
            zero_field: Vec::new(),
            with_field: Vec::new(),
        });
        if e.field == 0.0 {
            g.zero_field.push(e);
        } else {
            g.with_field.push(e);
        }
    }
    for g in groups.values() {
        let mut sizes: Vec<usize> = g.zero_field.iter().map(|p| p.size).collect();
        sizes.sort_unstable();
        sizes.dedup();
        if sizes.len() < 3 {
            return Err(AnalysisError::InsufficientSizes { q: g.q, got: sizes.len() });
        }
    }
    let inputs: Vec<&GroupInput> = groups.values().collect();
    let reports: Vec<GroupReport> = map_indexed(&inputs, parallelism, |i, g| {
        analyze_group(g, config, derive_seed(config.seed, &[0x9d, i as u64]))
    });

    // One η per order: the smallest Trotter step wins.
    let mut by_q: BTreeMap<u64, (f64, f64, f64, f64)> = BTreeMap::new();
    for g in &reports {
        if let Some(eta) = g.exponent(Exponent::Eta) {
            let dt = g.dtau.unwrap_or(0.0);
            let e = by_q.entry(g.q.to_bits()).or_insert((g.q, eta.value, eta.stderr, dt));
            if dt < e.3 {
                *e = (g.q, eta.value, eta.stderr, dt);
            }
        }
    }
    let mut rows: Vec<(f64, f64, f64)> = by_q.values().map(|v| (v.0, v.1, v.2)).collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let hausdorff = (!rows.is_empty()).then(|| hausdorff_report(&rows));

    Ok(AnalysisOutput {
        report: Report {
            manifest_hash: manifest.manifest_hash,
            mode,
            analysis: config.clone(),
            groups: reports,
            hausdorff,
            underresolved_points: underresolved,
        },
        estimates,
    })
}

fn header(hash: &str) -> String {
    format!("# manifest_hash: {hash}\n")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl AnalysisOutput {
    /// Per-point estimates keyed by `(q, L, control)`.
    pub fn estimates_csv(&self) -> String {
        let r = &self.report;
        let mut s = header(&r.manifest_hash);
        let _ = writeln!(
            s,
            "q,L,{},h,dtau,observable,value,stderr,tau_int,n_eff",
            r.mode.control_name()
        );
        for e in &self.estimates {
            for o in e.set.all() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{}",
                    e.q,
                    e.size,
                    e.control,
                    e.field,
                    fmt_opt(e.dtau),
                    o.observable.label(),
                    o.value,
                    o.stderr,
                    o.tau_int,
                    o.n_effective
                );
            }
        }
        s
    }

    /// Plot tables by file name.
    pub fn plot_tables(&self) -> Vec<(&'static str, String)> {
        let r = &self.report;
        let ctrl = r.mode.control_name();

        let mut curves = header(&r.manifest_hash);
        let _ = writeln!(curves, "q,dtau,L,{ctrl},observable,value,stderr");
        for e in self.estimates.iter().filter(|e| e.field == 0.0) {
            for o in [Observable::M, Observable::Chi, Observable::C, Observable::U] {
                if let Some(v) = e.set.get(o) {
                    let _ = writeln!(
                        curves,
                        "{},{},{},{},{},{},{}",
                        e.q,
                        fmt_opt(e.dtau),
                        e.size,
                        e.control,
                        o.label(),
                        v.value,
                        v.stderr
                    );
                }
            }
        }

        let mut peaks = header(&r.manifest_hash);
        let _ = writeln!(peaks, "q,dtau,observable,L,{ctrl}_peak,stderr,height,height_stderr");
        let mut critical = header(&r.manifest_hash);
        let _ = writeln!(critical, "q,dtau,method,{ctrl}_c,stderr");
        let mut exps = header(&r.manifest_hash);
        let _ = writeln!(exps, "q,dtau,exponent,value,stderr,method");
        for g in &r.groups {
            let dt = fmt_opt(g.dtau);
            for p in &g.pseudo_critical {
                let _ = writeln!(
                    peaks,
                    "{},{dt},{},{},{},{},{},{}",
                    g.q, p.observable, p.size, p.control, p.control_stderr, p.height, p.height_stderr
                );
            }
            if let Some(cp) = &g.critical_point {
                let _ = writeln!(critical, "{},{dt},crossing,{},{}", g.q, cp.value, cp.stderr);
            }
            if let Some(f) = &g.shift_fit {
                let _ = writeln!(critical, "{},{dt},shift_extrapolation,{},{}", g.q, f.tc, f.tc_stderr);
            }
            for e in g.exponents.iter().chain(&g.alternatives) {
                let _ = writeln!(
                    exps,
                    "{},{dt},{:?},{},{},\"{}\"",
                    g.q, e.name, e.value, e.stderr, e.method
                );
            }
        }

        let mut hd = header(&r.manifest_hash);
        let _ = writeln!(hd, "q,eta,eta_stderr,H_D");
        if let Some(h) = &r.hausdorff {
            for row in &h.rows {
                let _ = writeln!(hd, "{},{},{},{}", row.q, row.eta, row.eta_stderr, row.hausdorff);
            }
        }

        vec![
            ("plot_observables.csv", curves),
            ("plot_pseudocritical.csv", peaks),
            ("plot_critical_points.csv", critical),
            ("plot_exponents.csv", exps),
            ("plot_hausdorff.csv", hd),
        ]
    }

    /// Writes the report, the estimates table and the plot tables.
    pub fn write(&self, dir: &Path) -> Result<(), AnalysisError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| AnalysisError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let json = serde_json::to_string_pretty(&self.report).expect("report serializes") + "\n";
        let p = dir.join(REPORT_FILE);
        fs::write(&p, json).map_err(io(&p))?;
        let p = dir.join("estimates.csv");
        fs::write(&p, self.estimates_csv()).map_err(io(&p))?;
        for (name, body) in self.plot_tables() {
            let p = dir.join(name);
            fs::write(&p, body).map_err(io(&p))?;
        }
        Ok(())
    }
}

/// Plain-text summary of a report.
pub fn render_summary(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "manifest {}", report.manifest_hash);
    let _ = writeln!(s, "mode {:?}", report.mode);
    for g in &report.groups {
        let _ = write!(s, "\nq = {}", g.q);
        if let Some(dt) = g.dtau {
            let _ = write!(s, ", dtau = {dt}");
        }
        let _ = writeln!(s, "  sizes {:?}  kappa {}", g.sizes, g.kappa);
        let _ = writeln!(s, "  transition detected: {}", g.transition_detected);
        if let Some(cp) = &g.critical_point {
            let _ = writeln!(s, "  {}_c = {} +/- {} ({})", g.control, cp.value, cp.stderr, cp.method);
        }
        if let Some(f) = &g.shift_fit {
            let _ = writeln!(s, "  shift extrapolation {} +/- {} (omega {})", f.tc, f.tc_stderr, f.omega);
        }
        for e in &g.exponents {
            let _ = writeln!(s, "  {:<12} {:>10.4} +/- {:.4}  [{}]", format!("{:?}", e.name), e.value, e.stderr, e.method);
        }
        if let Some(h) = g.hausdorff_dimension {
            let _ = writeln!(s, "  H_D = {h:.4}");
        }
        if g.alpha_disagreement == Some(true) {
            let _ = writeln!(s, "  alpha: peak scaling and hyperscaling disagree");
        }
        for n in &g.notes {
            let _ = writeln!(s, "  note: {n}");
        }
    }
    if let Some(h) = &report.hausdorff {
        if let (Some(m), Some(se)) = (h.slope, h.slope_stderr) {
            let _ = writeln!(s, "\nH_D vs q slope {m:.4} +/- {se:.4}");
        }
    }
    s
}
