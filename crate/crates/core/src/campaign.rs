//! Campaign configuration, grid planning and execution into a record store.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnalysisConfig;
use crate::couplings::{CouplingError, CouplingTable, FractionalOrder, PeriodicCouplingTable, MAX_SIMULATED_ORDER};
use crate::engine::{
    derive_seed, run_isolated, Algorithm, BondSampling, Equilibration, InitialState, RunSpec,
    RNG_ALGORITHM,
};
use crate::lattice::{ClassicalModel, Geometry, LatticeError};
use crate::parallel::{map_indexed, Parallelism};
use crate::store::{self, Manifest, PointRecord, PointStatus, StoreError};
use crate::trotter::{map_with_table, AspectRule, QuantumSpec, TrotterError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Trotter(#[from] TrotterError),
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Periodic chain, control parameter `T`.
    #[serde(rename = "classical_1d")]
    Classical1d,
    /// `L × L` grid with fractional couplings along rows and a
    /// nearest-neighbour vertical bond, control parameter `T`.
    #[serde(rename = "classical_2d")]
    Classical2d,
    /// Transverse-field chain through the Trotter mapping, control `g`.
    #[serde(rename = "quantum_1d")]
    Quantum1d,
}

impl Mode {
    fn tag(self) -> u64 {
        match self {
            Mode::Classical1d => 1,
            Mode::Classical2d => 2,
            Mode::Quantum1d => 3,
        }
    }

    pub fn is_quantum(self) -> bool {
        self == Mode::Quantum1d
    }

    /// Name of the control parameter.
    pub fn control_name(self) -> &'static str {
        if self.is_quantum() {
            "g"
        } else {
            "T"
        }
    }

    /// Dimension of the simulated lattice; the quantum chain maps onto a
    /// two-dimensional classical grid.
    pub fn dimension(self) -> usize {
        match self {
            Mode::Classical1d => 1,
            Mode::Classical2d | Mode::Quantum1d => 2,
        }
    }
}

/// A fractional order accepted by the simulation (`0 < q <= 2`).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SimulatedOrder(FractionalOrder);

impl SimulatedOrder {
    pub fn order(self) -> FractionalOrder {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0.value()
    }
}

impl TryFrom<f64> for SimulatedOrder {
    type Error = String;
    fn try_from(q: f64) -> Result<Self, String> {
        if q > MAX_SIMULATED_ORDER {
            return Err(format!(
                "q = {q} exceeds the simulation bound q <= {MAX_SIMULATED_ORDER}: \
                 beyond it the couplings alternate in sign and the model is no longer ferromagnetic"
            ));
        }
        FractionalOrder::simulable(q).map(SimulatedOrder).map_err(|e| e.to_string())
    }
}

impl From<SimulatedOrder> for f64 {
    fn from(q: SimulatedOrder) -> f64 {
        q.value()
    }
}

fn default_j0() -> f64 {
    1.0
}

fn default_tail_tolerance() -> f64 {
    1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingsSection {
    pub q: Vec<SimulatedOrder>,
    #[serde(default = "default_j0")]
    pub j0: f64,
    #[serde(default = "default_tail_tolerance")]
    pub tail_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub sizes: Vec<usize>,
    /// Vertical bond of the classical grid; defaults to `j0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertical_coupling: Option<f64>,
}

/// One block of control-parameter values, optionally restricted to some
/// orders and sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// Longitudinal fields; `[0.0]` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<f64>>,
}

impl ScanSection {
    /// The control values of this block.
    pub fn controls(&self) -> Result<Vec<f64>, ConfigError> {
        let vals = match (&self.values, self.start, self.stop, self.count) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(a), Some(b), Some(n)) => {
                if n == 0 {
                    return Err(invalid("scan count must be >= 1"));
                }
                if n == 1 {
                    if a != b {
                        return Err(invalid("scan with count = 1 needs start = stop"));
                    }
                    vec![a]
                } else {
                    // Rounded so that grid values and file names stay short.
                    (0..n)
                        .map(|i| {
                            let v = a + (b - a) * i as f64 / (n - 1) as f64;
                            (v * 1e10).round() / 1e10
                        })
                        .collect()
                }
            }
            _ => return Err(invalid("scan needs either `values` or all of `start`, `stop`, `count`")),
        };
        if vals.is_empty() {
            return Err(invalid("scan has no values"));
        }
        if let Some(v) = vals.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(invalid(format!("control values must be positive and finite, got {v}")));
        }
        Ok(vals)
    }

    pub fn field_values(&self) -> Vec<f64> {
        self.fields.clone().unwrap_or_else(|| vec![0.0])
    }

    fn applies(&self, q: f64, size: usize) -> bool {
        self.q.as_ref().is_none_or(|qs| qs.iter().any(|x| (x - q).abs() < 1e-12))
            && self.sizes.as_ref().is_none_or(|s| s.contains(&size))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    Metropolis,
    Cluster,
    #[default]
    Mixed,
}

fn default_clusters() -> u32 {
    1
}

fn default_thin() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    #[serde(default)]
    pub algorithm: AlgorithmName,
    /// Cluster updates per step of the mixed schedule.
    #[serde(default = "default_clusters")]
    pub clusters: u32,
    #[serde(default)]
    pub bond_sampling: BondSampling,
    /// Fixed equilibration sweeps; adaptive when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_equil: Option<u64>,
    pub n_measure: u64,
    #[serde(default = "default_thin")]
    pub thin: u64,
    #[serde(default)]
    pub initial: InitialState,
}

impl EngineSection {
    pub fn algorithm(&self) -> Algorithm {
        match self.algorithm {
            AlgorithmName::Metropolis => Algorithm::Metropolis,
            AlgorithmName::Cluster => Algorithm::Cluster,
            AlgorithmName::Mixed => Algorithm::Mixed { clusters: self.clusters },
        }
    }

    pub fn equilibration(&self) -> Equilibration {
        match self.n_equil {
            Some(n) => Equilibration::Fixed(n),
            None => Equilibration::Adaptive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AspectName {
    #[default]
    Linear,
    Fixed,
}

fn default_aspect_c() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumSection {
    pub dtau: Vec<f64>,
    #[serde(default)]
    pub aspect: AspectName,
    /// `c` in `L_τ Δτ = c L`.
    #[serde(default = "default_aspect_c")]
    pub c: f64,
    /// Slice count for the fixed rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slices: Option<usize>,
}

impl QuantumSection {
    pub fn rule(&self) -> Result<AspectRule, ConfigError> {
        match self.aspect {
            AspectName::Linear => {
                if !(self.c > 0.0) || !self.c.is_finite() {
                    return Err(invalid(format!("aspect ratio c must be positive, got {}", self.c)));
                }
                Ok(AspectRule::Linear { c: self.c })
            }
            AspectName::Fixed => self
                .slices
                .map(|slices| AspectRule::Fixed { slices })
                .ok_or_else(|| invalid("fixed aspect rule needs `slices`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Output directory; the command line may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub couplings: CouplingsSection,
    pub lattice: LatticeSection,
    pub scan: Vec<ScanSection>,
    pub engine: EngineSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantum: Option<QuantumSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisConfig>,
}

/// Identity of a grid point. Seeds and file names derive from it alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointKey {
    pub mode: Mode,
    pub q: f64,
    pub size: usize,
    /// Temperature (classical) or transverse field (quantum).
    pub control: f64,
    pub field: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtau: Option<f64>,
}

impl PointKey {
    pub fn seed(&self, master: u64) -> u64 {
        derive_seed(
            master,
            &[
                self.mode.tag(),
                self.q.to_bits(),
                self.size as u64,
                self.control.to_bits(),
                self.field.to_bits(),
                self.dtau.map_or(0, f64::to_bits),
            ],
        )
    }

    pub fn stem(&self) -> String {
        let mut s = format!(
            "q{}_L{}_{}{}_h{}",
            self.q,
            self.size,
            self.mode.control_name(),
            self.control,
            self.field
        );
        if let Some(dt) = self.dtau {
            s.push_str(&format!("_dt{dt}"));
        }
        s
    }

    /// Inverse temperature at which the classical model is sampled.
    pub fn beta(&self) -> f64 {
        if self.mode.is_quantum() {
            1.0
        } else {
            1.0 / self.control
        }
    }
}

/// A grid point ready to run.
#[derive(Debug, Clone)]
pub struct PlannedPoint {
    pub key: PointKey,
    pub seed: u64,
    pub slices: Option<usize>,
    pub spec: RunSpec,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.couplings.q.is_empty() {
            return Err(invalid("couplings.q is empty"));
        }
        if !(self.couplings.j0 > 0.0) || !self.couplings.j0.is_finite() {
            return Err(invalid(format!("j0 must be positive, got {}", self.couplings.j0)));
        }
        if !(self.couplings.tail_tolerance > 0.0) {
            return Err(invalid("tail_tolerance must be positive"));
        }
        if self.lattice.sizes.is_empty() {
            return Err(invalid("lattice.sizes is empty"));
        }
        if let Some(&l) = self.lattice.sizes.iter().find(|&&l| l < 4 || l % 2 == 1) {
            return Err(invalid(format!("sizes must be even and >= 4, got {l}")));
        }
        if self.mode != Mode::Classical2d && self.lattice.vertical_coupling.is_some() {
            return Err(invalid("vertical_coupling only applies to classical_2d"));
        }
        if self.scan.is_empty() {
            return Err(invalid("at least one [[scan]] block is required"));
        }
        let algorithm = self.engine.algorithm();
        for s in &self.scan {
            s.controls()?;
            if let Some(h) = s.field_values().iter().find(|h| !h.is_finite()) {
                return Err(invalid(format!("non-finite field {h}")));
            }
            if algorithm == Algorithm::Cluster && s.field_values().iter().any(|&h| h != 0.0) {
                return Err(invalid("cluster updates require h = 0; use the mixed or metropolis schedule for field scans"));
            }
        }
        if self.engine.n_measure == 0 || self.engine.thin == 0 || self.engine.n_measure < self.engine.thin {
            return Err(invalid("need n_measure >= thin >= 1"));
        }
        if self.engine.n_equil == Some(0) {
            return Err(invalid("n_equil must be >= 1"));
        }
        if let Algorithm::Mixed { clusters: 0 } = algorithm {
            return Err(invalid("mixed schedule needs clusters >= 1"));
        }
        match (&self.quantum, self.mode.is_quantum()) {
            (Some(qs), true) => {
                if qs.dtau.is_empty() {
                    return Err(invalid("quantum.dtau is empty"));
                }
                let rule = qs.rule()?;
                for &dt in &qs.dtau {
                    for &l in &self.lattice.sizes {
                        rule.slices(l, dt)?;
                    }
                }
            }
            (None, true) => return Err(invalid("quantum_1d needs a [quantum] section")),
            (Some(_), false) => return Err(invalid("[quantum] only applies to quantum_1d")),
            (None, false) => {}
        }
        if self.plan_keys()?.is_empty() {
            return Err(invalid("the scan blocks select no grid points"));
        }
        Ok(())
    }

    /// Grid points in a fixed order, duplicates removed.
    pub fn plan_keys(&self) -> Result<Vec<PointKey>, ConfigError> {
        let dtaus: Vec<Option<f64>> = match &self.quantum {
            Some(qs) if self.mode.is_quantum() => qs.dtau.iter().map(|&d| Some(d)).collect(),
            _ => vec![None],
        };
        let mut seen = BTreeSet::new();
        let mut keys = Vec::new();
        for q in &self.couplings.q {
            for &size in &self.lattice.sizes {
                for &dtau in &dtaus {
                    for scan in self.scan.iter().filter(|s| s.applies(q.value(), size)) {
                        for control in scan.controls()? {
                            for field in scan.field_values() {
                                let key = PointKey {
                                    mode: self.mode,
                                    q: q.value(),
                                    size,
                                    control,
                                    field,
                                    dtau,
                                };
                                if seen.insert(key.stem()) {
                                    keys.push(key);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(keys)
    }

    /// SHA-256 of the canonical JSON of everything that determines the
    /// records (output location and analysis settings excluded).
    pub fn manifest_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = None;
        canonical.analysis = None;
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        store::sha256_hex(&json)
    }

    /// Builds the run specification of every grid point.
    pub fn plan(&self) -> Result<Vec<PlannedPoint>, ConfigError> {
        self.validate()?;
        let keys = self.plan_keys()?;
        let mut tables: Vec<((u64, usize), PeriodicCouplingTable)> = Vec::new();
        let mut out = Vec::with_capacity(keys.len());
        for key in keys {
            let ident = (key.q.to_bits(), key.size);
            let periodic = match tables.iter().find(|(k, _)| *k == ident) {
                Some((_, t)) => t.clone(),
                None => {
                    let order = FractionalOrder::simulable(key.q)?;
                    let table = CouplingTable::build(order, 4 * key.size)?;
                    let t = PeriodicCouplingTable::new(&table, key.size, self.couplings.tail_tolerance)?;
                    tables.push((ident, t.clone()));
                    t
                }
            };
            let j0 = self.couplings.j0;
            let (model, geometry, slices) = match self.mode {
                Mode::Classical1d => (
                    ClassicalModel::chain(&periodic, j0, key.field)?,
                    Geometry::chain(key.size),
                    None,
                ),
                Mode::Classical2d => {
                    let vertical = self.lattice.vertical_coupling.unwrap_or(j0);
                    (
                        ClassicalModel::grid(&periodic, j0, key.field, vertical)?,
                        Geometry::grid(key.size, key.size),
                        None,
                    )
                }
                Mode::Quantum1d => {
                    let qs = self.quantum.as_ref().expect("validated");
                    let dtau = key.dtau.expect("quantum keys carry dtau");
                    let slices = qs.rule()?.slices(key.size, dtau)?;
                    let spec = QuantumSpec {
                        size: key.size,
                        order: FractionalOrder::simulable(key.q)?,
                        j0,
                        g: key.control,
                        h: key.field,
                        dtau,
                        slices,
                    };
                    let (model, geometry) = map_with_table(&spec, &periodic)?;
                    (model, geometry, Some(slices))
                }
            };
            let seed = key.seed(self.seed);
            out.push(PlannedPoint {
                key,
                seed,
                slices,
                spec: RunSpec {
                    model,
                    geometry,
                    beta: key.beta(),
                    equilibration: self.engine.equilibration(),
                    n_measure: self.engine.n_measure,
                    thin: self.engine.thin,
                    algorithm: self.engine.algorithm(),
                    bond_sampling: self.engine.bond_sampling,
                    initial: self.engine.initial,
                    seed,
                },
            });
        }
        Ok(out)
    }
}

/// Summary of a finished campaign.
#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub manifest: Manifest,
    pub dir: PathBuf,
}

impl CampaignOutcome {
    pub fn failures(&self) -> Vec<&PointRecord> {
        self.manifest
            .points
            .iter()
            .filter(|p| p.status == PointStatus::Failed)
            .collect()
    }
}

/// Runs every grid point, writing records as they finish and the manifest
/// at the end. Point failures are recorded, not propagated.
pub fn run_campaign(
    config: &CampaignConfig,
    dir: &Path,
    parallelism: Parallelism,
) -> Result<CampaignOutcome, CampaignError> {
    let plan = config.plan()?;
    fs::create_dir_all(dir).map_err(|source| StoreError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let hash = config.manifest_hash();
    let started = Instant::now();
    let records = map_indexed(&plan, parallelism, |_, p| {
        let t0 = Instant::now();
        let stem = p.key.stem();
        let mut rec = PointRecord {
            key: p.key,
            stem: stem.clone(),
            seed: p.seed,
            slices: p.slices,
            status: PointStatus::Ok,
            error: None,
            n_equil: 0,
            acceptance: 0.0,
            mean_cluster: 0.0,
            wall_time_s: 0.0,
        };
        let written = run_isolated(&p.spec).map_err(|e| e.to_string()).and_then(|out| {
            store::write_record(&store::record_path(dir, &stem), &hash, &p.key, &out.measurements)
                .and_then(|_| store::write_correlation(&store::correlation_path(dir, &stem), &hash, &out.correlation))
                .map_err(|e| e.to_string())?;
            Ok(out)
        });
        match written {
            Ok(out) => {
                rec.n_equil = out.n_equil;
                rec.acceptance = out.acceptance;
                rec.mean_cluster = out.mean_cluster;
                log::info!("{stem}: done");
            }
            Err(e) => {
                log::error!("{stem}: {e}");
                rec.status = PointStatus::Failed;
                rec.error = Some(e);
            }
        }
        rec.wall_time_s = t0.elapsed().as_secs_f64();
        rec
    });
    let aspect_rule = match (&config.quantum, config.mode.is_quantum()) {
        (Some(qs), true) => qs.rule().ok().map(|r| {
            format!("{}; the dynamical exponent z = 1 is assumed, exact only at q = 2", r.describe())
        }),
        _ => None,
    };
    let manifest = Manifest {
        manifest_hash: hash,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        rng_algorithm: RNG_ALGORITHM.to_string(),
        config: config.clone(),
        aspect_rule,
        points: records,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    manifest.write(dir)?;
    Ok(CampaignOutcome {
        manifest,
        dir: dir.to_path_buf(),
    })
}
