//! Markov-chain Monte Carlo: single-spin Metropolis sweeps, single-cluster
//! updates for long-range ferromagnetic bonds, reproducible runs and
//! replica-parallel campaigns.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{
    local_field_unchecked, ClassicalModel, Geometry, LatticeError, PairSums, SpinConfiguration,
};
use crate::parallel::{map_indexed, Parallelism};
use crate::stats::autocorrelation_time;

/// Generator used for every replica and resample.
pub type SimRng = ChaCha8Rng;

/// Pinned into manifests so a run can be repeated on another machine.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64)";

/// Number of blocks used to accumulate the correlation function.
pub const CORRELATION_BLOCKS: usize = 64;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid run specification: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("cluster updates require h = 0 (got h = {0})")]
    ClusterWithField(f64),
    #[error("cluster updates require non-negative couplings")]
    NotFerromagnetic,
    #[error("replica panicked: {0}")]
    Panicked(String),
}

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic child seed from a master seed and a key.
pub fn derive_seed(master: u64, key: &[u64]) -> u64 {
    key.iter().fold(mix(master), |acc, &k| mix(acc ^ mix(k)))
}

/// `min(1, e^{-βΔE})`.
pub fn acceptance_probability(delta_e: f64, beta: f64) -> f64 {
    if delta_e <= 0.0 {
        1.0
    } else {
        (-beta * delta_e).exp()
    }
}

/// `1 - e^{-2β K}` for a bond of strength `K` between aligned spins.
pub fn bond_probability(beta: f64, coupling: f64) -> f64 {
    -(-2.0 * beta * coupling).exp_m1()
}

/// How cluster bonds along the long-range direction are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BondSampling {
    /// One Bernoulli trial per neighbour: `O(L)` per spin added.
    Direct,
    /// Skip straight to the next activated bond using the cumulative bond
    /// weight, so the cost scales with the number of activated bonds.
    #[default]
    Cumulative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Algorithm {
    Metropolis,
    /// Cluster updates only. Before [`Sampler::freeze_cluster_rate`] a
    /// sweep grows clusters until at least `N` spins have flipped; after it,
    /// a sweep is a fixed number of clusters with the same average cost.
    Cluster,
    /// `clusters` single-cluster updates followed by one Metropolis sweep.
    /// Falls back to Metropolis alone when `h != 0`.
    Mixed { clusters: u32 },
}

impl Default for Algorithm {
    fn default() -> Self {
        Algorithm::Mixed { clusters: 1 }
    }
}

/// One replica's sampler state.
pub struct Sampler {
    model: ClassicalModel,
    config: SpinConfiguration,
    beta: f64,
    offsets: Vec<(usize, f64)>,
    fields: Option<Vec<f64>>,
    bond_prob: Vec<f64>,
    cumulative: Vec<f64>,
    time_prob: f64,
    bond_sampling: BondSampling,
    order: Vec<usize>,
    mark: Vec<u32>,
    generation: u32,
    stack: Vec<usize>,
    cluster: Vec<usize>,
    clusters_seen: u64,
    spins_flipped: u64,
    clusters_per_sweep: Option<u64>,
}

impl Sampler {
    pub fn new(
        model: ClassicalModel,
        config: SpinConfiguration,
        beta: f64,
    ) -> Result<Self, EngineError> {
        model.check_geometry(config.geometry())?;
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(EngineError::InvalidSpec(format!("beta must be positive, got {beta}")));
        }
        let w = model.width();
        let offsets = model.active_offsets();
        let mut bond_prob = vec![0.0; w];
        let mut cumulative = vec![0.0; w];
        for o in 1..w {
            let k = model.bond(o);
            bond_prob[o] = bond_probability(beta, k);
            cumulative[o] = cumulative[o - 1] + 2.0 * beta * k;
        }
        let time_prob = bond_probability(beta, model.time_coupling().unwrap_or(0.0));
        let n = config.len();
        Ok(Self {
            model,
            config,
            beta,
            offsets,
            fields: None,
            bond_prob,
            cumulative,
            time_prob,
            bond_sampling: BondSampling::default(),
            order: (0..n).collect(),
            mark: vec![0; n],
            generation: 0,
            stack: Vec::new(),
            cluster: Vec::new(),
            clusters_seen: 0,
            spins_flipped: 0,
            clusters_per_sweep: None,
        })
    }

    pub fn with_bond_sampling(mut self, mode: BondSampling) -> Self {
        self.bond_sampling = mode;
        self
    }

    pub fn config(&self) -> &SpinConfiguration {
        &self.config
    }

    pub fn model(&self) -> &ClassicalModel {
        &self.model
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Fixes the number of clusters per [`Algorithm::Cluster`] sweep from
    /// the mean cluster size observed so far.
    ///
    /// Stopping a sweep once `N` spins have flipped makes the sweep length
    /// depend on the states visited, which biases measurements taken at
    /// sweep boundaries. A fixed count keeps every sweep a composition of
    /// stationary kernels.
    pub fn freeze_cluster_rate(&mut self) -> u64 {
        let n = self.config.len() as f64;
        let mean = if self.clusters_seen > 0 {
            self.spins_flipped as f64 / self.clusters_seen as f64
        } else {
            1.0
        };
        let count = (n / mean).ceil().max(1.0) as u64;
        self.clusters_per_sweep = Some(count);
        count
    }

    pub fn clusters_per_sweep(&self) -> Option<u64> {
        self.clusters_per_sweep
    }

    fn ensure_fields(&mut self) {
        if self.fields.is_none() {
            let g = self.config.geometry();
            let spins = self.config.spins();
            let f = (0..spins.len())
                .map(|i| local_field_unchecked(&self.model, g, spins, i))
                .collect();
            self.fields = Some(f);
        }
    }

    /// Flips `site` and keeps cached local fields consistent.
    fn flip_site(&mut self, site: usize) {
        let g = self.config.geometry();
        let s = self.config.get(site) as f64;
        self.config.flip(site);
        if let Some(fields) = self.fields.as_mut() {
            let w = g.width();
            let (t, x) = (site / w, site % w);
            let base = t * w;
            let delta = -2.0 * s;
            for &(o, k) in &self.offsets {
                let j = base + (x + o) % w;
                fields[j] += delta * k;
            }
            if let Some(k) = self.model.time_coupling() {
                let n = g.slices();
                fields[((t + 1) % n) * w + x] += delta * k;
                fields[((t + n - 1) % n) * w + x] += delta * k;
            }
        }
    }

    /// Energy change of flipping `site` in the current configuration.
    pub fn flip_cost(&mut self, site: usize) -> f64 {
        self.ensure_fields();
        let phi = self.fields.as_ref().unwrap()[site];
        2.0 * self.config.get(site) as f64 * (phi - self.model.field())
    }

    /// Single Metropolis proposal at `site` with uniform deviate `u`.
    pub fn metropolis_step(&mut self, site: usize, u: f64) -> bool {
        let de = self.flip_cost(site);
        let accept = de <= 0.0 || u < acceptance_probability(de, self.beta);
        if accept {
            self.flip_site(site);
        }
        accept
    }

    /// `N` single-site proposals in a fresh random order. Returns the number
    /// of accepted flips.
    pub fn metropolis_sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        self.ensure_fields();
        let mut order = std::mem::take(&mut self.order);
        order.shuffle(rng);
        let mut accepted = 0;
        for &site in &order {
            let de = self.flip_cost(site);
            if de <= 0.0 || rng.random::<f64>() < acceptance_probability(de, self.beta) {
                self.flip_site(site);
                accepted += 1;
            }
        }
        self.order = order;
        accepted
    }

    /// Grows one cluster from a random seed and flips it. Returns its size.
    pub fn cluster_update<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize, EngineError> {
        if self.model.field() != 0.0 {
            return Err(EngineError::ClusterWithField(self.model.field()));
        }
        if !self.model.is_ferromagnetic() {
            return Err(EngineError::NotFerromagnetic);
        }
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.mark.iter_mut().for_each(|m| *m = 0);
            self.generation = 1;
        }
        let gen = self.generation;
        let g = self.config.geometry();
        let (w, n_slices) = (g.width(), g.slices());
        let seed = rng.random_range(0..self.config.len());
        let s0 = self.config.get(seed);
        self.stack.clear();
        self.cluster.clear();
        self.mark[seed] = gen;
        self.stack.push(seed);
        let spins = self.config.spins();
        while let Some(i) = self.stack.pop() {
            self.cluster.push(i);
            let (t, x) = (i / w, i % w);
            let base = t * w;
            match self.bond_sampling {
                BondSampling::Direct => {
                    for &(o, _) in &self.offsets {
                        let j = base + (x + o) % w;
                        if self.mark[j] != gen
                            && spins[j] == s0
                            && rng.random::<f64>() < self.bond_prob[o]
                        {
                            self.mark[j] = gen;
                            self.stack.push(j);
                        }
                    }
                }
                BondSampling::Cumulative => {
                    let mut k0 = 0usize;
                    loop {
                        let e = -(1.0 - rng.random::<f64>()).ln();
                        let target = self.cumulative[k0] + e;
                        let rest = &self.cumulative[k0 + 1..];
                        let k = k0 + 1 + rest.partition_point(|&c| c <= target);
                        if k >= w {
                            break;
                        }
                        let j = base + (x + k) % w;
                        if self.mark[j] != gen && spins[j] == s0 {
                            self.mark[j] = gen;
                            self.stack.push(j);
                        }
                        k0 = k;
                    }
                }
            }
            if self.time_prob > 0.0 {
                let up = ((t + 1) % n_slices) * w + x;
                let down = ((t + n_slices - 1) % n_slices) * w + x;
                for j in [up, down] {
                    if self.mark[j] != gen && spins[j] == s0 && rng.random::<f64>() < self.time_prob {
                        self.mark[j] = gen;
                        self.stack.push(j);
                    }
                }
            }
        }
        let cluster = std::mem::take(&mut self.cluster);
        for &i in &cluster {
            self.flip_site(i);
        }
        let size = cluster.len();
        self.cluster = cluster;
        self.clusters_seen += 1;
        self.spins_flipped += size as u64;
        Ok(size)
    }

    /// One unit of Monte Carlo time under `algorithm`.
    pub fn sweep<R: Rng + ?Sized>(
        &mut self,
        algorithm: Algorithm,
        rng: &mut R,
    ) -> Result<SweepStats, EngineError> {
        let mut stats = SweepStats::default();
        match algorithm {
            Algorithm::Metropolis => {
                stats.accepted = self.metropolis_sweep(rng);
                stats.proposals = self.config.len();
            }
            Algorithm::Cluster => match self.clusters_per_sweep {
                Some(count) => {
                    for _ in 0..count {
                        stats.flipped += self.cluster_update(rng)?;
                        stats.clusters += 1;
                    }
                }
                None => {
                    let n = self.config.len();
                    while stats.flipped < n {
                        stats.flipped += self.cluster_update(rng)?;
                        stats.clusters += 1;
                    }
                }
            },
            Algorithm::Mixed { clusters } => {
                if self.model.field() == 0.0 && self.model.is_ferromagnetic() {
                    for _ in 0..clusters {
                        stats.flipped += self.cluster_update(rng)?;
                        stats.clusters += 1;
                    }
                }
                stats.accepted = self.metropolis_sweep(rng);
                stats.proposals = self.config.len();
            }
        }
        Ok(stats)
    }

    pub fn measure(&self, sweep: u64) -> (Measurement, PairSums) {
        let sums = self.config.pair_sums();
        let energy = self.model.energy_from_sums(&sums);
        let m = sums.magnetization as f64 / self.config.len() as f64;
        (Measurement::new(sweep, energy, m), sums)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SweepStats {
    pub accepted: usize,
    pub proposals: usize,
    pub clusters: usize,
    pub flipped: usize,
}

/// Per-measurement observables. `energy` is the total energy, `m` the
/// magnetization density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub sweep: u64,
    pub energy: f64,
    pub m: f64,
    pub abs_m: f64,
    pub m2: f64,
    pub m4: f64,
}

impl Measurement {
    pub fn new(sweep: u64, energy: f64, m: f64) -> Self {
        let m2 = m * m;
        Self {
            sweep,
            energy,
            m,
            abs_m: m.abs(),
            m2,
            m4: m2 * m2,
        }
    }
}

/// Block means of `c(r) = (1/N) Σ_i σ_i σ_{i+r}` along the spatial axis.
///
/// Block `b` covers measurements `[b * block_len, (b + 1) * block_len)`;
/// measurements past the last full block are folded into the running total
/// only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationBlocks {
    pub block_len: usize,
    pub blocks: Vec<Vec<f64>>,
    pub total: Vec<f64>,
    pub count: usize,
}

impl CorrelationBlocks {
    fn new(n_measurements: usize, range: usize) -> Self {
        let block_len = (n_measurements / CORRELATION_BLOCKS).max(1);
        Self {
            block_len,
            blocks: Vec::new(),
            total: vec![0.0; range],
            count: 0,
        }
    }

    fn push(&mut self, c: &[f64]) {
        let b = self.count / self.block_len;
        if b < CORRELATION_BLOCKS {
            if self.blocks.len() <= b {
                self.blocks.push(vec![0.0; c.len()]);
            }
            for (acc, v) in self.blocks[b].iter_mut().zip(c) {
                *acc += v / self.block_len as f64;
            }
        }
        for (acc, v) in self.total.iter_mut().zip(c) {
            *acc += v;
        }
        self.count += 1;
    }

    fn finish(&mut self) {
        let full = (self.count / self.block_len).min(CORRELATION_BLOCKS);
        self.blocks.truncate(full);
    }

    /// Run average of `c(r)`.
    pub fn mean(&self) -> Vec<f64> {
        self.total.iter().map(|t| t / self.count.max(1) as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "sweeps", rename_all = "snake_case")]
pub enum Equilibration {
    Fixed(u64),
    /// `10 max(τ_int, 100)` sweeps, with τ_int re-estimated once.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    #[default]
    Random,
    Ordered,
}

/// Everything needed to reproduce one replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub model: ClassicalModel,
    pub geometry: Geometry,
    pub beta: f64,
    pub equilibration: Equilibration,
    pub n_measure: u64,
    pub thin: u64,
    pub algorithm: Algorithm,
    pub bond_sampling: BondSampling,
    pub initial: InitialState,
    pub seed: u64,
}

impl RunSpec {
    pub fn validate(&self) -> Result<(), EngineError> {
        self.model.check_geometry(self.geometry)?;
        if let Equilibration::Fixed(0) = self.equilibration {
            return Err(EngineError::InvalidSpec("n_equil must be >= 1".into()));
        }
        if self.n_measure == 0 || self.thin == 0 {
            return Err(EngineError::InvalidSpec("n_measure and thin must be >= 1".into()));
        }
        if self.n_measure < self.thin {
            return Err(EngineError::InvalidSpec("n_measure must be >= thin".into()));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(EngineError::InvalidSpec(format!("beta must be positive, got {}", self.beta)));
        }
        if self.algorithm == Algorithm::Cluster && self.model.field() != 0.0 {
            return Err(EngineError::ClusterWithField(self.model.field()));
        }
        Ok(())
    }
}

/// Result of one replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub measurements: Vec<Measurement>,
    pub correlation: CorrelationBlocks,
    pub n_equil: u64,
    pub acceptance: f64,
    pub mean_cluster: f64,
}

const PILOT_SWEEPS: u64 = 1000;

/// Executes `spec`. Output depends only on `spec` (including its seed).
pub fn run(spec: &RunSpec) -> Result<RunOutput, EngineError> {
    spec.validate()?;
    let mut rng = SimRng::seed_from_u64(spec.seed);
    let config = match spec.initial {
        InitialState::Random => SpinConfiguration::random(spec.geometry, &mut rng),
        InitialState::Ordered => SpinConfiguration::uniform(spec.geometry, 1)?,
    };
    let mut sampler = Sampler::new(spec.model.clone(), config, spec.beta)?
        .with_bond_sampling(spec.bond_sampling);

    let n_equil = match spec.equilibration {
        Equilibration::Fixed(n) => {
            for _ in 0..n {
                sampler.sweep(spec.algorithm, &mut rng)?;
            }
            n
        }
        Equilibration::Adaptive => adaptive_equilibration(&mut sampler, spec.algorithm, &mut rng)?,
    };
    if spec.algorithm == Algorithm::Cluster {
        sampler.freeze_cluster_rate();
    }

    let n_records = (spec.n_measure / spec.thin) as usize;
    let half = spec.geometry.width() / 2;
    let n_sites = spec.geometry.sites() as f64;
    let mut measurements = Vec::with_capacity(n_records);
    let mut corr = CorrelationBlocks::new(n_records, half + 1);
    let mut c = vec![0.0; half + 1];
    let (mut accepted, mut proposals, mut clusters, mut flipped) = (0usize, 0usize, 0usize, 0usize);
    for sweep in 1..=spec.n_measure {
        let st = sampler.sweep(spec.algorithm, &mut rng)?;
        accepted += st.accepted;
        proposals += st.proposals;
        clusters += st.clusters;
        flipped += st.flipped;
        if sweep % spec.thin == 0 {
            let (m, sums) = sampler.measure(n_equil + sweep);
            for (ci, &s) in c.iter_mut().zip(&sums.spatial) {
                *ci = s as f64 / n_sites;
            }
            corr.push(&c);
            measurements.push(m);
        }
    }
    corr.finish();
    Ok(RunOutput {
        measurements,
        correlation: corr,
        n_equil,
        acceptance: if proposals > 0 { accepted as f64 / proposals as f64 } else { 0.0 },
        mean_cluster: if clusters > 0 { flipped as f64 / clusters as f64 } else { 0.0 },
    })
}

fn adaptive_equilibration(
    sampler: &mut Sampler,
    algorithm: Algorithm,
    rng: &mut SimRng,
) -> Result<u64, EngineError> {
    let mut done = 0u64;
    let segment = |sampler: &mut Sampler, rng: &mut SimRng, n: u64| -> Result<f64, EngineError> {
        let mut abs_m = Vec::with_capacity(n as usize);
        let mut energy = Vec::with_capacity(n as usize);
        for _ in 0..n {
            sampler.sweep(algorithm, rng)?;
            let (m, _) = sampler.measure(0);
            abs_m.push(m.abs_m);
            energy.push(m.energy);
        }
        let tail = n as usize / 2;
        let tau = [&abs_m[tail..], &energy[tail..]]
            .iter()
            .filter_map(|s| autocorrelation_time(s).ok())
            .map(|t| t.tau)
            .fold(0.5, f64::max);
        Ok(tau)
    };
    let tau = segment(sampler, rng, PILOT_SWEEPS)?;
    done += PILOT_SWEEPS;
    let target = (10.0 * tau.max(100.0)).ceil() as u64;
    if target > done {
        let extra = target - done;
        let tau2 = segment(sampler, rng, extra)?;
        done += extra;
        let target2 = (10.0 * tau2.max(100.0)).ceil() as u64;
        if target2 > done {
            for _ in 0..target2 - done {
                sampler.sweep(algorithm, rng)?;
            }
            done = target2;
        }
    }
    Ok(done)
}

/// [`run`] with panics converted into [`EngineError::Panicked`].
pub fn run_isolated(spec: &RunSpec) -> Result<RunOutput, EngineError> {
    match catch_unwind(AssertUnwindSafe(|| run(spec))) {
        Ok(r) => r,
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            Err(EngineError::Panicked(msg))
        }
    }
}

/// Runs every spec as an independent replica. A failure (error or panic)
/// in one replica is reported in its slot and does not stop the others.
pub fn campaign(
    specs: &[RunSpec],
    parallelism: Parallelism,
) -> Vec<Result<RunOutput, EngineError>> {
    map_indexed(specs, parallelism, |_, spec| run_isolated(spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::couplings::{CouplingTable, FractionalOrder, PeriodicCouplingTable};
    use approx::assert_relative_eq;

    pub(crate) fn chain_model(q: f64, len: usize, field: f64) -> ClassicalModel {
        let t = CouplingTable::build(FractionalOrder::new(q).unwrap(), 4 * len).unwrap();
        let p = PeriodicCouplingTable::new(&t, len, 1e-12).unwrap();
        ClassicalModel::chain(&p, 1.0, field).unwrap()
    }

    fn spec(model: ClassicalModel, len: usize, beta: f64, algorithm: Algorithm) -> RunSpec {
        RunSpec {
            model,
            geometry: Geometry::chain(len),
            beta,
            equilibration: Equilibration::Fixed(50),
            n_measure: 400,
            thin: 2,
            algorithm,
            bond_sampling: BondSampling::Cumulative,
            initial: InitialState::Random,
            seed: 11,
        }
    }

    #[test]
    fn probability_examples() {
        assert_eq!(acceptance_probability(0.0, 0.5), 1.0);
        assert_eq!(acceptance_probability(-3.0, 0.5), 1.0);
        assert_relative_eq!(acceptance_probability(4.0, 0.5), 0.1353352832366127, epsilon = 1e-15);
        assert_relative_eq!(bond_probability(0.5, 1.0), 0.6321205588285577, epsilon = 1e-15);
        assert!(bond_probability(1e-9, 1e-9) < 1e-17);
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = derive_seed(42, &[16, 3]);
        assert_eq!(a, derive_seed(42, &[16, 3]));
        assert_ne!(a, derive_seed(42, &[3, 16]));
        assert_ne!(a, derive_seed(43, &[16, 3]));
    }

    #[test]
    fn cached_fields_track_flips() {
        let model = chain_model(0.8, 16, 0.0);
        let mut rng = SimRng::seed_from_u64(5);
        let config = SpinConfiguration::random(Geometry::chain(16), &mut rng);
        let mut s = Sampler::new(model.clone(), config, 0.7).unwrap();
        for _ in 0..20 {
            s.metropolis_sweep(&mut rng);
            s.cluster_update(&mut rng).unwrap();
        }
        let g = s.config().geometry();
        for i in 0..16 {
            let fresh = local_field_unchecked(&model, g, s.config().spins(), i);
            assert!((s.fields.as_ref().unwrap()[i] - fresh).abs() < 1e-12);
        }
    }

    #[test]
    fn cluster_rejects_field() {
        let model = chain_model(1.0, 8, 0.2);
        let mut rng = SimRng::seed_from_u64(1);
        let config = SpinConfiguration::random(Geometry::chain(8), &mut rng);
        let mut s = Sampler::new(model.clone(), config, 1.0).unwrap();
        assert!(matches!(s.cluster_update(&mut rng), Err(EngineError::ClusterWithField(_))));
        let bad = spec(model, 8, 1.0, Algorithm::Cluster);
        assert!(run(&bad).is_err());
    }

    #[test]
    fn mixed_with_field_uses_metropolis_only() {
        let model = chain_model(1.0, 8, 0.2);
        let out = run(&spec(model, 8, 1.0, Algorithm::Mixed { clusters: 1 })).unwrap();
        assert_eq!(out.mean_cluster, 0.0);
        assert_eq!(out.measurements.len(), 200);
    }

    #[test]
    fn run_is_deterministic() {
        let model = chain_model(0.75, 16, 0.0);
        let s = spec(model, 16, 0.9, Algorithm::default());
        let a = run(&s).unwrap();
        let b = run(&s).unwrap();
        assert_eq!(a, b);
        let mut other = s.clone();
        other.seed = 12;
        assert_ne!(run(&other).unwrap().measurements, a.measurements);
    }

    #[test]
    fn spec_validation() {
        let model = chain_model(1.0, 8, 0.0);
        let mut s = spec(model, 8, 1.0, Algorithm::Metropolis);
        s.thin = 0;
        assert!(run(&s).is_err());
        s.thin = 1;
        s.n_measure = 0;
        assert!(run(&s).is_err());
        s.n_measure = 10;
        s.beta = -1.0;
        assert!(run(&s).is_err());
        s.beta = 1.0;
        s.geometry = Geometry::chain(10);
        assert!(run(&s).is_err());
    }

    #[test]
    fn measurements_respect_bounds() {
        let model = chain_model(0.5, 32, 0.0);
        let out = run(&spec(model, 32, 0.6, Algorithm::default())).unwrap();
        for m in &out.measurements {
            assert!(m.abs_m <= 1.0 && m.m2 <= 1.0 && m.m4 <= m.m2);
        }
        assert_eq!(out.correlation.blocks.len(), CORRELATION_BLOCKS.min(200));
        assert_relative_eq!(out.correlation.mean()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn campaign_isolates_failures() {
        let model = chain_model(1.0, 8, 0.0);
        let good = spec(model.clone(), 8, 1.0, Algorithm::Metropolis);
        let mut bad = good.clone();
        bad.thin = 0;
        let out = campaign(&[good.clone(), bad, good], Parallelism::Auto);
        assert!(out[0].is_ok() && out[1].is_err() && out[2].is_ok());
        assert_eq!(out[0].as_ref().unwrap(), out[2].as_ref().unwrap());
    }
}
