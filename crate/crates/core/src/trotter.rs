//! Suzuki–Trotter mapping of the fractional transverse-field chain onto an
//! anisotropic space × imaginary-time classical grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::couplings::{CouplingError, CouplingTable, FractionalOrder, PeriodicCouplingTable};
use crate::lattice::{ClassicalModel, Geometry, LatticeError};

#[derive(Debug, Error)]
pub enum TrotterError {
    #[error("transverse field g must be positive and finite, got {0}")]
    Field(f64),
    #[error("Trotter step must be positive and finite, got {0}")]
    Step(f64),
    #[error("number of time slices must be even and >= 2, got {0}")]
    Slices(usize),
    #[error("-ln tanh({0}) / 2 is not representable (argument underflow or saturation)")]
    Tanh(f64),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// How the number of time slices follows the chain length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AspectRule {
    /// `L_τ Δτ = c L` (dynamical exponent `z = 1`), rounded to an even slice count.
    Linear { c: f64 },
    /// A fixed slice count.
    Fixed { slices: usize },
}

impl AspectRule {
    pub fn slices(&self, size: usize, dtau: f64) -> Result<usize, TrotterError> {
        if !(dtau > 0.0) || !dtau.is_finite() {
            return Err(TrotterError::Step(dtau));
        }
        let n = match *self {
            AspectRule::Linear { c } => {
                let raw = c * size as f64 / dtau;
                (2.0 * (raw / 2.0).round()).max(2.0) as usize
            }
            AspectRule::Fixed { slices } => slices,
        };
        if n < 2 || n % 2 == 1 {
            return Err(TrotterError::Slices(n));
        }
        Ok(n)
    }

    pub fn describe(&self) -> String {
        match self {
            AspectRule::Linear { c } => format!("L_tau*dtau = {c}*L (z = 1)"),
            AspectRule::Fixed { slices } => format!("L_tau = {slices}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumSpec {
    pub size: usize,
    pub order: FractionalOrder,
    pub j0: f64,
    pub g: f64,
    pub h: f64,
    pub dtau: f64,
    pub slices: usize,
}

impl QuantumSpec {
    pub fn validate(&self) -> Result<(), TrotterError> {
        if !(self.g > 0.0) || !self.g.is_finite() {
            return Err(TrotterError::Field(self.g));
        }
        if !(self.dtau > 0.0) || !self.dtau.is_finite() {
            return Err(TrotterError::Step(self.dtau));
        }
        if self.slices < 2 || self.slices % 2 == 1 {
            return Err(TrotterError::Slices(self.slices));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::grid(self.size, self.slices)
    }

    /// Inverse temperature of the quantum chain, `L_τ Δτ`.
    pub fn quantum_beta(&self) -> f64 {
        self.slices as f64 * self.dtau
    }
}

/// `K_τ = -½ ln tanh(x)`.
pub fn time_coupling(x: f64) -> Result<f64, TrotterError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(TrotterError::Tanh(x));
    }
    // ln tanh x = ln(1 - e^{-2x}) - ln(1 + e^{-2x}), accurate at both ends
    let y = (-2.0 * x).exp();
    let ln_tanh = (-(-2.0 * x).exp_m1()).ln() - y.ln_1p();
    let k = -0.5 * ln_tanh;
    if !k.is_finite() || k <= 0.0 {
        return Err(TrotterError::Tanh(x));
    }
    Ok(k)
}

/// The classical model (at `β = 1`) and its grid.
pub fn map_to_classical(
    spec: &QuantumSpec,
    tail_tolerance: f64,
) -> Result<(ClassicalModel, Geometry), TrotterError> {
    spec.validate()?;
    let table = CouplingTable::build(spec.order, spec.size)?;
    let periodic = PeriodicCouplingTable::new(&table, spec.size, tail_tolerance)?;
    map_with_table(spec, &periodic)
}

/// As [`map_to_classical`] with a precomputed periodic table for `spec.size`.
pub fn map_with_table(
    spec: &QuantumSpec,
    periodic: &PeriodicCouplingTable,
) -> Result<(ClassicalModel, Geometry), TrotterError> {
    spec.validate()?;
    let k_tau = time_coupling(spec.dtau * spec.g)?;
    let model = ClassicalModel::grid(periodic, spec.dtau * spec.j0, spec.dtau * spec.h, k_tau)?;
    Ok((model, spec.geometry()))
}
