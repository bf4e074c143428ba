//! Rotating-frame physics of an N-spin liquid-state NMR processor.
//!
//! Sign convention: the natural Hamiltonian is
//!
//! ```text
//! H0 = -1/2 [ sum_i (w_i - w0) Z_i + sum_{i<j} pi J_ij Z_i Z_j ]
//! ```
//!
//! i.e. the overall sign is negative. This is the only overall sign under
//! which the refocusing sequences in [`crate::program`] reproduce their
//! target propagators with `exp(-i H t)` evolution, and under which the
//! pseudopure preparation lands on the all-up state.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{self, identity, kron, ComplexMatrix, DensityMatrix, Unitary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Transverse phase of a hard pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PulseAxis {
    X,
    MinusX,
    Y,
    MinusY,
}

impl PulseAxis {
    fn axis_and_sign(self) -> (Axis, f64) {
        match self {
            PulseAxis::X => (Axis::X, 1.0),
            PulseAxis::MinusX => (Axis::X, -1.0),
            PulseAxis::Y => (Axis::Y, 1.0),
            PulseAxis::MinusY => (Axis::Y, -1.0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PulseAxis::X => "x",
            PulseAxis::MinusX => "-x",
            PulseAxis::Y => "y",
            PulseAxis::MinusY => "-y",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "x" | "+x" => PulseAxis::X,
            "-x" => PulseAxis::MinusX,
            "y" | "+y" => PulseAxis::Y,
            "-y" => PulseAxis::MinusY,
            _ => return None,
        })
    }
}

/// Phenomenological relaxation times in seconds. `f64::INFINITY` disables a channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationTimes {
    pub t1: f64,
    pub t2: f64,
}

impl RelaxationTimes {
    pub fn new(t1: f64, t2: f64) -> Result<Self> {
        if !(t1 > 0.0) || !(t2 > 0.0) {
            return Err(Error::InvalidParams(format!(
                "relaxation times must be positive (T1 = {t1}, T2 = {t2})"
            )));
        }
        if t2 > 2.0 * t1 {
            return Err(Error::InvalidParams(format!(
                "T2 = {t2} s exceeds 2 T1 = {} s",
                2.0 * t1
            )));
        }
        Ok(RelaxationTimes { t1, t2 })
    }

    /// Transverse decay only.
    pub fn t2_only(t2: f64) -> Result<Self> {
        Self::new(f64::INFINITY, t2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystemParams {
    resonance: Vec<f64>,
    receiver: f64,
    j_hz: DMatrix<f64>,
    relaxation: Option<RelaxationTimes>,
}

impl SpinSystemParams {
    /// `resonance` in rad/s per spin, `receiver` in rad/s, `j_hz` symmetric in Hz.
    pub fn new(resonance: Vec<f64>, receiver: f64, j_hz: DMatrix<f64>) -> Result<Self> {
        let n = resonance.len();
        if n == 0 {
            return Err(Error::InvalidParams("need at least one spin".into()));
        }
        if j_hz.shape() != (n, n) {
            return Err(Error::InvalidParams(format!(
                "J matrix is {:?}, expected {n}x{n}",
                j_hz.shape()
            )));
        }
        for i in 0..n {
            if j_hz[(i, i)] != 0.0 {
                return Err(Error::InvalidParams(format!("J[{i}][{i}] must be zero")));
            }
            for j in 0..n {
                if j_hz[(i, j)] != j_hz[(j, i)] {
                    return Err(Error::InvalidParams(format!("J is not symmetric at ({i},{j})")));
                }
            }
        }
        if resonance.iter().chain([&receiver]).any(|w| !w.is_finite()) {
            return Err(Error::InvalidParams("frequencies must be finite".into()));
        }
        Ok(SpinSystemParams {
            resonance,
            receiver,
            j_hz,
            relaxation: None,
        })
    }

    /// Two weakly coupled protons. Spin 2 sits at the reference frequency and
    /// spin 1 is `delta_nu_hz` above it; the receiver starts on spin 2.
    pub fn two_proton(delta_nu_hz: f64, j_hz: f64) -> Result<Self> {
        let j = DMatrix::from_row_slice(2, 2, &[0.0, j_hz, j_hz, 0.0]);
        Self::new(vec![2.0 * PI * delta_nu_hz, 0.0], 0.0, j)
    }

    /// 2,3-dibromothiophene: 226 Hz shift difference, J = 5.7 Hz.
    pub fn dibromothiophene() -> Self {
        Self::two_proton(226.0, 5.7).expect("constant parameters are valid")
    }

    pub fn with_receiver(mut self, receiver: f64) -> Self {
        self.receiver = receiver;
        self
    }

    pub fn with_relaxation(mut self, times: RelaxationTimes) -> Self {
        self.relaxation = Some(times);
        self
    }

    pub fn n_spins(&self) -> usize {
        self.resonance.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.n_spins()
    }

    pub fn resonance(&self, spin: usize) -> f64 {
        self.resonance[spin]
    }

    pub fn receiver(&self) -> f64 {
        self.receiver
    }

    /// Rotating-frame offset `w_i - w0` of a spin, rad/s.
    pub fn offset(&self, spin: usize) -> f64 {
        self.resonance[spin] - self.receiver
    }

    pub fn j(&self, a: usize, b: usize) -> f64 {
        self.j_hz[(a, b)]
    }

    pub fn relaxation(&self) -> Option<RelaxationTimes> {
        self.relaxation
    }
}

fn single(axis: Axis) -> ComplexMatrix {
    match axis {
        Axis::X => linalg::pauli_x(),
        Axis::Y => linalg::pauli_y(),
        Axis::Z => linalg::pauli_z(),
    }
}

/// Embeds `factors` (one 2x2 per slot, `None` = identity) into the full space.
fn embed(n_spins: usize, mut factor: impl FnMut(usize) -> Option<ComplexMatrix>) -> ComplexMatrix {
    (0..n_spins).fold(identity(1), |acc, slot| {
        let f = factor(slot).unwrap_or_else(|| identity(2));
        kron(&acc, &f)
    })
}

/// `I (x) ... (x) sigma_axis (x) ... (x) I` with the Pauli factor at `spin`
/// (0-based tensor slot, slot 0 most significant).
pub fn pauli(axis: Axis, spin: usize, n_spins: usize) -> Result<ComplexMatrix> {
    if spin >= n_spins {
        return Err(Error::SpinOutOfRange {
            index: spin,
            n_spins,
        });
    }
    Ok(embed(n_spins, |s| (s == spin).then(|| single(axis))))
}

pub fn pauli_operator(axis: Axis, spin: usize, params: &SpinSystemParams) -> Result<ComplexMatrix> {
    pauli(axis, spin, params.n_spins())
}

/// Diagonal of a Z_i or Z_i Z_j product in the Zeeman basis.
fn z_eigen(n_spins: usize, basis: usize, spin: usize) -> f64 {
    if (basis >> (n_spins - 1 - spin)) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Rotating-frame natural Hamiltonian, rad/s. Always diagonal.
pub fn natural_hamiltonian(params: &SpinSystemParams) -> ComplexMatrix {
    let n = params.n_spins();
    let entries: Vec<f64> = (0..params.dim())
        .map(|b| {
            let mut e = 0.0;
            for i in 0..n {
                e += params.offset(i) * z_eigen(n, b, i);
                for j in i + 1..n {
                    e += PI * params.j(i, j) * z_eigen(n, b, i) * z_eigen(n, b, j);
                }
            }
            -0.5 * e
        })
        .collect();
    linalg::real_diag(&entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseEvent {
    /// Radians, signed.
    pub flip_angle: f64,
    pub axis: PulseAxis,
    /// 0-based tensor slots.
    pub targets: Vec<usize>,
}

impl PulseEvent {
    pub fn new(flip_angle: f64, axis: PulseAxis, targets: &[usize]) -> Self {
        PulseEvent {
            flip_angle,
            axis,
            targets: targets.to_vec(),
        }
    }

    /// `exp(-i theta/2 sum_targets sigma_axis)`.
    pub fn rotation(&self, n_spins: usize) -> Result<Unitary> {
        if self.targets.is_empty() {
            return Err(Error::InvalidParams("pulse has no target spins".into()));
        }
        if let Some(&bad) = self.targets.iter().find(|&&t| t >= n_spins) {
            return Err(Error::SpinOutOfRange {
                index: bad,
                n_spins,
            });
        }
        let (axis, sign) = self.axis.axis_and_sign();
        let half = 0.5 * self.flip_angle * sign;
        let r = identity(2) * Complex64::new(half.cos(), 0.0)
            - single(axis) * Complex64::new(0.0, half.sin());
        Ok(Unitary::trusted(embed(n_spins, |s| {
            self.targets.contains(&s).then(|| r.clone())
        })))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEvent {
    /// Seconds.
    pub duration: f64,
}

fn n_spins_of(dim: usize) -> Result<usize> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(Error::InvalidParams(format!(
            "dimension {dim} is not a power of two"
        )));
    }
    Ok(dim.trailing_zeros() as usize)
}

/// Ideal, instantaneous pulse: `rho -> R rho R^dagger`.
pub fn apply_pulse(state: &DensityMatrix, pulse: &PulseEvent) -> Result<DensityMatrix> {
    let n = n_spins_of(state.dim())?;
    Ok(state.conjugated(&pulse.rotation(n)?))
}

pub fn delay_propagator(params: &SpinSystemParams, dt: f64) -> Result<Unitary> {
    if !(dt >= 0.0) {
        return Err(Error::InvalidParams(format!("delay {dt} s is negative")));
    }
    linalg::expm_hermitian(&natural_hamiltonian(params), dt)
}

/// Free evolution for `dt` seconds, with optional T1/T2 damping afterwards.
pub fn evolve_delay(
    state: &DensityMatrix,
    dt: f64,
    params: &SpinSystemParams,
    relaxation: bool,
) -> Result<DensityMatrix> {
    if state.dim() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            actual: state.dim(),
        });
    }
    let times = if relaxation {
        Some(params.relaxation().ok_or(Error::RelaxationUnset)?)
    } else {
        None
    };
    let evolved = state.conjugated(&delay_propagator(params, dt)?);
    let Some(times) = times else {
        return Ok(evolved);
    };

    let dim = state.dim();
    let trace = evolved.trace();
    let equilibrium: Vec<Complex64> = if state.is_deviation() {
        let thermal = thermal_deviation(params);
        (0..dim)
            .map(|k| thermal.matrix()[(k, k)] + trace / dim as f64)
            .collect()
    } else {
        vec![trace / dim as f64; dim]
    };
    let t1_decay = (-dt / times.t1).exp();
    let t2_decay = (-dt / times.t2).exp();
    let mut m = evolved.into_matrix();
    for r in 0..dim {
        for c in 0..dim {
            if r == c {
                m[(r, r)] = equilibrium[r] + (m[(r, r)] - equilibrium[r]) * t1_decay;
            } else {
                m[(r, c)] *= t2_decay;
            }
        }
    }
    Ok(DensityMatrix::from_parts(m, state.is_deviation()))
}

/// Crusher gradient: every off-diagonal element, zero-quantum included, is zeroed.
pub fn gradient_crush(state: &DensityMatrix) -> DensityMatrix {
    let d = state.matrix().diagonal();
    DensityMatrix::from_parts(ComplexMatrix::from_diagonal(&d), state.is_deviation())
}

/// Equal-weight `sum_i Z_i` deviation, scaled to unit largest eigenvalue.
pub fn thermal_deviation(params: &SpinSystemParams) -> DensityMatrix {
    let n = params.n_spins();
    let entries: Vec<f64> = (0..params.dim())
        .map(|b| (0..n).map(|i| z_eigen(n, b, i)).sum::<f64>() / n as f64)
        .collect();
    DensityMatrix::from_parts(linalg::real_diag(&entries), true)
}
