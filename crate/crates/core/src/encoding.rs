//! Level-to-spin encodings and the average Hamiltonians they induce.
//!
//! An [`Encoding`] is a permutation between oscillator levels `|n>` and
//! Zeeman basis states. Basis index bits follow the tensor slot order (spin 1
//! is the most significant bit) with up = 0 and down = 1.
//!
//! The closed-form generators at the bottom are written with explicit tensor
//! slots. In the usual textbook notation the superscript-1 spin is the
//! *least* significant slot (our spin 2); that assignment is the one under
//! which the closed forms agree with the conjugated oscillator Hamiltonians.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, identity, ComplexMatrix, ComplexVector, DensityMatrix, StateVector};
use crate::oscillator::{self, OscillatorSpec};
use crate::spin::{pauli, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncodingKind {
    Gray,
    Binary,
}

impl EncodingKind {
    pub fn label(self) -> &'static str {
        match self {
            EncodingKind::Gray => "gray",
            EncodingKind::Binary => "binary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    n_spins: usize,
    kind: EncodingKind,
    level_to_basis: Vec<usize>,
    basis_to_level: Vec<usize>,
}

impl Encoding {
    fn from_map(n_spins: usize, kind: EncodingKind, level_to_basis: Vec<usize>) -> Self {
        let mut basis_to_level = vec![usize::MAX; level_to_basis.len()];
        for (level, &b) in level_to_basis.iter().enumerate() {
            basis_to_level[b] = level;
        }
        debug_assert!(basis_to_level.iter().all(|&l| l != usize::MAX));
        Encoding {
            n_spins,
            kind,
            level_to_basis,
            basis_to_level,
        }
    }

    pub fn new(kind: EncodingKind, n_spins: usize) -> Result<Self> {
        match kind {
            EncodingKind::Gray => gray_encoding(n_spins),
            EncodingKind::Binary => binary_encoding(n_spins),
        }
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        self.level_to_basis.len()
    }

    pub fn kind(&self) -> EncodingKind {
        self.kind
    }

    pub fn basis_of(&self, level: usize) -> usize {
        self.level_to_basis[level]
    }

    pub fn level_of(&self, basis: usize) -> usize {
        self.basis_to_level[basis]
    }

    /// `P[basis, level] = 1`, so `|p> = P |s>`.
    pub fn matrix(&self) -> ComplexMatrix {
        let d = self.dim();
        let mut p = ComplexMatrix::zeros(d, d);
        for (level, &b) in self.level_to_basis.iter().enumerate() {
            p[(b, level)] = linalg::ONE;
        }
        p
    }

    fn check_dim(&self, actual: usize) -> Result<()> {
        if actual != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual,
            });
        }
        Ok(())
    }
}

fn check_spins(n_spins: usize) -> Result<()> {
    if n_spins == 0 || n_spins > 16 {
        return Err(Error::InvalidParams(format!(
            "encodings need 1..=16 spins, got {n_spins}"
        )));
    }
    Ok(())
}

/// Reflected binary Gray code. For two spins: 0 -> uu, 1 -> ud, 2 -> dd, 3 -> du.
pub fn gray_encoding(n_spins: usize) -> Result<Encoding> {
    check_spins(n_spins)?;
    let map = (0..1usize << n_spins).map(|k| k ^ (k >> 1)).collect();
    Ok(Encoding::from_map(n_spins, EncodingKind::Gray, map))
}

/// Level `k` goes to the basis state whose bit pattern is `k`. The last
/// spin carries the least significant bit.
pub fn binary_encoding(n_spins: usize) -> Result<Encoding> {
    check_spins(n_spins)?;
    let map = (0..1usize << n_spins).collect();
    Ok(Encoding::from_map(n_spins, EncodingKind::Binary, map))
}

pub fn pushforward_state(s: &StateVector, e: &Encoding) -> Result<StateVector> {
    e.check_dim(s.dim())?;
    let mut v = ComplexVector::zeros(e.dim());
    for (level, amp) in s.amplitudes().iter().enumerate() {
        v[e.basis_of(level)] = *amp;
    }
    StateVector::new(v.as_slice())
}

pub fn pullback_state(p: &StateVector, e: &Encoding) -> Result<StateVector> {
    e.check_dim(p.dim())?;
    let mut v = ComplexVector::zeros(e.dim());
    for (basis, amp) in p.amplitudes().iter().enumerate() {
        v[e.level_of(basis)] = *amp;
    }
    StateVector::new(v.as_slice())
}

/// `P m P^T`: an operator on levels expressed on spins.
pub fn pushforward_operator(m: &ComplexMatrix, e: &Encoding) -> Result<ComplexMatrix> {
    e.check_dim(m.nrows())?;
    e.check_dim(m.ncols())?;
    let d = e.dim();
    Ok(ComplexMatrix::from_fn(d, d, |r, c| m[(e.level_of(r), e.level_of(c))]))
}

/// `P^T m P`: an operator on spins expressed on levels.
pub fn pullback_operator(m: &ComplexMatrix, e: &Encoding) -> Result<ComplexMatrix> {
    e.check_dim(m.nrows())?;
    e.check_dim(m.ncols())?;
    let d = e.dim();
    Ok(ComplexMatrix::from_fn(d, d, |r, c| m[(e.basis_of(r), e.basis_of(c))]))
}

pub fn pushforward_density(rho: &DensityMatrix, e: &Encoding) -> Result<DensityMatrix> {
    let m = pushforward_operator(rho.matrix(), e)?;
    Ok(DensityMatrix::from_parts(m, rho.is_deviation()))
}

pub fn pullback_density(rho: &DensityMatrix, e: &Encoding) -> Result<DensityMatrix> {
    let m = pullback_operator(rho.matrix(), e)?;
    Ok(DensityMatrix::from_parts(m, rho.is_deviation()))
}

/// The spin-space generator that simulates `h_s` under encoding `e`.
pub fn average_hamiltonian(h_s: &ComplexMatrix, e: &Encoding) -> Result<ComplexMatrix> {
    let dev = linalg::hermitian_deviation(h_s);
    if dev > linalg::HERMITIAN_TOL {
        return Err(Error::NotHermitian { deviation: dev });
    }
    pushforward_operator(h_s, e)
}

fn z(slot: usize, n: usize) -> ComplexMatrix {
    pauli(Axis::Z, slot, n).expect("slot within range")
}

fn scaled(m: ComplexMatrix, k: f64) -> ComplexMatrix {
    m * Complex64::new(k, 0.0)
}

/// Two-spin generator of the Gray-coded harmonic oscillator:
/// `omega (2 - Z_1 (1 + Z_2 / 2))` with `Z_k` on tensor slot `k - 1`.
pub fn qho_closed_form(omega: f64) -> ComplexMatrix {
    let (z1, z2) = (z(0, 2), z(1, 2));
    let i4 = identity(4);
    scaled(scaled(i4.clone(), 2.0) - z1 * (i4 + scaled(z2, 0.5)), omega)
}

/// Coupling-free generator of the binary-coded oscillator on `n_spins`:
/// `omega/2 (2^n - sum_j 2^j Z_(bit j))`, where bit `j` lives on slot `n - 1 - j`.
pub fn coupling_free_closed_form(n_spins: usize, omega: f64) -> Result<ComplexMatrix> {
    check_spins(n_spins)?;
    let d = 1usize << n_spins;
    let mut weighted = ComplexMatrix::zeros(d, d);
    for j in 0..n_spins {
        weighted += scaled(z(n_spins - 1 - j, n_spins), (1u64 << j) as f64);
    }
    Ok(scaled(scaled(identity(d), d as f64) - weighted, 0.5 * omega))
}

/// Two-spin generator of the anharmonic oscillator with its `0 <-> 1`
/// transition driven at Rabi frequency `rabi`, Gray-coded and modulo identity:
///
/// ```text
/// omega [mu Z_2 - (4 mu + 1) Z_1 (1 + Z_2 / 2)] + rabi/4 X_2 (1 + Z_1)
/// ```
pub fn driven_aho_closed_form(omega: f64, mu: f64, rabi: f64) -> ComplexMatrix {
    let (z1, z2, x2) = (z(0, 2), z(1, 2), pauli(Axis::X, 1, 2).expect("slot 1 of 2"));
    let i4 = identity(4);
    let diagonal = scaled(z2.clone(), mu) - scaled(z1.clone() * (i4.clone() + scaled(z2, 0.5)), 4.0 * mu + 1.0);
    scaled(diagonal, omega) + scaled(x2 * (i4 + z1), 0.25 * rabi)
}

/// Convenience: `average_hamiltonian` of the harmonic oscillator on `2^n` levels.
pub fn conjugated_qho(e: &Encoding, omega: f64) -> Result<ComplexMatrix> {
    let h = oscillator::qho_hamiltonian(&OscillatorSpec::harmonic(e.dim(), omega)?)?;
    average_hamiltonian(&h, e)
}
