//! Dense complex linear algebra for small spin systems.
//!
//! Everything here works on `nalgebra::DMatrix<Complex64>`. Dimensions stay
//! at `2^N` with `N <= 6`, so dense storage and full eigendecompositions are
//! cheap.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// Tolerance used when a generator must be Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;

pub fn identity(dim: usize) -> ComplexMatrix {
    ComplexMatrix::identity(dim, dim)
}

pub fn pauli_x() -> ComplexMatrix {
    ComplexMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn pauli_y() -> ComplexMatrix {
    ComplexMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn pauli_z() -> ComplexMatrix {
    ComplexMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

pub fn diag(entries: &[Complex64]) -> ComplexMatrix {
    ComplexMatrix::from_diagonal(&ComplexVector::from_column_slice(entries))
}

pub fn real_diag(entries: &[f64]) -> ComplexMatrix {
    let c: Vec<Complex64> = entries.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    diag(&c)
}

/// Tensor product `a (x) b`.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_abs_diff on mismatched shapes");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &ComplexMatrix) -> f64 {
    a.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

pub fn hermitian_deviation(h: &ComplexMatrix) -> f64 {
    max_abs_diff(h, &h.adjoint())
}

pub fn is_diagonal(h: &ComplexMatrix) -> bool {
    h.nrows() == h.ncols()
        && (0..h.nrows()).all(|r| (0..h.ncols()).all(|c| r == c || h[(r, c)] == ZERO))
}

/// `h - (tr h / d) I`.
pub fn traceless_part(h: &ComplexMatrix) -> ComplexMatrix {
    let d = h.nrows();
    let shift = h.trace() / d as f64;
    h - identity(d) * shift
}

/// Max-entry distance between two generators after removing their trace
/// parts, i.e. equality up to an additive multiple of the identity.
pub fn distance_mod_identity(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    max_abs(&traceless_part(&(a - b)))
}

pub fn commutator(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a * b - b * a
}

/// A square matrix known to be unitary within `1e-12`.
#[derive(Debug, Clone, PartialEq)]
pub struct Unitary(ComplexMatrix);

impl Unitary {
    pub const TOL: f64 = 1e-12;

    pub fn new(m: ComplexMatrix) -> Result<Self> {
        let dev = unitarity_deviation(&m);
        if dev > Self::TOL {
            return Err(Error::NotUnitary { deviation: dev });
        }
        Ok(Unitary(m))
    }

    /// Wraps a product of known unitaries. Deviation is only checked in debug builds.
    pub(crate) fn trusted(m: ComplexMatrix) -> Self {
        debug_assert!(unitarity_deviation(&m) < 1e-9);
        Unitary(m)
    }

    pub fn identity(dim: usize) -> Self {
        Unitary(identity(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn adjoint(&self) -> Unitary {
        Unitary(self.0.adjoint())
    }

    /// `self` then `next` in time, i.e. the matrix product `next * self`.
    pub fn then(&self, next: &Unitary) -> Unitary {
        Unitary(&next.0 * &self.0)
    }

    pub fn conjugate(&self, m: &ComplexMatrix) -> ComplexMatrix {
        &self.0 * m * self.0.adjoint()
    }
}

pub fn unitarity_deviation(m: &ComplexMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    max_abs_diff(&(m.adjoint() * m), &identity(m.nrows()))
}

/// `exp(-i h t)` for Hermitian `h`.
///
/// Diagonal generators are exponentiated entrywise; everything else goes
/// through a Hermitian eigendecomposition `h = V diag(e) V^dagger`.
pub fn expm_hermitian(h: &ComplexMatrix, t: f64) -> Result<Unitary> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            actual: h.ncols(),
        });
    }
    let dev = hermitian_deviation(h);
    if dev > HERMITIAN_TOL {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let d = h.nrows();
    if is_diagonal(h) {
        let phases: Vec<Complex64> = (0..d)
            .map(|k| Complex64::from_polar(1.0, -h[(k, k)].re * t))
            .collect();
        return Ok(Unitary(diag(&phases)));
    }
    // Symmetrise so the solver sees an exactly Hermitian input.
    let hs = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = hs.symmetric_eigen();
    let phases: Vec<Complex64> = eig
        .eigenvalues
        .iter()
        .map(|&e| Complex64::from_polar(1.0, -e * t))
        .collect();
    let v = &eig.eigenvectors;
    let u = v * diag(&phases) * v.adjoint();
    Ok(Unitary(u))
}

/// Result of a global-phase-insensitive comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseDistance {
    pub value: f64,
    /// Phase used: `u1 ~ exp(i theta) u2`.
    pub theta: f64,
    /// `tr(u2^dagger u1)` vanished and `theta` came from a grid search.
    pub grid_fallback: bool,
}

/// `min_theta max|u1 - exp(i theta) u2|`, evaluated at
/// `theta = arg tr(u2^dagger u1)`.
pub fn phase_invariant_distance(u1: &Unitary, u2: &Unitary) -> Result<PhaseDistance> {
    let (a, b) = (u1.matrix(), u2.matrix());
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: b.nrows(),
        });
    }
    let overlap = (b.adjoint() * a).trace();
    let dist_at = |theta: f64| max_abs_diff(a, &(b * Complex64::from_polar(1.0, theta)));
    if overlap.norm() > 1e-12 * a.nrows() as f64 {
        let theta = overlap.arg();
        return Ok(PhaseDistance {
            value: dist_at(theta),
            theta,
            grid_fallback: false,
        });
    }
    let (theta, value) = grid_minimise(dist_at);
    Ok(PhaseDistance {
        value,
        theta,
        grid_fallback: true,
    })
}

fn grid_minimise(f: impl Fn(f64) -> f64) -> (f64, f64) {
    const STEPS: usize = 3600;
    let step = std::f64::consts::TAU / STEPS as f64;
    let (mut best_t, mut best) = (0.0, f64::INFINITY);
    for k in 0..STEPS {
        let t = k as f64 * step;
        let v = f(t);
        if v < best {
            best = v;
            best_t = t;
        }
    }
    // golden-section polish inside the bracketing cell
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (best_t - step, best_t + step);
    for _ in 0..80 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if f(m1) < f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let t = 0.5 * (lo + hi);
    let v = f(t);
    if v < best {
        (t, v)
    } else {
        (best_t, best)
    }
}

/// A normalised pure state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(ComplexVector);

impl StateVector {
    pub fn new(amplitudes: &[Complex64]) -> Result<Self> {
        let v = ComplexVector::from_column_slice(amplitudes);
        let norm = v.norm();
        if !(norm > 1e-300) || !norm.is_finite() {
            return Err(Error::ZeroNorm { norm });
        }
        Ok(StateVector(v.unscale(norm)))
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = ComplexVector::zeros(dim);
        v[index] = ONE;
        StateVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn amplitudes(&self) -> &ComplexVector {
        &self.0
    }

    pub fn evolve(&self, u: &Unitary) -> StateVector {
        StateVector(u.matrix() * &self.0)
    }

    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix {
            matrix: &self.0 * self.0.adjoint(),
            deviation: false,
        }
    }
}

/// A Hermitian density operator.
///
/// Deviation matrices (the traceless part of a high-temperature NMR state)
/// carry `deviation = true` and are exempt from the unit-trace rule.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
    deviation: bool,
}

impl DensityMatrix {
    pub const TOL: f64 = 1e-12;

    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        Self::checked(matrix, false)
    }

    pub fn new_deviation(matrix: ComplexMatrix) -> Result<Self> {
        Self::checked(matrix, true)
    }

    fn checked(matrix: ComplexMatrix, deviation: bool) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                actual: matrix.ncols(),
            });
        }
        let dev = hermitian_deviation(&matrix);
        if dev > Self::TOL {
            return Err(Error::NotHermitian { deviation: dev });
        }
        if !deviation {
            let tr = matrix.trace();
            if (tr - ONE).norm() > Self::TOL {
                return Err(Error::InvalidParams(format!(
                    "density matrix trace {tr} is not 1"
                )));
            }
        }
        Ok(DensityMatrix { matrix, deviation })
    }

    pub(crate) fn from_parts(matrix: ComplexMatrix, deviation: bool) -> Self {
        DensityMatrix { matrix, deviation }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityMatrix {
            matrix: identity(dim) / Complex64::new(dim as f64, 0.0),
            deviation: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn is_deviation(&self) -> bool {
        self.deviation
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    pub fn conjugated(&self, u: &Unitary) -> DensityMatrix {
        DensityMatrix {
            matrix: u.conjugate(&self.matrix),
            deviation: self.deviation,
        }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let hs = (&self.matrix + self.matrix.adjoint()) * Complex64::new(0.5, 0.0);
        let mut ev: Vec<f64> = hs.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn kron_examples() {
        assert_eq!(kron(&identity(2), &identity(2)), identity(4));
        assert_eq!(
            kron(&pauli_z(), &identity(2)),
            real_diag(&[1.0, 1.0, -1.0, -1.0])
        );
        let xx = kron(&pauli_x(), &pauli_x());
        assert_eq!(&xx * &xx, identity(4));
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let u = expm_hermitian(&ComplexMatrix::zeros(4, 4), 3.7).unwrap();
        assert_eq!(u.matrix(), &identity(4));
    }

    #[test]
    fn expm_diagonal_phase() {
        let u = expm_hermitian(&pauli_z(), PI / 2.0).unwrap();
        let want = diag(&[Complex64::from_polar(1.0, -PI / 2.0), Complex64::from_polar(1.0, PI / 2.0)]);
        assert!(max_abs_diff(u.matrix(), &want) < 1e-15);
    }

    #[test]
    fn expm_pauli_x_quarter_turn() {
        // exp(-i x pi/2) = cos(pi/2) I - i sin(pi/2) x = -i x
        let u = expm_hermitian(&pauli_x(), PI / 2.0).unwrap();
        assert!(max_abs_diff(u.matrix(), &(pauli_x() * -I)) < 1e-14);
    }

    #[test]
    fn expm_rejects_non_hermitian() {
        let m = ComplexMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        match expm_hermitian(&m, 1.0) {
            Err(Error::NotHermitian { deviation }) => assert!((deviation - 1.0).abs() < 1e-15),
            other => panic!("expected NotHermitian, got {other:?}"),
        }
    }

    #[test]
    fn phase_distance_examples() {
        let u = expm_hermitian(&(pauli_x() + pauli_z() * c(0.3, 0.0)), 0.9).unwrap();
        let d = phase_invariant_distance(&u, &u).unwrap();
        assert!(d.value < 1e-15 && !d.grid_fallback);

        let shifted = Unitary::new(u.matrix() * Complex64::from_polar(1.0, PI / 7.0)).unwrap();
        assert!(phase_invariant_distance(&u, &shifted).unwrap().value < 1e-12);

        // tr(x^dagger I) = 0, so this goes through the grid; every theta gives 1.
        let d = phase_invariant_distance(&Unitary::identity(2), &Unitary::new(pauli_x()).unwrap())
            .unwrap();
        assert!(d.grid_fallback);
        assert!(d.value >= 1.0 - 1e-12);
    }

    #[test]
    fn state_vector_normalises() {
        let s = StateVector::new(&[ONE, I]).unwrap();
        assert!((s.amplitudes().norm() - 1.0).abs() < 1e-15);
        assert!(matches!(
            StateVector::new(&[ZERO, ZERO]),
            Err(Error::ZeroNorm { .. })
        ));
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(real_diag(&[0.5, 0.5])).is_ok());
        assert!(DensityMatrix::new(real_diag(&[1.0, 1.0])).is_err());
        assert!(DensityMatrix::new_deviation(real_diag(&[1.0, -1.0])).is_ok());
        let skew = ComplexMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), ONE, ZERO, c(0.5, 0.0)]);
        assert!(matches!(
            DensityMatrix::new(skew),
            Err(Error::NotHermitian { .. })
        ));
    }

    fn hermitian(dim: usize) -> impl Strategy<Value = ComplexMatrix> {
        prop::collection::vec(-2.0f64..2.0, 2 * dim * dim).prop_map(move |v| {
            let a = ComplexMatrix::from_fn(dim, dim, |r, c| {
                Complex64::new(v[2 * (r * dim + c)], v[2 * (r * dim + c) + 1])
            });
            (&a + a.adjoint()) * Complex64::new(0.5, 0.0)
        })
    }

    fn small() -> impl Strategy<Value = ComplexMatrix> {
        prop::collection::vec(-1.0f64..1.0, 8).prop_map(|v| {
            ComplexMatrix::from_fn(2, 2, |r, c| Complex64::new(v[2 * (2 * r + c)], v[2 * (2 * r + c) + 1]))
        })
    }

    proptest! {
        #[test]
        fn expm_inverse(h in hermitian(4), t in -5.0f64..5.0) {
            let fwd = expm_hermitian(&h, t).unwrap();
            let back = expm_hermitian(&h, -t).unwrap();
            prop_assert!(max_abs_diff(&(fwd.matrix() * back.matrix()), &identity(4)) < 1e-12);
            prop_assert!(unitarity_deviation(fwd.matrix()) < 1e-12);
        }

        #[test]
        fn expm_semigroup(h in hermitian(4), t1 in -3.0f64..3.0, t2 in -3.0f64..3.0) {
            let a = expm_hermitian(&h, t1).unwrap();
            let b = expm_hermitian(&h, t2).unwrap();
            let ab = expm_hermitian(&h, t1 + t2).unwrap();
            prop_assert!(max_abs_diff(&(a.matrix() * b.matrix()), ab.matrix()) < 1e-11);
        }

        #[test]
        fn phase_distance_symmetric(h1 in hermitian(4), h2 in hermitian(4), phase in 0.0f64..6.3) {
            let u1 = expm_hermitian(&h1, 1.0).unwrap();
            let u2 = expm_hermitian(&h2, 1.0).unwrap();
            let d12 = phase_invariant_distance(&u1, &u2).unwrap().value;
            let d21 = phase_invariant_distance(&u2, &u1).unwrap().value;
            prop_assert!((d12 - d21).abs() < 1e-12);
            let shifted = Unitary::new(u1.matrix() * Complex64::from_polar(1.0, phase)).unwrap();
            prop_assert!(phase_invariant_distance(&u1, &shifted).unwrap().value < 1e-12);
        }

        #[test]
        fn kron_associative(a in small(), b in small(), c in small()) {
            let left = kron(&kron(&a, &b), &c);
            let right = kron(&a, &kron(&b, &c));
            prop_assert!(max_abs_diff(&left, &right) < 1e-13);
        }
    }
}
