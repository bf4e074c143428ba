//! Truncated harmonic and anharmonic oscillators, and their exact propagators.
//!
//! These are the simulated systems. `exact_propagator` is the reference
//! every pulse program is checked against.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, ComplexMatrix, Unitary};

/// `levels` lowest oscillator levels, frequency `omega` (rad/s), anharmonicity `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorSpec {
    pub levels: usize,
    pub omega: f64,
    pub mu: f64,
}

impl OscillatorSpec {
    pub fn new(levels: usize, omega: f64, mu: f64) -> Result<Self> {
        if levels < 2 {
            return Err(Error::InvalidParams(format!("need at least 2 levels, got {levels}")));
        }
        if omega == 0.0 || !omega.is_finite() {
            return Err(Error::InvalidParams(format!("oscillator frequency {omega} must be finite and nonzero")));
        }
        if !mu.is_finite() {
            return Err(Error::InvalidParams("anharmonicity must be finite".into()));
        }
        Ok(OscillatorSpec { levels, omega, mu })
    }

    pub fn harmonic(levels: usize, omega: f64) -> Result<Self> {
        Self::new(levels, omega, 0.0)
    }

    /// Energy of level `n`: `omega [(n + 1/2) + mu (n + 1/2)^2]`.
    pub fn level_energy(&self, n: usize) -> f64 {
        let x = n as f64 + 0.5;
        self.omega * (x + self.mu * x * x)
    }
}

/// Resonant coupling `rabi/2 (|m><m+1| + |m+1><m|)`, `rabi` in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveSpec {
    pub level: usize,
    pub rabi: f64,
}

pub fn qho_hamiltonian(spec: &OscillatorSpec) -> Result<ComplexMatrix> {
    if spec.mu != 0.0 {
        return Err(Error::InvalidParams(format!(
            "harmonic Hamiltonian requested with mu = {}",
            spec.mu
        )));
    }
    Ok(aho_hamiltonian(spec))
}

pub fn aho_hamiltonian(spec: &OscillatorSpec) -> ComplexMatrix {
    let e: Vec<f64> = (0..spec.levels).map(|n| spec.level_energy(n)).collect();
    linalg::real_diag(&e)
}

/// Gap between levels `m` and `m + 1`: `omega [2 mu (m + 1) + 1]`.
pub fn transition_energy(m: usize, spec: &OscillatorSpec) -> Result<f64> {
    if m + 1 >= spec.levels {
        return Err(Error::LevelOutOfRange {
            index: m + 1,
            levels: spec.levels,
        });
    }
    Ok(spec.omega * (2.0 * spec.mu * (m as f64 + 1.0) + 1.0))
}

pub fn driven_hamiltonian(spec: &OscillatorSpec, drive: &DriveSpec) -> Result<ComplexMatrix> {
    if drive.level + 1 >= spec.levels {
        return Err(Error::LevelOutOfRange {
            index: drive.level + 1,
            levels: spec.levels,
        });
    }
    let mut h = aho_hamiltonian(spec);
    let c = Complex64::new(0.5 * drive.rabi, 0.0);
    h[(drive.level, drive.level + 1)] = c;
    h[(drive.level + 1, drive.level)] = c;
    Ok(h)
}

/// `exp(-i h T)` for simulated time `T`.
pub fn exact_propagator(h: &ComplexMatrix, t: f64) -> Result<Unitary> {
    linalg::expm_hermitian(h, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, real_diag, StateVector, I, ONE, ZERO};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn qho_levels() {
        let om = 2.0 * PI;
        let h = qho_hamiltonian(&OscillatorSpec::harmonic(4, om).unwrap()).unwrap();
        let want = real_diag(&[0.5 * om, 1.5 * om, 2.5 * om, 3.5 * om]);
        assert!(max_abs_diff(&h, &want) < 1e-15);

        let h2 = qho_hamiltonian(&OscillatorSpec::harmonic(2, 1.0).unwrap()).unwrap();
        assert_eq!(h2, real_diag(&[0.5, 1.5]));

        for levels in 2..9 {
            let h = qho_hamiltonian(&OscillatorSpec::harmonic(levels, 1.3).unwrap()).unwrap();
            let want = 1.3 * (levels * levels) as f64 / 2.0;
            assert!((h.trace().re - want).abs() < 1e-12);
        }
    }

    #[test]
    fn qho_rejects_anharmonic_spec() {
        let spec = OscillatorSpec::new(4, 1.0, 0.1).unwrap();
        assert!(qho_hamiltonian(&spec).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(OscillatorSpec::new(1, 1.0, 0.0).is_err());
        assert!(OscillatorSpec::new(4, 0.0, 0.0).is_err());
    }

    #[test]
    fn aho_levels_against_scalar_formula() {
        let spec = OscillatorSpec::new(4, 1.0, -2.0 / 9.0).unwrap();
        let h = aho_hamiltonian(&spec);
        // (n + 1/2) - 2/9 (n + 1/2)^2 at n = 0..3
        let want = [0.5 - 2.0 / 36.0, 1.5 - 0.5, 2.5 - 2.0 * 6.25 / 9.0, 3.5 - 2.0 * 12.25 / 9.0];
        for (n, w) in want.iter().enumerate() {
            assert!((h[(n, n)].re - w).abs() < 1e-15);
        }
        let harmonic = OscillatorSpec::harmonic(4, 1.0).unwrap();
        assert_eq!(aho_hamiltonian(&harmonic), qho_hamiltonian(&harmonic).unwrap());
    }

    #[test]
    fn transition_energies() {
        let h = OscillatorSpec::harmonic(4, 2.0).unwrap();
        for m in 0..3 {
            assert_eq!(transition_energy(m, &h).unwrap(), 2.0);
        }
        let a = OscillatorSpec::new(4, 1.0, -2.0 / 9.0).unwrap();
        assert!((transition_energy(0, &a).unwrap() - 5.0 / 9.0).abs() < 1e-15);
        for m in 0..3 {
            let diff = a.level_energy(m + 1) - a.level_energy(m);
            assert!((transition_energy(m, &a).unwrap() - diff).abs() < 1e-12);
        }
        assert!(matches!(
            transition_energy(3, &a),
            Err(Error::LevelOutOfRange { .. })
        ));
    }

    #[test]
    fn driven_reduces_and_is_hermitian() {
        let spec = OscillatorSpec::new(4, 1.0, -2.0 / 9.0).unwrap();
        let zero = driven_hamiltonian(&spec, &DriveSpec { level: 0, rabi: 0.0 }).unwrap();
        assert_eq!(zero, aho_hamiltonian(&spec));
        let h = driven_hamiltonian(&spec, &DriveSpec { level: 0, rabi: -2.0 / 9.0 }).unwrap();
        assert_eq!(h, h.adjoint());
        assert_eq!(h[(0, 1)].re, -1.0 / 9.0);
        assert!(driven_hamiltonian(&spec, &DriveSpec { level: 3, rabi: 1.0 }).is_err());
    }

    #[test]
    fn exact_propagator_examples() {
        let h = qho_hamiltonian(&OscillatorSpec::harmonic(4, 1.0).unwrap()).unwrap();
        assert_eq!(exact_propagator(&h, 0.0).unwrap().matrix(), &linalg::identity(4));

        // Full revival after OmegaT = 2pi: every level gap is a multiple of Omega.
        let u = exact_propagator(&h, 2.0 * PI).unwrap();
        let d = linalg::phase_invariant_distance(&u, &Unitary::identity(4)).unwrap();
        assert!(d.value < 1e-12);

        // (|0> + i|2>)/sqrt2: the |0><2| element becomes -i/2 exp(2 i Omega T).
        let t = 0.37;
        let s = StateVector::new(&[ONE, ZERO, I, ZERO]).unwrap();
        let rho = s.evolve(&exact_propagator(&h, t).unwrap()).projector();
        let want = Complex64::new(0.0, -0.5) * Complex64::from_polar(1.0, 2.0 * t);
        assert!((rho.matrix()[(0, 2)] - want).norm() < 1e-15);
    }

    #[test]
    fn drive_only_moves_its_pair() {
        let spec = OscillatorSpec::new(4, 1.0, -2.0 / 9.0).unwrap();
        let h = driven_hamiltonian(&spec, &DriveSpec { level: 0, rabi: -2.0 / 9.0 }).unwrap();
        let start = StateVector::new(&[ONE, ZERO, Complex64::new(0.3, 0.0), Complex64::new(0.0, 0.2)]).unwrap();
        let p0 = start.amplitudes().map(|a| a.norm_sqr());
        for k in 1..40 {
            let s = start.evolve(&exact_propagator(&h, 0.7 * k as f64).unwrap());
            let p = s.amplitudes().map(|a| a.norm_sqr());
            assert!((p[2] - p0[2]).abs() < 1e-12 && (p[3] - p0[3]).abs() < 1e-12);
            assert!((p[0] + p[1] - p0[0] - p0[1]).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn propagator_semigroup(mu in -0.3f64..0.3, rabi in -1.0f64..1.0, t1 in -4.0f64..4.0, t2 in -4.0f64..4.0) {
            let spec = OscillatorSpec::new(4, 1.0, mu).unwrap();
            let h = driven_hamiltonian(&spec, &DriveSpec { level: 1, rabi }).unwrap();
            let a = exact_propagator(&h, t1).unwrap();
            let b = exact_propagator(&h, t2).unwrap();
            let ab = exact_propagator(&h, t1 + t2).unwrap();
            prop_assert!(max_abs_diff(&(a.matrix() * b.matrix()), ab.matrix()) < 1e-11);
        }

        #[test]
        fn eigenstates_do_not_evolve(n in 0usize..4, t in 0.0f64..50.0) {
            let h = qho_hamiltonian(&OscillatorSpec::harmonic(4, 1.0).unwrap()).unwrap();
            let s = StateVector::basis(4, n).evolve(&exact_propagator(&h, t).unwrap());
            prop_assert!((s.amplitudes()[n].norm_sqr() - 1.0).abs() < 1e-12);
        }
    }
}
