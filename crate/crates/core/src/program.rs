//! Pulse programs: construction, timing, compilation and execution.
//!
//! A [`PulseProgram`] is an ordered list of hard pulses, free-evolution
//! delays and (at most one) crusher gradient. Events run in list order.
//!
//! Text form, one event per line:
//!
//! ```text
//! # label: harmonic
//! pulse y 1+2 pi
//! delay 0.0272
//! pulse -x 2 3pi/4
//! grad
//! ```
//!
//! Spin labels in text are 1-based (`1` is tensor slot 0).

use std::f64::consts::PI;
use std::fmt;

use crate::encoding;
use crate::error::{Error, Result};
use crate::linalg::{self, ComplexMatrix, DensityMatrix, Unitary};
use crate::oscillator::{DriveSpec, OscillatorSpec};
use crate::spin::{self, pauli, Axis, DelayEvent, PulseAxis, PulseEvent, SpinSystemParams};

/// Anharmonicity the anharmonic sequence timing is specialised to.
pub const AHO_MU: f64 = -2.0 / 9.0;
/// Rabi frequency, in units of the oscillator frequency, for the same sequence.
pub const AHO_RABI_RATIO: f64 = -2.0 / 9.0;

const PARAM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Pulse(PulseEvent),
    Delay(DelayEvent),
    Gradient,
}

impl Event {
    pub fn pulse(angle: f64, axis: PulseAxis, targets: &[usize]) -> Self {
        Event::Pulse(PulseEvent::new(angle, axis, targets))
    }

    pub fn delay(duration: f64) -> Self {
        Event::Delay(DelayEvent { duration })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseProgram {
    label: String,
    omega_t: Option<f64>,
    events: Vec<Event>,
}

impl PulseProgram {
    pub fn new(label: impl Into<String>, events: Vec<Event>) -> Result<Self> {
        let mut gradients = 0;
        for e in &events {
            match e {
                Event::Delay(d) if !(d.duration >= 0.0) => {
                    return Err(Error::InvalidParams(format!(
                        "delay {} s is negative",
                        d.duration
                    )))
                }
                Event::Gradient => gradients += 1,
                _ => {}
            }
        }
        if gradients > 1 {
            return Err(Error::InvalidParams("more than one gradient event".into()));
        }
        Ok(PulseProgram {
            label: label.into(),
            omega_t: None,
            events,
        })
    }

    pub fn empty() -> Self {
        PulseProgram {
            label: String::new(),
            omega_t: None,
            events: Vec::new(),
        }
    }

    pub fn with_omega_t(mut self, omega_t: f64) -> Self {
        self.omega_t = Some(omega_t);
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Simulated time parameter `Omega T` the program was built for.
    pub fn omega_t(&self) -> Option<f64> {
        self.omega_t
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn has_gradient(&self) -> bool {
        self.events.iter().any(|e| matches!(e, Event::Gradient))
    }

    /// Wall-clock length in seconds; pulses take no time.
    pub fn duration(&self) -> f64 {
        self.events
            .iter()
            .map(|e| match e {
                Event::Delay(d) => d.duration,
                _ => 0.0,
            })
            .sum()
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &PulseProgram) -> Result<PulseProgram> {
        let mut events = self.events.clone();
        events.extend(next.events.iter().cloned());
        let label = match (self.label.is_empty(), next.label.is_empty()) {
            (true, _) => next.label.clone(),
            (_, true) => self.label.clone(),
            _ => format!("{}+{}", self.label, next.label),
        };
        PulseProgram::new(label, events)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSolution {
    pub tau1: f64,
    pub tau2: f64,
    /// Integer branch of the phase condition (anharmonic sequence only).
    pub m: Option<i64>,
}

fn require_two_spins(params: &SpinSystemParams) -> Result<()> {
    if params.n_spins() != 2 {
        return Err(Error::InvalidParams(format!(
            "sequence is defined for 2 spins, got {}",
            params.n_spins()
        )));
    }
    Ok(())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// `[pi/4]_x - 1/4J - [pi]_y - 1/4J - [-5pi/6]_y - G`, all pulses on both spins.
pub fn pseudopure_prep_program(params: &SpinSystemParams) -> Result<PulseProgram> {
    require_two_spins(params)?;
    let j = params.j(0, 1);
    if j == 0.0 || !j.is_finite() {
        return Err(Error::Timing(format!("preparation needs J != 0 (J = {j} Hz)")));
    }
    let quarter = 1.0 / (4.0 * j.abs());
    let both = [0, 1];
    PulseProgram::new(
        "pseudopure",
        vec![
            Event::pulse(PI / 4.0, PulseAxis::X, &both),
            Event::delay(quarter),
            Event::pulse(PI, PulseAxis::Y, &both),
            Event::delay(quarter),
            Event::pulse(-5.0 * PI / 6.0, PulseAxis::Y, &both),
            Event::Gradient,
        ],
    )
}

/// Delays for the harmonic sequence.
///
/// `tau1 = OmegaT [1/(pi J) - 2/dw]`, `tau2 = 2 OmegaT / dw`, with `dw` the
/// angular shift difference between spin 1 and spin 2 and `J` in Hz.
pub fn qho_timing(omega_t: f64, params: &SpinSystemParams) -> Result<TimingSolution> {
    require_two_spins(params)?;
    let dw = params.resonance(0) - params.resonance(1);
    let j = params.j(0, 1);
    if !(omega_t >= 0.0) {
        return Err(Error::Timing(format!("OmegaT = {omega_t} must be >= 0")));
    }
    if dw == 0.0 {
        return Err(Error::Timing("spins 1 and 2 have the same resonance frequency".into()));
    }
    if j == 0.0 {
        return Err(Error::Timing("J coupling is zero".into()));
    }
    let per_tau1 = 1.0 / (PI * j) - 2.0 / dw;
    let per_tau2 = 2.0 / dw;
    if per_tau1 < 0.0 || per_tau2 < 0.0 {
        return Err(Error::Timing(format!(
            "negative delay: 1/(pi J) - 2/dw = {per_tau1:e} s, 2/dw = {per_tau2:e} s \
             (J = {j} Hz, dw = {dw} rad/s)"
        )));
    }
    Ok(TimingSolution {
        tau1: omega_t * per_tau1,
        tau2: omega_t * per_tau2,
        m: None,
    })
}

/// `[pi]_y - tau1/2 - [pi]_y - (tau1/2 + tau2)`, pulses on both spins.
pub fn qho_program_from_timing(timing: &TimingSolution) -> Result<PulseProgram> {
    let both = [0, 1];
    PulseProgram::new(
        "harmonic",
        vec![
            Event::pulse(PI, PulseAxis::Y, &both),
            Event::delay(timing.tau1 / 2.0),
            Event::pulse(PI, PulseAxis::Y, &both),
            Event::delay(timing.tau1 / 2.0 + timing.tau2),
        ],
    )
}

/// Harmonic-oscillator program for simulated phase `omega_t`. The receiver
/// must sit on spin 2.
pub fn qho_program(omega_t: f64, params: &SpinSystemParams) -> Result<PulseProgram> {
    require_two_spins(params)?;
    if !close(params.receiver(), params.resonance(1)) {
        return Err(Error::InvalidParams(format!(
            "harmonic sequence needs the receiver on spin 2 ({} rad/s), got {} rad/s",
            params.resonance(1),
            params.receiver()
        )));
    }
    let timing = qho_timing(omega_t, params)?;
    Ok(qho_program_from_timing(&timing)?.with_omega_t(omega_t))
}

fn check_aho_regime(osc: &OscillatorSpec, drive: &DriveSpec) -> Result<()> {
    if osc.levels != 4 {
        return Err(Error::InvalidParams(format!("anharmonic sequence needs 4 levels, got {}", osc.levels)));
    }
    if drive.level != 0 {
        return Err(Error::InvalidParams(format!(
            "anharmonic sequence drives the 0-1 transition, not {}-{}",
            drive.level,
            drive.level + 1
        )));
    }
    if (osc.mu - AHO_MU).abs() > PARAM_TOL {
        return Err(Error::InvalidParams(format!(
            "anharmonic timing is specialised to mu = -2/9, got {}",
            osc.mu
        )));
    }
    if (drive.rabi / osc.omega - AHO_RABI_RATIO).abs() > PARAM_TOL {
        return Err(Error::InvalidParams(format!(
            "anharmonic timing is specialised to rabi = -2/9 omega, got {} omega",
            drive.rabi / osc.omega
        )));
    }
    Ok(())
}

/// Delays for the driven anharmonic sequence.
///
/// `tau2 = sqrt2 OmegaT / (9 pi J)` sets the nutation of spin 2 while spin 1
/// is up. `tau1` fixes the phase spin 1 accumulates over the whole program:
/// `delta/2 (tau1 + tau2) = OmegaT/9 + m pi`, where `delta` is spin 1's
/// rotating-frame offset. `m` is the branch giving the smallest `tau1 >= 0`.
pub fn aho_timing(
    omega_t: f64,
    params: &SpinSystemParams,
    osc: &OscillatorSpec,
    drive: &DriveSpec,
) -> Result<TimingSolution> {
    require_two_spins(params)?;
    check_aho_regime(osc, drive)?;
    if !(omega_t >= 0.0) {
        return Err(Error::Timing(format!("OmegaT = {omega_t} must be >= 0")));
    }
    let j = params.j(0, 1);
    if !(j > 0.0) {
        return Err(Error::Timing(format!("anharmonic sequence needs J > 0, got {j} Hz")));
    }
    let delta = params.offset(0);
    if delta == 0.0 || !delta.is_finite() {
        return Err(Error::Timing("spin 1 sits on the receiver frequency; tau1 is undetermined".into()));
    }
    let tau2 = 2.0f64.sqrt() * omega_t / (9.0 * PI * j);
    let target = omega_t / 9.0;
    let period = 2.0 * PI / delta.abs();
    let mut tau1 = (target / (0.5 * delta) - tau2).rem_euclid(period);
    if period - tau1 < 1e-15 * period {
        tau1 = 0.0;
    }
    let m = ((0.5 * delta * (tau1 + tau2) - target) / PI).round() as i64;
    Ok(TimingSolution {
        tau1,
        tau2,
        m: Some(m),
    })
}

/// Receiver setting the anharmonic sequence assumes: half a J below spin 2.
pub fn aho_receiver(params: &SpinSystemParams) -> f64 {
    params.resonance(1) - PI * params.j(0, 1)
}

/// `tau1/2 - [pi]_y - tau1/2 - [3pi/4]_y - tau2 - [pi/4]_y`, pulses on spin 2.
pub fn aho_program_from_timing(timing: &TimingSolution) -> Result<PulseProgram> {
    let target = [1];
    PulseProgram::new(
        "anharmonic",
        vec![
            Event::delay(timing.tau1 / 2.0),
            Event::pulse(PI, PulseAxis::Y, &target),
            Event::delay(timing.tau1 / 2.0),
            Event::pulse(3.0 * PI / 4.0, PulseAxis::Y, &target),
            Event::delay(timing.tau2),
            Event::pulse(PI / 4.0, PulseAxis::Y, &target),
        ],
    )
}

pub fn aho_program(
    omega_t: f64,
    params: &SpinSystemParams,
    osc: &OscillatorSpec,
    drive: &DriveSpec,
) -> Result<PulseProgram> {
    require_two_spins(params)?;
    if !close(params.receiver(), aho_receiver(params)) {
        return Err(Error::InvalidParams(format!(
            "anharmonic sequence needs the receiver at {} rad/s (spin 2 - pi J), got {} rad/s",
            aho_receiver(params),
            params.receiver()
        )));
    }
    let timing = aho_timing(omega_t, params, osc, drive)?;
    Ok(aho_program_from_timing(&timing)?.with_omega_t(omega_t))
}

/// Average Hamiltonian the anharmonic sequence actually produces:
///
/// ```text
/// omega [mu/4 Z_2 - (4 mu + 1) Z_1 (1 + Z_2 / 2)] + rabi/4 X_2 (1 + Z_1)
/// ```
///
/// It differs from [`encoding::driven_aho_closed_form`] only in the lone
/// `Z_2` coefficient (`mu/4` rather than `mu`). At `mu = -2/9` that makes
/// levels 2 and 3 degenerate and leaves spin 2 frozen while spin 1 is down,
/// which is what lets the sequence get away with pulses on spin 2 alone.
pub fn aho_sequence_generator(omega: f64, mu: f64, rabi: f64) -> ComplexMatrix {
    let shift = encoding::driven_aho_closed_form(omega, mu, rabi);
    let z2 = pauli(Axis::Z, 1, 2).expect("slot 1 of 2");
    shift - z2 * num_complex::Complex64::new(0.75 * mu * omega, 0.0)
}

/// Net propagator of a gradient-free program (first event acts first).
pub fn compile_program(p: &PulseProgram, params: &SpinSystemParams) -> Result<Unitary> {
    let n = params.n_spins();
    let h = spin::natural_hamiltonian(params);
    let mut u = Unitary::identity(params.dim());
    for event in p.events() {
        let step = match event {
            Event::Pulse(pulse) => pulse.rotation(n)?,
            Event::Delay(d) => linalg::expm_hermitian(&h, d.duration)?,
            Event::Gradient => return Err(Error::GradientInUnitary),
        };
        u = u.then(&step);
    }
    Ok(u)
}

/// Runs a program on a density matrix, event by event.
pub fn execute_program(
    p: &PulseProgram,
    state: &DensityMatrix,
    params: &SpinSystemParams,
    relaxation: bool,
) -> Result<DensityMatrix> {
    if state.dim() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            actual: state.dim(),
        });
    }
    let mut rho = state.clone();
    for event in p.events() {
        rho = match event {
            Event::Pulse(pulse) => spin::apply_pulse(&rho, pulse)?,
            Event::Delay(d) => spin::evolve_delay(&rho, d.duration, params, relaxation)?,
            Event::Gradient => spin::gradient_crush(&rho),
        };
    }
    Ok(rho)
}

/// Program whose propagator is `identity` (kept for symmetry with the builders).
pub fn identity_program() -> PulseProgram {
    PulseProgram::empty()
}

fn format_angle(theta: f64) -> String {
    let turns = theta / PI;
    for den in 1..=12i64 {
        let num = turns * den as f64;
        let rounded = num.round();
        if (num - rounded).abs() < 1e-12 && rounded != 0.0 {
            let n = rounded as i64;
            let g = gcd(n.abs(), den);
            let (n, d) = (n / g, den / g);
            let sign = if n < 0 { "-" } else { "" };
            let coef = if n.abs() == 1 { String::new() } else { n.abs().to_string() };
            return if d == 1 {
                format!("{sign}{coef}pi")
            } else {
                format!("{sign}{coef}pi/{d}")
            };
        }
    }
    format!("{theta}")
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Reads `0.25`, `-2/9`, `pi`, `-5pi/6`, `2pi/32` or `inf`.
pub fn parse_real(s: &str) -> Option<f64> {
    let s = s.trim();
    match s {
        "inf" | "+inf" => return Some(f64::INFINITY),
        "-inf" => return Some(f64::NEG_INFINITY),
        _ => {}
    }
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().ok().filter(|d| *d != 0.0)?),
        None => (s, 1.0),
    };
    let value = match num.strip_suffix("pi") {
        Some(coef) => {
            let c = match coef {
                "" | "+" => 1.0,
                "-" => -1.0,
                c => c.strip_suffix('*').unwrap_or(c).parse::<f64>().ok()?,
            };
            c * PI
        }
        None => num.parse::<f64>().ok()?,
    };
    Some(value / den).filter(|v| !v.is_nan())
}

impl fmt::Display for PulseProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.label.is_empty() {
            writeln!(f, "# label: {}", self.label)?;
        }
        if let Some(ot) = self.omega_t {
            writeln!(f, "# omega_t: {ot}")?;
        }
        for e in &self.events {
            match e {
                Event::Pulse(p) => {
                    let targets: Vec<String> = p.targets.iter().map(|t| (t + 1).to_string()).collect();
                    writeln!(
                        f,
                        "pulse {} {} {}",
                        p.axis.label(),
                        targets.join("+"),
                        format_angle(p.flip_angle)
                    )?
                }
                Event::Delay(d) => writeln!(f, "delay {}", d.duration)?,
                Event::Gradient => writeln!(f, "grad")?,
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for PulseProgram {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut events = Vec::new();
        let mut label = String::new();
        let mut omega_t = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: String| Error::ProgramSyntax { line: line_no, msg };
            let line = raw.trim();
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(l) = comment.strip_prefix("label:") {
                    label = l.trim().to_string();
                } else if let Some(v) = comment.strip_prefix("omega_t:") {
                    omega_t = Some(v.trim().parse().map_err(|_| err(format!("bad omega_t `{}`", v.trim())))?);
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let event = match fields.as_slice() {
                ["grad"] => Event::Gradient,
                ["delay", d] => Event::delay(d.parse().map_err(|_| err(format!("bad delay `{d}`")))?),
                ["pulse", axis, targets, angle] => {
                    let axis = PulseAxis::parse(axis).ok_or_else(|| err(format!("bad axis `{axis}`")))?;
                    let targets = targets
                        .split('+')
                        .map(|t| match t.parse::<usize>() {
                            Ok(k) if k >= 1 => Ok(k - 1),
                            _ => Err(err(format!("bad spin label `{t}`"))),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let angle = parse_real(angle).filter(|a| a.is_finite()).ok_or_else(|| err(format!("bad angle `{angle}`")))?;
                    Event::pulse(angle, axis, &targets)
                }
                _ => return Err(err(format!("unrecognised event `{line}`"))),
            };
            events.push(event);
        }
        let mut p = PulseProgram::new(label, events)?;
        p.omega_t = omega_t;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{average_hamiltonian, gray_encoding};
    use crate::linalg::{identity, max_abs_diff, phase_invariant_distance, StateVector};
    use crate::oscillator::{driven_hamiltonian, exact_propagator, qho_hamiltonian};
    use crate::spin::thermal_deviation;
    use proptest::prelude::*;

    const TWO_PI: f64 = 2.0 * PI;

    fn harmonic_params() -> SpinSystemParams {
        SpinSystemParams::dibromothiophene()
    }

    fn aho_setup() -> (SpinSystemParams, OscillatorSpec, DriveSpec) {
        let p = harmonic_params();
        let receiver = aho_receiver(&p);
        let osc = OscillatorSpec::new(4, TWO_PI, AHO_MU).unwrap();
        let drive = DriveSpec { level: 0, rabi: AHO_RABI_RATIO * TWO_PI };
        (p.with_receiver(receiver), osc, drive)
    }

    fn qho_oracle(omega_t: f64) -> Unitary {
        let h = qho_hamiltonian(&OscillatorSpec::harmonic(4, 1.0).unwrap()).unwrap();
        let hb = average_hamiltonian(&h, &gray_encoding(2).unwrap()).unwrap();
        exact_propagator(&hb, omega_t).unwrap()
    }

    #[test]
    fn prep_program_layout() {
        let p = pseudopure_prep_program(&harmonic_params()).unwrap();
        assert_eq!(p.events().len(), 6);
        assert_eq!(p.events()[1], Event::delay(1.0 / (4.0 * 5.7)));
        assert!(p.has_gradient());
        let no_j = SpinSystemParams::two_proton(226.0, 0.0).unwrap();
        assert!(matches!(pseudopure_prep_program(&no_j), Err(Error::Timing(_))));
    }

    #[test]
    fn prep_yields_pseudopure_all_up() {
        let params = harmonic_params();
        let out = execute_program(
            &pseudopure_prep_program(&params).unwrap(),
            &thermal_deviation(&params),
            &params,
            false,
        )
        .unwrap();
        let m = out.matrix();
        assert!(linalg::is_diagonal(m));
        // traceless part must be a positive multiple of |uu><uu| - I/4
        let target = StateVector::basis(4, 0).projector();
        let t = linalg::traceless_part(target.matrix());
        let got = linalg::traceless_part(m);
        let scale = got[(0, 0)].re / t[(0, 0)].re;
        assert!(scale > 0.0);
        assert!(max_abs_diff(&got, &(t * num_complex::Complex64::new(scale, 0.0))) < 1e-10);
    }

    #[test]
    fn prep_without_gradient_keeps_coherences() {
        let params = harmonic_params();
        let prep = pseudopure_prep_program(&params).unwrap();
        let unitary_part = PulseProgram::new("", prep.events()[..5].to_vec()).unwrap();
        let out = execute_program(&unitary_part, &thermal_deviation(&params), &params, false).unwrap();
        let off = out.matrix();
        let max_off = (0..4)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .filter(|(r, c)| r != c)
            .map(|(r, c)| off[(r, c)].norm())
            .fold(0.0, f64::max);
        assert!(max_off > 0.1);
    }

    #[test]
    fn qho_timing_values() {
        let p = harmonic_params();
        let zero = qho_timing(0.0, &p).unwrap();
        assert_eq!((zero.tau1, zero.tau2), (0.0, 0.0));

        let t = qho_timing(1.0, &p).unwrap();
        let tau1 = 1.0 / (PI * 5.7) - 2.0 / (TWO_PI * 226.0);
        let tau2 = 2.0 / (TWO_PI * 226.0);
        assert!((t.tau1 - tau1).abs() < 1e-15 && (t.tau2 - tau2).abs() < 1e-15);
        assert!((t.tau1 - 0.05443).abs() < 1e-4);
        assert!((t.tau2 - 1.408e-3).abs() < 1e-6);

        let t2 = qho_timing(2.0, &p).unwrap();
        assert!((t2.tau1 - 2.0 * t.tau1).abs() < 1e-15 && (t2.tau2 - 2.0 * t.tau2).abs() < 1e-15);
    }

    #[test]
    fn qho_timing_errors() {
        // J so large that 1/(pi J) < 2/dw
        let strong = SpinSystemParams::two_proton(226.0, 300.0).unwrap();
        assert!(matches!(qho_timing(1.0, &strong), Err(Error::Timing(_))));
        let same = SpinSystemParams::two_proton(0.0, 5.7).unwrap();
        assert!(qho_timing(1.0, &same).is_err());
        let no_j = SpinSystemParams::two_proton(226.0, 0.0).unwrap();
        assert!(qho_timing(1.0, &no_j).is_err());
        assert!(qho_timing(-0.1, &harmonic_params()).is_err());
    }

    #[test]
    fn qho_program_layout_and_frame_check() {
        let p = qho_program(0.5, &harmonic_params()).unwrap();
        assert_eq!(p.events().len(), 4);
        let off = harmonic_params().with_receiver(10.0);
        assert!(qho_program(0.5, &off).is_err());
    }

    #[test]
    fn qho_program_at_zero_is_identity() {
        let params = harmonic_params();
        let u = compile_program(&qho_program(0.0, &params).unwrap(), &params).unwrap();
        let d = phase_invariant_distance(&u, &Unitary::identity(4)).unwrap();
        assert!(d.value < 1e-15);
    }

    #[test]
    fn qho_program_matches_oracle() {
        let params = harmonic_params();
        for ot in [PI / 4.0, 1.0, 2.9, 6.3] {
            let u = compile_program(&qho_program(ot, &params).unwrap(), &params).unwrap();
            let d = phase_invariant_distance(&u, &qho_oracle(ot)).unwrap();
            assert!(d.value < 1e-9, "OmegaT = {ot}: {}", d.value);
        }
    }

    #[test]
    fn qho_program_squares_to_double_time() {
        let params = harmonic_params();
        let ot = 0.83;
        let u = compile_program(&qho_program(ot, &params).unwrap(), &params).unwrap();
        let u2 = compile_program(&qho_program(2.0 * ot, &params).unwrap(), &params).unwrap();
        let d = phase_invariant_distance(&u.then(&u), &u2).unwrap();
        assert!(d.value < 1e-10);
    }

    #[test]
    fn perturbed_tau1_breaks_oracle_match() {
        let params = harmonic_params();
        let ot = 3.0;
        let mut t = qho_timing(ot, &params).unwrap();
        t.tau1 *= 1.01;
        let u = compile_program(&qho_program_from_timing(&t).unwrap(), &params).unwrap();
        assert!(phase_invariant_distance(&u, &qho_oracle(ot)).unwrap().value > 1e-3);
    }

    #[test]
    fn aho_timing_values() {
        let (p, osc, drive) = aho_setup();
        let zero = aho_timing(0.0, &p, &osc, &drive).unwrap();
        assert_eq!((zero.tau1, zero.tau2, zero.m), (0.0, 0.0, Some(0)));

        let ot = PI / 2.0;
        let t = aho_timing(ot, &p, &osc, &drive).unwrap();
        assert!((t.tau2 - 2.0 * 2f64.sqrt() * 0.25 / (9.0 * 5.7)).abs() < 1e-15);
        assert!(t.tau1 >= 0.0 && t.tau1 < TWO_PI / p.offset(0));

        // both conditions give back the same OmegaT
        let from_tau2 = 9.0 * PI * 5.7 * t.tau2 / 2f64.sqrt();
        let from_tau1 = 9.0 * (0.5 * p.offset(0) * (t.tau1 + t.tau2) - PI * t.m.unwrap() as f64);
        assert!((from_tau2 - ot).abs() < 1e-12);
        assert!((from_tau1 - ot).abs() < 1e-12);
    }

    #[test]
    fn aho_timing_rejects_other_regimes() {
        let (p, osc, drive) = aho_setup();
        let harmonic = OscillatorSpec::harmonic(4, TWO_PI).unwrap();
        assert!(aho_timing(1.0, &p, &harmonic, &drive).is_err());
        let other_drive = DriveSpec { level: 0, rabi: 0.5 };
        assert!(aho_timing(1.0, &p, &osc, &other_drive).is_err());
        let wrong_level = DriveSpec { level: 1, ..drive };
        assert!(aho_timing(1.0, &p, &osc, &wrong_level).is_err());
        let on_spin1 = p.clone().with_receiver(p.resonance(0));
        assert!(aho_timing(1.0, &on_spin1, &osc, &drive).is_err());
    }

    #[test]
    fn aho_program_layout() {
        let (p, osc, drive) = aho_setup();
        let prog = aho_program(1.0, &p, &osc, &drive).unwrap();
        assert_eq!(prog.events().len(), 6);
        assert!(aho_program(1.0, &harmonic_params(), &osc, &drive).is_err());

        // OmegaT = 0: pi + 3pi/4 + pi/4 = 2pi about y, identity up to phase.
        let u = compile_program(&aho_program(0.0, &p, &osc, &drive).unwrap(), &p).unwrap();
        assert!(phase_invariant_distance(&u, &Unitary::identity(4)).unwrap().value < 1e-15);
    }

    #[test]
    fn aho_program_realises_its_generator() {
        let (p, osc, drive) = aho_setup();
        let gen = aho_sequence_generator(1.0, AHO_MU, AHO_RABI_RATIO);
        for k in 0..=63 {
            let ot = 0.1 * k as f64;
            let u = compile_program(&aho_program(ot, &p, &osc, &drive).unwrap(), &p).unwrap();
            let want = linalg::expm_hermitian(&gen, ot).unwrap();
            let d = phase_invariant_distance(&u, &want).unwrap().value;
            assert!(d < 1e-9, "OmegaT = {ot}: {d}");
        }
    }

    #[test]
    fn aho_generator_differs_from_driven_oscillator() {
        let gen = aho_sequence_generator(1.0, AHO_MU, AHO_RABI_RATIO);
        let osc = OscillatorSpec::new(4, 1.0, AHO_MU).unwrap();
        let h = driven_hamiltonian(&osc, &DriveSpec { level: 0, rabi: AHO_RABI_RATIO }).unwrap();
        let conj = average_hamiltonian(&h, &gray_encoding(2).unwrap()).unwrap();
        let diff = linalg::traceless_part(&(gen - conj));
        let z2 = pauli(Axis::Z, 1, 2).unwrap();
        // the whole discrepancy is -3/4 mu Z_2 = +1/6 Z_2
        assert!(max_abs_diff(&diff, &(z2 * num_complex::Complex64::new(1.0 / 6.0, 0.0))) < 1e-12);
    }

    #[test]
    fn compile_basics() {
        let params = harmonic_params();
        let u = compile_program(&identity_program(), &params).unwrap();
        assert_eq!(u.matrix(), &identity(params.dim()));

        let tau = 0.0123;
        let single = PulseProgram::new("", vec![Event::delay(tau)]).unwrap();
        let want = linalg::expm_hermitian(&spin::natural_hamiltonian(&params), tau).unwrap();
        assert_eq!(compile_program(&single, &params).unwrap(), want);

        let prep = pseudopure_prep_program(&params).unwrap();
        assert!(matches!(compile_program(&prep, &params), Err(Error::GradientInUnitary)));
    }

    #[test]
    fn program_validation() {
        assert!(PulseProgram::new("", vec![Event::delay(-1.0)]).is_err());
        assert!(PulseProgram::new("", vec![Event::Gradient, Event::Gradient]).is_err());
    }

    #[test]
    fn execute_matches_compile() {
        let params = harmonic_params();
        let prog = qho_program(2.2, &params).unwrap();
        let rho = StateVector::new(&[
            num_complex::Complex64::new(0.3, 0.1),
            num_complex::Complex64::new(-0.2, 0.5),
            num_complex::Complex64::new(0.7, 0.0),
            num_complex::Complex64::new(0.1, -0.4),
        ])
        .unwrap()
        .projector();
        let a = execute_program(&prog, &rho, &params, false).unwrap();
        let b = rho.conjugated(&compile_program(&prog, &params).unwrap());
        assert!(max_abs_diff(a.matrix(), b.matrix()) < 1e-12);

        let same = execute_program(&identity_program(), &rho, &params, false).unwrap();
        assert_eq!(same, rho);
    }

    #[test]
    fn text_form() {
        let params = harmonic_params();
        let prog = pseudopure_prep_program(&params).unwrap();
        let text = prog.to_string();
        assert!(text.contains("pulse x 1+2 pi/4\n"));
        assert!(text.contains("pulse y 1+2 pi\n"));
        assert!(text.contains("pulse y 1+2 -5pi/6\n"));
        assert!(text.contains("grad\n"));
        let back: PulseProgram = text.parse().unwrap();
        assert_eq!(back.events().len(), prog.events().len());
        for (a, b) in back.events().iter().zip(prog.events()) {
            match (a, b) {
                (Event::Pulse(x), Event::Pulse(y)) => {
                    assert!((x.flip_angle - y.flip_angle).abs() < 1e-15);
                    assert_eq!((x.axis, &x.targets), (y.axis, &y.targets));
                }
                _ => assert_eq!(a, b),
            }
        }
        assert_eq!(back.label(), "pseudopure");
        assert!("pulse z 1 pi".parse::<PulseProgram>().is_err());
        assert!("pulse x 0 pi".parse::<PulseProgram>().is_err());
        assert!("wait 3".parse::<PulseProgram>().is_err());
        assert_eq!(format_angle(0.3), "0.3");
        assert!("pulse x 1 inf".parse::<PulseProgram>().is_err());
    }

    #[test]
    fn real_values() {
        assert_eq!(parse_real("0.25"), Some(0.25));
        assert_eq!(parse_real("-2/9"), Some(-2.0 / 9.0));
        assert_eq!(parse_real("pi"), Some(PI));
        assert_eq!(parse_real("-5pi/6"), Some(-5.0 * PI / 6.0));
        assert_eq!(parse_real("2pi/32"), Some(2.0 * PI / 32.0));
        assert_eq!(parse_real("inf"), Some(f64::INFINITY));
        assert_eq!(parse_real("1/0"), None);
        assert_eq!(parse_real("pie"), None);
    }

    proptest! {
        #[test]
        fn compile_is_multiplicative(a in 0.0f64..6.0, b in 0.0f64..6.0) {
            let params = harmonic_params();
            let pa = qho_program(a, &params).unwrap();
            let pb = qho_program(b, &params).unwrap();
            let joined = compile_program(&pa.then(&pb).unwrap(), &params).unwrap();
            let product = compile_program(&pa, &params).unwrap().then(&compile_program(&pb, &params).unwrap());
            prop_assert!(max_abs_diff(joined.matrix(), product.matrix()) < 1e-13);
        }

        #[test]
        fn generated_delays_are_nonnegative(ot in 0.0f64..60.0) {
            let params = harmonic_params();
            let (ap, osc, drive) = aho_setup();
            for prog in [qho_program(ot, &params).unwrap(), aho_program(ot, &ap, &osc, &drive).unwrap()] {
                for e in prog.events() {
                    if let Event::Delay(d) = e {
                        prop_assert!(d.duration >= 0.0);
                    }
                }
            }
        }

        #[test]
        fn text_roundtrip_preserves_propagator(ot in 0.0f64..6.3) {
            let params = harmonic_params();
            let prog = qho_program(ot, &params).unwrap();
            let back: PulseProgram = prog.to_string().parse().unwrap();
            prop_assert_eq!(back.omega_t(), Some(ot));
            let d = max_abs_diff(
                compile_program(&prog, &params).unwrap().matrix(),
                compile_program(&back, &params).unwrap().matrix(),
            );
            prop_assert!(d < 1e-15);
        }
    }
}
