//! Experiment configs, the prepare-evolve-read pipeline over a T grid, and
//! output emission.
//!
//! Configs are flat `[section]` / `key = value` text. Unknown sections and
//! keys are errors. Real values accept `pi` forms (`2pi/32`, `-4pi/9`) and
//! `inf`; amplitudes accept `1`, `i`, `-0.5i`, `0.3+0.4i`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::encoding::{self, average_hamiltonian, pushforward_state, Encoding, EncodingKind};
use crate::error::{Error, Result};
use crate::linalg::{self, phase_invariant_distance, ComplexMatrix, DensityMatrix, StateVector, Unitary};
use crate::oscillator::{driven_hamiltonian, exact_propagator, DriveSpec, OscillatorSpec};
use crate::program::{self, parse_real, Event, PulseProgram};
use crate::readout::{self, frequency_content, FrequencyReport, PeakSeries, LINE_NAMES, SPIN_NAMES};
use crate::spin::{self, PulseEvent, RelaxationTimes, SpinSystemParams};

/// Overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "NMRSIM_OUT_DIR";

pub const DEFAULT_J_HZ: f64 = 5.7;
pub const DEFAULT_DELTA_NU_HZ: f64 = 226.0;
pub const DEFAULT_OMEGA: f64 = 2.0 * std::f64::consts::PI;

/// Oracle tolerance for the harmonic sequence.
pub const QHO_ORACLE_TOL: f64 = 1e-9;
/// Oracle tolerance for the driven anharmonic sequence.
pub const AHO_ORACLE_TOL: f64 = 1e-6;
pub const STATIC_TOL: f64 = 1e-6;
pub const CLOSED_FORM_TOL: f64 = 1e-12;
pub const POPULATION_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    /// Harmonic oscillator through the refocusing sequence on both spins.
    Harmonic,
    /// Driven anharmonic oscillator through the spin-2 sequence.
    Driven,
    /// Closed-form generator checks, no time evolution.
    HamiltonianCheck,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::Harmonic => "harmonic",
            ExperimentKind::Driven => "driven",
            ExperimentKind::HamiltonianCheck => "hamiltonian-check",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preparation {
    /// The encoded state itself, as a normalised projector.
    Pure,
    /// Thermal state through the pseudopure preparation, then a Householder
    /// map from `|uu>` onto the encoded state.
    Pseudopure,
}

/// Grid over the dimensionless phase `Omega T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn omega_t(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.start + self.step * k as f64).collect()
    }

    pub fn end(&self) -> f64 {
        self.start + self.step * (self.count.saturating_sub(1)) as f64
    }
}

/// Self-checks a run performs on its own output.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExpectSpec {
    /// Every line's oscillating power fraction below [`STATIC_TOL`].
    pub static_lines: bool,
    /// Signal name to the multiples of `Omega` its oscillation must sit in.
    pub signals: Vec<(String, Vec<f64>)>,
    pub min_share: Option<f64>,
    /// Population 0 oscillates at `|rabi|` within this many bins.
    pub rabi_bins: Option<f64>,
    /// Fitted population-0 decay rate within this relative error of `1/T2`.
    pub decay_tolerance: Option<f64>,
    /// Largest allowed excursion of any level population.
    pub constant_populations: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub description: String,
    pub kind: ExperimentKind,
    pub params: SpinSystemParams,
    pub oscillator: OscillatorSpec,
    pub drive: Option<DriveSpec>,
    pub encoding: Encoding,
    pub initial: Vec<Complex64>,
    pub preparation: Preparation,
    pub read: Option<PulseEvent>,
    pub grid: GridSpec,
    pub relaxation: bool,
    pub output_dir: PathBuf,
    pub stem: String,
    pub expect: ExpectSpec,
}

impl ExperimentConfig {
    pub fn levels(&self) -> usize {
        self.oscillator.levels
    }

    /// Output directory after the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }
}

const KEYS: &[(&str, &[&str])] = &[
    ("experiment", &["name", "kind", "description"]),
    ("system", &["j_hz", "delta_nu_hz", "receiver"]),
    ("oscillator", &["omega", "mu"]),
    ("drive", &["level", "rabi"]),
    ("encoding", &["kind", "spins"]),
    ("state", &["amplitudes", "preparation"]),
    ("read", &["pulse"]),
    ("grid", &["start", "step", "count"]),
    ("relaxation", &["enabled", "t1", "t2"]),
    ("output", &["dir", "stem"]),
    ("expect", &["static", "min_share", "rabi_bins", "decay_tolerance", "constant_populations"]),
];

fn expect_signal_names() -> Vec<String> {
    let mut names: Vec<String> = LINE_NAMES.iter().chain(SPIN_NAMES.iter()).map(|s| s.to_string()).collect();
    names.extend((0..16).map(|k| format!("pop{k}")));
    names
}

#[derive(Debug)]
struct Entry {
    value: String,
    line: usize,
}

struct Fields(BTreeMap<(String, String), Entry>);

impl Fields {
    fn take(&mut self, section: &str, key: &str) -> Option<Entry> {
        self.0.remove(&(section.to_string(), key.to_string()))
    }

    fn real(&mut self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.take(section, key) {
            None => Ok(default),
            Some(e) => parse_real(&e.value).ok_or_else(|| field_err(section, key, format!("`{}` is not a number", e.value))),
        }
    }

    fn count(&mut self, section: &str, key: &str, default: usize) -> Result<usize> {
        match self.take(section, key) {
            None => Ok(default),
            Some(e) => e
                .value
                .parse()
                .map_err(|_| field_err(section, key, format!("`{}` is not a non-negative integer", e.value))),
        }
    }

    fn flag(&mut self, section: &str, key: &str) -> Result<bool> {
        match self.take(section, key).as_ref().map(|e| e.value.as_str()) {
            None | Some("false") => Ok(false),
            Some("true") => Ok(true),
            Some(other) => Err(field_err(section, key, format!("`{other}` is not true/false"))),
        }
    }

    fn text(&mut self, section: &str, key: &str) -> Option<String> {
        self.take(section, key).map(|e| e.value)
    }
}

fn field_err(section: &str, key: &str, msg: impl Into<String>) -> Error {
    Error::ConfigField {
        field: format!("{section}.{key}"),
        msg: msg.into(),
    }
}

/// `1`, `i`, `-i`, `0.5i`, `0.3+0.4i`, `1-2i`.
pub fn parse_complex(s: &str) -> Option<Complex64> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let Some(body) = s.strip_suffix('i') else {
        return Some(Complex64::new(parse_real(&s)?, 0.0));
    };
    let split = body
        .char_indices()
        .rev()
        .find(|&(k, c)| (c == '+' || c == '-') && k > 0 && !body[..k].ends_with(['e', 'E']))
        .map(|(k, _)| k);
    let (re, im) = match split {
        Some(k) => (parse_real(&body[..k])?, &body[k..]),
        None => (0.0, body),
    };
    let im = match im {
        "" | "+" => 1.0,
        "-" => -1.0,
        x => parse_real(x)?,
    };
    Some(Complex64::new(re, im))
}

fn parse_fields(text: &str) -> Result<Fields> {
    let mut section: Option<String> = None;
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config {
                    line: line_no,
                    msg: format!("malformed section header `{line}`"),
                })?
                .trim();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                return Err(Error::Config {
                    line: line_no,
                    msg: format!("unknown section `[{name}]`"),
                });
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
            line: line_no,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section.clone().ok_or_else(|| Error::Config {
            line: line_no,
            msg: format!("`{key}` appears before any section"),
        })?;
        let allowed = KEYS.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        let signal_key = sec == "expect" && expect_signal_names().iter().any(|n| n == key);
        if !allowed.contains(&key) && !signal_key {
            return Err(Error::Config {
                line: line_no,
                msg: format!("unknown key `{key}` in [{sec}]"),
            });
        }
        let prev = map.insert(
            (sec.clone(), key.to_string()),
            Entry {
                value: value.to_string(),
                line: line_no,
            },
        );
        if let Some(prev) = prev {
            return Err(Error::Config {
                line: line_no,
                msg: format!("`{sec}.{key}` already set on line {}", prev.line),
            });
        }
    }
    Ok(Fields(map))
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut f = parse_fields(text)?;

    let name = f.text("experiment", "name").unwrap_or_else(|| "experiment".to_string());
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(field_err("experiment", "name", "use letters, digits, `_` or `-`"));
    }
    let description = f.text("experiment", "description").unwrap_or_default();
    let kind = match f.text("experiment", "kind").as_deref() {
        None | Some("harmonic") => ExperimentKind::Harmonic,
        Some("driven") => ExperimentKind::Driven,
        Some("hamiltonian-check") => ExperimentKind::HamiltonianCheck,
        Some(other) => return Err(field_err("experiment", "kind", format!("unknown kind `{other}`"))),
    };

    let j_hz = f.real("system", "j_hz", DEFAULT_J_HZ)?;
    let delta_nu = f.real("system", "delta_nu_hz", DEFAULT_DELTA_NU_HZ)?;
    let mut params = SpinSystemParams::two_proton(delta_nu, j_hz).map_err(|e| field_err("system", "j_hz", e.to_string()))?;
    let receiver = f.take("system", "receiver");

    let omega = f.real("oscillator", "omega", DEFAULT_OMEGA)?;
    let mu = f.real("oscillator", "mu", 0.0)?;

    let enc_kind = match f.text("encoding", "kind").as_deref() {
        None | Some("gray") => EncodingKind::Gray,
        Some("binary") => EncodingKind::Binary,
        Some(other) => return Err(field_err("encoding", "kind", format!("unknown encoding `{other}`"))),
    };
    let spins = f.count("encoding", "spins", 2)?;
    let encoding = Encoding::new(enc_kind, spins).map_err(|e| field_err("encoding", "spins", e.to_string()))?;
    let oscillator = OscillatorSpec::new(encoding.dim(), omega, mu).map_err(|e| field_err("oscillator", "omega", e.to_string()))?;

    let drive_level = f.take("drive", "level");
    let drive_rabi = f.take("drive", "rabi");
    let drive = match (drive_level, drive_rabi) {
        (None, None) => None,
        (level, rabi) => {
            let level = match level {
                None => 0,
                Some(e) => e.value.parse().map_err(|_| field_err("drive", "level", format!("`{}` is not a level", e.value)))?,
            };
            let rabi = match rabi {
                None => return Err(field_err("drive", "rabi", "a drive needs a Rabi frequency")),
                Some(e) => parse_real(&e.value).ok_or_else(|| field_err("drive", "rabi", format!("`{}` is not a number", e.value)))?,
            };
            if level + 1 >= oscillator.levels {
                return Err(field_err("drive", "level", format!("no level {} above {level}", level + 1)));
            }
            Some(DriveSpec { level, rabi })
        }
    };

    let initial = match f.text("state", "amplitudes") {
        None => vec![Complex64::new(1.0, 0.0)],
        Some(list) => list
            .split(',')
            .map(|a| parse_complex(a).ok_or_else(|| field_err("state", "amplitudes", format!("`{}` is not an amplitude", a.trim()))))
            .collect::<Result<Vec<_>>>()?,
    };
    if initial.len() > oscillator.levels {
        return Err(field_err(
            "state",
            "amplitudes",
            format!("{} amplitudes for {} levels", initial.len(), oscillator.levels),
        ));
    }
    if initial.iter().map(|z| z.norm_sqr()).sum::<f64>() < 1e-24 {
        return Err(field_err("state", "amplitudes", "initial state has zero norm"));
    }
    let preparation = match f.text("state", "preparation").as_deref() {
        None | Some("pure") => Preparation::Pure,
        Some("pseudopure") => Preparation::Pseudopure,
        Some(other) => return Err(field_err("state", "preparation", format!("unknown preparation `{other}`"))),
    };

    let read = match f.text("read", "pulse") {
        None => None,
        Some(v) if v == "none" => None,
        Some(v) => {
            let prog: PulseProgram = format!("pulse {v}")
                .parse()
                .map_err(|e: Error| field_err("read", "pulse", e.to_string()))?;
            match prog.events() {
                [Event::Pulse(p)] => Some(p.clone()),
                _ => return Err(field_err("read", "pulse", "expected `<axis> <spins> <angle>`")),
            }
        }
    };

    let grid = GridSpec {
        start: f.real("grid", "start", 0.0)?,
        step: f.real("grid", "step", 2.0 * std::f64::consts::PI / 32.0)?,
        count: f.count("grid", "count", 64)?,
    };
    if grid.count < 2 {
        return Err(field_err("grid", "count", "need at least 2 grid points"));
    }
    if !(grid.step > 0.0) || !grid.step.is_finite() {
        return Err(field_err("grid", "step", "step must be positive"));
    }
    if !(grid.start >= 0.0) || !grid.start.is_finite() {
        return Err(field_err("grid", "start", "start must be >= 0"));
    }

    let relaxation = f.flag("relaxation", "enabled")?;
    let t1 = f.real("relaxation", "t1", f64::INFINITY)?;
    let t2 = f.take("relaxation", "t2");
    if let Some(t2) = t2 {
        let t2 = parse_real(&t2.value).ok_or_else(|| field_err("relaxation", "t2", format!("`{}` is not a number", t2.value)))?;
        let times = RelaxationTimes::new(t1, t2).map_err(|e| field_err("relaxation", "t2", e.to_string()))?;
        params = params.with_relaxation(times);
    } else if relaxation {
        return Err(field_err("relaxation", "t2", "relaxation enabled without T2"));
    }

    let output_dir = PathBuf::from(f.text("output", "dir").unwrap_or_else(|| "out".to_string()));
    let stem = f.text("output", "stem").unwrap_or_else(|| name.clone());

    let mut expect = ExpectSpec {
        static_lines: f.flag("expect", "static")?,
        ..ExpectSpec::default()
    };
    for (field, slot) in [
        ("min_share", &mut expect.min_share),
        ("rabi_bins", &mut expect.rabi_bins),
        ("decay_tolerance", &mut expect.decay_tolerance),
        ("constant_populations", &mut expect.constant_populations),
    ] {
        if let Some(e) = f.take("expect", field) {
            *slot = Some(parse_real(&e.value).ok_or_else(|| field_err("expect", field, format!("`{}` is not a number", e.value)))?);
        }
    }
    for name in expect_signal_names() {
        if let Some(e) = f.take("expect", &name) {
            let multiples = e
                .value
                .split(',')
                .map(|m| parse_real(m).ok_or_else(|| field_err("expect", &name, format!("`{}` is not a number", m.trim()))))
                .collect::<Result<Vec<_>>>()?;
            expect.signals.push((name, multiples));
        }
    }
    debug_assert!(f.0.is_empty(), "unconsumed config keys: {:?}", f.0.keys());

    // frame and sequence preconditions
    let receiver_value = match receiver {
        Some(e) if e.value != "auto" => {
            Some(parse_real(&e.value).ok_or_else(|| field_err("system", "receiver", format!("`{}` is not a number", e.value)))?)
        }
        _ => None,
    };
    match kind {
        ExperimentKind::Harmonic => {
            if mu != 0.0 || drive.is_some() {
                return Err(field_err("oscillator", "mu", "harmonic runs take mu = 0 and no drive"));
            }
            if spins != 2 {
                return Err(field_err("encoding", "spins", "sequence runs use 2 spins"));
            }
            let r = receiver_value.unwrap_or(params.resonance(1));
            params = params.with_receiver(r);
            program::qho_timing(grid.end(), &params).map_err(|e| field_err("system", "j_hz", e.to_string()))?;
            program::qho_program(grid.end(), &params).map_err(|e| field_err("system", "receiver", e.to_string()))?;
        }
        ExperimentKind::Driven => {
            let d = drive.ok_or_else(|| field_err("drive", "rabi", "driven runs need a [drive] section"))?;
            if spins != 2 {
                return Err(field_err("encoding", "spins", "sequence runs use 2 spins"));
            }
            let r = receiver_value.unwrap_or(program::aho_receiver(&params));
            params = params.with_receiver(r);
            program::aho_program(grid.end(), &params, &oscillator, &d).map_err(|e| field_err("drive", "rabi", e.to_string()))?;
        }
        ExperimentKind::HamiltonianCheck => {
            if let Some(r) = receiver_value {
                params = params.with_receiver(r);
            }
        }
    }
    if kind != ExperimentKind::HamiltonianCheck {
        if enc_kind != EncodingKind::Gray {
            return Err(field_err("encoding", "kind", "sequence runs use the Gray encoding"));
        }
        if preparation == Preparation::Pseudopure {
            program::pseudopure_prep_program(&params).map_err(|e| field_err("state", "preparation", e.to_string()))?;
        }
        if let Some(r) = &read {
            r.rotation(2).map_err(|e| field_err("read", "pulse", e.to_string()))?;
        }
    }

    Ok(ExperimentConfig {
        name,
        description,
        kind,
        params,
        oscillator,
        drive,
        encoding,
        initial,
        preparation,
        read,
        grid,
        relaxation,
        output_dir,
        stem,
        expect,
    })
}

/// Encoded initial state, normalised.
pub fn initial_state(cfg: &ExperimentConfig) -> Result<StateVector> {
    let mut amps = cfg.initial.clone();
    amps.resize(cfg.levels(), Complex64::new(0.0, 0.0));
    pushforward_state(&StateVector::new(&amps)?, &cfg.encoding)
}

/// Reflection `W` with `W |uu> = psi` up to a global phase.
fn householder_from_up(psi: &StateVector) -> Unitary {
    let a = psi.amplitudes();
    let dim = a.len();
    let phase = if a[0].norm() > 0.0 { a[0] / a[0].norm() } else { Complex64::new(1.0, 0.0) };
    let mut v = -a.map(|z| z / phase);
    v[0] += Complex64::new(1.0, 0.0);
    let vv = v.norm_squared();
    if vv < 1e-30 {
        return Unitary::identity(dim);
    }
    let w = linalg::identity(dim) - (&v * v.adjoint()) * Complex64::new(2.0 / vv, 0.0);
    Unitary::new(w).expect("Householder reflection is unitary")
}

/// Starting density matrix for each grid point.
pub fn prepare(cfg: &ExperimentConfig) -> Result<DensityMatrix> {
    let psi = initial_state(cfg)?;
    match cfg.preparation {
        Preparation::Pure => Ok(psi.projector()),
        Preparation::Pseudopure => {
            let prep = program::pseudopure_prep_program(&cfg.params)?;
            let dev = program::execute_program(&prep, &spin::thermal_deviation(&cfg.params), &cfg.params, false)?;
            let d = linalg::traceless_part(dev.matrix());
            let dim = cfg.params.dim() as f64;
            // |uu><uu| has traceless (0,0) entry 1 - 1/dim
            let scale = d[(0, 0)].re / (1.0 - 1.0 / dim);
            if !(scale > 0.0) {
                return Err(Error::Analysis("preparation did not produce a pseudopure |uu> state".into()));
            }
            let normalised = linalg::identity(cfg.params.dim()) * Complex64::new(1.0 / dim, 0.0) + d * Complex64::new(1.0 / scale, 0.0);
            let w = householder_from_up(&psi);
            DensityMatrix::new(w.conjugate(&normalised))
        }
    }
}

/// Program for grid phase `omega_t`.
pub fn program_at(cfg: &ExperimentConfig, omega_t: f64) -> Result<PulseProgram> {
    match cfg.kind {
        ExperimentKind::Harmonic => program::qho_program(omega_t, &cfg.params),
        ExperimentKind::Driven => {
            let d = cfg.drive.ok_or(Error::InvalidParams("driven run without drive".into()))?;
            program::aho_program(omega_t, &cfg.params, &cfg.oscillator, &d)
        }
        ExperimentKind::HamiltonianCheck => Err(Error::InvalidParams("hamiltonian checks have no program".into())),
    }
}

/// Level Hamiltonian the sequence is meant to simulate, at unit frequency scale of the config.
pub fn target_hamiltonian(cfg: &ExperimentConfig) -> Result<ComplexMatrix> {
    let drive = cfg.drive.unwrap_or(DriveSpec { level: 0, rabi: 0.0 });
    driven_hamiltonian(&cfg.oscillator, &drive)
}

/// Prepare, evolve and read at every grid point.
pub fn assemble_series(cfg: &ExperimentConfig) -> Result<PeakSeries> {
    let start = prepare(cfg)?;
    let omega = cfg.oscillator.omega;
    let mut t = Vec::with_capacity(cfg.grid.count);
    let mut t_phys = Vec::with_capacity(cfg.grid.count);
    let mut peaks = Vec::with_capacity(cfg.grid.count);
    let mut pops = Vec::with_capacity(cfg.grid.count);
    for ot in cfg.grid.omega_t() {
        let prog = program_at(cfg, ot)?;
        let evolved = program::execute_program(&prog, &start, &cfg.params, cfg.relaxation)?;
        pops.push(readout::level_populations(&evolved, &cfg.encoding)?);
        let read = match &cfg.read {
            Some(p) => spin::apply_pulse(&evolved, p)?,
            None => evolved,
        };
        peaks.push(readout::extract_peaks(&read)?);
        t.push(ot / omega);
        t_phys.push(prog.duration());
    }
    PeakSeries::new(t, t_phys, peaks, Some(pops))
}

/// One self-check of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: &'static str,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            relation: "<",
            threshold,
            passed: value < threshold,
        }
    }

    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            relation: "<=",
            threshold,
            passed: value <= threshold,
        }
    }

    pub fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            relation: ">",
            threshold,
            passed: value > threshold,
        }
    }
}

/// Everything a run produces besides files.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub series: Option<PeakSeries>,
    pub frequencies: Option<FrequencyReport>,
    pub info: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Key-value run report.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(s, "experiment: {}", c.name);
        let _ = writeln!(s, "kind: {}", c.kind.label());
        let _ = writeln!(s, "encoding: {}", c.encoding.kind().label());
        let _ = writeln!(s, "spins: {}", c.encoding.n_spins());
        if let Some(series) = &self.series {
            let _ = writeln!(s, "samples: {}", series.len());
        }
        for (k, v) in &self.info {
            let _ = writeln!(s, "{k}: {v}");
        }
        for chk in &self.checks {
            let _ = writeln!(s, "check.{}.value: {:.9e}", chk.name, chk.value);
            let _ = writeln!(s, "check.{}.requires: {} {:e}", chk.name, chk.relation, chk.threshold);
            let _ = writeln!(s, "check.{}.passed: {}", chk.name, chk.passed);
        }
        let _ = writeln!(s, "status: {}", if self.passed() { "pass" } else { "fail" });
        s
    }
}

fn max_oracle_distance(cfg: &ExperimentConfig, generator: &ComplexMatrix, scale: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for ot in cfg.grid.omega_t() {
        let u = program::compile_program(&program_at(cfg, ot)?, &cfg.params)?;
        let target = exact_propagator(generator, ot / scale)?;
        worst = worst.max(phase_invariant_distance(&u, &target)?.value);
    }
    Ok(worst)
}

fn sequence_checks(cfg: &ExperimentConfig, out: &mut RunOutcome) -> Result<()> {
    let omega = cfg.oscillator.omega;
    let oracle = average_hamiltonian(&target_hamiltonian(cfg)?, &cfg.encoding)?;
    let tol = match cfg.kind {
        ExperimentKind::Harmonic => QHO_ORACLE_TOL,
        _ => AHO_ORACLE_TOL,
    };
    out.checks.push(Check::below("oracle_distance", max_oracle_distance(cfg, &oracle, omega)?, tol));
    if cfg.kind == ExperimentKind::Driven {
        let d = cfg.drive.expect("validated");
        let realised = program::aho_sequence_generator(omega, cfg.oscillator.mu, d.rabi);
        out.checks.push(Check::below(
            "realised_generator_distance",
            max_oracle_distance(cfg, &realised, omega)?,
            QHO_ORACLE_TOL,
        ));
    }

    let series = out.series.as_ref().expect("series assembled");
    let trace = prepare(cfg)?.trace().re;
    let mut worst_sum: f64 = 0.0;
    for k in 0..series.len() {
        let s: f64 = (0..series.levels()).map(|l| series.population(l).expect("level")[k]).sum();
        worst_sum = worst_sum.max((s - trace).abs());
    }
    out.checks.push(Check::below("population_sum", worst_sum, POPULATION_SUM_TOL));

    let freq = out.frequencies.as_ref().expect("frequencies computed");
    let bin_width = freq.bin_width;
    out.info.push(("bin_width_over_omega".into(), format!("{:.9e}", bin_width / omega)));
    let e = &cfg.expect;
    if e.static_lines {
        let worst = LINE_NAMES
            .iter()
            .map(|n| freq.get(n).expect("line").spectrum.oscillating_fraction())
            .fold(0.0, f64::max);
        out.checks.push(Check::below("static_lines", worst, STATIC_TOL));
    }
    let min_share = e.min_share.unwrap_or(0.99);
    for (name, multiples) in &e.signals {
        let sig = freq.get(name).ok_or_else(|| Error::Analysis(format!("no signal `{name}`")))?;
        let bins: Vec<usize> = multiples.iter().map(|m| sig.spectrum.bin_of(m * omega)).collect();
        out.checks.push(Check::above(format!("share.{name}"), sig.spectrum.share_of_oscillation(&bins), min_share));
    }
    if let Some(tol_bins) = e.rabi_bins {
        let rabi = cfg.drive.map_or(0.0, |d| d.rabi.abs());
        let sp = &freq.get("pop0").expect("population spectrum").spectrum;
        let dominant = sp.dominant_bin().map_or(0.0, |b| sp.frequency(b));
        out.info.push(("pop0.dominant_rad_s".into(), format!("{dominant:.9e}")));
        out.info.push(("rabi_rad_s".into(), format!("{rabi:.9e}")));
        out.checks.push(Check::at_most("rabi_bin_error", (dominant - rabi).abs() / bin_width, tol_bins));
    }
    if let Some(tol) = e.decay_tolerance {
        let t2 = cfg.params.relaxation().map_or(f64::INFINITY, |r| r.t2);
        let fit = readout::fit_population_envelope(series, 0)?;
        out.info.push(("fit.rate_per_s".into(), format!("{:.9e}", fit.rate)));
        out.info.push(("fit.amplitude".into(), format!("{:.9e}", fit.amplitude)));
        out.info.push(("fit.frequency_rad_per_T".into(), format!("{:.9e}", fit.frequency)));
        out.info.push(("fit.rms_residual".into(), format!("{:.9e}", fit.rms_residual)));
        let expected = if cfg.relaxation { 1.0 / t2 } else { 0.0 };
        out.info.push(("expected_rate_per_s".into(), format!("{expected:.9e}")));
        let err = if expected > 0.0 { (fit.rate - expected).abs() / expected } else { fit.rate.abs() };
        out.checks.push(Check::below("decay_rate_error", err, tol));
    }
    if let Some(tol) = e.constant_populations {
        let mut worst: f64 = 0.0;
        for l in 0..series.levels() {
            let p = series.population(l).expect("level");
            worst = worst.max(p.iter().map(|x| (x - p[0]).abs()).fold(0.0, f64::max));
        }
        out.checks.push(Check::below("population_drift", worst, tol));
    }
    Ok(())
}

fn closed_form_checks(cfg: &ExperimentConfig, out: &mut RunOutcome) -> Result<String> {
    let omega = cfg.oscillator.omega;
    let e = &cfg.encoding;
    let conj = encoding::conjugated_qho(e, omega)?;
    let closed = match e.kind() {
        EncodingKind::Gray => {
            if e.n_spins() != 2 {
                return Err(Error::InvalidParams("the Gray closed form is written for 2 spins".into()));
            }
            encoding::qho_closed_form(omega)
        }
        EncodingKind::Binary => encoding::coupling_free_closed_form(e.n_spins(), omega)?,
    };
    out.checks.push(Check::below(
        "closed_form_error",
        linalg::distance_mod_identity(&closed, &conj),
        CLOSED_FORM_TOL,
    ));
    if e.kind() == EncodingKind::Gray {
        if let Some(d) = cfg.drive {
            let h = driven_hamiltonian(&cfg.oscillator, &d)?;
            let want = average_hamiltonian(&h, e)?;
            let got = encoding::driven_aho_closed_form(omega, cfg.oscillator.mu, d.rabi);
            out.checks.push(Check::below(
                "driven_closed_form_error",
                linalg::distance_mod_identity(&got, &want),
                CLOSED_FORM_TOL,
            ));
        }
    }
    let mut csv = String::from("basis,level,conjugated,closed_form\n");
    for b in 0..e.dim() {
        let _ = writeln!(csv, "{b},{},{},{}", e.level_of(b), conj[(b, b)].re, closed[(b, b)].re);
    }
    Ok(csv)
}

/// Runs a config without touching the filesystem. Returns the outcome and
/// the CSV text.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<(RunOutcome, String)> {
    let mut out = RunOutcome {
        config: cfg.clone(),
        series: None,
        frequencies: None,
        info: Vec::new(),
        checks: Vec::new(),
    };
    let csv = match cfg.kind {
        ExperimentKind::HamiltonianCheck => closed_form_checks(cfg, &mut out)?,
        _ => {
            let series = assemble_series(cfg)?;
            out.frequencies = Some(frequency_content(&series)?);
            let csv = series.to_csv()?;
            out.series = Some(series);
            sequence_checks(cfg, &mut out)?;
            csv
        }
    };
    Ok((out, csv))
}

/// Replaces `path` in one step: write a sibling temp file, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunFiles {
    pub csv: PathBuf,
    pub report: PathBuf,
    pub frequencies: Option<PathBuf>,
    pub program: Option<PathBuf>,
}

/// Evaluates a config and writes its outputs under `dir`.
pub fn run_experiment_in(cfg: &ExperimentConfig, dir: &Path) -> Result<(RunOutcome, RunFiles)> {
    let (outcome, csv) = evaluate(cfg)?;
    let stem = &cfg.stem;
    let files = RunFiles {
        csv: dir.join(format!("{stem}.csv")),
        report: dir.join(format!("{stem}.report.txt")),
        frequencies: outcome.frequencies.as_ref().map(|_| dir.join(format!("{stem}.freq.txt"))),
        program: outcome.series.as_ref().map(|_| dir.join(format!("{stem}.program.txt"))),
    };
    write_atomic(&files.csv, csv.as_bytes())?;
    if let (Some(path), Some(freq)) = (&files.frequencies, &outcome.frequencies) {
        write_atomic(path, freq.to_string().as_bytes())?;
    }
    if let Some(path) = &files.program {
        let mut text = String::new();
        if cfg.preparation == Preparation::Pseudopure {
            text += &program::pseudopure_prep_program(&cfg.params)?.to_string();
        }
        text += &program_at(cfg, cfg.grid.end())?.to_string();
        write_atomic(path, text.as_bytes())?;
    }
    write_atomic(&files.report, outcome.report().as_bytes())?;
    Ok((outcome, files))
}

/// Writes into the configured directory, or `NMRSIM_OUT_DIR` when set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunOutcome, RunFiles)> {
    run_experiment_in(cfg, &cfg.resolved_output_dir())
}

/// A config shipped with the crate.
#[derive(Debug, Clone, Copy)]
pub struct Canonical {
    pub name: &'static str,
    pub text: &'static str,
}

impl Canonical {
    pub fn config(&self) -> ExperimentConfig {
        parse_config(self.text).expect("shipped configs parse")
    }

    pub fn description(&self) -> String {
        self.config().description
    }
}

pub const CANONICAL: &[Canonical] = &[
    Canonical { name: "fig1a", text: include_str!("../configs/fig1a.conf") },
    Canonical { name: "fig1b", text: include_str!("../configs/fig1b.conf") },
    Canonical { name: "fig1c", text: include_str!("../configs/fig1c.conf") },
    Canonical { name: "fig1d", text: include_str!("../configs/fig1d.conf") },
    Canonical { name: "fig2", text: include_str!("../configs/fig2.conf") },
    Canonical { name: "fig2_relaxed", text: include_str!("../configs/fig2_relaxed.conf") },
    Canonical { name: "fig2_level2", text: include_str!("../configs/fig2_level2.conf") },
    Canonical { name: "gray_n2", text: include_str!("../configs/gray_n2.conf") },
    Canonical { name: "binary_n2", text: include_str!("../configs/binary_n2.conf") },
    Canonical { name: "binary_n3", text: include_str!("../configs/binary_n3.conf") },
    Canonical { name: "binary_n4", text: include_str!("../configs/binary_n4.conf") },
];

pub fn canonical(name: &str) -> Option<&'static Canonical> {
    CANONICAL.iter().find(|c| c.name == name)
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn empty_config_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.kind, ExperimentKind::Harmonic);
        assert_eq!(c.params.j(0, 1), 5.7);
        assert!((c.params.resonance(0) - 2.0 * PI * 226.0).abs() < 1e-12);
        assert_eq!(c.encoding.kind(), EncodingKind::Gray);
        assert!(!c.relaxation);
        assert_eq!(c.oscillator.omega, 2.0 * PI);
        assert_eq!(c.grid.count, 64);
        assert_eq!(c.initial, vec![Complex64::new(1.0, 0.0)]);
        assert_eq!(c.preparation, Preparation::Pure);
        assert!(c.read.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(parse_config("[system]\nj = 5\n"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(parse_config("[sistem]\n"), Err(Error::Config { line: 1, .. })));
        assert!(parse_config("j_hz = 5\n").is_err());
        assert!(parse_config("[system]\nj_hz = 5\nj_hz = 6\n").is_err());
        assert!(parse_config("[expect]\nspin3 = 1\n").is_err());
    }

    #[test]
    fn timing_errors_surface_at_parse() {
        let err = parse_config("[system]\nj_hz = 0\n").unwrap_err();
        assert!(matches!(err, Error::ConfigField { ref field, .. } if field == "system.j_hz"), "{err}");
        let strong = parse_config("[system]\nj_hz = 300\n").unwrap_err();
        assert!(strong.to_string().contains("negative delay"), "{strong}");
    }

    #[test]
    fn field_errors() {
        assert!(parse_config("[grid]\ncount = 1\n").is_err());
        assert!(parse_config("[state]\namplitudes = 0, 0\n").is_err());
        assert!(parse_config("[state]\namplitudes = 1,0,0,0,1\n").is_err());
        assert!(parse_config("[relaxation]\nenabled = true\n").is_err());
        assert!(parse_config("[relaxation]\nt1 = 1\nt2 = 3\n").is_err());
        assert!(parse_config("[experiment]\nkind = driven\n").is_err());
        assert!(parse_config("[read]\npulse = y 3 pi/2\n").is_err());
    }

    #[test]
    fn complex_values() {
        let z = |re, im| Some(Complex64::new(re, im));
        assert_eq!(parse_complex("1"), z(1.0, 0.0));
        assert_eq!(parse_complex("i"), z(0.0, 1.0));
        assert_eq!(parse_complex("-i"), z(0.0, -1.0));
        assert_eq!(parse_complex("0.5i"), z(0.0, 0.5));
        assert_eq!(parse_complex("0.3+0.4i"), z(0.3, 0.4));
        assert_eq!(parse_complex("1 - 2i"), z(1.0, -2.0));
        assert_eq!(parse_complex("1e-3-1e-3i"), z(1e-3, -1e-3));
        assert_eq!(parse_complex("x"), None);
    }

    #[test]
    fn canonical_configs_parse() {
        for c in CANONICAL {
            let cfg = c.config();
            assert_eq!(cfg.name, c.name);
            assert!(!cfg.description.is_empty());
        }
        let b = canonical("fig1b").unwrap().config();
        assert_eq!(b.initial.len(), 3);
        assert_eq!(b.initial[2], Complex64::new(0.0, 1.0));
        assert!(b.read.is_some());
    }

    #[test]
    fn pseudopure_matches_pure() {
        let mut cfg = canonical("fig1c").unwrap().config();
        let pure = prepare(&cfg).unwrap();
        cfg.preparation = Preparation::Pseudopure;
        let pp = prepare(&cfg).unwrap();
        assert!(linalg::max_abs_diff(pure.matrix(), pp.matrix()) < 1e-12);

        let w = householder_from_up(&StateVector::basis(4, 0));
        assert_eq!(w.matrix(), &linalg::identity(4));
    }

    #[test]
    fn eigenstate_lines_do_not_move() {
        let mut cfg = canonical("fig1a").unwrap().config();
        for read in [None, Some(PulseEvent::new(PI / 2.0, spin::PulseAxis::Y, &[0, 1]))] {
            cfg.read = read;
            let series = assemble_series(&cfg).unwrap();
            let mut lit = 0;
            for k in 0..4 {
                let mags: Vec<f64> = series.line(k).iter().map(|z| z.norm()).collect();
                let mean = mags.iter().sum::<f64>() / mags.len() as f64;
                let sd = (mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / mags.len() as f64).sqrt();
                if mean > 1e-12 {
                    lit += 1;
                    assert!(sd / mean < 1e-10, "line {k}: {}", sd / mean);
                } else {
                    assert!(sd < 1e-15);
                }
            }
            assert_eq!(lit, if cfg.read.is_some() { 4 } else { 0 });
        }
    }

    #[test]
    fn infinite_t2_matches_relaxation_off() {
        let mut cfg = canonical("fig1c").unwrap().config();
        let off = assemble_series(&cfg).unwrap();
        cfg.params = cfg.params.clone().with_relaxation(RelaxationTimes::t2_only(f64::INFINITY).unwrap());
        cfg.relaxation = true;
        let on = assemble_series(&cfg).unwrap();
        for (a, b) in off.peaks().iter().zip(on.peaks()) {
            for k in 0..4 {
                assert!((a.lines[k] - b.lines[k]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn outputs_are_written_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = canonical("binary_n3").unwrap().config();
        let (outcome, files) = run_experiment_in(&cfg, dir.path()).unwrap();
        assert!(outcome.passed());
        let report = fs::read_to_string(&files.report).unwrap();
        assert!(report.contains("status: pass"));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
    }
}
