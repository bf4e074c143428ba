//! The measurement side: peak amplitudes, level populations, T-series,
//! frequency content and decay-envelope fits.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::encoding::{pullback_density, Encoding};
use crate::error::{Error, Result};
use crate::linalg::DensityMatrix;

/// Density-matrix index pairs of the four single-quantum lines, in
/// [`PeakSet`] order: spin 1 (`uu-du`, `ud-dd`), then spin 2 (`uu-ud`, `du-dd`).
pub const LINE_INDICES: [(usize, usize); 4] = [(0, 2), (1, 3), (0, 1), (2, 3)];
pub const LINE_NAMES: [&str; 4] = ["spin1_uu_du", "spin1_ud_dd", "spin2_uu_ud", "spin2_du_dd"];
pub const SPIN_NAMES: [&str; 2] = ["spin1", "spin2"];

/// Single-quantum amplitudes of a two-spin density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakSet {
    pub lines: [Complex64; 4],
}

impl PeakSet {
    pub fn spin1(&self) -> [Complex64; 2] {
        [self.lines[0], self.lines[1]]
    }

    pub fn spin2(&self) -> [Complex64; 2] {
        [self.lines[2], self.lines[3]]
    }

    /// Whole peak of one spin: the sum of its two lines.
    pub fn spin_total(&self, spin: usize) -> Complex64 {
        self.lines[2 * spin] + self.lines[2 * spin + 1]
    }
}

pub fn extract_peaks(rho: &DensityMatrix) -> Result<PeakSet> {
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            actual: rho.dim(),
        });
    }
    let m = rho.matrix();
    Ok(PeakSet {
        lines: LINE_INDICES.map(|(r, c)| m[(r, c)]),
    })
}

/// Oscillator-level populations: the diagonal of the pulled-back state.
pub fn level_populations(rho: &DensityMatrix, e: &Encoding) -> Result<Vec<f64>> {
    let back = pullback_density(rho, e)?;
    Ok(back.matrix().diagonal().iter().map(|z| z.re).collect())
}

fn check_grid(t: &[f64], what: &str) -> Result<()> {
    if t.len() < 2 {
        return Err(Error::Analysis(format!("{what} grid needs at least 2 points")));
    }
    let step = t[1] - t[0];
    if !(step > 0.0) {
        return Err(Error::Analysis(format!("{what} grid is not strictly increasing")));
    }
    for (k, w) in t.windows(2).enumerate() {
        let d = w[1] - w[0];
        if !(d > 0.0) || (d - step).abs() > 1e-9 * step {
            return Err(Error::Analysis(format!(
                "{what} grid is not uniform at sample {} (step {d:e} vs {step:e})",
                k + 1
            )));
        }
    }
    Ok(())
}

/// One row per point of the simulated-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakSeries {
    t: Vec<f64>,
    t_phys: Vec<f64>,
    peaks: Vec<PeakSet>,
    populations: Option<Vec<Vec<f64>>>,
}

impl PeakSeries {
    pub fn new(
        t: Vec<f64>,
        t_phys: Vec<f64>,
        peaks: Vec<PeakSet>,
        populations: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        check_grid(&t, "T")?;
        let n = t.len();
        if t_phys.len() != n || peaks.len() != n {
            return Err(Error::Analysis(format!(
                "series length mismatch: {} T, {} t_phys, {} peak sets",
                n,
                t_phys.len(),
                peaks.len()
            )));
        }
        if let Some(p) = &populations {
            let levels = p.first().map_or(0, Vec::len);
            if p.len() != n || p.iter().any(|row| row.len() != levels) {
                return Err(Error::Analysis("population rows do not match the grid".into()));
            }
        }
        Ok(PeakSeries {
            t,
            t_phys,
            peaks,
            populations,
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Simulated times `T` in seconds.
    pub fn t(&self) -> &[f64] {
        &self.t
    }

    /// Physical program duration behind each point, in seconds.
    pub fn t_phys(&self) -> &[f64] {
        &self.t_phys
    }

    pub fn step(&self) -> f64 {
        self.t[1] - self.t[0]
    }

    pub fn peaks(&self) -> &[PeakSet] {
        &self.peaks
    }

    pub fn line(&self, k: usize) -> Vec<Complex64> {
        self.peaks.iter().map(|p| p.lines[k]).collect()
    }

    pub fn spin_total(&self, spin: usize) -> Vec<Complex64> {
        self.peaks.iter().map(|p| p.spin_total(spin)).collect()
    }

    pub fn levels(&self) -> usize {
        self.populations
            .as_ref()
            .and_then(|p| p.first())
            .map_or(0, Vec::len)
    }

    pub fn population(&self, level: usize) -> Option<Vec<f64>> {
        let p = self.populations.as_ref()?;
        if level >= self.levels() {
            return None;
        }
        Some(p.iter().map(|row| row[level]).collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["T".to_string(), "t_phys".to_string()];
        for name in LINE_NAMES {
            header.push(format!("{name}_re"));
            header.push(format!("{name}_im"));
        }
        for level in 0..self.levels() {
            header.push(format!("pop{level}"));
        }
        w.write_record(&header).map_err(csv_error)?;
        for k in 0..self.len() {
            let mut row = vec![csv_num(self.t[k]), csv_num(self.t_phys[k])];
            for z in self.peaks[k].lines {
                row.push(csv_num(z.re));
                row.push(csv_num(z.im));
            }
            if let Some(p) = &self.populations {
                row.extend(p[k].iter().copied().map(csv_num));
            }
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is ascii"))
    }
}

/// Shortest round-trip text; scientific outside `[1e-4, 1e6)`.
fn csv_num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e6).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Analysis(format!("csv: {other:?}")),
    }
}

/// Power spectrum of one uniformly sampled signal, `+k` and `-k` folded.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Angular frequency spacing of the bins, rad/s.
    pub bin_width: f64,
    /// `power[k]` for `k = 0..=n/2`; `power[0]` is the DC term.
    pub power: Vec<f64>,
    pub total: f64,
    pub samples: usize,
}

impl Spectrum {
    pub fn rms(&self) -> f64 {
        (self.total / (self.samples * self.samples) as f64).sqrt()
    }

    /// Below [`SILENT_AMPLITUDE`] a signal is rounding noise around zero.
    pub fn is_silent(&self) -> bool {
        self.rms() < SILENT_AMPLITUDE
    }

    pub fn dc_fraction(&self) -> f64 {
        self.fraction(0)
    }

    pub fn fraction(&self, bin: usize) -> f64 {
        if self.total == 0.0 {
            0.0
        } else {
            self.power.get(bin).copied().unwrap_or(0.0) / self.total
        }
    }

    /// Anything beyond rounding noise outside the DC bin.
    pub fn oscillates(&self) -> bool {
        self.oscillating_fraction() > NOISE_FRACTION
    }

    /// Share of the total power outside the DC bin.
    pub fn oscillating_fraction(&self) -> f64 {
        if self.is_silent() {
            0.0
        } else {
            (self.total - self.power[0]).max(0.0) / self.total
        }
    }

    /// Share of the non-DC power found in `bins`.
    pub fn share_of_oscillation(&self, bins: &[usize]) -> f64 {
        let ac: f64 = self.power[1..].iter().sum();
        if ac == 0.0 || !self.oscillates() {
            return 0.0;
        }
        bins.iter()
            .filter(|&&b| b >= 1)
            .filter_map(|&b| self.power.get(b))
            .sum::<f64>()
            / ac
    }

    /// Strongest non-DC bin, if anything oscillates.
    pub fn dominant_bin(&self) -> Option<usize> {
        (1..self.power.len())
            .filter(|&k| self.power[k] > 0.0 && self.oscillates())
            .max_by(|&a, &b| self.power[a].total_cmp(&self.power[b]))
    }

    /// Bin index nearest to angular frequency `omega`.
    pub fn bin_of(&self, omega: f64) -> usize {
        (omega.abs() / self.bin_width).round() as usize
    }

    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width
    }
}

pub const MIN_SAMPLES: usize = 8;

/// RMS amplitude under which a signal counts as identically zero.
pub const SILENT_AMPLITUDE: f64 = 1e-12;
/// Oscillating power fraction that is still rounding noise.
pub const NOISE_FRACTION: f64 = 1e-24;

/// Discrete Fourier power of `signal` sampled every `dt` seconds.
pub fn spectrum(signal: &[Complex64], dt: f64) -> Result<Spectrum> {
    let n = signal.len();
    if n < MIN_SAMPLES {
        return Err(Error::Analysis(format!(
            "frequency analysis needs at least {MIN_SAMPLES} samples, got {n}"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Analysis(format!("sample spacing {dt} must be positive")));
    }
    let mut buf = signal.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let p: Vec<f64> = buf.iter().map(|z| z.norm_sqr()).collect();
    let half = n / 2;
    let mut power = vec![0.0; half + 1];
    power[0] = p[0];
    for k in 1..=half {
        power[k] = if 2 * k == n { p[k] } else { p[k] + p[n - k] };
    }
    Ok(Spectrum {
        bin_width: 2.0 * PI / (n as f64 * dt),
        power,
        total: p.iter().sum(),
        samples: n,
    })
}

pub fn real_spectrum(signal: &[f64], dt: f64) -> Result<Spectrum> {
    let z: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    spectrum(&z, dt)
}

/// Bins reported in a [`FrequencyReport`] carry more than this share of the
/// oscillating power.
pub const REPORT_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSummary {
    pub name: String,
    pub spectrum: Spectrum,
    pub magnitude_min: f64,
    pub magnitude_max: f64,
}

impl SignalSummary {
    fn new(name: String, signal: &[Complex64], dt: f64) -> Result<Self> {
        let mags = signal.iter().map(|z| z.norm());
        let (lo, hi) = mags.fold((f64::INFINITY, 0.0f64), |(lo, hi), m| (lo.min(m), hi.max(m)));
        Ok(SignalSummary {
            name,
            spectrum: spectrum(signal, dt)?,
            magnitude_min: lo,
            magnitude_max: hi,
        })
    }

    /// `(bin, fraction of total power)` for every bin above the threshold.
    pub fn significant_bins(&self) -> Vec<(usize, f64)> {
        let s = &self.spectrum;
        (1..s.power.len())
            .filter(|&k| s.share_of_oscillation(&[k]) > REPORT_THRESHOLD)
            .map(|k| (k, s.fraction(k)))
            .collect()
    }
}

/// Spectra of every line, both per-spin peaks and any level populations.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyReport {
    pub samples: usize,
    pub bin_width: f64,
    pub signals: Vec<SignalSummary>,
}

impl FrequencyReport {
    pub fn get(&self, name: &str) -> Option<&SignalSummary> {
        self.signals.iter().find(|s| s.name == name)
    }
}

pub fn frequency_content(series: &PeakSeries) -> Result<FrequencyReport> {
    let dt = series.step();
    let mut signals = Vec::new();
    for (k, name) in LINE_NAMES.iter().enumerate() {
        signals.push(SignalSummary::new(name.to_string(), &series.line(k), dt)?);
    }
    for (spin, name) in SPIN_NAMES.iter().enumerate() {
        signals.push(SignalSummary::new(name.to_string(), &series.spin_total(spin), dt)?);
    }
    for level in 0..series.levels() {
        let pop: Vec<Complex64> = series
            .population(level)
            .expect("level in range")
            .into_iter()
            .map(|x| Complex64::new(x, 0.0))
            .collect();
        signals.push(SignalSummary::new(format!("pop{level}"), &pop, dt)?);
    }
    Ok(FrequencyReport {
        samples: series.len(),
        bin_width: signals[0].spectrum.bin_width,
        signals,
    })
}

fn num(x: f64) -> String {
    format!("{x:.9e}")
}

impl fmt::Display for FrequencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples: {}", self.samples)?;
        writeln!(f, "bin_width_rad_s: {}", num(self.bin_width))?;
        for s in &self.signals {
            let sp = &s.spectrum;
            let n = &s.name;
            writeln!(f, "{n}.magnitude_min: {}", num(s.magnitude_min))?;
            writeln!(f, "{n}.magnitude_max: {}", num(s.magnitude_max))?;
            writeln!(f, "{n}.silent: {}", sp.is_silent())?;
            writeln!(f, "{n}.dc_fraction: {}", num(sp.dc_fraction()))?;
            writeln!(f, "{n}.oscillating_fraction: {}", num(sp.oscillating_fraction()))?;
            match sp.dominant_bin() {
                Some(b) => writeln!(f, "{n}.dominant_rad_s: {}", num(sp.frequency(b)))?,
                None => writeln!(f, "{n}.dominant_rad_s: none")?,
            }
            for (b, frac) in s.significant_bins() {
                writeln!(f, "{n}.bin.{b}.rad_s: {}", num(sp.frequency(b)))?;
                writeln!(f, "{n}.bin.{b}.fraction: {}", num(frac))?;
            }
        }
        Ok(())
    }
}

/// `offset + amplitude exp(-rate t) cos(frequency x + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeFit {
    pub rate: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub offset: f64,
    pub rms_residual: f64,
}

struct LinearFit {
    sse: f64,
    coef: [f64; 3],
}

fn linear_part(x: &[f64], t: &[f64], y: &[f64], rate: f64, freq: f64) -> Option<LinearFit> {
    // normal equations for the basis (1, e cos, e sin)
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for i in 0..y.len() {
        let env = (-rate * t[i]).exp();
        let (s, c) = (freq * x[i]).sin_cos();
        let row = [1.0, env * c, env * s];
        for r in 0..3 {
            for c in r..3 {
                ata[r][c] += row[r] * row[c];
            }
            atb[r] += row[r] * y[i];
        }
    }
    let m = nalgebra::Matrix3::from_fn(|r, c| if r <= c { ata[r][c] } else { ata[c][r] });
    let coef = m.try_inverse()? * nalgebra::Vector3::from(atb);
    if !coef.iter().all(|v| v.is_finite()) {
        return None;
    }
    let sse = (0..y.len())
        .map(|i| {
            let env = (-rate * t[i]).exp();
            let (s, c) = (freq * x[i]).sin_cos();
            let r = coef[0] + env * (coef[1] * c + coef[2] * s) - y[i];
            r * r
        })
        .sum();
    Some(LinearFit {
        sse,
        coef: [coef[0], coef[1], coef[2]],
    })
}

fn golden_min(lo: f64, hi: f64, iters: usize, f: impl Fn(f64) -> f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn scan_then_refine(lo: f64, hi: f64, points: usize, f: &impl Fn(f64) -> f64) -> f64 {
    let step = (hi - lo) / (points - 1) as f64;
    let best = (0..points)
        .map(|k| lo + step * k as f64)
        .map(|x| (x, f(x)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty scan")
        .0;
    golden_min(best - step, best + step, 50, f)
}

/// Least-squares fit of a damped cosine whose oscillation runs in `coord`
/// (typically simulated time) while the damping runs in `t_phys`.
///
/// The linear parameters (offset and quadrature amplitudes) are projected
/// out; rate and frequency are found by nested scan-and-golden searches
/// seeded from the strongest Fourier bin.
pub fn fit_exponential_envelope(coord: &[f64], t_phys: &[f64], values: &[f64]) -> Result<EnvelopeFit> {
    let n = values.len();
    if n < 6 {
        return Err(Error::Analysis(format!("envelope fit needs at least 6 samples, got {n}")));
    }
    if coord.len() != n || t_phys.len() != n {
        return Err(Error::Analysis("envelope fit inputs differ in length".into()));
    }
    if values.iter().chain(t_phys).chain(coord).any(|v| !v.is_finite()) {
        return Err(Error::Analysis("envelope fit input is not finite".into()));
    }
    check_grid(coord, "oscillation")?;
    let t_span = t_phys.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - t_phys.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(t_span > 0.0) {
        return Err(Error::Analysis("physical durations do not vary; rate is undetermined".into()));
    }

    let dx = coord[1] - coord[0];
    let sp = if n >= MIN_SAMPLES {
        Some(real_spectrum(values, dx)?)
    } else {
        None
    };
    let (f_lo, f_hi) = match sp.as_ref().and_then(|s| s.dominant_bin().map(|b| (s, b))) {
        Some((s, b)) => (s.frequency(b) - 1.5 * s.bin_width, s.frequency(b) + 1.5 * s.bin_width),
        None => (0.0, PI / dx),
    };
    let f_lo = f_lo.max(0.0);
    let r_max = 50.0 / t_span;

    let sse = |rate: f64, freq: f64| linear_part(coord, t_phys, values, rate, freq).map_or(f64::INFINITY, |l| l.sse);
    let best_rate = |freq: f64| scan_then_refine(-r_max, r_max, 21, &|r| sse(r, freq));
    let freq = scan_then_refine(f_lo, f_hi, 25, &|w| sse(best_rate(w), w));
    let rate = best_rate(freq);
    let lin = linear_part(coord, t_phys, values, rate, freq)
        .ok_or_else(|| Error::Analysis("envelope fit is singular".into()))?;

    let [c, a, b] = lin.coef;
    let amplitude = a.hypot(b);
    let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(amplitude > 1e-9 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Analysis("no oscillating envelope to fit".into()));
    }
    Ok(EnvelopeFit {
        rate,
        amplitude,
        frequency: freq,
        phase: (-b).atan2(a),
        offset: c,
        rms_residual: (lin.sse / n as f64).sqrt(),
    })
}

/// Envelope fit of one level population against physical duration.
pub fn fit_population_envelope(series: &PeakSeries, level: usize) -> Result<EnvelopeFit> {
    let pop = series
        .population(level)
        .ok_or_else(|| Error::Analysis(format!("series has no population for level {level}")))?;
    fit_exponential_envelope(series.t(), series.t_phys(), &pop)
}
