//! Browser bindings. Every export returns a JSON string; errors come back
//! as JS exceptions.

use num_complex::Complex64;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use nmrsim::experiment::{self, canonical, ExperimentConfig};
use nmrsim::program;
use nmrsim::readout::{fit_population_envelope, LINE_NAMES};
use nmrsim::spin::{RelaxationTimes, SpinSystemParams};
use nmrsim::verify;

fn shipped(name: &str) -> ExperimentConfig {
    canonical(name).expect("shipped config").config()
}

fn series_json(cfg: &ExperimentConfig) -> Result<Value, String> {
    let series = experiment::assemble_series(cfg).map_err(|e| e.to_string())?;
    let omega_t = cfg.grid.omega_t();
    let mut lines = serde_json::Map::new();
    for (k, name) in LINE_NAMES.iter().enumerate() {
        let line = series.line(k);
        lines.insert(
            name.to_string(),
            json!({
                "re": line.iter().map(|z| z.re).collect::<Vec<_>>(),
                "im": line.iter().map(|z| z.im).collect::<Vec<_>>(),
            }),
        );
    }
    let pops: Vec<Vec<f64>> = (0..series.levels())
        .map(|l| series.population(l).unwrap_or_default())
        .collect();
    Ok(json!({ "omega_t": omega_t, "t_phys": series.t_phys(), "lines": lines, "populations": pops }))
}

/// Harmonic oscillator started in `sum_n (re[n] + i im[n]) |n>` (normalised
/// here), read out with a pi/2 pulse on spin 2.
pub fn harmonic_series(re: &[f64], im: &[f64], count: usize) -> Result<String, String> {
    if re.len() != im.len() || re.is_empty() || re.len() > 4 {
        return Err("need 1 to 4 amplitudes with matching real and imaginary parts".into());
    }
    let amps: Vec<Complex64> = re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect();
    let norm = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err("state has zero norm".into());
    }
    let mut cfg = shipped("fig1b");
    cfg.initial = amps.iter().map(|z| z / norm).collect();
    cfg.grid.count = count.clamp(8, 1024);
    series_json(&cfg).map(|v| v.to_string())
}

/// Driven anharmonic oscillator from |0> with transverse relaxation `t2`
/// seconds (`<= 0` or non-finite means none). Includes the fitted envelope
/// of level 0 when relaxation is on.
pub fn driven_populations(t2: f64, count: usize) -> Result<String, String> {
    let mut cfg = shipped("fig2");
    cfg.grid.count = count.clamp(16, 1024);
    let relaxed = t2.is_finite() && t2 > 0.0;
    if relaxed {
        let times = RelaxationTimes::t2_only(t2).map_err(|e| e.to_string())?;
        cfg.params = cfg.params.clone().with_relaxation(times);
        cfg.relaxation = true;
    }
    let mut out = series_json(&cfg)?;
    if relaxed {
        let series = experiment::assemble_series(&cfg).map_err(|e| e.to_string())?;
        let fit = fit_population_envelope(&series, 0).map_err(|e| e.to_string())?;
        out["fit"] = json!({ "rate": fit.rate, "expected": 1.0 / t2, "frequency": fit.frequency });
    }
    Ok(out.to_string())
}

/// Oracle distance of the harmonic sequence at each OmegaT when `tau1` is
/// off by the relative error `tau1_error`.
pub fn oracle_distance(tau1_error: f64) -> Result<String, String> {
    let params = SpinSystemParams::dibromothiophene();
    let grid = verify::oracle_grid();
    let mut dist = Vec::with_capacity(grid.len());
    for &ot in &grid {
        let d = verify::qho_oracle_distance(&params, &[ot], |x| {
            let mut t = program::qho_timing(x, &params)?;
            t.tau1 *= 1.0 + tau1_error;
            Ok(t)
        })
        .map_err(|e| e.to_string())?;
        dist.push(d);
    }
    let worst = dist.iter().cloned().fold(0.0, f64::max);
    Ok(json!({ "omega_t": grid, "distance": dist, "max": worst }).to_string())
}

#[wasm_bindgen(js_name = harmonicSeries)]
pub fn harmonic_series_js(re: Vec<f64>, im: Vec<f64>, count: usize) -> Result<String, JsError> {
    harmonic_series(&re, &im, count).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = drivenPopulations)]
pub fn driven_populations_js(t2: f64, count: usize) -> Result<String, JsError> {
    driven_populations(t2, count).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = oracleDistance)]
pub fn oracle_distance_js(tau1_error: f64) -> Result<String, JsError> {
    oracle_distance(tau1_error).map_err(|e| JsError::new(&e))
}
