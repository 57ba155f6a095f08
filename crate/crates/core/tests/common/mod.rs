#![allow(dead_code)]

use qudit_homodyne::correlator::{AnalysisParams, WindowGeometry};
use qudit_homodyne::optics::{InterferenceSettings, Polarization};
use qudit_homodyne::qudit::{TimeBinQudit, DEFAULT_BIN_DURATION_NS};
use qudit_homodyne::sim::{simulate_stream, DetectionEvent, SourceConfig};

pub const T: f64 = DEFAULT_BIN_DURATION_NS;
pub const PERIOD: f64 = 1000.0;

/// Seed of the perpendicular reference run paired with a parallel run.
pub fn reference_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

pub fn state(phases: &[f64]) -> TimeBinQudit {
    TimeBinQudit::equal_weight(phases, T).unwrap()
}

pub fn lo(d: usize) -> TimeBinQudit {
    TimeBinQudit::local_oscillator(d, T).unwrap()
}

pub fn geometry(d: usize) -> WindowGeometry {
    WindowGeometry::new(PERIOD, T, d)
}

pub fn params() -> AnalysisParams {
    AnalysisParams::default()
}

pub fn run(
    signal: &TimeBinQudit,
    settings: &InterferenceSettings,
    source: &SourceConfig,
) -> Vec<DetectionEvent> {
    simulate_stream(signal, &lo(signal.d()), settings, source).unwrap()
}

/// A parallel run and its perpendicular reference from an independent stream.
pub fn run_pair(
    signal: &TimeBinQudit,
    settings: &InterferenceSettings,
    source: &SourceConfig,
) -> (Vec<DetectionEvent>, Vec<DetectionEvent>) {
    let parallel = run(signal, &settings.with_polarization(Polarization::Parallel), source);
    let reference = SourceConfig {
        rng_seed: reference_seed(source.rng_seed),
        ..*source
    };
    let perp = run(signal, &settings.with_polarization(Polarization::Perpendicular), &reference);
    (parallel, perp)
}
