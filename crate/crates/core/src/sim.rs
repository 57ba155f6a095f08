//! Monte Carlo generation of time-tagged detection events.
//!
//! The source emits alternating signal and LO photons once per repetition
//! period. A polarizing beam splitter sends each one into a delay line or
//! straight to the final beam splitter, so within a trigger window:
//!
//! * with probability ¼ both photons meet at the beam splitter and interfere,
//! * with probability ½ exactly one of them arrives,
//! * with probability ¼ neither does.
//!
//! Every trial draws from its own ChaCha stream keyed by the trial index, so
//! the output is identical whether trials run serially or in parallel.

use std::cmp::Ordering;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{InterferenceSettings, Polarization, Port, TwoPhotonDensity};
use crate::qudit::{TemporalEnvelope, TimeBinQudit};

/// Probability that two successive photons reach the beam splitter together.
pub const PAIR_PROBABILITY: f64 = 0.25;
/// Probability that exactly one photon reaches the beam splitter in a window.
pub const SINGLE_PROBABILITY: f64 = 0.5;

/// Rejection attempts before [`sample_detection_times`] reports failure.
pub const MAX_REJECTION_ATTEMPTS: usize = 10_000;

const DARK_STREAM_C: u64 = u64::MAX;
const DARK_STREAM_D: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    /// ns between trigger windows.
    pub repetition_period: f64,
    /// Probability that the source emits its photon.
    pub emission_efficiency: f64,
    /// Combined fiber and detector efficiency.
    pub detection_efficiency: f64,
    /// Dark counts per ns on each detector.
    pub dark_count_rate: f64,
    pub n_trigger_pairs: u64,
    pub rng_seed: u64,
    /// Non-paralyzable detector dead time in ns.
    pub dead_time: f64,
    /// When false, two photons at one detector produce a single click.
    pub number_resolving: bool,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            repetition_period: 1000.0,
            emission_efficiency: 0.85,
            // 0.85 × 0.235 ≈ 0.20 clicks per driving pulse.
            detection_efficiency: 0.235,
            dark_count_rate: 0.0,
            n_trigger_pairs: 100_000,
            rng_seed: 0,
            dead_time: 0.0,
            number_resolving: true,
        }
    }
}

impl SourceConfig {
    /// Lossless, noiseless source.
    pub fn ideal(n_trigger_pairs: u64, rng_seed: u64) -> Self {
        Self {
            emission_efficiency: 1.0,
            detection_efficiency: 1.0,
            n_trigger_pairs,
            rng_seed,
            ..Self::default()
        }
    }

    /// End-to-end probability that an emitted-or-not photon produces a click.
    pub fn click_probability(&self) -> f64 {
        self.emission_efficiency * self.detection_efficiency
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |name, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.emission_efficiency > 0.0 && self.emission_efficiency <= 1.0) {
            return invalid(
                "emission_efficiency",
                format!("must lie in (0, 1], got {}", self.emission_efficiency),
            );
        }
        if !(0.0..=1.0).contains(&self.detection_efficiency) {
            return invalid(
                "detection_efficiency",
                format!("must lie in [0, 1], got {}", self.detection_efficiency),
            );
        }
        if !(self.dark_count_rate >= 0.0 && self.dark_count_rate.is_finite()) {
            return invalid(
                "dark_count_rate",
                format!("must be non-negative, got {}", self.dark_count_rate),
            );
        }
        if !(self.repetition_period > 0.0 && self.repetition_period.is_finite()) {
            return invalid(
                "repetition_period",
                format!("must be positive, got {}", self.repetition_period),
            );
        }
        if !(self.dead_time >= 0.0 && self.dead_time.is_finite()) {
            return invalid("dead_time", format!("must be non-negative, got {}", self.dead_time));
        }
        Ok(())
    }

    /// Total length of the recorded stream in ns.
    pub fn record_duration(&self) -> f64 {
        self.n_trigger_pairs as f64 * self.repetition_period
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Photon,
    Dark,
}

/// One time tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub detector: Port,
    /// Absolute time in ns.
    pub timestamp: f64,
    pub trial_index: u64,
    /// Simulation truth; analysis ignores it unless asked to drop dark counts.
    pub origin: Origin,
}

impl DetectionEvent {
    fn order(&self, other: &Self) -> Ordering {
        self.timestamp
            .total_cmp(&other.timestamp)
            .then(self.detector.cmp(&other.detector))
    }
}

/// Both clicks of an interfering pair, earliest first. Times are relative to
/// the start of the photon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPhotonDetection {
    pub first: (Port, f64),
    pub second: (Port, f64),
}

impl TwoPhotonDetection {
    pub fn is_cross_port(&self) -> bool {
        self.first.0 != self.second.0
    }
}

fn random_port<R: Rng + ?Sized>(rng: &mut R) -> Port {
    if rng.random::<bool>() {
        Port::C
    } else {
        Port::D
    }
}

/// Inverts `x − sin(2πx)/2π = u` on `[0, 1]`, the CDF of a sin² pulse.
fn invert_sin2_cdf(u: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x = u;
    for _ in 0..64 {
        let f = x - (2.0 * PI * x).sin() / (2.0 * PI) - u;
        if f.abs() < 1e-15 || hi - lo < 1e-15 {
            break;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let slope = 2.0 * (PI * x).sin().powi(2);
        let newton = x - f / slope;
        x = if slope > 1e-12 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    x
}

/// Draws a detection time from `|ζ(t)|²`.
pub fn sample_photon_time<R: Rng + ?Sized>(env: &TemporalEnvelope, rng: &mut R) -> f64 {
    let state = env.state();
    let mut u: f64 = rng.random();
    let mut bin = state.d() - 1;
    for (k, p) in state.populations().into_iter().enumerate() {
        if u < p {
            bin = k;
            break;
        }
        u -= p;
    }
    let x = invert_sin2_cdf(rng.random());
    (bin as f64 + x) * state.bin_duration()
}

/// Samples ports and times of an interfering pair.
///
/// Proposals are distinguishable photons (independent times, random ports),
/// accepted with probability `target / (2 · proposal)`; the interfering
/// density never exceeds twice the distinguishable one.
pub fn sample_detection_times<R: Rng + ?Sized>(
    density: &TwoPhotonDensity,
    rng: &mut R,
) -> Result<TwoPhotonDetection> {
    let interfering = density.settings().polarization == Polarization::Parallel;
    for _ in 0..MAX_REJECTION_ATTEMPTS {
        let t_sig = sample_photon_time(density.signal(), rng);
        let t_lo = sample_photon_time(density.lo(), rng);
        let p_sig = random_port(rng);
        let p_lo = random_port(rng);
        if interfering {
            let terms = density.terms(t_sig, t_lo);
            if terms.direct <= 0.0 {
                continue;
            }
            let sign = if p_sig == p_lo { 1.0 } else { -1.0 };
            let accept = 0.5 * (1.0 + sign * 2.0 * terms.weight * terms.exchange / terms.direct);
            if rng.random::<f64>() >= accept {
                continue;
            }
        }
        let (a, b) = ((p_sig, t_sig), (p_lo, t_lo));
        return Ok(if a.1 <= b.1 {
            TwoPhotonDetection { first: a, second: b }
        } else {
            TwoPhotonDetection { first: b, second: a }
        });
    }
    Err(Error::SamplerExhausted(MAX_REJECTION_ATTEMPTS))
}

fn check_inputs(
    signal: &TimeBinQudit,
    lo: &TimeBinQudit,
    settings: &InterferenceSettings,
    source: &SourceConfig,
) -> Result<TwoPhotonDensity> {
    source.validate()?;
    let density = TwoPhotonDensity::new(signal.envelope(), lo.envelope(), *settings)?;
    if density.support() >= source.repetition_period {
        return Err(Error::InvalidParameter {
            name: "repetition_period",
            reason: format!(
                "{} ns does not exceed the photon duration {} ns",
                source.repetition_period,
                density.support()
            ),
        });
    }
    Ok(density)
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn simulate_trial(
    trial: u64,
    density: &TwoPhotonDensity,
    source: &SourceConfig,
) -> Result<Vec<DetectionEvent>> {
    let mut rng = trial_rng(source.rng_seed, trial);
    let start = trial as f64 * source.repetition_period;
    let keep = source.click_probability();
    let photon = |detector, t| DetectionEvent {
        detector,
        timestamp: start + t,
        trial_index: trial,
        origin: Origin::Photon,
    };

    let window: f64 = rng.random();
    let mut events = Vec::with_capacity(2);
    if window < PAIR_PROBABILITY {
        let pair = sample_detection_times(density, &mut rng)?;
        let first = rng.random::<f64>() < keep;
        let second = rng.random::<f64>() < keep;
        if first {
            events.push(photon(pair.first.0, pair.first.1));
        }
        let merged = !source.number_resolving && first && !pair.is_cross_port();
        if second && !merged {
            events.push(photon(pair.second.0, pair.second.1));
        }
    } else if window < PAIR_PROBABILITY + SINGLE_PROBABILITY {
        let env = if rng.random::<bool>() {
            density.signal()
        } else {
            density.lo()
        };
        let t = sample_photon_time(env, &mut rng);
        let port = random_port(&mut rng);
        if rng.random::<f64>() < keep {
            events.push(photon(port, t));
        }
    }
    Ok(events)
}

fn dark_counts(source: &SourceConfig, detector: Port, stream: u64) -> Vec<DetectionEvent> {
    let duration = source.record_duration();
    let mean = source.dark_count_rate * duration;
    if mean <= 0.0 {
        return Vec::new();
    }
    let mut rng = trial_rng(source.rng_seed, stream);
    let n = Poisson::new(mean)
        .map(|p| p.sample(&mut rng) as u64)
        .unwrap_or(0);
    (0..n)
        .map(|_| {
            let timestamp = rng.random::<f64>() * duration;
            DetectionEvent {
                detector,
                timestamp,
                trial_index: ((timestamp / source.repetition_period) as u64)
                    .min(source.n_trigger_pairs - 1),
                origin: Origin::Dark,
            }
        })
        .collect()
}

/// Drops clicks that fall within the dead time of the previous recorded
/// click on the same detector. Expects time-ordered events.
pub fn apply_dead_time(events: Vec<DetectionEvent>, dead_time: f64) -> Vec<DetectionEvent> {
    if dead_time <= 0.0 {
        return events;
    }
    let mut last = [f64::NEG_INFINITY; 2];
    events
        .into_iter()
        .filter(|e| {
            let slot = &mut last[e.detector as usize];
            if e.timestamp - *slot < dead_time {
                false
            } else {
                *slot = e.timestamp;
                true
            }
        })
        .collect()
}

/// Generates the full time-tagged record of one run, sorted by timestamp.
pub fn simulate_stream(
    signal: &TimeBinQudit,
    lo: &TimeBinQudit,
    settings: &InterferenceSettings,
    source: &SourceConfig,
) -> Result<Vec<DetectionEvent>> {
    let density = check_inputs(signal, lo, settings, source)?;
    let per_trial: Vec<Vec<DetectionEvent>> = (0..source.n_trigger_pairs)
        .into_par_iter()
        .map(|trial| simulate_trial(trial, &density, source))
        .collect::<Result<_>>()?;
    let mut events: Vec<DetectionEvent> = per_trial.into_iter().flatten().collect();
    events.extend(dark_counts(source, Port::C, DARK_STREAM_C));
    events.extend(dark_counts(source, Port::D, DARK_STREAM_D));
    events.par_sort_by(DetectionEvent::order);
    Ok(apply_dead_time(events, source.dead_time))
}

/// Mean photon clicks per window on one detector within `bin`.
fn singles_per_bin(signal: &TimeBinQudit, lo: &TimeBinQudit, p: f64, bin: usize) -> f64 {
    // Half a signal and half an LO photon reach the beam splitter per window,
    // and each click is equally likely on either detector.
    0.25 * p * (signal.populations()[bin] + lo.populations()[bin])
}

/// Virtual-detector cells `(i, j)` with `|i − j| = separation`.
fn satellite_cells(d: usize, separation: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..d).flat_map(move |i| {
        (0..d)
            .filter(move |&j| i.abs_diff(j) == separation)
            .map(move |j| (i, j))
    })
}

fn reference_pair_rate(signal: &TimeBinQudit, lo: &TimeBinQudit, p: f64, i: usize, j: usize) -> f64 {
    let (s, l) = (signal.populations(), lo.populations());
    PAIR_PROBABILITY * p * p * 0.25 * (s[i] * l[j] + s[j] * l[i])
}

/// Expected ratio `b` of accidental (dark-count) coincidences to photon-pair
/// coincidences in the distinguishable reference, summed over the
/// `±separation` satellite cells.
pub fn expected_accidental_ratio(
    signal: &TimeBinQudit,
    lo: &TimeBinQudit,
    source: &SourceConfig,
    separation: usize,
) -> f64 {
    let p = source.click_probability();
    let x = source.dark_count_rate * signal.bin_duration();
    let (mut pairs, mut accidentals) = (0.0, 0.0);
    for (i, j) in satellite_cells(signal.d(), separation) {
        pairs += reference_pair_rate(signal, lo, p, i, j);
        accidentals += x * (singles_per_bin(signal, lo, p, i) + singles_per_bin(signal, lo, p, j)) + x * x;
    }
    if pairs == 0.0 {
        f64::INFINITY
    } else {
        accidentals / pairs
    }
}

/// Dark-count rate per ns that produces accidental ratio `ratio` on the
/// `±separation` satellites; the inverse of [`expected_accidental_ratio`].
pub fn dark_rate_for_accidental_ratio(
    ratio: f64,
    signal: &TimeBinQudit,
    lo: &TimeBinQudit,
    source: &SourceConfig,
    separation: usize,
) -> f64 {
    let p = source.click_probability();
    let (mut cells, mut linear, mut pairs) = (0.0, 0.0, 0.0);
    for (i, j) in satellite_cells(signal.d(), separation) {
        cells += 1.0;
        linear += singles_per_bin(signal, lo, p, i) + singles_per_bin(signal, lo, p, j);
        pairs += reference_pair_rate(signal, lo, p, i, j);
    }
    if cells == 0.0 || ratio <= 0.0 {
        return 0.0;
    }
    let x = (-linear + (linear * linear + 4.0 * cells * ratio * pairs).sqrt()) / (2.0 * cells);
    x / signal.bin_duration()
}
