//! Time-bin qudit states and their temporal wave-packet envelopes.
//!
//! A photon carrying `d` time bins of duration `T` has the complex envelope
//!
//! ```text
//! ζ(t) = Σ_k c_k · s(t − kT),    s(t) = √(2/T) · sin(πt/T) on [0, T]
//! ```
//!
//! so every bin holds one sin²-shaped intensity peak and the bins never overlap.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Peak duration of the photons used in the homodyne experiments, in ns.
pub const DEFAULT_BIN_DURATION_NS: f64 = 230.0;

/// Upper bound on the number of separable time bins.
pub const MAX_BINS: usize = 8;

const NORM_TOLERANCE: f64 = 1e-12;

/// A single photon in a coherent superposition of `d` temporal modes.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBinQudit {
    amplitudes: Vec<Complex64>,
    bin_duration: f64,
}

impl TimeBinQudit {
    /// Builds a normalized state with `c_k = m_k e^{iφ_k} / ‖m‖`.
    pub fn new(magnitudes: &[f64], phases: &[f64], bin_duration: f64) -> Result<Self> {
        let d = magnitudes.len();
        if d == 0 || d > MAX_BINS {
            return Err(Error::InvalidDimension(d));
        }
        if phases.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: phases.len(),
            });
        }
        if !(bin_duration.is_finite() && bin_duration > 0.0) {
            return Err(Error::InvalidParameter {
                name: "bin_duration",
                reason: format!("must be positive and finite, got {bin_duration}"),
            });
        }
        if let Some(bad) = magnitudes.iter().chain(phases).find(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("{bad}")));
        }
        if let Some(neg) = magnitudes.iter().find(|&&m| m < 0.0) {
            return Err(Error::InvalidInput(format!("negative magnitude {neg}")));
        }
        let norm = magnitudes.iter().map(|m| m * m).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroAmplitude);
        }
        let amplitudes = magnitudes
            .iter()
            .zip(phases)
            .map(|(&m, &phi)| Complex64::from_polar(m / norm, phi))
            .collect();
        Ok(Self {
            amplitudes,
            bin_duration,
        })
    }

    /// Builds a state from raw amplitudes, renormalizing them.
    pub fn from_amplitudes(amplitudes: &[Complex64], bin_duration: f64) -> Result<Self> {
        let magnitudes: Vec<f64> = amplitudes.iter().map(|c| c.norm()).collect();
        let phases: Vec<f64> = amplitudes.iter().map(|c| c.arg()).collect();
        Self::new(&magnitudes, &phases, bin_duration)
    }

    /// Equal-weight superposition with the given bin phases.
    pub fn equal_weight(phases: &[f64], bin_duration: f64) -> Result<Self> {
        Self::new(&vec![1.0; phases.len()], phases, bin_duration)
    }

    /// The local-oscillator photon: equal weights, no phase between bins.
    pub fn local_oscillator(d: usize, bin_duration: f64) -> Result<Self> {
        Self::equal_weight(&vec![0.0; d], bin_duration)
    }

    pub fn d(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitude(&self, bin: usize) -> Complex64 {
        self.amplitudes[bin]
    }

    pub fn bin_duration(&self) -> f64 {
        self.bin_duration
    }

    /// Phases of the amplitudes, in radians.
    pub fn phases(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.arg()).collect()
    }

    /// Occupation probability `|c_k|²` of every bin.
    pub fn populations(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn is_normalized(&self) -> bool {
        (self.populations().iter().sum::<f64>() - 1.0).abs() <= NORM_TOLERANCE
    }

    /// `⟨self|other⟩` over the time-bin basis.
    pub fn inner(&self, other: &TimeBinQudit) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn envelope(&self) -> TemporalEnvelope {
        TemporalEnvelope::new(self.clone())
    }
}

/// `make_qudit` in free-function form, checking `d` against the input lengths.
pub fn make_qudit(
    d: usize,
    magnitudes: &[f64],
    phases: &[f64],
    bin_duration: f64,
) -> Result<TimeBinQudit> {
    if magnitudes.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: magnitudes.len(),
        });
    }
    TimeBinQudit::new(magnitudes, phases, bin_duration)
}

/// Index of the bin containing `t`, measured from the start of the photon.
///
/// A time exactly on a boundary `kT` belongs to bin `k`, the later one.
/// Returns `None` outside `[0, dT)`.
pub fn bin_index(t: f64, bin_duration: f64, d: usize) -> Option<usize> {
    if !(t >= 0.0) {
        return None;
    }
    let k = (t / bin_duration).floor();
    if k < d as f64 {
        Some(k as usize)
    } else {
        None
    }
}

/// Single-bin mode `√(2/T) sin(πt/T)` on `[0, T]`.
pub fn single_bin_mode(t: f64, bin_duration: f64) -> f64 {
    if !(0.0..=bin_duration).contains(&t) {
        return 0.0;
    }
    (2.0 / bin_duration).sqrt() * (PI * t / bin_duration).sin()
}

/// The complex wave packet `ζ(t)` of a [`TimeBinQudit`].
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalEnvelope {
    state: TimeBinQudit,
}

impl TemporalEnvelope {
    pub fn new(state: TimeBinQudit) -> Self {
        Self { state }
    }

    pub fn state(&self) -> &TimeBinQudit {
        &self.state
    }

    pub fn bin_duration(&self) -> f64 {
        self.state.bin_duration
    }

    /// Length of the photon, `d·T`.
    pub fn total_duration(&self) -> f64 {
        self.state.d() as f64 * self.state.bin_duration
    }

    /// `ζ(t)`; zero outside `[0, dT)`.
    pub fn amplitude(&self, t: f64) -> Complex64 {
        let bin_duration = self.state.bin_duration;
        match bin_index(t, bin_duration, self.state.d()) {
            Some(k) => {
                self.state.amplitudes[k] * single_bin_mode(t - k as f64 * bin_duration, bin_duration)
            }
            None => Complex64::new(0.0, 0.0),
        }
    }

    /// Detection probability density `|ζ(t)|²`, in 1/ns.
    pub fn probability_density(&self, t: f64) -> f64 {
        self.amplitude(t).norm_sqr()
    }
}

pub fn envelope_amplitude(env: &TemporalEnvelope, t: f64) -> Complex64 {
    env.amplitude(t)
}

pub fn probability_density(env: &TemporalEnvelope, t: f64) -> f64 {
    env.probability_density(t)
}

/// A qudit as written in configuration files.
///
/// Phases are given either in degrees (`phases_deg`) or radians
/// (`phases_rad`), never both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateLiteral {
    pub d: usize,
    pub magnitudes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases_deg: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases_rad: Option<Vec<f64>>,
    #[serde(default = "default_bin_ns")]
    pub bin_ns: f64,
}

fn default_bin_ns() -> f64 {
    DEFAULT_BIN_DURATION_NS
}

impl StateLiteral {
    pub fn phases_radians(&self) -> Result<Vec<f64>> {
        match (&self.phases_deg, &self.phases_rad) {
            (Some(deg), None) => Ok(deg.iter().map(|p| p.to_radians()).collect()),
            (None, Some(rad)) => Ok(rad.clone()),
            (None, None) => Ok(vec![0.0; self.d]),
            (Some(_), Some(_)) => Err(Error::InvalidInput(
                "state gives both phases_deg and phases_rad".into(),
            )),
        }
    }

    pub fn to_qudit(&self) -> Result<TimeBinQudit> {
        make_qudit(self.d, &self.magnitudes, &self.phases_radians()?, self.bin_ns)
    }
}

impl From<&TimeBinQudit> for StateLiteral {
    fn from(q: &TimeBinQudit) -> Self {
        Self {
            d: q.d(),
            magnitudes: q.amplitudes.iter().map(|c| c.norm()).collect(),
            phases_deg: None,
            phases_rad: Some(q.phases()),
            bin_ns: q.bin_duration,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const T: f64 = DEFAULT_BIN_DURATION_NS;

    fn quadrature(env: &TemporalEnvelope, step: f64) -> f64 {
        let n = (env.total_duration() / step).round() as usize;
        (0..n)
            .map(|i| env.probability_density((i as f64 + 0.5) * step) * step)
            .sum()
    }

    #[test]
    fn equal_weight_qubit_with_pi_phase() {
        let q = make_qudit(2, &[1.0, 1.0], &[0.0, PI], T).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(q.amplitude(0).re, h, epsilon = 1e-15);
        assert_abs_diff_eq!(q.amplitude(1).re, -h, epsilon = 1e-15);
        assert_abs_diff_eq!(q.amplitude(1).im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn qutrit_populations_are_equal() {
        let q = make_qudit(3, &[1.0, 1.0, 1.0], &[0.0, PI, 0.0], T).unwrap();
        for p in q.populations() {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(matches!(
            make_qudit(2, &[0.0, 0.0], &[0.0, 0.0], T),
            Err(Error::ZeroAmplitude)
        ));
        assert!(matches!(
            make_qudit(3, &[1.0, 1.0], &[0.0, 0.0], T),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(make_qudit(2, &[1.0, f64::NAN], &[0.0, 0.0], T).is_err());
        assert!(make_qudit(2, &[1.0, -1.0], &[0.0, 0.0], T).is_err());
        assert!(make_qudit(2, &[1.0, 1.0], &[0.0, 0.0], 0.0).is_err());
        assert!(TimeBinQudit::equal_weight(&[0.0; 9], T).is_err());
    }

    #[test]
    fn envelope_at_bin_centres_and_boundaries() {
        let q = TimeBinQudit::equal_weight(&[0.0, 0.0], T).unwrap();
        let env = q.envelope();
        let peak = (2.0 / T).sqrt();
        assert_abs_diff_eq!(env.amplitude(T / 2.0).re, q.amplitude(0).re * peak, epsilon = 1e-15);
        assert_abs_diff_eq!(env.amplitude(1.5 * T).re, q.amplitude(1).re * peak, epsilon = 1e-15);
        for k in 0..=3 {
            assert_abs_diff_eq!(env.amplitude(k as f64 * T).norm(), 0.0, epsilon = 1e-12);
        }
        assert_eq!(env.amplitude(-1.0).norm(), 0.0);
    }

    #[test]
    fn density_closed_form_values() {
        let twin = TimeBinQudit::equal_weight(&[0.0, 0.0], T).unwrap().envelope();
        // (2/T)·|c|² with |c|² = 1/2
        assert_abs_diff_eq!(twin.probability_density(115.0), 4.347_826_086_956_522e-3, epsilon = 1e-15);

        let trip = TimeBinQudit::equal_weight(&[0.0, 1.0, 2.0], T).unwrap().envelope();
        for k in 0..3 {
            let t = (k as f64 + 0.5) * T;
            assert_abs_diff_eq!(trip.probability_density(t), 2.0 / (3.0 * T), epsilon = 1e-15);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let env = TimeBinQudit::new(&[0.3, 1.0, 0.5, 0.2], &[0.1, 2.0, -1.0, 0.0], T)
            .unwrap()
            .envelope();
        assert_abs_diff_eq!(quadrature(&env, 0.01), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn boundary_goes_to_later_bin() {
        assert_eq!(bin_index(T, T, 2), Some(1));
        assert_eq!(bin_index(0.0, T, 2), Some(0));
        assert_eq!(bin_index(2.0 * T, T, 2), None);
        assert_eq!(bin_index(-1e-9, T, 2), None);
    }

    #[test]
    fn state_literal_accepts_degrees_or_radians() {
        let lit: StateLiteral = serde_json::from_str(
            r#"{ "d": 2, "magnitudes": [1,1], "phases_deg": [0,180], "bin_ns": 230 }"#,
        )
        .unwrap();
        let q = lit.to_qudit().unwrap();
        assert_abs_diff_eq!(q.amplitude(1).re, -1.0 / 2f64.sqrt(), epsilon = 1e-15);

        let both: StateLiteral = serde_json::from_str(
            r#"{ "d": 1, "magnitudes": [1], "phases_deg": [0], "phases_rad": [0] }"#,
        )
        .unwrap();
        assert!(both.to_qudit().is_err());
    }

    fn state_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..=MAX_BINS).prop_flat_map(|d| {
            (
                prop::collection::vec(0.05f64..2.0, d),
                prop::collection::vec(-PI..PI, d),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn normalization_holds((mags, phases) in state_strategy()) {
            let q = TimeBinQudit::new(&mags, &phases, T).unwrap();
            prop_assert!(q.is_normalized());
            prop_assert!((quadrature(&q.envelope(), 0.05) - 1.0).abs() < 1e-9);
        }

        #[test]
        fn global_phase_leaves_density_unchanged(
            (mags, phases) in state_strategy(),
            offset in -PI..PI,
            t in -10.0f64..1900.0,
        ) {
            let a = TimeBinQudit::new(&mags, &phases, T).unwrap().envelope();
            let shifted: Vec<f64> = phases.iter().map(|p| p + offset).collect();
            let b = TimeBinQudit::new(&mags, &shifted, T).unwrap().envelope();
            prop_assert!((a.probability_density(t) - b.probability_density(t)).abs() < 1e-15);
        }

        #[test]
        fn bins_have_disjoint_support((mags, phases) in state_strategy(), x in 0.0f64..1.0) {
            let q = TimeBinQudit::new(&mags, &phases, T).unwrap();
            let env = q.envelope();
            for j in 0..q.d() {
                let t = (j as f64 + x) * T;
                let expected = q.amplitude(j).norm_sqr() * single_bin_mode(x * T, T).powi(2);
                prop_assert!((env.probability_density(t) - expected).abs() < 1e-15);
            }
        }
    }
}
