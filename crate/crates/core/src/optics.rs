//! Two-photon interference of a signal and a local-oscillator photon on a
//! 50:50 beam splitter.
//!
//! Two views of the same physics live here. [`two_photon_output_expansion`]
//! expands `â†_A â†_B |00⟩` over output ports and time bins with the
//! beam-splitter relations `â†_A → (â†_C + â†_D)/√2`, `â†_B → (â†_C − â†_D)/√2`.
//! [`TwoPhotonDensity`] gives the time-resolved joint detection densities,
//! including partial distinguishability through a mode-overlap factor `μ`
//! and a dephasing kernel `κ(t1 − t2)`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qudit::{TemporalEnvelope, TimeBinQudit};

/// Coherence time of the photons in the homodyne experiments, in ns.
pub const DEFAULT_COHERENCE_TIME_NS: f64 = 500.0;

/// Largest grid step used by the 2D quadratures, in ns.
pub const MAX_QUADRATURE_STEP_NS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarization {
    /// Photons interfere.
    Parallel,
    /// Photons are distinguishable and split independently.
    Perpendicular,
}

/// Shape of the dephasing kernel `κ(τ)` applied to the interference term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoherenceKernel {
    /// `exp(−(τ/τc)²)`
    #[default]
    Gaussian,
    /// `exp(−|τ|/τc)`
    Exponential,
}

impl CoherenceKernel {
    /// `κ(τ)` for coherence time `τc`. An infinite `τc` gives 1 everywhere.
    pub fn eval(self, tau: f64, coherence_time: f64) -> f64 {
        if coherence_time.is_infinite() {
            return 1.0;
        }
        let x = tau / coherence_time;
        match self {
            CoherenceKernel::Gaussian => (-x * x).exp(),
            CoherenceKernel::Exponential => (-x.abs()).exp(),
        }
    }
}

impl std::str::FromStr for CoherenceKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "exponential" => Ok(Self::Exponential),
            other => Err(Error::InvalidParameter {
                name: "kernel",
                reason: format!("unknown kernel `{other}` (expected gaussian or exponential)"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceSettings {
    pub polarization: Polarization,
    /// `τc` in ns; `f64::INFINITY` switches dephasing off.
    pub coherence_time: f64,
    pub coherence_kernel: CoherenceKernel,
    /// Scalar visibility factor `μ ∈ [0, 1]` for residual polarization or
    /// spatial-mode mismatch.
    pub mode_overlap: f64,
}

impl Default for InterferenceSettings {
    fn default() -> Self {
        Self {
            polarization: Polarization::Parallel,
            coherence_time: DEFAULT_COHERENCE_TIME_NS,
            coherence_kernel: CoherenceKernel::Gaussian,
            mode_overlap: 1.0,
        }
    }
}

impl InterferenceSettings {
    /// Perfectly indistinguishable photons with no dephasing.
    pub fn ideal(polarization: Polarization) -> Self {
        Self {
            polarization,
            coherence_time: f64::INFINITY,
            coherence_kernel: CoherenceKernel::Gaussian,
            mode_overlap: 1.0,
        }
    }

    pub fn with_polarization(self, polarization: Polarization) -> Self {
        Self {
            polarization,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coherence_time > 0.0) {
            return Err(Error::InvalidParameter {
                name: "coherence_time",
                reason: format!("must be positive, got {}", self.coherence_time),
            });
        }
        if !(0.0..=1.0).contains(&self.mode_overlap) {
            return Err(Error::InvalidParameter {
                name: "mode_overlap",
                reason: format!("must lie in [0, 1], got {}", self.mode_overlap),
            });
        }
        Ok(())
    }

    /// Weight `μ·κ(τ)` of the interference term; zero for perpendicular photons.
    pub fn interference_weight(&self, tau: f64) -> f64 {
        match self.polarization {
            Polarization::Perpendicular => 0.0,
            Polarization::Parallel => {
                self.mode_overlap * self.coherence_kernel.eval(tau, self.coherence_time)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Port {
    C,
    D,
}

impl Port {
    pub fn other(self) -> Port {
        match self {
            Port::C => Port::D,
            Port::D => Port::C,
        }
    }
}

/// An output port at a given time bin: one virtual detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OutputMode {
    pub port: Port,
    pub bin: usize,
}

impl OutputMode {
    pub fn new(port: Port, bin: usize) -> Self {
        Self { port, bin }
    }
}

/// Amplitude of the two-photon Fock state with one photon in each of
/// `out1` and `out2` (or two in `out1` when they coincide). `out1 <= out2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModePairWeight {
    pub out1: OutputMode,
    pub out2: OutputMode,
    pub amplitude: Complex64,
}

impl ModePairWeight {
    pub fn probability(&self) -> f64 {
        self.amplitude.norm_sqr()
    }

    pub fn is_cross_port(&self) -> bool {
        self.out1.port != self.out2.port
    }
}

/// Expands the two-photon input over all output (port, bin) pairs.
///
/// The result holds every unordered pair of output modes once, in
/// lexicographic order, with Fock-state amplitudes whose squared moduli sum
/// to one.
pub fn two_photon_output_expansion(
    signal: &TimeBinQudit,
    lo: &TimeBinQudit,
) -> Result<Vec<ModePairWeight>> {
    let d = signal.d();
    if lo.d() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: lo.d(),
        });
    }
    let modes: Vec<OutputMode> = [Port::C, Port::D]
        .iter()
        .flat_map(|&port| (0..d).map(move |bin| OutputMode::new(port, bin)))
        .collect();
    let index = |m: OutputMode| m.bin + if m.port == Port::D { d } else { 0 };

    // Coefficient of the ordered operator product â†_{m1} â†_{m2}.
    let n = modes.len();
    let mut ordered = vec![Complex64::new(0.0, 0.0); n * n];
    for j in 0..d {
        for k in 0..d {
            let weight = signal.amplitude(j) * lo.amplitude(k) * 0.5;
            for &p_sig in &[Port::C, Port::D] {
                for &p_lo in &[Port::C, Port::D] {
                    let sign = if p_lo == Port::D { -1.0 } else { 1.0 };
                    let m1 = index(OutputMode::new(p_sig, j));
                    let m2 = index(OutputMode::new(p_lo, k));
                    ordered[m1 * n + m2] += weight * sign;
                }
            }
        }
    }

    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for a in 0..n {
        for b in a..n {
            let amplitude = if a == b {
                ordered[a * n + a] * std::f64::consts::SQRT_2
            } else {
                ordered[a * n + b] + ordered[b * n + a]
            };
            out.push(ModePairWeight {
                out1: modes[a],
                out2: modes[b],
                amplitude,
            });
        }
    }
    Ok(out)
}

/// Probability that the two photons leave through opposite ports, one in
/// bin `j` and the other in bin `k`.
pub fn cross_port_probability(expansion: &[ModePairWeight], j: usize, k: usize) -> f64 {
    expansion
        .iter()
        .filter(|w| w.is_cross_port())
        .filter(|w| {
            (w.out1.bin == j && w.out2.bin == k) || (w.out1.bin == k && w.out2.bin == j)
        })
        .map(ModePairWeight::probability)
        .sum()
}

/// The same probability for distinguishable photons, which split independently.
pub fn distinguishable_cross_port_probability(
    signal: &TimeBinQudit,
    lo: &TimeBinQudit,
    j: usize,
    k: usize,
) -> f64 {
    let (s, l) = (signal.populations(), lo.populations());
    if j == k {
        0.5 * s[j] * l[j]
    } else {
        0.5 * (s[j] * l[k] + s[k] * l[j])
    }
}

/// Cross-bin RCP from the operator expansion: interfering over
/// distinguishable cross-port probability for the bin pair `(j, k)`.
pub fn cross_bin_rcp_enumerated(
    signal: &TimeBinQudit,
    lo: &TimeBinQudit,
    j: usize,
    k: usize,
) -> Result<f64> {
    let expansion = two_photon_output_expansion(signal, lo)?;
    let reference = distinguishable_cross_port_probability(signal, lo, j, k);
    if reference == 0.0 {
        return Err(Error::UndefinedCell(j, k));
    }
    Ok(cross_port_probability(&expansion, j, k) / reference)
}

/// Ideal cross-bin RCP `1 − cos Δφ` for equal-weight bins.
pub fn cross_bin_rcp_analytic(phase_difference: f64) -> f64 {
    1.0 - phase_difference.cos()
}

/// Time-resolved joint detection densities for a signal/LO pair.
///
/// With `a = ζS(t1)ζL(t2)`, `b = ζS(t2)ζL(t1)` and `w = μκ(t1 − t2)`:
///
/// * cross-port (C at `t1`, D at `t2`): `¼(|a|² + |b|² − 2w·Re(a b*))`
/// * same-port (both at one detector): `¼(|a|² + |b|² + 2w·Re(a b*))`
#[derive(Debug, Clone)]
pub struct TwoPhotonDensity {
    signal: TemporalEnvelope,
    lo: TemporalEnvelope,
    settings: InterferenceSettings,
}

/// The three pieces `(|a|² + |b|², Re(a b*), interference weight)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DensityTerms {
    pub direct: f64,
    pub exchange: f64,
    pub weight: f64,
}

impl TwoPhotonDensity {
    pub fn new(
        signal: TemporalEnvelope,
        lo: TemporalEnvelope,
        settings: InterferenceSettings,
    ) -> Result<Self> {
        if signal.bin_duration() != lo.bin_duration() {
            return Err(Error::BinDurationMismatch(
                signal.bin_duration(),
                lo.bin_duration(),
            ));
        }
        settings.validate()?;
        Ok(Self {
            signal,
            lo,
            settings,
        })
    }

    pub fn signal(&self) -> &TemporalEnvelope {
        &self.signal
    }

    pub fn lo(&self) -> &TemporalEnvelope {
        &self.lo
    }

    pub fn settings(&self) -> &InterferenceSettings {
        &self.settings
    }

    /// Support of either photon, `[0, max(dT))`.
    pub fn support(&self) -> f64 {
        self.signal.total_duration().max(self.lo.total_duration())
    }

    pub(crate) fn terms(&self, t1: f64, t2: f64) -> DensityTerms {
        let a = self.signal.amplitude(t1) * self.lo.amplitude(t2);
        let b = self.signal.amplitude(t2) * self.lo.amplitude(t1);
        DensityTerms {
            direct: a.norm_sqr() + b.norm_sqr(),
            exchange: (a * b.conj()).re,
            weight: self.settings.interference_weight(t1 - t2),
        }
    }

    /// `G(t1, t2)`: density of a C click at `t1` together with a D click at `t2`.
    pub fn cross_port(&self, t1: f64, t2: f64) -> f64 {
        let x = self.terms(t1, t2);
        (0.25 * (x.direct - 2.0 * x.weight * x.exchange)).max(0.0)
    }

    /// Density of both photons reaching the same detector at `t1` and `t2`.
    pub fn same_port(&self, t1: f64, t2: f64) -> f64 {
        let x = self.terms(t1, t2);
        0.25 * (x.direct + 2.0 * x.weight * x.exchange)
    }
}

pub fn joint_coincidence_density(
    signal: &TemporalEnvelope,
    lo: &TemporalEnvelope,
    settings: &InterferenceSettings,
    t1: f64,
    t2: f64,
) -> Result<f64> {
    Ok(TwoPhotonDensity::new(signal.clone(), lo.clone(), *settings)?.cross_port(t1, t2))
}

/// Midpoint rule over `[a1, b1) × [a2, b2)` with steps no larger than `max_step`.
pub fn integrate_2d<F>(f: F, (a1, b1): (f64, f64), (a2, b2): (f64, f64), max_step: f64) -> f64
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    let n1 = ((b1 - a1) / max_step).ceil().max(1.0) as usize;
    let n2 = ((b2 - a2) / max_step).ceil().max(1.0) as usize;
    let (h1, h2) = ((b1 - a1) / n1 as f64, (b2 - a2) / n2 as f64);
    (0..n1)
        .into_par_iter()
        .map(|i| {
            let t1 = a1 + (i as f64 + 0.5) * h1;
            (0..n2)
                .map(|j| f(t1, a2 + (j as f64 + 0.5) * h2))
                .sum::<f64>()
        })
        .sum::<f64>()
        * h1
        * h2
}

/// Visibility `V = μ⟨κ⟩` of the satellite formed by bins `separation` apart.
///
/// Computed by quadrature of the cross-port density for a photon with two
/// equal, in-phase bins at 0 and `separation`: `V = 1 − ∫∫G∥ / ∫∫G⊥` over
/// the cross-bin region.
pub fn side_peak_visibility(
    settings: &InterferenceSettings,
    bin_duration: f64,
    separation: usize,
) -> Result<f64> {
    if separation == 0 {
        return Err(Error::InvalidParameter {
            name: "separation",
            reason: "satellites need bins at least one apart".into(),
        });
    }
    let mut magnitudes = vec![0.0; separation + 1];
    magnitudes[0] = 1.0;
    magnitudes[separation] = 1.0;
    let state = TimeBinQudit::new(&magnitudes, &vec![0.0; separation + 1], bin_duration)?;
    let parallel = TwoPhotonDensity::new(
        state.envelope(),
        state.envelope(),
        settings.with_polarization(Polarization::Parallel),
    )?;
    let perpendicular = TwoPhotonDensity::new(
        state.envelope(),
        state.envelope(),
        settings.with_polarization(Polarization::Perpendicular),
    )?;
    let first = (0.0, bin_duration);
    let last = (
        separation as f64 * bin_duration,
        (separation + 1) as f64 * bin_duration,
    );
    let g_par = integrate_2d(|a, b| parallel.cross_port(a, b), first, last, MAX_QUADRATURE_STEP_NS);
    let g_perp = integrate_2d(
        |a, b| perpendicular.cross_port(a, b),
        first,
        last,
        MAX_QUADRATURE_STEP_NS,
    );
    Ok(1.0 - g_par / g_perp)
}

/// Model RCP of the `±separation·T` satellite at inter-bin phase `phase`.
///
/// `background_ratio` is the ratio `b` of accidental coincidences (those
/// involving dark counts) to photon-pair coincidences in the reference
/// satellite. Accidentals add equally to both polarizations, so
///
/// ```text
/// strength = (1 + b − V cos φ) / (1 + b)
/// ```
///
/// which is `1 − V cos φ` without background.
pub fn expected_side_peak_strength(
    phase: f64,
    settings: &InterferenceSettings,
    bin_duration: f64,
    separation: usize,
    background_ratio: f64,
) -> Result<f64> {
    if !(background_ratio >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "background_ratio",
            reason: format!("must be non-negative, got {background_ratio}"),
        });
    }
    let v = side_peak_visibility(settings, bin_duration, separation)?;
    Ok(strength_from_visibility(phase, v, background_ratio))
}

pub(crate) fn strength_from_visibility(phase: f64, visibility: f64, background_ratio: f64) -> f64 {
    (1.0 + background_ratio - visibility * phase.cos()) / (1.0 + background_ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qudit::DEFAULT_BIN_DURATION_NS as T;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn qubit(phi: f64) -> TimeBinQudit {
        TimeBinQudit::equal_weight(&[0.0, phi], T).unwrap()
    }

    fn lo(d: usize) -> TimeBinQudit {
        TimeBinQudit::local_oscillator(d, T).unwrap()
    }

    fn amp(exp: &[ModePairWeight], a: OutputMode, b: OutputMode) -> Complex64 {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        exp.iter()
            .find(|w| w.out1 == a && w.out2 == b)
            .unwrap()
            .amplitude
    }

    /// Permanent of a square matrix by brute-force permutation sum.
    fn permanent(m: &[Vec<Complex64>]) -> Complex64 {
        fn go(m: &[Vec<Complex64>], row: usize, used: &mut Vec<bool>) -> Complex64 {
            if row == m.len() {
                return Complex64::new(1.0, 0.0);
            }
            let mut acc = Complex64::new(0.0, 0.0);
            for col in 0..m.len() {
                if !used[col] {
                    used[col] = true;
                    acc += m[row][col] * go(m, row + 1, used);
                    used[col] = false;
                }
            }
            acc
        }
        go(m, 0, &mut vec![false; m.len()])
    }

    /// Independent oracle: Fock amplitudes from permanents of the
    /// beam-splitter transfer matrix, summed over the input superposition.
    fn permanent_amplitude(
        signal: &TimeBinQudit,
        lo: &TimeBinQudit,
        out1: OutputMode,
        out2: OutputMode,
    ) -> Complex64 {
        // Input mode A_j goes to C_j, D_j with 1/√2, 1/√2; B_k with 1/√2, −1/√2.
        let transfer = |input_b: bool, bin: usize, out: OutputMode| -> Complex64 {
            if out.bin != bin {
                return Complex64::new(0.0, 0.0);
            }
            let sign = if input_b && out.port == Port::D { -1.0 } else { 1.0 };
            Complex64::new(sign * FRAC_1_SQRT_2, 0.0)
        };
        let mut total = Complex64::new(0.0, 0.0);
        for j in 0..signal.d() {
            for k in 0..lo.d() {
                let m = vec![
                    vec![transfer(false, j, out1), transfer(false, j, out2)],
                    vec![transfer(true, k, out1), transfer(true, k, out2)],
                ];
                let norm = if out1 == out2 { 2f64.sqrt() } else { 1.0 };
                total += signal.amplitude(j) * lo.amplitude(k) * permanent(&m) / norm;
            }
        }
        total
    }

    #[test]
    fn expansion_matches_permanent_oracle() {
        let signal = TimeBinQudit::new(&[0.4, 1.0, 0.7], &[0.3, -1.2, 2.5], T).unwrap();
        let local = TimeBinQudit::new(&[1.0, 0.2, 0.9], &[0.0, 0.8, -0.4], T).unwrap();
        let exp = two_photon_output_expansion(&signal, &local).unwrap();
        assert_eq!(exp.len(), 21);
        for w in &exp {
            let oracle = permanent_amplitude(&signal, &local, w.out1, w.out2);
            assert_abs_diff_eq!((w.amplitude - oracle).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn identical_photons_never_leave_through_opposite_ports() {
        let exp = two_photon_output_expansion(&qubit(0.0), &lo(2)).unwrap();
        for w in exp.iter().filter(|w| w.is_cross_port()) {
            assert_abs_diff_eq!(w.amplitude.norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn pi_phase_forces_cross_bin_anticoalescence() {
        let exp = two_photon_output_expansion(&qubit(PI), &lo(2)).unwrap();
        let c = |b| OutputMode::new(Port::C, b);
        let d = |b| OutputMode::new(Port::D, b);
        assert_abs_diff_eq!(amp(&exp, c(0), d(0)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(amp(&exp, c(1), d(1)).norm(), 0.0, epsilon = 1e-15);
        // Normalized prefactor ½·½ times |1 − e^{iπ}| = 2.
        assert_abs_diff_eq!(amp(&exp, c(1), d(0)).norm(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(amp(&exp, c(0), d(1)).norm(), 0.5, epsilon = 1e-15);
        // Same-port cross-bin terms carry (1 + e^{iπ}) = 0.
        assert_abs_diff_eq!(amp(&exp, c(0), c(1)).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn analytic_rcp_values() {
        assert_eq!(cross_bin_rcp_analytic(0.0), 0.0);
        assert_abs_diff_eq!(cross_bin_rcp_analytic(PI), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cross_bin_rcp_analytic(PI / 2.0), 1.0, epsilon = 1e-15);
        let enumerated = cross_bin_rcp_enumerated(&qubit(PI / 2.0), &lo(2), 0, 1).unwrap();
        assert_abs_diff_eq!(enumerated, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn enumeration_matches_analytic_on_grid() {
        for i in 0..17 {
            let phi = 2.0 * PI * i as f64 / 16.0;
            let enumerated = cross_bin_rcp_enumerated(&qubit(phi), &lo(2), 0, 1).unwrap();
            assert_abs_diff_eq!(enumerated, cross_bin_rcp_analytic(phi), epsilon = 1e-12);
        }
    }

    #[test]
    fn kernels() {
        assert_eq!(CoherenceKernel::Gaussian.eval(123.0, f64::INFINITY), 1.0);
        assert_abs_diff_eq!(CoherenceKernel::Gaussian.eval(500.0, 500.0), (-1f64).exp());
        assert_abs_diff_eq!(CoherenceKernel::Exponential.eval(-500.0, 500.0), (-1f64).exp());
        assert!("lorentzian".parse::<CoherenceKernel>().is_err());
    }

    #[test]
    fn settings_validation() {
        let mut s = InterferenceSettings::default();
        s.mode_overlap = 1.5;
        assert!(s.validate().is_err());
        s.mode_overlap = 0.5;
        s.coherence_time = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn mismatched_bin_durations_are_rejected() {
        let a = qubit(0.0).envelope();
        let b = TimeBinQudit::equal_weight(&[0.0, 0.0], 100.0).unwrap().envelope();
        let s = InterferenceSettings::default();
        assert!(matches!(
            joint_coincidence_density(&a, &b, &s, 1.0, 2.0),
            Err(Error::BinDurationMismatch(..))
        ));
    }

    #[test]
    fn identical_parallel_photons_have_zero_cross_density() {
        let env = qubit(0.7).envelope();
        let s = InterferenceSettings::ideal(Polarization::Parallel);
        for i in 0..40 {
            for j in 0..40 {
                let g = joint_coincidence_density(&env, &env, &s, i as f64 * 11.7, j as f64 * 11.3)
                    .unwrap();
                assert_eq!(g, 0.0);
            }
        }
    }

    #[test]
    fn perpendicular_density_integrates_to_half() {
        let dens = TwoPhotonDensity::new(
            qubit(0.0).envelope(),
            lo(2).envelope(),
            InterferenceSettings::ideal(Polarization::Perpendicular),
        )
        .unwrap();
        let total = integrate_2d(|a, b| dens.cross_port(a, b), (0.0, 2.0 * T), (0.0, 2.0 * T), 1.0);
        assert_abs_diff_eq!(total, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn pi_phase_parallel_density_lives_across_bins() {
        let dens = TwoPhotonDensity::new(
            qubit(PI).envelope(),
            lo(2).envelope(),
            InterferenceSettings::ideal(Polarization::Parallel),
        )
        .unwrap();
        for i in 1..23 {
            for j in 1..23 {
                let (t1, t2) = (i as f64 * 10.0, j as f64 * 10.0);
                assert_abs_diff_eq!(dens.cross_port(t1, t2), 0.0, epsilon = 1e-18);
                assert_abs_diff_eq!(dens.cross_port(t1 + T, t2 + T), 0.0, epsilon = 1e-18);
            }
        }
        let bin0 = (0.0, T);
        let bin1 = (T, 2.0 * T);
        let cross = integrate_2d(|a, b| dens.cross_port(a, b), bin0, bin1, 1.0)
            + integrate_2d(|a, b| dens.cross_port(a, b), bin1, bin0, 1.0);
        assert_abs_diff_eq!(cross, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn all_outcomes_sum_to_one() {
        let dens = TwoPhotonDensity::new(
            TimeBinQudit::equal_weight(&[0.0, 1.1, 2.9], T).unwrap().envelope(),
            lo(3).envelope(),
            InterferenceSettings {
                mode_overlap: 0.8,
                ..InterferenceSettings::default()
            },
        )
        .unwrap();
        let span = (0.0, 3.0 * T);
        let cross = integrate_2d(|a, b| dens.cross_port(a, b), span, span, 1.0);
        // Ordered pairs: ½∫∫ per detector, two detectors.
        let same = integrate_2d(|a, b| dens.same_port(a, b), span, span, 1.0);
        assert_abs_diff_eq!(cross + same, 1.0, epsilon = 1e-9);
        assert!(cross > 0.0 && cross <= 1.0);
    }

    #[test]
    fn ideal_side_peak_model_limits() {
        let s = InterferenceSettings::ideal(Polarization::Parallel);
        assert_abs_diff_eq!(expected_side_peak_strength(PI, &s, T, 1, 0.0).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(expected_side_peak_strength(0.0, &s, T, 1, 0.0).unwrap(), 0.0, epsilon = 1e-12);
        assert!(expected_side_peak_strength(0.0, &s, T, 1, -0.1).is_err());
        assert!(side_peak_visibility(&s, T, 0).is_err());
    }

    #[test]
    fn finite_coherence_shrinks_the_side_peak_range() {
        let s = InterferenceSettings::default();
        let v = side_peak_visibility(&s, T, 1).unwrap();
        // Envelope-weighted Gaussian average, checked against a direct oracle.
        let w = |t: f64| crate::qudit::single_bin_mode(t, T).powi(2);
        let oracle = integrate_2d(
            |a, b| w(a) * w(b - T) * (-((a - b) / 500.0).powi(2)).exp(),
            (0.0, T),
            (T, 2.0 * T),
            0.5,
        );
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-6);
        assert!(v > 0.7 && v < 0.9, "{v}");
        let top = expected_side_peak_strength(PI, &s, T, 1, 0.0).unwrap();
        let bottom = expected_side_peak_strength(0.0, &s, T, 1, 0.0).unwrap();
        assert!(top < 2.0 && bottom > 0.0);
    }

    #[test]
    fn visibility_grows_with_coherence_time() {
        let mut previous = 0.0;
        for tau_c in [50.0, 150.0, 300.0, 500.0, 1000.0, 5000.0] {
            let s = InterferenceSettings {
                coherence_time: tau_c,
                ..InterferenceSettings::default()
            };
            let v = side_peak_visibility(&s, T, 1).unwrap();
            assert!(v >= previous, "τc = {tau_c}: {v} < {previous}");
            previous = v;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cross_density_is_symmetric_and_non_negative(
            phases in prop::collection::vec(-PI..PI, 3),
            mu in 0.0f64..=1.0,
            tau_c in 10.0f64..2000.0,
            t1 in -20.0f64..720.0,
            t2 in -20.0f64..720.0,
        ) {
            let settings = InterferenceSettings {
                mode_overlap: mu,
                coherence_time: tau_c,
                ..InterferenceSettings::default()
            };
            let dens = TwoPhotonDensity::new(
                TimeBinQudit::equal_weight(&phases, T).unwrap().envelope(),
                lo(3).envelope(),
                settings,
            ).unwrap();
            let g = dens.cross_port(t1, t2);
            prop_assert!(g >= 0.0);
            prop_assert!((g - dens.cross_port(t2, t1)).abs() <= 1e-18);
        }

        #[test]
        fn zero_overlap_reproduces_perpendicular(
            phases in prop::collection::vec(-PI..PI, 2),
            t1 in 0.0f64..460.0,
            t2 in 0.0f64..460.0,
        ) {
            let signal = TimeBinQudit::equal_weight(&phases, T).unwrap().envelope();
            let local = lo(2).envelope();
            let parallel = InterferenceSettings { mode_overlap: 0.0, ..InterferenceSettings::default() };
            let perpendicular = InterferenceSettings::ideal(Polarization::Perpendicular);
            let a = joint_coincidence_density(&signal, &local, &parallel, t1, t2).unwrap();
            let b = joint_coincidence_density(&signal, &local, &perpendicular, t1, t2).unwrap();
            prop_assert!((a - b).abs() <= 1e-15);
        }

        #[test]
        fn expansion_is_normalized(
            mags_s in prop::collection::vec(0.05f64..1.0, 4),
            phases_s in prop::collection::vec(-PI..PI, 4),
            mags_l in prop::collection::vec(0.05f64..1.0, 4),
            phases_l in prop::collection::vec(-PI..PI, 4),
        ) {
            let s = TimeBinQudit::new(&mags_s, &phases_s, T).unwrap();
            let l = TimeBinQudit::new(&mags_l, &phases_l, T).unwrap();
            let total: f64 = two_photon_output_expansion(&s, &l).unwrap().iter().map(|w| w.probability()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
