//! Coincidence analysis of time-tagged detection records.
//!
//! Coincidences are C–D click pairs inside the same trigger window. They are
//! histogrammed against the detection-time difference `τ = t_C − t_D` and,
//! using the time-bin structure of the photons, split between virtual
//! detectors `C_i`, `D_j` (physical detector × time bin). Every run is
//! normalized by its own accidental rate: the mean number of C–D pairs
//! between windows one or more repetition periods apart.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::optics::{OutputMode, Port};
use crate::qudit::bin_index;
use crate::sim::{DetectionEvent, Origin};

/// Where the photon bins sit inside each trigger window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowGeometry {
    pub period: f64,
    /// Start of the first bin relative to the start of the window.
    pub offset: f64,
    pub bin_duration: f64,
    pub d: usize,
}

impl WindowGeometry {
    pub fn new(period: f64, bin_duration: f64, d: usize) -> Self {
        Self {
            period,
            offset: 0.0,
            bin_duration,
            d,
        }
    }

    pub fn window_start(&self, trial: u64) -> f64 {
        trial as f64 * self.period + self.offset
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0 && self.bin_duration > 0.0) {
            return Err(Error::InvalidParameter {
                name: "geometry",
                reason: "period and bin duration must be positive".into(),
            });
        }
        if self.d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    /// Raw histogram resolution in ns.
    pub tau_bin_width: f64,
    /// Width of the sliding-sum presentation window in ns.
    pub window_width: f64,
    /// Histogram covers `[−max_tau, max_tau)`.
    pub max_tau: f64,
    /// Cross-period reference uses window offsets `1..=reference_offsets`.
    pub reference_offsets: usize,
    /// Debug switch: drop events tagged as dark counts.
    pub exclude_dark: bool,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            tau_bin_width: 1.0,
            window_width: 60.0,
            max_tau: 1000.0,
            reference_offsets: 4,
            exclude_dark: false,
        }
    }
}

impl AnalysisParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.into(),
            })
        };
        if !(self.tau_bin_width > 0.0) {
            return bad("tau_bin_width", "must be positive");
        }
        if !(self.window_width > 0.0) {
            return bad("window_width", "must be positive");
        }
        if !(self.max_tau > 0.0) {
            return bad("max_tau", "must be positive");
        }
        if self.reference_offsets == 0 {
            return bad("reference_offsets", "need at least one offset");
        }
        Ok(())
    }
}

/// Maps a click onto its virtual detector, or `None` outside the photon.
///
/// Bin `k` covers `[start + kT, start + (k+1)T)`.
pub fn assign_virtual_detector(
    event: &DetectionEvent,
    window_start: f64,
    bin_duration: f64,
    d: usize,
) -> Option<OutputMode> {
    bin_index(event.timestamp - window_start, bin_duration, d)
        .map(|bin| OutputMode::new(event.detector, bin))
}

/// Events grouped by trigger window, in window order.
pub(crate) fn group_by_window(
    events: &[DetectionEvent],
    exclude_dark: bool,
) -> Vec<(u64, Vec<&DetectionEvent>)> {
    let mut refs: Vec<&DetectionEvent> = events
        .iter()
        .filter(|e| !(exclude_dark && e.origin == Origin::Dark))
        .collect();
    refs.sort_by(|a, b| {
        a.trial_index
            .cmp(&b.trial_index)
            .then(a.timestamp.total_cmp(&b.timestamp))
    });
    let mut out: Vec<(u64, Vec<&DetectionEvent>)> = Vec::new();
    for e in refs {
        match out.last_mut() {
            Some((trial, group)) if *trial == e.trial_index => group.push(e),
            _ => out.push((e.trial_index, vec![e])),
        }
    }
    out
}

/// Virtual-detector cells `(i, j)` of every C_i–D_j coincidence, per window.
pub(crate) fn window_cells(
    events: &[DetectionEvent],
    geometry: &WindowGeometry,
    exclude_dark: bool,
) -> Vec<Vec<(usize, usize)>> {
    group_by_window(events, exclude_dark)
        .into_iter()
        .map(|(trial, group)| {
            let start = geometry.window_start(trial);
            let assign = |e: &DetectionEvent| {
                assign_virtual_detector(e, start, geometry.bin_duration, geometry.d)
            };
            let mut cells = Vec::new();
            for c in group.iter().filter(|e| e.detector == Port::C) {
                let Some(ci) = assign(c) else { continue };
                for d in group.iter().filter(|e| e.detector == Port::D) {
                    if let Some(dj) = assign(d) {
                        cells.push((ci.bin, dj.bin));
                    }
                }
            }
            cells
        })
        .collect()
}

/// Accidental-coincidence reference of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Mean number of C–D pairs between windows a whole number of periods
    /// apart; estimates the number of photon pairs of the run.
    pub mean_reference: f64,
    /// Raw reference pairs summed over all offsets and both orders.
    pub reference_total: u64,
    pub n_offsets: usize,
}

impl Normalization {
    pub fn relative_error(&self) -> f64 {
        1.0 / (self.reference_total as f64).sqrt()
    }
}

/// Cross-period normalization from the per-window click counts.
///
/// For each offset `k` the C clicks of window `n` are paired with the D
/// clicks of window `n + k` (and vice versa); counts are rescaled by
/// `N / (N − k)` for the windows lost at the end of the record.
pub fn reference_normalization(
    events: &[DetectionEvent],
    offsets: usize,
    exclude_dark: bool,
) -> Result<Normalization> {
    let Some(last) = events.iter().map(|e| e.trial_index).max() else {
        return Err(Error::NoReferenceCoincidences);
    };
    let n_windows = last as usize + 1;
    let mut c = vec![0u64; n_windows];
    let mut d = vec![0u64; n_windows];
    for e in events.iter().filter(|e| !(exclude_dark && e.origin == Origin::Dark)) {
        match e.detector {
            Port::C => c[e.trial_index as usize] += 1,
            Port::D => d[e.trial_index as usize] += 1,
        }
    }
    let mut total = 0u64;
    let mut scaled = 0.0;
    let mut used = 0usize;
    for k in 1..=offsets.min(n_windows.saturating_sub(1)) {
        let forward: u64 = (0..n_windows - k).map(|n| c[n] * d[n + k]).sum();
        let backward: u64 = (0..n_windows - k).map(|n| d[n] * c[n + k]).sum();
        let rescale = n_windows as f64 / (n_windows - k) as f64;
        total += forward + backward;
        scaled += (forward + backward) as f64 * rescale;
        used += 2;
    }
    if total == 0 {
        return Err(Error::NoReferenceCoincidences);
    }
    Ok(Normalization {
        mean_reference: scaled / used as f64,
        reference_total: total,
        n_offsets: used / 2,
    })
}

/// Coincidence counts against the detection-time difference `τ = t_C − t_D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub geometry: WindowGeometry,
    pub tau_bin_width: f64,
    pub window_width: f64,
    pub max_tau: f64,
    /// Bin `i` covers `[−max_tau + i·w, −max_tau + (i+1)·w)`.
    pub counts: Vec<u64>,
    /// In-photon coincidences keyed by time-bin separation `bin(C) − bin(D)`.
    pub separation_counts: BTreeMap<i64, u64>,
    pub normalization: Option<Normalization>,
}

impl CoincidenceHistogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        -self.max_tau + (i as f64 + 0.5) * self.tau_bin_width
    }

    fn bin_of(&self, tau: f64) -> Option<usize> {
        let i = ((tau + self.max_tau) / self.tau_bin_width).floor();
        (i >= 0.0 && (i as usize) < self.counts.len()).then_some(i as usize)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Coincidences whose bin separation is `separation`.
    pub fn separation_count(&self, separation: i64) -> u64 {
        self.separation_counts.get(&separation).copied().unwrap_or(0)
    }

    /// Raw counts summed over bins whose centres lie in `[lo, hi)`.
    pub fn integrate(&self, lo: f64, hi: f64) -> u64 {
        (0..self.counts.len())
            .filter(|&i| {
                let c = self.bin_center(i);
                c >= lo && c < hi
            })
            .map(|i| self.counts[i])
            .sum()
    }

    /// Sliding sums over `[τ − W/2, τ + W/2)` at every bin centre.
    pub fn windowed_counts(&self) -> Vec<u64> {
        let half = ((self.window_width / self.tau_bin_width) / 2.0).round() as usize;
        let mut prefix = Vec::with_capacity(self.counts.len() + 1);
        prefix.push(0u64);
        for &c in &self.counts {
            prefix.push(prefix.last().unwrap() + c);
        }
        (0..self.counts.len())
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half).min(self.counts.len());
                prefix[hi] - prefix[lo]
            })
            .collect()
    }

    fn scale(&self) -> Result<f64> {
        self.normalization
            .map(|n| n.mean_reference)
            .ok_or(Error::NoReferenceCoincidences)
    }

    /// Coincidence probability density in 1/ns.
    pub fn density(&self) -> Result<Vec<f64>> {
        let norm = self.scale()?;
        Ok(self
            .counts
            .iter()
            .map(|&c| c as f64 / (norm * self.tau_bin_width))
            .collect())
    }

    /// The sliding-window trace, expressed as a density averaged over the window.
    pub fn windowed_density(&self) -> Result<Vec<f64>> {
        let norm = self.scale()?;
        Ok(self
            .windowed_counts()
            .into_iter()
            .map(|c| c as f64 / (norm * self.window_width))
            .collect())
    }

    /// Coincidence probability per analyzed photon pair within `[lo, hi)`.
    pub fn probability(&self, lo: f64, hi: f64) -> Result<f64> {
        Ok(self.integrate(lo, hi) as f64 / self.scale()?)
    }
}

pub fn build_histogram(
    events: &[DetectionEvent],
    geometry: &WindowGeometry,
    params: &AnalysisParams,
) -> Result<CoincidenceHistogram> {
    geometry.validate()?;
    params.validate()?;
    let n_bins = (2.0 * params.max_tau / params.tau_bin_width).ceil() as usize;
    let mut hist = CoincidenceHistogram {
        geometry: *geometry,
        tau_bin_width: params.tau_bin_width,
        window_width: params.window_width,
        max_tau: params.max_tau,
        counts: vec![0; n_bins],
        separation_counts: BTreeMap::new(),
        normalization: None,
    };
    for (trial, group) in group_by_window(events, params.exclude_dark) {
        let start = geometry.window_start(trial);
        for c in group.iter().filter(|e| e.detector == Port::C) {
            for d in group.iter().filter(|e| e.detector == Port::D) {
                if let Some(i) = hist.bin_of(c.timestamp - d.timestamp) {
                    hist.counts[i] += 1;
                }
                let vc = assign_virtual_detector(c, start, geometry.bin_duration, geometry.d);
                let vd = assign_virtual_detector(d, start, geometry.bin_duration, geometry.d);
                if let (Some(vc), Some(vd)) = (vc, vd) {
                    *hist
                        .separation_counts
                        .entry(vc.bin as i64 - vd.bin as i64)
                        .or_insert(0) += 1;
                }
            }
        }
    }
    Ok(hist)
}

pub fn normalize_histogram(
    mut hist: CoincidenceHistogram,
    events: &[DetectionEvent],
    params: &AnalysisParams,
) -> Result<CoincidenceHistogram> {
    hist.normalization = Some(reference_normalization(
        events,
        params.reference_offsets,
        params.exclude_dark,
    )?);
    Ok(hist)
}

/// Relative coincidence probabilities between virtual detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcpMatrix {
    pub d: usize,
    /// `entries[i][j]`: RCP between `C_i` and `D_j`; `None` where the
    /// reference cell is empty.
    pub entries: Vec<Vec<Option<f64>>>,
    pub sigma: Vec<Vec<Option<f64>>>,
    pub counts_parallel: Vec<Vec<u64>>,
    pub counts_perp: Vec<Vec<u64>>,
    pub norm_parallel: Normalization,
    pub norm_perp: Normalization,
}

/// How the two orientations `(j, k)` and `(k, j)` of a bin pair combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SatelliteCombine {
    #[default]
    Mean,
    Max,
}

/// A ratio of two normalized Poisson counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRatio {
    pub value: f64,
    pub sigma: f64,
    pub parallel_counts: u64,
    pub reference_counts: u64,
}

impl CountRatio {
    pub fn new(
        parallel: u64,
        norm_parallel: &Normalization,
        reference: u64,
        norm_perp: &Normalization,
    ) -> Option<Self> {
        if reference == 0 {
            return None;
        }
        let scale = norm_perp.mean_reference / (norm_parallel.mean_reference * reference as f64);
        let value = parallel as f64 * scale;
        // An empty numerator still carries a one-count Poisson uncertainty.
        let numerator = scale * (parallel.max(1) as f64).sqrt();
        let relative = 1.0 / reference as f64
            + norm_parallel.relative_error().powi(2)
            + norm_perp.relative_error().powi(2);
        let sigma = (numerator * numerator + value * value * relative).sqrt();
        Some(Self {
            value,
            sigma,
            parallel_counts: parallel,
            reference_counts: reference,
        })
    }
}

fn cell_counts(
    events: &[DetectionEvent],
    geometry: &WindowGeometry,
    exclude_dark: bool,
) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; geometry.d]; geometry.d];
    for cells in window_cells(events, geometry, exclude_dark) {
        for (i, j) in cells {
            counts[i][j] += 1;
        }
    }
    counts
}

impl RcpMatrix {
    pub fn from_counts(
        counts_parallel: Vec<Vec<u64>>,
        counts_perp: Vec<Vec<u64>>,
        norm_parallel: Normalization,
        norm_perp: Normalization,
    ) -> Self {
        let d = counts_parallel.len();
        let mut entries = vec![vec![None; d]; d];
        let mut sigma = vec![vec![None; d]; d];
        for i in 0..d {
            for j in 0..d {
                if let Some(r) = CountRatio::new(
                    counts_parallel[i][j],
                    &norm_parallel,
                    counts_perp[i][j],
                    &norm_perp,
                ) {
                    entries[i][j] = Some(r.value);
                    sigma[i][j] = Some(r.sigma);
                }
            }
        }
        Self {
            d,
            entries,
            sigma,
            counts_parallel,
            counts_perp,
            norm_parallel,
            norm_perp,
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> Result<f64> {
        self.entries[i][j].ok_or(Error::UndefinedCell(i, j))
    }

    /// RCP of the bin pair `{j, k}` with its uncertainty.
    pub fn pair_rcp(&self, j: usize, k: usize, combine: SatelliteCombine) -> Result<CountRatio> {
        let cell = |a: usize, b: usize| {
            CountRatio::new(
                self.counts_parallel[a][b],
                &self.norm_parallel,
                self.counts_perp[a][b],
                &self.norm_perp,
            )
            .ok_or(Error::UndefinedCell(a, b))
        };
        let (a, b) = (cell(j, k)?, cell(k, j)?);
        Ok(match combine {
            SatelliteCombine::Max => {
                if a.value >= b.value {
                    a
                } else {
                    b
                }
            }
            SatelliteCombine::Mean => CountRatio {
                value: 0.5 * (a.value + b.value),
                sigma: 0.5 * (a.sigma.powi(2) + b.sigma.powi(2)).sqrt(),
                parallel_counts: a.parallel_counts + b.parallel_counts,
                reference_counts: a.reference_counts + b.reference_counts,
            },
        })
    }

    pub fn total_parallel(&self) -> u64 {
        self.counts_parallel.iter().flatten().sum()
    }
}

pub fn rcp_matrix(
    events_parallel: &[DetectionEvent],
    events_perp: &[DetectionEvent],
    geometry: &WindowGeometry,
    params: &AnalysisParams,
) -> Result<RcpMatrix> {
    geometry.validate()?;
    params.validate()?;
    let norm_parallel =
        reference_normalization(events_parallel, params.reference_offsets, params.exclude_dark)?;
    let norm_perp =
        reference_normalization(events_perp, params.reference_offsets, params.exclude_dark)?;
    Ok(RcpMatrix::from_counts(
        cell_counts(events_parallel, geometry, params.exclude_dark),
        cell_counts(events_perp, geometry, params.exclude_dark),
        norm_parallel,
        norm_perp,
    ))
}

/// Relative strength of one satellite of the coincidence histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidePeak {
    pub tau: f64,
    pub separation: i64,
    pub strength: f64,
    pub sigma: f64,
    pub parallel_counts: u64,
    pub reference_counts: u64,
}

fn both_normalizations(
    parallel: &CoincidenceHistogram,
    perp: &CoincidenceHistogram,
) -> Result<(Normalization, Normalization)> {
    match (parallel.normalization, perp.normalization) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::NoReferenceCoincidences),
    }
}

fn side_peak(
    tau: f64,
    separation: i64,
    parallel: u64,
    reference: u64,
    norms: &(Normalization, Normalization),
) -> Result<SidePeak> {
    let r = CountRatio::new(parallel, &norms.0, reference, &norms.1)
        .ok_or(Error::ZeroReference { tau_ns: tau })?;
    Ok(SidePeak {
        tau,
        separation,
        strength: r.value,
        sigma: r.sigma,
        parallel_counts: parallel,
        reference_counts: reference,
    })
}

/// Strength of every satellite at `τ = ±kT`, `k = 1..d`, in order of `τ`.
///
/// Each satellite collects the coincidences whose virtual detectors are `k`
/// bins apart, so the tails of neighbouring peaks do not leak into it.
pub fn side_peak_strength(
    parallel: &CoincidenceHistogram,
    perp: &CoincidenceHistogram,
) -> Result<Vec<SidePeak>> {
    let norms = both_normalizations(parallel, perp)?;
    let d = parallel.geometry.d as i64;
    let t = parallel.geometry.bin_duration;
    (-(d - 1)..d)
        .filter(|&k| k != 0)
        .map(|k| {
            side_peak(
                k as f64 * t,
                k,
                parallel.separation_count(k),
                perp.separation_count(k),
                &norms,
            )
        })
        .collect()
}

/// Pooled strength of the `±separation` satellites.
pub fn combined_side_peak(
    parallel: &CoincidenceHistogram,
    perp: &CoincidenceHistogram,
    separation: usize,
) -> Result<SidePeak> {
    let norms = both_normalizations(parallel, perp)?;
    let k = separation as i64;
    side_peak(
        separation as f64 * parallel.geometry.bin_duration,
        k,
        parallel.separation_count(k) + parallel.separation_count(-k),
        perp.separation_count(k) + perp.separation_count(-k),
        &norms,
    )
}

/// Satellite strengths from fixed τ windows `[kT − T/2, kT + T/2)`.
///
/// Includes the tails of the neighbouring peaks (about 4.7 % of a sin²
/// autocorrelation lies beyond `±T/2`), so the ideal anti-coalescence value
/// comes out near 1.9 rather than 2.
pub fn side_peak_strength_windowed(
    parallel: &CoincidenceHistogram,
    perp: &CoincidenceHistogram,
) -> Result<Vec<SidePeak>> {
    let norms = both_normalizations(parallel, perp)?;
    let d = parallel.geometry.d as i64;
    let t = parallel.geometry.bin_duration;
    (-(d - 1)..d)
        .filter(|&k| k != 0)
        .map(|k| {
            let tau = k as f64 * t;
            let (lo, hi) = (tau - t / 2.0, tau + t / 2.0);
            side_peak(tau, k, parallel.integrate(lo, hi), perp.integrate(lo, hi), &norms)
        })
        .collect()
}

/// A measured side-peak strength at one phase setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub phi: f64,
    pub strength: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chi2Outcome {
    pub statistic: f64,
    pub dof: usize,
    /// 95 % quantile of χ² with `dof` degrees of freedom.
    pub critical: f64,
    pub pass: bool,
}

/// Pearson χ² of measured strengths against a model curve, judged at 95 %.
pub fn chi2_model_test<F>(measured: &[PhasePoint], model: F) -> Result<Chi2Outcome>
where
    F: Fn(f64) -> f64,
{
    if measured.is_empty() {
        return Err(Error::InvalidInput("no data points for the χ² test".into()));
    }
    let mut statistic = 0.0;
    for (i, p) in measured.iter().enumerate() {
        if !(p.sigma > 0.0 && p.sigma.is_finite()) {
            return Err(Error::DegenerateSigma(i));
        }
        statistic += ((p.strength - model(p.phi)) / p.sigma).powi(2);
    }
    let dof = measured.len();
    let critical = ChiSquared::new(dof as f64)
        .map_err(|e| Error::InvalidInput(e.to_string()))?
        .inverse_cdf(0.95);
    Ok(Chi2Outcome {
        statistic,
        dof,
        critical,
        pass: statistic <= critical,
    })
}
