//! Partial density-matrix reconstruction from homodyne statistics and the
//! state-preparation fidelity.
//!
//! The diagonal comes from the distinguishable reference: `σ_kk ∝ √N_k`,
//! where `N_k` counts same-bin coincidences in bin `k`. The magnitude of an
//! off-diagonal element comes from the side-peak visibility of its bin pair,
//! `|σ_jk| = √(V_jk / 2) · √(σ_jj σ_kk)`, with 2 the largest visibility a
//! side peak can show. Its phase is *not* measured: it is copied from the
//! prepared target, on the assumption that signal and LO differ only in
//! phase.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correlator::{
    rcp_matrix, window_cells, AnalysisParams, CountRatio, Normalization, RcpMatrix,
    SatelliteCombine, WindowGeometry,
};
use crate::error::{Error, Result};
use crate::qudit::TimeBinQudit;
use crate::sim::DetectionEvent;

/// Largest side-peak visibility: the RCP swings over the full `0 → 2` range.
pub const MAX_VISIBILITY: f64 = 2.0;

/// Pairs whose target phase difference is this close to ±π/2 carry no
/// magnitude information in the RCP.
const MIN_PHASE_CONTRAST: f64 = 0.1;

pub const ASSUMPTION_TARGET_PHASES: &str =
    "target-phase off-diagonals: off-diagonal phases copied from the prepared state, not measured";

/// One side-peak visibility with its statistical weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityMeasurement {
    pub value: f64,
    pub std_error: f64,
    /// Coincidences forming the side peaks behind this value.
    pub n_correlations: u64,
}

impl VisibilityMeasurement {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            n_correlations: 0,
        }
    }

    /// Poisson error `V/√N` from the side-peak counts alone.
    pub fn from_counts(value: f64, n_correlations: u64) -> Self {
        let std_error = if n_correlations > 0 {
            value / (n_correlations as f64).sqrt()
        } else {
            0.0
        };
        Self {
            value,
            std_error,
            n_correlations,
        }
    }
}

/// Inputs a reconstruction was computed from, kept for error propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCounts {
    pub diagonal: Vec<u64>,
    pub visibilities: BTreeMap<(usize, usize), VisibilityMeasurement>,
    pub target_phases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrixEstimate {
    pub d: usize,
    pub matrix: DMatrix<Complex64>,
    pub source: Option<SourceCounts>,
}

impl DensityMatrixEstimate {
    /// Wraps a given matrix (no count information, so no error propagation).
    pub fn from_matrix(matrix: DMatrix<Complex64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        Ok(Self {
            d: matrix.nrows(),
            matrix,
            source: None,
        })
    }

    /// From a real matrix given row by row.
    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.len(),
            });
        }
        Self::from_matrix(DMatrix::from_fn(d, d, |i, j| Complex64::new(rows[i][j], 0.0)))
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    pub fn is_hermitian(&self, tolerance: f64) -> bool {
        (0..self.d).all(|i| {
            (0..self.d).all(|j| (self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm() <= tolerance)
        })
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect()
    }

    /// Reported, not enforced: the linear reconstruction may leave the PSD cone.
    pub fn is_positive_semidefinite(&self) -> bool {
        self.eigenvalues().iter().all(|&l| l >= -1e-12)
    }

    /// Nearest PSD matrix of unit trace: negative eigenvalues clipped to zero.
    pub fn project_to_psd(&self) -> Self {
        let eig = self.matrix.clone().symmetric_eigen();
        let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        let diag = DMatrix::from_fn(self.d, self.d, |i, j| {
            if i == j {
                Complex64::new(clipped[i] / total, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let v = &eig.eigenvectors;
        Self {
            d: self.d,
            matrix: v * diag * v.adjoint(),
            source: self.source.clone(),
        }
    }

    /// `Re⟨ψ|σ|ψ⟩`.
    pub fn expectation(&self, psi: &TimeBinQudit) -> f64 {
        let c = psi.amplitudes();
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.d {
            for j in 0..self.d {
                acc += c[i].conj() * self.matrix[(i, j)] * c[j];
            }
        }
        acc.re
    }
}

fn build_matrix(
    diagonal_weights: &[f64],
    visibilities: &BTreeMap<(usize, usize), f64>,
    phases: &[f64],
) -> DMatrix<Complex64> {
    let d = diagonal_weights.len();
    let roots: Vec<f64> = diagonal_weights.iter().map(|n| n.max(0.0).sqrt()).collect();
    let total: f64 = roots.iter().sum();
    let diag: Vec<f64> = roots.iter().map(|r| r / total).collect();
    let mut m = DMatrix::from_element(d, d, Complex64::new(0.0, 0.0));
    for k in 0..d {
        m[(k, k)] = Complex64::new(diag[k], 0.0);
    }
    for (&(j, k), &v) in visibilities {
        let magnitude = (v.max(0.0) / MAX_VISIBILITY).sqrt() * (diag[j] * diag[k]).sqrt();
        let element = Complex64::from_polar(magnitude, phases[j] - phases[k]);
        m[(j, k)] = element;
        m[(k, j)] = element.conj();
    }
    m
}

fn canonical_pairs(
    d: usize,
    visibilities: &BTreeMap<(usize, usize), VisibilityMeasurement>,
) -> Result<BTreeMap<(usize, usize), VisibilityMeasurement>> {
    let mut out = BTreeMap::new();
    for (&(a, b), &v) in visibilities {
        if a >= d || b >= d || a == b {
            return Err(Error::InvalidInput(format!("bin pair ({a}, {b}) for d = {d}")));
        }
        if !v.value.is_finite() || v.value < 0.0 {
            return Err(Error::InvalidInput(format!(
                "visibility {} for bin pair ({a}, {b})",
                v.value
            )));
        }
        if v.value > MAX_VISIBILITY + 1e-12 {
            return Err(Error::VisibilityOutOfRange {
                j: a,
                k: b,
                value: v.value,
            });
        }
        out.insert((a.min(b), a.max(b)), v);
    }
    Ok(out)
}

/// Linear reconstruction of the qudit density matrix.
///
/// Bin pairs missing from `visibilities` get no coherence.
pub fn reconstruct_density_matrix(
    diagonal_counts: &[u64],
    visibilities: &BTreeMap<(usize, usize), VisibilityMeasurement>,
    target_phases: &[f64],
) -> Result<DensityMatrixEstimate> {
    let d = diagonal_counts.len();
    if target_phases.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: target_phases.len(),
        });
    }
    if diagonal_counts.iter().all(|&n| n == 0) {
        return Err(Error::InvalidInput("all diagonal counts are zero".into()));
    }
    let visibilities = canonical_pairs(d, visibilities)?;
    let weights: Vec<f64> = diagonal_counts.iter().map(|&n| n as f64).collect();
    let values = visibilities.iter().map(|(&p, v)| (p, v.value)).collect();
    Ok(DensityMatrixEstimate {
        d,
        matrix: build_matrix(&weights, &values, target_phases),
        source: Some(SourceCounts {
            diagonal: diagonal_counts.to_vec(),
            visibilities,
            target_phases: target_phases.to_vec(),
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityResult {
    pub fidelity: f64,
    pub std_error: f64,
    pub n_correlations: u64,
    /// `⟨ψ|σ|ψ⟩` fell outside `[0, 1]` and was clamped.
    pub clamped: bool,
}

fn clamped_fidelity(overlap: f64) -> (f64, bool) {
    if (0.0..=1.0).contains(&overlap) {
        (overlap.sqrt(), false)
    } else {
        warn!("⟨ψ|σ|ψ⟩ = {overlap} lies outside [0, 1]; clamping");
        (overlap.clamp(0.0, 1.0).sqrt(), true)
    }
}

/// First-order propagation of the Poisson and visibility errors into `F`.
fn delta_method(reference: &TimeBinQudit, source: &SourceCounts) -> f64 {
    let weights: Vec<f64> = source.diagonal.iter().map(|&n| n as f64).collect();
    let values: BTreeMap<(usize, usize), f64> =
        source.visibilities.iter().map(|(&p, v)| (p, v.value)).collect();
    let fidelity_of = |w: &[f64], v: &BTreeMap<(usize, usize), f64>| {
        let m = build_matrix(w, v, &source.target_phases);
        let est = DensityMatrixEstimate {
            d: w.len(),
            matrix: m,
            source: None,
        };
        est.expectation(reference).clamp(0.0, 1.0).sqrt()
    };

    let mut variance = 0.0;
    for k in 0..weights.len() {
        if weights[k] == 0.0 {
            continue;
        }
        let h = 1e-4 * weights[k];
        let (mut up, mut down) = (weights.clone(), weights.clone());
        up[k] += h;
        down[k] -= h;
        let slope = (fidelity_of(&up, &values) - fidelity_of(&down, &values)) / (2.0 * h);
        variance += slope * slope * weights[k];
    }
    for (&pair, v) in &source.visibilities {
        if v.std_error == 0.0 {
            continue;
        }
        let h = 1e-6_f64.max(1e-4 * v.value);
        let mut up = values.clone();
        up.insert(pair, v.value + h);
        let slope = if v.value > h {
            let mut down = values.clone();
            down.insert(pair, v.value - h);
            (fidelity_of(&weights, &up) - fidelity_of(&weights, &down)) / (2.0 * h)
        } else {
            (fidelity_of(&weights, &up) - fidelity_of(&weights, &values)) / h
        };
        variance += (slope * v.std_error).powi(2);
    }
    variance.sqrt()
}

/// `F = √⟨ψ|σ|ψ⟩` with its propagated standard error.
pub fn fidelity(reference: &TimeBinQudit, sigma: &DensityMatrixEstimate) -> Result<FidelityResult> {
    if reference.d() != sigma.d {
        return Err(Error::DimensionMismatch {
            expected: sigma.d,
            found: reference.d(),
        });
    }
    let (fidelity, clamped) = clamped_fidelity(sigma.expectation(reference));
    let (std_error, n_correlations) = match &sigma.source {
        Some(source) => (
            delta_method(reference, source),
            source.visibilities.values().map(|v| v.n_correlations).sum(),
        ),
        None => (0.0, 0),
    };
    Ok(FidelityResult {
        fidelity,
        std_error,
        n_correlations,
        clamped,
    })
}

/// Converts the RCP of a bin pair into a side-peak visibility in `[0, 2]`.
///
/// The RCP follows `1 − (V/2)·cos Δφ`, so `V = 2(1 − r)/cos Δφ` where `Δφ`
/// is the prepared phase difference of the pair.
pub fn visibility_from_rcp(rcp: &CountRatio, phase_difference: f64) -> Result<VisibilityMeasurement> {
    let contrast = phase_difference.cos();
    if contrast.abs() < MIN_PHASE_CONTRAST {
        return Err(Error::InvalidInput(format!(
            "phase difference {phase_difference} rad is too close to ±π/2 to measure a visibility"
        )));
    }
    let raw = 2.0 * (1.0 - rcp.value) / contrast;
    Ok(VisibilityMeasurement {
        value: raw.clamp(0.0, MAX_VISIBILITY),
        std_error: 2.0 * rcp.sigma / contrast.abs(),
        n_correlations: rcp.parallel_counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TomographyOptions {
    pub combine: SatelliteCombine,
    /// Off by default: the raw linear reconstruction is reported.
    pub project_psd: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub rcp: RcpMatrix,
    pub estimate: DensityMatrixEstimate,
    pub fidelity: FidelityResult,
}

impl PipelineResult {
    pub fn assumptions(&self, options: &TomographyOptions) -> Vec<String> {
        let mut out = vec![ASSUMPTION_TARGET_PHASES.to_string()];
        out.push(match options.combine {
            SatelliteCombine::Mean => "visibility from the mean of the (j,k) and (k,j) satellites".into(),
            SatelliteCombine::Max => "visibility from the larger of the (j,k) and (k,j) satellites".into(),
        });
        if options.project_psd {
            out.push("projected to the nearest positive semidefinite matrix".into());
        }
        if self.estimate.d > 2 {
            out.push("d > 2: pairwise visibility construction over every bin pair".into());
        }
        out
    }
}

fn estimate_from_rcp(
    rcp: &RcpMatrix,
    target: &TimeBinQudit,
    options: &TomographyOptions,
) -> Result<DensityMatrixEstimate> {
    let d = target.d();
    let phases = target.phases();
    let diagonal: Vec<u64> = (0..d).map(|k| rcp.counts_perp[k][k]).collect();
    let mut visibilities = BTreeMap::new();
    for j in 0..d {
        for k in j + 1..d {
            let ratio = rcp.pair_rcp(j, k, options.combine)?;
            visibilities.insert((j, k), visibility_from_rcp(&ratio, phases[k] - phases[j])?);
        }
    }
    let estimate = reconstruct_density_matrix(&diagonal, &visibilities, &phases)?;
    Ok(if options.project_psd {
        estimate.project_to_psd()
    } else {
        estimate
    })
}

/// RCP matrix → visibilities and diagonal counts → σ → fidelity.
pub fn qudit_fidelity_pipeline(
    events_parallel: &[DetectionEvent],
    events_perp: &[DetectionEvent],
    target: &TimeBinQudit,
    geometry: &WindowGeometry,
    params: &AnalysisParams,
    options: &TomographyOptions,
) -> Result<PipelineResult> {
    if events_parallel.is_empty() {
        return Err(Error::NoParallelEvents);
    }
    if geometry.d != target.d() {
        return Err(Error::DimensionMismatch {
            expected: geometry.d,
            found: target.d(),
        });
    }
    let rcp = rcp_matrix(events_parallel, events_perp, geometry, params)?;
    let estimate = estimate_from_rcp(&rcp, target, options)?;
    let fidelity = fidelity(target, &estimate)?;
    Ok(PipelineResult {
        rcp,
        estimate,
        fidelity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub mean: f64,
    pub std_dev: f64,
    pub n_resamples: usize,
}

fn resample_counts<R: Rng>(
    windows: &[Vec<(usize, usize)>],
    n_windows: usize,
    d: usize,
    rng: &mut R,
) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; d]; d];
    for _ in 0..n_windows {
        let pick = rng.random_range(0..n_windows);
        if let Some(cells) = windows.get(pick) {
            for &(i, j) in cells {
                counts[i][j] += 1;
            }
        }
    }
    counts
}

/// Bootstrap spread of the pipeline fidelity, resampling trigger windows.
///
/// Windows are drawn with replacement from `n_windows` (empty windows
/// included); the cross-period normalizations are held fixed.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_fidelity(
    events_parallel: &[DetectionEvent],
    events_perp: &[DetectionEvent],
    target: &TimeBinQudit,
    geometry: &WindowGeometry,
    params: &AnalysisParams,
    options: &TomographyOptions,
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    let base = rcp_matrix(events_parallel, events_perp, geometry, params)?;
    let n_windows = |events: &[DetectionEvent]| {
        events.iter().map(|e| e.trial_index).max().map_or(0, |t| t as usize + 1)
    };
    let (n_par, n_perp) = (n_windows(events_parallel), n_windows(events_perp));
    let cells_par = window_cells(events_parallel, geometry, params.exclude_dark);
    let cells_perp = window_cells(events_perp, geometry, params.exclude_dark);
    let (norm_par, norm_perp): (Normalization, Normalization) = (base.norm_parallel, base.norm_perp);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        let rcp = RcpMatrix::from_counts(
            resample_counts(&cells_par, n_par, geometry.d, &mut rng),
            resample_counts(&cells_perp, n_perp, geometry.d, &mut rng),
            norm_par,
            norm_perp,
        );
        if let Ok(est) = estimate_from_rcp(&rcp, target, options) {
            values.push(fidelity(target, &est)?.fidelity);
        }
    }
    if values.len() < 2 {
        return Err(Error::InvalidInput("too few usable bootstrap resamples".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(BootstrapSummary {
        mean,
        std_dev: var.sqrt(),
        n_resamples: values.len(),
    })
}
