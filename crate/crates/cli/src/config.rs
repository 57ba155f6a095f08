//! Experiment configuration file.

use std::path::{Path, PathBuf};

use qudit_homodyne::correlator::{AnalysisParams, SatelliteCombine, WindowGeometry};
use qudit_homodyne::optics::{CoherenceKernel, InterferenceSettings, Polarization};
use qudit_homodyne::qudit::{StateLiteral, TimeBinQudit};
use qudit_homodyne::sim::SourceConfig;
use qudit_homodyne::tomography::TomographyOptions;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub signal: StateLiteral,
    /// Defaults to equal amplitudes and zero phases in the signal's bins.
    pub lo: Option<StateLiteral>,
    #[serde(default)]
    pub interference: InterferenceSection,
    #[serde(default)]
    pub source: SourceSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

/// Seed of the perpendicular run paired with a parallel run on `seed`.
pub fn reference_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterferenceSection {
    /// `inf` disables dephasing.
    pub coherence_time_ns: f64,
    pub kernel: CoherenceKernel,
    pub mode_overlap: f64,
}

impl Default for InterferenceSection {
    fn default() -> Self {
        let s = InterferenceSettings::default();
        Self {
            coherence_time_ns: s.coherence_time,
            kernel: s.coherence_kernel,
            mode_overlap: s.mode_overlap,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSection {
    pub repetition_period_ns: f64,
    pub emission_efficiency: f64,
    pub detection_efficiency: f64,
    pub dark_count_rate_per_ns: f64,
    pub n_trigger_pairs: u64,
    pub dead_time_ns: f64,
    pub number_resolving: bool,
}

impl Default for SourceSection {
    fn default() -> Self {
        let s = SourceConfig::default();
        Self {
            repetition_period_ns: s.repetition_period,
            emission_efficiency: s.emission_efficiency,
            detection_efficiency: s.detection_efficiency,
            dark_count_rate_per_ns: s.dark_count_rate,
            n_trigger_pairs: s.n_trigger_pairs,
            dead_time_ns: s.dead_time,
            number_resolving: s.number_resolving,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub tau_bin_width_ns: f64,
    pub window_width_ns: f64,
    pub max_tau_ns: f64,
    pub reference_offsets: usize,
    pub exclude_dark: bool,
    pub satellite_combine: SatelliteCombine,
    pub project_psd: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let p = AnalysisParams::default();
        Self {
            tau_bin_width_ns: p.tau_bin_width,
            window_width_ns: p.window_width,
            max_tau_ns: p.max_tau,
            reference_offsets: p.reference_offsets,
            exclude_dark: p.exclude_dark,
            satellite_combine: SatelliteCombine::default(),
            project_psd: false,
        }
    }
}

/// A fully validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub signal: TimeBinQudit,
    pub lo: TimeBinQudit,
    pub interference: InterferenceSettings,
    pub source: SourceConfig,
    pub analysis: AnalysisParams,
    pub tomography: TomographyOptions,
    /// SHA-256 of the configuration file as read.
    pub config_hash: String,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub kernel: Option<CoherenceKernel>,
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
        let raw: RawConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
        let hash = hex::encode(Sha256::digest(text.as_bytes()));
        Self::from_raw(raw, overrides, hash)
    }

    /// Checks every section and reports all problems at once.
    pub fn from_raw(raw: RawConfig, overrides: &Overrides, config_hash: String) -> Result<Self, CliError> {
        let mut problems = Vec::new();
        let signal = note(&mut problems, "signal", raw.signal.to_qudit());
        let lo = note(
            &mut problems,
            "lo",
            match &raw.lo {
                Some(lit) => lit.to_qudit(),
                None => TimeBinQudit::local_oscillator(raw.signal.d, raw.signal.bin_ns),
            },
        );
        if let (Some(s), Some(l)) = (&signal, &lo) {
            if s.d() != l.d() {
                problems.push(format!("[lo] has {} bins but the signal has {}", l.d(), s.d()));
            }
            if s.bin_duration() != l.bin_duration() {
                problems.push(format!(
                    "[lo] bin_ns {} differs from the signal's {}",
                    l.bin_duration(),
                    s.bin_duration()
                ));
            }
        }

        let interference = InterferenceSettings {
            polarization: Polarization::Parallel,
            coherence_time: raw.interference.coherence_time_ns,
            coherence_kernel: overrides.kernel.unwrap_or(raw.interference.kernel),
            mode_overlap: raw.interference.mode_overlap,
        };
        note(&mut problems, "interference", interference.validate());

        let seed = overrides.seed.unwrap_or(raw.seed);
        let s = &raw.source;
        let source = SourceConfig {
            repetition_period: s.repetition_period_ns,
            emission_efficiency: s.emission_efficiency,
            detection_efficiency: s.detection_efficiency,
            dark_count_rate: s.dark_count_rate_per_ns,
            n_trigger_pairs: s.n_trigger_pairs,
            rng_seed: seed,
            dead_time: s.dead_time_ns,
            number_resolving: s.number_resolving,
        };
        note(&mut problems, "source", source.validate());
        if let Some(q) = &signal {
            let photon = q.d() as f64 * q.bin_duration();
            if source.repetition_period <= photon {
                problems.push(format!(
                    "[source] repetition_period_ns {} must exceed the photon duration {photon} ns",
                    source.repetition_period
                ));
            }
        }

        let a = &raw.analysis;
        let analysis = AnalysisParams {
            tau_bin_width: a.tau_bin_width_ns,
            window_width: a.window_width_ns,
            max_tau: a.max_tau_ns,
            reference_offsets: a.reference_offsets,
            exclude_dark: a.exclude_dark,
        };
        note(&mut problems, "analysis", analysis.validate());

        match (signal, lo) {
            (Some(signal), Some(lo)) if problems.is_empty() => Ok(Self {
                seed,
                out_dir: overrides.out_dir.clone().unwrap_or(raw.out_dir),
                signal,
                lo,
                interference,
                source,
                analysis,
                tomography: TomographyOptions {
                    combine: a.satellite_combine,
                    project_psd: a.project_psd,
                },
                config_hash,
            }),
            _ => Err(CliError::Config(problems)),
        }
    }

    pub fn geometry(&self) -> WindowGeometry {
        WindowGeometry::new(self.source.repetition_period, self.signal.bin_duration(), self.signal.d())
    }

    /// Source of the perpendicular reference run: an independent stream.
    pub fn reference_source(&self) -> SourceConfig {
        SourceConfig {
            rng_seed: reference_seed(self.source.rng_seed),
            ..self.source
        }
    }

    /// Comment lines written at the top of every output file.
    pub fn metadata(&self) -> Vec<(&'static str, String)> {
        vec![
            ("tool", format!("timebin {}", env!("CARGO_PKG_VERSION"))),
            ("config_sha256", self.config_hash.clone()),
            ("seed", self.seed.to_string()),
            ("d", self.signal.d().to_string()),
            ("bin_ns", self.signal.bin_duration().to_string()),
            ("period_ns", self.source.repetition_period.to_string()),
            ("kernel", format!("{:?}", self.interference.coherence_kernel).to_lowercase()),
        ]
    }
}

fn note<T>(problems: &mut Vec<String>, section: &str, r: qudit_homodyne::Result<T>) -> Option<T> {
    r.map_err(|e| problems.push(format!("[{section}] {e}"))).ok()
}
