//! The four subcommands.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use qudit_homodyne::correlator::{
    build_histogram, chi2_model_test, combined_side_peak, normalize_histogram, rcp_matrix,
    side_peak_strength, Chi2Outcome, CoincidenceHistogram, PhasePoint,
};
use qudit_homodyne::io::{
    read_events_file, write_atomic, write_events, write_histogram, write_json, write_phase_sweep,
    EventFile, RcpReport, TomographyReport,
};
use qudit_homodyne::optics::{expected_side_peak_strength, Polarization};
use qudit_homodyne::qudit::TimeBinQudit;
use qudit_homodyne::sim::{expected_accidental_ratio, simulate_stream, DetectionEvent, SourceConfig};
use qudit_homodyne::tomography::qudit_fidelity_pipeline;
use serde::Serialize;

use crate::config::{reference_seed, ExperimentConfig};
use crate::error::CliError;

pub const PARALLEL_EVENTS: &str = "events_parallel.csv";
pub const PERPENDICULAR_EVENTS: &str = "events_perpendicular.csv";

type Metadata = Vec<(&'static str, String)>;

#[derive(Serialize)]
struct Annotated<'a, T> {
    metadata: BTreeMap<&'static str, String>,
    #[serde(flatten)]
    body: &'a T,
}

fn annotated<'a, T>(metadata: &Metadata, body: &'a T) -> Annotated<'a, T> {
    Annotated {
        metadata: metadata.iter().cloned().collect(),
        body,
    }
}

fn comment_block(w: &mut dyn Write, metadata: &Metadata) -> qudit_homodyne::Result<()> {
    for (key, value) in metadata {
        writeln!(w, "# {key}: {value}")?;
    }
    Ok(())
}

fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::config(format!("cannot create output directory {}: {e}", dir.display())))
}

type Writer<'a> = Box<dyn FnOnce(&mut dyn Write) -> qudit_homodyne::Result<()> + 'a>;

/// Writes every file or none of them.
fn write_outputs(outputs: Vec<(PathBuf, Writer<'_>)>) -> Result<(), CliError> {
    let mut written = Vec::new();
    for (path, body) in outputs {
        if let Err(e) = write_atomic(&path, body) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(CliError::config(format!("cannot write {}: {e}", path.display())));
        }
        written.push(path);
    }
    Ok(())
}

fn run_metadata(cfg: &ExperimentConfig, polarization: Polarization, source: &SourceConfig) -> Metadata {
    let mut m = cfg.metadata();
    m.push(("polarization", format!("{polarization:?}").to_lowercase()));
    m.push(("run_seed", source.rng_seed.to_string()));
    m.push(("n_trigger_pairs", source.n_trigger_pairs.to_string()));
    m
}

fn simulate_run(
    cfg: &ExperimentConfig,
    signal: &TimeBinQudit,
    polarization: Polarization,
    source: &SourceConfig,
) -> Result<Vec<DetectionEvent>, CliError> {
    let settings = cfg.interference.with_polarization(polarization);
    Ok(simulate_stream(signal, &cfg.lo, &settings, source)?)
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let runs = [
        (Polarization::Parallel, cfg.source, PARALLEL_EVENTS),
        (Polarization::Perpendicular, cfg.reference_source(), PERPENDICULAR_EVENTS),
    ];
    let mut results = Vec::new();
    for (polarization, source, name) in runs {
        let events = simulate_run(cfg, &cfg.signal, polarization, &source)?;
        let clicks = events.iter().filter(|e| e.origin == qudit_homodyne::sim::Origin::Photon).count();
        println!(
            "{name}: {} events over {} trigger pairs ({:.4} photon clicks per trigger)",
            events.len(),
            source.n_trigger_pairs,
            clicks as f64 / source.n_trigger_pairs.max(1) as f64
        );
        results.push((cfg.out_dir.join(name), run_metadata(cfg, polarization, &source), events));
    }
    prepare_out_dir(&cfg.out_dir)?;
    write_outputs(
        results
            .iter()
            .map(|(path, meta, events)| {
                let body: Writer = Box::new(move |w| write_events(w, events, meta));
                (path.clone(), body)
            })
            .collect(),
    )
}

fn load_events(cfg: &ExperimentConfig, path: &Path) -> Result<Vec<DetectionEvent>, CliError> {
    let EventFile { events, metadata } = read_events_file(path)?;
    let expected = cfg.signal.d().to_string();
    if let Some(d) = metadata.get("d") {
        if *d != expected {
            return Err(CliError::Analysis(qudit_homodyne::Error::InvalidInput(format!(
                "{} was recorded for d = {d}, the configuration has d = {expected}",
                path.display()
            ))));
        }
    }
    Ok(events)
}

fn normalized(
    cfg: &ExperimentConfig,
    events: &[DetectionEvent],
) -> Result<CoincidenceHistogram, CliError> {
    let hist = build_histogram(events, &cfg.geometry(), &cfg.analysis)?;
    Ok(normalize_histogram(hist, events, &cfg.analysis)?)
}

pub fn default_event_paths(cfg: &ExperimentConfig) -> (PathBuf, PathBuf) {
    (cfg.out_dir.join(PARALLEL_EVENTS), cfg.out_dir.join(PERPENDICULAR_EVENTS))
}

pub fn analyze(cfg: &ExperimentConfig, parallel: &Path, perpendicular: &Path) -> Result<(), CliError> {
    let par = load_events(cfg, parallel)?;
    let perp = load_events(cfg, perpendicular)?;
    if par.is_empty() {
        return Err(qudit_homodyne::Error::NoParallelEvents.into());
    }
    let (hist_par, hist_perp) = (normalized(cfg, &par)?, normalized(cfg, &perp)?);
    let rcp = RcpReport::from(&rcp_matrix(&par, &perp, &cfg.geometry(), &cfg.analysis)?);
    let peaks = side_peak_strength(&hist_par, &hist_perp)?;

    println!("RCP matrix (rows C1..C{d}, columns D1..D{d}):", d = rcp.d);
    for row in &rcp.rcp {
        let cells: Vec<String> = row
            .iter()
            .map(|c| c.map_or("   —  ".into(), |v| format!("{v:6.3}")))
            .collect();
        println!("  {}", cells.join(" "));
    }
    for p in &peaks {
        println!("satellite τ = {:+.0} ns: strength {:.3} ± {:.3}", p.tau, p.strength, p.sigma);
    }

    let meta = cfg.metadata();
    prepare_out_dir(&cfg.out_dir)?;
    let out = |name: &str| cfg.out_dir.join(name);
    let histogram = |h: &CoincidenceHistogram| -> Writer {
        let meta = meta.clone();
        let h = h.clone();
        Box::new(move |w| {
            comment_block(w, &meta)?;
            write_histogram(w, &h)
        })
    };
    write_outputs(vec![
        (out("histogram_parallel.csv"), histogram(&hist_par)),
        (out("histogram_perpendicular.csv"), histogram(&hist_perp)),
        (out("rcp.json"), Box::new(|w| write_json(w, &annotated(&meta, &rcp)))),
        (
            out("side_peaks.csv"),
            Box::new(|w| {
                comment_block(w, &meta)?;
                writeln!(w, "tau_ns,separation,strength,sigma,parallel_counts,reference_counts")?;
                for p in &peaks {
                    writeln!(
                        w,
                        "{:.3},{},{:.6},{:.6},{},{}",
                        p.tau, p.separation, p.strength, p.sigma, p.parallel_counts, p.reference_counts
                    )?;
                }
                Ok(())
            }),
        ),
    ])
}

/// Parses `0, pi/4, 3pi/4, 2*pi, 1.5` into radians.
pub fn parse_phases(list: &str) -> Result<Vec<f64>, CliError> {
    let phases = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_phase)
        .collect::<Result<Vec<_>, _>>()?;
    if phases.is_empty() {
        return Err(CliError::config("the phase list is empty"));
    }
    Ok(phases)
}

fn parse_phase(s: &str) -> Result<f64, CliError> {
    let bad = || CliError::config(format!("cannot read phase `{s}`"));
    let lower = s.to_ascii_lowercase();
    let Some((coef, rest)) = lower.split_once("pi") else {
        return lower.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
    };
    let coef = coef.trim().trim_end_matches('*').trim();
    let numerator = match coef {
        "" => 1.0,
        "-" => -1.0,
        c => c.parse::<f64>().map_err(|_| bad())?,
    };
    let rest = rest.trim();
    let denominator = match rest.strip_prefix('/') {
        Some(d) => d.trim().parse::<f64>().map_err(|_| bad())?,
        None if rest.is_empty() => 1.0,
        None => return Err(bad()),
    };
    if denominator == 0.0 {
        return Err(bad());
    }
    Ok(numerator * PI / denominator)
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    chi2: &'a Chi2Outcome,
    background_ratio: f64,
    model: Vec<f64>,
}

pub fn sweep_phase(cfg: &ExperimentConfig, phases: &[f64]) -> Result<(), CliError> {
    if cfg.signal.d() != 2 {
        return Err(CliError::config(format!(
            "sweep-phase varies the phase of a qubit; the signal has d = {}",
            cfg.signal.d()
        )));
    }
    let magnitudes: Vec<f64> = cfg.signal.amplitudes().iter().map(|c| c.norm()).collect();
    let bin = cfg.signal.bin_duration();
    let mut points = Vec::with_capacity(phases.len());
    for (i, &phi) in phases.iter().enumerate() {
        let signal = TimeBinQudit::new(&magnitudes, &[0.0, phi], bin)?;
        let source = SourceConfig {
            rng_seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.source
        };
        let reference = SourceConfig {
            rng_seed: reference_seed(source.rng_seed),
            ..source
        };
        let par = simulate_run(cfg, &signal, Polarization::Parallel, &source)?;
        let perp = simulate_run(cfg, &signal, Polarization::Perpendicular, &reference)?;
        let peak = combined_side_peak(&normalized(cfg, &par)?, &normalized(cfg, &perp)?, 1)?;
        points.push(PhasePoint {
            phi,
            strength: peak.strength,
            sigma: peak.sigma,
        });
    }

    let b = expected_accidental_ratio(&cfg.signal, &cfg.lo, &cfg.source, 1);
    let model = |phi: f64| expected_side_peak_strength(phi, &cfg.interference, bin, 1, b);
    let expected: Vec<f64> = phases.iter().map(|&p| model(p)).collect::<Result<_, _>>()?;
    let chi2 = chi2_model_test(&points, |phi| model(phi).unwrap_or(f64::NAN))?;

    println!("   φ (rad)   strength    σ      model");
    for (p, m) in points.iter().zip(&expected) {
        println!("  {:8.4}   {:8.4}  {:6.4}  {:8.4}", p.phi, p.strength, p.sigma, m);
    }
    println!(
        "χ² = {:.2} for {} points (95 % bound {:.2}): {}",
        chi2.statistic,
        chi2.dof,
        chi2.critical,
        if chi2.pass { "consistent with the model" } else { "rejects the model" }
    );

    let meta = cfg.metadata();
    prepare_out_dir(&cfg.out_dir)?;
    let summary = SweepSummary {
        chi2: &chi2,
        background_ratio: b,
        model: expected,
    };
    write_outputs(vec![
        (
            cfg.out_dir.join("side_peaks.csv"),
            Box::new(|w| {
                comment_block(w, &meta)?;
                write_phase_sweep(w, &points)
            }),
        ),
        (
            cfg.out_dir.join("sweep_chi2.json"),
            Box::new(|w| write_json(w, &annotated(&meta, &summary))),
        ),
    ])
}

pub fn tomography(cfg: &ExperimentConfig, parallel: &Path, perpendicular: &Path) -> Result<(), CliError> {
    let par = load_events(cfg, parallel)?;
    let perp = load_events(cfg, perpendicular)?;
    let result = qudit_fidelity_pipeline(
        &par,
        &perp,
        &cfg.signal,
        &cfg.geometry(),
        &cfg.analysis,
        &cfg.tomography,
    )?;
    let report = TomographyReport::new(&result.estimate, &result.fidelity, result.assumptions(&cfg.tomography));

    println!("σ (real part):");
    for row in &report.sigma_re {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:7.4}")).collect();
        println!("  {}", cells.join(" "));
    }
    println!(
        "F = {:.4} ± {:.4} from {} side-peak coincidences{}",
        report.fidelity,
        report.std_error,
        report.n_correlations,
        if report.positive_semidefinite { "" } else { " (σ is not positive semidefinite)" }
    );

    let meta = cfg.metadata();
    prepare_out_dir(&cfg.out_dir)?;
    write_outputs(vec![(
        cfg.out_dir.join("tomography.json"),
        Box::new(|w| write_json(w, &annotated(&meta, &report))),
    )])
}
