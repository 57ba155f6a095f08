//! File formats: event streams, histograms, RCP matrices, phase sweeps and
//! tomography reports.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::correlator::{CoincidenceHistogram, PhasePoint, RcpMatrix};
use crate::error::{Error, Result};
use crate::optics::Port;
use crate::sim::{DetectionEvent, Origin};
use crate::tomography::{DensityMatrixEstimate, FidelityResult};

pub const EVENT_HEADER: [&str; 4] = ["trial", "detector", "timestamp_ns", "origin"];

/// Writes to `path.tmp` and renames, so a failed run leaves no partial file.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    let result = (|| {
        let mut w = BufWriter::new(fs::File::create(tmp)?);
        body(&mut w)?;
        w.flush()?;
        Ok(())
    })();
    match result {
        Ok(()) => Ok(fs::rename(tmp, path)?),
        Err(e) => {
            let _ = fs::remove_file(tmp);
            Err(e)
        }
    }
}

fn port_label(p: Port) -> &'static str {
    match p {
        Port::C => "C",
        Port::D => "D",
    }
}

fn origin_label(o: Origin) -> &'static str {
    match o {
        Origin::Photon => "photon",
        Origin::Dark => "dark",
    }
}

/// Event CSV: `# key: value` metadata lines, a header, then one row per
/// click with the timestamp to the picosecond.
pub fn write_events(
    w: &mut dyn Write,
    events: &[DetectionEvent],
    metadata: &[(&str, String)],
) -> Result<()> {
    for (key, value) in metadata {
        writeln!(w, "# {key}: {value}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(e.into());
    out.write_record(EVENT_HEADER).map_err(csv_err)?;
    for e in events {
        out.write_record([
            e.trial_index.to_string(),
            port_label(e.detector).to_string(),
            format!("{:.3}", e.timestamp),
            origin_label(e.origin).to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct EventRecord {
    trial: u64,
    detector: Port,
    timestamp_ns: f64,
    origin: Origin,
}

/// Parsed event file: the events plus its metadata comments.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFile {
    pub events: Vec<DetectionEvent>,
    pub metadata: BTreeMap<String, String>,
}

pub fn read_events<R: Read>(mut reader: R, label: &str) -> Result<EventFile> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let metadata = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();

    let format_error = |line: u64, message: String| Error::Format {
        path: label.to_string(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| format_error(e.position().map_or(0, |p| p.line()), e.to_string()))?;
    if header.iter().ne(EVENT_HEADER) {
        return Err(format_error(
            rdr.position().line(),
            format!("expected header {}", EVENT_HEADER.join(",")),
        ));
    }

    let mut events = Vec::new();
    for row in rdr.deserialize::<EventRecord>() {
        let r = row.map_err(|e| format_error(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        if !r.timestamp_ns.is_finite() || r.timestamp_ns < 0.0 {
            return Err(format_error(
                0,
                format!("timestamp {} in trial {} is not a finite non-negative time", r.timestamp_ns, r.trial),
            ));
        }
        events.push(DetectionEvent {
            detector: r.detector,
            timestamp: r.timestamp_ns,
            trial_index: r.trial,
            origin: r.origin,
        });
    }
    Ok(EventFile { events, metadata })
}

pub fn read_events_file(path: &Path) -> Result<EventFile> {
    read_events(fs::File::open(path)?, &path.display().to_string())
}

/// `tau_ns,density,windowed_density` for a normalized histogram.
pub fn write_histogram(w: &mut dyn Write, hist: &CoincidenceHistogram) -> Result<()> {
    let density = hist.density()?;
    let windowed = hist.windowed_density()?;
    writeln!(w, "tau_ns,density,windowed_density")?;
    for (i, (p, q)) in density.iter().zip(&windowed).enumerate() {
        writeln!(w, "{:.3},{p:.9e},{q:.9e}", hist.bin_center(i))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcpReport {
    pub d: usize,
    /// `null` where the reference count is zero.
    pub rcp: Vec<Vec<Option<f64>>>,
    pub sigma: Vec<Vec<Option<f64>>>,
    pub counts_parallel: Vec<Vec<u64>>,
    pub counts_perp: Vec<Vec<u64>>,
}

impl From<&RcpMatrix> for RcpReport {
    fn from(m: &RcpMatrix) -> Self {
        Self {
            d: m.d,
            rcp: m.entries.clone(),
            sigma: m.sigma.clone(),
            counts_parallel: m.counts_parallel.clone(),
            counts_perp: m.counts_perp.clone(),
        }
    }
}

/// `phi_rad,strength,sigma`.
pub fn write_phase_sweep(w: &mut dyn Write, points: &[PhasePoint]) -> Result<()> {
    writeln!(w, "phi_rad,strength,sigma")?;
    for p in points {
        writeln!(w, "{:.6},{:.6},{:.6}", p.phi, p.strength, p.sigma)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyReport {
    pub d: usize,
    pub sigma_re: Vec<Vec<f64>>,
    pub sigma_im: Vec<Vec<f64>>,
    pub fidelity: f64,
    pub std_error: f64,
    pub n_correlations: u64,
    pub clamped: bool,
    pub positive_semidefinite: bool,
    pub assumptions: Vec<String>,
}

impl TomographyReport {
    pub fn new(
        estimate: &DensityMatrixEstimate,
        fidelity: &FidelityResult,
        assumptions: Vec<String>,
    ) -> Self {
        let part = |f: fn(&num_complex::Complex64) -> f64| {
            (0..estimate.d)
                .map(|i| (0..estimate.d).map(|j| f(&estimate.matrix[(i, j)])).collect())
                .collect()
        };
        Self {
            d: estimate.d,
            sigma_re: part(|z| z.re),
            sigma_im: part(|z| z.im),
            fidelity: fidelity.fidelity,
            std_error: fidelity.std_error,
            n_correlations: fidelity.n_correlations,
            clamped: fidelity.clamped,
            positive_semidefinite: estimate.is_positive_semidefinite(),
            assumptions,
        }
    }
}

pub fn write_json<T: Serialize>(w: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    writeln!(w)?;
    Ok(())
}
