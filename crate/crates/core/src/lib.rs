//! Time-bin qudits measured by two-photon interference with a local
//! oscillator.
//!
//! The crate covers the whole chain: state preparation ([`qudit`]), the
//! beam-splitter and two-photon detection model ([`optics`]), a Monte Carlo
//! source of time-tagged clicks ([`sim`]), coincidence analysis
//! ([`correlator`]) and density-matrix reconstruction ([`tomography`]).
//! Times are in nanoseconds and phases in radians throughout.

pub mod correlator;
pub mod error;
pub mod io;
pub mod optics;
pub mod qudit;
pub mod sim;
pub mod tomography;

pub use error::{Error, Result};
pub use optics::{CoherenceKernel, InterferenceSettings, Polarization, Port};
pub use qudit::{TemporalEnvelope, TimeBinQudit};
pub use sim::{DetectionEvent, SourceConfig};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/states.md")]
    mod states {}
    #[doc = include_str!("../../../book/src/interference.md")]
    mod interference {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/correlation.md")]
    mod correlation {}
    #[doc = include_str!("../../../book/src/tomography.md")]
    mod tomography {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
