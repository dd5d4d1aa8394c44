//! Data pipeline, training protocol, metrics and analysis probes for
//! spatio-temporal deepfake detectors.

pub mod clipper;
pub mod evalkit;
pub mod facepipe;
pub mod manifest;
pub mod probes;
pub mod seeds;
pub mod store;
pub mod synthcorpus;
pub mod trainer;

pub use manifest::{CorpusManifest, Label, ManifestError, Split, VideoRecord, REAL_METHOD};
pub use store::VideoStore;
