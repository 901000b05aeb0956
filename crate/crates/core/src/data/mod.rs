//! Dataset production: synthetic generation, local ingestion, dual-annotator
//! labels, and train/test splits.

pub mod ingest;
pub mod labels;
pub mod manifest;
pub mod palette;
pub mod splits;
pub mod synthetic;

pub use ingest::{ingest_folder, IngestReport, Rejection};
pub use labels::{LabelAck, LabelSet, LabelStatus, LabelStore, LabelSubmission, VerificationOutcome};
pub use manifest::{load_dataset, write_dataset, ManifestEntry};
pub use splits::{holdout_split, loso_splits, DatasetSplit, TestGroup};
pub use synthetic::{generate_dataset, generate_school_registry, NoiseConfig, SyntheticConfig};
