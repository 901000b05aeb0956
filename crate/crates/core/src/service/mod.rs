//! Operational layer: configuration, the versioned model store, case
//! persistence and the end-to-end pipeline used by the CLI and HTTP API.

pub mod cases;
pub mod config;
pub mod pipeline;
pub mod registry;

pub use cases::{AuditEntry, CaseRecord, CaseStore, CropInfo};
pub use config::PipelineConfig;
pub use pipeline::{
    analyze_image, load_school_registry, preprocessor_for, BatchFailure, BatchSummary, Health, LoadedModels, Service,
};
pub use registry::{ModelKind, ModelRegistry, ModelRegistryEntry, VerifyFinding};
