//! Detection of school uniforms in images, per-item color attribute
//! prediction, and ranking of candidate schools against those predictions.

pub mod artifact;
pub mod attribute;
pub mod data;
pub mod digest;
pub mod error;
pub mod eval;
pub mod nn;
pub mod preprocess;
pub mod schema;
pub mod search;
pub mod service;
pub mod uniform;

pub use error::{Error, Result};
pub use schema::{
    AttributeDistribution, AttributeLabel, BoundingBox, ClothingItem, ColorClass, GroundTruth, ImageRecord,
    ImageSource, SchoolProfile, SchoolRegistry,
};
