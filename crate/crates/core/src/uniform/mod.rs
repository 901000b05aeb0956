//! Binary uniform-presence classifier: a frozen embedding backbone followed
//! by a trainable fully connected head.

pub mod backbone;
pub mod cache;
pub mod model;

pub use backbone::{
    backbone_from_spec, pretrain_conv_backbone, BackboneSpec, ConvBackbone, EmbeddingBackbone, FakeBackbone,
    ProxyConfig,
};
pub use cache::EmbeddingCache;
pub use model::{
    classify_uniform, decide, embed_records, predict_uniform, train_uniform, train_uniform_embedded, EmbeddedSet,
    TrainConfig, UniformModel, DEFAULT_THRESHOLD,
};
