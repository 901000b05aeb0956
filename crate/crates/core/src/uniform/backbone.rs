//! Frozen embedding backbones.
//!
//! Two implementations ship: a seeded random projection of a downsampled
//! image ([`FakeBackbone`]) and a small convolutional trunk whose weights are
//! read from a local file ([`ConvBackbone`]). The trunk weights come from
//! [`pretrain_conv_backbone`], which trains on random color mosaics that share
//! no images or labels with any uniform dataset.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::artifact::{params_digest, Artifact, ArtifactMeta, BackboneIdentity};
use crate::data::palette;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::nn::{fit, FitLog, MultiHeadArch, MultiHeadNet, Schedule, Trunk};
use crate::preprocess::{InputBlock, INPUT_CHANNELS, INPUT_SIDE};
use crate::schema::ColorClass;

pub const BACKBONE_SCHEMA: &str = "uniformid/backbone/v1";

/// Maps a model input block to a fixed-length feature vector.
pub trait EmbeddingBackbone: Send + Sync {
    fn name(&self) -> &str;

    fn output_dim(&self) -> usize;

    /// Digest of the backbone's name and parameters.
    fn digest(&self) -> &str;

    /// Enough to rebuild the backbone, together with [`Self::weights`].
    fn spec(&self) -> BackboneSpec;

    /// Parameters that cannot be regenerated from the spec.
    fn weights(&self) -> Option<&[f64]> {
        None
    }

    fn embed_batch(&self, inputs: &[&InputBlock]) -> Array2<f64>;

    fn embed(&self, input: &InputBlock) -> Vec<f64> {
        self.embed_batch(&[input]).into_raw_vec_and_offset().0
    }

    fn identity(&self) -> BackboneIdentity {
        BackboneIdentity {
            name: self.name().to_string(),
            digest: self.digest().to_string(),
        }
    }
}

impl fmt::Debug for dyn EmbeddingBackbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name(), &self.digest()[..12])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneSpec {
    Fake {
        seed: u64,
        pool: usize,
        output_dim: usize,
    },
    Conv {
        pool: usize,
        channels: Vec<usize>,
    },
}

/// Rebuilds a backbone from its spec and, for trained backbones, weights.
pub fn backbone_from_spec(spec: &BackboneSpec, weights: Option<&[f64]>) -> Result<Arc<dyn EmbeddingBackbone>> {
    match spec {
        BackboneSpec::Fake {
            seed,
            pool,
            output_dim,
        } => Ok(Arc::new(FakeBackbone::new(*seed, *pool, *output_dim)?)),
        BackboneSpec::Conv { pool, channels } => {
            let weights = weights.ok_or_else(|| Error::Schema("conv backbone weights missing".into()))?;
            Ok(Arc::new(ConvBackbone::new(*pool, channels.clone(), weights.to_vec())?))
        }
    }
}

fn check_pool(pool: usize) -> Result<usize> {
    if pool == 0 || INPUT_SIDE % pool != 0 {
        return Err(Error::Config(format!("pool factor {pool} must divide {INPUT_SIDE}")));
    }
    Ok(INPUT_SIDE / pool)
}

fn pooled_batch(inputs: &[&InputBlock], pool: usize) -> Array2<f64> {
    let side = INPUT_SIDE / pool;
    let width = side * side * INPUT_CHANNELS;
    let mut flat = Vec::with_capacity(inputs.len() * width);
    for block in inputs {
        flat.extend(block.pooled(pool));
    }
    Array2::from_shape_vec((inputs.len(), width), flat).expect("pooled shape")
}

/// Fixed Gaussian random projection of an average-pooled image.
pub struct FakeBackbone {
    seed: u64,
    pool: usize,
    projection: Array2<f64>,
    digest: String,
}

impl FakeBackbone {
    pub fn new(seed: u64, pool: usize, output_dim: usize) -> Result<Self> {
        let side = check_pool(pool)?;
        if output_dim == 0 {
            return Err(Error::Config("backbone output_dim must be positive".into()));
        }
        let input = side * side * INPUT_CHANNELS;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (input as f64).sqrt()).expect("finite std");
        let projection = Array2::from_shape_simple_fn((input, output_dim), || normal.sample(&mut rng));
        let digest = sha256_hex(format!("fake-projection:{}", params_digest(projection.as_slice().unwrap())).as_bytes());
        Ok(FakeBackbone {
            seed,
            pool,
            projection,
            digest,
        })
    }
}

impl Default for FakeBackbone {
    fn default() -> Self {
        FakeBackbone::new(7, 14, 256).expect("valid defaults")
    }
}

impl EmbeddingBackbone for FakeBackbone {
    fn name(&self) -> &str {
        "fake-projection"
    }

    fn output_dim(&self) -> usize {
        self.projection.ncols()
    }

    fn digest(&self) -> &str {
        &self.digest
    }

    fn spec(&self) -> BackboneSpec {
        BackboneSpec::Fake {
            seed: self.seed,
            pool: self.pool,
            output_dim: self.output_dim(),
        }
    }

    fn embed_batch(&self, inputs: &[&InputBlock]) -> Array2<f64> {
        pooled_batch(inputs, self.pool).dot(&self.projection)
    }
}

/// Convolutional trunk applied to an average-pooled image.
pub struct ConvBackbone {
    pool: usize,
    channels: Vec<usize>,
    trunk: Trunk,
    weights: Vec<f64>,
    digest: String,
}

impl ConvBackbone {
    pub fn new(pool: usize, channels: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let side = check_pool(pool)?;
        if channels.is_empty() || channels.contains(&0) {
            return Err(Error::Config(format!("invalid trunk channels {channels:?}")));
        }
        let trunk = Trunk::new(side, INPUT_CHANNELS, &channels);
        if weights.len() != trunk.param_len() {
            return Err(Error::Contract(format!(
                "trunk expects {} weights, got {}",
                trunk.param_len(),
                weights.len()
            )));
        }
        let digest = sha256_hex(format!("conv-trunk:{pool}:{channels:?}:{}", params_digest(&weights)).as_bytes());
        Ok(ConvBackbone {
            pool,
            channels,
            trunk,
            weights,
            digest,
        })
    }

    /// Reads a weights file written by [`ConvBackbone::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let art = Artifact::load(path)?;
        Self::from_artifact(&art)
    }

    pub fn from_artifact(art: &Artifact) -> Result<Self> {
        art.expect_schema(BACKBONE_SCHEMA)?;
        let spec: BackboneSpec = serde_json::from_value(art.header.meta["spec"].clone())?;
        let BackboneSpec::Conv { pool, channels } = spec else {
            return Err(Error::Schema("weights file does not describe a conv backbone".into()));
        };
        let backbone = ConvBackbone::new(pool, channels, art.section("trunk")?.to_vec())?;
        if let Some(id) = &art.header.backbone {
            if id.digest != backbone.digest {
                return Err(Error::Digest {
                    what: "backbone weights".into(),
                    expected: id.digest.clone(),
                    found: backbone.digest.clone(),
                });
            }
        }
        Ok(backbone)
    }

    pub fn to_artifact(&self, created_unix: i64, log: Option<&FitLog>, proxy: Option<&ProxyConfig>) -> Artifact {
        let mut metrics = std::collections::BTreeMap::new();
        if let Some(log) = log {
            metrics.insert("proxy_initial_loss".into(), log.initial_loss);
            metrics.insert("proxy_final_loss".into(), log.final_loss);
        }
        Artifact::new(
            ArtifactMeta {
                schema: BACKBONE_SCHEMA.into(),
                created_unix,
                config_digest: proxy.map(crate::artifact::config_digest).unwrap_or_default(),
                backbone: Some(self.identity()),
                metrics,
                meta: serde_json::json!({ "spec": self.spec(), "proxy": proxy }),
                ..Default::default()
            },
            vec![("trunk".into(), self.weights.clone())],
        )
    }

    pub fn save(&self, path: &Path, created_unix: i64) -> Result<()> {
        self.to_artifact(created_unix, None, None).save(path)
    }
}

impl EmbeddingBackbone for ConvBackbone {
    fn name(&self) -> &str {
        "conv-trunk"
    }

    fn output_dim(&self) -> usize {
        self.trunk.out_dim()
    }

    fn digest(&self) -> &str {
        &self.digest
    }

    fn spec(&self) -> BackboneSpec {
        BackboneSpec::Conv {
            pool: self.pool,
            channels: self.channels.clone(),
        }
    }

    fn weights(&self) -> Option<&[f64]> {
        Some(&self.weights)
    }

    fn embed_batch(&self, inputs: &[&InputBlock]) -> Array2<f64> {
        let x = pooled_batch(inputs, self.pool);
        let cache = self
            .trunk
            .forward(&self.weights, x.as_slice().expect("standard layout"), inputs.len());
        cache.features().to_owned()
    }
}

/// Proxy pretraining task: predict the color class of every cell of a random
/// `grid x grid` mosaic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyConfig {
    pub samples: usize,
    pub grid: usize,
    pub pool: usize,
    pub channels: Vec<usize>,
    pub schedule: Schedule,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            samples: 1500,
            grid: 4,
            pool: 4,
            channels: vec![8, 16, 16],
            schedule: Schedule {
                learning_rate: 2e-3,
                batch_size: 32,
                epochs: 6,
                seed: 2024,
                patience: 2,
            },
        }
    }
}

/// Random mosaics at trunk resolution, values in [0, 1], plus per-cell
/// class targets.
pub fn proxy_mosaics(config: &ProxyConfig, seed: u64) -> Result<(Array2<f64>, Array2<usize>)> {
    let side = check_pool(config.pool)?;
    if config.grid == 0 || side % config.grid != 0 {
        return Err(Error::Config(format!("grid {} must divide {side}", config.grid)));
    }
    let cell = side / config.grid;
    let cells = config.grid * config.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = side * side * INPUT_CHANNELS;
    let mut x = Array2::<f64>::zeros((config.samples, width));
    let mut t = Array2::<usize>::zeros((config.samples, cells));
    for s in 0..config.samples {
        let mut colors = Vec::with_capacity(cells);
        for c in 0..cells {
            let class_idx = rng.random_range(0..ColorClass::COLORS.len());
            let class = ColorClass::COLORS[class_idx];
            let shades: Vec<_> = palette::shades_of(class).collect();
            let shade = shades[rng.random_range(0..shades.len())];
            let rgb = palette::jitter_in_band(
                shade,
                rng.random_range(-palette::MAX_HUE_JITTER..=palette::MAX_HUE_JITTER),
                rng.random_range(-palette::MAX_BRIGHTNESS_JITTER..=palette::MAX_BRIGHTNESS_JITTER),
            );
            colors.push(rgb);
            t[[s, c]] = class_idx;
        }
        let mut row = x.row_mut(s);
        for py in 0..side {
            for px in 0..side {
                let rgb = colors[(py / cell) * config.grid + px / cell];
                for ch in 0..INPUT_CHANNELS {
                    let noisy = rgb[ch] as f64 + rng.random_range(-8.0..=8.0);
                    row[(py * side + px) * INPUT_CHANNELS + ch] = noisy.clamp(0.0, 255.0) / 255.0;
                }
            }
        }
    }
    Ok((x, t))
}

/// Trains a trunk on the mosaic task and returns it as a frozen backbone.
pub fn pretrain_conv_backbone(config: &ProxyConfig) -> Result<(ConvBackbone, FitLog)> {
    let side = check_pool(config.pool)?;
    let (x, t) = proxy_mosaics(config, config.schedule.seed ^ 0x5eed)?;
    let arch = MultiHeadArch {
        input_side: side,
        input_channels: INPUT_CHANNELS,
        channels: config.channels.clone(),
        head_hidden: vec![],
        classes: ColorClass::COLORS.len(),
        heads: config.grid * config.grid,
    };
    let mut net = MultiHeadNet::new(arch, config.schedule.seed)?;
    let mut params = net.params().to_vec();
    let gather = |idx: &[usize]| {
        let xb = x.select(ndarray::Axis(0), idx);
        let tb = t.select(ndarray::Axis(0), idx);
        (xb, tb)
    };
    let all: Vec<usize> = (0..config.samples).collect();
    let log = fit(
        &mut params,
        config.samples,
        &config.schedule,
        |p, idx| {
            let (xb, tb) = gather(idx);
            let (losses, grad) = net.loss_and_grad(p, xb.view(), tb.view())?;
            Ok((losses.iter().sum(), grad))
        },
        |p| mean_loss(&net, p, x.view(), t.view(), &all),
    )?;
    *net.params_mut() = params;
    let trunk = net.params()[..net.trunk_param_len()].to_vec();
    Ok((ConvBackbone::new(config.pool, config.channels.clone(), trunk)?, log))
}

/// Summed head loss averaged over `idx`, evaluated in chunks.
pub(crate) fn mean_loss(
    net: &MultiHeadNet,
    params: &[f64],
    x: ArrayView2<f64>,
    t: ArrayView2<usize>,
    idx: &[usize],
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in idx.chunks(256) {
        let xb = x.select(ndarray::Axis(0), chunk);
        let tb = t.select(ndarray::Axis(0), chunk);
        let losses = net.head_losses(params, xb.view(), tb.view())?;
        total += losses.iter().sum::<f64>() * chunk.len() as f64;
    }
    Ok(total / idx.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::INPUT_LEN;

    fn block(seed: u64) -> InputBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        InputBlock::from_raw(224, 224, 3, (0..INPUT_LEN).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn fake_backbone_shape_and_determinism() {
        let b = FakeBackbone::default();
        let x = block(1);
        let e = b.embed(&x);
        assert_eq!(e.len(), b.output_dim());
        assert_eq!(e, FakeBackbone::default().embed(&x));
        assert_ne!(b.digest(), FakeBackbone::new(8, 14, 256).unwrap().digest());
        let batch = b.embed_batch(&[&x, &block(2)]);
        assert_eq!(batch.row(0).to_vec(), e);
    }

    #[test]
    fn bad_pool_factor_is_config_error() {
        assert!(matches!(FakeBackbone::new(1, 5, 10), Err(Error::Config(_))));
    }

    #[test]
    fn conv_backbone_survives_weights_file() {
        let config = ProxyConfig {
            samples: 40,
            channels: vec![4, 4],
            schedule: Schedule {
                epochs: 1,
                ..ProxyConfig::default().schedule
            },
            ..ProxyConfig::default()
        };
        let (b, log) = pretrain_conv_backbone(&config).unwrap();
        assert!(log.final_loss < log.initial_loss);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("backbone.bin");
        b.save(&path, 0).unwrap();
        let back = ConvBackbone::load(&path).unwrap();
        assert_eq!(back.digest(), b.digest());
        let x = block(3);
        assert_eq!(back.embed(&x), b.embed(&x));
        assert_eq!(b.embed(&x).len(), 14 * 14 * 4);
        let rebuilt = backbone_from_spec(&b.spec(), b.weights()).unwrap();
        assert_eq!(rebuilt.digest(), b.digest());
    }

    #[test]
    fn mosaic_targets_match_pixels() {
        let config = ProxyConfig {
            samples: 5,
            ..ProxyConfig::default()
        };
        let (x, t) = proxy_mosaics(&config, 1).unwrap();
        let side = 56;
        for s in 0..5 {
            // Center pixel of each cell, denoised by the palette.
            for c in 0..16 {
                let (cy, cx) = ((c / 4) * 14 + 7, (c % 4) * 14 + 7);
                let mut mean = [0.0; 3];
                for dy in 0..3 {
                    for dx in 0..3 {
                        for ch in 0..3 {
                            mean[ch] += x[[s, ((cy + dy) * side + cx + dx) * 3 + ch]] * 255.0 / 9.0;
                        }
                    }
                }
                assert_eq!(palette::classify_mean(mean), ColorClass::COLORS[t[[s, c]]]);
            }
        }
    }
}
