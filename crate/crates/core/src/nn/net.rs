//! Convolutional trunk, MLP heads, and the shared-trunk multi-head classifier.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{relu_backward, relu_in_place, softmax_rows, Conv, Dense};
use crate::error::{Error, Result};

/// Scale applied to the He-initialized weights of every output layer, so an
/// untrained network emits near-uniform class probabilities.
pub const OUTPUT_INIT_SCALE: f64 = 0.01;

fn he_init(p: &mut [f64], dense: Dense, scale: f64, rng: &mut ChaCha8Rng) {
    let std = (2.0 / dense.input as f64).sqrt() * scale;
    let normal = Normal::new(0.0, std).expect("finite std");
    for w in &mut p[..dense.weight_len()] {
        *w = normal.sample(rng);
    }
    p[dense.weight_len()..dense.param_len()].fill(0.0);
}

/// Dense layers with ReLU between them and a linear output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Mlp {
            layers: sizes
                .windows(2)
                .map(|w| Dense {
                    input: w[0],
                    output: w[1],
                })
                .collect(),
        }
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn output(&self) -> usize {
        self.layers.last().expect("at least one layer").output
    }

    pub fn param_len(&self) -> usize {
        self.layers.iter().map(Dense::param_len).sum()
    }

    pub fn init(&self, p: &mut [f64], rng: &mut ChaCha8Rng) {
        let mut off = 0;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let scale = if i == last { OUTPUT_INIT_SCALE } else { 1.0 };
            he_init(&mut p[off..off + layer.param_len()], *layer, scale, rng);
            off += layer.param_len();
        }
    }

    /// Output of every layer; the last entry holds the linear outputs.
    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { acts[i - 1].view() };
            let mut y = layer.forward(&p[off..], input);
            if i != last {
                relu_in_place(&mut y);
            }
            off += layer.param_len();
            acts.push(y);
        }
        acts
    }

    pub fn backward(
        &self,
        p: &[f64],
        x: ArrayView2<f64>,
        acts: &[Array2<f64>],
        dout: Array2<f64>,
        g: &mut [f64],
    ) -> Array2<f64> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.param_len();
        }
        let mut d = dout;
        for i in (0..self.layers.len()).rev() {
            let input = if i == 0 { x } else { acts[i - 1].view() };
            let mut dx = self.layers[i].backward(&p[offsets[i]..], input, d.view(), &mut g[offsets[i]..]);
            if i > 0 {
                relu_backward(&acts[i - 1], &mut dx);
            }
            d = dx;
        }
        d
    }
}

/// Stack of stride-2 convolutions with ReLU.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trunk {
    pub convs: Vec<Conv>,
}

pub struct TrunkCache {
    cols: Vec<Array2<f64>>,
    outs: Vec<Array2<f64>>,
    batch: usize,
}

impl TrunkCache {
    pub fn features(&self) -> ArrayView2<'_, f64> {
        let last = self.outs.last().expect("trunk has layers");
        let flat = last.as_slice().expect("standard layout");
        ArrayView2::from_shape((self.batch, flat.len() / self.batch.max(1)), flat).expect("feature shape")
    }
}

impl Trunk {
    pub fn new(side: usize, channels_in: usize, channels: &[usize]) -> Self {
        let mut convs = Vec::with_capacity(channels.len());
        let (mut h, mut w, mut cin) = (side, side, channels_in);
        for &cout in channels {
            let conv = Conv {
                in_h: h,
                in_w: w,
                cin,
                cout,
            };
            h = conv.out_h();
            w = conv.out_w();
            cin = cout;
            convs.push(conv);
        }
        Trunk { convs }
    }

    pub fn param_len(&self) -> usize {
        self.convs.iter().map(Conv::param_len).sum()
    }

    pub fn out_dim(&self) -> usize {
        self.convs.last().map(Conv::out_len).unwrap_or(0)
    }

    pub fn init(&self, p: &mut [f64], rng: &mut ChaCha8Rng) {
        let mut off = 0;
        for conv in &self.convs {
            he_init(&mut p[off..off + conv.param_len()], conv.dense(), 1.0, rng);
            off += conv.param_len();
        }
    }

    /// `x` holds `batch` samples in HWC order.
    pub fn forward(&self, p: &[f64], x: &[f64], batch: usize) -> TrunkCache {
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut outs: Vec<Array2<f64>> = Vec::with_capacity(self.convs.len());
        let mut off = 0;
        for (i, conv) in self.convs.iter().enumerate() {
            let input = if i == 0 { x } else { outs[i - 1].as_slice().expect("standard layout") };
            let c = conv.im2col(input, batch);
            let mut y = conv.dense().forward(&p[off..], c.view());
            relu_in_place(&mut y);
            off += conv.param_len();
            cols.push(c);
            outs.push(y);
        }
        TrunkCache { cols, outs, batch }
    }

    /// `dfeat` is the gradient with respect to [`TrunkCache::features`].
    pub fn backward(&self, p: &[f64], cache: &TrunkCache, dfeat: Array2<f64>, g: &mut [f64]) {
        let mut offsets = Vec::with_capacity(self.convs.len());
        let mut off = 0;
        for conv in &self.convs {
            offsets.push(off);
            off += conv.param_len();
        }
        let last = cache.outs.last().expect("trunk has layers");
        let mut d = dfeat.into_shape_with_order(last.raw_dim()).expect("feature gradient shape");
        for i in (0..self.convs.len()).rev() {
            let conv = &self.convs[i];
            relu_backward(&cache.outs[i], &mut d);
            let dcols = conv
                .dense()
                .backward(&p[offsets[i]..], cache.cols[i].view(), d.view(), &mut g[offsets[i]..]);
            if i == 0 {
                break;
            }
            let dx = conv.col2im(dcols.view(), cache.batch);
            d = Array2::from_shape_vec(cache.outs[i - 1].raw_dim(), dx).expect("activation shape");
        }
    }
}

/// Architecture of a shared-trunk classifier with independent softmax heads.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiHeadArch {
    pub input_side: usize,
    pub input_channels: usize,
    pub channels: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub classes: usize,
    pub heads: usize,
}

impl MultiHeadArch {
    pub fn validate(&self) -> Result<()> {
        let positive = self.input_side > 0
            && self.input_channels > 0
            && !self.channels.is_empty()
            && self.channels.iter().all(|&c| c > 0)
            && self.head_hidden.iter().all(|&c| c > 0)
            && self.classes >= 2
            && self.heads > 0;
        if positive {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid network architecture {self:?}")))
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_side * self.input_side * self.input_channels
    }

    pub fn trunk(&self) -> Trunk {
        Trunk::new(self.input_side, self.input_channels, &self.channels)
    }

    pub fn head(&self) -> Mlp {
        Mlp::new(self.trunk().out_dim(), &self.head_hidden, self.classes)
    }

    pub fn param_len(&self) -> usize {
        self.trunk().param_len() + self.heads * self.head().param_len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadNet {
    arch: MultiHeadArch,
    trunk: Trunk,
    head: Mlp,
    params: Vec<f64>,
}

impl MultiHeadNet {
    pub fn new(arch: MultiHeadArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let trunk = arch.trunk();
        let head = arch.head();
        let mut params = vec![0.0; arch.param_len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (tp, hp) = params.split_at_mut(trunk.param_len());
        trunk.init(tp, &mut rng);
        for chunk in hp.chunks_mut(head.param_len()) {
            head.init(chunk, &mut rng);
        }
        Ok(MultiHeadNet {
            arch,
            trunk,
            head,
            params,
        })
    }

    pub fn from_params(arch: MultiHeadArch, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_len() {
            return Err(Error::Contract(format!(
                "network expects {} parameters, got {}",
                arch.param_len(),
                params.len()
            )));
        }
        Ok(MultiHeadNet {
            trunk: arch.trunk(),
            head: arch.head(),
            arch,
            params,
        })
    }

    pub fn arch(&self) -> &MultiHeadArch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Vec<f64> {
        &mut self.params
    }

    pub fn trunk_param_len(&self) -> usize {
        self.trunk.param_len()
    }

    pub fn head_param_len(&self) -> usize {
        self.head.param_len()
    }

    pub fn feature_dim(&self) -> usize {
        self.trunk.out_dim()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.arch.input_len() {
            return Err(Error::Contract(format!(
                "network input width {} != {}",
                x.ncols(),
                self.arch.input_len()
            )));
        }
        Ok(())
    }

    fn head_params<'a>(&self, p: &'a [f64], h: usize) -> &'a [f64] {
        let start = self.trunk.param_len() + h * self.head.param_len();
        &p[start..start + self.head.param_len()]
    }

    /// Trunk features (post-ReLU, flattened HWC), one row per sample.
    pub fn embed(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let x = x.as_standard_layout();
        let cache = self.trunk.forward(&self.params, x.as_slice().expect("standard layout"), x.nrows());
        Ok(cache.features().to_owned())
    }

    /// Class probabilities per head, each `batch x classes`.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.check_input(&x)?;
        let x = x.as_standard_layout();
        let cache = self.trunk.forward(&self.params, x.as_slice().expect("standard layout"), x.nrows());
        Ok((0..self.arch.heads)
            .map(|h| {
                let acts = self.head.forward(self.head_params(&self.params, h), cache.features());
                softmax_rows(acts.last().expect("head output"))
            })
            .collect())
    }

    fn check_targets(&self, x: &ArrayView2<f64>, targets: &ArrayView2<usize>) -> Result<()> {
        self.check_input(x)?;
        if targets.dim() != (x.nrows(), self.arch.heads) || x.nrows() == 0 {
            return Err(Error::Contract(format!(
                "targets shape {:?} does not match batch {} x {} heads",
                targets.dim(),
                x.nrows(),
                self.arch.heads
            )));
        }
        if targets.iter().any(|&t| t >= self.arch.classes) {
            return Err(Error::Contract("target class out of range".into()));
        }
        Ok(())
    }

    /// Mean cross-entropy of each head over the batch, evaluated at `params`.
    pub fn head_losses(&self, params: &[f64], x: ArrayView2<f64>, targets: ArrayView2<usize>) -> Result<Vec<f64>> {
        Ok(self.loss_and_grad_inner(params, x, targets, false)?.0)
    }

    /// Per-head mean cross-entropy and the gradient of their sum.
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        x: ArrayView2<f64>,
        targets: ArrayView2<usize>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.loss_and_grad_inner(params, x, targets, true)
    }

    fn loss_and_grad_inner(
        &self,
        params: &[f64],
        x: ArrayView2<f64>,
        targets: ArrayView2<usize>,
        with_grad: bool,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_targets(&x, &targets)?;
        if params.len() != self.params.len() {
            return Err(Error::Contract("parameter vector length mismatch".into()));
        }
        let batch = x.nrows();
        let x = x.as_standard_layout();
        let cache = self.trunk.forward(params, x.as_slice().expect("standard layout"), batch);
        let feats = cache.features();
        let mut grad = if with_grad { vec![0.0; params.len()] } else { Vec::new() };
        let mut dfeat = Array2::<f64>::zeros(feats.raw_dim());
        let mut losses = Vec::with_capacity(self.arch.heads);
        let trunk_len = self.trunk.param_len();
        for h in 0..self.arch.heads {
            let hp = self.head_params(params, h);
            let acts = self.head.forward(hp, feats);
            let logits = acts.last().expect("head output");
            let probs = softmax_rows(logits);
            let mut loss = 0.0;
            for (b, row) in logits.rows().into_iter().enumerate() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - row[targets[[b, h]]];
            }
            losses.push(loss / batch as f64);
            if with_grad {
                let mut dlogits = probs;
                for b in 0..batch {
                    dlogits[[b, targets[[b, h]]]] -= 1.0;
                }
                dlogits.mapv_inplace(|v| v / batch as f64);
                let start = trunk_len + h * self.head.param_len();
                let g = &mut grad[start..start + self.head.param_len()];
                dfeat += &self.head.backward(hp, feats, &acts, dlogits, g);
            }
        }
        if with_grad {
            self.trunk.backward(params, &cache, dfeat, &mut grad[..trunk_len]);
        }
        Ok((losses, grad))
    }
}
