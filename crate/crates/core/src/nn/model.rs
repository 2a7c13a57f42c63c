//! Encoder-decoder segmentation network with skip connections.
//!
//! Each encoder stage is two 3×3 (×3) convolutions with a nonlinearity, followed
//! by 2× average pooling; channels double per stage. The bottleneck stage is
//! two more convolutions; its post-activation map, averaged over space, is the
//! latent vector `h(X)`. Decoder stages upsample (nearest), concatenate the
//! matching skip, and apply two convolutions. A 1×1 convolution and a sigmoid
//! produce per-voxel foreground probabilities `F(X)`.
//!
//! All parameters live in one flat vector so optimizers, checkpoints and
//! finite-difference probes can treat them uniformly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ops::{self, Activation};
use crate::error::{Error, Result};
use crate::volume::{dims3, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dims: u8,
    pub in_channels: usize,
    pub base_filters: usize,
    pub depth: usize,
    pub patch_size: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: 2,
            in_channels: 1,
            base_filters: 8,
            depth: 2,
            patch_size: vec![32, 32],
            activation: Activation::LeakyRelu,
        }
    }
}

impl ModelConfig {
    /// 3D configuration with 64³ patches.
    pub fn volumetric() -> Self {
        Self {
            dims: 3,
            patch_size: vec![64, 64, 64],
            depth: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims != 2 && self.dims != 3 {
            return Err(Error::config("model.dims", format!("must be 2 or 3, got {}", self.dims)));
        }
        if self.in_channels < 1 {
            return Err(Error::config("model.in_channels", "must be >= 1"));
        }
        if self.base_filters < 4 {
            return Err(Error::config("model.base_filters", "must be >= 4"));
        }
        if self.depth < 2 || self.depth > 8 {
            return Err(Error::config("model.depth", format!("must be in 2..=8, got {}", self.depth)));
        }
        if self.patch_size.len() != self.dims as usize {
            return Err(Error::config(
                "model.patch_size",
                format!("expected {} axes, got {}", self.dims, self.patch_size.len()),
            ));
        }
        let div = 1usize << self.depth;
        if let Some(&s) = self.patch_size.iter().find(|&&s| s == 0 || s % div != 0) {
            return Err(Error::config(
                "model.patch_size",
                format!("{s} is not a positive multiple of 2^depth = {div}"),
            ));
        }
        if self.param_count().is_none() {
            return Err(Error::config("model.base_filters", "parameter count overflows"));
        }
        Ok(())
    }

    /// Number of trainable parameters, or `None` on arithmetic overflow.
    pub fn param_count(&self) -> Option<usize> {
        let kvol: usize = self.kernel().iter().product();
        let conv = |cin: usize, cout: usize, kvol: usize| cin.checked_mul(cout)?.checked_mul(kvol)?.checked_add(cout);
        let channels = |level: usize| self.base_filters.checked_mul(1usize.checked_shl(level as u32)?);
        let mut total = 0usize;
        let mut cin = self.in_channels;
        for level in 0..=self.depth {
            let c = channels(level)?;
            total = total.checked_add(conv(cin, c, kvol)?)?.checked_add(conv(c, c, kvol)?)?;
            if level < self.depth {
                let below = channels(level + 1)?;
                total = total
                    .checked_add(conv(below.checked_add(c)?, c, kvol)?)?
                    .checked_add(conv(c, c, kvol)?)?;
            }
            cin = c;
        }
        total.checked_add(conv(self.base_filters, 1, 1)?)
    }

    fn pool_factor(&self) -> [usize; 3] {
        if self.dims == 3 {
            [2, 2, 2]
        } else {
            [1, 2, 2]
        }
    }

    fn kernel(&self) -> [usize; 3] {
        if self.dims == 3 {
            [3, 3, 3]
        } else {
            [1, 3, 3]
        }
    }

    fn level_dims(&self, level: usize) -> [usize; 3] {
        let [d, h, w] = dims3(&self.patch_size);
        let [fd, fh, fw] = self.pool_factor();
        let pow = |f: usize| f.pow(level as u32);
        [d / pow(fd), h / pow(fh), w / pow(fw)]
    }

    fn level_channels(&self, level: usize) -> usize {
        self.base_filters << level
    }

    /// Length of the latent vector: channel count at the bottleneck.
    pub fn latent_len(&self) -> usize {
        self.level_channels(self.depth)
    }

    /// Spatial extent of the bottleneck activation map.
    pub fn bottleneck_shape(&self) -> Vec<usize> {
        let div = 1usize << self.depth;
        self.patch_size.iter().map(|s| s / div).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Conv {
    cin: usize,
    cout: usize,
    kernel: [usize; 3],
    w_off: usize,
    b_off: usize,
}

impl Conv {
    fn k(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    first: Conv,
    second: Conv,
}

/// Per-voxel foreground probabilities, shaped like the input patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub shape: Vec<usize>,
    pub probs: Vec<f64>,
}

/// Bottleneck features `h(X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentFeatures(pub Vec<f64>);

impl LatentFeatures {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    encoder: Vec<Block>,
    bottleneck: Block,
    decoder: Vec<Block>,
    head: Conv,
    specs: Vec<ParamSpec>,
    params: Vec<f64>,
}

struct ConvCache {
    cols: Vec<f64>,
    pre: Vec<f64>,
}

struct BlockCache {
    dims: [usize; 3],
    first: ConvCache,
    second: ConvCache,
}

/// Intermediate values kept from a forward pass for [`Model::backward`].
pub struct ForwardTrace {
    encoder: Vec<BlockCache>,
    bottleneck: BlockCache,
    decoder: Vec<BlockCache>,
    head_input: Vec<f64>,
    probs: Vec<f64>,
}

/// Gradients of a scalar loss with respect to the parameters and the input patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

impl Model {
    /// Build a model with He-normal weights and zero biases drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let kernel = config.kernel();
        let mut specs = Vec::new();
        let mut total = 0usize;
        let mut conv = |name: String, cin: usize, cout: usize, kernel: [usize; 3]| {
            let kvol: usize = kernel.iter().product();
            let w_off = total;
            specs.push(ParamSpec {
                name: format!("{name}.weight"),
                shape: vec![cout, cin, kernel[0], kernel[1], kernel[2]],
                offset: w_off,
            });
            total += cout * cin * kvol;
            let b_off = total;
            specs.push(ParamSpec {
                name: format!("{name}.bias"),
                shape: vec![cout],
                offset: b_off,
            });
            total += cout;
            Conv {
                cin,
                cout,
                kernel,
                w_off,
                b_off,
            }
        };
        let mut encoder = Vec::with_capacity(config.depth);
        let mut cin = config.in_channels;
        for level in 0..config.depth {
            let c = config.level_channels(level);
            encoder.push(Block {
                first: conv(format!("enc{level}.conv1"), cin, c, kernel),
                second: conv(format!("enc{level}.conv2"), c, c, kernel),
            });
            cin = c;
        }
        let cb = config.latent_len();
        let bottleneck = Block {
            first: conv("bottleneck.conv1".into(), cin, cb, kernel),
            second: conv("bottleneck.conv2".into(), cb, cb, kernel),
        };
        let mut decoder = Vec::with_capacity(config.depth);
        for level in 0..config.depth {
            let c = config.level_channels(level);
            let below = config.level_channels(level + 1);
            decoder.push(Block {
                first: conv(format!("dec{level}.conv1"), below + c, c, kernel),
                second: conv(format!("dec{level}.conv2"), c, c, kernel),
            });
        }
        let head = conv("head".into(), config.base_filters, 1, [1, 1, 1]);

        let mut params = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = encoder
            .iter()
            .chain(std::iter::once(&bottleneck))
            .chain(decoder.iter())
            .flat_map(|b| [&b.first, &b.second])
            .chain(std::iter::once(&head));
        for c in convs {
            let gain = if c.cout == 1 { 1.0 } else { 2.0 };
            let std = (gain / c.k() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in &mut params[c.w_off..c.w_off + c.cout * c.k()] {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(Self {
            config,
            encoder,
            bottleneck,
            decoder,
            head,
            specs,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Replace all parameters (e.g. from a checkpoint).
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                left: self.params.len(),
                right: params.len(),
            });
        }
        if let Some(index) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        self.params = params;
        Ok(())
    }

    /// Hex SHA-256 of the little-endian parameter bytes.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn check_patch(&self, patch: &Volume) -> Result<()> {
        if patch.shape() != self.config.patch_size.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: self.config.patch_size.clone(),
                actual: patch.shape().to_vec(),
            });
        }
        if self.config.in_channels != 1 {
            return Err(Error::config("model.in_channels", "volume inputs are single-channel"));
        }
        Ok(())
    }

    /// Prediction `F(X)` and latent features `h(X)` for one patch.
    pub fn forward(&self, patch: &Volume) -> Result<(Prediction, LatentFeatures)> {
        let (pred, latent, _) = self.forward_trace(patch)?;
        Ok((pred, latent))
    }

    /// Forward pass that also records what [`Model::backward`] needs.
    pub fn forward_trace(&self, patch: &Volume) -> Result<(Prediction, LatentFeatures, ForwardTrace)> {
        self.check_patch(patch)?;
        let (probs, latent, trace) = self.forward_raw(patch.voxels());
        Ok((
            Prediction {
                shape: patch.shape().to_vec(),
                probs,
            },
            LatentFeatures(latent),
            trace,
        ))
    }

    fn conv_forward(&self, conv: &Conv, x: &[f64], dims: [usize; 3]) -> (Vec<f64>, Vec<f64>) {
        let p: usize = dims.iter().product();
        let cols = if conv.kernel == [1, 1, 1] {
            x.to_vec()
        } else {
            ops::im2col(x, conv.cin, dims, conv.kernel)
        };
        let mut out = vec![0.0; conv.cout * p];
        for (o, row) in out.chunks_exact_mut(p).enumerate() {
            row.fill(self.params[conv.b_off + o]);
        }
        let w = &self.params[conv.w_off..conv.w_off + conv.cout * conv.k()];
        ops::gemm(conv.cout, conv.k(), p, w, false, &cols, false, 1.0, &mut out);
        (cols, out)
    }

    fn block_forward(&self, block: &Block, x: &[f64], dims: [usize; 3]) -> (Vec<f64>, BlockCache) {
        let act = self.config.activation;
        let (cols1, pre1) = self.conv_forward(&block.first, x, dims);
        let a1: Vec<f64> = pre1.iter().map(|&v| act.apply(v)).collect();
        let (cols2, pre2) = self.conv_forward(&block.second, &a1, dims);
        let out = pre2.iter().map(|&v| act.apply(v)).collect();
        (
            out,
            BlockCache {
                dims,
                first: ConvCache { cols: cols1, pre: pre1 },
                second: ConvCache { cols: cols2, pre: pre2 },
            },
        )
    }

    fn forward_raw(&self, input: &[f64]) -> (Vec<f64>, Vec<f64>, ForwardTrace) {
        let cfg = &self.config;
        let pf = cfg.pool_factor();
        let mut x = input.to_vec();
        let mut skips = Vec::with_capacity(cfg.depth);
        let mut enc_caches = Vec::with_capacity(cfg.depth);
        for (level, block) in self.encoder.iter().enumerate() {
            let dims = cfg.level_dims(level);
            let (out, cache) = self.block_forward(block, &x, dims);
            x = ops::avg_pool(&out, block.second.cout, dims, pf);
            skips.push(out);
            enc_caches.push(cache);
        }
        let bdims = cfg.level_dims(cfg.depth);
        let (bott, bott_cache) = self.block_forward(&self.bottleneck, &x, bdims);
        let bp: usize = bdims.iter().product();
        let latent: Vec<f64> = bott
            .chunks_exact(bp)
            .map(|c| c.iter().sum::<f64>() / bp as f64)
            .collect();

        let mut y = bott;
        let mut y_channels = cfg.latent_len();
        let mut dec_caches: Vec<Option<BlockCache>> = (0..cfg.depth).map(|_| None).collect();
        for level in (0..cfg.depth).rev() {
            let dims = cfg.level_dims(level);
            let mut cat = ops::upsample(&y, y_channels, dims, pf);
            cat.extend_from_slice(&skips[level]);
            let (out, cache) = self.block_forward(&self.decoder[level], &cat, dims);
            y = out;
            y_channels = self.decoder[level].second.cout;
            dec_caches[level] = Some(cache);
        }
        let dims = cfg.level_dims(0);
        let (_, logits) = self.conv_forward(&self.head, &y, dims);
        let probs: Vec<f64> = logits.iter().map(|&z| ops::sigmoid(z)).collect();
        let trace = ForwardTrace {
            encoder: enc_caches,
            bottleneck: bott_cache,
            decoder: dec_caches.into_iter().map(|c| c.expect("every level visited")).collect(),
            head_input: y,
            probs: probs.clone(),
        };
        (probs, latent, trace)
    }

    fn conv_backward(
        &self,
        conv: &Conv,
        cols: &[f64],
        dout: &[f64],
        dims: [usize; 3],
        grads: &mut [f64],
    ) -> Vec<f64> {
        let p: usize = dims.iter().product();
        let k = conv.k();
        for (o, row) in dout.chunks_exact(p).enumerate() {
            grads[conv.b_off + o] += row.iter().sum::<f64>();
        }
        ops::gemm(
            conv.cout,
            p,
            k,
            dout,
            false,
            cols,
            true,
            1.0,
            &mut grads[conv.w_off..conv.w_off + conv.cout * k],
        );
        let w = &self.params[conv.w_off..conv.w_off + conv.cout * k];
        let mut dcols = vec![0.0; k * p];
        ops::gemm(k, conv.cout, p, w, true, dout, false, 0.0, &mut dcols);
        if conv.kernel == [1, 1, 1] {
            dcols
        } else {
            ops::col2im(&dcols, conv.cin, dims, conv.kernel)
        }
    }

    fn block_backward(&self, block: &Block, cache: &BlockCache, dout: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let act = self.config.activation;
        let d2: Vec<f64> = dout
            .iter()
            .zip(&cache.second.pre)
            .map(|(g, &z)| g * act.derivative(z))
            .collect();
        let da1 = self.conv_backward(&block.second, &cache.second.cols, &d2, cache.dims, grads);
        let d1: Vec<f64> = da1
            .iter()
            .zip(&cache.first.pre)
            .map(|(g, &z)| g * act.derivative(z))
            .collect();
        self.conv_backward(&block.first, &cache.first.cols, &d1, cache.dims, grads)
    }

    /// Back-propagate upstream gradients on the probabilities and on the latent
    /// vector through the pass recorded in `trace`. Either may be `None`.
    pub fn backward(&self, trace: &ForwardTrace, dprobs: Option<&[f64]>, dlatent: Option<&[f64]>) -> Gradients {
        let cfg = &self.config;
        let pf = cfg.pool_factor();
        let mut grads = vec![0.0; self.params.len()];

        let mut skip_grads: Vec<Vec<f64>> = (0..cfg.depth)
            .map(|l| vec![0.0; cfg.level_channels(l) * cfg.level_dims(l).iter().product::<usize>()])
            .collect();
        let bdims = cfg.level_dims(cfg.depth);
        let bp: usize = bdims.iter().product();
        let mut dy = match dprobs {
            Some(dp) => {
                let dz: Vec<f64> = dp.iter().zip(&trace.probs).map(|(g, &p)| g * p * (1.0 - p)).collect();
                let mut dy = self.conv_backward(&self.head, &trace.head_input, &dz, cfg.level_dims(0), &mut grads);
                for level in 0..cfg.depth {
                    let dims = cfg.level_dims(level);
                    let dcat = self.block_backward(&self.decoder[level], &trace.decoder[level], &dy, &mut grads);
                    let below = cfg.level_channels(level + 1);
                    let p: usize = dims.iter().product();
                    let (dup, dskip) = dcat.split_at(below * p);
                    for (s, g) in skip_grads[level].iter_mut().zip(dskip) {
                        *s += g;
                    }
                    dy = ops::upsample_backward(dup, below, dims, pf);
                }
                debug_assert_eq!(dy.len(), cfg.latent_len() * bp);
                dy
            }
            None => vec![0.0; cfg.latent_len() * bp],
        };
        if let Some(dh) = dlatent {
            for (row, &g) in dy.chunks_exact_mut(bp).zip(dh) {
                let share = g / bp as f64;
                row.iter_mut().for_each(|v| *v += share);
            }
        }
        let mut dx = self.block_backward(&self.bottleneck, &trace.bottleneck, &dy, &mut grads);
        for level in (0..cfg.depth).rev() {
            let dims = cfg.level_dims(level);
            let c = cfg.level_channels(level);
            let mut dout = ops::avg_pool_backward(&dx, c, dims, pf);
            for (d, s) in dout.iter_mut().zip(&skip_grads[level]) {
                *d += s;
            }
            dx = self.block_backward(&self.encoder[level], &trace.encoder[level], &dout, &mut grads);
        }
        Gradients {
            params: grads,
            input: dx,
        }
    }
}
