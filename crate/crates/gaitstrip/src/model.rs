//! Network assembly: a shared stem, two resolution paths (full-resolution and
//! max-pool-downsampled) of stacked convolution blocks, temporal max
//! aggregation, per-row generalized-mean pooling over width, and independent
//! per-row linear maps whose outputs are concatenated into the embedding
//! (low-resolution rows first).

use crate::ecm::{ecm_forward, BlockKind, EcmParams};
use crate::error::{Error, Result};
use crate::nn::{conv3d, leaky_relu, linear_apply, maxpool3d, ConvKernel, LinearMap};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Architecture plan. `block_channels[i]` is the output channel count of
/// block i; block 0 reads the single silhouette channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub block_channels: Vec<usize>,
    /// Index of the first block built from branch extractors.
    pub ecm_from_block: usize,
    pub block_kind: BlockKind,
    /// (window, stride) of the downsampling pool on the high-level path.
    pub highlevel_pool: ((usize, usize, usize), (usize, usize, usize)),
    /// Blocks before this index are shared by both paths.
    pub split_after_block: usize,
    pub embedding_dim: usize,
    pub gem_p: f32,
    /// (H, W) of every input frame.
    pub input_size: (usize, usize),
    pub leaky_slope: f32,
}

impl ModelConfig {
    pub fn casia_b() -> Self {
        ModelConfig {
            block_channels: vec![32, 64, 128, 128],
            ecm_from_block: 1,
            block_kind: BlockKind::FullEcm,
            highlevel_pool: ((1, 2, 2), (1, 2, 2)),
            split_after_block: 1,
            embedding_dim: 128,
            gem_p: 6.5,
            input_size: (64, 44),
            leaky_slope: 0.01,
        }
    }

    pub fn oumvlp() -> Self {
        ModelConfig {
            block_channels: vec![64, 128, 196, 256, 256],
            ecm_from_block: 3,
            ..ModelConfig::casia_b()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.block_channels.len();
        if n == 0 || self.block_channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidParameter(format!(
                "invalid channel plan {:?}",
                self.block_channels
            )));
        }
        if self.split_after_block == 0 || self.split_after_block >= n {
            return Err(Error::InvalidParameter(format!(
                "split_after_block {} out of range for {n} blocks",
                self.split_after_block
            )));
        }
        if self.ecm_from_block > n {
            return Err(Error::InvalidParameter(format!(
                "ecm_from_block {} out of range for {n} blocks",
                self.ecm_from_block
            )));
        }
        if self.ecm_from_block < self.split_after_block {
            return Err(Error::InvalidParameter(
                "shared stem blocks must be plain convolutions".into(),
            ));
        }
        if self.embedding_dim == 0 {
            return Err(Error::InvalidParameter("embedding_dim must be >= 1".into()));
        }
        if !(self.gem_p >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gem_p must be >= 1, got {}",
                self.gem_p
            )));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::InvalidParameter(format!(
                "leaky_slope must be in [0, 1), got {}",
                self.leaky_slope
            )));
        }
        let (h, w) = self.input_size;
        let ((_, wh, ww), (_, sh, sw)) = self.highlevel_pool;
        if wh > h || ww > w || sh == 0 || sw == 0 {
            return Err(Error::InvalidParameter(
                "high-level pool incompatible with input size".into(),
            ));
        }
        Ok(())
    }

    /// Row counts of the two paths: convolutions preserve H, only the
    /// high-level pool shrinks it.
    pub fn path_rows(&self) -> (usize, usize) {
        let (h, _) = self.input_size;
        let ((_, wh, _), (_, sh, _)) = self.highlevel_pool;
        (h, (h - wh) / sh + 1)
    }

    pub fn bins(&self) -> usize {
        let (low, high) = self.path_rows();
        low + high
    }

    /// Canonical textual form; doubles as the weight-file fingerprint.
    pub fn fingerprint(&self) -> String {
        let ch: Vec<String> = self.block_channels.iter().map(|c| c.to_string()).collect();
        let ((wt, wh, ww), (st, sh, sw)) = self.highlevel_pool;
        format!(
            "ch={};ecm_from={};kind={};pool={wt},{wh},{ww}:{st},{sh},{sw};split={};d_out={};gem_p={};in={}x{};slope={}",
            ch.join(","),
            self.ecm_from_block,
            self.block_kind.as_str(),
            self.split_after_block,
            self.embedding_dim,
            self.gem_p,
            self.input_size.0,
            self.input_size.1,
            self.leaky_slope,
        )
    }

    pub fn from_fingerprint(s: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for part in s.split(';') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad fingerprint field {part:?}")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("fingerprint missing field {k:?}")))
        };
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad integer {v:?} in fingerprint")))
        };
        let parse_f32 = |v: &str| {
            v.parse::<f32>()
                .map_err(|_| Error::Format(format!("bad float {v:?} in fingerprint")))
        };
        let block_channels = get("ch")?
            .split(',')
            .map(parse_usize)
            .collect::<Result<Vec<_>>>()?;
        let pool_raw = get("pool")?;
        let (win, str_) = pool_raw
            .split_once(':')
            .ok_or_else(|| Error::Format(format!("bad pool spec {pool_raw:?}")))?;
        let triple = |v: &str| -> Result<(usize, usize, usize)> {
            let parts = v.split(',').map(parse_usize).collect::<Result<Vec<_>>>()?;
            if parts.len() != 3 {
                return Err(Error::Format(format!("bad pool triple {v:?}")));
            }
            Ok((parts[0], parts[1], parts[2]))
        };
        let in_raw = get("in")?;
        let (ih, iw) = in_raw
            .split_once('x')
            .ok_or_else(|| Error::Format(format!("bad input size {in_raw:?}")))?;
        let cfg = ModelConfig {
            block_channels,
            ecm_from_block: parse_usize(get("ecm_from")?)?,
            block_kind: BlockKind::parse(get("kind")?)?,
            highlevel_pool: (triple(win)?, triple(str_)?),
            split_after_block: parse_usize(get("split")?)?,
            embedding_dim: parse_usize(get("d_out")?)?,
            gem_p: parse_f32(get("gem_p")?)?,
            input_size: (parse_usize(ih)?, parse_usize(iw)?),
            leaky_slope: parse_f32(get("slope")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Learnable content of one block.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockParams {
    /// Plain stem convolution (3x3x3).
    Conv(ConvKernel),
    StOnly(ConvKernel),
    StFl { st: ConvKernel, fl: ConvKernel },
    Ecm(EcmParams),
    Fused(ConvKernel),
}

impl BlockParams {
    pub fn param_count(&self) -> usize {
        match self {
            BlockParams::Conv(k) | BlockParams::StOnly(k) | BlockParams::Fused(k) => {
                k.param_count()
            }
            BlockParams::StFl { st, fl } => st.param_count() + fl.param_count(),
            BlockParams::Ecm(p) => p.param_count(),
        }
    }
}

/// All learnable tensors of a model, in multi-branch or fused form.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    /// Blocks before the split, shared by both paths.
    pub shared: Vec<BlockParams>,
    /// Full-resolution path blocks after the split.
    pub low: Vec<BlockParams>,
    /// Downsampled path blocks after the split.
    pub high: Vec<BlockParams>,
    /// One linear map per embedding row, low rows first.
    pub bin_maps: Vec<LinearMap>,
    pub fused: bool,
    pub seed: u64,
}

impl ModelWeights {
    pub fn param_count(&self) -> usize {
        self.shared
            .iter()
            .chain(&self.low)
            .chain(&self.high)
            .map(BlockParams::param_count)
            .sum::<usize>()
            + self.bin_maps.iter().map(LinearMap::param_count).sum::<usize>()
    }
}

/// One sequence's feature representation: one row per horizontal bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Tensor,
    pub id: String,
    pub label: Option<u32>,
    pub view: Option<String>,
}

fn init_conv(
    rng: &mut ChaCha8Rng,
    c_out: usize,
    c_in: usize,
    extents: (usize, usize, usize),
) -> ConvKernel {
    let (kt, kh, kw) = extents;
    let fan_in = (c_in * kt * kh * kw) as f32;
    let b = (1.0 / fan_in).sqrt();
    let weights = Tensor::from_fn(&[c_out, c_in, kt, kh, kw], |_| rng.gen_range(-b..b)).unwrap();
    ConvKernel::new(weights, Tensor::zeros(&[c_out]).unwrap()).unwrap()
}

fn init_block(
    rng: &mut ChaCha8Rng,
    cfg: &ModelConfig,
    index: usize,
    c_in: usize,
    c_out: usize,
) -> BlockParams {
    if index < cfg.ecm_from_block {
        return BlockParams::Conv(init_conv(rng, c_out, c_in, (3, 3, 3)));
    }
    match cfg.block_kind {
        BlockKind::StOnly => BlockParams::StOnly(init_conv(rng, c_out, c_in, (3, 3, 3))),
        BlockKind::StFl => BlockParams::StFl {
            st: init_conv(rng, c_out, c_in, (3, 3, 3)),
            fl: init_conv(rng, c_out, c_in, (1, 3, 3)),
        },
        BlockKind::FullEcm => BlockParams::Ecm(
            EcmParams::new(
                init_conv(rng, c_out, c_in, (3, 3, 3)),
                init_conv(rng, c_out, c_in, (1, 3, 3)),
                init_conv(rng, c_out, c_in, (3, 1, 3)),
                init_conv(rng, c_out, c_in, (3, 3, 1)),
            )
            .unwrap(),
        ),
        BlockKind::Fused => BlockParams::Fused(init_conv(rng, c_out, c_in, (3, 3, 3))),
    }
}

/// Seeded initialization: kernel weights uniform(-b, b) with b = sqrt(1/fan_in),
/// biases zero. The same (config, seed) always yields bit-identical weights.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.block_channels.len();
    let split = cfg.split_after_block;
    let c_in_of = |i: usize| {
        if i == 0 {
            1
        } else {
            cfg.block_channels[i - 1]
        }
    };

    let shared: Vec<BlockParams> = (0..split)
        .map(|i| init_block(&mut rng, cfg, i, c_in_of(i), cfg.block_channels[i]))
        .collect();
    let low: Vec<BlockParams> = (split..n)
        .map(|i| init_block(&mut rng, cfg, i, c_in_of(i), cfg.block_channels[i]))
        .collect();
    let high: Vec<BlockParams> = (split..n)
        .map(|i| init_block(&mut rng, cfg, i, c_in_of(i), cfg.block_channels[i]))
        .collect();

    let d_in = *cfg.block_channels.last().unwrap();
    let d_out = cfg.embedding_dim;
    let b = (1.0 / d_in as f32).sqrt();
    let bin_maps: Vec<LinearMap> = (0..cfg.bins())
        .map(|_| {
            LinearMap::new(
                Tensor::from_fn(&[d_out, d_in], |_| rng.gen_range(-b..b)).unwrap(),
                Tensor::zeros(&[d_out]).unwrap(),
            )
            .unwrap()
        })
        .collect();

    Ok(ModelWeights {
        config: cfg.clone(),
        shared,
        low,
        high,
        bin_maps,
        fused: matches!(cfg.block_kind, BlockKind::Fused),
        seed,
    })
}

fn block_forward(x: &Tensor, block: &BlockParams, slope: f32) -> Result<Tensor> {
    let summed = match block {
        BlockParams::Conv(k) | BlockParams::StOnly(k) | BlockParams::Fused(k) => conv3d(x, k)?,
        BlockParams::StFl { st, fl } => {
            let a = conv3d(x, st)?;
            let b = conv3d(x, fl)?;
            a.elementwise_add(&b)?
        }
        BlockParams::Ecm(p) => ecm_forward(x, p, BlockKind::FullEcm)?,
    };
    leaky_relu(&summed, slope)
}

fn run_path(mut x: Tensor, blocks: &[BlockParams], slope: f32) -> Result<Tensor> {
    for block in blocks {
        x = block_forward(&x, block, slope)?;
    }
    Ok(x)
}

/// Temporal max, per-row generalized mean over width, per-row linear map.
/// Returns a (rows, d_out) matrix.
fn map_path(x: &Tensor, gem_p: f32, maps: &[LinearMap], d_out: usize) -> Result<Tensor> {
    let aggregated = x.reduce_max(2, false)?; // (1, C, H, W)
    let pooled = aggregated.power_mean(3, gem_p)?; // (1, C, H)
    let [_, c, h] = *pooled.dims() else {
        return Err(Error::InvalidParameter(format!(
            "unexpected pooled shape {:?}",
            pooled.dims()
        )));
    };
    if maps.len() != h {
        return Err(Error::InvalidParameter(format!(
            "{} rows but {} bin maps",
            h,
            maps.len()
        )));
    }
    let mut out = Vec::with_capacity(h * d_out);
    for row in 0..h {
        let v = Tensor::from_fn(&[c], |ci| pooled.data()[ci * h + row])?;
        let mapped = linear_apply(&v, &maps[row])?;
        out.extend_from_slice(mapped.data());
    }
    Tensor::new(&[h, d_out], out)
}

/// Full forward pass for one silhouette sequence (1, 1, T, H, W).
pub fn forward(x: &Tensor, w: &ModelWeights) -> Result<Embedding> {
    let cfg = &w.config;
    if x.rank() != 5 || x.dims()[0] != 1 || x.dims()[1] != 1 {
        return Err(Error::InvalidParameter(format!(
            "input must have shape (1, 1, T, H, W), got {:?}",
            x.dims()
        )));
    }
    let (h, wdt) = cfg.input_size;
    if x.dims()[3] != h || x.dims()[4] != wdt {
        return Err(Error::shape_mismatch(
            &x.dims()[3..],
            &[h, wdt],
            "input spatial size",
        ));
    }
    let slope = cfg.leaky_slope;
    let stem = run_path(x.clone(), &w.shared, slope)?;

    let low_out = run_path(stem.clone(), &w.low, slope)?;
    let (pool_w, pool_s) = cfg.highlevel_pool;
    let high_in = maxpool3d(&stem, pool_w, pool_s)?;
    let high_out = run_path(high_in, &w.high, slope)?;

    let (rows_low, rows_high) = cfg.path_rows();
    let d_out = cfg.embedding_dim;
    let low_bins = map_path(&low_out, cfg.gem_p, &w.bin_maps[..rows_low], d_out)?;
    let high_bins = map_path(&high_out, cfg.gem_p, &w.bin_maps[rows_low..], d_out)?;
    debug_assert_eq!(low_bins.dims()[0], rows_low);
    debug_assert_eq!(high_bins.dims()[0], rows_high);

    let mut values = low_bins.into_data();
    values.extend_from_slice(high_bins.data());
    let values = Tensor::new(&[rows_low + rows_high, d_out], values)?;
    if !values.all_finite() {
        return Err(Error::InvalidParameter(
            "forward produced non-finite embedding values".into(),
        ));
    }
    Ok(Embedding {
        values,
        id: String::new(),
        label: None,
        view: None,
    })
}

/// Elementwise [`forward`] over a batch; any failure aborts with its index.
pub fn forward_batch(xs: &[Tensor], w: &ModelWeights) -> Result<Vec<Embedding>> {
    xs.iter()
        .enumerate()
        .map(|(index, x)| {
            forward(x, w).map_err(|source| Error::Batch {
                index,
                source: Box::new(source),
            })
        })
        .collect()
}
