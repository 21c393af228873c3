//! Structural re-parameterization: zero-pad-embed each branch kernel into a
//! 3x3x3 kernel and sum, so the four training-time branches collapse into a
//! single convolution for inference. Biases sum by linearity.

use crate::ecm::EcmParams;
use crate::error::{Error, Result};
use crate::model::{forward, BlockParams, ModelWeights};
use crate::nn::ConvKernel;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of running fused and multi-branch weights on probe inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionReport {
    pub max_abs_divergence: f32,
    pub probes_run: usize,
    pub param_count_before: usize,
    pub param_count_after: usize,
}

/// Embeds a branch kernel into 3x3x3 extents: central slices carry the
/// original weights, every other tap is exactly 0.0. A 3x3x3 kernel passes
/// through unchanged.
pub fn embed_kernel(k: &ConvKernel) -> Result<ConvKernel> {
    let extents = k.extents();
    if ![(1, 3, 3), (3, 1, 3), (3, 3, 1), (3, 3, 3)].contains(&extents) {
        return Err(Error::InvalidParameter(format!(
            "cannot embed kernel with extents {extents:?}"
        )));
    }
    let (kt, kh, kw) = extents;
    let (ot, oh, ow) = ((3 - kt) / 2, (3 - kh) / 2, (3 - kw) / 2);
    let weights = k.weights.pad_zero(&[
        (0, 0),
        (0, 0),
        (ot, ot),
        (oh, oh),
        (ow, ow),
    ])?;
    ConvKernel::new(weights, k.bias.clone())
}

/// Sums the zero-padded branch kernels and their biases into one 3x3x3 kernel.
pub fn fuse_ecm(p: &EcmParams) -> Result<ConvKernel> {
    let mut weights = p.st.weights.clone();
    let mut bias = p.st.bias.clone();
    for branch in [&p.fl, &p.spb_h, &p.spb_v] {
        let embedded = embed_kernel(branch)?;
        weights = weights.elementwise_add(&embedded.weights)?;
        bias = bias.elementwise_add(&embedded.bias)?;
    }
    ConvKernel::new(weights, bias)
}

/// Fuses two branches of an ST+FL block.
pub fn fuse_st_fl(st: &ConvKernel, fl: &ConvKernel) -> Result<ConvKernel> {
    let embedded = embed_kernel(fl)?;
    ConvKernel::new(
        st.weights.elementwise_add(&embedded.weights)?,
        st.bias.elementwise_add(&embedded.bias)?,
    )
}

fn fuse_block(block: &BlockParams) -> Result<BlockParams> {
    Ok(match block {
        BlockParams::Conv(k) => BlockParams::Conv(k.clone()),
        BlockParams::StOnly(k) => BlockParams::Fused(k.clone()),
        BlockParams::StFl { st, fl } => BlockParams::Fused(fuse_st_fl(st, fl)?),
        BlockParams::Ecm(p) => BlockParams::Fused(fuse_ecm(p)?),
        BlockParams::Fused(_) => {
            return Err(Error::InvalidParameter(
                "model is already fused; refusing to fuse again".into(),
            ))
        }
    })
}

/// Replaces every branch block with its fused convolution; all other tensors
/// are copied verbatim.
pub fn fuse_model(w: &ModelWeights) -> Result<ModelWeights> {
    if w.fused {
        return Err(Error::InvalidParameter(
            "model is already fused; refusing to fuse again".into(),
        ));
    }
    let fuse_all = |blocks: &[BlockParams]| -> Result<Vec<BlockParams>> {
        blocks.iter().map(fuse_block).collect()
    };
    Ok(ModelWeights {
        config: w.config.clone(),
        shared: fuse_all(&w.shared)?,
        low: fuse_all(&w.low)?,
        high: fuse_all(&w.high)?,
        bin_maps: w.bin_maps.clone(),
        fused: true,
        seed: w.seed,
    })
}

/// Frame count used for verification probe sequences.
pub const VERIFY_PROBE_FRAMES: usize = 4;

/// Runs both weight sets on seeded random probe sequences and reports the
/// largest embedding divergence plus parameter counts.
pub fn verify_fusion(
    w_multi: &ModelWeights,
    w_fused: &ModelWeights,
    probes: usize,
    seed: u64,
) -> Result<FusionReport> {
    if probes == 0 {
        return Err(Error::InvalidParameter("probes must be >= 1".into()));
    }
    if w_multi.config != w_fused.config {
        return Err(Error::FingerprintMismatch {
            expected: w_multi.config.fingerprint(),
            found: w_fused.config.fingerprint(),
        });
    }
    let (h, wd) = w_multi.config.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_div = 0.0f32;
    for _ in 0..probes {
        let x = Tensor::from_fn(&[1, 1, VERIFY_PROBE_FRAMES, h, wd], |_| {
            rng.gen_range(0.0..1.0)
        })?;
        let a = forward(&x, w_multi)?;
        let b = forward(&x, w_fused)?;
        max_div = max_div.max(a.values.max_abs_diff(&b.values)?);
    }
    Ok(FusionReport {
        max_abs_divergence: max_div,
        probes_run: probes,
        param_count_before: w_multi.param_count(),
        param_count_after: w_fused.param_count(),
    })
}
