//! Enhanced convolution block: four parallel extractors over the same input
//! (spatial-temporal 3x3x3, frame-level 1x3x3, horizontal-strip 3x1x3,
//! vertical-strip 3x3x1) summed into one output, plus the reduced ST-only
//! and ST+FL variants. The nonlinearity is applied by the caller.

use crate::error::{Error, Result};
use crate::nn::{conv3d, ConvKernel};
use crate::tensor::Tensor;

/// Which branches a block evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    StOnly,
    StFl,
    FullEcm,
    Fused,
}

impl BlockKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BlockKind::StOnly => "st_only",
            BlockKind::StFl => "st_fl",
            BlockKind::FullEcm => "full_ecm",
            BlockKind::Fused => "fused",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "st_only" => Ok(BlockKind::StOnly),
            "st_fl" => Ok(BlockKind::StFl),
            "full_ecm" => Ok(BlockKind::FullEcm),
            "fused" => Ok(BlockKind::Fused),
            other => Err(Error::InvalidParameter(format!(
                "unknown block kind {other:?}"
            ))),
        }
    }
}

/// The four branch kernels of one block, sharing C_in and C_out.
#[derive(Debug, Clone, PartialEq)]
pub struct EcmParams {
    pub st: ConvKernel,
    pub fl: ConvKernel,
    pub spb_h: ConvKernel,
    pub spb_v: ConvKernel,
}

impl EcmParams {
    pub fn new(
        st: ConvKernel,
        fl: ConvKernel,
        spb_h: ConvKernel,
        spb_v: ConvKernel,
    ) -> Result<Self> {
        check_extents(&st, (3, 3, 3), "st")?;
        check_extents(&fl, (1, 3, 3), "fl")?;
        check_extents(&spb_h, (3, 1, 3), "spb_h")?;
        check_extents(&spb_v, (3, 3, 1), "spb_v")?;
        let (ci, co) = (st.in_channels(), st.out_channels());
        for (k, name) in [(&fl, "fl"), (&spb_h, "spb_h"), (&spb_v, "spb_v")] {
            if k.in_channels() != ci || k.out_channels() != co {
                return Err(Error::InvalidParameter(format!(
                    "branch {name} has channels ({}, {}), st has ({co}, {ci})",
                    k.out_channels(),
                    k.in_channels()
                )));
            }
        }
        Ok(EcmParams {
            st,
            fl,
            spb_h,
            spb_v,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.st.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.st.out_channels()
    }

    pub fn param_count(&self) -> usize {
        self.st.param_count()
            + self.fl.param_count()
            + self.spb_h.param_count()
            + self.spb_v.param_count()
    }
}

fn check_extents(k: &ConvKernel, want: (usize, usize, usize), name: &str) -> Result<()> {
    if k.extents() != want {
        return Err(Error::InvalidParameter(format!(
            "{name} kernel must have extents {want:?}, got {:?}",
            k.extents()
        )));
    }
    Ok(())
}

/// Frame-level extractor: 1x3x3 convolution; each output frame depends only
/// on the same input frame.
pub fn frame_level(x: &Tensor, fl: &ConvKernel) -> Result<Tensor> {
    check_extents(fl, (1, 3, 3), "fl")?;
    conv3d(x, fl)
}

/// Spatial-temporal extractor: plain 3x3x3 convolution.
pub fn spatial_temporal(x: &Tensor, st: &ConvKernel) -> Result<Tensor> {
    check_extents(st, (3, 3, 3), "st")?;
    conv3d(x, st)
}

/// Horizontal-strip extractor: 3x1x3 convolution; no cross-row mixing.
pub fn strip_horizontal(x: &Tensor, k: &ConvKernel) -> Result<Tensor> {
    check_extents(k, (3, 1, 3), "spb_h")?;
    conv3d(x, k)
}

/// Vertical-strip extractor: 3x3x1 convolution; no cross-column mixing.
pub fn strip_vertical(x: &Tensor, k: &ConvKernel) -> Result<Tensor> {
    check_extents(k, (3, 3, 1), "spb_v")?;
    conv3d(x, k)
}

/// Branch sum in the fixed order ST, FL, SPB-H, SPB-V; each branch carries
/// its own bias, so the sum adds as many biases as branches evaluated.
pub fn ecm_forward(x: &Tensor, p: &EcmParams, kind: BlockKind) -> Result<Tensor> {
    if x.rank() != 5 {
        return Err(Error::InvalidParameter(format!(
            "block input must have rank 5, got {:?}",
            x.dims()
        )));
    }
    if x.dims()[1] != p.in_channels() {
        return Err(Error::InvalidParameter(format!(
            "channel mismatch: block expects {} input channels, tensor has {}",
            p.in_channels(),
            x.dims()[1]
        )));
    }
    match kind {
        BlockKind::StOnly => spatial_temporal(x, &p.st),
        BlockKind::StFl => {
            let st = spatial_temporal(x, &p.st)?;
            let fl = frame_level(x, &p.fl)?;
            st.elementwise_add(&fl)
        }
        BlockKind::FullEcm => {
            let mut out = spatial_temporal(x, &p.st)?;
            out = out.elementwise_add(&frame_level(x, &p.fl)?)?;
            out = out.elementwise_add(&strip_horizontal(x, &p.spb_h)?)?;
            out.elementwise_add(&strip_vertical(x, &p.spb_v)?)
        }
        BlockKind::Fused => Err(Error::InvalidParameter(
            "fused blocks carry a single kernel; multi-branch params are invalid here".into(),
        )),
    }
}
