//! Neural primitives: stride-1 zero-padded 3-D convolution, 3-D max pooling,
//! leaky ReLU, and small dense linear maps. Convolution accumulates every
//! output cell in f64 with a fixed tap order, so the result does not depend
//! on the execution schedule.

use crate::error::{Error, Result};
use crate::exec::{default_parallel, run_chunks};
use crate::tensor::Tensor;

/// Convolution weights (C_out, C_in, k_t, k_h, k_w) with per-output-channel
/// bias and canonical "same" padding ((k-1)/2 per dim).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub weights: Tensor,
    pub bias: Tensor,
    pub padding: (usize, usize, usize),
}

impl ConvKernel {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.rank() != 5 {
            return Err(Error::InvalidParameter(format!(
                "conv weights must have rank 5, got {:?}",
                weights.dims()
            )));
        }
        let d = weights.dims();
        let (c_out, kt, kh, kw) = (d[0], d[2], d[3], d[4]);
        if kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "kernel extents must be odd, got ({kt}, {kh}, {kw})"
            )));
        }
        if bias.dims() != [c_out] {
            return Err(Error::shape_mismatch(
                bias.dims(),
                &[c_out],
                "conv bias vs output channels",
            ));
        }
        let padding = ((kt - 1) / 2, (kh - 1) / 2, (kw - 1) / 2);
        Ok(ConvKernel {
            weights,
            bias,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dims()[1]
    }

    /// (k_t, k_h, k_w)
    pub fn extents(&self) -> (usize, usize, usize) {
        let d = self.weights.dims();
        (d[2], d[3], d[4])
    }

    pub fn param_count(&self) -> usize {
        self.weights.elem_count() + self.bias.elem_count()
    }
}

/// Dense map: out = weights · v + bias, weights (d_out, d_in).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LinearMap {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::InvalidParameter(format!(
                "linear weights must have rank 2, got {:?}",
                weights.dims()
            )));
        }
        let d_out = weights.dims()[0];
        if bias.dims() != [d_out] {
            return Err(Error::shape_mismatch(bias.dims(), &[d_out], "linear bias"));
        }
        Ok(LinearMap { weights, bias })
    }

    pub fn d_out(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn d_in(&self) -> usize {
        self.weights.dims()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weights.elem_count() + self.bias.elem_count()
    }
}

/// Stride-1 cross-correlation of x (N, C_in, T, H, W) with k, using k's
/// zero padding. With canonical padding the T/H/W extents are preserved.
pub fn conv3d(x: &Tensor, k: &ConvKernel) -> Result<Tensor> {
    conv3d_with(x, k, default_parallel())
}

/// Like [`conv3d`] with an explicit schedule choice; results are identical.
pub fn conv3d_with(x: &Tensor, k: &ConvKernel, parallel: bool) -> Result<Tensor> {
    if x.rank() != 5 {
        return Err(Error::InvalidParameter(format!(
            "conv input must have rank 5 (N, C, T, H, W), got {:?}",
            x.dims()
        )));
    }
    let [n, c_in, t_in, h_in, w_in] = *x.dims() else {
        unreachable!()
    };
    if c_in != k.in_channels() {
        return Err(Error::InvalidParameter(format!(
            "channel mismatch: kernel expects {} input channels, tensor has {}",
            k.in_channels(),
            c_in
        )));
    }
    let (kt, kh, kw) = k.extents();
    let (pt, ph, pw) = k.padding;
    let (tp, hp, wp) = (t_in + 2 * pt, h_in + 2 * ph, w_in + 2 * pw);
    if tp < kt || hp < kh || wp < kw {
        return Err(Error::InvalidParameter(format!(
            "kernel ({kt}, {kh}, {kw}) larger than padded input ({tp}, {hp}, {wp})"
        )));
    }
    let (t_out, h_out, w_out) = (tp - kt + 1, hp - kh + 1, wp - kw + 1);
    let c_out = k.out_channels();

    let xp = x.pad_zero(&[(0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)])?;
    let xp_data = xp.data();
    let wdata = k.weights.data();
    let bias = k.bias.data();
    let ktotal = c_in * kt * kh * kw;

    // Compute into (N, t, h, C_out, w) so each (n, t, h) slab is contiguous,
    // then permute to the canonical (N, C_out, T, H, W) layout.
    let mut tmp = vec![0.0f32; n * t_out * h_out * c_out * w_out];
    let slab = c_out * w_out;
    run_chunks(&mut tmp, slab, parallel, |chunk_idx, out_slab| {
        let h = chunk_idx % h_out;
        let t = (chunk_idx / h_out) % t_out;
        let ni = chunk_idx / (h_out * t_out);

        // Gather the receptive rows for this (t, h) as f64 once; they are
        // reused for every output channel.
        let rows = c_in * kt * kh;
        let mut scratch = vec![0.0f64; rows * wp];
        for ci in 0..c_in {
            for dt in 0..kt {
                for dh in 0..kh {
                    let r = (ci * kt + dt) * kh + dh;
                    let src = (((ni * c_in + ci) * tp + t + dt) * hp + h + dh) * wp;
                    let dst = &mut scratch[r * wp..(r + 1) * wp];
                    for (d, &s) in dst.iter_mut().zip(&xp_data[src..src + wp]) {
                        *d = s as f64;
                    }
                }
            }
        }

        let rows = c_in * kt * kh;
        let mut acc = vec![0.0f64; 4 * w_out];
        let mut co = 0;
        // four output channels per pass share the gathered rows, which keeps
        // the inner loop FMA-bound instead of load-bound
        while co + 4 <= c_out && kw == 3 {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut chunks = acc.chunks_exact_mut(w_out);
            let a0 = chunks.next().unwrap();
            let a1 = chunks.next().unwrap();
            let a2 = chunks.next().unwrap();
            let a3 = chunks.next().unwrap();
            for r in 0..rows {
                let row = &scratch[r * wp..(r + 1) * wp];
                let tap = |b: usize, dw: usize| wdata[(co + b) * ktotal + r * 3 + dw] as f64;
                let (k00, k01, k02) = (tap(0, 0), tap(0, 1), tap(0, 2));
                let (k10, k11, k12) = (tap(1, 0), tap(1, 1), tap(1, 2));
                let (k20, k21, k22) = (tap(2, 0), tap(2, 1), tap(2, 2));
                let (k30, k31, k32) = (tap(3, 0), tap(3, 1), tap(3, 2));
                let r0 = &row[..w_out];
                let r1 = &row[1..1 + w_out];
                let r2 = &row[2..2 + w_out];
                for i in 0..w_out {
                    let (x0, x1, x2) = (r0[i], r1[i], r2[i]);
                    a0[i] += k00 * x0 + k01 * x1 + k02 * x2;
                    a1[i] += k10 * x0 + k11 * x1 + k12 * x2;
                    a2[i] += k20 * x0 + k21 * x1 + k22 * x2;
                    a3[i] += k30 * x0 + k31 * x1 + k32 * x2;
                }
            }
            for b in 0..4 {
                let bv = bias[co + b] as f64;
                let dst = &mut out_slab[(co + b) * w_out..(co + b + 1) * w_out];
                for (d, &a) in dst.iter_mut().zip(&acc[b * w_out..(b + 1) * w_out]) {
                    *d = (a + bv) as f32;
                }
            }
            co += 4;
        }
        for co in co..c_out {
            let acc = &mut acc[..w_out];
            acc.iter_mut().for_each(|a| *a = 0.0);
            let kslice = &wdata[co * ktotal..(co + 1) * ktotal];
            for (r, kw_chunk) in kslice.chunks_exact(kw).enumerate() {
                let row = &scratch[r * wp..(r + 1) * wp];
                if kw == 3 {
                    let (k0, k1, k2) = (
                        kw_chunk[0] as f64,
                        kw_chunk[1] as f64,
                        kw_chunk[2] as f64,
                    );
                    let r0 = &row[..w_out];
                    let r1 = &row[1..1 + w_out];
                    let r2 = &row[2..2 + w_out];
                    for i in 0..w_out {
                        acc[i] += k0 * r0[i] + k1 * r1[i] + k2 * r2[i];
                    }
                } else {
                    for (dw, &kv) in kw_chunk.iter().enumerate() {
                        let kv = kv as f64;
                        let shifted = &row[dw..dw + w_out];
                        for (a, &v) in acc.iter_mut().zip(shifted) {
                            *a += kv * v;
                        }
                    }
                }
            }
            let b = bias[co] as f64;
            let dst = &mut out_slab[co * w_out..(co + 1) * w_out];
            for (d, &a) in dst.iter_mut().zip(acc.iter()) {
                *d = (a + b) as f32;
            }
        }
    });

    // permute (N, t, h, co, w) -> (N, co, t, h, w)
    let mut out = Tensor::zeros(&[n, c_out, t_out, h_out, w_out])?;
    let out_data = out.data_mut();
    for ni in 0..n {
        for t in 0..t_out {
            for h in 0..h_out {
                let src = (((ni * t_out + t) * h_out + h) * c_out) * w_out;
                for co in 0..c_out {
                    let dst = (((ni * c_out + co) * t_out + t) * h_out + h) * w_out;
                    out_data[dst..dst + w_out]
                        .copy_from_slice(&tmp[src + co * w_out..src + (co + 1) * w_out]);
                }
            }
        }
    }
    Ok(out)
}

/// Max pooling over (T, H, W) with the given window and stride; output
/// extent = floor((extent - window) / stride) + 1 per pooled dim.
pub fn maxpool3d(
    x: &Tensor,
    window: (usize, usize, usize),
    stride: (usize, usize, usize),
) -> Result<Tensor> {
    if x.rank() != 5 {
        return Err(Error::InvalidParameter(format!(
            "maxpool input must have rank 5, got {:?}",
            x.dims()
        )));
    }
    let [n, c, t_in, h_in, w_in] = *x.dims() else {
        unreachable!()
    };
    let (wt, wh, ww) = window;
    let (st, sh, sw) = stride;
    if wt == 0 || wh == 0 || ww == 0 || st == 0 || sh == 0 || sw == 0 {
        return Err(Error::InvalidParameter(
            "pool window and stride must be >= 1".into(),
        ));
    }
    if wt > t_in || wh > h_in || ww > w_in {
        return Err(Error::InvalidParameter(format!(
            "pool window ({wt}, {wh}, {ww}) larger than extents ({t_in}, {h_in}, {w_in})"
        )));
    }
    let t_out = (t_in - wt) / st + 1;
    let h_out = (h_in - wh) / sh + 1;
    let w_out = (w_in - ww) / sw + 1;
    let mut out = Tensor::zeros(&[n, c, t_out, h_out, w_out])?;
    let xd = x.data();
    let od = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let plane = (ni * c + ci) * t_in * h_in * w_in;
            for to in 0..t_out {
                for ho in 0..h_out {
                    for wo in 0..w_out {
                        let mut m = f32::NEG_INFINITY;
                        for dt in 0..wt {
                            for dh in 0..wh {
                                let row = plane
                                    + ((to * st + dt) * h_in + ho * sh + dh) * w_in
                                    + wo * sw;
                                for dw in 0..ww {
                                    m = m.max(xd[row + dw]);
                                }
                            }
                        }
                        od[(((ni * c + ci) * t_out + to) * h_out + ho) * w_out + wo] = m;
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn leaky_relu(x: &Tensor, slope: f32) -> Result<Tensor> {
    if !(0.0..1.0).contains(&slope) {
        return Err(Error::InvalidParameter(format!(
            "leaky ReLU slope must be in [0, 1), got {slope}"
        )));
    }
    Tensor::new(
        x.dims(),
        x.data()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect(),
    )
}

/// out = m.weights · v + m.bias for a rank-1 input of length d_in.
pub fn linear_apply(v: &Tensor, m: &LinearMap) -> Result<Tensor> {
    if v.rank() != 1 || v.dims()[0] != m.d_in() {
        return Err(Error::shape_mismatch(
            v.dims(),
            &[m.d_in()],
            "linear input",
        ));
    }
    let vd = v.data();
    let wd = m.weights.data();
    let mut out = Vec::with_capacity(m.d_out());
    for (row, &b) in wd.chunks_exact(m.d_in()).zip(m.bias.data()) {
        let mut acc = 0.0f64;
        for (&w, &x) in row.iter().zip(vd) {
            acc += w as f64 * x as f64;
        }
        out.push((acc + b as f64) as f32);
    }
    Tensor::new(&[m.d_out()], out)
}
