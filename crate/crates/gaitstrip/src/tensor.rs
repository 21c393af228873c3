//! Dense row-major f32 tensor with the handful of shape/elementwise/reduction
//! operations the network needs. Activations use the (N, C, T, H, W) layout
//! with W fastest. Reductions accumulate in f64.

use crate::error::{Error, Result};

/// Minimum value fed to fractional powers inside [`Tensor::power_mean`].
pub const GEM_EPSILON: f32 = 1e-6;

/// Ordered list of positive extents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidParameter("shape must have rank >= 1".into()));
        }
        let mut count: usize = 1;
        for &d in dims {
            if d == 0 {
                return Err(Error::InvalidParameter(format!(
                    "shape {dims:?} has a zero extent"
                )));
            }
            count = count.checked_mul(d).ok_or_else(|| {
                Error::InvalidParameter(format!("shape {dims:?} element count overflows"))
            })?;
        }
        let _ = count;
        Ok(Shape {
            dims: dims.to_vec(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn elem_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Row-major strides, last dimension fastest.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.dims.len()];
        for i in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.dims[i + 1];
        }
        strides
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.elem_count() != data.len() {
            return Err(Error::InvalidParameter(format!(
                "shape {dims:?} needs {} elements, got {}",
                shape.elem_count(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![0.0; shape.elem_count()];
        Ok(Tensor { shape, data })
    }

    pub fn full(dims: &[usize], value: f32) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.elem_count()];
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> f32) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = (0..shape.elem_count()).map(|i| f(i)).collect();
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn elem_count(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same data, different shape of equal element count.
    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let shape = Shape::new(dims)?;
        if shape.elem_count() != self.data.len() {
            return Err(Error::shape_mismatch(self.dims(), dims, "reshape"));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn elementwise_add(&self, other: &Tensor) -> Result<Tensor> {
        if self.dims() != other.dims() {
            return Err(Error::shape_mismatch(
                self.dims(),
                other.dims(),
                "elementwise_add",
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Zero-pads every dimension by (before, after); new cells are exactly 0.0.
    pub fn pad_zero(&self, pad_per_dim: &[(usize, usize)]) -> Result<Tensor> {
        if pad_per_dim.len() != self.rank() {
            return Err(Error::InvalidParameter(format!(
                "pad list has {} entries for rank {}",
                pad_per_dim.len(),
                self.rank()
            )));
        }
        let out_dims: Vec<usize> = self
            .dims()
            .iter()
            .zip(pad_per_dim)
            .map(|(&d, &(b, a))| d + b + a)
            .collect();
        let mut out = Tensor::zeros(&out_dims)?;
        let in_dims = self.dims().to_vec();
        let out_strides = out.shape.strides();
        let rank = in_dims.len();
        let row_len = in_dims[rank - 1];

        // Copy innermost rows; odometer over the outer dimensions.
        let outer: usize = in_dims[..rank - 1].iter().product();
        let mut idx = vec![0usize; rank - 1];
        for row in 0..outer {
            let mut out_off = pad_per_dim[rank - 1].0;
            for d in 0..rank - 1 {
                out_off += (idx[d] + pad_per_dim[d].0) * out_strides[d];
            }
            let src = &self.data[row * row_len..(row + 1) * row_len];
            out.data[out_off..out_off + row_len].copy_from_slice(src);
            for d in (0..rank - 1).rev() {
                idx[d] += 1;
                if idx[d] < in_dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(out)
    }

    /// Contiguous sub-block: per-dimension (start, len).
    pub fn slice(&self, ranges: &[(usize, usize)]) -> Result<Tensor> {
        if ranges.len() != self.rank() {
            return Err(Error::InvalidParameter(format!(
                "slice list has {} entries for rank {}",
                ranges.len(),
                self.rank()
            )));
        }
        for (d, &(start, len)) in ranges.iter().enumerate() {
            if len == 0 || start + len > self.dims()[d] {
                return Err(Error::InvalidParameter(format!(
                    "slice ({start}, {len}) out of bounds for extent {}",
                    self.dims()[d]
                )));
            }
        }
        let out_dims: Vec<usize> = ranges.iter().map(|&(_, len)| len).collect();
        let in_strides = self.shape.strides();
        let rank = self.rank();
        let row_len = out_dims[rank - 1];
        let mut out = Tensor::zeros(&out_dims)?;
        let outer: usize = out_dims[..rank - 1].iter().product();
        let mut idx = vec![0usize; rank - 1];
        for row in 0..outer {
            let mut in_off = ranges[rank - 1].0;
            for d in 0..rank - 1 {
                in_off += (idx[d] + ranges[d].0) * in_strides[d];
            }
            out.data[row * row_len..(row + 1) * row_len]
                .copy_from_slice(&self.data[in_off..in_off + row_len]);
            for d in (0..rank - 1).rev() {
                idx[d] += 1;
                if idx[d] < out_dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(out)
    }

    /// Maximum over one axis. `keep_axis` keeps it as extent 1, otherwise the
    /// axis is squeezed out (a rank-1 input reduces to a single-element tensor).
    pub fn reduce_max(&self, axis: usize, keep_axis: bool) -> Result<Tensor> {
        self.reduce(axis, keep_axis, |acc, run, stride| {
            let mut m = f32::NEG_INFINITY;
            for i in 0..run {
                m = m.max(acc[i * stride]);
            }
            m
        })
    }

    /// Generalized mean over one axis: (mean(clamp(x)^p))^(1/p), values
    /// clamped to at least [`GEM_EPSILON`] before exponentiation. p >= 1.
    pub fn power_mean(&self, axis: usize, p: f32) -> Result<Tensor> {
        if !(p >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "power_mean exponent must be >= 1, got {p}"
            )));
        }
        let pd = p as f64;
        self.reduce(axis, false, move |acc, run, stride| {
            let mut sum = 0.0f64;
            for i in 0..run {
                let v = acc[i * stride].max(GEM_EPSILON) as f64;
                sum += v.powf(pd);
            }
            ((sum / run as f64).powf(1.0 / pd)) as f32
        })
    }

    fn reduce(
        &self,
        axis: usize,
        keep_axis: bool,
        f: impl Fn(&[f32], usize, usize) -> f32,
    ) -> Result<Tensor> {
        let rank = self.rank();
        if axis >= rank {
            return Err(Error::AxisOutOfRange { axis, rank });
        }
        let dims = self.dims();
        let run = dims[axis];
        let strides = self.shape.strides();
        let axis_stride = strides[axis];
        let outer: usize = dims[..axis].iter().product();
        let inner: usize = dims[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * run * inner + i;
                data.push(f(&self.data[base..], run, axis_stride));
            }
        }
        let mut out_dims: Vec<usize> = dims.to_vec();
        if keep_axis {
            out_dims[axis] = 1;
        } else {
            out_dims.remove(axis);
            if out_dims.is_empty() {
                out_dims.push(1);
            }
        }
        Tensor::new(&out_dims, data)
    }

    /// Largest absolute difference; errors on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.dims() != other.dims() {
            return Err(Error::shape_mismatch(
                self.dims(),
                other.dims(),
                "max_abs_diff",
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
