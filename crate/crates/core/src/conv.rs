//! im2col-based 2-D convolution kernels (cross-correlation, NCHW layout).
//!
//! A transposed convolution is evaluated as the adjoint of an ordinary
//! convolution, so both share one geometry type.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Tensor};

/// Geometry of a convolution mapping `[channels, in_h, in_w]` to `[*, out_h, out_w]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        channels: usize,
        in_h: usize,
        in_w: usize,
        k_h: usize,
        k_w: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        if in_h + 2 * pad < k_h || in_w + 2 * pad < k_w {
            return Err(Error::shape(format!(
                "kernel {}x{} larger than padded input {}x{} (pad {})",
                k_h, k_w, in_h, in_w, pad
            )));
        }
        Ok(Self {
            channels,
            in_h,
            in_w,
            k_h,
            k_w,
            stride,
            pad,
            out_h: (in_h + 2 * pad - k_h) / stride + 1,
            out_w: (in_w + 2 * pad - k_w) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.channels * self.k_h * self.k_w
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.k_h == 1 && self.k_w == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.col_cols();
    let pad = g.pad as isize;
    for c in 0..g.channels {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.k_h {
            for kj in 0..g.k_w {
                let row = (c * g.k_h + ki) * g.k_w + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oi in 0..g.out_h {
                    let ii = (oi * g.stride + ki) as isize - pad;
                    let line = &mut dst[oi * g.out_w..(oi + 1) * g.out_w];
                    if ii < 0 || ii >= g.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * g.in_w..(ii as usize + 1) * g.in_w];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - pad;
                        *v = if jj < 0 || jj >= g.in_w as isize {
                            T::zero()
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add columns back into an image buffer (adjoint of [`im2col`]).
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let p = g.col_cols();
    let pad = g.pad as isize;
    for c in 0..g.channels {
        let plane = &mut x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.k_h {
            for kj in 0..g.k_w {
                let row = (c * g.k_h + ki) * g.k_w + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..g.out_h {
                    let ii = (oi * g.stride + ki) as isize - pad;
                    if ii < 0 || ii >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * g.in_w..(ii as usize + 1) * g.in_w];
                    for oj in 0..g.out_w {
                        let jj = (oj * g.stride + kj) as isize - pad;
                        if jj >= 0 && jj < g.in_w as isize {
                            dst[jj as usize] = dst[jj as usize] + src[oi * g.out_w + oj];
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(y: &mut [T], bias: &[T], plane: usize) {
    for (c, chunk) in y.chunks_mut(plane).enumerate() {
        let b = bias[c % bias.len()];
        for v in chunk {
            *v = *v + b;
        }
    }
}

fn bias_grad<T: Scalar>(dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = dy.dims4()?;
    let mut out = vec![T::zero(); c];
    for bi in 0..b {
        for (ci, o) in out.iter_mut().enumerate() {
            let base = (bi * c + ci) * h * w;
            *o = *o + dy.data()[base..base + h * w].iter().copied().sum();
        }
    }
    Tensor::new([c], out)
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, c_out: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape(format!(
                "bias {:?} for {} output channels",
                b.shape(),
                c_out
            )));
        }
    }
    Ok(())
}

/// `x: [B, Cin, H, W]`, `w: [Cout, Cin, kh, kw]` → `[B, Cout, Ho, Wo]`.
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (b, c_in, h, wd) = x.dims4()?;
    let (c_out, wc_in, kh, kw) = w.dims4()?;
    if wc_in != c_in {
        return Err(Error::shape(format!(
            "conv weight expects {} input channels, input has {}",
            wc_in, c_in
        )));
    }
    check_bias(bias, c_out)?;
    let g = ConvGeom::new(c_in, h, wd, kh, kw, stride, pad)?;
    let p = g.col_cols();
    let mut y = vec![T::zero(); b * c_out * p];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.col_rows() * p]
    };
    let in_len = c_in * h * wd;
    for bi in 0..b {
        let xb = &x.data()[bi * in_len..(bi + 1) * in_len];
        let src: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, &g, &mut cols);
            &cols
        };
        gemm(
            c_out,
            g.col_rows(),
            p,
            w.data(),
            false,
            src,
            false,
            &mut y[bi * c_out * p..(bi + 1) * c_out * p],
            false,
        );
    }
    if let Some(bias) = bias {
        add_bias(&mut y, bias.data(), p);
    }
    Tensor::new([b, c_out, g.out_h, g.out_w], y)
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    has_bias: bool,
    stride: usize,
    pad: usize,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    let (b, c_in, h, wd) = x.dims4()?;
    let (c_out, _, kh, kw) = w.dims4()?;
    let g = ConvGeom::new(c_in, h, wd, kh, kw, stride, pad)?;
    let p = g.col_cols();
    let rows = g.col_rows();
    let in_len = c_in * h * wd;
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut cols = vec![T::zero(); rows * p];
    let mut dcols = vec![T::zero(); rows * p];
    for bi in 0..b {
        let xb = &x.data()[bi * in_len..(bi + 1) * in_len];
        let dyb = &dy.data()[bi * c_out * p..(bi + 1) * c_out * p];
        if g.is_pointwise() {
            gemm(c_out, p, rows, dyb, false, xb, true, &mut dw, true);
            gemm(
                rows,
                c_out,
                p,
                w.data(),
                true,
                dyb,
                false,
                &mut dx[bi * in_len..(bi + 1) * in_len],
                false,
            );
        } else {
            im2col(xb, &g, &mut cols);
            gemm(c_out, p, rows, dyb, false, &cols, true, &mut dw, true);
            gemm(rows, c_out, p, w.data(), true, dyb, false, &mut dcols, false);
            col2im(&dcols, &g, &mut dx[bi * in_len..(bi + 1) * in_len]);
        }
    }
    let db = if has_bias { Some(bias_grad(dy)?) } else { None };
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(w.shape().to_vec(), dw)?,
        db,
    ))
}

fn transpose_geom(
    c_out: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let out_h = ((h - 1) * stride + kh)
        .checked_sub(2 * pad)
        .ok_or_else(|| Error::shape("transposed conv padding too large"))?;
    let out_w = ((w - 1) * stride + kw)
        .checked_sub(2 * pad)
        .ok_or_else(|| Error::shape("transposed conv padding too large"))?;
    let g = ConvGeom::new(c_out, out_h, out_w, kh, kw, stride, pad)?;
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    Ok(g)
}

/// `x: [B, Cin, H, W]`, `w: [Cin, Cout, kh, kw]` → `[B, Cout, (H-1)s-2p+kh, ...]`.
pub(crate) fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (b, c_in, h, wd) = x.dims4()?;
    let (wc_in, c_out, kh, kw) = w.dims4()?;
    if wc_in != c_in {
        return Err(Error::shape(format!(
            "transposed conv weight expects {} input channels, input has {}",
            wc_in, c_in
        )));
    }
    check_bias(bias, c_out)?;
    let g = transpose_geom(c_out, h, wd, kh, kw, stride, pad)?;
    let p = h * wd;
    let rows = g.col_rows();
    let out_len = c_out * g.in_h * g.in_w;
    let mut y = vec![T::zero(); b * out_len];
    let mut cols = vec![T::zero(); rows * p];
    for bi in 0..b {
        let xb = &x.data()[bi * c_in * p..(bi + 1) * c_in * p];
        gemm(rows, c_in, p, w.data(), true, xb, false, &mut cols, false);
        col2im(&cols, &g, &mut y[bi * out_len..(bi + 1) * out_len]);
    }
    if let Some(bias) = bias {
        add_bias(&mut y, bias.data(), g.in_h * g.in_w);
    }
    Tensor::new([b, c_out, g.in_h, g.in_w], y)
}

pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    has_bias: bool,
    stride: usize,
    pad: usize,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    let (b, c_in, h, wd) = x.dims4()?;
    let (_, c_out, kh, kw) = w.dims4()?;
    let g = transpose_geom(c_out, h, wd, kh, kw, stride, pad)?;
    let p = h * wd;
    let rows = g.col_rows();
    let out_len = c_out * g.in_h * g.in_w;
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut dcols = vec![T::zero(); rows * p];
    for bi in 0..b {
        let xb = &x.data()[bi * c_in * p..(bi + 1) * c_in * p];
        im2col(&dy.data()[bi * out_len..(bi + 1) * out_len], &g, &mut dcols);
        gemm(
            c_in,
            rows,
            p,
            w.data(),
            false,
            &dcols,
            false,
            &mut dx[bi * c_in * p..(bi + 1) * c_in * p],
            false,
        );
        gemm(c_in, p, rows, xb, false, &dcols, true, &mut dw, true);
    }
    let db = if has_bias { Some(bias_grad(dy)?) } else { None };
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(w.shape().to_vec(), dw)?,
        db,
    ))
}
