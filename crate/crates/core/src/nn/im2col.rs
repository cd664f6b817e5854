//! Patch unfolding. A convolution over an unfolded input is a plain matrix
//! product, which is what lets convolutional layers share the dense-layer
//! treatment of activation patterns and affine maps.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output extent of a window sweep, or `None` if the window does not fit.
pub fn conv_output_dim(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Geometry of one conv layer over a `[channels, height, width]` sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        conv_output_dim(self.height, self.kernel, self.stride, self.padding).expect("validated geometry")
    }

    pub fn out_width(&self) -> usize {
        conv_output_dim(self.width, self.kernel, self.stride, self.padding).expect("validated geometry")
    }

    /// Rows of the unfolded matrix: one per (channel, ky, kx).
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// Columns of the unfolded matrix: one per output position.
    pub fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Input index feeding row `r`, column `q`, or `None` for padding.
    #[inline]
    fn source(&self, r: usize, q: usize) -> Option<usize> {
        let k = self.kernel;
        let (c, rem) = (r / (k * k), r % (k * k));
        let (ky, kx) = (rem / k, rem % k);
        let ow = self.out_width();
        let (oy, ox) = (q / ow, q % ow);
        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
        let ix = (ox * self.stride + kx) as isize - self.padding as isize;
        if iy < 0 || ix < 0 || iy >= self.height as isize || ix >= self.width as isize {
            None
        } else {
            Some(c * self.height * self.width + iy as usize * self.width + ix as usize)
        }
    }
}

/// Unfolds `src` (one sample) into `out`, a `[patch_len, positions]` row-major
/// matrix. Row index is `(c*k + ky)*k + kx`, column index is `oy*OW + ox`.
pub(crate) fn im2col_into<S: Scalar>(src: &[S], g: &ConvGeometry, out: &mut [S]) {
    let p = g.positions();
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for c in 0..g.channels {
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let row = &mut out[r * p..(r + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        row[oy * ow + ox] = if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                            S::zero()
                        } else {
                            src[c * g.height * g.width + iy as usize * g.width + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds an unfolded matrix back into `dst`.
pub fn col2im_add<S: Scalar>(cols: &[S], g: &ConvGeometry, dst: &mut [S]) {
    let p = g.positions();
    for r in 0..g.patch_len() {
        for q in 0..p {
            if let Some(i) = g.source(r, q) {
                dst[i] += cols[r * p + q];
            }
        }
    }
}

/// Unfolds a `[C, H, W]` tensor into `[C*k*k, OH*OW]`.
pub fn im2col<S: Scalar>(input: &Tensor<S>, kernel: usize, stride: usize, padding: usize) -> Result<Tensor<S>> {
    let [c, h, w] = *input.shape() else {
        return Err(Error::Shape { layer: None, detail: format!("im2col expects [C,H,W], got {:?}", input.shape()) });
    };
    if conv_output_dim(h, kernel, stride, padding).is_none() || conv_output_dim(w, kernel, stride, padding).is_none() {
        return Err(Error::Shape {
            layer: None,
            detail: format!("kernel {kernel} (stride {stride}) larger than padded input {h}x{w} + {padding}"),
        });
    }
    let g = ConvGeometry { channels: c, height: h, width: w, kernel, stride, padding };
    let mut out = vec![S::zero(); g.patch_len() * g.positions()];
    im2col_into(input.data(), &g, &mut out);
    Tensor::new(vec![g.patch_len(), g.positions()], out)
}

/// Materializes a convolution as a dense `[OC*OH*OW, C*H*W]` matrix plus a
/// per-output bias vector. `weight` is `[OC, C, k, k]` row-major.
pub fn conv_as_dense<S: Scalar>(weight: &[S], bias: &[S], g: &ConvGeometry) -> (Vec<S>, Vec<S>) {
    let oc = bias.len();
    let p = g.positions();
    let in_len = g.channels * g.height * g.width;
    let rows = g.patch_len();
    let mut m = vec![S::zero(); oc * p * in_len];
    let mut b = vec![S::zero(); oc * p];
    for o in 0..oc {
        for q in 0..p {
            let out_row = o * p + q;
            b[out_row] = bias[o];
            for r in 0..rows {
                if let Some(i) = g.source(r, q) {
                    m[out_row * in_len + i] += weight[o * rows + r];
                }
            }
        }
    }
    (m, b)
}
