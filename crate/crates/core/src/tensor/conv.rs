//! im2col convolution kernels shared by the 1D and 2D layers.
//!
//! A 1D convolution is run as a 2D convolution with unit height.

use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Op};
use crate::error::{Error, Result};

/// Padding rule for one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Output extent `ceil(len / stride)`; the total padding is split with the
    /// smaller half before the data. With stride 1 this preserves length.
    Same,
    /// The same number of zeros on both sides of every spatial axis.
    Explicit(usize),
}

impl Padding {
    /// `(before, after)` padding along one axis.
    pub fn amounts(self, len: usize, kernel: usize, stride: usize) -> (usize, usize) {
        match self {
            Padding::Explicit(p) => (p, p),
            Padding::Same => {
                let out = len.div_ceil(stride);
                let total = ((out - 1) * stride + kernel).saturating_sub(len);
                (total / 2, total - total / 2)
            }
        }
    }
}

/// Output extent along one axis.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: (usize, usize)) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Dimension("stride must be at least 1".into()));
    }
    let padded = len + pad.0 + pad.1;
    if kernel == 0 || kernel > padded {
        return Err(Error::Dimension(format!(
            "kernel {kernel} exceeds padded length {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cin: usize,
        (h, w): (usize, usize),
        cout: usize,
        (kh, kw): (usize, usize),
        (sh, sw): (usize, usize),
        pad_h: (usize, usize),
        pad_w: (usize, usize),
    ) -> Result<Self> {
        let oh = conv_out_len(h, kh, sh, pad_h)?;
        let ow = conv_out_len(w, kw, sw, pad_w)?;
        Ok(Self {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            sh,
            sw,
            pad_top: pad_h.0,
            pad_left: pad_w.0,
            oh,
            ow,
        })
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn in_plane(&self) -> usize {
        self.h * self.w
    }

    /// 1×1, stride 1, unpadded: the input already is its column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.sh == 1
            && self.sw == 1
            && self.pad_top == 0
            && self.pad_left == 0
            && self.oh == self.h
            && self.ow == self.w
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let plane = self.out_plane();
        let mut row = 0;
        for c in 0..self.cin {
            let xc = &x[c * self.in_plane()..(c + 1) * self.in_plane()];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oi in 0..self.oh {
                        let ii = (oi * self.sh + ki) as isize - self.pad_top as isize;
                        let out_row = &mut dst[oi * self.ow..(oi + 1) * self.ow];
                        if ii < 0 || ii >= self.h as isize {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src = &xc[ii as usize * self.w..(ii as usize + 1) * self.w];
                        for (oj, o) in out_row.iter_mut().enumerate() {
                            let jj = (oj * self.sw + kj) as isize - self.pad_left as isize;
                            *o = if jj < 0 || jj >= self.w as isize {
                                0.0
                            } else {
                                src[jj as usize]
                            };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let plane = self.out_plane();
        let mut row = 0;
        for c in 0..self.cin {
            let in_plane = self.in_plane();
            let xc = &mut dx[c * in_plane..(c + 1) * in_plane];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oi in 0..self.oh {
                        let ii = (oi * self.sh + ki) as isize - self.pad_top as isize;
                        if ii < 0 || ii >= self.h as isize {
                            continue;
                        }
                        let dst = &mut xc[ii as usize * self.w..(ii as usize + 1) * self.w];
                        for oj in 0..self.ow {
                            let jj = (oj * self.sw + kj) as isize - self.pad_left as isize;
                            if jj >= 0 && jj < self.w as isize {
                                dst[jj as usize] += src[oi * self.ow + oj];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    pub fn forward(&self, batch: usize, x: &[f64], weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
        let (patch, plane) = (self.patch(), self.out_plane());
        let in_len = self.cin * self.in_plane();
        let out_len = self.cout * plane;
        let mut y = vec![0.0; batch * out_len];
        let mut cols = if self.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; patch * plane]
        };
        for b in 0..batch {
            let xb = &x[b * in_len..(b + 1) * in_len];
            let yb = &mut y[b * out_len..(b + 1) * out_len];
            if let Some(bias) = bias {
                for (co, chunk) in yb.chunks_mut(plane).enumerate() {
                    chunk.fill(bias[co]);
                }
            }
            let src = if self.is_pointwise() {
                xb
            } else {
                self.im2col(xb, &mut cols);
                &cols
            };
            gemm(self.cout, patch, plane, weight, Op::N, src, Op::N, 1.0, yb);
        }
        y
    }

    /// Accumulates weight and bias gradients; returns the input gradient when
    /// requested.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        batch: usize,
        x: &[f64],
        weight: &[f64],
        dy: &[f64],
        dweight: Option<&mut [f64]>,
        dbias: Option<&mut [f64]>,
        need_dx: bool,
    ) -> Option<Vec<f64>> {
        let (patch, plane) = (self.patch(), self.out_plane());
        let in_len = self.cin * self.in_plane();
        let out_len = self.cout * plane;
        let pointwise = self.is_pointwise();
        let mut cols = if pointwise { Vec::new() } else { vec![0.0; patch * plane] };
        let mut dcols = vec![0.0; patch * plane];
        let mut dx = need_dx.then(|| vec![0.0; batch * in_len]);
        let mut dweight = dweight;

        if let Some(db) = dbias {
            for b in 0..batch {
                let dyb = &dy[b * out_len..(b + 1) * out_len];
                for (co, chunk) in dyb.chunks(plane).enumerate() {
                    db[co] += chunk.iter().sum::<f64>();
                }
            }
        }
        for b in 0..batch {
            let xb = &x[b * in_len..(b + 1) * in_len];
            let dyb = &dy[b * out_len..(b + 1) * out_len];
            if let Some(dw) = dweight.as_deref_mut() {
                let src = if pointwise {
                    xb
                } else {
                    self.im2col(xb, &mut cols);
                    &cols
                };
                gemm(self.cout, plane, patch, dyb, Op::N, src, Op::T, 1.0, dw);
            }
            if let Some(dx) = dx.as_mut() {
                let dxb = &mut dx[b * in_len..(b + 1) * in_len];
                if pointwise {
                    gemm(patch, self.cout, plane, weight, Op::T, dyb, Op::N, 1.0, dxb);
                } else {
                    gemm(patch, self.cout, plane, weight, Op::T, dyb, Op::N, 0.0, &mut dcols);
                    self.col2im(&dcols, dxb);
                }
            }
        }
        dx
    }
}
