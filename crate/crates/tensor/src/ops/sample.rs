//! Bilinear grid sampling with border clamping.
//!
//! Normalized coordinates follow the pixel-center convention: pixel `i` of
//! an axis with `n` samples sits at `(2i + 1)/n − 1`, so an identity grid
//! reproduces the input exactly.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    wx: f32,
    wy: f32,
    /// d(pixel)/d(normalized), zeroed where the coordinate was clamped.
    dux: f32,
    duy: f32,
}

#[inline]
fn axis(n_norm: f32, n: usize) -> (usize, usize, f32, f32) {
    let u = ((n_norm + 1.0) * n as f32 - 1.0) * 0.5;
    let max = (n - 1) as f32;
    let (uc, du) = if u < 0.0 {
        (0.0, 0.0)
    } else if u > max {
        (max, 0.0)
    } else {
        (u, n as f32 * 0.5)
    };
    let i0 = (uc.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, uc - i0 as f32, du)
}

#[inline]
fn tap(gx: f32, gy: f32, h: usize, w: usize) -> Tap {
    let (x0, x1, wx, dux) = axis(gx, w);
    let (y0, y1, wy, duy) = axis(gy, h);
    Tap {
        x0,
        x1,
        y0,
        y1,
        wx,
        wy,
        dux,
        duy,
    }
}

/// Normalized coordinate of pixel center `i` on an axis of `n` samples.
pub fn pixel_to_normalized(i: f32, n: usize) -> f32 {
    (2.0 * i + 1.0) / n as f32 - 1.0
}

/// Identity sampling grid `[b, h, w, 2]`.
pub fn identity_grid(b: usize, h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(b * h * w * 2);
    for _ in 0..b {
        for y in 0..h {
            for x in 0..w {
                data.push(pixel_to_normalized(x as f32, w));
                data.push(pixel_to_normalized(y as f32, h));
            }
        }
    }
    Tensor::from_vec(data, &[b, h, w, 2]).expect("identity grid shape")
}

impl Tensor {
    /// Samples `[B,C,H,W]` at `grid [B,H',W',2]` (x then y, normalized).
    pub fn grid_sample(&self, grid: &Tensor) -> Result<Tensor> {
        if grid.rank() != 4 || grid.dim(3) != 2 {
            return Err(TensorError::InvalidArgument {
                op: "grid_sample",
                msg: format!("grid must be [B,H,W,2], got {:?}", grid.shape()),
            });
        }
        if self.rank() != 4 || self.dim(0) != grid.dim(0) {
            return Err(TensorError::ShapeMismatch {
                op: "grid_sample",
                lhs: self.shape().to_vec(),
                rhs: grid.shape().to_vec(),
            });
        }
        let (b, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let (oh, ow) = (grid.dim(1), grid.dim(2));
        let npix = oh * ow;
        let x = self.data();
        let gd = grid.data();
        let mut out = vec![0.0f32; b * c * npix];
        for bi in 0..b {
            for p in 0..npix {
                let gi = (bi * npix + p) * 2;
                let t = tap(gd[gi], gd[gi + 1], h, w);
                for ci in 0..c {
                    let img = &x[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    let top = img[t.y0 * w + t.x0] * (1.0 - t.wx) + img[t.y0 * w + t.x1] * t.wx;
                    let bot = img[t.y1 * w + t.x0] * (1.0 - t.wx) + img[t.y1 * w + t.x1] * t.wx;
                    out[(bi * c + ci) * npix + p] = top * (1.0 - t.wy) + bot * t.wy;
                }
            }
        }
        let (x_c, g_c) = (self.clone(), grid.clone());
        Tensor::from_op(
            "grid_sample",
            vec![b, c, oh, ow],
            out,
            &[self, grid],
            move |g, needs| {
                let x = x_c.data();
                let gd = g_c.data();
                let mut gx = needs[0].then(|| vec![0.0f32; b * c * h * w]);
                let mut gg = needs[1].then(|| vec![0.0f32; b * npix * 2]);
                for bi in 0..b {
                    for p in 0..npix {
                        let gi = (bi * npix + p) * 2;
                        let t = tap(gd[gi], gd[gi + 1], h, w);
                        let (mut du, mut dv) = (0.0f32, 0.0f32);
                        for ci in 0..c {
                            let go = g[(bi * c + ci) * npix + p];
                            if go == 0.0 {
                                continue;
                            }
                            let base = (bi * c + ci) * h * w;
                            if let Some(gx) = gx.as_mut() {
                                gx[base + t.y0 * w + t.x0] += go * (1.0 - t.wx) * (1.0 - t.wy);
                                gx[base + t.y0 * w + t.x1] += go * t.wx * (1.0 - t.wy);
                                gx[base + t.y1 * w + t.x0] += go * (1.0 - t.wx) * t.wy;
                                gx[base + t.y1 * w + t.x1] += go * t.wx * t.wy;
                            }
                            if gg.is_some() {
                                let img = &x[base..base + h * w];
                                let (i00, i01) = (img[t.y0 * w + t.x0], img[t.y0 * w + t.x1]);
                                let (i10, i11) = (img[t.y1 * w + t.x0], img[t.y1 * w + t.x1]);
                                du += go * ((1.0 - t.wy) * (i01 - i00) + t.wy * (i11 - i10));
                                dv += go * ((1.0 - t.wx) * (i10 - i00) + t.wx * (i11 - i01));
                            }
                        }
                        if let Some(gg) = gg.as_mut() {
                            gg[gi] = du * t.dux;
                            gg[gi + 1] = dv * t.duy;
                        }
                    }
                }
                vec![gx, gg]
            },
        )
    }

    /// Bilinear resize of `[B,C,H,W]` to `[B,C,h,w]` (half-pixel centers,
    /// border clamp), expressed as a grid sample.
    pub fn resize_bilinear(&self, h: usize, w: usize) -> Result<Tensor> {
        if self.rank() != 4 {
            return Err(TensorError::InvalidArgument {
                op: "resize_bilinear",
                msg: format!("expected [B,C,H,W], got {:?}", self.shape()),
            });
        }
        if self.dim(2) == h && self.dim(3) == w {
            return self.reshape(self.shape());
        }
        self.grid_sample(&identity_grid(self.dim(0), h, w))
    }
}
