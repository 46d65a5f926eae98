//! Window attention blocks over `[B, T, H, W, C]` token grids.
//!
//! Windows are `T × ws × ws`: every frame of a spatial window attends
//! jointly, which gives plain shifted-window blocks for `T = 1` and the
//! spatio-temporal blocks of the aggregation stage for `T > 1`. Grids whose
//! extents are not window multiples are zero-padded and padded keys are
//! masked out of attention.

use depthcast_tensor::{Param, Tensor, VarStore};

use crate::error::Result;

use super::layers::{LayerNorm, Linear};

const MASKED: f32 = -1e4;

/// Effective window size and shift for an `h × w` map.
fn window_geometry(h: usize, w: usize, ws: usize, shifted: bool) -> (usize, usize) {
    let m = h.min(w);
    if m <= ws {
        (ws.min(m).max(1), 0)
    } else {
        (ws, if shifted { ws / 2 } else { 0 })
    }
}

fn ceil_to(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// Window partition plan for one `(T, H, W)` geometry.
#[derive(Debug, Clone)]
struct Plan {
    t: usize,
    h: usize,
    w: usize,
    hp: usize,
    wp: usize,
    ws: usize,
    shift: usize,
}

impl Plan {
    fn new(t: usize, h: usize, w: usize, ws: usize, shifted: bool) -> Plan {
        let (ws, shift) = window_geometry(h, w, ws, shifted);
        Plan {
            t,
            h,
            w,
            hp: ceil_to(h, ws),
            wp: ceil_to(w, ws),
            ws,
            shift,
        }
    }

    fn n_windows(&self) -> usize {
        (self.hp / self.ws) * (self.wp / self.ws)
    }

    fn tokens(&self) -> usize {
        self.t * self.ws * self.ws
    }

    /// `[B,T,H,W,C] → [B·nW, T·ws·ws, C]`.
    fn partition(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c) = (x.dim(0), x.dim(4));
        let mut x = x.clone();
        if self.hp > self.h {
            x = x.pad(2, 0, self.hp - self.h)?;
        }
        if self.wp > self.w {
            x = x.pad(3, 0, self.wp - self.w)?;
        }
        if self.shift > 0 {
            x = x
                .roll(2, -(self.shift as isize))?
                .roll(3, -(self.shift as isize))?;
        }
        let (nh, nw, ws) = (self.hp / self.ws, self.wp / self.ws, self.ws);
        let x = x
            .reshape(&[b, self.t, nh, ws, nw, ws, c])?
            .permute(&[0, 2, 4, 1, 3, 5, 6])?;
        Ok(x.reshape(&[b * nh * nw, self.tokens(), c])?)
    }

    /// Inverse of [`Plan::partition`].
    fn merge(&self, x: &Tensor, b: usize) -> Result<Tensor> {
        let c = x.dim(2);
        let (nh, nw, ws) = (self.hp / self.ws, self.wp / self.ws, self.ws);
        let mut x = x
            .reshape(&[b, nh, nw, self.t, ws, ws, c])?
            .permute(&[0, 3, 1, 4, 2, 5, 6])?
            .reshape(&[b, self.t, self.hp, self.wp, c])?;
        if self.shift > 0 {
            x = x
                .roll(2, self.shift as isize)?
                .roll(3, self.shift as isize)?;
        }
        if self.hp > self.h {
            x = x.narrow(2, 0, self.h)?;
        }
        if self.wp > self.w {
            x = x.narrow(3, 0, self.w)?;
        }
        Ok(x)
    }

    /// Additive mask `[nW, 1, N, N]`, or `None` when nothing is masked.
    fn mask(&self) -> Option<Tensor> {
        if self.shift == 0 && self.hp == self.h && self.wp == self.w {
            return None;
        }
        let region = |p: usize, n: usize| -> usize {
            if self.shift == 0 || p < n - self.ws {
                0
            } else if p < n - self.shift {
                1
            } else {
                2
            }
        };
        let (nh, nw, ws, n) = (self.hp / self.ws, self.wp / self.ws, self.ws, self.tokens());
        let mut out = vec![0.0f32; self.n_windows() * n * n];
        for wy in 0..nh {
            for wx in 0..nw {
                // (region label, is padding) per token; order matches partition.
                let mut info = Vec::with_capacity(n);
                for _ in 0..self.t {
                    for iy in 0..ws {
                        for ix in 0..ws {
                            let (y, x) = (wy * ws + iy, wx * ws + ix);
                            let pad = (y + self.shift) % self.hp >= self.h
                                || (x + self.shift) % self.wp >= self.w;
                            info.push((region(y, self.hp) * 3 + region(x, self.wp), pad));
                        }
                    }
                }
                let base = (wy * nw + wx) * n * n;
                for i in 0..n {
                    for j in 0..n {
                        if info[i].0 != info[j].0 || info[j].1 {
                            out[base + i * n + j] = MASKED;
                        }
                    }
                }
            }
        }
        Some(Tensor::from_vec(out, &[self.n_windows(), 1, n, n]).expect("mask shape"))
    }
}

#[derive(Debug, Clone)]
pub struct WindowAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
    /// `[(2ws−1)², heads]` table indexed by relative spatial offset.
    pub rel_bias: Option<Param>,
    window: usize,
}

impl WindowAttention {
    pub fn new(
        vs: &VarStore,
        dim: usize,
        heads: usize,
        window: usize,
        rel_bias: bool,
    ) -> WindowAttention {
        assert!(
            dim.is_multiple_of(heads),
            "dim {dim} not divisible by {heads} heads"
        );
        let m = 2 * window - 1;
        WindowAttention {
            qkv: Linear::new_normal(&vs.sub("qkv"), dim, 3 * dim, 0.02),
            proj: Linear::new_normal(&vs.sub("proj"), dim, dim, 0.02),
            heads,
            rel_bias: rel_bias.then(|| vs.randn("rel_bias", &[m * m, heads], 0.02)),
            window,
        }
    }

    fn bias(&self, plan: &Plan) -> Result<Option<Tensor>> {
        let Some(table) = &self.rel_bias else {
            return Ok(None);
        };
        let (ws, m, n) = (plan.ws, 2 * self.window - 1, plan.tokens());
        let pos: Vec<(isize, isize)> = (0..n)
            .map(|i| {
                let s = i % (ws * ws);
                ((s / ws) as isize, (s % ws) as isize)
            })
            .collect();
        let off = self.window as isize - 1;
        let idx: Vec<usize> = (0..n * n)
            .map(|k| {
                let (a, b) = (pos[k / n], pos[k % n]);
                ((a.0 - b.0 + off) as usize) * m + (a.1 - b.1 + off) as usize
            })
            .collect();
        let b = table
            .tensor()
            .index_select(0, &idx)?
            .reshape(&[n, n, self.heads])?
            .permute(&[2, 0, 1])?;
        Ok(Some(b))
    }

    /// `x`: `[B', N, C]` windows of `plan`.
    fn forward(&self, x: &Tensor, plan: &Plan) -> Result<Tensor> {
        let (bw, n, c) = (x.dim(0), x.dim(1), x.dim(2));
        let (h, d) = (self.heads, c / self.heads);
        let qkv = self
            .qkv
            .forward(x)?
            .reshape(&[bw, n, 3, h, d])?
            .permute(&[2, 0, 3, 1, 4])?;
        let q = qkv.narrow(0, 0, 1)?.reshape(&[bw, h, n, d])?;
        let k = qkv.narrow(0, 1, 1)?.reshape(&[bw, h, n, d])?;
        let v = qkv.narrow(0, 2, 1)?.reshape(&[bw, h, n, d])?;
        let mut attn = q
            .mul_scalar(1.0 / (d as f32).sqrt())?
            .matmul(&k.transpose(2, 3)?)?;
        if let Some(b) = self.bias(plan)? {
            attn = attn.add(&b)?;
        }
        if let Some(mask) = plan.mask() {
            let nw = plan.n_windows();
            attn = attn
                .reshape(&[bw / nw, nw, h, n, n])?
                .add(&mask)?
                .reshape(&[bw, h, n, n])?;
        }
        let out = attn
            .softmax(3)?
            .matmul(&v)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[bw, n, c])?;
        self.proj.forward(&out)
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(vs: &VarStore, dim: usize, hidden: usize) -> Mlp {
        Mlp {
            fc1: Linear::new_normal(&vs.sub("fc1"), dim, hidden, 0.02),
            fc2: Linear::new_normal(&vs.sub("fc2"), hidden, dim, 0.02),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu()?)
    }
}

/// Pre-norm transformer block with (optionally shifted) window attention.
#[derive(Debug, Clone)]
pub struct WindowBlock {
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    pub window: usize,
    pub shifted: bool,
}

impl WindowBlock {
    pub fn new(
        vs: &VarStore,
        dim: usize,
        heads: usize,
        window: usize,
        shifted: bool,
        mlp_ratio: usize,
        rel_bias: bool,
    ) -> Self {
        WindowBlock {
            norm1: LayerNorm::new(&vs.sub("norm1"), dim),
            attn: WindowAttention::new(&vs.sub("attn"), dim, heads, window, rel_bias),
            norm2: LayerNorm::new(&vs.sub("norm2"), dim),
            mlp: Mlp::new(&vs.sub("mlp"), dim, dim * mlp_ratio),
            window,
            shifted,
        }
    }

    /// `x`: `[B, T, H, W, C]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let plan = Plan::new(t, h, w, self.window, self.shifted);
        let y = plan.partition(&self.norm1.forward(x)?)?;
        let y = plan.merge(&self.attn.forward(&y, &plan)?, b)?;
        let x = x.add(&y)?;
        Ok(x.add(&self.mlp.forward(&self.norm2.forward(&x)?)?)?)
    }
}

/// A pair of blocks: plain windows, then shifted windows.
#[derive(Debug, Clone)]
pub struct WindowStack {
    pub blocks: Vec<WindowBlock>,
}

impl WindowStack {
    pub fn new(
        vs: &VarStore,
        depth: usize,
        dim: usize,
        heads: usize,
        window: usize,
        mlp_ratio: usize,
        rel_bias: bool,
    ) -> Self {
        WindowStack {
            blocks: (0..depth)
                .map(|i| {
                    WindowBlock::new(
                        &vs.sub(format!("block{i}")),
                        dim,
                        heads,
                        window,
                        i % 2 == 1,
                        mlp_ratio,
                        rel_bias,
                    )
                })
                .collect(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        Ok(x)
    }
}

/// 2×2 neighborhood merge, LayerNorm, then a `4C → 2C` projection.
#[derive(Debug, Clone)]
pub struct PatchMerging {
    pub norm: LayerNorm,
    pub reduction: Linear,
}

impl PatchMerging {
    pub fn new(vs: &VarStore, dim: usize, out: usize) -> PatchMerging {
        PatchMerging {
            norm: LayerNorm::new(&vs.sub("norm"), 4 * dim),
            reduction: Linear::new(&vs.sub("reduction"), 4 * dim, out, false),
        }
    }

    /// `[B, H, W, C] → [B, ⌈H/2⌉, ⌈W/2⌉, out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, h, w, c) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let mut x = x.clone();
        if h % 2 == 1 {
            x = x.pad(1, 0, 1)?;
        }
        if w % 2 == 1 {
            x = x.pad(2, 0, 1)?;
        }
        let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
        let x = x
            .reshape(&[b, h2, 2, w2, 2, c])?
            .permute(&[0, 1, 3, 2, 4, 5])?
            .reshape(&[b, h2, w2, 4 * c])?;
        self.reduction.forward(&self.norm.forward(&x)?)
    }
}
