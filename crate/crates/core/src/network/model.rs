//! Depth network (backbone → spatio-temporal aggregation → state chain →
//! shared decoder) and pose network.

use std::cell::Cell;

use depthcast_tensor::{no_grad, Param, Tensor, VarStore};

use crate::error::{Error, Result};
use crate::geometry::{rodrigues, DepthRange};
use crate::losses::PoseBatch;

use super::config::NetworkConfig;
use super::layers::{to_channels_first, to_channels_last, Conv2d, ConvTranspose2d, LayerNorm};
use super::swin::{PatchMerging, WindowStack};

/// Runs a window stack on a single-frame NCHW map.
fn stack_nchw(stack: &WindowStack, x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let t = to_channels_last(x)?.reshape(&[b, 1, h, w, c])?;
    to_channels_first(&stack.forward(&t)?.reshape(&[b, h, w, c])?)
}

#[derive(Debug, Clone)]
pub struct BackboneStage {
    pub merge: Option<PatchMerging>,
    pub blocks: WindowStack,
}

/// Patch embedding followed by four shifted-window stages.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub patch_embed: Conv2d,
    pub embed_norm: LayerNorm,
    pub stages: Vec<BackboneStage>,
}

impl Backbone {
    pub fn new(vs: &VarStore, cfg: &NetworkConfig) -> Backbone {
        let p = cfg.patch_size;
        let stages = (0..4)
            .map(|i| {
                let s = vs.sub(format!("stage{}", i + 1));
                BackboneStage {
                    merge: (i > 0).then(|| {
                        PatchMerging::new(&s.sub("merge"), cfg.channels[i - 1], cfg.channels[i])
                    }),
                    blocks: WindowStack::new(
                        &s,
                        cfg.depths[i],
                        cfg.channels[i],
                        cfg.heads[i],
                        cfg.window,
                        cfg.mlp_ratio,
                        true,
                    ),
                }
            })
            .collect();
        Backbone {
            patch_embed: Conv2d::new(&vs.sub("patch_embed"), 3, cfg.channels[0], p, p, 0),
            embed_norm: LayerNorm::new(&vs.sub("patch_embed.norm"), cfg.channels[0]),
            stages,
        }
    }

    /// `[B,3,H,W]` → four NCHW feature maps at strides 4, 8, 16, 32.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let e = to_channels_last(&self.patch_embed.forward(x)?)?;
        let mut x = self.embed_norm.forward(&e)?;
        let mut out = Vec::with_capacity(4);
        for s in &self.stages {
            if let Some(m) = &s.merge {
                x = m.forward(&x)?;
            }
            let (b, h, w, c) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
            x = s
                .blocks
                .forward(&x.reshape(&[b, 1, h, w, c])?)?
                .reshape(&[b, h, w, c])?;
            out.push(to_channels_first(&x)?);
        }
        Ok(out)
    }
}

/// Fuses one pyramid level across the context frames.
#[derive(Debug, Clone)]
pub struct StBlock {
    pub proj_in: Conv2d,
    pub frame_pos: Param,
    pub spatial_pos: Param,
    pub blocks: WindowStack,
    pub proj_out: Conv2d,
}

impl StBlock {
    pub fn new(
        vs: &VarStore,
        cfg: &NetworkConfig,
        channels: usize,
        size: (usize, usize),
    ) -> StBlock {
        let e = cfg.st_embed;
        StBlock {
            proj_in: Conv2d::new(&vs.sub("proj_in"), channels, e, 1, 1, 0),
            frame_pos: vs.randn("frame_pos", &[cfg.context, e], 0.02),
            spatial_pos: vs.randn("spatial_pos", &[size.0, size.1, e], 0.02),
            blocks: WindowStack::new(
                &vs.sub("attn"),
                cfg.st_depth,
                e,
                cfg.st_heads,
                cfg.window,
                cfg.mlp_ratio,
                false,
            ),
            proj_out: Conv2d::new(&vs.sub("proj_out"), channels + e, channels, 1, 1, 0),
        }
    }

    /// `frames`: per-frame `[B,C,h,w]` maps, oldest first; the last is `F_t`.
    pub fn forward(&self, frames: &[Tensor]) -> Result<Tensor> {
        let t = frames.len();
        let cur = frames
            .last()
            .ok_or_else(|| Error::Invalid("ST-block needs frames".into()))?;
        let (b, h, w) = (cur.dim(0), cur.dim(2), cur.dim(3));
        if frames.iter().any(|f| f.shape() != cur.shape()) || t != self.frame_pos.shape()[0] {
            return Err(Error::Invalid(format!(
                "ST-block expects {} frames of shape {:?}",
                self.frame_pos.shape()[0],
                cur.shape()
            )));
        }
        if self.spatial_pos.shape()[..2] != [h, w] {
            return Err(Error::Invalid(format!(
                "ST-block built for {:?}, got {h}x{w}",
                &self.spatial_pos.shape()[..2]
            )));
        }
        let e = self.frame_pos.shape()[1];
        let stacked = Tensor::cat(frames, 0)?;
        let tokens = self
            .proj_in
            .forward(&stacked)?
            .reshape(&[t, b, e, h, w])?
            .permute(&[1, 0, 3, 4, 2])?
            .add(&self.frame_pos.tensor().reshape(&[t, 1, 1, e])?)?
            .add(&self.spatial_pos.tensor())?;
        let fused = self.blocks.forward(&tokens)?;
        let last = fused.narrow(1, t - 1, 1)?.reshape(&[b, h, w, e])?;
        self.proj_out
            .forward(&Tensor::cat(&[cur.clone(), to_channels_first(&last)?], 1)?)
    }
}

/// One-scale transition `F_{k} → F_{k+1}`.
#[derive(Debug, Clone)]
pub struct ScalePredictor {
    pub proj_in: Conv2d,
    pub blocks: WindowStack,
    pub proj_out: Conv2d,
}

impl ScalePredictor {
    pub fn new(vs: &VarStore, cfg: &NetworkConfig, channels: usize) -> ScalePredictor {
        let e = cfg.state_embed;
        ScalePredictor {
            proj_in: Conv2d::new(&vs.sub("proj_in"), channels, e, 1, 1, 0),
            blocks: WindowStack::new(
                &vs.sub("attn"),
                cfg.state_depth,
                e,
                cfg.state_heads,
                cfg.window,
                cfg.mlp_ratio,
                true,
            ),
            proj_out: Conv2d::new(&vs.sub("proj_out"), channels + e, channels, 1, 1, 0),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = stack_nchw(&self.blocks, &self.proj_in.forward(x)?)?;
        self.proj_out.forward(&Tensor::cat(&[x.clone(), y], 1)?)
    }
}

/// Multi-scale state predictor `f`.
#[derive(Debug, Clone)]
pub struct StatePredictor {
    pub scales: Vec<ScalePredictor>,
}

impl StatePredictor {
    pub fn new(vs: &VarStore, cfg: &NetworkConfig) -> StatePredictor {
        StatePredictor {
            scales: (0..4)
                .map(|i| ScalePredictor::new(&vs.sub(format!("scale{i}")), cfg, cfg.channels[i]))
                .collect(),
        }
    }

    pub fn forward(&self, pyramid: &[Tensor]) -> Result<Vec<Tensor>> {
        self.scales
            .iter()
            .zip(pyramid)
            .map(|(p, x)| p.forward(x))
            .collect()
    }
}

/// U-Net style decoder with sigmoid disparity heads at four scales.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub up: Vec<ConvTranspose2d>,
    pub fuse: Vec<Conv2d>,
    pub heads: Vec<Conv2d>,
}

impl Decoder {
    pub fn new(vs: &VarStore, cfg: &NetworkConfig) -> Decoder {
        let d = cfg.decoder_channels;
        let mut up = Vec::new();
        let mut fuse = Vec::new();
        for i in 0..5 {
            let c_in = if i == 0 { cfg.channels[3] } else { d[i - 1] };
            up.push(ConvTranspose2d::new(
                &vs.sub(format!("up{i}")),
                c_in,
                d[i],
                3,
                2,
                1,
                1,
            ));
            let skip = if i < 3 { cfg.channels[2 - i] } else { 0 };
            fuse.push(Conv2d::new(
                &vs.sub(format!("fuse{i}")),
                d[i] + skip,
                d[i],
                3,
                1,
                1,
            ));
        }
        // Heads at 1/8, 1/4, 1/2, 1/1.
        let heads: Vec<Conv2d> = (1..5)
            .map(|i| Conv2d::new(&vs.sub(format!("disp{}", 4 - i)), d[i], 1, 3, 1, 1))
            .collect();
        // Start at the geometric mean of the depth range, not sigmoid(0) ≈ 0.2 m.
        let r = DepthRange::TRAIN;
        let s = r.activation_for((r.min * r.max).sqrt());
        for h in &heads {
            h.bias
                .set_data(vec![(s / (1.0 - s)).ln()])
                .expect("scalar bias");
        }
        Decoder { up, fuse, heads }
    }

    /// Four NCHW maps (strides 4..32) → disparities, finest first.
    pub fn forward(&self, pyramid: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut x = pyramid[3].clone();
        let mut disps = Vec::with_capacity(4);
        for i in 0..5 {
            x = self.up[i].forward(&x)?.relu()?;
            if i < 3 {
                x = Tensor::cat(&[x, pyramid[2 - i].clone()], 1)?;
            }
            x = self.fuse[i].forward(&x)?.relu()?;
            if i >= 1 {
                disps.push(self.heads[i - 1].forward(&x)?.sigmoid()?);
            }
        }
        disps.reverse();
        Ok(disps)
    }
}

/// Four targets × four scales of sigmoid disparity, `[B,1,h,w]` each.
#[derive(Debug, Clone)]
pub struct DepthSequenceOutput {
    pub targets: Vec<usize>,
    /// `disparities[i][s]`: target `targets[i]`, scale `s` (finest first).
    pub disparities: Vec<Vec<Tensor>>,
}

impl DepthSequenceOutput {
    pub fn for_target(&self, horizon: usize) -> Option<&[Tensor]> {
        self.targets
            .iter()
            .position(|&h| h == horizon)
            .map(|i| self.disparities[i].as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct DepthNet {
    pub config: NetworkConfig,
    pub backbone: Backbone,
    pub st: Vec<StBlock>,
    /// One predictor when shared, otherwise one per step.
    pub predictors: Vec<StatePredictor>,
    pub decoder: Decoder,
}

impl DepthNet {
    pub fn new(vs: &VarStore, cfg: &NetworkConfig) -> Result<DepthNet> {
        cfg.validate()?;
        let sizes = cfg.pyramid_sizes();
        let st = (0..4)
            .map(|i| {
                StBlock::new(
                    &vs.sub(format!("st.scale{i}")),
                    cfg,
                    cfg.channels[i],
                    sizes[i],
                )
            })
            .collect();
        let predictors = if cfg.share_state_predictor {
            vec![StatePredictor::new(&vs.sub("state"), cfg)]
        } else {
            (0..cfg.steps())
                .map(|k| StatePredictor::new(&vs.sub(format!("state.step{k}")), cfg))
                .collect()
        };
        Ok(DepthNet {
            config: cfg.clone(),
            backbone: Backbone::new(&vs.sub("backbone"), cfg),
            st,
            predictors,
            decoder: Decoder::new(&vs.sub("decoder"), cfg),
        })
    }

    fn check_frames(&self, context: &[Tensor]) -> Result<usize> {
        let cfg = &self.config;
        if context.len() != cfg.context {
            return Err(Error::Invalid(format!(
                "expected {} context frames, got {}",
                cfg.context,
                context.len()
            )));
        }
        let b = context[0].dim(0);
        for f in context {
            if f.shape() != [b, 3, cfg.height, cfg.width] {
                return Err(Error::Invalid(format!(
                    "context frame shape {:?}, expected [{b}, 3, {}, {}]",
                    f.shape(),
                    cfg.height,
                    cfg.width
                )));
            }
        }
        Ok(b)
    }

    /// Per-frame pyramids, oldest first. Only the most recent frame keeps
    /// its graph; the older frames are encoded without gradient tracking.
    pub fn encode(&self, context: &[Tensor]) -> Result<Vec<Vec<Tensor>>> {
        let b = self.check_frames(context)?;
        let k = context.len();
        let past = no_grad(|| self.backbone.forward(&Tensor::cat(&context[..k - 1], 0)?))?;
        let cur = self.backbone.forward(&context[k - 1])?;
        let mut frames = vec![Vec::with_capacity(4); k];
        for (p, c) in past.into_iter().zip(cur) {
            for (f, slot) in frames.iter_mut().take(k - 1).enumerate() {
                slot.push(p.narrow(0, f * b, b)?);
            }
            frames[k - 1].push(c);
        }
        Ok(frames)
    }

    /// Fused pyramid `F_t`.
    pub fn aggregate(&self, pyramids: &[Vec<Tensor>]) -> Result<Vec<Tensor>> {
        (0..4)
            .map(|s| {
                let level: Vec<Tensor> = pyramids.iter().map(|p| p[s].clone()).collect();
                self.st[s].forward(&level)
            })
            .collect()
    }

    /// States `F_t, F_{t+1}, …, F_{t+steps}`.
    pub fn roll_out(&self, f_t: Vec<Tensor>) -> Result<Vec<Vec<Tensor>>> {
        let mut states = vec![f_t];
        for k in 0..self.config.steps() {
            let p = &self.predictors[if self.predictors.len() == 1 { 0 } else { k }];
            let next = p.forward(states.last().unwrap())?;
            states.push(next);
        }
        Ok(states)
    }

    pub fn forward(&self, context: &[Tensor]) -> Result<DepthSequenceOutput> {
        let b = self.check_frames(context)?;
        let states = self.roll_out(self.aggregate(&self.encode(context)?)?)?;
        let targets = self.config.targets.clone();
        // Decode every target in one batched pass.
        let batched: Vec<Tensor> = (0..4)
            .map(|s| {
                Tensor::cat(
                    &targets
                        .iter()
                        .map(|&h| states[h][s].clone())
                        .collect::<Vec<_>>(),
                    0,
                )
            })
            .collect::<std::result::Result<_, _>>()?;
        let disps = self.decoder.forward(&batched)?;
        let disparities = (0..targets.len())
            .map(|i| {
                disps
                    .iter()
                    .map(|d| d.narrow(0, i * b, b))
                    .collect::<std::result::Result<Vec<_>, _>>()
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(DepthSequenceOutput {
            targets,
            disparities,
        })
    }
}

/// Relative poses predicted from a frame triplet.
#[derive(Debug, Clone)]
pub struct PoseOutput {
    /// `T_{tgt−1→tgt}`.
    pub prev_to_target: PoseBatch,
    /// `T_{tgt→tgt+1}`.
    pub target_to_next: PoseBatch,
    /// Raw `[N, 12]` head output after scaling.
    pub raw: Tensor,
}

#[derive(Debug)]
pub struct PoseNet {
    pub convs: Vec<Conv2d>,
    pub head: Conv2d,
    pub scale: f32,
    calls: Cell<usize>,
}

impl PoseNet {
    pub fn new(vs: &VarStore, cfg: &NetworkConfig) -> PoseNet {
        let ch = cfg.pose_channels;
        let mut convs = Vec::with_capacity(6);
        let mut c_in = 9;
        for (i, &c) in ch.iter().enumerate() {
            // Five stride-2 layers (k4 s2 p1 keeps extents integral), then a
            // stride-1 layer.
            let (k, s, p) = if i < 5 { (4, 2, 1) } else { (3, 1, 1) };
            convs.push(Conv2d::new(&vs.sub(format!("conv{i}")), c_in, c, k, s, p));
            c_in = c;
        }
        PoseNet {
            convs,
            head: Conv2d::new(&vs.sub("head"), c_in, 12, 1, 1, 0),
            scale: cfg.pose_scale,
            calls: Cell::new(0),
        }
    }

    /// Number of forward passes so far.
    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    /// Sets the head to zero so every prediction is the identity pose.
    pub fn zero_head(&self) -> Result<()> {
        self.head
            .weight
            .set_data(vec![0.0; self.head.weight.numel()])?;
        self.head.bias.set_data(vec![0.0; self.head.bias.numel()])?;
        Ok(())
    }

    /// `prev`, `target`, `next`: `[N,3,H,W]`.
    pub fn forward(&self, prev: &Tensor, target: &Tensor, next: &Tensor) -> Result<PoseOutput> {
        self.calls.set(self.calls.get() + 1);
        let mut x = Tensor::cat(&[prev.clone(), target.clone(), next.clone()], 1)?;
        for c in &self.convs {
            x = c.forward(&x)?.relu()?;
        }
        let n = x.dim(0);
        let raw = self
            .head
            .forward(&x)?
            .reshape(&[n, 12, x.dim(2) * x.dim(3)])?
            .mean_dim(2, false)?
            .mul_scalar(self.scale)?;
        let split = |off: usize| -> Result<PoseBatch> {
            let aa = raw.narrow(1, off, 3)?;
            let t = raw.narrow(1, off + 3, 3)?;
            Ok(PoseBatch {
                rotation: rodrigues(&aa)?,
                translation: t,
            })
        };
        Ok(PoseOutput {
            prev_to_target: split(0)?,
            target_to_next: split(6)?,
            raw,
        })
    }
}

/// Depth and pose networks sharing one parameter store.
pub struct Model {
    pub vs: VarStore,
    pub depth: DepthNet,
    pub pose: PoseNet,
}

impl Model {
    pub fn new(cfg: &NetworkConfig, seed: u64) -> Result<Model> {
        let vs = VarStore::new(seed);
        let depth = DepthNet::new(&vs, cfg)?;
        let pose = PoseNet::new(&vs.sub("pose"), cfg);
        Ok(Model { vs, depth, pose })
    }

    pub fn depth_params(&self) -> Vec<Param> {
        self.vs
            .params()
            .into_iter()
            .filter(|p| !p.name().starts_with("pose."))
            .collect()
    }
}
