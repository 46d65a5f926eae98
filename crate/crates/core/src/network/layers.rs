//! Parameterized building blocks. Weights use PyTorch's default
//! `U(±1/√fan_in)` initialization unless noted.

use depthcast_tensor::{Param, Tensor, VarStore};

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn new(vs: &VarStore, d_in: usize, d_out: usize, bias: bool) -> Linear {
        let bound = 1.0 / (d_in as f32).sqrt();
        Linear {
            weight: vs.uniform("weight", &[d_in, d_out], bound),
            bias: bias.then(|| vs.uniform("bias", &[d_out], bound)),
        }
    }

    /// Truncation-free normal init used inside transformer blocks.
    pub fn new_normal(vs: &VarStore, d_in: usize, d_out: usize, std: f32) -> Linear {
        Linear {
            weight: vs.randn("weight", &[d_in, d_out], std),
            bias: Some(vs.zeros("bias", &[d_out])),
        }
    }

    /// Applies to the last axis of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let d_in = *x.shape().last().expect("rank ≥ 1");
        let mut out_shape = x.shape().to_vec();
        let w = self.weight.tensor();
        *out_shape.last_mut().unwrap() = w.dim(1);
        let flat = x.reshape(&[x.numel() / d_in, d_in])?;
        let mut y = flat.matmul(&w)?;
        if let Some(b) = &self.bias {
            y = y.add(&b.tensor())?;
        }
        Ok(y.reshape(&out_shape)?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        vs: &VarStore,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Conv2d {
        let bound = 1.0 / ((c_in * k * k) as f32).sqrt();
        Conv2d {
            weight: vs.uniform("weight", &[c_out, c_in, k, k], bound),
            bias: vs.uniform("bias", &[c_out], bound),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.conv2d(
            &self.weight.tensor(),
            Some(&self.bias.tensor()),
            self.stride,
            self.padding,
        )?)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTranspose2d {
    pub fn new(
        vs: &VarStore,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Self {
        let bound = 1.0 / ((c_out * k * k) as f32).sqrt();
        ConvTranspose2d {
            weight: vs.uniform("weight", &[c_in, c_out, k, k], bound),
            bias: vs.uniform("bias", &[c_out], bound),
            stride,
            padding,
            output_padding,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.conv_transpose2d(
            &self.weight.tensor(),
            Some(&self.bias.tensor()),
            self.stride,
            self.padding,
            self.output_padding,
        )?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
}

impl LayerNorm {
    pub fn new(vs: &VarStore, d: usize) -> LayerNorm {
        LayerNorm {
            gamma: vs.ones("weight", &[d]),
            beta: vs.zeros("bias", &[d]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.layer_norm(&self.gamma.tensor(), &self.beta.tensor(), 1e-5)?)
    }
}

/// `[B,C,H,W] → [B,H,W,C]`.
pub fn to_channels_last(x: &Tensor) -> Result<Tensor> {
    Ok(x.permute(&[0, 2, 3, 1])?)
}

/// `[B,H,W,C] → [B,C,H,W]`.
pub fn to_channels_first(x: &Tensor) -> Result<Tensor> {
    Ok(x.permute(&[0, 3, 1, 2])?)
}
