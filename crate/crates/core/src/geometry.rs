//! Pinhole cameras, rigid poses, the depth parameterization and the
//! differentiable inverse-warping grid.
//!
//! Conventions: camera axes are x right, y down, z forward. Pixel centers sit
//! at integer coordinates. A [`Pose`] maps points `x ↦ R·x + t`; the pose
//! "a→b" takes coordinates in frame `a` to coordinates in frame `b`.

use depthcast_tensor::Tensor;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points closer than this to the camera plane are treated as invalid
/// reprojections.
pub const Z_EPS: f32 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    /// Checks focal lengths and that the principal point lies inside a
    /// `width × height` image.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < width as f64
            && self.cy > 0.0
            && self.cy < height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "intrinsics {self:?} invalid for a {width}x{height} image"
            )))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Intrinsics after resizing the image by `(sx, sy)` with half-pixel
    /// aligned centers.
    pub fn scaled(&self, sx: f64, sy: f64) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
        }
    }

    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Camera-frame point at pixel `(u, v)` with z-depth `depth`.
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        )
    }
}

/// Rodrigues rotation about `v/‖v‖` by angle `‖v‖`.
pub fn axis_angle_to_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = v.norm_squared();
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(v);
    Matrix3::identity() + k * a + k * k * b
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseJson {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let r = &self.rotation;
        PoseJson {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = PoseJson::deserialize(d)?;
        Ok(Pose {
            rotation: Matrix3::from_row_slice(&j.rotation),
            translation: Vector3::from_column_slice(&j.translation),
        })
    }
}

impl Pose {
    pub fn identity() -> Pose {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Pose {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Pose {
        Pose::new(Matrix3::identity(), t)
    }

    pub fn from_axis_angle(v: &Vector3<f64>, t: Vector3<f64>) -> Pose {
        Pose::new(axis_angle_to_matrix(v), t)
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    /// Orthonormality and determinant within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let rtr = self.rotation.transpose() * self.rotation;
        (rtr - Matrix3::identity()).abs().max() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    /// Relative pose taking frame-`a` coordinates to frame-`b` coordinates,
    /// given both camera-to-world poses.
    pub fn relative(cam_to_world_a: &Pose, cam_to_world_b: &Pose) -> Pose {
        cam_to_world_b.inverse().compose(cam_to_world_a)
    }

    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        (self.rotation - other.rotation)
            .abs()
            .max()
            .max((self.translation - other.translation).abs().max())
    }
}

/// Dense H×W depth map in scene units.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<DepthMap> {
        if values.len() != width * height {
            return Err(Error::Invalid(format!(
                "depth map {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(DepthMap {
            width,
            height,
            values,
        })
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.values.clone(), &[1, 1, self.height, self.width])
            .expect("depth map shape")
    }
}

/// Linear disparity bounds `D = 1 / (a·σ + b)` with σ=0 ↦ `max`, σ=1 ↦ `min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min: f32,
    pub max: f32,
}

impl DepthRange {
    pub const TRAIN: DepthRange = DepthRange {
        min: 0.1,
        max: 100.0,
    };
    pub const EVAL: DepthRange = DepthRange {
        min: 0.5,
        max: 100.0,
    };

    pub fn validate(&self) -> Result<()> {
        if self.min > 0.0 && self.min < self.max {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "depth range requires 0 < min < max, got {self:?}"
            )))
        }
    }

    pub fn b(&self) -> f32 {
        1.0 / self.max
    }

    pub fn a(&self) -> f32 {
        1.0 / self.min - 1.0 / self.max
    }

    /// Sigmoid activation that decodes to `depth`.
    pub fn activation_for(&self, depth: f32) -> f32 {
        (1.0 / depth - self.b()) / self.a()
    }
}

/// Maps sigmoid activations to depth. Differentiable.
pub fn depth_from_activation(sigma: &Tensor, range: DepthRange) -> Result<Tensor> {
    range.validate()?;
    if let Some(v) = sigma.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Invalid(format!("activation {v} outside [0, 1]")));
    }
    Ok(sigma
        .mul_scalar(range.a())?
        .add_scalar(range.b())?
        .pow(-1.0)?)
}

/// Batched Rodrigues map `[B,3] → [B,3,3]`, differentiable.
pub fn rodrigues(v: &Tensor) -> Result<Tensor> {
    if v.rank() != 2 || v.dim(1) != 3 {
        return Err(Error::Invalid(format!(
            "axis-angle tensor must be [B,3], got {:?}",
            v.shape()
        )));
    }
    let b = v.dim(0);
    let vd = v.data();
    let vecs: Vec<Vector3<f64>> = (0..b)
        .map(|i| Vector3::new(vd[i * 3] as f64, vd[i * 3 + 1] as f64, vd[i * 3 + 2] as f64))
        .collect();
    let mats: Vec<Matrix3<f64>> = vecs.iter().map(axis_angle_to_matrix).collect();
    let mut out = Vec::with_capacity(b * 9);
    for r in &mats {
        for i in 0..3 {
            for j in 0..3 {
                out.push(r[(i, j)] as f32);
            }
        }
    }
    Ok(Tensor::from_op(
        "rodrigues",
        vec![b, 3, 3],
        out,
        &[v],
        move |g, _| {
            let mut gv = vec![0.0f32; b * 3];
            for n in 0..b {
                let (v, r) = (&vecs[n], &mats[n]);
                let gr = Matrix3::from_fn(|i, j| g[n * 9 + i * 3 + j] as f64);
                let theta2 = v.norm_squared();
                for k in 0..3 {
                    let e = Vector3::ith(k, 1.0);
                    let dr = if theta2 < 1e-12 {
                        skew(&e)
                    } else {
                        // ∂R/∂v_k = (v_k [v]× + [v × (I − R) e_k]×) R / θ²
                        let w = v.cross(&((Matrix3::identity() - r) * e));
                        (skew(v) * v[k] + skew(&w)) * r / theta2
                    };
                    gv[n * 3 + k] = gr.component_mul(&dr).sum() as f32;
                }
            }
            vec![Some(gv)]
        },
    )?)
}

/// Constant rotation `[B,3,3]` and translation `[B,3]` tensors.
pub fn pose_tensors(poses: &[Pose]) -> Result<(Tensor, Tensor)> {
    let mut r = Vec::with_capacity(poses.len() * 9);
    let mut t = Vec::with_capacity(poses.len() * 3);
    for p in poses {
        for i in 0..3 {
            for j in 0..3 {
                r.push(p.rotation[(i, j)] as f32);
            }
            t.push(p.translation[i] as f32);
        }
    }
    Ok((
        Tensor::from_vec(r, &[poses.len(), 3, 3])?,
        Tensor::from_vec(t, &[poses.len(), 3])?,
    ))
}

/// Differentiable inverse of batched poses: `(Rᵀ, −Rᵀ t)`.
pub fn invert_pose_tensors(rot: &Tensor, trans: &Tensor) -> Result<(Tensor, Tensor)> {
    let rt = rot.transpose(1, 2)?;
    let t = rt
        .matmul(&trans.unsqueeze(2)?)?
        .neg()?
        .reshape(&[trans.dim(0), 3])?;
    Ok((rt, t))
}

/// Sampling grid plus the per-pixel validity of each reprojection.
#[derive(Debug, Clone)]
pub struct WarpGrid {
    /// `[B,H,W,2]` normalized source coordinates.
    pub grid: Tensor,
    /// `[B,1,H,W]` 1 where the point lies in front of the source camera and
    /// projects inside the source image, else 0.
    pub valid: Tensor,
}

/// Inverse-warping grid for target pixels: back-project with `depth`
/// (`[B,1,H,W]`), move by `(rot, trans)` = T_tgt→src, project with `k`.
/// Differentiable with respect to depth, rotation and translation.
pub fn build_warp_grid(
    depth: &Tensor,
    k: &CameraIntrinsics,
    rot: &Tensor,
    trans: &Tensor,
) -> Result<WarpGrid> {
    if depth.rank() != 4 || depth.dim(1) != 1 {
        return Err(Error::Invalid(format!(
            "depth must be [B,1,H,W], got {:?}",
            depth.shape()
        )));
    }
    let (b, h, w) = (depth.dim(0), depth.dim(2), depth.dim(3));
    if rot.shape() != [b, 3, 3] || trans.shape() != [b, 3] {
        return Err(Error::Invalid(format!(
            "pose tensors must be [B,3,3] and [B,3] with B={b}, got {:?} and {:?}",
            rot.shape(),
            trans.shape()
        )));
    }
    if let Some(d) = depth.data().iter().find(|&&d| !(d > 0.0)) {
        return Err(Error::Invalid(format!("non-positive depth {d}")));
    }
    let npix = h * w;
    let (fx, fy, cx, cy) = (k.fx as f32, k.fy as f32, k.cx as f32, k.cy as f32);
    // grid_x = ax·X/Z + bx with the pixel-center normalization folded in.
    let (ax, bx) = (2.0 * fx / w as f32, (2.0 * cx + 1.0) / w as f32 - 1.0);
    let (ay, by) = (2.0 * fy / h as f32, (2.0 * cy + 1.0) / h as f32 - 1.0);
    let rays: Vec<[f32; 3]> = (0..npix)
        .map(|p| {
            let (u, v) = ((p % w) as f32, (p / w) as f32);
            [(u - cx) / fx, (v - cy) / fy, 1.0]
        })
        .collect();

    let dd = depth.data();
    let (rd, td) = (rot.data(), trans.data());
    let mut grid = vec![0.0f32; b * npix * 2];
    let mut valid = vec![0.0f32; b * npix];
    for n in 0..b {
        let r = &rd[n * 9..n * 9 + 9];
        let t = &td[n * 3..n * 3 + 3];
        for p in 0..npix {
            let d = dd[n * npix + p];
            let ray = &rays[p];
            let q: [f32; 3] = std::array::from_fn(|i| {
                d * (r[i * 3] * ray[0] + r[i * 3 + 1] * ray[1] + r[i * 3 + 2] * ray[2]) + t[i]
            });
            let z = q[2].max(Z_EPS);
            let gx = ax * q[0] / z + bx;
            let gy = ay * q[1] / z + by;
            grid[(n * npix + p) * 2] = gx;
            grid[(n * npix + p) * 2 + 1] = gy;
            let u = fx * q[0] / z + cx;
            let v = fy * q[1] / z + cy;
            let inside = u >= 0.0 && u <= (w - 1) as f32 && v >= 0.0 && v <= (h - 1) as f32;
            valid[n * npix + p] = if q[2] > Z_EPS && inside { 1.0 } else { 0.0 };
        }
    }
    let (d_c, r_c, t_c) = (depth.clone(), rot.clone(), trans.clone());
    let grid = Tensor::from_op(
        "warp_grid",
        vec![b, h, w, 2],
        grid,
        &[depth, rot, trans],
        move |g, needs| {
            let dd = d_c.data();
            let (rd, td) = (r_c.data(), t_c.data());
            let mut gd = vec![0.0f32; b * npix];
            let mut gr = vec![0.0f32; b * 9];
            let mut gt = vec![0.0f32; b * 3];
            for n in 0..b {
                let r = &rd[n * 9..n * 9 + 9];
                let t = &td[n * 3..n * 3 + 3];
                for p in 0..npix {
                    let (ggx, ggy) = (g[(n * npix + p) * 2], g[(n * npix + p) * 2 + 1]);
                    if ggx == 0.0 && ggy == 0.0 {
                        continue;
                    }
                    let d = dd[n * npix + p];
                    let ray = &rays[p];
                    let rr: [f32; 3] = std::array::from_fn(|i| {
                        r[i * 3] * ray[0] + r[i * 3 + 1] * ray[1] + r[i * 3 + 2] * ray[2]
                    });
                    let q: [f32; 3] = std::array::from_fn(|i| d * rr[i] + t[i]);
                    let clamped = q[2] <= Z_EPS;
                    let z = q[2].max(Z_EPS);
                    let gq = [
                        ggx * ax / z,
                        ggy * ay / z,
                        if clamped {
                            0.0
                        } else {
                            -(ggx * ax * q[0] + ggy * ay * q[1]) / (z * z)
                        },
                    ];
                    gd[n * npix + p] = gq[0] * rr[0] + gq[1] * rr[1] + gq[2] * rr[2];
                    for i in 0..3 {
                        for j in 0..3 {
                            gr[n * 9 + i * 3 + j] += gq[i] * d * ray[j];
                        }
                        gt[n * 3 + i] += gq[i];
                    }
                }
            }
            vec![
                needs[0].then_some(gd),
                needs[1].then_some(gr),
                needs[2].then_some(gt),
            ]
        },
    )?;
    Ok(WarpGrid {
        grid,
        valid: Tensor::from_vec(valid, &[b, 1, h, w])?,
    })
}

/// Resamples `src` (`[B,C,H,W]`) at the warp grid.
pub fn warp_image(src: &Tensor, grid: &Tensor) -> Result<Tensor> {
    Ok(src.grid_sample(grid)?)
}
