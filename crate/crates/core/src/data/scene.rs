//! Procedural scenes and a per-pixel ray caster with exact depth.
//!
//! World axes match the camera convention (x right, y down, z forward).
//! Scenes contain a ground plane, an optional textured backdrop wall facing
//! the camera, and axis-aligned boxes that may translate at constant
//! velocity. Every surface carries a value-noise texture attached to its own
//! coordinates, so a surface point keeps its color as things move.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{axis_angle_to_matrix, CameraIntrinsics, DepthMap, DepthRange, Pose};

/// Seconds between consecutive frames.
pub const FRAME_INTERVAL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxObject {
    pub center: [f64; 3],
    pub half_size: [f64; 3],
    pub velocity: [f64; 3],
    pub texture_seed: u64,
}

impl BoxObject {
    fn center_at(&self, time: f64) -> Vector3<f64> {
        Vector3::new(
            self.center[0] + self.velocity[0] * time,
            self.center[1] + self.velocity[1] * time,
            self.center[2] + self.velocity[2] * time,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraTrajectory {
    /// Camera-to-world pose at time 0.
    pub initial: Pose,
    /// World-frame linear velocity (units per second).
    pub velocity: [f64; 3],
    /// Rotation rate about the world y axis (radians per second).
    pub yaw_rate: f64,
}

impl CameraTrajectory {
    pub fn pose_at(&self, time: f64) -> Pose {
        let yaw = axis_angle_to_matrix(&Vector3::new(0.0, self.yaw_rate * time, 0.0));
        let v = Vector3::from_column_slice(&self.velocity);
        Pose::new(
            yaw * self.initial.rotation,
            self.initial.translation + v * time,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    /// World y of the ground plane (positive is below a camera at y = 0).
    pub ground_height: f64,
    /// World z of a backdrop wall, if any.
    pub backdrop_z: Option<f64>,
    pub boxes: Vec<BoxObject>,
    pub camera: CameraTrajectory,
    pub texture_seed: u64,
    pub frame_count: usize,
    pub frame_interval: f64,
    pub depth_range: DepthRange,
    /// Sub-pixel samples per axis for color (depth always uses the pixel
    /// center ray).
    pub supersample: usize,
}

/// Options for random scene generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneOptions {
    pub width: usize,
    pub height: usize,
    pub moving_objects: bool,
    pub frame_count: usize,
}

impl Default for SceneOptions {
    fn default() -> Self {
        SceneOptions {
            width: 96,
            height: 64,
            moving_objects: false,
            frame_count: 10,
        }
    }
}

/// Default pinhole for a `width × height` image: 0.75·W focal length,
/// principal point at the image center.
pub fn default_intrinsics(width: usize, height: usize) -> CameraIntrinsics {
    let f = 0.75 * width as f64;
    CameraIntrinsics {
        fx: f,
        fy: f,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
    }
}

impl SceneSpec {
    /// Random street-like scene, deterministic in `seed`.
    pub fn random(seed: u64, opts: &SceneOptions) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ground_height = rng.gen_range(1.2..1.8);
        let speed = rng.gen_range(2.0..6.0);
        let lateral = rng.gen_range(-0.5..0.5);
        let yaw_rate = rng.gen_range(-0.15..0.15);
        let n_boxes = rng.gen_range(3..7);
        let mut boxes = Vec::with_capacity(n_boxes);
        for _ in 0..n_boxes {
            let half = [
                rng.gen_range(0.4..1.5),
                rng.gen_range(0.4..1.4),
                rng.gen_range(0.4..1.5),
            ];
            // Keep boxes out of the camera's path: either well ahead or off
            // to the side.
            let side: f64 = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
            let x = side * rng.gen_range(1.6..7.0);
            let z = rng.gen_range(9.0..26.0);
            let floating = rng.gen_bool(0.25);
            let y = if floating {
                ground_height - half[1] - rng.gen_range(0.5..1.5)
            } else {
                ground_height - half[1]
            };
            let velocity = if opts.moving_objects && rng.gen_bool(0.6) {
                [rng.gen_range(-2.5..2.5), 0.0, rng.gen_range(-3.0..3.0)]
            } else {
                [0.0, 0.0, 0.0]
            };
            boxes.push(BoxObject {
                center: [x, y, z],
                half_size: half,
                velocity,
                texture_seed: rng.gen(),
            });
        }
        SceneSpec {
            width: opts.width,
            height: opts.height,
            intrinsics: default_intrinsics(opts.width, opts.height),
            ground_height,
            backdrop_z: Some(rng.gen_range(32.0..45.0)),
            boxes,
            camera: CameraTrajectory {
                initial: Pose::identity(),
                velocity: [lateral, 0.0, speed],
                yaw_rate,
            },
            texture_seed: rng.gen(),
            frame_count: opts.frame_count,
            frame_interval: FRAME_INTERVAL,
            depth_range: DepthRange::TRAIN,
            supersample: 3,
        }
    }

    /// Checks the scene invariants over the whole clip duration.
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate(self.width, self.height)?;
        if self.frame_count == 0 || self.supersample == 0 {
            return Err(Error::Invalid(
                "frame count and supersampling must be positive".into(),
            ));
        }
        for k in 0..self.frame_count {
            let time = k as f64 * self.frame_interval;
            let cam = self.camera.pose_at(time);
            if cam.translation.y >= self.ground_height {
                return Err(Error::Invalid(format!(
                    "camera below the ground plane at frame {k}"
                )));
            }
            for (i, b) in self.boxes.iter().enumerate() {
                let c = b.center_at(time);
                let inside =
                    (0..3).all(|a| (cam.translation[a] - c[a]).abs() <= b.half_size[a] + 0.2);
                if inside {
                    return Err(Error::Invalid(format!(
                        "camera inside box {i} at frame {k}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn time_of(&self, frame: usize) -> f64 {
        frame as f64 * self.frame_interval
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Surface {
    Ground,
    Backdrop,
    Box {
        index: usize,
        axis: usize,
        sign: bool,
    },
    Sky,
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    s: f64,
    point: Vector3<f64>,
    surface: Surface,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = splitmix(
        seed ^ splitmix(
            (ix as u64).wrapping_mul(0x1F1F_1F1F) ^ (iy as u64).wrapping_mul(0x7FEB_352D),
        ),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = lattice(ix, iy, seed);
    let v10 = lattice(ix + 1, iy, seed);
    let v01 = lattice(ix, iy + 1, seed);
    let v11 = lattice(ix + 1, iy + 1, seed);
    let top = v00 + (v10 - v00) * sx;
    let bot = v01 + (v11 - v01) * sx;
    top + (bot - top) * sy
}

/// Three octaves of value noise in `[0, 1]`.
pub fn fractal_noise(x: f64, y: f64, seed: u64) -> f64 {
    0.5 * value_noise(x, y, seed)
        + 0.3 * value_noise(2.0 * x + 17.3, 2.0 * y - 4.1, seed ^ 0xA5A5)
        + 0.2 * value_noise(4.0 * x - 9.7, 4.0 * y + 31.9, seed ^ 0x5A5A)
}

const SKY: [f32; 3] = [0.62, 0.74, 0.9];

fn textured(u: f64, v: f64, seed: u64, base: [f64; 3]) -> [f32; 3] {
    std::array::from_fn(|c| {
        let n = fractal_noise(u, v, splitmix(seed.wrapping_add(c as u64)));
        (base[c] * (0.25 + 0.75 * n)).clamp(0.0, 1.0) as f32
    })
}

impl SceneSpec {
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, time: f64) -> Hit {
        let mut best = Hit {
            s: f64::INFINITY,
            point: Vector3::zeros(),
            surface: Surface::Sky,
        };
        let mut consider = |s: f64, surface: Surface| {
            if s > 1e-6 && s < best.s {
                best = Hit {
                    s,
                    point: origin + dir * s,
                    surface,
                };
            }
        };
        if dir.y > 1e-12 {
            consider((self.ground_height - origin.y) / dir.y, Surface::Ground);
        }
        if let Some(zw) = self.backdrop_z {
            if dir.z > 1e-12 {
                consider((zw - origin.z) / dir.z, Surface::Backdrop);
            }
        }
        for (index, b) in self.boxes.iter().enumerate() {
            let c = b.center_at(time);
            let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut entry_axis = 0;
            let mut entry_sign = false;
            let mut miss = false;
            for a in 0..3 {
                let lo = c[a] - b.half_size[a];
                let hi = c[a] + b.half_size[a];
                if dir[a].abs() < 1e-12 {
                    if origin[a] < lo || origin[a] > hi {
                        miss = true;
                        break;
                    }
                    continue;
                }
                let (mut t0, mut t1) = ((lo - origin[a]) / dir[a], (hi - origin[a]) / dir[a]);
                // Entering through the face with the smaller parameter.
                let mut sign = false;
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                    sign = true;
                }
                if t0 > t_near {
                    t_near = t0;
                    entry_axis = a;
                    entry_sign = sign;
                }
                t_far = t_far.min(t1);
            }
            if !miss && t_near <= t_far && t_near > 1e-6 {
                consider(
                    t_near,
                    Surface::Box {
                        index,
                        axis: entry_axis,
                        sign: entry_sign,
                    },
                );
            }
        }
        best
    }

    fn shade(&self, hit: &Hit, time: f64) -> [f32; 3] {
        let p = hit.point;
        match hit.surface {
            Surface::Sky => SKY,
            Surface::Ground => textured(p.x * 1.1, p.z * 1.1, self.texture_seed, [0.55, 0.5, 0.45]),
            Surface::Backdrop => textured(
                p.x * 0.35,
                p.y * 0.35,
                self.texture_seed ^ 0xBAC,
                [0.5, 0.6, 0.55],
            ),
            Surface::Box { index, axis, sign } => {
                let b = &self.boxes[index];
                let local = p - b.center_at(time);
                let (u, v) = match axis {
                    0 => (local.z, local.y),
                    1 => (local.x, local.z),
                    _ => (local.x, local.y),
                };
                let face_seed = b
                    .texture_seed
                    .wrapping_add((axis * 2 + sign as usize) as u64);
                let tint = [
                    0.55 + 0.45 * lattice(index as i64, 0, b.texture_seed),
                    0.55 + 0.45 * lattice(index as i64, 1, b.texture_seed),
                    0.55 + 0.45 * lattice(index as i64, 2, b.texture_seed),
                ];
                textured(u * 2.0, v * 2.0, face_seed, tint)
            }
        }
    }
}

/// Planar RGB image, values in `[0, 1]`, layout `[3, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Image> {
        if data.len() != 3 * width * height {
            return Err(Error::Invalid(format!(
                "RGB image {width}x{height} needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn pixel(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn to_tensor(&self) -> depthcast_tensor::Tensor {
        depthcast_tensor::Tensor::from_vec(self.data.clone(), &[1, 3, self.height, self.width])
            .expect("image shape")
    }
}

/// Renders color and depth as seen by a camera with pose `cam_to_world` at
/// scene time `time`.
pub fn render_frame(
    scene: &SceneSpec,
    time: f64,
    k: &CameraIntrinsics,
    cam_to_world: &Pose,
) -> (Image, DepthMap) {
    let (w, h) = (scene.width, scene.height);
    let ss = scene.supersample;
    let rot: Matrix3<f64> = cam_to_world.rotation;
    let origin = cam_to_world.translation;
    let mut img = vec![0.0f32; 3 * w * h];
    let mut depth = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let ray = |du: f64, dv: f64| {
                let d_cam = Vector3::new(
                    (x as f64 + du - k.cx) / k.fx,
                    (y as f64 + dv - k.cy) / k.fy,
                    1.0,
                );
                rot * d_cam
            };
            let center = scene.intersect(&origin, &ray(0.0, 0.0), time);
            // The camera-frame ray has unit z, so the ray parameter is z-depth.
            let d = if center.surface == Surface::Sky {
                scene.depth_range.max as f64
            } else {
                center.s
            };
            depth[y * w + x] =
                d.clamp(scene.depth_range.min as f64, scene.depth_range.max as f64) as f32;

            let mut acc = [0.0f64; 3];
            for sy in 0..ss {
                for sx in 0..ss {
                    let du = (sx as f64 + 0.5) / ss as f64 - 0.5;
                    let dv = (sy as f64 + 0.5) / ss as f64 - 0.5;
                    let hit = scene.intersect(&origin, &ray(du, dv), time);
                    let c = scene.shade(&hit, time);
                    for i in 0..3 {
                        acc[i] += c[i] as f64;
                    }
                }
            }
            let n = (ss * ss) as f64;
            for c in 0..3 {
                img[(c * h + y) * w + x] = (acc[c] / n) as f32;
            }
        }
    }
    (
        Image {
            width: w,
            height: h,
            data: img,
        },
        DepthMap {
            width: w,
            height: h,
            values: depth,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_scene() -> SceneSpec {
        SceneSpec {
            width: 32,
            height: 24,
            intrinsics: default_intrinsics(32, 24),
            ground_height: 1.5,
            backdrop_z: None,
            boxes: vec![],
            camera: CameraTrajectory {
                initial: Pose::identity(),
                velocity: [0.0; 3],
                yaw_rate: 0.0,
            },
            texture_seed: 1,
            frame_count: 10,
            frame_interval: FRAME_INTERVAL,
            depth_range: DepthRange::TRAIN,
            supersample: 1,
        }
    }

    #[test]
    fn fronto_parallel_box_face_has_constant_depth() {
        let mut s = plain_scene();
        s.ground_height = 1000.0;
        s.boxes.push(BoxObject {
            center: [0.0, 0.0, 5.0 + 50.0],
            half_size: [100.0, 100.0, 50.0],
            velocity: [0.0; 3],
            texture_seed: 3,
        });
        let (_, d) = render_frame(&s, 0.0, &s.intrinsics, &Pose::identity());
        assert!(d.values.iter().all(|&v| (v - 5.0).abs() < 1e-5));
    }

    #[test]
    fn ground_depth_grows_toward_horizon() {
        let s = plain_scene();
        let (_, d) = render_frame(&s, 0.0, &s.intrinsics, &Pose::identity());
        let x = 16;
        let rows: Vec<f32> = (13..24).rev().map(|y| d.at(x, y)).collect();
        assert!(rows.windows(2).all(|p| p[1] > p[0]), "{rows:?}");
    }

    #[test]
    fn ground_depth_matches_ray_plane_formula() {
        let s = plain_scene();
        let k = s.intrinsics;
        let (_, d) = render_frame(&s, 0.0, &k, &Pose::identity());
        for y in 0..24 {
            let slope = (y as f64 - k.cy) / k.fy;
            for x in 0..32 {
                let expected = if slope > 0.0 {
                    (1.5 / slope).clamp(0.1, 100.0)
                } else {
                    100.0
                };
                assert!((d.at(x, y) as f64 - expected).abs() < 1e-4 * expected.max(1.0));
            }
        }
    }

    #[test]
    fn noise_is_in_unit_interval() {
        for i in 0..500 {
            let n = fractal_noise(i as f64 * 0.137, i as f64 * -0.291, 9);
            assert!((0.0..=1.0).contains(&n));
        }
    }

    #[test]
    fn random_scenes_validate() {
        for seed in 0..20 {
            let s = SceneSpec::random(
                seed,
                &SceneOptions {
                    moving_objects: true,
                    ..Default::default()
                },
            );
            s.validate().unwrap();
        }
    }
}
