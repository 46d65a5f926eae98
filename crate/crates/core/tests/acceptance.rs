//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 6 and 9 need full desk-scale training runs (hours on one core).
//! They are scored from the metrics that `scripts/desk_runs.sh` records
//! under `results/`, and are reported but not asserted here.

use std::path::PathBuf;
use std::time::Instant;

use depthcast::config::RunConfig;
use depthcast::data::formats::{decode_pfm, decode_ppm, encode_pfm, encode_ppm};
use depthcast::data::{generate_clip, render_clip, ClipSample, SceneOptions, SceneSpec};
use depthcast::eval::{compute_metrics, median_scale_unclamped};
use depthcast::geometry::{
    build_warp_grid, pose_tensors, rodrigues, warp_image, CameraIntrinsics, DepthMap, DepthRange,
};
use depthcast::losses::{
    photometric_error, smoothness, total_loss, LossWeights, PoseBatch, TargetInputs,
};
use depthcast::network::{Model, NetworkConfig};
use depthcast::train::{compute_loss, Trainer};
use depthcast_tensor::gradcheck::check_gradients;
use depthcast_tensor::{checkpoint, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_EPS: f32 = 1e-3;
const GRAD_TOL: f64 = 0.03;
const GRAD_BUDGET_S: f64 = 60.0;
const WARP_MAE: f64 = 0.02;
const WARP_BEAT: f64 = 0.9;
const TEXTURE_MIN: f32 = 0.03;
const OCCLUSION_REL: f64 = 0.02;
const SCALE_INVARIANCE_TOL: f64 = 1e-6;
const OVERFIT_STEPS: usize = 200;
const OVERFIT_RATIO: f32 = 0.5;
const OVERFIT_BUDGET_S: f64 = 15.0 * 60.0;
const TREND_SLACK: f64 = 0.005;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let t = Tensor::randn(shape, 1.0, &mut rng(seed));
    let v = t
        .data()
        .iter()
        .map(|&x| {
            if x.abs() < 0.05 {
                x.signum() * 0.05 + x
            } else {
                x
            }
        })
        .collect();
    Tensor::from_vec(v, shape).unwrap()
}

fn lift<T>(r: depthcast::Result<T>) -> depthcast_tensor::Result<T> {
    r.map_err(|e| TensorError::Io(e.to_string()))
}

type Case = (
    &'static str,
    Box<dyn Fn(&[Tensor]) -> depthcast_tensor::Result<Tensor>>,
    Vec<Tensor>,
);

fn gradient_cases() -> Vec<Case> {
    let a = away_from_zero(&[3, 4], 1);
    let b = away_from_zero(&[4], 2);
    let pos = Tensor::rand_uniform(&[3, 4], 0.3, 2.0, &mut rng(3));
    let r3 = Tensor::randn(&[2, 3, 4], 1.0, &mut rng(4));
    let img = Tensor::randn(&[1, 2, 6, 6], 1.0, &mut rng(5));
    let w3 = Tensor::randn(&[3, 2, 3, 3], 0.5, &mut rng(6));
    let w4 = Tensor::randn(&[3, 2, 4, 4], 0.5, &mut rng(7));
    let wt = Tensor::randn(&[2, 3, 3, 3], 0.5, &mut rng(8));
    let bias = Tensor::randn(&[3], 0.5, &mut rng(9));
    let gamma = Tensor::randn(&[4], 1.0, &mut rng(10));
    let beta = Tensor::randn(&[4], 1.0, &mut rng(11));
    let mut g = Vec::new();
    let mut r = rng(12);
    for _ in 0..12 {
        let (u, v): (f32, f32) = (r.gen_range(0.5..4.5), r.gen_range(0.5..4.5));
        let (u, v) = (
            u.floor() + 0.2 + 0.6 * u.fract(),
            v.floor() + 0.2 + 0.6 * v.fract(),
        );
        g.push((2.0 * u + 1.0) / 6.0 - 1.0);
        g.push((2.0 * v + 1.0) / 6.0 - 1.0);
    }
    let grid = Tensor::from_vec(g, &[1, 3, 4, 2]).unwrap();
    let a2 = a.add_scalar(0.3).unwrap();

    let mut cases: Vec<Case> = vec![
        (
            "add",
            Box::new(|x| x[0].add(&x[1])),
            vec![a.clone(), b.clone()],
        ),
        (
            "sub",
            Box::new(|x| x[0].sub(&x[1])),
            vec![a.clone(), b.clone()],
        ),
        (
            "mul",
            Box::new(|x| x[0].mul(&x[1])),
            vec![a.clone(), b.clone()],
        ),
        (
            "div",
            Box::new(|x| x[0].div(&x[1])),
            vec![a.clone(), pos.clone()],
        ),
        (
            "minimum",
            Box::new(|x| x[0].minimum(&x[1])),
            vec![a.clone(), a2.clone()],
        ),
        (
            "maximum",
            Box::new(|x| x[0].maximum(&x[1])),
            vec![a.clone(), a2],
        ),
        ("neg", Box::new(|x| x[0].neg()), vec![a.clone()]),
        (
            "add_scalar",
            Box::new(|x| x[0].add_scalar(0.7)?.exp()),
            vec![a.clone()],
        ),
        (
            "mul_scalar",
            Box::new(|x| x[0].mul_scalar(-1.3)),
            vec![a.clone()],
        ),
        (
            "rsub_scalar",
            Box::new(|x| x[0].rsub_scalar(2.0)?.exp()),
            vec![a.clone()],
        ),
        ("abs", Box::new(|x| x[0].abs()), vec![a.clone()]),
        ("exp", Box::new(|x| x[0].exp()), vec![a.clone()]),
        ("log", Box::new(|x| x[0].log()), vec![pos.clone()]),
        ("sqrt", Box::new(|x| x[0].sqrt()), vec![pos.clone()]),
        ("pow", Box::new(|x| x[0].pow(-1.0)), vec![pos.clone()]),
        ("relu", Box::new(|x| x[0].relu()), vec![a.clone()]),
        ("gelu", Box::new(|x| x[0].gelu()), vec![a.clone()]),
        ("sigmoid", Box::new(|x| x[0].sigmoid()), vec![a.clone()]),
        (
            "clamp",
            Box::new(|x| x[0].clamp(-2.5, 2.5)),
            vec![a.clone()],
        ),
        ("sum", Box::new(|x| x[0].sum()), vec![r3.clone()]),
        ("mean", Box::new(|x| x[0].mean()), vec![r3.clone()]),
        (
            "sum_dim",
            Box::new(|x| x[0].sum_dim(1, false)),
            vec![r3.clone()],
        ),
        (
            "mean_dim",
            Box::new(|x| x[0].mean_dim(2, true)),
            vec![r3.clone()],
        ),
        (
            "reshape",
            Box::new(|x| x[0].reshape(&[6, 4])?.exp()),
            vec![r3.clone()],
        ),
        (
            "permute",
            Box::new(|x| x[0].permute(&[2, 0, 1])?.exp()),
            vec![r3.clone()],
        ),
        (
            "transpose",
            Box::new(|x| x[0].transpose(0, 2)?.exp()),
            vec![r3.clone()],
        ),
        (
            "unsqueeze",
            Box::new(|x| x[0].unsqueeze(1)?.exp()),
            vec![r3.clone()],
        ),
        (
            "narrow",
            Box::new(|x| x[0].narrow(2, 1, 2)?.exp()),
            vec![r3.clone()],
        ),
        (
            "cat",
            Box::new(|x| Tensor::cat(&[x[0].clone(), x[0].exp()?], 1)),
            vec![r3.clone()],
        ),
        (
            "pad",
            Box::new(|x| x[0].pad(2, 1, 2)?.exp()),
            vec![r3.clone()],
        ),
        (
            "roll",
            Box::new(|x| x[0].roll(2, -1)?.exp()),
            vec![r3.clone()],
        ),
        (
            "index_select",
            Box::new(|x| x[0].index_select(1, &[2, 0, 2])?.exp()),
            vec![r3.clone()],
        ),
        (
            "matmul",
            Box::new(|x| x[0].matmul(&x[1])),
            vec![a.clone(), Tensor::randn(&[4, 2], 1.0, &mut rng(13))],
        ),
        ("softmax", Box::new(|x| x[0].softmax(1)), vec![a.clone()]),
        (
            "layer_norm",
            Box::new(|x| x[0].layer_norm(&x[1], &x[2], 1e-5)),
            vec![a.clone(), gamma, beta],
        ),
        (
            "conv2d",
            Box::new(|x| x[0].conv2d(&x[1], Some(&x[2]), 1, 1)),
            vec![img.clone(), w3, bias.clone()],
        ),
        (
            "conv2d stride 2",
            Box::new(|x| x[0].conv2d(&x[1], None, 2, 1)),
            vec![img.clone(), w4],
        ),
        (
            "conv_transpose2d",
            Box::new(|x| x[0].conv_transpose2d(&x[1], Some(&x[2]), 2, 1, 1)),
            vec![img.clone(), wt, bias],
        ),
        (
            "avg_pool3x3",
            Box::new(|x| x[0].avg_pool3x3()),
            vec![img.clone()],
        ),
        (
            "resize_bilinear",
            Box::new(|x| x[0].resize_bilinear(9, 12)),
            vec![img.clone()],
        ),
        (
            "grid_sample",
            Box::new(|x| x[0].grid_sample(&x[1])),
            vec![img, grid],
        ),
        (
            "rodrigues",
            Box::new(|x| lift(rodrigues(&x[0]))),
            vec![Tensor::from_vec(vec![0.3, -0.7, 0.2, -1.2, 0.4, 2.0], &[2, 3]).unwrap()],
        ),
    ];

    let k8 = CameraIntrinsics {
        fx: 6.0,
        fy: 6.5,
        cx: 3.4,
        cy: 3.6,
    };
    let depth = Tensor::from_vec(
        (0..64)
            .map(|i| 2.0 + 0.37 * ((i * 7) % 11) as f32)
            .collect(),
        &[1, 1, 8, 8],
    )
    .unwrap();
    cases.push((
        "build_warp_grid",
        Box::new(move |x| {
            let rot = lift(rodrigues(&x[1]))?;
            Ok(lift(build_warp_grid(&x[0], &k8, &rot, &x[2]))?.grid)
        }),
        vec![
            depth,
            Tensor::from_vec(vec![0.03, -0.05, 0.02], &[1, 3]).unwrap(),
            Tensor::from_vec(vec![0.2, -0.1, 0.3], &[1, 3]).unwrap(),
        ],
    ));

    let toy = |phase: f32| {
        let v: Vec<f32> = (0..48)
            .map(|i| {
                let (c, p) = (i / 16, i % 16);
                let (x, y) = ((p % 4) as f32, (p / 4) as f32);
                0.5 + 0.3 * ((x + phase) * 0.9 + y * 0.6 + c as f32).sin()
            })
            .collect();
        Tensor::from_vec(v, &[1, 3, 4, 4]).unwrap()
    };
    let (prev, target, next) = (toy(-0.4), toy(0.0), toy(0.4));
    let k4 = CameraIntrinsics {
        fx: 4.0,
        fy: 4.0,
        cx: 1.5,
        cy: 1.5,
    };
    let pb = |tx: f32| PoseBatch {
        rotation: Tensor::from_vec(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            &[1, 3, 3],
        )
        .unwrap(),
        translation: Tensor::from_vec(vec![tx, 0.0, 0.02], &[1, 3]).unwrap(),
    };
    cases.push((
        "total_loss",
        Box::new(move |x| {
            let t = TargetInputs {
                horizon: 0,
                prev: prev.clone(),
                target: target.clone(),
                next: next.clone(),
                disparities: vec![x[0].clone()],
                to_prev: pb(-0.05),
                to_next: pb(0.05),
            };
            Ok(lift(total_loss(
                &[t],
                &k4,
                DepthRange::TRAIN,
                &LossWeights::default(),
            ))?
            .total)
        }),
        vec![Tensor::from_vec(
            (0..16).map(|i| 0.3 + 0.02 * i as f32).collect(),
            &[1, 1, 4, 4],
        )
        .unwrap()],
    ));
    cases
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cases = gradient_cases();
    let mut worst = (0.0f64, "");
    let mut failures = Vec::new();
    for (name, f, inputs) in &cases {
        match check_gradients(f, inputs, GRAD_EPS, |_, _| false) {
            Ok(reports) => {
                for r in reports {
                    if r.rel_error > worst.0 {
                        worst = (r.rel_error, name);
                    }
                    if !(r.rel_error <= GRAD_TOL) || r.checked == 0 {
                        failures.push(format!("{name}[{}]={:.4}", r.input, r.rel_error));
                    }
                }
            }
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures.is_empty() && secs < GRAD_BUDGET_S,
        format!(
            "{} ops, worst rel err {:.4} ({}), tol {GRAD_TOL}, {secs:.1}s{}",
            cases.len(),
            worst.0,
            worst.1,
            if failures.is_empty() {
                String::new()
            } else {
                format!(", failing: {}", failures.join(" "))
            }
        ),
    )
}

fn texture_gradient(img: &[f32], x: usize, y: usize, w: usize, h: usize) -> f32 {
    let mut g = 0.0f32;
    for c in 0..3 {
        let at = |xx: usize, yy: usize| img[(c * h + yy) * w + xx];
        g += (at(x + 1, y) - at(x - 1, y)).abs() + (at(x, y + 1) - at(x, y - 1)).abs();
    }
    g / 6.0
}

/// Warps frame t+1 into t with ground-truth depth and pose.
fn warp_oracle(clip: &ClipSample) -> (f64, f64) {
    let (w, h) = (clip.width(), clip.height());
    let k = clip.intrinsics;
    let rel = clip.relative_pose(3, 4);
    let (r, t) = pose_tensors(&[rel]).unwrap();
    let wg = build_warp_grid(&clip.depths[0].to_tensor(), &k, &r, &t).unwrap();
    let tgt = clip.frames[3].to_tensor();
    let src = clip.frames[4].to_tensor();
    let warped = warp_image(&src, &wg.grid).unwrap();
    let (tg, sr, wp) = (tgt.data(), src.data(), warped.data());
    let (mut err, mut n, mut beat, mut textured) = (0.0f64, 0usize, 0usize, 0usize);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = y * w + x;
            let d = clip.depths[0].values[p] as f64;
            if d >= DepthRange::TRAIN.max as f64 || wg.valid.data()[p] == 0.0 {
                continue;
            }
            let q = rel.apply(&k.backproject(x as f64, y as f64, d));
            let (u, v) = k.project(&q);
            let (ui, vi) = (u.round() as usize, v.round() as usize);
            if ui >= w
                || vi >= h
                || (q.z - clip.depths[1].at(ui, vi) as f64).abs() > OCCLUSION_REL * q.z
            {
                continue;
            }
            let (mut e_w, mut e_id) = (0.0f32, 0.0f32);
            for c in 0..3 {
                let i = c * h * w + p;
                e_w += (wp[i] - tg[i]).abs() / 3.0;
                e_id += (sr[i] - tg[i]).abs() / 3.0;
            }
            err += e_w as f64;
            n += 1;
            if texture_gradient(tg, x, y, w, h) > TEXTURE_MIN {
                textured += 1;
                beat += (e_w < e_id) as usize;
            }
        }
    }
    (err / n as f64, beat as f64 / textured as f64)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for seed in [1u64, 2, 3] {
        let clip = generate_clip(seed, &SceneOptions::default()).unwrap();
        let (mae, beat) = warp_oracle(&clip);
        pass &= mae < WARP_MAE && beat >= WARP_BEAT;
        parts.push(format!("seed {seed}: mae {mae:.4} beat {beat:.3}"));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        pass && secs < 60.0,
        format!(
            "{} (need mae < {WARP_MAE}, beat >= {WARP_BEAT}), {secs:.1}s",
            parts.join("; ")
        ),
    )
}

fn gt_poses(clip: &ClipSample, tgt: usize) -> (PoseBatch, PoseBatch) {
    let (rp, tp) = pose_tensors(&[clip.relative_pose(tgt, tgt - 1)]).unwrap();
    let (rn, tn) = pose_tensors(&[clip.relative_pose(tgt, tgt + 1)]).unwrap();
    (
        PoseBatch {
            rotation: rp,
            translation: tp,
        },
        PoseBatch {
            rotation: rn,
            translation: tn,
        },
    )
}

fn criterion_3() -> Outcome {
    let opts = SceneOptions {
        width: 48,
        height: 32,
        ..SceneOptions::default()
    };
    let w = LossWeights::default();
    let clip = generate_clip(1, &opts).unwrap();
    let x = clip.frames[0].to_tensor();
    let pe_zero = photometric_error(&x, &x, &w)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0);
    let smooth_zero = [false, true].iter().all(|&n| {
        smoothness(&Tensor::full(&[1, 1, 32, 48], 0.37), &x, n)
            .unwrap()
            .item()
            == 0.0
    });

    let mut s = SceneSpec::random(3, &opts);
    s.camera.velocity = [0.0; 3];
    s.camera.yaw_rate = 0.0;
    let still = render_clip(&s).unwrap();
    let inputs = |c: &ClipSample, d: Tensor| {
        let (to_prev, to_next) = gt_poses(c, 3);
        TargetInputs {
            horizon: 0,
            prev: c.frames[2].to_tensor(),
            target: c.frames[3].to_tensor(),
            next: c.frames[4].to_tensor(),
            disparities: vec![d],
            to_prev,
            to_next,
        }
    };
    let out = total_loss(
        &[inputs(&still, Tensor::full(&[1, 1, 32, 48], 0.3))],
        &still.intrinsics,
        DepthRange::TRAIN,
        &w,
    )
    .unwrap();
    let mask_zero = out.masks[0].data().iter().all(|&v| v == 0.0);

    let disp = Tensor::from_vec(
        (0..32 * 48)
            .map(|i| 0.2 + 0.5 * ((i % 13) as f32 / 13.0))
            .collect(),
        &[1, 1, 32, 48],
    )
    .unwrap();
    let no_smooth = LossWeights {
        smoothness: 0.0,
        ..w
    };
    let o = total_loss(
        &[inputs(&clip, disp)],
        &clip.intrinsics,
        DepthRange::TRAIN,
        &no_smooth,
    )
    .unwrap();
    let alpha_zero = o.breakdown.smoothness == 0.0 && o.breakdown.total == o.breakdown.photometric;

    outcome(
        pe_zero && smooth_zero && mask_zero && alpha_zero,
        format!("pe(x,x)=0 {pe_zero}, smoothness(const)=0 {smooth_zero}, static mask=0 {mask_zero}, alpha_s=0 exact {alpha_zero}"),
    )
}

fn criterion_4() -> Outcome {
    let map = |v: &[f32]| DepthMap::new(v.len(), 1, v.to_vec()).unwrap();
    let m = compute_metrics(&map(&[2.0, 2.0, 8.0]), &map(&[1.0, 2.0, 4.0]), &[true; 3]).unwrap();
    let exact = m.abs_rel == 2.0 / 3.0 && m.rmse == (17.0f64 / 3.0).sqrt();

    let clip = generate_clip(9, &SceneOptions::default()).unwrap();
    let gt = &clip.depths[0];
    let valid: Vec<bool> = gt.values.iter().map(|&g| g > 0.5 && g < 100.0).collect();
    let pred = DepthMap::new(
        gt.width,
        gt.height,
        gt.values
            .iter()
            .enumerate()
            .map(|(i, &g)| g * (0.8 + 0.4 * ((i * 7919) % 101) as f32 / 100.0))
            .collect(),
    )
    .unwrap();
    let base = compute_metrics(
        &median_scale_unclamped(&pred, gt, &valid).unwrap(),
        gt,
        &valid,
    )
    .unwrap()
    .abs_rel;
    let mut max_dev = 0.0f64;
    for c in [0.01f32, 0.5, 3.0, 250.0] {
        let p = DepthMap::new(
            pred.width,
            pred.height,
            pred.values.iter().map(|v| v * c).collect(),
        )
        .unwrap();
        let a = compute_metrics(&median_scale_unclamped(&p, gt, &valid).unwrap(), gt, &valid)
            .unwrap()
            .abs_rel;
        max_dev = max_dev.max((a - base).abs() / base);
    }
    outcome(
        exact && max_dev < SCALE_INVARIANCE_TOL,
        format!(
            "abs_rel {} (2/3), rmse {} (sqrt(17/3)), scale invariance max rel dev {max_dev:.2e}",
            m.abs_rel, m.rmse
        ),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig::from_overrides(&[
        "train.augment=false".into(),
        "train.lr=1e-4".into(),
        "train.batch_size=4".into(),
    ])
    .unwrap();
    let clips: Vec<ClipSample> = (0..4)
        .map(|s| generate_clip(100 + s, &SceneOptions::default()).unwrap())
        .collect();
    let mut t = Trainer::new(cfg).unwrap();
    let mut first = None;
    for _ in 0..OVERFIT_STEPS {
        let bd = t.step_on(&clips).unwrap();
        first.get_or_insert(bd.total);
    }
    let refs: Vec<&ClipSample> = clips.iter().collect();
    let last = depthcast_tensor::no_grad(|| compute_loss(&t.model, &refs, &t.config))
        .unwrap()
        .breakdown
        .total;
    let first = first.unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        last <= OVERFIT_RATIO * first && secs < OVERFIT_BUDGET_S,
        format!("loss {first:.4} -> {last:.4} after {OVERFIT_STEPS} steps (ratio {:.3}, need <= {OVERFIT_RATIO}), {secs:.0}s", last / first),
    )
}

fn criterion_7() -> Outcome {
    let cfg = NetworkConfig::desk();
    let m = Model::new(&cfg, 0).unwrap();
    let params = m.vs.params();
    let count = |ps: &[depthcast_tensor::Param], p: &str| -> usize {
        ps.iter()
            .filter(|x| x.name().starts_with(p))
            .map(|x| x.numel())
            .sum()
    };
    let unshared = Model::new(
        &NetworkConfig {
            share_state_predictor: false,
            ..cfg.clone()
        },
        0,
    )
    .unwrap();
    let up = unshared.vs.params();
    let per = count(&params, "state.");
    let sharing = m.depth.predictors.len() == 1
        && unshared.vs.num_params() == m.vs.num_params() + (cfg.steps() - 1) * per
        && ["backbone.", "st.", "decoder."]
            .iter()
            .all(|p| count(&params, p) == count(&up, p))
        && params
            .iter()
            .filter(|p| p.name().starts_with("decoder.disp"))
            .count()
            == 8;

    let mut r = rng(1);
    let ctx: Vec<Tensor> = (0..4)
        .map(|_| Tensor::rand_uniform(&[1, 3, 64, 96], 0.0, 1.0, &mut r).requires_grad())
        .collect();
    let out = m.depth.forward(&ctx).unwrap();
    let sizes = [(64, 96), (32, 48), (16, 24), (8, 12)];
    let contract = out.targets == [0, 1, 3, 5]
        && out.disparities.iter().all(|d| {
            d.len() == 4
                && d.iter().zip(&sizes).all(|(t, &(h, w))| {
                    t.shape() == [1, 1, h, w] && t.data().iter().all(|&v| v > 0.0 && v < 1.0)
                })
        });
    let mut loss = Tensor::scalar(0.0);
    for s in out.disparities.iter().flatten() {
        loss = loss.add(&s.mean().unwrap()).unwrap();
    }
    loss.backward().unwrap();
    let detached = ctx[..3]
        .iter()
        .all(|f| f.grad_vec().is_none_or(|g| g.iter().all(|&v| v == 0.0)))
        && ctx[3]
            .grad_vec()
            .is_some_and(|g| g.iter().any(|&v| v != 0.0));
    outcome(
        sharing && contract && detached,
        format!(
            "sharing counts {sharing} (state predictor {per} params, unshared +{}), output 4x4 contract {contract}, context detachment {detached}",
            unshared.vs.num_params() - m.vs.num_params()
        ),
    )
}

fn criterion_8() -> Outcome {
    let opts = SceneOptions {
        width: 64,
        height: 32,
        ..SceneOptions::default()
    };
    let clips: Vec<ClipSample> = (0..2)
        .map(|s| generate_clip(300 + s, &opts).unwrap())
        .collect();
    let cfg = RunConfig::from_overrides(&[
        "model.height=32".into(),
        "model.width=64".into(),
        "train.batch_size=2".into(),
    ])
    .unwrap();
    let step1 = || {
        let mut t = Trainer::new(cfg.clone()).unwrap();
        let b = t.next_batch(&clips);
        (t.step_on(&b).unwrap().total.to_bits(), t)
    };
    let (a, ta) = step1();
    let (b, _) = step1();
    let seeded = a == b;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.dsq");
    ta.save_checkpoint(&path).unwrap();
    let ckpt = checkpoint::load(&path).unwrap() == ta.checkpoint_records();

    let depth = &clips[0].depths[0];
    let pfm = decode_pfm(&encode_pfm(depth), &path).unwrap();
    let pfm_ok = pfm
        .values
        .iter()
        .map(|v| v.to_bits())
        .eq(depth.values.iter().map(|v| v.to_bits()));
    let img = decode_ppm(&encode_ppm(&clips[0].frames[0]), &path).unwrap();
    let ppm_ok = decode_ppm(&encode_ppm(&img), &path).unwrap().data == img.data
        && encode_ppm(&img) == encode_ppm(&clips[0].frames[0]);
    outcome(
        seeded && ckpt && pfm_ok && ppm_ok,
        format!("step-1 loss bitwise {seeded}, checkpoint {ckpt}, PFM {pfm_ok}, PPM {ppm_ok}"),
    )
}

fn results_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../results")
}

/// `horizon -> abs_rel` from a recorded metrics.csv.
fn recorded_abs_rel(run: &str) -> Option<Vec<(usize, f64)>> {
    let text = std::fs::read_to_string(results_dir().join(run).join("metrics.csv")).ok()?;
    text.lines()
        .skip(1)
        .map(|l| {
            let mut f = l.split(',');
            Some((f.next()?.parse().ok()?, f.next()?.parse().ok()?))
        })
        .collect()
}

fn criterion_6() -> Outcome {
    let Some(rows) = recorded_abs_rel("desk") else {
        return outcome(
            false,
            "no recorded desk run (results/desk/metrics.csv); run scripts/desk_runs.sh desk",
        );
    };
    let v: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let inversions: Vec<f64> = v
        .windows(2)
        .filter(|w| w[1] < w[0])
        .map(|w| w[0] - w[1])
        .collect();
    let pass = rows.iter().map(|r| r.0).eq([0, 1, 3, 5])
        && inversions.len() <= 1
        && inversions.iter().all(|&d| d <= TREND_SLACK);
    outcome(pass, format!("recorded abs_rel t0/t1/t3/t5 = {v:.4?}, inversions {inversions:.4?} (allow one <= {TREND_SLACK})"))
}

fn criterion_9() -> Outcome {
    let (Some(known), Some(learned)) = (
        recorded_abs_rel("desk-moving-known-pose"),
        recorded_abs_rel("desk-moving"),
    ) else {
        return outcome(
            false,
            "missing recorded runs under results/desk-moving*/; run scripts/desk_runs.sh",
        );
    };
    let (k, l) = (known[0].1, learned[0].1);
    outcome(
        k <= l,
        format!("recorded abs_rel(t=0) on moving-object scenes: known-pose {k:.4}, learned {l:.4}"),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let in_suite: [Criterion; 7] = [
        (1, "gradient suite", criterion_1),
        (2, "geometry oracle", criterion_2),
        (3, "loss identities", criterion_3),
        (4, "metric oracle", criterion_4),
        (5, "overfit run", criterion_5),
        (7, "architecture audits", criterion_7),
        (8, "determinism and round-trips", criterion_8),
    ];
    let recorded: [Criterion; 2] = [
        (6, "horizon-degradation trend [recorded run]", criterion_6),
        (9, "known-pose mode [recorded runs]", criterion_9),
    ];
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for (id, name, f) in in_suite {
        let o = f();
        if !o.pass {
            failed.push(id);
        }
        lines.push((id, name, o));
    }
    for (id, name, f) in recorded {
        lines.push((id, name, f()));
    }
    lines.sort_by_key(|l| l.0);
    for (id, name, o) in &lines {
        println!(
            "[{}] {id}. {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if !failed.is_empty() {
        eprintln!("acceptance criteria failed: {failed:?}");
        std::process::exit(1);
    }
}
