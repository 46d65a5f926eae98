use depthcast::network::{Model, NetworkConfig};
use depthcast_tensor::{Param, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn frames(seed: u64, b: usize) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..4)
        .map(|_| Tensor::rand_uniform(&[b, 3, 64, 96], 0.0, 1.0, &mut rng))
        .collect()
}

fn model(seed: u64) -> Model {
    Model::new(&NetworkConfig::desk(), seed).unwrap()
}

fn sum_all(out: &[Vec<Tensor>]) -> Tensor {
    let mut loss = Tensor::scalar(0.0);
    for d in out {
        for s in d {
            loss = loss.add(&s.mean().unwrap()).unwrap();
        }
    }
    loss
}

fn count(params: &[Param], prefix: &str) -> usize {
    params
        .iter()
        .filter(|p| p.name().starts_with(prefix))
        .map(|p| p.numel())
        .sum()
}

#[test]
fn output_contract() {
    let m = model(0);
    let ctx = frames(1, 2);
    let pyr = m.depth.encode(&ctx).unwrap();
    assert_eq!(pyr.len(), 4);
    let want = [(32, 16, 24), (64, 8, 12), (128, 4, 6), (256, 2, 3)];
    for p in &pyr {
        for (t, &(c, h, w)) in p.iter().zip(&want) {
            assert_eq!(t.shape(), &[2, c, h, w]);
        }
    }
    let out = m.depth.forward(&ctx).unwrap();
    assert_eq!(out.targets, vec![0, 1, 3, 5]);
    assert_eq!(out.disparities.len(), 4);
    let sizes = [(64, 96), (32, 48), (16, 24), (8, 12)];
    for d in &out.disparities {
        assert_eq!(d.len(), 4);
        for (t, &(h, w)) in d.iter().zip(&sizes) {
            assert_eq!(t.shape(), &[2, 1, h, w]);
            assert!(t.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
    assert!(out.for_target(5).is_some());
    assert!(out.for_target(2).is_none());
}

#[test]
fn rejects_wrong_context() {
    let m = model(0);
    let ctx = frames(1, 1);
    assert!(m.depth.forward(&ctx[..3]).is_err());
    let mut bad = ctx.clone();
    bad[0] = Tensor::zeros(&[1, 3, 32, 96]);
    assert!(m.depth.forward(&bad).is_err());
}

#[test]
fn backbone_shared_across_frames() {
    let m = model(0);
    let f = frames(2, 1);
    let same = vec![f[0].clone(); 4];
    let pyr = m.depth.encode(&same).unwrap();
    for s in 0..4 {
        for k in 1..4 {
            assert_eq!(pyr[0][s].data(), pyr[k][s].data(), "scale {s} frame {k}");
        }
    }
}

#[test]
fn context_frames_are_detached() {
    let m = model(3);
    let ctx: Vec<Tensor> = frames(4, 1)
        .into_iter()
        .map(|t| t.requires_grad())
        .collect();
    let pyr = m.depth.encode(&ctx).unwrap();
    for p in &pyr[..3] {
        for t in p {
            assert!(!t.requires_grad_flag());
        }
    }
    let out = m.depth.forward(&ctx).unwrap();
    sum_all(&out.disparities).backward().unwrap();
    for f in &ctx[..3] {
        assert!(f.grad_vec().is_none_or(|g| g.iter().all(|&v| v == 0.0)));
    }
    let g = ctx[3].grad_vec().expect("frame t gradient");
    assert!(g.iter().any(|&v| v != 0.0));
}

#[test]
fn zero_value_projection_ignores_past_frames() {
    let m = model(5);
    for st in &m.depth.st {
        for b in &st.blocks.blocks {
            let qkv = &b.attn.qkv;
            let (d_in, d_out) = (qkv.weight.shape()[0], qkv.weight.shape()[1]);
            let e = d_out / 3;
            let mut w = qkv.weight.tensor().to_vec();
            for r in 0..d_in {
                for c in 2 * e..d_out {
                    w[r * d_out + c] = 0.0;
                }
            }
            qkv.weight.set_data(w).unwrap();
            let bias = qkv.bias.as_ref().unwrap();
            let mut bv = bias.tensor().to_vec();
            bv[2 * e..].iter_mut().for_each(|v| *v = 0.0);
            bias.set_data(bv).unwrap();
        }
    }
    let a = frames(6, 1);
    let mut b = frames(7, 1);
    b[3] = a[3].clone();
    let oa = m.depth.forward(&a).unwrap();
    let ob = m.depth.forward(&b).unwrap();
    for (x, y) in oa
        .disparities
        .iter()
        .flatten()
        .zip(ob.disparities.iter().flatten())
    {
        assert_eq!(x.data(), y.data());
    }
}

#[test]
fn frame_order_matters() {
    let m = model(8);
    let a = frames(9, 1);
    let mut b = a.clone();
    b.swap(2, 3);
    let oa = m.depth.forward(&a).unwrap();
    let ob = m.depth.forward(&b).unwrap();
    let diff: f32 = oa.disparities[2][0]
        .data()
        .iter()
        .zip(ob.disparities[2][0].data())
        .map(|(x, y)| (x - y).abs())
        .sum();
    assert!(diff > 0.0);
}

#[test]
fn unshared_predictor_parameter_count() {
    let shared = model(0);
    let cfg = NetworkConfig {
        share_state_predictor: false,
        ..NetworkConfig::desk()
    };
    let unshared = Model::new(&cfg, 0).unwrap();
    let ps = shared.vs.params();
    let pu = unshared.vs.params();
    let per_step = count(&ps, "state.");
    assert!(per_step > 0);
    assert_eq!(shared.depth.predictors.len(), 1);
    assert_eq!(unshared.depth.predictors.len(), 5);
    for k in 0..5 {
        assert_eq!(count(&pu, &format!("state.step{k}.")), per_step);
    }
    assert_eq!(
        unshared.vs.num_params(),
        shared.vs.num_params() + 4 * per_step
    );
    for prefix in ["backbone.", "st.", "decoder.", "pose."] {
        assert_eq!(count(&ps, prefix), count(&pu, prefix), "{prefix}");
    }
}

#[test]
fn single_decoder_and_backbone() {
    let m = model(0);
    let names = m.vs.names();
    assert!(names.contains("decoder.disp0.weight"));
    assert!(names.contains("backbone.patch_embed.weight"));
    assert!(names.contains("backbone.stage1.block0.attn.qkv.weight"));
    assert!(names.contains("st.scale3.proj_out.weight"));
    assert!(names.contains("state.scale0.attn.block1.mlp.fc2.bias"));
    assert!(names.contains("pose.head.weight"));
    let top: std::collections::BTreeSet<&str> =
        names.iter().map(|n| n.split('.').next().unwrap()).collect();
    assert_eq!(
        top.into_iter().collect::<Vec<_>>(),
        ["backbone", "decoder", "pose", "st", "state"]
    );
    let total: usize = ["backbone.", "st.", "state.", "decoder.", "pose."]
        .iter()
        .map(|p| count(&m.vs.params(), p))
        .sum();
    assert_eq!(total, m.vs.num_params());
}

#[test]
fn forward_is_bitwise_deterministic() {
    let ctx = frames(10, 1);
    let a = model(11).depth.forward(&ctx).unwrap();
    let b = model(11).depth.forward(&ctx).unwrap();
    for (x, y) in a
        .disparities
        .iter()
        .flatten()
        .zip(b.disparities.iter().flatten())
    {
        assert_eq!(x.data(), y.data());
    }
    let c = model(12).depth.forward(&ctx).unwrap();
    assert_ne!(a.disparities[0][0].data(), c.disparities[0][0].data());
}

#[test]
fn gradients_reach_every_depth_parameter() {
    let m = model(13);
    let out = m.depth.forward(&frames(14, 1)).unwrap();
    // Furthest horizon alone still trains the backbone through the chain.
    out.for_target(5).unwrap()[0]
        .mean()
        .unwrap()
        .backward()
        .unwrap();
    let pe = m.vs.get("backbone.patch_embed.weight").unwrap();
    assert!(pe.grad().unwrap().iter().any(|&v| v != 0.0));
    m.vs.zero_grad();

    let out = m.depth.forward(&frames(14, 1)).unwrap();
    sum_all(&out.disparities).backward().unwrap();
    let params = m.depth_params();
    let dead: Vec<&str> = params
        .iter()
        .filter(|p| p.grad().is_none_or(|g| g.iter().all(|&v| v == 0.0)))
        .map(|p| p.name())
        .collect();
    assert!(dead.is_empty(), "parameters without gradient: {dead:?}");
    let live: usize = params
        .iter()
        .map(|p| {
            p.grad()
                .map_or(0, |g| g.iter().filter(|&&v| v != 0.0).count())
        })
        .sum();
    let total: usize = params.iter().map(|p| p.numel()).sum();
    assert!(live as f64 >= 0.99 * total as f64, "{live}/{total}");
}

#[test]
fn pose_net_contract() {
    let m = model(15);
    let f = frames(16, 2);
    let out = m.pose.forward(&f[0], &f[1], &f[2]).unwrap();
    assert_eq!(out.raw.shape(), &[2, 12]);
    for pb in [&out.prev_to_target, &out.target_to_next] {
        assert_eq!(pb.rotation.shape(), &[2, 3, 3]);
        assert_eq!(pb.translation.shape(), &[2, 3]);
        let r = pb.rotation.data();
        for b in 0..2 {
            let m3 = &r[b * 9..b * 9 + 9];
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f32 = (0..3).map(|k| m3[i * 3 + k] * m3[j * 3 + k]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-5);
                }
            }
        }
    }
    let swapped = m.pose.forward(&f[2], &f[1], &f[0]).unwrap();
    assert_ne!(out.raw.data(), swapped.raw.data());
    assert_eq!(m.pose.calls(), 2);

    m.pose.zero_head().unwrap();
    let id = m.pose.forward(&f[0], &f[1], &f[2]).unwrap();
    assert!(id.raw.data().iter().all(|&v| v == 0.0));
    let r = id.prev_to_target.rotation.data();
    assert_eq!(&r[..9], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn pose_gradients_flow() {
    let m = model(17);
    let f = frames(18, 1);
    let out = m.pose.forward(&f[0], &f[1], &f[2]).unwrap();
    out.prev_to_target
        .translation
        .sum()
        .unwrap()
        .add(&out.target_to_next.rotation.sum().unwrap())
        .unwrap()
        .backward()
        .unwrap();
    for name in ["pose.conv0.weight", "pose.head.weight", "pose.head.bias"] {
        let g = m.vs.get(name).unwrap().grad().unwrap();
        assert!(g.iter().any(|&v| v != 0.0), "{name}");
    }
}

#[test]
fn untrained_depth_starts_mid_range() {
    use depthcast::geometry::{depth_from_activation, DepthRange};
    let m = model(3);
    let out = m.depth.forward(&frames(4, 1)).unwrap();
    let depth = depth_from_activation(&out.disparities[0][0], DepthRange::TRAIN).unwrap();
    let mut d = depth.data().to_vec();
    d.sort_by(f32::total_cmp);
    let median = d[d.len() / 2];
    // Geometric mean of [0.1, 100] is about 3.16 m.
    assert!((1.0..10.0).contains(&median), "{median}");
    assert!(DepthRange::TRAIN.activation_for(2.0) > DepthRange::TRAIN.activation_for(4.0));
}
