//! Loss behaviour on rendered scenes.

use artic::geom::{RigidMotion, Vec3};
use artic::loss::{loss_rgbd_posed, pose, LossParams, MotionMode};
use artic::pipeline::{reconstruct, Config, SceneInputs};
use artic::synth::{generate, SceneSpec};
use artic::train::{init_model, select_canonical, TrainConfig};

#[test]
fn depth_term_decreases_toward_the_true_door_angle() {
    let spec = SceneSpec::builtin("door2").unwrap();
    let scene = generate(&spec, 1).unwrap();
    let gt = [scene.gt_frames(0), scene.gt_frames(1)];
    let labels = |s: usize| gt[s].iter().map(|f| f.labels.clone()).collect::<Vec<_>>();
    let c = select_canonical(&labels(0), &labels(1)) as usize;
    let (mut model, _) = init_model(&gt[c], &labels(c), 2, &TrainConfig::default()).unwrap();
    let joint = &scene.gt.joints[0];
    let truth = joint.motion_from(c as u8);
    let axis = Vec3::from(joint.joint.axis).normalize();
    let origin = Vec3::from(joint.joint.origin);
    // soft-stage visibility band, wide enough that door points displaced by
    // a few degrees stay in the average
    let cfg = TrainConfig::default();
    let depth_only = LossParams {
        lambda_ssim: 1.0,
        delta_vis: cfg.delta_vis_soft,
        ..cfg.loss_params()
    };
    let mut losses = Vec::new();
    for k in -5..=5 {
        let delta = (k as f64).to_radians();
        let r = RigidMotion::from_axis_angle(&axis, delta, Vec3::zeros());
        let about_hinge = RigidMotion::from_axis_angle(&axis, delta, origin - r.apply(&origin));
        model.field.bases[1].motion = about_hinge.compose(&truth);
        let posed = pose(&model, MotionMode::Hard);
        let total: f64 = gt[1 - c]
            .iter()
            .map(|f| loss_rgbd_posed(&model, &posed, f, &depth_only, None, false).value)
            .sum();
        losses.push(total);
    }
    for k in 0..5 {
        assert!(losses[k] > losses[k + 1], "not decreasing toward 0: {losses:?}");
        assert!(losses[10 - k] > losses[9 - k], "not increasing away from 0: {losses:?}");
    }
}

#[test]
fn motionless_scene_keeps_identity_bases() {
    let spec = SceneSpec::builtin("still2").unwrap();
    let scene = generate(&spec, 1).unwrap();
    assert_eq!(scene.states.values[0], scene.states.values[1]);
    let inputs = SceneInputs {
        frames: [scene.frames(0), scene.frames(1)],
        matches: scene.matches.rows.clone(),
    };
    let rec = reconstruct(&inputs, &Config::default()).unwrap();
    for (j, b) in rec.checkpoint.model.field.bases.iter().enumerate() {
        assert!(b.motion.angle() < 1e-3, "basis {j} angle {}", b.motion.angle());
        assert!(b.motion.t.norm() < 1e-3, "basis {j} translation {}", b.motion.t.norm());
    }
}
