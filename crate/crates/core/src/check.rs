//! Finite-difference verification of every loss gradient on small random
//! instances. Used by the test suite and by `artic selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::frame::Frame;
use crate::geom::{quat_identity, Camera, Primitive, Quat, RigidMotion, Vec2, Vec3};
use crate::grid::{Grid, LabelMap};
use crate::loss::{
    loss_rgbd_posed, loss_sem_posed, loss_sparsity, loss_traj, pose, Grads, LossParams, MotionMode, SceneModel,
    TrajMatch,
};
use crate::motion::MotionField;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;

/// Distance kept between every primitive and the loss's kinks
/// (visibility threshold, zero residuals, label boundaries).
const MARGIN: f64 = 2e-3;

/// One randomized instance: a model and a single frame whose depth is a
/// plane and whose colors are affine in the pixel coordinates, so bilinear
/// sampling has no kinks between pixels.
pub struct Instance {
    pub model: SceneModel,
    pub frame: Frame,
    pub params: LossParams,
    pub matches: Vec<TrajMatch>,
}

fn random_motion(rng: &mut ChaCha8Rng, max_angle: f64, max_t: f64) -> RigidMotion {
    let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let t = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * max_t;
    RigidMotion::from_axis_angle(&axis, rng.random_range(-max_angle..max_angle), t)
}

/// Builds instance `index` of the suite seeded by `seed`.
pub fn instance(seed: u64, index: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let n_parts = rng.random_range(2..=4usize);
    let (w, h) = (32usize, 32usize);
    let eye = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 2.0);
    let cam = Camera::look_at(&eye, &Vec3::zeros(), 36.0, w, h).unwrap();
    // plane n·x_c = c in camera space: inverse depth is affine in pixels
    let n = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0);
    let c = eye.norm() * n.z;
    let k_inv = cam.intrinsics().try_inverse().unwrap();
    let plane_depth = |u: f64, v: f64| c / n.dot(&(k_inv * Vec3::new(u, v, 1.0)));
    let mut depth = Grid::new(w, h, 0.0f32);
    let coef: [[f64; 3]; 3] = std::array::from_fn(|_| {
        [rng.random_range(0.2..0.6), rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01)]
    });
    let mut rgb = Grid::new(w, h, [0.0f32; 3]);
    // labels: vertical bands
    let band = rng.random_range(4..9usize);
    let mut labels: LabelMap = Grid::new(w, h, 0);
    for y in 0..h {
        for x in 0..w {
            depth.set(x, y, plane_depth(x as f64, y as f64) as f32);
            let (u, v) = (x as f64, y as f64);
            rgb.set(x, y, coef.map(|k| (k[0] + k[1] * u + k[2] * v) as f32));
            labels.set(x, y, ((x / band) % (n_parts + 1)) as u16);
        }
    }
    let frame = Frame {
        view: 0,
        state: 1,
        camera: cam.clone(),
        rgb,
        depth,
        labels,
    };
    let params = LossParams {
        lambda_ssim: 0.2,
        lambda_d: 0.5,
        delta_vis: 0.1,
        label_gate: false,
    };

    let mut field = MotionField::new(n_parts).unwrap();
    for b in field.bases.iter_mut().skip(1) {
        b.motion = random_motion(&mut rng, 0.05, 0.02);
    }
    if n_parts > 2 && rng.random_bool(0.5) {
        field.bases[n_parts - 1].prismatic_locked = true;
        field.bases[n_parts - 1].motion.q = quat_identity();
    }

    let n_prims = 24;
    let mut prims: Vec<Primitive> = Vec::with_capacity(n_prims);
    while prims.len() < n_prims {
        let u = rng.random_range(3.0..(w as f64 - 4.0));
        let v = rng.random_range(3.0..(h as f64 - 4.0));
        let off = rng.random_range(-0.04..0.04);
        let center = cam.backproject(&Vec2::new(u, v), plane_depth(u, v) + off).unwrap();
        let logits: Vec<f64> = (0..n_parts).map(|_| rng.random_range(-2.0..2.0)).collect();
        let color = Vec3::new(rng.random(), rng.random(), rng.random());
        let p = Primitive {
            center,
            rot: quat_identity(),
            scale: Vec3::repeat(0.01),
            opacity: 0.9,
            color,
            logits,
        };
        let trial = SceneModel {
            primitives: vec![p.clone()],
            field: field.clone(),
            knn: vec![vec![]],
        };
        if [MotionMode::Soft, MotionMode::Hard]
            .iter()
            .all(|m| clear_of_kinks(&trial, &frame, &params, *m))
        {
            prims.push(p);
        }
    }
    let knn_k = rng.random_range(1..=4usize);
    let model = SceneModel::new(prims, field, knn_k).unwrap();
    let matches = (0..16)
        .map(|_| {
            let i = rng.random_range(0..n_prims);
            let start = model.primitives[i].center + Vec3::new(rng.random(), rng.random(), rng.random()) * 0.01;
            let end = start + Vec3::new(rng.random(), rng.random(), rng.random()) * 0.05;
            TrajMatch {
                start,
                end,
                primitive: i,
            }
        })
        .collect();
    Instance {
        model,
        frame,
        params,
        matches,
    }
}

/// True when the single primitive of `m` is visible and at least `MARGIN`
/// away from every discontinuity of the losses.
fn clear_of_kinks(m: &SceneModel, f: &Frame, params: &LossParams, mode: MotionMode) -> bool {
    let posed = pose(m, mode);
    let x = posed.x[0];
    let Some(pr) = f.camera.project(&x) else { return false };
    let (u, v) = (pr.pixel.x, pr.pixel.y);
    if u < 2.0 || v < 2.0 || u > f.camera.width as f64 - 3.0 || v > f.camera.height as f64 - 3.0 {
        return false;
    }
    let Some((d, _, _)) = crate::grid::sample_depth(&f.depth, u, v) else {
        return false;
    };
    let r = (pr.depth - d).abs();
    if r < MARGIN || r > params.delta_vis - MARGIN {
        return false;
    }
    let Some((img, _, _)) = crate::grid::sample_rgb(&f.rgb, u, v) else {
        return false;
    };
    if (0..3).any(|c| (m.primitives[0].color[c] - img[c]).abs() < MARGIN) {
        return false;
    }
    // nearest-pixel label switches at half-integers
    let fu = u - u.floor();
    let fv = v - v.floor();
    (fu - 0.5).abs() > 0.05 && (fv - 0.5).abs() > 0.05
}

/// Which parameter group a gradient component belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Param {
    Quat(usize, usize),
    Trans(usize, usize),
    Logit(usize, usize),
    Color(usize, usize),
}

fn perturb(model: &mut SceneModel, p: Param, delta: f64) {
    match p {
        Param::Quat(j, k) => {
            let q = &mut model.field.bases[j].motion.q;
            let mut c = [q.w, q.i, q.j, q.k];
            c[k] += delta;
            *q = Quat::new(c[0], c[1], c[2], c[3]);
        }
        Param::Trans(j, k) => model.field.bases[j].motion.t[k] += delta,
        Param::Logit(i, k) => model.primitives[i].logits[k] += delta,
        Param::Color(i, k) => model.primitives[i].color[k] += delta,
    }
}

fn analytic(g: &Grads, quat: &[[f64; 4]], n_parts: usize, p: Param) -> f64 {
    match p {
        Param::Quat(j, k) => quat[j][k],
        Param::Trans(j, k) => g.t[j][k],
        Param::Logit(i, k) => g.logits[i * n_parts + k],
        Param::Color(i, k) => g.color[i][k],
    }
}

/// Result of checking one loss over a number of instances.
#[derive(Clone, Debug, Serialize)]
pub struct GradCheck {
    pub loss: String,
    pub instances: usize,
    pub components: usize,
    /// Largest relative error among components of magnitude at least
    /// `100 * ABS_FLOOR`; smaller ones are judged by the absolute floor.
    pub max_rel_err: f64,
    pub worst: Option<(u64, Param, f64, f64)>,
    pub passed: bool,
}

type LossFn = dyn Fn(&SceneModel, &Instance, Option<(&mut Grads, f64)>) -> f64;

fn check_loss(name: &str, seed: u64, n: usize, params_of: &dyn Fn(&SceneModel) -> Vec<Param>, f: &LossFn) -> GradCheck {
    let mut out = GradCheck {
        loss: name.to_string(),
        instances: n,
        components: 0,
        max_rel_err: 0.0,
        worst: None,
        passed: true,
    };
    for idx in 0..n as u64 {
        let inst = instance(seed, idx);
        let model = &inst.model;
        let mut g = Grads::for_model(model);
        f(model, &inst, Some((&mut g, 1.0)));
        let quat = g.quat(&model.field);
        for p in params_of(model) {
            let a = analytic(&g, &quat, model.n_parts(), p);
            let mut plus = model.clone();
            perturb(&mut plus, p, FD_STEP);
            let mut minus = model.clone();
            perturb(&mut minus, p, -FD_STEP);
            let num = (f(&plus, &inst, None) - f(&minus, &inst, None)) / (2.0 * FD_STEP);
            out.components += 1;
            let err = (a - num).abs();
            let scale = a.abs().max(num.abs());
            if scale <= ABS_FLOOR {
                if err > ABS_FLOOR {
                    out.passed = false;
                }
                continue;
            }
            let rel = err / scale;
            if scale >= 100.0 * ABS_FLOOR && rel > out.max_rel_err {
                out.max_rel_err = rel;
                out.worst = Some((idx, p, a, num));
            }
            if rel > REL_TOL && err > ABS_FLOOR {
                out.passed = false;
            }
        }
    }
    out
}

fn motion_params(m: &SceneModel) -> Vec<Param> {
    let mut v = Vec::new();
    for (j, b) in m.field.bases.iter().enumerate() {
        if !b.prismatic_locked {
            v.extend((0..4).map(|k| Param::Quat(j, k)));
        }
        v.extend((0..3).map(|k| Param::Trans(j, k)));
    }
    v
}

fn logit_params(m: &SceneModel) -> Vec<Param> {
    (0..m.primitives.len())
        .flat_map(|i| (0..m.n_parts()).map(move |k| Param::Logit(i, k)))
        .collect()
}

fn color_params(m: &SceneModel) -> Vec<Param> {
    (0..m.primitives.len())
        .flat_map(|i| (0..3).map(move |k| Param::Color(i, k)))
        .collect()
}

/// Runs the finite-difference suite: `n` instances per loss.
pub fn gradient_suite(seed: u64, n: usize) -> Vec<GradCheck> {
    let rgbd = |mode: MotionMode| {
        move |m: &SceneModel, inst: &Instance, g: Option<(&mut Grads, f64)>| {
            let posed = pose(m, mode);
            loss_rgbd_posed(m, &posed, &inst.frame, &inst.params, g, true).value
        }
    };
    let sem = |m: &SceneModel, inst: &Instance, g: Option<(&mut Grads, f64)>| {
        let posed = pose(m, MotionMode::Soft);
        loss_sem_posed(m, &posed, &inst.frame, &inst.params, g).value
    };
    let sparsity = |m: &SceneModel, _: &Instance, g: Option<(&mut Grads, f64)>| loss_sparsity(m, g);
    let traj = |m: &SceneModel, inst: &Instance, g: Option<(&mut Grads, f64)>| loss_traj(m, &inst.matches, g);

    let soft_params = |m: &SceneModel| {
        let mut v = motion_params(m);
        v.extend(logit_params(m));
        v.extend(color_params(m));
        v
    };
    let hard_params = |m: &SceneModel| {
        let mut v = motion_params(m);
        v.extend(color_params(m));
        v
    };
    vec![
        check_loss("rgbd (soft blend)", seed, n, &soft_params, &rgbd(MotionMode::Soft)),
        check_loss("rgbd (hard assignment)", seed, n, &hard_params, &rgbd(MotionMode::Hard)),
        check_loss("sem", seed, n, &logit_params, &sem),
        check_loss("sparsity", seed, n, &logit_params, &sparsity),
        check_loss("traj", seed, n, &motion_params, &traj),
    ]
}
