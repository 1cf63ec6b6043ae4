//! Loss terms and their analytic gradients.
//!
//! Appearance and segmentation are supervised point-projectively: each
//! primitive center is moved to the frame's state, projected, and compared
//! against the frame's color, depth and label at that pixel. A primitive
//! counts as visible when it lands inside the image on valid depth and
//! within `delta_vis` of the observed surface.

use serde::{Deserialize, Serialize};

use crate::corr::MatchPair;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geom::{rotmat_grad_to_quat, Mat3, Primitive, Vec3};
use crate::grid::{nearest_label, sample_depth, sample_rgb};
use crate::motion::{hard_assign, softmax_backward, softmax_into, MotionField};
use crate::spatial::KdTree;

/// How canonical primitives are moved into a frame's state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionMode {
    /// The frame shows the canonical state; primitives stay put.
    Canonical,
    /// Per-primitive blend of all bases.
    Soft,
    /// Each primitive follows its argmax basis.
    Hard,
}

/// Canonical primitives, the motion field, and a frozen neighbour index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub primitives: Vec<Primitive>,
    pub field: MotionField,
    /// `knn[i]`: the `k` nearest other primitives of `i` (canonical centers).
    pub knn: Vec<Vec<usize>>,
}

impl SceneModel {
    /// Builds the model and its neighbour index over canonical centers.
    pub fn new(primitives: Vec<Primitive>, field: MotionField, knn_k: usize) -> Result<Self> {
        let n = field.n_parts();
        if let Some(p) = primitives.iter().find(|p| p.logits.len() != n) {
            return Err(Error::InvalidInput(format!(
                "primitive has {} logits for {n} parts",
                p.logits.len()
            )));
        }
        let centers: Vec<Vec3> = primitives.iter().map(|p| p.center).collect();
        let tree = KdTree::new(&centers);
        let knn = centers
            .iter()
            .enumerate()
            .map(|(i, c)| {
                tree.knn(c, knn_k + 1)
                    .into_iter()
                    .map(|(j, _)| j)
                    .filter(|&j| j != i)
                    .take(knn_k)
                    .collect()
            })
            .collect();
        Ok(SceneModel { primitives, field, knn })
    }

    pub fn n_parts(&self) -> usize {
        self.field.n_parts()
    }

    /// Hard part index of every primitive.
    pub fn assignments(&self) -> Vec<usize> {
        self.primitives.iter().map(|p| hard_assign(&p.logits)).collect()
    }
}

/// Gradient accumulator. Rotation gradients are kept as `dL/dR_j`; use
/// [`Grads::quat`] for quaternion components.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub rot: Vec<Mat3>,
    pub t: Vec<Vec3>,
    /// Row-major `n_primitives x n_parts`.
    pub logits: Vec<f64>,
    pub color: Vec<Vec3>,
}

impl Grads {
    pub fn zeros(n_primitives: usize, n_parts: usize) -> Self {
        Grads {
            rot: vec![Mat3::zeros(); n_parts],
            t: vec![Vec3::zeros(); n_parts],
            logits: vec![0.0; n_primitives * n_parts],
            color: vec![Vec3::zeros(); n_primitives],
        }
    }

    pub fn for_model(model: &SceneModel) -> Self {
        Self::zeros(model.primitives.len(), model.n_parts())
    }

    pub fn clear(&mut self) {
        self.rot.iter_mut().for_each(|m| *m = Mat3::zeros());
        self.t.iter_mut().for_each(|v| *v = Vec3::zeros());
        self.logits.iter_mut().for_each(|v| *v = 0.0);
        self.color.iter_mut().for_each(|v| *v = Vec3::zeros());
    }

    /// Quaternion gradients `[w, x, y, z]` per basis; prismatic-locked
    /// bases get none.
    pub fn quat(&self, field: &MotionField) -> Vec<[f64; 4]> {
        field
            .bases
            .iter()
            .zip(&self.rot)
            .map(|(b, g)| {
                if b.prismatic_locked {
                    [0.0; 4]
                } else {
                    rotmat_grad_to_quat(&b.motion.q, g)
                }
            })
            .collect()
    }
}

/// Weights and thresholds of the photometric and segmentation terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Blend weight of the (omitted) structural term; color L1 is scaled by
    /// `1 - lambda_ssim`.
    pub lambda_ssim: f64,
    pub lambda_d: f64,
    /// Depth-consistency threshold for visibility (meters).
    pub delta_vis: f64,
    /// Photometric term also requires the observed mask label (when
    /// non-zero) to equal the primitive's argmax part, rejecting points
    /// hidden behind other parts.
    #[serde(default)]
    pub label_gate: bool,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            lambda_ssim: 0.2,
            lambda_d: 0.5,
            delta_vis: 0.05,
            label_gate: false,
        }
    }
}

/// Primitive centers moved into a target state.
#[derive(Clone, Debug)]
pub struct Posed {
    pub mode: MotionMode,
    pub x: Vec<Vec3>,
    /// Softmax weights, row-major (soft mode only).
    pub w: Vec<f64>,
    /// Argmax part per primitive (hard mode only).
    pub assign: Vec<usize>,
    rots: Vec<Mat3>,
}

/// Moves every canonical center according to `mode`.
pub fn pose(model: &SceneModel, mode: MotionMode) -> Posed {
    let n = model.n_parts();
    let rots = model.field.rotations();
    let ts: Vec<Vec3> = model.field.bases.iter().map(|b| b.motion.t).collect();
    let mut w = Vec::new();
    let mut assign = Vec::new();
    let x = match mode {
        MotionMode::Canonical => model.primitives.iter().map(|p| p.center).collect(),
        MotionMode::Hard => model
            .primitives
            .iter()
            .map(|p| {
                let j = hard_assign(&p.logits);
                assign.push(j);
                rots[j] * p.center + ts[j]
            })
            .collect(),
        MotionMode::Soft => {
            w = vec![0.0; model.primitives.len() * n];
            model
                .primitives
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let wi = &mut w[i * n..(i + 1) * n];
                    softmax_into(&p.logits, wi);
                    let mut y = Vec3::zeros();
                    for j in 0..n {
                        y += (rots[j] * p.center + ts[j]) * wi[j];
                    }
                    y
                })
                .collect()
        }
    };
    Posed {
        mode,
        x,
        w,
        assign,
        rots,
    }
}

impl Posed {
    /// Back-propagates `g = dL/dx'_i` into motion bases (and, in soft mode,
    /// into the logits through the blend weights).
    fn backward(&self, model: &SceneModel, i: usize, g: &Vec3, grads: &mut Grads) {
        let mu = &model.primitives[i].center;
        match self.mode {
            MotionMode::Canonical => {}
            MotionMode::Hard => {
                let j = self.assign[i];
                grads.rot[j] += g * mu.transpose();
                grads.t[j] += g;
            }
            MotionMode::Soft => {
                let n = model.n_parts();
                let wi = &self.w[i * n..(i + 1) * n];
                let outer = g * mu.transpose();
                let mut gw = vec![0.0; n];
                for j in 0..n {
                    grads.rot[j] += outer * wi[j];
                    grads.t[j] += g * wi[j];
                    let yj = self.rots[j] * mu + model.field.bases[j].motion.t;
                    gw[j] = g.dot(&yj);
                }
                softmax_backward(wi, &gw, &mut grads.logits[i * n..(i + 1) * n]);
            }
        }
    }
}

/// A primitive's projection into a frame.
struct Obs {
    u: f64,
    v: f64,
    z: f64,
    d: f64,
    dd_du: f64,
    dd_dv: f64,
    /// Rows `du/dx_c`, `dv/dx_c`.
    jac: [Vec3; 2],
}

fn observe(frame: &Frame, x: &Vec3, delta_vis: f64) -> Option<Obs> {
    let xc = frame.camera.to_camera(x);
    if !(xc.z > 1e-6) {
        return None;
    }
    let (u, v, jac) = frame.camera.project_camera_jac(&xc);
    if !frame.camera.in_image(&crate::geom::Vec2::new(u, v)) {
        return None;
    }
    let (d, dd_du, dd_dv) = sample_depth(&frame.depth, u, v)?;
    if (xc.z - d).abs() >= delta_vis {
        return None;
    }
    Some(Obs {
        u,
        v,
        z: xc.z,
        d,
        dd_du,
        dd_dv,
        jac,
    })
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-frame loss value with the number of primitives it averaged over.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrameLoss {
    pub value: f64,
    pub count: usize,
}

/// Color and depth residual over visible primitives:
/// `mean[(1 - λ_ssim)·‖c_i − I(u,v)‖₁ + λ_D·|z_i − D(u,v)|]`.
///
/// Gradients (scaled by `weight`) go to the motion bases, to the logits in
/// soft mode, and to the primitive colors when `color_grads` is set.
pub fn loss_rgbd_posed(
    model: &SceneModel,
    posed: &Posed,
    frame: &Frame,
    params: &LossParams,
    grads: Option<(&mut Grads, f64)>,
    color_grads: bool,
) -> FrameLoss {
    let wc = 1.0 - params.lambda_ssim;
    let mut terms: Vec<(usize, f64, Obs, [f64; 3], [f64; 3], [f64; 3])> = Vec::new();
    let mut total = 0.0;
    for (i, x) in posed.x.iter().enumerate() {
        let Some(o) = observe(frame, x, params.delta_vis) else {
            continue;
        };
        if params.label_gate {
            let part = match posed.mode {
                MotionMode::Hard => posed.assign[i],
                _ => hard_assign(&model.primitives[i].logits),
            };
            match nearest_label(&frame.labels, o.u, o.v) {
                Some(l) if l != 0 && l as usize != part + 1 => continue,
                _ => {}
            }
        }
        let Some((img, di_du, di_dv)) = sample_rgb(&frame.rgb, o.u, o.v) else {
            continue;
        };
        let c = &model.primitives[i].color;
        let mut l = params.lambda_d * (o.z - o.d).abs();
        for ch in 0..3 {
            l += wc * (c[ch] - img[ch]).abs();
        }
        total += l;
        terms.push((i, l, o, img, di_du, di_dv));
    }
    let count = terms.len();
    if count == 0 {
        return FrameLoss::default();
    }
    let value = total / count as f64;
    if let Some((grads, weight)) = grads {
        let s = weight / count as f64;
        let r_cam = frame.camera.rotation().transpose();
        for (i, _, o, img, di_du, di_dv) in terms {
            let c = &model.primitives[i].color;
            let mut gu = 0.0;
            let mut gv = 0.0;
            for ch in 0..3 {
                let sg = wc * sign(c[ch] - img[ch]);
                if color_grads {
                    grads.color[i][ch] += s * sg;
                }
                gu -= sg * di_du[ch];
                gv -= sg * di_dv[ch];
            }
            let sd = params.lambda_d * sign(o.z - o.d);
            gu -= sd * o.dd_du;
            gv -= sd * o.dd_dv;
            let g_cam = o.jac[0] * gu + o.jac[1] * gv + Vec3::new(0.0, 0.0, sd);
            let g = r_cam * g_cam * s;
            posed.backward(model, i, &g, grads);
        }
    }
    FrameLoss { value, count }
}

/// [`loss_rgbd_posed`] with the posing done internally.
pub fn loss_rgbd(
    model: &SceneModel,
    frame: &Frame,
    mode: MotionMode,
    params: &LossParams,
    grads: Option<(&mut Grads, f64)>,
) -> FrameLoss {
    let posed = pose(model, mode);
    loss_rgbd_posed(model, &posed, frame, params, grads, true)
}

/// Mean cross-entropy between each visible primitive's part weights and the
/// frame's label at its nearest pixel. Frame label `l ≥ 1` is part `l − 1`;
/// background and out-of-range labels are skipped. Gradients go to the
/// logits only.
pub fn loss_sem_posed(
    model: &SceneModel,
    posed: &Posed,
    frame: &Frame,
    params: &LossParams,
    grads: Option<(&mut Grads, f64)>,
) -> FrameLoss {
    let n = model.n_parts();
    let mut hits: Vec<(usize, usize)> = Vec::new();
    for (i, x) in posed.x.iter().enumerate() {
        let Some(o) = observe(frame, x, params.delta_vis) else {
            continue;
        };
        let Some(l) = nearest_label(&frame.labels, o.u, o.v) else {
            continue;
        };
        if l == 0 || l as usize > n {
            continue;
        }
        hits.push((i, l as usize - 1));
    }
    if hits.is_empty() {
        return FrameLoss::default();
    }
    let mut total = 0.0;
    let mut w = vec![0.0; n];
    let s = grads.as_ref().map(|(_, wt)| wt / hits.len() as f64).unwrap_or(0.0);
    let mut grads = grads.map(|(g, _)| g);
    for &(i, target) in &hits {
        let z = &model.primitives[i].logits;
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[target];
        if let Some(g) = grads.as_deref_mut() {
            softmax_into(z, &mut w);
            let row = &mut g.logits[i * n..(i + 1) * n];
            for k in 0..n {
                row[k] += s * (w[k] - if k == target { 1.0 } else { 0.0 });
            }
        }
    }
    FrameLoss {
        value: total / hits.len() as f64,
        count: hits.len(),
    }
}

/// [`loss_sem_posed`] with the posing done internally. Frames without any
/// label are rejected.
pub fn loss_sem(
    model: &SceneModel,
    frame: &Frame,
    mode: MotionMode,
    params: &LossParams,
    grads: Option<(&mut Grads, f64)>,
) -> Result<FrameLoss> {
    if frame.labels.data.iter().all(|l| *l == 0) {
        return Err(Error::InvalidInput(format!("frame {} carries no part labels", frame.view)));
    }
    let posed = pose(model, mode);
    Ok(loss_sem_posed(model, &posed, frame, params, grads))
}

/// Weight-sparsity regularizer `Σ_i Σ_{j∈KNN(i)} ‖w_i − w_j‖₂` over the
/// frozen neighbour index. The norm's gradient is taken as zero where the
/// two weight vectors coincide.
pub fn loss_sparsity(model: &SceneModel, grads: Option<(&mut Grads, f64)>) -> f64 {
    let n = model.n_parts();
    let w: Vec<Vec<f64>> = model
        .primitives
        .iter()
        .map(|p| crate::motion::softmax(&p.logits))
        .collect();
    let mut total = 0.0;
    let mut gw = grads.as_ref().map(|_| vec![0.0; w.len() * n]);
    for (i, nb) in model.knn.iter().enumerate() {
        for &j in nb {
            let mut sq = 0.0;
            for k in 0..n {
                let d = w[i][k] - w[j][k];
                sq += d * d;
            }
            let norm = sq.sqrt();
            total += norm;
            if let Some(gw) = gw.as_mut() {
                if norm > 1e-12 {
                    for k in 0..n {
                        let d = (w[i][k] - w[j][k]) / norm;
                        gw[i * n + k] += d;
                        gw[j * n + k] -= d;
                    }
                }
            }
        }
    }
    if let (Some((g, weight)), Some(gw)) = (grads, gw) {
        let mut tmp = vec![0.0; n];
        for i in 0..w.len() {
            tmp.iter_mut().for_each(|v| *v = 0.0);
            let gi: Vec<f64> = gw[i * n..(i + 1) * n].iter().map(|v| v * weight).collect();
            softmax_backward(&w[i], &gi, &mut tmp);
            for k in 0..n {
                g.logits[i * n + k] += tmp[k];
            }
        }
    }
    total
}

/// A filtered correspondence bound to its nearest canonical primitive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajMatch {
    /// Point in the canonical state.
    pub start: Vec3,
    /// Observed point in the other state.
    pub end: Vec3,
    pub primitive: usize,
}

/// Binds valid matches (oriented canonical → other state) to their nearest
/// canonical primitive.
pub fn bind_matches(model: &SceneModel, matches: &[MatchPair]) -> Vec<TrajMatch> {
    let centers: Vec<Vec3> = model.primitives.iter().map(|p| p.center).collect();
    if centers.is_empty() {
        return Vec::new();
    }
    let tree = KdTree::new(&centers);
    matches
        .iter()
        .filter(|m| m.valid)
        .filter_map(|m| {
            tree.nearest(&m.p3d0).map(|(i, _)| TrajMatch {
                start: m.p3d0,
                end: m.p3d1,
                primitive: i,
            })
        })
        .collect()
}

/// Trajectory term `mean ‖R_{j*} p̃ + T_{j*} − q̃‖` where `j*` is the hard
/// assignment of the match's primitive. Returns 0 for an empty match set.
pub fn loss_traj(model: &SceneModel, matches: &[TrajMatch], grads: Option<(&mut Grads, f64)>) -> f64 {
    if matches.is_empty() {
        log::warn!("trajectory loss has no valid matches");
        return 0.0;
    }
    let rots = model.field.rotations();
    let s = grads.as_ref().map(|(_, w)| w / matches.len() as f64).unwrap_or(0.0);
    let mut grads = grads.map(|(g, _)| g);
    let mut total = 0.0;
    for m in matches {
        let j = hard_assign(&model.primitives[m.primitive].logits);
        let r = rots[j] * m.start + model.field.bases[j].motion.t - m.end;
        let norm = r.norm();
        total += norm;
        if let Some(g) = grads.as_deref_mut() {
            if norm > 1e-15 {
                let d = r * (s / norm);
                g.rot[j] += d * m.start.transpose();
                g.t[j] += d;
            }
        }
    }
    total / matches.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{quat_identity, RigidMotion};
    use crate::motion::init_weights_scaled;

    fn prim(center: Vec3, logits: Vec<f64>) -> Primitive {
        Primitive {
            center,
            rot: quat_identity(),
            scale: Vec3::repeat(0.01),
            opacity: 0.9,
            color: Vec3::repeat(0.5),
            logits,
        }
    }

    #[test]
    fn sparsity_of_two_opposite_one_hot_neighbours() {
        let big = 800.0;
        let a = prim(Vec3::zeros(), vec![big, 0.0]);
        let b = prim(Vec3::x(), vec![0.0, big]);
        let model = SceneModel::new(vec![a, b], MotionField::new(2).unwrap(), 1).unwrap();
        let l = loss_sparsity(&model, None);
        assert!((l - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sparsity_is_zero_for_identical_logits() {
        let ps: Vec<_> = (0..6)
            .map(|i| prim(Vec3::new(i as f64, 0.0, 0.0), vec![0.3, -1.0, 2.0]))
            .collect();
        let model = SceneModel::new(ps, MotionField::new(3).unwrap(), 2).unwrap();
        let mut g = Grads::for_model(&model);
        assert_eq!(loss_sparsity(&model, Some((&mut g, 1.0))), 0.0);
        assert!(g.logits.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn traj_is_zero_at_ground_truth() {
        let m = RigidMotion::from_axis_angle(&Vec3::y(), 0.4, Vec3::new(0.1, 0.0, -0.2));
        let ps: Vec<_> = (0..10)
            .map(|i| prim(Vec3::new(i as f64 * 0.1, 0.2, 0.0), init_weights_scaled(1, 2, 5.0).unwrap()))
            .collect();
        let mut field = MotionField::new(2).unwrap();
        field.bases[1].motion = m;
        let model = SceneModel::new(ps.clone(), field, 3).unwrap();
        let matches: Vec<_> = ps
            .iter()
            .enumerate()
            .map(|(i, p)| TrajMatch {
                start: p.center,
                end: m.apply(&p.center),
                primitive: i,
            })
            .collect();
        assert!(loss_traj(&model, &matches, None) < 1e-9);
    }

    #[test]
    fn traj_chord_length_for_unmodelled_rotation() {
        // door rotated 30 degrees about a hinge; a point 0.5 m from the hinge
        // travels along a chord of 2 r sin(15 deg)
        let hinge = Vec3::new(-0.3, 0.0, 0.2);
        let axis = Vec3::y();
        let theta = 30f64.to_radians();
        let rot = RigidMotion::from_axis_angle(&axis, theta, Vec3::zeros());
        let gt = RigidMotion {
            q: rot.q,
            t: hinge - rot.rotation() * hinge,
        };
        let start = hinge + Vec3::new(0.5, 0.1, 0.0);
        let end = gt.apply(&start);
        let model = SceneModel::new(
            vec![prim(start, init_weights_scaled(1, 2, 5.0).unwrap())],
            MotionField::new(2).unwrap(),
            1,
        )
        .unwrap();
        let m = [TrajMatch {
            start,
            end,
            primitive: 0,
        }];
        let l = loss_traj(&model, &m, None);
        let oracle = (end - start).norm();
        assert!((l - 2.0 * 0.5 * 15f64.to_radians().sin()).abs() < 1e-12);
        assert!((l - oracle).abs() < 1e-12);
        assert!((l - 0.2588).abs() < 1e-4);
    }

    #[test]
    fn sem_floor_for_one_hot_logits() {
        // closed form: CE of softmax with the correct logit `gap` above the rest
        for (gap, n) in [(1.0, 2usize), (10.0, 2), (10.0, 5)] {
            let ce = ((n - 1) as f64 * (-gap as f64).exp() + 1.0).ln();
            let logits = init_weights_scaled(1, n, gap).unwrap();
            let z = &logits;
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            assert!((lse - z[1] - ce).abs() < 1e-12);
            if gap == 1.0 {
                assert!(ce < 0.32);
            } else {
                assert!(ce < 1e-3);
            }
        }
    }
}
