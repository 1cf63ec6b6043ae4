//! Staged optimizer: warm-up, soft blending, hard assignment.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geom::{quat_identity, rotmat_grad_to_quat, Primitive, Quat, Vec2, Vec3};
use crate::grid::LabelMap;
use crate::loss::{
    loss_rgbd_posed, loss_sem_posed, loss_sparsity, loss_traj, pose, Grads, LossParams, MotionMode, SceneModel,
    TrajMatch,
};
use crate::motion::{hard_assign, init_weights_scaled, MotionField};
use crate::spatial::KdTree;

/// Every tunable of initialization and training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iters_warmup: usize,
    pub iters_soft: usize,
    pub iters_hard: usize,
    /// Soft step at which near-static rotations are locked as prismatic.
    pub prismatic_check_step: usize,
    pub eps_deg: f64,
    pub lambda_ssim: f64,
    pub lambda_d: f64,
    pub lambda_sem: f64,
    pub lambda_sparsity: f64,
    pub lambda_traj: f64,
    pub knn_k: usize,
    pub lr_motion: f64,
    pub lr_logits: f64,
    pub lr_color: f64,
    /// Motion learning rate multiplier reached at the end of the hard stage
    /// (exponential decay from 1).
    pub hard_lr_final: f64,
    /// Whether the hard stage keeps refining logits.
    pub hard_update_logits: bool,
    /// Position schedule (geometry stays frozen; kept for reference runs).
    pub pos_lr_max: f64,
    pub pos_lr_min: f64,
    pub pos_lr_init: usize,
    pub pos_lr_end: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub n_points: usize,
    /// Height of the one-hot initial logits (softmax temperature 1/x).
    pub init_logit_scale: f64,
    pub delta_vis: f64,
    /// Visibility band during the soft stage, wide enough for parts that
    /// start far from their observed pose.
    pub delta_vis_soft: f64,
    /// Restrict the photometric term to primitives whose part matches the
    /// observed mask label.
    pub label_gate: bool,
    /// Frames drawn per step, split evenly between the two states after
    /// warm-up.
    pub frames_per_step: usize,
    /// Divide the sparsity sum by the number of neighbour pairs.
    pub normalize_sparsity: bool,
    pub locality_r: f64,
    pub locality_r_prime: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters_warmup: 300,
            iters_soft: 400,
            iters_hard: 600,
            prismatic_check_step: 200,
            eps_deg: 15.0,
            lambda_ssim: 0.2,
            lambda_d: 0.5,
            lambda_sem: 0.5,
            lambda_sparsity: 1.0,
            lambda_traj: 1.0,
            knn_k: 8,
            lr_motion: 5e-3,
            lr_logits: 1e-2,
            lr_color: 1e-2,
            hard_lr_final: 0.01,
            hard_update_logits: true,
            pos_lr_max: 1.6e-4,
            pos_lr_min: 1e-8,
            pos_lr_init: 6000,
            pos_lr_end: 10000,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            n_points: 5000,
            init_logit_scale: 1.0,
            delta_vis: 0.05,
            delta_vis_soft: 0.2,
            label_gate: true,
            frames_per_step: 4,
            normalize_sparsity: true,
            locality_r: crate::corr::DEFAULT_LOCALITY_RADIUS,
            locality_r_prime: crate::corr::DEFAULT_LOCALITY_TOLERANCE,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            self.lambda_ssim,
            self.lambda_d,
            self.lambda_sem,
            self.lambda_sparsity,
            self.lambda_traj,
        ];
        if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidConfig("loss weights must be finite and non-negative".into()));
        }
        if self.lambda_ssim > 1.0 {
            return Err(Error::InvalidConfig("lambda_ssim must not exceed 1".into()));
        }
        if self.prismatic_check_step > self.iters_soft {
            return Err(Error::InvalidConfig(format!(
                "prismatic_check_step {} exceeds iters_soft {}",
                self.prismatic_check_step, self.iters_soft
            )));
        }
        if self.pos_lr_end <= self.pos_lr_init {
            return Err(Error::InvalidConfig("pos_lr_end must exceed pos_lr_init".into()));
        }
        let positive = [
            self.lr_motion,
            self.lr_logits,
            self.lr_color,
            self.hard_lr_final,
            self.delta_vis,
            self.delta_vis_soft,
            self.init_logit_scale,
            self.locality_r,
            self.locality_r_prime,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig("learning rates, radii and thresholds must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        if self.n_points == 0 || self.knn_k == 0 || self.frames_per_step == 0 {
            return Err(Error::InvalidConfig("n_points, knn_k and frames_per_step must be positive".into()));
        }
        Ok(())
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            lambda_ssim: self.lambda_ssim,
            lambda_d: self.lambda_d,
            delta_vis: self.delta_vis,
            label_gate: self.label_gate,
        }
    }

    /// Parses a flat `key = value` file (TOML syntax). Unknown keys are
    /// rejected; missing keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Position learning rate: `max_lr` until `init`, exponential decay to
/// `min_lr` at `end`, `min_lr` afterwards.
pub fn lr_position(step: usize, cfg: &TrainConfig) -> Result<f64> {
    let (init, end) = (cfg.pos_lr_init, cfg.pos_lr_end);
    if end <= init {
        return Err(Error::InvalidConfig(format!("position schedule end {end} <= init {init}")));
    }
    if step <= init {
        return Ok(cfg.pos_lr_max);
    }
    if step >= end {
        return Ok(cfg.pos_lr_min);
    }
    let t = (step - init) as f64 / (end - init) as f64;
    Ok(cfg.pos_lr_max * (cfg.pos_lr_min / cfg.pos_lr_max).powf(t))
}

/// First-order adaptive-moment optimizer over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    b1: f64,
    b2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, b1: f64, b2: f64, eps: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            b1,
            b2,
            eps,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g;
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Where a primitive was sampled from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub frame: usize,
    pub x: u32,
    pub y: u32,
}

/// State whose movable parts (labels ≥ 2) cover more pixels; ties pick 0.
pub fn select_canonical(labels0: &[LabelMap], labels1: &[LabelMap]) -> u8 {
    let area = |ls: &[LabelMap]| -> usize { ls.iter().map(|l| l.data.iter().filter(|v| **v >= 2).count()).sum() };
    if area(labels1) > area(labels0) {
        1
    } else {
        0
    }
}

/// Samples `cfg.n_points` labeled pixels of the canonical frames and lifts
/// them to primitives: centers by backprojection, colors from the image,
/// one-hot logits from the label (`label − 1` is the part index), isotropic
/// scale from the mean distance to the three nearest samples, opacity 0.9.
/// `labels[i]` holds the global labels of `frames[i]`.
pub fn init_model(
    frames: &[Frame],
    labels: &[LabelMap],
    n_parts: usize,
    cfg: &TrainConfig,
) -> Result<(SceneModel, Vec<Source>)> {
    if frames.len() != labels.len() {
        return Err(Error::InvalidInput("one label map per frame required".into()));
    }
    let mut cand: Vec<Source> = Vec::new();
    for (fi, (f, l)) in frames.iter().zip(labels).enumerate() {
        for y in 0..f.depth.height {
            for x in 0..f.depth.width {
                let lab = *l.get(x, y) as usize;
                if lab >= 1 && lab <= n_parts && *f.depth.get(x, y) > 0.0 {
                    cand.push(Source {
                        frame: fi,
                        x: x as u32,
                        y: y as u32,
                    });
                }
            }
        }
    }
    if cand.is_empty() {
        return Err(Error::InvalidInput("no labeled pixels with depth in the canonical frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let picked: Vec<Source> = if cand.len() >= cfg.n_points {
        let mut idx = sample(&mut rng, cand.len(), cfg.n_points).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| cand[i]).collect()
    } else {
        log::warn!(
            "only {} labeled pixels for {} primitives; sampling with replacement",
            cand.len(),
            cfg.n_points
        );
        (0..cfg.n_points).map(|_| cand[rng.random_range(0..cand.len())]).collect()
    };
    let centers: Vec<Vec3> = picked
        .iter()
        .map(|s| {
            let f = &frames[s.frame];
            let d = *f.depth.get(s.x as usize, s.y as usize) as f64;
            f.camera.backproject(&Vec2::new(s.x as f64, s.y as f64), d)
        })
        .collect::<Result<_>>()?;
    let tree = KdTree::new(&centers);
    let mut prims = Vec::with_capacity(picked.len());
    for (s, c) in picked.iter().zip(&centers) {
        let f = &frames[s.frame];
        let spacing: Vec<f64> = tree
            .knn(c, 4)
            .into_iter()
            .map(|(_, d2)| d2.sqrt())
            .filter(|d| *d > 0.0)
            .collect();
        let scale = if spacing.is_empty() {
            1e-3
        } else {
            (spacing.iter().sum::<f64>() / spacing.len() as f64).max(1e-4)
        };
        let rgb = f.rgb.get(s.x as usize, s.y as usize);
        let label = *labels[s.frame].get(s.x as usize, s.y as usize) as usize;
        prims.push(Primitive {
            center: *c,
            rot: quat_identity(),
            scale: Vec3::repeat(scale),
            opacity: 0.9,
            color: Vec3::new(rgb[0] as f64, rgb[1] as f64, rgb[2] as f64),
            logits: init_weights_scaled(label - 1, n_parts, cfg.init_logit_scale)?,
        });
    }
    let model = SceneModel::new(prims, MotionField::new(n_parts)?, cfg.knn_k)?;
    Ok((model, picked))
}

/// Reassigns a random `fraction` of primitives to a different, uniformly
/// drawn part (one-hot logits at `scale`). Returns the corrupted indices.
pub fn corrupt_logits(model: &mut SceneModel, fraction: f64, scale: f64, seed: u64) -> Vec<usize> {
    let n = model.n_parts();
    let np = model.primitives.len();
    let k = ((fraction * np as f64).round() as usize).min(np);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut idx = sample(&mut rng, np, k).into_vec();
    idx.sort_unstable();
    for &i in &idx {
        let cur = hard_assign(&model.primitives[i].logits);
        let mut wrong = rng.random_range(0..n - 1);
        if wrong >= cur {
            wrong += 1;
        }
        model.primitives[i].logits = init_weights_scaled(wrong, n, scale).expect("part index in range");
    }
    idx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Warmup,
    Soft,
    Hard,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Warmup => "warmup",
            Stage::Soft => "soft",
            Stage::Hard => "hard",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub stage: Stage,
    pub rgbd: f64,
    pub sem: f64,
    pub sparsity: f64,
    pub traj: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// Bases locked as prismatic by the soft-stage check.
    pub locked: Vec<usize>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
        w.write_record(["step", "stage", "rgbd", "sem", "sparsity", "traj", "total"])
            .map_err(|e| Error::format(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.stage.name().to_string(),
                format!("{:.9e}", r.rgbd),
                format!("{:.9e}", r.sem),
                format!("{:.9e}", r.sparsity),
                format!("{:.9e}", r.traj),
                format!("{:.9e}", r.total),
            ])
            .map_err(|e| Error::format(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Frames of the two states as seen by the trainer.
pub struct TrainData<'a> {
    /// Frames in the canonical state, with global labels.
    pub canonical: &'a [Frame],
    /// Frames in the other state, with labels mapped onto the canonical
    /// state's label space.
    pub other: &'a [Frame],
    /// Filtered matches oriented canonical → other.
    pub matches: &'a [TrajMatch],
}

/// Motion parameters as optimized: per basis a quaternion and a translation
/// offset about a fixed pivot, `T = u + c − R c`.
struct MotionParams {
    q: Vec<f64>,
    u: Vec<f64>,
    pivot: Vec<Vec3>,
}

impl MotionParams {
    fn new(model: &SceneModel) -> Self {
        let n = model.n_parts();
        let mut sum = vec![Vec3::zeros(); n];
        let mut count = vec![0usize; n];
        for p in &model.primitives {
            let j = hard_assign(&p.logits);
            sum[j] += p.center;
            count[j] += 1;
        }
        let pivot: Vec<Vec3> = (0..n)
            .map(|j| if count[j] > 0 { sum[j] / count[j] as f64 } else { Vec3::zeros() })
            .collect();
        let mut q = Vec::with_capacity(4 * n);
        let mut u = Vec::with_capacity(3 * n);
        for (b, c) in model.field.bases.iter().zip(&pivot) {
            let m = &b.motion;
            q.extend([m.q.w, m.q.i, m.q.j, m.q.k]);
            let off = m.t - c + m.rotation() * c;
            u.extend([off.x, off.y, off.z]);
        }
        MotionParams { q, u, pivot }
    }

    /// Writes the parameters back into the field (basis 0 untouched).
    fn apply(&mut self, field: &mut MotionField) {
        for j in 1..field.n_parts() {
            let b = &mut field.bases[j];
            let qs = &mut self.q[4 * j..4 * j + 4];
            if b.prismatic_locked {
                qs.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            } else {
                let n = qs.iter().map(|v| v * v).sum::<f64>().sqrt();
                qs.iter_mut().for_each(|v| *v /= n);
            }
            b.motion.q = Quat::new(qs[0], qs[1], qs[2], qs[3]);
            let c = self.pivot[j];
            let u = Vec3::new(self.u[3 * j], self.u[3 * j + 1], self.u[3 * j + 2]);
            b.motion.t = u + c - b.motion.rotation() * c;
        }
    }

    /// Chain rule from `(dL/dR, dL/dT)` to `(dL/dq, dL/du)`; basis 0 and
    /// locked rotations receive zero.
    fn grads(&self, field: &MotionField, g: &Grads, gq: &mut [f64], gu: &mut [f64]) {
        gq.iter_mut().for_each(|v| *v = 0.0);
        gu.iter_mut().for_each(|v| *v = 0.0);
        for j in 1..field.n_parts() {
            let b = &field.bases[j];
            let gt = g.t[j];
            gu[3 * j..3 * j + 3].copy_from_slice(gt.as_slice());
            if !b.prismatic_locked {
                let gr = g.rot[j] - gt * self.pivot[j].transpose();
                gq[4 * j..4 * j + 4].copy_from_slice(&rotmat_grad_to_quat(&b.motion.q, &gr));
            }
        }
    }
}

/// Runs the three stages on `model` in place.
pub fn train(model: &mut SceneModel, data: &TrainData, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if data.canonical.is_empty() {
        return Err(Error::InvalidInput("no canonical-state frames".into()));
    }
    let n = model.n_parts();
    let np = model.primitives.len();
    let base_params = cfg.loss_params();
    let soft_params = LossParams {
        delta_vis: cfg.delta_vis_soft,
        ..base_params
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut grads = Grads::for_model(model);
    let mut motion = MotionParams::new(model);
    let mut gq = vec![0.0; 4 * n];
    let mut gu = vec![0.0; 3 * n];
    let mut adam_q = Adam::new(4 * n, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut adam_u = Adam::new(3 * n, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut adam_logits = Adam::new(np * n, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut adam_color = Adam::new(np * 3, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut log = TrainLog::default();
    let pairs = model.knn.iter().map(|k| k.len()).sum::<usize>().max(1);
    let sparsity_scale = if cfg.normalize_sparsity { 1.0 / pairs as f64 } else { 1.0 };

    let stages = [
        (Stage::Warmup, cfg.iters_warmup),
        (Stage::Soft, cfg.iters_soft),
        (Stage::Hard, cfg.iters_hard),
    ];
    let mut global = 0usize;
    for (stage, iters) in stages {
        let params = if stage == Stage::Soft { soft_params } else { base_params };
        for s in 0..iters {
            if stage == Stage::Soft && s == cfg.prismatic_check_step {
                lock_prismatic(model, &mut motion, cfg, &mut log);
            }
            grads.clear();
            let moving = match stage {
                Stage::Warmup => None,
                Stage::Soft => Some(MotionMode::Soft),
                Stage::Hard => Some(MotionMode::Hard),
            };
            // frame batch: (frame, mode)
            let mut batch: Vec<(&Frame, MotionMode)> = Vec::new();
            let n_other = if moving.is_some() && !data.other.is_empty() {
                cfg.frames_per_step / 2
            } else {
                0
            };
            let n_canon = (cfg.frames_per_step - n_other).max(1);
            for _ in 0..n_canon {
                batch.push((&data.canonical[rng.random_range(0..data.canonical.len())], MotionMode::Canonical));
            }
            if let Some(mode) = moving {
                for _ in 0..n_other {
                    batch.push((&data.other[rng.random_range(0..data.other.len())], mode));
                }
            }
            let canon_pose = pose(model, MotionMode::Canonical);
            let moved_pose = moving.map(|m| pose(model, m));
            let wf = 1.0 / batch.len() as f64;
            let mut rgbd = 0.0;
            let mut sem = 0.0;
            for (f, mode) in &batch {
                let posed = if *mode == MotionMode::Canonical {
                    &canon_pose
                } else {
                    moved_pose.as_ref().expect("moving pose")
                };
                rgbd += wf * loss_rgbd_posed(model, posed, f, &params, Some((&mut grads, wf)), true).value;
                if cfg.lambda_sem > 0.0 {
                    sem += wf * loss_sem_posed(model, posed, f, &params, Some((&mut grads, wf * cfg.lambda_sem))).value;
                }
            }
            let mut sparsity = 0.0;
            let mut traj = 0.0;
            match stage {
                Stage::Warmup => {}
                Stage::Soft => {
                    if cfg.lambda_sparsity > 0.0 {
                        let w = cfg.lambda_sparsity * sparsity_scale;
                        sparsity = sparsity_scale * loss_sparsity(model, Some((&mut grads, w)));
                    }
                }
                Stage::Hard => {
                    if cfg.lambda_traj > 0.0 && !data.matches.is_empty() {
                        traj = loss_traj(model, data.matches, Some((&mut grads, cfg.lambda_traj)));
                    }
                }
            }
            let total = rgbd + cfg.lambda_sem * sem + cfg.lambda_sparsity * sparsity + cfg.lambda_traj * traj;
            if !total.is_finite() {
                return Err(Error::Diverged {
                    stage: stage.name().to_string(),
                    step: s,
                    detail: format!("loss {total} (rgbd {rgbd}, sem {sem}, sparsity {sparsity}, traj {traj})"),
                });
            }
            log.rows.push(LogRow {
                step: global,
                stage,
                rgbd,
                sem,
                sparsity,
                traj,
                total,
            });
            global += 1;

            // colors
            let mut colors: Vec<f64> = model.primitives.iter().flat_map(|p| p.color.iter().copied()).collect();
            let gc: Vec<f64> = grads.color.iter().flat_map(|g| g.iter().copied()).collect();
            adam_color.step(&mut colors, &gc, cfg.lr_color);
            for (p, c) in model.primitives.iter_mut().zip(colors.chunks(3)) {
                p.color = Vec3::new(c[0].clamp(0.0, 1.0), c[1].clamp(0.0, 1.0), c[2].clamp(0.0, 1.0));
            }
            // logits
            if stage != Stage::Hard || cfg.hard_update_logits {
                let mut logits: Vec<f64> = model.primitives.iter().flat_map(|p| p.logits.iter().copied()).collect();
                adam_logits.step(&mut logits, &grads.logits, cfg.lr_logits);
                for (p, l) in model.primitives.iter_mut().zip(logits.chunks(n)) {
                    p.logits.copy_from_slice(l);
                }
            }
            // motion
            if stage != Stage::Warmup {
                let lr = if stage == Stage::Hard && iters > 0 {
                    cfg.lr_motion * cfg.hard_lr_final.powf(s as f64 / iters as f64)
                } else {
                    cfg.lr_motion
                };
                motion.grads(&model.field, &grads, &mut gq, &mut gu);
                adam_q.step(&mut motion.q, &gq, lr);
                adam_u.step(&mut motion.u, &gu, lr);
                motion.apply(&mut model.field);
                if log::log_enabled!(log::Level::Debug) && s % 25 == 0 {
                    let a: Vec<String> = model
                        .field
                        .bases
                        .iter()
                        .map(|b| format!("{:.1}", b.motion.angle().to_degrees()))
                        .collect();
                    log::debug!("{} step {s}: basis angles [{}]", stage.name(), a.join(" "));
                }
            }
        }
        if stage == Stage::Soft && cfg.prismatic_check_step == iters {
            lock_prismatic(model, &mut motion, cfg, &mut log);
        }
    }
    Ok(log)
}

fn lock_prismatic(model: &mut SceneModel, motion: &mut MotionParams, cfg: &TrainConfig, log: &mut TrainLog) {
    let locked = model.field.detect_prismatic(cfg.eps_deg);
    for &j in &locked {
        // with R = I the offset equals the translation
        let t = model.field.bases[j].motion.t;
        motion.u[3 * j..3 * j + 3].copy_from_slice(t.as_slice());
    }
    motion.apply(&mut model.field);
    log::info!("prismatic check locked bases {locked:?}");
    log.locked.extend(locked);
}

/// Writes rows as `step,stage,...` CSV to any writer (used for stdout).
pub fn write_log<W: Write>(log: &TrainLog, mut w: W) -> std::io::Result<()> {
    writeln!(w, "step,stage,rgbd,sem,sparsity,traj,total")?;
    for r in &log.rows {
        writeln!(
            w,
            "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            r.step,
            r.stage.name(),
            r.rgbd,
            r.sem,
            r.sparsity,
            r.traj,
            r.total
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_schedule_endpoints_and_midpoint() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.pos_lr_max, 1.6e-4);
        assert_eq!(cfg.pos_lr_min, 1e-8);
        assert_eq!((cfg.pos_lr_init, cfg.pos_lr_end), (6000, 10000));
        assert_eq!(lr_position(0, &cfg).unwrap(), 1.6e-4);
        assert_eq!(lr_position(6000, &cfg).unwrap(), 1.6e-4);
        let mid = lr_position(8000, &cfg).unwrap();
        let oracle = (1.6e-4f64 * 1e-8).sqrt();
        assert!((mid - oracle).abs() < 1e-18);
        assert!((mid - 1.2649110640673517e-6).abs() < 1e-15);
        assert_eq!(lr_position(10000, &cfg).unwrap(), 1e-8);
        assert_eq!(lr_position(20000, &cfg).unwrap(), 1e-8);
    }

    #[test]
    fn position_schedule_rejects_empty_window() {
        let cfg = TrainConfig {
            pos_lr_end: 6000,
            ..TrainConfig::default()
        };
        assert!(matches!(lr_position(1, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn default_loss_weights() {
        let c = TrainConfig::default();
        assert_eq!(
            [c.lambda_ssim, c.lambda_d, c.lambda_sem, c.lambda_sparsity, c.lambda_traj],
            [0.2, 0.5, 0.5, 1.0, 1.0]
        );
        assert_eq!(c.eps_deg, 15.0);
        assert_eq!(c.n_points, 5000);
        c.validate().unwrap();
    }

    #[test]
    fn corruption_changes_exactly_the_chosen_assignments() {
        use crate::geom::{quat_identity, Primitive};
        let prims: Vec<Primitive> = (0..200)
            .map(|i| Primitive {
                center: Vec3::new(i as f64 * 0.01, 0.0, 0.0),
                rot: quat_identity(),
                scale: Vec3::repeat(0.01),
                opacity: 0.9,
                color: Vec3::zeros(),
                logits: init_weights_scaled(i % 3, 3, 1.0).unwrap(),
            })
            .collect();
        let mut model = SceneModel::new(prims, MotionField::new(3).unwrap(), 4).unwrap();
        let before = model.assignments();
        let idx = corrupt_logits(&mut model, 0.1, 1.0, 9);
        assert_eq!(idx.len(), 20);
        let after = model.assignments();
        for i in 0..200 {
            assert_eq!(before[i] != after[i], idx.contains(&i));
        }
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let g = vec![2.0 * x[0], 8.0 * x[1]];
            opt.step(&mut x, &g, 0.01);
        }
        assert!(x[0].abs() < 1e-2 && x[1].abs() < 1e-2);
    }

    #[test]
    fn config_parses_flat_key_values() {
        let cfg = TrainConfig::from_toml_str("iters_soft = 10\nprismatic_check_step = 5\nlambda_traj = 0.0\n").unwrap();
        assert_eq!(cfg.iters_soft, 10);
        assert_eq!(cfg.lambda_traj, 0.0);
        assert_eq!(cfg.iters_hard, TrainConfig::default().iters_hard);
        assert!(TrainConfig::from_toml_str("no_such_key = 1").is_err());
        assert!(TrainConfig::from_toml_str("prismatic_check_step = 900").is_err());
        let round = TrainConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(round, cfg);
    }
}
