//! Joint and geometry metrics, evaluation reports and their aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{decompose_joint, JointKind, JointParams, RigidMotion, Vec3, DEFAULT_PRISMATIC_THRESHOLD_DEG};
use crate::hungarian::min_cost_assignment;
use crate::loss::SceneModel;
use crate::motion::hard_assign;
use crate::pipeline::Checkpoint;
use crate::spatial::KdTree;
use crate::synth::{distance_to_cuboid, part_motions, sample_surface, GtJoints, SceneSpec};

/// GT surface samples per evaluated point set.
pub const CD_SAMPLES: usize = 10_000;

/// Angle between two axis directions in degrees, ignoring their sign.
pub fn metric_axis_angle(est: &JointParams, gt: &JointParams) -> f64 {
    let c = est.axis_dir.normalize().dot(&gt.axis_dir.normalize()).abs().min(1.0);
    c.acos().to_degrees()
}

/// Minimum distance between two axis lines in meters; `None` unless both
/// joints are revolute.
pub fn metric_axis_pos(est: &JointParams, gt: &JointParams) -> Option<f64> {
    if est.kind != JointKind::Revolute || gt.kind != JointKind::Revolute {
        return None;
    }
    let (p, q) = (est.axis_origin?, gt.axis_origin?);
    Some(line_distance(&p, &est.axis_dir.normalize(), &q, &gt.axis_dir.normalize()))
}

fn line_distance(p: &Vec3, d: &Vec3, q: &Vec3, e: &Vec3) -> f64 {
    let w = q - p;
    let n = d.cross(e);
    let nn = n.norm();
    if nn < 1e-9 {
        // parallel: point-to-line
        (w - d * w.dot(d)).norm()
    } else {
        (w.dot(&n) / nn).abs()
    }
}

/// Part motion error in degrees (revolute) or meters (prismatic).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionError {
    Value(f64),
    /// Estimated and true joint types differ.
    TypeMismatch,
}

impl MotionError {
    pub fn value(&self) -> Option<f64> {
        match self {
            MotionError::Value(v) => Some(*v),
            MotionError::TypeMismatch => None,
        }
    }
}

pub fn metric_part_motion(est: &JointParams, gt: &JointParams) -> MotionError {
    if est.kind != gt.kind {
        return MotionError::TypeMismatch;
    }
    let d = (est.magnitude - gt.magnitude).abs();
    MotionError::Value(match gt.kind {
        JointKind::Revolute => d.to_degrees(),
        JointKind::Prismatic => d,
    })
}

/// How chamfer distances are reported.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdConvention {
    /// Mean of squared nearest-neighbour distances in m², times 1000.
    #[default]
    SquaredX1000,
    /// Mean of nearest-neighbour distances in millimeters.
    RootMm,
}

/// Symmetric chamfer distance: the average of the two directed means.
/// Empty input gives infinity.
pub fn chamfer(a: &[Vec3], b: &[Vec3], conv: CdConvention) -> f64 {
    if a.is_empty() || b.is_empty() {
        log::warn!("chamfer distance of an empty point set");
        return f64::INFINITY;
    }
    let directed = |x: &[Vec3], y: &[Vec3]| -> f64 {
        let tree = KdTree::new(y);
        let sum: f64 = x
            .iter()
            .map(|p| {
                let d2 = tree.nearest(p).map(|(_, d2)| d2).unwrap_or(f64::INFINITY);
                match conv {
                    CdConvention::SquaredX1000 => d2,
                    CdConvention::RootMm => d2.sqrt(),
                }
            })
            .sum();
        sum / x.len() as f64
    };
    let m = 0.5 * (directed(a, b) + directed(b, a));
    m * 1000.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut table: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut ra: BTreeMap<u32, u64> = BTreeMap::new();
    let mut rb: BTreeMap<u32, u64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((*x, *y)).or_default() += 1;
        *ra.entry(*x).or_default() += 1;
        *rb.entry(*y).or_default() += 1;
    }
    let c2 = |k: u64| (k * k.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&k| c2(k)).sum();
    let sa: f64 = ra.values().map(|&k| c2(k)).sum();
    let sb: f64 = rb.values().map(|&k| c2(k)).sum();
    let total = c2(n as u64);
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Metrics of one ground-truth joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointEval {
    pub gt_part: usize,
    pub name: String,
    /// Matched estimated part (index into the motion field).
    pub est_part: Option<usize>,
    pub gt: JointParams,
    pub est: Option<JointParams>,
    pub type_correct: bool,
    pub axis_angle_err: Option<f64>,
    pub axis_pos_err: Option<f64>,
    /// `axis_pos_err` in units of 0.1 m.
    pub axis_pos_err_01: Option<f64>,
    pub part_motion_err: Option<MotionError>,
}

/// Evaluation of one trained scene, at the canonical state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointReport {
    pub scene: String,
    /// Total parts including the static base.
    pub n_parts: usize,
    pub seed: u64,
    pub config_hash: String,
    pub eval_state: u8,
    pub joints: Vec<JointEval>,
    pub cd_convention: CdConvention,
    pub cd_s: f64,
    /// Per movable GT part, in GT order.
    pub cd_m: Vec<f64>,
    pub cd_w: f64,
    /// Fraction of primitives whose hard assignment maps to a different GT
    /// part than the surface they lie on.
    pub mislabel_rate: f64,
    /// GT part each estimated part was matched to.
    pub part_map: Vec<Option<usize>>,
}

/// GT part of each primitive: the cuboid nearest to its center.
pub fn primitive_gt_parts(spec: &SceneSpec, motions: &[RigidMotion], model: &SceneModel) -> Vec<usize> {
    model
        .primitives
        .iter()
        .map(|p| {
            (0..spec.n_parts())
                .map(|k| (k, distance_to_cuboid(spec.shape(k), &motions[k], &p.center)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k)
                .unwrap_or(0)
        })
        .collect()
}

/// Maps each estimated part to the GT part holding most of its primitives;
/// when several claim one GT part, the largest keeps it.
pub fn match_parts_by_labels(assign: &[usize], gt: &[usize], n_est: usize, n_gt: usize) -> Vec<Option<usize>> {
    let mut votes = vec![vec![0usize; n_gt]; n_est];
    for (a, g) in assign.iter().zip(gt) {
        votes[*a][*g] += 1;
    }
    let mut best: Vec<Option<(usize, usize)>> = votes
        .iter()
        .map(|row| {
            (0..n_gt)
                .max_by(|&a, &b| row[a].cmp(&row[b]).then(b.cmp(&a)))
                .filter(|&g| row[g] > 0)
                .map(|g| (g, row[g]))
        })
        .collect();
    for g in 0..n_gt {
        let claim: Vec<usize> = (0..n_est).filter(|&j| best[j].map(|b| b.0) == Some(g)).collect();
        if claim.len() > 1 {
            let keep = *claim
                .iter()
                .max_by(|&&a, &&b| best[a].unwrap().1.cmp(&best[b].unwrap().1).then(b.cmp(&a)))
                .unwrap();
            for j in claim {
                if j != keep {
                    best[j] = None;
                }
            }
        }
    }
    best.into_iter().map(|b| b.map(|x| x.0)).collect()
}

/// Label-free fallback: one-to-one matching minimizing centroid distance.
pub fn match_parts_by_centroid(est: &[Vec3], gt: &[Vec3]) -> Vec<Option<usize>> {
    let cost: Vec<Vec<f64>> = est.iter().map(|e| gt.iter().map(|g| (e - g).norm()).collect()).collect();
    let mut out = vec![None; est.len()];
    for (i, j) in min_cost_assignment(&cost) {
        out[i] = Some(j);
    }
    out
}

/// Joint values per part (index 0 unused) of state `s`.
fn gt_values(gt: &GtJoints, s: u8) -> Vec<f64> {
    gt.joints.iter().map(|j| j.values[s as usize]).collect()
}

/// Evaluates a checkpoint against the generator ground truth.
pub fn evaluate(ck: &Checkpoint, spec: &SceneSpec, gt: &GtJoints, conv: CdConvention) -> Result<JointReport> {
    if gt.joints.len() + 1 != spec.n_parts() {
        return Err(Error::InvalidInput("ground truth does not match the scene spec".into()));
    }
    let model = &ck.model;
    let s = ck.canonical_state;
    let motions = part_motions(spec, &gt_values(gt, s));
    let n_gt = spec.n_parts();
    let n_est = model.n_parts();
    let assign: Vec<usize> = model.primitives.iter().map(|p| hard_assign(&p.logits)).collect();
    let prim_gt = primitive_gt_parts(spec, &motions, model);
    let part_map = match_parts_by_labels(&assign, &prim_gt, n_est, n_gt);
    let mislabeled = assign
        .iter()
        .zip(&prim_gt)
        .filter(|(a, g)| part_map[**a] != Some(**g))
        .count();
    let mislabel_rate = mislabeled as f64 / assign.len().max(1) as f64;

    let threshold = DEFAULT_PRISMATIC_THRESHOLD_DEG.to_radians();
    let mut joints = Vec::new();
    for j in &gt.joints {
        let gt_joint = j.relative_from(s);
        let est_part = (1..n_est).find(|&e| part_map[e] == Some(j.part));
        let est = est_part.and_then(|e| {
            let b = &model.field.bases[e];
            let hint = if b.prismatic_locked {
                JointKind::Prismatic
            } else {
                JointKind::Revolute
            };
            decompose_joint(&b.motion, Some(hint), threshold).ok()
        });
        let (type_correct, angle, pos, motion) = match &est {
            Some(e) => (
                e.kind == gt_joint.kind,
                Some(metric_axis_angle(e, &gt_joint)),
                metric_axis_pos(e, &gt_joint),
                Some(metric_part_motion(e, &gt_joint)),
            ),
            None => (false, None, None, None),
        };
        joints.push(JointEval {
            gt_part: j.part,
            name: j.name.clone(),
            est_part,
            gt: gt_joint,
            est,
            type_correct,
            axis_angle_err: angle,
            axis_pos_err: pos,
            axis_pos_err_01: pos.map(|p| p / 0.1),
            part_motion_err: motion,
        });
    }

    let surface = sample_surface(spec, &motions, CD_SAMPLES, gt.seed);
    let gt_pts = |k: usize| -> Vec<Vec3> { surface.iter().filter(|(_, p)| *p == k).map(|(x, _)| *x).collect() };
    let est_pts = |k: usize| -> Vec<Vec3> {
        model
            .primitives
            .iter()
            .zip(&assign)
            .filter(|(_, a)| part_map[**a] == Some(k))
            .map(|(p, _)| p.center)
            .collect()
    };
    let cd_s = chamfer(&est_pts(0), &gt_pts(0), conv);
    let cd_m = (1..n_gt).map(|k| chamfer(&est_pts(k), &gt_pts(k), conv)).collect();
    let all_est: Vec<Vec3> = model.primitives.iter().map(|p| p.center).collect();
    let all_gt: Vec<Vec3> = surface.iter().map(|(x, _)| *x).collect();
    let cd_w = chamfer(&all_est, &all_gt, conv);
    Ok(JointReport {
        scene: gt.scene.clone(),
        n_parts: n_gt,
        seed: gt.seed,
        config_hash: ck.config_hash.clone(),
        eval_state: s,
        joints,
        cd_convention: conv,
        cd_s,
        cd_m,
        cd_w,
        mislabel_rate,
        part_map,
    })
}

/// Part-count bucket label used when grouping reports.
pub fn bucket(n_parts: usize) -> &'static str {
    match n_parts {
        0..=2 => "2",
        3 => "3",
        4..=5 => "4-5",
        _ => "6-20",
    }
}

pub const BUCKETS: [&str; 4] = ["2", "3", "4-5", "6-20"];

/// Per-bucket means of the joint metrics as CSV text. Failed or missing
/// estimates count toward `type_failures` and are left out of the means.
pub fn aggregate_csv(reports: &[JointReport]) -> String {
    #[derive(Default)]
    struct Acc {
        objects: usize,
        joints: usize,
        failures: usize,
        angle: Vec<f64>,
        pos: Vec<f64>,
        motion_deg: Vec<f64>,
        motion_m: Vec<f64>,
        cd_s: Vec<f64>,
        cd_m: Vec<f64>,
        cd_w: Vec<f64>,
    }
    let mean = |v: &[f64]| -> String {
        if v.is_empty() {
            "".into()
        } else {
            format!("{:.6}", v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    let mut acc: BTreeMap<&str, Acc> = BTreeMap::new();
    for r in reports {
        let a = acc.entry(bucket(r.n_parts)).or_default();
        a.objects += 1;
        a.cd_s.push(r.cd_s);
        a.cd_m.extend(r.cd_m.iter().copied());
        a.cd_w.push(r.cd_w);
        for j in &r.joints {
            a.joints += 1;
            match (j.type_correct, j.part_motion_err) {
                (true, Some(MotionError::Value(v))) => {
                    a.angle.extend(j.axis_angle_err);
                    a.pos.extend(j.axis_pos_err_01);
                    match j.gt.kind {
                        JointKind::Revolute => a.motion_deg.push(v),
                        JointKind::Prismatic => a.motion_m.push(v),
                    }
                }
                _ => a.failures += 1,
            }
        }
    }
    let mut out = String::from(
        "bucket,objects,joints,type_failures,axis_angle_deg,axis_pos_0.1m,motion_deg,motion_m,cd_s,cd_m,cd_w\n",
    );
    for b in BUCKETS {
        if let Some(a) = acc.get(b) {
            out.push_str(&format!(
                "{b},{},{},{},{},{},{},{},{},{},{}\n",
                a.objects,
                a.joints,
                a.failures,
                mean(&a.angle),
                mean(&a.pos),
                mean(&a.motion_deg),
                mean(&a.motion_m),
                mean(&a.cd_s),
                mean(&a.cd_m),
                mean(&a.cd_w)
            ));
        }
    }
    out
}
