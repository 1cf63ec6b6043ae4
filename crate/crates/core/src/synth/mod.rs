//! Deterministic articulated-scene generator with ground truth.
//!
//! Objects are cuboid assemblies: a static base plus thin doors, drawer
//! fronts and lids, each on a revolute or prismatic joint. A scene is fully
//! determined by its spec and seed; every random draw comes from its own
//! ChaCha stream keyed by purpose, state and view.

pub mod labels;
pub mod matches;
pub mod raster;
pub mod render;
pub mod spec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geom::{JointKind, JointParams, RigidMotion, Vec3};

pub use labels::{permute_labels, PermutedLabels};
pub use matches::{make_correspondences, SynthMatches};
pub use render::{
    part_motions, part_view_coverage, relative_joint, render_views, sample_cameras, sample_states, RenderedView,
    StateSample,
};
pub use spec::{JointSpec, SceneSpec};

const TAG_SURFACE: u64 = 6;

/// Minimum image fraction and view count each movable part must reach in
/// both states.
pub const MIN_COVERAGE: f64 = 0.01;
pub const MIN_COVERAGE_VIEWS: usize = 3;

/// Ground truth for one movable part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtJoint {
    /// Index in the full part list (0 is the base, so this starts at 1).
    pub part: usize,
    pub name: String,
    pub kind: JointKind,
    pub joint: JointSpec,
    /// Normalized state positions in `[0, 1]`.
    pub normalized: [f64; 2],
    /// Joint values (radians or meters) in each state.
    pub values: [f64; 2],
    /// The joint taking the part from state 0 to state 1.
    pub relative: JointParams,
}

impl GtJoint {
    /// Joint taking the part from state `from` to the other state.
    pub fn relative_from(&self, from: u8) -> JointParams {
        let (a, b) = if from == 0 {
            (self.values[0], self.values[1])
        } else {
            (self.values[1], self.values[0])
        };
        let d = b - a;
        let sign = if d < 0.0 { -1.0 } else { 1.0 };
        let axis = Vec3::from(self.joint.axis).normalize() * sign;
        match self.kind {
            JointKind::Revolute => JointParams::revolute(axis, Vec3::from(self.joint.origin), d.abs()),
            JointKind::Prismatic => JointParams::prismatic(axis, d.abs()),
        }
    }

    /// Rigid motion from state `from` to the other state.
    pub fn motion_from(&self, from: u8) -> RigidMotion {
        let m0 = self.joint.motion(self.values[0]);
        let m1 = self.joint.motion(self.values[1]);
        if from == 0 {
            m1.compose(&m0.inverse())
        } else {
            m0.compose(&m1.inverse())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtJoints {
    pub scene: String,
    pub seed: u64,
    pub joints: Vec<GtJoint>,
}

pub fn gt_joints(spec: &SceneSpec, seed: u64, states: &StateSample) -> GtJoints {
    let joints = spec
        .parts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let values = [states.values[0][i], states.values[1][i]];
            GtJoint {
                part: i + 1,
                name: p.name.clone(),
                kind: p.joint.kind,
                joint: p.joint.clone(),
                normalized: [states.normalized[0][i], states.normalized[1][i]],
                values,
                relative: relative_joint(spec, i + 1, values[0], values[1]),
            }
        })
        .collect();
    GtJoints {
        scene: spec.name.clone(),
        seed,
        joints,
    }
}

/// Everything the generator produces for one scene.
#[derive(Clone, Debug)]
pub struct GeneratedScene {
    pub spec: SceneSpec,
    pub seed: u64,
    pub states: StateSample,
    pub views: [Vec<RenderedView>; 2],
    pub test_views: [Vec<RenderedView>; 2],
    pub local: [PermutedLabels; 2],
    pub matches: SynthMatches,
    pub gt: GtJoints,
}

impl GeneratedScene {
    /// Training frames of `state` carrying view-local mask ids.
    pub fn frames(&self, state: u8) -> Vec<Frame> {
        let s = state as usize;
        self.views[s]
            .iter()
            .zip(&self.local[s].labels)
            .map(|(v, l)| Frame {
                labels: l.clone(),
                ..v.frame.clone()
            })
            .collect()
    }

    /// Training frames of `state` carrying ground-truth part ids + 1.
    pub fn gt_frames(&self, state: u8) -> Vec<Frame> {
        self.views[state as usize].iter().map(|v| v.frame.clone()).collect()
    }

    pub fn motions(&self, state: u8) -> Vec<RigidMotion> {
        part_motions(&self.spec, &self.states.values[state as usize])
    }
}

/// Generates a scene: joint states, training and test renders for both
/// states, per-view label permutation and correspondences.
pub fn generate(spec: &SceneSpec, seed: u64) -> Result<GeneratedScene> {
    spec.validate()?;
    let states = sample_states(spec, seed);
    let mut views: [Vec<RenderedView>; 2] = Default::default();
    let mut test_views: [Vec<RenderedView>; 2] = Default::default();
    for s in 0..2u8 {
        let values = &states.values[s as usize];
        views[s as usize] = render_views(spec, values, &sample_cameras(spec, seed, s, false), s);
        test_views[s as usize] = render_views(spec, values, &sample_cameras(spec, seed, s, true), s);
        let cover = part_view_coverage(&views[s as usize], spec.n_parts(), MIN_COVERAGE);
        for (p, c) in cover.iter().enumerate().skip(1) {
            if *c < MIN_COVERAGE_VIEWS {
                return Err(Error::InvalidConfig(format!(
                    "part {p} ({}) covers {:.0}% of the image in only {c} state-{s} views; need {MIN_COVERAGE_VIEWS}",
                    spec.parts[p - 1].name,
                    MIN_COVERAGE * 100.0
                )));
            }
        }
    }
    let perm_seed = spec.permute_labels.then_some(seed);
    let local = [0u8, 1].map(|s| {
        let gt: Vec<_> = views[s as usize].iter().map(|v| v.frame.labels.clone()).collect();
        permute_labels(&gt, spec.mask_dropout, perm_seed, s)
    });
    let m0 = part_motions(spec, &states.values[0]);
    let m1 = part_motions(spec, &states.values[1]);
    let matches = make_correspondences(&spec.matches, &m0, &m1, &views[0], &views[1], seed);
    for w in &matches.warnings {
        log::warn!("{w}");
    }
    let gt = gt_joints(spec, seed, &states);
    Ok(GeneratedScene {
        spec: spec.clone(),
        seed,
        states,
        views,
        test_views,
        local,
        matches,
        gt,
    })
}

/// `n` points sampled uniformly (by area) over the surface of the posed
/// assembly, with their part index.
pub fn sample_surface(spec: &SceneSpec, motions: &[RigidMotion], n: usize, seed: u64) -> Vec<(Vec3, usize)> {
    let mut faces = Vec::new();
    let mut cum = Vec::new();
    let mut total = 0.0;
    for p in 0..spec.n_parts() {
        let h = spec.shape(p).half();
        for f in 0..6 {
            let a = f / 2;
            let (b, d) = ((a + 1) % 3, (a + 2) % 3);
            total += 4.0 * h[b] * h[d];
            faces.push((p, f));
            cum.push(total);
        }
    }
    let mut rng = render::stream(seed, TAG_SURFACE, 0, 0);
    (0..n)
        .map(|_| {
            let r = rng.random::<f64>() * total;
            let k = cum.partition_point(|c| *c <= r).min(faces.len() - 1);
            let (p, f) = faces[k];
            let q = render::face_corners(spec.shape(p), f);
            let (s, t): (f64, f64) = (rng.random(), rng.random());
            let x = q[0] + (q[1] - q[0]) * s + (q[3] - q[0]) * t;
            (motions[p].apply(&x), p)
        })
        .collect()
}

/// Distance from `x` to the surface of a posed cuboid.
pub fn distance_to_cuboid(shape: &spec::Cuboid, motion: &RigidMotion, x: &Vec3) -> f64 {
    let local = motion.inverse().apply(x) - shape.center();
    let h = shape.half();
    let q = local.abs() - h;
    let outside = q.map(|v| v.max(0.0)).norm();
    let inside = q.max().min(0.0);
    (outside + inside).abs()
}
