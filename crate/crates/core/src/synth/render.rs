//! Posing the cuboid assembly, sampling cameras and rendering RGB-D frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frame::Frame;
use crate::geom::{Camera, JointKind, JointParams, RigidMotion, Vec2, Vec3};
use crate::grid::Grid;
use crate::synth::raster::{rasterize, Triangle};
use crate::synth::spec::{Cuboid, SceneSpec};

/// Checker cell edge (meters) and the darkening factor of odd cells.
const CHECKER: f64 = 0.05;
const CHECKER_DARK: f64 = 0.8;
/// Faces narrower than this in either direction stay untextured.
const CHECKER_MIN_FACE: f64 = 0.1;

/// Independent random stream for one (purpose, state, view) triple, so
/// outputs never depend on evaluation order.
pub fn stream(seed: u64, tag: u64, state: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 48) | (state << 40) | index);
    rng
}

pub(crate) const TAG_STATES: u64 = 1;
pub(crate) const TAG_CAMERAS: u64 = 2;
pub(crate) const TAG_TEST_CAMERAS: u64 = 3;
pub(crate) const TAG_LABELS: u64 = 4;
pub(crate) const TAG_MATCHES: u64 = 5;

/// Joint states drawn for every movable part.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSample {
    /// Normalized positions in `[0, 1]`, per state and movable part.
    pub normalized: [Vec<f64>; 2],
    /// Joint values (radians or meters) per state and movable part.
    pub values: [Vec<f64>; 2],
}

/// Draws the two joint states: state 0 uniformly in `spec.state0_range`,
/// state 1 in `spec.state1_range`, each mapped through the joint limits.
pub fn sample_states(spec: &SceneSpec, seed: u64) -> StateSample {
    let mut normalized = [Vec::new(), Vec::new()];
    let mut values = [Vec::new(), Vec::new()];
    for (i, part) in spec.parts.iter().enumerate() {
        let mut rng = stream(seed, TAG_STATES, 0, i as u64);
        for (s, range) in [spec.state0_range, spec.state1_range].into_iter().enumerate() {
            let u: f64 = rng.random();
            let x = range[0] + u * (range[1] - range[0]);
            normalized[s].push(x);
            values[s].push(part.joint.value_at(x));
        }
    }
    StateSample { normalized, values }
}

/// Rest-to-posed motion of every part (index 0 = base, always identity).
pub fn part_motions(spec: &SceneSpec, values: &[f64]) -> Vec<RigidMotion> {
    let mut out = vec![RigidMotion::identity()];
    out.extend(spec.parts.iter().zip(values).map(|(p, v)| p.joint.motion(*v)));
    out
}

/// Ground-truth joint taking part `p` (1-based movable index into the full
/// part list) from joint value `from` to `to`, with non-negative magnitude.
pub fn relative_joint(spec: &SceneSpec, p: usize, from: f64, to: f64) -> JointParams {
    let j = &spec.parts[p - 1].joint;
    let d = to - from;
    let sign = if d < 0.0 { -1.0 } else { 1.0 };
    let axis = Vec3::from(j.axis).normalize() * sign;
    match j.kind {
        JointKind::Revolute => JointParams::revolute(axis, Vec3::from(j.origin), d.abs()),
        JointKind::Prismatic => JointParams::prismatic(axis, d.abs()),
    }
}

/// Face `f` of a cuboid: outward axis index and sign.
fn face_axis(f: usize) -> (usize, f64) {
    (f / 2, if f % 2 == 0 { 1.0 } else { -1.0 })
}

pub fn face_id(part: usize, face: usize) -> u32 {
    (part * 6 + face + 1) as u32
}

/// `(part, face)` for a non-zero face id.
pub fn split_face_id(id: u32) -> (usize, usize) {
    let k = id as usize - 1;
    (k / 6, k % 6)
}

/// Rest-pose corners of face `f`, counter-clockwise seen from outside.
pub fn face_corners(c: &Cuboid, f: usize) -> [Vec3; 4] {
    let (a, s) = face_axis(f);
    let (b, d) = ((a + 1) % 3, (a + 2) % 3);
    let center = c.center();
    let h = c.half();
    let mut base = center;
    base[a] += s * h[a];
    let corner = |sb: f64, sd: f64| {
        let mut p = base;
        p[b] += sb * h[b];
        p[d] += sd * h[d];
        p
    };
    let q = [corner(-1.0, -1.0), corner(1.0, -1.0), corner(1.0, 1.0), corner(-1.0, 1.0)];
    if s > 0.0 {
        q
    } else {
        [q[0], q[3], q[2], q[1]]
    }
}

pub fn face_normal(f: usize) -> Vec3 {
    let (a, s) = face_axis(f);
    let mut n = Vec3::zeros();
    n[a] = s;
    n
}

/// All triangles of the posed assembly.
pub fn scene_triangles(spec: &SceneSpec, motions: &[RigidMotion]) -> Vec<Triangle> {
    let mut tris = Vec::with_capacity(spec.n_parts() * 12);
    for (p, m) in motions.iter().enumerate() {
        let r = m.rotation();
        let shape = spec.shape(p);
        for f in 0..6 {
            let q = face_corners(shape, f).map(|v| m.apply(&v));
            let normal = r * face_normal(f);
            let id = face_id(p, f);
            tris.push(Triangle { v: [q[0], q[1], q[2]], normal, id });
            tris.push(Triangle { v: [q[0], q[2], q[3]], normal, id });
        }
    }
    tris
}

/// Surface color of a rest-pose point on face `f` of part `p`. Lighting is
/// baked in the part frame, so appearance travels with the part.
pub fn surface_color(spec: &SceneSpec, p: usize, f: usize, rest: &Vec3) -> [f64; 3] {
    let light = Vec3::new(0.3, 0.8, 0.5).normalize();
    let n = face_normal(f);
    let shade = 0.6 + 0.4 * n.dot(&light).max(0.0);
    let shape = spec.shape(p);
    let (a, _) = face_axis(f);
    let (b, d) = ((a + 1) % 3, (a + 2) % 3);
    let h = shape.half();
    let mut tex = 1.0;
    if 2.0 * h[b] >= CHECKER_MIN_FACE && 2.0 * h[d] >= CHECKER_MIN_FACE {
        let ub = rest[b] - (shape.center[b] - h[b]);
        let ud = rest[d] - (shape.center[d] - h[d]);
        let parity = ((ub / CHECKER).floor() as i64 + (ud / CHECKER).floor() as i64).rem_euclid(2);
        if parity == 1 {
            tex = CHECKER_DARK;
        }
    }
    spec.color(p).map(|c| (c * shade * tex).clamp(0.0, 1.0))
}

pub(crate) fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Cameras for one state. Training and test views use separate streams.
pub fn sample_cameras(spec: &SceneSpec, seed: u64, state: u8, test: bool) -> Vec<Camera> {
    let v = &spec.views;
    let n = if test { v.n_test } else { v.n_train };
    let tag = if test { TAG_TEST_CAMERAS } else { TAG_CAMERAS };
    let fx = (v.width as f64 / 2.0) / (v.fov_deg.to_radians() / 2.0).tan();
    let target = spec.base.shape.center();
    (0..n)
        .map(|i| {
            let mut rng = stream(seed, tag, state as u64, i as u64);
            let az = rng.random_range(v.azimuth_deg[0]..=v.azimuth_deg[1]).to_radians();
            let el = rng.random_range(v.elevation_deg[0]..=v.elevation_deg[1]).to_radians();
            let r = rng.random_range(v.radius[0]..=v.radius[1]);
            let eye = target + Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()) * r;
            Camera::look_at(&eye, &target, fx, v.width, v.height).expect("valid look-at camera")
        })
        .collect()
}

/// A rendered frame plus its face-id buffer (0 = background).
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub frame: Frame,
    pub face: Grid<u32>,
}

/// Renders the posed assembly. Labels are ground-truth part ids + 1; colors
/// are quantized to 8 bits so in-memory frames equal their PNG round trip.
pub fn render_view(
    spec: &SceneSpec,
    motions: &[RigidMotion],
    tris: &[Triangle],
    cam: &Camera,
    view: usize,
    state: u8,
) -> RenderedView {
    let raster = rasterize(cam, tris);
    let (w, h) = (cam.width, cam.height);
    let inverse: Vec<RigidMotion> = motions.iter().map(|m| m.inverse()).collect();
    let mut rgb = Grid::new(w, h, [0.0f32; 3]);
    let mut depth = Grid::new(w, h, 0.0f32);
    let mut labels = Grid::new(w, h, 0u16);
    for y in 0..h {
        for x in 0..w {
            let id = *raster.id.get(x, y);
            if id == 0 {
                continue;
            }
            let z = *raster.depth.get(x, y);
            let (p, f) = split_face_id(id);
            let world = cam
                .backproject(&Vec2::new(x as f64, y as f64), z)
                .expect("rasterized depth is positive");
            let rest = inverse[p].apply(&world);
            let c = surface_color(spec, p, f, &rest);
            rgb.set(x, y, c.map(|v| quantize_u8(v) as f32 / 255.0));
            depth.set(x, y, z as f32);
            labels.set(x, y, (p + 1) as u16);
        }
    }
    RenderedView {
        frame: Frame {
            view,
            state,
            camera: cam.clone(),
            rgb,
            depth,
            labels,
        },
        face: raster.id,
    }
}

/// Renders every camera of one state.
pub fn render_views(spec: &SceneSpec, values: &[f64], cams: &[Camera], state: u8) -> Vec<RenderedView> {
    let motions = part_motions(spec, values);
    let tris = scene_triangles(spec, &motions);
    cams.iter()
        .enumerate()
        .map(|(i, c)| render_view(spec, &motions, &tris, c, i, state))
        .collect()
}

/// Number of training views in which each part covers at least `frac` of
/// the image.
pub fn part_view_coverage(views: &[RenderedView], n_parts: usize, frac: f64) -> Vec<usize> {
    let mut out = vec![0usize; n_parts];
    for v in views {
        let mut count = vec![0usize; n_parts + 1];
        for &l in &v.frame.labels.data {
            count[l as usize] += 1;
        }
        let total = v.frame.labels.data.len() as f64;
        for p in 0..n_parts {
            if count[p + 1] as f64 >= frac * total {
                out[p] += 1;
            }
        }
    }
    out
}
