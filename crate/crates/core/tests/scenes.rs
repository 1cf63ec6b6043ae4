//! Generator and multi-view segmentation against geometric oracles.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use artic::eval::adjusted_rand_index;
use artic::frame::Frame;
use artic::geom::{Camera, RigidMotion, Vec2, Vec3};
use artic::grid::Grid;
use artic::pipeline::{prepare, Config, SceneInputs};
use artic::seg::{build_part_graph, iou_matrix, reproject_mask, MaskSet, SegConfig, SegWarning};
use artic::synth::raster::rasterize;
use artic::synth::render::{face_id, face_normal, scene_triangles, split_face_id};
use artic::synth::spec::Cuboid;
use artic::synth::{distance_to_cuboid, generate, part_motions, SceneSpec};
use artic::train::{init_model, select_canonical, TrainConfig};

/// Nearest positive hit of the ray `o + t·d` with a posed cuboid (slab test
/// in the cuboid's rest frame).
fn ray_box(o: &Vec3, d: &Vec3, c: &Cuboid, m: &RigidMotion) -> Option<f64> {
    let inv = m.inverse();
    let lo = inv.apply(o) - c.center();
    let ld = inv.rotation() * d;
    let h = c.half();
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if ld[a].abs() < 1e-15 {
            if lo[a].abs() > h[a] {
                return None;
            }
            continue;
        }
        let (ta, tb) = ((-h[a] - lo[a]) / ld[a], (h[a] - lo[a]) / ld[a]);
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

#[test]
fn rendered_depth_matches_ray_box_intersection() {
    let spec = SceneSpec::builtin("cabinet5").unwrap();
    let scene = generate(&spec, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for state in 0..2u8 {
        let motions = scene.motions(state);
        let views = &scene.views[state as usize];
        let mut pixels = Vec::new();
        for (vi, v) in views.iter().enumerate() {
            let f = &v.frame;
            for y in 0..f.labels.height {
                for x in 0..f.labels.width {
                    if *f.labels.get(x, y) != 0 {
                        pixels.push((vi, x, y));
                    }
                }
            }
        }
        for &(vi, x, y) in pixels.choose_multiple(&mut rng, 500) {
            let f = &views[vi].frame;
            let o = f.camera.center();
            let d = (f.camera.backproject(&Vec2::new(x as f64, y as f64), 1.0).unwrap() - o).normalize();
            let t = (0..spec.n_parts())
                .filter_map(|p| ray_box(&o, &d, spec.shape(p), &motions[p]))
                .fold(f64::INFINITY, f64::min);
            assert!(t.is_finite(), "labelled pixel ({x},{y}) misses every box");
            let z = f.camera.to_camera(&(o + d * t)).z;
            let got = *f.depth.get(x, y) as f64;
            assert!((got - z).abs() < 1e-5, "view {vi} pixel ({x},{y}): {got} vs {z}");
            checked += 1;
        }
    }
    assert_eq!(checked, 1000);
}

fn single_box_frame(cam: &Camera, face: Option<usize>) -> Frame {
    let spec = SceneSpec::builtin("still2").unwrap();
    let motions = part_motions(&spec, &vec![0.0; spec.parts.len()]);
    let tris: Vec<_> = scene_triangles(&spec, &motions)
        .into_iter()
        .filter(|t| split_face_id(t.id).0 == 0)
        .collect();
    let r = rasterize(cam, &tris);
    let keep = |id: u32| id != 0 && face.is_none_or(|f| id == face_id(0, f));
    Frame {
        view: 0,
        state: 0,
        camera: cam.clone(),
        rgb: Grid::new(cam.width, cam.height, [0.5; 3]),
        depth: Grid::from_vec(
            cam.width,
            cam.height,
            r.depth.data.iter().map(|&d| if d.is_finite() { d as f32 } else { 0.0 }).collect(),
        ),
        labels: Grid::from_vec(cam.width, cam.height, r.id.data.iter().map(|&id| u16::from(keep(id))).collect()),
    }
}

#[test]
fn reprojected_face_mask_overlaps_the_rendered_one() {
    let spec = SceneSpec::builtin("still2").unwrap();
    let target = spec.base.shape.center();
    let eye_a = target + Vec3::new(0.5, 0.4, 2.0);
    let eye_b = target + Vec3::new(-0.6, 0.2, 1.9);
    // the face both cameras see most squarely
    let face = (0..6)
        .max_by(|&f, &g| {
            let s = |f: usize| face_normal(f).dot(&(eye_a - target).normalize()) + face_normal(f).dot(&(eye_b - target).normalize());
            s(f).total_cmp(&s(g))
        })
        .unwrap();
    let cam_a = Camera::look_at(&eye_a, &target, 200.0, 160, 160).unwrap();
    let cam_b = Camera::look_at(&eye_b, &target, 200.0, 160, 160).unwrap();
    let a = single_box_frame(&cam_a, Some(face));
    let b = single_box_frame(&cam_b, Some(face));
    assert!(a.n_labels() == 1 && b.n_labels() == 1);
    let reproj = reproject_mask(&MaskSet::from_frame(&a), &a.depth, &cam_a, &cam_b);
    let iou = iou_matrix(&reproj, 1, &b.labels, 1)[0][0];
    assert!(iou > 0.95, "IoU {iou}");
}

#[test]
fn opposite_views_give_separate_components_and_a_warning() {
    let spec = SceneSpec::builtin("still2").unwrap();
    let target = spec.base.shape.center();
    let frames: Vec<Frame> = [1.0, -1.0]
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let cam = Camera::look_at(&(target + Vec3::new(0.0, 0.3, 2.0 * s)), &target, 200.0, 120, 120).unwrap();
            Frame {
                view: i,
                ..single_box_frame(&cam, None)
            }
        })
        .collect();
    let cfg = SegConfig {
        k_nn_views: 1,
        min_component_views: 1,
        ..SegConfig::default()
    };
    let g = build_part_graph(&frames, &cfg);
    assert_eq!(g.n_parts, 2);
    assert!(g.warnings.iter().any(|w| matches!(w, SegWarning::FragmentedViews { clusters: 2 })));
}

fn three_part_spec() -> SceneSpec {
    let mut spec = SceneSpec::builtin("cabinet5").unwrap();
    spec.name = "cabinet3".into();
    spec.parts.truncate(2);
    spec.views.n_train = 8;
    spec
}

fn pixel_partition(frames: &[Frame], gt: &[Frame], relabel: impl Fn(usize, &Frame) -> Grid<u16>) -> (Vec<u32>, Vec<u32>) {
    let (mut est, mut truth) = (Vec::new(), Vec::new());
    for (i, (f, g)) in frames.iter().zip(gt).enumerate() {
        let global = relabel(i, f);
        for (a, b) in global.data.iter().zip(&g.labels.data) {
            if *b != 0 {
                est.push(*a as u32);
                truth.push(*b as u32);
            }
        }
    }
    (est, truth)
}

#[test]
fn eight_permuted_views_recover_the_partition() {
    let spec = three_part_spec();
    assert!(spec.permute_labels);
    for seed in 1..=3 {
        let scene = generate(&spec, seed).unwrap();
        for state in 0..2u8 {
            let frames = scene.frames(state);
            let g = build_part_graph(&frames, &SegConfig::default());
            assert_eq!(g.n_parts, 3, "seed {seed} state {state}: {:?}", g.warnings);
            let (est, truth) = pixel_partition(&frames, &scene.gt_frames(state), |i, f| g.relabel(i, &f.labels));
            let ari = adjusted_rand_index(&est, &truth);
            assert!(ari > 1.0 - 1e-12, "seed {seed} state {state}: ARI {ari}");
        }
    }
}

#[test]
fn relabelling_local_ids_leaves_components_unchanged() {
    let spec = three_part_spec();
    let scene = generate(&spec, 4).unwrap();
    let frames = scene.frames(0);
    let g = build_part_graph(&frames, &SegConfig::default());
    // reverse every view's local ids
    let flipped: Vec<Frame> = frames
        .iter()
        .map(|f| {
            let m = f.labels.data.iter().copied().max().unwrap();
            let labels = Grid::from_vec(
                f.labels.width,
                f.labels.height,
                f.labels.data.iter().map(|&l| if l == 0 { 0 } else { m + 1 - l }).collect(),
            );
            Frame { labels, ..f.clone() }
        })
        .collect();
    let h = build_part_graph(&flipped, &SegConfig::default());
    let (a, _) = pixel_partition(&frames, &frames, |i, f| g.relabel(i, &f.labels));
    let (b, _) = pixel_partition(&flipped, &frames, |i, f| h.relabel(i, &f.labels));
    assert_eq!(adjusted_rand_index(&a, &b), 1.0);
}

/// Majority ground-truth label of each global label.
fn majority(frames: &[Frame], gt: &[Frame], n: usize) -> Vec<u16> {
    let mut votes = vec![vec![0usize; 32]; n + 1];
    for (f, g) in frames.iter().zip(gt) {
        for (a, b) in f.labels.data.iter().zip(&g.labels.data) {
            if *a != 0 && (*a as usize) <= n {
                votes[*a as usize][*b as usize] += 1;
            }
        }
    }
    votes
        .iter()
        .map(|v| (0..v.len()).max_by_key(|&k| v[k]).unwrap() as u16)
        .collect()
}

#[test]
fn state_alignment_recovers_ground_truth_mapping() {
    let mut spec = SceneSpec::builtin("cabinet5").unwrap();
    spec.matches.per_part = 50;
    assert_eq!(spec.matches.outlier_rate, 0.1);
    for seed in 1..=2 {
        let scene = generate(&spec, seed).unwrap();
        let inputs = SceneInputs {
            frames: [scene.frames(0), scene.frames(1)],
            matches: scene.matches.rows.clone(),
        };
        let p = prepare(&inputs, &Config::default()).unwrap();
        assert_eq!(p.n_parts, 5);
        assert!(p.alignment.unmapped.is_empty() && p.alignment.collisions.is_empty());
        let m0 = majority(&p.frames[0], &scene.gt_frames(0), p.n_parts);
        let m1 = majority(&p.frames[1], &scene.gt_frames(1), p.n_parts);
        assert_eq!(m0[1..], m1[1..], "seed {seed}");
    }
}

#[test]
fn canonical_state_has_more_movable_area() {
    let lm = |movable: usize| Grid::from_vec(4, 1, (0..4).map(|i| if i < movable { 2 } else { 1 }).collect());
    assert_eq!(select_canonical(&[lm(1), lm(1)], &[lm(2), lm(1)]), 1);
    assert_eq!(select_canonical(&[lm(3)], &[lm(2)]), 0);
    assert_eq!(select_canonical(&[lm(2)], &[lm(2)]), 0);
}

#[test]
fn initial_points_lie_on_the_observed_surface() {
    let spec = SceneSpec::builtin("door2").unwrap();
    let scene = generate(&spec, 1).unwrap();
    let frames = scene.gt_frames(0);
    let labels: Vec<_> = frames.iter().map(|f| f.labels.clone()).collect();
    let (model, sources) = init_model(&frames, &labels, 2, &TrainConfig::default()).unwrap();
    assert_eq!(model.primitives.len(), 5000);
    let motions = scene.motions(0);
    let mut sum = 0.0;
    let mut footprint = 0.0;
    for (p, s) in model.primitives.iter().zip(&sources) {
        let d = (0..spec.n_parts())
            .map(|k| distance_to_cuboid(spec.shape(k), &motions[k], &p.center))
            .fold(f64::INFINITY, f64::min);
        sum += d;
        let f = &frames[s.frame];
        footprint += f.camera.to_camera(&p.center).z / f.camera.intrinsics()[(0, 0)];
    }
    let n = model.primitives.len() as f64;
    let (mean, footprint) = (sum / n, footprint / n);
    assert!(mean < 2.0 * footprint, "mean distance {mean} vs footprint {footprint}");
    for (p, s) in model.primitives.iter().zip(&sources) {
        let l = *labels[s.frame].get(s.x as usize, s.y as usize) as usize;
        assert_eq!(artic::motion::hard_assign(&p.logits), l - 1);
    }
}
