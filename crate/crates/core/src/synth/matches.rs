//! Synthetic cross-state pixel correspondences with injected outliers.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corr::PixelMatch;
use crate::geom::{RigidMotion, Vec2, Vec3};
use crate::grid::{sample_depth, Grid, Stencil};
use crate::synth::render::{split_face_id, stream, RenderedView, TAG_MATCHES};
use crate::synth::spec::MatchSpec;

/// Sub-pixel jitter around a cluster's seed pixel.
const JITTER: f64 = 0.3;
/// Depth agreement required for a projected point to count as visible.
const VISIBLE_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthMatches {
    pub rows: Vec<PixelMatch>,
    /// Matches produced per part (index 0 = base).
    pub per_part: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Face id shared by all four bilinear neighbours of `(u, v)`, if any.
/// Depth sampled at such positions is exact, since it interpolates a single
/// plane.
fn interior_face(face: &Grid<u32>, u: f64, v: f64) -> Option<u32> {
    let st = Stencil::at(face.width, face.height, u, v)?;
    let ids = st.corners().map(|(x, y)| *face.get(x, y));
    (ids[0] != 0 && ids.iter().all(|i| *i == ids[0])).then_some(ids[0])
}

fn lift(view: &RenderedView, u: f64, v: f64) -> Option<Vec3> {
    let (d, _, _) = sample_depth(&view.frame.depth, u, v)?;
    view.frame.camera.backproject(&Vec2::new(u, v), d).ok()
}

/// Where `x` shows up in `view`, provided it is the visible surface there
/// and lies inside face `face_id`.
fn visible_at(view: &RenderedView, x: &Vec3, face_id: u32) -> Option<Vec2> {
    let p = view.frame.camera.project(x)?;
    let id = interior_face(&view.face, p.pixel.x, p.pixel.y)?;
    if id != face_id {
        return None;
    }
    let (d, _, _) = sample_depth(&view.frame.depth, p.pixel.x, p.pixel.y)?;
    ((d - p.depth).abs() < VISIBLE_TOL).then_some(p.pixel)
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

/// Samples `spec.per_part` matches per part in clusters of `spec.cluster`
/// sub-pixel positions around a random seed pixel of a state-0 view
/// (incomplete clusters are discarded). Each
/// state-0 point is moved by the part's ground-truth motion
/// (`motions1[p] ∘ motions0[p]⁻¹`) and matched in a random state-1 view
/// where it is visible. Exactly `round(outlier_rate · N)` matches then get
/// a random state-1 partner at least `outlier_offset` away from the true
/// one and are flagged.
pub fn make_correspondences(
    spec: &MatchSpec,
    motions0: &[RigidMotion],
    motions1: &[RigidMotion],
    views0: &[RenderedView],
    views1: &[RenderedView],
    seed: u64,
) -> SynthMatches {
    let n_parts = motions0.len();
    let mut out = SynthMatches {
        per_part: vec![0; n_parts],
        ..Default::default()
    };
    // pixels of each part, per state-0 view
    let mut by_part: Vec<Vec<Vec<(usize, usize)>>> = vec![vec![Vec::new(); views0.len()]; n_parts];
    for (vi, v) in views0.iter().enumerate() {
        let f = &v.frame.labels;
        for y in 0..f.height {
            for x in 0..f.width {
                let l = *f.get(x, y) as usize;
                if l > 0 && l <= n_parts {
                    by_part[l - 1][vi].push((x, y));
                }
            }
        }
    }
    let mut truth: Vec<Vec3> = Vec::new();
    for p in 0..n_parts {
        let rel = motions1[p].compose(&motions0[p].inverse());
        let mut rng = stream(seed, TAG_MATCHES, 0, p as u64);
        let views: Vec<usize> = (0..views0.len()).filter(|&v| !by_part[p][v].is_empty()).collect();
        if views.is_empty() {
            out.warnings.push(format!("part {p} is not visible in any state-0 view"));
            continue;
        }
        let max_attempts = 50 * spec.per_part.div_ceil(spec.cluster).max(1);
        let mut attempts = 0;
        while out.per_part[p] < spec.per_part && attempts < max_attempts {
            attempts += 1;
            let v0 = pick(&mut rng, &views);
            let (sx, sy) = pick(&mut rng, &by_part[p][v0]);
            let Some(face) = interior_face(&views0[v0].face, sx as f64, sy as f64) else {
                continue;
            };
            if split_face_id(face).0 != p {
                continue;
            }
            let Some(seed_point) = lift(&views0[v0], sx as f64, sy as f64) else {
                continue;
            };
            let moved = rel.apply(&seed_point);
            let targets: Vec<usize> = (0..views1.len())
                .filter(|&v| visible_at(&views1[v], &moved, face).is_some())
                .collect();
            if targets.is_empty() {
                continue;
            }
            let v1 = pick(&mut rng, &targets);
            // clusters are committed whole so no match lacks close neighbours
            let want = spec.cluster.min(spec.per_part - out.per_part[p]);
            let mut batch = Vec::with_capacity(want);
            for _ in 0..4 * spec.cluster {
                if batch.len() == want {
                    break;
                }
                let u = sx as f64 + rng.random_range(-JITTER..JITTER);
                let v = sy as f64 + rng.random_range(-JITTER..JITTER);
                if interior_face(&views0[v0].face, u, v) != Some(face) {
                    continue;
                }
                let Some(x0) = lift(&views0[v0], u, v) else { continue };
                let x1 = rel.apply(&x0);
                let Some(q) = visible_at(&views1[v1], &x1, face) else {
                    continue;
                };
                batch.push((
                    PixelMatch {
                        pix0_u: u,
                        pix0_v: v,
                        view0: v0,
                        pix1_u: q.x,
                        pix1_v: q.y,
                        view1: v1,
                        is_outlier_gt: Some(false),
                    },
                    x1,
                ));
            }
            if batch.len() < want {
                continue;
            }
            for (row, x1) in batch {
                out.rows.push(row);
                truth.push(x1);
            }
            out.per_part[p] += want;
        }
        if out.per_part[p] == 0 {
            out.warnings.push(format!("part {p} has no visible correspondences"));
        }
    }

    let n = out.rows.len();
    let n_out = ((spec.outlier_rate * n as f64).round() as usize).min(n);
    if n_out == 0 {
        return out;
    }
    let mut rng = stream(seed, TAG_MATCHES, 1, 0);
    let mut chosen = sample(&mut rng, n, n_out).into_vec();
    chosen.sort_unstable();
    // foreground pixels per state-1 view
    let fg: Vec<Vec<(usize, usize)>> = views1
        .iter()
        .map(|v| {
            let f = &v.frame.labels;
            (0..f.height)
                .flat_map(|y| (0..f.width).map(move |x| (x, y)))
                .filter(|&(x, y)| *f.get(x, y) != 0)
                .collect()
        })
        .collect();
    for i in chosen {
        let mut view = out.rows[i].view1;
        let mut placed = false;
        for attempt in 0..10_000 {
            if attempt > 0 && attempt % 1000 == 0 {
                view = rng.random_range(0..views1.len());
            }
            if fg[view].is_empty() {
                continue;
            }
            let (x, y) = pick(&mut rng, &fg[view]);
            let u = x as f64 + rng.random_range(-JITTER..JITTER);
            let v = y as f64 + rng.random_range(-JITTER..JITTER);
            if interior_face(&views1[view].face, u, v).is_none() {
                continue;
            }
            let Some(x1) = lift(&views1[view], u, v) else { continue };
            if (x1 - truth[i]).norm() >= spec.outlier_offset {
                let r = &mut out.rows[i];
                r.view1 = view;
                r.pix1_u = u;
                r.pix1_v = v;
                r.is_outlier_gt = Some(true);
                placed = true;
                break;
            }
        }
        if !placed {
            out.warnings.push(format!("could not place outlier for match {i}"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr::lift_pixel_matches;
    use crate::synth::render::{part_motions, render_views, sample_cameras, sample_states};
    use crate::synth::spec::door2;

    fn setup(rate: f64) -> (Vec<RigidMotion>, Vec<RigidMotion>, Vec<RenderedView>, Vec<RenderedView>, SynthMatches) {
        let mut spec = door2();
        spec.views.n_train = 8;
        spec.views.width = 96;
        spec.views.height = 96;
        let s = sample_states(&spec, 4);
        let v0 = render_views(&spec, &s.values[0], &sample_cameras(&spec, 4, 0, false), 0);
        let v1 = render_views(&spec, &s.values[1], &sample_cameras(&spec, 4, 1, false), 1);
        let m0 = part_motions(&spec, &s.values[0]);
        let m1 = part_motions(&spec, &s.values[1]);
        let ms = MatchSpec {
            outlier_rate: rate,
            ..MatchSpec::default()
        };
        let out = make_correspondences(&ms, &m0, &m1, &v0, &v1, 4);
        (m0, m1, v0, v1, out)
    }

    #[test]
    fn inliers_follow_ground_truth_motion() {
        let (m0, m1, v0, v1, out) = setup(0.1);
        let f0: Vec<_> = v0.iter().map(|v| v.frame.clone()).collect();
        let f1: Vec<_> = v1.iter().map(|v| v.frame.clone()).collect();
        let lifted = lift_pixel_matches(&out.rows, &f0, &f1).unwrap();
        assert_eq!(lifted.dropped, 0);
        let mut checked = 0;
        for m in lifted.matches.iter().filter(|m| m.outlier_gt == Some(false)) {
            let l = *v0[m.view0].frame.labels.get(m.pix0.x.round() as usize, m.pix0.y.round() as usize) as usize;
            let rel = m1[l - 1].compose(&m0[l - 1].inverse());
            assert!((rel.apply(&m.p3d0) - m.p3d1).norm() < 1e-6);
            checked += 1;
        }
        assert!(checked > 100);
        for m in lifted.matches.iter().filter(|m| m.outlier_gt == Some(true)) {
            let l = *v0[m.view0].frame.labels.get(m.pix0.x.round() as usize, m.pix0.y.round() as usize) as usize;
            let rel = m1[l - 1].compose(&m0[l - 1].inverse());
            assert!((rel.apply(&m.p3d0) - m.p3d1).norm() >= 0.1 - 1e-6);
        }
    }

    #[test]
    fn outlier_count_is_exact() {
        for rate in [0.0, 0.1, 0.25] {
            let (.., out) = setup(rate);
            let n = out.rows.len();
            let flagged = out.rows.iter().filter(|r| r.is_outlier_gt == Some(true)).count();
            assert_eq!(flagged, (rate * n as f64).round() as usize);
            assert_eq!(out.per_part, vec![64, 64]);
        }
    }
}
