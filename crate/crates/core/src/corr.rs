//! Cross-state correspondences: lifting pixel matches to 3D and the 3D
//! locality outlier filter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geom::{Vec2, Vec3};
use crate::grid::sample_depth;
use crate::spatial::VoxelGrid;

pub const DEFAULT_LOCALITY_RADIUS: f64 = 0.01;
pub const DEFAULT_LOCALITY_TOLERANCE: f64 = 0.02;

/// A pixel correspondence between a view of state 0 and a view of state 1,
/// as stored in `matches.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelMatch {
    pub pix0_u: f64,
    pub pix0_v: f64,
    pub view0: usize,
    pub pix1_u: f64,
    pub pix1_v: f64,
    pub view1: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_outlier_gt: Option<bool>,
}

/// A correspondence lifted to world space. `valid` is only ever set by
/// [`locality_filter`].
#[derive(Clone, Debug, PartialEq)]
pub struct MatchPair {
    pub view0: usize,
    pub view1: usize,
    pub pix0: Vec2,
    pub pix1: Vec2,
    pub p3d0: Vec3,
    pub p3d1: Vec3,
    pub valid: bool,
    pub outlier_gt: Option<bool>,
}

#[derive(Clone, Debug, Default)]
pub struct Lifted {
    pub matches: Vec<MatchPair>,
    /// Pairs dropped because a pixel had no valid depth.
    pub dropped: usize,
}

fn lift_one(f: &Frame, pix: &Vec2) -> Option<Vec3> {
    let (d, _, _) = sample_depth(&f.depth, pix.x, pix.y)?;
    f.camera.backproject(pix, d).ok()
}

/// Lifts parallel pixel lists observed in `frame0` and `frame1`.
pub fn lift_matches(pix0: &[Vec2], pix1: &[Vec2], frame0: &Frame, frame1: &Frame) -> Result<Lifted> {
    if pix0.len() != pix1.len() {
        return Err(Error::InvalidInput(format!(
            "match lists differ in length: {} vs {}",
            pix0.len(),
            pix1.len()
        )));
    }
    let mut out = Lifted::default();
    for (a, b) in pix0.iter().zip(pix1) {
        match (lift_one(frame0, a), lift_one(frame1, b)) {
            (Some(p), Some(q)) => out.matches.push(MatchPair {
                view0: 0,
                view1: 0,
                pix0: *a,
                pix1: *b,
                p3d0: p,
                p3d1: q,
                valid: true,
                outlier_gt: None,
            }),
            _ => out.dropped += 1,
        }
    }
    Ok(out)
}

/// Lifts CSV-style matches addressed by view index into the two frame lists.
pub fn lift_pixel_matches(rows: &[PixelMatch], frames0: &[Frame], frames1: &[Frame]) -> Result<Lifted> {
    let mut out = Lifted::default();
    for r in rows {
        let (Some(f0), Some(f1)) = (frames0.get(r.view0), frames1.get(r.view1)) else {
            return Err(Error::InvalidInput(format!(
                "match references missing view ({}, {})",
                r.view0, r.view1
            )));
        };
        let a = Vec2::new(r.pix0_u, r.pix0_v);
        let b = Vec2::new(r.pix1_u, r.pix1_v);
        match (lift_one(f0, &a), lift_one(f1, &b)) {
            (Some(p), Some(q)) => out.matches.push(MatchPair {
                view0: r.view0,
                view1: r.view1,
                pix0: a,
                pix1: b,
                p3d0: p,
                p3d1: q,
                valid: true,
                outlier_gt: r.is_outlier_gt,
            }),
            _ => out.dropped += 1,
        }
    }
    Ok(out)
}

/// Single-pass 3D locality filter.
///
/// For match `i`, the neighbourhood is every match whose starting point lies
/// within `r` of `p̃_i` (itself included); `m_q` is the mean of those
/// matches' ending points. The match stays valid iff `‖q̃_i − m_q‖ < r_prime`.
/// Neighbourhoods are taken over all input matches regardless of their
/// eventual validity.
pub fn locality_filter(matches: &mut [MatchPair], r: f64, r_prime: f64) {
    let starts: Vec<Vec3> = matches.iter().map(|m| m.p3d0).collect();
    let grid = VoxelGrid::new(&starts, r);
    let flags: Vec<bool> = matches
        .iter()
        .map(|m| {
            let nb = grid.within(&m.p3d0, r);
            if nb.len() <= 1 {
                return true;
            }
            let mean = nb.iter().fold(Vec3::zeros(), |acc, &j| acc + matches[j].p3d1) / nb.len() as f64;
            (m.p3d1 - mean).norm() < r_prime
        })
        .collect();
    for (m, f) in matches.iter_mut().zip(flags) {
        m.valid = f;
    }
}
