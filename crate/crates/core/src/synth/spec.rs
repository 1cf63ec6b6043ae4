//! Scene descriptions and the bundled example objects.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{compose_joint, JointKind, JointParams, RigidMotion, Vec3};

/// Axis-aligned cuboid in the rest pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    pub center: [f64; 3],
    pub half: [f64; 3],
}

impl Cuboid {
    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn half(&self) -> Vec3 {
        Vec3::from(self.half)
    }

    pub fn surface_area(&self) -> f64 {
        let [a, b, c] = self.half;
        8.0 * (a * b + b * c + a * c)
    }
}

/// A 1-DoF joint. The joint value `v` (radians or meters) moves the part
/// from its rest pose; states are drawn inside `limits`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub kind: JointKind,
    pub axis: [f64; 3],
    /// A point on the rotation axis; ignored for prismatic joints.
    #[serde(default)]
    pub origin: [f64; 3],
    pub limits: [f64; 2],
}

impl JointSpec {
    pub fn value_at(&self, s: f64) -> f64 {
        self.limits[0] + s * (self.limits[1] - self.limits[0])
    }

    /// Joint parameters for joint value `v` measured from the rest pose.
    pub fn params(&self, v: f64) -> JointParams {
        let axis = Vec3::from(self.axis).normalize();
        match self.kind {
            JointKind::Revolute => JointParams::revolute(axis, Vec3::from(self.origin), v),
            JointKind::Prismatic => JointParams::prismatic(axis, v),
        }
    }

    /// Rest-to-posed motion at joint value `v`.
    pub fn motion(&self, v: f64) -> RigidMotion {
        compose_joint(&self.params(v))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub name: String,
    pub shape: Cuboid,
    pub joint: JointSpec,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseSpec {
    pub shape: Cuboid,
    pub color: [f64; 3],
}

/// Camera placement: views sit on a sphere segment around the base center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub radius: [f64; 2],
    /// Azimuth about world `+y`, 0 = looking at the `+z` face.
    pub azimuth_deg: [f64; 2],
    pub elevation_deg: [f64; 2],
}

impl Default for ViewSpec {
    fn default() -> Self {
        ViewSpec {
            n_train: 24,
            n_test: 6,
            width: 160,
            height: 160,
            fov_deg: 45.0,
            radius: [1.7, 2.2],
            azimuth_deg: [-70.0, 70.0],
            elevation_deg: [10.0, 45.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchSpec {
    pub per_part: usize,
    /// Sub-pixel samples drawn around each seed pixel.
    pub cluster: usize,
    pub outlier_rate: f64,
    /// Minimum distance between an outlier's ending point and its true
    /// partner (meters).
    pub outlier_offset: f64,
}

impl Default for MatchSpec {
    fn default() -> Self {
        MatchSpec {
            per_part: 64,
            cluster: 8,
            outlier_rate: 0.1,
            outlier_offset: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub base: BaseSpec,
    pub parts: Vec<PartSpec>,
    #[serde(default)]
    pub views: ViewSpec,
    #[serde(default)]
    pub matches: MatchSpec,
    #[serde(default = "default_state0")]
    pub state0_range: [f64; 2],
    #[serde(default = "default_state1")]
    pub state1_range: [f64; 2],
    /// Probability of dropping each view-local mask.
    #[serde(default)]
    pub mask_dropout: f64,
    #[serde(default = "default_true")]
    pub permute_labels: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_state0() -> [f64; 2] {
    [0.65, 0.75]
}

fn default_state1() -> [f64; 2] {
    [0.35, 0.45]
}

fn default_true() -> bool {
    true
}

pub const MAX_PARTS: usize = 20;

impl SceneSpec {
    /// Total part count, static base included.
    pub fn n_parts(&self) -> usize {
        self.parts.len() + 1
    }

    /// Cuboid of part `p` (0 = base).
    pub fn shape(&self, p: usize) -> &Cuboid {
        if p == 0 {
            &self.base.shape
        } else {
            &self.parts[p - 1].shape
        }
    }

    pub fn color(&self, p: usize) -> [f64; 3] {
        if p == 0 {
            self.base.color
        } else {
            self.parts[p - 1].color
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_parts();
        if !(2..=MAX_PARTS).contains(&n) {
            return Err(Error::InvalidConfig(format!(
                "scene has {n} parts; supported range is 2..={MAX_PARTS}"
            )));
        }
        let bad = |what: String| Err(Error::InvalidConfig(what));
        for p in 0..n {
            let s = self.shape(p);
            if s.half.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
                return bad(format!("part {p}: cuboid half extents must be positive"));
            }
            if s.center.iter().any(|c| !c.is_finite()) {
                return bad(format!("part {p}: non-finite center"));
            }
        }
        for (i, part) in self.parts.iter().enumerate() {
            let j = &part.joint;
            if j.limits.iter().any(|l| !l.is_finite()) || j.limits[0] > j.limits[1] {
                return bad(format!("part {}: joint limits must be finite and ordered", i + 1));
            }
            if Vec3::from(j.axis).norm() < 1e-9 {
                return bad(format!("part {}: zero joint axis", i + 1));
            }
        }
        for r in [self.state0_range, self.state1_range] {
            if !(0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0) {
                return bad("state ranges must lie in [0, 1]".into());
            }
        }
        let v = &self.views;
        if v.n_train < 2 || v.width < 8 || v.height < 8 {
            return bad("need at least 2 training views of at least 8x8 pixels".into());
        }
        if !(v.fov_deg > 1.0 && v.fov_deg < 170.0) || !(v.radius[0] > 0.0 && v.radius[0] <= v.radius[1]) {
            return bad("invalid field of view or camera radius".into());
        }
        if !(0.0..=1.0).contains(&self.matches.outlier_rate) || !(0.0..=1.0).contains(&self.mask_dropout) {
            return bad("rates must lie in [0, 1]".into());
        }
        if self.matches.cluster == 0 {
            return bad("match cluster size must be positive".into());
        }
        Ok(())
    }

    /// Looks up a bundled scene by name.
    pub fn builtin(name: &str) -> Option<SceneSpec> {
        match name {
            "door2" => Some(door2()),
            "still2" => Some(still2()),
            "cabinet5" => Some(cabinet5()),
            "grid10" => Some(grid10()),
            "grid20" => Some(grid20()),
            _ => None,
        }
    }

    pub const BUILTIN: [&'static str; 5] = ["door2", "still2", "cabinet5", "grid10", "grid20"];
}

const QUARTER: f64 = std::f64::consts::FRAC_PI_2;
const PANEL: f64 = 0.01;

fn cuboid(center: [f64; 3], half: [f64; 3]) -> Cuboid {
    Cuboid { center, half }
}

fn revolute(axis: [f64; 3], origin: [f64; 3]) -> JointSpec {
    JointSpec {
        kind: JointKind::Revolute,
        axis,
        origin,
        limits: [0.0, QUARTER],
    }
}

fn prismatic(axis: [f64; 3], travel: f64) -> JointSpec {
    JointSpec {
        kind: JointKind::Prismatic,
        axis,
        origin: [0.0; 3],
        limits: [0.0, travel],
    }
}

/// Distinct, well separated part colors.
const PALETTE: [[f64; 3]; 20] = [
    [0.55, 0.55, 0.58],
    [0.85, 0.35, 0.25],
    [0.25, 0.55, 0.85],
    [0.35, 0.75, 0.35],
    [0.90, 0.75, 0.25],
    [0.65, 0.35, 0.75],
    [0.25, 0.75, 0.75],
    [0.90, 0.50, 0.65],
    [0.55, 0.40, 0.25],
    [0.45, 0.85, 0.60],
    [0.80, 0.60, 0.40],
    [0.40, 0.40, 0.80],
    [0.75, 0.80, 0.35],
    [0.30, 0.50, 0.40],
    [0.85, 0.45, 0.45],
    [0.50, 0.70, 0.90],
    [0.70, 0.55, 0.85],
    [0.95, 0.65, 0.35],
    [0.40, 0.65, 0.30],
    [0.60, 0.30, 0.45],
];

fn part(i: usize, name: &str, shape: Cuboid, joint: JointSpec) -> PartSpec {
    PartSpec {
        name: name.to_string(),
        shape,
        joint,
        color: PALETTE[i % PALETTE.len()],
    }
}

fn base(center: [f64; 3], half: [f64; 3]) -> BaseSpec {
    BaseSpec {
        shape: cuboid(center, half),
        color: PALETTE[0],
    }
}

fn scene(name: &str, base: BaseSpec, parts: Vec<PartSpec>, views: ViewSpec) -> SceneSpec {
    SceneSpec {
        name: name.to_string(),
        base,
        parts,
        views,
        matches: MatchSpec::default(),
        state0_range: default_state0(),
        state1_range: default_state1(),
        mask_dropout: 0.0,
        permute_labels: true,
        seed: 0,
    }
}

/// A box with one hinged door on its front face.
pub fn door2() -> SceneSpec {
    let door = part(
        1,
        "door",
        cuboid([0.0, 0.4, 0.25 + PANEL], [0.28, 0.38, PANEL]),
        revolute([0.0, -1.0, 0.0], [-0.28, 0.4, 0.25]),
    );
    scene("door2", base([0.0, 0.4, 0.0], [0.3, 0.4, 0.25]), vec![door], ViewSpec::default())
}

/// `door2` with a fixed joint value, so both states coincide.
pub fn still2() -> SceneSpec {
    let mut s = door2();
    s.name = "still2".into();
    s.parts[0].joint.limits = [0.6, 0.6];
    s
}

/// Two doors over two drawers.
pub fn cabinet5() -> SceneSpec {
    let z = 0.3 + PANEL;
    let travel = 0.4 * 0.6;
    let parts = vec![
        part(
            1,
            "left_door",
            cuboid([-0.2, 0.75, z], [0.19, 0.24, PANEL]),
            revolute([0.0, -1.0, 0.0], [-0.39, 0.75, 0.3]),
        ),
        part(
            2,
            "right_door",
            cuboid([0.2, 0.75, z], [0.19, 0.24, PANEL]),
            revolute([0.0, 1.0, 0.0], [0.39, 0.75, 0.3]),
        ),
        part(
            3,
            "upper_drawer",
            cuboid([0.0, 0.37, z], [0.38, 0.11, PANEL]),
            prismatic([0.0, 0.0, 1.0], travel),
        ),
        part(
            4,
            "lower_drawer",
            cuboid([0.0, 0.13, z], [0.38, 0.11, PANEL]),
            prismatic([0.0, 0.0, 1.0], travel),
        ),
    ];
    let views = ViewSpec {
        radius: [2.0, 2.5],
        ..ViewSpec::default()
    };
    scene("cabinet5", base([0.0, 0.5, 0.0], [0.4, 0.5, 0.3]), parts, views)
}

/// Front grid of doors and drawers plus side doors and lids, filling
/// `cols x rows` front cells. Rows alternate doors (even) and drawers (odd),
/// counted from the top.
fn grid(name: &str, half: [f64; 3], cols: usize, rows: usize, lids: usize) -> SceneSpec {
    let [hx, hy, hz] = half;
    let cy = hy;
    let z = hz + PANEL;
    let travel = 0.4 * 2.0 * hz;
    let cw = 2.0 * hx / cols as f64;
    let ch = 2.0 * hy / rows as f64;
    let gap = 0.01;
    let mut parts = Vec::new();
    for r in 0..rows {
        let yc = 2.0 * hy - (r as f64 + 0.5) * ch;
        for c in 0..cols {
            let xc = -hx + (c as f64 + 0.5) * cw;
            let shape = cuboid([xc, yc, z], [cw / 2.0 - gap, ch / 2.0 - gap, PANEL]);
            let i = parts.len() + 1;
            // drawers on the bottom row, where they hide nothing when open
            if r + 1 < rows {
                // hinge on the left edge for the left half, right edge otherwise
                let (axis, hinge_x) = if xc <= 0.0 {
                    ([0.0, -1.0, 0.0], xc - cw / 2.0 + gap)
                } else {
                    ([0.0, 1.0, 0.0], xc + cw / 2.0 - gap)
                };
                parts.push(part(i, &format!("door_r{r}c{c}"), shape, revolute(axis, [hinge_x, yc, hz])));
            } else {
                parts.push(part(i, &format!("drawer_r{r}c{c}"), shape, prismatic([0.0, 0.0, 1.0], travel)));
            }
        }
    }
    // side doors hinged on their front edge
    let side_h = hy * 0.8;
    for (sx, axis) in [(1.0, [0.0, -1.0, 0.0]), (-1.0, [0.0, 1.0, 0.0])] {
        let i = parts.len() + 1;
        let name = if sx > 0.0 { "side_door_right" } else { "side_door_left" };
        parts.push(part(
            i,
            name,
            cuboid([sx * (hx + PANEL), cy, 0.0], [PANEL, side_h, hz - gap]),
            revolute(axis, [sx * hx, cy, hz - gap]),
        ));
    }
    // lids hinged on their back edge, side by side along x
    let lw = 2.0 * hx / lids as f64;
    for l in 0..lids {
        let i = parts.len() + 1;
        let xc = -hx + (l as f64 + 0.5) * lw;
        parts.push(part(
            i,
            &format!("lid{l}"),
            cuboid([xc, 2.0 * hy + PANEL, 0.0], [lw / 2.0 - gap, PANEL, hz - gap]),
            revolute([-1.0, 0.0, 0.0], [xc, 2.0 * hy, -(hz - gap)]),
        ));
    }
    let views = ViewSpec {
        radius: [2.0 * hy / 0.5, 2.45 * hy / 0.5],
        azimuth_deg: [-110.0, 110.0],
        // low enough that open upper panels do not hide the rows below
        elevation_deg: [15.0, 40.0],
        n_train: 36,
        ..ViewSpec::default()
    };
    scene(name, base([0.0, hy, 0.0], half), parts, views)
}

/// Ten parts: 3 doors, 3 drawers, 2 side doors, 1 lid.
pub fn grid10() -> SceneSpec {
    grid("grid10", [0.5, 0.5, 0.3], 3, 2, 1)
}

/// Twenty parts: 10 doors, 5 drawers, 2 side doors, 2 lids.
pub fn grid20() -> SceneSpec {
    grid("grid20", [0.6, 0.6, 0.3], 5, 3, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate_with_expected_part_counts() {
        let expect = [("door2", 2), ("still2", 2), ("cabinet5", 5), ("grid10", 10), ("grid20", 20)];
        for (name, n) in expect {
            let s = SceneSpec::builtin(name).unwrap();
            s.validate().unwrap();
            assert_eq!(s.n_parts(), n, "{name}");
        }
    }

    #[test]
    fn doors_open_outwards() {
        for name in SceneSpec::BUILTIN {
            let s = SceneSpec::builtin(name).unwrap();
            for p in &s.parts {
                if p.joint.kind != JointKind::Revolute || p.joint.limits[1] == p.joint.limits[0] {
                    continue;
                }
                // the panel center must move away from the base
                let c = p.shape.center();
                let moved = p.joint.motion(p.joint.limits[1]).apply(&c);
                let base = s.base.shape.center();
                let out = |x: &Vec3| {
                    let d = x - base;
                    let h = s.base.shape.half();
                    (d.x.abs() / h.x).max(d.y.abs() / h.y).max(d.z.abs() / h.z)
                };
                assert!(out(&moved) > out(&c), "{name}/{}", p.name);
            }
        }
    }

    #[test]
    fn spec_round_trips_through_json() {
        let s = cabinet5();
        let text = serde_json::to_string(&s).unwrap();
        let back: SceneSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn rejects_out_of_range_part_counts() {
        let mut s = door2();
        s.parts.clear();
        assert!(s.validate().is_err());
        let mut s = grid20();
        s.parts.push(s.parts[0].clone());
        assert!(s.validate().is_err());
    }
}
