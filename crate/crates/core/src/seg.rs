//! Multi-view part-mask consistency.
//!
//! Each view carries its own arbitrary mask ids. Masks are lifted to 3D with
//! the view's depth, reprojected into neighbouring views, matched by IoU with
//! a one-to-one assignment, and the resulting match graph's connected
//! components become global part labels. A second pass maps the labels of
//! one joint state onto the other by voting with cross-state matches.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::corr::MatchPair;
use crate::frame::Frame;
use crate::geom::{Camera, Vec2};
use crate::grid::{nearest_label, sample_depth, DepthMap, Grid, LabelMap};
use crate::hungarian::max_weight_matching;

/// Per-view mask ids (0 = background, `1..=M` view-local ids).
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub view: usize,
    pub state: u8,
    pub labels: LabelMap,
}

impl MaskSet {
    pub fn from_frame(f: &Frame) -> Self {
        MaskSet {
            view: f.view,
            state: f.state,
            labels: f.labels.clone(),
        }
    }

    /// Largest mask id present.
    pub fn n_masks(&self) -> usize {
        max_label(&self.labels)
    }
}

fn max_label(labels: &LabelMap) -> usize {
    labels.data.iter().copied().max().unwrap_or(0) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegConfig {
    /// Neighbouring views matched per view (by camera-center distance).
    pub k_nn_views: usize,
    pub min_iou: f64,
    /// Masks smaller than this many pixels are ignored.
    pub min_mask_pixels: usize,
    /// Components observed in fewer views are discarded.
    pub min_component_views: usize,
    /// Sub-pixel samples per axis when reprojecting.
    pub supersample: usize,
    /// Score view pairs with [`iou_matrix_covisible`] instead of plain IoU.
    pub covisible_iou: bool,
    /// Reprojected points farther than this (meters) behind the destination
    /// view's depth are treated as occluded; 0 disables the test.
    pub occlusion_tol: f64,
}

impl Default for SegConfig {
    fn default() -> Self {
        SegConfig {
            k_nn_views: 4,
            min_iou: 0.3,
            min_mask_pixels: 20,
            min_component_views: 2,
            supersample: 2,
            covisible_iou: true,
            occlusion_tol: 0.01,
        }
    }
}

/// Reprojects every masked source pixel into the destination camera; the
/// nearest surface wins each destination pixel, unhit pixels stay 0. Each
/// source pixel is split into 2×2 samples so magnified regions stay filled.
pub fn reproject_mask(src: &MaskSet, depth: &DepthMap, src_cam: &Camera, dst_cam: &Camera) -> LabelMap {
    reproject_mask_ss(src, depth, src_cam, dst_cam, 2, None)
}

/// [`reproject_mask`] with `supersample`² samples per source pixel (depth
/// interpolated between them). `occlusion`: destination depth and tolerance;
/// points lying more than the tolerance behind the observed destination
/// surface are dropped.
pub fn reproject_mask_ss(
    src: &MaskSet,
    depth: &DepthMap,
    src_cam: &Camera,
    dst_cam: &Camera,
    supersample: usize,
    occlusion: Option<(&DepthMap, f64)>,
) -> LabelMap {
    let (w, h) = (dst_cam.width, dst_cam.height);
    let mut out = Grid::new(w, h, 0u16);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let ss = supersample.max(1);
    let offsets: Vec<f64> = (0..ss).map(|k| (k as f64 + 0.5) / ss as f64 - 0.5).collect();
    let mut splat = |x: &crate::geom::Vec3, label: u16| {
        if let Some(p) = dst_cam.project(x) {
            let (u, v) = (p.pixel.x.round(), p.pixel.y.round());
            if u >= 0.0 && v >= 0.0 && (u as usize) < w && (v as usize) < h {
                let i = v as usize * w + u as usize;
                if let Some((dst, tol)) = occlusion {
                    let seen = dst.data[i] as f64;
                    if seen > 0.0 && p.depth > seen + tol {
                        return;
                    }
                }
                if p.depth < zbuf[i] {
                    zbuf[i] = p.depth;
                    out.data[i] = label;
                }
            }
        }
    };
    for y in 0..src.labels.height {
        for x in 0..src.labels.width {
            let label = *src.labels.get(x, y);
            let d = *depth.get(x, y) as f64;
            if label == 0 || !(d > 0.0) {
                continue;
            }
            for oy in &offsets {
                for ox in &offsets {
                    let (u, v) = (x as f64 + ox, y as f64 + oy);
                    let ds = if ss == 1 {
                        d
                    } else {
                        sample_depth(depth, u, v).map(|s| s.0).unwrap_or(d)
                    };
                    if let Ok(p) = src_cam.backproject(&Vec2::new(u, v), ds) {
                        splat(&p, label);
                    }
                }
            }
        }
    }
    out
}

/// `S[s][t] = IoU(mask s+1 of a, mask t+1 of b)`.
pub fn iou_matrix(a: &LabelMap, n_a: usize, b: &LabelMap, n_b: usize) -> Vec<Vec<f64>> {
    assert!(a.same_shape(b), "iou_matrix needs equal resolutions");
    let mut inter = vec![vec![0usize; n_b]; n_a];
    let mut area_a = vec![0usize; n_a];
    let mut area_b = vec![0usize; n_b];
    for (la, lb) in a.data.iter().zip(&b.data) {
        let (la, lb) = (*la as usize, *lb as usize);
        if la > 0 && la <= n_a {
            area_a[la - 1] += 1;
        }
        if lb > 0 && lb <= n_b {
            area_b[lb - 1] += 1;
            if la > 0 && la <= n_a {
                inter[la - 1][lb - 1] += 1;
            }
        }
    }
    (0..n_a)
        .map(|s| {
            (0..n_b)
                .map(|t| {
                    let i = inter[s][t];
                    let u = area_a[s] + area_b[t] - i;
                    if u == 0 {
                        0.0
                    } else {
                        i as f64 / u as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// IoU restricted to the pixels of `b` that `a` covers: the union counts
/// `b`'s mask only where a reprojected source pixel landed, so regions the
/// source camera never saw do not dilute the score.
pub fn iou_matrix_covisible(a: &LabelMap, n_a: usize, b: &LabelMap, n_b: usize) -> Vec<Vec<f64>> {
    assert!(a.same_shape(b), "iou_matrix needs equal resolutions");
    let covered = Grid::from_vec(
        b.width,
        b.height,
        a.data.iter().zip(&b.data).map(|(&la, &lb)| if la > 0 { lb } else { 0 }).collect(),
    );
    iou_matrix(a, n_a, &covered, n_b)
}

/// Maximum-weight one-to-one matching, keeping pairs with IoU `>= min_iou`.
pub fn match_views(s: &[Vec<f64>], min_iou: f64) -> Vec<(usize, usize)> {
    max_weight_matching(s)
        .into_iter()
        .filter(|&(a, b)| s[a][b] >= min_iou)
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartNode {
    /// Position of the view in the input slice.
    pub view_index: usize,
    pub view: usize,
    pub local: u16,
    pub area: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartEdge {
    pub a: usize,
    pub b: usize,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegWarning {
    /// Edges left out because they would put two masks of one view into
    /// the same part (node pairs with their IoU).
    Conflict { edges: Vec<(usize, usize, f64)> },
    /// The matched views split into several disconnected clusters, so a
    /// physical part may appear as several components.
    FragmentedViews { clusters: usize },
    /// A view without valid depth; its masks stay isolated.
    NoDepth { view: usize },
    DroppedComponent { nodes: Vec<usize>, area: usize },
}

/// Mask match graph and its connected components.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartGraph {
    pub nodes: Vec<PartNode>,
    pub edges: Vec<PartEdge>,
    /// Global label (1-based) per node; `None` for discarded nodes.
    pub labels: Vec<Option<u16>>,
    pub n_parts: usize,
    /// Total pixel area per global label (index = label - 1).
    pub part_areas: Vec<usize>,
    pub warnings: Vec<SegWarning>,
    #[serde(skip)]
    lookup: BTreeMap<(usize, u16), usize>,
}

impl PartGraph {
    pub fn global_label(&self, view_index: usize, local: u16) -> Option<u16> {
        self.lookup
            .get(&(view_index, local))
            .and_then(|&n| self.labels[n])
    }

    /// Rewrites a view's local mask ids into global labels (0 when unknown).
    pub fn relabel(&self, view_index: usize, local: &LabelMap) -> LabelMap {
        let mut cache: BTreeMap<u16, u16> = BTreeMap::new();
        let data = local
            .data
            .iter()
            .map(|&l| {
                if l == 0 {
                    0
                } else {
                    *cache
                        .entry(l)
                        .or_insert_with(|| self.global_label(view_index, l).unwrap_or(0))
                }
            })
            .collect();
        Grid::from_vec(local.width, local.height, data)
    }

    pub fn has_warnings(&self) -> bool {
        !self.warnings.is_empty()
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

/// Adds the shortest camera-to-camera links between disconnected clusters of
/// the k-nearest-view graph until it is connected (Kruskal order).
fn bridge_clusters(mut neighbours: Vec<Vec<usize>>, centers: &[crate::geom::Vec3]) -> Vec<Vec<usize>> {
    let n = centers.len();
    let mut uf = UnionFind((0..n).collect());
    for (i, nb) in neighbours.iter().enumerate() {
        for &j in nb {
            uf.union(i, j);
        }
    }
    let mut pairs: Vec<(f64, usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| ((centers[i] - centers[j]).norm(), i, j))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, i, j) in pairs {
        if uf.find(i) != uf.find(j) {
            uf.union(i, j);
            neighbours[i].push(j);
        }
    }
    neighbours
}

/// Builds the cross-view mask graph for the frames of one state.
pub fn build_part_graph(frames: &[Frame], cfg: &SegConfig) -> PartGraph {
    let n = frames.len();
    let mut warnings = Vec::new();

    let mut nodes = Vec::new();
    let mut lookup = BTreeMap::new();
    let mut n_masks = vec![0usize; n];
    for (vi, f) in frames.iter().enumerate() {
        let m = max_label(&f.labels);
        let mut area = vec![0usize; m + 1];
        for &l in &f.labels.data {
            area[l as usize] += 1;
        }
        for local in 1..=m {
            if area[local] > 0 && area[local] >= cfg.min_mask_pixels {
                lookup.insert((vi, local as u16), nodes.len());
                nodes.push(PartNode {
                    view_index: vi,
                    view: f.view,
                    local: local as u16,
                    area: area[local],
                });
            }
        }
        n_masks[vi] = m;
    }
    let has_depth: Vec<bool> = frames
        .iter()
        .map(|f| f.depth.data.iter().any(|d| *d > 0.0))
        .collect();
    for (vi, ok) in has_depth.iter().enumerate() {
        if !ok {
            warnings.push(SegWarning::NoDepth { view: frames[vi].view });
        }
    }

    // k nearest views by camera-center distance
    let centers: Vec<_> = frames.iter().map(|f| f.camera.center()).collect();
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| {
                (centers[a] - centers[i])
                    .norm()
                    .total_cmp(&(centers[b] - centers[i]).norm())
                    .then(a.cmp(&b))
            });
            others.truncate(cfg.k_nn_views);
            others
        })
        .collect();
    let neighbours = bridge_clusters(neighbours, &centers);

    // breadth-first sweep from the anchor (the view with the most masks)
    let mut edges = Vec::new();
    let mut done_pairs = BTreeSet::new();
    let mut visited = vec![false; n];
    let mut view_uf = UnionFind((0..n).collect());
    loop {
        let start = (0..n)
            .filter(|&i| !visited[i])
            .max_by(|&a, &b| n_masks[a].cmp(&n_masks[b]).then(b.cmp(&a)));
        let Some(start) = start else { break };
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &w in &neighbours[v] {
                let key = (v.min(w), v.max(w));
                if done_pairs.insert(key) && has_depth[v] {
                    let src = MaskSet::from_frame(&frames[v]);
                    let reproj = reproject_mask_ss(
                        &src,
                        &frames[v].depth,
                        &frames[v].camera,
                        &frames[w].camera,
                        cfg.supersample,
                        (cfg.occlusion_tol > 0.0).then_some((&frames[w].depth, cfg.occlusion_tol)),
                    );
                    let s = if cfg.covisible_iou {
                        iou_matrix_covisible(&reproj, n_masks[v], &frames[w].labels, n_masks[w])
                    } else {
                        iou_matrix(&reproj, n_masks[v], &frames[w].labels, n_masks[w])
                    };
                    for (a, b) in match_views(&s, cfg.min_iou) {
                        let na = lookup.get(&(v, a as u16 + 1));
                        let nb = lookup.get(&(w, b as u16 + 1));
                        if let (Some(&na), Some(&nb)) = (na, nb) {
                            edges.push(PartEdge { a: na, b: nb, iou: s[a][b] });
                            view_uf.union(v, w);
                        }
                    }
                }
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    let clusters = {
        let roots: BTreeSet<usize> = (0..n).map(|i| view_uf.find(i)).collect();
        roots.len()
    };
    if clusters > 1 {
        warnings.push(SegWarning::FragmentedViews { clusters });
    }

    // Union by descending IoU; an edge joining two components that already
    // share a view is rejected.
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by(|&i, &j| edges[j].iou.total_cmp(&edges[i].iou).then(i.cmp(&j)));
    let mut uf = UnionFind((0..nodes.len()).collect());
    let mut comp_views: Vec<BTreeSet<usize>> = nodes.iter().map(|n| BTreeSet::from([n.view_index])).collect();
    let mut rejected = Vec::new();
    for i in order {
        let e = &edges[i];
        let (ra, rb) = (uf.find(e.a), uf.find(e.b));
        if ra == rb {
            continue;
        }
        if !comp_views[ra].is_disjoint(&comp_views[rb]) {
            rejected.push((e.a, e.b, e.iou));
            continue;
        }
        uf.union(ra, rb);
        let root = uf.find(ra);
        let merged: BTreeSet<usize> = comp_views[ra].union(&comp_views[rb]).copied().collect();
        comp_views[root] = merged;
    }
    if !rejected.is_empty() {
        warnings.push(SegWarning::Conflict { edges: rejected });
    }
    let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..nodes.len() {
        comps.entry(uf.find(i)).or_default().push(i);
    }
    let mut kept: Vec<(usize, Vec<usize>)> = Vec::new();
    for (_, members) in comps {
        let views: BTreeSet<usize> = members.iter().map(|&m| nodes[m].view_index).collect();
        let area: usize = members.iter().map(|&m| nodes[m].area).sum();
        if views.len() < cfg.min_component_views {
            warnings.push(SegWarning::DroppedComponent { nodes: members, area });
        } else {
            kept.push((area, members));
        }
    }
    kept.sort_by(|a, b| b.0.cmp(&a.0).then(a.1[0].cmp(&b.1[0])));

    let mut labels = vec![None; nodes.len()];
    let mut part_areas = Vec::with_capacity(kept.len());
    for (k, (area, members)) in kept.iter().enumerate() {
        let label = (k + 1) as u16;
        for &m in members {
            labels[m] = Some(label);
        }
        part_areas.push(*area);
    }

    PartGraph {
        n_parts: kept.len(),
        nodes,
        edges,
        labels,
        part_areas,
        warnings,
        lookup,
    }
}

/// Cross-state label alignment: `mapping[l1]` is the state-0 label that
/// state-1 label `l1` maps to (index 0 unused).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateAlignment {
    pub mapping: Vec<Option<u16>>,
    /// `votes[l1][l0]`.
    pub votes: Vec<Vec<usize>>,
    pub unmapped: Vec<u16>,
    /// State-0 labels claimed by more than one state-1 label.
    pub collisions: Vec<u16>,
}

impl StateAlignment {
    pub fn apply(&self, labels: &LabelMap) -> LabelMap {
        let data = labels
            .data
            .iter()
            .map(|&l| self.mapping.get(l as usize).copied().flatten().unwrap_or(0))
            .collect();
        Grid::from_vec(labels.width, labels.height, data)
    }
}

/// Maps each state-1 global label to the state-0 label receiving the most
/// votes from valid matches. `labels0`/`labels1` are globally-labeled masks
/// indexed like the match view indices.
pub fn align_states(
    labels0: &[LabelMap],
    n_parts0: usize,
    labels1: &[LabelMap],
    n_parts1: usize,
    matches: &[MatchPair],
) -> StateAlignment {
    let mut votes = vec![vec![0usize; n_parts0 + 1]; n_parts1 + 1];
    for m in matches.iter().filter(|m| m.valid) {
        let (Some(a), Some(b)) = (labels0.get(m.view0), labels1.get(m.view1)) else {
            continue;
        };
        let l0 = nearest_label(a, m.pix0.x, m.pix0.y).unwrap_or(0) as usize;
        let l1 = nearest_label(b, m.pix1.x, m.pix1.y).unwrap_or(0) as usize;
        if l0 > 0 && l1 > 0 && l0 <= n_parts0 && l1 <= n_parts1 {
            votes[l1][l0] += 1;
        }
    }
    let mut mapping = vec![None; n_parts1 + 1];
    let mut unmapped = Vec::new();
    let mut claimed: BTreeMap<u16, usize> = BTreeMap::new();
    for l1 in 1..=n_parts1 {
        let row = &votes[l1];
        let best = (1..=n_parts0).max_by(|&a, &b| row[a].cmp(&row[b]).then(b.cmp(&a)));
        match best {
            Some(b) if row[b] > 0 => {
                mapping[l1] = Some(b as u16);
                *claimed.entry(b as u16).or_default() += 1;
            }
            _ => unmapped.push(l1 as u16),
        }
    }
    let collisions = claimed.into_iter().filter(|(_, c)| *c > 1).map(|(l, _)| l).collect();
    StateAlignment {
        mapping,
        votes,
        unmapped,
        collisions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Mat3, Vec3};
    use nalgebra::Matrix4;

    fn lm(w: usize, h: usize, f: impl Fn(usize, usize) -> u16) -> LabelMap {
        let data = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Grid::from_vec(w, h, data)
    }

    #[test]
    fn iou_basic_cases() {
        let a = lm(10, 10, |x, _| if x < 4 { 1 } else { 0 });
        let b = lm(10, 10, |x, _| if x >= 6 { 1 } else { 0 });
        assert_eq!(iou_matrix(&a, 1, &b, 1)[0][0], 0.0);
        assert_eq!(iou_matrix(&a, 1, &a, 1)[0][0], 1.0);
        // equal areas overlapping by half: 2 / (4 + 4 - 2) in columns
        let c = lm(10, 10, |x, _| if (2..6).contains(&x) { 1 } else { 0 });
        let counted = {
            let (mut i, mut u) = (0, 0);
            for (p, q) in a.data.iter().zip(&c.data) {
                i += (*p == 1 && *q == 1) as usize;
                u += (*p == 1 || *q == 1) as usize;
            }
            i as f64 / u as f64
        };
        let s = iou_matrix(&a, 1, &c, 1)[0][0];
        assert_eq!(s, counted);
        assert!((s - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_transpose_symmetry() {
        let a = lm(12, 9, |x, y| ((x / 3 + y / 4) % 4) as u16);
        let b = lm(12, 9, |x, y| ((x / 4 + 2 * y / 3) % 3) as u16);
        let ab = iou_matrix(&a, 3, &b, 2);
        let ba = iou_matrix(&b, 2, &a, 3);
        for s in 0..3 {
            for t in 0..2 {
                assert_eq!(ab[s][t], ba[t][s]);
            }
        }
    }

    #[test]
    fn match_views_cases() {
        assert_eq!(match_views(&[vec![0.9, 0.0], vec![0.0, 0.8]], 0.3), vec![(0, 0), (1, 1)]);
        assert_eq!(match_views(&[vec![0.1, 0.9], vec![0.8, 0.2]], 0.3), vec![(0, 1), (1, 0)]);
        assert!(match_views(&[vec![0.1, 0.2], vec![0.25, 0.05]], 0.3).is_empty());
    }

    fn flat_cam(w: usize) -> Camera {
        let k = Mat3::new(50.0, 0.0, (w as f64 - 1.0) / 2.0, 0.0, 50.0, (w as f64 - 1.0) / 2.0, 0.0, 0.0, 1.0);
        Camera::new(k, Matrix4::identity(), w, w).unwrap()
    }

    #[test]
    fn reprojection_identity_camera() {
        let cam = flat_cam(20);
        let labels = lm(20, 20, |x, y| if x > 5 && y > 3 { 1 + (x > 12) as u16 } else { 0 });
        let depth = Grid::from_vec(20, 20, (0..400).map(|i| 1.0 + (i % 20) as f32 * 0.01).collect());
        let src = MaskSet { view: 0, state: 0, labels: labels.clone() };
        assert_eq!(reproject_mask(&src, &depth, &cam, &cam), labels);
        assert_eq!(reproject_mask_ss(&src, &depth, &cam, &cam, 2, None), labels);
        let empty = MaskSet { view: 0, state: 0, labels: Grid::new(20, 20, 0) };
        assert!(reproject_mask(&empty, &depth, &cam, &cam).data.iter().all(|l| *l == 0));
    }

    #[test]
    fn reprojection_z_buffer_nearest_wins() {
        // two source pixels land on the same destination pixel
        let cam = flat_cam(5);
        let mut labels = Grid::new(5, 5, 0u16);
        labels.set(2, 2, 1);
        labels.set(3, 2, 2);
        let mut depth = Grid::new(5, 5, 0.0f32);
        depth.set(2, 2, 2.0);
        depth.set(3, 2, 1.0);
        let src = MaskSet { view: 0, state: 0, labels };
        // a destination camera far away along the axis squeezes both together
        let mut e = Matrix4::identity();
        e[(2, 3)] = 40.0;
        let dst = Camera::new(*cam.intrinsics(), e, 5, 5).unwrap();
        let out = reproject_mask(&src, &depth, &cam, &dst);
        let hits: Vec<u16> = out.data.iter().copied().filter(|l| *l != 0).collect();
        assert_eq!(hits, vec![2]);
        let _ = Vec3::zeros();
    }

    #[test]
    fn align_majority_vote() {
        let l0 = vec![lm(4, 4, |x, _| if x < 2 { 1 } else { 2 })];
        let l1 = vec![lm(4, 4, |x, _| if x < 2 { 2 } else { 1 })];
        let mk = |p0: (f64, f64), p1: (f64, f64)| MatchPair {
            view0: 0,
            view1: 0,
            pix0: Vec2::new(p0.0, p0.1),
            pix1: Vec2::new(p1.0, p1.1),
            p3d0: Vec3::zeros(),
            p3d1: Vec3::zeros(),
            valid: true,
            outlier_gt: None,
        };
        let mut ms = Vec::new();
        for _ in 0..40 {
            ms.push(mk((0.0, 0.0), (3.0, 0.0))); // state-1 label 1 -> state-0 label 1
        }
        for _ in 0..3 {
            ms.push(mk((3.0, 0.0), (3.0, 1.0))); // 1 -> 2, minority
        }
        let a = align_states(&l0, 2, &l1, 2, &ms);
        assert_eq!(a.mapping[1], Some(1));
        assert_eq!(a.unmapped, vec![2]);
        assert_eq!(a.votes[1][1], 40);
        assert_eq!(a.votes[1][2], 3);
    }
}
