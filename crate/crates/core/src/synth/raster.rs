//! Triangle z-buffer rasterizer with perspective-correct depth.

use crate::geom::{Camera, Vec3};
use crate::grid::Grid;

/// Cameras closer than this to a vertex skip the whole triangle.
const NEAR: f64 = 1e-3;

#[derive(Clone, Copy, Debug)]
pub struct Triangle {
    pub v: [Vec3; 3],
    /// Outward normal in world space (used for backface culling).
    pub normal: Vec3,
    /// Non-zero face id written to the id buffer.
    pub id: u32,
}

/// Camera-space depth (0 = empty) and face id (0 = empty) per pixel.
pub struct Raster {
    pub depth: Grid<f64>,
    pub id: Grid<u32>,
}

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Rasterizes at pixel centers (integer coordinates). Back-facing triangles
/// and triangles touching the near plane are skipped; the nearest surface
/// wins each pixel.
pub fn rasterize(cam: &Camera, tris: &[Triangle]) -> Raster {
    let (w, h) = (cam.width, cam.height);
    let mut depth = Grid::new(w, h, f64::INFINITY);
    let mut id = Grid::new(w, h, 0u32);
    let k = cam.intrinsics();
    let eye = cam.center();
    for t in tris {
        if t.normal.dot(&(t.v[0] - eye)) >= 0.0 {
            continue;
        }
        let xc = t.v.map(|v| cam.to_camera(&v));
        if xc.iter().any(|x| x.z <= NEAR) {
            log::debug!("triangle {} crosses the near plane; skipped", t.id);
            continue;
        }
        let p = xc.map(|x| {
            let hp = k * x;
            (hp.x / hp.z, hp.y / hp.z)
        });
        let inv_z = xc.map(|x| 1.0 / x.z);
        let area = edge(p[0], p[1], p[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let min_x = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_x = p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max).floor().min(w as f64 - 1.0);
        let min_y = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_y = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max).floor().min(h as f64 - 1.0);
        if min_x > max_x || min_y > max_y {
            continue;
        }
        for y in min_y as usize..=max_y as usize {
            for x in min_x as usize..=max_x as usize {
                let q = (x as f64, y as f64);
                let b0 = edge(p[1], p[2], q) / area;
                let b1 = edge(p[2], p[0], q) / area;
                let b2 = edge(p[0], p[1], q) / area;
                if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                    continue;
                }
                // 1/z is affine in screen space
                let z = 1.0 / (b0 * inv_z[0] + b1 * inv_z[1] + b2 * inv_z[2]);
                let i = depth.idx(x, y);
                if z < depth.data[i] {
                    depth.data[i] = z;
                    id.data[i] = t.id;
                }
            }
        }
    }
    for d in depth.data.iter_mut() {
        if !d.is_finite() {
            *d = 0.0;
        }
    }
    Raster { depth, id }
}
