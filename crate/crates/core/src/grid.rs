//! Dense row-major 2D rasters (color, depth, label maps).

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Grid {
            width,
            height,
            data: vec![fill; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid data length");
        Grid {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        let i = self.idx(x, y);
        self.data[i] = v;
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

pub type DepthMap = Grid<f32>;
pub type LabelMap = Grid<u16>;
pub type RgbImage = Grid<[f32; 3]>;

/// Bilinear stencil around a continuous pixel position. Pixel `(i, j)` has
/// its center at integer coordinates `(i, j)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil {
    pub x0: usize,
    pub y0: usize,
    pub fx: f64,
    pub fy: f64,
}

impl Stencil {
    pub fn at(width: usize, height: usize, u: f64, v: f64) -> Option<Stencil> {
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let x0 = u.floor();
        let y0 = v.floor();
        // the upper neighbour must exist; exact hits on the last row/column
        // fall back to the previous cell with unit weight.
        let (x0, fx) = if x0 as usize + 1 < width {
            (x0 as usize, u - x0)
        } else if u <= (width - 1) as f64 && width >= 2 {
            (width - 2, 1.0)
        } else {
            return None;
        };
        let (y0, fy) = if y0 as usize + 1 < height {
            (y0 as usize, v - y0)
        } else if v <= (height - 1) as f64 && height >= 2 {
            (height - 2, 1.0)
        } else {
            return None;
        };
        Some(Stencil { x0, y0, fx, fy })
    }

    #[inline]
    pub fn corners(&self) -> [(usize, usize); 4] {
        [
            (self.x0, self.y0),
            (self.x0 + 1, self.y0),
            (self.x0, self.y0 + 1),
            (self.x0 + 1, self.y0 + 1),
        ]
    }

    /// Interpolated value and its (d/du, d/dv) for the four corner samples.
    #[inline]
    pub fn interp(&self, c: [f64; 4]) -> (f64, f64, f64) {
        let (fx, fy) = (self.fx, self.fy);
        let top = c[0] * (1.0 - fx) + c[1] * fx;
        let bot = c[2] * (1.0 - fx) + c[3] * fx;
        let val = top * (1.0 - fy) + bot * fy;
        let du = (c[1] - c[0]) * (1.0 - fy) + (c[3] - c[2]) * fy;
        let dv = bot - top;
        (val, du, dv)
    }
}

/// Depth at a continuous pixel position, interpolating inverse depth so that
/// planar surfaces are reproduced exactly. Returns `(depth, d/du, d/dv)`, or
/// `None` when any of the four neighbours lacks valid depth.
pub(crate) fn sample_depth(depth: &DepthMap, u: f64, v: f64) -> Option<(f64, f64, f64)> {
    let st = Stencil::at(depth.width, depth.height, u, v)?;
    let mut inv = [0.0; 4];
    for (k, (x, y)) in st.corners().into_iter().enumerate() {
        let d = *depth.get(x, y) as f64;
        if !(d > 0.0) {
            return None;
        }
        inv[k] = 1.0 / d;
    }
    let (iv, du, dv) = st.interp(inv);
    let d = 1.0 / iv;
    Some((d, -d * d * du, -d * d * dv))
}

/// Bilinear color sample with per-channel gradients.
pub(crate) fn sample_rgb(img: &RgbImage, u: f64, v: f64) -> Option<([f64; 3], [f64; 3], [f64; 3])> {
    let st = Stencil::at(img.width, img.height, u, v)?;
    let corners = st.corners();
    let mut val = [0.0; 3];
    let mut du = [0.0; 3];
    let mut dv = [0.0; 3];
    for ch in 0..3 {
        let c = corners.map(|(x, y)| img.get(x, y)[ch] as f64);
        let (a, b, d) = st.interp(c);
        val[ch] = a;
        du[ch] = b;
        dv[ch] = d;
    }
    Some((val, du, dv))
}

/// Label at the pixel nearest to a continuous position.
pub(crate) fn nearest_label(labels: &LabelMap, u: f64, v: f64) -> Option<u16> {
    let x = u.round();
    let y = v.round();
    if x < 0.0 || y < 0.0 || x >= labels.width as f64 || y >= labels.height as f64 {
        return None;
    }
    Some(*labels.get(x as usize, y as usize))
}
