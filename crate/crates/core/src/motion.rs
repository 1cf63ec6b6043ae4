//! The articulated motion field: global motion bases blended per primitive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{quat_identity, Mat3, RigidMotion, Vec3};

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// Back-propagates `dL/dw` through `w = softmax(z)`: `dL/dz_k = w_k (g_k - w·g)`.
pub(crate) fn softmax_backward(w: &[f64], g: &[f64], out: &mut [f64]) {
    let dot: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
    for k in 0..w.len() {
        out[k] += w[k] * (g[k] - dot);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionBasis {
    pub motion: RigidMotion,
    pub prismatic_locked: bool,
}

impl MotionBasis {
    pub fn identity() -> Self {
        MotionBasis {
            motion: RigidMotion::identity(),
            prismatic_locked: false,
        }
    }
}

/// `N` motion bases; basis 0 is the static part and stays the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionField {
    pub bases: Vec<MotionBasis>,
}

impl MotionField {
    pub fn new(n_parts: usize) -> Result<Self> {
        if n_parts < 2 {
            return Err(Error::InvalidInput(format!(
                "a motion field needs at least 2 parts, got {n_parts}"
            )));
        }
        Ok(MotionField {
            bases: vec![MotionBasis::identity(); n_parts],
        })
    }

    pub fn n_parts(&self) -> usize {
        self.bases.len()
    }

    pub fn rotations(&self) -> Vec<Mat3> {
        self.bases.iter().map(|b| b.motion.rotation()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bases.len() < 2 {
            return Err(Error::InvalidInput("motion field has fewer than 2 bases".into()));
        }
        if !self.bases[0].motion.is_identity() {
            return Err(Error::InvalidInput("static basis is not the identity".into()));
        }
        for (j, b) in self.bases.iter().enumerate() {
            if (b.motion.q.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("basis {j} quaternion not unit")));
            }
            if b.prismatic_locked && b.motion.q != quat_identity() {
                return Err(Error::InvalidInput(format!("locked basis {j} carries a rotation")));
            }
        }
        Ok(())
    }

    /// Locks every movable basis whose rotation stayed below `eps_deg`:
    /// its quaternion is reset to the identity and it stops rotating.
    /// Returns the indices locked by this call.
    pub fn detect_prismatic(&mut self, eps_deg: f64) -> Vec<usize> {
        let eps = eps_deg.to_radians();
        let mut locked = Vec::new();
        for (j, b) in self.bases.iter_mut().enumerate().skip(1) {
            if !b.prismatic_locked && b.motion.angle() < eps {
                b.prismatic_locked = true;
                b.motion.q = quat_identity();
                locked.push(j);
            }
        }
        locked
    }
}

/// Per-primitive motion as the literal weighted sums `(Σ w_j R_j, Σ w_j T_j)`
/// with `w = softmax(logits)`. The matrix is generally not a rotation.
pub fn soft_blend(logits: &[f64], field: &MotionField) -> (Mat3, Vec3) {
    let w = softmax(logits);
    let mut r = Mat3::zeros();
    let mut t = Vec3::zeros();
    for (wj, b) in w.iter().zip(&field.bases) {
        r += b.motion.rotation() * *wj;
        t += b.motion.t * *wj;
    }
    (r, t)
}

/// Index of the largest logit; ties resolve to the lowest index.
pub fn hard_assign(logits: &[f64]) -> usize {
    let mut best = 0;
    for (j, l) in logits.iter().enumerate() {
        if *l > logits[best] {
            best = j;
        }
    }
    best
}

/// One-hot logits for part `label`; the effective weights are their softmax.
pub fn init_weights(label: usize, n_parts: usize) -> Result<Vec<f64>> {
    init_weights_scaled(label, n_parts, 1.0)
}

/// One-hot logits of height `scale` (`scale = 1` is the plain one-hot).
pub fn init_weights_scaled(label: usize, n_parts: usize, scale: f64) -> Result<Vec<f64>> {
    if label >= n_parts {
        return Err(Error::InvalidInput(format!(
            "part label {label} out of range for {n_parts} parts"
        )));
    }
    let mut l = vec![0.0; n_parts];
    l[label] = scale;
    Ok(l)
}
