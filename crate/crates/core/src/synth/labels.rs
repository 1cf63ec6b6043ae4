//! Per-view mask relabeling that mimics an inconsistent 2D segmenter.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::grid::{Grid, LabelMap};
use crate::synth::render::{stream, TAG_LABELS};

/// View-local masks together with the ground-truth mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct PermutedLabels {
    pub labels: Vec<LabelMap>,
    /// `local_to_gt[v][local]` is the ground-truth label of local id `local`
    /// in view `v` (entry 0 is background).
    pub local_to_gt: Vec<Vec<u16>>,
}

/// Replaces each view's ground-truth labels by dense view-local ids
/// `1..=M_v`. Each mask is dropped (set to background) with probability
/// `dropout`; the surviving masks are shuffled with a per-view stream of
/// `seed`, or kept in ascending ground-truth order when `seed` is `None`.
pub fn permute_labels(gt: &[LabelMap], dropout: f64, seed: Option<u64>, state: u8) -> PermutedLabels {
    let mut labels = Vec::with_capacity(gt.len());
    let mut local_to_gt = Vec::with_capacity(gt.len());
    for (v, map) in gt.iter().enumerate() {
        let present: BTreeSet<u16> = map.data.iter().copied().filter(|l| *l != 0).collect();
        let mut rng = stream(seed.unwrap_or(0), TAG_LABELS, state as u64, v as u64);
        let mut kept: Vec<u16> = present
            .into_iter()
            .filter(|_| dropout <= 0.0 || rng.random::<f64>() >= dropout)
            .collect();
        if seed.is_some() {
            kept.shuffle(&mut rng);
        }
        let mut forward = vec![0u16; map.data.iter().copied().max().unwrap_or(0) as usize + 1];
        let mut back = vec![0u16];
        for (i, g) in kept.iter().enumerate() {
            forward[*g as usize] = (i + 1) as u16;
            back.push(*g);
        }
        let data = map.data.iter().map(|&l| forward[l as usize]).collect();
        labels.push(Grid::from_vec(map.width, map.height, data));
        local_to_gt.push(back);
    }
    PermutedLabels { labels, local_to_gt }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maps() -> Vec<LabelMap> {
        (0..5)
            .map(|v| Grid::from_vec(4, 2, vec![0, 1, 1, 2, 3, 3, 3, (v % 2) as u16 * 4]))
            .collect()
    }

    #[test]
    fn identity_draw_keeps_labels() {
        let gt = maps();
        let p = permute_labels(&gt, 0.0, None, 0);
        assert_eq!(p.labels, gt);
    }

    #[test]
    fn permutation_is_dense_and_invertible() {
        let gt = maps();
        let p = permute_labels(&gt, 0.0, Some(9), 1);
        for (v, map) in gt.iter().enumerate() {
            let local = &p.labels[v];
            let m = *local.data.iter().max().unwrap() as usize;
            let distinct: BTreeSet<u16> = local.data.iter().copied().filter(|l| *l != 0).collect();
            assert_eq!(distinct.len(), m);
            for i in 0..map.data.len() {
                assert_eq!(p.local_to_gt[v][local.data[i] as usize], map.data[i]);
            }
        }
        assert_eq!(p, permute_labels(&gt, 0.0, Some(9), 1));
    }

    #[test]
    fn full_dropout_clears_every_mask() {
        let p = permute_labels(&maps(), 1.0, Some(1), 0);
        assert!(p.labels.iter().all(|m| m.data.iter().all(|l| *l == 0)));
    }
}
