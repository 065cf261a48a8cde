use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Array;

/// Per-channel patches of a history batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    /// `B × M × PN × PL`
    pub patches: Array<f32>,
    /// `B × M × PN`, flattened; `true` marks a masked patch.
    pub mask: Vec<bool>,
    /// Patch values before masking; `None` when nothing has been masked.
    pub originals: Option<Array<f32>>,
    pub patch_len: usize,
    pub stride: usize,
}

impl PatchSet {
    pub fn batch_size(&self) -> usize {
        self.patches.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.patches.shape()[1]
    }

    pub fn num_patches(&self) -> usize {
        self.patches.shape()[2]
    }

    /// Values the model should reconstruct: the pre-mask patches.
    pub fn target(&self) -> &Array<f32> {
        self.originals.as_ref().unwrap_or(&self.patches)
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Mask broadcast to element level (`B × M × PN × PL`), 1 where masked.
    pub fn element_mask(&self) -> Array<f32> {
        let pl = self.patch_len;
        Array::from_fn(self.patches.shape(), |i| if self.mask[i / pl] { 1.0 } else { 0.0 })
    }
}

/// Number of patches for a length-`lookback` sequence: `⌊(L − PL)/S⌋ + 2`.
pub fn patch_count(lookback: usize, patch_len: usize, stride: usize) -> Result<usize> {
    if patch_len == 0 || stride == 0 {
        return Err(Error::Sizing("patch length and stride must be positive".into()));
    }
    if patch_len > lookback {
        return Err(Error::Sizing(format!(
            "patch length {patch_len} exceeds lookback {lookback}"
        )));
    }
    Ok((lookback - patch_len) / stride + 2)
}

/// Splits `history` (`B × L × M`) into `B × M × PN × PL` patches.
///
/// Each channel is extended by repeating its final value `stride` times;
/// patch `p` then covers padded rows `p·S .. p·S + PL`.
pub fn patchify(history: &Array<f32>, patch_len: usize, stride: usize) -> Result<PatchSet> {
    let &[b, l, m] = history.shape() else {
        return Err(Error::Dimension {
            op: "patchify",
            lhs: history.shape().to_vec(),
            rhs: vec![3],
        });
    };
    let pn = patch_count(l, patch_len, stride)?;
    let src = history.data();
    let mut out = Vec::with_capacity(b * m * pn * patch_len);
    for bi in 0..b {
        for c in 0..m {
            for p in 0..pn {
                for j in 0..patch_len {
                    let row = (p * stride + j).min(l - 1);
                    out.push(src[(bi * l + row) * m + c]);
                }
            }
        }
    }
    Ok(PatchSet {
        patches: Array::from_parts(vec![b, m, pn, patch_len], out),
        mask: vec![false; b * m * pn],
        originals: None,
        patch_len,
        stride,
    })
}

/// Patches masked per channel for a ratio, rounding halves up.
pub fn mask_count(num_patches: usize, ratio: f64) -> usize {
    (ratio * num_patches as f64 + 0.5).floor() as usize
}

/// Zero-fills `round(ratio · PN)` patches per (window, channel), drawn
/// uniformly without replacement from a `seed`-determined stream.
pub fn mask_patches(ps: &PatchSet, ratio: f64, seed: u64) -> Result<PatchSet> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Contract(format!("mask ratio must lie in (0, 1), got {ratio}")));
    }
    let (pn, pl) = (ps.num_patches(), ps.patch_len);
    let count = mask_count(pn, ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ps.clone();
    out.originals = Some(ps.target().clone());
    let groups = ps.batch_size() * ps.channels();
    for g in 0..groups {
        for p in sample(&mut rng, pn, count) {
            let idx = g * pn + p;
            out.mask[idx] = true;
            out.patches.data_mut()[idx * pl..(idx + 1) * pl].fill(0.0);
        }
    }
    Ok(out)
}

/// Zeroes every history row (`B × L × M`) covered by a masked patch, so
/// branches that read the raw history see the same hidden content.
pub fn mask_history(history: &Array<f32>, ps: &PatchSet) -> Array<f32> {
    let (l, m) = (history.shape()[1], history.shape()[2]);
    let (pn, pl, s) = (ps.num_patches(), ps.patch_len, ps.stride);
    let mut out = history.clone();
    for (idx, _) in ps.mask.iter().enumerate().filter(|(_, &masked)| masked) {
        let p = idx % pn;
        let c = (idx / pn) % m;
        let b = idx / (pn * m);
        for row in (p * s)..(p * s + pl).min(l) {
            out.data_mut()[(b * l + row) * m + c] = 0.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(b: usize, l: usize, m: usize) -> Array<f32> {
        Array::from_fn(&[b, l, m], |i| i as f32)
    }

    #[test]
    fn counts() {
        assert_eq!(patch_count(512, 12, 12).unwrap(), 43);
        assert_eq!(patch_count(12, 12, 12).unwrap(), 2);
        assert!(matches!(patch_count(8, 12, 12), Err(Error::Sizing(_))));
        let pns: Vec<usize> = [48, 96, 192, 336, 512, 720]
            .iter()
            .map(|&l| patch_count(l, 12, 12).unwrap())
            .collect();
        assert_eq!(pns, vec![5, 9, 17, 29, 43, 61]);
    }

    #[test]
    fn hand_unrolled_slicing() {
        let h = Array::from_fn(&[1, 24, 1], |i| i as f32);
        let ps = patchify(&h, 12, 12).unwrap();
        assert_eq!(ps.num_patches(), 3);
        let p = |k: usize| ps.patches.data()[k * 12..(k + 1) * 12].to_vec();
        assert_eq!(p(0), (0..12).map(|v| v as f32).collect::<Vec<_>>());
        assert_eq!(p(1), (12..24).map(|v| v as f32).collect::<Vec<_>>());
        assert_eq!(p(2), vec![23.0; 12]);
        assert!(ps.mask.iter().all(|&m| !m));
    }

    #[test]
    fn overlapping_patches_read_the_right_rows() {
        let h = series(2, 10, 3);
        let ps = patchify(&h, 4, 3).unwrap();
        assert_eq!(ps.num_patches(), 4);
        for b in 0..2 {
            for c in 0..3 {
                for p in 0..4 {
                    for j in 0..4 {
                        let row = (p * 3 + j).min(9);
                        assert_eq!(ps.patches.at(&[b, c, p, j]), h.at(&[b, row, c]));
                    }
                }
            }
        }
    }

    #[test]
    fn mask_sizes() {
        assert_eq!(mask_count(43, 0.5), 22);
        assert_eq!(mask_count(2, 0.5), 1);
        let ps = patchify(&series(3, 512, 2), 12, 12).unwrap();
        let masked = mask_patches(&ps, 0.5, 1).unwrap();
        for g in 0..6 {
            let n = masked.mask[g * 43..(g + 1) * 43].iter().filter(|&&m| m).count();
            assert_eq!(n, 22);
        }
        assert!(mask_patches(&ps, 0.0, 1).is_err());
        assert!(mask_patches(&ps, 1.0, 1).is_err());
    }

    #[test]
    fn masks_are_seeded() {
        let ps = patchify(&series(4, 96, 3), 12, 12).unwrap();
        let a = mask_patches(&ps, 0.5, 7).unwrap();
        assert_eq!(a, mask_patches(&ps, 0.5, 7).unwrap());
        assert_ne!(a.mask, mask_patches(&ps, 0.5, 8).unwrap().mask);
    }

    #[test]
    fn masked_history_hides_covered_rows() {
        let h = series(1, 24, 1).map(|v| v + 1.0);
        let mut ps = patchify(&h, 12, 12).unwrap();
        ps.mask[1] = true;
        let hidden = mask_history(&h, &ps);
        assert!(hidden.data()[..12].iter().all(|&v| v != 0.0));
        assert!(hidden.data()[12..].iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn patch_count_formula(pl in 2usize..=16, extra in 0usize..=48, s_frac in 0.0f64..1.0) {
            let l = pl + extra;
            let s = 1 + ((pl - 1) as f64 * s_frac) as usize;
            let ps = patchify(&series(1, l, 1), pl, s).unwrap();
            prop_assert_eq!(ps.num_patches(), (l - pl) / s + 2);
            // The last patch ends inside the padded sequence.
            prop_assert!((ps.num_patches() - 1) * s + pl <= l + s);
        }

        #[test]
        fn non_overlapping_patches_rebuild_history(pl in 1usize..=8, k in 1usize..=6, m in 1usize..=3) {
            let l = pl * k;
            let h = Array::from_fn(&[2, l, m], |i| (i as f32).sin());
            let ps = patchify(&h, pl, pl).unwrap();
            for b in 0..2 {
                for c in 0..m {
                    for row in 0..l {
                        let v = ps.patches.at(&[b, c, row / pl, row % pl]);
                        prop_assert_eq!(v.to_bits(), h.at(&[b, row, c]).to_bits());
                    }
                }
            }
        }

        #[test]
        fn masking_touches_only_masked_patches(seed in 0u64..1000, ratio in 0.05f64..0.95) {
            let h = Array::from_fn(&[2, 40, 2], |i| 1.0 + i as f32);
            let ps = patchify(&h, 8, 4).unwrap();
            let masked = mask_patches(&ps, ratio, seed).unwrap();
            for (idx, &m) in masked.mask.iter().enumerate() {
                let a = &ps.patches.data()[idx * 8..(idx + 1) * 8];
                let b = &masked.patches.data()[idx * 8..(idx + 1) * 8];
                if m {
                    prop_assert!(b.iter().all(|&v| v == 0.0));
                } else {
                    prop_assert_eq!(a, b);
                }
            }
            prop_assert_eq!(masked.target(), &ps.patches);
        }
    }
}
