//! Conversions between the image grid (`H x W`) and the feature grid (`h x w`).

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{BinaryMask, ConfidenceMap};

/// Block-wise majority reduction: an output cell is foreground iff at least
/// half of its `H/h x W/w` block is foreground.
pub fn downsample_mask(m: &BinaryMask, height: usize, width: usize) -> Result<BinaryMask> {
    if height == 0 || width == 0 || !m.height().is_multiple_of(height) || !m.width().is_multiple_of(width) {
        return Err(Error::Resolution(format!(
            "{}x{} does not divide into {height}x{width} blocks",
            m.height(),
            m.width()
        )));
    }
    let (bh, bw) = (m.height() / height, m.width() / width);
    let block = bh * bw;
    Ok(BinaryMask::from_fn(height, width, |r, c| {
        let mut fg = 0;
        for y in r * bh..(r + 1) * bh {
            for x in c * bw..(c + 1) * bw {
                fg += m.get(y, x) as usize;
            }
        }
        2 * fg >= block
    }))
}

/// Bilinear upsampling with half-pixel centre alignment and edge clamping.
pub fn upsample_map<T: Scalar>(cm: &ConfidenceMap<T>, height: usize, width: usize) -> Result<ConfidenceMap<T>> {
    if height < cm.height() || width < cm.width() {
        return Err(Error::Resolution(format!(
            "cannot upsample {}x{} to smaller {height}x{width}",
            cm.height(),
            cm.width()
        )));
    }
    let rows: Vec<_> = (0..height).map(|y| source_coord::<T>(y, cm.height(), height)).collect();
    let cols: Vec<_> = (0..width).map(|x| source_coord::<T>(x, cm.width(), width)).collect();
    let mut data = Vec::with_capacity(height * width);
    for &(y0, y1, ty) in &rows {
        for &(x0, x1, tx) in &cols {
            let top = lerp(cm.get(y0, x0), cm.get(y0, x1), tx);
            let bottom = lerp(cm.get(y1, x0), cm.get(y1, x1), tx);
            data.push(lerp(top, bottom, ty));
        }
    }
    ConfidenceMap::new(height, width, data)
}

fn source_coord<T: Scalar>(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, T) {
    let scale = T::of(src_len as f64) / T::of(dst_len as f64);
    let half = T::of(0.5);
    let s = ((T::of(dst as f64) + half) * scale - half)
        .max(T::zero())
        .min(T::of((src_len - 1) as f64));
    let i0 = s.floor().to_usize().unwrap_or(0).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - T::of(i0 as f64))
}

fn lerp<T: Scalar>(a: T, b: T, t: T) -> T {
    if t.is_zero() {
        a
    } else {
        a + (b - a) * t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_and_empty_masks_survive_downsampling() {
        let full = BinaryMask::from_fn(256, 256, |_, _| true);
        assert_eq!(downsample_mask(&full, 64, 64).unwrap().count(), 64 * 64);
        assert!(downsample_mask(&BinaryMask::new(256, 256), 64, 64).unwrap().is_empty());
    }

    #[test]
    fn aligned_block_maps_to_one_cell() {
        let m = BinaryMask::from_fn(256, 256, |r, c| (8..12).contains(&r) && (20..24).contains(&c));
        let d = downsample_mask(&m, 64, 64).unwrap();
        assert_eq!(d.count(), 1);
        assert!(d.get(2, 5));
    }

    #[test]
    fn majority_threshold() {
        // 7 of 16 pixels = 0.4375 < 0.5
        let mut seven = BinaryMask::new(4, 4);
        (0..7).for_each(|i| seven.set(i / 4, i % 4, true));
        assert!(!downsample_mask(&seven, 1, 1).unwrap().get(0, 0));
        let mut eight = seven.clone();
        eight.set(1, 3, true);
        assert!(downsample_mask(&eight, 1, 1).unwrap().get(0, 0));
    }

    #[test]
    fn non_divisible_is_resolution_error() {
        assert!(matches!(
            downsample_mask(&BinaryMask::new(10, 10), 3, 5),
            Err(Error::Resolution(_))
        ));
        let cm = ConfidenceMap::filled(4, 4, 0.0f64);
        assert!(matches!(upsample_map(&cm, 2, 8), Err(Error::Resolution(_))));
    }

    #[test]
    fn constant_and_identity_upsampling() {
        let cm = ConfidenceMap::filled(3, 5, 0.3f64);
        let up = upsample_map(&cm, 17, 40).unwrap();
        assert!(up.as_slice().iter().all(|&v| v == 0.3));

        let data: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let cm = ConfidenceMap::new(3, 4, data).unwrap();
        assert_eq!(upsample_map(&cm, 3, 4).unwrap(), cm);
    }

    /// Reference bilinear evaluation written directly from the half-pixel rule.
    fn brute_bilinear(src: &[[f64; 2]; 2], h_out: usize, w_out: usize, y: usize, x: usize) -> f64 {
        let clamp = |v: f64| v.clamp(0.0, 1.0);
        let sy = clamp((y as f64 + 0.5) * 2.0 / h_out as f64 - 0.5);
        let sx = clamp((x as f64 + 0.5) * 2.0 / w_out as f64 - 0.5);
        let mut acc = 0.0;
        for (i, row) in src.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let wy = 1.0 - (sy - i as f64).abs();
                let wx = 1.0 - (sx - j as f64).abs();
                acc += v * wy.max(0.0) * wx.max(0.0);
            }
        }
        acc
    }

    #[test]
    fn two_by_two_ramp_is_monotone_per_row() {
        let cm = ConfidenceMap::new(2, 2, vec![0.0f64, 1.0, 0.0, 1.0]).unwrap();
        let up = upsample_map(&cm, 8, 8).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let expect = brute_bilinear(&[[0.0, 1.0], [0.0, 1.0]], 8, 8, y, x);
                assert!((up.get(y, x) - expect).abs() < 1e-12);
                if x > 0 {
                    assert!(up.get(y, x) >= up.get(y, x - 1));
                }
            }
        }
    }
}
