//! Per-slice RMSE profiles and moving-insert position/width measurements.

use crate::error::{Error, Result};
use crate::par;
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq)]
pub struct SliceRmseProfile {
    /// RMSE per z slice.
    pub values: Vec<f64>,
    /// Slices with no included voxel (reported as 0).
    pub empty: Vec<bool>,
}

impl SliceRmseProfile {
    pub fn any_empty(&self) -> bool {
        self.empty.iter().any(|&e| e)
    }

    /// Mean over slices `[lo, hi)`.
    pub fn mean_over(&self, lo: usize, hi: usize) -> f64 {
        let hi = hi.min(self.values.len());
        if lo >= hi {
            return 0.0;
        }
        self.values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
    }

    /// Mean over the middle third of the slices.
    pub fn center_third_mean(&self) -> f64 {
        let (lo, hi) = center_third(self.values.len());
        self.mean_over(lo, hi)
    }

    /// Mean over the first and last sixth of the slices together.
    pub fn edge_sixths_mean(&self) -> f64 {
        let n = self.values.len();
        let k = edge_sixth(n);
        if k == 0 {
            return 0.0;
        }
        let sum: f64 = self.values[..k].iter().chain(&self.values[n - k..]).sum();
        sum / (2 * k) as f64
    }
}

/// Slice range `[lo, hi)` of the middle third.
pub fn center_third(nz: usize) -> (usize, usize) {
    let k = nz / 3;
    let lo = (nz - k) / 2;
    (lo, lo + k.max(1).min(nz))
}

/// Number of slices in each outer sixth.
pub fn edge_sixth(nz: usize) -> usize {
    (nz / 6).max(1).min(nz / 2)
}

/// RMSE of `a − b` per slice over voxels where `reference` is nonzero.
pub fn per_slice_rmse(a: &Volume, b: &Volume, reference: &Volume) -> Result<SliceRmseProfile> {
    a.same_shape(b)?;
    a.same_shape(reference)?;
    let nz = a.dims()[2];
    let stats = par::map_collect(nz, |z| {
        let (sa, sb, sr) = (a.slice(z), b.slice(z), reference.slice(z));
        let mut sum = 0.0;
        let mut count = 0usize;
        for k in 0..sa.len() {
            if sr[k].abs() > 0.0 {
                let d = sa[k] - sb[k];
                sum += d * d;
                count += 1;
            }
        }
        (sum, count)
    });
    Ok(SliceRmseProfile {
        values: stats
            .iter()
            .map(|&(s, c)| if c == 0 { 0.0 } else { (s / c as f64).sqrt() })
            .collect(),
        empty: stats.iter().map(|&(_, c)| c == 0).collect(),
    })
}

/// Axis-aligned voxel box `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl RoiBox {
    /// Box of half-width `radius` voxels around `center`, clipped to `dims`.
    pub fn around(center: [usize; 3], radius: usize, dims: [usize; 3]) -> Self {
        let mut lo = [0; 3];
        let mut hi = [0; 3];
        for a in 0..3 {
            lo[a] = center[a].saturating_sub(radius);
            hi[a] = (center[a] + radius + 1).min(dims[a]);
        }
        Self { lo, hi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsertMeasurement {
    /// Intensity-weighted centroid (mm, volume-centered coordinates).
    pub centroid: [f64; 3],
    /// Full width at half maximum along x, y, z (mm).
    pub fwhm: [f64; 3],
}

fn coord(i: f64, n: usize, d: f64) -> f64 {
    (i - (n as f64 - 1.0) / 2.0) * d
}

/// Centroid and per-axis FWHM of the insert inside `roi`, after subtracting
/// the ROI minimum.
pub fn insert_centroid_and_width(x: &Volume, roi: RoiBox) -> Result<InsertMeasurement> {
    let dims = x.dims();
    for a in 0..3 {
        if roi.lo[a] >= roi.hi[a] || roi.hi[a] > dims[a] {
            return Err(Error::InvalidArgument(format!("roi {roi:?} outside volume {dims:?}")));
        }
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for z in roi.lo[2]..roi.hi[2] {
        for y in roi.lo[1]..roi.hi[1] {
            for xi in roi.lo[0]..roi.hi[0] {
                let v = x.get(xi, y, z);
                min = min.min(v);
                max = max.max(v);
            }
        }
    }
    if max <= min {
        return Err(Error::InvalidArgument("roi is flat; no insert to measure".into()));
    }
    let mut mass = 0.0;
    let mut moment = [0.0; 3];
    for z in roi.lo[2]..roi.hi[2] {
        for y in roi.lo[1]..roi.hi[1] {
            for xi in roi.lo[0]..roi.hi[0] {
                let w = x.get(xi, y, z) - min;
                mass += w;
                moment[0] += w * xi as f64;
                moment[1] += w * y as f64;
                moment[2] += w * z as f64;
            }
        }
    }
    let center_idx = moment.map(|m| m / mass);
    let vox = x.voxel_size();
    let centroid = [
        coord(center_idx[0], dims[0], vox[0]),
        coord(center_idx[1], dims[1], vox[1]),
        coord(center_idx[2], dims[2], vox[2]),
    ];
    let nearest: [usize; 3] = std::array::from_fn(|a| {
        (center_idx[a].round() as usize).clamp(roi.lo[a], roi.hi[a] - 1)
    });
    let mut fwhm = [0.0; 3];
    for a in 0..3 {
        let profile: Vec<f64> = (roi.lo[a]..roi.hi[a])
            .map(|i| {
                let mut p = nearest;
                p[a] = i;
                x.get(p[0], p[1], p[2]) - min
            })
            .collect();
        fwhm[a] = width_at_half_max(&profile) * vox[a];
    }
    Ok(InsertMeasurement { centroid, fwhm })
}

/// Width (in samples) of the region around the peak above half its height,
/// with linear interpolation at both crossings.
fn width_at_half_max(profile: &[f64]) -> f64 {
    let (peak_i, &peak) = profile
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty profile");
    if peak <= 0.0 {
        return 0.0;
    }
    let half = peak / 2.0;
    let mut left = 0.0;
    let mut i = peak_i;
    while i > 0 {
        if profile[i - 1] < half {
            let (a, b) = (profile[i - 1], profile[i]);
            left = (i - 1) as f64 + (half - a) / (b - a);
            break;
        }
        i -= 1;
    }
    let mut right = (profile.len() - 1) as f64;
    let mut i = peak_i;
    while i + 1 < profile.len() {
        if profile[i + 1] < half {
            let (a, b) = (profile[i], profile[i + 1]);
            right = i as f64 + (a - half) / (a - b);
            break;
        }
        i += 1;
    }
    right - left
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(dims: [usize; 3], vals: Vec<f64>) -> Volume {
        Volume::from_values(dims, [1.0; 3], vals).unwrap()
    }

    #[test]
    fn identical_volumes_give_zero() {
        let a = vol([2, 2, 3], (0..12).map(|i| i as f64 + 1.0).collect());
        let p = per_slice_rmse(&a, &a, &a).unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));
        assert!(!p.any_empty());
    }

    #[test]
    fn constant_offset() {
        let a = vol([3, 2, 4], (0..24).map(|i| i as f64 + 1.0).collect());
        let b = a.combine(1.0, 0.0, &a);
        let mut b = b;
        b.values_mut().iter_mut().for_each(|v| *v -= 0.25);
        let p = per_slice_rmse(&a, &b, &a).unwrap();
        assert!(p.values.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn hand_case_with_one_excluded_voxel() {
        // Differences 1, 2, 3, (excluded 10): sqrt((1 + 4 + 9) / 3).
        let a = vol([2, 2, 1], vec![1.0, 2.0, 3.0, 10.0]);
        let b = vol([2, 2, 1], vec![0.0, 0.0, 0.0, 0.0]);
        let r = vol([2, 2, 1], vec![5.0, -1.0, 2.0, 0.0]);
        let p = per_slice_rmse(&a, &b, &r).unwrap();
        assert!((p.values[0] - (14.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empty_slice_flagged() {
        let a = vol([1, 1, 2], vec![1.0, 2.0]);
        let r = vol([1, 1, 2], vec![0.0, 1.0]);
        let p = per_slice_rmse(&a, &r, &r).unwrap();
        assert_eq!(p.values[0], 0.0);
        assert!(p.empty[0] && !p.empty[1]);
    }

    #[test]
    fn dimension_mismatch() {
        let a = vol([1, 1, 2], vec![1.0, 2.0]);
        let b = vol([2, 1, 1], vec![1.0, 2.0]);
        assert!(per_slice_rmse(&a, &b, &a).is_err());
    }

    #[test]
    fn slab_ranges() {
        assert_eq!(center_third(64), (21, 42));
        assert_eq!(edge_sixth(64), 10);
        assert_eq!(center_third(3), (1, 2));
    }

    fn ball(dims: [usize; 3], c: [f64; 3], r: f64) -> Volume {
        let mut v = Volume::zeros(dims, [1.0; 3]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2);
                    if d2 <= r * r {
                        let j = v.index(x, y, z);
                        v.values_mut()[j] = 1.0;
                    }
                }
            }
        }
        v
    }

    #[test]
    fn centroid_of_symmetric_ball_and_translation() {
        let dims = [21, 21, 21];
        let roi = RoiBox::around([10, 10, 10], 9, dims);
        let m = insert_centroid_and_width(&ball(dims, [10.0; 3], 5.0), roi).unwrap();
        assert!(m.centroid.iter().all(|c| c.abs() < 1e-12));
        // FWHM of a rasterized radius-5 ball along an axis: 11 voxels inside,
        // crossing midway to the neighbours.
        assert!(m.fwhm.iter().all(|&w| (w - 11.0).abs() < 1e-12));
        let shifted = insert_centroid_and_width(&ball(dims, [13.0, 10.0, 10.0], 5.0), roi).unwrap();
        assert!((shifted.centroid[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn centroid_scale_invariant_and_flat_rejected() {
        let dims = [15, 15, 15];
        let roi = RoiBox::around([7, 7, 7], 6, dims);
        let b = ball(dims, [6.0, 8.0, 7.0], 3.0);
        let m1 = insert_centroid_and_width(&b, roi).unwrap();
        let m2 = insert_centroid_and_width(&b.combine(3.5, 0.0, &b), roi).unwrap();
        for a in 0..3 {
            assert!((m1.centroid[a] - m2.centroid[a]).abs() < 1e-12);
        }
        let flat = Volume::zeros(dims, [1.0; 3]);
        assert!(insert_centroid_and_width(&flat, roi).is_err());
    }
}
