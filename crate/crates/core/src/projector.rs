//! Ray-driven cone-beam projector with an exactly matched back projector.
//!
//! Each detector reading is the line integral along the segment from the
//! source to the detector element center, approximated by samples spaced at
//! half the smallest voxel dimension (measured from the source, so the sample
//! positions do not depend on the clipping box) and trilinear interpolation
//! between voxel centers. The back projector scatters the very same
//! interpolation weights, so it is the transpose of the forward operator up to
//! floating-point rounding.
//!
//! Back projection accumulates views in fixed groups whose partial images are
//! summed in view order; the result does not depend on the number of threads.

pub use crate::volume::{Sinogram, Volume};

use crate::error::{Error, Result};
use crate::geometry::{Geometry, Mask, SubsetKind, ViewSubset};
use crate::par;
use crate::weights::{view_transition_weights, TransitionMode, TransitionWeights};

/// Views per back-projection accumulation group.
const VIEWS_PER_GROUP: usize = 8;

/// Precomputed sampling parameters shared by all rays.
struct RayTracer<'g> {
    geometry: &'g Geometry,
    dims: [usize; 3],
    inv_voxel: [f64; 3],
    offset: [f64; 3],
    lo: [f64; 3],
    hi: [f64; 3],
    step: f64,
}

impl<'g> RayTracer<'g> {
    fn new(geometry: &'g Geometry) -> Self {
        let dims = geometry.volume_dims();
        let vox = geometry.voxel_size();
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        let mut offset = [0.0; 3];
        let mut inv_voxel = [0.0; 3];
        for a in 0..3 {
            let n = dims[a] as f64;
            // Trilinear support extends one voxel past the outermost centers.
            hi[a] = (n + 1.0) / 2.0 * vox[a];
            lo[a] = -hi[a];
            offset[a] = (n - 1.0) / 2.0;
            inv_voxel[a] = 1.0 / vox[a];
        }
        let step = 0.5 * vox.iter().cloned().fold(f64::INFINITY, f64::min);
        Self {
            geometry,
            dims,
            inv_voxel,
            offset,
            lo,
            hi,
            step,
        }
    }

    /// Calls `visit(voxel_index, weight)` for every interpolation tap along
    /// the ray of `(view, row, col)`; weights already include the step length.
    #[inline]
    fn trace<F: FnMut(usize, f64)>(&self, view: usize, row: usize, col: usize, mut visit: F) {
        let src = self.geometry.source_position(view);
        let det = self.geometry.detector_position(view, row, col);
        let mut dir = [det[0] - src[0], det[1] - src[1], det[2] - src[2]];
        let len = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        for d in dir.iter_mut() {
            *d /= len;
        }
        // Slab clipping against the trilinear support box.
        let mut t0 = 0.0f64;
        let mut t1 = len;
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                if src[a] <= self.lo[a] || src[a] >= self.hi[a] {
                    return;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let (mut ta, mut tb) = ((self.lo[a] - src[a]) * inv, (self.hi[a] - src[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        if t0 >= t1 {
            return;
        }
        let step = self.step;
        let k0 = (t0 / step).ceil() as i64;
        let k1 = (t1 / step).floor() as i64;
        let [nx, ny, nz] = self.dims;
        let plane = nx * ny;
        for k in k0..=k1 {
            let t = k as f64 * step;
            let fx = (src[0] + t * dir[0]) * self.inv_voxel[0] + self.offset[0];
            let fy = (src[1] + t * dir[1]) * self.inv_voxel[1] + self.offset[1];
            let fz = (src[2] + t * dir[2]) * self.inv_voxel[2] + self.offset[2];
            let (x0, y0, z0) = (fx.floor(), fy.floor(), fz.floor());
            let (wx1, wy1, wz1) = (fx - x0, fy - y0, fz - z0);
            let (x0, y0, z0) = (x0 as i64, y0 as i64, z0 as i64);
            let xs = [(x0, 1.0 - wx1), (x0 + 1, wx1)];
            let ys = [(y0, 1.0 - wy1), (y0 + 1, wy1)];
            let zs = [(z0, 1.0 - wz1), (z0 + 1, wz1)];
            for &(iz, wz) in &zs {
                if iz < 0 || iz >= nz as i64 || wz == 0.0 {
                    continue;
                }
                for &(iy, wy) in &ys {
                    if iy < 0 || iy >= ny as i64 || wy == 0.0 {
                        continue;
                    }
                    let wzy = step * wz * wy;
                    let base = iz as usize * plane + iy as usize * nx;
                    for &(ix, wx) in &xs {
                        if ix < 0 || ix >= nx as i64 || wx == 0.0 {
                            continue;
                        }
                        visit(base + ix as usize, wzy * wx);
                    }
                }
            }
        }
    }
}

/// Per-voxel gain applied while scattering one ray into the image.
trait ScatterGain: Sync {
    fn factor(&self, view: usize, col: usize, voxel: usize) -> f64;
}

struct Unit;

impl ScatterGain for Unit {
    #[inline(always)]
    fn factor(&self, _: usize, _: usize, _: usize) -> f64 {
        1.0
    }
}

/// `mask·t + (1 − mask)`, where `t` is the half-scan transition weight of the
/// ray (zero for views outside the half scan).
struct Masked<'a> {
    mask: &'a [f64],
    transition: &'a TransitionWeights,
}

impl ScatterGain for Masked<'_> {
    #[inline(always)]
    fn factor(&self, view: usize, col: usize, voxel: usize) -> f64 {
        let m = self.mask[voxel];
        m * self.transition.get(view, col) + (1.0 - m)
    }
}

fn check_selection(geometry: &Geometry, views: &[bool]) -> Result<()> {
    if views.len() != geometry.num_views() {
        return Err(Error::DimensionMismatch(format!(
            "view selection has {} entries for {} views",
            views.len(),
            geometry.num_views()
        )));
    }
    Ok(())
}

/// Forward projection over the views flagged in `views`; other views are zero.
pub fn forward_project_views(x: &Volume, geometry: &Geometry, views: &[bool]) -> Result<Sinogram> {
    x.check_geometry(geometry)?;
    check_selection(geometry, views)?;
    let tracer = RayTracer::new(geometry);
    let mut out = Sinogram::zeros_for(geometry);
    let (rows, cols) = (geometry.detector_rows(), geometry.detector_cols());
    let per_view = rows * cols;
    let values = x.values();
    par::fill(out.values_mut(), |i| {
        let view = i / per_view;
        if !views[view] {
            return 0.0;
        }
        let row = (i % per_view) / cols;
        let col = i % cols;
        let mut acc = 0.0;
        tracer.trace(view, row, col, |j, w| acc += w * values[j]);
        acc
    });
    Ok(out)
}

fn scatter<G: ScatterGain>(
    s: &Sinogram,
    geometry: &Geometry,
    views: &[bool],
    gain: &G,
) -> Result<Volume> {
    s.check_geometry(geometry)?;
    check_selection(geometry, views)?;
    let tracer = RayTracer::new(geometry);
    let n = geometry.num_voxels();
    let (rows, cols) = (geometry.detector_rows(), geometry.detector_cols());
    let groups = geometry.num_views().div_ceil(VIEWS_PER_GROUP);
    let partials: Vec<Option<Vec<f64>>> = par::map_collect(groups, |grp| {
        let lo = grp * VIEWS_PER_GROUP;
        let hi = (lo + VIEWS_PER_GROUP).min(geometry.num_views());
        if !(lo..hi).any(|v| views[v]) {
            return None;
        }
        let mut acc = vec![0.0; n];
        for view in (lo..hi).filter(|&v| views[v]) {
            for row in 0..rows {
                for col in 0..cols {
                    let val = s.get(view, row, col);
                    if val == 0.0 {
                        continue;
                    }
                    tracer.trace(view, row, col, |j, w| {
                        acc[j] += val * w * gain.factor(view, col, j);
                    });
                }
            }
        }
        Some(acc)
    });
    let mut out = Volume::zeros_for(geometry);
    let parts: Vec<&Vec<f64>> = partials.iter().flatten().collect();
    par::fill(out.values_mut(), |j| {
        let mut sum = 0.0;
        for p in &parts {
            sum += p[j];
        }
        sum
    });
    Ok(out)
}

/// Matched back projection over the views flagged in `views`.
pub fn back_project_views(s: &Sinogram, geometry: &Geometry, views: &[bool]) -> Result<Volume> {
    scatter(s, geometry, views, &Unit)
}

/// Per-voxel blend of the half-scan branch (weighted by `transition`) and the
/// full back projection, restricted to the views flagged in `views`:
/// `mask·BP_half + (1 − mask)·BP_full`.
pub fn masked_back_project_views(
    s: &Sinogram,
    geometry: &Geometry,
    views: &[bool],
    mask: &Mask,
    transition: &TransitionWeights,
) -> Result<Volume> {
    crate::error::ensure_dims("mask", geometry.volume_dims(), mask.dims())?;
    if transition.num_views() != geometry.num_views() || transition.cols() != geometry.detector_cols() {
        return Err(Error::DimensionMismatch(
            "transition weights do not match the detector".into(),
        ));
    }
    let gain = Masked {
        mask: mask.values(),
        transition,
    };
    scatter(s, geometry, views, &gain)
}

/// Line integrals of `x` for the views in `views`; unselected views are zero.
pub fn forward_project(x: &Volume, geometry: &Geometry, views: &ViewSubset) -> Result<Sinogram> {
    forward_project_views(x, geometry, &views.selection())
}

/// Transpose of [`forward_project`] for the same subset.
pub fn back_project(s: &Sinogram, geometry: &Geometry, views: &ViewSubset) -> Result<Volume> {
    back_project_views(s, geometry, &views.selection())
}

/// Half-scan back projection inside the mask, full-scan outside, blended
/// linearly for fractional mask values.
pub fn masked_back_project(
    s: &Sinogram,
    geometry: &Geometry,
    half: &ViewSubset,
    mask: &Mask,
) -> Result<Volume> {
    if half.kind() != SubsetKind::Half {
        return Err(Error::InvalidArgument(
            "masked back projection needs a half-scan subset".into(),
        ));
    }
    let transition = view_transition_weights(geometry, half, TransitionMode::Binary)?;
    let all = vec![true; geometry.num_views()];
    masked_back_project_views(s, geometry, &all, mask, &transition)
}
