//! Feldkamp-type filtered back projection, used as the starting image.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::Result;
use crate::geometry::{Geometry, Mask, SubsetKind, ViewSubset};
use crate::par;
use crate::volume::{Sinogram, Volume};
use crate::weights::{view_transition_weights, TransitionMode};

/// Ram-Lak kernel apodized by a Hann window, in the frequency domain, for
/// rows padded to `len` samples spaced `tau` apart.
fn ramp_response(len: usize, tau: f64) -> Vec<Complex64> {
    let mut h = vec![Complex64::new(0.0, 0.0); len];
    h[0].re = 1.0 / (4.0 * tau * tau);
    for n in 1..len / 2 {
        if n % 2 == 1 {
            let v = -1.0 / (n as f64 * PI * tau).powi(2);
            h[n].re = v;
            h[len - n].re = v;
        }
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut h);
    for (k, c) in h.iter_mut().enumerate() {
        let f = k.min(len - k) as f64 / (len as f64 / 2.0);
        *c *= 0.5 * (1.0 + (PI * f).cos());
    }
    h
}

/// Cosine-weighted, ramp-filtered views; rows are filtered independently.
fn filter_views(y: &Sinogram, geometry: &Geometry, view_gain: &(dyn Fn(usize, usize) -> f64 + Sync), views: &[bool]) -> Sinogram {
    let (rows, cols) = (geometry.detector_rows(), geometry.detector_cols());
    let r = geometry.source_to_iso();
    let d = geometry.source_to_detector();
    let tau = geometry.col_spacing() * r / d;
    let len = (2 * cols).next_power_of_two();
    let response = ramp_response(len, tau);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);

    let mut out = Sinogram::zeros_for(geometry);
    par::for_each_chunk_mut(out.values_mut(), rows * cols, |view, block| {
        if !views[view] {
            return;
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        for row in 0..rows {
            let v = geometry.row_coord(row);
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (col, b) in buf.iter_mut().take(cols).enumerate() {
                let u = geometry.col_coord(col);
                let cosine = d / (d * d + u * u + v * v).sqrt();
                b.re = y.get(view, row, col) * cosine * view_gain(view, col);
            }
            fwd.process(&mut buf);
            for (b, h) in buf.iter_mut().zip(&response) {
                *b *= h;
            }
            inv.process(&mut buf);
            let scale = tau / len as f64;
            for col in 0..cols {
                block[row * cols + col] = buf[col].re * scale;
            }
        }
    });
    out
}

fn bilinear(q: &Sinogram, geometry: &Geometry, view: usize, u: f64, v: f64) -> f64 {
    let (rows, cols) = (geometry.detector_rows(), geometry.detector_cols());
    let fc = u / geometry.col_spacing() + (cols as f64 - 1.0) / 2.0;
    let fr = v / geometry.row_spacing() + (rows as f64 - 1.0) / 2.0;
    // Clamp rows so the cone edge is extrapolated flat instead of cut off.
    let fr = fr.clamp(0.0, rows as f64 - 1.0);
    if fc < 0.0 || fc > cols as f64 - 1.0 {
        return 0.0;
    }
    let c0 = (fc.floor() as usize).min(cols.saturating_sub(2));
    let r0 = (fr.floor() as usize).min(rows.saturating_sub(2));
    let wc = if cols > 1 { fc - c0 as f64 } else { 0.0 };
    let wr = if rows > 1 { fr - r0 as f64 } else { 0.0 };
    let c1 = (c0 + 1).min(cols - 1);
    let r1 = (r0 + 1).min(rows - 1);
    (1.0 - wr) * ((1.0 - wc) * q.get(view, r0, c0) + wc * q.get(view, r0, c1))
        + wr * ((1.0 - wc) * q.get(view, r1, c0) + wc * q.get(view, r1, c1))
}

/// FDK reconstruction from the views in `views`.
///
/// Full scans are weighted by ½ to account for each line being measured
/// twice; half scans use short-scan redundancy weights instead.
pub fn fbp_init(y: &Sinogram, geometry: &Geometry, views: &ViewSubset) -> Result<Volume> {
    y.check_geometry(geometry)?;
    let sel = views.selection();
    let q = match views.kind() {
        SubsetKind::Full => filter_views(y, geometry, &|_, _| 0.5, &sel),
        SubsetKind::Half => {
            let parker = view_transition_weights(geometry, views, TransitionMode::Parker)?;
            filter_views(y, geometry, &|v, c| parker.get(v, c), &sel)
        }
    };
    let r = geometry.source_to_iso();
    let dtheta = geometry.view_spacing();
    let [nx, ny, _] = geometry.volume_dims();
    let selected: Vec<usize> = views.indices().to_vec();
    let mut out = Volume::zeros_for(geometry);
    par::fill(out.values_mut(), |j| {
        let p = geometry.voxel_center(j % nx, (j / nx) % ny, j / (nx * ny));
        let mut acc = 0.0;
        for &view in &selected {
            let hit = geometry.project_point(view, p);
            if hit.depth <= 0.0 {
                continue;
            }
            let w = (r / hit.depth).powi(2);
            acc += w * bilinear(&q, geometry, view, hit.u, hit.v);
        }
        acc * dtheta
    });
    Ok(out)
}

/// `mask·FBP_half + (1 − mask)·FBP_full`.
pub fn fbp_init_masked(y: &Sinogram, geometry: &Geometry, half: &ViewSubset, mask: &Mask) -> Result<Volume> {
    let full = fbp_init(y, geometry, &ViewSubset::full(geometry))?;
    let halfscan = fbp_init(y, geometry, half)?;
    let m = mask.values();
    let mut out = Volume::zeros_for(geometry);
    par::fill(out.values_mut(), |j| {
        m[j] * halfscan.values()[j] + (1.0 - m[j]) * full.values()[j]
    });
    Ok(out)
}
