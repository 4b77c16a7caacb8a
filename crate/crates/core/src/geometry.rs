//! Axial cone-beam acquisition geometry, view subsets and the half-scan mask.
//!
//! Coordinates are in millimetres with the isocenter at the origin and the
//! rotation axis along `z`. For view angle `θ` the source sits at
//! `R·(cos θ, sin θ, 0)`; the flat detector is perpendicular to the central
//! ray at distance `D` from the source, with its column axis along
//! `(−sin θ, cos θ, 0)` and its row axis along `z`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Scanner description as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub source_to_iso_distance: f64,
    pub source_to_detector_distance: f64,
    pub detector_cols: usize,
    pub detector_rows: usize,
    pub detector_col_spacing: f64,
    pub detector_row_spacing: f64,
    pub num_views: usize,
    pub angle_offset: f64,
    pub volume_dims: [usize; 3],
    pub voxel_size: [f64; 3],
}

impl Default for GeometryConfig {
    /// Desk-scale scanner: 64³ volume of 2 mm voxels, 72 views, 48×24 detector.
    fn default() -> Self {
        Self {
            source_to_iso_distance: 300.0,
            source_to_detector_distance: 480.0,
            detector_cols: 48,
            detector_rows: 24,
            detector_col_spacing: 10.0,
            detector_row_spacing: 8.0,
            num_views: 72,
            angle_offset: 0.0,
            volume_dims: [64, 64, 64],
            voxel_size: [2.0, 2.0, 2.0],
        }
    }
}

/// Validated acquisition geometry. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    config: GeometryConfig,
    view_angles: Vec<f64>,
}

/// Where a point lands on the detector for one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorHit {
    /// Column coordinate on the detector (mm, 0 at the detector center).
    pub u: f64,
    /// Row coordinate on the detector (mm, 0 at the mid-plane).
    pub v: f64,
    /// Distance from the source along the central ray (mm).
    pub depth: f64,
}

fn positive(field: &'static str, value: f64) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::InvalidGeometry {
            field,
            reason: format!("must be positive and finite, got {value}"),
        });
    }
    Ok(())
}

fn at_least(field: &'static str, value: usize, min: usize) -> Result<()> {
    if value < min {
        return Err(Error::InvalidGeometry {
            field,
            reason: format!("must be at least {min}, got {value}"),
        });
    }
    Ok(())
}

/// Validates a scanner description and derives the view angles.
pub fn make_geometry(config: GeometryConfig) -> Result<Geometry> {
    positive("source_to_iso_distance", config.source_to_iso_distance)?;
    positive("source_to_detector_distance", config.source_to_detector_distance)?;
    if config.source_to_detector_distance <= config.source_to_iso_distance {
        return Err(Error::InvalidGeometry {
            field: "source_to_detector_distance",
            reason: format!(
                "must exceed source_to_iso_distance ({} <= {})",
                config.source_to_detector_distance, config.source_to_iso_distance
            ),
        });
    }
    at_least("detector_cols", config.detector_cols, 1)?;
    at_least("detector_rows", config.detector_rows, 1)?;
    positive("detector_col_spacing", config.detector_col_spacing)?;
    positive("detector_row_spacing", config.detector_row_spacing)?;
    at_least("num_views", config.num_views, 2)?;
    if !config.angle_offset.is_finite() {
        return Err(Error::InvalidGeometry {
            field: "angle_offset",
            reason: "must be finite".into(),
        });
    }
    const DIM_FIELDS: [&str; 3] = ["volume_dims[0]", "volume_dims[1]", "volume_dims[2]"];
    const VOX_FIELDS: [&str; 3] = ["voxel_size[0]", "voxel_size[1]", "voxel_size[2]"];
    for a in 0..3 {
        at_least(DIM_FIELDS[a], config.volume_dims[a], 1)?;
        positive(VOX_FIELDS[a], config.voxel_size[a])?;
    }

    let step = 2.0 * PI / config.num_views as f64;
    let view_angles = (0..config.num_views)
        .map(|v| config.angle_offset + v as f64 * step)
        .collect();
    Ok(Geometry {
        config,
        view_angles,
    })
}

impl Geometry {
    pub fn config(&self) -> &GeometryConfig {
        &self.config
    }

    pub fn source_to_iso(&self) -> f64 {
        self.config.source_to_iso_distance
    }

    pub fn source_to_detector(&self) -> f64 {
        self.config.source_to_detector_distance
    }

    pub fn num_views(&self) -> usize {
        self.config.num_views
    }

    pub fn detector_rows(&self) -> usize {
        self.config.detector_rows
    }

    pub fn detector_cols(&self) -> usize {
        self.config.detector_cols
    }

    pub fn col_spacing(&self) -> f64 {
        self.config.detector_col_spacing
    }

    pub fn row_spacing(&self) -> f64 {
        self.config.detector_row_spacing
    }

    pub fn volume_dims(&self) -> [usize; 3] {
        self.config.volume_dims
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.config.voxel_size
    }

    pub fn num_voxels(&self) -> usize {
        self.config.volume_dims.iter().product()
    }

    /// Number of detector readings over the full scan.
    pub fn num_measurements(&self) -> usize {
        self.num_views() * self.detector_rows() * self.detector_cols()
    }

    pub fn view_angles(&self) -> &[f64] {
        &self.view_angles
    }

    pub fn view_angle(&self, view: usize) -> f64 {
        self.view_angles[view]
    }

    /// Angular increment between consecutive views.
    pub fn view_spacing(&self) -> f64 {
        2.0 * PI / self.num_views() as f64
    }

    /// Full in-plane aperture of the detector seen from the source.
    pub fn fan_angle(&self) -> f64 {
        let half_width = self.detector_cols() as f64 * self.col_spacing() / 2.0;
        2.0 * (half_width / self.source_to_detector()).atan()
    }

    pub fn detector_half_width(&self) -> f64 {
        self.detector_cols() as f64 * self.col_spacing() / 2.0
    }

    pub fn detector_half_height(&self) -> f64 {
        self.detector_rows() as f64 * self.row_spacing() / 2.0
    }

    /// Detector column coordinate of column `col` (mm).
    pub fn col_coord(&self, col: usize) -> f64 {
        (col as f64 - (self.detector_cols() as f64 - 1.0) / 2.0) * self.col_spacing()
    }

    /// Detector row coordinate of row `row` (mm).
    pub fn row_coord(&self, row: usize) -> f64 {
        (row as f64 - (self.detector_rows() as f64 - 1.0) / 2.0) * self.row_spacing()
    }

    pub fn source_position(&self, view: usize) -> [f64; 3] {
        let (s, c) = self.view_angle(view).sin_cos();
        let r = self.source_to_iso();
        [r * c, r * s, 0.0]
    }

    /// World position of the center of detector element `(row, col)`.
    pub fn detector_position(&self, view: usize, row: usize, col: usize) -> [f64; 3] {
        let (s, c) = self.view_angle(view).sin_cos();
        let r = self.source_to_iso();
        let d = self.source_to_detector();
        let u = self.col_coord(col);
        let v = self.row_coord(row);
        // source + D·(−cos, −sin, 0) + u·(−sin, cos, 0) + v·z
        [r * c - d * c - u * s, r * s - d * s + u * c, v]
    }

    /// World coordinates of a voxel center; the volume is centered on the isocenter.
    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        let [nx, ny, nz] = self.volume_dims();
        let [dx, dy, dz] = self.voxel_size();
        [
            (ix as f64 - (nx as f64 - 1.0) / 2.0) * dx,
            (iy as f64 - (ny as f64 - 1.0) / 2.0) * dy,
            (iz as f64 - (nz as f64 - 1.0) / 2.0) * dz,
        ]
    }

    /// Central projection of a world point onto the detector plane of `view`.
    pub fn project_point(&self, view: usize, p: [f64; 3]) -> DetectorHit {
        let (s, c) = self.view_angle(view).sin_cos();
        let r = self.source_to_iso();
        let rel = [p[0] - r * c, p[1] - r * s, p[2]];
        let depth = -(rel[0] * c + rel[1] * s);
        let lateral = -rel[0] * s + rel[1] * c;
        let mag = self.source_to_detector() / depth;
        DetectorHit {
            u: lateral * mag,
            v: rel[2] * mag,
            depth,
        }
    }

    /// True when the ray from the source through `p` lands on the detector.
    pub fn hits_detector(&self, view: usize, p: [f64; 3]) -> bool {
        let hit = self.project_point(view, p);
        hit.depth > 0.0
            && hit.u.abs() <= self.detector_half_width()
            && hit.v.abs() <= self.detector_half_height()
    }
}

/// Which kind of contiguous view range a [`ViewSubset`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsetKind {
    Full,
    Half,
}

/// Ordered, contiguous (modulo `num_views`) list of view indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewSubset {
    indices: Vec<usize>,
    kind: SubsetKind,
    num_views: usize,
}

impl ViewSubset {
    pub fn full(geometry: &Geometry) -> Self {
        Self {
            indices: (0..geometry.num_views()).collect(),
            kind: SubsetKind::Full,
            num_views: geometry.num_views(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn kind(&self) -> SubsetKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Per-view membership flags.
    pub fn selection(&self) -> Vec<bool> {
        let mut sel = vec![false; self.num_views];
        for &v in &self.indices {
            sel[v] = true;
        }
        sel
    }

    /// Angle covered from first to last selected view (inclusive of endpoints).
    pub fn angular_span(&self, geometry: &Geometry) -> f64 {
        (self.len().saturating_sub(1)) as f64 * geometry.view_spacing()
    }

    /// Scan phase in `[0, 1)` at the middle of the subset.
    pub fn center_phase(&self) -> f64 {
        let start = self.indices[0] as f64;
        let mid = start + (self.len() as f64 - 1.0) / 2.0;
        (mid / self.num_views as f64).rem_euclid(1.0)
    }
}

/// Number of whole views needed to cover `π + fan_angle`.
pub fn half_scan_view_count(geometry: &Geometry) -> Result<usize> {
    let fan = geometry.fan_angle();
    if fan >= PI {
        return Err(Error::InvalidGeometry {
            field: "detector_cols",
            reason: format!("fan angle {fan} rad leaves no room for a half scan"),
        });
    }
    let ratio = (PI + fan) / geometry.view_spacing();
    // Absorb rounding when the ratio is an exact integer.
    let count = (ratio - 1e-9).ceil() as usize + 1;
    if count > geometry.num_views() {
        return Err(Error::InvalidGeometry {
            field: "num_views",
            reason: format!(
                "half scan needs {count} views but the scan only has {}",
                geometry.num_views()
            ),
        });
    }
    Ok(count)
}

/// Contiguous half-scan subset starting at `start_index`, wrapping modulo the
/// number of views.
pub fn half_scan_views(geometry: &Geometry, start_index: usize) -> Result<ViewSubset> {
    let n = geometry.num_views();
    if start_index >= n {
        return Err(Error::InvalidArgument(format!(
            "half_scan_start {start_index} out of range for {n} views"
        )));
    }
    let count = half_scan_view_count(geometry)?;
    Ok(ViewSubset {
        indices: (0..count).map(|k| (start_index + k) % n).collect(),
        kind: SubsetKind::Half,
        num_views: n,
    })
}

/// Per-voxel weight separating the half-scan back-projected region (1) from
/// the full-scan region (0).
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    dims: [usize; 3],
    values: Vec<f64>,
    feather_width: f64,
}

impl Mask {
    pub fn from_values(dims: [usize; 3], values: Vec<f64>, feather_width: f64) -> Result<Self> {
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} values for dims {dims:?}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "mask value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            dims,
            values,
            feather_width,
        })
    }

    pub fn constant(dims: [usize; 3], value: f64) -> Self {
        Self::from_values(dims, vec![value; dims.iter().product()], 0.0)
            .expect("constant mask value must lie in [0, 1]")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn feather_width(&self) -> f64 {
        self.feather_width
    }

    /// Number of voxels with value exactly 1 in slice `z`.
    pub fn slice_area(&self, z: usize) -> usize {
        let plane = self.dims[0] * self.dims[1];
        self.values[z * plane..(z + 1) * plane]
            .iter()
            .filter(|&&v| v == 1.0)
            .count()
    }

    /// Sum of mask values in slice `z`.
    pub fn slice_sum(&self, z: usize) -> f64 {
        let plane = self.dims[0] * self.dims[1];
        self.values[z * plane..(z + 1) * plane].iter().sum()
    }
}

/// Marks voxels whose centers project onto the detector for every half-scan
/// view, optionally relaxed by a linear ramp of width `feather_width` (mm)
/// inside the boundary.
pub fn compute_mask(geometry: &Geometry, half: &ViewSubset, feather_width: f64) -> Result<Mask> {
    if half.kind() != SubsetKind::Half {
        return Err(Error::InvalidArgument(
            "compute_mask requires a half-scan subset".into(),
        ));
    }
    if !(feather_width.is_finite() && feather_width >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "feather_width must be finite and non-negative, got {feather_width}"
        )));
    }
    let dims = geometry.volume_dims();
    let [nx, ny, _] = dims;
    let mut binary = vec![0.0; geometry.num_voxels()];
    par::fill(&mut binary, |j| {
        let (ix, iy, iz) = (j % nx, (j / nx) % ny, j / (nx * ny));
        let p = geometry.voxel_center(ix, iy, iz);
        let complete = half.indices().iter().all(|&v| geometry.hits_detector(v, p));
        if complete {
            1.0
        } else {
            0.0
        }
    });
    if feather_width == 0.0 {
        return Mask::from_values(dims, binary, 0.0);
    }
    let values = feather(&binary, dims, geometry.voxel_size(), feather_width);
    Mask::from_values(dims, values, feather_width)
}

/// Inside voxels become `min(1, d / width)` where `d` is the Euclidean
/// distance to the nearest outside voxel center.
fn feather(binary: &[f64], dims: [usize; 3], voxel: [f64; 3], width: f64) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let reach = [
        (width / voxel[0]).ceil() as isize,
        (width / voxel[1]).ceil() as isize,
        (width / voxel[2]).ceil() as isize,
    ];
    let mut out = vec![0.0; binary.len()];
    par::fill(&mut out, |j| {
        if binary[j] == 0.0 {
            return 0.0;
        }
        let (ix, iy, iz) = ((j % nx) as isize, ((j / nx) % ny) as isize, (j / (nx * ny)) as isize);
        let mut best = f64::INFINITY;
        for dz in -reach[2]..=reach[2] {
            let z = iz + dz;
            if z < 0 || z >= nz as isize {
                continue;
            }
            for dy in -reach[1]..=reach[1] {
                let y = iy + dy;
                if y < 0 || y >= ny as isize {
                    continue;
                }
                for dx in -reach[0]..=reach[0] {
                    let x = ix + dx;
                    if x < 0 || x >= nx as isize {
                        continue;
                    }
                    let k = (z as usize * ny + y as usize) * nx + x as usize;
                    if binary[k] == 0.0 {
                        let d2 = (dx as f64 * voxel[0]).powi(2)
                            + (dy as f64 * voxel[1]).powi(2)
                            + (dz as f64 * voxel[2]).powi(2);
                        best = best.min(d2);
                    }
                }
            }
        }
        (best.sqrt() / width).min(1.0)
    });
    out
}
