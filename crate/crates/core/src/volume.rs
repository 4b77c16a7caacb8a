//! Image and measurement containers.

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::par;

/// Voxel grid of attenuation values (1/mm), x fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    voxel_size: [f64; 3],
    values: Vec<f64>,
}

impl Volume {
    pub fn zeros(dims: [usize; 3], voxel_size: [f64; 3]) -> Self {
        Self {
            dims,
            voxel_size,
            values: vec![0.0; dims.iter().product()],
        }
    }

    pub fn zeros_for(geometry: &Geometry) -> Self {
        Self::zeros(geometry.volume_dims(), geometry.voxel_size())
    }

    pub fn from_values(dims: [usize; 3], voxel_size: [f64; 3], values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::DimensionMismatch(format!(
                "volume has {} values for dims {dims:?}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("volume values must be finite".into()));
        }
        Ok(Self {
            dims,
            voxel_size,
            values,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.dims[1] + iy) * self.dims[0] + ix
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.index(ix, iy, iz)]
    }

    /// Values of slice `z` as a contiguous x-fastest plane.
    pub fn slice(&self, z: usize) -> &[f64] {
        let plane = self.dims[0] * self.dims[1];
        &self.values[z * plane..(z + 1) * plane]
    }

    pub fn check_geometry(&self, geometry: &Geometry) -> Result<()> {
        crate::error::ensure_dims("volume", geometry.volume_dims(), self.dims)
    }

    pub fn same_shape(&self, other: &Volume) -> Result<()> {
        crate::error::ensure_dims("volume", self.dims, other.dims)
    }

    /// `self += a·other`.
    pub fn add_scaled(&mut self, a: f64, other: &Volume) {
        let src = &other.values;
        par::for_each_chunk_mut(&mut self.values, par::REDUCE_BLOCK, |c, chunk| {
            let base = c * par::REDUCE_BLOCK;
            for (k, v) in chunk.iter_mut().enumerate() {
                *v += a * src[base + k];
            }
        });
    }

    /// `a·self + b·other` as a new volume.
    pub fn combine(&self, a: f64, b: f64, other: &Volume) -> Volume {
        let mut out = self.clone();
        par::fill(&mut out.values, |j| a * self.values[j] + b * other.values[j]);
        out
    }

    pub fn dot(&self, other: &Volume) -> f64 {
        par::dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Detector readings (line integrals), col fastest, then row, then view.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    num_views: usize,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(num_views: usize, rows: usize, cols: usize) -> Self {
        Self {
            num_views,
            rows,
            cols,
            values: vec![0.0; num_views * rows * cols],
        }
    }

    pub fn zeros_for(geometry: &Geometry) -> Self {
        Self::zeros(
            geometry.num_views(),
            geometry.detector_rows(),
            geometry.detector_cols(),
        )
    }

    pub fn from_values(num_views: usize, rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_views * rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "sinogram has {} values for shape [{num_views}, {rows}, {cols}]",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sinogram values must be finite".into()));
        }
        Ok(Self {
            num_views,
            rows,
            cols,
            values,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.num_views, self.rows, self.cols]
    }

    pub fn num_views(&self) -> usize {
        self.num_views
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn view_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn view(&self, v: usize) -> &[f64] {
        let n = self.view_len();
        &self.values[v * n..(v + 1) * n]
    }

    pub fn view_mut(&mut self, v: usize) -> &mut [f64] {
        let n = self.view_len();
        &mut self.values[v * n..(v + 1) * n]
    }

    #[inline]
    pub fn index(&self, view: usize, row: usize, col: usize) -> usize {
        (view * self.rows + row) * self.cols + col
    }

    pub fn get(&self, view: usize, row: usize, col: usize) -> f64 {
        self.values[self.index(view, row, col)]
    }

    pub fn check_geometry(&self, geometry: &Geometry) -> Result<()> {
        let expected = [
            geometry.num_views(),
            geometry.detector_rows(),
            geometry.detector_cols(),
        ];
        crate::error::ensure_dims("sinogram", expected, self.shape())
    }

    pub fn combine(&self, a: f64, b: f64, other: &Sinogram) -> Sinogram {
        let mut out = self.clone();
        par::fill(&mut out.values, |i| a * self.values[i] + b * other.values[i]);
        out
    }

    pub fn dot(&self, other: &Sinogram) -> f64 {
        par::dot(&self.values, &other.values)
    }
}
