//! Statistical weights for the data term and view-transition weights for the
//! half-scan branch of the masked back projector.

use std::f64::consts::{FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Geometry, SubsetKind, ViewSubset};
use crate::volume::Sinogram;

/// Diagonal weights of the data-fidelity term, one per detector reading.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    shape: [usize; 3],
    values: Vec<f64>,
}

impl Weights {
    pub fn uniform(shape: [usize; 3]) -> Self {
        Self {
            shape,
            values: vec![1.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightModel {
    #[default]
    Uniform,
    /// `w = exp(−y)`: proportional to the expected photon count.
    Photon,
}

pub fn statistical_weights(y: &Sinogram, model: WeightModel) -> Weights {
    let values = match model {
        WeightModel::Uniform => vec![1.0; y.values().len()],
        WeightModel::Photon => y.values().iter().map(|&v| (-v).exp()).collect(),
    };
    Weights {
        shape: y.shape(),
        values,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionMode {
    #[default]
    Binary,
    Parker,
}

/// Per-(view, column) weights in `[0, 1]`, identical for every detector row.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionWeights {
    num_views: usize,
    cols: usize,
    values: Vec<f64>,
}

impl TransitionWeights {
    pub fn get(&self, view: usize, col: usize) -> f64 {
        self.values[view * self.cols + col]
    }

    pub fn view(&self, view: usize) -> &[f64] {
        &self.values[view * self.cols..(view + 1) * self.cols]
    }

    pub fn num_views(&self) -> usize {
        self.num_views
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Views carrying any nonzero weight.
    pub fn active_views(&self) -> Vec<bool> {
        (0..self.num_views)
            .map(|v| self.view(v).iter().any(|&w| w != 0.0))
            .collect()
    }
}

/// Short-scan redundancy weight for a ray at angular position `beta` within
/// a scan of length `span`, with in-plane fan angle `gamma`.
///
/// The conjugate of `(beta, gamma)` in this geometry is
/// `(beta + π − 2·gamma, −gamma)`; the weights of a ray and its conjugate sum
/// to one whenever both lie inside the span, and a ray whose conjugate falls
/// outside gets weight one. `span − π` must be at least the full fan angle.
pub fn parker_weight(beta: f64, gamma: f64, span: f64) -> f64 {
    if !(0.0..=span).contains(&beta) {
        return 0.0;
    }
    let half_fan = (span - PI) / 2.0;
    // Standard formulation uses the opposite sign convention for gamma.
    let g = -gamma;
    let rise = 2.0 * (half_fan - g);
    let fall = PI - 2.0 * g;
    if beta < rise {
        let s = (FRAC_PI_4 * beta / (half_fan - g)).sin();
        s * s
    } else if beta <= fall {
        1.0
    } else {
        let s = (FRAC_PI_4 * (span - beta) / (half_fan + g)).sin();
        s * s
    }
}

pub fn view_transition_weights(
    geometry: &Geometry,
    half: &ViewSubset,
    mode: TransitionMode,
) -> Result<TransitionWeights> {
    if half.kind() != SubsetKind::Half {
        return Err(Error::InvalidArgument(
            "view transition weights need a half-scan subset".into(),
        ));
    }
    let num_views = geometry.num_views();
    let cols = geometry.detector_cols();
    let mut values = vec![0.0; num_views * cols];
    let span = half.angular_span(geometry);
    let d = geometry.source_to_detector();
    for (k, &v) in half.indices().iter().enumerate() {
        let beta = k as f64 * geometry.view_spacing();
        for c in 0..cols {
            values[v * cols + c] = match mode {
                TransitionMode::Binary => 1.0,
                TransitionMode::Parker => {
                    let gamma = (geometry.col_coord(c) / d).atan();
                    parker_weight(beta, gamma, span)
                }
            };
        }
    }
    Ok(TransitionWeights {
        num_views,
        cols,
        values,
    })
}
