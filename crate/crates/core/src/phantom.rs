//! Ellipsoid phantoms with optional per-ellipsoid motion, and sinogram
//! simulation with one scan phase per view.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::par;
use crate::projector::forward_project_views;
use crate::volume::{Sinogram, Volume};

/// How an ellipsoid center moves with scan phase `t ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    #[default]
    Static,
    /// Constant velocity, in mm per rotation.
    LinearDrift { velocity: [f64; 3] },
    /// `amplitude · sin(2π·t/period + phase)`, period as a fraction of a rotation.
    Oscillation {
        amplitude: [f64; 3],
        period: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Motion {
    pub fn displacement(&self, t: f64) -> [f64; 3] {
        match *self {
            Motion::Static => [0.0; 3],
            Motion::LinearDrift { velocity } => velocity.map(|v| v * t),
            Motion::Oscillation {
                amplitude,
                period,
                phase,
            } => {
                let s = (2.0 * std::f64::consts::PI * t / period + phase).sin();
                amplitude.map(|a| a * s)
            }
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self, Motion::Static)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipsoid {
    /// Center at phase 0 (mm).
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    /// Rotation about the z axis (radians).
    #[serde(default)]
    pub rotation: f64,
    /// Additive attenuation (1/mm); negative values carve cavities.
    pub density: f64,
    #[serde(default)]
    pub motion: Motion,
}

impl Ellipsoid {
    pub fn ball(center: [f64; 3], radius: f64, density: f64) -> Self {
        Self {
            center,
            semi_axes: [radius; 3],
            rotation: 0.0,
            density,
            motion: Motion::Static,
        }
    }

    pub fn center_at(&self, t: f64) -> [f64; 3] {
        let d = self.motion.displacement(t);
        [self.center[0] + d[0], self.center[1] + d[1], self.center[2] + d[2]]
    }

    /// Whether point `p` lies inside (or on) the ellipsoid at phase `t`.
    pub fn contains(&self, p: [f64; 3], t: f64) -> bool {
        let c = self.center_at(t);
        let (s, co) = self.rotation.sin_cos();
        let (dx, dy, dz) = (p[0] - c[0], p[1] - c[1], p[2] - c[2]);
        let u = co * dx + s * dy;
        let v = -s * dx + co * dy;
        let [a, b, cz] = self.semi_axes;
        (u / a).powi(2) + (v / b).powi(2) + (dz / cz).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    #[serde(default, rename = "ellipsoid")]
    pub ellipsoids: Vec<Ellipsoid>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.ellipsoids.iter().enumerate() {
            if e.semi_axes.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "ellipsoid {i}: semi_axes must be positive, got {:?}",
                    e.semi_axes
                )));
            }
            if !e.density.is_finite() || !e.rotation.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "ellipsoid {i}: density and rotation must be finite"
                )));
            }
            if let Motion::Oscillation { period, .. } = e.motion {
                if !(period.is_finite() && period > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "ellipsoid {i}: oscillation period must be positive"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_static(&self) -> bool {
        self.ellipsoids.iter().all(|e| e.motion.is_static())
    }

    /// Torso surrogate with off-center static structures toward both ends of
    /// the volume; sized for the default 128 mm field.
    pub fn static_default() -> Self {
        Self {
            ellipsoids: vec![
                Ellipsoid {
                    center: [0.0, 0.0, 0.0],
                    semi_axes: [56.0, 44.0, 72.0],
                    rotation: 0.0,
                    density: 0.02,
                    motion: Motion::Static,
                },
                // Lung-like cavity near the top end.
                Ellipsoid {
                    center: [-18.0, -10.0, 40.0],
                    semi_axes: [14.0, 12.0, 10.0],
                    rotation: 0.4,
                    density: -0.012,
                    motion: Motion::Static,
                },
                // Liver-like block near the bottom end.
                Ellipsoid {
                    center: [18.0, 12.0, -42.0],
                    semi_axes: [16.0, 12.0, 10.0],
                    rotation: -0.3,
                    density: 0.008,
                    motion: Motion::Static,
                },
                Ellipsoid::ball([24.0, -16.0, 50.0], 6.0, 0.02),
                Ellipsoid::ball([-22.0, 14.0, -52.0], 6.0, 0.02),
                // Stationary heart surrogate.
                Ellipsoid::ball([0.0, 0.0, 0.0], 10.0, 0.02),
            ],
        }
    }

    /// Same anatomy with the central insert drifting along x by `drift_mm`
    /// per rotation, starting at `x = −drift_mm/2`.
    pub fn dynamic_default(drift_mm: f64) -> Self {
        let mut spec = Self::static_default();
        let heart = spec.ellipsoids.last_mut().expect("default phantom has an insert");
        heart.center = [-drift_mm / 2.0, 0.0, 0.0];
        heart.motion = Motion::LinearDrift {
            velocity: [drift_mm, 0.0, 0.0],
        };
        spec
    }
}

fn check_phase(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "scan phase {t} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Sums the densities of every ellipsoid containing each voxel center at phase `t`.
pub fn rasterize(spec: &PhantomSpec, t: f64, geometry: &Geometry) -> Result<Volume> {
    check_phase(t)?;
    spec.validate()?;
    let mut vol = Volume::zeros_for(geometry);
    let [nx, ny, _] = geometry.volume_dims();
    par::fill(vol.values_mut(), |j| {
        let p = geometry.voxel_center(j % nx, (j / nx) % ny, j / (nx * ny));
        spec.ellipsoids
            .iter()
            .filter(|e| e.contains(p, t))
            .map(|e| e.density)
            .sum()
    });
    Ok(vol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonNoise {
    /// Unattenuated photon count per detector element.
    pub i0: f64,
    pub seed: u64,
}

/// Scan phase at which `view` is acquired.
pub fn view_phase(view: usize, num_views: usize) -> f64 {
    view as f64 / num_views as f64
}

/// Simulates a single-rotation acquisition: view `v` sees the phantom at
/// phase `v / num_views`. With `noise`, each reading becomes
/// `ln(I0 / max(1, Poisson(I0·exp(−p))))` using a generator keyed by
/// `(seed, view, row, col)`.
pub fn simulate_sinogram(
    spec: &PhantomSpec,
    geometry: &Geometry,
    noise: Option<PhotonNoise>,
) -> Result<Sinogram> {
    if let Some(n) = noise {
        if !(n.i0.is_finite() && n.i0 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "photon count I0 must be positive, got {}",
                n.i0
            )));
        }
    }
    spec.validate()?;
    let num_views = geometry.num_views();
    let mut sino = if spec.is_static() {
        let x = rasterize(spec, 0.0, geometry)?;
        forward_project_views(&x, geometry, &vec![true; num_views])?
    } else {
        let mut sino = Sinogram::zeros_for(geometry);
        let mut sel = vec![false; num_views];
        for v in 0..num_views {
            let x = rasterize(spec, view_phase(v, num_views), geometry)?;
            sel[v] = true;
            let one = forward_project_views(&x, geometry, &sel)?;
            sel[v] = false;
            sino.view_mut(v).copy_from_slice(one.view(v));
        }
        sino
    };
    if let Some(n) = noise {
        add_photon_noise(&mut sino, n);
    }
    Ok(sino)
}

fn add_photon_noise(sino: &mut Sinogram, noise: PhotonNoise) {
    let clean = sino.values().to_vec();
    par::fill(sino.values_mut(), |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        rng.set_stream(i as u64);
        let mean = (noise.i0 * (-clean[i]).exp()).max(f64::MIN_POSITIVE);
        let counts = match Poisson::new(mean) {
            Ok(p) => p.sample(&mut rng),
            Err(_) => mean.round(),
        };
        (noise.i0 / counts.max(1.0)).ln()
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_geometry, GeometryConfig};
    use crate::projector::forward_project;
    use crate::geometry::ViewSubset;

    fn geometry() -> Geometry {
        make_geometry(GeometryConfig {
            volume_dims: [21, 21, 21],
            voxel_size: [2.0; 3],
            num_views: 12,
            detector_cols: 16,
            detector_rows: 8,
            ..GeometryConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn empty_spec_is_zero() {
        let g = geometry();
        let v = rasterize(&PhantomSpec::default(), 0.3, &g).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.0));
        let s = simulate_sinogram(&PhantomSpec::default(), &g, None).unwrap();
        assert!(s.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ball_containment_and_additivity() {
        let g = geometry();
        let spec = PhantomSpec {
            ellipsoids: vec![Ellipsoid::ball([0.0; 3], 10.0, 1.0)],
        };
        let v = rasterize(&spec, 0.0, &g).unwrap();
        assert_eq!(v.get(10, 10, 10), 1.0);
        // 20 mm from center along x.
        assert_eq!(v.get(20, 10, 10), 0.0);

        let spec = PhantomSpec {
            ellipsoids: vec![
                Ellipsoid::ball([0.0; 3], 10.0, 1.0),
                Ellipsoid {
                    center: [4.0, 0.0, 0.0],
                    semi_axes: [8.0, 4.0, 4.0],
                    rotation: 0.2,
                    density: 0.5,
                    motion: Motion::Static,
                },
            ],
        };
        let v = rasterize(&spec, 0.0, &g).unwrap();
        assert_eq!(v.get(12, 10, 10), 1.5);
    }

    #[test]
    fn drift_moves_center() {
        let e = Ellipsoid {
            motion: Motion::LinearDrift {
                velocity: [10.0, 0.0, -4.0],
            },
            ..Ellipsoid::ball([1.0, 2.0, 3.0], 1.0, 1.0)
        };
        assert_eq!(e.center_at(0.5), [6.0, 2.0, 1.0]);
        let o = Motion::Oscillation {
            amplitude: [2.0, 0.0, 0.0],
            period: 1.0,
            phase: 0.0,
        };
        assert!((o.displacement(0.25)[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn phase_outside_unit_interval_rejected() {
        let g = geometry();
        assert!(rasterize(&PhantomSpec::default(), 1.5, &g).is_err());
    }

    #[test]
    fn static_simulation_matches_forward_projection() {
        let g = geometry();
        let spec = PhantomSpec {
            ellipsoids: vec![Ellipsoid::ball([2.0, -3.0, 1.0], 9.0, 0.02)],
        };
        let s = simulate_sinogram(&spec, &g, None).unwrap();
        let x = rasterize(&spec, 0.0, &g).unwrap();
        assert_eq!(s, forward_project(&x, &g, &ViewSubset::full(&g)).unwrap());
    }

    #[test]
    fn dynamic_views_see_their_own_phase() {
        let g = geometry();
        let spec = PhantomSpec {
            ellipsoids: vec![Ellipsoid {
                motion: Motion::LinearDrift {
                    velocity: [12.0, 0.0, 0.0],
                },
                ..Ellipsoid::ball([-6.0, 0.0, 0.0], 5.0, 0.05)
            }],
        };
        let s = simulate_sinogram(&spec, &g, None).unwrap();
        let full = ViewSubset::full(&g);
        for v in [0, 5, 11] {
            let x = rasterize(&spec, view_phase(v, 12), &g).unwrap();
            let p = forward_project(&x, &g, &full).unwrap();
            assert_eq!(s.view(v), p.view(v));
        }
    }

    #[test]
    fn noise_is_deterministic_and_rejects_bad_i0() {
        let g = geometry();
        let spec = PhantomSpec {
            ellipsoids: vec![Ellipsoid::ball([0.0; 3], 15.0, 0.03)],
        };
        let n = PhotonNoise { i0: 1e5, seed: 7 };
        let a = simulate_sinogram(&spec, &g, Some(n)).unwrap();
        let b = simulate_sinogram(&spec, &g, Some(n)).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = simulate_sinogram(&spec, &g, Some(PhotonNoise { seed: 8, ..n })).unwrap();
        assert_ne!(a, c);
        assert!(simulate_sinogram(&spec, &g, Some(PhotonNoise { i0: 0.0, seed: 1 })).is_err());
    }

    #[test]
    fn noisy_mean_converges_to_clean() {
        let g = make_geometry(GeometryConfig {
            volume_dims: [11, 11, 11],
            voxel_size: [4.0; 3],
            num_views: 4,
            detector_cols: 8,
            detector_rows: 4,
            ..GeometryConfig::default()
        })
        .unwrap();
        let spec = PhantomSpec {
            ellipsoids: vec![Ellipsoid::ball([0.0; 3], 18.0, 0.05)],
        };
        let clean = simulate_sinogram(&spec, &g, None).unwrap();
        assert!(clean.values().iter().all(|&p| p <= 2.0));
        let seeds = 100;
        let mut mean = vec![0.0; clean.values().len()];
        for seed in 0..seeds {
            let s = simulate_sinogram(&spec, &g, Some(PhotonNoise { i0: 1e6, seed })).unwrap();
            for (m, v) in mean.iter_mut().zip(s.values()) {
                *m += v / seeds as f64;
            }
        }
        for (m, c) in mean.iter().zip(clean.values()) {
            // 1% of the reading, with an absolute floor for near-zero integrals.
            assert!((m - c).abs() < 0.01 * c.max(0.1), "{m} vs {c}");
        }
    }

    #[test]
    fn default_structures_stay_inside_the_torso() {
        let g = make_geometry(GeometryConfig::default()).unwrap();
        for spec in [PhantomSpec::static_default(), PhantomSpec::dynamic_default(24.0)] {
            for t in [0.0, 0.5, 1.0] {
                let x = rasterize(&spec, t, &g).unwrap();
                let min = x.values().iter().cloned().fold(f64::INFINITY, f64::min);
                let max = x.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(min, 0.0);
                assert!((max - 0.04).abs() < 1e-15);
            }
        }
    }
}
