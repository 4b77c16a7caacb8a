//! Pairwise 26-neighbour roughness penalty.
//!
//! `Φ(x) = β · Σ_{pairs j~l} κ_jl · ρ(x_j − x_l)`, each unordered neighbour
//! pair counted once, with `κ_jl` the inverse index-space distance between the
//! two voxels.

use serde::{Deserialize, Serialize};

use crate::par;
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    /// `ρ(t) = t²/2`
    #[default]
    Quadratic,
    /// Quadratic inside `|t| ≤ delta`, linear outside.
    Huber { delta: f64 },
}

impl Potential {
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Potential::Quadratic => 0.5 * t * t,
            Potential::Huber { delta } => {
                let a = t.abs();
                if a <= delta {
                    0.5 * t * t
                } else {
                    delta * a - 0.5 * delta * delta
                }
            }
        }
    }

    #[inline]
    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Potential::Quadratic => t,
            Potential::Huber { delta } => t.clamp(-delta, delta),
        }
    }

    /// Curvature of the quadratic majorizer at `t` (`ρ'(t)/t`).
    #[inline]
    pub fn surrogate_curvature(&self, t: f64) -> f64 {
        match *self {
            Potential::Quadratic => 1.0,
            Potential::Huber { delta } => {
                let a = t.abs();
                if a <= delta {
                    1.0
                } else {
                    delta / a
                }
            }
        }
    }
}

/// Offsets `(dx, dy, dz)` of the 13 "forward" neighbours and their weights.
fn forward_offsets() -> Vec<([isize; 3], f64)> {
    let mut out = Vec::with_capacity(13);
    for dz in -1isize..=1 {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let key = (dz, dy, dx);
                if key > (0, 0, 0) {
                    let d2 = (dx * dx + dy * dy + dz * dz) as f64;
                    out.push(([dx, dy, dz], 1.0 / d2.sqrt()));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularizer {
    pub beta: f64,
    pub potential: Potential,
}

impl Regularizer {
    pub fn new(beta: f64, potential: Potential) -> Self {
        Self { beta, potential }
    }

    /// Sums `f(κ, x_j, x_l, j, l)` over every unordered neighbour pair, slice by slice.
    fn pair_sum<F>(&self, dims: [usize; 3], f: F) -> f64
    where
        F: Fn(f64, usize, usize) -> f64 + Sync + Send,
    {
        let [nx, ny, nz] = dims;
        let offsets = forward_offsets();
        par::map_collect(nz, |z| {
            let mut acc = 0.0;
            for y in 0..ny {
                for x in 0..nx {
                    let j = (z * ny + y) * nx + x;
                    for &([dx, dy, dz], kappa) in &offsets {
                        let (xl, yl, zl) = (x as isize + dx, y as isize + dy, z as isize + dz);
                        if xl < 0 || yl < 0 || xl >= nx as isize || yl >= ny as isize || zl >= nz as isize {
                            continue;
                        }
                        let l = (zl as usize * ny + yl as usize) * nx + xl as usize;
                        acc += f(kappa, j, l);
                    }
                }
            }
            acc
        })
        .into_iter()
        .sum()
    }

    pub fn value(&self, x: &Volume) -> f64 {
        if self.beta == 0.0 {
            return 0.0;
        }
        let v = x.values();
        let p = self.potential;
        self.beta * self.pair_sum(x.dims(), |k, j, l| k * p.value(v[j] - v[l]))
    }

    pub fn gradient(&self, x: &Volume) -> Volume {
        let mut out = Volume::zeros(x.dims(), x.voxel_size());
        if self.beta == 0.0 {
            return out;
        }
        let [nx, ny, nz] = x.dims();
        let v = x.values();
        let p = self.potential;
        let beta = self.beta;
        let mut neighbours = Vec::with_capacity(26);
        for ([dx, dy, dz], k) in forward_offsets() {
            neighbours.push(([dx, dy, dz], k));
            neighbours.push(([-dx, -dy, -dz], k));
        }
        par::fill(out.values_mut(), |j| {
            let (x0, y0, z0) = ((j % nx) as isize, ((j / nx) % ny) as isize, (j / (nx * ny)) as isize);
            let mut g = 0.0;
            for &([dx, dy, dz], kappa) in &neighbours {
                let (xl, yl, zl) = (x0 + dx, y0 + dy, z0 + dz);
                if xl < 0 || yl < 0 || zl < 0 || xl >= nx as isize || yl >= ny as isize || zl >= nz as isize {
                    continue;
                }
                let l = (zl as usize * ny + yl as usize) * nx + xl as usize;
                g += kappa * p.derivative(v[j] - v[l]);
            }
            beta * g
        });
        out
    }

    /// `dᵀ H d` for the quadratic majorizer of `Φ` at `x`.
    pub fn curvature_along(&self, x: &Volume, d: &Volume) -> f64 {
        if self.beta == 0.0 {
            return 0.0;
        }
        let v = x.values();
        let dv = d.values();
        let p = self.potential;
        self.beta
            * self.pair_sum(x.dims(), |k, j, l| {
                let s = dv[j] - dv[l];
                k * p.surrogate_curvature(v[j] - v[l]) * s * s
            })
    }
}
