//! Penalized weighted least-squares reconstruction.
//!
//! Three modes share one driver:
//!
//! + `FullMbir`: cost and gradient over every view.
//! + `HalfMbir`: cost, weights and back projection restricted to the half
//!   scan, a consistent problem on less data.
//! + `SawMbir`: the full-scan cost, descended along the pseudo-gradient whose
//!   back projector uses only half-scan views inside the mask. The line search
//!   always evaluates the true cost, so the pseudo-gradient only picks the
//!   direction.

mod fbp;
mod regularizer;

use std::path::PathBuf;
use std::time::Instant;

pub use fbp::{fbp_init, fbp_init_masked};
pub use regularizer::{Potential, Regularizer};

use crate::error::{Error, Result};
use crate::geometry::{compute_mask, half_scan_views, Geometry, Mask, ViewSubset};
use crate::par;
use crate::projector::{back_project_views, forward_project_views, masked_back_project_views};
use crate::volume::{Sinogram, Volume};
use crate::weights::{
    statistical_weights, view_transition_weights, TransitionMode, TransitionWeights, WeightModel,
    Weights,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconMode {
    FullMbir,
    HalfMbir,
    SawMbir,
}

impl ReconMode {
    pub fn name(&self) -> &'static str {
        match self {
            ReconMode::FullMbir => "full",
            ReconMode::HalfMbir => "half",
            ReconMode::SawMbir => "saw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    LineSearch,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zero,
    Fbp,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskSource {
    /// Half-scan completeness region, optionally feathered (mm).
    Geometric { feather_width: f64 },
    /// Mask stored as a volume file.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    pub mode: ReconMode,
    pub max_iterations: usize,
    pub step_size: StepSize,
    pub regularizer: Regularizer,
    pub num_subsets: usize,
    pub nesterov: bool,
    pub init: Init,
    pub half_scan_start: usize,
    pub mask_source: MaskSource,
    /// Stop once the relative cost decrease of a full iteration falls below this.
    pub convergence_tol: f64,
    pub weight_model: WeightModel,
    /// Weighting of the half-scan branch of the masked back projector.
    pub transition: TransitionMode,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            mode: ReconMode::FullMbir,
            max_iterations: 50,
            step_size: StepSize::LineSearch,
            regularizer: Regularizer::new(0.0, Potential::Quadratic),
            num_subsets: 1,
            nesterov: false,
            init: Init::Zero,
            half_scan_start: 0,
            mask_source: MaskSource::Geometric { feather_width: 0.0 },
            convergence_tol: 1e-6,
            weight_model: WeightModel::Uniform,
            transition: TransitionMode::Binary,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self, geometry: &Geometry) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if !(self.regularizer.beta.is_finite() && self.regularizer.beta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "regularizer strength must be non-negative, got {}",
                self.regularizer.beta
            )));
        }
        if let Potential::Huber { delta } = self.regularizer.potential {
            if !(delta.is_finite() && delta > 0.0) {
                return Err(Error::InvalidArgument(format!("huber delta must be positive, got {delta}")));
            }
        }
        if self.num_subsets < 1 || !geometry.num_views().is_multiple_of(self.num_subsets) {
            return Err(Error::InvalidArgument(format!(
                "num_subsets {} must evenly divide {} views",
                self.num_subsets,
                geometry.num_views()
            )));
        }
        if let StepSize::Fixed(a) = self.step_size {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::InvalidArgument(format!("fixed step size must be positive, got {a}")));
            }
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol >= 0.0) {
            return Err(Error::InvalidArgument("convergence_tol must be non-negative".into()));
        }
        if self.half_scan_start >= geometry.num_views() {
            return Err(Error::InvalidArgument(format!(
                "half_scan_start {} out of range",
                self.half_scan_start
            )));
        }
        Ok(())
    }
}

/// Per-iteration diagnostics. Index 0 of `cost` is the starting image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReconReport {
    pub cost: Vec<f64>,
    pub step: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub seconds: Vec<f64>,
    /// `⟨g(x), g_s(x)⟩` at the final iterate (equals `‖g‖²` outside SAW mode).
    pub final_gradient_inner_product: f64,
    /// Iterations where the accelerated step was discarded for a plain one.
    pub restarts: usize,
    /// The direction stopped decreasing the cost before the iteration budget ran out.
    pub stalled: bool,
}

impl ReconReport {
    pub fn iterations(&self) -> usize {
        self.cost.len().saturating_sub(1)
    }

    /// Columns: iteration, cost, step, grad_norm, seconds.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,cost,step,grad_norm,seconds\n");
        for k in 0..self.cost.len() {
            s.push_str(&format!(
                "{k},{:.17e},{:.17e},{:.17e},{:.6}\n",
                self.cost[k], self.step[k], self.grad_norm[k], self.seconds[k]
            ));
        }
        s
    }
}

/// How the descent direction back-projects the weighted residual.
enum Backprojector<'a> {
    Matched,
    Masked {
        mask: &'a Mask,
        transition: TransitionWeights,
    },
}

/// Cost, direction and line search for one mode over fixed data.
struct Objective<'a> {
    geometry: &'a Geometry,
    y: &'a Sinogram,
    w: &'a Weights,
    regularizer: Regularizer,
    /// Views entering the cost.
    data_views: Vec<bool>,
    backprojector: Backprojector<'a>,
}

fn data_views(geometry: &Geometry, cfg: &ReconConfig) -> Result<Vec<bool>> {
    Ok(match cfg.mode {
        ReconMode::HalfMbir => half_scan_views(geometry, cfg.half_scan_start)?.selection(),
        ReconMode::FullMbir | ReconMode::SawMbir => vec![true; geometry.num_views()],
    })
}

impl<'a> Objective<'a> {
    fn new(
        geometry: &'a Geometry,
        y: &'a Sinogram,
        w: &'a Weights,
        cfg: &ReconConfig,
        mask: Option<&'a Mask>,
    ) -> Result<Self> {
        y.check_geometry(geometry)?;
        crate::error::ensure_dims("weights", y.shape(), w.shape())?;
        let backprojector = match cfg.mode {
            ReconMode::SawMbir => {
                let mask = mask.ok_or_else(|| {
                    Error::InvalidArgument("SAW reconstruction needs a mask".into())
                })?;
                crate::error::ensure_dims("mask", geometry.volume_dims(), mask.dims())?;
                let half = half_scan_views(geometry, cfg.half_scan_start)?;
                Backprojector::Masked {
                    mask,
                    transition: view_transition_weights(geometry, &half, cfg.transition)?,
                }
            }
            _ => Backprojector::Matched,
        };
        Ok(Self {
            geometry,
            y,
            w,
            regularizer: cfg.regularizer,
            data_views: data_views(geometry, cfg)?,
            backprojector,
        })
    }

    /// `Ax − y` on `views`, zero elsewhere.
    fn residual(&self, x: &Volume, views: &[bool]) -> Result<Sinogram> {
        let mut r = forward_project_views(x, self.geometry, views)?;
        let per_view = r.view_len();
        let y = self.y.values();
        par::for_each_chunk_mut(r.values_mut(), per_view, |v, block| {
            if views[v] {
                let yv = &y[v * per_view..(v + 1) * per_view];
                for (ri, yi) in block.iter_mut().zip(yv) {
                    *ri -= yi;
                }
            }
        });
        Ok(r)
    }

    fn data_cost(&self, r: &Sinogram) -> f64 {
        let (rv, wv) = (r.values(), self.w.values());
        0.5 * par::sum(rv.len(), |i| wv[i] * rv[i] * rv[i])
    }

    fn cost(&self, x: &Volume, r: &Sinogram) -> f64 {
        self.data_cost(r) + self.regularizer.value(x)
    }

    fn weighted(&self, r: &Sinogram, scale: f64) -> Sinogram {
        let mut out = r.clone();
        let wv = self.w.values();
        par::fill(out.values_mut(), |i| scale * wv[i] * r.values()[i]);
        out
    }

    /// `scale · Bᵀ W r + ∇Φ(x)` with `B` the mode's back projector over `views`.
    fn direction(&self, x: &Volume, r: &Sinogram, views: &[bool], scale: f64) -> Result<Volume> {
        let wr = self.weighted(r, scale);
        let mut d = match &self.backprojector {
            Backprojector::Matched => back_project_views(&wr, self.geometry, views)?,
            Backprojector::Masked { mask, transition } => {
                masked_back_project_views(&wr, self.geometry, views, mask, transition)?
            }
        };
        d.add_scaled(1.0, &self.regularizer.gradient(x));
        Ok(d)
    }

    /// Exact gradient of the mode's cost (matched back projector).
    fn true_gradient(&self, x: &Volume, r: &Sinogram) -> Result<Volume> {
        let wr = self.weighted(r, 1.0);
        let mut g = back_project_views(&wr, self.geometry, &self.data_views)?;
        g.add_scaled(1.0, &self.regularizer.gradient(x));
        Ok(g)
    }

    /// Step along `−d` minimizing the (scaled) cost restricted to `views`.
    ///
    /// The quadratic model uses `⟨d, ∇f⟩ = ⟨Ad, W r⟩ + ⟨d, ∇Φ⟩`, so only one
    /// extra forward projection is needed. The candidate is halved until the
    /// cost decreases; zero is returned when it never does.
    fn line_search(&self, x: &Volume, d: &Volume, r: &Sinogram, views: &[bool], scale: f64) -> Result<f64> {
        if !d.is_finite() {
            return Err(Error::NonFinite("search direction".into()));
        }
        let ad = forward_project_views(d, self.geometry, views)?;
        let (adv, rv, wv) = (ad.values(), r.values(), self.w.values());
        let reg_grad = self.regularizer.gradient(x);
        let slope = scale * par::sum(adv.len(), |i| wv[i] * adv[i] * rv[i]) + d.dot(&reg_grad);
        let curvature = scale * par::sum(adv.len(), |i| wv[i] * adv[i] * adv[i])
            + self.regularizer.curvature_along(x, d);
        if !(slope > 0.0 && curvature > 0.0) {
            return Ok(0.0);
        }
        let line_cost = |alpha: f64| {
            let data = 0.5 * scale * par::sum(rv.len(), |i| {
                let ri = rv[i] - alpha * adv[i];
                wv[i] * ri * ri
            });
            data + self.regularizer.value(&x.combine(1.0, -alpha, d))
        };
        let base = line_cost(0.0);
        let mut alpha = slope / curvature;
        for _ in 0..=20 {
            let c = line_cost(alpha);
            if c.is_finite() && c <= base {
                return Ok(alpha);
            }
            alpha *= 0.5;
        }
        Ok(0.0)
    }
}

/// Resolves the statistical weights and view selections for `cfg`.
fn weights_for(y: &Sinogram, cfg: &ReconConfig) -> Weights {
    statistical_weights(y, cfg.weight_model)
}

/// `½‖y − Ax‖²_W + Φ(x)` over the views the mode uses.
pub fn cost(x: &Volume, y: &Sinogram, w: &Weights, cfg: &ReconConfig, geometry: &Geometry) -> Result<f64> {
    x.check_geometry(geometry)?;
    let obj = Objective::new(geometry, y, w, &with_matched(cfg), None)?;
    let r = obj.residual(x, &obj.data_views)?;
    Ok(obj.cost(x, &r))
}

/// Exact gradient of [`cost`].
pub fn gradient(x: &Volume, y: &Sinogram, w: &Weights, cfg: &ReconConfig, geometry: &Geometry) -> Result<Volume> {
    x.check_geometry(geometry)?;
    let obj = Objective::new(geometry, y, w, &with_matched(cfg), None)?;
    let r = obj.residual(x, &obj.data_views)?;
    obj.true_gradient(x, &r)
}

/// Masked back projection of the full-scan weighted residual plus `∇Φ(x)`.
pub fn pseudo_gradient(
    x: &Volume,
    y: &Sinogram,
    w: &Weights,
    mask: &Mask,
    cfg: &ReconConfig,
    geometry: &Geometry,
) -> Result<Volume> {
    if cfg.mode != ReconMode::SawMbir {
        return Err(Error::InvalidArgument("pseudo_gradient requires SAW mode".into()));
    }
    x.check_geometry(geometry)?;
    let obj = Objective::new(geometry, y, w, cfg, Some(mask))?;
    let r = obj.residual(x, &obj.data_views)?;
    let all = obj.data_views.clone();
    obj.direction(x, &r, &all, 1.0)
}

/// Step `α ≥ 0` along `−d` that does not increase [`cost`].
pub fn line_search(
    x: &Volume,
    d: &Volume,
    y: &Sinogram,
    w: &Weights,
    cfg: &ReconConfig,
    geometry: &Geometry,
) -> Result<f64> {
    x.check_geometry(geometry)?;
    d.check_geometry(geometry)?;
    let obj = Objective::new(geometry, y, w, &with_matched(cfg), None)?;
    let r = obj.residual(x, &obj.data_views)?;
    obj.line_search(x, d, &r, &obj.data_views, 1.0)
}

/// SAW mode only changes the back projector, so cost-level helpers evaluate
/// it like the full-scan problem.
fn with_matched(cfg: &ReconConfig) -> ReconConfig {
    let mut c = cfg.clone();
    if c.mode == ReconMode::SawMbir {
        c.mode = ReconMode::FullMbir;
    }
    c
}

/// Loads or computes the mask a SAW reconstruction will use.
pub fn resolve_mask(geometry: &Geometry, cfg: &ReconConfig) -> Result<Mask> {
    match &cfg.mask_source {
        MaskSource::Geometric { feather_width } => {
            let half = half_scan_views(geometry, cfg.half_scan_start)?;
            compute_mask(geometry, &half, *feather_width)
        }
        MaskSource::File(path) => {
            let v = crate::io::read_volume(path)?;
            v.check_geometry(geometry)?;
            Mask::from_values(v.dims(), v.into_values(), 0.0)
        }
    }
}

fn initial_image(y: &Sinogram, geometry: &Geometry, cfg: &ReconConfig, mask: Option<&Mask>) -> Result<Volume> {
    match (cfg.init, cfg.mode) {
        (Init::Zero, _) => Ok(Volume::zeros_for(geometry)),
        (Init::Fbp, ReconMode::FullMbir) => fbp_init(y, geometry, &ViewSubset::full(geometry)),
        (Init::Fbp, ReconMode::HalfMbir) => {
            fbp_init(y, geometry, &half_scan_views(geometry, cfg.half_scan_start)?)
        }
        (Init::Fbp, ReconMode::SawMbir) => {
            let half = half_scan_views(geometry, cfg.half_scan_start)?;
            let mask = mask.ok_or_else(|| Error::InvalidArgument("SAW reconstruction needs a mask".into()))?;
            fbp_init_masked(y, geometry, &half, mask)
        }
    }
}

/// Runs the configured reconstruction, resolving the mask from `cfg`.
pub fn reconstruct(y: &Sinogram, geometry: &Geometry, cfg: &ReconConfig) -> Result<(Volume, ReconReport)> {
    cfg.validate(geometry)?;
    let mask = match cfg.mode {
        ReconMode::SawMbir => Some(resolve_mask(geometry, cfg)?),
        _ => None,
    };
    reconstruct_with(y, geometry, cfg, mask.as_ref(), None, &mut |_, _| {})
}

/// Full-control entry point: explicit mask, optional starting image, and an
/// observer called with every accepted iterate (`k = 0` is the start).
pub fn reconstruct_with(
    y: &Sinogram,
    geometry: &Geometry,
    cfg: &ReconConfig,
    mask: Option<&Mask>,
    start: Option<Volume>,
    observer: &mut dyn FnMut(usize, &Volume),
) -> Result<(Volume, ReconReport)> {
    cfg.validate(geometry)?;
    let clock = Instant::now();
    let w = weights_for(y, cfg);
    let obj = Objective::new(geometry, y, &w, cfg, mask)?;
    let mut x = match start {
        Some(x) => {
            x.check_geometry(geometry)?;
            x
        }
        None => initial_image(y, geometry, cfg, mask)?,
    };
    let line_search = matches!(cfg.step_size, StepSize::LineSearch);
    let num_subsets = cfg.num_subsets;
    let subsets: Vec<Vec<bool>> = (0..num_subsets)
        .map(|s| {
            obj.data_views
                .iter()
                .enumerate()
                .map(|(v, &on)| on && v % num_subsets == s)
                .collect()
        })
        .collect();

    let mut r = obj.residual(&x, &obj.data_views)?;
    let mut f = obj.cost(&x, &r);
    if !f.is_finite() {
        return Err(Error::NonFinite(format!("initial cost is {f}")));
    }
    let mut report = ReconReport {
        cost: vec![f],
        step: vec![0.0],
        grad_norm: vec![0.0],
        seconds: vec![clock.elapsed().as_secs_f64()],
        ..Default::default()
    };
    observer(0, &x);

    let mut x_prev = x.clone();
    let mut t = 1.0f64;
    for k in 1..=cfg.max_iterations {
        let tick = Instant::now();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let (mut z, mut rz) = if cfg.nesterov && k > 1 {
            let momentum = (t - 1.0) / t_next;
            let z = x.combine(1.0 + momentum, -momentum, &x_prev);
            let rz = obj.residual(&z, &obj.data_views)?;
            (z, rz)
        } else {
            (x.clone(), r.clone())
        };

        let mut steps = Vec::with_capacity(num_subsets);
        let mut first_norm = None;
        for sel in &subsets {
            let (r_sub, scale) = if num_subsets == 1 {
                (rz.clone(), 1.0)
            } else {
                (obj.residual(&z, sel)?, num_subsets as f64)
            };
            let d = obj.direction(&z, &r_sub, sel, scale)?;
            first_norm.get_or_insert_with(|| d.norm());
            let alpha = match cfg.step_size {
                StepSize::LineSearch => obj.line_search(&z, &d, &r_sub, sel, scale)?,
                StepSize::Fixed(a) => a,
            };
            z.add_scaled(-alpha, &d);
            steps.push(alpha);
        }
        rz = obj.residual(&z, &obj.data_views)?;
        let mut f_new = obj.cost(&z, &rz);
        let mut step = steps.iter().sum::<f64>() / steps.len() as f64;

        // NaN counts as uphill.
        let improved = f_new <= f;
        if line_search && !improved {
            // Accelerated or subset step went uphill: restart from x with a
            // plain full-data step.
            report.restarts += 1;
            t = 1.0;
            let d = obj.direction(&x, &r, &obj.data_views, 1.0)?;
            let alpha = obj.line_search(&x, &d, &r, &obj.data_views, 1.0)?;
            z = x.combine(1.0, -alpha, &d);
            rz = obj.residual(&z, &obj.data_views)?;
            f_new = obj.cost(&z, &rz);
            step = alpha;
            let improved = f_new <= f;
            if !improved {
                z = x.clone();
                rz = r.clone();
                f_new = f;
                step = 0.0;
            }
        } else {
            t = t_next;
        }
        if !f_new.is_finite() {
            return Err(Error::NonFinite(format!("cost became {f_new} at iteration {k}")));
        }

        let rel = (f - f_new) / f.abs().max(f64::MIN_POSITIVE);
        x_prev = std::mem::replace(&mut x, z);
        r = rz;
        f = f_new;
        report.cost.push(f);
        report.step.push(step);
        report.grad_norm.push(first_norm.unwrap_or(0.0));
        report.seconds.push(tick.elapsed().as_secs_f64());
        observer(k, &x);

        if line_search && step == 0.0 {
            report.stalled = k < cfg.max_iterations;
            break;
        }
        if rel.abs() < cfg.convergence_tol {
            break;
        }
    }

    let g_true = obj.true_gradient(&x, &r)?;
    report.final_gradient_inner_product = match obj.backprojector {
        Backprojector::Matched => g_true.dot(&g_true),
        Backprojector::Masked { .. } => {
            let gs = obj.direction(&x, &r, &obj.data_views, 1.0)?;
            g_true.dot(&gs)
        }
    };
    Ok((x, report))
}

#[cfg(test)]
mod tests;
