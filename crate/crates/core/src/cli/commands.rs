//! The batch commands. Each writes its artifacts under an output directory
//! and returns what it computed so callers can chain them in memory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context};

use super::config::{Artifact, MaskName, ModeName, RunConfig};
use crate::geometry::{half_scan_views, make_geometry, Geometry, Mask};
use crate::io;
use crate::metrics::{insert_centroid_and_width, per_slice_rmse, InsertMeasurement, RoiBox, SliceRmseProfile};
use crate::phantom::{rasterize, simulate_sinogram, Ellipsoid};
use crate::recon::{reconstruct_with, resolve_mask, ReconMode, ReconReport};
use crate::volume::{Sinogram, Volume};

pub const SINOGRAM_FILE: &str = "sinogram.saws";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.sawv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const MASK_FILE: &str = "mask.sawv";
pub const MASK_AREA_FILE: &str = "mask_area.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

pub fn volume_file(mode: ModeName) -> String {
    format!("recon_{}.sawv", ReconMode::from(mode).name())
}

pub fn report_file(mode: ModeName) -> String {
    format!("report_{}.csv", ReconMode::from(mode).name())
}

pub fn rmse_file(name: &str) -> String {
    format!("rmse_{name}.csv")
}

fn geometry(cfg: &RunConfig) -> anyhow::Result<Geometry> {
    make_geometry(cfg.geometry.clone()).context("geometry section")
}

fn prepare_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Values as they come back from a sinogram file, so in-memory pipelines
/// match runs that reload the file.
pub fn as_stored(s: &Sinogram) -> Sinogram {
    let vals = s.values().iter().map(|&v| v as f32 as f64).collect();
    Sinogram::from_values(s.num_views(), s.rows(), s.cols(), vals).expect("same shape")
}

/// Scan phase at the center of the configured half scan.
pub fn reference_phase(cfg: &RunConfig, g: &Geometry) -> anyhow::Result<f64> {
    Ok(half_scan_views(g, cfg.recon.half_scan_start)?.center_phase())
}

pub fn manifest(cfg: &RunConfig, command: &str, g: &Geometry) -> anyhow::Result<String> {
    let half = half_scan_views(g, cfg.recon.half_scan_start)?;
    let mut m = String::new();
    writeln!(m, "# saw-recon {} run manifest", env!("CARGO_PKG_VERSION"))?;
    writeln!(m, "# command: {command}")?;
    writeln!(m, "# seed: {}", cfg.acquisition.seed)?;
    writeln!(m, "# half scan: {} views from view {}", half.len(), cfg.recon.half_scan_start)?;
    writeln!(m, "# reference phase: {}", half.center_phase())?;
    writeln!(m, "# the remainder is the resolved config and can be passed back to --config")?;
    m.push_str(&cfg.to_toml());
    Ok(m)
}

pub struct Simulation {
    pub sinogram: Sinogram,
    pub ground_truth: Volume,
    pub reference_phase: f64,
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> anyhow::Result<Simulation> {
    let g = geometry(cfg)?;
    prepare_dir(out)?;
    let phase = reference_phase(cfg, &g)?;
    let sinogram = simulate_sinogram(&cfg.phantom, &g, cfg.acquisition.noise())?;
    let ground_truth = rasterize(&cfg.phantom, phase, &g)?;
    if cfg.output.wants(Artifact::Sinogram) {
        io::write_sinogram(&sinogram, out.join(SINOGRAM_FILE))?;
    }
    if cfg.output.wants(Artifact::GroundTruth) {
        io::write_volume(&ground_truth, out.join(GROUND_TRUTH_FILE))?;
    }
    if cfg.output.wants(Artifact::Manifest) {
        write_text(&out.join(MANIFEST_FILE), &manifest(cfg, "simulate", &g)?)?;
    }
    Ok(Simulation {
        sinogram,
        ground_truth,
        reference_phase: phase,
    })
}

fn check_mask_file(cfg: &RunConfig) -> anyhow::Result<()> {
    if cfg.recon.mask == MaskName::File {
        match &cfg.recon.mask_file {
            Some(p) if p.is_file() => {}
            Some(p) => bail!("recon.mask_file {} does not exist", p.display()),
            None => bail!("recon.mask_file is required when recon.mask = \"file\""),
        }
    }
    Ok(())
}

/// `slice_index,area,sum` rows: voxel count equal to 1 and total weight.
pub fn mask_area_csv(mask: &Mask) -> String {
    let mut s = String::from("slice_index,area,sum\n");
    for z in 0..mask.dims()[2] {
        s.push_str(&format!("{z},{},{:.6}\n", mask.slice_area(z), mask.slice_sum(z)));
    }
    s
}

pub fn mask(cfg: &RunConfig, out: &Path) -> anyhow::Result<Mask> {
    let g = geometry(cfg)?;
    check_mask_file(cfg)?;
    let rc = cfg.recon.to_recon_config(Some(ModeName::Saw))?;
    prepare_dir(out)?;
    let mask = resolve_mask(&g, &rc)?;
    if cfg.output.wants(Artifact::Mask) {
        io::write_mask(&mask, g.voxel_size(), out.join(MASK_FILE))?;
    }
    if cfg.output.wants(Artifact::MaskArea) {
        write_text(&out.join(MASK_AREA_FILE), &mask_area_csv(&mask))?;
    }
    Ok(mask)
}

pub fn sinogram_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.recon.sinogram.clone().unwrap_or_else(|| out.join(SINOGRAM_FILE))
}

/// Reconstructs with `mode`. The sinogram is read from the configured path
/// unless one is passed in.
pub fn reconstruct(
    cfg: &RunConfig,
    mode: ModeName,
    out: &Path,
    sinogram: Option<&Sinogram>,
) -> anyhow::Result<(Volume, ReconReport)> {
    let g = geometry(cfg)?;
    let rc = cfg.recon.to_recon_config(Some(mode))?;
    rc.validate(&g)?;
    let loaded;
    let y = match sinogram {
        Some(y) => y,
        None => {
            let path = sinogram_path(cfg, out);
            ensure!(path.is_file(), "sinogram {} does not exist; run simulate first", path.display());
            loaded = io::read_sinogram(&path)?;
            &loaded
        }
    };
    if mode == ModeName::Saw {
        check_mask_file(cfg)?;
    }
    prepare_dir(out)?;
    let mask = match mode {
        ModeName::Saw => Some(resolve_mask(&g, &rc)?),
        _ => None,
    };
    let (x, report) = reconstruct_with(y, &g, &rc, mask.as_ref(), None, &mut |_, _| {})?;
    if cfg.output.wants(Artifact::Volume) {
        io::write_volume(&x, out.join(volume_file(mode)))?;
    }
    if cfg.output.wants(Artifact::Report) {
        write_text(&out.join(report_file(mode)), &report.to_csv())?;
    }
    Ok((x, report))
}

pub fn summary_line(name: &str, p: &SliceRmseProfile) -> String {
    let empty = p.empty.iter().filter(|&&e| e).count();
    let mut s = format!(
        "{name}: center_third_mean={:.6e} edge_sixths_mean={:.6e}",
        p.center_third_mean(),
        p.edge_sixths_mean()
    );
    if empty > 0 {
        s.push_str(&format!(" empty_slices={empty}"));
    }
    s
}

/// Per-slice RMSE of `a` against `b` over the support of `reference`.
pub fn compare_volumes(
    cfg: &RunConfig,
    name: &str,
    a: &Volume,
    b: &Volume,
    reference: &Volume,
    out: &Path,
) -> anyhow::Result<(SliceRmseProfile, String)> {
    let profile = per_slice_rmse(a, b, reference)?;
    prepare_dir(out)?;
    if cfg.output.wants(Artifact::Rmse) {
        write_text(&out.join(rmse_file(name)), &io::profile_csv(&profile))?;
    }
    let line = summary_line(name, &profile);
    Ok((profile, line))
}

pub fn compare(
    cfg: &RunConfig,
    name: &str,
    a: &Path,
    b: &Path,
    reference: &Path,
    out: &Path,
) -> anyhow::Result<(SliceRmseProfile, String)> {
    for p in [a, b, reference] {
        ensure!(p.is_file(), "volume {} does not exist", p.display());
    }
    let (va, vb, vr) = (io::read_volume(a)?, io::read_volume(b)?, io::read_volume(reference)?);
    compare_volumes(cfg, name, &va, &vb, &vr, out)
}

/// Voxel box around everywhere the insert's center goes during the rotation,
/// padded by its largest semi-axis plus `margin` voxels.
pub fn trajectory_roi(e: &Ellipsoid, g: &Geometry, margin: usize) -> RoiBox {
    let dims = g.volume_dims();
    let vox = g.voxel_size();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for k in 0..=64 {
        let c = e.center_at(k as f64 / 64.0);
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let reach = e.semi_axes.iter().cloned().fold(0.0, f64::max);
    let mut roi = RoiBox { lo: [0; 3], hi: [0; 3] };
    for a in 0..3 {
        let mid = (lo[a] + hi[a]) / 2.0;
        let half = (hi[a] - lo[a]) / 2.0 + reach;
        let center = mid / vox[a] + (dims[a] as f64 - 1.0) / 2.0;
        let w = (half / vox[a]).ceil() + margin as f64;
        roi.lo[a] = (center - w).round().max(0.0) as usize;
        roi.hi[a] = ((center + w).round() as usize + 1).min(dims[a]);
    }
    roi
}

pub struct InsertReport {
    pub roi: RoiBox,
    pub truth: InsertMeasurement,
    /// Per mode: measurement and Euclidean centroid error against the truth (mm).
    pub modes: Vec<(ModeName, InsertMeasurement, f64)>,
}

pub struct DemoSummary {
    pub simulation: Simulation,
    pub mask: Mask,
    pub volumes: Vec<(ModeName, Volume)>,
    pub reports: Vec<(ModeName, ReconReport)>,
    pub profiles: Vec<(String, SliceRmseProfile)>,
    pub insert: Option<InsertReport>,
    pub seconds: f64,
    pub text: String,
}

impl DemoSummary {
    pub fn volume(&self, mode: ModeName) -> &Volume {
        &self.volumes.iter().find(|(m, _)| *m == mode).expect("all modes run").1
    }

    pub fn profile(&self, name: &str) -> &SliceRmseProfile {
        &self.profiles.iter().find(|(n, _)| n == name).expect("known comparison").1
    }
}

pub const DEMO_COMPARISONS: [(&str, ModeName, ModeName); 4] = [
    ("saw_vs_full", ModeName::Saw, ModeName::Full),
    ("half_vs_full", ModeName::Half, ModeName::Full),
    ("saw_vs_half", ModeName::Saw, ModeName::Half),
    ("full_vs_half", ModeName::Full, ModeName::Half),
];

/// simulate → mask → full, half and SAW reconstructions → comparisons.
pub fn paper_demo(cfg: &RunConfig, out: &Path) -> anyhow::Result<DemoSummary> {
    let clock = Instant::now();
    let g = geometry(cfg)?;
    for mode in [ModeName::Full, ModeName::Half, ModeName::Saw] {
        cfg.recon.to_recon_config(Some(mode))?.validate(&g)?;
    }
    check_mask_file(cfg)?;
    let simulation = simulate(cfg, out)?;
    let mask = mask(cfg, out)?;
    let y = as_stored(&simulation.sinogram);

    let mut text = String::new();
    writeln!(text, "reference_phase = {:.6}", simulation.reference_phase)?;
    let mut volumes = Vec::new();
    let mut reports = Vec::new();
    for mode in [ModeName::Full, ModeName::Half, ModeName::Saw] {
        let (x, report) = reconstruct(cfg, mode, out, Some(&y))?;
        writeln!(
            text,
            "{}: iterations={} final_cost={:.9e} restarts={}",
            ReconMode::from(mode).name(),
            report.iterations(),
            report.cost.last().copied().unwrap_or(f64::NAN),
            report.restarts
        )?;
        volumes.push((mode, x));
        reports.push((mode, report));
    }
    let find = |m: ModeName| &volumes.iter().find(|(v, _)| *v == m).expect("ran").1;

    let mut profiles = Vec::new();
    for (name, a, b) in DEMO_COMPARISONS {
        let (p, line) = compare_volumes(cfg, name, find(a), find(b), &simulation.ground_truth, out)?;
        writeln!(text, "{line}")?;
        profiles.push((name.to_string(), p));
    }

    let insert = match cfg.phantom.ellipsoids.iter().find(|e| !e.motion.is_static()) {
        None => None,
        Some(e) => {
            let roi = trajectory_roi(e, &g, 1);
            let truth = insert_centroid_and_width(&simulation.ground_truth, roi)?;
            writeln!(
                text,
                "insert truth: centroid_mm={:?} fwhm_mm={:?}",
                rounded(truth.centroid),
                rounded(truth.fwhm)
            )?;
            let mut modes = Vec::new();
            for (mode, x) in &volumes {
                let m = insert_centroid_and_width(x, roi)?;
                let err = (0..3).map(|a| (m.centroid[a] - truth.centroid[a]).powi(2)).sum::<f64>().sqrt();
                writeln!(
                    text,
                    "insert {}: centroid_error_mm={err:.4} fwhm_mm={:?}",
                    ReconMode::from(*mode).name(),
                    rounded(m.fwhm)
                )?;
                modes.push((*mode, m, err));
            }
            Some(InsertReport { roi, truth, modes })
        }
    };
    if cfg.output.wants(Artifact::Summary) {
        write_text(&out.join(SUMMARY_FILE), &text)?;
    }
    Ok(DemoSummary {
        simulation,
        mask,
        volumes,
        reports,
        profiles,
        insert,
        seconds: clock.elapsed().as_secs_f64(),
        text,
    })
}

fn rounded(v: [f64; 3]) -> [f64; 3] {
    v.map(|x| (x * 1e4).round() / 1e4)
}
