//! Run configuration: one TOML document with `geometry`, `phantom`,
//! `acquisition`, `recon` and `output` sections.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::geometry::GeometryConfig;
use crate::phantom::{PhantomSpec, PhotonNoise};
use crate::recon::{Init, MaskSource, Potential, ReconConfig, ReconMode, Regularizer, StepSize};
use crate::weights::{TransitionMode, WeightModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default = "PhantomSpec::static_default")]
    pub phantom: PhantomSpec,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    #[serde(default)]
    pub recon: ReconSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    /// Unattenuated photons per detector element; absent means noiseless.
    pub i0: Option<f64>,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self { i0: None, seed: 1 }
    }
}

impl AcquisitionConfig {
    pub fn noise(&self) -> Option<PhotonNoise> {
        self.i0.map(|i0| PhotonNoise { i0, seed: self.seed })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Full,
    Half,
    Saw,
}

impl From<ModeName> for ReconMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Full => ReconMode::FullMbir,
            ModeName::Half => ReconMode::HalfMbir,
            ModeName::Saw => ReconMode::SawMbir,
        }
    }
}

/// `"line_search"` or a fixed positive step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSetting {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialName {
    Quadratic,
    Huber,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitName {
    Zero,
    Fbp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskName {
    Geometric,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconSection {
    pub mode: ModeName,
    pub max_iterations: usize,
    pub step_size: StepSetting,
    pub beta: f64,
    pub potential: PotentialName,
    pub huber_delta: f64,
    pub num_subsets: usize,
    pub nesterov: bool,
    pub init: InitName,
    pub half_scan_start: usize,
    pub mask: MaskName,
    /// Feather width of the geometric mask (mm).
    pub feather_width: f64,
    pub mask_file: Option<PathBuf>,
    pub convergence_tol: f64,
    pub weights: WeightModel,
    pub transition: TransitionMode,
    /// Input sinogram for `reconstruct`; defaults to the one `simulate` writes.
    pub sinogram: Option<PathBuf>,
}

impl Default for ReconSection {
    fn default() -> Self {
        let base = ReconConfig::default();
        Self {
            mode: ModeName::Full,
            max_iterations: base.max_iterations,
            step_size: StepSetting::Named("line_search".into()),
            beta: 0.0,
            potential: PotentialName::Quadratic,
            huber_delta: 1e-3,
            num_subsets: base.num_subsets,
            nesterov: base.nesterov,
            init: InitName::Zero,
            half_scan_start: base.half_scan_start,
            mask: MaskName::Geometric,
            feather_width: 0.0,
            mask_file: None,
            convergence_tol: base.convergence_tol,
            weights: base.weight_model,
            transition: base.transition,
            sinogram: None,
        }
    }
}

impl ReconSection {
    /// Library configuration for `mode` (or the configured mode).
    pub fn to_recon_config(&self, mode: Option<ModeName>) -> anyhow::Result<ReconConfig> {
        let step_size = match &self.step_size {
            StepSetting::Fixed(a) => StepSize::Fixed(*a),
            StepSetting::Named(s) if s == "line_search" => StepSize::LineSearch,
            StepSetting::Named(s) => bail!("recon.step_size: expected \"line_search\" or a number, got {s:?}"),
        };
        let potential = match self.potential {
            PotentialName::Quadratic => Potential::Quadratic,
            PotentialName::Huber => Potential::Huber { delta: self.huber_delta },
        };
        let mask_source = match self.mask {
            MaskName::Geometric => MaskSource::Geometric { feather_width: self.feather_width },
            MaskName::File => match &self.mask_file {
                Some(p) => MaskSource::File(p.clone()),
                None => bail!("recon.mask_file is required when recon.mask = \"file\""),
            },
        };
        Ok(ReconConfig {
            mode: mode.unwrap_or(self.mode).into(),
            max_iterations: self.max_iterations,
            step_size,
            regularizer: Regularizer::new(self.beta, potential),
            num_subsets: self.num_subsets,
            nesterov: self.nesterov,
            init: match self.init {
                InitName::Zero => Init::Zero,
                InitName::Fbp => Init::Fbp,
            },
            half_scan_start: self.half_scan_start,
            mask_source,
            convergence_tol: self.convergence_tol,
            weight_model: self.weights,
            transition: self.transition,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    Sinogram,
    GroundTruth,
    Manifest,
    Mask,
    MaskArea,
    Volume,
    Report,
    Rmse,
    Summary,
}

impl Artifact {
    pub const ALL: [Artifact; 9] = [
        Artifact::Sinogram,
        Artifact::GroundTruth,
        Artifact::Manifest,
        Artifact::Mask,
        Artifact::MaskArea,
        Artifact::Volume,
        Artifact::Report,
        Artifact::Rmse,
        Artifact::Summary,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub artifacts: Vec<Artifact>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            artifacts: Artifact::ALL.to_vec(),
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, a: Artifact) -> bool {
        self.artifacts.contains(&a)
    }
}

/// A `--section.key=value` flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: toml::Value,
}

impl Override {
    /// Parses `section.key=value`; the value is read as a TOML literal and
    /// falls back to a bare string.
    pub fn parse(spec: &str) -> anyhow::Result<Self> {
        let spec = spec.trim_start_matches("--");
        let (key, raw) = spec
            .split_once('=')
            .with_context(|| format!("override {spec:?} is not of the form section.key=value"))?;
        let path: Vec<String> = key.split('.').map(str::to_owned).collect();
        if path.len() < 2 || path.iter().any(|p| p.is_empty()) {
            bail!("override key {key:?} must look like section.key");
        }
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_owned()),
        };
        Ok(Self { path, value })
    }

    fn apply(&self, root: &mut toml::Table) -> anyhow::Result<()> {
        let (last, sections) = self.path.split_last().expect("at least two components");
        let mut table = root;
        for s in sections {
            let entry = table
                .entry(s.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = match entry {
                toml::Value::Table(t) => t,
                _ => bail!("override {}: {s:?} is not a section", self.path.join(".")),
            };
        }
        table.insert(last.clone(), self.value.clone());
        Ok(())
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[Override]) -> anyhow::Result<Self> {
        let mut table: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        for o in overrides {
            o.apply(&mut table)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| anyhow::anyhow!("invalid config: {}", e.message()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[Override]) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text, overrides).with_context(|| format!("in config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
