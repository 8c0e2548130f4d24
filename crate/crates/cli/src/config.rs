use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use walllaw::cell::{CellResolution, SolverOptions};
use walllaw::channel::{ChannelConfig, ChannelResolution};
use walllaw::geometry::{
    flat_boundary, random_boundary, sinusoid_boundary, BoundarySpecFile, ModeSpec,
};
use walllaw::BoundaryFunction;

/// Wall profile description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryConfig {
    Flat { value: f64 },
    Sinusoid { mean: f64, amplitude: f64 },
    Modes { modes: Vec<ModeSpec> },
    /// A `{"modes": [...], "grid": N}` file; `grid` in the file wins.
    File { path: PathBuf },
    /// Seeded by the global `--seed`.
    Random { mean: f64, amplitude: f64, kmax: usize },
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig::Sinusoid { mean: -0.5, amplitude: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConfig {
    /// Horizontal lattice; `None` picks 256 x 1 for grooves, 64 x 64 otherwise.
    pub n: Option<[usize; 2]>,
    pub nz: Option<usize>,
    pub stretch: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self { n: None, nz: None, stretch: 0.0, tol: 1e-8, max_iter: 3000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub epsilon: f64,
    pub nper: usize,
    pub u_top: [f64; 2],
    pub nonlinear: bool,
    /// Lattice over all `nper` cells; `None` picks 32 (x 1 for grooves) per cell.
    pub n: Option<[usize; 2]>,
    pub nz: usize,
    pub stretch: f64,
    pub tol: f64,
    pub max_picard: usize,
    pub relaxation: f64,
    pub max_gmres: usize,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            epsilon: 1.0 / 16.0,
            nper: 4,
            u_top: [1.0, 0.0],
            nonlinear: false,
            n: None,
            nz: 64,
            stretch: 0.0,
            tol: 1e-8,
            max_picard: 200,
            relaxation: 0.7,
            max_gmres: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub epsilons: Vec<f64>,
    /// Box half-widths; per epsilon only `r >= epsilon` are scanned.
    pub r_values: Vec<f64>,
    /// Fixed box size of the cross-epsilon improvement fit.
    pub r_improvement: f64,
    /// Scan `x3 e1 + eps v1(x/eps)` instead of channel solutions.
    pub manufactured: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            r_values: vec![0.5, 0.25, 0.125, 0.0625],
            r_improvement: 0.25,
            manufactured: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HalfspaceConfig {
    /// Corrector whose trace is extended when no trace file is given.
    pub j: usize,
    pub trace: Option<PathBuf>,
    pub heights: Vec<f64>,
    /// Output lattice; `None` uses the smallest one resolving the trace.
    pub lattice: Option<[usize; 2]>,
}

impl Default for HalfspaceConfig {
    fn default() -> Self {
        Self { j: 1, trace: None, heights: vec![0.0, 0.5, 1.0, 2.0, 4.0], lattice: None }
    }
}

/// Everything a run depends on. Written back fully expanded next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub boundary: BoundaryConfig,
    /// Lattice size used to validate and sample the profile.
    pub boundary_grid: usize,
    pub cell: CellConfig,
    pub channel: ChannelSection,
    pub report: ReportConfig,
    pub halfspace: HalfspaceConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            boundary: BoundaryConfig::default(),
            boundary_grid: 64,
            cell: CellConfig::default(),
            channel: ChannelSection::default(),
            report: ReportConfig::default(),
            halfspace: HalfspaceConfig::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Hash of the canonical expanded form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        walllaw::content_hash(json.as_bytes())
    }

    pub fn boundary(&self) -> anyhow::Result<BoundaryFunction> {
        let n = self.boundary_grid;
        let g = match &self.boundary {
            BoundaryConfig::Flat { value } => flat_boundary(*value, n)?,
            BoundaryConfig::Sinusoid { mean, amplitude } => sinusoid_boundary(*mean, *amplitude, n)?,
            BoundaryConfig::Modes { modes } => BoundarySpecFile { modes: modes.clone(), grid: n }.build()?,
            BoundaryConfig::File { path } => {
                let text =
                    std::fs::read_to_string(path).with_context(|| format!("reading boundary {}", path.display()))?;
                let file: BoundarySpecFile =
                    serde_json::from_str(&text).with_context(|| format!("parsing boundary {}", path.display()))?;
                file.build()?
            }
            BoundaryConfig::Random { mean, amplitude, kmax } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                random_boundary(&mut rng, *mean, *amplitude, *kmax, n)?
            }
        };
        Ok(g)
    }

    pub fn cell_resolution(&self, gamma: &BoundaryFunction) -> CellResolution {
        let base = CellResolution::production(gamma);
        let [n1, n2] = self.cell.n.unwrap_or([base.n1, base.n2]);
        CellResolution { n1, n2, nz: self.cell.nz.unwrap_or(base.nz), stretch: self.cell.stretch }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions { tol: self.cell.tol, max_iter: self.cell.max_iter }
    }

    pub fn channel_config(&self, gamma: &BoundaryFunction, epsilon: f64) -> ChannelConfig {
        let c = &self.channel;
        let per_cell = if gamma.is_groove() { [32, 1] } else { [32, 32] };
        let [n1, n2] = c.n.unwrap_or([per_cell[0] * c.nper, if per_cell[1] == 1 { 1 } else { per_cell[1] * c.nper }]);
        ChannelConfig {
            epsilon,
            nper: c.nper,
            u_top: c.u_top,
            nonlinear: c.nonlinear,
            resolution: ChannelResolution { n1, n2, nz: c.nz, stretch: c.stretch },
            tol: c.tol,
            max_picard: c.max_picard,
            relaxation: c.relaxation,
            max_gmres: c.max_gmres,
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.report.epsilons.is_empty() {
            bail!("report.epsilons must not be empty");
        }
        if self.report.r_values.windows(2).any(|w| w[1] >= w[0]) {
            bail!("report.r_values must be strictly decreasing");
        }
        if !(1..=2).contains(&self.halfspace.j) {
            bail!("halfspace.j must be 1 or 2");
        }
        Ok(())
    }
}
