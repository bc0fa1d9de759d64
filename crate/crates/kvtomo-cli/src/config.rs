//! The run-matrix configuration file.

use std::path::{Path, PathBuf};

use kvtomo::conditions::StudySettings;
use kvtomo::experiments::{table_grid, ExperimentConfig, MeshSettings, Phantom, SolverSettings};
use kvtomo::functionals::{Formulation, IatVariant};
use kvtomo::{Bounds, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub formulation: Formulation,
    /// excitation cases, one table row block each
    pub excitations: Vec<usize>,
    pub deltas: Vec<f64>,
    pub seed: u64,
    /// write "-" in the timing columns
    pub deterministic: bool,
    /// load observations written by `generate` from this directory
    pub data_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            formulation: Formulation::IatReduced,
            excitations: vec![1],
            deltas: vec![0.0],
            seed: 1,
            deterministic: false,
            data_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub beta: f64,
    pub variant: IatVariant,
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection { beta: 1.0, variant: IatVariant::Obs2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyProblem {
    /// the configured cost around the phantom
    Cost,
    /// F(x) = A x with a seeded random matrix
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub problem: VerifyProblem,
    /// defaults to the run formulation
    pub formulation: Option<Formulation>,
    /// tangential cone constant; the gradient-field constant when absent
    pub c_tc: Option<f64>,
    /// report failures without failing the command
    pub exploratory: bool,
    pub linear_rows: usize,
    pub linear_cols: usize,
    pub sampling: StudySettings,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            problem: VerifyProblem::Cost,
            formulation: None,
            c_tc: None,
            exploratory: false,
            linear_rows: 12,
            linear_cols: 8,
            sampling: StudySettings::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub run: RunSection,
    pub mesh: MeshSettings,
    pub phantom: Phantom,
    pub bounds: Bounds,
    pub cost: CostSection,
    pub solver: SolverSettings,
    pub verify: VerifySection,
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<CliConfig> {
        let cfg: CliConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<CliConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        CliConfig::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.excitations.is_empty() || self.run.deltas.is_empty() {
            return Err(Error::Config("run.excitations and run.deltas must not be empty".into()));
        }
        for c in self.cells(None) {
            c.validate()?;
        }
        Ok(())
    }

    fn base(&self, seed: Option<u64>) -> ExperimentConfig {
        ExperimentConfig {
            formulation: self.run.formulation,
            seed: seed.unwrap_or(self.run.seed),
            mesh: self.mesh.clone(),
            phantom: self.phantom.clone(),
            bounds: self.bounds,
            beta: self.cost.beta,
            variant: self.cost.variant,
            solver: self.solver.clone(),
            deterministic: self.run.deterministic,
            ..ExperimentConfig::default()
        }
    }

    /// The I x delta matrix, rows ordered by I then delta.
    pub fn cells(&self, seed: Option<u64>) -> Vec<ExperimentConfig> {
        table_grid(&self.base(seed), &self.run.excitations, &self.run.deltas)
    }
}
