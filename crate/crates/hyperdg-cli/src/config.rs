//! Study configuration: JSON with snake_case keys.

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Testcase1,
    Testcase2,
    Manufactured,
    ProjectorStudy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalSpec {
    AgainstFlow,
    WithFlow,
}

impl From<DiagonalSpec> for hyperdg::mesh::Diagonal {
    fn from(d: DiagonalSpec) -> Self {
        match d {
            DiagonalSpec::AgainstFlow => hyperdg::mesh::Diagonal::AgainstFlow,
            DiagonalSpec::WithFlow => hyperdg::mesh::Diagonal::WithFlow,
        }
    }
}

/// Mesh source: a file path or the structured generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeshSpec {
    File(String),
    Generator {
        nx: usize,
        ny: usize,
        diagonal: DiagonalSpec,
    },
}

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec::Generator {
            nx: 4,
            ny: 4,
            diagonal: DiagonalSpec::AgainstFlow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    Sweep,
    Global,
    #[default]
    Auto,
}

fn default_margin() -> usize {
    4
}

fn default_levels() -> usize {
    8
}

/// One convergence or projector study.
///
/// For `manufactured` cases `alpha` is read as the (integer) polynomial
/// degree of the exact solution. `singular_refine_levels` is a floor; the
/// effective depth at degree p is max(levels, p).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub case: Case,
    pub alpha: f64,
    #[serde(default)]
    pub mesh: MeshSpec,
    pub p_range: [usize; 2],
    #[serde(default)]
    pub solver: SolverChoice,
    #[serde(default = "default_margin")]
    pub quadrature_margin: usize,
    #[serde(default = "default_levels")]
    pub singular_refine_levels: usize,
    #[serde(default)]
    pub output: Option<String>,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(HarnessError::Config("alpha must be positive".into()));
        }
        let [lo, hi] = self.p_range;
        if lo < 1 || hi > 40 || lo > hi {
            return Err(HarnessError::Config(format!(
                "p_range [{lo}, {hi}] must be an ascending range within [1, 40]"
            )));
        }
        if let MeshSpec::Generator { nx, ny, .. } = self.mesh {
            if nx == 0 || ny == 0 {
                return Err(HarnessError::Config("generator needs nx, ny >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn build_mesh(&self) -> Result<hyperdg::mesh::Mesh> {
        match &self.mesh {
            MeshSpec::File(path) => {
                let text = std::fs::read_to_string(path)?;
                Ok(hyperdg::mesh::parse_mesh(&text)?)
            }
            MeshSpec::Generator { nx, ny, diagonal } => {
                Ok(hyperdg::mesh::gen_structured(*nx, *ny, (*diagonal).into()))
            }
        }
    }
}
