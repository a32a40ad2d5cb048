//! Problem files (JSON). See `docs/problem-file.md` for the schema.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use genfam::catalog::{CatalogId, CatalogParams};
use genfam::solver::SolveConfig;
use serde::{Deserialize, Serialize};

use crate::RunError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default)]
    pub catalog: Option<CatalogSection>,
    #[serde(default)]
    pub custom: Option<CustomSection>,
    pub base_points: BasePoints,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogSection {
    pub id: CatalogId,
    #[serde(default)]
    pub params: CatalogParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSection {
    pub n: usize,
    pub k: usize,
    pub expression: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasePoints {
    #[serde(default)]
    pub explicit: Vec<Vec<f64>>,
    #[serde(default)]
    pub grid: Option<Grid>,
}

/// Tensor grid from `from` to `to` (inclusive) with `steps` points per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    pub steps: Steps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Steps {
    Uniform(usize),
    PerAxis(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Multistart Newton over the fiber of every base point.
    #[default]
    Fiber,
    /// Seeds over every base point are projected onto the critical set moving `q` too.
    Joint,
    /// Base points form a path; branches found over the first are continued along it.
    Continuation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Residual accepted as critical by the Hessian analysis.
    pub residual_tol: f64,
    /// Relative rank tolerance of the Hessian and subspace computations.
    pub rank_tol: f64,
    pub isotropy_tol: f64,
    /// Distance at which a computed κ matches a catalog oracle covector.
    pub oracle_tol: f64,
    /// Probe step for the critical-set tangent estimate.
    pub probe_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            residual_tol: 1e-8,
            rank_tol: 1e-8,
            isotropy_tol: 1e-6,
            oracle_tol: 1e-8,
            probe_step: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default)]
    pub report_path: Option<PathBuf>,
    #[serde(default)]
    pub samples_path: Option<PathBuf>,
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let p: ProblemFile = serde_json::from_str(text).map_err(|e| RunError::Input(format!("problem file: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Input(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |msg: String| Err(RunError::Input(msg));
        match (&self.catalog, &self.custom) {
            (Some(_), Some(_)) => return bad("exactly one of `catalog` and `custom` must be given, found both".into()),
            (None, None) => return bad("exactly one of `catalog` and `custom` must be given, found neither".into()),
            _ => {}
        }
        if self.base_points.explicit.is_empty() && self.base_points.grid.is_none() {
            return bad("base_points: give `explicit` points and/or a `grid`".into());
        }
        if let Some(g) = &self.base_points.grid {
            if g.from.len() != g.to.len() {
                return bad(format!(
                    "base_points.grid: `from` has {} coordinates but `to` has {}",
                    g.from.len(),
                    g.to.len()
                ));
            }
            let steps = g.steps_per_axis();
            if steps.len() != g.from.len() {
                return bad("base_points.grid.steps: one entry per axis expected".into());
            }
            if steps.iter().any(|&s| s == 0) {
                return bad("base_points.grid.steps must be at least 1".into());
            }
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("residual_tol", t.residual_tol),
            ("rank_tol", t.rank_tol),
            ("isotropy_tol", t.isotropy_tol),
            ("oracle_tol", t.oracle_tol),
            ("probe_step", t.probe_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("tolerances.{name} must be positive, got {v}"));
            }
        }
        self.solve.validate().map_err(|e| RunError::Input(e.to_string()))
    }

    /// Explicit points followed by the grid (last axis fastest).
    pub fn expand_base_points(&self) -> Vec<Vec<f64>> {
        let mut out = self.base_points.explicit.clone();
        if let Some(g) = &self.base_points.grid {
            out.extend(g.points());
        }
        out
    }
}

impl Grid {
    pub fn steps_per_axis(&self) -> Vec<usize> {
        match &self.steps {
            Steps::Uniform(s) => vec![*s; self.from.len()],
            Steps::PerAxis(v) => v.clone(),
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let steps = self.steps_per_axis();
        let axes: Vec<Vec<f64>> = (0..self.from.len())
            .map(|d| {
                let (a, b, s) = (self.from[d], self.to[d], steps[d]);
                if s == 1 {
                    vec![a]
                } else {
                    (0..s).map(|i| a + (b - a) * i as f64 / (s - 1) as f64).collect()
                }
            })
            .collect();
        let mut out: Vec<Vec<f64>> = vec![Vec::new()];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |x| {
                        let mut p = prefix.clone();
                        p.push(*x);
                        p
                    })
                })
                .collect();
        }
        out
    }
}
