//! JSON problem format. Agent and constraint ids are 1-based.
//!
//! ```json
//! {
//!   "topology": { "agents": 2, "edges": [[1, 2]] },
//!   "agents": [
//!     { "cost": { "kind": "quadratic", "hessian": [[1.0]], "center": [1.0] },
//!       "regularizer": { "kind": "zero" } },
//!     { "cost": { "kind": "least-squares", "csv": "agent2.csv" },
//!       "regularizer": { "kind": "l1", "eta": 0.3 } }
//!   ],
//!   "constraints": [
//!     { "blocks": [ { "agent": 1, "matrix": [[1.0]], "rhs": [1.0] },
//!                   { "agent": 2, "matrix": [[1.0, 0.0]], "rhs": [1.0] } ] }
//!   ]
//! }
//! ```
//!
//! A data CSV holds one sample per row with the target (or ±1 label) in the
//! last column. Relative CSV paths resolve against the JSON file's directory.
//! When `feasible_point` is given, every `rhs` is recomputed from it.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cost::{Cost, LeastSquares, Logistic, Quadratic};
use super::regularizer::Regularizer;
use super::spec::{assemble_problem, feasible_rhs, AgentProblem, ConstraintBlock, ProblemSpec};
use crate::error::{Error, Result};
use crate::topology::TopologyConfig;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub topology: TopologyConfig,
    pub agents: Vec<AgentFile>,
    pub constraints: Vec<ConstraintFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasible_point: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentFile {
    pub cost: CostFile,
    #[serde(default = "zero_regularizer")]
    pub regularizer: Regularizer,
}

fn zero_regularizer() -> Regularizer {
    Regularizer::Zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostFile {
    Quadratic {
        hessian: Rows,
        center: Vec<f64>,
    },
    LeastSquares {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        regressors: Option<Rows>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        targets: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        csv: Option<String>,
    },
    Logistic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        features: Option<Rows>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        csv: Option<String>,
        #[serde(default)]
        l2: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintFile {
    pub blocks: Vec<BlockFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockFile {
    pub agent: usize,
    pub matrix: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rhs: Option<Vec<f64>>,
}

fn matrix_from_rows(rows: &Rows, what: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch(format!("{what} has ragged rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Reads a headerless numeric CSV: leading columns are the data, the last is the target.
fn read_samples(path: &Path) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut rows: Rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let full = matrix_from_rows(&rows, &path.display().to_string())?;
    if full.ncols() < 2 {
        return Err(Error::Config(format!(
            "{}: expected at least one data column and a target column",
            path.display()
        )));
    }
    let last = full.ncols() - 1;
    Ok((
        full.columns(0, last).into_owned(),
        full.column(last).into_owned(),
    ))
}

fn data_source(
    data: &Option<Rows>,
    targets: &Option<Vec<f64>>,
    csv: &Option<String>,
    base: Option<&Path>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    match (data, targets, csv) {
        (Some(d), Some(t), None) => Ok((matrix_from_rows(d, "data")?, DVector::from_row_slice(t))),
        (None, None, Some(path)) => {
            let p = Path::new(path);
            let p = match base {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p.to_path_buf(),
            };
            read_samples(&p)
        }
        _ => Err(Error::Config(
            "a data cost needs either inline data and targets or a csv path, not both".into(),
        )),
    }
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Builds the instance; `base` resolves relative CSV paths.
    pub fn to_problem(&self, base: Option<&Path>) -> Result<ProblemSpec> {
        let network = self.topology.to_network()?;
        let mut agents = Vec::with_capacity(self.agents.len());
        for a in &self.agents {
            let cost = match &a.cost {
                CostFile::Quadratic { hessian, center } => Cost::Quadratic(Quadratic::new(
                    matrix_from_rows(hessian, "hessian")?,
                    DVector::from_row_slice(center),
                )?),
                CostFile::LeastSquares {
                    regressors,
                    targets,
                    csv,
                } => {
                    let (u, p) = data_source(regressors, targets, csv, base)?;
                    Cost::LeastSquares(LeastSquares::new(u, p)?)
                }
                CostFile::Logistic {
                    features,
                    labels,
                    csv,
                    l2,
                } => {
                    let (h, x) = data_source(features, labels, csv, base)?;
                    Cost::Logistic(Logistic::new(h, x, *l2)?)
                }
            };
            agents.push(AgentProblem {
                cost,
                regularizer: a.regularizer.clone(),
            });
        }

        let mut blocks = Vec::new();
        for (e, c) in self.constraints.iter().enumerate() {
            if c.blocks.is_empty() {
                return Err(Error::EmptyConstraint(e));
            }
            for b in &c.blocks {
                if b.agent == 0 || b.agent > agents.len() {
                    return Err(Error::AgentOutOfRange {
                        agent: b.agent,
                        agents: agents.len(),
                    });
                }
                let matrix = matrix_from_rows(&b.matrix, "constraint block")?;
                let rhs = match (&b.rhs, &self.feasible_point) {
                    (_, Some(_)) => DVector::zeros(matrix.nrows()),
                    (Some(r), None) => DVector::from_row_slice(r),
                    (None, None) => return Err(Error::Config(format!(
                        "block (constraint {}, agent {}) has no rhs and no feasible_point is given",
                        e + 1,
                        b.agent
                    ))),
                };
                blocks.push(ConstraintBlock {
                    constraint: e,
                    agent: b.agent - 1,
                    matrix,
                    rhs,
                });
            }
        }
        if let Some(point) = &self.feasible_point {
            let w0: Vec<_> = point.iter().map(|v| DVector::from_row_slice(v)).collect();
            let rhs = feasible_rhs(&blocks, &w0)?;
            for (b, r) in blocks.iter_mut().zip(rhs) {
                b.rhs = r;
            }
        }
        assemble_problem(network, agents, blocks)
    }

    /// Inline, self-contained form of an assembled instance.
    pub fn from_problem(problem: &ProblemSpec) -> Self {
        let agents = problem
            .agents()
            .iter()
            .map(|a| AgentFile {
                cost: match &a.cost {
                    Cost::Quadratic(q) => CostFile::Quadratic {
                        hessian: rows_of(q.hessian()),
                        center: q.center().iter().copied().collect(),
                    },
                    Cost::LeastSquares(l) => CostFile::LeastSquares {
                        regressors: Some(rows_of(l.regressors())),
                        targets: Some(l.targets().iter().copied().collect()),
                        csv: None,
                    },
                    Cost::Logistic(l) => CostFile::Logistic {
                        features: Some(rows_of(l.features())),
                        labels: Some(l.labels().iter().copied().collect()),
                        csv: None,
                        l2: l.l2(),
                    },
                },
                regularizer: a.regularizer.clone(),
            })
            .collect();
        let constraints = problem
            .constraints()
            .iter()
            .map(|c| ConstraintFile {
                blocks: c
                    .sub
                    .members()
                    .iter()
                    .zip(&c.blocks)
                    .map(|(&k, (b, rhs))| BlockFile {
                        agent: k + 1,
                        matrix: rows_of(b),
                        rhs: Some(rhs.iter().copied().collect()),
                    })
                    .collect(),
            })
            .collect();
        Self {
            topology: TopologyConfig::from_network(problem.network(), None),
            agents,
            constraints,
            feasible_point: None,
        }
    }
}

/// SHA-256 of the canonical inline JSON form of `problem`.
pub fn content_hash(problem: &ProblemSpec) -> String {
    let text =
        serde_json::to_string(&ProblemFile::from_problem(problem)).expect("plain data serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}
