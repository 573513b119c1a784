//! JSON wire format, version `qcompat/1`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::algebra::{AlgebraElement, FdAlgebra};
use crate::channel::{Channel, Povm};
use crate::experiments::StatExperiment;
use crate::numerics::{c64, CMatrix, RMatrix};

pub const SCHEMA_VERSION: &str = "qcompat/1";

/// A complex entry; plain numbers are read as real.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Pair([f64; 2]),
    Real(f64),
}

pub type MatrixJson = Vec<Vec<Entry>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebraJson {
    pub blocks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelJson {
    pub domain: AlgebraJson,
    pub codomain: AlgebraJson,
    /// Keyed `"i,j"`: domain block `i`, codomain block `j`.
    pub choi_blocks: BTreeMap<String, MatrixJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PovmJson {
    pub dim: usize,
    pub effects: Vec<MatrixJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentJson {
    pub algebra: AlgebraJson,
    /// One list of block densities per parameter value.
    pub states: Vec<Vec<MatrixJson>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObjectJson {
    Channel(ChannelJson),
    Povm(PovmJson),
    Experiment(ExperimentJson),
}

impl ObjectJson {
    pub fn kind(&self) -> &'static str {
        match self {
            ObjectJson::Channel(_) => "channel",
            ObjectJson::Povm(_) => "povm",
            ObjectJson::Experiment(_) => "experiment",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompatRoute {
    Direct,
    Conjugate,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Query {
    Preorder {
        left: String,
        right: String,
    },
    Equiv {
        left: String,
        right: String,
    },
    Compat {
        left: String,
        right: String,
        #[serde(default)]
        route: CompatRoute,
    },
    JointlyMeasurable {
        left: String,
        right: String,
    },
    PovmChannel {
        povm: String,
        channel: String,
    },
    Maximal {
        povm: String,
    },
    Refine {
        povm: String,
    },
    Dilate {
        object: String,
    },
    Conjugate {
        channel: String,
    },
    Canonicalize {
        povm: String,
    },
}

impl Query {
    pub fn name(&self) -> &'static str {
        match self {
            Query::Preorder { .. } => "preorder",
            Query::Equiv { .. } => "equiv",
            Query::Compat { .. } => "compat",
            Query::JointlyMeasurable { .. } => "jointly-measurable",
            Query::PovmChannel { .. } => "povm-channel",
            Query::Maximal { .. } => "maximal",
            Query::Refine { .. } => "refine",
            Query::Dilate { .. } => "dilate",
            Query::Conjugate { .. } => "conjugate",
            Query::Canonicalize { .. } => "canonicalize",
        }
    }

    pub fn references(&self) -> Vec<&str> {
        match self {
            Query::Preorder { left, right }
            | Query::Equiv { left, right }
            | Query::Compat { left, right, .. }
            | Query::JointlyMeasurable { left, right } => vec![left, right],
            Query::PovmChannel { povm, channel } => vec![povm, channel],
            Query::Maximal { povm } | Query::Refine { povm } | Query::Canonicalize { povm } => vec![povm],
            Query::Dilate { object } => vec![object],
            Query::Conjugate { channel } => vec![channel],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsJson {
    pub feas_tol: Option<f64>,
    pub infeas_gap: Option<f64>,
    pub cert_tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub seed: Option<u64>,
    pub solver: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub version: String,
    pub objects: BTreeMap<String, ObjectJson>,
    pub query: Query,
    #[serde(default)]
    pub options: OptionsJson,
}

// ---- conversions -------------------------------------------------------

pub fn matrix_to_json(m: &CMatrix) -> MatrixJson {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| Entry::Pair([m[(r, c)].re, m[(r, c)].im])).collect())
        .collect()
}

pub fn matrix_from_json(m: &MatrixJson) -> Result<CMatrix, String> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if let Some(r) = m.iter().position(|row| row.len() != cols) {
        return Err(format!("row {r} has {} entries, expected {cols}", m[r].len()));
    }
    Ok(CMatrix::from_fn(rows, cols, |r, c| match m[r][c] {
        Entry::Pair([re, im]) => c64(re, im),
        Entry::Real(re) => c64(re, 0.0),
    }))
}

fn square_from_json(m: &MatrixJson, n: usize, what: &str) -> Result<CMatrix, String> {
    let a = matrix_from_json(m).map_err(|e| format!("{what}: {e}"))?;
    if a.nrows() != n || a.ncols() != n {
        return Err(format!("{what} is {}x{}, expected {n}x{n}", a.nrows(), a.ncols()));
    }
    Ok(a)
}

pub fn real_matrix_to_json(m: &RMatrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

pub fn real_matrix_from_json(m: &[Vec<f64>]) -> Result<RMatrix, String> {
    let cols = m.first().map_or(0, Vec::len);
    if m.iter().any(|row| row.len() != cols) {
        return Err("ragged kernel matrix".into());
    }
    Ok(RMatrix::from_fn(m.len(), cols, |r, c| m[r][c]))
}

pub fn algebra_to_json(a: &FdAlgebra) -> AlgebraJson {
    AlgebraJson {
        blocks: a.blocks().to_vec(),
    }
}

pub fn algebra_from_json(a: &AlgebraJson) -> Result<FdAlgebra, String> {
    FdAlgebra::new(a.blocks.clone()).map_err(|e| e.to_string())
}

pub fn channel_to_json(ch: &Channel) -> ChannelJson {
    let nc = ch.codomain().num_blocks();
    let mut choi_blocks = BTreeMap::new();
    for i in 0..ch.domain().num_blocks() {
        for j in 0..nc {
            choi_blocks.insert(format!("{i},{j}"), matrix_to_json(ch.choi(i, j)));
        }
    }
    ChannelJson {
        domain: algebra_to_json(ch.domain()),
        codomain: algebra_to_json(ch.codomain()),
        choi_blocks,
    }
}

/// Raw Choi blocks in storage order, shape-checked but not validated.
pub fn choi_from_json(c: &ChannelJson) -> Result<(FdAlgebra, FdAlgebra, Vec<CMatrix>), String> {
    let dom = algebra_from_json(&c.domain).map_err(|e| format!("domain: {e}"))?;
    let cod = algebra_from_json(&c.codomain).map_err(|e| format!("codomain: {e}"))?;
    let mut blocks = Vec::with_capacity(dom.num_blocks() * cod.num_blocks());
    for i in 0..dom.num_blocks() {
        for j in 0..cod.num_blocks() {
            let key = format!("{i},{j}");
            let m = c
                .choi_blocks
                .get(&key)
                .ok_or_else(|| format!("missing Choi block \"{key}\""))?;
            let n = dom.block(i) * cod.block(j);
            blocks.push(square_from_json(m, n, &format!("Choi block \"{key}\""))?);
        }
    }
    if c.choi_blocks.len() != blocks.len() {
        let extra = c
            .choi_blocks
            .keys()
            .find(|k| {
                let mut it = k.split(',').map(str::parse::<usize>);
                !matches!((it.next(), it.next(), it.next()),
                    (Some(Ok(i)), Some(Ok(j)), None) if i < dom.num_blocks() && j < cod.num_blocks())
            })
            .cloned()
            .unwrap_or_default();
        return Err(format!("unexpected Choi block \"{extra}\""));
    }
    Ok((dom, cod, blocks))
}

pub fn channel_from_json(c: &ChannelJson) -> Result<Channel, String> {
    let (dom, cod, blocks) = choi_from_json(c)?;
    Channel::from_choi(dom, cod, blocks).map_err(|e| e.to_string())
}

pub fn povm_to_json(p: &Povm) -> PovmJson {
    PovmJson {
        dim: p.dim(),
        effects: p.effects().iter().map(matrix_to_json).collect(),
    }
}

pub fn effects_from_json(p: &PovmJson) -> Result<Vec<CMatrix>, String> {
    p.effects
        .iter()
        .enumerate()
        .map(|(k, e)| square_from_json(e, p.dim, &format!("effect {k}")))
        .collect()
}

pub fn povm_from_json(p: &PovmJson) -> Result<Povm, String> {
    Povm::new(effects_from_json(p)?).map_err(|e| e.to_string())
}

pub fn experiment_to_json(e: &StatExperiment) -> ExperimentJson {
    ExperimentJson {
        algebra: algebra_to_json(e.algebra()),
        states: e
            .states()
            .iter()
            .map(|s| s.blocks().iter().map(matrix_to_json).collect())
            .collect(),
    }
}

pub fn experiment_from_json(e: &ExperimentJson) -> Result<StatExperiment, String> {
    let alg = algebra_from_json(&e.algebra)?;
    let states = e
        .states
        .iter()
        .enumerate()
        .map(|(k, blocks)| {
            if blocks.len() != alg.num_blocks() {
                return Err(format!("state {k} has {} blocks, expected {}", blocks.len(), alg.num_blocks()));
            }
            let mats = blocks
                .iter()
                .enumerate()
                .map(|(i, b)| square_from_json(b, alg.block(i), &format!("state {k} block {i}")))
                .collect::<Result<Vec<_>, _>>()?;
            AlgebraElement::new(&alg, mats).map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    StatExperiment::new(alg, states).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::random_channel;
    use crate::povmtools::trine;

    #[test]
    fn round_trips() {
        let ch = random_channel(&FdAlgebra::new(vec![2, 1]).unwrap(), &FdAlgebra::full(2), 1);
        let back = channel_from_json(&channel_to_json(&ch)).unwrap();
        assert_eq!(back.choi_blocks(), ch.choi_blocks());
        let p = trine();
        let back = povm_from_json(&povm_to_json(&p)).unwrap();
        assert_eq!(back.effects(), p.effects());
    }

    #[test]
    fn entries_accept_reals() {
        let m: MatrixJson = serde_json::from_str("[[1, [0, 1]], [[0, -1], 2.5]]").unwrap();
        let a = matrix_from_json(&m).unwrap();
        assert_eq!(a[(0, 1)], c64(0.0, 1.0));
        assert_eq!(a[(1, 1)], c64(2.5, 0.0));
    }

    #[test]
    fn shape_errors_are_named() {
        let mut j = channel_to_json(&Channel::identity(&FdAlgebra::full(2)));
        j.choi_blocks.insert("0,7".into(), vec![]);
        assert!(choi_from_json(&j).unwrap_err().contains("0,7"));
        j.choi_blocks.clear();
        assert!(choi_from_json(&j).unwrap_err().contains("missing"));
        let p = PovmJson {
            dim: 2,
            effects: vec![vec![vec![Entry::Real(1.0)]]],
        };
        assert!(effects_from_json(&p).unwrap_err().contains("effect 0"));
    }
}
