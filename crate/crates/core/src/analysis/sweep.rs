//! Grids of complexity runs or sampling probabilities, written as CSV.

use serde::{Deserialize, Serialize};

use crate::broadcast::CostModel;
use crate::scenario::Protocol;
use crate::simnet::Time;

use super::complexity::{measure, ComplexityReport};
use super::sampling::{bft_sizes, curve, curve_csv, GRID_FAULTY, GRID_GLOBAL};
use super::AnalysisError;

fn one() -> Time {
    1
}

fn pbft() -> Vec<CostModel> {
    vec![CostModel::PbftLike]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityGrid {
    pub protocols: Vec<Protocol>,
    #[serde(default = "pbft")]
    pub cost_models: Vec<CostModel>,
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    #[serde(default = "one")]
    pub delta: Time,
}

fn grid_global() -> u64 {
    GRID_GLOBAL
}

fn grid_faulty() -> Vec<u64> {
    GRID_FAULTY.to_vec()
}

fn grid_sizes() -> Vec<u64> {
    bft_sizes(200)
}

/// Defaults to the plotted grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingGrid {
    #[serde(default = "grid_global")]
    pub global: u64,
    #[serde(default = "grid_faulty")]
    pub faulty: Vec<u64>,
    #[serde(default = "grid_sizes")]
    pub sizes: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SweepSpec {
    Complexity(ComplexityGrid),
    Sampling(SamplingGrid),
}

impl SweepSpec {
    pub fn cells(&self) -> usize {
        match self {
            SweepSpec::Complexity(g) => {
                // SyncPCN ignores the cost model.
                let per_model = g
                    .protocols
                    .iter()
                    .map(|&p| if p == Protocol::Syncpcn { 1 } else { g.cost_models.len() });
                per_model.sum::<usize>() * g.n.len() * g.k.len()
            }
            SweepSpec::Sampling(g) => g.faulty.len() * g.sizes.len(),
        }
    }
}

pub fn complexity_rows(g: &ComplexityGrid) -> Result<Vec<ComplexityReport>, AnalysisError> {
    let mut out = Vec::new();
    for &protocol in &g.protocols {
        let models: &[CostModel] = if protocol == Protocol::Syncpcn {
            &[CostModel::PbftLike]
        } else {
            &g.cost_models
        };
        for &model in models {
            for &n in &g.n {
                for &k in &g.k {
                    out.push(measure(protocol, model, n, k, g.delta)?);
                }
            }
        }
    }
    Ok(out)
}

/// One CSV row per cell, in grid order.
pub fn sweep_csv(spec: &SweepSpec) -> Result<String, AnalysisError> {
    if spec.cells() == 0 {
        return Err(AnalysisError::Domain("empty grid".into()));
    }
    match spec {
        SweepSpec::Complexity(g) => {
            let mut out = format!("{}\n", ComplexityReport::CSV_HEADER);
            for r in complexity_rows(g)? {
                out.push_str(&r.csv_row());
                out.push('\n');
            }
            Ok(out)
        }
        SweepSpec::Sampling(g) => {
            let mut points = Vec::new();
            for &f in &g.faulty {
                points.extend(curve(g.global, f, &g.sizes)?);
            }
            Ok(curve_csv(&points))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_counts() {
        let s: SweepSpec = serde_json::from_str(r#"{"sampling":{}}"#).unwrap();
        assert_eq!(s.cells(), 7 * 200);
        let s: SweepSpec =
            serde_json::from_str(r#"{"complexity":{"protocols":["syncpcn","psyncpcn"],"cost_models":["pbft-like","hotstuff-like"],"n":[4],"k":[1,2]}}"#)
                .unwrap();
        assert_eq!(s.cells(), 2 + 4);
        assert!(serde_json::from_str::<SweepSpec>(r#"{"sampling":{"extra":1}}"#).is_err());
    }

    #[test]
    fn empty_and_single_cell() {
        let empty = SweepSpec::Sampling(SamplingGrid {
            global: 10,
            faulty: vec![],
            sizes: vec![4],
        });
        assert!(sweep_csv(&empty).is_err());
        let one = SweepSpec::Sampling(SamplingGrid {
            global: 6,
            faulty: vec![2],
            sizes: vec![3],
        });
        assert_eq!(sweep_csv(&one).unwrap(), "N,F,n,p_correct\n6,2,3,0.800000000000\n");
    }
}
