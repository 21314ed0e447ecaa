use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{Orientation, DEFAULT_GRID};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::merging::MergeOptions;
use crate::network::NetworkCheckpoint;
use crate::pipeline::{merge_models, MatchFeatureName, MergeData, Method, PipelineConfig, Sizing};

use super::accuracy;

pub const TRADEOFF_HEADER: &str = "method,budget,footprint,task,accuracy,seed";
pub const TRADEOFF_META_FILE: &str = "meta.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffConfig {
    pub methods: Vec<Method>,
    pub budgets: Vec<f64>,
    pub seeds: Vec<u64>,
    pub q: usize,
    pub orientation: Orientation,
    pub options: MergeOptions,
    pub match_feature: MatchFeatureName,
    pub bn_batches: usize,
    pub bn_batch_size: usize,
}

impl Default for TradeoffConfig {
    fn default() -> Self {
        TradeoffConfig {
            methods: Method::ALL.to_vec(),
            budgets: vec![1.0, 1.2, 1.5, 2.0],
            seeds: vec![0],
            q: DEFAULT_GRID,
            orientation: Orientation::default(),
            options: MergeOptions::default(),
            match_feature: MatchFeatureName::Inputs,
            bn_batches: 100,
            bn_batch_size: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub method: String,
    pub budget: f64,
    pub footprint: f64,
    pub task: String,
    pub accuracy: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TradeoffResult {
    pub rows: Vec<TradeoffRow>,
}

impl TradeoffResult {
    /// Accuracy averaged over tasks and seeds for one `(method, budget)`.
    pub fn mean_accuracy(&self, method: &str, budget: f64) -> Option<f64> {
        let hits: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.budget == budget)
            .map(|r| r.accuracy)
            .collect();
        (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(TRADEOFF_HEADER.split(',')).map_err(|e| Error::invalid(e.to_string()))?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.budget.to_string(),
                r.footprint.to_string(),
                r.task.clone(),
                r.accuracy.to_string(),
                r.seed.to_string(),
            ])
            .map_err(|e| Error::invalid(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

/// Companion record of a trade-off CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffMeta {
    /// Content hashes of checkpoints A and B.
    pub source_hashes: [String; 2],
    pub tasks: Vec<String>,
    /// Data behind matching, refitting and the batch-norm reset (`task` or
    /// `proxy:<id>`).
    pub data_source: String,
    pub config: TradeoffConfig,
}

impl TradeoffMeta {
    pub fn new(
        a: &NetworkCheckpoint,
        b: &NetworkCheckpoint,
        tests: &[&Dataset],
        cfg: &TradeoffConfig,
        proxy: Option<&Dataset>,
    ) -> Result<Self> {
        Ok(TradeoffMeta {
            source_hashes: [a.content_hash()?, b.content_hash()?],
            tasks: tests.iter().map(|t| t.task_id.clone()).collect(),
            data_source: proxy.map_or_else(|| "task".to_string(), |p| format!("proxy:{}", p.task_id)),
            config: cfg.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Merges `a` and `b` with every `(method, budget, seed)` cell and scores
/// each result on every test set. Methods of fixed size get one cell per
/// seed, reported at their own footprint. With `proxy`, matching, refitting
/// and the batch-norm reset use only the proxy data.
pub fn run_tradeoff(
    a: &NetworkCheckpoint,
    b: &NetworkCheckpoint,
    train: [&Dataset; 2],
    tests: &[&Dataset],
    cfg: &TradeoffConfig,
    proxy: Option<&Dataset>,
) -> Result<TradeoffResult> {
    if let Some(bad) = cfg.budgets.iter().find(|b| !(1.0..=2.0).contains(*b)) {
        return Err(Error::invalid(format!("budget must be in [1,2], got {bad}")));
    }
    if tests.is_empty() {
        return Err(Error::invalid("trade-off needs at least one test set"));
    }
    let mut cells: Vec<(Method, f64, u64)> = Vec::new();
    for &method in &cfg.methods {
        for &seed in &cfg.seeds {
            match method.fixed_footprint() {
                Some(f) => cells.push((method, f, seed)),
                None => cells.extend(cfg.budgets.iter().map(|&budget| (method, budget, seed))),
            }
        }
    }
    let data = match proxy {
        Some(p) => MergeData::Proxy(p),
        None => MergeData::Task { a: train[0], b: train[1] },
    };
    let per_cell: Vec<Vec<TradeoffRow>> = cells
        .par_iter()
        .map(|&(method, budget, seed)| -> Result<Vec<TradeoffRow>> {
            let sizing = if method.budget_capable() {
                Sizing::Budget {
                    budget,
                    q: cfg.q,
                    orientation: cfg.orientation,
                }
            } else {
                Sizing::Ratios(Vec::new())
            };
            let pc = PipelineConfig {
                method,
                sizing,
                options: cfg.options,
                match_feature: cfg.match_feature,
                seed,
                bn_batches: cfg.bn_batches,
                bn_batch_size: cfg.bn_batch_size,
                surrogate_refit: false,
            };
            let outcome = merge_models(a, b, data, &pc, None)?;
            tests
                .iter()
                .map(|t| {
                    Ok(TradeoffRow {
                        method: outcome.merged.meta.method.clone(),
                        budget,
                        footprint: outcome.footprint(),
                        task: t.task_id.clone(),
                        accuracy: accuracy(&outcome.merged.net, t)?,
                        seed,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(TradeoffResult {
        rows: per_cell.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let result = TradeoffResult {
            rows: vec![TradeoffRow {
                method: "pleas".into(),
                budget: 1.2,
                footprint: 1.1875,
                task: "task_a".into(),
                accuracy: 0.5,
                seed: 3,
            }],
        };
        assert_eq!(result.to_csv().unwrap(), "method,budget,footprint,task,accuracy,seed\npleas,1.2,1.1875,task_a,0.5,3\n");
        assert_eq!(result.mean_accuracy("pleas", 1.2), Some(0.5));
        assert_eq!(result.mean_accuracy("pleas", 1.0), None);
    }
}
