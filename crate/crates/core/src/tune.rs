//! Threshold selection: grid search over (alpha, beta) and risk-coverage
//! frontiers swept over beta.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gate::{evaluate, ExpertOracle, SelectiveMetrics, Thresholds};
use crate::model::MultiExitModel;

/// Default grids: alpha over {0.75..0.95}, beta over {0.55..0.75}.
pub fn default_alpha_grid() -> Vec<f64> {
    vec![0.75, 0.80, 0.85, 0.90, 0.95]
}

pub fn default_beta_grid() -> Vec<f64> {
    vec![0.55, 0.60, 0.65, 0.70, 0.75]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub thresholds: Thresholds,
    pub metrics: SelectiveMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best: Thresholds,
    pub best_metrics: SelectiveMetrics,
    /// All |alpha grid| × |beta grid| cells, in (alpha, beta) iteration order.
    pub cells: Vec<GridCell>,
}

/// Evaluates every grid cell on the validation set and returns the cell with
/// minimal empirical selective risk. Ties break toward higher coverage, then
/// higher speedup, then lower alpha, then lower beta.
pub fn grid_search(
    model: &MultiExitModel,
    validation: &Dataset,
    alphas: &[f64],
    betas: &[f64],
    oracle: &dyn ExpertOracle,
) -> Result<GridSearchResult> {
    if validation.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    if alphas.is_empty() || betas.is_empty() {
        return Err(Error::InvalidArgument("empty threshold grid".into()));
    }
    let mut cells = Vec::with_capacity(alphas.len() * betas.len());
    for &alpha in alphas {
        for &beta in betas {
            let thresholds = Thresholds::new(alpha, beta)?;
            let metrics = evaluate(model, validation, thresholds, oracle)?;
            cells.push(GridCell { thresholds, metrics });
        }
    }
    let best = cells
        .iter()
        .min_by(|a, b| cell_order(a, b))
        .expect("grid is nonempty");
    Ok(GridSearchResult {
        best: best.thresholds,
        best_metrics: best.metrics.clone(),
        cells: cells.clone(),
    })
}

fn cell_order(a: &GridCell, b: &GridCell) -> std::cmp::Ordering {
    a.metrics
        .risk
        .total_cmp(&b.metrics.risk)
        .then(b.metrics.coverage.total_cmp(&a.metrics.coverage))
        .then(b.metrics.speedup.total_cmp(&a.metrics.speedup))
        .then(a.thresholds.alpha.total_cmp(&b.thresholds.alpha))
        .then(a.thresholds.beta.total_cmp(&b.thresholds.beta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub beta: f64,
    pub coverage: f64,
    pub risk: f64,
}

/// Sweeps beta at a fixed alpha, producing the risk-coverage frontier.
/// The sweep must be sorted ascending; coverage is then non-decreasing.
pub fn risk_coverage_curve(
    model: &MultiExitModel,
    dataset: &Dataset,
    alpha: f64,
    betas: &[f64],
    oracle: &dyn ExpertOracle,
) -> Result<Vec<CurvePoint>> {
    if betas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(
            "beta sweep must be sorted ascending".into(),
        ));
    }
    let mut points = Vec::with_capacity(betas.len());
    for &beta in betas {
        let thresholds = Thresholds::new(alpha, beta)?;
        let metrics = evaluate(model, dataset, thresholds, oracle)?;
        points.push(CurvePoint {
            beta,
            coverage: metrics.coverage,
            risk: metrics.risk,
        });
    }
    Ok(points)
}
