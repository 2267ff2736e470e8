use serde::Serialize;

use super::{Model, Sample};
use crate::error::Result;
use crate::graph_data::ExperimentKey;
use crate::node_dynamics::TIME_EPS;
use crate::numkit::ParamSet;
use crate::response::{
    best_response, binarize, categorize, classification_metrics, regression_metrics,
    ClassificationMetrics, MetricsReport, RegressionMetrics, ResponseCategory,
};
use crate::tgi::{scored_points, tgi_fit_points, tgi_simulate};

/// Predicted best response at or below this many percent calls a responder.
pub const RESPONDER_CUTOFF: f64 = 35.0;

pub const TRAJECTORY_CSV_HEADER: &str = "time,observed,predicted,tgi_predicted";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentPrediction {
    pub key: ExperimentKey,
    pub times: Vec<f64>,
    pub observed: Vec<f64>,
    pub predicted: Vec<f64>,
    /// TGI fitted on the same window; absent when the window holds under 3 points.
    pub tgi_predicted: Option<Vec<f64>>,
    pub observed_category: ResponseCategory,
    pub predicted_best_response: f64,
    pub predicted_category: ResponseCategory,
}

impl ExperimentPrediction {
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from(TRAJECTORY_CSV_HEADER);
        out.push('\n');
        for i in 0..self.times.len() {
            let tgi = self
                .tgi_predicted
                .as_ref()
                .map(|v| v[i].to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.times[i], self.observed[i], self.predicted[i], tgi
            ));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsEvaluation {
    pub window: Option<f64>,
    pub predictions: Vec<ExperimentPrediction>,
    /// Pooled over scored points, in mm³.
    pub regression: Option<RegressionMetrics>,
    pub tgi_regression: Option<RegressionMetrics>,
    /// Responder calls from predicted trajectories against observed ones.
    pub classification: Option<ClassificationMetrics>,
    pub report: MetricsReport,
}

/// Integrator steps from day 0 through `end`.
pub fn decoded_grid(step: f64, end: f64) -> Vec<f64> {
    let n = (end / step + TIME_EPS).floor() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

/// Predicts every sample from its window and scores the points after the
/// window (all points without one). Predicted best responses are read off
/// the decoded grid.
pub fn evaluate_dynamics(
    model: &Model,
    params: &ParamSet,
    samples: &[Sample],
    window: Option<f64>,
) -> Result<DynamicsEvaluation> {
    model.check_dynamics(params)?;
    let mut predictions = Vec::with_capacity(samples.len());
    for s in samples {
        let times = s.series.times().to_vec();
        let observed = s.series.volumes().to_vec();
        let decoded = decoded_grid(model.node().config.step, times[times.len() - 1]);
        let mut grid: Vec<f64> = decoded.iter().chain(&times).copied().collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup_by(|a, b| (*a - *b).abs() <= TIME_EPS);
        let on_grid = model.predict_trajectory(params, s, window, &grid)?.volumes;
        let at = |t: f64| on_grid[grid.partition_point(|g| *g < t - TIME_EPS)];
        let predicted: Vec<f64> = times.iter().map(|&t| at(t)).collect();
        let decoded_volumes: Vec<f64> = decoded.iter().map(|&t| at(t)).collect();
        let seen: Vec<usize> = (0..times.len())
            .filter(|&i| window.map_or(true, |w| times[i] <= w))
            .collect();
        let tgi_predicted = if seen.len() >= 3 {
            let ft: Vec<f64> = seen.iter().map(|&i| times[i]).collect();
            let fv: Vec<f64> = seen.iter().map(|&i| observed[i]).collect();
            let fit = tgi_fit_points(&ft, &fv)?;
            Some(tgi_simulate(&fit.params, observed[0], &times)?)
        } else {
            None
        };
        let predicted_best_response = best_response(&decoded, &decoded_volumes)?;
        predictions.push(ExperimentPrediction {
            key: s.instance.key.clone(),
            observed_category: categorize(best_response(&times, &observed)?),
            predicted_category: categorize(predicted_best_response),
            predicted_best_response,
            times,
            observed,
            predicted,
            tgi_predicted,
        });
    }
    DynamicsEvaluation::from_predictions(window, predictions)
}

impl DynamicsEvaluation {
    /// Scores predictions made with `window`, e.g. those of several folds pooled.
    pub fn from_predictions(
        window: Option<f64>,
        predictions: Vec<ExperimentPrediction>,
    ) -> Result<Self> {
        let (mut y, mut yhat) = (Vec::new(), Vec::new());
        let (mut ty, mut tyhat) = (Vec::new(), Vec::new());
        for p in &predictions {
            for i in scored_points(&p.times, window) {
                y.push(p.observed[i]);
                yhat.push(p.predicted[i]);
                if let Some(t) = &p.tgi_predicted {
                    ty.push(p.observed[i]);
                    tyhat.push(t[i]);
                }
            }
        }
        let regression = (!y.is_empty())
            .then(|| regression_metrics(&y, &yhat))
            .transpose()?;
        let tgi_regression = (!ty.is_empty())
            .then(|| regression_metrics(&ty, &tyhat))
            .transpose()?;
        let classification = if predictions.is_empty() {
            None
        } else {
            let labels: Vec<bool> = predictions
                .iter()
                .map(|p| binarize(p.observed_category))
                .collect();
            let scores: Vec<f64> = predictions
                .iter()
                .map(|p| -p.predicted_best_response)
                .collect();
            Some(classification_metrics(&labels, &scores, -RESPONDER_CUTOFF)?)
        };
        let categories: Vec<ResponseCategory> =
            predictions.iter().map(|p| p.predicted_category).collect();
        Ok(DynamicsEvaluation {
            window,
            report: MetricsReport::from_parts(regression, classification, &categories),
            predictions,
            regression,
            tgi_regression,
            classification,
        })
    }
}

/// Responder probabilities and observed labels.
pub fn classifier_scores(
    model: &Model,
    params: &ParamSet,
    samples: &[Sample],
) -> Result<(Vec<bool>, Vec<f64>)> {
    let labels = samples
        .iter()
        .map(Sample::responder)
        .collect::<Result<Vec<_>>>()?;
    let probs = model.classify(
        params,
        &samples.iter().map(|s| &s.instance).collect::<Vec<_>>(),
    )?;
    Ok((labels, probs))
}
