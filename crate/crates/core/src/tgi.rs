//! Tumor growth inhibition baseline `dV/dt = (k_g − k_d·e^{−λt})·V`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_data::{ExperimentKey, VolumeSeries};
use crate::node_dynamics::rk4_integrate;
use crate::response::{regression_metrics, RegressionMetrics};

/// Fitted parameters are kept inside `[0, PARAM_MAX]`.
pub const PARAM_MAX: f64 = 5.0;
const LAMBDA_EPS: f64 = 1e-9;
const RK4_STEP: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TgiParams {
    pub k_g: f64,
    pub k_d: f64,
    pub lambda: f64,
}

impl TgiParams {
    pub fn new(k_g: f64, k_d: f64, lambda: f64) -> Result<Self> {
        let p = TgiParams { k_g, k_d, lambda };
        if p.as_array().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Invalid(format!(
                "TGI parameters must be finite and nonnegative: {p:?}"
            )));
        }
        Ok(p)
    }

    fn as_array(&self) -> [f64; 3] {
        [self.k_g, self.k_d, self.lambda]
    }

    fn from_array(a: [f64; 3]) -> Self {
        TgiParams {
            k_g: a[0],
            k_d: a[1],
            lambda: a[2],
        }
    }

    /// `log(V(t)/v0)` in closed form; the `λ → 0` limit is `(k_g − k_d)t`.
    pub fn log_growth(&self, t: f64) -> f64 {
        if self.lambda > LAMBDA_EPS {
            self.k_g * t + self.k_d / self.lambda * (-self.lambda * t).exp_m1()
        } else {
            (self.k_g - self.k_d) * t
        }
    }
}

fn check_grid(v0: f64, grid: &[f64]) -> Result<()> {
    if !(v0 > 0.0 && v0.is_finite()) {
        return Err(Error::Invalid(format!(
            "initial volume {v0} must be positive"
        )));
    }
    if grid.first() != Some(&0.0) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid("TGI time grid must increase from 0".into()));
    }
    Ok(())
}

/// Volumes on `grid`; closed form when `λ > 1e-9`, RK4 otherwise.
pub fn tgi_simulate(params: &TgiParams, v0: f64, grid: &[f64]) -> Result<Vec<f64>> {
    check_grid(v0, grid)?;
    if params.lambda > LAMBDA_EPS {
        Ok(grid
            .iter()
            .map(|&t| v0 * params.log_growth(t).exp())
            .collect())
    } else {
        tgi_simulate_rk4(params, v0, grid)
    }
}

/// RK4 route for any `λ`, used below the closed-form threshold and as a cross-check.
pub fn tgi_simulate_rk4(params: &TgiParams, v0: f64, grid: &[f64]) -> Result<Vec<f64>> {
    check_grid(v0, grid)?;
    let p = *params;
    let states = rk4_integrate(
        |t, y| vec![(p.k_g - p.k_d * (-p.lambda * t).exp()) * y[0]],
        &[v0],
        grid,
        RK4_STEP,
    )?;
    Ok(states.into_iter().map(|s| s[0]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: TgiParams,
    /// Sum of squared log-volume residuals.
    pub rss: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Flat series: zero parameters returned without fitting.
    pub degenerate: bool,
}

struct Simplex {
    best: [f64; 3],
    value: f64,
    iterations: usize,
    converged: bool,
}

/// Nelder-Mead with standard coefficients.
fn nelder_mead<F: Fn(&[f64; 3]) -> f64>(
    f: &F,
    start: [f64; 3],
    step: f64,
    max_iter: usize,
) -> Simplex {
    let mut pts: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    pts.push((start, f(&start)));
    for i in 0..3 {
        let mut p = start;
        p[i] += step;
        pts.push((p, f(&p)));
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = pts[3].1 - pts[0].1;
        let size = pts[1..]
            .iter()
            .map(|(p, _)| {
                (0..3)
                    .map(|i| (p[i] - pts[0].0[i]).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread <= 1e-16 * (1.0 + pts[0].1.abs()) && size <= 1e-10 {
            converged = true;
            break;
        }
        iterations += 1;
        let mut c = [0.0; 3];
        for (p, _) in &pts[..3] {
            for i in 0..3 {
                c[i] += p[i] / 3.0;
            }
        }
        let along =
            |s: f64| -> [f64; 3] { std::array::from_fn(|i| c[i] + s * (pts[3].0[i] - c[i])) };
        let r = along(-1.0);
        let fr = f(&r);
        if fr < pts[0].1 {
            let e = along(-2.0);
            let fe = f(&e);
            pts[3] = if fe < fr { (e, fe) } else { (r, fr) };
        } else if fr < pts[2].1 {
            pts[3] = (r, fr);
        } else {
            let (k, fk) = if fr < pts[3].1 {
                let k = along(-0.5);
                (k, f(&k))
            } else {
                let k = along(0.5);
                (k, f(&k))
            };
            if fk < pts[3].1.min(fr) {
                pts[3] = (k, fk);
            } else {
                let b = pts[0].0;
                for item in pts.iter_mut().skip(1) {
                    let s: [f64; 3] = std::array::from_fn(|i| b[i] + 0.5 * (item.0[i] - b[i]));
                    *item = (s, f(&s));
                }
            }
        }
    }
    pts.sort_by(|a, b| a.1.total_cmp(&b.1));
    Simplex {
        best: pts[0].0,
        value: pts[0].1,
        iterations,
        converged,
    }
}

fn clamp_params(x: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| x[i].clamp(0.0, PARAM_MAX))
}

/// Least squares on log volumes from a 3×3×3 grid of starts in `[0, 1]³`.
pub fn tgi_fit(series: &VolumeSeries) -> Result<FitResult> {
    tgi_fit_points(series.times(), series.volumes())
}

pub fn tgi_fit_points(times: &[f64], volumes: &[f64]) -> Result<FitResult> {
    if times.len() < 3 || times.len() != volumes.len() {
        return Err(Error::Invalid(format!(
            "TGI fit needs at least 3 measurements, got {}",
            times.len()
        )));
    }
    check_grid(volumes[0], times)?;
    let logs: Vec<f64> = volumes.iter().map(|v| v.ln()).collect();
    if logs.iter().all(|l| *l == logs[0]) {
        return Ok(FitResult {
            params: TgiParams::from_array([0.0; 3]),
            rss: 0.0,
            converged: true,
            iterations: 0,
            degenerate: true,
        });
    }
    let rss = |x: &[f64; 3]| -> f64 {
        let p = TgiParams::from_array(*x);
        times
            .iter()
            .zip(&logs)
            .map(|(&t, &l)| (logs[0] + p.log_growth(t) - l).powi(2))
            .sum()
    };
    let objective = |x: &[f64; 3]| -> f64 {
        let c = clamp_params(x);
        let outside: f64 = (0..3).map(|i| (x[i] - c[i]).powi(2)).sum();
        rss(&c) + 1e3 * outside
    };
    let levels = [1.0 / 6.0, 0.5, 5.0 / 6.0];
    let mut best: Option<Simplex> = None;
    let mut iterations = 0;
    for a in levels {
        for b in levels {
            for c in levels {
                let s = nelder_mead(&objective, [a, b, c], 0.1, 2000);
                iterations += s.iterations;
                if best.as_ref().map_or(true, |bst| s.value < bst.value) {
                    best = Some(s);
                }
            }
        }
    }
    let first = best.expect("27 starts");
    // restart from the winner to shake off a collapsed simplex
    let polished = nelder_mead(&objective, first.best, 0.02, 4000);
    iterations += polished.iterations;
    let winner = if polished.value <= first.value {
        polished
    } else {
        first
    };
    let params = TgiParams::from_array(clamp_params(&winner.best));
    Ok(FitResult {
        rss: rss(&params.as_array()),
        params,
        converged: winner.converged,
        iterations,
        degenerate: false,
    })
}

/// One experiment's fit and full-horizon prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct TgiPrediction {
    pub key: ExperimentKey,
    pub fit: FitResult,
    pub times: Vec<f64>,
    pub observed: Vec<f64>,
    pub predicted: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TgiEvaluation {
    pub predictions: Vec<TgiPrediction>,
    pub skipped: Vec<(ExperimentKey, String)>,
    pub metrics: Option<RegressionMetrics>,
}

/// Points scored for a window: those after the cutoff, or all of them
/// when there is no cutoff.
pub fn scored_points(times: &[f64], window: Option<f64>) -> Vec<usize> {
    (0..times.len())
        .filter(|&i| window.map_or(true, |w| times[i] > w))
        .collect()
}

/// Fits each series on its window and scores the predicted volumes in mm³.
pub fn tgi_evaluate(
    cohort: &[(ExperimentKey, VolumeSeries)],
    window: Option<f64>,
) -> TgiEvaluation {
    let mut predictions = Vec::new();
    let mut skipped = Vec::new();
    for (key, series) in cohort {
        let n = series
            .times()
            .iter()
            .filter(|t| window.map_or(true, |w| **t <= w))
            .count();
        let fit = match tgi_fit_points(&series.times()[..n], &series.volumes()[..n]) {
            Ok(f) => f,
            Err(e) => {
                skipped.push((key.clone(), e.to_string()));
                continue;
            }
        };
        let predicted = match tgi_simulate(&fit.params, series.initial(), series.times()) {
            Ok(p) => p,
            Err(e) => {
                skipped.push((key.clone(), e.to_string()));
                continue;
            }
        };
        predictions.push(TgiPrediction {
            key: key.clone(),
            fit,
            times: series.times().to_vec(),
            observed: series.volumes().to_vec(),
            predicted,
        });
    }
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    for p in &predictions {
        for i in scored_points(&p.times, window) {
            truth.push(p.observed[i]);
            pred.push(p.predicted[i]);
        }
    }
    TgiEvaluation {
        metrics: regression_metrics(&truth, &pred).ok(),
        predictions,
        skipped,
    }
}

pub const FIT_CSV_HEADER: &str = "model_id,treatment,k_g,k_d,lambda,rss,converged";

pub fn fits_to_csv(predictions: &[TgiPrediction]) -> String {
    let mut out = format!("{FIT_CSV_HEADER}\n");
    for p in predictions {
        let f = &p.fit;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.key.model_id,
            p.key.treatment,
            f.params.k_g,
            f.params.k_d,
            f.params.lambda,
            f.rss,
            f.converged
        ));
    }
    out
}
