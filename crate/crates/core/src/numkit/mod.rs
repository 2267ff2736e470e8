//! Numerical substrate: tensors, reverse-mode autodiff, layers, losses and Adam.

mod adam;
mod mlp;
mod params;
mod tape;
mod tensor;

use std::sync::Arc;

use indexmap::IndexMap;

pub use adam::Adam;
pub use mlp::Mlp;
pub use params::{accumulate, Bound, GradMap, ParamSet};
pub use tape::{sigmoid, Activation, Csr, Gradients, Tape, Var, CLAMP_EPS};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// LeakyReLU negative slope used by attention scoring.
pub const LEAKY_SLOPE: f64 = 0.2;

const GRAD_FLOOR: f64 = 1e-8;

/// Named inputs bound on a tape.
pub struct Bindings {
    vars: IndexMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("unbound input `{name}`")))
    }

    /// The same leaves as model parameters.
    pub fn as_bound(&self) -> Bound {
        Bound::from_vars(self.vars.clone())
    }
}

/// Evaluates a scalar function of named inputs and its exact gradients.
pub fn autodiff_eval<F>(
    inputs: &IndexMap<String, Tensor>,
    f: F,
) -> Result<(Tensor, IndexMap<String, Tensor>)>
where
    F: Fn(&Tape, &Bindings) -> Result<Var>,
{
    let tape = Tape::new();
    let bindings = Bindings {
        vars: inputs
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
            .collect(),
    };
    let out = f(&tape, &bindings)?;
    let grads = tape.backward(out)?;
    let value = tape.value(out);
    let named = bindings
        .vars
        .iter()
        .map(|(k, v)| (k.clone(), grads.wrt(*v)))
        .collect();
    Ok((value, named))
}

#[derive(Clone, Debug)]
pub struct InputCheck {
    pub name: String,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub inputs: Vec<InputCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|c| c.passed)
    }
}

/// Compares reverse-mode gradients with central differences.
///
/// The error for each input is `‖g_ad − g_fd‖ / max(‖g_ad‖, ‖g_fd‖, 1e-8)`;
/// the floor keeps gradients that vanish up to round-off from failing.
pub fn gradient_check<F>(
    inputs: &IndexMap<String, Tensor>,
    f: F,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &Bindings) -> Result<Var>,
{
    let (_, analytic) = autodiff_eval(inputs, &f)?;
    let scalar_at = |probe: &IndexMap<String, Tensor>| -> Result<f64> {
        let tape = Tape::new();
        let b = Bindings {
            vars: probe
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        };
        let out = f(&tape, &b)?;
        Ok(tape.value(out).item())
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        inputs: Vec::new(),
    };
    let mut probe = inputs.clone();
    for (name, t) in inputs {
        let mut numeric = vec![0.0; t.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let base = t.data()[i];
            probe[name].data_mut()[i] = base + h;
            let up = scalar_at(&probe)?;
            probe[name].data_mut()[i] = base - h;
            let down = scalar_at(&probe)?;
            probe[name].data_mut()[i] = base;
            *slot = (up - down) / (2.0 * h);
        }
        let ad = analytic[name].data();
        let diff: f64 = ad
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = ad.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = diff / na.max(nn).max(GRAD_FLOOR);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.inputs.push(InputCheck {
            name: name.clone(),
            rel_error: rel,
            passed: rel <= tol,
        });
    }
    Ok(report)
}

/// Numerically stable softmax of a row.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Invalid("softmax of an empty row".into()));
    }
    let mut out = v.to_vec();
    tape::softmax_in_place(&mut out);
    Ok(out)
}

/// Loss kinds shared by every trainer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    BinaryCrossEntropy,
    GaussianKl,
}

/// Numeric loss. For `GaussianKl`, `a` holds μ and `b` holds log σ².
pub fn loss(kind: LossKind, a: &Tensor, b: &Tensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::shape(
            "loss",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(match kind {
        LossKind::Mse => {
            if a.is_empty() {
                return Err(Error::Invalid("mse of empty tensors".into()));
            }
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                / a.len() as f64
        }
        LossKind::BinaryCrossEntropy => tape::bce_value(a.data(), b.data()),
        LossKind::GaussianKl => {
            0.5 * a
                .data()
                .iter()
                .zip(b.data())
                .map(|(mu, lv)| mu * mu + lv.exp() - 1.0 - lv)
                .sum::<f64>()
        }
    })
}

/// `½ Σ (μ² + σ² − 1 − log σ²)` on a tape.
pub fn gaussian_kl(tape: &Tape, mu: Var, logvar: Var) -> Var {
    let mu2 = tape.mul(mu, mu);
    let var = tape.exp(logvar);
    let s = tape.lincomb(&[(mu2, 1.0), (var, 1.0), (logvar, -1.0)]);
    let total = tape.sum(s);
    let n = tape.with_value(mu, Tensor::len) as f64;
    // the −1 per element is a constant offset
    let offset = tape.leaf(Tensor::scalar(-n));
    let t = tape.add(total, offset);
    tape.scale(t, 0.5)
}

/// Mean binary cross-entropy of `p` against constant `targets`.
pub fn bce(tape: &Tape, p: Var, targets: Tensor) -> Var {
    tape.bce(p, Arc::new(targets))
}
