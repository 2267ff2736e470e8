//! Conditioned neural ODE `dy/dt = f_θ(y, β)` with an MLP decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Activation, Bound, ParamSet, Tape, Tensor, Var};

/// Grid points closer than this are treated as the same time.
pub const TIME_EPS: f64 = 1e-9;

/// Classical RK4 on `grid`, subdividing each interval into `ceil(Δ/h)` equal steps.
pub fn rk4_integrate<F>(mut f: F, y0: &[f64], grid: &[f64], h: f64) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    check_grid(grid, h)?;
    let mut y = y0.to_vec();
    let mut out = Vec::with_capacity(grid.len());
    out.push(y.clone());
    for w in grid.windows(2) {
        let span = w[1] - w[0];
        let n = (span / h - TIME_EPS).ceil().max(1.0) as usize;
        let dt = span / n as f64;
        for k in 0..n {
            let t = w[0] + k as f64 * dt;
            y = rk4_step(&mut f, t, &y, dt);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite ODE state at t={}",
                    t + dt
                )));
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn rk4_step<F>(f: &mut F, t: f64, y: &[f64], dt: f64) -> Vec<f64>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    let shift =
        |k: &[f64], s: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    let k1 = f(t, y);
    let k2 = f(t + dt / 2.0, &shift(&k1, dt / 2.0));
    let k3 = f(t + dt / 2.0, &shift(&k2, dt / 2.0));
    let k4 = f(t + dt, &shift(&k3, dt));
    (0..y.len())
        .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

fn check_grid(grid: &[f64], h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Invalid(format!(
            "integration step {h} must be positive"
        )));
    }
    if grid.first() != Some(&0.0) {
        return Err(Error::Invalid("time grid must start at 0".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::Invalid(
            "time grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeConfig {
    pub y_dim: usize,
    pub hidden: usize,
    pub decoder_hidden: usize,
    /// Internal RK4 step in days.
    pub step: f64,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            y_dim: 2,
            hidden: 32,
            decoder_hidden: 16,
            step: 0.25,
        }
    }
}

/// States and decoded log relative volumes on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `v̂(t)`, the decoder output on the normalized scale.
    pub decoded: Vec<f64>,
}

impl Trajectory {
    /// Volumes in mm³: `exp(v̂)·v0`.
    pub fn volumes(&self, v0: f64) -> Vec<f64> {
        self.decoded.iter().map(|v| v.exp() * v0).collect()
    }
}

#[derive(Clone, Debug)]
pub struct NodeModel {
    pub config: NodeConfig,
    beta_dim: usize,
}

impl NodeModel {
    pub fn new(config: NodeConfig, beta_dim: usize) -> Result<Self> {
        if config.y_dim == 0 || config.y_dim > 2 {
            return Err(Error::Config(format!(
                "ODE state dimension {} must be 1 or 2",
                config.y_dim
            )));
        }
        if config.hidden == 0
            || config.decoder_hidden == 0
            || !(config.step > 0.0 && config.step.is_finite())
        {
            return Err(Error::Config(
                "NODE widths and step must be positive".into(),
            ));
        }
        Ok(NodeModel { config, beta_dim })
    }

    pub fn beta_dim(&self) -> usize {
        self.beta_dim
    }

    fn shapes(&self) -> Vec<(&'static str, usize, usize)> {
        let (y, b, h, d) = (
            self.config.y_dim,
            self.beta_dim,
            self.config.hidden,
            self.config.decoder_hidden,
        );
        vec![
            ("node.init.w", b, y),
            ("node.init.b", 1, y),
            ("node.f.0.wy", y, h),
            ("node.f.0.wb", b, h),
            ("node.f.0.b", 1, h),
            ("node.f.1.w", h, h),
            ("node.f.1.b", 1, h),
            ("node.f.2.w", h, y),
            ("node.f.2.b", 1, y),
            ("node.dec.0.w", y, d),
            ("node.dec.0.b", 1, d),
            ("node.dec.1.w", d, 1),
            ("node.dec.1.b", 1, 1),
        ]
    }

    pub fn init<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) {
        let (y, b) = (self.config.y_dim, self.beta_dim);
        for (name, r, c) in self.shapes() {
            if name.ends_with(".b") {
                params.init_zeros(name, r, c);
                continue;
            }
            let fan_in = match name {
                "node.f.0.wy" | "node.f.0.wb" => y + b,
                _ => r,
            };
            let mut bound = 1.0 / (fan_in as f64).sqrt();
            // start close to a still field so early epochs do not blow up
            if name == "node.f.2.w" {
                bound *= 0.1;
            }
            params.init_uniform(name, r, c, bound, rng);
        }
    }

    pub fn check(&self, params: &ParamSet) -> Result<()> {
        for (name, r, c) in self.shapes() {
            let t = params.get(name)?;
            if (t.rows(), t.cols()) != (r, c) {
                return Err(Error::shape(
                    "NODE parameters",
                    format!("{name} is {}x{}, expected {r}x{c}", t.rows(), t.cols()),
                ));
            }
        }
        Ok(())
    }

    pub fn init_state_tape(&self, tape: &Tape, p: &Bound, beta: Var) -> Var {
        tape.dense(
            beta,
            p.var("node.init.w"),
            p.var("node.init.b"),
            Activation::Identity,
        )
    }

    /// `β·W_β + b` of the first field layer, constant along a trajectory.
    pub fn conditioning_tape(&self, tape: &Tape, p: &Bound, beta: Var) -> Var {
        tape.dense(
            beta,
            p.var("node.f.0.wb"),
            p.var("node.f.0.b"),
            Activation::Identity,
        )
    }

    /// `f_θ(y, β)` with the β term already folded into `cond`.
    pub fn field_tape(&self, tape: &Tape, p: &Bound, y: Var, cond: Var) -> Var {
        let h1 = tape.dense(y, p.var("node.f.0.wy"), cond, Activation::Tanh);
        let h2 = tape.dense(
            h1,
            p.var("node.f.1.w"),
            p.var("node.f.1.b"),
            Activation::Tanh,
        );
        tape.dense(
            h2,
            p.var("node.f.2.w"),
            p.var("node.f.2.b"),
            Activation::Identity,
        )
    }

    pub fn rk4_step_tape(&self, tape: &Tape, p: &Bound, y: Var, cond: Var, dt: f64) -> Var {
        let k1 = self.field_tape(tape, p, y, cond);
        let y2 = tape.lincomb(&[(y, 1.0), (k1, dt / 2.0)]);
        let k2 = self.field_tape(tape, p, y2, cond);
        let y3 = tape.lincomb(&[(y, 1.0), (k2, dt / 2.0)]);
        let k3 = self.field_tape(tape, p, y3, cond);
        let y4 = tape.lincomb(&[(y, 1.0), (k3, dt)]);
        let k4 = self.field_tape(tape, p, y4, cond);
        tape.lincomb(&[
            (y, 1.0),
            (k1, dt / 6.0),
            (k2, dt / 3.0),
            (k3, dt / 3.0),
            (k4, dt / 6.0),
        ])
    }

    /// States at each of `times` (sorted, starting at 0).
    ///
    /// The main path takes full steps of `step` days from 0; a time between
    /// grid points gets one extra partial step that does not feed back into
    /// the main path, so a state at `t` never depends on which other times
    /// were requested.
    pub fn integrate_tape(
        &self,
        tape: &Tape,
        p: &Bound,
        y0: Var,
        cond: Var,
        times: &[f64],
    ) -> Result<Vec<Var>> {
        check_grid(times, self.config.step)?;
        let h = self.config.step;
        let mut y = y0;
        let mut k = 0usize;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            while (k + 1) as f64 * h <= t + TIME_EPS {
                y = self.rk4_step_tape(tape, p, y, cond, h);
                k += 1;
                if !tape.with_value(y, Tensor::is_finite) {
                    return Err(Error::Numerical(format!(
                        "non-finite ODE state at t={}",
                        k as f64 * h
                    )));
                }
            }
            let rest = t - k as f64 * h;
            if rest.abs() <= TIME_EPS {
                out.push(y);
            } else {
                let branch = self.rk4_step_tape(tape, p, y, cond, rest);
                if !tape.with_value(branch, Tensor::is_finite) {
                    return Err(Error::Numerical(format!("non-finite ODE state at t={t}")));
                }
                out.push(branch);
            }
        }
        Ok(out)
    }

    /// Decoder output `v̂`, one column.
    pub fn decode_tape(&self, tape: &Tape, p: &Bound, y: Var) -> Var {
        let h = tape.dense(
            y,
            p.var("node.dec.0.w"),
            p.var("node.dec.0.b"),
            Activation::Tanh,
        );
        tape.dense(
            h,
            p.var("node.dec.1.w"),
            p.var("node.dec.1.b"),
            Activation::Identity,
        )
    }

    fn check_beta(&self, beta: &Tensor) -> Result<()> {
        if beta.rows() != 1 || beta.cols() != self.beta_dim {
            return Err(Error::shape(
                "NODE",
                format!(
                    "β is {}x{}, expected 1x{}",
                    beta.rows(),
                    beta.cols(),
                    self.beta_dim
                ),
            ));
        }
        Ok(())
    }

    pub fn init_state(&self, params: &ParamSet, beta: &Tensor) -> Result<Vec<f64>> {
        self.check(params)?;
        self.check_beta(beta)?;
        let tape = Tape::new();
        let p = params.bind(&tape);
        let b = tape.leaf(beta.clone());
        Ok(tape.value(self.init_state_tape(&tape, &p, b)).into_data())
    }

    /// Integrates from `init_state(β)` and decodes every grid point.
    pub fn simulate(&self, params: &ParamSet, beta: &Tensor, grid: &[f64]) -> Result<Trajectory> {
        self.check(params)?;
        self.check_beta(beta)?;
        let tape = Tape::new();
        let p = params.bind(&tape);
        let b = tape.leaf(beta.clone());
        let y0 = self.init_state_tape(&tape, &p, b);
        let cond = self.conditioning_tape(&tape, &p, b);
        self.trajectory_from(&tape, &p, y0, cond, grid)
    }

    pub(crate) fn trajectory_from(
        &self,
        tape: &Tape,
        p: &Bound,
        y0: Var,
        cond: Var,
        grid: &[f64],
    ) -> Result<Trajectory> {
        let states = self.integrate_tape(tape, p, y0, cond, grid)?;
        let mut out = Trajectory {
            times: grid.to_vec(),
            states: Vec::with_capacity(grid.len()),
            decoded: Vec::with_capacity(grid.len()),
        };
        for s in states {
            out.decoded
                .push(tape.value(self.decode_tape(tape, p, s)).item());
            out.states.push(tape.value(s).into_data());
        }
        Ok(out)
    }
}
