//! GRU encoder of an early observation window into the embedding `β2`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_data::VolumeSeries;
use crate::numkit::{Activation, Bound, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeConfig {
    pub hidden: usize,
    /// Δt inputs are divided by this many days.
    pub time_scale: f64,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        VolumeConfig {
            hidden: 16,
            time_scale: 7.0,
        }
    }
}

/// Measurements up to a cutoff day as `(t, log(V(t)/V(0)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationWindow {
    pub cutoff: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ObservationWindow {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub fn make_window(series: &VolumeSeries, cutoff: f64) -> Result<ObservationWindow> {
    if !(cutoff >= 0.0) {
        return Err(Error::Invalid(format!(
            "observation window cutoff {cutoff} leaves no measurements"
        )));
    }
    let v0 = series.initial();
    let (times, values) = series
        .times()
        .iter()
        .zip(series.volumes())
        .take_while(|(t, _)| **t <= cutoff)
        .map(|(t, v)| (*t, (v / v0).ln()))
        .unzip();
    Ok(ObservationWindow {
        cutoff,
        times,
        values,
    })
}

const GATES: [&str; 3] = ["z", "r", "h"];

#[derive(Clone, Debug)]
pub struct VolumeEncoder {
    pub config: VolumeConfig,
}

impl VolumeEncoder {
    pub fn new(config: VolumeConfig) -> Result<Self> {
        if config.hidden == 0 || !(config.time_scale > 0.0) {
            return Err(Error::Config(
                "volume encoder hidden size and time scale must be positive".into(),
            ));
        }
        Ok(VolumeEncoder { config })
    }

    pub fn output_dim(&self) -> usize {
        self.config.hidden
    }

    pub fn init<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) {
        let h = self.config.hidden;
        let bound = 1.0 / (h as f64).sqrt();
        for g in GATES {
            params.init_uniform(&format!("vol.w{g}"), 2, h, bound, rng);
            params.init_uniform(&format!("vol.u{g}"), h, h, bound, rng);
            params.init_zeros(&format!("vol.b{g}"), 1, h);
        }
        params.init_uniform("vol.out.w", h, h, bound, rng);
        params.init_zeros("vol.out.b", 1, h);
    }

    pub fn check(&self, params: &ParamSet) -> Result<()> {
        let h = self.config.hidden;
        let mut expect = vec![
            ("vol.out.w".to_string(), h, h),
            ("vol.out.b".to_string(), 1, h),
        ];
        for g in GATES {
            expect.push((format!("vol.w{g}"), 2, h));
            expect.push((format!("vol.u{g}"), h, h));
            expect.push((format!("vol.b{g}"), 1, h));
        }
        for (name, r, c) in expect {
            let t = params.get(&name)?;
            if (t.rows(), t.cols()) != (r, c) {
                return Err(Error::shape(
                    "volume encoder",
                    format!("{name} is {}x{}, expected {r}x{c}", t.rows(), t.cols()),
                ));
            }
        }
        Ok(())
    }

    /// Step inputs `(Δt / time_scale, log relative volume)`; the first Δt is 0.
    pub fn step_inputs(&self, window: &ObservationWindow) -> Vec<[f64; 2]> {
        let mut prev = 0.0;
        window
            .times
            .iter()
            .zip(&window.values)
            .map(|(&t, &v)| {
                let dt = (t - prev) / self.config.time_scale;
                prev = t;
                [dt, v]
            })
            .collect()
    }

    /// Encodes several windows at once; row `i` of the result is `β2` of `windows[i]`.
    pub fn encode_tape(
        &self,
        tape: &Tape,
        p: &Bound,
        windows: &[&ObservationWindow],
    ) -> Result<Var> {
        if let Some(w) = windows.iter().find(|w| w.is_empty()) {
            return Err(Error::Invalid(format!(
                "empty observation window (cutoff {})",
                w.cutoff
            )));
        }
        let b = windows.len();
        let hidden = self.config.hidden;
        let inputs: Vec<Vec<[f64; 2]>> = windows.iter().map(|w| self.step_inputs(w)).collect();
        let steps = inputs.iter().map(Vec::len).max().unwrap_or(0);
        let gate = |g: &str| {
            (
                p.var(&format!("vol.w{g}")),
                p.var(&format!("vol.u{g}")),
                p.var(&format!("vol.b{g}")),
            )
        };
        let (wz, uz, bz) = gate("z");
        let (wr, ur, br) = gate("r");
        let (wh, uh, bh) = gate("h");
        let mut h = tape.leaf(Tensor::zeros(b, hidden));
        for t in 0..steps {
            let mut x = Tensor::zeros(b, 2);
            let mut mask = vec![0.0; b];
            for (i, seq) in inputs.iter().enumerate() {
                if let Some(step) = seq.get(t) {
                    x.set(i, 0, step[0]);
                    x.set(i, 1, step[1]);
                    mask[i] = 1.0;
                }
            }
            let x = tape.leaf(x);
            let zx = tape.dense(x, wz, bz, Activation::Identity);
            let z = tape.sigmoid(tape.add(zx, tape.matmul(h, uz)));
            let rx = tape.dense(x, wr, br, Activation::Identity);
            let r = tape.sigmoid(tape.add(rx, tape.matmul(h, ur)));
            let hx = tape.dense(x, wh, bh, Activation::Identity);
            let rh = tape.mul(r, h);
            let cand = tape.tanh(tape.add(hx, tape.matmul(rh, uh)));
            let delta = tape.mul(z, tape.sub(cand, h));
            let next = tape.add(h, delta);
            h = if mask.iter().all(|&m| m == 1.0) {
                next
            } else {
                // rows past their window keep the state they ended with
                let keep: Vec<f64> = mask.iter().map(|m| 1.0 - m).collect();
                let on = tape.mul_col(next, tape.leaf(Tensor::column(mask)));
                let off = tape.mul_col(h, tape.leaf(Tensor::column(keep)));
                tape.add(on, off)
            };
        }
        Ok(tape.dense(
            h,
            p.var("vol.out.w"),
            p.var("vol.out.b"),
            Activation::Identity,
        ))
    }

    /// `β2` of one window, `1×D_v`.
    pub fn encode_window(&self, params: &ParamSet, window: &ObservationWindow) -> Result<Tensor> {
        self.check(params)?;
        let tape = Tape::new();
        let p = params.bind(&tape);
        let out = self.encode_tape(&tape, &p, &[window])?;
        Ok(tape.value(out))
    }
}
