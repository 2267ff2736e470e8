use rand::Rng;

use super::params::{Bound, ParamSet};
use super::tape::{Activation, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Feed-forward stack `act_L(… act_1(x·W_1 + b_1) … ·W_L + b_L)`.
///
/// Rows of `x` are samples. Weights live in a [`ParamSet`] under
/// `{prefix}.{i}.w` (`in×out`) and `{prefix}.{i}.b` (`1×out`).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl Mlp {
    pub fn new(
        prefix: impl Into<String>,
        dims: Vec<usize>,
        activations: Vec<Activation>,
    ) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::Invalid(format!(
                "mlp needs one activation per layer: {} dims, {} activations",
                dims.len(),
                activations.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Invalid("mlp layer width 0".into()));
        }
        Ok(Mlp {
            prefix: prefix.into(),
            dims,
            activations,
        })
    }

    pub fn layers(&self) -> usize {
        self.activations.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{layer}.w", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{layer}.b", self.prefix)
    }

    /// Uniform(±1/√fan_in) weights, zero biases.
    pub fn init<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) {
        for l in 0..self.layers() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            params.init_uniform(&self.weight_name(l), i, o, 1.0 / (i as f64).sqrt(), rng);
            params.init_zeros(&self.bias_name(l), 1, o);
        }
    }

    pub fn check(&self, params: &ParamSet) -> Result<()> {
        for l in 0..self.layers() {
            let w = params.get(&self.weight_name(l))?;
            let b = params.get(&self.bias_name(l))?;
            if w.rows() != self.dims[l]
                || w.cols() != self.dims[l + 1]
                || b.rows() != 1
                || b.cols() != self.dims[l + 1]
            {
                return Err(Error::shape(
                    "mlp",
                    format!(
                        "layer {l} of `{}` does not chain {}→{}",
                        self.prefix,
                        self.dims[l],
                        self.dims[l + 1]
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: Var) -> Var {
        let mut h = x;
        for (l, act) in self.activations.iter().enumerate() {
            h = tape.dense(
                h,
                p.var(&self.weight_name(l)),
                p.var(&self.bias_name(l)),
                *act,
            );
        }
        h
    }

    /// Numeric forward pass with dimension checks.
    pub fn eval(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        self.check(params)?;
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "mlp_forward",
                format!(
                    "input width {} vs first layer {}",
                    x.cols(),
                    self.input_dim()
                ),
            ));
        }
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let xv = tape.leaf(x.clone());
        let y = self.forward(&tape, &bound, xv);
        Ok(tape.value(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_network_passes_input() {
        let mlp = Mlp::new("m", vec![3, 3], vec![Activation::Identity]).unwrap();
        let mut p = ParamSet::new();
        p.insert("m.0.w", Tensor::identity(3));
        p.insert("m.0.b", Tensor::zeros(1, 3));
        let x = Tensor::row(vec![0.5, -2.0, 7.0]);
        assert_eq!(mlp.eval(&p, &x).unwrap(), x);
    }

    #[test]
    fn relu_layer_clips_negative() {
        let mlp = Mlp::new("m", vec![2, 2], vec![Activation::Relu]).unwrap();
        let mut p = ParamSet::new();
        p.insert("m.0.w", Tensor::identity(2));
        p.insert("m.0.b", Tensor::zeros(1, 2));
        let y = mlp.eval(&p, &Tensor::row(vec![-1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn input_width_is_checked() {
        let mlp = Mlp::new(
            "m",
            vec![2, 4, 1],
            vec![Activation::Tanh, Activation::Identity],
        )
        .unwrap();
        let mut p = ParamSet::new();
        mlp.init(&mut p, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(
            mlp.eval(&p, &Tensor::row(vec![1.0; 3])),
            Err(Error::Shape { .. })
        ));
        assert!(Mlp::new("m", vec![2, 4], vec![]).is_err());
    }
}
