//! The end-to-end model: heterogeneous encoder, volume encoder and NODE,
//! plus the standalone responder classifier over `β1`.

mod checkpoint;
mod evaluate;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_data::{Dataset, HeteroInstance, KnowledgeBase, VolumeSeries};
use crate::hetero_encoder::{EncoderConfig, HeteroEncoder, TRUNK_PREFIXES};
use crate::node_dynamics::{NodeConfig, NodeModel, Trajectory};
use crate::numkit::{Activation, Bound, Mlp, ParamSet, Tape, Tensor, Var};
use crate::response::{best_response, binarize, categorize};
use crate::volume_encoder::{make_window, ObservationWindow, VolumeConfig, VolumeEncoder};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointKind, CheckpointMeta, FoldRef,
    BLOB_FILE, FORMAT_VERSION, MANIFEST_FILE,
};
pub use evaluate::{
    classifier_scores, decoded_grid, evaluate_dynamics, DynamicsEvaluation, ExperimentPrediction,
    TRAJECTORY_CSV_HEADER,
};
pub use train::{
    classifier_cross_entropy, dynamics_loss, dynamics_loss_tape, train_classifier, train_dynamics,
    worker_pool, TrainConfig, TrainOutcome,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub volume: VolumeConfig,
    pub node: NodeConfig,
    /// Without the graph encoder `β = β2`.
    pub use_graph_encoder: bool,
    /// Hidden widths of the responder classifier.
    pub classifier_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            volume: VolumeConfig::default(),
            node: NodeConfig::default(),
            use_graph_encoder: true,
            classifier_hidden: vec![32, 16],
        }
    }
}

/// Entity names the parameters are indexed by.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub genes: Vec<String>,
    pub drugs: Vec<String>,
    pub diseases: Vec<String>,
}

impl Vocabulary {
    pub fn of(knowledge: &KnowledgeBase) -> Self {
        Vocabulary {
            genes: knowledge.genes.clone(),
            drugs: knowledge.drugs.clone(),
            diseases: knowledge.diseases.clone(),
        }
    }
}

/// One experiment ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub instance: HeteroInstance,
    pub series: VolumeSeries,
}

impl Sample {
    /// `log(V/V0)` at each measurement.
    pub fn targets(&self) -> Vec<f64> {
        let v0 = self.series.initial();
        self.series
            .volumes()
            .iter()
            .map(|v| (v / v0).ln())
            .collect()
    }

    /// Observed responder label (CR, PR or SD).
    pub fn responder(&self) -> Result<bool> {
        Ok(binarize(categorize(best_response(
            self.series.times(),
            self.series.volumes(),
        )?)))
    }

    /// The window seen by the volume encoder; `None` is the whole series.
    pub fn window(&self, cutoff: Option<f64>) -> Result<ObservationWindow> {
        make_window(&self.series, cutoff.unwrap_or(f64::INFINITY))
    }
}

/// Assembles the experiments at `indices`, in that order.
pub fn prepare_samples(dataset: &Dataset, indices: &[usize]) -> Result<Vec<Sample>> {
    let kb = dataset.knowledge();
    indices
        .iter()
        .map(|&i| {
            let e = dataset
                .experiments
                .get(i)
                .ok_or_else(|| Error::Invalid(format!("experiment index {i} out of range")))?;
            Ok(Sample {
                instance: kb.assemble(e, &dataset.expression)?,
                series: e.volumes.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocabulary: Vocabulary,
    encoder: HeteroEncoder,
    volume: VolumeEncoder,
    node: NodeModel,
    classifier: Mlp,
}

impl Model {
    pub fn new(config: ModelConfig, dataset: &Dataset) -> Result<Self> {
        config.encoder.validate()?;
        let vocabulary = Vocabulary::of(&dataset.knowledge());
        let encoder = HeteroEncoder::new(
            config.encoder.clone(),
            &dataset.gene_graph,
            vocabulary.drugs.len(),
            vocabulary.diseases.len(),
        )?;
        let volume = VolumeEncoder::new(config.volume.clone())?;
        let beta_dim = volume.output_dim()
            + if config.use_graph_encoder {
                encoder.beta1_dim()
            } else {
                0
            };
        let node = NodeModel::new(config.node.clone(), beta_dim)?;
        let mut dims = vec![encoder.beta1_dim()];
        dims.extend(&config.classifier_hidden);
        dims.push(1);
        let mut acts = vec![Activation::Relu; dims.len() - 2];
        acts.push(Activation::Sigmoid);
        let classifier = Mlp::new("cls", dims, acts).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Model {
            config,
            vocabulary,
            encoder,
            volume,
            node,
            classifier,
        })
    }

    /// Rebuilds the model a checkpoint was trained as, refusing a dataset
    /// whose vocabularies differ.
    pub fn for_checkpoint(meta: &CheckpointMeta, dataset: &Dataset) -> Result<Self> {
        let model = Model::new(meta.model.clone(), dataset)?;
        if model.vocabulary != meta.vocabulary {
            let what = if model.vocabulary.genes != meta.vocabulary.genes {
                "gene"
            } else if model.vocabulary.drugs != meta.vocabulary.drugs {
                "drug"
            } else {
                "disease"
            };
            return Err(Error::Checkpoint(format!(
                "{what} vocabulary of the data differs from the checkpoint"
            )));
        }
        Ok(model)
    }

    pub fn encoder(&self) -> &HeteroEncoder {
        &self.encoder
    }

    pub fn node(&self) -> &NodeModel {
        &self.node
    }

    pub fn beta_dim(&self) -> usize {
        self.node.beta_dim()
    }

    /// Fresh dynamics parameters. Encoder tensors exist only with the graph encoder on.
    pub fn init_dynamics(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        if self.config.use_graph_encoder {
            self.encoder.init(&mut p, &mut rng);
        }
        self.volume.init(&mut p, &mut rng);
        self.node.init(&mut p, &mut rng);
        p
    }

    pub fn init_classifier(&self, seed: u64) -> Result<ParamSet> {
        self.require_encoder("the responder classifier")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        self.encoder.init(&mut p, &mut rng);
        self.classifier.init(&mut p, &mut rng);
        Ok(p)
    }

    /// Overwrites the gene trunk with pretrained tensors.
    pub fn load_trunk(&self, params: &mut ParamSet, pretrained: &ParamSet) -> Result<()> {
        self.require_encoder("pretrained weights")?;
        for prefix in TRUNK_PREFIXES {
            if params.copy_prefix_from(pretrained, prefix)? == 0 {
                return Err(Error::Checkpoint(format!(
                    "pretraining checkpoint has no `{prefix}` tensors"
                )));
            }
        }
        self.encoder.check(params)
    }

    fn require_encoder(&self, what: &str) -> Result<()> {
        if self.config.use_graph_encoder {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{what} needs use_graph_encoder = true"
            )))
        }
    }

    pub fn check_dynamics(&self, params: &ParamSet) -> Result<()> {
        if self.config.use_graph_encoder {
            self.encoder.check(params)?;
        }
        self.volume.check(params)?;
        self.node.check(params)
    }

    pub fn check_classifier(&self, params: &ParamSet) -> Result<()> {
        self.require_encoder("the responder classifier")?;
        self.encoder.check(params)?;
        self.classifier.check(params)
    }

    /// `β1` rows of several instances, `B×2D`.
    pub fn beta1_tape(&self, tape: &Tape, p: &Bound, instances: &[&HeteroInstance]) -> Result<Var> {
        let rows = instances
            .iter()
            .map(|i| Ok(self.encoder.encode_tape(tape, p, i)?.beta1))
            .collect::<Result<Vec<_>>>()?;
        Ok(tape.concat_rows(&rows))
    }

    /// `β = [β1 ‖ β2]` (or `β2` alone), one row per instance.
    pub fn beta_tape(
        &self,
        tape: &Tape,
        p: &Bound,
        instances: &[&HeteroInstance],
        windows: &[&ObservationWindow],
    ) -> Result<Var> {
        let beta2 = self.volume.encode_tape(tape, p, windows)?;
        if !self.config.use_graph_encoder {
            return Ok(beta2);
        }
        let beta1 = self.beta1_tape(tape, p, instances)?;
        Ok(tape.concat_cols(&[beta1, beta2]))
    }

    pub fn beta(
        &self,
        params: &ParamSet,
        instance: &HeteroInstance,
        window: &ObservationWindow,
    ) -> Result<Tensor> {
        self.check_dynamics(params)?;
        let tape = Tape::new();
        let p = params.bind(&tape);
        Ok(tape.value(self.beta_tape(&tape, &p, &[instance], &[window])?))
    }

    /// Trajectory on `grid` from the measurements up to `cutoff`.
    /// Volumes are scaled by the first observed volume.
    pub fn predict_trajectory(
        &self,
        params: &ParamSet,
        sample: &Sample,
        cutoff: Option<f64>,
        grid: &[f64],
    ) -> Result<Prediction> {
        let window = sample.window(cutoff)?;
        if let Some(last) = window.times.last() {
            if grid.iter().all(|t| t < last) {
                return Err(Error::Invalid(
                    "prediction grid ends before the observation window".into(),
                ));
            }
        }
        let beta = self.beta(params, &sample.instance, &window)?;
        let trajectory = self.node.simulate(params, &beta, grid)?;
        let volumes = trajectory.volumes(sample.series.initial());
        Ok(Prediction {
            trajectory,
            volumes,
        })
    }

    /// Responder probabilities of several instances.
    pub fn classify(&self, params: &ParamSet, instances: &[&HeteroInstance]) -> Result<Vec<f64>> {
        self.check_classifier(params)?;
        let tape = Tape::new();
        let p = params.bind(&tape);
        let out = self.classifier_tape(&tape, &p, instances)?;
        Ok(tape.value(out).into_data())
    }

    pub fn classifier_tape(
        &self,
        tape: &Tape,
        p: &Bound,
        instances: &[&HeteroInstance],
    ) -> Result<Var> {
        let beta1 = self.beta1_tape(tape, p, instances)?;
        Ok(self.classifier.forward(tape, p, beta1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub trajectory: Trajectory,
    /// Predicted volumes in mm³.
    pub volumes: Vec<f64>,
}
