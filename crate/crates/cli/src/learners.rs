//! Trained or fixed policies as serializable checkpoints.

use std::sync::Arc;

use ilbench_core::instances::{AnyInstance, Instance};
use ilbench_core::policies::{
    bc_learn, mlp_train, toy_diffusion_train, BcOptions, BcPolicy, BcTemplate, DiffusionPolicy, ExpertPolicy, FnPolicy,
    MlpPolicy, Policy, RandomNoisePolicy, TracePoint,
};
use ilbench_core::rng::seeded;
use ilbench_core::simkit::Dataset;
use serde::{Deserialize, Serialize};

use crate::config::{BenchConfig, LearnerKind};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyCheckpoint {
    Expert,
    Zero { d: usize },
    RandomNoise(RandomNoisePolicy),
    Bc(BcPolicy),
    Mlp(MlpPolicy),
    ToyDiffusion(DiffusionPolicy),
}

impl PolicyCheckpoint {
    pub fn into_policy(self, inst: Arc<AnyInstance>) -> Arc<dyn Policy> {
        match self {
            PolicyCheckpoint::Expert => Arc::new(ExpertPolicy::new(inst)),
            PolicyCheckpoint::Zero { d } => Arc::new(FnPolicy::zero(d)),
            PolicyCheckpoint::RandomNoise(p) => Arc::new(p),
            PolicyCheckpoint::Bc(p) => Arc::new(p),
            PolicyCheckpoint::Mlp(p) => Arc::new(p),
            PolicyCheckpoint::ToyDiffusion(p) => Arc::new(p),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            PolicyCheckpoint::Expert => "expert",
            PolicyCheckpoint::Zero { .. } => "zero",
            PolicyCheckpoint::RandomNoise(_) => "random_noise",
            PolicyCheckpoint::Bc(_) => "bc",
            PolicyCheckpoint::Mlp(_) => "mlp",
            PolicyCheckpoint::ToyDiffusion(_) => "toy_diffusion",
        }
    }

    pub fn needs_data(kind: LearnerKind) -> bool {
        matches!(kind, LearnerKind::Bc | LearnerKind::Mlp | LearnerKind::ToyDiffusion)
    }
}

pub struct Trained {
    pub checkpoint: PolicyCheckpoint,
    pub trace: Vec<TracePoint>,
}

/// Fits the configured learner. Fixed policies ignore `dataset`.
pub fn train(cfg: &BenchConfig, inst: &AnyInstance, dataset: Option<&Dataset>) -> Result<Trained> {
    let kind = cfg.learner.kind;
    let need = || dataset.ok_or_else(|| CliError::Config(format!("learner `{kind:?}` needs a dataset")));
    let mut rng = seeded(cfg.train_seed());
    let (checkpoint, trace) = match kind {
        LearnerKind::Expert => (PolicyCheckpoint::Expert, Vec::new()),
        LearnerKind::Zero => (PolicyCheckpoint::Zero { d: inst.input_dim() }, Vec::new()),
        LearnerKind::RandomNoise => {
            let p = RandomNoisePolicy { d: inst.input_dim(), variance: cfg.learner.noise_variance };
            (PolicyCheckpoint::RandomNoise(p), Vec::new())
        }
        LearnerKind::Bc => {
            let stable = inst.as_stable().ok_or_else(|| CliError::Config("learner `bc` needs the stable construction".into()))?;
            let p = bc_learn(need()?, &BcTemplate::from_instance(stable), &BcOptions { completion: cfg.completion() })?;
            (PolicyCheckpoint::Bc(p), Vec::new())
        }
        LearnerKind::Mlp => {
            let out = mlp_train(need()?, &cfg.mlp(), &cfg.optimizer(), &mut rng)?;
            (PolicyCheckpoint::Mlp(out.policy), out.trace)
        }
        LearnerKind::ToyDiffusion => {
            let mut p = toy_diffusion_train(need()?, &cfg.diffusion(), &mut rng)?;
            // the trace has no validation losses (NaN), which JSON cannot carry
            let trace = std::mem::take(&mut p.trace);
            (PolicyCheckpoint::ToyDiffusion(p), trace)
        }
    };
    Ok(Trained { checkpoint, trace })
}

pub fn trace_csv(trace: &[TracePoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in trace {
        w.serialize(p)?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8"))
}
