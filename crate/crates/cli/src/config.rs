//! The JSON run configuration and its validation.

use std::path::{Path, PathBuf};

use ilbench_core::funclass::{sample_hard_function, SmoothFunction};
use ilbench_core::instances::{
    make_stable_instance, make_unstable_instance, AnyInstance, GamblerSystem, Sign, StableParams, UnstableParams,
    UnstableVariant,
};
use ilbench_core::matkit::{challenging_pair, PairIndex};
use ilbench_core::policies::{Completion, DiffusionConfig, MlpConfig, OptimizerConfig};
use ilbench_core::rng::{derive_seed, seeded};
use ilbench_core::simkit::EvalConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::read_json;

/// Environment variable naming the output root when `--out` is absent.
pub const OUTPUT_ROOT_ENV: &str = "ILBENCH_OUT";
const DEFAULT_OUTPUT_ROOT: &str = "ilbench-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    Stable,
    Unstable,
    Gambler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceConfig {
    pub construction: Construction,
    pub mu: f64,
    pub tau: f64,
    pub delta: f64,
    pub k: usize,
    pub s: usize,
    pub d: usize,
    pub rho: f64,
    pub variant: UnstableVariant,
    /// Hidden index of the challenging pair, 1 or 2.
    pub index: u8,
    /// Hidden sign, +1 or -1.
    pub sign: i8,
    /// Bump width of the hidden function.
    pub g_eps: f64,
    pub g_seed: u64,
    /// JSON file holding the hidden function; replaces `g_eps` and `g_seed`.
    pub function_file: Option<PathBuf>,
    /// Initial error of the gambler system.
    pub eps0: f64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig {
            construction: Construction::Stable,
            mu: 0.25,
            tau: 0.1,
            delta: 0.01,
            k: 2,
            s: 2,
            d: 4,
            rho: 1.5,
            variant: UnstableVariant::TimeVarying,
            index: 1,
            sign: 1,
            g_eps: 0.25,
            g_seed: 1,
            function_file: None,
            eps0: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n: usize,
    pub horizon: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { n: 1024, horizon: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Expert,
    Zero,
    RandomNoise,
    /// Least squares near the origin plus local regression on the patch; stable instances only.
    Bc,
    Mlp,
    ToyDiffusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionMode {
    LeastNorm,
    AssumeIndex,
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    pub completion: CompletionMode,
    pub chunk_len: usize,
    pub hidden: Vec<usize>,
    pub iterations: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub diffusion_iterations: usize,
    pub noise_variance: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            kind: LearnerKind::Bc,
            completion: CompletionMode::LeastNorm,
            chunk_len: 1,
            hidden: vec![16, 16, 16],
            iterations: 3000,
            lr: 1e-3,
            weight_decay: 1e-3,
            batch_size: 512,
            diffusion_iterations: 2000,
            noise_variance: 1.0 / 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub m: usize,
    pub delta: f64,
    pub noise_samples: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { m: 1000, delta: 0.1, noise_samples: 16 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

/// Everything a run depends on. Sub-seeds for data, training and evaluation derive from `seed`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub instance: InstanceConfig,
    pub data: DataConfig,
    pub learner: LearnerConfig,
    pub eval: EvalSettings,
    pub output: OutputConfig,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl BenchConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path).map_err(|e| match e {
            CliError::Json { path, source } => invalid(format!("{}: {source}", path.display())),
            other => other,
        })
    }

    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, 1)
    }

    pub fn train_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }

    pub fn eval_seed(&self) -> u64 {
        derive_seed(self.seed, 3)
    }

    /// `--out`, then the environment variable, then the config file, then `./ilbench-out`.
    pub fn output_root(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
            .or_else(|| self.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
    }

    pub fn pair_index(&self) -> PairIndex {
        if self.instance.index == 2 {
            PairIndex::Second
        } else {
            PairIndex::First
        }
    }

    pub fn completion(&self) -> Completion {
        match self.learner.completion {
            CompletionMode::LeastNorm => Completion::LeastNorm,
            CompletionMode::AssumeIndex => Completion::AssumeIndex(self.pair_index()),
            CompletionMode::Adversarial => Completion::Adversarial { truth: self.pair_index() },
        }
    }

    pub fn eval_config(&self, horizon: usize) -> EvalConfig {
        EvalConfig { horizon, m: self.eval.m, noise_samples: self.eval.noise_samples, delta: self.eval.delta, seed: self.eval_seed() }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            lr: self.learner.lr,
            weight_decay: self.learner.weight_decay,
            iterations: self.learner.iterations,
            batch_size: self.learner.batch_size,
            ..Default::default()
        }
    }

    pub fn mlp(&self) -> MlpConfig {
        MlpConfig { hidden: self.learner.hidden.clone(), chunk_len: self.learner.chunk_len, ..Default::default() }
    }

    pub fn diffusion(&self) -> DiffusionConfig {
        let base = DiffusionConfig::default();
        DiffusionConfig {
            chunk_len: self.learner.chunk_len,
            opt: OptimizerConfig { iterations: self.learner.diffusion_iterations, ..base.opt },
            ..base
        }
    }

    /// Checks every precondition the run relies on, including building the instance.
    pub fn validate(&self) -> Result<()> {
        let i = &self.instance;
        if self.data.horizon == 0 {
            return Err(invalid("data.horizon must be at least 1"));
        }
        if self.eval.m == 0 || self.eval.noise_samples == 0 {
            return Err(invalid("eval.m and eval.noise_samples must be at least 1"));
        }
        if !(self.eval.delta > 0.0 && self.eval.delta < 1.0) {
            return Err(invalid(format!("eval.delta must lie in (0,1), got {}", self.eval.delta)));
        }
        if self.learner.chunk_len == 0 || self.learner.iterations == 0 || self.learner.batch_size == 0 {
            return Err(invalid("learner.chunk_len, iterations and batch_size must be at least 1"));
        }
        if !(self.learner.noise_variance >= 0.0) {
            return Err(invalid("learner.noise_variance must be nonnegative"));
        }
        if i.index != 1 && i.index != 2 {
            return Err(invalid(format!("instance.index must be 1 or 2, got {}", i.index)));
        }
        if i.sign != 1 && i.sign != -1 {
            return Err(invalid(format!("instance.sign must be +1 or -1, got {}", i.sign)));
        }
        if i.construction == Construction::Stable {
            if i.d != i.k + 2 {
                return Err(invalid(format!("stable construction needs d = k + 2, got d = {} and k = {}", i.d, i.k)));
            }
            challenging_pair(i.mu).map_err(|e| invalid(e.to_string()))?;
        }
        if self.learner.kind == LearnerKind::Bc && i.construction != Construction::Stable {
            return Err(invalid("learner `bc` needs the stable construction"));
        }
        self.build_instance().map(|_| ())
    }

    fn hidden_function(&self) -> Result<SmoothFunction> {
        let i = &self.instance;
        let g = match &i.function_file {
            Some(path) => read_json::<SmoothFunction>(path)?,
            None => sample_hard_function(i.k, i.s, i.g_eps, &mut seeded(i.g_seed)).map_err(|e| invalid(e.to_string()))?,
        };
        if g.k != i.k {
            return Err(invalid(format!("hidden function has k = {} but the instance expects k = {}", g.k, i.k)));
        }
        Ok(g)
    }

    pub fn build_instance(&self) -> Result<AnyInstance> {
        let i = &self.instance;
        let sign = if i.sign < 0 { Sign::Minus } else { Sign::Plus };
        let built = match i.construction {
            Construction::Stable => {
                let params = StableParams { mu: i.mu, tau: i.tau, delta: i.delta, ..Default::default() };
                AnyInstance::Stable(make_stable_instance(self.hidden_function()?, self.pair_index(), sign, params).map_err(|e| invalid(e.to_string()))?)
            }
            Construction::Unstable => {
                let params = UnstableParams { rho: i.rho, d: i.d, variant: i.variant, ..Default::default() };
                AnyInstance::Unstable(make_unstable_instance(self.hidden_function()?, params).map_err(|e| invalid(e.to_string()))?)
            }
            Construction::Gambler => {
                if !(i.rho > 1.0) {
                    return Err(invalid(format!("instance.rho must exceed 1, got {}", i.rho)));
                }
                AnyInstance::Gambler(GamblerSystem { rho: i.rho, xi: sign, eps0: i.eps0 })
            }
        };
        Ok(built)
    }
}
