//! `gen`, `train` and `eval`: single runs whose outputs embed their config.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ilbench_core::instances::{AnyInstance, Instance};
use ilbench_core::simkit::{evaluate, sample_dataset, Dataset, RiskReport};
use serde::{Deserialize, Serialize};

use crate::config::BenchConfig;
use crate::error::{CliError, Result};
use crate::io::{read_json, write_json, write_text};
use crate::learners::{trace_csv, train, PolicyCheckpoint};
use crate::rows::{self, Row, OK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub config: BenchConfig,
    pub instance: AnyInstance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub config: BenchConfig,
    pub dataset: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub config: BenchConfig,
    pub policy: PolicyCheckpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: BenchConfig,
    pub policy_kind: String,
    pub instance_id: String,
    pub n: usize,
    pub report: RiskReport,
}

pub fn load_instance(path: &Path) -> Result<AnyInstance> {
    let mut file: InstanceFile = read_json(path)?;
    if let AnyInstance::Unstable(u) = &mut file.instance {
        u.materialize();
    }
    Ok(file.instance)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    Ok(read_json::<DatasetFile>(path)?.dataset)
}

pub fn load_policy(path: &Path) -> Result<PolicyCheckpoint> {
    Ok(read_json::<PolicyFile>(path)?.policy)
}

pub struct GenOutput {
    pub instance: PathBuf,
    pub dataset: PathBuf,
}

/// Writes `config.json`, `instance.json` and `dataset.json` under `out`.
pub fn cmd_gen(cfg: &BenchConfig, out: &Path) -> Result<GenOutput> {
    cfg.validate()?;
    let instance = cfg.build_instance()?;
    let dataset = sample_dataset(&instance, cfg.data.n, cfg.data.horizon, cfg.data_seed());
    let paths = GenOutput { instance: out.join("instance.json"), dataset: out.join("dataset.json") };
    write_json(&out.join("config.json"), cfg)?;
    write_json(&paths.instance, &InstanceFile { config: cfg.clone(), instance })?;
    write_json(&paths.dataset, &DatasetFile { config: cfg.clone(), dataset })?;
    Ok(paths)
}

fn dataset_for(cfg: &BenchConfig, inst: &AnyInstance, path: Option<&Path>) -> Result<Option<Dataset>> {
    if !PolicyCheckpoint::needs_data(cfg.learner.kind) {
        return Ok(None);
    }
    match path {
        Some(p) => load_dataset(p).map(Some),
        None => Ok(Some(sample_dataset(inst, cfg.data.n, cfg.data.horizon, cfg.data_seed()))),
    }
}

/// Fits the configured learner; writes `policy.json` and `trace.csv`.
pub fn cmd_train(cfg: &BenchConfig, dataset: Option<&Path>, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let inst = cfg.build_instance()?;
    let data = dataset_for(cfg, &inst, dataset)?;
    let trained = train(cfg, &inst, data.as_ref())?;
    let path = out.join("policy.json");
    write_json(&path, &PolicyFile { config: cfg.clone(), policy: trained.checkpoint })?;
    write_text(&out.join("trace.csv"), &trace_csv(&trained.trace)?)?;
    Ok(path)
}

#[derive(Debug, Clone, Default)]
pub struct EvalInputs {
    pub instance: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub policy: Option<PathBuf>,
}

pub fn report_rows(file: &ReportFile) -> Vec<Row> {
    let r = &file.report;
    let status = if r.blowups == 0 { OK.to_string() } else { format!("blowup:{}", r.blowups) };
    let row = |metric: &str, value: f64, stderr: f64| Row {
        instance_id: file.instance_id.clone(),
        policy_kind: file.policy_kind.clone(),
        n: file.n,
        horizon: r.horizon,
        metric: metric.into(),
        value,
        stderr,
        seed: file.config.seed,
        status: status.clone(),
    };
    vec![
        row("expert_l2", r.expert_l2.value, r.expert_l2.stderr),
        row("cost_risk", r.cost_risk.value, r.cost_risk.stderr),
        row("expert_cost", r.expert_cost, 0.0),
        row("traj_l1", r.traj_l1.value, r.traj_l1.stderr),
        row(&format!("quantile_{}", r.quantile.0), r.quantile.1, 0.0),
    ]
}

/// Evaluates a policy file, or the configured learner trained on the given or generated data.
pub fn cmd_eval(cfg: &BenchConfig, inputs: &EvalInputs, out: &Path) -> Result<ReportFile> {
    cfg.validate()?;
    for p in [&inputs.instance, &inputs.dataset, &inputs.policy].into_iter().flatten() {
        if !p.is_file() {
            return Err(CliError::File { path: p.clone(), source: std::io::Error::from(std::io::ErrorKind::NotFound) });
        }
    }
    let inst = Arc::new(match &inputs.instance {
        Some(p) => load_instance(p)?,
        None => cfg.build_instance()?,
    });
    let checkpoint = match &inputs.policy {
        Some(p) => load_policy(p)?,
        None => {
            let data = dataset_for(cfg, &inst, inputs.dataset.as_deref())?;
            train(cfg, &inst, data.as_ref())?.checkpoint
        }
    };
    let policy_kind = checkpoint.label().to_string();
    let policy = checkpoint.into_policy(inst.clone());
    let report = evaluate(policy.as_ref(), inst.as_ref(), &cfg.eval_config(cfg.data.horizon));
    let file = ReportFile { config: cfg.clone(), policy_kind, instance_id: inst.id(), n: cfg.data.n, report };
    write_json(&out.join("report.json"), &file)?;
    write_text(&out.join("report.csv"), &rows::to_csv(&report_rows(&file))?)?;
    Ok(file)
}
