//! Preset sweeps: a deterministic grid of cells run on a worker pool, checkpointed per cell.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ilbench_core::funclass::{log_log_slope, rate_cell, Estimate, RateSweepConfig};
use ilbench_core::instances::{AnyInstance, GamblerSystem, InitState, Instance, Sign, UnstableVariant};
use ilbench_core::matkit::Vector;
use ilbench_core::policies::{
    gaussian_wrap, mlp_train, mlp_train_snapshots, toy_diffusion_train, ExpertPolicy, FnPolicy, GamblersRuinPolicy,
    MlpConfig, Policy, RandomNoisePolicy, TracePoint,
};
use ilbench_core::rng::{derive_seed, seeded};
use ilbench_core::simkit::{batch_init, evaluate, excursion_curve, rollout, rollout_seed, sample_dataset};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BenchConfig, Construction};
use crate::error::{CliError, Result};
use crate::io::{read_json, sha256_hex, to_json, write_json, write_text};
use crate::rows::{self, Row, OK};

/// Grids larger than this are rejected before any work starts.
pub const MAX_CELLS: usize = 10_000;

/// Horizons at which rollout cost is reported in the figure presets.
pub const FIGURE_HORIZONS: [usize; 7] = [2, 4, 8, 12, 20, 26, 32];
/// Initial conditions evaluated per training seed.
pub const INITS_PER_SEED: usize = 16;
pub const FIGURE1_SEEDS: u64 = 5;
pub const FIGURE2_SEEDS: u64 = 2;
pub const UNSTABLE_HORIZONS: [usize; 5] = [2, 4, 8, 12, 16];
pub const UNSTABLE_ROLLOUTS: usize = 200;
/// Action noise of the `noisy_expert` policy.
pub const NOISY_EXPERT_SIGMA: f64 = 0.05;
pub const RATE_SEEDS: u64 = 10;
pub const GAMBLER_SEEDS: u64 = 10;
pub const GAMBLER_RUNS: usize = 10_000;
pub const GAMBLER_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Figure1,
    Figure2,
    Rates,
    Unstable,
    Gambler,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Figure1 => "figure1",
            Preset::Figure2 => "figure2",
            Preset::Rates => "rates",
            Preset::Unstable => "unstable",
            Preset::Gambler => "gambler",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// MLP behavior cloning; with `chunk_len > 1` an action-chunking regressor.
    Bc,
    /// MLP behavior cloning, also scored at intermediate checkpoints.
    BcSnapshots,
    RandomNoise,
    ToyDiffusion,
    Expert,
    Zero,
    NoisyExpert,
    LocalPoly,
    GamblersRuin,
}

impl PolicyKind {
    fn name(self) -> &'static str {
        match self {
            PolicyKind::Bc => "bc",
            PolicyKind::BcSnapshots => "bc_snapshots",
            PolicyKind::RandomNoise => "random_noise",
            PolicyKind::ToyDiffusion => "toy_diffusion",
            PolicyKind::Expert => "expert",
            PolicyKind::Zero => "zero",
            PolicyKind::NoisyExpert => "noisy_expert",
            PolicyKind::LocalPoly => "local_poly",
            PolicyKind::GamblersRuin => "gamblers_ruin",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub chunk_len: usize,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind, chunk_len: usize) -> Self {
        PolicySpec { kind, chunk_len }
    }

    /// Name in the `policy_kind` column: chunked behavior cloning is `chunk4`, `chunk8`, ...
    pub fn label(&self) -> String {
        match (self.kind, self.chunk_len) {
            (PolicyKind::BcSnapshots, _) => "bc".into(),
            (PolicyKind::Bc, c) if c > 1 => format!("chunk{c}"),
            (kind, c) if c > 1 => format!("{}_chunk{c}", kind.name()),
            (kind, _) => kind.name().into(),
        }
    }
}

/// One unit of work: a single trained (or fixed) policy, evaluated at every horizon of the grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellKey {
    pub variant: Option<UnstableVariant>,
    pub policy: PolicySpec,
    pub n: usize,
    pub seed: u64,
}

impl CellKey {
    /// File-name-safe identifier, unique within a preset.
    pub fn slug(&self) -> String {
        let variant = match self.variant {
            Some(UnstableVariant::TimeVarying) => "tv-",
            Some(UnstableVariant::TimeInvariant) => "ti-",
            None => "",
        };
        format!("{variant}{}-c{}-n{}-s{}", self.policy.kind.name(), self.policy.chunk_len, self.n, self.seed)
    }
}

/// Axes of a sweep. Cells are the Cartesian product of variants, policies, `n` and seeds,
/// in that nesting order; horizons are evaluated inside each cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub preset: Preset,
    pub variants: Vec<Option<UnstableVariant>>,
    pub policies: Vec<PolicySpec>,
    pub n: Vec<usize>,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub max_cells: usize,
}

impl SweepGrid {
    pub fn for_preset(preset: Preset, cfg: &BenchConfig) -> Self {
        use PolicyKind::*;
        let spec = PolicySpec::new;
        let (variants, policies, n, horizons, seeds) = match preset {
            Preset::Figure1 => (
                vec![None],
                vec![spec(Bc, 1), spec(RandomNoise, 1), spec(ToyDiffusion, 1), spec(Bc, 4), spec(Bc, 8)],
                vec![cfg.data.n],
                FIGURE_HORIZONS.to_vec(),
                FIGURE1_SEEDS,
            ),
            Preset::Figure2 => (
                vec![None],
                vec![spec(BcSnapshots, 1), spec(RandomNoise, 1), spec(ToyDiffusion, 1), spec(ToyDiffusion, 4), spec(ToyDiffusion, 8)],
                vec![cfg.data.n],
                FIGURE_HORIZONS.to_vec(),
                FIGURE2_SEEDS,
            ),
            Preset::Rates => (vec![None], vec![spec(LocalPoly, 1)], (6..=12).map(|p| 1usize << p).collect(), vec![0], RATE_SEEDS),
            Preset::Unstable => (
                vec![Some(UnstableVariant::TimeVarying), Some(UnstableVariant::TimeInvariant)],
                vec![spec(Expert, 1), spec(Zero, 1), spec(NoisyExpert, 1)],
                vec![0],
                UNSTABLE_HORIZONS.to_vec(),
                1,
            ),
            Preset::Gambler => (vec![None], vec![spec(GamblersRuin, 1)], vec![0], (1..=GAMBLER_STEPS).collect(), GAMBLER_SEEDS),
        };
        SweepGrid { preset, variants, policies, n, horizons, seeds: (0..seeds).collect(), max_cells: MAX_CELLS }
    }

    pub fn cells(&self) -> Result<Vec<CellKey>> {
        let count = self.variants.len() * self.policies.len() * self.n.len() * self.seeds.len();
        if count > self.max_cells {
            return Err(CliError::Config(format!("grid has {count} cells, above the cap of {}", self.max_cells)));
        }
        let mut cells = Vec::with_capacity(count);
        for &variant in &self.variants {
            for &policy in &self.policies {
                for &n in &self.n {
                    for &seed in &self.seeds {
                        cells.push(CellKey { variant, policy, n, seed });
                    }
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    key: CellKey,
    fingerprint: String,
    /// Rows as CSV text, which unlike JSON carries NaN.
    rows: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRecord {
    pub slug: String,
    pub status: String,
    pub rows_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: BenchConfig,
    pub grid: SweepGrid,
    pub cells: Vec<CellRecord>,
    pub results_sha256: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub workers: usize,
    /// Slugs of cells to recompute even if a matching checkpoint exists.
    pub only: Vec<String>,
    /// Ignore every checkpoint.
    pub fresh: bool,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub results: PathBuf,
    pub manifest: PathBuf,
    pub rows: Vec<Row>,
    pub reused: usize,
    pub failed: Vec<String>,
}

fn fingerprint(cfg: &BenchConfig, grid: &SweepGrid, key: &CellKey) -> String {
    sha256_hex(to_json(&(cfg, grid, key)).as_bytes())
}

/// Runs every cell of `preset`, reusing checkpoints under `<root>/<preset>/cells`.
/// Failed cells are recorded with an `error:` status and the sweep continues.
pub fn run_sweep(cfg: &BenchConfig, preset: Preset, root: &Path, opts: &SweepOptions) -> Result<SweepOutcome> {
    cfg.validate()?;
    let grid = SweepGrid::for_preset(preset, cfg);
    let cells = grid.cells()?;
    if let Some(bad) = opts.only.iter().find(|s| !cells.iter().any(|c| &c.slug() == *s)) {
        return Err(CliError::Config(format!("no cell `{bad}` in preset {}", preset.name())));
    }
    let ctx = SweepContext::new(cfg, &grid)?;
    let dir = root.join(preset.name());
    let cell_dir = dir.join("cells");
    fs::create_dir_all(&cell_dir).map_err(CliError::file(&cell_dir))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;
    let results: Vec<(Vec<Row>, bool, std::result::Result<(), String>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|key| {
                let path = cell_dir.join(format!("{}.json", key.slug()));
                let fp = fingerprint(cfg, &grid, key);
                let forced = opts.fresh || opts.only.contains(&key.slug());
                if !forced {
                    if let Ok(ck) = read_json::<Checkpoint>(&path) {
                        if ck.fingerprint == fp && ck.key == *key {
                            if let Ok(rows) = rows::from_csv(&ck.rows) {
                                return (rows, true, Ok(()));
                            }
                        }
                    }
                }
                match ctx.run_cell(key).and_then(|rows| save_checkpoint(&path, key, fp, &rows).map(|_| rows)) {
                    Ok(rows) => (rows, false, Ok(())),
                    Err(e) => (vec![ctx.error_row(key, &e.to_string())], false, Err(e.to_string())),
                }
            })
            .collect()
    });

    let mut all = Vec::new();
    let mut records = Vec::new();
    let mut failed = Vec::new();
    let mut reused = 0;
    for (key, (rows, was_reused, status)) in cells.iter().zip(results) {
        reused += usize::from(was_reused);
        let text = rows::to_csv(&rows)?;
        let status = match status {
            Ok(()) => OK.to_string(),
            Err(e) => {
                failed.push(key.slug());
                format!("error: {e}")
            }
        };
        records.push(CellRecord { slug: key.slug(), status, rows_sha256: sha256_hex(text.as_bytes()) });
        all.extend(rows);
    }
    let aggregates = ctx.aggregate(&all);
    all.extend(aggregates);
    let text = rows::to_csv(&all)?;
    let results = dir.join("results.csv");
    write_text(&results, &text)?;
    let manifest = dir.join("manifest.json");
    write_json(&manifest, &Manifest { config: cfg.clone(), grid, cells: records, results_sha256: sha256_hex(text.as_bytes()) })?;
    Ok(SweepOutcome { dir, results, manifest, rows: all, reused, failed })
}

fn save_checkpoint(path: &Path, key: &CellKey, fingerprint: String, rows: &[Row]) -> Result<()> {
    let ck = Checkpoint { key: key.clone(), fingerprint, rows: rows::to_csv(rows)? };
    // write then rename so an interrupted run never leaves a truncated checkpoint
    let tmp = path.with_extension("json.tmp");
    write_json(&tmp, &ck)?;
    fs::rename(&tmp, path).map_err(CliError::file(path))
}

struct SweepContext<'a> {
    cfg: &'a BenchConfig,
    grid: &'a SweepGrid,
    /// Instance shared by every cell without a variant.
    base: Option<Arc<AnyInstance>>,
}

fn status_for(blowups: usize) -> String {
    if blowups == 0 {
        OK.into()
    } else {
        format!("blowup:{blowups}")
    }
}

fn val_loss_at(trace: &[TracePoint], iteration: usize) -> f64 {
    trace.iter().find(|p| p.iteration == iteration).map_or(f64::NAN, |p| p.val_loss)
}

impl<'a> SweepContext<'a> {
    fn new(cfg: &'a BenchConfig, grid: &'a SweepGrid) -> Result<Self> {
        let base = match grid.preset {
            Preset::Figure1 | Preset::Figure2 => {
                let inst = cfg.build_instance()?;
                if inst.as_stable().is_none() {
                    return Err(CliError::Config(format!("preset {} needs the stable construction", grid.preset.name())));
                }
                Some(Arc::new(inst))
            }
            _ => None,
        };
        Ok(SweepContext { cfg, grid, base })
    }

    fn instance_for(&self, key: &CellKey) -> Result<Arc<AnyInstance>> {
        if let Some(inst) = &self.base {
            return Ok(inst.clone());
        }
        let mut cfg = self.cfg.clone();
        match (self.grid.preset, key.variant) {
            (Preset::Unstable, Some(variant)) => {
                cfg.instance.construction = Construction::Unstable;
                cfg.instance.variant = variant;
            }
            (Preset::Gambler, _) => cfg.instance.construction = Construction::Gambler,
            _ => return Err(CliError::Runtime(format!("cell {} has no instance", key.slug()))),
        }
        Ok(Arc::new(cfg.build_instance()?))
    }

    fn instance_id(&self, key: &CellKey) -> String {
        match self.grid.preset {
            Preset::Rates => format!("regression-k{}-s{}", self.cfg.instance.k, self.cfg.instance.s),
            _ => self.instance_for(key).map(|i| i.id()).unwrap_or_else(|_| "unknown".into()),
        }
    }

    fn error_row(&self, key: &CellKey, msg: &str) -> Row {
        Row {
            instance_id: self.instance_id(key),
            policy_kind: key.policy.label(),
            n: key.n,
            horizon: 0,
            metric: "cell".into(),
            value: f64::NAN,
            stderr: f64::NAN,
            seed: key.seed,
            status: format!("error: {msg}"),
        }
    }

    fn run_cell(&self, key: &CellKey) -> Result<Vec<Row>> {
        match self.grid.preset {
            Preset::Figure1 | Preset::Figure2 => self.figure_cell(key),
            Preset::Rates => self.rate_cell(key),
            Preset::Unstable => self.unstable_cell(key),
            Preset::Gambler => self.gambler_cell(key),
        }
    }

    fn figure_cell(&self, key: &CellKey) -> Result<Vec<Row>> {
        let inst = self.instance_for(key)?;
        let cfg = self.cfg;
        let j = key.seed;
        let h_max = *self.grid.horizons.iter().max().unwrap_or(&1);
        let inits: Vec<InitState> =
            (0..INITS_PER_SEED).map(|i| batch_init(inst.as_ref(), derive_seed(cfg.seed, 100 + j), i)).collect();
        let rollout_base = derive_seed(cfg.seed, 200 + j);
        let mut rng = seeded(derive_seed(cfg.train_seed(), j));
        let label = key.policy.label();
        let row = |policy_kind: &str, horizon: usize, metric: &str, est: Estimate, status: &str| Row {
            instance_id: inst.id(),
            policy_kind: policy_kind.into(),
            n: key.n,
            horizon,
            metric: metric.into(),
            value: est.value,
            stderr: est.stderr,
            seed: j,
            status: status.into(),
        };
        let exact = |value: f64| Estimate { value, stderr: 0.0 };
        let mut rows = Vec::new();
        let excursion_rows = |rows: &mut Vec<Row>, policy: &dyn Policy, policy_kind: &str, horizons: &[usize]| {
            let curve = excursion_curve(policy, inst.as_ref(), &inits, h_max, rollout_base);
            let status = status_for(curve.blowups);
            for &h in horizons {
                rows.push(row(policy_kind, h, "e1_excursion", curve.mean[h - 1], &status));
            }
        };
        let data = || sample_dataset(inst.as_ref(), key.n, cfg.data.horizon, cfg.data_seed());
        let arch = MlpConfig { chunk_len: key.policy.chunk_len, ..cfg.mlp() };
        let horizons = self.grid.horizons.clone();
        match key.policy.kind {
            PolicyKind::Bc => {
                let out = mlp_train(&data(), &arch, &cfg.optimizer(), &mut rng)?;
                excursion_rows(&mut rows, &out.policy, &label, &horizons);
                let last = out.trace.last().map_or(f64::NAN, |p| p.val_loss);
                rows.push(row(&label, h_max, "val_loss_initial", exact(val_loss_at(&out.trace, 0)), OK));
                rows.push(row(&label, h_max, "val_loss_final", exact(last), OK));
            }
            PolicyKind::BcSnapshots => {
                let opt = cfg.optimizer();
                let every = opt.eval_every.max(1);
                let mut at: Vec<usize> = (0..=opt.iterations).step_by(every).collect();
                if at.last() != Some(&opt.iterations) {
                    at.push(opt.iterations);
                }
                let (out, snaps) = mlp_train_snapshots(&data(), &arch, &opt, &at, &mut rng)?;
                for (it, policy) in &snaps {
                    let name = format!("bc@{it}");
                    rows.push(row(&name, h_max, "val_loss", exact(val_loss_at(&out.trace, *it)), OK));
                    excursion_rows(&mut rows, policy, &name, &[h_max]);
                }
                excursion_rows(&mut rows, &out.policy, &label, &horizons);
            }
            PolicyKind::RandomNoise => {
                let policy = RandomNoisePolicy { d: inst.input_dim(), variance: cfg.learner.noise_variance };
                excursion_rows(&mut rows, &policy, &label, &horizons);
            }
            PolicyKind::ToyDiffusion => {
                let dcfg = ilbench_core::policies::DiffusionConfig { chunk_len: key.policy.chunk_len, ..cfg.diffusion() };
                let policy = toy_diffusion_train(&data(), &dcfg, &mut rng)?;
                excursion_rows(&mut rows, &policy, &label, &horizons);
            }
            other => return Err(CliError::Runtime(format!("policy {} is not part of the figure presets", other.name()))),
        }
        Ok(rows)
    }

    fn rate_cell(&self, key: &CellKey) -> Result<Vec<Row>> {
        let rc = RateSweepConfig::new(self.cfg.instance.k, self.cfg.instance.s, self.grid.n.clone(), self.grid.seeds.len());
        let mut rng = seeded(derive_seed(derive_seed(self.cfg.seed, 400 + key.seed), key.n as u64));
        let risk = rate_cell(&rc, key.n, &mut rng)?;
        Ok(vec![Row {
            instance_id: self.instance_id(key),
            policy_kind: key.policy.label(),
            n: key.n,
            horizon: 0,
            metric: "l2_risk".into(),
            value: risk,
            stderr: 0.0,
            seed: key.seed,
            status: OK.into(),
        }])
    }

    fn unstable_cell(&self, key: &CellKey) -> Result<Vec<Row>> {
        let inst = self.instance_for(key)?;
        let policy: Arc<dyn Policy> = match key.policy.kind {
            PolicyKind::Expert => Arc::new(ExpertPolicy::new(inst.clone())),
            PolicyKind::Zero => Arc::new(FnPolicy::zero(inst.input_dim())),
            PolicyKind::NoisyExpert => Arc::new(gaussian_wrap(Arc::new(ExpertPolicy::new(inst.clone())), NOISY_EXPERT_SIGMA)?),
            other => return Err(CliError::Runtime(format!("policy {} is not part of the unstable preset", other.name()))),
        };
        let mut rows = Vec::new();
        for &h in &self.grid.horizons {
            let mut ec = self.cfg.eval_config(h);
            ec.m = UNSTABLE_ROLLOUTS;
            ec.seed = derive_seed(ec.seed, key.seed);
            let r = evaluate(policy.as_ref(), inst.as_ref(), &ec);
            let status = status_for(r.blowups);
            for (metric, est) in [("expert_l2", r.expert_l2), ("cost_risk", r.cost_risk), ("traj_l1", r.traj_l1)] {
                rows.push(Row {
                    instance_id: inst.id(),
                    policy_kind: key.policy.label(),
                    n: key.n,
                    horizon: h,
                    metric: metric.into(),
                    value: est.value,
                    stderr: est.stderr,
                    seed: key.seed,
                    status: status.clone(),
                });
            }
        }
        Ok(rows)
    }

    fn gambler_cell(&self, key: &CellKey) -> Result<Vec<Row>> {
        let inst = self.instance_for(key)?;
        let AnyInstance::Gambler(sys) = inst.as_ref() else {
            return Err(CliError::Runtime("gambler preset built a different instance".into()));
        };
        let policy = GamblersRuinPolicy { rho: sys.rho };
        let init = InitState::point(Vector::from_element(1, sys.eps0));
        let base = derive_seed(self.cfg.seed, 300 + key.seed);
        let steps = GAMBLER_STEPS;
        let mut samples = vec![[Vec::with_capacity(GAMBLER_RUNS), Vec::with_capacity(GAMBLER_RUNS), Vec::with_capacity(GAMBLER_RUNS)]; steps];
        for run in 0..GAMBLER_RUNS {
            let traj = rollout(&policy, sys, &init, steps, rollout_seed(base, run));
            for (t, s) in samples.iter_mut().enumerate() {
                let x = traj.state(t + 2)[0].abs();
                s[0].push(f64::from(u8::from(x != 0.0)));
                s[1].push(x.min(1.0));
                s[2].push(x);
            }
        }
        let mut rows = Vec::new();
        for (t, s) in samples.iter().enumerate() {
            for (metric, xs) in ["survival", "clipped_error", "mean_abs"].into_iter().zip(s) {
                let est = Estimate::from_samples(xs);
                rows.push(Row {
                    instance_id: inst.id(),
                    policy_kind: key.policy.label(),
                    n: key.n,
                    horizon: t + 1,
                    metric: metric.into(),
                    value: est.value,
                    stderr: est.stderr,
                    seed: key.seed,
                    status: OK.into(),
                });
            }
        }
        Ok(rows)
    }

    /// Means across seeds, plus preset-specific summaries.
    fn aggregate(&self, rows: &[Row]) -> Vec<Row> {
        type Group = (String, String, usize, usize, String);
        let mut order: Vec<Group> = Vec::new();
        let mut groups: HashMap<Group, Vec<f64>> = HashMap::new();
        for r in rows.iter().filter(|r| !r.status.starts_with("error")) {
            let g = (r.instance_id.clone(), r.policy_kind.clone(), r.n, r.horizon, r.metric.clone());
            if !groups.contains_key(&g) {
                order.push(g.clone());
            }
            groups.entry(g).or_default().push(r.value);
        }
        let mut out: Vec<Row> = order
            .into_iter()
            .map(|g| {
                let est = Estimate::from_samples(&groups[&g]);
                Row {
                    instance_id: g.0,
                    policy_kind: g.1,
                    n: g.2,
                    horizon: g.3,
                    metric: format!("{}_mean", g.4),
                    value: est.value,
                    stderr: est.stderr,
                    seed: self.cfg.seed,
                    status: OK.into(),
                }
            })
            .collect();
        match self.grid.preset {
            Preset::Rates => out.extend(self.rate_slope(rows)),
            Preset::Gambler => out.extend(self.gambler_theory(rows)),
            _ => {}
        }
        out
    }

    /// Mean over seeds of the per-seed log-log slope of risk against `n`.
    fn rate_slope(&self, rows: &[Row]) -> Option<Row> {
        let xs: Vec<f64> = self.grid.n.iter().map(|&n| n as f64).collect();
        let slopes: Option<Vec<f64>> = self
            .grid
            .seeds
            .iter()
            .map(|&seed| {
                let ys: Option<Vec<f64>> = self
                    .grid
                    .n
                    .iter()
                    .map(|&n| rows.iter().find(|r| r.seed == seed && r.n == n && r.status == OK).map(|r| r.value))
                    .collect();
                ys.map(|ys| log_log_slope(&xs, &ys))
            })
            .collect();
        let est = Estimate::from_samples(&slopes?);
        let first = rows.first()?;
        Some(Row { n: 0, horizon: 0, metric: "slope".into(), value: est.value, stderr: est.stderr, seed: self.cfg.seed, ..first.clone() })
    }

    fn gambler_theory(&self, rows: &[Row]) -> Vec<Row> {
        let Some(first) = rows.first() else { return Vec::new() };
        let sys = GamblerSystem { rho: self.cfg.instance.rho, xi: Sign::Plus, eps0: self.cfg.instance.eps0 };
        let mut out = Vec::new();
        for t in 1..=GAMBLER_STEPS {
            let alive = 0.5f64.powi(t as i32);
            let grown = (2.0 * sys.rho).powi(t as i32) * sys.eps0;
            for (metric, value) in [("survival", alive), ("clipped_error", alive * grown.min(1.0)), ("mean_abs", alive * grown)] {
                out.push(Row {
                    policy_kind: "theory".into(),
                    n: 0,
                    horizon: t,
                    metric: metric.into(),
                    value,
                    stderr: 0.0,
                    seed: self.cfg.seed,
                    status: OK.into(),
                    ..first.clone()
                });
            }
        }
        out
    }
}
