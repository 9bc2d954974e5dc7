use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{History, Policy, PolicyKind};
use crate::error::{Error, Result};
use crate::matkit::Vector;
use crate::simkit::Dataset;

/// Fully connected tanh network with a linear output layer, parameters stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyNet {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl TinyNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        TinyNet { sizes: sizes.to_vec(), params }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Activations of every layer, input first; hidden layers are post-tanh.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let prev = &acts[l];
            let mut out: Vec<f64> = (0..fan_out)
                .map(|o| b[o] + w[o * fan_in..(o + 1) * fan_in].iter().zip(prev).map(|(a, v)| a * v).sum::<f64>())
                .collect();
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
            offset += fan_in * fan_out + fan_out;
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).pop().unwrap()
    }

    /// Adds the gradient of `scale·‖f(x) − target‖²` to `grad`; returns the squared error.
    pub fn accumulate_gradient(&self, x: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let acts = self.activations(x);
        let layers = self.sizes.len() - 1;
        let out = &acts[layers];
        let mut delta: Vec<f64> = out.iter().zip(target).map(|(y, t)| 2.0 * scale * (y - t)).collect();
        let err: f64 = out.iter().zip(target).map(|(y, t)| (y - t) * (y - t)).sum();
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let o = offsets[l];
            let prev = &acts[l];
            for r in 0..fan_out {
                let dr = delta[r];
                if dr != 0.0 {
                    let row = &mut grad[o + r * fan_in..o + (r + 1) * fan_in];
                    row.iter_mut().zip(prev).for_each(|(g, p)| *g += dr * p);
                }
                grad[o + fan_in * fan_out + r] += dr;
            }
            if l > 0 {
                let w = &self.params[o..o + fan_in * fan_out];
                let mut next = vec![0.0; fan_in];
                for r in 0..fan_out {
                    let dr = delta[r];
                    for (c, n) in next.iter_mut().enumerate() {
                        *n += w[r * fan_in + c] * dr;
                    }
                }
                // prev is a tanh output: d tanh = 1 − tanh²
                for (n, p) in next.iter_mut().zip(prev) {
                    *n *= 1.0 - p * p;
                }
                delta = next;
            }
        }
        err
    }

    /// Mean over samples of the per-output mean squared error.
    pub fn loss(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
        let out = self.output_dim() as f64;
        let total: f64 = inputs
            .iter()
            .zip(targets)
            .map(|(x, t)| self.forward(x).iter().zip(t).map(|(y, v)| (y - v) * (y - v)).sum::<f64>())
            .sum();
        total / (inputs.len() as f64 * out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Validation loss is recorded every this many iterations (and at the ends).
    pub eval_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-3,
            weight_decay: 1e-3,
            iterations: 10_000,
            batch_size: 512,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            eval_every: 500,
        }
    }
}

/// Adam with decoupled weight decay and a cosine learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    cfg: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl AdamW {
    pub fn new(cfg: OptimizerConfig, num_params: usize) -> Self {
        AdamW { cfg, m: vec![0.0; num_params], v: vec![0.0; num_params], step: 0 }
    }

    pub fn learning_rate(&self, iteration: usize) -> f64 {
        let frac = iteration as f64 / self.cfg.iterations.max(1) as f64;
        0.5 * self.cfg.lr * (1.0 + (std::f64::consts::PI * frac.min(1.0)).cos())
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.learning_rate(self.step);
        self.step += 1;
        let OptimizerConfig { beta1, beta2, eps, weight_decay, .. } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * (mhat / (vhat.sqrt() + eps) + weight_decay * params[i]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    /// Actions predicted per query; 1 for plain behavior cloning.
    pub chunk_len: usize,
    pub val_fraction: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden: vec![16, 16, 16], chunk_len: 1, val_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub struct TrainOutcome<P> {
    pub policy: P,
    pub trace: Vec<TracePoint>,
}

/// Inputs `x_t` and targets `(u_t, …, u_{t+ℓ−1})` for every full chunk in the dataset.
pub fn chunk_targets(dataset: &Dataset, chunk_len: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for traj in &dataset.trajectories {
        let h = traj.inputs.len();
        for t in 0..(h + 1).saturating_sub(chunk_len) {
            inputs.push(traj.states[t].as_slice().to_vec());
            targets.push(traj.inputs[t..t + chunk_len].iter().flat_map(|u| u.iter().cloned()).collect());
        }
    }
    (inputs, targets)
}

/// Supervised regression of targets on inputs; returns the network and its loss trace.
pub fn mlp_train_pairs<R: Rng + ?Sized>(
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    hidden: &[usize],
    val_fraction: f64,
    opt: &OptimizerConfig,
    rng: &mut R,
) -> Result<(TinyNet, Vec<TracePoint>)> {
    fit_with_snapshots(inputs, targets, hidden, val_fraction, opt, &[], rng).map(|(net, trace, _)| (net, trace))
}

type Fitted = (TinyNet, Vec<TracePoint>, Vec<(usize, TinyNet)>);

/// Training loop that also keeps copies of the network after the listed iteration counts.
fn fit_with_snapshots<R: Rng + ?Sized>(
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    hidden: &[usize],
    val_fraction: f64,
    opt: &OptimizerConfig,
    snapshot_at: &[usize],
    rng: &mut R,
) -> Result<Fitted> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = inputs.len();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1)).min(4096);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_x: Vec<Vec<f64>> = val_idx.iter().map(|&i| inputs[i].clone()).collect();
    let val_y: Vec<Vec<f64>> = val_idx.iter().map(|&i| targets[i].clone()).collect();

    let mut sizes = vec![inputs[0].len()];
    sizes.extend_from_slice(hidden);
    sizes.push(targets[0].len());
    let mut net = TinyNet::new(&sizes, rng);
    let mut adam = AdamW::new(*opt, net.num_params());
    let mut grad = vec![0.0; net.num_params()];
    let mut trace = Vec::new();
    let mut snapshots = Vec::new();
    if snapshot_at.contains(&0) {
        snapshots.push((0, net.clone()));
    }
    let out_dim = targets[0].len() as f64;
    let batch = opt.batch_size.max(1);
    let scale = 1.0 / (batch as f64 * out_dim);
    let eval = |net: &TinyNet| if val_x.is_empty() { f64::NAN } else { net.loss(&val_x, &val_y) };
    trace.push(TracePoint { iteration: 0, train_loss: f64::NAN, val_loss: eval(&net) });
    for it in 0..opt.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut err = 0.0;
        for _ in 0..batch {
            let i = train_idx[rng.random_range(0..train_idx.len())];
            err += net.accumulate_gradient(&inputs[i], &targets[i], scale, &mut grad);
        }
        let train_loss = err * scale;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { iteration: it });
        }
        adam.update(&mut net.params, &grad);
        let done = it + 1;
        if snapshot_at.contains(&done) {
            snapshots.push((done, net.clone()));
        }
        if done % opt.eval_every.max(1) == 0 || done == opt.iterations {
            let val_loss = eval(&net);
            if !val_loss.is_finite() && !val_x.is_empty() {
                return Err(Error::Diverged { iteration: it });
            }
            trace.push(TracePoint { iteration: done, train_loss, val_loss });
        }
    }
    Ok((net, trace, snapshots))
}

pub fn mlp_train<R: Rng + ?Sized>(
    dataset: &Dataset,
    arch: &MlpConfig,
    opt: &OptimizerConfig,
    rng: &mut R,
) -> Result<TrainOutcome<MlpPolicy>> {
    let (inputs, targets) = chunk_targets(dataset, arch.chunk_len.max(1));
    let (net, trace) = mlp_train_pairs(&inputs, &targets, &arch.hidden, arch.val_fraction, opt, rng)?;
    let action_dim = net.output_dim() / arch.chunk_len.max(1);
    Ok(TrainOutcome { policy: MlpPolicy { net, chunk_len: arch.chunk_len.max(1), action_dim }, trace })
}

/// Like [`mlp_train`], also returning the policy after each iteration count in `snapshot_at`.
pub fn mlp_train_snapshots<R: Rng + ?Sized>(
    dataset: &Dataset,
    arch: &MlpConfig,
    opt: &OptimizerConfig,
    snapshot_at: &[usize],
    rng: &mut R,
) -> Result<(TrainOutcome<MlpPolicy>, Vec<(usize, MlpPolicy)>)> {
    let chunk_len = arch.chunk_len.max(1);
    let (inputs, targets) = chunk_targets(dataset, chunk_len);
    let (net, trace, snaps) = fit_with_snapshots(&inputs, &targets, &arch.hidden, arch.val_fraction, opt, snapshot_at, rng)?;
    let action_dim = net.output_dim() / chunk_len;
    let wrap = |net| MlpPolicy { net, chunk_len, action_dim };
    let snaps = snaps.into_iter().map(|(it, net)| (it, wrap(net))).collect();
    Ok((TrainOutcome { policy: wrap(net), trace }, snaps))
}

/// Network policy; with `chunk_len > 1` it predicts a block of actions per query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpPolicy {
    pub net: TinyNet,
    pub chunk_len: usize,
    pub action_dim: usize,
}

impl MlpPolicy {
    pub fn predict_chunk(&self, x: &Vector) -> Vec<Vector> {
        let out = self.net.forward(x.as_slice());
        out.chunks(self.action_dim).map(|c| Vector::from_column_slice(c)).collect()
    }
}

impl Policy for MlpPolicy {
    fn kind(&self) -> PolicyKind {
        if self.chunk_len > 1 {
            PolicyKind::Chunked
        } else {
            PolicyKind::Mlp
        }
    }

    fn act(&self, history: &History, _rng: &mut dyn RngCore) -> Vector {
        self.predict_chunk(history.current()).swap_remove(0)
    }

    fn chunk_len(&self) -> usize {
        self.chunk_len
    }

    fn plan(&self, history: &History, _rng: &mut dyn RngCore) -> Vec<Vector> {
        self.predict_chunk(history.current())
    }

    fn mean_action(&self, x: &Vector, _t: usize) -> Option<Vector> {
        (self.chunk_len == 1).then(|| self.predict_chunk(x).swap_remove(0))
    }

    fn name(&self) -> String {
        if self.chunk_len > 1 {
            format!("chunk{}", self.chunk_len)
        } else {
            "mlp".into()
        }
    }
}
