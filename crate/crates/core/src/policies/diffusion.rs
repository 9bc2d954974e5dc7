//! A small DDPM-style conditional action sampler.
//!
//! The denoiser is a 3-layer tanh MLP on the noisy action whose two hidden layers
//! are FiLM-modulated by `[sinusoidal step embedding, state]`.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::net::{chunk_targets, AdamW, OptimizerConfig, TracePoint};
use super::{History, Policy, PolicyKind};
use crate::error::{Error, Result};
use crate::matkit::Vector;
use crate::simkit::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub chunk_len: usize,
    /// Smallest per-dimension scale used when standardizing states and actions.
    pub scale_floor: f64,
    pub opt: OptimizerConfig,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            steps: 16,
            beta_start: 0.01,
            beta_end: 0.5,
            hidden: 16,
            embed_dim: 256,
            chunk_len: 1,
            scale_floor: 1e-3,
            opt: OptimizerConfig { lr: 3e-3, iterations: 4000, batch_size: 256, ..Default::default() },
        }
    }
}

/// Noise schedule with its cumulative products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl Schedule {
    pub fn linear(steps: usize, start: f64, end: f64) -> Self {
        let betas: Vec<f64> = (0..steps)
            .map(|k| if steps == 1 { start } else { start + (end - start) * k as f64 / (steps - 1) as f64 })
            .collect();
        let alpha_bars = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Schedule { betas, alpha_bars }
    }
}

fn sinusoidal(k: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| {
            let freq = (10_000f64).powf(-((j / 2 * 2) as f64) / dim as f64);
            let angle = k as f64 * freq;
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Parameter blocks, stored flat in the order listed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Layout {
    action: usize,
    state: usize,
    hidden: usize,
    embed: usize,
}

impl Layout {
    fn cond(&self) -> usize {
        self.embed + self.state
    }
    fn w1(&self) -> usize {
        0
    }
    fn b1(&self) -> usize {
        self.w1() + self.hidden * self.action
    }
    fn w2(&self) -> usize {
        self.b1() + self.hidden
    }
    fn b2(&self) -> usize {
        self.w2() + self.hidden * self.hidden
    }
    fn w3(&self) -> usize {
        self.b2() + self.hidden
    }
    fn b3(&self) -> usize {
        self.w3() + self.action * self.hidden
    }
    /// FiLM map of layer `l`: `2·hidden × cond`, scale rows first.
    fn film(&self, l: usize) -> usize {
        self.b3() + self.action + l * 2 * self.hidden * self.cond()
    }
    fn len(&self) -> usize {
        self.film(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionNet {
    layout: Layout,
    pub params: Vec<f64>,
    pub schedule: Schedule,
    embeddings: Vec<Vec<f64>>,
}

struct Pass {
    h1: Vec<f64>,
    g1: Vec<f64>,
    y1: Vec<f64>,
    h2: Vec<f64>,
    g2: Vec<f64>,
    y2: Vec<f64>,
    out: Vec<f64>,
}

fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        out[r] += w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl DiffusionNet {
    fn new<R: Rng + ?Sized>(action: usize, state: usize, cfg: &DiffusionConfig, rng: &mut R) -> Self {
        let layout = Layout { action, state, hidden: cfg.hidden, embed: cfg.embed_dim };
        let mut params = vec![0.0; layout.len()];
        let mut glorot = |start: usize, rows: usize, cols: usize, params: &mut Vec<f64>| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            for p in &mut params[start..start + rows * cols] {
                *p = rng.random_range(-bound..bound);
            }
        };
        glorot(layout.w1(), cfg.hidden, action, &mut params);
        glorot(layout.w2(), cfg.hidden, cfg.hidden, &mut params);
        glorot(layout.w3(), action, cfg.hidden, &mut params);
        for l in 0..2 {
            for p in &mut params[layout.film(l)..layout.film(l) + 2 * cfg.hidden * layout.cond()] {
                *p = rng.random_range(-0.01..0.01);
            }
        }
        let schedule = Schedule::linear(cfg.steps, cfg.beta_start, cfg.beta_end);
        let embeddings = (1..=cfg.steps).map(|k| sinusoidal(k, cfg.embed_dim)).collect();
        DiffusionNet { layout, params, schedule, embeddings }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// FiLM outputs `[scale − 1; shift]` of both layers for step `k` (1-based), embedding part only.
    fn step_films(&self, k: usize) -> [Vec<f64>; 2] {
        let l = &self.layout;
        let emb = &self.embeddings[k - 1];
        let mut films = [vec![0.0; 2 * l.hidden], vec![0.0; 2 * l.hidden]];
        for (layer, film) in films.iter_mut().enumerate() {
            let w = &self.params[l.film(layer)..l.film(layer + 1)];
            for r in 0..2 * l.hidden {
                film[r] = w[r * l.cond()..r * l.cond() + l.embed].iter().zip(emb).map(|(a, b)| a * b).sum();
            }
        }
        films
    }

    fn forward(&self, a: &[f64], state: &[f64], films: &[Vec<f64>; 2]) -> Pass {
        let l = &self.layout;
        let p = &self.params;
        let h = l.hidden;
        let film = |layer: usize| {
            let w = &p[l.film(layer)..l.film(layer + 1)];
            let mut f = films[layer].clone();
            for (r, v) in f.iter_mut().enumerate() {
                *v += w[r * l.cond() + l.embed..(r + 1) * l.cond()].iter().zip(state).map(|(a, b)| a * b).sum::<f64>();
            }
            f
        };
        let mut h1 = p[l.b1()..l.b1() + h].to_vec();
        matvec(&p[l.w1()..l.b1()], h, l.action, a, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let f1 = film(0);
        let g1: Vec<f64> = f1[..h].iter().map(|v| 1.0 + v).collect();
        let y1: Vec<f64> = (0..h).map(|j| g1[j] * h1[j] + f1[h + j]).collect();
        let mut h2 = p[l.b2()..l.b2() + h].to_vec();
        matvec(&p[l.w2()..l.b2()], h, h, &y1, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let f2 = film(1);
        let g2: Vec<f64> = f2[..h].iter().map(|v| 1.0 + v).collect();
        let y2: Vec<f64> = (0..h).map(|j| g2[j] * h2[j] + f2[h + j]).collect();
        let mut out = p[l.b3()..l.b3() + l.action].to_vec();
        matvec(&p[l.w3()..l.b3()], l.action, h, &y2, &mut out);
        Pass { h1, g1, y1, h2, g2, y2, out }
    }

    /// Noise prediction for noisy action `a` at step `k` (1-based).
    pub fn predict_noise(&self, a: &[f64], state: &[f64], k: usize) -> Vec<f64> {
        self.forward(a, state, &self.step_films(k)).out
    }

    /// Adds the gradient of `scale·‖ε̂ − ε‖²`; embedding-side FiLM gradients go to `film_acc[layer]`.
    fn backward(
        &self,
        a: &[f64],
        state: &[f64],
        films: &[Vec<f64>; 2],
        noise: &[f64],
        scale: f64,
        grad: &mut [f64],
        film_acc: &mut [Vec<f64>; 2],
    ) -> f64 {
        let l = &self.layout;
        let p = &self.params;
        let h = l.hidden;
        let pass = self.forward(a, state, films);
        let dout: Vec<f64> = pass.out.iter().zip(noise).map(|(y, e)| 2.0 * scale * (y - e)).collect();
        let err: f64 = pass.out.iter().zip(noise).map(|(y, e)| (y - e) * (y - e)).sum();

        let mut dy2 = vec![0.0; h];
        for r in 0..l.action {
            grad[l.b3() + r] += dout[r];
            for j in 0..h {
                grad[l.w3() + r * h + j] += dout[r] * pass.y2[j];
                dy2[j] += p[l.w3() + r * h + j] * dout[r];
            }
        }
        let film_grad = |layer: usize, dy: &[f64], hid: &[f64], grad: &mut [f64], acc: &mut Vec<f64>| {
            let base = l.film(layer);
            for r in 0..2 * h {
                let df = if r < h { dy[r] * hid[r] } else { dy[r - h] };
                acc[r] += df;
                let row = base + r * l.cond() + l.embed;
                for (c, s) in state.iter().enumerate() {
                    grad[row + c] += df * s;
                }
            }
        };
        film_grad(1, &dy2, &pass.h2, grad, &mut film_acc[1]);
        let dz2: Vec<f64> = (0..h).map(|j| dy2[j] * pass.g2[j] * (1.0 - pass.h2[j] * pass.h2[j])).collect();
        let mut dy1 = vec![0.0; h];
        for r in 0..h {
            grad[l.b2() + r] += dz2[r];
            for j in 0..h {
                grad[l.w2() + r * h + j] += dz2[r] * pass.y1[j];
                dy1[j] += p[l.w2() + r * h + j] * dz2[r];
            }
        }
        film_grad(0, &dy1, &pass.h1, grad, &mut film_acc[0]);
        for r in 0..h {
            let dz1 = dy1[r] * pass.g1[r] * (1.0 - pass.h1[r] * pass.h1[r]);
            grad[l.b1() + r] += dz1;
            for (c, v) in a.iter().enumerate() {
                grad[l.w1() + r * l.action + c] += dz1 * v;
            }
        }
        err
    }

    /// Moves per-step FiLM sums onto the embedding columns: `Σ_k acc_k ⊗ emb_k`.
    fn flush_film(&self, k: usize, acc: &[Vec<f64>; 2], grad: &mut [f64]) {
        let l = &self.layout;
        let emb = &self.embeddings[k - 1];
        for (layer, a) in acc.iter().enumerate() {
            for (r, &v) in a.iter().enumerate() {
                if v != 0.0 {
                    let row = l.film(layer) + r * l.cond();
                    grad[row..row + l.embed].iter_mut().zip(emb).for_each(|(g, e)| *g += v * e);
                }
            }
        }
    }

    /// One reverse-chain draw in standardized action units.
    pub fn sample(&self, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let s = &self.schedule;
        let mut a: Vec<f64> = (0..self.layout.action).map(|_| rng.sample(StandardNormal)).collect();
        for k in (1..=s.betas.len()).rev() {
            let beta = s.betas[k - 1];
            let abar = s.alpha_bars[k - 1];
            let eps = self.predict_noise(&a, state, k);
            let coef = beta / (1.0 - abar).sqrt();
            let inv = 1.0 / (1.0 - beta).sqrt();
            a.iter_mut().zip(&eps).for_each(|(v, e)| *v = inv * (*v - coef * e));
            if k > 1 {
                let prev = s.alpha_bars[k - 2];
                let sigma = (beta * (1.0 - prev) / (1.0 - abar)).sqrt();
                a.iter_mut().for_each(|v| *v += sigma * rng.sample::<f64, _>(StandardNormal));
            }
        }
        a
    }
}

/// Per-dimension affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>], floor: f64) -> Self {
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..dim)
            .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(floor))
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| v * s + m).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionPolicy {
    pub net: DiffusionNet,
    pub states: Standardizer,
    pub actions: Standardizer,
    pub chunk_len: usize,
    pub action_dim: usize,
    pub trace: Vec<TracePoint>,
}

impl DiffusionPolicy {
    pub fn sample_chunk(&self, x: &Vector, rng: &mut dyn RngCore) -> Vec<Vector> {
        let z = self.net.sample(&self.states.apply(x.as_slice()), rng);
        let flat = self.actions.invert(&z);
        flat.chunks(self.action_dim).map(Vector::from_column_slice).collect()
    }
}

impl Policy for DiffusionPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::ToyDiffusion
    }

    fn act(&self, history: &History, rng: &mut dyn RngCore) -> Vector {
        self.sample_chunk(history.current(), rng).swap_remove(0)
    }

    fn chunk_len(&self) -> usize {
        self.chunk_len
    }

    fn plan(&self, history: &History, rng: &mut dyn RngCore) -> Vec<Vector> {
        self.sample_chunk(history.current(), rng)
    }

    fn name(&self) -> String {
        if self.chunk_len > 1 {
            format!("diffusion-chunk{}", self.chunk_len)
        } else {
            "toy_diffusion".into()
        }
    }
}

/// Trains a denoiser on `(state, action chunk)` pairs.
pub fn toy_diffusion_pairs<R: Rng + ?Sized>(
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &DiffusionConfig,
    rng: &mut R,
) -> Result<DiffusionPolicy> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.steps == 0 || cfg.hidden == 0 {
        return Err(Error::InvalidParameter { name: "steps", detail: "steps and hidden width must be positive".into() });
    }
    let states = Standardizer::fit(inputs, cfg.scale_floor);
    let actions = Standardizer::fit(targets, cfg.scale_floor);
    let xs: Vec<Vec<f64>> = inputs.iter().map(|x| states.apply(x)).collect();
    let ys: Vec<Vec<f64>> = targets.iter().map(|y| actions.apply(y)).collect();
    let mut net = DiffusionNet::new(ys[0].len(), xs[0].len(), cfg, rng);
    let mut adam = AdamW::new(cfg.opt, net.num_params());
    let mut grad = vec![0.0; net.num_params()];
    let batch = cfg.opt.batch_size.max(1);
    let scale = 1.0 / (batch * ys[0].len()) as f64;
    let steps = cfg.steps;
    let mut trace = Vec::new();
    let mut running = 0.0;
    for it in 0..cfg.opt.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let films: Vec<[Vec<f64>; 2]> = (1..=steps).map(|k| net.step_films(k)).collect();
        let mut acc: Vec<[Vec<f64>; 2]> = (0..steps).map(|_| [vec![0.0; 2 * cfg.hidden], vec![0.0; 2 * cfg.hidden]]).collect();
        let mut err = 0.0;
        for _ in 0..batch {
            let i = rng.random_range(0..xs.len());
            let k = rng.random_range(1..=steps);
            let abar = net.schedule.alpha_bars[k - 1];
            let noise: Vec<f64> = (0..ys[i].len()).map(|_| rng.sample(StandardNormal)).collect();
            let noisy: Vec<f64> =
                ys[i].iter().zip(&noise).map(|(y, e)| abar.sqrt() * y + (1.0 - abar).sqrt() * e).collect();
            err += net.backward(&noisy, &xs[i], &films[k - 1], &noise, scale, &mut grad, &mut acc[k - 1]);
        }
        for k in 1..=steps {
            net.flush_film(k, &acc[k - 1], &mut grad);
        }
        let loss = err * scale;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: it });
        }
        running = if it == 0 { loss } else { 0.9 * running + 0.1 * loss };
        adam.update(&mut net.params, &grad);
        let done = it + 1;
        if done % cfg.opt.eval_every.max(1) == 0 || done == cfg.opt.iterations {
            trace.push(TracePoint { iteration: done, train_loss: running, val_loss: f64::NAN });
        }
    }
    let action_dim = targets[0].len() / cfg.chunk_len.max(1);
    Ok(DiffusionPolicy { net, states, actions, chunk_len: cfg.chunk_len.max(1), action_dim, trace })
}

pub fn toy_diffusion_train<R: Rng + ?Sized>(dataset: &Dataset, cfg: &DiffusionConfig, rng: &mut R) -> Result<DiffusionPolicy> {
    let (inputs, targets) = chunk_targets(dataset, cfg.chunk_len.max(1));
    toy_diffusion_pairs(&inputs, &targets, cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn small() -> DiffusionConfig {
        DiffusionConfig { embed_dim: 8, hidden: 5, ..Default::default() }
    }

    #[test]
    fn schedule_is_linear_and_decaying() {
        let s = Schedule::linear(16, 0.01, 0.5);
        assert_eq!(s.betas.len(), 16);
        assert!((s.betas[15] - 0.5).abs() < 1e-15 && (s.betas[0] - 0.01).abs() < 1e-15);
        assert!(s.alpha_bars[15] < 0.01);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = seeded(1);
        let net = DiffusionNet::new(2, 3, &small(), &mut rng);
        let mut net = net;
        // larger FiLM weights so the conditioning path is exercised
        let start = net.layout.film(0);
        for p in &mut net.params[start..] {
            *p = rng.random_range(-0.3..0.3);
        }
        let (a, x, e, k) = ([0.4, -0.7], [0.2, 0.9, -0.5], [0.1, 0.3], 5);
        let mut grad = vec![0.0; net.num_params()];
        let films = net.step_films(k);
        let mut acc = [vec![0.0; 10], vec![0.0; 10]];
        net.backward(&a, &x, &films, &e, 1.0, &mut grad, &mut acc);
        net.flush_film(k, &acc, &mut grad);
        let loss = |n: &DiffusionNet| n.predict_noise(&a, &x, k).iter().zip(&e).map(|(y, t)| (y - t).powi(2)).sum::<f64>();
        let h = 1e-6;
        for i in 0..net.num_params() {
            let mut p = net.clone();
            p.params[i] += h;
            let up = loss(&p);
            p.params[i] -= 2.0 * h;
            let fd = (up - loss(&p)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-5 * fd.abs().max(1e-3), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn recovers_two_point_mixture() {
        let mut rng = seeded(2);
        let weight = 0.3;
        let inputs: Vec<Vec<f64>> = (0..4000).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let targets: Vec<Vec<f64>> =
            inputs.iter().map(|_| vec![if rng.random::<f64>() < weight { 1.0 } else { -1.0 }]).collect();
        let cfg = DiffusionConfig { opt: OptimizerConfig { iterations: 3000, ..DiffusionConfig::default().opt }, ..Default::default() };
        let policy = toy_diffusion_pairs(&inputs, &targets, &cfg, &mut rng).unwrap();
        for probe in [-0.5, 0.0, 0.5] {
            let x = Vector::from_vec(vec![probe]);
            let draws: Vec<f64> = (0..1000).map(|_| policy.sample_chunk(&x, &mut rng)[0][0]).collect();
            let upper = draws.iter().filter(|&&v| v > 0.0).count() as f64 / 1000.0;
            assert!((upper - weight).abs() <= 0.1, "probe {probe}: {upper}");
            let near = draws.iter().filter(|v| (v.abs() - 1.0).abs() < 0.5).count();
            assert!(near >= 800, "probe {probe}: {near} draws near a mode");
        }
    }

    #[test]
    fn deterministic_targets_give_tight_samples() {
        let mut rng = seeded(3);
        let inputs: Vec<Vec<f64>> = (0..2000).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| vec![0.5 * x[0]]).collect();
        let policy = toy_diffusion_pairs(&inputs, &targets, &DiffusionConfig::default(), &mut rng).unwrap();
        let residual = {
            let pred: Vec<f64> = inputs[..500]
                .iter()
                .map(|x| policy.sample_chunk(&Vector::from_vec(x.clone()), &mut rng)[0][0] - 0.5 * x[0])
                .collect();
            (pred.iter().map(|e| e * e).sum::<f64>() / pred.len() as f64).sqrt()
        };
        for probe in [-0.6, 0.1, 0.7] {
            let x = Vector::from_vec(vec![probe]);
            let draws: Vec<f64> = (0..400).map(|_| policy.sample_chunk(&x, &mut rng)[0][0]).collect();
            let mean = draws.iter().sum::<f64>() / 400.0;
            let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 399.0).sqrt();
            assert!(sd <= 3.0 * residual, "probe {probe}: sd {sd} vs residual {residual}");
            assert!((mean - 0.5 * probe).abs() < 0.1);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let inputs: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 50.0]).collect();
        let targets = inputs.clone();
        let cfg = DiffusionConfig { opt: OptimizerConfig { iterations: 20, batch_size: 8, ..Default::default() }, ..small() };
        let a = toy_diffusion_pairs(&inputs, &targets, &cfg, &mut seeded(4)).unwrap();
        let b = toy_diffusion_pairs(&inputs, &targets, &cfg, &mut seeded(4)).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.trace.last().unwrap().train_loss, b.trace.last().unwrap().train_loss);
    }
}
