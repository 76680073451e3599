//! Noise-resilient contrastive losses.
//!
//! Similarities are inner products divided by the temperature `τ`.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_rigid, RigidTransform};
use crate::volume::DensityVolume;

/// `B × d` row-major embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBatch {
    rows: Vec<Vec<f64>>,
}

impl EmbeddingBatch {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = rows.first() {
            if first.is_empty() || rows.iter().any(|r| r.len() != first.len()) {
                return Err(Error::Shape("embedding rows must share a positive dimension".into()));
            }
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite embedding value".into()));
        }
        Ok(Self { rows })
    }

    /// Rows scaled to unit L2 norm.
    pub fn normalized(rows: Vec<Vec<f64>>) -> Result<Self> {
        let rows = rows
            .into_iter()
            .map(|r| {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n == 0.0 {
                    Err(Error::Degenerate("cannot normalize a zero embedding".into()))
                } else {
                    Ok(r.into_iter().map(|v| v / n).collect())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn batch(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn is_normalized(&self) -> bool {
        self.rows
            .iter()
            .all(|r| (r.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() <= 1e-6)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct LossConfig {
    pub temperature: f64,
    pub rince_c: f64,
    pub lambda_w: f64,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            rince_c: 0.5,
            lambda_w: 0.1,
            sinkhorn_epsilon: 0.1,
            sinkhorn_max_iter: 200,
            sinkhorn_tol: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        if !(self.rince_c > 0.0 && self.rince_c <= 1.0) {
            return Err(Error::Config("rince_c must lie in (0, 1]".into()));
        }
        if !(self.lambda_w >= 0.0) {
            return Err(Error::Config("lambda_w must be >= 0".into()));
        }
        if !(self.sinkhorn_epsilon > 0.0) || !(self.sinkhorn_tol > 0.0) || self.sinkhorn_max_iter == 0 {
            return Err(Error::Config("sinkhorn settings must be positive".into()));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn same_shape(a: &EmbeddingBatch, b: &EmbeddingBatch) -> Result<()> {
    if a.batch() != b.batch() || a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "batches are {}x{} and {}x{}",
            a.batch(),
            a.dim(),
            b.batch(),
            b.dim()
        )));
    }
    Ok(())
}

fn require_normalized(batches: &[&EmbeddingBatch]) -> Result<()> {
    if batches.iter().any(|b| !b.is_normalized()) {
        return Err(Error::Contract("embeddings must have unit L2 norm".into()));
    }
    Ok(())
}

/// RINCE term for one anchor: `−e^{c·s⁺}/c + (e^{s⁺} + Σ e^{s⁻})^c / c`.
/// Tends to InfoNCE `−s⁺ + log(e^{s⁺} + Σ e^{s⁻})` as `c → 0`.
pub fn rince_term(pos: f64, negs: &[f64], c: f64) -> f64 {
    let lse = log_sum_exp(std::iter::once(pos).chain(negs.iter().copied()));
    -((c * pos).exp()) / c + (c * lse).exp() / c
}

/// InfoNCE term for one anchor.
pub fn infonce_term(pos: f64, negs: &[f64]) -> f64 {
    log_sum_exp(std::iter::once(pos).chain(negs.iter().copied())) - pos
}

/// Positive and in-batch negative scores of anchor `i`: `z_i·z⁺_j / τ`.
pub fn anchor_scores(z: &EmbeddingBatch, z_pos: &EmbeddingBatch, i: usize, tau: f64) -> (f64, Vec<f64>) {
    let zi = &z.rows()[i];
    let pos = dot(zi, &z_pos.rows()[i]) / tau;
    let negs = (0..z.batch())
        .filter(|&j| j != i)
        .map(|j| dot(zi, &z_pos.rows()[j]) / tau)
        .collect();
    (pos, negs)
}

/// Symmetric exponential (RINCE) loss, batch mean.
pub fn sym_loss(z: &EmbeddingBatch, z_pos: &EmbeddingBatch, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    same_shape(z, z_pos)?;
    require_normalized(&[z, z_pos])?;
    if z.batch() < 2 {
        return Err(Error::Precondition("instance losses need a batch of at least 2".into()));
    }
    let b = z.batch();
    Ok((0..b)
        .map(|i| {
            let (pos, negs) = anchor_scores(z, z_pos, i, cfg.temperature);
            rince_term(pos, &negs, cfg.rince_c)
        })
        .sum::<f64>()
        / b as f64)
}

/// Entropic transport plan between two batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub b: usize,
    /// Row-major `B × B`.
    pub p: Vec<f64>,
    pub converged: bool,
    pub iterations_used: usize,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.b + j]
    }

    /// Largest deviation of any row or column sum from `1/B`.
    pub fn marginal_error(&self) -> f64 {
        let target = 1.0 / self.b as f64;
        let mut err = 0.0f64;
        for i in 0..self.b {
            let row: f64 = (0..self.b).map(|j| self.get(i, j)).sum();
            let col: f64 = (0..self.b).map(|j| self.get(j, i)).sum();
            err = err.max((row - target).abs()).max((col - target).abs());
        }
        err
    }
}

/// Squared Euclidean cost `C_ij = ‖z_i − z⁺_j‖²`.
pub fn cost_matrix(z: &EmbeddingBatch, z_pos: &EmbeddingBatch) -> Vec<f64> {
    let b = z.batch();
    let mut c = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            c[i * b + j] = z.rows()[i]
                .iter()
                .zip(&z_pos.rows()[j])
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
        }
    }
    c
}

/// Projects a positive `B × B` matrix onto plans with uniform marginals:
/// scale overfull rows and columns down together, then add the rank-one
/// residual. Treats both sides alike, so transposing commutes with it.
fn round_to_marginals(mut p: Vec<f64>, b: usize) -> Vec<f64> {
    let target = 1.0 / b as f64;
    let ra: Vec<f64> = (0..b).map(|i| (target / p[i * b..(i + 1) * b].iter().sum::<f64>()).min(1.0)).collect();
    let ca: Vec<f64> = (0..b).map(|j| (target / (0..b).map(|i| p[i * b + j]).sum::<f64>()).min(1.0)).collect();
    for i in 0..b {
        for j in 0..b {
            p[i * b + j] *= ra[i] * ca[j];
        }
    }
    let er: Vec<f64> = (0..b).map(|i| (target - p[i * b..(i + 1) * b].iter().sum::<f64>()).max(0.0)).collect();
    let ec: Vec<f64> = (0..b).map(|j| (target - (0..b).map(|i| p[i * b + j]).sum::<f64>()).max(0.0)).collect();
    let total = 0.5 * (er.iter().sum::<f64>() + ec.iter().sum::<f64>());
    if total > 0.0 {
        for i in 0..b {
            for j in 0..b {
                p[i * b + j] += er[i] * ec[j] / total;
            }
        }
    }
    p
}

/// Iterations spent at each coarser ε before the target one.
const WARM_STAGE_ITERS: usize = 20;

/// Log-domain Sinkhorn with uniform marginals; returns `⟨C, P⟩` and `P`.
pub fn sinkhorn_wasserstein(z: &EmbeddingBatch, z_pos: &EmbeddingBatch, cfg: &LossConfig) -> Result<(f64, TransportPlan)> {
    cfg.validate()?;
    same_shape(z, z_pos)?;
    let b = z.batch();
    if b == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let c = cost_matrix(z, z_pos);
    let eps = cfg.sinkhorn_epsilon;
    let log_m = -(b as f64).ln();
    let mut f = vec![0.0f64; b];
    let mut g = vec![0.0f64; b];
    let plan = |f: &[f64], g: &[f64], eps: f64| -> Vec<f64> {
        let mut p = vec![0.0; b * b];
        for i in 0..b {
            for j in 0..b {
                p[i * b + j] = ((f[i] + g[j] - c[i * b + j]) / eps).exp();
            }
        }
        p
    };
    // symmetric (averaged) updates: swapping the batches mirrors every
    // iterate exactly, so the cost is symmetric to rounding error
    let sweep = |f: &mut [f64], g: &mut [f64], eps: f64| -> f64 {
        let fs: Vec<f64> = (0..b)
            .map(|i| eps * log_m - eps * log_sum_exp((0..b).map(|j| (g[j] - c[i * b + j]) / eps)))
            .collect();
        let gs: Vec<f64> = (0..b)
            .map(|j| eps * log_m - eps * log_sum_exp((0..b).map(|i| (f[i] - c[i * b + j]) / eps)))
            .collect();
        for k in 0..b {
            f[k] = 0.5 * (f[k] + fs[k]);
            g[k] = 0.5 * (g[k] + gs[k]);
        }
        let target = 1.0 / b as f64;
        let rows = (0..b).map(|i| log_sum_exp((0..b).map(|j| (f[i] + g[j] - c[i * b + j]) / eps)));
        let cols = (0..b).map(|j| log_sum_exp((0..b).map(|i| (f[i] + g[j] - c[i * b + j]) / eps)));
        rows.chain(cols).map(|l| (l.exp() - target).abs()).fold(0.0, f64::max)
    };
    // ε-scaling: warm-start from coarser regularizations, halving down to
    // ε; the final stage alone decides convergence
    let spread = c.iter().copied().fold(0.0, f64::max);
    let mut stage_eps = Vec::new();
    let mut e = spread;
    while e > eps {
        stage_eps.push(e);
        e *= 0.5;
    }
    let mut used = 0;
    for &e in &stage_eps {
        for _ in 0..WARM_STAGE_ITERS {
            if used >= cfg.sinkhorn_max_iter {
                break;
            }
            used += 1;
            if sweep(&mut f, &mut g, e) < cfg.sinkhorn_tol {
                break;
            }
        }
    }
    let mut converged = false;
    while used < cfg.sinkhorn_max_iter {
        used += 1;
        if sweep(&mut f, &mut g, eps) < cfg.sinkhorn_tol {
            converged = true;
            break;
        }
    }
    let p = round_to_marginals(plan(&f, &g, eps), b);
    let cost = p.iter().zip(&c).map(|(x, y)| x * y).sum();
    Ok((
        cost,
        TransportPlan {
            b,
            p,
            converged,
            iterations_used: used,
        },
    ))
}

/// Noise-aware InfoNCE with one clean positive and one noisy negative per
/// anchor, batch mean.
pub fn infonce_loss(
    z: &EmbeddingBatch,
    z_clean: &EmbeddingBatch,
    z_noisy: &EmbeddingBatch,
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    same_shape(z, z_clean)?;
    same_shape(z, z_noisy)?;
    require_normalized(&[z, z_clean, z_noisy])?;
    if z.batch() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let tau = cfg.temperature;
    Ok(z
        .rows()
        .iter()
        .zip(z_clean.rows())
        .zip(z_noisy.rows())
        .map(|((a, p), n)| {
            let sp = dot(a, p) / tau;
            let sn = dot(a, n) / tau;
            // −log(e^{sp} / (e^{sp} + e^{sn})) = log(1 + e^{sn − sp})
            let d = sn - sp;
            if d > 0.0 {
                d + (-d).exp().ln_1p()
            } else {
                d.exp().ln_1p()
            }
        })
        .sum::<f64>()
        / z.batch() as f64)
}

/// Maps an (augmented view, original) volume pair to an embedding.
pub trait Encoder {
    fn encode(&self, view: &DensityVolume, original: &DensityVolume) -> Vec<f64>;
}

impl<F> Encoder for F
where
    F: Fn(&DensityVolume, &DensityVolume) -> Vec<f64>,
{
    fn encode(&self, view: &DensityVolume, original: &DensityVolume) -> Vec<f64> {
        self(view, original)
    }
}

/// Deterministic test encoder: a fixed linear map of the concatenated
/// voxels of both volumes, L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProjectionEncoder {
    pub dim: usize,
    pub seed: u64,
}

impl Encoder for LinearProjectionEncoder {
    fn encode(&self, view: &DensityVolume, original: &DensityVolume) -> Vec<f64> {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut out = vec![0.0; self.dim];
        for (k, o) in out.iter_mut().enumerate() {
            let mut rng = crate::rng::substream(self.seed, k as u64);
            *o = view
                .data()
                .iter()
                .chain(original.data())
                .map(|&v| {
                    let w: f64 = rng.sample(StandardNormal);
                    w * v as f64
                })
                .sum();
        }
        let n = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            out.iter_mut().for_each(|v| *v /= n);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrclBreakdown {
    pub sym_12: f64,
    pub wass_12: f64,
    pub sym_21: f64,
    pub wass_21: f64,
    /// `sym_12 + λ·wass_12 + sym_21 + λ·wass_21`.
    pub instance: f64,
    pub noise: f64,
    pub total: f64,
}

fn encode_batch<E: Encoder + ?Sized>(enc: &E, views: &[DensityVolume], originals: &[DensityVolume]) -> Result<EmbeddingBatch> {
    let rows: Vec<Vec<f64>> = views.iter().zip(originals).map(|(v, o)| enc.encode(v, o)).collect();
    let batch = EmbeddingBatch::new(rows)?;
    if !batch.is_normalized() {
        return Err(Error::Contract("encoder output is not L2-normalized".into()));
    }
    Ok(batch)
}

/// One evaluation of the NRCL objective; no parameters change.
#[allow(clippy::too_many_arguments)]
pub fn nrcl_step<Q: Encoder + ?Sized, K: Encoder + ?Sized>(
    x: &[DensityVolume],
    x_clean: &[DensityVolume],
    x_noisy: &[DensityVolume],
    t: &[RigidTransform],
    t_prime: &[RigidTransform],
    encoder_q: &Q,
    encoder_k: &K,
    cfg: &LossConfig,
) -> Result<NrclBreakdown> {
    let b = x.len();
    if [x_clean.len(), x_noisy.len(), t.len(), t_prime.len()].iter().any(|&n| n != b) {
        return Err(Error::Shape("batch members must have equal length".into()));
    }
    let warp = |vols: &[DensityVolume], ts: &[RigidTransform]| -> Vec<DensityVolume> {
        vols.iter().zip(ts).map(|(v, tr)| apply_rigid(v, tr)).collect()
    };
    let x1 = warp(x, t);
    let x1_noisy = warp(x_noisy, t);
    let x1_clean = warp(x_clean, t);
    let x2 = warp(x, t_prime);

    let q1 = encode_batch(encoder_q, &x1, x)?;
    let q2 = encode_batch(encoder_q, &x2, x)?;
    let k1 = encode_batch(encoder_k, &x1, x)?;
    let k2 = encode_batch(encoder_k, &x2, x)?;
    let k_clean = encode_batch(encoder_k, &x1_clean, x)?;
    let k_noisy = encode_batch(encoder_k, &x1_noisy, x)?;

    let sym_12 = sym_loss(&q1, &k2, cfg)?;
    let (wass_12, _) = sinkhorn_wasserstein(&q1, &k2, cfg)?;
    let sym_21 = sym_loss(&q2, &k1, cfg)?;
    let (wass_21, _) = sinkhorn_wasserstein(&q2, &k1, cfg)?;
    let instance = sym_12 + cfg.lambda_w * wass_12 + sym_21 + cfg.lambda_w * wass_21;
    let noise = infonce_loss(&q1, &k_clean, &k_noisy, cfg)?;
    Ok(NrclBreakdown {
        sym_12,
        wass_12,
        sym_21,
        wass_21,
        instance,
        noise,
        total: instance + noise,
    })
}

/// `k ← m·k + (1 − m)·q`.
pub fn momentum_update(params_q: &[f64], params_k: &[f64], m: f64) -> Result<Vec<f64>> {
    if params_q.len() != params_k.len() {
        return Err(Error::Shape(format!("{} vs {} parameters", params_q.len(), params_k.len())));
    }
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Config(format!("momentum must lie in [0, 1], got {m}")));
    }
    Ok(params_k.iter().zip(params_q).map(|(k, q)| m * k + (1.0 - m) * q).collect())
}
