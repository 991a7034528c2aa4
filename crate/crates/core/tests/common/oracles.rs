// Independent loop-level reference implementations, written against the
// public tensor accessors only.

#![allow(dead_code)]

use attn_marl_core::attn_net::{ArchConfig, ParamSet, LOG_VAR_MAX, LOG_VAR_MIN};
use attn_marl_core::{AgentGraph, Matrix, Rng};

pub const LN_EPS: f64 = 1e-5;

pub fn layer_norm(x: &[f64], gain: &[f64], offset: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(k, v)| gain[k] * (v - mean) / (var + LN_EPS).sqrt() + offset[k])
        .collect()
}

fn row_times(x: &[f64], w: &Matrix) -> Vec<f64> {
    (0..w.cols())
        .map(|c| (0..w.rows()).map(|r| x[r] * w.get(r, c)).sum())
        .collect()
}

/// Direct transcription: for every pair (i, j) with an edge, score
/// `q_i · (k_j + a_K[c]) / sqrt(m)`, softmax over i's attended set, then sum
/// `α (v_j + a_V[c])`. Rows with `valid[i] == false` are zero and never
/// attended to.
pub fn attention(p: &ParamSet, x: &Matrix, valid: &[bool], g: &AgentGraph) -> Matrix {
    let a = p.arch();
    let n_agents = x.rows();
    let adj = g.adjacency();
    let mut out = Matrix::zeros(n_agents, a.heads * a.head_dim);
    for h in 0..a.heads {
        let (wq, wk, wv) = (p.w_q(h), p.w_k(h), p.w_v(h));
        for i in 0..n_agents {
            if !valid[i] {
                continue;
            }
            let q = row_times(x.row(i), &wq);
            let mut scores = Vec::new();
            for j in 0..n_agents {
                if adj[i][j] == 0 || !valid[j] {
                    continue;
                }
                let c = adj[i][j] - 1;
                let k = row_times(x.row(j), &wk);
                let e: f64 = (0..a.head_dim)
                    .map(|t| q[t] * (k[t] + p.a_k(h, c)[t]))
                    .sum::<f64>()
                    / (a.head_dim as f64).sqrt();
                scores.push((j, c, e));
            }
            let z: f64 = scores.iter().map(|s| s.2.exp()).sum();
            for &(j, c, e) in &scores {
                let alpha = e.exp() / z;
                let v = row_times(x.row(j), &wv);
                for (t, (vt, at)) in v.iter().zip(p.a_v(h, c)).enumerate() {
                    let col = h * a.head_dim + t;
                    out.set(i, col, out.get(i, col) + alpha * (vt + at));
                }
            }
        }
    }
    out
}

/// Shared trunk output per agent: attention, ReLU, LN, dense, ReLU, LN.
pub fn trunk(p: &ParamSet, x: &Matrix, valid: &[bool], g: &AgentGraph) -> Vec<Option<Vec<f64>>> {
    let att = attention(p, x, valid, g);
    let t = |n: &str| p.tensor(n).unwrap();
    (0..x.rows())
        .map(|i| {
            if !valid[i] {
                return None;
            }
            let r1: Vec<f64> = att.row(i).iter().map(|v| v.max(0.0)).collect();
            let h1 = layer_norm(&r1, t("ln1_gain").data(), t("ln1_offset").data());
            let z: Vec<f64> = row_times(&h1, &t("trunk_w"))
                .iter()
                .zip(t("trunk_b").data())
                .map(|(a, b)| (a + b).max(0.0))
                .collect();
            Some(layer_norm(&z, t("ln2_gain").data(), t("ln2_offset").data()))
        })
        .collect()
}

/// (means, log-variances) per agent.
pub fn policy(p: &ParamSet, x: &Matrix, valid: &[bool], g: &AgentGraph) -> (Matrix, Matrix) {
    let d = p.arch().act_dim;
    let mut means = Matrix::zeros(x.rows(), d);
    let mut lvs = Matrix::zeros(x.rows(), d);
    let w = p.tensor("head_w").unwrap();
    let b = p.tensor("head_b").unwrap();
    for (i, h) in trunk(p, x, valid, g).into_iter().enumerate() {
        let Some(h) = h else { continue };
        let o = row_times(&h, &w);
        for k in 0..d {
            means.set(i, k, o[k] + b.get(0, k));
            lvs.set(i, k, (o[d + k] + b.get(0, d + k)).clamp(LOG_VAR_MIN, LOG_VAR_MAX));
        }
    }
    (means, lvs)
}

pub fn value(p: &ParamSet, x: &Matrix, valid: &[bool], g: &AgentGraph) -> f64 {
    let rows: Vec<Vec<f64>> = trunk(p, x, valid, g).into_iter().flatten().collect();
    let hidden = p.arch().hidden;
    let pooled: Vec<f64> = (0..hidden)
        .map(|k| rows.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let w = p.tensor("head_w").unwrap();
    pooled.iter().enumerate().map(|(k, v)| v * w.get(k, 0)).sum::<f64>()
        + p.tensor("head_b").unwrap().get(0, 0)
}

/// Advantages by the explicit double sum `Σ_l (γλ)^l δ_{t+l}`.
pub fn gae_double_sum(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let v_next = |t: usize| if t + 1 < n { values[t + 1] } else { bootstrap };
    let delta: Vec<f64> = (0..n).map(|t| rewards[t] + gamma * v_next(t) - values[t]).collect();
    (0..n)
        .map(|t| (t..n).map(|l| (gamma * lambda).powi((l - t) as i32) * delta[l]).sum())
        .collect()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

pub fn small_arch(heads: usize, classes: usize) -> ArchConfig {
    ArchConfig {
        obs_dim: 5,
        heads,
        head_dim: 6,
        classes,
        hidden: 10,
        act_dim: 2,
    }
}

/// Random permutation of `0..n`.
pub fn permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut p);
    p
}
