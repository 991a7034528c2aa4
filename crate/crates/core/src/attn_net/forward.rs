use super::{ParamSet, LOG_VAR_MAX, LOG_VAR_MIN};
use crate::attn_net::{GaussianPolicyOut, NetKind};
use crate::error::{Error, Result};
use crate::graph::{AgentGraph, ObservationBatch};
use crate::numerics::{
    axpy, dot, layer_norm_bwd_acc, layer_norm_into, masked_softmax_into, outer_acc, relu_in_place,
    vec_mat, vec_mat_t_acc, LayerNormCache, Matrix, LAYER_NORM_EPS,
};

/// Intermediates of the attention layer.
///
/// `q`, `k`, `v` are `N × H·m` with head `h` in columns `h·m..(h+1)·m`.
/// `scores` and `alpha` hold one entry per `(head, edge)` at
/// `h·E + e`, where `e` walks the graph's out-edges agent by agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnCache {
    pub obs: Matrix,
    pub valid: Vec<bool>,
    pub graph: AgentGraph,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub scores: Vec<f64>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrunkCache {
    pub attn: AttnCache,
    /// Attention output before the first ReLU.
    pub attn_out: Matrix,
    pub ln1: Vec<Option<LayerNormCache>>,
    pub h1: Matrix,
    /// Shared layer output before the second ReLU.
    pub z2: Matrix,
    pub ln2: Vec<Option<LayerNormCache>>,
    pub h2: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCache {
    pub trunk: TrunkCache,
    /// Head output before the log-variance clamp.
    pub raw: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueCache {
    pub trunk: TrunkCache,
    pub pooled: Vec<f64>,
    pub argmax: Vec<usize>,
}

fn check_inputs(p: &ParamSet, obs: &ObservationBatch, g: &AgentGraph) -> Result<()> {
    let arch = p.arch();
    if obs.obs_dim() != arch.obs_dim {
        return Err(Error::shape(format!(
            "observations have {} features, network expects {}",
            obs.obs_dim(),
            arch.obs_dim
        )));
    }
    if g.len() != obs.rows() {
        return Err(Error::shape(format!(
            "graph has {} agents but there are {} observation rows",
            g.len(),
            obs.rows()
        )));
    }
    if g.num_classes() != arch.classes {
        return Err(Error::shape(format!(
            "graph uses {} edge classes, network was built for {}",
            g.num_classes(),
            arch.classes
        )));
    }
    Ok(())
}

/// Multi-head attention with per-class key/value biases.
///
/// Returns the concatenated head outputs (`N × H·m`, pad rows zero).
pub fn attention_fwd(
    p: &ParamSet,
    obs: &ObservationBatch,
    g: &AgentGraph,
) -> Result<(Matrix, AttnCache)> {
    check_inputs(p, obs, g)?;
    let arch = *p.arch();
    let (n_agents, n, m, heads, classes) =
        (obs.rows(), arch.obs_dim, arch.head_dim, arch.heads, arch.classes);
    let width = arch.attn_width();
    let w = p.flat();
    let off = p.off;
    let valid = obs.valid();
    let x = obs.obs();

    let mut q = Matrix::zeros(n_agents, width);
    let mut k = Matrix::zeros(n_agents, width);
    let mut v = Matrix::zeros(n_agents, width);
    for i in (0..n_agents).filter(|&i| valid[i]) {
        let xi = x.row(i);
        for h in 0..heads {
            let blk = h * n * m..(h + 1) * n * m;
            let cols = h * m..(h + 1) * m;
            vec_mat(xi, &w[off.wq..][blk.clone()], m, &mut q.row_mut(i)[cols.clone()]);
            vec_mat(xi, &w[off.wk..][blk.clone()], m, &mut k.row_mut(i)[cols.clone()]);
            vec_mat(xi, &w[off.wv..][blk], m, &mut v.row_mut(i)[cols]);
        }
    }

    let n_edges = g.num_edges();
    let mut scores = vec![0.0; heads * n_edges];
    let mut alpha = vec![0.0; heads * n_edges];
    let mut out = Matrix::zeros(n_agents, width);
    let scale = 1.0 / (m as f64).sqrt();
    let mut mask = Vec::new();
    let mut key = vec![0.0; m];
    for i in (0..n_agents).filter(|&i| valid[i]) {
        let nbrs = g.out_edges(i);
        let base = g.edge_offset(i);
        mask.clear();
        mask.extend(nbrs.iter().map(|nb| valid[nb.index]));
        if !mask.iter().any(|&b| b) {
            return Err(Error::NoNeighbors { agent: i });
        }
        for h in 0..heads {
            let cols = h * m..(h + 1) * m;
            let qi = &q.row(i)[cols.clone()];
            let s = &mut scores[h * n_edges + base..h * n_edges + base + nbrs.len()];
            for (e, nb) in nbrs.iter().enumerate() {
                if !mask[e] {
                    continue;
                }
                let ak = &w[off.ak + (h * classes + nb.class) * m..][..m];
                for ((kb, &kj), &a) in key.iter_mut().zip(&k.row(nb.index)[cols.clone()]).zip(ak) {
                    *kb = kj + a;
                }
                s[e] = dot(qi, &key) * scale;
            }
            let a = &mut alpha[h * n_edges + base..h * n_edges + base + nbrs.len()];
            masked_softmax_into(s, &mask, a)?;
            let oi = &mut out.row_mut(i)[cols.clone()];
            for (e, nb) in nbrs.iter().enumerate() {
                if !mask[e] {
                    continue;
                }
                let av = &w[off.av + (h * classes + nb.class) * m..][..m];
                axpy(a[e], &v.row(nb.index)[cols.clone()], oi);
                axpy(a[e], av, oi);
            }
        }
    }

    let cache = AttnCache {
        obs: x.clone(),
        valid: valid.to_vec(),
        graph: g.clone(),
        q,
        k,
        v,
        scores,
        alpha,
    };
    Ok((out, cache))
}

fn trunk_fwd(p: &ParamSet, obs: &ObservationBatch, g: &AgentGraph) -> Result<TrunkCache> {
    let (attn_out, attn) = attention_fwd(p, obs, g)?;
    let arch = *p.arch();
    let (width, hidden) = (arch.attn_width(), arch.hidden);
    let off = p.off;
    let w = p.flat();
    let n_agents = obs.rows();
    let mut h1 = Matrix::zeros(n_agents, width);
    let mut z2 = Matrix::zeros(n_agents, hidden);
    let mut h2 = Matrix::zeros(n_agents, hidden);
    let mut ln1 = vec![None; n_agents];
    let mut ln2 = vec![None; n_agents];
    let mut r = vec![0.0; width.max(hidden)];
    for i in (0..n_agents).filter(|&i| obs.valid()[i]) {
        let r1 = &mut r[..width];
        r1.copy_from_slice(attn_out.row(i));
        relu_in_place(r1);
        ln1[i] = Some(layer_norm_into(
            r1,
            &w[off.ln1_gain..][..width],
            &w[off.ln1_offset..][..width],
            LAYER_NORM_EPS,
            h1.row_mut(i),
        ));
        let zi = z2.row_mut(i);
        vec_mat(h1.row(i), &w[off.trunk_w..][..width * hidden], hidden, zi);
        axpy(1.0, &w[off.trunk_b..][..hidden], zi);
        let r2 = &mut r[..hidden];
        r2.copy_from_slice(z2.row(i));
        relu_in_place(r2);
        ln2[i] = Some(layer_norm_into(
            r2,
            &w[off.ln2_gain..][..hidden],
            &w[off.ln2_offset..][..hidden],
            LAYER_NORM_EPS,
            h2.row_mut(i),
        ));
    }
    Ok(TrunkCache {
        attn,
        attn_out,
        ln1,
        h1,
        z2,
        ln2,
        h2,
    })
}

fn expect_kind(p: &ParamSet, kind: NetKind) -> Result<()> {
    if p.kind() != kind {
        return Err(Error::shape(format!(
            "expected {kind:?} parameters, got {:?}",
            p.kind()
        )));
    }
    Ok(())
}

pub fn policy_fwd(
    p: &ParamSet,
    obs: &ObservationBatch,
    g: &AgentGraph,
) -> Result<(GaussianPolicyOut, PolicyCache)> {
    expect_kind(p, NetKind::Policy)?;
    let trunk = trunk_fwd(p, obs, g)?;
    let arch = *p.arch();
    let (hidden, d) = (arch.hidden, arch.act_dim);
    let w = p.flat();
    let n_agents = obs.rows();
    let mut raw = Matrix::zeros(n_agents, 2 * d);
    let mut means = Matrix::zeros(n_agents, d);
    let mut log_vars = Matrix::zeros(n_agents, d);
    for i in (0..n_agents).filter(|&i| obs.valid()[i]) {
        let ri = raw.row_mut(i);
        vec_mat(trunk.h2.row(i), &w[p.off.head_w..][..hidden * 2 * d], 2 * d, ri);
        axpy(1.0, &w[p.off.head_b..][..2 * d], ri);
        means.row_mut(i).copy_from_slice(&ri[..d]);
        for (lv, &r) in log_vars.row_mut(i).iter_mut().zip(&ri[d..]) {
            *lv = r.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
        }
    }
    let out = GaussianPolicyOut::new(means, log_vars, obs.valid().to_vec())?;
    Ok((out, PolicyCache { trunk, raw }))
}

pub fn value_fwd(
    p: &ParamSet,
    obs: &ObservationBatch,
    g: &AgentGraph,
) -> Result<(f64, ValueCache)> {
    expect_kind(p, NetKind::Value)?;
    if obs.num_valid() == 0 {
        return Err(Error::NoValidAgents);
    }
    let trunk = trunk_fwd(p, obs, g)?;
    let hidden = p.arch().hidden;
    let mut pooled = vec![f64::NEG_INFINITY; hidden];
    let mut argmax = vec![0; hidden];
    for i in (0..obs.rows()).filter(|&i| obs.valid()[i]) {
        for (k, &val) in trunk.h2.row(i).iter().enumerate() {
            if val > pooled[k] {
                pooled[k] = val;
                argmax[k] = i;
            }
        }
    }
    let w = p.flat();
    let value = dot(&pooled, &w[p.off.head_w..][..hidden]) + w[p.off.head_b];
    Ok((
        value,
        ValueCache {
            trunk,
            pooled,
            argmax,
        },
    ))
}

fn check_grad_buffers(p: &ParamSet, cache: &TrunkCache, grad: &[f64], d_obs: &Option<&mut Matrix>) -> Result<()> {
    if grad.len() != p.len() {
        return Err(Error::shape(format!(
            "gradient buffer has {} entries, network has {}",
            grad.len(),
            p.len()
        )));
    }
    if cache.h1.cols() != p.arch().attn_width() || cache.h2.cols() != p.arch().hidden {
        return Err(Error::shape("cache was produced by a different architecture"));
    }
    if let Some(d) = d_obs {
        if d.shape() != cache.attn.obs.shape() {
            return Err(Error::shape("observation gradient buffer has the wrong shape"));
        }
    }
    Ok(())
}

/// Accumulates into `grad` the gradient of a loss whose partials with respect
/// to the policy outputs are `d_means` and `d_log_vars`. Pad rows are ignored.
pub fn policy_backward(
    p: &ParamSet,
    cache: &PolicyCache,
    d_means: &Matrix,
    d_log_vars: &Matrix,
    grad: &mut [f64],
    d_obs: Option<&mut Matrix>,
) -> Result<()> {
    expect_kind(p, NetKind::Policy)?;
    check_grad_buffers(p, &cache.trunk, grad, &d_obs)?;
    let arch = *p.arch();
    let (hidden, d) = (arch.hidden, arch.act_dim);
    let n_agents = cache.raw.rows();
    if d_means.shape() != (n_agents, d) || d_log_vars.shape() != (n_agents, d) {
        return Err(Error::shape("upstream gradient does not match the cached outputs"));
    }
    let w = p.flat();
    let off = p.off;
    let mut dh2 = Matrix::zeros(n_agents, hidden);
    let mut draw = vec![0.0; 2 * d];
    for i in (0..n_agents).filter(|&i| cache.trunk.attn.valid[i]) {
        draw[..d].copy_from_slice(d_means.row(i));
        for k in 0..d {
            let r = cache.raw.get(i, d + k);
            draw[d + k] = if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&r) {
                d_log_vars.get(i, k)
            } else {
                0.0
            };
        }
        outer_acc(cache.trunk.h2.row(i), &draw, &mut grad[off.head_w..][..hidden * 2 * d]);
        axpy(1.0, &draw, &mut grad[off.head_b..][..2 * d]);
        vec_mat_t_acc(&draw, &w[off.head_w..][..hidden * 2 * d], dh2.row_mut(i));
    }
    trunk_backward(p, &cache.trunk, &dh2, grad, d_obs)
}

/// Accumulates into `grad` the gradient of `d_value · V`.
pub fn value_backward(
    p: &ParamSet,
    cache: &ValueCache,
    d_value: f64,
    grad: &mut [f64],
    d_obs: Option<&mut Matrix>,
) -> Result<()> {
    expect_kind(p, NetKind::Value)?;
    check_grad_buffers(p, &cache.trunk, grad, &d_obs)?;
    let hidden = p.arch().hidden;
    let off = p.off;
    let w = p.flat();
    axpy(d_value, &cache.pooled, &mut grad[off.head_w..][..hidden]);
    grad[off.head_b] += d_value;
    let mut dh2 = Matrix::zeros(cache.trunk.h2.rows(), hidden);
    for (k, &i) in cache.argmax.iter().enumerate() {
        dh2.set(i, k, dh2.get(i, k) + d_value * w[off.head_w + k]);
    }
    trunk_backward(p, &cache.trunk, &dh2, grad, d_obs)
}

fn trunk_backward(
    p: &ParamSet,
    cache: &TrunkCache,
    dh2: &Matrix,
    grad: &mut [f64],
    d_obs: Option<&mut Matrix>,
) -> Result<()> {
    let arch = *p.arch();
    let (width, hidden) = (arch.attn_width(), arch.hidden);
    let off = p.off;
    let w = p.flat();
    let n_agents = dh2.rows();
    let mut d_attn = Matrix::zeros(n_agents, width);
    let mut dz = vec![0.0; hidden];
    let mut dh1 = vec![0.0; width];
    for i in 0..n_agents {
        let (Some(c1), Some(c2)) = (&cache.ln1[i], &cache.ln2[i]) else {
            continue;
        };
        dz.fill(0.0);
        {
            let (dg, doff) = grad[off.ln2_gain..off.ln2_gain + 2 * hidden].split_at_mut(hidden);
            layer_norm_bwd_acc(c2, &w[off.ln2_gain..][..hidden], dh2.row(i), &mut dz, dg, doff);
        }
        for (d, &z) in dz.iter_mut().zip(cache.z2.row(i)) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        outer_acc(cache.h1.row(i), &dz, &mut grad[off.trunk_w..][..width * hidden]);
        axpy(1.0, &dz, &mut grad[off.trunk_b..][..hidden]);
        dh1.fill(0.0);
        vec_mat_t_acc(&dz, &w[off.trunk_w..][..width * hidden], &mut dh1);
        let da = d_attn.row_mut(i);
        {
            let (dg, doff) = grad[off.ln1_gain..off.ln1_gain + 2 * width].split_at_mut(width);
            layer_norm_bwd_acc(c1, &w[off.ln1_gain..][..width], &dh1, da, dg, doff);
        }
        for (d, &a) in da.iter_mut().zip(cache.attn_out.row(i)) {
            if a <= 0.0 {
                *d = 0.0;
            }
        }
    }
    attention_backward(p, &cache.attn, &d_attn, grad, d_obs)
}

fn attention_backward(
    p: &ParamSet,
    cache: &AttnCache,
    d_out: &Matrix,
    grad: &mut [f64],
    d_obs: Option<&mut Matrix>,
) -> Result<()> {
    let arch = *p.arch();
    let (n, m, heads, classes) = (arch.obs_dim, arch.head_dim, arch.heads, arch.classes);
    let width = arch.attn_width();
    let off = p.off;
    let w = p.flat();
    let g = &cache.graph;
    let valid = &cache.valid;
    let n_agents = cache.obs.rows();
    let n_edges = g.num_edges();
    let scale = 1.0 / (m as f64).sqrt();

    let mut dq = Matrix::zeros(n_agents, width);
    let mut dk = Matrix::zeros(n_agents, width);
    let mut dv = Matrix::zeros(n_agents, width);
    let mut dalpha = Vec::new();
    let mut buf = vec![0.0; m];
    for i in (0..n_agents).filter(|&i| valid[i]) {
        let nbrs = g.out_edges(i);
        let base = g.edge_offset(i);
        for h in 0..heads {
            let cols = h * m..(h + 1) * m;
            let douti = &d_out.row(i)[cols.clone()];
            if douti.iter().all(|&x| x == 0.0) {
                continue;
            }
            let a = &cache.alpha[h * n_edges + base..h * n_edges + base + nbrs.len()];
            dalpha.clear();
            dalpha.resize(nbrs.len(), 0.0);
            for (e, nb) in nbrs.iter().enumerate() {
                if !valid[nb.index] {
                    continue;
                }
                let row = (h * classes + nb.class) * m;
                let av = &w[off.av + row..][..m];
                dalpha[e] = dot(douti, &cache.v.row(nb.index)[cols.clone()]) + dot(douti, av);
                axpy(a[e], douti, &mut dv.row_mut(nb.index)[cols.clone()]);
                axpy(a[e], douti, &mut grad[off.av + row..][..m]);
            }
            let s: f64 = a.iter().zip(&dalpha).map(|(x, y)| x * y).sum();
            let qi: Vec<f64> = cache.q.row(i)[cols.clone()].to_vec();
            for (e, nb) in nbrs.iter().enumerate() {
                if !valid[nb.index] {
                    continue;
                }
                let de = a[e] * (dalpha[e] - s) * scale;
                let row = (h * classes + nb.class) * m;
                let ak = &w[off.ak + row..][..m];
                for ((b, &kj), &akv) in buf.iter_mut().zip(&cache.k.row(nb.index)[cols.clone()]).zip(ak) {
                    *b = kj + akv;
                }
                axpy(de, &buf, &mut dq.row_mut(i)[cols.clone()]);
                axpy(de, &qi, &mut dk.row_mut(nb.index)[cols.clone()]);
                axpy(de, &qi, &mut grad[off.ak + row..][..m]);
            }
        }
    }

    let mut d_obs = d_obs;
    for j in (0..n_agents).filter(|&j| valid[j]) {
        let xj = cache.obs.row(j);
        for h in 0..heads {
            let cols = h * m..(h + 1) * m;
            let blk = h * n * m..(h + 1) * n * m;
            for (base, dmat) in [(off.wq, &dq), (off.wk, &dk), (off.wv, &dv)] {
                let dy = &dmat.row(j)[cols.clone()];
                outer_acc(xj, dy, &mut grad[base..][blk.clone()]);
                if let Some(dx) = d_obs.as_deref_mut() {
                    vec_mat_t_acc(dy, &w[base..][blk.clone()], dx.row_mut(j));
                }
            }
        }
    }
    Ok(())
}
