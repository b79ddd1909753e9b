//! Reverse-mode gradients of the objective with respect to every parameter.

use std::collections::{BTreeMap, HashMap};

use crate::dataset::PairBatch;
use crate::estimator::params::TowerPass;
use crate::estimator::tensor::{add_assign, axpy, dot};
use crate::estimator::{EstimatorParams, GruTower, LinearHead, RpcHyper, Side};
use crate::par::{self, Exec};
use crate::trainer::objective::{rpc_grad_scores, rpc_objective};
use crate::{Error, Result};

/// Texts processed per reduction chunk. Fixed so the summation order does
/// not depend on how many threads run.
const CHUNK: usize = 8;

/// Rendered `(context, action)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextPairBatch {
    pub positives: Vec<(String, String)>,
    pub negatives: Vec<(String, String)>,
}

impl From<&PairBatch> for TextPairBatch {
    fn from(b: &PairBatch) -> Self {
        let render = |v: &[(crate::dataset::Context, crate::dataset::Action)]| {
            v.iter().map(|(c, a)| (c.render(), a.render())).collect()
        };
        TextPairBatch {
            positives: render(&b.positives),
            negatives: render(&b.negatives),
        }
    }
}

/// Gradient of the objective, mirroring [`EstimatorParams`]. Embedding
/// gradients are sparse: only rows touched by the batch appear. When the
/// embedder is shared, context-tower rows land in `action_embed`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub action_embed: BTreeMap<usize, Vec<f64>>,
    pub context_embed: BTreeMap<usize, Vec<f64>>,
    pub action_gru: GruTower,
    pub action_head: LinearHead,
    pub context_gru: GruTower,
    pub context_head: LinearHead,
}

impl Gradients {
    pub fn zeros(params: &EstimatorParams) -> Self {
        let d = params.dims;
        Gradients {
            action_embed: BTreeMap::new(),
            context_embed: BTreeMap::new(),
            action_gru: GruTower::zeros(d.embed, d.hidden),
            action_head: LinearHead::zeros(d.hidden, d.out),
            context_gru: GruTower::zeros(d.embed, d.hidden),
            context_head: LinearHead::zeros(d.hidden, d.out),
        }
    }

    fn merge(&mut self, other: Gradients) {
        for (dst, src) in [
            (&mut self.action_embed, other.action_embed),
            (&mut self.context_embed, other.context_embed),
        ] {
            for (row, g) in src {
                match dst.get_mut(&row) {
                    Some(d) => add_assign(d, &g),
                    None => {
                        dst.insert(row, g);
                    }
                }
            }
        }
        self.action_gru.add_assign(&other.action_gru);
        self.action_head.add_assign(&other.action_head);
        self.context_gru.add_assign(&other.context_gru);
        self.context_head.add_assign(&other.context_head);
    }

    /// Dense copy laid out like `params.tensors()`.
    pub fn to_dense(&self, params: &EstimatorParams) -> Vec<Vec<f64>> {
        let d = params.dims;
        let dense_table = |rows: &BTreeMap<usize, Vec<f64>>| {
            let mut t = vec![0.0; d.vocab * d.embed];
            for (r, g) in rows {
                t[r * d.embed..(r + 1) * d.embed].copy_from_slice(g);
            }
            t
        };
        let mut out = vec![dense_table(&self.action_embed)];
        if !params.shared_embedder() {
            out.push(dense_table(&self.context_embed));
        }
        for (gru, head) in [
            (&self.action_gru, &self.action_head),
            (&self.context_gru, &self.context_head),
        ] {
            out.extend(gru.tensors().into_iter().map(|(_, t)| t.to_vec()));
            out.extend(head.tensors().into_iter().map(|(_, t)| t.to_vec()));
        }
        out
    }

    pub fn norm(&self) -> f64 {
        let mut sq = 0.0;
        for rows in [&self.action_embed, &self.context_embed] {
            sq += rows
                .values()
                .flat_map(|g| g.iter())
                .map(|v| v * v)
                .sum::<f64>();
        }
        for (gru, head) in [
            (&self.action_gru, &self.action_head),
            (&self.context_gru, &self.context_head),
        ] {
            for (_, t) in gru.tensors().into_iter().chain(head.tensors()) {
                sq += t.iter().map(|v| v * v).sum::<f64>();
            }
        }
        sq.sqrt()
    }

    /// Name of the first tensor holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        for (name, rows) in [
            ("embed.action", &self.action_embed),
            ("embed.context", &self.context_embed),
        ] {
            if rows.values().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Some(name.to_string());
            }
        }
        for (prefix, gru, head) in [
            ("action", &self.action_gru, &self.action_head),
            ("context", &self.context_gru, &self.context_head),
        ] {
            for (n, t) in gru.tensors() {
                if t.iter().any(|v| !v.is_finite()) {
                    return Some(format!("{prefix}.gru.{n}"));
                }
            }
            for (n, t) in head.tensors() {
                if t.iter().any(|v| !v.is_finite()) {
                    return Some(format!("{prefix}.head.{n}"));
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone)]
pub struct BackwardOutput {
    pub objective: f64,
    pub s_pos: Vec<f64>,
    pub s_neg: Vec<f64>,
    pub grads: Gradients,
}

/// Interns texts in first-seen order.
#[derive(Default)]
struct Interner<'a> {
    index: HashMap<&'a str, usize>,
    texts: Vec<&'a str>,
}

impl<'a> Interner<'a> {
    fn id(&mut self, s: &'a str) -> usize {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        self.texts.push(s);
        self.index.insert(s, self.texts.len() - 1);
        self.texts.len() - 1
    }
}

/// Objective value and its exact gradient (for ascent) on one batch.
///
/// Each distinct text goes through its tower once; negatives that reuse a
/// positive's context or action share its activations.
pub fn backward(
    params: &EstimatorParams,
    batch: &TextPairBatch,
    hyper: &RpcHyper,
    exec: Exec,
) -> Result<BackwardOutput> {
    let mut actions = Interner::default();
    let mut contexts = Interner::default();
    let pos_ix: Vec<(usize, usize)> = batch
        .positives
        .iter()
        .map(|(c, a)| (actions.id(a), contexts.id(c)))
        .collect();
    let neg_ix: Vec<(usize, usize)> = batch
        .negatives
        .iter()
        .map(|(c, a)| (actions.id(a), contexts.id(c)))
        .collect();

    let jobs: Vec<(Side, &str)> = actions
        .texts
        .iter()
        .map(|t| (Side::Action, *t))
        .chain(contexts.texts.iter().map(|t| (Side::Context, *t)))
        .collect();
    let passes: Vec<TowerPass> = par::map(exec, &jobs, |(side, text)| params.pass(*side, text))
        .into_iter()
        .collect::<Result<_>>()?;
    let (a_pass, c_pass) = passes.split_at(actions.texts.len());

    let score = |&(a, c): &(usize, usize)| dot(&a_pass[a].out, &c_pass[c].out);
    let s_pos: Vec<f64> = pos_ix.iter().map(score).collect();
    let s_neg: Vec<f64> = neg_ix.iter().map(score).collect();
    let objective = rpc_objective(&s_pos, &s_neg, hyper)?;
    let (g_pos, g_neg) = rpc_grad_scores(&s_pos, &s_neg, hyper)?;

    let k = params.dims.out;
    let mut d_out: Vec<Vec<f64>> = vec![vec![0.0; k]; jobs.len()];
    let n_act = actions.texts.len();
    for (ix, g) in pos_ix.iter().zip(&g_pos).chain(neg_ix.iter().zip(&g_neg)) {
        let (a, c) = *ix;
        axpy(*g, &c_pass[c].out, &mut d_out[a]);
        axpy(*g, &a_pass[a].out, &mut d_out[n_act + c]);
    }

    let shared = params.shared_embedder();
    let work: Vec<usize> = (0..jobs.len()).collect();
    let grads = par::chunked_fold(
        exec,
        &work,
        CHUNK,
        || Gradients::zeros(params),
        |acc, &j| {
            let side = jobs[j].0;
            let pass = &passes[j];
            let (gru, head) = params.tower(side);
            let (g_gru, g_head, g_emb) = match side {
                Side::Action => (
                    &mut acc.action_gru,
                    &mut acc.action_head,
                    &mut acc.action_embed,
                ),
                Side::Context if shared => (
                    &mut acc.context_gru,
                    &mut acc.context_head,
                    &mut acc.action_embed,
                ),
                Side::Context => (
                    &mut acc.context_gru,
                    &mut acc.context_head,
                    &mut acc.context_embed,
                ),
            };
            let dh = head.backward(pass.trace.last(), &d_out[j], g_head);
            let seq = params.embedder(side).rows(&pass.rows);
            let dx = gru.backward(&seq, &pass.trace, &dh, g_gru);
            for (row, g) in pass.rows.iter().zip(dx) {
                match g_emb.get_mut(row) {
                    Some(d) => add_assign(d, &g),
                    None => {
                        g_emb.insert(*row, g);
                    }
                }
            }
        },
        |a, b| a.merge(b),
    )
    .ok_or_else(|| Error::Config("empty batch".into()))?;

    if let Some(name) = grads.first_non_finite() {
        return Err(Error::Numeric(format!("gradient of {name}")));
    }
    Ok(BackwardOutput {
        objective,
        s_pos,
        s_neg,
        grads,
    })
}

/// Objective only, without building gradients.
pub fn batch_objective(
    params: &EstimatorParams,
    batch: &TextPairBatch,
    hyper: &RpcHyper,
) -> Result<f64> {
    let score = |(c, a): &(String, String)| -> Result<f64> {
        let u = params.encode(Side::Action, a)?;
        let v = params.encode(Side::Context, c)?;
        Ok(dot(&u, &v))
    };
    let s_pos: Vec<f64> = batch.positives.iter().map(score).collect::<Result<_>>()?;
    let s_neg: Vec<f64> = batch.negatives.iter().map(score).collect::<Result<_>>()?;
    rpc_objective(&s_pos, &s_neg, hyper)
}
