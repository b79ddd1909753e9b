//! Estimator parameters and the versioned JSON checkpoint.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::HashedEmbedder;
use super::gru::{GruTower, GruTrace};
use super::head::LinearHead;
use super::RpcHyper;
use crate::seed;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "pdplan-estimator";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Default per-weight initialization half-width.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Hash buckets in the embedding table.
    pub vocab: usize,
    /// Embedding width.
    pub embed: usize,
    /// Recurrent hidden width.
    pub hidden: usize,
    /// Head output width, shared by both towers.
    pub out: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            vocab: 4096,
            embed: 64,
            hidden: 64,
            out: 64,
        }
    }
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.embed == 0 || self.hidden == 0 || self.out == 0 {
            return Err(Error::Config(format!(
                "all dims must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Action,
    Context,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Action => "action tower",
            Side::Context => "context tower",
        }
    }
}

/// Both towers. The context tower reads from `context_embedder` when it is
/// present and from the shared `action_embedder` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    pub dims: Dims,
    pub action_embedder: HashedEmbedder,
    pub context_embedder: Option<HashedEmbedder>,
    pub action_gru: GruTower,
    pub action_head: LinearHead,
    pub context_gru: GruTower,
    pub context_head: LinearHead,
}

/// Forward activations of one tower on one text.
#[derive(Debug, Clone)]
pub struct TowerPass {
    pub rows: Vec<usize>,
    pub trace: GruTrace,
    pub out: Vec<f64>,
}

impl EstimatorParams {
    /// Seeded uniform init in `[-scale, scale]` with zero biases.
    pub fn init(dims: Dims, shared_embedder: bool, scale: f64, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = seed::rng(seed);
        let action_embedder = HashedEmbedder::new(dims.vocab, dims.embed, scale, &mut rng);
        let context_embedder = (!shared_embedder)
            .then(|| HashedEmbedder::new(dims.vocab, dims.embed, scale, &mut rng));
        Ok(EstimatorParams {
            dims,
            action_embedder,
            context_embedder,
            action_gru: GruTower::init(dims.embed, dims.hidden, scale, &mut rng),
            action_head: LinearHead::init(dims.hidden, dims.out, scale, &mut rng),
            context_gru: GruTower::init(dims.embed, dims.hidden, scale, &mut rng),
            context_head: LinearHead::init(dims.hidden, dims.out, scale, &mut rng),
        })
    }

    pub fn zeros(dims: Dims, shared_embedder: bool) -> Self {
        let emb = || HashedEmbedder {
            table: super::tensor::Matrix::zeros(dims.vocab, dims.embed),
        };
        EstimatorParams {
            dims,
            action_embedder: emb(),
            context_embedder: (!shared_embedder).then(emb),
            action_gru: GruTower::zeros(dims.embed, dims.hidden),
            action_head: LinearHead::zeros(dims.hidden, dims.out),
            context_gru: GruTower::zeros(dims.embed, dims.hidden),
            context_head: LinearHead::zeros(dims.hidden, dims.out),
        }
    }

    pub fn shared_embedder(&self) -> bool {
        self.context_embedder.is_none()
    }

    pub fn embedder(&self, side: Side) -> &HashedEmbedder {
        match side {
            Side::Action => &self.action_embedder,
            Side::Context => self
                .context_embedder
                .as_ref()
                .unwrap_or(&self.action_embedder),
        }
    }

    pub fn tower(&self, side: Side) -> (&GruTower, &LinearHead) {
        match side {
            Side::Action => (&self.action_gru, &self.action_head),
            Side::Context => (&self.context_gru, &self.context_head),
        }
    }

    /// Runs one tower on `text`, keeping activations for backprop.
    pub fn pass(&self, side: Side, text: &str) -> Result<TowerPass> {
        let emb = self.embedder(side);
        let rows = emb.token_rows(text);
        self.pass_rows(side, rows)
    }

    pub fn pass_rows(&self, side: Side, rows: Vec<usize>) -> Result<TowerPass> {
        let emb = self.embedder(side);
        let (gru, head) = self.tower(side);
        let seq = emb.rows(&rows);
        let trace = gru.forward(&seq)?;
        let out = head.forward(trace.last());
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(side.name().to_string()));
        }
        Ok(TowerPass { rows, trace, out })
    }

    /// Head output of one tower on `text`.
    pub fn encode(&self, side: Side, text: &str) -> Result<Vec<f64>> {
        Ok(self.pass(side, text)?.out)
    }

    /// Every tensor in a fixed order, with a stable name.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> =
            vec![("embed.action".into(), &self.action_embedder.table.data[..])];
        if let Some(c) = &self.context_embedder {
            out.push(("embed.context".into(), &c.table.data));
        }
        for (prefix, gru, head) in [
            ("action", &self.action_gru, &self.action_head),
            ("context", &self.context_gru, &self.context_head),
        ] {
            out.extend(
                gru.tensors()
                    .into_iter()
                    .map(|(n, t)| (format!("{prefix}.gru.{n}"), t)),
            );
            out.extend(
                head.tensors()
                    .into_iter()
                    .map(|(n, t)| (format!("{prefix}.head.{n}"), t)),
            );
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![(
            "embed.action".into(),
            &mut self.action_embedder.table.data[..],
        )];
        if let Some(c) = &mut self.context_embedder {
            out.push(("embed.context".into(), &mut c.table.data));
        }
        for (prefix, gru, head) in [
            ("action", &mut self.action_gru, &mut self.action_head),
            ("context", &mut self.context_gru, &mut self.context_head),
        ] {
            out.extend(
                gru.tensors_mut()
                    .into_iter()
                    .map(|(n, t)| (format!("{prefix}.gru.{n}"), t)),
            );
            out.extend(
                head.tensors_mut()
                    .into_iter()
                    .map(|(n, t)| (format!("{prefix}.head.{n}"), t)),
            );
        }
        out
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let d = self.dims;
        let mut out = vec![(d.vocab, d.embed)];
        if self.context_embedder.is_some() {
            out.push((d.vocab, d.embed));
        }
        for (gru, head) in [
            (&self.action_gru, &self.action_head),
            (&self.context_gru, &self.context_head),
        ] {
            out.extend(gru.shapes());
            out.extend(head.shapes());
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    dims: Dims,
    shared_embedder: bool,
    hyper: RpcHyper,
    tensors: Vec<TensorRecord>,
}

/// Writes parameters and the transform hyperparameters used with them.
pub fn save_checkpoint(
    params: &EstimatorParams,
    hyper: &RpcHyper,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let tensors = params
        .tensors()
        .into_iter()
        .zip(params.shapes())
        .map(|((name, data), (r, c))| TensorRecord {
            name,
            shape: [r, c],
            data: data.to_vec(),
        })
        .collect();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dims: params.dims,
        shared_embedder: params.shared_embedder(),
        hyper: *hyper,
        tensors,
    };
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(BufWriter::new(f), &file)?;
    Ok(())
}

/// Reads a checkpoint, rejecting any tensor whose name or shape disagrees
/// with the declared dims.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(EstimatorParams, RpcHyper)> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_reader(BufReader::new(f))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unknown format {:?}",
            file.format
        )));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            file.version
        )));
    }
    file.dims.validate()?;
    file.hyper.validate()?;
    let mut params = EstimatorParams::zeros(file.dims, file.shared_embedder);
    let shapes = params.shapes();
    let mut slots = params.tensors_mut();
    if slots.len() != file.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            slots.len(),
            file.tensors.len()
        )));
    }
    for (((name, slot), (r, c)), rec) in slots.iter_mut().zip(shapes).zip(&file.tensors) {
        if *name != rec.name {
            return Err(Error::Checkpoint(format!(
                "expected tensor {name}, found {}",
                rec.name
            )));
        }
        if rec.shape != [r, c] || rec.data.len() != r * c {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {:?} with {} values does not match dims ({r}, {c})",
                rec.shape,
                rec.data.len()
            )));
        }
        slot.copy_from_slice(&rec.data);
    }
    drop(slots);
    if !params.all_finite() {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok((params, file.hyper))
}
