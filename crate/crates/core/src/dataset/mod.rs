//! Text-pair data model, corpus splitting, context rendering and contrastive
//! pair sampling.

mod synth;

pub use synth::{default_templates, generate_synthetic, GenConfig, SceneTemplate};

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed::{self, Rng};
use crate::{Error, Result};

/// Separator between device and setting in rendered actions.
pub const ACTION_SEP: &str = " : ";
/// Separator between the prompt and each rendered history action.
pub const HISTORY_SEP: &str = ", ";

/// A device/setting command, the atomic decision unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawAction")]
pub struct Action {
    pub device: String,
    pub setting: String,
}

#[derive(Deserialize)]
struct RawAction {
    device: String,
    setting: String,
}

impl TryFrom<RawAction> for Action {
    type Error = Error;

    fn try_from(raw: RawAction) -> Result<Self> {
        Action::new(raw.device, raw.setting)
    }
}

impl Action {
    /// Builds an action from trimmed labels; both must be non-empty.
    pub fn new(device: impl AsRef<str>, setting: impl AsRef<str>) -> Result<Self> {
        let device = device.as_ref().trim();
        let setting = setting.as_ref().trim();
        if device.is_empty() || setting.is_empty() {
            return Err(Error::Config(format!(
                "action needs non-empty device and setting, got {device:?} / {setting:?}"
            )));
        }
        Ok(Action {
            device: device.to_string(),
            setting: setting.to_string(),
        })
    }

    /// `device : setting`.
    pub fn render(&self) -> String {
        format!("{}{ACTION_SEP}{}", self.device, self.setting)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{ACTION_SEP}{}", self.device, self.setting)
    }
}

/// A user prompt with its annotated actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord")]
pub struct PromptRecord {
    pub prompt: String,
    pub actions: Vec<Action>,
}

#[derive(Deserialize)]
struct RawRecord {
    prompt: String,
    actions: Vec<Action>,
}

impl TryFrom<RawRecord> for PromptRecord {
    type Error = Error;

    fn try_from(raw: RawRecord) -> Result<Self> {
        PromptRecord::new(raw.prompt, raw.actions)
    }
}

impl PromptRecord {
    pub fn new(prompt: impl Into<String>, actions: Vec<Action>) -> Result<Self> {
        let prompt = prompt.into();
        if prompt.trim().is_empty() {
            return Err(Error::Config("prompt must be non-empty".into()));
        }
        if actions.is_empty() {
            return Err(Error::Config("record needs at least one action".into()));
        }
        let mut seen = HashSet::new();
        for a in &actions {
            if !seen.insert(a) {
                return Err(Error::Config(format!("duplicate action {a} in record")));
            }
        }
        Ok(PromptRecord { prompt, actions })
    }

    pub fn contains(&self, action: &Action) -> bool {
        self.actions.contains(action)
    }

    /// Every `(prefix, next)` pair under the stored action order.
    pub fn step_pairs(&self) -> impl Iterator<Item = (Context, Action)> + '_ {
        (0..self.actions.len()).map(move |k| {
            let ctx = Context {
                prompt: self.prompt.clone(),
                history: self.actions[..k].to_vec(),
            };
            (ctx, self.actions[k].clone())
        })
    }
}

/// A user prompt plus the ordered actions already executed for it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Context {
    pub prompt: String,
    #[serde(default)]
    pub history: Vec<Action>,
}

impl Context {
    pub fn new(prompt: impl Into<String>) -> Self {
        Context {
            prompt: prompt.into(),
            history: Vec::new(),
        }
    }

    pub fn with_history(prompt: impl Into<String>, history: Vec<Action>) -> Result<Self> {
        let mut ctx = Context::new(prompt);
        for a in history {
            ctx.push(a)?;
        }
        Ok(ctx)
    }

    /// Appends an executed action; repeats are rejected.
    pub fn push(&mut self, action: Action) -> Result<()> {
        if self.history.contains(&action) {
            return Err(Error::State(format!("action {action} already executed")));
        }
        self.history.push(action);
        Ok(())
    }

    /// Prompt followed by the comma-joined history, in execution order.
    pub fn render(&self) -> String {
        render_context(self)
    }
}

pub fn render_context(ctx: &Context) -> String {
    let mut out = ctx.prompt.clone();
    for a in &ctx.history {
        out.push_str(HISTORY_SEP);
        out.push_str(&a.device);
        out.push_str(ACTION_SEP);
        out.push_str(&a.setting);
    }
    out
}

/// Train / calibration / evaluation partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub train: Vec<PromptRecord>,
    pub calib: Vec<PromptRecord>,
    pub eval: Vec<PromptRecord>,
}

impl DatasetSplits {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.calib.len(), self.eval.len())
    }
}

/// Which partition a command should read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Calib,
    Eval,
}

impl SplitName {
    pub fn select(self, splits: &DatasetSplits) -> &[PromptRecord] {
        match self {
            SplitName::Train => &splits.train,
            SplitName::Calib => &splits.calib,
            SplitName::Eval => &splits.eval,
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Calib => "calib",
            SplitName::Eval => "eval",
        })
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "calib" => Ok(SplitName::Calib),
            "eval" => Ok(SplitName::Eval),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

pub const DEFAULT_RATIOS: (usize, usize, usize) = (10, 1, 2);

/// Seeded random partition; calib and eval get floor-proportional sizes and
/// the remainder goes to train.
pub fn split(
    records: &[PromptRecord],
    ratios: (usize, usize, usize),
    seed: u64,
) -> Result<DatasetSplits> {
    let (rt, rc, re) = ratios;
    let total = rt + rc + re;
    if rt == 0 || rc == 0 || re == 0 {
        return Err(Error::Config(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    if records.len() < total {
        return Err(Error::TooFew {
            what: "records to split",
            required: total,
            got: records.len(),
        });
    }
    let n = records.len();
    let n_calib = n * rc / total;
    let n_eval = n * re / total;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));

    let take = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    let calib = take(&order[..n_calib]);
    let eval = take(&order[n_calib..n_calib + n_eval]);
    let train = take(&order[n_calib + n_eval..]);
    Ok(DatasetSplits { train, calib, eval })
}

/// Positive pairs drawn from the joint and negatives from the product of
/// marginals. `sources[i]` is the record behind `positives[i]` and behind the
/// context of `negatives[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub positives: Vec<(Context, Action)>,
    pub negatives: Vec<(Context, Action)>,
    pub sources: Vec<usize>,
}

/// Seeded pair sampler. Not meant to be shared across threads.
#[derive(Debug, Clone)]
pub struct PairSampler {
    rng: Rng,
}

impl PairSampler {
    pub fn new(seed: u64) -> Self {
        PairSampler {
            rng: seed::rng(seed),
        }
    }

    pub fn sample(
        &mut self,
        records: &[PromptRecord],
        batch_size: usize,
        step_extension: bool,
    ) -> Result<PairBatch> {
        if records.len() < 2 {
            return Err(Error::TooFew {
                what: "records for negative sampling",
                required: 2,
                got: records.len(),
            });
        }
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let rng = &mut self.rng;

        let sources: Vec<usize> = if batch_size <= records.len() {
            rand::seq::index::sample(rng, records.len(), batch_size).into_vec()
        } else {
            let mut out = Vec::with_capacity(batch_size);
            let mut order: Vec<usize> = (0..records.len()).collect();
            while out.len() < batch_size {
                order.shuffle(rng);
                out.extend(order.iter().take(batch_size - out.len()));
            }
            out
        };

        let positives: Vec<(Context, Action)> = sources
            .iter()
            .map(|&r| {
                let rec = &records[r];
                if step_extension {
                    let mut perm = rec.actions.clone();
                    perm.shuffle(rng);
                    let k = rng.gen_range(0..perm.len());
                    let action = perm[k].clone();
                    perm.truncate(k);
                    let ctx = Context {
                        prompt: rec.prompt.clone(),
                        history: perm,
                    };
                    (ctx, action)
                } else {
                    let action = rec.actions[rng.gen_range(0..rec.actions.len())].clone();
                    (Context::new(rec.prompt.clone()), action)
                }
            })
            .collect();

        let valid = |ctx_pos: usize, act_pos: usize| {
            sources[ctx_pos] != sources[act_pos]
                && !records[sources[ctx_pos]].contains(&positives[act_pos].1)
        };
        let targets = derange(batch_size, rng, valid, records, &sources, &positives)?;

        let negatives = targets
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let action = match t {
                    Target::InBatch(j) => positives[*j].1.clone(),
                    Target::External(a) => a.clone(),
                };
                (positives[i].0.clone(), action)
            })
            .collect();

        Ok(PairBatch {
            positives,
            negatives,
            sources,
        })
    }
}

enum Target {
    InBatch(usize),
    External(Action),
}

/// Single-cycle permutation of batch positions, repaired by swaps where a
/// target action belongs to the context's own record. Positions that cannot
/// be repaired inside the batch fall back to any valid batch action, then to
/// an action from the rest of the split.
fn derange(
    n: usize,
    rng: &mut Rng,
    valid: impl Fn(usize, usize) -> bool,
    records: &[PromptRecord],
    sources: &[usize],
    positives: &[(Context, Action)],
) -> Result<Vec<Target>> {
    let mut cycle: Vec<usize> = (0..n).collect();
    cycle.shuffle(rng);
    let mut perm = vec![0usize; n];
    for w in 0..n {
        perm[cycle[w]] = cycle[(w + 1) % n];
    }
    if n == 1 {
        perm[0] = usize::MAX;
    }

    let mut probe: Vec<usize> = (0..n).collect();
    for i in 0..n {
        if perm[i] != usize::MAX && valid(i, perm[i]) {
            continue;
        }
        probe.shuffle(rng);
        for &j in &probe {
            if j == i || perm[j] == usize::MAX || perm[i] == usize::MAX {
                continue;
            }
            if valid(i, perm[j]) && valid(j, perm[i]) {
                perm.swap(i, j);
                break;
            }
        }
    }

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if perm[i] != usize::MAX && valid(i, perm[i]) {
            out.push(Target::InBatch(perm[i]));
            continue;
        }
        let in_batch: Vec<usize> = (0..n).filter(|&k| valid(i, k)).collect();
        if let Some(&k) = in_batch.get(rng.gen_range(0..in_batch.len().max(1))) {
            out.push(Target::InBatch(k));
            continue;
        }
        let own = &records[sources[i]];
        let pool: Vec<&Action> = records
            .iter()
            .flat_map(|r| r.actions.iter())
            .filter(|a| !own.contains(a))
            .collect();
        match pool.get(rng.gen_range(0..pool.len().max(1))) {
            Some(a) => out.push(Target::External((*a).clone())),
            None => {
                return Err(Error::Config(format!(
                    "no valid negative action for context {:?}",
                    positives[i].0.prompt
                )))
            }
        }
    }
    Ok(out)
}

/// One-shot convenience over [`PairSampler`].
pub fn sample_pair_batch(
    records: &[PromptRecord],
    batch_size: usize,
    seed: u64,
    step_extension: bool,
) -> Result<PairBatch> {
    PairSampler::new(seed).sample(records, batch_size, step_extension)
}

/// Reads a JSON Lines corpus. Blank lines are skipped.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<PromptRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PromptRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_jsonl(records: &[PromptRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Every distinct action in `records`, in first-seen order.
pub fn action_vocabulary(records: &[PromptRecord]) -> Vec<Action> {
    let mut seen = HashSet::new();
    records
        .iter()
        .flat_map(|r| r.actions.iter())
        .filter(|a| seen.insert(*a))
        .cloned()
        .collect()
}
