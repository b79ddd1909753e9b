//! Two-tower point-wise dependency scorer.
//!
//! Each tower embeds its text with a hashed table, runs a GRU over the token
//! sequence and projects the last hidden state with a linear head. The raw
//! score `s*` is the inner product of the two head outputs, and the
//! estimated point-wise dependency is
//!
//! ```text
//! epd = (γ s* + α) / (1 - β s*)
//! ```
//!
//! which has a pole at `s* = 1/β`; scores are clamped into
//! `[S_MIN, 1/β - CLAMP_DELTA]` before the transform.

pub mod embed;
pub mod gru;
pub mod head;
pub mod params;
pub mod tensor;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

pub use embed::{tokenize, HashedEmbedder, SequenceEmbedder};
pub use gru::{GruTower, GruTrace};
pub use head::LinearHead;
pub use params::{load_checkpoint, save_checkpoint, Dims, EstimatorParams, Side, INIT_SCALE};

use crate::dataset::{Action, Context};
use crate::par::{self, Exec};
use crate::{Error, Result};

/// Lower clamp for raw scores.
pub const S_MIN: f64 = -50.0;
/// Distance kept from the transform's pole at `1/β`.
pub const CLAMP_DELTA: f64 = 1e-3;

/// Objective and transform coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpcHyper {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for RpcHyper {
    fn default() -> Self {
        RpcHyper {
            alpha: 1.0,
            beta: 0.005,
            gamma: 0.1,
        }
    }
}

impl RpcHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.gamma > 0.0 && self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "need beta > 0, gamma > 0, alpha >= 0; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Clamp interval applied to `s*` before transforming.
    pub fn clamp_range(&self) -> (f64, f64) {
        (S_MIN, 1.0 / self.beta - CLAMP_DELTA)
    }

    /// `(epd, clamped)`.
    pub fn transform(&self, s_star: f64) -> (f64, bool) {
        let (lo, hi) = self.clamp_range();
        let s = s_star.clamp(lo, hi);
        let clamped = s != s_star;
        (
            (self.gamma * s + self.alpha) / (1.0 - self.beta * s),
            clamped,
        )
    }

    pub fn to_epd(&self, s_star: f64) -> f64 {
        self.transform(s_star).0
    }

    /// Inverse of the transform on its clamped domain.
    pub fn from_epd(&self, epd: f64) -> f64 {
        (epd - self.alpha) / (self.beta * epd + self.gamma)
    }
}

pub fn to_epd(s_star: f64, hyper: &RpcHyper) -> f64 {
    hyper.to_epd(s_star)
}

/// A candidate action with its raw score and EPD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredAction {
    pub action: Action,
    pub s_star: f64,
    pub epd: f64,
}

/// Frozen parameters plus the transform. Scoring only needs `&self`, so one
/// estimator can serve many concurrent sessions.
#[derive(Debug)]
pub struct Estimator {
    pub params: EstimatorParams,
    pub hyper: RpcHyper,
    clamps: AtomicU64,
}

impl Clone for Estimator {
    fn clone(&self) -> Self {
        Estimator {
            params: self.params.clone(),
            hyper: self.hyper,
            clamps: AtomicU64::new(self.clamp_count()),
        }
    }
}

impl Estimator {
    pub fn new(params: EstimatorParams, hyper: RpcHyper) -> Self {
        Estimator {
            params,
            hyper,
            clamps: AtomicU64::new(0),
        }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (params, hyper) = load_checkpoint(path)?;
        Ok(Estimator::new(params, hyper))
    }

    /// How many scores have hit the clamp so far.
    pub fn clamp_count(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }

    pub fn epd(&self, s_star: f64) -> f64 {
        let (r, clamped) = self.hyper.transform(s_star);
        if clamped {
            self.clamps.fetch_add(1, Ordering::Relaxed);
        }
        r
    }

    /// Raw inner-product score between one action text and one context text.
    pub fn score_star(&self, action_text: &str, context_text: &str) -> Result<f64> {
        let u = self.params.encode(Side::Action, action_text)?;
        let v = self.params.encode(Side::Context, context_text)?;
        let s = tensor::dot(&u, &v);
        if !s.is_finite() {
            return Err(Error::Numeric("score inner product".into()));
        }
        Ok(s)
    }

    pub fn score(&self, ctx: &Context, action: &Action) -> Result<ScoredAction> {
        let s_star = self.score_star(&action.render(), &ctx.render())?;
        Ok(ScoredAction {
            action: action.clone(),
            s_star,
            epd: self.epd(s_star),
        })
    }

    /// Scores every candidate against one context, in input order. The
    /// context tower runs once.
    pub fn score_candidates(
        &self,
        ctx: &Context,
        candidates: &[Action],
    ) -> Result<Vec<ScoredAction>> {
        if candidates.is_empty() {
            return Err(Error::Config("no candidates to score".into()));
        }
        let v = self.params.encode(Side::Context, &ctx.render())?;
        candidates
            .iter()
            .map(|a| {
                let u = self.params.encode(Side::Action, &a.render())?;
                let s_star = tensor::dot(&u, &v);
                if !s_star.is_finite() {
                    return Err(Error::Numeric("score inner product".into()));
                }
                Ok(ScoredAction {
                    action: a.clone(),
                    s_star,
                    epd: self.epd(s_star),
                })
            })
            .collect()
    }

    /// Scores independent `(context, action)` pairs.
    pub fn score_pairs(
        &self,
        pairs: &[(Context, Action)],
        exec: Exec,
    ) -> Result<Vec<ScoredAction>> {
        par::map(exec, pairs, |(c, a)| self.score(c, a))
            .into_iter()
            .collect()
    }
}
