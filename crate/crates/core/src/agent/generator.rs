use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{markup, parse_instruction};
use crate::dataset::{Action, PromptRecord};
use crate::{seed, Error, Result};

/// A black-box text generator: instruction in, raw generation out.
pub trait ActionGenerator: Send + Sync {
    fn generate(&self, instruction: &str) -> Result<String>;
}

impl<G: ActionGenerator + ?Sized> ActionGenerator for Arc<G> {
    fn generate(&self, instruction: &str) -> Result<String> {
        (**self).generate(instruction)
    }
}

impl<G: ActionGenerator + ?Sized> ActionGenerator for Box<G> {
    fn generate(&self, instruction: &str) -> Result<String> {
        (**self).generate(instruction)
    }
}

/// Unknown prompts get this many vocabulary actions as a stand-in truth.
const UNKNOWN_PROMPT_ACTIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockGeneratorConfig {
    pub seed: u64,
    pub distractor_rate: f64,
    pub vocabulary: Vec<Action>,
    /// Prompt to canonical truth. The first record with a prompt wins.
    pub truths: HashMap<String, Vec<Action>>,
}

impl MockGeneratorConfig {
    pub fn new(
        seed: u64,
        distractor_rate: f64,
        vocabulary: Vec<Action>,
        truths: HashMap<String, Vec<Action>>,
    ) -> Result<Self> {
        let cfg = MockGeneratorConfig {
            seed,
            distractor_rate,
            vocabulary,
            truths,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Vocabulary and truths taken from `records`.
    pub fn from_records(records: &[PromptRecord], seed: u64, distractor_rate: f64) -> Result<Self> {
        let mut truths = HashMap::new();
        for r in records {
            truths
                .entry(r.prompt.clone())
                .or_insert_with(|| r.actions.clone());
        }
        Self::new(
            seed,
            distractor_rate,
            crate::dataset::action_vocabulary(records),
            truths,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::Config(format!(
                "distractor_rate must be in [0, 1], got {}",
                self.distractor_rate
            )));
        }
        if self.vocabulary.is_empty() {
            return Err(Error::Config("mock generator vocabulary is empty".into()));
        }
        Ok(())
    }
}

/// Deterministic stand-in for a fine-tuned model. Emits the remaining true
/// actions in canonical order, with each one independently accompanied by
/// a vocabulary distractor at a random position.
#[derive(Debug, Clone)]
pub struct MockGenerator {
    config: Arc<MockGeneratorConfig>,
    bound: Option<(Vec<Action>, u64)>,
}

impl MockGenerator {
    pub fn new(config: MockGeneratorConfig) -> Result<Self> {
        config.validate()?;
        Ok(MockGenerator {
            config: Arc::new(config),
            bound: None,
        })
    }

    pub fn shared(config: Arc<MockGeneratorConfig>) -> Result<Self> {
        config.validate()?;
        Ok(MockGenerator {
            config,
            bound: None,
        })
    }

    /// A generator tied to one record's truth, with its own random stream.
    /// Needed when several records share a prompt.
    pub fn bound_to(&self, truth: Vec<Action>, stream: u64) -> Self {
        MockGenerator {
            config: Arc::clone(&self.config),
            bound: Some((truth, stream)),
        }
    }

    pub fn config(&self) -> &MockGeneratorConfig {
        &self.config
    }

    fn truth_for(&self, prompt: &str) -> Vec<Action> {
        if let Some((truth, _)) = &self.bound {
            return truth.clone();
        }
        if let Some(t) = self.config.truths.get(prompt) {
            return t.clone();
        }
        let mut rng = seed::rng(seed::derive_text(self.config.seed, prompt));
        let k = UNKNOWN_PROMPT_ACTIONS.min(self.config.vocabulary.len());
        self.config
            .vocabulary
            .choose_multiple(&mut rng, k)
            .cloned()
            .collect()
    }
}

impl ActionGenerator for MockGenerator {
    fn generate(&self, instruction: &str) -> Result<String> {
        let ctx = parse_instruction(instruction)
            .ok_or_else(|| Error::Generator("mock cannot parse instruction".into()))?;
        let truth = self.truth_for(&ctx.prompt);
        let remaining: Vec<Action> = truth
            .iter()
            .filter(|a| !ctx.history.contains(a))
            .cloned()
            .collect();

        let stream = self.bound.as_ref().map_or(0, |(_, s)| *s);
        let mut rng = seed::rng(seed::derive_text(
            seed::derive(self.config.seed, stream),
            instruction,
        ));
        let mut pool: Vec<&Action> = self
            .config
            .vocabulary
            .iter()
            .filter(|a| !truth.contains(a) && !ctx.history.contains(a))
            .collect();

        let mut out = remaining;
        let n_true = out.len();
        for _ in 0..n_true {
            if rng.gen_bool(self.config.distractor_rate) && !pool.is_empty() {
                let d = pool.swap_remove(rng.gen_range(0..pool.len())).clone();
                let at = rng.gen_range(0..=out.len());
                out.insert(at, d);
            }
        }
        Ok(out.iter().map(markup).collect::<Vec<_>>().join(", "))
    }
}

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpGeneratorConfig {
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub headers: Option<BTreeMap<String, String>>,
}

#[derive(Serialize)]
struct GenRequest<'a> {
    instruction: &'a str,
}

#[derive(Deserialize)]
struct GenResponse {
    text: String,
}

/// Client for an external generator: `POST {instruction}` answered by
/// `{text}`. One retry on failure.
pub struct HttpGenerator {
    config: HttpGeneratorConfig,
    agent: ureq::Agent,
}

impl HttpGenerator {
    pub fn new(config: HttpGeneratorConfig) -> Result<Self> {
        if config.url.is_empty() {
            return Err(Error::Config("generator url is empty".into()));
        }
        if config.timeout_ms == 0 {
            return Err(Error::Config(
                "generator timeout_ms must be positive".into(),
            ));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(true)
            .build()
            .into();
        Ok(HttpGenerator { config, agent })
    }

    pub fn config(&self) -> &HttpGeneratorConfig {
        &self.config
    }

    fn attempt(&self, instruction: &str) -> std::result::Result<String, String> {
        let mut req = self.agent.post(&self.config.url);
        for (k, v) in self.config.headers.iter().flatten() {
            req = req.header(k.as_str(), v.as_str());
        }
        let resp = req
            .send_json(GenRequest { instruction })
            .map_err(|e| e.to_string())?;
        let body: GenResponse = resp.into_body().read_json().map_err(|e| e.to_string())?;
        Ok(body.text)
    }
}

impl ActionGenerator for HttpGenerator {
    fn generate(&self, instruction: &str) -> Result<String> {
        match self.attempt(instruction) {
            Ok(t) => Ok(t),
            Err(first) => {
                log::warn!("generator call failed, retrying once: {first}");
                self.attempt(instruction)
                    .map_err(|e| Error::Generator(format!("{} failed twice: {e}", self.config.url)))
            }
        }
    }
}
