use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{generate_candidates, ActionGenerator};
use crate::conformal::prediction_set;
use crate::dataset::{Action, Context};
use crate::estimator::{Estimator, ScoredAction};
use crate::{seed, Error, Result};

pub const DEFAULT_MAX_STEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SelectionPolicy {
    Interactive,
    Random { seed: u64 },
    MaxEpd,
}

impl SelectionPolicy {
    fn pick(&self, survivors: &[ScoredAction], step: usize) -> Option<usize> {
        match self {
            SelectionPolicy::Interactive => None,
            SelectionPolicy::Random { seed } => {
                let mut rng = seed::rng(seed::derive(*seed, step as u64));
                Some(rng.gen_range(0..survivors.len()))
            }
            SelectionPolicy::MaxEpd => (0..survivors.len()).reduce(|best, i| {
                let (b, c) = (&survivors[best], &survivors[i]);
                let better = c
                    .epd
                    .total_cmp(&b.epd)
                    .then_with(|| b.action.render().cmp(&c.action.render()));
                if better.is_gt() {
                    i
                } else {
                    best
                }
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingPrompt,
    Running,
    AwaitingChoice,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    NoCandidateAboveThreshold,
    MaxSteps,
    GeneratorEmpty,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    AutoSelected(ScoredAction),
    NeedsUserChoice(Vec<ScoredAction>),
    Done(DoneReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectedBy {
    /// The only survivor.
    Single,
    Policy,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub action: ScoredAction,
    pub by: SelectedBy,
}

/// What one step saw and did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub candidates: Vec<ScoredAction>,
    pub survivors: usize,
    pub selected: Option<Selection>,
}

/// One planning conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSession {
    pub id: String,
    pub context: Context,
    pub pending: Vec<ScoredAction>,
    pub executed: Vec<Action>,
    pub status: SessionStatus,
    pub threshold: f64,
    pub step_count: usize,
    pub max_steps: usize,
    pub done_reason: Option<DoneReason>,
    pub trace: Vec<StepRecord>,
}

impl PlanSession {
    pub fn new(id: impl Into<String>, threshold: f64, max_steps: usize) -> Result<Self> {
        if threshold.is_nan() {
            return Err(Error::Config("threshold is NaN".into()));
        }
        if max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(PlanSession {
            id: id.into(),
            context: Context::new(""),
            pending: Vec::new(),
            executed: Vec::new(),
            status: SessionStatus::AwaitingPrompt,
            threshold,
            step_count: 0,
            max_steps,
            done_reason: None,
            trace: Vec::new(),
        })
    }

    fn expect(&self, status: SessionStatus, op: &str) -> Result<()> {
        if self.status != status {
            return Err(Error::State(format!(
                "cannot {op} while session is {:?}",
                self.status
            )));
        }
        Ok(())
    }

    pub fn submit_prompt(&mut self, prompt: &str) -> Result<()> {
        self.expect(SessionStatus::AwaitingPrompt, "submit a prompt")?;
        let prompt = prompt.trim();
        if prompt.is_empty() {
            return Err(Error::Config("prompt is empty".into()));
        }
        self.context = Context::new(prompt);
        self.status = SessionStatus::Running;
        Ok(())
    }

    fn finish(&mut self, reason: DoneReason) -> StepOutcome {
        self.status = SessionStatus::Done;
        self.done_reason = Some(reason);
        StepOutcome::Done(reason)
    }

    fn execute(&mut self, chosen: ScoredAction, by: SelectedBy) -> Result<()> {
        self.context.push(chosen.action.clone())?;
        self.executed.push(chosen.action.clone());
        self.step_count += 1;
        if let Some(rec) = self.trace.last_mut() {
            rec.selected = Some(Selection { action: chosen, by });
        }
        Ok(())
    }

    /// Generates, scores and filters one round of candidates. A generator
    /// failure leaves the session untouched.
    pub fn step(
        &mut self,
        estimator: &Estimator,
        generator: &dyn ActionGenerator,
        policy: &SelectionPolicy,
    ) -> Result<StepOutcome> {
        self.expect(SessionStatus::Running, "step")?;
        if self.step_count >= self.max_steps {
            return Ok(self.finish(DoneReason::MaxSteps));
        }
        let candidates = generate_candidates(generator, &self.context)?;
        if candidates.is_empty() {
            return Ok(self.finish(DoneReason::GeneratorEmpty));
        }
        let scored = estimator.score_candidates(&self.context, &candidates)?;
        let mut survivors = prediction_set(&scored, self.threshold);
        self.trace.push(StepRecord {
            candidates: scored,
            survivors: survivors.len(),
            selected: None,
        });
        match survivors.len() {
            0 => Ok(self.finish(DoneReason::NoCandidateAboveThreshold)),
            1 => {
                let only = survivors.pop().expect("one survivor");
                self.execute(only.clone(), SelectedBy::Single)?;
                Ok(StepOutcome::AutoSelected(only))
            }
            _ => match policy.pick(&survivors, self.step_count) {
                None => {
                    self.pending = survivors.clone();
                    self.status = SessionStatus::AwaitingChoice;
                    Ok(StepOutcome::NeedsUserChoice(survivors))
                }
                Some(i) => {
                    let chosen = survivors.swap_remove(i);
                    self.execute(chosen.clone(), SelectedBy::Policy)?;
                    Ok(StepOutcome::AutoSelected(chosen))
                }
            },
        }
    }

    /// Executes `pending[index]` and resumes the loop.
    pub fn choose(&mut self, index: usize) -> Result<ScoredAction> {
        self.expect(SessionStatus::AwaitingChoice, "choose")?;
        if index >= self.pending.len() {
            return Err(Error::Range {
                index,
                len: self.pending.len(),
            });
        }
        let chosen = self.pending[index].clone();
        self.execute(chosen.clone(), SelectedBy::User)?;
        self.pending.clear();
        self.status = SessionStatus::Running;
        Ok(chosen)
    }
}

/// Runs a non-interactive session to completion.
pub fn run_session(
    prompt: &str,
    estimator: &Estimator,
    threshold: f64,
    policy: &SelectionPolicy,
    generator: &dyn ActionGenerator,
    max_steps: usize,
) -> Result<PlanSession> {
    if matches!(policy, SelectionPolicy::Interactive) {
        return Err(Error::Config(
            "run_plan needs a random or max_epd policy".into(),
        ));
    }
    let mut session = PlanSession::new("batch", threshold, max_steps)?;
    session.submit_prompt(prompt)?;
    while !matches!(
        session.step(estimator, generator, policy)?,
        StepOutcome::Done(_)
    ) {}
    Ok(session)
}

/// Executed actions of [`run_session`], in order.
pub fn run_plan(
    prompt: &str,
    estimator: &Estimator,
    threshold: f64,
    policy: &SelectionPolicy,
    generator: &dyn ActionGenerator,
    max_steps: usize,
) -> Result<Vec<Action>> {
    Ok(run_session(prompt, estimator, threshold, policy, generator, max_steps)?.executed)
}

/// Single generation on the empty history, filtered once.
pub fn generate_all_at_once(
    prompt: &str,
    estimator: &Estimator,
    threshold: f64,
    generator: &dyn ActionGenerator,
) -> Result<Vec<ScoredAction>> {
    let ctx = Context::new(prompt.trim());
    let candidates = generate_candidates(generator, &ctx)?;
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let scored = estimator.score_candidates(&ctx, &candidates)?;
    Ok(prediction_set(&scored, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{MockGenerator, MockGeneratorConfig};
    use crate::estimator::{Dims, EstimatorParams, RpcHyper};
    use std::collections::HashMap;

    fn act(d: &str, s: &str) -> Action {
        Action::new(d, s).unwrap()
    }

    fn sa(d: &str, epd: f64) -> ScoredAction {
        ScoredAction {
            action: act(d, "on"),
            s_star: 0.0,
            epd,
        }
    }

    fn estimator() -> Estimator {
        let dims = Dims {
            vocab: 128,
            embed: 8,
            hidden: 8,
            out: 8,
        };
        Estimator::new(
            EstimatorParams::init(dims, true, 0.3, 5).unwrap(),
            RpcHyper::default(),
        )
    }

    fn mock(rate: f64) -> MockGenerator {
        let truth = vec![act("a1", "on"), act("a2", "on"), act("a3", "on")];
        let mut vocab = truth.clone();
        for i in 0..6 {
            vocab.push(act(&format!("d{i}"), "off"));
        }
        let truths = HashMap::from([("p".to_string(), truth)]);
        MockGenerator::new(MockGeneratorConfig::new(11, rate, vocab, truths).unwrap()).unwrap()
    }

    #[test]
    fn max_epd_ties_break_lexicographically() {
        let s = vec![sa("b", 2.0), sa("a", 2.0), sa("c", 1.0)];
        assert_eq!(SelectionPolicy::MaxEpd.pick(&s, 0), Some(1));
        let shifted: Vec<_> = s
            .iter()
            .map(|x| ScoredAction {
                epd: x.epd + 5.0,
                ..x.clone()
            })
            .collect();
        assert_eq!(SelectionPolicy::MaxEpd.pick(&shifted, 0), Some(1));
        let s = vec![sa("b", 2.206), sa("a", 1.928), sa("c", 1.837)];
        assert_eq!(SelectionPolicy::MaxEpd.pick(&s, 0), Some(0));
    }

    #[test]
    fn interactive_flow_and_state_errors() {
        let est = estimator();
        let g = mock(0.0);
        let mut s = PlanSession::new("s", f64::NEG_INFINITY, 8).unwrap();
        assert!(matches!(
            s.step(&est, &g, &SelectionPolicy::Interactive),
            Err(Error::State(_))
        ));
        s.submit_prompt("p").unwrap();
        assert!(s.submit_prompt("p").is_err());
        let StepOutcome::NeedsUserChoice(list) =
            s.step(&est, &g, &SelectionPolicy::Interactive).unwrap()
        else {
            panic!("expected a choice");
        };
        assert_eq!(list.len(), 3);
        assert_eq!(s.status, SessionStatus::AwaitingChoice);
        assert!(matches!(
            s.choose(5),
            Err(Error::Range { index: 5, len: 3 })
        ));
        let picked = s.choose(1).unwrap();
        assert_eq!(picked.action, act("a2", "on"));
        assert!(s.pending.is_empty());
        assert!(matches!(s.choose(0), Err(Error::State(_))));

        // two left, then one: auto
        assert!(matches!(
            s.step(&est, &g, &SelectionPolicy::Interactive).unwrap(),
            StepOutcome::NeedsUserChoice(_)
        ));
        s.choose(0).unwrap();
        assert!(matches!(
            s.step(&est, &g, &SelectionPolicy::Interactive).unwrap(),
            StepOutcome::AutoSelected(_)
        ));
        assert_eq!(
            s.step(&est, &g, &SelectionPolicy::Interactive).unwrap(),
            StepOutcome::Done(DoneReason::GeneratorEmpty)
        );
        assert_eq!(s.status, SessionStatus::Done);
        assert_eq!(s.executed.len(), 3);
        assert!(s.step(&est, &g, &SelectionPolicy::Interactive).is_err());
    }

    #[test]
    fn threshold_above_everything_gives_empty_plan() {
        let est = estimator();
        let s = run_session(
            "p",
            &est,
            f64::INFINITY,
            &SelectionPolicy::MaxEpd,
            &mock(0.5),
            8,
        )
        .unwrap();
        assert!(s.executed.is_empty());
        assert_eq!(s.done_reason, Some(DoneReason::NoCandidateAboveThreshold));
        assert!(generate_all_at_once("p", &est, f64::INFINITY, &mock(0.5))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn clean_generator_recovers_full_truth() {
        let est = estimator();
        for policy in [SelectionPolicy::MaxEpd, SelectionPolicy::Random { seed: 3 }] {
            let mut plan = run_plan("p", &est, f64::NEG_INFINITY, &policy, &mock(0.0), 8).unwrap();
            plan.sort();
            assert_eq!(
                plan,
                vec![act("a1", "on"), act("a2", "on"), act("a3", "on")]
            );
        }
    }

    #[test]
    fn max_steps_stops_the_loop() {
        let est = estimator();
        let s = run_session(
            "p",
            &est,
            f64::NEG_INFINITY,
            &SelectionPolicy::MaxEpd,
            &mock(1.0),
            2,
        )
        .unwrap();
        assert_eq!(s.executed.len(), 2);
        assert_eq!(s.done_reason, Some(DoneReason::MaxSteps));
    }

    #[test]
    fn random_policy_is_deterministic() {
        let est = estimator();
        let p = SelectionPolicy::Random { seed: 9 };
        let a = run_plan("p", &est, 0.0, &p, &mock(0.5), 8).unwrap();
        assert_eq!(a, run_plan("p", &est, 0.0, &p, &mock(0.5), 8).unwrap());
        assert!(run_plan("p", &est, 0.0, &SelectionPolicy::Interactive, &mock(0.5), 8).is_err());
    }

    #[test]
    fn all_at_once_matches_first_step_survivors() {
        let est = estimator();
        for t in [0.0, 0.9, 1.0, 1.1] {
            let once = generate_all_at_once("p", &est, t, &mock(0.5)).unwrap();
            let mut s = PlanSession::new("x", t, 8).unwrap();
            s.submit_prompt("p").unwrap();
            let out = s
                .step(&est, &mock(0.5), &SelectionPolicy::Interactive)
                .unwrap();
            match out {
                StepOutcome::NeedsUserChoice(list) => assert_eq!(list, once),
                StepOutcome::AutoSelected(a) => assert_eq!(vec![a], once),
                StepOutcome::Done(_) => assert!(once.is_empty()),
            }
        }
    }

    #[test]
    fn failing_generator_leaves_session_running() {
        struct Broken;
        impl ActionGenerator for Broken {
            fn generate(&self, _: &str) -> Result<String> {
                Err(Error::Generator("down".into()))
            }
        }
        let mut s = PlanSession::new("x", 0.0, 8).unwrap();
        s.submit_prompt("p").unwrap();
        assert!(s
            .step(&estimator(), &Broken, &SelectionPolicy::MaxEpd)
            .is_err());
        assert_eq!(s.status, SessionStatus::Running);
        assert!(s.trace.is_empty());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn random_op_sequences_stay_consistent(
            ops in proptest::collection::vec(0u8..4, 1..40),
            rate in 0.0f64..1.0,
            t in 0.5f64..1.5,
        ) {
            let est = estimator();
            let g = mock(rate);
            let mut s = PlanSession::new("x", t, 8).unwrap();
            for op in ops {
                let before = s.status;
                let _ = match op {
                    0 => s.submit_prompt("p").map(|_| ()),
                    1 => s.step(&est, &g, &SelectionPolicy::Interactive).map(|_| ()),
                    2 => s.step(&est, &g, &SelectionPolicy::MaxEpd).map(|_| ()),
                    _ => s.choose(0).map(|_| ()),
                };
                let allowed = match before {
                    SessionStatus::AwaitingPrompt => matches!(s.status, SessionStatus::AwaitingPrompt | SessionStatus::Running),
                    SessionStatus::Running => s.status != SessionStatus::AwaitingPrompt,
                    SessionStatus::AwaitingChoice => matches!(s.status, SessionStatus::AwaitingChoice | SessionStatus::Running),
                    SessionStatus::Done => s.status == SessionStatus::Done,
                };
                proptest::prop_assert!(allowed, "{:?} -> {:?}", before, s.status);
                proptest::prop_assert_eq!(s.pending.is_empty(), s.status != SessionStatus::AwaitingChoice);
                let mut seen = s.executed.clone();
                seen.sort();
                seen.dedup();
                proptest::prop_assert_eq!(seen.len(), s.executed.len());
                proptest::prop_assert_eq!(&s.executed, &s.context.history);
            }
        }
    }
}
