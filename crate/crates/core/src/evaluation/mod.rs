//! Exact-match plan metrics and the experiment drivers built on them.

mod tables;

pub use tables::{table1_markdown, table2_markdown};

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agent::{self, ActionGenerator, MockGenerator, SelectionPolicy, DEFAULT_MAX_STEPS};
use crate::dataset::{Action, PromptRecord};
use crate::estimator::Estimator;
use crate::par::{self, Exec};
use crate::{seed, Error, Result};

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    AllAtOnce,
    StepRandom,
    StepMax,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::AllAtOnce, Mode::StepRandom, Mode::StepMax];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::AllAtOnce => "all_at_once",
            Mode::StepRandom => "step_random",
            Mode::StepMax => "step_max",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown mode {s:?}, expected all_at_once, step_random or step_max"
                ))
            })
    }
}

/// Lowercased, whitespace-collapsed `device : setting`.
pub fn normalize_action(a: &Action) -> String {
    let norm = |s: &str| {
        s.split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase()
    };
    format!("{} : {}", norm(&a.device), norm(&a.setting))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub prompt: String,
    pub generated: Vec<Action>,
    pub truth: Vec<Action>,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall of one plan against the record's truth, by set
/// intersection over normalized actions. Empty plans score zero.
pub fn score_prompt(prompt: &str, generated: &[Action], truth: &[Action]) -> Result<EvalRow> {
    if truth.is_empty() {
        return Err(Error::Config(format!(
            "prompt {prompt:?} has no true actions"
        )));
    }
    let g: BTreeSet<String> = generated.iter().map(normalize_action).collect();
    let t: BTreeSet<String> = truth.iter().map(normalize_action).collect();
    let hits = g.intersection(&t).count() as f64;
    Ok(EvalRow {
        prompt: prompt.to_string(),
        generated: generated.to_vec(),
        truth: truth.to_vec(),
        precision: if g.is_empty() {
            0.0
        } else {
            hits / g.len() as f64
        },
        recall: hits / t.len() as f64,
    })
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub threshold: f64,
    pub seed: u64,
    pub max_steps: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub f1: f64,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn from_rows(
        mode: Mode,
        threshold: f64,
        seed: u64,
        max_steps: usize,
        rows: Vec<EvalRow>,
    ) -> Self {
        let n = rows.len().max(1) as f64;
        let mp = rows.iter().map(|r| r.precision).sum::<f64>() / n;
        let mr = rows.iter().map(|r| r.recall).sum::<f64>() / n;
        EvalReport {
            mode,
            threshold,
            seed,
            max_steps,
            mean_precision: mp,
            mean_recall: mr,
            f1: f1(mp, mr),
            rows,
        }
    }
}

/// Hands out a generator per evaluated record.
pub trait GeneratorProvider: Sync {
    fn for_record(
        &self,
        index: usize,
        record: &PromptRecord,
        seed: u64,
    ) -> Box<dyn ActionGenerator + '_>;
}

/// Each record gets a mock bound to its own truth and substream.
impl GeneratorProvider for MockGenerator {
    fn for_record(
        &self,
        index: usize,
        record: &PromptRecord,
        seed: u64,
    ) -> Box<dyn ActionGenerator + '_> {
        Box::new(self.bound_to(record.actions.clone(), seed::derive(seed, index as u64)))
    }
}

/// One generator for every record, e.g. an external endpoint.
pub struct Shared<G>(pub G);

impl<G: ActionGenerator> GeneratorProvider for Shared<G> {
    fn for_record(&self, _: usize, _: &PromptRecord, _: u64) -> Box<dyn ActionGenerator + '_> {
        Box::new(&self.0)
    }
}

impl<G: ActionGenerator + ?Sized> ActionGenerator for &G {
    fn generate(&self, instruction: &str) -> Result<String> {
        (**self).generate(instruction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub mode: Mode,
    pub threshold: f64,
    pub seed: u64,
    pub max_steps: usize,
    pub exec: Exec,
}

impl RunSpec {
    pub fn new(mode: Mode, threshold: f64, seed: u64) -> Self {
        RunSpec {
            mode,
            threshold,
            seed,
            max_steps: DEFAULT_MAX_STEPS,
            exec: Exec::default(),
        }
    }
}

/// Plan for record `index` under `spec`.
pub fn plan_record(
    index: usize,
    record: &PromptRecord,
    estimator: &Estimator,
    provider: &dyn GeneratorProvider,
    spec: &RunSpec,
) -> Result<Vec<Action>> {
    let generator = provider.for_record(index, record, spec.seed);
    let policy = match spec.mode {
        Mode::AllAtOnce => {
            let kept = agent::generate_all_at_once(
                &record.prompt,
                estimator,
                spec.threshold,
                &*generator,
            )?;
            return Ok(kept.into_iter().map(|s| s.action).collect());
        }
        Mode::StepRandom => SelectionPolicy::Random {
            seed: seed::derive(seed::mix(spec.seed), index as u64),
        },
        Mode::StepMax => SelectionPolicy::MaxEpd,
    };
    agent::run_plan(
        &record.prompt,
        estimator,
        spec.threshold,
        &policy,
        &*generator,
        spec.max_steps,
    )
}

/// One seed, every record. Records run in parallel and aggregate in order.
pub fn run_experiment(
    records: &[PromptRecord],
    estimator: &Estimator,
    provider: &dyn GeneratorProvider,
    spec: &RunSpec,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::TooFew {
            what: "evaluation records",
            required: 1,
            got: 0,
        });
    }
    let rows = par::map_range(spec.exec, records.len(), |i| {
        let r = &records[i];
        plan_record(i, r, estimator, provider, spec)
            .and_then(|plan| score_prompt(&r.prompt, &plan, &r.actions))
            .map_err(|e| Error::Prompt {
                index: i,
                prompt: r.prompt.clone(),
                source: Box::new(e),
            })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_rows(
        spec.mode,
        spec.threshold,
        spec.seed,
        spec.max_steps,
        rows,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub mode: Mode,
    pub threshold: f64,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<EvalReport>,
    pub median_precision: f64,
    pub median_recall: f64,
    pub median_f1: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

impl MultiSeedReport {
    pub fn from_reports(per_seed: Vec<EvalReport>) -> Result<Self> {
        let first = per_seed.first().ok_or(Error::TooFew {
            what: "seeds",
            required: 1,
            got: 0,
        })?;
        let pick = |f: fn(&EvalReport) -> f64| median(&per_seed.iter().map(f).collect::<Vec<_>>());
        Ok(MultiSeedReport {
            mode: first.mode,
            threshold: first.threshold,
            seeds: per_seed.iter().map(|r| r.seed).collect(),
            median_precision: pick(|r| r.mean_precision),
            median_recall: pick(|r| r.mean_recall),
            median_f1: pick(|r| r.f1),
            per_seed,
        })
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_multi_seed(
    records: &[PromptRecord],
    estimator: &Estimator,
    provider: &dyn GeneratorProvider,
    mode: Mode,
    threshold: f64,
    seeds: &[u64],
    max_steps: usize,
    exec: Exec,
) -> Result<MultiSeedReport> {
    let reports = seeds
        .iter()
        .map(|&seed| {
            run_experiment(
                records,
                estimator,
                provider,
                &RunSpec {
                    mode,
                    threshold,
                    seed,
                    max_steps,
                    exec,
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    MultiSeedReport::from_reports(reports)
}

/// One multi-seed report per `(mode, threshold)`, modes outermost.
#[allow(clippy::too_many_arguments)]
pub fn run_threshold_sweep(
    records: &[PromptRecord],
    estimator: &Estimator,
    provider: &dyn GeneratorProvider,
    modes: &[Mode],
    thresholds: &[f64],
    seeds: &[u64],
    max_steps: usize,
    exec: Exec,
) -> Result<Vec<MultiSeedReport>> {
    let mut out = Vec::with_capacity(modes.len() * thresholds.len());
    for &mode in modes {
        for &t in thresholds {
            out.push(run_multi_seed(
                records, estimator, provider, mode, t, seeds, max_steps, exec,
            )?);
        }
    }
    Ok(out)
}

/// Per-prompt recall drops when the threshold rises, for reports over the
/// same records. Returns `(report index, row index)` of each violation.
pub fn recall_violations(reports: &[&EvalReport]) -> Vec<(usize, usize)> {
    let mut bad = Vec::new();
    for (k, pair) in reports.windows(2).enumerate() {
        for (i, (lo, hi)) in pair[0].rows.iter().zip(&pair[1].rows).enumerate() {
            if hi.recall > lo.recall {
                bad.push((k + 1, i));
            }
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::MockGeneratorConfig;
    use crate::dataset::{generate_synthetic as generate, GenConfig};
    use crate::estimator::{Dims, EstimatorParams, RpcHyper};
    use proptest::prelude::*;

    fn act(d: &str, s: &str) -> Action {
        Action::new(d, s).unwrap()
    }

    #[test]
    fn normalization() {
        assert_eq!(
            normalize_action(&act("Musicplayer", " Play  Soft Sounds ")),
            "musicplayer : play soft sounds"
        );
        assert_eq!(
            normalize_action(&act("musicplayer", "play soft sounds")),
            "musicplayer : play soft sounds"
        );
        assert_ne!(
            normalize_action(&act("musicplayer", "play soft sounds")),
            normalize_action(&act("musicplayer", "play soft music"))
        );
    }

    #[test]
    fn scoring_examples() {
        let (a, b, c, d) = (act("a", "1"), act("b", "1"), act("c", "1"), act("d", "1"));
        let r = score_prompt(
            "p",
            &[a.clone(), b.clone(), c.clone()],
            &[b.clone(), c.clone(), d.clone()],
        )
        .unwrap();
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15 && (r.recall - 2.0 / 3.0).abs() < 1e-15);
        let r = score_prompt("p", &[], std::slice::from_ref(&a)).unwrap();
        assert_eq!((r.precision, r.recall), (0.0, 0.0));
        let r = score_prompt("p", &[a.clone(), b.clone()], &[b.clone(), a.clone()]).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 1.0));
        assert!(score_prompt("p", &[a], &[]).is_err());
        assert_eq!(f1(0.0, 0.0), 0.0);
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn mode_parsing() {
        for m in Mode::ALL {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("bogus".parse::<Mode>().is_err());
    }

    fn fixture() -> (Vec<PromptRecord>, Estimator, MockGenerator) {
        let recs = generate(&GenConfig {
            n_records: 40,
            seed: 2,
            ..GenConfig::default()
        })
        .unwrap();
        let dims = Dims {
            vocab: 256,
            embed: 8,
            hidden: 8,
            out: 8,
        };
        let est = Estimator::new(
            EstimatorParams::init(dims, true, 0.3, 4).unwrap(),
            RpcHyper::default(),
        );
        let g =
            MockGenerator::new(MockGeneratorConfig::from_records(&recs, 1, 0.5).unwrap()).unwrap();
        (recs, est, g)
    }

    #[test]
    fn extreme_thresholds() {
        let (recs, est, g) = fixture();
        for mode in Mode::ALL {
            let r = run_experiment(&recs, &est, &g, &RunSpec::new(mode, f64::INFINITY, 0)).unwrap();
            assert_eq!((r.mean_precision, r.mean_recall, r.f1), (0.0, 0.0, 0.0));
        }
        let clean =
            MockGenerator::new(MockGeneratorConfig::from_records(&recs, 1, 0.0).unwrap()).unwrap();
        for mode in Mode::ALL {
            let r = run_experiment(
                &recs,
                &est,
                &clean,
                &RunSpec::new(mode, f64::NEG_INFINITY, 3),
            )
            .unwrap();
            assert!(
                r.rows
                    .iter()
                    .all(|row| row.precision == 1.0 && row.recall == 1.0),
                "{mode}"
            );
            assert_eq!(r.f1, 1.0);
        }
    }

    #[test]
    fn deterministic_and_exec_independent() {
        let (recs, est, g) = fixture();
        for mode in Mode::ALL {
            let mut spec = RunSpec::new(mode, 1.0, 5);
            let a = run_experiment(&recs, &est, &g, &spec).unwrap();
            spec.exec = Exec::Sequential;
            assert_eq!(a, run_experiment(&recs, &est, &g, &spec).unwrap());
        }
    }

    #[test]
    fn all_at_once_recall_is_monotone_per_prompt() {
        let (recs, est, g) = fixture();
        let reports: Vec<_> = [0.0, 0.8, 1.0, 1.2]
            .iter()
            .map(|&t| {
                run_experiment(&recs, &est, &g, &RunSpec::new(Mode::AllAtOnce, t, 1)).unwrap()
            })
            .collect();
        assert!(recall_violations(&reports.iter().collect::<Vec<_>>()).is_empty());
    }

    #[test]
    fn f1_bounds_on_reports() {
        let (recs, est, g) = fixture();
        let sweep = run_threshold_sweep(
            &recs,
            &est,
            &g,
            &Mode::ALL,
            &[0.0, 1.0],
            &[0, 1, 2],
            8,
            Exec::default(),
        )
        .unwrap();
        assert_eq!(sweep.len(), 6);
        for m in &sweep {
            for r in &m.per_seed {
                assert!(r.f1 <= 2.0 * r.mean_precision.min(r.mean_recall) + 1e-15);
                assert!((0.0..=1.0).contains(&r.f1));
            }
        }
    }

    fn brute(generated: &[String], truth: &[String]) -> (f64, f64) {
        let mut g: Vec<&String> = Vec::new();
        for x in generated {
            if !g.contains(&x) {
                g.push(x);
            }
        }
        let mut t: Vec<&String> = Vec::new();
        for x in truth {
            if !t.contains(&x) {
                t.push(x);
            }
        }
        let hits = g.iter().filter(|x| t.contains(x)).count() as f64;
        let p = if g.is_empty() {
            0.0
        } else {
            hits / g.len() as f64
        };
        (p, hits / t.len() as f64)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn metric_matches_brute_force(
            gen in prop::collection::vec((0u8..6, 0u8..3, any::<bool>()), 0..8),
            truth in prop::collection::vec((0u8..6, 0u8..3), 1..6),
        ) {
            let mk = |d: u8, s: u8, upper: bool| {
                let dev = if upper { format!("Dev  {d}") } else { format!("dev {d}") };
                act(&dev, &format!("set {s}"))
            };
            let g: Vec<Action> = gen.iter().map(|&(d, s, u)| mk(d, s, u)).collect();
            let t: Vec<Action> = truth.iter().map(|&(d, s)| mk(d, s, false)).collect();
            let row = score_prompt("p", &g, &t).unwrap();
            let keys = |v: &[Action]| v.iter().map(|a| format!("{}|{}", a.device.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" "), a.setting)).collect::<Vec<_>>();
            let (p, r) = brute(&keys(&g), &keys(&t));
            prop_assert_eq!(row.precision, p);
            prop_assert_eq!(row.recall, r);
        }
    }
}
