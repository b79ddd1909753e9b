//! Synthetic smart-home corpus.
//!
//! Each scene template pairs a handful of activity prompts with a pool of
//! device/setting actions. A record picks a scene, a prompt, and then draws
//! actions without replacement using prompt-specific preference weights, so
//! the prompt carries information about which actions follow beyond the
//! scene itself.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Action, PromptRecord};
use crate::seed;
use crate::{Error, Result};

pub const MAX_ACTIONS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTemplate {
    pub scene: String,
    pub prompts: Vec<String>,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_records: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mean")]
    pub mean_actions_target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<Vec<SceneTemplate>>,
}

fn default_mean() -> f64 {
    3.1
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_records: 2000,
            seed: 0,
            mean_actions_target: default_mean(),
            templates: None,
        }
    }
}

/// Generates `config.n_records` records. Deterministic for a fixed seed.
pub fn generate_synthetic(config: &GenConfig) -> Result<Vec<PromptRecord>> {
    if config.n_records == 0 {
        return Err(Error::Config("n_records must be at least 1".into()));
    }
    let target = config.mean_actions_target;
    if !(1.0..=MAX_ACTIONS as f64).contains(&target) {
        return Err(Error::Config(format!(
            "mean_actions_target must lie in [1, {MAX_ACTIONS}], got {target}"
        )));
    }
    let templates = match &config.templates {
        Some(t) => t.clone(),
        None => default_templates(),
    };
    if templates.is_empty() {
        return Err(Error::Config("template pool is empty".into()));
    }
    for t in &templates {
        if t.prompts.is_empty() || t.actions.is_empty() {
            return Err(Error::Config(format!(
                "template {:?} needs at least one prompt and one action",
                t.scene
            )));
        }
    }

    // n = 1 + Binomial(MAX_ACTIONS - 1, p) has mean `target` and support [1, 6].
    let p_extra = (target - 1.0) / (MAX_ACTIONS - 1) as f64;
    let mut rng = seed::rng(config.seed);
    let mut out = Vec::with_capacity(config.n_records);
    for _ in 0..config.n_records {
        let t = &templates[rng.gen_range(0..templates.len())];
        let pi = rng.gen_range(0..t.prompts.len());
        let extra = (0..MAX_ACTIONS - 1)
            .filter(|_| rng.gen_bool(p_extra))
            .count();
        let n = (1 + extra).min(t.actions.len());

        let m = t.actions.len();
        let shift = (pi * 3) % m;
        let mut weights: Vec<f64> = (0..m)
            .map(|j| 1.0 / (1.0 + ((j + m - shift) % m) as f64))
            .collect();
        let mut actions = Vec::with_capacity(n);
        for _ in 0..n {
            let dist = WeightedIndex::new(&weights).expect("positive weights remain");
            let j = dist.sample(&mut rng);
            weights[j] = 0.0;
            actions.push(t.actions[j].clone());
        }
        out.push(PromptRecord::new(t.prompts[pi].clone(), actions)?);
    }
    Ok(out)
}

fn scene(name: &str, prompts: &[&str], actions: &[(&str, &str)]) -> SceneTemplate {
    SceneTemplate {
        scene: name.to_string(),
        prompts: prompts.iter().map(|p| p.to_string()).collect(),
        actions: actions
            .iter()
            .map(|(d, s)| Action::new(d, s).expect("static template action"))
            .collect(),
    }
}

/// Built-in scene pool. Labels avoid `,` and `:` so rendered contexts stay
/// unambiguous.
pub fn default_templates() -> Vec<SceneTemplate> {
    vec![
        scene(
            "garden",
            &[
                "water the plants",
                "trimming the lawn",
                "planting flowers",
                "evening in the garden",
                "weeding the flower beds",
            ],
            &[
                ("outdoor lights", "on"),
                ("smart sprinkler", "on"),
                ("outdoor speaker", "play laid-back music"),
                ("outdoor light", "on"),
                ("yard musicplayer", "play nature playing music"),
                ("garage door", "open"),
                ("patio heater", "low"),
                ("garden hose valve", "open"),
            ],
        ),
        scene(
            "bath",
            &[
                "take a hot bath",
                "a long soak in the tub",
                "getting ready for bed",
                "spa night at home",
                "quick shower before work",
            ],
            &[
                ("smart tubs", "fill with hot water"),
                ("bathroom speaker", "play relaxing music"),
                ("towel warmer", "on"),
                ("bathroom light", "soft"),
                ("blinds", "down"),
                ("bathroom fan", "on"),
                ("water heater", "boost"),
                ("aroma diffuser", "lavender"),
            ],
        ),
        scene(
            "evening",
            &[
                "unwinding after work",
                "I am exhausted today",
                "a quiet evening at home",
                "time to relax",
                "winding down for the night",
            ],
            &[
                ("bedroom light", "soft"),
                ("bedroom musicplayer", "play chill music"),
                ("diffuser", "on"),
                ("living room light", "dim"),
                ("musicplayer", "play soft sounds"),
                ("smart blinds", "close"),
                ("living room ac", "set temperature 20c"),
                ("living room light", "warm"),
            ],
        ),
        scene(
            "reading",
            &[
                "relaxing with a book",
                "a quiet evening with a book",
                "reading before sleep",
                "studying for an exam",
                "writing in the study",
            ],
            &[
                ("living room light", "dim"),
                ("fireplace", "low"),
                ("reading lamp", "on"),
                ("study room light", "soft"),
                ("study room music player", "play quiet music"),
                ("desk lamp", "on"),
                ("electric kettle", "on"),
                ("phone", "do not disturb"),
            ],
        ),
        scene(
            "call",
            &[
                "video call with friends",
                "joining a work meeting",
                "calling my parents",
                "online class starting",
                "recording a podcast",
            ],
            &[
                ("living room light", "bright"),
                ("living room smart speaker", "video call mode"),
                ("office light", "bright"),
                ("office speaker", "mute"),
                ("router", "prioritize video"),
                ("webcam light", "on"),
                ("doorbell", "silent"),
                ("office blinds", "half open"),
            ],
        ),
        scene(
            "sunrise",
            &[
                "watching sunrise in the balcony",
                "early morning yoga",
                "morning coffee outside",
                "waking up early",
                "greeting the day",
            ],
            &[
                ("balcony light", "dim"),
                ("outdoor speaker", "play morning raga"),
                ("coffee maker", "on"),
                ("bedroom blinds", "open"),
                ("yoga mat heater", "on"),
                ("kitchen light", "on"),
                ("balcony heater", "low"),
                ("news speaker", "play headlines"),
            ],
        ),
        scene(
            "cooking",
            &[
                "cooking dinner",
                "feeling hungry",
                "baking a cake",
                "making breakfast",
                "hosting a dinner party",
            ],
            &[
                ("kitchen light", "bright"),
                ("oven", "preheat 180c"),
                ("range hood", "on"),
                ("kitchen speaker", "play jazz"),
                ("dishwasher", "start"),
                ("dining room light", "warm"),
                ("fridge", "quick cool"),
                ("coffee maker", "on"),
            ],
        ),
        scene(
            "workshop",
            &[
                "time to fix things",
                "building a bookshelf",
                "repairing the bike",
                "painting the fence",
                "organizing the garage",
            ],
            &[
                ("garage light", "on"),
                ("tool drawer", "open"),
                ("garage door", "open"),
                ("workshop fan", "high"),
                ("garage radio", "play rock"),
                ("air compressor", "on"),
                ("workbench lamp", "on"),
                ("garage heater", "medium"),
            ],
        ),
        scene(
            "movie",
            &[
                "movie night",
                "watching a football game",
                "binge watching a series",
                "gaming with friends",
                "a day of painting",
            ],
            &[
                ("living room light", "off"),
                ("tv", "on"),
                ("soundbar", "surround mode"),
                ("popcorn maker", "on"),
                ("smart blinds", "close"),
                ("game console", "on"),
                ("living room light", "bright"),
                ("ceiling fan", "low"),
            ],
        ),
        scene(
            "leaving",
            &[
                "leaving for vacation",
                "heading to work",
                "going out for the night",
                "running errands",
                "away for the weekend",
            ],
            &[
                ("all lights", "off"),
                ("front door", "lock"),
                ("thermostat", "eco mode"),
                ("security camera", "arm"),
                ("robot vacuum", "start"),
                ("garage door", "close"),
                ("water heater", "off"),
                ("porch light", "schedule"),
            ],
        ),
        scene(
            "sleep",
            &[
                "going to sleep",
                "taking a nap",
                "the baby is sleeping",
                "late night bedtime",
                "trouble falling asleep",
            ],
            &[
                ("bedroom light", "off"),
                ("white noise machine", "on"),
                ("bedroom ac", "set temperature 22c"),
                ("bedroom blinds", "close"),
                ("nursery camera", "on"),
                ("hallway light", "night mode"),
                ("phone", "do not disturb"),
                ("humidifier", "on"),
            ],
        ),
        scene(
            "workout",
            &[
                "home workout",
                "a run on the treadmill",
                "stretching session",
                "lifting weights",
                "dance practice",
            ],
            &[
                ("gym light", "bright"),
                ("gym speaker", "play workout mix"),
                ("treadmill", "on"),
                ("gym fan", "high"),
                ("water dispenser", "chill"),
                ("smart mirror", "show workout"),
                ("living room speaker", "play dance hits"),
                ("air purifier", "on"),
            ],
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn rejects_empty_request_and_pool() {
        let cfg = GenConfig {
            n_records: 0,
            ..GenConfig::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        let cfg = GenConfig {
            n_records: 3,
            templates: Some(vec![]),
            ..GenConfig::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_and_bounded() {
        let cfg = GenConfig {
            n_records: 300,
            seed: 4,
            ..GenConfig::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a
            .iter()
            .all(|r| (1..=MAX_ACTIONS).contains(&r.actions.len())));
    }

    #[test]
    fn mean_action_count_matches_target() {
        let cfg = GenConfig {
            n_records: 2000,
            seed: 1,
            ..GenConfig::default()
        };
        let recs = generate_synthetic(&cfg).unwrap();
        let mean = recs.iter().map(|r| r.actions.len()).sum::<usize>() as f64 / recs.len() as f64;
        assert!((2.8..=3.4).contains(&mean), "mean {mean}");
    }

    #[test]
    fn garden_template_draws_from_its_vocabulary() {
        let garden: Vec<_> = default_templates()
            .into_iter()
            .filter(|t| t.scene == "garden")
            .collect();
        let cfg = GenConfig {
            n_records: 1,
            seed: 7,
            mean_actions_target: 3.1,
            templates: Some(garden.clone()),
        };
        let recs = generate_synthetic(&cfg).unwrap();
        assert_eq!(recs.len(), 1);
        let t = &garden[0];
        assert!(t.prompts.contains(&recs[0].prompt));
        assert!(recs[0].actions.iter().all(|a| t.actions.contains(a)));

        // The leading garden actions are the preferred set for "water the plants".
        let many = generate_synthetic(&GenConfig {
            n_records: 400,
            ..cfg
        })
        .unwrap();
        let expected: HashSet<String> = [
            "outdoor lights : on",
            "smart sprinkler : on",
            "outdoor speaker : play laid-back music",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        assert!(many.iter().any(|r| r.prompt == "water the plants"
            && r.actions.iter().map(|a| a.render()).collect::<HashSet<_>>() == expected));
    }

    #[test]
    fn vocabulary_has_no_separator_collisions() {
        for t in default_templates() {
            for p in &t.prompts {
                assert!(!p.contains(',') && !p.contains(':'), "{p}");
            }
            for a in &t.actions {
                for s in [&a.device, &a.setting] {
                    assert!(!s.contains(',') && !s.contains(':'), "{s}");
                }
            }
            assert!(t.actions.len() >= MAX_ACTIONS);
            let uniq: HashSet<_> = t.actions.iter().collect();
            assert_eq!(uniq.len(), t.actions.len());
        }
    }
}
