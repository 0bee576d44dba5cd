//! Synthetic telemetry with planted player archetypes.
//!
//! Every session draws from its own sub-seed, so output is identical for a
//! given seed regardless of thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{write_events, Category, Event, Session};
use crate::seed;

/// Name of the marker events that pin each session's start and end.
pub const SESSION_START: &str = "session_start";
pub const SESSION_END: &str = "session_end";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRate {
    pub name: String,
    pub category: Category,
    /// Expected events per minute of play.
    pub per_minute: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Archetype {
    pub name: String,
    pub events: Vec<EventRate>,
    pub min_duration_seconds: f64,
    pub max_duration_seconds: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_sessions: usize,
    pub seed: u64,
    pub archetypes: Vec<Archetype>,
}

impl SimConfig {
    /// Three archetypes whose signature events run 6x the background rate,
    /// one signature per event category.
    pub fn three_archetypes(n_sessions: usize, seed: u64) -> Self {
        let signatures = [
            ("builder", "build_home", "crop_yield", "achieve_population"),
            ("rancher", "build_dairy", "milk_yield", "achieve_money"),
            ("polluter", "build_farm", "algae_bloom", "achieve_bloom"),
        ];
        let action = ["build_home", "build_dairy", "build_farm"];
        let feedback = ["crop_yield", "milk_yield", "algae_bloom"];
        let progression = ["achieve_population", "achieve_money", "achieve_bloom"];
        let archetypes = signatures
            .iter()
            .map(|(name, a, f, p)| {
                let mut events = Vec::new();
                for (cat, names, sig, hi, lo) in [
                    (Category::Action, &action, a, 6.0, 1.0),
                    (Category::Feedback, &feedback, f, 3.0, 0.5),
                    (Category::Progression, &progression, p, 0.6, 0.1),
                ] {
                    for n in names.iter() {
                        events.push(EventRate {
                            name: n.to_string(),
                            category: cat,
                            per_minute: if n == sig { hi } else { lo },
                        });
                    }
                }
                events.push(EventRate {
                    name: "buy_item".into(),
                    category: Category::Action,
                    per_minute: 2.0,
                });
                Archetype {
                    name: name.to_string(),
                    events,
                    min_duration_seconds: 600.0,
                    max_duration_seconds: 1800.0,
                    weight: 1.0 / 3.0,
                }
            })
            .collect();
        SimConfig {
            n_sessions,
            seed,
            archetypes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sessions == 0 {
            return Err(Error::config("simgen.n_sessions must be at least 1"));
        }
        if self.archetypes.is_empty() {
            return Err(Error::config("simgen.archetypes must not be empty"));
        }
        let total: f64 = self.archetypes.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "simgen archetype weights sum to {total}, expected 1"
            )));
        }
        for a in &self.archetypes {
            if a.weight.is_nan() || a.weight < 0.0 {
                return Err(Error::config(format!(
                    "simgen.{}: weight must be non-negative",
                    a.name
                )));
            }
            if !(a.min_duration_seconds >= 0.0 && a.min_duration_seconds <= a.max_duration_seconds)
                || !a.max_duration_seconds.is_finite()
            {
                return Err(Error::config(format!(
                    "simgen.{}: need 0 <= min_duration_seconds <= max_duration_seconds",
                    a.name
                )));
            }
            if let Some(e) = a
                .events
                .iter()
                .find(|e| !(e.per_minute >= 0.0 && e.per_minute.is_finite()))
            {
                return Err(Error::config(format!(
                    "simgen.{}: rate for {} must be a non-negative number",
                    a.name, e.name
                )));
            }
        }
        Ok(())
    }
}

/// Generated log plus the ground-truth archetype of every session.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub sessions: Vec<Session>,
    /// `(session_id, archetype)` in session order.
    pub labels: Vec<(String, String)>,
}

impl SimOutput {
    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        write_events(&self.sessions, &mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("JSON output is UTF-8")
    }

    pub fn ground_truth_csv(&self) -> String {
        let mut out = String::from("session_id,archetype\n");
        for (s, a) in &self.labels {
            let _ = writeln!(out, "{s},{a}");
        }
        out
    }

    pub fn label_map(&self) -> BTreeMap<String, String> {
        self.labels.iter().cloned().collect()
    }
}

fn millis(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

fn session(
    cfg: &SimConfig,
    index: usize,
    picker: &WeightedIndex<f64>,
) -> Result<(Session, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_indexed(
        cfg.seed,
        "simgen/session",
        index as u64,
    ));
    let arch = &cfg.archetypes[picker.sample(&mut rng)];
    let duration = millis(if arch.max_duration_seconds > arch.min_duration_seconds {
        rng.random_range(arch.min_duration_seconds..arch.max_duration_seconds)
    } else {
        arch.min_duration_seconds
    });
    let id = format!("sim{index:06}");
    let event = |t: f64, name: &str, category: Category| Event {
        session_id: id.clone(),
        time_offset: t,
        name: name.to_string(),
        category,
        payload: BTreeMap::new(),
    };
    let mut events = vec![event(0.0, SESSION_START, Category::Progression)];
    for rate in &arch.events {
        let lambda = rate.per_minute * duration / 60.0;
        let count = if lambda > 0.0 {
            Poisson::new(lambda)
                .map_err(|e| Error::config(format!("simgen.{}: {e}", arch.name)))?
                .sample(&mut rng) as usize
        } else {
            0
        };
        for _ in 0..count {
            let t = millis(rng.random_range(0.0..duration.max(f64::MIN_POSITIVE)));
            events.push(event(t.min(duration), &rate.name, rate.category));
        }
    }
    events.push(event(duration, SESSION_END, Category::Progression));
    Ok((Session::new(id.clone(), events), arch.name.clone()))
}

/// Samples `n_sessions` sessions from the archetype mixture.
pub fn generate(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let weights: Vec<f64> = cfg.archetypes.iter().map(|a| a.weight).collect();
    let picker = WeightedIndex::new(&weights)
        .map_err(|e| Error::config(format!("simgen archetype weights: {e}")))?;
    let drawn = (0..cfg.n_sessions)
        .into_par_iter()
        .map(|i| session(cfg, i, &picker))
        .collect::<Result<Vec<_>>>()?;
    let (sessions, names): (Vec<Session>, Vec<String>) = drawn.into_iter().unzip();
    let labels = sessions.iter().map(|s| s.id.clone()).zip(names).collect();
    Ok(SimOutput { sessions, labels })
}

/// Fraction of points whose cluster's majority ground-truth label equals
/// their own. Ties within a cluster go to the lexicographically smallest label.
pub fn purity(assignments: &[usize], truth: &[&str]) -> f64 {
    assert_eq!(assignments.len(), truth.len());
    if assignments.is_empty() {
        return 0.0;
    }
    let mut tallies: BTreeMap<usize, BTreeMap<&str, usize>> = BTreeMap::new();
    for (&c, &t) in assignments.iter().zip(truth) {
        *tallies.entry(c).or_default().entry(t).or_default() += 1;
    }
    let matched: usize = tallies
        .values()
        .map(|counts| counts.values().copied().max().unwrap_or(0))
        .sum();
    matched as f64 / assignments.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_events;

    #[test]
    fn single_archetype_labels_are_uniform() {
        let mut cfg = SimConfig::three_archetypes(5, 1);
        cfg.archetypes.truncate(1);
        cfg.archetypes[0].weight = 1.0;
        let out = generate(&cfg).unwrap();
        assert_eq!(out.labels.len(), 5);
        assert!(out.labels.iter().all(|(_, a)| a == "builder"));
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SimConfig::three_archetypes(40, 7);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert_eq!(a.ground_truth_csv(), b.ground_truth_csv());
        let c = generate(&SimConfig::three_archetypes(40, 8)).unwrap();
        assert_ne!(a.to_jsonl(), c.to_jsonl());
    }

    #[test]
    fn thread_count_does_not_matter() {
        let cfg = SimConfig::three_archetypes(30, 3);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| generate(&cfg).unwrap().to_jsonl());
        let b = four.install(|| generate(&cfg).unwrap().to_jsonl());
        assert_eq!(a, b);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let mut cfg = SimConfig::three_archetypes(5, 1);
        cfg.archetypes[0].weight = 0.5;
        assert!(matches!(generate(&cfg), Err(Error::Config(m)) if m.contains("sum to")));
    }

    #[test]
    fn logs_round_trip_through_ingest() {
        let out = generate(&SimConfig::three_archetypes(25, 11)).unwrap();
        let (sessions, report) = parse_events(&out.to_jsonl());
        assert_eq!(report.rejected, 0);
        assert_eq!(sessions, out.sessions);
        for s in &sessions {
            assert_eq!(s.events[0].name, SESSION_START);
            assert_eq!(s.events.last().unwrap().name, SESSION_END);
        }
    }

    #[test]
    fn counts_track_rates() {
        // Law of large numbers: mean count per session ≈ rate x mean minutes.
        let mut cfg = SimConfig::three_archetypes(10_000, 5);
        cfg.archetypes.truncate(1);
        cfg.archetypes[0].weight = 1.0;
        let out = generate(&cfg).unwrap();
        let arch = &cfg.archetypes[0];
        for rate in &arch.events {
            let observed: f64 = out
                .sessions
                .iter()
                .map(|s| s.events.iter().filter(|e| e.name == rate.name).count() as f64)
                .sum::<f64>()
                / out.sessions.len() as f64;
            let expected: f64 = out
                .sessions
                .iter()
                .map(|s| rate.per_minute * s.duration() / 60.0)
                .sum::<f64>()
                / out.sessions.len() as f64;
            assert!(
                (observed / expected - 1.0).abs() < 0.05,
                "{}: {observed} vs {expected}",
                rate.name
            );
        }
    }

    #[test]
    fn purity_by_majority() {
        assert_eq!(purity(&[0, 0, 1, 1], &["a", "a", "b", "b"]), 1.0);
        assert_eq!(purity(&[0, 0, 0, 1], &["a", "b", "a", "b"]), 0.75);
        assert_eq!(purity(&[0, 0, 0, 0], &["a", "b", "c", "d"]), 0.25);
    }
}
