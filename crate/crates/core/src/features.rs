//! Count features per session, grouped by event category.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{segment_windows, Category, Session, WindowConfig};
use crate::matrix::Matrix;

/// Which part of a session a feature looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    WholeSession,
    /// Union of the first `n` windows.
    Windows(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Count,
    /// Sum of a numeric payload field over matching events.
    SumPayloadField(String),
    SessionDurationSeconds,
}

/// Declarative rule turning matching events into one named feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub name: String,
    pub category: Category,
    /// Event names this feature counts.
    #[serde(rename = "match", default)]
    pub matches: BTreeSet<String>,
    /// Defaults to whole-session for progression, otherwise every configured window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<Scope>,
    #[serde(default = "default_aggregator")]
    pub aggregator: Aggregator,
}

fn default_aggregator() -> Aggregator {
    Aggregator::Count
}

impl FeatureSpec {
    pub fn count(name: &str, category: Category, events: &[&str], scope: Scope) -> Self {
        FeatureSpec {
            name: name.to_string(),
            category,
            matches: events.iter().map(|e| e.to_string()).collect(),
            scope: Some(scope),
            aggregator: Aggregator::Count,
        }
    }

    pub fn resolved_scope(&self, windows: &WindowConfig) -> Scope {
        self.scope.unwrap_or(match self.category {
            Category::Progression => Scope::WholeSession,
            _ => Scope::Windows(windows.count),
        })
    }
}

/// Checks names are unique and every scope/aggregator combination is legal.
pub fn validate_specs(specs: &[FeatureSpec], windows: &WindowConfig) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::config(
            "features: at least one feature spec is required",
        ));
    }
    let mut seen = BTreeSet::new();
    for spec in specs {
        if spec.name.is_empty() || spec.name.contains(',') || spec.name.contains('"') {
            return Err(Error::config(format!(
                "features: invalid feature name {:?} (must be non-empty, without commas or quotes)",
                spec.name
            )));
        }
        if !seen.insert(spec.name.as_str()) {
            return Err(Error::config(format!(
                "features: duplicate feature name {:?}",
                spec.name
            )));
        }
        let scope = spec.resolved_scope(windows);
        match (&spec.aggregator, scope) {
            (Aggregator::SessionDurationSeconds, Scope::Windows(_)) => {
                return Err(Error::config(format!(
                    "features.{}: session_duration_seconds requires whole_session scope",
                    spec.name
                )))
            }
            (_, Scope::Windows(0)) => {
                return Err(Error::config(format!(
                    "features.{}: windows scope needs at least one window",
                    spec.name
                )))
            }
            (_, Scope::Windows(n)) if n > windows.count => {
                return Err(Error::config(format!(
                    "features.{}: windows({n}) exceeds window.count ({})",
                    spec.name, windows.count
                )))
            }
            (Aggregator::Count | Aggregator::SumPayloadField(_), _) if spec.matches.is_empty() => {
                return Err(Error::config(format!(
                    "features.{}: match list is empty",
                    spec.name
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Sessions x features for one category.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub category: Category,
    pub feature_names: Vec<String>,
    pub session_ids: Vec<String>,
    pub values: Matrix,
}

impl FeatureMatrix {
    pub fn new(
        category: Category,
        feature_names: Vec<String>,
        session_ids: Vec<String>,
        values: Matrix,
    ) -> Result<Self> {
        if values.rows() != session_ids.len() || values.cols() != feature_names.len() {
            return Err(Error::data(format!(
                "{category}: matrix is {}x{} but has {} session ids and {} feature names",
                values.rows(),
                values.cols(),
                session_ids.len(),
                feature_names.len()
            )));
        }
        if let Some(v) = values.as_slice().iter().find(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "{category}: non-finite feature value {v}"
            )));
        }
        Ok(FeatureMatrix {
            category,
            feature_names,
            session_ids,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.session_ids.len()
    }

    /// Keeps the rows whose index passes `keep`.
    pub fn retain_rows(&self, keep: impl Fn(usize) -> bool) -> FeatureMatrix {
        FeatureMatrix {
            category: self.category,
            feature_names: self.feature_names.clone(),
            session_ids: self
                .session_ids
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, s)| s.clone())
                .collect(),
            values: self.values.select_rows(keep),
        }
    }
}

/// A non-fatal problem found while aggregating one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataIssue {
    pub session_id: String,
    pub feature: String,
    pub message: String,
}

/// Per-session facts the validity filter needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub duration_seconds: f64,
    pub action_events: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub matrices: BTreeMap<Category, FeatureMatrix>,
    pub stats: BTreeMap<String, SessionStats>,
    pub issues: Vec<DataIssue>,
}

fn session_values(
    session: &Session,
    specs: &[FeatureSpec],
    windows: &WindowConfig,
) -> Result<(Vec<f64>, Vec<DataIssue>)> {
    let segments = segment_windows(session, windows)?;
    let mut issues = Vec::new();
    let mut values = Vec::with_capacity(specs.len());
    let mut in_scope = vec![false; session.events.len()];
    for spec in specs {
        // Membership mask over event positions, so an event shared by two
        // overlapping windows is counted once.
        match spec.resolved_scope(windows) {
            Scope::WholeSession => in_scope.iter_mut().for_each(|m| *m = true),
            Scope::Windows(n) => {
                in_scope.iter_mut().for_each(|m| *m = false);
                for w in segments.iter().take(n) {
                    in_scope[w.events.clone()]
                        .iter_mut()
                        .for_each(|m| *m = true);
                }
            }
        }
        let matching = session
            .events
            .iter()
            .zip(&in_scope)
            .filter(|(e, &m)| m && spec.matches.contains(&e.name))
            .map(|(e, _)| e);
        let value = match &spec.aggregator {
            Aggregator::Count => matching.count() as f64,
            Aggregator::SessionDurationSeconds => session.duration(),
            Aggregator::SumPayloadField(key) => {
                let mut sum = 0.0;
                for e in matching {
                    match e.payload.get(key) {
                        None => {}
                        Some(s) => match s.as_f64() {
                            Some(v) => sum += v,
                            None => issues.push(DataIssue {
                                session_id: session.id.clone(),
                                feature: spec.name.clone(),
                                message: format!(
                                    "payload field {key:?} of event {:?} at {} s is not numeric; counted as 0",
                                    e.name, e.time_offset
                                ),
                            }),
                        },
                    }
                }
                sum
            }
        };
        values.push(value);
    }
    Ok((values, issues))
}

/// Aggregates every session into one matrix per category that has specs.
///
/// Rows follow the order of `sessions`; every session appears in every matrix.
pub fn extract_features(
    sessions: &[Session],
    specs: &[FeatureSpec],
    windows: &WindowConfig,
) -> Result<Extraction> {
    windows.validate()?;
    validate_specs(specs, windows)?;

    let rows = sessions
        .par_iter()
        .map(|s| session_values(s, specs, windows))
        .collect::<Result<Vec<_>>>()?;

    let session_ids: Vec<String> = sessions.iter().map(|s| s.id.clone()).collect();
    let mut matrices = BTreeMap::new();
    for category in Category::ALL {
        let columns: Vec<usize> = specs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.category == category)
            .map(|(i, _)| i)
            .collect();
        if columns.is_empty() {
            continue;
        }
        let mut data = Vec::with_capacity(rows.len() * columns.len());
        for (values, _) in &rows {
            data.extend(columns.iter().map(|&j| values[j]));
        }
        let names = columns.iter().map(|&j| specs[j].name.clone()).collect();
        let values = Matrix::from_vec(rows.len(), columns.len(), data);
        matrices.insert(
            category,
            FeatureMatrix::new(category, names, session_ids.clone(), values)?,
        );
    }

    let stats = sessions
        .iter()
        .map(|s| {
            (
                s.id.clone(),
                SessionStats {
                    duration_seconds: s.duration(),
                    action_events: s.count_category(Category::Action),
                },
            )
        })
        .collect();
    let issues = rows.into_iter().flat_map(|(_, i)| i).collect();
    Ok(Extraction {
        matrices,
        stats,
        issues,
    })
}
