use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::profiles::RadarProfile;
use crate::clean::{Selection, TransformRecord};
use crate::cluster::{KSelection, SweepTable};
use crate::ingest::{Category, WindowConfig};

/// Sweep results without the per-k assignment vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub chosen_k: usize,
    pub selection: KSelection,
    pub rows: Vec<SweepSummaryRow>,
    pub centroids: Vec<Vec<f64>>,
    pub cluster_sizes: Vec<usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummaryRow {
    pub k: usize,
    pub avg_silhouette: f64,
    pub inertia: f64,
    pub iterations: usize,
    pub best_restart: usize,
    pub sampled: bool,
}

impl From<&SweepTable> for SweepSummary {
    fn from(t: &SweepTable) -> Self {
        let chosen = t.chosen();
        SweepSummary {
            chosen_k: t.chosen_k,
            selection: t.selection,
            rows: t
                .rows
                .iter()
                .map(|r| SweepSummaryRow {
                    k: r.k,
                    avg_silhouette: r.avg_silhouette,
                    inertia: r.inertia,
                    iterations: r.result.iterations,
                    best_restart: r.result.best_restart,
                    sampled: r.sampled,
                })
                .collect(),
            centroids: chosen.result.centroids.clone(),
            cluster_sizes: chosen.result.cluster_sizes(),
            warnings: t.warnings.clone(),
        }
    }
}

impl SweepSummary {
    pub fn chosen_silhouette(&self) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.k == self.chosen_k)
            .map(|r| r.avg_silhouette)
    }
}

/// Run-wide settings echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub seed: u64,
    pub window: WindowConfig,
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub k_overrides: BTreeMap<Category, usize>,
    pub pca_overrides: BTreeMap<Category, usize>,
    pub sessions_in: usize,
    pub sessions_after_validity_filter: usize,
}

/// What happened to one category, as input to [`emit_summary`].
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryInput {
    pub category: Category,
    pub skipped: Option<String>,
    pub transform: Option<TransformRecord>,
    pub sweep: Option<SweepSummary>,
    pub profiles: Vec<RadarProfile>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: Category,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cleaning: Option<CleaningStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clustering: Option<SweepSummary>,
    pub clustered_sessions: usize,
    pub profiles: Vec<RadarProfile>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningStats {
    pub rows_after_validity_filter: usize,
    pub rows_after_outliers: usize,
    pub outlier_removal: bool,
    pub log_transformed: Vec<String>,
    pub dropped_columns: Vec<String>,
    pub explained_variance: Vec<f64>,
    pub pca_dims: usize,
    pub pca_selection: Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub settings: RunSettings,
    pub categories: Vec<CategoryReport>,
}

/// Collects per-category outcomes into one report.
pub fn emit_summary(settings: RunSettings, categories: Vec<CategoryInput>) -> RunReport {
    let categories = categories
        .into_iter()
        .map(|c| {
            let cleaning = c.transform.as_ref().map(|t| CleaningStats {
                rows_after_validity_filter: t.rows_in,
                rows_after_outliers: t.rows_after_outliers,
                outlier_removal: t.outlier_removal,
                log_transformed: t
                    .features
                    .iter()
                    .filter(|f| f.log_applied)
                    .map(|f| f.name.clone())
                    .collect(),
                dropped_columns: t.dropped_columns.clone(),
                explained_variance: t.pca.explained_variance.clone(),
                pca_dims: t.knee.dims,
                pca_selection: t.knee.selection,
            });
            let clustered_sessions = c.profiles.iter().map(|p| p.size).sum();
            CategoryReport {
                category: c.category,
                status: if c.skipped.is_some() {
                    "skipped"
                } else {
                    "clustered"
                }
                .to_string(),
                skip_reason: c.skipped,
                cleaning,
                clustering: c.sweep,
                clustered_sessions,
                profiles: c.profiles,
                warnings: c.warnings,
            }
        })
        .collect();
    RunReport {
        settings,
        categories,
    }
}

fn fmt_pct(p: Option<f64>) -> String {
    p.map_or_else(|| "n/a".to_string(), |v| format!("{v:.1}"))
}

impl RunReport {
    pub fn to_markdown(&self) -> String {
        let s = &self.settings;
        let mut md = String::new();
        let _ = writeln!(md, "# Gameplay clustering report\n");
        let _ = writeln!(md, "## Settings\n");
        let _ = writeln!(md, "- seed: {}", s.seed);
        let _ = writeln!(
            md,
            "- windows: {} s wide, {} s overlap, first {} window(s)",
            s.window.width_seconds, s.window.overlap_seconds, s.window.count
        );
        let _ = writeln!(
            md,
            "- k sweep: {}..={} with {} restart(s)",
            s.k_min, s.k_max, s.restarts
        );
        let overrides = |m: &BTreeMap<Category, usize>| {
            if m.is_empty() {
                "none (automatic)".to_string()
            } else {
                m.iter()
                    .map(|(c, k)| format!("{c}={k}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            }
        };
        let _ = writeln!(md, "- k overrides: {}", overrides(&s.k_overrides));
        let _ = writeln!(
            md,
            "- PCA dimension overrides: {}",
            overrides(&s.pca_overrides)
        );
        let _ = writeln!(
            md,
            "- sessions: {} ingested, {} after the validity filter\n",
            s.sessions_in, s.sessions_after_validity_filter
        );

        for c in &self.categories {
            let _ = writeln!(md, "## {}\n", c.category);
            if let Some(reason) = &c.skip_reason {
                let _ = writeln!(md, "Skipped: {reason}\n");
                continue;
            }
            if let Some(cl) = &c.cleaning {
                let _ = writeln!(
                    md,
                    "- sessions: {} after validity filter, {} after outlier removal{}",
                    cl.rows_after_validity_filter,
                    cl.rows_after_outliers,
                    if cl.outlier_removal {
                        ""
                    } else {
                        " (outlier removal disabled)"
                    }
                );
                let list = |v: &[String]| {
                    if v.is_empty() {
                        "none".to_string()
                    } else {
                        v.join(", ")
                    }
                };
                let _ = writeln!(md, "- log-transformed: {}", list(&cl.log_transformed));
                let _ = writeln!(
                    md,
                    "- dropped constant columns: {}",
                    list(&cl.dropped_columns)
                );
                let _ = writeln!(
                    md,
                    "- PCA: {} dimension(s) ({:?}); explained variance {}",
                    cl.pca_dims,
                    cl.pca_selection,
                    cl.explained_variance
                        .iter()
                        .map(|v| format!("{v:.4}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                );
            }
            if let Some(sw) = &c.clustering {
                let _ = writeln!(
                    md,
                    "- chosen k: {} ({:?}), average silhouette {:.4}\n",
                    sw.chosen_k,
                    sw.selection,
                    sw.chosen_silhouette().unwrap_or(f64::NAN)
                );
                let _ = writeln!(md, "| k | avg silhouette | inertia |\n|---|---|---|");
                for r in &sw.rows {
                    let mark = if r.k == sw.chosen_k { " *" } else { "" };
                    let _ = writeln!(
                        md,
                        "| {}{mark} | {:.4} | {:.4} |",
                        r.k, r.avg_silhouette, r.inertia
                    );
                }
                let _ = writeln!(md);
            }
            if let Some(first) = c.profiles.first() {
                let _ = write!(md, "| cluster | size |");
                for a in &first.axes {
                    let _ = write!(md, " {} % |", a.feature);
                }
                let _ = write!(md, "\n|---|---|");
                for _ in &first.axes {
                    let _ = write!(md, "---|");
                }
                let _ = writeln!(md);
                for p in &c.profiles {
                    let _ = write!(md, "| {} | {} |", p.cluster, p.size);
                    for a in &p.axes {
                        let _ = write!(md, " {} |", fmt_pct(a.percent));
                    }
                    let _ = writeln!(md);
                }
                let _ = writeln!(md, "\nClustered sessions: {}\n", c.clustered_sessions);
            }
            for w in &c.warnings {
                let _ = writeln!(md, "> warning: {w}\n");
            }
        }
        md
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::profiles::AxisValue;

    fn settings() -> RunSettings {
        RunSettings {
            seed: 1,
            window: WindowConfig::default(),
            k_min: 2,
            k_max: 10,
            restarts: 10,
            k_overrides: BTreeMap::from([
                (Category::Action, 6),
                (Category::Feedback, 7),
                (Category::Progression, 7),
            ]),
            pca_overrides: BTreeMap::new(),
            sessions_in: 10,
            sessions_after_validity_filter: 0,
        }
    }

    #[test]
    fn skipped_category_is_explained() {
        let r = emit_summary(
            settings(),
            vec![CategoryInput {
                category: Category::Feedback,
                skipped: Some("no sessions left after the validity filter".into()),
                transform: None,
                sweep: None,
                profiles: vec![],
                warnings: vec![],
            }],
        );
        let md = r.to_markdown();
        assert!(md.contains("Skipped: no sessions left after the validity filter"));
        assert_eq!(r.categories[0].status, "skipped");
    }

    #[test]
    fn echoes_case_study_overrides() {
        let md = emit_summary(settings(), vec![]).to_markdown();
        assert!(md.contains("k overrides: action=6, feedback=7, progression=7"));
        assert!(md.contains("300 s wide, 30 s overlap, first 2 window(s)"));
    }

    #[test]
    fn sizes_sum_to_clustered_count() {
        let prof = |c, size| RadarProfile {
            category: Category::Action,
            cluster: c,
            size,
            axes: vec![AxisValue {
                feature: "x".into(),
                cluster_mean: 1.0,
                population_mean: 1.0,
                percent: Some(100.0),
            }],
        };
        let r = emit_summary(
            settings(),
            vec![CategoryInput {
                category: Category::Action,
                skipped: None,
                transform: None,
                sweep: None,
                profiles: vec![prof(0, 4), prof(1, 6)],
                warnings: vec![],
            }],
        );
        assert_eq!(r.categories[0].clustered_sessions, 10);
        assert!(r.to_markdown().contains("Clustered sessions: 10"));
    }
}
