//! Session filtering, outlier screening and the transform chain that turns
//! raw counts into a clustering-ready representation.
//!
//! Stage order is fixed: validity filter, per-category outlier removal,
//! log transform of right-tailed columns, standardization, PCA.

mod pca;
mod transform;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use pca::{
    covariance, orient, pca_fit, project, select_knee, symmetric_eigen, Knee, PcaModel, Selection,
};
pub use transform::{
    detect_right_tailed, log_transform, sample_skewness, standardize, Standardization,
};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, SessionStats};
use crate::ingest::Category;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleaningRules {
    pub min_duration_seconds: f64,
    pub max_duration_seconds: f64,
    pub min_action_events: usize,
    /// Rows with any value at least this many population SDs from the column
    /// mean are dropped.
    pub outlier_sigma: f64,
    pub skew_threshold: f64,
    pub outlier_categories: BTreeSet<Category>,
}

impl Default for CleaningRules {
    fn default() -> Self {
        CleaningRules {
            min_duration_seconds: 300.0,
            max_duration_seconds: 2700.0,
            min_action_events: 10,
            outlier_sigma: 3.0,
            skew_threshold: 2.0,
            outlier_categories: [Category::Action, Category::Feedback].into(),
        }
    }
}

impl CleaningRules {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_duration_seconds >= 0.0 && self.min_duration_seconds.is_finite()) {
            return Err(Error::config(
                "cleaning.min_duration_seconds must be a non-negative number",
            ));
        }
        if self.max_duration_seconds.is_nan()
            || self.min_duration_seconds >= self.max_duration_seconds
        {
            return Err(Error::config(format!(
                "cleaning.min_duration_seconds ({}) must be below cleaning.max_duration_seconds ({})",
                self.min_duration_seconds, self.max_duration_seconds
            )));
        }
        if self.outlier_sigma.is_nan() || self.outlier_sigma <= 0.0 {
            return Err(Error::config("cleaning.outlier_sigma must be positive"));
        }
        if self.skew_threshold.is_nan() {
            return Err(Error::config("cleaning.skew_threshold must be a number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    TooShort,
    TooLong,
    TooFewActions,
    MissingStats,
    Outlier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSession {
    pub session_id: String,
    pub reason: DropReason,
    /// Offending feature for outlier drops.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<String>,
}

/// Applies the duration band and minimum action count to every category.
///
/// Sessions without stats are dropped with [`DropReason::MissingStats`].
pub fn filter_sessions(
    matrices: &BTreeMap<Category, FeatureMatrix>,
    stats: &BTreeMap<String, SessionStats>,
    rules: &CleaningRules,
) -> (BTreeMap<Category, FeatureMatrix>, Vec<DroppedSession>) {
    let verdict = |id: &str| -> Option<DropReason> {
        let Some(s) = stats.get(id) else {
            return Some(DropReason::MissingStats);
        };
        if s.duration_seconds < rules.min_duration_seconds {
            Some(DropReason::TooShort)
        } else if s.duration_seconds > rules.max_duration_seconds {
            Some(DropReason::TooLong)
        } else if s.action_events < rules.min_action_events {
            Some(DropReason::TooFewActions)
        } else {
            None
        }
    };

    let mut dropped: BTreeMap<String, DropReason> = BTreeMap::new();
    let filtered = matrices
        .iter()
        .map(|(cat, m)| {
            let keep: Vec<bool> = m
                .session_ids
                .iter()
                .map(|id| match verdict(id) {
                    Some(reason) => {
                        dropped.insert(id.clone(), reason);
                        false
                    }
                    None => true,
                })
                .collect();
            (*cat, m.retain_rows(|i| keep[i]))
        })
        .collect();
    let dropped = dropped
        .into_iter()
        .map(|(session_id, reason)| DroppedSession {
            session_id,
            reason,
            feature: None,
        })
        .collect();
    (filtered, dropped)
}

/// Population mean and SD (n denominator) of each column.
pub fn population_stats(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows() as f64;
    (0..m.cols())
        .map(|j| {
            let col = m.column(j);
            if transform::is_constant(&col) {
                return (col.first().copied().unwrap_or(0.0), 0.0);
            }
            let mean = transform::mean(&col);
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .unzip()
}

/// Single-pass outlier screen.
///
/// Column means and population SDs are computed once on the input; a row is
/// dropped when any value satisfies `|v - mean| >= sigma * sd`. Constant
/// columns never flag a row. Matrices with fewer than two rows pass through.
pub fn remove_outliers(matrix: &FeatureMatrix, sigma: f64) -> (FeatureMatrix, Vec<DroppedSession>) {
    if matrix.rows() < 2 || sigma.is_infinite() {
        return (matrix.clone(), Vec::new());
    }
    let (means, sds) = population_stats(&matrix.values);
    let mut dropped = Vec::new();
    let keep: Vec<bool> = matrix
        .values
        .iter_rows()
        .enumerate()
        .map(|(i, row)| {
            let hit = row
                .iter()
                .enumerate()
                .find(|&(j, v)| sds[j] > 0.0 && (v - means[j]).abs() >= sigma * sds[j]);
            match hit {
                Some((j, _)) => {
                    dropped.push(DroppedSession {
                        session_id: matrix.session_ids[i].clone(),
                        reason: DropReason::Outlier,
                        feature: Some(matrix.feature_names[j].clone()),
                    });
                    false
                }
                None => true,
            }
        })
        .collect();
    (matrix.retain_rows(|i| keep[i]), dropped)
}

/// Per-feature bookkeeping for one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub name: String,
    /// Population statistics used by the outlier screen, if it ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlier_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlier_population_sd: Option<f64>,
    pub skewness: Option<f64>,
    pub log_applied: bool,
    /// Standardization statistics; absent for dropped constant columns.
    pub mean: Option<f64>,
    pub sample_sd: Option<f64>,
    pub retained: bool,
}

/// Everything the transform chain decided for one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub category: Category,
    pub rows_in: usize,
    pub rows_after_outliers: usize,
    pub outlier_removal: bool,
    pub outlier_sigma: f64,
    pub features: Vec<FeatureTransform>,
    pub dropped_columns: Vec<String>,
    pub dropped_sessions: Vec<DroppedSession>,
    pub pca: PcaModel,
    pub knee: Knee,
}

impl TransformRecord {
    pub fn chosen_dims(&self) -> usize {
        self.knee.dims
    }
}

/// Output of the transform chain for one category.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCategory {
    /// Filtered, untransformed counts; the basis for radar profiles.
    pub profile: FeatureMatrix,
    /// Sessions x principal components.
    pub reduced: Matrix,
    pub record: TransformRecord,
}

/// Runs outlier removal, log transform, standardization and PCA on one
/// already validity-filtered category.
pub fn prepare_category(
    matrix: &FeatureMatrix,
    rules: &CleaningRules,
    pca_dims: Option<usize>,
) -> Result<PreparedCategory> {
    let category = matrix.category;
    let outlier_removal = rules.outlier_categories.contains(&category);
    let (screen_means, screen_sds) = population_stats(&matrix.values);
    let (profile, dropped_sessions) = if outlier_removal {
        remove_outliers(matrix, rules.outlier_sigma)
    } else {
        (matrix.clone(), Vec::new())
    };
    if profile.rows() < 2 {
        return Err(Error::data(format!(
            "{category}: {} session(s) left after cleaning; need at least 2",
            profile.rows()
        )));
    }

    let mut logged = profile.values.clone();
    let mut features: Vec<FeatureTransform> = Vec::with_capacity(profile.feature_names.len());
    for (j, name) in profile.feature_names.iter().enumerate() {
        let col = profile.values.column(j);
        let skewness = sample_skewness(&col);
        let log_applied = detect_right_tailed(&col, rules.skew_threshold);
        if log_applied {
            for (i, v) in log_transform(name, &col)?.into_iter().enumerate() {
                logged[(i, j)] = v;
            }
        }
        features.push(FeatureTransform {
            name: name.clone(),
            outlier_mean: outlier_removal.then(|| screen_means[j]),
            outlier_population_sd: outlier_removal.then(|| screen_sds[j]),
            skewness,
            log_applied,
            mean: None,
            sample_sd: None,
            retained: false,
        });
    }
    let logged = FeatureMatrix::new(
        category,
        profile.feature_names.clone(),
        profile.session_ids.clone(),
        logged,
    )?;

    let (standardized, stats) = standardize(&logged)?;
    for (k, &j) in stats.retained.iter().enumerate() {
        features[j].mean = Some(stats.means[k]);
        features[j].sample_sd = Some(stats.std_devs[k]);
        features[j].retained = true;
    }

    let pca = pca_fit(&standardized.values)?;
    let knee = select_knee(&pca.explained_variance, pca_dims)?;
    let reduced = project(&standardized.values, &pca, knee.dims)?;

    let record = TransformRecord {
        category,
        rows_in: matrix.rows(),
        rows_after_outliers: profile.rows(),
        outlier_removal,
        outlier_sigma: rules.outlier_sigma,
        features,
        dropped_columns: stats.dropped,
        dropped_sessions,
        pca,
        knee,
    };
    Ok(PreparedCategory {
        profile,
        reduced,
        record,
    })
}

/// Column-centers a plain matrix, returning the means.
pub fn center(x: &Matrix) -> (Matrix, Vec<f64>) {
    let means: Vec<f64> = (0..x.cols())
        .map(|j| transform::mean(&x.column(j)))
        .collect();
    let mut out = x.clone();
    for i in 0..x.rows() {
        for (v, m) in out.row_mut(i).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    (out, means)
}

/// Z-scores every column of a plain matrix (sample SD); constant columns become 0.
pub fn standardize_matrix(x: &Matrix) -> (Matrix, Vec<f64>) {
    let (mut out, _) = center(x);
    let n = x.rows();
    let sds: Vec<f64> = (0..x.cols())
        .map(|j| {
            let ss: f64 = out.iter_rows().map(|r| r[j] * r[j]).sum();
            (ss / (n.saturating_sub(1).max(1)) as f64).sqrt()
        })
        .collect();
    for i in 0..n {
        for (v, sd) in out.row_mut(i).iter_mut().zip(&sds) {
            *v = if *sd > 0.0 { *v / sd } else { 0.0 };
        }
    }
    (out, sds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(category: Category, ids: &[&str], rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::new(
            category,
            (0..rows[0].len()).map(|j| format!("f{j}")).collect(),
            ids.iter().map(|s| s.to_string()).collect(),
            Matrix::from_rows(rows),
        )
        .unwrap()
    }

    fn stats(entries: &[(&str, f64, usize)]) -> BTreeMap<String, SessionStats> {
        entries
            .iter()
            .map(|&(id, d, a)| {
                (
                    id.to_string(),
                    SessionStats {
                        duration_seconds: d,
                        action_events: a,
                    },
                )
            })
            .collect()
    }

    #[test]
    fn duration_band_keeps_middle_session() {
        let m = fm(
            Category::Action,
            &["A", "B", "C"],
            &[&[1.0], &[2.0], &[3.0]],
        );
        let matrices = BTreeMap::from([(Category::Action, m)]);
        let st = stats(&[("A", 240.0, 50), ("B", 600.0, 50), ("C", 2760.0, 50)]);
        let (out, dropped) = filter_sessions(&matrices, &st, &CleaningRules::default());
        assert_eq!(out[&Category::Action].session_ids, ["B"]);
        assert_eq!(dropped[0].reason, DropReason::TooShort);
        assert_eq!(dropped[1].reason, DropReason::TooLong);
    }

    #[test]
    fn too_few_actions_is_dropped() {
        let m = fm(Category::Feedback, &["A", "B"], &[&[1.0], &[2.0]]);
        let matrices = BTreeMap::from([(Category::Feedback, m)]);
        let st = stats(&[("A", 600.0, 9), ("B", 600.0, 10)]);
        let (out, dropped) = filter_sessions(&matrices, &st, &CleaningRules::default());
        assert_eq!(out[&Category::Feedback].session_ids, ["B"]);
        assert_eq!(dropped[0].reason, DropReason::TooFewActions);
    }

    #[test]
    fn valid_sessions_pass_unchanged() {
        let m = fm(Category::Action, &["A", "B"], &[&[1.0, 2.0], &[3.0, 4.0]]);
        let matrices = BTreeMap::from([(Category::Action, m.clone())]);
        let st = stats(&[("A", 300.0, 10), ("B", 2700.0, 99)]);
        let (out, dropped) = filter_sessions(&matrices, &st, &CleaningRules::default());
        assert_eq!(out[&Category::Action], m);
        assert!(dropped.is_empty());
    }

    #[test]
    fn three_sigma_spike_is_removed() {
        let rows: Vec<[f64; 1]> = (0..10)
            .map(|i| [if i == 9 { 100.0 } else { 0.0 }])
            .collect();
        let rows: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let m = fm(Category::Action, &ids, &rows);

        // Brute force: mean 10, population SD sqrt(900) = 30, |100 - 10| = 3 SD.
        let col = m.values.column(0);
        let mean = col.iter().sum::<f64>() / 10.0;
        let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 10.0).sqrt();
        assert_eq!((mean, sd), (10.0, 30.0));
        assert_eq!((100.0 - mean) / sd, 3.0);

        let (out, dropped) = remove_outliers(&m, 3.0);
        assert_eq!(out.rows(), 9);
        assert_eq!(dropped[0].session_id, "s9");
        assert_eq!(dropped[0].feature.as_deref(), Some("f0"));
    }

    #[test]
    fn identical_rows_and_disabled_screen_keep_everything() {
        let m = fm(
            Category::Action,
            &["a", "b", "c"],
            &[&[5.0, 1.0], &[5.0, 1.0], &[5.0, 1.0]],
        );
        assert_eq!(remove_outliers(&m, 3.0).0, m);
        let rows: Vec<[f64; 1]> = (0..10)
            .map(|i| [if i == 9 { 100.0 } else { 0.0 }])
            .collect();
        let rows: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let spiky = fm(Category::Action, &ids, &rows);
        assert_eq!(remove_outliers(&spiky, f64::INFINITY).0, spiky);
    }

    #[test]
    fn progression_skips_outlier_screen() {
        let rows: Vec<[f64; 3]> = (0..10)
            .map(|i| [if i == 9 { 100.0 } else { 0.0 }, i as f64, (i * i) as f64])
            .collect();
        let rows: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let rules = CleaningRules::default();

        let prog = prepare_category(&fm(Category::Progression, &ids, &rows), &rules, None).unwrap();
        assert_eq!(prog.record.rows_after_outliers, 10);
        assert!(!prog.record.outlier_removal);

        let act = prepare_category(&fm(Category::Action, &ids, &rows), &rules, None).unwrap();
        assert_eq!(act.record.rows_after_outliers, 9);
        assert_eq!(act.profile.rows(), 9);
    }

    #[test]
    fn transform_chain_records_decisions() {
        let rows: Vec<[f64; 4]> = (0..12)
            .map(|i| {
                let f = i as f64;
                [
                    f,
                    (i % 3) as f64,
                    7.0,
                    if i == 11 { 40.0 } else { (i % 2) as f64 },
                ]
            })
            .collect();
        let rows: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let ids: Vec<String> = (0..12).map(|i| format!("s{i:02}")).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let rules = CleaningRules {
            outlier_categories: BTreeSet::new(),
            ..CleaningRules::default()
        };
        let p = prepare_category(&fm(Category::Action, &ids, &rows), &rules, Some(2)).unwrap();
        let r = &p.record;
        assert_eq!(r.dropped_columns, ["f2"]);
        assert!(r.features[3].log_applied);
        assert!(!r.features[0].log_applied);
        assert!(!r.features[2].retained);
        assert_eq!(r.pca.width(), 3);
        assert_eq!(r.knee.selection, Selection::Manual);
        assert_eq!((p.reduced.rows(), p.reduced.cols()), (12, 2));
        // Profiles keep untransformed values.
        assert_eq!(p.profile.values[(11, 3)], 40.0);
        let total: f64 = r.pca.explained_variance.iter().sum();
        assert!((total - 3.0).abs() < 1e-9);
    }

    #[test]
    fn rules_validation() {
        let bad = CleaningRules {
            min_duration_seconds: 600.0,
            max_duration_seconds: 300.0,
            ..CleaningRules::default()
        };
        assert!(bad.validate().is_err());
        assert!(CleaningRules {
            outlier_sigma: 0.0,
            ..CleaningRules::default()
        }
        .validate()
        .is_err());
        assert!(CleaningRules::default().validate().is_ok());
    }
}
