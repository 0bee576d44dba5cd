use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::matrix::Matrix;

pub(crate) fn is_constant(column: &[f64]) -> bool {
    column.windows(2).all(|w| w[0] == w[1])
}

pub(crate) fn mean(column: &[f64]) -> f64 {
    column.iter().sum::<f64>() / column.len() as f64
}

/// Adjusted Fisher-Pearson sample skewness `G1`. `None` for fewer than three
/// values or a constant column.
pub fn sample_skewness(column: &[f64]) -> Option<f64> {
    let n = column.len();
    if n < 3 || is_constant(column) {
        return None;
    }
    let m = mean(column);
    let (m2, m3) = column.iter().fold((0.0, 0.0), |(s2, s3), &x| {
        let d = x - m;
        (s2 + d * d, s3 + d * d * d)
    });
    let nf = n as f64;
    let (m2, m3) = (m2 / nf, m3 / nf);
    if m2 == 0.0 {
        return None;
    }
    let g1 = m3 / m2.powf(1.5);
    Some(g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0))
}

/// True when the column's sample skewness exceeds `threshold`.
pub fn detect_right_tailed(column: &[f64], threshold: f64) -> bool {
    sample_skewness(column).is_some_and(|g| g > threshold)
}

/// `ln(1 + x)` elementwise. Negative inputs are rejected, naming `feature`.
pub fn log_transform(feature: &str, column: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = column.iter().find(|v| **v < 0.0) {
        return Err(Error::data(format!(
            "feature {feature:?} has negative value {v}; log transform needs non-negative input"
        )));
    }
    Ok(column.iter().map(|v| v.ln_1p()).collect())
}

/// Column statistics recorded by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    /// Indices (into the input matrix) of the retained columns.
    pub retained: Vec<usize>,
    pub means: Vec<f64>,
    /// Sample standard deviations (n - 1 denominator).
    pub std_devs: Vec<f64>,
    /// Names of constant columns that were dropped.
    pub dropped: Vec<String>,
}

/// Centers each column and scales it to unit sample standard deviation.
///
/// Constant columns are dropped and listed rather than divided by zero.
pub fn standardize(matrix: &FeatureMatrix) -> Result<(FeatureMatrix, Standardization)> {
    let n = matrix.rows();
    if n < 2 {
        return Err(Error::data(format!(
            "{}: standardization needs at least 2 sessions, got {n}",
            matrix.category
        )));
    }
    let mut stats = Standardization {
        retained: Vec::new(),
        means: Vec::new(),
        std_devs: Vec::new(),
        dropped: Vec::new(),
    };
    let mut columns = Vec::new();
    for j in 0..matrix.values.cols() {
        let col = matrix.values.column(j);
        if is_constant(&col) {
            stats.dropped.push(matrix.feature_names[j].clone());
            continue;
        }
        let m = mean(&col);
        let centered: Vec<f64> = col.iter().map(|x| x - m).collect();
        let ss: f64 = centered.iter().map(|d| d * d).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        if sd == 0.0 || !sd.is_finite() {
            stats.dropped.push(matrix.feature_names[j].clone());
            continue;
        }
        stats.retained.push(j);
        stats.means.push(m);
        stats.std_devs.push(sd);
        columns.push(centered.into_iter().map(|d| d / sd).collect::<Vec<f64>>());
    }
    if columns.is_empty() {
        return Err(Error::data(format!(
            "{}: every feature column is constant; nothing to cluster",
            matrix.category
        )));
    }
    let mut values = Matrix::zeros(n, columns.len());
    for (j, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            values[(i, j)] = *v;
        }
    }
    let names = stats
        .retained
        .iter()
        .map(|&j| matrix.feature_names[j].clone())
        .collect();
    let out = FeatureMatrix::new(matrix.category, names, matrix.session_ids.clone(), values)?;
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Category;
    use proptest::prelude::*;

    fn fm(rows: &[&[f64]]) -> FeatureMatrix {
        let cols = rows[0].len();
        FeatureMatrix::new(
            Category::Action,
            (0..cols).map(|j| format!("f{j}")).collect(),
            (0..rows.len()).map(|i| format!("s{i}")).collect(),
            Matrix::from_rows(rows),
        )
        .unwrap()
    }

    /// Skewness by the textbook formula, written out longhand.
    fn skew_oracle(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
        (n * (n - 1.0)).sqrt() / (n - 2.0) * m3 / m2.powf(1.5)
    }

    #[test]
    fn symmetric_column_is_not_right_tailed() {
        assert!(!detect_right_tailed(&[1.0, 2.0, 3.0, 4.0, 5.0], 2.0));
        assert!(sample_skewness(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn single_spike_is_right_tailed() {
        let col = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 50.0];
        // m2 = 225, m3 = 9000, g1 = 8/3, G1 = sqrt(90)/8 * 8/3 = sqrt(10) ≈ 3.1623
        let g = sample_skewness(&col).unwrap();
        assert!((g - 10f64.sqrt()).abs() < 1e-12, "{g}");
        assert!((g - skew_oracle(&col)).abs() < 1e-12);
        assert!(detect_right_tailed(&col, 2.0));
    }

    #[test]
    fn constant_column_is_not_right_tailed() {
        assert!(!detect_right_tailed(&[4.0; 8], 2.0));
        assert!(!detect_right_tailed(&[0.1, 0.1, 0.1], -1.0));
    }

    #[test]
    fn log1p_values() {
        let out = log_transform("x", &[0.0, std::f64::consts::E - 1.0]).unwrap();
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 1.0).abs() < 1e-15);
        let err = log_transform("homes", &[1.0, -2.0]).unwrap_err();
        assert!(err.to_string().contains("homes"));
    }

    #[test]
    fn standardize_simple_column() {
        let (out, stats) = standardize(&fm(&[&[1.0], &[2.0], &[3.0]])).unwrap();
        assert_eq!(out.values.column(0), [-1.0, 0.0, 1.0]);
        assert_eq!(stats.means, [2.0]);
        assert_eq!(stats.std_devs, [1.0]);
    }

    #[test]
    fn constant_columns_are_dropped() {
        let (out, stats) = standardize(&fm(&[&[1.0, 5.0], &[2.0, 5.0], &[4.0, 5.0]])).unwrap();
        assert_eq!(out.feature_names, ["f0"]);
        assert_eq!(stats.dropped, ["f1"]);
        let err = standardize(&fm(&[&[5.0], &[5.0]])).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(standardize(&fm(&[&[5.0]])).is_err());
    }

    proptest! {
        #[test]
        fn log_transform_is_monotone(mut xs in prop::collection::vec(0.0f64..1e6, 1..50)) {
            xs.sort_by(f64::total_cmp);
            let ys = log_transform("x", &xs).unwrap();
            for w in ys.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
        }

        #[test]
        fn standardized_columns_have_zero_mean_unit_sd(
            data in prop::collection::vec(-100.0f64..100.0, 15)
        ) {
            let rows: Vec<&[f64]> = data.chunks(3).collect();
            let (out, _) = standardize(&fm(&rows)).unwrap();
            for j in 0..out.values.cols() {
                let col = out.values.column(j);
                let m = col.iter().sum::<f64>() / col.len() as f64;
                let sd = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt();
                prop_assert!(m.abs() < 1e-9);
                prop_assert!((sd - 1.0).abs() < 1e-9);
            }
        }
    }
}
