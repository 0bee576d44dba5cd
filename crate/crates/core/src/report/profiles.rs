use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::ingest::Category;

/// One radar axis: a feature's cluster mean relative to the population mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisValue {
    pub feature: String,
    pub cluster_mean: f64,
    pub population_mean: f64,
    /// `100 * cluster_mean / population_mean`; `None` when the population
    /// mean is zero.
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarProfile {
    pub category: Category,
    pub cluster: usize,
    pub size: usize,
    pub axes: Vec<AxisValue>,
}

/// Per-cluster feature means as a percentage of the population mean,
/// computed on the untransformed matrix that was clustered.
pub fn cluster_profiles(
    matrix: &FeatureMatrix,
    assignments: &[usize],
) -> Result<Vec<RadarProfile>> {
    if assignments.len() != matrix.rows() {
        return Err(Error::data(format!(
            "{}: {} assignments for {} sessions",
            matrix.category,
            assignments.len(),
            matrix.rows()
        )));
    }
    if matrix.rows() == 0 {
        return Ok(Vec::new());
    }
    let cols = matrix.values.cols();
    let n = matrix.rows() as f64;
    let population: Vec<f64> = (0..cols)
        .map(|j| matrix.values.iter_rows().map(|r| r[j]).sum::<f64>() / n)
        .collect();

    let mut clusters: Vec<usize> = assignments.to_vec();
    clusters.sort_unstable();
    clusters.dedup();

    Ok(clusters
        .into_iter()
        .map(|c| {
            let members: Vec<&[f64]> = matrix
                .values
                .iter_rows()
                .zip(assignments)
                .filter(|(_, &a)| a == c)
                .map(|(r, _)| r)
                .collect();
            let size = members.len();
            let axes = (0..cols)
                .map(|j| {
                    let cluster_mean = members.iter().map(|r| r[j]).sum::<f64>() / size as f64;
                    let population_mean = population[j];
                    let percent =
                        (population_mean != 0.0).then(|| 100.0 * cluster_mean / population_mean);
                    AxisValue {
                        feature: matrix.feature_names[j].clone(),
                        cluster_mean,
                        population_mean,
                        percent,
                    }
                })
                .collect();
            RadarProfile {
                category: matrix.category,
                cluster: c,
                size,
                axes,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn fm(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::new(
            Category::Feedback,
            (0..rows[0].len()).map(|j| format!("f{j}")).collect(),
            (0..rows.len()).map(|i| format!("s{i}")).collect(),
            Matrix::from_rows(rows),
        )
        .unwrap()
    }

    #[test]
    fn whole_population_is_one_hundred_percent() {
        let m = fm(&[&[1.0, 3.0, 0.5], &[2.0, 7.0, 0.25], &[9.0, 1.0, 0.125]]);
        let p = cluster_profiles(&m, &[0, 0, 0]).unwrap();
        assert_eq!(p.len(), 1);
        assert!(p[0].axes.iter().all(|a| a.percent == Some(100.0)));
    }

    #[test]
    fn two_equal_clusters() {
        let m = fm(&[&[8.0], &[12.0], &[28.0], &[32.0]]);
        let p = cluster_profiles(&m, &[0, 0, 1, 1]).unwrap();
        assert_eq!(p[0].axes[0].population_mean, 20.0);
        assert!((p[0].axes[0].percent.unwrap() - 50.0).abs() < 1e-12);
        assert!((p[1].axes[0].percent.unwrap() - 150.0).abs() < 1e-12);
    }

    #[test]
    fn zero_numerator_and_zero_population() {
        let m = fm(&[&[0.0, 0.0], &[4.0, 0.0]]);
        let p = cluster_profiles(&m, &[0, 1]).unwrap();
        assert_eq!(p[0].axes[0].percent, Some(0.0));
        assert_eq!(p[0].axes[1].percent, None);
        assert_eq!(p[1].axes[1].percent, None);
    }

    #[test]
    fn mismatched_assignments() {
        let m = fm(&[&[1.0], &[2.0]]);
        assert!(cluster_profiles(&m, &[0]).is_err());
    }
}
