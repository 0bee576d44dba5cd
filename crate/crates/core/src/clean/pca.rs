use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues and the matching eigenvectors as matrix columns, in
/// the order they end up on the diagonal (unsorted).
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::numeric(format!(
            "eigen-decomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if a.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(
            "covariance matrix contains non-finite entries",
        ));
    }
    let mut a = a.clone();
    let mut v = Matrix::identity(n);
    let scale: f64 = a.as_slice().iter().map(|x| x * x).sum();

    for sweep in 0..=MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off == 0.0 || off <= scale * 1e-32 {
            break;
        }
        if sweep == MAX_SWEEPS {
            return Err(Error::numeric(format!(
                "Jacobi eigen-solver did not converge in {MAX_SWEEPS} sweeps \
                 (off-diagonal mass {off:e}, matrix mass {scale:e})"
            )));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok(((0..n).map(|i| a[(i, i)]).collect(), v))
}

/// Sample covariance (n - 1 denominator) of the columns of `x`.
pub fn covariance(x: &Matrix) -> Matrix {
    let (n, p) = (x.rows(), x.cols());
    let means: Vec<f64> = (0..p)
        .map(|j| x.iter_rows().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = Matrix::zeros(p, p);
    for row in x.iter_rows() {
        for i in 0..p {
            let di = row[i] - means[i];
            for j in i..p {
                cov[(i, j)] += di * (row[j] - means[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..p {
        for j in i..p {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
pub fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Principal axes of a standardized matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// One orthonormal component per row, ordered by explained variance.
    pub components: Vec<Vec<f64>>,
    /// Covariance eigenvalues, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Trace of the covariance matrix.
    pub total_variance: f64,
}

impl PcaModel {
    pub fn width(&self) -> usize {
        self.components.first().map_or(0, Vec::len)
    }
}

/// Fits PCA by eigen-decomposition of the sample covariance matrix.
pub fn pca_fit(x: &Matrix) -> Result<PcaModel> {
    if x.rows() < 2 {
        return Err(Error::numeric(format!(
            "PCA needs at least 2 rows, got {}",
            x.rows()
        )));
    }
    if x.cols() == 0 {
        return Err(Error::numeric("PCA needs at least one column"));
    }
    let cov = covariance(x);
    let total_variance = (0..cov.rows()).map(|i| cov[(i, i)]).sum();
    let (values, vectors) = symmetric_eigen(&cov)?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));

    let mut components = Vec::with_capacity(order.len());
    let mut explained_variance = Vec::with_capacity(order.len());
    for &j in &order {
        let mut c = vectors.column(j);
        orient(&mut c);
        components.push(c);
        // Round-off can leave rank-deficient directions slightly negative.
        explained_variance.push(values[j].max(0.0));
    }
    Ok(PcaModel {
        components,
        explained_variance,
        total_variance,
    })
}

/// Projects rows of `x` onto the first `dims` components.
pub fn project(x: &Matrix, model: &PcaModel, dims: usize) -> Result<Matrix> {
    if x.cols() != model.width() {
        return Err(Error::config(format!(
            "projection width mismatch: data has {} columns, components have {}",
            x.cols(),
            model.width()
        )));
    }
    if dims > model.components.len() {
        return Err(Error::config(format!(
            "cannot project onto {dims} components; only {} available",
            model.components.len()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), dims);
    for (i, row) in x.iter_rows().enumerate() {
        for (d, comp) in model.components.iter().take(dims).enumerate() {
            out[(i, d)] = row.iter().zip(comp).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Auto,
    Manual,
}

/// Chosen dimensionality plus the scree data behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knee {
    pub dims: usize,
    pub selection: Selection,
    /// Distance of each cumulative-scree point from the first-to-last chord.
    pub chord_distances: Vec<f64>,
}

/// Picks the number of components at the knee of the scree curve.
///
/// The knee is the point of the cumulative explained-variance curve that lies
/// farthest from the chord joining its first and last points; ties go to
/// fewer dimensions. An override short-circuits the choice.
pub fn select_knee(explained_variance: &[f64], override_dims: Option<usize>) -> Result<Knee> {
    let m = explained_variance.len();
    if m == 0 {
        return Err(Error::numeric("scree curve is empty"));
    }
    let mut cumulative = Vec::with_capacity(m);
    let mut acc = 0.0;
    for v in explained_variance {
        acc += v;
        cumulative.push(acc);
    }
    let (x0, y0) = (1.0, cumulative[0]);
    let (x1, y1) = (m as f64, cumulative[m - 1]);
    let (dx, dy) = (x1 - x0, y1 - y0);
    let norm = (dx * dx + dy * dy).sqrt();
    let chord_distances: Vec<f64> = cumulative
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if norm == 0.0 {
                0.0
            } else {
                ((i as f64 + 1.0 - x0) * dy - (y - y0) * dx).abs() / norm
            }
        })
        .collect();

    if let Some(d) = override_dims {
        if d == 0 || d > m {
            return Err(Error::config(format!(
                "pca.dims override {d} is outside 1..={m} available components"
            )));
        }
        return Ok(Knee {
            dims: d,
            selection: Selection::Manual,
            chord_distances,
        });
    }

    let tol = 1e-12 * cumulative[m - 1].abs().max(f64::MIN_POSITIVE);
    let mut best = 0;
    for (i, &d) in chord_distances.iter().enumerate() {
        if d > chord_distances[best] + tol {
            best = i;
        }
    }
    Ok(Knee {
        dims: best + 1,
        selection: Selection::Auto,
        chord_distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.sample(StandardNormal))
                .collect(),
        )
    }

    #[test]
    fn rank_one_data_has_one_component() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [4.0, 4.0], [-3.0, -3.0]]);
        let model = pca_fit(&x).unwrap();
        assert!(model.explained_variance[1] <= 1e-9);
        let share = model.explained_variance[0] / model.total_variance;
        assert!((share - 1.0).abs() < 1e-12);
        let c = &model.components[0];
        assert!((c[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((c[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn isotropic_data_has_unit_variances() {
        let x = random(10_000, 2, 11);
        let (z, _) = crate::clean::standardize_matrix(&x);
        let model = pca_fit(&z).unwrap();
        for v in &model.explained_variance {
            assert!((v - 1.0).abs() < 0.05, "{v}");
        }
    }

    #[test]
    fn components_are_orthonormal() {
        for seed in 0..5 {
            let model = pca_fit(&random(30, 5, seed)).unwrap();
            let c = Matrix::from_rows(&model.components);
            let gram = c.matmul(&c.transpose());
            for i in 0..5 {
                for j in 0..5 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[(i, j)] - want).abs() < 1e-9);
                }
            }
            assert!(model.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn sign_convention_makes_largest_entry_positive() {
        let mut v = vec![0.2, -0.9, 0.1];
        orient(&mut v);
        assert_eq!(v, [-0.2, 0.9, -0.1]);
        let model = pca_fit(&random(20, 4, 3)).unwrap();
        for c in &model.components {
            let max = c
                .iter()
                .cloned()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn knee_on_sharp_elbow() {
        // Cumulative curve 10, 19, 20, 20.9, 21.7 bends hardest at 2 components.
        let knee = select_knee(&[10.0, 9.0, 1.0, 0.9, 0.8], None).unwrap();
        assert_eq!(knee.dims, 2);
        assert_eq!(knee.selection, Selection::Auto);
        // Vertical gaps to the chord: 0, 6.075, 4.15, 2.125, 0.
        let norm = (4.0f64 * 4.0 + 11.7 * 11.7).sqrt();
        let want = [
            0.0,
            6.075 * 4.0 / norm,
            4.15 * 4.0 / norm,
            2.125 * 4.0 / norm,
            0.0,
        ];
        for (got, want) in knee.chord_distances.iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn knee_override_and_degenerate_cases() {
        let knee = select_knee(&[10.0, 9.0, 1.0, 0.9, 0.8], Some(4)).unwrap();
        assert_eq!((knee.dims, knee.selection), (4, Selection::Manual));
        assert_eq!(select_knee(&[3.0, 2.0, 1.0], Some(2)).unwrap().dims, 2);
        assert_eq!(select_knee(&[2.5], None).unwrap().dims, 1);
        assert_eq!(select_knee(&[1.0, 1.0], None).unwrap().dims, 1);
        assert_eq!(select_knee(&[5.0, 0.0, 0.0], None).unwrap().dims, 1);
        assert!(matches!(
            select_knee(&[1.0, 0.5], Some(3)),
            Err(Error::Config(_))
        ));
        assert!(select_knee(&[], None).is_err());
    }

    #[test]
    fn identity_projection_is_exact() {
        let x = random(8, 3, 5);
        let model = PcaModel {
            components: Matrix::identity(3)
                .iter_rows()
                .map(<[f64]>::to_vec)
                .collect(),
            explained_variance: vec![1.0; 3],
            total_variance: 3.0,
        };
        assert_eq!(project(&x, &model, 3).unwrap(), x);
        assert!(matches!(
            project(&random(2, 2, 1), &model, 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rank_one_reconstruction() {
        let x = Matrix::from_rows(&[
            [1.0, 2.0, -1.0],
            [2.0, 4.0, -2.0],
            [-0.5, -1.0, 0.5],
            [0.0, 0.0, 0.0],
        ]);
        let (z, _) = crate::clean::center(&x);
        let model = pca_fit(&z).unwrap();
        let scores = project(&z, &model, 1).unwrap();
        for i in 0..z.rows() {
            for j in 0..3 {
                let rebuilt = scores[(i, 0)] * model.components[0][j];
                assert!((rebuilt - z[(i, j)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn full_projection_preserves_distances() {
        for seed in 0..10 {
            let x = random(12, 4, 100 + seed);
            let model = pca_fit(&x).unwrap();
            let y = project(&x, &model, 4).unwrap();
            for i in 0..x.rows() {
                for j in 0..x.rows() {
                    let dx = crate::matrix::distance(x.row(i), x.row(j));
                    let dy = crate::matrix::distance(y.row(i), y.row(j));
                    assert!((dx - dy).abs() < 1e-9);
                }
            }
        }
    }
}
