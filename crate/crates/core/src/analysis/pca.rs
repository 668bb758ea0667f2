//! Two-component PCA of intrinsic vectors, plus a silhouette score for
//! judging how well labeled groups separate in the projection.
//!
//! The decomposition is exact: mean-center, form the population covariance,
//! and eigendecompose it with cyclic Jacobi rotations (the matrices here are
//! `d_I×d_I`, i.e. tiny). Components are ordered by descending eigenvalue
//! and sign-fixed so the first nonzero loading is positive, which makes the
//! projection deterministic and order-invariant up to floating-point noise.

use crate::error::{Error, Result};

/// Relative threshold under which an eigenvalue counts as zero rank.
const RANK_TOL: f64 = 1e-12;
/// Loadings smaller than this are treated as zero by the sign convention.
const SIGN_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Pca2d {
    /// One `[first, second]` coordinate pair per input vector.
    pub coords: Vec<[f64; 2]>,
    /// Fraction of total variance captured by each component.
    pub explained: [f64; 2],
    /// The two principal directions in input space.
    pub components: [Vec<f64>; 2],
    /// True when the centered data had rank < 2; the second coordinate is
    /// zeroed in that case.
    pub degenerate: bool,
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and matching eigenvectors (as rows), unsorted.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = a.len();
    // v starts as identity; rows accumulate the eigenvectors.
    let mut v = vec![vec![0.0; d]; d];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale: f64 = a.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-15 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..d {
            for q in (p + 1)..d {
                off = off.max(a[p][q].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if a[p][q].abs() <= tol {
                    continue;
                }
                let tau = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vpk = v[p][k];
                    let vqk = v[q][k];
                    v[p][k] = c * vpk - s * vqk;
                    v[q][k] = s * vpk + c * vqk;
                }
            }
        }
    }
    let eigvals = (0..d).map(|i| a[i][i]).collect();
    (eigvals, v)
}

/// Flip a direction so its first loading with magnitude above [`SIGN_TOL`]
/// is positive.
fn fix_sign(component: &mut [f64], coords: &mut [[f64; 2]], which: usize) {
    let first = component.iter().find(|x| x.abs() > SIGN_TOL);
    if matches!(first, Some(x) if *x < 0.0) {
        for x in component.iter_mut() {
            *x = -*x;
        }
        for c in coords.iter_mut() {
            c[which] = -c[which];
        }
    }
}

pub fn pca_2d(vectors: &[Vec<f64>]) -> Result<Pca2d> {
    if vectors.len() < 3 {
        return Err(Error::Usage(format!(
            "pca_2d needs at least 3 vectors, got {}",
            vectors.len()
        )));
    }
    let d = vectors[0].len();
    if d == 0 {
        return Err(Error::Usage("pca_2d got zero-dimensional vectors".into()));
    }
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != d {
            return Err(Error::dim(
                "pca_2d",
                format!("vector {i} has {} entries, expected {d}", v.len()),
            ));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric {
                context: "pca_2d".into(),
                detail: format!("vector {i} has a non-finite entry"),
            });
        }
    }

    let n = vectors.len();
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> =
        vectors.iter().map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();

    // Population covariance.
    let mut cov = vec![vec![0.0; d]; d];
    for v in &centered {
        for i in 0..d {
            for j in i..d {
                cov[i][j] += v[i] * v[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= n as f64;
            cov[j][i] = cov[i][j];
        }
    }
    let total_variance: f64 = (0..d).map(|i| cov[i][i]).sum();

    let (eigvals, eigvecs) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eigvals[j].partial_cmp(&eigvals[i]).expect("finite eigenvalues"));

    let lambda1 = eigvals[order[0]].max(0.0);
    let lambda2 = if d >= 2 { eigvals[order[1]].max(0.0) } else { 0.0 };
    let comp1 = eigvecs[order[0]].clone();
    let comp2 = if d >= 2 { eigvecs[order[1]].clone() } else { vec![0.0; d] };

    let degenerate = lambda2 <= RANK_TOL * lambda1.max(RANK_TOL);
    if degenerate {
        log::warn!("pca_2d: centered data has rank < 2; second coordinate zeroed");
    }

    let mut coords: Vec<[f64; 2]> = centered
        .iter()
        .map(|v| {
            let x: f64 = v.iter().zip(&comp1).map(|(a, b)| a * b).sum();
            let y: f64 = if degenerate {
                0.0
            } else {
                v.iter().zip(&comp2).map(|(a, b)| a * b).sum()
            };
            [x, y]
        })
        .collect();

    let mut components = [comp1, comp2];
    fix_sign(&mut components[0], &mut coords, 0);
    if !degenerate {
        fix_sign(&mut components[1], &mut coords, 1);
    }

    let explained = if total_variance > 0.0 {
        [lambda1 / total_variance, lambda2 / total_variance]
    } else {
        [0.0, 0.0]
    };

    Ok(Pca2d { coords, explained, components, degenerate })
}

/// Mean silhouette score of labeled points: `(b−a)/max(a,b)` per point,
/// where `a` is the mean distance to its own cluster and `b` the smallest
/// mean distance to another cluster. Singleton clusters contribute 0.
/// Positive means clusters are separated in the projection.
pub fn silhouette(coords: &[[f64; 2]], labels: &[usize]) -> Result<f64> {
    if coords.len() != labels.len() {
        return Err(Error::dim(
            "silhouette",
            format!("{} points vs {} labels", coords.len(), labels.len()),
        ));
    }
    if coords.len() < 2 {
        return Err(Error::Usage("silhouette needs at least two points".into()));
    }
    let clusters: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if clusters.len() < 2 {
        return Err(Error::Usage("silhouette needs at least two clusters".into()));
    }
    let dist = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mut total = 0.0;
    for (i, (p, &label)) in coords.iter().zip(labels).enumerate() {
        let own: Vec<f64> = coords
            .iter()
            .zip(labels)
            .enumerate()
            .filter(|(j, (_, &l))| *j != i && l == label)
            .map(|(_, (q, _))| dist(p, q))
            .collect();
        if own.is_empty() {
            continue; // singleton cluster: contributes 0
        }
        let a = own.iter().sum::<f64>() / own.len() as f64;
        let b = clusters
            .iter()
            .filter(|&&c| c != label)
            .map(|&c| {
                let other: Vec<f64> = coords
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == c)
                    .map(|(q, _)| dist(p, q))
                    .collect();
                other.iter().sum::<f64>() / other.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b).max(1e-300);
    }
    Ok(total / coords.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::stream;

    /// Independent oracle: power iteration with deflation on the same
    /// covariance matrix.
    fn power_iteration_top2(vectors: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let d = vectors[0].len();
        let n = vectors.len();
        let mut mean = vec![0.0; d];
        for v in vectors {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x / n as f64;
            }
        }
        let centered: Vec<Vec<f64>> =
            vectors.iter().map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
        let mut cov = vec![vec![0.0; d]; d];
        for v in &centered {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += v[i] * v[j] / n as f64;
                }
            }
        }
        let matvec = |m: &Vec<Vec<f64>>, x: &[f64]| -> Vec<f64> {
            m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
        };
        let normalize = |x: &mut Vec<f64>| {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in x.iter_mut() {
                *v /= norm;
            }
        };
        let mut rng = stream(99, "pca-oracle");
        let top = |m: &Vec<Vec<f64>>, rng: &mut rand_chacha::ChaCha12Rng| -> (Vec<f64>, f64) {
            let mut x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            normalize(&mut x);
            for _ in 0..20_000 {
                x = matvec(m, &x);
                normalize(&mut x);
            }
            let mx = matvec(m, &x);
            let lambda: f64 = x.iter().zip(&mx).map(|(a, b)| a * b).sum();
            (x, lambda)
        };
        let (v1, l1) = top(&cov, &mut rng);
        let mut deflated = cov.clone();
        for i in 0..d {
            for j in 0..d {
                deflated[i][j] -= l1 * v1[i] * v1[j];
            }
        }
        let (v2, _) = top(&deflated, &mut rng);
        (v1, v2)
    }

    fn assert_matches_up_to_sign(ours: &[f64], oracle: &[f64], tol: f64, what: &str) {
        let dot: f64 = ours.iter().zip(oracle).map(|(a, b)| a * b).sum();
        let sign = if dot >= 0.0 { 1.0 } else { -1.0 };
        for (i, (a, b)) in ours.iter().zip(oracle).enumerate() {
            assert!(
                (a - sign * b).abs() < tol,
                "{what}[{i}]: {a} vs {} (sign {sign})",
                sign * b
            );
        }
    }

    #[test]
    fn matches_a_power_iteration_oracle_on_random_vectors() {
        let mut rng = stream(17, "pca-test");
        let vectors: Vec<Vec<f64>> =
            (0..10).map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let pca = pca_2d(&vectors).unwrap();
        let (v1, v2) = power_iteration_top2(&vectors);
        assert_matches_up_to_sign(&pca.components[0], &v1, 1e-8, "component 1");
        assert_matches_up_to_sign(&pca.components[1], &v2, 1e-8, "component 2");
        assert!(!pca.degenerate);
        assert!(pca.explained[0] >= pca.explained[1]);
        assert!(pca.explained[0] > 0.0 && pca.explained[0] <= 1.0 + 1e-12);
    }

    #[test]
    fn planar_data_explains_all_variance_in_two_components() {
        let mut rng = stream(18, "pca-planar");
        // 4-D points confined to the span of two fixed directions.
        let b1 = [1.0, 2.0, 0.0, -1.0];
        let b2 = [0.0, 1.0, 3.0, 1.0];
        let vectors: Vec<Vec<f64>> = (0..12)
            .map(|_| {
                let (s, t) = (rng.gen_range(-1.0..1.0f64), rng.gen_range(-1.0..1.0f64));
                (0..4).map(|i| s * b1[i] + t * b2[i]).collect()
            })
            .collect();
        let pca = pca_2d(&vectors).unwrap();
        assert!(
            (pca.explained[0] + pca.explained[1] - 1.0).abs() < 1e-9,
            "explained {:?}",
            pca.explained
        );
        // Reordering the input only reorders the output (signs are pinned by
        // the convention, so coordinates agree directly).
        let mut reversed = vectors.clone();
        reversed.reverse();
        let pca_rev = pca_2d(&reversed).unwrap();
        for (a, b) in pca.coords.iter().zip(pca_rev.coords.iter().rev()) {
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicated_point_sets_project_identically() {
        let mut rng = stream(19, "pca-dup");
        let vectors: Vec<Vec<f64>> =
            (0..6).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let doubled: Vec<Vec<f64>> = vectors.iter().chain(&vectors).cloned().collect();
        let a = pca_2d(&vectors).unwrap();
        let b = pca_2d(&doubled).unwrap();
        for (pa, pb) in a.coords.iter().zip(&b.coords) {
            assert!((pa[0] - pb[0]).abs() < 1e-12 && (pa[1] - pb[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_one_data_is_degenerate_with_zeroed_second_coordinate() {
        // All points on one line through varying multiples.
        let vectors: Vec<Vec<f64>> =
            [-2.0, 0.5, 1.0, 3.0].iter().map(|&s| vec![s, 2.0 * s, -s]).collect();
        let pca = pca_2d(&vectors).unwrap();
        assert!(pca.degenerate);
        assert!(pca.coords.iter().all(|c| c[1] == 0.0));
        assert!((pca.explained[0] - 1.0).abs() < 1e-9);
        // First coordinate still spreads the points.
        assert!(pca.coords.iter().any(|c| c[0].abs() > 0.1));
    }

    #[test]
    fn input_contracts_are_enforced() {
        assert!(matches!(pca_2d(&[vec![1.0], vec![2.0]]), Err(Error::Usage(_))));
        assert!(matches!(
            pca_2d(&[vec![1.0, 2.0], vec![1.0], vec![3.0, 4.0]]),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            pca_2d(&[vec![1.0], vec![f64::NAN], vec![3.0]]),
            Err(Error::Numeric { .. })
        ));
    }

    #[test]
    fn silhouette_separates_far_clusters_and_rejects_degenerate_input() {
        let left = [[0.0, 0.0], [0.1, 0.1], [0.0, 0.2]];
        let right = [[5.0, 5.0], [5.1, 4.9], [5.2, 5.0]];
        let coords: Vec<[f64; 2]> = left.iter().chain(&right).copied().collect();
        let labels = [0, 0, 0, 1, 1, 1];
        let s = silhouette(&coords, &labels).unwrap();
        assert!(s > 0.8, "well-separated clusters should score near 1, got {s}");
        // Interleaved labels on the same points score poorly.
        let mixed = [0, 1, 0, 1, 0, 1];
        let s_mixed = silhouette(&coords, &mixed).unwrap();
        assert!(s_mixed < s);
        assert!(matches!(silhouette(&coords, &[0, 0, 0, 0, 0, 0]), Err(Error::Usage(_))));
        assert!(matches!(silhouette(&coords[..1], &labels[..1]), Err(Error::Usage(_))));
        assert!(matches!(silhouette(&coords, &labels[..3]), Err(Error::Dimension { .. })));
    }
}
