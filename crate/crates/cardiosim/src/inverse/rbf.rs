//! Thin-plate-spline interpolation of the cost over accumulated exact
//! evaluations. Coordinates are normalized to the unit box before distance
//! computation; a linear polynomial tail keeps affine functions exact, and
//! the tail degrades to a constant when the database is too small to pin an
//! affine part down.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::{EvalDatabase, SearchBox};

#[derive(Debug, Clone)]
pub struct RbfSurrogate {
    /// Normalized sample coordinates.
    centers: Vec<Vec<f64>>,
    /// RBF weights.
    lambda: Vec<f64>,
    /// Polynomial tail: constant, then one slope per coordinate when affine.
    poly: Vec<f64>,
    lower: Vec<f64>,
    width: Vec<f64>,
    /// Set when the interpolation system needed ridge regularization.
    pub regularized: bool,
}

fn thin_plate(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

/// Fit the interpolant to all pairs in the database.
pub fn surrogate_fit(db: &EvalDatabase, search: &SearchBox) -> Result<RbfSurrogate> {
    let p = db.len();
    if p == 0 {
        return Err(Error::Numerical("empty evaluation database".into()));
    }
    let n = search.lower.len();
    let lower = search.lower.clone();
    let width: Vec<f64> = search
        .lower
        .iter()
        .zip(&search.upper)
        .map(|(l, u)| u - l)
        .collect();
    let normalize = |theta: &[f64]| -> Vec<f64> {
        theta
            .iter()
            .zip(&lower)
            .zip(&width)
            .map(|((t, l), w)| (t - l) / w)
            .collect()
    };
    let centers: Vec<Vec<f64>> = db.thetas().iter().map(|t| normalize(t)).collect();

    // Affine tail only when enough points to determine it.
    let n_poly = if p >= n + 1 { n + 1 } else { 1 };
    let dim = p + n_poly;

    let build = |ridge: f64| -> DMatrix<f64> {
        let mut a = DMatrix::zeros(dim, dim);
        for i in 0..p {
            for j in 0..p {
                let r = dist(&centers[i], &centers[j]);
                a[(i, j)] = thin_plate(r);
            }
            a[(i, i)] += ridge;
            a[(i, p)] = 1.0;
            a[(p, i)] = 1.0;
            for k in 1..n_poly {
                a[(i, p + k)] = centers[i][k - 1];
                a[(p + k, i)] = centers[i][k - 1];
            }
        }
        a
    };

    let mut rhs = DVector::zeros(dim);
    for (i, &c) in db.costs().iter().enumerate() {
        rhs[i] = c;
    }

    let mut regularized = false;
    let solution = match build(0.0).full_piv_lu().solve(&rhs) {
        Some(sol) if sol.iter().all(|v| v.is_finite()) => sol,
        _ => {
            regularized = true;
            let scale = db
                .costs()
                .iter()
                .fold(1.0f64, |m, c| m.max(c.abs()));
            build(1e-10 * scale)
                .full_piv_lu()
                .solve(&rhs)
                .ok_or_else(|| {
                    Error::Numerical("surrogate interpolation system is singular".into())
                })?
        }
    };
    if regularized {
        log::warn!("surrogate interpolation required ridge regularization");
    }

    Ok(RbfSurrogate {
        centers,
        lambda: solution.as_slice()[..p].to_vec(),
        poly: solution.as_slice()[p..].to_vec(),
        lower,
        width,
        regularized,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl RbfSurrogate {
    pub fn predict(&self, theta: &[f64]) -> f64 {
        let x: Vec<f64> = theta
            .iter()
            .zip(&self.lower)
            .zip(&self.width)
            .map(|((t, l), w)| (t - l) / w)
            .collect();
        let mut value = self.poly[0];
        for (k, slope) in self.poly.iter().enumerate().skip(1) {
            value += slope * x[k - 1];
        }
        for (c, l) in self.centers.iter().zip(&self.lambda) {
            value += l * thin_plate(dist(c, &x));
        }
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(n: usize) -> SearchBox {
        SearchBox::new(vec![0.0; n], vec![1.0; n]).unwrap()
    }

    #[test]
    fn single_point_database_gives_constant() {
        let mut db = EvalDatabase::new();
        db.insert(&[0.3, 0.7], 4.5);
        let s = surrogate_fit(&db, &unit_box(2)).unwrap();
        for q in [[0.0, 0.0], [1.0, 1.0], [0.2, 0.9]] {
            assert!((s.predict(&q) - 4.5).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_interpolation_at_database_points() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut db = EvalDatabase::new();
        let f = |x: &[f64]| (x[0] * 3.0).sin() + x[1] * x[1] - 0.5 * x[2];
        for _ in 0..40 {
            let theta: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
            let val = f(&theta);
            db.insert(&theta, val);
        }
        let s = surrogate_fit(&db, &unit_box(3)).unwrap();
        for (theta, &cost) in db.thetas().iter().zip(db.costs()) {
            let err = (s.predict(theta) - cost).abs();
            assert!(err <= 1e-8 * cost.abs().max(1.0), "err {err}");
        }
    }

    #[test]
    fn beats_mean_predictor_on_quadratic() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let f = |x: &[f64]| {
            (x[0] - 0.3).powi(2) + 2.0 * (x[1] - 0.6).powi(2) + (x[2] - 0.1).powi(2)
        };
        let mut db = EvalDatabase::new();
        for _ in 0..50 {
            let theta: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
            let v = f(&theta);
            db.insert(&theta, v);
        }
        let s = surrogate_fit(&db, &unit_box(3)).unwrap();
        let mean = db.costs().iter().sum::<f64>() / db.len() as f64;

        let mut err_s = Vec::new();
        let mut err_mean = Vec::new();
        for _ in 0..100 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
            let truth = f(&q);
            err_s.push((s.predict(&q) - truth).abs());
            err_mean.push((mean - truth).abs());
        }
        err_s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        err_mean.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(err_s[50] < err_mean[50], "{} vs {}", err_s[50], err_mean[50]);
    }

    #[test]
    fn near_duplicate_points_do_not_fail() {
        let mut db = EvalDatabase::new();
        // insert() deduplicates exact repeats; craft near-duplicates instead
        db.insert(&[0.5, 0.5], 1.0);
        db.insert(&[0.5 + 5e-12, 0.5], 1.0);
        db.insert(&[0.1, 0.9], 2.0);
        let s = surrogate_fit(&db, &unit_box(2)).unwrap();
        assert!(s.predict(&[0.1, 0.9]).is_finite());
    }
}
