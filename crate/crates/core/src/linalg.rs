//! Small dense helpers on top of nalgebra, plus row-major serde for matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Inverse of a symmetric positive-definite matrix, or `None` when the
/// smallest eigenvalue is not above `rel_tol` times `scale`.
pub fn spd_inverse(a: &Matrix, scale: f64, rel_tol: f64) -> Option<Matrix> {
    let (lo, _) = eigen_range(a);
    if !(lo > rel_tol * scale.max(f64::MIN_POSITIVE)) {
        return None;
    }
    let inv = a.clone().cholesky()?.inverse();
    Some(symmetrize(&inv))
}

/// `(min, max)` eigenvalue of the symmetric part of `a`.
pub fn eigen_range(a: &Matrix) -> (f64, f64) {
    if a.is_empty() {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Sup-norm of a vector.
pub fn sup_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub mod serde_matrix {
    use super::Matrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix, String> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix".into());
        }
        Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<Matrix>, s: S) -> Result<S::Ok, S::Error> {
            m.as_ref().map(to_rows).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Matrix>, D::Error> {
            match Option::<Vec<Vec<f64>>>::deserialize(d)? {
                Some(rows) => from_rows(&rows).map(Some).map_err(serde::de::Error::custom),
                None => Ok(None),
            }
        }
    }
}
