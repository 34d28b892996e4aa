use nalgebra::{DMatrix, SymmetricEigen};

use super::{ProblemConstants, Sample, StochasticProblem, Vector};
use crate::error::{check_dim, Error, Result};

/// Finite sum of quadratics `f_i(x) = ½ xᵀ H_i x − c_iᵀ x`.
///
/// `L` is the largest `‖H_i‖₂`, `ρ = 0`. The noise bound is finite only when
/// all `H_i` coincide, in which case it is `max_i ‖c_i − c̄‖`.
#[derive(Clone, Debug)]
pub struct FiniteQuadratic {
    hessians: Vec<DMatrix<f64>>,
    linear: Vec<Vector>,
    mean_hessian: DMatrix<f64>,
    mean_linear: Vector,
    constants: ProblemConstants,
}

impl FiniteQuadratic {
    pub fn new(hessians: Vec<DMatrix<f64>>, linear: Vec<Vector>) -> Result<Self> {
        let n = hessians.len();
        if n == 0 || n != linear.len() {
            return Err(Error::InvalidParameter(format!(
                "need matching nonempty component lists, got {} Hessians and {} linear terms",
                n,
                linear.len()
            )));
        }
        let dim = linear[0].len();
        for (h, c) in hessians.iter().zip(&linear) {
            check_dim(dim, c.len())?;
            if h.nrows() != dim || h.ncols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: h.nrows() });
            }
            if (h - h.transpose()).amax() > 1e-12 * h.amax().max(1.0) {
                return Err(Error::InvalidParameter("component Hessians must be symmetric".into()));
            }
        }
        let mean_hessian = hessians.iter().fold(DMatrix::zeros(dim, dim), |acc, h| acc + h) / n as f64;
        let mean_linear = linear.iter().fold(Vector::zeros(dim), |acc, c| acc + c) / n as f64;
        let smoothness = hessians.iter().map(|h| SymmetricEigen::new(h.clone()).eigenvalues.amax()).fold(0.0, f64::max);
        let same_curvature = hessians.iter().all(|h| (h - &mean_hessian).amax() == 0.0);
        let noise_bound = if same_curvature {
            linear.iter().map(|c| (c - &mean_linear).norm()).fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        Ok(Self {
            hessians,
            linear,
            mean_hessian,
            mean_linear,
            constants: ProblemConstants { smoothness, hessian_lipschitz: 0.0, noise_bound },
        })
    }

    /// A single deterministic quadratic `½ xᵀ H x − cᵀ x`.
    pub fn single(hessian: DMatrix<f64>, linear: Vector) -> Result<Self> {
        Self::new(vec![hessian], vec![linear])
    }

    pub fn mean_hessian(&self) -> &DMatrix<f64> {
        &self.mean_hessian
    }
}

impl StochasticProblem for FiniteQuadratic {
    fn dim(&self) -> usize {
        self.mean_linear.len()
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn num_components(&self) -> Option<usize> {
        Some(self.hessians.len())
    }

    fn stoch_grad(&self, x: &Vector, s: Sample) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        match s {
            Sample::Exact => self.full_gradient(x),
            Sample::Component(i) => {
                let h = self.hessians.get(i).ok_or(Error::InvalidParameter(format!("component {i} out of range")))?;
                Ok(h * x - &self.linear[i])
            }
        }
    }

    fn full_gradient(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        Ok(&self.mean_hessian * x - &self.mean_linear)
    }

    fn full_value(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(0.5 * x.dot(&(&self.mean_hessian * x)) - self.mean_linear.dot(x))
    }

    fn hessian_apply(&self, x: &Vector, v: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), v.len())?;
        Ok(&self.mean_hessian * v)
    }

    fn infimum(&self) -> Option<f64> {
        let eig = SymmetricEigen::new(self.mean_hessian.clone());
        if eig.eigenvalues.min() <= 0.0 {
            return None;
        }
        let x = eig.eigenvectors.clone()
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l))
            * eig.eigenvectors.transpose()
            * &self.mean_linear;
        self.full_value(&x).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asymmetric_hessian_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(FiniteQuadratic::single(h, Vector::zeros(2)).is_err());
    }

    #[test]
    fn component_mean_matches_full_gradient() {
        let hs = vec![
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 3.0]),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
        ];
        let cs =
            vec![Vector::from_vec(vec![1.0, 0.0]), Vector::from_vec(vec![-1.0, 2.0]), Vector::from_vec(vec![0.5, 0.5])];
        let p = FiniteQuadratic::new(hs, cs).unwrap();
        let x = Vector::from_vec(vec![0.3, -1.2]);
        let mean = super::super::component_mean(&p, &x).unwrap();
        let full = p.full_gradient(&x).unwrap();
        assert!((mean - &full).norm() <= 1e-12 * full.norm());
        assert!(p.constants().noise_bound.is_infinite());
    }

    #[test]
    fn infimum_of_convex_quadratic() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let p = FiniteQuadratic::single(h, Vector::from_vec(vec![2.0, 4.0])).unwrap();
        // minimizer (1, 1), value ½(2 + 4) − 6 = −3
        assert!((p.infimum().unwrap() + 3.0).abs() < 1e-12);
    }
}
