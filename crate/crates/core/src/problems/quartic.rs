use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};

use super::{ProblemConstants, Sample, StochasticProblem, Vector};
use crate::error::{check_dim, Error, Result};

/// `F(x) = ½ Σ λ_j x_j² + ¼ ‖x‖⁴`, optionally with additive gradient noise.
///
/// With any negative `λ_j` the origin is a strict saddle and the minima sit at
/// `±√(−λ_min)·e_j*`. Noisy instances are finite sums
/// `f(x; i) = F(x) + ⟨z_i, x⟩` where the `z_i` come in antithetic pairs of
/// norm exactly `σ`, so the mean of the noise is zero and `σ` is exact.
///
/// The quartic term makes `L` and `ρ` unbounded globally; the reported
/// constants hold on the ball `‖x‖ ≤ R` (`L = max|λ| + 3R²`, `ρ = 6R`).
#[derive(Clone, Debug)]
pub struct SaddleQuartic {
    eigenvalues: Vector,
    noise: Vec<Vector>,
    noise_sigma: f64,
    domain_radius: f64,
}

impl SaddleQuartic {
    pub fn new(eigenvalues: &[f64], domain_radius: f64) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidParameter("saddle quartic needs at least one eigenvalue".into()));
        }
        if eigenvalues.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidParameter("eigenvalues must be finite".into()));
        }
        if !(domain_radius > 0.0) {
            return Err(Error::InvalidParameter("domain radius must be positive".into()));
        }
        Ok(Self {
            eigenvalues: DVector::from_column_slice(eigenvalues),
            noise: Vec::new(),
            noise_sigma: 0.0,
            domain_radius,
        })
    }

    /// `λ = (lambda_min, 1, …, 1)` in dimension `dim`.
    pub fn standard(dim: usize, lambda_min: f64, domain_radius: f64) -> Result<Self> {
        let mut eig = vec![1.0; dim];
        if let Some(first) = eig.first_mut() {
            *first = lambda_min;
        }
        Self::new(&eig, domain_radius)
    }

    /// Adds `components` (even) antithetic noise vectors of norm `sigma`.
    pub fn with_noise(mut self, sigma: f64, components: usize, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::InvalidParameter("noise level must be nonnegative".into()));
        }
        if sigma == 0.0 {
            self.noise.clear();
            self.noise_sigma = 0.0;
            return Ok(self);
        }
        if components < 2 || !components.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "noise components must be a positive even number, got {components}"
            )));
        }
        let dim = self.eigenvalues.len();
        let mut rng = crate::stream(seed);
        let mut noise = Vec::with_capacity(components);
        for _ in 0..components / 2 {
            let z = loop {
                let g = Vector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(&mut rng)));
                let n = g.norm();
                if n > 0.0 {
                    break g * (sigma / n);
                }
            };
            noise.push(-&z);
            noise.push(z);
        }
        self.noise = noise;
        self.noise_sigma = sigma;
        Ok(self)
    }

    pub fn eigenvalues(&self) -> &Vector {
        &self.eigenvalues
    }

    /// Stationary minimizers `±√(−λ_min) e_j` (or the origin when `λ ≥ 0`).
    pub fn minimizers(&self) -> Vec<Vector> {
        let (j, &lmin) = self.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty");
        let dim = self.eigenvalues.len();
        if lmin >= 0.0 {
            return vec![Vector::zeros(dim)];
        }
        let c = (-lmin).sqrt();
        let mut plus = Vector::zeros(dim);
        plus[j] = c;
        vec![plus.clone(), -plus]
    }

    fn gradient(&self, x: &Vector) -> Vector {
        let sq = x.norm_squared();
        self.eigenvalues.component_mul(x) + x * sq
    }
}

impl StochasticProblem for SaddleQuartic {
    fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    fn constants(&self) -> ProblemConstants {
        let r = self.domain_radius;
        let lmax = self.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
        ProblemConstants { smoothness: lmax + 3.0 * r * r, hessian_lipschitz: 6.0 * r, noise_bound: self.noise_sigma }
    }

    fn num_components(&self) -> Option<usize> {
        if self.noise.is_empty() {
            None
        } else {
            Some(self.noise.len())
        }
    }

    fn stoch_grad(&self, x: &Vector, s: Sample) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        let mut g = self.gradient(x);
        match s {
            Sample::Exact => {}
            Sample::Component(i) => {
                let z = self.noise.get(i).ok_or(Error::InvalidParameter(format!("component {i} out of range")))?;
                g += z;
            }
        }
        Ok(g)
    }

    fn full_gradient(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        Ok(self.gradient(x))
    }

    fn full_value(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let sq = x.norm_squared();
        let quad: f64 = self.eigenvalues.iter().zip(x.iter()).map(|(l, v)| l * v * v).sum();
        Ok(0.5 * quad + 0.25 * sq * sq)
    }

    fn hessian_apply(&self, x: &Vector, v: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), v.len())?;
        let sq = x.norm_squared();
        Ok(self.eigenvalues.component_mul(v) + v * sq + x * (2.0 * x.dot(v)))
    }

    fn infimum(&self) -> Option<f64> {
        let lmin = self.eigenvalues.min();
        Some(if lmin < 0.0 { -0.25 * lmin * lmin } else { 0.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff_grad(p: &SaddleQuartic, x: &Vector) -> Vector {
        let h = 1e-6;
        Vector::from_iterator(
            x.len(),
            (0..x.len()).map(|j| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                (p.full_value(&xp).unwrap() - p.full_value(&xm).unwrap()) / (2.0 * h)
            }),
        )
    }

    #[test]
    fn gradient_at_minimizer_vanishes() {
        let p = SaddleQuartic::new(&[-1.0, 1.0], 2.0).unwrap();
        let x = Vector::from_vec(vec![1.0, 0.0]);
        let g = p.full_gradient(&x).unwrap();
        assert_eq!(g, Vector::zeros(2));
        let fd = central_diff_grad(&p, &x);
        assert!(fd.norm() < 1e-8);
    }

    #[test]
    fn value_examples() {
        let p = SaddleQuartic::new(&[-1.0, 1.0], 2.0).unwrap();
        assert_eq!(p.full_value(&Vector::zeros(2)).unwrap(), 0.0);
        // ½(−1)(1)² + ¼(1)⁴
        let v = p.full_value(&Vector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!((v - (-0.5 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = SaddleQuartic::new(&[-1.0, 0.5, 2.0], 2.0).unwrap();
        let mut rng = crate::stream(11);
        for _ in 0..20 {
            let x = super::super::uniform_ball(3, 1.5, &mut rng);
            let g = p.full_gradient(&x).unwrap();
            assert!((g - central_diff_grad(&p, &x)).norm() < 1e-7);
        }
    }

    #[test]
    fn hessian_at_origin_is_diagonal() {
        let p = SaddleQuartic::new(&[-1.0, 1.0], 2.0).unwrap();
        let e1 = Vector::from_vec(vec![1.0, 0.0]);
        let hv = p.hessian_apply(&Vector::zeros(2), &e1).unwrap();
        assert_eq!(hv, -e1);
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let p = SaddleQuartic::new(&[-1.0, 1.0, 3.0], 2.0).unwrap();
        let x = Vector::from_vec(vec![0.3, -0.7, 0.2]);
        let v = Vector::from_vec(vec![1.0, 2.0, -0.5]);
        let exact = p.hessian_apply(&x, &v).unwrap();
        let fd = super::super::fd_hessian_apply(&p, &x, &v).unwrap();
        assert!((exact - fd).norm() < 1e-7);
    }

    #[test]
    fn noise_is_exact_and_zero_mean() {
        let p = SaddleQuartic::standard(5, -1.0, 2.0).unwrap().with_noise(0.1, 8, 4).unwrap();
        assert_eq!(p.num_components(), Some(8));
        let x = Vector::from_vec(vec![0.1, 0.2, -0.3, 0.0, 0.5]);
        let full = p.full_gradient(&x).unwrap();
        for i in 0..8 {
            let g = p.stoch_grad(&x, Sample::Component(i)).unwrap();
            assert!(((g - &full).norm() - 0.1).abs() < 1e-15);
        }
        let mean = super::super::component_mean(&p, &x).unwrap();
        assert!((mean - full).norm() < 1e-15);
    }

    #[test]
    fn odd_noise_components_rejected() {
        assert!(SaddleQuartic::standard(3, -1.0, 2.0).unwrap().with_noise(0.1, 3, 0).is_err());
    }

    #[test]
    fn minimizers_are_stationary() {
        let p = SaddleQuartic::standard(4, -1.0, 2.0).unwrap();
        for m in p.minimizers() {
            assert!(p.full_gradient(&m).unwrap().norm() < 1e-15);
            assert!((p.full_value(&m).unwrap() - p.infimum().unwrap()).abs() < 1e-15);
        }
    }
}
