use std::io::{Read, Write};

use nalgebra::{DMatrix, DMatrixView, SymmetricEigen};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use super::{uniform_ball, ProblemConstants, Sample, StochasticProblem, Vector};
use crate::error::{check_dim, Error, Result};

const SNAPSHOT_MAGIC: &[u8; 8] = b"LENAMS\0\0";
const SNAPSHOT_VERSION: u32 = 1;

/// Multiplier applied to probed maxima when reporting effective constants.
const PROBE_MARGIN: f64 = 1.5;

/// Symmetric noiseless matrix sensing
/// `F(U) = 1/(2n) Σ_i (⟨A_i, UUᵀ⟩ − b_i)²` with `b_i = ⟨A_i, U*U*ᵀ⟩`.
///
/// Points are `vec(U)` for `U ∈ ℝ^{d×r}` in column-major order, so column `k`
/// of `U` occupies `x[k·d .. (k+1)·d]`. Sensing matrices are stored row-major.
///
/// The objective is quartic in `U`, so `L`, `ρ` and `σ` are effective values
/// probed over the ball `‖U‖_F ≤ 2‖U*‖_F` (see [`MatrixSensing::estimate_constants`]).
#[derive(Clone, Debug)]
pub struct MatrixSensing {
    d: usize,
    r: usize,
    n: usize,
    seed: u64,
    u_star: DMatrix<f64>,
    m_star: DMatrix<f64>,
    sensing: Vec<f64>,
    obs: Vec<f64>,
    constants: ProblemConstants,
}

impl MatrixSensing {
    /// Generates an instance: `U*` entries `N(0, 1/d)`, `A_i` entries `N(0, 1)`,
    /// all drawn from the stream of `seed` in that order.
    pub fn generate(d: usize, r: usize, n: usize, seed: u64) -> Result<Self> {
        if r == 0 || d < r || n == 0 {
            return Err(Error::InvalidParameter(format!(
                "matrix sensing needs d >= r >= 1 and n >= 1, got d={d}, r={r}, n={n}"
            )));
        }
        let mut rng = crate::stream(seed);
        let scale = (1.0 / d as f64).sqrt();
        let u_star = DMatrix::from_iterator(d, r, (0..d * r).map(|_| scale * normal(&mut rng)));
        let sensing: Vec<f64> = (0..n * d * d).map(|_| normal(&mut rng)).collect();
        Self::assemble(d, r, n, seed, u_star, sensing)
    }

    fn assemble(d: usize, r: usize, n: usize, seed: u64, u_star: DMatrix<f64>, sensing: Vec<f64>) -> Result<Self> {
        let m_star = &u_star * u_star.transpose();
        let obs = (0..n).map(|i| dot(&sensing[i * d * d..(i + 1) * d * d], m_star.as_slice())).collect();
        let mut inst = Self {
            d,
            r,
            n,
            seed,
            u_star,
            m_star,
            sensing,
            obs,
            constants: ProblemConstants { smoothness: f64::NAN, hessian_lipschitz: f64::NAN, noise_bound: f64::NAN },
        };
        inst.constants = inst.estimate_constants(64, 8, seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok(inst)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.d, self.r, self.n)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ground_truth(&self) -> &DMatrix<f64> {
        &self.m_star
    }

    /// `vec(U*)`.
    pub fn ground_truth_factor(&self) -> Vector {
        Vector::from_column_slice(self.u_star.as_slice())
    }

    pub fn sensing_matrix(&self, i: usize) -> DMatrix<f64> {
        let d = self.d;
        DMatrix::from_row_slice(d, d, &self.sensing[i * d * d..(i + 1) * d * d])
    }

    pub fn observation(&self, i: usize) -> f64 {
        self.obs[i]
    }

    pub fn lambda_max(&self) -> f64 {
        SymmetricEigen::new(self.m_star.clone()).eigenvalues.max()
    }

    /// Reshapes a point into `U`.
    pub fn factor(&self, x: &Vector) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.d, self.r, x.as_slice())
    }

    /// `‖UUᵀ − M*‖²_F / ‖M*‖²_F`.
    pub fn relative_error(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let u = self.factor(x);
        let diff = &u * u.transpose() - &self.m_star;
        Ok(diff.norm_squared() / self.m_star.norm_squared())
    }

    /// Smallest relative error reachable by any `UUᵀ` of rank at most `k`.
    pub fn rank_floor(&self, k: usize) -> f64 {
        let mut eig: Vec<f64> = SymmetricEigen::new(self.m_star.clone()).eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = eig.iter().map(|l| l * l).sum();
        let tail: f64 = eig.iter().skip(k).map(|l| l * l).sum();
        tail / total
    }

    /// Rank-deficient start `U₀ = [α ũ₀, 0, …, 0]` with `ũ₀ ~ N(0, I_d)`.
    ///
    /// `alpha` defaults to `0.1·√λ_max(M*)/‖ũ₀‖`. The requirement
    /// `‖u₀‖ < λ_max(M*)` is enforced literally.
    pub fn saddle_init(&self, alpha: Option<f64>, seed: u64) -> Result<Vector> {
        let mut rng = crate::stream(seed);
        let u_tilde = Vector::from_iterator(self.d, (0..self.d).map(|_| normal(&mut rng)));
        let lmax = self.lambda_max();
        let alpha = alpha.unwrap_or_else(|| 0.1 * lmax.sqrt() / u_tilde.norm());
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "initial scale must be a finite nonnegative number, got {alpha}"
            )));
        }
        let u0 = u_tilde * alpha;
        if u0.norm() >= lmax {
            return Err(Error::InvalidParameter(format!(
                "initial scale too large: ‖u₀‖ = {} must stay below λ_max(M*) = {}",
                u0.norm(),
                lmax
            )));
        }
        let mut x = Vector::zeros(self.dim());
        x.rows_mut(0, self.d).copy_from(&u0);
        Ok(x)
    }

    /// Probes effective constants over `‖U‖_F ≤ 2‖U*‖_F`.
    ///
    /// `L` is the largest per-component Hessian norm seen at `probes` random
    /// (point, component) pairs, `ρ` the largest Hessian-vector secant ratio
    /// over `probes` random point pairs, `σ` the largest deviation
    /// `‖∇f_i(U) − ∇F(U)‖` over all components at `sigma_points` random
    /// points. Each maximum is inflated by a fixed margin of 1.5.
    pub fn estimate_constants(&self, probes: usize, sigma_points: usize, seed: u64) -> ProblemConstants {
        let mut rng = crate::stream(seed);
        let radius = 2.0 * self.u_star.norm();
        let dim = self.dim();
        let mut smooth = 0.0_f64;
        let mut lip = 0.0_f64;
        for _ in 0..probes {
            let x = uniform_ball(dim, radius, &mut rng);
            let i = rng.random_range(0..self.n);
            let mut v = random_unit(dim, &mut rng);
            let mut est = 0.0;
            for _ in 0..30 {
                let hv = self.component_hessian_apply(i, &x, &v);
                est = hv.norm();
                if est == 0.0 {
                    break;
                }
                v = hv / est;
            }
            smooth = smooth.max(est);

            let y = uniform_ball(dim, radius, &mut rng);
            let w = random_unit(dim, &mut rng);
            let dist = (&x - &y).norm();
            if dist > 0.0 {
                let diff = self.component_hessian_apply(i, &x, &w) - self.component_hessian_apply(i, &y, &w);
                lip = lip.max(diff.norm() / dist);
            }
        }
        let mut sigma = 0.0_f64;
        for _ in 0..sigma_points {
            let x = uniform_ball(dim, radius, &mut rng);
            let full = self.full_gradient(&x).expect("dimension matches");
            for i in 0..self.n {
                let g = self.stoch_grad(&x, Sample::Component(i)).expect("dimension matches");
                sigma = sigma.max((g - &full).norm());
            }
        }
        ProblemConstants {
            smoothness: PROBE_MARGIN * smooth,
            hessian_lipschitz: PROBE_MARGIN * lip,
            noise_bound: PROBE_MARGIN * sigma,
        }
    }

    /// Replaces the reported constants (user overrides).
    pub fn set_constants(&mut self, constants: ProblemConstants) {
        self.constants = constants;
    }

    /// Analytic `∇²f_i(U)[V] = ⟨SU, V⟩ SU + r_i SV` with `S = A_i + A_iᵀ`.
    pub fn component_hessian_apply(&self, i: usize, x: &Vector, v: &Vector) -> Vector {
        let [(res, su), (_, sv)] = self.component_terms(i, [x.as_slice(), v.as_slice()]);
        let vm = self.factor(v);
        let out = &su * su.dot(&vm) + sv * res;
        Vector::from_column_slice(out.as_slice())
    }

    /// Residual `⟨A_i, UUᵀ⟩ − b_i` and `(A_i + A_iᵀ)U` for each of `K`
    /// points sharing component `i`, from one pair of products with
    /// `W = [U_1, …, U_K]`.
    fn component_terms<const K: usize>(&self, i: usize, points: [&[f64]; K]) -> [(f64, DMatrix<f64>); K] {
        let (d, r) = (self.d, self.r);
        // row-major A_i read as column-major is A_iᵀ
        let a_t = DMatrixView::from_slice(&self.sensing[i * d * d..(i + 1) * d * d], d, d);
        let w = DMatrix::from_iterator(d, K * r, points.iter().flat_map(|p| p.iter().copied()));
        let at_w = a_t * &w;
        let a_w = a_t.tr_mul(&w);
        std::array::from_fn(|m| {
            let cols = m * r..(m + 1) * r;
            let aw = a_w.columns(cols.start, r);
            let inner = aw.dot(&w.columns(cols.start, r));
            (inner - self.obs[i], aw + at_w.columns(cols.start, r))
        })
    }

    fn residuals(&self, x: &Vector) -> Vec<f64> {
        let d = self.d;
        let u = self.factor(x);
        let m = &u * u.transpose();
        // UUᵀ is symmetric, so its column-major storage matches the row-major A_i
        let mt = m.as_slice();
        (0..self.n).map(|i| dot(&self.sensing[i * d * d..(i + 1) * d * d], mt) - self.obs[i]).collect()
    }

    /// Writes a versioned little-endian binary snapshot.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        for v in [self.d as u64, self.r as u64, self.n as u64, self.seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        let c = self.constants;
        for v in [c.smoothness, c.hessian_lipschitz, c.noise_bound] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.u_star.iter().chain(&self.sensing) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a snapshot written by [`MatrixSensing::write_snapshot`].
    pub fn read_snapshot<R: Read>(mut rd: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        rd.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("not a matrix sensing snapshot".into()));
        }
        let mut b4 = [0u8; 4];
        rd.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!(
                "unsupported snapshot version {version}, expected {SNAPSHOT_VERSION}"
            )));
        }
        let mut b8 = [0u8; 8];
        let mut read_u64 = |rd: &mut R| -> Result<u64> {
            rd.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let d = read_u64(&mut rd)? as usize;
        let r = read_u64(&mut rd)? as usize;
        let n = read_u64(&mut rd)? as usize;
        let seed = read_u64(&mut rd)?;
        if r == 0 || d < r || n == 0 {
            return Err(Error::Snapshot(format!("corrupt shape d={d}, r={r}, n={n}")));
        }
        let read_f64s = |rd: &mut R, count: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; count * 8];
            rd.read_exact(&mut buf)?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        };
        let c = read_f64s(&mut rd, 3)?;
        let u_star = DMatrix::from_vec(d, r, read_f64s(&mut rd, d * r)?);
        let sensing = read_f64s(&mut rd, n * d * d)?;
        let m_star = &u_star * u_star.transpose();
        let obs = (0..n).map(|i| dot(&sensing[i * d * d..(i + 1) * d * d], m_star.as_slice())).collect();
        Ok(Self {
            d,
            r,
            n,
            seed,
            u_star,
            m_star,
            sensing,
            obs,
            constants: ProblemConstants { smoothness: c[0], hessian_lipschitz: c[1], noise_bound: c[2] },
        })
    }
}

impl StochasticProblem for MatrixSensing {
    fn dim(&self) -> usize {
        self.d * self.r
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn num_components(&self) -> Option<usize> {
        Some(self.n)
    }

    /// `∇_U ½(⟨A_i, UUᵀ⟩ − b_i)² = (⟨A_i, UUᵀ⟩ − b_i)(A_i + A_iᵀ)U`.
    fn stoch_grad(&self, x: &Vector, s: Sample) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        match s {
            Sample::Exact => self.full_gradient(x),
            Sample::Component(i) => {
                self.check_component(i)?;
                let [(res, su)] = self.component_terms(i, [x.as_slice()]);
                Ok(Vector::from_column_slice((su * res).as_slice()))
            }
        }
    }

    fn stoch_grad_pair(&self, x_new: &Vector, x_old: &Vector, s: Sample) -> Result<(Vector, Vector)> {
        check_dim(self.dim(), x_new.len())?;
        check_dim(self.dim(), x_old.len())?;
        match s {
            Sample::Exact => Ok((self.full_gradient(x_new)?, self.full_gradient(x_old)?)),
            Sample::Component(i) => {
                self.check_component(i)?;
                let [(r_new, s_new), (r_old, s_old)] = self.component_terms(i, [x_new.as_slice(), x_old.as_slice()]);
                Ok((
                    Vector::from_column_slice((s_new * r_new).as_slice()),
                    Vector::from_column_slice((s_old * r_old).as_slice()),
                ))
            }
        }
    }

    fn full_gradient(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        let d = self.d;
        let res = self.residuals(x);
        // G = (1/n) Σ r_i A_i, then ∇F = (G + Gᵀ) U
        let mut g = vec![0.0; d * d];
        for (i, r) in res.iter().enumerate() {
            for (gv, av) in g.iter_mut().zip(&self.sensing[i * d * d..(i + 1) * d * d]) {
                *gv += r * av;
            }
        }
        let g = DMatrix::from_row_slice(d, d, &g) / self.n as f64;
        let u = self.factor(x);
        let grad = (&g + g.transpose()) * u;
        Ok(Vector::from_column_slice(grad.as_slice()))
    }

    fn full_value(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let res = self.residuals(x);
        Ok(res.iter().map(|r| r * r).sum::<f64>() / (2.0 * self.n as f64))
    }

    fn hessian_apply(&self, x: &Vector, v: &Vector) -> Result<Vector> {
        super::fd_hessian_apply(self, x, v)
    }

    fn hessian_fd_step(&self, x: &Vector) -> Option<f64> {
        Some(super::fd_step(x))
    }

    fn infimum(&self) -> Option<f64> {
        Some(0.0)
    }
}

impl MatrixSensing {
    fn check_component(&self, i: usize) -> Result<()> {
        if i < self.n {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("component {i} out of range for n = {}", self.n)))
        }
    }
}

fn normal(rng: &mut dyn RngCore) -> f64 {
    StandardNormal.sample(rng)
}

fn random_unit(dim: usize, rng: &mut dyn RngCore) -> Vector {
    loop {
        let g = Vector::from_iterator(dim, (0..dim).map(|_| normal(rng)));
        let n = g.norm();
        if n > 0.0 {
            return g / n;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
