//! Leveled forward maps and the 1D elliptic finite element model.
//!
//! The model maps sine coefficients `x ∈ ℝ^{n_x}` to observations of the
//! solution of `−u″ + u = f` on `(0, 1)` with homogeneous Dirichlet
//! conditions, where `f(s) = Σ_k x_k (√2/π) sin(kπs)`. Level `l` uses linear
//! finite elements on a uniform mesh with `2^τ` cells, `τ = ⌈log₂ l⌉`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Result};
use crate::problem::InverseProblemSpec;
use crate::Real;

/// Finest supported mesh exponent.
pub const MAX_MESH_EXPONENT: u32 = 24;

/// A forward model available at every accuracy level `l ≥ 1`.
pub trait LeveledForwardMap<T: Real>: Send + Sync {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    fn evaluate(&self, x: &DVector<T>, level: T) -> Result<DVector<T>>;

    /// Action of the transposed level-`l` Jacobian on `w`.
    fn adjoint_apply(&self, w: &DVector<T>, level: T) -> Result<DVector<T>>;

    fn cost_of(&self, level: T) -> T {
        level
    }

    fn is_linear(&self) -> bool;
}

/// A linear leveled map that can expose its level-`l` matrix.
pub trait LinearForwardMap<T: Real>: LeveledForwardMap<T> {
    fn matrix(&self, level: T) -> Result<Arc<DMatrix<T>>>;
}

/// Smallest `τ ≥ 0` with `2^τ ≥ level`.
pub fn mesh_exponent<T: Real>(level: T) -> Result<u32> {
    let l = level.as_f64();
    if !(l >= 1.0) || !l.is_finite() {
        return Err(invalid(format!("level must be a finite value >= 1, got {level}")));
    }
    let mut tau = 0u32;
    while (2f64).powi(tau as i32) < l {
        tau += 1;
        if tau > MAX_MESH_EXPONENT {
            return Err(invalid(format!(
                "level {level} exceeds the finest supported mesh 2^{MAX_MESH_EXPONENT}"
            )));
        }
    }
    Ok(tau)
}

/// Right-hand side of [`solve_pde`].
#[derive(Debug, Clone, Copy)]
pub enum Rhs<'a, T: Real> {
    /// Sine coefficients of `f`.
    Sine(&'a DVector<T>),
    /// Load vector `(∫ f φ_j)_j` on the interior nodes of the level mesh.
    NodalLoad(&'a DVector<T>),
}

/// `∫₀¹ (√2/π) sin(kπs) φ_j(s) ds / sin(kπ s_j)` for the hat function at `s_j`.
fn sine_load_factor<T: Real>(k: usize, h: T) -> T {
    let w = T::lit(PI) * T::from_count(k);
    let half = (w * h * T::lit(0.5)).sin();
    T::lit(2f64.sqrt() / PI) * T::lit(4.0) * half * half / (h * w * w)
}

/// Tridiagonal factors of the level-`n` stiffness plus mass matrix.
struct MeshSystem<T> {
    n: usize,
    h: T,
    off: T,
    c_prime: Vec<T>,
    pivots: Vec<T>,
}

impl<T: Real> MeshSystem<T> {
    fn new(tau: u32) -> Self {
        let n = 1usize << tau;
        let h = T::one() / T::from_count(n);
        let diag = T::lit(2.0) / h + T::lit(4.0) * h / T::lit(6.0);
        let off = -T::one() / h + h / T::lit(6.0);
        let m = n.saturating_sub(1);
        let mut c_prime = Vec::with_capacity(m);
        let mut pivots = Vec::with_capacity(m);
        for i in 0..m {
            let pivot = if i == 0 { diag } else { diag - off * c_prime[i - 1] };
            pivots.push(pivot);
            c_prime.push(off / pivot);
        }
        Self {
            n,
            h,
            off,
            c_prime,
            pivots,
        }
    }

    fn interior(&self) -> usize {
        self.n.saturating_sub(1)
    }

    fn solve_in_place(&self, rhs: &mut [T]) {
        let m = rhs.len();
        if m == 0 {
            return;
        }
        rhs[0] /= self.pivots[0];
        for i in 1..m {
            rhs[i] = (rhs[i] - self.off * rhs[i - 1]) / self.pivots[i];
        }
        for i in (0..m - 1).rev() {
            rhs[i] = rhs[i] - self.c_prime[i] * rhs[i + 1];
        }
    }

    fn sine_load(&self, x: &DVector<T>) -> Vec<T> {
        let factors: Vec<T> = (1..=x.len()).map(|k| sine_load_factor(k, self.h)).collect();
        (1..self.n)
            .map(|j| {
                let s = T::from_count(j) * self.h;
                x.iter()
                    .zip(&factors)
                    .enumerate()
                    .fold(T::zero(), |acc, (k, (&xk, &fk))| {
                        acc + xk * fk * (T::lit(PI) * T::from_count(k + 1) * s).sin()
                    })
            })
            .collect()
    }
}

/// Linear finite element solution of `−u″ + u = f`, `u(0) = u(1) = 0`, on
/// the level mesh. Returns all `2^τ + 1` nodal values including the
/// boundary zeros.
pub fn solve_pde<T: Real>(rhs: Rhs<'_, T>, level: T) -> Result<DVector<T>> {
    let system = MeshSystem::<T>::new(mesh_exponent(level)?);
    let mut load = match rhs {
        Rhs::Sine(x) => {
            if x.iter().any(|v| !v.finite()) {
                return Err(invalid("source coefficients contain non-finite values"));
            }
            system.sine_load(x)
        }
        Rhs::NodalLoad(b) => {
            check_dim("nodal load", system.interior(), b.len())?;
            if b.iter().any(|v| !v.finite()) {
                return Err(invalid("nodal load contains non-finite values"));
            }
            b.as_slice().to_vec()
        }
    };
    system.solve_in_place(&mut load);
    let mut u = DVector::zeros(system.n + 1);
    for (j, v) in load.into_iter().enumerate() {
        u[j + 1] = v;
    }
    Ok(u)
}

/// Source term `f(s) = Σ_k x_k (√2/π) sin(kπs)`.
pub fn source_value<T: Real>(x: &DVector<T>, s: T) -> T {
    x.iter().enumerate().fold(T::zero(), |acc, (k, &xk)| {
        acc + xk * (T::lit(PI) * T::from_count(k + 1) * s).sin()
    }) * T::lit(2f64.sqrt() / PI)
}

/// `‖f(·, x)‖_{L²(0,1)} = ‖x‖ / π`.
pub fn source_l2_norm<T: Real>(x: &DVector<T>) -> T {
    x.norm() / T::lit(PI)
}

pub type Kernel = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Bounded linear functionals applied to the discrete solution.
#[derive(Clone)]
pub enum ObservationOperator<T> {
    /// Point values, by linear interpolation between nodes.
    Points(Vec<T>),
    /// `∫₀¹ ξ_i(s) u(s) ds` for each kernel `ξ_i`.
    Kernel(Vec<Kernel>),
}

impl<T: Real> fmt::Debug for ObservationOperator<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Points(p) => f.debug_tuple("Points").field(p).finish(),
            Self::Kernel(k) => write!(f, "Kernel({} functions)", k.len()),
        }
    }
}

const GAUSS_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

impl<T: Real> ObservationOperator<T> {
    /// Points `s_i = i / (n_y + 1)`, `i = 1..n_y`.
    pub fn equispaced(n_y: usize) -> Self {
        Self::Points(
            (1..=n_y)
                .map(|i| T::from_count(i) / T::from_count(n_y + 1))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Points(p) => p.len(),
            Self::Kernel(k) => k.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(invalid("observation operator has no functionals"));
        }
        if let Self::Points(p) = self {
            if let Some(s) = p.iter().find(|s| !(**s >= T::zero() && **s <= T::one())) {
                return Err(invalid(format!("observation point {s} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Weights on the interior nodes of a mesh with `n` cells, one row per
    /// functional.
    pub fn weights(&self, n: usize) -> DMatrix<T> {
        let m = n.saturating_sub(1);
        let mut w = DMatrix::zeros(self.len(), m);
        if m == 0 {
            return w;
        }
        match self {
            Self::Points(points) => {
                let nf = T::from_count(n);
                for (i, &s) in points.iter().enumerate() {
                    let scaled = s * nf;
                    let j = scaled.floor().as_f64().clamp(0.0, (n - 1) as f64) as usize;
                    let t = scaled - T::from_count(j);
                    if j >= 1 {
                        w[(i, j - 1)] += T::one() - t;
                    }
                    if j + 1 <= m {
                        w[(i, j)] += t;
                    }
                }
            }
            Self::Kernel(kernels) => {
                let h = 1.0 / n as f64;
                for (i, xi) in kernels.iter().enumerate() {
                    for cell in 0..n {
                        let a = cell as f64 * h;
                        for (g, gw) in GAUSS_NODES.iter().zip(GAUSS_WEIGHTS) {
                            let t = 0.5 * (g + 1.0);
                            let val = xi(a + t * h) * gw * 0.5 * h;
                            // Hat of the left node decreases, hat of the right node increases.
                            if cell >= 1 {
                                w[(i, cell - 1)] += T::lit(val * (1.0 - t));
                            }
                            if cell + 1 <= m {
                                w[(i, cell)] += T::lit(val * t);
                            }
                        }
                    }
                }
            }
        }
        w
    }

    /// Applies the functionals to nodal values `u` (boundary nodes included).
    pub fn observe(&self, u: &DVector<T>) -> Result<DVector<T>> {
        if u.len() < 2 {
            return Err(invalid("nodal vector must include both boundary nodes"));
        }
        let n = u.len() - 1;
        let interior = u.rows(1, n - 1);
        Ok(self.weights(n) * interior)
    }
}

/// Sine-coefficient parametrized elliptic model observed through an
/// [`ObservationOperator`]. Level matrices are assembled on first use and
/// cached.
pub struct SineFemModel<T: Real> {
    n_x: usize,
    observation: ObservationOperator<T>,
    cache: Mutex<HashMap<u32, Arc<DMatrix<T>>>>,
}

impl<T: Real> fmt::Debug for SineFemModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SineFemModel")
            .field("n_x", &self.n_x)
            .field("observation", &self.observation)
            .finish_non_exhaustive()
    }
}

impl<T: Real> SineFemModel<T> {
    pub fn new(n_x: usize, observation: ObservationOperator<T>) -> Result<Self> {
        if n_x == 0 {
            return Err(invalid("number of sine modes must be positive"));
        }
        observation.validate()?;
        Ok(Self {
            n_x,
            observation,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Point observations at `i / (n_y + 1)`.
    pub fn equispaced(n_x: usize, n_y: usize) -> Result<Self> {
        Self::new(n_x, ObservationOperator::equispaced(n_y))
    }

    pub fn observation(&self) -> &ObservationOperator<T> {
        &self.observation
    }

    /// Matrix of the model on the mesh with `2^tau` cells.
    pub fn matrix_for_exponent(&self, tau: u32) -> Arc<DMatrix<T>> {
        if let Some(m) = self.cache.lock().expect("forward cache poisoned").get(&tau) {
            return Arc::clone(m);
        }
        // Assembled outside the lock; concurrent first requests may both
        // assemble, and the result is identical either way.
        let assembled = Arc::new(self.assemble(tau));
        let mut cache = self.cache.lock().expect("forward cache poisoned");
        Arc::clone(cache.entry(tau).or_insert(assembled))
    }

    fn assemble(&self, tau: u32) -> DMatrix<T> {
        let system = MeshSystem::<T>::new(tau);
        let n_y = self.observation.len();
        let mut f = DMatrix::zeros(n_y, self.n_x);
        let m = system.interior();
        if m == 0 {
            return f;
        }
        // Adjoint states: one tridiagonal solve per functional.
        let weights = self.observation.weights(system.n);
        let adjoints: Vec<Vec<T>> = (0..n_y)
            .map(|i| {
                let mut p: Vec<T> = weights.row(i).iter().copied().collect();
                system.solve_in_place(&mut p);
                p
            })
            .collect();
        let mut sines = vec![T::zero(); m];
        for k in 0..self.n_x {
            let wk = T::lit(PI) * T::from_count(k + 1);
            for (j, sj) in sines.iter_mut().enumerate() {
                *sj = (wk * T::from_count(j + 1) * system.h).sin();
            }
            let factor = sine_load_factor(k + 1, system.h);
            for (i, p) in adjoints.iter().enumerate() {
                let dot = p.iter().zip(&sines).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                f[(i, k)] = dot * factor;
            }
        }
        f
    }
}

impl<T: Real> LeveledForwardMap<T> for SineFemModel<T> {
    fn input_dim(&self) -> usize {
        self.n_x
    }

    fn output_dim(&self) -> usize {
        self.observation.len()
    }

    fn evaluate(&self, x: &DVector<T>, level: T) -> Result<DVector<T>> {
        check_dim("forward input", self.n_x, x.len())?;
        if x.iter().any(|v| !v.finite()) {
            return Err(invalid("forward input contains non-finite values"));
        }
        Ok(self.matrix(level)?.as_ref() * x)
    }

    fn adjoint_apply(&self, w: &DVector<T>, level: T) -> Result<DVector<T>> {
        check_dim("adjoint input", self.output_dim(), w.len())?;
        Ok(self.matrix(level)?.tr_mul(w))
    }

    fn is_linear(&self) -> bool {
        true
    }
}

impl<T: Real> LinearForwardMap<T> for SineFemModel<T> {
    fn matrix(&self, level: T) -> Result<Arc<DMatrix<T>>> {
        Ok(self.matrix_for_exponent(mesh_exponent(level)?))
    }
}

/// A linear map given by one matrix per level.
pub struct MatrixForwardMap<T: Real> {
    n_x: usize,
    n_y: usize,
    source: MatrixSource<T>,
}

type LevelMatrixFn<T> = Box<dyn Fn(T) -> DMatrix<T> + Send + Sync>;

enum MatrixSource<T: Real> {
    Constant(Arc<DMatrix<T>>),
    PerLevel(LevelMatrixFn<T>),
}

impl<T: Real> MatrixForwardMap<T> {
    /// The same matrix at every level.
    pub fn constant(matrix: DMatrix<T>) -> Self {
        Self {
            n_x: matrix.ncols(),
            n_y: matrix.nrows(),
            source: MatrixSource::Constant(Arc::new(matrix)),
        }
    }

    /// `f(l)` must return an `n_y × n_x` matrix for every level.
    pub fn from_fn(n_x: usize, n_y: usize, f: impl Fn(T) -> DMatrix<T> + Send + Sync + 'static) -> Self {
        Self {
            n_x,
            n_y,
            source: MatrixSource::PerLevel(Box::new(f)),
        }
    }
}

impl<T: Real> LeveledForwardMap<T> for MatrixForwardMap<T> {
    fn input_dim(&self) -> usize {
        self.n_x
    }

    fn output_dim(&self) -> usize {
        self.n_y
    }

    fn evaluate(&self, x: &DVector<T>, level: T) -> Result<DVector<T>> {
        check_dim("forward input", self.n_x, x.len())?;
        Ok(self.matrix(level)?.as_ref() * x)
    }

    fn adjoint_apply(&self, w: &DVector<T>, level: T) -> Result<DVector<T>> {
        check_dim("adjoint input", self.n_y, w.len())?;
        Ok(self.matrix(level)?.tr_mul(w))
    }

    fn is_linear(&self) -> bool {
        true
    }
}

impl<T: Real> LinearForwardMap<T> for MatrixForwardMap<T> {
    fn matrix(&self, level: T) -> Result<Arc<DMatrix<T>>> {
        if !(level >= T::one()) || !level.finite() {
            return Err(invalid(format!("level must be a finite value >= 1, got {level}")));
        }
        let m = match &self.source {
            MatrixSource::Constant(m) => Arc::clone(m),
            MatrixSource::PerLevel(f) => Arc::new(f(level)),
        };
        check_dim("level matrix rows", self.n_y, m.nrows())?;
        check_dim("level matrix columns", self.n_x, m.ncols())?;
        Ok(m)
    }
}

fn check_problem<T: Real, M: LeveledForwardMap<T> + ?Sized>(
    map: &M,
    x: &DVector<T>,
    problem: &InverseProblemSpec<T>,
) -> Result<()> {
    check_dim("parameter", map.input_dim(), x.len())?;
    check_dim("prior dimension", map.input_dim(), problem.n_x())?;
    check_dim("observation dimension", map.output_dim(), problem.n_y())
}

/// Gradient of [`objective`]: `F_lᵀ Γ⁻¹ (F_l x − y) + λ C₀⁻¹ x`.
pub fn gradient<T: Real, M: LeveledForwardMap<T> + ?Sized>(
    map: &M,
    x: &DVector<T>,
    level: T,
    problem: &InverseProblemSpec<T>,
) -> Result<DVector<T>> {
    check_problem(map, x, problem)?;
    let residual = map.evaluate(x, level)? - problem.y();
    let back = map.adjoint_apply(&(problem.gamma_inv() * residual), level)?;
    Ok(back + problem.c0_inv() * x * problem.lambda())
}

/// Level-`l` objective `½‖Γ^{-1/2}(F_l x − y)‖² + (λ/2)‖C₀^{-1/2} x‖²`.
pub fn objective<T: Real, M: LeveledForwardMap<T> + ?Sized>(
    map: &M,
    x: &DVector<T>,
    level: T,
    problem: &InverseProblemSpec<T>,
) -> Result<T> {
    check_problem(map, x, problem)?;
    let r = map.evaluate(x, level)? - problem.y();
    let half = T::lit(0.5);
    Ok(half * r.dot(&(problem.gamma_inv() * &r)) + half * problem.lambda() * x.dot(&(problem.c0_inv() * x)))
}
