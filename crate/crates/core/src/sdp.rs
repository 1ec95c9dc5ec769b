//! A small-scale solver for Hermitian semidefinite programs with a linear
//! objective: maximize tr(C W) over PSD W subject to a trace budget, optional
//! per-diagonal bounds, and linear inequality constraints tr(A_k W) <= c_k.
//!
//! The algorithm is a primal-dual first-order splitting: the primal iterate
//! is projected onto the PSD cone by eigendecomposition each step, and all
//! linear constraints are handled through nonnegative dual variables. Every
//! dual iterate yields a certified upper bound on the optimum, so callers get
//! a valid bound even when iteration stops early.
//!
//! Rank-one objectives C = s s^H get an extra acceleration at every
//! convergence check: the iterate is collapsed onto s (which preserves every
//! quadratic-form constraint), rescaled to the feasibility boundary, and its
//! active constraints are solved for multipliers by least squares. That pair
//! is adopted whenever it beats the running iterates, and the certified gap
//! between the feasible value and the dual bound allows a provably-correct
//! early stop.

use nalgebra::{Cholesky, Complex, DMatrix, DVector, Dyn};
use thiserror::Error;

pub type C64 = Complex<f64>;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("matrix must be Hermitian (asymmetry {0:.2e})")]
    NonHermitian(f64),
    #[error("dimension mismatch: objective is {0}x{0}, constraint {1} is {2}x{2}")]
    DimensionMismatch(usize, usize, usize),
    #[error("problem size {0} exceeds the supported cap {1}")]
    TooLarge(usize, usize),
    #[error("trace budget must be positive, got {0}")]
    BadTraceBudget(f64),
}

/// Hermitian coefficient matrix; rank-one constraints store only the factor.
#[derive(Debug, Clone)]
pub enum ConstraintMatrix {
    Dense(DMatrix<C64>),
    /// A = v v^H.
    RankOne(DVector<C64>),
}

impl ConstraintMatrix {
    pub fn dim(&self) -> usize {
        match self {
            ConstraintMatrix::Dense(a) => a.nrows(),
            ConstraintMatrix::RankOne(v) => v.len(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        match self {
            ConstraintMatrix::Dense(a) => a.norm(),
            ConstraintMatrix::RankOne(v) => v.norm_squared(),
        }
    }

    /// tr(A W) for Hermitian A and W (real by symmetry).
    pub fn inner(&self, w: &DMatrix<C64>) -> f64 {
        match self {
            ConstraintMatrix::Dense(a) => {
                a.iter().zip(w.iter()).map(|(x, y)| (x.conj() * y).re).sum()
            }
            ConstraintMatrix::RankOne(v) => {
                let wv = w * v;
                v.dotc(&wv).re
            }
        }
    }

    fn add_scaled_into(&self, coeff: f64, acc: &mut DMatrix<C64>) {
        match self {
            ConstraintMatrix::Dense(a) => {
                acc.zip_apply(a, |t, s| *t += s * C64::new(coeff, 0.0));
            }
            ConstraintMatrix::RankOne(v) => {
                let n = v.len();
                for j in 0..n {
                    let vj = v[j].conj() * C64::new(coeff, 0.0);
                    for i in 0..n {
                        acc[(i, j)] += v[i] * vj;
                    }
                }
            }
        }
    }

    fn hermitian_defect(&self) -> f64 {
        match self {
            ConstraintMatrix::Dense(a) => (a - a.adjoint()).norm() / a.norm().max(1e-300),
            ConstraintMatrix::RankOne(_) => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearSdp {
    pub objective: ConstraintMatrix,
    pub trace_budget: f64,
    /// Upper bound on each diagonal entry; +inf disables the bounds.
    pub diag_bound: f64,
    pub constraints: Vec<(ConstraintMatrix, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone, Copy)]
pub struct IterationStats {
    pub iteration: usize,
    pub objective: f64,
    pub certified_bound: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// Primal/dual state carried between related solves (adjacent slots see
/// nearly identical problems, so restarting from the previous solution skips
/// most iterations).
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub w: DMatrix<C64>,
    /// Unscaled duals: [trace, diag_0..diag_{n-1} (if bounded), user_0..].
    pub dual: DVector<f64>,
    pub step_balance: f64,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub w: DMatrix<C64>,
    /// tr(C W) at the returned iterate.
    pub objective: f64,
    /// Dual certificate: the true optimum is at most this value.
    pub certified_bound: f64,
    pub status: SdpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub dual: DVector<f64>,
    pub step_balance: f64,
    pub trace: Vec<IterationStats>,
}

impl SdpSolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart { w: self.w.clone(), dual: self.dual.clone(), step_balance: self.step_balance }
    }
}

#[derive(Debug, Clone)]
pub struct SdpOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub check_every: usize,
    pub warm: Option<WarmStart>,
    pub keep_trace: bool,
    /// Extra stop rule for rank-one objectives: accept once the certified
    /// bound and the best feasible rank-one value bracket the optimum within
    /// this relative width. Zero keeps only the residual-based stop.
    pub gap_rtol: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 50_000,
            check_every: 40,
            warm: None,
            keep_trace: false,
            gap_rtol: 0.0,
        }
    }
}

pub const MAX_DIM: usize = 64;
pub const MAX_CONSTRAINTS: usize = 1024;

/// Number of eigenvalues above `rank_tol` times the largest one.
pub fn numerical_rank(w: &DMatrix<C64>, rank_tol: f64) -> usize {
    let eig = hermitian_part(w).symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if lmax <= 0.0 {
        return 0;
    }
    eig.eigenvalues.iter().filter(|&&l| l > rank_tol * lmax).count()
}

/// Principal eigenvector scaled by the square root of its eigenvalue; equal
/// to the exact factor when W is rank-one.
pub fn principal_factor(w: &DMatrix<C64>) -> DVector<C64> {
    let eig = hermitian_part(w).symmetric_eigen();
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    let lam = eig.eigenvalues[best].max(0.0);
    eig.eigenvectors.column(best) * C64::new(lam.sqrt(), 0.0)
}

fn hermitian_part(w: &DMatrix<C64>) -> DMatrix<C64> {
    (w + w.adjoint()) * C64::new(0.5, 0.0)
}

/// Projects onto the PSD cone by clamping negative eigenvalues.
fn project_psd(x: &DMatrix<C64>) -> DMatrix<C64> {
    let eig = hermitian_part(x).symmetric_eigen();
    let n = x.nrows();
    let mut v = eig.eigenvectors;
    let mut any_positive = false;
    for j in 0..n {
        let l = eig.eigenvalues[j];
        if l > 0.0 {
            any_positive = true;
            let s = C64::new(l.sqrt(), 0.0);
            for i in 0..n {
                v[(i, j)] *= s;
            }
        } else {
            for i in 0..n {
                v[(i, j)] = C64::new(0.0, 0.0);
            }
        }
    }
    if !any_positive {
        return DMatrix::zeros(n, n);
    }
    &v * v.adjoint()
}

fn lambda_max(x: &DMatrix<C64>) -> f64 {
    let eig = hermitian_part(x).symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

struct Scaled {
    n: usize,
    m: usize,
    c_hat: DMatrix<C64>,
    /// Unit-norm objective factor when the objective is rank-one.
    s_hat: Option<DVector<C64>>,
    c_scale: f64,
    p_max: f64,
    diag_bound_scaled: Option<f64>,
    users: Vec<(ConstraintMatrix, f64)>,
    user_norms: Vec<f64>,
    trace_coeff: f64,
    /// Scaled right-hand sides of all rows, in `residual_vector` order.
    b_hat: DVector<f64>,
}

/// Feasible rank-one iterate extracted from a relaxed one.
struct AlignedPoint {
    w: DVector<C64>,
    value: f64,
}

/// Valid dual certificate from the boundary-dual descent, with the matching
/// primal direction B(mu)^{-1} s.
struct BoundaryCertificate {
    bound: f64,
    dual: DVector<f64>,
    direction: DVector<C64>,
}

impl Scaled {
    fn build(p: &LinearSdp) -> Result<Self, SdpError> {
        let n = p.objective.dim();
        if n > MAX_DIM {
            return Err(SdpError::TooLarge(n, MAX_DIM));
        }
        if p.constraints.len() > MAX_CONSTRAINTS {
            return Err(SdpError::TooLarge(p.constraints.len(), MAX_CONSTRAINTS));
        }
        if p.trace_budget <= 0.0 {
            return Err(SdpError::BadTraceBudget(p.trace_budget));
        }
        let defect = p.objective.hermitian_defect();
        if defect > 1e-9 {
            return Err(SdpError::NonHermitian(defect));
        }
        for (a, _) in &p.constraints {
            if a.dim() != n {
                return Err(SdpError::DimensionMismatch(n, a.dim(), a.dim()));
            }
            let defect = a.hermitian_defect();
            if defect > 1e-9 {
                return Err(SdpError::NonHermitian(defect));
            }
        }
        let c_scale = p.objective.frobenius_norm().max(1e-300);
        let mut s_hat = None;
        let c_hat = match &p.objective {
            ConstraintMatrix::Dense(a) => a / C64::new(c_scale, 0.0),
            ConstraintMatrix::RankOne(v) => {
                let vh = v / C64::new(c_scale.sqrt(), 0.0);
                let outer = &vh * vh.adjoint();
                s_hat = Some(vh);
                outer
            }
        };
        // Diagonal bounds that cannot bind are dropped outright.
        let diag_bound_scaled = if p.diag_bound.is_finite() && p.diag_bound < p.trace_budget {
            Some(p.diag_bound / p.trace_budget)
        } else {
            None
        };
        let mut users = Vec::with_capacity(p.constraints.len());
        let mut user_norms = Vec::with_capacity(p.constraints.len());
        for (a, c) in &p.constraints {
            let nu = a.frobenius_norm().max(1e-300);
            user_norms.push(nu);
            let scaled = match a {
                ConstraintMatrix::Dense(m) => ConstraintMatrix::Dense(m / C64::new(nu, 0.0)),
                ConstraintMatrix::RankOne(v) => {
                    ConstraintMatrix::RankOne(v / C64::new(nu.sqrt(), 0.0))
                }
            };
            users.push((scaled, c / (nu * p.trace_budget)));
        }
        let n_diag = if diag_bound_scaled.is_some() { n } else { 0 };
        let m = 1 + n_diag + users.len();
        let trace_coeff = 1.0 / (n as f64).sqrt();
        let mut b_hat = DVector::zeros(m);
        b_hat[0] = trace_coeff;
        let mut idx = 1;
        if let Some(db) = diag_bound_scaled {
            for _ in 0..n {
                b_hat[idx] = db;
                idx += 1;
            }
        }
        for (_, c) in &users {
            b_hat[idx] = *c;
            idx += 1;
        }
        Ok(Scaled {
            n,
            m,
            c_hat,
            s_hat,
            c_scale,
            p_max: p.trace_budget,
            diag_bound_scaled,
            users,
            user_norms,
            trace_coeff,
            b_hat,
        })
    }

    /// Scaled right-hand side of row `idx` (rows ordered trace, diagonals,
    /// users, matching `residual_vector`).
    fn row_bound(&self, idx: usize) -> f64 {
        if idx == 0 {
            return self.trace_coeff;
        }
        if let Some(db) = self.diag_bound_scaled {
            if idx <= self.n {
                return db;
            }
            return self.users[idx - 1 - self.n].1;
        }
        self.users[idx - 1].1
    }

    /// Quadratic form w^H A_idx w of row `idx`.
    fn row_value(&self, idx: usize, w: &DVector<C64>) -> f64 {
        if idx == 0 {
            return self.trace_coeff * w.norm_squared();
        }
        if let Some(_db) = self.diag_bound_scaled {
            if idx <= self.n {
                return w[idx - 1].norm_sqr();
            }
            return self.user_row_value(idx - 1 - self.n, w);
        }
        self.user_row_value(idx - 1, w)
    }

    fn user_row_value(&self, k: usize, w: &DVector<C64>) -> f64 {
        match &self.users[k].0 {
            ConstraintMatrix::RankOne(h) => h.dotc(w).norm_sqr(),
            ConstraintMatrix::Dense(a) => {
                let aw = a * w;
                w.dotc(&aw).re
            }
        }
    }

    /// Column A_idx w of row `idx`.
    fn row_apply(&self, idx: usize, w: &DVector<C64>) -> DVector<C64> {
        if idx == 0 {
            return w * C64::new(self.trace_coeff, 0.0);
        }
        let user = if self.diag_bound_scaled.is_some() {
            if idx <= self.n {
                let mut col = DVector::zeros(self.n);
                col[idx - 1] = w[idx - 1];
                return col;
            }
            idx - 1 - self.n
        } else {
            idx - 1
        };
        match &self.users[user].0 {
            ConstraintMatrix::RankOne(h) => h * h.dotc(w),
            ConstraintMatrix::Dense(a) => a * w,
        }
    }

    /// Collapses X onto the rank-one objective direction; the collapse never
    /// increases any quadratic-form constraint value, so the boundary rescale
    /// below keeps it feasible no matter how far X is from optimal.
    fn align(&self, x: &DMatrix<C64>) -> Option<AlignedPoint> {
        let s_hat = self.s_hat.as_ref()?;
        self.align_direction(&(x * s_hat))
    }

    /// Feasible rank-one point along `dir`: the phase is rotated so the
    /// objective inner product is real and the magnitude is rescaled to the
    /// first constraint boundary.
    fn align_direction(&self, dir: &DVector<C64>) -> Option<AlignedPoint> {
        let s_hat = self.s_hat.as_ref()?;
        let gain = s_hat.dotc(dir);
        let g2 = gain.norm_sqr();
        if g2 <= 1e-60 * dir.norm_squared().max(1e-300) {
            return None;
        }
        let mut w = dir * (gain.conj() / C64::new(gain.norm(), 0.0));
        let mut vals: Vec<f64> = (0..self.m).map(|i| self.row_value(i, &w)).collect();
        let mut z = f64::INFINITY;
        for i in 0..self.m {
            let b = self.row_bound(i);
            if vals[i] > 0.0 && b >= 0.0 {
                z = z.min(b / vals[i]);
            }
        }
        if !z.is_finite() || z <= 0.0 {
            return None;
        }
        w *= C64::new(z.sqrt(), 0.0);
        for v in &mut vals {
            *v *= z;
        }
        // Indefinite rows are not covered by pure rescaling; refuse rather
        // than report an infeasible value.
        for i in 0..self.m {
            let b = self.row_bound(i);
            if vals[i] > b + 1e-9 * b.abs().max(1.0) {
                return None;
            }
        }
        Some(AlignedPoint { w, value: g2 * z })
    }

    /// Multipliers fit to the active constraints of a feasible boundary
    /// point: least squares on the stationarity condition
    /// C w = sum_a y_a A_a w, re-solved on the positive support.
    fn kkt_seed(&self, w: &DVector<C64>) -> Option<DVector<f64>> {
        let s_hat = self.s_hat.as_ref()?;
        let n = self.n;
        let mut active: Vec<usize> = (0..self.m)
            .filter(|&i| self.row_value(i, w) >= self.row_bound(i) * (1.0 - 1e-3))
            .collect();
        if active.is_empty() {
            return None;
        }
        let target = s_hat * s_hat.dotc(w);
        let mut coeffs: Vec<f64> = Vec::new();
        for _ in 0..8 {
            let na = active.len();
            let mut g = DMatrix::<f64>::zeros(2 * n, na);
            for (j, &a) in active.iter().enumerate() {
                let col = self.row_apply(a, w);
                for i in 0..n {
                    g[(i, j)] = col[i].re;
                    g[(n + i, j)] = col[i].im;
                }
            }
            let mut r = DVector::<f64>::zeros(2 * n);
            for i in 0..n {
                r[i] = target[i].re;
                r[n + i] = target[i].im;
            }
            let fit = g.svd(true, true).solve(&r, 1e-12).ok()?;
            if fit.iter().all(|&v| v >= 0.0) {
                coeffs = fit.iter().cloned().collect();
                break;
            }
            let keep: Vec<usize> = active
                .iter()
                .zip(fit.iter())
                .filter(|(_, &v)| v > 0.0)
                .map(|(&a, _)| a)
                .collect();
            if keep.is_empty() || keep.len() == active.len() {
                coeffs = fit.iter().map(|&v| v.max(0.0)).collect();
                break;
            }
            active = keep;
        }
        if coeffs.len() != active.len() {
            return None;
        }
        let mut dual = DVector::zeros(self.m);
        for (&a, &c) in active.iter().zip(&coeffs) {
            dual[a] = c;
        }
        Some(dual)
    }

    /// True when the boundary-dual machinery applies: rank-one objective and
    /// every constraint row a PSD quadratic form.
    fn polishable(&self) -> bool {
        self.s_hat.is_some()
            && self.users.iter().all(|(a, _)| matches!(a, ConstraintMatrix::RankOne(_)))
    }

    /// B(mu) = sum_a mu_a A_a over all rows.
    fn weighted_rows(&self, mu: &DVector<f64>, out: &mut DMatrix<C64>) {
        out.fill(C64::new(0.0, 0.0));
        let mut idx = 0;
        let t = mu[idx] * self.trace_coeff;
        idx += 1;
        for i in 0..self.n {
            out[(i, i)] += C64::new(t, 0.0);
        }
        if self.diag_bound_scaled.is_some() {
            for i in 0..self.n {
                out[(i, i)] += C64::new(mu[idx], 0.0);
                idx += 1;
            }
        }
        for (a, _) in &self.users {
            let coeff = mu[idx];
            idx += 1;
            if coeff != 0.0 {
                a.add_scaled_into(coeff, out);
            }
        }
    }

    /// Clamps a dual candidate to the nonnegative orthant and floors its
    /// trace coordinate so B(mu) stays invertible even when the minimizing
    /// dual is supported on rank-deficient rows. The floored vector is still
    /// a valid dual, so every certificate computed from it is correct; the
    /// floor only biases the bound by ~1e-9 relative.
    fn boundary_clamp(&self, mu: &mut DVector<f64>) {
        let mut sum = 0.0;
        for v in mu.iter_mut() {
            if !(*v > 0.0) {
                *v = 0.0;
            }
            sum += *v;
        }
        let floor = 1e-9 * (sum + 1.0);
        if mu[0] < floor {
            mu[0] = floor;
        }
    }

    /// s^H B(mu)^{-1} s, B(mu)^{-1} s, and the factorization of B(mu), when
    /// B(mu) is positive definite.
    fn boundary_eval(
        &self,
        mu: &DVector<f64>,
        work: &mut DMatrix<C64>,
    ) -> Option<(f64, DVector<C64>, Cholesky<C64, Dyn>)> {
        let s_hat = self.s_hat.as_ref()?;
        self.weighted_rows(mu, work);
        let chol = work.clone().cholesky()?;
        let x = chol.solve(s_hat);
        let c = s_hat.dotc(&x).re;
        (c.is_finite() && c > 0.0).then_some((c, x, chol))
    }

    /// Rescales a nonnegative dual vector to its best boundary-dual
    /// representative and reports the certificate it already earns.
    fn boundary_normalize(
        &self,
        y: &DVector<f64>,
        work: &mut DMatrix<C64>,
    ) -> Option<(f64, DVector<f64>)> {
        let mut mu = y.clone();
        self.boundary_clamp(&mut mu);
        let (c, _, _) = self.boundary_eval(&mu, work)?;
        let linear = self.b_hat.dot(&mu);
        if !(linear > 0.0) {
            return None;
        }
        let bound = c * linear;
        Some((bound, &mu * (c / linear).sqrt()))
    }

    fn boundary_default_start(&self) -> DVector<f64> {
        let mut mu = DVector::zeros(self.m);
        mu[0] = (self.n as f64).sqrt();
        mu
    }

    /// Minimizes the smooth boundary dual d(mu) = (s^H B^{-1} s + mu.b) / 2
    /// by projected Newton steps with the exact Hessian Re(V^H B^{-1} V) on
    /// the working coordinates. Every nonnegative iterate certifies
    /// bound = (s^H B^{-1} s)(mu.b) via Cauchy-Schwarz in the B metric, so
    /// the best iterate is returned no matter where the descent stops; for
    /// rank-one objectives the minimum is the exact relaxed optimum and the
    /// descent reaches it in a handful of steps.
    fn boundary_descent(
        &self,
        mu0: &DVector<f64>,
        max_steps: usize,
        target: f64,
        work: &mut DMatrix<C64>,
    ) -> Option<BoundaryCertificate> {
        let mut mu = mu0.clone();
        self.boundary_clamp(&mut mu);
        let (mut c, mut xv, mut chol) = self.boundary_eval(&mu, work)?;
        let mut linear = self.b_hat.dot(&mu);
        let mut d = 0.5 * (c + linear);
        let mut best = BoundaryCertificate {
            bound: c * linear,
            dual: &mu * c,
            direction: xv.clone(),
        };
        for _ in 0..max_steps {
            if best.bound <= target * (1.0 + 1e-12) {
                break;
            }
            let mut grad = DVector::zeros(self.m);
            for a in 0..self.m {
                grad[a] = 0.5 * (self.b_hat[a] - self.row_value(a, &xv));
            }
            // Coordinates allowed to move: positive ones and those whose
            // gradient pushes off the mu >= 0 boundary.
            let free: Vec<usize> =
                (0..self.m).filter(|&a| mu[a] > 0.0 || grad[a] < 0.0).collect();
            let pg2: f64 = free.iter().map(|&a| grad[a] * grad[a]).sum();
            if pg2 <= 1e-24 * (1.0 + d * d) {
                break;
            }
            let cols: Vec<DVector<C64>> = free.iter().map(|&a| self.row_apply(a, &xv)).collect();
            let solved: Vec<DVector<C64>> = cols.iter().map(|v| chol.solve(v)).collect();
            let k = free.len();
            let mut hess = DMatrix::<f64>::zeros(k, k);
            for i in 0..k {
                for j in i..k {
                    let v = cols[i].dotc(&solved[j]).re;
                    hess[(i, j)] = v;
                    hess[(j, i)] = v;
                }
            }
            let g_free = DVector::from_fn(k, |i, _| grad[free[i]]);
            // Levenberg damping; retry harder if the factorization balks.
            let base = 1e-12 * (hess.trace() / k as f64).max(f64::MIN_POSITIVE);
            let mut damp = base;
            let mut dir: Option<DVector<f64>> = None;
            for _ in 0..12 {
                let mut damped = hess.clone();
                for i in 0..k {
                    damped[(i, i)] += damp;
                }
                if let Some(f) = damped.cholesky() {
                    let p = f.solve(&g_free);
                    if p.iter().all(|v| v.is_finite()) {
                        dir = Some(p);
                        break;
                    }
                }
                damp *= 100.0;
            }
            let p = dir?;
            let mut accepted = false;
            let mut alpha = 1.0f64;
            for _ in 0..30 {
                let mut mu_new = mu.clone();
                for (i, &a) in free.iter().enumerate() {
                    mu_new[a] -= alpha * p[i];
                }
                self.boundary_clamp(&mut mu_new);
                let dn2 = (&mu_new - &mu).norm_squared();
                if dn2 <= 1e-28 * (1.0 + mu.norm_squared()) {
                    break;
                }
                if let Some((c_new, x_new, chol_new)) = self.boundary_eval(&mu_new, work) {
                    let lin_new = self.b_hat.dot(&mu_new);
                    let d_new = 0.5 * (c_new + lin_new);
                    if d_new < d {
                        mu = mu_new;
                        c = c_new;
                        xv = x_new;
                        chol = chol_new;
                        linear = lin_new;
                        d = d_new;
                        let bound_here = c * linear;
                        if bound_here < best.bound {
                            best.bound = bound_here;
                            best.dual = &mu * c;
                            best.direction = xv.clone();
                        }
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Some(best)
    }


    /// Applies the stacked constraint map to X, returning A(X) - b.
    fn residual_vector(&self, x: &DMatrix<C64>, out: &mut DVector<f64>) {
        let n = self.n;
        let mut idx = 0;
        let tr: f64 = (0..n).map(|i| x[(i, i)].re).sum();
        out[idx] = self.trace_coeff * tr - self.trace_coeff;
        idx += 1;
        if let Some(db) = self.diag_bound_scaled {
            for i in 0..n {
                out[idx] = x[(i, i)].re - db;
                idx += 1;
            }
        }
        for (a, c) in &self.users {
            out[idx] = a.inner(x) - c;
            idx += 1;
        }
    }

    /// Builds C - A*(y) into `work`.
    fn dual_combination(&self, y: &DVector<f64>, work: &mut DMatrix<C64>) {
        work.copy_from(&self.c_hat);
        let n = self.n;
        let mut idx = 0;
        let yt = y[idx] * self.trace_coeff;
        idx += 1;
        for i in 0..n {
            work[(i, i)] -= C64::new(yt, 0.0);
        }
        if self.diag_bound_scaled.is_some() {
            for i in 0..n {
                work[(i, i)] -= C64::new(y[idx], 0.0);
                idx += 1;
            }
        }
        for (a, _) in &self.users {
            let coeff = y[idx];
            idx += 1;
            if coeff != 0.0 {
                a.add_scaled_into(-coeff, work);
            }
        }
    }

    fn b_dot(&self, y: &DVector<f64>) -> f64 {
        let mut acc = y[0] * self.trace_coeff;
        let mut idx = 1;
        if let Some(db) = self.diag_bound_scaled {
            for _ in 0..self.n {
                acc += y[idx] * db;
                idx += 1;
            }
        }
        for (_, c) in &self.users {
            acc += y[idx] * c;
            idx += 1;
        }
        acc
    }

    fn objective_of(&self, x: &DMatrix<C64>) -> f64 {
        self.c_hat.iter().zip(x.iter()).map(|(c, w)| (c.conj() * w).re).sum()
    }

    /// Converts an unscaled dual vector (from a previous solution) into the
    /// scaled space of this problem, or None if shapes disagree.
    fn import_dual(&self, dual: &DVector<f64>) -> Option<DVector<f64>> {
        if dual.len() != self.m {
            return None;
        }
        let mut y = DVector::zeros(self.m);
        y[0] = dual[0] * (self.n as f64).sqrt() / self.c_scale;
        let mut idx = 1;
        if self.diag_bound_scaled.is_some() {
            for _ in 0..self.n {
                y[idx] = dual[idx] / self.c_scale;
                idx += 1;
            }
        }
        for nu in &self.user_norms {
            y[idx] = dual[idx] * nu / self.c_scale;
            idx += 1;
        }
        Some(y)
    }

    /// Converts scaled duals back to unscaled certificates.
    fn export_dual(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        out[0] = y[0] * self.c_scale / (self.n as f64).sqrt();
        let mut idx = 1;
        if self.diag_bound_scaled.is_some() {
            for _ in 0..self.n {
                out[idx] = y[idx] * self.c_scale;
                idx += 1;
            }
        }
        for nu in &self.user_norms {
            out[idx] = y[idx] * self.c_scale / nu;
            idx += 1;
        }
        out
    }
}

/// Maximizes tr(C W) over the PSD cone intersected with the trace budget,
/// diagonal bounds, and the given linear inequalities.
pub fn solve_linear_sdp(p: &LinearSdp, opts: &SdpOptions) -> Result<SdpSolution, SdpError> {
    let s = Scaled::build(p)?;
    let n = s.n;
    let m = s.m;

    // Quick infeasibility screen: a PSD-coefficient constraint with a
    // negative bound can never hold on the PSD cone.
    for (a, c) in &p.constraints {
        if *c < 0.0 {
            let psd = match a {
                ConstraintMatrix::RankOne(_) => true,
                ConstraintMatrix::Dense(d) => {
                    let eig = hermitian_part(d).symmetric_eigen();
                    eig.eigenvalues.iter().all(|&l| l >= -1e-12 * d.norm())
                }
            };
            if psd {
                return Ok(SdpSolution {
                    w: DMatrix::zeros(n, n),
                    objective: 0.0,
                    certified_bound: 0.0,
                    status: SdpStatus::Infeasible,
                    primal_residual: f64::INFINITY,
                    dual_residual: f64::INFINITY,
                    gap: f64::INFINITY,
                    iterations: 0,
                    dual: DVector::zeros(m),
                    step_balance: 1.0,
                    trace: Vec::new(),
                });
            }
        }
    }

    let op_norm = (m as f64).sqrt();
    let mut theta = 1.0f64;
    let mut x: DMatrix<C64> = DMatrix::zeros(n, n);
    let mut y: DVector<f64> = DVector::zeros(m);
    if let Some(w) = &opts.warm {
        // Primal and dual are imported independently; a caller-provided
        // primal guess still helps when no matching duals exist yet.
        if w.w.nrows() == n {
            x = w.w.clone() / C64::new(s.p_max, 0.0);
            theta = w.step_balance.clamp(1e-3, 1e3);
        }
        if let Some(imported) = s.import_dual(&w.dual) {
            y = imported;
        }
    }
    let mut x_bar = x.clone();
    let mut resid = DVector::zeros(m);
    let mut work = DMatrix::zeros(n, n);
    let mut trace_log = Vec::new();

    let tol = opts.tol;
    let mut status = SdpStatus::MaxIterations;
    let mut iterations = 0;
    let mut best_bound = f64::INFINITY;
    let mut primal_res = f64::INFINITY;
    let mut dual_res = f64::INFINITY;
    let mut gap = f64::INFINITY;

    let check = |x: &DMatrix<C64>,
                 y: &DVector<f64>,
                 resid: &mut DVector<f64>,
                 work: &mut DMatrix<C64>,
                 trace_log: &mut Vec<IterationStats>,
                 iteration: usize|
     -> (bool, f64, f64, f64, f64) {
        s.residual_vector(x, resid);
        let p_res = resid.iter().cloned().fold(0.0f64, f64::max);
        s.dual_combination(y, work);
        let lmax = lambda_max(work);
        let d_res = lmax.max(0.0);
        let obj = s.objective_of(x);
        // Any nonnegative dual certifies this bound, so it is valid even
        // when iteration stops early.
        let bound = s.b_dot(y) + d_res;
        let g = (bound - obj).abs() / obj.abs().max(bound).max(1e-12);
        if opts.keep_trace {
            trace_log.push(IterationStats {
                iteration,
                objective: obj * s.c_scale * s.p_max,
                certified_bound: bound * s.c_scale * s.p_max,
                primal_residual: p_res,
                dual_residual: d_res,
            });
        }
        let ok = p_res <= tol && d_res <= tol && g <= tol;
        (ok, p_res, d_res, g, bound)
    };

    // Best feasible rank-one value seen so far, with its vector, and the
    // best certificate dual (kept separate from the PDHG iterate so it can
    // only improve).
    let mut best_low = f64::NEG_INFINITY;
    let mut w_low: Option<DVector<C64>> = None;
    let mut y_cert: Option<DVector<f64>> = None;
    let mut polish_work: DMatrix<C64> = DMatrix::zeros(n, n);

    // Aligns the iterate into a feasible rank-one point, tightens the dual
    // certificate toward it, and adopts either side whenever it beats the
    // running iterates; yields true once the certified sandwich is narrower
    // than the requested relative width.
    macro_rules! polish_adopt {
        ($bound_now:expr, $steps:expr) => {{
            if s.polishable() {
                let aligned = s.align(&x);
                if let Some(al) = &aligned {
                    if al.value > best_low {
                        best_low = al.value;
                        w_low = Some(al.w.clone());
                    }
                    if al.value > s.objective_of(&x) {
                        x = &al.w * al.w.adjoint();
                        x_bar.copy_from(&x);
                    }
                }
                // Start the certificate descent from the best of the carried
                // dual, the stationarity fit at the aligned point, and the
                // PDHG dual.
                let mut start_bound = f64::INFINITY;
                let mut start: Option<DVector<f64>> = None;
                let seed = aligned.as_ref().and_then(|al| s.kkt_seed(&al.w));
                for cand in [Some(&y), y_cert.as_ref(), seed.as_ref()] {
                    if let Some(c) = cand {
                        if let Some((b, mu)) = s.boundary_normalize(c, &mut polish_work) {
                            if b < start_bound {
                                start_bound = b;
                                start = Some(mu);
                            }
                        }
                    }
                }
                let mu0 = start.unwrap_or_else(|| s.boundary_default_start());
                // Descending past the point where the sandwich closes is
                // wasted work; exact runs keep the target at the floor.
                let slack = 1.0 + 0.25 * opts.gap_rtol;
                let target = best_low.max(0.0) * slack;
                if let Some(cert) = s.boundary_descent(&mu0, $steps, target, &mut polish_work) {
                    best_bound = best_bound.min(cert.bound);
                    if cert.bound < $bound_now {
                        y.copy_from(&cert.dual);
                        x_bar.copy_from(&x);
                    }
                    if let Some(al) = s.align_direction(&cert.direction) {
                        if al.value > best_low {
                            best_low = al.value;
                            w_low = Some(al.w.clone());
                        }
                        if al.value > s.objective_of(&x) {
                            x = &al.w * al.w.adjoint();
                            x_bar.copy_from(&x);
                        }
                    }
                    y_cert = Some(cert.dual);
                }
            }
            opts.gap_rtol > 0.0
                && w_low.is_some()
                && best_bound.is_finite()
                && best_bound - best_low <= opts.gap_rtol * best_bound.max(1e-300)
        }};
    }

    // The boundary-dual descent alone solves most rank-one instances: it
    // reaches the exact dual optimum in tens of Newton steps and the aligned
    // primal usually meets it. Warm-started iterates likewise are often
    // already optimal for the perturbed problem; test both before spending
    // projection iterations.
    if opts.warm.is_some() || s.polishable() {
        let (ok, p_res, d_res, g, bound) =
            check(&x, &y, &mut resid, &mut work, &mut trace_log, 0);
        primal_res = p_res;
        dual_res = d_res;
        gap = g;
        best_bound = best_bound.min(bound);
        let bracketed = polish_adopt!(bound, 400);
        if ok
            || bracketed
            || (opts.warm.is_some()
                && p_res <= 10.0 * tol
                && d_res <= 10.0 * tol
                && g <= 100.0 * tol)
        {
            status = SdpStatus::Optimal;
        }
    }

    if status != SdpStatus::Optimal {
        let mut tau = theta / op_norm;
        let mut sigma = 1.0 / (theta * op_norm);
        let mut k = 0usize;
        loop {
            if k >= opts.max_iter {
                break;
            }
            k += 1;
            // Dual ascent on the constraint multipliers.
            s.residual_vector(&x_bar, &mut resid);
            for i in 0..m {
                y[i] = (y[i] + sigma * resid[i]).max(0.0);
            }
            // Primal step toward the objective, then back to the cone.
            s.dual_combination(&y, &mut work);
            let x_new = {
                let mut t = x.clone();
                t.zip_apply(&work, |xi, wi| *xi += wi * C64::new(tau, 0.0));
                project_psd(&t)
            };
            x_bar = &x_new * C64::new(2.0, 0.0) - &x;
            x = x_new;

            if k % opts.check_every == 0 || k == opts.max_iter {
                let (ok, p_res, d_res, g, bound) =
                    check(&x, &y, &mut resid, &mut work, &mut trace_log, k);
                primal_res = p_res;
                dual_res = d_res;
                gap = g;
                best_bound = best_bound.min(bound);
                let bracketed = polish_adopt!(bound, 60);
                if ok || bracketed {
                    status = SdpStatus::Optimal;
                    iterations = k;
                    break;
                }
                // Rebalance steps when one residual lags far behind.
                if p_res > 10.0 * (d_res + g).max(1e-14) && theta < 1e3 {
                    theta = (theta * 1.5).min(1e3);
                    tau = theta / op_norm;
                    sigma = 1.0 / (theta * op_norm);
                    x_bar.copy_from(&x);
                } else if (d_res + g) > 10.0 * p_res.max(1e-14) && theta > 1e-3 {
                    theta = (theta / 1.5).max(1e-3);
                    tau = theta / op_norm;
                    sigma = 1.0 / (theta * op_norm);
                    x_bar.copy_from(&x);
                }
            }
            iterations = k;
        }
        if status != SdpStatus::Optimal {
            let (ok, p_res, d_res, g, bound) =
                check(&x, &y, &mut resid, &mut work, &mut trace_log, iterations);
            primal_res = p_res;
            dual_res = d_res;
            gap = g;
            best_bound = best_bound.min(bound);
            let bracketed = polish_adopt!(bound, 120);
            // Residuals within an order of magnitude of the target still
            // certify a usable solution.
            if ok
                || bracketed
                || (p_res <= 10.0 * tol && d_res <= 10.0 * tol && g <= 100.0 * tol)
            {
                status = SdpStatus::Optimal;
            }
        }
    }
    let _ = y_cert;

    // Return the certified rank-one iterate when it matches the relaxed
    // value; it is strictly feasible where the projected iterate may not be.
    if let Some(wl) = &w_low {
        if best_low >= s.objective_of(&x) * (1.0 - 1e-9) {
            x = wl * wl.adjoint();
            let (_, p_res, d_res, g, bound) =
                check(&x, &y, &mut resid, &mut work, &mut trace_log, iterations);
            primal_res = p_res;
            dual_res = d_res;
            gap = g;
            best_bound = best_bound.min(bound);
        }
    }

    let w = &x * C64::new(s.p_max, 0.0);
    let objective = s.objective_of(&x) * s.c_scale * s.p_max;
    let certified = if best_bound.is_finite() {
        best_bound * s.c_scale * s.p_max
    } else {
        f64::INFINITY
    };
    Ok(SdpSolution {
        objective,
        certified_bound: certified.max(objective),
        status,
        primal_residual: primal_res,
        dual_residual: dual_res,
        gap,
        iterations,
        dual: s.export_dual(&y),
        step_balance: theta,
        trace: trace_log,
        w,
    })
}
