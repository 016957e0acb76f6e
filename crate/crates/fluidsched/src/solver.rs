//! First-order operator-splitting (ADMM) solver for convex QPs of the form
//!
//! ```text
//!   minimize    (1/2) x' P x + q' x        (P diagonal, PSD)
//!   subject to  A x = b,   l <= x <= u
//! ```
//!
//! The equality block is stored as one dense column block plus sparse
//! columns, which matches the discretized fluid instances (dense CDF
//! coefficients on the appointment-mass variables, unit/bidiagonal entries
//! on the queue and idle variables). With P diagonal the per-iteration KKT
//! system reduces by a Woodbury identity to one Cholesky solve with the
//! m x m equality Gram matrix; the factorization is only redone when the
//! penalty parameter is re-scaled.
//!
//! Features: Ruiz diagonal equilibration, over-relaxation, residual-balancing
//! penalty adaptation on a fixed deterministic schedule, infeasibility
//! certificates, active-set polishing, and warm starts. Everything is
//! sequential and allocation-stable, so identical inputs produce bit-identical
//! outputs.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("problem dimensions inconsistent: {0}")]
    BadProblem(String),
    #[error("objective is not PSD: p[{index}] = {value}")]
    NotPsd { index: usize, value: f64 },
    #[error("max iterations ({iterations}) exceeded: primal residual {primal_residual:.3e}, dual residual {dual_residual:.3e}")]
    MaxIterations {
        iterations: usize,
        primal_residual: f64,
        dual_residual: f64,
        /// (iteration, primal, dual) samples from the run.
        trace: Vec<(usize, f64, f64)>,
    },
    #[error("primal infeasibility certificate found")]
    PrimalInfeasible,
    #[error("dual infeasibility certificate found (objective unbounded below)")]
    DualInfeasible,
}

/// Sparse equality-constraint column: (row, value) pairs.
#[derive(Debug, Clone)]
pub struct SparseCol {
    pub entries: Vec<(usize, f64)>,
}

/// QP data. Variables are ordered dense-block first: columns `0..dense_width`
/// of the equality matrix live in `dense_cols` (column-major, `m` rows per
/// column), the remaining `sparse_cols.len()` variables follow.
#[derive(Debug, Clone)]
pub struct SplitQp {
    pub p_diag: Vec<f64>,
    pub q: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub dense_width: usize,
    pub dense_cols: Vec<f64>,
    pub sparse_cols: Vec<SparseCol>,
    pub b: Vec<f64>,
}

impl SplitQp {
    pub fn num_vars(&self) -> usize {
        self.dense_width + self.sparse_cols.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b.len()
    }

    fn validate(&self) -> Result<(), SolveError> {
        let n = self.num_vars();
        let m = self.num_eq();
        if self.p_diag.len() != n
            || self.q.len() != n
            || self.lower.len() != n
            || self.upper.len() != n
        {
            return Err(SolveError::BadProblem(format!(
                "vector lengths must equal {n} variables"
            )));
        }
        if self.dense_cols.len() != self.dense_width * m {
            return Err(SolveError::BadProblem(format!(
                "dense block must hold {} x {} entries, got {}",
                m,
                self.dense_width,
                self.dense_cols.len()
            )));
        }
        for col in &self.sparse_cols {
            if col.entries.iter().any(|(r, _)| *r >= m) {
                return Err(SolveError::BadProblem("sparse entry row out of range".into()));
            }
        }
        if let Some((index, &value)) =
            self.p_diag.iter().enumerate().find(|(_, &p)| p < 0.0 || !p.is_finite())
        {
            return Err(SolveError::NotPsd { index, value });
        }
        Ok(())
    }

    /// `out += coef * A[:, col_range] x` over all columns.
    fn a_mul(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let m = self.num_eq();
        for c in 0..self.dense_width {
            let xc = x[c];
            if xc != 0.0 {
                let col = &self.dense_cols[c * m..(c + 1) * m];
                for (o, v) in out.iter_mut().zip(col) {
                    *o += v * xc;
                }
            }
        }
        for (c, col) in self.sparse_cols.iter().enumerate() {
            let xc = x[self.dense_width + c];
            if xc != 0.0 {
                for &(r, v) in &col.entries {
                    out[r] += v * xc;
                }
            }
        }
    }

    /// `out[c] += coef * A'[c, :] v`.
    fn at_mul_add(&self, v: &[f64], coef: f64, out: &mut [f64]) {
        let m = self.num_eq();
        for c in 0..self.dense_width {
            let col = &self.dense_cols[c * m..(c + 1) * m];
            let dot: f64 = col.iter().zip(v).map(|(a, b)| a * b).sum();
            out[c] += coef * dot;
        }
        for (c, col) in self.sparse_cols.iter().enumerate() {
            let dot: f64 = col.entries.iter().map(|&(r, val)| val * v[r]).sum();
            out[self.dense_width + c] += coef * dot;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iter: usize,
    /// Relaxation factor applied to the KKT solution.
    pub alpha: f64,
    /// Proximal regularization on x.
    pub sigma: f64,
    /// Initial penalty; equality rows use `rho * eq_rho_scale`.
    pub rho: f64,
    pub eq_rho_scale: f64,
    /// Residuals are evaluated every this many iterations.
    pub check_every: usize,
    /// Penalty re-balancing happens every this many iterations...
    pub rho_adapt_every: usize,
    /// ...but only up to this iteration; the tail runs on a frozen penalty.
    pub rho_adapt_until: usize,
    pub ruiz_iters: usize,
    pub polish: bool,
    pub polish_delta: f64,
    /// Residual level at which polishing is first attempted.
    pub polish_trigger: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_primal: 1e-8,
            tol_dual: 1e-8,
            max_iter: 200_000,
            alpha: 1.6,
            sigma: 1e-6,
            rho: 0.1,
            eq_rho_scale: 1e3,
            check_every: 25,
            rho_adapt_every: 50,
            rho_adapt_until: 2000,
            ruiz_iters: 10,
            polish: true,
            polish_delta: 1e-6,
            polish_trigger: 1e-5,
        }
    }
}

/// Solver output in the original (unscaled) data.
#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub y_eq: Vec<f64>,
    pub y_bound: Vec<f64>,
    /// Minimization objective at `x`.
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub polished: bool,
}

#[derive(Debug, Clone)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub y_eq: Vec<f64>,
    pub y_bound: Vec<f64>,
}

struct Scaling {
    d: Vec<f64>,
    e: Vec<f64>,
    cost: f64,
}

/// Modified Ruiz equilibration on the KKT data, following the usual
/// operator-splitting recipe: iteratively normalize the inf-norms of the
/// stacked [P A'; A 0] columns, then normalize the cost.
fn ruiz_scaling(qp: &SplitQp, iters: usize) -> Scaling {
    let n = qp.num_vars();
    let m = qp.num_eq();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut cost = 1.0;

    let col_norms = |d: &[f64], e: &[f64], cost: f64| -> (Vec<f64>, Vec<f64>) {
        let mut vn = vec![0.0f64; n];
        let mut rn = vec![0.0f64; m];
        for c in 0..qp.dense_width {
            let col = &qp.dense_cols[c * m..(c + 1) * m];
            for (r, &v) in col.iter().enumerate() {
                let s = (e[r] * v * d[c]).abs();
                if s > vn[c] {
                    vn[c] = s;
                }
                if s > rn[r] {
                    rn[r] = s;
                }
            }
        }
        for (c, col) in qp.sparse_cols.iter().enumerate() {
            let idx = qp.dense_width + c;
            for &(r, v) in &col.entries {
                let s = (e[r] * v * d[idx]).abs();
                if s > vn[idx] {
                    vn[idx] = s;
                }
                if s > rn[r] {
                    rn[r] = s;
                }
            }
        }
        for v in 0..n {
            let p = (cost * d[v] * d[v] * qp.p_diag[v]).abs();
            if p > vn[v] {
                vn[v] = p;
            }
        }
        (vn, rn)
    };

    for _ in 0..iters {
        let (vn, rn) = col_norms(&d, &e, cost);
        for v in 0..n {
            if vn[v] > 1e-300 {
                d[v] /= vn[v].sqrt();
            }
        }
        for r in 0..m {
            if rn[r] > 1e-300 {
                e[r] /= rn[r].sqrt();
            }
        }
        // cost normalization
        let mut p_mean = 0.0;
        for v in 0..n {
            p_mean += (cost * d[v] * d[v] * qp.p_diag[v]).abs();
        }
        p_mean /= n as f64;
        let q_norm = qp
            .q
            .iter()
            .enumerate()
            .map(|(v, &qv)| (cost * d[v] * qv).abs())
            .fold(0.0f64, f64::max);
        let denom = p_mean.max(q_norm);
        if denom > 1e-300 {
            cost /= denom;
        }
    }
    Scaling { d, e, cost }
}

/// Scaled copy of the problem data plus the scaling itself.
struct ScaledQp {
    qp: SplitQp,
    scaling: Scaling,
}

fn scale_problem(qp: &SplitQp, iters: usize) -> ScaledQp {
    let scaling = ruiz_scaling(qp, iters);
    let n = qp.num_vars();
    let m = qp.num_eq();
    let mut scaled = qp.clone();
    for c in 0..qp.dense_width {
        for r in 0..m {
            scaled.dense_cols[c * m + r] *= scaling.e[r] * scaling.d[c];
        }
    }
    for (c, col) in scaled.sparse_cols.iter_mut().enumerate() {
        let idx = qp.dense_width + c;
        for (r, v) in col.entries.iter_mut() {
            *v *= scaling.e[*r] * scaling.d[idx];
        }
    }
    for v in 0..n {
        scaled.p_diag[v] *= scaling.cost * scaling.d[v] * scaling.d[v];
        scaled.q[v] *= scaling.cost * scaling.d[v];
        scaled.lower[v] = qp.lower[v] / scaling.d[v];
        scaled.upper[v] = qp.upper[v] / scaling.d[v];
    }
    for r in 0..m {
        scaled.b[r] *= scaling.e[r];
    }
    ScaledQp { qp: scaled, scaling }
}

/// Cholesky factor (lower triangular, row-major flat) of an SPD matrix.
struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    fn factor(mut a: Vec<f64>, n: usize) -> Option<Self> {
        for j in 0..n {
            let mut diag = a[j * n + j];
            for k in 0..j {
                let v = a[j * n + k];
                diag -= v * v;
            }
            if diag <= 0.0 || !diag.is_finite() {
                return None;
            }
            let diag = diag.sqrt();
            a[j * n + j] = diag;
            for i in (j + 1)..n {
                let mut v = a[i * n + j];
                let (row_i, row_j) = (i * n, j * n);
                for k in 0..j {
                    v -= a[row_i + k] * a[row_j + k];
                }
                a[i * n + j] = v / diag;
            }
        }
        Some(Self { n, l: a })
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut v = x[i];
            let row = i * n;
            for k in 0..i {
                v -= self.l[row + k] * x[k];
            }
            x[i] = v / self.l[row + i];
        }
        for i in (0..n).rev() {
            let mut v = x[i];
            for k in (i + 1)..n {
                v -= self.l[k * n + i] * x[k];
            }
            x[i] = v / self.l[i * n + i];
        }
    }
}

/// KKT workspace: Gram matrix of the equality rows weighted by the current
/// diagonal, plus its Cholesky factor.
struct KktFactor {
    chol: Cholesky,
}

/// Weighted equality Gram: `(1/rho_eq) I + A diag(1/d) A'`. The dense block
/// reuses a cached unweighted Gram whenever the dense variables share the
/// same diagonal entry (true for the fluid instances, where the mass
/// variables carry no quadratic cost).
struct GramCache {
    /// Unweighted dense-block Gram `B B'` (m x m), if the dense diagonal is uniform.
    uniform_dense: Option<Vec<f64>>,
}

impl GramCache {
    fn build(qp: &SplitQp, d: &[f64]) -> Self {
        let uniform = qp.dense_width > 0
            && d[..qp.dense_width].windows(2).all(|w| w[0] == w[1]);
        if uniform {
            Self { uniform_dense: Some(dense_gram(qp, None)) }
        } else {
            Self { uniform_dense: None }
        }
    }
}

/// `B W B'` over the dense block, `W = diag(weights)` (or identity).
fn dense_gram(qp: &SplitQp, weights: Option<&[f64]>) -> Vec<f64> {
    let m = qp.num_eq();
    let mut g = vec![0.0; m * m];
    for c in 0..qp.dense_width {
        let w = weights.map_or(1.0, |w| w[c]);
        if w == 0.0 {
            continue;
        }
        let col = &qp.dense_cols[c * m..(c + 1) * m];
        // rank-1 update, lower triangle only
        for r in 0..m {
            let vr = col[r] * w;
            if vr == 0.0 {
                continue;
            }
            let row = r * m;
            for (s, &cs) in col.iter().enumerate().take(r + 1) {
                g[row + s] += vr * cs;
            }
        }
    }
    g
}

fn build_kkt(
    qp: &SplitQp,
    d: &[f64],
    rho_eq: f64,
    cache: &GramCache,
) -> Result<KktFactor, SolveError> {
    let m = qp.num_eq();
    let mut s = match &cache.uniform_dense {
        Some(g) if qp.dense_width > 0 => {
            let inv = 1.0 / d[0];
            g.iter().map(|v| v * inv).collect::<Vec<f64>>()
        }
        _ => {
            let weights: Vec<f64> = d[..qp.dense_width].iter().map(|v| 1.0 / v).collect();
            dense_gram(qp, Some(&weights))
        }
    };
    for (c, col) in qp.sparse_cols.iter().enumerate() {
        let inv = 1.0 / d[qp.dense_width + c];
        for &(r1, v1) in &col.entries {
            for &(r2, v2) in &col.entries {
                if r2 <= r1 {
                    s[r1 * m + r2] += v1 * v2 * inv;
                }
            }
        }
    }
    let mut mean_diag = 0.0;
    for r in 0..m {
        s[r * m + r] += 1.0 / rho_eq;
        mean_diag += s[r * m + r];
        // mirror to the upper triangle for the factorization routine
        for c2 in (r + 1)..m {
            s[r * m + c2] = s[c2 * m + r];
        }
    }
    if m > 0 {
        mean_diag /= m as f64;
    }
    // Nearly collinear columns can push the Gram to the edge of positive
    // definiteness; retry with progressively larger diagonal shifts (the
    // callers' refinement loops absorb the perturbation).
    let mut shift = 0.0;
    for attempt in 0..6 {
        if attempt > 0 {
            let extra = mean_diag.max(1e-300) * 1e-14 * 100f64.powi(attempt);
            for r in 0..m {
                s[r * m + r] += extra - shift;
            }
            shift = extra;
        }
        if let Some(chol) = Cholesky::factor(s.clone(), m) {
            return Ok(KktFactor { chol });
        }
    }
    Err(SolveError::BadProblem("KKT Gram matrix is not SPD".into()))
}

/// Residuals measured on the unscaled problem, plus scaled-space residual
/// ratios used for penalty re-balancing.
struct Residuals {
    primal: f64,
    dual: f64,
    /// primal residual over its norm scale, in the scaled problem
    primal_rel_scaled: f64,
    /// dual residual over its norm scale, in the scaled problem
    dual_rel_scaled: f64,
}

fn unscaled_residuals(
    orig: &SplitQp,
    scaled: &ScaledQp,
    x_s: &[f64],
    z_s: &[f64],
    y_eq_s: &[f64],
    y_b_s: &[f64],
    work_m: &mut Vec<f64>,
    work_n: &mut Vec<f64>,
) -> Residuals {
    let n = orig.num_vars();
    let m = orig.num_eq();
    let sc = &scaled.scaling;
    // unscaled iterates
    let x: Vec<f64> = (0..n).map(|v| sc.d[v] * x_s[v]).collect();
    let z: Vec<f64> = (0..n).map(|v| sc.d[v] * z_s[v]).collect();
    let y_eq: Vec<f64> = (0..m).map(|r| sc.e[r] * y_eq_s[r] / sc.cost).collect();
    let y_b: Vec<f64> = (0..n).map(|v| y_b_s[v] / (sc.d[v] * sc.cost)).collect();

    work_m.resize(m, 0.0);
    orig.a_mul(&x, work_m);
    let ax_norm = work_m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let b_norm = orig.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut primal = 0.0f64;
    for r in 0..m {
        primal = primal.max((work_m[r] - orig.b[r]).abs());
    }
    for v in 0..n {
        primal = primal.max((x[v] - z[v]).abs());
    }

    work_n.resize(n, 0.0);
    work_n.fill(0.0);
    orig.at_mul_add(&y_eq, 1.0, work_n);
    let mut dual = 0.0f64;
    for v in 0..n {
        let px = orig.p_diag[v] * x[v];
        dual = dual.max((px + orig.q[v] + y_b[v] + work_n[v]).abs());
    }
    let _ = ax_norm.max(b_norm);

    // scaled-space residuals and norms, for penalty balancing only
    let sqp = &scaled.qp;
    work_m.fill(0.0);
    sqp.a_mul(x_s, work_m);
    let mut rp_s = 0.0f64;
    let mut ax_s = 0.0f64;
    for r in 0..m {
        rp_s = rp_s.max((work_m[r] - sqp.b[r]).abs());
        ax_s = ax_s.max(work_m[r].abs());
    }
    for v in 0..n {
        rp_s = rp_s.max((x_s[v] - z_s[v]).abs());
        ax_s = ax_s.max(x_s[v].abs());
    }
    let b_s = sqp.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    work_n.fill(0.0);
    sqp.at_mul_add(y_eq_s, 1.0, work_n);
    let aty_s = work_n
        .iter()
        .chain(y_b_s.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let mut rd_s = 0.0f64;
    let mut px_s = 0.0f64;
    for v in 0..n {
        let px = sqp.p_diag[v] * x_s[v];
        px_s = px_s.max(px.abs());
        rd_s = rd_s.max((px + sqp.q[v] + y_b_s[v] + work_n[v]).abs());
    }
    let q_s = sqp.q.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    Residuals {
        primal,
        dual,
        primal_rel_scaled: rp_s / ax_s.max(b_s).max(1e-30),
        dual_rel_scaled: rd_s / px_s.max(q_s).max(aty_s).max(1e-30),
    }
}

/// Solve the QP. `warm` provides unscaled starting iterates (e.g. a scaled
/// copy of a related problem's solution).
pub fn solve(
    qp: &SplitQp,
    options: &SolverOptions,
    warm: Option<&WarmStart>,
) -> Result<Solution, SolveError> {
    qp.validate()?;
    let n = qp.num_vars();
    let m = qp.num_eq();
    let scaled = scale_problem(qp, options.ruiz_iters);
    let sqp = &scaled.qp;
    let sc = &scaled.scaling;

    let mut rho = options.rho;
    let sigma = options.sigma;
    let alpha = options.alpha;

    let d_vec = |rho: f64| -> Vec<f64> {
        sqp.p_diag.iter().map(|p| p + sigma + rho).collect()
    };

    let gram = GramCache::build(sqp, &d_vec(rho));
    let mut d = d_vec(rho);
    let mut rho_eq = rho * options.eq_rho_scale;
    let mut kkt = build_kkt(sqp, &d, rho_eq, &gram)?;

    // iterates (scaled space)
    let mut x = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut y_eq = vec![0.0; m];
    let mut y_b = vec![0.0; n];
    if let Some(w) = warm {
        if w.x.len() != n || w.y_eq.len() != m || w.y_bound.len() != n {
            return Err(SolveError::BadProblem("warm start dimensions mismatch".into()));
        }
        for v in 0..n {
            x[v] = w.x[v] / sc.d[v];
            y_b[v] = w.y_bound[v] * sc.d[v] * sc.cost;
            z[v] = x[v].clamp(sqp.lower[v], sqp.upper[v]);
        }
        for r in 0..m {
            y_eq[r] = w.y_eq[r] * sc.cost / sc.e[r];
        }
    } else {
        for v in 0..n {
            z[v] = 0.0f64.clamp(sqp.lower[v], sqp.upper[v]);
            x[v] = z[v];
        }
    }

    let mut w_vec = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut t = vec![0.0; m];
    let mut ax = vec![0.0; m];
    let mut x_tilde = vec![0.0; n];
    let mut z_tilde_eq = vec![0.0; m];
    let mut work_m = Vec::new();
    let mut work_n = Vec::new();
    let mut trace: Vec<(usize, f64, f64)> = Vec::new();
    let mut infeas_strikes = 0usize;
    let mut next_polish_attempt = 4 * options.check_every;
    let mut polish_backoff = 4 * options.check_every;
    let mut prev_x = x.clone();
    let mut prev_y_eq = y_eq.clone();
    let mut prev_y_b = y_b.clone();

    let mut iter = 0usize;
    loop {
        iter += 1;
        // x-update: (diag(d) + rho_eq A'A) x~ = sigma x - q + A'(rho_eq b - y_eq) + rho z - y_b
        for v in 0..n {
            w_vec[v] = sigma * x[v] - sqp.q[v] + rho * z[v] - y_b[v];
        }
        work_m.resize(m, 0.0);
        for r in 0..m {
            work_m[r] = rho_eq * sqp.b[r] - y_eq[r];
        }
        sqp.at_mul_add(&work_m, 1.0, &mut w_vec);
        for v in 0..n {
            u[v] = w_vec[v] / d[v];
        }
        sqp.a_mul(&u, &mut ax);
        t.copy_from_slice(&ax);
        kkt.chol.solve_in_place(&mut t);
        // x~ = u - diag(1/d) A' t  (Woodbury)
        x_tilde.fill(0.0);
        sqp.at_mul_add(&t, 1.0, &mut x_tilde);
        for v in 0..n {
            x_tilde[v] = u[v] - x_tilde[v] / d[v];
        }
        sqp.a_mul(&x_tilde, &mut z_tilde_eq);

        // over-relaxed updates
        for r in 0..m {
            y_eq[r] += rho_eq * alpha * (z_tilde_eq[r] - sqp.b[r]);
        }
        let mut nan_guard = 0.0f64;
        for v in 0..n {
            let xv = alpha * x_tilde[v] + (1.0 - alpha) * x[v];
            x[v] = xv;
            let z_pre = alpha * x_tilde[v] + (1.0 - alpha) * z[v] + y_b[v] / rho;
            let z_new = z_pre.clamp(sqp.lower[v], sqp.upper[v]);
            y_b[v] += rho * (alpha * x_tilde[v] + (1.0 - alpha) * z[v] - z_new);
            z[v] = z_new;
            nan_guard += xv;
        }
        if nan_guard.is_nan() {
            return Err(SolveError::BadProblem("iterates diverged to NaN".into()));
        }

        let checking = iter % options.check_every == 0 || iter == options.max_iter;
        if checking {
            // infeasibility certificates from the drift since the last check
            match certificate(qp, &scaled, &x, &y_eq, &y_b, &prev_x, &prev_y_eq, &prev_y_b) {
                Certificate::Primal => {
                    infeas_strikes += 1;
                    if infeas_strikes >= 2 {
                        return Err(SolveError::PrimalInfeasible);
                    }
                }
                Certificate::Dual => {
                    infeas_strikes += 1;
                    if infeas_strikes >= 2 {
                        return Err(SolveError::DualInfeasible);
                    }
                }
                Certificate::None => infeas_strikes = 0,
            }
            prev_x.copy_from_slice(&x);
            prev_y_eq.copy_from_slice(&y_eq);
            prev_y_b.copy_from_slice(&y_b);
            let res =
                unscaled_residuals(qp, &scaled, &x, &z, &y_eq, &y_b, &mut work_m, &mut work_n);
            trace.push((iter, res.primal, res.dual));

            let converged = res.primal <= options.tol_primal && res.dual <= options.tol_dual;
            // Polish is attempted long before ADMM converges: a correct
            // active-set guess yields an exact KKT solve whose residuals are
            // verified independently, and failed guesses back off.
            let polishable = options.polish
                && !converged
                && iter >= next_polish_attempt
                && res.primal_rel_scaled <= options.polish_trigger
                && res.dual_rel_scaled <= 1e3 * options.polish_trigger;
            if converged || polishable {
                if options.polish {
                    if std::env::var_os("FLUIDSCHED_POLISH_DEBUG").is_some() {
                        eprintln!(
                            "polish attempt at iter {iter}: rp {:.3e} rd {:.3e}",
                            res.primal, res.dual
                        );
                    }
                    if let Some(sol) = try_polish(qp, &scaled, &z, &y_b, options, iter) {
                        return Ok(sol);
                    }
                    polish_backoff = (polish_backoff * 2).min(4000);
                    next_polish_attempt = iter + polish_backoff;
                }
                if converged {
                    return Ok(finish(qp, &scaled, &x, &y_eq, &y_b, res, iter, false));
                }
            }

            if iter >= options.max_iter {
                return Err(SolveError::MaxIterations {
                    iterations: iter,
                    primal_residual: res.primal,
                    dual_residual: res.dual,
                    trace,
                });
            }

            // deterministic residual-balancing schedule, active only during
            // the opening iterations: late re-scalings destabilize the tail,
            // which belongs to the active-set polish anyway
            if iter % options.rho_adapt_every == 0 && iter <= options.rho_adapt_until {
                let ratio = (res.primal_rel_scaled / res.dual_rel_scaled.max(1e-30)).sqrt();
                let wanted = (rho * ratio).clamp(1e-6, 1e6);
                if wanted > 5.0 * rho || wanted < rho / 5.0 {
                    rho = wanted;
                    rho_eq = rho * options.eq_rho_scale;
                    d = d_vec(rho);
                    kkt = build_kkt(sqp, &d, rho_eq, &gram)?;
                }
            }
        }
    }
}

enum Certificate {
    None,
    Primal,
    Dual,
}

/// Standard operator-splitting infeasibility certificates evaluated on the
/// unscaled dual/primal drift between two residual checks. Thresholds are
/// strict (1e-9 relative) so feasible instances never trip them.
fn certificate(
    orig: &SplitQp,
    scaled: &ScaledQp,
    x_s: &[f64],
    y_eq_s: &[f64],
    y_b_s: &[f64],
    prev_x: &[f64],
    prev_y_eq: &[f64],
    prev_y_b: &[f64],
) -> Certificate {
    const EPS: f64 = 1e-9;
    let sc = &scaled.scaling;
    let n = orig.num_vars();
    let m = orig.num_eq();

    // primal infeasibility: a dual direction with A' dy = 0 and support < 0
    let dy_eq: Vec<f64> =
        (0..m).map(|r| sc.e[r] * (y_eq_s[r] - prev_y_eq[r]) / sc.cost).collect();
    let dy_b: Vec<f64> =
        (0..n).map(|v| (y_b_s[v] - prev_y_b[v]) / (sc.d[v] * sc.cost)).collect();
    let dy_norm = dy_eq
        .iter()
        .chain(dy_b.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    if dy_norm > 1e-15 {
        let mut aty = vec![0.0; n];
        orig.at_mul_add(&dy_eq, 1.0, &mut aty);
        let stationary = (0..n)
            .map(|v| (aty[v] + dy_b[v]).abs())
            .fold(0.0f64, f64::max);
        let mut support: f64 = orig.b.iter().zip(&dy_eq).map(|(b, dy)| b * dy).sum();
        let mut unbounded_support = false;
        for v in 0..n {
            if dy_b[v] > 0.0 {
                if orig.upper[v].is_finite() {
                    support += orig.upper[v] * dy_b[v];
                } else if dy_b[v] > EPS * dy_norm {
                    unbounded_support = true;
                }
            } else if dy_b[v] < 0.0 {
                if orig.lower[v].is_finite() {
                    support += orig.lower[v] * dy_b[v];
                } else if -dy_b[v] > EPS * dy_norm {
                    unbounded_support = true;
                }
            }
        }
        if !unbounded_support && stationary <= EPS * dy_norm && support < -EPS * dy_norm {
            return Certificate::Primal;
        }
    }

    // dual infeasibility: a primal ray that keeps constraints and strictly
    // decreases the objective
    let dx: Vec<f64> = (0..n).map(|v| sc.d[v] * (x_s[v] - prev_x[v])).collect();
    let dx_norm = dx.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if dx_norm > 1e-15 {
        let pdx = (0..n)
            .map(|v| (orig.p_diag[v] * dx[v]).abs())
            .fold(0.0f64, f64::max);
        let qdx: f64 = orig.q.iter().zip(&dx).map(|(q, d)| q * d).sum();
        let mut adx = vec![0.0; m];
        orig.a_mul(&dx, &mut adx);
        let adx_norm = adx.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut in_recession = true;
        for v in 0..n {
            if dx[v] > EPS * dx_norm && orig.upper[v].is_finite() {
                in_recession = false;
            }
            if dx[v] < -EPS * dx_norm && orig.lower[v].is_finite() {
                in_recession = false;
            }
        }
        if in_recession
            && pdx <= EPS * dx_norm
            && adx_norm <= EPS * dx_norm
            && qdx < -EPS * dx_norm
        {
            return Certificate::Dual;
        }
    }
    Certificate::None
}

fn finish(
    orig: &SplitQp,
    scaled: &ScaledQp,
    x_s: &[f64],
    y_eq_s: &[f64],
    y_b_s: &[f64],
    res: Residuals,
    iterations: usize,
    polished: bool,
) -> Solution {
    let sc = &scaled.scaling;
    let n = orig.num_vars();
    let m = orig.num_eq();
    let x: Vec<f64> = (0..n).map(|v| sc.d[v] * x_s[v]).collect();
    let y_eq: Vec<f64> = (0..m).map(|r| sc.e[r] * y_eq_s[r] / sc.cost).collect();
    let y_bound: Vec<f64> = (0..n).map(|v| y_b_s[v] / (sc.d[v] * sc.cost)).collect();
    let objective = 0.5
        * x.iter()
            .zip(&orig.p_diag)
            .map(|(xv, p)| p * xv * xv)
            .sum::<f64>()
        + orig.q.iter().zip(&x).map(|(q, xv)| q * xv).sum::<f64>();
    Solution {
        x,
        y_eq,
        y_bound,
        objective,
        primal_residual: res.primal,
        dual_residual: res.dual,
        iterations,
        polished,
    }
}

/// Active-set polish: pin variables whose bound multiplier (or iterate)
/// says the bound is active, solve the remaining equality-constrained QP
/// through the same Woodbury reduction with a small Tikhonov term plus
/// iterative refinement, and accept only if the result certifies better
/// residuals than the ADMM iterate.
fn try_polish(
    orig: &SplitQp,
    scaled: &ScaledQp,
    z_s: &[f64],
    y_b_s: &[f64],
    options: &SolverOptions,
    iterations: usize,
) -> Option<Solution> {
    let sqp = &scaled.qp;
    let n = orig.num_vars();
    let m = orig.num_eq();
    let delta = options.polish_delta;
    let debug = std::env::var_os("FLUIDSCHED_POLISH_DEBUG").is_some();

    #[derive(Clone, Copy, PartialEq)]
    enum Pin {
        Free,
        Lower,
        Upper,
    }

    // Initial guess: a bound counts as active when the projected splitting
    // variable is actually clamped onto it, or its multiplier is decisively
    // signed. The guess is then refined active-set style: free variables
    // driven past a bound get pinned, pinned variables with a wrong-signed
    // multiplier get released, one round at a time.
    let sc = &scaled.scaling;
    let y_un: Vec<f64> = (0..n).map(|v| y_b_s[v] / (sc.d[v] * sc.cost)).collect();
    let y_scale = 1.0 + y_un.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut pin = vec![Pin::Free; n];
    // variables released twice stay free: release/pin-back cycles on
    // degenerate faces otherwise never settle
    let mut release_count = vec![0u8; n];
    for v in 0..n {
        let lo = sqp.lower[v];
        let hi = sqp.upper[v];
        if lo.is_finite() && (z_s[v] <= lo || y_un[v] < -1e-3 * y_scale) {
            pin[v] = Pin::Lower;
        } else if hi.is_finite() && (z_s[v] >= hi || y_un[v] > 1e-3 * y_scale) {
            pin[v] = Pin::Upper;
        }
    }

    let mut x_cand = vec![0.0; n];
    let mut nu = vec![0.0; m];
    let mut y_b_cand = vec![0.0; n];
    let mut accepted = false;
    for _round in 0..60 {
        // row-coverage guard: every equality row keeps at least one strong
        // free column, otherwise the face system loses row rank
        {
            let mut row_max = vec![0.0f64; m];
            let mut covered = vec![false; m];
            let mut best_pinned: Vec<(f64, usize)> = vec![(0.0, usize::MAX); m];
            let mut scan = |v: usize, r: usize, a: f64| {
                let mag = a.abs();
                if mag > row_max[r] {
                    row_max[r] = mag;
                }
                if pin[v] == Pin::Free {
                    if mag >= 0.5 * row_max[r] {
                        covered[r] = true;
                    }
                } else if mag > best_pinned[r].0 {
                    best_pinned[r] = (mag, v);
                }
            };
            for c in 0..sqp.dense_width {
                let col = &sqp.dense_cols[c * m..(c + 1) * m];
                for (r, &a) in col.iter().enumerate() {
                    if a != 0.0 {
                        scan(c, r, a);
                    }
                }
            }
            for (c, col) in sqp.sparse_cols.iter().enumerate() {
                for &(r, a) in &col.entries {
                    scan(sqp.dense_width + c, r, a);
                }
            }
            // second pass: "covered" needs the final row_max
            let mut covered_final = vec![false; m];
            let mut mark = |v: usize, r: usize, a: f64| {
                if pin[v] == Pin::Free && a.abs() >= 0.5 * row_max[r] {
                    covered_final[r] = true;
                }
            };
            for c in 0..sqp.dense_width {
                let col = &sqp.dense_cols[c * m..(c + 1) * m];
                for (r, &a) in col.iter().enumerate() {
                    if a != 0.0 {
                        mark(c, r, a);
                    }
                }
            }
            for (c, col) in sqp.sparse_cols.iter().enumerate() {
                for &(r, a) in &col.entries {
                    mark(sqp.dense_width + c, r, a);
                }
            }
            let _ = covered;
            for r in 0..m {
                if !covered_final[r] && best_pinned[r].1 != usize::MAX {
                    pin[best_pinned[r].1] = Pin::Free;
                }
            }
        }

        // fix pinned variables at their bounds
        let mut x_pinned = vec![0.0; n];
        for v in 0..n {
            x_pinned[v] = match pin[v] {
                Pin::Lower => sqp.lower[v],
                Pin::Upper => sqp.upper[v],
                Pin::Free => 0.0,
            };
        }
        let mut b_eff = vec![0.0; m];
        sqp.a_mul(&x_pinned, &mut b_eff);
        for r in 0..m {
            b_eff[r] = sqp.b[r] - b_eff[r];
        }

        // masked problem: zero out pinned columns
        let mut masked = sqp.clone();
        for c in 0..masked.dense_width {
            if pin[c] != Pin::Free {
                masked.dense_cols[c * m..(c + 1) * m].fill(0.0);
            }
        }
        for (c, col) in masked.sparse_cols.iter_mut().enumerate() {
            if pin[masked.dense_width + c] != Pin::Free {
                col.entries.clear();
            }
        }

        let d: Vec<f64> = (0..n)
            .map(|v| if pin[v] == Pin::Free { sqp.p_diag[v] + delta } else { 1.0 })
            .collect();
        let gram = GramCache { uniform_dense: None };
        let kkt = build_kkt(&masked, &d, 1.0 / delta, &gram).ok()?;

        // Solve [diag(p)+dI, A_F'; A_F, -dI][x; nu] = [-q_F; b_eff] by
        // elimination, refining against the unregularized KKT.
        let mut x_f = vec![0.0; n];
        nu.fill(0.0);
        let mut rhs_x = vec![0.0; n];
        for v in 0..n {
            rhs_x[v] = if pin[v] == Pin::Free { -sqp.q[v] } else { 0.0 };
        }

        let mut u = vec![0.0; n];
        let mut t = vec![0.0; m];
        let mut au = vec![0.0; m];
        let mut eq_residual = 0.0f64;
        for _refine in 0..4 {
            let mut res_x = rhs_x.clone();
            for v in 0..n {
                if pin[v] == Pin::Free {
                    res_x[v] -= sqp.p_diag[v] * x_f[v];
                } else {
                    res_x[v] = 0.0;
                }
            }
            masked.at_mul_add(&nu, -1.0, &mut res_x);
            for v in 0..n {
                if pin[v] != Pin::Free {
                    res_x[v] = 0.0;
                }
            }
            let mut res_nu = b_eff.clone();
            masked.a_mul(&x_f, &mut au);
            for r in 0..m {
                res_nu[r] -= au[r];
            }
            eq_residual = res_nu.iter().fold(0.0f64, |a, v| a.max(v.abs()));

            // eliminating dx from [diag(d), A'; A, -delta I] gives
            // (delta I + A diag(1/d) A') dnu = A diag(1/d) res_x - res_nu,
            // then dx = diag(1/d)(res_x - A' dnu)
            for v in 0..n {
                u[v] = res_x[v] / d[v];
            }
            masked.a_mul(&u, &mut au);
            for r in 0..m {
                t[r] = au[r] - res_nu[r];
            }
            kkt.chol.solve_in_place(&mut t);
            let mut dx = vec![0.0; n];
            masked.at_mul_add(&t, 1.0, &mut dx);
            for v in 0..n {
                if pin[v] == Pin::Free {
                    x_f[v] += u[v] - dx[v] / d[v];
                }
            }
            for r in 0..m {
                nu[r] += t[r];
            }
        }

        // assemble the candidate and look for bound violations on free vars
        x_cand = x_pinned;
        let mut x_inf = 0.0f64;
        for v in 0..n {
            if pin[v] == Pin::Free {
                x_cand[v] = x_f[v];
                x_inf = x_inf.max(x_f[v].abs());
            }
        }

        // final equality residual of the face solve
        let mut res_nu = b_eff.clone();
        masked.a_mul(&x_f, &mut au);
        for r in 0..m {
            res_nu[r] -= au[r];
        }
        eq_residual = res_nu.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let inconsistent = eq_residual > 1e-7 * (1.0 + x_inf);
        if inconsistent {
            // The pinned face cannot reach the right-hand side. Release the
            // pinned variables that can actually absorb the residual: score
            // each by its overlap with the unsatisfied rows. Multipliers are
            // useless here, they explode on correctly pinned variables too.
            if debug {
                eprintln!("polish: inconsistent face, eq residual {eq_residual:.3e}");
            }
            let mut scores = vec![0.0f64; n];
            for c in 0..sqp.dense_width {
                if pin[c] != Pin::Free {
                    let col = &sqp.dense_cols[c * m..(c + 1) * m];
                    scores[c] = col.iter().zip(&res_nu).map(|(a, r)| (a * r).abs()).sum();
                }
            }
            for (c, col) in sqp.sparse_cols.iter().enumerate() {
                let v = sqp.dense_width + c;
                if pin[v] != Pin::Free {
                    scores[v] = col
                        .entries
                        .iter()
                        .map(|&(r, a)| (a * res_nu[r]).abs())
                        .sum();
                }
            }
            let top = scores.iter().fold(0.0f64, |a, s| a.max(*s));
            if top <= 0.0 {
                if debug {
                    eprintln!("polish reject: inconsistent with no releasable pin");
                }
                return None;
            }
            let cutoff = 0.3 * top;
            let mut released = 0usize;
            for v in 0..n {
                if pin[v] != Pin::Free && scores[v] >= cutoff {
                    pin[v] = Pin::Free;
                    release_count[v] = release_count[v].saturating_add(1);
                    released += 1;
                }
            }
            if debug {
                eprintln!("polish: released {released} residual-adjacent pins");
            }
            continue;
        }

        let viol_tol = 1e-9 * (1.0 + x_inf);
        let mut pinned_any = 0usize;
        for v in 0..n {
            if pin[v] != Pin::Free || release_count[v] >= 2 {
                continue;
            }
            if sqp.lower[v].is_finite() && x_cand[v] < sqp.lower[v] - viol_tol {
                if debug && pinned_any < 4 {
                    eprintln!("polish: pin-back var {v} at {}", x_cand[v]);
                }
                pin[v] = Pin::Lower;
                pinned_any += 1;
            } else if sqp.upper[v].is_finite() && x_cand[v] > sqp.upper[v] + viol_tol {
                pin[v] = Pin::Upper;
                pinned_any += 1;
            }
        }
        if pinned_any > 0 {
            continue;
        }

        // bound multipliers from stationarity; release the worst wrong sign
        // (an inconsistent face always releases something or gives up)
        for v in 0..n {
            y_b_cand[v] = -(sqp.p_diag[v] * x_cand[v] + sqp.q[v]);
        }
        sqp.at_mul_add(&nu, -1.0, &mut y_b_cand);
        let cand_scale = 1e-7 * (1.0 + y_b_cand.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        let mut worst = cand_scale;
        for v in 0..n {
            match pin[v] {
                Pin::Free => y_b_cand[v] = 0.0,
                Pin::Lower => worst = worst.max(y_b_cand[v]),
                Pin::Upper => worst = worst.max(-y_b_cand[v]),
            }
        }
        if worst > cand_scale {
            // bulk-release every pin whose multiplier is decisively wrong;
            // over-released variables get pinned back by later rounds
            let cutoff = (0.25 * worst).max(cand_scale);
            let mut released = 0usize;
            for v in 0..n {
                let wrongness = match pin[v] {
                    Pin::Lower => y_b_cand[v],
                    Pin::Upper => -y_b_cand[v],
                    Pin::Free => continue,
                };
                if wrongness >= cutoff {
                    if debug && released < 4 {
                        eprintln!("polish: release var {v} multiplier {wrongness:.3e}");
                    }
                    pin[v] = Pin::Free;
                    release_count[v] = release_count[v].saturating_add(1);
                    released += 1;
                }
            }
            if debug {
                eprintln!("polish: released {released} pins (worst multiplier {worst:.3e})");
            }
            continue;
        }
        accepted = true;
        break;
    }
    if !accepted {
        if debug {
            eprintln!("polish reject: active-set refinement did not settle");
        }
        return None;
    }

    let mut work_m = Vec::new();
    let mut work_n = Vec::new();
    let res = unscaled_residuals(
        orig, scaled, &x_cand, &x_cand, &nu, &y_b_cand, &mut work_m, &mut work_n,
    );
    if res.primal <= options.tol_primal && res.dual <= options.tol_dual {
        Some(finish(orig, scaled, &x_cand, &nu, &y_b_cand, res, iterations, true))
    } else {
        if debug {
            eprintln!(
                "polish reject: residuals rp {:.3e} rd {:.3e}",
                res.primal, res.dual
            );
        }
        None
    }
}
