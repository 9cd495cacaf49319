//! Entropy-regularized optimal transport.
//!
//! The solver is a log-domain Sinkhorn-Knopp iteration: with the default
//! epsilon = 0.01 and costs in [0,1] the kernel exp(-C/eps) underflows as
//! far as exp(-100), so scaling vectors are kept as log-potentials and all
//! reductions are log-sum-exp. Also provides an exhaustive permutation
//! oracle for small square instances, a clamp-and-rescale feasibility
//! projection, and reverse-mode differentiation through the unrolled
//! iteration sequence.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, Mat};
use crate::scalar::Real;

/// Prescribed row and column sums of a transport plan.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalPair<R> {
    r: Vec<R>,
    c: Vec<R>,
}

impl<R: Real> MarginalPair<R> {
    /// Validates strictly positive entries summing to one on each side.
    pub fn new(r: Vec<R>, c: Vec<R>) -> Result<Self> {
        for (name, side) in [("r", &r), ("c", &c)] {
            if side.is_empty() {
                return Err(Error::Config(format!("marginal {name} is empty")));
            }
            if side.iter().any(|x| *x <= R::zero() || !x.is_finite()) {
                return Err(Error::Config(format!(
                    "marginal {name} must have strictly positive finite entries"
                )));
            }
            let sum: R = side.iter().copied().sum();
            // 1e-9 budget at f64; f32 gets a length-scaled epsilon budget.
            let tol = R::of(1e-9).max(R::epsilon() * R::of(4.0 * side.len() as f64));
            if (sum - R::one()).abs() > tol {
                return Err(Error::Config(format!("marginal {name} sums to {sum}, expected 1")));
            }
        }
        Ok(Self { r, c })
    }

    pub fn uniform(m: usize, n: usize) -> Self {
        Self {
            r: vec![R::one() / R::of(m as f64); m],
            c: vec![R::one() / R::of(n as f64); n],
        }
    }

    pub fn r(&self) -> &[R] {
        &self.r
    }

    pub fn c(&self) -> &[R] {
        &self.c
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.r.len(), self.c.len())
    }
}

/// Where a cost matrix came from; score-derived costs must lie in [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostProvenance {
    FromScores,
    GroundTruth,
}

#[derive(Debug, Clone)]
pub struct CostMatrix<R> {
    pub values: Mat<R>,
    pub provenance: CostProvenance,
}

impl<R: Real> CostMatrix<R> {
    pub fn new(values: Mat<R>, provenance: CostProvenance) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::Config("cost matrix has non-finite entries".into()));
        }
        if provenance == CostProvenance::FromScores {
            let unit = values
                .data()
                .iter()
                .all(|&x| x >= -R::epsilon() && x <= R::one() + R::epsilon());
            if !unit {
                return Err(Error::Config(
                    "score-derived cost entries must lie in [0,1]".into(),
                ));
            }
        }
        Ok(Self { values, provenance })
    }

    /// `C = 1 - S` for a score matrix with entries in [0,1].
    pub fn from_scores(scores: &Mat<R>) -> Result<Self> {
        Self::new(scores.map(|s| R::one() - s), CostProvenance::FromScores)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }
}

/// Nonnegative coupling with (approximately) prescribed marginals.
#[derive(Debug, Clone)]
pub struct TransportPlan<R> {
    pub values: Mat<R>,
    pub marginals: MarginalPair<R>,
}

impl<R: Real> TransportPlan<R> {
    /// Max deviation of row/column sums from the prescribed marginals.
    pub fn marginal_violation(&self) -> R {
        let rs = self.values.row_sums();
        let cs = self.values.col_sums();
        let dr = rs
            .iter()
            .zip(self.marginals.r())
            .map(|(&a, &b)| (a - b).abs())
            .fold(R::zero(), R::max);
        let dc = cs
            .iter()
            .zip(self.marginals.c())
            .map(|(&a, &b)| (a - b).abs())
            .fold(R::zero(), R::max);
        dr.max(dc)
    }
}

/// Solver configuration. Convergence is the infinity-norm marginal
/// violation of the current plan, checked every iteration.
#[derive(Debug, Clone, Copy)]
pub struct OtConfig<R> {
    pub epsilon: R,
    pub tol: R,
    pub max_inner_iter: usize,
}

impl<R: Real> OtConfig<R> {
    pub fn new(epsilon: R, tol: R, max_inner_iter: usize) -> Result<Self> {
        if epsilon <= R::zero() || !epsilon.is_finite() {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if tol <= R::zero() || max_inner_iter == 0 {
            return Err(Error::Config("tol and max_inner_iter must be positive".into()));
        }
        Ok(Self { epsilon, tol, max_inner_iter })
    }

    pub fn with_epsilon(epsilon: R) -> Self {
        Self { epsilon, ..Self::default() }
    }
}

impl<R: Real> Default for OtConfig<R> {
    fn default() -> Self {
        Self { epsilon: R::of(0.01), tol: R::of(1e-6), max_inner_iter: 1000 }
    }
}

/// Log-domain scaling state: `T = exp(log_u_i + log_kernel_ij + log_v_j)`.
#[derive(Debug, Clone)]
pub struct SinkhornState<R> {
    pub log_u: Vec<R>,
    pub log_v: Vec<R>,
    pub log_kernel: Mat<R>,
}

impl<R: Real> SinkhornState<R> {
    pub fn init(cost: &CostMatrix<R>, epsilon: R) -> Self {
        let (m, n) = cost.shape();
        let log_kernel = cost.values.map(|c| -c / epsilon);
        Self { log_u: vec![R::zero(); m], log_v: vec![R::zero(); n], log_kernel }
    }

    pub fn plan_values(&self) -> Mat<R> {
        let (m, n) = self.log_kernel.shape();
        Mat::from_fn(m, n, |i, j| (self.log_u[i] + self.log_kernel[(i, j)] + self.log_v[j]).exp())
    }

    /// One u-then-v log-domain sweep.
    fn sweep(&mut self, m: &MarginalPair<R>) {
        let (rows, cols) = self.log_kernel.shape();
        let mut buf = vec![R::zero(); cols.max(rows)];
        for i in 0..rows {
            let row = self.log_kernel.row(i);
            for j in 0..cols {
                buf[j] = row[j] + self.log_v[j];
            }
            self.log_u[i] = m.r()[i].ln() - log_sum_exp(&buf[..cols]);
        }
        for j in 0..cols {
            for i in 0..rows {
                buf[i] = self.log_kernel[(i, j)] + self.log_u[i];
            }
            self.log_v[j] = m.c()[j].ln() - log_sum_exp(&buf[..rows]);
        }
    }

    /// Runs sweeps until the plan's marginal violation drops to `cfg.tol`.
    /// Returns (iterations run, final violation).
    pub fn run(&mut self, m: &MarginalPair<R>, cfg: &OtConfig<R>) -> Result<(usize, R)> {
        let mut violation = violation_of(&self.plan_values(), m);
        if violation <= cfg.tol {
            return Ok((0, violation));
        }
        for it in 1..=cfg.max_inner_iter {
            self.sweep(m);
            violation = violation_of(&self.plan_values(), m);
            if violation <= cfg.tol {
                return Ok((it, violation));
            }
        }
        Err(Error::NonConvergence {
            iterations: cfg.max_inner_iter,
            violation: violation.to64(),
        })
    }
}

fn violation_of<R: Real>(plan: &Mat<R>, m: &MarginalPair<R>) -> R {
    let dr = plan
        .row_sums()
        .iter()
        .zip(m.r())
        .map(|(&a, &b)| (a - b).abs())
        .fold(R::zero(), R::max);
    let dc = plan
        .col_sums()
        .iter()
        .zip(m.c())
        .map(|(&a, &b)| (a - b).abs())
        .fold(R::zero(), R::max);
    dr.max(dc)
}

#[derive(Debug, Clone)]
pub struct SinkhornSolution<R> {
    pub plan: TransportPlan<R>,
    pub iterations: usize,
    pub violation: R,
}

/// Entropic OT solve. The returned plan satisfies
/// `max(|T 1 - r|_inf, |T^T 1 - c|_inf) <= cfg.tol`; failure to get there
/// within `cfg.max_inner_iter` is reported as [`Error::NonConvergence`]
/// carrying the achieved violation.
///
/// For small epsilon the potentials are warm-started by a short epsilon-
/// scaling schedule. The entropic optimum is unique, so this changes how
/// fast the fixed point is reached, not which plan comes back; the final
/// phase is always plain Sinkhorn at the requested epsilon.
pub fn sinkhorn<R: Real>(
    cost: &CostMatrix<R>,
    m: &MarginalPair<R>,
    cfg: &OtConfig<R>,
) -> Result<SinkhornSolution<R>> {
    check_shapes(cost, m)?;
    let mut state = SinkhornState::init(cost, cfg.epsilon);
    warm_start(&mut state, cost, m, cfg.epsilon);
    let (iterations, violation) = state.run(m, cfg)?;
    let plan = TransportPlan { values: state.plan_values(), marginals: m.clone() };
    Ok(SinkhornSolution { plan, iterations, violation })
}

/// Runs a few loosely-converged solves at decreasing epsilon, carrying the
/// dual potentials `f = eps * log u` across stages.
pub(crate) fn warm_start<R: Real>(
    state: &mut SinkhornState<R>,
    cost: &CostMatrix<R>,
    m: &MarginalPair<R>,
    target_eps: R,
) {
    let start = R::of(0.1);
    if target_eps >= start {
        return;
    }
    let loose = OtConfig { epsilon: R::zero(), tol: R::of(1e-4), max_inner_iter: 500 };
    let mut eps = start;
    let mut prev: Option<R> = None;
    let decade = R::of(10.0);
    loop {
        let mut stage = SinkhornState::init(cost, eps);
        if let Some(p) = prev {
            let scale = p / eps;
            stage.log_u = state.log_u.iter().map(|&x| x * scale).collect();
            stage.log_v = state.log_v.iter().map(|&x| x * scale).collect();
        }
        let _ = stage.run(m, &OtConfig { epsilon: eps, ..loose });
        state.log_u = stage.log_u;
        state.log_v = stage.log_v;
        prev = Some(eps);
        let next = eps / decade;
        if next <= target_eps {
            break;
        }
        eps = next;
    }
    if let Some(p) = prev {
        let scale = p / target_eps;
        for x in &mut state.log_u {
            *x = *x * scale;
        }
        for x in &mut state.log_v {
            *x = *x * scale;
        }
    }
}

fn check_shapes<R: Real>(cost: &CostMatrix<R>, m: &MarginalPair<R>) -> Result<()> {
    if cost.shape() != m.shape() {
        return Err(Error::Shape(format!(
            "cost is {:?} but marginals are {:?}",
            cost.shape(),
            m.shape()
        )));
    }
    Ok(())
}

/// Exhaustive oracle for the unregularized problem on square instances with
/// uniform marginals: returns `(1/N) P*` for a minimum-cost permutation
/// matrix `P*`, found by enumerating all `N!` permutations. A minimizing
/// vertex of the Birkhoff polytope is an exact optimum of the linear
/// program, which makes this a reference for the entropic solver.
pub fn exact_ot_square_uniform<R: Real>(cost: &CostMatrix<R>) -> Result<(TransportPlan<R>, R)> {
    let (m, n) = cost.shape();
    if m != n {
        return Err(Error::Shape(format!("oracle needs a square cost, got {m}x{n}")));
    }
    if n == 0 || n > 8 {
        return Err(Error::Config(format!("oracle enumerates permutations; N must be 1..=8, got {n}")));
    }
    let mut best: Option<(Vec<usize>, R)> = None;
    for perm in (0..n).permutations(n) {
        let cost_sum: R = perm.iter().enumerate().map(|(i, &j)| cost.values[(i, j)]).sum();
        match &best {
            Some((_, c)) if *c <= cost_sum => {}
            _ => best = Some((perm, cost_sum)),
        }
    }
    let (perm, cost_sum) = best.expect("n >= 1");
    let w = R::one() / R::of(n as f64);
    let mut values = Mat::zeros(n, n);
    for (i, &j) in perm.iter().enumerate() {
        values[(i, j)] = w;
    }
    let plan = TransportPlan { values, marginals: MarginalPair::uniform(n, n) };
    Ok((plan, cost_sum * w))
}

/// Clamp-to-zero followed by `rounds` alternating row/column rescaling
/// passes. Keeps the multiplicative structure of the candidate; does not
/// attempt a Euclidean projection. Returns the projected plan and its
/// final marginal violation.
pub fn feasibility_project<R: Real>(
    candidate: &Mat<R>,
    m: &MarginalPair<R>,
    rounds: usize,
) -> Result<(TransportPlan<R>, R)> {
    if candidate.shape() != m.shape() {
        return Err(Error::Shape(format!(
            "candidate is {:?} but marginals are {:?}",
            candidate.shape(),
            m.shape()
        )));
    }
    let (rows, cols) = candidate.shape();
    let mut t = candidate.map(|x| x.max(R::zero()));
    for (i, s) in t.row_sums().iter().enumerate() {
        if *s <= R::zero() {
            return Err(Error::EmptyMarginal { axis: "row", index: i });
        }
    }
    for (j, s) in t.col_sums().iter().enumerate() {
        if *s <= R::zero() {
            return Err(Error::EmptyMarginal { axis: "column", index: j });
        }
    }
    for _ in 0..rounds {
        let rs = t.row_sums();
        for i in 0..rows {
            let scale = m.r()[i] / rs[i];
            for x in t.row_mut(i) {
                *x = *x * scale;
            }
        }
        let cs = t.col_sums();
        for j in 0..cols {
            let scale = m.c()[j] / cs[j];
            for i in 0..rows {
                t[(i, j)] = t[(i, j)] * scale;
            }
        }
    }
    let plan = TransportPlan { values: t, marginals: m.clone() };
    let violation = plan.marginal_violation();
    Ok((plan, violation))
}

/// Linear transport cost `sum_ij T_ij C_ij`.
pub fn transport_cost<R: Real>(plan: &TransportPlan<R>, cost: &CostMatrix<R>) -> Result<R> {
    if plan.values.shape() != cost.shape() {
        return Err(Error::Shape(format!(
            "plan is {:?} but cost is {:?}",
            plan.values.shape(),
            cost.shape()
        )));
    }
    Ok(plan
        .values
        .data()
        .iter()
        .zip(cost.values.data())
        .map(|(&t, &c)| t * c)
        .sum())
}

/// Iterate history of a converged solve, for reverse-mode differentiation
/// of the unrolled iteration sequence.
#[derive(Debug, Clone)]
pub struct SinkhornTrace<R> {
    pub epsilon: R,
    pub log_kernel: Mat<R>,
    /// `log_u_hist[k]` is the potential after the u-update of sweep `k`.
    pub log_u_hist: Vec<Vec<R>>,
    /// `log_v_hist[0]` is the initial potential (zeros); `log_v_hist[k+1]`
    /// follows the v-update of sweep `k`.
    pub log_v_hist: Vec<Vec<R>>,
    pub plan: Mat<R>,
}

/// Like [`sinkhorn`] but records every iterate for [`sinkhorn_vjp`].
pub fn sinkhorn_traced<R: Real>(
    cost: &CostMatrix<R>,
    m: &MarginalPair<R>,
    cfg: &OtConfig<R>,
) -> Result<SinkhornTrace<R>> {
    check_shapes(cost, m)?;
    let mut state = SinkhornState::init(cost, cfg.epsilon);
    let mut log_u_hist = Vec::new();
    let mut log_v_hist = vec![state.log_v.clone()];
    let mut converged = false;
    let mut violation = R::zero();
    for _ in 0..cfg.max_inner_iter {
        state.sweep(m);
        log_u_hist.push(state.log_u.clone());
        log_v_hist.push(state.log_v.clone());
        violation = violation_of(&state.plan_values(), m);
        if violation <= cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: cfg.max_inner_iter,
            violation: violation.to64(),
        });
    }
    let plan = state.plan_values();
    Ok(SinkhornTrace {
        epsilon: cfg.epsilon,
        log_kernel: state.log_kernel,
        log_u_hist,
        log_v_hist,
        plan,
    })
}

/// Pulls a gradient w.r.t. the plan back to a gradient w.r.t. the cost by
/// replaying the recorded sweeps in reverse. Each log-sum-exp reduction
/// contributes its softmax weights as the local Jacobian.
pub fn sinkhorn_vjp<R: Real>(trace: &SinkhornTrace<R>, grad_plan: &Mat<R>) -> Mat<R> {
    let (rows, cols) = trace.log_kernel.shape();
    assert_eq!(grad_plan.shape(), (rows, cols), "gradient shape");

    // d/d(log T) = d/dT * T, then log T = log_u_i + log_kernel_ij + log_v_j.
    let g_log_t = Mat::from_fn(rows, cols, |i, j| grad_plan[(i, j)] * trace.plan[(i, j)]);
    let mut g_log_k = g_log_t.clone();
    let mut u_bar: Vec<R> = g_log_t.row_sums();
    let mut v_bar: Vec<R> = g_log_t.col_sums();

    let sweeps = trace.log_u_hist.len();
    let mut buf = vec![R::zero(); rows.max(cols)];
    for k in (0..sweeps).rev() {
        // Reverse the v-update: log_v[j] = log c_j - LSE_i(log_k_ij + log_u_i).
        let lu = &trace.log_u_hist[k];
        for j in 0..cols {
            if v_bar[j] == R::zero() {
                continue;
            }
            for i in 0..rows {
                buf[i] = trace.log_kernel[(i, j)] + lu[i];
            }
            let lse = log_sum_exp(&buf[..rows]);
            for i in 0..rows {
                let a = (buf[i] - lse).exp();
                let contrib = v_bar[j] * a;
                g_log_k[(i, j)] = g_log_k[(i, j)] - contrib;
                u_bar[i] = u_bar[i] - contrib;
            }
        }
        // Reverse the u-update: log_u[i] = log r_i - LSE_j(log_k_ij + log_v_j),
        // where log_v is the value entering this sweep.
        let lv = &trace.log_v_hist[k];
        let mut next_v_bar = vec![R::zero(); cols];
        for i in 0..rows {
            if u_bar[i] == R::zero() {
                continue;
            }
            let row = trace.log_kernel.row(i);
            for j in 0..cols {
                buf[j] = row[j] + lv[j];
            }
            let lse = log_sum_exp(&buf[..cols]);
            for j in 0..cols {
                let b = (buf[j] - lse).exp();
                let contrib = u_bar[i] * b;
                g_log_k[(i, j)] = g_log_k[(i, j)] - contrib;
                next_v_bar[j] = next_v_bar[j] - contrib;
            }
        }
        v_bar = next_v_bar;
        u_bar = vec![R::zero(); rows];
    }

    // log_kernel = -C / epsilon.
    let inv = -(R::one() / trace.epsilon);
    g_log_k.map(|g| g * inv)
}
