//! Entropic optimal transport between subgraphs.
//!
//! A single log-domain Sinkhorn solve on the node cost matrix yields the plan
//! `T`; the Wasserstein term is `<T, C>` and the Gromov-Wasserstein term
//! re-uses the same `T` against the two intra-subgraph distance matrices.

use crate::error::{GscError, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Knobs for [`sinkhorn`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornOptions {
    /// Entropic regularization weight.
    pub beta: f64,
    pub max_iters: usize,
    /// Stop once the largest marginal violation falls below this.
    pub tol: f64,
    /// Plain Sinkhorn sweeps before the remaining budget switches to Newton
    /// steps on the same dual potentials. `usize::MAX` disables the switch.
    pub newton_after: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions { beta: 0.05, max_iters: 500, tol: 1e-6, newton_after: 100 }
    }
}

/// How gradients treat the transport plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanGradient {
    /// Backpropagate through every Sinkhorn iteration.
    Unrolled,
    /// Treat the plan as a constant.
    Fixed,
}

#[derive(Clone, Debug)]
pub struct TransportPlan {
    /// `n x m` coupling.
    pub plan: Tensor,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Sinkhorn sweeps plus Newton steps.
    pub iterations: usize,
    pub newton_steps: usize,
    pub converged: bool,
    /// Max absolute marginal violation of the returned plan.
    pub violation: f64,
    /// Violation after each iteration.
    pub history: Vec<f64>,
}

/// Dual potentials after every iteration, kept for the backward pass.
#[derive(Debug, Default)]
pub(crate) struct SinkhornTrace {
    f: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    log_u: Vec<f64>,
    log_v: Vec<f64>,
    beta: f64,
    /// The solve finished with Newton steps; the plan is differentiated as
    /// the exact fixed point instead of through the recorded sweeps.
    implicit: bool,
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn check_marginal(name: &str, w: &[f64]) -> Result<()> {
    if w.is_empty() || w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(GscError::contract(format!("marginal {name} must be positive and finite")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(GscError::contract(format!("marginal {name} sums to {s}, expected 1")));
    }
    Ok(())
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Entropic OT plan between `u` and `v` under `cost`.
///
/// Minimizes `<T, C> + beta * sum T log T` with log-domain updates. The
/// result carries `converged = false` when `max_iters` ran out first.
pub fn sinkhorn(cost: &Tensor, u: &[f64], v: &[f64], opts: &SinkhornOptions) -> Result<TransportPlan> {
    sinkhorn_traced(cost, u, v, opts, false).map(|(p, _)| p)
}

pub(crate) fn sinkhorn_traced(
    cost: &Tensor,
    u: &[f64],
    v: &[f64],
    opts: &SinkhornOptions,
    keep_history: bool,
) -> Result<(TransportPlan, SinkhornTrace)> {
    let (n, m) = cost.dims2();
    if u.len() != n || v.len() != m {
        return Err(GscError::dim("sinkhorn", format!("cost {n}x{m} with marginals {} and {}", u.len(), v.len())));
    }
    if !(opts.beta > 0.0) {
        return Err(GscError::contract(format!("sinkhorn beta must be positive, got {}", opts.beta)));
    }
    if !cost.is_finite() {
        return Err(GscError::contract("sinkhorn cost has non-finite entries"));
    }
    check_marginal("u", u)?;
    check_marginal("v", v)?;

    let beta = opts.beta;
    let c = cost.data();
    let log_u: Vec<f64> = u.iter().map(|x| x.ln()).collect();
    let log_v: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut trace = SinkhornTrace { log_u: log_u.clone(), log_v: log_v.clone(), beta, ..Default::default() };

    // row_lse[i] = LSE_j (g_j - C_ij) / beta for the current g
    let row_lse = |g: &[f64]| -> Vec<f64> {
        (0..n).map(|i| logsumexp((0..m).map(|j| (g[j] - c[i * m + j]) / beta))).collect::<Vec<_>>()
    };
    let mut lse = row_lse(&g);
    let mut history = Vec::new();
    let mut converged = false;
    let mut violation = f64::INFINITY;
    let mut iterations = 0;
    let mut newton_steps = 0;

    while iterations < opts.max_iters {
        iterations += 1;
        let refine = iterations > opts.newton_after;
        if refine && newton_step(c, u, v, beta, &mut f, &mut g) {
            newton_steps += 1;
            trace.implicit = true;
            lse = row_lse(&g);
            violation = marginal_violation(c, u, v, beta, &f, &g);
        } else {
            for i in 0..n {
                f[i] = beta * (log_u[i] - lse[i]);
            }
            for j in 0..m {
                let l = logsumexp((0..n).map(|i| (f[i] - c[i * m + j]) / beta));
                g[j] = beta * (log_v[j] - l);
            }
            if keep_history && !trace.implicit {
                trace.f.push(f.clone());
                trace.g.push(g.clone());
            }
            // columns are exact after the g update; rows carry the violation
            lse = row_lse(&g);
            violation = (0..n).map(|i| ((f[i] / beta + lse[i]).exp() - u[i]).abs()).fold(0.0, f64::max);
        }
        history.push(violation);
        if violation < opts.tol {
            converged = true;
            break;
        }
    }
    if trace.implicit {
        trace.f.clear();
        trace.g.clear();
    }

    let plan = TransportPlan {
        plan: Tensor::matrix(n, m, gibbs(c, beta, &f, &g))?,
        u: u.to_vec(),
        v: v.to_vec(),
        iterations,
        newton_steps,
        converged,
        violation,
        history,
    };
    Ok((plan, trace))
}

/// `exp((f_i + g_j - C_ij) / beta)`, row-major.
fn gibbs(c: &[f64], beta: f64, f: &[f64], g: &[f64]) -> Vec<f64> {
    let m = g.len();
    let mut p = vec![0.0; f.len() * m];
    for (i, fi) in f.iter().enumerate() {
        for (j, gj) in g.iter().enumerate() {
            p[i * m + j] = ((fi + gj - c[i * m + j]) / beta).exp();
        }
    }
    p
}

fn marginal_sums(p: &[f64], n: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rows = vec![0.0; n];
    let mut cols = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            rows[i] += p[i * m + j];
            cols[j] += p[i * m + j];
        }
    }
    (rows, cols)
}

fn marginal_violation(c: &[f64], u: &[f64], v: &[f64], beta: f64, f: &[f64], g: &[f64]) -> f64 {
    let (rows, cols) = marginal_sums(&gibbs(c, beta, f, g), u.len(), v.len());
    rows.iter().zip(u).chain(cols.iter().zip(v)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Solves `H [x; y] = [r; s]` for the marginal Hessian
/// `H = [[diag(P 1), P], [P^T, diag(P^T 1)]]`.
///
/// `H` has the null vector `(1, -1)`; pinning `y_m = 0` leaves a positive
/// definite system, and every caller only uses `x_i + y_j`.
fn solve_marginal_system(p: &[f64], n: usize, m: usize, r: &[f64], s: &[f64]) -> Option<Vec<f64>> {
    let (rows, cols) = marginal_sums(p, n, m);
    let d = n + m - 1;
    let mut h = nalgebra::DMatrix::<f64>::zeros(d, d);
    for i in 0..n {
        h[(i, i)] = rows[i];
        for j in 0..m - 1 {
            h[(i, n + j)] = p[i * m + j];
            h[(n + j, i)] = p[i * m + j];
        }
    }
    for j in 0..m - 1 {
        h[(n + j, n + j)] = cols[j];
    }
    let rhs = nalgebra::DVector::from_iterator(d, r.iter().chain(&s[..m - 1]).copied());
    // a ridge keeps rows whose mass underflowed solvable
    let ridge = 1e-12 * (0..d).map(|k| h[(k, k)]).fold(f64::MIN_POSITIVE, f64::max);
    for k in 0..d {
        h[(k, k)] += ridge;
    }
    let sol = h.cholesky()?.solve(&rhs);
    let mut out: Vec<f64> = sol.iter().copied().collect();
    out.push(0.0);
    Some(out)
}

/// One damped Newton step on the entropic dual
/// `u.f + v.g - beta sum exp((f_i + g_j - C_ij) / beta)`.
/// Returns `false` when no ascent step was found.
fn newton_step(c: &[f64], u: &[f64], v: &[f64], beta: f64, f: &mut [f64], g: &mut [f64]) -> bool {
    let (n, m) = (u.len(), v.len());
    let dual = |f: &[f64], g: &[f64]| -> f64 {
        let mass: f64 = gibbs(c, beta, f, g).iter().sum();
        u.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() + v.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
            - beta * mass
    };
    let p = gibbs(c, beta, f, g);
    let (rows, cols) = marginal_sums(&p, n, m);
    let r: Vec<f64> = u.iter().zip(&rows).map(|(a, b)| a - b).collect();
    let s: Vec<f64> = v.iter().zip(&cols).map(|(a, b)| a - b).collect();
    let Some(dir) = solve_marginal_system(&p, n, m, &r, &s) else {
        return false;
    };
    let base = dual(f, g);
    let mut t = 1.0;
    while t > 1e-10 {
        let fn_: Vec<f64> = f.iter().zip(&dir[..n]).map(|(a, d)| a + t * beta * d).collect();
        let gn: Vec<f64> = g.iter().zip(&dir[n..]).map(|(a, d)| a + t * beta * d).collect();
        if dual(&fn_, &gn) >= base {
            f.copy_from_slice(&fn_);
            g.copy_from_slice(&gn);
            return true;
        }
        t *= 0.5;
    }
    false
}

/// Gradient with respect to the cost of the exact entropic plan, by implicit
/// differentiation of the marginal constraints:
/// `dL/dC_ij = P_ij (x_i + y_j - G_ij) / beta` with `H [x; y] = [(G o P) 1; (G o P)^T 1]`.
fn sinkhorn_implicit_vjp(plan: &Tensor, beta: f64, gt: &[f64]) -> Vec<f64> {
    let (n, m) = plan.dims2();
    let p = plan.data();
    let gp: Vec<f64> = gt.iter().zip(p).map(|(a, b)| a * b).collect();
    let (r, s) = marginal_sums(&gp, n, m);
    let Some(xy) = solve_marginal_system(p, n, m, &r, &s) else {
        return vec![0.0; n * m];
    };
    let mut gc = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            gc[i * m + j] = p[i * m + j] * (xy[i] + xy[n + j] - gt[i * m + j]) / beta;
        }
    }
    gc
}

/// Vector-Jacobian product of the unrolled solve: gradient with respect to
/// the cost given the gradient `gt` with respect to the returned plan.
pub(crate) fn sinkhorn_vjp(cost: &Tensor, trace: &SinkhornTrace, plan: &Tensor, gt: &[f64]) -> Vec<f64> {
    if trace.implicit {
        return sinkhorn_implicit_vjp(plan, trace.beta, gt);
    }
    let (n, m) = cost.dims2();
    let c = cost.data();
    let beta = trace.beta;
    let t = plan.data();
    let mut gc = vec![0.0; n * m];
    let mut gf = vec![0.0; n];
    let mut gg = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            let w = gt[i * m + j] * t[i * m + j] / beta;
            gc[i * m + j] -= w;
            gf[i] += w;
            gg[j] += w;
        }
    }
    let zero = vec![0.0; m];
    for k in (0..trace.f.len()).rev() {
        let (f, g) = (&trace.f[k], &trace.g[k]);
        let g_prev = if k == 0 { &zero } else { &trace.g[k - 1] };
        // g_j = beta log v_j - beta LSE_i (f_i - C_ij)/beta
        for i in 0..n {
            for j in 0..m {
                let p = ((f[i] + g[j] - c[i * m + j]) / beta - trace.log_v[j]).exp();
                gf[i] -= gg[j] * p;
                gc[i * m + j] += gg[j] * p;
            }
        }
        // f_i = beta log u_i - beta LSE_j (g_prev_j - C_ij)/beta
        let mut next = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                let q = ((f[i] + g_prev[j] - c[i * m + j]) / beta - trace.log_u[i]).exp();
                next[j] -= gf[i] * q;
                gc[i * m + j] += gf[i] * q;
            }
        }
        gg = next;
        gf.iter_mut().for_each(|x| *x = 0.0);
    }
    gc
}

fn check_gw(c1: &Tensor, c2: &Tensor, plan: &Tensor) -> Result<(usize, usize)> {
    let (n, m) = plan.dims2();
    if c1.dims2() != (n, n) || c2.dims2() != (m, m) {
        return Err(GscError::contract(format!(
            "gromov_wasserstein: plan {n}x{m} against intra matrices {:?} and {:?}",
            c1.shape(),
            c2.shape()
        )));
    }
    Ok((n, m))
}

/// `(K t)_{ij} = sum_{i'j'} |c1(i,i') - c2(j,j')| T_{i'j'}`.
fn gw_kernel_apply(c1: &[f64], c2: &[f64], t: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for ip in 0..n {
            let a = c1[i * n + ip];
            let trow = &t[ip * m..(ip + 1) * m];
            for j in 0..m {
                let crow = &c2[j * m..(j + 1) * m];
                let s: f64 = crow.iter().zip(trow).map(|(b, tv)| (a - b).abs() * tv).sum();
                out[i * m + j] += s;
            }
        }
    }
    out
}

/// Gromov-Wasserstein discrepancy under a fixed plan, evaluated as the
/// quadratic form `vec(T)^T K vec(T)` with `K_{(ij),(i'j')} = |c1(i,i') - c2(j,j')|`.
pub fn gromov_wasserstein(c1: &Tensor, c2: &Tensor, plan: &Tensor) -> Result<f64> {
    let (n, m) = check_gw(c1, c2, plan)?;
    let kt = gw_kernel_apply(c1.data(), c2.data(), plan.data(), n, m);
    Ok(plan.data().iter().zip(&kt).map(|(t, k)| t * k).sum())
}

pub(crate) struct GromovVjp {
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub plan: Vec<f64>,
}

pub(crate) fn gromov_vjp(c1: &Tensor, c2: &Tensor, plan: &Tensor) -> GromovVjp {
    let (n, m) = plan.dims2();
    let (a, b, t) = (c1.data(), c2.data(), plan.data());
    let mut g1 = vec![0.0; n * n];
    let mut g2 = vec![0.0; m * m];
    for i in 0..n {
        for ip in 0..n {
            let x = a[i * n + ip];
            for j in 0..m {
                let tij = t[i * m + j];
                if tij == 0.0 {
                    continue;
                }
                for jp in 0..m {
                    let d = x - b[j * m + jp];
                    let s = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    let w = tij * t[ip * m + jp] * s;
                    g1[i * n + ip] += w;
                    g2[j * m + jp] -= w;
                }
            }
        }
    }
    // d/dT of T^T K T is (K + K^T) T
    let kt = gw_kernel_apply(a, b, t, n, m);
    let at = c1.transpose();
    let bt = c2.transpose();
    let ktt = gw_kernel_apply(at.data(), bt.data(), t, n, m);
    let gp = kt.iter().zip(&ktt).map(|(x, y)| x + y).collect();
    GromovVjp { c1: g1, c2: g2, plan: gp }
}

/// `exp(-cos(h1_i, h2_j) / tau)`; zero rows have cosine 0.
pub fn node_cost_matrix(h1: &Tensor, h2: &Tensor, tau: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let a = tape.constant(h1.clone());
    let b = tape.constant(h2.clone());
    let c = node_cost(&mut tape, a, b, tau)?;
    Ok(tape.value(c).clone())
}

/// Tape version of [`node_cost_matrix`] on raw (unnormalized) embeddings.
pub fn node_cost(tape: &mut Tape, h1: Var, h2: Var, tau: f64) -> Result<Var> {
    let n1 = tape.normalize_rows(h1);
    let n2 = tape.normalize_rows(h2);
    cost_from_unit_rows(tape, n1, n2, tau)
}

/// Node cost from already row-normalized embeddings.
pub fn cost_from_unit_rows(tape: &mut Tape, n1: Var, n2: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let t2 = tape.transpose(n2);
    let cos = tape.matmul(n1, t2)?;
    let cos = tape.clamp(cos, -1.0, 1.0);
    let z = tape.scale(cos, -1.0 / tau);
    Ok(tape.exp(z))
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(GscError::contract(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// `sum_ij T_ij C_ij`, the transport cost of a plan.
pub fn wasserstein(cost: &Tensor, plan: &Tensor) -> Result<f64> {
    if cost.shape() != plan.shape() {
        return Err(GscError::dim("wasserstein", format!("{:?} vs {:?}", cost.shape(), plan.shape())));
    }
    Ok(cost.data().iter().zip(plan.data()).map(|(c, t)| c * t).sum())
}

/// Intra-subgraph distances of a sampled subgraph: `exp(-A / tau)` on the
/// 0/1 adjacency.
pub fn intra_distances_sampled(adjacency: &Tensor, tau: f64) -> Result<Tensor> {
    check_tau(tau)?;
    let mut out = adjacency.clone();
    out.grad = None;
    out.data_mut().iter_mut().for_each(|a| *a = (-*a / tau).exp());
    Ok(out)
}

/// Intra-subgraph distances of a generated subgraph, `exp(-Â / tau)` on the
/// real-valued cosine adjacency.
pub fn intra_distances_generated(tape: &mut Tape, adjacency: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let z = tape.scale(adjacency, -1.0 / tau);
    Ok(tape.exp(z))
}

/// Distances and plan diagnostics for one subgraph pair.
#[derive(Clone, Debug)]
pub struct PairDistance {
    pub wasserstein: f64,
    pub gromov: f64,
    pub plan: TransportPlan,
}

/// Plain (gradient-free) WD and GWD for two subgraphs sharing one plan.
pub fn pair_distance(
    h1: &Tensor,
    intra1: &Tensor,
    h2: &Tensor,
    intra2: &Tensor,
    tau: f64,
    opts: &SinkhornOptions,
) -> Result<PairDistance> {
    let cost = node_cost_matrix(h1, h2, tau)?;
    let plan = sinkhorn(&cost, &uniform(h1.rows()), &uniform(h2.rows()), opts)?;
    Ok(PairDistance {
        wasserstein: wasserstein(&cost, &plan.plan)?,
        gromov: gromov_wasserstein(intra1, intra2, &plan.plan)?,
        plan,
    })
}
