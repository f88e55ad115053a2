use super::{marginal_violation, plan_cost, SinkhornParams, TransportProblem, TransportSolution};
use crate::linalg::Matrix;
use crate::{Error, Result};

/// Entropy-regularized OT by log-domain Sinkhorn iterations.
///
/// Potentials are kept in log space from the first iteration; rows and
/// columns with zero mass are dropped before iterating. The loop stops once
/// the row-marginal violation drops below `tolerance` (columns are exact after
/// each column update) or after `max_iters` iterations. The final plan is then
/// rounded onto the feasible set (Altschuler, Weed & Rigollet, 2017), so the
/// reported distance is the cost of a plan that satisfies both marginals.
pub fn sinkhorn(problem: &TransportProblem, params: &SinkhornParams) -> Result<TransportSolution> {
    params.validate()?;
    let a = problem.row_marginal();
    let b = problem.col_marginal();
    let cost = problem.cost();
    let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    let (n, m) = (rows.len(), cols.len());

    // kernel in log space: -C/ε on the active block
    let eps = params.epsilon;
    let mut log_kernel = Vec::with_capacity(n * m);
    for &i in &rows {
        let r = cost.row(i);
        log_kernel.extend(cols.iter().map(|&j| -r[j] / eps));
    }
    let log_a: Vec<f64> = rows.iter().map(|&i| a[i].ln()).collect();
    let log_b: Vec<f64> = cols.iter().map(|&j| b[j].ln()).collect();

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut row_lse = vec![0.0; n];
    let mut col_max = vec![0.0; m];
    let mut col_sum = vec![0.0; m];
    lse_rows(&log_kernel, &g, m, &mut row_lse);

    let mut violation = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=params.max_iters {
        iterations = it;
        for i in 0..n {
            f[i] = log_a[i] - row_lse[i];
        }
        lse_cols(&log_kernel, &f, m, &mut col_max, &mut col_sum, &mut g);
        for j in 0..m {
            g[j] = log_b[j] - g[j];
        }
        lse_rows(&log_kernel, &g, m, &mut row_lse);

        if f.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(Error::ConvergenceFailure(format!(
                "non-finite potential at iteration {it} (epsilon {eps:e}, smallest row mass {:e}, smallest column mass {:e})",
                log_a.iter().copied().fold(f64::INFINITY, f64::min).exp(),
                log_b.iter().copied().fold(f64::INFINITY, f64::min).exp(),
            )));
        }
        violation = (0..n)
            .map(|i| ((f[i] + row_lse[i]).exp() - a[rows[i]]).abs())
            .fold(0.0, f64::max);
        if violation < params.tolerance {
            converged = true;
            break;
        }
    }

    let mut plan = Matrix::zeros(a.len(), b.len());
    for (ii, &i) in rows.iter().enumerate() {
        for (jj, &j) in cols.iter().enumerate() {
            plan[(i, j)] = (f[ii] + g[jj] + log_kernel[ii * m + jj]).exp();
        }
    }
    round_to_feasible(&mut plan, a, b);
    let final_violation = marginal_violation(&plan, a, b);
    Ok(TransportSolution {
        distance: plan_cost(&plan, cost),
        plan,
        iterations,
        marginal_violation: violation.max(final_violation),
        converged,
    })
}

/// `out[i] = log Σ_j exp(k[i, j] + g[j])`
fn lse_rows(log_kernel: &[f64], g: &[f64], m: usize, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let row = &log_kernel[i * m..(i + 1) * m];
        let max = row.iter().zip(g).map(|(k, gj)| k + gj).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().zip(g).map(|(k, gj)| (k + gj - max).exp()).sum();
        *o = max + sum.ln();
    }
}

/// `out[j] = log Σ_i exp(k[i, j] + f[i])`
fn lse_cols(log_kernel: &[f64], f: &[f64], m: usize, max: &mut [f64], sum: &mut [f64], out: &mut [f64]) {
    max.fill(f64::NEG_INFINITY);
    for (i, fi) in f.iter().enumerate() {
        for (mx, k) in max.iter_mut().zip(&log_kernel[i * m..(i + 1) * m]) {
            *mx = mx.max(k + fi);
        }
    }
    sum.fill(0.0);
    for (i, fi) in f.iter().enumerate() {
        for ((s, k), mx) in sum.iter_mut().zip(&log_kernel[i * m..(i + 1) * m]).zip(max.iter()) {
            *s += (k + fi - mx).exp();
        }
    }
    for j in 0..m {
        out[j] = max[j] + sum[j].ln();
    }
}

/// Scales rows then columns down to their targets and spreads the remaining
/// mass as a rank-one correction.
fn round_to_feasible(plan: &mut Matrix, a: &[f64], b: &[f64]) {
    let (n, m) = (plan.rows(), plan.cols());
    for (i, &ai) in a.iter().enumerate() {
        let r: f64 = plan.row(i).iter().sum();
        if r > ai {
            let s = ai / r;
            plan.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
    }
    for (j, &bj) in b.iter().enumerate() {
        let c: f64 = (0..n).map(|i| plan[(i, j)]).sum();
        if c > bj {
            let s = bj / c;
            for i in 0..n {
                plan[(i, j)] *= s;
            }
        }
    }
    let err_r: Vec<f64> = (0..n).map(|i| (a[i] - plan.row(i).iter().sum::<f64>()).max(0.0)).collect();
    let err_c: Vec<f64> = (0..m).map(|j| (b[j] - (0..n).map(|i| plan[(i, j)]).sum::<f64>()).max(0.0)).collect();
    let total: f64 = err_r.iter().sum();
    if total > 0.0 {
        for i in 0..n {
            if err_r[i] == 0.0 {
                continue;
            }
            for j in 0..m {
                plan[(i, j)] += err_r[i] * err_c[j] / total;
            }
        }
    }
}
