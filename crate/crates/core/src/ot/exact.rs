use std::collections::VecDeque;

use super::{marginal_violation, plan_cost, TransportProblem, TransportSolution};
use crate::linalg::Matrix;
use crate::{Error, Result};

/// Largest `rows × cols` accepted by [`exact_ot`].
pub const EXACT_CELL_LIMIT: usize = 10_000;

#[derive(Clone, Copy, Debug)]
struct Cell {
    row: usize,
    col: usize,
    flow: f64,
}

/// Unregularized OT by the transportation simplex.
///
/// Starts from the north-west corner basis and pivots with Bland's rule, so it
/// terminates on degenerate instances. `iterations` counts pivots.
pub fn exact_ot(problem: &TransportProblem) -> Result<TransportSolution> {
    let (n, m) = problem.shape();
    if n * m > EXACT_CELL_LIMIT {
        return Err(Error::ScaleGuard { cells: n * m, limit: EXACT_CELL_LIMIT });
    }
    let cost = problem.cost();
    let a = problem.row_marginal();
    let b = problem.col_marginal();
    let tol = 1e-12 * cost.max_abs().max(1.0);

    let mut basis = north_west_corner(a, b);
    let max_pivots = 50 * n * m + 100;
    let mut pivots = 0;
    let (mut u, mut v) = (vec![0.0; n], vec![0.0; m]);
    loop {
        potentials(&basis, cost, n, m, &mut u, &mut v);
        let Some((ei, ej)) = entering_cell(cost, &u, &v, tol) else { break };
        if pivots == max_pivots {
            return Err(Error::ConvergenceFailure(format!(
                "transportation simplex hit {max_pivots} pivots on a {n}x{m} problem"
            )));
        }
        pivot(&mut basis, n, m, ei, ej);
        pivots += 1;
    }

    let mut plan = Matrix::zeros(n, m);
    for c in &basis {
        plan[(c.row, c.col)] = c.flow;
    }
    Ok(TransportSolution {
        distance: plan_cost(&plan, cost),
        marginal_violation: marginal_violation(&plan, a, b),
        plan,
        iterations: pivots,
        converged: true,
    })
}

/// `n + m − 1` basic cells, degenerate zeros included. The final cell takes
/// whatever mass is left so rounding in the marginals cannot go negative.
fn north_west_corner(a: &[f64], b: &[f64]) -> Vec<Cell> {
    let (n, m) = (a.len(), b.len());
    let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
    let mut cells = Vec::with_capacity(n + m - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        if i == n - 1 && j == m - 1 {
            cells.push(Cell { row: i, col: j, flow: ra[i].max(rb[j]).max(0.0) });
            return cells;
        }
        let flow = ra[i].min(rb[j]).max(0.0);
        cells.push(Cell { row: i, col: j, flow });
        ra[i] -= flow;
        rb[j] -= flow;
        if j == m - 1 || (i < n - 1 && ra[i] <= rb[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }
}

/// Node ids: rows are `0..n`, columns `n..n+m`.
fn adjacency(basis: &[Cell], n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); n + m];
    for (k, c) in basis.iter().enumerate() {
        adj[c.row].push((n + c.col, k));
        adj[n + c.col].push((c.row, k));
    }
    adj
}

/// Solves `u_i + v_j = c_ij` on basic cells with `u_0 = 0`.
fn potentials(basis: &[Cell], cost: &Matrix, n: usize, m: usize, u: &mut [f64], v: &mut [f64]) {
    let adj = adjacency(basis, n, m);
    let mut seen = vec![false; n + m];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    u[0] = 0.0;
    while let Some(node) = queue.pop_front() {
        for &(next, k) in &adj[node] {
            if seen[next] {
                continue;
            }
            seen[next] = true;
            let c = basis[k];
            if next >= n {
                v[c.col] = cost[(c.row, c.col)] - u[c.row];
            } else {
                u[c.row] = cost[(c.row, c.col)] - v[c.col];
            }
            queue.push_back(next);
        }
    }
}

/// First cell in row-major order with negative reduced cost.
fn entering_cell(cost: &Matrix, u: &[f64], v: &[f64], tol: f64) -> Option<(usize, usize)> {
    for (i, ui) in u.iter().enumerate() {
        for (j, (c, vj)) in cost.row(i).iter().zip(v).enumerate() {
            if c - ui - vj < -tol {
                return Some((i, j));
            }
        }
    }
    None
}

fn pivot(basis: &mut [Cell], n: usize, m: usize, ei: usize, ej: usize) {
    // tree path from row ei to column ej, as basis indices
    let adj = adjacency(basis, n, m);
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n + m];
    let mut seen = vec![false; n + m];
    let mut queue = VecDeque::from([ei]);
    seen[ei] = true;
    while let Some(node) = queue.pop_front() {
        if node == n + ej {
            break;
        }
        for &(next, k) in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                parent[next] = Some((node, k));
                queue.push_back(next);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = n + ej;
    while let Some((prev, k)) = parent[node] {
        path.push(k);
        node = prev;
    }
    // path runs from column ej back to row ei; the edge at ej loses flow and
    // signs alternate from there
    let minus: Vec<usize> = path.iter().copied().step_by(2).collect();
    let theta = minus.iter().map(|&k| basis[k].flow).fold(f64::INFINITY, f64::min);
    let leaving = minus
        .iter()
        .copied()
        .filter(|&k| basis[k].flow == theta)
        .min_by_key(|&k| basis[k].row * m + basis[k].col)
        .expect("cycle has a decreasing cell");
    for (e, &k) in path.iter().enumerate() {
        if e % 2 == 0 {
            basis[k].flow -= theta;
        } else {
            basis[k].flow += theta;
        }
    }
    basis[leaving] = Cell { row: ei, col: ej, flow: theta };
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_cost_is_zero() {
        let mut rows = vec![[1.0; 4]; 4];
        for (i, p) in [2usize, 0, 3, 1].iter().enumerate() {
            rows[i][*p] = 0.0;
        }
        let p = TransportProblem::uniform(Matrix::from_rows(&rows).unwrap()).unwrap();
        let s = exact_ot(&p).unwrap();
        assert_eq!(s.distance, 0.0);
        assert!(s.marginal_violation < 1e-15);
    }

    #[test]
    fn two_by_two_reference_instance() {
        let p = TransportProblem::uniform(Matrix::from_rows(&[[0.0, 2.0], [2.0, 1.0]]).unwrap()).unwrap();
        let s = exact_ot(&p).unwrap();
        assert!((s.distance - 0.5).abs() < 1e-15);
        assert_eq!(s.plan[(0, 1)], 0.0);
    }

    #[test]
    fn north_west_corner_is_a_spanning_basis() {
        let cells = north_west_corner(&[0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(cells.len(), 3);
        assert_eq!(cells.iter().map(|c| c.flow).sum::<f64>(), 1.0);
        assert!(cells.iter().any(|c| c.flow == 0.0));
    }

    #[test]
    fn degenerate_marginals_terminate() {
        let cost = Matrix::from_rows(&[[3.0, 1.0, 2.0], [1.0, 3.0, 2.0], [2.0, 2.0, 0.0]]).unwrap();
        let p = TransportProblem::new(cost, vec![0.25, 0.25, 0.5], vec![0.25, 0.25, 0.5]).unwrap();
        let s = exact_ot(&p).unwrap();
        assert!((s.distance - 0.5).abs() < 1e-12, "{}", s.distance);
    }

    #[test]
    fn zero_mass_rows_are_fine() {
        let cost = Matrix::from_rows(&[[0.0, 1.0], [4.0, 0.0], [1.0, 1.0]]).unwrap();
        let p = TransportProblem::new(cost, vec![0.5, 0.0, 0.5], vec![0.5, 0.5]).unwrap();
        let s = exact_ot(&p).unwrap();
        assert!((s.distance - 0.5).abs() < 1e-12);
        assert_eq!(s.plan.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn scale_guard() {
        let p = TransportProblem::uniform(Matrix::zeros(101, 100)).unwrap();
        assert!(matches!(exact_ot(&p), Err(Error::ScaleGuard { cells: 10_100, limit: 10_000 })));
    }
}
