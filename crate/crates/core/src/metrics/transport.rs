//! Exact optimal transport between uniform marginals.
//!
//! The balanced transportation problem with row supply `Nb` and column demand
//! `Na` (total mass `Na·Nb`) is solved by the primal transportation simplex
//! (network simplex on the complete bipartite graph). Flows stay integral, so
//! the returned plan `P = flow / (Na·Nb)` meets its marginals up to a single
//! rounding. Dantzig pricing is used until a run of degenerate pivots, after
//! which Bland's rule takes over until the next nondegenerate pivot.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// Na×Nb, rows sum to 1/Na and columns to 1/Nb.
    pub p: Array2<f64>,
}

impl TransportPlan {
    pub fn objective(&self, score: ArrayView2<f64>) -> f64 {
        self.p.iter().zip(score.iter()).map(|(p, c)| p * c).sum()
    }
}

const DEGENERATE_STREAK: usize = 32;

struct Basis {
    rows: usize,
    cols: usize,
    flow: Vec<i64>,
    basic: Vec<bool>,
    row_adj: Vec<Vec<usize>>,
    col_adj: Vec<Vec<usize>>,
}

impl Basis {
    fn northwest(rows: usize, cols: usize) -> Self {
        let mut b = Basis {
            rows,
            cols,
            flow: vec![0; rows * cols],
            basic: vec![false; rows * cols],
            row_adj: vec![Vec::new(); rows],
            col_adj: vec![Vec::new(); cols],
        };
        let mut supply = vec![cols as i64; rows];
        let mut demand = vec![rows as i64; cols];
        let (mut i, mut j) = (0, 0);
        loop {
            let x = supply[i].min(demand[j]);
            supply[i] -= x;
            demand[j] -= x;
            b.add(i, j, x);
            if i == rows - 1 && j == cols - 1 {
                break;
            }
            if supply[i] == 0 && i < rows - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        b
    }

    fn add(&mut self, i: usize, j: usize, x: i64) {
        let e = i * self.cols + j;
        self.basic[e] = true;
        self.flow[e] = x;
        self.row_adj[i].push(j);
        self.col_adj[j].push(i);
    }

    fn remove(&mut self, i: usize, j: usize) {
        let e = i * self.cols + j;
        self.basic[e] = false;
        self.flow[e] = 0;
        self.row_adj[i].retain(|&c| c != j);
        self.col_adj[j].retain(|&r| r != i);
    }

    /// Dual potentials with `u[0] = 0`, `u_i + v_j = cost_ij` on basic cells.
    fn potentials(&self, cost: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut u = vec![f64::NAN; self.rows];
        let mut v = vec![f64::NAN; self.cols];
        u[0] = 0.0;
        // nodes: rows are 0..rows, columns rows..rows+cols
        let mut queue = VecDeque::from([0usize]);
        while let Some(node) = queue.pop_front() {
            if node < self.rows {
                let i = node;
                for &j in &self.row_adj[i] {
                    if v[j].is_nan() {
                        v[j] = cost[i * self.cols + j] - u[i];
                        queue.push_back(self.rows + j);
                    }
                }
            } else {
                let j = node - self.rows;
                for &i in &self.col_adj[j] {
                    if u[i].is_nan() {
                        u[i] = cost[i * self.cols + j] - v[j];
                        queue.push_back(i);
                    }
                }
            }
        }
        (u, v)
    }

    /// Basic cells on the tree path from column `j` back to row `i`, in order.
    fn path(&self, i: usize, j: usize) -> Vec<(usize, usize)> {
        let total = self.rows + self.cols;
        let mut parent = vec![usize::MAX; total];
        parent[i] = i;
        let mut queue = VecDeque::from([i]);
        let target = self.rows + j;
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            if node < self.rows {
                for &c in &self.row_adj[node] {
                    let nb = self.rows + c;
                    if parent[nb] == usize::MAX {
                        parent[nb] = node;
                        queue.push_back(nb);
                    }
                }
            } else {
                for &r in &self.col_adj[node - self.rows] {
                    if parent[r] == usize::MAX {
                        parent[r] = node;
                        queue.push_back(r);
                    }
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = target;
        while node != i {
            let p = parent[node];
            let cell = if node >= self.rows {
                (p, node - self.rows)
            } else {
                (node, p - self.rows)
            };
            cells.push(cell);
            node = p;
        }
        cells
    }
}

/// Plan maximising `Σ P_ij · score_ij` over the transportation polytope.
pub fn soft_match_plan(score: ArrayView2<f64>) -> Result<TransportPlan> {
    let (rows, cols) = score.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::Degenerate("empty score matrix".into()));
    }
    if score.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite transport score".into()));
    }
    let cost: Vec<f64> = score.iter().map(|v| -v).collect();
    let scale = cost.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
    let tol = 1e-12 * (1.0 + scale);

    let mut basis = Basis::northwest(rows, cols);
    let max_iter = 50 * rows * cols + 1000;
    let mut degenerate_run = 0;
    let mut iterations = 0;
    loop {
        if iterations > max_iter {
            return Err(Error::Solver(format!(
                "transportation simplex did not converge in {max_iter} pivots \
                 ({rows}x{cols}, degenerate run {degenerate_run})"
            )));
        }
        iterations += 1;
        let (u, v) = basis.potentials(&cost);
        let bland = degenerate_run >= DEGENERATE_STREAK;
        let mut entering = None;
        let mut best = -tol;
        'pricing: for i in 0..rows {
            for j in 0..cols {
                let e = i * cols + j;
                if basis.basic[e] {
                    continue;
                }
                let reduced = cost[e] - u[i] - v[j];
                if reduced < best {
                    entering = Some((i, j));
                    if bland {
                        break 'pricing;
                    }
                    best = reduced;
                }
            }
        }
        let Some((ei, ej)) = entering else { break };

        let cycle = basis.path(ei, ej);
        // cells alternate −, +, −, … starting next to the entering column
        let mut leaving: Option<(usize, i64)> = None;
        for &(ci, cj) in cycle.iter().step_by(2) {
            let idx = ci * cols + cj;
            let x = basis.flow[idx];
            let better = match leaving {
                None => true,
                Some((li, lx)) => x < lx || (x == lx && idx < li),
            };
            if better {
                leaving = Some((idx, x));
            }
        }
        let Some((leave_idx, theta)) = leaving else {
            return Err(Error::Solver("transportation cycle has no decreasing cell".into()));
        };
        for (pos, &(ci, cj)) in cycle.iter().enumerate() {
            let e = ci * cols + cj;
            if pos % 2 == 0 {
                basis.flow[e] -= theta;
            } else {
                basis.flow[e] += theta;
            }
        }
        basis.remove(leave_idx / cols, leave_idx % cols);
        basis.add(ei, ej, theta);
        degenerate_run = if theta == 0 { degenerate_run + 1 } else { 0 };
    }

    let total = (rows * cols) as f64;
    let p = Array2::from_shape_fn((rows, cols), |(i, j)| basis.flow[i * cols + j] as f64 / total);
    Ok(TransportPlan { p })
}
