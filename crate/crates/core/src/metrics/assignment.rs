//! Dense linear sum assignment via shortest augmenting paths with potentials.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Row→column assignment maximising the summed score. Requires rows <= cols;
/// every row gets a distinct column.
pub fn max_assignment(score: ArrayView2<f64>) -> Result<Vec<usize>> {
    let (n, m) = score.dim();
    if n > m {
        return Err(Error::Dimension(format!(
            "assignment needs rows <= cols, got {n}x{m}"
        )));
    }
    if score.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite assignment score".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based arrays; index 0 is the virtual start column.
    let cost = |i: usize, j: usize| -score[[i - 1, j - 1]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = j - 1;
        }
    }
    Ok(out)
}
