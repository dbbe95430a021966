//! Exact solver for the balanced transportation problem.
//!
//! Primal transportation simplex (the network simplex specialised to a
//! complete bipartite graph): a north-west-corner spanning-tree basis is
//! improved with node potentials until every reduced cost is non-negative.
//! Entering and leaving cells follow Bland's smallest-index rule, so
//! degenerate pivots cannot cycle.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("source mass {source_mass} and sink mass {sink_mass} differ")]
    UnbalancedMass { source_mass: f64, sink_mass: f64 },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("simplex did not converge within {0} pivots")]
    NoConvergence(usize),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged matrix rows");
        Self { rows: r, cols: c, data: rows.concat() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows)
            .map(|i| (0..self.cols).fold(T::zero(), |s, j| s + self.get(i, j)))
            .collect()
    }

    pub fn col_sums(&self) -> Vec<T> {
        (0..self.cols)
            .map(|j| (0..self.rows).fold(T::zero(), |s, i| s + self.get(i, j)))
            .collect()
    }
}

/// Weighted point set; weights are non-negative and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution<P, T> {
    pub support: Vec<P>,
    pub weights: Vec<T>,
}

impl<P, T: Real> DiscreteDistribution<P, T> {
    pub fn new(support: Vec<P>, weights: Vec<T>) -> Result<Self, TransportError> {
        if support.is_empty() {
            return Err(TransportError::DegenerateInput("empty support".into()));
        }
        if support.len() != weights.len() {
            return Err(TransportError::DegenerateInput(
                "support and weights differ in length".into(),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= T::zero())) {
            return Err(TransportError::DegenerateInput("weights must be finite and >= 0".into()));
        }
        let total = weights.iter().fold(T::zero(), |s, w| s + *w);
        if (total - T::one()).abs() > T::pivot_eps().max(T::epsilon() * T::lit(16.0)) {
            return Err(TransportError::DegenerateInput(format!(
                "weights sum to {:?}, expected 1",
                total
            )));
        }
        Ok(Self { support, weights })
    }

    pub fn uniform(support: Vec<P>) -> Result<Self, TransportError> {
        let n = support.len();
        if n == 0 {
            return Err(TransportError::DegenerateInput("empty support".into()));
        }
        let w = T::one() / T::from_usize(n).expect("support size representable");
        Self::new(support, vec![w; n])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportSolution<T> {
    pub plan: Matrix<T>,
    pub objective: T,
}

fn check_inputs<T: Real>(source: &[T], sink: &[T], cost: &Matrix<T>) -> Result<(), TransportError> {
    if source.is_empty() || sink.is_empty() {
        return Err(TransportError::DegenerateInput("empty support".into()));
    }
    if cost.rows() != source.len() || cost.cols() != sink.len() {
        return Err(TransportError::DegenerateInput(format!(
            "cost is {}x{}, expected {}x{}",
            cost.rows(),
            cost.cols(),
            source.len(),
            sink.len()
        )));
    }
    if source.iter().chain(sink).any(|w| !(w.is_finite() && *w >= T::zero())) {
        return Err(TransportError::DegenerateInput("masses must be finite and >= 0".into()));
    }
    if cost.data.iter().any(|c| !(c.is_finite() && *c >= T::zero())) {
        return Err(TransportError::DegenerateInput("costs must be finite and >= 0".into()));
    }
    let sa = source.iter().fold(T::zero(), |s, w| s + *w);
    let sb = sink.iter().fold(T::zero(), |s, w| s + *w);
    let tol = T::pivot_eps() * T::lit(1e3) * sa.max(T::one());
    if (sa - sb).abs() > tol {
        return Err(TransportError::UnbalancedMass {
            source_mass: sa.to_f64().unwrap_or(f64::NAN),
            sink_mass: sb.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

/// Minimum-cost plan moving `source` mass onto `sink` mass.
pub fn solve_transport<T: Real>(
    source: &[T],
    sink: &[T],
    cost: &Matrix<T>,
) -> Result<TransportSolution<T>, TransportError> {
    check_inputs(source, sink, cost)?;
    let (m, n) = (source.len(), sink.len());
    let idx = |i: usize, j: usize| i * n + j;

    let mut flow = vec![T::zero(); m * n];
    let mut basic = vec![false; m * n];

    // North-west corner: m + n - 1 basic cells forming a staircase tree.
    let mut ra = source.to_vec();
    let mut rb = sink.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let x = ra[i].min(rb[j]);
        flow[idx(i, j)] = x;
        basic[idx(i, j)] = true;
        ra[i] -= x;
        rb[j] -= x;
        if i == m - 1 && j == n - 1 {
            // the last cell absorbs rounding left over from the balance check
            flow[idx(i, j)] += ra[i].max(rb[j]).max(T::zero());
            break;
        }
        if i == m - 1 {
            j += 1;
        } else if j == n - 1 || ra[i] <= rb[j] {
            i += 1;
        } else {
            j += 1;
        }
    }

    let cmax = cost.data.iter().fold(T::zero(), |a, c| a.max(*c));
    let eps = T::pivot_eps() * cmax.max(T::one());
    let max_pivots = 64 * (m * n + m + n) + 10_000;

    // Nodes 0..m are rows, m..m+n are columns.
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m + n];
    let mut u = vec![T::zero(); m];
    let mut v = vec![T::zero(); n];
    let mut pivots = 0;
    loop {
        for a in adj.iter_mut() {
            a.clear();
        }
        for i in 0..m {
            for j in 0..n {
                if basic[idx(i, j)] {
                    adj[i].push((m + j, idx(i, j)));
                    adj[m + j].push((i, idx(i, j)));
                }
            }
        }

        // Potentials: u_i + v_j = c_ij on every tree edge, u_0 = 0.
        let mut seen = vec![false; m + n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        u[0] = T::zero();
        while let Some(node) = queue.pop_front() {
            for &(next, cell) in &adj[node] {
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                let (ci, cj) = (cell / n, cell % n);
                if next >= m {
                    v[next - m] = cost.get(ci, cj) - u[node];
                } else {
                    u[next] = cost.get(ci, cj) - v[node - m];
                }
                queue.push_back(next);
            }
        }
        debug_assert!(seen.iter().all(|s| *s), "basis must span all rows and columns");

        // Bland: first cell with negative reduced cost.
        let entering = (0..m * n).find(|&c| {
            !basic[c] && cost.get(c / n, c % n) - u[c / n] - v[c % n] < -eps
        });
        let Some(enter) = entering else { break };
        pivots += 1;
        if pivots > max_pivots {
            return Err(TransportError::NoConvergence(max_pivots));
        }
        let (ei, ej) = (enter / n, enter % n);

        // Tree path from row ei to column ej.
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; m + n];
        let mut visited = vec![false; m + n];
        visited[ei] = true;
        let mut queue = VecDeque::from([ei]);
        while let Some(node) = queue.pop_front() {
            if node == m + ej {
                break;
            }
            for &(next, cell) in &adj[node] {
                if !visited[next] {
                    visited[next] = true;
                    parent[next] = Some((node, cell));
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = m + ej;
        while node != ei {
            let (prev, cell) = parent[node].expect("tree path exists");
            path.push(cell);
            node = prev;
        }
        path.reverse();
        // Along the path from row ei the signs alternate -, +, -, ..., -.
        let minus: Vec<usize> = path.iter().step_by(2).copied().collect();
        let plus: Vec<usize> = path.iter().skip(1).step_by(2).copied().collect();

        let theta = minus.iter().map(|&c| flow[c]).fold(T::infinity(), T::min);
        let tie = T::pivot_eps() * T::lit(1e-3);
        let leave = *minus
            .iter()
            .filter(|&&c| flow[c] - theta <= tie)
            .min()
            .expect("cycle has a minus cell");

        flow[enter] = theta;
        for &c in &plus {
            flow[c] += theta;
        }
        for &c in &minus {
            flow[c] -= theta;
            if flow[c] < T::zero() {
                flow[c] = T::zero();
            }
        }
        flow[leave] = T::zero();
        basic[leave] = false;
        basic[enter] = true;
    }

    let mut objective = T::zero();
    let mut plan = Matrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let f = flow[idx(i, j)];
            plan.set(i, j, f);
            objective += f * cost.get(i, j);
        }
    }
    Ok(TransportSolution { plan, objective })
}

/// Earth-mover distance between two uniformly weighted point sets under
/// Euclidean ground cost.
pub fn emd_uniform<T: Real>(
    a: &[crate::geometry::Vec3<T>],
    b: &[crate::geometry::Vec3<T>],
) -> Result<T, TransportError> {
    let da = DiscreteDistribution::<_, T>::uniform(a.to_vec())?;
    let db = DiscreteDistribution::<_, T>::uniform(b.to_vec())?;
    let cost = Matrix::from_fn(a.len(), b.len(), |i, j| a[i].distance(b[j]));
    Ok(solve_transport(&da.weights, &db.weights, &cost)?.objective)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one() {
        let c = Matrix::from_rows(&[vec![2.5]]);
        let s = solve_transport(&[1.0], &[1.0], &c).unwrap();
        assert_eq!(s.objective, 2.5);
        assert_eq!(s.plan.get(0, 0), 1.0);
    }

    #[test]
    fn prefers_cheap_diagonal() {
        // NW corner starts on the expensive diagonal and must pivot
        let c = Matrix::<f64>::from_rows(&[vec![5.0, 1.0], vec![1.0, 5.0]]);
        let s = solve_transport(&[0.5, 0.5], &[0.5, 0.5], &c).unwrap();
        assert!((s.objective - 1.0).abs() < 1e-12);
        assert!((s.plan.get(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn classic_three_by_four() {
        // textbook instance, optimum 743 (supplies 7/9/18, demands 5/8/7/14)
        let c = Matrix::<f64>::from_rows(&[
            vec![19.0, 30.0, 50.0, 10.0],
            vec![70.0, 30.0, 40.0, 60.0],
            vec![40.0, 8.0, 70.0, 20.0],
        ]);
        let s = solve_transport(&[7.0, 9.0, 18.0], &[5.0, 8.0, 7.0, 14.0], &c).unwrap();
        assert!((s.objective - 743.0).abs() < 1e-9, "{}", s.objective);
    }

    #[test]
    fn unbalanced_and_degenerate_inputs() {
        let c = Matrix::from_rows(&[vec![1.0, 1.0]]);
        assert!(matches!(
            solve_transport(&[1.0], &[0.3, 0.3], &c),
            Err(TransportError::UnbalancedMass { .. })
        ));
        let e: Matrix<f64> = Matrix::zeros(0, 0);
        assert!(matches!(solve_transport(&[], &[], &e), Err(TransportError::DegenerateInput(_))));
        let neg = Matrix::from_rows(&[vec![-1.0]]);
        assert!(matches!(solve_transport(&[1.0], &[1.0], &neg), Err(TransportError::DegenerateInput(_))));
    }

    #[test]
    fn single_precision_solve() {
        let c = Matrix::<f32>::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let s = solve_transport(&[0.5f32, 0.5], &[0.5, 0.5], &c).unwrap();
        assert!(s.objective.abs() < 1e-6);
    }

    #[test]
    fn distribution_validation() {
        assert!(DiscreteDistribution::<u8, f64>::new(vec![1, 2], vec![0.5, 0.6]).is_err());
        assert!(DiscreteDistribution::<u8, f64>::new(vec![], vec![]).is_err());
        let d = DiscreteDistribution::<u8, f64>::uniform(vec![1, 2, 3]).unwrap();
        assert!((d.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
