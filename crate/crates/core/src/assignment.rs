//! Dense linear assignment solvers for square cost matrices.
//!
//! [`hungarian`] is exact in O(n^3). [`auction`] runs Gauss-Seidel auction
//! rounds with epsilon scaling and stops once its primal cost is within a
//! relative factor of the dual bound carried by its prices.

/// Row-major square cost matrix.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn cost_of(&self, row_to_col: &[usize]) -> f64 {
        row_to_col
            .iter()
            .enumerate()
            .map(|(i, &j)| self.get(i, j))
            .sum()
    }

    fn max_entry(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v))
    }
}

/// Minimum-cost perfect matching; returns the column assigned to each row.
pub fn hungarian(costs: &CostMatrix) -> Vec<usize> {
    let n = costs.size();
    // 1-based potentials; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_slack = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];

    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        min_slack.iter_mut().for_each(|s| *s = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[col0] = true;
            let i0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            let cost_row = costs.row(i0 - 1);
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost_row[col - 1] - u[i0] - v[col];
                if reduced < min_slack[col] {
                    min_slack[col] = reduced;
                    way[col] = col0;
                }
                if min_slack[col] < delta {
                    delta = min_slack[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_slack[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0; n];
    for col in 1..=n {
        row_to_col[owner[col] - 1] = col - 1;
    }
    row_to_col
}

#[derive(Debug, Clone)]
pub struct AuctionResult {
    pub row_to_col: Vec<usize>,
    pub cost: f64,
    /// Dual lower bound on the optimal cost implied by the final prices.
    pub lower_bound: f64,
    /// False when the solver gave up certifying and fell back to [`hungarian`].
    pub certified: bool,
    pub stages: u32,
}

const SCALING_FACTOR: f64 = 4.0;
const MAX_STAGES: u32 = 64;

/// Approximate assignment with cost at most `(1 + rel_tol)` times optimal.
pub fn auction(costs: &CostMatrix, rel_tol: f64) -> AuctionResult {
    let n = costs.size();
    let max_cost = costs.max_entry();
    if n == 1 || max_cost == 0.0 {
        let row_to_col: Vec<usize> = (0..n).collect();
        let cost = costs.cost_of(&row_to_col);
        return AuctionResult {
            row_to_col,
            cost,
            lower_bound: cost,
            certified: true,
            stages: 0,
        };
    }

    let mut prices = vec![0.0; n];
    let mut eps = max_cost / SCALING_FACTOR;
    let mut stages = 0;
    while stages < MAX_STAGES {
        stages += 1;
        let row_to_col = auction_stage(costs, &mut prices, eps);
        let cost = costs.cost_of(&row_to_col);
        let lower_bound = dual_bound(costs, &prices);
        if cost <= (1.0 + rel_tol) * lower_bound || cost == 0.0 {
            return AuctionResult {
                row_to_col,
                cost,
                lower_bound,
                certified: true,
                stages,
            };
        }
        // The primal cost is within n*eps of optimal, so shrink eps at least
        // until that slack fits inside the relative tolerance.
        let target = rel_tol * lower_bound.max(0.0) / n as f64;
        eps = if target > 0.0 && target < eps / SCALING_FACTOR {
            (eps / SCALING_FACTOR).max(target)
        } else {
            eps / SCALING_FACTOR
        };
    }
    let row_to_col = hungarian(costs);
    let cost = costs.cost_of(&row_to_col);
    AuctionResult {
        row_to_col,
        cost,
        lower_bound: cost,
        certified: false,
        stages,
    }
}

/// `sum_i min_j (c_ij + p_j) - sum_j p_j`, a lower bound on every assignment.
fn dual_bound(costs: &CostMatrix, prices: &[f64]) -> f64 {
    let n = costs.size();
    let row_terms: f64 = (0..n)
        .map(|i| {
            costs
                .row(i)
                .iter()
                .zip(prices)
                .map(|(c, p)| c + p)
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    row_terms - prices.iter().sum::<f64>()
}

/// One complete auction at fixed `eps`, keeping prices from earlier stages.
fn auction_stage(costs: &CostMatrix, prices: &mut [f64], eps: f64) -> Vec<usize> {
    let n = costs.size();
    let mut col_owner = vec![usize::MAX; n];
    let mut row_to_col = vec![usize::MAX; n];
    let mut unassigned: std::collections::VecDeque<usize> = (0..n).collect();

    while let Some(row) = unassigned.pop_front() {
        // Minimizing c + p is the same as maximizing -(c + p).
        let mut best = (usize::MAX, f64::INFINITY);
        let mut second = f64::INFINITY;
        for (col, (&c, &p)) in costs.row(row).iter().zip(prices.iter()).enumerate() {
            let total = c + p;
            if total < best.1 {
                second = best.1;
                best = (col, total);
            } else if total < second {
                second = total;
            }
        }
        let (col, best_total) = best;
        prices[col] += second - best_total + eps;
        let previous = std::mem::replace(&mut col_owner[col], row);
        if previous != usize::MAX {
            row_to_col[previous] = usize::MAX;
            unassigned.push_back(previous);
        }
        row_to_col[row] = col;
    }
    row_to_col
}
