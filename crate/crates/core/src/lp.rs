//! Dense bounded-variable primal simplex.
//!
//! Solves `min cᵀx  s.t.  A x = b,  l ≤ x ≤ u` with finite lower bounds and
//! possibly infinite upper bounds. Nonbasic variables rest at either bound, so
//! box constraints never become tableau rows. Entering variables are priced
//! by the largest reduced cost with lowest-index tie-breaking; after a run of
//! degenerate pivots the method falls back to Bland's rule, which cannot cycle.

/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-8;
const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-10;
const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("linear program is infeasible (phase-one residual {residual:e})")]
    Infeasible { residual: f64 },
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit ({0}) reached")]
    IterationLimit(usize),
    #[error("malformed linear program: {0}")]
    Malformed(String),
}

/// A dense LP in equality form with variable bounds.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    n: usize,
    cost: Vec<f64>,
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// ‖A x − b‖∞ recomputed from the original data.
    pub residual: f64,
}

impl LinearProgram {
    /// `n` variables, zero cost, bounds `[0, ∞)`.
    pub fn new(n: usize) -> Self {
        LinearProgram {
            n,
            cost: vec![0.0; n],
            rows: Vec::new(),
            rhs: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn set_cost(&mut self, j: usize, c: f64) {
        self.cost[j] = c;
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    /// Adds `Σ coef·x_j = rhs` from sparse `(j, coef)` terms; repeated indices add up.
    pub fn add_equality(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let mut row = vec![0.0; self.n];
        for &(j, a) in terms {
            row[j] += a;
        }
        self.rows.push(row);
        self.rhs.push(rhs);
    }

    pub fn minimize(&self) -> Result<LpSolution, LpError> {
        self.check()?;
        let mut t = Tableau::build(self);
        t.phase_one()?;
        t.phase_two(self)?;
        let x: Vec<f64> = t
            .values()
            .into_iter()
            .take(self.n)
            .zip(&self.lower)
            .map(|(v, l)| v + l)
            .collect();
        let objective = self.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
        let residual = self
            .rows
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| (row.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() - b).abs())
            .fold(0.0, f64::max);
        Ok(LpSolution {
            x,
            objective,
            iterations: t.iterations,
            residual,
        })
    }

    /// Maximises the objective; the reported objective is the maximum.
    pub fn maximize(&self) -> Result<LpSolution, LpError> {
        let mut neg = self.clone();
        neg.cost.iter_mut().for_each(|c| *c = -*c);
        let mut sol = neg.minimize()?;
        sol.objective = -sol.objective;
        Ok(sol)
    }

    fn check(&self) -> Result<(), LpError> {
        for j in 0..self.n {
            if !self.lower[j].is_finite() || self.upper[j] < self.lower[j] || self.upper[j].is_nan() {
                return Err(LpError::Malformed(format!("bad bounds on variable {j}")));
            }
        }
        if self
            .rows
            .iter()
            .flatten()
            .chain(&self.rhs)
            .chain(&self.cost)
            .any(|v| !v.is_finite())
        {
            return Err(LpError::Malformed("non-finite coefficient".into()));
        }
        Ok(())
    }
}

struct Tableau {
    m: usize,
    /// Structural plus artificial columns.
    cols: usize,
    /// Row-major m × cols matrix B⁻¹[A | I].
    a: Vec<f64>,
    /// Values of the basic variables.
    beta: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    at_upper: Vec<bool>,
    upper: Vec<f64>,
    reduced: Vec<f64>,
    iterations: usize,
    limit: usize,
}

enum Step {
    Optimal,
    Moved,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.rows.len();
        let n = lp.n;
        let cols = n + m;
        let mut a = vec![0.0; m * cols];
        let mut beta = vec![0.0; m];
        for i in 0..m {
            let shifted: f64 = lp.rhs[i] - lp.rows[i].iter().zip(&lp.lower).map(|(a, l)| a * l).sum::<f64>();
            let sign = if shifted < 0.0 { -1.0 } else { 1.0 };
            for j in 0..n {
                a[i * cols + j] = sign * lp.rows[i][j];
            }
            a[i * cols + n + i] = 1.0;
            beta[i] = sign * shifted;
        }
        let mut upper: Vec<f64> = lp.upper.iter().zip(&lp.lower).map(|(u, l)| u - l).collect();
        upper.extend(std::iter::repeat_n(f64::INFINITY, m));
        let mut is_basic = vec![false; cols];
        for i in 0..m {
            is_basic[n + i] = true;
        }
        Tableau {
            m,
            cols,
            a,
            beta,
            basis: (n..n + m).collect(),
            is_basic,
            at_upper: vec![false; cols],
            upper,
            reduced: vec![0.0; cols],
            iterations: 0,
            limit: 100 * (cols + m).max(10),
        }
    }

    fn n_struct(&self) -> usize {
        self.cols - self.m
    }

    fn price(&mut self, cost: &[f64]) {
        for j in 0..self.cols {
            let mut d = cost[j];
            for i in 0..self.m {
                d -= cost[self.basis[i]] * self.a[i * self.cols + j];
            }
            self.reduced[j] = if self.is_basic[j] { 0.0 } else { d };
        }
    }

    fn phase_one(&mut self) -> Result<(), LpError> {
        let n = self.n_struct();
        let cost: Vec<f64> = (0..self.cols).map(|j| if j >= n { 1.0 } else { 0.0 }).collect();
        self.price(&cost);
        self.run()?;
        let residual: f64 = (0..self.cols).filter(|&j| j >= n).map(|j| self.value_of(j)).sum();
        if residual > FEAS_TOL {
            return Err(LpError::Infeasible { residual });
        }
        // Artificials may not re-enter.
        for j in n..self.cols {
            self.upper[j] = 0.0;
            self.at_upper[j] = false;
        }
        Ok(())
    }

    fn phase_two(&mut self, lp: &LinearProgram) -> Result<(), LpError> {
        let mut cost = lp.cost.clone();
        cost.extend(std::iter::repeat_n(0.0, self.m));
        self.price(&cost);
        self.run()
    }

    fn run(&mut self) -> Result<(), LpError> {
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= self.limit {
                return Err(LpError::IterationLimit(self.limit));
            }
            match self.iterate(degenerate >= DEGENERATE_RUN, &mut degenerate)? {
                Step::Optimal => return Ok(()),
                Step::Moved => self.iterations += 1,
            }
        }
    }

    fn iterate(&mut self, bland: bool, degenerate: &mut usize) -> Result<Step, LpError> {
        // Entering variable.
        let mut enter = None;
        let mut best = 0.0;
        for j in 0..self.cols {
            if self.is_basic[j] || self.upper[j] == 0.0 {
                continue;
            }
            let d = self.reduced[j];
            let gain = if self.at_upper[j] { d } else { -d };
            if gain > COST_TOL {
                if bland {
                    enter = Some(j);
                    break;
                }
                if gain > best {
                    best = gain;
                    enter = Some(j);
                }
            }
        }
        let Some(j) = enter else {
            return Ok(Step::Optimal);
        };
        let dir = if self.at_upper[j] { -1.0 } else { 1.0 };

        // Ratio test; ties go to the lowest variable index.
        let mut step = self.upper[j];
        let mut leave: Option<(usize, bool)> = None;
        for i in 0..self.m {
            let alpha = dir * self.a[i * self.cols + j];
            let (limit, to_upper) = if alpha > PIVOT_TOL {
                (self.beta[i].max(0.0) / alpha, false)
            } else if alpha < -PIVOT_TOL && self.upper[self.basis[i]].is_finite() {
                (((self.upper[self.basis[i]] - self.beta[i]).max(0.0)) / -alpha, true)
            } else {
                continue;
            };
            let better = match leave {
                None => limit < step,
                Some((r, _)) => limit < step || (limit == step && self.basis[i] < self.basis[r]),
            };
            if better {
                step = limit;
                leave = Some((i, to_upper));
            }
        }
        if !step.is_finite() {
            return Err(LpError::Unbounded);
        }
        if step <= 1e-14 {
            *degenerate += 1;
        } else {
            *degenerate = 0;
        }

        for i in 0..self.m {
            self.beta[i] -= dir * step * self.a[i * self.cols + j];
        }
        match leave {
            None => {
                // Bound flip.
                self.at_upper[j] = !self.at_upper[j];
            }
            Some((r, to_upper)) => {
                let entering_value = if self.at_upper[j] { self.upper[j] - step } else { step };
                let old = self.basis[r];
                self.pivot(r, j);
                self.beta[r] = entering_value;
                self.is_basic[old] = false;
                self.at_upper[old] = to_upper;
                self.is_basic[j] = true;
                self.at_upper[j] = false;
                self.basis[r] = j;
            }
        }
        Ok(Step::Moved)
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let p = self.a[r * cols + j];
        for k in 0..cols {
            self.a[r * cols + k] /= p;
        }
        let (before, rest) = self.a.split_at_mut(r * cols);
        let (prow, after) = rest.split_at_mut(cols);
        for row in before.chunks_exact_mut(cols).chain(after.chunks_exact_mut(cols)) {
            let f = row[j];
            if f != 0.0 {
                for (x, &pr) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * pr;
                }
                row[j] = 0.0;
            }
        }
        let f = self.reduced[j];
        if f != 0.0 {
            for (d, &pr) in self.reduced.iter_mut().zip(prow.iter()) {
                *d -= f * pr;
            }
        }
        self.reduced[j] = 0.0;
    }

    fn value_of(&self, j: usize) -> f64 {
        if self.is_basic[j] {
            let r = self
                .basis
                .iter()
                .position(|&b| b == j)
                .expect("basic variable in basis");
            self.beta[r]
        } else if self.at_upper[j] {
            self.upper[j]
        } else {
            0.0
        }
    }

    fn values(&self) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.cols)
            .map(|j| {
                if self.at_upper[j] && !self.is_basic[j] {
                    self.upper[j]
                } else {
                    0.0
                }
            })
            .collect();
        for (r, &b) in self.basis.iter().enumerate() {
            x[b] = self.beta[r];
        }
        x
    }
}
