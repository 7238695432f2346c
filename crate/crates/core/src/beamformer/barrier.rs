//! Log-barrier Newton method for small convex programs whose constraints are
//! separable convex quadratics `Σ w_j y_j² + aᵀy ≤ rhs` with `w ≥ 0`.

use nalgebra::{DMatrix, DVector};

/// `Σ quad_j y_j² + Σ lin_j y_j − rhs ≤ 0`.
#[derive(Debug, Clone, Default)]
pub(crate) struct Row {
    pub quad: Vec<(usize, f64)>,
    pub lin: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Row {
    pub fn linear(lin: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self {
            quad: Vec::new(),
            lin,
            rhs,
        }
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        self.quad
            .iter()
            .map(|(j, w)| w * y[*j] * y[*j])
            .sum::<f64>()
            + self.lin.iter().map(|(j, a)| a * y[*j]).sum::<f64>()
            - self.rhs
    }

    fn touched(&self) -> impl Iterator<Item = usize> + '_ {
        self.quad.iter().chain(&self.lin).map(|(j, _)| *j)
    }

    /// Sparse gradient, merged per index.
    fn gradient(&self, y: &[f64]) -> Vec<(usize, f64)> {
        let mut g: Vec<(usize, f64)> = Vec::with_capacity(self.quad.len() + self.lin.len());
        for j in self.touched() {
            if g.iter().any(|(k, _)| *k == j) {
                continue;
            }
            let mut v = 0.0;
            for (k, w) in &self.quad {
                if *k == j {
                    v += 2.0 * w * y[j];
                }
            }
            for (k, a) in &self.lin {
                if *k == j {
                    v += a;
                }
            }
            g.push((j, v));
        }
        g
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Objective {
    /// Minimize `−Σ ln(1 + y_k)`.
    NegLogSum(Vec<usize>),
    /// Minimize `cᵀy`.
    Linear(Vec<(usize, f64)>),
}

impl Objective {
    fn value(&self, y: &[f64]) -> f64 {
        match self {
            Objective::NegLogSum(idx) => idx
                .iter()
                .map(|k| {
                    if y[*k] > -1.0 {
                        -(1.0 + y[*k]).ln()
                    } else {
                        f64::INFINITY
                    }
                })
                .sum(),
            Objective::Linear(c) => c.iter().map(|(j, v)| v * y[*j]).sum(),
        }
    }

    fn in_domain(&self, y: &[f64]) -> bool {
        match self {
            Objective::NegLogSum(idx) => idx.iter().all(|k| y[*k] > -1.0),
            Objective::Linear(_) => true,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Program {
    pub n: usize,
    pub objective: Objective,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BarrierOptions {
    pub t0: f64,
    pub growth: f64,
    /// Stop once `m / t` falls below this times `max(1, |f0|)`.
    pub gap_rel: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            t0: 1.0,
            growth: 30.0,
            gap_rel: 1e-9,
            newton_tol: 1e-10,
            max_newton: 80,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BarrierFailure {
    NotStrictlyFeasible,
    Numerical,
}

impl Program {
    pub fn strictly_feasible(&self, y: &[f64]) -> bool {
        self.objective.in_domain(y) && self.rows.iter().all(|r| r.value(y) < 0.0)
    }

    fn phi(&self, t: f64, y: &[f64]) -> f64 {
        if !self.strictly_feasible(y) {
            return f64::INFINITY;
        }
        t * self.objective.value(y) - self.rows.iter().map(|r| (-r.value(y)).ln()).sum::<f64>()
    }

    fn grad_hess(&self, t: f64, y: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n;
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        match &self.objective {
            Objective::NegLogSum(idx) => {
                for k in idx {
                    let d = 1.0 + y[*k];
                    g[*k] -= t / d;
                    h[(*k, *k)] += t / (d * d);
                }
            }
            Objective::Linear(c) => {
                for (j, v) in c {
                    g[*j] += t * v;
                }
            }
        }
        for row in &self.rows {
            let f = row.value(y);
            let inv = -1.0 / f;
            let rg = row.gradient(y);
            for (j, v) in &rg {
                g[*j] += inv * v;
            }
            let inv2 = inv * inv;
            for (a, va) in &rg {
                for (b, vb) in &rg {
                    h[(*a, *b)] += inv2 * va * vb;
                }
            }
            for (j, w) in &row.quad {
                h[(*j, *j)] += 2.0 * w * inv;
            }
        }
        (g, h)
    }

    fn newton_direction(g: &DVector<f64>, h: DMatrix<f64>) -> Option<DVector<f64>> {
        let scale = h.diagonal().amax().max(1e-300);
        let mut reg = 0.0;
        for _ in 0..8 {
            let mut hh = h.clone();
            if reg > 0.0 {
                for k in 0..hh.nrows() {
                    hh[(k, k)] += reg;
                }
            }
            if let Some(ch) = hh.cholesky() {
                let dx = ch.solve(&(-g));
                if dx.iter().all(|v| v.is_finite()) {
                    return Some(dx);
                }
            }
            reg = if reg == 0.0 {
                scale * 1e-14
            } else {
                reg * 100.0
            };
        }
        None
    }

    /// Minimizes the centering objective for fixed `t`, in place.
    fn center(
        &self,
        t: f64,
        y: &mut Vec<f64>,
        opts: &BarrierOptions,
    ) -> Result<(), BarrierFailure> {
        for _ in 0..opts.max_newton {
            let (g, h) = self.grad_hess(t, y);
            let dx = Self::newton_direction(&g, h).ok_or(BarrierFailure::Numerical)?;
            let decrement = -g.dot(&dx);
            if !decrement.is_finite() {
                return Err(BarrierFailure::Numerical);
            }
            let f0 = self.phi(t, y);
            // The second bound is the rounding floor of φ at large t.
            if decrement / 2.0 <= opts.newton_tol.max(1e-13 * f0.abs()) {
                return Ok(());
            }
            let mut s = 1.0;
            let mut trial = y.clone();
            loop {
                for (k, v) in trial.iter_mut().enumerate() {
                    *v = y[k] + s * dx[k];
                }
                let f1 = self.phi(t, &trial);
                if f1.is_finite() && f1 <= f0 - 0.25 * s * decrement {
                    break;
                }
                s *= 0.5;
                if s < 1e-12 {
                    // No progress possible at this precision.
                    return Ok(());
                }
            }
            std::mem::swap(y, &mut trial);
        }
        Ok(())
    }

    /// Barrier path from the strictly feasible `y0`. `stop` sees each
    /// centered point and its duality gap `m/t`, and ends the path early
    /// when it returns true.
    pub fn solve_with(
        &self,
        y0: &[f64],
        opts: &BarrierOptions,
        mut stop: impl FnMut(&[f64], f64) -> bool,
    ) -> Result<Vec<f64>, BarrierFailure> {
        if !self.strictly_feasible(y0) {
            return Err(BarrierFailure::NotStrictlyFeasible);
        }
        let m = self.rows.len().max(1) as f64;
        let mut y = y0.to_vec();
        let mut t = opts.t0;
        for _ in 0..40 {
            self.center(t, &mut y, opts)?;
            if stop(&y, m / t) {
                break;
            }
            let scale = self.objective.value(&y).abs().max(1.0);
            if m / t < opts.gap_rel * scale {
                break;
            }
            t *= opts.growth;
        }
        Ok(y)
    }

    pub fn solve(&self, y0: &[f64], opts: &BarrierOptions) -> Result<Vec<f64>, BarrierFailure> {
        self.solve_with(y0, opts, |_, _| false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_program_on_disc() {
        // min x + y on the unit disc: optimum −√2 at (−1/√2, −1/√2).
        let p = Program {
            n: 2,
            objective: Objective::Linear(vec![(0, 1.0), (1, 1.0)]),
            rows: vec![Row {
                quad: vec![(0, 1.0), (1, 1.0)],
                lin: vec![],
                rhs: 1.0,
            }],
        };
        let y = p.solve(&[0.0, 0.0], &BarrierOptions::default()).unwrap();
        assert!((y[0] + 0.5f64.sqrt()).abs() < 1e-8);
        assert!((y[1] + 0.5f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn log_sum_water_filling() {
        // max ln(1+a) + ln(1+b), a + b ≤ 3, a ≤ 1: optimum a = 1, b = 2.
        let p = Program {
            n: 2,
            objective: Objective::NegLogSum(vec![0, 1]),
            rows: vec![
                Row::linear(vec![(0, 1.0), (1, 1.0)], 3.0),
                Row::linear(vec![(0, 1.0)], 1.0),
                Row::linear(vec![(0, -1.0)], 0.0),
                Row::linear(vec![(1, -1.0)], 0.0),
            ],
        };
        let y = p.solve(&[0.1, 0.1], &BarrierOptions::default()).unwrap();
        assert!(
            (y[0] - 1.0).abs() < 1e-8 && (y[1] - 2.0).abs() < 1e-8,
            "{y:?}"
        );
    }

    #[test]
    fn rejects_infeasible_start() {
        let p = Program {
            n: 1,
            objective: Objective::Linear(vec![(0, 1.0)]),
            rows: vec![Row::linear(vec![(0, 1.0)], 0.0)],
        };
        assert_eq!(
            p.solve(&[1.0], &BarrierOptions::default()),
            Err(BarrierFailure::NotStrictlyFeasible)
        );
    }
}
