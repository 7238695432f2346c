//! SCA outer loop, the rotated real parametrization and phase-1 restoration.
//!
//! Everything internal is normalized by σ: `g = h/σ`, and ξ is measured in
//! units of σ². Each VUE's beamformer is written `x = U z` where the columns
//! of `U` span the real directions with `Im(g p) = 0` and the first column is
//! the matched filter, so `Re(g p) = ‖g‖ z₀` and `‖p‖ = ‖z‖`.

use num_complex::Complex64 as C64;

use super::barrier::{BarrierOptions, Objective, Program, Row};
use super::{BeamformingProblem, BeamformingSolution, ScaOptions, SolveStatus};
use crate::channel::inner;
use crate::error::{Error, Result};
use crate::params::{OutageSense, V2vInterference};

/// Shrink applied to starting points so they sit strictly inside the ball.
const INTERIOR: f64 = 0.999;

struct Basis {
    gnorm: f64,
    /// Columns of length `2B`.
    cols: Vec<Vec<f64>>,
}

impl Basis {
    fn new(g: &[C64]) -> Self {
        let b = g.len();
        let gnorm = g.iter().map(C64::norm_sqr).sum::<f64>().sqrt();
        let a_re: Vec<f64> = g
            .iter()
            .map(|c| c.re)
            .chain(g.iter().map(|c| -c.im))
            .collect();
        let a_im: Vec<f64> = g
            .iter()
            .map(|c| c.im)
            .chain(g.iter().map(|c| c.re))
            .collect();
        let mut fixed: Vec<Vec<f64>> = vec![a_im.iter().map(|v| v / gnorm).collect()];
        let mut cols = Vec::with_capacity(2 * b - 1);
        let candidates = std::iter::once(a_re).chain((0..2 * b).map(|k| {
            let mut e = vec![0.0; 2 * b];
            e[k] = 1.0;
            e
        }));
        for mut c in candidates {
            if cols.len() == 2 * b - 1 {
                break;
            }
            for _ in 0..2 {
                for f in fixed.iter() {
                    let d: f64 = c.iter().zip(f).map(|(x, y)| x * y).sum();
                    c.iter_mut().zip(f).for_each(|(x, y)| *x -= d * y);
                }
            }
            let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-8 {
                c.iter_mut().for_each(|x| *x /= n);
                fixed.push(c.clone());
                cols.push(c);
            }
        }
        Self { gnorm, cols }
    }

    #[cfg(test)]
    fn dim(&self) -> usize {
        self.cols.len()
    }

    fn to_complex(&self, z: &[f64]) -> Vec<C64> {
        let b = self.cols[0].len() / 2;
        let mut x = vec![0.0; 2 * b];
        for (zk, col) in z.iter().zip(&self.cols) {
            x.iter_mut().zip(col).for_each(|(xi, c)| *xi += zk * c);
        }
        (0..b).map(|k| C64::new(x[k], x[b + k])).collect()
    }

    /// Rotates `p` so that `g p` is real and non-negative, then projects onto
    /// the basis.
    fn from_complex(&self, g: &[C64], p: &[C64]) -> Vec<f64> {
        let gp = inner(g, p);
        let rot = if gp.norm() > 0.0 {
            gp.conj() / gp.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        let b = p.len();
        let x: Vec<f64> = p
            .iter()
            .map(|c| (c * rot).re)
            .chain(p.iter().map(|c| (c * rot).im))
            .collect();
        self.cols
            .iter()
            .map(|col| col.iter().zip(&x).map(|(a, b)| a * b).sum())
            .collect::<Vec<f64>>()
            .into_iter()
            .take(2 * b - 1)
            .collect()
    }
}

/// A sharing row after normalization, with `Q(z) = Σ w_k z_k²`.
struct Outage {
    active: usize,
    weights: Vec<(usize, f64)>,
    /// `c̃ − 1`, with `c̃ = p_v|h_v|² / (γ_ef σ²)`.
    level: f64,
}

struct Setup<'a> {
    prob: &'a BeamformingProblem,
    opts: &'a ScaOptions,
    /// VUE index of each active block.
    active: Vec<usize>,
    bases: Vec<Basis>,
    xi_fixed: Vec<f64>,
    outages: Vec<Outage>,
    /// Some constraint cannot hold for any beamformer.
    unattainable: bool,
    d: usize,
}

impl<'a> Setup<'a> {
    fn new(prob: &'a BeamformingProblem, opts: &'a ScaOptions) -> Result<Self> {
        let sigma = prob.sigma2.sqrt();
        let mut active = Vec::new();
        let mut bases = Vec::new();
        let mut xi_fixed = Vec::new();
        let mut unattainable = false;
        for (i, h) in prob.h.iter().enumerate() {
            let g: Vec<C64> = h.iter().map(|c| c / sigma).collect();
            let basis = Basis::new(&g);
            if basis.gnorm > 0.0 && basis.gnorm.is_finite() {
                active.push(i);
                bases.push(basis);
                xi_fixed.push(1.0 + prob.g_v[i] / prob.sigma2);
            } else if prob.mu_floor > 0.0 {
                unattainable = true;
            }
        }
        let d = 2 * prob.n_antennas() - 1;
        let mut outages = Vec::new();
        for row in &prob.sharing {
            let level = row.v2v_signal / (prob.gamma_ef * prob.sigma2) - 1.0;
            let slot = active.iter().position(|&i| i == row.vue);
            match prob.outage_sense {
                OutageSense::Lower if level <= 0.0 => unattainable = true,
                OutageSense::PaperUpper if level <= 0.0 => {}
                OutageSense::PaperUpper if !opts.linearize_reverse_convex => {
                    return Err(Error::NonConvex)
                }
                _ => match slot {
                    // An inactive VUE transmits nothing, so Q = 0.
                    None => unattainable |= prob.outage_sense == OutageSense::PaperUpper,
                    Some(a) => {
                        let weights = match prob.interference {
                            V2vInterference::Paper => vec![(0, bases[a].gnorm.powi(2))],
                            V2vInterference::CrossLink => {
                                (0..d).map(|k| (k, row.cross_gain / prob.sigma2)).collect()
                            }
                        };
                        outages.push(Outage {
                            active: a,
                            weights,
                            level,
                        });
                    }
                },
            }
        }
        Ok(Self {
            prob,
            opts,
            active,
            bases,
            xi_fixed,
            outages,
            unattainable,
            d,
        })
    }

    fn block(&self) -> usize {
        self.d + 1 + usize::from(self.opts.xi_free)
    }

    fn z_at(&self, a: usize) -> usize {
        a * self.block()
    }

    fn mu_at(&self, a: usize) -> usize {
        a * self.block() + self.d
    }

    fn xi_at(&self, a: usize) -> usize {
        a * self.block() + self.d + 1
    }

    fn power_row(&self, z_index: impl Fn(usize) -> usize) -> Row {
        let quad = (0..self.active.len())
            .flat_map(|a| (0..self.d).map(move |k| (a, k)))
            .map(|(a, k)| (z_index(a) + k, 1.0))
            .collect();
        Row {
            quad,
            lin: Vec::new(),
            rhs: self.prob.p_max,
        }
    }

    /// Outage row for block offset `z0`, linearized at `z_prev` when the
    /// sense is reverse-convex. `shift` relaxes the row.
    fn outage_row(&self, o: &Outage, z0: usize, z_prev: &[f64], shift: f64) -> Row {
        match self.prob.outage_sense {
            OutageSense::Lower => Row {
                quad: o.weights.iter().map(|(k, w)| (z0 + k, *w)).collect(),
                lin: Vec::new(),
                rhs: o.level + shift,
            },
            OutageSense::PaperUpper => {
                let q_prev: f64 = o.weights.iter().map(|(k, w)| w * z_prev[*k].powi(2)).sum();
                Row {
                    quad: Vec::new(),
                    lin: o
                        .weights
                        .iter()
                        .map(|(k, w)| (z0 + k, -2.0 * w * z_prev[*k]))
                        .collect(),
                    rhs: -q_prev - o.level + shift,
                }
            }
        }
    }

    fn matched_start(&self) -> Vec<Vec<f64>> {
        let amp = INTERIOR * (self.prob.p_max / self.active.len().max(1) as f64).sqrt();
        (0..self.active.len())
            .map(|_| {
                let mut z = vec![0.0; self.d];
                z[0] = amp;
                z
            })
            .collect()
    }

    fn from_init(&self, init: &BeamformingSolution) -> Vec<Vec<f64>> {
        let sigma = self.prob.sigma2.sqrt();
        let p = super::project_to_ball(&init.p, self.prob.p_max);
        self.active
            .iter()
            .zip(&self.bases)
            .map(|(&i, basis)| {
                let g: Vec<C64> = self.prob.h[i].iter().map(|c| c / sigma).collect();
                let mut z = basis.from_complex(&g, &p[i]);
                z.iter_mut().for_each(|v| *v *= INTERIOR);
                if z[0] <= 0.0 {
                    z[0] = 1e-9 * self.prob.p_max.sqrt();
                }
                z
            })
            .collect()
    }

    /// Soft-row values at `z`: the μ floor as a signal requirement plus the
    /// outage rows linearized at `z` itself.
    fn soft_values(&self, zs: &[Vec<f64>], floor: f64) -> Vec<f64> {
        let mut out = Vec::new();
        if floor > 0.0 {
            for (a, z) in zs.iter().enumerate() {
                out.push((self.xi_fixed[a] * floor).sqrt() - self.bases[a].gnorm * z[0]);
            }
        }
        for o in &self.outages {
            let z = &zs[o.active];
            out.push(self.outage_row(o, 0, z, 0.0).value(z));
        }
        out
    }

    fn hard_ok(&self, zs: &[Vec<f64>]) -> bool {
        let power: f64 = zs.iter().flatten().map(|v| v * v).sum();
        power < self.prob.p_max && zs.iter().all(|z| z[0] > 0.0)
    }

    /// Minimizes a common slack `u` over the soft rows.
    fn phase1(&self, start: &[Vec<f64>], floor: f64) -> (Vec<Vec<f64>>, f64) {
        let n_act = self.active.len();
        let d = self.d;
        let u = n_act * d;
        let mut rows = vec![self.power_row(|a| a * d)];
        for a in 0..n_act {
            rows.push(Row::linear(vec![(a * d, -1.0)], 0.0));
            if floor > 0.0 {
                rows.push(Row::linear(
                    vec![(a * d, -self.bases[a].gnorm), (u, -1.0)],
                    -(self.xi_fixed[a] * floor).sqrt(),
                ));
            }
        }
        for o in &self.outages {
            let mut r = self.outage_row(o, o.active * d, &start[o.active], 0.0);
            r.lin.push((u, -1.0));
            rows.push(r);
        }
        let program = Program {
            n: u + 1,
            objective: Objective::Linear(vec![(u, 1.0)]),
            rows,
        };
        let worst = self
            .soft_values(start, floor)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut y0: Vec<f64> = start.iter().flatten().copied().collect();
        y0.push(worst + 1.0);
        let opts = BarrierOptions {
            t0: 1.0 / (1.0 + worst.abs()),
            gap_rel: 1e-10,
            ..BarrierOptions::default()
        };
        let y = program
            .solve_with(&y0, &opts, |y, gap| y[u] < -1.0 || y[u] - gap > 0.0)
            .unwrap_or(y0);
        let zs: Vec<Vec<f64>> = (0..n_act).map(|a| y[a * d..(a + 1) * d].to_vec()).collect();
        let soft = self
            .soft_values(&zs, floor)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        (zs, soft.min(y[u]))
    }

    /// Main convex program linearized at `(zs, xis)`; returns the program
    /// and a strictly feasible start.
    fn program(
        &self,
        zs: &[Vec<f64>],
        xis: &[f64],
        floor: f64,
        shift: f64,
        depth: f64,
    ) -> (Program, Vec<f64>) {
        let n_act = self.active.len();
        let mut rows = vec![self.power_row(|a| self.z_at(a))];
        let mut y0 = vec![0.0; n_act * self.block()];
        for a in 0..n_act {
            let (z, m) = (self.z_at(a), self.mu_at(a));
            let s = self.bases[a].gnorm * zs[a][0];
            let xi0 = xis[a];
            let mu0 = s * s / xi0;
            let mut lin = vec![(m, 0.5 * (xi0 / mu0).sqrt()), (z, -self.bases[a].gnorm)];
            let rhs = if self.opts.xi_free {
                lin.push((self.xi_at(a), 0.5 * (mu0 / xi0).sqrt()));
                y0[self.xi_at(a)] = xi0;
                0.0
            } else {
                -0.5 * (mu0 / xi0).sqrt() * xi0
            };
            rows.push(Row::linear(lin, rhs));
            rows.push(Row::linear(vec![(m, -1.0)], -floor));
            rows.push(Row::linear(vec![(z, -1.0)], 0.0));
            if self.opts.xi_free {
                rows.push(Row::linear(vec![(self.xi_at(a), -1.0)], -self.xi_fixed[a]));
            }
            y0[z..z + self.d].copy_from_slice(&zs[a]);
            y0[m] = floor + depth * (mu0 - floor);
        }
        for o in &self.outages {
            rows.push(self.outage_row(o, self.z_at(o.active), &zs[o.active], shift));
        }
        let program = Program {
            n: y0.len(),
            objective: Objective::NegLogSum((0..n_act).map(|a| self.mu_at(a)).collect()),
            rows,
        };
        (program, y0)
    }

    fn unpack(&self, y: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let n_act = self.active.len();
        let zs = (0..n_act)
            .map(|a| y[self.z_at(a)..self.z_at(a) + self.d].to_vec())
            .collect();
        let mus = (0..n_act).map(|a| y[self.mu_at(a)]).collect();
        let xis = (0..n_act)
            .map(|a| {
                if self.opts.xi_free {
                    y[self.xi_at(a)]
                } else {
                    self.xi_fixed[a]
                }
            })
            .collect();
        (zs, mus, xis)
    }

    fn objective(&self, mus: &[f64]) -> f64 {
        mus.iter().map(|m| self.prob.w0 * (1.0 + m).log2()).sum()
    }

    fn solution(
        &self,
        zs: &[Vec<f64>],
        mus: &[f64],
        xis: &[f64],
        trace: Vec<f64>,
        status: SolveStatus,
        violation: f64,
    ) -> BeamformingSolution {
        let n = self.prob.n_vues();
        let b = self.prob.n_antennas();
        let mut p = vec![vec![C64::new(0.0, 0.0); b]; n];
        let mut mu = vec![0.0; n];
        let mut xi: Vec<f64> = self
            .prob
            .g_v
            .iter()
            .map(|g| 1.0 + g / self.prob.sigma2)
            .collect();
        for (a, &i) in self.active.iter().enumerate() {
            p[i] = self.bases[a].to_complex(&zs[a]);
            mu[i] = mus[a];
            xi[i] = xis[a];
        }
        BeamformingSolution {
            p,
            mu,
            xi,
            iterate_trace: trace,
            status,
            phase1_violation: violation,
        }
    }

    fn start_xis(&self) -> Vec<f64> {
        let bump = if self.opts.xi_free { 1.0 + 1e-6 } else { 1.0 };
        self.xi_fixed.iter().map(|x| x * bump).collect()
    }

    /// Strictly feasible starting beamformers, the μ floor and outage shift
    /// to use, and the phase-1 violation.
    fn restore(&self, init: Option<&BeamformingSolution>) -> (Vec<Vec<f64>>, f64, f64, f64) {
        let floor = self.prob.mu_floor.max(0.0);
        let candidates = init
            .map(|s| self.from_init(s))
            .into_iter()
            .chain(std::iter::once(self.matched_start()));
        let mut last = self.matched_start();
        for zs in candidates {
            if self.hard_ok(&zs) && self.soft_values(&zs, floor).iter().all(|v| *v < 0.0) {
                return (zs, floor, 0.0, 0.0);
            }
            last = zs;
        }
        let (zs, u) = self.phase1(&last, floor);
        if u < 0.0 && self.hard_ok(&zs) {
            return (zs, floor, 0.0, u);
        }
        let shift = u.max(0.0) * (1.0 + 1e-3) + 1e-9;
        let zs = if self.hard_ok(&zs) {
            zs
        } else {
            self.matched_start()
        };
        (zs, 0.0, shift, u)
    }
}

/// Phase-aligned equal-power start, repaired by a phase-1 slack minimization
/// when it violates the floor or outage rows.
pub fn feasibility_restore(
    prob: &BeamformingProblem,
    opts: &ScaOptions,
) -> Result<BeamformingSolution> {
    prob.validate()?;
    let setup = Setup::new(prob, opts)?;
    let (zs, _, shift, violation) = setup.restore(None);
    let xis = setup.start_xis();
    let mus: Vec<f64> = zs
        .iter()
        .zip(&setup.bases)
        .zip(&xis)
        .map(|((z, b), x)| (b.gnorm * z[0]).powi(2) / x)
        .collect();
    let status = if setup.unattainable || shift > 0.0 {
        SolveStatus::Infeasible
    } else {
        SolveStatus::Optimal
    };
    Ok(setup.solution(&zs, &mus, &xis, Vec::new(), status, violation))
}

/// Runs SCA from `init` (or a restored start) until the relative objective
/// gain drops below `tol_rel` or `max_iters` iterations have run.
pub fn sca_solve(
    prob: &BeamformingProblem,
    init: Option<&BeamformingSolution>,
    opts: &ScaOptions,
) -> Result<BeamformingSolution> {
    prob.validate()?;
    let setup = Setup::new(prob, opts)?;
    if setup.active.is_empty() {
        let status = if setup.unattainable {
            SolveStatus::Infeasible
        } else {
            SolveStatus::Optimal
        };
        return Ok(setup.solution(&[], &[], &[], vec![0.0], status, 0.0));
    }
    let (mut zs, floor, shift, violation) = setup.restore(init);
    let mut xis = setup.start_xis();
    let mut mus: Vec<f64> = vec![floor; setup.active.len()];
    let mut trace: Vec<f64> = Vec::new();
    let mut status = SolveStatus::MaxIters;
    let cold = BarrierOptions::default();
    // Later iterations start next to the previous optimum, so the barrier
    // path can begin further along.
    let warm = BarrierOptions { t0: 1e3, ..cold };
    for j in 0..opts.max_iters.max(1) {
        let (barrier, depth) = if j == 0 { (cold, 0.5) } else { (warm, 0.99) };
        let (program, y0) = setup.program(&zs, &xis, floor, shift, depth);
        let y = match program.solve(&y0, &barrier) {
            Ok(y) => y,
            Err(_) => {
                status = SolveStatus::Optimal;
                break;
            }
        };
        let (nz, nmu, nxi) = setup.unpack(&y);
        let obj = setup.objective(&nmu);
        if let Some(&prev) = trace.last() {
            // The previous iterate is feasible for this program, so a lower
            // value is barrier inexactness; keep the previous point.
            if obj < prev {
                status = SolveStatus::Optimal;
                break;
            }
        }
        let prev = trace.last().copied();
        trace.push(obj);
        zs = nz;
        mus = nmu;
        xis = nxi;
        if let Some(prev) = prev {
            if (obj - prev) <= opts.tol_rel * prev.abs().max(f64::MIN_POSITIVE) {
                status = SolveStatus::Optimal;
                break;
            }
        }
    }
    if setup.unattainable || shift > 0.0 {
        status = SolveStatus::Infeasible;
    }
    Ok(setup.solution(&zs, &mus, &xis, trace, status, violation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamformer::{grid_oracle, water_filling};
    use crate::channel::norm_sqr;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    pub(crate) fn base_problem(h: Vec<Vec<C64>>) -> BeamformingProblem {
        let n = h.len();
        BeamformingProblem {
            h,
            g_v: vec![0.0; n],
            sharing: Vec::new(),
            sigma2: 1e-13,
            p_max: 2.0,
            mu_floor: 2f64.powf(0.1) - 1.0,
            gamma_ef: 250.0,
            w0: 1e7,
            outage_sense: OutageSense::Lower,
            interference: V2vInterference::Paper,
        }
    }

    #[test]
    fn basis_is_orthonormal_and_rotated() {
        let g = vec![c(1.0, -2.0), c(0.5, 0.3), c(-0.2, 0.9)];
        let b = Basis::new(&g);
        assert_eq!(b.dim(), 5);
        for (k, u) in b.cols.iter().enumerate() {
            for (l, v) in b.cols.iter().enumerate() {
                let d: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
                assert!((d - if k == l { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        let z = [0.7, -0.1, 0.4, 0.2, -0.3];
        let p = b.to_complex(&z);
        let gp = inner(&g, &p);
        assert!(gp.im.abs() < 1e-12);
        assert!((gp.re - b.gnorm * 0.7).abs() < 1e-12);
        assert!((norm_sqr(&p) - z.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-12);
        let back = b.from_complex(&g, &p);
        for (x, y) in back.iter().zip(&z) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn single_link_b1_matches_mrt() {
        let h = c(3e-6, -4e-6);
        let prob = base_problem(vec![vec![h]]);
        let sol = sca_solve(&prob, None, &ScaOptions::default()).unwrap();
        let want = prob.w0 * (1.0 + prob.p_max * h.norm_sqr() / prob.sigma2).log2();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(
            (sol.objective() - want).abs() / want < 1e-6,
            "{} vs {want}",
            sol.objective()
        );
        let phase = (h * sol.p[0][0]).arg();
        assert!(phase.abs() < 1e-6);
    }

    #[test]
    fn b2_matched_filter() {
        let h = vec![c(1e-6, 2e-6), c(-3e-6, 0.5e-6)];
        let prob = base_problem(vec![h.clone()]);
        let sol = sca_solve(&prob, None, &ScaOptions::default()).unwrap();
        let want = prob.w0 * (1.0 + prob.p_max * norm_sqr(&h) / prob.sigma2).log2();
        assert!((sol.objective() - want).abs() / want < 1e-5);
        let scale = (prob.p_max / norm_sqr(&h)).sqrt();
        for (p, hh) in sol.p[0].iter().zip(&h) {
            assert!((p - hh.conj() * scale).norm() < 1e-4 * scale * hh.norm().max(1e-9) + 1e-6);
        }
    }

    #[test]
    fn multi_vue_water_filling() {
        let h = vec![
            vec![c(2e-6, 0.0), c(0.0, 1e-6)],
            vec![c(-1e-6, 1e-6), c(0.5e-6, 0.0)],
            vec![c(0.3e-6, 0.0), c(0.0, 0.4e-6)],
        ];
        let mut prob = base_problem(h.clone());
        prob.g_v = vec![0.0, 2e-13, 1e-14];
        let sol = sca_solve(&prob, None, &ScaOptions::default()).unwrap();
        let gains: Vec<f64> = h
            .iter()
            .zip(&prob.g_v)
            .map(|(hh, g)| norm_sqr(hh) / (prob.sigma2 + g))
            .collect();
        let powers = water_filling(&gains, prob.p_max);
        let want: f64 = gains
            .iter()
            .zip(&powers)
            .map(|(g, p)| prob.w0 * (1.0 + g * p).log2())
            .sum();
        assert!(
            (sol.objective() - want).abs() / want < 1e-6,
            "{} vs {want}",
            sol.objective()
        );
    }

    #[test]
    fn unreachable_floor_is_infeasible() {
        let h = c(1e-7, 0.0);
        let mut prob = base_problem(vec![vec![h]]);
        let capacity_se = (1.0 + prob.p_max * h.norm_sqr() / prob.sigma2).log2();
        prob.mu_floor = 2f64.powf(capacity_se * 1.5) - 1.0;
        let sol = sca_solve(&prob, None, &ScaOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert!(sol.phase1_violation > 0.0);
        assert!(sol.total_power() <= prob.p_max + 1e-9);
    }

    #[test]
    fn restore_is_immediate_when_feasible() {
        let prob = base_problem(vec![vec![c(1e-6, 0.0)], vec![c(0.0, 1e-6)]]);
        let s = feasibility_restore(&prob, &ScaOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.phase1_violation, 0.0);
        // constant domination: c̃ ≤ 1 drops the reversed row
        let mut upper = prob.clone();
        upper.outage_sense = OutageSense::PaperUpper;
        upper.sharing.push(super::super::SharingRow {
            vue: 0,
            pair: 0,
            v2v_signal: 0.5 * upper.gamma_ef * upper.sigma2,
            cross_gain: 0.0,
        });
        let s = feasibility_restore(&upper, &ScaOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
    }

    #[test]
    fn nonconvex_rejected_without_linearization() {
        let mut prob = base_problem(vec![vec![c(1e-6, 0.0)]]);
        prob.outage_sense = OutageSense::PaperUpper;
        prob.sharing.push(super::super::SharingRow {
            vue: 0,
            pair: 0,
            v2v_signal: 10.0 * prob.gamma_ef * prob.sigma2,
            cross_gain: 0.0,
        });
        let opts = ScaOptions {
            linearize_reverse_convex: false,
            ..ScaOptions::default()
        };
        assert!(matches!(
            sca_solve(&prob, None, &opts),
            Err(Error::NonConvex)
        ));
        let sol = sca_solve(&prob, None, &ScaOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
    }

    fn random_micro(rng: &mut impl Rng, sense: OutageSense) -> BeamformingProblem {
        let h = c(
            rng.random_range(-1.0..1.0) * 1e-6,
            rng.random_range(-1.0..1.0) * 1e-6,
        );
        let mut prob = base_problem(vec![vec![h]]);
        prob.outage_sense = sense;
        prob.g_v = vec![rng.random_range(0.0..3.0) * prob.sigma2];
        let snr = prob.p_max * h.norm_sqr() / prob.sigma2;
        // V2V signal placed so the outage row cuts through the power range.
        let frac = rng.random_range(0.05..0.95);
        prob.sharing.push(super::super::SharingRow {
            vue: 0,
            pair: 0,
            v2v_signal: (1.0 + frac * snr) * prob.gamma_ef * prob.sigma2,
            cross_gain: 0.0,
        });
        prob
    }

    #[test]
    fn micro_instances_match_grid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for sense in [OutageSense::Lower, OutageSense::PaperUpper] {
            for _ in 0..10 {
                let prob = random_micro(&mut rng, sense);
                let sol = sca_solve(&prob, None, &ScaOptions::default()).unwrap();
                let grid = grid_oracle(&prob, 400, 64).unwrap();
                assert_ne!(sol.status, SolveStatus::Infeasible);
                assert!(
                    sol.objective() >= grid.value * (1.0 - 5e-3),
                    "{sense:?} {} < {}",
                    sol.objective(),
                    grid.value
                );
            }
        }
    }
}
