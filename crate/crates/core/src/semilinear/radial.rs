//! Radially symmetric problems on the unit ball of R^3:
//! `-(r^2 u')'/r^2 = f(u) + w δ_0`, `u(1) = ψ`, with the power
//! absorption `f(u) = -u|u|^{p-1}` truncated below at `-m`.
//!
//! Finite volumes on a logarithmically graded grid `r_min = r_0 < ... <
//! r_{N-1} = 1`; the Dirac mass enters as the flux `w / 4π` through the
//! sphere of radius `r_min`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadialProblem {
    pub p: f64,
    pub weight: f64,
    pub psi: f64,
    pub nodes: usize,
    pub r_min: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RadialProblem {
    fn default() -> Self {
        Self {
            p: 2.0,
            weight: 1.0,
            psi: 0.0,
            nodes: 512,
            r_min: 1e-4,
            tol: 1e-10,
            max_iter: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    pub r: Vec<f64>,
    /// Cell volumes divided by 4π (`∫ r^2 dr` over each dual cell).
    pub vol: Vec<f64>,
    /// `r_{i+1/2}^2 / (r_{i+1} - r_i)` for each interval.
    pub cond: Vec<f64>,
}

impl RadialGrid {
    pub fn new(nodes: usize, r_min: f64) -> Self {
        assert!(nodes >= 3 && r_min > 0.0 && r_min < 1.0);
        let r: Vec<f64> = (0..nodes)
            .map(|i| {
                if i == nodes - 1 {
                    1.0
                } else {
                    r_min * (1.0 / r_min).powf(i as f64 / (nodes - 1) as f64)
                }
            })
            .collect();
        let face: Vec<f64> = r.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
        let cond = r.windows(2).zip(&face).map(|(w, f)| f * f / (w[1] - w[0])).collect();
        let vol = (0..nodes)
            .map(|i| {
                let lo = if i == 0 { r[0] } else { face[i - 1] };
                let hi = if i == nodes - 1 { r[i] } else { face[i] };
                (hi.powi(3) - lo.powi(3)) / 3.0
            })
            .collect();
        Self { r, vol, cond }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialSolution {
    pub grid: RadialGrid,
    pub u: Vec<f64>,
    pub truncation: f64,
    pub p: f64,
    pub iterations: usize,
}

/// `f_m(u) = max(-u|u|^{p-1}, -m)`; `m = ∞` disables truncation.
pub fn absorption(u: f64, p: f64, m: f64) -> f64 {
    (-u * u.abs().powf(p - 1.0)).max(-m)
}

fn absorption_slope(p: f64, m: f64) -> f64 {
    // Largest |f_m'|, reached where |u|^p = m.
    if m.is_finite() {
        p * m.powf((p - 1.0) / p)
    } else {
        f64::INFINITY
    }
}

/// Tridiagonal solve; `a` sub-, `b` main, `c` super-diagonal.
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = if i + 1 < n { c[i] / m } else { 0.0 };
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Solves the truncated problem by shifted Picard iteration
/// `(L + c V) u_new = V (f_m(u) + c u) + source`, with `c` the Lipschitz
/// bound of `f_m`, which makes each sweep monotone and contractive.
pub fn solve_radial(problem: &RadialProblem, m: f64, warm: Option<&[f64]>) -> RadialSolution {
    let grid = RadialGrid::new(problem.nodes, problem.r_min);
    let n = problem.nodes;
    let shift = absorption_slope(problem.p, m).min(1e12);
    let mut u = match warm {
        Some(w) if w.len() == n => w.to_vec(),
        _ => vec![problem.psi; n],
    };
    let (mut a, mut b, mut c) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n - 1 {
        let k = grid.cond[i];
        b[i] += k;
        c[i] -= k;
        if i + 1 < n - 1 {
            b[i + 1] += k;
            a[i + 1] -= k;
        }
    }
    for i in 0..n - 1 {
        b[i] += shift * grid.vol[i];
    }
    b[n - 1] = 1.0;
    a[n - 1] = 0.0;
    let mut iterations = 0;
    loop {
        let mut rhs: Vec<f64> = (0..n)
            .map(|i| grid.vol[i] * (absorption(u[i], problem.p, m) + shift * u[i]))
            .collect();
        rhs[0] += problem.weight / (4.0 * PI);
        // Move the Dirichlet value at r = 1 to the right-hand side.
        rhs[n - 2] += grid.cond[n - 2] * problem.psi;
        c[n - 2] = 0.0;
        rhs[n - 1] = problem.psi;
        let next = thomas(&a, &b, &c, &rhs);
        iterations += 1;
        let scale = next.iter().fold(1.0f64, |s, v| s.max(v.abs()));
        let diff = next.iter().zip(&u).fold(0.0f64, |s, (x, y)| s.max((x - y).abs()));
        u = next;
        if diff <= problem.tol * scale || iterations >= problem.max_iter {
            break;
        }
    }
    RadialSolution { grid, u, truncation: m, p: problem.p, iterations }
}

/// `δ(r) = (1 - r^2) / 6`, the mean exit time of the unit ball in R^3.
pub fn delta(r: f64) -> f64 {
    (1.0 - r * r) / 6.0
}

impl RadialSolution {
    /// `∫_{B(0, radius)} |f_m(u)| δ dm`.
    pub fn near_atom_mass(&self, radius: f64) -> f64 {
        let g = &self.grid;
        (0..g.r.len())
            .filter(|&i| g.r[i] < radius)
            .map(|i| 4.0 * PI * g.vol[i] * absorption(self.u[i], self.p, self.truncation).abs() * delta(g.r[i]))
            .sum()
    }

    /// `∫ |u|^q δ dm` over the grid (the inner ball of radius `r_min` excluded).
    pub fn lp_delta(&self, q: f64) -> f64 {
        let g = &self.grid;
        (0..g.r.len()).map(|i| 4.0 * PI * g.vol[i] * self.u[i].abs().powf(q) * delta(g.r[i])).sum()
    }

    pub fn value_at(&self, r: f64) -> f64 {
        let g = &self.grid.r;
        if r <= g[0] {
            return self.u[0];
        }
        let i = g.partition_point(|x| *x < r).min(g.len() - 1).max(1);
        let t = (r - g[i - 1]) / (g[i] - g[i - 1]);
        self.u[i - 1] + t * (self.u[i] - self.u[i - 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_problem_matches_green_function() {
        let prob = RadialProblem { p: 1.0, weight: 1.0, psi: 0.5, ..RadialProblem::default() };
        let s = solve_radial(&prob, 0.0, None);
        for (r, u) in s.grid.r.iter().zip(&s.u) {
            let exact = 0.5 + (1.0 / r - 1.0) / (4.0 * PI);
            assert!((u - exact).abs() <= 1e-3 * exact.abs().max(1.0), "r={r}: {u} vs {exact}");
        }
    }

    #[test]
    fn truncation_is_monotone() {
        let prob = RadialProblem { p: 2.0, ..RadialProblem::default() };
        let mut prev: Option<RadialSolution> = None;
        for m in [1.0, 4.0, 16.0, 64.0] {
            let s = solve_radial(&prob, m, prev.as_ref().map(|s| s.u.as_slice()));
            if let Some(p) = &prev {
                for (a, b) in s.u.iter().zip(&p.u) {
                    assert!(*a <= b + 1e-8 * b.abs().max(1.0));
                }
            }
            prev = Some(s);
        }
    }

    #[test]
    fn thomas_solves_tridiagonal() {
        let a = [0.0, -1.0, -1.0];
        let b = [2.0, 2.0, 2.0];
        let c = [-1.0, -1.0, 0.0];
        let x = thomas(&a, &b, &c, &[1.0, 0.0, 1.0]);
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }
}
