//! Explicit finite differences for the fully nonlinear equation
//!
//! ```text
//! -d_t u - sup_a { a/2 u_xx - F(t, x, u, u_x, a) } = 0,  u(1, x) = g(x)
//! ```
//!
//! and its semilinear slices at a fixed `a`. The scheme is monotone under
//! `a dt / dx^2 <= 1` and uses linear extrapolation at the two edges.

use std::io::Write;

use crate::error::{Error, Result};
use crate::generators::{Generator, Payoff};
use crate::lattice_models::{Lattice, Model, Stencil};
use crate::numfmt::g17;
use crate::par;

/// Uniform space-time grid on `[x_min, x_max] x [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_space: usize,
    pub n_time: usize,
}

impl PdeGrid {
    pub fn symmetric(x_max: f64, n_space: usize, n_time: usize) -> Result<Self> {
        Self::new(-x_max, x_max, n_space, n_time)
    }

    pub fn new(x_min: f64, x_max: f64, n_space: usize, n_time: usize) -> Result<Self> {
        if n_space < 3 || n_time < 1 || x_min >= x_max || !(x_min.is_finite() && x_max.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "bad grid [{x_min}, {x_max}] with {n_space} x {n_time} intervals"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            n_space,
            n_time,
        })
    }

    /// The grid of a lattice, node for node.
    pub fn from_lattice(lat: &Lattice) -> Self {
        Self {
            x_min: lat.x_min(),
            x_max: lat.x_max(),
            n_space: lat.n_space(),
            n_time: lat.n_steps(),
        }
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_space as f64
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n_time as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..=self.n_space).map(|i| self.x(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeSolution {
    pub grid: PdeGrid,
    /// `u[k][i]` at `t_k = k dt`, `x_i`; `u[n_time]` is `g`.
    pub u: Vec<Vec<f64>>,
    /// Index into the `a`-grid attaining the max, per interior update.
    pub argmax: Vec<Vec<usize>>,
    /// `u(0, 0)`, linearly interpolated if the origin is not a node.
    pub u0: f64,
}

impl PdeSolution {
    /// Linear interpolation of layer `k` at `x`, clamped to the grid.
    pub fn value_at(&self, k: usize, x: f64) -> f64 {
        let pos = ((x - self.grid.x_min) / self.grid.dx()).clamp(0.0, self.grid.n_space as f64);
        let j = (pos.floor() as usize).min(self.grid.n_space - 1);
        let w = pos - j as f64;
        let row = &self.u[k];
        if w == 0.0 {
            row[j]
        } else {
            (1.0 - w) * row[j] + w * row[j + 1]
        }
    }

    /// `t,x,u` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "x", "u"])?;
        let dt = self.grid.dt();
        for (k, row) in self.u.iter().enumerate() {
            let t = g17(k as f64 * dt);
            for (i, u) in row.iter().enumerate() {
                w.write_record([t.as_str(), &g17(self.grid.x(i)), &g17(*u)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `n` equally spaced points of the domain of `F`, capped at `a_max` when
/// the domain is unbounded above.
pub fn default_a_grid(gen: &dyn Generator, a_max: Option<f64>, n: usize) -> Result<Vec<f64>> {
    let dom = gen.a_domain();
    let hi = match (dom.hi.is_finite(), a_max) {
        (_, Some(cap)) => cap.min(dom.hi),
        (true, None) => dom.hi,
        (false, None) => return Err(Error::UnboundedDomain),
    };
    let lo = if dom.lo > 0.0 { dom.lo } else { hi / n.max(1) as f64 };
    if hi < lo {
        return Err(Error::EmptyAdmissibleSet);
    }
    if n <= 1 || hi == lo {
        return Ok(vec![hi]);
    }
    Ok((0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect())
}

/// Backward scheme `u_k = max_a [u_{k+1} + dt (a/2 D^2 u_{k+1} - F(t, x, u_{k+1}, D u_{k+1}, a))]`
/// over the supplied `a`-grid, lowest index on ties.
pub fn solve_fully_nonlinear(gen: &dyn Generator, a_grid: &[f64], g: &Payoff, grid: &PdeGrid) -> Result<PdeSolution> {
    if a_grid.is_empty() {
        return Err(Error::EmptyAdmissibleSet);
    }
    let (dt, dx) = (grid.dt(), grid.dx());
    let mut ps = Vec::with_capacity(a_grid.len());
    for &a in a_grid {
        if !gen.a_domain().contains(a) {
            return Err(Error::ConjugateInfinite { a });
        }
        ps.push(Stencil::trinomial(a, dt, dx)?.p_up);
    }
    let n = grid.n_space;
    let terminal = grid
        .xs()
        .iter()
        .map(|&x| {
            g.terminal(x)
                .ok_or_else(|| Error::InvalidPayoff("path-dependent payoff has no PDE".into()))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut u = vec![Vec::new(); grid.n_time + 1];
    let mut argmax = vec![Vec::new(); grid.n_time];
    u[grid.n_time] = terminal;
    for k in (0..grid.n_time).rev() {
        let next = &u[k + 1];
        let t = k as f64 * dt;
        let rows: Vec<Result<(f64, usize)>> = par::map_indices(n - 1, |m| {
            let i = m + 1;
            let x = grid.x(i);
            let (um, uc, up) = (next[i - 1], next[i], next[i + 1]);
            let second = up + um - 2.0 * uc;
            let du = (up - um) / (2.0 * dx);
            let mut best: Option<(f64, usize)> = None;
            for (j, (&a, &p)) in a_grid.iter().zip(&ps).enumerate() {
                let f = gen.f(t, x, uc, du, a).finite().ok_or(Error::ConjugateInfinite { a })?;
                let cand = uc + p * second - dt * f;
                if best.is_none_or(|b| cand > b.0) {
                    best = Some((cand, j));
                }
            }
            Ok(best.expect("a-grid is nonempty"))
        });
        let mut row = vec![0.0; n + 1];
        let mut arg = Vec::with_capacity(n - 1);
        for (m, r) in rows.into_iter().enumerate() {
            let (v, j) = r?;
            row[m + 1] = v;
            arg.push(j);
        }
        row[0] = 2.0 * row[1] - row[2];
        row[n] = 2.0 * row[n - 1] - row[n - 2];
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: i });
        }
        u[k] = row;
        argmax[k] = arg;
    }
    let mut sol = PdeSolution {
        grid: *grid,
        u,
        argmax,
        u0: 0.0,
    };
    sol.u0 = sol.value_at(0, 0.0);
    Ok(sol)
}

/// The semilinear equation for the constant diffusion coefficient `a`.
pub fn solve_semilinear(a: f64, gen: &dyn Generator, g: &Payoff, grid: &PdeGrid) -> Result<PdeSolution> {
    solve_fully_nonlinear(gen, &[a], g, grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeReport {
    /// `max over slices and nodes of (u^a - u)^+`.
    pub max_violation: f64,
    /// `|max_a u^a_0 - u_0|`.
    pub root_gap: f64,
    /// Index of the slice with the largest root value, lowest on ties.
    pub attained_by: usize,
}

/// Compares `u` with the slices `u^a` on a common grid.
pub fn envelope_check(u: &PdeSolution, family: &[PdeSolution]) -> Result<EnvelopeReport> {
    if family.is_empty() {
        return Err(Error::EmptyAdmissibleSet);
    }
    let mut max_violation: f64 = 0.0;
    let mut best: Option<(f64, usize)> = None;
    for (j, s) in family.iter().enumerate() {
        if s.grid != u.grid {
            return Err(Error::GridMismatch("envelope slices must share the grid".into()));
        }
        for (ra, ru) in s.u.iter().zip(&u.u) {
            for (va, vu) in ra.iter().zip(ru) {
                max_violation = max_violation.max(va - vu);
            }
        }
        if best.is_none_or(|b| s.u0 > b.0) {
            best = Some((s.u0, j));
        }
    }
    let (top, attained_by) = best.expect("family is nonempty");
    Ok(EnvelopeReport {
        max_violation,
        root_gap: (top - u.u0).abs(),
        attained_by,
    })
}
