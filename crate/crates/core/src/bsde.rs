//! Backward solvers for `Y_t = xi - int_t^1 F_hat(Y, Z) ds - int_t^1 Z dB`
//! under one fixed diffusion control.
//!
//! One backward step from layer `k + 1` to layer `k` under control value `a`:
//!
//! ```text
//! E = E_a[Y_{k+1}],  Z_k = E_a[Y_{k+1} dB] / (a dt)
//! explicit: Y_k = E - dt F(t_k, x, E, Z_k, a)
//! picard:   Y_k = E - dt F(t_k, x, Y_k, Z_k, a)   (fixed point)
//! ```

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::generators::{Generator, Payoff};
use crate::lattice_models::{ControlClass, ControlledPath, DiffusionControl, Model, Stencil, Successors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Explicit,
    Picard,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsdeSettings {
    pub scheme: Scheme,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
}

impl Default for BsdeSettings {
    fn default() -> Self {
        Self {
            scheme: Scheme::Explicit,
            picard_tol: 1e-12,
            picard_max_iter: 500,
        }
    }
}

impl BsdeSettings {
    pub fn picard() -> Self {
        Self {
            scheme: Scheme::Picard,
            ..Self::default()
        }
    }

    /// Rejects a Picard solve that would not contract.
    pub fn check(&self, dt: f64, gen: &dyn Generator) -> Result<()> {
        if self.scheme == Scheme::Picard {
            let ratio = dt * gen.lipschitz_yz();
            if ratio >= 1.0 {
                return Err(Error::PicardNonContraction { ratio });
            }
        }
        Ok(())
    }
}

/// `(Y, Z)` on every node of a model, with `y0` at the root.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution {
    /// `y[k][i]` for layers `0..=n_steps`.
    pub y: Vec<Vec<f64>>,
    /// `z[k][i]` for layers `0..n_steps`.
    pub z: Vec<Vec<f64>>,
    pub y0: f64,
}

/// `(E_a[Y'], E_a[Y' dB] / (a dt))` at one node.
pub(crate) fn conditional_moments(
    stencil: &Stencil,
    succ: Successors,
    a: f64,
    dt: f64,
    dx: f64,
    next: &[f64],
) -> (f64, f64) {
    match succ {
        Successors::Trinomial([d, m, u]) => {
            let e = stencil.p_down * next[d] + stencil.p_mid * next[m] + stencil.p_up * next[u];
            let z = if stencil.is_degenerate() {
                (next[u] - next[d]) / (2.0 * dx)
            } else {
                (stencil.p_up * next[u] - stencil.p_down * next[d]) * dx / (a * dt)
            };
            (e, z)
        }
        Successors::Binomial([d, u]) => (0.5 * (next[d] + next[u]), (next[u] - next[d]) / (2.0 * dx)),
        Successors::Frozen(i) => (next[i], 0.0),
    }
}

/// One backward step at node `(k, i)` under control value `a`.
pub fn backward_step<M: Model + ?Sized>(
    model: &M,
    gen: &dyn Generator,
    settings: &BsdeSettings,
    k: usize,
    i: usize,
    a: f64,
    next: &[f64],
) -> Result<(f64, f64)> {
    let stencil = model.stencil(a)?;
    let (dt, dx) = (model.dt(), model.dx());
    let (e, z) = conditional_moments(&stencil, model.successors(k, i), a, dt, dx, next);
    let (t, x) = (model.time(k), model.state(k, i));
    let outside = || Error::ControlOutsideDomain { a, layer: k, node: i };
    let f_at = |y: f64| gen.f(t, x, y, z, a).finite().ok_or_else(outside);
    let mut y = e - dt * f_at(e)?;
    if settings.scheme == Scheme::Picard {
        let mut converged = false;
        for _ in 0..settings.picard_max_iter {
            let next_y = e - dt * f_at(y)?;
            let delta = (next_y - y).abs();
            y = next_y;
            if delta <= settings.picard_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::PicardDiverged { layer: k, node: i });
        }
    }
    Ok((y, z))
}

/// Applies the backward operator from layer `from` down to layer `to` starting
/// from `values` on layer `from`, using control value `a_of(k, i)` at node
/// `(k, i)`. Returns `(y, z)` for layers `to..=from` (indexed from `to`).
#[allow(clippy::type_complexity)]
pub fn apply_backward_operator<M: Model + ?Sized>(
    model: &M,
    gen: &dyn Generator,
    settings: &BsdeSettings,
    from: usize,
    to: usize,
    values: Vec<f64>,
    a_of: impl Fn(usize, usize) -> f64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    settings.check(model.dt(), gen)?;
    let mut ys = vec![values];
    let mut zs = Vec::new();
    for k in (to..from).rev() {
        let next = ys.last().expect("at least one layer");
        let mut y = Vec::with_capacity(model.layer_len(k));
        let mut z = Vec::with_capacity(model.layer_len(k));
        for i in 0..model.layer_len(k) {
            let (yv, zv) = backward_step(model, gen, settings, k, i, a_of(k, i), next)?;
            y.push(yv);
            z.push(zv);
        }
        ys.push(y);
        zs.push(z);
    }
    ys.reverse();
    zs.reverse();
    Ok((ys, zs))
}

/// Exact backward induction of the BSDE on a lattice or tree under `control`.
pub fn solve_tree<M: Model + ?Sized>(
    model: &M,
    class: &ControlClass,
    control: &DiffusionControl,
    gen: &dyn Generator,
    payoff: &Payoff,
    settings: &BsdeSettings,
) -> Result<BsdeSolution> {
    let a0 = class.a0();
    if let Some(bad) = control.layers.iter().flatten().find(|&&c| c >= a0.len()) {
        return Err(Error::InvalidControlClass(format!("control index {bad} outside A0")));
    }
    let terminal = model.terminal_values(payoff)?;
    let n = model.n_steps();
    let (y, z) = apply_backward_operator(model, gen, settings, n, 0, terminal, |k, i| a0[control.index(k, i)])?;
    let y0 = y[0][model.root()];
    Ok(BsdeSolution { y, z, y0 })
}

/// Regression Monte Carlo estimate of the BSDE under the paths' own controls.
#[derive(Debug, Clone, PartialEq)]
pub struct McSolution {
    pub y0: f64,
    pub std_error: f64,
    /// Per-path `Y_{t_1}` and `Z_{t_1}` (the first non-degenerate regression layer).
    pub y1: Vec<f64>,
    pub z1: Vec<f64>,
    /// Basis degree actually used at each time step.
    pub degrees: Vec<usize>,
}

pub const MIN_REGRESSION_PATHS: usize = 1000;

/// Least-squares fit of `targets` on monomials of the standardized state;
/// lowers the degree until the normal equations are well conditioned.
fn regress(states: &[f64], targets: &[&[f64]], degree: usize) -> (Vec<Vec<f64>>, usize) {
    let n = states.len() as f64;
    let mean = states.iter().sum::<f64>() / n;
    let var = states.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let mut deg = if sd > 1e-12 { degree } else { 0 };
    loop {
        let m = deg + 1;
        let basis = |x: f64| -> Vec<f64> {
            let u = if deg == 0 { 0.0 } else { (x - mean) / sd };
            let mut v = Vec::with_capacity(m);
            let mut p = 1.0;
            for _ in 0..m {
                v.push(p);
                p *= u;
            }
            v
        };
        let mut gram = DMatrix::<f64>::zeros(m, m);
        let mut rhs: Vec<DVector<f64>> = targets.iter().map(|_| DVector::zeros(m)).collect();
        for (j, &x) in states.iter().enumerate() {
            let phi = basis(x);
            for r in 0..m {
                for c in 0..m {
                    gram[(r, c)] += phi[r] * phi[c];
                }
                for (b, t) in rhs.iter_mut().zip(targets) {
                    b[r] += phi[r] * t[j];
                }
            }
        }
        let eig = gram.clone().symmetric_eigen();
        let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
        let well_posed = lo > 0.0 && hi / lo < 1e12;
        if let (true, Some(chol)) = (well_posed, gram.cholesky()) {
            let fitted = rhs
                .iter()
                .map(|b| {
                    let beta = chol.solve(b);
                    states
                        .iter()
                        .map(|&x| basis(x).iter().zip(beta.iter()).map(|(p, q)| p * q).sum())
                        .collect()
                })
                .collect();
            return (fitted, deg);
        }
        if deg == 0 {
            let fitted = targets
                .iter()
                .map(|t| vec![t.iter().sum::<f64>() / n; states.len()])
                .collect();
            return (fitted, 0);
        }
        warn!("rank-deficient regression at degree {deg}; reducing");
        deg -= 1;
    }
}

/// Backward regression over simulated paths: conditional expectations are
/// least-squares projections on polynomials of the current state.
pub fn solve_regression_mc(
    paths: &[ControlledPath],
    gen: &dyn Generator,
    payoff: &Payoff,
    basis_degree: usize,
) -> Result<McSolution> {
    if paths.len() < MIN_REGRESSION_PATHS {
        return Err(Error::TooFewPaths {
            needed: MIN_REGRESSION_PATHS,
            got: paths.len(),
        });
    }
    if basis_degree < 1 {
        return Err(Error::InvalidModel("basis degree must be at least 1".into()));
    }
    let grid = paths[0].path.grid().to_vec();
    if paths
        .iter()
        .any(|p| p.path.grid() != grid.as_slice() || p.a.len() + 1 != grid.len())
    {
        return Err(Error::GridMismatch("all paths must share one grid".into()));
    }
    let n_steps = grid.len() - 1;
    let mut y: Vec<f64> = paths.iter().map(|p| payoff.evaluate(&p.path)).collect();
    let mut degrees = vec![0; n_steps];
    let mut y1 = Vec::new();
    let mut z1 = Vec::new();
    let mut std_error = 0.0;
    for k in (0..n_steps).rev() {
        let dt = grid[k + 1] - grid[k];
        let states: Vec<f64> = paths.iter().map(|p| p.path.scalar_at(k)).collect();
        let scaled: Vec<f64> = paths
            .iter()
            .zip(&y)
            .map(|(p, yv)| yv * (p.path.scalar_at(k + 1) - p.path.scalar_at(k)) / (p.a[k] * dt))
            .collect();
        let (fits, deg) = regress(&states, &[&y, &scaled], basis_degree);
        degrees[k] = deg;
        if k == 0 {
            let n = y.len() as f64;
            let mean = y.iter().sum::<f64>() / n;
            let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            std_error = (var / n).sqrt();
        }
        let mut next = Vec::with_capacity(paths.len());
        for (j, p) in paths.iter().enumerate() {
            let (e, z) = (fits[0][j], fits[1][j]);
            let f = gen
                .f(grid[k], states[j], e, z, p.a[k])
                .finite()
                .ok_or(Error::ControlOutsideDomain {
                    a: p.a[k],
                    layer: k,
                    node: j,
                })?;
            next.push(e - dt * f);
        }
        if k == 1 {
            y1 = next.clone();
            z1 = fits[1].clone();
        }
        y = next;
    }
    let y0 = y.iter().sum::<f64>() / y.len() as f64;
    Ok(McSolution {
        y0,
        std_error,
        y1,
        z1,
        degrees,
    })
}
