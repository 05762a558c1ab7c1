//! Discrete carriers for the family of diffusion-control measures.
//!
//! A [`Lattice`] is a recombining trinomial grid on `[x_min, x_max]` with
//! frozen boundary nodes; controls on it are feedback (node-indexed). A
//! [`TreeModel`] is a non-recombining tree whose nodes are paths, so a
//! node-indexed control there is a general adapted control. Both share the
//! trinomial stencil `p_up = p_down = a dt / (2 dx^2)`, `p_mid = 1 - 2 p_up`,
//! whose mean is 0 and variance exactly `a dt`.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::generators::Payoff;
use crate::par;
use crate::path_engine::{uniform_grid, SamplePath};

const CFL_SLACK: f64 = 1e-12;

/// Switching times `T_0` of a control class.
#[derive(Debug, Clone, PartialEq)]
pub enum SwitchTimes {
    /// Every time step of the model.
    Grid,
    /// An explicit list; `0` and `1` are always included.
    Explicit(Vec<f64>),
}

/// A finite set `A_0` of diffusion values with switching times `T_0`,
/// ellipticity bounds and mixture weights for the dominating measure.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlClass {
    a0: Vec<f64>,
    t0: SwitchTimes,
    a_lo: f64,
    a_hi: f64,
    weights: Vec<f64>,
}

impl ControlClass {
    pub fn new(a0: Vec<f64>, t0: SwitchTimes) -> Result<Self> {
        if a0.is_empty() {
            return Err(Error::InvalidControlClass("A0 must be nonempty".into()));
        }
        if let Some(a) = a0.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidControlClass(format!(
                "A0 entries must be positive and finite, got {a}"
            )));
        }
        let t0 = match t0 {
            SwitchTimes::Explicit(mut ts) => {
                if ts.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    return Err(Error::InvalidControlClass("T0 times must lie in [0, 1]".into()));
                }
                ts.extend([0.0, 1.0]);
                ts.sort_by(f64::total_cmp);
                ts.dedup();
                SwitchTimes::Explicit(ts)
            }
            grid => grid,
        };
        let a_lo = a0.iter().cloned().fold(f64::INFINITY, f64::min);
        let a_hi = a0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = (1..=a0.len()).map(|i| 0.5f64.powi(i as i32)).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        Ok(Self {
            a0,
            t0,
            a_lo,
            a_hi,
            weights,
        })
    }

    /// Declares wider ellipticity bounds; every element of `A_0` must lie in them.
    pub fn with_bounds(mut self, a_lo: f64, a_hi: f64) -> Result<Self> {
        if !(a_lo > 0.0) || self.a0.iter().any(|&a| a < a_lo || a > a_hi) {
            return Err(Error::InvalidControlClass(format!(
                "A0 not contained in [{a_lo}, {a_hi}]"
            )));
        }
        self.a_lo = a_lo;
        self.a_hi = a_hi;
        Ok(self)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.len() != self.a0.len() || weights.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidControlClass(
                "mixture weights must be positive, one per A0 entry, summing to 1".into(),
            ));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn a0(&self) -> &[f64] {
        &self.a0
    }

    pub fn len(&self) -> usize {
        self.a0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a0.is_empty()
    }

    pub fn switch_times(&self) -> &SwitchTimes {
        &self.t0
    }

    pub fn a_lo(&self) -> f64 {
        self.a_lo
    }

    pub fn a_hi(&self) -> f64 {
        self.a_hi
    }

    pub fn mixture_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn allows_switch_at(&self, t: f64) -> bool {
        match &self.t0 {
            SwitchTimes::Grid => true,
            SwitchTimes::Explicit(ts) => ts.iter().any(|s| (s - t).abs() < 1e-9),
        }
    }

    /// The constant-control measures of the dominating mixture with their weights.
    pub fn mixture_components(&self) -> Vec<(PathControl, f64)> {
        self.a0
            .iter()
            .zip(&self.weights)
            .map(|(&a, &w)| (PathControl::Constant(a), w))
            .collect()
    }

    /// Structural membership: indices valid, and every change of value along
    /// a tree path happens at a time in `T_0`.
    pub fn admits(&self, tree: &TreeModel, control: &DiffusionControl) -> bool {
        if control.layers.len() != tree.n_steps() {
            return false;
        }
        for (k, layer) in control.layers.iter().enumerate() {
            if layer.len() != tree.layer_len(k) || layer.iter().any(|&c| c >= self.a0.len()) {
                return false;
            }
            if k == 0 {
                continue;
            }
            let switched = layer
                .iter()
                .enumerate()
                .any(|(i, &c)| control.layers[k - 1][i / tree.branching] != c);
            if switched && !self.allows_switch_at(tree.time(k)) {
                return false;
            }
        }
        true
    }
}

/// Trinomial transition probabilities of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub p_down: f64,
    pub p_mid: f64,
    pub p_up: f64,
}

impl Stencil {
    pub fn trinomial(a: f64, dt: f64, dx: f64) -> Result<Self> {
        let ratio = a * dt / (dx * dx);
        if ratio > 1.0 + CFL_SLACK {
            return Err(Error::Cfl {
                ratio,
                max_dt: dx * dx / a,
            });
        }
        let p = 0.5 * ratio;
        Ok(Self {
            p_down: p,
            p_mid: (1.0 - 2.0 * p).max(0.0),
            p_up: p,
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.p_mid == 0.0
    }
}

/// Successor nodes (in the next layer) of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Successors {
    /// Down, middle, up.
    Trinomial([usize; 3]),
    /// Down, up.
    Binomial([usize; 2]),
    /// Boundary node that stays put.
    Frozen(usize),
}

/// Common interface of lattices and trees used by the backward solvers.
pub trait Model: Sync + fmt::Debug {
    fn n_steps(&self) -> usize;
    fn dt(&self) -> f64;
    fn dx(&self) -> f64;
    fn layer_len(&self, k: usize) -> usize;
    fn state(&self, k: usize, i: usize) -> f64;
    fn successors(&self, k: usize, i: usize) -> Successors;
    /// Index of the root node in layer 0.
    fn root(&self) -> usize;
    /// `xi` at every terminal node.
    fn terminal_values(&self, payoff: &Payoff) -> Result<Vec<f64>>;

    fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    /// Stencil of control value `a`; errors if it violates the CFL bound.
    fn stencil(&self, a: f64) -> Result<Stencil> {
        Stencil::trinomial(a, self.dt(), self.dx())
    }
}

/// Recombining trinomial lattice on `[x_min, x_max]` with `n_space` intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    x_min: f64,
    dx: f64,
    n_space: usize,
    n_time: usize,
    dt: f64,
    root: usize,
}

/// Builds a lattice and checks the CFL condition against the largest value in `A_0`.
pub fn build_lattice(x_min: f64, x_max: f64, n_space: usize, n_time: usize, class: &ControlClass) -> Result<Lattice> {
    Lattice::new(x_min, x_max, n_space, n_time, class.a_hi())
}

impl Lattice {
    pub fn new(x_min: f64, x_max: f64, n_space: usize, n_time: usize, a_max: f64) -> Result<Self> {
        if n_space < 3 || n_time < 1 {
            return Err(Error::InvalidModel("need n_space >= 3 and n_time >= 1".into()));
        }
        if !(x_min < 0.0 && x_max > 0.0) {
            return Err(Error::InvalidModel("x range must contain the origin".into()));
        }
        let dx = (x_max - x_min) / n_space as f64;
        let dt = 1.0 / n_time as f64;
        Stencil::trinomial(a_max, dt, dx)?;
        let pos = -x_min / dx;
        let root = pos.round() as usize;
        if (pos - root as f64).abs() > 1e-9 {
            return Err(Error::InvalidModel("the origin must be a lattice node".into()));
        }
        Ok(Self {
            x_min,
            dx,
            n_space,
            n_time,
            dt,
            root,
        })
    }

    /// Symmetric lattice with the narrowest spacing the CFL bound allows for
    /// `a_max`, widened to at least `[-x_floor, x_floor]`.
    pub fn cfl_limited(n_space: usize, n_time: usize, a_max: f64, x_floor: f64) -> Result<Self> {
        if !n_space.is_multiple_of(2) {
            return Err(Error::InvalidModel("symmetric lattice needs an even n_space".into()));
        }
        let dt = 1.0 / n_time as f64;
        let half = n_space as f64 / 2.0;
        let x_max = (half * (a_max * dt).sqrt()).max(x_floor);
        Self::new(-x_max, x_max, n_space, n_time, a_max)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + self.n_space as f64 * self.dx
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn n_nodes(&self) -> usize {
        self.n_space + 1
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        i == 0 || i == self.n_space
    }

    /// Nodes whose value cannot depend on the frozen boundary: at layer `k`,
    /// those more than `n_time - k` nodes away from either edge.
    pub fn is_truncation_free(&self, k: usize, i: usize) -> bool {
        let reach = self.n_time - k;
        i > reach && i + reach < self.n_space
    }

    /// Fractional node position of state `x`, clamped into the lattice.
    pub fn locate(&self, x: f64) -> (usize, f64, bool) {
        let pos = (x - self.x_min) / self.dx;
        let clamped = !(0.0..=self.n_space as f64).contains(&pos);
        let pos = pos.clamp(0.0, self.n_space as f64);
        let j = (pos.floor() as usize).min(self.n_space - 1);
        (j, pos - j as f64, clamped)
    }
}

impl Model for Lattice {
    fn n_steps(&self) -> usize {
        self.n_time
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn dx(&self) -> f64 {
        self.dx
    }

    fn layer_len(&self, _k: usize) -> usize {
        self.n_space + 1
    }

    fn state(&self, _k: usize, i: usize) -> f64 {
        if i == self.root {
            0.0
        } else {
            self.x_min + i as f64 * self.dx
        }
    }

    fn successors(&self, _k: usize, i: usize) -> Successors {
        if self.is_boundary(i) {
            Successors::Frozen(i)
        } else {
            Successors::Trinomial([i - 1, i, i + 1])
        }
    }

    fn root(&self) -> usize {
        self.root
    }

    fn terminal_values(&self, payoff: &Payoff) -> Result<Vec<f64>> {
        (0..self.n_nodes())
            .map(|i| {
                payoff.terminal(self.state(self.n_time, i)).ok_or_else(|| {
                    Error::InvalidPayoff("path-dependent payoffs need a tree model, not a lattice".into())
                })
            })
            .collect()
    }
}

/// Non-recombining tree with `branching` children per node (3: offsets
/// `-dx, 0, +dx`; 2: offsets `-dx, +dx`).
#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    depth: usize,
    branching: usize,
    dt: f64,
    dx: f64,
}

impl TreeModel {
    pub fn new(depth: usize, branching: usize, dx: f64) -> Result<Self> {
        if depth == 0 || !(2..=3).contains(&branching) || !(dx > 0.0) {
            return Err(Error::InvalidModel(
                "tree needs depth >= 1, branching 2 or 3 and dx > 0".into(),
            ));
        }
        if (branching as f64).powi(depth as i32) > 5e7 {
            return Err(Error::InvalidModel(format!("tree of depth {depth} is too large")));
        }
        Ok(Self {
            depth,
            branching,
            dt: 1.0 / depth as f64,
            dx,
        })
    }

    /// Trinomial tree with `dx = sqrt(a_max dt)`, the CFL limit for the class.
    pub fn trinomial_for(depth: usize, class: &ControlClass) -> Result<Self> {
        let dx = (class.a_hi() / depth as f64).sqrt();
        Self::new(depth, 3, dx)
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of non-terminal nodes.
    pub fn decision_nodes(&self) -> usize {
        (0..self.depth).map(|k| self.layer_len(k)).sum()
    }

    /// Ancestor of node `(k, i)` in layer `j <= k`.
    pub fn ancestor(&self, k: usize, i: usize, j: usize) -> usize {
        i / self.branching.pow((k - j) as u32)
    }

    fn offset(&self, digit: usize) -> i64 {
        match self.branching {
            3 => digit as i64 - 1,
            _ => 2 * digit as i64 - 1,
        }
    }

    /// States along the path from the root to node `(k, i)`.
    pub fn path_states(&self, k: usize, i: usize) -> Vec<f64> {
        let mut states = vec![0.0; k + 1];
        let mut steps = 0i64;
        for (j, s) in states.iter_mut().enumerate().skip(1) {
            let digit = self.ancestor(k, i, j) % self.branching;
            steps += self.offset(digit);
            *s = steps as f64 * self.dx;
        }
        states
    }

    /// The node's path as a [`SamplePath`] on the uniform grid up to `t_k`.
    pub fn sample_path(&self, k: usize, i: usize) -> Result<SamplePath> {
        let grid: Vec<f64> = (0..=k).map(|j| j as f64 * self.dt).collect();
        SamplePath::scalar(grid, self.path_states(k, i))
    }
}

impl Model for TreeModel {
    fn n_steps(&self) -> usize {
        self.depth
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn dx(&self) -> f64 {
        self.dx
    }

    fn layer_len(&self, k: usize) -> usize {
        self.branching.pow(k as u32)
    }

    fn state(&self, k: usize, i: usize) -> f64 {
        *self.path_states(k, i).last().expect("non-empty")
    }

    fn successors(&self, _k: usize, i: usize) -> Successors {
        let b = self.branching * i;
        match self.branching {
            3 => Successors::Trinomial([b, b + 1, b + 2]),
            _ => Successors::Binomial([b, b + 1]),
        }
    }

    fn root(&self) -> usize {
        0
    }

    fn terminal_values(&self, payoff: &Payoff) -> Result<Vec<f64>> {
        Ok((0..self.layer_len(self.depth))
            .map(|i| payoff.on_states(&self.path_states(self.depth, i)))
            .collect())
    }

    fn stencil(&self, a: f64) -> Result<Stencil> {
        if self.branching == 3 {
            return Stencil::trinomial(a, self.dt, self.dx);
        }
        if ((a * self.dt) / (self.dx * self.dx) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!(
                "binomial tree carries only a = dx^2/dt = {}, got {a}",
                self.dx * self.dx / self.dt
            )));
        }
        Ok(Stencil {
            p_down: 0.5,
            p_mid: 0.0,
            p_up: 0.5,
        })
    }
}

/// Node-indexed assignment of `A_0` indices, one entry per node of every
/// non-terminal layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DiffusionControl {
    pub layers: Vec<Vec<usize>>,
}

impl DiffusionControl {
    pub fn constant<M: Model + ?Sized>(model: &M, index: usize) -> Self {
        Self::from_fn(model, |_, _| index)
    }

    pub fn from_fn<M: Model + ?Sized>(model: &M, f: impl Fn(usize, usize) -> usize) -> Self {
        Self {
            layers: (0..model.n_steps())
                .map(|k| (0..model.layer_len(k)).map(|i| f(k, i)).collect())
                .collect(),
        }
    }

    pub fn index(&self, k: usize, i: usize) -> usize {
        self.layers[k][i]
    }
}

/// Pastes `continuations[c]` after layer `t_layer` onto every subtree rooted
/// in partition cell `c`, keeping `base` before `t_layer`.
pub fn paste_control(
    tree: &TreeModel,
    base: &DiffusionControl,
    t_layer: usize,
    partition: &[Vec<usize>],
    continuations: &[DiffusionControl],
) -> Result<DiffusionControl> {
    if t_layer > tree.n_steps() {
        return Err(Error::InvalidPartition(format!("layer {t_layer} beyond the horizon")));
    }
    if partition.len() != continuations.len() {
        return Err(Error::InvalidPartition(format!(
            "{} cells but {} continuations",
            partition.len(),
            continuations.len()
        )));
    }
    let width = tree.layer_len(t_layer);
    let mut cell_of = vec![usize::MAX; width];
    for (c, cell) in partition.iter().enumerate() {
        for &node in cell {
            if node >= width {
                return Err(Error::InvalidPartition(format!("node {node} not in layer {t_layer}")));
            }
            if cell_of[node] != usize::MAX {
                return Err(Error::InvalidPartition(format!("node {node} in two cells")));
            }
            cell_of[node] = c;
        }
    }
    if let Some(missing) = cell_of.iter().position(|&c| c == usize::MAX) {
        return Err(Error::InvalidPartition(format!("node {missing} not covered")));
    }
    let layers = (0..tree.n_steps())
        .map(|k| {
            (0..tree.layer_len(k))
                .map(|i| {
                    if k < t_layer {
                        base.index(k, i)
                    } else {
                        let cell = cell_of[tree.ancestor(k, i, t_layer)];
                        continuations[cell].index(k, i)
                    }
                })
                .collect()
        })
        .collect();
    Ok(DiffusionControl { layers })
}

/// Default cap on the number of enumerated controls.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// Mixed-radix enumeration of every node-to-`A_0` assignment over a set of layers.
#[derive(Debug, Clone)]
pub struct ControlEnumerator {
    layer_lens: Vec<usize>,
    radix: usize,
    count: u128,
    next: u128,
}

impl ControlEnumerator {
    pub fn new(layer_lens: Vec<usize>, radix: usize, cap: u128) -> Result<Self> {
        let nodes: usize = layer_lens.iter().sum();
        let count = (radix as u128).checked_pow(nodes as u32).unwrap_or(u128::MAX);
        if count > cap {
            return Err(Error::EnumerationCap { count, cap });
        }
        Ok(Self {
            layer_lens,
            radix,
            count,
            next: 0,
        })
    }

    pub fn total(&self) -> u128 {
        self.count
    }

    /// The `idx`-th assignment; node 0 of layer 0 is the fastest digit.
    pub fn control_at(&self, mut idx: u128) -> DiffusionControl {
        let r = self.radix as u128;
        let layers = self
            .layer_lens
            .iter()
            .map(|&len| {
                (0..len)
                    .map(|_| {
                        let d = (idx % r) as usize;
                        idx /= r;
                        d
                    })
                    .collect()
            })
            .collect();
        DiffusionControl { layers }
    }
}

impl Iterator for ControlEnumerator {
    type Item = DiffusionControl;

    fn next(&mut self) -> Option<DiffusionControl> {
        if self.next >= self.count {
            return None;
        }
        let c = self.control_at(self.next);
        self.next += 1;
        Some(c)
    }
}

/// Every adapted control on the tree, each exactly once.
pub fn enumerate_controls(tree: &TreeModel, class: &ControlClass, cap: u128) -> Result<ControlEnumerator> {
    let lens = (0..tree.n_steps()).map(|k| tree.layer_len(k)).collect();
    ControlEnumerator::new(lens, class.len(), cap)
}

/// A diffusion control for Monte Carlo paths.
#[derive(Clone)]
pub enum PathControl {
    Constant(f64),
    /// `values[j]` is used on `[switch_times[j-1], switch_times[j])`, with
    /// `switch_times` increasing; `values.len() == switch_times.len() + 1`.
    TimeSwitching {
        switch_times: Vec<f64>,
        values: Vec<f64>,
    },
    /// `a = f(t, x)`.
    Feedback(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for PathControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathControl::Constant(a) => write!(f, "Constant({a})"),
            PathControl::TimeSwitching { switch_times, values } => {
                write!(f, "TimeSwitching({switch_times:?}, {values:?})")
            }
            PathControl::Feedback(_) => write!(f, "Feedback(..)"),
        }
    }
}

impl PathControl {
    pub fn a_at(&self, t: f64, x: f64) -> f64 {
        match self {
            PathControl::Constant(a) => *a,
            PathControl::TimeSwitching { switch_times, values } => values[switch_times.partition_point(|&s| s <= t)],
            PathControl::Feedback(f) => f(t, x),
        }
    }
}

/// A simulated path together with the control value used on each step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledPath {
    pub path: SamplePath,
    pub a: Vec<f64>,
}

/// One Euler step `x + a^{1/2} sqrt(dt) zeta`.
pub fn euler_step(x: f64, a: f64, dt: f64, zeta: f64) -> f64 {
    x + a.sqrt() * dt.sqrt() * zeta
}

/// Standard Gaussian draws for path `stream` under `seed`; independent of
/// how many other streams are drawn or in which order.
pub fn gaussian_stream(seed: u64, stream: u64) -> impl Iterator<Item = f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    std::iter::repeat_with(move || StandardNormal.sample(&mut rng))
}

/// Euler paths `X_{k+1} = X_k + a_k^{1/2} sqrt(dt) zeta_k` on a uniform grid.
pub fn sample_control_paths(control: &PathControl, n_paths: usize, n_steps: usize, seed: u64) -> Vec<ControlledPath> {
    let grid = uniform_grid(0.0, n_steps);
    let dt = 1.0 / n_steps as f64;
    par::map_indices(n_paths, |p| {
        let mut zeta = gaussian_stream(seed, p as u64);
        let mut xs = Vec::with_capacity(n_steps + 1);
        let mut a_used = Vec::with_capacity(n_steps);
        let mut x = 0.0;
        xs.push(x);
        for &t in &grid[..n_steps] {
            let a = control.a_at(t, x);
            x = euler_step(x, a, dt, zeta.next().expect("infinite stream"));
            a_used.push(a);
            xs.push(x);
        }
        ControlledPath {
            path: SamplePath::scalar(grid.clone(), xs).expect("finite Euler path"),
            a: a_used,
        }
    })
}
