//! The nonlinearity `H(t, x, y, z, gamma)`, its partial Legendre-Fenchel
//! conjugate in `gamma`
//!
//! ```text
//! F(t, x, y, z, a) = sup_{gamma in D_H} { a*gamma/2 - H(t, x, y, z, gamma) }
//! ```
//!
//! and terminal payoffs. All generators are one-dimensional in the state;
//! `+inf` is carried by [`ExtReal::PosInf`], never by a large float, so
//! domain filtering in the dual supremum is exact.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::path_engine::SamplePath;

/// Extended real used for `H` and `F`, which may be `+inf` off their domains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    PosInf,
}

impl ExtReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::PosInf => None,
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::PosInf => write!(f, "+inf"),
        }
    }
}

/// Closed interval, possibly unbounded or degenerate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn positive_half_line() -> Self {
        Self {
            lo: 0.0,
            hi: f64::INFINITY,
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    /// Membership with a relative slack of `1e-12`, so that a degenerate
    /// interval `{s}` accepts values that round-trip through a config file.
    pub fn contains(&self, x: f64) -> bool {
        let slack = 1e-12 * x.abs().max(1.0);
        x >= self.lo - slack && x <= self.hi + slack
    }

    pub fn clip(&self, bound: f64) -> Interval {
        Interval::new(self.lo.max(-bound), self.hi.min(bound))
    }
}

/// A nonlinearity `H` together with its conjugate `F`.
///
/// `x` is the current state of the canonical process; built-ins ignore it.
pub trait Generator: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn h(&self, t: f64, x: f64, y: f64, z: f64, gamma: f64) -> ExtReal;

    /// `D_H`, always containing 0.
    fn gamma_domain(&self) -> Interval;

    /// `D_F`, the values of `a` where the conjugate is finite. Independent of
    /// `(t, x, y, z)` by construction.
    fn a_domain(&self) -> Interval;

    /// The conjugate `F(t, x, y, z, a)`; `+inf` outside [`Generator::a_domain`].
    fn f(&self, t: f64, x: f64, y: f64, z: f64, a: f64) -> ExtReal;

    /// Lipschitz constant of `F` in `y`.
    fn lipschitz_yz(&self) -> f64;

    /// Constant `C` with `|F(z1) - F(z2)| <= C |a^{1/2} (z1 - z2)|`.
    fn lipschitz_z_scaled(&self) -> f64;

    /// Modulus of continuity in the path.
    fn modulus(&self, _dist: f64) -> f64 {
        0.0
    }

    /// Bounds used when `gamma` has to be searched on a grid.
    fn gamma_search_bounds(&self) -> Interval {
        self.gamma_domain().clip(50.0)
    }

    /// Closed-form maximizer of `a*gamma/2 - H`, smallest `|gamma|` among ties.
    fn maximizer(&self, _t: f64, _x: f64, _y: f64, _z: f64, _a: f64) -> Option<f64> {
        None
    }
}

pub type SharedGenerator = Arc<dyn Generator>;

/// `H = sigma^2 gamma / 2 - r y`: no volatility uncertainty, so `D_F` is the
/// single point `sigma^2` and `F = r y` there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearGenerator {
    pub rate: f64,
    pub sigma: f64,
}

impl LinearGenerator {
    pub fn new(rate: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !rate.is_finite() {
            return Err(Error::InvalidGenerator(
                "linear generator needs sigma > 0 and finite r".into(),
            ));
        }
        Ok(Self { rate, sigma })
    }

    fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

impl Generator for LinearGenerator {
    fn name(&self) -> String {
        format!("linear{{r={},sigma={}}}", self.rate, self.sigma)
    }

    fn h(&self, _t: f64, _x: f64, y: f64, _z: f64, gamma: f64) -> ExtReal {
        ExtReal::Finite(0.5 * self.variance() * gamma - self.rate * y)
    }

    fn gamma_domain(&self) -> Interval {
        Interval::REAL_LINE
    }

    fn a_domain(&self) -> Interval {
        Interval::point(self.variance())
    }

    fn f(&self, _t: f64, _x: f64, y: f64, _z: f64, a: f64) -> ExtReal {
        if self.a_domain().contains(a) {
            ExtReal::Finite(self.rate * y)
        } else {
            ExtReal::PosInf
        }
    }

    fn lipschitz_yz(&self) -> f64 {
        self.rate.abs()
    }

    fn lipschitz_z_scaled(&self) -> f64 {
        0.0
    }

    fn maximizer(&self, _t: f64, _x: f64, _y: f64, _z: f64, a: f64) -> Option<f64> {
        self.a_domain().contains(a).then_some(0.0)
    }
}

/// Uncertain volatility: `H = (var_hi gamma^+ - var_lo gamma^-) / 2`, with
/// `D_F = [var_lo, var_hi]` and `F = 0` on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertainVolatility {
    pub var_lo: f64,
    pub var_hi: f64,
}

impl UncertainVolatility {
    /// From volatilities `sig_lo < sig_hi`.
    pub fn from_vols(sig_lo: f64, sig_hi: f64) -> Result<Self> {
        if !(sig_lo >= 0.0 && sig_hi > sig_lo && sig_hi.is_finite()) {
            return Err(Error::InvalidGenerator(format!(
                "uvm needs 0 <= sig_lo < sig_hi, got {sig_lo}, {sig_hi}"
            )));
        }
        Ok(Self {
            var_lo: sig_lo * sig_lo,
            var_hi: sig_hi * sig_hi,
        })
    }
}

impl Generator for UncertainVolatility {
    fn name(&self) -> String {
        format!("uvm{{var_lo={},var_hi={}}}", self.var_lo, self.var_hi)
    }

    fn h(&self, _t: f64, _x: f64, _y: f64, _z: f64, gamma: f64) -> ExtReal {
        ExtReal::Finite(0.5 * (self.var_hi * gamma.max(0.0) - self.var_lo * (-gamma).max(0.0)))
    }

    fn gamma_domain(&self) -> Interval {
        Interval::REAL_LINE
    }

    fn a_domain(&self) -> Interval {
        Interval::new(self.var_lo, self.var_hi)
    }

    fn f(&self, _t: f64, _x: f64, _y: f64, _z: f64, a: f64) -> ExtReal {
        if self.a_domain().contains(a) {
            ExtReal::Finite(0.0)
        } else {
            ExtReal::PosInf
        }
    }

    fn lipschitz_yz(&self) -> f64 {
        0.0
    }

    fn lipschitz_z_scaled(&self) -> f64 {
        0.0
    }

    fn maximizer(&self, _t: f64, _x: f64, _y: f64, _z: f64, a: f64) -> Option<f64> {
        self.a_domain().contains(a).then_some(0.0)
    }
}

/// Gamma constraint: `H = sigma^2 gamma / 2` on `[-gamma_lo, gamma_hi]`, `+inf`
/// outside, so `F = (gamma_hi (a - sigma^2)^+ + gamma_lo (a - sigma^2)^-) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaBand {
    pub sigma: f64,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
}

impl GammaBand {
    pub fn new(sigma: f64, gamma_lo: f64, gamma_hi: f64) -> Result<Self> {
        if !(sigma > 0.0 && gamma_lo >= 0.0 && gamma_hi >= 0.0) || !gamma_lo.is_finite() || !gamma_hi.is_finite() {
            return Err(Error::InvalidGenerator(
                "gamma_band needs sigma > 0 and finite bounds >= 0".into(),
            ));
        }
        Ok(Self {
            sigma,
            gamma_lo,
            gamma_hi,
        })
    }

    fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

impl Generator for GammaBand {
    fn name(&self) -> String {
        format!(
            "gamma_band{{sigma={},gam_lo={},gam_hi={}}}",
            self.sigma, self.gamma_lo, self.gamma_hi
        )
    }

    fn h(&self, _t: f64, _x: f64, _y: f64, _z: f64, gamma: f64) -> ExtReal {
        if self.gamma_domain().contains(gamma) {
            ExtReal::Finite(0.5 * self.variance() * gamma)
        } else {
            ExtReal::PosInf
        }
    }

    fn gamma_domain(&self) -> Interval {
        Interval::new(-self.gamma_lo, self.gamma_hi)
    }

    fn a_domain(&self) -> Interval {
        Interval::positive_half_line()
    }

    fn f(&self, _t: f64, _x: f64, _y: f64, _z: f64, a: f64) -> ExtReal {
        if !(a > 0.0) {
            return ExtReal::PosInf;
        }
        let gap = a - self.variance();
        ExtReal::Finite(0.5 * (self.gamma_hi * gap.max(0.0) + self.gamma_lo * (-gap).max(0.0)))
    }

    fn lipschitz_yz(&self) -> f64 {
        0.0
    }

    fn lipschitz_z_scaled(&self) -> f64 {
        0.0
    }

    fn maximizer(&self, _t: f64, _x: f64, _y: f64, _z: f64, a: f64) -> Option<f64> {
        if !(a > 0.0) {
            return None;
        }
        let gap = a - self.variance();
        Some(if gap > 0.0 {
            self.gamma_hi
        } else if gap < 0.0 {
            -self.gamma_lo
        } else {
            0.0
        })
    }
}

/// A user-defined, state-independent `H(gamma)` on a compact `gamma` interval,
/// conjugated numerically on a uniform grid.
#[derive(Clone)]
pub struct GridConjugate {
    label: String,
    h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    gamma: Interval,
    grid: Vec<f64>,
    a_cap: f64,
}

impl fmt::Debug for GridConjugate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridConjugate")
            .field("label", &self.label)
            .field("gamma", &self.gamma)
            .field("n_gamma", &self.grid.len())
            .finish()
    }
}

impl GridConjugate {
    pub fn new(
        label: impl Into<String>,
        h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        gamma_min: f64,
        gamma_max: f64,
        n_gamma: usize,
    ) -> Result<Self> {
        if !(gamma_min <= 0.0 && gamma_max >= 0.0 && gamma_min < gamma_max) || n_gamma < 2 {
            return Err(Error::InvalidGenerator(format!(
                "custom generator needs gamma_min <= 0 <= gamma_max, gamma_min < gamma_max and n_gamma >= 2 (got [{gamma_min}, {gamma_max}], {n_gamma})"
            )));
        }
        Ok(Self {
            label: label.into(),
            h,
            gamma: Interval::new(gamma_min, gamma_max),
            grid: gamma_grid(Interval::new(gamma_min, gamma_max), n_gamma),
            a_cap: f64::INFINITY,
        })
    }

    /// `H(gamma) = sum_i coeffs[i] gamma^i`.
    pub fn polynomial(coeffs: Vec<f64>, gamma_min: f64, gamma_max: f64, n_gamma: usize) -> Result<Self> {
        let label = format!("custom{{h={coeffs:?}}}");
        let h = Arc::new(move |g: f64| coeffs.iter().rev().fold(0.0, |acc, c| acc * g + c));
        Self::new(label, h, gamma_min, gamma_max, n_gamma)
    }

    /// Restricts `D_F` to `(0, a_max]`.
    pub fn with_a_cap(mut self, a_max: f64) -> Self {
        self.a_cap = a_max;
        self
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
}

impl Generator for GridConjugate {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn h(&self, _t: f64, _x: f64, _y: f64, _z: f64, gamma: f64) -> ExtReal {
        if self.gamma.contains(gamma) {
            ExtReal::Finite((self.h)(gamma))
        } else {
            ExtReal::PosInf
        }
    }

    fn gamma_domain(&self) -> Interval {
        self.gamma
    }

    fn a_domain(&self) -> Interval {
        Interval::new(0.0, self.a_cap)
    }

    fn f(&self, t: f64, x: f64, y: f64, z: f64, a: f64) -> ExtReal {
        if !(a > 0.0) || !self.a_domain().contains(a) {
            return ExtReal::PosInf;
        }
        grid_conjugate_value(self, t, x, y, z, a, &self.grid)
    }

    fn lipschitz_yz(&self) -> f64 {
        0.0
    }

    fn lipschitz_z_scaled(&self) -> f64 {
        0.0
    }

    fn gamma_search_bounds(&self) -> Interval {
        self.gamma
    }
}

/// Uniform grid of `n` points over a bounded interval, with 0 inserted when
/// the interval contains it. Doubling `n - 1` yields a refinement.
pub fn gamma_grid(bounds: Interval, n: usize) -> Vec<f64> {
    let n = n.max(2);
    let h = (bounds.hi - bounds.lo) / (n - 1) as f64;
    let mut g: Vec<f64> = (0..n)
        .map(|i| {
            if i == n - 1 {
                bounds.hi
            } else {
                bounds.lo + i as f64 * h
            }
        })
        .collect();
    if bounds.lo < 0.0 && bounds.hi > 0.0 && !g.contains(&0.0) {
        let pos = g.partition_point(|&v| v < 0.0);
        g.insert(pos, 0.0);
    }
    g
}

fn grid_conjugate_value(gen: &dyn Generator, t: f64, x: f64, y: f64, z: f64, a: f64, grid: &[f64]) -> ExtReal {
    let mut best = f64::NEG_INFINITY;
    for &g in grid {
        if let ExtReal::Finite(hv) = gen.h(t, x, y, z, g) {
            best = best.max(0.5 * a * g - hv);
        }
    }
    ExtReal::Finite(best)
}

/// `max over gamma_grid of a*gamma/2 - H(gamma)`; `+inf` when `a` is outside `D_F`.
pub fn conjugate(gen: &dyn Generator, a: f64, y: f64, z: f64, gamma_grid: &[f64]) -> Result<ExtReal> {
    conjugate_at(gen, 0.0, 0.0, a, y, z, gamma_grid)
}

/// [`conjugate`] at an explicit `(t, x)`.
pub fn conjugate_at(
    gen: &dyn Generator,
    t: f64,
    x: f64,
    a: f64,
    y: f64,
    z: f64,
    gamma_grid: &[f64],
) -> Result<ExtReal> {
    if gamma_grid.is_empty() {
        return Err(Error::EmptyGammaGrid);
    }
    let domain = gen.gamma_domain();
    if let Some(&g) = gamma_grid.iter().find(|&&g| !domain.contains(g)) {
        return Err(Error::GammaOutsideDomain { gamma: g });
    }
    if !gen.a_domain().contains(a) {
        return Ok(ExtReal::PosInf);
    }
    Ok(grid_conjugate_value(gen, t, x, y, z, a, gamma_grid))
}

/// `F_hat(y, z) = F(y, z, a)` with `a` standing for the diffusion density.
pub fn evaluate_hat_f(gen: &dyn Generator, t: f64, x: f64, y: f64, z: f64, a: f64) -> ExtReal {
    gen.f(t, x, y, z, a)
}

/// An `eps`-maximizer of the conjugate and its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsMaximizer {
    pub gamma: f64,
    /// `a*gamma/2 - H(gamma)` at the returned `gamma`.
    pub objective: f64,
    /// `F(a)` it is compared against.
    pub conjugate: f64,
    /// Empirical `|gamma| / (1 + |y| + |z|)`.
    pub bound_ratio: f64,
}

/// Grid maximizers of `a*gamma/2 - H` on `grid`, ties broken by smallest `|gamma|`
/// (then by the lower value).
pub fn grid_maximizer(gen: &dyn Generator, t: f64, x: f64, y: f64, z: f64, a: f64, grid: &[f64]) -> Option<(f64, f64)> {
    let values: Vec<(f64, f64)> = grid
        .iter()
        .filter_map(|&g| gen.h(t, x, y, z, g).finite().map(|hv| (g, 0.5 * a * g - hv)))
        .collect();
    let best = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return None;
    }
    let tie = 1e-14 * (1.0 + best.abs());
    values
        .into_iter()
        .filter(|v| v.1 >= best - tie)
        .min_by(|p, q| p.0.abs().total_cmp(&q.0.abs()).then(p.0.total_cmp(&q.0)))
}

/// A `gamma` in `D_H` with `a*gamma/2 - H(gamma) >= F(a) - eps`. Uses the
/// generator's closed-form maximizer when it has one; otherwise searches a
/// uniform grid, doubling it until the `eps` target is met.
pub fn eps_maximizer(gen: &dyn Generator, t: f64, x: f64, a: f64, y: f64, z: f64, eps: f64) -> Result<EpsMaximizer> {
    let conj = gen.f(t, x, y, z, a).finite().ok_or(Error::ConjugateInfinite { a })?;
    let finish = |gamma: f64, objective: f64| EpsMaximizer {
        gamma,
        objective,
        conjugate: conj,
        bound_ratio: gamma.abs() / (1.0 + y.abs() + z.abs()),
    };
    if let Some(g) = gen.maximizer(t, x, y, z, a) {
        if let Some(hv) = gen.h(t, x, y, z, g).finite() {
            let obj = 0.5 * a * g - hv;
            if obj >= conj - eps {
                return Ok(finish(g, obj));
            }
        }
    }
    let bounds = gen.gamma_search_bounds();
    let mut n = 2001;
    while n <= (1 << 22) + 1 {
        let grid = gamma_grid(bounds, n);
        if let Some((g, obj)) = grid_maximizer(gen, t, x, y, z, a, &grid) {
            if obj >= conj - eps {
                return Ok(finish(g, obj));
            }
        }
        n = 2 * (n - 1) + 1;
    }
    Err(Error::NoMaximizer { points: n })
}

type PathFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

enum PayoffFn {
    Markov(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    Path(PathFn),
}

impl Clone for PayoffFn {
    fn clone(&self) -> Self {
        match self {
            PayoffFn::Markov(f) => PayoffFn::Markov(Arc::clone(f)),
            PayoffFn::Path(f) => PayoffFn::Path(Arc::clone(f)),
        }
    }
}

/// Terminal condition `xi`, either a function of the terminal state or of the
/// whole (first-coordinate) path.
#[derive(Clone)]
pub struct Payoff {
    label: String,
    func: PayoffFn,
    lipschitz: f64,
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Payoff")
            .field("label", &self.label)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl Payoff {
    pub fn markov(label: impl Into<String>, lipschitz: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            func: PayoffFn::Markov(Arc::new(f)),
            lipschitz,
        }
    }

    pub fn path_dependent(
        label: impl Into<String>,
        lipschitz: f64,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            func: PayoffFn::Path(Arc::new(f)),
            lipschitz,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::markov(format!("const{{{c}}}"), 0.0, move |_| c)
    }

    pub fn call(k: f64) -> Self {
        Self::markov(format!("call{{k={k}}}"), 1.0, move |x| (x - k).max(0.0))
    }

    pub fn put(k: f64) -> Self {
        Self::markov(format!("put{{k={k}}}"), 1.0, move |x| (k - x).max(0.0))
    }

    pub fn neg_square() -> Self {
        Self::markov("neg_square", f64::INFINITY, |x| -x * x)
    }

    pub fn butterfly(k: f64, w: f64) -> Self {
        Self::markov(format!("butterfly{{k={k},w={w}}}"), 1.0, move |x| {
            (x - (k - w)).max(0.0) - 2.0 * (x - k).max(0.0) + (x - (k + w)).max(0.0)
        })
    }

    /// Piecewise-linear interpolation through `(xs, ys)`, extended linearly
    /// with the end slopes.
    pub fn table(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::InvalidPayoff(
                "table needs matching x and y with at least two points".into(),
            ));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidPayoff("table x must be strictly increasing".into()));
        }
        let lip = xs
            .windows(2)
            .zip(ys.windows(2))
            .map(|(x, y)| ((y[1] - y[0]) / (x[1] - x[0])).abs())
            .fold(0.0, f64::max);
        Ok(Self::markov("table", lip, move |x| {
            let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
            let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        }))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Modulus `rho(d) = L d` in sup-norm.
    pub fn modulus(&self, dist: f64) -> f64 {
        self.lipschitz * dist
    }

    pub fn is_markov(&self) -> bool {
        matches!(self.func, PayoffFn::Markov(_))
    }

    /// `g(x)` for Markov payoffs, `None` for path-dependent ones.
    pub fn terminal(&self, x: f64) -> Option<f64> {
        match &self.func {
            PayoffFn::Markov(f) => Some(f(x)),
            PayoffFn::Path(_) => None,
        }
    }

    /// `xi` on a sequence of states ending at the terminal state.
    pub fn on_states(&self, states: &[f64]) -> f64 {
        match &self.func {
            PayoffFn::Markov(f) => f(*states.last().expect("non-empty path")),
            PayoffFn::Path(f) => f(states),
        }
    }

    pub fn evaluate(&self, path: &SamplePath) -> f64 {
        self.on_states(&path.first_coordinate())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic() -> GridConjugate {
        GridConjugate::polynomial(vec![0.0, 0.0, 0.5], -10.0, 10.0, 2001).unwrap()
    }

    #[test]
    fn uvm_conjugate_is_zero_inside() {
        let g = UncertainVolatility::from_vols(1.0, 2.0).unwrap();
        let grid = gamma_grid(Interval::new(-20.0, 20.0), 401);
        assert_eq!(conjugate(&g, 2.0, 0.3, -1.0, &grid).unwrap(), ExtReal::Finite(0.0));
        assert_eq!(conjugate(&g, 5.0, 0.0, 0.0, &grid).unwrap(), ExtReal::PosInf);
        assert_eq!(g.f(0.0, 0.0, 0.0, 0.0, 0.5), ExtReal::PosInf);
    }

    #[test]
    fn gamma_band_closed_form() {
        let g = GammaBand::new(1.0, 1.0, 2.0).unwrap();
        assert_eq!(g.f(0.0, 0.0, 0.0, 0.0, 3.0), ExtReal::Finite(2.0));
        let grid = gamma_grid(g.gamma_domain(), 301);
        let numeric = conjugate(&g, 3.0, 0.0, 0.0, &grid).unwrap().finite().unwrap();
        assert!((numeric - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_grid_conjugate() {
        let g = quadratic();
        let v = conjugate(&g, 2.0, 0.0, 0.0, g.grid()).unwrap().finite().unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn conjugate_errors() {
        let g = GammaBand::new(1.0, 1.0, 2.0).unwrap();
        assert_eq!(conjugate(&g, 1.0, 0.0, 0.0, &[]), Err(Error::EmptyGammaGrid));
        assert_eq!(
            conjugate(&g, 1.0, 0.0, 0.0, &[0.0, 3.0]),
            Err(Error::GammaOutsideDomain { gamma: 3.0 })
        );
    }

    #[test]
    fn linear_generator_domain_is_a_point() {
        let g = LinearGenerator::new(0.1, 1.0).unwrap();
        assert_eq!(evaluate_hat_f(&g, 0.0, 0.0, 2.0, 0.0, 1.0), ExtReal::Finite(0.2));
        assert_eq!(evaluate_hat_f(&g, 0.0, 0.0, 2.0, 0.0, 1.5), ExtReal::PosInf);
        let grid = gamma_grid(Interval::new(-5.0, 5.0), 11);
        let v = conjugate(&g, 1.0, 2.0, 0.0, &grid).unwrap().finite().unwrap();
        assert!((v - 0.2).abs() < 1e-15);
    }

    #[test]
    fn eps_maximizer_examples() {
        let uvm = UncertainVolatility::from_vols(1.0, 2.0).unwrap();
        let grid = gamma_grid(Interval::new(-10.0, 10.0), 201);
        for a in [4.0, 1.0] {
            let (g, _) = grid_maximizer(&uvm, 0.0, 0.0, 0.0, 0.0, a, &grid).unwrap();
            assert_eq!(g, 0.0);
            assert_eq!(eps_maximizer(&uvm, 0.0, 0.0, a, 0.0, 0.0, 1e-3).unwrap().gamma, 0.0);
        }
        let q = quadratic();
        let m = eps_maximizer(&q, 0.0, 0.0, 2.0, 0.0, 0.0, 1e-6).unwrap();
        assert!((m.gamma - 1.0).abs() <= 0.01);
        assert!(m.objective >= m.conjugate - 1e-6);
        assert_eq!(
            eps_maximizer(&uvm, 0.0, 0.0, 9.0, 0.0, 0.0, 1e-3),
            Err(Error::ConjugateInfinite { a: 9.0 })
        );
    }

    #[test]
    fn gamma_band_maximizer_agrees_with_grid() {
        let g = GammaBand::new(1.2, 0.7, 1.9).unwrap();
        let grid = gamma_grid(g.gamma_domain(), 2601);
        for a in [0.3, 1.44, 2.5] {
            let analytic = g.maximizer(0.0, 0.0, 0.0, 0.0, a).unwrap();
            let (numeric, _) = grid_maximizer(&g, 0.0, 0.0, 0.0, 0.0, a, &grid).unwrap();
            assert!((analytic - numeric).abs() < 1e-12, "a={a}");
        }
    }

    #[test]
    fn payoffs() {
        assert_eq!(Payoff::call(0.5).terminal(1.0), Some(0.5));
        assert_eq!(Payoff::put(0.5).terminal(1.0), Some(0.0));
        assert_eq!(Payoff::neg_square().terminal(3.0), Some(-9.0));
        let b = Payoff::butterfly(0.0, 1.0);
        assert_eq!(b.terminal(0.0), Some(1.0));
        assert_eq!(b.terminal(2.0), Some(0.0));
        let t = Payoff::table(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.terminal(0.5), Some(0.5));
        assert_eq!(t.terminal(3.0), Some(1.0));
        assert_eq!(t.terminal(-1.0), Some(-1.0));
        let max = Payoff::path_dependent("max", 1.0, |s| s.iter().cloned().fold(f64::MIN, f64::max));
        assert_eq!(max.on_states(&[0.0, 2.0, 1.0]), 2.0);
        assert!(max.terminal(1.0).is_none());
    }

    #[test]
    fn grid_includes_zero() {
        let g = gamma_grid(Interval::new(-1.0, 2.0), 4);
        assert!(g.contains(&0.0));
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
