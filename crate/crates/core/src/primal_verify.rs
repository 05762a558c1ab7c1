//! Forward side of the target problem: controlled wealth processes driven by
//! a hedge `(Z, Gamma)` read off the value surface, superhedging reports over
//! a finite family of diffusion controls, and the moving-average smoothing of
//! an integrand.

use std::io::Write;

use crate::dual_core::ValueField;
use crate::error::{Error, Result};
use crate::generators::{eps_maximizer, Generator, Payoff};
use crate::lattice_models::{sample_control_paths, ControlledPath, Lattice, Model, PathControl};
use crate::numfmt::g17;
use crate::par;
use crate::path_engine::{Process, SamplePath};

/// `Z = D_x V` and `Gamma = D_xx V` by central differences on every lattice node.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeFields {
    lattice: Lattice,
    /// Layers `0..n_time`.
    pub z: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    /// Number of final layers on which `Gamma` is not used.
    pub kink_layers: usize,
}

impl HedgeFields {
    pub fn from_value_field(vf: &ValueField, lattice: &Lattice) -> Result<Self> {
        let n = lattice.n_steps();
        let m = lattice.n_space();
        if vf.v.len() != n + 1 || vf.v.iter().any(|r| r.len() != m + 1) {
            return Err(Error::GridMismatch("value field does not live on this lattice".into()));
        }
        let dx = lattice.dx();
        let mut z = Vec::with_capacity(n);
        let mut gamma = Vec::with_capacity(n);
        for row in &vf.v[..n] {
            let mut zr = vec![0.0; m + 1];
            let mut gr = vec![0.0; m + 1];
            for i in 1..m {
                zr[i] = (row[i + 1] - row[i - 1]) / (2.0 * dx);
                gr[i] = (row[i + 1] + row[i - 1] - 2.0 * row[i]) / (dx * dx);
            }
            zr[0] = zr[1];
            zr[m] = zr[m - 1];
            gr[0] = gr[1];
            gr[m] = gr[m - 1];
            z.push(zr);
            gamma.push(gr);
        }
        if let Some(k) = z.iter().chain(&gamma).position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { node: k });
        }
        Ok(Self {
            lattice: lattice.clone(),
            z,
            gamma,
            kink_layers: 2,
        })
    }

    /// Identically zero hedge on a lattice.
    pub fn zero(lattice: &Lattice) -> Self {
        let row = vec![0.0; lattice.n_nodes()];
        let rows = vec![row; lattice.n_steps()];
        Self {
            lattice: lattice.clone(),
            z: rows.clone(),
            gamma: rows,
            kink_layers: 0,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn layer(&self, t: f64) -> usize {
        let n = self.lattice.n_steps();
        ((t / self.lattice.dt() + 1e-9).floor() as usize).min(n - 1)
    }

    /// `(Z, Gamma, uses_gamma, clamped)` at `(t, x)`.
    fn at(&self, t: f64, x: f64) -> (f64, f64, bool, bool) {
        let k = self.layer(t);
        let (j, w, clamped) = self.lattice.locate(x);
        let lerp = |r: &[f64]| (1.0 - w) * r[j] + w * r[j + 1];
        let uses_gamma = k + self.kink_layers < self.lattice.n_steps();
        (lerp(&self.z[k]), lerp(&self.gamma[k]), uses_gamma, clamped)
    }
}

/// Which forward dynamics to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForwardMode {
    /// `dY = (a Gamma / 2 - H(Y, Z, Gamma)) dt + Z dB` with `Gamma` from the
    /// hedge, projected onto `D_H`; `F_hat` dynamics on the kink layers.
    Primal,
    /// As `Primal` with `Gamma` an `eps`-maximizer at the current `(Y, Z)`.
    RelaxedEps(f64),
    /// `dY = F_hat(Y, Z) dt + Z dB`.
    Further,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRun {
    pub y1: Vec<f64>,
    /// Steps on which a path left the lattice and the hedge was clamped.
    pub clamped: usize,
}

fn forward_one(
    y0: f64,
    hedge: &HedgeFields,
    gen: &dyn Generator,
    cp: &ControlledPath,
    mode: ForwardMode,
) -> Result<(f64, usize)> {
    let path = &cp.path;
    let grid = path.grid();
    let dom = gen.gamma_domain();
    let mut y = y0;
    let mut clamped = 0;
    for k in 0..grid.len() - 1 {
        let (t, x) = (grid[k], path.scalar_at(k));
        let dt = grid[k + 1] - t;
        let a = cp.a[k];
        let (z, g, uses_gamma, c) = hedge.at(t, x);
        clamped += c as usize;
        let hat_f = |y: f64| -> Result<f64> { gen.f(t, x, y, z, a).finite().ok_or(Error::ConjugateInfinite { a }) };
        let drift = match mode {
            ForwardMode::Further => hat_f(y)?,
            ForwardMode::Primal if !uses_gamma => hat_f(y)?,
            ForwardMode::Primal => {
                let g = g.clamp(dom.lo, dom.hi);
                let h = gen
                    .h(t, x, y, z, g)
                    .finite()
                    .ok_or(Error::GammaOutsideDomain { gamma: g })?;
                0.5 * a * g - h
            }
            ForwardMode::RelaxedEps(eps) => {
                let m = eps_maximizer(gen, t, x, a, y, z, eps)?;
                let h = gen
                    .h(t, x, y, z, m.gamma)
                    .finite()
                    .ok_or(Error::GammaOutsideDomain { gamma: m.gamma })?;
                0.5 * a * m.gamma - h
            }
        };
        y += drift * dt + z * path.increment(k, 0);
        if !y.is_finite() {
            return Err(Error::NonFinite { node: k + 1 });
        }
    }
    Ok((y, clamped))
}

/// Runs the forward wealth equation from `y0` along each path; returns `Y_1`.
pub fn forward_state(
    y0: f64,
    hedge: &HedgeFields,
    gen: &dyn Generator,
    paths: &[ControlledPath],
    mode: ForwardMode,
) -> Result<ForwardRun> {
    let runs = par::map_indices(paths.len(), |p| forward_one(y0, hedge, gen, &paths[p], mode));
    let mut y1 = Vec::with_capacity(paths.len());
    let mut clamped = 0;
    for r in runs {
        let (y, c) = r?;
        y1.push(y);
        clamped += c;
    }
    if clamped > 0 {
        log::warn!("{clamped} path steps left the lattice; hedge clamped to the edge");
    }
    Ok(ForwardRun { y1, clamped })
}

/// Outcome for one control of the family.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlReport {
    pub control_id: usize,
    /// Fraction of paths with `Y_1 >= xi - tol`.
    pub pass_fraction: f64,
    pub min_gap: f64,
    /// 5% quantile of `Y_1 - xi`.
    pub p05_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperhedgeReport {
    pub controls: Vec<ControlReport>,
    /// Minimum pass fraction over the family.
    pub min_pass_fraction: f64,
    pub clamped: usize,
}

impl SuperhedgeReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.min_pass_fraction >= threshold
    }

    /// `control_id,pass_fraction,min_gap,p05_gap` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["control_id", "pass_fraction", "min_gap", "p05_gap"])?;
        for c in &self.controls {
            w.write_record([
                c.control_id.to_string(),
                g17(c.pass_fraction),
                g17(c.min_gap),
                g17(c.p05_gap),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Default tolerance `2 (dx + sqrt(dt))` of a lattice.
pub fn default_tolerance(lattice: &Lattice) -> f64 {
    2.0 * (lattice.dx() + lattice.dt().sqrt())
}

/// Paths for every member of a control family; member `j` uses seed `seed + j`.
pub fn sample_family(family: &[PathControl], n_paths: usize, n_steps: usize, seed: u64) -> Vec<Vec<ControlledPath>> {
    family
        .iter()
        .enumerate()
        .map(|(j, c)| sample_control_paths(c, n_paths, n_steps, seed.wrapping_add(j as u64)))
        .collect()
}

/// Superhedging report on pre-sampled paths, one path set per control.
pub fn superhedge_report_on(
    y0: f64,
    hedge: &HedgeFields,
    gen: &dyn Generator,
    payoff: &Payoff,
    family_paths: &[Vec<ControlledPath>],
    tol: f64,
) -> Result<SuperhedgeReport> {
    if family_paths.is_empty() {
        return Err(Error::InvalidControlClass("empty measure family".into()));
    }
    let mut controls = Vec::with_capacity(family_paths.len());
    let mut clamped = 0;
    for (id, paths) in family_paths.iter().enumerate() {
        if paths.is_empty() {
            return Err(Error::TooFewPaths { needed: 1, got: 0 });
        }
        let run = forward_state(y0, hedge, gen, paths, ForwardMode::Primal)?;
        clamped += run.clamped;
        let mut gaps: Vec<f64> = run
            .y1
            .iter()
            .zip(paths)
            .map(|(y, cp)| y - payoff.evaluate(&cp.path))
            .collect();
        let pass = gaps.iter().filter(|&&g| g >= -tol).count();
        gaps.sort_by(f64::total_cmp);
        let q = ((0.05 * gaps.len() as f64).ceil() as usize).clamp(1, gaps.len()) - 1;
        controls.push(ControlReport {
            control_id: id,
            pass_fraction: pass as f64 / gaps.len() as f64,
            min_gap: gaps[0],
            p05_gap: gaps[q],
        });
    }
    let min_pass_fraction = controls.iter().map(|c| c.pass_fraction).fold(1.0, f64::min);
    Ok(SuperhedgeReport {
        controls,
        min_pass_fraction,
        clamped,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn superhedge_report(
    y0: f64,
    hedge: &HedgeFields,
    gen: &dyn Generator,
    payoff: &Payoff,
    family: &[PathControl],
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    tol: f64,
) -> Result<SuperhedgeReport> {
    let paths = sample_family(family, n_paths, n_steps, seed);
    superhedge_report_on(y0, hedge, gen, payoff, &paths, tol)
}

/// Smallest `y0` in `[lo, hi]` (to `resolution`) whose report passes
/// `threshold` on every control, by bisection on fixed paths.
#[allow(clippy::too_many_arguments)]
pub fn minimal_superhedge_capital(
    hedge: &HedgeFields,
    gen: &dyn Generator,
    payoff: &Payoff,
    family_paths: &[Vec<ControlledPath>],
    tol: f64,
    threshold: f64,
    (mut lo, mut hi): (f64, f64),
    resolution: f64,
) -> Result<f64> {
    let ok = |y: f64| -> Result<bool> {
        Ok(superhedge_report_on(y, hedge, gen, payoff, family_paths, tol)?.passes(threshold))
    };
    if !ok(hi)? {
        return Err(Error::InvalidModel(format!(
            "capital {hi} does not superhedge; widen the bracket"
        )));
    }
    if ok(lo)? {
        return Ok(lo);
    }
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// The further-relaxed and the `eps`-relaxed wealth on the same paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationGap {
    pub further: Vec<f64>,
    pub relaxed: Vec<f64>,
    /// `eps * e^C` with `C` the `y`-Lipschitz constant of the generator.
    pub bound: f64,
}

impl RelaxationGap {
    pub fn max_gap(&self) -> f64 {
        self.further
            .iter()
            .zip(&self.relaxed)
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_gap(&self) -> f64 {
        self.further
            .iter()
            .zip(&self.relaxed)
            .map(|(a, b)| a - b)
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn relaxation_gap(
    y0: f64,
    hedge: &HedgeFields,
    gen: &dyn Generator,
    paths: &[ControlledPath],
    eps: f64,
) -> Result<RelaxationGap> {
    let further = forward_state(y0, hedge, gen, paths, ForwardMode::Further)?.y1;
    let relaxed = forward_state(y0, hedge, gen, paths, ForwardMode::RelaxedEps(eps))?.y1;
    Ok(RelaxationGap {
        further,
        relaxed,
        bound: eps * gen.lipschitz_yz().exp(),
    })
}

/// Result of smoothing an integrand by a trailing moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct BankBaum {
    /// `Z^n_t = n int_{t - 1/n}^t Z_s ds` on the driver's grid.
    pub z_n: Process,
    /// `sup_t |X^{Z^n}_t - X^Z_t|`.
    pub deviation: f64,
    /// Total variation of `Z^n` on the grid.
    pub total_variation: f64,
}

/// Moving-average approximation `Z^n` of `z` (piecewise constant on the
/// driver's grid, extended by `Z_0` before time 0) and the deviation of the
/// state `dX = h(t, X, Z) dt + Z dB`, `X_0 = 0`, under `Z^n` versus `Z`.
pub fn bank_baum_approx(
    z: &Process,
    driver: &SamplePath,
    n: usize,
    h: &dyn Fn(f64, f64, f64) -> f64,
) -> Result<BankBaum> {
    if n == 0 {
        return Err(Error::InvalidWindow("smoothing level must be at least 1".into()));
    }
    if z.grid() != driver.grid() || z.dim() != 1 || driver.dim() != 1 {
        return Err(Error::GridMismatch(
            "integrand must be scalar on the driver's grid".into(),
        ));
    }
    let grid = driver.grid();
    let m = grid.len();
    let zv = z.values();
    let mut cum = vec![0.0; m];
    for k in 1..m {
        cum[k] = cum[k - 1] + zv[k - 1] * (grid[k] - grid[k - 1]);
    }
    let t0 = grid[0];
    let integral_to = |s: f64| -> f64 {
        if s <= t0 {
            return (s - t0) * zv[0];
        }
        let j = grid.partition_point(|&g| g <= s).clamp(1, m) - 1;
        cum[j] + zv[j] * (s - grid[j])
    };
    let width = 1.0 / n as f64;
    let z_n: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(k, &t)| n as f64 * (cum[k] - integral_to(t - width)))
        .collect();
    let total_variation = z_n.windows(2).map(|w| (w[1] - w[0]).abs()).sum();

    let (mut x, mut xn, mut deviation) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..m - 1 {
        let (t, dt, db) = (grid[k], grid[k + 1] - grid[k], driver.increment(k, 0));
        x += h(t, x, zv[k]) * dt + zv[k] * db;
        xn += h(t, xn, z_n[k]) * dt + z_n[k] * db;
        deviation = deviation.max((xn - x).abs());
    }
    Ok(BankBaum {
        z_n: Process::scalar(grid.to_vec(), z_n)?,
        deviation,
        total_variation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::BsdeSettings;
    use crate::dual_core::dual_value_dp;
    use crate::generators::{LinearGenerator, UncertainVolatility};
    use crate::lattice_models::{ControlClass, SwitchTimes};
    use crate::path_engine::uniform_grid;

    fn uvm() -> UncertainVolatility {
        UncertainVolatility::from_vols(1.0, 2.0).unwrap()
    }

    #[test]
    fn zero_hedge_keeps_capital() {
        let lat = Lattice::cfl_limited(40, 20, 4.0, 0.0).unwrap();
        let paths = sample_control_paths(&PathControl::Constant(4.0), 50, 20, 1);
        let run = forward_state(0.7, &HedgeFields::zero(&lat), &uvm(), &paths, ForwardMode::Primal).unwrap();
        assert!(run.y1.iter().all(|&y| y == 0.7));
        let r = superhedge_report_on(
            0.0,
            &HedgeFields::zero(&lat),
            &uvm(),
            &Payoff::constant(0.0),
            &[paths],
            0.0,
        )
        .unwrap();
        assert_eq!(r.min_pass_fraction, 1.0);
    }

    #[test]
    fn linear_generator_grows_capital() {
        let lat = Lattice::cfl_limited(40, 100, 1.0, 0.0).unwrap();
        let gen = LinearGenerator::new(0.1, 1.0).unwrap();
        let paths = sample_control_paths(&PathControl::Constant(1.0), 10, 1000, 3);
        let run = forward_state(
            (-0.1f64).exp(),
            &HedgeFields::zero(&lat),
            &gen,
            &paths,
            ForwardMode::Further,
        )
        .unwrap();
        assert!(run.y1.iter().all(|&y| (y - 1.0).abs() < 1e-3));
    }

    #[test]
    fn delta_hedge_at_optimizing_measure() {
        let class = ControlClass::new(vec![1.0, 4.0], SwitchTimes::Grid).unwrap();
        let lat = Lattice::cfl_limited(400, 100, 4.0, 0.0).unwrap();
        let call = Payoff::call(0.0);
        let vf = dual_value_dp(&lat, &class, &uvm(), &call, &BsdeSettings::default()).unwrap();
        let hedge = HedgeFields::from_value_field(&vf, &lat).unwrap();
        let paths = sample_control_paths(&PathControl::Constant(4.0), 10_000, 100, 11);
        let run = forward_state(vf.v0, &hedge, &uvm(), &paths, ForwardMode::Primal).unwrap();
        let mean = run
            .y1
            .iter()
            .zip(&paths)
            .map(|(y, p)| y - call.evaluate(&p.path))
            .sum::<f64>()
            / paths.len() as f64;
        assert!((-0.01..=0.03).contains(&mean), "{mean}");
    }

    #[test]
    fn bank_baum_trivial_cases() {
        let grid = uniform_grid(0.0, 64);
        let b = SamplePath::from_increments(grid.clone(), 1, &[0.1; 64]).unwrap();
        let zero = Process::scalar(grid.clone(), vec![0.0; 65]).unwrap();
        let r = bank_baum_approx(&zero, &b, 4, &|_, _, _| 0.0).unwrap();
        assert_eq!((r.deviation, r.total_variation), (0.0, 0.0));
        let c = Process::scalar(grid, vec![0.3; 65]).unwrap();
        let r = bank_baum_approx(&c, &b, 4, &|_, _, _| 0.0).unwrap();
        assert!(r.z_n.values().iter().all(|&v| (v - 0.3).abs() < 1e-12));
        assert!(r.deviation < 1e-12);
    }

    #[test]
    fn bank_baum_window_average() {
        let grid = uniform_grid(0.0, 8);
        let b = SamplePath::from_increments(grid.clone(), 1, &[0.0; 8]).unwrap();
        let z: Vec<f64> = (0..9).map(|k| k as f64).collect();
        let r = bank_baum_approx(&Process::scalar(grid, z).unwrap(), &b, 4, &|_, _, _| 0.0).unwrap();
        // window of two steps: average of z[k-2], z[k-1]
        assert!((r.z_n.scalar_at(4) - 2.5).abs() < 1e-12);
        assert!((r.z_n.scalar_at(1) - 0.0).abs() < 1e-12);
        assert!((r.total_variation - 6.5).abs() < 1e-12);
        assert!(bank_baum_approx(&r.z_n, &b, 0, &|_, _, _| 0.0).is_err());
    }
}
