//! Experiment configuration: a TOML file with one table per concern.
//!
//! ```toml
//! [generator]
//! kind = "uvm"          # linear | uvm | gamma_band | custom
//! sig_lo = 1.0
//! sig_hi = 2.0
//!
//! [payoff]
//! kind = "call"         # call | put | neg_square | butterfly | constant | table
//! k = 0.0
//!
//! [control]
//! A0 = [1.0, 4.0]
//! T0 = "grid"           # or a list of switching times
//! ```
//!
//! Every other table is optional. Validation errors name the offending key.

use std::sync::Arc;

use dualtarget::bsde::{BsdeSettings, Scheme};
use dualtarget::generators::{
    GammaBand, Generator, GridConjugate, LinearGenerator, Payoff, SharedGenerator, UncertainVolatility,
};
use dualtarget::lattice_models::{ControlClass, Lattice, PathControl, SwitchTimes};
use dualtarget::pde::PdeGrid;
use dualtarget::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorSpec,
    pub payoff: PayoffSpec,
    pub control: ControlSpec,
    #[serde(default)]
    pub lattice: LatticeSpec,
    #[serde(default)]
    pub tree: TreeSpec,
    #[serde(default)]
    pub bsde: BsdeSpec,
    #[serde(default)]
    pub pde: PdeSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub dual: DualSpec,
    #[serde(default)]
    pub qv: QvSpec,
    #[serde(default)]
    pub run: RunSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: String,
    pub r: Option<f64>,
    pub sigma: Option<f64>,
    pub sig_lo: Option<f64>,
    pub sig_hi: Option<f64>,
    pub gam_lo: Option<f64>,
    pub gam_hi: Option<f64>,
    pub gamma_min: Option<f64>,
    pub gamma_max: Option<f64>,
    pub n_gamma: Option<usize>,
    /// Coefficients of `H(gamma)` in increasing degree, for `custom`.
    pub h_coeffs: Option<Vec<f64>>,
    /// Cap on `D_F`, for generators whose domain is unbounded.
    pub a_max: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffSpec {
    pub kind: String,
    pub k: Option<f64>,
    pub w: Option<f64>,
    pub c: Option<f64>,
    pub xs: Option<Vec<f64>>,
    pub ys: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum T0Spec {
    Named(String),
    Times(Vec<f64>),
}

impl Default for T0Spec {
    fn default() -> Self {
        T0Spec::Named("grid".into())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    #[serde(rename = "A0")]
    pub a0: Vec<f64>,
    #[serde(rename = "T0", default)]
    pub t0: T0Spec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeSpec {
    pub n_space: usize,
    pub n_time: usize,
    /// Half-width; the narrowest CFL-admissible width when absent.
    pub x_max: Option<f64>,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            n_space: 400,
            n_time: 100,
            x_max: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeSpec {
    pub depth: usize,
}

impl Default for TreeSpec {
    fn default() -> Self {
        Self { depth: 3 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsdeSpec {
    pub scheme: String,
    pub picard_tol: f64,
    pub basis_degree: usize,
    pub n_paths: usize,
    pub n_steps: usize,
    /// Control value for the single-measure solve; the first entry of `A0` when absent.
    pub control: Option<f64>,
}

impl Default for BsdeSpec {
    fn default() -> Self {
        Self {
            scheme: "explicit".into(),
            picard_tol: 1e-12,
            basis_degree: 3,
            n_paths: 10_000,
            n_steps: 50,
            control: None,
        }
    }
}

/// Missing fields fall back to the lattice so the two solvers share a grid.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeSpec {
    pub x_max: Option<f64>,
    pub n_space: Option<usize>,
    pub n_time: Option<usize>,
    pub a_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub n_paths: usize,
    /// Rebalancing steps per simulated path.
    pub n_steps: usize,
    pub tol: Option<f64>,
    pub threshold: f64,
    /// Capital tested is `v0 + margin`.
    pub margin: f64,
    pub switch_time: f64,
    /// Also search for the smallest passing capital.
    pub bisect: bool,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            n_steps: 1000,
            tol: None,
            threshold: 0.99,
            margin: 0.05,
            switch_time: 0.5,
            bisect: false,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualSpec {
    /// Control value whose `K` increments are written; the first entry of `A0` when absent.
    pub k_control: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QvSpec {
    pub n_steps: usize,
    /// Diffusion value of the sampled path; the largest entry of `A0` when absent.
    pub a: Option<f64>,
    pub window: f64,
}

impl Default for QvSpec {
    fn default() -> Self {
        Self {
            n_steps: 100_000,
            a: None,
            window: 0.01,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub seed: u64,
}

fn invalid(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

fn need(v: Option<f64>, key: &str) -> Result<f64> {
    let v = v.ok_or_else(|| invalid(key, "required"))?;
    if !v.is_finite() {
        return Err(invalid(key, "must be finite"));
    }
    Ok(v)
}

/// Re-labels a core error with a config key.
fn at<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| invalid(key, e.to_string()))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .map(|s| {
                    let line = text[..s.start].lines().count().max(1);
                    format!("line {line}")
                })
                .unwrap_or_else(|| "<document>".into());
            invalid(&key, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.generator()?;
        self.payoff()?;
        self.class()?;
        if self.lattice.n_space < 4 || !self.lattice.n_space.is_multiple_of(2) {
            return Err(invalid("lattice.n_space", "must be an even integer >= 4"));
        }
        if self.lattice.n_time == 0 {
            return Err(invalid("lattice.n_time", "must be positive"));
        }
        if self.tree.depth == 0 {
            return Err(invalid("tree.depth", "must be positive"));
        }
        self.bsde_settings()?;
        if self.verify.n_steps == 0 {
            return Err(invalid("verify.n_steps", "must be positive"));
        }
        if self.verify.n_paths == 0 {
            return Err(invalid("verify.n_paths", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.verify.threshold) {
            return Err(invalid("verify.threshold", "must lie in [0, 1]"));
        }
        if !(self.verify.switch_time > 0.0 && self.verify.switch_time < 1.0) {
            return Err(invalid("verify.switch_time", "must lie in (0, 1)"));
        }
        if self.qv.n_steps < 2 {
            return Err(invalid("qv.n_steps", "must be at least 2"));
        }
        if self.qv.window.is_nan() || self.qv.window <= 0.0 {
            return Err(invalid("qv.window", "must be positive"));
        }
        Ok(())
    }

    pub fn generator(&self) -> Result<SharedGenerator> {
        let g = &self.generator;
        let gen: SharedGenerator = match g.kind.as_str() {
            "linear" => Arc::new(at(
                "generator",
                LinearGenerator::new(need(g.r, "generator.r")?, need(g.sigma, "generator.sigma")?),
            )?),
            "uvm" => Arc::new(at(
                "generator",
                UncertainVolatility::from_vols(
                    need(g.sig_lo, "generator.sig_lo")?,
                    need(g.sig_hi, "generator.sig_hi")?,
                ),
            )?),
            "gamma_band" => Arc::new(at(
                "generator",
                GammaBand::new(
                    need(g.sigma, "generator.sigma")?,
                    need(g.gam_lo, "generator.gam_lo")?,
                    need(g.gam_hi, "generator.gam_hi")?,
                ),
            )?),
            "custom" => {
                let coeffs = g.h_coeffs.clone().unwrap_or_else(|| vec![0.0, 0.0, 0.5]);
                let n = g.n_gamma.ok_or_else(|| invalid("generator.n_gamma", "required"))?;
                let mut c = at(
                    "generator",
                    GridConjugate::polynomial(
                        coeffs,
                        need(g.gamma_min, "generator.gamma_min")?,
                        need(g.gamma_max, "generator.gamma_max")?,
                        n,
                    ),
                )?;
                if let Some(cap) = g.a_max {
                    c = c.with_a_cap(cap);
                }
                Arc::new(c)
            }
            other => {
                return Err(invalid(
                    "generator.kind",
                    format!("unknown generator `{other}`; expected linear, uvm, gamma_band or custom"),
                ))
            }
        };
        Ok(gen)
    }

    pub fn payoff(&self) -> Result<Payoff> {
        let p = &self.payoff;
        Ok(match p.kind.as_str() {
            "call" => Payoff::call(need(p.k, "payoff.k")?),
            "put" => Payoff::put(need(p.k, "payoff.k")?),
            "neg_square" => Payoff::neg_square(),
            "constant" => Payoff::constant(need(p.c, "payoff.c")?),
            "butterfly" => {
                let w = need(p.w, "payoff.w")?;
                if w <= 0.0 {
                    return Err(invalid("payoff.w", "must be positive"));
                }
                Payoff::butterfly(need(p.k, "payoff.k")?, w)
            }
            "table" => {
                let xs = p.xs.clone().ok_or_else(|| invalid("payoff.xs", "required"))?;
                let ys = p.ys.clone().ok_or_else(|| invalid("payoff.ys", "required"))?;
                at("payoff.xs", Payoff::table(xs, ys))?
            }
            other => {
                return Err(invalid(
                    "payoff.kind",
                    format!("unknown payoff `{other}`; expected call, put, neg_square, butterfly, constant or table"),
                ))
            }
        })
    }

    pub fn class(&self) -> Result<ControlClass> {
        if self.control.a0.is_empty() {
            return Err(invalid("control.A0", "must be nonempty"));
        }
        let t0 = match &self.control.t0 {
            T0Spec::Named(s) if s == "grid" => SwitchTimes::Grid,
            T0Spec::Named(s) => return Err(invalid("control.T0", format!("expected \"grid\" or a list, got `{s}`"))),
            T0Spec::Times(ts) => SwitchTimes::Explicit(ts.clone()),
        };
        at("control.A0", ControlClass::new(self.control.a0.clone(), t0))
    }

    pub fn lattice(&self) -> Result<Lattice> {
        let l = &self.lattice;
        let a_max = self.class()?.a_hi();
        let lat = match l.x_max {
            Some(x) => Lattice::new(-x, x, l.n_space, l.n_time, a_max),
            None => Lattice::cfl_limited(l.n_space, l.n_time, a_max, 0.0),
        };
        at("lattice", lat)
    }

    pub fn bsde_settings(&self) -> Result<BsdeSettings> {
        let scheme = match self.bsde.scheme.as_str() {
            "explicit" => Scheme::Explicit,
            "picard" => Scheme::Picard,
            other => {
                return Err(invalid(
                    "bsde.scheme",
                    format!("expected explicit or picard, got `{other}`"),
                ))
            }
        };
        if self.bsde.picard_tol.is_nan() || self.bsde.picard_tol <= 0.0 {
            return Err(invalid("bsde.picard_tol", "must be positive"));
        }
        Ok(BsdeSettings {
            scheme,
            picard_tol: self.bsde.picard_tol,
            ..BsdeSettings::default()
        })
    }

    pub fn pde_grid(&self) -> Result<PdeGrid> {
        let lat = self.lattice()?;
        let x_max = self.pde.x_max.unwrap_or(lat.x_max());
        let n_space = self.pde.n_space.unwrap_or(lat.n_space());
        let n_time = self.pde.n_time.unwrap_or(self.lattice.n_time);
        at("pde", PdeGrid::symmetric(x_max, n_space, n_time))
    }

    /// The `a`-grid of the PDE maximization; `A0` restricted to `D_F` when absent.
    pub fn a_grid(&self, gen: &dyn Generator) -> Result<Vec<f64>> {
        if let Some(g) = &self.pde.a_grid {
            if g.is_empty() {
                return Err(invalid("pde.a_grid", "must be nonempty"));
            }
            return Ok(g.clone());
        }
        let dom = gen.a_domain();
        let g: Vec<f64> = self.control.a0.iter().copied().filter(|&a| dom.contains(a)).collect();
        if g.is_empty() {
            return Err(invalid("control.A0", "no entry lies in the domain of F"));
        }
        Ok(g)
    }

    /// Index into `A0` of a configured control value, or 0.
    pub fn control_index(&self, value: Option<f64>, key: &str) -> Result<usize> {
        match value {
            None => Ok(0),
            Some(v) => self
                .control
                .a0
                .iter()
                .position(|&a| a == v)
                .ok_or_else(|| invalid(key, format!("{v} is not an entry of A0"))),
        }
    }

    /// `{a = min A0, a = max A0, switch from min to max at verify.switch_time}`.
    pub fn verify_family(&self) -> Result<Vec<PathControl>> {
        let class = self.class()?;
        let (lo, hi) = (class.a_lo(), class.a_hi());
        Ok(vec![
            PathControl::Constant(lo),
            PathControl::Constant(hi),
            PathControl::TimeSwitching {
                switch_times: vec![self.verify.switch_time],
                values: vec![lo, hi],
            },
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[generator]
kind = "uvm"
sig_lo = 1.0
sig_hi = 2.0

[payoff]
kind = "call"
k = 0.0

[control]
A0 = [1.0, 4.0]
"#;

    fn key_of(text: &str) -> String {
        match ExperimentConfig::parse(text) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!(cfg.lattice.n_space, 400);
        assert_eq!(cfg.class().unwrap().a0(), &[1.0, 4.0]);
        assert_eq!(cfg.a_grid(&*cfg.generator().unwrap()).unwrap(), vec![1.0, 4.0]);
        assert_eq!(cfg.pde_grid().unwrap(), PdeGrid::from_lattice(&cfg.lattice().unwrap()));
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(key_of(&BASE.replace("[1.0, 4.0]", "[]")), "control.A0");
        assert_eq!(key_of(&BASE.replace("sig_hi = 2.0\n", "")), "generator.sig_hi");
        assert_eq!(key_of(&BASE.replace("\"uvm\"", "\"nope\"")), "generator.kind");
        assert_eq!(key_of(&BASE.replace("k = 0.0\n", "")), "payoff.k");
        assert_eq!(key_of(&format!("{BASE}\n[bsde]\nscheme = \"rk4\"\n")), "bsde.scheme");
        assert!(key_of(&format!("{BASE}\n[lattice]\nbogus = 1\n")).starts_with("line"));
    }
}
