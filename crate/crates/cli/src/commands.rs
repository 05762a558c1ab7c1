use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use dualtarget::bsde::{solve_regression_mc, solve_tree};
use dualtarget::dual_core::{
    dual_value_dp, dual_value_oracle, extract_k, lambda_bound, supermartingale_violation, KField, ValueField,
};
use dualtarget::lattice_models::{
    sample_control_paths, ControlClass, DiffusionControl, Lattice, Model, PathControl, TreeModel, ENUMERATION_CAP,
};
use dualtarget::numfmt::g17;
use dualtarget::path_engine::{density_estimate, quadratic_variation};
use dualtarget::pde::{envelope_check, solve_fully_nonlinear, solve_semilinear};
use dualtarget::primal_verify::{
    default_tolerance, minimal_superhedge_capital, sample_family, superhedge_report_on, HedgeFields,
};

use crate::config::ExperimentConfig;

/// What a subcommand reports: `key=value` pairs and named checks.
#[derive(Debug, Default)]
pub struct Outcome {
    pub summary: Vec<(String, String)>,
    pub checks: Vec<(String, bool)>,
}

impl Outcome {
    fn put(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    fn num(&mut self, key: &str, value: f64) {
        self.put(key, g17(value));
    }

    fn check(&mut self, name: &str, ok: bool) {
        self.checks.push((name.to_string(), ok));
    }

    fn merge(&mut self, prefix: &str, other: Outcome) {
        for (k, v) in other.summary {
            self.summary.push((format!("{prefix}.{k}"), v));
        }
        for (k, ok) in other.checks {
            self.checks.push((format!("{prefix}.{k}"), ok));
        }
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect()
    }

    pub fn line(&self) -> String {
        self.summary
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .chain(
                self.checks
                    .iter()
                    .map(|(k, ok)| format!("check.{k}={}", if *ok { "pass" } else { "fail" })),
            )
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = out.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_value_surface(out: &Path, lat: &Lattice, vf: &ValueField, class: &ControlClass) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(out, "value_surface.csv")?);
    w.write_record(["t", "x", "V", "argmax_a"])?;
    for (k, row) in vf.v.iter().enumerate() {
        let t = g17(lat.time(k));
        for (i, v) in row.iter().enumerate() {
            let a = vf.argmax.get(k).map(|r| g17(class.a0()[r[i]])).unwrap_or_default();
            w.write_record([t.as_str(), &g17(lat.state(k, i)), &g17(*v), &a])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_k(out: &Path, lat: &Lattice, kf: &KField) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(out, "k_process.csv")?);
    w.write_record(["t", "x", "dK"])?;
    for (k, row) in kf.dk.iter().enumerate() {
        let t = g17(lat.time(k));
        for (i, d) in row.iter().enumerate() {
            w.write_record([t.as_str(), &g17(lat.state(k, i)), &g17(*d)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn dual(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let gen = cfg.generator()?;
    let payoff = cfg.payoff()?;
    let class = cfg.class()?;
    let lat = cfg.lattice()?;
    let settings = cfg.bsde_settings()?;
    let vf = dual_value_dp(&lat, &class, &*gen, &payoff, &settings)?;
    write_value_surface(out, &lat, &vf, &class)?;
    let j = cfg.control_index(cfg.dual.k_control, "dual.k_control")?;
    let kf = extract_k(
        &vf,
        &lat,
        &class,
        &DiffusionControl::constant(&lat, j),
        &*gen,
        &settings,
    )?;
    write_k(out, &lat, &kf)?;
    let opt = extract_k(&vf, &lat, &class, &vf.argmax_control(), &*gen, &settings)?;
    let lambda = lambda_bound(&lat, &class, &*gen, &payoff)?;
    let sm = supermartingale_violation(&lat, &class, &*gen, &vf, &settings, 0, lat.n_steps())?;

    let mut o = Outcome::default();
    o.num("v0", vf.v0);
    o.num("k_min", kf.min);
    o.num("k_expected_total", kf.expected_total);
    o.num("k_argmax_max_abs", opt.max_abs);
    o.num("lambda0", lambda.lambda0);
    o.num("supermartingale_violation", sm);
    o.check("k_nonnegative", kf.min >= -1e-10);
    o.check("k_zero_at_argmax", opt.max_abs <= 1e-8);
    o.check("supermartingale", sm <= 1e-10);
    Ok(o)
}

pub fn oracle(cfg: &ExperimentConfig, depth: Option<usize>, a0: Option<Vec<f64>>) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    if let Some(a0) = a0 {
        cfg.control.a0 = a0;
    }
    let class = cfg.class()?;
    let gen = cfg.generator()?;
    let payoff = cfg.payoff()?;
    let settings = cfg.bsde_settings()?;
    let tree = TreeModel::trinomial_for(depth.unwrap_or(cfg.tree.depth), &class)?;
    let dp = dual_value_dp(&tree, &class, &*gen, &payoff, &settings)?;
    let or = dual_value_oracle(&tree, &class, &*gen, &payoff, &settings, ENUMERATION_CAP)?;
    let gap = (dp.v0 - or.value).abs();
    let mut o = Outcome::default();
    o.num("v0", or.value);
    o.num("v0_dp", dp.v0);
    o.num("gap", gap);
    o.put("controls_evaluated", or.evaluated);
    o.put("controls_skipped", or.skipped);
    o.check("oracle_matches_dp", gap <= 1e-12);
    Ok(o)
}

pub fn bsde(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<Outcome> {
    let gen = cfg.generator()?;
    let payoff = cfg.payoff()?;
    let class = cfg.class()?;
    let lat = cfg.lattice()?;
    let settings = cfg.bsde_settings()?;
    let j = cfg.control_index(cfg.bsde.control, "bsde.control")?;
    let a = class.a0()[j];
    let sol = solve_tree(
        &lat,
        &class,
        &DiffusionControl::constant(&lat, j),
        &*gen,
        &payoff,
        &settings,
    )?;
    let mut w = csv::Writer::from_writer(create(out, "bsde_solution.csv")?);
    w.write_record(["t", "x", "Y", "Z"])?;
    for (k, row) in sol.y.iter().enumerate() {
        let t = g17(lat.time(k));
        for (i, y) in row.iter().enumerate() {
            let z = sol.z.get(k).map(|r| g17(r[i])).unwrap_or_default();
            w.write_record([t.as_str(), &g17(lat.state(k, i)), &g17(*y), &z])?;
        }
    }
    w.flush()?;
    let paths = sample_control_paths(&PathControl::Constant(a), cfg.bsde.n_paths, cfg.bsde.n_steps, seed);
    let mc = solve_regression_mc(&paths, &*gen, &payoff, cfg.bsde.basis_degree)?;
    let mut o = Outcome::default();
    o.num("a", a);
    o.num("y0", sol.y0);
    o.num("y0_mc", mc.y0);
    o.num("mc_std_error", mc.std_error);
    o.check("mc_within_4se", (mc.y0 - sol.y0).abs() <= 4.0 * mc.std_error + 2e-2);
    Ok(o)
}

pub fn pde(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let gen = cfg.generator()?;
    let payoff = cfg.payoff()?;
    let grid = cfg.pde_grid()?;
    let a_grid = cfg.a_grid(&*gen)?;
    let u = solve_fully_nonlinear(&*gen, &a_grid, &payoff, &grid)?;
    u.write_csv(create(out, "pde_surface.csv")?)?;
    let slices = a_grid
        .iter()
        .map(|&a| solve_semilinear(a, &*gen, &payoff, &grid))
        .collect::<dualtarget::Result<Vec<_>>>()?;
    let env = envelope_check(&u, &slices)?;
    let mut o = Outcome::default();
    o.num("u0", u.u0);
    o.num("envelope_violation", env.max_violation);
    o.num("envelope_root_gap", env.root_gap);
    o.num("envelope_attained_by", a_grid[env.attained_by]);
    o.check("envelope", env.max_violation <= 5e-3 && env.root_gap <= 5e-3);
    Ok(o)
}

pub fn verify(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<Outcome> {
    let gen = cfg.generator()?;
    let payoff = cfg.payoff()?;
    let class = cfg.class()?;
    let lat = cfg.lattice()?;
    let vf = dual_value_dp(&lat, &class, &*gen, &payoff, &cfg.bsde_settings()?)?;
    let hedge = HedgeFields::from_value_field(&vf, &lat)?;
    let tol = cfg.verify.tol.unwrap_or_else(|| default_tolerance(&lat));
    let n_steps = cfg.verify.n_steps;
    let family = cfg.verify_family()?;
    let paths = sample_family(&family, cfg.verify.n_paths, n_steps, seed);
    let y0 = vf.v0 + cfg.verify.margin;
    let report = superhedge_report_on(y0, &hedge, &*gen, &payoff, &paths, tol)?;
    {
        let mut f = create(out, "superhedge_report.csv")?;
        report.write_csv(&mut f)?;
        f.flush()?;
    }
    let mut o = Outcome::default();
    o.num("v0", vf.v0);
    o.num("y0", y0);
    o.num("tol", tol);
    o.num("min_pass_fraction", report.min_pass_fraction);
    o.put("clamped_steps", report.clamped);
    o.check("superhedge", report.passes(cfg.verify.threshold));
    if cfg.verify.bisect {
        let lo = vf.v0 - 1.0;
        let hi = vf.v0 + 1.0;
        let y_min = minimal_superhedge_capital(
            &hedge,
            &*gen,
            &payoff,
            &paths,
            tol,
            cfg.verify.threshold,
            (lo, hi),
            1e-4,
        )?;
        o.num("y0_min", y_min);
        o.check("sandwich", y_min >= vf.v0 - 0.01 && y_min <= vf.v0 + 0.08);
    }
    Ok(o)
}

pub fn qv(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<Outcome> {
    let class = cfg.class()?;
    let a = cfg.qv.a.unwrap_or(class.a_hi());
    let n = cfg.qv.n_steps;
    let path = sample_control_paths(&PathControl::Constant(a), 1, n, seed)
        .pop()
        .expect("one path")
        .path;
    let qv = quadratic_variation(&path);
    let density = density_estimate(&qv, cfg.qv.window)?;
    let mut w = csv::Writer::from_writer(create(out, "qv.csv")?);
    w.write_record(["t", "x", "qv", "a_hat"])?;
    for k in 0..path.len() {
        w.write_record([
            g17(path.grid()[k]),
            g17(path.scalar_at(k)),
            g17(qv.entry(k, 0, 0)),
            g17(density.entry(k, 0, 0)),
        ])?;
    }
    w.flush()?;
    let realized = qv.entry(path.len() - 1, 0, 0);
    let mut hats: Vec<f64> = (0..density.len()).map(|k| density.entry(k, 0, 0)).collect();
    hats.sort_by(f64::total_cmp);
    let median = hats[hats.len() / 2];
    let mut o = Outcome::default();
    o.num("a", a);
    o.num("realized_qv", realized);
    o.num("a_hat_median", median);
    o.check("qv_within_5pct", (realized - a).abs() <= 0.05 * a);
    Ok(o)
}

/// Every solver on the configured problem, with cross-checks between them.
pub fn suite(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<Outcome> {
    let mut o = Outcome::default();
    let d = dual(cfg, out)?;
    let v0 = d
        .summary
        .iter()
        .find(|(k, _)| k == "v0")
        .map(|(_, v)| v.parse::<f64>())
        .transpose()?;
    o.merge("dual", d);
    let p = pde(cfg, out)?;
    let u0 = p
        .summary
        .iter()
        .find(|(k, _)| k == "u0")
        .map(|(_, v)| v.parse::<f64>())
        .transpose()?;
    o.merge("pde", p);
    if let (Some(v0), Some(u0)) = (v0, u0) {
        o.num("dual_pde_gap", (v0 - u0).abs());
    }
    o.merge("oracle", oracle(cfg, None, None)?);
    o.merge("verify", verify(cfg, out, seed)?);
    o.merge("qv", qv(cfg, out, seed)?);
    Ok(o)
}
