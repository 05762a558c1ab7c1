//! The dual value `v(xi) = sup_P Y^P_0` and the value process `V`.
//!
//! On a model the supremum over node-indexed controls is computed by the
//! dynamic programming recursion
//!
//! ```text
//! V(t_k, x) = max_{a in A_0 cap D_F} [ E_a[V(t_{k+1})] - dt F(t_k, x, E_a[V'], Z_a, a) ]
//! ```
//!
//! which uses exactly the per-node step of [`crate::bsde`], so the value of
//! any single control and the dual value are directly comparable. On trees
//! the recursion is checked against brute-force enumeration of every adapted
//! control.

use crate::bsde::{apply_backward_operator, backward_step, conditional_moments, solve_tree, BsdeSettings};
use crate::error::{Error, Result};
use crate::generators::{Generator, Payoff};
use crate::lattice_models::{
    enumerate_controls, paste_control, ControlClass, ControlEnumerator, DiffusionControl, Model, Successors, TreeModel,
};
use crate::par;

/// Value process on every node, with the optimizing `A_0` index.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    /// `v[k][i]` for layers `0..=n_steps`; the terminal layer is `xi`.
    pub v: Vec<Vec<f64>>,
    /// `Z` of the optimizing control, layers `0..n_steps`.
    pub z: Vec<Vec<f64>>,
    /// Optimizing index into `A_0`, lowest index on ties; layers `0..n_steps`.
    pub argmax: Vec<Vec<usize>>,
    pub v0: f64,
    /// Indices of `A_0` inside the domain of `F`.
    pub admissible: Vec<usize>,
}

impl ValueField {
    pub fn argmax_control(&self) -> DiffusionControl {
        DiffusionControl {
            layers: self.argmax.clone(),
        }
    }
}

/// Indices of `A_0` where the conjugate is finite.
pub fn admissible_indices(class: &ControlClass, gen: &dyn Generator) -> Result<Vec<usize>> {
    let dom = gen.a_domain();
    let idx: Vec<usize> = class
        .a0()
        .iter()
        .enumerate()
        .filter(|(_, &a)| dom.contains(a) && a > 0.0)
        .map(|(j, _)| j)
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptyAdmissibleSet);
    }
    Ok(idx)
}

/// Dynamic programming for the dual value over node-indexed controls.
pub fn dual_value_dp<M: Model + ?Sized>(
    model: &M,
    class: &ControlClass,
    gen: &dyn Generator,
    payoff: &Payoff,
    settings: &BsdeSettings,
) -> Result<ValueField> {
    let admissible = admissible_indices(class, gen)?;
    settings.check(model.dt(), gen)?;
    let a0 = class.a0();
    for &j in &admissible {
        model.stencil(a0[j])?;
    }
    let n = model.n_steps();
    let mut v = vec![Vec::new(); n + 1];
    let mut z = vec![Vec::new(); n];
    let mut argmax = vec![Vec::new(); n];
    v[n] = model.terminal_values(payoff)?;
    for k in (0..n).rev() {
        let next = &v[k + 1];
        let rows: Vec<Result<(f64, f64, usize)>> = par::map_indices(model.layer_len(k), |i| {
            let mut best: Option<(f64, f64, usize)> = None;
            for &j in &admissible {
                let (y, zv) = backward_step(model, gen, settings, k, i, a0[j], next)?;
                if best.is_none_or(|b| y > b.0) {
                    best = Some((y, zv, j));
                }
            }
            Ok(best.expect("admissible set is nonempty"))
        });
        let mut vk = Vec::with_capacity(rows.len());
        let mut zk = Vec::with_capacity(rows.len());
        let mut ak = Vec::with_capacity(rows.len());
        for r in rows {
            let (y, zv, j) = r?;
            vk.push(y);
            zk.push(zv);
            ak.push(j);
        }
        v[k] = vk;
        z[k] = zk;
        argmax[k] = ak;
    }
    let v0 = v[0][model.root()];
    Ok(ValueField {
        v,
        z,
        argmax,
        v0,
        admissible,
    })
}

/// Result of exhaustive enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleValue {
    pub value: f64,
    pub best: DiffusionControl,
    /// Controls solved.
    pub evaluated: u128,
    /// Controls skipped because they use a value outside `D_F`.
    pub skipped: u128,
}

/// `max over every adapted control of solve_tree(...).y0`.
pub fn dual_value_oracle(
    tree: &TreeModel,
    class: &ControlClass,
    gen: &dyn Generator,
    payoff: &Payoff,
    settings: &BsdeSettings,
    cap: u128,
) -> Result<OracleValue> {
    let controls = enumerate_controls(tree, class, cap)?;
    let results: Vec<Result<Option<f64>>> = par::map_indices(controls.total() as usize, |idx| {
        let ctl = controls.control_at(idx as u128);
        match solve_tree(tree, class, &ctl, gen, payoff, settings) {
            Ok(sol) => Ok(Some(sol.y0)),
            Err(Error::ControlOutsideDomain { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut best: Option<(f64, usize)> = None;
    let mut skipped = 0u128;
    for (idx, r) in results.into_iter().enumerate() {
        match r? {
            Some(y0) => {
                if best.is_none_or(|b| y0 > b.0) {
                    best = Some((y0, idx));
                }
            }
            None => skipped += 1,
        }
    }
    let (value, idx) = best.ok_or(Error::EmptyAdmissibleSet)?;
    Ok(OracleValue {
        value,
        best: controls.control_at(idx as u128),
        evaluated: controls.total() - skipped,
        skipped,
    })
}

/// Per-node increments of the nondecreasing process `K` under a fixed control.
#[derive(Debug, Clone, PartialEq)]
pub struct KField {
    /// `dk[k][i] = V(t_k, x_i) - (one backward step of V(t_{k+1}) under the control)`.
    pub dk: Vec<Vec<f64>>,
    pub min: f64,
    pub max_abs: f64,
    /// Plain sum over all nodes.
    pub sum: f64,
    /// `E[K_1]` under the control's own transition probabilities from the root.
    pub expected_total: f64,
}

/// Increments `dK = -(E_a[V'] - V) + dt F(E_a[V'], Z_a, a)` under `control`,
/// with the same `y`-proxy as the recursion that produced `vf`.
pub fn extract_k<M: Model + ?Sized>(
    vf: &ValueField,
    model: &M,
    class: &ControlClass,
    control: &DiffusionControl,
    gen: &dyn Generator,
    settings: &BsdeSettings,
) -> Result<KField> {
    let a0 = class.a0();
    let n = model.n_steps();
    if vf.v.len() != n + 1 {
        return Err(Error::InvalidModel("value field computed on a different model".into()));
    }
    let mut dk = Vec::with_capacity(n);
    for k in 0..n {
        let row = (0..model.layer_len(k))
            .map(|i| {
                let (y, _) = backward_step(model, gen, settings, k, i, a0[control.index(k, i)], &vf.v[k + 1])?;
                Ok(vf.v[k][i] - y)
            })
            .collect::<Result<Vec<f64>>>()?;
        dk.push(row);
    }
    let flat = dk.iter().flatten();
    let min = flat.clone().cloned().fold(f64::INFINITY, f64::min);
    let max_abs = flat.clone().fold(0.0f64, |m, v| m.max(v.abs()));
    let sum = flat.sum();

    let mut mass = vec![0.0; model.layer_len(0)];
    mass[model.root()] = 1.0;
    let mut expected_total = 0.0;
    for k in 0..n {
        let mut next = vec![0.0; model.layer_len(k + 1)];
        for (i, &m) in mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            expected_total += m * dk[k][i];
            let st = model.stencil(a0[control.index(k, i)])?;
            match model.successors(k, i) {
                Successors::Trinomial([d, c, u]) => {
                    next[d] += m * st.p_down;
                    next[c] += m * st.p_mid;
                    next[u] += m * st.p_up;
                }
                Successors::Binomial([d, u]) => {
                    next[d] += 0.5 * m;
                    next[u] += 0.5 * m;
                }
                Successors::Frozen(j) => next[j] += m,
            }
        }
        mass = next;
    }
    Ok(KField {
        dk,
        min,
        max_abs,
        sum,
        expected_total,
    })
}

/// `Lambda_t = sup_a (E[|xi|^2 + int_t^1 |F(0, 0, a)|^2 ds])^{1/2}` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaField {
    pub lambda: Vec<Vec<f64>>,
    pub lambda0: f64,
}

pub fn lambda_bound<M: Model + ?Sized>(
    model: &M,
    class: &ControlClass,
    gen: &dyn Generator,
    payoff: &Payoff,
) -> Result<LambdaField> {
    let admissible = admissible_indices(class, gen)?;
    let a0 = class.a0();
    let (dt, dx) = (model.dt(), model.dx());
    let n = model.n_steps();
    let mut sq: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    sq[n] = model.terminal_values(payoff)?.iter().map(|v| v * v).collect();
    for k in (0..n).rev() {
        let next = &sq[k + 1];
        let (t, layer) = (model.time(k), model.layer_len(k));
        let mut row = Vec::with_capacity(layer);
        for i in 0..layer {
            let x = model.state(k, i);
            let mut best = f64::NEG_INFINITY;
            for &j in &admissible {
                let a = a0[j];
                let st = model.stencil(a)?;
                let (e, _) = conditional_moments(&st, model.successors(k, i), a, dt, dx, next);
                let f0 = gen.f(t, x, 0.0, 0.0, a).finite().unwrap_or(0.0);
                best = best.max(e + f0 * f0 * dt);
            }
            row.push(best);
        }
        sq[k] = row;
    }
    let lambda: Vec<Vec<f64>> = sq
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0).sqrt()).collect())
        .collect();
    let lambda0 = lambda[0][model.root()];
    Ok(LambdaField { lambda, lambda0 })
}

/// Outcome of the dynamic programming check at an intermediate layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DppReport {
    pub v0: f64,
    /// `max over controls on [0, t)` of the backward operator applied to `V(t)`.
    pub sup_over_prefix: f64,
    /// `y0` of the maximizing prefix pasted with the optimal continuation on
    /// every single-node cell at `t`.
    pub pasted_y0: f64,
}

impl DppReport {
    pub fn max_gap(&self) -> f64 {
        (self.v0 - self.sup_over_prefix)
            .abs()
            .max((self.v0 - self.pasted_y0).abs())
    }
}

pub fn dpp_check(
    tree: &TreeModel,
    class: &ControlClass,
    gen: &dyn Generator,
    payoff: &Payoff,
    settings: &BsdeSettings,
    t_layer: usize,
    cap: u128,
) -> Result<DppReport> {
    if t_layer == 0 || t_layer >= tree.n_steps() {
        return Err(Error::InvalidPartition("DPP layer must be interior".into()));
    }
    let vf = dual_value_dp(tree, class, gen, payoff, settings)?;
    let a0 = class.a0();
    let prefixes = ControlEnumerator::new((0..t_layer).map(|k| tree.layer_len(k)).collect(), class.len(), cap)?;
    let mut best: Option<(f64, u128)> = None;
    for idx in 0..prefixes.total() {
        let prefix = prefixes.control_at(idx);
        let run = apply_backward_operator(tree, gen, settings, t_layer, 0, vf.v[t_layer].clone(), |k, i| {
            a0[prefix.index(k, i)]
        });
        match run {
            Ok((y, _)) => {
                let y0 = y[0][tree.root()];
                if best.is_none_or(|b| y0 > b.0) {
                    best = Some((y0, idx));
                }
            }
            Err(Error::ControlOutsideDomain { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let (sup_over_prefix, idx) = best.ok_or(Error::EmptyAdmissibleSet)?;
    let prefix = prefixes.control_at(idx);
    let mut base = vf.argmax_control();
    base.layers[..t_layer].clone_from_slice(&prefix.layers);
    let cells: Vec<Vec<usize>> = (0..tree.layer_len(t_layer)).map(|i| vec![i]).collect();
    let continuations = vec![vf.argmax_control(); cells.len()];
    let pasted = paste_control(tree, &base, t_layer, &cells, &continuations)?;
    let pasted_y0 = solve_tree(tree, class, &pasted, gen, payoff, settings)?.y0;
    Ok(DppReport {
        v0: vf.v0,
        sup_over_prefix,
        pasted_y0,
    })
}

/// Largest value of `op_a^{t2 -> t1}(V(t2)) - V(t1)` over constant admissible
/// controls and nodes; non-positive when `V` is a supermartingale for every
/// constant control.
pub fn supermartingale_violation<M: Model + ?Sized>(
    model: &M,
    class: &ControlClass,
    gen: &dyn Generator,
    vf: &ValueField,
    settings: &BsdeSettings,
    t1: usize,
    t2: usize,
) -> Result<f64> {
    if !(t1 < t2 && t2 <= model.n_steps()) {
        return Err(Error::InvalidModel(format!("need t1 < t2 <= n, got {t1}, {t2}")));
    }
    let mut worst = f64::NEG_INFINITY;
    for &j in &vf.admissible {
        let a = class.a0()[j];
        let (y, _) = apply_backward_operator(model, gen, settings, t2, t1, vf.v[t2].clone(), |_, _| a)?;
        for (u, v) in y[0].iter().zip(&vf.v[t1]) {
            worst = worst.max(u - v);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{GammaBand, LinearGenerator, UncertainVolatility};
    use crate::lattice_models::{Lattice, SwitchTimes};

    fn uvm() -> UncertainVolatility {
        UncertainVolatility::from_vols(1.0, 2.0).unwrap()
    }

    fn class(a0: &[f64]) -> ControlClass {
        ControlClass::new(a0.to_vec(), SwitchTimes::Grid).unwrap()
    }

    #[test]
    fn singleton_class_equals_bsde() {
        let lat = Lattice::cfl_limited(60, 20, 4.0, 0.0).unwrap();
        let c = class(&[2.5]);
        let s = BsdeSettings::default();
        let vf = dual_value_dp(&lat, &c, &uvm(), &Payoff::call(0.3), &s).unwrap();
        let sol = solve_tree(
            &lat,
            &c,
            &DiffusionControl::constant(&lat, 0),
            &uvm(),
            &Payoff::call(0.3),
            &s,
        )
        .unwrap();
        assert_eq!(vf.v, sol.y);
    }

    #[test]
    fn empty_admissible_set() {
        let lat = Lattice::cfl_limited(20, 10, 9.0, 0.0).unwrap();
        let err = dual_value_dp(
            &lat,
            &class(&[9.0]),
            &uvm(),
            &Payoff::call(0.0),
            &BsdeSettings::default(),
        );
        assert_eq!(err, Err(Error::EmptyAdmissibleSet));
    }

    #[test]
    fn oracle_matches_dp_on_small_tree() {
        let c = class(&[1.0, 4.0]);
        let tree = TreeModel::trinomial_for(3, &c).unwrap();
        let s = BsdeSettings::default();
        let p = Payoff::call(0.0);
        let dp = dual_value_dp(&tree, &c, &uvm(), &p, &s).unwrap();
        let or = dual_value_oracle(&tree, &c, &uvm(), &p, &s, 1 << 20).unwrap();
        assert!((dp.v0 - or.value).abs() < 1e-12);
        assert_eq!(or.evaluated, 8192);
        let single = dual_value_oracle(&tree, &class(&[1.0]), &uvm(), &p, &s, 1 << 20).unwrap();
        assert!(single.value <= or.value);
    }

    #[test]
    fn oracle_skips_controls_outside_domain() {
        let c = class(&[1.0, 4.0]);
        let tree = TreeModel::trinomial_for(2, &c).unwrap();
        let gen = LinearGenerator::new(0.1, 1.0).unwrap();
        let or = dual_value_oracle(
            &tree,
            &c,
            &gen,
            &Payoff::constant(1.0),
            &BsdeSettings::default(),
            1 << 20,
        )
        .unwrap();
        assert_eq!(or.evaluated, 1);
        assert_eq!(or.skipped, 15);
    }

    #[test]
    fn k_vanishes_at_optimum_and_is_nonnegative_elsewhere() {
        let c = class(&[1.0, 4.0]);
        let lat = Lattice::cfl_limited(100, 30, 4.0, 0.0).unwrap();
        let s = BsdeSettings::default();
        let gen = GammaBand::new(1.2, 0.5, 0.8).unwrap();
        let vf = dual_value_dp(&lat, &c, &gen, &Payoff::butterfly(0.0, 1.0), &s).unwrap();
        let opt = extract_k(&vf, &lat, &c, &vf.argmax_control(), &gen, &s).unwrap();
        assert_eq!(opt.max_abs, 0.0);
        for j in 0..2 {
            let k = extract_k(&vf, &lat, &c, &DiffusionControl::constant(&lat, j), &gen, &s).unwrap();
            assert!(k.min >= -1e-12);
        }
    }

    #[test]
    fn lambda_zero_and_bounded_cases() {
        let c = class(&[1.0, 4.0]);
        let lat = Lattice::cfl_limited(40, 10, 4.0, 0.0).unwrap();
        let l = lambda_bound(&lat, &c, &uvm(), &Payoff::constant(0.0)).unwrap();
        assert!(l.lambda.iter().flatten().all(|&v| v == 0.0));
        let l = lambda_bound(&lat, &c, &uvm(), &Payoff::butterfly(0.0, 1.0)).unwrap();
        assert!(l.lambda.iter().flatten().all(|&v| v <= 1.0 + 1e-12));
    }

    #[test]
    fn dpp_on_small_tree() {
        let c = class(&[1.0, 4.0]);
        let tree = TreeModel::trinomial_for(3, &c).unwrap();
        let p = Payoff::path_dependent("max", 1.0, |s| s.iter().cloned().fold(f64::MIN, f64::max));
        for t in 1..3 {
            let r = dpp_check(&tree, &c, &uvm(), &p, &BsdeSettings::default(), t, 1 << 20).unwrap();
            assert!(r.max_gap() <= 1e-12, "{r:?}");
        }
    }
}
