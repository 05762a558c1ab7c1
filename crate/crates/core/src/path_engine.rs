//! Pathwise stochastic calculus on discretized canonical paths.
//!
//! Everything here is measure-free: integrals are left-endpoint (Itô)
//! Riemann sums over the path's own sampling grid, the quadratic variation
//! is the running sum of squared increments, and the diffusion density is a
//! backward difference quotient of that sum over a finite window. The limits
//! that define these objects in continuous time carry an `O(dt)` bias on a
//! finite grid; nothing here tries to remove it.

use std::io::{Read, Write};
use std::ops::Deref;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numfmt::g17;

const TIME_TOL: f64 = 1e-12;

/// A time-indexed vector process on an explicit, strictly increasing grid.
///
/// Values are stored time-major: node `k` occupies
/// `values[k * dim..(k + 1) * dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Process {
    grid: Vec<f64>,
    dim: usize,
    values: Vec<f64>,
}

impl Process {
    pub fn new(grid: Vec<f64>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidPath("dimension must be at least 1".into()));
        }
        if grid.is_empty() {
            return Err(Error::InvalidPath("empty grid".into()));
        }
        if values.len() != grid.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: grid.len() * dim,
                got: values.len(),
            });
        }
        for (k, w) in grid.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidPath(format!(
                    "grid not strictly increasing at node {}",
                    k + 1
                )));
            }
        }
        if let Some(k) = grid.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite { node: k });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: pos / dim });
        }
        Ok(Self { grid, dim, values })
    }

    /// One-dimensional process from scalar node values.
    pub fn scalar(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, 1, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn origin(&self) -> f64 {
        self.grid[0]
    }

    pub fn terminal_time(&self) -> f64 {
        *self.grid.last().expect("non-empty grid")
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// First coordinate at node `k`; the usual accessor for `d = 1`.
    pub fn scalar_at(&self, k: usize) -> f64 {
        self.values[k * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// First coordinate at every node.
    pub fn first_coordinate(&self) -> Vec<f64> {
        self.values.iter().step_by(self.dim).copied().collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![g17(self.grid[k])];
            row.extend(self.value(k).iter().map(|&v| g17(v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.get(0) != Some("t") || header.len() < 2 {
            return Err(Error::Csv("expected header `t,x1..xd`".into()));
        }
        let dim = header.len() - 1;
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Csv(format!("row {}: {e}", line + 2)))
            };
            grid.push(parse(&rec[0])?);
            for i in 1..=dim {
                values.push(parse(&rec[i])?);
            }
        }
        Self::new(grid, dim, values)
    }
}

/// A path of the canonical process: anchored at the zero vector at its
/// origin time, with a grid contained in `[origin, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath(Process);

impl Deref for SamplePath {
    type Target = Process;

    fn deref(&self) -> &Process {
        &self.0
    }
}

impl SamplePath {
    pub fn new(grid: Vec<f64>, dim: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_process(Process::new(grid, dim, values)?)
    }

    pub fn scalar(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, 1, values)
    }

    pub fn from_process(p: Process) -> Result<Self> {
        if p.value(0).iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidPath("path must start at the zero vector".into()));
        }
        if p.origin() < -TIME_TOL || p.terminal_time() > 1.0 + TIME_TOL {
            return Err(Error::InvalidPath(format!(
                "grid [{}, {}] not contained in [0, 1]",
                p.origin(),
                p.terminal_time()
            )));
        }
        Ok(Self(p))
    }

    /// Accumulates increments: node 0 is zero, node `k + 1` adds `increments[k]`.
    pub fn from_increments(grid: Vec<f64>, dim: usize, increments: &[f64]) -> Result<Self> {
        if increments.len() + dim != grid.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: (grid.len() - 1) * dim,
                got: increments.len(),
            });
        }
        let mut values = vec![0.0; grid.len() * dim];
        for k in 1..grid.len() {
            for i in 0..dim {
                values[k * dim + i] = values[(k - 1) * dim + i] + increments[(k - 1) * dim + i];
            }
        }
        Self::new(grid, dim, values)
    }

    pub fn into_process(self) -> Process {
        self.0
    }

    /// Increment `B_{t_{k+1}} - B_{t_k}` in coordinate `i`.
    pub fn increment(&self, k: usize, i: usize) -> f64 {
        self.value(k + 1)[i] - self.value(k)[i]
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        Self::from_process(Process::read_csv(reader)?)
    }
}

/// Uniform grid `t0, t0 + h, ..., 1` with `n` steps.
pub fn uniform_grid(t0: f64, n: usize) -> Vec<f64> {
    let h = (1.0 - t0) / n as f64;
    (0..=n).map(|k| if k == n { 1.0 } else { t0 + k as f64 * h }).collect()
}

/// A `d x d` matrix per grid node, row-major within a node.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPath {
    grid: Vec<f64>,
    dim: usize,
    values: Vec<f64>,
}

impl MatrixPath {
    pub fn new(grid: Vec<f64>, dim: usize, values: Vec<f64>) -> Result<Self> {
        let p = Process::new(grid, dim * dim, values)?;
        Ok(Self {
            grid: p.grid,
            dim,
            values: p.values,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn value(&self, k: usize) -> &[f64] {
        let m = self.dim * self.dim;
        &self.values[k * m..(k + 1) * m]
    }

    pub fn entry(&self, k: usize, i: usize, j: usize) -> f64 {
        self.value(k)[i * self.dim + j]
    }

    /// Linear interpolation of every entry at time `t` inside the grid.
    fn interpolate(&self, t: f64) -> Vec<f64> {
        let k = match self.grid.binary_search_by(|g| g.partial_cmp(&t).expect("finite grid")) {
            Ok(k) => return self.value(k).to_vec(),
            Err(k) => k,
        };
        let (lo, hi) = (k - 1, k);
        let w = (t - self.grid[lo]) / (self.grid[hi] - self.grid[lo]);
        self.value(lo)
            .iter()
            .zip(self.value(hi))
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

/// Left-endpoint sums `sum_k Z_{t_k} . (B_{t_{k+1}} - B_{t_k})`, accumulated per node.
pub fn pathwise_integral(integrand: &Process, driver: &SamplePath) -> Result<SamplePath> {
    if integrand.grid() != driver.grid() {
        return Err(Error::GridMismatch(
            "integrand and driver must share the same grid".into(),
        ));
    }
    if integrand.dim() != driver.dim() {
        return Err(Error::DimensionMismatch {
            expected: driver.dim(),
            got: integrand.dim(),
        });
    }
    let n = driver.len();
    let mut out = vec![0.0; n];
    for k in 0..n - 1 {
        let z = integrand.value(k);
        let inc: f64 = (0..driver.dim()).map(|i| z[i] * driver.increment(k, i)).sum();
        out[k + 1] = out[k] + inc;
    }
    SamplePath::new(driver.grid().to_vec(), 1, out)
}

/// Running sum of `dB dB^T`; for left sums this equals `B B^T - 2 int B dB^T`.
pub fn quadratic_variation(path: &SamplePath) -> MatrixPath {
    let d = path.dim();
    let n = path.len();
    let mut values = vec![0.0; n * d * d];
    for k in 0..n - 1 {
        let (prev, rest) = values.split_at_mut((k + 1) * d * d);
        let prev = &prev[k * d * d..];
        let cur = &mut rest[..d * d];
        for i in 0..d {
            let di = path.increment(k, i);
            for j in 0..d {
                cur[i * d + j] = prev[i * d + j] + di * path.increment(k, j);
            }
        }
    }
    MatrixPath {
        grid: path.grid().to_vec(),
        dim: d,
        values,
    }
}

/// Backward difference quotient `(<B>_t - <B>_{t - eps}) / eps` of a
/// quadratic-variation path, truncated at the origin: nodes closer than
/// `eps` to the origin use `(<B>_t - <B>_{t0}) / (t - t0)`, and the origin
/// node copies node 1.
pub fn density_estimate(qv: &MatrixPath, eps: f64) -> Result<MatrixPath> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidWindow(format!("window must be positive, got {eps}")));
    }
    let n = qv.len();
    if n < 2 {
        return Err(Error::InvalidWindow("need at least two grid nodes".into()));
    }
    let min_step = qv.grid.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if eps < min_step * (1.0 - 1e-9) {
        return Err(Error::InvalidWindow(format!(
            "window {eps} shorter than the smallest grid step {min_step}"
        )));
    }
    let m = qv.dim * qv.dim;
    let t0 = qv.grid[0];
    let mut values = vec![0.0; n * m];
    for k in 1..n {
        let t = qv.grid[k];
        let (base, width) = if t - t0 < eps {
            (qv.value(0).to_vec(), t - t0)
        } else {
            (qv.interpolate(t - eps), eps)
        };
        for e in 0..m {
            values[k * m + e] = (qv.value(k)[e] - base[e]) / width;
        }
    }
    let (head, tail) = values.split_at_mut(m);
    head.copy_from_slice(&tail[..m]);
    Ok(MatrixPath {
        grid: qv.grid.clone(),
        dim: qv.dim,
        values,
    })
}

/// Symmetric matrix power via eigendecomposition; errors if not positive definite.
fn spd_power(entries: &[f64], d: usize, power: f64, node: usize) -> Result<DMatrix<f64>> {
    let m = DMatrix::from_row_slice(d, d, entries);
    let scale = m.amax().max(1.0);
    if (&m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::DensityNotPositive {
            node,
            min_eigenvalue: f64::NAN,
        });
    }
    let eig = m.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::DensityNotPositive {
            node,
            min_eigenvalue: min,
        });
    }
    let diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.powf(power)));
    Ok(&eig.eigenvectors * diag * eig.eigenvectors.transpose())
}

fn apply_matrix_increments(
    path: &SamplePath,
    mut matrix_at: impl FnMut(usize) -> Result<DMatrix<f64>>,
) -> Result<SamplePath> {
    let d = path.dim();
    let n = path.len();
    let mut incs = vec![0.0; (n - 1) * d];
    for k in 0..n - 1 {
        let m = matrix_at(k)?;
        for i in 0..d {
            incs[k * d + i] = (0..d).map(|j| m[(i, j)] * path.increment(k, j)).sum();
        }
    }
    SamplePath::from_increments(path.grid().to_vec(), d, &incs)
}

/// `W_t = int a_hat^{-1/2} dB` by left sums; the Brownian motion driving a path
/// whose diffusion density is `density`.
pub fn brownian_extract(path: &SamplePath, density: &MatrixPath) -> Result<SamplePath> {
    if density.grid() != path.grid() {
        return Err(Error::GridMismatch("density and path grids differ".into()));
    }
    if density.dim() != path.dim() {
        return Err(Error::DimensionMismatch {
            expected: path.dim(),
            got: density.dim(),
        });
    }
    let d = path.dim();
    for k in 0..density.len() {
        spd_power(density.value(k), d, -0.5, k)?;
    }
    apply_matrix_increments(path, |k| spd_power(density.value(k), d, -0.5, k))
}

/// `X = a^{1/2} W` for a constant SPD matrix `a` (row-major `d x d`).
pub fn scale_by_sqrt(path: &SamplePath, a: &[f64]) -> Result<SamplePath> {
    let root = spd_power(a, path.dim(), 0.5, 0)?;
    apply_matrix_increments(path, |_| Ok(root.clone()))
}

/// Concatenation `omega (x)_t omega~`: the prefix up to `t`, then the prefix's
/// endpoint plus the suffix. Also returns the shifted functional
/// `xi^{t,omega}(omega~) = xi(omega (x)_t omega~)` when `xi` is given.
pub fn concat_shift(
    prefix: &SamplePath,
    suffix: &Process,
    xi: Option<&dyn Fn(&SamplePath) -> f64>,
) -> Result<(SamplePath, Option<f64>)> {
    let t = prefix.terminal_time();
    if (suffix.origin() - t).abs() > TIME_TOL {
        return Err(Error::Concatenation(format!(
            "prefix ends at {t} but suffix starts at {}",
            suffix.origin()
        )));
    }
    if suffix.dim() != prefix.dim() {
        return Err(Error::DimensionMismatch {
            expected: prefix.dim(),
            got: suffix.dim(),
        });
    }
    if suffix.value(0).iter().any(|&v| v != 0.0) {
        return Err(Error::Concatenation("suffix is not anchored at zero".into()));
    }
    let d = prefix.dim();
    let end = prefix.value(prefix.len() - 1).to_vec();
    let mut grid = prefix.grid().to_vec();
    let mut values = prefix.values().to_vec();
    for k in 1..suffix.len() {
        grid.push(suffix.grid()[k]);
        values.extend((0..d).map(|i| end[i] + suffix.value(k)[i]));
    }
    let joined = SamplePath::new(grid, d, values)?;
    let shifted = xi.map(|f| f(&joined));
    Ok((joined, shifted))
}

/// The path restricted to `[t0, t_k]`.
pub fn prefix_of(path: &SamplePath, k: usize) -> Result<SamplePath> {
    let d = path.dim();
    SamplePath::new(path.grid()[..=k].to_vec(), d, path.values()[..(k + 1) * d].to_vec())
}

/// The shifted suffix `r -> omega_r - omega_{t_k}` on `[t_k, 1]`.
pub fn suffix_of(path: &SamplePath, k: usize) -> Result<SamplePath> {
    let d = path.dim();
    let base = path.value(k).to_vec();
    let values = (k..path.len())
        .flat_map(|j| (0..d).map(move |i| (j, i)))
        .map(|(j, i)| path.value(j)[i] - base[i])
        .collect();
    SamplePath::new(path.grid()[k..].to_vec(), d, values)
}
