//! CFL limits and spectral analysis of `Σ = (1/ħ) V″^(−½) H V″^(−½)` and `𝒫`.
//!
//! The closed-form limit is `Δt_CFL = 2 / ((2ħ/m) Σ 1/Δ² + max|U|/ħ)`; the
//! generalized limit is `Δt_CFL,gen = 2/ρ(Σ)`, the exact threshold below which
//! `𝒫` is positive definite. Since `𝒫 = [[V″, −cH], [−cH, V″]]` with
//! `c = Δt/2ħ`, its spectrum is that of `V″ − cH` together with `V″ + cH`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::operators::{to_dense, Operators};
use crate::sum::dot;

/// Largest node count for dense eigensolves.
pub const DENSE_LIMIT: usize = 4096;

/// Closed-form CFL limit for cell sizes `spacing` and `max|U|`.
pub fn cfl_limit_for(spacing: [f64; 3], max_abs_u: f64, constants: &PhysicalConstants) -> f64 {
    let [dx, dy, dz] = spacing;
    let inv = 1.0 / (dx * dx) + 1.0 / (dy * dy) + 1.0 / (dz * dz);
    2.0 / (2.0 * constants.hbar / constants.mass * inv + max_abs_u / constants.hbar)
}

pub fn cfl_limit(ops: &Operators) -> f64 {
    cfl_limit_for(ops.grid().spacing(), ops.max_abs_potential(), ops.constants())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dense,
    Lanczos,
    Power,
}

/// Extreme eigenvalues of `Σ`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SigmaSpectrum {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub method: Method,
}

impl SigmaSpectrum {
    pub fn rho(&self) -> f64 {
        self.lambda_max.abs().max(self.lambda_min.abs())
    }
}

/// Dense `Σ`.
pub fn dense_sigma(ops: &Operators) -> Result<DMatrix<f64>> {
    if ops.node_count() > DENSE_LIMIT {
        return Err(Error::TooLarge { nodes: ops.node_count(), limit: DENSE_LIMIT });
    }
    let mut h = to_dense(&ops.assemble_h()?);
    let v = ops.volume();
    let hbar = ops.constants().hbar;
    let n = v.len();
    for c in 0..n {
        for r in 0..n {
            h[(r, c)] /= hbar * (v[r] * v[c]).sqrt();
        }
    }
    Ok(h)
}

/// All eigenvalues of `Σ`, ascending.
pub fn dense_sigma_eigenvalues(ops: &Operators) -> Result<Vec<f64>> {
    let s = dense_sigma(ops)?;
    Ok(sorted_eigenvalues(s))
}

fn sorted_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

/// Extreme eigenvalues of `Σ`: dense up to [`DENSE_LIMIT`] nodes, Lanczos above.
pub fn sigma_spectrum(ops: &Operators) -> Result<SigmaSpectrum> {
    let n = ops.node_count();
    if n <= DENSE_LIMIT {
        let e = dense_sigma_eigenvalues(ops)?;
        return Ok(SigmaSpectrum { lambda_min: e[0], lambda_max: e[n - 1], method: Method::Dense });
    }
    let seed = seed_for(ops);
    let apply = |x: &[f64], y: &mut [f64]| apply_sigma_into(ops, x, y);
    let lambda_max = lanczos_largest(n, &apply, seed, LANCZOS_TOL)?;
    // H is positive semidefinite for U ≥ 0, so the lower end needs no search.
    let lambda_min = if ops.min_potential() >= 0.0 {
        0.0
    } else {
        let neg = |x: &[f64], y: &mut [f64]| {
            apply_sigma_into(ops, x, y);
            y.iter_mut().for_each(|v| *v = -*v);
        };
        -lanczos_largest(n, &neg, seed ^ 0x5eed, LANCZOS_TOL)?
    };
    Ok(SigmaSpectrum { lambda_min, lambda_max, method: Method::Lanczos })
}

pub fn spectral_radius(ops: &Operators) -> Result<f64> {
    Ok(sigma_spectrum(ops)?.rho())
}

/// `Δt_CFL,gen = 2/ρ(Σ)`.
pub fn cfl_gen_limit(ops: &Operators) -> Result<f64> {
    Ok(2.0 / spectral_radius(ops)?)
}

fn apply_sigma_into(ops: &Operators, x: &[f64], y: &mut [f64]) {
    let v = ops.volume();
    let hbar = ops.constants().hbar;
    let scaled: Vec<f64> = x.iter().zip(v).map(|(a, w)| a / w.sqrt()).collect();
    ops.apply_h_into(&scaled, y).expect("lengths match the operator");
    y.iter_mut().zip(v).for_each(|(o, w)| *o /= w.sqrt() * hbar);
}

/// Start-vector seed derived from the grid dimensions.
fn seed_for(ops: &Operators) -> u64 {
    let [nx, ny, nz] = ops.grid().cells();
    (nx as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (ny as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f) ^ (nz as u64)
}

fn random_unit(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

const LANCZOS_TOL: f64 = 1e-10;
const LANCZOS_BLOCK: usize = 240;
const LANCZOS_RESTARTS: usize = 60;

/// Largest eigenvalue of a symmetric operator by Lanczos with full
/// reorthogonalization and explicit restarts from the best Ritz vector.
/// Converged when the Ritz residual falls below `tol · |θ|`; the eigenvalue
/// error is then of order the squared residual over the spectral gap.
pub fn lanczos_largest<F>(n: usize, apply: &F, seed: u64, tol: f64) -> Result<f64>
where
    F: Fn(&[f64], &mut [f64]) + ?Sized,
{
    let m_max = LANCZOS_BLOCK.min(n);
    let mut start = random_unit(n, seed);
    let mut theta = f64::NAN;
    let mut resid = f64::INFINITY;
    let mut w = vec![0.0; n];
    for _ in 0..LANCZOS_RESTARTS {
        let mut q: Vec<Vec<f64>> = vec![start.clone()];
        let mut alpha = Vec::with_capacity(m_max);
        let mut beta: Vec<f64> = Vec::with_capacity(m_max);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for j in 0..m_max {
            apply(&q[j], &mut w);
            let a = dot(&q[j], &w);
            alpha.push(a);
            // Two passes of classical Gram-Schmidt against the whole basis.
            for _ in 0..2 {
                let coeffs: Vec<f64> = q.par_iter().map(|qi| dot(qi, &w)).collect();
                for (qi, c) in q.iter().zip(coeffs) {
                    w.iter_mut().zip(qi).for_each(|(x, y)| *x -= c * y);
                }
            }
            let b = dot(&w, &w).sqrt();
            let check = j + 1 == m_max || (j + 1) % 20 == 0 || b <= 1e-14 * a.abs().max(1e-300);
            if check {
                let (t, s) = tridiagonal_top(&alpha, &beta);
                theta = t;
                resid = (b * s[s.len() - 1]).abs();
                best = Some((t, s));
                if resid <= tol * t.abs() || b <= 1e-14 * a.abs().max(1e-300) {
                    return Ok(theta);
                }
            }
            if j + 1 < m_max {
                beta.push(b);
                q.push(w.iter().map(|x| x / b).collect());
            }
        }
        let (_, s) = best.expect("checked at the end of each block");
        let mut v = vec![0.0; n];
        for (qi, si) in q.iter().zip(&s) {
            v.iter_mut().zip(qi).for_each(|(x, y)| *x += si * y);
        }
        normalize(&mut v);
        start = v;
    }
    Err(Error::NoConvergence { iterations: LANCZOS_RESTARTS * m_max, estimate: theta, change: resid / theta.abs() })
}

/// Largest eigenpair of the Lanczos tridiagonal matrix.
fn tridiagonal_top(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (idx, &val) =
        eig.eigenvalues.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty tridiagonal");
    (val, eig.eigenvectors.column(idx).iter().copied().collect())
}

#[derive(Debug, Clone, Copy)]
pub struct PowerOptions {
    /// Relative change of successive Rayleigh quotients that stops the iteration.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self { tol: 1e-13, max_iter: 100_000 }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PowerResult {
    pub rho: f64,
    pub iterations: usize,
    /// Whether the estimate came from iterating on `Σ²`.
    pub squared: bool,
}

/// `ρ(Σ)` by power iteration from a seeded random start. An oscillating
/// Rayleigh quotient (two dominant eigenvalues of opposite sign and similar
/// magnitude) switches to iterating on `Σ²`; a second seed is tried if the
/// first stalls.
pub fn power_iteration(ops: &Operators, opts: PowerOptions) -> Result<PowerResult> {
    let seed = seed_for(ops);
    match power_run(ops, opts, seed) {
        Ok(r) => Ok(r),
        Err(Error::NoConvergence { .. }) => power_run(ops, opts, seed.wrapping_add(1)),
        Err(e) => Err(e),
    }
}

fn power_run(ops: &Operators, opts: PowerOptions, seed: u64) -> Result<PowerResult> {
    let n = ops.node_count();
    let mut x = random_unit(n, seed);
    let mut y = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut squared = false;
    let mut prev = f64::NAN;
    let mut sign_flips = 0usize;
    let mut last_change = f64::INFINITY;
    for it in 1..=opts.max_iter {
        apply_sigma_into(ops, &x, &mut y);
        if squared {
            tmp.copy_from_slice(&y);
            apply_sigma_into(ops, &tmp, &mut y);
        }
        let rq = dot(&x, &y);
        if y.iter().all(|&v| v == 0.0) {
            return Ok(PowerResult { rho: 0.0, iterations: it, squared });
        }
        x.copy_from_slice(&y);
        normalize(&mut x);
        if prev.is_finite() {
            if !squared && rq.signum() != prev.signum() {
                sign_flips += 1;
                if sign_flips >= 3 {
                    squared = true;
                    prev = f64::NAN;
                    continue;
                }
            }
            last_change = ((rq - prev) / rq).abs();
            if last_change < opts.tol {
                let rho = if squared { rq.abs().sqrt() } else { rq.abs() };
                return Ok(PowerResult { rho, iterations: it, squared });
            }
        }
        prev = rq;
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, estimate: prev.abs(), change: last_change })
}

/// Eigenvalues of `Σ` for one cell with uniform potential `u`, ascending:
/// `(2ħ/m){0, Δx⁻², Δy⁻², Δz⁻², pair sums, total} + u/ħ`.
pub fn single_cell_sigma_eigvals(
    spacing: [f64; 3],
    potential: &[f64],
    constants: &PhysicalConstants,
) -> Result<[f64; 8]> {
    let u = *potential.first().ok_or_else(|| Error::InvalidInput("empty potential".into()))?;
    if potential.iter().any(|&x| x != u) {
        return Err(Error::InvalidInput("closed-form cell eigenvalues need a uniform potential".into()));
    }
    let k = 2.0 * constants.hbar / constants.mass;
    let [a, b, c] = spacing.map(|d| 1.0 / (d * d));
    let mut e = [0.0, a, b, c, b + c, a + c, a + b, a + b + c].map(|x| k * x + u / constants.hbar);
    e.sort_by(f64::total_cmp);
    Ok(e)
}

#[derive(Debug, Clone, Serialize)]
pub struct PerCellCfl {
    pub min: f64,
    /// 0-based lowest corner of the limiting cell.
    pub argmin: [usize; 3],
    /// One limit per cell, x fastest.
    pub limits: Vec<f64>,
}

/// `2/ρ(Σ_ijk)` of every primary cell with the potential restricted to it.
pub fn per_cell_cfl_gen(ops: &Operators) -> Result<PerCellCfl> {
    let [nx, ny, nz] = ops.grid().cells();
    let limits: Vec<f64> = (0..nx * ny * nz)
        .into_par_iter()
        .map(|c| {
            let (i, j, k) = (c % nx, (c / nx) % ny, c / (nx * ny));
            let cell = ops.cell_operators(i, j, k)?;
            let e = dense_sigma_eigenvalues(&cell)?;
            Ok(2.0 / e[0].abs().max(e[7].abs()))
        })
        .collect::<Result<_>>()?;
    let (idx, &min) = limits.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("at least one cell");
    Ok(PerCellCfl { min, argmin: [idx % nx, (idx / nx) % ny, idx / (nx * ny)], limits })
}

/// `V″ ∓ (Δt/2ħ) H` as dense matrices.
fn p_blocks(ops: &Operators, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if ops.node_count() > DENSE_LIMIT {
        return Err(Error::TooLarge { nodes: ops.node_count(), limit: DENSE_LIMIT });
    }
    let h = to_dense(&ops.assemble_h()?);
    let c = dt / (2.0 * ops.constants().hbar);
    let v = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(ops.volume()));
    Ok((&v - &h * c, &v + &h * c))
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("time step must be positive, got {dt}")))
    }
}

/// `(λ_min(𝒫), λ_max(𝒫))`.
pub fn p_extremes(ops: &Operators, dt: f64) -> Result<(f64, f64)> {
    check_dt(dt)?;
    let n = ops.node_count();
    if n <= DENSE_LIMIT {
        let (a, b) = p_blocks(ops, dt)?;
        let ea = sorted_eigenvalues(a);
        let eb = sorted_eigenvalues(b);
        return Ok((ea[0].min(eb[0]), ea[n - 1].max(eb[n - 1])));
    }
    let c = dt / (2.0 * ops.constants().hbar);
    let v = ops.volume();
    let seed = seed_for(ops);
    // sign = −1 gives V″ − cH, +1 gives V″ + cH; `flip` negates to find the minimum.
    let block = |sign: f64, flip: f64| {
        move |x: &[f64], y: &mut [f64]| {
            ops.apply_h_into(x, y).expect("lengths match the operator");
            y.iter_mut().zip(v).zip(x).for_each(|((o, w), xi)| *o = flip * (w * xi + sign * c * *o));
        }
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (k, sign) in [-1.0, 1.0].into_iter().enumerate() {
        let s = seed.wrapping_add(k as u64);
        lo = lo.min(-lanczos_largest(n, &block(sign, -1.0), s, LANCZOS_TOL)?);
        hi = hi.max(lanczos_largest(n, &block(sign, 1.0), s, LANCZOS_TOL)?);
    }
    Ok((lo, hi))
}

pub fn lambda_min_p(ops: &Operators, dt: f64) -> Result<f64> {
    Ok(p_extremes(ops, dt)?.0)
}

/// `κ(𝒫) = λ_max/λ_min`; infinite when `𝒫` is not positive definite.
pub fn kappa_p(ops: &Operators, dt: f64) -> Result<f64> {
    let (lo, hi) = p_extremes(ops, dt)?;
    Ok(if lo > 0.0 { hi / lo } else { f64::INFINITY })
}

/// Positive definiteness of `𝒫` by Cholesky of both blocks (dense grids) or
/// the sign of `λ_min` (large grids).
pub fn is_positive_definite(ops: &Operators, dt: f64) -> Result<bool> {
    check_dt(dt)?;
    if ops.node_count() > DENSE_LIMIT {
        return Ok(lambda_min_p(ops, dt)? > 0.0);
    }
    let (a, b) = p_blocks(ops, dt)?;
    Ok(a.cholesky().is_some() && b.cholesky().is_some())
}

/// Time step where `𝒫` stops being positive definite, by bisection on
/// `[0.5, 1.5]·(2/ρ)` to relative width `rel_tol`.
pub fn pd_threshold(ops: &Operators, rel_tol: f64) -> Result<f64> {
    let guess = cfl_gen_limit(ops)?;
    let (mut lo, mut hi) = (0.5 * guess, 1.5 * guess);
    if !is_positive_definite(ops, lo)? || is_positive_definite(ops, hi)? {
        return Err(Error::NoRoot("positive-definiteness does not change sign on [0.5, 1.5]·(2/ρ)".into()));
    }
    while (hi - lo) > rel_tol * lo {
        let mid = 0.5 * (lo + hi);
        if is_positive_definite(ops, mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Serialize)]
pub struct PdCheck {
    pub dt: f64,
    pub lambda_min: f64,
    pub kappa: f64,
    /// `Δt < Δt_CFL,gen`.
    pub below_limit: bool,
    pub positive_definite: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub dt_cfl: f64,
    pub dt_cfl_gen: f64,
    pub per_cell_min_dt_cfl_gen: Option<f64>,
    pub rho_sigma: f64,
    pub lambda_min_sigma: f64,
    pub lambda_max_sigma: f64,
    pub method: Method,
    /// `(Δt_CFL − Δt_CFL,gen)/Δt_CFL,gen`.
    pub relative_difference: f64,
    pub checks: Vec<PdCheck>,
    /// `Δt_CFL ≤ Δt_CFL,gen`, with relative slack for round-off.
    pub ordering_holds: bool,
    /// `Δt_CFL ≤ min per-cell ≤ Δt_CFL,gen`.
    pub per_cell_ordering_holds: Option<bool>,
    /// Each check's positive-definiteness agrees with `Δt < Δt_CFL,gen`.
    pub pd_consistent: bool,
}

impl StabilityReport {
    pub fn all_hold(&self) -> bool {
        self.ordering_holds && self.per_cell_ordering_holds.unwrap_or(true) && self.pd_consistent
    }
}

/// Relative slack used when comparing limits that may coincide.
pub const ORDERING_SLACK: f64 = 1e-12;

/// Evaluate every limit and ordering for `ops`, and certify `𝒫` at each `dts`.
pub fn check_theorems(ops: &Operators, dts: &[f64]) -> Result<StabilityReport> {
    let dt_cfl = cfl_limit(ops);
    let spec = sigma_spectrum(ops)?;
    let dt_cfl_gen = 2.0 / spec.rho();
    let per_cell = per_cell_cfl_gen(ops)?.min;
    let leq = |a: f64, b: f64| a <= b * (1.0 + ORDERING_SLACK);
    let mut checks = Vec::with_capacity(dts.len());
    for &dt in dts {
        let (lo, hi) = p_extremes(ops, dt)?;
        checks.push(PdCheck {
            dt,
            lambda_min: lo,
            kappa: if lo > 0.0 { hi / lo } else { f64::INFINITY },
            below_limit: dt < dt_cfl_gen,
            positive_definite: lo > 0.0,
        });
    }
    // Points within round-off of the threshold cannot be certified either way.
    let pd_consistent = checks
        .iter()
        .filter(|c| ((c.dt - dt_cfl_gen) / dt_cfl_gen).abs() > 1e-9)
        .all(|c| c.below_limit == c.positive_definite);
    Ok(StabilityReport {
        dt_cfl,
        dt_cfl_gen,
        per_cell_min_dt_cfl_gen: Some(per_cell),
        rho_sigma: spec.rho(),
        lambda_min_sigma: spec.lambda_min,
        lambda_max_sigma: spec.lambda_max,
        method: spec.method,
        relative_difference: (dt_cfl - dt_cfl_gen) / dt_cfl_gen,
        checks,
        ordering_holds: leq(dt_cfl, dt_cfl_gen),
        per_cell_ordering_holds: Some(leq(dt_cfl, per_cell) && leq(per_cell, dt_cfl_gen)),
        pd_consistent,
    })
}
