//! Brillouin-zone sweeps over symbol resolvents.
//!
//! Sup norms over the torus `T_h^d = [−π/h, π/h]^d` are approximated by the
//! maximum over a uniform grid with `grid_n` points per axis, endpoints
//! included. `grid_n − 1` must be a multiple of 4, so `0`, `±π/(2h)` and
//! `±π/h` are always grid points, and refining `n → 2n − 1` nests grids.

use std::collections::VecDeque;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DiracError, Result};
use crate::linalg::I;
use crate::symbols::{
    resolvent_norm_fixed, scalar_g_fixed, squared_symbol_eigs_fixed, symbol_fixed, Dimension,
    ModelId, ModelKind,
};

/// Default grid resolution for d = 1 and d = 2.
pub const DEFAULT_GRID_N_LOW_D: usize = 129;
/// Default grid resolution for d = 3.
pub const DEFAULT_GRID_N_3D: usize = 33;

pub fn default_grid_n(dim: Dimension) -> usize {
    if dim == Dimension::Three {
        DEFAULT_GRID_N_3D
    } else {
        DEFAULT_GRID_N_LOW_D
    }
}

/// One row of a sweep: the grid maximum at mesh size `h` and where it occurred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub h: f64,
    pub value: f64,
    pub xi_argmax: Vec<f64>,
    pub grid_n: usize,
}

/// Least-squares fit of `log value = slope·log h + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Number of points in the final fit (one fewer than supplied if the
    /// largest `h` was discarded).
    pub points_used: usize,
}

/// Lower-bound witness for a pair of models that do not converge together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub pair: (ModelId, ModelId),
    pub h: f64,
    /// Grid maximum of the resolvent difference at `z = i`.
    pub measured: f64,
    /// The difference evaluated exactly at `xi_witness`.
    pub at_witness: f64,
    /// Closed-form lower bound.
    pub closed_form: f64,
    pub xi_witness: Vec<f64>,
}

pub(crate) fn check_grid_n(grid_n: usize) -> Result<()> {
    if grid_n < 16 || !(grid_n - 1).is_multiple_of(4) {
        return invalid(format!(
            "grid_n must be >= 16 with grid_n - 1 divisible by 4, got {grid_n}"
        ));
    }
    Ok(())
}

/// Uniform axis samples `(−1 + 2k/(n−1))·half_width`, `k = 0..n`.
fn axis_points(n: usize, half_width: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let t = -1.0 + 2.0 * k as f64 / (n - 1) as f64;
            t * half_width
        })
        .collect()
}

fn grid_point(d: usize, axis: &[f64], mut idx: usize) -> [f64; 3] {
    let n = axis.len();
    let mut xi = [0.0; 3];
    for j in (0..d).rev() {
        xi[j] = axis[idx % n];
        idx /= n;
    }
    xi
}

/// Maximum of `f` over the tensor grid `axis^d`. Ties resolve to the lowest
/// flat index so the result is independent of thread scheduling.
fn grid_max<F>(d: usize, axis: &[f64], f: F) -> Result<(f64, [f64; 3])>
where
    F: Fn(&[f64; 3]) -> Result<f64> + Sync,
{
    let total = axis.len().pow(d as u32);
    let best = (0..total)
        .into_par_iter()
        .map(|idx| {
            let xi = grid_point(d, axis, idx);
            let v = f(&xi)?;
            if v.is_nan() {
                return Err(DiracError::DegenerateData(format!("NaN at xi = {:?}", &xi[..d])));
            }
            Ok((v, idx))
        })
        .try_reduce(
            || (f64::NEG_INFINITY, usize::MAX),
            |a, b| {
                Ok(if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a })
            },
        )?;
    Ok((best.0, grid_point(d, axis, best.1)))
}

/// Half-width of the physical-scale grid, `8·max(1, |z|, m)`.
fn physical_scale(mass: f64, z: Complex64) -> f64 {
    8.0 * 1f64.max(z.norm()).max(mass)
}

/// Maximum over the torus grid and over a second grid of the same size on
/// `[−Λ, Λ]^d` with `Λ = min(scale, π/h)`. The second grid resolves
/// maximizers at `|ξ| = O(1)`, which the torus grid undersamples as `h → 0`.
fn two_scale_max<F>(d: usize, h: f64, scale: f64, grid_n: usize, f: F) -> Result<(f64, [f64; 3])>
where
    F: Fn(&[f64; 3]) -> Result<f64> + Sync,
{
    let torus = axis_points(grid_n, PI / h);
    let coarse = grid_max(d, &torus, &f)?;
    let lambda = scale.min(PI / h);
    if lambda >= PI / h {
        return Ok(coarse);
    }
    let fine = grid_max(d, &axis_points(grid_n, lambda), &f)?;
    // Ties keep the torus point.
    Ok(if fine.0 > coarse.0 { fine } else { coarse })
}

fn resolvent_difference_norm(a: &ModelId, b: &ModelId, xi: &[f64; 3], z: Complex64) -> Result<f64> {
    let ra = symbol_fixed(a, xi).resolvent(z).map_err(|e| with_momentum(e, a.d(), xi))?;
    let rb = symbol_fixed(b, xi).resolvent(z).map_err(|e| with_momentum(e, a.d(), xi))?;
    Ok((ra - rb).spectral_norm())
}

fn with_momentum(e: DiracError, d: usize, xi: &[f64; 3]) -> DiracError {
    match e {
        DiracError::Singular { .. } => DiracError::Singular {
            momentum: Some(xi[..d].to_vec()),
        },
        other => other,
    }
}

fn torus_h(a: &ModelId, b: &ModelId) -> Result<f64> {
    if a.dim != b.dim {
        return invalid(format!("models have different dimensions: {a} and {b}"));
    }
    match (a.h, b.h) {
        (Some(ha), Some(hb)) if ha != hb => {
            invalid(format!("models have different mesh sizes: {ha} and {hb}"))
        }
        (Some(h), _) | (None, Some(h)) => Ok(h),
        (None, None) => invalid("at least one model must be a lattice model to fix the torus"),
    }
}

/// `max_ξ ‖(G_a(ξ) − z)^{-1} − (G_b(ξ) − z)^{-1}‖` over a `grid_n^d` grid on
/// `T_h^d`, where `h` comes from whichever model is discrete.
pub fn sup_resolvent_difference(
    a: &ModelId,
    b: &ModelId,
    z: Complex64,
    grid_n: usize,
) -> Result<SweepRecord> {
    check_grid_n(grid_n)?;
    let h = torus_h(a, b)?;
    let d = a.d();
    let (value, xi) = two_scale_max(d, h, physical_scale(a.mass, z), grid_n, |xi| {
        resolvent_difference_norm(a, b, xi, z)
    })?;
    Ok(SweepRecord {
        h,
        value,
        xi_argmax: xi[..d].to_vec(),
        grid_n,
    })
}

fn check_h_list(h_list: &[f64]) -> Result<()> {
    if h_list.is_empty() {
        return invalid("h list is empty");
    }
    for &h in h_list {
        if !(h > 0.0 && h <= 1.0) {
            return invalid(format!("mesh sizes must lie in (0, 1], got {h}"));
        }
    }
    if h_list.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("h list must be strictly decreasing");
    }
    Ok(())
}

/// One [`sup_resolvent_difference`] record per `h`, comparing `family` at
/// that mesh size with the continuous model of the same dimension and mass.
pub fn convergence_sweep(
    family: &ModelId,
    z: Complex64,
    h_list: &[f64],
    grid_n: usize,
) -> Result<Vec<SweepRecord>> {
    check_h_list(h_list)?;
    check_grid_n(grid_n)?;
    if !family.kind.is_discrete() {
        return invalid("convergence_sweep needs a lattice model family");
    }
    let cont = ModelId::continuous(family.dim, family.mass)?;
    h_list
        .iter()
        .map(|&h| sup_resolvent_difference(&family.with_h(h)?, &cont, z, grid_n))
        .collect()
}

/// Log-log least squares on `(h, value)` pairs.
///
/// With at least four points and `r² < 0.99` the largest `h` is dropped and
/// the fit repeated once.
pub fn fit_loglog(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(DiracError::DegenerateData(format!(
            "rate fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    for &(h, v) in points {
        if !(h > 0.0 && h.is_finite()) {
            return Err(DiracError::DegenerateData(format!("nonpositive mesh size {h}")));
        }
        if !(v > 0.0 && v.is_finite()) {
            return Err(DiracError::DegenerateData(format!(
                "nonpositive value {v} at h = {h}"
            )));
        }
    }
    let fit = least_squares(points);
    if fit.r_squared < 0.99 && points.len() >= 4 {
        let largest = points
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let rest: Vec<_> = points
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != largest)
            .map(|(_, &p)| p)
            .collect();
        return Ok(least_squares(&rest));
    }
    Ok(fit)
}

fn least_squares(points: &[(f64, f64)]) -> RateFit {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    // A constant series is fitted exactly by slope 0.
    let r_squared = if syy <= f64::EPSILON * f64::EPSILON * n {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    RateFit {
        slope,
        intercept,
        r_squared,
        points_used: points.len(),
    }
}

/// [`fit_loglog`] on the `(h, value)` columns of sweep records.
pub fn fit_rate(records: &[SweepRecord]) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.h, r.value)).collect();
    fit_loglog(&pts)
}

/// The witnessed non-converging pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WitnessPair {
    FbS1,
    SSmod2,
    FbFbmod2,
    FbFbmod3,
}

fn classify_pair(a: &ModelId, b: &ModelId) -> Option<WitnessPair> {
    use ModelKind::*;
    let (ka, kb) = (a.kind, b.kind);
    let is = |x: ModelKind, y: ModelKind| (ka == x && kb == y) || (ka == y && kb == x);
    match a.d() {
        1 if is(Fb, S) => Some(WitnessPair::FbS1),
        2 if is(S, SMod) => Some(WitnessPair::SSmod2),
        2 if is(Fb, FbMod) => Some(WitnessPair::FbFbmod2),
        3 if is(Fb, FbMod) => Some(WitnessPair::FbFbmod3),
        _ => None,
    }
}

/// Closed-form lower bound for a witnessed pair at mass `m` and mesh `h`,
/// together with the witness momentum.
fn witness_closed_form(pair: WitnessPair, m: f64, h: f64) -> (f64, Vec<f64>) {
    let m2 = 1.0 + m * m;
    match pair {
        WitnessPair::FbS1 => (
            2.0 / ((m2 * h * h + 4.0).sqrt() * m2.sqrt()),
            vec![PI / h],
        ),
        WitnessPair::SSmod2 => (
            8.0 / (m2.sqrt() * (h * h + (8.0 + h * m).powi(2)).sqrt()),
            vec![PI / h, PI / h],
        ),
        WitnessPair::FbFbmod2 => (
            4.0 / (m2.sqrt() * (h * h + (4.0 + h * m).powi(2)).sqrt()),
            vec![PI / (2.0 * h), -PI / (2.0 * h)],
        ),
        WitnessPair::FbFbmod3 => (
            (m2.powf(-0.5) - h / (h * h + (m * h + 4.0).powi(2)).sqrt()).abs(),
            vec![PI / (2.0 * h), -PI / (2.0 * h), 0.0],
        ),
    }
}

/// Grid maximum and closed-form lower bound of the resolvent difference at
/// `z = i` for one of the witnessed pairs: 1D (fb, s), 2D (s, s_mod),
/// 2D (fb, fb_mod) and 3D (fb, fb_mod). The models must share `d`, `m` and `h`.
///
/// For the d ≤ 2 pairs the closed form equals the difference at the witness
/// point; for d = 3 it is a reverse-triangle lower bound at that point.
pub fn nonconvergence_witness(a: &ModelId, b: &ModelId, grid_n: usize) -> Result<WitnessReport> {
    let pair = classify_pair(a, b).ok_or_else(|| {
        DiracError::UnsupportedPair(format!(
            "({}, {}) in d = {} has no witness; supported: 1D (fb, s), 2D (s, s_mod), 2D (fb, fb_mod), 3D (fb, fb_mod)",
            a.kind,
            b.kind,
            a.d()
        ))
    })?;
    if a.mass != b.mass {
        return invalid("witness pair must share the mass");
    }
    let h = torus_h(a, b)?;
    let (closed_form, xi_witness) = witness_closed_form(pair, a.mass, h);
    let record = sup_resolvent_difference(a, b, I, grid_n)?;
    let mut xi = [0.0; 3];
    xi[..a.d()].copy_from_slice(&xi_witness);
    let at_witness = resolvent_difference_norm(a, b, &xi, I)?;
    Ok(WitnessReport {
        pair: (*a, *b),
        h,
        measured: record.value,
        at_witness,
        closed_form,
        xi_witness,
    })
}

/// `max ‖(R_h(ξ) − R(ξ))·R(ξ)‖` over `hξ ∈ [−3π/2, 3π/2]^d`, where `R` and
/// `R_h` are the continuous and lattice symbol resolvents at `z`.
///
/// The continuous model compared with itself gives zero; it uses `h = 1` for
/// the grid.
pub fn sobolev_weighted_difference(
    model: &ModelId,
    z: Complex64,
    grid_n: usize,
) -> Result<SweepRecord> {
    check_grid_n(grid_n)?;
    let h = model.h.unwrap_or(1.0);
    let cont = ModelId::continuous(model.dim, model.mass)?;
    let d = model.d();
    let axis = axis_points(grid_n, 1.5 * PI / h);
    let (value, xi) = grid_max(d, &axis, |xi| {
        let r = symbol_fixed(&cont, xi).resolvent(z).map_err(|e| with_momentum(e, d, xi))?;
        let rh = symbol_fixed(model, xi).resolvent(z).map_err(|e| with_momentum(e, d, xi))?;
        Ok(((rh - r) * r).spectral_norm())
    })?;
    Ok(SweepRecord {
        h,
        value,
        xi_argmax: xi[..d].to_vec(),
        grid_n,
    })
}

/// Default zero-census threshold on the scale-free quantity `h²·g`.
pub const DEFAULT_ZERO_TOL: f64 = 1e-6;

/// Zeros of a massless lattice symbol on the torus, one representative
/// momentum per connected cluster.
///
/// The torus is sampled with `grid_n − 1` distinct points per axis
/// (`hξ = −π + 2πk/(grid_n − 1)`); a point is a zero when `h²·g(ξ) < tol`
/// (`h²·(λ_min − 1)` for the d = 3 forward-backward kinds). Clusters use
/// face adjacency with periodic wraparound; the representative is the
/// cluster member with the smallest value.
pub fn symbol_zero_census(model: &ModelId, grid_n: usize, tol: f64) -> Result<Vec<Vec<f64>>> {
    if model.mass != 0.0 {
        return Err(DiracError::Precondition(format!(
            "zero census requires m = 0, got m = {}",
            model.mass
        )));
    }
    let h = match model.h {
        Some(h) => h,
        None => return invalid("zero census requires a lattice model"),
    };
    check_grid_n(grid_n)?;
    if tol.is_nan() || tol <= 0.0 {
        return invalid(format!("tolerance must be > 0, got {tol}"));
    }
    let d = model.d();
    let per_axis = grid_n - 1;
    let axis: Vec<f64> = (0..per_axis)
        .map(|k| (-PI + 2.0 * PI * k as f64 / per_axis as f64) / h)
        .collect();
    let total = per_axis.pow(d as u32);
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let xi = grid_point(d, &axis, idx);
            let g = if model.has_scalar_square() {
                scalar_g_fixed(model, &xi)
            } else {
                squared_symbol_eigs_fixed(model, &xi).0 - 1.0
            };
            h * h * g
        })
        .collect();

    let mut seen = vec![false; total];
    let mut reps = Vec::new();
    let strides: Vec<usize> = (0..d).map(|j| per_axis.pow((d - 1 - j) as u32)).collect();
    for start in 0..total {
        if seen[start] || values[start] >= tol {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut best = start;
        while let Some(idx) = queue.pop_front() {
            if values[idx] < values[best] || (values[idx] == values[best] && idx < best) {
                best = idx;
            }
            for &stride in &strides {
                let coord = (idx / stride) % per_axis;
                let base = idx - coord * stride;
                for nb in [(coord + 1) % per_axis, (coord + per_axis - 1) % per_axis] {
                    let nidx = base + nb * stride;
                    if !seen[nidx] && values[nidx] < tol {
                        seen[nidx] = true;
                        queue.push_back(nidx);
                    }
                }
            }
        }
        reps.push(grid_point(d, &axis, best)[..d].to_vec());
    }
    Ok(reps)
}

/// `‖(G(ξ) − z)^{-1}‖` maximized over the torus grid; used for operator-norm
/// cross-checks.
pub fn sup_resolvent_norm(model: &ModelId, z: Complex64, grid_n: usize) -> Result<SweepRecord> {
    check_grid_n(grid_n)?;
    let h = match model.h {
        Some(h) => h,
        None => return invalid("sup_resolvent_norm requires a lattice model"),
    };
    let d = model.d();
    let axis = axis_points(grid_n, PI / h);
    let (value, xi) = grid_max(d, &axis, |xi| {
        resolvent_norm_fixed(model, xi, z).map_err(|e| with_momentum(e, d, xi))
    })?;
    Ok(SweepRecord {
        h,
        value,
        xi_argmax: xi[..d].to_vec(),
        grid_n,
    })
}
