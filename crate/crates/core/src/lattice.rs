//! Free lattice Dirac operators on a periodic box.
//!
//! A [`PeriodicLattice`] has `n` points per axis with spacing `h`, so the box
//! has side `L = n·h`. Sites are numbered row-major with axis 0 slowest.
//! Momentum indices follow the DFT layout; the centered index of `q` is `q`
//! for `q < n/2` and `q − n` otherwise, and the momentum is `2π·q_c/L`.
//!
//! Transforms use the lattice Fourier transform
//! `F_h u(ξ) = h^d (2π)^{-d/2} Σ_k u(k) e^{−ihk·ξ}` sampled at the box momenta,
//! which is the DFT scaled by `h^d (2π)^{-d/2}`. With this scaling
//! `‖u‖² = h^d Σ|u(k)|² = (2π/L)^d Σ_q |F_h u(ξ_q)|²`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftDirection;
use std::f64::consts::PI;

use crate::error::{invalid, DiracError, Result};
use crate::fft::fft_nd;
use crate::linalg::{I, ZERO};
use crate::symbols::{resolvent_fixed, symbol_fixed, Dimension, ModelId, ModelKind};

pub mod snapshot;

/// Finite periodic mesh `hZ^d / nhZ^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicLattice {
    dim: Dimension,
    n: usize,
    h: f64,
}

/// Maps a DFT index `q ∈ [0, n)` to its centered representative in `[−n/2, n/2)`.
#[inline]
pub fn centered_index(q: usize, n: usize) -> i64 {
    if q < n / 2 {
        q as i64
    } else {
        q as i64 - n as i64
    }
}

impl PeriodicLattice {
    /// `n` must be a power of two with `n ≥ 4`, and `h > 0`.
    pub fn new(dim: Dimension, n: usize, h: f64) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return invalid(format!("points per axis must be a power of two >= 4, got {n}"));
        }
        if !(h.is_finite() && h > 0.0) {
            return invalid(format!("mesh size must be > 0, got {h}"));
        }
        Ok(PeriodicLattice { dim, n, h })
    }

    #[inline]
    pub fn dim(&self) -> Dimension {
        self.dim
    }
    #[inline]
    pub fn d(&self) -> usize {
        self.dim.d()
    }
    #[inline]
    pub fn nu(&self) -> usize {
        self.dim.nu()
    }
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }
    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }
    /// Box side `n·h`.
    #[inline]
    pub fn side(&self) -> f64 {
        self.n as f64 * self.h
    }
    #[inline]
    pub fn sites(&self) -> usize {
        self.n.pow(self.d() as u32)
    }

    /// DFT-ordered multi-index of a flat site number.
    pub fn coords(&self, mut site: usize) -> [usize; 3] {
        // n is a power of two.
        let (bits, mask) = (self.n.trailing_zeros(), self.n - 1);
        let mut c = [0usize; 3];
        for j in (0..self.d()).rev() {
            c[j] = site & mask;
            site >>= bits;
        }
        c
    }

    pub fn site_index(&self, coords: &[usize]) -> usize {
        coords[..self.d()].iter().fold(0, |acc, &c| acc * self.n + c)
    }

    /// Centered integer position of a site; the physical point is `h·k`.
    pub fn centered_coords(&self, site: usize) -> [i64; 3] {
        let c = self.coords(site);
        let mut k = [0i64; 3];
        for j in 0..self.d() {
            k[j] = centered_index(c[j], self.n);
        }
        k
    }

    /// Physical position `h·k_centered` of a site.
    pub fn position(&self, site: usize) -> [f64; 3] {
        let k = self.centered_coords(site);
        [k[0] as f64 * self.h, k[1] as f64 * self.h, k[2] as f64 * self.h]
    }

    /// Momentum `2π q_c / L` of a DFT-ordered momentum index.
    pub fn momentum(&self, q: usize) -> [f64; 3] {
        let c = self.coords(q);
        let mut xi = [0.0; 3];
        let unit = 2.0 * PI / self.side();
        for j in 0..self.d() {
            xi[j] = centered_index(c[j], self.n) as f64 * unit;
        }
        xi
    }

    fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.d() - 1 - axis) as u32)
    }

    /// Site reached by moving one step along `axis` (`forward` or backward),
    /// with periodic wraparound.
    #[inline]
    pub fn neighbor(&self, site: usize, axis: usize, forward: bool) -> usize {
        let stride = self.stride(axis);
        let c = (site / stride) % self.n;
        let nc = if forward { (c + 1) % self.n } else { (c + self.n - 1) % self.n };
        site - c * stride + nc * stride
    }
}

/// A `ν`-component field on a periodic lattice, stored interleaved
/// (`values[site·ν + component]`).
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    lattice: PeriodicLattice,
    values: Vec<Complex64>,
}

impl LatticeField {
    pub fn zeros(lattice: PeriodicLattice) -> Self {
        LatticeField {
            values: vec![ZERO; lattice.sites() * lattice.nu()],
            lattice,
        }
    }

    pub fn from_values(lattice: PeriodicLattice, values: Vec<Complex64>) -> Result<Self> {
        let expected = lattice.sites() * lattice.nu();
        if values.len() != expected {
            return Err(DiracError::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(LatticeField { lattice, values })
    }

    /// Field with `values[site] = f(position(site))`; `f` returns ν components.
    pub fn from_fn<F>(lattice: PeriodicLattice, f: F) -> Self
    where
        F: Fn(&[f64; 3]) -> [Complex64; 4],
    {
        let nu = lattice.nu();
        let mut values = Vec::with_capacity(lattice.sites() * nu);
        for site in 0..lattice.sites() {
            let v = f(&lattice.position(site));
            values.extend_from_slice(&v[..nu]);
        }
        LatticeField { lattice, values }
    }

    /// `u(k) = e^{ih k·ξ_q} v` for the box momentum with DFT index `q`.
    pub fn plane_wave(lattice: PeriodicLattice, q: &[usize], spinor: &[Complex64]) -> Result<Self> {
        if q.len() != lattice.d() || q.iter().any(|&c| c >= lattice.n()) {
            return invalid("momentum index out of range");
        }
        if spinor.len() != lattice.nu() {
            return Err(DiracError::DimensionMismatch {
                expected: lattice.nu(),
                got: spinor.len(),
            });
        }
        let xi = lattice.momentum(lattice.site_index(q));
        let mut field = Self::zeros(lattice);
        let nu = lattice.nu();
        for site in 0..lattice.sites() {
            let x = lattice.position(site);
            let phase: f64 = (0..lattice.d()).map(|j| x[j] * xi[j]).sum();
            let e = Complex64::from_polar(1.0, phase);
            for c in 0..nu {
                field.values[site * nu + c] = e * spinor[c];
            }
        }
        Ok(field)
    }

    /// Independent standard complex Gaussian entries from a seeded generator.
    pub fn random(lattice: PeriodicLattice, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..lattice.sites() * lattice.nu())
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        LatticeField { lattice, values }
    }

    #[inline]
    pub fn lattice(&self) -> &PeriodicLattice {
        &self.lattice
    }
    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
    #[inline]
    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// `⟨self, other⟩ = h^d Σ conj(self)·other`.
    pub fn inner(&self, other: &LatticeField) -> Result<Complex64> {
        self.check_same(other)?;
        let s: Complex64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(s * self.lattice.h.powi(self.lattice.d() as i32))
    }

    /// `(h^d Σ|u|²)^{1/2}`.
    pub fn norm(&self) -> f64 {
        let s: f64 = self.values.iter().map(|v| v.norm_sqr()).sum();
        (s * self.lattice.h.powi(self.lattice.d() as i32)).sqrt()
    }

    pub fn scale(&self, c: Complex64) -> LatticeField {
        LatticeField {
            lattice: self.lattice,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: Complex64, other: &LatticeField) -> Result<LatticeField> {
        self.check_same(other)?;
        Ok(LatticeField {
            lattice: self.lattice,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect(),
        })
    }

    pub fn sub(&self, other: &LatticeField) -> Result<LatticeField> {
        self.axpy(Complex64::new(-1.0, 0.0), other)
    }

    fn check_same(&self, other: &LatticeField) -> Result<()> {
        if self.lattice != other.lattice {
            return invalid("fields live on different lattices");
        }
        Ok(())
    }

    /// Samples of `F_h u` at the box momenta, DFT ordered.
    pub fn to_spectrum(&self) -> LatticeSpectrum {
        let lat = self.lattice;
        let mut data = self.values.clone();
        fft_nd(&mut data, lat.d(), lat.n(), lat.nu(), FftDirection::Forward);
        let scale = lat.h.powi(lat.d() as i32) * (2.0 * PI).powf(-0.5 * lat.d() as f64);
        data.iter_mut().for_each(|v| *v *= scale);
        LatticeSpectrum { lattice: lat, values: data }
    }
}

/// Samples of the lattice Fourier transform at the box momenta.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpectrum {
    lattice: PeriodicLattice,
    values: Vec<Complex64>,
}

impl LatticeSpectrum {
    pub fn zeros(lattice: PeriodicLattice) -> Self {
        LatticeSpectrum {
            values: vec![ZERO; lattice.sites() * lattice.nu()],
            lattice,
        }
    }

    pub fn from_values(lattice: PeriodicLattice, values: Vec<Complex64>) -> Result<Self> {
        let expected = lattice.sites() * lattice.nu();
        if values.len() != expected {
            return Err(DiracError::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(LatticeSpectrum { lattice, values })
    }

    #[inline]
    pub fn lattice(&self) -> &PeriodicLattice {
        &self.lattice
    }
    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
    #[inline]
    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    /// `((2π/L)^d Σ|û|²)^{1/2}`, equal to the norm of the field.
    pub fn norm(&self) -> f64 {
        let s: f64 = self.values.iter().map(|v| v.norm_sqr()).sum();
        (s * (2.0 * PI / self.lattice.side()).powi(self.lattice.d() as i32)).sqrt()
    }

    /// Inverse of [`LatticeField::to_spectrum`].
    pub fn to_field(&self) -> LatticeField {
        let lat = self.lattice;
        let mut data = self.values.clone();
        fft_nd(&mut data, lat.d(), lat.n(), lat.nu(), FftDirection::Inverse);
        let scale = (2.0 * PI).powf(0.5 * lat.d() as f64)
            / (lat.h.powi(lat.d() as i32) * lat.sites() as f64);
        data.iter_mut().for_each(|v| *v *= scale);
        LatticeField { lattice: lat, values: data }
    }

    /// Multiplies the spinor at each momentum by `m(ξ)`; fails on the first error.
    pub fn apply_multiplier<F>(&self, m: F) -> Result<LatticeSpectrum>
    where
        F: Fn(&[f64; 3]) -> Result<crate::linalg::SymbolMatrix> + Sync,
    {
        let lat = self.lattice;
        let nu = lat.nu();
        let mut out = vec![ZERO; self.values.len()];
        out.par_chunks_mut(nu)
            .zip(self.values.par_chunks(nu))
            .enumerate()
            .try_for_each(|(q, (o, v))| {
                let xi = lat.momentum(q);
                let mat = m(&xi).map_err(|e| match e {
                    DiracError::Singular { .. } => DiracError::Singular {
                        momentum: Some(xi[..lat.d()].to_vec()),
                    },
                    other => other,
                })?;
                o.copy_from_slice(&mat.apply(v)[..nu]);
                Ok::<(), DiracError>(())
            })?;
        Ok(LatticeSpectrum { lattice: lat, values: out })
    }
}

/// Stencils of the difference operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DifferenceOp {
    /// `(u(k+e_j) − u(k))/(ih)`, axis `j` zero-based.
    Forward(usize),
    /// `(u(k) − u(k−e_j))/(ih)`.
    Backward(usize),
    /// `(u(k+e_j) − u(k−e_j))/(2ih)`.
    Symmetric(usize),
    /// `−Δ_h u = h^{-2} Σ_j (2u(k) − u(k+e_j) − u(k−e_j))`, a nonnegative operator.
    Laplacian,
}

/// Applies a difference stencil componentwise with periodic wraparound.
pub fn apply_difference(op: DifferenceOp, field: &LatticeField) -> Result<LatticeField> {
    let lat = *field.lattice();
    let d = lat.d();
    if let DifferenceOp::Forward(j) | DifferenceOp::Backward(j) | DifferenceOp::Symmetric(j) = op {
        if j >= d {
            return invalid(format!("axis {j} out of range for d = {d}"));
        }
    }
    let nu = lat.nu();
    let h = lat.h();
    let inv_ih = (I * h).inv();
    let u = field.values();
    let mut out = vec![ZERO; u.len()];
    out.par_chunks_mut(nu).enumerate().for_each(|(site, o)| {
        let at = |s: usize, c: usize| u[s * nu + c];
        match op {
            DifferenceOp::Forward(j) => {
                let f = lat.neighbor(site, j, true);
                for c in 0..nu {
                    o[c] = (at(f, c) - at(site, c)) * inv_ih;
                }
            }
            DifferenceOp::Backward(j) => {
                let b = lat.neighbor(site, j, false);
                for c in 0..nu {
                    o[c] = (at(site, c) - at(b, c)) * inv_ih;
                }
            }
            DifferenceOp::Symmetric(j) => {
                let f = lat.neighbor(site, j, true);
                let b = lat.neighbor(site, j, false);
                for c in 0..nu {
                    o[c] = (at(f, c) - at(b, c)) * (0.5 * inv_ih);
                }
            }
            DifferenceOp::Laplacian => {
                let inv_h2 = 1.0 / (h * h);
                for c in 0..nu {
                    let mut acc = ZERO;
                    for j in 0..d {
                        let f = lat.neighbor(site, j, true);
                        let b = lat.neighbor(site, j, false);
                        acc += 2.0 * at(site, c) - at(f, c) - at(b, c);
                    }
                    o[c] = acc * inv_h2;
                }
            }
        }
    });
    Ok(LatticeField { lattice: lat, values: out })
}

fn check_model_on(model: &ModelId, lat: &PeriodicLattice) -> Result<()> {
    let Some(h) = model.h else {
        return invalid("lattice operators require a lattice model");
    };
    if model.dim != lat.dim() {
        return invalid(format!(
            "model dimension {} does not match lattice dimension {}",
            model.d(),
            lat.d()
        ));
    }
    let rel = (h - lat.h()).abs() / lat.h();
    if rel > 1e-12 {
        return invalid(format!("model mesh {h} does not match lattice mesh {}", lat.h()));
    }
    Ok(())
}

/// Stencil constructor for one axis.
type AxisStencil = fn(usize) -> DifferenceOp;

/// Applies the free lattice Dirac operator by stencils.
pub fn apply_free_dirac(model: &ModelId, field: &LatticeField) -> Result<LatticeField> {
    let lat = *field.lattice();
    check_model_on(model, &lat)?;
    let d = lat.d();
    let nu = lat.nu();
    let (upper_op, lower_op): (AxisStencil, AxisStencil) =
        match model.kind {
            ModelKind::Fb | ModelKind::FbMod => (DifferenceOp::Backward, DifferenceOp::Forward),
            ModelKind::S | ModelKind::SMod => (DifferenceOp::Symmetric, DifferenceOp::Symmetric),
            ModelKind::Continuous => unreachable!("rejected by check_model_on"),
        };
    let upper: Vec<LatticeField> = (0..d)
        .map(|j| apply_difference(upper_op(j), field))
        .collect::<Result<_>>()?;
    let lower: Vec<LatticeField> = if model.kind.is_forward_backward() {
        (0..d).map(|j| apply_difference(lower_op(j), field)).collect::<Result<_>>()?
    } else {
        upper.clone()
    };
    let lap = if model.kind.is_modified() {
        Some(apply_difference(DifferenceOp::Laplacian, field)?)
    } else {
        None
    };
    let m = model.mass;
    let h = lat.h();
    let u = field.values();
    let mut out = vec![ZERO; u.len()];
    out.par_chunks_mut(nu).enumerate().for_each(|(site, o)| {
        let b = site * nu;
        // Mass term with the ±h(−Δ_h) modification on the diagonal blocks.
        let half = nu / 2;
        for c in 0..nu {
            let sign = if c < half { 1.0 } else { -1.0 };
            let mut v = u[b + c] * m;
            if let Some(l) = &lap {
                v += l.values[b + c] * h;
            }
            o[c] = v * sign;
        }
        let up = |j: usize, c: usize| upper[j].values[b + c];
        let lo = |j: usize, c: usize| lower[j].values[b + c];
        if d <= 2 {
            // [[·, D_1^u − i D_2^u], [D_1^l + i D_2^l, ·]]
            let mut top = up(0, 1);
            let mut bottom = lo(0, 0);
            if d == 2 {
                top -= I * up(1, 1);
                bottom += I * lo(1, 0);
            }
            o[0] += top;
            o[1] += bottom;
        } else {
            // A·σ = [[A3, A1 − iA2], [A1 + iA2, −A3]] acting on components (2, 3)
            // in the upper block and B·σ on (0, 1) in the lower block.
            o[0] += up(2, 2) + up(0, 3) - I * up(1, 3);
            o[1] += up(0, 2) + I * up(1, 2) - up(2, 3);
            o[2] += lo(2, 0) + lo(0, 1) - I * lo(1, 1);
            o[3] += lo(0, 0) + I * lo(1, 0) - lo(2, 1);
        }
    });
    Ok(LatticeField { lattice: lat, values: out })
}

/// Applies the free lattice Dirac operator as a Fourier multiplier.
pub fn apply_free_dirac_spectral(model: &ModelId, field: &LatticeField) -> Result<LatticeField> {
    check_model_on(model, field.lattice())?;
    let m = *model;
    Ok(field
        .to_spectrum()
        .apply_multiplier(|xi| Ok(symbol_fixed(&m, xi)))?
        .to_field())
}

/// `(H_{0,h} − z)^{-1} f` by diagonalization in Fourier space.
pub fn free_resolvent(model: &ModelId, z: Complex64, field: &LatticeField) -> Result<LatticeField> {
    check_model_on(model, field.lattice())?;
    Ok(free_resolvent_spectrum(model, z, &field.to_spectrum())?.to_field())
}

/// Resolvent applied to a spectrum; no transforms.
pub fn free_resolvent_spectrum(
    model: &ModelId,
    z: Complex64,
    spectrum: &LatticeSpectrum,
) -> Result<LatticeSpectrum> {
    check_model_on(model, spectrum.lattice())?;
    let m = *model;
    spectrum.apply_multiplier(|xi| resolvent_fixed(&m, xi, z))
}

/// A linear map between finite-dimensional spaces in orthonormal coordinates.
pub trait LinearMap: Sync {
    fn domain_len(&self) -> usize;
    fn codomain_len(&self) -> usize;
    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>>;
    fn apply_adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>>;
}

/// Lower estimate of `‖T‖` by power iteration on `T*T` from a seeded random
/// start; returns the square root of the final Rayleigh quotient.
pub fn operator_norm_estimate(map: &dyn LinearMap, iters: usize, seed: u64) -> Result<f64> {
    if iters < 20 {
        return invalid(format!("power iteration needs at least 20 iterations, got {iters}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<Complex64> = (0..map.domain_len())
        .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
        .collect();
    let norm = |v: &[Complex64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let nx = norm(&x);
    if nx == 0.0 {
        return Ok(0.0);
    }
    x.iter_mut().for_each(|c| *c /= nx);
    let mut estimate = 0.0;
    for _ in 0..iters {
        let y = map.apply(&x)?;
        let rayleigh = y.iter().map(|c| c.norm_sqr()).sum::<f64>();
        let next = map.apply_adjoint(&y)?;
        let nn = norm(&next);
        let previous = estimate;
        estimate = rayleigh;
        if nn == 0.0 {
            return Ok(0.0);
        }
        x = next.into_iter().map(|c| c / nn).collect();
        if (estimate - previous).abs() <= 1e-15 * estimate {
            break;
        }
    }
    Ok(estimate.sqrt())
}

/// Orthonormal coordinates `h^{d/2}·u` of a lattice field.
pub fn to_orthonormal(field: &LatticeField) -> Vec<Complex64> {
    let s = field.lattice().h().powf(0.5 * field.lattice().d() as f64);
    field.values().iter().map(|v| v * s).collect()
}

/// Inverse of [`to_orthonormal`].
pub fn from_orthonormal(lattice: PeriodicLattice, coords: &[Complex64]) -> Result<LatticeField> {
    let s = lattice.h().powf(-0.5 * lattice.d() as f64);
    LatticeField::from_values(lattice, coords.iter().map(|v| v * s).collect())
}

/// A Fourier multiplier on a lattice, as a [`LinearMap`].
pub struct MultiplierMap<F> {
    pub lattice: PeriodicLattice,
    pub symbol: F,
}

impl<F> LinearMap for MultiplierMap<F>
where
    F: Fn(&[f64; 3]) -> Result<crate::linalg::SymbolMatrix> + Sync,
{
    fn domain_len(&self) -> usize {
        self.lattice.sites() * self.lattice.nu()
    }
    fn codomain_len(&self) -> usize {
        self.domain_len()
    }
    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        let f = from_orthonormal(self.lattice, x)?;
        let out = f.to_spectrum().apply_multiplier(&self.symbol)?.to_field();
        Ok(to_orthonormal(&out))
    }
    fn apply_adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        let f = from_orthonormal(self.lattice, y)?;
        let out = f
            .to_spectrum()
            .apply_multiplier(|xi| Ok((self.symbol)(xi)?.adjoint()))?
            .to_field();
        Ok(to_orthonormal(&out))
    }
}
