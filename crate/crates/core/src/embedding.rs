//! Embedding `J_h` and discretization `K_h` between lattice and continuum.
//!
//! The continuum is modeled by a [`FineGridFunction`]: samples of the
//! continuous Fourier transform `f̂(η)` at the momenta `η_p = 2π p_c / L` of
//! a fine periodic grid of spacing `h/R` over the same box of side `L`. Both
//! operators are Fourier multipliers with folding:
//!
//! * `ℱ(J_h u)(η) = (2π)^{d/2} φ̂(hη) F_h u(η)`, with `F_h u` extended
//!   `2π/h`-periodically;
//! * `F_h K_h f(ξ) = (2π)^{d/2} Σ_{j ∈ {−1,0,1}^d} ψ̂(hξ + 2πj) f̂(ξ + 2πj/h)`.
//!
//! The folding is exact because `ψ̂` vanishes outside `[−3π/2, 3π/2]^d`. The
//! refinement must be a power of two and at least 4 so every folded momentum
//! is on the fine grid.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DiracError, Result};
use crate::fft::fft_nd;
use crate::lattice::{centered_index, LatticeField, LatticeSpectrum, LinearMap, PeriodicLattice};
use crate::linalg::ZERO;
use crate::symbols::{resolvent_fixed, Dimension, ModelId, ModelKind};

/// Which biorthogonal generator pair to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// `φ̂₀ = ψ̂₀ = (2π)^{-d/2}` on `[−π, π)^d`; orthonormal translates.
    OrthonormalSinc,
    /// Smooth plateau `ψ̂₀` supported in `[−3π/2, 3π/2]^d` and its dual `φ̂₀`.
    SmoothBiorthogonal,
}

impl std::str::FromStr for PairKind {
    type Err = DiracError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinc" | "orthonormal_sinc" => Ok(PairKind::OrthonormalSinc),
            "smooth" | "smooth_biorthogonal" => Ok(PairKind::SmoothBiorthogonal),
            _ => invalid(format!("unknown pair '{s}' (expected sinc or smooth)")),
        }
    }
}

/// `S(x) = e^{−1/x} / (e^{−1/x} + e^{−1/(1−x)})`, clamped to 0 and 1 outside `(0, 1)`.
pub fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / x).exp();
        let b = (-1.0 / (1.0 - x)).exp();
        a / (a + b)
    }
}

/// One-dimensional plateau: 1 on `|t| ≤ π/2`, 0 on `|t| ≥ 3π/2`.
pub fn plateau(t: f64) -> f64 {
    smooth_step((1.5 * PI - t.abs()) / PI)
}

/// `P(t) = Σ_j plateau(t + 2πj)²`, which is 2π-periodic and lies in `[1/2, 1]`.
fn plateau_periodization(t: f64) -> f64 {
    let r = (t + PI).rem_euclid(2.0 * PI) - PI;
    (-1..=1).map(|j| plateau(r + 2.0 * PI * j as f64).powi(2)).sum()
}

/// A biorthogonal generator pair in dimension `d`. Both transforms are real,
/// even and separable across axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RieszPair {
    pub kind: PairKind,
    pub dim: Dimension,
}

pub fn build_pair(kind: PairKind, dim: Dimension) -> RieszPair {
    RieszPair { kind, dim }
}

impl RieszPair {
    /// Per-axis factor of `ψ̂₀`, without the `(2π)^{-1/2}` normalization.
    #[inline]
    pub fn psi_axis(&self, t: f64) -> f64 {
        match self.kind {
            PairKind::OrthonormalSinc => {
                if (-PI..PI).contains(&t) {
                    1.0
                } else {
                    0.0
                }
            }
            PairKind::SmoothBiorthogonal => plateau(t),
        }
    }

    /// Per-axis factor of `φ̂₀`, without the `(2π)^{-1/2}` normalization.
    #[inline]
    pub fn phi_axis(&self, t: f64) -> f64 {
        match self.kind {
            PairKind::OrthonormalSinc => self.psi_axis(t),
            PairKind::SmoothBiorthogonal => {
                let b = plateau(t);
                if b == 0.0 {
                    0.0
                } else {
                    b / plateau_periodization(t)
                }
            }
        }
    }

    fn norm_factor(&self) -> f64 {
        (2.0 * PI).powf(-0.5 * self.dim.d() as f64)
    }

    pub fn psi_hat(&self, zeta: &[f64]) -> f64 {
        self.norm_factor() * zeta[..self.dim.d()].iter().map(|&t| self.psi_axis(t)).product::<f64>()
    }

    pub fn phi_hat(&self, zeta: &[f64]) -> f64 {
        self.norm_factor() * zeta[..self.dim.d()].iter().map(|&t| self.phi_axis(t)).product::<f64>()
    }

    /// Lower bound of `|φ̂₀|` and `|ψ̂₀|` on `[−π/2, π/2]^d`.
    pub fn c0(&self) -> f64 {
        0.5 * self.norm_factor()
    }

    /// Largest value of `‖J_h‖` over all `h`:
    /// `(max_ζ (2π)^d Σ_j φ̂₀(ζ + 2πj)²)^{1/2}`.
    pub fn j_norm_bound(&self) -> f64 {
        match self.kind {
            PairKind::OrthonormalSinc => 1.0,
            PairKind::SmoothBiorthogonal => 2f64.powf(0.5 * self.dim.d() as f64),
        }
    }

    /// Decay exponent `τ` of `|ψ₀(x)| ≲ (1 + |x|)^{−τ}`. For the sinc pair this
    /// is 1; for the smooth pair it is measured on `[1, side/2]` by
    /// [`measure_tau`].
    pub fn tau(&self, side: f64) -> f64 {
        match self.kind {
            PairKind::OrthonormalSinc => 1.0,
            PairKind::SmoothBiorthogonal => measure_tau(side),
        }
    }
}

/// One-dimensional `ψ₀(x) = π^{-1} ∫_0^{3π/2} plateau(ζ) cos(xζ) dζ` by the
/// trapezoid rule (spectrally accurate: the integrand is smooth and flat at
/// both ends).
pub fn smooth_psi0_1d(x: f64) -> f64 {
    const STEPS: usize = 8192;
    let top = 1.5 * PI;
    let dz = top / STEPS as f64;
    let mut acc = 0.5 * plateau(0.0);
    for k in 1..STEPS {
        let z = k as f64 * dz;
        acc += plateau(z) * (x * z).cos();
    }
    acc * dz / PI
}

/// `τ` from a log-log fit of the local maxima of `|ψ₀(x)|` against `1 + x`
/// on `[1, side/2]`.
pub fn measure_tau(side: f64) -> f64 {
    let hi = (0.5 * side).max(4.0);
    let samples = 4000;
    let xs: Vec<f64> = (0..=samples).map(|k| 1.0 + (hi - 1.0) * k as f64 / samples as f64).collect();
    let vals: Vec<f64> = xs.par_iter().map(|&x| smooth_psi0_1d(x).abs()).collect();
    let floor = 1e-13;
    let mut pts = Vec::new();
    for k in 1..samples {
        if vals[k] >= vals[k - 1] && vals[k] >= vals[k + 1] && vals[k] > floor {
            pts.push(((1.0 + xs[k]).ln(), vals[k].ln()));
        }
    }
    if pts.len() < 2 {
        return f64::INFINITY;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    -sxy / sxx
}

/// Continuous-transform samples on a fine periodic grid (see module docs).
#[derive(Debug, Clone, PartialEq)]
pub struct FineGridFunction {
    lattice: PeriodicLattice,
    spectrum: Vec<Complex64>,
}

impl FineGridFunction {
    pub fn zeros(lattice: PeriodicLattice) -> Self {
        FineGridFunction {
            spectrum: vec![ZERO; lattice.sites() * lattice.nu()],
            lattice,
        }
    }

    pub fn from_spectrum(lattice: PeriodicLattice, spectrum: Vec<Complex64>) -> Result<Self> {
        let expected = lattice.sites() * lattice.nu();
        if spectrum.len() != expected {
            return Err(DiracError::DimensionMismatch {
                expected,
                got: spectrum.len(),
            });
        }
        Ok(FineGridFunction { lattice, spectrum })
    }

    /// `f̂(η_p) = g(η_p)` for a spectral profile `g` returning ν components.
    pub fn from_spectral_fn<F>(lattice: PeriodicLattice, g: F) -> Self
    where
        F: Fn(&[f64; 3]) -> [Complex64; 4] + Sync,
    {
        let nu = lattice.nu();
        let mut spectrum = vec![ZERO; lattice.sites() * nu];
        spectrum.par_chunks_mut(nu).enumerate().for_each(|(p, out)| {
            let v = g(&lattice.momentum(p));
            out.copy_from_slice(&v[..nu]);
        });
        FineGridFunction { lattice, spectrum }
    }

    /// Samples `f(x_k)` at the fine sites (`x = (h/R)·k_centered`) to the
    /// band-limited representation.
    pub fn from_spatial(field: &LatticeField) -> Self {
        let lat = *field.lattice();
        let mut data = field.values().to_vec();
        fft_nd(&mut data, lat.d(), lat.n(), lat.nu(), FftDirection::Forward);
        let scale = (2.0 * PI).powf(-0.5 * lat.d() as f64) * lat.h().powi(lat.d() as i32);
        data.iter_mut().for_each(|v| *v *= scale);
        FineGridFunction { lattice: lat, spectrum: data }
    }

    /// Point values at the fine sites.
    pub fn to_spatial(&self) -> LatticeField {
        let lat = self.lattice;
        let mut data = self.spectrum.clone();
        fft_nd(&mut data, lat.d(), lat.n(), lat.nu(), FftDirection::Inverse);
        let scale = (2.0 * PI).powf(0.5 * lat.d() as f64) / lat.side().powi(lat.d() as i32);
        data.iter_mut().for_each(|v| *v *= scale);
        LatticeField::from_values(lat, data).expect("lengths agree")
    }

    #[inline]
    pub fn lattice(&self) -> &PeriodicLattice {
        &self.lattice
    }
    #[inline]
    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    fn cell(&self) -> f64 {
        (2.0 * PI / self.lattice.side()).powi(self.lattice.d() as i32)
    }

    /// `‖f‖_{L²(box)}`.
    pub fn norm(&self) -> f64 {
        (self.cell() * self.spectrum.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// `‖(1 + |η|²)^{1/2} f̂‖`.
    pub fn h1_norm(&self) -> f64 {
        let nu = self.lattice.nu();
        // Fixed blocks summed in order keep the result independent of the
        // thread count.
        let partial: Vec<f64> = self
            .spectrum
            .par_chunks(nu * BLOCK)
            .enumerate()
            .map(|(b, block)| {
                block
                    .chunks(nu)
                    .enumerate()
                    .map(|(i, v)| {
                        let eta = self.lattice.momentum(b * BLOCK + i);
                        let w = 1.0 + eta.iter().map(|e| e * e).sum::<f64>();
                        w * v.iter().map(|c| c.norm_sqr()).sum::<f64>()
                    })
                    .sum::<f64>()
            })
            .collect();
        (self.cell() * partial.iter().sum::<f64>()).sqrt()
    }

    pub fn sub(&self, other: &FineGridFunction) -> Result<FineGridFunction> {
        if self.lattice != other.lattice {
            return invalid("fine functions live on different grids");
        }
        Ok(FineGridFunction {
            lattice: self.lattice,
            spectrum: self.spectrum.iter().zip(&other.spectrum).map(|(a, b)| a - b).collect(),
        })
    }
}

/// Index bookkeeping between a coarse lattice and a fine grid on the same box.
#[derive(Debug, Clone)]
struct Folding {
    coarse: PeriodicLattice,
    fine: PeriodicLattice,
    /// Per fine axis index: coarse axis index `p_c mod n`.
    to_coarse: Vec<usize>,
    /// Per fine axis index: `φ₀` axis factor at `hη`.
    phi: Vec<f64>,
    /// Per fine axis index: `ψ₀` axis factor at `hη`.
    psi: Vec<f64>,
}

impl Folding {
    fn new(pair: &RieszPair, coarse: PeriodicLattice, fine: PeriodicLattice) -> Result<Self> {
        if pair.dim != coarse.dim() || coarse.dim() != fine.dim() {
            return invalid("pair, lattice and fine grid must share the dimension");
        }
        let ratio = fine.n() / coarse.n();
        let same_box = (fine.side() - coarse.side()).abs() <= 1e-12 * coarse.side();
        if !fine.n().is_multiple_of(coarse.n()) || ratio < 4 || !ratio.is_power_of_two() || !same_box {
            return invalid(format!(
                "fine grid (n = {}, h = {}) is not a refinement by a power of two >= 4 of the lattice (n = {}, h = {})",
                fine.n(),
                fine.h(),
                coarse.n(),
                coarse.h()
            ));
        }
        let (n, big) = (coarse.n(), fine.n());
        let mut to_coarse = Vec::with_capacity(big);
        let mut phi = Vec::with_capacity(big);
        let mut psi = Vec::with_capacity(big);
        for p in 0..big {
            let pc = centered_index(p, big);
            to_coarse.push(pc.rem_euclid(n as i64) as usize);
            let t = 2.0 * PI * pc as f64 / n as f64;
            phi.push(pair.phi_axis(t) / (2.0 * PI).sqrt());
            psi.push(pair.psi_axis(t) / (2.0 * PI).sqrt());
        }
        Ok(Folding {
            coarse,
            fine,
            to_coarse,
            phi,
            psi,
        })
    }

    fn d(&self) -> usize {
        self.coarse.d()
    }

    /// Coarse momentum index of a fine momentum index.
    fn coarse_of(&self, p: usize) -> usize {
        self.coarse_of_coords(&self.fine.coords(p))
    }

    fn coarse_of_coords(&self, c: &[usize; 3]) -> usize {
        let mut q = 0;
        for j in 0..self.d() {
            q = q * self.coarse.n() + self.to_coarse[c[j]];
        }
        q
    }

    fn phi_at(&self, p: usize) -> f64 {
        self.phi_of(&self.fine.coords(p))
    }

    fn phi_of(&self, c: &[usize; 3]) -> f64 {
        (0..self.d()).map(|j| self.phi[c[j]]).product()
    }

    fn psi_at(&self, p: usize) -> f64 {
        let c = self.fine.coords(p);
        (0..self.d()).map(|j| self.psi[c[j]]).product()
    }

    /// Fine momentum indices `q_c + j·n`, `j ∈ {−1,0,1}^d`, folding onto coarse `q`.
    fn preimages(&self, q: usize) -> impl Iterator<Item = usize> + '_ {
        let d = self.d();
        let (n, big) = (self.coarse.n() as i64, self.fine.n() as i64);
        let qc = self.coarse.coords(q);
        (0..3usize.pow(d as u32)).map(move |mut code| {
            let mut p = 0usize;
            for a in 0..d {
                let j = (code % 3) as i64 - 1;
                code /= 3;
                let pc = centered_index(qc[a], n as usize) + j * n;
                p = p * big as usize + pc.rem_euclid(big) as usize;
            }
            p
        })
    }

    /// `F_h K u` from fine spectral samples, using `weight` as the ψ factor
    /// (`psi_at` for `K_h`, `phi_at` for `J_h*`).
    fn fold(&self, fine: &[Complex64], use_phi: bool) -> Vec<Complex64> {
        let nu = self.coarse.nu();
        let amp = (2.0 * PI).powf(0.5 * self.d() as f64);
        let mut out = vec![ZERO; self.coarse.sites() * nu];
        out.par_chunks_mut(nu).enumerate().for_each(|(q, o)| {
            for p in self.preimages(q) {
                let w = if use_phi { self.phi_at(p) } else { self.psi_at(p) };
                if w == 0.0 {
                    continue;
                }
                for c in 0..nu {
                    o[c] += fine[p * nu + c] * (amp * w);
                }
            }
        });
        out
    }

    /// Fine spectral samples of `J u` from `F_h u`, with `φ` (or `ψ` for `K_h*`).
    fn unfold(&self, coarse: &[Complex64], use_psi: bool) -> Vec<Complex64> {
        let nu = self.coarse.nu();
        let amp = (2.0 * PI).powf(0.5 * self.d() as f64);
        let mut out = vec![ZERO; self.fine.sites() * nu];
        out.par_chunks_mut(nu).enumerate().for_each(|(p, o)| {
            let w = if use_psi { self.psi_at(p) } else { self.phi_at(p) };
            if w == 0.0 {
                return;
            }
            let q = self.coarse_of(p);
            for c in 0..nu {
                o[c] = coarse[q * nu + c] * (amp * w);
            }
        });
        out
    }
}

/// Fine grid over the lattice's box with `refinement` points per lattice cell.
pub fn fine_grid_for(lattice: &PeriodicLattice, refinement: usize) -> Result<PeriodicLattice> {
    if refinement < 4 || !refinement.is_power_of_two() {
        return invalid(format!("refinement must be a power of two >= 4, got {refinement}"));
    }
    PeriodicLattice::new(lattice.dim(), lattice.n() * refinement, lattice.h() / refinement as f64)
}

/// `J_h u` on a fine grid refining the lattice of `u` by `refinement`.
pub fn embed_jh(pair: &RieszPair, u: &LatticeField, refinement: usize) -> Result<FineGridFunction> {
    let fine = fine_grid_for(u.lattice(), refinement)?;
    embed_jh_onto(pair, &u.to_spectrum(), &fine)
}

/// `J_h` applied to a lattice spectrum, onto a given fine grid.
pub fn embed_jh_onto(
    pair: &RieszPair,
    u: &LatticeSpectrum,
    fine: &PeriodicLattice,
) -> Result<FineGridFunction> {
    let fold = Folding::new(pair, *u.lattice(), *fine)?;
    FineGridFunction::from_spectrum(*fine, fold.unfold(u.values(), false))
}

/// `K_h f` on the lattice of mesh `h` over the box of `f`.
pub fn discretize_kh(pair: &RieszPair, f: &FineGridFunction, h: f64) -> Result<LatticeField> {
    Ok(discretize_kh_spectrum(pair, f, h)?.to_field())
}

/// `F_h K_h f` without the inverse transform.
pub fn discretize_kh_spectrum(pair: &RieszPair, f: &FineGridFunction, h: f64) -> Result<LatticeSpectrum> {
    let coarse = coarse_lattice_for(f.lattice(), h)?;
    let fold = Folding::new(pair, coarse, *f.lattice())?;
    LatticeSpectrum::from_values(coarse, fold.fold(f.spectrum(), false))
}

/// The lattice of mesh `h` over the same box as `fine`.
pub fn coarse_lattice_for(fine: &PeriodicLattice, h: f64) -> Result<PeriodicLattice> {
    let ratio = h / fine.h();
    let r = ratio.round();
    if (ratio - r).abs() > 1e-9 * ratio || r < 1.0 {
        return invalid(format!("mesh {h} is not an integer multiple of the fine spacing {}", fine.h()));
    }
    let r = r as usize;
    if !fine.n().is_multiple_of(r) {
        return invalid(format!("refinement {r} does not divide the fine grid size {}", fine.n()));
    }
    PeriodicLattice::new(fine.dim(), fine.n() / r, h)
}

/// Normalized resolvent gaps on one probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeGap {
    /// `‖J_h(H_{0,h} − z)^{-1}K_h f − (H_0 − z)^{-1} f‖ / ‖f‖`.
    pub l2: f64,
    /// The same difference divided by `‖f‖_{H¹}`.
    pub h1: f64,
}

/// Difference `J_h (H_{0,h} − z)^{-1} K_h f − (H_0 − z)^{-1} f` as a fine function.
pub fn resolvent_difference_on_probe(
    pair: &RieszPair,
    model: &ModelId,
    z: Complex64,
    f: &FineGridFunction,
) -> Result<FineGridFunction> {
    let (fold, coarse_res) = lattice_side(pair, model, z, f)?;
    let cont = ModelId::continuous(model.dim, model.mass)?;
    let fine = *f.lattice();
    let nu = fine.nu();
    let amp = (2.0 * PI).powf(0.5 * fine.d() as f64);
    let mut out = vec![ZERO; f.spectrum.len()];
    out.par_chunks_mut(nu * BLOCK).enumerate().try_for_each(|(b, block)| {
        for (i, o) in block.chunks_mut(nu).enumerate() {
            let p = b * BLOCK + i;
            let fv = &f.spectrum[p * nu..(p + 1) * nu];
            let c = fine.coords(p);
            let w = fold.phi_of(&c);
            let has_f = fv.iter().any(|v| *v != ZERO);
            if has_f {
                let r0 = resolvent_fixed(&cont, &fine.momentum(p), z)?;
                let v = r0.apply(fv);
                for k in 0..nu {
                    o[k] = -v[k];
                }
            }
            if w != 0.0 {
                let q = fold.coarse_of_coords(&c);
                for k in 0..nu {
                    o[k] += coarse_res[q * nu + k] * (amp * w);
                }
            }
        }
        Ok::<(), DiracError>(())
    })?;
    FineGridFunction::from_spectrum(fine, out)
}

fn lattice_side(
    pair: &RieszPair,
    model: &ModelId,
    z: Complex64,
    f: &FineGridFunction,
) -> Result<(Folding, Vec<Complex64>)> {
    let h = model
        .h
        .ok_or_else(|| DiracError::InvalidArgument("probe gaps need a lattice model".into()))?;
    if model.dim != f.lattice().dim() {
        return invalid("model and probe dimensions differ");
    }
    let coarse = coarse_lattice_for(f.lattice(), h)?;
    let fold = Folding::new(pair, coarse, *f.lattice())?;
    let kf = fold.fold(&f.spectrum, false);
    let nu = coarse.nu();
    let mut res = vec![ZERO; kf.len()];
    res.par_chunks_mut(nu).enumerate().try_for_each(|(q, o)| {
        let xi = coarse.momentum(q);
        let r = resolvent_fixed(model, &xi, z)?;
        o.copy_from_slice(&r.apply(&kf[q * nu..(q + 1) * nu])[..nu]);
        Ok::<(), DiracError>(())
    })?;
    Ok((fold, res))
}

/// L²- and H¹-normalized resolvent gaps on a nonzero probe.
pub fn resolvent_gap_on_probe(
    pair: &RieszPair,
    model: &ModelId,
    z: Complex64,
    f: &FineGridFunction,
) -> Result<ProbeGap> {
    let fnorm = f.norm();
    if fnorm == 0.0 {
        return invalid("probe must be nonzero");
    }
    let diff = resolvent_difference_on_probe(pair, model, z, f)?;
    let dn = diff.norm();
    Ok(ProbeGap {
        l2: dn / fnorm,
        h1: dn / f.h1_norm(),
    })
}

/// `‖(J_h K_h − I)(H_0 − z)^{-1} f‖ / ‖f‖`.
pub fn projection_defect_on_probe(
    pair: &RieszPair,
    h: f64,
    z: Complex64,
    f: &FineGridFunction,
) -> Result<f64> {
    let fnorm = f.norm();
    if fnorm == 0.0 {
        return invalid("probe must be nonzero");
    }
    let fine = *f.lattice();
    let nu = fine.nu();
    let cont = ModelId::continuous(fine.dim(), 0.0)?;
    let mut rf = vec![ZERO; f.spectrum.len()];
    rf.par_chunks_mut(nu).enumerate().try_for_each(|(p, o)| {
        let r = resolvent_fixed(&cont, &fine.momentum(p), z)?;
        o.copy_from_slice(&r.apply(&f.spectrum[p * nu..(p + 1) * nu])[..nu]);
        Ok::<(), DiracError>(())
    })?;
    let rf = FineGridFunction::from_spectrum(fine, rf)?;
    let coarse = coarse_lattice_for(&fine, h)?;
    let fold = Folding::new(pair, coarse, fine)?;
    let jk = FineGridFunction::from_spectrum(fine, fold.unfold(&fold.fold(&rf.spectrum, false), false))?;
    Ok(jk.sub(&rf)?.norm() / fnorm)
}

/// Probe families for operator-level experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Probe {
    /// `f̂(η) = e^{−|η|²/2}·v`.
    Gaussian,
    /// Gaussian packet of unit width at physical momentum `(1, 0, 0)`.
    SmallPacket,
    /// Packet at `hη = (π/2, −π/2, 0)` with width 0.35 in `hη` units.
    MediumPacket,
    /// Packet at `hη = (π, 0, 0)` with width 0.35 in `hη` units.
    ZoneEdgePacket,
    /// Seeded random coefficients on `|hη_j| ≤ π/2`.
    RandomBandLimited,
}

impl Probe {
    pub const ALL: [Probe; 5] = [
        Probe::Gaussian,
        Probe::SmallPacket,
        Probe::MediumPacket,
        Probe::ZoneEdgePacket,
        Probe::RandomBandLimited,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Probe::Gaussian => "gaussian",
            Probe::SmallPacket => "small_packet",
            Probe::MediumPacket => "medium_packet",
            Probe::ZoneEdgePacket => "zone_edge_packet",
            Probe::RandomBandLimited => "random_band_limited",
        }
    }

    /// Whether the probe is the same function for every `h`.
    pub fn is_h_independent(self) -> bool {
        matches!(self, Probe::Gaussian | Probe::SmallPacket)
    }
}

impl std::str::FromStr for Probe {
    type Err = DiracError;
    fn from_str(s: &str) -> Result<Self> {
        Probe::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| DiracError::InvalidArgument(format!("unknown probe '{s}'")))
    }
}

/// Fixed unit spinor used by all probes.
pub fn probe_spinor(nu: usize) -> [Complex64; 4] {
    let raw: [Complex64; 4] = if nu == 2 {
        [Complex64::new(1.0, 0.0), Complex64::new(0.5, 0.5), ZERO, ZERO]
    } else {
        [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.5),
            Complex64::new(-0.5, 0.0),
            Complex64::new(0.25, 0.25),
        ]
    };
    let n = raw.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    raw.map(|c| c / n)
}

const PACKET_WIDTH: f64 = 0.35;

/// Packets are set to exactly zero where the Gaussian exponent is below
/// this value (relative size < 1e-16), so far-field sites are skipped.
const PACKET_CUTOFF: f64 = 37.0;

/// Fine sites per parallel work item.
const BLOCK: usize = 1024;

/// Gaussian packet `e^{−|η−η₀|²/(2w²)}·v` with fixed unit spinor `v`.
pub fn build_packet(fine: &PeriodicLattice, center: [f64; 3], width: f64) -> FineGridFunction {
    let d = fine.d();
    let v = probe_spinor(fine.nu());
    FineGridFunction::from_spectral_fn(*fine, move |eta| {
        let r2: f64 = (0..d).map(|j| (eta[j] - center[j]).powi(2)).sum::<f64>() / (2.0 * width * width);
        if r2 > PACKET_CUTOFF {
            [ZERO; 4]
        } else {
            v.map(|c| c * (-r2).exp())
        }
    })
}

/// Builds a probe on a fine grid; `h` fixes the scale of the `h`-dependent probes.
pub fn build_probe(probe: Probe, fine: &PeriodicLattice, h: f64, seed: u64) -> FineGridFunction {
    let d = fine.d();
    match probe {
        Probe::Gaussian => build_packet(fine, [0.0; 3], 1.0),
        Probe::SmallPacket => build_packet(fine, [1.0, 0.0, 0.0], 1.0),
        Probe::MediumPacket => {
            let center = if d == 1 { [0.5 * PI / h, 0.0, 0.0] } else { [0.5 * PI / h, -0.5 * PI / h, 0.0] };
            build_packet(fine, center, PACKET_WIDTH / h)
        }
        Probe::ZoneEdgePacket => build_packet(fine, [PI / h, 0.0, 0.0], PACKET_WIDTH / h),
        Probe::RandomBandLimited => {
            let nu = fine.nu();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut spectrum = vec![ZERO; fine.sites() * nu];
            // Draws follow site order inside the band only.
            for p in 0..fine.sites() {
                let eta = fine.momentum(p);
                if (0..d).all(|j| (h * eta[j]).abs() <= 0.5 * PI) {
                    for v in &mut spectrum[p * nu..(p + 1) * nu] {
                        *v = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                    }
                }
            }
            FineGridFunction { lattice: *fine, spectrum }
        }
    }
}

/// Unit-width packet centered at a spurious zero of the massless symbol
/// (the first census cluster away from the origin). Its `L²` gap stays of
/// order one while its `H¹` norm grows like `1/h`.
pub fn doubler_packet(model: &ModelId, fine: &PeriodicLattice) -> Result<FineGridFunction> {
    let massless = model.with_mass(0.0)?;
    if massless.h.is_none() || model.dim != fine.dim() {
        return invalid("doubler packets need a lattice model matching the fine grid");
    }
    let grid_n = crate::symbol_analysis::default_grid_n(model.dim);
    let zeros = crate::symbol_analysis::symbol_zero_census(
        &massless,
        grid_n,
        crate::symbol_analysis::DEFAULT_ZERO_TOL,
    )?;
    let h = massless.h.expect("checked");
    let spurious = zeros
        .iter()
        .find(|xi| xi.iter().any(|x| (h * x).abs() > 1e-9))
        .ok_or_else(|| DiracError::Precondition(format!("{} has no spurious zero", model.kind)))?;
    let mut center = [0.0; 3];
    center[..spurious.len()].copy_from_slice(spurious);
    Ok(build_packet(fine, center, 1.0))
}

/// `J_h` as a map from lattice to fine spectral coordinates (orthonormal).
pub struct EmbedMap {
    fold: Folding,
}

/// `K_h` as a map from fine to lattice spectral coordinates (orthonormal).
pub struct DiscretizeMap {
    fold: Folding,
}

impl EmbedMap {
    pub fn new(pair: &RieszPair, lattice: PeriodicLattice, refinement: usize) -> Result<Self> {
        let fine = fine_grid_for(&lattice, refinement)?;
        Ok(EmbedMap {
            fold: Folding::new(pair, lattice, fine)?,
        })
    }
}

impl DiscretizeMap {
    pub fn new(pair: &RieszPair, lattice: PeriodicLattice, refinement: usize) -> Result<Self> {
        let fine = fine_grid_for(&lattice, refinement)?;
        Ok(DiscretizeMap {
            fold: Folding::new(pair, lattice, fine)?,
        })
    }
}

// Coarse and fine spectral coordinates share the scale (2π/L)^{d/2}, so the
// multipliers act on orthonormal coordinates without rescaling.
impl LinearMap for EmbedMap {
    fn domain_len(&self) -> usize {
        self.fold.coarse.sites() * self.fold.coarse.nu()
    }
    fn codomain_len(&self) -> usize {
        self.fold.fine.sites() * self.fold.fine.nu()
    }
    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        Ok(self.fold.unfold(x, false))
    }
    fn apply_adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        Ok(self.fold.fold(y, true))
    }
}

impl LinearMap for DiscretizeMap {
    fn domain_len(&self) -> usize {
        self.fold.fine.sites() * self.fold.fine.nu()
    }
    fn codomain_len(&self) -> usize {
        self.fold.coarse.sites() * self.fold.coarse.nu()
    }
    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        Ok(self.fold.fold(x, false))
    }
    fn apply_adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        Ok(self.fold.unfold(y, true))
    }
}

/// `T = J_h (H_{0,h} − z)^{-1} K_h − (H_0 − z)^{-1}` on fine spectral
/// coordinates.
pub struct CompositeGapMap {
    fold: Folding,
    model: ModelId,
    continuous: ModelId,
    z: Complex64,
}

impl CompositeGapMap {
    pub fn new(
        pair: &RieszPair,
        model: &ModelId,
        z: Complex64,
        lattice: PeriodicLattice,
        refinement: usize,
    ) -> Result<Self> {
        if model.kind == ModelKind::Continuous || model.dim != lattice.dim() {
            return invalid("composite map needs a lattice model matching the lattice");
        }
        if model.h.map(|h| (h - lattice.h()).abs() > 1e-12 * h).unwrap_or(true) {
            return invalid("model mesh does not match the lattice");
        }
        let fine = fine_grid_for(&lattice, refinement)?;
        Ok(CompositeGapMap {
            fold: Folding::new(pair, lattice, fine)?,
            model: *model,
            continuous: ModelId::continuous(model.dim, model.mass)?,
            z,
        })
    }

    fn run(&self, x: &[Complex64], adjoint: bool) -> Result<Vec<Complex64>> {
        let z = if adjoint { self.z.conj() } else { self.z };
        let coarse = self.fold.coarse;
        let fine = self.fold.fine;
        let nu = coarse.nu();
        // Adjoint: K* R_h* J* swaps the roles of φ and ψ.
        let folded = self.fold.fold(x, adjoint);
        let mut res = vec![ZERO; folded.len()];
        res.par_chunks_mut(nu).enumerate().try_for_each(|(q, o)| {
            let r = resolvent_fixed(&self.model, &coarse.momentum(q), z)?;
            o.copy_from_slice(&r.apply(&folded[q * nu..(q + 1) * nu])[..nu]);
            Ok::<(), DiracError>(())
        })?;
        let mut out = self.fold.unfold(&res, adjoint);
        out.par_chunks_mut(nu).enumerate().try_for_each(|(p, o)| {
            let r0 = resolvent_fixed(&self.continuous, &fine.momentum(p), z)?;
            let v = r0.apply(&x[p * nu..(p + 1) * nu]);
            for c in 0..nu {
                o[c] -= v[c];
            }
            Ok::<(), DiracError>(())
        })?;
        Ok(out)
    }
}

impl LinearMap for CompositeGapMap {
    fn domain_len(&self) -> usize {
        self.fold.fine.sites() * self.fold.fine.nu()
    }
    fn codomain_len(&self) -> usize {
        self.domain_len()
    }
    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        self.run(x, false)
    }
    fn apply_adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        self.run(y, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::operator_norm_estimate;
    use crate::linalg::I;

    fn lat(d: usize, n: usize, h: f64) -> PeriodicLattice {
        PeriodicLattice::new(Dimension::from_d(d).unwrap(), n, h).unwrap()
    }

    #[test]
    fn smooth_step_properties() {
        assert_eq!(smooth_step(-0.1), 0.0);
        assert_eq!(smooth_step(1.5), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        for k in 1..100 {
            let x = k as f64 / 100.0;
            assert!((smooth_step(x) + smooth_step(1.0 - x) - 1.0).abs() < 1e-15);
        }
        assert_eq!(plateau(0.4 * PI), 1.0);
        assert_eq!(plateau(1.5 * PI), 0.0);
    }

    #[test]
    fn periodization_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in [PairKind::OrthonormalSinc, PairKind::SmoothBiorthogonal] {
            for d in 1..=3 {
                let pair = build_pair(kind, Dimension::from_d(d).unwrap());
                for _ in 0..1000 {
                    let xi: Vec<f64> = (0..d).map(|_| (rng.gen::<f64>() - 0.5) * 2.0 * PI).collect();
                    let mut s = 0.0;
                    for code in 0..5usize.pow(d as u32) {
                        let mut c = code;
                        let shifted: Vec<f64> = xi
                            .iter()
                            .map(|x| {
                                let j = (c % 5) as f64 - 2.0;
                                c /= 5;
                                x + 2.0 * PI * j
                            })
                            .collect();
                        s += pair.phi_hat(&shifted) * pair.psi_hat(&shifted);
                    }
                    assert!((s - (2.0 * PI).powi(-(d as i32))).abs() < 1e-12);
                }
                // plateau lower bound
                let c0 = pair.c0();
                for k in 0..=20 {
                    let t = -0.5 * PI + PI * k as f64 / 20.0;
                    let zeta = [t, -t, 0.3 * t];
                    assert!(pair.psi_hat(&zeta[..d]) >= c0);
                    assert!(pair.phi_hat(&zeta[..d]) >= c0);
                }
            }
        }
    }

    #[test]
    fn spatial_round_trip() {
        let fine = lat(2, 16, 0.125);
        let f = build_probe(Probe::Gaussian, &fine, 0.5, 0);
        let back = FineGridFunction::from_spatial(&f.to_spatial());
        assert!(back.sub(&f).unwrap().norm() < 1e-12 * f.norm());
        // Parseval: the spatial L² norm with cell (h/R)^d agrees.
        assert!((f.to_spatial().norm() - f.norm()).abs() < 1e-12 * f.norm());
    }

    #[test]
    fn biorthogonality_and_projection() {
        for kind in [PairKind::OrthonormalSinc, PairKind::SmoothBiorthogonal] {
            for d in 1..=2 {
                let l = lat(d, 16, 0.25);
                let pair = build_pair(kind, l.dim());
                let u = LatticeField::random(l, 1);
                let ju = embed_jh(&pair, &u, 4).unwrap();
                let kju = discretize_kh(&pair, &ju, 0.25).unwrap();
                assert!(kju.sub(&u).unwrap().norm() < 1e-12 * u.norm());

                let fine = fine_grid_for(&l, 4).unwrap();
                let f = build_probe(Probe::RandomBandLimited, &fine, 0.0625, 3);
                let f = FineGridFunction::from_spectrum(fine, f.spectrum.iter().enumerate().map(|(i, c)| c + Complex64::new((i as f64).sin(), 0.0)).collect()).unwrap();
                let p1 = embed_jh(&pair, &discretize_kh(&pair, &f, 0.25).unwrap(), 4).unwrap();
                let p2 = embed_jh(&pair, &discretize_kh(&pair, &p1, 0.25).unwrap(), 4).unwrap();
                assert!(p2.sub(&p1).unwrap().norm() < 1e-11 * f.norm());
            }
        }
    }

    #[test]
    fn impulse_embeds_to_scaled_generator() {
        let (n, h) = (64, 0.5);
        let l = lat(1, n, h);
        let pair = build_pair(PairKind::SmoothBiorthogonal, l.dim());
        let mut u = LatticeField::zeros(l);
        u.values_mut()[0] = Complex64::new(1.0, 0.0);
        let ju = embed_jh(&pair, &u, 4).unwrap().to_spatial();
        // φ₀(x) = π^{-1} ∫_0^{3π/2} φ-axis(ζ) cos(xζ) dζ
        let phi0 = |x: f64| {
            let steps = 20000;
            let dz = 1.5 * PI / steps as f64;
            let mut acc = 0.5 * pair.phi_axis(0.0);
            for k in 1..steps {
                let z = k as f64 * dz;
                acc += pair.phi_axis(z) * (x * z).cos();
            }
            acc * dz / PI
        };
        for site in [0usize, 1, 3, 7, 12, 255] {
            let x = ju.lattice().position(site)[0];
            let got = ju.values()[site * 2];
            // Periodic images at distance n contribute below 1e-8.
            assert!((got.re - phi0(x / h)).abs() < 1e-8, "x = {x}: {} vs {}", got.re, phi0(x / h));
            assert!(got.im.abs() < 1e-12);
            assert!(ju.values()[site * 2 + 1].norm() < 1e-14);
        }
    }

    #[test]
    fn operator_norms_match_theory() {
        for kind in [PairKind::OrthonormalSinc, PairKind::SmoothBiorthogonal] {
            for d in 1..=2 {
                let l = lat(d, 16, 0.25);
                let pair = build_pair(kind, l.dim());
                let j = operator_norm_estimate(&EmbedMap::new(&pair, l, 4).unwrap(), 200, 3).unwrap();
                let k = operator_norm_estimate(&DiscretizeMap::new(&pair, l, 4).unwrap(), 200, 3).unwrap();
                assert!((j - pair.j_norm_bound()).abs() < 1e-3 * j, "{kind:?} d={d}: J {j}");
                assert!((k - 1.0).abs() < 1e-3, "{kind:?} d={d}: K {k}");
            }
        }
    }

    #[test]
    fn adjoint_pairs_are_consistent() {
        let l = lat(2, 8, 0.5);
        let pair = build_pair(PairKind::SmoothBiorthogonal, l.dim());
        let model = ModelId::discrete(ModelKind::S, l.dim(), 0.5, 0.5).unwrap();
        let map = CompositeGapMap::new(&pair, &model, Complex64::new(0.3, 1.2), l, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rand_vec = |n: usize| -> Vec<Complex64> {
            (0..n).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect()
        };
        let x = rand_vec(map.domain_len());
        let y = rand_vec(map.codomain_len());
        let dot = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(p, q)| p.conj() * q).sum::<Complex64>();
        let lhs = dot(&y, &map.apply(&x).unwrap());
        let rhs = dot(&map.apply_adjoint(&y).unwrap(), &x);
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0));
        let e = EmbedMap::new(&pair, l, 4).unwrap();
        let xc = rand_vec(e.domain_len());
        let yf = rand_vec(e.codomain_len());
        let lhs = dot(&yf, &e.apply(&xc).unwrap());
        let rhs = dot(&e.apply_adjoint(&yf).unwrap(), &xc);
        assert!((lhs - rhs).norm() < 1e-11 * lhs.norm().max(1.0));
    }

    #[test]
    fn zero_probe_rejected_and_zero_maps() {
        let l = lat(1, 16, 0.25);
        let pair = build_pair(PairKind::OrthonormalSinc, l.dim());
        let fine = fine_grid_for(&l, 4).unwrap();
        let zero = FineGridFunction::zeros(fine);
        let model = ModelId::discrete(ModelKind::Fb, l.dim(), 0.0, 0.25).unwrap();
        assert!(resolvent_gap_on_probe(&pair, &model, I, &zero).is_err());
        assert_eq!(discretize_kh(&pair, &zero, 0.25).unwrap().norm(), 0.0);
        assert_eq!(embed_jh(&pair, &LatticeField::zeros(l), 4).unwrap().norm(), 0.0);
        assert!(embed_jh(&pair, &LatticeField::zeros(l), 2).is_err());
        assert!(discretize_kh(&pair, &zero, 0.3).is_err());
    }

    #[test]
    fn plane_wave_gap_matches_symbols() {
        // A single fine momentum inside the plateau: the gap is the symbol
        // resolvent difference at that momentum.
        let (n, h) = (32, 0.125);
        let l = lat(1, n, h);
        let fine = fine_grid_for(&l, 4).unwrap();
        let pair = build_pair(PairKind::SmoothBiorthogonal, l.dim());
        let model = ModelId::discrete(ModelKind::Fb, l.dim(), 0.0, h).unwrap();
        let p = 3usize;
        let v = probe_spinor(2);
        let mut spec = vec![ZERO; fine.sites() * 2];
        spec[p * 2] = v[0];
        spec[p * 2 + 1] = v[1];
        let f = FineGridFunction::from_spectrum(fine, spec).unwrap();
        let gap = resolvent_gap_on_probe(&pair, &model, I, &f).unwrap();
        let eta = fine.momentum(p);
        let cont = ModelId::continuous(Dimension::One, 0.0).unwrap();
        let diff = resolvent_fixed(&model, &eta, I).unwrap() - resolvent_fixed(&cont, &eta, I).unwrap();
        let want = diff.apply(&v[..2]);
        let want = (want[0].norm_sqr() + want[1].norm_sqr()).sqrt();
        assert!((gap.l2 - want).abs() < 1e-12);
    }

    #[test]
    fn doubler_packets_sit_on_spurious_zeros() {
        let h = 0.125;
        let l = lat(1, 32, h);
        let fine = fine_grid_for(&l, 4).unwrap();
        let s = ModelId::discrete(ModelKind::S, l.dim(), 1.0, h).unwrap();
        let f = doubler_packet(&s, &fine).unwrap();
        // Peak at |hη| = π.
        let peak = (0..fine.sites()).max_by(|&a, &b| f.spectrum()[2 * a].norm().total_cmp(&f.spectrum()[2 * b].norm())).unwrap();
        assert!(((h * fine.momentum(peak)[0]).abs() - PI).abs() < 1e-12);
        let fb_mod = ModelId::discrete(ModelKind::FbMod, l.dim(), 0.0, h).unwrap();
        assert!(matches!(doubler_packet(&fb_mod, &fine), Err(DiracError::Precondition(_))));
    }

    #[test]
    fn tau_is_finite_and_large() {
        let tau = measure_tau(32.0);
        assert!(tau.is_finite() && tau > 2.0, "tau = {tau}");
    }
}
