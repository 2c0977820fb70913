//! Hölder-continuous matrix potentials and perturbed resolvents.
//!
//! Perturbed systems `(H_0 + V − z)u = f` are solved by restarted GMRES on the
//! right-preconditioned operator `I + V(H_0 − z)^{-1}`, with `u = (H_0 − z)^{-1}w`.
//! Its residual is the true residual of the original system, which is
//! recomputed with the stencil (or the continuous symbol) before a solve is
//! accepted.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{
    build_probe, coarse_lattice_for, discretize_kh, embed_jh_onto, FineGridFunction, PairKind, Probe, RieszPair,
};
use crate::error::{invalid, DiracError, Result};
use crate::lattice::{apply_free_dirac, free_resolvent, LatticeField, PeriodicLattice};
use crate::linalg::{SymbolMatrix, ZERO};
use crate::symbols::{resolvent_fixed, symbol_fixed, Dimension, ModelId, ModelKind};

/// Scalar profile multiplying the potential's matrix coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PotentialShape {
    /// `p(x) = 1`.
    Constant,
    /// `p(x) = tanh(x₁)`; Lipschitz.
    Tanh,
    /// `p(x) = (min(|x|, r)/r)^θ`; flat near the box edge when `r < L/2`.
    Cusp { radius: f64 },
}

/// `V(x) = a·p(x)·M` with `M` Hermitian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderPotential {
    dim: Dimension,
    shape: PotentialShape,
    amplitude: f64,
    theta: f64,
    coefficient: SymbolMatrix,
}

/// Serializable description of a potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialInfo {
    pub d: usize,
    #[serde(flatten)]
    pub shape: PotentialShape,
    pub amplitude: f64,
    pub theta: f64,
    pub holder_const: f64,
    pub sup_bound: f64,
    /// Row-major `(re, im)` entries of the coefficient matrix.
    pub coefficient: Vec<[f64; 2]>,
}

impl HolderPotential {
    fn build(dim: Dimension, shape: PotentialShape, amplitude: f64, theta: f64, m: SymbolMatrix) -> Result<Self> {
        if m.nu() != dim.nu() {
            return invalid(format!("coefficient is {0}x{0}, expected {1}x{1}", m.nu(), dim.nu()));
        }
        if m.hermiticity_defect() > 1e-14 * (1.0 + m.frobenius_norm()) {
            return invalid("potential coefficient must be Hermitian");
        }
        if !amplitude.is_finite() {
            return invalid("amplitude must be finite");
        }
        if !(theta > 0.0 && theta <= 1.0) {
            return invalid(format!("Hölder exponent must lie in (0, 1], got {theta}"));
        }
        Ok(HolderPotential {
            dim,
            shape,
            amplitude,
            theta,
            coefficient: m,
        })
    }

    /// `V(x) = M`.
    pub fn constant(dim: Dimension, m: SymbolMatrix) -> Result<Self> {
        Self::build(dim, PotentialShape::Constant, 1.0, 1.0, m)
    }

    /// `V ≡ 0`.
    pub fn zero(dim: Dimension) -> Self {
        Self::constant(dim, SymbolMatrix::zeros(dim.nu())).expect("zero is Hermitian")
    }

    /// `V(x) = a·tanh(x₁)·M`, with `θ = 1`.
    pub fn tanh(dim: Dimension, amplitude: f64, m: SymbolMatrix) -> Result<Self> {
        Self::build(dim, PotentialShape::Tanh, amplitude, 1.0, m)
    }

    /// `V(x) = a·(min(|x|, r)/r)^θ·M`.
    pub fn cusp(dim: Dimension, amplitude: f64, theta: f64, radius: f64, m: SymbolMatrix) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return invalid("cusp radius must be positive");
        }
        Self::build(dim, PotentialShape::Cusp { radius }, amplitude, theta, m)
    }

    pub fn dim(&self) -> Dimension {
        self.dim
    }
    pub fn shape(&self) -> PotentialShape {
        self.shape
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn coefficient(&self) -> SymbolMatrix {
        self.coefficient
    }

    pub fn is_constant(&self) -> bool {
        self.shape == PotentialShape::Constant
    }

    pub fn is_zero(&self) -> bool {
        self.amplitude == 0.0 || self.coefficient.frobenius_norm() == 0.0
    }

    fn profile(&self, x: &[f64]) -> f64 {
        match self.shape {
            PotentialShape::Constant => 1.0,
            PotentialShape::Tanh => x[0].tanh(),
            PotentialShape::Cusp { radius } => {
                let r = x[..self.dim.d()].iter().map(|v| v * v).sum::<f64>().sqrt();
                (r.min(radius) / radius).powf(self.theta)
            }
        }
    }

    /// `V(x)`; `x` has at least `d` entries.
    pub fn eval(&self, x: &[f64]) -> SymbolMatrix {
        self.coefficient.scale_re(self.amplitude * self.profile(x))
    }

    /// Constant `C` with `‖V(x) − V(y)‖ ≤ C|x − y|^θ`.
    pub fn holder_const(&self) -> f64 {
        let base = self.amplitude.abs() * self.coefficient.spectral_norm();
        match self.shape {
            PotentialShape::Constant => 0.0,
            PotentialShape::Tanh => base,
            PotentialShape::Cusp { radius } => base / radius.powf(self.theta),
        }
    }

    /// `sup_x ‖V(x)‖`.
    pub fn sup_bound(&self) -> f64 {
        self.amplitude.abs() * self.coefficient.spectral_norm()
    }

    pub fn info(&self) -> PotentialInfo {
        PotentialInfo {
            d: self.dim.d(),
            shape: self.shape,
            amplitude: self.amplitude,
            theta: self.theta,
            holder_const: self.holder_const(),
            sup_bound: self.sup_bound(),
            coefficient: self.coefficient.to_row_major().iter().map(|c| [c.re, c.im]).collect(),
        }
    }
}

/// Largest observed `‖V(x) − V(y)‖ / (C|x − y|^θ)` over seeded random pairs in
/// `[−span, span]^d`; at most 1 when the declared constant is valid.
pub fn holder_ratio_max(v: &HolderPotential, span: f64, samples: usize, seed: u64) -> f64 {
    let c = v.holder_const();
    if c == 0.0 {
        return 0.0;
    }
    let d = v.dim.d();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..samples {
        let x: Vec<f64> = (0..d).map(|_| span * (2.0 * rng.gen::<f64>() - 1.0)).collect();
        // Alternate long and short separations.
        let scale = if k % 2 == 0 { span } else { 1e-3 * span };
        let y: Vec<f64> = x.iter().map(|xi| xi + scale * (2.0 * rng.gen::<f64>() - 1.0)).collect();
        let dist = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if dist == 0.0 {
            continue;
        }
        let diff = (v.eval(&x) - v.eval(&y)).spectral_norm();
        worst = worst.max(diff / (c * dist.powf(v.theta)));
    }
    worst
}

/// `V_h(k) = V(hk)` on the sites of a lattice (centered coordinates).
#[derive(Debug, Clone)]
pub struct SampledPotential {
    lattice: PeriodicLattice,
    values: Vec<SymbolMatrix>,
    zero: bool,
}

pub fn sample_potential(v: &HolderPotential, lattice: &PeriodicLattice) -> Result<SampledPotential> {
    if v.dim != lattice.dim() {
        return invalid("potential and lattice dimensions differ");
    }
    let values = (0..lattice.sites())
        .into_par_iter()
        .map(|s| v.eval(&lattice.position(s)))
        .collect();
    Ok(SampledPotential {
        lattice: *lattice,
        values,
        zero: v.is_zero(),
    })
}

impl SampledPotential {
    pub fn lattice(&self) -> &PeriodicLattice {
        &self.lattice
    }
    pub fn values(&self) -> &[SymbolMatrix] {
        &self.values
    }

    /// Sitewise `(V_h u)(k) = V_h(k)u(k)`.
    pub fn apply(&self, field: &LatticeField) -> Result<LatticeField> {
        if *field.lattice() != self.lattice {
            return invalid("field and potential live on different lattices");
        }
        LatticeField::from_values(self.lattice, self.apply_values(field.values()))
    }

    fn apply_values(&self, u: &[Complex64]) -> Vec<Complex64> {
        let nu = self.lattice.nu();
        let mut out = vec![ZERO; u.len()];
        if self.zero {
            return out;
        }
        out.par_chunks_mut(nu).enumerate().for_each(|(s, o)| {
            o.copy_from_slice(&self.values[s].apply(&u[s * nu..(s + 1) * nu])[..nu]);
        });
        out
    }
}

/// Outcome of an iterative solve. `residual` is the relative true residual
/// `‖(H − z)u − f‖ / ‖f‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 500,
            restart: 40,
        }
    }
}

/// `H_h = H_{0,h} + V_h` by stencils.
pub fn apply_perturbed_dirac(model: &ModelId, vh: &SampledPotential, field: &LatticeField) -> Result<LatticeField> {
    let h0 = apply_free_dirac(model, field)?;
    let v = vh.apply(field)?;
    h0.axpy(Complex64::new(1.0, 0.0), &v)
}

/// Free part of a perturbed problem: a lattice model (stencil + FFT) or the
/// continuous operator on a fine grid (spectral).
enum FreePart {
    Lattice(ModelId),
    Continuum(ModelId),
}

impl FreePart {
    fn resolvent(&self, z: Complex64, f: &LatticeField) -> Result<LatticeField> {
        match self {
            FreePart::Lattice(m) => free_resolvent(m, z, f),
            FreePart::Continuum(m) => {
                let m = *m;
                Ok(f.to_spectrum().apply_multiplier(|eta| resolvent_fixed(&m, eta, z))?.to_field())
            }
        }
    }

    fn apply(&self, f: &LatticeField) -> Result<LatticeField> {
        match self {
            FreePart::Lattice(m) => apply_free_dirac(m, f),
            FreePart::Continuum(m) => {
                let m = *m;
                Ok(f.to_spectrum().apply_multiplier(|eta| Ok(symbol_fixed(&m, eta)))?.to_field())
            }
        }
    }
}

fn vnorm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Restarted GMRES for `A x = b` from `x`; stops when the recurrence
/// residual is at most `target`, or after `budget` inner steps. Returns the
/// number of inner steps taken.
fn gmres<A>(apply: &A, b: &[Complex64], x: &mut [Complex64], target: f64, restart: usize, budget: usize) -> Result<usize>
where
    A: Fn(&[Complex64]) -> Result<Vec<Complex64>>,
{
    let mut steps = 0;
    while steps < budget {
        let ax = apply(x)?;
        let r: Vec<Complex64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let beta = vnorm(&r);
        if beta <= target {
            break;
        }
        let m = restart.min(budget - steps);
        let mut basis: Vec<Vec<Complex64>> = vec![r.iter().map(|c| c / beta).collect()];
        let mut hess = vec![vec![ZERO; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![ZERO; m]);
        let mut g = vec![ZERO; m + 1];
        g[0] = Complex64::new(beta, 0.0);
        let mut k = 0;
        while k < m {
            let mut w = apply(&basis[k])?;
            for (i, v) in basis.iter().enumerate() {
                let hik = dot(v, &w);
                hess[i][k] = hik;
                w.iter_mut().zip(v).for_each(|(wj, vj)| *wj -= hik * vj);
            }
            let next = vnorm(&w);
            hess[k + 1][k] = Complex64::new(next, 0.0);
            for i in 0..k {
                let (a, bb) = (hess[i][k], hess[i + 1][k]);
                hess[i][k] = cs[i] * a + sn[i] * bb;
                hess[i + 1][k] = -sn[i].conj() * a + cs[i] * bb;
            }
            let (a, bb) = (hess[k][k], hess[k + 1][k]);
            let rho = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if a.norm() == 0.0 {
                cs[k] = 0.0;
                sn[k] = Complex64::new(1.0, 0.0);
            } else {
                cs[k] = a.norm() / rho;
                sn[k] = (a / a.norm()) * bb.conj() / rho;
            }
            hess[k][k] = cs[k] * a + sn[k] * bb;
            hess[k + 1][k] = ZERO;
            g[k + 1] = -sn[k].conj() * g[k];
            g[k] *= cs[k];
            k += 1;
            steps += 1;
            if g[k].norm() <= target || next <= 1e-300 {
                break;
            }
            basis.push(w.iter().map(|c| c / next).collect());
        }
        // Back substitution on the k×k triangle.
        let mut y = vec![ZERO; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= hess[i][j] * y[j];
            }
            y[i] = s / hess[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            x.iter_mut().zip(&basis[j]).for_each(|(xi, vj)| *xi += yj * vj);
        }
    }
    Ok(steps)
}

fn check_shift(z: Complex64) -> Result<()> {
    if !(z.re.is_finite() && z.im.is_finite()) || z.im == 0.0 {
        return invalid(format!("perturbed resolvents need non-real z, got {z}"));
    }
    Ok(())
}

fn solve(
    free: &FreePart,
    vh: &SampledPotential,
    z: Complex64,
    f: &LatticeField,
    opts: &SolverOptions,
) -> Result<(LatticeField, SolverReport)> {
    let lat = *f.lattice();
    let fnorm = f.norm();
    let true_residual = |u: &LatticeField| -> Result<f64> {
        let hu = free.apply(u)?;
        let vu = vh.apply(u)?;
        let r: Vec<Complex64> = f
            .values()
            .iter()
            .zip(hu.values())
            .zip(vu.values())
            .zip(u.values())
            .map(|(((fv, h), v), uv)| fv - (h + v - z * uv))
            .collect();
        Ok(vnorm(&r) / vnorm(f.values()))
    };
    if fnorm == 0.0 {
        let report = SolverReport {
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
        return Ok((LatticeField::zeros(lat), report));
    }
    if vh.zero {
        let u = free.resolvent(z, f)?;
        let residual = true_residual(&u)?;
        let report = SolverReport {
            iterations: 0,
            residual,
            converged: residual <= opts.tol,
        };
        return Ok((u, report));
    }
    let apply = |w: &[Complex64]| -> Result<Vec<Complex64>> {
        let wf = LatticeField::from_values(lat, w.to_vec())?;
        let r0w = free.resolvent(z, &wf)?;
        let v = vh.apply_values(r0w.values());
        Ok(w.iter().zip(&v).map(|(a, b)| a + b).collect())
    };
    let b = f.values();
    let bnorm = vnorm(b);
    let mut w = b.to_vec();
    let mut target = 0.5 * opts.tol * bnorm;
    let mut iterations = 0;
    loop {
        iterations += gmres(&apply, b, &mut w, target, opts.restart, opts.max_iter - iterations)?;
        let u = free.resolvent(z, &LatticeField::from_values(lat, w.clone())?)?;
        let residual = true_residual(&u)?;
        if residual <= opts.tol || iterations >= opts.max_iter {
            let report = SolverReport {
                iterations,
                residual,
                converged: residual <= opts.tol,
            };
            return Ok((u, report));
        }
        // Round-off left the true residual above tolerance; tighten and go on.
        target *= 0.5 * opts.tol / residual;
    }
}

/// `(H_{0,h} + V_h − z)^{-1} f` with the default restart and iteration cap.
pub fn perturbed_resolvent(
    model: &ModelId,
    vh: &SampledPotential,
    z: Complex64,
    f: &LatticeField,
    tol: f64,
) -> Result<(LatticeField, SolverReport)> {
    let opts = SolverOptions {
        tol,
        ..SolverOptions::default()
    };
    perturbed_resolvent_with(model, vh, z, f, &opts)
}

pub fn perturbed_resolvent_with(
    model: &ModelId,
    vh: &SampledPotential,
    z: Complex64,
    f: &LatticeField,
    opts: &SolverOptions,
) -> Result<(LatticeField, SolverReport)> {
    check_shift(z)?;
    if !model.kind.is_discrete() {
        return invalid("perturbed_resolvent needs a lattice model");
    }
    if *f.lattice() != vh.lattice {
        return invalid("field and potential live on different lattices");
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 || opts.restart == 0 {
        return invalid("solver tolerance and restart length must be positive");
    }
    solve(&FreePart::Lattice(*model), vh, z, f, opts)
}

/// Fixed-point iteration `u ← (H_{0,h} − z)^{-1}(f − V_h u)`; converges when
/// `‖V_h‖·‖(H_{0,h} − z)^{-1}‖ < 1`. Used as an independent oracle.
pub fn neumann_resolvent(
    model: &ModelId,
    vh: &SampledPotential,
    z: Complex64,
    f: &LatticeField,
    tol: f64,
    max_iter: usize,
) -> Result<(LatticeField, SolverReport)> {
    check_shift(z)?;
    let mut u = LatticeField::zeros(*f.lattice());
    let mut iterations = 0;
    while iterations < max_iter {
        let rhs = f.sub(&vh.apply(&u)?)?;
        let next = free_resolvent(model, z, &rhs)?;
        let step = next.sub(&u)?.norm();
        u = next;
        iterations += 1;
        if step <= 0.1 * tol * f.norm() {
            break;
        }
    }
    let hu = apply_perturbed_dirac(model, vh, &u)?;
    let r = hu.axpy(-z, &u)?.sub(f)?;
    let residual = if f.norm() == 0.0 { 0.0 } else { r.norm() / f.norm() };
    Ok((
        u,
        SolverReport {
            iterations,
            residual,
            converged: residual <= tol,
        },
    ))
}

/// `(H_0 + V − z)^{-1} f` for the continuous operator on the fine grid of `f`.
pub fn continuum_perturbed_resolvent(
    mass: f64,
    v: &HolderPotential,
    z: Complex64,
    f: &FineGridFunction,
    opts: &SolverOptions,
) -> Result<(FineGridFunction, SolverReport)> {
    check_shift(z)?;
    let fine = *f.lattice();
    let vh = sample_potential(v, &fine)?;
    let model = ModelId::continuous(fine.dim(), mass)?;
    let (u, report) = solve(&FreePart::Continuum(model), &vh, z, &f.to_spatial(), opts)?;
    Ok((FineGridFunction::from_spatial(&u), report))
}

/// `θ′` from `1/θ′ = 1/θ + 1/(τ − d)`.
pub fn theta_prime(theta: f64, tau: f64, d: usize) -> Result<f64> {
    if !(theta > 0.0 && theta <= 1.0) {
        return invalid(format!("theta must lie in (0, 1], got {theta}"));
    }
    if tau.is_nan() || tau <= d as f64 {
        return invalid(format!("tau must exceed d = {d}, got {tau}"));
    }
    Ok(1.0 / (1.0 / theta + 1.0 / (tau - d as f64)))
}

/// `max_f ‖V_h K_h f − K_h(V f)‖ / ‖f‖` over nonzero probes. The product `V f`
/// is formed pointwise on the fine grid.
pub fn commutator_gap(pair: &RieszPair, v: &HolderPotential, h: f64, probes: &[FineGridFunction]) -> Result<f64> {
    if pair.kind == PairKind::OrthonormalSinc {
        return Err(DiracError::Precondition(
            "the sinc generator decays like 1/|x|, which is too slow for the commutator estimate".into(),
        ));
    }
    if probes.is_empty() {
        return invalid("at least one probe is required");
    }
    let mut worst: f64 = 0.0;
    for f in probes {
        let fnorm = f.norm();
        if fnorm == 0.0 {
            return invalid("probes must be nonzero");
        }
        let kf = discretize_kh(pair, f, h)?;
        let vh = sample_potential(v, kf.lattice())?;
        let left = vh.apply(&kf)?;
        let fine_v = sample_potential(v, f.lattice())?;
        let vf = FineGridFunction::from_spatial(&fine_v.apply(&f.to_spatial())?);
        let right = discretize_kh(pair, &vf, h)?;
        worst = worst.max(left.sub(&right)?.norm() / fnorm);
    }
    Ok(worst)
}

/// Box and grid for [`perturbed_convergence_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSetup {
    /// Side `L` of the periodic box; `L/h` must be a power of two for every `h`.
    pub box_side: f64,
    /// Refinement of the finest lattice; the fine grid has `R·L/h_min` points per axis.
    pub refinement: usize,
    pub seed: u64,
    #[serde(skip)]
    pub solver: SolverOptions,
}

impl Default for SweepSetup {
    fn default() -> Self {
        SweepSetup {
            box_side: 32.0,
            refinement: 4,
            seed: 7,
            solver: SolverOptions::default(),
        }
    }
}

/// One probe's gap at one `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeValue {
    pub probe: Probe,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedRecord {
    pub h: f64,
    /// Max over probes of the normalized gap.
    pub value: f64,
    pub probe_argmax: Probe,
    pub per_probe: Vec<ProbeValue>,
    /// Worst lattice solve at this `h`.
    pub solver: SolverReport,
}

fn check_sweep_model(model: &ModelId) -> Result<()> {
    let ok = match model.kind {
        ModelKind::Fb => model.d() == 1,
        ModelKind::FbMod | ModelKind::SMod => true,
        _ => false,
    };
    if !ok {
        return Err(DiracError::UnsupportedModel(format!(
            "perturbed sweeps cover fb (d = 1), fb_mod and s_mod; got {} in d = {}",
            model.kind,
            model.d()
        )));
    }
    Ok(())
}

fn not_converged(report: &SolverReport) -> DiracError {
    DiracError::NotConverged {
        iterations: report.iterations,
        residual: report.residual,
    }
}

/// Per `h`: `max_f ‖J_h(H_h − z)^{-1}K_h f − (H − z)^{-1} f‖ / ‖f‖` over probes,
/// all on one fine grid. Aborts on any failed solve.
pub fn perturbed_convergence_sweep(
    model: &ModelId,
    v: &HolderPotential,
    pair: &RieszPair,
    z: Complex64,
    h_list: &[f64],
    probes: &[Probe],
    setup: &SweepSetup,
) -> Result<Vec<PerturbedRecord>> {
    check_sweep_model(model)?;
    check_shift(z)?;
    if v.dim != model.dim || pair.dim != model.dim {
        return invalid("model, potential and pair dimensions differ");
    }
    if h_list.is_empty() || probes.is_empty() {
        return invalid("h list and probe list must be nonempty");
    }
    if h_list.windows(2).any(|w| w[1] >= w[0]) || h_list.iter().any(|&h| !(h > 0.0 && h <= 1.0)) {
        return invalid("h list must be strictly decreasing within (0, 1]");
    }
    let h_min = *h_list.last().expect("nonempty");
    let n_max = lattice_points(setup.box_side, h_min)?;
    let fine = PeriodicLattice::new(model.dim, n_max * setup.refinement, h_min / setup.refinement as f64)?;
    let mut cached: Vec<Option<(FineGridFunction, FineGridFunction)>> = vec![None; probes.len()];
    let mut records = Vec::with_capacity(h_list.len());
    for &h in h_list {
        lattice_points(setup.box_side, h)?;
        let coarse = coarse_lattice_for(&fine, h)?;
        let lat_model = model.with_h(h)?;
        let vh = sample_potential(v, &coarse)?;
        let mut per_probe = Vec::with_capacity(probes.len());
        let mut worst_solve = SolverReport {
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
        for (i, &probe) in probes.iter().enumerate() {
            let (f, cont) = match (&cached[i], probe.is_h_independent()) {
                (Some(pair), true) => pair.clone(),
                _ => {
                    let f = build_probe(probe, &fine, h, setup.seed);
                    let (u, rep) = continuum_perturbed_resolvent(model.mass, v, z, &f, &setup.solver)?;
                    if !rep.converged {
                        return Err(not_converged(&rep));
                    }
                    if probe.is_h_independent() {
                        cached[i] = Some((f.clone(), u.clone()));
                    }
                    (f, u)
                }
            };
            let kf = discretize_kh(pair, &f, h)?;
            let (uh, rep) = perturbed_resolvent_with(&lat_model, &vh, z, &kf, &setup.solver)?;
            if !rep.converged {
                return Err(not_converged(&rep));
            }
            if rep.residual >= worst_solve.residual {
                worst_solve.residual = rep.residual;
            }
            worst_solve.iterations = worst_solve.iterations.max(rep.iterations);
            let ju = embed_jh_onto(pair, &uh.to_spectrum(), &fine)?;
            let gap = ju.sub(&cont)?.norm() / f.norm();
            per_probe.push(ProbeValue { probe, gap });
        }
        let best = per_probe
            .iter()
            .copied()
            .fold(per_probe[0], |a, b| if b.gap > a.gap { b } else { a });
        records.push(PerturbedRecord {
            h,
            value: best.gap,
            probe_argmax: best.probe,
            per_probe,
            solver: worst_solve,
        });
    }
    Ok(records)
}

/// `L/h` when it is a power of two of at least 4.
fn lattice_points(side: f64, h: f64) -> Result<usize> {
    let ratio = side / h;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio || n < 4.0 || !(n as usize).is_power_of_two() {
        return invalid(format!("box side {side} over mesh {h} is not a power of two >= 4"));
    }
    Ok(n as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{build_pair, fine_grid_for, resolvent_gap_on_probe};
    use crate::symbols::pauli;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn lat1(n: usize, h: f64) -> PeriodicLattice {
        PeriodicLattice::new(Dimension::One, n, h).unwrap()
    }

    fn tanh_v(a: f64) -> HolderPotential {
        HolderPotential::tanh(Dimension::One, a, pauli(1).unwrap()).unwrap()
    }

    #[test]
    fn potential_zoo_invariants() {
        let sigma3 = pauli(3).unwrap();
        let zoo = [
            HolderPotential::constant(Dimension::One, sigma3.scale_re(0.7)).unwrap(),
            tanh_v(0.5),
            HolderPotential::cusp(Dimension::One, 0.8, 0.5, 3.0, sigma3).unwrap(),
            HolderPotential::cusp(Dimension::Two, 1.0, 0.25, 2.0, pauli(2).unwrap()).unwrap(),
        ];
        for v in &zoo {
            assert!(holder_ratio_max(v, 4.0, 2000, 1) <= 1.0 + 1e-12, "{:?}", v.shape());
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            for _ in 0..200 {
                let x: Vec<f64> = (0..v.dim().d()).map(|_| 20.0 * (rng.gen::<f64>() - 0.5)).collect();
                let m = v.eval(&x);
                assert!(m.spectral_norm() <= v.sup_bound() + 1e-14);
                assert_eq!(m.hermiticity_defect(), 0.0);
            }
        }
        assert!(HolderPotential::constant(Dimension::One, SymbolMatrix::from_rows(&[&[ZERO, c(1.0, 0.0)], &[ZERO, ZERO]]).unwrap()).is_err());
        assert!(HolderPotential::cusp(Dimension::One, 1.0, 1.5, 1.0, sigma3).is_err());
        assert!(HolderPotential::constant(Dimension::Three, sigma3).is_err());
    }

    #[test]
    fn sampling_examples() {
        let l = lat1(16, 0.25);
        let m = pauli(3).unwrap().scale_re(0.3);
        let vh = sample_potential(&HolderPotential::constant(Dimension::One, m).unwrap(), &l).unwrap();
        assert!(vh.values().iter().all(|x| *x == m));
        let vh = sample_potential(&tanh_v(1.0), &l).unwrap();
        for s in 0..l.sites() {
            let x = 0.25 * l.centered_coords(s)[0] as f64;
            assert_eq!(vh.values()[s], pauli(1).unwrap().scale_re(x.tanh()));
        }
    }

    #[test]
    fn perturbed_operator_is_symmetric() {
        for (d, kind) in [(1, ModelKind::Fb), (2, ModelKind::SMod), (3, ModelKind::FbMod)] {
            let dim = Dimension::from_d(d).unwrap();
            let l = PeriodicLattice::new(dim, 8, 0.5).unwrap();
            let coeff = if d == 3 {
                crate::symbols::dirac_matrices().1
            } else {
                pauli(1).unwrap()
            };
            let v = HolderPotential::cusp(dim, 0.7, 0.5, 1.5, coeff).unwrap();
            let vh = sample_potential(&v, &l).unwrap();
            let model = ModelId::discrete(kind, dim, 0.4, 0.5).unwrap();
            let (a, b) = (LatticeField::random(l, 1), LatticeField::random(l, 2));
            let lhs = apply_perturbed_dirac(&model, &vh, &a).unwrap().inner(&b).unwrap();
            let rhs = a.inner(&apply_perturbed_dirac(&model, &vh, &b).unwrap()).unwrap();
            assert!((lhs - rhs).norm() < 1e-12 * lhs.norm().max(1.0));
        }
    }

    #[test]
    fn zero_potential_matches_free_resolvent() {
        let l = lat1(64, 0.125);
        let model = ModelId::discrete(ModelKind::Fb, Dimension::One, 1.0, 0.125).unwrap();
        let f = LatticeField::random(l, 3);
        let vh = sample_potential(&HolderPotential::zero(Dimension::One), &l).unwrap();
        let (u, rep) = perturbed_resolvent(&model, &vh, c(0.0, 2.0), &f, 1e-10).unwrap();
        let free = free_resolvent(&model, c(0.0, 2.0), &f).unwrap();
        assert!(rep.converged && rep.residual <= 1e-10);
        assert!(u.sub(&free).unwrap().norm() <= 1e-10 * f.norm());
    }

    #[test]
    fn krylov_matches_neumann_and_residual_holds() {
        let l = lat1(128, 0.0625);
        let v = tanh_v(0.5);
        let vh = sample_potential(&v, &l).unwrap();
        let model = ModelId::discrete(ModelKind::Fb, Dimension::One, 0.5, 0.0625).unwrap();
        let z = c(0.0, 4.0 * (1.0 + v.sup_bound()));
        let f = LatticeField::random(l, 5);
        let (u, rep) = perturbed_resolvent(&model, &vh, z, &f, 1e-10).unwrap();
        assert!(rep.converged && rep.residual <= 1e-10, "{rep:?}");
        let (un, nrep) = neumann_resolvent(&model, &vh, z, &f, 1e-12, 200).unwrap();
        assert!(nrep.converged);
        assert!(u.sub(&un).unwrap().norm() <= 1e-10 * f.norm());
        // Independent residual with the stencil operator.
        let r = apply_perturbed_dirac(&model, &vh, &u).unwrap().axpy(-z, &u).unwrap().sub(&f).unwrap();
        assert!(r.norm() <= 1e-10 * f.norm());
    }

    #[test]
    fn adjoint_resolvent_identity() {
        // ⟨(H − z)^{-1} f, g⟩ = ⟨f, (H − z̄)^{-1} g⟩.
        let l = lat1(64, 0.125);
        let vh = sample_potential(&tanh_v(0.8), &l).unwrap();
        let model = ModelId::discrete(ModelKind::SMod, Dimension::One, 0.0, 0.125).unwrap();
        let z = c(0.3, 1.0);
        let (f, g) = (LatticeField::random(l, 8), LatticeField::random(l, 9));
        let (u, _) = perturbed_resolvent(&model, &vh, z, &f, 1e-12).unwrap();
        let (w, _) = perturbed_resolvent(&model, &vh, z.conj(), &g, 1e-12).unwrap();
        let lhs = u.inner(&g).unwrap();
        let rhs = f.inner(&w).unwrap();
        assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
    }

    #[test]
    fn constant_sigma3_is_a_mass_shift() {
        let l = lat1(64, 0.125);
        let shift = 0.6;
        let v = HolderPotential::constant(Dimension::One, pauli(3).unwrap().scale_re(shift)).unwrap();
        let vh = sample_potential(&v, &l).unwrap();
        let model = ModelId::discrete(ModelKind::Fb, Dimension::One, 0.5, 0.125).unwrap();
        let shifted = model.with_mass(0.5 + shift).unwrap();
        let f = LatticeField::random(l, 4);
        let z = c(0.0, 2.0);
        let (u, rep) = perturbed_resolvent(&model, &vh, z, &f, 1e-10).unwrap();
        assert!(rep.converged);
        let free = free_resolvent(&shifted, z, &f).unwrap();
        assert!(u.sub(&free).unwrap().norm() <= 1e-9 * f.norm());
    }

    #[test]
    fn real_shift_rejected() {
        let l = lat1(16, 0.25);
        let vh = sample_potential(&tanh_v(0.5), &l).unwrap();
        let model = ModelId::discrete(ModelKind::Fb, Dimension::One, 1.0, 0.25).unwrap();
        let f = LatticeField::random(l, 1);
        assert!(perturbed_resolvent(&model, &vh, c(0.5, 0.0), &f, 1e-10).is_err());
    }

    #[test]
    fn theta_prime_examples() {
        assert!((theta_prime(1.0, 2.0, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!((theta_prime(1.0, 1e6 + 1.0, 1).unwrap() - 1.0).abs() < 1e-5);
        assert!((theta_prime(0.5, 1.5, 1).unwrap() - 0.25).abs() < 1e-15);
        assert!(theta_prime(1.0, 1.0, 1).is_err());
        assert!(theta_prime(1.0, 0.5, 2).is_err());
        assert!(theta_prime(0.0, 5.0, 1).is_err());
    }

    #[test]
    fn commutator_examples() {
        let l = lat1(64, 0.5);
        let fine = fine_grid_for(&l, 4).unwrap();
        let f = build_probe(Probe::Gaussian, &fine, 0.5, 0);
        let smooth = build_pair(PairKind::SmoothBiorthogonal, Dimension::One);
        let sinc = build_pair(PairKind::OrthonormalSinc, Dimension::One);
        let vc = HolderPotential::constant(Dimension::One, pauli(3).unwrap().scale_re(0.4)).unwrap();
        assert!(commutator_gap(&smooth, &vc, 0.5, std::slice::from_ref(&f)).unwrap() < 1e-13);
        assert!(matches!(commutator_gap(&sinc, &vc, 0.5, std::slice::from_ref(&f)), Err(DiracError::Precondition(_))));
        assert!(commutator_gap(&smooth, &vc, 0.5, &[FineGridFunction::zeros(fine)]).is_err());

        // Fixed box and fine grid; h halves.
        let side = 32.0;
        let hs = [0.5, 0.25, 0.125, 0.0625];
        let fine = PeriodicLattice::new(Dimension::One, 2048, side / 2048.0).unwrap();
        let f = build_probe(Probe::SmallPacket, &fine, 0.0625, 0);
        let v = tanh_v(1.0);
        let pts: Vec<(f64, f64)> = hs.iter().map(|&h| (h, commutator_gap(&smooth, &v, h, std::slice::from_ref(&f)).unwrap())).collect();
        let fit = crate::symbol_analysis::fit_loglog(&pts).unwrap();
        assert!(fit.slope >= 0.4, "{pts:?} slope {}", fit.slope);
    }

    #[test]
    fn zero_potential_sweep_matches_free_gaps() {
        let model = ModelId::discrete(ModelKind::Fb, Dimension::One, 1.0, 0.25).unwrap();
        let pair = build_pair(PairKind::SmoothBiorthogonal, Dimension::One);
        let z = c(0.0, 2.0);
        let setup = SweepSetup {
            box_side: 16.0,
            ..SweepSetup::default()
        };
        let hs = [0.25, 0.125];
        let probes = [Probe::Gaussian, Probe::SmallPacket];
        let recs = perturbed_convergence_sweep(&model, &HolderPotential::zero(Dimension::One), &pair, z, &hs, &probes, &setup)
            .unwrap();
        let fine = PeriodicLattice::new(Dimension::One, 512, 16.0 / 512.0).unwrap();
        for rec in &recs {
            for pv in &rec.per_probe {
                let f = build_probe(pv.probe, &fine, rec.h, setup.seed);
                let free = resolvent_gap_on_probe(&pair, &model.with_h(rec.h).unwrap(), z, &f).unwrap();
                assert!((free.l2 - pv.gap).abs() < 1e-9, "{} vs {}", free.l2, pv.gap);
            }
        }
        assert!(perturbed_convergence_sweep(
            &ModelId::discrete(ModelKind::S, Dimension::One, 1.0, 0.25).unwrap(),
            &HolderPotential::zero(Dimension::One),
            &pair,
            z,
            &hs,
            &probes,
            &setup
        )
        .is_err());
    }
}
