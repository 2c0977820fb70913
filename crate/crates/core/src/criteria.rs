//! The acceptance criteria as executable checks.
//!
//! Each criterion runs a fixed, seeded experiment and compares the outcome
//! against oracles written out here from closed forms, never read back from
//! the code under test. A report lists every check with its measured value
//! and bound; the criterion passes iff all checks pass, including its
//! runtime budget.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::embedding::{
    build_pair, build_probe, discretize_kh, doubler_packet, embed_jh, fine_grid_for, resolvent_gap_on_probe,
    CompositeGapMap, DiscretizeMap, EmbedMap, FineGridFunction, PairKind, Probe,
};
use crate::error::{invalid, Result};
use crate::lattice::{
    apply_difference, apply_free_dirac, apply_free_dirac_spectral, free_resolvent, operator_norm_estimate,
    DifferenceOp, LatticeField, PeriodicLattice,
};
use crate::linalg::{SymbolMatrix, I};
use crate::potential::{
    perturbed_convergence_sweep, perturbed_resolvent, sample_potential, theta_prime, HolderPotential, SweepSetup,
};
use crate::symbol_analysis::{
    convergence_sweep, default_grid_n, fit_loglog, fit_rate, nonconvergence_witness, sup_resolvent_difference,
    symbol_zero_census, DEFAULT_ZERO_TOL,
};
use crate::symbols::{
    dirac_matrices, pauli, scalar_g, sigma_dot, squared_symbol_eigs, symbol, Dimension, ModelId, ModelKind,
};

/// Identifier, title and runtime budget in seconds.
pub const CRITERIA: [(u8, &str, Option<f64>); 10] = [
    (1, "algebraic identities", Some(5.0)),
    (2, "symbol convergence rates", Some(60.0)),
    (3, "non-convergence floors", Some(30.0)),
    (4, "uniformity in z", None),
    (5, "embedding identities", Some(30.0)),
    (6, "full-operator convergence", None),
    (7, "Sobolev and strong convergence split", None),
    (8, "fermion doubling census", Some(10.0)),
    (9, "perturbed-operator rate", Some(180.0)),
    (10, "lattice correctness", Some(10.0)),
];

const SEED: u64 = 20_240_611;
const DRAWS: usize = 10_000;

/// One comparison of a measured value against a bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub label: String,
    pub value: f64,
    pub expected: String,
    pub pass: bool,
}

/// Outcome of one criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionReport {
    pub id: u8,
    pub title: &'static str,
    pub budget_s: Option<f64>,
    pub elapsed_s: f64,
    pub checks: Vec<Check>,
    /// Set when the experiment itself failed; the criterion then fails.
    pub error: Option<String>,
    pub pass: bool,
}

impl CriterionReport {
    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    fn push(&mut self, label: String, value: f64, expected: String, pass: bool) {
        self.0.push(Check {
            label,
            value,
            expected,
            pass,
        });
    }

    fn at_most(&mut self, label: impl Into<String>, value: f64, bound: f64) {
        self.push(label.into(), value, format!("<= {bound:?}"), value <= bound);
    }

    fn below(&mut self, label: impl Into<String>, value: f64, bound: f64) {
        self.push(label.into(), value, format!("< {bound:?}"), value < bound);
    }

    fn at_least(&mut self, label: impl Into<String>, value: f64, bound: f64) {
        self.push(label.into(), value, format!(">= {bound:?}"), value >= bound);
    }

    fn within(&mut self, label: impl Into<String>, value: f64, lo: f64, hi: f64) {
        self.push(label.into(), value, format!("in [{lo}, {hi}]"), value >= lo && value <= hi);
    }

    fn equals(&mut self, label: impl Into<String>, value: usize, want: usize) {
        self.push(label.into(), value as f64, format!("== {want}"), value == want);
    }
}

/// Runs criterion `id` (1 to 10).
pub fn run_criterion(id: u8) -> Result<CriterionReport> {
    let Some(&(_, title, budget_s)) = CRITERIA.iter().find(|c| c.0 == id) else {
        return invalid(format!("criterion must be in 1..=10, got {id}"));
    };
    let mut checks = Checks::default();
    let start = Instant::now();
    let outcome = match id {
        1 => algebraic_identities(&mut checks),
        2 => symbol_rates(&mut checks),
        3 => nonconvergence_floors(&mut checks),
        4 => uniformity_in_z(&mut checks),
        5 => embedding_identities(&mut checks),
        6 => operator_convergence(&mut checks),
        7 => sobolev_split(&mut checks),
        8 => doubling_census(&mut checks),
        9 => perturbed_rate(&mut checks),
        _ => lattice_correctness(&mut checks),
    };
    let elapsed_s = start.elapsed().as_secs_f64();
    if let Some(b) = budget_s {
        checks.below("runtime_s", elapsed_s, b);
    }
    let error = outcome.err().map(|e| e.to_string());
    let pass = error.is_none() && checks.0.iter().all(|c| c.pass);
    Ok(CriterionReport {
        id,
        title,
        budget_s,
        elapsed_s,
        checks: checks.0,
        error,
        pass,
    })
}

fn dim(d: usize) -> Dimension {
    Dimension::from_d(d).expect("d in 1..=3")
}

/// `2^{-k}` for `k` in `from..=to`.
fn dyadic(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|k| 2f64.powi(-k)).collect()
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

// ------------------------------------------------------------------ 1

fn levi_civita(j: usize, k: usize, l: usize) -> f64 {
    match (j, k, l) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

fn random_hermitian(rng: &mut ChaCha8Rng, nu: usize, scale: f64) -> SymbolMatrix {
    let mut a = SymbolMatrix::zeros(nu);
    for i in 0..nu {
        for j in 0..nu {
            a.set(i, j, c(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)));
        }
    }
    (a + a.adjoint()).scale_re(0.5)
}

fn algebraic_identities(ck: &mut Checks) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let sigma = [pauli(1)?, pauli(2)?, pauli(3)?];
    let one2 = SymbolMatrix::identity(2);
    let one4 = SymbolMatrix::identity(4);

    // σ_j σ_k = δ_jk + i ε_jkl σ_l, then (a·σ)² = |a|² on random real a.
    let mut dev: f64 = 0.0;
    for j in 0..3 {
        for k in 0..3 {
            let mut want = if j == k { one2 } else { SymbolMatrix::zeros(2) };
            for (l, s) in sigma.iter().enumerate() {
                want = want + s.scale(I * levi_civita(j, k, l));
            }
            dev = dev.max((sigma[j] * sigma[k]).max_abs_diff(&want));
        }
    }
    for _ in 0..DRAWS {
        let a: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-10.0..10.0));
        let n2: f64 = a.iter().map(|x| x * x).sum();
        let m = sigma_dot(&a.map(|x| c(x, 0.0)));
        dev = dev.max((m * m).max_abs_diff(&one2.scale_re(n2)) / (1.0 + n2));
        dev = dev.max(m.hermiticity_defect());
    }
    ck.below("pauli_relations", dev, 1e-11);

    // {α_j, α_k} = 2δ_jk, {α_j, β} = 0, β² = 1, then (α·p + mβ)² = |p|² + m².
    let (alpha, beta) = dirac_matrices();
    let anti = |a: SymbolMatrix, b: SymbolMatrix| a * b + b * a;
    let mut dev: f64 = anti(beta, beta).max_abs_diff(&one4.scale_re(2.0));
    for j in 0..3 {
        dev = dev.max(anti(alpha[j], beta).max_abs_diff(&SymbolMatrix::zeros(4)));
        for k in 0..3 {
            let want = if j == k { one4.scale_re(2.0) } else { SymbolMatrix::zeros(4) };
            dev = dev.max(anti(alpha[j], alpha[k]).max_abs_diff(&want));
        }
    }
    for _ in 0..DRAWS {
        let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-10.0..10.0));
        let m: f64 = rng.gen_range(-3.0..3.0);
        let g = alpha[0].scale_re(p[0]) + alpha[1].scale_re(p[1]) + alpha[2].scale_re(p[2]) + beta.scale_re(m);
        let e = p.iter().map(|x| x * x).sum::<f64>() + m * m;
        dev = dev.max((g * g).max_abs_diff(&one4.scale_re(e)) / (1.0 + e));
    }
    ck.below("dirac_anticommutation", dev, 1e-11);

    // G(ξ)² = g(ξ)·1 for every model with a scalar square.
    let kinds = [ModelKind::Continuous, ModelKind::Fb, ModelKind::S, ModelKind::FbMod, ModelKind::SMod];
    let mut dev: f64 = 0.0;
    let mut eig_dev: f64 = 0.0;
    for draw in 0..DRAWS {
        let d = 1 + draw % 3;
        let m = rng.gen_range(0.0..2.0);
        let h = rng.gen_range(0.01..1.0);
        let kind = kinds[rng.gen_range(0..kinds.len())];
        let model = ModelId::new(kind, dim(d), m, kind.is_discrete().then_some(h))?;
        let reach = if kind.is_discrete() { PI / h } else { 20.0 };
        let xi: Vec<f64> = (0..d).map(|_| rng.gen_range(-reach..reach)).collect();
        let g = symbol(&model, &xi)?;
        if model.has_scalar_square() {
            let s = scalar_g(&model, &xi)?;
            dev = dev.max((g * g).max_abs_diff(&SymbolMatrix::identity(g.nu()).scale_re(s)) / (1.0 + s));
        } else {
            // Non-scalar squares: compare the closed-form extreme eigenvalues
            // of 1 + G² with a direct eigensolve.
            let (lo, hi) = squared_symbol_eigs(&model, &xi)?;
            let sq = SymbolMatrix::identity(4) + g * g;
            let eig = sq.hermitian_eigenvalues();
            eig_dev = eig_dev.max(((lo - eig[0]).abs() + (hi - eig[3]).abs()) / hi);
        }
    }
    ck.below("scalar_squares", dev, 1e-11);
    ck.below("fb3d_squared_eigenvalues", eig_dev, 1e-11);

    // (U·σ)(W·σ) = (U·W)·1 + i(U×W)·σ without conjugation.
    let mut dev: f64 = 0.0;
    for _ in 0..DRAWS {
        let u: [Complex64; 3] = std::array::from_fn(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let w: [Complex64; 3] = std::array::from_fn(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let dot = u[0] * w[0] + u[1] * w[1] + u[2] * w[2];
        let cross = [
            u[1] * w[2] - u[2] * w[1],
            u[2] * w[0] - u[0] * w[2],
            u[0] * w[1] - u[1] * w[0],
        ];
        let want = SymbolMatrix::scalar(2, dot) + sigma_dot(&cross).scale(I);
        dev = dev.max((sigma_dot(&u) * sigma_dot(&w)).max_abs_diff(&want));
    }
    ck.below("pauli_cross_identity", dev, 1e-11);

    // ‖G − i‖ = ‖G² + 1‖^{1/2} and ‖(G − i)^{-1}‖ = ‖(G² + 1)^{-1}‖^{1/2}.
    let mut dev: f64 = 0.0;
    for draw in 0..2 * DRAWS {
        let nu = if draw % 2 == 0 { 2 } else { 4 };
        let g = random_hermitian(&mut rng, nu, 3.0);
        let one = SymbolMatrix::identity(nu);
        let sq = g * g + one;
        let a = g.shift(-I).spectral_norm();
        let b = sq.spectral_norm().sqrt();
        dev = dev.max((a - b).abs() / b);
        let ra = g.resolvent(I)?.spectral_norm();
        let rb = sq.inverse()?.spectral_norm().sqrt();
        dev = dev.max((ra - rb).abs() / rb);
    }
    ck.below("cstar_norm_identities", dev, 1e-11);
    Ok(())
}

// ------------------------------------------------------------------ 2 and 4

/// Lattice models whose symbols converge to the continuum at rate h.
pub const CONVERGENT_MODELS: [(usize, ModelKind); 7] = [
    (1, ModelKind::Fb),
    (1, ModelKind::SMod),
    (1, ModelKind::FbMod),
    (2, ModelKind::SMod),
    (2, ModelKind::FbMod),
    (3, ModelKind::SMod),
    (3, ModelKind::FbMod),
];

fn symbol_slope(d: usize, kind: ModelKind, m: f64, z: Complex64, hs: &[f64]) -> Result<(f64, Vec<f64>)> {
    let family = ModelId::discrete(kind, dim(d), m, hs[0])?;
    let records = convergence_sweep(&family, z, hs, default_grid_n(dim(d)))?;
    let fit = fit_rate(&records)?;
    Ok((fit.slope, records.iter().map(|r| r.value).collect()))
}

fn symbol_rates(ck: &mut Checks) -> Result<()> {
    let hs = dyadic(4, 8);
    for (d, kind) in CONVERGENT_MODELS {
        for m in [0.0, 1.0] {
            let tag = format!("{kind} d={d} m={m}");
            let (slope, values) = symbol_slope(d, kind, m, I, &hs)?;
            ck.within(format!("{tag} slope"), slope, 0.9, 1.1);
            let tail = &values[values.len() - 3..];
            for w in tail.windows(2) {
                ck.within(format!("{tag} ratio"), w[1] / w[0], 0.45, 0.55);
            }
        }
    }
    Ok(())
}

fn uniformity_in_z(ck: &mut Checks) -> Result<()> {
    let hs = dyadic(4, 8);
    for (d, kind) in CONVERGENT_MODELS {
        for m in [0.0, 1.0] {
            let mut zs = vec![I, c(0.0, 2.0), c(1.0, 1.0), -I];
            if m > 0.0 {
                zs.push(c(m / 2.0, 0.0));
            }
            let slopes = zs
                .iter()
                .map(|&z| symbol_slope(d, kind, m, z, &hs).map(|s| s.0))
                .collect::<Result<Vec<f64>>>()?;
            let spread = slopes.iter().cloned().fold(f64::MIN, f64::max) - slopes.iter().cloned().fold(f64::MAX, f64::min);
            ck.below(format!("{kind} d={d} m={m} slope spread over z"), spread, 0.1);
        }
    }
    Ok(())
}

// ------------------------------------------------------------------ 3

/// Closed-form witness value at z = i.
pub fn witness_closed_form(d: usize, b_kind: ModelKind, m: f64, h: f64) -> f64 {
    let w = (1.0 + m * m).sqrt();
    match (d, b_kind) {
        (1, _) => 2.0 / ((w * w * h * h + 4.0).sqrt() * w),
        (2, ModelKind::SMod) => 8.0 / (w * (h * h + (8.0 + h * m).powi(2)).sqrt()),
        (2, _) => 4.0 / (w * (h * h + (4.0 + h * m).powi(2)).sqrt()),
        _ => (1.0 / w - h / (h * h + (m * h + 4.0).powi(2)).sqrt()).abs(),
    }
}

/// Witnessed pairs `(d, a, b)`.
pub const WITNESS_PAIRS: [(usize, ModelKind, ModelKind); 4] = [
    (1, ModelKind::Fb, ModelKind::S),
    (2, ModelKind::S, ModelKind::SMod),
    (2, ModelKind::Fb, ModelKind::FbMod),
    (3, ModelKind::Fb, ModelKind::FbMod),
];

fn nonconvergence_floors(ck: &mut Checks) -> Result<()> {
    let hs = dyadic(0, 8);
    for (d, ka, kb) in WITNESS_PAIRS {
        for m in [0.0, 1.0] {
            let tag = format!("({ka},{kb}) d={d} m={m}");
            let mut margin = f64::INFINITY;
            let mut form_dev: f64 = 0.0;
            let mut floor = f64::INFINITY;
            for &h in &hs {
                let a = ModelId::discrete(ka, dim(d), m, h)?;
                let b = ModelId::discrete(kb, dim(d), m, h)?;
                let rep = nonconvergence_witness(&a, &b, default_grid_n(dim(d)))?;
                let oracle = witness_closed_form(d, kb, m, h);
                margin = margin.min(rep.measured - oracle);
                form_dev = form_dev.max((rep.closed_form - oracle).abs());
                floor = floor.min(rep.measured);
                if d == 1 && m == 0.0 && h == 1.0 {
                    ck.at_most("1D m=0 h=1 closed form vs 2/sqrt(5)", (rep.closed_form - 2.0 / 5f64.sqrt()).abs(), 1e-12);
                }
                if d == 2 && kb == ModelKind::SMod && m == 0.0 && h == *hs.last().expect("nonempty") {
                    ck.at_most("2D s m=0 closed form at h=2^-8 vs limit 1", (rep.closed_form - 1.0).abs(), 1e-6);
                }
            }
            ck.at_least(format!("{tag} min(measured - closed form)"), margin, -1e-9);
            ck.at_most(format!("{tag} closed form vs oracle"), form_dev, 1e-12);
            if d == 3 && m == 0.0 {
                ck.at_least(format!("{tag} floor vs 1 - 17^-1/2"), floor, 1.0 - 17f64.powf(-0.5));
            }
        }
    }
    Ok(())
}

// ------------------------------------------------------------------ 5

fn embedding_identities(ck: &mut Checks) -> Result<()> {
    let hs = dyadic(3, 6);
    for (d, n, refinement) in [(1, 256, 8), (2, 64, 4), (3, 16, 4)] {
        for kind in [PairKind::OrthonormalSinc, PairKind::SmoothBiorthogonal] {
            let pair = build_pair(kind, dim(d));
            let tag = format!("{kind:?} d={d} n={n}");
            let mut kj: f64 = 0.0;
            let mut proj: f64 = 0.0;
            let mut j_norms = Vec::new();
            let mut k_norms = Vec::new();
            for (i, &h) in hs.iter().enumerate() {
                let lat = PeriodicLattice::new(dim(d), n, h)?;
                let u = LatticeField::random(lat, SEED + i as u64);
                let back = discretize_kh(&pair, &embed_jh(&pair, &u, refinement)?, h)?;
                kj = kj.max(back.sub(&u)?.norm() / u.norm());

                let fine = fine_grid_for(&lat, refinement)?;
                let f = FineGridFunction::from_spatial(&LatticeField::random(fine, SEED + 100 + i as u64));
                let p1 = embed_jh(&pair, &discretize_kh(&pair, &f, h)?, refinement)?;
                let p2 = embed_jh(&pair, &discretize_kh(&pair, &p1, h)?, refinement)?;
                proj = proj.max(p2.sub(&p1)?.norm() / p1.norm());

                j_norms.push(operator_norm_estimate(&EmbedMap::new(&pair, lat, refinement)?, 20, SEED)?);
                k_norms.push(operator_norm_estimate(&DiscretizeMap::new(&pair, lat, refinement)?, 20, SEED)?);
            }
            ck.at_most(format!("{tag} |K J u - u|/|u|"), kj, 1e-10);
            ck.at_most(format!("{tag} |(JK)^2 f - JK f|/|JK f|"), proj, 1e-10);
            for (name, norms) in [("J", &j_norms), ("K", &k_norms)] {
                let hi = norms.iter().cloned().fold(f64::MIN, f64::max);
                let lo = norms.iter().cloned().fold(f64::MAX, f64::min);
                ck.below(format!("{tag} relative variation of |{name}| over h"), (hi - lo) / hi, 0.05);
            }
            let jmax = j_norms.iter().cloned().fold(f64::MIN, f64::max);
            ck.at_most(format!("{tag} |J| vs bound"), jmax, pair.j_norm_bound() * (1.0 + 1e-9));
        }
    }
    Ok(())
}

// ------------------------------------------------------------------ 6

/// L² and H¹ gap series per probe over `hs` at fixed lattice size `n`.
#[allow(clippy::type_complexity)]
fn gap_series(
    pair_kind: PairKind,
    model: &ModelId,
    z: Complex64,
    hs: &[f64],
    n: usize,
    refinement: usize,
    probes: &[Option<Probe>],
) -> Result<Vec<(Vec<(f64, f64)>, Vec<(f64, f64)>)>> {
    let pair = build_pair(pair_kind, model.dim);
    let mut series = vec![(Vec::new(), Vec::new()); probes.len()];
    for &h in hs {
        let lattice_model = model.with_h(h)?;
        let fine = fine_grid_for(&PeriodicLattice::new(model.dim, n, h)?, refinement)?;
        for (slot, probe) in series.iter_mut().zip(probes) {
            let f = match probe {
                Some(p) => build_probe(*p, &fine, h, 7),
                None => doubler_packet(&lattice_model, &fine)?,
            };
            let gap = resolvent_gap_on_probe(&pair, &lattice_model, z, &f)?;
            slot.0.push((h, gap.l2));
            slot.1.push((h, gap.h1));
        }
    }
    Ok(series)
}

fn probe_name(p: &Option<Probe>) -> &'static str {
    p.map_or("doubler", |p| p.as_str())
}

fn operator_convergence(ck: &mut Checks) -> Result<()> {
    let hs = dyadic(3, 6);
    let all: Vec<Option<Probe>> = Probe::ALL.iter().copied().map(Some).collect();
    let scaled: Vec<Option<Probe>> = Probe::ALL.iter().copied().filter(|p| !p.is_h_independent()).map(Some).collect();
    let cases = [
        (1, ModelKind::Fb),
        (1, ModelKind::SMod),
        (1, ModelKind::FbMod),
        (2, ModelKind::SMod),
        (2, ModelKind::FbMod),
        (3, ModelKind::SMod),
        (3, ModelKind::FbMod),
    ];
    let start = Instant::now();
    let mut low_d_done = false;
    for (d, kind) in cases {
        if d == 3 && !low_d_done {
            ck.below("runtime_s for d <= 2", start.elapsed().as_secs_f64(), 120.0);
            low_d_done = true;
        }
        let (n, refinement, probes, lo, hi) = if d == 3 { (16, 4, &scaled, 0.8, 1.2) } else { (256, 8, &all, 0.85, 1.15) };
        for m in [0.0, 1.0] {
            for pair in [PairKind::SmoothBiorthogonal, PairKind::OrthonormalSinc] {
                let model = ModelId::discrete(kind, dim(d), m, hs[0])?;
                let series = gap_series(pair, &model, I, &hs, n, refinement, probes)?;
                for (p, (l2, _)) in probes.iter().zip(&series) {
                    let fit = fit_loglog(l2)?;
                    ck.within(format!("{kind} d={d} m={m} {pair:?} {} L2 slope", probe_name(p)), fit.slope, lo, hi);
                }
            }
        }
    }
    Ok(())
}

// ------------------------------------------------------------------ 7

/// Lower bound asserted for the composite norm at m = 0.
pub const COMPOSITE_FLOOR: f64 = 0.3;

fn sobolev_split(ck: &mut Checks) -> Result<()> {
    let hs = dyadic(3, 6);
    for (d, kind) in [(1, ModelKind::S), (2, ModelKind::S), (2, ModelKind::Fb)] {
        let tag = format!("{kind} d={d} m=0");
        let model = ModelId::discrete(kind, dim(d), 0.0, hs[0])?;
        let series = gap_series(PairKind::SmoothBiorthogonal, &model, I, &hs, 256, 8, &[None])?;
        let fit = fit_loglog(&series[0].1)?;
        ck.within(format!("{tag} doubler H1 slope"), fit.slope, 0.85, 1.2);

        // Calibration: the symbol-level gap stays near its closed-form limit 1.
        let cont = ModelId::continuous(dim(d), 0.0)?;
        let mut symbol_min = f64::INFINITY;
        for &h in &hs {
            let rec = sup_resolvent_difference(&model.with_h(h)?, &cont, I, default_grid_n(dim(d)))?;
            symbol_min = symbol_min.min(rec.value);
        }
        ck.at_least(format!("{tag} symbol sup gap"), symbol_min, 0.9);

        for pair_kind in [PairKind::SmoothBiorthogonal, PairKind::OrthonormalSinc] {
            let pair = build_pair(pair_kind, dim(d));
            let mut floor = f64::INFINITY;
            for &h in &hs {
                let lat = PeriodicLattice::new(dim(d), 32, h)?;
                let map = CompositeGapMap::new(&pair, &model.with_h(h)?, I, lat, 4)?;
                floor = floor.min(operator_norm_estimate(&map, 60, 1)?);
            }
            ck.at_least(format!("{tag} {pair_kind:?} composite L2 norm"), floor, COMPOSITE_FLOOR);
        }
    }
    Ok(())
}

// ------------------------------------------------------------------ 8

fn doubling_census(ck: &mut Checks) -> Result<()> {
    for d in 1..=3 {
        for h in [1.0, 1.0 / 16.0] {
            for (kind, want) in [(ModelKind::S, 1usize << d), (ModelKind::SMod, 1)] {
                let model = ModelId::discrete(kind, dim(d), 0.0, h)?;
                let zeros = symbol_zero_census(&model, default_grid_n(dim(d)), DEFAULT_ZERO_TOL)?;
                ck.equals(format!("{kind} d={d} h={h} zero count"), zeros.len(), want);
                // Every zero sits at hξ_j ∈ {0, ±π}; the modified model keeps only the origin.
                let off: f64 = zeros
                    .iter()
                    .flat_map(|z| z.iter())
                    .map(|&x| {
                        let t = (x * h).abs();
                        let nearest = if kind == ModelKind::SMod { 0.0 } else { (t / PI).round() * PI };
                        (t - nearest).abs()
                    })
                    .fold(0.0, f64::max);
                ck.at_most(format!("{kind} d={d} h={h} zero location error"), off, 1e-12);
            }
        }
    }
    Ok(())
}

// ------------------------------------------------------------------ 9

fn perturbed_rate(ck: &mut Checks) -> Result<()> {
    let one = dim(1);
    let sigma1 = pauli(1)?;
    let pair = build_pair(PairKind::SmoothBiorthogonal, one);
    let v = HolderPotential::tanh(one, 0.5, sigma1)?;
    let z = c(0.0, 2.0);
    let probes = [Probe::Gaussian, Probe::SmallPacket];
    let setup = SweepSetup::default();
    let tau = pair.tau(setup.box_side);
    let threshold = 0.8 * theta_prime(v.theta(), tau, 1)?;
    let hs = dyadic(2, 7);
    for m in [0.0, 1.0] {
        let model = ModelId::discrete(ModelKind::Fb, one, m, hs[0])?;
        let records = perturbed_convergence_sweep(&model, &v, &pair, z, &hs, &probes, &setup)?;
        let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.h, r.value)).collect();
        ck.at_least(format!("fb d=1 m={m} tanh slope vs 0.8 theta'"), fit_loglog(&pts)?.slope, threshold);
    }

    // V = 0 reduces to the free probe gaps on the same fine grid.
    let hs0 = dyadic(2, 4);
    let model = ModelId::discrete(ModelKind::Fb, one, 0.0, hs0[0])?;
    let records = perturbed_convergence_sweep(&model, &HolderPotential::zero(one), &pair, z, &hs0, &probes, &setup)?;
    let h_min = *hs0.last().expect("nonempty");
    let n = (setup.box_side / h_min) as usize * setup.refinement;
    let fine = PeriodicLattice::new(one, n, h_min / setup.refinement as f64)?;
    let mut dev: f64 = 0.0;
    for rec in &records {
        for pv in &rec.per_probe {
            let f = build_probe(pv.probe, &fine, rec.h, setup.seed);
            let free = resolvent_gap_on_probe(&pair, &model.with_h(rec.h)?, z, &f)?;
            dev = dev.max((pv.gap - free.l2).abs());
        }
    }
    ck.at_most("V = 0 sweep vs free probe gaps", dev, 1e-9);

    // A constant c·σ₃ is a mass shift m → m + c.
    let shift = 0.3;
    let lat = PeriodicLattice::new(one, 256, 1.0 / 8.0)?;
    let f = LatticeField::random(lat, SEED);
    let vc = HolderPotential::constant(one, pauli(3)?.scale_re(shift))?;
    let mut dev: f64 = 0.0;
    for m in [0.0, 1.0] {
        let model = ModelId::discrete(ModelKind::Fb, one, m, 1.0 / 8.0)?;
        let (u, _) = perturbed_resolvent(&model, &sample_potential(&vc, &lat)?, z, &f, 1e-12)?;
        let want = free_resolvent(&model.with_mass(m + shift)?, z, &f)?;
        dev = dev.max(u.sub(&want)?.norm() / want.norm());
    }
    ck.at_most("constant sigma3 potential vs shifted-mass free solve", dev, 1e-10);
    Ok(())
}

// ------------------------------------------------------------------ 10

fn lattice_correctness(ck: &mut Checks) -> Result<()> {
    let kinds = [ModelKind::Fb, ModelKind::S, ModelKind::FbMod, ModelKind::SMod];
    let mut stencil: f64 = 0.0;
    let mut adjoint: f64 = 0.0;
    let mut residual: f64 = 0.0;
    let mut identity: f64 = 0.0;
    for (d, n) in [(1usize, 64usize), (2, 32), (3, 8)] {
        let lat = PeriodicLattice::new(dim(d), n, 0.1)?;
        let u = LatticeField::random(lat, SEED);
        let w = LatticeField::random(lat, SEED + 1);
        for j in 0..d {
            let du = apply_difference(DifferenceOp::Forward(j), &u)?;
            let dw = apply_difference(DifferenceOp::Backward(j), &w)?;
            let lhs = du.inner(&w)?;
            let rhs = u.inner(&dw)?;
            adjoint = adjoint.max((lhs - rhs).norm() / (du.norm() * w.norm()));
        }
        for kind in kinds {
            for m in [0.0, 1.0] {
                let model = ModelId::discrete(kind, dim(d), m, 0.1)?;
                let a = apply_free_dirac(&model, &u)?;
                let b = apply_free_dirac_spectral(&model, &u)?;
                stencil = stencil.max(a.sub(&b)?.norm() / a.norm());
                let mut zs = vec![I, c(0.0, 2.0), c(1.0, 1.0), c(-1.0, -0.5)];
                if m > 0.0 {
                    zs.push(c(m / 2.0, 0.0));
                }
                for &z in &zs {
                    let r = free_resolvent(&model, z, &u)?;
                    let back = apply_free_dirac(&model, &r)?.axpy(-z, &r)?;
                    residual = residual.max(back.sub(&u)?.norm() / u.norm());
                }
                let (z1, z2) = (I, c(1.0, 2.0));
                let r1 = free_resolvent(&model, z1, &u)?;
                let r2 = free_resolvent(&model, z2, &u)?;
                let r12 = free_resolvent(&model, z1, &r2)?;
                let diff = r1.sub(&r2)?.axpy(-(z1 - z2), &r12)?;
                identity = identity.max(diff.norm() / u.norm());
            }
        }
    }
    ck.at_most("stencil vs multiplier", stencil, 1e-11);
    ck.at_most("(D+)* = D-", adjoint, 1e-12);
    ck.at_most("resolvent residual", residual, 1e-10);
    ck.at_most("first resolvent identity", identity, 1e-10);
    Ok(())
}
