//! Fourier symbols of the continuous and lattice Dirac operators.
//!
//! Every symbol is evaluated in closed form at a single momentum. Lattice
//! symbols are built from the difference-operator symbols
//!
//! * forward  `S⁺(ξ) = (e^{ihξ} − 1)/(ih)`
//! * backward `S⁻(ξ) = conj(S⁺(ξ))`
//! * symmetric `sin(hξ)/h`
//!
//! and the modified kinds add `f_h(ξ) = Σ_j (4/h) sin²(hξ_j/2)` to the mass
//! on the upper diagonal block and subtract it on the lower one.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DiracError, Result};
use crate::linalg::{SymbolMatrix, I, ONE, ZERO};

/// Spatial dimension of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimension {
    One,
    Two,
    Three,
}

impl Dimension {
    pub fn from_d(d: usize) -> Result<Self> {
        match d {
            1 => Ok(Dimension::One),
            2 => Ok(Dimension::Two),
            3 => Ok(Dimension::Three),
            _ => invalid(format!("dimension must be 1, 2 or 3, got {d}")),
        }
    }

    #[inline]
    pub fn d(self) -> usize {
        match self {
            Dimension::One => 1,
            Dimension::Two => 2,
            Dimension::Three => 3,
        }
    }

    /// Number of spinor components: 2 for d ≤ 2 and 4 for d = 3.
    #[inline]
    pub fn nu(self) -> usize {
        match self {
            Dimension::Three => 4,
            _ => 2,
        }
    }
}

/// Operator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Continuous,
    /// Forward differences below the diagonal, backward above.
    Fb,
    /// Symmetric differences.
    S,
    /// `Fb` with the `∓hΔ_h` mass modification.
    FbMod,
    /// `S` with the `∓hΔ_h` mass modification.
    SMod,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Continuous,
        ModelKind::Fb,
        ModelKind::S,
        ModelKind::FbMod,
        ModelKind::SMod,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Continuous => "continuous",
            ModelKind::Fb => "fb",
            ModelKind::S => "s",
            ModelKind::FbMod => "fb_mod",
            ModelKind::SMod => "s_mod",
        }
    }

    pub fn is_discrete(self) -> bool {
        self != ModelKind::Continuous
    }

    pub fn is_modified(self) -> bool {
        matches!(self, ModelKind::FbMod | ModelKind::SMod)
    }

    pub fn is_forward_backward(self) -> bool {
        matches!(self, ModelKind::Fb | ModelKind::FbMod)
    }

    /// The same scheme without the mass modification.
    pub fn unmodified(self) -> Self {
        match self {
            ModelKind::FbMod => ModelKind::Fb,
            ModelKind::SMod => ModelKind::S,
            k => k,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = DiracError;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                DiracError::InvalidArgument(format!(
                    "unknown model '{s}' (expected continuous, fb, s, fb_mod or s_mod)"
                ))
            })
    }
}

/// A fully specified free Dirac operator: family, dimension, mass and mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelId {
    pub kind: ModelKind,
    pub dim: Dimension,
    pub mass: f64,
    /// Mesh size; `None` exactly when `kind` is continuous.
    pub h: Option<f64>,
}

impl ModelId {
    /// Validating constructor. `h` must be `Some(h > 0)` for lattice kinds and
    /// `None` for the continuous kind.
    pub fn new(kind: ModelKind, dim: Dimension, mass: f64, h: Option<f64>) -> Result<Self> {
        if !(mass.is_finite() && mass >= 0.0) {
            return invalid(format!("mass must be finite and >= 0, got {mass}"));
        }
        match (kind.is_discrete(), h) {
            (true, Some(h)) if h.is_finite() && h > 0.0 => {}
            (true, Some(h)) => return invalid(format!("mesh size must be > 0, got {h}")),
            (true, None) => return invalid(format!("model '{kind}' requires a mesh size")),
            (false, Some(_)) => return invalid("the continuous model takes no mesh size"),
            (false, None) => {}
        }
        Ok(ModelId { kind, dim, mass, h })
    }

    pub fn continuous(dim: Dimension, mass: f64) -> Result<Self> {
        Self::new(ModelKind::Continuous, dim, mass, None)
    }

    pub fn discrete(kind: ModelKind, dim: Dimension, mass: f64, h: f64) -> Result<Self> {
        Self::new(kind, dim, mass, Some(h))
    }

    /// Same family and mass at a different mesh size.
    pub fn with_h(&self, h: f64) -> Result<Self> {
        Self::new(self.kind, self.dim, self.mass, Some(h))
    }

    pub fn with_mass(&self, mass: f64) -> Result<Self> {
        Self::new(self.kind, self.dim, mass, self.h)
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.dim.d()
    }

    #[inline]
    pub fn nu(&self) -> usize {
        self.dim.nu()
    }

    /// Whether `G(ξ)² = g(ξ)·1` holds for this model.
    pub fn has_scalar_square(&self) -> bool {
        !(self.dim == Dimension::Three && self.kind.is_forward_backward())
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (d={}, m={}", self.kind, self.d(), self.mass)?;
        if let Some(h) = self.h {
            write!(f, ", h={h}")?;
        }
        f.write_str(")")
    }
}

/// Pads a momentum slice into a fixed array after checking its length.
pub(crate) fn momentum(dim: Dimension, xi: &[f64]) -> Result<[f64; 3]> {
    if xi.len() != dim.d() {
        return Err(DiracError::DimensionMismatch {
            expected: dim.d(),
            got: xi.len(),
        });
    }
    let mut out = [0.0; 3];
    out[..xi.len()].copy_from_slice(xi);
    Ok(out)
}

/// Symbol of the forward difference, `(e^{iθ} − 1)/(ih)` with `θ = hξ`.
/// Written as `(sin θ + 2i sin²(θ/2))/h` to avoid cancellation for small θ.
#[inline]
pub fn forward_symbol(h: f64, xi: f64) -> Complex64 {
    let t = h * xi;
    let s = (0.5 * t).sin();
    Complex64::new(t.sin(), 2.0 * s * s) / h
}

/// Symbol of the backward difference, the complex conjugate of the forward one.
#[inline]
pub fn backward_symbol(h: f64, xi: f64) -> Complex64 {
    forward_symbol(h, xi).conj()
}

/// Symbol of the symmetric difference, `sin(hξ)/h`.
#[inline]
pub fn symmetric_symbol(h: f64, xi: f64) -> f64 {
    (h * xi).sin() / h
}

/// Symbol of `−Δ_h`, `Σ_j (4/h²) sin²(hξ_j/2)`.
pub fn laplacian_symbol(h: f64, xi: &[f64]) -> f64 {
    xi.iter()
        .map(|&x| {
            let s = (0.5 * h * x).sin();
            4.0 * s * s
        })
        .sum::<f64>()
        / (h * h)
}

/// Mass modification `f_h(ξ) = Σ_j (4/h) sin²(hξ_j/2) = h·(symbol of −Δ_h)`.
pub fn f_mod(dim: Dimension, h: f64, xi: &[f64]) -> Result<f64> {
    if !(h.is_finite() && h > 0.0) {
        return invalid(format!("mesh size must be > 0, got {h}"));
    }
    let xi = momentum(dim, xi)?;
    Ok(f_mod_fixed(dim.d(), h, &xi))
}

#[inline]
pub(crate) fn f_mod_fixed(d: usize, h: f64, xi: &[f64; 3]) -> f64 {
    let mut acc = 0.0;
    for &x in &xi[..d] {
        let s = (0.5 * h * x).sin();
        acc += s * s;
    }
    4.0 * acc / h
}

/// The Pauli matrix `σ_j`, `j ∈ {1, 2, 3}`.
pub fn pauli(j: usize) -> Result<SymbolMatrix> {
    let m = match j {
        1 => [ZERO, ONE, ONE, ZERO],
        2 => [ZERO, -I, I, ZERO],
        3 => [ONE, ZERO, ZERO, -ONE],
        _ => return invalid(format!("Pauli index must be 1, 2 or 3, got {j}")),
    };
    SymbolMatrix::from_row_major(2, &m)
}

/// `V·σ = Σ_j V_j σ_j` for a complex 3-vector (no conjugation).
pub fn sigma_dot(v: &[Complex64; 3]) -> SymbolMatrix {
    let mut m = SymbolMatrix::zeros(2);
    m.set(0, 0, v[2]);
    m.set(0, 1, v[0] - I * v[1]);
    m.set(1, 0, v[0] + I * v[1]);
    m.set(1, 1, -v[2]);
    m
}

/// Dirac matrices in the standard representation:
/// `β = diag(1, 1, −1, −1)` and `α_j = [[0, σ_j], [σ_j, 0]]`.
pub fn dirac_matrices() -> ([SymbolMatrix; 3], SymbolMatrix) {
    let zero = SymbolMatrix::zeros(2);
    let one = SymbolMatrix::identity(2);
    let alpha = [1, 2, 3].map(|j| {
        let s = pauli(j).expect("valid Pauli index");
        SymbolMatrix::from_blocks(&zero, &s, &s, &zero)
    });
    let beta = SymbolMatrix::from_blocks(&one, &zero, &zero, &(-one));
    (alpha, beta)
}

/// `[[μ, conj(a)], [a, −μ]]`.
#[inline]
fn two_by_two(mu: f64, a: Complex64) -> SymbolMatrix {
    let mut g = SymbolMatrix::zeros(2);
    g.set(0, 0, Complex64::new(mu, 0.0));
    g.set(0, 1, a.conj());
    g.set(1, 0, a);
    g.set(1, 1, Complex64::new(-mu, 0.0));
    g
}

/// `[[μ·1, A·σ], [B·σ, −μ·1]]`.
#[inline]
fn four_by_four(mu: f64, upper: &[Complex64; 3], lower: &[Complex64; 3]) -> SymbolMatrix {
    let m = Complex64::new(mu, 0.0);
    let mass = SymbolMatrix::scalar(2, m);
    SymbolMatrix::from_blocks(&mass, &sigma_dot(upper), &sigma_dot(lower), &(-mass))
}

/// Diagonal coefficient `m + f_h(ξ)` (or `m`) and the off-diagonal momentum data.
struct SymbolParts {
    mu: f64,
    /// `B` vector of the lower-left block (d = 3), or `a` in `a[0]` (d ≤ 2).
    lower: [Complex64; 3],
    /// `A` vector of the upper-right block (d = 3 only).
    upper: [Complex64; 3],
}

fn symbol_parts(model: &ModelId, xi: &[f64; 3]) -> SymbolParts {
    let d = model.d();
    let h = model.h.unwrap_or(1.0);
    let mu = if model.kind.is_modified() {
        model.mass + f_mod_fixed(d, h, xi)
    } else {
        model.mass
    };
    let mut lower = [ZERO; 3];
    let mut upper = [ZERO; 3];
    match model.kind {
        ModelKind::Continuous => {
            for j in 0..d {
                lower[j] = Complex64::new(xi[j], 0.0);
            }
            upper = lower;
        }
        ModelKind::S | ModelKind::SMod => {
            for j in 0..d {
                lower[j] = Complex64::new(symmetric_symbol(h, xi[j]), 0.0);
            }
            upper = lower;
        }
        ModelKind::Fb | ModelKind::FbMod => {
            for j in 0..d {
                lower[j] = forward_symbol(h, xi[j]);
                upper[j] = lower[j].conj();
            }
        }
    }
    if d <= 2 {
        // a = B_1 + i B_2, the lower-left entry of the 2×2 symbol.
        let a = lower[0] + I * lower[1];
        lower = [a, ZERO, ZERO];
    }
    SymbolParts { mu, lower, upper }
}

/// Symbol at a fixed-size momentum; the caller guarantees the length.
pub(crate) fn symbol_fixed(model: &ModelId, xi: &[f64; 3]) -> SymbolMatrix {
    let p = symbol_parts(model, xi);
    if model.d() <= 2 {
        two_by_two(p.mu, p.lower[0])
    } else {
        four_by_four(p.mu, &p.upper, &p.lower)
    }
}

/// Symbol `G_0(ξ)` of the continuous operator.
pub fn continuous_symbol(model: &ModelId, xi: &[f64]) -> Result<SymbolMatrix> {
    if model.kind != ModelKind::Continuous {
        return invalid(format!("continuous_symbol called with model '{}'", model.kind));
    }
    let xi = momentum(model.dim, xi)?;
    Ok(symbol_fixed(model, &xi))
}

/// Symbol of a lattice model. Periodic with period `2π/h` in every component.
pub fn discrete_symbol(model: &ModelId, xi: &[f64]) -> Result<SymbolMatrix> {
    if !model.kind.is_discrete() {
        return invalid("discrete_symbol requires a lattice model");
    }
    let xi = momentum(model.dim, xi)?;
    Ok(symbol_fixed(model, &xi))
}

/// Symbol of any model, continuous or lattice.
pub fn symbol(model: &ModelId, xi: &[f64]) -> Result<SymbolMatrix> {
    let xi = momentum(model.dim, xi)?;
    Ok(symbol_fixed(model, &xi))
}

/// The scalar `g(ξ)` with `G(ξ)² = g(ξ)·1`.
///
/// Defined for every model except the forward-backward kinds in d = 3, whose
/// squares are not scalar (see [`squared_symbol_eigs`]).
pub fn scalar_g(model: &ModelId, xi: &[f64]) -> Result<f64> {
    if !model.has_scalar_square() {
        return Err(DiracError::UnsupportedModel(format!(
            "{} has no scalar square in d = 3; use squared_symbol_eigs",
            model.kind
        )));
    }
    let xi = momentum(model.dim, xi)?;
    Ok(scalar_g_fixed(model, &xi))
}

pub(crate) fn scalar_g_fixed(model: &ModelId, xi: &[f64; 3]) -> f64 {
    let p = symbol_parts(model, xi);
    let off = if model.d() <= 2 {
        p.lower[0].norm_sqr()
    } else {
        p.lower.iter().map(|c| c.norm_sqr()).sum()
    };
    p.mu * p.mu + off
}

/// Smallest and largest eigenvalue of `1 + G(ξ)²`.
///
/// For the d = 3 forward-backward kinds the upper block of `G²` is
/// `μ² + |S⁻|² + i(S⁻ × conj S⁻)·σ`, whose eigenvalues are
/// `μ² + |S⁻|² ± |S⁻ × conj S⁻|`. Every other model has a scalar square and
/// returns `(1 + g, 1 + g)`.
pub fn squared_symbol_eigs(model: &ModelId, xi: &[f64]) -> Result<(f64, f64)> {
    let xi = momentum(model.dim, xi)?;
    Ok(squared_symbol_eigs_fixed(model, &xi))
}

pub(crate) fn squared_symbol_eigs_fixed(model: &ModelId, xi: &[f64; 3]) -> (f64, f64) {
    if model.has_scalar_square() {
        let g = 1.0 + scalar_g_fixed(model, xi);
        return (g, g);
    }
    let p = symbol_parts(model, xi);
    let s = p.upper;
    let sbar = [s[0].conj(), s[1].conj(), s[2].conj()];
    let cross = [
        s[1] * sbar[2] - s[2] * sbar[1],
        s[2] * sbar[0] - s[0] * sbar[2],
        s[0] * sbar[1] - s[1] * sbar[0],
    ];
    let cross_norm = cross.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let base = 1.0 + p.mu * p.mu + s.iter().map(|c| c.norm_sqr()).sum::<f64>();
    (base - cross_norm, base + cross_norm)
}

/// `(G − z·1)^{-1}`. Fails with a singular-matrix error when `z` is an
/// eigenvalue of `G`.
pub fn resolvent_at(g: &SymbolMatrix, z: Complex64) -> Result<SymbolMatrix> {
    g.resolvent(z)
}

/// Spectral norm (largest singular value).
pub fn matrix_norm(m: &SymbolMatrix) -> f64 {
    m.spectral_norm()
}

/// `(G(ξ) − z)^{-1}` at a fixed-size momentum, via `(G + z)/(g − z²)` when
/// the square is scalar and by elimination otherwise.
pub(crate) fn resolvent_fixed(model: &ModelId, xi: &[f64; 3], z: Complex64) -> Result<SymbolMatrix> {
    let g = symbol_fixed(model, xi);
    if model.has_scalar_square() {
        let s = scalar_g_fixed(model, xi);
        let denom = s - z * z;
        if denom.norm() <= 1e-14 * (s + z.norm_sqr()).max(f64::MIN_POSITIVE) {
            return Err(DiracError::Singular {
                momentum: Some(xi[..model.d()].to_vec()),
            });
        }
        return Ok(g.shift(z).scale(denom.inv()));
    }
    g.resolvent(z).map_err(|e| match e {
        DiracError::Singular { .. } => DiracError::Singular {
            momentum: Some(xi[..model.d()].to_vec()),
        },
        other => other,
    })
}

/// `‖(G(ξ) − z)^{-1}‖` at a fixed-size momentum. Uses `‖(G − i)^{-1}‖ =
/// λ_min(1 + G²)^{-1/2}` for `z = i` and falls back to explicit inversion.
pub(crate) fn resolvent_norm_fixed(model: &ModelId, xi: &[f64; 3], z: Complex64) -> Result<f64> {
    if z == I {
        let (lmin, _) = squared_symbol_eigs_fixed(model, xi);
        return Ok(lmin.sqrt().recip());
    }
    Ok(symbol_fixed(model, xi).resolvent(z)?.spectral_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn model(kind: ModelKind, d: usize, m: f64, h: f64) -> ModelId {
        let dim = Dimension::from_d(d).unwrap();
        if kind == ModelKind::Continuous {
            ModelId::continuous(dim, m).unwrap()
        } else {
            ModelId::discrete(kind, dim, m, h).unwrap()
        }
    }

    #[test]
    fn pauli_values_and_commutator() {
        let s1 = pauli(1).unwrap();
        let s2 = pauli(2).unwrap();
        let s3 = pauli(3).unwrap();
        assert_eq!(s1.get(0, 1), ONE);
        assert_eq!(s1.get(0, 0), ZERO);
        assert!((s3 * s3).max_abs_diff(&SymbolMatrix::identity(2)) == 0.0);
        let comm = s1 * s2 - s2 * s1;
        assert!(comm.max_abs_diff(&s3.scale(c(0.0, 2.0))) == 0.0);
        assert!(pauli(0).is_err());
        assert!(pauli(4).is_err());
    }

    #[test]
    fn dirac_relations() {
        let (alpha, beta) = dirac_matrices();
        let id = SymbolMatrix::identity(4);
        assert_eq!((beta * beta).max_abs_diff(&id), 0.0);
        for j in 0..3 {
            for k in 0..3 {
                let ac = alpha[j] * alpha[k] + alpha[k] * alpha[j];
                let want = if j == k { id.scale_re(2.0) } else { SymbolMatrix::zeros(4) };
                assert_eq!(ac.max_abs_diff(&want), 0.0);
            }
            let ab = alpha[j] * beta + beta * alpha[j];
            assert_eq!(ab.max_abs_diff(&SymbolMatrix::zeros(4)), 0.0);
        }
        // α_3 has σ_3 in the off-diagonal blocks.
        assert_eq!(alpha[2].get(0, 2), ONE);
        assert_eq!(alpha[2].get(1, 3), -ONE);
        assert_eq!(alpha[2].get(2, 0), ONE);
    }

    #[test]
    fn continuous_examples() {
        let g = continuous_symbol(&model(ModelKind::Continuous, 1, 0.0, 1.0), &[1.0]).unwrap();
        assert_eq!(g.max_abs_diff(&pauli(1).unwrap()), 0.0);
        let g = continuous_symbol(&model(ModelKind::Continuous, 2, 1.0, 1.0), &[0.0, 0.0]).unwrap();
        assert_eq!(g.max_abs_diff(&pauli(3).unwrap()), 0.0);
        let g = continuous_symbol(&model(ModelKind::Continuous, 3, 0.0, 1.0), &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!((g * g).max_abs_diff(&SymbolMatrix::identity(4)), 0.0);
        assert!(continuous_symbol(&model(ModelKind::Continuous, 2, 0.0, 1.0), &[1.0]).is_err());
        assert!(continuous_symbol(&model(ModelKind::S, 2, 0.0, 1.0), &[1.0, 0.0]).is_err());
    }

    #[test]
    fn forward_symbol_matches_exponential_form() {
        for &(h, xi) in &[(0.1, 3.0), (1.0, PI), (0.01, -7.5), (0.5, 1e-6)] {
            let direct = (Complex64::new(0.0, h * xi).exp() - 1.0) / Complex64::new(0.0, h);
            assert!((forward_symbol(h, xi) - direct).norm() < 1e-12 * (1.0 + direct.norm()));
        }
    }

    #[test]
    fn fb_1d_matches_definition() {
        // G = [[m, −(e^{−ihξ}−1)/(ih)], [(e^{ihξ}−1)/(ih), −m]]
        let (h, m, xi) = (0.3, 0.7, 2.1);
        let g = discrete_symbol(&model(ModelKind::Fb, 1, m, h), &[xi]).unwrap();
        let ih = Complex64::new(0.0, h);
        let up = -(Complex64::new(0.0, -h * xi).exp() - 1.0) / ih;
        let lo = (Complex64::new(0.0, h * xi).exp() - 1.0) / ih;
        assert!((g.get(0, 1) - up).norm() < 1e-14);
        assert!((g.get(1, 0) - lo).norm() < 1e-14);
        assert_eq!(g.get(0, 0), c(m, 0.0));
    }

    #[test]
    fn fb_2d_matches_definition() {
        let (h, m) = (0.25, 1.0);
        let xi = [1.3, -2.2];
        let g = discrete_symbol(&model(ModelKind::Fb, 2, m, h), &xi).unwrap();
        let ih = Complex64::new(0.0, h);
        let e = |t: f64| Complex64::new(0.0, t).exp();
        let up = -(e(-h * xi[0]) - 1.0) / ih + (e(-h * xi[1]) - 1.0) / h;
        let lo = (e(h * xi[0]) - 1.0) / ih + (e(h * xi[1]) - 1.0) / h;
        assert!((g.get(0, 1) - up).norm() < 1e-13);
        assert!((g.get(1, 0) - lo).norm() < 1e-13);
    }

    #[test]
    fn fb_1d_zone_edge_entry() {
        let h = 0.125;
        let g = discrete_symbol(&model(ModelKind::Fb, 1, 0.0, h), &[PI / h]).unwrap();
        assert!((g.get(0, 1).norm() - 2.0 / h).abs() < 1e-12);
        assert!((g.get(1, 0).norm() - 2.0 / h).abs() < 1e-12);
    }

    #[test]
    fn s_mod_zero_at_origin() {
        let g = discrete_symbol(&model(ModelKind::SMod, 2, 0.0, 0.1), &[0.0, 0.0]).unwrap();
        assert_eq!(g.frobenius_norm(), 0.0);
    }

    #[test]
    fn scalar_g_examples() {
        assert_eq!(scalar_g(&model(ModelKind::S, 2, 1.0, 0.5), &[0.0, 0.0]).unwrap(), 1.0);
        for &m in &[0.0, 1.0, 2.5] {
            let h = 0.2;
            let g = scalar_g(&model(ModelKind::Fb, 2, m, h), &[PI / (2.0 * h), -PI / (2.0 * h)]).unwrap();
            assert!((g - m * m).abs() < 1e-12 * (1.0 + 1.0 / (h * h)), "{g}");
        }
        // 1D s_mod at hξ = π: μ = 4/h, sine term vanishes.
        let h = 0.5;
        let md = model(ModelKind::SMod, 1, 0.0, h);
        let g = scalar_g(&md, &[PI / h]).unwrap();
        let sym = discrete_symbol(&md, &[PI / h]).unwrap();
        let sq = (sym * sym).get(0, 0).re;
        assert!((g - sq).abs() < 1e-12 * g);
        assert!((g - (4.0 / h).powi(2)).abs() < 1e-10);
        assert!(matches!(
            scalar_g(&model(ModelKind::FbMod, 3, 0.0, 0.1), &[0.0; 3]),
            Err(DiracError::UnsupportedModel(_))
        ));
    }

    #[test]
    fn f_mod_examples() {
        let h = 0.1;
        let two = Dimension::Two;
        assert!((f_mod(two, h, &[PI / h, PI / h]).unwrap() - 8.0 / h).abs() < 1e-10);
        assert!((f_mod(two, h, &[PI / (2.0 * h), -PI / (2.0 * h)]).unwrap() - 4.0 / h).abs() < 1e-10);
        assert_eq!(f_mod(Dimension::Three, h, &[0.0; 3]).unwrap(), 0.0);
        assert!(f_mod(two, -1.0, &[0.0, 0.0]).is_err());
        // f_h = h · symbol(−Δ_h)
        let xi = [0.7, -3.0];
        assert!((f_mod(two, h, &xi).unwrap() - h * laplacian_symbol(h, &xi)).abs() < 1e-12);
    }

    #[test]
    fn fb_2d_scalar_square_matches_closed_form() {
        // g^fb = m² + (4/h²)sin²(hξ1/2) + (4/h²)sin²(hξ2/2)
        //        + (2/h²)[sin(h(ξ1−ξ2)) − sin(hξ1) + sin(hξ2)]
        for &(h, m, x1, x2) in &[(0.3, 1.0, 1.0, -2.0), (1.0, 0.0, 2.5, 0.4), (0.05, 2.0, 40.0, -11.0)] {
            let s = |t: f64| t.sin();
            let closed = m * m
                + 4.0 / (h * h) * s(h * x1 / 2.0).powi(2)
                + 4.0 / (h * h) * s(h * x2 / 2.0).powi(2)
                + 2.0 / (h * h) * (s(h * (x1 - x2)) - s(h * x1) + s(h * x2));
            let g = scalar_g(&model(ModelKind::Fb, 2, m, h), &[x1, x2]).unwrap();
            assert!((g - closed).abs() < 1e-11 * (1.0 + closed), "{g} vs {closed}");
            let f = f_mod(Dimension::Two, h, &[x1, x2]).unwrap();
            let gt = scalar_g(&model(ModelKind::FbMod, 2, m, h), &[x1, x2]).unwrap();
            let closed_mod = closed - m * m + (m + f).powi(2);
            assert!((gt - closed_mod).abs() < 1e-11 * (1.0 + closed_mod));
        }
    }

    #[test]
    fn fb3d_eigs_at_witness_point() {
        for &m in &[0.0, 1.0] {
            for &h in &[1.0, 0.25] {
                let xi = [PI / (2.0 * h), -PI / (2.0 * h), 0.0];
                let (lmin, _) = squared_symbol_eigs(&model(ModelKind::Fb, 3, m, h), &xi).unwrap();
                assert!((lmin - (1.0 + m * m)).abs() < 1e-10 / (h * h));
                let (lmin, _) = squared_symbol_eigs(&model(ModelKind::FbMod, 3, m, h), &xi).unwrap();
                let want = 1.0 + (m + 4.0 / h).powi(2);
                assert!((lmin - want).abs() < 1e-12 * want);
            }
        }
        let (a, b) = squared_symbol_eigs(&model(ModelKind::Fb, 3, 1.5, 0.1), &[0.0; 3]).unwrap();
        assert_eq!((a, b), (1.0 + 2.25, 1.0 + 2.25));
    }

    #[test]
    fn resolvent_examples() {
        let s3 = pauli(3).unwrap();
        let r = resolvent_at(&s3, I).unwrap();
        assert!((matrix_norm(&r) - 0.5f64.sqrt()).abs() < 1e-15);
        let g0 = continuous_symbol(&model(ModelKind::Continuous, 1, 0.0, 1.0), &[1.0]).unwrap();
        let r = resolvent_at(&g0, I).unwrap();
        assert!((matrix_norm(&r) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(resolvent_at(&s3, c(-1.0, 0.0)), Err(DiracError::Singular { .. })));
    }

    #[test]
    fn matrix_norm_examples() {
        assert_eq!(matrix_norm(&SymbolMatrix::identity(2)), 1.0);
        let m = pauli(1).unwrap() + pauli(3).unwrap();
        assert!((matrix_norm(&m) - 2f64.sqrt()).abs() < 1e-15);
        // Difference of fb and s resolvents at hξ = π, d = 1, m = 0, h = 1.
        let fb = discrete_symbol(&model(ModelKind::Fb, 1, 0.0, 1.0), &[PI]).unwrap();
        let s = discrete_symbol(&model(ModelKind::S, 1, 0.0, 1.0), &[PI]).unwrap();
        let diff = resolvent_at(&fb, I).unwrap() - resolvent_at(&s, I).unwrap();
        assert!((matrix_norm(&diff) - 2.0 / 5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn model_validation() {
        let two = Dimension::Two;
        assert!(ModelId::new(ModelKind::S, two, 0.0, None).is_err());
        assert!(ModelId::new(ModelKind::S, two, 0.0, Some(0.0)).is_err());
        assert!(ModelId::new(ModelKind::S, two, -1.0, Some(0.1)).is_err());
        assert!(ModelId::new(ModelKind::Continuous, two, 0.0, Some(0.1)).is_err());
        assert!(Dimension::from_d(4).is_err());
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("wilson".parse::<ModelKind>().is_err());
    }

    #[test]
    fn resolvent_norm_fast_path_agrees() {
        let z_i = I;
        for kind in ModelKind::ALL {
            for d in 1..=3 {
                let md = model(kind, d, 0.5, 0.2);
                let xi = [3.0, -7.0, 11.0];
                let fast = resolvent_norm_fixed(&md, &xi, z_i).unwrap();
                let slow = symbol_fixed(&md, &xi).resolvent(z_i).unwrap().spectral_norm();
                assert!((fast - slow).abs() < 1e-12, "{kind} d={d}: {fast} vs {slow}");
                for z in [I, Complex64::new(0.3, -2.0), Complex64::new(0.25, 0.0)] {
                    let a = resolvent_fixed(&md, &xi, z).unwrap();
                    let b = symbol_fixed(&md, &xi).shift(-z).inverse().unwrap();
                    assert!(a.max_abs_diff(&b) < 1e-13, "{kind} d={d} z={z}");
                }
            }
        }
    }
}
