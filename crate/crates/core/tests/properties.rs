//! Property tests for symbol and lattice invariants.

use std::f64::consts::PI;

use dirac_lattice::lattice::{
    apply_free_dirac, apply_free_dirac_spectral, free_resolvent, snapshot, LatticeField, PeriodicLattice,
};
use dirac_lattice::symbols::{
    scalar_g, sigma_dot, squared_symbol_eigs, symbol, Dimension, ModelId, ModelKind,
};
use dirac_lattice::SymbolMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = ModelKind> {
    prop_oneof![
        Just(ModelKind::Fb),
        Just(ModelKind::S),
        Just(ModelKind::FbMod),
        Just(ModelKind::SMod),
    ]
}

fn dim() -> impl Strategy<Value = Dimension> {
    (1usize..=3).prop_map(|d| Dimension::from_d(d).unwrap())
}

fn complex3() -> impl Strategy<Value = [Complex64; 3]> {
    prop::array::uniform3((-5.0..5.0f64, -5.0..5.0f64).prop_map(|(a, b)| Complex64::new(a, b)))
}

fn hermitian(nu: usize) -> impl Strategy<Value = SymbolMatrix> {
    prop::collection::vec((-4.0..4.0f64, -4.0..4.0f64), nu * nu).prop_map(move |e| {
        let entries: Vec<Complex64> = e.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
        let a = SymbolMatrix::from_row_major(nu, &entries).unwrap();
        (a + a.adjoint()).scale_re(0.5)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lattice_symbols_are_hermitian(
        kind in kind(), dim in dim(), m in 0.0..3.0f64, h in 0.01..1.0f64,
        t in prop::array::uniform3(-1.0..1.0f64),
    ) {
        let model = ModelId::discrete(kind, dim, m, h).unwrap();
        let xi: Vec<f64> = t[..dim.d()].iter().map(|s| s * PI / h).collect();
        let g = symbol(&model, &xi).unwrap();
        let scale = 1.0 + g.frobenius_norm();
        prop_assert!(g.hermiticity_defect() <= 1e-14 * scale);
    }

    #[test]
    fn symbols_are_periodic(
        kind in kind(), dim in dim(), m in 0.0..3.0f64, h in 0.05..1.0f64,
        t in prop::array::uniform3(-1.0..1.0f64), axis in 0usize..3,
    ) {
        let model = ModelId::discrete(kind, dim, m, h).unwrap();
        let d = dim.d();
        let xi: Vec<f64> = t[..d].iter().map(|s| s * PI / h).collect();
        let mut shifted = xi.clone();
        shifted[axis % d] += 2.0 * PI / h;
        let a = symbol(&model, &xi).unwrap();
        let b = symbol(&model, &shifted).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-9 * (1.0 + a.frobenius_norm()));
    }

    #[test]
    fn scalar_squares_hold(
        kind in kind(), dim in dim(), m in 0.0..3.0f64, h in 0.01..1.0f64,
        t in prop::array::uniform3(-1.0..1.0f64),
    ) {
        let model = ModelId::discrete(kind, dim, m, h).unwrap();
        prop_assume!(model.has_scalar_square());
        let xi: Vec<f64> = t[..dim.d()].iter().map(|s| s * PI / h).collect();
        let g = symbol(&model, &xi).unwrap();
        let s = scalar_g(&model, &xi).unwrap();
        let want = SymbolMatrix::identity(g.nu()).scale_re(s);
        prop_assert!((g * g).max_abs_diff(&want) <= 1e-12 * (1.0 + s));
    }

    #[test]
    fn non_scalar_squares_match_eigensolver(
        modified in any::<bool>(), m in 0.0..3.0f64, h in 0.01..1.0f64,
        t in prop::array::uniform3(-1.0..1.0f64),
    ) {
        let kind = if modified { ModelKind::FbMod } else { ModelKind::Fb };
        let model = ModelId::discrete(kind, Dimension::Three, m, h).unwrap();
        let xi: Vec<f64> = t.iter().map(|s| s * PI / h).collect();
        let g = symbol(&model, &xi).unwrap();
        let eig = (SymbolMatrix::identity(4) + g * g).hermitian_eigenvalues();
        let (lo, hi) = squared_symbol_eigs(&model, &xi).unwrap();
        prop_assert!((lo - eig[0]).abs() <= 1e-11 * hi);
        prop_assert!((hi - eig[3]).abs() <= 1e-11 * hi);
    }

    #[test]
    fn pauli_cross_identity(u in complex3(), w in complex3()) {
        let dot = u[0] * w[0] + u[1] * w[1] + u[2] * w[2];
        let cross = [
            u[1] * w[2] - u[2] * w[1],
            u[2] * w[0] - u[0] * w[2],
            u[0] * w[1] - u[1] * w[0],
        ];
        let i = Complex64::new(0.0, 1.0);
        let want = SymbolMatrix::scalar(2, dot) + sigma_dot(&cross).scale(i);
        prop_assert!((sigma_dot(&u) * sigma_dot(&w)).max_abs_diff(&want) <= 1e-13 * (1.0 + dot.norm()));
    }

    #[test]
    fn cstar_norm_identities(g2 in hermitian(2), g4 in hermitian(4)) {
        let i = Complex64::new(0.0, 1.0);
        for g in [g2, g4] {
            let sq = g * g + SymbolMatrix::identity(g.nu());
            let lhs = g.shift(-i).spectral_norm();
            prop_assert!((lhs - sq.spectral_norm().sqrt()).abs() <= 1e-12 * lhs);
            let inv = g.resolvent(i).unwrap().spectral_norm();
            prop_assert!((inv - sq.inverse().unwrap().spectral_norm().sqrt()).abs() <= 1e-12 * inv);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stencil_agrees_with_multiplier(
        kind in kind(), dim in dim(), m in 0.0..2.0f64, h in 0.05..1.0f64, seed in any::<u64>(),
    ) {
        let n = if dim.d() == 3 { 8 } else { 16 };
        let lat = PeriodicLattice::new(dim, n, h).unwrap();
        let model = ModelId::discrete(kind, dim, m, h).unwrap();
        let u = LatticeField::random(lat, seed);
        let a = apply_free_dirac(&model, &u).unwrap();
        let b = apply_free_dirac_spectral(&model, &u).unwrap();
        prop_assert!(a.sub(&b).unwrap().norm() <= 1e-11 * a.norm());
    }

    #[test]
    fn resolvent_inverts_the_operator(
        kind in kind(), dim in dim(), m in 0.0..2.0f64, h in 0.05..1.0f64,
        zr in -2.0..2.0f64, zi in 0.2..3.0f64, seed in any::<u64>(),
    ) {
        let n = if dim.d() == 3 { 8 } else { 16 };
        let lat = PeriodicLattice::new(dim, n, h).unwrap();
        let model = ModelId::discrete(kind, dim, m, h).unwrap();
        let z = Complex64::new(zr, zi);
        let f = LatticeField::random(lat, seed);
        let u = free_resolvent(&model, z, &f).unwrap();
        let back = apply_free_dirac(&model, &u).unwrap().axpy(-z, &u).unwrap();
        prop_assert!(back.sub(&f).unwrap().norm() <= 1e-10 * f.norm());
    }

    #[test]
    fn snapshots_round_trip(dim in dim(), h in 0.01..1.0f64, seed in any::<u64>()) {
        let lat = PeriodicLattice::new(dim, 4, h).unwrap();
        let u = LatticeField::random(lat, seed);
        let back = snapshot::decode(&snapshot::encode(&u)).unwrap();
        prop_assert_eq!(back, u);
    }
}
