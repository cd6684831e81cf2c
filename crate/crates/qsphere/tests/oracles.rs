//! Closed-form summation formulas and structural facts checked through the public API.

use qsphere::kernels::{kernel, s_function, KernelContext, SVariant, SignPair, SpectrumPoint};
use qsphere::lattice::{GradedFunction, LatticePoint, LatticeWindow};
use qsphere::qseries::{
    phi21_continued, phi21_regularized, phi_series, qpoch_finite, qpoch_infinite, HyperSeriesSpec,
    QBase,
};
use qsphere::transform::{forward, SpectralGrid};
use qsphere::Complex64 as C64;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn close(a: C64, b: C64, tol: f64) {
    let r = (a - b).norm() / a.norm().max(b.norm());
    assert!(r < tol, "{a} vs {b}: relative {r:e}");
}

#[test]
fn q_gauss_sum() {
    let q = 0.4;
    let qb = QBase::new(q).unwrap();
    let (a, b, cc) = (c(2.0, 0.5), c(-1.5, 1.0), c(0.3, -0.2));
    let z = cc / (a * b);
    let spec = HyperSeriesSpec::new(vec![a, b], vec![cc], C64::from(q), z).unwrap();
    let lhs = phi_series(&spec, &qb).unwrap();
    let inf = |x: C64| qpoch_infinite(x, q, &qb).unwrap();
    let rhs = inf(cc / a) * inf(cc / b) / (inf(cc) * inf(z));
    close(lhs, rhs, 1e-12);
}

#[test]
fn q_chu_vandermonde() {
    let q = 0.6;
    let qb = QBase::new(q).unwrap();
    let bq = C64::from(q);
    let (b, cc) = (c(0.7, 0.4), c(-0.2, 0.9));
    for n in 0..8 {
        let top = C64::from(q.powi(-(n as i32)));
        let spec = HyperSeriesSpec::new(vec![top, b], vec![cc], bq, bq).unwrap();
        let lhs = phi_series(&spec, &qb).unwrap();
        let rhs = qpoch_finite(cc / b, bq, n) / qpoch_finite(cc, bq, n) * b.powi(n as i32);
        close(lhs, rhs, 1e-10);
    }
}

#[test]
fn euler_exponential() {
    let q = 0.3;
    let qb = QBase::new(q).unwrap();
    let z = c(0.5, -0.6);
    let spec = HyperSeriesSpec::new(vec![C64::from(0.0)], vec![], C64::from(q), z).unwrap();
    close(
        phi_series(&spec, &qb).unwrap(),
        1.0 / qpoch_infinite(z, q, &qb).unwrap(),
        1e-13,
    );
}

#[test]
fn continuation_matches_series_inside_the_disc() {
    let q = 0.5;
    let qb = QBase::new(q).unwrap();
    let (a, b, cc, z) = (c(2.5, 0.3), c(-1.8, 1.1), c(0.2, 0.1), c(0.6, 0.5));
    let spec = HyperSeriesSpec::new(vec![a, b], vec![cc], C64::from(q), z).unwrap();
    close(
        phi21_continued(a, b, cc, q, z, &qb).unwrap(),
        phi_series(&spec, &qb).unwrap(),
        1e-9,
    );
}

#[test]
fn regularized_series_is_finite_at_the_poles_in_z() {
    let q = 0.5;
    let qb = QBase::new(q).unwrap();
    let (a, b, cc) = (c(0.3, 0.1), c(-0.4, 0.2), c(0.35, 0.05));
    let at_pole = phi21_regularized(a, b, cc, q, C64::from(q.powi(-2)), &qb).unwrap();
    assert!(at_pole.re.is_finite() && at_pole.im.is_finite());
    let z = c(0.2, -0.1);
    let spec = HyperSeriesSpec::new(vec![a, b], vec![cc], C64::from(q), z).unwrap();
    let plain = qpoch_infinite(z, q, &qb).unwrap() * phi_series(&spec, &qb).unwrap();
    close(
        phi21_regularized(a, b, cc, q, z, &qb).unwrap(),
        plain,
        1e-12,
    );
}

#[test]
fn lower_s_function_at_one() {
    let ctx = KernelContext::new(QBase::new(0.5).unwrap());
    let one = C64::from(1.0);
    for p in LatticeWindow::new(-6, 6).unwrap().points() {
        let v = s_function(SVariant::Lower, one, p, &ctx.consts, &ctx.qb).unwrap();
        if p.k() >= 1 && p.to_string().starts_with('-') {
            assert_eq!(v, C64::new(0.0, 0.0), "{p}");
        } else {
            assert!(v.re.is_finite() && v.im.is_finite(), "{p}");
        }
    }
}

#[test]
fn discrete_series_vanishes_off_the_first_pair() {
    let ctx = KernelContext::new(QBase::new(0.5).unwrap());
    let p0 = LatticePoint::plus(-1);
    let pt = SpectrumPoint::Discrete { n: 1 };
    assert!(kernel(1, SignPair::PP, p0, &pt, &ctx).unwrap().norm() > 0.0);
    for s in [SignPair::PM, SignPair::MP, SignPair::MM] {
        assert_eq!(kernel(1, s, p0, &pt, &ctx).unwrap().norm(), 0.0);
    }
}

#[test]
fn negative_branch_starts_at_one() {
    let err = "-q^0".parse::<LatticePoint>().unwrap_err();
    assert!(
        err.to_string().contains("negative branch requires k ≥ 1"),
        "{err}"
    );
    assert!(LatticePoint::minus(0).is_err());
}

#[test]
fn even_delta_has_diagonal_transform() {
    let window = LatticeWindow::new(-4, 4).unwrap();
    let ctx = KernelContext::new(QBase::new(0.5).unwrap());
    let grid = SpectralGrid::gauss(16, 4).unwrap();
    let f = GradedFunction::even_delta(0.5, window, "-q^2".parse().unwrap()).unwrap();
    let field = forward(&f, &grid, &ctx).unwrap();
    assert!(field.is_diagonal_only());
    assert!(!field.is_off_diagonal_only());
}
