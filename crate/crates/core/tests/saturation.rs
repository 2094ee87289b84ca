use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use satstab::saturation::{deadzone, sat, sat_scalar, sector_condition, SaturationLevel};

fn lvl(v: f64) -> SaturationLevel {
    SaturationLevel::new(v).unwrap()
}

#[test]
fn level_parses_numbers_and_inf() {
    let a: SaturationLevel = serde_json::from_str("2.5").unwrap();
    assert_eq!(a.value(), 2.5);
    let b: SaturationLevel = serde_json::from_str("\"inf\"").unwrap();
    assert!(b.is_unbounded());
    assert_eq!(serde_json::to_string(&b).unwrap(), "\"inf\"");
    assert!(serde_json::from_str::<SaturationLevel>("0.0").is_err());
    assert!(serde_json::from_str::<SaturationLevel>("-1.0").is_err());
}

#[test]
fn unbounded_level_is_identity() {
    let u = DVector::from_vec(vec![-1e300, 3.0, 1e-300]);
    assert_eq!(sat(&u, SaturationLevel::UNBOUNDED), u);
    assert!(deadzone(&u, SaturationLevel::UNBOUNDED)
        .iter()
        .all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn sat_is_one_lipschitz_and_bounded(
        a in -1e3f64..1e3,
        b in -1e3f64..1e3,
        ell in 1e-3f64..1e2,
    ) {
        let l = lvl(ell);
        prop_assert!((sat_scalar(a, l) - sat_scalar(b, l)).abs() <= (a - b).abs());
        prop_assert!(sat_scalar(a, l).abs() <= ell);
        // Odd and monotone.
        prop_assert_eq!(sat_scalar(-a, l), -sat_scalar(a, l));
        if a <= b {
            prop_assert!(sat_scalar(a, l) <= sat_scalar(b, l));
        }
    }

    #[test]
    fn deadzone_vanishes_inside_the_level(u in -5.0f64..5.0, ell in 0.1f64..5.0) {
        let v = DVector::from_element(1, u);
        let phi = deadzone(&v, lvl(ell))[0];
        if u.abs() <= ell {
            prop_assert_eq!(phi, 0.0);
        } else {
            prop_assert_eq!(phi, ell * u.signum() - u);
        }
    }

    #[test]
    fn sector_inequality_under_its_hypothesis(
        kz in proptest::collection::vec(-10.0f64..10.0, 3),
        shift in proptest::collection::vec(-1.0f64..1.0, 3),
        d in proptest::collection::vec(0.01f64..10.0, 3),
        ell in 0.1f64..3.0,
    ) {
        // Build z = e (3-dim), K = diag(kz), C = diag(kz − ℓ·shift) so that
        // |((K − C)z)_j| = ℓ|shift_j| ≤ ℓ.
        let z = DVector::from_element(3, 1.0);
        let k = DMatrix::from_diagonal(&DVector::from_vec(kz.clone()));
        let c = DMatrix::from_diagonal(&DVector::from_fn(3, |i, _| kz[i] - ell * shift[i]));
        let report = sector_condition(&z, &k, &c, &d, lvl(ell)).unwrap();
        prop_assert!(report.hypothesis);
        // Independent evaluation of φ(Kz)ᵀD(φ(Kz) + Cz).
        let mut value = 0.0;
        for j in 0..3 {
            let u = kz[j];
            let phi = u.clamp(-ell, ell) - u;
            value += d[j] * phi * (phi + kz[j] - ell * shift[j]);
        }
        prop_assert!((report.value - value).abs() <= 1e-12 * (1.0 + value.abs()));
        prop_assert!(value <= 1e-12);
        prop_assert!(report.holds);
    }
}
