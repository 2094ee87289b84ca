use proptest::prelude::*;
use satstab::experiment::{BasinSearch, ExperimentConfig, InitialSpec};
use satstab::modal::{ActuationMode, ActuatorShape};
use satstab::saturation::SaturationLevel;
use satstab::simulate::InitialPreset;
use satstab::spectral::BoundaryCondition;
use satstab::synthesis::GainTarget;
use satstab::Error;

fn minimal(extra: &str) -> String {
    format!(
        r#"{{"bc": "hinged", "lambda": 2.0, "length": 3.0,
            "actuators": [{{"indicator": [0.0, 1.0]}}]{extra}}}"#
    )
}

#[test]
fn defaults_fill_optional_keys() {
    let cfg = ExperimentConfig::from_json(&minimal("")).unwrap();
    assert_eq!(cfg.actuation, ActuationMode::Internal);
    assert!(cfg.ell.is_unbounded());
    assert_eq!(cfg.synthesis, GainTarget::Default);
    assert_eq!(cfg.modes, None);
    assert_eq!(cfg.dt, 1e-3);
    assert_eq!(cfg.horizon, 5.0);
}

#[test]
fn short_aliases_for_modes_and_horizon() {
    let cfg = ExperimentConfig::from_json(&minimal(r#", "J": 12, "T": 2.5"#)).unwrap();
    assert_eq!(cfg.modes, Some(12));
    assert_eq!(cfg.horizon, 2.5);
}

#[test]
fn validation_errors_name_the_key() {
    let cases = [
        (minimal(r#", "dt": -1.0"#), "dt"),
        (minimal(r#", "ell": 0.0"#), "ell"),
        (minimal(r#", "modes": 0"#), "modes"),
        (
            r#"{"bc": "hinged", "lambda": 2.0, "length": 3.0}"#.to_string(),
            "actuators",
        ),
        (
            r#"{"bc": "hinged", "lambda": 2.0, "length": 3.0, "actuation": "boundary"}"#
                .to_string(),
            "clamped",
        ),
        (
            r#"{"bc": "hinged", "lambda": 2.0, "length": 3.0,
                "actuators": [{"indicator": [0.0, 9.0]}]}"#
                .to_string(),
            "indicator",
        ),
    ];
    for (json, needle) in cases {
        let err = match ExperimentConfig::from_json(&json) {
            Err(e) => e,
            Ok(_) => panic!("accepted {json}"),
        };
        assert_eq!(err.exit_code(), 2, "{json}");
        assert!(
            err.to_string().contains(needle),
            "{err} should mention {needle}"
        );
    }
}

#[test]
fn error_exit_codes_follow_the_contract() {
    let invalid = Error::InvalidParameter {
        name: "x",
        reason: "y".into(),
    };
    assert_eq!(invalid.exit_code(), 2);
    assert_eq!(Error::Config("x".into()).exit_code(), 2);
    assert_eq!(Error::ConvergenceFailure("x".into()).exit_code(), 3);
    assert_eq!(Error::CertificateFailure("x".into()).exit_code(), 3);
    assert_eq!(Error::NotStabilizable(vec![1.0]).exit_code(), 4);
    let critical = Error::CriticalLength {
        lambda: 1.0,
        k: 1,
        l: 2,
    };
    assert_eq!(critical.exit_code(), 4);
}

fn finite(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    lo..hi
}

fn shape() -> impl Strategy<Value = ActuatorShape> {
    prop_oneof![
        (finite(0.0, 1.0), finite(1.0, 2.0)).prop_map(|(a, b)| ActuatorShape::Indicator(a, b)),
        proptest::collection::vec(finite(-2.0, 2.0), 1..4).prop_map(ActuatorShape::Modes),
    ]
}

fn target() -> impl Strategy<Value = GainTarget> {
    prop_oneof![
        Just(GainTarget::Default),
        proptest::collection::vec(finite(-10.0, -0.1), 1..3).prop_map(GainTarget::Poles),
        (finite(0.1, 10.0), finite(0.1, 10.0)).prop_map(|(q, r)| GainTarget::Lqr { q, r }),
    ]
}

fn initial() -> impl Strategy<Value = InitialSpec> {
    prop_oneof![
        proptest::collection::vec(finite(-1.0, 1.0), 1..5)
            .prop_map(|modal| InitialSpec::Modal { modal }),
        (
            prop_oneof![
                Just(InitialPreset::FirstMode),
                Just(InitialPreset::Unstable),
                Just(InitialPreset::Smooth),
                Just(InitialPreset::Random),
            ],
            finite(0.0, 1.0)
        )
            .prop_map(|(preset, amplitude)| InitialSpec::Preset { preset, amplitude }),
    ]
}

prop_compose! {
    fn config()(
        bc in prop_oneof![Just(BoundaryCondition::Hinged), Just(BoundaryCondition::NeumannCH)],
        lambda in finite(0.1, 50.0),
        length in finite(2.0, 10.0),
        delta in finite(0.0, 2.0),
        nu in finite(0.0, 2.0),
        ell in prop_oneof![Just(f64::INFINITY), finite(0.01, 10.0)],
        actuators in proptest::collection::vec(shape(), 1..3),
        synthesis in target(),
        modes in proptest::option::of(1usize..200),
        dt in finite(1e-5, 1e-2),
        horizon in finite(0.1, 10.0),
        initial in initial(),
        seed in any::<u64>(),
        basin in proptest::option::of((finite(1e-3, 1.0), finite(1.0, 10.0), 1usize..20, finite(1e-3, 0.5))),
        record_every in 1usize..10,
    ) -> ExperimentConfig {
        ExperimentConfig {
            bc,
            lambda,
            length,
            delta,
            nu,
            ell: SaturationLevel::new(ell).unwrap(),
            actuation: ActuationMode::Internal,
            actuators,
            synthesis,
            modes,
            dt,
            horizon,
            initial,
            seed,
            output: None,
            basin_search: basin.map(|(lo, hi, iterations, decay_factor)| BasinSearch {
                lo,
                hi,
                iterations,
                decay_factor,
            }),
            blowup_threshold: 1e6,
            record_every,
        }
    }
}

proptest! {
    #[test]
    fn config_round_trips_through_json(cfg in config()) {
        cfg.validate().unwrap();
        let text = cfg.to_json().unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_json().unwrap(), text);
    }
}
