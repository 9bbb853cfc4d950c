use kbstrip::config::parse_config;
use kbstrip::decay::{decay_parameters, envelope_check, Regime};
use kbstrip::experiment::preset;
use kbstrip::galerkin::{manufactured_run, DecayingGaussianSine, TravelingPulse};
use kbstrip::integrator::{integrate, IntegratorKind, LedgerSettings, SimConfig};
use kbstrip::ledger::{parse_ledger_csv, EnergyLedger};
use kbstrip::spectral::Equation;

fn short_run(text: &str) -> EnergyLedger {
    let spec = parse_config(text).unwrap();
    let eq = Equation::with_options(spec.geometry, spec.rhs_options()).unwrap();
    let u0 = spec.initial_state(eq.basis()).unwrap();
    let settings = LedgerSettings {
        weight: spec.weight,
        chi: decay_parameters(spec.geometry.width).unwrap().chi,
        residuals: true,
    };
    integrate(&eq, &u0, &spec.sim, &settings, &mut []).unwrap()
}

const SMALL: &str = "L = 15\nNx = 64\nNy = 8\ndt = 0.005\nT = 0.5\nsample_every = 5\n\
                     initial_condition = gaussian_sine(0.8, 0, 1, 1)";

#[test]
fn l2_norm_never_grows() {
    let ledger = short_run(SMALL);
    let rows = ledger.snapshots();
    assert!(rows.len() > 10);
    for w in rows.windows(2) {
        assert!(
            w[1].l2_sq <= w[0].l2_sq * (1.0 + 1e-10),
            "{} -> {}",
            w[0].l2_sq,
            w[1].l2_sq
        );
    }
}

#[test]
fn identical_configs_give_identical_ledgers() {
    let a = short_run(SMALL).to_csv();
    let b = short_run(SMALL).to_csv();
    assert_eq!(a, b);
}

#[test]
fn ledger_csv_round_trips_bit_exactly() {
    let ledger = short_run(SMALL);
    let rows = parse_ledger_csv(&ledger.to_csv()).unwrap();
    assert_eq!(rows.len(), ledger.rows.len());
    for (parsed, row) in rows.iter().zip(&ledger.rows) {
        for (a, b) in parsed.iter().zip(row.record()) {
            assert!(a.to_bits() == b.to_bits() || a.is_nan() && b.is_nan());
        }
    }
}

#[test]
fn cumulative_dissipation_is_monotone() {
    let rows = short_run(SMALL).snapshots();
    assert!(rows.windows(2).all(|w| w[1].cum_ux >= w[0].cum_ux));
    assert!(rows
        .iter()
        .all(|r| r.w_u >= 0.0 && r.w_uxxy >= 0.0 && r.buffer_peak >= 0.0));
}

#[test]
fn smaller_data_keeps_the_decay_envelope() {
    let spec = preset("decay_cert").unwrap();
    let eq = Equation::with_options(spec.geometry, spec.rhs_options()).unwrap();
    let cert = decay_parameters(spec.geometry.width).unwrap();
    let settings = LedgerSettings {
        weight: spec.weight,
        chi: cert.chi,
        residuals: false,
    };
    let u0 = spec.initial_state(eq.basis()).unwrap();
    for factor in [1.0, 0.5] {
        let ledger = integrate(&eq, &u0.scaled(factor), &spec.sim, &settings, &mut []).unwrap();
        let checked = envelope_check(&ledger, &cert, Regime::Regular, false).unwrap();
        assert!(checked.passed, "factor {factor}: {:?}", checked.violations);
    }
}

#[test]
fn traveling_pulse_is_fourth_order_and_harder_when_faster() {
    let spec = preset("manufactured").unwrap();
    let eq = Equation::with_options(spec.geometry, spec.rhs_options()).unwrap();
    let mut errors = Vec::new();
    for speed in [0.5, 2.0, 4.0] {
        let target = TravelingPulse {
            width: spec.geometry.width,
            speed,
        };
        let r = manufactured_run(&eq, &spec.sim, &target, spec.weight).unwrap();
        let order = r.observed_order.unwrap();
        assert!((order - 4.0).abs() <= 0.7, "speed {speed}: order {order}");
        errors.push(r.errors[0]);
    }
    assert!(errors.windows(2).all(|w| w[1] > w[0]), "{errors:?}");
}

#[test]
fn imex_bdf2_is_second_order() {
    let spec = preset("manufactured").unwrap();
    let eq = Equation::with_options(spec.geometry, spec.rhs_options()).unwrap();
    let sim = SimConfig {
        dt: 0.02,
        integrator: IntegratorKind::ImexBdf2,
        ..spec.sim
    };
    let target = DecayingGaussianSine {
        width: spec.geometry.width,
    };
    let r = manufactured_run(&eq, &sim, &target, spec.weight).unwrap();
    assert!(r.accepted);
    assert!((r.observed_order.unwrap() - 2.0).abs() < 0.1, "{:?}", r.orders);
}

#[test]
fn linear_runs_satisfy_the_linear_identities() {
    let text = "L = 15\nNx = 128\nNy = 8\ninitial_condition = gaussian_sine(0.8, 0, 1, 1)\nnonlinearity = off";
    let spec = parse_config(text).unwrap();
    let eq = Equation::with_options(spec.geometry, spec.rhs_options()).unwrap();
    let u0 = spec.initial_state(eq.basis()).unwrap();
    for id in kbstrip::energy::IdentityId::ALL {
        let r = kbstrip::energy::identity_residual(&eq, &u0, spec.weight, id).unwrap();
        assert!(r.relative() < 1e-8, "{id:?}: {}", r.relative());
    }
}
