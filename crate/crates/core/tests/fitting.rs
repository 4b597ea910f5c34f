mod common;

use common::oracles;

use pitlane_core::fitting::{fit_quadratic_form, FeatureMap, FitOptions, FitSample, Sign};
use pitlane_core::map::fit_stint_surface;

const RECOVERY_TOL: f64 = 1e-6;
const SIGN_TOL: f64 = 1e-8;

#[test]
fn random_forms_are_recovered_with_their_sign() {
    let cases = oracles::all_quad_form_recoveries();
    assert_eq!(cases.len(), 14);
    for (name, r) in cases {
        assert!(r.error <= RECOVERY_TOL, "{name}: {:e}", r.error);
        assert!(r.sign_violation <= SIGN_TOL, "{name}: {:e}", r.sign_violation);
    }
}

#[test]
fn indefinite_data_gives_certified_projection() {
    // x² − y² is not PSD; the fit must still come back sign-certified
    let samples: Vec<FitSample> = (0..30)
        .map(|i| {
            let x = -1.0 + 0.07 * i as f64;
            let y = 0.5 - 0.03 * i as f64;
            FitSample::new(vec![x, y], x * x - y * y)
        })
        .collect();
    let fit = fit_quadratic_form(&samples, FeatureMap::Identity, Sign::Psd, &FitOptions::default())
        .unwrap();
    assert!(fit.is_sign_certified(SIGN_TOL));
    assert!(fit.rmse_normalized > 1e-3);
}

#[test]
fn inverter_alpha_is_recovered() {
    let err = oracles::inverter_recovery();
    assert!(err <= RECOVERY_TOL, "{err:e}");
}

#[test]
fn charge_loss_alpha_is_recovered() {
    let (alpha, inv_psc) = oracles::charge_loss_recovery();
    assert!(alpha <= RECOVERY_TOL, "{alpha:e}");
    assert!(inv_psc <= RECOVERY_TOL, "{inv_psc:e}");
}

#[test]
fn stint_surface_is_recovered_from_map_samples() {
    let r = oracles::stint_surface_recovery();
    assert!(r.error <= RECOVERY_TOL, "{:e}", r.error);
    assert!(r.sign_violation <= SIGN_TOL);
    // the infeasible cell and the final stint are skipped
    let fit = fit_stint_surface(&oracles::stint_surface_samples(), &FitOptions::default()).unwrap();
    assert_eq!(fit.n_samples, 42);
    // the feature map must agree with the homogeneous form written by hand
    let direct = common::surface_direct(&fit.q, 4.0, 30.0);
    assert!((fit.eval(&[30.0, 4.0]) - direct).abs() <= 1e-9 * direct);
}

#[test]
fn final_stint_fit_is_recovered() {
    let err = oracles::final_fit_recovery();
    assert!(err <= RECOVERY_TOL, "{err:e}");
}

#[test]
fn component_fits_are_sign_certified() {
    let f = &common::setup().model.fits;
    for (name, q, sign) in [
        ("q_m_l", &f.q_m_l, Sign::Psd),
        ("q_m_theta", &f.q_m_theta, Sign::Nsd),
        ("q_b_l", &f.q_b_l, Sign::Nsd),
        ("q_b_theta", &f.q_b_theta, Sign::Nsd),
    ] {
        assert_eq!(q.sign, sign, "{name}");
        assert!(q.is_sign_certified(SIGN_TOL), "{name}: {}", q.sign_violation());
    }
    assert!(f.alpha_inv > 0.0 && !f.alpha_inv_flagged);
    assert!(f.alpha_ch > 0.0 && f.alpha_ch < 1.0 && !f.alpha_ch_flagged);
}
