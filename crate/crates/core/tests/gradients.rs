mod common;

use common::gradcheck::*;
use fairlm::model::Variant;

const TOL: f64 = 1e-4;

#[test]
fn lstm_step_matches_finite_differences() {
    let e = lstm_step_error(10);
    assert!(e <= TOL, "relative error {e}");
}

#[test]
fn encode_matches_finite_differences() {
    let e = encode_error(10);
    assert!(e <= TOL, "relative error {e}");
}

#[test]
fn fair_step_matches_finite_differences() {
    let e = decode_step_fair_error(10);
    assert!(e <= TOL, "relative error {e}");
}

#[test]
fn attention_step_matches_finite_differences() {
    let e = decode_step_attention_error(10);
    assert!(e <= TOL, "relative error {e}");
}

#[test]
fn batch_loss_matches_finite_differences() {
    for v in Variant::ALL {
        let e = loss_error(v, 10);
        assert!(e <= TOL, "{v}: relative error {e}");
    }
}

#[test]
fn key_gradients_stay_inside_regions() {
    let (violations, touched) = key_gradient_locality(10);
    assert_eq!(violations, 0);
    assert!(touched > 0);
}
