mod common;

use bagnet::arch::Mode;
use bagnet::Scalar;
use common::ops::{model_errors, op_errors, tolerance};

fn assert_all<T: Scalar>(errors: Vec<(String, f64)>) {
    for (name, e) in errors {
        assert!(e < tolerance::<T>(), "{name}: relative error {e:e}");
    }
}

#[test]
fn every_op_matches_finite_differences_in_f64() {
    assert_all::<f64>(op_errors::<f64>());
}

#[test]
fn every_op_matches_finite_differences_in_f32() {
    assert_all::<f32>(op_errors::<f32>());
}

#[test]
fn tiny_model_parameter_gradients_in_f64() {
    assert_all::<f64>(model_errors::<f64>(Mode::Train));
    assert_all::<f64>(model_errors::<f64>(Mode::Eval));
}

#[test]
fn tiny_model_parameter_gradients_in_f32() {
    assert_all::<f32>(model_errors::<f32>(Mode::Train));
    assert_all::<f32>(model_errors::<f32>(Mode::Eval));
}
