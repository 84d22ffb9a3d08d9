use shortcut_probe::scalar::*;

#[test]
fn sigmoid_is_stable_at_extremes() {
    assert_eq!(sigmoid(0.0_f64), 0.5);
    assert!((sigmoid(2.0_f64) - 0.880_797_077_977_882_3).abs() < 1e-15);
    assert_eq!(sigmoid(-1000.0_f64), 0.0);
    assert_eq!(sigmoid(1000.0_f64), 1.0);
    assert!((sigmoid(3.0_f32) + sigmoid(-3.0_f32) - 1.0).abs() < 1e-6);
}
