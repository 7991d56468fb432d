use dmdc_wasm::{envelope_demo, frequency_curve, spectrogram_demo};

#[test]
fn envelope_brackets_the_held_out_run() {
    let d = envelope_demo(1, 0.02, 0).unwrap();
    let n = d.time_s.len();
    assert!(n > 100);
    assert!([d.measured.len(), d.predicted.len(), d.lower.len(), d.upper.len()].iter().all(|l| *l == n));
    for t in 0..n {
        assert!((d.upper[t] - d.lower[t] - 2.0 * d.half_width).abs() <= 1e-9 * (1.0 + d.upper[t].abs()));
    }
    assert!(d.coverage > 0.5, "coverage {}", d.coverage);
    assert!(d.r2_test > 0.9, "r2 {}", d.r2_test);
}

#[test]
fn spectrograms_agree_without_noise() {
    let d = spectrogram_demo(2, 0.0, 1, 1.0).unwrap();
    assert_eq!(d.experiment.len(), d.pulse_length_axis.len());
    assert_eq!(d.experiment[0].len(), d.frequency_axis.len());
    assert!(*d.frequency_axis.last().unwrap() <= 1.0 + 1e-12);
    assert!(d.similarity > 0.9, "similarity {}", d.similarity);
}

#[test]
fn frequency_curve_has_one_point_per_factor() {
    let pts = frequency_curve(3, 0.0).unwrap();
    let hz: Vec<f64> = pts.iter().map(|p| p.hz).collect();
    assert_eq!(hz, vec![100.0, 50.0, 20.0, 10.0, 4.0]);
    assert!(pts.iter().all(|p| p.r2_test.len() == 3));
    assert!(pts[0].r2_test.iter().all(|r| *r > 0.999));
}

#[test]
fn output_is_deterministic_json() {
    let a = serde_json::to_string(&frequency_curve(4, 0.01).unwrap()).unwrap();
    let b = serde_json::to_string(&frequency_curve(4, 0.01).unwrap()).unwrap();
    assert_eq!(a, b);
}
