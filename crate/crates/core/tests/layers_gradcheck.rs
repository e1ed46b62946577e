use warpnet::gradcheck::{layer_suite, FD_TOLERANCE};

#[test]
fn every_layer_passes_finite_differences_on_twenty_shapes() {
    let reports = layer_suite(2024, 20).unwrap();
    assert!(reports.len() >= 8, "suite covers {} layers", reports.len());
    for r in &reports {
        assert_eq!(r.shapes, 20);
        assert!(
            r.max_relative_error < FD_TOLERANCE,
            "{}: relative error {:.3e}",
            r.layer,
            r.max_relative_error
        );
    }
}
