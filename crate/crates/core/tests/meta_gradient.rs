mod support;

#[test]
fn first_order_direction_matches_composed_objective() {
    for seed in 0..5 {
        let e = support::quadratic_meta_error(1e-4, seed);
        assert!(e < 0.01, "seed {seed}: relative error {e:e}");
    }
}

#[test]
fn first_order_gap_grows_with_inner_step() {
    // the dropped second-order term scales with alpha
    let small = support::quadratic_meta_error(1e-4, 3);
    let large = support::quadratic_meta_error(5e-2, 3);
    assert!(large > 10.0 * small, "{small:e} vs {large:e}");
}
