mod support;

#[test]
fn random_mlps_match_central_differences() {
    let errs = support::mlp_gradient_errors(20, 11);
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    assert!(worst < 1e-6, "worst relative error {worst:e}, all {errs:?}");
}

#[test]
fn gan_losses_match_central_differences() {
    for seed in 0..3 {
        let (d, g) = support::gan_gradient_errors(seed);
        assert!(d < 1e-6, "discriminator loss gradient error {d:e}");
        assert!(g < 1e-6, "generator loss gradient error {g:e}");
    }
}
