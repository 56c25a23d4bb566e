mod common;

use common::check_diffusion;

#[test]
fn schedule_marginal_and_reverse_step() {
    let c = check_diffusion(20_000, 0x5eed_0003);
    assert!(c.monotone);
    assert!(c.max_log_product_err <= 1e-12, "log product gap {}", c.max_log_product_err);
    assert!(c.max_moment_sigma <= 4.0, "moment off by {} sigma", c.max_moment_sigma);
    assert!(c.max_posterior_err <= 1e-8, "posterior gap {}", c.max_posterior_err);
}
