use satpt::encoder::FrontEnd;
use satpt::trainer::{grad_check, GradCheckOptions};

#[test]
fn every_parameter_group_matches_finite_differences() {
    let r = grad_check(&GradCheckOptions::default()).unwrap();
    assert!(r.coordinates >= 200);
    assert!(r.max_rel_error < 1e-4, "worst: {:?}", r.worst);
    for group in ["encoder.proj", "encoder.block0", "encoder.block1", "encoder.mask_emb", "encoder.head", "quantizer.proj_in", "quantizer.codebook", "quantizer.proj_out"] {
        assert!(r.checks.iter().any(|c| c.name.starts_with(group)), "no coordinate in {group}");
    }
}

#[test]
fn content_head_alone_is_nearly_exact() {
    let r = grad_check(&GradCheckOptions {
        only: Some("encoder.head".into()),
        ..GradCheckOptions::default()
    })
    .unwrap();
    assert!(r.checks.iter().all(|c| c.name.starts_with("encoder.head")));
    assert!(r.max_rel_error < 1e-6, "worst: {:?}", r.worst);
}

#[test]
fn conv_front_end_gradients() {
    let r = grad_check(&GradCheckOptions {
        front_end: FrontEnd::Conv,
        ..GradCheckOptions::default()
    })
    .unwrap();
    assert!(r.checks.iter().any(|c| c.name.starts_with("encoder.front.conv")));
    assert!(r.max_rel_error < 1e-4, "worst: {:?}", r.worst);
}

#[test]
fn other_seeds_also_pass() {
    for seed in [2, 3] {
        let r = grad_check(&GradCheckOptions { seed, ..GradCheckOptions::default() }).unwrap();
        assert!(r.max_rel_error < 1e-4, "seed {seed} worst: {:?}", r.worst);
    }
}

#[test]
fn filter_without_matches_is_an_error() {
    let opts = GradCheckOptions {
        only: Some("nothing.here".into()),
        ..GradCheckOptions::default()
    };
    assert!(grad_check(&opts).is_err());
}
