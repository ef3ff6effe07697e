use crossfusion::gradsuite::{run_suite, SuiteOptions, TOLERANCE};
use crossfusion::tensor::OpKind;
use crossfusion::Error;

#[test]
fn every_component_passes_at_desk_extents() {
    let checks = run_suite(&SuiteOptions::new(8, 2, 0)).unwrap();
    let names: Vec<&str> = checks.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "linear",
            "layer_norm",
            "softmax_attention",
            "grouped_conv2d",
            "conv3d_fuse",
            "cab",
            "pad_transformer",
            "conv_processor",
            "model_full",
            "model_no_cp",
            "model_no_fc",
        ]
    );
    for c in &checks {
        assert!(c.max_rel_error < TOLERANCE, "{c:?}");
        assert!(c.coords_checked > 0, "{c:?}");
    }
}

#[test]
fn corrupted_backward_rules_are_caught() {
    for kind in [OpKind::Softmax, OpKind::Conv2d, OpKind::Conv3d, OpKind::LayerNorm] {
        let mut opts = SuiteOptions::new(8, 2, 1);
        opts.fault = Some(kind);
        let checks = run_suite(&opts).unwrap();
        assert!(checks.iter().any(|c| !c.passed()), "{kind:?} went unnoticed");
    }
}

#[test]
fn indivisible_head_split_is_a_config_error() {
    assert!(matches!(run_suite(&SuiteOptions::new(6, 4, 0)), Err(Error::Config(_))));
}
