use sofar_core::arch::{parse_arch_name, Dataset};
use sofar_core::complexity::*;

fn width_for(name: &str, reference: &str, metric: BudgetMetric, ds: Dataset) -> Result<usize, ComplexityError> {
    let reference = analyze_arch(&parse_arch_name(reference, ds).unwrap(), CountPolicy::default()).unwrap();
    scale_channels(&parse_arch_name(name, ds).unwrap(), &reference, metric).map(|s| s.width)
}

#[test]
fn scaling_matches_published_widths() {
    for (ds, name, reference, published) in [
        (Dataset::Imagenet, "RF-c3d4 ResNet21(8)", "Bi-Real ResNet18(64)", 53),
        (Dataset::Imagenet, "RF-c4d8 ResNet37(8)", "Bi-Real ResNet18(64)", 41),
        (Dataset::Cifar, "RF-c3d4 ResNet21(8)", "Bi-Real ResNet18(64)", 50),
    ] {
        let bits = width_for(name, reference, BudgetMetric::ParamBits, ds).unwrap();
        let both = width_for(name, reference, BudgetMetric::Both, ds).unwrap();
        let flops = width_for(name, reference, BudgetMetric::Flops, ds).unwrap();
        assert!(bits.abs_diff(published) <= 2, "{name}: {bits} vs {published}");
        assert!(both <= bits && both <= flops);
        assert!(flops >= both);
    }
}

#[test]
fn larger_budget_gives_more_channels() {
    let spec = parse_arch_name("RF-c3d4 ResNet21(8)", Dataset::Cifar).unwrap();
    let base = analyze_arch(&parse_arch_name("Bi-Real ResNet18(64)", Dataset::Cifar).unwrap(), CountPolicy::default())
        .unwrap();
    let mut doubled = base.clone();
    doubled.float_params *= 2;
    doubled.binary_params *= 2;
    doubled.float_mults *= 2;
    doubled.binary_mults *= 2;
    for metric in [BudgetMetric::Flops, BudgetMetric::ParamBits, BudgetMetric::Both] {
        let a = scale_channels(&spec, &base, metric).unwrap().width;
        let b = scale_channels(&spec, &doubled, metric).unwrap().width;
        assert!(b > a, "{metric:?}: {a} -> {b}");
    }
}

#[test]
fn budget_below_smallest_net_is_an_error() {
    let tiny = analyze_arch(&sofar_core::arch::toy_rf(4, 10), CountPolicy::default()).unwrap();
    let spec = parse_arch_name("RF-c4d8 ResNet37(8)", Dataset::Imagenet).unwrap();
    assert_eq!(
        scale_channels(&spec, &tiny, BudgetMetric::Flops),
        Err(ComplexityError::NoFeasibleWidth { min: MIN_SCALED_WIDTH })
    );
}
