use fadec_core::mvs::{arch, ModelConfig};
use fadec_core::workload::{
    analyze, count_operator_instances, expected_reference_census, partition_hw_sw, reference_graph, OpKind, Process,
};

#[test]
fn reference_graph_reproduces_the_census() {
    let g = reference_graph().unwrap();
    let c = count_operator_instances(&g).unwrap();
    let bad = c.mismatches(&expected_reference_census());
    assert!(bad.is_empty(), "mismatched cells: {bad:?}\n{}", c.render());
    assert_eq!(c.get(OpKind::Conv1x1, Process::FE), 33);
    assert_eq!(c.get(OpKind::GridSample, Process::CVF), 128);
    assert_eq!(c.get(OpKind::Slice, Process::CL), 4);
}

#[test]
fn census_does_not_depend_on_resolution_or_widths() {
    let mut cfg = ModelConfig::fast();
    cfg.hypotheses = 64;
    cfg.widths.fs = 8;
    cfg.widths.cvd = [4, 4, 4, 4, 4];
    let (_, g) = arch::trace(&cfg).unwrap();
    let c = count_operator_instances(&g).unwrap();
    assert!(c.mismatches(&expected_reference_census()).is_empty());
}

#[test]
fn conv_dominates_cve_and_cvd() {
    let r = analyze(&reference_graph().unwrap()).unwrap();
    println!("{:#?}", r.mult_share);
    println!("conv share CVE+CVD = {}", r.conv_mult_share_cve_cvd);
    assert!(r.conv_mult_share_cve_cvd > 0.99, "{}", r.conv_mult_share_cve_cvd);
    let sum: f64 = r.mult_share.values().sum();
    assert!((sum - 1.0).abs() < 1e-12);
}

#[test]
fn doubling_resolution_quadruples_conv_mults() {
    let small = ModelConfig::fast();
    let mut big = small.clone();
    big.height *= 2;
    big.width *= 2;
    let (_, a) = arch::trace(&small).unwrap();
    let (_, b) = arch::trace(&big).unwrap();
    let convs = |g: &fadec_core::workload::OpGraph| -> Vec<u64> {
        g.nodes
            .iter()
            .filter(|n| n.kind.is_conv())
            .map(|n| fadec_core::workload::node_multiplications(n).unwrap())
            .collect()
    };
    let (ma, mb) = (convs(&a), convs(&b));
    assert_eq!(ma.len(), mb.len());
    for (x, y) in ma.iter().zip(&mb) {
        assert_eq!(4 * x, *y);
    }
}

#[test]
fn traced_graph_is_topologically_ordered() {
    let g = reference_graph().unwrap();
    assert!(g.is_topologically_ordered());
    let plan = partition_hw_sw(&g).unwrap();
    assert_eq!(plan.placements.len(), g.nodes.len());
}
