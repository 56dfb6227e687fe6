use symfuse_autograd::gradcheck::targets::op_targets;
use symfuse_autograd::gradcheck::GradCheckConfig;

#[test]
fn every_op_matches_central_differences() {
    let mut failures = Vec::new();
    for target in op_targets() {
        let mut worst = 0.0f64;
        for seed in 0..10 {
            let cfg = GradCheckConfig { seed, ..GradCheckConfig::default() };
            let report = (target.run)(seed, &cfg).unwrap();
            worst = worst.max(report.max_rel_err);
            if !report.passed(cfg.rel_tol) {
                failures.push(format!("{} seed {seed}: {:?}", target.name, report.worst));
            }
        }
        println!("{:<22} max rel err {worst:.3e}", target.name);
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn corrupted_conv_adjoint_is_caught() {
    let target = op_targets().into_iter().find(|t| t.name == "conv2d").unwrap();
    symfuse_autograd::fault::set_conv2d_adjoint_corruption(true);
    let report = (target.run)(0, &GradCheckConfig::default());
    symfuse_autograd::fault::set_conv2d_adjoint_corruption(false);
    let report = report.unwrap();
    assert!(!report.passed(1e-3));
    assert!(report.max_rel_err > 0.1);
}

#[test]
#[ignore]
fn absolute_error_survey() {
    for target in op_targets() {
        let mut worst = 0.0f64;
        for seed in 0..10 {
            let cfg = GradCheckConfig { seed, abs_floor: 1e9, max_coords: 1000, ..GradCheckConfig::default() };
            let r = (target.run)(seed, &cfg).unwrap();
            worst = worst.max(r.max_rel_err * 1e9);
        }
        println!("{:<22} max abs err {worst:.3e}", target.name);
    }
}
