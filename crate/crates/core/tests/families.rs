use tmb_core::asympt::{run_family, FamilySpec, Regime};
use tmb_core::solve::SolverOptions;
use tmb_core::{Error, Precision};

fn reference() -> FamilySpec {
    FamilySpec::constant_beta(0, 1.0, 1.2, vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6])
}

#[test]
fn reference_family_blows_up_monotonically() {
    let exp = run_family(&reference(), &SolverOptions::default()).unwrap();
    assert_eq!(exp.records.len(), 5);
    assert_eq!(exp.regime, Regime::Total);
    let mu: Vec<f64> = exp.successes().map(|s| s.domains[0].peak_value).collect();
    assert_eq!(mu.len(), 5);
    assert!(mu.windows(2).all(|w| w[1] > w[0]), "{mu:?}");
    assert!(mu[4] > 2.0 * mu[0]);
    for s in exp.successes() {
        assert!(s.nehari_residual <= 1e-8);
        assert!(s.identity_residual_max <= 1e-6);
        let d = s.domains[0].dirichlet;
        assert!(d > 1.5 && d < 2.0);
    }
    let aaa1 = exp.report("aaa1").unwrap();
    assert!(aaa1.applicable);
    assert!((aaa1.target - 0.4).abs() < 1e-15);
}

#[test]
fn duplicate_schedules_give_identical_records() {
    let spec = FamilySpec::constant_beta(1, 1.0, 1.5, vec![5.0, 2.0, 1.0, 0.5]);
    let a = run_family(&spec, &SolverOptions::default()).unwrap();
    let b = run_family(&spec, &SolverOptions::default()).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(
        serde_json::to_string(&a.records).unwrap(),
        serde_json::to_string(&b.records).unwrap()
    );
}

#[test]
fn out_of_budget_member_is_recorded_not_fatal() {
    let spec = FamilySpec::constant_beta(0, 1.0, 1.2, vec![1e-1, 1e-2, 1e-250, 1e-3]);
    let opts = SolverOptions::with_precision(Precision::Double);
    let exp = run_family(&spec, &opts).unwrap();
    assert_eq!(exp.failures(), 1);
    assert!(exp.records[2].summary.is_none());
    assert!(exp.records[2].failure.is_some());
    assert!(exp.records.iter().enumerate().all(|(n, r)| n == 2 || r.summary.is_some()));
}

#[test]
fn all_members_failing_is_an_error() {
    let spec = FamilySpec::constant_beta(0, 1.0, 1.2, vec![1e-250, 1e-260, 1e-270, 1e-280]);
    let opts = SolverOptions::with_precision(Precision::Double);
    assert_eq!(run_family(&spec, &opts).unwrap_err(), Error::FamilyEmpty);
}
