use proptest::prelude::*;
use tmb_core::analyze::{decompose, first_integral_residual, nehari_residual};
use tmb_core::solve::{solution_from_amplitude, SolverOptions};
use tmb_core::ProblemParams;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Any amplitude shot to its (k+1)-th zero is a solution for the λ it
    /// lands on, so the exact identities hold irrespective of the target.
    #[test]
    fn shot_solutions_satisfy_identities(k in 0usize..3, beta in 1.0f64..1.6, log_s in -1.0f64..3.0) {
        let target = ProblemParams::new(1.0, beta, 1.0).unwrap();
        let sol = solution_from_amplitude(log_s.exp(), k, &target, &SolverOptions::default()).unwrap();
        prop_assert!(nehari_residual(&sol).unwrap() <= 1e-8);
        prop_assert!(first_integral_residual(&sol).unwrap() <= 1e-8);
        let d = decompose(&sol).unwrap();
        prop_assert_eq!(d.len(), k + 1);
        for (i, dom) in d.iter().enumerate() {
            prop_assert!(dom.peak_value > 0.0);
            prop_assert_eq!(dom.sign, if i % 2 == 0 { 1.0 } else { -1.0 });
            if i > 0 {
                prop_assert!(dom.inner_radius < dom.peak_radius && dom.peak_radius < dom.outer_radius);
            }
        }
    }
}
