//! Central-difference checks of every differentiable op and of the full
//! combined loss through a small BridgeFormer, in 64-bit.

mod support;

use support::gradients::{cases, check_full_loss, check_op, TOL, TRIALS_PER_OP};

#[test]
fn every_op_matches_central_differences() {
    let mut trials = 0;
    for case in cases() {
        for t in 0..TRIALS_PER_OP {
            let err = check_op(&case, t).unwrap_or_else(|e| panic!("{} trial {t}: {e}", case.name));
            assert!(err < TOL, "{} trial {t}: relative error {err:e}", case.name);
            trials += 1;
        }
    }
    assert!(trials >= 100, "only {trials} op trials");
}

#[test]
fn full_loss_through_bridgeformer() {
    for trial in 0..4u64 {
        let err = check_full_loss(trial).unwrap();
        assert!(err < TOL, "trial {trial}: relative error {err:e}");
    }
}
