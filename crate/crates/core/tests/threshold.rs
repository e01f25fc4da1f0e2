use spopo::steady::{bisect_threshold, relaxes_to_nontrivial};
use spopo::supermodes::decompose;
use spopo::{CombConfig, MismatchKind, PumpKind};

#[test]
fn bisection_brackets_supermode_threshold() {
    let cfg = CombConfig::new(2, 1.0, 1.0, 1.0, PumpKind::Gaussian { width: 1.5 }, MismatchKind::Perfect).unwrap();
    let basis = decompose(&cfg.coupling_matrix()).unwrap();
    let thr = basis.threshold_sigma;
    let (lo, hi) = bisect_threshold(&cfg, &basis, 0.5 * thr, 1.5 * thr, 2e-4).unwrap();
    assert!(lo <= thr && thr <= hi, "[{lo}, {hi}] vs {thr}");
    assert!(hi - lo <= 2e-4);
}

#[test]
fn classification_away_from_threshold() {
    let cfg = CombConfig::new(1, 2.0, 0.5, 1.0, PumpKind::Sech2 { width: 1.0 }, MismatchKind::Perfect).unwrap();
    let basis = decompose(&cfg.coupling_matrix()).unwrap();
    let thr = basis.threshold_sigma;
    assert!(!relaxes_to_nontrivial(&cfg.with_sigma(0.9 * thr), &basis).unwrap());
    assert!(relaxes_to_nontrivial(&cfg.with_sigma(1.1 * thr), &basis).unwrap());
}
