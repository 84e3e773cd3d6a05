//! Analytic gradients of every loss term against central finite differences
//! in double precision.

use gfd_testsuite::gradcheck::*;

fn assert_all(report: Report) {
    for (name, o) in report {
        eprintln!("{name}: {o:?}");
        assert!(
            o.checked >= PROBES / 2,
            "{name}: only {} of {PROBES} probes away from kinks",
            o.checked
        );
        assert!(
            o.worst <= TOL,
            "{name}: relative error {:.3e} > {TOL:e}",
            o.worst
        );
    }
}

#[test]
fn cross_entropy_matches_differences() {
    let r = cross_entropy_checks();
    assert_eq!(r[0].1.skipped, 0, "cross entropy is smooth everywhere");
    assert_all(r);
}

#[test]
fn adversarial_terms_match_differences() {
    let r = adversarial_checks();
    assert_eq!(r[2].1.skipped, 0, "the generator term is smooth everywhere");
    assert_all(r);
}

#[test]
fn latent_term_matches_differences() {
    assert_all(latent_checks());
}

#[test]
fn generator_side_terms_match_differences() {
    assert_all(generator_side_checks());
}

#[test]
fn classifier_parameters_match_differences() {
    assert_all(classifier_checks());
}

#[test]
fn discriminator_terms_match_differences() {
    assert_all(discriminator_checks());
}

#[test]
fn generator_parameters_match_differences() {
    assert_all(generator_checks());
}
