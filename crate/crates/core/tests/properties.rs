mod support;

use support::props;

fn pass(r: Result<(), String>) {
    if let Err(e) = r {
        panic!("{e}");
    }
}

#[test]
fn flops_are_conserved_by_every_mapping() {
    pass(props::flops_conservation(200));
}

#[test]
fn faster_hardware_never_slows_a_step() {
    pass(props::monotone_in_hardware(200));
}

#[test]
fn breakdown_adds_up() {
    pass(props::breakdown_additivity(200));
}

#[test]
fn reruns_are_byte_identical() {
    pass(props::determinism(50));
}

#[test]
fn zero_latency_time_scales_inversely() {
    pass(props::scale_invariance(200));
}

#[test]
fn exact_breakdown_and_scaling() {
    pass(props::exact_identities(24));
}

#[test]
fn ring_closed_form_matches_simulation() {
    pass(props::ring_oracle(100));
}
