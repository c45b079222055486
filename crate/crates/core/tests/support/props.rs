//! Randomized invariants over valid scenarios. Each check runs a seeded
//! runner so failures reproduce.

use bladeperf_core::engine::{
    evaluate, ring_allreduce, simulate_ring_allreduce, MemoryAccessModel, PerfReport,
};
use bladeperf_core::hwspec::{scd_blade, Precision, SystemSpec, Topology};
use bladeperf_core::mapping::{apply_parallelism, MappingSpec};
use bladeperf_core::workload::{build_graph, ModelSpec, MoeSpec, WorkloadSpec};
use bladeperf_core::{Exact, Scalar};
use proptest::prelude::*;
use proptest::test_runner::{RngAlgorithm, TestRng, TestRunner};

#[derive(Debug, Clone)]
pub struct Config {
    pub model: ModelSpec,
    pub workload: WorkloadSpec,
    pub mapping: MappingSpec,
}

pub fn runner(cases: u32) -> TestRunner {
    let config = ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn divisors(n: u64) -> Vec<u64> {
    (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
}

fn pick(v: Vec<u64>) -> impl Strategy<Value = u64> {
    prop::sample::select(v)
}

fn model() -> impl Strategy<Value = ModelSpec> {
    (
        pick(vec![2, 4, 8]),
        pick(vec![2, 4, 8]),
        pick(vec![8, 16, 32]),
        pick(vec![2, 4]),
        any::<bool>(),
    )
        .prop_map(|(layers, heads, head_dim, ffn_mult, moe)| {
            let hidden = heads * head_dim;
            ModelSpec {
                name: "prop".into(),
                num_layers: layers,
                hidden_dim: hidden,
                num_heads: heads,
                head_dim,
                ffn_dim: hidden * ffn_mult,
                vocab_size: 1000,
                tied_embeddings: true,
                kv_heads: None,
                moe: moe.then_some(MoeSpec {
                    num_experts: 4,
                    active_experts: 2,
                }),
                default_precision: Precision::Bf16,
            }
        })
}

fn workload() -> impl Strategy<Value = WorkloadSpec> {
    prop_oneof![
        (pick(vec![1, 2, 4, 8]), pick(vec![8, 16, 32])).prop_flat_map(|(batch, seq)| {
            pick(divisors(batch)).prop_map(move |mb| WorkloadSpec::training(batch, seq, mb))
        }),
        (pick(vec![1, 2, 4]), 4u64..16, 0u64..4)
            .prop_map(|(batch, prompt, gen)| WorkloadSpec::inference(batch, prompt, gen)),
    ]
}

/// Any model, scenario and mapping the mapper accepts.
pub fn config() -> impl Strategy<Value = Config> {
    (model(), workload()).prop_flat_map(|(model, workload)| {
        let tps = divisors(model.num_heads);
        let pps = divisors(model.num_layers);
        let dps = divisors(workload.batch / workload.microbatches);
        (pick(tps), pick(pps), pick(dps)).prop_map(move |(tp, pp, dp)| Config {
            model: model.clone(),
            workload: workload.clone(),
            mapping: MappingSpec::new(tp, pp, dp, workload.microbatches),
        })
    })
}

pub fn system<T: Scalar>(devices: u64) -> SystemSpec<T> {
    let mut s: SystemSpec<T> = scd_blade();
    s.device_count = devices as u32;
    s.interconnect.topology = Topology::FullyConnectedAbstract;
    s.set_uncapped_dram_bandwidth(T::from_real(4e12));
    s
}

pub fn report<T: Scalar>(c: &Config, sys: &SystemSpec<T>) -> PerfReport<T> {
    let g = build_graph(&c.model, &c.workload).unwrap();
    let mg = apply_parallelism(&g, &c.mapping, &c.model).unwrap();
    evaluate(&mg, sys, &MemoryAccessModel::default()).unwrap()
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

#[derive(Debug, Clone, Copy)]
enum Knob {
    DramBandwidth,
    L2Bandwidth,
    L1Bandwidth,
    LinkBandwidth,
    Peak,
    DramLatency,
    L2Latency,
    LinkLatency,
}

impl Knob {
    fn is_latency(self) -> bool {
        matches!(self, Knob::DramLatency | Knob::L2Latency | Knob::LinkLatency)
    }

    fn scale(self, s: &mut SystemSpec<f64>, f: f64) {
        let levels = &mut s.device.memory_levels;
        match self {
            Knob::DramBandwidth => {
                let bw = s.main_memory.per_device_bandwidth * f;
                s.set_uncapped_dram_bandwidth(bw);
            }
            Knob::L2Bandwidth => {
                levels[1].read_bandwidth *= f;
                levels[1].write_bandwidth *= f;
            }
            Knob::L1Bandwidth => {
                levels[0].read_bandwidth *= f;
                levels[0].write_bandwidth *= f;
            }
            Knob::LinkBandwidth => s.interconnect.link_bandwidth *= f,
            Knob::Peak => {
                for v in s.device.peak_flops.values_mut() {
                    *v *= f;
                }
            }
            Knob::DramLatency => s.main_memory.access_latency *= f,
            Knob::L2Latency => levels[1].access_latency *= f,
            Knob::LinkLatency => s.interconnect.link_latency *= f,
        }
    }
}

fn knob() -> impl Strategy<Value = Knob> {
    prop::sample::select(vec![
        Knob::DramBandwidth,
        Knob::L2Bandwidth,
        Knob::L1Bandwidth,
        Knob::LinkBandwidth,
        Knob::Peak,
        Knob::DramLatency,
        Knob::L2Latency,
        Knob::LinkLatency,
    ])
}

pub fn zero_latencies<T: Scalar>(s: &mut SystemSpec<T>) {
    for l in &mut s.device.memory_levels {
        l.access_latency = T::zero();
    }
    s.main_memory.access_latency = T::zero();
    s.interconnect.link_latency = T::zero();
}

/// Multiplies every bandwidth and compute rate by `factor`.
pub fn scale_rates<T: Scalar>(s: &mut SystemSpec<T>, factor: f64) {
    let c = T::from_real(factor);
    for l in &mut s.device.memory_levels {
        l.read_bandwidth = l.read_bandwidth * c;
        l.write_bandwidth = l.write_bandwidth * c;
    }
    for v in s.device.peak_flops.values_mut() {
        *v = *v * c;
    }
    let mm = &mut s.main_memory;
    mm.per_device_bandwidth = mm.per_device_bandwidth * c;
    mm.total_read_bandwidth = mm.total_read_bandwidth * c;
    mm.total_write_bandwidth = mm.total_write_bandwidth * c;
    s.interconnect.link_bandwidth = s.interconnect.link_bandwidth * c;
    s.interconnect.per_device_injection_bandwidth = s.interconnect.per_device_injection_bandwidth * c;
}

type Check = Result<(), String>;

/// Sharding never creates or loses model work.
pub fn flops_conservation(cases: u32) -> Check {
    runner(cases)
        .run(&config(), |c| {
            let g = build_graph(&c.model, &c.workload).unwrap();
            let mg = apply_parallelism(&g, &c.mapping, &c.model).unwrap();
            prop_assert_eq!(mg.useful_flops(), g.metadata.totals.useful_flops);
            let r = report(&c, &system::<f64>(c.mapping.devices()));
            prop_assert_eq!(r.useful_flops, g.metadata.totals.useful_flops);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Raising a bandwidth or rate never slows a step; raising a latency never
/// speeds it up.
pub fn monotone_in_hardware(cases: u32) -> Check {
    runner(cases)
        .run(&(config(), knob(), 1.0f64..10.0), |(c, k, f)| {
            let base = system::<f64>(c.mapping.devices());
            let mut changed = base.clone();
            k.scale(&mut changed, f);
            let before = report(&c, &base).total_time;
            let after = report(&c, &changed).total_time;
            if k.is_latency() {
                prop_assert!(after >= before * (1.0 - 1e-12), "{k:?}×{f}: {before} → {after}");
            } else {
                prop_assert!(after <= before * (1.0 + 1e-12), "{k:?}×{f}: {before} → {after}");
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn breakdown_additivity(cases: u32) -> Check {
    runner(cases)
        .run(&config(), |c| {
            let r = report(&c, &system::<f64>(c.mapping.devices()));
            let sum = r.compute_time + r.communication_time + r.other_time;
            prop_assert!(rel_diff(sum, r.total_time) <= 1e-9, "{sum} vs {}", r.total_time);
            prop_assert!(rel_diff(r.other_time, r.bubble_time + r.weight_update_time) <= 1e-9);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn determinism(cases: u32) -> Check {
    runner(cases)
        .run(&config(), |c| {
            let sys = system::<f64>(c.mapping.devices());
            let a = serde_json::to_string(&report(&c, &sys)).unwrap();
            let b = serde_json::to_string(&report(&c, &sys)).unwrap();
            prop_assert_eq!(a, b);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// With every latency at zero, scaling all rates by c scales time by 1/c.
pub fn scale_invariance(cases: u32) -> Check {
    let factors = prop::sample::select(vec![2.0, 3.5, 10.0, 0.25]);
    runner(cases)
        .run(&(config(), factors), |(c, factor)| {
            let mut base = system::<f64>(c.mapping.devices());
            zero_latencies(&mut base);
            let mut fast = base.clone();
            scale_rates(&mut fast, factor);
            let t0 = report(&c, &base).total_time;
            let t1 = report(&c, &fast).total_time;
            prop_assert!(rel_diff(t1 * factor, t0) <= 1e-9, "{t0} vs {t1}×{factor}");
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Additivity and scale invariance in rational arithmetic, with no tolerance.
pub fn exact_identities(cases: u32) -> Check {
    let factors = prop::sample::select(vec![2.0, 3.0, 0.5]);
    runner(cases)
        .run(&(config(), factors), |(c, factor)| {
            let mut base = system::<Exact>(c.mapping.devices());
            let r = report(&c, &base);
            prop_assert_eq!(r.compute_time + r.communication_time + r.other_time, r.total_time);
            zero_latencies(&mut base);
            let mut fast = base.clone();
            scale_rates(&mut fast, factor);
            let t0 = report(&c, &base).total_time;
            let t1 = report(&c, &fast).total_time;
            prop_assert_eq!(t1 * Exact::from_real(factor), t0);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Closed-form ring allreduce equals the step-wise simulation for every
/// ring size 2..=16, per random payload.
pub fn ring_oracle(payloads: u32) -> Check {
    let inputs = (1u64..2_000_000_000_000, 1i128..1_000_000, 0i128..10_000);
    runner(payloads)
        .run(&inputs, |(payload, bw_mb, lat_ns)| {
            let bw = Exact::from_integer(bw_mb * 1_000_000);
            let lat = Exact::new(lat_ns, 1_000_000_000);
            for n in 2..=16 {
                prop_assert_eq!(
                    ring_allreduce(n, payload, bw, lat),
                    simulate_ring_allreduce(n, payload, bw, lat),
                    "n={}",
                    n
                );
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}
