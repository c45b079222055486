mod support;

use std::collections::BTreeMap;

use bladeperf_core::engine::{time_kernel, BoundClass, MemoryAccessModel};
use bladeperf_core::hwspec::{DeviceSpec, MemoryLevel, MemoryScope, Precision};
use bladeperf_core::workload::{
    ElementSplit, Elementwise, Grad, Kernel, KernelKind, KernelTag, Pass, Role, TensorClass,
};
use bladeperf_core::{Exact, Scalar};
use support::kernels::KERNEL_CASES;

#[test]
fn hand_computed_kernels() {
    let mut failures = Vec::new();
    for case in &KERNEL_CASES {
        let o = (case.run)();
        if !o.ok() {
            failures.push(format!(
                "{}: got {:e} ({:?}), expected {:e} ({:?})",
                case.name, o.time, o.bound, o.expected, o.expected_bound
            ));
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

fn unit(bw: f64, latency: f64) -> (DeviceSpec<Exact>, Vec<MemoryLevel<Exact>>) {
    let e = Exact::from_real;
    let dev = DeviceSpec {
        name: "unit".into(),
        clock: e(1e9),
        peak_flops: BTreeMap::from([(Precision::Bf16, e(1e15))]),
        utilization_ceiling: e(1.0),
        memory_levels: Vec::new(),
    };
    let level = MemoryLevel {
        name: "mem".into(),
        capacity: 1 << 40,
        read_bandwidth: e(bw),
        write_bandwidth: e(bw),
        access_latency: e(latency),
        scope: MemoryScope::PerDevice,
    };
    (dev, vec![level])
}

fn stream(elements: u64, read: u64) -> Kernel {
    let tag = KernelTag {
        pass: Pass::Forward,
        step: 0,
        layer: Some(0),
        role: Role::Qkv,
        grad: Grad::None,
    };
    Kernel::new(
        tag,
        KernelKind::Elementwise(Elementwise {
            elements,
            flops_per_element: 1,
            bytes_read: read,
            bytes_written: 0,
            class: TensorClass::Activation,
            split: ElementSplit::Sharded,
        }),
    )
}

#[test]
fn ties_are_exact_in_rationals() {
    let mam = MemoryAccessModel::default();
    let (dev, levels) = unit(1e12, 0.0);
    let t = time_kernel(
        &stream(1_000_000, 1000),
        &dev,
        &levels,
        &[0, 0],
        &mam,
        Precision::Bf16,
    )
    .unwrap();
    assert_eq!(t.time, Exact::new(1, 1_000_000_000));
    assert_eq!(t.bound, BoundClass::Compute);

    let (dev, levels) = unit(2.62144e11, 1e-6);
    let t = time_kernel(&stream(1, 262_144), &dev, &levels, &[0, 0], &mam, Precision::Bf16).unwrap();
    assert_eq!(t.time, Exact::new(1, 1_000_000));
    assert_eq!(t.bound, BoundClass::Memory(0));
}
