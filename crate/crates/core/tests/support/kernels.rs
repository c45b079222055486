//! Hand-computed kernel times. Every expected value is worked out from the
//! roofline formula by hand; the comment above each case shows the sum.

use std::collections::BTreeMap;

use bladeperf_core::engine::{time_kernel, BoundClass, MemoryAccessModel};
use bladeperf_core::hwspec::{scd_blade, DeviceSpec, MemoryLevel, MemoryScope, Precision};
use bladeperf_core::workload::{
    Axis, ElementSplit, Elementwise, Gemm, Grad, Kernel, KernelKind, KernelTag, Pass, Role, TensorClass,
};
use bladeperf_core::{Exact, Scalar};

const L2: usize = 1;
const DRAM: usize = 2;

pub struct Outcome {
    pub time: f64,
    pub expected: f64,
    pub bound: BoundClass,
    pub expected_bound: BoundClass,
}

impl Outcome {
    pub fn rel_error(&self) -> f64 {
        if self.time == self.expected {
            0.0
        } else {
            ((self.time - self.expected) / self.expected).abs()
        }
    }

    pub fn ok(&self) -> bool {
        self.rel_error() <= 1e-12 && self.bound == self.expected_bound
    }
}

pub struct KernelCase {
    pub name: &'static str,
    pub run: fn() -> Outcome,
}

fn tag() -> KernelTag {
    KernelTag {
        pass: Pass::Forward,
        step: 0,
        layer: Some(0),
        role: Role::Qkv,
        grad: Grad::None,
    }
}

fn gemm(m: u64, n: u64, k: u64) -> Kernel {
    use TensorClass::{Activation as A, Weight as W};
    Kernel::new(
        tag(),
        KernelKind::Gemm(Gemm {
            m,
            n,
            k,
            batch_count: 1,
            classes: [A, W, A],
            data_axis: Axis::M,
            tensor_axis: Axis::N,
        }),
    )
}

fn elementwise(elements: u64, flops: u64, read: u64, written: u64) -> Kernel {
    Kernel::new(
        tag(),
        KernelKind::Elementwise(Elementwise {
            elements,
            flops_per_element: flops,
            bytes_read: read,
            bytes_written: written,
            class: TensorClass::Activation,
            split: ElementSplit::Sharded,
        }),
    )
}

/// SCD device at 16 TB/s per device: l1, l2 (64 TB/s, 2 ns), dram (30 ns).
fn scd() -> (DeviceSpec<f64>, Vec<MemoryLevel<f64>>) {
    let mut sys = scd_blade::<f64>();
    sys.set_uncapped_dram_bandwidth(16e12);
    let levels = sys.hierarchy(64).unwrap();
    (sys.device, levels)
}

fn unit_device(peak: f64, bw: f64, latency: f64) -> (DeviceSpec<Exact>, Vec<MemoryLevel<Exact>>) {
    let e = Exact::from_real;
    let dev = DeviceSpec {
        name: "unit".into(),
        clock: e(1e9),
        peak_flops: BTreeMap::from([(Precision::Bf16, e(peak))]),
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

fn time<T: Scalar>(
    k: &Kernel,
    dev: &DeviceSpec<T>,
    levels: &[MemoryLevel<T>],
    at: &[usize],
    expected: f64,
    expected_bound: BoundClass,
) -> Outcome {
    let t = time_kernel(k, dev, levels, at, &MemoryAccessModel::default(), Precision::Bf16).unwrap();
    Outcome {
        time: t.time.to_real(),
        expected,
        bound: t.bound,
        expected_bound,
    }
}

pub const KERNEL_CASES: [KernelCase; 10] = [
    // 2·1024³ / (2.45e15·0.8) = 2147483648 / 1.96e15. Memory: 6291456 B /
    // 16e12 = 3.93e-7; latency 1536/64·30e-9 = 7.2e-7.
    KernelCase {
        name: "1024³ gemm from dram is compute bound",
        run: || {
            let (dev, levels) = scd();
            time(
                &gemm(1024, 1024, 1024),
                &dev,
                &levels,
                &[DRAM; 3],
                1.0956549224489796e-6,
                BoundClass::Compute,
            )
        },
    },
    KernelCase {
        name: "empty kernel takes no time",
        run: || {
            let (dev, levels) = scd();
            time(
                &elementwise(0, 0, 0, 0),
                &dev,
                &levels,
                &[DRAM; 2],
                0.0,
                BoundClass::Compute,
            )
        },
    },
    // Infinite bandwidth and no latency leave the compute term alone.
    KernelCase {
        name: "degenerate memory leaves compute",
        run: || {
            let (dev, mut levels) = scd();
            for l in &mut levels {
                l.read_bandwidth = 1e300;
                l.write_bandwidth = 1e300;
                l.access_latency = 0.0;
            }
            time(
                &gemm(1024, 1024, 1024),
                &dev,
                &levels,
                &[DRAM; 3],
                2147483648.0 / 1.96e15,
                BoundClass::Compute,
            )
        },
    },
    // 8e9 B in + 8e9 B out at 4 TB/s each way: 2e-3 + 2e-3. Latency:
    // 3906250 requests / 64 · 30e-9 = 1.83e-3.
    KernelCase {
        name: "streaming at 4 TB/s is bandwidth bound",
        run: || {
            let (dev, mut levels) = scd();
            levels[DRAM].read_bandwidth = 4e12;
            levels[DRAM].write_bandwidth = 4e12;
            let k = elementwise(4_000_000_000, 1, 8_000_000_000, 8_000_000_000);
            time(
                &k,
                &dev,
                &levels,
                &[DRAM; 2],
                4e-3,
                BoundClass::Memory(DRAM as u8),
            )
        },
    },
    // Same traffic at 16 TB/s: bandwidth 1e-3 < latency
    // ceil(16e9 / 4096) / 64 · 30e-9 = 3906250 / 64 · 30e-9.
    KernelCase {
        name: "streaming at 16 TB/s is latency bound",
        run: || {
            let (dev, levels) = scd();
            let k = elementwise(4_000_000_000, 1, 8_000_000_000, 8_000_000_000);
            time(
                &k,
                &dev,
                &levels,
                &[DRAM; 2],
                1.8310546875e-3,
                BoundClass::Latency(DRAM as u8),
            )
        },
    },
    // 2e9 / 2e12 + 1e9 / 1e12. Latency: 732422 / 64 · 30e-9 = 3.43e-4.
    KernelCase {
        name: "read and write directions add",
        run: || {
            let (dev, mut levels) = scd();
            levels[DRAM].read_bandwidth = 2e12;
            levels[DRAM].write_bandwidth = 1e12;
            let k = elementwise(1, 1, 2_000_000_000, 1_000_000_000);
            time(
                &k,
                &dev,
                &levels,
                &[DRAM; 2],
                2e-3,
                BoundClass::Memory(DRAM as u8),
            )
        },
    },
    // Decode gemv, weights in dram: 16384²·2 = 536870912 B, 3.36e-5 s of
    // bandwidth against 131072 / 64 · 30e-9 = 6.144e-5 of latency.
    KernelCase {
        name: "decode gemv is weight latency bound",
        run: || {
            let (dev, levels) = scd();
            time(
                &gemm(1, 16384, 16384),
                &dev,
                &levels,
                &[L2, DRAM, L2],
                6.144e-5,
                BoundClass::Latency(DRAM as u8),
            )
        },
    },
    // 6.4e10 B read at l2 / 64e12 = 1e-3; l2 latency 4.88e-4; 1e6 B written
    // to dram 6.25e-8.
    KernelCase {
        name: "slowest level wins",
        run: || {
            let (dev, levels) = scd();
            let k = elementwise(1, 1, 64_000_000_000, 1_000_000);
            time(&k, &dev, &levels, &[L2, DRAM], 1e-3, BoundClass::Memory(L2 as u8))
        },
    },
    // Compute 1e6 / 1e15 ties memory 1000 / 1e12; compute takes the label.
    KernelCase {
        name: "compute wins a tie with memory",
        run: || {
            let (dev, levels) = unit_device(1e15, 1e12, 0.0);
            time(
                &elementwise(1_000_000, 1, 1000, 0),
                &dev,
                &levels,
                &[0, 0],
                1e-9,
                BoundClass::Compute,
            )
        },
    },
    // 262144 B at 2.62144e11 B/s ties one latency round of 64 requests.
    KernelCase {
        name: "bandwidth wins a tie with latency",
        run: || {
            let (dev, levels) = unit_device(1e15, 2.62144e11, 1e-6);
            time(
                &elementwise(1, 1, 262_144, 0),
                &dev,
                &levels,
                &[0, 0],
                1e-6,
                BoundClass::Memory(0),
            )
        },
    },
];
