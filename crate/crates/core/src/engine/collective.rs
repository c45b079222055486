//! Closed-form ring collectives and point-to-point transfers.

use crate::hwspec::InterconnectSpec;
use crate::scalar::Scalar;
use crate::workload::{CollectiveOp, KernelKind};

/// Ring allreduce over `n` ranks:
/// `2(n−1)/n · payload / bw + 2(n−1) · latency`.
pub fn ring_allreduce<T: Scalar>(n: u32, payload: u64, bw: T, latency: T) -> T {
    ring(n, payload, bw, latency, 2)
}

/// Ring allgather: `(n−1)/n · payload / bw + (n−1) · latency`.
pub fn ring_allgather<T: Scalar>(n: u32, payload: u64, bw: T, latency: T) -> T {
    ring(n, payload, bw, latency, 1)
}

fn ring<T: Scalar>(n: u32, payload: u64, bw: T, latency: T, phases: u64) -> T {
    if n <= 1 {
        return T::zero();
    }
    let n64 = u64::from(n);
    let steps = T::from_count(phases * (n64 - 1));
    steps * T::from_count(payload) / T::from_count(n64) / bw + steps * latency
}

pub fn p2p<T: Scalar>(payload: u64, bw: T, latency: T) -> T {
    T::from_count(payload) / bw + latency
}

/// Time of a communication kernel, or `None` for compute kernels.
pub fn time_collective<T: Scalar>(kind: &KernelKind, net: &InterconnectSpec<T>) -> Option<T> {
    let (bw, lat) = (net.link_bandwidth, net.link_latency);
    match *kind {
        KernelKind::Collective {
            op: CollectiveOp::AllReduce,
            payload,
            group_size,
        } => Some(ring_allreduce(group_size, payload, bw, lat)),
        KernelKind::Collective {
            op: CollectiveOp::AllGather,
            payload,
            group_size,
        } => Some(ring_allgather(group_size, payload, bw, lat)),
        KernelKind::P2p { payload } => Some(p2p(payload, bw, lat)),
        KernelKind::Gemm(_) | KernelKind::Elementwise(_) => None,
    }
}

/// Step-wise ring simulation: reduce-scatter then allgather, each rank
/// forwarding `payload/n`-sized chunks to its neighbour. A step lasts as long
/// as the busiest rank's sends.
pub fn simulate_ring_allreduce<T: Scalar>(n: u32, payload: u64, bw: T, latency: T) -> T {
    if n <= 1 {
        return T::zero();
    }
    let n = n as usize;
    let chunk = T::from_count(payload) / T::from_count(n as u64);
    let step_cost = |sends: &[usize]| {
        sends.iter().filter(|&&s| s > 0).fold(T::zero(), |acc, &s| {
            acc.max_of(T::from_count(s as u64) * chunk / bw + latency)
        })
    };
    // held[r][c]: contributions to chunk c accumulated at rank r.
    let mut held = vec![vec![1usize; n]; n];
    let mut total = T::zero();
    for step in 0..n - 1 {
        let before = held.clone();
        let mut sends = vec![0usize; n];
        for r in 0..n {
            let c = (r + n - step) % n;
            held[(r + 1) % n][c] += before[r][c];
            sends[r] += 1;
        }
        total = total + step_cost(&sends);
    }
    let mut done: Vec<Vec<bool>> = held
        .iter()
        .map(|row| row.iter().map(|&h| h == n).collect())
        .collect();
    assert!(done.iter().all(|row| row.iter().filter(|&&d| d).count() == 1));
    while !done.iter().all(|row| row.iter().all(|&d| d)) {
        let before = done.clone();
        let mut sends = vec![0usize; n];
        for r in 0..n {
            for c in 0..n {
                if before[r][c] && !before[(r + 1) % n][c] {
                    done[(r + 1) % n][c] = true;
                    sends[r] += 1;
                }
            }
        }
        total = total + step_cost(&sends);
    }
    total
}
