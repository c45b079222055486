use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::kernel::{kernel_bytes, ByteCount, Kernel, KernelKind, KernelTag};
use super::model::Phase;
use super::WorkloadError;
use crate::hwspec::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GraphTotals {
    pub flops: u128,
    pub useful_flops: u128,
    pub bytes_read: u128,
    pub bytes_written: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub phase: Phase,
    pub model: String,
    pub precision: Precision,
    pub batch: u64,
    pub seq_len: u64,
    pub gen_tokens: u64,
    pub totals: GraphTotals,
}

/// DAG of kernels. Kernels are stored in a valid execution order and deps
/// refer to indices into `kernels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub kernels: Vec<Kernel>,
    pub metadata: GraphMeta,
}

pub fn totals_of<'a>(kernels: impl IntoIterator<Item = &'a Kernel>, p: Precision) -> GraphTotals {
    let mut t = GraphTotals::default();
    for k in kernels {
        let ByteCount { read, written } = kernel_bytes(k, p);
        t.flops += k.flops();
        t.useful_flops += k.useful_flops;
        t.bytes_read += u128::from(read);
        t.bytes_written += u128::from(written);
    }
    t
}

impl TaskGraph {
    /// Wraps kernels and records their totals in the metadata.
    pub fn new(kernels: Vec<Kernel>, mut metadata: GraphMeta) -> Self {
        metadata.totals = totals_of(&kernels, metadata.precision);
        TaskGraph { kernels, metadata }
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// Kahn's algorithm over the dependency lists.
    pub fn topological_order(&self) -> Result<Vec<usize>, WorkloadError> {
        let n = self.kernels.len();
        let mut indegree = vec![0usize; n];
        let mut users: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, k) in self.kernels.iter().enumerate() {
            for &d in &k.deps {
                let d = d as usize;
                if d >= n {
                    return Err(WorkloadError::InvalidGraph(format!(
                        "{} depends on missing kernel #{d}",
                        k.id()
                    )));
                }
                indegree[i] += 1;
                users[d].push(i);
            }
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).rev().collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop() {
            order.push(i);
            for &u in users[i].iter().rev() {
                indegree[u] -= 1;
                if indegree[u] == 0 {
                    ready.push(u);
                }
            }
        }
        if order.len() != n {
            return Err(WorkloadError::InvalidGraph("dependency cycle".into()));
        }
        Ok(order)
    }

    /// Checks unique ids, acyclicity and that recorded totals match the
    /// kernel-wise sums.
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let mut seen = HashSet::with_capacity(self.kernels.len());
        for k in &self.kernels {
            if !seen.insert(k.tag) {
                return Err(WorkloadError::InvalidGraph(format!("duplicate id {}", k.id())));
            }
        }
        self.topological_order()?;
        let expected = totals_of(&self.kernels, self.metadata.precision);
        if expected != self.metadata.totals {
            return Err(WorkloadError::InvalidGraph(format!(
                "totals {:?} do not match kernel sums {:?}",
                self.metadata.totals, expected
            )));
        }
        Ok(())
    }

    pub fn dump(&self) -> GraphDump {
        dump_kernels(&self.kernels, self.metadata.precision, self.metadata.clone())
    }
}

/// Flat, self-describing export of a graph for inspection and golden tests.
#[derive(Debug, Clone, Serialize)]
pub struct GraphDump {
    pub metadata: GraphMeta,
    pub kernels: Vec<KernelDump>,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelDump {
    pub id: String,
    pub tag: KernelTag,
    pub kind: KernelKind,
    pub deps: Vec<String>,
    pub flops: u128,
    pub useful_flops: u128,
    pub bytes_read: u64,
    pub bytes_written: u64,
}

pub fn dump_kernels(kernels: &[Kernel], precision: Precision, metadata: GraphMeta) -> GraphDump {
    let ids: Vec<String> = kernels.iter().map(Kernel::id).collect();
    let kernels = kernels
        .iter()
        .zip(&ids)
        .map(|(k, id)| {
            let bytes = kernel_bytes(k, precision);
            KernelDump {
                id: id.clone(),
                tag: k.tag,
                kind: k.kind,
                deps: k.deps.iter().map(|&d| ids[d as usize].clone()).collect(),
                flops: k.flops(),
                useful_flops: k.useful_flops,
                bytes_read: bytes.read,
                bytes_written: bytes.written,
            }
        })
        .collect();
    GraphDump { metadata, kernels }
}
