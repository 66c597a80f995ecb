//! Joule accounting for the training, communication and aggregation phases.

use serde::{Deserialize, Serialize};

use crate::domain::{CommMedium, HardwareProfile, NodeId, NodeProfile, Phase, JOULES_PER_KWH};

/// One measured (node, round, phase) workload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseObservation {
    pub node: NodeId,
    /// 1-based round index.
    pub round: u32,
    pub phase: Phase,
    pub duration_s: f64,
    pub bytes_sent: u64,
    pub bytes_recv: u64,
}

impl PhaseObservation {
    pub fn key(&self) -> (NodeId, u32, Phase) {
        (self.node, self.round, self.phase)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub node: NodeId,
    pub round: u32,
    pub phase: Phase,
    pub cpu_joules: f64,
    pub gpu_joules: f64,
    pub comm_joules: f64,
    pub total_joules: f64,
}

impl EnergyRecord {
    pub fn new(node: NodeId, round: u32, phase: Phase, cpu: f64, gpu: f64, comm: f64) -> Self {
        Self {
            node,
            round,
            phase,
            cpu_joules: cpu,
            gpu_joules: gpu,
            comm_joules: comm,
            total_joules: cpu + gpu + comm,
        }
    }

    pub fn key(&self) -> (NodeId, u32, Phase) {
        (self.node, self.round, self.phase)
    }

    pub fn kwh(&self) -> f64 {
        self.total_joules / JOULES_PER_KWH
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ComputeEnergy {
    pub cpu_joules: f64,
    pub gpu_joules: f64,
}

fn compute_energy(profile: &HardwareProfile, utilization: f64, duration_s: f64) -> ComputeEnergy {
    ComputeEnergy {
        cpu_joules: profile.pue * profile.tdp_watts * utilization * duration_s,
        gpu_joules: profile.gpu.map_or(0.0, |g| g.power_watts * duration_s),
    }
}

/// `PUE · TDP · β_train · T` on the CPU plus `P_gpu · T` when a GPU is present.
pub fn training_energy(profile: &HardwareProfile, duration_s: f64) -> ComputeEnergy {
    compute_energy(profile, profile.cpu_utilization_train, duration_s)
}

/// Same form as [`training_energy`] with the aggregation utilization.
pub fn aggregation_energy(profile: &HardwareProfile, duration_s: f64) -> ComputeEnergy {
    compute_energy(profile, profile.cpu_utilization_agg, duration_s)
}

/// `(B_sent + B_recv) · E_byte`.
pub fn communication_energy(medium: &CommMedium, bytes_sent: u64, bytes_recv: u64) -> f64 {
    (bytes_sent + bytes_recv) as f64 * medium.energy_per_byte
}

/// Converts one observation into joules using the observing node's profile.
pub fn energy_record(profile: &NodeProfile, obs: &PhaseObservation) -> EnergyRecord {
    let (cpu, gpu, comm) = match obs.phase {
        Phase::Training => {
            let e = training_energy(&profile.hardware, obs.duration_s);
            (e.cpu_joules, e.gpu_joules, 0.0)
        }
        Phase::Aggregation => {
            let e = aggregation_energy(&profile.hardware, obs.duration_s);
            (e.cpu_joules, e.gpu_joules, 0.0)
        }
        Phase::Communication => (
            0.0,
            0.0,
            communication_energy(&profile.medium, obs.bytes_sent, obs.bytes_recv),
        ),
    };
    EnergyRecord::new(obs.node, obs.round, obs.phase, cpu, gpu, comm)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyTotals {
    /// Indexed by [`Phase::index`].
    pub per_phase_kwh: [f64; 3],
    pub total_kwh: f64,
}

impl EnergyTotals {
    pub fn phase_kwh(&self, phase: Phase) -> f64 {
        self.per_phase_kwh[phase.index()]
    }
}

/// Records in canonical (node, round, phase) order.
pub fn canonical_order<T: Copy, K: Ord>(records: &[T], key: impl Fn(&T) -> K) -> Vec<T> {
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| key(r));
    sorted
}

/// Per-phase and overall energy in kWh, summed in (node, round, phase) order.
pub fn total_energy(records: &[EnergyRecord]) -> EnergyTotals {
    let mut joules = [0.0f64; 3];
    for r in canonical_order(records, EnergyRecord::key) {
        joules[r.phase.index()] += r.total_joules;
    }
    let per_phase_kwh = joules.map(|j| j / JOULES_PER_KWH);
    EnergyTotals {
        per_phase_kwh,
        total_kwh: per_phase_kwh.iter().sum(),
    }
}

/// Joules per node id, summed in canonical order.
pub fn energy_per_node(records: &[EnergyRecord], node_count: usize) -> Vec<f64> {
    let mut out = vec![0.0; node_count];
    for r in canonical_order(records, EnergyRecord::key) {
        out[r.node.index()] += r.total_joules;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{GpuProfile, MediumKind};
    use proptest::prelude::*;

    fn hw(pue: f64, tdp: f64, beta: f64, gpu: Option<f64>) -> HardwareProfile {
        HardwareProfile {
            pue,
            tdp_watts: tdp,
            gpu: gpu.map(|power_watts| GpuProfile { power_watts }),
            cpu_utilization_train: beta,
            cpu_utilization_agg: beta,
        }
    }

    #[test]
    fn one_hour_at_200_watts() {
        let e = training_energy(&hw(1.0, 200.0, 1.0, None), 3600.0);
        assert_eq!(e.cpu_joules, 720_000.0);
        assert_eq!(e.gpu_joules, 0.0);
        assert_eq!(e.cpu_joules / JOULES_PER_KWH, 0.2);
    }

    #[test]
    fn zero_duration() {
        assert_eq!(
            training_energy(&hw(1.3, 150.0, 0.7, Some(50.0)), 0.0),
            ComputeEnergy::default()
        );
    }

    #[test]
    fn cpu_and_gpu_terms() {
        // independent oracle: spell the products out term by term
        let oracle_cpu = 1.2 * 200.0 * 0.5 * 100.0;
        let oracle_gpu = 70.0 * 100.0;
        let e = training_energy(&hw(1.2, 200.0, 0.5, Some(70.0)), 100.0);
        assert!((e.cpu_joules - oracle_cpu).abs() < 1e-9);
        assert!((e.cpu_joules - 12_000.0).abs() < 1e-9);
        assert_eq!(e.gpu_joules, oracle_gpu);
        assert_eq!(e.gpu_joules, 7000.0);
    }

    #[test]
    fn aggregation_uses_its_own_utilization() {
        let mut p = hw(1.0, 200.0, 0.5, None);
        assert_eq!(aggregation_energy(&p, 2.0).cpu_joules, 200.0);
        assert_eq!(aggregation_energy(&p, 7.0), training_energy(&p, 7.0));
        p.cpu_utilization_agg = 0.0;
        assert_eq!(aggregation_energy(&p, 1e6).cpu_joules, 0.0);
    }

    #[test]
    fn communication_constants() {
        let wired = CommMedium::wired();
        assert_eq!(communication_energy(&wired, 0, 0), 0.0);
        assert!((communication_energy(&wired, 1_000_000, 1_000_000) - 1.6e-4).abs() < 1e-18);
        let bytes = 123_456;
        for kind in MediumKind::BUILTIN {
            let m = CommMedium::builtin(kind).unwrap();
            assert_eq!(
                communication_energy(&m, bytes, bytes),
                (2 * bytes) as f64 * m.energy_per_byte
            );
        }
    }

    #[test]
    fn totals() {
        assert_eq!(total_energy(&[]), EnergyTotals::default());
        let r = EnergyRecord::new(NodeId(0), 1, Phase::Training, 3.6e6, 0.0, 0.0);
        let t = total_energy(&[r]);
        assert_eq!(t.phase_kwh(Phase::Training), 1.0);
        assert_eq!(t.total_kwh, 1.0);
    }

    fn arb_record() -> impl Strategy<Value = EnergyRecord> {
        (
            0u32..8,
            1u32..6,
            0usize..3,
            0.0f64..1e5,
            0.0f64..1e4,
            0.0f64..1.0,
        )
            .prop_map(|(n, r, p, cpu, gpu, comm)| {
                let phase = Phase::ALL[p];
                let (cpu, gpu, comm) = if phase == Phase::Communication {
                    (0.0, 0.0, comm)
                } else {
                    (cpu, gpu, 0.0)
                };
                EnergyRecord::new(NodeId(n), r, phase, cpu, gpu, comm)
            })
    }

    proptest! {
        #[test]
        fn total_matches_naive_sum(records in proptest::collection::vec(arb_record(), 0..60)) {
            let t = total_energy(&records);
            let naive: f64 = records.iter().map(|r| r.total_joules / JOULES_PER_KWH).sum();
            prop_assert!((t.total_kwh - naive).abs() <= 1e-12 * naive.abs().max(f64::MIN_POSITIVE));
            let phases: f64 = t.per_phase_kwh.iter().sum();
            prop_assert_eq!(phases, t.total_kwh);
        }

        #[test]
        fn linear_in_utilization_and_duration(beta in 0.0f64..1.0, t in 0.0f64..1e4, a in 0.0f64..1.0) {
            let p = hw(1.1, 180.0, beta, Some(40.0));
            let scaled = hw(1.1, 180.0, a * beta, Some(40.0));
            let base = training_energy(&p, t).cpu_joules;
            prop_assert!((training_energy(&scaled, t).cpu_joules - a * base).abs() <= 1e-9 * base.max(1.0));
            let longer = training_energy(&p, a * t);
            prop_assert!((longer.cpu_joules - a * base).abs() <= 1e-9 * base.max(1.0));
            prop_assert!((longer.gpu_joules - a * training_energy(&p, t).gpu_joules).abs() <= 1e-9 * (40.0 * t).max(1.0));
        }

        #[test]
        fn monotone(beta in 0.0f64..0.9, t in 0.0f64..1e4, dt in 0.0f64..10.0, b in 0u64..1_000_000, db in 0u64..1000) {
            let p = hw(1.0, 200.0, beta, Some(30.0));
            let q = hw(1.0, 200.0, beta + 0.1, Some(30.0));
            let e = |h: &HardwareProfile, d: f64| { let c = training_energy(h, d); c.cpu_joules + c.gpu_joules };
            prop_assert!(e(&p, t + dt) >= e(&p, t));
            prop_assert!(e(&q, t) >= e(&p, t));
            let m = CommMedium::wired();
            prop_assert!(communication_energy(&m, b + db, b) >= communication_energy(&m, b, b));
        }
    }
}
