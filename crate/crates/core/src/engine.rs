//! The round loop: local training, model exchange, aggregation, accounting
//! and (optionally) carbon-intensity voting for the next round's trainers.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    aggregation_work, fedavg, green_sa, krum, percentile_threshold, AggregationError,
    AggregationSpec, NeighborUpdate, ThresholdSpec,
};
use crate::carbon::{self, EmissionRecord};
use crate::config::{ClockMode, ConfigError, ScenarioConfig};
use crate::domain::{NodeId, NodeProfile, Phase};
use crate::energy::{self, EnergyRecord, PhaseObservation};
use crate::learning::{
    evaluate, generate_dataset, partition, serialized_len, train_local, Dataset, LearningError,
    ModelParams,
};
use crate::rng::{self, derive_seed, Stream};
use crate::selection::{select_participants, SelectionError, SelectionResult, SelectionSpec};
use crate::topology::{build_topology, Topology, TopologyError};

/// Half-width of the uniform range the shared initial parameters are drawn from.
pub const INIT_SCALE: f32 = 0.1;
/// Fraction of generated samples held out as the global test split.
pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("node {node}: {source}")]
    Learning {
        node: NodeId,
        #[source]
        source: LearningError,
    },
    #[error("setup: {0}")]
    Setup(LearningError),
    #[error("node {node} aggregation: {source}")]
    Aggregation {
        node: NodeId,
        #[source]
        source: AggregationError,
    },
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error("internal invariant violated in round {round}: {message}")]
    Invariant { round: u32, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeledDurations {
    pub train_s: f64,
    pub agg_s: f64,
}

/// Phase durations derived from workload size and declared node throughput.
pub fn modeled_durations(
    profile: &NodeProfile,
    samples_processed: u64,
    params_aggregated: u64,
) -> ModeledDurations {
    ModeledDurations {
        train_s: samples_processed as f64 / profile.compute_speed,
        agg_s: params_aggregated as f64 / profile.agg_speed,
    }
}

/// True once the best validation loss of the last `patience` rounds fails to
/// beat the best loss before them by more than `min_delta`.
pub fn early_stop_check(history: &[f64], patience: u32, min_delta: f64) -> bool {
    let patience = patience as usize;
    if patience == 0 || history.len() < patience + 1 {
        return false;
    }
    let split = history.len() - patience;
    let best_before = history[..split]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let best_recent = history[split..]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    best_before - best_recent <= min_delta
}

/// What a single round executes.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub round: u32,
    pub trainers: BTreeSet<NodeId>,
    pub aggregation: AggregationSpec,
    pub selection: SelectionSpec,
}

impl RoundPlan {
    /// Round 1: every node trains.
    pub fn initial(config: &ScenarioConfig) -> Self {
        Self {
            round: 1,
            trainers: (0..config.node_count()).map(NodeId::from).collect(),
            aggregation: config.aggregation,
            selection: config.selection,
        }
    }

    /// Removes the bridge nodes from the trainer set. Exclusion lasts for
    /// this plan only; the next selection starts from fresh reports.
    pub fn apply_selection(mut self, selection: &SelectionResult) -> Self {
        self.trainers.retain(|n| !selection.bridge_set.contains(n));
        self
    }

    /// Plan for the following round with every node training again.
    pub fn next(&self, node_count: usize) -> Self {
        Self {
            round: self.round + 1,
            trainers: (0..node_count).map(NodeId::from).collect(),
            aggregation: self.aggregation,
            selection: self.selection,
        }
    }
}

/// One model transmission over a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transmission {
    pub round: u32,
    pub from: NodeId,
    pub to: NodeId,
    /// Node whose trained model is carried; differs from `from` for relays.
    pub origin: NodeId,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationTrace {
    pub round: u32,
    pub node: NodeId,
    /// Received models offered to the strategy, ascending.
    pub received_from: Vec<NodeId>,
    /// Models that entered the result besides the node's own.
    pub used_from: Vec<NodeId>,
    pub params_aggregated: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u32,
    /// Mean held-out loss over the nodes that trained this round.
    pub val_loss: f64,
    /// Mean held-out macro-F1 over the same nodes.
    pub macro_f1: f64,
    pub active_nodes: Vec<NodeId>,
    pub directed_sends: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    pub observations: Vec<PhaseObservation>,
    pub energy: Vec<EnergyRecord>,
    pub emissions: Vec<EmissionRecord>,
    pub transmissions: Vec<Transmission>,
    pub aggregation: Vec<AggregationTrace>,
    pub metrics: RoundMetrics,
    /// Voting outcome deciding the next round's trainers.
    pub selection: Option<SelectionResult>,
}

/// Mutable per-run state carried between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub models: Vec<ModelParams>,
    /// Each node's total gCO₂ in the previous round.
    pub last_emissions: Vec<f64>,
    /// Emission threshold for threshold aggregation, once known.
    pub threshold: Option<f64>,
}

/// Everything fixed for the duration of a run.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: ScenarioConfig,
    topology: Topology,
    shards: Vec<Dataset>,
    test_set: Dataset,
    partition_repairs: Vec<usize>,
    model_bytes: u64,
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let k = config.node_count();
        let topology = build_topology(&config.topology, k, config.seed)?;
        let d = config.data;
        let train_n = d.samples_per_node * k;
        let test_n = (train_n as f64 * TEST_FRACTION / (1.0 - TEST_FRACTION)).ceil() as usize;
        let all = generate_dataset(d.classes, d.features, train_n + test_n, config.seed)
            .map_err(EngineError::Setup)?;
        let mut order: Vec<usize> = (0..all.len()).collect();
        rand::seq::SliceRandom::shuffle(
            order.as_mut_slice(),
            &mut rng::stream(config.seed, Stream::Split, 0, 0),
        );
        let pool = all.subset(&order[..train_n]);
        let test_set = all.subset(&order[train_n..]);
        let parts = partition(&pool, k, &d.partition, config.seed).map_err(EngineError::Setup)?;
        let shards = parts.shards.iter().map(|s| pool.subset(s)).collect();
        let layers = ModelParams::architecture(d.features, &config.model.hidden_sizes, d.classes);
        let params: usize = layers.iter().map(|l| l.param_count()).sum();
        Ok(Self {
            model_bytes: serialized_len(layers.len(), params) as u64,
            config,
            topology,
            shards,
            test_set,
            partition_repairs: parts.repaired_nodes,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn shard(&self, node: NodeId) -> &Dataset {
        &self.shards[node.index()]
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test_set
    }

    /// Serialized size of one model in bytes.
    pub fn model_bytes(&self) -> u64 {
        self.model_bytes
    }

    pub fn node_count(&self) -> usize {
        self.config.node_count()
    }

    /// Shared initial parameters for every node.
    pub fn initial_state(&self) -> SimState {
        let d = self.config.data;
        let layers =
            ModelParams::architecture(d.features, &self.config.model.hidden_sizes, d.classes);
        let mut r = rng::stream(self.config.seed, Stream::InitParams, 0, 0);
        let init = ModelParams::random_uniform(layers, INIT_SCALE, &mut r);
        let threshold = match self.config.aggregation {
            AggregationSpec::GreenSa {
                threshold: ThresholdSpec::Fixed(c),
            } => Some(c),
            _ => None,
        };
        SimState {
            models: vec![init; self.node_count()],
            last_emissions: vec![0.0; self.node_count()],
            threshold,
        }
    }

    fn update_for(
        &self,
        state: &SimState,
        trained: &[Option<ModelParams>],
        node: NodeId,
    ) -> NeighborUpdate {
        NeighborUpdate {
            from: node,
            model: trained[node.index()]
                .clone()
                .expect("only trainers send models"),
            sample_count: self.shards[node.index()].len() as u64,
            reported_emissions: state.last_emissions[node.index()],
        }
    }

    /// Executes one round and advances `state`.
    pub fn run_round(
        &self,
        state: &mut SimState,
        plan: &RoundPlan,
    ) -> Result<RoundOutput, EngineError> {
        let k = self.node_count();
        let round = plan.round;
        let cfg = &self.config;
        let measured = cfg.clock == ClockMode::Measured;

        // training
        let outcomes: Vec<Option<(ModelParams, f64)>> = (0..k)
            .into_par_iter()
            .map(|i| {
                let node = NodeId::from(i);
                if !plan.trainers.contains(&node) {
                    return Ok(None);
                }
                let seed = derive_seed(cfg.seed, Stream::Training, i as u64, u64::from(round));
                let out = train_local(
                    &state.models[i],
                    &self.shards[i],
                    cfg.local_epochs,
                    cfg.learning_rate,
                    seed,
                )
                .map_err(|source| EngineError::Learning { node, source })?;
                let secs = if measured {
                    out.wall_seconds
                } else {
                    modeled_durations(&cfg.nodes[i], out.samples_processed, 0).train_s
                };
                Ok(Some((out.params, secs)))
            })
            .collect::<Result<_, EngineError>>()?;
        let train_seconds: Vec<f64> = outcomes
            .iter()
            .map(|o| o.as_ref().map_or(0.0, |(_, s)| *s))
            .collect();
        let trained: Vec<Option<ModelParams>> =
            outcomes.into_iter().map(|o| o.map(|(p, _)| p)).collect();

        // exchange: trainers send to every neighbor, bridges relay what they
        // received directly to their other neighbors
        let mut sent = vec![0u64; k];
        let mut recv = vec![0u64; k];
        let mut inbox: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); k];
        let mut transmissions = Vec::new();
        let mut send =
            |from: NodeId, to: NodeId, origin: NodeId, inbox: &mut Vec<BTreeSet<NodeId>>| {
                sent[from.index()] += self.model_bytes;
                recv[to.index()] += self.model_bytes;
                inbox[to.index()].insert(origin);
                transmissions.push(Transmission {
                    round,
                    from,
                    to,
                    origin,
                    bytes: self.model_bytes,
                });
            };
        for &i in &plan.trainers {
            for &j in self.topology.neighbors(i) {
                send(i, j, i, &mut inbox);
            }
        }
        let first_hop = inbox.clone();
        for b in self.topology.nodes().filter(|n| !plan.trainers.contains(n)) {
            for &origin in &first_hop[b.index()] {
                for &n in self.topology.neighbors(b) {
                    if n != origin {
                        send(b, n, origin, &mut inbox);
                    }
                }
            }
        }

        // aggregation
        let threshold = state.threshold.unwrap_or(f64::INFINITY);
        let params = state.models[0].param_count();
        let aggregated: Vec<Option<(ModelParams, AggregationTrace, f64)>> = (0..k)
            .into_par_iter()
            .map(|i| {
                let node = NodeId::from(i);
                if !plan.trainers.contains(&node) {
                    return Ok(None);
                }
                let started = Instant::now();
                let own = self.update_for(state, &trained, node);
                let received: Vec<NeighborUpdate> = inbox[i]
                    .iter()
                    .filter(|&&o| o != node)
                    .map(|&o| self.update_for(state, &trained, o))
                    .collect();
                let agg_err = |source| EngineError::Aggregation { node, source };
                let (model, used_from, considered) = match plan.aggregation {
                    AggregationSpec::FedAvg => {
                        let m = fedavg(&own, &received).map_err(agg_err)?;
                        (
                            m,
                            received.iter().map(|u| u.from).collect::<Vec<_>>(),
                            1 + received.len(),
                        )
                    }
                    AggregationSpec::Krum { f } => {
                        let m = krum(&own, &received, f).map_err(agg_err)?;
                        let winner = std::iter::once(&own)
                            .chain(&received)
                            .filter(|u| u.model == m && u.from != node)
                            .map(|u| u.from)
                            .min()
                            .into_iter()
                            .filter(|_| m != own.model)
                            .collect();
                        (m, winner, 1 + received.len())
                    }
                    AggregationSpec::GreenSa { .. } => {
                        let out = green_sa(&own, &received, threshold).map_err(agg_err)?;
                        let n = 1 + out.selected.len();
                        (out.model, out.selected.into_iter().collect(), n)
                    }
                };
                let work = aggregation_work(&plan.aggregation, considered, params);
                let secs = if measured {
                    started.elapsed().as_secs_f64()
                } else {
                    modeled_durations(&cfg.nodes[i], 0, work).agg_s
                };
                let trace = AggregationTrace {
                    round,
                    node,
                    received_from: received.iter().map(|u| u.from).collect(),
                    used_from,
                    params_aggregated: work,
                };
                Ok(Some((model, trace, secs)))
            })
            .collect::<Result<_, EngineError>>()?;

        let mut traces = Vec::new();
        let mut agg_seconds = vec![0.0; k];
        for (i, a) in aggregated.into_iter().enumerate() {
            if let Some((model, trace, secs)) = a {
                state.models[i] = model;
                agg_seconds[i] = secs;
                traces.push(trace);
            }
        }

        // accounting
        let mut observations = Vec::with_capacity(3 * k);
        for i in 0..k {
            let node = NodeId::from(i);
            for (phase, duration_s, bytes_sent, bytes_recv) in [
                (Phase::Training, train_seconds[i], 0, 0),
                (Phase::Communication, 0.0, sent[i], recv[i]),
                (Phase::Aggregation, agg_seconds[i], 0, 0),
            ] {
                observations.push(PhaseObservation {
                    node,
                    round,
                    phase,
                    duration_s,
                    bytes_sent,
                    bytes_recv,
                });
            }
        }
        let energy: Vec<EnergyRecord> = observations
            .iter()
            .map(|o| energy::energy_record(&cfg.nodes[o.node.index()], o))
            .collect();
        let emissions: Vec<EmissionRecord> = energy
            .iter()
            .map(|e| carbon::emissions(e, &cfg.nodes[e.node.index()].region))
            .collect();
        let mut round_emissions = vec![0.0; k];
        for e in &emissions {
            round_emissions[e.node.index()] += e.grams_co2;
        }
        state.last_emissions = round_emissions;
        if state.threshold.is_none() {
            if let AggregationSpec::GreenSa {
                threshold: ThresholdSpec::Percentile(q),
            } = plan.aggregation
            {
                state.threshold = Some(percentile_threshold(&state.last_emissions, q).map_err(
                    |source| EngineError::Aggregation {
                        node: NodeId(0),
                        source,
                    },
                )?);
            }
        }

        let total_sent: u64 = sent.iter().sum();
        let total_recv: u64 = recv.iter().sum();
        if total_sent != total_recv {
            return Err(EngineError::Invariant {
                round,
                message: format!("{total_sent} bytes sent but {total_recv} received"),
            });
        }
        if observations.len() != 3 * k {
            return Err(EngineError::Invariant {
                round,
                message: format!("{} observations for {k} nodes", observations.len()),
            });
        }

        // validation on the held-out split
        let active: Vec<NodeId> = plan.trainers.iter().copied().collect();
        let evals: Vec<_> = active
            .par_iter()
            .map(|n| evaluate(&state.models[n.index()], &self.test_set))
            .collect();
        let metrics = RoundMetrics {
            round,
            val_loss: evals.iter().map(|e| e.loss).sum::<f64>() / evals.len() as f64,
            macro_f1: evals.iter().map(|e| e.macro_f1).sum::<f64>() / evals.len() as f64,
            active_nodes: active,
            directed_sends: transmissions.len(),
        };

        let selection = match plan.selection {
            SelectionSpec::None => None,
            SelectionSpec::GreenSn => {
                let ci: BTreeMap<NodeId, f64> = cfg
                    .effective_intensities()
                    .into_iter()
                    .enumerate()
                    .map(|(i, c)| (NodeId::from(i), c))
                    .collect();
                Some(select_participants(&self.topology, &ci)?)
            }
        };

        Ok(RoundOutput {
            observations,
            energy,
            emissions,
            transmissions,
            aggregation: traces,
            metrics,
            selection,
        })
    }
}

/// Complete record of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: ScenarioConfig,
    pub topology: Topology,
    pub observations: Vec<PhaseObservation>,
    pub energy: Vec<EnergyRecord>,
    pub emissions: Vec<EmissionRecord>,
    pub rounds: Vec<RoundMetrics>,
    /// Voting outcome computed at the end of each round, keyed by that round.
    pub selections: Vec<(u32, SelectionResult)>,
    pub transmissions: Vec<Transmission>,
    pub aggregation: Vec<AggregationTrace>,
    pub final_models: Vec<ModelParams>,
    pub model_bytes: u64,
    pub stopped_early_at: Option<u32>,
    pub sa_threshold: Option<f64>,
    pub flags: Vec<String>,
}

impl RunResult {
    pub fn rounds_executed(&self) -> u32 {
        self.rounds.last().map_or(0, |r| r.round)
    }

    pub fn final_f1(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.macro_f1)
    }
}

/// Runs rounds `1..=n`, stopping early when configured.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunResult, EngineError> {
    let sim = Simulation::new(config.clone())?;
    let mut state = sim.initial_state();
    let mut plan = RoundPlan::initial(config);
    let mut result = RunResult {
        config: config.clone(),
        topology: sim.topology().clone(),
        observations: Vec::new(),
        energy: Vec::new(),
        emissions: Vec::new(),
        rounds: Vec::new(),
        selections: Vec::new(),
        transmissions: Vec::new(),
        aggregation: Vec::new(),
        final_models: Vec::new(),
        model_bytes: sim.model_bytes(),
        stopped_early_at: None,
        sa_threshold: None,
        flags: Vec::new(),
    };
    let mut history = Vec::new();
    for _ in 0..config.rounds {
        let out = sim.run_round(&mut state, &plan)?;
        history.push(out.metrics.val_loss);
        result.observations.extend(out.observations);
        result.energy.extend(out.energy);
        result.emissions.extend(out.emissions);
        result.transmissions.extend(out.transmissions);
        result.aggregation.extend(out.aggregation);
        result.rounds.push(out.metrics);
        let mut next = plan.next(sim.node_count());
        if let Some(sel) = out.selection {
            next = next.apply_selection(&sel);
            result.selections.push((plan.round, sel));
        }
        if let Some(es) = config.early_stopping {
            if early_stop_check(&history, es.patience, es.min_delta) {
                result.stopped_early_at = Some(plan.round);
                break;
            }
        }
        plan = next;
    }
    result.observations.sort_by_key(PhaseObservation::key);
    result.energy.sort_by_key(EnergyRecord::key);
    result.emissions.sort_by_key(EmissionRecord::key);
    result.final_models = state.models;
    result.sa_threshold = state.threshold;
    result.flags = decision_flags(&sim, &result);
    Ok(result)
}

fn decision_flags(sim: &Simulation, result: &RunResult) -> Vec<String> {
    let cfg = sim.config();
    let mut flags = vec![
        "utilization: per-node profile constant, not sampled".to_string(),
        "communication: byte volume only, zero latency".to_string(),
        format!("init: shared uniform[-{INIT_SCALE}, {INIT_SCALE}] parameters"),
    ];
    flags.push(match cfg.clock {
        ClockMode::Modeled => "clock: modeled (samples/compute_speed, params/agg_speed)".into(),
        ClockMode::Measured => "clock: measured wall time, not reproducible".into(),
    });
    if let AggregationSpec::GreenSa { threshold } = cfg.aggregation {
        flags.push("green_sa.weights: sample counts renormalized over own + selected".into());
        flags.push(
            "green_sa.emissions: sender's previous-round total gCO2; round 1 reports 0".into(),
        );
        if let (ThresholdSpec::Percentile(q), Some(t)) = (threshold, result.sa_threshold) {
            flags.push(format!(
                "green_sa.threshold: nearest-rank p{q} of round-1 node emissions = {t:e} gCO2"
            ));
        }
    }
    if cfg.selection == SelectionSpec::GreenSn {
        flags.push(
            "green_sn.bridges: relay direct receipts once, train and aggregate nothing".into(),
        );
        flags.push("green_sn.stale_models: excluded from neighbors' aggregation".into());
        flags.push("validation: averaged over nodes that trained in the round".into());
        if matches!(cfg.aggregation, AggregationSpec::GreenSa { .. }) {
            flags.push("experimental: green_sn combined with green_sa".into());
        }
    }
    if !sim.topology().repair_edges().is_empty() {
        let edges: Vec<String> = sim
            .topology()
            .repair_edges()
            .iter()
            .map(|(a, b)| format!("{a}-{b}"))
            .collect();
        flags.push(format!(
            "topology.repair: added chain edges {}",
            edges.join(",")
        ));
    }
    if !sim.partition_repairs.is_empty() {
        flags.push(format!(
            "partition.repair: nodes {:?} received one moved sample",
            sim.partition_repairs
        ));
    }
    if let Some(r) = result.stopped_early_at {
        flags.push(format!(
            "early_stopping: stopped after round {r} on validation loss"
        ));
    }
    flags
}
