//! The coordinator: owns the simulation and runs the step loop. Clients
//! reach it only through one message queue, drained at step boundaries,
//! so steering takes effect between steps and queries see a consistent
//! state. Replies travel back on per-request channels; encoding and
//! socket writes happen in the collector, never here.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::json;
use slwn_core::geometry::Aabb;
use slwn_core::solver::{BoundaryKind, Simulation};
use slwn_core::window::{extract, select, CellStream, WindowQuery};

use crate::error::{Error, Result};
use crate::protocol::{Ack, Code, Rejection, SteerCommand};
use crate::subsim::{self, CouplingInput, CouplingPlan, SubLayout, SubSimulation};

pub type Reply<T> = Sender<std::result::Result<T, Rejection>>;

pub enum HostMsg {
    Query {
        source: u32,
        query: WindowQuery,
        reply: Reply<CellStream>,
    },
    Steer {
        cmd: SteerCommand,
        reply: Reply<Ack>,
    },
    Metrics {
        reply: Sender<serde_json::Value>,
    },
    Shutdown,
}

#[derive(Debug, Default)]
pub struct Counters {
    pub steps: AtomicU64,
    /// Set while the coordinator is inside a step.
    pub stepping: AtomicBool,
    /// Messages taken off the queue at step boundaries.
    pub handoffs: AtomicU64,
    /// Longest time spent at one boundary handling messages, in ns.
    pub max_boundary_ns: AtomicU64,
    pub queries: AtomicU64,
    pub acks: AtomicU64,
    pub rejections: AtomicU64,
    pub applied: AtomicU64,
    pub apply_failures: AtomicU64,
    /// Reply frames written by the collector.
    pub sends: AtomicU64,
    /// Of those, sends that overlapped a step in progress.
    pub sends_during_step: AtomicU64,
    pub bytes_sent: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CounterSnapshot {
    pub steps: u64,
    pub handoffs: u64,
    pub max_boundary_ns: u64,
    pub queries: u64,
    pub acks: u64,
    pub rejections: u64,
    pub applied: u64,
    pub apply_failures: u64,
    pub sends: u64,
    pub sends_during_step: u64,
    pub bytes_sent: u64,
}

impl Counters {
    pub fn snapshot(&self) -> CounterSnapshot {
        let l = |a: &AtomicU64| a.load(Ordering::SeqCst);
        CounterSnapshot {
            steps: l(&self.steps),
            handoffs: l(&self.handoffs),
            max_boundary_ns: l(&self.max_boundary_ns),
            queries: l(&self.queries),
            acks: l(&self.acks),
            rejections: l(&self.rejections),
            applied: l(&self.applied),
            apply_failures: l(&self.apply_failures),
            sends: l(&self.sends),
            sends_during_step: l(&self.sends_during_step),
            bytes_sent: l(&self.bytes_sent),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HostOptions {
    pub default_budget: u32,
    pub max_subs: usize,
    pub start_paused: bool,
    pub step_interval: Duration,
    /// Threads for the solver kernels; 0 picks the rayon default.
    pub threads: usize,
}

impl Default for HostOptions {
    fn default() -> Self {
        Self {
            default_budget: 400,
            max_subs: 4,
            start_paused: false,
            step_interval: Duration::ZERO,
            threads: 0,
        }
    }
}

/// Cheap, cloneable access to a running coordinator.
#[derive(Clone)]
pub struct HostHandle {
    tx: Sender<HostMsg>,
    pub counters: Arc<Counters>,
    pub default_budget: u32,
}

impl HostHandle {
    fn call<T>(&self, make: impl FnOnce(Sender<T>) -> HostMsg) -> Result<T> {
        let (tx, rx) = mpsc::channel();
        self.tx.send(make(tx)).map_err(|_| Error::Closed)?;
        rx.recv().map_err(|_| Error::Closed)
    }

    pub fn query(
        &self,
        source: u32,
        query: WindowQuery,
    ) -> Result<std::result::Result<CellStream, Rejection>> {
        self.call(|reply| HostMsg::Query {
            source,
            query,
            reply,
        })
    }

    pub fn steer(&self, cmd: SteerCommand) -> Result<std::result::Result<Ack, Rejection>> {
        self.call(|reply| HostMsg::Steer { cmd, reply })
    }

    pub fn metrics(&self) -> Result<serde_json::Value> {
        self.call(|reply| HostMsg::Metrics { reply })
    }

    pub fn shutdown(&self) {
        let _ = self.tx.send(HostMsg::Shutdown);
    }
}

pub struct Host {
    handle: HostHandle,
    join: Option<JoinHandle<Simulation>>,
}

impl Host {
    pub fn spawn(sim: Simulation, opts: HostOptions) -> Result<Host> {
        let (tx, rx) = mpsc::channel();
        let counters = Arc::new(Counters::default());
        let handle = HostHandle {
            tx,
            counters: Arc::clone(&counters),
            default_budget: opts.default_budget,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::Protocol(e.to_string()))?;
        let join = std::thread::Builder::new()
            .name("slwn-coordinator".into())
            .spawn(move || {
                let mut c = Coordinator::new(sim, opts, counters);
                pool.install(|| c.run(rx));
                c.finish()
            })?;
        Ok(Host {
            handle,
            join: Some(join),
        })
    }

    pub fn handle(&self) -> HostHandle {
        self.handle.clone()
    }

    /// Stops the loop and returns the simulation in its final state.
    pub fn shutdown(mut self) -> Option<Simulation> {
        self.handle.shutdown();
        self.join.take().and_then(|j| j.join().ok())
    }
}

impl Drop for Host {
    fn drop(&mut self) {
        if let Some(j) = self.join.take() {
            self.handle.shutdown();
            let _ = j.join();
        }
    }
}

enum SubMsg {
    Couple(CouplingInput),
    Query {
        query: WindowQuery,
        reply: Reply<CellStream>,
    },
    Stop,
}

struct SubWorker {
    tx: Sender<SubMsg>,
    plan: CouplingPlan,
    layout: SubLayout,
    join: Option<JoinHandle<()>>,
}

impl SubWorker {
    fn start(sub: SubSimulation) -> std::io::Result<Self> {
        let (tx, rx) = mpsc::channel();
        let plan = sub.plan().clone();
        let layout = sub.layout;
        let join = std::thread::Builder::new()
            .name(format!("slwn-sub-{}", sub.id))
            .spawn(move || run_sub(sub, rx))?;
        Ok(Self {
            tx,
            plan,
            layout,
            join: Some(join),
        })
    }

    fn stop(mut self) {
        let _ = self.tx.send(SubMsg::Stop);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

fn run_sub(mut sub: SubSimulation, rx: Receiver<SubMsg>) {
    let mut failed: Option<String> = None;
    while let Ok(msg) = rx.recv() {
        match msg {
            SubMsg::Couple(input) => {
                if failed.is_none() {
                    if let Err(e) = sub.advance(input) {
                        log::error!("sub-simulation {} stopped: {e}", sub.id);
                        failed = Some(e.to_string());
                    }
                }
            }
            SubMsg::Query { query, reply } => {
                let r = match &failed {
                    Some(m) => Err(Rejection::new(
                        Code::Internal,
                        format!("sub-simulation failed: {m}"),
                    )),
                    None => sub
                        .stream(&query)
                        .map_err(|e| Rejection::new(Code::Internal, e.to_string())),
                };
                let _ = reply.send(r);
            }
            SubMsg::Stop => break,
        }
    }
}

enum Pending {
    Apply(SteerCommand),
    Spawn { id: u32, region: Aabb, depth: u32 },
}

struct Coordinator {
    sim: Simulation,
    opts: HostOptions,
    counters: Arc<Counters>,
    paused: bool,
    failure: Option<String>,
    pending: Vec<Pending>,
    subs: BTreeMap<u32, SubWorker>,
    next_sub: u32,
    last_dt: f64,
    shutdown: bool,
}

impl Coordinator {
    fn new(sim: Simulation, opts: HostOptions, counters: Arc<Counters>) -> Self {
        Self {
            sim,
            paused: opts.start_paused,
            opts,
            counters,
            failure: None,
            pending: Vec::new(),
            subs: BTreeMap::new(),
            next_sub: 1,
            last_dt: 0.0,
            shutdown: false,
        }
    }

    fn run(&mut self, rx: Receiver<HostMsg>) {
        let mut next_step = Instant::now();
        while !self.shutdown {
            let t0 = Instant::now();
            while let Ok(m) = rx.try_recv() {
                self.handle(m);
            }
            if self.shutdown {
                break;
            }
            let idle = self.paused || self.failure.is_some();
            if idle || Instant::now() < next_step {
                let res = if idle {
                    rx.recv().map_err(|_| RecvTimeoutError::Disconnected)
                } else {
                    rx.recv_timeout(next_step - Instant::now())
                };
                match res {
                    Ok(m) => {
                        self.handle(m);
                        self.note_boundary(t0);
                        continue;
                    }
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => break,
                }
            }
            self.note_boundary(t0);
            if self.shutdown {
                break;
            }
            next_step = Instant::now() + self.opts.step_interval;
            self.step();
        }
    }

    fn note_boundary(&self, t0: Instant) {
        let ns = t0.elapsed().as_nanos() as u64;
        self.counters
            .max_boundary_ns
            .fetch_max(ns, Ordering::SeqCst);
    }

    fn finish(mut self) -> Simulation {
        for (_, w) in std::mem::take(&mut self.subs) {
            w.stop();
        }
        self.sim
    }

    fn handle(&mut self, msg: HostMsg) {
        self.counters.handoffs.fetch_add(1, Ordering::SeqCst);
        match msg {
            HostMsg::Query {
                source,
                query,
                reply,
            } => {
                self.counters.queries.fetch_add(1, Ordering::SeqCst);
                if source == 0 {
                    let _ = reply.send(self.stream(&query));
                } else if let Some(w) = self.subs.get(&source) {
                    if let Err(mpsc::SendError(SubMsg::Query { reply, .. })) =
                        w.tx.send(SubMsg::Query { query, reply })
                    {
                        let _ = reply.send(Err(Rejection::new(
                            Code::UnknownSource,
                            "sub-simulation has ended",
                        )));
                    }
                } else {
                    let msg = if self.pending_spawn(source) {
                        format!("sub-simulation {source} starts with the next step")
                    } else {
                        format!("no sub-simulation {source}")
                    };
                    let _ = reply.send(Err(Rejection::new(Code::UnknownSource, msg)));
                }
            }
            HostMsg::Steer { cmd, reply } => {
                let r = self.accept(cmd);
                let c = if r.is_ok() {
                    &self.counters.acks
                } else {
                    &self.counters.rejections
                };
                c.fetch_add(1, Ordering::SeqCst);
                let _ = reply.send(r);
            }
            HostMsg::Metrics { reply } => {
                let _ = reply.send(self.report());
            }
            HostMsg::Shutdown => self.shutdown = true,
        }
    }

    /// Select and extract in one go; the topology cannot change in between
    /// here, but a stale read is retried once all the same.
    fn stream(&self, q: &WindowQuery) -> std::result::Result<CellStream, Rejection> {
        q.validate()
            .map_err(|e| Rejection::new(Code::InvalidParam, e.to_string()))?;
        let mut last = None;
        for _ in 0..2 {
            let sel = select(&self.sim.topology(), q);
            match sel.and_then(|s| extract(self.sim.forest(), &s, q.quantity)) {
                Ok(mut s) => {
                    s.step = self.sim.steps();
                    s.time = self.sim.time();
                    return Ok(s);
                }
                Err(
                    e @ (slwn_core::Error::StaleSelection { .. }
                    | slwn_core::Error::StaleTopology { .. }),
                ) => last = Some(e),
                Err(e) => return Err(Rejection::new(Code::Internal, e.to_string())),
            }
        }
        Err(Rejection::new(
            Code::Stale,
            last.map(|e| e.to_string()).unwrap_or_default(),
        ))
    }

    fn pending_spawn(&self, id: u32) -> bool {
        self.pending
            .iter()
            .any(|p| matches!(p, Pending::Spawn { id: i, .. } if *i == id))
    }

    fn next_step(&self) -> u64 {
        self.sim.steps() + 1
    }

    /// Validates a command against the current state and queues it for the
    /// start of the next step. Pause and resume act on the loop itself.
    fn accept(&mut self, cmd: SteerCommand) -> std::result::Result<Ack, Rejection> {
        let k = self.next_step();
        let ack = |value| Ok(Ack { step: k, value });
        let forest = self.sim.forest();
        let max_depth = forest.config().max_depth;
        let domain = forest.domain();
        let axes = forest.active_axes();
        let overlaps = |r: &Aabb| {
            r.intersection(&domain)
                .is_some_and(|i| i.measure(axes) > 0.0)
        };
        match cmd {
            SteerCommand::Pause => {
                self.paused = true;
                return ack(0);
            }
            SteerCommand::Resume => {
                self.paused = false;
                return ack(0);
            }
            SteerCommand::SetBoundary { face, kind } => {
                if kind == BoundaryKind::Prescribed {
                    return Err(Rejection::new(
                        Code::InvalidParam,
                        "prescribed faces are set by coupling only",
                    ));
                }
                if !axes.contains(&face.axis()) {
                    return Err(Rejection::new(
                        Code::InvalidTarget,
                        format!("face {face} is inactive in 2D"),
                    ));
                }
                kind.validate_for(face)
                    .map_err(|e| Rejection::new(Code::InvalidParam, e.to_string()))?;
            }
            SteerCommand::Refine { grid } => {
                let g = forest
                    .grid(grid)
                    .map_err(|e| Rejection::new(Code::InvalidTarget, e.to_string()))?;
                let already = self
                    .pending
                    .iter()
                    .any(|p| matches!(p, Pending::Apply(SteerCommand::Refine { grid: g2 }) if *g2 == grid));
                if !g.is_leaf() || !g.active || already {
                    return Err(Rejection::new(
                        Code::InvalidTarget,
                        format!("grid {grid} is already refined"),
                    ));
                }
                if g.level >= max_depth {
                    return Err(Rejection::new(
                        Code::MaxDepth,
                        format!("grid {grid} is at maximum depth {max_depth}"),
                    ));
                }
            }
            SteerCommand::RefineRegion { region } => {
                let leaves = self.sim.leaves_in(&region);
                if leaves.is_empty() {
                    return Err(Rejection::new(Code::InvalidTarget, "no grid in the region"));
                }
                if let Some(id) = leaves
                    .iter()
                    .find(|id| forest.grids()[id.0 as usize].level >= max_depth)
                {
                    return Err(Rejection::new(
                        Code::MaxDepth,
                        format!("grid {id} in the region is at maximum depth {max_depth}"),
                    ));
                }
            }
            SteerCommand::SetCellType { region, .. } => {
                if !overlaps(&region) {
                    return Err(Rejection::new(
                        Code::InvalidTarget,
                        "region misses the domain",
                    ));
                }
            }
            SteerCommand::SetViscosity { nu } => {
                if !(nu.is_finite() && nu >= 0.0) {
                    return Err(Rejection::new(
                        Code::InvalidParam,
                        "viscosity must be finite and non-negative",
                    ));
                }
            }
            SteerCommand::SpawnSub { region, depth } => {
                let live = self.subs.len()
                    + self
                        .pending
                        .iter()
                        .filter(|p| matches!(p, Pending::Spawn { .. }))
                        .count();
                if live >= self.opts.max_subs {
                    return Err(Rejection::new(
                        Code::ResourceCap,
                        format!("at most {} concurrent sub-simulations", self.opts.max_subs),
                    ));
                }
                subsim::layout(&self.sim, &region, depth as u32)?;
                let id = self.next_sub;
                self.next_sub += 1;
                self.pending.push(Pending::Spawn {
                    id,
                    region,
                    depth: depth as u32,
                });
                return ack(id as u64);
            }
            SteerCommand::StopSub { id } => {
                if !self.subs.contains_key(&id) && !self.pending_spawn(id) {
                    return Err(Rejection::new(
                        Code::UnknownSource,
                        format!("no sub-simulation {id}"),
                    ));
                }
            }
        }
        self.pending.push(Pending::Apply(cmd));
        ack(0)
    }

    fn apply_pending(&mut self) {
        for p in std::mem::take(&mut self.pending) {
            let r = match p {
                Pending::Apply(cmd) => self.apply(cmd),
                Pending::Spawn { id, region, depth } => {
                    SubSimulation::spawn(id, &self.sim, &region, depth)
                        .and_then(|s| SubWorker::start(s).map_err(Error::from))
                        .map(|w| {
                            self.subs.insert(id, w);
                        })
                }
            };
            match r {
                Ok(()) => self.counters.applied.fetch_add(1, Ordering::SeqCst),
                Err(e) => {
                    log::warn!("steering command failed when applied: {e}");
                    self.counters.apply_failures.fetch_add(1, Ordering::SeqCst)
                }
            };
        }
    }

    fn apply(&mut self, cmd: SteerCommand) -> Result<()> {
        match cmd {
            SteerCommand::SetBoundary { face, kind } => self.sim.set_boundary(face, kind)?,
            SteerCommand::Refine { grid } => {
                self.sim.refine(grid)?;
            }
            SteerCommand::RefineRegion { region } => {
                self.sim.refine_region(&region)?;
            }
            SteerCommand::SetCellType { region, solid } => {
                self.sim.set_solid(&region, solid);
            }
            SteerCommand::SetViscosity { nu } => self.sim.set_viscosity(nu)?,
            SteerCommand::StopSub { id } => {
                if let Some(w) = self.subs.remove(&id) {
                    w.stop();
                } else {
                    self.pending
                        .retain(|p| !matches!(p, Pending::Spawn { id: i, .. } if *i == id));
                }
            }
            SteerCommand::Pause | SteerCommand::Resume | SteerCommand::SpawnSub { .. } => {}
        }
        Ok(())
    }

    fn step(&mut self) {
        self.apply_pending();
        self.counters.stepping.store(true, Ordering::SeqCst);
        let r = self.sim.step();
        self.counters.stepping.store(false, Ordering::SeqCst);
        match r {
            Ok(m) => {
                self.last_dt = m.dt;
                self.counters
                    .steps
                    .store(self.sim.steps(), Ordering::SeqCst);
                self.couple_subs(m.dt);
            }
            Err(e) => {
                log::error!("simulation halted at step {}: {e}", self.sim.steps() + 1);
                self.failure = Some(e.to_string());
            }
        }
    }

    fn couple_subs(&mut self, dt: f64) {
        let mut gone = Vec::new();
        for (&id, w) in &self.subs {
            let raw = match w.plan.sample(self.sim.forest()) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("sub-simulation {id} lost its coupling: {e}");
                    gone.push(id);
                    continue;
                }
            };
            let input = CouplingInput {
                coarse_step: self.sim.steps(),
                coarse_time: self.sim.time(),
                dt,
                raw,
                faces: self.sim.bc.faces,
                nu: self.sim.params.nu,
            };
            if w.tx.send(SubMsg::Couple(input)).is_err() {
                gone.push(id);
            }
        }
        for id in gone {
            if let Some(w) = self.subs.remove(&id) {
                w.stop();
            }
        }
    }

    fn report(&self) -> serde_json::Value {
        let f = self.sim.forest();
        let subs: Vec<_> = self
            .subs
            .iter()
            .map(|(id, w)| json!({ "id": id, "bbox": w.layout.bbox, "cells": w.layout.cells }))
            .collect();
        json!({
            "step": self.sim.steps(),
            "time": self.sim.time(),
            "dt": self.last_dt,
            "paused": self.paused,
            "failure": self.failure,
            "version": f.version(),
            "grids": f.len(),
            "leaves": f.leaves().count(),
            "depth": f.depth(),
            "nu": self.sim.params.nu,
            "pending": self.pending.len(),
            "last": self.sim.metrics().last(),
            "subs": subs,
            "counters": self.counters.snapshot(),
        })
    }
}

impl From<Rejection> for Error {
    fn from(r: Rejection) -> Self {
        Error::Rejected(r)
    }
}
