//! Time stepping of one partition: the clustered LTS schedule with exchange
//! buffers and face payloads, plus a lockstep global time stepping path.

use std::collections::HashMap;
use std::ops::Range;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::quadrature::tetrahedron_rule;
use crate::basis::{assemble_reference_matrices, Basis, BasisError};
use crate::equations::{
    build_element_operators, relaxation_for, EquationsError, FaceCondition, Material, RelaxationSet,
};
use crate::kernels::{
    ck_derivatives, neighbor_payload, surface_local, surface_neighbor, taylor_evaluate, taylor_integrate, volume_kernel,
    DerivativeStack, ElemOps, KernelError, RefOps, Shape, Sparsity, Workspace,
};
use crate::lts::{build_schedule, Action, ClusterGraph, ExchangeBuffers, LtsError, ReaderStep, Span, TimeGrid, END};
use crate::mesh::{BoundaryKind, ElementGeometry};
use crate::partition::payload::Payload;
use crate::partition::transport::{Transport, TransportError};
use crate::partition::{GhostRecord, LinkRecord, PartitionData, SendRecord};
use crate::real::Real;
use crate::source_receiver::{project_source, LocatedReceiver, PointSource, Seismogram, SourceTerm};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Equations(#[from] EquationsError),
    #[error(transparent)]
    Lts(#[from] LtsError),
    #[error("element {element}: {source}")]
    Kernel { element: u64, source: KernelError },
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("protocol error at element {element} face {face}: {msg}")]
    Protocol { element: u64, face: usize, msg: String },
    #[error("version mismatch: {0}")]
    Version(String),
    #[error("invalid setup: {0}")]
    Setup(String),
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub t_end: f64,
    /// Defaults to [`Sparsity::for_width`].
    pub sparsity: Option<Sparsity>,
    /// Element loops on the rayon pool.
    pub parallel: bool,
    /// Receiver samples are taken at `j * t_end / samples`, `j = 0..=samples`.
    pub samples: usize,
    /// Longest wait for a remote payload.
    pub timeout: Duration,
}

impl SolverOptions {
    pub fn new(t_end: f64) -> Self {
        Self { t_end, sparsity: None, parallel: cfg!(feature = "parallel"), samples: 100, timeout: Duration::from_secs(60) }
    }
}

/// Counters of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    /// Steps taken per cluster.
    pub steps: Vec<u64>,
    /// Element updates per cluster.
    pub updates: Vec<u64>,
    pub element_updates: u64,
    pub messages_sent: u64,
    pub messages_received: u64,
    pub values_sent: u64,
    pub wall_seconds: f64,
}

struct Predicted<R> {
    /// Time integral of all quantities over the element's current step.
    t: Vec<R>,
    bufs: ExchangeBuffers<R>,
}

struct Scratch<R> {
    ws: Workspace<R>,
    derivs: DerivativeStack<R>,
    contrib: Vec<R>,
    payload: [Vec<R>; 4],
    dense: Vec<R>,
}

impl<R: Real> Scratch<R> {
    fn new(shape: &Shape) -> Self {
        Self {
            ws: Workspace::new(shape),
            derivs: DerivativeStack::new(shape),
            contrib: vec![R::zero(); shape.elastic_len()],
            payload: std::array::from_fn(|_| vec![R::zero(); shape.payload_len()]),
            dense: vec![R::zero(); shape.elastic_len()],
        }
    }
}

/// Seconds since the call; always zero on targets without a clock.
fn stopwatch() -> impl FnOnce() -> f64 {
    #[cfg(not(target_arch = "wasm32"))]
    {
        let start = std::time::Instant::now();
        move || start.elapsed().as_secs_f64()
    }
    #[cfg(target_arch = "wasm32")]
    {
        || 0.0
    }
}

/// Applies `f` to every item, on the rayon pool when `parallel` is set.
fn map_items<T, O, R, F>(items: &mut [T], parallel: bool, shape: &Shape, f: F) -> Result<Vec<O>, SolverError>
where
    T: Send,
    O: Send,
    R: Real,
    F: Fn(usize, &mut T, &mut Scratch<R>) -> Result<O, SolverError> + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return items.par_iter_mut().enumerate().map_init(|| Scratch::new(shape), |s, (i, it)| f(i, it, s)).collect();
    }
    let _ = parallel;
    let mut s = Scratch::new(shape);
    items.iter_mut().enumerate().map(|(i, it)| f(i, it, &mut s)).collect()
}

fn relation(reader: u8, owner: u8) -> ReaderStep {
    use std::cmp::Ordering::*;
    match reader.cmp(&owner) {
        Equal => ReaderStep::Equal,
        Less => ReaderStep::Smaller,
        Greater => ReaderStep::Larger,
    }
}

/// Where neighbor contributions come from during a correction.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Neighbors {
    /// Exchange buffers selected by the cluster relation.
    Buffers,
    /// Neighbor time integrals of the same step (lockstep only).
    Direct,
}

/// One receiver sample produced during a prediction.
struct Sample {
    receiver: usize,
    slot: usize,
    index: usize,
    value: [f64; 3],
}

pub struct Solver<R: Real> {
    shape: Shape,
    basis: Basis,
    refs: RefOps<R>,
    ops: Vec<ElemOps<R>>,
    global: Vec<u64>,
    cluster: Vec<u8>,
    links: Vec<[LinkRecord; 4]>,
    geom: Vec<ElementGeometry>,
    ghosts: Vec<GhostRecord>,
    sends: Vec<SendRecord>,
    sends_by_cluster: Vec<Vec<usize>>,
    remote_by_cluster: Vec<Vec<(usize, usize)>>,
    local_of: HashMap<u64, usize>,
    inbox: HashMap<(usize, usize), Vec<(Span, Vec<R>)>>,
    ranges: Vec<Range<usize>>,
    q: Vec<Vec<R>>,
    pred: Vec<Predicted<R>>,
    grid: TimeGrid,
    graph: ClusterGraph,
    sources: Vec<SourceTerm>,
    receivers: Vec<(usize, LocatedReceiver)>,
    receivers_of: Vec<Vec<usize>>,
    /// `[receiver][slot][sample]`.
    samples: Vec<Vec<Vec<[f64; 3]>>>,
    opts: SolverOptions,
    stats: RunStats,
}

impl<R: Real> Solver<R> {
    pub fn new(data: &PartitionData, opts: SolverOptions) -> Result<Self, SolverError> {
        let h = &data.header;
        if h.precision_bits != R::BITS {
            return Err(SolverError::Version(format!("partition built for {}-bit, solver runs {}-bit", h.precision_bits, R::BITS)));
        }
        if !(opts.t_end > 0.0 && opts.t_end.is_finite()) {
            return Err(SolverError::Setup(format!("end time {} must be positive", opts.t_end)));
        }
        if opts.samples == 0 {
            return Err(SolverError::Setup("at least one receiver sample interval required".into()));
        }
        let basis = Basis::new(h.order)?;
        let matrices = assemble_reference_matrices(&basis)?;
        let shape = Shape::new(h.order, basis.nb(), basis.nf(), h.mechanisms, h.width);
        let sparsity = opts.sparsity.unwrap_or(Sparsity::for_width(h.width));
        let refs = RefOps::new(&matrices, sparsity);

        let mut relax_cache: HashMap<(u64, u64), RelaxationSet> = HashMap::new();
        let mut relax_of = |m: &Material| -> Result<RelaxationSet, EquationsError> {
            let key = (m.qp.to_bits(), m.qs.to_bits());
            if let Some(r) = relax_cache.get(&key) {
                return Ok(r.clone());
            }
            let r = relaxation_for(m, h.center_freq, h.mechanisms)?;
            relax_cache.insert(key, r.clone());
            Ok(r)
        };

        let n = data.elements.len();
        let mut ops = Vec::with_capacity(n);
        let mut geom = Vec::with_capacity(n);
        let mut pred = Vec::with_capacity(n);
        for e in &data.elements {
            let g = ElementGeometry::new(e.vertices).map_err(|m| SolverError::Setup(format!("element {}: {m}", e.global)))?;
            let mut faces = [FaceCondition::Outflow; 4];
            let mut interior = [false; 4];
            let mut smaller = false;
            let mut larger = false;
            for (i, l) in e.links.iter().enumerate() {
                let (cond, ln) = match *l {
                    LinkRecord::Local { element, .. } => {
                        (FaceCondition::Neighbor(&data.elements[element].material), Some(data.elements[element].cluster))
                    }
                    LinkRecord::Ghost { ghost, .. } => (FaceCondition::Neighbor(&data.ghosts[ghost].material), Some(data.ghosts[ghost].cluster)),
                    LinkRecord::Boundary(BoundaryKind::FreeSurface) => (FaceCondition::FreeSurface, None),
                    LinkRecord::Boundary(BoundaryKind::Outflow) => (FaceCondition::Outflow, None),
                };
                faces[i] = cond;
                if let Some(ln) = ln {
                    interior[i] = true;
                    smaller |= ln < e.cluster;
                    larger |= ln > e.cluster;
                    if ln.abs_diff(e.cluster) > 1 {
                        return Err(SolverError::Setup(format!("element {} has a face neighbor more than one cluster away", e.global)));
                    }
                }
            }
            let relax = relax_of(&e.material)?;
            let eops = build_element_operators(&g, &e.material, &relax, faces)?;
            ops.push(ElemOps::new(&eops, interior, sparsity));
            geom.push(g);
            pred.push(Predicted { t: vec![R::zero(); shape.dofs_len()], bufs: ExchangeBuffers::new(shape.elastic_len(), smaller, larger) });
        }

        let cluster: Vec<u8> = data.elements.iter().map(|e| e.cluster).collect();
        if cluster.windows(2).any(|w| w[1] < w[0]) {
            return Err(SolverError::Setup("elements must be sorted by cluster".into()));
        }
        let mut sends_by_cluster = vec![Vec::new(); h.nc];
        for (i, s) in data.sends.iter().enumerate() {
            sends_by_cluster[cluster[s.element] as usize].push(i);
        }
        let mut remote_by_cluster = vec![Vec::new(); h.nc];
        for (k, e) in data.elements.iter().enumerate() {
            for (i, l) in e.links.iter().enumerate() {
                if matches!(l, LinkRecord::Ghost { .. }) {
                    remote_by_cluster[e.cluster as usize].push((k, i));
                }
            }
        }
        let base = h.lambda * h.dt_min;
        if !(base > 0.0 && base.is_finite()) {
            return Err(SolverError::Setup(format!("invalid base step {base}")));
        }
        Ok(Self {
            shape,
            basis,
            refs,
            ops,
            global: data.elements.iter().map(|e| e.global).collect(),
            links: data.elements.iter().map(|e| e.links).collect(),
            cluster,
            geom,
            ghosts: data.ghosts.clone(),
            sends: data.sends.clone(),
            sends_by_cluster,
            remote_by_cluster,
            local_of: data.elements.iter().enumerate().map(|(k, e)| (e.global, k)).collect(),
            inbox: HashMap::new(),
            ranges: data.cluster_ranges(),
            q: vec![vec![R::zero(); shape.dofs_len()]; n],
            pred,
            grid: TimeGrid::new(base, opts.t_end),
            graph: h.graph.clone(),
            sources: Vec::new(),
            receivers: Vec::new(),
            receivers_of: vec![Vec::new(); n],
            samples: Vec::new(),
            opts,
            stats: RunStats::default(),
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn global_ids(&self) -> &[u64] {
        &self.global
    }

    pub fn geometry(&self) -> &[ElementGeometry] {
        &self.geom
    }

    pub fn clusters(&self) -> &[u8] {
        &self.cluster
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn local_index(&self, global: u64) -> Option<usize> {
        self.local_of.get(&global).copied()
    }

    pub fn state(&self, k: usize) -> &[R] {
        &self.q[k]
    }

    pub fn state_mut(&mut self, k: usize) -> &mut [R] {
        &mut self.q[k]
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    /// Sets the elastic state to the L2 projection of `f(slot, x)`; memory
    /// variables start at zero.
    pub fn set_initial(&mut self, f: impl Fn(usize, [f64; 3]) -> [f64; 9]) {
        let rule = tetrahedron_rule(self.shape.order + 2);
        let phi: Vec<Vec<f64>> = rule.points.iter().map(|&p| self.basis.eval(p)).collect();
        let (nb, w) = (self.shape.nb, self.shape.width);
        for k in 0..self.q.len() {
            let mut acc = vec![0.0; self.shape.dofs_len()];
            for (qp, (&xi, &wt)) in rule.points.iter().zip(&rule.weights).enumerate() {
                let x = self.geom[k].to_physical(xi);
                for s in 0..w {
                    let v = f(s, x);
                    for (p, &vp) in v.iter().enumerate() {
                        for b in 0..nb {
                            acc[(p * nb + b) * w + s] += wt * vp * phi[qp][b];
                        }
                    }
                }
            }
            for (o, a) in self.q[k].iter_mut().zip(acc) {
                *o = R::of(a);
            }
        }
    }

    /// Squared L2 error of the elastic quantities against `exact(slot, x)`,
    /// and the squared L2 norm of `exact`.
    pub fn l2_error(&self, slot: usize, exact: impl Fn([f64; 3]) -> [f64; 9]) -> (f64, f64) {
        let rule = tetrahedron_rule(self.shape.order + 3);
        let phi: Vec<Vec<f64>> = rule.points.iter().map(|&p| self.basis.eval(p)).collect();
        let (nb, w) = (self.shape.nb, self.shape.width);
        let (mut err, mut norm) = (0.0, 0.0);
        for k in 0..self.q.len() {
            let jac = 6.0 * self.geom[k].volume;
            for (qp, (&xi, &wt)) in rule.points.iter().zip(&rule.weights).enumerate() {
                let ex = exact(self.geom[k].to_physical(xi));
                for (p, &e) in ex.iter().enumerate() {
                    let v: f64 = (0..nb).map(|b| self.q[k][(p * nb + b) * w + slot].to_f64() * phi[qp][b]).sum();
                    err += wt * jac * (v - e).powi(2);
                    norm += wt * jac * e * e;
                }
            }
        }
        (err, norm)
    }

    /// Index of the local element containing `x`, preferring the lowest
    /// global id on shared faces.
    pub fn locate(&self, x: [f64; 3]) -> Option<usize> {
        (0..self.geom.len()).filter(|&k| self.geom[k].contains(x, 1e-10)).min_by_key(|&k| self.global[k])
    }

    /// Adds a source owned by global element `element` if it is stored here.
    pub fn add_source(&mut self, src: &PointSource, element: u64) -> Result<bool, SolverError> {
        let Some(k) = self.local_index(element) else { return Ok(false) };
        if !src.slot_scale.is_empty() && src.slot_scale.len() != self.shape.width {
            return Err(SolverError::Setup(format!("source has {} slot scales for width {}", src.slot_scale.len(), self.shape.width)));
        }
        self.sources.push(project_source(src, k, &self.geom[k], &self.basis, self.shape.width));
        Ok(true)
    }

    /// Registers receiver `id` at `x` in global element `element` if stored here.
    pub fn add_receiver(&mut self, id: usize, x: [f64; 3], element: u64) -> bool {
        let Some(k) = self.local_index(element) else { return false };
        self.receivers_of[k].push(self.receivers.len());
        self.receivers.push((id, LocatedReceiver::new(k, &self.geom[k], &self.basis, x)));
        self.samples.push(vec![vec![[f64::NAN; 3]; self.opts.samples + 1]; self.shape.width]);
        true
    }

    /// Receiver seismograms `(id, one per slot)`.
    pub fn seismograms(&self) -> Vec<(usize, Vec<Seismogram>)> {
        let dt = self.opts.t_end / self.opts.samples as f64;
        self.receivers
            .iter()
            .zip(&self.samples)
            .map(|((id, r), s)| {
                let location = self.geom[r.element].to_physical(r.xi);
                (*id, s.iter().map(|samples| Seismogram { location, dt, samples: samples.clone() }).collect())
            })
            .collect()
    }

    fn sample_final(&mut self) {
        let (nb, w) = (self.shape.nb, self.shape.width);
        let last = self.opts.samples;
        for (ri, (_, r)) in self.receivers.iter().enumerate() {
            let q = &self.q[r.element];
            for s in 0..w {
                self.samples[ri][s][last] = r.velocity(|i| q[i].to_f64(), nb, w, s);
            }
        }
    }

    /// Sample indices in `[t0, t1)`, excluding the final one.
    fn sample_window(&self, span: Span) -> Range<usize> {
        let ds = self.opts.t_end / self.opts.samples as f64;
        let (t0, t1) = (self.grid.time(span.start), self.grid.time(span.end));
        let first = (0..=self.opts.samples).find(|&j| j as f64 * ds >= t0).unwrap_or(self.opts.samples);
        let mut end = first;
        while end < self.opts.samples && (end as f64 * ds) < t1 {
            end += 1;
        }
        first..end
    }

    fn predict(&mut self, range: Range<usize>, span: Span, half_end: u64, step: u64, buffers: bool) -> Result<(), SolverError> {
        let shape = self.shape;
        let (refs, ops, q, grid) = (&self.refs, &self.ops, &self.q, self.grid);
        let receivers_of = &self.receivers_of;
        let receivers = &self.receivers;
        let window = self.sample_window(span);
        let ds = self.opts.t_end / self.opts.samples as f64;
        let t0 = grid.time(span.start);
        let len = grid.length(span);
        let offset = range.start;
        let out = map_items(&mut self.pred[range], self.opts.parallel, &shape, |i, p, s: &mut Scratch<R>| {
            let k = offset + i;
            ck_derivatives(&shape, refs, &ops[k], &q[k], &mut s.derivs, &mut s.ws);
            taylor_integrate(&s.derivs, len, &mut p.t);
            if buffers {
                p.bufs.update(&s.derivs, &grid, span, half_end, step);
            }
            let mut samples = Vec::new();
            if !receivers_of[k].is_empty() {
                for j in window.clone() {
                    taylor_evaluate(&s.derivs, j as f64 * ds - t0, &mut s.dense);
                    for &ri in &receivers_of[k] {
                        for slot in 0..shape.width {
                            let value = receivers[ri].1.velocity(|x| s.dense[x].to_f64(), shape.nb, shape.width, slot);
                            samples.push(Sample { receiver: ri, slot, index: j, value });
                        }
                    }
                }
            }
            Ok(samples)
        })?;
        for s in out.into_iter().flatten() {
            self.samples[s.receiver][s.slot][s.index] = s.value;
        }
        Ok(())
    }

    fn correct(&mut self, l: usize, range: Range<usize>, span: Span, mode: Neighbors, ready: &HashMap<(usize, usize), Vec<R>>) -> Result<(), SolverError> {
        let shape = self.shape;
        let (refs, ops, pred, links, cluster, global) = (&self.refs, &self.ops, &self.pred, &self.links, &self.cluster, &self.global);
        let offset = range.start;
        let reader = l as u8;
        map_items(&mut self.q[range.clone()], self.opts.parallel, &shape, |i, q, s: &mut Scratch<R>| {
            let k = offset + i;
            let t = &pred[k].t;
            volume_kernel(&shape, refs, &ops[k], t, q, &mut s.ws);
            surface_local(&shape, refs, &ops[k], t, q, &mut s.ws);
            let mut present = [false; 4];
            for (f, link) in links[k].iter().enumerate() {
                match *link {
                    LinkRecord::Local { element, face, orientation } => {
                        match mode {
                            Neighbors::Buffers => {
                                let c = pred[element].bufs.contribution(relation(reader, cluster[element]), span)?;
                                c.write(&mut s.contrib);
                                neighbor_payload(&shape, refs, &s.contrib, face, orientation, &mut s.payload[f]);
                            }
                            Neighbors::Direct => neighbor_payload(&shape, refs, &pred[element].t, face, orientation, &mut s.payload[f]),
                        }
                        present[f] = true;
                    }
                    LinkRecord::Ghost { .. } => {
                        let data = ready.get(&(k, f)).ok_or_else(|| SolverError::Protocol {
                            element: global[k],
                            face: f,
                            msg: "payload not delivered before correction".into(),
                        })?;
                        s.payload[f].copy_from_slice(data);
                        present[f] = true;
                    }
                    LinkRecord::Boundary(_) => {}
                }
            }
            let payloads: [Option<&[R]>; 4] = std::array::from_fn(|f| present[f].then(|| s.payload[f].as_slice()));
            surface_neighbor(&shape, refs, &ops[k], payloads, q, &mut s.ws).map_err(|source| SolverError::Kernel { element: global[k], source })
        })?;
        let (t0, t1) = (self.grid.time(span.start), self.grid.time(span.end));
        let (nb, w) = (self.shape.nb, self.shape.width);
        for src in &self.sources {
            if !range.contains(&src.element) {
                continue;
            }
            let m = src.rate.integral(t0, t1);
            if m == 0.0 {
                continue;
            }
            let q = &mut self.q[src.element];
            for p in 0..6 {
                for b in 0..nb {
                    for (slot, &scale) in src.slot_scale.iter().enumerate() {
                        q[(p * nb + b) * w + slot] += R::of(src.coeffs[p * nb + b] * m * scale);
                    }
                }
            }
        }
        self.stats.updates[l] += range.len() as u64;
        self.stats.element_updates += range.len() as u64;
        self.stats.steps[l] += 1;
        Ok(())
    }

    fn reset_stats(&mut self) {
        let nc = self.graph.nc;
        self.stats = RunStats { steps: vec![0; nc], updates: vec![0; nc], ..Default::default() };
    }

    /// Runs the clustered schedule to the end time. `observer` sees the
    /// solver after every correction.
    pub fn run(&mut self, mut transport: Option<&mut dyn Transport>, mut observer: impl FnMut(&Action, &Self)) -> Result<RunStats, SolverError> {
        if !self.ghosts.is_empty() && transport.is_none() {
            return Err(SolverError::Setup("partition has remote neighbors but no transport".into()));
        }
        let elapsed = stopwatch();
        self.reset_stats();
        let schedule = build_schedule(&self.graph, &self.grid)?;
        for action in &schedule {
            match *action {
                Action::Predict { cluster: l, span, step } => {
                    let half_end = if l > 0 { self.grid.advance(span.start, 1 << (l - 1)) } else { span.end };
                    self.predict(self.ranges[l].clone(), span, half_end, step, true)?;
                    if let Some(t) = transport.as_deref_mut() {
                        self.send(l, t)?;
                    }
                }
                Action::Correct { cluster: l, span, .. } => {
                    let ready = match transport.as_deref_mut() {
                        Some(t) => self.gather(l, span, t)?,
                        None => HashMap::new(),
                    };
                    self.correct(l, self.ranges[l].clone(), span, Neighbors::Buffers, &ready)?;
                    observer(action, self);
                }
            }
        }
        if let Some(((k, f), _)) = self.inbox.iter().find(|(_, v)| !v.is_empty()) {
            return Err(SolverError::Protocol { element: self.global[*k], face: *f, msg: "undelivered payload left after the run".into() });
        }
        self.sample_final();
        self.stats.wall_seconds = elapsed();
        Ok(self.stats.clone())
    }

    /// Lockstep run of every element with the base step, reading neighbor
    /// time integrals directly. `observer` receives the step index.
    pub fn run_gts(&mut self, mut observer: impl FnMut(u64, &Self)) -> Result<RunStats, SolverError> {
        if !self.ghosts.is_empty() {
            return Err(SolverError::Setup("lockstep reference runs need a single partition".into()));
        }
        let elapsed = stopwatch();
        self.reset_stats();
        let all = 0..self.q.len();
        let mut t = 0;
        let mut n = 0;
        while t != END {
            let span = Span::new(t, self.grid.advance(t, 1));
            self.predict(all.clone(), span, span.end, n, false)?;
            self.correct(0, all.clone(), span, Neighbors::Direct, &HashMap::new())?;
            observer(n, self);
            t = span.end;
            n += 1;
        }
        self.sample_final();
        self.stats.wall_seconds = elapsed();
        Ok(self.stats.clone())
    }

    fn send(&mut self, l: usize, transport: &mut dyn Transport) -> Result<(), SolverError> {
        let shape = self.shape;
        let mut te = vec![R::zero(); shape.elastic_len()];
        for &si in &self.sends_by_cluster[l] {
            let s = &self.sends[si];
            let b = &self.pred[s.element].bufs;
            let span1 = b.span1.expect("buffers updated before sending");
            let mut pieces: Vec<(Span, Vec<R>)> = Vec::with_capacity(2);
            match relation(s.dest_cluster, l as u8) {
                ReaderStep::Equal | ReaderStep::Larger => pieces.push((span1, b.b1.clone())),
                ReaderStep::Smaller => {
                    let b2 = b.b2.as_ref().expect("B2 allocated for finer neighbors");
                    let span2 = b.span2.expect("B2 updated");
                    pieces.push((span2, b2.clone()));
                    if span2 != span1 {
                        crate::kernels::difference(&b.b1, b2, &mut te);
                        pieces.push((Span::new(span2.end, span1.end), te.clone()));
                    }
                }
            }
            for (span, data) in pieces {
                let mut values = vec![R::zero(); shape.payload_len()];
                neighbor_payload(&shape, &self.refs, &data, s.face, s.dest_orientation, &mut values);
                let msg = Payload { element: s.dest_element, face: s.dest_face as u8, span, values };
                self.stats.values_sent += msg.values.len() as u64;
                self.stats.messages_sent += 1;
                transport.send(s.dest_partition, msg.encode())?;
            }
        }
        Ok(())
    }

    fn file(&mut self, bytes: &[u8]) -> Result<(), SolverError> {
        let p = Payload::<R>::decode(bytes).map_err(|e| SolverError::Setup(e.to_string()))?;
        let face = p.face as usize;
        let k = self.local_index(p.element).ok_or_else(|| SolverError::Protocol {
            element: p.element,
            face,
            msg: "payload addressed to an element not stored here".into(),
        })?;
        if !matches!(self.links[k].get(face), Some(LinkRecord::Ghost { .. })) || p.values.len() != self.shape.payload_len() {
            return Err(SolverError::Protocol { element: p.element, face, msg: "payload does not match a remote face".into() });
        }
        let entries = self.inbox.entry((k, face)).or_default();
        if entries.iter().any(|(s, _)| *s == p.span) {
            return Err(SolverError::Protocol { element: p.element, face, msg: format!("duplicate payload for {:?}", p.span) });
        }
        entries.push((p.span, p.values));
        self.stats.messages_received += 1;
        Ok(())
    }

    /// Removes and combines the entries covering `span`, if all arrived.
    fn assemble(&mut self, k: usize, face: usize, span: Span, rel: ReaderStep) -> Result<Option<Vec<R>>, SolverError> {
        let global = self.global[k];
        let Some(entries) = self.inbox.get_mut(&(k, face)) else { return Ok(None) };
        match rel {
            ReaderStep::Equal | ReaderStep::Smaller => {
                Ok(entries.iter().position(|(s, _)| *s == span).map(|i| entries.swap_remove(i).1))
            }
            ReaderStep::Larger => {
                // The finer owner sends one payload per step; sum them in order.
                let mut picked = Vec::new();
                let mut cur = span.start;
                while cur != span.end {
                    let Some(i) = entries.iter().position(|(s, _)| s.start == cur) else { return Ok(None) };
                    let end = entries[i].0.end;
                    if end > span.end {
                        return Err(SolverError::Protocol { element: global, face, msg: format!("payload {:?} overruns {span:?}", entries[i].0) });
                    }
                    picked.push(i);
                    cur = end;
                }
                let mut sum = entries[picked[0]].1.clone();
                for &i in &picked[1..] {
                    for (o, &v) in sum.iter_mut().zip(&entries[i].1) {
                        *o += v;
                    }
                }
                picked.sort_unstable_by(|a, b| b.cmp(a));
                for i in picked {
                    entries.swap_remove(i);
                }
                Ok(Some(sum))
            }
        }
    }

    fn gather(&mut self, l: usize, span: Span, transport: &mut dyn Transport) -> Result<HashMap<(usize, usize), Vec<R>>, SolverError> {
        let mut ready = HashMap::new();
        let faces = self.remote_by_cluster[l].clone();
        for (k, f) in faces {
            let LinkRecord::Ghost { ghost, .. } = self.links[k][f] else { unreachable!() };
            let rel = relation(l as u8, self.ghosts[ghost].cluster);
            loop {
                if let Some(v) = self.assemble(k, f, span, rel)? {
                    ready.insert((k, f), v);
                    break;
                }
                let msg = transport.wait(self.opts.timeout).map_err(|e| match e {
                    TransportError::Timeout(_) => {
                        SolverError::Protocol { element: self.global[k], face: f, msg: format!("missing payload for {span:?}: {e}") }
                    }
                    e => SolverError::Transport(e),
                })?;
                self.file(&msg)?;
            }
        }
        Ok(ready)
    }
}

/// Number of element updates a lockstep run at the smallest CFL step
/// `dt_min` needs to reach `t_end`.
pub fn gts_updates(elements: u64, dt_min: f64, t_end: f64) -> u64 {
    elements * TimeGrid::new(dt_min, t_end).steps(1)
}

/// Quantities of the elastic plane wave `q(x, t) = r sin(k . x - c |k| t)`
/// traveling along `n` with speed `c` (P or S), polarization `pol`.
pub fn plane_wave(mat: &Material, n: [f64; 3], kind: WaveKind, pol: [f64; 3]) -> PlaneWave {
    let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    let n = n.map(|x| x / norm);
    let (c, v) = match kind {
        WaveKind::P => (mat.vp, n),
        WaveKind::S => {
            let d: f64 = (0..3).map(|i| pol[i] * n[i]).sum();
            let mut v: [f64; 3] = std::array::from_fn(|i| pol[i] - d * n[i]);
            let vn = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            v.iter_mut().for_each(|x| *x /= vn);
            (mat.vs, v)
        }
    };
    // sigma = -(1/c) (lam (n . v) I + mu (n v^T + v n^T)) for a wave moving along +n.
    let nv: f64 = (0..3).map(|i| n[i] * v[i]).sum();
    let s = |i: usize, j: usize| -(mat.lam * nv * f64::from(u8::from(i == j)) + mat.mu * (n[i] * v[j] + v[i] * n[j])) / c;
    let r = [s(0, 0), s(1, 1), s(2, 2), s(0, 1), s(1, 2), s(0, 2), v[0], v[1], v[2]];
    PlaneWave { n, speed: c, r }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WaveKind {
    P,
    S,
}

#[derive(Clone, Copy, Debug)]
pub struct PlaneWave {
    pub n: [f64; 3],
    pub speed: f64,
    /// Right eigenvector: six stresses and three velocities.
    pub r: [f64; 9],
}

impl PlaneWave {
    /// State at `x`, time `t` for wavenumber `k` along `n`.
    pub fn at(&self, k: f64, x: [f64; 3], t: f64) -> [f64; 9] {
        let phase = k * (self.n[0] * x[0] + self.n[1] * x[1] + self.n[2] * x[2] - self.speed * t);
        self.r.map(|r| r * phase.sin())
    }
}

#[cfg(test)]
mod tests;
