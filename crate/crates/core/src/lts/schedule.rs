//! Cluster-level schedule of prediction and correction actions.

use serde::{Deserialize, Serialize};

use super::buffers::{Span, Tick, TimeGrid, END};
use super::{Clustering, LtsError};
use crate::mesh::FaceAdjacency;

/// One action applied to every element of a cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    /// Time kernel over `span` plus buffer update.
    Predict { cluster: usize, span: Span, step: u64 },
    /// Volume, surface and update kernels over `span`.
    Correct { cluster: usize, span: Span, step: u64 },
}

impl Action {
    pub fn cluster(&self) -> usize {
        match *self {
            Action::Predict { cluster, .. } | Action::Correct { cluster, .. } => cluster,
        }
    }

    pub fn span(&self) -> Span {
        match *self {
            Action::Predict { span, .. } | Action::Correct { span, .. } => span,
        }
    }
}

/// Which clusters hold elements and which pairs share faces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterGraph {
    pub nc: usize,
    pub present: Vec<bool>,
    /// `adjacent[l]`: some face joins clusters `l` and `l + 1`.
    pub adjacent: Vec<bool>,
}

impl ClusterGraph {
    pub fn from_mesh(c: &Clustering, adj: &FaceAdjacency) -> Self {
        let mut present = vec![false; c.nc];
        let mut adjacent = vec![false; c.nc];
        for (k, &l) in c.cluster.iter().enumerate() {
            present[l as usize] = true;
            for n in adj.neighbors(k) {
                let ln = c.cluster[n];
                if ln == l + 1 {
                    adjacent[l as usize] = true;
                }
            }
        }
        Self { nc: c.nc, present, adjacent }
    }

    fn finer_adjacent(&self, l: usize) -> bool {
        l > 0 && self.adjacent[l - 1] && self.present[l - 1]
    }

    fn coarser_adjacent(&self, l: usize) -> bool {
        l + 1 < self.nc && self.adjacent[l] && self.present[l + 1]
    }
}

#[derive(Clone, Debug)]
struct ClusterState {
    time: Tick,
    steps: u64,
    predicted: Option<Span>,
    span1: Option<Span>,
    span2: Option<Span>,
    span3: Option<Span>,
}

/// Builds the complete action sequence up to the end time.
///
/// Among eligible actions the one with the smallest key wins, where a
/// correction is keyed by the end of its interval and a prediction by its
/// start; corrections precede predictions at equal times and finer clusters
/// precede coarser ones.
pub fn build_schedule(graph: &ClusterGraph, grid: &TimeGrid) -> Result<Vec<Action>, LtsError> {
    let nc = graph.nc;
    let mut st: Vec<ClusterState> = (0..nc)
        .map(|_| ClusterState { time: 0, steps: 0, predicted: None, span1: None, span2: None, span3: None })
        .collect();
    let mut actions = Vec::new();
    loop {
        let mut best: Option<((Tick, u8, usize), Action)> = None;
        for l in (0..nc).filter(|&l| graph.present[l]) {
            let s = &st[l];
            let candidate = match s.predicted {
                Some(span) => correct_ready(graph, &st, l, span).then_some((
                    (span.end, 0u8, l),
                    Action::Correct { cluster: l, span, step: s.steps },
                )),
                None if s.time != END => predict_ready(graph, &st, l).then(|| {
                    let span = Span::new(s.time, grid.advance(s.time, 1 << l));
                    ((s.time, 1u8, l), Action::Predict { cluster: l, span, step: s.steps })
                }),
                None => None,
            };
            if let Some((key, action)) = candidate {
                if best.as_ref().map_or(true, |(k, _)| key < *k) {
                    best = Some((key, action));
                }
            }
        }
        let Some((_, action)) = best else {
            let unfinished: Vec<usize> = (0..nc).filter(|&l| graph.present[l] && (st[l].time != END || st[l].predicted.is_some())).collect();
            if unfinished.is_empty() {
                return Ok(actions);
            }
            return Err(LtsError::Deadlock(format!("clusters {unfinished:?} cannot advance")));
        };
        match action {
            Action::Predict { cluster: l, span, step } => {
                let s = &mut st[l];
                s.predicted = Some(span);
                s.span1 = Some(span);
                if l > 0 {
                    s.span2 = Some(Span::new(span.start, grid.advance(span.start, 1 << (l - 1))));
                }
                s.span3 = if step % 2 == 0 { Some(span) } else { s.span3.map(|p| Span::new(p.start, span.end)) };
            }
            Action::Correct { cluster: l, span, .. } => {
                let s = &mut st[l];
                s.time = span.end;
                s.steps += 1;
                s.predicted = None;
            }
        }
        actions.push(action);
    }
}

fn predict_ready(graph: &ClusterGraph, st: &[ClusterState], l: usize) -> bool {
    let s = &st[l];
    // Finer neighbors must have consumed B1/B2 of the previous interval.
    if graph.finer_adjacent(l) && st[l - 1].time < s.time {
        return false;
    }
    // A coarser neighbor must have consumed B3 before it is reset.
    if graph.coarser_adjacent(l) && s.steps % 2 == 0 && st[l + 1].time < s.time {
        return false;
    }
    true
}

fn correct_ready(graph: &ClusterGraph, st: &[ClusterState], l: usize, span: Span) -> bool {
    if graph.finer_adjacent(l) && st[l - 1].span3 != Some(span) {
        return false;
    }
    if graph.coarser_adjacent(l) {
        let c = &st[l + 1];
        let (Some(s1), Some(s2)) = (c.span1, c.span2) else { return false };
        let first_half = s2 == span;
        let second_half = s1.start < span.start && s2.end == span.start && s1.end == span.end;
        if !(first_half || second_half) {
            return false;
        }
    }
    true
}
