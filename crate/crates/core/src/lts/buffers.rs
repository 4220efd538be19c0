//! Exchange buffers `B1`, `B2`, `B3` and the integer time grid they live on.

use serde::{Deserialize, Serialize};

use super::LtsError;
use crate::kernels::{taylor_integrate, DerivativeStack};
use crate::real::Real;

/// Time in units of the finest cluster step; [`END`] marks the end time.
pub type Tick = u64;
pub const END: Tick = u64::MAX;

/// Time interval `[start, end]` on the tick grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: Tick,
    pub end: Tick,
}

impl Span {
    pub fn new(start: Tick, end: Tick) -> Self {
        Self { start, end }
    }
}

/// Maps ticks to physical time and clamps steps at the end time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    /// Physical length of one tick (`lambda * dt_min`).
    pub base: f64,
    pub t_end: f64,
}

impl TimeGrid {
    pub fn new(base: f64, t_end: f64) -> Self {
        assert!(base > 0.0 && t_end > 0.0, "time grid needs positive base and end time");
        Self { base, t_end }
    }

    pub fn time(&self, t: Tick) -> f64 {
        if t == END {
            self.t_end
        } else {
            t as f64 * self.base
        }
    }

    /// Advances `t` by `ticks`, snapping to [`END`] once the end time is
    /// reached (steps shorter than a 1e-9 fraction of a tick are absorbed).
    pub fn advance(&self, t: Tick, ticks: u64) -> Tick {
        if t == END {
            return END;
        }
        let next = t + ticks;
        if next as f64 * self.base >= self.t_end - 1e-9 * self.base {
            END
        } else {
            next
        }
    }

    /// Physical length of a span.
    pub fn length(&self, s: Span) -> f64 {
        if s.end == END {
            self.t_end - self.time(s.start)
        } else {
            (s.end - s.start) as f64 * self.base
        }
    }

    /// Number of steps of `ticks` needed to reach the end time from zero.
    pub fn steps(&self, ticks: u64) -> u64 {
        let mut t = 0;
        let mut n = 0;
        while t != END {
            t = self.advance(t, ticks);
            n += 1;
        }
        n
    }
}

/// How the reading neighbor's step compares to the buffer owner's step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReaderStep {
    Equal,
    /// The reader steps with half the owner's step.
    Smaller,
    /// The reader steps with twice the owner's step.
    Larger,
}

/// Time-integrated elastic DOFs handed to a neighbor.
#[derive(Debug)]
pub enum Contribution<'a, R> {
    Buffer(&'a [R]),
    /// `B1 - B2`, the second half of the owner's interval.
    Difference(&'a [R], &'a [R]),
}

impl<R: Real> Contribution<'_, R> {
    pub fn write(&self, out: &mut [R]) {
        match self {
            Contribution::Buffer(b) => out.copy_from_slice(b),
            Contribution::Difference(a, b) => crate::kernels::difference(a, b, out),
        }
    }
}

/// Per-element buffers of `9 x B x W` time-integrated elastic DOFs.
#[derive(Clone, Debug)]
pub struct ExchangeBuffers<R> {
    pub b1: Vec<R>,
    pub b2: Option<Vec<R>>,
    pub b3: Option<Vec<R>>,
    pub span1: Option<Span>,
    pub span2: Option<Span>,
    pub span3: Option<Span>,
}

impl<R: Real> ExchangeBuffers<R> {
    pub fn new(len: usize, has_smaller_neighbor: bool, has_larger_neighbor: bool) -> Self {
        Self {
            b1: vec![R::zero(); len],
            b2: has_smaller_neighbor.then(|| vec![R::zero(); len]),
            b3: has_larger_neighbor.then(|| vec![R::zero(); len]),
            span1: None,
            span2: None,
            span3: None,
        }
    }

    /// Refreshes the buffers from derivatives expanded at `step.start`.
    /// `half_end` is the end of the first half step (only used for `B2`) and
    /// `n` the element's step counter, whose parity drives `B3`.
    pub fn update(&mut self, derivs: &DerivativeStack<R>, grid: &TimeGrid, step: Span, half_end: Tick, n: u64) {
        taylor_integrate(derivs, grid.length(step), &mut self.b1);
        self.span1 = Some(step);
        if let Some(b2) = &mut self.b2 {
            let half = Span::new(step.start, half_end);
            taylor_integrate(derivs, grid.length(half), b2);
            self.span2 = Some(half);
        }
        if let Some(b3) = &mut self.b3 {
            if n % 2 == 0 {
                b3.copy_from_slice(&self.b1);
                self.span3 = Some(step);
            } else {
                for (o, &v) in b3.iter_mut().zip(&self.b1) {
                    *o += v;
                }
                let start = self.span3.map_or(step.start, |s| s.start);
                self.span3 = Some(Span::new(start, step.end));
            }
        }
    }

    /// Data a neighbor needs to integrate over its own interval `reader`.
    pub fn contribution(&self, relation: ReaderStep, reader: Span) -> Result<Contribution<'_, R>, LtsError> {
        match relation {
            ReaderStep::Equal => {
                check("B1", self.span1, reader)?;
                Ok(Contribution::Buffer(&self.b1))
            }
            ReaderStep::Smaller => {
                let b2 = self.b2.as_deref().ok_or(LtsError::IncompleteBuffer { buffer: "B2", held: None, needed: reader })?;
                let s1 = self.span1.ok_or(LtsError::IncompleteBuffer { buffer: "B1", held: None, needed: reader })?;
                if reader.start == s1.start {
                    check("B2", self.span2, reader)?;
                    Ok(Contribution::Buffer(b2))
                } else {
                    let s2 = self.span2.ok_or(LtsError::IncompleteBuffer { buffer: "B2", held: None, needed: reader })?;
                    if s2.end != reader.start || s1.end != reader.end {
                        return Err(LtsError::IncompleteBuffer { buffer: "B1-B2", held: Some(Span::new(s2.end, s1.end)), needed: reader });
                    }
                    Ok(Contribution::Difference(&self.b1, b2))
                }
            }
            ReaderStep::Larger => {
                let b3 = self.b3.as_deref().ok_or(LtsError::IncompleteBuffer { buffer: "B3", held: None, needed: reader })?;
                check("B3", self.span3, reader)?;
                Ok(Contribution::Buffer(b3))
            }
        }
    }
}

fn check(buffer: &'static str, held: Option<Span>, needed: Span) -> Result<(), LtsError> {
    if held == Some(needed) {
        Ok(())
    } else {
        Err(LtsError::IncompleteBuffer { buffer, held, needed })
    }
}
