//! Kinematic point sources, receivers, seismograms and the misfit metric.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::Basis;
use crate::mesh::ElementGeometry;

#[derive(Debug, Error)]
pub enum SourceReceiverError {
    #[error("{what} at {location:?} lies outside the mesh")]
    OutsideMesh { what: &'static str, location: [f64; 3] },
    #[error("invalid moment-rate series: {0}")]
    InvalidSeries(String),
    #[error("misfit undefined: reference channel {0} is identically zero")]
    ZeroReference(usize),
    #[error("seismograms differ in length or sampling ({0})")]
    Mismatch(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Uniformly sampled moment-rate function, linear between samples and zero
/// outside `[0, (n - 1) dt]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRate {
    pub dt: f64,
    pub samples: Vec<f64>,
}

impl MomentRate {
    pub fn new(dt: f64, samples: Vec<f64>) -> Result<Self, SourceReceiverError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SourceReceiverError::InvalidSeries(format!("sample interval {dt} must be positive")));
        }
        if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) {
            return Err(SourceReceiverError::InvalidSeries("samples must be finite and non-empty".into()));
        }
        Ok(Self { dt, samples })
    }

    /// Constant rate `r` over `[0, duration]`.
    pub fn constant(r: f64, duration: f64) -> Self {
        Self { dt: duration, samples: vec![r, r] }
    }

    /// Samples `f` at `n` points spaced `dt`.
    pub fn sampled(dt: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        Self { dt, samples: (0..n).map(|i| f(i as f64 * dt)).collect() }
    }

    pub fn value(&self, t: f64) -> f64 {
        let x = t / self.dt;
        if x < 0.0 || x > (self.samples.len() - 1) as f64 {
            return 0.0;
        }
        let i = (x.floor() as usize).min(self.samples.len().saturating_sub(2));
        if self.samples.len() == 1 {
            return self.samples[0];
        }
        let f = x - i as f64;
        self.samples[i] * (1.0 - f) + self.samples[i + 1] * f
    }

    /// Exact integral of the interpolant over `[t0, t1]`.
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 || self.samples.len() < 2 {
            return 0.0;
        }
        let last = (self.samples.len() - 1) as f64 * self.dt;
        let (a, b) = (t0.max(0.0), t1.min(last));
        if b <= a {
            return 0.0;
        }
        let first = (a / self.dt).floor() as usize;
        let mut sum = 0.0;
        let mut i = first.min(self.samples.len() - 2);
        while i + 1 < self.samples.len() {
            let (s0, s1) = (i as f64 * self.dt, (i + 1) as f64 * self.dt);
            let (lo, hi) = (a.max(s0), b.min(s1));
            if hi > lo {
                // Trapezoid of the linear piece over [lo, hi].
                sum += 0.5 * (hi - lo) * (self.value_on(i, lo) + self.value_on(i, hi));
            }
            if s1 >= b {
                break;
            }
            i += 1;
        }
        sum
    }

    fn value_on(&self, i: usize, t: f64) -> f64 {
        let f = t / self.dt - i as f64;
        self.samples[i] * (1.0 - f) + self.samples[i + 1] * f
    }
}

/// Point moment-tensor source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub location: [f64; 3],
    /// `(Mxx, Myy, Mzz, Mxy, Myz, Mxz)` in N m.
    pub moment: [f64; 6],
    pub rate: MomentRate,
    /// Per fused slot amplitude; empty means 1 for every slot.
    #[serde(default)]
    pub slot_scale: Vec<f64>,
}

/// Modal source term of one element: `coeffs[p * B + b]` for the six stress
/// rows, already scaled by the inverse mass matrix.
#[derive(Clone, Debug)]
pub struct SourceTerm {
    pub element: usize,
    pub coeffs: Vec<f64>,
    pub rate: MomentRate,
    pub slot_scale: Vec<f64>,
}

/// Projects the point source onto the element containing it.
/// Stresses follow `d sigma / dt = ... - M mdot(t) delta(x - x_s)`.
pub fn project_source(src: &PointSource, element: usize, geom: &ElementGeometry, basis: &Basis, width: usize) -> SourceTerm {
    let xi = geom.to_reference(src.location);
    let phi = basis.eval(xi);
    let det = 6.0 * geom.volume;
    let nb = basis.nb();
    let mut coeffs = vec![0.0; 6 * nb];
    for p in 0..6 {
        for b in 0..nb {
            coeffs[p * nb + b] = -src.moment[p] * phi[b] / det;
        }
    }
    let slot_scale = if src.slot_scale.is_empty() { vec![1.0; width] } else { src.slot_scale.clone() };
    SourceTerm { element, coeffs, rate: src.rate.clone(), slot_scale }
}

/// Receiver position with its element and basis values.
#[derive(Clone, Debug)]
pub struct LocatedReceiver {
    pub element: usize,
    pub xi: [f64; 3],
    pub phi: Vec<f64>,
}

impl LocatedReceiver {
    pub fn new(element: usize, geom: &ElementGeometry, basis: &Basis, x: [f64; 3]) -> Self {
        let xi = geom.to_reference(x);
        Self { element, xi, phi: basis.eval(xi) }
    }

    /// Velocities `(u, v, w)` of a modal state laid out as `(var * B + b) * W + slot`.
    pub fn velocity(&self, values: impl Fn(usize) -> f64, nb: usize, width: usize, slot: usize) -> [f64; 3] {
        std::array::from_fn(|c| (0..nb).map(|b| values(((6 + c) * nb + b) * width + slot) * self.phi[b]).sum())
    }
}

/// Uniformly sampled particle velocities at one receiver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seismogram {
    pub location: [f64; 3],
    pub dt: f64,
    pub samples: Vec<[f64; 3]>,
}

impl Seismogram {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(|j| j as f64 * self.dt)
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[c]).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SourceReceiverError> {
        let io = |source| SourceReceiverError::Io { path: path.display().to_string(), source };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(f, "time,u,v,w").map_err(io)?;
        for (t, s) in self.times().zip(&self.samples) {
            writeln!(f, "{t:.17e},{:.17e},{:.17e},{:.17e}", s[0], s[1], s[2]).map_err(io)?;
        }
        f.flush().map_err(io)
    }

    pub fn read_csv(path: &Path, location: [f64; 3]) -> Result<Self, SourceReceiverError> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for rec in rdr.deserialize() {
            let (t, u, v, w): (f64, f64, f64, f64) = rec?;
            times.push(t);
            samples.push([u, v, w]);
        }
        let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
        Ok(Self { location, dt, samples })
    }
}

/// `E = sum (s - r)^2 / sum r^2` per channel.
pub fn misfit(s: &Seismogram, reference: &Seismogram) -> Result<[f64; 3], SourceReceiverError> {
    if s.samples.len() != reference.samples.len() {
        return Err(SourceReceiverError::Mismatch(format!("{} vs {} samples", s.samples.len(), reference.samples.len())));
    }
    if (s.dt - reference.dt).abs() > 1e-9 * reference.dt.abs().max(f64::MIN_POSITIVE) {
        return Err(SourceReceiverError::Mismatch(format!("dt {} vs {}", s.dt, reference.dt)));
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let num: f64 = s.samples.iter().zip(&reference.samples).map(|(a, b)| (a[c] - b[c]).powi(2)).sum();
        let den: f64 = reference.samples.iter().map(|b| b[c] * b[c]).sum();
        if den == 0.0 {
            return Err(SourceReceiverError::ZeroReference(c));
        }
        *o = num / den;
    }
    Ok(out)
}

/// Misfit of a single channel; used where only one component is excited.
pub fn channel_misfit(s: &[f64], reference: &[f64]) -> Result<f64, SourceReceiverError> {
    if s.len() != reference.len() {
        return Err(SourceReceiverError::Mismatch(format!("{} vs {} samples", s.len(), reference.len())));
    }
    let den: f64 = reference.iter().map(|r| r * r).sum();
    if den == 0.0 {
        return Err(SourceReceiverError::ZeroReference(0));
    }
    Ok(s.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / den)
}
