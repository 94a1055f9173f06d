//! Propagators: an adaptive high-order reference integrator for the full
//! matrix Schrodinger equation, the slow effective propagator, the fast
//! oscillatory factor, and their assembled product.
//!
//! Output samples sit on a uniform grid and each one is an integration
//! checkpoint: the stepper lands on it exactly instead of interpolating, so
//! a trace is reproducible bit for bit at any sample count.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fourier::PerturbativeSeries;
use crate::hilbert::{
    dagger, fro_norm, hermitian_eig, identity, polar_unitary, unitarity_residual, OperatorMatrix,
};
use crate::qat::QatExpansion;

pub const DEFAULT_REL_TOL: f64 = 1e-11;
pub const DEFAULT_SAMPLES: usize = 2000;

/// Hard ceiling on the unitarity defect of any stored sample.
pub const UNITARITY_LIMIT: f64 = 1e-9;

const MIN_REL_TOL: f64 = 1e-13;
const MAX_REL_TOL: f64 = 1e-6;

/// Right-hand side supplier for i dU/ds = H(s) U.
pub enum HamiltonianSource<'a> {
    /// Arbitrary bounded time dependence.
    Callback {
        dim: usize,
        f: &'a dyn Fn(f64) -> OperatorMatrix,
    },
    /// A perturbative stack evaluated with expansion parameter `lambda`.
    Series {
        stack: &'a PerturbativeSeries,
        lambda: f64,
    },
}

impl HamiltonianSource<'_> {
    pub fn dim(&self) -> usize {
        match self {
            HamiltonianSource::Callback { dim, .. } => *dim,
            HamiltonianSource::Series { stack, .. } => stack.dim(),
        }
    }

    pub fn at(&self, s: f64) -> OperatorMatrix {
        match self {
            HamiltonianSource::Callback { f, .. } => f(s),
            HamiltonianSource::Series { stack, lambda } => stack.evaluate(s, *lambda),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IntegratorStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rel_tol: f64,
    /// Sum of accepted per-step relative error estimates; a cheap upper
    /// proxy for the global relative error.
    pub accumulated_error: f64,
    /// Times a sample exceeded the drift threshold and was polar-projected.
    pub reprojections: usize,
    pub max_unitarity_residual: f64,
}

impl IntegratorStats {
    pub fn fresh(rel_tol: f64) -> Self {
        Self {
            accepted_steps: 0,
            rejected_steps: 0,
            rel_tol,
            accumulated_error: 0.0,
            reprojections: 0,
            max_unitarity_residual: 0.0,
        }
    }
}

/// Time-sampled propagator for one channel.
#[derive(Debug, Clone)]
pub struct PropagatorTrace {
    pub times: Vec<f64>,
    pub samples: Vec<OperatorMatrix>,
    pub stats: IntegratorStats,
}

impl PropagatorTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_unitary(&self) -> &OperatorMatrix {
        self.samples.last().expect("trace holds at least the initial sample")
    }

    /// Channels may only be combined samplewise when they share a grid.
    pub fn check_same_grid(&self, other: &PropagatorTrace) -> Result<()> {
        if self.times.len() != other.times.len() {
            return Err(Error::DimensionMismatch {
                left: self.times.len(),
                right: other.times.len(),
                context: "trace grids",
            });
        }
        let aligned = self
            .times
            .iter()
            .zip(&other.times)
            .all(|(a, b)| (a - b).abs() < 1e-12);
        if !aligned {
            return Err(Error::InvalidParameter(
                "traces sample different time grids".into(),
            ));
        }
        Ok(())
    }
}

/// Classic 13-stage Fehlberg 7(8) pair. The eighth-order weights propagate
/// the solution; the difference against the seventh-order weights is the
/// local error estimate.
const STAGE_TIMES: [f64; 13] = [
    0.0,
    2.0 / 27.0,
    1.0 / 9.0,
    1.0 / 6.0,
    5.0 / 12.0,
    0.5,
    5.0 / 6.0,
    1.0 / 6.0,
    2.0 / 3.0,
    1.0 / 3.0,
    1.0,
    0.0,
    1.0,
];

const STAGE_WEIGHTS: [&[f64]; 13] = [
    &[],
    &[2.0 / 27.0],
    &[1.0 / 36.0, 1.0 / 12.0],
    &[1.0 / 24.0, 0.0, 1.0 / 8.0],
    &[5.0 / 12.0, 0.0, -25.0 / 16.0, 25.0 / 16.0],
    &[1.0 / 20.0, 0.0, 0.0, 0.25, 0.2],
    &[-25.0 / 108.0, 0.0, 0.0, 125.0 / 108.0, -65.0 / 27.0, 125.0 / 54.0],
    &[31.0 / 300.0, 0.0, 0.0, 0.0, 61.0 / 225.0, -2.0 / 9.0, 13.0 / 900.0],
    &[2.0, 0.0, 0.0, -53.0 / 6.0, 704.0 / 45.0, -107.0 / 9.0, 67.0 / 90.0, 3.0],
    &[
        -91.0 / 108.0,
        0.0,
        0.0,
        23.0 / 108.0,
        -976.0 / 135.0,
        311.0 / 54.0,
        -19.0 / 60.0,
        17.0 / 6.0,
        -1.0 / 12.0,
    ],
    &[
        2383.0 / 4100.0,
        0.0,
        0.0,
        -341.0 / 164.0,
        4496.0 / 1025.0,
        -301.0 / 82.0,
        2133.0 / 4100.0,
        45.0 / 82.0,
        45.0 / 164.0,
        18.0 / 41.0,
    ],
    &[
        3.0 / 205.0,
        0.0,
        0.0,
        0.0,
        0.0,
        -6.0 / 41.0,
        -3.0 / 205.0,
        -3.0 / 41.0,
        3.0 / 41.0,
        6.0 / 41.0,
        0.0,
    ],
    &[
        -1777.0 / 4100.0,
        0.0,
        0.0,
        -341.0 / 164.0,
        4496.0 / 1025.0,
        -289.0 / 82.0,
        2193.0 / 4100.0,
        51.0 / 82.0,
        33.0 / 164.0,
        12.0 / 41.0,
        0.0,
        1.0,
    ],
];

const SOLUTION_WEIGHTS: [f64; 13] = [
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    34.0 / 105.0,
    9.0 / 35.0,
    9.0 / 35.0,
    9.0 / 280.0,
    9.0 / 280.0,
    0.0,
    41.0 / 840.0,
    41.0 / 840.0,
];

const EMBEDDED_WEIGHTS: [f64; 13] = [
    41.0 / 840.0,
    0.0,
    0.0,
    0.0,
    0.0,
    34.0 / 105.0,
    9.0 / 35.0,
    9.0 / 35.0,
    9.0 / 280.0,
    9.0 / 280.0,
    41.0 / 840.0,
    0.0,
    0.0,
];

/// One trial step from (s, y); returns the eighth-order update and the
/// relative local error estimate.
fn rkf78_step(
    h_of_s: &HamiltonianSource,
    s: f64,
    h: f64,
    y: &OperatorMatrix,
) -> (OperatorMatrix, f64) {
    let neg_i = C64::new(0.0, -1.0);
    let mut stages: Vec<OperatorMatrix> = Vec::with_capacity(13);
    for (i, row) in STAGE_WEIGHTS.iter().enumerate() {
        let mut arg = y.clone();
        for (j, &a) in row.iter().enumerate() {
            if a != 0.0 {
                arg.scaled_add(C64::new(h * a, 0.0), &stages[j]);
            }
        }
        let rhs = h_of_s.at(s + STAGE_TIMES[i] * h).dot(&arg).mapv(|z| z * neg_i);
        stages.push(rhs);
    }

    let mut next = y.clone();
    let mut err: OperatorMatrix = Array2::zeros(y.raw_dim());
    for i in 0..13 {
        if SOLUTION_WEIGHTS[i] != 0.0 {
            next.scaled_add(C64::new(h * SOLUTION_WEIGHTS[i], 0.0), &stages[i]);
        }
        let spread = SOLUTION_WEIGHTS[i] - EMBEDDED_WEIGHTS[i];
        if spread != 0.0 {
            err.scaled_add(C64::new(h * spread, 0.0), &stages[i]);
        }
    }
    let scale = fro_norm(&next).max(1.0);
    (next, fro_norm(&err) / scale)
}

/// Integrate i dU/ds = H(s) U from span.0 to span.1 with U(span.0) = 1,
/// storing `n_samples` evenly spaced checkpoints (endpoints included).
pub fn integrate_schrodinger(
    h_of_s: &HamiltonianSource,
    span: (f64, f64),
    rel_tol: f64,
    n_samples: usize,
) -> Result<PropagatorTrace> {
    if !(MIN_REL_TOL..=MAX_REL_TOL).contains(&rel_tol) {
        return Err(Error::InvalidParameter(format!(
            "integrator tolerance {rel_tol:.3e} outside [{MIN_REL_TOL:.0e}, {MAX_REL_TOL:.0e}]"
        )));
    }
    let (s0, s1) = span;
    if !(s1 > s0 && s0.is_finite() && s1.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "integration span ({s0}, {s1}) must be finite and increasing"
        )));
    }
    if n_samples < 2 {
        return Err(Error::InvalidParameter(
            "a trace needs at least the two endpoint samples".into(),
        ));
    }

    let dim = h_of_s.dim();
    let length = s1 - s0;
    let reproject_at = (10.0 * rel_tol).min(UNITARITY_LIMIT);
    let mut stats = IntegratorStats::fresh(rel_tol);
    let mut times = Vec::with_capacity(n_samples);
    let mut samples = Vec::with_capacity(n_samples);

    let mut y = identity(dim);
    let mut s = s0;
    let mut h = length / 256.0;
    times.push(s0);
    samples.push(y.clone());

    for i in 1..n_samples {
        let target = s0 + length * i as f64 / (n_samples - 1) as f64;
        while s < target - 1e-13 * length {
            let trial = h.min(target - s);
            let (next, err) = rkf78_step(h_of_s, s, trial, &y);
            if err <= rel_tol {
                y = next;
                s += trial;
                stats.accepted_steps += 1;
                stats.accumulated_error += err;
            } else {
                stats.rejected_steps += 1;
            }
            let growth = if !err.is_finite() {
                0.2
            } else if err > 0.0 {
                0.9 * (rel_tol / err).powf(0.125)
            } else {
                5.0
            };
            h = (h * growth.clamp(0.2, 5.0)).min(length);
            if h < 1e-13 * length {
                return Err(Error::StepUnderflow { s, h });
            }
        }
        s = target;

        let mut drift = unitarity_residual(&y);
        if drift > reproject_at {
            y = polar_unitary(&y);
            stats.reprojections += 1;
            drift = unitarity_residual(&y);
        }
        stats.max_unitarity_residual = stats.max_unitarity_residual.max(drift);
        if drift > UNITARITY_LIMIT {
            return Err(Error::UnitarityDrift {
                s,
                drift,
                limit: UNITARITY_LIMIT,
            });
        }
        times.push(target);
        samples.push(y.clone());
    }

    Ok(PropagatorTrace { times, samples, stats })
}

/// exp(i factor H) for Hermitian H through its eigendecomposition, which is
/// unitary to roundoff regardless of the spectral radius.
fn exp_i_hermitian(h: &OperatorMatrix, factor: f64) -> Result<OperatorMatrix> {
    let (values, vectors) = hermitian_eig(h)?;
    let dim = h.nrows();
    let mut scaled = vectors.clone();
    for (k, value) in values.iter().enumerate() {
        let phase = C64::from_polar(1.0, factor * value);
        for r in 0..dim {
            scaled[(r, k)] *= phase;
        }
    }
    Ok(scaled.dot(&dagger(&vectors)))
}

/// Oscillatory factor exp(-i Phi^{[N-1]}(s; lambda)).
pub fn u_fast(expansion: &QatExpansion, s: f64, lambda: f64) -> Result<OperatorMatrix> {
    let phi = expansion.fast_generator(s, lambda);
    exp_i_hermitian(&phi, -1.0)
}

/// Effective propagator: integrates the lambda-weighted slow stack over the
/// span. The slow equation is integrated in s; rescaling to tau = lambda s
/// is the same equation with steps scaled by lambda.
pub fn u_eff(
    expansion: &QatExpansion,
    lambda: f64,
    span: (f64, f64),
    rel_tol: f64,
    n_samples: usize,
) -> Result<PropagatorTrace> {
    let source = HamiltonianSource::Series {
        stack: &expansion.h_eff,
        lambda,
    };
    integrate_schrodinger(&source, span, rel_tol, n_samples)
}

/// Assembled two-time propagator u_fast(s) u_eff(s) u_fast(s0)^dag on the
/// effective trace's grid.
pub fn assemble_qat(
    expansion: &QatExpansion,
    lambda: f64,
    span: (f64, f64),
    rel_tol: f64,
    n_samples: usize,
) -> Result<PropagatorTrace> {
    let eff = u_eff(expansion, lambda, span, rel_tol, n_samples)?;
    let fast0_dag = dagger(&u_fast(expansion, span.0, lambda)?);
    let mut stats = eff.stats;
    let mut samples = Vec::with_capacity(eff.len());
    for (i, s) in eff.times.iter().enumerate() {
        let fast = u_fast(expansion, *s, lambda)?;
        let sample = fast.dot(&eff.samples[i]).dot(&fast0_dag);
        let drift = unitarity_residual(&sample);
        stats.max_unitarity_residual = stats.max_unitarity_residual.max(drift);
        if drift > UNITARITY_LIMIT {
            return Err(Error::UnitarityDrift {
                s: *s,
                drift,
                limit: UNITARITY_LIMIT,
            });
        }
        samples.push(sample);
    }
    Ok(PropagatorTrace {
        times: eff.times,
        samples,
        stats,
    })
}
