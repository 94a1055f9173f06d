//! Gate observables: Bell-state population, averaged process fidelity over
//! Pauli-eigenstate product states, and gate-time scalars with a drift-style
//! uncertainty.
//!
//! The process average runs over the 36 products of single-qubit Pauli
//! eigenstates tensored with a fixed motional state. For near-identity
//! comparisons, the regime the metric is used in, this tracks the Haar
//! average over the qubit factor to a few parts in 1e4; the exact product
//! average is what we report.

use ndarray::Array1;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{eigenprojector, identity, kron, unitarity_residual, HilbertSpec, OperatorMatrix};
use crate::propagate::PropagatorTrace;

/// Tolerated deviation of a state norm from one.
pub const NORM_TOL: f64 = 1e-6;
/// Tolerated unitarity residual on operator inputs.
pub const UNITARY_TOL: f64 = 1e-6;

fn check_normalized(state: &Array1<C64>, what: &str) -> Result<()> {
    let norm = state.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidParameter(format!(
            "{what} has norm {norm:.9}, expected 1"
        )));
    }
    Ok(())
}

fn check_unitary(u: &OperatorMatrix, what: &str) -> Result<()> {
    if u.nrows() != u.ncols() {
        return Err(Error::DimensionMismatch {
            left: u.nrows(),
            right: u.ncols(),
            context: "unitary input".into(),
        });
    }
    let residual = unitarity_residual(u);
    if residual > UNITARY_TOL {
        return Err(Error::InvalidParameter(format!(
            "{what} is not unitary (residual {residual:.3e})"
        )));
    }
    Ok(())
}

/// Population of |phi+> = (|ee> + |gg>)/sqrt(2) after tracing out the
/// motional factor. The state lives on the composite space of a two-qubit
/// register, index spin * boson_dim + fock with |gg> at spin index 0.
pub fn bell_population(state: &Array1<C64>, spec: &HilbertSpec) -> Result<f64> {
    if spec.n_qubits != 2 {
        return Err(Error::InvalidParameter(
            "bell_population expects a two-qubit register".into(),
        ));
    }
    if state.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            left: state.len(),
            right: spec.dim(),
            context: "composite state".into(),
        });
    }
    check_normalized(state, "state")?;
    let bd = spec.boson_dim();
    let mut population = 0.0;
    for n in 0..bd {
        let amp = (state[n] + state[3 * bd + n]) / C64::new(2.0_f64.sqrt(), 0.0);
        population += amp.norm_sqr();
    }
    Ok(population)
}

/// The six eigenstates of the single-qubit Pauli operators, basis (|g>, |e>).
fn pauli_eigenstates() -> Vec<Array1<C64>> {
    let h = 1.0 / 2.0_f64.sqrt();
    let i = C64::i();
    let one = C64::new(1.0, 0.0);
    vec![
        Array1::from(vec![one * h, one * h]),
        Array1::from(vec![one * h, -one * h]),
        Array1::from(vec![one * h, -i * h]),
        Array1::from(vec![one * h, i * h]),
        Array1::from(vec![C64::new(0.0, 0.0), one]),
        Array1::from(vec![one, C64::new(0.0, 0.0)]),
    ]
}

fn kron_state(a: &Array1<C64>, b: &Array1<C64>) -> Array1<C64> {
    let mut out = Array1::zeros(a.len() * b.len());
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i * b.len() + j] = x * y;
        }
    }
    out
}

/// The 36 two-qubit products of single-qubit Pauli eigenstates.
pub fn pauli_product_states() -> Vec<Array1<C64>> {
    let singles = pauli_eigenstates();
    let mut out = Vec::with_capacity(36);
    for a in &singles {
        for b in &singles {
            out.push(kron_state(a, b));
        }
    }
    out
}

/// Mean of |<psi| U^dag V |psi>|^2 over the 36 Pauli-eigenstate products
/// tensored with `motional_ref`. Global-phase invariant; symmetric in U, V.
pub fn avg_process_fidelity(
    u: &OperatorMatrix,
    v: &OperatorMatrix,
    motional_ref: &Array1<C64>,
) -> Result<f64> {
    check_unitary(u, "first operator")?;
    check_unitary(v, "second operator")?;
    let bd = motional_ref.len();
    if u.nrows() != 4 * bd || v.nrows() != 4 * bd {
        return Err(Error::DimensionMismatch {
            left: u.nrows(),
            right: 4 * bd,
            context: "process fidelity operands".into(),
        });
    }
    check_normalized(motional_ref, "motional reference")?;

    let mut total = 0.0;
    for spin in pauli_product_states() {
        let psi = kron_state(&spin, motional_ref);
        let u_psi = u.dot(&psi);
        let v_psi = v.dot(&psi);
        let overlap: C64 = u_psi
            .iter()
            .zip(v_psi.iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        total += overlap.norm_sqr();
    }
    Ok(total / 36.0)
}

/// Composite propagator from its spin-axis eigenblocks: the +1 and -1
/// eigenspaces of `axis` evolve under `u_plus` and `u_minus`, the null space
/// is left untouched on the motional factor.
pub fn compose_spin_blocks(
    axis: &OperatorMatrix,
    u_plus: &OperatorMatrix,
    u_minus: &OperatorMatrix,
) -> Result<OperatorMatrix> {
    if u_plus.nrows() != u_minus.nrows() {
        return Err(Error::DimensionMismatch {
            left: u_plus.nrows(),
            right: u_minus.nrows(),
            context: "spin block pair".into(),
        });
    }
    let bd = u_plus.nrows();
    let q_plus = eigenprojector(axis, 1.0, 1e-9)?;
    let q_minus = eigenprojector(axis, -1.0, 1e-9)?;
    let q_zero = identity(axis.nrows()) - &q_plus - &q_minus;
    Ok(kron(&q_plus, u_plus) + kron(&q_minus, u_minus) + kron(&q_zero, &identity(bd)))
}

/// Scalars reported at the gate time.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GateScalars {
    /// Bell population of the reference evolution: quality of the gate itself.
    pub bell_at_gate: f64,
    /// |<psi_ref|psi_approx>|^2: quality of the approximate description.
    pub approximation_fidelity: f64,
}

/// Evaluate both traces on the shared grid at the gate time, starting from
/// `initial`, and compare.
pub fn gate_fidelity(
    trace_ref: &PropagatorTrace,
    trace_qat: &PropagatorTrace,
    initial: &Array1<C64>,
    s_g: f64,
    spec: &HilbertSpec,
) -> Result<GateScalars> {
    trace_ref.check_same_grid(trace_qat)?;
    check_normalized(initial, "initial state")?;
    let tol = 1e-9 * s_g.abs().max(1.0);
    let idx = trace_ref
        .times
        .iter()
        .position(|&t| (t - s_g).abs() <= tol)
        .ok_or_else(|| {
            Error::InvalidParameter(format!("time grid does not contain the gate time {s_g}"))
        })?;
    let psi_ref = trace_ref.samples[idx].dot(initial);
    let psi_qat = trace_qat.samples[idx].dot(initial);
    let overlap: C64 = psi_ref
        .iter()
        .zip(psi_qat.iter())
        .map(|(a, b)| a.conj() * b)
        .sum();
    Ok(GateScalars {
        bell_at_gate: bell_population(&psi_ref, spec)?,
        approximation_fidelity: overlap.norm_sqr(),
    })
}

/// Quadrature combination of independent drift estimates.
pub fn combined_drift(truncation: f64, integrator: f64) -> f64 {
    truncation.hypot(integrator)
}

/// Render `value` with `drift` as a parenthesized digit in the last decimal
/// place, e.g. (0.99982, 5e-4) -> "0.9998(5)". Non-positive drift falls back
/// to a plain fixed-point rendering.
pub fn format_with_uncertainty(value: f64, drift: f64) -> String {
    if !(drift.is_finite() && drift > 0.0) {
        return format!("{value:.10}");
    }
    let mut exponent = drift.log10().floor() as i32;
    let mut digit = (drift / 10f64.powi(exponent)).round() as i64;
    if digit >= 10 {
        digit = 1;
        exponent += 1;
    }
    let decimals = (-exponent).clamp(0, 12) as usize;
    format!("{value:.decimals$}({digit})")
}

/// One labeled series on the report's time grid.
#[derive(Debug, Clone, Serialize)]
pub struct Channel {
    pub label: String,
    pub values: Vec<f64>,
}

/// One labeled gate-time scalar, optionally with an uncertainty.
#[derive(Debug, Clone, Serialize)]
pub struct GateSummary {
    pub label: String,
    pub value: f64,
    pub uncertainty: Option<f64>,
}

impl GateSummary {
    pub fn formatted(&self) -> String {
        match self.uncertainty {
            Some(drift) => format_with_uncertainty(self.value, drift),
            None => format!("{:.10}", self.value),
        }
    }
}

/// Collected observables for one scenario run: Bell populations and process
/// fidelities per channel on a shared time grid, plus gate-time scalars.
#[derive(Debug, Clone, Serialize)]
pub struct FidelityReport {
    pub times: Vec<f64>,
    pub bell: Vec<Channel>,
    pub process: Vec<Channel>,
    pub gate: Vec<GateSummary>,
}

impl FidelityReport {
    pub fn new(times: Vec<f64>) -> Self {
        Self {
            times,
            bell: Vec::new(),
            process: Vec::new(),
            gate: Vec::new(),
        }
    }

    pub fn push_bell(&mut self, label: impl Into<String>, values: Vec<f64>) {
        self.bell.push(Channel { label: label.into(), values });
    }

    pub fn push_process(&mut self, label: impl Into<String>, values: Vec<f64>) {
        self.process.push(Channel { label: label.into(), values });
    }

    pub fn push_gate(&mut self, label: impl Into<String>, value: f64, uncertainty: Option<f64>) {
        self.gate.push(GateSummary { label: label.into(), value, uncertainty });
    }

    /// Every series must match the time grid and stay inside [0, 1] up to
    /// numerical slack.
    pub fn validate(&self) -> Result<()> {
        for channel in self.bell.iter().chain(self.process.iter()) {
            if channel.values.len() != self.times.len() {
                return Err(Error::DimensionMismatch {
                    left: channel.values.len(),
                    right: self.times.len(),
                    context: "report channel grid",
                });
            }
            for &value in &channel.values {
                if !(-1e-9..=1.0 + 1e-9).contains(&value) {
                    return Err(Error::InvariantViolation {
                        module: "fidelity",
                        detail: format!("channel {} leaves [0, 1]: {value}", channel.label),
                    });
                }
            }
        }
        for scalar in &self.gate {
            if !(-1e-9..=1.0 + 1e-9).contains(&scalar.value) {
                return Err(Error::InvariantViolation {
                    module: "fidelity",
                    detail: format!("gate scalar {} leaves [0, 1]: {}", scalar.label, scalar.value),
                });
            }
        }
        Ok(())
    }
}
