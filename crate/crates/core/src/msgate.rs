//! Bichromatic sideband drive on a register of two ions sharing one motional
//! mode, in the carrier-resolved interaction picture with time in units of
//! the trap period (Lambda_nu = 1).
//!
//! The drive couples through a single collective spin axis
//! J = sin(phi+) Jx + cos(phi+) Jy, so every interaction term factors as
//! J^p (x) (boson operator). Builders come in two flavors:
//! * composite: full spin (x) boson matrices;
//! * block: boson-only matrices with J replaced by a scalar +1 or -1, valid
//!   because the spin factor is a fixed matrix power of one operator. The
//!   composite operator is recovered from the two blocks through the
//!   eigenprojectors of J (eigenvalues -1, 0, 0, +1).
//!
//! Order n of the expansion in the Lamb-Dicke parameter carries modes at
//! +/-Lambda_Delta + (n-2k) Lambda_nu, shifted by window harmonics when the
//! pulse is amplitude-shaped.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{FourierSeries, FrequencyBasis, FrequencyVector, PerturbativeSeries};
use crate::hilbert::{
    bare_spin_axis, boson_displacement, boson_lowering, dagger, embed_spin, identity, kron,
    matpow, matrix_exp, HilbertSpec, OperatorMatrix,
};

const TAU_SIN4_WEIGHTS: [(i64, f64); 5] = [
    (-2, 1.0 / 16.0),
    (-1, -0.25),
    (0, 0.375),
    (1, -0.25),
    (2, 1.0 / 16.0),
];

/// Tone-1 amplitude for [`MsModel::shaped_scenario`] at eta = 0.1 that
/// maximizes the Bell population of exact dynamics at the gate time
/// (0.99998268 from |gg> with a coherent alpha = i sqrt(5) mode). Found by a
/// parabolic scan against exact integration; the optimum and its value are
/// stable under Fock truncation 40 -> 56 and tolerance 1e-10 -> 1e-11.
pub const SHAPED_RABI_1: f64 = 0.995801;

/// Amplitude envelope shared by all drive tones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PulseWindow {
    Flat,
    /// sin^4(omega s / 2); one full pulse spans s in [0, 2 pi / omega].
    SinFourth { omega: f64 },
}

impl PulseWindow {
    /// Harmonic decomposition of sin^4(x/2) = 3/8 - cos(x)/2 + cos(2x)/8 as
    /// (multiple of omega, weight) pairs.
    pub fn sin4_harmonics() -> [(i64, f64); 5] {
        TAU_SIN4_WEIGHTS
    }

    pub fn envelope(&self, s: f64) -> f64 {
        match self {
            PulseWindow::Flat => 1.0,
            PulseWindow::SinFourth { omega } => (0.5 * omega * s).sin().powi(4),
        }
    }
}

/// One drive tone: Rabi rate and beat-note frequency, both over the trap
/// frequency. The tone enters the Hamiltonian through
/// f(s) = i e^{i phi_-} e^{-i detuning s}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveTone {
    pub rabi: f64,
    pub detuning: f64,
}

/// Full description of the driven spin-boson model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsModel {
    pub spec: HilbertSpec,
    /// Lamb-Dicke parameter; doubles as the expansion parameter lambda.
    pub eta: f64,
    pub tones: Vec<DriveTone>,
    pub window: PulseWindow,
    pub phi_plus: f64,
    pub phi_minus: f64,
    /// Highest retained order of the Lamb-Dicke expansion.
    pub expansion_order: usize,
    /// Keep the order-zero carrier term in built series and evaluators.
    pub include_carrier: bool,
}

impl MsModel {
    /// Single unshaped tone near the first sideband; standard phase choice
    /// phi_+ = pi/4 (Bell-state axis), phi_- = 0.
    pub fn flat(eta: f64, rabi: f64, detuning: f64, n_max: usize) -> Result<Self> {
        let model = Self {
            spec: HilbertSpec::new(2, n_max)?,
            eta,
            tones: vec![DriveTone { rabi, detuning }],
            window: PulseWindow::Flat,
            phi_plus: std::f64::consts::FRAC_PI_4,
            phi_minus: 0.0,
            expansion_order: 4,
            include_carrier: false,
        };
        model.validate()?;
        Ok(model)
    }

    /// Two-tone amplitude-shaped drive: tone 1 red of the first sideband by
    /// delta1 = 3 delta2, tone 2 red of the second sideband by
    /// delta2 = 0.107, both under a sin^4 window with omega = delta2 / 3 and
    /// fixed Rabi ratio rabi2 / rabi1 = 0.7885. One window period is the gate
    /// time.
    ///
    /// Both tones sit below their sidebands. The second tone's number-shift
    /// phase then counters the first tone's, which is what flattens the
    /// spin-squared phase across phonon levels; on the other side of the
    /// second sideband the two shifts add instead.
    pub fn shaped_scenario(eta: f64, rabi1: f64, n_max: usize) -> Result<Self> {
        let delta2 = 0.107;
        let model = Self {
            spec: HilbertSpec::new(2, n_max)?,
            eta,
            tones: vec![
                DriveTone { rabi: rabi1, detuning: 1.0 - 3.0 * delta2 },
                DriveTone { rabi: 0.7885 * rabi1, detuning: 2.0 - delta2 },
            ],
            window: PulseWindow::SinFourth { omega: delta2 / 3.0 },
            phi_plus: std::f64::consts::FRAC_PI_4,
            phi_minus: 0.0,
            expansion_order: 4,
            include_carrier: false,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "Lamb-Dicke parameter {} outside (0, 1)",
                self.eta
            )));
        }
        if self.tones.is_empty() {
            return Err(Error::InvalidParameter("no drive tones".into()));
        }
        for (i, tone) in self.tones.iter().enumerate() {
            if tone.rabi <= 0.0 || !tone.rabi.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "tone {} Rabi rate {} must be positive",
                    i + 1,
                    tone.rabi
                )));
            }
            if tone.detuning <= 0.0 || !tone.detuning.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "tone {} beat note {} must be positive",
                    i + 1,
                    tone.detuning
                )));
            }
        }
        if let PulseWindow::SinFourth { omega } = self.window {
            if omega <= 0.0 || !omega.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "window frequency {omega} must be positive"
                )));
            }
        }
        if self.expansion_order == 0 {
            return Err(Error::InvalidParameter("expansion order must be at least 1".into()));
        }
        Ok(())
    }

    /// Rabi rate dressed by the Debye-Waller factor e^{-eta^2/2}.
    pub fn lamb_dicke_rabi(&self, tone: usize) -> f64 {
        (-0.5 * self.eta * self.eta).exp() * self.tones[tone].rabi
    }

    /// Detuning of a tone's beat note from the nearest motional sideband,
    /// positive when red of it.
    pub fn gate_detuning(&self, tone: usize) -> f64 {
        let detuning = self.tones[tone].detuning;
        detuning.round() - detuning
    }

    /// One full window period; only defined for shaped pulses.
    pub fn gate_time(&self) -> Result<f64> {
        match self.window {
            PulseWindow::SinFourth { omega } => Ok(std::f64::consts::TAU / omega),
            PulseWindow::Flat => Err(Error::InvalidParameter(
                "flat drives have no intrinsic gate time".into(),
            )),
        }
    }

    /// Base frequencies: trap frequency, one beat note per tone, and the
    /// window frequency when shaped.
    pub fn frequency_basis(&self) -> Result<Arc<FrequencyBasis>> {
        let mut pairs: Vec<(String, f64)> = vec![("nu".into(), 1.0)];
        for (i, tone) in self.tones.iter().enumerate() {
            pairs.push((format!("det{}", i + 1), tone.detuning));
        }
        if let PulseWindow::SinFourth { omega } = self.window {
            pairs.push(("win".into(), omega));
        }
        let borrowed: Vec<(&str, f64)> = pairs.iter().map(|(n, v)| (n.as_str(), *v)).collect();
        Ok(Arc::new(FrequencyBasis::new(&borrowed)?))
    }

    /// Spin axis operator on the bare qubit register.
    pub fn spin_axis_bare(&self) -> OperatorMatrix {
        bare_spin_axis(self.spec.n_qubits, self.phi_plus)
    }

    /// Spin axis operator on the composite space.
    pub fn spin_axis(&self) -> OperatorMatrix {
        embed_spin(&self.spec, &self.spin_axis_bare())
    }

    /// Interaction expansion on the composite space.
    pub fn build_interaction(&self) -> Result<PerturbativeSeries> {
        let j = self.spin_axis_bare();
        self.build_generic(self.spec.dim(), &|boson| kron(&j, boson))
    }

    /// Interaction expansion on one spin eigenblock: J is replaced by
    /// `j_sign` and coefficients act on the boson space alone.
    pub fn build_interaction_block(&self, j_sign: f64) -> Result<PerturbativeSeries> {
        self.build_generic(self.spec.boson_dim(), &|boson| boson.mapv(|z| z * j_sign))
    }

    fn window_weights(&self) -> Vec<(i64, f64)> {
        match self.window {
            PulseWindow::Flat => vec![(0, 1.0)],
            PulseWindow::SinFourth { .. } => TAU_SIN4_WEIGHTS.to_vec(),
        }
    }

    fn build_generic(
        &self,
        dim: usize,
        embed: &dyn Fn(&OperatorMatrix) -> OperatorMatrix,
    ) -> Result<PerturbativeSeries> {
        self.validate()?;
        let basis = self.frequency_basis()?;
        let nu = basis.unit("nu")?;
        let win = match self.window {
            PulseWindow::SinFourth { .. } => Some(basis.unit("win")?),
            PulseWindow::Flat => None,
        };
        let weights = self.window_weights();
        let boson_dim = self.spec.boson_dim();
        let a = boson_lowering(boson_dim);
        let ad = dagger(&a);

        let mut stack = PerturbativeSeries::new(basis.clone(), dim, self.expansion_order);
        let mut generated: Vec<FrequencyVector> = Vec::new();

        for ti in 0..self.tones.len() {
            let det = basis.unit(&format!("det{}", ti + 1))?;
            let rabi = self.lamb_dicke_rabi(ti);
            // f(s) = i e^{i phi_-} e^{-i detuning s}; the h.c. drive term
            // contributes the mirror mode with (-1)^n relative sign.
            for n in 1..=self.expansion_order {
                let i_pow = C64::i().powu(((n + 1) % 4) as u32);
                let base_minus = i_pow * rabi * C64::from_polar(1.0, self.phi_minus);
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                let base_plus = -i_pow * sign * rabi * C64::from_polar(1.0, -self.phi_minus);
                for k in 0..=n {
                    let norm = 1.0 / (factorial(n - k) * factorial(k));
                    let ladder = matpow(&ad, n - k).dot(&matpow(&a, k)).mapv(|z| z * norm);
                    let coeff = embed(&ladder);
                    let spatial = nu.scaled(n as i64 - 2 * k as i64);
                    let freq_minus = &spatial - &det;
                    let freq_plus = &spatial + &det;
                    for &(shift, weight) in &weights {
                        let offset = win.as_ref().map(|w| w.scaled(shift));
                        for (freq, base) in
                            [(&freq_minus, base_minus), (&freq_plus, base_plus)]
                        {
                            let total = match &offset {
                                Some(o) => freq + o,
                                None => freq.clone(),
                            };
                            generated.push(total.clone());
                            stack
                                .order_mut(n)?
                                .add_term(total, coeff.mapv(|z| z * base * weight))?;
                        }
                    }
                }
            }
            if self.include_carrier {
                let eye = embed(&identity(boson_dim));
                let base_minus = C64::i() * rabi * C64::from_polar(1.0, self.phi_minus);
                let base_plus = -C64::i() * rabi * C64::from_polar(1.0, -self.phi_minus);
                for &(shift, weight) in &weights {
                    let offset = win.as_ref().map(|w| w.scaled(shift));
                    for (freq, base) in [(-&det, base_minus), (det.clone(), base_plus)] {
                        let total = match &offset {
                            Some(o) => &freq + o,
                            None => freq.clone(),
                        };
                        generated.push(total.clone());
                        stack
                            .order_mut(0)?
                            .add_term(total, eye.mapv(|z| z * base * weight))?;
                    }
                }
            }
        }

        check_mode_collisions(&generated, &basis)?;
        Ok(stack)
    }

    /// Order-zero carrier strength 2 Lambda'_Omega sin(detuning s - phi_-)
    /// summed over tones, under the window envelope.
    pub fn carrier_scalar(&self, s: f64) -> f64 {
        let mut value = 0.0;
        for ti in 0..self.tones.len() {
            value += 2.0 * self.lamb_dicke_rabi(ti) * (self.tones[ti].detuning * s - self.phi_minus).sin();
        }
        value * self.window.envelope(s)
    }

    /// Evaluator for the unexpanded Hamiltonian; carrier handling follows
    /// `include_carrier`.
    pub fn exact_evaluator(&self) -> ExactEvaluator {
        ExactEvaluator {
            d0: boson_displacement(self.spec.boson_dim(), C64::i() * self.eta),
            j_bare: self.spin_axis_bare(),
            model: self.clone(),
        }
    }

    fn require_flat_single_tone(&self, what: &str) -> Result<()> {
        if self.tones.len() != 1 || self.window != PulseWindow::Flat {
            return Err(Error::InvalidParameter(format!(
                "{what} is defined for a single unshaped tone only"
            )));
        }
        Ok(())
    }

    /// Sideband-frame displacement amplitude of the leading-order effective
    /// dynamics, as a function of slow time tau = eta * s.
    pub fn first_order_displacement(&self, tau: f64) -> Result<C64> {
        self.require_flat_single_tone("the first-order displacement")?;
        let w = self.lamb_dicke_rabi(0);
        let eps = self.gate_detuning(0) / self.eta;
        let phase = C64::from_polar(1.0, self.phi_minus);
        if eps.abs() < 1e-9 {
            return Ok(C64::i() * w * tau * phase);
        }
        Ok(phase * w * (C64::from_polar(1.0, eps * tau) - 1.0) / eps)
    }

    /// Accumulated geometric phase of the leading-order effective dynamics.
    pub fn first_order_phase(&self, tau: f64) -> Result<f64> {
        self.require_flat_single_tone("the first-order phase")?;
        let w = self.lamb_dicke_rabi(0);
        let eps = self.gate_detuning(0) / self.eta;
        if eps.abs() < 1e-9 {
            return Ok(0.0);
        }
        Ok(w * w * (tau - (eps * tau).sin() / eps) / eps)
    }

    /// Closed-form leading-order effective propagator
    /// D(J alpha(tau)) e^{i theta(tau) J^2} on the composite space.
    pub fn first_order_propagator(&self, s: f64) -> Result<OperatorMatrix> {
        let tau = self.eta * s;
        let alpha = self.first_order_displacement(tau)?;
        let theta = self.first_order_phase(tau)?;
        let boson_dim = self.spec.boson_dim();
        let a = boson_lowering(boson_dim);
        let gen = dagger(&a).mapv(|z| z * alpha) - a.mapv(|z| z * alpha.conj());
        let j = self.spin_axis_bare();
        let displacement = matrix_exp(&kron(&j, &gen));
        let j2 = embed_spin(&self.spec, &j.dot(&j));
        let rotation = matrix_exp(&j2.mapv(|z| z * C64::new(0.0, theta)));
        Ok(displacement.dot(&rotation))
    }

    /// Counter-rotating displacement amplitude of one tone: the zero-mean
    /// antiderivative of i eta Lambda' w(s) G^*(s) e^{2 i Lambda_nu s},
    /// evaluated through the window harmonic sum.
    pub fn counter_rotating_displacement(&self, tone: usize, s: f64) -> C64 {
        let w = self.lamb_dicke_rabi(tone);
        let beat = 1.0 + self.tones[tone].detuning;
        let omega = match self.window {
            PulseWindow::SinFourth { omega } => omega,
            PulseWindow::Flat => 0.0,
        };
        let mut total = C64::new(0.0, 0.0);
        for (shift, weight) in self.window_weights() {
            let freq = beat + shift as f64 * omega;
            total += weight * C64::from_polar(1.0, freq * s - self.phi_minus) / freq;
        }
        total * self.eta * w
    }

    /// Effective-Hamiltonian closed forms through fourth order for the
    /// single-tone unshaped drive, on one spin eigenblock (orders carry
    /// J^1 or J^2 factors, mapped to j_sign^p).
    pub fn closed_form_effective_block(&self, j_sign: f64) -> Result<PerturbativeSeries> {
        self.require_flat_single_tone("the effective-Hamiltonian closed form")?;
        let basis = self.frequency_basis()?;
        let boson_dim = self.spec.boson_dim();
        let mut stack = PerturbativeSeries::new(basis.clone(), boson_dim, 4);

        let nu = basis.unit("nu")?;
        let det = basis.unit("det1")?;
        let g_vec = &nu - &det; // frequency of G(s) = e^{i phi_-} e^{i (nu - det) s}
        let w = self.lamb_dicke_rabi(0);
        let dl = self.gate_detuning(0);
        let g = C64::from_polar(1.0, self.phi_minus);
        let j1 = j_sign;
        let j2 = j_sign * j_sign;
        let a = boson_lowering(boson_dim);
        let ad = dagger(&a);
        let eye = identity(boson_dim);
        let num = ad.dot(&a);

        let order1 = stack.order_mut(1)?;
        add_pair(order1, &g_vec, ad.mapv(|z| z * (-w * j1 * g)))?;

        let order2 = stack.order_mut(2)?;
        order2.add_term(basis.zero(), eye.mapv(|z| z * (w * w * j2 / (dl - 2.0))))?;

        let order3 = stack.order_mut(3)?;
        let cubic = ad.dot(&ad).dot(&a);
        add_pair(order3, &g_vec, cubic.mapv(|z| z * (0.5 * w * j1 * g)))?;

        let order4 = stack.order_mut(4)?;
        let shift = -2.0 / (dl - 2.0) + 4.0 / ((dl - 3.0) * (dl + 1.0));
        order4.add_term(basis.zero(), num.mapv(|z| z * (w * w * j2 * shift)))?;
        order4.add_term(
            basis.zero(),
            eye.mapv(|z| z * (w * w * j2 * 2.0 / ((dl - 3.0) * (dl + 1.0)))),
        )?;
        let squeeze = w * w * j2 * (5.0 - 2.0 * dl * dl)
            / ((dl * dl - 1.0) * (dl * dl - 4.0));
        add_pair(
            order4,
            &g_vec.scaled(2),
            ad.dot(&ad).mapv(|z| z * (squeeze * g * g)),
        )?;

        Ok(stack)
    }

    /// Oscillatory-generator closed forms through third order for the
    /// single-tone unshaped drive, on one spin eigenblock.
    pub fn closed_form_generator_block(&self, j_sign: f64) -> Result<PerturbativeSeries> {
        self.require_flat_single_tone("the generator closed form")?;
        let basis = self.frequency_basis()?;
        let boson_dim = self.spec.boson_dim();
        let mut stack = PerturbativeSeries::new(basis.clone(), boson_dim, 3);

        let nu = basis.unit("nu")?;
        let det = basis.unit("det1")?;
        let w = self.lamb_dicke_rabi(0);
        let dl = self.gate_detuning(0);
        let g = C64::from_polar(1.0, self.phi_minus);
        let gc = g.conj();
        let i = C64::i();
        let j1 = j_sign;
        let j2 = j_sign * j_sign;
        let a = boson_lowering(boson_dim);
        let ad = dagger(&a);
        let eye = identity(boson_dim);
        let num = ad.dot(&a);

        // order 1: counter-rotating sideband at nu + det
        let order1 = stack.order_mut(1)?;
        add_pair(
            order1,
            &(&nu + &det),
            ad.mapv(|z| z * (-i * w * j1 * gc / (dl - 2.0))),
        )?;

        // order 2
        let order2 = stack.order_mut(2)?;
        order2.add_term(-&det, num.mapv(|z| z * (-w * j1 * g / (dl - 1.0))))?;
        order2.add_term(det.clone(), num.mapv(|z| z * (-w * j1 * gc / (dl - 1.0))))?;
        let two_nu_minus = &nu.scaled(2) - &det; // G e^{i nu s} phase
        let two_nu_plus = &nu.scaled(2) + &det; // G^* e^{3 i nu s} phase
        add_pair(
            order2,
            &two_nu_minus,
            ad.dot(&ad).mapv(|z| z * (-0.5 * w * j1 * g / (dl + 1.0))),
        )?;
        add_pair(
            order2,
            &two_nu_plus,
            ad.dot(&ad).mapv(|z| z * (-0.5 * w * j1 * gc / (dl - 3.0))),
        )?;
        let spin_amp = -i * w * w * j2 * g * g / (2.0 * (dl - 1.0) * (dl - 2.0));
        order2.add_term(det.scaled(-2), eye.mapv(|z| z * spin_amp))?;
        order2.add_term(det.scaled(2), eye.mapv(|z| z * spin_amp.conj()))?;

        // order 3
        let order3 = stack.order_mut(3)?;
        let cubic = ad.dot(&ad).dot(&a);
        add_pair(
            order3,
            &(&nu + &det),
            cubic.mapv(|z| z * (i * w * j1 * gc / (2.0 * (dl - 2.0)))),
        )?;
        let triple = ad.dot(&ad).dot(&ad);
        add_pair(
            order3,
            &(&nu.scaled(3) + &det),
            triple.mapv(|z| z * (i * w * j1 * gc / (6.0 * (dl - 4.0)))),
        )?;
        add_pair(
            order3,
            &(&nu.scaled(3) - &det),
            triple.mapv(|z| z * (-i * w * j1 * g / (6.0 * (dl + 2.0)))),
        )?;
        let c_a = w * w * j2 * (2.0 * dl * dl + dl - 7.0)
            / (2.0 * (dl - 2.0) * (dl * dl - 1.0) * (2.0 * dl - 1.0));
        add_pair(order3, &(&nu - &det.scaled(2)), ad.mapv(|z| z * (c_a * g * g)))?;
        let c_b = w * w * j2 * (2.0 * dl * dl - 5.0 * dl + 1.0)
            / (2.0 * (2.0 * dl - 3.0) * (dl - 3.0) * (dl - 2.0) * (dl - 1.0));
        add_pair(order3, &(&nu + &det.scaled(2)), ad.mapv(|z| z * (c_b * gc * gc)))?;
        let c_c = w * w * j2 * (dl - 7.0) / ((dl - 3.0) * (dl * dl - 1.0));
        add_pair(order3, &nu, ad.mapv(|z| z * c_c))?;

        Ok(stack)
    }
}

/// Add `coeff` at `freq` together with its Hermitian partner at the mirrored
/// frequency.
fn add_pair(series: &mut FourierSeries, freq: &FrequencyVector, coeff: OperatorMatrix) -> Result<()> {
    series.add_term(freq.clone(), coeff.clone())?;
    series.add_term(-freq, dagger(&coeff))
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |p, k| p * k as f64)
}

/// Reject drive configurations where two distinct mode labels land on the
/// same numeric frequency (or a nonzero label lands on zero): the slow/fast
/// split and small denominators would then depend on which label is asked.
fn check_mode_collisions(generated: &[FrequencyVector], basis: &FrequencyBasis) -> Result<()> {
    let mut seen: Vec<(&FrequencyVector, f64)> = Vec::new();
    for freq in generated {
        let value = freq.value(basis);
        if !freq.is_zero() && value.abs() < 1e-9 {
            return Err(Error::FrequencyCollision(format!(
                "mode {:?} has numeric frequency {value:.3e}, indistinguishable from DC",
                freq.coeffs()
            )));
        }
        for &(other, other_value) in &seen {
            if other != freq && (value - other_value).abs() < 1e-9 {
                return Err(Error::FrequencyCollision(format!(
                    "modes {:?} and {:?} are distinct labels at the same frequency {value:.9}",
                    freq.coeffs(),
                    other.coeffs()
                )));
            }
        }
        if !seen.iter().any(|&(f, _)| f == freq) {
            seen.push((freq, value));
        }
    }
    Ok(())
}

/// Evaluates the unexpanded Hamiltonian. The displacement operator is built
/// once at s = 0 and rotated to time s through Fock-phase scaling, which is
/// exact for the truncated matrices.
pub struct ExactEvaluator {
    d0: OperatorMatrix,
    j_bare: OperatorMatrix,
    model: MsModel,
}

impl ExactEvaluator {
    /// Boson factor of the Hamiltonian at time s (the full operator is
    /// J (x) this matrix).
    pub fn boson_part(&self, s: f64) -> OperatorMatrix {
        let dim = self.d0.nrows();
        let phases: Vec<C64> = (0..dim).map(|k| C64::from_polar(1.0, s * k as f64)).collect();
        let mut drive = C64::new(0.0, 0.0);
        for tone in &self.model.tones {
            drive += C64::i()
                * tone.rabi
                * C64::from_polar(1.0, self.model.phi_minus - tone.detuning * s);
        }
        let mut b = Array2::zeros((dim, dim));
        for i in 0..dim {
            for k in 0..dim {
                b[(i, k)] = drive * phases[i] * phases[k].conj() * self.d0[(i, k)];
            }
        }
        let mut b = &b + &dagger(&b);
        if !self.model.include_carrier {
            let scale = (-0.5 * self.model.eta * self.model.eta).exp();
            let mut carrier = 0.0;
            for tone in &self.model.tones {
                carrier += 2.0
                    * scale
                    * tone.rabi
                    * (tone.detuning * s - self.model.phi_minus).sin();
            }
            for i in 0..dim {
                b[(i, i)] -= carrier;
            }
        }
        let envelope = self.model.window.envelope(s);
        b.mapv_into(|z| z * envelope)
    }

    /// Hamiltonian restricted to one spin eigenblock.
    pub fn block(&self, s: f64, j_sign: f64) -> OperatorMatrix {
        self.boson_part(s).mapv_into(|z| z * j_sign)
    }

    /// Hamiltonian on the composite space.
    pub fn composite(&self, s: f64) -> OperatorMatrix {
        kron(&self.j_bare, &self.boson_part(s))
    }
}
