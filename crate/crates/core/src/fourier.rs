//! Almost-periodic operator-valued Fourier series.
//!
//! A series is a finite sum H(s) = sum_Lambda C_Lambda e^{i Lambda s} whose
//! frequencies Lambda are exact integer combinations of a small set of named
//! base frequencies. Keeping the integer vectors instead of floats makes mode
//! arithmetic (sums under commutators, sign flips, zero tests) exact, so the
//! slow/fast split never depends on floating-point frequency comparisons.

use std::collections::BTreeMap;
use std::ops::{Add, Neg, Sub};
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{dagger, fro_norm, OperatorMatrix};

/// Relative coefficient norm below which a mode is treated as numerical junk.
pub const DEFAULT_PRUNE_TOL: f64 = 1e-14;

/// How the averaging split decides that a mode is slow.
///
/// `Threshold` compares the numeric frequency magnitude against a fixed
/// value. `NearResonant` instead cancels the nearest-integer parts of the
/// base frequencies inside the mode's integer combination and calls the mode
/// slow when nothing survives; detunings and envelope harmonics within half
/// a unit of an integer then never separate a modulated drive's family of
/// sidebands, no matter how far the family's teeth spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitRule {
    Threshold(f64),
    NearResonant,
}

impl SplitRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            SplitRule::Threshold(cutoff) => {
                if !(cutoff.is_finite() && *cutoff > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "frequency cutoff {cutoff} must be positive"
                    )));
                }
                Ok(())
            }
            SplitRule::NearResonant => Ok(()),
        }
    }

    pub fn is_slow(&self, freq: &FrequencyVector, basis: &FrequencyBasis) -> bool {
        match self {
            SplitRule::Threshold(cutoff) => freq.value(basis).abs() <= *cutoff,
            SplitRule::NearResonant => freq.coarse_value(basis) == 0,
        }
    }
}

/// Named base frequencies; every [`FrequencyVector`] is an integer combination
/// of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBasis {
    names: Vec<String>,
    values: Vec<f64>,
}

impl FrequencyBasis {
    pub fn new(pairs: &[(&str, f64)]) -> Result<Self> {
        let mut names = Vec::with_capacity(pairs.len());
        let mut values = Vec::with_capacity(pairs.len());
        for &(name, value) in pairs {
            if names.iter().any(|n| n == name) {
                return Err(Error::FrequencyCollision(format!(
                    "base frequency '{name}' declared twice"
                )));
            }
            if !value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "base frequency '{name}' is not finite"
                )));
            }
            names.push(name.to_owned());
            values.push(value);
        }
        Ok(Self { names, values })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value_of(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    /// Nearest-integer part of each base frequency, in units of 1.
    pub fn coarse(&self) -> Vec<i64> {
        self.values.iter().map(|v| v.round() as i64).collect()
    }

    /// Unit vector along one base frequency.
    pub fn unit(&self, name: &str) -> Result<FrequencyVector> {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown base frequency '{name}'")))?;
        let mut coeffs = vec![0i64; self.len()];
        coeffs[idx] = 1;
        Ok(FrequencyVector(coeffs))
    }

    pub fn zero(&self) -> FrequencyVector {
        FrequencyVector(vec![0; self.len()])
    }
}

/// Integer combination of base frequencies. Ordering is lexicographic on the
/// coefficients, which gives every series a deterministic mode order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrequencyVector(Vec<i64>);

impl FrequencyVector {
    pub fn coeffs(&self) -> &[i64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn scaled(&self, k: i64) -> Self {
        Self(self.0.iter().map(|&c| c * k).collect())
    }

    /// Numeric frequency against a basis.
    pub fn value(&self, basis: &FrequencyBasis) -> f64 {
        self.0
            .iter()
            .zip(&basis.values)
            .map(|(&c, &v)| c as f64 * v)
            .sum()
    }

    /// Integer combination of the nearest-integer parts of the base
    /// frequencies: the mode's net frequency with per-unit detunings ignored.
    pub fn coarse_value(&self, basis: &FrequencyBasis) -> i64 {
        self.0
            .iter()
            .zip(basis.coarse())
            .map(|(&c, w)| c * w)
            .sum()
    }
}

impl Add for &FrequencyVector {
    type Output = FrequencyVector;
    fn add(self, rhs: &FrequencyVector) -> FrequencyVector {
        FrequencyVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &FrequencyVector {
    type Output = FrequencyVector;
    fn sub(self, rhs: &FrequencyVector) -> FrequencyVector {
        FrequencyVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Neg for &FrequencyVector {
    type Output = FrequencyVector;
    fn neg(self) -> FrequencyVector {
        FrequencyVector(self.0.iter().map(|&c| -c).collect())
    }
}

/// One term C e^{i Lambda s}; the iteration and serialization unit of a series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FourierMode {
    pub freq: FrequencyVector,
    pub coeff: OperatorMatrix,
}

mod mode_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<FrequencyVector, OperatorMatrix>,
        ser: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_seq(map.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> std::result::Result<BTreeMap<FrequencyVector, OperatorMatrix>, D::Error> {
        let pairs: Vec<(FrequencyVector, OperatorMatrix)> = Deserialize::deserialize(de)?;
        Ok(pairs.into_iter().collect())
    }
}

/// Finite almost-periodic series with dense matrix coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FourierSeries {
    basis: Arc<FrequencyBasis>,
    dim: usize,
    #[serde(with = "mode_map")]
    modes: BTreeMap<FrequencyVector, OperatorMatrix>,
}

impl FourierSeries {
    pub fn new(basis: Arc<FrequencyBasis>, dim: usize) -> Self {
        Self { basis, dim, modes: BTreeMap::new() }
    }

    pub fn basis(&self) -> &Arc<FrequencyBasis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> impl Iterator<Item = (&FrequencyVector, &OperatorMatrix)> {
        self.modes.iter()
    }

    pub fn coeff(&self, freq: &FrequencyVector) -> Option<&OperatorMatrix> {
        self.modes.get(freq)
    }

    fn check_compatible(&self, other: &FourierSeries, context: &'static str) -> Result<()> {
        if self.basis.as_ref() != other.basis.as_ref() {
            return Err(Error::BasisMismatch(context));
        }
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: other.dim,
                context,
            });
        }
        Ok(())
    }

    /// Accumulate one term into the series.
    pub fn add_term(&mut self, freq: FrequencyVector, coeff: OperatorMatrix) -> Result<()> {
        if freq.0.len() != self.basis.len() {
            return Err(Error::BasisMismatch("add_term frequency length"));
        }
        if coeff.nrows() != self.dim || coeff.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                left: coeff.nrows(),
                right: self.dim,
                context: "add_term coefficient",
            });
        }
        match self.modes.entry(freq) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(coeff);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                *e.get_mut() = e.get() + &coeff;
            }
        }
        Ok(())
    }

    /// Accumulate `factor * other` into self.
    pub fn add_scaled(&mut self, other: &FourierSeries, factor: C64) -> Result<()> {
        self.check_compatible(other, "add_scaled")?;
        for (freq, coeff) in &other.modes {
            self.add_term(freq.clone(), coeff.mapv(|z| z * factor))?;
        }
        Ok(())
    }

    pub fn scaled(&self, factor: C64) -> FourierSeries {
        let modes = self
            .modes
            .iter()
            .map(|(f, c)| (f.clone(), c.mapv(|z| z * factor)))
            .collect();
        Self { basis: self.basis.clone(), dim: self.dim, modes }
    }

    /// H(s) as a dense matrix.
    pub fn evaluate(&self, s: f64) -> OperatorMatrix {
        let mut out = Array2::zeros((self.dim, self.dim));
        for (freq, coeff) in &self.modes {
            let phase = C64::from_polar(1.0, freq.value(&self.basis) * s);
            out.scaled_add(phase, coeff);
        }
        out
    }

    pub fn max_coeff_norm(&self) -> f64 {
        self.modes.values().map(fro_norm).fold(0.0, f64::max)
    }

    /// Drop modes whose coefficient norm is below `tol` relative to the
    /// largest coefficient. Returns the number of dropped modes.
    pub fn prune(&mut self, tol: f64) -> usize {
        let floor = tol * self.max_coeff_norm();
        let before = self.modes.len();
        self.modes.retain(|_, coeff| fro_norm(coeff) > floor);
        before - self.modes.len()
    }

    /// Modes whose numeric frequency is at most `cutoff` in magnitude: the
    /// slow part that survives averaging over the fast timescale.
    pub fn partial_average(&self, cutoff: f64) -> FourierSeries {
        self.split_by(SplitRule::Threshold(cutoff)).0
    }

    /// Modes strictly above the cutoff: the oscillatory remainder.
    pub fn fast_part(&self, cutoff: f64) -> FourierSeries {
        self.split_by(SplitRule::Threshold(cutoff)).1
    }

    /// Slow part under an arbitrary split rule.
    pub fn partial_average_by(&self, rule: SplitRule) -> FourierSeries {
        self.split_by(rule).0
    }

    /// Fast remainder under an arbitrary split rule.
    pub fn fast_part_by(&self, rule: SplitRule) -> FourierSeries {
        self.split_by(rule).1
    }

    fn split_by(&self, rule: SplitRule) -> (FourierSeries, FourierSeries) {
        let mut slow = FourierSeries::new(self.basis.clone(), self.dim);
        let mut fast = FourierSeries::new(self.basis.clone(), self.dim);
        for (freq, coeff) in &self.modes {
            if let SplitRule::Threshold(cutoff) = rule {
                let value = freq.value(&self.basis).abs();
                if (value - cutoff).abs() < 1e-6 * cutoff.max(1.0) {
                    log::warn!(
                        "mode frequency {value:.9} sits within 1e-6 of the averaging cutoff \
                         {cutoff:.9}; the slow/fast split is not robust here"
                    );
                }
            }
            let target = if rule.is_slow(freq, &self.basis) {
                &mut slow
            } else {
                &mut fast
            };
            target.modes.insert(freq.clone(), coeff.clone());
        }
        (slow, fast)
    }

    /// Mode-wise antiderivative with zero mean: C_Lambda -> C_Lambda / (i Lambda).
    ///
    /// Fails on any mode whose numeric frequency vanishes, since that term has
    /// no zero-mean antiderivative.
    pub fn antiderivative(&self) -> Result<FourierSeries> {
        let mut out = FourierSeries::new(self.basis.clone(), self.dim);
        for (freq, coeff) in &self.modes {
            let value = freq.value(&self.basis);
            if value.abs() < 1e-12 {
                return Err(Error::ConstantMode { value });
            }
            let factor = C64::new(0.0, value).inv();
            out.modes.insert(freq.clone(), coeff.mapv(|z| z * factor));
        }
        Ok(out)
    }

    /// Mode-wise derivative: C_Lambda -> i Lambda C_Lambda.
    pub fn derivative(&self) -> FourierSeries {
        let modes = self
            .modes
            .iter()
            .map(|(freq, coeff)| {
                let factor = C64::new(0.0, freq.value(&self.basis));
                (freq.clone(), coeff.mapv(|z| z * factor))
            })
            .collect();
        Self { basis: self.basis.clone(), dim: self.dim, modes }
    }

    /// Restrict every coefficient to its leading `dim` x `dim` block. Only
    /// meaningful when the matrix index is a plain boson level, where it
    /// discards the top Fock levels.
    pub fn truncated(&self, dim: usize) -> Result<FourierSeries> {
        if dim > self.dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: self.dim,
                context: "truncated",
            });
        }
        let modes = self
            .modes
            .iter()
            .map(|(f, c)| (f.clone(), c.slice(ndarray::s![..dim, ..dim]).to_owned()))
            .collect();
        Ok(Self { basis: self.basis.clone(), dim, modes })
    }

    /// Largest norm of C_{-Lambda} - C_Lambda^dag over the series, relative to
    /// the largest coefficient; zero for an exactly Hermitian-paired series.
    pub fn hermitian_pairing_residual(&self) -> f64 {
        let scale = self.max_coeff_norm();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0_f64;
        for (freq, coeff) in &self.modes {
            let partner = self.modes.get(&-freq);
            let residual = match partner {
                Some(p) => fro_norm(&(p - &dagger(coeff))),
                None => fro_norm(coeff),
            };
            worst = worst.max(residual);
        }
        worst / scale
    }
}

/// Commutator of two series by frequency-vector convolution:
/// [A, B]_Lambda = sum over Lambda1 + Lambda2 = Lambda of [A_1, B_2].
///
/// Mode pairs whose norm product cannot reach [`DEFAULT_PRUNE_TOL`] relative
/// to the largest pair are skipped, and the result is pruned at the same
/// relative tolerance.
pub fn series_commutator(a: &FourierSeries, b: &FourierSeries) -> Result<FourierSeries> {
    a.check_compatible(b, "series_commutator")?;
    let mut out = FourierSeries::new(a.basis.clone(), a.dim);
    let norms_a: Vec<(&FrequencyVector, &OperatorMatrix, f64)> =
        a.modes.iter().map(|(f, c)| (f, c, fro_norm(c))).collect();
    let norms_b: Vec<(&FrequencyVector, &OperatorMatrix, f64)> =
        b.modes.iter().map(|(f, c)| (f, c, fro_norm(c))).collect();
    let max_a = norms_a.iter().map(|t| t.2).fold(0.0, f64::max);
    let max_b = norms_b.iter().map(|t| t.2).fold(0.0, f64::max);
    let floor = DEFAULT_PRUNE_TOL * max_a * max_b;
    for &(fa, ca, na) in &norms_a {
        if na * max_b <= floor {
            continue;
        }
        for &(fb, cb, nb) in &norms_b {
            if na * nb <= floor {
                continue;
            }
            let comm = ca.dot(cb) - cb.dot(ca);
            out.add_term(fa + fb, comm)?;
        }
    }
    out.prune(DEFAULT_PRUNE_TOL);
    Ok(out)
}

/// Stack of series indexed by perturbative order: slot n holds the
/// coefficient of lambda^n for n = 0..=max_order. Slot zero is reserved for
/// an unexpanded carrier-strength term; most pipelines require it empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbativeSeries {
    basis: Arc<FrequencyBasis>,
    dim: usize,
    orders: Vec<FourierSeries>,
}

impl PerturbativeSeries {
    pub fn new(basis: Arc<FrequencyBasis>, dim: usize, max_order: usize) -> Self {
        let orders = (0..=max_order)
            .map(|_| FourierSeries::new(basis.clone(), dim))
            .collect();
        Self { basis, dim, orders }
    }

    pub fn basis(&self) -> &Arc<FrequencyBasis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_order(&self) -> usize {
        self.orders.len() - 1
    }

    pub fn order(&self, n: usize) -> Result<&FourierSeries> {
        self.orders
            .get(n)
            .ok_or(Error::MissingOrder { order: n, available: self.orders.len() - 1 })
    }

    pub fn order_mut(&mut self, n: usize) -> Result<&mut FourierSeries> {
        let available = self.orders.len() - 1;
        self.orders
            .get_mut(n)
            .ok_or(Error::MissingOrder { order: n, available })
    }

    pub fn set_order(&mut self, n: usize, series: FourierSeries) -> Result<()> {
        if series.basis.as_ref() != self.basis.as_ref() {
            return Err(Error::BasisMismatch("set_order"));
        }
        if series.dim != self.dim {
            return Err(Error::DimensionMismatch {
                left: series.dim,
                right: self.dim,
                context: "set_order",
            });
        }
        *self.order_mut(n)? = series;
        Ok(())
    }

    /// Sum of lambda^n * order_n(s) over all stored orders.
    pub fn evaluate(&self, s: f64, lambda: f64) -> OperatorMatrix {
        let mut out = Array2::zeros((self.dim, self.dim));
        let mut weight = 1.0;
        for (n, series) in self.orders.iter().enumerate() {
            if n > 0 {
                weight *= lambda;
            }
            out = out + series.evaluate(s).mapv(|z| z * weight);
        }
        out
    }

    /// Restrict every coefficient to its leading `dim` x `dim` block. Only
    /// meaningful when the matrix index is a plain boson level.
    pub fn truncated(&self, dim: usize) -> Result<PerturbativeSeries> {
        let orders = self
            .orders
            .iter()
            .map(|series| series.truncated(dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { basis: self.basis.clone(), dim, orders })
    }
}
