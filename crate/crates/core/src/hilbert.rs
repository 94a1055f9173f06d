//! Composite spin-boson Hilbert space and dense operator algebra.
//!
//! Conventions used throughout the crate:
//! * composite basis index = (spin index) * (n_max + 1) + (Fock index),
//!   i.e. qubits are the slow index and the motional mode the fast one;
//! * qubit basis ordering (|g>, |e>), so sigma_z = diag(-1, +1) and
//!   sigma_+ = |e><g|;
//! * collective spin J_k = (1/2) sum_i sigma_k^(i);
//! * all operators are dense `Array2<Complex64>`; Hermiticity and unitarity
//!   are checked through residual norms, never assumed.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Dense complex matrix, the coefficient type for every operator in the crate.
pub type OperatorMatrix = Array2<C64>;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Dimensions of a register of qubits coupled to one truncated motional mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct HilbertSpec {
    pub n_qubits: usize,
    /// Highest retained Fock level; the motional factor has n_max + 1 levels.
    pub n_max: usize,
}

impl HilbertSpec {
    pub fn new(n_qubits: usize, n_max: usize) -> Result<Self> {
        if n_qubits == 0 {
            return Err(Error::InvalidParameter("n_qubits must be at least 1".into()));
        }
        if n_max < 1 {
            return Err(Error::InvalidParameter("n_max must be at least 1".into()));
        }
        Ok(Self { n_qubits, n_max })
    }

    pub fn spin_dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn boson_dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn dim(&self) -> usize {
        self.spin_dim() * self.boson_dim()
    }
}

/// Collective spin operators embedded on the composite space.
#[derive(Debug, Clone)]
pub struct SpinOps {
    pub jx: OperatorMatrix,
    pub jy: OperatorMatrix,
    pub jz: OperatorMatrix,
}

/// Ladder and number operators embedded on the composite space.
#[derive(Debug, Clone)]
pub struct BosonOps {
    pub lower: OperatorMatrix,
    pub raise: OperatorMatrix,
    pub number: OperatorMatrix,
}

pub fn identity(dim: usize) -> OperatorMatrix {
    Array2::eye(dim)
}

fn pauli(axis: usize) -> OperatorMatrix {
    let i = C64::i();
    match axis {
        0 => ndarray::array![[ZERO, ONE], [ONE, ZERO]],
        1 => ndarray::array![[ZERO, i], [-i, ZERO]],
        _ => ndarray::array![[-ONE, ZERO], [ZERO, ONE]],
    }
}

/// Collective spin component on the bare 2^n_qubits spin space.
pub fn bare_spin(n_qubits: usize, axis: usize) -> OperatorMatrix {
    let dim = 1 << n_qubits;
    let mut total = Array2::zeros((dim, dim));
    for site in 0..n_qubits {
        let mut op = identity(1);
        for k in 0..n_qubits {
            let factor = if k == site { pauli(axis) } else { identity(2) };
            op = kron(&op, &factor);
        }
        total = total + op;
    }
    total.mapv_into(|z| z * 0.5)
}

/// Collective spin along the axis sin(phi_plus) x + cos(phi_plus) y,
/// on the bare spin space.
pub fn bare_spin_axis(n_qubits: usize, phi_plus: f64) -> OperatorMatrix {
    let jx = bare_spin(n_qubits, 0);
    let jy = bare_spin(n_qubits, 1);
    let (s, c) = phi_plus.sin_cos();
    jx.mapv(|z| z * s) + jy.mapv(|z| z * c)
}

pub fn build_spin_ops(spec: &HilbertSpec) -> SpinOps {
    let eye_b = identity(spec.boson_dim());
    SpinOps {
        jx: kron(&bare_spin(spec.n_qubits, 0), &eye_b),
        jy: kron(&bare_spin(spec.n_qubits, 1), &eye_b),
        jz: kron(&bare_spin(spec.n_qubits, 2), &eye_b),
    }
}

/// Truncated lowering operator on the bare Fock space: a|n> = sqrt(n)|n-1>.
pub fn boson_lowering(boson_dim: usize) -> OperatorMatrix {
    let mut a = Array2::zeros((boson_dim, boson_dim));
    for n in 1..boson_dim {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}

pub fn boson_number(boson_dim: usize) -> OperatorMatrix {
    Array2::from_diag(&Array1::from_iter(
        (0..boson_dim).map(|n| C64::new(n as f64, 0.0)),
    ))
}

pub fn build_boson_ops(spec: &HilbertSpec) -> BosonOps {
    let eye_s = identity(spec.spin_dim());
    let a = boson_lowering(spec.boson_dim());
    BosonOps {
        raise: kron(&eye_s, &dagger(&a)),
        number: kron(&eye_s, &boson_number(spec.boson_dim())),
        lower: kron(&eye_s, &a),
    }
}

/// Embed a bare spin-space operator on the composite space.
pub fn embed_spin(spec: &HilbertSpec, op: &OperatorMatrix) -> OperatorMatrix {
    kron(op, &identity(spec.boson_dim()))
}

/// Embed a bare Fock-space operator on the composite space.
pub fn embed_boson(spec: &HilbertSpec, op: &OperatorMatrix) -> OperatorMatrix {
    kron(&identity(spec.spin_dim()), op)
}

fn coherent_tail_warning(boson_dim: usize, alpha: C64) {
    let nbar = alpha.norm_sqr();
    let guard_start = boson_dim - boson_dim / 10 - 1;
    let mut log_p = -nbar;
    let mut tail = 0.0;
    for n in 0..boson_dim {
        if n >= guard_start {
            tail += log_p.exp();
        }
        log_p += nbar.ln() - ((n + 1) as f64).ln();
    }
    if tail > 1e-10 {
        log::warn!(
            "displacement amplitude |alpha|^2 = {nbar:.3} leaves {tail:.2e} coherent population \
             in the top 10% of {boson_dim} Fock levels; increase n_max"
        );
    }
}

/// Displacement operator exp(alpha a^dag - alpha^* a) on the bare Fock space.
///
/// Warns when the coherent state implied by `alpha` has more than 1e-10 of its
/// population in the top 10% of retained levels.
pub fn boson_displacement(boson_dim: usize, alpha: C64) -> OperatorMatrix {
    coherent_tail_warning(boson_dim, alpha);
    let a = boson_lowering(boson_dim);
    let arg = dagger(&a).mapv(|z| z * alpha) - a.mapv(|z| z * alpha.conj());
    matrix_exp(&arg)
}

/// Displacement operator on the composite space (identity on the qubits).
pub fn displacement(spec: &HilbertSpec, alpha: C64) -> OperatorMatrix {
    embed_boson(spec, &boson_displacement(spec.boson_dim(), alpha))
}

fn fact(n: usize) -> f64 {
    (1..=n).fold(1.0, |p, k| p * k as f64)
}

/// n-th Taylor polynomial operator of the displacement along a unit phase:
/// D^(n)(theta) = sum_k a^dag^(n-k) a^k exp(i (n-2k) theta) / ((n-k)! k!).
///
/// Self-adjoint for every n; resumming e^{-eta^2/2} (i eta)^n D^(n)(theta)
/// recovers the displacement with argument i eta e^{i theta}.
pub fn boson_displacement_taylor(boson_dim: usize, n: usize, theta: f64) -> OperatorMatrix {
    let a = boson_lowering(boson_dim);
    let ad = dagger(&a);
    let mut out = Array2::zeros((boson_dim, boson_dim));
    for k in 0..=n {
        let phase = C64::from_polar(1.0, (n as f64 - 2.0 * k as f64) * theta);
        let coeff = phase / (fact(n - k) * fact(k));
        out = out + matpow(&ad, n - k).dot(&matpow(&a, k)).mapv(|z| z * coeff);
    }
    out
}

/// Composite-space counterpart of [`boson_displacement_taylor`].
pub fn displacement_taylor(spec: &HilbertSpec, n: usize, theta: f64) -> OperatorMatrix {
    embed_boson(spec, &boson_displacement_taylor(spec.boson_dim(), n, theta))
}

/// Fourier component D_k of the displacement D(i eta e^{i theta}) with respect
/// to theta, a Bessel-Clifford-weighted normal-ordered ladder polynomial.
pub fn bessel_clifford(boson_dim: usize, k: i32, eta: f64) -> OperatorMatrix {
    let a = boson_lowering(boson_dim);
    let ad = dagger(&a);
    let prefactor = (-0.5 * eta * eta).exp();
    let n0 = if k < 0 { (-k) as usize } else { 0 };
    let mut out: OperatorMatrix = Array2::zeros((boson_dim, boson_dim));
    for n in n0..=(boson_dim + n0) {
        let p = (n as i64 + k as i64) as usize;
        let power = 2 * n as i64 + k as i64;
        let scale = eta.powi(power as i32) / (fact(p) * fact(n));
        if !scale.is_finite() || scale < 1e-300 {
            break;
        }
        let coeff = C64::i().powu(power as u32) * scale * prefactor;
        out = out + matpow(&ad, p).dot(&matpow(&a, n)).mapv(|z| z * coeff);
    }
    out
}

/// Normalized coherent state on the bare Fock space.
pub fn coherent_state(boson_dim: usize, alpha: C64) -> Array1<C64> {
    let mut v = Array1::zeros(boson_dim);
    let weight = (-0.5 * alpha.norm_sqr()).exp();
    let mut amp = C64::new(weight, 0.0);
    for n in 0..boson_dim {
        v[n] = amp;
        amp = amp * alpha / ((n + 1) as f64).sqrt();
    }
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.mapv_into(|z| z / norm)
}

// ---------------------------------------------------------------------------
// Dense linear algebra helpers
// ---------------------------------------------------------------------------

pub use ndarray::linalg::kron;

pub fn dagger(a: &OperatorMatrix) -> OperatorMatrix {
    let mut out = Array2::zeros((a.ncols(), a.nrows()));
    for ((i, j), z) in a.indexed_iter() {
        out[(j, i)] = z.conj();
    }
    out
}

pub fn commutator(a: &OperatorMatrix, b: &OperatorMatrix) -> OperatorMatrix {
    a.dot(b) - b.dot(a)
}

pub fn matpow(a: &OperatorMatrix, p: usize) -> OperatorMatrix {
    let mut out = identity(a.nrows());
    for _ in 0..p {
        out = out.dot(a);
    }
    out
}

/// Frobenius norm, the default operator norm of the crate.
pub fn fro_norm(a: &OperatorMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest singular value, by power iteration on A^dag A.
pub fn spectral_norm(a: &OperatorMatrix) -> f64 {
    let dim = a.ncols();
    if dim == 0 {
        return 0.0;
    }
    let ad = dagger(a);
    let mut v = Array1::from_iter((0..dim).map(|k| C64::new(1.0 + 1e-3 * k as f64, 0.0)));
    let mut lambda = 0.0_f64;
    for _ in 0..200 {
        let w = ad.dot(&a.dot(&v));
        let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w.mapv_into(|z| z / norm);
        if (next - lambda).abs() <= 1e-13 * next.max(1.0) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.sqrt()
}

pub fn hermiticity_residual(a: &OperatorMatrix) -> f64 {
    fro_norm(&(a - &dagger(a)))
}

pub fn unitarity_residual(u: &OperatorMatrix) -> f64 {
    fro_norm(&(dagger(u).dot(u) - identity(u.nrows())))
}

fn one_norm(a: &OperatorMatrix) -> f64 {
    let mut best = 0.0_f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|z| z.norm()).sum();
        best = best.max(s);
    }
    best
}

/// Solve A X = B by LU with partial pivoting.
pub fn solve(a: &OperatorMatrix, b: &OperatorMatrix) -> Result<OperatorMatrix> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch {
            left: a.ncols(),
            right: b.nrows(),
            context: "solve",
        });
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    for col in 0..n {
        let mut pivot = col;
        let mut best = lu[(col, col)].norm();
        for row in (col + 1)..n {
            let mag = lu[(row, col)].norm();
            if mag > best {
                best = mag;
                pivot = row;
            }
        }
        if best == 0.0 {
            return Err(Error::InvalidParameter("singular matrix in solve".into()));
        }
        if pivot != col {
            for j in 0..n {
                lu.swap((col, j), (pivot, j));
                x.swap((col, j), (pivot, j));
            }
        }
        let diag = lu[(col, col)];
        for row in (col + 1)..n {
            let factor = lu[(row, col)] / diag;
            if factor == ZERO {
                continue;
            }
            for j in (col + 1)..n {
                let sub = factor * lu[(col, j)];
                lu[(row, j)] -= sub;
            }
            for j in 0..n {
                let sub = factor * x[(col, j)];
                x[(row, j)] -= sub;
            }
        }
    }
    for col in (0..n).rev() {
        let diag = lu[(col, col)];
        for j in 0..n {
            x[(col, j)] /= diag;
        }
        for row in 0..col {
            let factor = lu[(row, col)];
            if factor == ZERO {
                continue;
            }
            for j in 0..n {
                let sub = factor * x[(col, j)];
                x[(row, j)] -= sub;
            }
        }
    }
    Ok(x)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by degree-13 diagonal Pade with scaling and squaring.
///
/// For anti-Hermitian arguments the diagonal Pade form is unitary up to
/// roundoff, which the propagator assembly relies on.
pub fn matrix_exp(a: &OperatorMatrix) -> OperatorMatrix {
    let theta13 = 5.371920351148152;
    let norm = one_norm(a);
    let squarings = if norm > theta13 {
        (norm / theta13).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let scaled = a.mapv(|z| z / 2f64.powi(squarings as i32));
    let dim = a.nrows();
    let eye = identity(dim);

    let a2 = scaled.dot(&scaled);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);

    let u_inner = a6.mapv(|z| z * PADE13[13])
        + a4.mapv(|z| z * PADE13[11])
        + a2.mapv(|z| z * PADE13[9]);
    let u_poly = a6.dot(&u_inner)
        + a6.mapv(|z| z * PADE13[7])
        + a4.mapv(|z| z * PADE13[5])
        + a2.mapv(|z| z * PADE13[3])
        + eye.mapv(|z| z * PADE13[1]);
    let u = scaled.dot(&u_poly);

    let v_inner = a6.mapv(|z| z * PADE13[12])
        + a4.mapv(|z| z * PADE13[10])
        + a2.mapv(|z| z * PADE13[8]);
    let v = a6.dot(&v_inner)
        + a6.mapv(|z| z * PADE13[6])
        + a4.mapv(|z| z * PADE13[4])
        + a2.mapv(|z| z * PADE13[2])
        + eye.mapv(|z| z * PADE13[0]);

    let mut result = solve(&(&v - &u), &(&v + &u)).expect("Pade denominator is nonsingular");
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

/// Nearest unitary by Newton-Schulz iteration; used to re-project a
/// propagator whose integration drift exceeds its budget.
pub fn polar_unitary(u: &OperatorMatrix) -> OperatorMatrix {
    let dim = u.nrows();
    let eye = identity(dim);
    let mut x = u.clone();
    for _ in 0..30 {
        let gram = dagger(&x).dot(&x);
        let residual = fro_norm(&(&gram - &eye));
        if residual < 1e-14 {
            break;
        }
        let correction = eye.mapv(|z| z * 3.0) - gram;
        x = x.dot(&correction).mapv_into(|z| z * 0.5);
    }
    x
}

/// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi
/// rotations. Returns ascending eigenvalues and the matching unitary whose
/// columns are eigenvectors.
pub fn hermitian_eig(a: &OperatorMatrix) -> Result<(Vec<f64>, OperatorMatrix)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            left: a.nrows(),
            right: a.ncols(),
            context: "hermitian_eig",
        });
    }
    let herm_res = hermiticity_residual(a);
    let scale = fro_norm(a).max(1e-300);
    if herm_res > 1e-10 * scale {
        return Err(Error::InvalidParameter(format!(
            "hermitian_eig given a matrix with Hermiticity residual {herm_res:.3e}"
        )));
    }

    let mut m = a.clone();
    let mut v = identity(n);
    for _sweep in 0..60 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        // Zero m[p][q] with R = P J, P = diag(1, e^{-i phi}) phase-reducing
        // the pivot to a real number and J the real Jacobi rotation for the
        // reduced 2x2 block; update M <- R^dag M R, V <- V R.
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                let mag = apq.norm();
                if mag <= 1e-18 * scale {
                    continue;
                }
                let phase = apq / mag;
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let tau = (aqq - app) / (2.0 * mag);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let s_col = phase.conj() * s;
                let s_row = phase * s;
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = mpk * c - mqk * s_row;
                    m[(q, k)] = mpk * s + mqk * (phase * c);
                }
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = mkp * c - mkq * s_col;
                    m[(k, q)] = mkp * s + mkq * (phase.conj() * c);
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c - vkq * s_col;
                    v[(k, q)] = vkp * s + vkq * (phase.conj() * c);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].re.total_cmp(&m[(j, j)].re));
    let values: Vec<f64> = order.iter().map(|&i| m[(i, i)].re).collect();
    let mut vectors = Array2::zeros((n, n));
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new_col)] = v[(k, old_col)];
        }
    }
    Ok((values, vectors))
}

/// Orthogonal projector onto the eigenspace of a Hermitian matrix whose
/// eigenvalue lies within `tol` of `target`.
pub fn eigenprojector(a: &OperatorMatrix, target: f64, tol: f64) -> Result<OperatorMatrix> {
    let (values, vectors) = hermitian_eig(a)?;
    let n = a.nrows();
    let mut proj = Array2::zeros((n, n));
    let mut hits = 0;
    for (idx, &lambda) in values.iter().enumerate() {
        if (lambda - target).abs() <= tol {
            hits += 1;
            let col = vectors.column(idx);
            for i in 0..n {
                for j in 0..n {
                    proj[(i, j)] += col[i] * col[j].conj();
                }
            }
        }
    }
    if hits == 0 {
        return Err(Error::InvalidParameter(format!(
            "no eigenvalue within {tol:.1e} of {target}"
        )));
    }
    Ok(proj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn pauli_algebra_closes() {
        let (sx, sy, sz) = (pauli(0), pauli(1), pauli(2));
        assert!(fro_norm(&(commutator(&sx, &sy) - sz.mapv(|z| z * c(0.0, 2.0)))) < 1e-15);
        assert!(fro_norm(&(sx.dot(&sx) - identity(2))) < 1e-15);
        assert!(hermiticity_residual(&sy) < 1e-15);
    }

    #[test]
    fn spin_axis_reduces_to_jy_at_zero_phase() {
        let jy = bare_spin(2, 1);
        let axis = bare_spin_axis(2, 0.0);
        assert!(fro_norm(&(axis - jy)) < 1e-15);
    }

    #[test]
    fn spin_axis_at_quarter_pi_mixes_equally() {
        let expected = (bare_spin(2, 0) + bare_spin(2, 1)).mapv(|z| z / 2f64.sqrt());
        let axis = bare_spin_axis(2, std::f64::consts::FRAC_PI_4);
        assert!(fro_norm(&(axis - expected)) < 1e-15);
    }

    #[test]
    fn spin_axis_spectrum_is_triplet_plus_singlet() {
        let axis = bare_spin_axis(2, std::f64::consts::FRAC_PI_4);
        let (values, vectors) = hermitian_eig(&axis).unwrap();
        let expected = [-1.0, 0.0, 0.0, 1.0];
        for (got, want) in values.iter().zip(expected) {
            assert_abs_diff_eq!(got, &want, epsilon = 1e-12);
        }
        assert!(unitarity_residual(&vectors) < 1e-12);
    }

    #[test]
    fn ladder_matrix_elements() {
        let a = boson_lowering(6);
        let ad = dagger(&a);
        let zero = Array1::from_iter((0..6).map(|n| if n == 0 { c(1.0, 0.0) } else { ZERO }));
        assert!(a.dot(&zero).iter().all(|z| z.norm() == 0.0));
        for n in 0..5 {
            assert_abs_diff_eq!(ad[(n + 1, n)].re, ((n + 1) as f64).sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn ladder_commutator_is_identity_below_truncation() {
        let dim = 8;
        let a = boson_lowering(dim);
        let comm = commutator(&a, &dagger(&a));
        for i in 0..dim - 1 {
            assert_abs_diff_eq!(comm[(i, i)].re, 1.0, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(comm[(dim - 1, dim - 1)].re, -((dim - 1) as f64), epsilon = 1e-12);
    }

    #[test]
    fn displacement_identity_and_inverse() {
        let dim = 24;
        let d0 = boson_displacement(dim, ZERO);
        assert!(fro_norm(&(&d0 - &identity(dim))) < 1e-13);
        let alpha = c(0.3, -0.7);
        let d = boson_displacement(dim, alpha);
        let dinv = boson_displacement(dim, -alpha);
        assert!(fro_norm(&(d.dot(&dinv) - identity(dim))) < 1e-10);
    }

    #[test]
    fn displacement_of_vacuum_is_poissonian() {
        let dim = 41;
        let alpha = c(0.0, 5f64.sqrt());
        let d = boson_displacement(dim, alpha);
        let mut vacuum = Array1::zeros(dim);
        vacuum[0] = ONE;
        let state = d.dot(&vacuum);
        let nbar = alpha.norm_sqr();
        let mut mean = 0.0;
        for n in 0..dim {
            let expected = (-nbar).exp() * nbar.powi(n as i32) / fact(n);
            assert_abs_diff_eq!(state[n].norm_sqr(), expected, epsilon = 1e-10);
            mean += n as f64 * state[n].norm_sqr();
        }
        assert_abs_diff_eq!(mean, nbar, epsilon = 1e-6);
        let reference = coherent_state(dim, alpha);
        let overlap: C64 = reference.iter().zip(state.iter()).map(|(r, s)| r.conj() * s).sum();
        assert_abs_diff_eq!(overlap.norm(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn taylor_term_zero_is_identity_and_one_is_quadrature() {
        let dim = 10;
        assert!(fro_norm(&(boson_displacement_taylor(dim, 0, 0.7) - identity(dim))) < 1e-15);
        let a = boson_lowering(dim);
        let q = dagger(&a) + a;
        assert!(fro_norm(&(boson_displacement_taylor(dim, 1, 0.0) - q)) < 1e-15);
        let d3 = boson_displacement_taylor(dim, 3, 0.9);
        assert!(hermiticity_residual(&d3) < 1e-13);
    }

    /// Normal-ordered polynomials are exact matrix elements of the full-space
    /// operators below the truncation boundary, while exponentiating the
    /// truncated generator is not, so resummation comparisons restrict to an
    /// interior block where both representations agree.
    fn interior_diff(a: &OperatorMatrix, b: &OperatorMatrix, block: usize) -> f64 {
        let mut acc = 0.0;
        for i in 0..block {
            for j in 0..block {
                acc += (a[(i, j)] - b[(i, j)]).norm_sqr();
            }
        }
        acc.sqrt()
    }

    #[test]
    fn taylor_series_resums_to_displacement() {
        let dim = 24;
        let eta = 0.1;
        let theta = 0.83;
        let target = boson_displacement(dim, C64::i() * eta * C64::from_polar(1.0, theta));
        let mut sum: OperatorMatrix = Array2::zeros((dim, dim));
        let weight = (-0.5 * eta * eta).exp();
        for n in 0..=12 {
            let coeff = (C64::i() * eta).powu(n as u32) * weight;
            sum = sum + boson_displacement_taylor(dim, n, theta).mapv(|z| z * coeff);
        }
        assert!(interior_diff(&sum, &target, dim / 2) < 1e-12);
    }

    #[test]
    fn bessel_clifford_adjoint_symmetry() {
        let dim = 18;
        let eta = 0.23;
        for k in 0..4i32 {
            let dk = bessel_clifford(dim, k, eta);
            let dmk = bessel_clifford(dim, -k, eta);
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert!(fro_norm(&(dmk - dagger(&dk).mapv(|z| z * sign))) < 1e-13);
        }
    }

    #[test]
    fn bessel_clifford_resums_to_displacement() {
        let dim = 24;
        let eta = 0.1;
        for &theta in &[0.0, 0.77, 2.4] {
            let target = boson_displacement(dim, C64::i() * eta * C64::from_polar(1.0, theta));
            let mut sum: OperatorMatrix = Array2::zeros((dim, dim));
            for k in -10..=10 {
                let phase = C64::from_polar(1.0, k as f64 * theta);
                sum = sum + bessel_clifford(dim, k, eta).mapv(|z| z * phase);
            }
            let err = interior_diff(&sum, &target, dim / 2);
            assert!(err < 1e-10, "resummation error {err:.2e} at theta {theta}");
        }
    }

    #[test]
    fn two_photon_commutator_expands_in_eta() {
        let dim = 30;
        let low = 6;
        let residual = |eta: f64| {
            let d1 = bessel_clifford(dim, 1, eta);
            let lhs = commutator(&d1, &dagger(&d1))
                .mapv(|z| z * ((eta * eta).exp() / (eta * eta)));
            let expected = boson_number(dim).mapv(|z| z * 2.0 * eta * eta)
                - identity(dim);
            let diff = &lhs - &expected;
            let mut worst = 0.0_f64;
            for i in 0..low {
                for j in 0..low {
                    worst = worst.max(diff[(i, j)].norm());
                }
            }
            worst
        };
        let r1 = residual(0.05);
        let r2 = residual(0.025);
        assert!(r1 < 100.0 * 0.05f64.powi(4), "residual {r1:.3e}");
        let ratio = r1 / r2;
        assert!(ratio > 8.0 && ratio < 32.0, "quartic scaling broken: {ratio:.2}");
    }

    #[test]
    fn matrix_exp_matches_closed_forms() {
        assert!(fro_norm(&(matrix_exp(&Array2::zeros((5, 5))) - identity(5))) < 1e-15);
        let theta = 0.37;
        let arg = pauli(0).mapv(|z| z * c(0.0, theta));
        let expected = identity(2).mapv(|z| z * theta.cos())
            + pauli(0).mapv(|z| z * c(0.0, theta.sin()));
        assert!(fro_norm(&(matrix_exp(&arg) - expected)) < 1e-14);
    }

    #[test]
    fn matrix_exp_of_antihermitian_is_unitary() {
        let dim = 20;
        let a = boson_lowering(dim);
        let h = dagger(&a) + &a + boson_number(dim).mapv(|z| z * 0.4);
        let u = matrix_exp(&h.mapv(|z| z * c(0.0, -1.3)));
        assert!(unitarity_residual(&u) < 1e-12);
        let round_trip = u.dot(&matrix_exp(&h.mapv(|z| z * c(0.0, 1.3))));
        assert!(fro_norm(&(round_trip - identity(dim))) < 1e-10);
    }

    #[test]
    fn solve_inverts_well_conditioned_systems() {
        let dim = 12;
        let mut a: OperatorMatrix = identity(dim).mapv(|z| z * 3.0);
        for i in 0..dim {
            for j in 0..dim {
                a[(i, j)] += c(
                    ((i * 7 + j * 3) as f64 * 0.618).sin() * 0.4,
                    ((i + 2 * j) as f64 * 0.414).cos() * 0.3,
                );
            }
        }
        let b = identity(dim);
        let x = solve(&a, &b).unwrap();
        assert!(fro_norm(&(a.dot(&x) - b)) < 1e-11);
    }

    #[test]
    fn hermitian_eig_reconstructs() {
        let dim = 16;
        let a = boson_lowering(dim);
        let h = dagger(&a).dot(&a).mapv(|z| z * 0.7)
            + (dagger(&a) + &a).mapv(|z| z * 0.25)
            + (dagger(&a) - &a).mapv(|z| z * c(0.0, 0.11));
        let (values, vectors) = hermitian_eig(&h).unwrap();
        let lambda = Array2::from_diag(&Array1::from_iter(values.iter().map(|&x| c(x, 0.0))));
        let rebuilt = vectors.dot(&lambda).dot(&dagger(&vectors));
        assert!(fro_norm(&(rebuilt - h)) < 1e-11);
        assert!(unitarity_residual(&vectors) < 1e-12);
    }

    #[test]
    fn eigenprojectors_of_spin_axis_resolve_identity() {
        let axis = bare_spin_axis(2, 0.9);
        let qp = eigenprojector(&axis, 1.0, 1e-8).unwrap();
        let qm = eigenprojector(&axis, -1.0, 1e-8).unwrap();
        let q0 = eigenprojector(&axis, 0.0, 1e-8).unwrap();
        assert!(fro_norm(&(&qp + &qm + &q0 - identity(4))) < 1e-11);
        assert!(fro_norm(&(qp.dot(&qm))) < 1e-12);
        let rebuilt = &qp - &qm;
        assert!(fro_norm(&(rebuilt - axis)) < 1e-11);
    }

    #[test]
    fn spectral_norm_agrees_with_spectrum() {
        let axis = bare_spin_axis(2, 0.4);
        assert_abs_diff_eq!(spectral_norm(&axis), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fro_norm(&axis), 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn polar_projection_restores_unitarity() {
        let dim = 10;
        let h = boson_number(dim).mapv(|z| z * c(0.0, -0.3));
        let mut u = matrix_exp(&h);
        u[(2, 3)] += c(1e-6, -2e-6);
        let fixed = polar_unitary(&u);
        assert!(unitarity_residual(&fixed) < 1e-12);
        assert!(fro_norm(&(&fixed - &u)) < 1e-4);
    }

    #[test]
    fn spin_and_boson_embeddings_commute() {
        let spec = HilbertSpec::new(2, 7).unwrap();
        let spin = build_spin_ops(&spec);
        let boson = build_boson_ops(&spec);
        assert!(fro_norm(&commutator(&spin.jx, &boson.raise)) < 1e-13);
        assert!(fro_norm(&commutator(&spin.jy, &boson.number)) < 1e-13);
        assert_eq!(spin.jx.nrows(), spec.dim());
    }
}
