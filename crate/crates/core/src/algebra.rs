//! Dense complex linear algebra for spin registers: spin-1 operators,
//! tensor-product embedding, partial traces and matrix exponentials.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Tensor layout of an operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BasisTag {
    /// One spin-1, basis (+1, 0, -1).
    Spin3,
    /// One NV: electron ⊗ nuclear.
    Nv9,
    /// Both electrons: NV1-electron ⊗ NV2-electron.
    Electrons9,
    /// Full register: NV1-e ⊗ NV1-n ⊗ NV2-e ⊗ NV2-n.
    Pair81,
    /// Two qubits, |00>, |01>, |10>, |11>.
    QubitPair4,
}

impl BasisTag {
    pub fn dim(self) -> usize {
        match self {
            BasisTag::Spin3 => 3,
            BasisTag::Nv9 | BasisTag::Electrons9 => 9,
            BasisTag::Pair81 => 81,
            BasisTag::QubitPair4 => 4,
        }
    }
}

/// A square complex matrix tagged with its tensor layout.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    pub basis: BasisTag,
    pub mat: CMat,
}

impl OperatorMatrix {
    pub fn new(basis: BasisTag, mat: CMat) -> Result<Self> {
        if mat.nrows() != basis.dim() || mat.ncols() != basis.dim() {
            return Err(Error::Dimension(format!(
                "{:?} expects {}x{}, got {}x{}",
                basis,
                basis.dim(),
                basis.dim(),
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(Self { basis, mat })
    }

    pub fn identity(basis: BasisTag) -> Self {
        Self { basis, mat: CMat::identity(basis.dim(), basis.dim()) }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }
}

/// The four spin slots of the register.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Slot {
    Nv1Electron,
    Nv1Nuclear,
    Nv2Electron,
    Nv2Nuclear,
}

impl Slot {
    pub const ALL: [Slot; 4] = [Slot::Nv1Electron, Slot::Nv1Nuclear, Slot::Nv2Electron, Slot::Nv2Nuclear];

    fn index(self) -> usize {
        match self {
            Slot::Nv1Electron => 0,
            Slot::Nv1Nuclear => 1,
            Slot::Nv2Electron => 2,
            Slot::Nv2Nuclear => 3,
        }
    }
}

/// Spin-1 operator triple.
#[derive(Clone, Debug)]
pub struct SpinOps {
    pub x: CMat,
    pub y: CMat,
    pub z: CMat,
}

/// Spin-1 matrices in the (+1, 0, -1) basis.
pub fn spin1_operators() -> SpinOps {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let r = |v: f64| C64::new(v, 0.0);
    let x = CMat::from_row_slice(3, 3, &[ZERO, r(s), ZERO, r(s), ZERO, r(s), ZERO, r(s), ZERO]);
    let y = CMat::from_row_slice(
        3,
        3,
        &[ZERO, C64::new(0.0, -s), ZERO, C64::new(0.0, s), ZERO, C64::new(0.0, -s), ZERO, C64::new(0.0, s), ZERO],
    );
    let z = CMat::from_diagonal(&CVec::from_vec(vec![r(1.0), ZERO, r(-1.0)]));
    SpinOps { x, y, z }
}

/// Real matrix to complex.
pub fn complexify(m: &DMatrix<f64>) -> CMat {
    m.map(|v| C64::new(v, 0.0))
}

/// C = A·B using the packed complex GEMM kernel.
pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    let mut c = CMat::zeros(a.nrows(), b.ncols());
    gemm_into(a, b, &mut c, ONE, ZERO);
    c
}

/// C = alpha·A·B + beta·C.
pub fn gemm_into(a: &CMat, b: &CMat, c: &mut CMat, alpha: C64, beta: C64) {
    assert_eq!(a.ncols(), b.nrows(), "inner dimension mismatch");
    assert_eq!(c.nrows(), a.nrows());
    assert_eq!(c.ncols(), b.ncols());
    let (m, k, n) = (a.nrows(), a.ncols(), b.ncols());
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        *c *= beta;
        return;
    }
    // SAFETY: nalgebra stores dense matrices column-major and contiguous; Complex64
    // is repr(C) with layout [re, im], matching the kernel's element type.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [alpha.re, alpha.im],
            a.as_ptr() as *const [f64; 2],
            1,
            m as isize,
            b.as_ptr() as *const [f64; 2],
            1,
            k as isize,
            [beta.re, beta.im],
            c.as_mut_ptr() as *mut [f64; 2],
            1,
            m as isize,
        );
    }
}

/// A† · B without forming the adjoint explicitly.
pub fn adjoint_mul(a: &CMat, b: &CMat) -> CMat {
    matmul(&a.adjoint(), b)
}

/// U · M · U†.
pub fn conjugate(u: &CMat, m: &CMat) -> CMat {
    matmul(&matmul(u, m), &u.adjoint())
}

/// Kronecker product.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Kronecker product of a list, left to right.
pub fn kron_all(ops: &[&CMat]) -> CMat {
    let mut out = CMat::identity(1, 1);
    for op in ops {
        out = kron(&out, op);
    }
    out
}

/// Embed a 3×3 operator on one slot of the 81-dim register.
pub fn embed_operator(op: &CMat, slot: Slot) -> Result<CMat> {
    if op.nrows() != 3 || op.ncols() != 3 {
        return Err(Error::Dimension(format!("slot operator must be 3x3, got {}x{}", op.nrows(), op.ncols())));
    }
    let id = CMat::identity(3, 3);
    let mut factors: [&CMat; 4] = [&id, &id, &id, &id];
    factors[slot.index()] = op;
    Ok(kron_all(&factors))
}

/// Embed a 3×3 electron operator into one NV's 9-dim (electron ⊗ nuclear) space.
pub fn embed_nv(op_e: &CMat, op_n: &CMat) -> CMat {
    kron(op_e, op_n)
}

/// Which subsystem a partial trace keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Keep {
    /// Both electrons (9-dim), nuclear spins traced out.
    Electrons,
    /// NV1 electron only (3-dim).
    Nv1Electron,
    /// NV2 electron only (3-dim).
    Nv2Electron,
}

/// Partial trace over a tensor product with the given factor dimensions,
/// keeping the factors flagged in `keep`.
pub fn partial_trace_dims(rho: &CMat, dims: &[usize], keep: &[bool]) -> Result<CMat> {
    let total: usize = dims.iter().product();
    if rho.nrows() != total || rho.ncols() != total {
        return Err(Error::Dimension(format!("state is {}x{}, layout needs {}", rho.nrows(), rho.ncols(), total)));
    }
    if dims.len() != keep.len() {
        return Err(Error::Dimension("keep mask length differs from layout".into()));
    }
    let kept_dims: Vec<usize> = dims.iter().zip(keep).filter(|(_, k)| **k).map(|(d, _)| *d).collect();
    let kd: usize = kept_dims.iter().product();
    let mut out = CMat::zeros(kd, kd);
    let n = dims.len();
    let mut digits_r = vec![0usize; n];
    let mut digits_c = vec![0usize; n];
    let decompose = |mut idx: usize, digits: &mut [usize]| {
        for f in (0..n).rev() {
            digits[f] = idx % dims[f];
            idx /= dims[f];
        }
    };
    let compose_kept = |digits: &[usize]| -> usize {
        let mut idx = 0;
        for f in 0..n {
            if keep[f] {
                idx = idx * dims[f] + digits[f];
            }
        }
        idx
    };
    for r in 0..total {
        decompose(r, &mut digits_r);
        for c in 0..total {
            decompose(c, &mut digits_c);
            let traced_match = (0..n).all(|f| keep[f] || digits_r[f] == digits_c[f]);
            if traced_match {
                out[(compose_kept(&digits_r), compose_kept(&digits_c))] += rho[(r, c)];
            }
        }
    }
    Ok(out)
}

/// Partial trace of a register state (81-dim).
pub fn partial_trace(rho: &CMat, keep: Keep) -> Result<CMat> {
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > 1e-6 || tr.im.abs() > 1e-6 {
        return Err(Error::InvalidState(format!("trace {tr} deviates from 1")));
    }
    let mask = match keep {
        Keep::Electrons => [true, false, true, false],
        Keep::Nv1Electron => [true, false, false, false],
        Keep::Nv2Electron => [false, false, true, false],
    };
    partial_trace_dims(rho, &[3, 3, 3, 3], &mask)
}

/// Trace out the nuclear slots of a pure-state block: each column of `psi`
/// is a register state with probability `weights[j]`.
pub fn electron_state_from_block(psi: &CMat, weights: &[f64]) -> CMat {
    assert_eq!(psi.nrows(), 81);
    assert_eq!(psi.ncols(), weights.len());
    let mut out = CMat::zeros(9, 9);
    for (j, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        // index = ((e1*3 + n1)*3 + e2)*3 + n2
        for e1 in 0..3 {
            for e2 in 0..3 {
                let r = e1 * 3 + e2;
                for f1 in 0..3 {
                    for f2 in 0..3 {
                        let c = f1 * 3 + f2;
                        let mut acc = ZERO;
                        for n1 in 0..3 {
                            for n2 in 0..3 {
                                let a = psi[(((e1 * 3 + n1) * 3 + e2) * 3 + n2, j)];
                                let b = psi[(((f1 * 3 + n1) * 3 + f2) * 3 + n2, j)];
                                acc += a * b.conj();
                            }
                        }
                        out[(r, c)] += acc * w;
                    }
                }
            }
        }
    }
    out
}

/// max |(A†A - 1)_ij|.
pub fn unitarity_error(u: &CMat) -> f64 {
    let p = adjoint_mul(u, u);
    let mut err: f64 = 0.0;
    for r in 0..p.nrows() {
        for c in 0..p.ncols() {
            let target = if r == c { ONE } else { ZERO };
            err = err.max((p[(r, c)] - target).norm());
        }
    }
    err
}

/// ‖H - H†‖_F / max(‖H‖_F, tiny).
pub fn hermiticity_error(h: &CMat) -> f64 {
    let diff = (h - h.adjoint()).norm();
    diff / h.norm().max(1e-300)
}

pub fn is_hermitian(h: &CMat, tol: f64) -> bool {
    hermiticity_error(h) <= tol
}

/// Max-norm of a matrix.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.norm()))
}

/// Eigen-decomposition of a Hermitian matrix, H = Q·diag(E)·Q†.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl HermitianEigen {
    pub fn new(h: &CMat) -> Self {
        let sym = (h + h.adjoint()).scale(0.5);
        let eig = sym.symmetric_eigen();
        Self { values: eig.eigenvalues.iter().copied().collect(), vectors: eig.eigenvectors }
    }

    /// exp(-i·H·t).
    pub fn propagator(&self, t: f64) -> CMat {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (c, &e) in self.values.iter().enumerate() {
            let ph = C64::from_polar(1.0, -e * t);
            for r in 0..n {
                scaled[(r, c)] *= ph;
            }
        }
        matmul(&scaled, &self.vectors.adjoint())
    }

    /// exp(-i·H·t)·psi.
    pub fn apply(&self, t: f64, psi: &CMat) -> CMat {
        let mut coeff = adjoint_mul(&self.vectors, psi);
        for (r, &e) in self.values.iter().enumerate() {
            let ph = C64::from_polar(1.0, -e * t);
            for c in 0..coeff.ncols() {
                coeff[(r, c)] *= ph;
            }
        }
        matmul(&self.vectors, &coeff)
    }
}

/// exp(-i·H·t) for Hermitian H via eigen-decomposition.
pub fn expm_hermitian(h: &CMat, t: f64) -> CMat {
    HermitianEigen::new(h).propagator(t)
}

/// 1-norm (max column sum).
fn norm1(m: &CMat) -> f64 {
    (0..m.ncols()).map(|c| m.column(c).iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// exp(-i·H·t)·psi by a truncated Taylor series with sub-stepping, for
/// Hermitian H. Accurate to roughly machine precision when ‖H t‖ is moderate.
pub fn expm_apply_taylor(h: &CMat, t: f64, psi: &CMat) -> CMat {
    let nrm = norm1(h) * t.abs();
    let substeps = (nrm / 0.5).ceil().max(1.0) as usize;
    let dt = t / substeps as f64;
    let factor = C64::new(0.0, -dt);
    let mut out = psi.clone();
    let mut term = CMat::zeros(psi.nrows(), psi.ncols());
    for _ in 0..substeps {
        let mut acc = out.clone();
        term.copy_from(&out);
        for k in 1..=30 {
            let mut next = CMat::zeros(psi.nrows(), psi.ncols());
            gemm_into(h, &term, &mut next, factor / k as f64, ZERO);
            term = next;
            acc += &term;
            if max_abs(&term) < 1e-17 * max_abs(&acc).max(1.0) {
                break;
            }
        }
        out = acc;
    }
    out
}

/// Global-phase-insensitive process fidelity |Tr(A†B)|²/d².
pub fn process_fidelity(a: &CMat, b: &CMat) -> f64 {
    let d = a.nrows() as f64;
    adjoint_mul(a, b).trace().norm_sqr() / (d * d)
}

/// Build a diagonal complex matrix from real entries.
pub fn diag_real(v: &[f64]) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(v.len(), v.iter().map(|&x| C64::new(x, 0.0))))
}

/// Build a diagonal complex matrix.
pub fn diag(v: &[C64]) -> CMat {
    CMat::from_diagonal(&CVec::from_column_slice(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &CMat, b: &CMat, tol: f64) -> bool {
        max_abs(&(a - b)) <= tol
    }

    #[test]
    fn spin_algebra() {
        let s = spin1_operators();
        let comm = matmul(&s.x, &s.y) - matmul(&s.y, &s.x);
        assert!(close(&comm, &(s.z.clone() * I), 1e-14));
        let comm = matmul(&s.y, &s.z) - matmul(&s.z, &s.y);
        assert!(close(&comm, &(s.x.clone() * I), 1e-14));
        let cas = matmul(&s.x, &s.x) + matmul(&s.y, &s.y) + matmul(&s.z, &s.z);
        assert!(close(&cas, &(CMat::identity(3, 3) * C64::new(2.0, 0.0)), 1e-14));
        assert_eq!(s.z, diag_real(&[1.0, 0.0, -1.0]));
        for op in [&s.x, &s.y, &s.z] {
            let mut ev = HermitianEigen::new(op).values;
            ev.sort_by(f64::total_cmp);
            for (a, b) in ev.iter().zip([-1.0, 0.0, 1.0]) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn embedding() {
        let s = spin1_operators();
        let id = embed_operator(&CMat::identity(3, 3), Slot::Nv2Nuclear).unwrap();
        assert!(close(&id, &CMat::identity(81, 81), 0.0));
        let sz = embed_operator(&s.z, Slot::Nv1Electron).unwrap();
        assert!(close(&sz, &kron(&s.z, &CMat::identity(27, 27)), 0.0));
        let sz2 = embed_operator(&matmul(&s.z, &s.z), Slot::Nv1Electron).unwrap();
        assert!((sz2.trace().re - 54.0).abs() < 1e-12);
        assert!(embed_operator(&CMat::identity(2, 2), Slot::Nv1Electron).is_err());
        // homomorphism
        let ab = embed_operator(&matmul(&s.x, &s.y), Slot::Nv2Electron).unwrap();
        let a = embed_operator(&s.x, Slot::Nv2Electron).unwrap();
        let b = embed_operator(&s.y, Slot::Nv2Electron).unwrap();
        assert!(close(&ab, &matmul(&a, &b), 1e-14));
    }

    #[test]
    fn partial_trace_product_state() {
        let rho_e1 = diag_real(&[0.2, 0.5, 0.3]);
        let rho_e2 = diag_real(&[0.1, 0.1, 0.8]);
        let mut rho_n = CMat::identity(3, 3) / C64::new(3.0, 0.0);
        rho_n[(0, 1)] = C64::new(0.05, 0.02);
        rho_n[(1, 0)] = C64::new(0.05, -0.02);
        let full = kron_all(&[&rho_e1, &rho_n, &rho_e2, &rho_n]);
        let red = partial_trace(&full, Keep::Electrons).unwrap();
        assert!(close(&red, &kron(&rho_e1, &rho_e2), 1e-14));
        let r1 = partial_trace(&full, Keep::Nv1Electron).unwrap();
        assert!(close(&r1, &rho_e1, 1e-14));
        let mixed = CMat::identity(81, 81) / C64::new(81.0, 0.0);
        let red = partial_trace(&mixed, Keep::Electrons).unwrap();
        assert!(close(&red, &(CMat::identity(9, 9) / C64::new(9.0, 0.0)), 1e-15));
        assert!(partial_trace(&(mixed * C64::new(2.0, 0.0)), Keep::Electrons).is_err());
    }

    #[test]
    fn block_trace_matches_dense() {
        let psi = CMat::from_fn(81, 2, |r, c| C64::new(((r * 13 + c * 7) % 11) as f64 - 5.0, ((r + 3 * c) % 5) as f64));
        let mut psi = psi;
        for c in 0..2 {
            let n = psi.column(c).norm();
            psi.column_mut(c).scale_mut(1.0 / n);
        }
        let w = [0.25, 0.75];
        let mut rho = CMat::zeros(81, 81);
        for c in 0..2 {
            let v = psi.column(c).clone_owned();
            rho += (&v * v.adjoint()) * C64::new(w[c], 0.0);
        }
        let dense = partial_trace(&rho, Keep::Electrons).unwrap();
        let block = electron_state_from_block(&psi, &w);
        assert!(close(&dense, &block, 1e-13));
    }

    #[test]
    fn exponentials_agree() {
        let h = CMat::from_fn(9, 9, |r, c| C64::new(((r * 5 + c * 3) % 7) as f64, (r as f64 - c as f64) * 0.3));
        let h = (&h + h.adjoint()).scale(0.5);
        let u = expm_hermitian(&h, 0.37);
        assert!(unitarity_error(&u) < 1e-13);
        let v = expm_apply_taylor(&h, 0.37, &CMat::identity(9, 9));
        assert!(close(&u, &v, 1e-12));
        let eig = HermitianEigen::new(&h);
        let psi = CMat::from_fn(9, 2, |r, c| C64::new((r + c) as f64, 0.0));
        assert!(close(&eig.apply(0.37, &psi), &matmul(&u, &psi), 1e-12));
    }

    #[test]
    fn gemm_matches_naive() {
        let a = CMat::from_fn(5, 3, |r, c| C64::new(r as f64 + 0.5, c as f64 - 1.0));
        let b = CMat::from_fn(3, 4, |r, c| C64::new((r * c) as f64, 1.0));
        assert!(close(&matmul(&a, &b), &(&a * &b), 1e-12));
    }
}
