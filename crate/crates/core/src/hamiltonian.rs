//! Single-NV and pair Hamiltonians in angular units (rad/µs).
//!
//! Sign conventions follow H0 = D·Sz² + E(Sx² − Sy²) + ωe·S − Q·Iz² + ωn·I − S·A·I
//! with ωe/n = −γe/n·B. γe is negative, so ωe points along B.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::algebra::{adjoint_mul, conjugate, diag_real, kron, matmul, spin1_operators, CMat, HermitianEigen, C64, ONE};
use crate::error::{Error, Result};
use crate::geometry::{to_nv1_frame, FieldGeometry, BETA_TETRAHEDRAL, GAMMA_E_MHZ_PER_G, GAMMA_N14_MHZ_PER_G};

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Cyclic MHz → rad/µs.
pub fn ang(f_mhz: f64) -> f64 {
    TWO_PI * f_mhz
}

/// Labels below this splitting (MHz) are ambiguous.
pub const DEGENERACY_THRESHOLD_MHZ: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NvParameters {
    /// Zero-field splitting incl. axial strain, MHz.
    pub d: f64,
    /// Transverse strain, MHz.
    pub e: f64,
    /// Nuclear quadrupole, MHz.
    pub q: f64,
    /// Hyperfine diagonal (Axx, Ayy, Azz), MHz.
    pub a_diag: [f64; 3],
    /// Signed gyromagnetic ratios, MHz/G.
    pub gamma_e: f64,
    pub gamma_n: f64,
    /// Readout contrast.
    pub contrast_alpha: f64,
}

impl NvParameters {
    /// ¹⁴N NV with the given splitting and contrast.
    pub fn nitrogen14(d: f64, contrast_alpha: f64) -> Self {
        Self {
            d,
            e: 0.0,
            q: -4.945,
            a_diag: [-2.62, -2.62, -2.162],
            gamma_e: -GAMMA_E_MHZ_PER_G,
            gamma_n: GAMMA_N14_MHZ_PER_G,
            contrast_alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.d, self.e, self.q, self.a_diag[0], self.a_diag[1], self.a_diag[2], self.gamma_e, self.gamma_n];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite NV parameter".into()));
        }
        if (self.a_diag[0] - self.a_diag[1]).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("Axx = {} differs from Ayy = {}", self.a_diag[0], self.a_diag[1])));
        }
        if !(self.contrast_alpha > 0.0 && self.contrast_alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("contrast {} outside (0, 1)", self.contrast_alpha)));
        }
        Ok(())
    }

    /// γ̃ = γn/γe, the nuclear-to-electron drive ratio.
    pub fn gamma_ratio(&self) -> f64 {
        self.gamma_n / self.gamma_e
    }
}

/// Electron part D·Sz² + E(Sx² − Sy²) + ωe·S (rad/µs).
pub fn electron_hamiltonian(p: &NvParameters, b: &Vector3<f64>) -> CMat {
    let s = spin1_operators();
    let w = -p.gamma_e * b;
    let sz2 = matmul(&s.z, &s.z);
    let sx2 = matmul(&s.x, &s.x);
    let sy2 = matmul(&s.y, &s.y);
    let h = sz2 * C64::from(p.d) + (sx2 - sy2) * C64::from(p.e) + &s.x * C64::from(w.x) + &s.y * C64::from(w.y) + &s.z * C64::from(w.z);
    h * C64::from(TWO_PI)
}

/// Full single-NV Hamiltonian on electron ⊗ ¹⁴N (9-dim, rad/µs).
pub fn build_single_nv(p: &NvParameters, b: &Vector3<f64>) -> CMat {
    let s = spin1_operators();
    let id = CMat::identity(3, 3);
    let wn = -p.gamma_n * b;
    let nuc = matmul(&s.z, &s.z) * C64::from(-p.q) + &s.x * C64::from(wn.x) + &s.y * C64::from(wn.y) + &s.z * C64::from(wn.z);
    let mut h = kron(&electron_hamiltonian(p, b), &id) + kron(&id, &nuc) * C64::from(TWO_PI);
    for (k, (se, a)) in [&s.x, &s.y, &s.z].into_iter().zip(p.a_diag).enumerate() {
        let si = [&s.x, &s.y, &s.z][k];
        h -= kron(se, si) * C64::from(TWO_PI * a);
    }
    h
}

/// exp(iβSy): maps NV1's lab-frame axis operator cosβ·Sz + sinβ·Sx onto Sz.
fn nv1_rotation(beta_deg: f64) -> CMat {
    let s = spin1_operators();
    let gen = &s.y * C64::from(-1.0);
    crate::algebra::expm_hermitian(&gen, beta_deg.to_radians())
}

/// Express an operator written in the lab (NV2) frame in NV1's frame.
///
/// Accepts a 3-dim electron operator, a 9-dim NV1 (electron ⊗ nuclear)
/// operator, or an 81-dim pair operator (NV1 slots rotated).
pub fn rotate_nv1_frame(op: &CMat, beta_deg: f64) -> Result<CMat> {
    let r = nv1_rotation(beta_deg);
    let u = match op.nrows() {
        3 => r,
        9 => kron(&r, &r),
        81 => kron(&kron(&r, &r), &CMat::identity(9, 9)),
        n => return Err(Error::Dimension(format!("cannot rotate a {n}-dim operator"))),
    };
    if op.ncols() != op.nrows() {
        return Err(Error::Dimension("operator not square".into()));
    }
    Ok(conjugate(&u, op))
}

/// Which excited eigenstate forms a qubit's |1⟩.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QubitLevel {
    /// Lower transition frequency.
    E1,
    /// Higher transition frequency.
    E2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelToggles {
    pub crosstalk: bool,
    pub hyperfine: bool,
    pub drive_nuclear: bool,
}

impl Default for ModelToggles {
    fn default() -> Self {
        Self { crosstalk: true, hyperfine: true, drive_nuclear: true }
    }
}

/// Inputs needed to assemble a [`PairModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub nv: [NvParameters; 2],
    pub geometry: FieldGeometry,
    /// Effective dipolar coupling, MHz.
    pub nu_dip: f64,
    pub qubit_levels: [QubitLevel; 2],
    /// Carrier frequencies in MHz; defaults to the electron qubit lines.
    #[serde(default)]
    pub carriers: Option<[f64; 2]>,
    #[serde(default)]
    pub toggles: ModelToggles,
}

impl PairSpec {
    /// Low-field setting (~60 G).
    pub fn setting1() -> Self {
        Self {
            nv: [NvParameters::nitrogen14(2865.42, 0.146), NvParameters::nitrogen14(2867.27, 0.146)],
            geometry: FieldGeometry { b_mag: [64.23, 63.101], theta: [73.42, 45.53], beta: BETA_TETRAHEDRAL },
            nu_dip: 0.13994,
            qubit_levels: [QubitLevel::E2, QubitLevel::E1],
            carriers: None,
            toggles: ModelToggles::default(),
        }
    }

    /// High-field setting (~100 G), aligned control NV.
    pub fn setting2() -> Self {
        Self {
            nv: [NvParameters::nitrogen14(2867.27, 0.107), NvParameters::nitrogen14(2865.42, 0.194)],
            geometry: FieldGeometry { b_mag: [105.33, 105.33], theta: [74.08, 3.58], beta: BETA_TETRAHEDRAL },
            nu_dip: 0.11289,
            qubit_levels: [QubitLevel::E2, QubitLevel::E1],
            carriers: None,
            toggles: ModelToggles::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.nv[0].validate()?;
        self.nv[1].validate()?;
        self.geometry.validate()?;
        if !self.nu_dip.is_finite() || self.nu_dip < 0.0 {
            return Err(Error::InvalidParameter(format!("nu_dip = {} must be >= 0", self.nu_dip)));
        }
        if let Some(c) = self.carriers {
            if c.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidParameter("carrier frequencies must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Eigenvectors of a 3×3 electron Hamiltonian, columns ordered (+1, 0, −1)-like
/// by maximal overlap, dominant component real positive.
#[derive(Clone, Debug)]
pub struct LabeledEigenbasis {
    pub vectors: CMat,
    /// Energies in label order, rad/µs.
    pub energies: [f64; 3],
}

pub fn label_eigenbasis(h: &CMat) -> Result<LabeledEigenbasis> {
    let eig = HermitianEigen::new(h);
    let mut sorted = eig.values.clone();
    sorted.sort_by(f64::total_cmp);
    let gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min) / TWO_PI;
    if gap < DEGENERACY_THRESHOLD_MHZ {
        return Err(Error::Degenerate { gap_mhz: gap });
    }
    let mut label_of = [usize::MAX; 3];
    let mut used_b = [false; 3];
    let mut used_c = [false; 3];
    for _ in 0..3 {
        let mut best = (0, 0, -1.0);
        for b in 0..3 {
            for c in 0..3 {
                if !used_b[b] && !used_c[c] {
                    let o = eig.vectors[(b, c)].norm_sqr();
                    if o > best.2 {
                        best = (b, c, o);
                    }
                }
            }
        }
        used_b[best.0] = true;
        used_c[best.1] = true;
        label_of[best.0] = best.1;
    }
    let mut vectors = CMat::zeros(3, 3);
    let mut energies = [0.0; 3];
    for b in 0..3 {
        let c = label_of[b];
        let dom = eig.vectors[(b, c)];
        let ph = if dom.norm() > 0.0 { dom.conj() / dom.norm() } else { ONE };
        for r in 0..3 {
            vectors[(r, b)] = eig.vectors[(r, c)] * ph;
        }
        energies[b] = eig.values[c];
    }
    Ok(LabeledEigenbasis { vectors, energies })
}

/// Drive amplitudes of one carrier, rad/µs, and its carrier phase ξ.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CarrierControl {
    pub omega_x: f64,
    pub omega_y: f64,
    pub xi: f64,
}

/// Options for [`microwave_hamiltonian`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MwOptions {
    pub crosstalk: bool,
    pub drive_nuclear: bool,
}

/// The assembled pair model in the electron eigenbasis (rad/µs, µs).
#[derive(Clone, Debug)]
pub struct PairModel {
    pub spec: PairSpec,
    /// Single-NV Hamiltonians in their own frames (9-dim).
    pub h_nv: [CMat; 2],
    pub electron_basis: [LabeledEigenbasis; 2],
    /// Eigenbasis label (0 or 2) of each qubit's |1⟩.
    pub excited: [usize; 2],
    /// S̃z eigenvalue of each qubit's |1⟩.
    pub s_sign: [f64; 2],
    /// Diagonalizing transform, 81-dim.
    pub t: CMat,
    /// T†(H1+H2)T + g·S̃z1·S̃z2, shifted so the electron ground pair is at zero.
    pub h_free: CMat,
    pub free_eigen: HermitianEigen,
    /// Carrier angular frequencies.
    pub carriers: [f64; 2],
    /// Angular coupling g of g·S̃z1·S̃z2, signed by s1·s2.
    pub g: f64,
    /// Per-carrier normalization c_k and the phase of ⟨g|D|e⟩.
    pub drive_scale: [f64; 2],
    pub drive_arg: [f64; 2],
    /// Per-NV drive direction in each NV's frame (lab x).
    pub drive_dir: [Vector3<f64>; 2],
    /// (n1, n2) = S̃z² eigenvalues per basis index.
    pub occupation: Vec<(u8, u8)>,
}

/// Electron eigen-label of an 81-dim basis index, per NV.
pub fn electron_labels(idx: usize) -> (usize, usize) {
    (idx / 27, (idx / 3) % 3)
}

fn lift_electron(op: &CMat, nv: usize) -> CMat {
    let id3 = CMat::identity(3, 3);
    let id9 = CMat::identity(9, 9);
    if nv == 0 {
        kron(&kron(op, &id3), &id9)
    } else {
        kron(&id9, &kron(op, &id3))
    }
}

fn lift_nv(op9: &CMat, nv: usize) -> CMat {
    let id9 = CMat::identity(9, 9);
    if nv == 0 {
        kron(op9, &id9)
    } else {
        kron(&id9, op9)
    }
}

impl PairModel {
    pub fn build(spec: &PairSpec) -> Result<Self> {
        spec.validate()?;
        let fields = spec.geometry.field_in_nv_frames()?;
        let mut nvp = spec.nv.clone();
        if !spec.toggles.hyperfine {
            for p in nvp.iter_mut() {
                p.a_diag = [0.0; 3];
            }
        }
        let h_nv = [build_single_nv(&nvp[0], &fields[0]), build_single_nv(&nvp[1], &fields[1])];
        let electron_basis = [
            label_eigenbasis(&electron_hamiltonian(&nvp[0], &fields[0]))?,
            label_eigenbasis(&electron_hamiltonian(&nvp[1], &fields[1]))?,
        ];
        let mut excited = [0usize; 2];
        let mut s_sign = [0.0; 2];
        let mut lines = [0.0; 2];
        for k in 0..2 {
            let en = &electron_basis[k].energies;
            let (lo, hi) = if en[0] <= en[2] { (0, 2) } else { (2, 0) };
            excited[k] = match spec.qubit_levels[k] {
                QubitLevel::E1 => lo,
                QubitLevel::E2 => hi,
            };
            s_sign[k] = if excited[k] == 0 { 1.0 } else { -1.0 };
            lines[k] = en[excited[k]] - en[1];
        }
        let carriers = match spec.carriers {
            Some(c) => [ang(c[0]), ang(c[1])],
            None => lines,
        };

        let id3 = CMat::identity(3, 3);
        let tk = [kron(&electron_basis[0].vectors, &id3), kron(&electron_basis[1].vectors, &id3)];
        let t = kron(&tk[0], &tk[1]);
        let h1 = conjugate_adj(&tk[0], &h_nv[0]);
        let h2 = conjugate_adj(&tk[1], &h_nv[1]);
        // sign chosen so the computational ZZ combination E00−E01−E10+E11 is +2πν_dip
        let g = s_sign[0] * s_sign[1] * ang(spec.nu_dip);
        let szt = diag_real(&[1.0, 0.0, -1.0]);
        let zz = matmul(&lift_electron(&szt, 0), &lift_electron(&szt, 1));
        let shift = electron_basis[0].energies[1] + electron_basis[1].energies[1];
        let mut h_free = lift_nv(&h1, 0) + lift_nv(&h2, 1) + zz * C64::from(g);
        for i in 0..81 {
            h_free[(i, i)] -= C64::from(shift);
        }
        let h_free = (&h_free + h_free.adjoint()).scale(0.5);
        let free_eigen = HermitianEigen::new(&h_free);

        let x = Vector3::new(1.0, 0.0, 0.0);
        let drive_dir = [to_nv1_frame(&x, spec.geometry.beta), x];
        let mut drive_scale = [0.0; 2];
        let mut drive_arg = [0.0; 2];
        for k in 0..2 {
            let m = electron_drive_element(&electron_basis[k], &drive_dir[k], excited[k]);
            if m.norm() < 1e-9 {
                return Err(Error::InvalidState(format!("qubit transition of NV{} is not driven by the microwave field", k + 1)));
            }
            drive_scale[k] = 1.0 / (std::f64::consts::SQRT_2 * m.norm());
            drive_arg[k] = m.arg();
        }
        let occupation = (0..81)
            .map(|i| {
                let (a, b) = electron_labels(i);
                ((a != 1) as u8, (b != 1) as u8)
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            h_nv,
            electron_basis,
            excited,
            s_sign,
            t,
            h_free,
            free_eigen,
            carriers,
            g,
            drive_scale,
            drive_arg,
            drive_dir,
            occupation,
        })
    }

    /// Same model with a different dipolar coupling (MHz).
    pub fn with_coupling(&self, nu_dip: f64) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.nu_dip = nu_dip;
        spec.carriers = Some([self.carriers[0] / TWO_PI, self.carriers[1] / TWO_PI]);
        Self::build(&spec)
    }

    /// Qubit transition frequencies from the electron Hamiltonians, MHz.
    pub fn qubit_lines_mhz(&self) -> [f64; 2] {
        let mut out = [0.0; 2];
        for k in 0..2 {
            let en = &self.electron_basis[k].energies;
            out[k] = (en[self.excited[k]] - en[1]) / TWO_PI;
        }
        out
    }

    /// Conditional angular frequency E00 − E01 − E10 + E11 of the qubit pair
    /// with both nitrogen spins in mI = 0; rad/µs.
    pub fn qubit_coupling(&self) -> f64 {
        let e = |q1: u8, q2: u8| {
            let i = ((self.level(0, q1) * 3 + 1) * 3 + self.level(1, q2)) * 3 + 1;
            self.h_free[(i, i)].re
        };
        e(0, 0) - e(0, 1) - e(1, 0) + e(1, 1)
    }

    /// Eigenbasis label of qubit value `q` on NV `k`.
    pub fn level(&self, k: usize, q: u8) -> usize {
        if q == 0 {
            1
        } else {
            self.excited[k]
        }
    }

    /// Index into the 9-dim electron pair space of computational state |q1 q2⟩.
    pub fn electron_index(&self, q1: u8, q2: u8) -> usize {
        self.level(0, q1) * 3 + self.level(1, q2)
    }

    /// Rank-one projectors onto |00⟩, |01⟩, |10⟩, |11⟩ in the 9-dim electron space.
    pub fn qubit_projectors(&self) -> [CMat; 4] {
        let mk = |q1, q2| {
            let mut p = CMat::zeros(9, 9);
            let i = self.electron_index(q1, q2);
            p[(i, i)] = ONE;
            p
        };
        [mk(0, 0), mk(0, 1), mk(1, 0), mk(1, 1)]
    }

    /// Rotating-frame generator eigenvalue per basis index.
    pub fn frame_frequencies(&self) -> Vec<f64> {
        self.occupation.iter().map(|&(a, b)| self.carriers[0] * a as f64 + self.carriers[1] * b as f64).collect()
    }

    /// Drive operator of carrier `k` in the eigenbasis (81-dim), including c_k.
    pub fn drive_operator(&self, k: usize, opts: MwOptions) -> CMat {
        let s = spin1_operators();
        let scale = C64::from(self.drive_scale[k]);
        if !opts.crosstalk {
            let b = &self.electron_basis[k];
            let d = directional(&s, &self.drive_dir[k]);
            let full = adjoint_mul(&b.vectors, &matmul(&d, &b.vectors));
            let mut restricted = CMat::zeros(3, 3);
            for &r in &[1, self.excited[k]] {
                for &c in &[1, self.excited[k]] {
                    restricted[(r, c)] = full[(r, c)];
                }
            }
            return lift_electron(&restricted, k) * scale;
        }
        let mut total = CMat::zeros(81, 81);
        for j in 0..2 {
            let b = &self.electron_basis[j];
            let d = directional(&s, &self.drive_dir[j]);
            let de = adjoint_mul(&b.vectors, &matmul(&d, &b.vectors));
            let mut op9 = kron(&de, &CMat::identity(3, 3));
            if opts.drive_nuclear {
                let gt = self.spec.nv[j].gamma_ratio();
                op9 += kron(&CMat::identity(3, 3), &d) * C64::from(gt);
            }
            total += lift_nv(&op9, j);
        }
        total * scale
    }

    /// Options implied by the model toggles.
    pub fn mw_options(&self) -> MwOptions {
        MwOptions { crosstalk: self.spec.toggles.crosstalk, drive_nuclear: self.spec.toggles.drive_nuclear }
    }
}

fn conjugate_adj(u: &CMat, m: &CMat) -> CMat {
    adjoint_mul(u, &matmul(m, u))
}

fn directional(s: &crate::algebra::SpinOps, d: &Vector3<f64>) -> CMat {
    &s.x * C64::from(d.x) + &s.y * C64::from(d.y) + &s.z * C64::from(d.z)
}

fn electron_drive_element(b: &LabeledEigenbasis, dir: &Vector3<f64>, excited: usize) -> C64 {
    let s = spin1_operators();
    let d = directional(&s, dir);
    let m = adjoint_mul(&b.vectors, &matmul(&d, &b.vectors));
    m[(1, excited)]
}

/// Hmw(t) = Σₖ √2[Ωx cos(ωₖt+ξₖ) + Ωy sin(ωₖt+ξₖ)]·Dₖ in the eigenbasis.
pub fn microwave_hamiltonian(model: &PairModel, controls: &[CarrierControl; 2], t: f64, opts: MwOptions) -> CMat {
    let mut h = CMat::zeros(81, 81);
    for (k, c) in controls.iter().enumerate() {
        if c.omega_x == 0.0 && c.omega_y == 0.0 {
            continue;
        }
        let ph = model.carriers[k] * t + c.xi;
        let amp = std::f64::consts::SQRT_2 * (c.omega_x * ph.cos() + c.omega_y * ph.sin());
        h += model.drive_operator(k, opts) * C64::from(amp);
    }
    h
}

/// Reduced qubit-pair Hamiltonian with real couplings, basis as in
/// [`reduced_two_qubit_hamiltonian_phased`].
pub fn reduced_two_qubit_hamiltonian(delta1: f64, delta2: f64, g: f64, omega1: f64, omega2: f64) -> CMat {
    reduced_two_qubit_hamiltonian_phased(delta1, delta2, g, omega1, 0.0, omega2, 0.0)
}

/// diag(δ2, 0, δ1+δ2−g, δ1) with Ω1/2·e^{−iφ1} on (0,2),(1,3) and Ω2/2·e^{−iφ2}
/// on (0,1),(2,3); index order |00⟩, |01⟩, |10⟩, |11⟩ with NV1 first.
pub fn reduced_two_qubit_hamiltonian_phased(delta1: f64, delta2: f64, g: f64, omega1: f64, phi1: f64, omega2: f64, phi2: f64) -> CMat {
    let mut h = diag_real(&[delta2, 0.0, delta1 + delta2 - g, delta1]);
    let c1 = C64::from_polar(omega1 / 2.0, -phi1);
    let c2 = C64::from_polar(omega2 / 2.0, -phi2);
    for (r, c, v) in [(0, 2, c1), (1, 3, c1), (0, 1, c2), (2, 3, c2)] {
        h[(r, c)] += v;
        h[(c, r)] += v.conj();
    }
    h
}

/// Real 3×3 direction operator n·S (for external checks).
pub fn spin_along(n: &Vector3<f64>) -> CMat {
    directional(&spin1_operators(), n)
}
