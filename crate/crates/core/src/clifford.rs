//! One- and two-qubit Clifford groups in stabilizer-tableau form, uniform
//! sampling, and synthesis into the native gate set {π, π/2 about ±x, ±y per
//! qubit; √ZZ}.

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{matmul, CMat, C64, ONE, ZERO};
use crate::error::{Error, Result};
use crate::experiment::kron2;
use crate::propagation::{ideal_rotation, PulseKind, PulsePhase};
use crate::sequences::sqrt_zz_ideal;

use PulseKind::{Pi, PiHalf};
use PulsePhase::{MinusX, MinusY, X, Y};

/// Pauli operator i^r·X^x·Z^z. Bit `n−1−j` of `x`/`z` belongs to qubit j,
/// matching the matrix index order (qubit 0 most significant).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pauli {
    pub r: u8,
    pub x: u8,
    pub z: u8,
}

impl Pauli {
    pub fn mul(self, o: Pauli) -> Pauli {
        let swap = (self.z & o.x).count_ones() as u8;
        Pauli { r: (self.r + o.r + 2 * swap) % 4, x: self.x ^ o.x, z: self.z ^ o.z }
    }

    pub fn matrix(self, n_qubits: usize) -> CMat {
        let d = 1usize << n_qubits;
        let ph = [ONE, C64::new(0.0, 1.0), -ONE, C64::new(0.0, -1.0)][self.r as usize];
        let mut m = CMat::zeros(d, d);
        for k in 0..d {
            let sign = if (self.z as usize & k).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
            m[(k ^ self.x as usize, k)] = ph * sign;
        }
        m
    }
}

/// Images of the generators X_0, Z_0, X_1, Z_1, ... under conjugation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tableau {
    pub n_qubits: usize,
    pub images: Vec<Pauli>,
}

impl Tableau {
    pub fn identity(n_qubits: usize) -> Self {
        let images = (0..n_qubits)
            .flat_map(|j| {
                let b = 1u8 << (n_qubits - 1 - j);
                [Pauli { r: 0, x: b, z: 0 }, Pauli { r: 0, x: 0, z: b }]
            })
            .collect();
        Self { n_qubits, images }
    }

    /// U·P·U† for an arbitrary Pauli P.
    pub fn apply(&self, p: Pauli) -> Pauli {
        let n = self.n_qubits;
        let mut out = Pauli { r: p.r, x: 0, z: 0 };
        for j in 0..n {
            if p.x >> (n - 1 - j) & 1 == 1 {
                out = out.mul(self.images[2 * j]);
            }
        }
        for j in 0..n {
            if p.z >> (n - 1 - j) & 1 == 1 {
                out = out.mul(self.images[2 * j + 1]);
            }
        }
        out
    }

    /// Tableau of U_self·U_first (`first` acts first).
    pub fn after(&self, first: &Tableau) -> Tableau {
        Tableau { n_qubits: self.n_qubits, images: first.images.iter().map(|&p| self.apply(p)).collect() }
    }

    pub fn key(&self) -> u64 {
        self.images.iter().fold(0u64, |k, p| (k << 10) | (p.r as u64) << 8 | (p.x as u64) << 4 | p.z as u64)
    }

    /// Tableau of a unitary, or `None` if it is not Clifford.
    pub fn from_unitary(u: &CMat) -> Option<Tableau> {
        let d = u.nrows();
        let n = d.trailing_zeros() as usize;
        let id = Tableau::identity(n);
        let mut images = Vec::with_capacity(2 * n);
        for g in &id.images {
            let m = matmul(&matmul(u, &g.matrix(n)), &u.adjoint());
            images.push(identify_pauli(&m, n)?);
        }
        Some(Tableau { n_qubits: n, images })
    }
}

fn identify_pauli(m: &CMat, n: usize) -> Option<Pauli> {
    let d = 1usize << n;
    let x = (0..d).find(|&r| m[(r, 0)].norm() > 0.5)?;
    let c = m[(x, 0)];
    let r = [ONE, C64::new(0.0, 1.0), -ONE, C64::new(0.0, -1.0)].iter().position(|&v| (v - c).norm() < 1e-6)? as u8;
    let mut z = 0u8;
    for b in 0..n {
        let k = 1usize << b;
        if (m[(k ^ x, k)] + c).norm() < 1e-6 {
            z |= 1 << b;
        }
    }
    let p = Pauli { r, x: x as u8, z };
    ((p.matrix(n) - m).iter().all(|v| v.norm() < 1e-6)).then_some(p)
}

/// One native gate. Single-qubit gates act on `qubit` (0 = NV1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "gate", rename_all = "snake_case")]
pub enum NativeGate {
    Rotation { qubit: usize, kind: PulseKind, phase: PulsePhase },
    SqrtZz,
}

impl NativeGate {
    pub fn rot(qubit: usize, kind: PulseKind, phase: PulsePhase) -> Self {
        NativeGate::Rotation { qubit, kind, phase }
    }

    pub fn is_two_qubit(&self) -> bool {
        matches!(self, NativeGate::SqrtZz)
    }

    pub fn unitary(&self, n_qubits: usize) -> CMat {
        let id = [[ONE, ZERO], [ZERO, ONE]];
        match *self {
            NativeGate::SqrtZz => sqrt_zz_ideal(),
            NativeGate::Rotation { qubit, kind, phase } => {
                let r = ideal_rotation(kind.angle(), phase.angle());
                match (n_qubits, qubit) {
                    (1, _) => CMat::from_fn(2, 2, |i, j| r[i][j]),
                    (_, 0) => kron2(&r, &id),
                    _ => kron2(&id, &r),
                }
            }
        }
    }
}

/// Product of a gate list in application order.
pub fn gates_unitary(gates: &[NativeGate], n_qubits: usize) -> CMat {
    let d = 1usize << n_qubits;
    gates.iter().fold(CMat::identity(d, d), |u, g| matmul(&g.unitary(n_qubits), &u))
}

/// max |a − e^{iφ}b| over entries for the best global phase φ.
pub fn phase_distance(a: &CMat, b: &CMat) -> f64 {
    let ov: C64 = a.iter().zip(b.iter()).map(|(x, y)| y.conj() * x).sum();
    let ph = if ov.norm() > 0.0 { ov / ov.norm() } else { ONE };
    a.iter().zip(b.iter()).map(|(x, y)| (x - ph * y).norm()).fold(0.0, f64::max)
}

/// The native single-qubit gate set, in search order.
pub const SINGLE_QUBIT_NATIVES: [(PulseKind, PulsePhase); 6] =
    [(Pi, X), (Pi, Y), (PiHalf, X), (PiHalf, MinusX), (PiHalf, Y), (PiHalf, MinusY)];

/// CNOT (control `control`) as its √ZZ expansion, in application order.
pub fn cnot_expansion(control: usize) -> Vec<NativeGate> {
    let (c, t) = (control, 1 - control);
    vec![
        NativeGate::rot(c, PiHalf, X),
        NativeGate::rot(t, PiHalf, MinusX),
        NativeGate::rot(c, PiHalf, Y),
        NativeGate::rot(t, PiHalf, Y),
        NativeGate::rot(c, PiHalf, X),
        NativeGate::SqrtZz,
        NativeGate::rot(t, PiHalf, MinusY),
        NativeGate::rot(c, Pi, X),
    ]
}

/// A Clifford group with per-element tableau, cached unitary, inverse and
/// native decomposition.
pub struct CliffordGroup {
    pub n_qubits: usize,
    tableaux: Vec<Tableau>,
    unitaries: Vec<CMat>,
    index: HashMap<u64, usize>,
    inverse: Vec<usize>,
    decompositions: Vec<Vec<NativeGate>>,
}

/// A group element with its synthesized gate list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CliffordElement {
    pub n_qubits: usize,
    pub index: usize,
    pub tableau: Tableau,
    pub native_decomposition: Vec<NativeGate>,
}

impl CliffordElement {
    pub fn two_qubit_count(&self) -> usize {
        self.native_decomposition.iter().filter(|g| g.is_two_qubit()).count()
    }

    pub fn single_qubit_count(&self) -> usize {
        self.native_decomposition.len() - self.two_qubit_count()
    }
}

fn enumerate(n: usize, gens: &[CMat]) -> (Vec<Tableau>, Vec<CMat>, HashMap<u64, usize>) {
    let d = 1usize << n;
    let gen_t: Vec<Tableau> = gens.iter().map(|g| Tableau::from_unitary(g).expect("generator is Clifford")).collect();
    let mut tabs = vec![Tableau::identity(n)];
    let mut us = vec![CMat::identity(d, d)];
    let mut index = HashMap::from([(tabs[0].key(), 0usize)]);
    let mut head = 0;
    while head < tabs.len() {
        for (g, gt) in gens.iter().zip(&gen_t) {
            let t = gt.after(&tabs[head]);
            if let std::collections::hash_map::Entry::Vacant(e) = index.entry(t.key()) {
                e.insert(tabs.len());
                us.push(matmul(g, &us[head]));
                tabs.push(t);
            }
        }
        head += 1;
    }
    (tabs, us, index)
}

impl CliffordGroup {
    fn base(n: usize) -> Self {
        let gens: Vec<CMat> = SINGLE_QUBIT_NATIVES
            .iter()
            .flat_map(|&(k, p)| (0..n).map(move |q| NativeGate::rot(q, k, p).unitary(n)))
            .chain((n == 2).then(sqrt_zz_ideal))
            .collect();
        let (tableaux, unitaries, index) = enumerate(n, &gens);
        let inverse = unitaries
            .iter()
            .map(|u| index[&Tableau::from_unitary(&u.adjoint()).expect("inverse is Clifford").key()])
            .collect();
        Self { n_qubits: n, tableaux, unitaries, index, inverse, decompositions: Vec::new() }
    }

    fn build_one_qubit() -> Self {
        let mut g = Self::base(1);
        // breadth-first words over the natives are minimal
        let mut words: Vec<Option<Vec<NativeGate>>> = vec![None; g.size()];
        words[0] = Some(Vec::new());
        let nat: Vec<(NativeGate, Tableau)> = SINGLE_QUBIT_NATIVES
            .iter()
            .map(|&(k, p)| {
                let gate = NativeGate::rot(0, k, p);
                (gate, Tableau::from_unitary(&gate.unitary(1)).unwrap())
            })
            .collect();
        let mut frontier = vec![0usize];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &i in &frontier {
                for (gate, t) in &nat {
                    let j = g.index[&t.after(&g.tableaux[i]).key()];
                    if words[j].is_none() {
                        let mut w = words[i].clone().unwrap();
                        w.push(*gate);
                        words[j] = Some(w);
                        next.push(j);
                    }
                }
            }
            frontier = next;
        }
        g.decompositions = words.into_iter().map(|w| w.expect("native set generates the group")).collect();
        g
    }

    fn build_two_qubit() -> Self {
        let c1 = Self::one_qubit();
        let mut g = Self::base(2);
        // local layer C1 ⊗ C1 with raw costs
        let mut local = Vec::with_capacity(576);
        for a in 0..24 {
            for b in 0..24 {
                let u = kron2(&to_array(&c1.unitaries[a]), &to_array(&c1.unitaries[b]));
                let cost = c1.decompositions[a].len() + c1.decompositions[b].len();
                local.push((a, b, Tableau::from_unitary(&u).unwrap(), cost));
            }
        }
        let cnot12 = cnot_expansion(0);
        let cnot21 = cnot_expansion(1);
        let classes: [Vec<NativeGate>; 4] = [
            Vec::new(),
            cnot12.clone(),
            [cnot12.clone(), cnot21.clone()].concat(),
            [cnot12.clone(), cnot21, cnot12].concat(),
        ];
        let class_t: Vec<Tableau> =
            classes.iter().map(|k| Tableau::from_unitary(&gates_unitary(k, 2)).unwrap()).collect();
        // (√ZZ count, raw 1q count, class, B, A)
        let mut best: Vec<Option<(usize, usize, usize, usize, usize)>> = vec![None; g.size()];
        for (ki, kt) in class_t.iter().enumerate() {
            let k1q = classes[ki].len() - ki;
            for (bi, b) in local.iter().enumerate() {
                let kb = kt.after(&b.2);
                for (ai, a) in local.iter().enumerate() {
                    let idx = g.index[&a.2.after(&kb).key()];
                    let cand = (ki, k1q + a.3 + b.3, ki, bi, ai);
                    if best[idx].is_none_or(|c| (cand.0, cand.1) < (c.0, c.1)) {
                        best[idx] = Some(cand);
                    }
                }
            }
        }
        let word = |q: usize, i: usize| -> Vec<NativeGate> {
            c1.decompositions[i]
                .iter()
                .map(|gate| match *gate {
                    NativeGate::Rotation { kind, phase, .. } => NativeGate::rot(q, kind, phase),
                    NativeGate::SqrtZz => unreachable!(),
                })
                .collect()
        };
        g.decompositions = best
            .into_iter()
            .map(|b| {
                let (_, _, ki, bi, ai) = b.expect("canonical form covers the group");
                let (b1, b2) = (local[bi].0, local[bi].1);
                let (a1, a2) = (local[ai].0, local[ai].1);
                let raw = [word(0, b1), word(1, b2), classes[ki].clone(), word(0, a1), word(1, a2)].concat();
                merge_single_qubit_runs(&raw, c1)
            })
            .collect();
        g
    }

    pub fn one_qubit() -> &'static CliffordGroup {
        static G: OnceLock<CliffordGroup> = OnceLock::new();
        G.get_or_init(Self::build_one_qubit)
    }

    pub fn two_qubit() -> &'static CliffordGroup {
        static G: OnceLock<CliffordGroup> = OnceLock::new();
        G.get_or_init(Self::build_two_qubit)
    }

    pub fn get(n_qubits: usize) -> Result<&'static CliffordGroup> {
        match n_qubits {
            1 => Ok(Self::one_qubit()),
            2 => Ok(Self::two_qubit()),
            _ => Err(Error::InvalidParameter(format!("Clifford groups exist for 1 or 2 qubits, not {n_qubits}"))),
        }
    }

    pub fn size(&self) -> usize {
        self.tableaux.len()
    }

    pub fn tableau(&self, i: usize) -> &Tableau {
        &self.tableaux[i]
    }

    pub fn unitary(&self, i: usize) -> &CMat {
        &self.unitaries[i]
    }

    pub fn decomposition(&self, i: usize) -> &[NativeGate] {
        &self.decompositions[i]
    }

    pub fn inverse(&self, i: usize) -> usize {
        self.inverse[i]
    }

    pub fn find(&self, t: &Tableau) -> Option<usize> {
        self.index.get(&t.key()).copied()
    }

    /// Index of C_second·C_first.
    pub fn compose(&self, first: usize, second: usize) -> usize {
        self.index[&self.tableaux[second].after(&self.tableaux[first]).key()]
    }

    pub fn element(&self, i: usize) -> CliffordElement {
        CliffordElement {
            n_qubits: self.n_qubits,
            index: i,
            tableau: self.tableaux[i].clone(),
            native_decomposition: self.decompositions[i].clone(),
        }
    }

    pub fn sample_index<R: Rng>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.size())
    }

    /// `length` random elements followed by the inverse of their product.
    pub fn rb_sequence<R: Rng>(&self, length: usize, rng: &mut R) -> Vec<usize> {
        let mut seq: Vec<usize> = (0..length).map(|_| self.sample_index(rng)).collect();
        let total = seq.iter().fold(0, |acc, &c| self.compose(acc, c));
        seq.push(self.inverse(total));
        seq
    }
}

fn to_array(u: &CMat) -> [[C64; 2]; 2] {
    [[u[(0, 0)], u[(0, 1)]], [u[(1, 0)], u[(1, 1)]]]
}

/// Compose each same-qubit run between √ZZ gates and re-express it by its
/// minimal word.
pub fn merge_single_qubit_runs(gates: &[NativeGate], c1: &CliffordGroup) -> Vec<NativeGate> {
    let mut out = Vec::new();
    let mut acc = [CMat::identity(2, 2), CMat::identity(2, 2)];
    let flush = |acc: &mut [CMat; 2], out: &mut Vec<NativeGate>| {
        for (q, u) in acc.iter_mut().enumerate() {
            let i = c1.find(&Tableau::from_unitary(u).expect("single-qubit run is Clifford")).unwrap();
            out.extend(c1.decompositions[i].iter().map(|g| match *g {
                NativeGate::Rotation { kind, phase, .. } => NativeGate::rot(q, kind, phase),
                NativeGate::SqrtZz => unreachable!(),
            }));
            *u = CMat::identity(2, 2);
        }
    };
    for g in gates {
        match *g {
            NativeGate::SqrtZz => {
                flush(&mut acc, &mut out);
                out.push(NativeGate::SqrtZz);
            }
            NativeGate::Rotation { qubit, kind, phase } => {
                acc[qubit] = matmul(&NativeGate::rot(0, kind, phase).unitary(1), &acc[qubit]);
            }
        }
    }
    flush(&mut acc, &mut out);
    out
}

/// Uniformly random element drawn from a generator seeded with `seed`.
pub fn sample_clifford(n_qubits: usize, seed: u64) -> Result<CliffordElement> {
    use rand::SeedableRng;
    let g = CliffordGroup::get(n_qubits)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Ok(g.element(g.sample_index(&mut rng)))
}

/// Native gate list of `c`, checked against its tableau.
pub fn decompose_clifford(c: &CliffordElement) -> Result<Vec<NativeGate>> {
    let g = CliffordGroup::get(c.n_qubits)?;
    let i = g.find(&c.tableau).ok_or_else(|| Error::InvalidState("tableau is not a group element".into()))?;
    let gates = g.decomposition(i).to_vec();
    if phase_distance(&gates_unitary(&gates, c.n_qubits), g.unitary(i)) > 1e-10 {
        return Err(Error::Numeric(format!("synthesized gates for element {i} do not match its unitary")));
    }
    Ok(gates)
}

/// Mean native gate counts per Clifford.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpcStats {
    pub gpc_1q: f64,
    pub gpc_2q: f64,
    pub samples: usize,
}

/// Gates-per-Clifford over `samples` uniform draws.
pub fn gpc_statistics(n_qubits: usize, samples: usize, seed: u64) -> Result<GpcStats> {
    use rand::SeedableRng;
    let g = CliffordGroup::get(n_qubits)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut one, mut two) = (0usize, 0usize);
    for _ in 0..samples {
        let d = g.decomposition(g.sample_index(&mut rng));
        let t = d.iter().filter(|x| x.is_two_qubit()).count();
        two += t;
        one += d.len() - t;
    }
    let s = samples.max(1) as f64;
    Ok(GpcStats { gpc_1q: one as f64 / s, gpc_2q: two as f64 / s, samples })
}

/// Exact gate-count means over the whole group.
pub fn gpc_exact(n_qubits: usize) -> Result<GpcStats> {
    let g = CliffordGroup::get(n_qubits)?;
    let two: usize = g.decompositions.iter().map(|d| d.iter().filter(|x| x.is_two_qubit()).count()).sum();
    let all: usize = g.decompositions.iter().map(|d| d.len()).sum();
    let s = g.size() as f64;
    Ok(GpcStats { gpc_1q: (all - two) as f64 / s, gpc_2q: two as f64 / s, samples: g.size() })
}
