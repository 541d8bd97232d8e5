//! Coefficient families `(a_0, a_1, ..., a_{2d})` of the operators
//! `a_0 ⊗ 1 + Σ_i a_i ⊗ u_i`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::freegroup::star;
use crate::linalg::{self, complex_gaussian, from_pairs, max_abs_diff, op_norm, to_pairs, CMat, C64};
use crate::rng::seeded;

pub const SELFADJOINT_TOL: f64 = 1e-12;
pub const BISTOCHASTIC_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoeffError {
    #[error("expected {expected} coefficient matrices, got {got}")]
    Count { expected: usize, got: usize },
    #[error("coefficient {index} has shape {rows}x{cols}, expected {n}x{n}")]
    Shape { index: usize, rows: usize, cols: usize, n: usize },
    #[error("rank d must be at least 1")]
    Rank,
    #[error("flag `{0}` is set but the family does not satisfy it")]
    FlagMismatch(&'static str),
    #[error("unitary tensor witness is inconsistent: {0}")]
    Witness(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    #[serde(default)]
    pub selfadjoint: bool,
    #[serde(default)]
    pub bistochastic: bool,
    #[serde(default)]
    pub unitary_tensor: bool,
}

/// Explicit factorization `a_i = b_i ⊗ u_i` with `u_i` unitary, `i = 1..2d`.
#[derive(Clone, Debug)]
pub struct TensorWitness {
    pub b: Vec<CMat>,
    pub u: Vec<CMat>,
}

#[derive(Clone, Debug)]
pub struct CoefficientFamily {
    pub d: usize,
    pub n: usize,
    /// `a[0]` is the constant term, `a[i]` multiplies `u_i` for `i = 1..=2d`.
    pub a: Vec<CMat>,
    pub flags: Flags,
    pub witness: Option<TensorWitness>,
}

impl CoefficientFamily {
    /// Builds a family and detects the selfadjoint and bistochastic flags.
    pub fn new(d: usize, a: Vec<CMat>) -> Result<Self, CoeffError> {
        if d == 0 {
            return Err(CoeffError::Rank);
        }
        if a.len() != 2 * d + 1 {
            return Err(CoeffError::Count { expected: 2 * d + 1, got: a.len() });
        }
        let n = a[0].nrows();
        for (index, m) in a.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(CoeffError::Shape { index, rows: m.nrows(), cols: m.ncols(), n });
            }
        }
        let mut fam = CoefficientFamily { d, n, a, flags: Flags::default(), witness: None };
        fam.flags.selfadjoint = fam.check_selfadjoint();
        fam.flags.bistochastic = fam.check_bistochastic(None);
        Ok(fam)
    }

    /// Builds a family from `a_0` and `a_1..a_d`, completing with `a_{i+d} = a_i^*`.
    pub fn from_half(a0: CMat, half: Vec<CMat>) -> Result<Self, CoeffError> {
        let d = half.len();
        let mut a = vec![a0];
        a.extend(half.iter().cloned());
        a.extend(half.iter().map(|m| m.adjoint()));
        Self::new(d, a)
    }

    pub fn zero(d: usize, n: usize) -> Self {
        Self::new(d, vec![linalg::zeros(n); 2 * d + 1]).expect("valid shape")
    }

    /// `a_0 = 0`, `a_i = 1` (scalars): the adjacency operator of the 2d-regular tree.
    pub fn kesten(d: usize) -> Self {
        let mut a = vec![linalg::eye(1); 2 * d + 1];
        a[0] = linalg::zeros(1);
        Self::new(d, a).expect("valid shape")
    }

    /// Gaussian coefficients satisfying the symmetry condition.
    pub fn random_selfadjoint<R: Rng>(d: usize, n: usize, rng: &mut R) -> Self {
        let s = C64::new(1.0 / (n as f64).sqrt(), 0.0);
        let g = complex_gaussian(rng, n, n) * s;
        let a0 = (&g + g.adjoint()) * C64::new(0.5, 0.0);
        let half = (0..d).map(|_| complex_gaussian(rng, n, n) * s).collect();
        Self::from_half(a0, half).expect("valid shape")
    }

    /// Nonnegative coefficients `c_i · (convex combination of permutation
    /// matrices)`, all fixing the normalized all-ones vector.
    pub fn random_bistochastic<R: Rng>(d: usize, n: usize, rng: &mut R) -> Self {
        let draw = |rng: &mut R| -> CMat {
            let terms = 3;
            let mut m = DMatrix::<f64>::zeros(n, n);
            let mut weights: Vec<f64> = (0..terms).map(|_| rng.random::<f64>() + 0.05).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            for w in weights {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(rng);
                for (x, &y) in perm.iter().enumerate() {
                    m[(x, y)] += w;
                }
            }
            let c = 0.5 + rng.random::<f64>();
            m.map(|v| C64::new(c * v, 0.0))
        };
        let b0 = draw(rng);
        let a0 = (&b0 + b0.transpose()) * C64::new(0.5, 0.0);
        let half: Vec<CMat> = (0..d).map(|_| draw(rng)).collect();
        Self::from_half(a0, half).expect("valid shape")
    }

    /// `a_0 = 0`, `a_i = b_i ⊗ u_i` with `b_i` Gaussian `m × m` and `u_i`
    /// Haar unitary `n × n`; `a_{i*} = a_i^*`.
    pub fn random_unitary_tensor<R: Rng>(d: usize, m: usize, n: usize, rng: &mut R) -> Self {
        let s = C64::new(1.0 / (m as f64).sqrt(), 0.0);
        let mut b = vec![linalg::zeros(m); 2 * d + 1];
        let mut u = vec![linalg::eye(n); 2 * d + 1];
        for i in 1..=d {
            b[i] = complex_gaussian(rng, m, m) * s;
            u[i] = crate::matrix_models::haar_unitary(n, rng);
            b[i + d] = b[i].adjoint();
            u[i + d] = u[i].adjoint();
        }
        let mut a = vec![linalg::zeros(m * n)];
        for i in 1..=2 * d {
            a.push(linalg::kron(&b[i], &u[i]));
        }
        let mut fam = Self::new(d, a).expect("valid shape");
        fam.witness = Some(TensorWitness { b: b[1..].to_vec(), u: u[1..].to_vec() });
        fam.flags.unitary_tensor = true;
        fam
    }

    /// Named presets: `kesten(d)`, `random-selfadjoint(n,seed)`,
    /// `bistochastic(n,seed)`, `unitary-tensor(m,n,seed)`; rank from `d`.
    pub fn preset(name: &str, d: usize) -> Result<Self, CoeffError> {
        let bad = || CoeffError::UnknownPreset(name.to_string());
        let open = name.find('(').ok_or_else(bad)?;
        if !name.ends_with(')') {
            return Err(bad());
        }
        let head = name[..open].trim();
        let args: Vec<u64> = name[open + 1..name.len() - 1]
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<u64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        match (head, args.as_slice()) {
            ("kesten", [dd]) => Ok(Self::kesten(*dd as usize)),
            ("random-selfadjoint", [n, seed]) => Ok(Self::random_selfadjoint(d, *n as usize, &mut seeded(*seed))),
            ("bistochastic", [n, seed]) => Ok(Self::random_bistochastic(d, *n as usize, &mut seeded(*seed))),
            ("unitary-tensor", [m, n, seed]) => {
                Ok(Self::random_unitary_tensor(d, *m as usize, *n as usize, &mut seeded(*seed)))
            }
            _ => Err(bad()),
        }
    }

    pub fn check_selfadjoint(&self) -> bool {
        if max_abs_diff(&self.a[0], &self.a[0].adjoint()) > SELFADJOINT_TOL {
            return false;
        }
        (1..=2 * self.d).all(|i| max_abs_diff(&self.a[i].adjoint(), &self.a[star(self.d, i)]) <= SELFADJOINT_TOL)
    }

    /// Entrywise nonnegative real coefficients sharing a unit vector `f`
    /// with `a_i f = a_i^* f = ‖a_i‖ f`; `f` defaults to normalized all-ones.
    pub fn check_bistochastic(&self, f: Option<&[C64]>) -> bool {
        let n = self.n;
        let ones = vec![C64::new(1.0 / (n as f64).sqrt(), 0.0); n];
        let f = nalgebra::DVector::from_column_slice(f.unwrap_or(&ones));
        for m in &self.a {
            if m.iter().any(|z| z.im.abs() > BISTOCHASTIC_TOL || z.re < -BISTOCHASTIC_TOL) {
                return false;
            }
            let norm = op_norm(m);
            let target = &f * C64::new(norm, 0.0);
            let l = m * &f;
            let r = m.adjoint() * &f;
            if (l - &target).camax() > BISTOCHASTIC_TOL || (r - &target).camax() > BISTOCHASTIC_TOL {
                return false;
            }
        }
        true
    }

    /// Verifies the unitary tensor witness against the coefficients.
    pub fn check_witness(&self) -> Result<(), CoeffError> {
        let w = self.witness.as_ref().ok_or_else(|| CoeffError::Witness("missing".into()))?;
        if w.b.len() != 2 * self.d || w.u.len() != 2 * self.d {
            return Err(CoeffError::Witness("wrong number of factors".into()));
        }
        for i in 0..2 * self.d {
            let u = &w.u[i];
            let gram = u * u.adjoint();
            if max_abs_diff(&gram, &linalg::eye(u.nrows())) > 1e-10 {
                return Err(CoeffError::Witness(format!("u_{} is not unitary", i + 1)));
            }
            let k = linalg::kron(&w.b[i], u);
            if k.shape() != self.a[i + 1].shape() || max_abs_diff(&k, &self.a[i + 1]) > 1e-10 {
                return Err(CoeffError::Witness(format!("a_{} != b ⊗ u", i + 1)));
            }
        }
        Ok(())
    }

    /// `Σ_{i=0}^{2d} ‖a_i‖`.
    pub fn sum_norms(&self) -> f64 {
        self.a.iter().map(op_norm).sum()
    }

    /// True when `a_1 = ... = a_{2d}`.
    pub fn is_radial(&self) -> bool {
        (2..=2 * self.d).all(|i| max_abs_diff(&self.a[i], &self.a[1]) == 0.0)
    }

    /// The 2×2 self-adjointization `ǎ_i = [[0, a_i], [a_{i*}^*, 0]]`,
    /// `ǎ_0 = [[0, a_0], [a_0^*, 0]]`, whose operator has the same norm.
    pub fn selfadjointize(&self) -> CoefficientFamily {
        let n = self.n;
        let block = |x: &CMat, y: &CMat| {
            let mut m = linalg::zeros(2 * n);
            m.view_mut((0, n), (n, n)).copy_from(x);
            m.view_mut((n, 0), (n, n)).copy_from(y);
            m
        };
        let mut a = vec![block(&self.a[0], &self.a[0].adjoint())];
        for i in 1..=2 * self.d {
            a.push(block(&self.a[i], &self.a[star(self.d, i)].adjoint()));
        }
        CoefficientFamily::new(self.d, a).expect("valid shape")
    }

    /// Returns `self` when selfadjoint, otherwise the self-adjointization.
    pub fn hermitian_form(&self) -> CoefficientFamily {
        if self.flags.selfadjoint {
            self.clone()
        } else {
            self.selfadjointize()
        }
    }

    pub fn to_json(&self) -> CoefficientJson {
        CoefficientJson {
            d: self.d,
            n: self.n,
            matrices: self.a.iter().map(to_pairs).collect(),
            flags: self.flags,
        }
    }

    /// Parses the JSON form; flags set in the input are validated.
    pub fn from_json(j: &CoefficientJson) -> Result<Self, CoeffError> {
        let mut a = Vec::with_capacity(j.matrices.len());
        for (index, pairs) in j.matrices.iter().enumerate() {
            let m = from_pairs(j.n, pairs).ok_or(CoeffError::Shape { index, rows: pairs.len(), cols: 1, n: j.n })?;
            a.push(m);
        }
        let fam = Self::new(j.d, a)?;
        if j.flags.selfadjoint && !fam.flags.selfadjoint {
            return Err(CoeffError::FlagMismatch("selfadjoint"));
        }
        if j.flags.bistochastic && !fam.flags.bistochastic {
            return Err(CoeffError::FlagMismatch("bistochastic"));
        }
        if j.flags.unitary_tensor {
            return Err(CoeffError::FlagMismatch("unitary_tensor"));
        }
        Ok(fam)
    }
}

/// Serialized form: matrices are row-major lists of `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientJson {
    pub d: usize,
    pub n: usize,
    pub matrices: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    pub flags: Flags,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_expected_flags() {
        let k = CoefficientFamily::kesten(2);
        assert!(k.flags.selfadjoint && k.flags.bistochastic && k.is_radial());
        let r = CoefficientFamily::preset("random-selfadjoint(2,5)", 3).unwrap();
        assert_eq!((r.d, r.n), (3, 2));
        assert!(r.flags.selfadjoint && !r.is_radial());
        let b = CoefficientFamily::preset("bistochastic(3,1)", 2).unwrap();
        assert!(b.flags.selfadjoint && b.flags.bistochastic);
        let u = CoefficientFamily::preset("unitary-tensor(2,3,9)", 2).unwrap();
        assert!(u.flags.unitary_tensor && u.flags.selfadjoint);
        assert_eq!(u.n, 6);
        u.check_witness().unwrap();
        assert!(CoefficientFamily::preset("nope(1)", 2).is_err());
    }

    #[test]
    fn json_round_trip() {
        let r = CoefficientFamily::random_selfadjoint(2, 2, &mut seeded(1));
        let j = r.to_json();
        let text = serde_json::to_string(&j).unwrap();
        let back: CoefficientJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back, j);
        let fam = CoefficientFamily::from_json(&back).unwrap();
        for i in 0..5 {
            assert_eq!(fam.a[i], r.a[i]);
        }
    }

    #[test]
    fn flag_validation() {
        let mut r = CoefficientFamily::random_selfadjoint(1, 2, &mut seeded(2));
        r.a[1] = linalg::eye(2) * C64::new(0.0, 1.0);
        let fam = CoefficientFamily::new(1, r.a.clone()).unwrap();
        assert!(!fam.flags.selfadjoint);
        let mut j = fam.to_json();
        j.flags.selfadjoint = true;
        assert_eq!(CoefficientFamily::from_json(&j).unwrap_err(), CoeffError::FlagMismatch("selfadjoint"));
        let sa = fam.selfadjointize();
        assert!(sa.flags.selfadjoint);
        assert_eq!(sa.n, 4);
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(CoefficientFamily::new(1, vec![linalg::eye(1)]), Err(CoeffError::Count { .. })));
        let bad = vec![linalg::eye(1), linalg::eye(2), linalg::eye(1)];
        assert!(matches!(CoefficientFamily::new(1, bad), Err(CoeffError::Shape { index: 1, .. })));
    }
}
