//! Block-constant variance and deformation profiles.
//!
//! A model is described by a partition of `[0, 1]` into `K` intervals, a
//! `K x K` table of variance values `s_lk` and `K` complex deformation values
//! `a_k`. Sampling the profiles at the grid points `i/n` gives the
//! discretized variance matrix `S_n` (entries `s(i/n, j/n) / n`) and the
//! deformation vector `a_n`.

use std::collections::HashMap;
use std::fmt;

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::digest;
use crate::error::{Error, Result};

pub const DEFAULT_C_BOUND: f64 = 1e-2;
pub const DEFAULT_HOLDER_THETA: f64 = 1.0;

/// Breakpoints `0 = b_0 < b_1 < ... < b_K = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    breakpoints: Vec<f64>,
}

impl BlockPartition {
    pub fn new(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidSpec(
                "a partition needs at least the breakpoints 0 and 1".into(),
            ));
        }
        if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != 1.0 {
            return Err(Error::InvalidSpec(
                "breakpoints must start at 0 and end at 1".into(),
            ));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidSpec("breakpoints must be finite".into()));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSpec(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(Self { breakpoints })
    }

    /// `K` equal intervals.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidSpec("K must be at least 1".into()));
        }
        let mut b: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
        b[k] = 1.0;
        Self::new(b)
    }

    pub fn blocks(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn length(&self, k: usize) -> f64 {
        self.breakpoints[k + 1] - self.breakpoints[k]
    }

    /// Block containing `x in (0, 1]`; blocks are left-open, right-closed,
    /// so a point equal to `b_k` belongs to the block ending there.
    pub fn block_of(&self, x: f64) -> usize {
        let upper = &self.breakpoints[1..];
        upper.partition_point(|&b| b < x).min(self.blocks() - 1)
    }
}

/// Block-constant profiles `s` and `a` together with the assumption constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSpec {
    pub partition: BlockPartition,
    /// Row-major `K x K`; entry `(l, k)` is the value of `s` on `I_l x I_k`.
    pub variance: Vec<Vec<f64>>,
    pub deformation: Vec<c64>,
    pub c_bound: f64,
    pub holder_theta: f64,
}

impl ProfileSpec {
    pub fn new(
        partition: BlockPartition,
        variance: Vec<Vec<f64>>,
        deformation: Vec<c64>,
        c_bound: f64,
        holder_theta: f64,
    ) -> Result<Self> {
        let k = partition.blocks();
        if variance.len() != k || variance.iter().any(|row| row.len() != k) {
            return Err(Error::InvalidSpec(format!(
                "variance must be a {k}x{k} matrix"
            )));
        }
        if deformation.len() != k {
            return Err(Error::InvalidSpec(format!(
                "deformation must have {k} entries, got {}",
                deformation.len()
            )));
        }
        if variance.iter().flatten().any(|&s| !s.is_finite() || s < 0.0) {
            return Err(Error::InvalidSpec(
                "variance entries must be finite and nonnegative".into(),
            ));
        }
        if deformation.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::InvalidSpec("deformation must be finite".into()));
        }
        if !(c_bound.is_finite() && c_bound > 0.0) {
            return Err(Error::InvalidSpec("c_bound must be positive".into()));
        }
        if !holder_theta.is_finite() {
            return Err(Error::InvalidSpec("holder_theta must be finite".into()));
        }
        Ok(Self {
            partition,
            variance,
            deformation,
            c_bound,
            holder_theta,
        })
    }

    /// Constant profiles `s = t`, `a = a0` on a single block.
    pub fn constant(t: f64, a0: c64) -> Result<Self> {
        Self::new(
            BlockPartition::uniform(1)?,
            vec![vec![t]],
            vec![a0],
            DEFAULT_C_BOUND,
            DEFAULT_HOLDER_THETA,
        )
    }

    pub fn blocks(&self) -> usize {
        self.partition.blocks()
    }

    pub fn deformation_is_zero(&self) -> bool {
        self.deformation.iter().all(|a| *a == c64::new(0.0, 0.0))
    }

    /// Zero/nonzero pattern `z_lk = 1(s_lk != 0)`.
    pub fn indicator(&self) -> Vec<Vec<bool>> {
        self.variance
            .iter()
            .map(|row| row.iter().map(|&s| s != 0.0).collect())
            .collect()
    }

    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        for &b in self.partition.breakpoints() {
            digest::push_f64(&mut buf, b);
        }
        for &s in self.variance.iter().flatten() {
            digest::push_f64(&mut buf, s);
        }
        for a in &self.deformation {
            digest::push_f64(&mut buf, a.re);
            digest::push_f64(&mut buf, a.im);
        }
        digest::push_f64(&mut buf, self.c_bound);
        digest::push_f64(&mut buf, self.holder_theta);
        digest::sha256_hex(&buf)
    }
}

/// On-disk form of [`ProfileSpec`]; key names are part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFile {
    pub breakpoints: Vec<f64>,
    pub variance: Vec<Vec<f64>>,
    pub deformation_re: Vec<f64>,
    pub deformation_im: Vec<f64>,
    #[serde(default = "default_c_bound")]
    pub c_bound: f64,
    #[serde(default = "default_holder_theta")]
    pub holder_theta: f64,
}

fn default_c_bound() -> f64 {
    DEFAULT_C_BOUND
}

fn default_holder_theta() -> f64 {
    DEFAULT_HOLDER_THETA
}

impl TryFrom<ProfileFile> for ProfileSpec {
    type Error = Error;

    fn try_from(f: ProfileFile) -> Result<Self> {
        if f.deformation_re.len() != f.deformation_im.len() {
            return Err(Error::InvalidSpec(
                "deformation_re and deformation_im differ in length".into(),
            ));
        }
        let deformation = f
            .deformation_re
            .iter()
            .zip(&f.deformation_im)
            .map(|(&re, &im)| c64::new(re, im))
            .collect();
        ProfileSpec::new(
            BlockPartition::new(f.breakpoints)?,
            f.variance,
            deformation,
            f.c_bound,
            f.holder_theta,
        )
    }
}

impl From<&ProfileSpec> for ProfileFile {
    fn from(spec: &ProfileSpec) -> Self {
        ProfileFile {
            breakpoints: spec.partition.breakpoints().to_vec(),
            variance: spec.variance.clone(),
            deformation_re: spec.deformation.iter().map(|a| a.re).collect(),
            deformation_im: spec.deformation.iter().map(|a| a.im).collect(),
            c_bound: spec.c_bound,
            holder_theta: spec.holder_theta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Violation {
    VarianceAboveBound { l: usize, k: usize, value: f64 },
    VarianceBelowBound { l: usize, k: usize, value: f64 },
    DeformationAboveBound { k: usize, modulus: f64 },
    ZeroDiagonalBlock { k: usize },
    NotPrimitive,
    HolderExponentTooSmall { theta: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::VarianceAboveBound { l, k, value } => {
                write!(f, "VarianceAboveBound: s[{l}][{k}] = {value} exceeds 1/c")
            }
            Violation::VarianceBelowBound { l, k, value } => {
                write!(f, "VarianceBelowBound: s[{l}][{k}] = {value} is nonzero but below c")
            }
            Violation::DeformationAboveBound { k, modulus } => {
                write!(f, "DeformationAboveBound: |a[{k}]| = {modulus} exceeds 1/c")
            }
            Violation::ZeroDiagonalBlock { k } => {
                write!(f, "ZeroDiagonalBlock: s[{k}][{k}] = 0")
            }
            Violation::NotPrimitive => write!(f, "NotPrimitive: block indicator matrix is not primitive"),
            Violation::HolderExponentTooSmall { theta } => {
                write!(f, "HolderExponentTooSmall: theta = {theta} <= 1/2")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, v: &Violation) -> bool {
        self.violations.contains(v)
    }

    pub fn is_primitive(&self) -> bool {
        !self.violations.contains(&Violation::NotPrimitive)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "valid: all assumptions hold");
        }
        writeln!(f, "{} violation(s):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Checks the assumptions on the profiles. Violations are reported, never
/// raised.
pub fn validate(spec: &ProfileSpec) -> ValidationReport {
    let upper = 1.0 / spec.c_bound;
    let mut violations = Vec::new();
    for (l, row) in spec.variance.iter().enumerate() {
        for (k, &s) in row.iter().enumerate() {
            if s > upper {
                violations.push(Violation::VarianceAboveBound { l, k, value: s });
            }
            if s > 0.0 && s < spec.c_bound {
                violations.push(Violation::VarianceBelowBound { l, k, value: s });
            }
        }
    }
    for (k, a) in spec.deformation.iter().enumerate() {
        if a.norm() > upper {
            violations.push(Violation::DeformationAboveBound { k, modulus: a.norm() });
        }
    }
    for k in 0..spec.blocks() {
        if spec.variance[k][k] == 0.0 {
            violations.push(Violation::ZeroDiagonalBlock { k });
        }
    }
    if !is_primitive(&spec.indicator()) {
        violations.push(Violation::NotPrimitive);
    }
    if spec.holder_theta <= 0.5 {
        violations.push(Violation::HolderExponentTooSmall {
            theta: spec.holder_theta,
        });
    }
    ValidationReport { violations }
}

/// Exact primitivity test: some boolean power `Z^L` with
/// `L <= (K-1)^2 + 1` is entrywise positive.
pub fn is_primitive(z: &[Vec<bool>]) -> bool {
    let k = z.len();
    if k == 0 {
        return false;
    }
    let wielandt = (k - 1) * (k - 1) + 1;
    let mut power = z.to_vec();
    for step in 1..=wielandt {
        if power.iter().flatten().all(|&b| b) {
            return true;
        }
        if step == wielandt {
            break;
        }
        power = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| (0..k).any(|m| power[i][m] && z[m][j]))
                    .collect()
            })
            .collect();
    }
    false
}

/// `K x K` matrix with entries `s_lk |I_k|`: the integral operator `S`
/// restricted to block-constant functions.
pub fn reduced_variance_matrix(spec: &ProfileSpec) -> Vec<Vec<f64>> {
    spec.variance
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(k, &s)| s * spec.partition.length(k))
                .collect()
        })
        .collect()
}

/// Perron root of a square nonnegative matrix by shifted power iteration.
///
/// The shift by the max row sum makes the iteration aperiodic; convergence
/// is declared when the Collatz-Wielandt bounds meet to relative `1e-12` or,
/// for reducible inputs where they need not meet, when the estimate stops
/// moving.
pub fn spectral_radius(m: &[Vec<f64>]) -> Result<f64> {
    let k = m.len();
    if m.iter().any(|row| row.len() != k) {
        return Err(Error::Domain("spectral_radius needs a square matrix".into()));
    }
    if m.iter().flatten().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::Domain(
            "spectral_radius needs finite nonnegative entries".into(),
        ));
    }
    if k == 0 {
        return Ok(0.0);
    }
    let shift = m
        .iter()
        .map(|row| row.iter().sum::<f64>())
        .fold(0.0, f64::max);
    if shift == 0.0 {
        return Ok(0.0);
    }

    const MAX_ITER: usize = 200_000;
    let mut x = vec![1.0; k];
    let mut y = vec![0.0; k];
    let mut last = f64::NAN;
    let mut still = 0;
    for _ in 0..MAX_ITER {
        for i in 0..k {
            y[i] = shift * x[i] + m[i].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..k {
            if x[i] > 0.0 {
                let r = y[i] / x[i];
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        let est_hi = hi - shift;
        if (hi - lo) <= 1e-12 * hi {
            return Ok(0.5 * (hi + lo) - shift);
        }
        if (est_hi - last).abs() <= 1e-15 * shift {
            still += 1;
            if still >= 50 {
                let norm = y.iter().cloned().fold(0.0, f64::max);
                let xnorm = x.iter().cloned().fold(0.0, f64::max);
                return Ok(norm / xnorm - shift);
            }
        } else {
            still = 0;
        }
        last = est_hi;
        let norm = y.iter().cloned().fold(0.0, f64::max);
        for i in 0..k {
            x[i] = y[i] / norm;
        }
    }
    Err(Error::NumericalFailure(
        "spectral_radius: power iteration did not converge".into(),
    ))
}

/// Index classes with identical deformation, variance row and variance
/// column. The Dyson solution is constant on each class, so solving on the
/// class representatives with multiplicities is exact.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct IndexClasses {
    pub of: Vec<usize>,
    pub mult: Vec<usize>,
    pub rep: Vec<usize>,
}

impl IndexClasses {
    fn singletons(n: usize) -> Self {
        Self {
            of: (0..n).collect(),
            mult: vec![1; n],
            rep: (0..n).collect(),
        }
    }

    fn from_labels(labels: &[usize]) -> Self {
        let mut map: HashMap<usize, usize> = HashMap::new();
        let mut of = Vec::with_capacity(labels.len());
        let mut mult = Vec::new();
        let mut rep = Vec::new();
        for (i, &lab) in labels.iter().enumerate() {
            let c = *map.entry(lab).or_insert_with(|| {
                mult.push(0);
                rep.push(i);
                mult.len() - 1
            });
            mult[c] += 1;
            of.push(c);
        }
        Self { of, mult, rep }
    }

    pub fn len(&self) -> usize {
        self.mult.len()
    }
}

/// The class-compressed linear data used by the Dyson solvers.
#[derive(Debug, Clone)]
pub(crate) struct ReducedOperator {
    pub dim: usize,
    /// `(S v)_c = sum_d fwd[c*dim + d] v_d`
    pub fwd: Vec<f64>,
    /// `(S^T v)_c = sum_d bwd[c*dim + d] v_d`
    pub bwd: Vec<f64>,
    pub a: Vec<c64>,
    /// Multiplicity over `n`; `<v> = sum_c weight_c v_c`.
    pub weight: Vec<f64>,
}

/// `S_n` and `a_n` sampled from the profiles.
#[derive(Debug, Clone)]
pub struct DiscretizedModel {
    n: usize,
    s: Vec<f64>,
    a: Vec<c64>,
    classes: IndexClasses,
    reduced: ReducedOperator,
}

impl DiscretizedModel {
    /// Builds a model from an explicit `n x n` row-major variance matrix
    /// (already including the `1/n` factor) and deformation vector.
    pub fn from_dense(n: usize, s: Vec<f64>, a: Vec<c64>) -> Result<Self> {
        if n == 0 || s.len() != n * n || a.len() != n {
            return Err(Error::InvalidSpec(format!(
                "dense model needs an {n}x{n} matrix and {n} deformation values"
            )));
        }
        if s.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::InvalidSpec(
                "variance matrix entries must be finite and nonnegative".into(),
            ));
        }
        let mut keys: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let mut key = Vec::with_capacity(2 * n + 2);
            key.push(a[i].re.to_bits());
            key.push(a[i].im.to_bits());
            key.extend((0..n).map(|j| s[i * n + j].to_bits()));
            key.extend((0..n).map(|j| s[j * n + i].to_bits()));
            let next = keys.len();
            labels.push(*keys.entry(key).or_insert(next));
        }
        Ok(Self::assemble(n, s, a, IndexClasses::from_labels(&labels)))
    }

    fn assemble(n: usize, s: Vec<f64>, a: Vec<c64>, classes: IndexClasses) -> Self {
        let dim = classes.len();
        let mut fwd = vec![0.0; dim * dim];
        let mut bwd = vec![0.0; dim * dim];
        for c in 0..dim {
            let rc = classes.rep[c];
            for d in 0..dim {
                let rd = classes.rep[d];
                let md = classes.mult[d] as f64;
                fwd[c * dim + d] = s[rc * n + rd] * md;
                bwd[c * dim + d] = s[rd * n + rc] * md;
            }
        }
        let reduced = ReducedOperator {
            dim,
            fwd,
            bwd,
            a: classes.rep.iter().map(|&r| a[r]).collect(),
            weight: classes.mult.iter().map(|&m| m as f64 / n as f64).collect(),
        };
        Self {
            n,
            s,
            a,
            classes,
            reduced,
        }
    }

    /// Same model with every index in its own class, forcing the solvers to
    /// iterate on the full `n`-dimensional system.
    pub fn without_compression(&self) -> Self {
        Self::assemble(
            self.n,
            self.s.clone(),
            self.a.clone(),
            IndexClasses::singletons(self.n),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Row-major `S_n`.
    pub fn variance_matrix(&self) -> &[f64] {
        &self.s
    }

    pub fn variance(&self, i: usize, j: usize) -> f64 {
        self.s[i * self.n + j]
    }

    pub fn deformation(&self) -> &[c64] {
        &self.a
    }

    /// Number of distinct index classes the solvers work with.
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// Operator norm of `S_n` on `l^inf` (max row sum).
    pub fn operator_norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.s[i * self.n..(i + 1) * self.n].iter().sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn deformation_sup(&self) -> f64 {
        self.a.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    pub fn digest(&self) -> String {
        let mut buf = Vec::with_capacity(8 * (self.s.len() + 2 * self.n + 1));
        buf.extend_from_slice(&(self.n as u64).to_le_bytes());
        for &x in &self.s {
            digest::push_f64(&mut buf, x);
        }
        for a in &self.a {
            digest::push_f64(&mut buf, a.re);
            digest::push_f64(&mut buf, a.im);
        }
        digest::sha256_hex(&buf)
    }

    pub(crate) fn reduced(&self) -> &ReducedOperator {
        &self.reduced
    }

    /// Expands per-class values to per-index values.
    pub(crate) fn expand<T: Copy>(&self, per_class: &[T]) -> Vec<T> {
        self.classes.of.iter().map(|&c| per_class[c]).collect()
    }

    /// Collapses per-index values to the class representatives.
    pub(crate) fn compress<T: Copy>(&self, per_index: &[T]) -> Vec<T> {
        self.classes.rep.iter().map(|&r| per_index[r]).collect()
    }
}

/// Samples the profiles at `i/n`, `i = 1..n`.
pub fn discretize(spec: &ProfileSpec, n: usize) -> Result<DiscretizedModel> {
    let k = spec.blocks();
    let block: Vec<usize> = (1..=n)
        .map(|i| spec.partition.block_of(i as f64 / n as f64))
        .collect();
    for b in 0..k {
        if !block.contains(&b) {
            return Err(Error::BlockUnresolved { block: b, n });
        }
    }
    let inv_n = 1.0 / n as f64;
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = spec.variance[block[i]][block[j]] * inv_n;
        }
    }
    let a = block.iter().map(|&b| spec.deformation[b]).collect();
    Ok(DiscretizedModel::assemble(
        n,
        s,
        a,
        IndexClasses::from_labels(&block),
    ))
}
