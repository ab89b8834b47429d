//! Solvers for the vector Dyson equation
//!
//! ```text
//! 1/v1 = eta + S v2 + |zeta - a|^2 / (eta + S^T v1)
//! 1/v2 = eta + S^T v1 + |zeta - a|^2 / (eta + S v2)
//! ```
//!
//! and for the matrix Dyson equation with a general spectral parameter `w`,
//! whose per-index `2 x 2` blocks satisfy
//!
//! ```text
//! -M_i^{-1} = [[w + (S m2)_i, zeta - a_i], [conj(zeta - a_i), w + (S^T m1)_i]].
//! ```
//!
//! Both are solved on the class-compressed system of the model: the vector
//! equation by damped fixed-point iteration (see [`crate::fixed_point`]), the
//! matrix equation by Newton's method with the fixed-point map as fallback.

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed_point::{self, Params};
use crate::profiles::{DiscretizedModel, ReducedOperator};

/// Sanity constant `C` for the bound `<v1> (1 + eta) <= C`.
pub const MEAN_V1_SANITY_BOUND: f64 = 5.0;

/// Number of warm-start stages in the automatic continuation.
pub const AUTO_CONTINUATION_STAGES: usize = 64;
pub const AUTO_CONTINUATION_TOP: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Continuation {
    /// Cold starts go through 64 log-spaced eta values from 1e3 down to
    /// the target.
    #[default]
    Auto,
    /// No warm-start stages.
    Off,
    /// Explicit descending schedule; stages below the target are skipped.
    Schedule(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub continuation: Continuation,
    /// Anderson history length; 0 gives the plain damped iteration.
    pub anderson_depth: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
            damping: 0.5,
            continuation: Continuation::Auto,
            anderson_depth: 5,
        }
    }
}

impl SolverConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config("solver tol must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config("solver damping must lie in (0, 1]".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("solver max_iter must be positive".into()));
        }
        if let Continuation::Schedule(s) = &self.continuation {
            if s.iter().any(|e| !(*e > 0.0)) || s.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::Config(
                    "continuation schedule must be positive and strictly descending".into(),
                ));
            }
        }
        Ok(())
    }

    fn params(&self) -> Params {
        Params {
            tol: self.tol,
            max_iter: self.max_iter,
            damping: self.damping,
            depth: self.anderson_depth,
        }
    }

    fn stages(&self, eta: f64) -> Vec<f64> {
        match &self.continuation {
            Continuation::Off => Vec::new(),
            Continuation::Schedule(s) => s.iter().copied().filter(|&e| e > eta).collect(),
            Continuation::Auto => {
                if eta >= AUTO_CONTINUATION_TOP {
                    return Vec::new();
                }
                log_spaced_descending(AUTO_CONTINUATION_TOP, eta, AUTO_CONTINUATION_STAGES)
                    .into_iter()
                    .filter(|&e| e > eta)
                    .collect()
            }
        }
    }
}

/// `count` log-spaced values from `hi` down to `lo`, both ends included.
pub fn log_spaced_descending(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (lh, ll) = (hi.ln(), lo.ln());
            let mut out: Vec<f64> = (0..count)
                .map(|k| (lh + (ll - lh) * k as f64 / (count - 1) as f64).exp())
                .collect();
            out[0] = hi;
            out[count - 1] = lo;
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VdeSolution {
    pub zeta: c64,
    pub eta: f64,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl VdeSolution {
    pub fn mean_v1(&self) -> f64 {
        self.v1.iter().sum::<f64>() / self.v1.len() as f64
    }

    pub fn mean_v2(&self) -> f64 {
        self.v2.iter().sum::<f64>() / self.v2.len() as f64
    }

    /// `<v1> (1 + eta)`, which stays below [`MEAN_V1_SANITY_BOUND`].
    pub fn sanity_ratio(&self) -> f64 {
        self.mean_v1() * (1.0 + self.eta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdeSolution {
    pub zeta: c64,
    pub w: c64,
    pub m1: Vec<c64>,
    pub m2: Vec<c64>,
    /// Upper off-diagonal entries `(M_i)_12`.
    pub m12: Vec<c64>,
    /// Lower off-diagonal entries `(M_i)_21`.
    pub y: Vec<c64>,
    pub residual: f64,
    pub iterations: usize,
}

impl MdeSolution {
    /// `(2n)^-1 tr M`, the Stieltjes transform of the singular value measure.
    pub fn normalized_trace(&self) -> c64 {
        let n = self.m1.len() as f64;
        (self.m1.iter().sum::<c64>() + self.m2.iter().sum::<c64>()) / (2.0 * n)
    }
}

// ---------------------------------------------------------------------------
// Vector Dyson equation

#[inline]
fn matvec(mat: &[f64], x: &[f64], c: usize) -> f64 {
    let row = &mat[c * x.len()..(c + 1) * x.len()];
    row.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// State `[v1; v2]` on the reduced index classes.
pub(crate) struct VdeState {
    pub v: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl VdeState {
    pub fn mean_v1(&self, red: &ReducedOperator) -> f64 {
        red.weight.iter().zip(&self.v[..red.dim]).map(|(w, v)| w * v).sum()
    }
}

fn vde_eval(red: &ReducedOperator, d2: &[f64], eta: f64, x: &[f64], out: &mut [f64]) -> f64 {
    let k = red.dim;
    let (v1, v2) = x.split_at(k);
    let mut res: f64 = 0.0;
    for c in 0..k {
        let u1 = eta + matvec(&red.bwd, v1, c);
        let u2 = eta + matvec(&red.fwd, v2, c);
        let den = u1 * u2 + d2[c];
        out[c] = u1 / den;
        out[k + c] = u2 / den;
        let r1 = (v1[c] * den / u1 - 1.0).abs();
        let r2 = (v2[c] * den / u2 - 1.0).abs();
        res = res.max(r1).max(r2);
    }
    if res.is_nan() {
        f64::INFINITY
    } else {
        res
    }
}

fn solve_vde_stage(
    red: &ReducedOperator,
    d2: &[f64],
    eta: f64,
    start: Vec<f64>,
    cfg: &SolverConfig,
) -> Result<VdeState> {
    fixed_point::iterate(
        start,
        cfg.params(),
        |x, out| vde_eval(red, d2, eta, x, out),
        |x| x.iter().all(|&v| v > 0.0 && v.is_finite()),
        |y| {
            let mut hit = false;
            for v in y.iter_mut() {
                if !(*v > 0.0) {
                    *v = 1e-300;
                    hit = true;
                }
            }
            hit
        },
    )
    .map(|c| VdeState {
        v: c.x,
        residual: c.residual,
        iterations: c.iterations,
    })
    .map_err(|s| Error::NonConvergence {
        eta,
        residual: s.residual,
        iterations: s.iterations,
    })
}

/// Reduced-space solve; `init` is a reduced `[v1; v2]` warm start.
pub(crate) fn solve_vde_reduced(
    red: &ReducedOperator,
    zeta: c64,
    eta: f64,
    init: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<VdeState> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Domain(format!("eta must be positive, got {eta}")));
    }
    let d2: Vec<f64> = red.a.iter().map(|a| (zeta - a).norm_sqr()).collect();
    let k = red.dim;
    let mut start = match init {
        Some(v) => {
            assert_eq!(v.len(), 2 * k, "warm start has the wrong dimension");
            v.to_vec()
        }
        None => vec![1.0 / (1.0 + eta); 2 * k],
    };
    if init.is_none() {
        for stage in cfg.stages(eta) {
            start = solve_vde_stage(red, &d2, stage, start, cfg)
                .map_err(|e| e.at_eta(stage))?
                .v;
        }
    }
    solve_vde_stage(red, &d2, eta, start, cfg)
}

/// Solves the vector Dyson equation at `(zeta, eta)`.
pub fn solve_vde(
    model: &DiscretizedModel,
    zeta: c64,
    eta: f64,
    init: Option<&VdeSolution>,
    cfg: &SolverConfig,
) -> Result<VdeSolution> {
    cfg.check()?;
    let warm = init.map(|s| {
        let mut v = model.compress(&s.v1);
        v.extend(model.compress(&s.v2));
        v
    });
    let state = solve_vde_reduced(model.reduced(), zeta, eta, warm.as_deref(), cfg)?;
    Ok(expand_vde(model, zeta, eta, &state))
}

pub(crate) fn expand_vde(model: &DiscretizedModel, zeta: c64, eta: f64, state: &VdeState) -> VdeSolution {
    let k = model.reduced().dim;
    VdeSolution {
        zeta,
        eta,
        v1: model.expand(&state.v[..k]),
        v2: model.expand(&state.v[k..]),
        residual: state.residual,
        iterations: state.iterations,
    }
}

/// Solves along a strictly descending eta schedule, warm-starting each
/// point from the previous one.
pub fn eta_sweep(
    model: &DiscretizedModel,
    zeta: c64,
    etas: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<VdeSolution>> {
    if etas.iter().any(|e| !(*e > 0.0)) || etas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain(
            "eta schedule must be positive and strictly descending".into(),
        ));
    }
    let mut out: Vec<VdeSolution> = Vec::with_capacity(etas.len());
    for &eta in etas {
        let sol = solve_vde(model, zeta, eta, out.last(), cfg).map_err(|e| e.at_eta(eta))?;
        out.push(sol);
    }
    Ok(out)
}

/// One application of the undamped map to a solution; used to check the
/// fixed-point property.
pub fn vde_map(model: &DiscretizedModel, sol: &VdeSolution) -> (Vec<f64>, Vec<f64>) {
    let n = model.n();
    let s = model.variance_matrix();
    let a = model.deformation();
    let mut f1 = vec![0.0; n];
    let mut f2 = vec![0.0; n];
    for i in 0..n {
        let u1 = sol.eta + (0..n).map(|j| s[j * n + i] * sol.v1[j]).sum::<f64>();
        let u2 = sol.eta + (0..n).map(|j| s[i * n + j] * sol.v2[j]).sum::<f64>();
        let den = u1 * u2 + (sol.zeta - a[i]).norm_sqr();
        f1[i] = u1 / den;
        f2[i] = u2 / den;
    }
    (f1, f2)
}

// ---------------------------------------------------------------------------
// Matrix Dyson equation with general spectral parameter

struct MdeBlocks {
    b11: c64,
    b22: c64,
    z: c64,
    det: c64,
}

#[inline]
fn mde_blocks(red: &ReducedOperator, zeta: c64, w: c64, m1: &[c64], m2: &[c64], c: usize) -> MdeBlocks {
    let k = red.dim;
    let row_f = &red.fwd[c * k..(c + 1) * k];
    let row_b = &red.bwd[c * k..(c + 1) * k];
    let sigma1: c64 = row_f.iter().zip(m2).map(|(s, m)| m * s).sum();
    let sigma2: c64 = row_b.iter().zip(m1).map(|(s, m)| m * s).sum();
    let b11 = w + sigma1;
    let b22 = w + sigma2;
    let z = zeta - red.a[c];
    MdeBlocks {
        b11,
        b22,
        z,
        det: b11 * b22 - z.norm_sqr(),
    }
}

/// Max-modulus entry of `M^{-1} + B` for one block, and the max modulus of `B`.
fn block_residual(m: [c64; 4], blk: &MdeBlocks) -> (f64, f64) {
    let [m11, m12, m21, m22] = m;
    let det_m = m11 * m22 - m12 * m21;
    let scale = blk.b11.norm().max(blk.b22.norm()).max(blk.z.norm());
    if det_m.norm() == 0.0 || !det_m.is_finite() {
        return (f64::INFINITY, scale);
    }
    let inv = 1.0 / det_m;
    let r11 = m22 * inv + blk.b11;
    let r12 = -m12 * inv + blk.z;
    let r21 = -m21 * inv + blk.z.conj();
    let r22 = m11 * inv + blk.b22;
    let r = r11.norm().max(r12.norm()).max(r21.norm()).max(r22.norm());
    (if r.is_nan() { f64::INFINITY } else { r }, scale)
}

fn unpack(x: &[f64], k: usize) -> (Vec<c64>, Vec<c64>) {
    let m1 = (0..k).map(|c| c64::new(x[c], x[k + c])).collect();
    let m2 = (0..k).map(|c| c64::new(x[2 * k + c], x[3 * k + c])).collect();
    (m1, m2)
}

fn pack(m1: &[c64], m2: &[c64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(4 * m1.len());
    x.extend(m1.iter().map(|m| m.re));
    x.extend(m1.iter().map(|m| m.im));
    x.extend(m2.iter().map(|m| m.re));
    x.extend(m2.iter().map(|m| m.im));
    x
}

fn mde_eval(red: &ReducedOperator, zeta: c64, w: c64, x: &[f64], out: &mut [f64]) -> f64 {
    let k = red.dim;
    let (m1, m2) = unpack(x, k);
    let mut res: f64 = 0.0;
    for c in 0..k {
        let blk = mde_blocks(red, zeta, w, &m1, &m2, c);
        let f1 = -blk.b22 / blk.det;
        let f2 = -blk.b11 / blk.det;
        out[c] = f1.re;
        out[k + c] = f1.im;
        out[2 * k + c] = f2.re;
        out[3 * k + c] = f2.im;
        let m12 = blk.z / blk.det;
        let m21 = blk.z.conj() / blk.det;
        let (r, scale) = block_residual([m1[c], m12, m21, m2[c]], &blk);
        res = res.max(r / scale.max(1.0));
    }
    if res.is_nan() {
        f64::INFINITY
    } else {
        res
    }
}

pub(crate) struct MdeState {
    pub m1: Vec<c64>,
    pub m2: Vec<c64>,
    pub iterations: usize,
}

impl MdeState {
    pub fn normalized_trace(&self, red: &ReducedOperator) -> c64 {
        red.weight
            .iter()
            .zip(self.m1.iter().zip(&self.m2))
            .map(|(wt, (a, b))| (a + b) * (0.5 * wt))
            .sum()
    }

    pub fn packed(&self) -> Vec<f64> {
        pack(&self.m1, &self.m2)
    }
}

const NEWTON_MAX_STEPS: usize = 200;
const MDE_CONTINUATION_STAGES: usize = 24;

fn mde_admissible(x: &[f64], k: usize) -> bool {
    x.iter().all(|v| v.is_finite()) && x[k..2 * k].iter().all(|&v| v > 0.0) && x[3 * k..].iter().all(|&v| v > 0.0)
}

/// Newton's method on `F(m) - m = 0`, where `F(m) = (-B22/det, -B11/det)` is
/// holomorphic in `(m1, m2)`, with a backtracking line search on the
/// residual. `None` if the search fails or the step budget runs out.
fn mde_newton(red: &ReducedOperator, zeta: c64, w: c64, x0: Vec<f64>, tol: f64) -> Option<(Vec<f64>, usize)> {
    use faer::linalg::solvers::Solve;
    use faer::Mat;

    let k = red.dim;
    let mut scratch = vec![0.0; 4 * k];
    let mut x = x0;
    let mut r = mde_eval(red, zeta, w, &x, &mut scratch);
    let mut trial = vec![0.0; 4 * k];
    let mut polish = false;
    for it in 0..NEWTON_MAX_STEPS {
        // one extra step past the tolerance; quadratic convergence makes it cheap
        if r <= tol {
            if polish {
                return Some((x, it));
            }
            polish = true;
        }
        if !r.is_finite() {
            return None;
        }
        let (m1, m2) = unpack(&x, k);
        let mut jac = Mat::<c64>::zeros(2 * k, 2 * k);
        let mut rhs = Mat::<c64>::zeros(2 * k, 1);
        for c in 0..k {
            let blk = mde_blocks(red, zeta, w, &m1, &m2, c);
            let det2 = blk.det * blk.det;
            let cross = c64::from(blk.z.norm_sqr()) / det2;
            let d11 = blk.b22 * blk.b22 / det2;
            let d22 = blk.b11 * blk.b11 / det2;
            rhs[(c, 0)] = m1[c] + blk.b22 / blk.det;
            rhs[(k + c, 0)] = m2[c] + blk.b11 / blk.det;
            for d in 0..k {
                let sf = red.fwd[c * k + d];
                let sb = red.bwd[c * k + d];
                jac[(c, d)] += cross * sb;
                jac[(c, k + d)] += d11 * sf;
                jac[(k + c, d)] += d22 * sb;
                jac[(k + c, k + d)] += cross * sf;
            }
            jac[(c, c)] -= c64::from(1.0);
            jac[(k + c, k + c)] -= c64::from(1.0);
        }
        let delta = jac.partial_piv_lu().solve(&rhs);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            for c in 0..k {
                let d1 = delta[(c, 0)] * lambda;
                let d2 = delta[(k + c, 0)] * lambda;
                trial[c] = x[c] + d1.re;
                trial[k + c] = x[k + c] + d1.im;
                trial[2 * k + c] = x[2 * k + c] + d2.re;
                trial[3 * k + c] = x[3 * k + c] + d2.im;
            }
            if mde_admissible(&trial, k) {
                let rt = mde_eval(red, zeta, w, &trial, &mut scratch);
                if rt < r {
                    std::mem::swap(&mut x, &mut trial);
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return polish.then_some((x, it));
        }
    }
    (r <= tol).then_some((x, NEWTON_MAX_STEPS))
}

fn mde_fixed_point(red: &ReducedOperator, zeta: c64, w: c64, start: Vec<f64>, cfg: &SolverConfig) -> Result<(Vec<f64>, usize)> {
    let k = red.dim;
    let project = |x: &mut [f64]| {
        let mut hit = false;
        let (head, tail) = x.split_at_mut(2 * k);
        for v in head[k..].iter_mut().chain(tail[k..].iter_mut()) {
            if !(*v > 0.0) {
                *v = 1e-300;
                hit = true;
            }
        }
        hit
    };
    fixed_point::iterate(
        start,
        cfg.params(),
        |x, out| mde_eval(red, zeta, w, x, out),
        |x| mde_admissible(x, k),
        project,
    )
    .map(|c| (c.x, c.iterations))
    .map_err(|s| Error::NonConvergence {
        eta: w.im,
        residual: s.residual,
        iterations: s.iterations,
    })
}

/// Newton from `init` (or `m = i`); failing that, Newton along a descending
/// `Im w` path from `Im w = 1`; failing that, the damped fixed-point map.
pub(crate) fn solve_mde_reduced(
    red: &ReducedOperator,
    zeta: c64,
    w: c64,
    init: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<MdeState> {
    if !(w.im > 0.0) || !w.is_finite() {
        return Err(Error::Domain(format!("Im w must be positive, got w = {w}")));
    }
    let k = red.dim;
    let cold = pack(&vec![c64::new(0.0, 1.0); k], &vec![c64::new(0.0, 1.0); k]);
    let start = match init {
        Some(x) => {
            assert_eq!(x.len(), 4 * k, "warm start has the wrong dimension");
            x.to_vec()
        }
        None => cold.clone(),
    };

    let mut found = mde_newton(red, zeta, w, start.clone(), cfg.tol);
    if found.is_none() && w.im < 1.0 {
        let mut x = cold;
        let mut total = 0;
        let mut ok = true;
        for eta in log_spaced_descending(1.0, w.im, MDE_CONTINUATION_STAGES) {
            match mde_newton(red, zeta, c64::new(w.re, eta), x.clone(), cfg.tol) {
                Some((y, its)) => {
                    x = y;
                    total += its;
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            found = Some((x, total));
        }
    }
    let (x, iterations) = match found {
        Some(f) => f,
        None => mde_fixed_point(red, zeta, w, start, cfg)?,
    };
    let (m1, m2) = unpack(&x, k);
    Ok(MdeState { m1, m2, iterations })
}

fn expand_mde(model: &DiscretizedModel, zeta: c64, w: c64, state: &MdeState) -> MdeSolution {
    let red = model.reduced();
    let k = red.dim;
    let mut m12 = Vec::with_capacity(k);
    let mut y = Vec::with_capacity(k);
    for c in 0..k {
        let blk = mde_blocks(red, zeta, w, &state.m1, &state.m2, c);
        m12.push(blk.z / blk.det);
        y.push(blk.z.conj() / blk.det);
    }
    let mut sol = MdeSolution {
        zeta,
        w,
        m1: model.expand(&state.m1),
        m2: model.expand(&state.m2),
        m12: model.expand(&m12),
        y: model.expand(&y),
        residual: 0.0,
        iterations: state.iterations,
    };
    sol.residual = mde_residual(model, &sol);
    sol
}

/// Solves the matrix Dyson equation at `(zeta, w)`, `Im w > 0`.
pub fn solve_mde(model: &DiscretizedModel, zeta: c64, w: c64, cfg: &SolverConfig) -> Result<MdeSolution> {
    solve_mde_from(model, zeta, w, None, cfg)
}

/// [`solve_mde`] with an optional warm start.
pub fn solve_mde_from(
    model: &DiscretizedModel,
    zeta: c64,
    w: c64,
    init: Option<&MdeSolution>,
    cfg: &SolverConfig,
) -> Result<MdeSolution> {
    cfg.check()?;
    let warm = init.map(|s| pack(&model.compress(&s.m1), &model.compress(&s.m2)));
    let state = solve_mde_reduced(model.reduced(), zeta, w, warm.as_deref(), cfg)?;
    Ok(expand_mde(model, zeta, w, &state))
}

/// `sup_i max |(M_i^{-1} + W_i + Sigma[M]_i)_{ab}|`; `+inf` if some block is
/// singular.
pub fn mde_residual(model: &DiscretizedModel, sol: &MdeSolution) -> f64 {
    let n = model.n();
    let s = model.variance_matrix();
    let a = model.deformation();
    let mut res: f64 = 0.0;
    for i in 0..n {
        let sigma1: c64 = (0..n).map(|j| sol.m2[j] * s[i * n + j]).sum();
        let sigma2: c64 = (0..n).map(|j| sol.m1[j] * s[j * n + i]).sum();
        let b11 = sol.w + sigma1;
        let b22 = sol.w + sigma2;
        let z = sol.zeta - a[i];
        let blk = MdeBlocks {
            b11,
            b22,
            z,
            det: b11 * b22 - z.norm_sqr(),
        };
        let (r, _) = block_residual([sol.m1[i], sol.m12[i], sol.y[i], sol.m2[i]], &blk);
        res = res.max(r);
    }
    res
}
