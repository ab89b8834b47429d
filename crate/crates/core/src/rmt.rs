//! Finite random matrices `X + A`: sampling, spectra, Hermitization,
//! singular values, pseudospectra and the identity probes.

use std::fmt::Write as _;
use std::sync::Once;

use faer::{Mat, Side};
use num_complex::Complex64 as c64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{laplacian5, GridSpec, ScalarField};
use crate::profiles::DiscretizedModel;
use crate::rng::{draw, Distribution};

static SEQUENTIAL: Once = Once::new();

/// Dense kernels run single-threaded so results never depend on the pool.
fn sequential_kernels() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub n: usize,
    pub distribution: Distribution,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            n: 100,
            distribution: Distribution::ComplexGaussian,
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn check(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config("sample: n must be at least 2".into()));
        }
        Ok(())
    }
}

/// One realization of `X + A`.
#[derive(Debug, Clone)]
pub struct MatrixSample {
    pub matrix: Mat<c64>,
    pub model_hash: String,
    /// `None` for matrices supplied directly.
    pub config: Option<SampleConfig>,
}

impl MatrixSample {
    /// Wraps a given square matrix, e.g. a purely diagonal one.
    pub fn from_matrix(matrix: Mat<c64>, label: &str) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Domain("sample matrix must be square and nonempty".into()));
        }
        Ok(Self {
            matrix,
            model_hash: label.to_string(),
            config: None,
        })
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> c64 {
        (0..self.n()).map(|i| self.matrix[(i, i)]).sum()
    }

    /// `R - zeta`.
    pub fn shifted(&self, zeta: c64) -> Mat<c64> {
        let mut m = self.matrix.clone();
        for i in 0..self.n() {
            m[(i, i)] -= zeta;
        }
        m
    }

    /// Frobenius norm, an upper bound for the operator norm.
    pub fn norm_bound(&self) -> f64 {
        self.matrix.norm_l2()
    }
}

/// `sqrt(S_ij) xi_ij + a_i delta_ij` with entry `(i, j)` drawn from its own
/// counter-based stream.
fn assemble(model: &DiscretizedModel, diag: &[c64], dist: Distribution, seed: u64) -> Mat<c64> {
    let n = model.n();
    let rows: Vec<Vec<c64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    let s = model.variance(i, j);
                    let mut x = if s > 0.0 {
                        draw(dist, seed, i, j) * s.sqrt()
                    } else {
                        c64::new(0.0, 0.0)
                    };
                    if i == j {
                        x += diag[i];
                    }
                    x
                })
                .collect()
        })
        .collect();
    Mat::from_fn(n, n, |i, j| rows[i][j])
}

pub fn sample(model: &DiscretizedModel, cfg: &SampleConfig) -> Result<MatrixSample> {
    cfg.check()?;
    if model.n() != cfg.n {
        return Err(Error::Domain(format!(
            "sample size {} does not match the model dimension {}",
            cfg.n,
            model.n()
        )));
    }
    Ok(MatrixSample {
        matrix: assemble(model, model.deformation(), cfg.distribution, cfg.seed),
        model_hash: model.digest(),
        config: Some(*cfg),
    })
}

/// Eigenvalues of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Esd {
    pub eigenvalues: Vec<c64>,
    pub model_hash: String,
    pub seed: Option<u64>,
}

impl Esd {
    /// CSV with header `re_lambda,im_lambda`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("re_lambda,im_lambda\n");
        for z in &self.eigenvalues {
            let _ = writeln!(s, "{},{}", z.re, z.im);
        }
        s
    }
}

/// Dense nonsymmetric eigenvalues, checked against the trace.
pub fn eigenvalues(sample: &MatrixSample) -> Result<Esd> {
    sequential_kernels();
    let n = sample.n();
    if !(0..n).all(|i| (0..n).all(|j| sample.matrix[(i, j)].is_finite())) {
        return Err(Error::NumericalFailure("sample has non-finite entries".into()));
    }
    let eig = sample
        .matrix
        .eigenvalues()
        .map_err(|e| Error::NumericalFailure(format!("eigensolver failed: {e:?}")))?;
    let tr = sample.trace();
    let sum: c64 = eig.iter().sum();
    let tol = 1e-8 * n as f64 * tr.norm().max(sample.norm_bound() / (n as f64).sqrt()).max(1.0);
    if eig.len() != n || (sum - tr).norm() > tol {
        return Err(Error::NumericalFailure(format!(
            "eigenvalue sum {sum} misses the trace {tr}"
        )));
    }
    Ok(Esd {
        eigenvalues: eig,
        model_hash: sample.model_hash.clone(),
        seed: sample.config.map(|c| c.seed),
    })
}

/// `H_zeta = [[0, R - zeta], [(R - zeta)^*, 0]]`.
pub fn hermitize(sample: &MatrixSample, zeta: c64) -> Mat<c64> {
    let n = sample.n();
    let r = sample.shifted(zeta);
    Mat::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, false) => r[(i, j - n)],
        (false, true) => r[(j, i - n)].conj(),
        _ => c64::new(0.0, 0.0),
    })
}

/// Eigenvalues of `H_zeta` in ascending order.
pub fn hermitized_spectrum(sample: &MatrixSample, zeta: c64) -> Result<Vec<f64>> {
    sequential_kernels();
    let mut ev = hermitize(sample, zeta)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::NumericalFailure(format!("Hermitian eigensolver failed: {e:?}")))?;
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Singular values of `R - zeta` in descending order.
pub fn singular_values(sample: &MatrixSample, zeta: c64) -> Result<Vec<f64>> {
    sequential_kernels();
    let mut sv = sample
        .shifted(zeta)
        .singular_values()
        .map_err(|e| Error::NumericalFailure(format!("SVD failed: {e:?}")))?;
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Smallest singular value of `R - zeta`.
pub fn smin(sample: &MatrixSample, zeta: c64) -> Result<f64> {
    Ok(*singular_values(sample, zeta)?.last().unwrap())
}

/// `sigma_min(R - zeta)` on the grid and one mask `sigma_min <= eps` per
/// entry of `eps`; failed nodes are outside every mask.
pub fn pseudospectrum_grid(
    sample: &MatrixSample,
    grid: &GridSpec,
    eps: &[f64],
) -> Result<(ScalarField, Vec<Vec<bool>>)> {
    grid.check()?;
    if eps.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::Domain("eps values must be nonnegative".into()));
    }
    let res: Vec<Result<f64>> = grid.nodes().into_par_iter().map(|z| smin(sample, z)).collect();
    let mut values = Vec::with_capacity(res.len());
    let mut ok = Vec::with_capacity(res.len());
    for r in res {
        match r {
            Ok(v) => {
                values.push(v);
                ok.push(true);
            }
            Err(e) => {
                log::warn!("pseudospectrum node failed: {e}");
                values.push(f64::NAN);
                ok.push(false);
            }
        }
    }
    let masks = eps
        .iter()
        .map(|&e| values.iter().zip(&ok).map(|(v, o)| *o && *v <= e).collect())
        .collect();
    let field = ScalarField::new(*grid, values, ok, "smin", &sample.model_hash)?;
    Ok((field, masks))
}

// ---------------------------------------------------------------------------
// probes

/// JSON record of one probe run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub probe: String,
    pub inputs: serde_json::Value,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ProbeReport {
    pub fn new(probe: &str, inputs: serde_json::Value, value: f64, tolerance: f64) -> Self {
        Self {
            probe: probe.to_string(),
            inputs,
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogdetQuadrature {
    pub nodes: usize,
    /// Lower end of the log-spaced nodes; `(0, eta_lo)` is dropped.
    pub eta_lo: f64,
}

impl Default for LogdetQuadrature {
    fn default() -> Self {
        Self {
            nodes: 2000,
            eta_lo: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogdetOutcome {
    pub lhs: f64,
    pub rhs: f64,
    pub relative_error: f64,
}

/// Both sides of `log|det H| = -sum_k int_0^T eta/(lambda_k^2 + eta^2) d eta
/// + sum_k log|lambda_k - iT|` from an eigenvalue list: the left side
/// directly, the integral by the end-corrected trapezoid rule in `log eta`.
pub fn logdet_identity_from_eigs(eigs: &[f64], big_t: f64, quad: &LogdetQuadrature) -> Result<LogdetOutcome> {
    if !(big_t > quad.eta_lo) || quad.nodes < 2 || !(quad.eta_lo > 0.0) {
        return Err(Error::Domain("log-det quadrature needs 0 < eta_lo < T and 2 nodes".into()));
    }
    if eigs.iter().any(|l| *l == 0.0 || !l.is_finite()) {
        return Err(Error::Domain("H_zeta is singular".into()));
    }
    let lhs: f64 = eigs.iter().map(|l| l.abs().ln()).sum();
    let (a, b) = (quad.eta_lo.ln(), big_t.ln());
    let dt = (b - a) / (quad.nodes - 1) as f64;
    // integrand in t = log eta: sum_k eta^2 / (lambda_k^2 + eta^2)
    let g = |t: f64| {
        let e2 = (2.0 * t).exp();
        eigs.iter().map(|l| e2 / (l * l + e2)).sum::<f64>()
    };
    let dg = |t: f64| {
        let e2 = (2.0 * t).exp();
        eigs.iter().map(|l| 2.0 * l * l * e2 / ((l * l + e2) * (l * l + e2))).sum::<f64>()
    };
    let mut integral = 0.5 * (g(a) + g(b));
    for k in 1..quad.nodes - 1 {
        integral += g(a + k as f64 * dt);
    }
    // trapezoid with the first Euler-Maclaurin end correction
    integral = integral * dt - dt * dt / 12.0 * (dg(b) - dg(a));
    let far: f64 = eigs.iter().map(|l| 0.5 * (l * l + big_t * big_t).ln()).sum();
    let rhs = -integral + far;
    Ok(LogdetOutcome {
        lhs,
        rhs,
        relative_error: (lhs - rhs).abs() / lhs.abs().max(1.0),
    })
}

pub fn logdet_identity_probe(
    sample: &MatrixSample,
    zeta: c64,
    big_t: f64,
    quad: &LogdetQuadrature,
) -> Result<LogdetOutcome> {
    logdet_identity_from_eigs(&hermitized_spectrum(sample, zeta)?, big_t, quad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GirkoOutcome {
    /// `(1/n) sum_k f(lambda_k)`
    pub lhs: f64,
    /// `(1/4 pi n) sum_nodes h^2 Delta_h f log|det H_zeta|`
    pub rhs: f64,
    pub abs_error: f64,
    /// `abs_error / |lhs|`, or `abs_error` when `lhs` vanishes.
    pub relative_error: f64,
}

/// Girko's identity with `f` sampled on `grid`. `f` must vanish on the two
/// outermost rings of nodes.
pub fn girko_probe<F>(sample: &MatrixSample, f: F, grid: &GridSpec) -> Result<GirkoOutcome>
where
    F: Fn(c64) -> f64 + Sync,
{
    grid.check()?;
    let (nx, ny) = (grid.nx(), grid.ny());
    if nx < 7 || ny < 7 {
        return Err(Error::Domain("girko_probe needs at least 7 nodes per axis".into()));
    }
    let nodes = grid.nodes();
    let fv: Vec<f64> = nodes.iter().map(|z| f(*z)).collect();
    for (idx, v) in fv.iter().enumerate() {
        let (ix, iy) = grid.coords(idx);
        let band = ix < 2 || iy < 2 || ix + 2 >= nx || iy + 2 >= ny;
        if band && *v != 0.0 {
            return Err(Error::Domain(
                "test function does not vanish within two cells of the grid boundary".into(),
            ));
        }
    }
    let (lap, valid) = laplacian5(grid, &fv, &vec![true; fv.len()]);
    let active: Vec<usize> = (0..fv.len()).filter(|&i| valid[i] && lap[i] != 0.0).collect();
    let n = sample.n() as f64;
    let terms: Vec<Result<f64>> = active
        .par_iter()
        .map(|&i| {
            let sv = singular_values(sample, nodes[i])?;
            let logdet: f64 = 2.0 * sv.iter().map(|s| s.ln()).sum::<f64>();
            Ok(lap[i] * logdet)
        })
        .collect();
    let mut acc = 0.0;
    for t in terms {
        acc += t?;
    }
    let rhs = acc * grid.h * grid.h / (4.0 * std::f64::consts::PI * n);
    let esd = eigenvalues(sample)?;
    let lhs = esd.eigenvalues.iter().map(|z| f(*z)).sum::<f64>() / n;
    let abs_error = (lhs - rhs).abs();
    let relative_error = if lhs.abs() > 1e-12 { abs_error / lhs.abs() } else { abs_error };
    Ok(GirkoOutcome {
        lhs,
        rhs,
        abs_error,
        relative_error,
    })
}

/// `exp(1 - 1/(1 - |zeta - c|^2 / r^2))` inside the disk, 0 outside.
pub fn smooth_bump(center: c64, radius: f64) -> impl Fn(c64) -> f64 + Sync + Copy {
    move |z: c64| {
        let q = (z - center).norm_sqr() / (radius * radius);
        if q < 1.0 {
            (1.0 - 1.0 / (1.0 - q)).exp()
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallSvCount {
    pub count: usize,
    /// `count / (n eta)`
    pub ratio: f64,
}

/// Number of eigenvalues of `H_zeta` in `[-eta, eta]`.
pub fn small_sv_count(sample: &MatrixSample, zeta: c64, eta: f64) -> Result<SmallSvCount> {
    if !(eta > 0.0) {
        return Err(Error::Domain(format!("eta must be positive, got {eta}")));
    }
    let ev = hermitized_spectrum(sample, zeta)?;
    let count = ev.iter().filter(|l| l.abs() <= eta).count();
    Ok(SmallSvCount {
        count,
        ratio: count as f64 / (sample.n() as f64 * eta),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionOutcome {
    pub trials: usize,
    pub threshold: f64,
    pub hits: usize,
    pub frequency: f64,
    /// Half-width of the 95% Wilson interval.
    pub radius: f64,
}

/// Frequency of `sigma_min(X + Z) <= n^{-1/2 - beta}` over `trials` samples
/// with seeds `seed, seed + 1, ...`, where `X` follows the model's variance
/// profile and `Z = diag(z_diag)` replaces its deformation.
pub fn smin_assumption_probe(
    model: &DiscretizedModel,
    z_diag: &[c64],
    trials: usize,
    beta: f64,
    distribution: Distribution,
    seed: u64,
) -> Result<AssumptionOutcome> {
    let n = model.n();
    if trials == 0 {
        return Err(Error::Domain("smin_assumption_probe needs at least one trial".into()));
    }
    if z_diag.len() != n || z_diag.iter().any(|z| !z.is_finite()) {
        return Err(Error::Domain(format!("z_diag must hold {n} finite values")));
    }
    let threshold = (n as f64).powf(-0.5 - beta);
    let hits: Result<Vec<bool>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let s = MatrixSample {
                matrix: assemble(model, z_diag, distribution, seed.wrapping_add(t)),
                model_hash: model.digest(),
                config: None,
            };
            Ok(smin(&s, c64::new(0.0, 0.0))? <= threshold)
        })
        .collect();
    let hits = hits?.iter().filter(|h| **h).count();
    let p = hits as f64 / trials as f64;
    let zq: f64 = 1.959_963_984_540_054;
    let m = trials as f64;
    let denom = 1.0 + zq * zq / m;
    let radius = zq * (p * (1.0 - p) / m + zq * zq / (4.0 * m * m)).sqrt() / denom;
    Ok(AssumptionOutcome {
        trials,
        threshold,
        hits,
        frequency: p,
        radius,
    })
}
