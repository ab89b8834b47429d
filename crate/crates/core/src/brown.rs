//! Log-potential `L(zeta) = int_0^inf (<v1(zeta, eta)> - 1/(1+eta)) d eta`
//! and the density `sigma = -(1/2 pi) Delta L` of the limiting spectral
//! measure.

use log::warn;
use num_complex::Complex64 as c64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyson::{self, log_spaced_descending, SolverConfig, MEAN_V1_SANITY_BOUND};
use crate::error::{Error, Result};
use crate::grid::{laplacian5, GridSpec, ScalarField};
use crate::profiles::DiscretizedModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TailMode {
    /// Drop the integral beyond `t_split` and report `(1 + |zeta|)/t_split`
    /// as its error.
    BoundCheck,
    /// Fit `c2/eta^2 + c3/eta^3` at the last two nodes and add its integral.
    #[default]
    Extrapolate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub t_split: f64,
    pub nodes: usize,
    pub eta_min: f64,
    pub tail_mode: TailMode,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            t_split: 1e3,
            nodes: 256,
            eta_min: 1e-6,
            tail_mode: TailMode::Extrapolate,
        }
    }
}

impl QuadratureConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.eta_min > 0.0 && self.eta_min < self.t_split && self.t_split.is_finite()) {
            return Err(Error::Config(
                "quadrature needs 0 < eta_min < t_split".into(),
            ));
        }
        if self.nodes < 16 {
            return Err(Error::Config("quadrature needs at least 16 nodes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogPotential {
    pub zeta: c64,
    pub value: f64,
    /// Sum of the trapezoid (Richardson), near-zero and tail error estimates.
    pub error_estimate: f64,
    /// Contribution of `(t_split, inf)`.
    pub tail: f64,
    pub max_residual: f64,
    /// `max_eta <v1> (1 + eta)` over the nodes.
    pub sanity_ratio: f64,
}

fn trapezoid(t: &[f64], g: &[f64]) -> f64 {
    t.windows(2)
        .zip(g.windows(2))
        .map(|(tw, gw)| (tw[0] - tw[1]).abs() * 0.5 * (gw[0] + gw[1]))
        .sum()
}

/// Log-potential at `zeta` by trapezoidal quadrature in `ln eta` over
/// log-spaced nodes on `[eta_min, t_split]`, solved from the top node down
/// with warm starts.
pub fn compute_l(
    model: &DiscretizedModel,
    zeta: c64,
    quad: &QuadratureConfig,
    cfg: &SolverConfig,
) -> Result<LogPotential> {
    quad.check()?;
    cfg.check()?;
    let red = model.reduced();
    let etas = log_spaced_descending(quad.t_split, quad.eta_min, quad.nodes);

    let mut f = Vec::with_capacity(etas.len());
    let mut state: Option<Vec<f64>> = None;
    let mut max_residual: f64 = 0.0;
    let mut sanity: f64 = 0.0;
    let mut head_v1 = 0.0;
    for &eta in &etas {
        let st = dyson::solve_vde_reduced(red, zeta, eta, state.as_deref(), cfg)
            .map_err(|e| e.at_eta(eta))?;
        let mean = st.mean_v1(red);
        max_residual = max_residual.max(st.residual);
        sanity = sanity.max(mean * (1.0 + eta));
        f.push(mean - 1.0 / (1.0 + eta));
        head_v1 = mean;
        state = Some(st.v);
    }
    if sanity > MEAN_V1_SANITY_BOUND {
        warn!("<v1>(1+eta) reached {sanity} at zeta = {zeta}, above the sanity bound");
    }

    // Integrand in t = ln(eta) is eta * f(eta).
    let t: Vec<f64> = etas.iter().map(|e| e.ln()).collect();
    let g: Vec<f64> = etas.iter().zip(&f).map(|(e, v)| e * v).collect();
    let fine = trapezoid(&t, &g);
    let last = t.len() - 1;
    let mut coarse_idx: Vec<usize> = (0..=last).step_by(2).collect();
    let coarse_end = *coarse_idx.last().unwrap();
    let coarse = {
        let tc: Vec<f64> = coarse_idx.iter().map(|&i| t[i]).collect();
        let gc: Vec<f64> = coarse_idx.iter().map(|&i| g[i]).collect();
        trapezoid(&tc, &gc) + trapezoid(&t[coarse_end..], &g[coarse_end..])
    };
    coarse_idx.clear();
    let richardson = (fine - coarse).abs() / 3.0;

    let eta_min = quad.eta_min;
    let head = head_v1 * eta_min - eta_min.ln_1p();
    let head_err = eta_min * MEAN_V1_SANITY_BOUND;

    let big = quad.t_split;
    let (tail, tail_err) = match quad.tail_mode {
        TailMode::BoundCheck => (0.0, (1.0 + zeta.norm()) / big),
        TailMode::Extrapolate => {
            let (e0, e1) = (etas[0], etas[1]);
            let (f0, f1) = (f[0], f[1]);
            // f = c2/eta^2 + c3/eta^3 through (e0, f0), (e1, f1)
            let det = 1.0 / (e0 * e0 * e1 * e1 * e1) - 1.0 / (e1 * e1 * e0 * e0 * e0);
            let c2 = (f0 / (e1 * e1 * e1) - f1 / (e0 * e0 * e0)) / det;
            let c3 = (f1 / (e0 * e0) - f0 / (e1 * e1)) / det;
            let tail = c2 / big + c3 / (2.0 * big * big);
            (tail, (c3 / (2.0 * big * big)).abs() + 1e-3 * tail.abs())
        }
    };

    Ok(LogPotential {
        zeta,
        value: head + fine + tail,
        error_estimate: richardson + head_err + tail_err,
        tail,
        max_residual,
        sanity_ratio: sanity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct FieldStats {
    pub max_residual: f64,
    pub max_error_estimate: f64,
    pub failures: usize,
}

/// `L` on every grid node; failed nodes are flagged, not fatal.
pub fn potential_field(
    model: &DiscretizedModel,
    grid: &GridSpec,
    quad: &QuadratureConfig,
    cfg: &SolverConfig,
) -> Result<(ScalarField, FieldStats)> {
    grid.check()?;
    quad.check()?;
    cfg.check()?;
    let results: Vec<Result<LogPotential>> = grid
        .nodes()
        .into_par_iter()
        .map(|z| compute_l(model, z, quad, cfg))
        .collect();
    let mut stats = FieldStats::default();
    let mut values = Vec::with_capacity(results.len());
    let mut ok = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(lp) => {
                stats.max_residual = stats.max_residual.max(lp.max_residual);
                stats.max_error_estimate = stats.max_error_estimate.max(lp.error_estimate);
                values.push(lp.value);
                ok.push(true);
            }
            Err(e) => {
                warn!("log-potential node failed: {e}");
                stats.failures += 1;
                values.push(f64::NAN);
                ok.push(false);
            }
        }
    }
    let field = ScalarField::new(*grid, values, ok, "L", &model.digest())?;
    Ok((field, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub field: ScalarField,
    /// Nodes whose small negative value was set to zero.
    pub clamped: usize,
    /// Nodes left negative below `-tol_density`.
    pub negative: Vec<usize>,
    pub tol_density: f64,
}

/// `sigma = -(1/2 pi) Delta_h L` with the five-point stencil. Boundary nodes
/// are flagged missing; values in `[-tol_density, 0)` are clamped to zero,
/// where `tol_density = 1e-3 max sigma`.
pub fn density_from_l(field: &ScalarField) -> Result<DensityField> {
    field.grid.check()?;
    if field.grid.nx() < 3 || field.grid.ny() < 3 {
        return Err(Error::Domain(
            "density needs at least 3 nodes per axis".into(),
        ));
    }
    let (lap, valid) = laplacian5(&field.grid, &field.values, &field.ok);
    let scale = -1.0 / (2.0 * std::f64::consts::PI);
    let mut values: Vec<f64> = lap.iter().map(|l| scale * l).collect();
    let max = values
        .iter()
        .zip(&valid)
        .filter(|(_, v)| **v)
        .map(|(x, _)| *x)
        .fold(0.0, f64::max);
    let tol_density = 1e-3 * max;
    let mut clamped = 0;
    let mut negative = Vec::new();
    for (i, x) in values.iter_mut().enumerate() {
        if !valid[i] {
            continue;
        }
        if *x < 0.0 {
            if *x >= -tol_density {
                *x = 0.0;
                clamped += 1;
            } else {
                negative.push(i);
            }
        }
    }
    if !negative.is_empty() {
        warn!(
            "{} density nodes below -{tol_density:e} were kept negative",
            negative.len()
        );
    }
    let out = ScalarField::new(field.grid, values, valid, "sigma", &field.model_hash)?;
    Ok(DensityField {
        field: out,
        clamped,
        negative,
        tol_density,
    })
}

/// `h^2` times the sum over valid nodes.
pub fn total_mass(density: &ScalarField) -> f64 {
    let h2 = density.grid.h * density.grid.h;
    density
        .values
        .iter()
        .zip(&density.ok)
        .filter(|(_, ok)| **ok)
        .map(|(v, _)| v)
        .sum::<f64>()
        * h2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{discretize, ProfileSpec};

    fn circular() -> DiscretizedModel {
        discretize(&ProfileSpec::constant(1.0, c64::new(0.0, 0.0)).unwrap(), 10).unwrap()
    }

    /// Log-potential of the uniform measure on the unit disk.
    fn disk_potential(z: c64) -> f64 {
        let r = z.norm();
        if r < 1.0 {
            (1.0 - r * r) / 2.0
        } else {
            -r.ln()
        }
    }

    /// Closed form of the circular-case integral:
    /// int_0^T (sqrt(e^2+4)-e)/2 - 1/(1+e) de, antiderivative
    /// (e sqrt(e^2+4) + 4 asinh(e/2) - e^2)/4 - ln(1+e).
    fn circular_origin_closed_form(big: f64) -> f64 {
        let anti = |e: f64| (4.0 * e / ((e * e + 4.0).sqrt() + e) + 4.0 * (e / 2.0).asinh()) / 4.0 - e.ln_1p();
        anti(big) - anti(0.0)
    }

    #[test]
    fn closed_form_oracle_agrees_with_disk_potential() {
        // the integral up to 1e8 is within 1e-8 of the full value
        assert!((circular_origin_closed_form(1e8) - 0.5).abs() < 1e-7);
    }

    #[test]
    fn circular_l_values() {
        let m = circular();
        let quad = QuadratureConfig::default();
        let cfg = SolverConfig::default();
        for (z, tol) in [
            (c64::new(0.0, 0.0), 1e-3),
            (c64::new(2.0, 0.0), 1e-3),
            (c64::new(0.0, 1.0), 2e-3),
        ] {
            let lp = compute_l(&m, z, &quad, &cfg).unwrap();
            let exact = disk_potential(z);
            assert!((lp.value - exact).abs() <= tol, "L({z}) = {} vs {exact}", lp.value);
            assert!(
                lp.error_estimate >= (lp.value - exact).abs(),
                "estimate {} below observed {}",
                lp.error_estimate,
                (lp.value - exact).abs()
            );
        }
    }

    #[test]
    fn bound_check_tail_stays_within_its_bound() {
        let m = circular();
        let quad = QuadratureConfig {
            tail_mode: TailMode::BoundCheck,
            ..QuadratureConfig::default()
        };
        let lp = compute_l(&m, c64::new(0.0, 0.0), &quad, &SolverConfig::default()).unwrap();
        assert_eq!(lp.tail, 0.0);
        assert!((lp.value - 0.5).abs() <= (1.0 + 0.0) / quad.t_split + 1e-4);
    }

    #[test]
    fn extrapolated_tail_obeys_lemma_bound() {
        let m = circular();
        let quad = QuadratureConfig::default();
        for z in [c64::new(0.0, 0.0), c64::new(1.5, -0.5), c64::new(3.0, 0.0)] {
            let lp = compute_l(&m, z, &quad, &SolverConfig::default()).unwrap();
            assert!(lp.tail.abs() <= 2.0 * (1.0 + z.norm()) / quad.t_split);
        }
    }

    #[test]
    fn small_field_center_and_symmetry() {
        let m = circular();
        let grid = GridSpec::new(-0.1, 0.1, -0.1, 0.1, 0.1).unwrap();
        let (field, stats) = potential_field(&m, &grid, &QuadratureConfig::default(), &SolverConfig::default()).unwrap();
        assert_eq!(stats.failures, 0);
        assert!((field.get(1, 1).unwrap() - 0.5).abs() < 1e-3);
        for ix in 0..3 {
            let a = field.get(ix, 0).unwrap();
            let b = field.get(ix, 2).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn exterior_values_decrease_with_modulus() {
        let m = circular();
        let mut last = f64::INFINITY;
        for r in [3.5, 4.0, 5.0, 7.0] {
            let lp = compute_l(&m, c64::new(0.0, r), &QuadratureConfig::default(), &SolverConfig::default()).unwrap();
            assert!((lp.value + f64::ln(r)).abs() < 1e-3);
            assert!(lp.value < last);
            last = lp.value;
        }
    }

    #[test]
    fn density_of_exact_disk_potential() {
        let grid = GridSpec::square(1.5, 0.02).unwrap();
        let values: Vec<f64> = grid.nodes().iter().map(|z| disk_potential(*z)).collect();
        let ok = vec![true; values.len()];
        let field = ScalarField::new(grid, values, ok, "L", "exact").unwrap();
        let dens = density_from_l(&field).unwrap();
        let inv_pi = 1.0 / std::f64::consts::PI;
        for (i, z) in grid.nodes().iter().enumerate() {
            if !dens.field.ok[i] {
                continue;
            }
            let v = dens.field.values[i];
            if z.norm() < 0.95 {
                assert!((v - inv_pi).abs() < 1e-8);
            } else if z.norm() > 1.05 {
                assert!(v.abs() < 1e-3);
            }
        }
        assert!((total_mass(&dens.field) - 1.0).abs() < 0.02);
    }

    #[test]
    fn constant_field_has_zero_density_and_mass() {
        let grid = GridSpec::square(1.0, 0.25).unwrap();
        let field = ScalarField::new(grid, vec![3.0; grid.len()], vec![true; grid.len()], "L", "c").unwrap();
        let dens = density_from_l(&field).unwrap();
        assert!(dens.field.values.iter().zip(&dens.field.ok).filter(|(_, o)| **o).all(|(v, _)| *v == 0.0));
        assert_eq!(total_mass(&dens.field), 0.0);
    }

    #[test]
    fn mass_is_linear() {
        let grid = GridSpec::square(1.0, 0.25).unwrap();
        let vals: Vec<f64> = grid.nodes().iter().map(|z| z.norm()).collect();
        let field = ScalarField::new(grid, vals, vec![true; grid.len()], "sigma", "c").unwrap();
        assert!((total_mass(&field.scaled(2.0)) - 2.0 * total_mass(&field)).abs() < 1e-12);
    }

    #[test]
    fn thin_grid_is_domain_error() {
        let grid = GridSpec::new(0.0, 1.0, 0.0, 0.0, 0.5).unwrap();
        let field = ScalarField::new(grid, vec![0.0; 3], vec![true; 3], "L", "x").unwrap();
        assert!(matches!(density_from_l(&field), Err(Error::Domain(_))));
    }
}
