//! Singular value densities `rho_zeta` by Stieltjes inversion of the matrix
//! Dyson equation, the distance `dist(0, supp rho_zeta)`, the sets
//! `S_eps = {zeta : dist <= eps}`, and closed-form support oracles.

use log::warn;
use num_complex::Complex64 as c64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brown::FieldStats;
use crate::dyson::{self, SolverConfig};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};
use crate::profiles::{reduced_variance_matrix, spectral_radius, DiscretizedModel, ProfileSpec, ReducedOperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupportConfig {
    pub eta_probe: f64,
    pub density_threshold: f64,
    /// Upper end of the `tau` scan; `None` means
    /// `|a|_inf + 2 sqrt(|S|) + |zeta| + 1`.
    pub tau_max: Option<f64>,
    pub tau_nodes: usize,
    pub bisect_tol: f64,
}

impl Default for SupportConfig {
    fn default() -> Self {
        Self {
            eta_probe: 1e-4,
            density_threshold: 1e-2,
            tau_max: None,
            tau_nodes: 512,
            bisect_tol: 1e-4,
        }
    }
}

impl SupportConfig {
    pub fn check(&self) -> Result<()> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !pos(self.eta_probe) || !pos(self.density_threshold) || !pos(self.bisect_tol) {
            return Err(Error::Config(
                "support: eta_probe, density_threshold and bisect_tol must be positive".into(),
            ));
        }
        if self.tau_nodes < 2 {
            return Err(Error::Config("support: tau_nodes must be at least 2".into()));
        }
        if let Some(t) = self.tau_max {
            if !pos(t) || self.bisect_tol >= t {
                return Err(Error::Config(
                    "support: need 0 < bisect_tol < tau_max".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn tau_max_for(&self, model: &DiscretizedModel, zeta: c64) -> f64 {
        self.tau_max.unwrap_or_else(|| {
            let red = model.reduced();
            let k = red.dim;
            let row = (0..k).map(|c| red.fwd[c * k..(c + 1) * k].iter().sum::<f64>());
            let col = (0..k).map(|c| red.bwd[c * k..(c + 1) * k].iter().sum::<f64>());
            let norm = row.chain(col).fold(0.0, f64::max);
            model.deformation_sup() + 2.0 * norm.sqrt() + zeta.norm() + 1.0
        })
    }
}

/// Solves the reduced MDE at `tau + i eta_probe`.
fn probe(
    red: &ReducedOperator,
    zeta: c64,
    tau: f64,
    sup: &SupportConfig,
    init: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<(f64, Vec<f64>)> {
    let state = dyson::solve_mde_reduced(red, zeta, c64::new(tau, sup.eta_probe), init, cfg)
        .map_err(|e| e.at_eta(sup.eta_probe))?;
    let rho = state.normalized_trace(red).im / std::f64::consts::PI;
    Ok((rho.max(0.0), state.packed()))
}

/// `(1/pi) Im (2n)^{-1} tr M(zeta, tau + i eta_probe)`.
pub fn rho_density(
    model: &DiscretizedModel,
    zeta: c64,
    tau: f64,
    sup: &SupportConfig,
    cfg: &SolverConfig,
) -> Result<f64> {
    sup.check()?;
    cfg.check()?;
    if !tau.is_finite() {
        return Err(Error::Domain(format!("tau must be finite, got {tau}")));
    }
    Ok(probe(model.reduced(), zeta, tau, sup, None, cfg)?.0)
}

/// `rho_density` on a list of `tau` values, warm-started along the list.
pub fn rho_curve(
    model: &DiscretizedModel,
    zeta: c64,
    taus: &[f64],
    sup: &SupportConfig,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    sup.check()?;
    cfg.check()?;
    let red = model.reduced();
    let mut out = Vec::with_capacity(taus.len());
    let mut warm: Option<Vec<f64>> = None;
    for &tau in taus {
        let (rho, x) = match probe(red, zeta, tau, sup, warm.as_deref(), cfg) {
            Ok(r) => r,
            // a warm start across an edge can stall; retry cold
            Err(e) if e.is_numerical() && warm.is_some() => probe(red, zeta, tau, sup, None, cfg)?,
            Err(e) => return Err(e),
        };
        out.push(rho);
        warm = Some(x);
    }
    Ok(out)
}

/// `dist(0, supp rho_zeta)`: scan `[0, tau_max]` for the first node with
/// density above the threshold, then bisect. Returns `tau_max` if the scan
/// finds nothing.
pub fn dist_zero_support(
    model: &DiscretizedModel,
    zeta: c64,
    sup: &SupportConfig,
    cfg: &SolverConfig,
) -> Result<f64> {
    sup.check()?;
    cfg.check()?;
    let red = model.reduced();
    let thr = sup.density_threshold;
    let tau_max = sup.tau_max_for(model, zeta);

    let eval = |tau: f64, warm: Option<&[f64]>| -> Result<(f64, Vec<f64>)> {
        match probe(red, zeta, tau, sup, warm, cfg) {
            Err(e) if e.is_numerical() && warm.is_some() => probe(red, zeta, tau, sup, None, cfg),
            r => r,
        }
    };

    let (rho0, mut warm) = eval(0.0, None)?;
    if rho0 > thr {
        return Ok(0.0);
    }
    let step = tau_max / (sup.tau_nodes - 1) as f64;
    let mut lo = 0.0;
    for k in 1..sup.tau_nodes {
        let tau = k as f64 * step;
        let (rho, x) = eval(tau, Some(&warm))?;
        if rho > thr {
            let mut hi = tau;
            while hi - lo > sup.bisect_tol {
                let mid = 0.5 * (lo + hi);
                let (r, x) = eval(mid, Some(&warm))?;
                if r > thr {
                    hi = mid;
                } else {
                    lo = mid;
                    warm = x;
                }
            }
            return Ok(0.5 * (lo + hi));
        }
        lo = tau;
        warm = x;
    }
    Ok(tau_max)
}

/// `dist(0, supp rho_zeta)` on every grid node; failures are masked.
pub fn dist_field(
    model: &DiscretizedModel,
    grid: &GridSpec,
    sup: &SupportConfig,
    cfg: &SolverConfig,
) -> Result<(ScalarField, FieldStats)> {
    grid.check()?;
    sup.check()?;
    cfg.check()?;
    let results: Vec<Result<f64>> = grid
        .nodes()
        .into_par_iter()
        .map(|z| dist_zero_support(model, z, sup, cfg))
        .collect();
    let mut stats = FieldStats::default();
    let mut values = Vec::with_capacity(results.len());
    let mut ok = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(d) => {
                values.push(d);
                ok.push(true);
            }
            Err(e) => {
                warn!("support node failed: {e}");
                stats.failures += 1;
                values.push(f64::NAN);
                ok.push(false);
            }
        }
    }
    let field = ScalarField::new(*grid, values, ok, "dist0", &model.digest())?;
    Ok((field, stats))
}

/// Membership mask `dist <= eps` of a `dist0` field; failed nodes are out.
pub fn s_eps_mask(dist: &ScalarField, eps: f64) -> Vec<bool> {
    dist.values
        .iter()
        .zip(&dist.ok)
        .map(|(d, ok)| *ok && *d <= eps)
        .collect()
}

/// The `dist0` field on `grid` together with its `S_eps` mask.
pub fn region_s_eps(
    model: &DiscretizedModel,
    grid: &GridSpec,
    eps: f64,
    sup: &SupportConfig,
    cfg: &SolverConfig,
) -> Result<(ScalarField, Vec<bool>)> {
    if !(eps >= 0.0) {
        return Err(Error::Domain(format!("eps must be nonnegative, got {eps}")));
    }
    let (field, _) = dist_field(model, grid, sup, cfg)?;
    let mask = s_eps_mask(&field, eps);
    Ok((field, mask))
}

/// Support membership for `s == t`: `int_0^1 dx / |a(x) - zeta|^2 >= 1/t`.
/// A point of the image of `a` counts as a member.
pub fn support_oracle_iid(spec: &ProfileSpec, t: f64, zeta: c64) -> bool {
    let mut integral = 0.0;
    for (k, a) in spec.deformation.iter().enumerate() {
        let d2 = (a - zeta).norm_sqr();
        if d2 == 0.0 {
            return true;
        }
        integral += spec.partition.length(k) / d2;
    }
    integral >= 1.0 / t
}

/// Radius `sqrt(rho(S))` of the support disk when `a == 0`.
pub fn support_oracle_azero(spec: &ProfileSpec) -> Result<f64> {
    if !spec.deformation_is_zero() {
        return Err(Error::Domain(
            "support_oracle_azero needs a zero deformation".into(),
        ));
    }
    Ok(spectral_radius(&reduced_variance_matrix(spec))?.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{discretize, BlockPartition};

    fn circular() -> DiscretizedModel {
        discretize(&ProfileSpec::constant(1.0, c64::new(0.0, 0.0)).unwrap(), 10).unwrap()
    }

    fn halves(s: Vec<Vec<f64>>, a: [f64; 2]) -> ProfileSpec {
        ProfileSpec::new(
            BlockPartition::new(vec![0.0, 0.5, 1.0]).unwrap(),
            s,
            vec![c64::new(a[0], 0.0), c64::new(a[1], 0.0)],
            1e-2,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn semicircle_values() {
        let m = circular();
        let sup = SupportConfig::default();
        let cfg = SolverConfig::default();
        let z0 = c64::new(0.0, 0.0);
        let r0 = rho_density(&m, z0, 0.0, &sup, &cfg).unwrap();
        assert!((r0 - 1.0 / std::f64::consts::PI).abs() < 5e-3);
        assert!(rho_density(&m, z0, 3.0, &sup, &cfg).unwrap() <= 1e-2);
        let r1 = rho_density(&m, z0, 1.0, &sup, &cfg).unwrap();
        let exact = 3.0f64.sqrt() / (2.0 * std::f64::consts::PI);
        assert!((r1 - exact).abs() < 5e-3);
    }

    #[test]
    fn density_is_even_in_tau() {
        let spec = halves(vec![vec![1.0, 2.0], vec![2.0, 1.0]], [1.0, -0.5]);
        let m = discretize(&spec, 4).unwrap();
        let sup = SupportConfig::default();
        let cfg = SolverConfig::default();
        let z = c64::new(0.3, 0.2);
        for tau in [0.2, 0.9, 1.7] {
            let p = rho_density(&m, z, tau, &sup, &cfg).unwrap();
            let q = rho_density(&m, z, -tau, &sup, &cfg).unwrap();
            assert!((p - q).abs() < 1e-8, "{p} vs {q}");
        }
    }

    #[test]
    fn circular_distances() {
        let m = circular();
        let sup = SupportConfig::default();
        let cfg = SolverConfig::default();
        assert_eq!(dist_zero_support(&m, c64::new(0.0, 0.0), &sup, &cfg).unwrap(), 0.0);
        assert_eq!(dist_zero_support(&m, c64::new(0.6, 0.6), &sup, &cfg).unwrap(), 0.0);
        let d15 = dist_zero_support(&m, c64::new(1.5, 0.0), &sup, &cfg).unwrap();
        let d3 = dist_zero_support(&m, c64::new(0.0, 3.0), &sup, &cfg).unwrap();
        assert!(d15 > 0.0);
        assert!(d3 > d15);
    }

    // For s = 1, a = 0 the trace u of the resolvent solves
    // u = (u - tau)(|zeta|^2 - u^2); the lower edge is where two roots merge.
    #[test]
    fn circular_lower_edge_matches_double_root() {
        let m = circular();
        let sup = SupportConfig::default();
        for r in [1.2f64, 1.5, 2.0, 3.0] {
            let x = r * r;
            let p = ((1.0 + 8.0 * x).sqrt() - 1.0) / 2.0;
            let edge = (x - p).sqrt() * (1.0 - 1.0 / p);
            let d = dist_zero_support(&m, c64::from_polar(r, 0.7), &sup, &SolverConfig::default()).unwrap();
            assert!((d - edge).abs() < 5e-3, "|zeta| = {r}: {d} vs {edge}");
        }
    }

    #[test]
    fn outside_the_scan_range_returns_tau_max() {
        let m = circular();
        let sup = SupportConfig {
            tau_max: Some(0.25),
            ..SupportConfig::default()
        };
        let d = dist_zero_support(&m, c64::new(3.0, 0.0), &sup, &SolverConfig::default()).unwrap();
        assert_eq!(d, 0.25);
    }

    #[test]
    fn rho_integrates_to_one() {
        let spec = halves(vec![vec![1.0, 1.0], vec![1.0, 1.0]], [1.0, -1.0]);
        let m = discretize(&spec, 2).unwrap();
        let sup = SupportConfig::default();
        let tmax = sup.tau_max_for(&m, c64::new(0.4, 0.3));
        let count = 4001;
        let taus: Vec<f64> = (0..count).map(|k| -tmax + 2.0 * tmax * k as f64 / (count - 1) as f64).collect();
        let rho = rho_curve(&m, c64::new(0.4, 0.3), &taus, &sup, &SolverConfig::default()).unwrap();
        let h = taus[1] - taus[0];
        let mass: f64 = rho.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
        assert!((mass - 1.0).abs() < 0.02, "mass {mass}");
    }

    #[test]
    fn iid_oracle_examples() {
        let zero = ProfileSpec::constant(1.0, c64::new(0.0, 0.0)).unwrap();
        assert!(support_oracle_iid(&zero, 1.0, c64::new(0.5, 0.0)));
        assert!(support_oracle_iid(&zero, 1.0, c64::new(0.0, 0.0)));
        let two = halves(vec![vec![2.0, 2.0], vec![2.0, 2.0]], [1.0, -1.0]);
        assert!(support_oracle_iid(&two, 2.0, c64::new(0.0, 0.0)));
        assert!(!support_oracle_iid(&two, 2.0, c64::new(0.0, 2.0)));
        assert!(support_oracle_iid(&two, 2.0, c64::new(1.0, 0.0)));
    }

    #[test]
    fn azero_oracle_examples() {
        let one = ProfileSpec::constant(1.0, c64::new(0.0, 0.0)).unwrap();
        assert!((support_oracle_azero(&one).unwrap() - 1.0).abs() < 1e-12);
        let b2 = halves(vec![vec![1.0, 2.0], vec![2.0, 1.0]], [0.0, 0.0]);
        assert!((support_oracle_azero(&b2).unwrap() - 1.5f64.sqrt()).abs() < 1e-10);
        let t = ProfileSpec::constant(2.5, c64::new(0.0, 0.0)).unwrap();
        assert!((support_oracle_azero(&t).unwrap() - 2.5f64.sqrt()).abs() < 1e-12);
        let shifted = ProfileSpec::constant(1.0, c64::new(0.1, 0.0)).unwrap();
        assert!(matches!(support_oracle_azero(&shifted), Err(Error::Domain(_))));
    }

    #[test]
    fn masks_grow_with_eps() {
        let m = circular();
        let grid = GridSpec::square(1.5, 0.5).unwrap();
        let (field, _) = dist_field(&m, &grid, &SupportConfig::default(), &SolverConfig::default()).unwrap();
        let m0 = s_eps_mask(&field, 0.0);
        let m1 = s_eps_mask(&field, 0.3);
        assert!(m0.iter().zip(&m1).all(|(a, b)| !a || *b));
        // (0,0) is in, corners (|zeta| = 2.1) are out
        assert!(m0[grid.index(3, 3)]);
        assert!(!m0[grid.index(0, 0)]);
    }

    #[test]
    fn bad_config_is_rejected() {
        let sup = SupportConfig {
            tau_max: Some(1e-5),
            ..SupportConfig::default()
        };
        assert!(sup.check().is_err());
        assert!(SupportConfig {
            tau_nodes: 1,
            ..SupportConfig::default()
        }
        .check()
        .is_err());
    }
}
