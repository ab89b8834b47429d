//! Run configuration files.
//!
//! A `.cfg` file is TOML. The model keys (`breakpoints`, `variance`,
//! `deformation_re`, `deformation_im`, `c_bound`, `holder_theta`) sit at the
//! top level next to `n`, `output_dir` and `eps`; the remaining settings live
//! in the `[grid]`, `[quadrature]`, `[support]`, `[solver]`, `[sample]`,
//! `[solve]` and `[probes]` tables.

use std::path::{Path, PathBuf};

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::brown::QuadratureConfig;
use crate::digest::sha256_hex;
use crate::dyson::SolverConfig;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::profiles::{ProfileFile, ProfileSpec, DEFAULT_C_BOUND, DEFAULT_HOLDER_THETA};
use crate::rmt::SampleConfig;
use crate::rng::Distribution;
use crate::support::SupportConfig;

/// Configurations shipped with the crate, by file name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("circular.cfg", include_str!("../configs/circular.cfg")),
    ("twopoint.cfg", include_str!("../configs/twopoint.cfg")),
    ("block2.cfg", include_str!("../configs/block2.cfg")),
    ("band3.cfg", include_str!("../configs/band3.cfg")),
    ("reducible.cfg", include_str!("../configs/reducible.cfg")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    let key = if name.ends_with(".cfg") {
        name.to_string()
    } else {
        format!("{name}.cfg")
    };
    BUNDLED.iter().find(|(n, _)| *n == key).map(|(_, text)| *text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub distribution: Distribution,
    pub seed: u64,
    /// Number of consecutive seeds used by spectrum comparisons.
    pub seeds: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            distribution: Distribution::ComplexGaussian,
            seed: 0,
            seeds: 5,
        }
    }
}

/// Spectral point for the `solve` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    pub zeta_re: f64,
    pub zeta_im: f64,
    pub eta: f64,
}

impl Default for SolveSection {
    fn default() -> Self {
        Self {
            zeta_re: 0.0,
            zeta_im: 0.0,
            eta: 1.0,
        }
    }
}

impl SolveSection {
    pub fn zeta(&self) -> c64 {
        c64::new(self.zeta_re, self.zeta_im)
    }
}

/// Inputs of the `probes` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub zeta_re: f64,
    pub zeta_im: f64,
    pub logdet_t: f64,
    pub logdet_nodes: usize,
    pub logdet_tol: f64,
    /// Radius of the bump test function, centred at 0.
    pub girko_radius: f64,
    pub girko_h: f64,
    pub girko_tol: f64,
    pub small_eta: f64,
    pub assumption_trials: usize,
    pub assumption_beta: f64,
    /// Modulus of the diagonal entries of `Z`, spread over the circle.
    pub assumption_modulus: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            zeta_re: 0.0,
            zeta_im: 0.0,
            logdet_t: 100.0,
            logdet_nodes: 2000,
            logdet_tol: 1e-6,
            girko_radius: 1.3,
            girko_h: 0.05,
            girko_tol: 5e-2,
            small_eta: 0.1,
            assumption_trials: 200,
            assumption_beta: 0.5,
            assumption_modulus: 2.0,
        }
    }
}

/// The file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub breakpoints: Vec<f64>,
    pub variance: Vec<Vec<f64>>,
    pub deformation_re: Vec<f64>,
    #[serde(default)]
    pub deformation_im: Option<Vec<f64>>,
    #[serde(default = "default_c_bound")]
    pub c_bound: f64,
    #[serde(default = "default_holder_theta")]
    pub holder_theta: f64,
    pub n: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    pub grid: GridSpec,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub support: SupportConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub probes: ProbeSection,
}

fn default_c_bound() -> f64 {
    DEFAULT_C_BOUND
}

fn default_holder_theta() -> f64 {
    DEFAULT_HOLDER_THETA
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_eps() -> Vec<f64> {
    vec![0.0, 0.05, 0.1]
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub grid: Option<GridSpec>,
    pub n: Option<usize>,
    pub eps: Option<Vec<f64>>,
}

/// Validated configuration of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub raw: RawConfig,
    pub model: ProfileSpec,
    /// `sha256` of the canonical JSON form, output directory excluded.
    pub hash: String,
}

impl RunConfig {
    pub fn parse(text: &str, overrides: &Overrides) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_raw(raw, overrides)
    }

    /// Reads `path`; a bare bundled name such as `circular.cfg` that does
    /// not exist on disk resolves to the bundled file.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::parse(&text, overrides),
            Err(e) => {
                let bare = path.parent().is_none_or(|p| p.as_os_str().is_empty());
                match path.to_str().filter(|_| bare).and_then(bundled) {
                    Some(text) => Self::parse(text, overrides),
                    None => Err(Error::Config(format!("cannot read {}: {e}", path.display()))),
                }
            }
        }
    }

    pub fn from_raw(mut raw: RawConfig, o: &Overrides) -> Result<Self> {
        if let Some(out) = &o.out {
            raw.output_dir = out.clone();
        }
        if let Some(seed) = o.seed {
            raw.sample.seed = seed;
        }
        if let Some(grid) = o.grid {
            raw.grid = grid;
        }
        if let Some(n) = o.n {
            raw.n = n;
        }
        if let Some(eps) = &o.eps {
            raw.eps = eps.clone();
        }

        let k = raw.deformation_re.len();
        let file = ProfileFile {
            breakpoints: raw.breakpoints.clone(),
            variance: raw.variance.clone(),
            deformation_re: raw.deformation_re.clone(),
            deformation_im: raw.deformation_im.clone().unwrap_or_else(|| vec![0.0; k]),
            c_bound: raw.c_bound,
            holder_theta: raw.holder_theta,
        };
        let model = ProfileSpec::try_from(file).map_err(|e| Error::Config(e.to_string()))?;
        if raw.n < 2 {
            return Err(Error::Config("n must be at least 2".into()));
        }
        raw.grid.check().map_err(|e| Error::Config(e.to_string()))?;
        raw.quadrature.check()?;
        raw.support.check()?;
        raw.solver.check()?;
        if raw.eps.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::Config("eps values must be nonnegative".into()));
        }
        if raw.sample.seeds == 0 {
            return Err(Error::Config("sample.seeds must be positive".into()));
        }
        let hash = config_hash(&raw)?;
        Ok(Self { raw, model, hash })
    }

    pub fn sample_config(&self, seed_offset: u64) -> SampleConfig {
        SampleConfig {
            n: self.raw.n,
            distribution: self.raw.sample.distribution,
            seed: self.raw.sample.seed.wrapping_add(seed_offset),
        }
    }

    /// Fields shared by every output sidecar.
    pub fn sidecar_base(&self) -> serde_json::Map<String, serde_json::Value> {
        let mut m = serde_json::Map::new();
        m.insert("config_hash".into(), self.hash.clone().into());
        m.insert("n".into(), self.raw.n.into());
        m
    }
}

fn config_hash(raw: &RawConfig) -> Result<String> {
    let mut v = serde_json::to_value(raw).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("output_dir");
    }
    // serde_json maps are ordered by key, so this text is canonical
    let text = serde_json::to_string(&v).map_err(|e| Error::Config(e.to_string()))?;
    Ok(sha256_hex(text.as_bytes()))
}

/// `re_min,re_max,im_min,im_max,h`
pub fn parse_grid(s: &str) -> Result<GridSpec> {
    let v = parse_list(s)?;
    if v.len() != 5 {
        return Err(Error::Config(format!(
            "--grid expects re_min,re_max,im_min,im_max,h, got '{s}'"
        )));
    }
    GridSpec::new(v[0], v[1], v[2], v[3], v[4]).map_err(|e| Error::Config(e.to_string()))
}

/// Comma-separated reals.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("not a number: '{t}'")))
        })
        .collect()
}
