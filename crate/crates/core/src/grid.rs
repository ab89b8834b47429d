//! Rectangular grids in the complex plane and real-valued fields on them.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
    pub h: f64,
}

fn steps(lo: f64, hi: f64, h: f64, axis: &str) -> Result<usize> {
    let span = (hi - lo) / h;
    let k = span.round();
    if !(span >= 0.0) || (span - k).abs() > 1e-6 * k.max(1.0) {
        return Err(Error::Domain(format!(
            "grid spacing {h} does not divide the {axis} range [{lo}, {hi}] uniformly"
        )));
    }
    Ok(k as usize)
}

impl GridSpec {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64, h: f64) -> Result<Self> {
        let g = Self {
            re_min,
            re_max,
            im_min,
            im_max,
            h,
        };
        g.check()?;
        Ok(g)
    }

    /// Square grid `[-r, r]^2`.
    pub fn square(r: f64, h: f64) -> Result<Self> {
        Self::new(-r, r, -r, r, h)
    }

    pub fn check(&self) -> Result<()> {
        let finite = [self.re_min, self.re_max, self.im_min, self.im_max, self.h]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.h > 0.0) {
            return Err(Error::Domain("grid needs finite bounds and h > 0".into()));
        }
        steps(self.re_min, self.re_max, self.h, "real")?;
        steps(self.im_min, self.im_max, self.h, "imaginary")?;
        Ok(())
    }

    pub fn nx(&self) -> usize {
        steps(self.re_min, self.re_max, self.h, "real").unwrap_or(0) + 1
    }

    pub fn ny(&self) -> usize {
        steps(self.im_min, self.im_max, self.h, "imaginary").unwrap_or(0) + 1
    }

    pub fn len(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node `(ix, iy)`; storage is row-major by imaginary, then real part.
    pub fn node(&self, ix: usize, iy: usize) -> c64 {
        c64::new(
            self.re_min + ix as f64 * self.h,
            self.im_min + iy as f64 * self.h,
        )
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx() + ix
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        let nx = self.nx();
        (idx % nx, idx / nx)
    }

    pub fn nodes(&self) -> Vec<c64> {
        let (nx, ny) = (self.nx(), self.ny());
        let mut out = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                out.push(self.node(ix, iy));
            }
        }
        out
    }

    pub fn is_boundary(&self, ix: usize, iy: usize) -> bool {
        ix == 0 || iy == 0 || ix + 1 == self.nx() || iy + 1 == self.ny()
    }

    /// Nodes at chessboard distance at most `cells` from `(ix, iy)`.
    pub fn neighborhood(&self, ix: usize, iy: usize, cells: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let x0 = ix.saturating_sub(cells);
        let x1 = (ix + cells).min(self.nx() - 1);
        let y0 = iy.saturating_sub(cells);
        let y1 = (iy + cells).min(self.ny() - 1);
        (y0..=y1).flat_map(move |y| (x0..=x1).map(move |x| (x, y)))
    }
}

/// One real value per grid node with a validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub ok: Vec<bool>,
    pub quantity: String,
    pub model_hash: String,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>, ok: Vec<bool>, quantity: &str, model_hash: &str) -> Result<Self> {
        grid.check()?;
        if values.len() != grid.len() || ok.len() != grid.len() {
            return Err(Error::Domain(format!(
                "field has {} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            values,
            ok,
            quantity: quantity.to_string(),
            model_hash: model_hash.to_string(),
        })
    }

    pub fn get(&self, ix: usize, iy: usize) -> Option<f64> {
        let i = self.grid.index(ix, iy);
        self.ok[i].then_some(self.values[i])
    }

    pub fn failures(&self) -> usize {
        self.ok.iter().filter(|o| !**o).count()
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.ok)
            .filter(|(_, ok)| **ok)
            .map(|(v, _)| v.abs())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            *v *= factor;
        }
        out
    }

    /// CSV with header `re_zeta,im_zeta,value,ok`.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(48 * self.values.len() + 32);
        s.push_str("re_zeta,im_zeta,value,ok\n");
        for (idx, (v, ok)) in self.values.iter().zip(&self.ok).enumerate() {
            let (ix, iy) = self.grid.coords(idx);
            let z = self.grid.node(ix, iy);
            let value = if *ok { *v } else { f64::NAN };
            let _ = writeln!(s, "{},{},{},{}", z.re, z.im, value, u8::from(*ok));
        }
        s
    }

    /// Writes `<stem>.csv` and the JSON sidecar `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str, sidecar: &serde_json::Value) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        let json = serde_json::to_string_pretty(sidecar).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
        Ok(())
    }
}

/// Five-point discrete Laplacian `(f_N + f_S + f_E + f_W - 4 f_C) / h^2` on
/// interior nodes. Boundary nodes, and nodes with an invalid neighbour, are
/// flagged invalid.
pub fn laplacian5(grid: &GridSpec, values: &[f64], ok: &[bool]) -> (Vec<f64>, Vec<bool>) {
    let (nx, ny) = (grid.nx(), grid.ny());
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let mut out = vec![f64::NAN; nx * ny];
    let mut valid = vec![false; nx * ny];
    for iy in 1..ny.saturating_sub(1) {
        for ix in 1..nx.saturating_sub(1) {
            let c = grid.index(ix, iy);
            let nb = [c - 1, c + 1, c - nx, c + nx];
            if !ok[c] || nb.iter().any(|&j| !ok[j]) {
                continue;
            }
            let sum: f64 = nb.iter().map(|&j| values[j]).sum();
            out[c] = (sum - 4.0 * values[c]) * inv_h2;
            valid[c] = true;
        }
    }
    (out, valid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts_and_ordering() {
        let g = GridSpec::new(-1.0, 1.0, 0.0, 0.5, 0.25).unwrap();
        assert_eq!((g.nx(), g.ny()), (9, 3));
        assert_eq!(g.node(0, 0), c64::new(-1.0, 0.0));
        assert_eq!(g.coords(g.index(3, 2)), (3, 2));
        // real part varies fastest
        let nodes = g.nodes();
        assert_eq!(nodes[1], c64::new(-0.75, 0.0));
        assert_eq!(nodes[9], c64::new(-1.0, 0.25));
    }

    #[test]
    fn incommensurate_spacing_is_rejected() {
        assert!(GridSpec::new(0.0, 1.0, 0.0, 1.0, 0.3).is_err());
        assert!(GridSpec::new(0.0, 1.0, 0.0, 1.0, 0.0).is_err());
        assert!(GridSpec::square(1.5, 0.02).is_ok());
    }

    #[test]
    fn laplacian_of_quadratic_is_exact() {
        let g = GridSpec::square(1.0, 0.1).unwrap();
        let vals: Vec<f64> = g.nodes().iter().map(|z| z.norm_sqr()).collect();
        let ok = vec![true; vals.len()];
        let (lap, valid) = laplacian5(&g, &vals, &ok);
        for (l, v) in lap.iter().zip(&valid) {
            if *v {
                assert!((l - 4.0).abs() < 1e-9);
            }
        }
        assert!(!valid[0]);
        assert_eq!(valid.iter().filter(|v| **v).count(), 19 * 19);
    }

    #[test]
    fn csv_layout() {
        let g = GridSpec::new(0.0, 1.0, 0.0, 0.0, 1.0).unwrap();
        let f = ScalarField::new(g, vec![0.5, 2.0], vec![true, false], "L", "abc").unwrap();
        assert_eq!(f.to_csv(), "re_zeta,im_zeta,value,ok\n0,0,0.5,1\n1,0,NaN,0\n");
    }
}
