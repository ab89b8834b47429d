//! Damped fixed-point iteration with backtracking and Anderson mixing.
//!
//! The caller supplies `eval(x, out)`, which writes the undamped map `F(x)`
//! into `out` and returns the equation residual at `x`. Each step forms the
//! damped point `y = (1 - alpha) x + alpha F(x)` and, once two history
//! entries exist, an Anderson extrapolation of the damped map. The
//! extrapolated point is taken only if it is admissible and lowers the
//! residual; otherwise the damped point is tried, and `alpha` is halved
//! (down to `2^-10`) whenever the damped step raises the residual.

use std::collections::VecDeque;

pub(crate) const MIN_DAMPING: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Params {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub depth: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Converged {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Stalled {
    pub residual: f64,
    pub iterations: usize,
}

pub(crate) fn iterate<E, A, P>(
    x0: Vec<f64>,
    params: Params,
    mut eval: E,
    admissible: A,
    mut project: P,
) -> Result<Converged, Stalled>
where
    E: FnMut(&[f64], &mut [f64]) -> f64,
    A: Fn(&[f64]) -> bool,
    P: FnMut(&mut [f64]) -> bool,
{
    let dim = x0.len();
    let mut x = x0;
    let mut fx = vec![0.0; dim];
    let mut r = eval(&x, &mut fx);
    let mut alpha = params.damping;

    let mut hist_x: VecDeque<Vec<f64>> = VecDeque::with_capacity(params.depth + 2);
    let mut hist_f: VecDeque<Vec<f64>> = VecDeque::with_capacity(params.depth + 2);

    let mut y = vec![0.0; dim];
    let mut fy = vec![0.0; dim];
    let mut z = vec![0.0; dim];
    let mut fz = vec![0.0; dim];

    for it in 0..params.max_iter {
        if r <= params.tol {
            return Ok(Converged {
                x,
                residual: r,
                iterations: it,
            });
        }
        if !r.is_finite() {
            return Err(Stalled {
                residual: r,
                iterations: it,
            });
        }

        for i in 0..dim {
            y[i] = (1.0 - alpha) * x[i] + alpha * fx[i];
        }
        if project(&mut y) {
            alpha = (0.5 * alpha).max(MIN_DAMPING);
            hist_x.clear();
            hist_f.clear();
        }

        let step: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        hist_x.push_back(x.clone());
        hist_f.push_back(step);
        if hist_x.len() > params.depth + 1 {
            hist_x.pop_front();
            hist_f.pop_front();
        }

        if params.depth > 0 && hist_x.len() >= 2 && anderson(&hist_x, &hist_f, &y, &mut z) && admissible(&z) {
            let rz = eval(&z, &mut fz);
            if rz < r {
                std::mem::swap(&mut x, &mut z);
                std::mem::swap(&mut fx, &mut fz);
                r = rz;
                continue;
            }
            hist_x.clear();
            hist_f.clear();
        }

        let ry = eval(&y, &mut fy);
        if ry <= r || alpha <= MIN_DAMPING {
            std::mem::swap(&mut x, &mut y);
            std::mem::swap(&mut fx, &mut fy);
            r = ry;
        } else {
            alpha = (0.5 * alpha).max(MIN_DAMPING);
            hist_x.clear();
            hist_f.clear();
        }
    }
    if r <= params.tol {
        return Ok(Converged {
            x,
            residual: r,
            iterations: params.max_iter,
        });
    }
    Err(Stalled {
        residual: r,
        iterations: params.max_iter,
    })
}

/// Type-II Anderson update from the stored iterates `x_i` and damped steps
/// `f_i`: minimizes `|f_k - dF g|` and returns `y - (dX + dF) g` in `out`.
fn anderson(
    hist_x: &VecDeque<Vec<f64>>,
    hist_f: &VecDeque<Vec<f64>>,
    y: &[f64],
    out: &mut [f64],
) -> bool {
    let m = hist_x.len() - 1;
    let dim = y.len();
    let fk = &hist_f[m];
    let df: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..dim).map(|j| hist_f[i + 1][j] - hist_f[i][j]).collect())
        .collect();

    let mut gram = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    for a in 0..m {
        for b in a..m {
            let g: f64 = df[a].iter().zip(&df[b]).map(|(p, q)| p * q).sum();
            gram[a * m + b] = g;
            gram[b * m + a] = g;
        }
        rhs[a] = df[a].iter().zip(fk).map(|(p, q)| p * q).sum();
    }
    let scale = (0..m).map(|a| gram[a * m + a]).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return false;
    }
    for a in 0..m {
        gram[a * m + a] += 1e-12 * scale;
    }
    let Some(gamma) = solve_spd(&mut gram, &mut rhs, m) else {
        return false;
    };

    out.copy_from_slice(y);
    for i in 0..m {
        let g = gamma[i];
        for j in 0..dim {
            let dx = hist_x[i + 1][j] - hist_x[i][j];
            out[j] -= g * (dx + df[i][j]);
        }
    }
    out.iter().all(|v| v.is_finite())
}

/// Cholesky solve of a small symmetric positive definite system.
fn solve_spd(a: &mut [f64], b: &mut [f64], m: usize) -> Option<Vec<f64>> {
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= a[j * m + k] * a[j * m + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * m + j] = d;
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = s / d;
        }
    }
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * m + k] * b[k];
        }
        b[i] = s / a[i * m + i];
    }
    for i in (0..m).rev() {
        let mut s = b[i];
        for k in i + 1..m {
            s -= a[k * m + i] * b[k];
        }
        b[i] = s / a[i * m + i];
    }
    Some(b.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(depth: usize) -> Params {
        Params {
            tol: 1e-13,
            max_iter: 100_000,
            damping: 0.5,
            depth,
        }
    }

    // x = cos(x), residual |x - cos x|
    fn cosine(x: &[f64], out: &mut [f64]) -> f64 {
        out[0] = x[0].cos();
        (x[0] - out[0]).abs()
    }

    #[test]
    fn damped_iteration_finds_dottie_number() {
        let sol = iterate(vec![1.0], params(0), cosine, |_| true, |_| false).unwrap();
        assert!((sol.x[0] - 0.739_085_133_215_160_6).abs() < 1e-12);
    }

    #[test]
    fn anderson_needs_fewer_iterations_on_slow_map() {
        // linear maps contracting at rates 0.999 and 0.998
        let slow = |x: &[f64], out: &mut [f64]| {
            out[0] = 0.999 * x[0] + 0.001 * 3.0;
            out[1] = 0.998 * x[1] - 0.002;
            (x[0] - out[0]).abs().max((x[1] - out[1]).abs())
        };
        let plain = iterate(vec![0.0, 0.0], params(0), slow, |_| true, |_| false).unwrap();
        let fast = iterate(vec![0.0, 0.0], params(5), slow, |_| true, |_| false).unwrap();
        assert!((fast.x[0] - 3.0).abs() < 1e-9 && (fast.x[1] + 1.0).abs() < 1e-9);
        assert!(fast.iterations * 10 < plain.iterations);
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let p = Params {
            max_iter: 3,
            ..params(0)
        };
        let err = iterate(vec![1.0], p, cosine, |_| true, |_| false).unwrap_err();
        assert_eq!(err.iterations, 3);
        assert!(err.residual > 0.0);
    }

    #[test]
    fn spd_solver_matches_direct_solution() {
        let mut a = vec![4.0, 1.0, 1.0, 3.0];
        let mut b = vec![1.0, 2.0];
        let x = solve_spd(&mut a, &mut b, 2).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-14);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-14);
    }
}
