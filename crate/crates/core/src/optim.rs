//! Derivative-free quasi-Newton descent: BFGS driven by central
//! finite-difference gradients of a zeroth-order objective.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeOptions {
    /// Relative finite-difference step; the absolute step is `fd_rel * (1 + |x|_inf)`.
    pub fd_rel: f64,
    /// Stop once the finite-difference gradient norm falls below this.
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            fd_rel: 1e-5,
            grad_tol: 1e-6,
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn fd_gradient(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], fd_rel: f64) -> Vec<f64> {
    let h = fd_rel * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let mut probe = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` from `x0`. Non-finite objective values are treated as
/// infeasible: the line search backs away from them, and if no finite
/// progress is possible the best finite point seen so far is returned.
pub fn minimize(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], opts: &MinimizeOptions) -> Minimum {
    let d = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Minimum {
            point: x,
            value: fx,
            iterations: 0,
            converged: false,
        };
    }
    let mut g = fd_gradient(&mut f, &x, opts.fd_rel);
    // inverse Hessian approximation, row-major
    let mut h_inv: Vec<f64> = (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        if !g.iter().all(|v| v.is_finite()) {
            break;
        }
        if dot(&g, &g).sqrt() < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir: Vec<f64> = (0..d).map(|i| -dot(&h_inv[i * d..(i + 1) * d], &g)).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            // curvature estimate went bad; fall back to steepest descent
            h_inv.iter_mut().enumerate().for_each(|(i, v)| *v = if i % (d + 1) == 0 { 1.0 } else { 0.0 });
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let ft = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            break;
        };
        let g_new = fd_gradient(&mut f, &x_new, opts.fd_rel);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..d).map(|i| dot(&h_inv[i * d..(i + 1) * d], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..d {
                for j in 0..d {
                    h_inv[i * d + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        let moved = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        x = x_new;
        fx = f_new;
        g = g_new;
        if moved == 0.0 {
            break;
        }
    }
    if !converged && g.iter().all(|v| v.is_finite()) && dot(&g, &g).sqrt() < opts.grad_tol {
        converged = true;
    }
    Minimum {
        point: x,
        value: fx,
        iterations,
        converged,
    }
}
