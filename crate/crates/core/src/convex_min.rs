//! Unconstrained minimization of smooth convex functions.
//!
//! Newton steps are taken when the objective supplies a Hessian, BFGS steps
//! otherwise. Both use Armijo backtracking, so accepted steps never increase
//! the objective.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub trait SmoothObjective {
    fn dim(&self) -> usize;

    /// May return a non-finite value outside the domain; such trial points
    /// are rejected by the line search.
    fn value(&self, u: &DVector<f64>) -> f64;

    fn gradient(&self, u: &DVector<f64>) -> DVector<f64>;

    fn hessian(&self, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinimizerSettings {
    pub gradient_tolerance: f64,
    pub max_steps: usize,
    /// Backtracking shrink factor, in (0, 1).
    pub shrink: f64,
    /// Armijo sufficient-decrease constant, in (0, 0.5].
    pub sufficient_decrease: f64,
}

impl Default for MinimizerSettings {
    fn default() -> Self {
        MinimizerSettings {
            gradient_tolerance: 1e-9,
            max_steps: 500,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
        }
    }
}

impl MinimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::InvalidInput(
                "gradient tolerance must be positive".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidInput("max_steps must be at least 1".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidInput(
                "shrink factor must lie in (0, 1)".into(),
            ));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease <= 0.5) {
            return Err(Error::InvalidInput(
                "sufficient-decrease constant must lie in (0, 0.5]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub point: DVector<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub steps: usize,
}

const MAX_BACKTRACKS: usize = 80;

/// Search direction from a possibly singular Hessian. Adds a growing
/// diagonal shift until the factorization succeeds.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = h
        .diagonal()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-300);
    if let Some(chol) = h.clone().cholesky() {
        let l_min = chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
        if l_min * l_min > scale * 1e-12 {
            let d = -chol.solve(g);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
    }
    // Nearly singular: pseudo-inverse on the well-determined eigenspace keeps
    // the iterates in range(H) and so picks the minimum-norm minimizer.
    let eig = h.clone().symmetric_eigen();
    let cutoff = scale * 1e-10;
    let mut d = DVector::zeros(g.len());
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            let v = eig.eigenvectors.column(k);
            d -= v * (v.dot(g) / lambda);
        }
    }
    if d.iter().all(|v| v.is_finite()) && d.dot(g) < 0.0 {
        Some(d)
    } else {
        None
    }
}

pub fn minimize<O: SmoothObjective + ?Sized>(
    obj: &O,
    u0: &DVector<f64>,
    settings: &MinimizerSettings,
) -> Result<Minimum> {
    settings.validate()?;
    let n = obj.dim();
    if u0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "start point has length {}, objective expects {n}",
            u0.len()
        )));
    }
    let mut x = u0.clone();
    let mut f = obj.value(&x);
    let mut g = obj.gradient(&x);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(
            "objective or gradient at the start point".into(),
        ));
    }
    let mut inv_h = DMatrix::<f64>::identity(n, n);
    let mut first_bfgs = true;

    for step in 0..settings.max_steps {
        let gnorm = g.norm();
        if gnorm <= settings.gradient_tolerance {
            return Ok(Minimum {
                point: x,
                value: f,
                gradient_norm: gnorm,
                steps: step,
            });
        }

        let hessian = obj.hessian(&x);
        let mut d = match &hessian {
            Some(h) => newton_direction(h, &g).unwrap_or_else(|| -&g),
            None => -(&inv_h * &g),
        };
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            d = -&g;
            slope = -gnorm * gnorm;
            inv_h.fill_with_identity();
        }

        let mut t = 1.0;
        let mut accepted = None;
        // Once the predicted decrease is below the rounding of f, values can
        // no longer rank points; the full step is judged by the gradient.
        if -slope <= 1e-12 * (1.0 + f.abs()) {
            let trial = &x + &d;
            let ft = obj.value(&trial);
            if ft.is_finite() && obj.gradient(&trial).norm() < gnorm {
                accepted = Some((trial, ft));
            }
        }
        for _ in 0..MAX_BACKTRACKS {
            if accepted.is_some() || t * d.amax() <= f64::EPSILON * x.amax() {
                break;
            }
            let trial = &x + &d * t;
            let ft = obj.value(&trial);
            if ft.is_finite() && ft <= f + settings.sufficient_decrease * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= settings.shrink;
        }
        // Near the optimum the Armijo test drowns in rounding. A full step
        // that does not raise the value but shrinks the gradient is kept.
        if accepted.is_none() {
            let trial = &x + &d;
            let ft = obj.value(&trial);
            if ft.is_finite() && ft <= f {
                let gt = obj.gradient(&trial);
                if gt.norm() < gnorm {
                    accepted = Some((trial, ft));
                }
            }
        }
        let Some((x_new, f_new)) = accepted else {
            return Err(Error::NotConverged {
                steps: step,
                gradient_norm: gnorm,
            });
        };

        let g_new = obj.gradient(&x_new);
        if g_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient during minimization".into()));
        }
        if hessian.is_none() {
            let s = &x_new - &x;
            let y = &g_new - &g;
            let sy = s.dot(&y);
            if sy > 1e-14 * s.norm() * y.norm() && sy > 0.0 {
                if first_bfgs {
                    inv_h *= sy / y.dot(&y);
                    first_bfgs = false;
                }
                let rho = 1.0 / sy;
                let hy = &inv_h * &y;
                let yhy = y.dot(&hy);
                // H+ = H - rho (s hy' + hy s') + (rho^2 yhy + rho) s s'
                inv_h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
                inv_h += (&s * s.transpose()) * (rho * rho * yhy + rho);
            }
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    let gnorm = g.norm();
    if gnorm <= settings.gradient_tolerance {
        return Ok(Minimum {
            point: x,
            value: f,
            gradient_norm: gnorm,
            steps: settings.max_steps,
        });
    }
    Err(Error::NotConverged {
        steps: settings.max_steps,
        gradient_norm: gnorm,
    })
}

/// ½u'Hu + g'u with a constant Hessian.
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
}

impl SmoothObjective for Quadratic {
    fn dim(&self) -> usize {
        self.g.len()
    }

    fn value(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.h * u)) + self.g.dot(u)
    }

    fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.h * u + &self.g
    }

    fn hessian(&self, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.h.clone())
    }
}
