//! Weighted Levenberg-Marquardt for `min_x r(x)^T W r(x)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Damping schedule and stopping rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub max_iterations: usize,
    /// Stop when every `|g_i| / sqrt(A_ii)` falls below this.
    pub gradient_tol: f64,
    /// Stop when `|dx| <= step_tol (|x| + step_tol)`.
    pub step_tol: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            max_iterations: 100,
            gradient_tol: 1e-10,
            step_tol: 1e-12,
        }
    }
}

impl LmSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_damping > 0.0
            && self.damping_up > 1.0
            && self.damping_down > 0.0
            && self.damping_down < 1.0
            && self.max_iterations > 0
            && self.gradient_tol >= 0.0
            && self.step_tol >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid LM settings {self:?}")))
        }
    }
}

/// A residual and its Jacobian `dr/dx`. `None` marks points outside the
/// domain; such trial steps are rejected.
pub trait Problem {
    fn residual(&self, x: &DVector<f64>) -> Option<DVector<f64>>;
    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Gradient,
    Step,
    MaxIterations,
    /// Damping grew without bound and no step decreased the cost.
    Stall,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: DVector<f64>,
    pub initial_cost: f64,
    pub cost: f64,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub reason: StopReason,
}

impl LmReport {
    pub fn converged(&self) -> bool {
        matches!(self.reason, StopReason::Gradient | StopReason::Step)
    }
}

/// Symmetrizes `w` and floors its eigenvalues at `1e-12 |w|` (spectral norm).
///
/// The floor is applied to the Jacobi-scaled matrix `D w D`, `D = diag(w_ii)^-1/2`,
/// so parameters measured in very different units are floored alike.
pub fn regularize_weight(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let sym = (w + w.transpose()) * 0.5;
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let v = sym[(i, i)];
            if v > 0.0 && v.is_finite() {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| sym[(i, j)] / (d[i] * d[j]));
    let eig = SymmetricEigen::new(scaled);
    let norm = eig.eigenvalues.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    let floor = 1e-12 * norm;
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let out = DMatrix::from_fn(n, n, |i, j| out[(i, j)] * d[i] * d[j]);
    (&out + out.transpose()) * 0.5
}

fn cost(r: &DVector<f64>, w: &DMatrix<f64>) -> f64 {
    (r.transpose() * w * r)[(0, 0)]
}

/// Minimizes `r(x)^T W r(x)` from `x0` with Marquardt's diagonal damping.
/// `W` is used as given.
pub fn minimize<P: Problem>(problem: &P, x0: DVector<f64>, w: &DMatrix<f64>, settings: &LmSettings) -> Result<LmReport> {
    settings.validate()?;
    let mut x = x0;
    let mut r = problem
        .residual(&x)
        .ok_or_else(|| Error::DegenerateGeometry("LM start point outside the model domain".into()))?;
    if w.nrows() != r.len() || w.ncols() != r.len() {
        return Err(Error::DimensionMismatch(format!(
            "weight is {}x{}, residual has {} entries",
            w.nrows(),
            w.ncols(),
            r.len()
        )));
    }
    let mut c = cost(&r, w);
    let initial_cost = c;
    let mut history = vec![c];
    let mut mu = settings.initial_damping;
    let mut iterations = 0;
    let mut reason = StopReason::MaxIterations;

    let mut jac = problem
        .jacobian(&x)
        .ok_or_else(|| Error::DegenerateGeometry("LM Jacobian undefined at start point".into()))?;

    while iterations < settings.max_iterations {
        let jw = jac.transpose() * w;
        let a = &jw * &jac;
        let g = &jw * &r;
        let diag: Vec<f64> = a.diagonal().iter().map(|v| v.max(f64::MIN_POSITIVE)).collect();
        if g.iter().zip(&diag).all(|(gi, d)| gi.abs() / d.sqrt() < settings.gradient_tol) {
            reason = StopReason::Gradient;
            break;
        }
        iterations += 1;

        let mut damped = a.clone();
        for (i, d) in diag.iter().enumerate() {
            damped[(i, i)] += mu * d;
        }
        let step = match damped.clone().cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => match damped.lu().solve(&(-&g)) {
                Some(s) => s,
                None => {
                    mu *= settings.damping_up;
                    continue;
                }
            },
        };
        if step.norm() <= settings.step_tol * (x.norm() + settings.step_tol) {
            reason = StopReason::Step;
            break;
        }

        let x_new = &x + &step;
        let accepted = problem.residual(&x_new).and_then(|r_new| {
            let c_new = cost(&r_new, w);
            (c_new.is_finite() && c_new < c).then_some((r_new, c_new))
        });
        match accepted.and_then(|(r_new, c_new)| problem.jacobian(&x_new).map(|j| (r_new, c_new, j))) {
            Some((r_new, c_new, j_new)) => {
                x = x_new;
                r = r_new;
                c = c_new;
                jac = j_new;
                history.push(c);
                mu = (mu * settings.damping_down).max(1e-15);
            }
            None => {
                mu *= settings.damping_up;
                if mu > 1e15 {
                    reason = StopReason::Stall;
                    break;
                }
            }
        }
    }

    Ok(LmReport {
        x,
        initial_cost,
        cost: c,
        cost_history: history,
        iterations,
        reason,
    })
}
