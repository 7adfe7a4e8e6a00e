//! Classical per-stroke Bézier fitting by alternating least squares and
//! foot-point reparameterization.
//!
//! Every step of [`alternate_fit`] is accepted only if it lowers the squared
//! residual, so the recorded loss sequence never increases. Each alternation
//! also tries one damped Gauss-Newton step on control points and parameters
//! jointly; plain alternation converges linearly and stalls on high degrees.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bezier::{
    bernstein_all, eval_unchecked, squared_residual, BezierError, ControlPolygon, ParamVector,
};
use crate::point::Point;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("stroke of {len} points is too short for degree {degree}")]
    TooShort { len: usize, degree: usize },
    #[error("all stroke points coincide")]
    ZeroLength,
    #[error("normal equations are singular even with ridge damping")]
    Singular,
    #[error("parameter count {params} does not match {points} points")]
    Mismatch { params: usize, points: usize },
    #[error(transparent)]
    Bezier(#[from] BezierError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub max_alternations: usize,
    /// Stop when one alternation lowers the loss by less than this.
    pub tolerance: f64,
    pub projection_iters: usize,
    pub ridge: f64,
    pub pin_endpoints: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            max_alternations: 50,
            tolerance: 1e-9,
            projection_iters: 8,
            ridge: 1e-9,
            pin_endpoints: true,
        }
    }
}

/// Parameters proportional to cumulative chord length.
pub fn chord_length_params(points: &[Point]) -> Result<ParamVector, FitError> {
    if points.len() < 2 {
        return Err(FitError::TooShort {
            len: points.len(),
            degree: 1,
        });
    }
    let mut acc = Vec::with_capacity(points.len());
    let mut total = 0.0;
    acc.push(0.0);
    for w in points.windows(2) {
        total += w[0].dist(w[1]);
        acc.push(total);
    }
    if total == 0.0 {
        return Err(FitError::ZeroLength);
    }
    let last = acc.len() - 1;
    for v in acc.iter_mut() {
        *v /= total;
    }
    acc[last] = 1.0;
    Ok(ParamVector::new(acc)?)
}

/// Least-squares control points for fixed parameters with ridge damping.
///
/// With pinning, `P_0` and `P_n` are the first and last stroke points and only the
/// interior points are solved for.
pub fn solve_control_points(
    points: &[Point],
    params: &[f64],
    n: usize,
    pin_endpoints: bool,
    ridge: f64,
) -> Result<ControlPolygon, FitError> {
    if params.len() != points.len() {
        return Err(FitError::Mismatch {
            params: params.len(),
            points: points.len(),
        });
    }
    if points.len() < 2 || n == 0 {
        return Err(FitError::TooShort {
            len: points.len(),
            degree: n,
        });
    }
    let first = points[0];
    let last = points[points.len() - 1];
    let free: Vec<usize> = if pin_endpoints {
        (1..n).collect()
    } else {
        (0..=n).collect()
    };
    if free.is_empty() {
        return Ok(ControlPolygon::new(vec![first, last])?);
    }
    let m = free.len();
    let mut ata = DMatrix::<f64>::zeros(m, m);
    let mut atb = DMatrix::<f64>::zeros(m, 2);
    for (&t, &x) in params.iter().zip(points) {
        let b = bernstein_all(n, t);
        let mut target = x;
        if pin_endpoints {
            target = target - first * b[0] - last * b[n];
        }
        for (r, &i) in free.iter().enumerate() {
            atb[(r, 0)] += b[i] * target.x;
            atb[(r, 1)] += b[i] * target.y;
            for (c, &j) in free.iter().enumerate() {
                ata[(r, c)] += b[i] * b[j];
            }
        }
    }
    for d in 0..m {
        ata[(d, d)] += ridge;
    }
    let chol = ata.cholesky().ok_or(FitError::Singular)?;
    let sol = chol.solve(&atb);
    let mut ctrl = Vec::with_capacity(n + 1);
    if pin_endpoints {
        ctrl.push(first);
    }
    for r in 0..m {
        ctrl.push(Point::new(sol[(r, 0)], sol[(r, 1)]));
    }
    if pin_endpoints {
        ctrl.push(last);
    }
    Ok(ControlPolygon::new(ctrl)?)
}

struct CurveJet {
    p: Vec<Point>,
    d1: Vec<Point>,
    d2: Vec<Point>,
}

impl CurveJet {
    fn new(poly: &ControlPolygon) -> Self {
        let p = poly.points().to_vec();
        let d1 = poly.derivative_points();
        let d2 = if d1.len() >= 2 {
            let m = (d1.len() - 1) as f64;
            d1.windows(2).map(|w| (w[1] - w[0]) * m).collect()
        } else {
            vec![Point::ORIGIN]
        };
        Self { p, d1, d2 }
    }

    fn dist_sq(&self, x: Point, t: f64) -> f64 {
        (eval_unchecked(&self.p, t) - x).norm_sq()
    }
}

fn grid_search(jet: &CurveJet, x: Point, lo: f64, hi: f64, samples: usize) -> f64 {
    let mut best = (lo, jet.dist_sq(x, lo));
    for k in 1..=samples {
        let t = lo + (hi - lo) * k as f64 / samples as f64;
        let d = jet.dist_sq(x, t);
        if d < best.1 {
            best = (t, d);
        }
    }
    best.0
}

/// Safeguarded Newton on `‖C(t) − x‖²` inside `[lo, hi]`. Returns the best `t` seen
/// and whether the iteration converged.
fn newton(jet: &CurveJet, x: Point, t0: f64, lo: f64, hi: f64, iters: usize) -> (f64, bool) {
    let mut t = t0.clamp(lo, hi);
    let mut f = jet.dist_sq(x, t);
    for _ in 0..iters {
        let r = eval_unchecked(&jet.p, t) - x;
        let c1 = eval_unchecked(&jet.d1, t);
        let c2 = eval_unchecked(&jet.d2, t);
        let g = r.dot(c1);
        let h = c1.norm_sq() + r.dot(c2);
        let at_wall = (t <= lo && g > 0.0) || (t >= hi && g < 0.0);
        if g == 0.0 || at_wall {
            return (t, true);
        }
        let mut cand = if h > 0.0 {
            t - g / h
        } else if g > 0.0 {
            lo
        } else {
            hi
        };
        cand = cand.clamp(lo, hi);
        let mut fc = jet.dist_sq(x, cand);
        let mut halvings = 0;
        while fc > f && halvings < 40 {
            cand = 0.5 * (t + cand);
            fc = jet.dist_sq(x, cand);
            halvings += 1;
        }
        if fc > f {
            return (t, true);
        }
        let step = (cand - t).abs();
        t = cand;
        f = fc;
        if step < 1e-13 {
            return (t, true);
        }
    }
    (t, false)
}

const GRID_SAMPLES: usize = 256;

/// Local foot point of `x` on `poly` within `[lo, hi]`, starting at `t_init`.
///
/// Falls back to a dense grid search followed by Newton refinement when Newton does
/// not converge. The result is never worse than `t_init` clamped to the interval.
pub fn project_in(
    x: Point,
    poly: &ControlPolygon,
    t_init: f64,
    lo: f64,
    hi: f64,
    iters: usize,
) -> f64 {
    let jet = CurveJet::new(poly);
    let start = t_init.clamp(lo, hi);
    let (mut t, converged) = newton(&jet, x, start, lo, hi, iters);
    if !converged {
        let g = grid_search(&jet, x, lo, hi, GRID_SAMPLES);
        let (tg, _) = newton(&jet, x, g, lo, hi, iters);
        if jet.dist_sq(x, tg) < jet.dist_sq(x, t) {
            t = tg;
        }
    }
    if jet.dist_sq(x, t) > jet.dist_sq(x, start) {
        start
    } else {
        t
    }
}

/// Foot point of `x` on the whole curve: Newton from `t_init` and from the best
/// sample of a coarse grid, whichever lands closer.
pub fn footpoint_project(x: Point, poly: &ControlPolygon, t_init: f64) -> f64 {
    let jet = CurveJet::new(poly);
    let (a, _) = newton(&jet, x, t_init.clamp(0.0, 1.0), 0.0, 1.0, 8);
    let (b, _) = newton(&jet, x, grid_search(&jet, x, 0.0, 1.0, 64), 0.0, 1.0, 8);
    let t = if jet.dist_sq(x, b) < jet.dist_sq(x, a) {
        b
    } else {
        a
    };
    // Final polish; the safeguarded iteration never moves uphill.
    newton(&jet, x, t, 0.0, 1.0, 32).0
}

/// Result of [`alternate_fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleFit {
    pub poly: ControlPolygon,
    pub params: ParamVector,
    pub loss: f64,
    /// Loss at the start and after every accepted or rejected step.
    pub history: Vec<f64>,
    pub alternations: usize,
}

fn check_fit_input(points: &[Point], n: usize) -> Result<(), FitError> {
    if n == 0 || points.len() < n + 1 {
        return Err(FitError::TooShort {
            len: points.len(),
            degree: n,
        });
    }
    Ok(())
}

/// Fits a degree-`n` curve. Two starts are tried and the better fit kept: chord-length
/// parameters, and the elevated degree `n − 1` fit. The second escapes the rare basin
/// where a short unused hook forms near an endpoint.
pub fn alternate_fit(
    points: &[Point],
    n: usize,
    config: &OracleConfig,
) -> Result<OracleFit, FitError> {
    let chord = chord_start_fit(points, n, config)?;
    if n < 2 || chord.loss < 1e-20 {
        return Ok(chord);
    }
    let lower = chord_start_fit(points, n - 1, config)?;
    let elevated = alternate_fit_from(points, lower.poly.elevate(), lower.params, config)?;
    Ok(if elevated.loss < chord.loss {
        elevated
    } else {
        chord
    })
}

fn chord_start_fit(
    points: &[Point],
    n: usize,
    config: &OracleConfig,
) -> Result<OracleFit, FitError> {
    check_fit_input(points, n)?;
    let params = chord_length_params(points)?;
    let poly = solve_control_points(
        points,
        params.values(),
        n,
        config.pin_endpoints,
        config.ridge,
    )?;
    alternate_fit_from(points, poly, params, config)
}

/// Continues alternation from a given curve and parameterization.
pub fn alternate_fit_from(
    points: &[Point],
    mut poly: ControlPolygon,
    params: ParamVector,
    config: &OracleConfig,
) -> Result<OracleFit, FitError> {
    let n = poly.degree();
    check_fit_input(points, n)?;
    if params.len() != points.len() {
        return Err(FitError::Mismatch {
            params: params.len(),
            points: points.len(),
        });
    }
    let mut t = params.values().to_vec();
    let mut loss = squared_residual(&poly, &t, points);
    let mut history = vec![loss];
    let mut damping = 1e-6;
    let mut alternations = 0;
    let last = t.len() - 1;

    while alternations < config.max_alternations {
        alternations += 1;
        let before = loss;

        // Reparameterize with the curve fixed. Gauss-Seidel order keeps t sorted.
        for i in 1..last {
            let cand = project_in(
                points[i],
                &poly,
                t[i],
                t[i - 1],
                t[i + 1],
                config.projection_iters,
            );
            let old = (eval_unchecked(poly.points(), t[i]) - points[i]).norm_sq();
            let new = (eval_unchecked(poly.points(), cand) - points[i]).norm_sq();
            if new < old {
                t[i] = cand;
            }
        }
        loss = squared_residual(&poly, &t, points).min(loss);
        history.push(loss);

        // Control points with the parameters fixed.
        if let Ok(cand) = solve_control_points(points, &t, n, config.pin_endpoints, config.ridge) {
            let l = squared_residual(&cand, &t, points);
            if l < loss {
                poly = cand;
                loss = l;
            }
        }
        history.push(loss);

        if let Some((p2, t2, l2)) =
            joint_step(points, &poly, &t, config.pin_endpoints, &mut damping)
        {
            if l2 < loss {
                poly = p2;
                t = t2;
                loss = l2;
            }
        }
        history.push(loss);

        if before - loss < config.tolerance || loss < 1e-28 {
            break;
        }
    }
    Ok(OracleFit {
        poly,
        params: ParamVector::new(t)?,
        loss,
        history,
        alternations,
    })
}

/// One Levenberg-Marquardt step on interior control points and interior parameters.
/// Retries with heavier damping until the loss drops or the damping saturates.
fn joint_step(
    points: &[Point],
    poly: &ControlPolygon,
    t: &[f64],
    pin: bool,
    damping: &mut f64,
) -> Option<(ControlPolygon, Vec<f64>, f64)> {
    let n = poly.degree();
    let np = t.len();
    let free: Vec<usize> = if pin {
        (1..n).collect()
    } else {
        (0..=n).collect()
    };
    let nc = 2 * free.len();
    let nt = np.saturating_sub(2);
    let dim = nc + nt;
    if dim == 0 {
        return None;
    }
    let d1 = poly.derivative_points();
    let mut jac = DMatrix::<f64>::zeros(2 * np, dim);
    let mut res = DVector::<f64>::zeros(2 * np);
    for (i, (&ti, &x)) in t.iter().zip(points).enumerate() {
        let b = bernstein_all(n, ti);
        let r = eval_unchecked(poly.points(), ti) - x;
        res[2 * i] = r.x;
        res[2 * i + 1] = r.y;
        for (k, &j) in free.iter().enumerate() {
            jac[(2 * i, 2 * k)] = b[j];
            jac[(2 * i + 1, 2 * k + 1)] = b[j];
        }
        if i > 0 && i < np - 1 {
            let c1 = eval_unchecked(&d1, ti);
            jac[(2 * i, nc + i - 1)] = c1.x;
            jac[(2 * i + 1, nc + i - 1)] = c1.y;
        }
    }
    let jtj = jac.transpose() * &jac;
    let jtr = jac.transpose() * &res;
    let base = squared_residual(poly, t, points);
    for _ in 0..8 {
        let mut a = jtj.clone();
        for d in 0..dim {
            a[(d, d)] += *damping * (jtj[(d, d)] + 1e-12);
        }
        let step = match a.cholesky() {
            Some(c) => c.solve(&(-&jtr)),
            None => {
                *damping *= 10.0;
                continue;
            }
        };
        let mut ctrl = poly.points().to_vec();
        for (k, &j) in free.iter().enumerate() {
            ctrl[j] = ctrl[j] + Point::new(step[2 * k], step[2 * k + 1]);
        }
        let mut t2 = t.to_vec();
        for i in 1..np.saturating_sub(1) {
            t2[i] = (t[i] + step[nc + i - 1]).clamp(0.0, 1.0);
        }
        let sorted = t2.windows(2).all(|w| w[0] <= w[1]);
        if sorted {
            if let Ok(p2) = ControlPolygon::new(ctrl) {
                let l = squared_residual(&p2, &t2, points);
                if l < base {
                    *damping = (*damping / 3.0).max(1e-12);
                    return Some((p2, t2, l));
                }
            }
        }
        *damping = (*damping * 4.0).min(1e8);
    }
    None
}

/// Fits every degree in `n_min..=n_max`. Each degree also starts from the
/// elevated previous fit, so loss never increases with degree.
pub fn fit_degrees(
    points: &[Point],
    n_min: usize,
    n_max: usize,
    config: &OracleConfig,
) -> Result<Vec<OracleFit>, FitError> {
    let mut out: Vec<OracleFit> = Vec::new();
    for n in n_min..=n_max {
        let cold = alternate_fit(points, n, config)?;
        let best = match out.last() {
            Some(prev) => {
                let warm =
                    alternate_fit_from(points, prev.poly.elevate(), prev.params.clone(), config)?;
                if warm.loss < cold.loss {
                    warm
                } else {
                    cold
                }
            }
            None => cold,
        };
        out.push(best);
    }
    Ok(out)
}
