//! Convex-hull separation and distance.
//!
//! Every query reduces to the minimum-norm point of the Minkowski difference
//! `conv(A) - conv(B)`, whose vertices are the differences `a_i - b_j`. The
//! kernel is Wolfe's minimum-norm-point method: it keeps a small affinely
//! independent "corral" of difference vertices, alternates a linear
//! minimization step with affine projections, and stops on the Frank-Wolfe
//! duality gap. The linear step never enumerates the `n * m` differences; it
//! splits into an argmin over `A` and an argmax over `B`.
//!
//! The minimizer comes out as a convex combination of difference vertices,
//! which gives witness points in both hulls and a max-margin certificate.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point set is empty")]
    Empty,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("kernel hit the iteration cap ({iterations}) with relative gap {gap:e}")]
    IterationCap { iterations: usize, gap: f64 },
}

/// Numeric tolerances of the separation kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Hulls closer than `separation * (1 + diameter)` count as overlapping.
    pub separation: f64,
    /// Relative duality gap at which the kernel stops.
    pub gap: f64,
    /// Slack allowed when checking certificates and witnesses.
    pub certificate: f64,
    pub max_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            separation: 1e-7,
            gap: 1e-9,
            certificate: 1e-6,
            max_iterations: 100_000,
        }
    }
}

impl Tolerances {
    pub fn separation_threshold(&self, diameter: f64) -> f64 {
        self.separation * (1.0 + diameter)
    }
}

/// `normal · x + offset`; positive on the first set's side.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Hyperplane {
    pub fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.normal, x) + self.offset
    }

    pub fn norm(&self) -> f64 {
        dot(&self.normal, &self.normal).sqrt()
    }

    /// Smallest signed distance of either set to the plane, `a` expected on
    /// the positive side and `b` on the negative side.
    pub fn geometric_margin(&self, a: &[&[f64]], b: &[&[f64]]) -> f64 {
        let pos = a.iter().map(|p| self.eval(p)).fold(f64::INFINITY, f64::min);
        let neg = b
            .iter()
            .map(|p| -self.eval(p))
            .fold(f64::INFINITY, f64::min);
        pos.min(neg) / self.norm()
    }
}

/// A point of a hull together with its convex-combination weights over the
/// input points.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub point: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Witness {
    pub fn reconstruct(&self, set: &[&[f64]]) -> Vec<f64> {
        let mut out = vec![0.0; set.first().map_or(0, |p| p.len())];
        for (w, p) in self.weights.iter().zip(set) {
            if *w != 0.0 {
                axpy(&mut out, *w, p);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    pub separable: bool,
    pub distance: f64,
    /// The `τ_sep` used for the verdict.
    pub threshold: f64,
    /// Present iff `separable`; scaled so the closest points of each set sit
    /// at `+1` and `-1`.
    pub certificate: Option<Hyperplane>,
    pub witness_a: Witness,
    pub witness_b: Witness,
    pub iterations: usize,
}

/// Euclidean distance between `conv(a)` and `conv(b)` with witnesses and,
/// when the hulls are disjoint, a separating certificate.
pub fn hull_distance(
    a: &[&[f64]],
    b: &[&[f64]],
    tol: &Tolerances,
) -> Result<SeparationResult, GeometryError> {
    check_inputs(a, b)?;
    let swapped = cmp_sets(a, b) == Ordering::Greater;
    let (first, second) = if swapped { (b, a) } else { (a, b) };

    let scale = bbox_diagonal(first, second);
    let threshold = tol.separation_threshold(scale);
    let sol = min_norm_point(first, second, scale, Goal::Distance, tol)?;

    let mut alpha = vec![0.0; first.len()];
    let mut beta = vec![0.0; second.len()];
    for (&(i, j), &l) in sol.corral.iter().zip(&sol.lambda) {
        alpha[i] += l;
        beta[j] += l;
    }
    let wa = witness(alpha, first);
    let wb = witness(beta, second);

    let distance = norm(&sol.x);
    let separable = distance > threshold;
    let certificate = separable.then(|| certificate(&sol.x, first, second, &wa.point, &wb.point));

    let (witness_a, witness_b, certificate) = if swapped {
        let flipped = certificate.map(|h| Hyperplane {
            normal: h.normal.iter().map(|v| -v).collect(),
            offset: -h.offset,
        });
        (wb, wa, flipped)
    } else {
        (wa, wb, certificate)
    };

    Ok(SeparationResult {
        separable,
        distance,
        threshold,
        certificate,
        witness_a,
        witness_b,
        iterations: sol.iterations,
    })
}

/// Decides whether the hulls of `a` and `b` can be strictly separated, i.e.
/// whether `w·a + b ≥ 1` on `a` and `w·x + b ≤ -1` on `b` is feasible for
/// some `(w, b)`.
pub fn separation_feasible(
    a: &[&[f64]],
    b: &[&[f64]],
    tol: &Tolerances,
) -> Result<SeparationResult, GeometryError> {
    hull_distance(a, b, tol)
}

/// Distance from `x` to `conv(a)`; zero (up to `τ_sep`) when `x` is inside.
/// The point is reported as `witness_a`.
pub fn point_hull_distance(
    x: &[f64],
    a: &[&[f64]],
    tol: &Tolerances,
) -> Result<SeparationResult, GeometryError> {
    hull_distance(&[x], a, tol)
}

/// Verdict-only overlap test. Stops as soon as the kernel's lower bound on
/// the distance exceeds `τ_sep` or its current iterate drops below it, so it
/// is much cheaper than [`hull_distance`] away from the knife edge.
pub fn hulls_overlap(a: &[&[f64]], b: &[&[f64]], tol: &Tolerances) -> Result<bool, GeometryError> {
    check_inputs(a, b)?;
    let (first, second) = if cmp_sets(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    let scale = bbox_diagonal(first, second);
    let threshold = tol.separation_threshold(scale);
    let sol = min_norm_point(first, second, scale, Goal::Verdict { threshold }, tol)?;
    Ok(match sol.early {
        Some(separable) => !separable,
        None => norm(&sol.x) <= threshold,
    })
}

fn check_inputs(a: &[&[f64]], b: &[&[f64]]) -> Result<(), GeometryError> {
    let dim = a.first().ok_or(GeometryError::Empty)?.len();
    if b.is_empty() {
        return Err(GeometryError::Empty);
    }
    for p in a.iter().chain(b) {
        if p.len() != dim {
            return Err(GeometryError::DimMismatch {
                expected: dim,
                found: p.len(),
            });
        }
    }
    if dim == 0 {
        return Err(GeometryError::Empty);
    }
    Ok(())
}

/// Total order on point sets so that argument order never changes results.
fn cmp_sets(a: &[&[f64]], b: &[&[f64]]) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        a.iter()
            .flat_map(|p| p.iter())
            .zip(b.iter().flat_map(|p| p.iter()))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Diagonal of the axis-aligned bounding box of `a ∪ b`.
pub fn bbox_diagonal(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    let dim = a[0].len();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in a.iter().chain(b) {
        for k in 0..dim {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    lo.iter()
        .zip(&hi)
        .map(|(l, h)| (h - l) * (h - l))
        .sum::<f64>()
        .sqrt()
}

fn witness(weights: Vec<f64>, set: &[&[f64]]) -> Witness {
    let mut w = Witness {
        point: Vec::new(),
        weights,
    };
    w.point = w.reconstruct(set);
    w
}

/// Max-margin plane from the witness segment, rescaled so the extreme points
/// of each set meet the `±1` constraints.
fn certificate(u: &[f64], a: &[&[f64]], b: &[&[f64]], wa: &[f64], wb: &[f64]) -> Hyperplane {
    let min_a = a.iter().map(|p| dot(u, p)).fold(f64::INFINITY, f64::min);
    let max_b = b
        .iter()
        .map(|p| dot(u, p))
        .fold(f64::NEG_INFINITY, f64::max);
    let spread = min_a - max_b;
    if spread > 0.0 {
        return Hyperplane {
            normal: u.iter().map(|v| 2.0 * v / spread).collect(),
            offset: -(min_a + max_b) / spread,
        };
    }
    let d2 = dot(u, u);
    let normal: Vec<f64> = u.iter().map(|v| 2.0 * v / d2).collect();
    let mid: Vec<f64> = wa.iter().zip(wb).map(|(x, y)| 0.5 * (x + y)).collect();
    let offset = -dot(&normal, &mid);
    Hyperplane { normal, offset }
}

#[derive(Clone, Copy)]
enum Goal {
    Distance,
    Verdict { threshold: f64 },
}

struct KernelSolution {
    corral: Vec<(usize, usize)>,
    lambda: Vec<f64>,
    x: Vec<f64>,
    iterations: usize,
    early: Option<bool>,
}

/// Iterates with `‖x‖ ≤ ZERO_NORM * scale` are treated as the origin.
const ZERO_NORM: f64 = 1e-14;
/// Absolute duality-gap floor, relative to `scale²`.
const GAP_FLOOR: f64 = 1e-20;

fn min_norm_point(
    a: &[&[f64]],
    b: &[&[f64]],
    scale: f64,
    goal: Goal,
    tol: &Tolerances,
) -> Result<KernelSolution, GeometryError> {
    let dim = a[0].len();
    let scale2 = scale * scale;

    let ca = centroid(a);
    let cb = centroid(b);
    let i0 = nearest(a, &cb);
    let j0 = nearest(b, &ca);
    let mut corral = vec![(i0, j0)];
    let mut verts = vec![diff(a[i0], b[j0])];
    let mut lambda = vec![1.0];
    let mut x = verts[0].clone();
    let mut iterations = 0;
    let mut early = None;

    loop {
        iterations += 1;
        let x2 = dot(&x, &x);
        if x2 <= (ZERO_NORM * scale).powi(2) {
            break;
        }
        let (i, min_a) = extreme(a, &x, |s, best| s < best);
        let (j, max_b) = extreme(b, &x, |s, best| s > best);
        let xv = min_a - max_b;
        let gap = x2 - xv;

        if let Goal::Verdict { threshold } = goal {
            let xn = x2.sqrt();
            if xv / xn > threshold {
                early = Some(true);
                break;
            }
            if xn <= threshold {
                early = Some(false);
                break;
            }
        }
        if gap <= tol.gap * x2 || gap <= GAP_FLOOR * scale2 {
            break;
        }
        if iterations >= tol.max_iterations {
            return Err(GeometryError::IterationCap {
                iterations,
                gap: gap / x2,
            });
        }
        if corral.contains(&(i, j)) {
            break;
        }
        corral.push((i, j));
        verts.push(diff(a[i], b[j]));
        lambda.push(0.0);

        // Minor cycle: move toward the affine minimizer of the corral,
        // dropping vertices whose weight hits zero.
        loop {
            iterations += 1;
            if iterations >= tol.max_iterations {
                return Err(GeometryError::IterationCap {
                    iterations,
                    gap: gap / x2,
                });
            }
            let mu = affine_minimizer(&verts, dim);
            if mu.iter().all(|&m| m > 0.0) {
                lambda = mu;
                break;
            }
            let mut theta = f64::INFINITY;
            let mut leaving = 0;
            for (k, (&l, &m)) in lambda.iter().zip(&mu).enumerate() {
                if m <= 0.0 {
                    let t = l / (l - m);
                    if t < theta {
                        theta = t;
                        leaving = k;
                    }
                }
            }
            let theta = theta.clamp(0.0, 1.0);
            for (l, m) in lambda.iter_mut().zip(&mu) {
                *l = (1.0 - theta) * *l + theta * m;
            }
            lambda[leaving] = 0.0;
            let mut k = 0;
            while k < lambda.len() {
                if lambda[k] <= 0.0 {
                    lambda.remove(k);
                    verts.remove(k);
                    corral.remove(k);
                } else {
                    k += 1;
                }
            }
            let total: f64 = lambda.iter().sum();
            lambda.iter_mut().for_each(|l| *l /= total);
        }

        let next = combine(&verts, &lambda, dim);
        if dot(&next, &next) >= x2 {
            // Numerical stall: the corral no longer improves on x.
            x = next;
            break;
        }
        x = next;
    }

    Ok(KernelSolution {
        corral,
        lambda,
        x,
        iterations,
        early,
    })
}

/// Weights `μ` (summing to one) of the minimum-norm point of the affine hull
/// of `verts`, by least squares on the edge vectors from the first vertex.
fn affine_minimizer(verts: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let k = verts.len();
    if k == 1 {
        return vec![1.0];
    }
    let base = &verts[0];
    let edges = DMatrix::from_fn(dim, k - 1, |r, c| verts[c + 1][r] - base[r]);
    let rhs = DVector::from_fn(dim, |r, _| -base[r]);
    let svd = edges.svd(true, true);
    let smax = svd.singular_values.max();
    let coef = svd
        .solve(&rhs, smax * 1e-13)
        .unwrap_or_else(|_| DVector::zeros(k - 1));
    let mut mu = Vec::with_capacity(k);
    mu.push(1.0 - coef.sum());
    mu.extend(coef.iter().copied());
    mu
}

fn extreme(set: &[&[f64]], x: &[f64], better: impl Fn(f64, f64) -> bool) -> (usize, f64) {
    let mut best = (0, dot(set[0], x));
    for (k, p) in set.iter().enumerate().skip(1) {
        let s = dot(p, x);
        if better(s, best.1) {
            best = (k, s);
        }
    }
    best
}

fn nearest(set: &[&[f64]], target: &[f64]) -> usize {
    let mut best = (0, sq_dist(set[0], target));
    for (k, p) in set.iter().enumerate().skip(1) {
        let d = sq_dist(p, target);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

fn combine(verts: &[Vec<f64>], lambda: &[f64], dim: usize) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    for (v, &l) in verts.iter().zip(lambda) {
        axpy(&mut x, l, v);
    }
    x
}

pub(crate) fn centroid(set: &[&[f64]]) -> Vec<f64> {
    let mut c = vec![0.0; set[0].len()];
    for p in set {
        axpy(&mut c, 1.0, p);
    }
    let n = set.len() as f64;
    c.iter_mut().for_each(|v| *v /= n);
    c
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn diff(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

fn axpy(acc: &mut [f64], s: f64, x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, v)| *a += s * v);
}
