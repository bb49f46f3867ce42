//! Constructive smoothing layer: convolution against a compactly supported
//! bump turns Lipschitz functions into C2 functions with quantified norms,
//! and tent-hat lattice projections reduce functionals of measures to
//! finitely many variables. Together they let a merely Lipschitz feedback law
//! be replaced by a twice-differentiable one with explicit error budgets,
//! and every budget is checkable numerically: the module ends in a report
//! that evaluates each inequality on sampled seminorm estimates.
//!
//! Two distinct kernels appear. The mollifier is the smooth bump
//! c exp(-1/(1-t^2)) on (-1,1); the projection hats are piecewise-linear
//! tents, identical to the multilinear interpolation basis of `Lattice`.

use rand::Rng;
use std::io::Write as IoWrite;

use crate::error::{CoreError, Result};
use crate::grid::Lattice;
use crate::measures::{EmpiricalMeasure, GridMeasure};
use crate::rng::{stream, PURPOSE_PROBE, PURPOSE_SMOOTHING};

const QUAD_TOL: f64 = 1e-12;
const CDF_TABLE: usize = 4001;

fn bump_raw(t: f64) -> f64 {
    if t.abs() < 1.0 {
        (-1.0 / (1.0 - t * t)).exp()
    } else {
        0.0
    }
}

/// Composite Simpson on [-1,1], refined until successive halvings agree.
fn refine_integral<G: Fn(f64) -> f64>(g: G) -> f64 {
    let simpson = |n: usize| -> f64 {
        let h = 2.0 / n as f64;
        let mut acc = g(-1.0) + g(1.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * g(-1.0 + i as f64 * h);
        }
        acc * h / 3.0
    };
    let mut n = 64;
    let mut prev = simpson(n);
    loop {
        n *= 2;
        let next = simpson(n);
        if (next - prev).abs() < QUAD_TOL || n >= 1 << 22 {
            return next;
        }
        prev = next;
    }
}

/// The smoothing kernel: width, profile derivatives, precomputed moments,
/// and an inverse-CDF table for drawing profile-distributed shifts.
#[derive(Clone, Debug)]
pub struct MollifierSpec {
    delta: f64,
    norm_c: f64,
    abs_moment: f64,
    deriv_abs: f64,
    cdf_ts: Vec<f64>,
    cdf_ps: Vec<f64>,
}

impl MollifierSpec {
    pub fn standard_bump(delta: f64) -> Result<Self> {
        if !delta.is_finite() || delta <= 0.0 {
            return Err(CoreError::invalid("delta", "must be finite and > 0"));
        }
        let mass = refine_integral(bump_raw);
        let norm_c = 1.0 / mass;
        let abs_moment = norm_c * refine_integral(|t| t.abs() * bump_raw(t));
        // The profile rises to its single maximum at 0 and falls back, so the
        // total variation of chi is exactly twice its peak.
        let deriv_abs = 2.0 * norm_c * bump_raw(0.0);
        let mut cdf_ts = Vec::with_capacity(CDF_TABLE);
        let mut cdf_ps = Vec::with_capacity(CDF_TABLE);
        let h = 2.0 / (CDF_TABLE - 1) as f64;
        let mut acc = 0.0;
        let mut prev = bump_raw(-1.0);
        cdf_ts.push(-1.0);
        cdf_ps.push(0.0);
        for i in 1..CDF_TABLE {
            let t = -1.0 + i as f64 * h;
            let cur = bump_raw(t);
            acc += 0.5 * (prev + cur) * h;
            prev = cur;
            cdf_ts.push(t);
            cdf_ps.push(acc);
        }
        let total = *cdf_ps.last().unwrap();
        for p in &mut cdf_ps {
            *p /= total;
        }
        Ok(MollifierSpec {
            delta,
            norm_c,
            abs_moment,
            deriv_abs,
            cdf_ts,
            cdf_ps,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// First absolute moment of the profile.
    pub fn abs_moment(&self) -> f64 {
        self.abs_moment
    }

    /// Total variation of the profile (the integral of |chi'|).
    pub fn deriv_abs_integral(&self) -> f64 {
        self.deriv_abs
    }

    pub fn chi(&self, t: f64) -> f64 {
        self.norm_c * bump_raw(t)
    }

    pub fn chi_prime(&self, t: f64) -> f64 {
        if t.abs() >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - t * t;
        self.chi(t) * (-2.0 * t / (s * s))
    }

    pub fn chi_second(&self, t: f64) -> f64 {
        if t.abs() >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - t * t;
        let g1 = -2.0 * t / (s * s);
        let g2 = -2.0 / (s * s) - 8.0 * t * t / (s * s * s);
        self.chi(t) * (g1 * g1 + g2)
    }

    /// Inverse-CDF draw of a profile-distributed shift in (-1, 1).
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let idx = self.cdf_ps.partition_point(|&p| p < u);
        if idx == 0 {
            return self.cdf_ts[0];
        }
        if idx >= self.cdf_ps.len() {
            return *self.cdf_ts.last().unwrap();
        }
        let (p0, p1) = (self.cdf_ps[idx - 1], self.cdf_ps[idx]);
        let frac = if p1 > p0 { (u - p0) / (p1 - p0) } else { 0.0 };
        self.cdf_ts[idx - 1] + frac * (self.cdf_ts[idx] - self.cdf_ts[idx - 1])
    }
}

/// A function given by its values on a uniform lattice, evaluated elsewhere
/// by multilinear interpolation.
#[derive(Clone, Debug)]
pub struct SampledFunction {
    lattice: Lattice,
    values: Vec<f64>,
}

impl SampledFunction {
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.n_nodes() {
            return Err(CoreError::invalid(
                "values",
                "one sample per lattice node required",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("function sample".into()));
        }
        Ok(SampledFunction { lattice, values })
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(lattice: Lattice, f: F) -> Result<Self> {
        let mut buf = vec![0.0; lattice.dim()];
        let values = (0..lattice.n_nodes())
            .map(|k| {
                lattice.write_coords(k, &mut buf);
                f(&buf)
            })
            .collect();
        SampledFunction::new(lattice, values)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.lattice.interpolate(&self.values, x)
    }

    /// Exact sup norm of the interpolant (extrema sit on nodes).
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Exact l1-Lipschitz seminorm of the interpolant: the largest slope
    /// between axis-adjacent nodes.
    pub fn lip_norm(&self) -> f64 {
        let lat = &self.lattice;
        let mut worst: f64 = 0.0;
        for axis in 0..lat.dim() {
            let stride = lat.nodes_per_axis().pow(axis as u32);
            let h = lat.spacing(axis);
            for k in 0..lat.n_nodes() {
                if lat.axis_index(k, axis) + 1 < lat.nodes_per_axis() {
                    worst = worst.max((self.values[k + stride] - self.values[k]).abs() / h);
                }
            }
        }
        worst
    }
}

fn pair_slot(d: usize, a: usize, b: usize) -> usize {
    // Upper-triangle enumeration of (a, b) with a <= b.
    let (a, b) = (a.min(b), a.max(b));
    a * d - a * (a + 1) / 2 + b
}

/// Result of mollification: smoothed values plus first and second derivative
/// samples, all on the input lattice. Entries closer than one kernel radius
/// to the boundary see the clamped extension of the input; `is_interior`
/// marks the nodes where the convolution saw only genuine samples.
#[derive(Clone, Debug)]
pub struct MollifiedFunction {
    lattice: Lattice,
    values: Vec<f64>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    radii: Vec<usize>,
}

impl MollifiedFunction {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn first(&self, axis: usize) -> &[f64] {
        &self.first[axis]
    }

    pub fn second(&self, a: usize, b: usize) -> &[f64] {
        &self.second[pair_slot(self.lattice.dim(), a, b)]
    }

    pub fn is_interior(&self, flat: usize) -> bool {
        (0..self.lattice.dim()).all(|a| {
            let k = self.lattice.axis_index(flat, a);
            k >= self.radii[a] && k + self.radii[a] < self.lattice.nodes_per_axis()
        })
    }

    pub fn interior_max_abs(&self, field: &[f64]) -> f64 {
        field
            .iter()
            .enumerate()
            .filter(|(k, _)| self.is_interior(*k))
            .fold(0.0, |m, (_, v)| m.max(v.abs()))
    }
}

#[derive(Clone, Copy)]
enum KernelKind {
    Smooth,
    FirstDerivative,
    SecondDerivative,
}

fn convolve_axis(
    lattice: &Lattice,
    values: &[f64],
    axis: usize,
    kernel: &[f64],
    radius: usize,
) -> Vec<f64> {
    let n_axis = lattice.nodes_per_axis();
    let stride = n_axis.pow(axis as u32);
    let mut out = vec![0.0; values.len()];
    for (flat, slot) in out.iter_mut().enumerate() {
        let k = lattice.axis_index(flat, axis);
        let base = flat - k * stride;
        let mut acc = 0.0;
        for (i, &w) in kernel.iter().enumerate() {
            let off = i as isize - radius as isize;
            // Kernel index i carries weight chi(i h / delta) and pairs with
            // the sample at x - i h, the convolution orientation that makes
            // the odd kernels differentiate with the right sign. Beyond the
            // sample box the nearest sample is reused (clamped extension).
            let idx = (k as isize - off).clamp(0, n_axis as isize - 1) as usize;
            acc += w * values[base + idx * stride];
        }
        *slot = acc;
    }
    out
}

/// Smooth a sampled Lipschitz function by convolution with the scaled bump,
/// returning value, gradient, and Hessian samples. The sample step must
/// resolve the kernel: step <= delta/20 per axis.
pub fn mollify(f: &SampledFunction, spec: &MollifierSpec) -> Result<MollifiedFunction> {
    let lattice = f.lattice().clone();
    let d = lattice.dim();
    let delta = spec.delta();
    let required = delta / 20.0;
    let mut radii = Vec::with_capacity(d);
    let mut kernels: Vec<[Vec<f64>; 3]> = Vec::with_capacity(d);
    for a in 0..d {
        let h = lattice.spacing(a);
        if h > required * (1.0 + 1e-12) {
            return Err(CoreError::SamplingTooCoarse { step: h, required });
        }
        let r = (delta / h).ceil() as usize;
        let mut w0 = Vec::with_capacity(2 * r + 1);
        let mut w1 = Vec::with_capacity(2 * r + 1);
        let mut w2 = Vec::with_capacity(2 * r + 1);
        for i in -(r as isize)..=(r as isize) {
            let t = i as f64 * h / delta;
            w0.push(spec.chi(t) * h / delta);
            w1.push(spec.chi_prime(t) * h / (delta * delta));
            w2.push(spec.chi_second(t) * h / (delta * delta * delta));
        }
        // Calibrate the discrete kernels so the promised envelopes hold for
        // the implemented operator, not only in the quadrature limit:
        // smoothing has unit mass and exactly the profile's first absolute
        // moment (so the Lipschitz sup bound transfers verbatim), and the
        // derivative kernels annihilate constants and differentiate low
        // degrees exactly. Each correction is a relative tweak of the
        // quadrature error's size, about h^2/delta^2.
        let s0: f64 = w0.iter().sum();
        for w in &mut w0 {
            *w /= s0;
        }
        let disc_moment: f64 = w0
            .iter()
            .enumerate()
            .map(|(i, &w)| w * ((i as isize - r as isize).unsigned_abs() as f64) * h / delta)
            .sum();
        let theta = 1.0 - spec.abs_moment() / disc_moment;
        for w in &mut w0 {
            *w *= 1.0 - theta;
        }
        w0[r] += theta;
        if w0.iter().any(|&w| w < 0.0) {
            return Err(CoreError::NonFinite("mollifier kernel weight".into()));
        }
        let s1: f64 = w1.iter().sum();
        w1[r] -= s1;
        let m1: f64 = w1
            .iter()
            .enumerate()
            .map(|(i, &w)| w * (i as isize - r as isize) as f64 * h)
            .sum();
        for w in &mut w1 {
            *w /= -m1;
        }
        let s2: f64 = w2.iter().sum();
        w2[r] -= s2;
        let m2: f64 = w2
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let y = (i as isize - r as isize) as f64 * h;
                w * y * y
            })
            .sum();
        for w in &mut w2 {
            *w *= 2.0 / m2;
        }
        radii.push(r);
        kernels.push([w0, w1, w2]);
    }
    let apply = |plan: &dyn Fn(usize) -> KernelKind| -> Vec<f64> {
        let mut cur = f.values().to_vec();
        for a in 0..d {
            let kernel = match plan(a) {
                KernelKind::Smooth => &kernels[a][0],
                KernelKind::FirstDerivative => &kernels[a][1],
                KernelKind::SecondDerivative => &kernels[a][2],
            };
            cur = convolve_axis(&lattice, &cur, a, kernel, radii[a]);
        }
        cur
    };
    let values = apply(&|_| KernelKind::Smooth);
    let first: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            apply(&move |a| {
                if a == j {
                    KernelKind::FirstDerivative
                } else {
                    KernelKind::Smooth
                }
            })
        })
        .collect();
    let mut second = Vec::with_capacity(d * (d + 1) / 2);
    for a in 0..d {
        for b in a..d {
            second.push(apply(&move |axis| {
                if a == b && axis == a {
                    KernelKind::SecondDerivative
                } else if axis == a || axis == b {
                    KernelKind::FirstDerivative
                } else {
                    KernelKind::Smooth
                }
            }));
        }
    }
    Ok(MollifiedFunction {
        lattice,
        values,
        first,
        second,
        radii,
    })
}

/// Tent-hat lattice on [0, M]^d with (j+1)^d nodes. The hats are exactly the
/// multilinear interpolation basis, so projection of functions is hat
/// interpolation and projection of measures is mass splitting by hat weight.
/// Capped at d <= 2 and j <= 32: the projected functional lives on (j+1)^d
/// variables and larger parameters are not tractable downstream.
#[derive(Clone, Debug)]
pub struct LatticeProjection {
    m: f64,
    j: usize,
    d: usize,
    lattice: Lattice,
}

impl LatticeProjection {
    pub fn new(m: f64, j: usize, d: usize) -> Result<Self> {
        if !m.is_finite() || m <= 0.0 {
            return Err(CoreError::invalid("m", "box half-width must be > 0"));
        }
        if j == 0 || j > 32 {
            return Err(CoreError::invalid("j", "refinement must be in 1..=32"));
        }
        if d == 0 || d > 2 {
            return Err(CoreError::invalid("d", "dimension must be 1 or 2"));
        }
        Ok(LatticeProjection {
            m,
            j,
            d,
            lattice: Lattice::new(vec![0.0; d], vec![m; d], j + 1)?,
        })
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Value of the hat anchored at node `k`.
    pub fn hat(&self, k: usize, x: &[f64]) -> f64 {
        let scale = self.j as f64 / self.m;
        let mut prod = 1.0;
        for a in 0..self.d {
            let t = scale * (x[a] - self.lattice.coord(k, a));
            prod *= (1.0 - t.abs()).max(0.0);
        }
        prod
    }

    pub fn project_function<F: Fn(&[f64]) -> f64>(&self, f: F) -> Result<SampledFunction> {
        SampledFunction::from_fn(self.lattice.clone(), f)
    }

    pub fn project_grid_measure(&self, m: &GridMeasure) -> Result<GridMeasure> {
        let src = m.lattice();
        let mut out = vec![0.0; self.lattice.n_nodes()];
        let mut buf = vec![0.0; src.dim()];
        for (k, &w) in m.weights().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            src.write_coords(k, &mut buf);
            self.deposit_point(&buf, w, &mut out)?;
        }
        GridMeasure::new(self.lattice.clone(), out)
    }

    pub fn project_empirical(&self, e: &EmpiricalMeasure) -> Result<GridMeasure> {
        let mut out = vec![0.0; self.lattice.n_nodes()];
        let w = 1.0 / e.n_atoms() as f64;
        for i in 0..e.n_atoms() {
            self.deposit_point(e.atom(i), w, &mut out)?;
        }
        GridMeasure::new(self.lattice.clone(), out)
    }

    fn deposit_point(&self, x: &[f64], w: f64, out: &mut [f64]) -> Result<()> {
        if !self.lattice.contains(x) {
            return Err(CoreError::AtomOutsideBox { coord: x.to_vec() });
        }
        self.lattice.for_multilinear(x, |node, weight| {
            out[node] += w * weight;
        })
    }
}

/// C2 approximant of a black-box Lipschitz functional of measures: project
/// the measure to hat masses, then average the functional over bump-profile
/// shifts of those masses. Shift nodes are drawn once (seeded) and stored in
/// antithetic pairs, so affine functionals are reproduced exactly and every
/// evaluation is deterministic.
pub struct SmoothedFunctional<F> {
    functional: F,
    proj: LatticeProjection,
    delta: f64,
    shifts: Vec<f64>,
    pairs: usize,
}

pub fn smooth_functional<F: Fn(&GridMeasure) -> f64>(
    functional: F,
    proj: &LatticeProjection,
    spec: &MollifierSpec,
    mc_pairs: usize,
    seed: u64,
) -> Result<SmoothedFunctional<F>> {
    if mc_pairs == 0 {
        return Err(CoreError::invalid("mc_pairs", "need at least one pair"));
    }
    let k = proj.lattice().n_nodes();
    let mut rng = stream(seed, PURPOSE_SMOOTHING, 0);
    let shifts = (0..mc_pairs * k).map(|_| spec.sample(&mut rng)).collect();
    Ok(SmoothedFunctional {
        functional,
        proj: proj.clone(),
        delta: spec.delta(),
        shifts,
        pairs: mc_pairs,
    })
}

impl<F: Fn(&GridMeasure) -> f64> SmoothedFunctional<F> {
    pub fn eval_grid(&self, mu: &GridMeasure) -> Result<f64> {
        let xi = self.proj.project_grid_measure(mu)?;
        self.eval_masses(xi.weights())
    }

    pub fn eval_empirical(&self, e: &EmpiricalMeasure) -> Result<f64> {
        let xi = self.proj.project_empirical(e)?;
        self.eval_masses(xi.weights())
    }

    /// Evaluate directly on hat-mass coordinates.
    pub fn eval_masses(&self, xi: &[f64]) -> Result<f64> {
        let k = self.proj.lattice().n_nodes();
        if xi.len() != k {
            return Err(CoreError::invalid("xi", "one mass per projection node"));
        }
        let mut acc = 0.0;
        let mut shifted = vec![0.0; k];
        for p in 0..self.pairs {
            let z = &self.shifts[p * k..(p + 1) * k];
            for sign in [1.0, -1.0] {
                for i in 0..k {
                    shifted[i] = xi[i] - sign * self.delta * z[i];
                }
                let m = GridMeasure::new(self.proj.lattice().clone(), shifted.clone())?;
                acc += (self.functional)(&m);
            }
        }
        Ok(acc / (2 * self.pairs) as f64)
    }
}

/// Randomized lower estimate of the l1-Lipschitz seminorm on a box: pairwise
/// ratios over uniform samples and tight axis-aligned pairs, sharpened by
/// local search around the best pair found.
pub fn lipschitz_norm_estimate<F: Fn(&[f64]) -> f64>(
    f: F,
    lo: &[f64],
    hi: &[f64],
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples < 1000 {
        return Err(CoreError::InsufficientData(
            "Lipschitz estimation needs at least 1000 samples".into(),
        ));
    }
    let d = lo.len();
    if d == 0 || hi.len() != d || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(CoreError::invalid("box", "need lo < hi per axis"));
    }
    let mut rng = stream(seed, PURPOSE_PROBE, 0);
    let draw = |rng: &mut rand_chacha::ChaCha12Rng| -> Vec<f64> {
        (0..d)
            .map(|a| lo[a] + (hi[a] - lo[a]) * rng.random::<f64>())
            .collect()
    };
    let xs: Vec<Vec<f64>> = (0..samples).map(|_| draw(&mut rng)).collect();
    let vs: Vec<f64> = xs.iter().map(|x| f(x)).collect();
    let l1 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
    };
    let mut best = 0.0_f64;
    let mut best_pair = (xs[0].clone(), xs[0].clone());
    let cap = samples.min(2000);
    for i in 0..cap {
        for j in (i + 1)..cap {
            let dist = l1(&xs[i], &xs[j]);
            if dist > 1e-14 {
                let r = (vs[i] - vs[j]).abs() / dist;
                if r > best {
                    best = r;
                    best_pair = (xs[i].clone(), xs[j].clone());
                }
            }
        }
    }
    // Tight axis-aligned pairs catch steep local slopes the global pairs
    // smear out.
    for (i, x) in xs.iter().enumerate() {
        let a = i % d;
        let eps = 1e-4 * (hi[a] - lo[a]);
        let mut y = x.clone();
        y[a] = (y[a] + eps).min(hi[a]);
        let dist = l1(x, &y);
        if dist > 1e-14 {
            let r = (f(x) - f(&y)).abs() / dist;
            if r > best {
                best = r;
                best_pair = (x.clone(), y);
            }
        }
    }
    let (mut px, mut py) = best_pair;
    let mut scale = 0.05;
    for round in 0..100 {
        if round % 20 == 19 {
            scale *= 0.5;
        }
        let mut qx = px.clone();
        let mut qy = py.clone();
        for a in 0..d {
            let span = scale * (hi[a] - lo[a]);
            qx[a] = (qx[a] + span * (rng.random::<f64>() - 0.5)).clamp(lo[a], hi[a]);
            qy[a] = (qy[a] + span * (rng.random::<f64>() - 0.5)).clamp(lo[a], hi[a]);
        }
        let dist = l1(&qx, &qy);
        if dist > 1e-14 {
            let r = (f(&qx) - f(&qy)).abs() / dist;
            if r > best {
                best = r;
                px = qx;
                py = qy;
            }
        }
    }
    Ok(best)
}

/// The coupled smoothing schedule: hat refinement j = n^beta and mollifier
/// width delta = n^-(1-beta) with beta = 1/(2+d).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizationPreset {
    pub j: usize,
    pub delta: f64,
    pub beta: f64,
}

pub fn regularization_preset(n_players: usize, d: usize) -> Result<RegularizationPreset> {
    if n_players == 0 {
        return Err(CoreError::invalid("n_players", "need at least one player"));
    }
    if d == 0 || d > 2 {
        return Err(CoreError::invalid("d", "dimension must be 1 or 2"));
    }
    let beta = 1.0 / (2.0 + d as f64);
    let n = n_players as f64;
    let j = (n.powf(beta).round() as usize).clamp(1, 32);
    Ok(RegularizationPreset {
        j,
        delta: n.powf(-(1.0 - beta)),
        beta,
    })
}

/// One verified inequality: the check passes when lhs <= rhs + slack.
#[derive(Clone, Debug)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
}

impl BoundCheck {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }

    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + 1e-9 * self.rhs.abs().max(1.0)
    }
}

pub fn write_bounds_csv<W: IoWrite>(checks: &[BoundCheck], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "bound_name,lhs,rhs,margin")?;
    for c in checks {
        writeln!(out, "{},{},{},{}", c.name, c.lhs, c.rhs, c.margin())?;
    }
    Ok(())
}

fn random_sample_function(lattice: &Lattice, rng: &mut rand_chacha::ChaCha12Rng) -> SampledFunction {
    let values = (0..lattice.n_nodes())
        .map(|_| 2.0 * rng.random::<f64>() - 1.0)
        .collect();
    SampledFunction::new(lattice.clone(), values).expect("finite random samples")
}

/// Largest |(f, mu1) - (f, mu2)| over the test family: a sampled lower
/// estimate of the dual bounded-Lipschitz distance.
fn dual_estimate(family: &[SampledFunction], mu1: &GridMeasure, mu2: &GridMeasure) -> f64 {
    let pair = |f: &SampledFunction, m: &GridMeasure| -> f64 {
        let mut buf = vec![0.0; m.lattice().dim()];
        m.weights()
            .iter()
            .enumerate()
            .map(|(k, &w)| {
                m.lattice().write_coords(k, &mut buf);
                w * f.eval(&buf).expect("support inside family box")
            })
            .sum()
    };
    family
        .iter()
        .map(|f| (pair(f, mu1) - pair(f, mu2)).abs())
        .fold(0.0, f64::max)
}

fn gaussian_measure(lattice: &Lattice, center: &[f64], std: f64) -> Result<GridMeasure> {
    GridMeasure::from_density(lattice.clone(), |x| {
        let q: f64 = x
            .iter()
            .zip(center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum();
        (-q / (2.0 * std * std)).exp()
    })
}

fn mollifier_rows(d: usize, delta: f64, spec: &MollifierSpec, out: &mut Vec<BoundCheck>) -> Result<()> {
    // Local check domain: a box a few kernel widths across keeps the dense
    // convolution affordable at small delta without weakening the bound,
    // which is translation invariant.
    let side = (8.0 * delta).clamp(0.4, 1.0);
    let nodes = ((side / (delta / 20.0)).ceil() as usize + 1).max(41);
    let lattice = Lattice::new(vec![0.0; d], vec![side; d], nodes)?;
    let center = side / 2.0;
    let pyramid = SampledFunction::from_fn(lattice, |x: &[f64]| {
        x.iter().map(|v| (v - center).abs()).sum()
    })?;
    let smoothed = mollify(&pyramid, spec)?;
    let lip = 1.0;
    let sup_f = pyramid.sup_norm();
    let mut dev: f64 = 0.0;
    for (k, (a, b)) in smoothed.values().iter().zip(pyramid.values()).enumerate() {
        if smoothed.is_interior(k) {
            dev = dev.max((a - b).abs());
        }
    }
    out.push(BoundCheck {
        name: format!("mollifier_sup[d={d},delta={delta}]"),
        lhs: dev,
        rhs: d as f64 * delta * lip * spec.abs_moment(),
    });

    let sup_phi = smoothed.interior_max_abs(smoothed.values());
    let grad_sup = (0..d)
        .map(|a| smoothed.interior_max_abs(smoothed.first(a)))
        .fold(0.0, f64::max);
    let hess_sup = (0..d)
        .flat_map(|a| (a..d).map(move |b| (a, b)))
        .map(|(a, b)| smoothed.interior_max_abs(smoothed.second(a, b)))
        .fold(0.0, f64::max);
    let c1 = sup_phi + grad_sup;
    let lhs_c2 = c1 + grad_sup + hess_sup;
    out.push(BoundCheck {
        name: format!("mollifier_c2[d={d},delta={delta}]"),
        lhs: lhs_c2,
        rhs: (sup_f + lip) * (1.0 + spec.deriv_abs_integral() / delta),
    });
    Ok(())
}

fn projection_rows(
    d: usize,
    j: usize,
    seed: u64,
    out: &mut Vec<BoundCheck>,
) -> Result<()> {
    let m_box = 1.0;
    let proj = LatticeProjection::new(m_box, j, d)?;
    let fine_nodes = if d == 1 { 257 } else { 65 };
    let fine = Lattice::new(vec![0.0; d], vec![m_box; d], fine_nodes)?;
    let mut rng = stream(seed, PURPOSE_PROBE, (d * 64 + j) as u64);
    let family: Vec<SampledFunction> = (0..12).map(|_| random_sample_function(&fine, &mut rng)).collect();
    let pow2d = (1usize << d) as f64;
    let dd = d as f64;

    let mut worst_sup = BoundCheck {
        name: String::new(),
        lhs: f64::NEG_INFINITY,
        rhs: 1.0,
    };
    let mut worst_interp = worst_sup.clone();
    let mut worst_lip = worst_sup.clone();
    let mut worst_blip = worst_sup.clone();
    let mut probe = vec![0.0; d];
    for f in &family {
        let projected = proj.project_function(|x| f.eval(x).expect("x in box"))?;
        let (sup_f, lip_f) = (f.sup_norm(), f.lip_norm());
        if projected.sup_norm() - sup_f > worst_sup.lhs - worst_sup.rhs {
            worst_sup = BoundCheck {
                name: String::new(),
                lhs: projected.sup_norm(),
                rhs: sup_f,
            };
        }
        let mut dev: f64 = 0.0;
        for k in 0..fine.n_nodes() {
            fine.write_coords(k, &mut probe);
            dev = dev.max((projected.eval(&probe)? - f.values()[k]).abs());
        }
        for _ in 0..200 {
            for p in probe.iter_mut() {
                *p = m_box * rng.random::<f64>();
            }
            dev = dev.max((projected.eval(&probe)? - f.eval(&probe)?).abs());
        }
        let interp_cap = pow2d * dd * (m_box / j as f64) * lip_f;
        if dev - interp_cap > worst_interp.lhs - worst_interp.rhs {
            worst_interp = BoundCheck {
                name: String::new(),
                lhs: dev,
                rhs: interp_cap,
            };
        }
        let lip_cap = 2.0 * pow2d * dd * lip_f;
        if projected.lip_norm() - lip_cap > worst_lip.lhs - worst_lip.rhs {
            worst_lip = BoundCheck {
                name: String::new(),
                lhs: projected.lip_norm(),
                rhs: lip_cap,
            };
        }
        // Linear functionals mu -> (g, mu) have Lipschitz constant equal to
        // the bLip norm of g under the dual metric, so the functional bound
        // reduces to interpolant norms, both sides exact.
        let lhs_blip = projected.sup_norm() + projected.lip_norm();
        let rhs_blip = 2.0 * pow2d * dd * (sup_f + lip_f);
        if lhs_blip - rhs_blip > worst_blip.lhs - worst_blip.rhs {
            worst_blip = BoundCheck {
                name: String::new(),
                lhs: lhs_blip,
                rhs: rhs_blip,
            };
        }
    }
    worst_sup.name = format!("proj_sup_bound[d={d},j={j}]");
    worst_interp.name = format!("proj_interp_error[d={d},j={j}]");
    worst_lip.name = format!("proj_lip_growth[d={d},j={j}]");
    worst_blip.name = format!("proj_blip_growth[d={d},j={j}]");

    // Normalized family for dual-distance estimates. The right-hand sides
    // additionally test against the normalized projections of the family:
    // the projected measures can only be separated by coarse interpolants,
    // and those interpolants are themselves admissible test functions, so
    // including them keeps the two lower estimates comparable.
    let normalize = |f: &SampledFunction| {
        let scale = 1.0 / (f.sup_norm() + f.lip_norm()).max(1e-12);
        SampledFunction::new(
            f.lattice().clone(),
            f.values().iter().map(|v| v * scale).collect(),
        )
        .expect("finite")
    };
    let unit_family: Vec<SampledFunction> = family.iter().map(&normalize).collect();
    let mut rhs_family = unit_family.clone();
    for f in &unit_family {
        rhs_family.push(normalize(
            &proj.project_function(|x| f.eval(x).expect("x in box"))?,
        ));
    }
    let measures: Vec<GridMeasure> = (0..4)
        .map(|_| {
            let center: Vec<f64> = (0..d).map(|_| 0.2 + 0.6 * rng.random::<f64>()).collect();
            gaussian_measure(&fine, &center, 0.05 + 0.2 * rng.random::<f64>())
        })
        .collect::<Result<_>>()?;

    let mut worst_dual_dist = BoundCheck {
        name: format!("proj_dual_dist[d={d},j={j}]"),
        lhs: f64::NEG_INFINITY,
        rhs: 1.0,
    };
    let mut worst_dual_shift = BoundCheck {
        name: format!("proj_dual_shift[d={d},j={j}]"),
        lhs: f64::NEG_INFINITY,
        rhs: pow2d * dd * m_box / j as f64,
    };
    let mut worst_pairing = BoundCheck {
        name: format!("proj_pairing_error[d={d},j={j}]"),
        lhs: f64::NEG_INFINITY,
        rhs: 1.0,
    };
    let zero = GridMeasure::new(
        proj.lattice().clone(),
        vec![0.0; proj.lattice().n_nodes()],
    )?;
    let zero_fine = GridMeasure::new(fine.clone(), vec![0.0; fine.n_nodes()])?;
    for (i, mu1) in measures.iter().enumerate() {
        let p1 = proj.project_grid_measure(mu1)?;
        for mu2 in measures.iter().skip(i + 1) {
            let p2 = proj.project_grid_measure(mu2)?;
            let lhs = dual_estimate(&unit_family, &p1, &p2);
            let rhs = 2.0 * pow2d * dd * dual_estimate(&rhs_family, mu1, mu2);
            if lhs - rhs > worst_dual_dist.lhs - worst_dual_dist.rhs {
                worst_dual_dist = BoundCheck {
                    name: worst_dual_dist.name.clone(),
                    lhs,
                    rhs,
                };
            }
        }
        // Compare (f, P* mu) with (f, mu) through the shared family.
        let shift_dev = unit_family
            .iter()
            .map(|f| {
                (dual_estimate(std::slice::from_ref(f), &p1, &zero)
                    - dual_estimate(std::slice::from_ref(f), mu1, &zero_fine))
                .abs()
            })
            .fold(0.0, f64::max);
        if shift_dev - worst_dual_shift.rhs > worst_dual_shift.lhs - worst_dual_shift.rhs {
            worst_dual_shift.lhs = shift_dev;
        }
        for g in &family {
            let f_val = {
                let mut buf = vec![0.0; d];
                mu1.weights()
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| {
                        fine.write_coords(k, &mut buf);
                        w * g.eval(&buf).expect("in box")
                    })
                    .sum::<f64>()
            };
            let fj_val = {
                let mut buf = vec![0.0; d];
                p1.weights()
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| {
                        proj.lattice().write_coords(k, &mut buf);
                        w * g.eval(&buf).expect("in box")
                    })
                    .sum::<f64>()
            };
            let lhs = (fj_val - f_val).abs();
            let rhs = pow2d * dd * (m_box / j as f64) * (g.sup_norm() + g.lip_norm());
            if lhs - rhs > worst_pairing.lhs - worst_pairing.rhs {
                worst_pairing = BoundCheck {
                    name: worst_pairing.name.clone(),
                    lhs,
                    rhs,
                };
            }
        }
    }

    out.extend([
        worst_sup, worst_interp, worst_lip, worst_dual_dist, worst_blip, worst_dual_shift, worst_pairing,
    ]);
    Ok(())
}

/// Evaluate every promised approximation inequality on sampled seminorm
/// estimates: the mollifier sup bound and the C2 norm bound per (d, delta),
/// and the function/measure projection bounds per (d, j).
pub fn smoothing_bound_report(
    js: &[usize],
    deltas: &[f64],
    dims: &[usize],
    seed: u64,
) -> Result<Vec<BoundCheck>> {
    let mut out = Vec::new();
    for &d in dims {
        for &delta in deltas {
            let spec = MollifierSpec::standard_bump(delta)?;
            mollifier_rows(d, delta, &spec, &mut out)?;
        }
        for &j in js {
            projection_rows(d, j, seed, &mut out)?;
        }
    }
    Ok(out)
}
