//! Measures on the lattice and the functional pairings used to compare them.
//!
//! Grid measures store node masses (not densities): `weights[k]` is the mass
//! sitting on node k, so total mass is a plain sum and the dual-norm distance
//! between two measures on a shared lattice is the weight-wise L1 distance.
//! Empirical measures are atom lists with implied mass 1/N per atom. All
//! large-N comparisons against continuous limits go through `TestFunctional`
//! pairings, never through TV between an atomic and a continuous measure
//! (which is uninformative, about 2 regardless of N).

use crate::error::{CoreError, Result};
use crate::grid::Lattice;
use std::io::Write;

/// A nonnegative measure as node masses on a lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMeasure {
    lattice: Lattice,
    weights: Vec<f64>,
}

impl GridMeasure {
    pub fn new(lattice: Lattice, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != lattice.n_nodes() {
            return Err(CoreError::invalid(
                "weights",
                format!(
                    "expected {} node weights, got {}",
                    lattice.n_nodes(),
                    weights.len()
                ),
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(CoreError::NonFinite("grid measure weight".into()));
        }
        Ok(GridMeasure { lattice, weights })
    }

    /// Uniform probability measure (equal mass on every node).
    pub fn uniform(lattice: Lattice) -> Self {
        let n = lattice.n_nodes();
        GridMeasure {
            lattice,
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Unit point mass on one node.
    pub fn dirac_at_node(lattice: Lattice, node: usize) -> Self {
        let mut weights = vec![0.0; lattice.n_nodes()];
        weights[node] = 1.0;
        GridMeasure { lattice, weights }
    }

    /// Probability measure with node masses proportional to a density sampled
    /// at the nodes times the trapezoid cell weight.
    pub fn from_density<F: Fn(&[f64]) -> f64>(lattice: Lattice, density: F) -> Result<Self> {
        let mut buf = vec![0.0; lattice.dim()];
        let mut weights = Vec::with_capacity(lattice.n_nodes());
        for k in 0..lattice.n_nodes() {
            lattice.write_coords(k, &mut buf);
            let v = density(&buf);
            if !v.is_finite() || v < 0.0 {
                return Err(CoreError::invalid(
                    "density",
                    format!("density must be finite and nonnegative, got {v} at {buf:?}"),
                ));
            }
            weights.push(v * lattice.cell_weight(k));
        }
        let mass: f64 = weights.iter().sum();
        if mass <= 0.0 {
            return Err(CoreError::ZeroMass);
        }
        for w in &mut weights {
            *w /= mass;
        }
        Ok(GridMeasure { lattice, weights })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Barycenter of the measure. Errors on zero total mass.
    pub fn mean(&self) -> Result<Vec<f64>> {
        let mass = self.total_mass();
        if mass <= 0.0 {
            return Err(CoreError::ZeroMass);
        }
        let d = self.lattice.dim();
        let mut mean = vec![0.0; d];
        for (k, &w) in self.weights.iter().enumerate() {
            if w != 0.0 {
                for (a, m) in mean.iter_mut().enumerate() {
                    *m += w * self.lattice.coord(k, a);
                }
            }
        }
        for m in &mut mean {
            *m /= mass;
        }
        Ok(mean)
    }

    /// Dual-norm distance on a shared lattice: sum of absolute weight
    /// differences. Errors if the lattices differ.
    pub fn tv_distance(&self, other: &GridMeasure) -> Result<f64> {
        if self.lattice != other.lattice {
            return Err(CoreError::LatticeMismatch);
        }
        Ok(self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }

    /// Pairing (g, mu) = sum of nodal g times node mass.
    pub fn pair_function(&self, g: &[f64]) -> f64 {
        assert_eq!(g.len(), self.weights.len(), "grid function length mismatch");
        g.iter().zip(&self.weights).map(|(g, w)| g * w).sum()
    }

    /// CSV rows `node_index,coord...,weight`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        write!(out, "node_index")?;
        for a in 0..self.lattice.dim() {
            write!(out, ",coord{a}")?;
        }
        writeln!(out, ",weight")?;
        for (k, w) in self.weights.iter().enumerate() {
            write!(out, "{k}")?;
            for a in 0..self.lattice.dim() {
                write!(out, ",{}", self.lattice.coord(k, a))?;
            }
            writeln!(out, ",{w}")?;
        }
        Ok(())
    }
}

/// Empirical measure: n atoms of mass 1/n each, stored as a flat coordinate
/// array of stride `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(CoreError::invalid(
                "points",
                "need a non-empty flat coordinate array with length divisible by dim",
            ));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(CoreError::NonFinite("empirical atom coordinate".into()));
        }
        Ok(EmpiricalMeasure { dim, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_atoms(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.n_atoms() as f64;
        let mut mean = vec![0.0; self.dim];
        for i in 0..self.n_atoms() {
            for (a, m) in mean.iter_mut().enumerate() {
                *m += self.atom(i)[a];
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        mean
    }

    /// Splits each atom's 1/n mass onto the corners of its cell by
    /// multilinear weights. Total mass is preserved to roundoff; an atom
    /// sitting on a node deposits exactly onto that node.
    pub fn deposit(&self, lattice: &Lattice) -> Result<GridMeasure> {
        if lattice.dim() != self.dim {
            return Err(CoreError::LatticeMismatch);
        }
        let mass = 1.0 / self.n_atoms() as f64;
        let mut weights = vec![0.0; lattice.n_nodes()];
        for i in 0..self.n_atoms() {
            lattice.for_multilinear(self.atom(i), |idx, w| weights[idx] += mass * w)?;
        }
        GridMeasure::new(lattice.clone(), weights)
    }
}

/// Test functionals used for all limit comparisons: linear pairings (g, mu)
/// and their squares.
#[derive(Clone, Debug)]
pub enum TestFunctional {
    Linear { g: Vec<f64> },
    QuadraticOfLinear { g: Vec<f64> },
}

impl TestFunctional {
    pub fn g(&self) -> &[f64] {
        match self {
            TestFunctional::Linear { g } | TestFunctional::QuadraticOfLinear { g } => g,
        }
    }

    pub fn eval_grid(&self, m: &GridMeasure) -> f64 {
        let lin = m.pair_function(self.g());
        match self {
            TestFunctional::Linear { .. } => lin,
            TestFunctional::QuadraticOfLinear { .. } => lin * lin,
        }
    }

    /// Atoms are evaluated by multilinear interpolation of g on the lattice.
    pub fn eval_empirical(&self, e: &EmpiricalMeasure, lattice: &Lattice) -> Result<f64> {
        let mut acc = 0.0;
        for i in 0..e.n_atoms() {
            acc += lattice.interpolate(self.g(), e.atom(i))?;
        }
        let lin = acc / e.n_atoms() as f64;
        Ok(match self {
            TestFunctional::Linear { .. } => lin,
            TestFunctional::QuadraticOfLinear { .. } => lin * lin,
        })
    }
}

/// Time-indexed family of grid measures on a shared lattice.
#[derive(Clone, Debug)]
pub struct MeasureCurve {
    times: Vec<f64>,
    snapshots: Vec<GridMeasure>,
}

impl MeasureCurve {
    pub fn new(times: Vec<f64>, snapshots: Vec<GridMeasure>) -> Result<Self> {
        if times.is_empty() || times.len() != snapshots.len() {
            return Err(CoreError::invalid(
                "curve",
                "need equally many times and snapshots, at least one",
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) && times.len() > 1 {
            return Err(CoreError::invalid("curve.times", "times must be strictly increasing"));
        }
        let lat = snapshots[0].lattice();
        if snapshots.iter().any(|s| s.lattice() != lat) {
            return Err(CoreError::LatticeMismatch);
        }
        Ok(MeasureCurve { times, snapshots })
    }

    /// Curve frozen at a single measure over an explicit time grid.
    pub fn constant(times: Vec<f64>, m: GridMeasure) -> Result<Self> {
        let snapshots = vec![m; times.len()];
        MeasureCurve::new(times, snapshots)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn snapshots(&self) -> &[GridMeasure] {
        &self.snapshots
    }

    pub fn lattice(&self) -> &Lattice {
        self.snapshots[0].lattice()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> &GridMeasure {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &GridMeasure {
        self.snapshots.last().expect("curve is non-empty")
    }

    /// Snapshot in effect at time t: the latest snapshot with time <= t
    /// (piecewise-constant left interpolation).
    pub fn at_time(&self, t: f64) -> &GridMeasure {
        match self
            .times
            .iter()
            .rposition(|&s| s <= t + 1e-12 * self.times.last().unwrap().abs().max(1.0))
        {
            Some(i) => &self.snapshots[i],
            None => &self.snapshots[0],
        }
    }

    /// Supremum over the shared time grid of the snapshot TV distance.
    pub fn sup_tv(&self, other: &MeasureCurve) -> Result<f64> {
        if self.times.len() != other.times.len()
            || self
                .times
                .iter()
                .zip(&other.times)
                .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(CoreError::TimeGridMismatch(
                "curves must share the same time grid".into(),
            ));
        }
        let mut sup: f64 = 0.0;
        for (a, b) in self.snapshots.iter().zip(&other.snapshots) {
            sup = sup.max(a.tv_distance(b)?);
        }
        Ok(sup)
    }

    /// Snapshot-wise convex combination (1-theta)*self + theta*other, which
    /// stays a probability curve for theta in [0, 1].
    pub fn convex_combine(&self, other: &MeasureCurve, theta: f64) -> Result<MeasureCurve> {
        if self.times.len() != other.times.len() {
            return Err(CoreError::TimeGridMismatch(
                "curves must share the same time grid".into(),
            ));
        }
        let mut snapshots = Vec::with_capacity(self.snapshots.len());
        for (a, b) in self.snapshots.iter().zip(&other.snapshots) {
            if a.lattice() != b.lattice() {
                return Err(CoreError::LatticeMismatch);
            }
            let w: Vec<f64> = a
                .weights()
                .iter()
                .zip(b.weights())
                .map(|(wa, wb)| (1.0 - theta) * wa + theta * wb)
                .collect();
            snapshots.push(GridMeasure::new(a.lattice().clone(), w)?);
        }
        MeasureCurve::new(self.times.clone(), snapshots)
    }

    /// CSV rows `time,node_index,weight`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "time,node_index,weight")?;
        for (t, snap) in self.times.iter().zip(&self.snapshots) {
            for (k, w) in snap.weights().iter().enumerate() {
                writeln!(out, "{t},{k},{w}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lat101() -> Lattice {
        Lattice::unit_interval(101)
    }

    #[test]
    fn total_mass_sums_weights() {
        let m = GridMeasure::uniform(Lattice::unit_interval(5));
        assert_eq!(m.total_mass(), 1.0);
        let z = GridMeasure::new(Lattice::unit_interval(5), vec![0.0; 5]).unwrap();
        assert_eq!(z.total_mass(), 0.0);
        let m = GridMeasure::new(Lattice::unit_interval(2), vec![0.25, 0.75]).unwrap();
        assert_eq!(m.total_mass(), 1.0);
    }

    #[test]
    fn tv_distance_basic_cases() {
        let lat = Lattice::unit_interval(2);
        let a = GridMeasure::dirac_at_node(lat.clone(), 0);
        let b = GridMeasure::dirac_at_node(lat.clone(), 1);
        assert_eq!(a.tv_distance(&a).unwrap(), 0.0);
        assert_eq!(a.tv_distance(&b).unwrap(), 2.0);
        let u = GridMeasure::uniform(lat);
        assert!((u.tv_distance(&a).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tv_distance_rejects_lattice_mismatch() {
        let a = GridMeasure::uniform(Lattice::unit_interval(5));
        let b = GridMeasure::uniform(Lattice::unit_interval(7));
        assert!(matches!(
            a.tv_distance(&b),
            Err(CoreError::LatticeMismatch)
        ));
    }

    #[test]
    fn pairing_with_constant_one_is_total_mass() {
        let m = GridMeasure::from_density(lat101(), |x| (-x[0]).exp()).unwrap();
        let ones = vec![1.0; 101];
        assert!((m.pair_function(&ones) - 1.0).abs() < 1e-12);
        let f = TestFunctional::QuadraticOfLinear { g: ones };
        assert!((f.eval_grid(&m) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_pairing_interpolates_atoms() {
        let lat = lat101();
        let g: Vec<f64> = (0..101).map(|k| lat.coord(k, 0)).collect();
        let e = EmpiricalMeasure::new(1, vec![0.5]).unwrap();
        let f = TestFunctional::Linear { g };
        assert!((f.eval_empirical(&e, &lat).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn deposit_on_node_and_midpoint() {
        let lat = Lattice::unit_interval(11);
        let on_node = EmpiricalMeasure::new(1, vec![0.3]).unwrap();
        let m = on_node.deposit(&lat).unwrap();
        assert_eq!(m.weights()[3], 1.0);
        assert_eq!(m.total_mass(), 1.0);

        let mid = EmpiricalMeasure::new(1, vec![0.35]).unwrap();
        let m = mid.deposit(&lat).unwrap();
        assert!((m.weights()[3] - 0.5).abs() < 1e-12);
        assert!((m.weights()[4] - 0.5).abs() < 1e-12);

        let left = EmpiricalMeasure::new(1, vec![0.0; 4]).unwrap();
        let m = left.deposit(&lat).unwrap();
        assert_eq!(m.weights()[0], 1.0);
    }

    #[test]
    fn deposit_rejects_atoms_outside_box() {
        let lat = Lattice::unit_interval(11);
        let e = EmpiricalMeasure::new(1, vec![1.2]).unwrap();
        assert!(matches!(
            e.deposit(&lat),
            Err(CoreError::AtomOutsideBox { .. })
        ));
    }

    #[test]
    fn curve_at_time_uses_left_snapshot() {
        let lat = Lattice::unit_interval(3);
        let a = GridMeasure::dirac_at_node(lat.clone(), 0);
        let b = GridMeasure::dirac_at_node(lat.clone(), 2);
        let curve = MeasureCurve::new(vec![0.0, 1.0], vec![a.clone(), b.clone()]).unwrap();
        assert_eq!(curve.at_time(0.5).weights(), a.weights());
        assert_eq!(curve.at_time(1.0).weights(), b.weights());
        assert_eq!(curve.at_time(-0.1).weights(), a.weights());
    }

    #[test]
    fn curve_requires_increasing_times() {
        let lat = Lattice::unit_interval(3);
        let m = GridMeasure::uniform(lat);
        assert!(MeasureCurve::new(vec![0.0, 0.0], vec![m.clone(), m]).is_err());
    }

    proptest! {
        #[test]
        fn deposit_preserves_mass(atoms in proptest::collection::vec(0.0f64..=1.0, 1..40)) {
            let lat = lat101();
            let e = EmpiricalMeasure::new(1, atoms).unwrap();
            let m = e.deposit(&lat).unwrap();
            prop_assert!((m.total_mass() - 1.0).abs() < 1e-12);
            prop_assert!(m.weights().iter().all(|&w| w >= 0.0));
        }

        #[test]
        fn tv_is_a_metric(
            wa in proptest::collection::vec(0.0f64..1.0, 21),
            wb in proptest::collection::vec(0.0f64..1.0, 21),
            wc in proptest::collection::vec(0.0f64..1.0, 21),
        ) {
            let lat = Lattice::unit_interval(21);
            let a = GridMeasure::new(lat.clone(), wa).unwrap();
            let b = GridMeasure::new(lat.clone(), wb).unwrap();
            let c = GridMeasure::new(lat, wc).unwrap();
            let dab = a.tv_distance(&b).unwrap();
            let dba = b.tv_distance(&a).unwrap();
            let dac = a.tv_distance(&c).unwrap();
            let dcb = c.tv_distance(&b).unwrap();
            prop_assert!(dab >= 0.0);
            prop_assert!((dab - dba).abs() < 1e-12);
            prop_assert!(dab <= dac + dcb + 1e-12);
            prop_assert!(a.tv_distance(&a).unwrap() == 0.0);
        }

        #[test]
        fn pairing_commutes_with_deposit(
            atoms in proptest::collection::vec(0.0f64..=1.0, 1..30),
            gvals in proptest::collection::vec(-1.0f64..1.0, 101),
        ) {
            // Nodal g paired with the deposited measure equals the
            // interpolated pairing with the atoms: the deposit is the adjoint
            // of multilinear interpolation.
            let lat = lat101();
            let e = EmpiricalMeasure::new(1, atoms).unwrap();
            let f = TestFunctional::Linear { g: gvals };
            let via_grid = f.eval_grid(&e.deposit(&lat).unwrap());
            let direct = f.eval_empirical(&e, &lat).unwrap();
            prop_assert!((via_grid - direct).abs() < 1e-12);
        }
    }
}
