//! Uniform rectangular lattice on a compact box, shared by every module that
//! stores grid functions or grid measures.
//!
//! Flat node indexing is row-major with axis 0 varying fastest. Quadrature is
//! trapezoidal: the cell weight of a node is the product over axes of the
//! spacing, halved on boundary nodes.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// Fraction snapping tolerance for multilinear cell location. Atoms that sit
/// on a node up to this relative offset deposit exactly onto that node.
const FRAC_SNAP: f64 = 1e-12;

/// Tolerance (relative to box width) for membership tests at the boundary.
const BOX_EDGE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    min: Vec<f64>,
    max: Vec<f64>,
    nodes_per_axis: usize,
}

impl Lattice {
    pub fn new(min: Vec<f64>, max: Vec<f64>, nodes_per_axis: usize) -> Result<Self> {
        if min.is_empty() || min.len() != max.len() {
            return Err(CoreError::invalid(
                "domain",
                "min and max must be non-empty vectors of equal dimension",
            ));
        }
        if nodes_per_axis < 2 {
            return Err(CoreError::invalid(
                "domain.nodes_per_axis",
                "need at least 2 nodes per axis",
            ));
        }
        for (a, (&lo, &hi)) in min.iter().zip(&max).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(CoreError::invalid(
                    "domain",
                    format!("axis {a}: need finite min < max, got [{lo}, {hi}]"),
                ));
            }
        }
        Ok(Lattice {
            min,
            max,
            nodes_per_axis,
        })
    }

    /// 1-d lattice on [0, 1], the desk-scale default.
    pub fn unit_interval(nodes: usize) -> Self {
        Lattice::new(vec![0.0], vec![1.0], nodes).expect("unit interval is valid")
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes_per_axis.pow(self.dim() as u32)
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.max[axis] - self.min[axis]) / (self.nodes_per_axis - 1) as f64
    }

    /// Coordinate of a flat node index along one axis.
    pub fn coord(&self, flat: usize, axis: usize) -> f64 {
        let k = self.axis_index(flat, axis);
        self.min[axis] + k as f64 * self.spacing(axis)
    }

    /// Multi-index component along `axis` of flat index `flat`.
    pub fn axis_index(&self, flat: usize, axis: usize) -> usize {
        (flat / self.nodes_per_axis.pow(axis as u32)) % self.nodes_per_axis
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let mut flat = 0;
        let mut stride = 1;
        for &k in multi {
            flat += k * stride;
            stride *= self.nodes_per_axis;
        }
        flat
    }

    /// Writes the full coordinate vector of a node into `buf`.
    pub fn write_coords(&self, flat: usize, buf: &mut [f64]) {
        for a in 0..self.dim() {
            buf[a] = self.coord(flat, a);
        }
    }

    pub fn node_coords(&self, flat: usize) -> Vec<f64> {
        let mut buf = vec![0.0; self.dim()];
        self.write_coords(flat, &mut buf);
        buf
    }

    /// Trapezoid quadrature weight of a node (product over axes, halved at
    /// boundary nodes).
    pub fn cell_weight(&self, flat: usize) -> f64 {
        let mut w = 1.0;
        for a in 0..self.dim() {
            let k = self.axis_index(flat, a);
            let h = self.spacing(a);
            w *= if k == 0 || k == self.nodes_per_axis - 1 {
                0.5 * h
            } else {
                h
            };
        }
        w
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(a, &v)| {
                let tol = BOX_EDGE_TOL * (self.max[a] - self.min[a]);
                v >= self.min[a] - tol && v <= self.max[a] + tol
            })
    }

    /// Visits the corners of the cell containing `x` with their multilinear
    /// weights. Weights are nonnegative and sum to 1 up to roundoff; fractions
    /// within `FRAC_SNAP` of a node are snapped so on-node points deposit
    /// exactly.
    pub fn for_multilinear<F: FnMut(usize, f64)>(&self, x: &[f64], mut visit: F) -> Result<()> {
        if !self.contains(x) {
            return Err(CoreError::AtomOutsideBox { coord: x.to_vec() });
        }
        let d = self.dim();
        debug_assert!(d <= 16, "multilinear visitor uses a 2^d corner walk");
        let mut base = [0usize; 16];
        let mut frac = [0.0f64; 16];
        for a in 0..d {
            let h = self.spacing(a);
            let rel = ((x[a] - self.min[a]) / h).clamp(0.0, (self.nodes_per_axis - 1) as f64);
            let mut cell = rel.floor() as usize;
            if cell > self.nodes_per_axis - 2 {
                cell = self.nodes_per_axis - 2;
            }
            let mut f = rel - cell as f64;
            if f < FRAC_SNAP {
                f = 0.0;
            } else if f > 1.0 - FRAC_SNAP {
                f = 1.0;
            }
            base[a] = cell;
            frac[a] = f;
        }
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0;
            let mut stride = 1;
            for a in 0..d {
                let hi = (corner >> a) & 1 == 1;
                w *= if hi { frac[a] } else { 1.0 - frac[a] };
                flat += (base[a] + hi as usize) * stride;
                stride *= self.nodes_per_axis;
            }
            if w != 0.0 {
                visit(flat, w);
            }
        }
        Ok(())
    }

    /// Multilinear interpolation of nodal values at an arbitrary point.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        self.for_multilinear(x, |idx, w| acc += w * values[idx])?;
        Ok(acc)
    }
}
