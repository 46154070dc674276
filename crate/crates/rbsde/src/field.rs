//! Dense per-(mode, step, node) scalar storage shared by the solvers.
//!
//! Values are stored mode-major within each time step so that a single
//! mode's values at a step form a contiguous slice (the layout the
//! conditional-expectation operators consume).

use crate::error::{Error, Result};
use crate::lattice::Lattice;

/// A scalar field indexed by (mode, time step, lattice node).
#[derive(Debug, Clone, PartialEq)]
pub struct ModeField {
    modes: usize,
    /// `values[step][mode * nodes_at_step + node]`
    values: Vec<Vec<f64>>,
}

impl ModeField {
    /// All-zero field shaped like `lattice` with `modes` components.
    pub fn zeros(modes: usize, lattice: &Lattice) -> Self {
        let values = (0..=lattice.grid().steps())
            .map(|k| vec![0.0; modes * lattice.node_count(k)])
            .collect();
        ModeField { modes, values }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn node_count(&self, step: usize) -> usize {
        self.values[step].len() / self.modes
    }

    #[inline]
    pub fn get(&self, step: usize, node: usize, mode: usize) -> f64 {
        let nodes = self.node_count(step);
        self.values[step][mode * nodes + node]
    }

    #[inline]
    pub fn set(&mut self, step: usize, node: usize, mode: usize, value: f64) {
        let nodes = self.node_count(step);
        self.values[step][mode * nodes + node] = value;
    }

    /// Contiguous per-mode slice at a step (one value per node).
    pub fn mode_slice(&self, step: usize, mode: usize) -> &[f64] {
        let nodes = self.node_count(step);
        &self.values[step][mode * nodes..(mode + 1) * nodes]
    }

    pub fn mode_slice_mut(&mut self, step: usize, mode: usize) -> &mut [f64] {
        let nodes = self.node_count(step);
        &mut self.values[step][mode * nodes..(mode + 1) * nodes]
    }

    /// Copies the mode vector at (step, node) into `out`.
    pub fn gather(&self, step: usize, node: usize, out: &mut [f64]) {
        let nodes = self.node_count(step);
        for (mode, slot) in out.iter_mut().enumerate() {
            *slot = self.values[step][mode * nodes + node];
        }
    }

    /// Values at the root node of the lattice, one per mode.
    pub fn at_origin(&self) -> Vec<f64> {
        (0..self.modes).map(|i| self.get(0, 0, i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .all(|step| step.iter().all(|v| v.is_finite()))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|step| step.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Largest absolute componentwise difference; errors on shape mismatch.
    pub fn max_abs_diff(&self, other: &ModeField) -> Result<f64> {
        self.check_same_shape(other)?;
        let mut worst = 0.0_f64;
        for (a, b) in self.values.iter().zip(&other.values) {
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
        Ok(worst)
    }

    /// Largest signed excess `self - other` (positive when self exceeds other).
    pub fn max_signed_excess(&self, other: &ModeField) -> Result<f64> {
        self.check_same_shape(other)?;
        let mut worst = f64::NEG_INFINITY;
        for (a, b) in self.values.iter().zip(&other.values) {
            for (x, y) in a.iter().zip(b) {
                worst = worst.max(x - y);
            }
        }
        Ok(worst)
    }

    /// Componentwise difference `self - other`.
    pub fn difference(&self, other: &ModeField) -> Result<ModeField> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        Ok(ModeField {
            modes: self.modes,
            values,
        })
    }

    pub fn scale(&mut self, factor: f64) {
        for step in &mut self.values {
            for v in step {
                *v *= factor;
            }
        }
    }

    fn check_same_shape(&self, other: &ModeField) -> Result<()> {
        if self.modes != other.modes || self.values.len() != other.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.modes,
                got: other.modes,
                context: "field shape",
            });
        }
        for (a, b) in self.values.iter().zip(&other.values) {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch {
                    expected: a.len(),
                    got: b.len(),
                    context: "field step length",
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Lattice, StateModel, TimeGrid};

    fn small_lattice() -> Lattice {
        let grid = TimeGrid::new(1.0, 4, 0.5).unwrap();
        Lattice::build(&StateModel::constant(vec![0.0]), grid).unwrap()
    }

    #[test]
    fn zeros_shape_matches_lattice() {
        let lat = small_lattice();
        let f = ModeField::zeros(3, &lat);
        assert_eq!(f.modes(), 3);
        assert_eq!(f.steps(), 4);
        assert_eq!(f.node_count(2), 1);
        assert!(f.is_finite());
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn get_set_roundtrip_and_gather() {
        let lat = small_lattice();
        let mut f = ModeField::zeros(2, &lat);
        f.set(1, 0, 0, 3.0);
        f.set(1, 0, 1, -4.0);
        assert_eq!(f.get(1, 0, 0), 3.0);
        let mut buf = [0.0; 2];
        f.gather(1, 0, &mut buf);
        assert_eq!(buf, [3.0, -4.0]);
        assert_eq!(f.mode_slice(1, 1), &[-4.0]);
    }

    #[test]
    fn difference_and_excess() {
        let lat = small_lattice();
        let mut a = ModeField::zeros(1, &lat);
        let mut b = ModeField::zeros(1, &lat);
        a.set(0, 0, 0, 2.0);
        b.set(0, 0, 0, 5.0);
        let d = a.difference(&b).unwrap();
        assert_eq!(d.get(0, 0, 0), -3.0);
        assert_eq!(a.max_abs_diff(&b).unwrap(), 3.0);
        assert_eq!(b.max_signed_excess(&a).unwrap(), 3.0);
    }
}
