use crate::error::OracleError;

/// Uniform axis `lo, lo + h, ..., hi` with `n` nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self, OracleError> {
        if n < 2 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(OracleError::InvalidGame(format!(
                "axis needs n >= 2 and lo < hi, got [{lo}, {hi}] with {n} nodes"
            )));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn value(&self, j: usize) -> f64 {
        if j + 1 == self.n {
            self.hi
        } else {
            self.lo + j as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.value(j)).collect()
    }

    /// Left cell index and weight of the right node; clamps outside the range.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let pos = (x - self.lo) / self.step();
        if !(pos > 0.0) {
            return (0, 0.0);
        }
        let last = (self.n - 2) as f64;
        if pos >= last + 1.0 {
            return (self.n - 2, 1.0);
        }
        let j = pos.floor().min(last);
        (j as usize, pos - j)
    }

    /// Index of the nearest node.
    pub fn nearest(&self, x: f64) -> usize {
        let (j, w) = self.locate(x);
        if w > 0.5 {
            j + 1
        } else {
            j
        }
    }

    /// Twice the resolution on the same range.
    pub fn refined(&self) -> Self {
        Self {
            n: 2 * (self.n - 1) + 1,
            ..*self
        }
    }
}

/// Tensor grid of price times one inventory axis per agent.
///
/// Tables are stored price-major, then inventories with the last agent fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid {
    pub price: Axis,
    pub inventories: Vec<Axis>,
    strides: Vec<usize>,
    inv_size: usize,
}

impl StateGrid {
    pub fn new(price: Axis, inventories: Vec<Axis>) -> Self {
        let mut strides = vec![1; inventories.len()];
        for d in (0..inventories.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * inventories[d + 1].n;
        }
        let inv_size = inventories.iter().map(|a| a.n).product();
        Self {
            price,
            inventories,
            strides,
            inv_size,
        }
    }

    pub fn inv_size(&self) -> usize {
        self.inv_size
    }

    pub fn size(&self) -> usize {
        self.price.n * self.inv_size
    }

    /// Inventories at flat inventory index `idx`.
    pub fn inventory_point(&self, idx: usize, out: &mut [f64]) {
        for (d, axis) in self.inventories.iter().enumerate() {
            out[d] = axis.value((idx / self.strides[d]) % axis.n);
        }
    }

    pub fn nearest_inventory_index(&self, x: &[f64]) -> usize {
        self.inventories
            .iter()
            .zip(&self.strides)
            .zip(x)
            .map(|((a, s), &v)| a.nearest(v) * s)
            .sum()
    }

    /// Multilinear interpolation of an inventory-only table.
    pub fn interp_inventory(&self, table: &[f64], x: &[f64]) -> f64 {
        let dims = self.inventories.len();
        let mut cells = [(0usize, 0.0f64); 8];
        let mut base = 0;
        for d in 0..dims {
            let (j, w) = self.inventories[d].locate(x[d]);
            cells[d] = (j, w);
            base += j * self.strides[d];
        }
        let mut total = 0.0;
        for corner in 0..(1usize << dims) {
            let mut weight = 1.0;
            let mut idx = base;
            for (d, &(_, w)) in cells.iter().enumerate().take(dims) {
                if corner >> d & 1 == 1 {
                    weight *= w;
                    idx += self.strides[d];
                } else {
                    weight *= 1.0 - w;
                }
            }
            if weight != 0.0 {
                total += weight * table[idx];
            }
        }
        total
    }

    /// Multilinear interpolation of a full table at `(price, x)`.
    pub fn interp(&self, table: &[f64], price: f64, x: &[f64]) -> f64 {
        let (j, w) = self.price.locate(price);
        let lo = self.interp_inventory(&table[j * self.inv_size..(j + 1) * self.inv_size], x);
        if w == 0.0 {
            return lo;
        }
        let hi = self.interp_inventory(&table[(j + 1) * self.inv_size..(j + 2) * self.inv_size], x);
        (1.0 - w) * lo + w * hi
    }

    pub fn refined(&self) -> Self {
        Self::new(self.price.refined(), self.inventories.iter().map(Axis::refined).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn axis_locate_and_clamp() {
        let a = Axis::new(-1.0, 1.0, 5).unwrap();
        assert_eq!(a.nodes(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(a.locate(-3.0), (0, 0.0));
        assert_eq!(a.locate(3.0), (3, 1.0));
        let (j, w) = a.locate(0.25);
        assert_eq!(j, 2);
        assert!((w - 0.5).abs() < 1e-12);
        assert_eq!(a.nearest(0.3), 3);
        assert_eq!(a.refined().n, 9);
        assert!(Axis::new(1.0, 1.0, 3).is_err());
    }

    proptest! {
        /// Multilinear interpolation reproduces affine functions exactly.
        #[test]
        fn affine_functions_are_exact(c in proptest::collection::vec(-5.0f64..5.0, 4), p in 40.0f64..60.0, x0 in -2.0f64..8.0, x1 in -2.0f64..8.0, x2 in -2.0f64..8.0) {
            let grid = StateGrid::new(
                Axis::new(40.0, 60.0, 5).unwrap(),
                vec![Axis::new(-2.0, 8.0, 6).unwrap(), Axis::new(-2.0, 8.0, 4).unwrap(), Axis::new(-2.0, 8.0, 3).unwrap()],
            );
            let f = |s: f64, x: &[f64]| c[0] * s + c[1] * x[0] + c[2] * x[1] + c[3] * x[2];
            let mut table = vec![0.0; grid.size()];
            let mut pt = vec![0.0; 3];
            for j in 0..grid.price.n {
                for idx in 0..grid.inv_size() {
                    grid.inventory_point(idx, &mut pt);
                    table[j * grid.inv_size() + idx] = f(grid.price.value(j), &pt);
                }
            }
            let x = [x0, x1, x2];
            prop_assert!((grid.interp(&table, p, &x) - f(p, &x)).abs() < 1e-9);
        }
    }
}
