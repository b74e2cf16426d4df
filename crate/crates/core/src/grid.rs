//! Domain geometry, the grid-element sub-grid and the cost field.
//!
//! Grid elements are the uncuttable rectangular units every partitioner
//! works with. A [`CostField`] stores one cost per element,
//! `particles + beta * finite_elements`, together with 2D prefix sums so
//! that the cost of any element rectangle is an O(1) query.

use std::fmt;

use crate::error::{Error, Result};

/// Periodic rectangular domain `[0, lx) x [0, ly)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    lx: f64,
    ly: f64,
}

impl Domain {
    pub fn new(lx: f64, ly: f64) -> Result<Self> {
        if !(lx > 0.0 && lx.is_finite() && ly > 0.0 && ly.is_finite()) {
            return Err(Error::Geometry(format!("domain extents must be positive, got {lx} x {ly}")));
        }
        Ok(Domain { lx, ly })
    }

    pub fn unit() -> Self {
        Domain { lx: 1.0, ly: 1.0 }
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    /// Maps a position onto its periodic image in `[0, lx) x [0, ly)`.
    pub fn wrap(&self, x: f64, y: f64) -> (f64, f64) {
        (wrap_coord(x, self.lx), wrap_coord(y, self.ly))
    }
}

#[inline]
pub(crate) fn wrap_coord(v: f64, l: f64) -> f64 {
    if (0.0..l).contains(&v) {
        return v;
    }
    let w = v.rem_euclid(l);
    // rem_euclid rounds tiny negative values up to exactly `l`
    if w >= l {
        0.0
    } else {
        w
    }
}

/// Cartesian axis of the element grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn other(self) -> Axis {
        match self {
            Axis::X => Axis::Y,
            Axis::Y => Axis::X,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
        })
    }
}

/// The regular sub-grid of `gx x gy` grid elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridElementGrid {
    gx: usize,
    gy: usize,
}

impl GridElementGrid {
    pub fn new(gx: usize, gy: usize) -> Result<Self> {
        if gx == 0 || gy == 0 {
            return Err(Error::Geometry(format!("grid element counts must be positive, got {gx} x {gy}")));
        }
        Ok(GridElementGrid { gx, gy })
    }

    pub fn gx(&self) -> usize {
        self.gx
    }

    pub fn gy(&self) -> usize {
        self.gy
    }

    pub fn len(&self) -> usize {
        self.gx * self.gy
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major (x fastest) flat index of element `(i, j)`.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.gx + i
    }

    pub fn full_rect(&self) -> ElementRect {
        ElementRect::new(0, self.gx, 0, self.gy)
    }

    pub fn element_size(&self, dom: &Domain) -> (f64, f64) {
        (dom.lx / self.gx as f64, dom.ly / self.gy as f64)
    }

    /// Index of the element containing `pos`, after periodic wrapping.
    ///
    /// Element intervals are half-open, so a point on an interior edge
    /// belongs to the element above/right of it.
    pub fn locate(&self, x: f64, y: f64, dom: &Domain) -> (usize, usize) {
        let (x, y) = dom.wrap(x, y);
        // wrapped coordinates are non-negative, so the cast floors
        let i = ((x * self.gx as f64 / dom.lx) as usize).min(self.gx - 1);
        let j = ((y * self.gy as f64 / dom.ly) as usize).min(self.gy - 1);
        (i, j)
    }
}

/// Free-function form of [`GridElementGrid::locate`].
pub fn locate_grid_element(pos: (f64, f64), geg: &GridElementGrid, dom: &Domain) -> (usize, usize) {
    geg.locate(pos.0, pos.1, dom)
}

/// Node-centred periodic field grid with `nx x ny` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldGrid {
    nx: usize,
    ny: usize,
}

impl FieldGrid {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Geometry(format!("field grid needs at least 2 nodes per axis, got {nx} x {ny}")));
        }
        Ok(FieldGrid { nx, ny })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, dom: &Domain) -> (f64, f64) {
        (dom.lx / self.nx as f64, dom.ly / self.ny as f64)
    }

    /// Field cells per grid element along each axis. Fails unless the
    /// element grid divides the field grid exactly.
    pub fn cells_per_element(&self, geg: &GridElementGrid) -> Result<(usize, usize)> {
        if !self.nx.is_multiple_of(geg.gx) || !self.ny.is_multiple_of(geg.gy) {
            return Err(Error::Geometry(format!(
                "field grid {}x{} is not divisible by element grid {}x{}",
                self.nx, self.ny, geg.gx, geg.gy
            )));
        }
        Ok((self.nx / geg.gx, self.ny / geg.gy))
    }
}

/// Half-open rectangle of element indices `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ElementRect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl ElementRect {
    pub const fn new(x0: usize, x1: usize, y0: usize, y1: usize) -> Self {
        ElementRect { x0, x1, y0, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn extent(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.width(),
            Axis::Y => self.height(),
        }
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.x0..self.x1).contains(&i) && (self.y0..self.y1).contains(&j)
    }

    /// Lower coordinate along `axis`.
    pub fn start(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.x0,
            Axis::Y => self.y0,
        }
    }

    /// Splits at the absolute element boundary `at` along `axis`.
    pub fn split_at(&self, axis: Axis, at: usize) -> (ElementRect, ElementRect) {
        match axis {
            Axis::X => (ElementRect { x1: at, ..*self }, ElementRect { x0: at, ..*self }),
            Axis::Y => (ElementRect { y1: at, ..*self }, ElementRect { y0: at, ..*self }),
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y1).flat_map(move |j| (self.x0..self.x1).map(move |i| (i, j)))
    }
}

impl fmt::Display for ElementRect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})x[{},{})", self.x0, self.x1, self.y0, self.y1)
    }
}

/// Per-element cost `p + beta * f` with prefix sums for rectangle queries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostField {
    geg: GridElementGrid,
    particles: Vec<u64>,
    finite_elements: Vec<u64>,
    beta: f64,
    // (gx + 1) x (gy + 1), prefix[(j) * (gx + 1) + i] = cost of [0,i) x [0,j)
    prefix: Vec<f64>,
}

impl CostField {
    pub fn new(geg: GridElementGrid, particles: Vec<u64>, finite_elements: Vec<u64>, beta: f64) -> Result<Self> {
        if particles.len() != geg.len() || finite_elements.len() != geg.len() {
            return Err(Error::Geometry(format!(
                "cost arrays must have {} entries, got {} and {}",
                geg.len(),
                particles.len(),
                finite_elements.len()
            )));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Geometry(format!("beta must be a non-negative number, got {beta}")));
        }
        let mut cf = CostField { geg, particles, finite_elements, beta, prefix: Vec::new() };
        cf.rebuild();
        Ok(cf)
    }

    /// Cost field with `beta = 0`, i.e. cost = particle count.
    pub fn from_counts(geg: GridElementGrid, particles: Vec<u64>) -> Result<Self> {
        let n = geg.len();
        CostField::new(geg, particles, vec![0; n], 0.0)
    }

    /// Uniform cost of `value` particles per element.
    pub fn uniform(geg: GridElementGrid, value: u64) -> Self {
        CostField::from_counts(geg, vec![value; geg.len()]).expect("lengths match")
    }

    pub fn grid(&self) -> GridElementGrid {
        self.geg
    }

    pub fn gx(&self) -> usize {
        self.geg.gx
    }

    pub fn gy(&self) -> usize {
        self.geg.gy
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn particle_counts(&self) -> &[u64] {
        &self.particles
    }

    pub fn finite_element_counts(&self) -> &[u64] {
        &self.finite_elements
    }

    /// Replaces the particle counts and rebuilds the prefix table.
    pub fn set_particle_counts(&mut self, particles: Vec<u64>) -> Result<()> {
        if particles.len() != self.geg.len() {
            return Err(Error::Geometry(format!(
                "cost arrays must have {} entries, got {}",
                self.geg.len(),
                particles.len()
            )));
        }
        self.particles = particles;
        self.rebuild();
        Ok(())
    }

    fn rebuild(&mut self) {
        let (gx, gy) = (self.geg.gx, self.geg.gy);
        let stride = gx + 1;
        let mut prefix = vec![0.0; stride * (gy + 1)];
        for j in 0..gy {
            let mut row = 0.0;
            for i in 0..gx {
                row += self.cost(i, j);
                prefix[(j + 1) * stride + i + 1] = prefix[j * stride + i + 1] + row;
            }
        }
        self.prefix = prefix;
    }

    #[inline]
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        let k = self.geg.index(i, j);
        self.particles[k] as f64 + self.beta * self.finite_elements[k] as f64
    }

    pub fn total(&self) -> f64 {
        self.prefix[self.prefix.len() - 1]
    }

    /// Largest single-element cost.
    pub fn max_element_cost(&self) -> f64 {
        self.full_rect_cells().map(|(i, j)| self.cost(i, j)).fold(0.0, f64::max)
    }

    /// Largest cost of one full-length row or column strip of elements.
    /// Any slab a cut can move across costs at most this much.
    pub fn max_strip_cost(&self) -> f64 {
        let (gx, gy) = (self.geg.gx, self.geg.gy);
        let cols = (0..gx).map(|i| self.region_cost_unchecked(ElementRect::new(i, i + 1, 0, gy)));
        let rows = (0..gy).map(|j| self.region_cost_unchecked(ElementRect::new(0, gx, j, j + 1)));
        cols.chain(rows).fold(0.0, f64::max)
    }

    fn full_rect_cells(&self) -> impl Iterator<Item = (usize, usize)> {
        let (gx, gy) = (self.geg.gx, self.geg.gy);
        (0..gy).flat_map(move |j| (0..gx).map(move |i| (i, j)))
    }

    /// Sum of element costs over `rect`.
    pub fn region_cost(&self, rect: ElementRect) -> Result<f64> {
        if rect.x1 > self.geg.gx || rect.y1 > self.geg.gy || rect.x0 > rect.x1 || rect.y0 > rect.y1 {
            return Err(Error::OutOfBounds { rect, gx: self.geg.gx, gy: self.geg.gy });
        }
        Ok(self.region_cost_unchecked(rect))
    }

    #[inline]
    pub(crate) fn region_cost_unchecked(&self, r: ElementRect) -> f64 {
        if r.is_empty() {
            return 0.0;
        }
        let s = self.geg.gx + 1;
        let p = &self.prefix;
        p[r.y1 * s + r.x1] - p[r.y0 * s + r.x1] - p[r.y1 * s + r.x0] + p[r.y0 * s + r.x0]
    }
}

/// Ratio of the largest to the mean load. All-zero (or empty) loads count
/// as perfectly balanced.
pub fn imbalance(loads: &[f64]) -> f64 {
    let sum: f64 = loads.iter().sum();
    if loads.is_empty() || sum <= 0.0 {
        return 1.0;
    }
    let max = loads.iter().copied().fold(f64::MIN, f64::max);
    max / (sum / loads.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit4() -> (GridElementGrid, Domain) {
        (GridElementGrid::new(4, 4).unwrap(), Domain::unit())
    }

    #[test]
    fn locate_examples() {
        let (g, d) = unit4();
        assert_eq!(locate_grid_element((0.0, 0.0), &g, &d), (0, 0));
        assert_eq!(locate_grid_element((0.99, 0.99), &g, &d), (3, 3));
        assert_eq!(locate_grid_element((0.26, 0.51), &g, &d), (1, 2));
        // upper edge wraps to the first element
        assert_eq!(locate_grid_element((1.0, 1.0), &g, &d), (0, 0));
        assert_eq!(locate_grid_element((-1e-18, 0.5), &g, &d), (0, 2));
    }

    #[test]
    fn region_cost_examples() {
        let g = GridElementGrid::new(2, 2).unwrap();
        let cf = CostField::from_counts(g, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(cf.region_cost(ElementRect::new(0, 1, 0, 2)).unwrap(), 4.0);
        assert_eq!(cf.region_cost(ElementRect::new(1, 1, 0, 2)).unwrap(), 0.0);
        let u = CostField::uniform(GridElementGrid::new(5, 3).unwrap(), 1);
        assert_eq!(u.region_cost(u.grid().full_rect()).unwrap(), 15.0);
        assert!(matches!(cf.region_cost(ElementRect::new(0, 3, 0, 1)), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn beta_weights_finite_elements() {
        let g = GridElementGrid::new(2, 1).unwrap();
        let cf = CostField::new(g, vec![3, 0], vec![4, 8], 0.5).unwrap();
        assert_eq!(cf.cost(0, 0), 5.0);
        assert_eq!(cf.cost(1, 0), 4.0);
        assert_eq!(cf.total(), 9.0);
        assert!(CostField::new(g, vec![0, 0], vec![0, 0], -1.0).is_err());
    }

    #[test]
    fn imbalance_examples() {
        assert_eq!(imbalance(&[4.0, 4.0, 4.0, 4.0]), 1.0);
        assert_eq!(imbalance(&[8.0, 0.0, 4.0, 4.0]), 2.0);
        assert_eq!(imbalance(&[3.0, 1.0]), 1.5);
        assert_eq!(imbalance(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn field_grid_divisibility() {
        let g = GridElementGrid::new(8, 4).unwrap();
        assert_eq!(FieldGrid::new(64, 32).unwrap().cells_per_element(&g).unwrap(), (8, 8));
        assert!(FieldGrid::new(30, 32).unwrap().cells_per_element(&g).is_err());
    }

    // direct double-loop summation oracle over every rectangle
    #[test]
    fn region_cost_matches_direct_sum_exhaustively() {
        let mut seed = 0x2545_f491_u64;
        for (gx, gy) in [(1, 1), (3, 5), (7, 2), (16, 16)] {
            let g = GridElementGrid::new(gx, gy).unwrap();
            let counts: Vec<u64> = (0..g.len())
                .map(|_| {
                    seed ^= seed << 13;
                    seed ^= seed >> 7;
                    seed ^= seed << 17;
                    seed % 10
                })
                .collect();
            let cf = CostField::from_counts(g, counts.clone()).unwrap();
            for x0 in 0..=gx {
                for x1 in x0..=gx {
                    for y0 in 0..=gy {
                        for y1 in y0..=gy {
                            let mut direct = 0u64;
                            for j in y0..y1 {
                                for i in x0..x1 {
                                    direct += counts[j * gx + i];
                                }
                            }
                            let r = ElementRect::new(x0, x1, y0, y1);
                            assert_eq!(cf.region_cost(r).unwrap(), direct as f64, "{r}");
                        }
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn located_element_contains_position(x in -3.0f64..3.0, y in -3.0f64..3.0,
                                              gx in 1usize..20, gy in 1usize..20,
                                              lx in 0.1f64..5.0, ly in 0.1f64..5.0) {
            let g = GridElementGrid::new(gx, gy).unwrap();
            let d = Domain::new(lx, ly).unwrap();
            let (i, j) = g.locate(x, y, &d);
            prop_assert!(i < gx && j < gy);
            let (wx, wy) = d.wrap(x, y);
            let (ex, ey) = g.element_size(&d);
            // half-open containment, allowing for rounding at the edges
            prop_assert!(wx >= i as f64 * ex - 1e-12 && wx < (i + 1) as f64 * ex + 1e-12);
            prop_assert!(wy >= j as f64 * ey - 1e-12 && wy < (j + 1) as f64 * ey + 1e-12);
        }

        #[test]
        fn imbalance_is_scale_invariant(loads in prop::collection::vec(0u32..1000, 1..20), s in 1u32..100) {
            let a: Vec<f64> = loads.iter().map(|&l| l as f64).collect();
            let b: Vec<f64> = loads.iter().map(|&l| (l * s) as f64).collect();
            let (ia, ib) = (imbalance(&a), imbalance(&b));
            prop_assert!(ia >= 1.0);
            prop_assert!((ia - ib).abs() <= 1e-12 * ia);
        }
    }
}
