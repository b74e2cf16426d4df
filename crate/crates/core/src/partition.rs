//! Tree-based geometric partitioners over grid elements.
//!
//! All cuts fall on element boundaries. [`rcb`] and [`urb`] build a
//! [`PartitionTree`] by recursive bisection with alternating cut axes;
//! [`urb_limited`] rebuilds a previous tree while keeping its shallow cuts
//! fixed, which bounds how much data moves between ranks.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::grid::{Axis, CostField, ElementRect, GridElementGrid};

/// A leaf of the partition tree: one rank and its element rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Subdomain {
    pub pid: usize,
    pub rect: ElementRect,
    /// Distance from the root (the root has height 0).
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub rect: ElementRect,
    pub axis: Axis,
    /// Absolute element boundary of the cut along `axis`.
    pub cut: usize,
    pub ranks: Range<usize>,
    pub height: usize,
    pub left: TreeNode,
    pub right: TreeNode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeNode {
    Leaf(Subdomain),
    Split(Box<Split>),
}

impl TreeNode {
    pub fn rect(&self) -> ElementRect {
        match self {
            TreeNode::Leaf(s) => s.rect,
            TreeNode::Split(s) => s.rect,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            TreeNode::Leaf(s) => s.height,
            TreeNode::Split(s) => s.height,
        }
    }
}

/// Hierarchical decomposition of the element grid among `ranks` ranks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionTree {
    geg: GridElementGrid,
    ranks: usize,
    root: TreeNode,
}

/// One internal node seen in pre-order, for comparing trees cut by cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutRecord {
    pub height: usize,
    pub axis: Axis,
    pub cut: usize,
}

impl PartitionTree {
    pub fn grid(&self) -> GridElementGrid {
        self.geg
    }

    pub fn ranks(&self) -> usize {
        self.ranks
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    /// Leaves in left-to-right order, which is also rank order.
    pub fn leaves(&self) -> Vec<Subdomain> {
        let mut out = Vec::with_capacity(self.ranks);
        collect_leaves(&self.root, &mut out);
        out
    }

    /// Pre-order list of the cuts.
    pub fn cuts(&self) -> Vec<CutRecord> {
        let mut out = Vec::new();
        collect_cuts(&self.root, &mut out);
        out
    }

    /// Height of the deepest leaf.
    pub fn depth(&self) -> usize {
        self.leaves().iter().map(|l| l.height).max().unwrap_or(0)
    }

    pub fn to_map(&self) -> PartitionMap {
        tree_to_map(self)
    }
}

fn collect_leaves(node: &TreeNode, out: &mut Vec<Subdomain>) {
    match node {
        TreeNode::Leaf(s) => out.push(*s),
        TreeNode::Split(s) => {
            collect_leaves(&s.left, out);
            collect_leaves(&s.right, out);
        }
    }
}

fn collect_cuts(node: &TreeNode, out: &mut Vec<CutRecord>) {
    if let TreeNode::Split(s) = node {
        out.push(CutRecord { height: s.height, axis: s.axis, cut: s.cut });
        collect_cuts(&s.left, out);
        collect_cuts(&s.right, out);
    }
}

/// Owner rank of every grid element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionMap {
    geg: GridElementGrid,
    ranks: usize,
    owner: Vec<usize>,
}

impl PartitionMap {
    pub fn new(geg: GridElementGrid, ranks: usize, owner: Vec<usize>) -> Result<Self> {
        if owner.len() != geg.len() {
            return Err(Error::MapFormat(format!("expected {} owners, got {}", geg.len(), owner.len())));
        }
        if let Some(bad) = owner.iter().find(|&&o| o >= ranks) {
            return Err(Error::MapFormat(format!("owner {bad} is not a rank in [0,{ranks})")));
        }
        Ok(PartitionMap { geg, ranks, owner })
    }

    /// Every element owned by rank 0.
    pub fn single(geg: GridElementGrid) -> Self {
        PartitionMap { geg, ranks: 1, owner: vec![0; geg.len()] }
    }

    pub fn grid(&self) -> GridElementGrid {
        self.geg
    }

    pub fn ranks(&self) -> usize {
        self.ranks
    }

    #[inline]
    pub fn owner(&self, i: usize, j: usize) -> usize {
        self.owner[self.geg.index(i, j)]
    }

    pub fn owners(&self) -> &[usize] {
        &self.owner
    }

    /// Number of elements owned by each rank.
    pub fn element_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.ranks];
        for &o in &self.owner {
            counts[o] += 1;
        }
        counts
    }

    /// Cost owned by each rank.
    pub fn loads(&self, cf: &CostField) -> Result<Vec<f64>> {
        check_extents(self.geg, cf.grid())?;
        let mut loads = vec![0.0; self.ranks];
        for j in 0..self.geg.gy() {
            for i in 0..self.geg.gx() {
                loads[self.owner(i, j)] += cf.cost(i, j);
            }
        }
        Ok(loads)
    }

    /// Text form: a `gx gy P` header, then `gy` rows of `gx` owner ids,
    /// lowest y first.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.geg.gx(), self.geg.gy(), self.ranks);
        for row in self.owner.chunks(self.geg.gx()) {
            let line: Vec<String> = row.iter().map(|o| o.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::MapFormat("missing header".into()))?;
        let nums = parse_usizes(header)?;
        let [gx, gy, ranks] = nums[..] else {
            return Err(Error::MapFormat(format!("header needs `gx gy P`, got `{header}`")));
        };
        let geg = GridElementGrid::new(gx, gy).map_err(|e| Error::MapFormat(e.to_string()))?;
        let mut owner = Vec::with_capacity(geg.len());
        for (row, line) in lines.enumerate() {
            let vals = parse_usizes(line)?;
            if vals.len() != gx {
                return Err(Error::MapFormat(format!("row {row} has {} entries, expected {gx}", vals.len())));
            }
            owner.extend(vals);
        }
        PartitionMap::new(geg, ranks, owner)
    }
}

impl fmt::Display for PartitionMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn parse_usizes(line: &str) -> Result<Vec<usize>> {
    line.split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| Error::MapFormat(format!("`{t}` is not a rank id"))))
        .collect()
}

fn check_extents(a: GridElementGrid, b: GridElementGrid) -> Result<()> {
    if a != b {
        return Err(Error::ExtentMismatch { expected: (a.gx(), a.gy()), found: (b.gx(), b.gy()) });
    }
    Ok(())
}

/// Most-square factor pair `(a, b)` of `p` with `a >= b`.
pub fn most_square_factors(p: usize) -> (usize, usize) {
    let mut b = (p as f64).sqrt() as usize;
    while b > 1 && !p.is_multiple_of(b) {
        b -= 1;
    }
    let b = b.max(1);
    (p / b, b)
}

/// Splits `extent` into `parts` contiguous pieces whose sizes differ by at
/// most one, larger pieces first. Returns the `parts + 1` boundaries.
fn even_bounds(extent: usize, parts: usize) -> Vec<usize> {
    let (base, extra) = (extent / parts, extent % parts);
    let mut bounds = vec![0];
    for k in 0..parts {
        bounds.push(bounds[k] + base + usize::from(k < extra));
    }
    bounds
}

/// Static decomposition with the same number of elements per rank: ranks
/// sit on the most-square rank grid (the larger factor along x), rank id
/// `row * ranks_x + col`. On grids too thin for that, the next most
/// square factor pair that fits is used.
pub fn uniform_blocks(ranks: usize, geg: GridElementGrid) -> Result<PartitionMap> {
    if ranks == 0 {
        return Err(Error::Geometry("need at least one rank".into()));
    }
    if ranks > geg.len() {
        return Err(Error::TooManyRanks { ranks, elements: geg.len() });
    }
    let (px, py) = (1..=ranks)
        .rev()
        .filter(|b| ranks.is_multiple_of(*b) && b * b <= ranks)
        .flat_map(|b| [(ranks / b, b), (b, ranks / b)])
        .find(|&(px, py)| px <= geg.gx() && py <= geg.gy())
        .ok_or(Error::Infeasible { ranks, rect: geg.full_rect() })?;
    let xb = even_bounds(geg.gx(), px);
    let yb = even_bounds(geg.gy(), py);
    let mut owner = vec![0; geg.len()];
    for r in 0..py {
        for c in 0..px {
            for j in yb[r]..yb[r + 1] {
                for i in xb[c]..xb[c + 1] {
                    owner[geg.index(i, j)] = r * px + c;
                }
            }
        }
    }
    PartitionMap::new(geg, ranks, owner)
}

/// Cut search along `axis` inside `rect`: returns the relative boundary
/// `k` in `1..extent` whose left part costs closest to
/// `target_fraction * cost(rect)`, the smaller `k` on ties.
pub fn find_cut(cf: &CostField, rect: ElementRect, axis: Axis, target_fraction: f64) -> Result<usize> {
    cf.region_cost(rect)?;
    let extent = rect.extent(axis);
    if extent < 2 {
        return Err(Error::DegenerateCut { rect, axis });
    }
    let target = target_fraction * cf.region_cost_unchecked(rect);
    Ok(best_cut_in(cf, rect, axis, target, 1, extent - 1))
}

#[inline]
fn left_cost(cf: &CostField, rect: ElementRect, axis: Axis, k: usize) -> f64 {
    let at = rect.start(axis) + k;
    cf.region_cost_unchecked(rect.split_at(axis, at).0)
}

/// Binary search for the best boundary in `[lo, hi]` (relative indices).
/// Left costs are non-decreasing in `k`, so the optimum is either the first
/// `k` reaching the target or the first `k` attaining the largest value
/// below it.
fn best_cut_in(cf: &CostField, rect: ElementRect, axis: Axis, target: f64, lo: usize, hi: usize) -> usize {
    debug_assert!(lo >= 1 && lo <= hi);
    let left = |k| left_cost(cf, rect, axis, k);
    // first k in [lo, hi + 1) with left(k) >= value
    let first_at_least = |value: f64, mut a: usize, mut b: usize| {
        while a < b {
            let mid = a + (b - a) / 2;
            if left(mid) >= value {
                b = mid;
            } else {
                a = mid + 1;
            }
        }
        a
    };
    let above = first_at_least(target, lo, hi + 1);
    if above == lo {
        return lo;
    }
    let below_value = left(above - 1);
    let below = first_at_least(below_value, lo, above - 1);
    if above > hi {
        return below;
    }
    if left(above) - target < target - below_value {
        above
    } else {
        below
    }
}

/// The cut chosen for a node, or `None` if no boundary along `axis` leaves
/// each side at least as many elements as ranks.
fn feasible_cut(
    cf: &CostField,
    rect: ElementRect,
    axis: Axis,
    n_left: usize,
    n_right: usize,
) -> Option<usize> {
    let extent = rect.extent(axis);
    if extent < 2 {
        return None;
    }
    let across = rect.extent(axis.other());
    let lo = n_left.div_ceil(across).max(1);
    let hi = (extent - n_right.div_ceil(across)).min(extent - 1);
    if lo > hi {
        return None;
    }
    let target = n_left as f64 / (n_left + n_right) as f64 * cf.region_cost_unchecked(rect);
    Some(rect.start(axis) + best_cut_in(cf, rect, axis, target, lo, hi))
}

/// Tries `preferred` first and falls back to the other axis.
fn choose_cut(
    cf: &CostField,
    rect: ElementRect,
    preferred: Axis,
    n_left: usize,
    n_right: usize,
) -> Result<(Axis, usize)> {
    [preferred, preferred.other()]
        .into_iter()
        .find_map(|axis| feasible_cut(cf, rect, axis, n_left, n_right).map(|cut| (axis, cut)))
        .ok_or(Error::Infeasible { ranks: n_left + n_right, rect })
}

fn axis_at(first_axis: Axis, height: usize) -> Axis {
    if height.is_multiple_of(2) {
        first_axis
    } else {
        first_axis.other()
    }
}

fn bisect(cf: &CostField, rect: ElementRect, ranks: Range<usize>, height: usize, first_axis: Axis) -> Result<TreeNode> {
    let n = ranks.len();
    if n == 1 {
        return Ok(TreeNode::Leaf(Subdomain { pid: ranks.start, rect, height }));
    }
    let n_left = n / 2;
    let (axis, cut) = choose_cut(cf, rect, axis_at(first_axis, height), n_left, n - n_left)?;
    let (lr, rr) = rect.split_at(axis, cut);
    let mid = ranks.start + n_left;
    let left = bisect(cf, lr, ranks.start..mid, height + 1, first_axis)?;
    let right = bisect(cf, rr, mid..ranks.end, height + 1, first_axis)?;
    Ok(TreeNode::Split(Box::new(Split { rect, axis, cut, ranks, height, left, right })))
}

fn check_rank_count(cf: &CostField, ranks: usize) -> Result<()> {
    if ranks == 0 {
        return Err(Error::Geometry("need at least one rank".into()));
    }
    let elements = cf.grid().len();
    if ranks > elements {
        return Err(Error::TooManyRanks { ranks, elements });
    }
    Ok(())
}

/// Unbalanced recursive bisection. A node holding `n` ranks gives
/// `floor(n/2)` to the left child and cuts at the boundary closest to
/// fraction `floor(n/2)/n` of its cost. Cut axes alternate by height
/// starting with `first_axis`; a node whose preferred axis cannot be cut
/// uses the other one.
pub fn urb(cf: &CostField, ranks: usize, first_axis: Axis) -> Result<PartitionTree> {
    check_rank_count(cf, ranks)?;
    let geg = cf.grid();
    let root = bisect(cf, geg.full_rect(), 0..ranks, 0, first_axis)?;
    Ok(PartitionTree { geg, ranks, root })
}

/// Recursive coordinate bisection: halves the ranks and the load at every
/// level. Only power-of-two rank counts are accepted.
pub fn rcb(cf: &CostField, ranks: usize, first_axis: Axis) -> Result<PartitionTree> {
    if !ranks.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(ranks));
    }
    // with a power of two every split is an exact half, so URB's recursion
    // reduces to RCB
    urb(cf, ranks, first_axis)
}

/// Rebuilds `prev` against the current costs, keeping its topology, rank
/// ranges and cut axes. Cuts of nodes with height `< adjust_depth_min`
/// are frozen; deeper cuts are searched again.
pub fn urb_limited(prev: &PartitionTree, cf: &CostField, adjust_depth_min: usize) -> Result<PartitionTree> {
    check_extents(prev.geg, cf.grid())?;
    let root = rebuild(&prev.root, cf, prev.geg.full_rect(), adjust_depth_min)?;
    Ok(PartitionTree { geg: prev.geg, ranks: prev.ranks, root })
}

fn rebuild(node: &TreeNode, cf: &CostField, rect: ElementRect, adjust_depth_min: usize) -> Result<TreeNode> {
    match node {
        TreeNode::Leaf(s) => Ok(TreeNode::Leaf(Subdomain { rect, ..*s })),
        TreeNode::Split(s) => {
            let n_left = s.left_ranks();
            let n_right = s.ranks.len() - n_left;
            let (axis, cut) = if s.height < adjust_depth_min {
                // every ancestor is frozen too, so `rect` is the old rect
                debug_assert_eq!(rect, s.rect);
                (s.axis, s.cut)
            } else {
                choose_cut(cf, rect, s.axis, n_left, n_right)?
            };
            let (lr, rr) = rect.split_at(axis, cut);
            let left = rebuild(&s.left, cf, lr, adjust_depth_min)?;
            let right = rebuild(&s.right, cf, rr, adjust_depth_min)?;
            Ok(TreeNode::Split(Box::new(Split {
                rect,
                axis,
                cut,
                ranks: s.ranks.clone(),
                height: s.height,
                left,
                right,
            })))
        }
    }
}

impl Split {
    fn left_ranks(&self) -> usize {
        match &self.left {
            TreeNode::Leaf(_) => 1,
            TreeNode::Split(l) => l.ranks.len(),
        }
    }
}

/// Flattens a tree: every element gets its leaf's pid.
pub fn tree_to_map(tree: &PartitionTree) -> PartitionMap {
    let geg = tree.geg;
    let mut owner = vec![usize::MAX; geg.len()];
    for leaf in tree.leaves() {
        for (i, j) in leaf.rect.cells() {
            owner[geg.index(i, j)] = leaf.pid;
        }
    }
    debug_assert!(owner.iter().all(|&o| o < tree.ranks));
    PartitionMap { geg, ranks: tree.ranks, owner }
}

/// Total cost of the elements whose owner differs between the two maps.
pub fn migration_cost(old: &PartitionMap, new: &PartitionMap, cf: &CostField) -> Result<f64> {
    check_extents(old.geg, new.geg)?;
    check_extents(old.geg, cf.grid())?;
    let geg = old.geg;
    let mut cost = 0.0;
    for j in 0..geg.gy() {
        for i in 0..geg.gx() {
            let k = geg.index(i, j);
            if old.owner[k] != new.owner[k] {
                cost += cf.cost(i, j);
            }
        }
    }
    Ok(cost)
}

/// Number of 4-neighbour element pairs, periodic wrap included, whose
/// owners differ.
pub fn boundary_perimeter(map: &PartitionMap) -> usize {
    let (gx, gy) = (map.geg.gx(), map.geg.gy());
    let mut count = 0;
    for j in 0..gy {
        for i in 0..gx {
            let o = map.owner(i, j);
            count += usize::from(o != map.owner((i + 1) % gx, j));
            count += usize::from(o != map.owner(i, (j + 1) % gy));
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(costs: &[u64]) -> CostField {
        CostField::from_counts(GridElementGrid::new(costs.len(), 1).unwrap(), costs.to_vec()).unwrap()
    }

    fn grid(gx: usize, gy: usize) -> GridElementGrid {
        GridElementGrid::new(gx, gy).unwrap()
    }

    /// Linear scan over every boundary; smallest k wins ties.
    fn scan_cut(cf: &CostField, rect: ElementRect, axis: Axis, fraction: f64) -> usize {
        let total: f64 = rect.cells().map(|(i, j)| cf.cost(i, j)).sum();
        let target = fraction * total;
        let mut best = (f64::INFINITY, 0);
        for k in 1..rect.extent(axis) {
            let at = rect.start(axis) + k;
            let left: f64 = rect
                .cells()
                .filter(|&(i, j)| match axis {
                    Axis::X => i < at,
                    Axis::Y => j < at,
                })
                .map(|(i, j)| cf.cost(i, j))
                .sum();
            let d = (left - target).abs();
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1
    }

    #[test]
    fn find_cut_examples() {
        let cf = line(&[3, 1, 1, 1, 2]);
        let r = cf.grid().full_rect();
        assert_eq!(find_cut(&cf, r, Axis::X, 0.5).unwrap(), 2);
        assert_eq!(scan_cut(&cf, r, Axis::X, 0.5), 2);

        let u = line(&[1; 8]);
        assert_eq!(find_cut(&u, u.grid().full_rect(), Axis::X, 0.5).unwrap(), 4);

        let spike = line(&[9, 0, 0, 0]);
        assert_eq!(find_cut(&spike, spike.grid().full_rect(), Axis::X, 0.5).unwrap(), 1);

        let one = line(&[5]);
        assert!(matches!(find_cut(&one, one.grid().full_rect(), Axis::X, 0.5), Err(Error::DegenerateCut { .. })));
        assert!(matches!(find_cut(&u, u.grid().full_rect(), Axis::Y, 0.5), Err(Error::DegenerateCut { .. })));
    }

    #[test]
    fn find_cut_zero_plateau_prefers_smaller_k() {
        // left costs 1,1,1,1,2: target 1 is hit first at k = 1
        let cf = line(&[1, 0, 0, 0, 1, 0]);
        assert_eq!(find_cut(&cf, cf.grid().full_rect(), Axis::X, 0.5).unwrap(), 1);
        // target 1.5 sits between plateaus 1 (k=1..4) and 2 (k=5): tie -> k=1
        let cf = line(&[1, 0, 0, 0, 1, 1]);
        assert_eq!(find_cut(&cf, cf.grid().full_rect(), Axis::X, 0.5).unwrap(), 1);
        assert_eq!(scan_cut(&cf, cf.grid().full_rect(), Axis::X, 0.5), 1);
    }

    #[test]
    fn uniform_blocks_examples() {
        let m = uniform_blocks(4, grid(4, 4)).unwrap();
        assert_eq!(m.element_counts(), vec![4; 4]);
        assert_eq!(m.owner(0, 0), 0);
        assert_eq!(m.owner(2, 1), 1);
        assert_eq!(m.owner(1, 3), 2);
        assert_eq!(m.owner(3, 3), 3);

        let one = uniform_blocks(1, grid(3, 5)).unwrap();
        assert!(one.owners().iter().all(|&o| o == 0));

        // 3 ranks along x, 2 along y: blocks are 2 wide and 3 tall
        let six = uniform_blocks(6, grid(6, 6)).unwrap();
        assert_eq!(six.element_counts(), vec![6; 6]);
        assert_eq!((0..6).map(|i| six.owner(i, 0)).collect::<Vec<_>>(), vec![0, 0, 1, 1, 2, 2]);
        assert_eq!((0..6).map(|j| six.owner(0, j)).collect::<Vec<_>>(), vec![0, 0, 0, 3, 3, 3]);

        assert_eq!(uniform_blocks(17, grid(4, 4)), Err(Error::TooManyRanks { ranks: 17, elements: 16 }));
        let uneven = uniform_blocks(3, grid(7, 1)).unwrap();
        assert_eq!(uneven.element_counts(), vec![3, 2, 2]);
    }

    #[test]
    fn rcb_examples() {
        let cf = CostField::uniform(grid(4, 4), 1);
        let two = rcb(&cf, 2, Axis::X).unwrap();
        let leaves = two.leaves();
        assert_eq!(leaves[0].rect, ElementRect::new(0, 2, 0, 4));
        assert_eq!(leaves[1].rect, ElementRect::new(2, 4, 0, 4));

        let four = rcb(&cf, 4, Axis::X).unwrap();
        let rects: Vec<_> = four.leaves().iter().map(|l| l.rect).collect();
        assert_eq!(
            rects,
            vec![
                ElementRect::new(0, 2, 0, 2),
                ElementRect::new(0, 2, 2, 4),
                ElementRect::new(2, 4, 0, 2),
                ElementRect::new(2, 4, 2, 4),
            ]
        );
        assert!(four.leaves().iter().all(|l| l.height == 2));
        assert_eq!(rcb(&cf, 3, Axis::X), Err(Error::NotPowerOfTwo(3)));
    }

    #[test]
    fn urb_examples() {
        let cf = line(&[1; 6]);
        let t = urb(&cf, 3, Axis::X).unwrap();
        let rects: Vec<_> = t.leaves().iter().map(|l| (l.rect.x0, l.rect.x1)).collect();
        assert_eq!(rects, vec![(0, 2), (2, 4), (4, 6)]);
        assert_eq!(t.to_map().loads(&cf).unwrap(), vec![2.0; 3]);

        let single = urb(&cf, 1, Axis::X).unwrap();
        assert_eq!(single.leaves(), vec![Subdomain { pid: 0, rect: cf.grid().full_rect(), height: 0 }]);

        let heavy_left = line(&[10, 10, 1, 1, 1, 1, 1, 1]);
        let t = urb(&heavy_left, 2, Axis::X).unwrap();
        let cut = t.cuts()[0].cut;
        assert!(cut < 4);
        assert_eq!(cut, scan_cut(&heavy_left, heavy_left.grid().full_rect(), Axis::X, 0.5));

        assert!(matches!(urb(&cf, 7, Axis::X), Err(Error::TooManyRanks { .. })));
    }

    #[test]
    fn urb_tiny_grid_reports_infeasible() {
        // 9 ranks split 4/5 cannot be placed on a 3x3 grid with slab cuts
        let cf = CostField::uniform(grid(3, 3), 1);
        assert!(matches!(urb(&cf, 9, Axis::X), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn uniform_blocks_on_thin_grids() {
        let m = uniform_blocks(4, grid(1, 17)).unwrap();
        assert_eq!(m.element_counts(), vec![5, 4, 4, 4]);
        let m = uniform_blocks(16, grid(3, 29)).unwrap();
        assert_eq!(m.element_counts().iter().sum::<usize>(), 87);
        assert!(m.element_counts().iter().all(|&c| c >= 3));
        assert!(matches!(uniform_blocks(7, grid(5, 5)), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn urb_limited_unchanged_costs_reproduce_tree() {
        let cf = CostField::from_counts(grid(8, 8), (0..64).map(|k| (k * 7 % 5) as u64).collect()).unwrap();
        let t = urb(&cf, 6, Axis::X).unwrap();
        for d in 0..4 {
            assert_eq!(urb_limited(&t, &cf, d).unwrap(), t);
        }
    }

    #[test]
    fn urb_limited_without_frozen_cuts_is_fresh_urb() {
        let before = CostField::uniform(grid(8, 8), 1);
        let t = urb(&before, 5, Axis::X).unwrap();
        let after = CostField::from_counts(grid(8, 8), (0..64).map(|k| 1 + (k % 8 == 7) as u64 * 5).collect()).unwrap();
        assert_eq!(urb_limited(&t, &after, 0).unwrap(), urb(&after, 5, Axis::X).unwrap());
    }

    #[test]
    fn urb_limited_frozen_root_in_1d() {
        let before = line(&[1; 8]);
        let prev = urb(&before, 4, Axis::X).unwrap();
        let cuts: Vec<_> = prev.cuts().iter().map(|c| c.cut).collect();
        assert_eq!(cuts, vec![4, 2, 6]);

        // element 7 doubles: right half [1,1,1,2] ties between 6 and 7
        let doubled = line(&[1, 1, 1, 1, 1, 1, 1, 2]);
        let t = urb_limited(&prev, &doubled, 1).unwrap();
        assert_eq!(t.cuts().iter().map(|c| c.cut).collect::<Vec<_>>(), vec![4, 2, 6]);

        // element 7 triples: the fresh root would move to 5, the frozen one
        // stays at 4 and only the right-half cut moves
        let tripled = line(&[1, 1, 1, 1, 1, 1, 1, 3]);
        let t = urb_limited(&prev, &tripled, 1).unwrap();
        assert_eq!(t.cuts().iter().map(|c| c.cut).collect::<Vec<_>>(), vec![4, 2, 7]);
        assert_eq!(urb(&tripled, 4, Axis::X).unwrap().cuts()[0].cut, 5);
    }

    #[test]
    fn urb_limited_rejects_other_extents() {
        let t = urb(&CostField::uniform(grid(4, 4), 1), 2, Axis::X).unwrap();
        let other = CostField::uniform(grid(4, 5), 1);
        assert!(matches!(urb_limited(&t, &other, 1), Err(Error::ExtentMismatch { .. })));
    }

    #[test]
    fn tree_to_map_examples() {
        let cf = CostField::uniform(grid(4, 4), 1);
        let single = urb(&cf, 1, Axis::X).unwrap().to_map();
        assert!(single.owners().iter().all(|&o| o == 0));
        let quad = rcb(&cf, 4, Axis::X).unwrap().to_map();
        assert_eq!(quad.element_counts(), vec![4; 4]);
        assert_eq!(quad.owner(3, 0), 2);
    }

    #[test]
    fn migration_cost_examples() {
        let g = grid(4, 4);
        let cf = CostField::from_counts(g, (0..16).map(|k| k as u64).collect()).unwrap();
        let a = uniform_blocks(2, g).unwrap();
        assert_eq!(migration_cost(&a, &a, &cf).unwrap(), 0.0);

        let mut owners = a.owners().to_vec();
        owners[5] = 1 - owners[5];
        let b = PartitionMap::new(g, 2, owners).unwrap();
        assert_eq!(migration_cost(&a, &b, &cf).unwrap(), 5.0);

        // swapping both halves moves everything: 0 + 1 + ... + 15
        let swapped = PartitionMap::new(g, 2, a.owners().iter().map(|o| 1 - o).collect()).unwrap();
        assert_eq!(migration_cost(&a, &swapped, &cf).unwrap(), 120.0);

        let other = uniform_blocks(2, grid(4, 2)).unwrap();
        assert!(migration_cost(&a, &other, &cf).is_err());
    }

    #[test]
    fn perimeter_examples() {
        assert_eq!(boundary_perimeter(&PartitionMap::single(grid(5, 3))), 0);
        let halves = rcb(&CostField::uniform(grid(4, 4), 1), 2, Axis::X).unwrap().to_map();
        assert_eq!(boundary_perimeter(&halves), 8);
        let checker = PartitionMap::new(grid(2, 2), 2, vec![0, 1, 1, 0]).unwrap();
        assert_eq!(boundary_perimeter(&checker), 8);
    }

    #[test]
    fn map_text_format() {
        let m = uniform_blocks(6, grid(6, 4)).unwrap();
        let text = m.to_text();
        assert!(text.starts_with("6 4 6\n0 0 1 1 2 2\n"));
        assert_eq!(PartitionMap::from_text(&text).unwrap(), m);
        assert!(PartitionMap::from_text("2 1 2\n0 5\n").is_err());
        assert!(PartitionMap::from_text("2 2 2\n0 1\n").is_err());
        assert!(PartitionMap::from_text("2 2\n").is_err());
    }

    #[test]
    fn factor_pairs() {
        assert_eq!(most_square_factors(1), (1, 1));
        assert_eq!(most_square_factors(6), (3, 2));
        assert_eq!(most_square_factors(8), (4, 2));
        assert_eq!(most_square_factors(16), (4, 4));
        assert_eq!(most_square_factors(7), (7, 1));
    }

    fn arb_cost_field(max: usize) -> impl Strategy<Value = CostField> {
        (1..=max, 1..=max).prop_flat_map(|(gx, gy)| {
            prop::collection::vec(0u64..20, gx * gy)
                .prop_map(move |c| CostField::from_counts(grid(gx, gy), c).unwrap())
        })
    }

    proptest! {
        #[test]
        fn find_cut_matches_scan(cf in arb_cost_field(16), frac in 0.01f64..0.99, seed in 0usize..1000) {
            let (gx, gy) = (cf.gx(), cf.gy());
            let x0 = seed % gx;
            let x1 = x0 + 1 + (seed / 7) % (gx - x0);
            let y0 = (seed / 3) % gy;
            let y1 = y0 + 1 + (seed / 11) % (gy - y0);
            let rect = ElementRect::new(x0, x1, y0, y1);
            for axis in [Axis::X, Axis::Y] {
                if rect.extent(axis) >= 2 {
                    prop_assert_eq!(find_cut(&cf, rect, axis, frac).unwrap(), scan_cut(&cf, rect, axis, frac));
                }
            }
        }

        #[test]
        fn urb_leaves_tile_and_bound_load(cf in arb_cost_field(24), ranks in 1usize..=16) {
            prop_assume!(cf.grid().len() >= 4 * ranks);
            let t = urb(&cf, ranks, Axis::X).unwrap();
            let map = t.to_map();
            let mut seen = vec![0usize; cf.grid().len()];
            for leaf in t.leaves() {
                prop_assert!(!leaf.rect.is_empty());
                for (i, j) in leaf.rect.cells() {
                    seen[cf.grid().index(i, j)] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
            let mut pids: Vec<_> = t.leaves().iter().map(|l| l.pid).collect();
            pids.sort();
            prop_assert_eq!(pids, (0..ranks).collect::<Vec<_>>());
            let bound = cf.total() / ranks as f64 + t.depth() as f64 * cf.max_strip_cost();
            let max = map.loads(&cf).unwrap().into_iter().fold(0.0, f64::max);
            prop_assert!(max <= bound + 1e-9, "max {} bound {}", max, bound);
        }

        #[test]
        fn urb_limited_freezes_shallow_cuts(cf in arb_cost_field(20), ranks in 2usize..=12,
                                            depth in 0usize..4, bump in prop::collection::vec(0u64..30, 400)) {
            prop_assume!(cf.grid().len() >= 4 * ranks);
            let prev = urb(&cf, ranks, Axis::Y).unwrap();
            let counts: Vec<u64> = cf.particle_counts().iter().zip(&bump).map(|(c, b)| c + b).collect();
            let now = CostField::from_counts(cf.grid(), counts).unwrap();
            let next = urb_limited(&prev, &now, depth).unwrap();
            for (a, b) in prev.cuts().iter().zip(next.cuts()) {
                prop_assert_eq!(a.height, b.height);
                if a.height < depth {
                    prop_assert_eq!(*a, b);
                }
            }
            prop_assert_eq!(next.to_map().element_counts().iter().sum::<usize>(), cf.grid().len());
        }
    }
}
