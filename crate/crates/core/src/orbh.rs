//! ORB-H strip decomposition and diffusion-exchange rebalancing.
//!
//! The x axis is cut into columns, then each column's y extent is cut
//! among the ranks of that column. Neighbouring ranks in a column share a
//! single row frontier, so rebalancing is a 1D exchange between pairs:
//!
//! ```text
//! w_i <- w_i + alpha * (w_j - w_i) + eta - c
//! ```
//!
//! with `alpha = 1/2` and `eta = c = 0` by default. Only whole element
//! rows move, always the ones adjacent to the shared frontier, so every
//! rank keeps a rectangle.

use crate::error::{Error, Result};
use crate::grid::{Axis, CostField, ElementRect, GridElementGrid};
use crate::partition::{find_cut, PartitionMap};

/// Parameters of the pairwise exchange rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionParams {
    /// Exchange coefficient, in `[0, 1]`.
    pub alpha: f64,
    /// Load created per step.
    pub eta: f64,
    /// Load consumed per step.
    pub consumed: f64,
    /// Column exchanges happen on rounds where `t % column_period == 0`.
    pub column_period: usize,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        DiffusionParams { alpha: 0.5, eta: 0.0, consumed: 0.0, column_period: 4 }
    }
}

impl DiffusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", format!("must lie in [0,1], got {}", self.alpha)));
        }
        if self.column_period == 0 {
            return Err(Error::config("column_period", "must be at least 1"));
        }
        Ok(())
    }
}

/// Signed transfer for the pair `(i, j)`: positive means `j` sends to `i`.
pub fn diffusion_target(w_i: f64, w_j: f64, p: &DiffusionParams) -> f64 {
    p.alpha * (w_j - w_i) + p.eta - p.consumed
}

/// Column cuts, per-column row cuts and rank numbering of an ORB-H
/// decomposition. Ranks are numbered column by column, bottom to top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrbHLayout {
    geg: GridElementGrid,
    /// `C + 1` increasing x boundaries from `0` to `gx`.
    col_cuts: Vec<usize>,
    /// For each column, `n_c + 1` increasing y boundaries from `0` to `gy`.
    row_cuts: Vec<Vec<usize>>,
    /// First rank id of each column.
    col_rank_start: Vec<usize>,
}

impl OrbHLayout {
    pub fn from_cuts(geg: GridElementGrid, col_cuts: Vec<usize>, row_cuts: Vec<Vec<usize>>) -> Result<Self> {
        let mut col_rank_start = Vec::with_capacity(row_cuts.len());
        let mut next = 0;
        for rows in &row_cuts {
            col_rank_start.push(next);
            next += rows.len().saturating_sub(1);
        }
        let layout = OrbHLayout { geg, col_cuts, row_cuts, col_rank_start };
        layout.validate()?;
        Ok(layout)
    }

    /// Checks tiling, ordering and non-empty regions.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Layout(m));
        let c = &self.col_cuts;
        if c.len() < 2 || c[0] != 0 || c[c.len() - 1] != self.geg.gx() {
            return bad(format!("column cuts {c:?} must run from 0 to {}", self.geg.gx()));
        }
        if c.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("column cuts {c:?} must be strictly increasing"));
        }
        if self.row_cuts.len() != c.len() - 1 {
            return bad(format!("{} columns but {} row cut lists", c.len() - 1, self.row_cuts.len()));
        }
        for (col, rows) in self.row_cuts.iter().enumerate() {
            if rows.len() < 2 || rows[0] != 0 || rows[rows.len() - 1] != self.geg.gy() {
                return bad(format!("column {col} rows {rows:?} must run from 0 to {}", self.geg.gy()));
            }
            if rows.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("column {col} rows {rows:?} must be strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> GridElementGrid {
        self.geg
    }

    pub fn columns(&self) -> usize {
        self.row_cuts.len()
    }

    pub fn ranks(&self) -> usize {
        self.row_cuts.iter().map(|r| r.len() - 1).sum()
    }

    pub fn column_ranks(&self) -> Vec<usize> {
        self.row_cuts.iter().map(|r| r.len() - 1).collect()
    }

    pub fn col_cuts(&self) -> &[usize] {
        &self.col_cuts
    }

    pub fn row_cuts(&self, col: usize) -> &[usize] {
        &self.row_cuts[col]
    }

    pub fn rank(&self, col: usize, slot: usize) -> usize {
        self.col_rank_start[col] + slot
    }

    pub fn column_rect(&self, col: usize) -> ElementRect {
        ElementRect::new(self.col_cuts[col], self.col_cuts[col + 1], 0, self.geg.gy())
    }

    pub fn rect(&self, col: usize, slot: usize) -> ElementRect {
        let rows = &self.row_cuts[col];
        ElementRect::new(self.col_cuts[col], self.col_cuts[col + 1], rows[slot], rows[slot + 1])
    }

    /// `(col, slot)` of every rank, in rank order.
    pub fn slots(&self) -> Vec<(usize, usize)> {
        (0..self.columns()).flat_map(|c| (0..self.row_cuts[c].len() - 1).map(move |s| (c, s))).collect()
    }

    pub fn loads(&self, cf: &CostField) -> Vec<f64> {
        self.slots().into_iter().map(|(c, s)| cf.region_cost_unchecked(self.rect(c, s))).collect()
    }

    pub fn to_map(&self) -> PartitionMap {
        orbh_to_map(self)
    }
}

/// Cuts `rect` along `axis` into `counts.len()` pieces with loads
/// proportional to `counts`, each piece at least one element thick.
/// Returns the absolute boundaries.
fn proportional_cuts(cf: &CostField, rect: ElementRect, axis: Axis, counts: &[usize]) -> Vec<usize> {
    let start = rect.start(axis);
    let end = start + rect.extent(axis);
    let mut bounds = vec![start];
    let mut remaining = rect;
    let mut ranks_left: usize = counts.iter().sum();
    for (k, &n) in counts.iter().enumerate().take(counts.len() - 1) {
        let lo = bounds[k] + 1;
        let hi = end - (counts.len() - 1 - k);
        let frac = n as f64 / ranks_left as f64;
        let cut = if remaining.extent(axis) >= 2 {
            let rel = find_cut(cf, remaining, axis, frac).expect("extent checked");
            (remaining.start(axis) + rel).clamp(lo, hi)
        } else {
            lo
        };
        bounds.push(cut);
        remaining = remaining.split_at(axis, cut).1;
        ranks_left -= n;
    }
    bounds.push(end);
    bounds
}

/// Initial ORB-H decomposition. `column_ranks[c]` ranks go to column `c`.
/// Column widths follow the load share of each column; inside a column the
/// rows are split into equal-load parts.
pub fn orbh_init(cf: &CostField, column_ranks: &[usize]) -> Result<OrbHLayout> {
    let geg = cf.grid();
    if column_ranks.is_empty() || column_ranks.contains(&0) {
        return Err(Error::Layout(format!("every column needs at least one rank, got {column_ranks:?}")));
    }
    if column_ranks.len() > geg.gx() {
        return Err(Error::Layout(format!("{} columns do not fit in {} element columns", column_ranks.len(), geg.gx())));
    }
    if let Some(&n) = column_ranks.iter().find(|&&n| n > geg.gy()) {
        return Err(Error::Layout(format!("{n} ranks in one column but only {} element rows", geg.gy())));
    }
    let col_cuts = proportional_cuts(cf, geg.full_rect(), Axis::X, column_ranks);
    let row_cuts = column_ranks
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let rect = ElementRect::new(col_cuts[c], col_cuts[c + 1], 0, geg.gy());
            proportional_cuts(cf, rect, Axis::Y, &vec![1; n])
        })
        .collect();
    OrbHLayout::from_cuts(geg, col_cuts, row_cuts)
}

/// Which rank pairs may exchange load on round `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeSchedule {
    /// Within each ORB-H column: even rounds pair slots `(2k, 2k+1)`, odd
    /// rounds pair `(2k+1, 2k+2)`. Unpaired slots sit the round out.
    Parity,
    /// Four-colour schedule on a `rows x cols` rank grid (rank id
    /// `row * cols + col`). `t % 4 == 1` pairs columns `(2k, 2k+1)`,
    /// `2` pairs columns `(2k+1, 2k+2)`, `3` pairs rows `(2k, 2k+1)` and
    /// `0` pairs rows `(2k+1, 2k+2)`. Ranks whose partner would fall off
    /// the grid are idle.
    Colored { rows: usize, cols: usize },
}

impl ExchangeSchedule {
    /// Disjoint rank pairs `(lower, upper)` active on round `t`.
    pub fn pairs(&self, layout: &OrbHLayout, t: usize) -> Vec<(usize, usize)> {
        match *self {
            ExchangeSchedule::Parity => parity_slot_pairs(layout, t)
                .into_iter()
                .map(|(c, s)| (layout.rank(c, s), layout.rank(c, s + 1)))
                .collect(),
            ExchangeSchedule::Colored { rows, cols } => colored_pairs(rows, cols, t),
        }
    }
}

/// `(column, lower slot)` of each pair active on round `t` under the
/// parity rule.
fn parity_slot_pairs(layout: &OrbHLayout, t: usize) -> Vec<(usize, usize)> {
    let first = t % 2;
    (0..layout.columns())
        .flat_map(|c| {
            let n = layout.row_cuts[c].len() - 1;
            (first..n.saturating_sub(1)).step_by(2).map(move |s| (c, s))
        })
        .collect()
}

fn colored_pairs(rows: usize, cols: usize, t: usize) -> Vec<(usize, usize)> {
    let id = |r: usize, c: usize| r * cols + c;
    let mut out = Vec::new();
    match t % 4 {
        1 | 2 => {
            let first = if t % 4 == 1 { 0 } else { 1 };
            for r in 0..rows {
                for c in (first..cols.saturating_sub(1)).step_by(2) {
                    out.push((id(r, c), id(r, c + 1)));
                }
            }
        }
        _ => {
            let first = if t % 4 == 3 { 0 } else { 1 };
            for r in (first..rows.saturating_sub(1)).step_by(2) {
                for c in 0..cols {
                    out.push((id(r, c), id(r + 1, c)));
                }
            }
        }
    }
    out
}

/// One pairwise exchange carried out by [`diffusion_round`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exchange {
    pub pair: (usize, usize),
    pub from_rank: usize,
    pub to_rank: usize,
    /// Whole element rows (or columns, for column exchanges) handed over.
    pub moved: usize,
    pub cost: f64,
}

/// Number of strips to hand over: the prefix of `strip_costs` (nearest the
/// frontier first, at most `max_strips` long) whose cost is closest to
/// `amount`, preferring fewer strips on ties.
fn strips_to_move(strip_costs: impl Iterator<Item = f64>, amount: f64, max_strips: usize) -> (usize, f64) {
    let mut best = (0, 0.0);
    let mut best_dist = amount.abs();
    let mut acc = 0.0;
    for (k, c) in strip_costs.take(max_strips).enumerate() {
        acc += c;
        let d = (acc - amount).abs();
        if d < best_dist {
            best = (k + 1, acc);
            best_dist = d;
        }
        if acc > amount {
            // prefix costs only grow from here
            break;
        }
    }
    best
}

/// One diffusion round: every pair picked by the parity schedule moves its
/// shared row frontier towards the exchange target. A rank never hands
/// over its last row. Pairs act on disjoint frontiers, so the order they
/// are processed in does not matter.
pub fn diffusion_round(
    layout: &OrbHLayout,
    cf: &CostField,
    t: usize,
    p: &DiffusionParams,
) -> (OrbHLayout, Vec<Exchange>) {
    let mut out = layout.clone();
    let mut exchanges = Vec::new();
    for (c, s) in parity_slot_pairs(layout, t) {
        let (lower, upper) = (layout.rect(c, s), layout.rect(c, s + 1));
        let w_i = cf.region_cost_unchecked(lower);
        let w_j = cf.region_cost_unchecked(upper);
        let target = diffusion_target(w_i, w_j, p);
        let frontier = layout.row_cuts[c][s + 1];
        let (x0, x1) = (layout.col_cuts[c], layout.col_cuts[c + 1]);
        let row_cost = |j: usize| cf.region_cost_unchecked(ElementRect::new(x0, x1, j, j + 1));
        let (rank_i, rank_j) = (layout.rank(c, s), layout.rank(c, s + 1));
        if target > 0.0 {
            // upper sends its lowest rows
            let (k, cost) = strips_to_move((upper.y0..upper.y1).map(row_cost), target, upper.height() - 1);
            if k > 0 {
                out.row_cuts[c][s + 1] = frontier + k;
                exchanges.push(Exchange { pair: (rank_i, rank_j), from_rank: rank_j, to_rank: rank_i, moved: k, cost });
            }
        } else if target < 0.0 {
            let (k, cost) = strips_to_move((lower.y0..lower.y1).rev().map(row_cost), -target, lower.height() - 1);
            if k > 0 {
                out.row_cuts[c][s + 1] = frontier - k;
                exchanges.push(Exchange { pair: (rank_i, rank_j), from_rank: rank_i, to_rank: rank_j, moved: k, cost });
            }
        }
    }
    debug_assert!(out.validate().is_ok());
    (out, exchanges)
}

/// Transfer between whole columns `a` (left) and `b` (right), positive
/// when `b` sends to `a`. With equal rank counts this is
/// [`diffusion_target`] on the column totals; otherwise the totals are
/// compared per rank.
fn column_target(load_a: f64, n_a: usize, load_b: f64, n_b: usize, p: &DiffusionParams) -> f64 {
    if n_a == n_b {
        return diffusion_target(load_a, load_b, p);
    }
    let (na, nb) = (n_a as f64, n_b as f64);
    2.0 * p.alpha * (na * load_b - nb * load_a) / (na + nb) + p.eta - p.consumed
}

/// Inter-column exchange, run on rounds with `t % column_period == 0`.
/// Column pairs alternate by parity of `t / column_period`; the shared
/// column cut moves by whole element columns and the rows of both changed
/// columns are re-split into equal-load parts.
pub fn column_exchange(layout: &OrbHLayout, cf: &CostField, t: usize, p: &DiffusionParams) -> (OrbHLayout, Vec<Exchange>) {
    let cols = layout.columns();
    let mut out = layout.clone();
    let mut exchanges = Vec::new();
    if cols < 2 || !t.is_multiple_of(p.column_period.max(1)) {
        return (out, exchanges);
    }
    let gy = layout.geg.gy();
    let first = (t / p.column_period.max(1)) % 2;
    for a in (first..cols - 1).step_by(2) {
        let b = a + 1;
        let (ra, rb) = (layout.column_rect(a), layout.column_rect(b));
        let (na, nb) = (layout.row_cuts[a].len() - 1, layout.row_cuts[b].len() - 1);
        let target = column_target(cf.region_cost_unchecked(ra), na, cf.region_cost_unchecked(rb), nb, p);
        let col_cost = |i: usize| cf.region_cost_unchecked(ElementRect::new(i, i + 1, 0, gy));
        let frontier = layout.col_cuts[b];
        let (k, cost, from, to) = if target > 0.0 {
            let (k, cost) = strips_to_move((rb.x0..rb.x1).map(col_cost), target, rb.width() - 1);
            out.col_cuts[b] = frontier + k;
            (k, cost, layout.rank(b, 0), layout.rank(a, 0))
        } else if target < 0.0 {
            let (k, cost) = strips_to_move((ra.x0..ra.x1).rev().map(col_cost), -target, ra.width() - 1);
            out.col_cuts[b] = frontier - k;
            (k, cost, layout.rank(a, 0), layout.rank(b, 0))
        } else {
            (0, 0.0, 0, 0)
        };
        if k == 0 {
            continue;
        }
        for col in [a, b] {
            let n = out.row_cuts[col].len() - 1;
            out.row_cuts[col] = proportional_cuts(cf, out.column_rect(col), Axis::Y, &vec![1; n]);
        }
        exchanges.push(Exchange { pair: (layout.rank(a, 0), layout.rank(b, 0)), from_rank: from, to_rank: to, moved: k, cost });
    }
    debug_assert!(out.validate().is_ok());
    (out, exchanges)
}

/// Owner map of a layout: each element belongs to its `(column, slot)`
/// rank.
pub fn orbh_to_map(layout: &OrbHLayout) -> PartitionMap {
    let geg = layout.geg;
    let mut owner = vec![0; geg.len()];
    for (c, s) in layout.slots() {
        let rank = layout.rank(c, s);
        for (i, j) in layout.rect(c, s).cells() {
            owner[geg.index(i, j)] = rank;
        }
    }
    PartitionMap::new(geg, layout.ranks(), owner).expect("layout ranks are in range")
}
