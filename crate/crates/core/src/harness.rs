//! Virtual-rank superstep engine.
//!
//! Ranks are simulated in-process. Each superstep runs the PIC phases
//! rank by rank, then applies all cross-rank effects (particle migration,
//! rebalancing, metric reduction) at a barrier in rank-id order, so the
//! result is the same however the per-rank work is scheduled.
//!
//! Communication is accounted, not performed: the metrics record how many
//! particles and how much element cost changed hands, the partition
//! perimeter, and how many distinct grid elements each rank touched.

use rayon::prelude::*;

use crate::config::{OwnershipPolicy, RunConfig, Strategy};
use crate::error::Result;
use crate::grid::{imbalance, CostField, Domain, FieldGrid, GridElementGrid};
use crate::orbh::{column_exchange, diffusion_round, orbh_init, OrbHLayout};
use crate::partition::{boundary_perimeter, migration_cost, rcb, uniform_blocks, urb, urb_limited, PartitionMap, PartitionTree};
use crate::pic::{
    cic_stencil, deposit_raw, gather_stencil, init_two_stream, neutralize, push_particle, solve_fields_from,
    stagger_velocities, ChargeGrid, NodeGrid, Particle, PotentialGrid,
};

/// One virtual rank.
#[derive(Debug, Clone)]
pub struct RankState {
    pub id: usize,
    /// Kept sorted by particle id.
    pub particles: Vec<Particle>,
    /// Sum of this rank's particle count over all completed steps.
    pub cumulative_work: u64,
}

/// Everything recorded for one superstep.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    /// Particles held by each rank at the end of the step.
    pub loads: Vec<usize>,
    pub imbalance: f64,
    /// Particles that changed rank this step (pushes and rebalancing).
    pub particles_migrated: usize,
    /// Cost of the grid elements that changed owner in a rebalance.
    pub cost_migrated: f64,
    pub rebalanced: bool,
    pub perimeter: usize,
    /// Distinct grid elements reached by each rank's CIC stencils.
    pub touched: Vec<usize>,
    /// `touched` over owned elements (Eulerian) or over all elements
    /// (Lagrangian).
    pub locality: Vec<f64>,
    pub solver_iterations: usize,
    pub solver_residual: f64,
    pub solver_converged: bool,
    pub field_energy: f64,
}

impl StepMetrics {
    pub fn max_load(&self) -> usize {
        self.loads.iter().copied().max().unwrap_or(0)
    }

    pub fn mean_load(&self) -> f64 {
        self.loads.iter().sum::<usize>() as f64 / self.loads.len().max(1) as f64
    }

    pub fn total_particles(&self) -> usize {
        self.loads.iter().sum()
    }

    pub fn locality_max(&self) -> f64 {
        self.locality.iter().copied().fold(0.0, f64::max)
    }
}

/// Share of a step's modeled work given to the field solve when it uses
/// its whole iteration budget.
pub const SOLVER_WORK_WEIGHT: f64 = 0.1;

/// Modeled work of one step: one unit per particle (deposit, gather and
/// push) plus the solve, charged at [`SOLVER_WORK_WEIGHT`] times the
/// particle work scaled by the fraction of the iteration budget used.
pub fn modeled_work(m: &StepMetrics, solver_max_iter: usize) -> f64 {
    let particle_ops = m.total_particles() as f64;
    let used = m.solver_iterations as f64 / solver_max_iter.max(1) as f64;
    particle_ops * (1.0 + SOLVER_WORK_WEIGHT * used.min(1.0))
}

/// The decomposition state a strategy carries between rebalances.
#[derive(Debug, Clone)]
enum Decomposition {
    Fixed,
    Tree(PartitionTree),
    OrbH(OrbHLayout),
}

/// Outcome of one rebalance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rebalance {
    pub cost_migrated: f64,
    pub particles_moved: usize,
}

/// A running simulation.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: RunConfig,
    dom: Domain,
    fg: FieldGrid,
    geg: GridElementGrid,
    cells_per_element: (usize, usize),
    ranks: Vec<RankState>,
    map: PartitionMap,
    decomposition: Decomposition,
    phi: PotentialGrid,
    step: usize,
    n_particles: usize,
}

impl Simulation {
    /// Two-stream start: particles from the config, initial partition,
    /// initial field solve and the leapfrog half-step.
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let particles = init_two_stream(&cfg.two_stream(), &cfg.domain())?;
        Simulation::with_particles(cfg, particles)
    }

    /// Starts from the given particles instead of the two-stream setup.
    pub fn with_particles(cfg: &RunConfig, particles: Vec<Particle>) -> Result<Self> {
        cfg.validate()?;
        let dom = cfg.domain();
        let fg = cfg.field_grid();
        let geg = cfg.element_grid();
        let cells_per_element = fg.cells_per_element(&geg)?;
        let n_particles = particles.len();
        let mut sim = Simulation {
            cfg: cfg.clone(),
            dom,
            fg,
            geg,
            cells_per_element,
            ranks: (0..cfg.ranks).map(|id| RankState { id, particles: Vec::new(), cumulative_work: 0 }).collect(),
            map: PartitionMap::single(geg),
            decomposition: Decomposition::Fixed,
            phi: NodeGrid::zeros(&fg),
            step: 0,
            n_particles,
        };
        let cf = sim.cost_field_of(&particles);
        let (map, decomposition) = sim.initial_decomposition(&cf)?;
        sim.map = map;
        sim.decomposition = decomposition;
        for p in particles {
            let owner = sim.owner_of(&p);
            sim.ranks[owner].particles.push(p);
        }
        for r in &mut sim.ranks {
            r.particles.sort_by_key(|p| p.id);
        }

        let rho = sim.deposit();
        let sol = solve_fields_from(&rho, &sim.fg, &sim.dom, &cfg.solver(), NodeGrid::zeros(&sim.fg));
        let (fg, dom, dt) = (sim.fg, sim.dom, cfg.dt);
        sim.ranks.par_iter_mut().for_each(|r| stagger_velocities(&mut r.particles, &sol.e, &fg, &dom, dt));
        sim.phi = sol.phi;
        Ok(sim)
    }

    fn initial_decomposition(&self, cf: &CostField) -> Result<(PartitionMap, Decomposition)> {
        let c = &self.cfg;
        Ok(match c.strategy {
            Strategy::StaticUniform => (uniform_blocks(c.ranks, self.geg)?, Decomposition::Fixed),
            Strategy::StaticUrb => (urb(cf, c.ranks, c.first_cut)?.to_map(), Decomposition::Fixed),
            Strategy::Urb | Strategy::UrbLimited => {
                let tree = urb(cf, c.ranks, c.first_cut)?;
                (tree.to_map(), Decomposition::Tree(tree))
            }
            Strategy::Rcb => {
                let tree = rcb(cf, c.ranks, c.first_cut)?;
                (tree.to_map(), Decomposition::Tree(tree))
            }
            Strategy::OrbH => {
                let layout = orbh_init(cf, &c.orbh_column_ranks())?;
                (layout.to_map(), Decomposition::OrbH(layout))
            }
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn ranks(&self) -> &[RankState] {
        &self.ranks
    }

    pub fn partition_map(&self) -> &PartitionMap {
        &self.map
    }

    /// Number of completed supersteps.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn orbh_layout(&self) -> Option<&OrbHLayout> {
        match &self.decomposition {
            Decomposition::OrbH(l) => Some(l),
            _ => None,
        }
    }

    pub fn partition_tree(&self) -> Option<&PartitionTree> {
        match &self.decomposition {
            Decomposition::Tree(t) => Some(t),
            _ => None,
        }
    }

    fn owner_of(&self, p: &Particle) -> usize {
        let (i, j) = self.geg.locate(p.x, p.y, &self.dom);
        self.map.owner(i, j)
    }

    /// Finite elements per grid element: the field cells it contains.
    fn fe_counts(&self) -> Vec<u64> {
        let (cx, cy) = self.cells_per_element;
        vec![(cx * cy) as u64; self.geg.len()]
    }

    fn cost_field_of<'a>(&self, particles: impl IntoIterator<Item = &'a Particle>) -> CostField {
        let mut counts = vec![0u64; self.geg.len()];
        for p in particles {
            let (i, j) = self.geg.locate(p.x, p.y, &self.dom);
            counts[self.geg.index(i, j)] += 1;
        }
        CostField::new(self.geg, counts, self.fe_counts(), self.cfg.beta).expect("sizes match")
    }

    /// Current cost field: particle count per element plus `beta` times
    /// its finite-element count.
    pub fn cost_field(&self) -> CostField {
        self.cost_field_of(self.ranks.iter().flat_map(|r| r.particles.iter()))
    }

    /// Phase A over all ranks: private grids reduced in rank order.
    fn deposit(&self) -> ChargeGrid {
        let (fg, dom) = (self.fg, self.dom);
        let partial: Vec<ChargeGrid> = self
            .ranks
            .par_iter()
            .map(|r| {
                let mut g = NodeGrid::zeros(&fg);
                deposit_raw(&r.particles, &fg, &dom, &mut g);
                g
            })
            .collect();
        let mut rho = NodeGrid::zeros(&fg);
        for g in &partial {
            rho.accumulate(g);
        }
        neutralize(&mut rho, &fg, &dom);
        rho
    }

    /// Runs one superstep and returns its metrics.
    pub fn superstep(&mut self) -> Result<StepMetrics> {
        let rho = self.deposit();
        let phi = std::mem::replace(&mut self.phi, NodeGrid::zeros(&self.fg));
        let sol = solve_fields_from(&rho, &self.fg, &self.dom, &self.cfg.solver(), phi);
        if !sol.converged {
            log::debug!(
                "step {}: field solve hit {} iterations with residual {:.3e}",
                self.step + 1,
                sol.iterations,
                sol.residual
            );
        }
        let field_energy = sol.e.energy(&self.fg, &self.dom);

        let (fg, dom, geg, dt) = (self.fg, self.dom, self.geg, self.cfg.dt);
        let (cx, cy) = self.cells_per_element;
        let elem_i: Vec<usize> = (0..fg.nx()).map(|i| i / cx).collect();
        let elem_j: Vec<usize> = (0..fg.ny()).map(|j| j / cy).collect();
        let ef = &sol.e;
        let touched: Vec<usize> = self
            .ranks
            .par_iter_mut()
            .map(|r| {
                let mut seen = vec![false; geg.len()];
                for p in r.particles.iter_mut() {
                    let s = cic_stencil(p.x, p.y, &fg, &dom);
                    for (i, j) in s.nodes() {
                        seen[geg.index(elem_i[i], elem_j[j])] = true;
                    }
                    push_particle(p, gather_stencil(&s, ef), dt, &dom);
                }
                seen.iter().filter(|&&s| s).count()
            })
            .collect();
        self.phi = sol.phi;

        let mut particles_migrated = match self.cfg.policy {
            OwnershipPolicy::Eulerian => self.migrate(),
            OwnershipPolicy::Lagrangian => 0,
        };
        self.step += 1;

        let outcome = self.maybe_rebalance()?;
        if let Some(o) = outcome {
            particles_migrated += o.particles_moved;
        }
        self.check_ownership();

        let loads: Vec<usize> = self.ranks.iter().map(|r| r.particles.len()).collect();
        for r in &mut self.ranks {
            r.cumulative_work += r.particles.len() as u64;
        }
        let owned = self.map.element_counts();
        let locality = touched
            .iter()
            .zip(&owned)
            .map(|(&t, &o)| match self.cfg.policy {
                OwnershipPolicy::Eulerian => t as f64 / o.max(1) as f64,
                OwnershipPolicy::Lagrangian => t as f64 / geg.len() as f64,
            })
            .collect();
        let load_f: Vec<f64> = loads.iter().map(|&l| l as f64).collect();
        Ok(StepMetrics {
            step: self.step,
            imbalance: imbalance(&load_f),
            loads,
            particles_migrated,
            cost_migrated: outcome.map_or(0.0, |o| o.cost_migrated),
            rebalanced: outcome.is_some(),
            perimeter: boundary_perimeter(&self.map),
            touched,
            locality,
            solver_iterations: sol.iterations,
            solver_residual: sol.residual,
            solver_converged: sol.converged,
            field_energy,
        })
    }

    /// Eulerian migration: particles whose element is owned elsewhere
    /// move to the owner. Returns how many moved.
    fn migrate(&mut self) -> usize {
        let (geg, dom) = (self.geg, self.dom);
        let map = &self.map;
        let outgoing: Vec<Vec<(usize, Particle)>> = self
            .ranks
            .par_iter_mut()
            .map(|r| {
                let id = r.id;
                let mut leaving = Vec::new();
                r.particles.retain(|p| {
                    let (i, j) = geg.locate(p.x, p.y, &dom);
                    let o = map.owner(i, j);
                    if o != id {
                        leaving.push((o, *p));
                    }
                    o == id
                });
                leaving
            })
            .collect();
        let moved: usize = outgoing.iter().map(Vec::len).sum();
        let mut received = vec![false; self.ranks.len()];
        for (dest, p) in outgoing.into_iter().flatten() {
            self.ranks[dest].particles.push(p);
            received[dest] = true;
        }
        self.ranks.par_iter_mut().zip(received).for_each(|(r, got)| {
            if got {
                r.particles.sort_by_key(|p| p.id);
            }
        });
        moved
    }

    fn maybe_rebalance(&mut self) -> Result<Option<Rebalance>> {
        let strategy = self.cfg.strategy;
        if strategy.is_static() {
            return Ok(None);
        }
        if strategy != Strategy::OrbH {
            let cf = self.cost_field();
            let ratio = imbalance(&self.map.loads(&cf)?);
            let due = self.step.is_multiple_of(self.cfg.rebalance_every);
            if !due && ratio <= self.cfg.imbalance_threshold {
                return Ok(None);
            }
        }
        self.rebalance_now().map(Some)
    }

    /// Recomputes the decomposition from the current cost field and moves
    /// ownership. Static strategies keep their map. ORB-H runs one
    /// diffusion round (plus a column exchange on its period).
    pub fn rebalance_now(&mut self) -> Result<Rebalance> {
        let cf = self.cost_field();
        let c = &self.cfg;
        let t = self.step;
        let (map, decomposition) = match (&self.decomposition, c.strategy) {
            (Decomposition::Tree(prev), Strategy::UrbLimited) => {
                let tree = urb_limited(prev, &cf, c.adjust_depth_min)?;
                (tree.to_map(), Decomposition::Tree(tree))
            }
            (Decomposition::Tree(_), Strategy::Rcb) => {
                let tree = rcb(&cf, c.ranks, c.first_cut)?;
                (tree.to_map(), Decomposition::Tree(tree))
            }
            (Decomposition::Tree(_), _) => {
                let tree = urb(&cf, c.ranks, c.first_cut)?;
                (tree.to_map(), Decomposition::Tree(tree))
            }
            (Decomposition::OrbH(layout), _) => {
                let p = c.diffusion();
                let (layout, _) = column_exchange(layout, &cf, t, &p);
                let (layout, _) = diffusion_round(&layout, &cf, t, &p);
                (layout.to_map(), Decomposition::OrbH(layout))
            }
            (Decomposition::Fixed, _) => (self.map.clone(), Decomposition::Fixed),
        };
        let cost_migrated = migration_cost(&self.map, &map, &cf)?;
        self.map = map;
        self.decomposition = decomposition;
        let particles_moved = match self.cfg.policy {
            OwnershipPolicy::Eulerian => self.migrate(),
            OwnershipPolicy::Lagrangian => 0,
        };
        Ok(Rebalance { cost_migrated, particles_moved })
    }

    fn check_ownership(&self) {
        debug_assert_eq!(self.ranks.iter().map(|r| r.particles.len()).sum::<usize>(), self.n_particles);
        if cfg!(debug_assertions) && self.cfg.policy == OwnershipPolicy::Eulerian {
            for r in &self.ranks {
                for p in &r.particles {
                    debug_assert_eq!(self.owner_of(p), r.id, "particle {} off its owner", p.id);
                }
            }
        }
    }

    /// Distinct-element locality of each rank as of the last step, see
    /// [`StepMetrics::locality`].
    pub fn locality_summary(metrics: &StepMetrics) -> &[f64] {
        &metrics.locality
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub initial_map: PartitionMap,
    pub metrics: Vec<StepMetrics>,
    pub final_ranks: Vec<RankState>,
}

/// Runs `cfg.n_steps` supersteps from the two-stream start.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let mut sim = Simulation::new(cfg)?;
    let initial_map = sim.partition_map().clone();
    let mut metrics = Vec::with_capacity(cfg.n_steps);
    for _ in 0..cfg.n_steps {
        metrics.push(sim.superstep()?);
    }
    Ok(RunOutput { initial_map, metrics, final_ranks: sim.ranks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigBuilder;

    /// `SMALL` with the `key = value` lines of `extra` overriding it.
    fn cfg(extra: &str) -> RunConfig {
        let mut b = ConfigBuilder::from_text(SMALL).unwrap();
        for line in extra.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').unwrap();
            b.set(k.trim(), v.trim()).unwrap();
        }
        b.build().unwrap()
    }

    fn neutral(id: u64, x: f64, y: f64, vx: f64, vy: f64) -> Particle {
        Particle { x, y, vx, vy, q: 0.0, m: 1.0, id }
    }

    const SMALL: &str = "nx = 16\nny = 16\ngx = 4\ngy = 4\nranks = 4\nn_particles = 2000\nn_steps = 0\n";

    #[test]
    fn zero_steps_gives_empty_series_and_valid_map() {
        let out = run(&cfg("")).unwrap();
        assert!(out.metrics.is_empty());
        assert_eq!(out.initial_map.element_counts().iter().sum::<usize>(), 16);
        assert_eq!(out.final_ranks.iter().map(|r| r.particles.len()).sum::<usize>(), 2000);
    }

    #[test]
    fn cold_uniform_static_stays_balanced() {
        let c = cfg("strategy = static_uniform\nv0 = 0\neps = 0\nn_particles = 40000\n");
        let mut sim = Simulation::new(&c).unwrap();
        for _ in 0..5 {
            let m = sim.superstep().unwrap();
            // 4 ranks of 10000 expected particles, binomial spread
            assert!(m.imbalance < 1.05, "{}", m.imbalance);
        }
    }

    #[test]
    fn one_crossing_is_one_migration() {
        let c = cfg("strategy = static_uniform\ndt = 0.01\n");
        // ranks on a 2x2 grid of 0.5x0.5 blocks; particle 1 crosses x = 0.5
        let ps = vec![
            neutral(0, 0.1, 0.1, 0.0, 0.0),
            neutral(1, 0.495, 0.2, 1.0, 0.0),
            neutral(2, 0.7, 0.7, 0.0, 1.0),
        ];
        let mut sim = Simulation::with_particles(&c, ps).unwrap();
        let m = sim.superstep().unwrap();
        assert_eq!(m.particles_migrated, 1);
        assert_eq!(m.loads, vec![1, 1, 0, 1]);
        let m = sim.superstep().unwrap();
        assert_eq!(m.particles_migrated, 0);
    }

    #[test]
    fn lagrangian_never_migrates() {
        let c = cfg("strategy = orbh\npolicy = lagrangian\nn_steps = 20\nv0 = 1.0\n");
        let mut sim = Simulation::new(&c).unwrap();
        let ids0: Vec<Vec<u64>> = sim.ranks().iter().map(|r| r.particles.iter().map(|p| p.id).collect()).collect();
        for _ in 0..20 {
            let m = sim.superstep().unwrap();
            assert_eq!(m.particles_migrated, 0);
        }
        let ids: Vec<Vec<u64>> = sim.ranks().iter().map(|r| r.particles.iter().map(|p| p.id).collect()).collect();
        assert_eq!(ids, ids0);
    }

    #[test]
    fn forced_rebalance_without_motion_moves_nothing() {
        for s in ["urb_limited", "urb", "orbh"] {
            let c = cfg(&format!("strategy = {s}\n"));
            let mut sim = Simulation::new(&c).unwrap();
            let before = sim.partition_map().clone();
            let r = sim.rebalance_now().unwrap();
            assert_eq!(r.cost_migrated, 0.0, "{s}");
            assert_eq!(r.particles_moved, 0, "{s}");
            if s != "orbh" {
                assert_eq!(sim.partition_map(), &before);
            }
        }
    }

    #[test]
    fn static_strategies_never_rebalance() {
        let c = cfg("strategy = static_urb\nn_steps = 25\nimbalance_threshold = 1.0\n");
        let out = run(&c).unwrap();
        assert!(out.metrics.iter().all(|m| !m.rebalanced && m.cost_migrated == 0.0));
    }

    #[test]
    fn eulerian_touched_set_stays_near_owned_block() {
        let c = cfg("strategy = static_uniform\n");
        let mut sim = Simulation::new(&c).unwrap();
        let m = sim.superstep().unwrap();
        // a 2x2 element block plus its upper/right halo is at most 3x3
        assert!(m.touched.iter().all(|&t| t <= 9), "{:?}", m.touched);
    }

    #[test]
    fn single_element_cluster_touches_at_most_four() {
        let c = cfg("ranks = 1\nstrategy = static_uniform\n");
        let ps: Vec<_> = (0..50).map(|k| neutral(k, 0.3 + 0.001 * k as f64, 0.3, 0.0, 0.0)).collect();
        let mut sim = Simulation::with_particles(&c, ps).unwrap();
        let m = sim.superstep().unwrap();
        assert!(m.touched[0] >= 1 && m.touched[0] <= 4);
    }

    #[test]
    fn conservation_over_dynamic_run() {
        for s in ["urb", "urb_limited", "orbh", "rcb"] {
            let c = cfg(&format!("strategy = {s}\nn_steps = 30\nrebalance_every = 3\n"));
            let out = run(&c).unwrap();
            for m in &out.metrics {
                assert_eq!(m.total_particles(), 2000, "{s}");
                assert!(m.imbalance >= 1.0);
            }
        }
    }

    #[test]
    fn modeled_work_weights_solver() {
        let m = StepMetrics {
            step: 1,
            loads: vec![50, 50],
            imbalance: 1.0,
            particles_migrated: 0,
            cost_migrated: 0.0,
            rebalanced: false,
            perimeter: 0,
            touched: vec![],
            locality: vec![],
            solver_iterations: 40,
            solver_residual: 0.0,
            solver_converged: true,
            field_energy: 0.0,
        };
        assert!((modeled_work(&m, 80) - 105.0).abs() < 1e-9);
        assert!((modeled_work(&m, 40) - 110.0).abs() < 1e-9);
    }
}
