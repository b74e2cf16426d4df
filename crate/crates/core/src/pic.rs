//! The electrostatic particle-in-cell kernel.
//!
//! One time step runs four phases in order:
//!
//! 1. deposit particle charge onto the field nodes (cloud-in-cell),
//! 2. solve the periodic Poisson problem `lap(phi) = -rho` for the potential
//!    and take `E = -grad(phi)`,
//! 3. interpolate `E` back to each particle with the same bilinear weights,
//! 4. advance velocities and positions with a leapfrog push.
//!
//! Units are normalised with `eps0 = 1`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{wrap_coord, Domain, FieldGrid};

/// A macro-particle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub q: f64,
    pub m: f64,
    pub id: u64,
}

impl Particle {
    #[inline]
    pub fn charge_to_mass(&self) -> f64 {
        self.q / self.m
    }
}

/// Scalar values on the periodic `nx x ny` node grid, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGrid {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

pub type ChargeGrid = NodeGrid;
pub type PotentialGrid = NodeGrid;

impl NodeGrid {
    pub fn zeros(fg: &FieldGrid) -> Self {
        NodeGrid { nx: fg.nx(), ny: fg.ny(), data: vec![0.0; fg.len()] }
    }

    pub fn from_fn(fg: &FieldGrid, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut g = NodeGrid::zeros(fg);
        for j in 0..fg.ny() {
            for i in 0..fg.nx() {
                g.data[j * fg.nx() + i] = f(i, j);
            }
        }
        g
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nx + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.nx + i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    /// Element-wise `self += other`.
    pub fn accumulate(&mut self, other: &NodeGrid) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn subtract_mean(&mut self) {
        let mean = self.sum() / self.data.len() as f64;
        for v in &mut self.data {
            *v -= mean;
        }
    }
}

/// Electric field components on the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EFieldGrid {
    pub ex: NodeGrid,
    pub ey: NodeGrid,
}

impl EFieldGrid {
    pub fn zeros(fg: &FieldGrid) -> Self {
        EFieldGrid { ex: NodeGrid::zeros(fg), ey: NodeGrid::zeros(fg) }
    }

    /// `sum(ex^2 + ey^2) * hx * hy / 2`.
    pub fn energy(&self, fg: &FieldGrid, dom: &Domain) -> f64 {
        let (hx, hy) = fg.spacing(dom);
        let s: f64 = self.ex.data.iter().zip(&self.ey.data).map(|(a, b)| a * a + b * b).sum();
        0.5 * s * hx * hy
    }
}

/// The four nodes a particle couples to and their bilinear weights, ordered
/// `(i0,j0), (i1,j0), (i0,j1), (i1,j1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub i0: usize,
    pub j0: usize,
    pub i1: usize,
    pub j1: usize,
    pub w: [f64; 4],
}

impl Stencil {
    #[inline]
    pub fn nodes(&self) -> [(usize, usize); 4] {
        [(self.i0, self.j0), (self.i1, self.j0), (self.i0, self.j1), (self.i1, self.j1)]
    }
}

/// Cloud-in-cell stencil for a position already wrapped into the domain.
#[inline]
pub fn cic_stencil(x: f64, y: f64, fg: &FieldGrid, dom: &Domain) -> Stencil {
    let (nx, ny) = (fg.nx(), fg.ny());
    let gxp = x * nx as f64 / dom.lx();
    let gyp = y * ny as f64 / dom.ly();
    // truncation is floor here and, unlike floor, is not a libm call
    let ci = (gxp as usize) as f64;
    let cj = (gyp as usize) as f64;
    let fx = gxp - ci;
    let fy = gyp - cj;
    let i0 = (ci as usize).min(nx - 1);
    let j0 = (cj as usize).min(ny - 1);
    let i1 = if i0 + 1 == nx { 0 } else { i0 + 1 };
    let j1 = if j0 + 1 == ny { 0 } else { j0 + 1 };
    Stencil {
        i0,
        j0,
        i1,
        j1,
        w: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
    }
}

/// Adds each particle's charge to `grid` with CIC weights (no normalisation).
pub fn deposit_raw(particles: &[Particle], fg: &FieldGrid, dom: &Domain, grid: &mut ChargeGrid) {
    let nx = fg.nx();
    let data = grid.as_mut_slice();
    for p in particles {
        let s = cic_stencil(p.x, p.y, fg, dom);
        data[s.j0 * nx + s.i0] += p.q * s.w[0];
        data[s.j0 * nx + s.i1] += p.q * s.w[1];
        data[s.j1 * nx + s.i0] += p.q * s.w[2];
        data[s.j1 * nx + s.i1] += p.q * s.w[3];
    }
}

/// Converts raw nodal charge into a density and removes its mean, which
/// stands for the uniform neutralising background.
pub fn neutralize(raw: &mut ChargeGrid, fg: &FieldGrid, dom: &Domain) {
    let (hx, hy) = fg.spacing(dom);
    let inv_area = 1.0 / (hx * hy);
    for v in raw.as_mut_slice() {
        *v *= inv_area;
    }
    raw.subtract_mean();
}

/// Phase A: CIC deposition, normalised by cell area and neutralised.
pub fn deposit_charge(particles: &[Particle], fg: &FieldGrid, dom: &Domain) -> ChargeGrid {
    let mut rho = NodeGrid::zeros(fg);
    deposit_raw(particles, fg, dom, &mut rho);
    neutralize(&mut rho, fg, dom);
    rho
}

/// Stopping rule for the Poisson iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Maximum absolute residual `|lap(phi) + rho|` accepted as converged.
    pub tol: f64,
    pub max_iter: usize,
}

impl SolverOptions {
    pub const DEFAULT_TOL: f64 = 1e-6;

    /// `tol = 1e-6`, `max_iter = 20 * max(nx, ny)`.
    pub fn for_grid(fg: &FieldGrid) -> Self {
        SolverOptions { tol: Self::DEFAULT_TOL, max_iter: 20 * fg.nx().max(fg.ny()) }
    }
}

/// Relaxation weight of the Jacobi sweep. Plain Jacobi (weight 1) leaves the
/// odd-even node mode of an even periodic grid undamped.
pub const JACOBI_WEIGHT: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSolution {
    pub phi: PotentialGrid,
    pub e: EFieldGrid,
    pub iterations: usize,
    /// Max-norm residual of the returned potential.
    pub residual: f64,
    pub converged: bool,
}

/// Phase B from a zero initial guess.
pub fn solve_fields(rho: &ChargeGrid, fg: &FieldGrid, dom: &Domain, opts: &SolverOptions) -> FieldSolution {
    solve_fields_from(rho, fg, dom, opts, NodeGrid::zeros(fg))
}

/// Phase B: weighted Jacobi on the 5-point periodic Laplacian starting
/// from `phi`, then `E = -grad(phi)` by central differences.
///
/// Any net charge left in `rho` is removed first, since the periodic
/// problem is only solvable for zero total charge. The returned potential
/// has zero mean. Hitting `max_iter` is not an error: the result carries
/// `converged = false` and the last residual.
pub fn solve_fields_from(
    rho: &ChargeGrid,
    fg: &FieldGrid,
    dom: &Domain,
    opts: &SolverOptions,
    mut phi: PotentialGrid,
) -> FieldSolution {
    let (nx, ny) = (fg.nx(), fg.ny());
    let (hx, hy) = fg.spacing(dom);
    let (cx, cy) = (1.0 / (hx * hx), 1.0 / (hy * hy));
    let step = JACOBI_WEIGHT / (2.0 * cx + 2.0 * cy);

    let mut src = rho.clone();
    src.subtract_mean();
    let mut next = NodeGrid::zeros(fg);

    let mut iterations = 0;
    let mut residual;
    loop {
        residual = 0.0f64;
        {
            let p = phi.as_slice();
            let s = src.as_slice();
            let out = next.as_mut_slice();
            for j in 0..ny {
                let jm = if j == 0 { ny - 1 } else { j - 1 } * nx;
                let jp = if j + 1 == ny { 0 } else { j + 1 } * nx;
                let row = j * nx;
                let (here, down, up) = (&p[row..row + nx], &p[jm..jm + nx], &p[jp..jp + nx]);
                let (src_row, out_row) = (&s[row..row + nx], &mut out[row..row + nx]);
                let node = |c: f64, w: f64, e: f64, d: f64, u: f64, src: f64| {
                    let r = cx * (w + e - 2.0 * c) + cy * (d + u - 2.0 * c) + src;
                    (c + step * r, r.abs())
                };
                // the two wrapped columns, then a branch-free interior
                for i in [0, nx - 1] {
                    let (w, e) = (here[(i + nx - 1) % nx], here[(i + 1) % nx]);
                    let (v, r) = node(here[i], w, e, down[i], up[i], src_row[i]);
                    out_row[i] = v;
                    residual = residual.max(r);
                }
                let mut row_res = 0.0f64;
                for i in 1..nx - 1 {
                    let (v, r) = node(here[i], here[i - 1], here[i + 1], down[i], up[i], src_row[i]);
                    out_row[i] = v;
                    row_res = row_res.max(r);
                }
                residual = residual.max(row_res);
            }
        }
        if residual <= opts.tol || iterations >= opts.max_iter {
            break;
        }
        std::mem::swap(&mut phi, &mut next);
        iterations += 1;
    }
    let converged = residual <= opts.tol;
    if !converged {
        log::debug!("poisson solve stopped after {iterations} iterations, residual {residual:.3e}");
    }
    phi.subtract_mean();
    let e = gradient_field(&phi, fg, dom);
    FieldSolution { phi, e, iterations, residual, converged }
}

/// `E = -grad(phi)` with periodic central differences.
pub fn gradient_field(phi: &PotentialGrid, fg: &FieldGrid, dom: &Domain) -> EFieldGrid {
    let (nx, ny) = (fg.nx(), fg.ny());
    let (hx, hy) = fg.spacing(dom);
    let mut e = EFieldGrid::zeros(fg);
    for j in 0..ny {
        let jm = if j == 0 { ny - 1 } else { j - 1 };
        let jp = if j + 1 == ny { 0 } else { j + 1 };
        for i in 0..nx {
            let im = if i == 0 { nx - 1 } else { i - 1 };
            let ip = if i + 1 == nx { 0 } else { i + 1 };
            e.ex.set(i, j, -(phi.get(ip, j) - phi.get(im, j)) / (2.0 * hx));
            e.ey.set(i, j, -(phi.get(i, jp) - phi.get(i, jm)) / (2.0 * hy));
        }
    }
    e
}

/// Max-norm of `lap(phi) + rho` on the periodic 5-point stencil.
pub fn poisson_residual(phi: &PotentialGrid, rho: &ChargeGrid, fg: &FieldGrid, dom: &Domain) -> f64 {
    let (nx, ny) = (fg.nx(), fg.ny());
    let (hx, hy) = fg.spacing(dom);
    let mut worst = 0.0f64;
    for j in 0..ny {
        for i in 0..nx {
            let c = phi.get(i, j);
            let lap = (phi.get((i + 1) % nx, j) + phi.get((i + nx - 1) % nx, j) - 2.0 * c) / (hx * hx)
                + (phi.get(i, (j + 1) % ny) + phi.get(i, (j + ny - 1) % ny) - 2.0 * c) / (hy * hy);
            worst = worst.max((lap + rho.get(i, j)).abs());
        }
    }
    worst
}

/// Phase C: bilinear interpolation of a nodal scalar at `(x, y)`.
#[inline]
pub fn interpolate(g: &NodeGrid, x: f64, y: f64, fg: &FieldGrid, dom: &Domain) -> f64 {
    let s = cic_stencil(x, y, fg, dom);
    s.nodes().iter().zip(s.w).map(|(&(i, j), w)| w * g.get(i, j)).sum()
}

/// Phase C: the electric field seen by `p`.
#[inline]
pub fn gather_field(p: &Particle, ef: &EFieldGrid, fg: &FieldGrid, dom: &Domain) -> [f64; 2] {
    gather_stencil(&cic_stencil(p.x, p.y, fg, dom), ef)
}

/// [`gather_field`] for a stencil the caller already has.
#[inline]
pub fn gather_stencil(s: &Stencil, ef: &EFieldGrid) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (&(i, j), w) in s.nodes().iter().zip(s.w) {
        out[0] += w * ef.ex.get(i, j);
        out[1] += w * ef.ey.get(i, j);
    }
    out
}

/// Phase D for one particle: kick then drift, then wrap.
#[inline]
pub fn push_particle(p: &mut Particle, e: [f64; 2], dt: f64, dom: &Domain) {
    let qm = p.charge_to_mass();
    p.vx += qm * e[0] * dt;
    p.vy += qm * e[1] * dt;
    p.x = wrap_coord(p.x + p.vx * dt, dom.lx());
    p.y = wrap_coord(p.y + p.vy * dt, dom.ly());
}

/// Phase D: leapfrog update `v += (q/m) E dt; x += v dt` with periodic wrap.
/// `fields[k]` is the field at `particles[k]`.
pub fn push_particles(particles: &mut [Particle], fields: &[[f64; 2]], dt: f64, dom: &Domain) {
    assert_eq!(particles.len(), fields.len(), "one field sample per particle");
    for (p, &e) in particles.iter_mut().zip(fields) {
        push_particle(p, e, dt, dom);
    }
}

/// Moves velocities from `t = 0` back to `t = -dt/2` so that the first
/// push is a proper leapfrog step.
pub fn stagger_velocities(particles: &mut [Particle], ef: &EFieldGrid, fg: &FieldGrid, dom: &Domain, dt: f64) {
    for p in particles.iter_mut() {
        let e = gather_field(p, ef, fg, dom);
        let qm = p.charge_to_mass();
        p.vx -= 0.5 * qm * e[0] * dt;
        p.vy -= 0.5 * qm * e[1] * dt;
    }
}

/// Counter-streaming beam setup.
///
/// `charge` and `mass` are species totals; each of the `n_particles`
/// macro-particles carries `charge / n` and `mass / n`, so the plasma
/// frequency `sqrt(charge^2 / (mass * area))` does not depend on the
/// particle count.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStreamConfig {
    pub n_particles: usize,
    pub v0: f64,
    pub charge: f64,
    pub mass: f64,
    pub eps: f64,
    pub k_mode: u32,
    pub seed: u64,
}

impl TwoStreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.n_particles.is_multiple_of(2) {
            return Err(Error::OddParticleCount(self.n_particles));
        }
        if self.mass.is_nan() || self.mass <= 0.0 {
            return Err(Error::config("mass", "must be positive"));
        }
        if self.eps.is_nan() || self.eps < 0.0 {
            return Err(Error::config("eps", "must be non-negative"));
        }
        Ok(())
    }

    pub fn plasma_frequency(&self, dom: &Domain) -> f64 {
        (self.charge * self.charge / (self.mass * dom.area())).sqrt()
    }
}

/// Uniform random positions with `x += eps * sin(2 pi k x / lx)`; even ids
/// stream at `+v0`, odd ids at `-v0`.
pub fn init_two_stream(cfg: &TwoStreamConfig, dom: &Domain) -> Result<Vec<Particle>> {
    cfg.validate()?;
    let n = cfg.n_particles;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let q = if n > 0 { cfg.charge / n as f64 } else { 0.0 };
    let m = if n > 0 { cfg.mass / n as f64 } else { 1.0 };
    let k = 2.0 * PI * cfg.k_mode as f64 / dom.lx();
    let particles = (0..n as u64)
        .map(|id| {
            let x0 = rng.random::<f64>() * dom.lx();
            let y0 = rng.random::<f64>() * dom.ly();
            let (x, y) = dom.wrap(x0 + cfg.eps * (k * x0).sin(), y0);
            let vx = if id % 2 == 0 { cfg.v0 } else { -cfg.v0 };
            Particle { x, y, vx, vy: 0.0, q, m, id }
        })
        .collect();
    Ok(particles)
}

/// Field-side diagnostics of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub field_energy: f64,
    pub solver_iterations: usize,
    pub solver_residual: f64,
    pub solver_converged: bool,
}

/// A single-domain PIC run: particles, the last potential (warm start for
/// the next solve) and the step size.
#[derive(Debug, Clone)]
pub struct PicState {
    pub dom: Domain,
    pub fg: FieldGrid,
    pub particles: Vec<Particle>,
    pub phi: PotentialGrid,
    pub solver: SolverOptions,
    pub dt: f64,
}

impl PicState {
    /// Solves for the initial field and staggers velocities by half a step.
    pub fn new(dom: Domain, fg: FieldGrid, mut particles: Vec<Particle>, solver: SolverOptions, dt: f64) -> Self {
        let rho = deposit_charge(&particles, &fg, &dom);
        let sol = solve_fields(&rho, &fg, &dom, &solver);
        stagger_velocities(&mut particles, &sol.e, &fg, &dom, dt);
        PicState { dom, fg, particles, phi: sol.phi, solver, dt }
    }
}

/// Runs phases A to D once and reports the field energy at the start of
/// the step together with the solver outcome.
pub fn pic_step(state: &mut PicState) -> StepDiagnostics {
    let PicState { dom, fg, particles, phi, solver, dt } = state;
    let rho = deposit_charge(particles, fg, dom);
    let sol = solve_fields_from(&rho, fg, dom, solver, std::mem::replace(phi, NodeGrid::zeros(fg)));
    for p in particles.iter_mut() {
        let e = gather_field(p, &sol.e, fg, dom);
        push_particle(p, e, *dt, dom);
    }
    let diag = StepDiagnostics {
        field_energy: sol.e.energy(fg, dom),
        solver_iterations: sol.iterations,
        solver_residual: sol.residual,
        solver_converged: sol.converged,
    };
    *phi = sol.phi;
    diag
}
