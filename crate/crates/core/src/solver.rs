//! Pseudo-time finite-difference solver for the steady incompressible
//! Navier-Stokes equations on the co-located node lattice.
//!
//! Each step advances the momentum equations explicitly with the same
//! central stencils the physics loss uses, then projects the provisional
//! velocity with a pressure equation assembled from the same central first
//! differences (`D(G p) = D(u*) / dt`). Because the pressure operator is
//! the composition of the divergence and gradient actually applied to the
//! velocity, a converged state is discretely divergence free.

use log::debug;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    embed_boundary_conditions, BoundarySpec, Channel, FlowField, GeometryMask, GridSpec,
    ResolvedBoundary,
};
use crate::stencil::{half_dx, half_dy, lap5};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub dt: f64,
    pub nu: f64,
    pub rho: f64,
    pub poisson_iters: usize,
    pub max_steps: usize,
    pub steady_tol: f64,
    /// Jacobi damping factor.
    pub omega: f64,
}

impl SolverParams {
    /// `dt = 0.2 min(h^2 / nu, h)`, 50 sweeps, tolerance `1e-6`.
    pub fn defaults(grid: &GridSpec, nu: f64) -> Self {
        let h = grid.h;
        SolverParams {
            dt: 0.2 * (h * h / nu).min(h),
            nu,
            rho: 1.0,
            poisson_iters: 50,
            max_steps: 100_000,
            steady_tol: 1e-6,
            omega: 0.8,
        }
    }

    pub fn for_problem(bc: &BoundarySpec, grid: &GridSpec) -> Self {
        Self::defaults(grid, bc.nu)
    }

    pub fn validate(&self, grid: &GridSpec, max_speed: f64) -> Result<()> {
        let h = grid.h;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return bad(format!("nu must be positive, got {}", self.nu));
        }
        if self.rho != 1.0 {
            return bad(format!("only unit density is supported, got {}", self.rho));
        }
        if self.poisson_iters == 0 || !(self.steady_tol > 0.0) {
            return bad("poisson_iters >= 1 and steady_tol > 0 required".into());
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return bad(format!("omega must lie in (0, 1], got {}", self.omega));
        }
        let diffusive = 0.25 * h * h / self.nu;
        if !(self.dt > 0.0 && self.dt <= diffusive * (1.0 + 1e-12)) {
            return bad(format!("dt = {} exceeds the diffusive bound {diffusive}", self.dt));
        }
        if max_speed > 0.0 && self.dt > h / max_speed {
            return bad(format!(
                "dt = {} exceeds the advective bound {}",
                self.dt,
                h / max_speed
            ));
        }
        Ok(())
    }
}

/// Precomputed layout of one problem: boundary plan, fluid set and the
/// diagonal of the pressure operator.
#[derive(Debug, Clone)]
pub struct FdmSolver {
    grid: GridSpec,
    bc: BoundarySpec,
    boundary: ResolvedBoundary,
    params: SolverParams,
    /// Interior non-solid nodes.
    fluid: Vec<bool>,
    fluid_idx: Vec<usize>,
    diag: Vec<f64>,
    p_dirichlet: Vec<(usize, f64)>,
    p_links: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct SteadySolution {
    pub field: FlowField,
    pub steps: usize,
    pub converged: bool,
    /// Last `max(|du|, |dv|)`.
    pub residual: f64,
    /// Stopped early by the observer.
    pub cancelled: bool,
}

impl FdmSolver {
    pub fn new(
        bc: &BoundarySpec,
        mask: Option<&GeometryMask>,
        grid: &GridSpec,
        params: SolverParams,
    ) -> Result<Self> {
        grid.validate()?;
        bc.validate()?;
        params.validate(grid, bc_max_speed(bc))?;
        let boundary = bc.resolve(grid, mask)?;
        let (nx, ny) = (grid.nx, grid.ny);
        let mut fluid = vec![false; nx * ny];
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = j * nx + i;
                fluid[k] = !boundary.solid[k];
            }
        }
        let fluid_idx = (0..nx * ny).filter(|&k| fluid[k]).collect();
        let p_dirichlet = boundary
            .dirichlet
            .iter()
            .filter(|d| d.1 == Channel::P)
            .map(|&(k, _, v)| (k, v))
            .collect();
        let p_links = boundary
            .neumann
            .iter()
            .filter(|l| l.channel == Channel::P)
            .map(|l| (l.node, l.from))
            .collect();
        let mut solver = FdmSolver {
            grid: *grid,
            bc: bc.clone(),
            boundary,
            params,
            fluid,
            fluid_idx,
            diag: Vec::new(),
            p_dirichlet,
            p_links,
        };
        solver.diag = solver.probe_diagonal();
        Ok(solver)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    pub fn boundary(&self) -> &ResolvedBoundary {
        &self.boundary
    }

    pub fn is_fluid(&self, k: usize) -> bool {
        self.fluid[k]
    }

    /// Pressure boundary values: imposed values (zero when `homogeneous`),
    /// then zero-gradient copies.
    fn fill_pressure(&self, p: &mut [f64], homogeneous: bool) {
        for &(k, v) in &self.p_dirichlet {
            p[k] = if homogeneous { 0.0 } else { v };
        }
        for &(node, from) in &self.p_links {
            p[node] = p[from];
        }
    }

    /// Half-difference pressure gradient on fluid nodes; a solid neighbor
    /// takes the center value (zero normal gradient at solid faces).
    fn pressure_gradient(&self, p: &[f64], gx: &mut [f64], gy: &mut [f64]) {
        let nx = self.grid.nx;
        let solid = &self.boundary.solid;
        gx.fill(0.0);
        gy.fill(0.0);
        for &k in &self.fluid_idx {
            let nb = |m: usize| if solid[m] { p[k] } else { p[m] };
            gx[k] = 0.5 * (nb(k + 1) - nb(k - 1));
            gy[k] = 0.5 * (nb(k + nx) - nb(k - nx));
        }
    }

    /// `out = D(chi_F G p)` on fluid nodes, in node units. `p` gets its
    /// boundary values filled in place.
    fn apply_operator(
        &self,
        p: &mut [f64],
        out: &mut [f64],
        gx: &mut [f64],
        gy: &mut [f64],
        homogeneous: bool,
    ) {
        let nx = self.grid.nx;
        self.fill_pressure(p, homogeneous);
        self.pressure_gradient(p, gx, gy);
        for &k in &self.fluid_idx {
            out[k] = half_dx(gx, k) + half_dy(gy, k, nx);
        }
    }

    /// Diagonal of the linear part of the pressure operator. Probes nodes
    /// on a lattice coarse enough that their stencils never overlap.
    fn probe_diagonal(&self) -> Vec<f64> {
        const STRIDE: usize = 7;
        let n = self.grid.len();
        let nx = self.grid.nx;
        let mut diag = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut out = vec![0.0; n];
        let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
        for cy in 0..STRIDE {
            for cx in 0..STRIDE {
                p.fill(0.0);
                out.fill(0.0);
                let probes: Vec<usize> = self
                    .fluid_idx
                    .iter()
                    .copied()
                    .filter(|&k| (k % nx) % STRIDE == cx && (k / nx) % STRIDE == cy)
                    .collect();
                if probes.is_empty() {
                    continue;
                }
                for &k in &probes {
                    p[k] = 1.0;
                }
                self.apply_operator(&mut p, &mut out, &mut gx, &mut gy, true);
                for &k in &probes {
                    diag[k] = out[k];
                }
            }
        }
        diag
    }

    /// One pseudo-time step. `step_index` is reported on divergence.
    pub fn step(&self, state: &FlowField, step_index: usize) -> Result<FlowField> {
        if state.grid.shape() != self.grid.shape() {
            return Err(Error::shape(
                format!("{:?}", self.grid.shape()),
                format!("{:?}", state.grid.shape()),
            ));
        }
        let nx = self.grid.nx;
        let n = self.grid.len();
        let h = self.grid.h;
        let SolverParams { dt, nu, .. } = self.params;

        let mut cur = state.clone();
        cur.grid = self.grid;
        self.boundary.apply(&mut cur);
        let u = cur.u.as_slice().expect("contiguous");
        let v = cur.v.as_slice().expect("contiguous");

        // Momentum predictor without the pressure gradient.
        let mut us = u.to_vec();
        let mut vs = v.to_vec();
        let visc = nu / (h * h);
        for &k in &self.fluid_idx {
            let (uk, vk) = (u[k], v[k]);
            let adv_u = (uk * half_dx(u, k) + vk * half_dy(u, k, nx)) / h;
            let adv_v = (uk * half_dx(v, k) + vk * half_dy(v, k, nx)) / h;
            us[k] = uk + dt * (visc * lap5(u, k, nx) - adv_u);
            vs[k] = vk + dt * (visc * lap5(v, k, nx) - adv_v);
        }

        // Pressure equation in node units: D(G p) = h D(u*) / dt.
        let mut rhs = vec![0.0; n];
        for &k in &self.fluid_idx {
            rhs[k] = h * (half_dx(&us, k) + half_dy(&vs, k, nx)) / dt;
        }
        let mut p = cur.p.as_slice().expect("contiguous").to_vec();
        let mut ap = vec![0.0; n];
        let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
        let omega = self.params.omega;
        for _ in 0..self.params.poisson_iters {
            self.apply_operator(&mut p, &mut ap, &mut gx, &mut gy, false);
            for &k in &self.fluid_idx {
                let d = self.diag[k];
                if d.abs() > 1e-12 {
                    p[k] += omega * (rhs[k] - ap[k]) / d;
                }
            }
        }
        self.fill_pressure(&mut p, false);

        // Projection.
        self.pressure_gradient(&p, &mut gx, &mut gy);
        let scale = dt / h;
        for &k in &self.fluid_idx {
            us[k] -= scale * gx[k];
            vs[k] -= scale * gy[k];
        }

        let mut next = FlowField {
            u: Array2::from_shape_vec(self.grid.shape(), us).expect("shape"),
            v: Array2::from_shape_vec(self.grid.shape(), vs).expect("shape"),
            p: Array2::from_shape_vec(self.grid.shape(), p).expect("shape"),
            grid: self.grid,
        };
        self.boundary.apply(&mut next);
        if !next.is_finite() {
            return Err(Error::Diverged { step: step_index });
        }
        Ok(next)
    }

    /// Divergence L-infinity over fluid nodes.
    pub fn max_divergence(&self, field: &FlowField) -> f64 {
        let nx = self.grid.nx;
        let u = field.u.as_slice().expect("contiguous");
        let v = field.v.as_slice().expect("contiguous");
        self.fluid_idx
            .iter()
            .map(|&k| (half_dx(u, k) + half_dy(v, k, nx)).abs())
            .fold(0.0, f64::max)
            / self.grid.h
    }

    /// Initial state: zero interior with embedded boundary values.
    pub fn initial_state(&self) -> Result<FlowField> {
        let t = embed_boundary_conditions(&self.bc, &self.grid, None)?;
        let mut f = t.flow();
        self.boundary.apply(&mut f);
        Ok(f)
    }

    /// Steps until `max(|du|, |dv|) < steady_tol` with the divergence below
    /// `10 steady_tol`, or `max_steps`. The
    /// observer sees `(step, residual)` after every step and may return
    /// `false` to stop.
    pub fn solve_from(
        &self,
        initial: FlowField,
        observer: &mut dyn FnMut(usize, f64) -> bool,
    ) -> Result<SteadySolution> {
        let mut field = initial;
        let mut residual = f64::INFINITY;
        for step in 1..=self.params.max_steps {
            let next = self.step(&field, step)?;
            residual = change(&field, &next);
            field = next;
            let keep_going = observer(step, residual);
            if residual < self.params.steady_tol
                && self.max_divergence(&field) <= 10.0 * self.params.steady_tol
            {
                debug!("converged after {step} steps, residual {residual:.3e}");
                return Ok(SteadySolution {
                    field,
                    steps: step,
                    converged: true,
                    residual,
                    cancelled: false,
                });
            }
            if !keep_going {
                return Ok(SteadySolution {
                    field,
                    steps: step,
                    converged: false,
                    residual,
                    cancelled: true,
                });
            }
        }
        Ok(SteadySolution {
            field,
            steps: self.params.max_steps,
            converged: false,
            residual,
            cancelled: false,
        })
    }

    pub fn solve(&self) -> Result<SteadySolution> {
        self.solve_from(self.initial_state()?, &mut |_, _| true)
    }
}

fn change(a: &FlowField, b: &FlowField) -> f64 {
    let du = a.u.iter().zip(b.u.iter()).map(|(x, y)| (x - y).abs());
    let dv = a.v.iter().zip(b.v.iter()).map(|(x, y)| (x - y).abs());
    du.chain(dv).fold(0.0, f64::max)
}

fn bc_max_speed(bc: &BoundarySpec) -> f64 {
    let mut m: f64 = 0.0;
    if let Some(l) = bc.lid {
        m = m.max(l.u0.abs());
    }
    if let Some(i) = bc.inlet {
        m = m.max(i.u0.abs()).max(i.v0.abs());
    }
    m
}

/// One step from `state` with a freshly built solver.
pub fn step(
    state: &FlowField,
    bc: &BoundarySpec,
    mask: Option<&GeometryMask>,
    params: &SolverParams,
) -> Result<FlowField> {
    FdmSolver::new(bc, mask, &state.grid, *params)?.step(state, 1)
}

pub fn solve_steady(
    bc: &BoundarySpec,
    mask: Option<&GeometryMask>,
    grid: &GridSpec,
    params: &SolverParams,
) -> Result<SteadySolution> {
    FdmSolver::new(bc, mask, grid, *params)?.solve()
}

/// `steps` solver iterations from the zero-interior initial state.
pub fn prerun(
    bc: &BoundarySpec,
    mask: Option<&GeometryMask>,
    grid: &GridSpec,
    steps: usize,
) -> Result<FlowField> {
    let solver = FdmSolver::new(bc, mask, grid, SolverParams::for_problem(bc, grid))?;
    let mut field = solver.initial_state()?;
    for s in 1..=steps {
        field = solver.step(&field, s)?;
    }
    Ok(field)
}

/// Converged solution on a coarse `coarse_n` grid, tolerance `1e-5`.
pub fn coarse_solution(bc: &BoundarySpec, coarse_n: usize) -> Result<FlowField> {
    let grid = GridSpec::square(coarse_n)?;
    let mut params = SolverParams::for_problem(bc, &grid);
    params.steady_tol = 1e-5;
    params.max_steps = 20_000;
    Ok(solve_steady(bc, None, &grid, &params)?.field)
}

/// Central-difference divergence `(du/dx + dv/dy)` on interior fluid nodes;
/// zero elsewhere.
pub fn divergence(field: &FlowField, mask: Option<&GeometryMask>) -> Array2<f64> {
    let (ny, nx) = field.grid.shape();
    let h = field.grid.h;
    let u = field.u.as_slice().expect("contiguous");
    let v = field.v.as_slice().expect("contiguous");
    let mut out = Array2::zeros((ny, nx));
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            if mask.is_some_and(|m| m.is_solid(i, j)) {
                continue;
            }
            let k = j * nx + i;
            out[[j, i]] = (half_dx(u, k) + half_dy(v, k, nx)) / h;
        }
    }
    out
}

pub fn max_divergence(field: &FlowField, mask: Option<&GeometryMask>) -> f64 {
    divergence(field, mask).iter().fold(0.0, |m, x| m.max(x.abs()))
}
