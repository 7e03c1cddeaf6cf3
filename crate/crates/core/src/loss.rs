//! Physics-residual objective and its gradient with respect to the raw
//! network output.
//!
//! Residuals are evaluated per interior node in node units:
//!
//! ```text
//! Rx = nu/h^2 lap(u) - (u ux + v uy)/h - px/h
//! Ry = nu/h^2 lap(v) - (u vx + v vy)/h - py/h
//! Rc = c lap(p) + ux^2 + 2 uy vx + vy^2
//! ```
//!
//! where `ux = (u[i+1] - u[i-1]) / 2` and so on. Multiplying the pressure
//! equation `lap p / h^2 = -(u_x^2 + 2 u_y v_x + v_y^2)` through by `h^2` and
//! substituting `u_x = ux / h` gives `c = 1`; the default keeps `c = 1/4`,
//! and [`ContinuityScale::Consistent`] selects `c = 1`.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    BoundarySpec, Channel, FlowField, GeometryMask, GridSpec, ResolvedBoundary,
};
use crate::stencil::{central_diffs, half_dx, half_dy, interior, lap5, laplacian_conv};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub lambda_3: f64,
    pub lambda_n: f64,
    pub lambda_b: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_1: 1.0,
            lambda_2: 1.0,
            lambda_3: 1.0,
            lambda_n: 1.0,
            lambda_b: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_1, self.lambda_2, self.lambda_3, self.lambda_n, self.lambda_b];
        if all.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidConfig(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        if self.lambda_1 + self.lambda_2 + self.lambda_3 == 0.0 || self.lambda_b == 0.0 {
            return Err(Error::InvalidConfig(
                "need a positive residual weight and a positive boundary weight".into(),
            ));
        }
        Ok(())
    }
}

/// How the three sub-residuals combine into the per-node residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// `R = l1 |Rx| + l2 |Ry| + l3 |Rc|`, squared per node.
    #[default]
    AbsSum,
    /// `(l1 Rx)^2 + (l2 Ry)^2 + (l3 Rc)^2` per node.
    SumOfSquares,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuityScale {
    /// `c = 1/4`.
    #[default]
    Quarter,
    /// `c = 1`, the value implied by half differences.
    Consistent,
}

impl ContinuityScale {
    pub fn coefficient(self) -> f64 {
        match self {
            ContinuityScale::Quarter => 0.25,
            ContinuityScale::Consistent => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LossOptions {
    pub mode: ResidualMode,
    pub continuity: ContinuityScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Unweighted means of `Rx^2`, `Ry^2`, `Rc^2` over the interior set.
    pub loss_x: f64,
    pub loss_y: f64,
    pub loss_c: f64,
    /// Mean of the squared combined residual.
    pub loss_residual: f64,
    pub loss_neumann: f64,
    pub loss_boundary: f64,
    pub total: f64,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub n_neumann: usize,
    /// Set when the problem has no zero-gradient nodes.
    pub neumann_empty: bool,
}

/// Mean absolute magnitudes used to balance the weights.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Magnitudes {
    pub abs_x: f64,
    pub abs_y: f64,
    pub abs_c: f64,
    pub neumann: f64,
    pub boundary: f64,
}

/// Momentum residuals on interior nodes, shape `(ny-2, nx-2)`.
pub fn momentum_residuals(field: &FlowField, nu: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    let h = field.grid.h;
    let d = central_diffs(field)?;
    let lu = laplacian_conv(&field.u)?;
    let lv = laplacian_conv(&field.v)?;
    let u = interior(&field.u);
    let v = interior(&field.v);
    let a = nu / (h * h);
    let mut rx = Array2::zeros(lu.dim());
    Zip::from(&mut rx)
        .and(&lu)
        .and(&u)
        .and(&v)
        .and(&d.u_x)
        .and(&d.u_y)
        .for_each(|r, &l, &uk, &vk, &ux, &uy| *r = a * l - (uk * ux + vk * uy) / h);
    Zip::from(&mut rx).and(&d.p_x).for_each(|r, &px| *r -= px / h);
    let mut ry = Array2::zeros(lv.dim());
    Zip::from(&mut ry)
        .and(&lv)
        .and(&u)
        .and(&v)
        .and(&d.v_x)
        .and(&d.v_y)
        .for_each(|r, &l, &uk, &vk, &vx, &vy| *r = a * l - (uk * vx + vk * vy) / h);
    Zip::from(&mut ry).and(&d.p_y).for_each(|r, &py| *r -= py / h);
    Ok((rx, ry))
}

/// Pressure-equation residual on interior nodes with prefactor `c`.
pub fn continuity_residual(field: &FlowField, c: f64) -> Result<Array2<f64>> {
    let d = central_diffs(field)?;
    let mut out = laplacian_conv(&field.p)? * c;
    Zip::from(&mut out)
        .and(&d.u_x)
        .and(&d.u_y)
        .and(&d.v_x)
        .and(&d.v_y)
        .for_each(|r, &ux, &uy, &vx, &vy| *r += ux * ux + 2.0 * uy * vx + vy * vy);
    Ok(out)
}

/// Mean over zero-gradient nodes of the squared jump to the inward neighbor,
/// summed over channels. Returns 0 when there are none.
pub fn neumann_loss(field: &FlowField, boundary: &ResolvedBoundary) -> f64 {
    if boundary.neumann_nodes == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for link in &boundary.neumann {
        let a = flat(field, link.channel);
        let d = a[link.node] - a[link.from];
        sum += d * d;
    }
    sum / boundary.neumann_nodes as f64
}

/// Mean over imposed-value nodes of the squared error, summed over channels.
pub fn dirichlet_boundary_loss(field: &FlowField, boundary: &ResolvedBoundary) -> f64 {
    if boundary.dirichlet_nodes == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for &(k, c, value) in &boundary.dirichlet {
        let d = flat(field, c)[k] - value;
        sum += d * d;
    }
    sum / boundary.dirichlet_nodes as f64
}

fn flat(field: &FlowField, c: Channel) -> &[f64] {
    field.channel(c).as_slice().expect("contiguous")
}

/// Interior nodes whose 3x3 neighborhood is entirely fluid.
pub fn interior_set(grid: &GridSpec, solid: &[bool]) -> Vec<usize> {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = Vec::with_capacity((nx - 2) * (ny - 2));
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let k = j * nx + i;
            let clear = (j - 1..=j + 1)
                .all(|jj| (i - 1..=i + 1).all(|ii| !solid[jj * nx + ii]));
            if clear {
                out.push(k);
            }
        }
    }
    out
}

/// The composite objective for one boundary problem.
#[derive(Debug, Clone)]
pub struct PhysicsLoss {
    boundary: ResolvedBoundary,
    nu: f64,
    options: LossOptions,
    interior: Vec<usize>,
    /// Per channel, whether the output value is replaced before the
    /// physics terms are evaluated.
    overwritten: [Vec<bool>; 3],
}

struct Residuals {
    rx: Vec<f64>,
    ry: Vec<f64>,
    rc: Vec<f64>,
}

impl PhysicsLoss {
    pub fn new(
        bc: &BoundarySpec,
        mask: Option<&GeometryMask>,
        grid: &GridSpec,
        options: LossOptions,
    ) -> Result<Self> {
        Ok(Self::from_resolved(bc.resolve(grid, mask)?, bc.nu, options))
    }

    pub fn from_resolved(boundary: ResolvedBoundary, nu: f64, options: LossOptions) -> Self {
        let interior = interior_set(&boundary.grid, &boundary.solid);
        let mut overwritten = boundary.fixed.clone();
        for (k, &s) in boundary.solid.iter().enumerate() {
            if s {
                overwritten[Channel::P.index()][k] = true;
            }
        }
        PhysicsLoss {
            boundary,
            nu,
            options,
            interior,
            overwritten,
        }
    }

    pub fn boundary(&self) -> &ResolvedBoundary {
        &self.boundary
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn options(&self) -> LossOptions {
        self.options
    }

    /// Raw output with imposed values written in.
    pub fn overwrite(&self, raw: &FlowField) -> FlowField {
        let mut f = raw.clone();
        self.boundary.impose_dirichlet(&mut f);
        f
    }

    fn residuals(&self, s: &FlowField) -> Residuals {
        let nx = s.grid.nx;
        let h = s.grid.h;
        let a = self.nu / (h * h);
        let c = self.options.continuity.coefficient();
        let (u, v, p) = (flat(s, Channel::U), flat(s, Channel::V), flat(s, Channel::P));
        let m = self.interior.len();
        let mut r = Residuals {
            rx: Vec::with_capacity(m),
            ry: Vec::with_capacity(m),
            rc: Vec::with_capacity(m),
        };
        for &k in &self.interior {
            let (ux, uy) = (half_dx(u, k), half_dy(u, k, nx));
            let (vx, vy) = (half_dx(v, k), half_dy(v, k, nx));
            let (px, py) = (half_dx(p, k), half_dy(p, k, nx));
            r.rx.push(a * lap5(u, k, nx) - (u[k] * ux + v[k] * uy) / h - px / h);
            r.ry.push(a * lap5(v, k, nx) - (u[k] * vx + v[k] * vy) / h - py / h);
            r.rc.push(c * lap5(p, k, nx) + ux * ux + 2.0 * uy * vx + vy * vy);
        }
        r
    }

    fn check_shape(&self, raw: &FlowField) -> Result<()> {
        if raw.grid.shape() != self.boundary.grid.shape() {
            return Err(Error::shape(
                format!("{:?}", self.boundary.grid.shape()),
                format!("{:?}", raw.grid.shape()),
            ));
        }
        Ok(())
    }

    pub fn magnitudes(&self, raw: &FlowField) -> Result<Magnitudes> {
        self.check_shape(raw)?;
        let s = self.overwrite(raw);
        let r = self.residuals(&s);
        let mean_abs = |x: &[f64]| {
            if x.is_empty() {
                0.0
            } else {
                x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64
            }
        };
        Ok(Magnitudes {
            abs_x: mean_abs(&r.rx),
            abs_y: mean_abs(&r.ry),
            abs_c: mean_abs(&r.rc),
            neumann: neumann_loss(&s, &self.boundary),
            boundary: dirichlet_boundary_loss(raw, &self.boundary),
        })
    }

    pub fn evaluate(&self, raw: &FlowField, w: &LossWeights) -> Result<ResidualReport> {
        self.check_shape(raw)?;
        let s = self.overwrite(raw);
        let r = self.residuals(&s);
        self.report(raw, &s, &r, w)
    }

    fn report(
        &self,
        raw: &FlowField,
        s: &FlowField,
        r: &Residuals,
        w: &LossWeights,
    ) -> Result<ResidualReport> {
        let m = self.interior.len().max(1) as f64;
        let mean_sq = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() / m;
        let mut res = 0.0;
        for i in 0..r.rx.len() {
            res += match self.options.mode {
                ResidualMode::AbsSum => {
                    let rr = w.lambda_1 * r.rx[i].abs() + w.lambda_2 * r.ry[i].abs() + w.lambda_3 * r.rc[i].abs();
                    rr * rr
                }
                ResidualMode::SumOfSquares => {
                    let (a, b, c) = (w.lambda_1 * r.rx[i], w.lambda_2 * r.ry[i], w.lambda_3 * r.rc[i]);
                    a * a + b * b + c * c
                }
            };
        }
        let report = ResidualReport {
            loss_x: mean_sq(&r.rx),
            loss_y: mean_sq(&r.ry),
            loss_c: mean_sq(&r.rc),
            loss_residual: res / m,
            loss_neumann: neumann_loss(s, &self.boundary),
            loss_boundary: dirichlet_boundary_loss(raw, &self.boundary),
            total: 0.0,
            n_interior: self.interior.len(),
            n_boundary: self.boundary.dirichlet_nodes,
            n_neumann: self.boundary.neumann_nodes,
            neumann_empty: self.boundary.neumann_nodes == 0,
        };
        let total =
            report.loss_residual + w.lambda_n * report.loss_neumann + w.lambda_b * report.loss_boundary;
        let terms = [
            ("loss_x", report.loss_x),
            ("loss_y", report.loss_y),
            ("loss_c", report.loss_c),
            ("loss_residual", report.loss_residual),
            ("loss_neumann", report.loss_neumann),
            ("loss_boundary", report.loss_boundary),
            ("total", total),
        ];
        if let Some((term, _)) = terms.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { term });
        }
        Ok(ResidualReport { total, ..report })
    }

    /// Report and `d total / d raw`.
    pub fn evaluate_with_grad(
        &self,
        raw: &FlowField,
        w: &LossWeights,
    ) -> Result<(ResidualReport, FlowField)> {
        self.check_shape(raw)?;
        let s = self.overwrite(raw);
        let r = self.residuals(&s);
        let report = self.report(raw, &s, &r, w)?;

        let grid = s.grid;
        let nx = grid.nx;
        let h = grid.h;
        let a = self.nu / (h * h);
        let c = self.options.continuity.coefficient();
        let n = grid.len();
        let (u, v, p) = (flat(&s, Channel::U), flat(&s, Channel::V), flat(&s, Channel::P));
        let mut gu = vec![0.0; n];
        let mut gv = vec![0.0; n];
        let mut gp = vec![0.0; n];
        let m = self.interior.len().max(1) as f64;

        for (idx, &k) in self.interior.iter().enumerate() {
            let (rx, ry, rc) = (r.rx[idx], r.ry[idx], r.rc[idx]);
            let (gx, gy, gc) = match self.options.mode {
                ResidualMode::AbsSum => {
                    let rr = w.lambda_1 * rx.abs() + w.lambda_2 * ry.abs() + w.lambda_3 * rc.abs();
                    let f = 2.0 * rr / m;
                    (
                        f * w.lambda_1 * sign(rx),
                        f * w.lambda_2 * sign(ry),
                        f * w.lambda_3 * sign(rc),
                    )
                }
                ResidualMode::SumOfSquares => (
                    2.0 * w.lambda_1 * w.lambda_1 * rx / m,
                    2.0 * w.lambda_2 * w.lambda_2 * ry / m,
                    2.0 * w.lambda_3 * w.lambda_3 * rc / m,
                ),
            };
            let (ux, uy) = (half_dx(u, k), half_dy(u, k, nx));
            let (vx, vy) = (half_dx(v, k), half_dy(v, k, nx));
            let half_h = 0.5 / h;

            // x-momentum
            add_lap(&mut gu, k, nx, a * gx);
            gu[k] -= gx * ux / h;
            gu[k + 1] -= gx * u[k] * half_h;
            gu[k - 1] += gx * u[k] * half_h;
            gv[k] -= gx * uy / h;
            gu[k + nx] -= gx * v[k] * half_h;
            gu[k - nx] += gx * v[k] * half_h;
            gp[k + 1] -= gx * half_h;
            gp[k - 1] += gx * half_h;

            // y-momentum
            add_lap(&mut gv, k, nx, a * gy);
            gu[k] -= gy * vx / h;
            gv[k + 1] -= gy * u[k] * half_h;
            gv[k - 1] += gy * u[k] * half_h;
            gv[k] -= gy * vy / h;
            gv[k + nx] -= gy * v[k] * half_h;
            gv[k - nx] += gy * v[k] * half_h;
            gp[k + nx] -= gy * half_h;
            gp[k - nx] += gy * half_h;

            // pressure equation
            add_lap(&mut gp, k, nx, c * gc);
            gu[k + 1] += gc * ux;
            gu[k - 1] -= gc * ux;
            gu[k + nx] += gc * vx;
            gu[k - nx] -= gc * vx;
            gv[k + 1] += gc * uy;
            gv[k - 1] -= gc * uy;
            gv[k + nx] += gc * vy;
            gv[k - nx] -= gc * vy;
        }

        let bd = &self.boundary;
        if bd.neumann_nodes > 0 && w.lambda_n != 0.0 {
            let f = 2.0 * w.lambda_n / bd.neumann_nodes as f64;
            for link in &bd.neumann {
                let (vals, g) = match link.channel {
                    Channel::U => (u, &mut gu),
                    Channel::V => (v, &mut gv),
                    Channel::P => (p, &mut gp),
                };
                let d = f * (vals[link.node] - vals[link.from]);
                g[link.node] += d;
                g[link.from] -= d;
            }
        }
        // Overwritten values do not depend on the raw output.
        for (ch, g) in [&mut gu, &mut gv, &mut gp].into_iter().enumerate() {
            for (k, gk) in g.iter_mut().enumerate() {
                if self.overwritten[ch][k] {
                    *gk = 0.0;
                }
            }
        }
        if bd.dirichlet_nodes > 0 {
            let f = 2.0 * w.lambda_b / bd.dirichlet_nodes as f64;
            let raw_flat = [flat(raw, Channel::U), flat(raw, Channel::V), flat(raw, Channel::P)];
            for &(k, ch, value) in &bd.dirichlet {
                let g = match ch {
                    Channel::U => &mut gu,
                    Channel::V => &mut gv,
                    Channel::P => &mut gp,
                };
                g[k] += f * (raw_flat[ch.index()][k] - value);
            }
        }
        let shape = grid.shape();
        let grad = FlowField {
            u: Array2::from_shape_vec(shape, gu).expect("shape"),
            v: Array2::from_shape_vec(shape, gv).expect("shape"),
            p: Array2::from_shape_vec(shape, gp).expect("shape"),
            grid,
        };
        Ok((report, grad))
    }
}

#[inline(always)]
fn add_lap(g: &mut [f64], k: usize, nx: usize, s: f64) {
    g[k - 1] += s;
    g[k + 1] += s;
    g[k - nx] += s;
    g[k + nx] += s;
    g[k] -= 4.0 * s;
}

#[inline(always)]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Single-call convenience over [`PhysicsLoss`].
pub fn composite_loss(
    field: &FlowField,
    bc: &BoundarySpec,
    mask: Option<&GeometryMask>,
    w: &LossWeights,
    options: LossOptions,
) -> Result<ResidualReport> {
    PhysicsLoss::new(bc, mask, &field.grid, options)?.evaluate(field, w)
}

/// Bounds of the balanced multipliers.
pub const BALANCE_RANGE: (f64, f64) = (1e-3, 1e3);

/// Weights that equalize the sub-term magnitudes: `l_i = 1 / mean |R_i|`,
/// then `l_N` and `l_b` so their terms match the residual term. Results are
/// clamped to [`BALANCE_RANGE`]; terms with zero magnitude keep weight 1.
pub fn balance_weights(
    losses: &[&PhysicsLoss],
    raws: &[&FlowField],
    options: LossOptions,
) -> Result<LossWeights> {
    if losses.len() != raws.len() || losses.is_empty() {
        return Err(Error::InvalidConfig("balance needs matching, non-empty samples".into()));
    }
    let mut acc = Magnitudes::default();
    for (l, f) in losses.iter().zip(raws) {
        let m = l.magnitudes(f)?;
        acc.abs_x += m.abs_x;
        acc.abs_y += m.abs_y;
        acc.abs_c += m.abs_c;
        acc.neumann += m.neumann;
        acc.boundary += m.boundary;
    }
    let k = losses.len() as f64;
    let clamp = |x: f64| x.clamp(BALANCE_RANGE.0, BALANCE_RANGE.1);
    let inv = |m: f64| if m > 0.0 && m.is_finite() { clamp(1.0 / (m / k)) } else { 1.0 };
    let mut w = LossWeights {
        lambda_1: inv(acc.abs_x),
        lambda_2: inv(acc.abs_y),
        lambda_3: inv(acc.abs_c),
        lambda_n: 1.0,
        lambda_b: 1.0,
    };
    let mut res = 0.0;
    for (l, f) in losses.iter().zip(raws) {
        let probe = PhysicsLoss { options, ..(*l).clone() };
        res += probe.evaluate(f, &w)?.loss_residual;
    }
    let res = res / k;
    let ratio = |term: f64| {
        let term = term / k;
        if term > 0.0 && res > 0.0 {
            clamp(res / term)
        } else {
            1.0
        }
    };
    w.lambda_n = ratio(acc.neumann);
    w.lambda_b = ratio(acc.boundary);
    w.validate()?;
    Ok(w)
}
