//! Dirichlet solver for -div(|grad u|_delta^{p-2} grad u) + l(x,u) = f at
//! fixed p > 1, by damped Newton descent on the regularized energy
//!
//!   E(u) = (1/p) Sum (|grad u|_delta^p - delta^p) h^N
//!        + Sum (L(x,u) - f u) h^N,
//!
//! with |g|_delta = sqrt(|g|^2 + delta^2) and L the primitive of the
//! absorption l. The delta^p offset makes the zero field have zero energy.
//! Newton steps solve the SPD linearization by Jacobi-preconditioned CG and
//! fall back to preconditioned gradient descent when the step stalls, so
//! accepted energies never increase. Continuation re-solves along a
//! descending list of p values re-using the previous solution.

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::Grid;
use crate::util;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Default continuation schedule: geometric approach to p = 1.
pub fn default_continuation() -> Vec<f64> {
    vec![2.0, 1.5, 1.2, 1.1, 1.05, 1.02, 1.01]
}

#[derive(Debug, Clone)]
pub struct PlapConfig {
    pub p: f64,
    pub delta: f64,
    /// Stopping tolerance on the sup-norm of the Euler-Lagrange residual
    /// -div(|grad u|_delta^{p-2} grad u) + l(.,u) - f.
    pub tol_grad: f64,
    pub max_iters: usize,
    /// Descending p values; when set, `solve` runs them in order with warm
    /// starts and `p` is ignored for the final stage (the last entry wins).
    pub continuation: Option<Vec<f64>>,
}

impl Default for PlapConfig {
    fn default() -> Self {
        PlapConfig {
            p: 1.05,
            delta: 1e-6,
            tol_grad: 1e-10,
            max_iters: 200,
            continuation: None,
        }
    }
}

impl PlapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) {
            return Err(Error::InvalidInput("p must be > 1".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::InvalidInput("delta must be >= 0".into()));
        }
        if !(self.tol_grad > 0.0) {
            return Err(Error::InvalidInput("tol_grad must be positive".into()));
        }
        if let Some(ps) = &self.continuation {
            if ps.is_empty() || ps.iter().any(|&p| !(p > 1.0)) {
                return Err(Error::InvalidInput("continuation values must be > 1".into()));
            }
        }
        Ok(())
    }

    pub fn at_p(&self, p: f64) -> PlapConfig {
        PlapConfig {
            p,
            continuation: None,
            ..self.clone()
        }
    }
}

/// Absorption law l(x, s): pointwise evaluable with slope and primitive
/// (L(x, 0) = 0). Slopes must be non-negative for the Newton linearization
/// to stay SPD.
pub trait Absorption: Sync {
    fn eval(&self, cell: usize, s: f64) -> f64;
    fn slope(&self, cell: usize, s: f64) -> f64;
    fn primitive(&self, cell: usize, s: f64) -> f64;
    /// Declared strict monotonicity in s (non-decreasing if false).
    fn is_increasing(&self) -> bool {
        false
    }
    /// Declared coercivity: l(x,s)s >= 0 and |l| -> infinity as |s| -> inf.
    fn is_coercive(&self) -> bool {
        false
    }
}

/// l = 0.
pub struct ZeroAbsorption;

impl Absorption for ZeroAbsorption {
    fn eval(&self, _: usize, _: f64) -> f64 {
        0.0
    }
    fn slope(&self, _: usize, _: f64) -> f64 {
        0.0
    }
    fn primitive(&self, _: usize, _: f64) -> f64 {
        0.0
    }
}

/// l = coeff * s.
pub struct LinearAbsorption(pub f64);

impl Absorption for LinearAbsorption {
    fn eval(&self, _: usize, s: f64) -> f64 {
        self.0 * s
    }
    fn slope(&self, _: usize, _: f64) -> f64 {
        self.0
    }
    fn primitive(&self, _: usize, s: f64) -> f64 {
        0.5 * self.0 * s * s
    }
    fn is_increasing(&self) -> bool {
        self.0 > 0.0
    }
    fn is_coercive(&self) -> bool {
        self.0 > 0.0
    }
}

/// l = coeff * sign(s) |s|^exponent, exponent > 0.
pub struct PowerAbsorption {
    pub coeff: f64,
    pub exponent: f64,
}

impl Absorption for PowerAbsorption {
    fn eval(&self, _: usize, s: f64) -> f64 {
        self.coeff * s.abs().powf(self.exponent) * s.signum()
    }
    fn slope(&self, _: usize, s: f64) -> f64 {
        self.coeff * self.exponent * s.abs().powf(self.exponent - 1.0)
    }
    fn primitive(&self, _: usize, s: f64) -> f64 {
        self.coeff * s.abs().powf(self.exponent + 1.0) / (self.exponent + 1.0)
    }
    fn is_increasing(&self) -> bool {
        self.coeff > 0.0
    }
    fn is_coercive(&self) -> bool {
        self.coeff > 0.0
    }
}

/// Singular monotone law l(x,s) = -scale(x) / (s + eps)^gamma for s >= 0,
/// extended linearly below zero so iterates may transiently dip negative.
/// With scale >= 0 this is increasing; it drives the supersolution problem
/// -Delta_p v = scale(x) (v + eps)^{-gamma} rewritten as absorption.
pub struct SingularAbsorption {
    pub scale: Vec<f64>,
    pub gamma: f64,
    pub eps: f64,
}

impl SingularAbsorption {
    fn pow_int(&self, s: f64) -> f64 {
        // integral of (t+eps)^{-gamma} dt from 0 to s, s >= 0
        if (self.gamma - 1.0).abs() < 1e-14 {
            ((s + self.eps) / self.eps).ln()
        } else {
            ((s + self.eps).powf(1.0 - self.gamma) - self.eps.powf(1.0 - self.gamma))
                / (1.0 - self.gamma)
        }
    }
}

impl Absorption for SingularAbsorption {
    fn eval(&self, cell: usize, s: f64) -> f64 {
        let w = self.scale[cell];
        if s >= 0.0 {
            -w * (s + self.eps).powf(-self.gamma)
        } else {
            -w * self.eps.powf(-self.gamma) + w * self.gamma * self.eps.powf(-self.gamma - 1.0) * s
        }
    }
    fn slope(&self, cell: usize, s: f64) -> f64 {
        let w = self.scale[cell];
        let t = if s >= 0.0 { s + self.eps } else { self.eps };
        w * self.gamma * t.powf(-self.gamma - 1.0)
    }
    fn primitive(&self, cell: usize, s: f64) -> f64 {
        let w = self.scale[cell];
        if s >= 0.0 {
            -w * self.pow_int(s)
        } else {
            -w * self.eps.powf(-self.gamma) * s
                + 0.5 * w * self.gamma * self.eps.powf(-self.gamma - 1.0) * s * s
        }
    }
    fn is_increasing(&self) -> bool {
        true
    }
}

/// Arbitrary law; primitive by adaptive quadrature (tolerance 1e-10) and
/// slope by central differences.
pub struct CustomAbsorption {
    pub law: Box<dyn Fn(usize, f64) -> f64 + Sync>,
    pub increasing: bool,
    pub coercive: bool,
}

impl Absorption for CustomAbsorption {
    fn eval(&self, cell: usize, s: f64) -> f64 {
        (self.law)(cell, s)
    }
    fn slope(&self, cell: usize, s: f64) -> f64 {
        let h = 1e-6 * (1.0 + s.abs());
        (((self.law)(cell, s + h) - (self.law)(cell, s - h)) / (2.0 * h)).max(0.0)
    }
    fn primitive(&self, cell: usize, s: f64) -> f64 {
        util::adaptive_simpson(&|t| (self.law)(cell, t), 0.0, s, 1e-10)
    }
    fn is_increasing(&self) -> bool {
        self.increasing
    }
    fn is_coercive(&self) -> bool {
        self.coercive
    }
}

/// Sample the declared monotonicity/coercivity flags of a law on a lattice
/// of cells and s values.
pub fn validate_absorption(law: &dyn Absorption, grid: &Arc<Grid>, s_max: f64) -> Result<()> {
    let cells: Vec<usize> = grid
        .interior_cells()
        .iter()
        .step_by((grid.interior_cells().len() / 16).max(1))
        .copied()
        .collect();
    let m = 13;
    let svals: Vec<f64> = (0..=m)
        .map(|j| -s_max + 2.0 * s_max * j as f64 / m as f64)
        .collect();
    for &c in &cells {
        for w in svals.windows(2) {
            let (l1, l2) = (law.eval(c, w[0]), law.eval(c, w[1]));
            if law.is_increasing() && !(l1 < l2) {
                return Err(Error::Contract(format!(
                    "absorption not increasing at cell {c}: l({}) = {l1}, l({}) = {l2}",
                    w[0], w[1]
                )));
            }
            if !law.is_increasing() && l1 > l2 + 1e-12 {
                return Err(Error::Contract(format!(
                    "absorption not non-decreasing at cell {c}"
                )));
            }
        }
        if law.is_coercive() {
            for &s in &svals {
                if law.eval(c, s) * s < -1e-12 {
                    return Err(Error::Contract(format!(
                        "absorption sign condition fails at cell {c}, s = {s}"
                    )));
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub p: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub energy_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub u: ScalarField,
    /// Accepted energies of the final continuation stage.
    pub energy_trace: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub p_final: f64,
    pub stages: Vec<StageReport>,
}

impl SolveReport {
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("converged".into(), self.converged.to_string()),
            ("iterations".into(), self.iterations.to_string()),
            ("grad_norm".into(), format!("{:e}", self.grad_norm)),
            ("p_final".into(), self.p_final.to_string()),
            ("u_min".into(), format!("{:e}", self.u.min_domain())),
            ("u_max".into(), format!("{:e}", self.u.max_domain())),
        ];
        for st in &self.stages {
            kv.push((
                format!("stage_p_{}", st.p),
                format!("iters={} grad_norm={:e}", st.iterations, st.grad_norm),
            ));
        }
        kv
    }
}

/// Scratch buffers for one solve; everything sized to the full array.
struct Workspace {
    grad: Vec<f64>,    // dim * n, forward gradient of the iterate
    flux: Vec<f64>,    // dim * n, weighted flux
    a: Vec<f64>,       // n, |g|_delta^{p-2}
    b: Vec<f64>,       // n, (p-2) |g|_delta^{p-4}
    resid: Vec<f64>,   // n, EL residual on interior
    diag: Vec<f64>,    // n, Jacobi diagonal
    dir: Vec<f64>,     // n, Newton direction
    cg_r: Vec<f64>,
    cg_z: Vec<f64>,
    cg_p: Vec<f64>,
    cg_ap: Vec<f64>,
    qgrad: Vec<f64>,   // dim * n, gradient of CG vector
    trial: Vec<f64>,   // n, Armijo trial point
}

impl Workspace {
    fn new(grid: &Grid) -> Self {
        let n = grid.len();
        let dn = n * grid.dim();
        Workspace {
            grad: vec![0.0; dn],
            flux: vec![0.0; dn],
            a: vec![0.0; n],
            b: vec![0.0; n],
            resid: vec![0.0; n],
            diag: vec![0.0; n],
            dir: vec![0.0; n],
            cg_r: vec![0.0; n],
            cg_z: vec![0.0; n],
            cg_p: vec![0.0; n],
            cg_ap: vec![0.0; n],
            qgrad: vec![0.0; dn],
            trial: vec![0.0; n],
        }
    }
}

#[inline]
fn forward_gradient_into(grid: &Grid, u: &[f64], g: &mut [f64]) {
    let n = grid.len();
    let inv_h = 1.0 / grid.spacing();
    g.fill(0.0);
    grid.for_each_cell(|flat, idx| {
        if !grid.in_domain(flat) {
            return;
        }
        for d in 0..grid.dim() {
            if grid.face_active(flat, idx[d], d) {
                g[d * n + flat] = (u[flat + grid.strides()[d]] - u[flat]) * inv_h;
            }
        }
    });
}

/// out[i] = -div(w)[i] on in-domain cells (zero elsewhere).
#[inline]
fn neg_divergence_into(grid: &Grid, w: &[f64], out: &mut [f64]) {
    let n = grid.len();
    let inv_h = 1.0 / grid.spacing();
    out.fill(0.0);
    grid.for_each_cell(|flat, idx| {
        if !grid.in_domain(flat) {
            return;
        }
        let mut acc = 0.0;
        for d in 0..grid.dim() {
            let s = grid.strides()[d];
            if grid.face_active(flat, idx[d], d) {
                acc += w[d * n + flat];
            }
            if idx[d] > 0 && grid.face_active(flat - s, idx[d] - 1, d) {
                acc -= w[d * n + flat - s];
            }
        }
        out[flat] = -acc * inv_h;
    });
}

/// Energy of the zero-trace field stored in `u` (raw full-array values).
fn energy_raw(
    grid: &Grid,
    u: &[f64],
    p: f64,
    delta: f64,
    law: &dyn Absorption,
    f: &[f64],
    g_buf: &mut [f64],
) -> f64 {
    forward_gradient_into(grid, u, g_buf);
    let n = grid.len();
    let offs = delta.powf(p);
    let mut terms: Vec<f64> = Vec::with_capacity(grid.n_domain());
    grid.for_each_cell(|flat, _| {
        if !grid.in_domain(flat) {
            return;
        }
        let mut m2 = delta * delta;
        for d in 0..grid.dim() {
            let v = g_buf[d * n + flat];
            m2 += v * v;
        }
        let mut t = (m2.powf(0.5 * p) - offs) / p;
        t += law.primitive(flat, u[flat]) - f[flat] * u[flat];
        terms.push(t);
    });
    util::sum(&terms) * grid.cell_volume()
}

/// E(up) - E(dn) accumulated cell by cell, avoiding the cancellation of two
/// large sums. Used by the finite-difference gradient check.
fn energy_diff_raw(
    grid: &Grid,
    up: &[f64],
    dn: &[f64],
    p: f64,
    delta: f64,
    law: &dyn Absorption,
    f: &[f64],
    g_up: &mut [f64],
    g_dn: &mut [f64],
) -> f64 {
    forward_gradient_into(grid, up, g_up);
    forward_gradient_into(grid, dn, g_dn);
    let n = grid.len();
    let mut terms: Vec<f64> = Vec::with_capacity(grid.n_domain());
    grid.for_each_cell(|flat, _| {
        if !grid.in_domain(flat) {
            return;
        }
        let mut m2u = delta * delta;
        let mut m2d = delta * delta;
        for d in 0..grid.dim() {
            let a = g_up[d * n + flat];
            let b = g_dn[d * n + flat];
            m2u += a * a;
            m2d += b * b;
        }
        let mut t = (m2u.powf(0.5 * p) - m2d.powf(0.5 * p)) / p;
        t += law.primitive(flat, up[flat]) - law.primitive(flat, dn[flat]);
        t -= f[flat] * (up[flat] - dn[flat]);
        terms.push(t);
    });
    util::sum(&terms) * grid.cell_volume()
}

/// The discrete energy; errors if u carries a nonzero Dirichlet trace.
pub fn energy(
    u: &ScalarField,
    cfg: &PlapConfig,
    law: &dyn Absorption,
    f: &ScalarField,
) -> Result<f64> {
    cfg.validate()?;
    f.check_grid(u.grid())?;
    if !u.has_zero_trace() {
        return Err(Error::Contract("energy requires a zero boundary trace".into()));
    }
    let grid = u.grid();
    let mut g = vec![0.0; grid.len() * grid.dim()];
    Ok(energy_raw(grid, u.values(), cfg.p, cfg.delta, law, f.values(), &mut g))
}

/// EL residual r = -div(|g|_delta^{p-2} g) + l(.,u) - f on interior cells;
/// also fills the per-cell weights a, b used by the Hessian. Returns the
/// sup-norm of r over interior cells.
#[allow(clippy::too_many_arguments)]
fn residual_and_weights(
    grid: &Grid,
    u: &[f64],
    p: f64,
    delta: f64,
    law: &dyn Absorption,
    f: &[f64],
    ws: &mut Workspace,
) -> f64 {
    let n = grid.len();
    forward_gradient_into(grid, u, &mut ws.grad);
    for flat in 0..n {
        if !grid.in_domain(flat) {
            ws.a[flat] = 0.0;
            ws.b[flat] = 0.0;
            continue;
        }
        let mut m2 = delta * delta;
        for d in 0..grid.dim() {
            let v = ws.grad[d * n + flat];
            m2 += v * v;
        }
        let m = m2.sqrt();
        ws.a[flat] = if p == 2.0 { 1.0 } else { m.powf(p - 2.0) };
        ws.b[flat] = if p == 2.0 { 0.0 } else { (p - 2.0) * m.powf(p - 4.0) };
        for d in 0..grid.dim() {
            ws.flux[d * n + flat] = ws.a[flat] * ws.grad[d * n + flat];
        }
    }
    neg_divergence_into(grid, &ws.flux, &mut ws.resid);
    let mut sup = 0.0f64;
    for &i in grid.interior_cells() {
        ws.resid[i] += law.eval(i, u[i]) - f[i];
        sup = sup.max(ws.resid[i].abs());
    }
    sup
}

/// Hessian-vector product out = G^T W G s + diag(l') s on interior cells
/// (s assumed zero off the interior). Units: PDE scale (no h^N factor).
/// With `ws_b` zeroed this is the lagged-diffusivity (Picard) linearization.
#[allow(clippy::too_many_arguments)]
fn hessian_apply(
    grid: &Grid,
    s: &[f64],
    law_slope: &[f64],
    ws_a: &[f64],
    ws_b: &[f64],
    ws_g: &[f64],
    qgrad: &mut [f64],
    flux: &mut [f64],
    out: &mut [f64],
) {
    let n = grid.len();
    forward_gradient_into(grid, s, qgrad);
    for flat in 0..n {
        if !grid.in_domain(flat) {
            continue;
        }
        let mut gq = 0.0;
        for d in 0..grid.dim() {
            gq += ws_g[d * n + flat] * qgrad[d * n + flat];
        }
        let bgq = ws_b[flat] * gq;
        for d in 0..grid.dim() {
            flux[d * n + flat] = ws_a[flat] * qgrad[d * n + flat] + bgq * ws_g[d * n + flat];
        }
    }
    neg_divergence_into(grid, flux, out);
    for &i in grid.interior_cells() {
        out[i] += law_slope[i] * s[i];
    }
}

fn jacobi_diagonal(grid: &Grid, ws: &mut Workspace, b: &[f64], law_slope: &[f64]) {
    let n = grid.len();
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    ws.diag.fill(1.0);
    let strides = grid.strides().to_vec();
    grid.for_each_cell(|flat, idx| {
        if !grid.in_domain(flat) {
            return;
        }
        // W_i = a I + b g g^T restricted to active axes
        let mut row_sum = 0.0; // 1^T W 1 over active axes
        for d in 0..grid.dim() {
            if !grid.face_active(flat, idx[d], d) {
                continue;
            }
            let gd = ws.grad[d * n + flat];
            for e in 0..grid.dim() {
                if !grid.face_active(flat, idx[e], e) {
                    continue;
                }
                let ge = ws.grad[e * n + flat];
                let w_de = b[flat] * gd * ge + if d == e { ws.a[flat] } else { 0.0 };
                row_sum += w_de;
            }
            // face (flat, d) also loads the diagonal of cell flat + e_d
            let j = flat + strides[d];
            if grid.flag(j) == crate::grid::CellFlag::Interior {
                let w_dd = ws.a[flat] + b[flat] * gd * gd;
                ws.diag[j] += w_dd * inv_h2;
            }
        }
        if grid.flag(flat) == crate::grid::CellFlag::Interior {
            ws.diag[flat] += row_sum * inv_h2 + law_slope[flat];
        }
    });
    // started from 1.0 everywhere so exterior/collar stay positive; remove
    // the unit seed on interior cells
    for &i in grid.interior_cells() {
        ws.diag[i] -= 1.0;
        if ws.diag[i] <= 0.0 {
            ws.diag[i] = 1.0;
        }
    }
}

fn masked_dot(idx: &[usize], a: &[f64], b: &[f64]) -> f64 {
    const CHUNK: usize = 1024;
    let partials: Vec<f64> = idx
        .chunks(CHUNK)
        .map(|c| c.iter().map(|&i| a[i] * b[i]).sum())
        .collect();
    util::sum(&partials)
}

/// Preconditioned CG for H s = -resid, on interior cells. Returns CG
/// iterations used.
#[allow(clippy::too_many_arguments)]
fn newton_direction(
    grid: &Grid,
    ws: &mut Workspace,
    b: &[f64],
    law_slope: &[f64],
    eta: f64,
    max_cg: usize,
) -> usize {
    let interior = grid.interior_cells();
    ws.dir.fill(0.0);
    for &i in interior {
        ws.cg_r[i] = -ws.resid[i];
        ws.cg_z[i] = ws.cg_r[i] / ws.diag[i];
        ws.cg_p[i] = ws.cg_z[i];
    }
    let mut rz = masked_dot(interior, &ws.cg_r, &ws.cg_z);
    let b_norm = masked_dot(interior, &ws.cg_r, &ws.cg_r).sqrt();
    if b_norm == 0.0 {
        return 0;
    }
    let target = eta * b_norm;
    let mut iters = 0;
    while iters < max_cg {
        hessian_apply(
            grid,
            &ws.cg_p,
            law_slope,
            &ws.a,
            b,
            &ws.grad,
            &mut ws.qgrad,
            &mut ws.flux,
            &mut ws.cg_ap,
        );
        let pap = masked_dot(interior, &ws.cg_p, &ws.cg_ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for &i in interior {
            ws.dir[i] += alpha * ws.cg_p[i];
            ws.cg_r[i] -= alpha * ws.cg_ap[i];
        }
        iters += 1;
        let r_norm = masked_dot(interior, &ws.cg_r, &ws.cg_r).sqrt();
        if r_norm <= target {
            break;
        }
        for &i in interior {
            ws.cg_z[i] = ws.cg_r[i] / ws.diag[i];
        }
        let rz_new = masked_dot(interior, &ws.cg_r, &ws.cg_z);
        let beta = rz_new / rz;
        rz = rz_new;
        for &i in interior {
            ws.cg_p[i] = ws.cg_z[i] + beta * ws.cg_p[i];
        }
    }
    iters
}

fn solve_stage(
    grid: &Arc<Grid>,
    u: &mut Vec<f64>,
    p: f64,
    delta: f64,
    tol: f64,
    max_iters: usize,
    law: &dyn Absorption,
    f: &[f64],
    ws: &mut Workspace,
) -> Result<StageReport> {
    let hn = grid.cell_volume();
    let interior = grid.interior_cells();
    let mut law_slope = vec![0.0; grid.len()];
    let mut trace = Vec::new();
    let mut energy = energy_raw(grid, u, p, delta, law, f, &mut ws.qgrad);
    if !energy.is_finite() {
        return Err(Error::NonFinite("initial energy".into()));
    }
    trace.push(energy);
    let debug = std::env::var("ONELAP_DEBUG").is_ok();
    let mut sup = residual_and_weights(grid, u, p, delta, law, f, ws);
    let sup0 = sup;
    let mut iters = 0;
    // For p < 2 the (p-2) g g^T curvature makes raw Newton steps far too
    // long away from the solution; the lagged-diffusivity direction (b = 0)
    // majorizes the energy and converges globally. Run it until the
    // residual has dropped, then let full Newton finish quadratically.
    let mut b_buf = vec![0.0; grid.len()];
    let mut picard = p < 2.0;
    let mut switch_level = 0.02 * sup0;
    while sup > tol && iters < max_iters {
        if picard && sup <= switch_level.max(10.0 * tol) {
            picard = false;
        }
        for &i in interior {
            law_slope[i] = law.slope(i, u[i]).max(0.0);
        }
        if picard {
            b_buf.fill(0.0);
        } else {
            b_buf.copy_from_slice(&ws.b);
        }
        jacobi_diagonal(grid, ws, &b_buf, &law_slope);
        let eta = if picard { 0.1 } else { 0.01 };
        let cg_iters = newton_direction(grid, ws, &b_buf, &law_slope, eta, 500);
        if debug {
            eprintln!(
                "  it {iters}: sup {sup:.3e} cg {cg_iters} picard {picard} energy {energy:.8e}"
            );
        }
        // directional derivative in energy units
        let mut dir_d = masked_dot(interior, &ws.resid, &ws.dir) * hn;
        if !(dir_d < 0.0) {
            // fall back to preconditioned steepest descent
            for &i in interior {
                ws.dir[i] = -ws.resid[i] / ws.diag[i];
            }
            dir_d = masked_dot(interior, &ws.resid, &ws.dir) * hn;
            if !(dir_d < 0.0) {
                break; // stationary to rounding
            }
        }
        // Armijo backtracking
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            ws.trial.copy_from_slice(u);
            for &i in interior {
                ws.trial[i] += alpha * ws.dir[i];
            }
            let e_new = energy_raw(grid, &ws.trial, p, delta, law, f, &mut ws.qgrad);
            if e_new.is_finite() && e_new <= energy + 1e-4 * alpha * dir_d {
                std::mem::swap(u, &mut ws.trial);
                energy = e_new;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        if !picard && alpha < 0.25 && p < 2.0 {
            // Newton engaged too early; back off and re-engage later
            picard = true;
            switch_level = 0.1 * sup;
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("solver iterate".into()));
        }
        let step_size = alpha * interior.iter().fold(0.0f64, |m, &i| m.max(ws.dir[i].abs()));
        trace.push(energy);
        iters += 1;
        sup = residual_and_weights(grid, u, p, delta, law, f, ws);
        if step_size <= 1e-15 * (1.0 + u.iter().fold(0.0f64, |m, &v| m.max(v.abs()))) {
            break; // below floating-point resolution of the iterate
        }
    }
    Ok(StageReport {
        p,
        iterations: iters,
        grad_norm: sup,
        converged: sup <= tol,
        energy_trace: trace,
    })
}

/// Solve -div(|grad u|_delta^{p-2} grad u) + l(x,u) = f with zero Dirichlet
/// trace. With continuation, stages run in order re-using the previous
/// solution; the report carries the final stage.
pub fn solve(
    cfg: &PlapConfig,
    law: &dyn Absorption,
    f: &ScalarField,
    u0: Option<&ScalarField>,
) -> Result<SolveReport> {
    cfg.validate()?;
    f.assert_finite("load f")?;
    let grid = f.grid().clone();
    let mut u = match u0 {
        Some(w) => {
            w.check_grid(&grid)?;
            w.assert_finite("initial guess")?;
            if !w.has_zero_trace() {
                return Err(Error::Contract("u0 must have a zero boundary trace".into()));
            }
            w.values().to_vec()
        }
        None => vec![0.0; grid.len()],
    };
    let schedule = match &cfg.continuation {
        Some(ps) => ps.clone(),
        None => vec![cfg.p],
    };
    for (k, &p) in schedule.iter().enumerate() {
        if p < 2.0 && cfg.delta == 0.0 {
            return Err(Error::InvalidInput(
                "delta must be positive for p < 2 (nonsmooth energy)".into(),
            ));
        }
        let _ = k;
    }
    let mut ws = Workspace::new(&grid);
    let mut stages = Vec::with_capacity(schedule.len());
    let scale = f.max_abs().max(1.0);
    for (k, &p) in schedule.iter().enumerate() {
        let last = k + 1 == schedule.len();
        let tol = if last {
            cfg.tol_grad
        } else {
            cfg.tol_grad.max(1e-6 * scale)
        };
        let st = solve_stage(
            &grid,
            &mut u,
            p,
            cfg.delta,
            tol,
            cfg.max_iters,
            law,
            f.values(),
            &mut ws,
        )?;
        stages.push(st);
    }
    let last = stages.last().unwrap().clone();
    let mut out = ScalarField::zeros(&grid);
    out.values_mut().copy_from_slice(&u);
    out.assert_finite("solution")?;
    Ok(SolveReport {
        u: out,
        energy_trace: last.energy_trace.clone(),
        grad_norm: last.grad_norm,
        iterations: stages.iter().map(|s| s.iterations).sum(),
        converged: last.converged,
        p_final: last.p,
        stages,
    })
}

/// Level-set decay diagnostic: measures |{|u| > k}| h^N for 32 evenly
/// spaced levels up to max |u|, plus the smallest listed level with zero
/// measure as the empirical sup bound.
pub struct StampacchiaReport {
    pub levels: Vec<(f64, f64)>,
    pub linf_estimate: f64,
}

pub fn stampacchia_levels(u: &ScalarField, _f: &ScalarField, _cfg: &PlapConfig) -> StampacchiaReport {
    let grid = u.grid();
    let hn = grid.cell_volume();
    let umax = u.max_abs();
    let m = 32;
    let mut levels = Vec::with_capacity(m);
    let mut linf = umax;
    for j in 1..=m {
        let k = umax * j as f64 / m as f64;
        let count = (0..grid.len())
            .filter(|&i| grid.in_domain(i) && u.get(i).abs() > k)
            .count();
        let meas = count as f64 * hn;
        if meas == 0.0 && k < linf {
            linf = k;
        }
        levels.push((k, meas));
    }
    StampacchiaReport {
        levels,
        linf_estimate: linf,
    }
}

/// Apply the Newton linearization at `u` to `s` (testing hook).
#[doc(hidden)]
pub fn debug_hessian_apply(
    grid: &Arc<Grid>,
    u: &ScalarField,
    s: &ScalarField,
    p: f64,
    delta: f64,
    law: &dyn Absorption,
) -> Vec<f64> {
    let mut ws = Workspace::new(grid);
    let f0 = vec![0.0; grid.len()];
    residual_and_weights(grid, u.values(), p, delta, law, &f0, &mut ws);
    let mut slope = vec![0.0; grid.len()];
    for &i in grid.interior_cells() {
        slope[i] = law.slope(i, u.get(i)).max(0.0);
    }
    let mut out = vec![0.0; grid.len()];
    hessian_apply(
        grid,
        s.values(),
        &slope,
        &ws.a,
        &ws.b,
        &ws.grad,
        &mut ws.qgrad,
        &mut ws.flux,
        &mut out,
    );
    out
}

pub enum GradCheck {
    Ok { max_rel_err: f64 },
    NotApplicable { reason: String },
}

/// Compare the analytic energy gradient against central finite differences
/// of the energy in 20 seeded random interior directions.
pub fn gradient_check(
    cfg: &PlapConfig,
    law: &dyn Absorption,
    f: &ScalarField,
    u: &ScalarField,
    seed: u64,
) -> Result<GradCheck> {
    cfg.validate()?;
    f.check_grid(u.grid())?;
    if !u.has_zero_trace() {
        return Err(Error::Contract("gradient_check requires zero trace".into()));
    }
    let grid = u.grid().clone();
    let mut ws = Workspace::new(&grid);
    if cfg.delta == 0.0 && cfg.p < 2.0 {
        forward_gradient_into(&grid, u.values(), &mut ws.grad);
        let n = grid.len();
        let flat_region = grid.interior_cells().iter().any(|&i| {
            (0..grid.dim()).all(|d| ws.grad[d * n + i] == 0.0)
        });
        if flat_region {
            return Ok(GradCheck::NotApplicable {
                reason: "delta = 0 with a flat region: energy is nonsmooth (kink of |.|)".into(),
            });
        }
    }
    residual_and_weights(&grid, u.values(), cfg.p, cfg.delta, law, f.values(), &mut ws);
    let hn = grid.cell_volume();
    let interior = grid.interior_cells();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fd = 1e-5;
    let mut worst = 0.0f64;
    let mut dir = vec![0.0; grid.len()];
    let mut up = u.values().to_vec();
    let mut dn = u.values().to_vec();
    for _ in 0..20 {
        for &i in interior {
            dir[i] = rng.gen_range(-1.0..1.0);
        }
        let norm = masked_dot(interior, &dir, &dir).sqrt();
        for &i in interior {
            dir[i] /= norm;
        }
        let analytic = masked_dot(interior, &ws.resid, &dir) * hn;
        up.copy_from_slice(u.values());
        dn.copy_from_slice(u.values());
        for &i in interior {
            up[i] += fd * dir[i];
            dn[i] -= fd * dir[i];
        }
        let diff = energy_diff_raw(
            &grid,
            &up,
            &dn,
            cfg.p,
            cfg.delta,
            law,
            f.values(),
            &mut ws.qgrad,
            &mut ws.flux,
        );
        let numeric = diff / (2.0 * fd);
        let denom = analytic.abs().max(1e-14);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(GradCheck::Ok { max_rel_err: worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    /// Dense Gaussian elimination with partial pivoting; test-only oracle.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            let d = a[col][col];
            assert!(d.abs() > 1e-14);
            for row in col + 1..n {
                let m = a[row][col] / d;
                if m != 0.0 {
                    for k in col..n {
                        a[row][k] -= m * a[col][k];
                    }
                    b[row] -= m * b[col];
                }
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut s = b[row];
            for k in row + 1..n {
                s -= a[row][k] * x[k];
            }
            x[row] = s / a[row][row];
        }
        x
    }

    fn random_zero_trace(grid: &Arc<Grid>, seed: u64, lo: f64, hi: f64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = ScalarField::zeros(grid);
        for &i in grid.interior_cells() {
            u.set(i, rng.gen_range(lo..hi));
        }
        u
    }

    #[test]
    fn energy_of_zero_is_zero() {
        let g = Grid::box_domain(&[9, 9], 0.25).unwrap();
        let u = ScalarField::zeros(&g);
        let f = ScalarField::zeros(&g);
        let cfg = PlapConfig { p: 1.5, delta: 1e-3, ..Default::default() };
        assert_eq!(energy(&u, &cfg, &ZeroAbsorption, &f).unwrap(), 0.0);
    }

    #[test]
    fn energy_rejects_nonzero_trace() {
        let g = Grid::box_domain(&[9, 9], 0.25).unwrap();
        let mut u = ScalarField::zeros(&g);
        u.set(g.boundary_cells()[0], 1.0);
        let f = ScalarField::zeros(&g);
        let cfg = PlapConfig::default();
        assert!(matches!(
            energy(&u, &cfg, &ZeroAbsorption, &f),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn energy_matches_dense_quadratic_form_oracle() {
        // p = 2, delta = 0: E = (1/2) (Gu)^T (Gu) h^N - f^T u h^N with G the
        // forward-difference matrix assembled densely from first principles.
        let g = Grid::box_domain(&[9, 9], 1.0 / 9.0).unwrap();
        let n = g.len();
        let u = random_zero_trace(&g, 1, -1.0, 1.0);
        let f = ScalarField::from_fn(&g, |x| (x[0] - 0.3) * x[1]);
        let h = g.spacing();
        let mut quad = 0.0;
        let mut idx = vec![0usize; 2];
        for flat in 0..n {
            g.decode(flat, &mut idx);
            for d in 0..2 {
                if g.face_active(flat, idx[d], d) {
                    let diff = (u.get(flat + g.strides()[d]) - u.get(flat)) / h;
                    quad += 0.5 * diff * diff;
                }
            }
        }
        let mut load = 0.0;
        for i in 0..n {
            if g.in_domain(i) {
                load += f.get(i) * u.get(i);
            }
        }
        let expected = (quad - load) * g.cell_volume();
        let cfg = PlapConfig { p: 2.0, delta: 0.0, ..Default::default() };
        let e = energy(&u, &cfg, &ZeroAbsorption, &f).unwrap();
        assert!((e - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn zero_load_linear_absorption_gives_zero() {
        let g = Grid::box_domain(&[9, 9], 0.25).unwrap();
        let f = ScalarField::zeros(&g);
        let cfg = PlapConfig { p: 1.5, delta: 1e-6, ..Default::default() };
        let rep = solve(&cfg, &LinearAbsorption(1.0), &f, None).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.u.max_abs(), 0.0);
    }

    #[test]
    fn poisson_matches_dense_five_point_oracle() {
        // p = 2, l = 0, f = 1 on the unit square: compare with a dense
        // solve of the 5-point Laplacian assembled independently.
        let n_cells = 9;
        let g = Grid::box_domain(&[n_cells, n_cells], 1.0 / n_cells as f64).unwrap();
        let f = ScalarField::constant(&g, 1.0);
        let cfg = PlapConfig { p: 2.0, delta: 0.0, tol_grad: 1e-12, ..Default::default() };
        let rep = solve(&cfg, &ZeroAbsorption, &f, None).unwrap();
        assert!(rep.converged);

        let interior = g.interior_cells();
        let m = interior.len();
        let pos: std::collections::HashMap<usize, usize> =
            interior.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let h2 = g.spacing() * g.spacing();
        let mut a = vec![vec![0.0; m]; m];
        let mut b = vec![0.0; m];
        let mut idx = vec![0usize; 2];
        for (k, &i) in interior.iter().enumerate() {
            g.decode(i, &mut idx);
            a[k][k] = 4.0 / h2;
            for d in 0..2 {
                for j in [i + g.strides()[d], i - g.strides()[d]] {
                    if let Some(&kj) = pos.get(&j) {
                        a[k][kj] = -1.0 / h2;
                    }
                    // collar neighbors contribute zero Dirichlet data
                }
            }
            b[k] = 1.0;
        }
        let x = dense_solve(a, b);
        let mut worst = 0.0f64;
        for (k, &i) in interior.iter().enumerate() {
            worst = worst.max((rep.u.get(i) - x[k]).abs());
        }
        assert!(worst < 1e-8, "max deviation from dense oracle {worst:.3e}");
    }

    #[test]
    fn energy_trace_decreases_from_random_start() {
        let g = Grid::box_domain(&[17, 17], 1.0 / 17.0).unwrap();
        let f = ScalarField::from_fn(&g, |x| (3.0 * x[0]).sin() + x[1]);
        let u0 = random_zero_trace(&g, 5, -0.5, 0.5);
        let cfg = PlapConfig { p: 1.5, delta: 1e-6, tol_grad: 1e-9, ..Default::default() };
        let rep = solve(&cfg, &LinearAbsorption(1.0), &f, Some(&u0)).unwrap();
        assert!(rep.converged);
        assert!(rep.energy_trace.len() > 2);
        for w in rep.energy_trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0),
                "energy increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn continuation_reaches_small_p() {
        let g = Grid::box_domain(&[17, 17], 1.0 / 17.0).unwrap();
        let f = ScalarField::constant(&g, 2.0);
        let cfg = PlapConfig {
            delta: 1e-6,
            tol_grad: 1e-9,
            continuation: Some(vec![2.0, 1.5, 1.2, 1.05]),
            ..Default::default()
        };
        let rep = solve(&cfg, &LinearAbsorption(1.0), &f, None).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.p_final, 1.05);
        assert_eq!(rep.stages.len(), 4);
        assert!(rep.u.min_domain() >= -1e-12);
    }

    #[test]
    fn nonconvergence_is_flagged_not_error() {
        let g = Grid::box_domain(&[17, 17], 1.0 / 17.0).unwrap();
        let f = ScalarField::constant(&g, 1.0);
        let cfg = PlapConfig { p: 1.2, delta: 1e-6, tol_grad: 1e-14, max_iters: 1, ..Default::default() };
        let rep = solve(&cfg, &ZeroAbsorption, &f, None).unwrap();
        assert!(!rep.converged);
        assert!(rep.grad_norm > 1e-14);
    }

    #[test]
    fn stampacchia_zero_field_and_monotone_measures() {
        let g = Grid::ball(2, 24, 1.0).unwrap();
        let cfg = PlapConfig::default();
        let zero = ScalarField::zeros(&g);
        let rep = stampacchia_levels(&zero, &zero, &cfg);
        assert!(rep.levels.iter().all(|&(_, m)| m == 0.0));

        let u = ScalarField::from_fn_interior(&g, |x| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt().max(0.05);
            2.0 / r
        });
        let rep = stampacchia_levels(&u, &zero, &cfg);
        for w in rep.levels.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
        assert!(rep.linf_estimate <= u.max_abs());
    }

    #[test]
    fn stampacchia_radial_measures_match_geometry() {
        // |{u > k}| for u = 2/|x| is the volume of the ball of radius 2/k
        // intersected with the domain, up to one cell layer.
        let g = Grid::ball(2, 64, 1.0).unwrap();
        let u = ScalarField::from_fn_interior(&g, |x| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt().max(g.spacing() / 2.0);
            2.0 / r
        });
        let cfg = PlapConfig::default();
        let rep = stampacchia_levels(&u, &ScalarField::zeros(&g), &cfg);
        let h = g.spacing();
        for &(k, meas) in &rep.levels {
            let r_k = (2.0 / k).min(1.0);
            if r_k < 0.15 {
                continue; // too few cells for the geometric estimate
            }
            let exact = std::f64::consts::PI * r_k * r_k;
            let ring = 2.0 * std::f64::consts::PI * r_k * 2.0 * h + 8.0 * h * h;
            assert!(
                (meas - exact).abs() <= ring + 0.06 * exact,
                "k={k}: measure {meas} vs geometric {exact} (ring {ring})"
            );
        }
    }

    #[test]
    fn gradient_check_quadratic_exact() {
        let g = Grid::box_domain(&[17, 17], 1.0 / 17.0).unwrap();
        let u = random_zero_trace(&g, 9, -1.0, 1.0);
        let f = ScalarField::constant(&g, 0.7);
        let cfg = PlapConfig { p: 2.0, delta: 0.0, ..Default::default() };
        match gradient_check(&cfg, &LinearAbsorption(1.0), &f, &u, 1234).unwrap() {
            GradCheck::Ok { max_rel_err } => assert!(max_rel_err <= 1e-9, "{max_rel_err:.3e}"),
            _ => panic!("expected applicable check"),
        }
    }

    #[test]
    fn gradient_check_small_p() {
        let g = Grid::box_domain(&[17, 17], 1.0 / 17.0).unwrap();
        let u = random_zero_trace(&g, 10, -1.0, 1.0);
        let f = ScalarField::constant(&g, 0.3);
        let cfg = PlapConfig { p: 1.1, delta: 1e-4, ..Default::default() };
        match gradient_check(&cfg, &ZeroAbsorption, &f, &u, 99).unwrap() {
            GradCheck::Ok { max_rel_err } => assert!(max_rel_err <= 1e-6, "{max_rel_err:.3e}"),
            _ => panic!("expected applicable check"),
        }
    }

    #[test]
    fn gradient_check_flat_region_flagged() {
        let g = Grid::box_domain(&[17, 17], 1.0 / 17.0).unwrap();
        let u = ScalarField::zeros(&g); // entirely flat
        let f = ScalarField::constant(&g, 1.0);
        let cfg = PlapConfig { p: 1.1, delta: 0.0, ..Default::default() };
        match gradient_check(&cfg, &ZeroAbsorption, &f, &u, 7).unwrap() {
            GradCheck::NotApplicable { .. } => {}
            _ => panic!("expected not-applicable flag for the nonsmooth kink"),
        }
    }

    #[test]
    fn comparison_principle_randomized() {
        // increasing absorption, f1 <= f2 pointwise => u1 <= u2 + 1e-8.
        let g = Grid::box_domain(&[17, 17], 1.0 / 17.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..10 {
            let f1 = {
                let mut f = ScalarField::zeros(&g);
                for i in 0..g.len() {
                    if g.in_domain(i) {
                        f.set(i, rng.gen_range(-1.0..1.0));
                    }
                }
                f
            };
            let mut f2 = f1.clone();
            for i in 0..g.len() {
                if g.in_domain(i) {
                    f2.set(i, f1.get(i) + rng.gen_range(0.0..0.5));
                }
            }
            let cfg = PlapConfig { p: 1.05, delta: 1e-6, tol_grad: 1e-8, ..Default::default() };
            let u1 = solve(&cfg, &LinearAbsorption(1.0), &f1, None).unwrap();
            let u2 = solve(&cfg, &LinearAbsorption(1.0), &f2, None).unwrap();
            assert!(u1.converged && u2.converged);
            let mut worst = f64::NEG_INFINITY;
            for i in 0..g.len() {
                if g.in_domain(i) {
                    worst = worst.max(u1.u.get(i) - u2.u.get(i));
                }
            }
            assert!(worst <= 1e-8, "trial {trial}: comparison defect {worst:.3e}");
        }
    }

    #[test]
    fn validate_absorption_flags() {
        let g = Grid::box_domain(&[9, 9], 0.25).unwrap();
        assert!(validate_absorption(&LinearAbsorption(1.0), &g, 5.0).is_ok());
        assert!(validate_absorption(&LinearAbsorption(-1.0), &g, 5.0).is_err());
        let sing = SingularAbsorption { scale: vec![1.0; g.len()], gamma: 1.0, eps: 0.5 };
        assert!(validate_absorption(&sing, &g, 5.0).is_ok());
    }
}
