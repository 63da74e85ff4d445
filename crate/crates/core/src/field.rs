//! Scalar and vector fields on a grid.
//!
//! Values are stored for the full bounding array in row-major order;
//! exterior cells hold zero. Vector components live cell-centered with the
//! forward-face convention: component d at cell i belongs to the face
//! (i, i + e_d).

use crate::error::{Error, Result};
use crate::grid::{read_header_line, parse_tok, CellFlag, Grid};
use crate::util;
use std::io::{Read, Write};
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    /// Constant on in-domain cells, zero outside.
    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        let mut f = Self::zeros(grid);
        for i in 0..grid.len() {
            if grid.in_domain(i) {
                f.values[i] = c;
            }
        }
        f
    }

    /// Evaluate `f(x)` at in-domain cell centers.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        let mut x = vec![0.0; grid.dim()];
        grid.for_each_cell(|flat, idx| {
            if grid.in_domain(flat) {
                grid.cell_center(idx, &mut x);
                out.values[flat] = f(&x);
            }
        });
        out
    }

    /// Like [`from_fn`] but only on interior cells; the collar stays zero.
    pub fn from_fn_interior(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        let mut idx = vec![0usize; grid.dim()];
        let mut x = vec![0.0; grid.dim()];
        for &flat in grid.interior_cells() {
            grid.decode(flat, &mut idx);
            grid.cell_center(&idx, &mut x);
            out.values[flat] = f(&x);
        }
        out
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    #[inline]
    pub fn get(&self, flat: usize) -> f64 {
        self.values[flat]
    }
    #[inline]
    pub fn set(&mut self, flat: usize, v: f64) {
        self.values[flat] = v;
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn check_grid(&self, grid: &Arc<Grid>) -> Result<()> {
        if Arc::ptr_eq(&self.grid, grid) || *self.grid == **grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn assert_finite(&self, what: &str) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            Err(Error::NonFinite(what.into()))
        } else {
            Ok(())
        }
    }

    /// Zero on every collar cell (exact comparison; the collar stores the
    /// Dirichlet trace explicitly).
    pub fn has_zero_trace(&self) -> bool {
        self.grid
            .boundary_cells()
            .iter()
            .all(|&b| self.values[b] == 0.0)
    }

    /// Trace extraction: the collar values as (cell, value) pairs.
    pub fn trace(&self) -> Vec<(usize, f64)> {
        self.grid
            .boundary_cells()
            .iter()
            .map(|&b| (b, self.values[b]))
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_domain(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.values.len() {
            if self.grid.in_domain(i) {
                m = m.min(self.values[i]);
            }
        }
        m
    }

    pub fn max_domain(&self) -> f64 {
        let mut m = f64::NEG_INFINITY;
        for i in 0..self.values.len() {
            if self.grid.in_domain(i) {
                m = m.max(self.values[i]);
            }
        }
        m
    }

    pub fn min_interior(&self) -> f64 {
        self.grid
            .interior_cells()
            .iter()
            .fold(f64::INFINITY, |m, &i| m.min(self.values[i]))
    }

    /// (Sum over in-domain cells of |u|^p h^N)^{1/p}.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let terms: Vec<f64> = (0..self.values.len())
            .filter(|&i| self.grid.in_domain(i))
            .map(|i| self.values[i].abs().powf(p))
            .collect();
        (util::sum(&terms) * self.grid.cell_volume()).powf(1.0 / p)
    }

    /// Sum of |u| h^N over in-domain cells.
    pub fn l1_norm(&self) -> f64 {
        let terms: Vec<f64> = (0..self.values.len())
            .filter(|&i| self.grid.in_domain(i))
            .map(|i| self.values[i].abs())
            .collect();
        util::sum(&terms) * self.grid.cell_volume()
    }

    /// Inner product Sum(u v) h^N over in-domain cells.
    pub fn inner(&self, other: &ScalarField) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        let terms: Vec<f64> = (0..self.values.len())
            .filter(|&i| self.grid.in_domain(i))
            .map(|i| self.values[i] * other.values[i])
            .collect();
        Ok(util::sum(&terms) * self.grid.cell_volume())
    }

    /// Marcinkiewicz quasi-norm sup_t t |{|u| > t}|^{1/N} by discrete
    /// rearrangement over in-domain cells.
    pub fn lorentz_weak_norm(&self) -> f64 {
        let mut vals: Vec<f64> = (0..self.values.len())
            .filter(|&i| self.grid.in_domain(i))
            .map(|i| self.values[i].abs())
            .collect();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let hn = self.grid.cell_volume();
        let inv_n = 1.0 / self.grid.dim() as f64;
        let mut best = 0.0f64;
        for (k, v) in vals.iter().enumerate() {
            best = best.max(v * ((k + 1) as f64 * hn).powf(inv_n));
        }
        best
    }

    /// Nearest-cell injection from a field on a coarser grid of the same
    /// physical box. Collar cells stay zero; used to warm-start solves.
    pub fn resample_onto(&self, grid: &Arc<Grid>) -> ScalarField {
        let src = &self.grid;
        let mut out = ScalarField::zeros(grid);
        let mut idx = vec![0usize; grid.dim()];
        let mut x = vec![0.0; grid.dim()];
        let mut sidx = vec![0usize; src.dim()];
        for &flat in grid.interior_cells() {
            grid.decode(flat, &mut idx);
            grid.cell_center(&idx, &mut x);
            for d in 0..grid.dim() {
                let t = ((x[d] - src.origin()[d]) / src.spacing() - 0.5).round();
                sidx[d] = (t.max(0.0) as usize).min(src.shape()[d] - 1);
            }
            let sflat = src.flat(&sidx);
            if src.in_domain(sflat) {
                out.values[flat] = self.values[sflat];
            }
        }
        out
    }

    /// Write as a one-line text header plus raw little-endian f64 in
    /// row-major order.
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let g = &self.grid;
        write!(w, "onelap-field v1 {}", g.dim())?;
        for n in g.shape() {
            write!(w, " {}", n)?;
        }
        writeln!(w, " {}", g.spacing())?;
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    /// Read a field written by [`write`] onto an existing grid; the header
    /// must agree with the grid.
    pub fn read<R: Read>(r: &mut R, grid: &Arc<Grid>) -> Result<ScalarField> {
        let header = read_header_line(r)?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("onelap-field") || parts.next() != Some("v1") {
            return Err(Error::Parse("bad field header".into()));
        }
        let dim: usize = parse_tok(parts.next())?;
        if dim != grid.dim() {
            return Err(Error::Parse("field dimension does not match grid".into()));
        }
        let mut shape = Vec::with_capacity(dim);
        for _ in 0..dim {
            shape.push(parse_tok::<usize>(parts.next())?);
        }
        let spacing: f64 = parse_tok(parts.next())?;
        if shape != grid.shape() || (spacing - grid.spacing()).abs() > 1e-12 * grid.spacing() {
            return Err(Error::Parse("field geometry does not match grid".into()));
        }
        let mut bytes = vec![0u8; grid.len() * 8];
        r.read_exact(&mut bytes)?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }
}

#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Arc<Grid>,
    /// Layout: comps[d * ncells + i].
    comps: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        VectorField {
            grid: grid.clone(),
            comps: vec![0.0; grid.len() * grid.dim()],
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    #[inline]
    pub fn get(&self, d: usize, flat: usize) -> f64 {
        self.comps[d * self.grid.len() + flat]
    }
    #[inline]
    pub fn set(&mut self, d: usize, flat: usize, v: f64) {
        self.comps[d * self.grid.len() + flat] = v;
    }
    pub fn comps(&self) -> &[f64] {
        &self.comps
    }
    pub fn comps_mut(&mut self) -> &mut [f64] {
        &mut self.comps
    }
    pub fn component(&self, d: usize) -> &[f64] {
        &self.comps[d * self.grid.len()..(d + 1) * self.grid.len()]
    }

    pub fn same_grid_scalar(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, other.grid()) || *self.grid == **other.grid()
    }

    pub fn assert_finite(&self, what: &str) -> Result<()> {
        if self.comps.iter().any(|v| !v.is_finite()) {
            Err(Error::NonFinite(what.into()))
        } else {
            Ok(())
        }
    }

    /// Pointwise Euclidean magnitude at cell `flat`.
    #[inline]
    pub fn magnitude(&self, flat: usize) -> f64 {
        let n = self.grid.len();
        let mut s = 0.0;
        for d in 0..self.grid.dim() {
            let v = self.comps[d * n + flat];
            s += v * v;
        }
        s.sqrt()
    }

    pub fn max_magnitude(&self) -> f64 {
        (0..self.grid.len()).fold(0.0, |m, i| m.max(self.magnitude(i)))
    }

    /// (Sum over in-domain cells of |z|^q h^N)^{1/q} with |z| the Euclidean
    /// cell magnitude.
    pub fn lq_norm(&self, q: f64) -> f64 {
        let g = &self.grid;
        let terms: Vec<f64> = (0..g.len())
            .filter(|&i| g.in_domain(i))
            .map(|i| self.magnitude(i).powf(q))
            .collect();
        (util::sum(&terms) * g.cell_volume()).powf(1.0 / q)
    }
}

/// Flag exterior-but-stored cells never leak into norms: used in tests.
pub fn domain_cells_only(grid: &Grid) -> impl Iterator<Item = usize> + '_ {
    (0..grid.len()).filter(move |&i| grid.flag(i) != CellFlag::Exterior)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_io_roundtrip() {
        let g = Grid::ball(2, 12, 1.0).unwrap();
        let u = ScalarField::from_fn(&g, |x| x[0] * 2.0 - x[1]);
        let mut buf = Vec::new();
        u.write(&mut buf).unwrap();
        let v = ScalarField::read(&mut &buf[..], &g).unwrap();
        assert_eq!(u.values(), v.values());
    }

    #[test]
    fn io_rejects_wrong_grid() {
        let g = Grid::ball(2, 12, 1.0).unwrap();
        let u = ScalarField::zeros(&g);
        let mut buf = Vec::new();
        u.write(&mut buf).unwrap();
        let g2 = Grid::ball(2, 14, 1.0).unwrap();
        assert!(ScalarField::read(&mut &buf[..], &g2).is_err());
    }

    #[test]
    fn lorentz_norm_of_constant() {
        // ||c||_{N,inf} = c |Omega|^{1/N}
        let g = Grid::box_domain(&[8, 8], 0.125).unwrap();
        let u = ScalarField::constant(&g, 2.0);
        let expected = 2.0 * g.domain_volume().powf(0.5);
        assert!((u.lorentz_weak_norm() - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_trace_detection() {
        let g = Grid::box_domain(&[5, 5], 1.0).unwrap();
        let mut u = ScalarField::zeros(&g);
        assert!(u.has_zero_trace());
        let b = g.boundary_cells()[0];
        u.set(b, 0.5);
        assert!(!u.has_zero_trace());
    }
}
