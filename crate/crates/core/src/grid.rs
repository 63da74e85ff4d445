//! Voxelized domains on uniform Cartesian grids.
//!
//! A grid covers a box with `shape[d]` cells of side `spacing` along each
//! axis. Cells are flagged interior, boundary (the one-cell Dirichlet
//! collar) or exterior. Fields carry values on interior and boundary cells;
//! the collar stores the Dirichlet trace explicitly.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum CellFlag {
    Exterior = 0,
    Interior = 1,
    Boundary = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainKind {
    /// Cells whose center lies within `radius` of `center`; ties (center
    /// exactly on the sphere) count as inside.
    Ball { center: Vec<f64>, radius: f64 },
    Box,
    Custom,
}

#[derive(Debug)]
pub struct Grid {
    dim: usize,
    shape: Vec<usize>,
    spacing: f64,
    origin: Vec<f64>,
    strides: Vec<usize>,
    flags: Vec<CellFlag>,
    domain_kind: DomainKind,
    interior: Vec<usize>,
    boundary: Vec<usize>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.spacing == other.spacing && self.flags == other.flags
    }
}

impl Grid {
    fn validate_shape(shape: &[usize], spacing: f64) -> Result<()> {
        if shape.len() < 2 {
            return Err(Error::InvalidInput("grid dimension must be >= 2".into()));
        }
        if shape.iter().any(|&n| n < 3) {
            return Err(Error::InvalidInput("shape components must be >= 3".into()));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidInput("spacing must be positive".into()));
        }
        Ok(())
    }

    fn build(
        shape: Vec<usize>,
        spacing: f64,
        origin: Vec<f64>,
        inside: &[bool],
        domain_kind: DomainKind,
    ) -> Result<Arc<Grid>> {
        Self::validate_shape(&shape, spacing)?;
        let dim = shape.len();
        let len: usize = shape.iter().product();
        assert_eq!(inside.len(), len);
        let mut strides = vec![0usize; dim];
        let mut s = 1;
        for d in (0..dim).rev() {
            strides[d] = s;
            s *= shape[d];
        }
        // boundary = inside cells with a face neighbor outside (or off-array)
        let mut flags = vec![CellFlag::Exterior; len];
        let mut idx = vec![0usize; dim];
        for flat in 0..len {
            if inside[flat] {
                let mut collar = false;
                for d in 0..dim {
                    if idx[d] == 0
                        || idx[d] + 1 == shape[d]
                        || !inside[flat - strides[d]]
                        || !inside[flat + strides[d]]
                    {
                        collar = true;
                        break;
                    }
                }
                flags[flat] = if collar {
                    CellFlag::Boundary
                } else {
                    CellFlag::Interior
                };
            }
            for d in (0..dim).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let interior: Vec<usize> = (0..len).filter(|&i| flags[i] == CellFlag::Interior).collect();
        let boundary: Vec<usize> = (0..len).filter(|&i| flags[i] == CellFlag::Boundary).collect();
        if interior.is_empty() {
            return Err(Error::InvalidInput("domain has no interior cells".into()));
        }
        Ok(Arc::new(Grid {
            dim,
            shape,
            spacing,
            origin,
            strides,
            flags,
            domain_kind,
            interior,
            boundary,
        }))
    }

    /// Box domain: all cells in-domain, the outermost ring is the collar.
    pub fn box_domain(shape: &[usize], spacing: f64) -> Result<Arc<Grid>> {
        let len: usize = shape.iter().product();
        let inside = vec![true; len];
        Self::build(
            shape.to_vec(),
            spacing,
            vec![0.0; shape.len()],
            &inside,
            DomainKind::Box,
        )
    }

    /// Ball of `radius` centered at the origin, rasterized on an `n`^dim
    /// array spanning [-radius, radius]^dim (spacing 2*radius/n).
    pub fn ball(dim: usize, n: usize, radius: f64) -> Result<Arc<Grid>> {
        if !(radius > 0.0) {
            return Err(Error::InvalidInput("ball radius must be positive".into()));
        }
        let shape = vec![n; dim];
        let spacing = 2.0 * radius / n as f64;
        let origin = vec![-radius; dim];
        let len: usize = shape.iter().product();
        let mut inside = vec![false; len];
        let mut idx = vec![0usize; dim];
        for (flat, flag) in inside.iter_mut().enumerate().take(len) {
            let _ = flat;
            let mut r2 = 0.0;
            for d in 0..dim {
                let x = origin[d] + (idx[d] as f64 + 0.5) * spacing;
                r2 += x * x;
            }
            *flag = r2 <= radius * radius;
            for d in (0..dim).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Self::build(
            shape,
            spacing,
            origin,
            &inside,
            DomainKind::Ball {
                center: vec![0.0; dim],
                radius,
            },
        )
    }

    /// Custom mask: `inside[flat]` selects the in-domain cells.
    pub fn custom(shape: &[usize], spacing: f64, inside: &[bool]) -> Result<Arc<Grid>> {
        if inside.len() != shape.iter().product::<usize>() {
            return Err(Error::InvalidInput("mask length does not match shape".into()));
        }
        Self::build(
            shape.to_vec(),
            spacing,
            vec![0.0; shape.len()],
            inside,
            DomainKind::Custom,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
    pub fn spacing(&self) -> f64 {
        self.spacing
    }
    pub fn origin(&self) -> &[f64] {
        &self.origin
    }
    pub fn domain_kind(&self) -> &DomainKind {
        &self.domain_kind
    }
    pub fn len(&self) -> usize {
        self.flags.len()
    }
    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }
    pub fn flags(&self) -> &[CellFlag] {
        &self.flags
    }

    #[inline]
    pub fn flag(&self, flat: usize) -> CellFlag {
        self.flags[flat]
    }
    #[inline]
    pub fn in_domain(&self, flat: usize) -> bool {
        self.flags[flat] != CellFlag::Exterior
    }

    pub fn interior_cells(&self) -> &[usize] {
        &self.interior
    }
    pub fn boundary_cells(&self) -> &[usize] {
        &self.boundary
    }
    pub fn n_domain(&self) -> usize {
        self.interior.len() + self.boundary.len()
    }

    /// Cell volume h^N.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// |Omega| = (# in-domain cells) * h^N.
    pub fn domain_volume(&self) -> f64 {
        self.n_domain() as f64 * self.cell_volume()
    }

    /// Face area h^{N-1}.
    pub fn face_area(&self) -> f64 {
        self.spacing.powi(self.dim as i32 - 1)
    }

    pub fn decode(&self, flat: usize, idx: &mut [usize]) {
        let mut rem = flat;
        for d in 0..self.dim {
            idx[d] = rem / self.strides[d];
            rem %= self.strides[d];
        }
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn cell_center(&self, idx: &[usize], out: &mut [f64]) {
        for d in 0..self.dim {
            out[d] = self.origin[d] + (idx[d] as f64 + 0.5) * self.spacing;
        }
    }

    pub fn cell_center_flat(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0usize; self.dim];
        self.decode(flat, &mut idx);
        let mut x = vec![0.0; self.dim];
        self.cell_center(&idx, &mut x);
        x
    }

    /// Visit every cell in row-major order with its multi-index.
    pub fn for_each_cell(&self, mut f: impl FnMut(usize, &[usize])) {
        let mut idx = vec![0usize; self.dim];
        for flat in 0..self.len() {
            f(flat, &idx);
            for d in (0..self.dim).rev() {
                idx[d] += 1;
                if idx[d] < self.shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }

    /// Face (flat, flat + stride_d) exists and joins two in-domain cells.
    #[inline]
    pub fn face_active(&self, flat: usize, idx_d: usize, d: usize) -> bool {
        idx_d + 1 < self.shape[d]
            && self.flags[flat] != CellFlag::Exterior
            && self.flags[flat + self.strides[d]] != CellFlag::Exterior
    }

    /// Rasterize a ball against this grid: true on in-domain cells whose
    /// center lies within the ball.
    pub fn rasterize_ball(&self, center: &[f64], radius: f64) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        let mut x = vec![0.0; self.dim];
        self.for_each_cell(|flat, idx| {
            if self.flags[flat] != CellFlag::Exterior {
                self.cell_center(idx, &mut x);
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                mask[flat] = r2 <= radius * radius;
            }
        });
        mask
    }

    /// Write the mask: text header then one byte per cell in row-major order
    /// (0 exterior, 1 interior, 2 boundary).
    pub fn write_mask<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "onelap-mask v1 {}", self.dim)?;
        for n in &self.shape {
            write!(w, " {}", n)?;
        }
        writeln!(w, " {}", self.spacing)?;
        let bytes: Vec<u8> = self.flags.iter().map(|&f| f as u8).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    /// Read a mask written by [`write_mask`]. Reconstructs the grid with
    /// `DomainKind::Custom` and origin zero.
    pub fn read_mask<R: Read>(r: &mut R) -> Result<Arc<Grid>> {
        let header = read_header_line(r)?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("onelap-mask") || parts.next() != Some("v1") {
            return Err(Error::Parse("bad mask header".into()));
        }
        let dim: usize = parse_tok(parts.next())?;
        let mut shape = Vec::with_capacity(dim);
        for _ in 0..dim {
            shape.push(parse_tok(parts.next())?);
        }
        let spacing: f64 = parse_tok(parts.next())?;
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes)?;
        let inside: Vec<bool> = bytes.iter().map(|&b| b != 0).collect();
        Self::custom(&shape, spacing, &inside)
    }
}

pub(crate) fn read_header_line<R: Read>(r: &mut R) -> Result<String> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 4096 {
            return Err(Error::Parse("header line too long".into()));
        }
    }
    String::from_utf8(line).map_err(|_| Error::Parse("header not utf-8".into()))
}

pub(crate) fn parse_tok<T: std::str::FromStr>(tok: Option<&str>) -> Result<T> {
    tok.ok_or_else(|| Error::Parse("truncated header".into()))?
        .parse()
        .map_err(|_| Error::Parse("bad header token".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_flags() {
        let g = Grid::box_domain(&[4, 5], 0.5).unwrap();
        assert_eq!(g.n_domain(), 20);
        assert_eq!(g.interior_cells().len(), 2 * 3);
        // corner is boundary
        assert_eq!(g.flag(0), CellFlag::Boundary);
        assert_eq!(g.flag(g.flat(&[1, 1])), CellFlag::Interior);
    }

    #[test]
    fn ball_mask_is_centers_within_radius() {
        let g = Grid::ball(2, 16, 1.0).unwrap();
        let mut x = vec![0.0; 2];
        g.for_each_cell(|flat, idx| {
            g.cell_center(idx, &mut x);
            let inside = x[0] * x[0] + x[1] * x[1] <= 1.0;
            assert_eq!(g.in_domain(flat), inside);
        });
    }

    #[test]
    fn interior_has_full_collar() {
        let g = Grid::ball(3, 12, 1.0).unwrap();
        let mut idx = vec![0usize; 3];
        for &flat in g.interior_cells() {
            g.decode(flat, &mut idx);
            for d in 0..3 {
                assert!(idx[d] > 0 && idx[d] + 1 < g.shape()[d]);
                assert!(g.in_domain(flat + g.strides()[d]));
                assert!(g.in_domain(flat - g.strides()[d]));
            }
        }
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(Grid::box_domain(&[2, 5], 0.5).is_err());
        assert!(Grid::box_domain(&[5], 0.5).is_err());
        assert!(Grid::box_domain(&[5, 5], 0.0).is_err());
    }

    #[test]
    fn mask_roundtrip() {
        let g = Grid::ball(2, 10, 0.7).unwrap();
        let mut buf = Vec::new();
        g.write_mask(&mut buf).unwrap();
        let g2 = Grid::read_mask(&mut &buf[..]).unwrap();
        assert_eq!(g.shape(), g2.shape());
        assert_eq!(g.flags(), g2.flags());
        assert_eq!(g.spacing(), g2.spacing());
    }
}
