//! Block-structured points of the parameter space.
//!
//! A [`Point`] is an ordered list of named dense blocks. Vector blocks are
//! stored as `n x 1` column matrices so every block shares one storage type.
//! Flattening concatenates blocks in order, each block column-major.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Vector,
    Matrix,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BlockShape {
    pub name: String,
    pub kind: BlockKind,
    pub rows: usize,
    pub cols: usize,
}

impl BlockShape {
    pub fn vector(name: impl Into<String>, len: usize) -> Self {
        Self {
            name: name.into(),
            kind: BlockKind::Vector,
            rows: len,
            cols: 1,
        }
    }

    pub fn matrix(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            kind: BlockKind::Matrix,
            rows,
            cols,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered block shapes describing a point.
pub type Layout = Vec<BlockShape>;

/// Total number of scalar entries in a layout.
pub fn layout_len(layout: &[BlockShape]) -> usize {
    layout.iter().map(BlockShape::len).sum()
}

/// Checks that block names are unique and every block is non-empty.
pub fn validate_layout(layout: &[BlockShape]) -> Result<()> {
    for (i, b) in layout.iter().enumerate() {
        if b.is_empty() {
            return Err(Error::config(format!("block '{}' is empty", b.name)));
        }
        if layout[..i].iter().any(|o| o.name == b.name) {
            return Err(Error::config(format!("duplicate block name '{}'", b.name)));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    pub data: DMatrix<f64>,
}

impl Block {
    pub fn shape(&self) -> BlockShape {
        BlockShape {
            name: self.name.clone(),
            kind: self.kind,
            rows: self.data.nrows(),
            cols: self.data.ncols(),
        }
    }

    fn same_shape(&self, other: &Block) -> bool {
        self.kind == other.kind && self.data.shape() == other.data.shape()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    blocks: Vec<Block>,
}

impl Point {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        let p = Self { blocks };
        validate_layout(&p.layout())?;
        Ok(p)
    }

    pub fn zeros(layout: &[BlockShape]) -> Self {
        let blocks = layout
            .iter()
            .map(|s| Block {
                name: s.name.clone(),
                kind: s.kind,
                data: DMatrix::zeros(s.rows, s.cols),
            })
            .collect();
        Self { blocks }
    }

    /// A single vector block named `x`.
    pub fn from_vec(values: &[f64]) -> Self {
        Self {
            blocks: vec![Block {
                name: "x".into(),
                kind: BlockKind::Vector,
                data: DMatrix::from_column_slice(values.len(), 1, values),
            }],
        }
    }

    /// A single matrix block named `W`, entries given row by row.
    pub fn from_matrix_rows(rows: usize, cols: usize, row_major: &[f64]) -> Self {
        Self {
            blocks: vec![Block {
                name: "W".into(),
                kind: BlockKind::Matrix,
                data: DMatrix::from_row_slice(rows, cols, row_major),
            }],
        }
    }

    pub fn from_flat(layout: &[BlockShape], flat: &[f64]) -> Result<Self> {
        if flat.len() != layout_len(layout) {
            return Err(Error::config(format!(
                "flat length {} does not match layout length {}",
                flat.len(),
                layout_len(layout)
            )));
        }
        let mut offset = 0;
        let blocks = layout
            .iter()
            .map(|s| {
                let data = DMatrix::from_column_slice(s.rows, s.cols, &flat[offset..offset + s.len()]);
                offset += s.len();
                Block {
                    name: s.name.clone(),
                    kind: s.kind,
                    data,
                }
            })
            .collect();
        Ok(Self { blocks })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for b in &self.blocks {
            out.extend_from_slice(b.data.as_slice());
        }
        out
    }

    pub fn layout(&self) -> Layout {
        self.blocks.iter().map(Block::shape).collect()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    /// Total number of scalar entries.
    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_layout(&self, other: &Point) -> bool {
        self.blocks.len() == other.blocks.len() && self.blocks.iter().zip(&other.blocks).all(|(a, b)| a.same_shape(b))
    }

    pub fn check_layout(&self, other: &Point) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::config(format!(
                "shape mismatch: {} vs {}",
                describe(&self.layout()),
                describe(&other.layout())
            )))
        }
    }

    /// Frobenius inner product summed over blocks.
    pub fn dot(&self, other: &Point) -> f64 {
        assert!(self.same_layout(other), "dot: shape mismatch");
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.data.dot(&b.data))
            .sum()
    }

    pub fn norm_fro(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> Point {
        self.map_blocks(|m| m * s)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Point) -> Point {
        self.zip_blocks(other, |a, b| a + b * s)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.data.iter().all(|v| v.is_finite()))
    }

    pub fn map_blocks(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Point {
        Point {
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    name: b.name.clone(),
                    kind: b.kind,
                    data: f(&b.data),
                })
                .collect(),
        }
    }

    fn zip_blocks(&self, other: &Point, f: impl Fn(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64>) -> Point {
        assert!(self.same_layout(other), "blockwise op: shape mismatch");
        Point {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| Block {
                    name: a.name.clone(),
                    kind: a.kind,
                    data: f(&a.data, &b.data),
                })
                .collect(),
        }
    }
}

fn describe(layout: &[BlockShape]) -> String {
    let parts: Vec<String> = layout
        .iter()
        .map(|s| format!("{}[{}x{}]", s.name, s.rows, s.cols))
        .collect();
    parts.join(",")
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", describe(&self.layout()))
    }
}

impl Add for &Point {
    type Output = Point;
    fn add(self, rhs: &Point) -> Point {
        self.zip_blocks(rhs, |a, b| a + b)
    }
}

impl Sub for &Point {
    type Output = Point;
    fn sub(self, rhs: &Point) -> Point {
        self.zip_blocks(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        self.scale(rhs)
    }
}

impl Neg for &Point {
    type Output = Point;
    fn neg(self) -> Point {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip_preserves_layout() {
        let layout = vec![BlockShape::matrix("W", 2, 3), BlockShape::vector("b", 2)];
        let flat: Vec<f64> = (0..8).map(f64::from).collect();
        let p = Point::from_flat(&layout, &flat).unwrap();
        assert_eq!(p.layout(), layout);
        assert_eq!(p.to_flat(), flat);
    }

    #[test]
    fn duplicate_names_rejected() {
        let layout = vec![BlockShape::vector("a", 2), BlockShape::vector("a", 3)];
        assert!(validate_layout(&layout).is_err());
    }

    #[test]
    fn arithmetic_is_blockwise() {
        let a = Point::from_vec(&[1.0, 2.0]);
        let b = Point::from_vec(&[3.0, -1.0]);
        assert_eq!((&a + &b).to_flat(), vec![4.0, 1.0]);
        assert_eq!((&a - &b).to_flat(), vec![-2.0, 3.0]);
        assert_eq!(a.axpy(2.0, &b).to_flat(), vec![7.0, 0.0]);
        assert_eq!(a.dot(&b), 1.0);
    }

    #[test]
    fn layout_mismatch_detected() {
        let a = Point::from_vec(&[1.0, 2.0]);
        let b = Point::from_vec(&[1.0, 2.0, 3.0]);
        assert!(a.check_layout(&b).is_err());
    }
}
