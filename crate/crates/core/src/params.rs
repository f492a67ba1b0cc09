//! Flat parameter vectors, coordinate partitions, masks and the block-sum norm.
//!
//! Indices are 0-based in code. Documentation and file formats number
//! coordinates and blocks from 1.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Fixed-length vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "entry {} is {}",
                i + 1,
                values[i]
            )));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(d: usize) -> Self {
        ParamVector(vec![0.0; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    /// `self + scale * direction`, rejecting mismatched lengths and non-finite results.
    pub fn add_scaled(&self, scale: f64, direction: &[f64]) -> Result<ParamVector> {
        check_dims(self.len(), direction.len())?;
        let values = self
            .0
            .iter()
            .zip(direction)
            .map(|(x, v)| x + scale * v)
            .collect();
        ParamVector::new(values)
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::invalid(format!(
            "dimension mismatch: expected {expected}, got {got}"
        )));
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `sign[x]` with `sign[0] = 0`.
pub fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    #[default]
    Contiguous,
    Shuffled,
}

/// Disjoint cover of `0..d` by `K` non-empty blocks whose sizes differ by at most one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    d: usize,
    blocks: Vec<Vec<usize>>,
    owner: Vec<usize>,
}

impl Partition {
    /// Indices in order; the first `d mod K` blocks get one extra element.
    pub fn contiguous(d: usize, k: usize) -> Result<Self> {
        let order: Vec<usize> = (0..d).collect();
        Self::from_order(d, k, &order)
    }

    /// Permutes the indices with `rng`, then assigns them contiguously.
    pub fn shuffled(d: usize, k: usize, rng: &mut RngStream) -> Result<Self> {
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(rng);
        Self::from_order(d, k, &order)
    }

    fn from_order(d: usize, k: usize, order: &[usize]) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if k > d {
            return Err(Error::invalid(format!("K = {k} exceeds d = {d}")));
        }
        let base = d / k;
        let extra = d % k;
        let mut blocks = Vec::with_capacity(k);
        let mut owner = vec![0; d];
        let mut cursor = 0;
        for b in 0..k {
            let size = base + usize::from(b < extra);
            let mut block = order[cursor..cursor + size].to_vec();
            block.sort_unstable();
            for &i in &block {
                owner[i] = b;
            }
            blocks.push(block);
            cursor += size;
        }
        Ok(Partition { d, blocks, owner })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, k: usize) -> &[usize] {
        &self.blocks[k]
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block_size(&self, k: usize) -> usize {
        self.blocks[k].len()
    }

    /// Block that owns coordinate `i`.
    pub fn owner(&self, i: usize) -> usize {
        self.owner[i]
    }

    pub fn mask(&self, k: usize) -> Result<MaskVector> {
        self.check_block(k)?;
        let mut bits = vec![false; self.d];
        for &i in &self.blocks[k] {
            bits[i] = true;
        }
        Ok(MaskVector { bits })
    }

    pub(crate) fn check_block(&self, k: usize) -> Result<()> {
        if k >= self.blocks.len() {
            return Err(Error::invalid(format!(
                "block index {} out of range 1..={}",
                k + 1,
                self.blocks.len()
            )));
        }
        Ok(())
    }

    /// Euclidean norm of `v` restricted to block `k`.
    pub fn block_norm(&self, v: &[f64], k: usize) -> f64 {
        self.blocks[k]
            .iter()
            .map(|&i| v[i] * v[i])
            .sum::<f64>()
            .sqrt()
    }
}

pub fn make_partition(
    d: usize,
    k: usize,
    mode: PartitionMode,
    rng: &mut RngStream,
) -> Result<Partition> {
    match mode {
        PartitionMode::Contiguous => Partition::contiguous(d, k),
        PartitionMode::Shuffled => Partition::shuffled(d, k, rng),
    }
}

/// Sum over blocks of per-block Euclidean norms.
pub fn block_sum_norm(v: &[f64], p: &Partition) -> Result<f64> {
    check_dims(p.dim(), v.len())?;
    Ok((0..p.num_blocks()).map(|k| p.block_norm(v, k)).sum())
}

/// Binary indicator of one block's coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVector {
    bits: Vec<bool>,
}

impl MaskVector {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        MaskVector { bits }
    }

    pub fn ones(d: usize) -> Self {
        MaskVector {
            bits: vec![true; d],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Hadamard product with a mask; coordinates outside the mask become exactly 0.
pub fn mask_apply(v: &ParamVector, m: &MaskVector) -> Result<ParamVector> {
    check_dims(v.len(), m.len())?;
    Ok(ParamVector(
        v.iter()
            .zip(m.bits())
            .map(|(&x, &b)| if b { x } else { 0.0 })
            .collect(),
    ))
}
