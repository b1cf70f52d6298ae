//! Flat parameter vectors split into a model block and a proposal block.

use std::ops::Range;

use crate::error::{Error, Result};

/// One of the two parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    /// Parameters of the state-space model itself (transition and emission).
    Model,
    /// Parameters that only the particle proposal uses.
    Proposal,
}

/// A subset of `{Model, Proposal}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Blocks {
    pub model: bool,
    pub proposal: bool,
}

impl Blocks {
    pub const MODEL: Blocks = Blocks {
        model: true,
        proposal: false,
    };
    pub const PROPOSAL: Blocks = Blocks {
        model: false,
        proposal: true,
    };
    pub const ALL: Blocks = Blocks {
        model: true,
        proposal: true,
    };
    pub const NONE: Blocks = Blocks {
        model: false,
        proposal: false,
    };

    pub fn contains(self, block: Block) -> bool {
        match block {
            Block::Model => self.model,
            Block::Proposal => self.proposal,
        }
    }
}

impl From<Block> for Blocks {
    fn from(block: Block) -> Self {
        match block {
            Block::Model => Blocks::MODEL,
            Block::Proposal => Blocks::PROPOSAL,
        }
    }
}

/// Sizes of the two blocks. The model block occupies the leading indices and
/// the proposal block the trailing ones, so the partition is disjoint and
/// covering by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub model_len: usize,
    pub proposal_len: usize,
}

impl ParamLayout {
    /// An empty layout is allowed (a fixed model filtered with a fixed
    /// proposal); learners reject it.
    pub fn new(model_len: usize, proposal_len: usize) -> Result<Self> {
        Ok(Self {
            model_len,
            proposal_len,
        })
    }

    pub fn len(&self) -> usize {
        self.model_len + self.proposal_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn model_range(&self) -> Range<usize> {
        0..self.model_len
    }

    pub fn proposal_range(&self) -> Range<usize> {
        self.model_len..self.len()
    }

    pub fn range(&self, block: Block) -> Range<usize> {
        match block {
            Block::Model => self.model_range(),
            Block::Proposal => self.proposal_range(),
        }
    }

    pub fn block_len(&self, block: Block) -> usize {
        self.range(block).len()
    }

    /// Blocks that actually hold parameters.
    pub fn nonempty(&self) -> Blocks {
        Blocks {
            model: self.model_len > 0,
            proposal: self.proposal_len > 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: ParamLayout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: ParamLayout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn from_blocks(model: &[f64], proposal: &[f64]) -> Result<Self> {
        let layout = ParamLayout::new(model.len(), proposal.len())?;
        let mut values = Vec::with_capacity(layout.len());
        values.extend_from_slice(model);
        values.extend_from_slice(proposal);
        Ok(Self { values, layout })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn model(&self) -> &[f64] {
        &self.values[self.layout.model_range()]
    }

    pub fn proposal(&self) -> &[f64] {
        &self.values[self.layout.proposal_range()]
    }

    pub fn model_mut(&mut self) -> &mut [f64] {
        let r = self.layout.model_range();
        &mut self.values[r]
    }

    pub fn proposal_mut(&mut self) -> &mut [f64] {
        let r = self.layout.proposal_range();
        &mut self.values[r]
    }

    pub fn block(&self, block: Block) -> &[f64] {
        &self.values[self.layout.range(block)]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// A gradient increment for a [`ParamVector`]. Entries outside
/// `blocks_covered` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    values: Vec<f64>,
    layout: ParamLayout,
    blocks: Blocks,
}

impl GradientEstimate {
    /// Builds an estimate, zeroing everything outside `blocks`.
    pub fn new(mut values: Vec<f64>, layout: ParamLayout, blocks: Blocks) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                what: "gradient estimate",
                expected: layout.len(),
                got: values.len(),
            });
        }
        for block in [Block::Model, Block::Proposal] {
            if !blocks.contains(block) {
                values[layout.range(block)].fill(0.0);
            }
        }
        Ok(Self {
            values,
            layout,
            blocks,
        })
    }

    pub fn zeros(layout: ParamLayout, blocks: Blocks) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
            blocks,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn blocks_covered(&self) -> Blocks {
        self.blocks
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn block(&self, block: Block) -> &[f64] {
        &self.values[self.layout.range(block)]
    }

    /// Rescales each covered block so its Euclidean norm is at most `max_norm`.
    pub fn clip_block_norms(&mut self, max_norm: f64) {
        for block in [Block::Model, Block::Proposal] {
            if !self.blocks.contains(block) {
                continue;
            }
            let slice = &mut self.values[self.layout.range(block)];
            let norm = slice.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > max_norm {
                let scale = max_norm / norm;
                slice.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_covers_every_index_once() {
        let layout = ParamLayout::new(3, 4).unwrap();
        let mut seen = vec![0; layout.len()];
        for i in layout.model_range().chain(layout.proposal_range()) {
            seen[i] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn empty_layout_has_no_blocks() {
        let layout = ParamLayout::new(0, 0).unwrap();
        assert!(layout.is_empty());
        assert_eq!(layout.nonempty(), Blocks::NONE);
    }

    #[test]
    fn estimate_zeroes_uncovered_block() {
        let layout = ParamLayout::new(2, 2).unwrap();
        let g = GradientEstimate::new(vec![1.0, 2.0, 3.0, 4.0], layout, Blocks::PROPOSAL).unwrap();
        assert_eq!(g.values(), &[0.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn clipping_is_per_block() {
        let layout = ParamLayout::new(1, 2).unwrap();
        let mut g = GradientEstimate::new(vec![5.0, 3.0, 4.0], layout, Blocks::ALL).unwrap();
        g.clip_block_norms(1.0);
        assert!((g.values()[0] - 1.0).abs() < 1e-15);
        assert!((g.values()[1] - 0.6).abs() < 1e-15);
        assert!((g.values()[2] - 0.8).abs() < 1e-15);
    }
}
