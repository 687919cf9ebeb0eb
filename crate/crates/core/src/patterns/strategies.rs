use crate::data::SideBatch;
use crate::error::{Error, Result};
use crate::models::{Block, Map, ModelStack};

use super::losses::*;
use super::{beta_of, BetaShape, LossGrad, PatternKind, SideObjective, SideUnit, Sigma, TransformMode};

fn wrong_batch(pattern: &str, want: &str) -> Error {
    Error::InvalidInput(format!("pattern `{pattern}` expects a batch of {want}"))
}

/// The representation is regressed onto the side information.
pub struct Direct;

impl SideObjective for Direct {
    fn kind(&self) -> PatternKind {
        PatternKind::Direct
    }
    fn unit(&self) -> SideUnit {
        SideUnit::Samples
    }
    fn beta_shape(&self) -> BetaShape {
        BetaShape::None
    }
    fn required_representation_dim(&self, side_dim: usize) -> Option<usize> {
        Some(side_dim)
    }
    fn side_blocks(&self) -> &'static [Block] {
        &[Block::Phi]
    }
    fn loss(&self, stack: &ModelStack, batch: &SideBatch<'_>) -> Result<LossGrad> {
        match batch {
            SideBatch::Samples { x, z, .. } => loss_direct(&stack.phi, x, z),
            _ => Err(wrong_batch(self.name(), "samples")),
        }
    }
}

/// An auxiliary head β predicts the side information from the representation.
pub struct MultiTask;

impl SideObjective for MultiTask {
    fn kind(&self) -> PatternKind {
        PatternKind::MultiTask
    }
    fn unit(&self) -> SideUnit {
        SideUnit::Samples
    }
    fn beta_shape(&self) -> BetaShape {
        BetaShape::FromRepresentation
    }
    fn side_blocks(&self) -> &'static [Block] {
        &[Block::Phi, Block::Beta]
    }
    fn loss(&self, stack: &ModelStack, batch: &SideBatch<'_>) -> Result<LossGrad> {
        match batch {
            SideBatch::Samples { x, z, .. } => loss_multitask(beta_of(stack, self.name())?, &stack.phi, x, z),
            _ => Err(wrong_batch(self.name(), "samples")),
        }
    }
}

/// φ(x) and an encoding β(z) of the second view are pulled together.
pub struct MultiViewCorrelation {
    pub gamma: f64,
}

impl SideObjective for MultiViewCorrelation {
    fn kind(&self) -> PatternKind {
        PatternKind::MultiViewCorr
    }
    fn unit(&self) -> SideUnit {
        SideUnit::Samples
    }
    fn beta_shape(&self) -> BetaShape {
        BetaShape::FromSide
    }
    fn side_blocks(&self) -> &'static [Block] {
        &[Block::Phi, Block::Beta]
    }
    fn loss(&self, stack: &ModelStack, batch: &SideBatch<'_>) -> Result<LossGrad> {
        match batch {
            SideBatch::Samples { x, z, .. } => {
                loss_multiview_corr(beta_of(stack, self.name())?, &stack.phi, x, z, self.gamma)
            }
            _ => Err(wrong_batch(self.name(), "samples")),
        }
    }
}

/// The second view is encoded by β and classified by the shared head ψ.
pub struct MultiViewPrediction;

impl SideObjective for MultiViewPrediction {
    fn kind(&self) -> PatternKind {
        PatternKind::MultiViewPred
    }
    fn unit(&self) -> SideUnit {
        SideUnit::Samples
    }
    fn beta_shape(&self) -> BetaShape {
        BetaShape::FromSide
    }
    fn side_blocks(&self) -> &'static [Block] {
        &[]
    }
    fn needs_labels(&self) -> bool {
        true
    }
    fn loss(&self, stack: &ModelStack, batch: &SideBatch<'_>) -> Result<LossGrad> {
        match batch {
            SideBatch::Samples { z, y: Some(y), .. } => {
                loss_multiview_pred(&stack.psi, beta_of(stack, self.name())?, z, y)
            }
            SideBatch::Samples { y: None, .. } => Err(Error::InvalidInput(
                "multi-view-pred needs labels for the side batch".into(),
            )),
            _ => Err(wrong_batch(self.name(), "samples")),
        }
    }
}

/// Similar pairs close together, dissimilar pairs pushed apart through σ.
pub struct PairwiseSimilarity {
    pub sigma: Sigma,
}

impl SideObjective for PairwiseSimilarity {
    fn kind(&self) -> PatternKind {
        PatternKind::PairwiseSim
    }
    fn unit(&self) -> SideUnit {
        SideUnit::Pairs
    }
    fn beta_shape(&self) -> BetaShape {
        BetaShape::None
    }
    fn side_blocks(&self) -> &'static [Block] {
        &[Block::Phi]
    }
    fn loss(&self, stack: &ModelStack, batch: &SideBatch<'_>) -> Result<LossGrad> {
        match batch {
            SideBatch::Pairs { x, pairs } => loss_pairwise(&stack.phi, x, pairs, self.sigma),
            _ => Err(wrong_batch(self.name(), "pairs")),
        }
    }
}

/// Known transformations between consecutive samples shape the
/// representation's changes.
pub struct PairwiseTransform {
    pub mode: TransformMode,
    pub sigma: Sigma,
}

impl SideObjective for PairwiseTransform {
    fn kind(&self) -> PatternKind {
        PatternKind::PairwiseTransform
    }
    fn unit(&self) -> SideUnit {
        SideUnit::Transitions
    }
    fn beta_shape(&self) -> BetaShape {
        BetaShape::None
    }
    fn required_representation_dim(&self, side_dim: usize) -> Option<usize> {
        (self.mode == TransformMode::Fixed).then_some(side_dim)
    }
    fn side_blocks(&self) -> &'static [Block] {
        &[Block::Phi]
    }
    fn loss(&self, stack: &ModelStack, batch: &SideBatch<'_>) -> Result<LossGrad> {
        match batch {
            SideBatch::Transitions { from, to, z } => match self.mode {
                TransformMode::Fixed => loss_transform_fixed(&stack.phi, from, to, z),
                mode => loss_transform_pairs(&stack.phi, from, to, z, mode, self.sigma),
            },
            _ => Err(wrong_batch(self.name(), "transitions")),
        }
    }
}

/// Multi-task prediction of irrelevant side information, with ψ held
/// orthogonal to β. Linear ψ and β only.
pub struct Irrelevance {
    pub weight: f64,
}

impl SideObjective for Irrelevance {
    fn kind(&self) -> PatternKind {
        PatternKind::Irrelevance
    }
    fn unit(&self) -> SideUnit {
        SideUnit::Samples
    }
    fn beta_shape(&self) -> BetaShape {
        BetaShape::FromRepresentation
    }
    fn side_blocks(&self) -> &'static [Block] {
        &[Block::Phi, Block::Beta]
    }
    fn loss(&self, stack: &ModelStack, batch: &SideBatch<'_>) -> Result<LossGrad> {
        let SideBatch::Samples { x, z, .. } = batch else {
            return Err(wrong_batch(self.name(), "samples"));
        };
        let beta = beta_of(stack, self.name())?;
        let mut out = loss_multitask(beta, &stack.phi, x, z)?;
        let penalty = irrelevance_penalty(&Map::Logistic(stack.psi.clone()), beta)?;
        out.value += self.weight * penalty.value;
        out.grads.add_scaled(&penalty.grads, self.weight);
        Ok(out)
    }
}
