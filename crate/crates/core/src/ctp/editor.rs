//! Editors map the four member token maps of a step to edited token maps.

use crate::attention::{run_block_stack, AttentionParams, LayerRange, RopeSpec, TextTokens};
use crate::grid::Coord;
use crate::rng;
use crate::tokens::TokenMap;

/// What an editor knows about the step it is called for.
#[derive(Clone, Copy, Debug)]
pub struct StepContext<'a> {
    pub index: usize,
    pub anchor: Coord,
    pub members: &'a [Coord; 4],
}

pub trait FrameEditor: Send + Sync {
    fn edit(&self, ctx: &StepContext<'_>, members: Vec<TokenMap>) -> Result<Vec<TokenMap>, String>;
}

pub struct IdentityEditor;

impl FrameEditor for IdentityEditor {
    fn edit(&self, _ctx: &StepContext<'_>, members: Vec<TokenMap>) -> Result<Vec<TokenMap>, String> {
        Ok(members)
    }
}

/// Adds one scalar to every token channel of every member. With `jitter > 0`
/// the scalar is `base + jitter * u`, `u` uniform in `[-1, 1]` and fixed per
/// sub-grid anchor, so independently edited sub-grids disagree.
#[derive(Clone, Copy, Debug)]
pub struct ConstantShiftEditor {
    pub base: f32,
    pub jitter: f32,
    pub seed: u64,
}

impl ConstantShiftEditor {
    pub fn new(base: f32) -> Self {
        Self { base, jitter: 0.0, seed: 0 }
    }

    pub fn shift_for(&self, anchor: Coord) -> f32 {
        if self.jitter == 0.0 {
            return self.base;
        }
        let mut r = rng::derived(self.seed, ((anchor.v as u64) << 32) | anchor.t as u64);
        let u: f32 = rand::Rng::gen_range(&mut r, -1.0..=1.0);
        self.base + self.jitter * u
    }
}

impl FrameEditor for ConstantShiftEditor {
    fn edit(&self, ctx: &StepContext<'_>, members: Vec<TokenMap>) -> Result<Vec<TokenMap>, String> {
        let s = self.shift_for(ctx.anchor);
        Ok(members.into_iter().map(|m| m.map(|v| v + s)).collect())
    }
}

/// Runs the toy attention stack and blends: `x + strength * (stack(x) - x)`.
pub struct StackEditor {
    pub layers: Vec<AttentionParams>,
    pub text: TextTokens,
    pub depth: usize,
    pub vital: LayerRange,
    pub rope: RopeSpec,
    pub strength: f32,
}

impl FrameEditor for StackEditor {
    fn edit(&self, _ctx: &StepContext<'_>, members: Vec<TokenMap>) -> Result<Vec<TokenMap>, String> {
        let out = run_block_stack(&members, &self.text, self.depth, self.vital, &self.layers, &self.rope)
            .map_err(|e| e.to_string())?;
        Ok(members
            .iter()
            .zip(out)
            .map(|(x, y)| {
                let mut z = x.clone();
                for (o, &v) in z.data_mut().iter_mut().zip(y.data()) {
                    *o += self.strength * (v - *o);
                }
                z
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_is_per_anchor_and_seeded() {
        let e = ConstantShiftEditor { base: 0.1, jitter: 0.05, seed: 3 };
        let a = e.shift_for(Coord::new(0, 0));
        assert_eq!(a, e.shift_for(Coord::new(0, 0)));
        assert_ne!(a, e.shift_for(Coord::new(0, 1)));
        assert!((a - 0.1).abs() <= 0.05);
        assert_eq!(ConstantShiftEditor::new(0.2).shift_for(Coord::new(4, 4)), 0.2);
    }
}
