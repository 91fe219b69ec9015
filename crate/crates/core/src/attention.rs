//! Excitation backprop (EB) and its contrastive variant over the trained
//! classifier: goal-conditioned pixel attention maps, input masking, and
//! goal-driven re-prediction.
//!
//! EB walks the network top-down as a probabilistic winner-take-all
//! process: each parent neuron distributes its probability mass to its
//! children in proportion to `child activation x positive weight`. The
//! contrastive variant runs two walks — one seeded at the goal's two head
//! neurons (left and right side), one at the opposite subgoal's — and the
//! inhibitory walk enters negatively. Because each EB step is linear in
//! the parent probabilities, the signed combination can be carried to the
//! input layer by propagating the two walks separately; the difference is
//! rectified and renormalized at the pixels, cancelling attributions
//! shared by both subgoals (noise background, common strokes) right where
//! they collide and keeping the discriminative ones. Rectifying any
//! earlier would discard the spatial structure of the inhibition and
//! leave near-uniform maps. Biases play no role: the winner probability
//! lives on synaptic weights only.

use rayon::prelude::*;

use crate::data::{goal_digit_of, GoalClass, GoalId, NoisyPair, Side};
use crate::error::{Error, Result};
use crate::net::{forward, DenseNet, ForwardTrace};
use crate::tensor::{argmax, Matrix};

/// Attention over the input pixels, produced for one goal.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    /// Nonnegative mass per input pixel; sums to 1, or to 0 when the
    /// contrast cancelled everywhere.
    pub probs: Vec<f64>,
    /// The goal this map was generated for.
    pub goal: GoalId,
    /// True when the inhibitory walk dominated the excitatory one at every
    /// pixel, in which case the whole map is zero.
    pub degenerate: bool,
}

/// Outcome of goal-driven prediction on one pair.
#[derive(Debug, Clone)]
pub struct GoalPrediction {
    pub digit: u8,
    pub side: Side,
    /// The subgoal read off the goal-class head at the predicted side;
    /// always in the same class as the requested goal.
    pub subgoal: GoalId,
    pub attention: AttentionMap,
}

/// Accuracy summary of [`evaluate_goal_task`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalTaskResult {
    /// Fraction of pairs whose predicted digit equals the goal digit.
    pub digit_accuracy: f64,
    /// Fraction of pairs whose predicted subgoal equals the goal.
    pub goal_accuracy: f64,
}

/// One step of excitation backprop.
///
/// `weights` is `n_parent x n_child`. Each parent `i` with
/// `Z_i = sum_j child_acts[j] * max(w_ij, 0) > 0` distributes
/// `parent_probs[i]` over its children proportionally to
/// `child_acts[j] * max(w_ij, 0)`; parents with `Z_i = 0` distribute
/// nothing, which is the only way total mass can shrink.
pub fn eb_layer(
    parent_probs: &[f64],
    weights: &Matrix,
    child_acts: &[f64],
) -> Result<Vec<f64>> {
    if parent_probs.len() != weights.rows() || child_acts.len() != weights.cols() {
        return Err(Error::Shape(format!(
            "eb_layer: {} parents, {} children vs {}x{} weights",
            parent_probs.len(),
            child_acts.len(),
            weights.rows(),
            weights.cols()
        )));
    }
    if let Some(bad) = child_acts.iter().find(|&&a| a < 0.0) {
        return Err(Error::Precondition(format!(
            "negative child activation {bad} in eb_layer"
        )));
    }
    if let Some(bad) = parent_probs.iter().find(|&&p| p < 0.0) {
        return Err(Error::Precondition(format!(
            "negative parent probability {bad} in eb_layer"
        )));
    }
    let mut child_probs = vec![0.0; child_acts.len()];
    for (i, &p) in parent_probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let row = weights.row(i);
        let mut z = 0.0;
        for (&w, &a) in row.iter().zip(child_acts) {
            if w > 0.0 {
                z += a * w;
            }
        }
        if z > 0.0 {
            // Per-edge evaluation order is part of the contract: when the
            // excitatory and inhibitory walks agree exactly (e.g. identical
            // seed rows), their pixel attributions must cancel to exactly
            // zero rather than an arbitrary rounding residue, which the
            // final rectify-and-renormalize step would otherwise blow up
            // into a full unit of mass.
            for ((out, &w), &a) in child_probs.iter_mut().zip(row).zip(child_acts) {
                if w > 0.0 {
                    *out += p * a * w / z;
                }
            }
        }
    }
    Ok(child_probs)
}

fn head_of(net: &DenseNet, goal: GoalId) -> (&Matrix, &Matrix) {
    match goal.class() {
        GoalClass::Parity => (&net.wp_goal, &net.wp),
        GoalClass::Magnitude => (&net.wm_goal, &net.wm),
    }
}

fn branch_acts_of<'t>(trace: &'t ForwardTrace, goal: GoalId) -> &'t [f64] {
    match goal.class() {
        GoalClass::Parity => &trace.hp,
        GoalClass::Magnitude => &trace.hm,
    }
}

/// Seed vector over a head's four goal neurons: 1/2 on the given subgoal's
/// left and right neurons (row layout: `side * 2 + subgoal`).
fn seed_for(goal: GoalId) -> Vec<f64> {
    let mut seed = vec![0.0; 4];
    seed[goal.subgoal_index()] = 0.5;
    seed[2 + goal.subgoal_index()] = 0.5;
    seed
}

/// The two contrastive walks at the goal head's branch layer.
///
/// The excitatory walk seeds the goal's two neurons, the inhibitory walk
/// seeds the contrast subgoal's two neurons, both over the same (positive
/// parts of the) goal weights. The inhibitory signal enters the
/// combination negatively, but the subtraction is deferred: each EB step
/// is linear in the parent probabilities, so `ceb_attention` carries both
/// walks to the pixel layer and contrasts them there.
pub fn contrastive_top(
    net: &DenseNet,
    trace: &ForwardTrace,
    goal: GoalId,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (goal_weights, _) = head_of(net, goal);
    let acts = branch_acts_of(trace, goal);
    let excite = eb_layer(&seed_for(goal), goal_weights, acts)?;
    let inhibit = eb_layer(&seed_for(goal.contrast()), goal_weights, acts)?;
    Ok((excite, inhibit))
}

/// Contrastive excitation backprop: both top walks are propagated from the
/// goal head's branch layer all the way down to the input pixels, using
/// the cached activations of the original forward pass; the inhibitory
/// pixel attribution is then subtracted from the excitatory one, the
/// difference rectified and renormalized to sum 1. When the inhibition
/// covers the excitation everywhere the map is all zero and flagged
/// degenerate.
pub fn ceb_attention(net: &DenseNet, trace: &ForwardTrace, goal: GoalId) -> Result<AttentionMap> {
    let (excite, inhibit) = contrastive_top(net, trace, goal)?;
    let (_, branch_weights) = head_of(net, goal);
    let down = |top: &[f64]| -> Result<Vec<f64>> {
        let at_h2 = eb_layer(top, branch_weights, &trace.h2)?;
        let at_h1 = eb_layer(&at_h2, &net.w2, &trace.h1)?;
        eb_layer(&at_h1, &net.w1, &trace.input)
    };
    let excite_pixels = down(&excite)?;
    let inhibit_pixels = down(&inhibit)?;
    let mut probs: Vec<f64> = excite_pixels
        .iter()
        .zip(&inhibit_pixels)
        .map(|(e, i)| (e - i).max(0.0))
        .collect();
    let total: f64 = probs.iter().sum();
    let degenerate = total <= 0.0;
    if !degenerate {
        for v in &mut probs {
            *v /= total;
        }
    }
    Ok(AttentionMap {
        probs,
        goal,
        degenerate,
    })
}

/// Multiplicative masking: each input pixel is scaled by its attention
/// relative to the map maximum, keeping surviving pixels in the input's
/// native range. An all-zero map blanks the input entirely.
pub fn apply_mask(pair: &NoisyPair, map: &AttentionMap) -> Result<Vec<f64>> {
    if map.probs.len() != pair.input.len() {
        return Err(Error::Shape(format!(
            "attention over {} pixels applied to input of length {}",
            map.probs.len(),
            pair.input.len()
        )));
    }
    let max = map.probs.iter().cloned().fold(0.0f64, f64::max);
    if max == 0.0 {
        return Ok(vec![0.0; pair.input.len()]);
    }
    Ok(pair
        .input
        .iter()
        .zip(&map.probs)
        .map(|(x, p)| x * (p / max))
        .collect())
}

/// Goal-driven prediction: forward on the noisy pair, build the c-EB
/// attention map for the goal, mask the input with it, forward again, and
/// read digit, side and subgoal off the goal-class head alone. Digit
/// neurons are laid out `side * 10 + digit`, so index mod 10 is the digit
/// and index div 10 the side; the subgoal is the argmax of the head's two
/// goal logits at the predicted side.
pub fn predict_with_goal(net: &DenseNet, pair: &NoisyPair, goal: GoalId) -> Result<GoalPrediction> {
    let trace = forward(net, &pair.input)?;
    let attention = ceb_attention(net, &trace, goal)?;
    let masked = apply_mask(pair, &attention)?;
    let masked_trace = forward(net, &masked)?;
    let (digit_logits, goal_logits) = match goal.class() {
        GoalClass::Parity => (&masked_trace.parity_digit, &masked_trace.parity_goal),
        GoalClass::Magnitude => (&masked_trace.magnitude_digit, &masked_trace.magnitude_goal),
    };
    let best = argmax(digit_logits).expect("digit head is never empty");
    let digit = (best % 10) as u8;
    let side = if best < 10 { Side::Left } else { Side::Right };
    let lo = side.index() * 2;
    let sub = argmax(&goal_logits[lo..lo + 2]).expect("goal head is never empty");
    let subgoal = match (goal.class(), sub) {
        (GoalClass::Parity, 0) => GoalId::Even,
        (GoalClass::Parity, _) => GoalId::Odd,
        (GoalClass::Magnitude, 0) => GoalId::Low,
        (GoalClass::Magnitude, _) => GoalId::High,
    };
    Ok(GoalPrediction {
        digit,
        side,
        subgoal,
        attention,
    })
}

/// Goal-task accuracy over a set of test pairs: the predicted digit is
/// compared against the digit the goal singles out, and the predicted
/// subgoal against the goal itself. Pairs are independent, so the loop
/// fans out across threads and reduces by counting.
pub fn evaluate_goal_task(
    net: &DenseNet,
    pairs: &[NoisyPair],
    goal: GoalId,
) -> Result<GoalTaskResult> {
    if pairs.is_empty() {
        return Err(Error::Precondition("cannot evaluate on zero pairs".into()));
    }
    let counts = pairs
        .par_iter()
        .map(|pair| -> Result<(u64, u64)> {
            let (true_digit, _) = goal_digit_of(pair, goal)?;
            let pred = predict_with_goal(net, pair, goal)?;
            Ok((
                u64::from(pred.digit == true_digit),
                u64::from(pred.subgoal == goal),
            ))
        })
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    let n = pairs.len() as f64;
    Ok(GoalTaskResult {
        digit_accuracy: counts.0 as f64 / n,
        goal_accuracy: counts.1 as f64 / n,
    })
}

/// Reshape a 1568-value pair vector (attention map, masked input, ...) into
/// a 28x56 grid: left image in columns 0-27, right image in columns 28-55.
pub fn pair_grid(values: &[f64]) -> Result<Vec<Vec<f64>>> {
    if values.len() != 1568 {
        return Err(Error::Shape(format!(
            "pair grid needs 1568 values, got {}",
            values.len()
        )));
    }
    let mut grid = vec![vec![0.0; 56]; 28];
    for r in 0..28 {
        for c in 0..28 {
            grid[r][c] = values[r * 28 + c];
            grid[r][c + 28] = values[784 + r * 28 + c];
        }
    }
    Ok(grid)
}

/// Fraction of attention mass on the left image's pixels (0.5 exactly for
/// an all-zero map, by convention mass 0 on both sides).
pub fn left_mass_fraction(map: &AttentionMap) -> f64 {
    let left: f64 = map.probs[..map.probs.len() / 2].iter().sum();
    let total: f64 = map.probs.iter().sum();
    if total == 0.0 {
        0.5
    } else {
        left / total
    }
}
