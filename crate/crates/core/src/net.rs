//! The two-head dense classifier: forward pass with activation caching,
//! hand-derived backward pass, Adam training loop, and checkpoint I/O.
//!
//! Architecture (default sizes): 1568 inputs -> 800 -> 600, then two
//! parallel 400-unit branches. The parity branch ends in 4 goal neurons and
//! 20 digit neurons; the magnitude branch mirrors it. All hidden layers are
//! ReLU; outputs are raw logits. The network's digit prediction during
//! training is the elementwise average of the two heads' digit logits.
//!
//! Output index conventions (fixed everywhere in this crate):
//! - goal neurons: `side * 2 + subgoal`, i.e. parity head rows are
//!   even-left, odd-left, even-right, odd-right and magnitude head rows are
//!   low-left, high-left, low-right, high-right;
//! - digit neurons: `side * 10 + digit`, i.e. digits 0-9 for the left image
//!   followed by digits 0-9 for the right image.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    magnitude_index, make_test_pair, make_training_pair, parity_index, Dataset, NoisyPair,
};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::{
    adam_step, argmax, log_softmax, nll_loss, outer, AdamState, Matrix,
};

/// Goal neurons per head (two subgoals x two sides).
pub const GOAL_OUTPUTS: usize = 4;
/// Digit neurons per head (ten digits x two sides).
pub const DIGIT_OUTPUTS: usize = 20;

/// Layer widths of the trunk and branches. Output head sizes are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub branch: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Arch {
            input: 1568,
            hidden1: 800,
            hidden2: 600,
            branch: 400,
        }
    }
}

/// The full parameter set of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub arch: Arch,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub wp: Matrix,
    pub bp: Vec<f64>,
    pub wm: Matrix,
    pub bm: Vec<f64>,
    pub wp_goal: Matrix,
    pub wp_digit: Matrix,
    pub wm_goal: Matrix,
    pub wm_digit: Matrix,
}

impl DenseNet {
    /// All-zero network of the given architecture.
    pub fn zeros(arch: Arch) -> Self {
        DenseNet {
            arch,
            w1: Matrix::zeros(arch.hidden1, arch.input),
            b1: vec![0.0; arch.hidden1],
            w2: Matrix::zeros(arch.hidden2, arch.hidden1),
            b2: vec![0.0; arch.hidden2],
            wp: Matrix::zeros(arch.branch, arch.hidden2),
            bp: vec![0.0; arch.branch],
            wm: Matrix::zeros(arch.branch, arch.hidden2),
            bm: vec![0.0; arch.branch],
            wp_goal: Matrix::zeros(GOAL_OUTPUTS, arch.branch),
            wp_digit: Matrix::zeros(DIGIT_OUTPUTS, arch.branch),
            wm_goal: Matrix::zeros(GOAL_OUTPUTS, arch.branch),
            wm_digit: Matrix::zeros(DIGIT_OUTPUTS, arch.branch),
        }
    }

    /// Random initialization: every tensor is drawn from
    /// U[-1/sqrt(fan_in), +1/sqrt(fan_in)), biases included, in declaration
    /// order (w1, b1, w2, b2, wp, bp, wm, bm, then the four head matrices).
    pub fn init<R: Rng>(arch: Arch, rng: &mut R) -> Self {
        let bound = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let vec_uniform = |n: usize, b: f64, rng: &mut R| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-b..b)).collect()
        };
        let (bi, b1, b2, bb) = (
            bound(arch.input),
            bound(arch.hidden1),
            bound(arch.hidden2),
            bound(arch.branch),
        );
        DenseNet {
            arch,
            w1: Matrix::uniform(arch.hidden1, arch.input, bi, rng),
            b1: vec_uniform(arch.hidden1, bi, rng),
            w2: Matrix::uniform(arch.hidden2, arch.hidden1, b1, rng),
            b2: vec_uniform(arch.hidden2, b1, rng),
            wp: Matrix::uniform(arch.branch, arch.hidden2, b2, rng),
            bp: vec_uniform(arch.branch, b2, rng),
            wm: Matrix::uniform(arch.branch, arch.hidden2, b2, rng),
            bm: vec_uniform(arch.branch, b2, rng),
            wp_goal: Matrix::uniform(GOAL_OUTPUTS, arch.branch, bb, rng),
            wp_digit: Matrix::uniform(DIGIT_OUTPUTS, arch.branch, bb, rng),
            wm_goal: Matrix::uniform(GOAL_OUTPUTS, arch.branch, bb, rng),
            wm_digit: Matrix::uniform(DIGIT_OUTPUTS, arch.branch, bb, rng),
        }
    }

    /// All parameter tensors as named flat slices, in declaration order.
    pub fn tensors(&self) -> [(&'static str, &[f64]); 12] {
        [
            ("w1", self.w1.data()),
            ("b1", &self.b1),
            ("w2", self.w2.data()),
            ("b2", &self.b2),
            ("wp", self.wp.data()),
            ("bp", &self.bp),
            ("wm", self.wm.data()),
            ("bm", &self.bm),
            ("wp_goal", self.wp_goal.data()),
            ("wp_digit", self.wp_digit.data()),
            ("wm_goal", self.wm_goal.data()),
            ("wm_digit", self.wm_digit.data()),
        ]
    }

    /// Mutable view of all parameter tensors, in declaration order.
    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 12] {
        [
            ("w1", self.w1.data_mut()),
            ("b1", &mut self.b1),
            ("w2", self.w2.data_mut()),
            ("b2", &mut self.b2),
            ("wp", self.wp.data_mut()),
            ("bp", &mut self.bp),
            ("wm", self.wm.data_mut()),
            ("bm", &mut self.bm),
            ("wp_goal", self.wp_goal.data_mut()),
            ("wp_digit", self.wp_digit.data_mut()),
            ("wm_goal", self.wm_goal.data_mut()),
            ("wm_digit", self.wm_digit.data_mut()),
        ]
    }
}

/// Cached activations from one forward pass. `z*` are pre-activations,
/// `h*` the ReLU outputs; the four output groups are raw logits.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub z1: Vec<f64>,
    pub h1: Vec<f64>,
    pub z2: Vec<f64>,
    pub h2: Vec<f64>,
    pub zp: Vec<f64>,
    pub hp: Vec<f64>,
    pub zm: Vec<f64>,
    pub hm: Vec<f64>,
    pub parity_goal: Vec<f64>,
    pub parity_digit: Vec<f64>,
    pub magnitude_goal: Vec<f64>,
    pub magnitude_digit: Vec<f64>,
    /// Elementwise mean of the two heads' digit logits.
    pub avg_digit: Vec<f64>,
}

fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let mut z = w.matvec(x)?;
    for (zi, bi) in z.iter_mut().zip(b) {
        *zi += bi;
    }
    Ok(z)
}

/// Forward pass with full activation caching.
pub fn forward(net: &DenseNet, input: &[f64]) -> Result<ForwardTrace> {
    if input.len() != net.arch.input {
        return Err(Error::Shape(format!(
            "input length {} does not match net input width {}",
            input.len(),
            net.arch.input
        )));
    }
    let z1 = affine(&net.w1, input, &net.b1)?;
    let h1 = crate::tensor::relu(&z1);
    let z2 = affine(&net.w2, &h1, &net.b2)?;
    let h2 = crate::tensor::relu(&z2);
    let zp = affine(&net.wp, &h2, &net.bp)?;
    let hp = crate::tensor::relu(&zp);
    let zm = affine(&net.wm, &h2, &net.bm)?;
    let hm = crate::tensor::relu(&zm);
    let parity_goal = net.wp_goal.matvec(&hp)?;
    let parity_digit = net.wp_digit.matvec(&hp)?;
    let magnitude_goal = net.wm_goal.matvec(&hm)?;
    let magnitude_digit = net.wm_digit.matvec(&hm)?;
    let avg_digit = parity_digit
        .iter()
        .zip(&magnitude_digit)
        .map(|(p, m)| (p + m) / 2.0)
        .collect();
    Ok(ForwardTrace {
        input: input.to_vec(),
        z1,
        h1,
        z2,
        h2,
        zp,
        hp,
        zm,
        hm,
        parity_goal,
        parity_digit,
        magnitude_goal,
        magnitude_digit,
        avg_digit,
    })
}

/// Gradient of the loss with respect to each output group's logits.
#[derive(Debug, Clone)]
pub struct LossSeeds {
    pub d_parity_goal: Vec<f64>,
    pub d_parity_digit: Vec<f64>,
    pub d_magnitude_goal: Vec<f64>,
    pub d_magnitude_digit: Vec<f64>,
}

/// Loss and logit gradients for one pair, computed from raw output slices.
///
/// The loss is the sum of six NLL terms: a 10-way softmax over the averaged
/// digit logits for each side (targets = the two labels), and a 2-way
/// softmax over each head's goal-neuron pair for each side. The averaged
/// digit gradient splits 50/50 into the two heads' digit outputs.
fn loss_and_seeds_from_logits(
    parity_goal: &[f64],
    magnitude_goal: &[f64],
    avg_digit: &[f64],
    left_label: u8,
    right_label: u8,
) -> Result<(f64, LossSeeds)> {
    let mut loss = 0.0;
    let mut d_avg = vec![0.0; DIGIT_OUTPUTS];
    for (side, &label) in [left_label, right_label].iter().enumerate() {
        let lo = side * 10;
        let ls = log_softmax(&avg_digit[lo..lo + 10])?;
        loss += nll_loss(&ls, usize::from(label))?;
        for (j, &l) in ls.iter().enumerate() {
            d_avg[lo + j] = l.exp() - f64::from(j == usize::from(label));
        }
    }
    let mut d_parity_goal = vec![0.0; GOAL_OUTPUTS];
    let mut d_magnitude_goal = vec![0.0; GOAL_OUTPUTS];
    for (side, &label) in [left_label, right_label].iter().enumerate() {
        let lo = side * 2;
        let pls = log_softmax(&parity_goal[lo..lo + 2])?;
        loss += nll_loss(&pls, parity_index(label))?;
        for (j, &l) in pls.iter().enumerate() {
            d_parity_goal[lo + j] = l.exp() - f64::from(j == parity_index(label));
        }
        let mls = log_softmax(&magnitude_goal[lo..lo + 2])?;
        loss += nll_loss(&mls, magnitude_index(label))?;
        for (j, &l) in mls.iter().enumerate() {
            d_magnitude_goal[lo + j] = l.exp() - f64::from(j == magnitude_index(label));
        }
    }
    let d_digit: Vec<f64> = d_avg.iter().map(|g| 0.5 * g).collect();
    Ok((
        loss,
        LossSeeds {
            d_parity_goal,
            d_parity_digit: d_digit.clone(),
            d_magnitude_goal,
            d_magnitude_digit: d_digit,
        },
    ))
}

/// Training loss of a cached forward pass against the pair's labels,
/// together with the gradient seeds for [`backward`].
pub fn training_loss(trace: &ForwardTrace, pair: &NoisyPair) -> Result<(f64, LossSeeds)> {
    loss_and_seeds_from_logits(
        &trace.parity_goal,
        &trace.magnitude_goal,
        &trace.avg_digit,
        pair.left_label,
        pair.right_label,
    )
}

/// Per-parameter gradients, shaped exactly like [`DenseNet`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub wp: Matrix,
    pub bp: Vec<f64>,
    pub wm: Matrix,
    pub bm: Vec<f64>,
    pub wp_goal: Matrix,
    pub wp_digit: Matrix,
    pub wm_goal: Matrix,
    pub wm_digit: Matrix,
}

impl Gradients {
    pub fn tensors(&self) -> [(&'static str, &[f64]); 12] {
        [
            ("w1", self.w1.data()),
            ("b1", &self.b1),
            ("w2", self.w2.data()),
            ("b2", &self.b2),
            ("wp", self.wp.data()),
            ("bp", &self.bp),
            ("wm", self.wm.data()),
            ("bm", &self.bm),
            ("wp_goal", self.wp_goal.data()),
            ("wp_digit", self.wp_digit.data()),
            ("wm_goal", self.wm_goal.data()),
            ("wm_digit", self.wm_digit.data()),
        ]
    }
}

fn relu_gate(upstream: &mut [f64], pre: &[f64]) {
    for (g, &z) in upstream.iter_mut().zip(pre) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
}

fn add_assign(acc: &mut [f64], other: &[f64]) {
    for (a, o) in acc.iter_mut().zip(other) {
        *a += o;
    }
}

/// Exact analytic gradients for one pair via the chain rule, from the
/// cached trace and the loss seeds.
pub fn backward(net: &DenseNet, trace: &ForwardTrace, seeds: &LossSeeds) -> Result<Gradients> {
    // Branch outputs back to branch activations.
    let mut d_hp = net.wp_goal.matvec_t(&seeds.d_parity_goal)?;
    add_assign(&mut d_hp, &net.wp_digit.matvec_t(&seeds.d_parity_digit)?);
    let mut d_zp = d_hp;
    relu_gate(&mut d_zp, &trace.zp);

    let mut d_hm = net.wm_goal.matvec_t(&seeds.d_magnitude_goal)?;
    add_assign(&mut d_hm, &net.wm_digit.matvec_t(&seeds.d_magnitude_digit)?);
    let mut d_zm = d_hm;
    relu_gate(&mut d_zm, &trace.zm);

    // Trunk.
    let mut d_h2 = net.wp.matvec_t(&d_zp)?;
    add_assign(&mut d_h2, &net.wm.matvec_t(&d_zm)?);
    let mut d_z2 = d_h2;
    relu_gate(&mut d_z2, &trace.z2);

    let mut d_z1 = net.w2.matvec_t(&d_z2)?;
    relu_gate(&mut d_z1, &trace.z1);

    Ok(Gradients {
        w1: outer(&d_z1, &trace.input),
        b1: d_z1,
        w2: outer(&d_z2, &trace.h1),
        b2: d_z2,
        wp: outer(&d_zp, &trace.h2),
        bp: d_zp,
        wm: outer(&d_zm, &trace.h2),
        bm: d_zm,
        wp_goal: outer(&seeds.d_parity_goal, &trace.hp),
        wp_digit: outer(&seeds.d_parity_digit, &trace.hp),
        wm_goal: outer(&seeds.d_magnitude_goal, &trace.hm),
        wm_digit: outer(&seeds.d_magnitude_digit, &trace.hm),
    })
}

/// Batched activations: one row per pair.
pub struct BatchTrace {
    pub z1: Matrix,
    pub h1: Matrix,
    pub z2: Matrix,
    pub h2: Matrix,
    pub zp: Matrix,
    pub hp: Matrix,
    pub zm: Matrix,
    pub hm: Matrix,
    pub parity_goal: Matrix,
    pub parity_digit: Matrix,
    pub magnitude_goal: Matrix,
    pub magnitude_digit: Matrix,
    pub avg_digit: Matrix,
}

/// Forward pass over a batch (one input per row). Row `i` of every field
/// equals the corresponding vector of `forward` on input row `i`, up to
/// floating-point reduction order.
pub fn forward_batch(net: &DenseNet, x: &Matrix) -> Result<BatchTrace> {
    if x.cols() != net.arch.input {
        return Err(Error::Shape(format!(
            "batch input width {} does not match net input width {}",
            x.cols(),
            net.arch.input
        )));
    }
    let mut z1 = x.matmul_nt(&net.w1)?;
    z1.add_row_bias(&net.b1)?;
    let h1 = z1.relu();
    let mut z2 = h1.matmul_nt(&net.w2)?;
    z2.add_row_bias(&net.b2)?;
    let h2 = z2.relu();
    let mut zp = h2.matmul_nt(&net.wp)?;
    zp.add_row_bias(&net.bp)?;
    let hp = zp.relu();
    let mut zm = h2.matmul_nt(&net.wm)?;
    zm.add_row_bias(&net.bm)?;
    let hm = zm.relu();
    let parity_goal = hp.matmul_nt(&net.wp_goal)?;
    let parity_digit = hp.matmul_nt(&net.wp_digit)?;
    let magnitude_goal = hm.matmul_nt(&net.wm_goal)?;
    let magnitude_digit = hm.matmul_nt(&net.wm_digit)?;
    let mut avg_digit = Matrix::zeros(x.rows(), DIGIT_OUTPUTS);
    for i in 0..x.rows() {
        for j in 0..DIGIT_OUTPUTS {
            avg_digit.set(
                i,
                j,
                (parity_digit.get(i, j) + magnitude_digit.get(i, j)) / 2.0,
            );
        }
    }
    Ok(BatchTrace {
        z1,
        h1,
        z2,
        h2,
        zp,
        hp,
        zm,
        hm,
        parity_goal,
        parity_digit,
        magnitude_goal,
        magnitude_digit,
        avg_digit,
    })
}

/// Mean loss over a batch plus the mean parameter gradients.
pub fn batch_loss_and_grads(
    net: &DenseNet,
    x: &Matrix,
    labels: &[(u8, u8)],
    trace: &BatchTrace,
) -> Result<(f64, Gradients)> {
    let batch = x.rows();
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{} label pairs for a batch of {batch}",
            labels.len()
        )));
    }
    let scale = 1.0 / batch as f64;
    let mut loss_sum = 0.0;
    let mut d_pg = Matrix::zeros(batch, GOAL_OUTPUTS);
    let mut d_pd = Matrix::zeros(batch, DIGIT_OUTPUTS);
    let mut d_mg = Matrix::zeros(batch, GOAL_OUTPUTS);
    let mut d_md = Matrix::zeros(batch, DIGIT_OUTPUTS);
    for (i, &(left, right)) in labels.iter().enumerate() {
        let (loss, seeds) = loss_and_seeds_from_logits(
            trace.parity_goal.row(i),
            trace.magnitude_goal.row(i),
            trace.avg_digit.row(i),
            left,
            right,
        )?;
        loss_sum += loss;
        for (j, v) in seeds.d_parity_goal.iter().enumerate() {
            d_pg.set(i, j, v * scale);
        }
        for (j, v) in seeds.d_parity_digit.iter().enumerate() {
            d_pd.set(i, j, v * scale);
        }
        for (j, v) in seeds.d_magnitude_goal.iter().enumerate() {
            d_mg.set(i, j, v * scale);
        }
        for (j, v) in seeds.d_magnitude_digit.iter().enumerate() {
            d_md.set(i, j, v * scale);
        }
    }

    let mut d_hp = d_pg.matmul(&net.wp_goal)?;
    let d_hp_digit = d_pd.matmul(&net.wp_digit)?;
    for (a, b) in d_hp.data_mut().iter_mut().zip(d_hp_digit.data()) {
        *a += b;
    }
    let mut d_zp = d_hp;
    d_zp.mask_nonpositive(&trace.zp)?;

    let mut d_hm = d_mg.matmul(&net.wm_goal)?;
    let d_hm_digit = d_md.matmul(&net.wm_digit)?;
    for (a, b) in d_hm.data_mut().iter_mut().zip(d_hm_digit.data()) {
        *a += b;
    }
    let mut d_zm = d_hm;
    d_zm.mask_nonpositive(&trace.zm)?;

    let mut d_h2 = d_zp.matmul(&net.wp)?;
    let d_h2_m = d_zm.matmul(&net.wm)?;
    for (a, b) in d_h2.data_mut().iter_mut().zip(d_h2_m.data()) {
        *a += b;
    }
    let mut d_z2 = d_h2;
    d_z2.mask_nonpositive(&trace.z2)?;

    let mut d_z1 = d_z2.matmul(&net.w2)?;
    d_z1.mask_nonpositive(&trace.z1)?;

    let grads = Gradients {
        w1: d_z1.matmul_tn(x)?,
        b1: d_z1.column_sums(),
        w2: d_z2.matmul_tn(&trace.h1)?,
        b2: d_z2.column_sums(),
        wp: d_zp.matmul_tn(&trace.h2)?,
        bp: d_zp.column_sums(),
        wm: d_zm.matmul_tn(&trace.h2)?,
        bm: d_zm.column_sums(),
        wp_goal: d_pg.matmul_tn(&trace.hp)?,
        wp_digit: d_pd.matmul_tn(&trace.hp)?,
        wm_goal: d_mg.matmul_tn(&trace.hm)?,
        wm_digit: d_md.matmul_tn(&trace.hm)?,
    };
    Ok((loss_sum * scale, grads))
}

/// Adam states for every tensor of a net, applied in declaration order.
pub struct NetAdam {
    states: Vec<AdamState>,
}

impl NetAdam {
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        NetAdam {
            states: net
                .tensors()
                .iter()
                .map(|(_, t)| AdamState::new(t.len(), learning_rate))
                .collect(),
        }
    }

    pub fn apply(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        let grad_tensors = grads.tensors();
        for (state, ((_, params), (_, grad))) in self
            .states
            .iter_mut()
            .zip(net.tensors_mut().into_iter().zip(grad_tensors))
        {
            adam_step(params, grad, state)?;
        }
        Ok(())
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub eval_interval: usize,
    pub eval_pairs: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 4400,
            batch_size: 256,
            eval_interval: 200,
            eval_pairs: 2000,
            learning_rate: 0.001,
        }
    }
}

/// One row of the evaluation trace. Accuracies are fractions in [0, 1];
/// `loss` is the mean per-pair training loss on the eval pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub digit_acc_left: f64,
    pub digit_acc_right: f64,
    pub parity_acc: f64,
    pub magnitude_acc: f64,
    pub loss: f64,
}

impl EvalRecord {
    pub const CSV_HEADER: &'static str =
        "step,digit_acc_left,digit_acc_right,parity_acc,magnitude_acc,loss";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.step,
            self.digit_acc_left,
            self.digit_acc_right,
            self.parity_acc,
            self.magnitude_acc,
            self.loss
        )
    }
}

/// Plain (no attention) evaluation: digit accuracy per side from the
/// averaged digit logits, and pooled parity/magnitude accuracy over both
/// sides' 2-way goal decisions.
pub fn evaluate_plain(net: &DenseNet, pairs: &[NoisyPair], step: usize) -> Result<EvalRecord> {
    if pairs.is_empty() {
        return Err(Error::Precondition("cannot evaluate on zero pairs".into()));
    }
    let mut digit_left = 0usize;
    let mut digit_right = 0usize;
    let mut parity_ok = 0usize;
    let mut magnitude_ok = 0usize;
    let mut loss_sum = 0.0;
    for chunk in pairs.chunks(512) {
        let mut x = Matrix::zeros(chunk.len(), net.arch.input);
        for (i, pair) in chunk.iter().enumerate() {
            x.data_mut()[i * net.arch.input..(i + 1) * net.arch.input]
                .copy_from_slice(&pair.input);
        }
        let trace = forward_batch(net, &x)?;
        for (i, pair) in chunk.iter().enumerate() {
            let avg = trace.avg_digit.row(i);
            if argmax(&avg[0..10]) == Some(usize::from(pair.left_label)) {
                digit_left += 1;
            }
            if argmax(&avg[10..20]) == Some(usize::from(pair.right_label)) {
                digit_right += 1;
            }
            let pg = trace.parity_goal.row(i);
            let mg = trace.magnitude_goal.row(i);
            for (side, &label) in [pair.left_label, pair.right_label].iter().enumerate() {
                let lo = side * 2;
                if argmax(&pg[lo..lo + 2]) == Some(parity_index(label)) {
                    parity_ok += 1;
                }
                if argmax(&mg[lo..lo + 2]) == Some(magnitude_index(label)) {
                    magnitude_ok += 1;
                }
            }
            let (loss, _) = loss_and_seeds_from_logits(
                trace.parity_goal.row(i),
                trace.magnitude_goal.row(i),
                avg,
                pair.left_label,
                pair.right_label,
            )?;
            loss_sum += loss;
        }
    }
    let n = pairs.len() as f64;
    Ok(EvalRecord {
        step,
        digit_acc_left: digit_left as f64 / n,
        digit_acc_right: digit_right as f64 / n,
        parity_acc: parity_ok as f64 / (2.0 * n),
        magnitude_acc: magnitude_ok as f64 / (2.0 * n),
        loss: loss_sum / n,
    })
}

fn draw_eval_pairs(
    test_set: &Dataset,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NoisyPair>> {
    (0..count).map(|_| make_test_pair(test_set, rng)).collect()
}

/// Train in place with Adam on freshly sampled noisy training pairs.
///
/// Every `eval_interval` steps (and once before training starts) the net is
/// evaluated on `eval_pairs` fresh test pairs; `on_eval` sees each record
/// as it is produced and all records are returned. All randomness derives
/// from `master_seed` via the "train-data" and "train-eval" sub-streams.
pub fn train(
    net: &mut DenseNet,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
    master_seed: u64,
    mut on_eval: impl FnMut(&EvalRecord),
) -> Result<Vec<EvalRecord>> {
    if config.batch_size == 0 {
        return Err(Error::Precondition("batch size must be positive".into()));
    }
    let mut data_rng = substream(master_seed, "train-data");
    let mut eval_rng = substream(master_seed, "train-eval");
    let mut records = Vec::new();

    let pairs = draw_eval_pairs(test_set, config.eval_pairs, &mut eval_rng)?;
    let record = evaluate_plain(net, &pairs, 0)?;
    on_eval(&record);
    records.push(record);

    let mut optimizer = NetAdam::new(net, config.learning_rate);
    let mut labels = Vec::with_capacity(config.batch_size);
    for step in 1..=config.steps {
        labels.clear();
        let mut x = Matrix::zeros(config.batch_size, net.arch.input);
        for i in 0..config.batch_size {
            let pair = make_training_pair(train_set, &mut data_rng)?;
            x.data_mut()[i * net.arch.input..(i + 1) * net.arch.input]
                .copy_from_slice(&pair.input);
            labels.push((pair.left_label, pair.right_label));
        }
        let trace = forward_batch(net, &x)?;
        let (_, grads) = batch_loss_and_grads(net, &x, &labels, &trace)?;
        optimizer.apply(net, &grads)?;

        if step % config.eval_interval == 0 || step == config.steps {
            let pairs = draw_eval_pairs(test_set, config.eval_pairs, &mut eval_rng)?;
            let record = evaluate_plain(net, &pairs, step)?;
            on_eval(&record);
            records.push(record);
        }
    }
    Ok(records)
}

/// Checkpoint file magic.
pub const CHECKPOINT_MAGIC: &[u8; 5] = b"CEBNM";
/// Current checkpoint format version.
pub const CHECKPOINT_VERSION: u16 = 1;

/// A saved network together with its training step count and master seed.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: DenseNet,
    pub step_count: u64,
    pub seed: u64,
}

impl Checkpoint {
    /// Serialize: magic, version (u16), architecture descriptor (u32 count
    /// then the layer sizes), all tensors in declaration order as
    /// little-endian f64, then step count and seed as u64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_u16::<LittleEndian>(CHECKPOINT_VERSION)?;
        let arch = self.net.arch;
        let sizes = [
            arch.input,
            arch.hidden1,
            arch.hidden2,
            arch.branch,
            GOAL_OUTPUTS,
            DIGIT_OUTPUTS,
        ];
        out.write_u32::<LittleEndian>(sizes.len() as u32)?;
        for s in sizes {
            out.write_u32::<LittleEndian>(s as u32)?;
        }
        for (_, tensor) in self.net.tensors() {
            for &v in tensor {
                out.write_f64::<LittleEndian>(v)?;
            }
        }
        out.write_u64::<LittleEndian>(self.step_count)?;
        out.write_u64::<LittleEndian>(self.seed)?;
        out.flush()?;
        Ok(())
    }

    /// Load and validate a checkpoint. Errors name the field that failed.
    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let mut cursor = &bytes[..];

        let fail = |field: &'static str, message: String| Error::Checkpoint { field, message };

        let mut magic = [0u8; 5];
        cursor
            .read_exact(&mut magic)
            .map_err(|_| fail("magic", "file shorter than the magic string".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(fail("magic", format!("unexpected magic bytes {magic:?}")));
        }
        let version = cursor
            .read_u16::<LittleEndian>()
            .map_err(|_| fail("version", "missing version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(fail(
                "version",
                format!("version {version}, expected {CHECKPOINT_VERSION}"),
            ));
        }
        let n_sizes = cursor
            .read_u32::<LittleEndian>()
            .map_err(|_| fail("architecture", "missing size count".into()))?;
        if n_sizes != 6 {
            return Err(fail(
                "architecture",
                format!("expected 6 layer sizes, got {n_sizes}"),
            ));
        }
        let mut sizes = [0usize; 6];
        for s in &mut sizes {
            *s = cursor
                .read_u32::<LittleEndian>()
                .map_err(|_| fail("architecture", "truncated size list".into()))?
                as usize;
        }
        if sizes[..4].iter().any(|&s| s == 0) {
            return Err(fail("architecture", format!("zero layer size in {sizes:?}")));
        }
        if sizes[4] != GOAL_OUTPUTS || sizes[5] != DIGIT_OUTPUTS {
            return Err(fail(
                "architecture",
                format!(
                    "head sizes {}/{} do not match {GOAL_OUTPUTS}/{DIGIT_OUTPUTS}",
                    sizes[4], sizes[5]
                ),
            ));
        }
        let arch = Arch {
            input: sizes[0],
            hidden1: sizes[1],
            hidden2: sizes[2],
            branch: sizes[3],
        };
        let mut net = DenseNet::zeros(arch);
        for (name, tensor) in net.tensors_mut() {
            cursor
                .read_f64_into::<LittleEndian>(tensor)
                .map_err(|_| fail(name, "tensor data truncated".into()))?;
        }
        let step_count = cursor
            .read_u64::<LittleEndian>()
            .map_err(|_| fail("trailer", "missing step count".into()))?;
        let seed = cursor
            .read_u64::<LittleEndian>()
            .map_err(|_| fail("trailer", "missing seed".into()))?;
        if !cursor.is_empty() {
            return Err(fail(
                "trailer",
                format!("{} unexpected trailing bytes", cursor.len()),
            ));
        }
        Ok(Checkpoint {
            net,
            step_count,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{mini_arch, random_input, random_pair, synthetic_dataset};

    fn mini_net(seed: u64) -> DenseNet {
        DenseNet::init(mini_arch(), &mut substream(seed, "net-test-init"))
    }

    #[test]
    fn init_is_deterministic() {
        let a = mini_net(5);
        let b = mini_net(5);
        assert_eq!(a, b);
        let c = mini_net(6);
        assert_ne!(a, c);
    }

    #[test]
    fn init_bounds_and_variance_follow_the_uniform_law() {
        let arch = Arch::default();
        assert_eq!(arch.input, 1568);
        let net = DenseNet::init(arch, &mut substream(7, "net-test-init"));
        let bound = 1.0 / (arch.input as f64).sqrt();
        let data = net.w1.data();
        assert!(data.iter().all(|w| w.abs() < bound));
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
        // Var(U[-a, a)) = (2a)^2 / 12 = a^2 / 3.
        let expect = bound * bound / 3.0;
        assert!(
            (var / expect - 1.0).abs() < 0.02,
            "w1 sample variance {var} vs expected {expect}"
        );
        // Branch weights use fan_in = hidden2.
        let bbound = 1.0 / (arch.hidden2 as f64).sqrt();
        assert!(net.wp.data().iter().all(|w| w.abs() < bbound));
    }

    #[test]
    fn forward_on_zero_net_gives_zero_logits() {
        let net = DenseNet::zeros(mini_arch());
        let trace = forward(&net, &vec![0.3; 20]).unwrap();
        assert!(trace.parity_goal.iter().all(|&v| v == 0.0));
        assert!(trace.parity_digit.iter().all(|&v| v == 0.0));
        assert!(trace.magnitude_goal.iter().all(|&v| v == 0.0));
        assert!(trace.avg_digit.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let net = mini_net(1);
        assert!(matches!(
            forward(&net, &vec![0.0; 21]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = mini_net(2);
        let x = random_input(20, &mut substream(3, "net-test"));
        let a = forward(&net, &x).unwrap();
        let b = forward(&net, &x).unwrap();
        assert_eq!(a.h1, b.h1);
        assert_eq!(a.avg_digit, b.avg_digit);
    }

    #[test]
    fn hidden_unit_permutation_leaves_logits_unchanged() {
        let mut rng = substream(4, "net-test");
        let net = mini_net(4);
        let x = random_input(20, &mut rng);
        let base = forward(&net, &x).unwrap();

        // Swap hidden-1 units 0 and 1 together with their weights.
        let mut permuted = net.clone();
        for c in 0..permuted.w1.cols() {
            let (a, b) = (permuted.w1.get(0, c), permuted.w1.get(1, c));
            permuted.w1.set(0, c, b);
            permuted.w1.set(1, c, a);
        }
        permuted.b1.swap(0, 1);
        for r in 0..permuted.w2.rows() {
            let (a, b) = (permuted.w2.get(r, 0), permuted.w2.get(r, 1));
            permuted.w2.set(r, 0, b);
            permuted.w2.set(r, 1, a);
        }
        let swapped = forward(&permuted, &x).unwrap();
        for (a, b) in base.avg_digit.iter().zip(&swapped.avg_digit) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in base.parity_goal.iter().zip(&swapped.parity_goal) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Deliberately plain re-implementation of the forward pass with
    /// explicit index arithmetic.
    fn forward_oracle(net: &DenseNet, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        fn layer(w: &Matrix, b: &[f64], x: &[f64], rectify: bool) -> Vec<f64> {
            let mut out = vec![0.0; w.rows()];
            for i in 0..w.rows() {
                let mut acc = b[i];
                for j in 0..w.cols() {
                    acc += w.get(i, j) * x[j];
                }
                out[i] = if rectify && acc < 0.0 { 0.0 } else { acc };
            }
            out
        }
        let h1 = layer(&net.w1, &net.b1, x, true);
        let h2 = layer(&net.w2, &net.b2, &h1, true);
        let hp = layer(&net.wp, &net.bp, &h2, true);
        let hm = layer(&net.wm, &net.bm, &h2, true);
        let zero4 = vec![0.0; GOAL_OUTPUTS];
        let zero20 = vec![0.0; DIGIT_OUTPUTS];
        let pg = layer(&net.wp_goal, &zero4, &hp, false);
        let pd = layer(&net.wp_digit, &zero20, &hp, false);
        let mg = layer(&net.wm_goal, &zero4, &hm, false);
        let md = layer(&net.wm_digit, &zero20, &hm, false);
        (pg, pd, mg, md)
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let mut rng = substream(5, "net-test");
        for seed in 0..10 {
            let net = mini_net(100 + seed);
            let x = random_input(20, &mut rng);
            let trace = forward(&net, &x).unwrap();
            let (pg, pd, mg, md) = forward_oracle(&net, &x);
            for (a, b) in trace.parity_goal.iter().zip(&pg) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in trace.parity_digit.iter().zip(&pd) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in trace.magnitude_goal.iter().zip(&mg) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in trace.magnitude_digit.iter().zip(&md) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn averaged_digit_logits_are_the_head_mean() {
        let net = mini_net(6);
        let x = random_input(20, &mut substream(6, "net-test"));
        let trace = forward(&net, &x).unwrap();
        for j in 0..DIGIT_OUTPUTS {
            let expect = (trace.parity_digit[j] + trace.magnitude_digit[j]) / 2.0;
            assert_eq!(trace.avg_digit[j], expect);
        }
    }

    #[test]
    fn loss_on_zero_logits_is_uniform_entropy() {
        let net = DenseNet::zeros(mini_arch());
        let pair = NoisyPair {
            input: vec![0.1; 20],
            left_label: 3,
            right_label: 8,
        };
        let trace = forward(&net, &pair.input).unwrap();
        let (loss, _) = training_loss(&trace, &pair).unwrap();
        let expect = 2.0 * 10f64.ln() + 4.0 * 2f64.ln();
        assert!((loss - expect).abs() < 1e-12, "loss {loss} vs {expect}");
    }

    #[test]
    fn loss_vanishes_for_confident_correct_logits() {
        let net = DenseNet::zeros(mini_arch());
        let pair = NoisyPair {
            input: vec![0.1; 20],
            left_label: 3,
            right_label: 8,
        };
        let mut trace = forward(&net, &pair.input).unwrap();
        let margin = 50.0;
        trace.avg_digit = vec![-margin; DIGIT_OUTPUTS];
        trace.avg_digit[3] = margin;
        trace.avg_digit[10 + 8] = margin;
        // 3 is odd-low, 8 is even-high.
        trace.parity_goal = vec![-margin, margin, margin, -margin];
        trace.magnitude_goal = vec![margin, -margin, -margin, margin];
        let (loss, _) = training_loss(&trace, &pair).unwrap();
        assert!(loss < 1e-8, "loss {loss}");
    }

    #[test]
    fn loss_decomposes_into_six_nll_terms() {
        let mut rng = substream(7, "net-test");
        let net = mini_net(7);
        let pair = random_pair(20, &mut rng);
        let trace = forward(&net, &pair.input).unwrap();
        let (loss, _) = training_loss(&trace, &pair).unwrap();

        // Recompute the six terms one by one, straight from the trace.
        let mut expect = 0.0;
        for (side, label) in [(0usize, pair.left_label), (1, pair.right_label)] {
            let digits = &trace.avg_digit[side * 10..side * 10 + 10];
            expect += nll_loss(&log_softmax(digits).unwrap(), usize::from(label)).unwrap();
            let pg = &trace.parity_goal[side * 2..side * 2 + 2];
            expect += nll_loss(&log_softmax(pg).unwrap(), parity_index(label)).unwrap();
            let mg = &trace.magnitude_goal[side * 2..side * 2 + 2];
            expect += nll_loss(&log_softmax(mg).unwrap(), magnitude_index(label)).unwrap();
        }
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn backward_with_zero_seeds_gives_zero_gradients() {
        let net = mini_net(8);
        let x = random_input(20, &mut substream(8, "net-test"));
        let trace = forward(&net, &x).unwrap();
        let seeds = LossSeeds {
            d_parity_goal: vec![0.0; GOAL_OUTPUTS],
            d_parity_digit: vec![0.0; DIGIT_OUTPUTS],
            d_magnitude_goal: vec![0.0; GOAL_OUTPUTS],
            d_magnitude_digit: vec![0.0; DIGIT_OUTPUTS],
        };
        let grads = backward(&net, &trace, &seeds).unwrap();
        for (name, tensor) in grads.tensors() {
            assert!(tensor.iter().all(|&g| g == 0.0), "{name} not zero");
        }
    }

    #[test]
    fn dead_relu_units_receive_no_gradient() {
        let mut net = mini_net(9);
        net.b1[0] = -100.0; // unit 0 of h1 can never activate on [0, 1.7) inputs
        let mut rng = substream(9, "net-test");
        let pair = random_pair(20, &mut rng);
        let trace = forward(&net, &pair.input).unwrap();
        assert!(trace.h1[0] == 0.0);
        let (_, seeds) = training_loss(&trace, &pair).unwrap();
        let grads = backward(&net, &trace, &seeds).unwrap();
        assert!(grads.w1.row(0).iter().all(|&g| g == 0.0));
        assert_eq!(grads.b1[0], 0.0);
    }

    fn loss_of(net: &DenseNet, pair: &NoisyPair) -> f64 {
        let trace = forward(net, &pair.input).unwrap();
        training_loss(&trace, pair).unwrap().0
    }

    /// Largest relative disagreement between analytic gradients and central
    /// finite differences over every parameter of the net. The relative
    /// error denominator is floored at 1e-6, well above the finite
    /// difference noise floor, so exactly-zero gradient pairs compare clean.
    fn max_gradcheck_error(net: &DenseNet, pair: &NoisyPair, step: f64) -> f64 {
        let trace = forward(net, &pair.input).unwrap();
        let (_, seeds) = training_loss(&trace, pair).unwrap();
        let grads = backward(net, &trace, &seeds).unwrap();
        let mut worst = 0.0f64;
        for t in 0..12 {
            let len = grads.tensors()[t].1.len();
            for i in 0..len {
                let mut plus = net.clone();
                plus.tensors_mut()[t].1[i] += step;
                let mut minus = net.clone();
                minus.tensors_mut()[t].1[i] -= step;
                let fd = (loss_of(&plus, pair) - loss_of(&minus, pair)) / (2.0 * step);
                let a = grads.tensors()[t].1[i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = substream(10, "net-test");
        for seed in 0..3 {
            let net = mini_net(200 + seed);
            let pair = random_pair(20, &mut rng);
            let err = max_gradcheck_error(&net, &pair, 1e-5);
            assert!(err < 1e-4, "gradient check failed: max rel err {err}");
        }
    }

    #[test]
    fn batch_paths_agree_with_per_pair_paths() {
        let mut rng = substream(11, "net-test");
        let net = mini_net(11);
        let pairs: Vec<NoisyPair> = (0..5).map(|_| random_pair(20, &mut rng)).collect();
        let mut x = Matrix::zeros(5, 20);
        let mut labels = Vec::new();
        for (i, p) in pairs.iter().enumerate() {
            x.data_mut()[i * 20..(i + 1) * 20].copy_from_slice(&p.input);
            labels.push((p.left_label, p.right_label));
        }
        let btrace = forward_batch(&net, &x).unwrap();
        let (bloss, bgrads) = batch_loss_and_grads(&net, &x, &labels, &btrace).unwrap();

        let mut loss_sum = 0.0;
        let mut acc: Option<Gradients> = None;
        for (i, p) in pairs.iter().enumerate() {
            let trace = forward(&net, &p.input).unwrap();
            // Batched and per-pair forwards must agree to reduction-order
            // precision.
            for (a, b) in trace.avg_digit.iter().zip(btrace.avg_digit.row(i)) {
                assert!((a - b).abs() < 1e-10);
            }
            let (loss, seeds) = training_loss(&trace, p).unwrap();
            loss_sum += loss;
            let g = backward(&net, &trace, &seeds).unwrap();
            acc = Some(match acc {
                None => g,
                Some(mut total) => {
                    let gt = g.tensors();
                    for (t, (_, src)) in gt.iter().enumerate() {
                        let dst = match t {
                            0 => total.w1.data_mut(),
                            1 => &mut total.b1,
                            2 => total.w2.data_mut(),
                            3 => &mut total.b2,
                            4 => total.wp.data_mut(),
                            5 => &mut total.bp,
                            6 => total.wm.data_mut(),
                            7 => &mut total.bm,
                            8 => total.wp_goal.data_mut(),
                            9 => total.wp_digit.data_mut(),
                            10 => total.wm_goal.data_mut(),
                            11 => total.wm_digit.data_mut(),
                            _ => unreachable!(),
                        };
                        for (d, s) in dst.iter_mut().zip(src.iter()) {
                            *d += s;
                        }
                    }
                    total
                }
            });
        }
        let acc = acc.unwrap();
        assert!((bloss - loss_sum / 5.0).abs() < 1e-10);
        for ((name, b), (_, s)) in bgrads.tensors().iter().zip(acc.tensors()) {
            for (bv, sv) in b.iter().zip(s.iter()) {
                let mean = sv / 5.0;
                assert!(
                    (bv - mean).abs() < 1e-9 * mean.abs().max(1.0),
                    "{name}: batch {bv} vs mean {mean}"
                );
            }
        }
    }

    #[test]
    fn zero_step_training_changes_nothing() {
        let set = synthetic_dataset(1);
        let mut net = DenseNet::init(
            Arch { input: 1568, hidden1: 16, hidden2: 12, branch: 8 },
            &mut substream(12, "net-test-init"),
        );
        let before = net.clone();
        let config = TrainConfig {
            steps: 0,
            batch_size: 8,
            eval_interval: 10,
            eval_pairs: 20,
            learning_rate: 0.001,
        };
        let records = train(&mut net, &set, &set, &config, 99, |_| {}).unwrap();
        assert_eq!(net, before);
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].step, 0);
    }

    #[test]
    fn short_training_reduces_loss() {
        let set = synthetic_dataset(3);
        let mut net = DenseNet::init(
            Arch { input: 1568, hidden1: 32, hidden2: 24, branch: 16 },
            &mut substream(13, "net-test-init"),
        );
        let config = TrainConfig {
            steps: 60,
            batch_size: 32,
            eval_interval: 30,
            eval_pairs: 200,
            learning_rate: 0.01,
        };
        let records = train(&mut net, &set, &set, &config, 7, |_| {}).unwrap();
        assert_eq!(records.len(), 3); // steps 0, 30, 60
        let first = records.first().unwrap();
        let last = records.last().unwrap();
        assert!(
            last.loss < first.loss,
            "loss did not improve: {} -> {}",
            first.loss,
            last.loss
        );
    }

    #[test]
    fn training_is_reproducible() {
        let set = synthetic_dataset(1);
        let arch = Arch { input: 1568, hidden1: 12, hidden2: 10, branch: 6 };
        let config = TrainConfig {
            steps: 5,
            batch_size: 4,
            eval_interval: 5,
            eval_pairs: 10,
            learning_rate: 0.01,
        };
        let mut net_a = DenseNet::init(arch, &mut substream(14, "net-test-init"));
        let mut net_b = net_a.clone();
        let rec_a = train(&mut net_a, &set, &set, &config, 21, |_| {}).unwrap();
        let rec_b = train(&mut net_b, &set, &set, &config, 21, |_| {}).unwrap();
        assert_eq!(net_a, net_b);
        assert_eq!(rec_a, rec_b);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = mini_net(15);
        let x = random_input(20, &mut substream(15, "net-test"));
        let before = forward(&net, &x).unwrap();

        let ckpt = Checkpoint { net, step_count: 123, seed: 456 };
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.step_count, 123);
        assert_eq!(loaded.seed, 456);
        assert_eq!(loaded.net, ckpt.net);
        let after = forward(&loaded.net, &x).unwrap();
        assert_eq!(before.avg_digit, after.avg_digit);
        assert_eq!(before.parity_goal, after.parity_goal);
    }

    #[test]
    fn checkpoint_load_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let ckpt = Checkpoint { net: mini_net(16), step_count: 1, seed: 2 };
        ckpt.save(&path).unwrap();
        let good = std::fs::read(&path).unwrap();

        // Truncation inside a tensor.
        std::fs::write(&path, &good[..good.len() / 2]).unwrap();
        match Checkpoint::load(&path) {
            Err(Error::Checkpoint { field, .. }) => {
                assert!(ckpt.net.tensors().iter().any(|(n, _)| *n == field), "field {field}");
            }
            other => panic!("expected checkpoint error, got {other:?}"),
        }

        // Bad magic.
        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::Checkpoint { field: "magic", .. })
        ));

        // Unsupported version.
        let mut bad = good.clone();
        bad[5] = 99;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::Checkpoint { field: "version", .. })
        ));

        // Trailing garbage.
        let mut bad = good.clone();
        bad.push(0);
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::Checkpoint { field: "trailer", .. })
        ));
    }

    #[test]
    fn reloaded_checkpoint_reproduces_eval_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let set = synthetic_dataset(2);
        let net = DenseNet::init(
            Arch { input: 1568, hidden1: 16, hidden2: 12, branch: 8 },
            &mut substream(17, "net-test-init"),
        );
        let mut rng = substream(17, "net-test");
        let pairs: Vec<NoisyPair> = (0..50)
            .map(|_| make_test_pair(&set, &mut rng).unwrap())
            .collect();
        let before = evaluate_plain(&net, &pairs, 0).unwrap();
        Checkpoint { net, step_count: 0, seed: 0 }.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let after = evaluate_plain(&loaded.net, &pairs, 0).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn eval_record_csv_layout() {
        let record = EvalRecord {
            step: 200,
            digit_acc_left: 0.5,
            digit_acc_right: 0.25,
            parity_acc: 0.75,
            magnitude_acc: 1.0,
            loss: 1.5,
        };
        assert_eq!(
            record.csv_row(),
            "200,0.500000,0.250000,0.750000,1.000000,1.500000"
        );
        assert_eq!(EvalRecord::CSV_HEADER.split(',').count(), 6);
    }
}
