//! Runtime property suites, callable from the command line.
//!
//! Each check re-derives its expected answers from first principles —
//! finite differences for gradients, a straight-line reimplementation of
//! the attention walk, closed-form probabilities, bit comparisons for
//! determinism — so a pass means the production code agrees with an
//! independent computation, not merely with itself.

use rand::Rng;

use crate::attention::{ceb_attention, eb_layer};
use crate::data::{goal_digit_of, Dataset, DigitImage, GoalId, NoisyPair, IMAGE_PIXELS};
use crate::error::Result;
use crate::net::{
    backward, forward, train, training_loss, Arch, DenseNet, ForwardTrace, TrainConfig,
};
use crate::neuromod::{
    check_reset, run_trials, selection_probabilities, softmax_select, summarize,
    update_on_outcome, NeuromodConfig, NeuromodState, ValidityMode,
};
use crate::rng::substream;
use crate::tensor::Matrix;

/// Result of one named check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub details: String,
}

#[derive(Debug, Clone)]
pub struct SelfTestReport {
    pub checks: Vec<CheckOutcome>,
}

impl SelfTestReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Run every check, reporting each outcome through `progress` as soon as
/// it is known.
pub fn run_all(mut progress: impl FnMut(&CheckOutcome)) -> Result<SelfTestReport> {
    let mut checks = Vec::new();
    for check in [
        gradient_check()?,
        attention_oracle_check()?,
        neuromod_invariants_check()?,
        determinism_check()?,
        partition_identity_check()?,
    ] {
        progress(&check);
        checks.push(check);
    }
    Ok(SelfTestReport { checks })
}

const GRADCHECK_CASES: usize = 100;
const GRADCHECK_TOLERANCE: f64 = 1e-4;
const ORACLE_CASES: usize = 1000;
const ORACLE_TOLERANCE: f64 = 1e-12;

fn mini_arch() -> Arch {
    Arch {
        input: 20,
        hidden1: 10,
        hidden2: 8,
        branch: 6,
    }
}

fn random_pair(input_len: usize, rng: &mut impl Rng) -> NoisyPair {
    NoisyPair {
        input: (0..input_len).map(|_| rng.gen_range(0.0..1.7)).collect(),
        left_label: rng.gen_range(0..10),
        right_label: rng.gen_range(0..10),
    }
}

fn loss_of(net: &DenseNet, pair: &NoisyPair) -> Result<f64> {
    let trace = forward(net, &pair.input)?;
    Ok(training_loss(&trace, pair)?.0)
}

/// Analytic gradients vs central finite differences over every parameter
/// of a miniature net, for many random (net, input, target) triples.
fn gradient_check() -> Result<CheckOutcome> {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for case in 0..GRADCHECK_CASES as u64 {
        let mut rng = substream(case, "selftest-gradcheck");
        let mut net = DenseNet::init(mini_arch(), &mut rng);
        let pair = random_pair(20, &mut rng);
        let trace = forward(&net, &pair.input)?;
        let (_, seeds) = training_loss(&trace, &pair)?;
        let grads = backward(&net, &trace, &seeds)?;
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|(_, g)| g.to_vec()).collect();
        for t in 0..analytic.len() {
            for k in 0..analytic[t].len() {
                net.tensors_mut()[t].1[k] += h;
                let up = loss_of(&net, &pair)?;
                net.tensors_mut()[t].1[k] -= 2.0 * h;
                let down = loss_of(&net, &pair)?;
                net.tensors_mut()[t].1[k] += h;
                let fd = (up - down) / (2.0 * h);
                let a = analytic[t][k];
                let denom = a.abs().max(fd.abs()).max(1e-6);
                worst = worst.max((a - fd).abs() / denom);
            }
        }
    }
    Ok(CheckOutcome {
        name: "gradient-check",
        passed: worst < GRADCHECK_TOLERANCE,
        details: format!(
            "max relative error {worst:.3e} over {GRADCHECK_CASES} random nets (tolerance {GRADCHECK_TOLERANCE:.0e})"
        ),
    })
}

/// One excitation-backprop step, written straight off the definition.
fn eb_reference(parents: &[f64], weights: &Matrix, acts: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; acts.len()];
    for i in 0..parents.len() {
        let row = weights.row(i);
        let mut z = 0.0;
        for j in 0..acts.len() {
            if row[j] > 0.0 {
                z += acts[j] * row[j];
            }
        }
        if z > 0.0 {
            for j in 0..acts.len() {
                if row[j] > 0.0 {
                    out[j] += parents[i] * acts[j] * row[j] / z;
                }
            }
        }
    }
    out
}

/// Full contrastive walk to the input, written straight off the
/// definition, sharing nothing with the production path but the weights.
fn ceb_reference(net: &DenseNet, trace: &ForwardTrace, goal: GoalId) -> Vec<f64> {
    let (goal_w, branch_w, acts) = match goal.class() {
        crate::data::GoalClass::Parity => (&net.wp_goal, &net.wp, &trace.hp),
        crate::data::GoalClass::Magnitude => (&net.wm_goal, &net.wm, &trace.hm),
    };
    let mut seed_e = vec![0.0; 4];
    let mut seed_i = vec![0.0; 4];
    seed_e[goal.subgoal_index()] = 0.5;
    seed_e[2 + goal.subgoal_index()] = 0.5;
    seed_i[goal.contrast().subgoal_index()] = 0.5;
    seed_i[2 + goal.contrast().subgoal_index()] = 0.5;
    let walk = |seed: &[f64]| -> Vec<f64> {
        let top = eb_reference(seed, goal_w, acts);
        let h2 = eb_reference(&top, branch_w, &trace.h2);
        let h1 = eb_reference(&h2, &net.w2, &trace.h1);
        eb_reference(&h1, &net.w1, &trace.input)
    };
    let e = walk(&seed_e);
    let i = walk(&seed_i);
    let mut out: Vec<f64> = e.iter().zip(&i).map(|(a, b)| (a - b).max(0.0)).collect();
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        for v in &mut out {
            *v /= total;
        }
    }
    out
}

/// The production attention chain vs the straight-line reference on many
/// random miniature nets, including the layer rule on its own.
fn attention_oracle_check() -> Result<CheckOutcome> {
    let shapes = [
        Arch { input: 10, hidden1: 9, hidden2: 8, branch: 7 },
        Arch { input: 7, hidden1: 10, hidden2: 5, branch: 4 },
        Arch { input: 9, hidden1: 4, hidden2: 10, branch: 6 },
        Arch { input: 6, hidden1: 6, hidden2: 6, branch: 10 },
    ];
    let mut rng = substream(0, "selftest-attention-inputs");
    let mut worst = 0.0f64;
    let mut degenerate_seen = 0usize;
    for case in 0..ORACLE_CASES as u64 {
        let arch = shapes[case as usize % shapes.len()];
        let net = DenseNet::init(arch, &mut substream(case, "selftest-attention-net"));
        let input: Vec<f64> = (0..arch.input).map(|_| rng.gen_range(0.0..1.7)).collect();
        let trace = forward(&net, &input)?;
        let goal = GoalId::ALL[case as usize % 4];
        let map = ceb_attention(&net, &trace, goal)?;
        let want = ceb_reference(&net, &trace, goal);
        for (got, want) in map.probs.iter().zip(&want) {
            worst = worst.max((got - want).abs());
        }
        degenerate_seen += usize::from(map.degenerate);
        // Exercise the layer rule directly as well.
        let single = eb_layer(&vec![1.0 / arch.branch as f64; arch.branch], &net.wp, &trace.h2)?;
        let single_want = eb_reference(
            &vec![1.0 / arch.branch as f64; arch.branch],
            &net.wp,
            &trace.h2,
        );
        for (got, want) in single.iter().zip(&single_want) {
            worst = worst.max((got - want).abs());
        }
    }
    Ok(CheckOutcome {
        name: "attention-oracle",
        passed: worst < ORACLE_TOLERANCE,
        details: format!(
            "max deviation {worst:.3e} over {ORACLE_CASES} cases ({degenerate_seen} degenerate), tolerance {ORACLE_TOLERANCE:.0e}"
        ),
    })
}

/// Closed-form softmax probabilities, multiplicative-update bounds over a
/// million random steps, and the reset threshold arithmetic.
fn neuromod_invariants_check() -> Result<CheckOutcome> {
    let config = NeuromodConfig::default();
    let mut notes = Vec::new();
    let mut passed = true;

    // Softmax closed form and sampling agreement.
    let state = NeuromodState { ach: [2.0, 1.0, 1.0, 1.0], ne: 0.25 };
    let p0 = selection_probabilities(&state, 5.0)[0];
    let closed = (10.0f64).exp() / ((10.0f64).exp() + 3.0 * (5.0f64).exp());
    let softmax_ok = (p0 - closed).abs() < 1e-12;
    let mut rng = substream(1, "selftest-neuromod");
    let n = 100_000;
    let hits = (0..n)
        .filter(|_| softmax_select(&state, 5.0, &mut rng) == GoalId::Even)
        .count();
    let freq = hits as f64 / n as f64;
    let sigma = (closed * (1.0 - closed) / n as f64).sqrt();
    let sampling_ok = (freq - closed).abs() < 3.0 * sigma;
    passed &= softmax_ok && sampling_ok;
    notes.push(format!(
        "softmax closed-form {closed:.6} empirical {freq:.6} ({})",
        if softmax_ok && sampling_ok { "ok" } else { "MISMATCH" }
    ));

    // Bounds and monotonicity over a million random updates.
    let mut state = NeuromodState::initial(&config);
    let mut bounds_ok = true;
    for _ in 0..1_000_000 {
        let guess = GoalId::from_index(rng.gen_range(0..4)).unwrap();
        let correct = rng.gen::<f64>() < 0.4;
        let before = state.ach[guess.index()];
        update_on_outcome(&mut state, &config, guess, correct);
        let after = state.ach[guess.index()];
        bounds_ok &= if correct { after >= before } else { after <= before };
        check_reset(&mut state, &config);
        bounds_ok &= state.ach.iter().all(|&a| a > 0.0 && a <= config.max_ach);
        bounds_ok &= state.ne >= config.ne_reset;
    }
    passed &= bounds_ok;
    notes.push(format!(
        "bounds over 1e6 updates {}",
        if bounds_ok { "ok" } else { "VIOLATED" }
    ));

    // Reset threshold at ach = ones is 2/3; NE of 0.70 fires, 0.25 does
    // not, and consecutive failures from the floor need exactly 50 steps
    // to cross with the threshold pinned.
    let mut quiet = NeuromodState::initial(&config);
    let no_fire = !check_reset(&mut quiet, &config);
    let mut hot = NeuromodState { ach: [1.0; 4], ne: 0.70 };
    let fires = check_reset(&mut hot, &config) && hot == NeuromodState::initial(&config);
    let mut ne = 0.25;
    let mut crossing = 0;
    for k in 1..200 {
        ne *= config.ne_incorrect;
        if ne > 2.0 / 3.0 {
            crossing = k;
            break;
        }
    }
    let threshold_ok = no_fire && fires && crossing == 50;
    passed &= threshold_ok;
    notes.push(format!(
        "reset threshold 2/3, first crossing at k={crossing} ({})",
        if threshold_ok { "ok" } else { "MISMATCH" }
    ));

    Ok(CheckOutcome {
        name: "neuromod-invariants",
        passed,
        details: notes.join("; "),
    })
}

/// A small synthetic digit set: deterministic pixel templates per digit,
/// enough structure for smoke training and pair generation.
pub fn synthetic_digits(per_digit: usize) -> Dataset {
    let mut images = Vec::new();
    for copy in 0..per_digit {
        for digit in 0u8..10 {
            let mut pixels = vec![0.0f32; IMAGE_PIXELS];
            for p in 0..40 {
                pixels[(usize::from(digit) * 73 + p * 7 + copy) % IMAGE_PIXELS] = 1.0;
            }
            images.push(DigitImage { pixels, label: digit });
        }
    }
    Dataset::new(images)
}

fn bits_of(net: &DenseNet) -> Vec<u64> {
    net.tensors()
        .iter()
        .flat_map(|(_, t)| t.iter().map(|v| v.to_bits()))
        .collect()
}

/// Same seed in, bit-identical state out: smoke training twice and a
/// scheduled neuromodulation run twice.
fn determinism_check() -> Result<CheckOutcome> {
    let set = synthetic_digits(3);
    let arch = Arch { input: 1568, hidden1: 24, hidden2: 16, branch: 12 };
    let config = TrainConfig {
        steps: 25,
        batch_size: 8,
        eval_interval: 10,
        eval_pairs: 16,
        learning_rate: 0.001,
    };
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut net = DenseNet::init(arch, &mut substream(77, "selftest-determinism-init"));
        let records = train(&mut net, &set, &set, &config, 77, |_| {})?;
        runs.push((bits_of(&net), records));
    }
    let train_ok = runs[0] == runs[1];

    let nconfig = NeuromodConfig {
        num_switches: 3,
        ..NeuromodConfig::with_validity(ValidityMode::Fixed(0.85))
    };
    let predict = |pair: &NoisyPair, goal: GoalId| goal_digit_of(pair, goal).map(|(d, _)| d);
    let a = run_trials(predict, &set, &nconfig, 19, "selftest-determinism")?;
    let b = run_trials(predict, &set, &nconfig, 19, "selftest-determinism")?;
    let trials_ok = a == b;

    Ok(CheckOutcome {
        name: "determinism",
        passed: train_ok && trials_ok,
        details: format!(
            "smoke training bit-identical: {train_ok}; trial log identical: {trials_ok}"
        ),
    })
}

/// Outcome categories partition every log exactly, in counts and in
/// floating-point percentages.
fn partition_identity_check() -> Result<CheckOutcome> {
    let set = synthetic_digits(2);
    let predict = |pair: &NoisyPair, goal: GoalId| goal_digit_of(pair, goal).map(|(d, _)| d);
    let mut passed = true;
    let mut worst_sum = 100.0f64;
    for seed in 0..6 {
        let config = NeuromodConfig {
            num_switches: 3,
            ..NeuromodConfig::with_validity(if seed % 2 == 0 {
                ValidityMode::Fixed(0.70)
            } else {
                ValidityMode::RandomPerSwitch
            })
        };
        let log = run_trials(predict, &set, &config, seed, "selftest-partition")?;
        let s = summarize(&log)?;
        passed &= s.correct_major + s.correct_minor + s.incorrect_softmax + s.incorrect_ceb
            == s.trials;
        let total = s.pct_correct_major
            + s.pct_correct_minor
            + s.pct_incorrect_softmax
            + s.pct_incorrect_ceb;
        passed &= total == 100.0;
        worst_sum = total;
    }
    Ok(CheckOutcome {
        name: "partition-identity",
        passed,
        details: format!("counts partition trials; percentage sum {worst_sum} (must be exactly 100)"),
    })
}
