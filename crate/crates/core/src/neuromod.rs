//! Online goal inference through two neuromodulatory signals.
//!
//! The environment rewards one of four goals (the "major" goal) on most
//! trials, occasionally rewarding its same-class complement (the "minor"
//! goal), and silently switches the major goal every few hundred trials.
//! The agent never observes the goal directly: each trial it guesses one,
//! runs goal-driven prediction with the guess, and only learns whether the
//! combined guess-plus-prediction was correct.
//!
//! Four ACh levels (one per goal) track expected uncertainty: the level of
//! the guessed goal grows multiplicatively on success and shrinks on
//! failure, and guesses are drawn from a softmax over the levels. One NE
//! level tracks unexpected uncertainty: it grows on failure, shrinks on
//! success, and when it crosses a threshold derived from the mean ACh
//! level the whole state resets to its initial value, re-enabling
//! exploration after a contingency change.

use rayon::prelude::*;

use crate::data::{goal_digit_of, Dataset, GoalId, NoisyPair};
use crate::error::{Error, Result};
use crate::rng::substream;
use rand::Rng;

/// The three goal-validity settings used by the scheduled experiments.
pub const VALIDITY_OPTIONS: [f64; 3] = [0.99, 0.85, 0.70];

/// How each block's validity is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValidityMode {
    /// Every block uses the same validity.
    Fixed(f64),
    /// Each block draws uniformly from [`VALIDITY_OPTIONS`].
    RandomPerSwitch,
}

/// All knobs of the neuromodulation process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuromodConfig {
    /// Softmax inverse temperature for goal selection.
    pub beta: f64,
    /// Upper cap on each ACh level.
    pub max_ach: f64,
    /// Initial and floor value of the NE level.
    pub ne_reset: f64,
    /// Multiplier on the guessed goal's ACh after a correct trial.
    pub ach_correct: f64,
    /// Multiplier on the guessed goal's ACh after an incorrect trial.
    pub ach_incorrect: f64,
    /// Multiplier on NE after a correct trial.
    pub ne_correct: f64,
    /// Multiplier on NE after an incorrect trial.
    pub ne_incorrect: f64,
    /// Number of blocks in a schedule.
    pub num_switches: usize,
    /// Nominal block length in trials.
    pub trial_interval: usize,
    /// Half-width of the uniform jitter on block length.
    pub trial_range: usize,
    pub validity_mode: ValidityMode,
}

impl NeuromodConfig {
    pub fn with_validity(validity_mode: ValidityMode) -> Self {
        NeuromodConfig {
            beta: 4.0,
            max_ach: 2.5,
            ne_reset: 0.25,
            ach_correct: 1.04,
            ach_incorrect: 0.99,
            ne_correct: 0.97,
            ne_incorrect: 1.02,
            num_switches: 10,
            trial_interval: 400,
            trial_range: 30,
            validity_mode,
        }
    }
}

impl Default for NeuromodConfig {
    fn default() -> Self {
        NeuromodConfig::with_validity(ValidityMode::Fixed(0.99))
    }
}

/// The agent's internal state: one ACh level per goal plus the NE level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuromodState {
    /// Indexed by [`GoalId::index`]: even, odd, low, high.
    pub ach: [f64; 4],
    pub ne: f64,
}

impl NeuromodState {
    pub fn initial(config: &NeuromodConfig) -> Self {
        NeuromodState {
            ach: [1.0; 4],
            ne: config.ne_reset,
        }
    }
}

/// One scheduled segment with a fixed major goal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalBlock {
    pub major: GoalId,
    /// Always the major's same-class complement.
    pub minor: GoalId,
    /// Probability that a trial in this block rewards the major goal.
    pub validity: f64,
    /// Number of trials in this block.
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalSchedule {
    pub blocks: Vec<GoalBlock>,
}

impl GoalSchedule {
    pub fn total_trials(&self) -> usize {
        self.blocks.iter().map(|b| b.length).sum()
    }
}

/// Build a schedule of `num_switches` blocks. The first major goal is
/// uniform over all four goals; each later block draws uniformly from the
/// three goals that differ from the previous major, so every switch is a
/// real contingency change the NE mechanism can be expected to detect.
/// Block lengths are uniform integers in
/// `trial_interval ± trial_range`; per-block draws happen in the fixed
/// order major, length, validity.
pub fn make_schedule(config: &NeuromodConfig, rng: &mut impl Rng) -> GoalSchedule {
    let mut blocks = Vec::with_capacity(config.num_switches);
    let mut previous: Option<GoalId> = None;
    for _ in 0..config.num_switches {
        let major = match previous {
            None => GoalId::from_index(rng.gen_range(0..4)).unwrap(),
            Some(prev) => {
                let mut others = GoalId::ALL.to_vec();
                others.retain(|g| *g != prev);
                others[rng.gen_range(0..others.len())]
            }
        };
        previous = Some(major);
        let length = rng.gen_range(
            config.trial_interval - config.trial_range
                ..=config.trial_interval + config.trial_range,
        );
        let validity = match config.validity_mode {
            ValidityMode::Fixed(v) => v,
            ValidityMode::RandomPerSwitch => {
                VALIDITY_OPTIONS[rng.gen_range(0..VALIDITY_OPTIONS.len())]
            }
        };
        blocks.push(GoalBlock {
            major,
            minor: major.contrast(),
            validity,
            length,
        });
    }
    GoalSchedule { blocks }
}

/// The rewarded goal of one trial: the block's major goal with probability
/// `validity`, otherwise its minor goal.
pub fn draw_true_goal(block: &GoalBlock, rng: &mut impl Rng) -> GoalId {
    if rng.gen::<f64>() < block.validity {
        block.major
    } else {
        block.minor
    }
}

/// Closed-form selection probabilities `P(g) = exp(beta*ach[g]) / sum`.
pub fn selection_probabilities(state: &NeuromodState, beta: f64) -> [f64; 4] {
    let max = state.ach.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; 4];
    let mut total = 0.0;
    for (out, &a) in p.iter_mut().zip(&state.ach) {
        *out = (beta * (a - max)).exp();
        total += *out;
    }
    for out in &mut p {
        *out /= total;
    }
    p
}

/// Sample a goal guess from the softmax over ACh levels.
pub fn softmax_select(state: &NeuromodState, beta: f64, rng: &mut impl Rng) -> GoalId {
    let probs = selection_probabilities(state, beta);
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return GoalId::from_index(i).unwrap();
        }
    }
    GoalId::High
}

/// Multiplicative post-trial update: the guessed goal's ACh grows (capped)
/// on success and shrinks on failure, NE shrinks (floored) on success and
/// grows on failure. Other ACh entries are untouched.
pub fn update_on_outcome(
    state: &mut NeuromodState,
    config: &NeuromodConfig,
    guess: GoalId,
    correct: bool,
) {
    let g = guess.index();
    if correct {
        state.ach[g] = (state.ach[g] * config.ach_correct).min(config.max_ach);
        state.ne = (state.ne * config.ne_correct).max(config.ne_reset);
    } else {
        state.ach[g] *= config.ach_incorrect;
        state.ne *= config.ne_incorrect;
    }
}

/// Reset test, run after every outcome update: when NE exceeds
/// `mean(ach) / (0.5 + mean(ach))` the state snaps back to its initial
/// value. Returns whether the reset fired.
pub fn check_reset(state: &mut NeuromodState, config: &NeuromodConfig) -> bool {
    let mean = state.ach.iter().sum::<f64>() / 4.0;
    if state.ne > mean / (0.5 + mean) {
        *state = NeuromodState::initial(config);
        true
    } else {
        false
    }
}

/// How one trial went.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Guessed goal matched the true goal and the predicted digit matched
    /// the true goal's digit.
    Correct,
    /// Guessed goal differed from the true goal.
    WrongGoal,
    /// Right goal guess, but the prediction picked the wrong digit.
    WrongDigit,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Correct => "correct",
            Outcome::WrongGoal => "wrong_goal",
            Outcome::WrongDigit => "wrong_digit",
        }
    }
}

/// Everything recorded about one trial. ACh/NE snapshots are taken after
/// the update and the reset test, i.e. they are the state carried into the
/// next trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub block: usize,
    pub true_goal: GoalId,
    pub major_goal: GoalId,
    pub guess_goal: GoalId,
    pub goal_digit: u8,
    pub pred_digit: u8,
    pub outcome: Outcome,
    pub ach: [f64; 4],
    pub ne: f64,
    pub reset: bool,
}

pub type TrialLog = Vec<TrialRecord>;

/// Column layout of the per-trial trace CSV. Neuromodulator columns hold
/// post-trial values (after the outcome update and any reset).
pub const TRIAL_CSV_HEADER: &str = "trial,block,true_goal,major_goal,guess_goal,goal_digit,\
pred_digit,outcome,ach_even,ach_odd,ach_low,ach_high,ne,reset";

pub fn trial_csv_row(r: &TrialRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
        r.trial,
        r.block,
        r.true_goal.name(),
        r.major_goal.name(),
        r.guess_goal.name(),
        r.goal_digit,
        r.pred_digit,
        r.outcome.as_str(),
        r.ach[0],
        r.ach[1],
        r.ach[2],
        r.ach[3],
        r.ne,
        u8::from(r.reset),
    )
}

/// Run one sequential pass over a schedule. Per trial: draw a fresh test
/// pair and the true goal from `env_rng`, draw the goal guess from
/// `select_rng`, obtain a digit prediction for the guessed goal from
/// `predict`, score, update, and test for reset.
///
/// The predictor abstracts the attention pipeline (the production path
/// binds it to goal-driven network prediction) so the process can also be
/// driven by reference predictors in tests.
pub fn run_scheduled_trials<P>(
    predict: P,
    test_set: &Dataset,
    schedule: &GoalSchedule,
    config: &NeuromodConfig,
    env_rng: &mut impl Rng,
    select_rng: &mut impl Rng,
) -> Result<TrialLog>
where
    P: Fn(&NoisyPair, GoalId) -> Result<u8>,
{
    let mut log = Vec::with_capacity(schedule.total_trials());
    let mut state = NeuromodState::initial(config);
    let mut trial = 0;
    for (block_idx, block) in schedule.blocks.iter().enumerate() {
        for _ in 0..block.length {
            let pair = crate::data::make_test_pair(test_set, env_rng)?;
            let true_goal = draw_true_goal(block, env_rng);
            let guess = softmax_select(&state, config.beta, select_rng);
            let pred_digit = predict(&pair, guess)?;
            let (goal_digit, _) = goal_digit_of(&pair, true_goal)?;
            let outcome = if guess != true_goal {
                Outcome::WrongGoal
            } else if pred_digit != goal_digit {
                Outcome::WrongDigit
            } else {
                Outcome::Correct
            };
            update_on_outcome(&mut state, config, guess, outcome == Outcome::Correct);
            let reset = check_reset(&mut state, config);
            log.push(TrialRecord {
                trial,
                block: block_idx,
                true_goal,
                major_goal: block.major,
                guess_goal: guess,
                goal_digit,
                pred_digit,
                outcome,
                ach: state.ach,
                ne: state.ne,
                reset,
            });
            trial += 1;
        }
    }
    Ok(log)
}

/// Run one full experiment run from a master seed: the schedule, the
/// per-trial environment draws and the softmax guesses each consume their
/// own named substream, so e.g. changing the selection temperature never
/// perturbs the scheduled goals.
pub fn run_trials<P>(
    predict: P,
    test_set: &Dataset,
    config: &NeuromodConfig,
    master_seed: u64,
    run_name: &str,
) -> Result<TrialLog>
where
    P: Fn(&NoisyPair, GoalId) -> Result<u8>,
{
    let mut schedule_rng = substream(master_seed, &format!("{run_name}-schedule"));
    let mut env_rng = substream(master_seed, &format!("{run_name}-env"));
    let mut select_rng = substream(master_seed, &format!("{run_name}-select"));
    let schedule = make_schedule(config, &mut schedule_rng);
    run_scheduled_trials(
        predict,
        test_set,
        &schedule,
        config,
        &mut env_rng,
        &mut select_rng,
    )
}

/// Outcome shares of one run, split four ways.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeSummary {
    pub trials: usize,
    /// Correct trials where the true goal was the block's major goal.
    pub correct_major: usize,
    /// Correct trials where the true goal was the minor goal.
    pub correct_minor: usize,
    /// Trials whose goal guess differed from the true goal.
    pub incorrect_softmax: usize,
    /// Right goal, wrong digit: failures of the attention pipeline.
    pub incorrect_ceb: usize,
    pub pct_correct_major: f64,
    pub pct_correct_minor: f64,
    pub pct_incorrect_softmax: f64,
    pub pct_incorrect_ceb: f64,
}

impl OutcomeSummary {
    pub fn percentages(&self) -> [f64; 4] {
        [
            self.pct_correct_major,
            self.pct_correct_minor,
            self.pct_incorrect_softmax,
            self.pct_incorrect_ceb,
        ]
    }
}

/// Partition a trial log into the four outcome categories. The categories
/// are mutually exclusive and exhaustive; the last percentage is computed
/// as the complement of the other three so the four always sum to exactly
/// 100 in floating point, not just in exact arithmetic.
pub fn summarize(log: &[TrialRecord]) -> Result<OutcomeSummary> {
    if log.is_empty() {
        return Err(Error::Precondition("cannot summarize an empty log".into()));
    }
    let mut counts = [0usize; 4];
    for r in log {
        let cat = match r.outcome {
            Outcome::Correct if r.true_goal == r.major_goal => 0,
            Outcome::Correct => 1,
            Outcome::WrongGoal => 2,
            Outcome::WrongDigit => 3,
        };
        counts[cat] += 1;
    }
    let n = log.len() as f64;
    let pct0 = 100.0 * counts[0] as f64 / n;
    let pct1 = 100.0 * counts[1] as f64 / n;
    let pct2 = 100.0 * counts[2] as f64 / n;
    // Complement of the left-to-right sum: with s = fl((pct0+pct1)+pct2),
    // fl(s + fl(100-s)) == 100 for every s in [0, 100] (Sterbenz when
    // s >= 50, sub-half-ulp rounding onto 100's even mantissa below), so
    // summing the four fields in declaration order yields exactly 100.0.
    // Subtracting the three terms sequentially instead does NOT have this
    // property and fails for roughly one count partition in eight.
    let pct3 = 100.0 - (pct0 + pct1 + pct2);
    Ok(OutcomeSummary {
        trials: log.len(),
        correct_major: counts[0],
        correct_minor: counts[1],
        incorrect_softmax: counts[2],
        incorrect_ceb: counts[3],
        pct_correct_major: pct0,
        pct_correct_minor: pct1,
        pct_incorrect_softmax: pct2,
        pct_incorrect_ceb: pct3,
    })
}

/// Aggregate of several independent runs under one configuration.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: NeuromodConfig,
    pub logs: Vec<TrialLog>,
    pub summaries: Vec<OutcomeSummary>,
    /// Mean of each percentage cell over runs, in summary order.
    pub mean: [f64; 4],
    /// Sample standard deviation (n-1) of each cell; zero for one run.
    pub std: [f64; 4],
}

/// Run `runs` independent trials sequences in parallel, each under its own
/// substream family derived from `master_seed` and `name`, and aggregate
/// their outcome summaries.
pub fn run_experiment<P>(
    predict: P,
    test_set: &Dataset,
    config: &NeuromodConfig,
    master_seed: u64,
    name: &str,
    runs: usize,
) -> Result<ExperimentResult>
where
    P: Fn(&NoisyPair, GoalId) -> Result<u8> + Sync,
{
    if runs == 0 {
        return Err(Error::Precondition("need at least one run".into()));
    }
    let logs: Vec<TrialLog> = (0..runs)
        .into_par_iter()
        .map(|r| run_trials(&predict, test_set, config, master_seed, &format!("{name}-run{r}")))
        .collect::<Result<_>>()?;
    let summaries: Vec<OutcomeSummary> = logs
        .iter()
        .map(|log| summarize(log))
        .collect::<Result<_>>()?;
    let mut mean = [0.0; 4];
    for s in &summaries {
        for (m, p) in mean.iter_mut().zip(s.percentages()) {
            *m += p / runs as f64;
        }
    }
    let mut std = [0.0; 4];
    if runs > 1 {
        for s in &summaries {
            for ((v, p), m) in std.iter_mut().zip(s.percentages()).zip(mean) {
                *v += (p - m) * (p - m) / (runs as f64 - 1.0);
            }
        }
        for v in &mut std {
            *v = v.sqrt();
        }
    }
    Ok(ExperimentResult {
        config: *config,
        logs,
        summaries,
        mean,
        std,
    })
}

/// Column layout of the cross-run summary CSV (one row per validity
/// setting; percentages averaged over runs with sample standard
/// deviations).
pub const SUMMARY_CSV_HEADER: &str = "validity,runs,trials_per_run_mean,\
correct_major_mean,correct_major_std,correct_minor_mean,correct_minor_std,\
incorrect_softmax_mean,incorrect_softmax_std,incorrect_ceb_mean,incorrect_ceb_std";

pub fn summary_csv_row(label: &str, result: &ExperimentResult) -> String {
    let trials_mean = result
        .summaries
        .iter()
        .map(|s| s.trials as f64)
        .sum::<f64>()
        / result.summaries.len() as f64;
    format!(
        "{},{},{:.1},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}",
        label,
        result.summaries.len(),
        trials_mean,
        result.mean[0],
        result.std[0],
        result.mean[1],
        result.std[1],
        result.mean[2],
        result.std[2],
        result.mean[3],
        result.std[3],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::synthetic_dataset;

    fn fixed_config(validity: f64) -> NeuromodConfig {
        NeuromodConfig::with_validity(ValidityMode::Fixed(validity))
    }

    #[test]
    fn default_constants() {
        let c = NeuromodConfig::default();
        assert_eq!(
            (c.ach_correct, c.ach_incorrect, c.ne_correct, c.ne_incorrect),
            (1.04, 0.99, 0.97, 1.02)
        );
        assert_eq!((c.beta, c.max_ach, c.ne_reset), (4.0, 2.5, 0.25));
        assert_eq!(
            (c.num_switches, c.trial_interval, c.trial_range),
            (10, 400, 30)
        );
        assert!(c.ach_correct > 1.0 && 1.0 > c.ach_incorrect && c.ach_incorrect > 0.0);
        assert!(c.ne_incorrect > 1.0 && 1.0 > c.ne_correct && c.ne_correct > 0.0);
        assert!(VALIDITY_OPTIONS.iter().all(|v| *v > 0.5 && *v <= 1.0));
    }

    #[test]
    fn schedule_structure_and_minor_rule() {
        let config = fixed_config(0.85);
        let mut seen_first = [false; 4];
        for seed in 0..40 {
            let mut rng = substream(seed, "neuromod-test-schedule");
            let schedule = make_schedule(&config, &mut rng);
            assert_eq!(schedule.blocks.len(), 10);
            seen_first[schedule.blocks[0].major.index()] = true;
            for (i, b) in schedule.blocks.iter().enumerate() {
                assert_eq!(b.minor, b.major.contrast());
                assert!((370..=430).contains(&b.length));
                assert_eq!(b.validity, 0.85);
                if i > 0 {
                    assert_ne!(b.major, schedule.blocks[i - 1].major, "seed {seed} block {i}");
                }
            }
        }
        assert!(seen_first.iter().all(|s| *s));
    }

    #[test]
    fn schedule_lengths_cover_the_jitter_window() {
        let config = fixed_config(0.99);
        let mut rng = substream(7, "neuromod-test-lengths");
        let mut sum = 0.0;
        let mut lo = usize::MAX;
        let mut hi = 0;
        let n = 10_000;
        for _ in 0..n {
            let schedule = make_schedule(&config, &mut rng);
            let b = &schedule.blocks[0];
            sum += b.length as f64;
            lo = lo.min(b.length);
            hi = hi.max(b.length);
        }
        assert_eq!(lo, 370);
        assert_eq!(hi, 430);
        let mean = sum / n as f64;
        assert!((mean - 400.0).abs() < 1.0, "mean length {mean}");
    }

    #[test]
    fn random_mode_draws_validities_from_the_options() {
        let config = NeuromodConfig::with_validity(ValidityMode::RandomPerSwitch);
        let mut rng = substream(3, "neuromod-test-random");
        let mut seen = [0usize; 3];
        for _ in 0..200 {
            for b in make_schedule(&config, &mut rng).blocks {
                let idx = VALIDITY_OPTIONS
                    .iter()
                    .position(|v| *v == b.validity)
                    .expect("validity outside the option set");
                seen[idx] += 1;
            }
        }
        assert!(seen.iter().all(|c| *c > 500), "{seen:?}");
    }

    #[test]
    fn true_goal_follows_the_validity() {
        let mut rng = substream(11, "neuromod-test-true-goal");
        let block = GoalBlock {
            major: GoalId::Low,
            minor: GoalId::High,
            validity: 1.0,
            length: 400,
        };
        for _ in 0..1000 {
            assert_eq!(draw_true_goal(&block, &mut rng), GoalId::Low);
        }
        for (validity, expected_minor) in [(0.99, 0.01), (0.70, 0.30)] {
            let block = GoalBlock {
                major: GoalId::Even,
                minor: GoalId::Odd,
                validity,
                length: 400,
            };
            let n = 100_000;
            let minors = (0..n)
                .filter(|_| draw_true_goal(&block, &mut rng) == GoalId::Odd)
                .count();
            let freq = minors as f64 / n as f64;
            // 0.2 points of slack is more than 6 sigma at both settings.
            assert!(
                (freq - expected_minor).abs() < 0.002 + expected_minor * 0.05,
                "validity {validity}: minor frequency {freq}"
            );
        }
    }

    #[test]
    fn softmax_probabilities_match_closed_form() {
        let state = NeuromodState {
            ach: [2.0, 1.0, 1.0, 1.0],
            ne: 0.25,
        };
        let p = selection_probabilities(&state, 5.0);
        let expected = (10.0f64).exp() / ((10.0f64).exp() + 3.0 * (5.0f64).exp());
        assert!((p[0] - expected).abs() < 1e-12);
        assert!((expected - 0.9802).abs() < 1e-4, "closed form {expected}");
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_sampling_matches_probabilities() {
        let mut rng = substream(5, "neuromod-test-softmax");
        // Uniform state: each goal near 25%.
        let uniform = NeuromodState {
            ach: [1.0; 4],
            ne: 0.25,
        };
        let n = 40_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[softmax_select(&uniform, 5.0, &mut rng).index()] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            // 3 sigma of a 25% binomial over 40k draws is ~0.65 points.
            assert!((freq - 0.25).abs() < 0.0075, "uniform freq {freq}");
        }
        // beta = 0 ignores skewed levels entirely.
        let skewed = NeuromodState {
            ach: [2.5, 0.3, 1.0, 1.7],
            ne: 0.25,
        };
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[softmax_select(&skewed, 0.0, &mut rng).index()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.0075);
        }
        // Skewed state at beta = 5: empirical frequency of the favored
        // goal within 3 sigma of the closed form.
        let state = NeuromodState {
            ach: [2.0, 1.0, 1.0, 1.0],
            ne: 0.25,
        };
        let p0 = selection_probabilities(&state, 5.0)[0];
        let hits = (0..n)
            .filter(|_| softmax_select(&state, 5.0, &mut rng) == GoalId::Even)
            .count();
        let freq = hits as f64 / n as f64;
        let sigma = (p0 * (1.0 - p0) / n as f64).sqrt();
        assert!((freq - p0).abs() < 3.0 * sigma, "freq {freq} vs {p0}");
    }

    #[test]
    fn update_examples() {
        let config = NeuromodConfig::default();
        let mut state = NeuromodState::initial(&config);
        update_on_outcome(&mut state, &config, GoalId::Odd, true);
        assert!((state.ach[1] - 1.04).abs() < 1e-15);
        assert_eq!(state.ne, 0.25, "NE floor binds");
        assert_eq!(state.ach[0], 1.0);
        assert_eq!(state.ach[2], 1.0);
        assert_eq!(state.ach[3], 1.0);

        let mut state = NeuromodState::initial(&config);
        update_on_outcome(&mut state, &config, GoalId::Odd, false);
        assert!((state.ach[1] - 0.99).abs() < 1e-15);
        assert!((state.ne - 0.255).abs() < 1e-15);

        let mut state = NeuromodState {
            ach: [2.5, 1.0, 1.0, 1.0],
            ne: 0.5,
        };
        update_on_outcome(&mut state, &config, GoalId::Even, true);
        assert_eq!(state.ach[0], 2.5, "cap binds");
        assert!((state.ne - 0.485).abs() < 1e-15);
    }

    #[test]
    fn reset_threshold_arithmetic() {
        let config = NeuromodConfig::default();
        // At ach = ones the threshold is 1/1.5 = 2/3.
        let mut state = NeuromodState::initial(&config);
        assert!(!check_reset(&mut state, &config));
        assert_eq!(state, NeuromodState::initial(&config));
        // Exactly at the threshold: strict comparison, no reset.
        let mut state = NeuromodState {
            ach: [1.0; 4],
            ne: 2.0 / 3.0,
        };
        assert!(!check_reset(&mut state, &config));
        // Above it: reset to the initial state.
        let mut state = NeuromodState {
            ach: [1.0; 4],
            ne: 0.70,
        };
        assert!(check_reset(&mut state, &config));
        assert_eq!(state, NeuromodState::initial(&config));
    }

    #[test]
    fn fifty_consecutive_failures_cross_the_ones_threshold() {
        // With ACh pinned at ones the threshold stays 2/3 and NE grows by
        // 1.02 per failure from 0.25; the first crossing is at k = 50.
        let mut ne = 0.25;
        let mut first_crossing = 0;
        for k in 1..200 {
            ne *= 1.02;
            if ne > 2.0 / 3.0 {
                first_crossing = k;
                break;
            }
        }
        assert_eq!(first_crossing, 50);

        // The live process (ACh decaying on failures, threshold drifting
        // down with it) resets in the same neighborhood.
        let config = NeuromodConfig::default();
        let mut state = NeuromodState::initial(&config);
        let mut fired_at = 0;
        for k in 1..200 {
            update_on_outcome(&mut state, &config, GoalId::from_index(k % 4).unwrap(), false);
            if check_reset(&mut state, &config) {
                fired_at = k;
                break;
            }
        }
        assert!(
            (40..=60).contains(&fired_at),
            "live process reset at {fired_at}"
        );
    }

    #[test]
    fn state_bounds_hold_over_a_million_random_updates() {
        let config = NeuromodConfig::default();
        let mut rng = substream(13, "neuromod-test-bounds");
        let mut state = NeuromodState::initial(&config);
        for _ in 0..1_000_000 {
            let guess = GoalId::from_index(rng.gen_range(0..4)).unwrap();
            let correct = rng.gen::<f64>() < 0.4;
            let before = state.ach[guess.index()];
            update_on_outcome(&mut state, &config, guess, correct);
            let after = state.ach[guess.index()];
            if correct {
                assert!(after >= before, "correct outcome decreased ACh");
            } else {
                assert!(after <= before, "incorrect outcome increased ACh");
            }
            check_reset(&mut state, &config);
            assert!(state.ach.iter().all(|&a| a > 0.0 && a <= config.max_ach));
            assert!(state.ne >= config.ne_reset);
        }
    }

    /// A predictor that always announces the digit the guessed goal points
    /// at; when the guess matches the true goal it is always right.
    fn oracle_predictor(pair: &NoisyPair, goal: GoalId) -> Result<u8> {
        goal_digit_of(pair, goal).map(|(digit, _)| digit)
    }

    #[test]
    fn oracle_predictor_with_full_validity_converges_to_perfection() {
        let set = synthetic_dataset(2);
        let mut config = fixed_config(1.0);
        config.beta = 50.0;
        let log = run_trials(oracle_predictor, &set, &config, 41, "oracle").unwrap();
        let schedule_len: usize = log.len();
        assert!(schedule_len >= 3700);
        // Within each block, trials past index 200 are all correct: the
        // sharp softmax has locked onto the major goal by then and nothing
        // else is stochastic at validity 1.
        let mut by_block: Vec<Vec<&TrialRecord>> = vec![Vec::new(); 10];
        for r in &log {
            by_block[r.block].push(r);
        }
        for (b, trials) in by_block.iter().enumerate() {
            for r in trials.iter().skip(200) {
                assert_eq!(
                    r.outcome,
                    Outcome::Correct,
                    "block {b} trial {} not correct",
                    r.trial
                );
            }
            // Every post-switch block shows a reset in its first 100
            // trials: the stale locked-in goal fails repeatedly until NE
            // crosses the threshold.
            if b > 0 {
                assert!(
                    trials.iter().take(100).any(|r| r.reset),
                    "no reset in the first 100 trials of block {b}"
                );
            }
        }
    }

    #[test]
    fn summarize_partitions_exactly() {
        let set = synthetic_dataset(1);
        let config = fixed_config(0.85);
        let log = run_trials(oracle_predictor, &set, &config, 17, "partition").unwrap();
        let s = summarize(&log).unwrap();
        assert_eq!(
            s.correct_major + s.correct_minor + s.incorrect_softmax + s.incorrect_ceb,
            s.trials
        );
        let total =
            s.pct_correct_major + s.pct_correct_minor + s.pct_incorrect_softmax + s.pct_incorrect_ceb;
        assert_eq!(total, 100.0, "percentages must sum to exactly 100");
        assert!(matches!(summarize(&[]), Err(Error::Precondition(_))));
    }

    #[test]
    fn summarize_partition_is_exact_for_arbitrary_counts() {
        use rand::SeedableRng;
        // One record per category; a log is built by repetition, so the
        // percentages depend only on the four counts. Sweep count tuples
        // whose naive complement (sequential subtraction) would drift off
        // 100.0 for roughly one tuple in eight.
        let mut protos = vec![
            TrialRecord {
                trial: 0,
                block: 0,
                true_goal: GoalId::Even,
                major_goal: GoalId::Even,
                guess_goal: GoalId::Even,
                goal_digit: 4,
                pred_digit: 4,
                outcome: Outcome::Correct,
                ach: [1.0; 4],
                ne: 0.25,
                reset: false,
            };
            4
        ];
        protos[1].true_goal = GoalId::Odd;
        protos[1].guess_goal = GoalId::Odd;
        protos[2].outcome = Outcome::WrongGoal;
        protos[3].outcome = Outcome::WrongDigit;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for case in 0..2000 {
            let n = rng.gen_range(1..=4400usize);
            let mut cuts = [0usize; 3].map(|_| rng.gen_range(0..=n));
            cuts.sort_unstable();
            let counts = [cuts[0], cuts[1] - cuts[0], cuts[2] - cuts[1], n - cuts[2]];
            let mut log = Vec::with_capacity(n);
            for (proto, &c) in protos.iter().zip(&counts) {
                log.extend(std::iter::repeat_n(proto.clone(), c));
            }
            let s = summarize(&log).unwrap();
            let total = s.pct_correct_major
                + s.pct_correct_minor
                + s.pct_incorrect_softmax
                + s.pct_incorrect_ceb;
            assert_eq!(total, 100.0, "case {case}: counts {counts:?} sum to {total}");
        }
    }

    #[test]
    fn summarize_counts_known_log() {
        let base = TrialRecord {
            trial: 0,
            block: 0,
            true_goal: GoalId::Even,
            major_goal: GoalId::Even,
            guess_goal: GoalId::Even,
            goal_digit: 4,
            pred_digit: 4,
            outcome: Outcome::Correct,
            ach: [1.0; 4],
            ne: 0.25,
            reset: false,
        };
        let mut log = vec![base.clone(); 5];
        log[1].true_goal = GoalId::Odd; // correct on the minor goal
        log[1].guess_goal = GoalId::Odd;
        log[2].outcome = Outcome::WrongGoal;
        log[3].outcome = Outcome::WrongDigit;
        let s = summarize(&log).unwrap();
        assert_eq!(
            (s.correct_major, s.correct_minor, s.incorrect_softmax, s.incorrect_ceb),
            (2, 1, 1, 1)
        );
        assert_eq!(s.pct_correct_major, 40.0);
        assert_eq!(s.pct_correct_minor, 20.0);
        assert_eq!(s.pct_incorrect_softmax, 20.0);
        assert_eq!(s.pct_incorrect_ceb, 20.0);
    }

    #[test]
    fn runs_are_reproducible_and_streams_independent() {
        let set = synthetic_dataset(1);
        let config = fixed_config(0.85);
        let a = run_trials(oracle_predictor, &set, &config, 23, "repro").unwrap();
        let b = run_trials(oracle_predictor, &set, &config, 23, "repro").unwrap();
        assert_eq!(a, b);
        let c = run_trials(oracle_predictor, &set, &config, 23, "other").unwrap();
        assert_ne!(a, c);
        // A sharper softmax must not change the schedule (separate
        // substreams): block majors and lengths agree across betas.
        let mut sharp = config;
        sharp.beta = 50.0;
        let d = run_trials(oracle_predictor, &set, &sharp, 23, "repro").unwrap();
        assert_eq!(
            a.iter().map(|r| (r.block, r.major_goal)).collect::<Vec<_>>(),
            d.iter().map(|r| (r.block, r.major_goal)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn experiment_aggregates_runs() {
        let set = synthetic_dataset(1);
        let mut config = fixed_config(0.99);
        config.num_switches = 3;
        let result =
            run_experiment(oracle_predictor, &set, &config, 29, "agg", 4).unwrap();
        assert_eq!(result.logs.len(), 4);
        assert_eq!(result.summaries.len(), 4);
        for (log, summary) in result.logs.iter().zip(&result.summaries) {
            assert_eq!(summarize(log).unwrap(), *summary);
        }
        for cell in 0..4 {
            let mean = result
                .summaries
                .iter()
                .map(|s| s.percentages()[cell])
                .sum::<f64>()
                / 4.0;
            assert!((result.mean[cell] - mean).abs() < 1e-9);
            assert!(result.std[cell] >= 0.0);
        }
        // Rerunning reproduces the aggregate exactly.
        let again = run_experiment(oracle_predictor, &set, &config, 29, "agg", 4).unwrap();
        assert_eq!(result.mean, again.mean);
        assert_eq!(result.logs, again.logs);
        assert!(run_experiment(oracle_predictor, &set, &config, 29, "agg", 0).is_err());
    }

    #[test]
    fn csv_rows_match_the_documented_layout() {
        assert_eq!(TRIAL_CSV_HEADER.split(',').count(), 14);
        let record = TrialRecord {
            trial: 7,
            block: 1,
            true_goal: GoalId::Low,
            major_goal: GoalId::Low,
            guess_goal: GoalId::High,
            goal_digit: 3,
            pred_digit: 8,
            outcome: Outcome::WrongGoal,
            ach: [1.0, 0.99, 1.0402, 1.0],
            ne: 0.2551,
            reset: false,
        };
        let row = trial_csv_row(&record);
        assert_eq!(row.split(',').count(), 14);
        assert!(row.starts_with("7,1,low,low,high,3,8,wrong_goal,"));
        assert!(row.ends_with(",0"));
        assert_eq!(SUMMARY_CSV_HEADER.split(',').count(), 11);
    }
}
