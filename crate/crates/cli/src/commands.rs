//! The five subcommands: training, evaluation, scheduled goal-inference
//! experiments, saliency export, and the property suites.

use std::fs;
use std::path::{Path, PathBuf};

use cebnm::attention::{
    apply_mask, ceb_attention, evaluate_goal_task, left_mass_fraction, pair_grid,
    predict_with_goal,
};
use cebnm::data::{add_noise, Dataset, GoalId, NoisyPair};
use cebnm::net::{forward, train, Arch, Checkpoint, DenseNet, EvalRecord, TrainConfig};
use cebnm::neuromod::{
    run_experiment, summary_csv_row, trial_csv_row, NeuromodConfig, ValidityMode,
    SUMMARY_CSV_HEADER, TRIAL_CSV_HEADER,
};
use cebnm::rng::substream;
use cebnm::selftest;
use rand::Rng;

use crate::settings::{
    Cli, CliError, Command, EvalArgs, NeuromodArgs, SaliencyArgs, SelftestArgs, Settings,
    TrainArgs, ValiditySelection,
};

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Neuromod(args) => cmd_neuromod(args),
        Command::Saliency(args) => cmd_saliency(args),
        Command::Selftest(args) => cmd_selftest(args),
    }
}

/// Write a file atomically: the content lands under a temporary name in
/// the same directory and is renamed into place, so readers never observe
/// a half-written file.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn prepare_out_dir(settings: &Settings, command: &str) -> Result<(), CliError> {
    fs::create_dir_all(&settings.out_dir)?;
    write_atomic(
        &settings.out_dir.join("effective_config.txt"),
        settings.render(command).as_bytes(),
    )
}

const MNIST_TRAIN: (&str, &str) = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte");
const MNIST_TEST: (&str, &str) = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte");

fn find_mnist_file(dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    let plain = dir.join(name);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(CliError::Data(cebnm::Error::Precondition(format!(
        "missing MNIST file {} (or {}.gz) under {}; expected the canonical files \
         train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte, \
         t10k-labels-idx1-ubyte, each optionally gzipped",
        name,
        name,
        dir.display()
    ))))
}

fn load_split(dir: &Path, names: (&str, &str)) -> Result<Dataset, CliError> {
    let images = find_mnist_file(dir, names.0)?;
    let labels = find_mnist_file(dir, names.1)?;
    Ok(Dataset::load(&images, &labels)?)
}

fn load_checkpoint(settings: &Settings) -> Result<Checkpoint, CliError> {
    Ok(Checkpoint::load(&settings.checkpoint_path())?)
}

fn neuromod_config(settings: &Settings, mode: ValidityMode) -> NeuromodConfig {
    NeuromodConfig {
        beta: settings.beta,
        max_ach: settings.max_ach,
        ne_reset: settings.ne_reset,
        ach_correct: settings.ach_correct,
        ach_incorrect: settings.ach_incorrect,
        ne_correct: settings.ne_correct,
        ne_incorrect: settings.ne_incorrect,
        num_switches: settings.switches,
        trial_interval: settings.trial_interval,
        trial_range: settings.trial_range,
        validity_mode: mode,
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut settings = Settings::resolve(&args.common)?;
    if let Some(steps) = args.steps {
        settings.steps = steps;
    }
    if let Some(batch) = args.batch {
        settings.batch = batch;
    }
    if let Some(path) = &args.checkpoint {
        settings.checkpoint = Some(path.clone());
    }
    prepare_out_dir(&settings, "train")?;

    let train_set = load_split(&settings.data_dir, MNIST_TRAIN)?;
    let test_set = load_split(&settings.data_dir, MNIST_TEST)?;
    println!(
        "loaded {} training and {} test images from {}",
        train_set.len(),
        test_set.len(),
        settings.data_dir.display()
    );

    let config = TrainConfig {
        steps: settings.steps,
        batch_size: settings.batch,
        eval_interval: settings.eval_interval,
        eval_pairs: settings.eval_pairs,
        learning_rate: settings.learning_rate,
    };
    let mut net = DenseNet::init(Arch::default(), &mut substream(settings.seed, "init"));
    let records = train(&mut net, &train_set, &test_set, &config, settings.seed, |r| {
        println!(
            "step {:>5}/{}  digit L {:.3} R {:.3}  parity {:.3}  magnitude {:.3}  loss {:.4}",
            r.step,
            config.steps,
            r.digit_acc_left,
            r.digit_acc_right,
            r.parity_acc,
            r.magnitude_acc,
            r.loss
        );
    })?;

    let mut csv = String::from("# cebnm eval-trace v1\n");
    csv.push_str(EvalRecord::CSV_HEADER);
    csv.push('\n');
    for r in &records {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_atomic(&settings.out_dir.join("eval_trace.csv"), csv.as_bytes())?;

    let checkpoint = Checkpoint {
        net,
        step_count: settings.steps as u64,
        seed: settings.seed,
    };
    let path = settings.checkpoint_path();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    checkpoint.save(&tmp)?;
    fs::rename(&tmp, &path)?;

    let last = records.last().expect("training always evaluates at least once");
    println!(
        "final plain accuracies: digit L {:.4} R {:.4}, parity {:.4}, magnitude {:.4}",
        last.digit_acc_left, last.digit_acc_right, last.parity_acc, last.magnitude_acc
    );
    println!("checkpoint written to {}", path.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let mut settings = Settings::resolve(&args.common)?;
    if let Some(pairs) = args.pairs {
        settings.pairs = pairs;
    }
    if let Some(path) = &args.checkpoint {
        settings.checkpoint = Some(path.clone());
    }
    prepare_out_dir(&settings, "eval")?;

    let checkpoint = load_checkpoint(&settings)?;
    let test_set = load_split(&settings.data_dir, MNIST_TEST)?;
    let mut rng = substream(settings.seed, "eval-pairs");
    let pairs: Result<Vec<NoisyPair>, _> = (0..settings.pairs)
        .map(|_| cebnm::data::make_test_pair(&test_set, &mut rng))
        .collect();
    let pairs = pairs?;

    let mut csv = String::from("# cebnm table1 v1\n");
    csv.push_str("goal,pairs,digit_accuracy_pct,goal_accuracy_pct\n");
    println!("goal-driven prediction over {} test pairs:", pairs.len());
    for goal in GoalId::ALL {
        let result = evaluate_goal_task(&checkpoint.net, &pairs, goal)?;
        let digit_pct = 100.0 * result.digit_accuracy;
        let goal_pct = 100.0 * result.goal_accuracy;
        println!("  {:<5} digit {digit_pct:6.2}%  goal {goal_pct:6.2}%", goal.name());
        csv.push_str(&format!(
            "{},{},{digit_pct:.3},{goal_pct:.3}\n",
            goal.name(),
            pairs.len()
        ));
    }
    write_atomic(&settings.out_dir.join("table1.csv"), csv.as_bytes())?;
    Ok(())
}

fn cmd_neuromod(args: NeuromodArgs) -> Result<(), CliError> {
    let mut settings = Settings::resolve(&args.common)?;
    if let Some(runs) = args.runs {
        settings.runs = runs;
    }
    if let Some(switches) = args.switches {
        settings.switches = switches;
    }
    if let Some(validity) = &args.validity {
        settings.set_validity(validity)?;
    }
    if let Some(beta) = args.beta {
        settings.beta = beta;
    }
    if let Some(max_ach) = args.max_ach {
        settings.max_ach = max_ach;
    }
    if let Some(path) = &args.checkpoint {
        settings.checkpoint = Some(path.clone());
    }
    prepare_out_dir(&settings, "neuromod")?;

    let checkpoint = load_checkpoint(&settings)?;
    let net = &checkpoint.net;
    let test_set = load_split(&settings.data_dir, MNIST_TEST)?;

    let selected: Vec<(String, ValidityMode)> = match settings.validity {
        ValiditySelection::All => vec![
            ("0.99".into(), ValidityMode::Fixed(0.99)),
            ("0.85".into(), ValidityMode::Fixed(0.85)),
            ("0.70".into(), ValidityMode::Fixed(0.70)),
            ("random".into(), ValidityMode::RandomPerSwitch),
        ],
        ValiditySelection::Random => vec![("random".into(), ValidityMode::RandomPerSwitch)],
        ValiditySelection::Fixed(v) => vec![(format!("{v}"), ValidityMode::Fixed(v))],
    };

    let predict =
        |pair: &NoisyPair, goal: GoalId| predict_with_goal(net, pair, goal).map(|p| p.digit);

    let mut summary = String::from("# cebnm table2 v1\n");
    summary.push_str(SUMMARY_CSV_HEADER);
    summary.push('\n');
    for (label, mode) in &selected {
        let config = neuromod_config(&settings, *mode);
        let result = run_experiment(
            predict,
            &test_set,
            &config,
            settings.seed,
            label,
            settings.runs,
        )?;
        for (r, log) in result.logs.iter().enumerate() {
            let mut csv = String::from("# cebnm neuromod-trace v1\n");
            csv.push_str(TRIAL_CSV_HEADER);
            csv.push('\n');
            for record in log {
                csv.push_str(&trial_csv_row(record));
                csv.push('\n');
            }
            write_atomic(
                &settings.out_dir.join(format!("trace_{label}_run{r}.csv")),
                csv.as_bytes(),
            )?;
        }
        summary.push_str(&summary_csv_row(label, &result));
        summary.push('\n');
        println!(
            "validity {label}: correct-major {:.1}±{:.1}  correct-minor {:.1}±{:.1}  \
             incorrect-softmax {:.1}±{:.1}  incorrect-ceb {:.1}±{:.1}  ({} runs)",
            result.mean[0],
            result.std[0],
            result.mean[1],
            result.std[1],
            result.mean[2],
            result.std[2],
            result.mean[3],
            result.std[3],
            settings.runs
        );
    }
    write_atomic(&settings.out_dir.join("table2.csv"), summary.as_bytes())?;
    Ok(())
}

fn parse_digits(text: &str) -> Result<(u8, u8), CliError> {
    let bad = || {
        CliError::Usage(format!(
            "invalid --digits '{text}': expected two digits like 4,5"
        ))
    };
    let (l, r) = text.split_once(',').ok_or_else(bad)?;
    let left: u8 = l.trim().parse().map_err(|_| bad())?;
    let right: u8 = r.trim().parse().map_err(|_| bad())?;
    if left > 9 || right > 9 {
        return Err(bad());
    }
    Ok((left, right))
}

fn parse_goals(text: &str) -> Result<Vec<GoalId>, CliError> {
    if text == "all" {
        return Ok(GoalId::ALL.to_vec());
    }
    text.parse::<GoalId>().map(|g| vec![g]).map_err(|_| {
        CliError::Usage(format!(
            "invalid --goal '{text}': expected even, odd, low, high, or all"
        ))
    })
}

/// Build a noisy pair with prescribed digit labels by sampling one test
/// image of each label.
fn pair_with_digits(
    set: &Dataset,
    left: u8,
    right: u8,
    rng: &mut impl Rng,
) -> Result<NoisyPair, CliError> {
    let mut pick = |label: u8| -> Result<usize, CliError> {
        let candidates: Vec<usize> = (0..set.len())
            .filter(|&i| set.image(i).label == label)
            .collect();
        if candidates.is_empty() {
            return Err(CliError::Data(cebnm::Error::Precondition(format!(
                "test set has no image of digit {label}"
            ))));
        }
        Ok(candidates[rng.gen_range(0..candidates.len())])
    };
    let li = pick(left)?;
    let ri = pick(right)?;
    let mut input = add_noise(set.image(li), rng);
    input.extend(add_noise(set.image(ri), rng));
    Ok(NoisyPair {
        input,
        left_label: left,
        right_label: right,
    })
}

fn grid_csv(values: &[f64], metadata: &str) -> Result<String, CliError> {
    let grid = pair_grid(values)?;
    let mut out = String::from("# cebnm grid v1\n");
    out.push_str(metadata);
    out.push('\n');
    for row in grid {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn cmd_saliency(args: SaliencyArgs) -> Result<(), CliError> {
    let mut settings = Settings::resolve(&args.common)?;
    if let Some(path) = &args.checkpoint {
        settings.checkpoint = Some(path.clone());
    }
    let (left, right) = parse_digits(&args.digits)?;
    let goals = parse_goals(&args.goal)?;
    prepare_out_dir(&settings, "saliency")?;

    let checkpoint = load_checkpoint(&settings)?;
    let net = &checkpoint.net;
    let test_set = load_split(&settings.data_dir, MNIST_TEST)?;
    let mut rng = substream(settings.seed, "saliency");
    let pair = pair_with_digits(&test_set, left, right, &mut rng)?;

    let input_csv = grid_csv(
        &pair.input,
        &format!("# digits={left},{right} kind=input"),
    )?;
    write_atomic(&settings.out_dir.join("saliency_input.csv"), input_csv.as_bytes())?;

    for goal in goals {
        let trace = forward(net, &pair.input)?;
        let map = ceb_attention(net, &trace, goal)?;
        let masked = apply_mask(&pair, &map)?;
        let left_mass = left_mass_fraction(&map);
        let meta = format!(
            "# digits={left},{right} goal={} degenerate={} left_mass={left_mass:.6}",
            goal.name(),
            map.degenerate
        );
        write_atomic(
            &settings
                .out_dir
                .join(format!("saliency_attention_{}.csv", goal.name())),
            grid_csv(&map.probs, &format!("{meta} kind=attention"))?.as_bytes(),
        )?;
        write_atomic(
            &settings
                .out_dir
                .join(format!("saliency_masked_{}.csv", goal.name())),
            grid_csv(&masked, &format!("{meta} kind=masked"))?.as_bytes(),
        )?;
        println!(
            "goal {:<5} degenerate {}  left mass {left_mass:.3}",
            goal.name(),
            map.degenerate
        );
    }
    println!("grids written to {}", settings.out_dir.display());
    Ok(())
}

fn cmd_selftest(args: SelftestArgs) -> Result<(), CliError> {
    let _ = Settings::resolve(&args.common)?;
    let report = selftest::run_all(|check| {
        println!(
            "[{}] {}: {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.details
        );
    })?;
    if report.all_passed() {
        println!("all self-test checks passed");
        Ok(())
    } else {
        Err(CliError::SelfTestFailed)
    }
}
