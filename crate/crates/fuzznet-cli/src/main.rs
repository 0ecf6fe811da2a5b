//! Command line driver: training, evaluation, and the verification tools
//! (finite-difference gradient checks and fused-vs-reference oracle runs).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{RngExt, SeedableRng};

use fuzznet_core::data::{
    load_cifar, load_mnist, normalize_samplewise, split_train_val, AugmentPolicy, CifarVariant,
    LabeledDataset,
};
use fuzznet_core::fuzzy::{
    fio_forward, fpo_forward, init_params, FuzzyLayerParams, FuzzyLayerVars, LayerKind,
};
use fuzznet_core::net::{
    parse_network_spec, serialize_network_spec, Layer, LayerVars, Network, NetworkSpec, NetworkVars,
};
use fuzznet_core::scalar::Scalar;
use fuzznet_core::tensor::{grad_check, Tape, Tensor, Var};
use fuzznet_core::train::{checkpoint_load, evaluate, fit, ScheduleSpec, TrainState};
use fuzznet_core::tsk::{fio_reference, fpo_reference, NaiveFuzzyLayerSpec};
use fuzznet_core::{Error, Result, SeededRng};

/// Element type for training and evaluation. Single precision doubles the
/// effective SIMD width and halves memory traffic on this memory-bound
/// workload; the verification commands (gradcheck, oracle-check) stay in
/// f64 where the tolerances demand it.
type TF = f32;

const GRAD_TOL: f64 = 1e-4;
const ORACLE_TOL: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;
const COORDS_PER_GROUP: usize = 64;

#[derive(Parser)]
#[command(
    name = "fuzznet",
    version,
    about = "Deep neuro-fuzzy networks: train, evaluate, verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network, writing metrics.csv and last.ckpt each epoch.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's test split.
    Eval(EvalArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Compare the fused layers against the loop-based reference.
    OracleCheck(OracleArgs),
    /// Print parameter statistics and rule-filter summaries for a checkpoint.
    Inspect(InspectArgs),
}

#[derive(ValueEnum, Clone, Copy)]
enum DatasetArg {
    Mnist,
    Cifar10,
    Cifar100,
}

impl DatasetArg {
    fn name(self) -> &'static str {
        match self {
            DatasetArg::Mnist => "mnist",
            DatasetArg::Cifar10 => "cifar10",
            DatasetArg::Cifar100 => "cifar100",
        }
    }

    fn schedule(self) -> ScheduleSpec {
        match self {
            DatasetArg::Mnist => ScheduleSpec::mnist(),
            DatasetArg::Cifar10 | DatasetArg::Cifar100 => ScheduleSpec::cifar(),
        }
    }

    fn augment(self) -> AugmentPolicy {
        match self {
            DatasetArg::Mnist => AugmentPolicy::mnist(),
            DatasetArg::Cifar10 | DatasetArg::Cifar100 => AugmentPolicy::cifar(),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Network spec file; omitted when resuming (the checkpoint carries it).
    #[arg(long, required_unless_present = "resume", conflicts_with = "resume")]
    spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    dataset: DatasetArg,
    /// Directory holding the dataset files.
    #[arg(long)]
    data_root: PathBuf,
    /// Train until this many epochs are done; resuming continues toward it.
    #[arg(long, default_value_t = 10)]
    epochs: u64,
    #[arg(long, default_value_t = 512, conflicts_with = "resume")]
    batch_size: usize,
    /// Seed for parameter init, shuffling, augmentation, and dropout.
    #[arg(long, default_value_t = 0, conflicts_with = "resume")]
    seed: u64,
    /// Output directory for metrics.csv and last.ckpt [default: runs/DATASET].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to resume from.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Keep only the first N training records (applied before the split).
    #[arg(long)]
    train_limit: Option<usize>,
    /// Records split off the end of the training set for validation.
    #[arg(long, default_value_t = 10000)]
    val_count: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    resume: PathBuf,
    #[arg(long, value_enum)]
    dataset: DatasetArg,
    /// Directory holding the dataset files.
    #[arg(long)]
    data_root: PathBuf,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    /// Evaluate the final parameters instead of the best-validation snapshot.
    #[arg(long, default_value_t = false)]
    last: bool,
    /// Directory for eval.csv [default: the checkpoint's directory].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Network spec file to check.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct OracleArgs {
    /// Random layer instances per operation kind.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint to read.
    #[arg(long)]
    resume: PathBuf,
}

/// glibc serves allocations past the mmap threshold with fresh mappings and
/// returns them on free, so every batch re-faults its tensor buffers; keeping
/// large blocks on the heap removes that churn.
fn tune_allocator() {
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}

fn main() -> ExitCode {
    tune_allocator();
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::OracleCheck(args) => cmd_oracle_check(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match run {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn cifar_file(root: &Path, subdir: &str, name: &str) -> PathBuf {
    // The upstream archives unpack into a subdirectory; accept either layout.
    let direct = root.join(name);
    if direct.exists() {
        return direct;
    }
    let nested = root.join(subdir).join(name);
    if nested.exists() {
        return nested;
    }
    direct
}

fn load_train<F: Scalar>(dataset: DatasetArg, root: &Path) -> Result<LabeledDataset<F>> {
    match dataset {
        DatasetArg::Mnist => load_mnist(
            root.join("train-images-idx3-ubyte"),
            root.join("train-labels-idx1-ubyte"),
        ),
        DatasetArg::Cifar10 => {
            let paths: Vec<PathBuf> = (1..=5)
                .map(|i| cifar_file(root, "cifar-10-batches-bin", &format!("data_batch_{i}.bin")))
                .collect();
            Ok(normalize_samplewise(load_cifar(
                &paths,
                CifarVariant::Cifar10,
            )?))
        }
        DatasetArg::Cifar100 => Ok(normalize_samplewise(load_cifar(
            &[cifar_file(root, "cifar-100-binary", "train.bin")],
            CifarVariant::Cifar100,
        )?)),
    }
}

fn load_test<F: Scalar>(dataset: DatasetArg, root: &Path) -> Result<LabeledDataset<F>> {
    match dataset {
        DatasetArg::Mnist => load_mnist(
            root.join("t10k-images-idx3-ubyte"),
            root.join("t10k-labels-idx1-ubyte"),
        ),
        DatasetArg::Cifar10 => Ok(normalize_samplewise(load_cifar(
            &[cifar_file(root, "cifar-10-batches-bin", "test_batch.bin")],
            CifarVariant::Cifar10,
        )?)),
        DatasetArg::Cifar100 => Ok(normalize_samplewise(load_cifar(
            &[cifar_file(root, "cifar-100-binary", "test.bin")],
            CifarVariant::Cifar100,
        )?)),
    }
}

fn check_spec_matches<F: Scalar>(spec: &NetworkSpec, ds: &LabeledDataset<F>) -> Result<()> {
    let (c, h, w) = ds.image_dims();
    let (sc, sh, sw) = spec.input;
    if (sc, sh, sw) != (c, h, w) {
        return Err(Error::config(format!(
            "network expects {sc}x{sh}x{sw} input but the dataset provides {c}x{h}x{w}"
        )));
    }
    if spec.classes != ds.num_classes {
        return Err(Error::config(format!(
            "network has {} classes but the dataset has {}",
            spec.classes, ds.num_classes
        )));
    }
    Ok(())
}

fn print_trace<F: Scalar>(net: &Network<F>) {
    let (c, h, w) = net.spec.input;
    println!("     input  {c}x{h}x{w}");
    for e in net.shape_trace() {
        let dims = if e.label == "fl" {
            format!("{}", e.channels)
        } else {
            format!("{}x{}x{}", e.channels, e.height, e.width)
        };
        println!("  {:>2} {:<5} {dims}", e.index, e.label);
    }
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let mut full = load_train::<TF>(args.dataset, &args.data_root)?;
    if let Some(limit) = args.train_limit {
        full = full.truncated(limit);
    }
    let (train, val) = split_train_val(full, args.val_count)?;

    let mut state = match &args.resume {
        Some(path) => {
            let state = checkpoint_load::<TF>(path)?;
            println!(
                "resumed {} at epoch {} (batch size {}, seed {})",
                path.display(),
                state.epochs_done,
                state.batch_size,
                state.seed
            );
            state
        }
        None => {
            let path = args.spec.as_ref().expect("clap requires --spec without --resume");
            let spec = parse_network_spec(&fs::read_to_string(path)?)?;
            let network = Network::<TF>::build(&spec, args.seed)?;
            println!(
                "built {} for {} (seed {}, batch size {})",
                path.display(),
                args.dataset.name(),
                args.seed,
                args.batch_size
            );
            TrainState::new(network, args.dataset.schedule(), args.batch_size, args.seed)
        }
    };
    check_spec_matches(&state.network.spec, &train)?;

    println!(
        "{} train / {} val images, {} parameters",
        train.len(),
        val.len(),
        state.network.param_count()
    );
    print_trace(&state.network);

    let out_dir = args
        .out
        .unwrap_or_else(|| PathBuf::from("runs").join(args.dataset.name()));
    if state.epochs_done >= args.epochs {
        println!(
            "checkpoint already covers epoch {} (target {}); nothing to do",
            state.epochs_done, args.epochs
        );
        return Ok(ExitCode::SUCCESS);
    }

    let policy = args.dataset.augment();
    let started = Instant::now();
    for target in state.epochs_done + 1..=args.epochs {
        fit(&mut state, &train, &val, target, Some(&policy), Some(&out_dir))?;
        let row = state.history.last().expect("fit appends one row per epoch");
        println!(
            "epoch {:>3}  lr {:.4e}  train loss {:.4}  val loss {:.4}  val error {:.4}",
            row.epoch, row.lr, row.train_loss, row.val_loss, row.val_error
        );
    }
    println!(
        "finished {} epochs in {:.1}s; best val error {:.4}; artifacts in {}",
        state.epochs_done,
        started.elapsed().as_secs_f64(),
        state.best_val_error,
        out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let mut state = checkpoint_load::<TF>(&args.resume)?;
    let test = load_test::<TF>(args.dataset, &args.data_root)?;
    check_spec_matches(&state.network.spec, &test)?;

    let weights = if !args.last && state.best_params.is_some() {
        let best = state.best_params.take().expect("checked above");
        let names: Vec<String> = state.network.params().into_iter().map(|(n, _)| n).collect();
        let named: Vec<(String, Tensor<TF>)> = names.into_iter().zip(best).collect();
        state.network.set_params(&named)?;
        "best"
    } else {
        "last"
    };

    let (loss, error) = evaluate(&state.network, &test, args.batch_size)?;
    let accuracy = 1.0 - error;
    println!(
        "{} test ({} weights, epoch {}): loss {:.6}, error {:.6}, accuracy {:.6}",
        args.dataset.name(),
        weights,
        state.epochs_done,
        loss,
        error,
        accuracy
    );

    let out_dir = args.out.unwrap_or_else(|| {
        args.resume
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    fs::create_dir_all(&out_dir)?;
    let csv = out_dir.join("eval.csv");
    fs::write(
        &csv,
        format!(
            "dataset,split,weights,epochs,loss,error,accuracy\n{},test,{},{},{},{},{}\n",
            args.dataset.name(),
            weights,
            state.epochs_done,
            loss,
            error,
            accuracy
        ),
    )?;
    println!("wrote {}", csv.display());
    Ok(ExitCode::SUCCESS)
}

/// Reassembles per-layer var bundles from the flat leaf list `grad_check`
/// hands its build closure; the order must mirror `Network::params`.
fn pack_vars(network: &Network<f64>, vars: &[Var]) -> NetworkVars {
    let mut it = vars.iter().copied();
    let mut next = move || it.next().expect("one leaf per parameter");
    let layers = network
        .layers
        .iter()
        .map(|layer| match layer {
            Layer::Fuzzy { params, .. } => LayerVars::Fuzzy(FuzzyLayerVars {
                rule_filters: next(),
                mix_filters: next(),
                mix_bias: next(),
                out_filters: next(),
                out_bias: next(),
                kernel: params.kernel,
                stride: params.stride,
            }),
            Layer::Dense { .. } => LayerVars::Dense {
                weights: next(),
                bias: next(),
            },
        })
        .collect();
    NetworkVars { layers }
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let spec = parse_network_spec(&fs::read_to_string(&args.spec)?)?;
    let mut network = Network::<f64>::build(&spec, args.seed)?;
    let mut rng = SeededRng::seed_from_u64(args.seed);

    // Zero-initialized biases park every Leaky-ReLU argument near its kink,
    // where central differences straddle the slope change; nudging the biases
    // puts the probe in generic position.
    for (name, tensor) in network.params_mut() {
        if name.ends_with("bias") {
            for v in tensor.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }

    let (c, h, w) = spec.input;
    let n = 4;
    let images = Tensor::<f64>::new(
        &[n, c, h, w],
        (0..n * c * h * w).map(|_| rng.random::<f64>()).collect(),
    )?;
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..spec.classes)).collect();
    let params: Vec<(String, Tensor<f64>)> = network
        .params()
        .into_iter()
        .map(|(name, t)| (name, t.clone()))
        .collect();

    let net = &network;
    let reports = grad_check(
        &params,
        |tape, vars| {
            let vars = pack_vars(net, vars);
            let x = tape.leaf(images.clone(), false);
            let mut unused = SeededRng::seed_from_u64(0);
            let logits = net.forward(tape, &vars, x, false, &mut unused)?;
            tape.softmax_cross_entropy(logits, &labels)
        },
        COORDS_PER_GROUP,
        FD_STEP,
        &mut rng,
    )?;

    println!(
        "gradient check on {} (seed {}, {} images, h {:.0e})",
        args.spec.display(),
        args.seed,
        n,
        FD_STEP
    );
    let mut worst = 0.0f64;
    for r in &reports {
        let verdict = if r.max_rel_err < GRAD_TOL { "ok" } else { "FAIL" };
        println!(
            "  {:<24} checked {:>3}  max rel err {:.3e} at {:<5} {}",
            r.name, r.checked, r.max_rel_err, r.worst_coord, verdict
        );
        worst = worst.max(r.max_rel_err);
    }
    println!("max relative error {worst:.3e} (tolerance {GRAD_TOL:.0e})");
    if worst < GRAD_TOL {
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAILED");
        Ok(ExitCode::from(1))
    }
}

fn fused_output(
    params: &FuzzyLayerParams<f64>,
    input: &Tensor<f64>,
    pool: bool,
) -> Result<Tensor<f64>> {
    let mut tape = Tape::<f64>::new();
    let vars = params.leaves(&mut tape, false);
    let x = tape.leaf(input.clone(), false);
    let parts = if pool {
        fpo_forward(&mut tape, x, &vars)?
    } else {
        fio_forward(&mut tape, x, &vars)?
    };
    Ok(tape.value(parts.output).clone())
}

fn cmd_oracle_check(args: OracleArgs) -> Result<ExitCode> {
    if args.trials == 0 {
        return Err(Error::config("at least one trial is required"));
    }
    let mut rng = SeededRng::seed_from_u64(args.seed);
    let started = Instant::now();
    println!(
        "oracle check: {} fio and {} fpo trials (seed {})",
        args.trials, args.trials, args.seed
    );

    let mut ok = true;
    for (label, pool) in [("fio", false), ("fpo", true)] {
        let mut worst = 0.0f64;
        let mut worst_desc = String::from("-");
        for _ in 0..args.trials {
            let c = rng.random_range(1..=2);
            let h = rng.random_range(1..=8);
            let w = rng.random_range(1..=8);
            let kernel = rng.random_range(1..=h.min(w).min(4));
            let stride = if pool { rng.random_range(1..=3) } else { 1 };
            let rules = rng.random_range(1..=4);
            let outputs = rng.random_range(1..=4);
            let mut params = init_params::<f64>(rules, outputs, c, kernel, stride, &mut rng);
            // Init puts both biases at fixed constants; randomize them so the
            // comparison exercises the bias paths too.
            for v in params.mix_bias.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
            for v in params.out_bias.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
            let n = rng.random_range(1..=2);
            // Pixels beyond [0,1] drive memberships into both clip regions.
            let input = Tensor::<f64>::new(
                &[n, c, h, w],
                (0..n * c * h * w)
                    .map(|_| rng.random_range(-2.0..2.0))
                    .collect(),
            )?;

            let fused = fused_output(&params, &input, pool)?;
            let spec = NaiveFuzzyLayerSpec::from_params(&params, h, w)?;
            let reference = if pool {
                fpo_reference(&input, &spec)?
            } else {
                fio_reference(&input, &spec)?
            };
            let diff = fused
                .data()
                .iter()
                .zip(reference.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if diff >= worst {
                worst = diff;
                worst_desc = format!(
                    "{n}x{c}x{h}x{w} kernel {kernel} stride {stride} rules {rules} outputs {outputs}"
                );
            }
        }
        println!("  {label}: max abs diff {worst:.3e} ({worst_desc})");
        ok &= worst < ORACLE_TOL;
    }

    println!(
        "finished in {:.2}s (tolerance {ORACLE_TOL:.0e})",
        started.elapsed().as_secs_f64()
    );
    if ok {
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAILED");
        Ok(ExitCode::from(1))
    }
}

fn tensor_stats<F: Scalar>(t: &Tensor<F>) -> (f64, f64, f64, f64) {
    let n = t.numel() as f64;
    let data = t.data().iter().map(|v| v.as_f64());
    let mean = data.clone().sum::<f64>() / n;
    let var = data.clone().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let min = data.clone().fold(f64::INFINITY, f64::min);
    let max = data.fold(f64::NEG_INFINITY, f64::max);
    (mean, var.sqrt(), min, max)
}

fn cmd_inspect(args: InspectArgs) -> Result<ExitCode> {
    let state = checkpoint_load::<TF>(&args.resume)?;
    let net = &state.network;

    println!("checkpoint {}", args.resume.display());
    println!(
        "  seed {}, batch size {}, epochs done {}, batches {}",
        state.seed, state.batch_size, state.epochs_done, state.batch_count
    );
    println!("  schedule lr {:.6e}", state.schedule.lr());
    if state.best_val_error.is_finite() {
        println!(
            "  best val error {:.4} (snapshot {})",
            state.best_val_error,
            if state.best_params.is_some() { "kept" } else { "absent" }
        );
    }
    if let Some(row) = state.history.last() {
        println!(
            "  last epoch {}: train loss {:.4}, val loss {:.4}, val error {:.4}",
            row.epoch, row.train_loss, row.val_loss, row.val_error
        );
    }

    println!("\nspec:");
    for line in serialize_network_spec(&net.spec).lines() {
        println!("  {line}");
    }
    println!("\nshapes:");
    print_trace(net);

    println!("\nparameters ({} total):", net.param_count());
    println!(
        "  {:<24} {:<14} {:>10} {:>10} {:>10} {:>10}",
        "name", "shape", "mean", "std", "min", "max"
    );
    for (name, tensor) in net.params() {
        let shape = tensor
            .shape()
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("x");
        let (mean, std, min, max) = tensor_stats(tensor);
        println!(
            "  {name:<24} {shape:<14} {mean:>10.4} {std:>10.4} {min:>10.4} {max:>10.4}"
        );
    }

    let mut printed_header = false;
    for (i, layer) in net.layers.iter().enumerate() {
        if let Layer::Fuzzy { kind, params } = layer {
            if !printed_header {
                println!("\nrule filters:");
                printed_header = true;
            }
            let label = match kind {
                LayerKind::Fio => "fio",
                LayerKind::Fpo => "fpo",
                LayerKind::Fl => "fl",
            };
            let t = &params.rule_filters;
            let rules = t.shape()[0];
            let taps = t.numel() / rules;
            let norms: Vec<f64> = (0..rules)
                .map(|k| {
                    t.data()[k * taps..(k + 1) * taps]
                        .iter()
                        .map(|v| v.as_f64() * v.as_f64())
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            let mean = norms.iter().sum::<f64>() / rules as f64;
            let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
            let max = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            println!(
                "  layer{} {label}: {rules} rules, {taps} taps each, norms {min:.4}..{max:.4} (mean {mean:.4})",
                i + 1
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
