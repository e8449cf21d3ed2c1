mod config;
mod error;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adtn_core::autodiff::GradcheckOptions;
use adtn_core::checkpoint::{Checkpoint, Header};
use adtn_core::compress::{compress_network, Datasets};
use adtn_core::data::{load_mnist, mnist_files, subset, Dataset, Split};
use adtn_core::gradsuite::{self, Scope};
use adtn_core::nn::{build_model, evaluate, train, Network, ParamFilter, WeightSource};
use adtn_core::seed::derive_seed;
use adtn_core::{DType, Scalar};
use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use error::CliError;
use manifest::{digest_file, Manifest};

const MNIST_SHAPE: [usize; 3] = [1, 28, 28];
const MNIST_CLASSES: usize = 10;
const EVAL_BATCH: usize = 1000;

#[derive(Parser)]
#[command(name = "adtn", version, about = "Train small networks and compress their weights into brick-wall tensor networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a baseline network; writes baseline.ckpt and metrics.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. `--set train.epochs=2`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Compress the layers listed in the config; writes compressed.ckpt and report.csv.
    Compress {
        #[arg(long)]
        config: PathBuf,
        /// Baseline checkpoint (default: <output_dir>/baseline.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Test accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// MNIST directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Evaluate only the first N samples.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Finite-difference gradient checks; exits non-zero on any failure.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = ScopeArg::All)]
        scope: ScopeArg,
    },
    /// Print the header and parameter layout of a checkpoint.
    Inspect { checkpoint: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Ops,
    Adtn,
    Net,
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, overrides } => cmd_train(&config, &overrides),
        Command::Compress { config, checkpoint, overrides } => cmd_compress(&config, checkpoint.as_deref(), &overrides),
        Command::Eval { checkpoint, data, split, limit } => cmd_eval(&checkpoint, &data, split, limit),
        Command::Gradcheck { scope } => cmd_gradcheck(scope),
        Command::Inspect { checkpoint } => cmd_inspect(&checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

struct Mnist {
    train: Dataset,
    test: Dataset,
    files: Vec<PathBuf>,
}

fn load_data(cfg: &RunConfig) -> Result<Mnist, CliError> {
    let dir = &cfg.data.dir;
    let mut train = load_mnist(dir, Split::Train)?;
    let test = load_mnist(dir, Split::Test)?;
    if let Some(n) = cfg.data.train_subset {
        train = subset(&train, n, derive_seed(cfg.seed, "subset", 0))?;
    }
    let files = [Split::Train, Split::Test].into_iter().flat_map(|s| mnist_files(dir, s)).collect();
    Ok(Mnist { train, test, files })
}

fn prepare_output(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn cmd_train(config_path: &Path, overrides: &[String]) -> Result<(), CliError> {
    let cfg = config::load(config_path, overrides)?;
    let data = load_data(&cfg)?;
    prepare_output(&cfg.output_dir)?;

    let init_seed = derive_seed(cfg.seed, "init", 0);
    let train_seed = derive_seed(cfg.seed, "train", 0);
    let mut net: Network<f32> = build_model(cfg.model, &MNIST_SHAPE, MNIST_CLASSES, init_seed)?;
    let history = train(&mut net, &data.train, Some(&data.test), &cfg.train, ParamFilter::ALL, train_seed)?;
    let eta_nn = match history.last_test_accuracy() {
        Some(a) => a,
        None => evaluate(&net, &data.test, cfg.train.eval_batch_size)?,
    };

    let metrics = cfg.output_dir.join("metrics.csv");
    write_text(&metrics, &history.to_csv()?)?;
    let mut ckpt = Checkpoint::new(cfg.model, cfg.seed, MNIST_CLASSES, net);
    ckpt.metadata.insert("eta_nn".into(), eta_nn.to_string());
    ckpt.metadata.insert("train_samples".into(), data.train.len().to_string());
    let ckpt_path = cfg.output_dir.join("baseline.ckpt");
    ckpt.save(&ckpt_path)?;

    let mut m = Manifest::new("train", &cfg);
    m.seeds.insert("init".into(), init_seed);
    m.seeds.insert("train".into(), train_seed);
    if cfg.data.train_subset.is_some() {
        m.seeds.insert("subset".into(), derive_seed(cfg.seed, "subset", 0));
    }
    m.inputs = data.files.iter().map(|p| digest_file(p)).collect::<Result<_, _>>()?;
    m.outputs = vec![digest_file(&ckpt_path)?, digest_file(&metrics)?];
    m.write(&cfg.output_dir.join("manifest-train.json"))?;
    println!("{}: eta_nn = {eta_nn:.4} after {} epochs -> {}", cfg.model, history.epochs.len(), ckpt_path.display());
    Ok(())
}

fn cmd_compress(config_path: &Path, checkpoint: Option<&Path>, overrides: &[String]) -> Result<(), CliError> {
    let cfg = config::load(config_path, overrides)?;
    let base_path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join("baseline.ckpt"));
    let header = Header::parse(&fs::read(&base_path).map_err(|e| CliError::io(&base_path, e))?)?;
    if header.model != cfg.model {
        return Err(CliError::Config(format!(
            "checkpoint holds {} but the config names {}",
            header.model, cfg.model
        )));
    }
    let section = &cfg.compression;
    prepare_output(&cfg.output_dir)?;
    let mut m = Manifest::new("compress", &cfg);
    m.order = Some(section.order.to_string());
    m.inputs = vec![digest_file(&base_path)?];
    let manifest_path = cfg.output_dir.join("manifest-compress.json");
    if section.layers.is_empty() {
        eprintln!("warning: compression.layers is empty; nothing to compress");
        return m.write(&manifest_path);
    }

    let data = load_data(&cfg)?;
    let mut ckpt: Checkpoint<f32> = Checkpoint::load(&base_path)?;
    let seed = derive_seed(cfg.seed, "compress", 0);
    let report = compress_network(
        &mut ckpt.network,
        &section.layers,
        section.order,
        &section.settings(),
        Datasets { train: &data.train, test: &data.test },
        seed,
    )?;

    let report_path = cfg.output_dir.join("report.csv");
    write_text(&report_path, &report.to_csv()?)?;
    ckpt.metadata.insert("eta_nn".into(), report.eta_nn.to_string());
    ckpt.metadata.insert("eta".into(), report.eta.to_string());
    ckpt.metadata.insert("rho_tot".into(), report.rho_tot.to_string());
    ckpt.metadata.insert("order".into(), section.order.to_string());
    let out_path = cfg.output_dir.join("compressed.ckpt");
    ckpt.save(&out_path)?;

    m.seeds.insert("compress".into(), seed);
    m.inputs.extend(data.files.iter().map(|p| digest_file(p)).collect::<Result<Vec<_>, _>>()?);
    m.outputs = vec![digest_file(&out_path)?, digest_file(&report_path)?];
    m.write(&manifest_path)?;

    for l in &report.layers {
        let rho = l.rho.map_or("-".into(), |r| format!("{r:.6}"));
        let status = l.error.as_deref().unwrap_or("ok");
        println!("{:<8} P={:<8} ADTN={:<6} rho={rho} N={} {status}", l.layer, l.p, l.adtn_params, l.n_adtns);
    }
    println!("eta_nn = {:.4}, eta = {:.4}, rho_tot = {:.6} -> {}", report.eta_nn, report.eta, report.rho_tot, out_path.display());
    let failed: Vec<&str> = report.layers.iter().filter(|l| l.error.is_some()).map(|l| l.layer.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::Numeric(format!("layers left uncompressed after errors: {}", failed.join(", "))));
    }
    Ok(())
}

fn cmd_eval(path: &Path, dir: &Path, split: SplitArg, limit: Option<usize>) -> Result<(), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let mut ds = load_mnist(dir, split)?;
    if let Some(n) = limit {
        ds = ds.select(&(0..n.min(ds.len())).collect::<Vec<_>>())?;
    }
    let acc = match Header::parse(&bytes)?.dtype {
        DType::F32 => eval_as::<f32>(&bytes, &ds)?,
        DType::F64 => eval_as::<f64>(&bytes, &ds)?,
    };
    println!("{acc}");
    Ok(())
}

fn eval_as<T: Scalar>(bytes: &[u8], ds: &Dataset) -> Result<f64, CliError> {
    let ckpt: Checkpoint<T> = Checkpoint::from_bytes(bytes)?;
    Ok(evaluate(&ckpt.network, ds, EVAL_BATCH)?)
}

fn cmd_gradcheck(scope: ScopeArg) -> Result<(), CliError> {
    let scopes = match scope {
        ScopeArg::Ops => vec![Scope::Ops],
        ScopeArg::Adtn => vec![Scope::Adtn],
        ScopeArg::Net => vec![Scope::Net],
        ScopeArg::All => Scope::ALL.to_vec(),
    };
    let options = GradcheckOptions::default();
    let mut failures = 0;
    let mut total = 0;
    for s in scopes {
        for case in gradsuite::run(s, options)? {
            total += 1;
            let verdict = if case.passed() { "ok" } else { "FAIL" };
            failures += usize::from(!case.passed());
            println!("{:<5} {:<28} max_rel_err={:.3e} {verdict}", case.scope.to_string(), case.name, case.report.max_rel_err());
        }
    }
    println!("{}/{} checks passed (h={}, tol={})", total - failures, total, options.h, options.tol);
    if failures > 0 {
        return Err(CliError::Failed(format!("{failures} gradient check(s) failed")));
    }
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<(), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let header = Header::parse(&bytes)?;
    println!("format version {}, {} data, model {}, seed {}", header.version, header.dtype, header.model, header.seed);
    println!("input {:?}, {} classes", header.input_shape, header.classes);
    for (k, v) in &header.metadata {
        println!("  {k} = {v}");
    }
    match header.dtype {
        DType::F32 => print_layout(&Checkpoint::<f32>::from_bytes(&bytes)?.network),
        DType::F64 => print_layout(&Checkpoint::<f64>::from_bytes(&bytes)?.network),
    }
    Ok(())
}

fn print_layout<T: Scalar>(net: &Network<T>) {
    for layer in net.layers() {
        match &layer.weight {
            Some(WeightSource::Compressed(c)) => {
                let q: Vec<String> = c.plan().chunks.iter().map(|ch| ch.q.to_string()).collect();
                let m = c.adtns().first().map_or(0, |a| a.spec().m);
                println!(
                    "{:<8} {:<32} compressed: {} ADTN(s), q=[{}], m={m}, {} ADTN params, residual {}",
                    layer.name,
                    layer.kind.to_string(),
                    c.adtns().len(),
                    q.join(","),
                    c.adtn_param_count(),
                    c.residual_len()
                );
            }
            Some(WeightSource::Dense(w)) => println!("{:<8} {:<32} dense {:?}", layer.name, layer.kind.to_string(), w.shape()),
            None => println!("{:<8} {}", layer.name, layer.kind),
        }
    }
    println!("stored parameters {} (dense equivalent {})", net.stored_param_count(), net.dense_param_count());
}
