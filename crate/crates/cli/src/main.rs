use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use shorthand::dialogdata::{
    convert_dialogs, dedup_split_report, read_dialogs, read_examples, write_dialogs_jsonl, write_examples,
    AEExample, ContextMode, CorpusFormat,
};
use shorthand::evalharness::{
    build_local_backend, context_sweep, few_shot_windows, load_dialogs, prompt_variance_sweep, run_experiment,
    train_ngram, write_report, BackendKind, ExperimentConfig, ExperimentReport, DEFAULT_SHOT_TURN,
};
use shorthand::expander::{
    build_lut, Expander, ExpansionQuery, LookUpTable, PromptMode, PromptSpec, RemoteClient, RemoteExpander,
    SamplingConfig,
};
use shorthand::noise::{estimate_cer, KeyboardLayout, NoiseModel};
use shorthand::abbrev::abbreviate_text;
use shorthand::dialogdata::DuplicateKind;
use shorthand::Abbreviation;
use shorthand_server::{Backends, EndpointConfig, HttpTransport, SessionStore};

#[derive(Parser)]
#[command(name = "shorthand", version, about = "Abbreviation expansion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read phrases from stdin, one per line, and print `phrase<TAB>abbreviation`.
    Abbrev,
    /// Convert a dialog corpus into expansion examples (JSON lines).
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        #[arg(long, value_enum, default_value_t = CtxArg::Full)]
        context: CtxArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove test dialogs that duplicate train dialogs; writes a CSV of removed ids.
    Dedup {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
        /// Also write the surviving test dialogs here (JSON lines).
        #[arg(long)]
        kept: Option<PathBuf>,
    },
    /// Add simulated typing noise to the abbreviations of an example file.
    Noise(NoiseArgs),
    /// Expand one abbreviation.
    Expand(ExpandArgs),
    /// Build a look-up table from a dialog corpus and write it as TSV.
    BuildLut {
        #[arg(long, required = true)]
        train: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment described by a TOML config.
    Eval(EvalArgs),
    /// Serve the session API over HTTP.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    TdcTxt,
}

impl From<Format> for CorpusFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Jsonl => CorpusFormat::Jsonl,
            Format::TdcTxt => CorpusFormat::TdcTxt,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CtxArg {
    Full,
    #[value(name = "previous_1")]
    Previous1,
    None,
}

impl From<CtxArg> for ContextMode {
    fn from(c: CtxArg) -> Self {
        match c {
            CtxArg::Full => ContextMode::Full,
            CtxArg::Previous1 => ContextMode::Previous1,
            CtxArg::None => ContextMode::None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Backend {
    Lut,
    Ngram,
    Remote,
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
struct NoiseArgs {
    #[command(subcommand)]
    calibrate: Option<NoiseCommand>,
    #[arg(long, required = true)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Example file to rewrite in place; stdin to stdout when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Subcommand)]
enum NoiseCommand {
    /// Estimate the character error rate for a noise level.
    Calibrate {
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 1_000_000)]
        draws: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Abbreviations, one per line; the 26 letters when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

/// Where a backend gets its data.
#[derive(Args)]
struct BackendArgs {
    /// Dialog corpora to train the LUT or n-gram model on.
    #[arg(long)]
    train: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Jsonl)]
    format: Format,
    /// A prebuilt look-up table (TSV from `build-lut`).
    #[arg(long)]
    lut: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value_t = 64)]
    beam_width: usize,
    /// TOML file with `url`, `token`, `timeout_secs`; the environment can override it.
    #[arg(long)]
    endpoint_config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Prompt::NoInstr)]
    prompt: Prompt,
    #[arg(long, default_value_t = 128)]
    num_samples: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Prompt {
    NoInstr,
    ZeroShot,
    FewShot,
}

#[derive(Args)]
struct ExpandArgs {
    #[arg(long, value_enum)]
    backend: Backend,
    /// A previous conversation turn; repeat for several, oldest first.
    #[arg(long)]
    context: Vec<String>,
    #[arg(long)]
    abbrev: String,
    /// Accept nearby-key typos.
    #[arg(long)]
    noisy: bool,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    data: BackendArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    /// Report directory.
    #[arg(long, default_value = "report")]
    out: PathBuf,
    /// Evaluate every context mode instead of the configured one.
    #[arg(long)]
    context_sweep: bool,
    /// Evaluate each 4-shot prompt window from the train data (remote backend).
    #[arg(long)]
    prompt_sweep: bool,
    #[arg(long)]
    max_windows: Option<usize>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, value_enum)]
    backend: Backend,
    /// Origin of the web UI allowed by CORS; any origin when omitted.
    #[arg(long)]
    origin: Option<String>,
    /// Directory for per-session JSONL journals.
    #[arg(long)]
    journal: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    data: BackendArgs,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(io::stderr)
        .init();
    match Cli::parse().command {
        Command::Abbrev => abbrev(),
        Command::Convert {
            input,
            format,
            context,
            out,
        } => convert(&input, format.into(), context.into(), &out),
        Command::Dedup {
            train,
            test,
            format,
            out,
            kept,
        } => dedup(&train, &test, format.into(), &out, kept.as_deref()),
        Command::Noise(args) => noise(args),
        Command::Expand(args) => expand(args),
        Command::BuildLut { train, format, out } => {
            let lut = build_lut(&train_examples(&train, format.into())?);
            lut.write_tsv(BufWriter::new(create(&out)?))?;
            eprintln!("{} abbreviations, {} pairs", lut.len(), lut.total_pairs());
            Ok(())
        }
        Command::Eval(args) => eval(args),
        Command::Serve(args) => serve(args),
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn abbrev() -> Result<()> {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for line in io::stdin().lock().lines() {
        let line = line?;
        let phrase = line.trim_end_matches('\r');
        if phrase.trim().is_empty() {
            continue;
        }
        writeln!(out, "{phrase}\t{}", abbreviate_text(phrase).as_str())?;
    }
    Ok(())
}

fn convert(input: &Path, format: CorpusFormat, mode: ContextMode, out: &Path) -> Result<()> {
    let dialogs = read_dialogs(open(input)?, format)?;
    let (examples, stats) = convert_dialogs(&dialogs, mode);
    write_examples(BufWriter::new(create(out)?), &examples)?;
    eprintln!(
        "{} dialogs -> {} examples ({} punctuation-only targets dropped)",
        stats.dialogs, stats.examples, stats.dropped_empty
    );
    Ok(())
}

fn dedup(train: &Path, test: &Path, format: CorpusFormat, out: &Path, kept_out: Option<&Path>) -> Result<()> {
    let train = read_dialogs(open(train)?, format)?;
    let test = read_dialogs(open(test)?, format)?;
    let (kept, removed) = dedup_split_report(&test, &train);
    let mut w = csv::Writer::from_writer(create(out)?);
    w.write_record(["test_id", "train_id", "criterion"])?;
    for r in &removed {
        w.write_record([r.test_id.as_str(), r.train_id.as_str(), criterion_name(r.criterion)])?;
    }
    w.flush()?;
    if let Some(path) = kept_out {
        write_dialogs_jsonl(BufWriter::new(create(path)?), &kept)?;
    }
    eprintln!("{} of {} test dialogs removed", removed.len(), test.len());
    Ok(())
}

fn criterion_name(kind: DuplicateKind) -> &'static str {
    match kind {
        DuplicateKind::AllTurns => "all_turns",
        DuplicateKind::ThreeOrMoreTurns => "three_or_more_turns",
    }
}

fn noise(args: NoiseArgs) -> Result<()> {
    let layout = KeyboardLayout::default();
    if let Some(NoiseCommand::Calibrate {
        sigma,
        draws,
        seed,
        corpus,
    }) = args.calibrate
    {
        let corpus: Vec<Abbreviation> = match corpus {
            Some(p) => open(&p)?
                .lines()
                .map(|l| l.map(|l| Abbreviation::parse(&l)))
                .filter(|a| a.as_ref().map_or(true, |a| !a.is_empty()))
                .collect::<io::Result<_>>()?,
            None => ('a'..='z').map(|c| Abbreviation::parse(&c.to_string())).collect(),
        };
        let cer = estimate_cer(&layout, sigma, &corpus, draws, seed)?;
        println!("{cer:.4}");
        return Ok(());
    }
    let sigma = args.sigma.context("--sigma is required")?;
    let mut text = String::new();
    match &args.input {
        Some(p) => {
            open(p)?.read_to_string(&mut text)?;
        }
        None => {
            io::stdin().read_to_string(&mut text)?;
        }
    }
    let mut examples = read_examples(text.as_bytes())?;
    let mut model = NoiseModel::new(sigma, args.seed)?;
    for ex in &mut examples {
        ex.shorthand = model.simulate_typed_abbreviation(&layout, &ex.shorthand);
        ex.noise_sigma = sigma;
    }
    match &args.input {
        Some(p) => {
            // write beside the original, then swap, so a failure never truncates the input
            let tmp = p.with_extension("noise.tmp");
            write_examples(BufWriter::new(create(&tmp)?), &examples)?;
            std::fs::rename(&tmp, p)?;
        }
        None => write_examples(BufWriter::new(io::stdout().lock()), &examples)?,
    }
    if model.passthrough_count() > 0 {
        eprintln!("{} characters without a key were left unchanged", model.passthrough_count());
    }
    Ok(())
}

fn train_examples(paths: &[PathBuf], format: CorpusFormat) -> Result<Vec<AEExample>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(convert_dialogs(&load_dialogs(p, format)?, ContextMode::Full).0);
    }
    Ok(out)
}

fn remote_backend(
    data: &BackendArgs,
    mode: PromptMode,
    shots: Option<Vec<AEExample>>,
) -> Result<RemoteExpander<Arc<HttpTransport>>> {
    let endpoint = EndpointConfig::load(data.endpoint_config.as_deref()).map_err(anyhow::Error::msg)?;
    let spec = match mode {
        PromptMode::NoInstr => PromptSpec::no_instr(),
        PromptMode::ZeroShot => PromptSpec::zero_shot(),
        PromptMode::FewShot => PromptSpec::few_shot(shots.context("few-shot prompts need --train dialogs")?),
    };
    let sampling = SamplingConfig {
        num_samples: data.num_samples,
        ..SamplingConfig::default()
    };
    Ok(RemoteExpander::new(
        RemoteClient::new(Arc::new(HttpTransport::new(endpoint))),
        spec,
        sampling,
    ))
}

fn first_window(paths: &[PathBuf], format: CorpusFormat) -> Result<Option<Vec<AEExample>>> {
    if paths.is_empty() {
        return Ok(None);
    }
    let mut dialogs = Vec::new();
    for p in paths {
        dialogs.extend(load_dialogs(p, format)?);
    }
    Ok(few_shot_windows(&dialogs, DEFAULT_SHOT_TURN)?.into_iter().next().map(|s| s.shots))
}

fn make_backend(kind: Backend, data: &BackendArgs) -> Result<Arc<dyn Expander>> {
    let format = data.format.into();
    Ok(match kind {
        Backend::Lut => match &data.lut {
            Some(p) => Arc::new(LookUpTable::read_tsv(open(p)?)?),
            None if !data.train.is_empty() => Arc::new(build_lut(&train_examples(&data.train, format)?)),
            None => bail!("the lut backend needs --lut or --train"),
        },
        Backend::Ngram => {
            if data.train.is_empty() {
                bail!("the ngram backend needs --train");
            }
            Arc::new(train_ngram(&train_examples(&data.train, format)?, data.order, data.beam_width))
        }
        Backend::Remote => {
            let mode = match data.prompt {
                Prompt::NoInstr => PromptMode::NoInstr,
                Prompt::ZeroShot => PromptMode::ZeroShot,
                Prompt::FewShot => PromptMode::FewShot,
            };
            let shots = if mode == PromptMode::FewShot {
                first_window(&data.train, format)?
            } else {
                None
            };
            Arc::new(remote_backend(data, mode, shots)?)
        }
    })
}

fn expand(args: ExpandArgs) -> Result<()> {
    let backend = make_backend(args.backend, &args.data)?;
    let query = ExpansionQuery::with_options(args.context, Abbreviation::parse(&args.abbrev), args.noisy, args.k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let result = backend.expand(&query, &mut rng)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&result)?);
        return Ok(());
    }
    if result.options.is_empty() {
        eprintln!("no expansion found");
    }
    for o in &result.options {
        match o.score {
            Some(s) => println!("{}\t{:.3}\t{}", o.count, s, o.phrase.as_str()),
            None => println!("{}\t{}", o.count, o.phrase.as_str()),
        }
    }
    Ok(())
}

fn print_summary(label: &str, r: &ExperimentReport) {
    let m = &r.metrics.overall;
    let sd = |f: fn(&shorthand::metrics::RunStats) -> f64| r.metrics.run_stats.as_ref().map(f).unwrap_or(0.0);
    println!(
        "{label:<12} n={:<6} acc@{k}={:.1}±{:.1}  bleu@{k}={:.1}  ksr_all={:.1}  ksr_success={}",
        m.n,
        m.acc_at_k,
        sd(|s| s.acc_at_k.sd),
        m.bleu_at_k,
        m.ksr_all,
        m.ksr_success.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into()),
        k = r.settings.k,
    );
}

fn eval(args: EvalArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut config = ExperimentConfig::from_toml(&text)?;
    config.resolve_paths(args.config.parent().unwrap_or(Path::new(".")));
    let settings = config.settings();
    let test = load_dialogs(&config.test, config.format)?;
    let examples = convert_dialogs(&test, ContextMode::Full).0;

    if args.prompt_sweep {
        let remote = config.remote.as_ref().context("--prompt-sweep needs a [remote] section")?;
        let mut train = Vec::new();
        for p in &config.train {
            train.extend(load_dialogs(p, config.format)?);
        }
        let mut windows = few_shot_windows(&train, DEFAULT_SHOT_TURN)?;
        if let Some(n) = args.max_windows {
            windows.truncate(n);
        }
        let base = remote_for_config(remote, &config.sampling, None)?;
        let sweep = prompt_variance_sweep(&windows, &examples, &settings, |spec| base.with_spec(spec.clone()))?;
        std::fs::create_dir_all(&args.out)?;
        std::fs::write(args.out.join("prompt_sweep.json"), serde_json::to_string_pretty(&sweep)? + "\n")?;
        println!(
            "{} windows: acc@{} mean {:.1} sd {:.1}, best window {} ({:.1})",
            sweep.accuracies.len(),
            settings.k,
            sweep.mean,
            sweep.sd,
            sweep.best_index,
            sweep.best_accuracy
        );
        return Ok(());
    }

    let backend: Box<dyn Expander> = match config.backend {
        BackendKind::Remote => {
            let remote = config.remote.as_ref().context("remote backend needs a [remote] section")?;
            let shots = if remote.prompt_mode == PromptMode::FewShot {
                first_window(&config.train, config.format)?
            } else {
                None
            };
            Box::new(remote_for_config(remote, &config.sampling, shots)?)
        }
        _ => build_local_backend(&config)?,
    };

    if args.context_sweep {
        for (mode, mut report) in context_sweep(&examples, backend.as_ref(), &settings, &ContextMode::ALL)? {
            report.config = Some(config.clone());
            write_report(&report, &args.out.join(mode.as_str()))?;
            print_summary(mode.as_str(), &report);
        }
    } else {
        let mut report = run_experiment(&examples, backend.as_ref(), &settings)?;
        report.config = Some(config.clone());
        write_report(&report, &args.out)?;
        print_summary(settings.context_mode.as_str(), &report);
    }
    eprintln!("report written to {}", args.out.display());
    Ok(())
}

fn remote_for_config(
    remote: &shorthand::evalharness::RemoteSettings,
    sampling: &SamplingConfig,
    shots: Option<Vec<AEExample>>,
) -> Result<RemoteExpander<Arc<HttpTransport>>> {
    let token = match &remote.token_env {
        Some(var) => Some(std::env::var(var).with_context(|| format!("environment variable {var} is not set"))?),
        None => None,
    };
    let endpoint = EndpointConfig {
        url: remote.url.clone(),
        token,
        timeout_secs: 60,
    };
    let spec = match remote.prompt_mode {
        PromptMode::NoInstr => PromptSpec::no_instr(),
        PromptMode::ZeroShot => PromptSpec::zero_shot(),
        PromptMode::FewShot => PromptSpec::few_shot(shots.context("few-shot prompts need train dialogs")?),
    };
    Ok(RemoteExpander::new(
        RemoteClient::new(Arc::new(HttpTransport::new(endpoint))),
        spec,
        sampling.clone(),
    ))
}

fn serve(args: ServeArgs) -> Result<()> {
    let name = match args.backend {
        Backend::Lut => "lut",
        Backend::Ngram => "ngram",
        Backend::Remote => "remote",
    };
    let mut backends = Backends::new();
    backends.insert(name.to_string(), make_backend(args.backend, &args.data)?);
    let mut store = SessionStore::new(backends, name).with_seed(args.seed);
    if let Some(dir) = &args.journal {
        store = store.with_journal(dir)?;
    }
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .context("invalid --host/--port")?;
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("serving backend {name} on http://{addr}");
    rt.block_on(shorthand_server::serve(addr, Arc::new(store), args.origin.as_deref()))?;
    Ok(())
}
