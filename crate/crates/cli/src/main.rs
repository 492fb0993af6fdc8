use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use duti::baselines::{influence_rank, lnd_oracle, nn_rank, BaselineRanking};
use duti::bench::{
    gen_fairness_bias, gen_harry_potter, gen_noisy_relabel_multiclass, gen_sine_regression, synthetic_loan_table,
    PartitionSizes, ReferenceModel, SimulatedCorpus, TabularBinary,
};
use duti::driver::{run_duti, DriverConfig};
use duti::eval::{auc, average_pr, fix_curve, pr_curve};
use duti::io::{
    document_kind, read_table, write_dataset, write_trusted, BaselineDocument, CsvTable, ReportDocument,
    TruthDocument,
};
use duti::learners::{cross_validate, default_lambda_grid, default_sigma_grid, LearnerConfig};
use duti::types::{Dataset, Fix, Task, TrustedSet};
use duti::DutiError;

#[derive(Parser)]
#[command(name = "duti", version, about = "Find and fix training-set label bugs using trusted items")]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "DUTI_THREADS", default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the debugger and write a report.
    Debug(DebugArgs),
    /// Rank suspected bugs with a comparison method.
    Baseline(BaselineArgs),
    /// Generate a corpus with known bugs.
    Simulate(SimulateArgs),
    /// Score a report or baseline ranking against ground truth.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskKind {
    Regression,
    Classification,
}

#[derive(Args)]
struct InputArgs {
    /// Training CSV with feature_0.. and label columns.
    #[arg(long)]
    train: PathBuf,
    /// Trusted CSV; an optional confidence column defaults to 100.
    #[arg(long)]
    trusted: PathBuf,
    #[arg(long, value_enum)]
    task: TaskKind,
    /// Class count; inferred from the largest label when omitted.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct LearnerArgs {
    /// Regularization weight; cross-validated when omitted.
    #[arg(long)]
    lambda: Option<f64>,
    /// RBF bandwidth; cross-validated when omitted.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
}

#[derive(Args)]
struct DebugArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    learner: LearnerArgs,
    /// Number of flagged items the expert will inspect.
    #[arg(long)]
    budget: usize,
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Iteration cap of each classification round.
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Inf,
    Nn,
    Lnd,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    learner: LearnerArgs,
    /// Number of positive items to flip (lnd).
    #[arg(long, required_if_eq("method", "lnd"))]
    n_pos: Option<usize>,
    /// Number of negative items to flip (lnd).
    #[arg(long, required_if_eq("method", "lnd"))]
    n_neg: Option<usize>,
    #[arg(long, default_value = "baseline.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    HarryPotter,
    Sine,
    Fairness,
    Multiclass,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    generator: Generator,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training size (harry-potter, multiclass).
    #[arg(long)]
    n: Option<usize>,
    /// Class count (multiclass).
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Fraction of relabeled items (multiclass).
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    /// Source table for fairness; a synthetic loan table when omitted.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, requires = "table")]
    protected_column: Option<usize>,
    /// Rows with protected value at most this form the protected group.
    #[arg(long, requires = "table")]
    protected_max: Option<f64>,
    /// Group sizes A_PROT,A_OTHER,B_PROT,B_OTHER for fairness.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
}

#[derive(Args)]
struct EvalArgs {
    /// Report or baseline ranking JSON.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

type CliResult<T> = Result<T, String>;

fn fail(e: DutiError) -> String {
    e.to_string()
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn load_table(path: &Path) -> CliResult<CsvTable> {
    let file = fs::File::open(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    read_table(file).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_inputs(input: &InputArgs) -> CliResult<(Dataset, TrustedSet)> {
    let train = load_table(&input.train)?;
    let trusted = load_table(&input.trusted)?;
    let task = match input.task {
        TaskKind::Regression => Task::Regression,
        TaskKind::Classification => {
            let classes = match input.classes {
                Some(k) => k,
                None => train
                    .implied_classes()
                    .and_then(|a| trusted.implied_classes().map(|b| a.max(b)))
                    .map_err(fail)?,
            };
            Task::Classification { classes }
        }
    };
    let data = train
        .into_dataset(task)
        .map_err(|e| format!("{}: {e}", input.train.display()))?;
    let trusted = trusted
        .into_trusted(task)
        .map_err(|e| format!("{}: {e}", input.trusted.display()))?;
    trusted.check_compatible(&data).map_err(fail)?;
    Ok((data, trusted))
}

fn learner_config(data: &Dataset, args: &LearnerArgs, seed: u64) -> CliResult<LearnerConfig> {
    if let (Some(lambda), Some(sigma)) = (args.lambda, args.sigma) {
        return LearnerConfig::new(lambda, sigma).map_err(fail);
    }
    let lambdas = args.lambda.map_or_else(default_lambda_grid, |l| vec![l]);
    let sigmas = match args.sigma {
        Some(s) => vec![s],
        None => default_sigma_grid(data.features()).map_err(fail)?,
    };
    let cv = cross_validate(data, &lambdas, &sigmas, args.folds, seed).map_err(fail)?;
    eprintln!(
        "cross-validation chose lambda = {}, sigma = {}",
        cv.config.lambda, cv.config.kernel.bandwidth
    );
    Ok(cv.config)
}

fn format_fix(fix: Fix) -> String {
    match fix {
        Fix::Class(c) => c.to_string(),
        Fix::Value(v) => format!("{v:.6}"),
    }
}

fn cmd_debug(args: &DebugArgs) -> CliResult<ExitCode> {
    let (data, trusted) = load_inputs(&args.input)?;
    let cfg = learner_config(&data, &args.learner, args.input.seed)?;
    let mut driver = DriverConfig::new(args.budget).map_err(fail)?;
    if let Some(r) = args.max_rounds {
        driver.max_rounds = r;
    }
    if let Some(k) = args.max_iter {
        driver.pgd.max_iter = k;
    }
    let report = run_duti(&data, &trusted, &cfg, &driver).map_err(fail)?;
    let converged = report.converged();
    let doc = ReportDocument {
        report,
        labels: data.labels().clone(),
        learner: Some(cfg),
        budget: Some(args.budget),
    };
    write_text(&args.out, &doc.to_json().map_err(fail)?)?;

    println!(
        "{:>5} {:>6} {:>12} {:>12} {:>12} {:>10}",
        "rank", "index", "first_gamma", "original", "fix", "deviation"
    );
    for f in &doc.report.ranking {
        println!(
            "{:>5} {:>6} {:>12.4e} {:>12} {:>12} {:>10.4}",
            f.rank,
            f.index,
            f.first_gamma,
            format_fix(match doc.report.task {
                Task::Regression => Fix::Value(f.original_label),
                Task::Classification { .. } => Fix::Class(f.original_label as usize),
            }),
            format_fix(f.fix),
            f.deviation
        );
    }
    eprintln!(
        "{} flags over {} rounds; report written to {}",
        doc.report.ranking.len(),
        doc.report.trajectory.len(),
        args.out.display()
    );
    if converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("warning: at least one round did not converge");
        Ok(ExitCode::from(1))
    }
}

fn cmd_baseline(args: &BaselineArgs) -> CliResult<ExitCode> {
    let (data, trusted) = load_inputs(&args.input)?;
    let (name, ranking): (&str, BaselineRanking) = match args.method {
        Method::Inf => {
            let cfg = learner_config(&data, &args.learner, args.input.seed)?;
            ("inf", influence_rank(&data, &trusted, &cfg).map_err(fail)?)
        }
        Method::Nn => ("nn", nn_rank(&data, &trusted).map_err(fail)?),
        Method::Lnd => {
            let (p, q) = (args.n_pos.unwrap_or(0), args.n_neg.unwrap_or(0));
            ("lnd", lnd_oracle(&data, &trusted, p, q, args.learner.sigma, args.input.seed).map_err(fail)?)
        }
    };
    let doc = BaselineDocument {
        method: name.into(),
        task: data.task(),
        n: data.len(),
        ranking,
    };
    write_text(&args.out, &doc.to_json().map_err(fail)?)?;
    println!("{:>5} {:>6} {:>12} {:>8}", "rank", "index", "score", "fix");
    for (r, e) in doc.ranking.entries.iter().enumerate() {
        let fix = e.fix.map_or_else(|| "-".to_string(), format_fix);
        println!("{:>5} {:>6} {:>12.4e} {:>8}", r + 1, e.index, e.score, fix);
    }
    eprintln!("{} ranked items written to {}", doc.ranking.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn load_binary_table(path: &Path, column: usize, max: f64) -> CliResult<TabularBinary> {
    let t = load_table(path)?;
    let labels = t.class_labels().map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(i) = labels.iter().position(|&y| y > 1) {
        return Err(format!("{}: line {}: label must be 0 or 1", path.display(), t.lines[i]));
    }
    Ok(TabularBinary {
        features: t.features,
        labels,
        protected_column: column,
        protected_max: max,
    })
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<ExitCode> {
    let corpus: SimulatedCorpus = match args.generator {
        Generator::HarryPotter => gen_harry_potter(args.seed, args.n.unwrap_or(100)),
        Generator::Sine => gen_sine_regression(args.seed),
        Generator::Multiclass => gen_noisy_relabel_multiclass(args.seed, args.classes, args.n.unwrap_or(300), args.noise),
        Generator::Fairness => {
            let table = match &args.table {
                Some(p) => {
                    let column = args.protected_column.ok_or("--protected-column is required with --table")?;
                    let max = args.protected_max.ok_or("--protected-max is required with --table")?;
                    load_binary_table(p, column, max)?
                }
                None => synthetic_loan_table(args.seed),
            };
            let sizes = match &args.sizes {
                Some(s) if s.len() != 4 => return Err("--sizes takes four comma-separated counts".into()),
                Some(s) => PartitionSizes {
                    a: (s[0], s[1]),
                    b: (s[2], s[3]),
                    c_other: None,
                },
                None => PartitionSizes::german_loan(),
            };
            gen_fairness_bias(&table, &sizes, &ReferenceModel::default(), args.seed)
        }
    }
    .map_err(fail)?;

    fs::create_dir_all(&args.out_dir).map_err(|e| format!("cannot create {}: {e}", args.out_dir.display()))?;
    let csv_out = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> duti::Result<()>| -> CliResult<()> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(fail)?;
        let path = args.out_dir.join(name);
        fs::write(&path, buf).map_err(|e| format!("cannot write {}: {e}", path.display()))
    };
    csv_out("train.csv", &|w| write_dataset(w, &corpus.dataset))?;
    csv_out("trusted.csv", &|w| write_trusted(w, &corpus.trusted))?;
    let truth = TruthDocument::from_corpus(&corpus).map_err(fail)?;
    write_text(&args.out_dir.join("truth.json"), &truth.to_json().map_err(fail)?)?;
    eprintln!(
        "{} training rows ({} bugs) and {} trusted rows written to {}",
        corpus.dataset.len(),
        corpus.bug_indices.len(),
        corpus.trusted.len(),
        args.out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: &EvalArgs) -> CliResult<ExitCode> {
    let text = read_text(&args.report)?;
    let truth = TruthDocument::parse(&read_text(&args.truth)?).map_err(|e| format!("{}: {e}", args.truth.display()))?;
    let in_report = |e: DutiError| format!("{}: {e}", args.report.display());
    let (task, n, flags): (Task, usize, Vec<(usize, Option<Fix>)>) = match document_kind(&text).map_err(in_report)?.as_str() {
        "report" => {
            let doc = ReportDocument::parse(&text).map_err(in_report)?;
            let r = doc.report;
            (r.task, r.n, r.ranking.iter().map(|f| (f.index, Some(f.fix))).collect())
        }
        "baseline" => {
            let doc = BaselineDocument::parse(&text).map_err(in_report)?;
            (doc.task, doc.n, doc.ranking.entries.iter().map(|e| (e.index, e.fix)).collect())
        }
        other => return Err(format!("{}: cannot evaluate a `{other}` document", args.report.display())),
    };
    if n != truth.n() {
        return Err(format!("report covers {n} training items but truth has {}", truth.n()));
    }
    if task != truth.task {
        return Err("report and truth are for different tasks".into());
    }

    fs::create_dir_all(&args.out_dir).map_err(|e| format!("cannot create {}: {e}", args.out_dir.display()))?;
    let ranking: Vec<usize> = flags.iter().map(|&(i, _)| i).collect();
    let curve = pr_curve(&ranking, &truth.bug_indices).map_err(fail)?;
    let mut pr = String::from("flags,recall,precision\n");
    for (j, (r, p)) in curve.iter().enumerate() {
        pr.push_str(&format!("{},{r},{p}\n", j + 1));
    }
    write_text(&args.out_dir.join("pr.csv"), &pr)?;
    let avg = average_pr(std::slice::from_ref(&curve)).map_err(fail)?;
    println!("flags: {}, bugs: {}, interpolated PR area: {:.4}", ranking.len(), truth.bug_indices.len(), auc(&avg));

    if matches!(task, Task::Classification { .. }) {
        if flags.iter().all(|(_, f)| f.is_some()) {
            let fixes = fix_curve(&flags, &truth.bug_indices, &truth.true_labels).map_err(fail)?;
            let mut out = String::from("flags,correct_fixes\n");
            for (k, c) in &fixes {
                out.push_str(&format!("{k},{c}\n"));
            }
            write_text(&args.out_dir.join("fixes.csv"), &out)?;
            println!("correct fixes: {}", fixes.last().map_or(0, |&(_, c)| c));
        } else {
            eprintln!("ranking carries no fixes; fixes.csv not written");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> CliResult<ExitCode> {
    if cli.threads == 0 {
        return Err("--threads must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| format!("cannot start thread pool: {e}"))?;
    match &cli.command {
        Command::Debug(a) => cmd_debug(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
