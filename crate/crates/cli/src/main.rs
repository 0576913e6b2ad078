use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use labeldist::elo::{
    elo_distance_matrix, log_sequence, read_choice_log, replay, replay_sequence, run_tournament,
    ChoiceMatrix, ChoiceRecord, EloRatings, ReplayOrder,
};
use labeldist::io::{load_array_auto, write_atomic, Format};
use labeldist::raster::Raster;
use labeldist::search::{apply_genome, evolve, SearchConfig};
use labeldist::stats::ols_fit;
use labeldist::study::{
    agreement_stats, distance_table_named, run_sweep, sum_image, Direction, DistanceTable,
    SweepKind, SweepSpec,
};
use labeldist::{compare_all, Error, Evaluation, MetricName};
use labeldist_server::{ServerConfig, ServerError};
use serde_json::json;

#[derive(Parser)]
#[command(name = "labeldist", version, about = "Label-invariant distances between labeled arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Output {
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Write the main artifact here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Nhd,
    Bsm,
    Rm,
    Lad,
    Madlad,
    All,
}

impl MetricArg {
    fn single(self) -> Option<MetricName> {
        match self {
            MetricArg::Nhd => Some(MetricName::Nhd),
            MetricArg::Bsm => Some(MetricName::Bsm),
            MetricArg::Rm => Some(MetricName::Rm),
            MetricArg::Lad => Some(MetricName::Lad),
            MetricArg::Madlad => Some(MetricName::Madlad),
            MetricArg::All => None,
        }
    }

    fn require_single(self) -> Result<MetricName> {
        self.single()
            .ok_or_else(|| Error::InvalidConfig("this command needs a single --metric".into()).into())
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Row,
    Col,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitnessArg {
    Lad,
    Madlad,
}

#[derive(Subcommand)]
enum Command {
    /// Compare a candidate segmentation with a ground truth.
    Compare {
        gt: PathBuf,
        candidate: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        metric: MetricArg,
        #[command(flatten)]
        output: Output,
    },
    /// Perturb an array over increasing levels and record every metric.
    Sweep {
        input: PathBuf,
        /// salt, pepper, salt-and-pepper, open, close, erode or dilate.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Label treated as foreground by the morphology kinds.
        #[arg(long, default_value_t = 0)]
        foreground: u32,
        #[command(flatten)]
        output: Output,
    },
    /// Pairwise distance table over a set of arrays.
    Matrix {
        /// Files, or a directory whose PGM/CSV files are used in name order.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "lad")]
        metric: MetricArg,
        /// Which side of the table plays the ground truth.
        #[arg(long, value_enum, default_value = "row")]
        direction: DirectionArg,
        /// Agreement threshold reported under --json.
        #[arg(long, default_value_t = 0.01)]
        threshold: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Per-pixel sum of binary masks.
    Sum {
        #[arg(required = true)]
        masks: Vec<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Elo ratings from a choice log or a choice matrix.
    Elo {
        #[arg(long)]
        choices: PathBuf,
        /// Only use log records for this scene.
        #[arg(long)]
        scene: Option<String>,
        /// Shuffle a choice matrix replay with --seed instead of row-major order.
        #[arg(long)]
        shuffle: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the rating-distance table here.
        #[arg(long)]
        distances: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Fit one distance table against another over their upper triangles.
    Regress {
        /// Table supplying x, usually a metric table.
        x: PathBuf,
        /// Table supplying y, usually the Elo distance table.
        y: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Genetic search for a threshold segmentation pipeline.
    Search {
        /// PGM or PPM image to segment.
        image: PathBuf,
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "lad")]
        metric: FitnessArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        generations: Option<usize>,
        /// Write the per-generation history CSV here.
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Run the pairwise judgment server.
    Serve {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory with the browser UI served under /static/.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

fn emit(output: &Output, text: &str) -> Result<()> {
    match &output.out {
        Some(path) => write_atomic(path, text.as_bytes())
            .with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn emit_json(output: &Output, value: &serde_json::Value) -> Result<()> {
    emit(output, &format!("{}\n", serde_json::to_string_pretty(value)?))
}

fn load(path: &Path) -> Result<labeldist::LabeledArray> {
    load_array_auto(path).with_context(|| format!("reading {}", path.display()))
}

fn compare(gt: &Path, candidate: &Path, metric: MetricArg, output: &Output) -> Result<()> {
    let (g, i) = (load(gt)?, load(candidate)?);
    let results = match metric.single() {
        Some(name) => vec![Evaluation::new(&g, &i)?.metric(name)?],
        None => compare_all(&g, &i)?.results.into_values().collect(),
    };
    let eval = Evaluation::new(&g, &i)?;
    if output.json {
        let mut metrics = serde_json::Map::new();
        for r in &results {
            metrics.insert(
                r.metric.to_string(),
                json!({ "value": r.value, "degenerate": r.degenerate }),
            );
        }
        if metric.single().is_none() && !eval.is_binary() {
            metrics.insert("bsm".into(), serde_json::Value::Null);
        }
        let m = eval.mapping();
        return emit_json(
            output,
            &json!({
                "metrics": metrics,
                "mismatched_pixels": m.mismatched_pixels,
                "u": m.u,
                "v": m.v,
                "pixels": m.total,
                "degenerate": m.degenerate,
            }),
        );
    }
    let mut text = String::new();
    for r in &results {
        let flag = if r.degenerate { "\tdegenerate" } else { "" };
        text.push_str(&format!("{}\t{}{flag}\n", r.metric, r.value));
    }
    if metric.single().is_none() && !eval.is_binary() {
        text.push_str("bsm\tn/a\n");
    }
    emit(output, &text)
}

fn sweep(input: &Path, kind: &str, steps: usize, seed: u64, fg: u32, output: &Output) -> Result<()> {
    let base = load(input)?;
    let mut spec = SweepSpec::new(kind.parse::<SweepKind>()?, steps, seed);
    spec.foreground_label = fg;
    let result = run_sweep(&base, &spec)?;
    if output.json {
        emit_json(output, &serde_json::to_value(&result.rows)?)
    } else {
        emit(output, &result.to_csv())
    }
}

fn matrix_inputs(inputs: &[PathBuf]) -> Result<(Vec<String>, Vec<PathBuf>)> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && Format::from_path(f).is_some())
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    let ids = files
        .iter()
        .map(|f| {
            f.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| f.display().to_string())
        })
        .collect();
    Ok((ids, files))
}

fn matrix(
    inputs: &[PathBuf],
    metric: MetricArg,
    direction: DirectionArg,
    threshold: f64,
    output: &Output,
) -> Result<()> {
    let metric = metric.require_single()?;
    let (ids, files) = matrix_inputs(inputs)?;
    let arrays = files.iter().map(|f| load(f)).collect::<Result<Vec<_>>>()?;
    let direction = match direction {
        DirectionArg::Row => Direction::RowAsGt,
        DirectionArg::Col => Direction::ColAsGt,
    };
    let table = distance_table_named(&ids, &arrays, metric, direction)?;
    if output.json {
        emit_json(
            output,
            &json!({ "table": table, "agreement": agreement_stats(&table, threshold) }),
        )
    } else {
        emit(output, &table.to_csv())
    }
}

fn sum(masks: &[PathBuf], output: &Output) -> Result<()> {
    let arrays = masks.iter().map(|f| load(f)).collect::<Result<Vec<_>>>()?;
    let image = sum_image(&arrays)?;
    if output.json {
        return emit_json(output, &serde_json::to_value(&image)?);
    }
    match &output.out {
        Some(path) => Ok(write_atomic(path, &image.to_pgm()?)?),
        None => emit(output, &labeldist::io::encode_csv(&image.to_labeled_array())),
    }
}

fn elo(
    choices: &Path,
    scene: Option<&str>,
    shuffle: bool,
    seed: u64,
    distances: Option<&Path>,
    output: &Output,
) -> Result<()> {
    let text = std::fs::read_to_string(choices)
        .with_context(|| format!("reading {}", choices.display()))?;
    let is_log = text.lines().next().map(str::trim) == Some(ChoiceRecord::CSV_HEADER);
    let ratings: EloRatings = if is_log {
        let records = read_choice_log(&text)?;
        let scene = match scene {
            Some(s) => s.to_string(),
            None => {
                let mut scenes: Vec<&str> = records.iter().map(|r| r.scene.as_str()).collect();
                scenes.sort();
                scenes.dedup();
                match scenes.as_slice() {
                    [one] => one.to_string(),
                    [] => bail!(Error::InvalidConfig("choice log is empty".into())),
                    _ => bail!(Error::InvalidConfig(format!(
                        "log holds scenes {}; pick one with --scene",
                        scenes.join(", ")
                    ))),
                }
            }
        };
        let mut ids: Vec<String> = Vec::new();
        for r in records.iter().filter(|r| r.scene == scene) {
            for id in [&r.winner, &r.loser] {
                if !ids.contains(id) {
                    ids.push(id.clone());
                }
            }
        }
        ids.sort();
        replay(ids, &log_sequence(&records, &scene))?
    } else {
        let matrix = ChoiceMatrix::from_csv(&text)?;
        let order = if shuffle {
            ReplayOrder::Shuffled(seed)
        } else {
            ReplayOrder::RowMajor
        };
        run_tournament(&matrix, &replay_sequence(&matrix, order))?
    };
    if let Some(path) = distances {
        write_atomic(path, elo_distance_matrix(&ratings).to_csv().as_bytes())?;
    }
    let ranking = ratings.ranking();
    if output.json {
        return emit_json(
            output,
            &json!({ "ratings": ratings.ratings, "ranking": ranking, "total": ratings.total() }),
        );
    }
    let mut text = String::from("rank,id,rating\n");
    for (k, id) in ranking.iter().enumerate() {
        text.push_str(&format!("{},{id},{}\n", k + 1, ratings.ratings[id]));
    }
    emit(output, &text)
}

fn read_table(path: &Path) -> Result<DistanceTable> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(DistanceTable::from_csv(&text, name)?)
}

fn regress(x: &Path, y: &Path, output: &Output) -> Result<()> {
    let (tx, ty) = (read_table(x)?, read_table(y)?);
    if tx.ids != ty.ids {
        bail!(Error::InvalidConfig(format!(
            "tables list different ids: {:?} vs {:?}",
            tx.ids, ty.ids
        )));
    }
    let report = ols_fit(&tx.upper_triangle(), &ty.upper_triangle())?;
    if output.json {
        return emit_json(output, &serde_json::to_value(report)?);
    }
    emit(
        output,
        &format!(
            "slope\t{}\nintercept\t{}\nr2\t{}\np\t{}\nn\t{}\n",
            report.slope, report.intercept, report.r_squared, report.p_value, report.n
        ),
    )
}

#[allow(clippy::too_many_arguments)]
fn search(
    image: &Path,
    gt: &Path,
    metric: FitnessArg,
    seed: u64,
    population: Option<usize>,
    generations: Option<usize>,
    history: Option<&Path>,
    output: &Output,
) -> Result<()> {
    let raster = Raster::load(image).with_context(|| format!("reading {}", image.display()))?;
    let gt = load(gt)?;
    let mut config = SearchConfig {
        seed,
        metric: match metric {
            FitnessArg::Lad => MetricName::Lad,
            FitnessArg::Madlad => MetricName::Madlad,
        },
        ..SearchConfig::default()
    };
    if let Some(p) = population {
        config.population = p;
    }
    if let Some(g) = generations {
        config.generations = g;
    }
    let report = evolve(&config, &raster, &gt)?;
    if let Some(path) = history {
        write_atomic(path, report.history_csv().as_bytes())?;
    }
    if output.json {
        return emit_json(
            output,
            &json!({
                "best_genome": report.best_genome,
                "best_fitness": report.best_fitness,
                "history": report.history,
            }),
        );
    }
    match &output.out {
        Some(path) => {
            let best = apply_genome(&report.best_genome, &raster)?;
            labeldist::io::save_array(&best, path, Format::from_path(path).unwrap_or(Format::Pgm))?;
        }
        None => {
            let g = &report.best_genome;
            println!(
                "fitness\t{}\nchannel\t{:?}\nthreshold\t{}\ninvert\t{}\nmorph\t{:?}\nfootprint\t{}",
                report.best_fitness, g.channel, g.threshold, g.invert, g.morph_op, g.footprint_side
            );
        }
    }
    Ok(())
}

fn serve(
    scenes: PathBuf,
    host: std::net::IpAddr,
    port: u16,
    seed: u64,
    static_dir: Option<PathBuf>,
) -> Result<()> {
    let config = ServerConfig {
        scenes_dir: scenes,
        static_dir,
        seed,
        addr: (host, port).into(),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(labeldist_server::serve(config))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Compare {
            gt,
            candidate,
            metric,
            output,
        } => compare(&gt, &candidate, metric, &output),
        Command::Sweep {
            input,
            kind,
            steps,
            seed,
            foreground,
            output,
        } => sweep(&input, &kind, steps, seed, foreground, &output),
        Command::Matrix {
            inputs,
            metric,
            direction,
            threshold,
            output,
        } => matrix(&inputs, metric, direction, threshold, &output),
        Command::Sum { masks, output } => sum(&masks, &output),
        Command::Elo {
            choices,
            scene,
            shuffle,
            seed,
            distances,
            output,
        } => elo(&choices, scene.as_deref(), shuffle, seed, distances.as_deref(), &output),
        Command::Regress { x, y, output } => regress(&x, &y, &output),
        Command::Search {
            image,
            gt,
            metric,
            seed,
            population,
            generations,
            history,
            output,
        } => search(&image, &gt, metric, seed, population, generations, history.as_deref(), &output),
        Command::Serve {
            scenes,
            port,
            host,
            seed,
            static_dir,
        } => serve(scenes, host, port, seed, static_dir),
    }
}

fn core_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Parse { .. } | Error::Range { .. } => 2,
        Error::ShapeMismatch(..) | Error::InvalidShape { .. } => 3,
        Error::Inapplicable { .. } | Error::NotBinary(_) => 4,
        Error::InvalidConfig(_) | Error::UnknownId(_) | Error::InconsistentSequence(_) => 5,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return core_code(e);
        }
        if let Some(e) = cause.downcast_ref::<ServerError>() {
            return match e {
                ServerError::Core(e) => core_code(e),
                ServerError::Io(_) => 2,
                ServerError::Scene(_) => 5,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(5) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
