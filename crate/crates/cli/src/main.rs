use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use uadan::datagen::{save_dataset, Benchmark, Dataset, Image, SPLITS};
use uadan::evaluation::{
    class_variance, error_analysis, evaluate, matched_instance_features, pr_curves, sample_per_class, write_json,
    DetectionsFile, ErrorAnalysis, EvalResult,
};
use uadan::experiment::{ablate, best_xi_per_seed, sweep_xi, ExperimentSpec, GridTable};
use uadan::plot::{bar_chart, line_chart, loss_curve, pca_2d, scatter, write_svg, Series};
use uadan::seeding::{rng_for, Stream};
use uadan::training::{
    run_id, train, RunOptions, RunSummary, TrainData, TrainHistory, DETECTIONS_FILE, HISTORY_FILE, SUMMARY_FILE,
};
use uadan::{AblationMode, Checkpoint, Error};

/// Features per class kept for the variance report and the scatter plot.
const FEATURES_PER_CLASS: usize = 200;

#[derive(Parser, Debug)]
#[command(name = "uadan", version, about = "Uncertainty-aware domain-adaptive detection on synthetic shapes")]
struct Cli {
    /// Experiment file (TOML or JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root for data, runs, tables and plots.
    #[arg(long, global = true, env = "UADAN_OUT", default_value = "uadan-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the source, target_train and target_eval splits.
    Gen {
        /// Benchmark seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace an existing dataset directory.
        #[arg(long)]
        force: bool,
    },
    /// Train one model.
    Train {
        #[arg(long)]
        mode: Option<AblationMode>,
        #[arg(long)]
        xi: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iters: Option<u64>,
        /// Discard a finished or partial run with the same id.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint on the held-out target split.
    Eval {
        checkpoint: PathBuf,
        /// Dataset directory; defaults to the checkpoint's target_eval split.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Reference detections file for the error analysis.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Train every ablation mode over the seed list.
    Ablate {
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long)]
        xi: Option<f64>,
    },
    /// Train the full method at each gate threshold over the seed list.
    SweepXi {
        /// Comma-separated thresholds; the experiment file's list otherwise.
        #[arg(long, value_delimiter = ',')]
        xi: Vec<f64>,
        #[arg(long)]
        iters: Option<u64>,
    },
    /// Write SVG charts for every run and table under the output root.
    Plot,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Refused(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::NonFinite { .. }) => 3,
            CliError::Core(Error::Io { .. } | Error::Checkpoint(_) | Error::Json(_) | Error::Image(_)) => 4,
            CliError::Core(Error::Config(_)) => 2,
            CliError::Core(_) => 1,
            CliError::Refused(_) => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Refused(m) => f.write_str(m),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let mut spec = match &cli.config {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::default(),
    };
    let out = cli.out.as_path();
    match &cli.command {
        Command::Gen { seed, force } => {
            if let Some(s) = seed {
                spec.benchmark.seed = *s;
            }
            cmd_gen(&spec, out, *force)
        }
        Command::Train {
            mode,
            xi,
            seed,
            iters,
            force,
        } => {
            apply_iters(&mut spec, *iters);
            let cfg = spec.cell_config(
                out,
                mode.unwrap_or(spec.train.mode),
                xi.unwrap_or(spec.train.xi),
                seed.unwrap_or(spec.train.seed),
            );
            spec.train = cfg;
            spec.validate()?;
            cmd_train(&spec, out, *force)
        }
        Command::Eval {
            checkpoint,
            data,
            compare,
        } => cmd_eval(checkpoint, data.as_deref(), compare.as_deref(), out),
        Command::Ablate { iters, xi } => {
            apply_iters(&mut spec, *iters);
            if let Some(x) = xi {
                spec.train.xi = *x;
            }
            let data = load_data(&spec, out)?;
            let table = ablate(&spec, &data, out)?;
            finish_table(&table, out, "ablation")
        }
        Command::SweepXi { xi, iters } => {
            apply_iters(&mut spec, *iters);
            if !xi.is_empty() {
                spec.xi_values = xi.clone();
            }
            let data = load_data(&spec, out)?;
            let mut table = sweep_xi(&spec, &spec.xi_values, &data, out)?;
            for (seed, best) in best_xi_per_seed(&table, &spec.xi_values) {
                table.notes.push(format!("seed {seed}: best xi = {best}"));
            }
            finish_table(&table, out, "sweep_xi")
        }
        Command::Plot => cmd_plot(out),
    }
}

fn apply_iters(spec: &mut ExperimentSpec, iters: Option<u64>) {
    if let Some(n) = iters {
        spec.train.schedule = spec.train.schedule.with_total(n);
    }
}

fn load_data(spec: &ExperimentSpec, out: &Path) -> CliResult<TrainData> {
    let root = spec.data_root(out);
    if !root.join(SPLITS[0]).exists() {
        return Err(CliError::Refused(format!(
            "no dataset at {}; run `uadan gen` first",
            root.display()
        )));
    }
    Ok(TrainData::load(&spec.cell_config(out, spec.train.mode, spec.train.xi, spec.train.seed).data)?)
}

fn cmd_gen(spec: &ExperimentSpec, out: &Path, force: bool) -> CliResult<()> {
    let root = spec.data_root(out);
    let existing: Vec<PathBuf> = SPLITS.iter().map(|s| root.join(s)).filter(|p| p.exists()).collect();
    if !existing.is_empty() {
        if !force {
            return Err(CliError::Refused(format!(
                "{} already exists; pass --force to regenerate",
                existing[0].display()
            )));
        }
        for p in &existing {
            std::fs::remove_dir_all(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
        }
    }
    let bench = Benchmark::generate(&spec.benchmark)?;
    for (name, ds) in SPLITS.iter().zip([&bench.source, &bench.target_train, &bench.target_eval]) {
        save_dataset(ds, &root.join(name))?;
        println!("{name}: {} images -> {}", ds.len(), root.join(name).display());
    }
    Ok(())
}

fn cmd_train(spec: &ExperimentSpec, out: &Path, force: bool) -> CliResult<()> {
    let cfg = &spec.train;
    let dir = out.join("runs").join(run_id(cfg));
    if dir.exists() {
        let finished = dir.join(SUMMARY_FILE).exists();
        if force {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })?;
        } else if finished {
            return Err(CliError::Refused(format!(
                "{} holds a finished run; pass --force to retrain",
                dir.display()
            )));
        } else {
            log::info!("resuming {}", dir.display());
        }
    }
    let data = load_data(spec, out)?;
    let outcome = train(
        cfg,
        &data,
        &RunOptions {
            out_dir: Some(dir.clone()),
            resume: true,
            periodic_eval: spec.periodic_eval,
            ..Default::default()
        },
    )?;
    print_summary(&outcome.summary);
    println!("artefacts in {}", dir.display());
    Ok(())
}

fn print_summary(s: &RunSummary) {
    println!(
        "{}: mode {} xi {} seed {} iterations {} target mAP {:.2}%",
        s.run_id,
        s.mode,
        s.xi,
        s.seed,
        s.iterations,
        100.0 * s.final_eval.map
    );
    for (c, ap) in &s.final_eval.per_class_ap {
        println!("  class {c}: AP {:.2}%", 100.0 * ap);
    }
}

#[derive(serde::Serialize)]
struct EvalReport<'a> {
    run_id: String,
    code_version: &'static str,
    config_hash: &'a str,
    seed: u64,
    checkpoint_iteration: u64,
    dataset: PathBuf,
    #[serde(flatten)]
    result: &'a EvalResult,
}

fn cmd_eval(ckpt_path: &Path, data: Option<&Path>, compare: Option<&Path>, out: &Path) -> CliResult<()> {
    let ck = Checkpoint::load(ckpt_path)?;
    let id = run_id(&ck.config);
    let data_dir = data.map(Path::to_path_buf).unwrap_or_else(|| ck.config.data.target_eval.clone());
    let ds: Dataset = uadan::datagen::load_dataset(&data_dir)?;
    let images: Vec<&Image> = ds.samples.iter().map(|s| &s.image).collect();
    let gt = ds.eval_labels().to_vec();
    let (result, dets) = evaluate(&ck.model, &images, &gt)?;
    let eval_dir = out.join("eval").join(&id);
    let report = EvalReport {
        run_id: id.clone(),
        code_version: env!("CARGO_PKG_VERSION"),
        config_hash: &ck.config_hash,
        seed: ck.config.seed,
        checkpoint_iteration: ck.iteration,
        dataset: data_dir.clone(),
        result: &result,
    };
    write_json(&eval_dir.join("metrics.json"), &report)?;
    let dets = DetectionsFile { images: dets };
    dets.save(&eval_dir.join(DETECTIONS_FILE))?;
    println!("{id}: mAP {:.2}% on {}", 100.0 * result.map, data_dir.display());

    if let Some(reference) = compare {
        let other = DetectionsFile::load(reference)?;
        let ea: ErrorAnalysis = error_analysis(&other.images, &dets.images, &gt, ck.model.config().classes)?;
        write_json(&eval_dir.join("error_analysis.json"), &ea)?;
        println!(
            "  vs {}: recovered {:.1}% of missed objects, lost {:.1}% of found ones",
            reference.display(),
            100.0 * ea.recovered_tp_rate,
            100.0 * ea.induced_fn_rate
        );
    }

    let features = matched_instance_features(&ck.model, &images, &gt)?;
    let kept = sample_per_class(&features, FEATURES_PER_CLASS, &mut rng_for(ck.config.seed, Stream::Variance, 0));
    match class_variance(&kept) {
        Ok(v) => {
            write_json(&eval_dir.join("variance.json"), &v)?;
            println!("  feature variance: within {:.4}, between {:.4}", v.sigma_w2, v.sigma_b2);
        }
        Err(e @ Error::SingleClass(_)) => log::warn!("variance report skipped: {e}"),
        Err(e) => return Err(e.into()),
    }

    let plots = out.join("plots");
    let curves: Vec<Series> = pr_curves(&dets.images, &gt, ck.model.config().classes)
        .into_iter()
        .map(|(c, points)| Series {
            name: format!("class {c}"),
            points,
        })
        .collect();
    write_svg(
        &plots.join(format!("{id}_pr.svg")),
        &line_chart(&format!("{id} precision-recall"), "recall", "precision", &curves),
    )?;
    if !kept.is_empty() {
        let rows: Vec<Vec<f64>> = kept.iter().map(|(f, _)| f.clone()).collect();
        let pts: Vec<(f64, f64, usize)> = pca_2d(&rows).into_iter().zip(&kept).map(|((x, y), (_, c))| (x, y, *c)).collect();
        write_svg(
            &plots.join(format!("{id}_features.svg")),
            &scatter(&format!("{id} instance features (PCA, not t-SNE)"), &pts),
        )?;
    }
    if let Some(hist) = run_dir_of(ckpt_path).map(|d| d.join(HISTORY_FILE)).filter(|p| p.exists()) {
        let h = TrainHistory::load_jsonl(&hist)?;
        write_svg(&plots.join(format!("{id}_loss.svg")), &loss_curve(&h, &format!("{id} training loss")))?;
    }
    println!("  reports in {}, plots in {}", eval_dir.display(), plots.display());
    Ok(())
}

/// `<run>/checkpoints/x.ckpt` -> `<run>`.
fn run_dir_of(ckpt: &Path) -> Option<&Path> {
    ckpt.parent().filter(|p| p.ends_with("checkpoints")).and_then(Path::parent)
}

fn finish_table(table: &GridTable, out: &Path, stem: &str) -> CliResult<()> {
    let dir = out.join("tables");
    table.save(&dir, stem)?;
    print!("{}", table.render());
    println!("tables in {}", dir.display());
    let failed: usize = table.rows.iter().map(|r| r.failures.len()).sum();
    if failed > 0 {
        log::warn!("{failed} grid cell(s) failed; see the table for details");
    }
    Ok(())
}

fn cmd_plot(out: &Path) -> CliResult<()> {
    let plots = out.join("plots");
    let mut written = 0usize;
    let runs = out.join("runs");
    if runs.is_dir() {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(&runs)
            .map_err(|e| Error::Io {
                path: runs.clone(),
                source: e,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(HISTORY_FILE).exists())
            .collect();
        dirs.sort();
        for d in dirs {
            let id = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let h = TrainHistory::load_jsonl(&d.join(HISTORY_FILE))?;
            write_svg(&plots.join(format!("{id}_loss.svg")), &loss_curve(&h, &format!("{id} training loss")))?;
            written += 1;
        }
    }
    let tables = out.join("tables");
    if let Some(t) = read_table(&tables.join("ablation.json"))? {
        let bars: Vec<(String, f64, f64)> = t
            .rows
            .iter()
            .filter_map(|r| r.stats.map(|s| (r.label.clone(), s.median, s.std)))
            .collect();
        write_svg(&plots.join("ablation.svg"), &bar_chart(&t.title, "median mAP (%)", &bars))?;
        written += 1;
    }
    if let Some(t) = read_table(&tables.join("sweep_xi.json"))? {
        let xi_of = |label: &str| label.trim_start_matches("xi=").parse::<f64>().ok();
        let mut series = vec![Series {
            name: "median".into(),
            points: t.rows.iter().filter_map(|r| Some((xi_of(&r.label)?, r.median()?))).collect(),
        }];
        for &seed in &t.seeds {
            series.push(Series {
                name: format!("seed {seed}"),
                points: t.rows.iter().filter_map(|r| Some((xi_of(&r.label)?, *r.maps.get(&seed)?))).collect(),
            });
        }
        write_svg(&plots.join("sweep_xi.svg"), &line_chart(&t.title, "xi", "mAP (%)", &series))?;
        written += 1;
    }
    println!("{written} chart(s) in {}", plots.display());
    Ok(())
}

fn read_table(path: &Path) -> CliResult<Option<GridTable>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(Some(serde_json::from_str(&text).map_err(Error::from)?))
}
