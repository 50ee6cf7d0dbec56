mod manifest;
mod settings;

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use coffee_core::harness::{self, ExperimentConfig, Scenario, SplitPlan};
use coffee_core::ingest::{self, FileFormat};
use coffee_core::models::{LevelSelection, ModelConfig, ModelKind, Observation, Query};
use coffee_core::persist::ModelBundle;
use coffee_core::tensor::HooiOptions;
use coffee_core::RatingTable;
use coffee_service::{AppState, RatingInput, RecommendRequest, ServedModel, Titles};
use serde_json::json;

use manifest::{DatasetStats, Manifest};
use settings::{parse_mlrank, parse_ratings, FileConfig};

#[derive(Debug, Parser)]
#[command(name = "coffee", version, about = "Tensor collaborative filtering over rating levels")]
struct Cli {
    /// Worker threads (default: one per core)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML settings file; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Manifest path (default: next to the main output)
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and filter a ratings file and print dataset statistics
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        /// Write the filtered ratings as CSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit one model on the whole dataset and save it
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "coffee")]
        model: ModelKind,
        #[command(flatten)]
        params: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated top-n evaluation
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated models
        #[arg(long, value_delimiter = ',')]
        models: Vec<ModelKind>,
        /// Comma-separated scenarios: negative_K, random_K, all
        #[arg(long, value_delimiter = ',')]
        scenarios: Vec<Scenario>,
        #[arg(long)]
        folds: Option<usize>,
        /// Held-out items per test user
        #[arg(long)]
        holdout: Option<usize>,
        #[arg(long)]
        topn_max: Option<usize>,
        #[command(flatten)]
        params: ModelArgs,
        /// Ranked lists produced elsewhere, as NAME=PATH
        #[arg(long = "import", value_name = "NAME=PATH")]
        imports: Vec<String>,
        /// Tab-separated report (default: stdout)
        #[arg(long)]
        report: Option<PathBuf>,
        /// JSON curves (default: <report>.curves.json)
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Predict each test user's top-rated item with CoFFee
    RateExperiment {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        folds: Option<usize>,
        #[command(flatten)]
        params: ModelArgs,
        /// JSON report (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fold in a new user's ratings and print recommendations
    Recommend {
        #[arg(long)]
        model_file: PathBuf,
        /// Ratings as item:rating,item:rating
        #[arg(long, allow_hyphen_values = true)]
        ratings: String,
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// sum, highest, or zero-based levels such as 3,4
        #[arg(long)]
        positive_levels: Option<LevelSelection>,
        /// movies.dat or movies.csv
        #[arg(long)]
        titles: Option<PathBuf>,
    },
    /// Serve the JSON API
    Serve {
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        model_file: Option<PathBuf>,
        #[arg(long)]
        titles: Option<PathBuf>,
        /// Allowed CORS origin (default: any)
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Ratings file (.dat or .csv)
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    format: Option<FileFormat>,
    /// stars, half-stars or auto
    #[arg(long)]
    scale: Option<String>,
    /// Ratings above this value are positive
    #[arg(long)]
    threshold: Option<f64>,
    /// Drop users with fewer ratings
    #[arg(long)]
    min_ratings: Option<usize>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// PureSVD rank
    #[arg(long)]
    rank: Option<usize>,
    /// CoFFee multilinear rank r1,r2,r3
    #[arg(long, value_parser = parse_mlrank)]
    mlrank: Option<[usize; 3]>,
    /// kNN neighbourhood size
    #[arg(long)]
    neighbors: Option<usize>,
    /// CoFFee ranking levels: sum, highest, or zero-based levels such as 3,4
    #[arg(long)]
    positive_levels: Option<LevelSelection>,
    /// HOOI sweep limit
    #[arg(long)]
    max_iters: Option<usize>,
    /// HOOI convergence tolerance
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn usage(kind: ErrorKind, message: impl std::fmt::Display) -> ! {
    Cli::command().error(kind, message).exit()
}

impl ModelArgs {
    /// Reject flags that none of `kinds` uses.
    fn check(&self, kinds: &[ModelKind]) {
        let uses = |k: ModelKind| kinds.contains(&k);
        let flags = [
            ("--rank", self.rank.is_some(), uses(ModelKind::PureSvd), "puresvd"),
            ("--mlrank", self.mlrank.is_some(), uses(ModelKind::Coffee), "coffee"),
            ("--positive-levels", self.positive_levels.is_some(), uses(ModelKind::Coffee), "coffee"),
            ("--max-iters", self.max_iters.is_some(), uses(ModelKind::Coffee), "coffee"),
            ("--tol", self.tol.is_some(), uses(ModelKind::Coffee), "coffee"),
            ("--neighbors", self.neighbors.is_some(), uses(ModelKind::Knn), "knn"),
        ];
        for (flag, given, used, owner) in flags {
            if given && !used {
                usage(
                    ErrorKind::ArgumentConflict,
                    format!("{flag} only applies to the {owner} model"),
                );
            }
        }
    }

    fn model_config(&self, kind: ModelKind, file: &FileConfig) -> ModelConfig {
        let mut c = ModelConfig::new(kind);
        if let Some(r) = self.rank.or(file.rank) {
            c.rank = r;
        }
        if let Some(r) = self.mlrank.or(file.mlrank) {
            c.mlrank = r;
        }
        c.neighbors = self.neighbors.or(file.neighbors);
        if let Some(p) = &self.positive_levels {
            c.positive_levels = p.clone();
        } else if let Some(p) = &file.positive_levels {
            c.positive_levels = p
                .parse()
                .unwrap_or_else(|e| usage(ErrorKind::InvalidValue, format!("positive_levels: {e}")));
        }
        c.seed = self.seed.or(file.seed).unwrap_or(0);
        c
    }

    fn hooi(&self, file: &FileConfig) -> HooiOptions {
        let d = HooiOptions::default();
        HooiOptions {
            max_iters: self.max_iters.or(file.max_iters).unwrap_or(d.max_iters),
            tol: self.tol.or(file.tol).unwrap_or(d.tol),
            seed: self.seed.or(file.seed).unwrap_or(0),
            ..d
        }
    }
}

struct Loaded {
    table: RatingTable,
    stats: DatasetStats,
    settings: serde_json::Value,
}

fn load_data(args: &DataArgs, file: &FileConfig) -> Result<Loaded> {
    let Some(path) = args.data.clone().or_else(|| file.data.clone()) else {
        usage(ErrorKind::MissingRequiredArgument, "a ratings file is required: pass --data or set `data` in --config");
    };
    if !path.is_file() {
        usage(ErrorKind::ValueValidation, format!("ratings file {} does not exist", path.display()));
    }
    let format = settings::resolve_format(args.format, file.format.as_deref(), &path)?;
    let raw = ingest::parse_movielens(&path, format)?;
    let scale_name = args.scale.clone().or_else(|| file.scale.clone()).unwrap_or_else(|| "auto".into());
    let scale = settings::resolve_scale(&scale_name, args.threshold.or(file.threshold), &raw)?;
    let min_ratings = args.min_ratings.or(file.min_ratings).unwrap_or(20);
    let raw_users = raw.iter().map(|r| r.user_id).collect::<HashSet<_>>().len();
    let table = ingest::build_table(&raw, min_ratings, scale)?;
    log::info!(
        "{}: {} users, {} items, {} ratings (from {} ratings by {} users)",
        path.display(),
        table.n_users(),
        table.n_items(),
        table.len(),
        raw.len(),
        raw_users
    );
    let stats = DatasetStats::new(&path, raw.len(), raw_users, &table)?;
    let settings = json!({
        "data": path,
        "format": format,
        "scale": table.scale(),
        "min_ratings": min_ratings,
    });
    Ok(Loaded { table, stats, settings })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn merge(mut base: serde_json::Value, extra: serde_json::Value) -> serde_json::Value {
    if let (Some(b), serde_json::Value::Object(e)) = (base.as_object_mut(), extra) {
        b.extend(e);
    }
    base
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            usage(ErrorKind::InvalidValue, "--threads must be at least 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let manifest_path = cli.manifest.as_deref();
    match cli.command {
        Command::Ingest { data, out } => ingest_cmd(&data, out.as_deref(), &file, manifest_path),
        Command::Train {
            data,
            model,
            params,
            out,
        } => {
            params.check(&[model]);
            train_cmd(&data, model, &params, &out, &file, manifest_path)
        }
        Command::Evaluate {
            data,
            models,
            scenarios,
            folds,
            holdout,
            topn_max,
            params,
            imports,
            report,
            curves,
        } => {
            let models = if !models.is_empty() {
                models
            } else if let Some(names) = &file.models {
                names
                    .iter()
                    .map(|n| n.parse())
                    .collect::<coffee_core::Result<_>>()
                    .unwrap_or_else(|e| usage(ErrorKind::InvalidValue, format!("models: {e}")))
            } else {
                vec![ModelKind::Coffee, ModelKind::PureSvd, ModelKind::Popular, ModelKind::Random]
            };
            params.check(&models);
            let scenarios = if !scenarios.is_empty() {
                scenarios
            } else if let Some(names) = &file.scenarios {
                names
                    .iter()
                    .map(|n| n.parse())
                    .collect::<coffee_core::Result<_>>()
                    .unwrap_or_else(|e| usage(ErrorKind::InvalidValue, format!("scenarios: {e}")))
            } else {
                Scenario::standard()
            };
            let imported = imports
                .iter()
                .map(|spec| read_import(spec))
                .collect::<Result<Vec<_>>>()?;
            if models.is_empty() && imported.is_empty() {
                usage(ErrorKind::InvalidValue, "nothing to evaluate");
            }
            let plan = SplitPlan {
                folds: folds.or(file.folds).unwrap_or(5),
                holdout_size: holdout.or(file.holdout).unwrap_or(10),
                seed: params.seed.or(file.seed).unwrap_or(0),
            };
            if plan.folds < 2 {
                usage(ErrorKind::InvalidValue, "--folds must be at least 2");
            }
            let max_n = topn_max.or(file.topn_max).unwrap_or(100);
            if max_n == 0 {
                usage(ErrorKind::InvalidValue, "--topn-max must be at least 1");
            }
            let config = ExperimentConfig {
                plan,
                scenarios,
                models: models.iter().map(|&k| params.model_config(k, &file)).collect(),
                max_n,
                hooi: params.hooi(&file),
                imported,
            };
            evaluate_cmd(&data, config, &imports, report.as_deref(), curves, &file, manifest_path)
        }
        Command::RateExperiment {
            data,
            folds,
            params,
            out,
        } => {
            params.check(&[ModelKind::Coffee]);
            let plan = SplitPlan {
                folds: folds.or(file.folds).unwrap_or(5),
                seed: params.seed.or(file.seed).unwrap_or(0),
                ..SplitPlan::default()
            };
            if plan.folds < 2 {
                usage(ErrorKind::InvalidValue, "--folds must be at least 2");
            }
            let loaded = load_data(&data, &file)?;
            let config = params.model_config(ModelKind::Coffee, &file);
            let hooi = params.hooi(&file);
            let report = harness::run_rating_cv(&loaded.table, &plan, &config, &hooi)?;
            let text = serde_json::to_string_pretty(&report)?;
            match &out {
                Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
                None => println!("{text}"),
            }
            let mut m = Manifest::new(
                "rate-experiment",
                merge(loaded.settings, json!({"model": config, "hooi": hooi_json(&hooi), "plan": plan})),
            );
            m.dataset = Some(loaded.stats);
            m.outputs.extend(out.clone());
            m.emit(manifest_path, out.as_deref())
        }
        Command::Recommend {
            model_file,
            ratings,
            n,
            positive_levels,
            titles,
        } => recommend_cmd(&model_file, &ratings, n, positive_levels, titles.as_deref(), manifest_path),
        Command::Serve {
            host,
            port,
            model_file,
            titles,
            cors_origin,
        } => {
            let model = model_file.as_deref().map(ServedModel::load).transpose()?;
            if model.is_none() {
                log::warn!("no --model-file given: /recommend will answer 503");
            }
            let titles = titles.as_deref().map(Titles::load).transpose()?.unwrap_or_default();
            let m = Manifest::new(
                "serve",
                json!({"host": host, "port": port, "model_file": model_file, "cors_origin": cors_origin}),
            );
            m.emit(manifest_path, None)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(coffee_service::serve(
                SocketAddr::new(host, port),
                AppState::new(model, titles),
                cors_origin.as_deref(),
            ))?;
            Ok(())
        }
    }
}

fn hooi_json(h: &HooiOptions) -> serde_json::Value {
    json!({"max_iters": h.max_iters, "tol": h.tol, "seed": h.seed})
}

fn read_import(spec: &str) -> Result<(String, std::collections::HashMap<u64, Vec<u64>>)> {
    let Some((name, path)) = spec.split_once('=') else {
        usage(ErrorKind::InvalidValue, format!("--import expects NAME=PATH, got `{spec}`"));
    };
    if name.is_empty() || name.parse::<ModelKind>().is_ok() {
        usage(ErrorKind::InvalidValue, format!("--import name `{name}` is empty or clashes with a model"));
    }
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening {path}"))?);
    let lists = harness::parse_ranked_lists(reader).with_context(|| format!("reading {path}"))?;
    Ok((name.to_string(), lists))
}

fn ingest_cmd(data: &DataArgs, out: Option<&Path>, file: &FileConfig, manifest_path: Option<&Path>) -> Result<()> {
    let loaded = load_data(data, file)?;
    if let Some(path) = out {
        let mut w = create(path)?;
        writeln!(w, "userId,movieId,rating,timestamp")?;
        let table = &loaded.table;
        for r in table.ratings() {
            let e = table.to_external(r);
            writeln!(w, "{},{},{},{}", e.user_id, e.item_id, table.value(r), e.timestamp)?;
        }
        w.flush()?;
    }
    println!("{}", serde_json::to_string_pretty(&loaded.stats)?);
    let mut m = Manifest::new("ingest", loaded.settings);
    m.dataset = Some(loaded.stats);
    m.outputs.extend(out.map(Path::to_path_buf));
    m.emit(manifest_path, out)
}

fn train_cmd(
    data: &DataArgs,
    kind: ModelKind,
    params: &ModelArgs,
    out: &Path,
    file: &FileConfig,
    manifest_path: Option<&Path>,
) -> Result<()> {
    let loaded = load_data(data, file)?;
    let config = params.model_config(kind, file);
    let hooi = params.hooi(file);
    let bundle = ModelBundle::fit(&loaded.table, &config, &hooi)?;
    bundle.save(out)?;
    let mut summary = json!({"model": kind, "out": out});
    if kind == ModelKind::Coffee {
        let t = bundle.tucker()?;
        log::info!("HOOI fit per sweep: {:?}", t.fit_history);
        summary["ranks"] = json!(t.ranks());
        summary["fit"] = json!(t.fit_history.last());
        summary["sweeps"] = json!(t.fit_history.len());
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    let mut m = Manifest::new(
        "train",
        merge(loaded.settings, json!({"model": config, "hooi": hooi_json(&hooi)})),
    );
    m.dataset = Some(loaded.stats);
    m.outputs.push(out.to_path_buf());
    m.emit(manifest_path, Some(out))
}

fn evaluate_cmd(
    data: &DataArgs,
    config: ExperimentConfig,
    imports: &[String],
    report_path: Option<&Path>,
    curves: Option<PathBuf>,
    file: &FileConfig,
    manifest_path: Option<&Path>,
) -> Result<()> {
    let loaded = load_data(data, file)?;
    let report = harness::run_experiment(&loaded.table, &config)?;
    for e in &report.entries {
        use coffee_core::metrics::Metric;
        let at = |m| e.curves.mean_at(m, 10.min(e.curves.max_n));
        log::info!(
            "{:<8} {:<11} P {:.4} R {:.4} nDCG {:.4} nDCL {:.4} (skipped {}, failed {})",
            e.model,
            e.scenario,
            at(Metric::Precision),
            at(Metric::Recall),
            at(Metric::Ndcg),
            at(Metric::Ndcl),
            e.skipped.iter().sum::<usize>(),
            e.failures.iter().sum::<usize>()
        );
    }
    let mut outputs = Vec::new();
    match report_path {
        Some(p) => {
            let mut w = create(p)?;
            report.write_tsv(&mut w)?;
            w.flush()?;
            outputs.push(p.to_path_buf());
        }
        None => {
            let stdout = io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            report.write_tsv(&mut w)?;
            w.flush()?;
        }
    }
    let curves = curves.or_else(|| report_path.map(|p| p.with_extension("curves.json")));
    if let Some(p) = &curves {
        let mut w = create(p)?;
        report.write_json(&mut w)?;
        w.flush()?;
        outputs.push(p.clone());
    }
    let settings = json!({
        "models": config.models,
        "imported": imports,
        "scenarios": config.scenarios.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        "plan": config.plan,
        "topn_max": config.max_n,
        "hooi": hooi_json(&config.hooi),
    });
    let mut m = Manifest::new("evaluate", merge(loaded.settings, settings));
    m.dataset = Some(loaded.stats);
    m.outputs = outputs;
    m.emit(manifest_path, report_path)
}

fn recommend_cmd(
    model_file: &Path,
    ratings: &str,
    n: usize,
    positive_levels: Option<LevelSelection>,
    titles: Option<&Path>,
    manifest_path: Option<&Path>,
) -> Result<()> {
    let ratings = parse_ratings(ratings).unwrap_or_else(|e| usage(ErrorKind::InvalidValue, e));
    if ratings.is_empty() {
        usage(ErrorKind::InvalidValue, "--ratings is empty: nothing to fold in");
    }
    if n == 0 {
        usage(ErrorKind::InvalidValue, "--n must be at least 1");
    }
    let bundle = ModelBundle::load(model_file)?;
    let titles = titles.map(Titles::load).transpose()?.unwrap_or_default();
    let stdout = io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    if bundle.kind == ModelKind::Coffee {
        let levels = positive_levels.as_ref().map(|p| p.resolve(&bundle.scale)).transpose()?;
        let served = ServedModel::from_bundle(&bundle)?;
        let req = RecommendRequest {
            ratings: ratings.iter().map(|&(item, rating)| RatingInput { item, rating }).collect(),
            n,
            positive_levels: levels,
        };
        let res = coffee_service::recommend(&served, &titles, &req).map_err(|e| match e {
            coffee_service::ApiError::BadRequest(m) => anyhow!(m),
            coffee_service::ApiError::NoModel => anyhow!("no model"),
        })?;
        writeln!(w, "rank\titem\tscore\tshades\ttitle")?;
        for (i, r) in res.items.iter().enumerate() {
            let shades: Vec<String> = r.shades.iter().map(|s| format!("{s:.6}")).collect();
            writeln!(
                w,
                "{}\t{}\t{:.6}\t{}\t{}",
                i + 1,
                r.item,
                r.score,
                shades.join(","),
                r.title.as_deref().unwrap_or("")
            )?;
        }
    } else {
        if positive_levels.is_some() {
            usage(ErrorKind::ArgumentConflict, "--positive-levels only applies to coffee models");
        }
        let mut seen = HashSet::new();
        let observed = ratings
            .iter()
            .map(|&(id, value)| {
                let item = bundle.items.index_of(id).ok_or_else(|| anyhow!("unknown item {id}"))?;
                if !seen.insert(item) {
                    return Err(anyhow!("item {id} rated more than once"));
                }
                Ok(Observation {
                    item,
                    level: bundle.scale.level(value)?,
                    value,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = bundle.recommender()?;
        let list = model.recommend(
            &Query {
                user_id: 0,
                observed: &observed,
                seed: bundle.config.seed,
            },
            n,
        )?;
        writeln!(w, "rank\titem\tscore\ttitle")?;
        for (i, &j) in list.items.iter().enumerate() {
            let id = bundle.items.id_of(j);
            let score = list
                .scores
                .as_ref()
                .map(|s| format!("{:.6}", s[i]))
                .unwrap_or_default();
            writeln!(w, "{}\t{id}\t{score}\t{}", i + 1, titles.get(id).unwrap_or(""))?;
        }
    }
    w.flush()?;
    let m = Manifest::new(
        "recommend",
        json!({
            "model_file": model_file,
            "model_sha256": manifest::file_sha256(model_file)?,
            "ratings": ratings,
            "n": n,
            "positive_levels": positive_levels,
        }),
    );
    m.emit(manifest_path, None)
}
