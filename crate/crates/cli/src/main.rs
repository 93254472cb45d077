mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use xampler::corpus::{load_candidates, load_dataset, save_candidates, Dataset, Role};
use xampler::dataconstruct::{construct_pairs, load_pairs, mine_candidates, save_pairs, ConstructOptions, Polarity};
use xampler::embedding::{load_embeddings, EmbeddingStore};
use xampler::eval::{
    emit_report, emit_sweeps, sweep_k, sweep_layers, sweep_shots, sweep_table, AblationTable, ReportFormat, ResultTable,
    SweepKInputs, SweepResult, AVG_ROW,
};
use xampler::pipeline::{require_complete, retrieve_all, run_icl, run_knn, EvalData, IclScoring};
use xampler::selftest::{run_selftest, SelftestConfig};
use xampler::trainer::{load_head, save_head, train, HeadMeta, RetrievalHead};

use config::{parse_assignment, require, CliError, CliResult, PipelineConfig};

#[derive(Parser, Debug)]
#[command(name = "xampler", version, about = "Train and evaluate cross-lingual few-shot example retrievers")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mine the top-k most similar training examples per training query.
    Mine(Common),
    /// Score every mined (query, candidate) pair with a 1-shot prompt.
    Construct(Common),
    /// Train a retrieval head on constructed pairs.
    Train(Common),
    /// Retrieve shots for every eval example and write them as JSONL.
    Retrieve(Common),
    /// Evaluate in-context learning with retrieved shots.
    EvalIcl(EvalArgs),
    /// Evaluate majority voting over retrieved shots.
    EvalKnn(EvalArgs),
    /// Rerun construct, train and ICL evaluation for several k.
    SweepK(SweepKArgs),
    /// KNN and/or ICL accuracy for several shot counts.
    SweepShots(SweepShotsArgs),
    /// KNN accuracy of the untrained retriever on several encoder layers.
    SweepLayers(Common),
    /// Recompute Avg rows of result tables and gaps of ablation tables.
    Aggregate(AggregateArgs),
    /// Run the whole pipeline on synthetic data with a mock scorer.
    Selftest(SelftestArgs),
}

/// Flags shared by the pipeline stages. Each one overrides a config key.
#[derive(Args, Debug, Default)]
struct Common {
    /// JSON pipeline config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set trainer.adamw.weight_decay=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// csv or markdown.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    eval: Vec<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    eval_embeddings: Option<PathBuf>,
    #[arg(long)]
    mining_embeddings: Option<PathBuf>,
    #[arg(long)]
    layer_embeddings: Vec<PathBuf>,
    #[arg(long)]
    candidates: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    head: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_pos_per_query: Option<usize>,
    /// label_aware or label_agnostic.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    shots: Option<usize>,
    /// asc (best shot nearest the query) or desc.
    #[arg(long)]
    order: Option<String>,
    /// mock or http.
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    scorer_url: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// similarity_gated or label_echo.
    #[arg(long)]
    mock_rule: Option<String>,
}

impl Common {
    fn overrides(&self) -> CliResult<Vec<(String, Value)>> {
        let mut out: Vec<(String, Value)> = Vec::new();
        let mut put = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                out.push((key.to_string(), v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| json!(p));
        let paths = |ps: &Vec<PathBuf>| (!ps.is_empty()).then(|| json!(ps));
        put("seed", self.seed.map(|v| json!(v)));
        put("format", self.format.as_ref().map(|v| json!(v)));
        put("paths.train", path(&self.train));
        put("paths.pool", path(&self.pool));
        put("paths.eval", paths(&self.eval));
        put("paths.embeddings", path(&self.embeddings));
        put("paths.eval_embeddings", path(&self.eval_embeddings));
        put("paths.mining_embeddings", path(&self.mining_embeddings));
        put("paths.layer_embeddings", paths(&self.layer_embeddings));
        put("paths.candidates", path(&self.candidates));
        put("paths.pairs", path(&self.pairs));
        put("paths.checkpoint", path(&self.checkpoint));
        put("paths.head", path(&self.head));
        put("paths.out", path(&self.out));
        put("paths.report", path(&self.report));
        put("k", self.k.map(|v| json!(v)));
        put("trainer.epochs", self.epochs.map(|v| json!(v)));
        put("trainer.batch_size", self.batch_size.map(|v| json!(v)));
        put("trainer.learning_rate", self.lr.map(|v| json!(v)));
        put("trainer.temperature", self.temperature.map(|v| json!(v)));
        put("trainer.max_pos_per_query", self.max_pos_per_query.map(|v| json!(v)));
        put("retrieval.mode", self.mode.as_ref().map(|v| json!(v)));
        put("retrieval.n_shots", self.shots.map(|v| json!(v)));
        put("retrieval.order", self.order.as_ref().map(|v| json!(v)));
        put("scorer.kind", self.scorer.as_ref().map(|v| json!(v)));
        put("scorer.url", self.scorer_url.as_ref().map(|v| json!(v)));
        put("scorer.parallelism", self.parallelism.map(|v| json!(v)));
        put("scorer.mock_rule", self.mock_rule.as_ref().map(|v| json!(v)));
        for s in &self.set {
            out.push(parse_assignment(s)?);
        }
        Ok(out)
    }

    fn load(&self, extra: Vec<(String, Value)>) -> CliResult<PipelineConfig> {
        let mut overrides = self.overrides()?;
        overrides.extend(extra);
        PipelineConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Column name in the report; "xampler" with a head, "identity" without.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args, Debug)]
struct SweepKArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    k_values: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
struct SweepShotsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    shot_values: Option<Vec<usize>>,
    /// Only KNN (default: both).
    #[arg(long)]
    knn: bool,
    /// Only ICL (default: both).
    #[arg(long)]
    icl: bool,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    /// Per-language result tables (CSV).
    #[arg(long, num_args = 1..)]
    fixtures: Vec<PathBuf>,
    /// Method/accuracy table; prints the reference method's gap over each other method.
    #[arg(long)]
    ablation: Option<PathBuf>,
    #[arg(long, default_value = "XAMPLER")]
    reference: String,
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("XAMPLER_LOG").init();

    let mut stdout = std::io::stdout().lock();
    match run(cli.command, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = stdout.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Core(xampler::Error::Io { path: "<stdout>".into(), source: e }))
}

fn run(command: Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Mine(c) => cmd_mine(&c.load(vec![])?, out),
        Command::Construct(c) => cmd_construct(&c.load(vec![])?, out),
        Command::Train(c) => cmd_train(&c.load(vec![])?, out),
        Command::Retrieve(c) => cmd_retrieve(&c.load(vec![])?, out),
        Command::EvalIcl(a) => cmd_eval(&a.common.load(vec![])?, a.method, true, out),
        Command::EvalKnn(a) => cmd_eval(&a.common.load(vec![])?, a.method, false, out),
        Command::SweepK(a) => {
            let extra = a.k_values.map(|v| ("k_values".to_string(), json!(v))).into_iter().collect();
            cmd_sweep_k(&a.common.load(extra)?, out)
        }
        Command::SweepShots(a) => {
            let extra = a.shot_values.map(|v| ("shot_values".to_string(), json!(v))).into_iter().collect();
            let (knn, icl) = if a.knn || a.icl { (a.knn, a.icl) } else { (true, true) };
            cmd_sweep_shots(&a.common.load(extra)?, knn, icl, out)
        }
        Command::SweepLayers(c) => cmd_sweep_layers(&c.load(vec![])?, out),
        Command::Aggregate(a) => cmd_aggregate(&a, out),
        Command::Selftest(a) => cmd_selftest(a.seed, out),
    }
}

fn load_train(cfg: &PipelineConfig) -> CliResult<Dataset> {
    Ok(load_dataset(require(&cfg.paths.train, "paths.train")?, Role::Train)?)
}

fn load_pool(cfg: &PipelineConfig) -> CliResult<Dataset> {
    match &cfg.paths.pool {
        Some(p) => Ok(load_dataset(p, Role::Train)?),
        None => load_train(cfg),
    }
}

fn load_eval_sets(cfg: &PipelineConfig) -> CliResult<Vec<Dataset>> {
    if cfg.paths.eval.is_empty() {
        return Err(CliError::Usage("missing config key paths.eval".into()));
    }
    cfg.paths
        .eval
        .iter()
        .map(|p| load_dataset(p, Role::Eval).map_err(CliError::from))
        .collect()
}

/// Pool store plus a separate eval store when one is configured.
fn load_stores(cfg: &PipelineConfig) -> CliResult<(EmbeddingStore, Option<EmbeddingStore>)> {
    let base = load_embeddings(require(&cfg.paths.embeddings, "paths.embeddings")?)?;
    let eval = match &cfg.paths.eval_embeddings {
        Some(p) if Some(p) != cfg.paths.embeddings.as_ref() => Some(load_embeddings(p)?),
        _ => None,
    };
    Ok((base, eval))
}

fn load_optional_head(cfg: &PipelineConfig) -> CliResult<Option<RetrievalHead>> {
    match &cfg.paths.head {
        Some(p) => Ok(Some(load_head(p)?.0)),
        None => Ok(None),
    }
}

fn output_path<'a>(cfg: &'a PipelineConfig, fallback: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
    match (&cfg.paths.out, fallback) {
        (Some(p), _) | (None, Some(p)) => Ok(p),
        (None, None) => Err(CliError::Usage(format!("missing config key paths.out (or {key})"))),
    }
}

fn mining_store(cfg: &PipelineConfig) -> CliResult<EmbeddingStore> {
    let path = cfg
        .paths
        .mining_embeddings
        .as_ref()
        .or(cfg.paths.embeddings.as_ref())
        .ok_or_else(|| CliError::Usage("missing config key paths.mining_embeddings".into()))?;
    Ok(load_embeddings(path)?)
}

fn cmd_mine(cfg: &PipelineConfig, out: &mut dyn Write) -> CliResult<()> {
    let train_set = load_train(cfg)?;
    let store = mining_store(cfg)?;
    let dest = output_path(cfg, &cfg.paths.candidates, "paths.candidates")?;
    let sets = mine_candidates(&train_set, &store, cfg.k)?;
    save_candidates(&sets, dest)?;
    write_out(out, &format!("mined {} candidate sets (k={}) -> {}\n", sets.len(), cfg.k, dest.display()))
}

fn cmd_construct(cfg: &PipelineConfig, out: &mut dyn Write) -> CliResult<()> {
    let train_set = load_train(cfg)?;
    let cands = match &cfg.paths.candidates {
        Some(p) => load_candidates(p)?,
        None => mine_candidates(&train_set, &mining_store(cfg)?, cfg.k)?,
    };
    let dest = output_path(cfg, &cfg.paths.pairs, "paths.pairs")?;
    let scorer = cfg.scorer.build()?;
    let opts = ConstructOptions {
        parallelism: cfg.scorer.parallelism,
        checkpoint: cfg.paths.checkpoint.clone(),
        ..ConstructOptions::default()
    };
    let pairs = construct_pairs(&train_set, &cands, scorer.as_ref(), &cfg.prompt, &opts)?;
    save_pairs(&pairs, dest)?;
    let positives = pairs.iter().filter(|p| p.polarity == Polarity::Positive).count();
    write_out(
        out,
        &format!(
            "constructed {} pairs ({} positive, {} negative), {} scorer calls -> {}\n",
            pairs.len(),
            positives,
            pairs.len() - positives,
            scorer.calls(),
            dest.display()
        ),
    )
}

fn cmd_train(cfg: &PipelineConfig, out: &mut dyn Write) -> CliResult<()> {
    let pairs = load_pairs(require(&cfg.paths.pairs, "paths.pairs")?)?;
    let store = load_embeddings(require(&cfg.paths.embeddings, "paths.embeddings")?)?;
    let dest = output_path(cfg, &cfg.paths.head, "paths.head")?;
    let (head, log) = train(&pairs, &store, &cfg.trainer)?;
    let meta = HeadMeta {
        d_in: head.d_in(),
        d_out: head.d_out(),
        activation: head.activation(),
        tau: cfg.trainer.temperature,
        seed: cfg.trainer.seed,
        epoch: cfg.trainer.epochs,
    };
    save_head(&head, &meta, dest)?;
    for (i, loss) in log.epoch_losses.iter().enumerate() {
        log::info!("epoch {}: loss {loss:.6}", i + 1);
    }
    write_out(
        out,
        &format!(
            "trained {} epochs, {} steps, {} queries skipped; loss {:.6} -> {:.6} -> {}\n",
            log.epoch_losses.len(),
            log.steps,
            log.skipped_queries,
            log.epoch_losses.first().copied().unwrap_or(f64::NAN),
            log.epoch_losses.last().copied().unwrap_or(f64::NAN),
            dest.display()
        ),
    )
}

fn cmd_retrieve(cfg: &PipelineConfig, out: &mut dyn Write) -> CliResult<()> {
    let pool = load_pool(cfg)?;
    let eval_sets = load_eval_sets(cfg)?;
    let (base, eval_store) = load_stores(cfg)?;
    let head = load_optional_head(cfg)?;
    let data = EvalData {
        pool: &pool,
        pool_store: &base,
        eval_sets: &eval_sets,
        eval_store: eval_store.as_ref().unwrap_or(&base),
    };
    let setting = cfg.retrieval.setting(&pool)?;
    let lists = retrieve_all(data, head.as_ref(), &setting, cfg.retrieval.order)?;
    let mut text = String::new();
    for list in &lists {
        text.push_str(&serde_json::to_string(list).expect("shot list serializes"));
        text.push('\n');
    }
    match &cfg.paths.out {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| xampler::Error::Io { path: p.clone(), source: e })?;
            write_out(out, &format!("retrieved shots for {} queries -> {}\n", lists.len(), p.display()))
        }
        None => write_out(out, &text),
    }
}

fn cmd_eval(cfg: &PipelineConfig, method: Option<String>, icl: bool, out: &mut dyn Write) -> CliResult<()> {
    let pool = load_pool(cfg)?;
    let eval_sets = load_eval_sets(cfg)?;
    let (base, eval_store) = load_stores(cfg)?;
    let head = load_optional_head(cfg)?;
    let data = EvalData {
        pool: &pool,
        pool_store: &base,
        eval_sets: &eval_sets,
        eval_store: eval_store.as_ref().unwrap_or(&base),
    };
    let setting = cfg.retrieval.setting(&pool)?;
    let method = method.unwrap_or_else(|| if head.is_some() { "xampler" } else { "identity" }.into());
    let evaluation = if icl {
        let scorer = cfg.scorer.build()?;
        let scoring = IclScoring {
            scorer: scorer.as_ref(),
            spec: &cfg.prompt,
            parallelism: cfg.scorer.parallelism,
            order: cfg.retrieval.order,
        };
        run_icl(data, head.as_ref(), &setting, scoring, &method)?
    } else {
        run_knn(data, head.as_ref(), &setting, &method)?
    };
    let failures: Vec<String> = evaluation
        .failures
        .iter()
        .map(|f| format!("failed: {} at {}: {}", f.language, f.example_id, f.message))
        .collect();
    let table = ResultTable::from_records(&evaluation.records);
    if !evaluation.records.is_empty() {
        if let Some(path) = &cfg.paths.report {
            let mut lines = vec![cfg.echo()];
            lines.extend(failures.iter().cloned());
            emit_report(&evaluation.records, cfg.format, &lines, path)?;
        }
        write_out(out, &table.render(cfg.format, &[], true)?)?;
    }
    require_complete(evaluation)?;
    Ok(())
}

fn clamp_notes(sweep: &SweepResult) -> Vec<String> {
    sweep
        .points
        .iter()
        .filter(|p| p.clamped())
        .map(|p| format!("{}={} clamped to {}", sweep.axis, p.value, p.effective_value))
        .collect()
}

fn sweep_report(cfg: &PipelineConfig, sweeps: &[SweepResult], out: &mut dyn Write) -> CliResult<()> {
    let notes: Vec<String> = sweeps.iter().flat_map(clamp_notes).collect();
    for n in &notes {
        write_out(out, &format!("# {n}\n"))?;
    }
    if let Some(path) = &cfg.paths.report {
        let mut lines = vec![cfg.echo()];
        lines.extend(notes.iter().cloned());
        emit_sweeps(sweeps, cfg.format, &lines, path)?;
    }
    write_out(out, &sweep_table(sweeps).render(cfg.format, &[], false)?)
}

fn cmd_sweep_k(cfg: &PipelineConfig, out: &mut dyn Write) -> CliResult<()> {
    let train_set = load_train(cfg)?;
    let mining = load_embeddings(require(&cfg.paths.mining_embeddings, "paths.mining_embeddings")?)?;
    let eval_sets = load_eval_sets(cfg)?;
    let (base, eval_store) = load_stores(cfg)?;
    let scorer = cfg.scorer.build()?;
    let inputs = SweepKInputs {
        train: &train_set,
        mining_store: &mining,
        eval: EvalData {
            pool: &train_set,
            pool_store: &base,
            eval_sets: &eval_sets,
            eval_store: eval_store.as_ref().unwrap_or(&base),
        },
        scoring: IclScoring {
            scorer: scorer.as_ref(),
            spec: &cfg.prompt,
            parallelism: cfg.scorer.parallelism,
            order: cfg.retrieval.order,
        },
        trainer: &cfg.trainer,
        setting: cfg.retrieval.setting(&train_set)?,
    };
    let sweep = sweep_k(&cfg.k_values, &inputs)?;
    sweep_report(cfg, &[sweep], out)
}

fn cmd_sweep_shots(cfg: &PipelineConfig, knn: bool, icl: bool, out: &mut dyn Write) -> CliResult<()> {
    let pool = load_pool(cfg)?;
    let eval_sets = load_eval_sets(cfg)?;
    let (base, eval_store) = load_stores(cfg)?;
    let head = load_optional_head(cfg)?;
    let data = EvalData {
        pool: &pool,
        pool_store: &base,
        eval_sets: &eval_sets,
        eval_store: eval_store.as_ref().unwrap_or(&base),
    };
    let scorer = if icl { Some(cfg.scorer.build()?) } else { None };
    let scoring = scorer.as_ref().map(|s| IclScoring {
        scorer: s.as_ref(),
        spec: &cfg.prompt,
        parallelism: cfg.scorer.parallelism,
        order: cfg.retrieval.order,
    });
    let sweep = sweep_shots(data, head.as_ref(), &cfg.shot_values, knn, scoring)?;
    let sweeps: Vec<SweepResult> = sweep.knn.into_iter().chain(sweep.icl).collect();
    sweep_report(cfg, &sweeps, out)
}

fn cmd_sweep_layers(cfg: &PipelineConfig, out: &mut dyn Write) -> CliResult<()> {
    if cfg.paths.layer_embeddings.is_empty() {
        return Err(CliError::Usage("missing config key paths.layer_embeddings".into()));
    }
    let pool = load_pool(cfg)?;
    let eval_sets = load_eval_sets(cfg)?;
    let stores = cfg
        .paths
        .layer_embeddings
        .iter()
        .map(|p| {
            let store = load_embeddings(p)?;
            Ok((store.provenance().layer as usize, store))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let n_shots = cfg.retrieval.n_shots.unwrap_or(10);
    let sweep = sweep_layers(&stores, &pool, &eval_sets, n_shots)?;
    write_out(out, &format!("# best layer: {}\n", sweep.best_layer))?;
    sweep_report(cfg, &[sweep.result], out)
}

fn cmd_aggregate(args: &AggregateArgs, out: &mut dyn Write) -> CliResult<()> {
    if args.fixtures.is_empty() && args.ablation.is_none() {
        return Err(CliError::Usage("aggregate needs --fixtures and/or --ablation".into()));
    }
    let format: ReportFormat = args.format.parse()?;
    for path in &args.fixtures {
        let table = ResultTable::read_csv(path)?;
        let summary = ResultTable {
            key: table.key.clone(),
            columns: table.columns.clone(),
            rows: vec![(AVG_ROW.to_string(), table.averages())],
        };
        let preamble = vec![format!("{} ({} rows)", path.display(), table.rows.len())];
        write_out(out, &summary.render(format, &preamble, false)?)?;
    }
    if let Some(path) = &args.ablation {
        let table = AblationTable::read_csv(path)?;
        let gaps = table.gaps(&args.reference)?;
        let rows = gaps.into_iter().map(|(m, g)| (m, vec![Some(g)])).collect();
        let gap_table = ResultTable {
            key: "method".into(),
            columns: vec![format!("{} gap", args.reference)],
            rows,
        };
        let preamble = vec![format!("{}", path.display())];
        write_out(out, &gap_table.render(format, &preamble, false)?)?;
    }
    Ok(())
}

fn cmd_selftest(seed: u64, out: &mut dyn Write) -> CliResult<()> {
    let report = run_selftest(&SelftestConfig::new(seed))?;
    for line in &report.lines {
        write_out(out, &format!("{line}\n"))?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Check("selftest checks failed".into()))
    }
}
