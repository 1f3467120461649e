use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stagedtrees::aldag::{compress, dependence_subtree, staged_tree_dot, write_text, DotAnnotations};
use stagedtrees::consensus::{
    bootstrap_consensus, bootstrap_orders, consensus_order_with, staging_heatmap_export, ConsensusConfig, Linkage,
    TieBreak,
};
use stagedtrees::dataset::{load_csv, Dataset, ResamplePlan};
use stagedtrees::harness::{report_export, run_cv, CvConfig};
use stagedtrees::inference::{
    condition_hard, condition_soft, condition_virtual, marginal, mutual_information, whatif_sweep, EvidenceSpec,
    DEFAULT_MAX_ITER, DEFAULT_TOLERANCE,
};
use stagedtrees::learning::{learn_tree, order_search, Algorithm, LearnConfig, OrderSearchConfig, OrderSearchMode};
use stagedtrees::{Error, Result, StagedTree, VariableOrder};

#[derive(Parser)]
#[command(name = "stagedtrees", version, about = "Learn, summarize and query staged tree models")]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "STAGEDTREES_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a staged tree from a CSV file.
    Learn(LearnArgs),
    /// Search for the best variable order.
    Order(OrderArgs),
    /// Bootstrap consensus model with vote, dissimilarity and edge-strength tables.
    Bootstrap(BootstrapArgs),
    /// k-fold cross-validation of bootstrap consensus models.
    Cv(CvArgs),
    /// Compress a model into its labeled DAG.
    Aldag(AldagArgs),
    /// Posterior marginals under hard and soft evidence.
    Whatif(WhatifArgs),
    /// Mutual information between a target and other variables.
    Mi(MiArgs),
    /// Export a model as DOT, JSON or CSV artifacts.
    Export(ExportArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Categorical CSV file.
    #[arg(long)]
    input: PathBuf,
    /// The first row holds data, not column names.
    #[arg(long)]
    no_header: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmName {
    Bhc,
    Kparents,
}

#[derive(Args)]
struct AlgorithmArgs {
    #[arg(long, value_enum, default_value = "bhc")]
    algorithm: AlgorithmName,
    /// Parent bound for kparents.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Additive smoothing of the fitted probabilities.
    #[arg(long, default_value_t = 0.0)]
    smoothing: f64,
}

impl AlgorithmArgs {
    fn config(&self) -> Result<LearnConfig> {
        let mut cfg = match self.algorithm {
            AlgorithmName::Bhc => LearnConfig::bhc(),
            AlgorithmName::Kparents => LearnConfig::kparents(self.k)?,
        };
        cfg.smoothing = self.smoothing;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderMode {
    /// Use `--variables` (or the column order).
    Fixed,
    Dp,
    Grouped,
    Exhaustive,
}

#[derive(Args)]
struct OrderArgsCommon {
    #[arg(long = "order", value_enum, default_value = "dp")]
    mode: OrderMode,
    /// Comma-separated variable names for a fixed order.
    #[arg(long)]
    variables: Option<String>,
    /// Ordered groups, e.g. `A,B;C,D`.
    #[arg(long)]
    groups: Option<String>,
    /// Variable pinned to the last position.
    #[arg(long)]
    fixed_last: Option<String>,
}

impl OrderArgsCommon {
    fn search(&self, d: &Dataset) -> Result<OrderSearchConfig> {
        let schema = d.schema();
        let fixed_last = self.fixed_last.as_deref().map(|n| schema.index_of(n)).transpose()?;
        let mode = match self.mode {
            OrderMode::Grouped => {
                let spec = self.groups.as_deref().ok_or_else(|| usage("--order grouped needs --groups"))?;
                let groups = spec
                    .split(';')
                    .map(|g| g.split(',').map(|n| schema.index_of(n.trim())).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                OrderSearchMode::Grouped(groups)
            }
            OrderMode::Exhaustive => OrderSearchMode::Exhaustive,
            _ => OrderSearchMode::Dp,
        };
        Ok(OrderSearchConfig {
            mode,
            fixed_last,
            ..OrderSearchConfig::default()
        })
    }

    fn fixed(&self, d: &Dataset) -> Result<Option<VariableOrder>> {
        match self.mode {
            OrderMode::Fixed => Ok(Some(match &self.variables {
                Some(v) => VariableOrder::from_names(d.schema(), &split_names(v))?,
                None => VariableOrder::identity(d.n_vars()),
            })),
            _ => Ok(None),
        }
    }

    fn resolve(&self, d: &Dataset, cfg: &LearnConfig) -> Result<VariableOrder> {
        match self.fixed(d)? {
            Some(o) => Ok(o),
            None => Ok(order_search(d, cfg, &self.search(d)?)?.order),
        }
    }
}

#[derive(Args)]
struct LearnArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    alg: AlgorithmArgs,
    #[command(flatten)]
    order: OrderArgsCommon,
    /// Model JSON output (standard output when absent).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OrderArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    alg: AlgorithmArgs,
    #[command(flatten)]
    order: OrderArgsCommon,
    /// Bootstrap replicates for order voting (0 searches the full data once).
    #[arg(long, default_value_t = 0)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Break tied scores randomly with this seed.
    #[arg(long)]
    random_ties: Option<u64>,
    /// Vote matrix CSV output.
    #[arg(long)]
    votes: Option<PathBuf>,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    alg: AlgorithmArgs,
    #[command(flatten)]
    order: OrderArgsCommon,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dendrogram cut height.
    #[arg(long, default_value_t = 0.5)]
    cut: f64,
    #[arg(long, value_enum, default_value = "average")]
    linkage: LinkageName,
    /// Minimum edge frequency drawn in the edge-strength DOT.
    #[arg(long, default_value_t = 0.5)]
    edge_threshold: f64,
    #[arg(long)]
    random_ties: Option<u64>,
    #[arg(long, default_value = "bootstrap_out")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkageName {
    Average,
    Complete,
    Single,
}

impl From<LinkageName> for Linkage {
    fn from(l: LinkageName) -> Self {
        match l {
            LinkageName::Average => Linkage::Average,
            LinkageName::Complete => Linkage::Complete,
            LinkageName::Single => Linkage::Single,
        }
    }
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    order: OrderArgsCommon,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    cut: f64,
    #[arg(long, value_enum, default_value = "average")]
    linkage: LinkageName,
    /// Comma-separated list, e.g. `bhc,kparents:4`.
    #[arg(long, default_value = "bhc")]
    algorithms: String,
    /// Smoothing of the refit scored on held-out rows.
    #[arg(long, default_value_t = 1.0)]
    predictive_smoothing: f64,
    #[arg(long)]
    reorder_per_fold: bool,
    #[arg(long, default_value = "cv_out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AldagArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dot: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Variable whose dependence subtree is rendered to `--subtree-dot`.
    #[arg(long, requires = "subtree_dot")]
    subtree: Option<String>,
    #[arg(long)]
    subtree_dot: Option<PathBuf>,
}

#[derive(Args)]
struct WhatifArgs {
    #[arg(long)]
    model: PathBuf,
    /// Hard finding `Var=Level`; repeatable.
    #[arg(long)]
    evidence: Vec<String>,
    /// Soft finding `Var=p1,p2,...`; repeatable.
    #[arg(long)]
    soft: Vec<String>,
    /// Treat `--soft` vectors as likelihoods instead of target marginals.
    #[arg(long = "virtual")]
    virtual_evidence: bool,
    /// Restrict the table to one variable.
    #[arg(long)]
    target: Option<String>,
    /// Comma-separated predictors: report the sensitivity sweep of `--target` instead.
    #[arg(long, requires = "target")]
    sweep: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Posterior CSV output (standard output when absent).
    #[arg(long)]
    output: Option<PathBuf>,
    /// ALDAG DOT with evidence nodes highlighted.
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args)]
struct MiArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    target: String,
    /// Comma-separated variables (all others when absent).
    #[arg(long)]
    predictors: Option<String>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    /// Staged tree DOT.
    #[arg(long)]
    tree_dot: Option<PathBuf>,
    #[arg(long)]
    aldag_dot: Option<PathBuf>,
    #[arg(long)]
    aldag_json: Option<PathBuf>,
    #[arg(long)]
    schema_json: Option<PathBuf>,
    /// One row per (depth, context) with its stage and probabilities.
    #[arg(long)]
    stages_csv: Option<PathBuf>,
    /// Samples `--n` rows from the model into this CSV.
    #[arg(long, requires = "n")]
    sample_csv: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn usage(msg: &str) -> Error {
    Error::InvalidArgument(msg.to_string())
}

fn split_names(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect()
}

fn load(input: &InputArgs) -> Result<Dataset> {
    load_csv(&input.input, !input.no_header)
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn learn(a: LearnArgs) -> Result<()> {
    let d = load(&a.input)?;
    let cfg = a.alg.config()?;
    let order = a.order.resolve(&d, &cfg)?;
    let learned = learn_tree(&d, &order, &cfg)?;
    let tree = learned.tree;
    eprintln!(
        "order: {}\nparameters: {}\nBIC: {}",
        order.names(d.schema()).join(","),
        tree.n_parameters(),
        tree.bic(&d)?
    );
    emit(a.output.as_deref(), &tree.to_json()?)
}

fn order(a: OrderArgs) -> Result<()> {
    let d = load(&a.input)?;
    let cfg = a.alg.config()?;
    let search = a.order.search(&d)?;
    let names = d.schema().names();
    if a.replicates == 0 {
        let r = order_search(&d, &cfg, &search)?;
        println!("order,{}", r.order.names(d.schema()).join(","));
        println!("score,{}", r.score);
        return Ok(());
    }
    let votes = bootstrap_orders(&d, &ResamplePlan::new(a.replicates, a.seed)?, &cfg, &search)?;
    let ties = a.random_ties.map_or(TieBreak::Index, TieBreak::Random);
    let co = consensus_order_with(&votes, ties);
    if let Some(p) = &a.votes {
        write_text(p, &votes.to_csv(&names)?)?;
    }
    println!("order,{}", co.order.names(d.schema()).join(","));
    println!("cyclic,{}", co.cyclic);
    Ok(())
}

fn bootstrap(a: BootstrapArgs) -> Result<()> {
    let d = load(&a.input)?;
    let mut cfg = ConsensusConfig::new(a.replicates, a.seed)?;
    cfg.learn = a.alg.config()?;
    cfg.smoothing = a.alg.smoothing;
    cfg.cut = a.cut;
    cfg.linkage = a.linkage.into();
    cfg.ties = a.random_ties.map_or(TieBreak::Index, TieBreak::Random);
    let fixed = a.order.fixed(&d)?;
    let search = a.order.search(&d)?;
    let res = bootstrap_consensus(&d, fixed.as_ref(), &cfg, &search)?;
    let out = &a.out_dir;
    std::fs::create_dir_all(out)?;
    let names = d.schema().names();
    if let Some(votes) = &res.votes {
        write_text(out.join("votes.csv"), &votes.to_csv(&names)?)?;
    }
    for (j, dm) in res.ensemble.dissimilarities.iter().enumerate() {
        staging_heatmap_export(&res.tree, j, &dm.to_dense(), cfg.linkage, out.join(format!("dissimilarity_{j}.csv")))?;
    }
    res.tree.save(out.join("model.json"))?;
    write_text(out.join("edges.csv"), &res.edges.to_csv()?)?;
    write_text(out.join("edges.dot"), &res.edges.to_dot(a.edge_threshold))?;
    write_text(out.join("aldag.dot"), &compress(&res.tree).to_dot())?;
    println!("order,{}", res.tree.order().names(d.schema()).join(","));
    println!("parameters,{}", res.tree.n_parameters());
    println!("bic,{}", res.tree.bic(&d)?);
    Ok(())
}

fn cv(a: CvArgs) -> Result<()> {
    let d = load(&a.input)?;
    let algorithms = a
        .algorithms
        .split(',')
        .map(|s| {
            let alg: Algorithm = s.trim().parse()?;
            Ok(LearnConfig {
                algorithm: alg,
                smoothing: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = CvConfig::new(a.folds, a.replicates, a.seed, algorithms);
    cfg.cut = a.cut;
    cfg.linkage = a.linkage.into();
    cfg.predictive_smoothing = a.predictive_smoothing;
    cfg.order = a.order.fixed(&d)?;
    cfg.order_search = a.order.search(&d)?;
    cfg.reorder_per_fold = a.reorder_per_fold;
    let report = run_cv(&d, &cfg)?;
    report_export(&report, &a.out_dir)?;
    report.write_summary(std::io::stdout())?;
    Ok(())
}

fn aldag(a: AldagArgs) -> Result<()> {
    let tree = StagedTree::load(&a.model)?;
    let g = compress(&tree);
    if let Some(p) = &a.dot {
        write_text(p, &g.to_dot())?;
    }
    if let Some(p) = &a.json {
        write_text(p, &g.to_json()?)?;
    }
    if let (Some(var), Some(p)) = (&a.subtree, &a.subtree_dot) {
        let child = tree.schema().index_of(var)?;
        write_text(p, &dependence_subtree(&tree, &g, child)?.to_dot(&tree))?;
    }
    if a.dot.is_none() && a.json.is_none() {
        println!("{}", g.to_json()?);
    }
    Ok(())
}

fn parse_evidence(tree: &StagedTree, a: &WhatifArgs) -> Result<(BTreeMap<usize, usize>, BTreeMap<usize, Vec<f64>>)> {
    let schema = tree.schema();
    let mut hard = BTreeMap::new();
    for e in &a.evidence {
        let (var, level) = e.split_once('=').ok_or_else(|| usage("--evidence expects Var=Level"))?;
        let v = schema.index_of(var.trim())?;
        hard.insert(v, schema.variable(v).level_index(level.trim())?);
    }
    let mut soft = BTreeMap::new();
    for e in &a.soft {
        let (var, probs) = e.split_once('=').ok_or_else(|| usage("--soft expects Var=p1,p2,..."))?;
        let q = probs
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| usage(&format!("bad probability `{x}`"))))
            .collect::<Result<Vec<_>>>()?;
        soft.insert(schema.index_of(var.trim())?, q);
    }
    Ok((hard, soft))
}

fn whatif(a: WhatifArgs) -> Result<()> {
    let tree = StagedTree::load(&a.model)?;
    let schema = tree.schema().clone();
    if let Some(preds) = &a.sweep {
        let target = schema.index_of(a.target.as_deref().expect("clap requires target"))?;
        let preds = split_names(preds).iter().map(|n| schema.index_of(n)).collect::<Result<Vec<_>>>()?;
        let table = whatif_sweep(&tree, target, &preds)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["predictor", "target_level", "max_abs_change", "from_level", "to_level", "signed_change", "direction"])?;
        for r in &table.rows {
            let pv = schema.variable(r.predictor);
            w.write_record([
                pv.name.clone(),
                schema.variable(target).levels[r.target_level].clone(),
                r.max_abs_change.to_string(),
                pv.levels[r.from_level].clone(),
                pv.levels[r.to_level].clone(),
                r.signed_change.to_string(),
                r.direction.to_string(),
            ])?;
        }
        for (v, l) in &table.skipped {
            eprintln!("warning: {}={} has zero probability and was skipped", schema.variable(*v).name, schema.variable(*v).levels[*l]);
        }
        let text = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf-8");
        return emit(a.output.as_deref(), &text);
    }
    let (hard, soft) = parse_evidence(&tree, &a)?;
    let result = if a.virtual_evidence {
        condition_virtual(&tree, &hard, &soft)?
    } else if soft.is_empty() {
        condition_hard(&tree, &hard)?
    } else {
        let spec = EvidenceSpec::new(&schema, hard.clone(), soft.clone())?;
        condition_soft(&tree, &spec, a.tol, a.max_iter)?
    };
    if let Some(p) = result.evidence_probability {
        eprintln!("evidence probability: {p}");
    }
    if let (Some(it), Some(dev)) = (result.iterations, result.max_deviation) {
        eprintln!("fitting iterations: {it}, max deviation: {dev:e}");
    }
    let target = a.target.as_deref().map(|n| schema.index_of(n)).transpose()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variable", "level", "prior", "posterior"])?;
    for v in 0..schema.len() {
        if target.is_some_and(|t| t != v) {
            continue;
        }
        let prior = marginal(&tree, v)?;
        for (l, level) in schema.variable(v).levels.iter().enumerate() {
            w.write_record([
                schema.variable(v).name.clone(),
                level.clone(),
                prior[l].to_string(),
                result.marginals[v][l].to_string(),
            ])?;
        }
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf-8");
    emit(a.output.as_deref(), &text)?;
    if let Some(p) = &a.dot {
        let g = compress(&tree);
        let mut notes = DotAnnotations::default();
        notes.evidence = hard.keys().chain(soft.keys()).copied().collect();
        for v in 0..schema.len() {
            let m = &result.marginals[v];
            let text = schema
                .variable(v)
                .levels
                .iter()
                .zip(m)
                .map(|(l, x)| format!("{l}: {:.3}", x))
                .collect::<Vec<_>>()
                .join("\\n");
            notes.node_notes.insert(v, text);
        }
        write_text(p, &g.to_dot_with(&notes))?;
    }
    Ok(())
}

fn mi(a: MiArgs) -> Result<()> {
    let tree = StagedTree::load(&a.model)?;
    let schema = tree.schema();
    let target = schema.index_of(&a.target)?;
    let preds: Vec<usize> = match &a.predictors {
        Some(p) => split_names(p).iter().map(|n| schema.index_of(n)).collect::<Result<_>>()?,
        None => (0..schema.len()).filter(|&v| v != target).collect(),
    };
    println!("variable,mutual_information");
    for v in preds {
        println!("{},{}", schema.variable(v).name, mutual_information(&tree, v, target)?);
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let tree = StagedTree::load(&a.model)?;
    if let Some(p) = &a.tree_dot {
        write_text(p, &staged_tree_dot(&tree)?)?;
    }
    let g = compress(&tree);
    if let Some(p) = &a.aldag_dot {
        write_text(p, &g.to_dot())?;
    }
    if let Some(p) = &a.aldag_json {
        write_text(p, &g.to_json()?)?;
    }
    if let Some(p) = &a.schema_json {
        write_text(p, &tree.schema().to_json()?)?;
    }
    if let Some(p) = &a.stages_csv {
        let mut w = csv::WriterBuilder::new().flexible(true).from_path(p)?;
        w.write_record(["depth", "variable", "context", "stage", "probabilities"])?;
        for j in 0..tree.depth() {
            for c in 0..tree.n_contexts(j) {
                let probs: Vec<String> = tree.context_probs(j, c).iter().map(|x| x.to_string()).collect();
                w.write_record([
                    j.to_string(),
                    tree.schema().variable(tree.variable_at(j)).name.clone(),
                    tree.context_label(j, c),
                    tree.staging(j).stage_of(c).to_string(),
                    probs.join(";"),
                ])?;
            }
        }
        w.flush()?;
    }
    if let (Some(p), Some(n)) = (&a.sample_csv, a.n) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
        tree.sample(n, &mut rng)?.write_csv(std::fs::File::create(p)?, true)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Learn(a) => learn(a),
        Command::Order(a) => order(a),
        Command::Bootstrap(a) => bootstrap(a),
        Command::Cv(a) => cv(a),
        Command::Aldag(a) => aldag(a),
        Command::Whatif(a) => whatif(a),
        Command::Mi(a) => mi(a),
        Command::Export(a) => export(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
