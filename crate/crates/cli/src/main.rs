use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use transtok::aligner::{self, AlignDirection, AlignerConfig, AlignmentCorpus, DiagonalParams, SymmetrizeMode};
use transtok::api::{self, TensorInput};
use transtok::corpus::FilterConfig;
use transtok::mapper::{self, MapperConfig, SplitStrategy, ThresholdStage};
use transtok::pipeline::{self, PipelineConfig, PipelineError, TokenizerPaths};
use transtok::remapper::Fallback;
use transtok::wordizer::{bpe_train, MarkerStyle, Tokenizer, TrainConfig, Vocab};

/// Bad arguments or missing inputs, reported with exit code 2.
#[derive(Debug)]
struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn existing(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{what} file {} does not exist", path.display())))
    }
}

#[derive(Parser)]
#[command(name = "transtok", version, about = "Map a source tokenizer's embeddings onto a target tokenizer using parallel text")]
struct Cli {
    /// More log output; repeat for debug level.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode both sides of a parallel corpus.
    Tokenize(TokenizeCmd),
    /// Train a BPE vocabulary and merges on plain text.
    TrainBpe(TrainCmd),
    /// Word-align a parallel corpus and export Pharaoh links.
    Align(AlignCmd),
    /// Count aligned word pairs.
    Count(CountCmd),
    /// Turn word-pair counts into a token mapping.
    Map(MapCmd),
    /// Initialize target embeddings (and optionally an LM head) from a mapping.
    Remap(RemapCmd),
    /// Stack extra input vocabularies under one output vocabulary.
    Hydra(HydraCmd),
    /// Convert a mean loss into per-native-token perplexity.
    PplNormalize(PplCmd),
    /// Summarize a mapping.
    Stats(StatsCmd),
    /// Run the whole pipeline from a JSON config.
    Run(RunCmd),
}

#[derive(Args)]
struct CorpusArgs {
    /// Parallel corpus, one `source ||| target` pair per line.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    max_pairs: Option<usize>,
    #[arg(long, default_value_t = 1)]
    min_chars: usize,
    #[arg(long, default_value_t = 4096)]
    max_chars: usize,
    #[arg(long, default_value_t = 9.0)]
    ratio_cap: f64,
}

impl CorpusArgs {
    fn filter(&self) -> Result<FilterConfig> {
        existing(&self.corpus, "corpus")?;
        FilterConfig::new(self.min_chars, self.max_chars, self.ratio_cap).map_err(|e| invalid(e.to_string()))
    }
}

#[derive(Args)]
struct TokenizerArgs {
    #[arg(long)]
    source_vocab: PathBuf,
    #[arg(long)]
    source_merges: PathBuf,
    #[arg(long)]
    target_vocab: PathBuf,
    #[arg(long)]
    target_merges: PathBuf,
}

impl TokenizerArgs {
    fn load(&self) -> Result<(Tokenizer, Tokenizer)> {
        for (p, what) in [
            (&self.source_vocab, "source vocab"),
            (&self.source_merges, "source merges"),
            (&self.target_vocab, "target vocab"),
            (&self.target_merges, "target merges"),
        ] {
            existing(p, what)?;
        }
        let load = |vocab: &PathBuf, merges: &PathBuf| {
            pipeline::load_tokenizer(&TokenizerPaths {
                vocab: vocab.clone(),
                merges: merges.clone(),
            })
        };
        let source = load(&self.source_vocab, &self.source_merges).context("loading source tokenizer")?;
        let target = load(&self.target_vocab, &self.target_merges).context("loading target tokenizer")?;
        Ok((source, target))
    }
}

#[derive(Args)]
struct TokenizeCmd {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    tokenizers: TokenizerArgs,
    /// Receives tokenized.src.txt and tokenized.tgt.txt.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Source,
    Target,
}

#[derive(Args)]
struct TrainCmd {
    /// Plain text, one sentence per line.
    #[arg(long, conflicts_with = "corpus")]
    input: Option<PathBuf>,
    /// Train on one side of a parallel corpus instead.
    #[arg(long, requires = "side")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    side: Option<Side>,
    #[arg(long)]
    vocab_size: usize,
    /// Marker string; word-start unless --continuation is given.
    #[arg(long, default_value = "\u{2581}")]
    marker: String,
    /// Mark continuation pieces instead of word starts.
    #[arg(long)]
    continuation: bool,
    /// Special tokens, placed first (default: <unk> <s> </s>).
    #[arg(long = "special")]
    specials: Vec<String>,
    #[arg(long)]
    byte_fallback: bool,
    #[arg(long)]
    ideographic: bool,
    #[arg(long)]
    out_vocab: PathBuf,
    #[arg(long)]
    out_merges: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sym {
    Int,
    Union,
    Gdfa,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Forward,
    Reverse,
    Both,
}

#[derive(Args)]
struct AlignerArgs {
    #[arg(long, default_value_t = 5)]
    iters: usize,
    #[arg(long, default_value_t = 0.08)]
    p0: f64,
    #[arg(long, default_value_t = 4.0)]
    lambda: f64,
    /// Dirichlet concentration; 0 gives maximum likelihood.
    #[arg(long, default_value_t = 0.01)]
    vb_alpha: f64,
    /// Keep the diagonal tension fixed.
    #[arg(long)]
    fixed_lambda: bool,
    #[arg(long, value_enum, default_value_t = Sym::Gdfa)]
    sym: Sym,
    #[arg(long, value_enum, default_value_t = Direction::Both)]
    direction: Direction,
}

impl AlignerArgs {
    fn config(&self) -> Result<(AlignerConfig, AlignDirection)> {
        let config = AlignerConfig {
            iterations: self.iters,
            params: DiagonalParams {
                lambda: self.lambda,
                p0: self.p0,
                vb_alpha: self.vb_alpha,
            },
            optimize_lambda: !self.fixed_lambda,
            ..AlignerConfig::default()
        };
        config.validate().map_err(|e| invalid(e.to_string()))?;
        let mode = match self.sym {
            Sym::Int => SymmetrizeMode::Intersection,
            Sym::Union => SymmetrizeMode::Union,
            Sym::Gdfa => SymmetrizeMode::GrowDiagFinalAnd,
        };
        let direction = match self.direction {
            Direction::Forward => AlignDirection::Forward,
            Direction::Reverse => AlignDirection::Reverse,
            Direction::Both => AlignDirection::Both(mode),
        };
        Ok((config, direction))
    }
}

#[derive(Args)]
struct AlignCmd {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    tokenizers: TokenizerArgs,
    #[command(flatten)]
    aligner: AlignerArgs,
    #[arg(long)]
    export_pharaoh: PathBuf,
}

#[derive(Args)]
struct CountCmd {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    tokenizers: TokenizerArgs,
    /// Pharaoh links for the same corpus and filter settings.
    #[arg(long)]
    alignments: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    AllToAll,
    InOrder,
    Average,
}

impl From<Strategy> for SplitStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::AllToAll => SplitStrategy::AllToAll,
            Strategy::InOrder => SplitStrategy::InOrder,
            Strategy::Average => SplitStrategy::Average,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Word,
    Token,
}

#[derive(Args)]
struct MapperArgs {
    #[arg(long, default_value_t = 10.0)]
    min_count: f64,
    #[arg(long, value_enum, default_value_t = Strategy::Average)]
    strategy: Strategy,
    #[arg(long, value_enum, default_value_t = Stage::Word)]
    threshold_stage: Stage,
    /// Threshold smoothed entries like any other.
    #[arg(long)]
    no_exempt_smoothed: bool,
    #[arg(long)]
    no_smooth_identical: bool,
    #[arg(long)]
    no_smooth_specials: bool,
    /// Extra smoothing pair as SOURCE=TARGET surfaces; repeatable.
    #[arg(long = "extra-pair", value_parser = parse_pair)]
    extra_pairs: Vec<(String, String)>,
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_owned(), b.to_owned())),
        _ => Err(format!("expected SOURCE=TARGET, got {s:?}")),
    }
}

impl MapperArgs {
    fn config(&self) -> Result<MapperConfig> {
        if !(self.min_count >= 0.0) {
            return Err(invalid(format!("--min-count {} must be >= 0", self.min_count)));
        }
        Ok(MapperConfig {
            min_count: self.min_count,
            threshold_stage: match self.threshold_stage {
                Stage::Word => ThresholdStage::Word,
                Stage::Token => ThresholdStage::Token,
            },
            exempt_smoothed: !self.no_exempt_smoothed,
            strategy: self.strategy.into(),
            smooth_identical: !self.no_smooth_identical,
            smooth_specials: !self.no_smooth_specials,
            extra_pairs: self.extra_pairs.clone(),
        })
    }
}

#[derive(Args)]
struct MapCmd {
    #[arg(long)]
    counts: PathBuf,
    #[arg(long)]
    source_vocab: PathBuf,
    #[arg(long)]
    target_vocab: PathBuf,
    #[command(flatten)]
    mapper: MapperArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write the `target := w*source + ...` listing.
    #[arg(long)]
    readable: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FallbackArg {
    Mean,
    Zero,
    Error,
}

impl From<FallbackArg> for Fallback {
    fn from(f: FallbackArg) -> Self {
        match f {
            FallbackArg::Mean => Fallback::MeanOfMapped,
            FallbackArg::Zero => Fallback::Zero,
            FallbackArg::Error => Fallback::Error,
        }
    }
}

#[derive(Args)]
struct RemapCmd {
    #[arg(long)]
    source_embeddings: PathBuf,
    /// Tensor name when the file holds several.
    #[arg(long)]
    tensor: Option<String>,
    #[arg(long)]
    mapping: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FallbackArg::Mean)]
    fallback: FallbackArg,
    #[arg(long, requires = "lm_head_out")]
    lm_head: Option<PathBuf>,
    #[arg(long, requires = "lm_head")]
    lm_head_out: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Names unmapped tokens in errors.
    #[arg(long)]
    target_vocab: Option<PathBuf>,
}

#[derive(Args)]
struct HydraCmd {
    #[arg(long)]
    target_vocab: PathBuf,
    #[arg(long)]
    target_embeddings: PathBuf,
    /// Untied output head; the embeddings are used when absent.
    #[arg(long)]
    target_head: Option<PathBuf>,
    /// Extra input segment as VOCAB=EMBEDDINGS; repeatable, in order.
    #[arg(long = "extra", value_parser = parse_extra)]
    extras: Vec<(PathBuf, PathBuf)>,
    /// Manifest path; tensors go next to it.
    #[arg(long)]
    out: PathBuf,
}

fn parse_extra(s: &str) -> Result<(PathBuf, PathBuf), String> {
    parse_pair(s).map(|(a, b)| (a.into(), b.into())).map_err(|_| format!("expected VOCAB=EMBEDDINGS, got {s:?}"))
}

#[derive(Args)]
struct PplCmd {
    /// Mean loss in nats per model token.
    #[arg(long, allow_negative_numbers = true)]
    loss: f64,
    #[arg(long)]
    model_tokens: u64,
    #[arg(long)]
    native_tokens: u64,
}

#[derive(Args)]
struct StatsCmd {
    #[arg(long)]
    mapping: PathBuf,
    #[arg(long)]
    source_vocab: PathBuf,
    #[arg(long)]
    target_vocab: PathBuf,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
    /// Rows with the highest entropy to list.
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args)]
struct RunCmd {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    max_pairs: Option<usize>,
    #[arg(long)]
    min_count: Option<f64>,
    #[arg(long, value_enum)]
    strategy: Option<Strategy>,
    #[arg(long, value_enum)]
    fallback: Option<FallbackArg>,
    #[arg(long)]
    iters: Option<usize>,
    /// Recompute every stage even when cached.
    #[arg(long)]
    no_cache: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // a closed pipe (`| head`) is the reader's choice, not a failure
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(p) = e.downcast_ref::<PipelineError>() {
        p.exit_code() as u8
    } else if e.is::<Invalid>() {
        2
    } else {
        3
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if cli.threads == Some(0) {
        return Err(invalid("--threads must be at least 1"));
    }
    if let (Some(n), false) = (cli.threads, matches!(cli.command, Command::Run(_))) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting thread pool")?;
    }
    match cli.command {
        Command::Tokenize(c) => tokenize(c),
        Command::TrainBpe(c) => train_bpe(c),
        Command::Align(c) => align(c),
        Command::Count(c) => count(c),
        Command::Map(c) => map(c),
        Command::Remap(c) => remap(c),
        Command::Hydra(c) => hydra(c),
        Command::PplNormalize(c) => ppl(c),
        Command::Stats(c) => stats(c),
        Command::Run(c) => run(c, cli.threads),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    transtok::write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn tokenize(c: TokenizeCmd) -> Result<()> {
    let filter = c.corpus.filter()?;
    let (source, target) = c.tokenizers.load()?;
    let (pairs, report) =
        pipeline::load_corpus(&c.corpus.corpus, c.corpus.max_pairs, filter).map_err(|e| anyhow::anyhow!(e))?;
    let encoded = pipeline::encode_pairs(&pairs, &source, &target)?;
    let (mut src, mut tgt) = (String::new(), String::new());
    for (s, t) in &encoded {
        src.push_str(&source.format_surfaces(s));
        src.push('\n');
        tgt.push_str(&target.format_surfaces(t));
        tgt.push('\n');
    }
    write_file(&c.out_dir.join("tokenized.src.txt"), src.as_bytes())?;
    write_file(&c.out_dir.join("tokenized.tgt.txt"), tgt.as_bytes())?;
    print_json(&report)
}

fn train_bpe(c: TrainCmd) -> Result<()> {
    let lines: Vec<String> = match (&c.input, &c.corpus, c.side) {
        (Some(input), None, _) => {
            existing(input, "input")?;
            fs::read_to_string(input)?.lines().map(str::to_owned).collect()
        }
        (None, Some(corpus), Some(side)) => {
            existing(corpus, "corpus")?;
            let reader = transtok::corpus::read_pairs(corpus, None)?;
            reader
                .map(|p| {
                    p.map(|p| match side {
                        Side::Source => p.source_text,
                        Side::Target => p.target_text,
                    })
                })
                .collect::<Result<_, _>>()?
        }
        _ => return Err(invalid("give either --input or --corpus with --side")),
    };
    let mut config = TrainConfig::new(c.vocab_size);
    config.marker_style = if c.continuation {
        MarkerStyle::ContinuationPrefix(c.marker)
    } else {
        MarkerStyle::WordStartPrefix(c.marker)
    };
    if !c.specials.is_empty() {
        config.special_tokens = c.specials;
    }
    config.byte_fallback = c.byte_fallback;
    config.ideographic = c.ideographic;
    let (vocab, merges) = bpe_train(&lines, &config)?;
    ensure_parent(&c.out_vocab)?;
    ensure_parent(&c.out_merges)?;
    vocab.save(&c.out_vocab)?;
    merges.save(&c.out_merges)?;
    log::info!("trained {} tokens and {} merges", vocab.len(), merges.len());
    Ok(())
}

fn load_alignment_corpus(corpus: &CorpusArgs, tokenizers: &TokenizerArgs) -> Result<(AlignmentCorpus, Vocab, Vocab)> {
    let filter = corpus.filter()?;
    let (source, target) = tokenizers.load()?;
    let (words, report) = pipeline::corpus_words(&corpus.corpus, corpus.max_pairs, filter, &source, &target)
        .map_err(|e| anyhow::anyhow!(e))?;
    log::info!("{} pairs kept of {} lines", report.pairs, report.lines_read);
    let aligned: AlignmentCorpus = words.iter().map(|(s, t)| (s, t)).collect();
    Ok((aligned, source.vocab().clone(), target.vocab().clone()))
}

fn align(c: AlignCmd) -> Result<()> {
    let (config, direction) = c.aligner.config()?;
    let (corpus, _, _) = load_alignment_corpus(&c.corpus, &c.tokenizers)?;
    let alignments = aligner::align_bidirectional(&corpus, &config, direction)?;
    ensure_parent(&c.export_pharaoh)?;
    aligner::export_pharaoh(&c.export_pharaoh, &alignments)?;
    Ok(())
}

fn count(c: CountCmd) -> Result<()> {
    existing(&c.alignments, "alignments")?;
    let (corpus, source, target) = load_alignment_corpus(&c.corpus, &c.tokenizers)?;
    let raw = aligner::import_alignments(&c.alignments)?;
    let alignments = pipeline::attach_lengths(raw, &corpus).map_err(|e| anyhow::anyhow!(e))?;
    let counts = mapper::count_word_pairs_interned(&corpus, &alignments)?;
    ensure_parent(&c.out)?;
    mapper::write_counts_tsv(&counts, &source, &target, &c.out)?;
    Ok(())
}

fn map(c: MapCmd) -> Result<()> {
    existing(&c.counts, "counts")?;
    existing(&c.source_vocab, "source vocab")?;
    existing(&c.target_vocab, "target vocab")?;
    let config = c.mapper.config()?;
    let source = Vocab::load(&c.source_vocab)?;
    let target = Vocab::load(&c.target_vocab)?;
    let counts = mapper::read_counts_tsv(&c.counts, &source, &target)?;
    let (mapping, smoothing) = mapper::build_mapping(counts, &source, &target, &config)?;
    for s in &smoothing.unmatched_specials {
        log::warn!("target special token {s} has no source counterpart");
    }
    ensure_parent(&c.out)?;
    mapping.save(&c.out)?;
    if let Some(path) = &c.readable {
        write_file(path, mapping.to_readable(&source, &target).as_bytes())?;
    }
    Ok(())
}

fn remap(c: RemapCmd) -> Result<()> {
    existing(&c.source_embeddings, "source embeddings")?;
    existing(&c.mapping, "mapping")?;
    if let Some(h) = &c.lm_head {
        existing(h, "LM head")?;
    }
    let target_vocab = match &c.target_vocab {
        Some(p) => {
            existing(p, "target vocab")?;
            Some(Vocab::load(p)?)
        }
        None => None,
    };
    let mapping = api::read_mapping(&c.mapping)?;
    ensure_parent(&c.out)?;
    if let Some(out) = &c.lm_head_out {
        ensure_parent(out)?;
    }
    let input = TensorInput {
        path: &c.source_embeddings,
        name: c.tensor.as_deref(),
    };
    let report = api::remap(&mapping, input, &c.out, c.fallback.into(), target_vocab.as_ref())?;
    let value = match (&c.lm_head, &c.lm_head_out) {
        (Some(head), Some(out)) => {
            let head_report = api::remap(&mapping, head.as_path().into(), out, c.fallback.into(), target_vocab.as_ref())?;
            serde_json::json!({ "embeddings": report, "lm_head": head_report })
        }
        _ => serde_json::to_value(&report)?,
    };
    match &c.report {
        Some(path) => write_file(path, serde_json::to_string_pretty(&value)?.as_bytes()),
        None => print_json(&value),
    }
}

fn hydra(c: HydraCmd) -> Result<()> {
    existing(&c.target_vocab, "target vocab")?;
    existing(&c.target_embeddings, "target embeddings")?;
    if let Some(h) = &c.target_head {
        existing(h, "target head")?;
    }
    for (v, e) in &c.extras {
        existing(v, "extra vocab")?;
        existing(e, "extra embeddings")?;
    }
    ensure_parent(&c.out)?;
    let extras: Vec<(&Path, TensorInput)> = c.extras.iter().map(|(v, e)| (v.as_path(), e.as_path().into())).collect();
    let manifest = api::compose_hydra(
        &c.target_vocab,
        c.target_embeddings.as_path().into(),
        c.target_head.as_deref().map(Into::into),
        &extras,
        &c.out,
    )?;
    print_json(&manifest)
}

fn ppl(c: PplCmd) -> Result<()> {
    let p = pipeline::normalize_perplexity(c.loss, c.model_tokens, c.native_tokens)?;
    println!("{p:.4}");
    Ok(())
}

fn stats(c: StatsCmd) -> Result<()> {
    existing(&c.mapping, "mapping")?;
    existing(&c.source_vocab, "source vocab")?;
    existing(&c.target_vocab, "target vocab")?;
    let mapping = api::read_mapping(&c.mapping)?;
    let source = Vocab::load(&c.source_vocab)?;
    let target = Vocab::load(&c.target_vocab)?;
    mapping.check_vocabs(&source, &target)?;
    let report = api::stats(&mapping, &source, &target);
    if c.json {
        return print_json(&report);
    }
    println!("target vocabulary  {}", report.target_vocab_size);
    println!("mapped             {}", report.mapped);
    println!("unmapped fraction  {:.4}", report.unmapped_fraction);
    println!("identity fraction  {:.4}", report.identity_fraction);
    println!("smoothed only      {}", report.smoothed_only);
    println!("mean fan-in        {:.3}", report.mean_fan_in);
    println!("mean entropy bits  {:.3}", report.mean_entropy_bits);
    let mut rows: Vec<_> = report.tokens.iter().collect();
    rows.sort_by(|a, b| b.entropy_bits.total_cmp(&a.entropy_bits).then(a.target_id.cmp(&b.target_id)));
    for r in rows.into_iter().take(c.top) {
        println!("{:>8.3} bits  fan-in {:<4} {} (top {} {:.2})", r.entropy_bits, r.fan_in, r.target, r.top_source, r.top_weight);
    }
    Ok(())
}

fn run(c: RunCmd, threads: Option<usize>) -> Result<()> {
    let mut config = PipelineConfig::load(&c.config)?;
    if let Some(dir) = c.output_dir {
        config.output_dir = dir;
    }
    if let Some(corpus) = c.corpus {
        config.corpus = corpus;
    }
    if c.max_pairs.is_some() {
        config.max_pairs = c.max_pairs;
    }
    if let Some(m) = c.min_count {
        config.mapper.min_count = m;
    }
    if let Some(s) = c.strategy {
        config.mapper.strategy = s.into();
    }
    if let Some(f) = c.fallback {
        config.fallback = f.into();
    }
    if let Some(n) = c.iters {
        config.aligner.iterations = n;
    }
    if threads.is_some() {
        config.threads = threads;
    }
    if c.no_cache {
        config.cache = false;
    }
    let summary = pipeline::run_pipeline(&config)?;
    for s in &summary.stages {
        log::info!("{:<9} {} {}", s.name, if s.cached { "cached" } else { "computed" }, &s.key[..16]);
    }
    print_json(&summary)
}
