use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "relex", version, about = "Zero-shot biomedical relation extraction with an LLM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true, env = "RELEX_CONFIG")]
    pub config: Option<PathBuf>,

    /// Overrides the configured in-flight request limit.
    #[arg(long, global = true)]
    pub max_in_flight: Option<usize>,

    /// Overrides the configured response cache directory.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,

    /// Suppress summaries on stdout; output files are still written.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorpusFormat {
    Pubtator,
    Chemdisgene,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    TwoStage,
    OneStage,
}

#[derive(Debug, Args)]
pub struct DocsArg {
    /// Canonical documents file; defaults to the configured dataset.
    #[arg(long)]
    pub docs: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Converts a corpus into canonical JSONL files.
    Ingest {
        #[arg(long, value_enum)]
        format: CorpusFormat,
        /// PubTator file (abstracts for ChemDisGene).
        #[arg(long = "in")]
        input: PathBuf,
        /// ChemDisGene relation table.
        #[arg(long)]
        relations: Option<PathBuf>,
        /// Relation names accepted from the table; defaults to the shipped
        /// ChemDisGene registry.
        #[arg(long, value_delimiter = ',')]
        relation_names: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Entity recognition.
    Ner {
        #[command(flatten)]
        docs: DocsArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synonym clustering and hypernym linking over `ner` output.
    Coref {
        #[command(flatten)]
        docs: DocsArg,
        #[arg(long)]
        mentions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise relation extraction over `coref` output.
    Extract {
        #[command(flatten)]
        docs: DocsArg,
        #[arg(long)]
        mentions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores predicted relations (and mentions) against gold.
    Eval {
        #[command(flatten)]
        docs: DocsArg,
        #[arg(long)]
        relations: PathBuf,
        #[arg(long)]
        mentions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-out scenario ablation of a relation template.
    Ablate {
        #[command(flatten)]
        docs: DocsArg,
        /// Template name (shipped or from the configured template dir).
        #[arg(long)]
        template: String,
        #[arg(long)]
        mentions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Greedily prune scenarios and write the pruned template.
        #[arg(long)]
        refine: bool,
    },
    /// Checks templates against the scenario design principles.
    Lint {
        /// Template files; with none, lints every configured template.
        files: Vec<PathBuf>,
        /// Lint a shipped or configured template by name.
        #[arg(long)]
        name: Vec<String>,
    },
    /// NER, coreference, extraction and evaluation in one go.
    Run {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "two-stage")]
        mode: ModeArg,
        /// Repeat the LLM stages and report mean and std.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Response cache maintenance.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum CacheAction {
    Stats,
    Clear,
}
