//! Batch evaluation of zero-shot prompting methods on multiple-choice
//! pragmatic reasoning questions.
//!
//! The pipeline is: load a [`Dataset`], render one prompt per instance and
//! [`MethodId`], send it through a [`CompletionBackend`] (with a persistent
//! [`ResponseCache`]), pull the chosen option out of the reply with
//! [`extract_answer`], and aggregate the scored [`RunRecord`]s into an
//! [`EvalSummary`] with Wilson intervals, per-phenomenon tables, an
//! error-pattern histogram and length/accuracy correlations.
//!
//! [`run_experiment`] drives the whole thing from a [`RunConfig`].

pub mod backend;
pub mod dataset;
pub mod extraction;
pub mod orchestrator;
pub mod prompts;
pub mod report;
pub mod stats;

pub use backend::{
    cached_complete, mock_complete, AnswerKey, BackendError, CacheCounters, CacheError, CacheSummary,
    ChatClient, ChatEndpoint, CompletionBackend, CompletionRecord, CompletionRequest, Fingerprint,
    GenerationParams, MockBackend, MockProfile, MockStyle, ResponseCache, RetryPolicy,
};
pub use dataset::{
    derive_seed, load_dataset, parse_dataset, phenomenon_counts, reference_counts, save_dataset,
    shuffle_options, synthetic_dataset, Dataset, DatasetError, Instance, Phenomenon,
};
pub use extraction::{extract_answer, ExtractionResult, Strategy};
pub use orchestrator::{
    run_experiment, run_experiment_with_backends, score_run_dir, score_run_dir_to, BackendKind,
    BackendMap, ConfigError, MockSettings, ModelConfig, RunConfig, RunError, RunOutcome, ShuffleConfig,
    ShuffleScope,
};
pub use prompts::{
    builtin_templates, load_templates, parse_method_list, render_prompt, MethodId, PromptError,
    PromptTemplate, RenderedPrompt, ANSWER_MARKER,
};
pub use report::{
    aggregate, emit_figure_data, emit_summary_tables, load_summary_tables, AggregateOptions, CellStats,
    EvalSummary, OverallRow, PatternRow, PhenomenonRow, ReportError, RunMeta, SummaryTables,
};
pub use stats::{
    accuracy, classify_error_pattern, correlation_points, length_accuracy_correlation,
    pattern_histogram, per_phenomenon_accuracy, wilson_interval, CorrelationMode, CorrelationReport,
    ErrorPattern, LengthAxis, RunRecord, StatsError, WilsonInterval, DEFAULT_Z,
};
