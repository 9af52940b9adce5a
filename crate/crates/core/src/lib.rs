//! Table-to-text generation stack: a minimal reverse-mode autodiff engine, a
//! decoder-only language model with table-structure-aware fusion, two-pass
//! deliberation training, beam decoding, and corpus text metrics.
//!
//! Everything numeric is generic over [`Scalar`] (f32 or f64); the concrete
//! aliases at the crate root pin f64, which all training and verification
//! paths use.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod deliberation;
pub mod decoding;
pub mod error;
pub mod init;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod reconstruction;
pub mod scalar;
pub mod table;
pub mod tensor;
pub mod text;

pub use attention::{mha, AttentionMap, AttnRecord, AttnTrace, MhaOutput, MhaParams};
pub use checkpoint::{load_checkpoint, load_into, peek_config, save_checkpoint};
pub use config::{DataSection, ModelSection, RunConfig, TrainSection};
pub use deliberation::{
    build_vocab, draft_examples, draft_map, exact_match_rate, fit, generate_drafts, infer,
    load_drafts, mean_lm_loss, run_pipeline, save_drafts, serialize_examples, Draft, EpochStats,
    InferOutput, LmExample, Mode, PipelineResult, TrainedModel,
};
pub use dataset::{
    load_dataset, save_dataset, split_dataset, synth_dataset, Dataset, DatasetRecord, SplitDataset,
    SplitSpec,
};
pub use decoding::{
    beam_search, decode, greedy_decode, log_softmax, DecodeConfig, DecodeStrategy,
    NextTokenScorer, TableLm,
};
pub use error::{Result, TasdError};
pub use metrics::{bleu_n, meteor_lite, metric_report, rouge_l, MetricReport};
pub use optim::Adam;
pub use init::ParamInit;
pub use model::{lm_loss, LmOutput, TableEncoding, TasatgConfig, TasatgModel};
pub use reconstruction::{
    combined_loss, mask_cells, reconstruct, tr_loss, tr_loss_full_table, Activation, TrConfig,
    TrMlp, TrPass,
};
pub use scalar::Scalar;
pub use table::{
    cell_multiview_sequence, serialize_numeric, serialize_open, serialize_text, Cell,
    SerializedTable, Table, TableSchema,
};
pub use tensor::{BackwardReport, GradientTape, Tensor};
pub use text::{TokenSeq, Vocab};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
