//! Face recognition evaluation protocols: templates, 1:1 verification,
//! closed- and open-set identification, retrieval, and cross-resolution
//! verification matrices.

mod crossres;
mod curves;
mod template;

pub use crossres::{
    all_pairs, cross_resolution_cell, cross_resolution_from_embeddings, cross_resolution_matrix,
    embed_templates, load_pairs, pair_roc, parse_resolution, read_pairs, resolution_label, save_pairs,
    score_pairs, write_pairs, CrossResCell, CrossResMatrix, EmbeddedSets, EvalResolution, PairLabel,
    PairScores, TemplateSet, TemplateSource, VerificationPair, EVAL_RESOLUTIONS,
};
pub use curves::{
    cmc, cmc_from_scores, det_auc, open_set_from_scores, open_set_identification, rankings_from_scores,
    retrieval_map, roc, subjects, tar_at_far, tpir_at_fpir, verification_accuracy, CmcCurve, DetCurve,
    DetPoint, MeanAveragePrecision, OperatingPoint, RocCurve, RocPoint, ScoreMatrix, VerificationAccuracy,
};
pub use template::{build_template, similarity, Template};
