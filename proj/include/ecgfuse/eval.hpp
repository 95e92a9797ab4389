#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgfuse/encoder.hpp"
#include "ecgfuse/fusion.hpp"
#include "ecgfuse/leads.hpp"
#include "ecgfuse/model.hpp"

namespace ecgfuse {

// ---- folds and batches -----------------------------------------------------------------

struct FoldAssignment {
    std::size_t k = 0;
    std::map<std::string, std::size_t> fold_of;   // record_id -> fold
    std::map<std::string, std::size_t> stratum;   // record_id -> class index

    std::vector<std::string> records_in(std::size_t fold) const;
    std::vector<std::string> records_outside(std::size_t fold) const;
};

// Records are sorted by id, shuffled within each class, then dealt round-robin; the dealing
// position carries over from one class to the next so fold sizes stay balanced as well.
FoldAssignment stratified_kfold(const std::vector<std::pair<std::string, std::size_t>>& labels,
                                std::size_t k, std::uint64_t seed);

// Splits item indices 0..n-1 (classes[i] is item i's class) into batches whose class counts
// track the overall proportions. Each batch of `batch_size` gives every class the floor of
// its quota and hands the leftover seats to the classes furthest behind their running quota.
// The final batch holds whatever is left.
std::vector<std::vector<std::size_t>> balanced_batches(const std::vector<std::size_t>& classes,
                                                       std::size_t batch_size, std::uint64_t seed);

// ---- metrics ---------------------------------------------------------------------------

// Mann-Whitney statistic: P(score_pos > score_neg) + 0.5 P(tie).
double auroc(const std::vector<double>& scores, const std::vector<bool>& positive);

struct ClassificationMetrics {
    std::vector<std::vector<std::size_t>> confusion;  // rows: truth, columns: prediction
    double accuracy = 0.0;
    double precision = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double f1 = 0.0;
    bool zero_division = false;  // some ratio had an empty denominator and was reported as 0
};

// With two classes, class 0 is the positive class; otherwise per-class one-vs-rest values are
// macro-averaged.
ClassificationMetrics classification_metrics(const std::vector<std::size_t>& predicted,
                                             const std::vector<std::size_t>& truth,
                                             std::size_t n_classes);

struct EvalMetrics {
    std::size_t n_records = 0;
    std::vector<std::optional<double>> auroc_per_class;  // empty when a class has no positives or negatives
    std::optional<double> auroc_macro;
    ClassificationMetrics classification;
};

// scores[i] is record i's probability vector (or vote fractions); labels via argmax.
EvalMetrics evaluate_scores(const std::vector<std::vector<double>>& scores,
                            const std::vector<std::size_t>& predicted,
                            const std::vector<std::size_t>& truth, std::size_t n_classes);

// ---- data ------------------------------------------------------------------------------

// Cached features of one record: blob.n_leads is 12 for per-lead features, 1 for stacked.
struct RecordFeatures {
    std::string record_id;
    std::optional<DiagnosisLabel> label;
    FeatureBlob blob;
};

// Model inputs of one record under a fusion strategy. Feature and data fusion give a single
// sequence; decision fusion gives one sequence per lead.
std::vector<Sequence> model_inputs(const RecordFeatures& record, FusionStrategy fusion);

std::size_t model_input_width(const RecordFeatures& record, FusionStrategy fusion);

// ---- training --------------------------------------------------------------------------

struct TrainOptions {
    ModelMode mode = ModelMode::Joint;
    std::size_t dense = 16;
    std::size_t hidden = 16;
    double learning_rate = 0.01;
    std::size_t batch_size = 64;
    std::size_t epochs = 30;
    std::size_t patience = 5;
    double validation_fraction = 0.1;
};

struct TrainedModel {
    ModelParams params;
    OptimizerState optimizer;  // state at the restored (best) epoch
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
};

struct Example {
    const Sequence* inputs = nullptr;
    std::size_t target = 0;
};

// Adam on class-proportional batches with early stopping on the macro AUROC of a stratified
// inner validation split; the best epoch's parameters are restored.
TrainedModel train_model(const std::vector<Example>& examples, std::size_t n_classes,
                         std::size_t input_width, const TrainOptions& options, std::uint64_t seed);

// ---- experiments -----------------------------------------------------------------------

struct ExperimentConfig {
    FusionStrategy fusion = FusionStrategy::FeatureConcat;
    Task task = Task::Onset;
    std::size_t folds = 10;
    std::uint64_t seed = 0;
    TrainOptions train;
    std::string config_hash;
};

// One trained predictor: a single model, or 12 per-lead models under decision fusion.
struct ModelSet {
    std::optional<std::size_t> fold;  // empty for the model trained on every record
    std::vector<std::string> held_out;
    std::vector<TrainedModel> members;
};

struct RecordPrediction {
    std::vector<double> scores;  // probabilities, or vote fractions under majority vote
    std::size_t label = 0;
    // Under decision fusion, both fused outcomes for the comparison matrices.
    std::optional<std::size_t> accumulate_label;
    std::optional<std::size_t> vote_label;
};

RecordPrediction predict(const ModelSet& models, const RecordFeatures& record, FusionStrategy fusion);

struct FoldReport {
    std::size_t fold = 0;
    std::vector<std::string> held_out;
    EvalMetrics metrics;
};

struct MetricsReport {
    std::string config_hash;
    Task task = Task::Onset;
    FusionStrategy fusion = FusionStrategy::FeatureConcat;
    ModelMode mode = ModelMode::Joint;
    std::vector<FoldReport> per_fold;
    EvalMetrics aggregate;  // pooled out-of-fold predictions
    // Decision fusion only: confusion matrices of both fused outcomes.
    std::optional<std::vector<std::vector<std::size_t>>> accumulate_confusion;
    std::optional<std::vector<std::vector<std::size_t>>> vote_confusion;
};

std::size_t target_of(const RecordFeatures& record, Task task);

// Trains one ModelSet per fold (folds run concurrently) on the other k-1 folds.
std::vector<ModelSet> cross_validate(const std::vector<RecordFeatures>& records, const ExperimentConfig& config);

// Trains on every record.
ModelSet train_final(const std::vector<RecordFeatures>& records, const ExperimentConfig& config);

// Scores each fold's held-out records with that fold's models.
MetricsReport evaluate_folds(const std::vector<RecordFeatures>& records, const ExperimentConfig& config,
                             const std::vector<ModelSet>& fold_models);

MetricsReport run_experiment(const std::vector<RecordFeatures>& records, const ExperimentConfig& config);

// Same records with labels permuted by `seed` (the null-hypothesis control).
std::vector<RecordFeatures> shuffle_labels(std::vector<RecordFeatures> records, std::uint64_t seed);

nlohmann::ordered_json to_json(const EvalMetrics& metrics, Task task);
nlohmann::ordered_json to_json(const MetricsReport& report);

}  // namespace ecgfuse
