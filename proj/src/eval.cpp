#include "ecgfuse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include "ecgfuse/error.hpp"
#include "ecgfuse/parallel.hpp"
#include "ecgfuse/rng.hpp"

namespace ecgfuse {

// ---- folds and batches -----------------------------------------------------------------

std::vector<std::string> FoldAssignment::records_in(std::size_t fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : fold_of) {
        if (f == fold) out.push_back(id);
    }
    return out;
}

std::vector<std::string> FoldAssignment::records_outside(std::size_t fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : fold_of) {
        if (f != fold) out.push_back(id);
    }
    return out;
}

FoldAssignment stratified_kfold(const std::vector<std::pair<std::string, std::size_t>>& labels,
                                std::size_t k, std::uint64_t seed) {
    if (k < 2) throw Error(ErrorCode::ConfigInvalid, "k-fold needs k >= 2");
    std::map<std::size_t, std::vector<std::string>> by_class;
    FoldAssignment out;
    out.k = k;
    for (const auto& [id, c] : labels) {
        if (!out.stratum.emplace(id, c).second) {
            throw Error(ErrorCode::ConfigInvalid, "duplicate record id '" + id + "'");
        }
        by_class[c].push_back(id);
    }
    for (const auto& [c, ids] : by_class) {
        if (ids.size() < k) {
            throw Error(ErrorCode::ClassTooSmall, "class " + std::to_string(c) + " has " +
                                                      std::to_string(ids.size()) + " records, fewer than k=" +
                                                      std::to_string(k));
        }
    }
    Rng rng(seed);
    std::size_t next_fold = 0;
    for (auto& [c, ids] : by_class) {
        std::sort(ids.begin(), ids.end());
        rng.shuffle(std::span<std::string>(ids));
        for (const auto& id : ids) {
            out.fold_of[id] = next_fold;
            next_fold = (next_fold + 1) % k;
        }
    }
    return out;
}

std::vector<std::vector<std::size_t>> balanced_batches(const std::vector<std::size_t>& classes,
                                                       std::size_t batch_size, std::uint64_t seed) {
    if (classes.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no training records");
    const std::size_t n_classes = *std::max_element(classes.begin(), classes.end()) + 1;
    std::vector<std::vector<std::size_t>> pools(n_classes);
    for (std::size_t i = 0; i < classes.size(); ++i) pools[classes[i]].push_back(i);
    const std::size_t present = static_cast<std::size_t>(
        std::count_if(pools.begin(), pools.end(), [](const auto& p) { return !p.empty(); }));
    if (batch_size < present) {
        throw Error(ErrorCode::ConfigInvalid, "batch size " + std::to_string(batch_size) +
                                                  " is smaller than the number of classes");
    }
    Rng rng(seed);
    for (auto& p : pools) rng.shuffle(std::span<std::size_t>(p));

    const auto total = static_cast<std::int64_t>(classes.size());
    const auto bs = static_cast<std::int64_t>(batch_size);
    std::vector<std::int64_t> count(n_classes), taken(n_classes, 0);
    for (std::size_t c = 0; c < n_classes; ++c) count[c] = static_cast<std::int64_t>(pools[c].size());

    std::vector<std::vector<std::size_t>> batches;
    const std::int64_t full = total / bs;
    for (std::int64_t b = 0; b < full; ++b) {
        const std::int64_t seats_so_far = (b + 1) * bs;
        std::vector<std::int64_t> share(n_classes);
        std::int64_t assigned = 0;
        for (std::size_t c = 0; c < n_classes; ++c) {
            share[c] = std::min(bs * count[c] / total, count[c] - taken[c]);
            assigned += share[c];
        }
        // Leftover seats: one extra per class, to the largest running deficit
        // (seats_so_far * p_c - taken_c, scaled by the total).
        std::vector<bool> bumped(n_classes, false);
        while (assigned < bs) {
            std::size_t best = n_classes;
            std::int64_t best_deficit = std::numeric_limits<std::int64_t>::min();
            for (int allow_repeat = 0; allow_repeat < 2 && best == n_classes; ++allow_repeat) {
                for (std::size_t c = 0; c < n_classes; ++c) {
                    if (taken[c] + share[c] >= count[c] || (bumped[c] && !allow_repeat)) continue;
                    const std::int64_t deficit = seats_so_far * count[c] - (taken[c] + share[c]) * total;
                    if (deficit > best_deficit) {
                        best = c;
                        best_deficit = deficit;
                    }
                }
            }
            if (best == n_classes) break;
            ++share[best];
            bumped[best] = true;
            ++assigned;
        }
        std::vector<std::size_t> batch;
        batch.reserve(batch_size);
        for (std::size_t c = 0; c < n_classes; ++c) {
            for (std::int64_t s = 0; s < share[c]; ++s) batch.push_back(pools[c][static_cast<std::size_t>(taken[c] + s)]);
            taken[c] += share[c];
        }
        rng.shuffle(std::span<std::size_t>(batch));
        batches.push_back(std::move(batch));
    }
    std::vector<std::size_t> rest;
    for (std::size_t c = 0; c < n_classes; ++c) {
        for (auto s = static_cast<std::size_t>(taken[c]); s < pools[c].size(); ++s) rest.push_back(pools[c][s]);
    }
    if (!rest.empty()) {
        rng.shuffle(std::span<std::size_t>(rest));
        batches.push_back(std::move(rest));
    }
    return batches;
}

// ---- metrics ---------------------------------------------------------------------------

double auroc(const std::vector<double>& scores, const std::vector<bool>& positive) {
    if (scores.size() != positive.size()) throw Error(ErrorCode::LengthMismatch, "auroc: scores and labels differ in length");
    std::uint64_t n_pos = 0, n_neg = 0;
    for (bool p : positive) (p ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0) throw Error(ErrorCode::DegenerateLabels, "auroc needs both positives and negatives");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Twice the U statistic, kept integral so ties count exactly one half.
    std::uint64_t twice_u = 0, neg_below = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::uint64_t pos = 0, neg = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (positive[order[j]] ? pos : neg)++;
            ++j;
        }
        twice_u += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos * n_neg));
}

namespace {

double ratio(std::size_t num, std::size_t den, bool& zero_division) {
    if (den == 0) {
        zero_division = true;
        return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ClassificationMetrics classification_metrics(const std::vector<std::size_t>& predicted,
                                             const std::vector<std::size_t>& truth, std::size_t n_classes) {
    if (predicted.size() != truth.size()) throw Error(ErrorCode::LengthMismatch, "predictions and truth differ in length");
    if (truth.empty()) throw Error(ErrorCode::LengthMismatch, "no predictions to score");
    ClassificationMetrics m;
    m.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= n_classes || predicted[i] >= n_classes) {
            throw Error(ErrorCode::InvalidTarget, "class index out of range");
        }
        ++m.confusion[truth[i]][predicted[i]];
        if (truth[i] == predicted[i]) ++correct;
    }
    const std::size_t n = truth.size();
    m.accuracy = static_cast<double>(correct) / static_cast<double>(n);

    auto one_vs_rest = [&](std::size_t c, double& pre, double& sen, double& spe, double& f1) {
        std::size_t tp = m.confusion[c][c], fp = 0, fn = 0;
        for (std::size_t o = 0; o < n_classes; ++o) {
            if (o == c) continue;
            fp += m.confusion[o][c];
            fn += m.confusion[c][o];
        }
        const std::size_t tn = n - tp - fp - fn;
        pre = ratio(tp, tp + fp, m.zero_division);
        sen = ratio(tp, tp + fn, m.zero_division);
        spe = ratio(tn, tn + fp, m.zero_division);
        f1 = ratio(2 * tp, 2 * tp + fp + fn, m.zero_division);
    };

    if (n_classes == 2) {
        one_vs_rest(0, m.precision, m.sensitivity, m.specificity, m.f1);
        return m;
    }
    for (std::size_t c = 0; c < n_classes; ++c) {
        double pre, sen, spe, f1;
        one_vs_rest(c, pre, sen, spe, f1);
        m.precision += pre / static_cast<double>(n_classes);
        m.sensitivity += sen / static_cast<double>(n_classes);
        m.specificity += spe / static_cast<double>(n_classes);
        m.f1 += f1 / static_cast<double>(n_classes);
    }
    return m;
}

EvalMetrics evaluate_scores(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& predicted,
                            const std::vector<std::size_t>& truth, std::size_t n_classes) {
    if (scores.size() != truth.size()) throw Error(ErrorCode::LengthMismatch, "scores and truth differ in length");
    EvalMetrics m;
    m.n_records = truth.size();
    m.classification = classification_metrics(predicted, truth, n_classes);
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::vector<double> s(scores.size());
        std::vector<bool> pos(scores.size());
        bool has_pos = false, has_neg = false;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i].size() != n_classes) throw Error(ErrorCode::ShapeMismatch, "score vector has the wrong class count");
            s[i] = scores[i][c];
            pos[i] = truth[i] == c;
            (pos[i] ? has_pos : has_neg) = true;
        }
        if (has_pos && has_neg) {
            const double a = auroc(s, pos);
            m.auroc_per_class.emplace_back(a);
            sum += a;
            ++defined;
        } else {
            m.auroc_per_class.emplace_back(std::nullopt);
        }
    }
    if (defined > 0) m.auroc_macro = sum / static_cast<double>(defined);
    return m;
}

// ---- data ------------------------------------------------------------------------------

namespace {

std::vector<double> widen(std::span<const float> values) { return std::vector<double>(values.begin(), values.end()); }

void require_leads(const RecordFeatures& record, std::uint32_t n_leads, FusionStrategy fusion) {
    if (record.blob.n_leads != n_leads) {
        throw Error(ErrorCode::ConfigInvalid,
                    std::string(fusion_name(fusion)) + " fusion needs " +
                        (n_leads == 1 ? "stacked" : "per-lead") + " features, but the cache for " +
                        record.record_id + " holds " + std::to_string(record.blob.n_leads) + " lead(s)");
    }
}

}  // namespace

std::vector<Sequence> model_inputs(const RecordFeatures& record, FusionStrategy fusion) {
    const FeatureBlob& blob = record.blob;
    if (blob.gamma == 0) throw Error(ErrorCode::EmptySequence, record.record_id + " has no windows");
    if (fusion == FusionStrategy::Data) {
        require_leads(record, 1, fusion);
        Sequence seq;
        for (std::size_t n = 0; n < blob.gamma; ++n) seq.push_back(widen(blob.at(0, n)));
        return {std::move(seq)};
    }
    require_leads(record, kNumLeads, fusion);
    if (is_decision_fusion(fusion)) {
        std::vector<Sequence> per_lead(kNumLeads);
        for (std::size_t j = 0; j < kNumLeads; ++j) {
            for (std::size_t n = 0; n < blob.gamma; ++n) per_lead[j].push_back(widen(blob.at(j, n)));
        }
        return per_lead;
    }
    Sequence seq;
    for (std::size_t n = 0; n < blob.gamma; ++n) {
        PerLead<FeatureVector> bundle;
        for (LeadId lead : kAllLeads) {
            FeatureVector fv;
            fv.values = widen(blob.at(index_of(lead), n));
            fv.source = FeatureSource::single_lead(lead, n);
            bundle[index_of(lead)] = std::move(fv);
        }
        const FeatureVector fused =
            fusion == FusionStrategy::FeatureConcat ? feature_concat(bundle) : feature_accumulate(bundle);
        seq.push_back(fused.values);
    }
    return {std::move(seq)};
}

std::size_t model_input_width(const RecordFeatures& record, FusionStrategy fusion) {
    return fusion == FusionStrategy::FeatureConcat ? kNumLeads * record.blob.tau : record.blob.tau;
}

// ---- training --------------------------------------------------------------------------

namespace {

// Validation objective: macro AUROC first, mean loss as the tie-breaker.
struct Score {
    double auroc = -1.0;
    double neg_loss = -std::numeric_limits<double>::infinity();

    bool operator>(const Score& o) const {
        if (auroc != o.auroc) return auroc > o.auroc;
        return neg_loss > o.neg_loss;
    }
};

Score validation_score(const std::vector<Example>& examples, const std::vector<std::size_t>& idx,
                       const ModelParams& params, std::size_t n_classes) {
    std::vector<std::vector<double>> scores;
    std::vector<std::size_t> pred, truth;
    double total = 0.0;
    for (std::size_t i : idx) {
        const Prediction p = forward_sequence(*examples[i].inputs, params);
        total -= std::log(std::max(p.probs[examples[i].target], 1e-300));
        scores.push_back(p.probs);
        pred.push_back(p.label);
        truth.push_back(examples[i].target);
    }
    Score s;
    s.neg_loss = -total / static_cast<double>(idx.size());
    const EvalMetrics m = evaluate_scores(scores, pred, truth, n_classes);
    if (m.auroc_macro) s.auroc = *m.auroc_macro;
    return s;
}

}  // namespace

TrainedModel train_model(const std::vector<Example>& examples, std::size_t n_classes, std::size_t input_width,
                         const TrainOptions& options, std::uint64_t seed) {
    if (examples.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no training examples");
    if (options.epochs == 0 || options.batch_size == 0) {
        throw Error(ErrorCode::ConfigInvalid, "epochs and batch size must be positive");
    }
    for (const auto& e : examples) {
        if (e.target >= n_classes) throw Error(ErrorCode::InvalidTarget, "training target out of range");
    }

    // Stratified inner validation split.
    std::vector<std::vector<std::size_t>> by_class(n_classes);
    for (std::size_t i = 0; i < examples.size(); ++i) by_class[examples[i].target].push_back(i);
    Rng split_rng(derive_seed(seed, 11));
    std::vector<std::size_t> train_idx, val_idx;
    for (auto& members : by_class) {
        split_rng.shuffle(std::span<std::size_t>(members));
        std::size_t n_val = 0;
        if (options.validation_fraction > 0.0 && members.size() >= 2) {
            n_val = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::lround(options.validation_fraction * static_cast<double>(members.size()))));
            n_val = std::min(n_val, members.size() - 1);
        }
        val_idx.insert(val_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
        train_idx.insert(train_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::vector<std::size_t> train_classes;
    for (std::size_t i : train_idx) train_classes.push_back(examples[i].target);

    ModelDims dims;
    dims.input = input_width;
    dims.dense = options.dense;
    dims.hidden = options.hidden;
    dims.classes = n_classes;

    TrainedModel result;
    ModelParams params = init_params(options.mode, dims, derive_seed(seed, 1));
    OptimizerState opt = make_optimizer(params, options.learning_rate);
    result.params = params;
    result.optimizer = opt;
    Score best;
    ModelParams grads;
    for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
        result.epochs_run = epoch;
        const auto batches = balanced_batches(train_classes, std::max(options.batch_size, n_classes),
                                              derive_seed(seed, 1000 + epoch));
        for (const auto& batch : batches) {
            std::vector<LabeledSequence> labeled;
            labeled.reserve(batch.size());
            for (std::size_t b : batch) {
                const Example& e = examples[train_idx[b]];
                labeled.push_back({e.inputs, e.target});
            }
            backward(labeled, params, grads);
            adam_step(params, grads, opt);
        }
        if (val_idx.empty()) {
            result.params = params;
            result.optimizer = opt;
            result.best_epoch = epoch;
            continue;
        }
        const Score s = validation_score(examples, val_idx, params, n_classes);
        if (s > best) {
            best = s;
            result.params = params;
            result.optimizer = opt;
            result.best_epoch = epoch;
        } else if (epoch - result.best_epoch >= options.patience) {
            break;
        }
    }
    return result;
}

// ---- experiments -----------------------------------------------------------------------

std::size_t target_of(const RecordFeatures& record, Task task) {
    if (!record.label) throw Error(ErrorCode::InvalidTarget, "record " + record.record_id + " has no label");
    return class_index(*record.label, task);
}

namespace {

struct PreparedData {
    std::vector<std::vector<Sequence>> inputs;  // [record][member]
    std::vector<std::size_t> targets;
    std::map<std::string, std::size_t> index;
    std::size_t width = 0;
    std::size_t members = 1;
};

PreparedData prepare(const std::vector<RecordFeatures>& records, const ExperimentConfig& config) {
    if (records.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no records in the dataset");
    PreparedData d;
    d.inputs.resize(records.size());
    d.targets.resize(records.size());
    parallel_for(records.size(), [&](std::size_t i) {
        d.inputs[i] = model_inputs(records[i], config.fusion);
        d.targets[i] = target_of(records[i], config.task);
    });
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!d.index.emplace(records[i].record_id, i).second) {
            throw Error(ErrorCode::ConfigInvalid, "duplicate record id '" + records[i].record_id + "'");
        }
        if (records[i].blob.tau != records[0].blob.tau || records[i].blob.gamma != records[0].blob.gamma) {
            throw Error(ErrorCode::ShapeMismatch, "records in the cache differ in tau or gamma");
        }
    }
    d.width = model_input_width(records[0], config.fusion);
    d.members = d.inputs[0].size();
    return d;
}

ModelSet train_set(const PreparedData& d, const std::vector<std::size_t>& train, const ExperimentConfig& config,
                   std::uint64_t seed) {
    ModelSet set;
    set.members.resize(d.members);
    const std::size_t n_classes = num_classes(config.task);
    parallel_for(d.members, [&](std::size_t m) {
        std::vector<Example> examples;
        examples.reserve(train.size());
        for (std::size_t i : train) examples.push_back({&d.inputs[i][m], d.targets[i]});
        set.members[m] = train_model(examples, n_classes, d.width, config.train, derive_seed(seed, m));
    });
    return set;
}

FoldAssignment assign_folds(const std::vector<RecordFeatures>& records, const PreparedData& d,
                            const ExperimentConfig& config) {
    std::vector<std::pair<std::string, std::size_t>> labels;
    for (std::size_t i = 0; i < records.size(); ++i) labels.emplace_back(records[i].record_id, d.targets[i]);
    return stratified_kfold(labels, config.folds, derive_seed(config.seed, 0xF01D));
}

}  // namespace

std::vector<ModelSet> cross_validate(const std::vector<RecordFeatures>& records, const ExperimentConfig& config) {
    const PreparedData d = prepare(records, config);
    const FoldAssignment folds = assign_folds(records, d, config);
    std::vector<ModelSet> out(config.folds);
    parallel_for(config.folds, [&](std::size_t f) {
        const auto held_out = folds.records_in(f);
        const auto training = folds.records_outside(f);
        const std::set<std::string> test_ids(held_out.begin(), held_out.end());
        std::vector<std::size_t> train;
        for (const auto& id : training) {
            if (test_ids.count(id)) throw std::logic_error("record " + id + " is in both train and test folds");
            train.push_back(d.index.at(id));
        }
        out[f] = train_set(d, train, config, derive_seed(config.seed, f + 1));
        out[f].fold = f;
        out[f].held_out = held_out;
    });
    return out;
}

ModelSet train_final(const std::vector<RecordFeatures>& records, const ExperimentConfig& config) {
    const PreparedData d = prepare(records, config);
    std::vector<std::size_t> all(records.size());
    std::iota(all.begin(), all.end(), 0);
    return train_set(d, all, config, derive_seed(config.seed, 0));
}

RecordPrediction predict(const ModelSet& models, const RecordFeatures& record, FusionStrategy fusion) {
    const auto inputs = model_inputs(record, fusion);
    if (inputs.size() != models.members.size()) {
        throw Error(ErrorCode::ShapeMismatch, "model set has " + std::to_string(models.members.size()) +
                                                  " member(s) but the fusion strategy needs " +
                                                  std::to_string(inputs.size()));
    }
    RecordPrediction out;
    if (!is_decision_fusion(fusion)) {
        const Prediction p = forward_sequence(inputs[0], models.members[0].params);
        out.scores = p.probs;
        out.label = p.label;
        return out;
    }
    PerLead<Prediction> bundle;
    for (std::size_t j = 0; j < kNumLeads; ++j) bundle[j] = forward_sequence(inputs[j], models.members[j].params);
    const Prediction acc = decision_accumulate(bundle);
    const std::size_t vote = majority_vote(bundle);
    out.accumulate_label = acc.label;
    out.vote_label = vote;
    if (fusion == FusionStrategy::DecisionAccum) {
        out.scores = acc.probs;
        out.label = acc.label;
    } else {
        out.scores.assign(acc.probs.size(), 0.0);
        for (const auto& p : bundle) out.scores[p->label] += 1.0 / static_cast<double>(kNumLeads);
        out.label = vote;
    }
    return out;
}

MetricsReport evaluate_folds(const std::vector<RecordFeatures>& records, const ExperimentConfig& config,
                             const std::vector<ModelSet>& fold_models) {
    const std::size_t n_classes = num_classes(config.task);
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < records.size(); ++i) index.emplace(records[i].record_id, i);

    MetricsReport report;
    report.config_hash = config.config_hash;
    report.task = config.task;
    report.fusion = config.fusion;
    report.mode = config.train.mode;

    std::set<std::string> seen;
    std::vector<std::vector<double>> all_scores;
    std::vector<std::size_t> all_pred, all_truth, all_acc, all_vote;
    for (const auto& set : fold_models) {
        if (!set.fold) continue;
        std::vector<RecordPrediction> preds(set.held_out.size());
        parallel_for(set.held_out.size(), [&](std::size_t k) {
            const auto it = index.find(set.held_out[k]);
            if (it == index.end()) throw Error(ErrorCode::CacheMiss, "held-out record " + set.held_out[k] + " is not in the cache");
            preds[k] = predict(set, records[it->second], config.fusion);
        });
        std::vector<std::vector<double>> scores;
        std::vector<std::size_t> pred, truth;
        for (std::size_t k = 0; k < preds.size(); ++k) {
            if (!seen.insert(set.held_out[k]).second) {
                throw std::logic_error("record " + set.held_out[k] + " is held out by more than one fold");
            }
            const std::size_t t = target_of(records[index.at(set.held_out[k])], config.task);
            scores.push_back(preds[k].scores);
            pred.push_back(preds[k].label);
            truth.push_back(t);
            if (preds[k].accumulate_label) all_acc.push_back(*preds[k].accumulate_label);
            if (preds[k].vote_label) all_vote.push_back(*preds[k].vote_label);
        }
        FoldReport fr;
        fr.fold = *set.fold;
        fr.held_out = set.held_out;
        fr.metrics = evaluate_scores(scores, pred, truth, n_classes);
        report.per_fold.push_back(std::move(fr));
        all_scores.insert(all_scores.end(), scores.begin(), scores.end());
        all_pred.insert(all_pred.end(), pred.begin(), pred.end());
        all_truth.insert(all_truth.end(), truth.begin(), truth.end());
    }
    if (all_truth.empty()) throw Error(ErrorCode::ConfigInvalid, "no cross-validation folds to evaluate");
    report.aggregate = evaluate_scores(all_scores, all_pred, all_truth, n_classes);
    if (is_decision_fusion(config.fusion)) {
        report.accumulate_confusion = classification_metrics(all_acc, all_truth, n_classes).confusion;
        report.vote_confusion = classification_metrics(all_vote, all_truth, n_classes).confusion;
    }
    return report;
}

MetricsReport run_experiment(const std::vector<RecordFeatures>& records, const ExperimentConfig& config) {
    return evaluate_folds(records, config, cross_validate(records, config));
}

std::vector<RecordFeatures> shuffle_labels(std::vector<RecordFeatures> records, std::uint64_t seed) {
    std::vector<std::optional<DiagnosisLabel>> labels;
    for (const auto& r : records) labels.push_back(r.label);
    Rng rng(seed);
    rng.shuffle(std::span<std::optional<DiagnosisLabel>>(labels));
    for (std::size_t i = 0; i < records.size(); ++i) records[i].label = labels[i];
    return records;
}

// ---- json ------------------------------------------------------------------------------

namespace {

nlohmann::ordered_json optional_number(const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json matrix_json(const std::vector<std::vector<std::size_t>>& m) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : m) rows.push_back(r);
    return rows;
}

}  // namespace

nlohmann::ordered_json to_json(const EvalMetrics& m, Task task) {
    nlohmann::ordered_json j;
    j["n_records"] = m.n_records;
    nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
    for (std::size_t c = 0; c < m.auroc_per_class.size(); ++c) {
        per_class[std::string(class_name(c, task))] = optional_number(m.auroc_per_class[c]);
    }
    j["auroc_per_class"] = per_class;
    j["auroc_macro"] = optional_number(m.auroc_macro);
    j["accuracy"] = m.classification.accuracy;
    j["precision"] = m.classification.precision;
    j["sensitivity"] = m.classification.sensitivity;
    j["specificity"] = m.classification.specificity;
    j["f1"] = m.classification.f1;
    j["zero_division"] = m.classification.zero_division;
    j["confusion_matrix"] = matrix_json(m.classification.confusion);
    return j;
}

nlohmann::ordered_json to_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["config_hash"] = report.config_hash;
    j["task"] = std::string(task_name(report.task));
    j["fusion"] = std::string(fusion_name(report.fusion));
    j["model"] = std::string(model_mode_name(report.mode));
    j["classes"] = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < num_classes(report.task); ++c) j["classes"].push_back(std::string(class_name(c, report.task)));
    nlohmann::ordered_json folds = nlohmann::ordered_json::array();
    for (const auto& f : report.per_fold) {
        nlohmann::ordered_json fj;
        fj["fold"] = f.fold;
        fj["held_out"] = f.held_out;
        fj.update(to_json(f.metrics, report.task));
        folds.push_back(std::move(fj));
    }
    j["per_fold"] = std::move(folds);
    j["aggregate"] = to_json(report.aggregate, report.task);
    if (report.accumulate_confusion && report.vote_confusion) {
        j["decision_fusion"] = {{"accumulate", {{"confusion_matrix", matrix_json(*report.accumulate_confusion)}}},
                                {"vote", {{"confusion_matrix", matrix_json(*report.vote_confusion)}}}};
    }
    return j;
}

}  // namespace ecgfuse
