#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "focta/data.hpp"
#include "focta/model.hpp"

namespace focta {

enum class ImportanceMetric { grad_norm, l1_norm, weight_norm };
enum class GradNormKind { l1, l2 };
enum class ScoreNormalization { raw, log_scale, max_shifted_log };

const char* importance_metric_name(ImportanceMetric m);
ImportanceMetric importance_metric_from_name(const std::string& s);

// Per-representation-layer importance. Under grad_norm the score is
// log(mean over warm-up batches of the per-batch gradient norm); layers
// whose gradients stayed identically zero carry a -inf sentinel and rank
// last. l1_norm / weight_norm are training-free weight statistics.
struct ImportanceVector {
    std::vector<int> layer_ids;   // ascending representation layer ids
    std::vector<double> scores;   // aligned with layer_ids
    ImportanceMetric metric = ImportanceMetric::grad_norm;
    int batches_seen = 0;

    // presentation transform for the ranked CLI table; max_shifted_log
    // maps the best layer to 0 on a log scale
    std::vector<double> normalized(ScoreNormalization norm) const;

    nlohmann::json to_json() const;
    static ImportanceVector from_json(const nlohmann::json& j);
};

// Trainable partition plus the hyperparameters governing one CTTA run.
struct AdaptationPlan {
    std::vector<int> selected_layer_ids;  // size M, ascending
    double alpha = 0.1;
    double lambda = 1.0;
    double h0 = 0.0;         // resolved entropy threshold (h0_factor * ln C)
    double h0_factor = 0.4;
    int batch = 32;
    double lr = 0.001;
    BnMode bn_mode = BnMode::use_running_stats;
    ImportanceMetric metric = ImportanceMetric::grad_norm;

    nlohmann::json to_json() const;
    static AdaptationPlan from_json(const nlohmann::json& j);
};

struct WarmupParams {
    std::vector<AugmentKind> recipe = {AugmentKind::jitter, AugmentKind::invert};
    int epochs = 1;
    double lr = 0.00025;  // adam
    int batch = 32;
    bool keep_weights = false;  // profiling-only by default
    GradNormKind norm_kind = GradNormKind::l2;
};

// Offline warm-up: fine-tunes the feature extractor (classifier frozen
// throughout) on augmented source data with cross-entropy, accumulating
// the per-batch gradient norm of each representation layer (weight and
// bias gradients concatenated). With keep_weights=false every parameter
// and BN statistic is restored afterwards, so the phase is purely a
// profiling pass over the published pretrained weights.
ImportanceVector warmup(Model& model, const Dataset& source, const WarmupParams& params,
                        uint64_t seed);

ImportanceVector score_l1(const Model& model);
ImportanceVector score_weight_norm(const Model& model);

// log of the mean per-batch gradient norm; -inf when the signal is zero
double grad_norm_score(const std::vector<double>& per_batch_norms);

// Top-M selection, M = max(1, ceil(alpha * L_rep)); ties break toward the
// smaller layer id, -inf sentinels rank last, classifier layers are not
// candidates by construction. Hyperparameters other than alpha keep their
// defaults for the caller to fill in.
AdaptationPlan select_topk(const ImportanceVector& scores, double alpha);

// Ranked per-layer table for the CLI (max-shifted log scale).
std::string importance_table(const ImportanceVector& scores);

void save_plan(const AdaptationPlan& plan, const ImportanceVector& scores,
               const std::string& path,
               const std::map<std::string, std::string>& extra = {});
struct LoadedPlan {
    AdaptationPlan plan;
    ImportanceVector scores;
    std::map<std::string, std::string> meta;
};
LoadedPlan load_plan(const std::string& path);

}  // namespace focta
