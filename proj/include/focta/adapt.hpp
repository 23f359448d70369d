#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "focta/data.hpp"
#include "focta/memory.hpp"
#include "focta/model.hpp"
#include "focta/warmup.hpp"

namespace focta {

// Shannon entropy in nats over a probability vector; 0*log 0 counts as 0.
// Validates the simplex contract (sum within 1e-6 of 1, entries >= 0).
double entropy(const std::vector<double>& probabilities);

enum class StrategyMode { source, focta, tent_all_bn, full_finetune, random_k };

const char* strategy_name(StrategyMode m);
StrategyMode strategy_from_name(const std::string& s);

struct AdaptParams {
    StrategyMode mode = StrategyMode::focta;
    AdaptationPlan plan;       // selection + hyperparameters (B, lr, lambda, h0)
    bool tent_filtered = false;   // ablation: entropy gate for the BN baseline
    bool reg_on_logits = false;   // alternative regularizer target (default: features)
    bool check_finite = true;
    // Below the reference batch the learning rate scales linearly with B so
    // the drift per unit of stream data stays batch-independent (a stream at
    // B=4 takes 8x the optimizer steps of B=32). Above the reference the
    // configured lr is used as-is.
    bool scale_lr_below_reference = true;
    int lr_reference_batch = 32;
    // Nonzero: the evaluator sees deterministically shuffled labels. The
    // adapter must be unaffected (labels feed only the error accounting);
    // hygiene audits assert bit-identical final parameters.
    uint64_t label_shuffle_seed = 0;

    double effective_lr() const {
        if (!scale_lr_below_reference || plan.batch >= lr_reference_batch) return plan.lr;
        return plan.lr * static_cast<double>(plan.batch) / lr_reference_batch;
    }
};

struct DomainResult {
    std::string domain;
    int severity = 0;
    double error_pct = 0.0;
    int samples = 0;
};

struct RunLogRow {
    int step = 0;
    std::string domain;
    int severity = 0;
    double batch_error = 0.0;    // fraction wrong, pre-update
    double kept_fraction = 0.0;  // entropy gate survivors / batch
    double l_ent = 0.0;
    double l_reg = 0.0;          // sum of per-layer L1 terms, before lambda
    double l_total = 0.0;
};

struct AdaptOutcome {
    std::vector<DomainResult> per_domain;
    double average_error_pct = 0.0;  // mean of per-domain error
    int steps = 0;
    MemoryReport memory;
    std::vector<RunLogRow> log;
    std::vector<int> trainable_layer_ids;  // resolved by the mode

    nlohmann::json summary_json() const;
    std::string log_csv() const;  // step,domain,severity,batch-error,... per run-log contract
};

// The online protocol: one forward per incoming batch serves both the
// recorded prediction (before any update) and the adaptation loss; one
// Adam step per batch; no resets between domains. Labels are read only by
// the error accounting. The frozen reference for the drift regularizer is
// snapshotted from `model` before the first step.
AdaptOutcome adapt_stream(Model& model, const DomainStream& stream, const AdaptParams& params,
                          uint64_t seed);

// Trainable layer ids a strategy resolves to, given the plan.
std::vector<int> resolve_trainable_layers(const Model& model, StrategyMode mode,
                                          const AdaptationPlan& plan, uint64_t seed);

}  // namespace focta
