#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "focta/model.hpp"

namespace focta {

// One row per parameterized layer, plus a trailing row (layer_id -1) that
// pools the unparameterized nodes: relu masks, pool argmax maps and loss-op
// saves have no Eq-style layer to belong to.
struct MemoryRow {
    int layer_id = -1;
    std::string name;
    std::string kind;
    bool trainable = false;
    int64_t param_bytes = 0;                 // m(theta_l)
    int64_t analytic_activation_bytes = 0;   // m(a_l) * B
    int64_t measured_weight_grad_bytes = 0;
    int64_t measured_pass_through_bytes = 0;
};

// Analytic model: total = sum over trainable layers of
// param bytes + input-activation bytes * batch. Pass-through retention
// (masks, argmax maps, BN statistics, loss saves) is measured and reported
// in its own column but excluded from the analytic total, which counts
// only updated layers. Optimizer state (Adam moments) is a third category.
struct MemoryReport {
    int batch_size = 0;
    int elem_width_bytes = 8;
    std::vector<MemoryRow> rows;

    int64_t model_param_bytes = 0;       // all parameters, constant per run
    int64_t analytic_param_bytes = 0;    // trainable layers only
    int64_t analytic_activation_bytes = 0;
    int64_t analytic_total_bytes = 0;    // analytic_param + analytic_activation
    int64_t measured_weight_grad_bytes = 0;
    int64_t measured_pass_through_bytes = 0;
    int64_t measured_total_bytes = 0;
    int64_t optimizer_state_bytes = 0;   // 2x trainable parameter bytes

    nlohmann::json to_json() const;
    static MemoryReport from_json(const nlohmann::json& j);
    std::string to_table() const;  // aligned plain text for the CLI
};

// Analytic prediction for a trainable-layer plan. Unknown layer ids are a
// plan error. Shape algebra only; no forward pass.
MemoryReport predict_cost(const Model& model, const std::vector<int>& plan_layer_ids, int batch);

// Fills the measured columns from a tape produced under the same plan.
void measure_cost(MemoryReport& report, const Tape& tape);

}  // namespace focta
