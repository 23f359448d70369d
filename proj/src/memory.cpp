#include "focta/memory.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace focta {

using nlohmann::json;

MemoryReport predict_cost(const Model& model, const std::vector<int>& plan_layer_ids, int batch) {
    if (batch < 1) throw config_error("memory prediction needs batch >= 1");
    std::set<int> plan(plan_layer_ids.begin(), plan_layer_ids.end());
    for (int id : plan) model.layer_by_id(id);  // unknown id -> plan error

    MemoryReport rep;
    rep.batch_size = batch;
    rep.elem_width_bytes = width_bytes(model.store.width);

    // per-sample input activation sizes from the shape algebra
    ModelGraph mg = build_model_graph(model, 1, BnMode::use_running_stats);

    for (const auto& l : model.layers) {
        if (l.layer_id <= 0) continue;
        MemoryRow row;
        row.layer_id = l.layer_id;
        row.name = l.name;
        row.kind = layer_kind_name(l.kind);
        row.trainable = plan.count(l.layer_id) > 0;
        for (int pi : l.param_ids)
            row.param_bytes +=
                model.store.params[static_cast<size_t>(pi)].value.size() * rep.elem_width_bytes;
        int in_node = mg.layer_input_node.at(l.layer_id);
        int64_t per_sample = shape_numel(mg.graph.node(in_node).out_shape);
        row.analytic_activation_bytes = per_sample * batch * rep.elem_width_bytes;
        rep.rows.push_back(row);

        rep.model_param_bytes += row.param_bytes;
        if (row.trainable) {
            rep.analytic_param_bytes += row.param_bytes;
            rep.analytic_activation_bytes += row.analytic_activation_bytes;
            rep.optimizer_state_bytes += 2 * row.param_bytes;
        }
    }
    MemoryRow other;
    other.layer_id = -1;
    other.name = "(unparameterized)";
    other.kind = "-";
    rep.rows.push_back(other);

    rep.analytic_total_bytes = rep.analytic_param_bytes + rep.analytic_activation_bytes;
    return rep;
}

void measure_cost(MemoryReport& report, const Tape& tape) {
    for (auto& row : report.rows) {
        row.measured_weight_grad_bytes = 0;
        row.measured_pass_through_bytes = 0;
    }
    auto row_for = [&](int layer_id) -> MemoryRow& {
        for (auto& row : report.rows)
            if (row.layer_id == layer_id) return row;
        return report.rows.back();  // the pooled unparameterized row
    };
    report.measured_weight_grad_bytes = 0;
    report.measured_pass_through_bytes = 0;
    for (const auto& node : tape.nodes) {
        if (node.weight_grad_bytes == 0 && node.pass_through_bytes == 0) continue;
        MemoryRow& row = row_for(node.layer_id);
        row.measured_weight_grad_bytes += node.weight_grad_bytes;
        row.measured_pass_through_bytes += node.pass_through_bytes;
        report.measured_weight_grad_bytes += node.weight_grad_bytes;
        report.measured_pass_through_bytes += node.pass_through_bytes;
    }
    report.measured_total_bytes =
        report.measured_weight_grad_bytes + report.measured_pass_through_bytes;
}

json MemoryReport::to_json() const {
    json rows_j = json::array();
    for (const auto& r : rows) {
        rows_j.push_back({{"layer_id", r.layer_id},
                          {"name", r.name},
                          {"kind", r.kind},
                          {"trainable", r.trainable},
                          {"param_bytes", r.param_bytes},
                          {"analytic_activation_bytes", r.analytic_activation_bytes},
                          {"measured_weight_grad_bytes", r.measured_weight_grad_bytes},
                          {"measured_pass_through_bytes", r.measured_pass_through_bytes}});
    }
    return json{{"batch_size", batch_size},
                {"elem_width_bytes", elem_width_bytes},
                {"rows", std::move(rows_j)},
                {"model_param_bytes", model_param_bytes},
                {"analytic_param_bytes", analytic_param_bytes},
                {"analytic_activation_bytes", analytic_activation_bytes},
                {"analytic_total_bytes", analytic_total_bytes},
                {"measured_weight_grad_bytes", measured_weight_grad_bytes},
                {"measured_pass_through_bytes", measured_pass_through_bytes},
                {"measured_total_bytes", measured_total_bytes},
                {"optimizer_state_bytes", optimizer_state_bytes}};
}

MemoryReport MemoryReport::from_json(const json& j) {
    MemoryReport rep;
    rep.batch_size = j.at("batch_size").get<int>();
    rep.elem_width_bytes = j.at("elem_width_bytes").get<int>();
    for (const auto& r : j.at("rows")) {
        MemoryRow row;
        row.layer_id = r.at("layer_id").get<int>();
        row.name = r.at("name").get<std::string>();
        row.kind = r.at("kind").get<std::string>();
        row.trainable = r.at("trainable").get<bool>();
        row.param_bytes = r.at("param_bytes").get<int64_t>();
        row.analytic_activation_bytes = r.at("analytic_activation_bytes").get<int64_t>();
        row.measured_weight_grad_bytes = r.at("measured_weight_grad_bytes").get<int64_t>();
        row.measured_pass_through_bytes = r.at("measured_pass_through_bytes").get<int64_t>();
        rep.rows.push_back(std::move(row));
    }
    rep.model_param_bytes = j.at("model_param_bytes").get<int64_t>();
    rep.analytic_param_bytes = j.at("analytic_param_bytes").get<int64_t>();
    rep.analytic_activation_bytes = j.at("analytic_activation_bytes").get<int64_t>();
    rep.analytic_total_bytes = j.at("analytic_total_bytes").get<int64_t>();
    rep.measured_weight_grad_bytes = j.at("measured_weight_grad_bytes").get<int64_t>();
    rep.measured_pass_through_bytes = j.at("measured_pass_through_bytes").get<int64_t>();
    rep.measured_total_bytes = j.at("measured_total_bytes").get<int64_t>();
    rep.optimizer_state_bytes = j.at("optimizer_state_bytes").get<int64_t>();
    return rep;
}

std::string MemoryReport::to_table() const {
    std::ostringstream out;
    auto line = [&](const std::string& a, const std::string& b, const std::string& c,
                    const std::string& d, const std::string& e, const std::string& f,
                    const std::string& g) {
        out << "  ";
        out.width(4);
        out << std::right << a << "  ";
        out.width(18);
        out << std::left << b;
        out.width(11);
        out << std::left << c;
        out.width(6);
        out << std::left << d;
        out.width(12);
        out << std::right << e;
        out.width(14);
        out << std::right << f;
        out.width(14);
        out << std::right << g << "\n";
    };
    out << "memory report (B=" << batch_size << ", elem width " << elem_width_bytes
        << " bytes)\n";
    line("id", "layer", "kind", "train", "param B", "analytic a*B", "measured w/p");
    for (const auto& r : rows) {
        line(r.layer_id > 0 ? std::to_string(r.layer_id) : "-", r.name, r.kind,
             r.trainable ? "yes" : "no", std::to_string(r.param_bytes),
             std::to_string(r.analytic_activation_bytes),
             std::to_string(r.measured_weight_grad_bytes) + "/" +
                 std::to_string(r.measured_pass_through_bytes));
    }
    out << "  model params (constant): " << model_param_bytes << " B\n";
    out << "  analytic total (trainable params + activations): " << analytic_total_bytes
        << " B\n";
    out << "  measured: weight-grad " << measured_weight_grad_bytes << " B, pass-through "
        << measured_pass_through_bytes << " B, total " << measured_total_bytes << " B\n";
    out << "  optimizer state (adam moments): " << optimizer_state_bytes << " B\n";
    return out.str();
}

}  // namespace focta
