#include "focta/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace focta {

using nlohmann::json;

json ExperimentConfig::to_json() const {
    return json{{"dataset_n", dataset_n},
                {"num_classes", num_classes},
                {"seed", seed},
                {"conv_widths", conv_widths},
                {"stem_kernel", stem_kernel},
                {"input_hw", input_hw},
                {"elem_width", elem_width},
                {"pretrain_epochs", pretrain_epochs},
                {"pretrain_lr", pretrain_lr},
                {"pretrain_batch", pretrain_batch},
                {"pretrain_target_accuracy", pretrain_target_accuracy},
                {"pretrain_floor_accuracy", pretrain_floor_accuracy},
                {"warmup_recipe", warmup_recipe},
                {"warmup_epochs", warmup_epochs},
                {"warmup_lr", warmup_lr},
                {"warmup_batch", warmup_batch},
                {"warmup_keep_weights", warmup_keep_weights},
                {"warmup_grad_norm", warmup_grad_norm},
                {"alpha", alpha},
                {"mode", mode},
                {"batch", batch},
                {"lr", lr},
                {"lambda_reg", lambda_reg},
                {"h0_factor", h0_factor},
                {"tent_filtered", tent_filtered},
                {"reg_on_logits", reg_on_logits},
                {"scale_lr_below_reference", scale_lr_below_reference},
                {"lr_reference_batch", lr_reference_batch},
                {"stream_kinds", stream_kinds},
                {"stream_severity", stream_severity},
                {"samples_per_segment", samples_per_segment},
                {"sweep_batches", sweep_batches},
                {"sweep_modes", sweep_modes},
                {"out_dir", out_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig cfg;
    json known = cfg.to_json();
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.contains(it.key()))
            throw config_error("unknown config key '" + it.key() + "'");

    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("dataset_n", cfg.dataset_n);
    get("num_classes", cfg.num_classes);
    get("seed", cfg.seed);
    get("conv_widths", cfg.conv_widths);
    get("stem_kernel", cfg.stem_kernel);
    get("input_hw", cfg.input_hw);
    get("elem_width", cfg.elem_width);
    get("pretrain_epochs", cfg.pretrain_epochs);
    get("pretrain_lr", cfg.pretrain_lr);
    get("pretrain_batch", cfg.pretrain_batch);
    get("pretrain_target_accuracy", cfg.pretrain_target_accuracy);
    get("pretrain_floor_accuracy", cfg.pretrain_floor_accuracy);
    get("warmup_recipe", cfg.warmup_recipe);
    get("warmup_epochs", cfg.warmup_epochs);
    get("warmup_lr", cfg.warmup_lr);
    get("warmup_batch", cfg.warmup_batch);
    get("warmup_keep_weights", cfg.warmup_keep_weights);
    get("warmup_grad_norm", cfg.warmup_grad_norm);
    get("alpha", cfg.alpha);
    get("mode", cfg.mode);
    get("batch", cfg.batch);
    get("lr", cfg.lr);
    get("lambda_reg", cfg.lambda_reg);
    get("h0_factor", cfg.h0_factor);
    get("tent_filtered", cfg.tent_filtered);
    get("reg_on_logits", cfg.reg_on_logits);
    get("scale_lr_below_reference", cfg.scale_lr_below_reference);
    get("lr_reference_batch", cfg.lr_reference_batch);
    get("stream_kinds", cfg.stream_kinds);
    get("stream_severity", cfg.stream_severity);
    get("samples_per_segment", cfg.samples_per_segment);
    get("sweep_batches", cfg.sweep_batches);
    get("sweep_modes", cfg.sweep_modes);
    get("out_dir", cfg.out_dir);
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot read config file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw config_error("config parse error in " + path + ": " + e.what());
    }
    return from_json(j);
}

void ExperimentConfig::validate() const {
    if (num_classes < 2 || num_classes > 10)
        throw config_error("num_classes must be in 2..10");
    if (dataset_n < num_classes * 50) throw config_error("dataset_n below 50 samples per class");
    if (elem_width != "f32" && elem_width != "f64")
        throw config_error("elem_width must be f32 or f64");
    if (!(alpha > 0.0) || alpha > 1.0) throw config_error("alpha must be in (0, 1]");
    if (batch < 1) throw config_error("batch must be >= 1");
    if (!(h0_factor > 0.0)) throw config_error("h0_factor must be positive");
    if (stream_severity < 0 || stream_severity > 5)
        throw config_error("stream_severity must be in 0..5");
    if (samples_per_segment < 1) throw config_error("samples_per_segment must be >= 1");
    if (stream_kinds.empty()) throw config_error("stream needs at least one segment kind");
    strategy_from_name(mode);
    for (const auto& k : stream_kinds) corruption_from_name(k);
    for (const auto& m : sweep_modes) strategy_from_name(m);
    for (const auto& r : warmup_recipe) augment_from_name(r);
    if (warmup_grad_norm != "l1" && warmup_grad_norm != "l2")
        throw config_error("warmup_grad_norm must be l1 or l2");
    for (int b : sweep_batches)
        if (b < 1) throw config_error("sweep batch sizes must be >= 1");
}

std::string fnv1a_hex(const std::string& bytes) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot hash missing file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return fnv1a_hex(ss.str());
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(to_json().dump()); }

ModelConfig ExperimentConfig::model_config() const {
    ModelConfig mc;
    mc.input_h = input_hw;
    mc.input_w = input_hw;
    mc.input_c = 1;
    mc.conv_widths = conv_widths;
    mc.stem_kernel = stem_kernel;
    mc.num_classes = num_classes;
    return mc;
}

ElemWidth ExperimentConfig::width() const {
    return elem_width == "f32" ? ElemWidth::f32 : ElemWidth::f64;
}

PretrainParams ExperimentConfig::pretrain_params() const {
    PretrainParams pp;
    pp.epochs = pretrain_epochs;
    pp.lr = pretrain_lr;
    pp.batch = pretrain_batch;
    pp.target_accuracy = pretrain_target_accuracy;
    return pp;
}

WarmupParams ExperimentConfig::warmup_params() const {
    WarmupParams wp;
    wp.recipe.clear();
    for (const auto& r : warmup_recipe) wp.recipe.push_back(augment_from_name(r));
    wp.epochs = warmup_epochs;
    wp.lr = warmup_lr;
    wp.batch = warmup_batch;
    wp.keep_weights = warmup_keep_weights;
    wp.norm_kind = warmup_grad_norm == "l1" ? GradNormKind::l1 : GradNormKind::l2;
    return wp;
}

DomainStream ExperimentConfig::stream() const {
    DomainStream st;
    st.samples_per_segment = samples_per_segment;
    st.seed = stream_seed();
    for (const auto& k : stream_kinds)
        st.segments.push_back({corruption_from_name(k), stream_severity});
    return st;
}

DomainStream ExperimentConfig::clean_stream() const {
    DomainStream st;
    st.samples_per_segment = samples_per_segment;
    st.seed = stream_seed();
    for (size_t i = 0; i < stream_kinds.size(); ++i)
        st.segments.push_back({CorruptionKind::none, 0});
    return st;
}

AdaptParams ExperimentConfig::adapt_params(const AdaptationPlan& plan) const {
    AdaptParams ap;
    ap.mode = strategy_from_name(mode);
    ap.plan = plan;
    ap.plan.batch = batch;
    ap.plan.lr = lr;
    ap.plan.lambda = lambda_reg;
    ap.plan.h0 = h0_factor * std::log(static_cast<double>(num_classes));
    ap.plan.h0_factor = h0_factor;
    ap.tent_filtered = tent_filtered;
    ap.reg_on_logits = reg_on_logits;
    ap.scale_lr_below_reference = scale_lr_below_reference;
    ap.lr_reference_batch = lr_reference_batch;
    return ap;
}

}  // namespace focta
