#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "focta/adapt.hpp"
#include "focta/data.hpp"
#include "focta/model.hpp"
#include "focta/train.hpp"
#include "focta/warmup.hpp"

namespace focta {

// One JSON file drives the whole pipeline; a config plus the code version
// determines every output byte. Sub-seeds derive from the master seed.
struct ExperimentConfig {
    // dataset
    int dataset_n = 2000;
    int num_classes = 10;
    uint64_t seed = 1;

    // model
    std::vector<int> conv_widths = {96, 12, 48};
    int stem_kernel = 5;
    int input_hw = 16;
    std::string elem_width = "f32";  // f64 for oracle-grade runs

    // pretrain
    int pretrain_epochs = 40;
    double pretrain_lr = 1e-3;
    int pretrain_batch = 32;
    double pretrain_target_accuracy = 97.5;
    double pretrain_floor_accuracy = 90.0;  // below this the command fails

    // warm-up
    std::vector<std::string> warmup_recipe = {"jitter", "invert"};
    int warmup_epochs = 1;
    double warmup_lr = 0.00025;
    int warmup_batch = 32;
    bool warmup_keep_weights = false;
    std::string warmup_grad_norm = "l2";  // or l1
    double alpha = 0.1;

    // adaptation
    std::string mode = "focta";
    int batch = 32;
    double lr = 0.00025;
    double lambda_reg = 1.0;
    double h0_factor = 0.4;
    bool tent_filtered = false;
    bool reg_on_logits = false;
    bool scale_lr_below_reference = true;
    int lr_reference_batch = 32;

    // stream
    std::vector<std::string> stream_kinds = {"gaussian-noise", "impulse-noise", "blur",
                                             "contrast", "brightness"};
    int stream_severity = 5;
    int samples_per_segment = 256;

    // sweep
    std::vector<int> sweep_batches = {64, 32, 16, 8, 4};
    std::vector<std::string> sweep_modes = {"focta", "tent-all-bn"};

    std::string out_dir = "runs";

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);  // unknown keys rejected
    static ExperimentConfig load(const std::string& path);
    void validate() const;

    // FNV-1a over the canonical dump; stable field order via sorted keys
    std::string hash() const;

    // derived pieces
    ModelConfig model_config() const;
    ElemWidth width() const;
    PretrainParams pretrain_params() const;
    WarmupParams warmup_params() const;
    DomainStream stream() const;
    DomainStream clean_stream() const;
    AdaptParams adapt_params(const AdaptationPlan& plan) const;

    uint64_t dataset_seed() const { return derive_seed(seed, 0); }
    uint64_t model_seed() const { return derive_seed(seed, 1); }
    uint64_t pretrain_seed() const { return derive_seed(seed, 2); }
    uint64_t warmup_seed() const { return derive_seed(seed, 3); }
    uint64_t stream_seed() const { return derive_seed(seed, 4); }
    uint64_t adapt_seed() const { return derive_seed(seed, 6); }
};

std::string fnv1a_hex(const std::string& bytes);
std::string file_hash(const std::string& path);

}  // namespace focta
