// Command-line entry point: pretrain -> warmup -> adapt/sweep -> report.
// Exit codes: 0 success, 2 config error, 3 runtime/numeric error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "focta/adapt.hpp"
#include "focta/config.hpp"
#include "focta/train.hpp"
#include "focta/warmup.hpp"

namespace fs = std::filesystem;
using namespace focta;
using nlohmann::json;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string out_override;
    uint64_t seed_override = 0;
    bool has_seed_override = false;
};

ExperimentConfig load_config(const GlobalArgs& args) {
    ExperimentConfig cfg =
        args.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(args.config_path);
    if (args.has_seed_override) cfg.seed = args.seed_override;
    if (!args.out_override.empty()) cfg.out_dir = args.out_override;
    cfg.validate();
    return cfg;
}

void write_text(const std::string& path, const std::string& text) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path);
    if (!out) throw config_error("cannot write " + path);
    out << text;
}

Model build_pretrained(const ExperimentConfig& cfg, PretrainResult* result) {
    Dataset source = generate_source(cfg.dataset_n, cfg.num_classes, cfg.dataset_seed(),
                                     cfg.input_hw, cfg.input_hw);
    Model model = build_reference_cnn(cfg.model_config(), cfg.model_seed());
    model.store.width = cfg.width();
    PretrainResult pr = pretrain(model, source, cfg.pretrain_params(), cfg.pretrain_seed());
    if (result) *result = pr;
    return model;
}

void require_matching_config(const std::map<std::string, std::string>& meta,
                             const ExperimentConfig& cfg, const std::string& artifact) {
    auto it = meta.find("config_hash");
    if (it == meta.end())
        throw config_error(artifact + " carries no config hash; regenerate it");
    if (it->second != cfg.hash())
        throw config_error(artifact + " was produced under config " + it->second +
                           " but the current config hashes to " + cfg.hash());
}

int cmd_dataset(const GlobalArgs& args) {
    ExperimentConfig cfg = load_config(args);
    Dataset ds = generate_source(cfg.dataset_n, cfg.num_classes, cfg.dataset_seed(),
                                 cfg.input_hw, cfg.input_hw);
    fs::create_directories(cfg.out_dir);
    std::string path = cfg.out_dir + "/dataset.bin";
    save_dataset(ds, path);
    std::cout << "wrote " << path << " (" << ds.size() << " samples, " << cfg.num_classes
              << " classes, seed " << cfg.dataset_seed() << ")\n";
    return 0;
}

int cmd_pretrain(const GlobalArgs& args) {
    ExperimentConfig cfg = load_config(args);
    PretrainResult pr;
    Model model = build_pretrained(cfg, &pr);
    std::cout << "pretrained " << pr.epochs_run << " epochs, held-out clean accuracy "
              << pr.clean_accuracy_pct << "%\n";
    if (pr.clean_accuracy_pct < cfg.pretrain_floor_accuracy) {
        std::cerr << "error: clean accuracy " << pr.clean_accuracy_pct
                  << "% is below the required floor " << cfg.pretrain_floor_accuracy << "%\n";
        return 3;
    }
    fs::create_directories(cfg.out_dir);
    std::string path = cfg.out_dir + "/checkpoint.json";
    save_checkpoint(model, path,
                    {{"config_hash", cfg.hash()},
                     {"clean_accuracy_pct", std::to_string(pr.clean_accuracy_pct)},
                     {"epochs_run", std::to_string(pr.epochs_run)}});
    std::cout << "wrote " << path << "\n";
    return 0;
}

int cmd_warmup(const GlobalArgs& args, const std::string& checkpoint_path) {
    ExperimentConfig cfg = load_config(args);
    LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
    require_matching_config(ck.meta, cfg, checkpoint_path);

    Dataset source = generate_source(cfg.dataset_n, cfg.num_classes, cfg.dataset_seed(),
                                     cfg.input_hw, cfg.input_hw);
    ImportanceVector iv = warmup(ck.model, source, cfg.warmup_params(), cfg.warmup_seed());
    AdaptationPlan plan = select_topk(iv, cfg.alpha);
    plan.lambda = cfg.lambda_reg;
    plan.h0_factor = cfg.h0_factor;
    plan.h0 = cfg.h0_factor * std::log(static_cast<double>(cfg.num_classes));
    plan.batch = cfg.batch;
    plan.lr = cfg.lr;
    plan.bn_mode = BnMode::use_running_stats;

    std::cout << importance_table(iv);
    std::cout << "selected layers:";
    for (int id : plan.selected_layer_ids) std::cout << " L" << id;
    std::cout << " (alpha " << cfg.alpha << ")\n";

    fs::create_directories(cfg.out_dir);
    std::string path = cfg.out_dir + "/plan.json";
    save_plan(plan, iv, path,
              {{"config_hash", cfg.hash()}, {"checkpoint_hash", file_hash(checkpoint_path)}});
    std::cout << "wrote " << path << "\n";
    return 0;
}

json run_summary(const ExperimentConfig& cfg, const AdaptOutcome& outcome, StrategyMode mode,
                 int batch, const std::string& checkpoint_hash, const std::string& plan_hash) {
    json j = outcome.summary_json();
    j["mode"] = strategy_name(mode);
    j["batch"] = batch;
    j["seed"] = cfg.seed;
    j["config_hash"] = cfg.hash();
    j["checkpoint_hash"] = checkpoint_hash;
    j["plan_hash"] = plan_hash;
    return j;
}

AdaptOutcome run_adapt_once(const ExperimentConfig& cfg, const Model& pretrained,
                            const AdaptationPlan& plan, StrategyMode mode, int batch) {
    Model live = pretrained;
    AdaptParams ap = cfg.adapt_params(plan);
    ap.mode = mode;
    ap.plan.batch = batch;
    return adapt_stream(live, cfg.stream(), ap, cfg.adapt_seed());
}

int cmd_adapt(const GlobalArgs& args, const std::string& checkpoint_path,
              const std::string& plan_path) {
    ExperimentConfig cfg = load_config(args);
    LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
    require_matching_config(ck.meta, cfg, checkpoint_path);
    LoadedPlan lp = load_plan(plan_path);
    require_matching_config(lp.meta, cfg, plan_path);

    StrategyMode mode = strategy_from_name(cfg.mode);
    AdaptOutcome outcome = run_adapt_once(cfg, ck.model, lp.plan, mode, cfg.batch);

    std::string tag = cfg.mode + "-B" + std::to_string(cfg.batch);
    std::string summary_path = cfg.out_dir + "/summary-" + tag + ".json";
    std::string log_path = cfg.out_dir + "/log-" + tag + ".csv";
    json summary = run_summary(cfg, outcome, mode, cfg.batch, file_hash(checkpoint_path),
                               file_hash(plan_path));
    write_text(summary_path, summary.dump(1) + "\n");
    write_text(log_path, outcome.log_csv());

    std::cout << "strategy " << cfg.mode << " B=" << cfg.batch << "\n";
    for (const auto& d : outcome.per_domain)
        std::cout << "  " << d.domain << " sev" << d.severity << ": error " << d.error_pct
                  << "% (" << d.samples << " samples)\n";
    std::cout << "  average error " << outcome.average_error_pct << "%\n";
    std::cout << outcome.memory.to_table();
    std::cout << "wrote " << summary_path << " and " << log_path << "\n";
    return 0;
}

int cmd_sweep(const GlobalArgs& args, const std::string& checkpoint_path,
              const std::string& plan_path) {
    ExperimentConfig cfg = load_config(args);
    LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
    require_matching_config(ck.meta, cfg, checkpoint_path);
    LoadedPlan lp = load_plan(plan_path);
    require_matching_config(lp.meta, cfg, plan_path);
    std::string ck_hash = file_hash(checkpoint_path);
    std::string plan_hash = file_hash(plan_path);

    std::ostringstream csv;
    csv << "mode,batch,average_error_pct,analytic_total_bytes,measured_total_bytes,"
           "model_param_bytes,optimizer_state_bytes\n";
    for (const auto& mode_name : cfg.sweep_modes) {
        StrategyMode mode = strategy_from_name(mode_name);
        for (int batch : cfg.sweep_batches) {
            AdaptOutcome outcome = run_adapt_once(cfg, ck.model, lp.plan, mode, batch);
            std::string tag = mode_name + "-B" + std::to_string(batch);
            write_text(cfg.out_dir + "/summary-" + tag + ".json",
                       run_summary(cfg, outcome, mode, batch, ck_hash, plan_hash).dump(1) + "\n");
            write_text(cfg.out_dir + "/log-" + tag + ".csv", outcome.log_csv());
            csv << mode_name << "," << batch << "," << outcome.average_error_pct << ","
                << outcome.memory.analytic_total_bytes << ","
                << outcome.memory.measured_total_bytes << ","
                << outcome.memory.model_param_bytes << ","
                << outcome.memory.optimizer_state_bytes << "\n";
            std::cout << mode_name << " B=" << batch << ": err " << outcome.average_error_pct
                      << "%, analytic " << outcome.memory.analytic_total_bytes << " B\n";
        }
    }
    write_text(cfg.out_dir + "/comparison.csv", csv.str());
    std::cout << "wrote " << cfg.out_dir << "/comparison.csv\n";
    return 0;
}

struct RunRecord {
    json summary;
    std::string path;
};

std::vector<RunRecord> load_runs(const std::vector<std::string>& dirs) {
    std::vector<RunRecord> runs;
    for (const auto& dir : dirs) {
        if (!fs::exists(dir)) throw config_error("run directory does not exist: " + dir);
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            std::string name = entry.path().filename().string();
            if (name.rfind("summary-", 0) == 0 && entry.path().extension() == ".json")
                files.push_back(entry.path().string());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            std::ifstream in(f);
            RunRecord r;
            r.summary = json::parse(in);
            r.path = f;
            runs.push_back(std::move(r));
        }
    }
    if (runs.empty()) throw config_error("no summary-*.json files found in the given run dirs");
    return runs;
}

int cmd_report(const std::vector<std::string>& dirs, int64_t budget_bytes,
               const std::string& out_path) {
    std::vector<RunRecord> runs = load_runs(dirs);

    std::ostringstream out;
    // per-domain error table, one row per run
    out << "per-domain error (%)\n";
    out << "  run";
    for (const auto& d : runs.front().summary.at("per_domain"))
        out << "  " << d.at("domain").get<std::string>();
    out << "  avg\n";
    for (const auto& r : runs) {
        out << "  " << r.summary.at("mode").get<std::string>() << "-B"
            << r.summary.at("batch").get<int>();
        for (const auto& d : r.summary.at("per_domain")) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "  %.2f", d.at("error_pct").get<double>());
            out << buf;
        }
        char buf[16];
        std::snprintf(buf, sizeof(buf), "  %.2f", r.summary.at("average_error_pct").get<double>());
        out << buf << "\n";
    }

    // batch-size table per strategy: error and analytic memory per B
    std::map<std::string, std::map<int, const RunRecord*>> by_mode;
    for (const auto& r : runs)
        by_mode[r.summary.at("mode").get<std::string>()][r.summary.at("batch").get<int>()] = &r;

    out << "\nerror / analytic memory by batch size\n";
    for (const auto& [mode, by_batch] : by_mode) {
        out << "  " << mode << ":";
        double err_sum = 0.0;
        int64_t mem_sum = 0;
        for (auto it = by_batch.rbegin(); it != by_batch.rend(); ++it) {
            double err = it->second->summary.at("average_error_pct").get<double>();
            int64_t mem =
                it->second->summary.at("memory").at("analytic_total_bytes").get<int64_t>();
            char buf[64];
            std::snprintf(buf, sizeof(buf), "  B%d %.2f%%/%lldB", it->first, err,
                          static_cast<long long>(mem));
            out << buf;
            err_sum += err;
            mem_sum += mem;
        }
        char buf[64];
        std::snprintf(buf, sizeof(buf), "  | avg %.2f%% / %lldB\n",
                      err_sum / static_cast<double>(by_batch.size()),
                      static_cast<long long>(mem_sum / static_cast<int64_t>(by_batch.size())));
        out << buf;
    }

    // batch-size robustness deltas: error(smallest B) - error(largest B)
    out << "\nbatch-size degradation (error at min B minus error at max B)\n";
    for (const auto& [mode, by_batch] : by_mode) {
        if (by_batch.size() < 2) continue;
        double small = by_batch.begin()->second->summary.at("average_error_pct").get<double>();
        double large = by_batch.rbegin()->second->summary.at("average_error_pct").get<double>();
        char buf[96];
        std::snprintf(buf, sizeof(buf), "  %s: %+.2f points (B%d vs B%d)\n", mode.c_str(),
                      small - large, by_batch.begin()->first, by_batch.rbegin()->first);
        out << buf;
    }

    // fixed memory budget: largest batch whose analytic cost fits
    if (budget_bytes > 0) {
        out << "\nmemory budget " << budget_bytes << " B: largest feasible batch per strategy\n";
        for (const auto& [mode, by_batch] : by_mode) {
            const RunRecord* chosen = nullptr;
            for (auto it = by_batch.rbegin(); it != by_batch.rend(); ++it) {
                int64_t mem =
                    it->second->summary.at("memory").at("analytic_total_bytes").get<int64_t>();
                if (mem <= budget_bytes) {
                    chosen = it->second;
                    break;
                }
            }
            if (!chosen) {
                out << "  " << mode << ": infeasible (smallest run exceeds the budget)\n";
                continue;
            }
            const json& mem = chosen->summary.at("memory");
            // analytic prediction must reconcile with the measured tape
            if (mem.at("measured_weight_grad_bytes").get<int64_t>() !=
                mem.at("analytic_activation_bytes").get<int64_t>())
                throw numeric_error("memory reconciliation failed for " + chosen->path);
            char buf[96];
            std::snprintf(buf, sizeof(buf), "  %s: B%d, error %.2f%%, analytic %lld B\n",
                          mode.c_str(), chosen->summary.at("batch").get<int>(),
                          chosen->summary.at("average_error_pct").get<double>(),
                          static_cast<long long>(mem.at("analytic_total_bytes").get<int64_t>()));
            out << buf;
        }
    }

    std::cout << out.str();
    if (!out_path.empty()) {
        write_text(out_path, out.str());
        std::cout << "wrote " << out_path << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual test-time adaptation workbench"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "experiment config JSON (defaults when omitted)");
    app.add_option("--seed", g.seed_override, "master seed override")
        ->each([&](const std::string&) { g.has_seed_override = true; });
    app.add_option("--out", g.out_override, "output directory override");

    std::string checkpoint_path = "runs/checkpoint.json";
    std::string plan_path = "runs/plan.json";
    std::vector<std::string> report_dirs;
    int64_t budget = 0;
    std::string report_out;

    app.add_subcommand("dataset", "render the source dataset to a binary file");
    app.add_subcommand("pretrain", "train the reference model on clean source data");
    auto* warm = app.add_subcommand("warmup", "profile layer importance and emit a plan");
    warm->add_option("--checkpoint", checkpoint_path, "pretrained checkpoint");
    auto* adapt = app.add_subcommand("adapt", "run one continual adaptation stream");
    adapt->add_option("--checkpoint", checkpoint_path, "pretrained checkpoint");
    adapt->add_option("--plan", plan_path, "adaptation plan");
    auto* sweep = app.add_subcommand("sweep", "run the batch-size sweep for several strategies");
    sweep->add_option("--checkpoint", checkpoint_path, "pretrained checkpoint");
    sweep->add_option("--plan", plan_path, "adaptation plan");
    auto* report = app.add_subcommand("report", "aggregate run summaries into tables");
    report->add_option("dirs", report_dirs, "run directories")->required();
    report->add_option("--budget", budget, "memory budget in bytes");
    report->add_option("--write", report_out, "also write the report to this path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("dataset")) return cmd_dataset(g);
        if (app.got_subcommand("pretrain")) return cmd_pretrain(g);
        if (app.got_subcommand("warmup")) return cmd_warmup(g, checkpoint_path);
        if (app.got_subcommand("adapt")) return cmd_adapt(g, checkpoint_path, plan_path);
        if (app.got_subcommand("sweep")) return cmd_sweep(g, checkpoint_path, plan_path);
        if (app.got_subcommand("report")) return cmd_report(report_dirs, budget, report_out);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
