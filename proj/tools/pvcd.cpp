// pvcd: synthetic data generation, training, evaluation and diagnostics for
// the parameter-efficient change detector.
//
//   pvcd synth --out DIR
//   pvcd train --data.root DIR --out RUN [--method adapter] [--config FILE] [--key.path=value ...]
//   pvcd eval --config RUN/config.json --checkpoint RUN/best.ckpt [--data.eval_split=val]
//   pvcd gradcheck
//   pvcd params --method lora --vit small
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pvcd/data.hpp"
#include "pvcd/grad_check.hpp"
#include "pvcd/model.hpp"
#include "pvcd/run_config.hpp"
#include "pvcd/train.hpp"
#include "pvcd/weight_file.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
using namespace pvcd;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr double kGradTolerance = 1e-4;

struct CommonFlags {
    std::string config_path;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string method;
    std::optional<std::size_t> r;
    std::string vit;
    std::string checkpoint;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON run config (flags override it)");
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--seed", f.seed, "Seed for model init, training and synthesis");
    cmd->add_option("--method", f.method, "Shorthand for --peft.method");
    cmd->add_option("--r", f.r, "Shorthand for --peft.r (adapter reduction factor)");
    cmd->add_option("--vit", f.vit, "ViT preset: tiny or small (keeps vit.image_size)");
    cmd->allow_extras();
}

// Collects "--a.b=v" and "--a.b v" pairs left over after CLI11 parsing.
std::vector<std::pair<std::string, std::string>> dotted_overrides(const std::vector<std::string>& extras) {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const std::string& arg = extras[i];
        if (arg.rfind("--", 0) != 0 || arg.size() <= 2) throw ConfigError("unexpected argument '" + arg + "'");
        const std::string body = arg.substr(2);
        const auto eq = body.find('=');
        if (eq != std::string::npos) {
            out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
        } else if (i + 1 < extras.size()) {
            out.emplace_back(body, extras[++i]);
        } else {
            throw ConfigError("missing value for '" + arg + "'");
        }
    }
    return out;
}

// defaults <- config file <- shorthand flags <- dotted overrides
RunConfig resolve_config(const CommonFlags& f, const std::vector<std::string>& extras) {
    json j = to_json(RunConfig{});
    if (!f.config_path.empty()) {
        std::ifstream in(f.config_path);
        if (!in) throw ConfigError("cannot open config file " + f.config_path);
        json file = json::parse(in, nullptr, false);
        if (file.is_discarded()) throw ConfigError("config file " + f.config_path + " is not valid JSON");
        j.merge_patch(file);
    }
    if (!f.vit.empty()) {
        const ViTConfig preset = vit_preset(f.vit, j.at("vit").at("image_size").get<std::size_t>());
        j["vit"]["patch_size"] = preset.patch_size;
        j["vit"]["depth"] = preset.depth;
        j["vit"]["dim"] = preset.dim;
        j["vit"]["heads"] = preset.heads;
        j["vit"]["mlp_ratio"] = preset.mlp_ratio;
    }
    if (!f.method.empty()) j["peft"]["method"] = f.method;
    if (f.r) j["peft"]["r"] = *f.r;
    if (f.seed) {
        j["model"]["seed"] = *f.seed;
        j["train"]["seed"] = *f.seed;
        j["synth"]["seed"] = *f.seed;
    }
    if (!f.checkpoint.empty()) j["checkpoint"] = f.checkpoint;
    for (const auto& [key, value] : dotted_overrides(extras)) apply_override(j, key, value);
    RunConfig cfg = run_config_from_json(j);
    cfg.validate();
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

ChangeDetector make_model(const RunConfig& cfg) {
    ChangeDetector model(cfg.model);
    if (!cfg.backbone_weights.empty()) {
        const auto report = load_backbone_weights(read_weight_file(cfg.backbone_weights), model.parameters());
        for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    }
    return model;
}

std::vector<ChangeSample> eval_samples(const RunConfig& cfg) {
    if (cfg.data.root.empty()) throw ConfigError("data.root is required");
    if (cfg.data.eval_split != "val") return load_dataset(cfg.data.root, cfg.data.eval_split);
    // The validation subset is not tagged on disk; re-derive it exactly as training did.
    const auto pool = load_dataset(cfg.data.root, cfg.data.train_split);
    std::vector<std::string> ids;
    for (const auto& s : pool) ids.push_back(s.id);
    const SplitResult split = split_dataset(ids, cfg.train.val_split, cfg.train.seed);
    std::vector<ChangeSample> out;
    for (const auto& id : split.val) {
        out.push_back(*std::find_if(pool.begin(), pool.end(), [&](const ChangeSample& s) { return s.id == id; }));
    }
    return out;
}

int run_synth(const RunConfig& cfg, const CommonFlags& f) {
    const std::string root = !f.out.empty() ? f.out : cfg.data.root;
    if (root.empty()) throw ConfigError("synth needs --out DIR (or data.root)");
    const DatasetManifest m = generate_synthetic(cfg.synth, root);
    ojson summary{{"root", root},
                  {"samples", m.ids.size()},
                  {"train", m.ids_in("train").size()},
                  {"test", m.ids_in("test").size()}};
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int run_train(const RunConfig& cfg, const CommonFlags& f) {
    if (f.out.empty()) throw ConfigError("train needs --out RUN_DIR");
    if (cfg.data.root.empty()) throw ConfigError("data.root is required");
    const fs::path out = f.out;
    fs::create_directories(out);
    write_text(out / "config.json", to_json(cfg).dump(2) + "\n");

    const auto dataset = load_dataset(cfg.data.root, cfg.data.train_split);
    ChangeDetector model = make_model(cfg);

    std::ofstream log(out / "log.ndjson", std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + (out / "log.ndjson").string());
    const TrainResult result = train(model, dataset, cfg.train, [&](const EpochRecord& rec) {
        log << rec.to_json() << "\n";
        log.flush();
        std::cerr << "epoch " << rec.epoch << "/" << cfg.train.epochs << "  loss " << rec.train_loss << "  val_f1 "
                  << rec.val_f1 << "\n";
    });
    write_weight_file(out / "best.ckpt", result.best_checkpoint);

    ojson metrics{{"best_epoch", result.best_epoch}, {"val", to_json(result.best_val)}};
    const DatasetManifest manifest = read_manifest(cfg.data.root);
    if (!manifest.ids_in("test").empty()) {
        metrics["test"] = to_json(evaluate(model, load_dataset(cfg.data.root, "test"), cfg.train.threads));
    }
    write_text(out / "metrics.json", metrics.dump(2) + "\n");
    std::cout << metrics.dump(2) << "\n";
    return 0;
}

int run_eval(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("eval needs --checkpoint FILE");
    ChangeDetector model = make_model(cfg);
    const auto report = load_checkpoint(read_weight_file(cfg.checkpoint), model.parameters());
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << to_json(evaluate(model, eval_samples(cfg), cfg.train.threads)).dump(2) << "\n";
    return 0;
}

int run_gradcheck(const RunConfig& cfg) {
    const auto cases = run_gradcheck_suite(cfg.model.seed);
    ojson list = ojson::array();
    double worst = 0.0;
    for (const auto& c : cases) {
        list.push_back({{"name", c.name}, {"max_rel_error", c.max_rel_error}});
        worst = std::max(worst, c.max_rel_error);
    }
    const bool ok = worst < kGradTolerance;
    ojson out{{"cases", list}, {"max_rel_error", worst}, {"tolerance", kGradTolerance}, {"pass", ok}};
    std::cout << out.dump(2) << "\n";
    return ok ? 0 : kExitRuntime;
}

int run_params(const RunConfig& cfg) {
    const ChangeDetector model(cfg.model);
    const PartitionReport report = partition_report(model);
    std::map<std::string, std::pair<std::size_t, std::size_t>> modules;  // prefix -> (frozen, trainable)
    for (const Parameter* p : model.parameters().all()) {
        auto& slot = modules[p->name().substr(0, p->name().find('.'))];
        (p->frozen() ? slot.first : slot.second) += p->numel();
    }
    ojson per_module;
    for (const auto& [name, counts] : modules) {
        per_module[name] = {{"frozen", counts.first}, {"trainable", counts.second}};
    }
    ojson out{{"method", std::string(to_string(cfg.model.peft.method))},
              {"frozen", report.frozen_count},
              {"trainable", report.trainable_count},
              {"total", report.frozen_count + report.trainable_count},
              {"ratio", report.ratio},
              {"modules", per_module}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Parameter-efficient change detection on a frozen ViT backbone", "pvcd"};
    app.require_subcommand(1, 1);
    CommonFlags flags;
    std::map<std::string, CLI::App*> commands;
    const std::pair<const char*, const char*> defs[] = {
        {"synth", "Generate the synthetic change-detection dataset"},
        {"train", "Train the trainable partition and save log, checkpoint and config"},
        {"eval", "Evaluate a checkpoint and print the metric report"},
        {"gradcheck", "Run the finite-difference gradient suite"},
        {"params", "Report the frozen/trainable parameter partition"},
    };
    for (const auto& [name, help] : defs) {
        CLI::App* cmd = app.add_subcommand(name, help);
        add_common(cmd, flags);
        commands[name] = cmd;
    }
    commands["eval"]->add_option("--checkpoint", flags.checkpoint, "Trainable-parameter checkpoint");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    CLI::App* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();
    try {
        RunConfig cfg;
        try {
            cfg = resolve_config(flags, cmd->remaining());
        } catch (const json::exception& e) {
            throw ConfigError(e.what());
        }
        if (name == "synth") return run_synth(cfg, flags);
        if (name == "train") return run_train(cfg, flags);
        if (name == "eval") return run_eval(cfg);
        if (name == "gradcheck") return run_gradcheck(cfg);
        return run_params(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
