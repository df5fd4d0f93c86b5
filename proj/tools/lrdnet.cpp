// Command-line entry point: synth / train / eval / audit / bench / gradcheck.
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "json.hpp"
#include "lrd/audit/audit.hpp"
#include "lrd/data/synth.hpp"
#include "lrd/train/checkpoint.hpp"
#include "lrd/train/grad_suite.hpp"
#include "lrd/train/trainer.hpp"
#include "lrd/util/config.hpp"

namespace {

using nlohmann::json;

lrd::SyntheticDatasetSpec synth_spec_from_file(const std::string& path) {
    const auto kv = lrd::parse_config_file(path);
    static const std::set<std::string> allowed = {"seed", "n_real", "n_fake_per_family", "families", "image_size"};
    for (const auto& [k, v] : kv)
        if (!allowed.count(k)) throw lrd::ValueError("synth spec: unknown key '" + k + "'");
    lrd::SyntheticDatasetSpec spec;
    auto get = [&](const char* k) -> const std::string* {
        auto it = kv.find(k);
        return it == kv.end() ? nullptr : &it->second;
    };
    if (auto* v = get("seed")) spec.seed = std::stoull(*v);
    if (auto* v = get("n_real")) spec.n_real = std::stoll(*v);
    if (auto* v = get("n_fake_per_family")) spec.n_fake_per_family = std::stoll(*v);
    if (auto* v = get("image_size")) spec.image_size = std::stoll(*v);
    if (auto* v = get("families")) {
        spec.families.clear();
        std::stringstream ss(*v);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) spec.families.push_back(lrd::family_from_name(tok));
    }
    spec.validate();
    return spec;
}

lrd::Dataset load_data_dir(const std::string& dir, std::int64_t input_size) {
    namespace fs = std::filesystem;
    for (const char* name : {"manifest.csv", "labels.csv"}) {
        const fs::path p = fs::path(dir) / name;
        if (fs::exists(p)) return lrd::load_folder(dir, p.string(), input_size);
    }
    throw lrd::IoError("no manifest.csv or labels.csv in '" + dir + "'");
}

json eval_to_json(const lrd::EvalReport& rep) {
    return json{{"accuracy", rep.accuracy}, {"acc_real", rep.acc_real},     {"acc_fake", rep.acc_fake},
                {"mean_dist_real", rep.mean_dist_real}, {"mean_dist_fake", rep.mean_dist_fake}, {"n", rep.n}};
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
    const lrd::SyntheticDatasetSpec spec = synth_spec_from_file(spec_path);
    lrd::Dataset data = lrd::generate(spec);
    lrd::write_dataset(out_dir, data);
    std::cout << "wrote " << data.size() << " images to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out_ckpt,
              const std::string& log_path, const std::string& val_dir, bool no_guidance) {
    const lrd::ModelConfig cfg = lrd::model_config_from_map(lrd::parse_config_file(config_path));
    lrd::Dataset train_set = load_data_dir(data_dir, cfg.input_size);
    lrd::Dataset val_set;
    if (!val_dir.empty()) val_set = load_data_dir(val_dir, cfg.input_size);

    std::ofstream log_file;
    std::ostream* log_stream = nullptr;
    if (!log_path.empty()) {
        log_file.open(log_path);
        if (!log_file) throw lrd::IoError("cannot write log '" + log_path + "'");
        log_stream = &log_file;
    }
    const lrd::GateMode mode = no_guidance ? lrd::GateMode::Identity : lrd::GateMode::Learned;
    auto result = lrd::train<float>(cfg, train_set, val_set.empty() ? nullptr : &val_set, log_stream, mode);
    lrd::save_checkpoint<float>(out_ckpt, result.model, result.center, nullptr, result.rng_state);
    std::cout << "final train accuracy " << result.epochs.back().acc << ", checkpoint " << out_ckpt << "\n";
    if (!val_set.empty()) {
        auto rep = lrd::evaluate(result.model, result.center, val_set, 0.5, 32, mode);
        std::cout << "validation " << eval_to_json(rep).dump() << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, double threshold, bool as_json) {
    auto loaded = lrd::load_checkpoint<float>(ckpt_path);
    lrd::Dataset data = load_data_dir(data_dir, loaded.cfg.input_size);
    auto rep = lrd::evaluate(loaded.model, loaded.center, data, threshold);
    if (as_json)
        std::cout << eval_to_json(rep).dump(2) << "\n";
    else
        std::cout << "accuracy " << rep.accuracy << " (real " << rep.acc_real << ", fake " << rep.acc_fake
                  << "), mean d(z,c) real " << rep.mean_dist_real << " fake " << rep.mean_dist_fake << " over "
                  << rep.n << " images\n";
    return 0;
}

int cmd_audit(bool as_json) {
    lrd::LrdNet<float> model(lrd::ModelConfig::full());
    const lrd::ParamAuditReport rep = lrd::count_params(model);
    const lrd::FootprintReport fp = lrd::footprint(rep);
    if (as_json) {
        json j;
        j["components"] = {
            {"spatial_backbone", {{"params", rep.spatial_backbone}, {"reference", rep.ref_spatial_backbone}, {"delta", rep.delta_spatial_backbone()}}},
            {"frequency_branch", {{"params", rep.frequency_branch}, {"reference", rep.ref_frequency_branch}, {"delta", rep.delta_frequency_branch()}}},
            {"projection_head", {{"params", rep.projection_head}, {"reference", rep.ref_projection_head}, {"delta", rep.delta_projection_head()}}},
            {"classifier", {{"params", rep.classifier}, {"reference", rep.ref_classifier}, {"delta", rep.delta_classifier()}}},
        };
        j["total"] = {{"params", rep.total}, {"reference", rep.ref_total}, {"delta", rep.delta_total()}};
        j["footprint_bytes"] = {{"fp32", fp.bytes_fp32}, {"fp16", fp.bytes_fp16}, {"int8", fp.bytes_int8}};
        std::cout << j.dump(2) << "\n";
    } else {
        auto line = [](const char* name, std::int64_t got, std::int64_t ref, std::int64_t delta) {
            std::printf("%-18s %10lld  reference %10lld  delta %+lld\n", name, static_cast<long long>(got),
                        static_cast<long long>(ref), static_cast<long long>(delta));
        };
        line("spatial_backbone", rep.spatial_backbone, rep.ref_spatial_backbone, rep.delta_spatial_backbone());
        line("frequency_branch", rep.frequency_branch, rep.ref_frequency_branch, rep.delta_frequency_branch());
        line("projection_head", rep.projection_head, rep.ref_projection_head, rep.delta_projection_head());
        line("classifier", rep.classifier, rep.ref_classifier, rep.delta_classifier());
        line("total", rep.total, rep.ref_total, rep.delta_total());
        std::printf("footprint: fp32 %lld B (%.1f MB), fp16 %lld B (%.1f MB), int8 %lld B (%.1f MB)\n",
                    static_cast<long long>(fp.bytes_fp32), fp.bytes_fp32 / 1e6,
                    static_cast<long long>(fp.bytes_fp16), fp.bytes_fp16 / 1e6,
                    static_cast<long long>(fp.bytes_int8), fp.bytes_int8 / 1e6);
    }
    return 0;
}

int cmd_bench(const std::string& ckpt_path, const std::string& mode, std::int64_t n, std::int64_t batch,
              std::int64_t warmup) {
    json j;
    lrd::BenchResult r;
    if (!ckpt_path.empty()) {
        auto loaded = lrd::load_checkpoint<float>(ckpt_path);
        r = lrd::benchmark(loaded.model, n, batch, warmup);
        j["model"] = loaded.cfg.mode == lrd::ModelMode::Full ? "full" : "micro";
    } else {
        lrd::ModelConfig cfg = mode == "full" ? lrd::ModelConfig::full() : lrd::ModelConfig::micro(64);
        lrd::LrdNet<float> model(cfg);
        r = lrd::benchmark(model, n, batch, warmup);
        j["model"] = mode;
    }
    j["n_images"] = r.n_images;
    j["batch"] = r.batch;
    j["warmup"] = r.warmup;
    j["mean_ms_per_image"] = r.mean_ms_per_image;
    j["p50_ms_per_image"] = r.p50_ms_per_image;
    j["p95_ms_per_image"] = r.p95_ms_per_image;
    j["throughput_per_s"] = r.throughput_per_s;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_gradcheck(const std::string& mode, int seeds, std::int64_t coords, double eps, bool as_json) {
    if (mode != "micro") throw lrd::ValueError("gradcheck: only --mode micro is supported");
    lrd::GradSuiteOptions opt;
    opt.n_seeds = seeds;
    opt.coords_per_tensor = coords;
    opt.eps = eps;
    const lrd::GradSuiteResult r = lrd::run_model_grad_suite(opt);
    const bool pass = r.max_rel <= 1e-4;
    if (as_json) {
        json j{{"max_rel_error", r.max_rel}, {"per_seed", r.per_seed}, {"tolerance", 1e-4}, {"pass", pass}};
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "max rel error " << r.max_rel << " over " << seeds << " seeds (tolerance 1e-4): "
                  << (pass ? "PASS" : "FAIL") << "\n";
    }
    return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LRD-Net: lightweight frequency-guided real-centered face-forgery detection"};
    app.require_subcommand(1);

    std::string spec_path, out_dir;
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset folder");
    synth->add_option("--spec", spec_path, "dataset spec (key=value or JSON)")->required();
    synth->add_option("--out", out_dir, "output directory")->required();

    std::string config_path, data_dir, out_ckpt, log_path, val_dir;
    bool no_guidance = false;
    auto* train = app.add_subcommand("train", "train a model on a labeled image folder");
    train->add_option("--config", config_path, "model/train config (key=value or JSON)")->required();
    train->add_option("--data", data_dir, "training data directory (with manifest.csv)")->required();
    train->add_option("--out", out_ckpt, "output checkpoint path")->required();
    train->add_option("--log", log_path, "JSON-lines training log path");
    train->add_option("--val-data", val_dir, "held-out data directory");
    train->add_flag("--no-guidance", no_guidance, "train with identity gates (ablation)");

    std::string ckpt_path;
    double threshold = 0.5;
    bool eval_json = false;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a labeled folder");
    eval->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    eval->add_option("--data", data_dir, "data directory")->required();
    eval->add_option("--threshold", threshold, "decision threshold (ties are fake)");
    eval->add_flag("--json", eval_json, "machine-readable output");

    bool audit_json = false;
    auto* audit = app.add_subcommand("audit", "parameter and footprint audit of the full model");
    audit->add_flag("--json", audit_json, "machine-readable output");

    std::string bench_ckpt, bench_mode = "full";
    std::int64_t bench_n = 1000, bench_batch = 1, bench_warmup = 10;
    auto* bench = app.add_subcommand("bench", "inference timing benchmark (JSON output)");
    bench->add_option("--ckpt", bench_ckpt, "checkpoint to benchmark (fresh weights when omitted)");
    bench->add_option("--mode", bench_mode, "full|micro when no checkpoint is given")
        ->check(CLI::IsMember({"full", "micro"}));
    bench->add_option("--n", bench_n, "number of images");
    bench->add_option("--batch", bench_batch, "batch size");
    bench->add_option("--warmup", bench_warmup, "warmup images excluded from stats");

    std::string gc_mode = "micro";
    int gc_seeds = 10;
    std::int64_t gc_coords = 12;
    double gc_eps = 1e-5;
    bool gc_json = false;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full objective");
    gradcheck->add_option("--mode", gc_mode, "model scale (micro)")->check(CLI::IsMember({"micro"}));
    gradcheck->add_option("--seeds", gc_seeds, "number of seeds");
    gradcheck->add_option("--coords", gc_coords, "checked coordinates per tensor");
    gradcheck->add_option("--eps", gc_eps, "finite-difference step");
    gradcheck->add_flag("--json", gc_json, "machine-readable output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // 0
    } catch (const CLI::ParseError& e) {
        std::cerr << e.get_name() << ": " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(spec_path, out_dir);
        if (train->parsed()) return cmd_train(config_path, data_dir, out_ckpt, log_path, val_dir, no_guidance);
        if (eval->parsed()) return cmd_eval(ckpt_path, data_dir, threshold, eval_json);
        if (audit->parsed()) return cmd_audit(audit_json);
        if (bench->parsed()) return cmd_bench(bench_ckpt, bench_mode, bench_n, bench_batch, bench_warmup);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_mode, gc_seeds, gc_coords, gc_eps, gc_json);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
