#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "uadet/harness.hpp"

using namespace uadet;

namespace {

ExperimentConfig load_config(const std::string& path) {
    ExperimentConfig cfg =
        path.empty() ? ExperimentConfig::defaults() : ExperimentConfig::from_json_file(path);
    cfg.apply_env_overrides();
    return cfg;
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            const std::vector<std::string>& modes, std::uint64_t seed, bool seed_set) {
    ExperimentConfig cfg = load_config(config_path);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (seed_set) cfg.seeds = {seed};
    if (!modes.empty()) {
        cfg.modes.clear();
        for (const auto& m : modes) cfg.modes.push_back(mode_from_name(m));
    }

    const auto results = run_experiment(cfg);
    std::printf("%-12s %6s %10s\n", "mode", "seed", "mAP");
    for (const auto& r : results)
        std::printf("%-12s %6llu %10.4f\n", r.mode.c_str(),
                    static_cast<unsigned long long>(r.seed), r.target_eval.map);
    std::printf("results written to %s/results.csv\n", cfg.output_dir.c_str());
    return 0;
}

int cmd_sweep_k(const std::string& config_path, const std::string& out_dir,
                std::vector<int> ks) {
    ExperimentConfig cfg = load_config(config_path);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    const auto rows = k_sweep(cfg, ks);
    std::printf("%6s %10s %10s\n", "K", "mean_mAP", "sd_mAP");
    for (const auto& r : rows) std::printf("%6d %10.4f %10.4f\n", r.k, r.mean_map, r.sd_map);
    std::printf("sweep written to %s/k_sweep.csv\n", cfg.output_dir.c_str());
    return 0;
}

int cmd_select(const std::string& dump_path, const std::string& out_path, double tau1,
               double tau2, double sigma, int k_max) {
    SelectionParams p;
    p.tau1 = tau1;
    p.tau2 = tau2;
    p.sigma = sigma;
    p.k_max = k_max;
    select_from_dump(dump_path, p, out_path);
    std::printf("pseudo-labels written to %s\n", out_path.c_str());
    return 0;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
    ExperimentConfig cfg = load_config(config_path);
    const std::string dir = out_dir.empty() ? cfg.output_dir : out_dir;
    std::filesystem::create_directories(dir);

    const std::uint64_t seed = cfg.seeds.front();
    const int size = cfg.detector.image_size;
    DatasetSplits data = make_dataset(derive_seed(seed, 101), cfg.dataset.n_source,
                                      cfg.dataset.n_target, cfg.dataset.shift,
                                      cfg.dataset.n_classes, size);

    std::vector<Scene> target_eval, source_eval;
    for (int i = 0; i < cfg.dataset.n_eval; ++i) {
        Rng r1(derive_seed(seed, 102, static_cast<std::uint64_t>(i)));
        target_eval.push_back(generate_scene(r1, cfg.dataset.n_classes, Domain::target,
                                             cfg.dataset.shift, size, "teval_" + std::to_string(i)));
        Rng r2(derive_seed(seed, 103, static_cast<std::uint64_t>(i)));
        source_eval.push_back(generate_scene(r2, cfg.dataset.n_classes, Domain::source,
                                             cfg.dataset.shift, size, "seval_" + std::to_string(i)));
    }

    write_scenes_json(dir + "/source_train.json", data.source, "source_train", cfg.dataset.n_classes);
    write_scenes_json(dir + "/target_train.json", data.target, "target_train", cfg.dataset.n_classes);
    write_scenes_json(dir + "/source_eval.json", source_eval, "source_eval", cfg.dataset.n_classes);
    write_scenes_json(dir + "/target_eval.json", target_eval, "target_eval", cfg.dataset.n_classes);
    std::printf("4 splits written to %s\n", dir.c_str());
    return 0;
}

int cmd_eval(const std::string& dataset_path, const std::string& detections_path) {
    const auto scenes = read_scenes_json(dataset_path);

    std::ifstream in(detections_path);
    if (!in) throw std::runtime_error("cannot read " + detections_path);
    nlohmann::json j;
    in >> j;
    if (!j.contains("schema") || j["schema"].get<int>() != 1)
        throw std::runtime_error(detections_path + ": unsupported schema");

    std::map<std::string, std::vector<Detection>> by_id;
    for (const auto& jimg : j.at("images")) {
        auto& dets = by_id[jimg.at("id").get<std::string>()];
        for (const auto& jd : jimg.at("detections")) {
            const auto b = jd.at("box").get<std::vector<double>>();
            if (b.size() != 4) throw std::runtime_error(detections_path + ": box must have 4 values");
            dets.push_back({jd.at("class").get<int>(), jd.at("score").get<double>(),
                            Box{b[0], b[1], b[2], b[3]}});
        }
    }

    std::vector<std::vector<Detection>> preds;
    std::vector<std::vector<Annotation>> gts;
    for (const auto& s : scenes) {
        const auto it = by_id.find(s.id());
        preds.push_back(it == by_id.end() ? std::vector<Detection>{} : it->second);
        gts.push_back(s.eval_labels());
    }

    const EvalResult r = evaluate_detections(preds, gts, 0.5);
    std::printf("mAP@0.5: %.4f\n", r.map);
    for (const auto& [cls, ap] : r.per_class_ap) {
        const auto& c = r.counts.at(cls);
        std::printf("  class %d: AP %.4f (tp %d, fp %d, fn %d)\n", cls, ap, c.tp, c.fp, c.fn);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"uncertainty-aware cross-domain detection sandbox"};
    app.require_subcommand(1);

    std::string config_path, out_dir, dump_path, out_path, dataset_path, detections_path;
    std::vector<std::string> modes;
    std::vector<int> ks{5, 10, 20, 30, 50};
    std::uint64_t seed = 0;
    double tau1 = 0.3, tau2 = 0.001, sigma = 0.4;
    int k_max = 20;

    auto* run = app.add_subcommand("run", "train and evaluate the configured modes");
    run->add_option("--config", config_path, "experiment config (JSON)");
    run->add_option("--out", out_dir, "output directory override");
    run->add_option("--modes", modes, "mode subset, e.g. source-only FA+ST UFA+UST");
    auto* seed_opt = run->add_option("--seed", seed, "single seed override");

    auto* sweep = app.add_subcommand("sweep-k", "K sweep of the uncertainty-aware selector");
    sweep->add_option("--config", config_path, "experiment config (JSON)");
    sweep->add_option("--out", out_dir, "output directory override");
    sweep->add_option("--ks", ks, "K values");

    auto* select = app.add_subcommand("select", "pseudo-label selection over a detection dump");
    select->add_option("--dump", dump_path, "detection dump (JSON)")->required();
    select->add_option("--out", out_path, "output pseudo-label file")->required();
    select->add_option("--tau1", tau1, "overlap gate");
    select->add_option("--tau2", tau2, "discard threshold");
    select->add_option("--sigma", sigma, "Gaussian width");
    select->add_option("--k", k_max, "maximum labels per image");

    auto* gen = app.add_subcommand("gen-data", "export the synthetic dataset splits");
    gen->add_option("--config", config_path, "experiment config (JSON)");
    gen->add_option("--out", out_dir, "output directory override");

    auto* ev = app.add_subcommand("eval", "mAP of a detections file against a dataset split");
    ev->add_option("--dataset", dataset_path, "scenes JSON")->required();
    ev->add_option("--detections", detections_path, "detections JSON")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, out_dir, modes, seed, seed_opt->count() > 0);
        if (sweep->parsed()) return cmd_sweep_k(config_path, out_dir, ks);
        if (select->parsed()) return cmd_select(dump_path, out_path, tau1, tau2, sigma, k_max);
        if (gen->parsed()) return cmd_gen_data(config_path, out_dir);
        if (ev->parsed()) return cmd_eval(dataset_path, detections_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
