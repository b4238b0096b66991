#include "uadet/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace uadet {

using nlohmann::json;

namespace {

// stream ids for seed derivation
constexpr std::uint64_t kStreamDataset = 101;
constexpr std::uint64_t kStreamTargetEval = 102;
constexpr std::uint64_t kStreamSourceEval = 103;
constexpr std::uint64_t kStreamInit = 104;
constexpr std::uint64_t kStreamTrain = 105;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + ctx);
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
        std::swap(idx[i - 1], idx[k]);
    }
    return idx;
}

LossBreakdown mean_breakdown(const std::vector<LossBreakdown>& steps) {
    LossBreakdown acc;
    if (steps.empty()) return acc;
    for (const auto& s : steps) {
        acc.det_source += s.det_source;
        acc.det_target += s.det_target;
        acc.img_align += s.img_align;
        acc.ins_align += s.ins_align;
        acc.cst += s.cst;
    }
    const double inv = 1.0 / static_cast<double>(steps.size());
    return combined_objective(acc.det_source * inv, acc.det_target * inv, acc.img_align * inv,
                              acc.ins_align * inv, acc.cst * inv, steps.front().lambda1,
                              steps.front().lambda2);
}

json breakdown_json(const LossBreakdown& b) {
    return json{{"det_source", b.det_source}, {"det_target", b.det_target},
                {"img_align", b.img_align},   {"ins_align", b.ins_align},
                {"cst", b.cst},               {"total", b.total}};
}

json eval_json(const EvalResult& r) {
    json per_class = json::object();
    json counts = json::object();
    for (const auto& [cls, ap] : r.per_class_ap) per_class[std::to_string(cls)] = ap;
    for (const auto& [cls, c] : r.counts)
        counts[std::to_string(cls)] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
    return json{{"map", r.map}, {"per_class_ap", per_class}, {"counts", counts}};
}

std::string sanitize(const std::string& name) {
    std::string out = name;
    for (char& c : out)
        if (c == '+' || c == '/' || c == ' ') c = '_';
    return out;
}

} // namespace

void TrainingConfig::validate() const {
    if (!(lr >= 0.0)) throw std::invalid_argument("training: lr must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("training: momentum outside [0,1)");
    if (pretrain_epochs < 0 || warmup_epochs < 0 || adapt_epochs < 0)
        throw std::invalid_argument("training: negative epoch count");
    if (lambda1 < 0.0 || lambda2 < 0.0) throw std::invalid_argument("training: negative lambda");
    if (mc_passes < 1) throw std::invalid_argument("training: mc_passes must be >= 1");
    if (score_threshold < 0.0 || score_threshold > 1.0)
        throw std::invalid_argument("training: score_threshold outside [0,1]");
}

void DatasetConfig::validate() const {
    if (n_source < 1 || n_target < 1 || n_eval < 1)
        throw std::invalid_argument("dataset: counts must be >= 1");
    if (n_classes < 1) throw std::invalid_argument("dataset: need at least one class");
    if (shift.haze < 0.0 || shift.haze > 1.0) throw std::invalid_argument("dataset: haze outside [0,1]");
    if (!(shift.contrast > 0.0) || shift.contrast > 1.0)
        throw std::invalid_argument("dataset: contrast outside (0,1]");
    if (shift.noise_sd < 0.0) throw std::invalid_argument("dataset: noise_sd < 0");
}

std::string mode_name(Mode m) {
    switch (m) {
        case Mode::source_only: return "source-only";
        case Mode::fa_st: return "FA+ST";
        case Mode::ufa_st: return "UFA+ST";
        case Mode::fa_ust: return "FA+UST";
        case Mode::ufa_ust: return "UFA+UST";
        case Mode::oracle: return "oracle";
    }
    throw std::logic_error("mode_name: bad mode");
}

Mode mode_from_name(const std::string& name) {
    for (Mode m : all_modes())
        if (mode_name(m) == name) return m;
    throw std::invalid_argument("unknown mode '" + name + "'");
}

std::vector<Mode> all_modes() {
    return {Mode::source_only, Mode::fa_st, Mode::ufa_st, Mode::fa_ust, Mode::ufa_ust,
            Mode::oracle};
}

DetectorConfig ExperimentConfig::detector_for_dataset() const {
    DetectorConfig d = detector;
    d.n_classes = dataset.n_classes + 1;
    return d;
}

void ExperimentConfig::validate() const {
    dataset.validate();
    training.validate();
    selection.validate();
    detector_for_dataset().validate();
    if (seeds.empty()) throw std::invalid_argument("config: empty seed list");
    if (modes.empty()) throw std::invalid_argument("config: empty mode list");
    if (output_dir.empty()) throw std::invalid_argument("config: empty output_dir");
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path);
    json j;
    in >> j;

    ExperimentConfig cfg;
    check_keys(j, {"dataset", "detector", "training", "selection", "seeds", "modes", "output_dir"},
               "top level");

    if (j.contains("dataset")) {
        const json& d = j["dataset"];
        check_keys(d, {"n_source", "n_target", "n_eval", "classes", "shift"}, "dataset");
        read_if(d, "n_source", cfg.dataset.n_source);
        read_if(d, "n_target", cfg.dataset.n_target);
        read_if(d, "n_eval", cfg.dataset.n_eval);
        read_if(d, "classes", cfg.dataset.n_classes);
        if (d.contains("shift")) {
            const json& s = d["shift"];
            check_keys(s, {"haze", "contrast", "noise_sd"}, "dataset.shift");
            read_if(s, "haze", cfg.dataset.shift.haze);
            read_if(s, "contrast", cfg.dataset.shift.contrast);
            read_if(s, "noise_sd", cfg.dataset.shift.noise_sd);
        }
    }
    if (j.contains("detector")) {
        const json& d = j["detector"];
        check_keys(d, {"image_size", "proposals", "dropout", "anchor_size"}, "detector");
        read_if(d, "image_size", cfg.detector.image_size);
        read_if(d, "proposals", cfg.detector.num_proposals);
        read_if(d, "dropout", cfg.detector.dropout);
        read_if(d, "anchor_size", cfg.detector.anchor_size);
    }
    if (j.contains("training")) {
        const json& t = j["training"];
        check_keys(t,
                   {"lr", "momentum", "pretrain_epochs", "warmup_epochs", "adapt_epochs",
                    "lambda1", "lambda2", "grl_lambda", "mc_passes", "score_threshold"},
                   "training");
        read_if(t, "lr", cfg.training.lr);
        read_if(t, "momentum", cfg.training.momentum);
        read_if(t, "pretrain_epochs", cfg.training.pretrain_epochs);
        read_if(t, "warmup_epochs", cfg.training.warmup_epochs);
        read_if(t, "adapt_epochs", cfg.training.adapt_epochs);
        read_if(t, "lambda1", cfg.training.lambda1);
        read_if(t, "lambda2", cfg.training.lambda2);
        read_if(t, "grl_lambda", cfg.training.grl_lambda);
        read_if(t, "mc_passes", cfg.training.mc_passes);
        read_if(t, "score_threshold", cfg.training.score_threshold);
    }
    if (j.contains("selection")) {
        const json& s = j["selection"];
        check_keys(s, {"tau1", "tau2", "sigma", "k_max"}, "selection");
        read_if(s, "tau1", cfg.selection.tau1);
        read_if(s, "tau2", cfg.selection.tau2);
        read_if(s, "sigma", cfg.selection.sigma);
        read_if(s, "k_max", cfg.selection.k_max);
    }
    if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("modes")) {
        cfg.modes.clear();
        for (const auto& m : j["modes"]) cfg.modes.push_back(mode_from_name(m.get<std::string>()));
    }
    read_if(j, "output_dir", cfg.output_dir);

    cfg.validate();
    return cfg;
}

std::string ExperimentConfig::to_json_string() const {
    json modes_j = json::array();
    for (Mode m : modes) modes_j.push_back(mode_name(m));
    json j{
        {"dataset",
         {{"n_source", dataset.n_source},
          {"n_target", dataset.n_target},
          {"n_eval", dataset.n_eval},
          {"classes", dataset.n_classes},
          {"shift",
           {{"haze", dataset.shift.haze},
            {"contrast", dataset.shift.contrast},
            {"noise_sd", dataset.shift.noise_sd}}}}},
        {"detector",
         {{"image_size", detector.image_size},
          {"proposals", detector.num_proposals},
          {"dropout", detector.dropout},
          {"anchor_size", detector.anchor_size}}},
        {"training",
         {{"lr", training.lr},
          {"momentum", training.momentum},
          {"pretrain_epochs", training.pretrain_epochs},
          {"warmup_epochs", training.warmup_epochs},
          {"adapt_epochs", training.adapt_epochs},
          {"lambda1", training.lambda1},
          {"lambda2", training.lambda2},
          {"grl_lambda", training.grl_lambda},
          {"mc_passes", training.mc_passes},
          {"score_threshold", training.score_threshold}}},
        {"selection",
         {{"tau1", selection.tau1},
          {"tau2", selection.tau2},
          {"sigma", selection.sigma},
          {"k_max", selection.k_max}}},
        {"seeds", seeds},
        {"modes", modes_j},
        {"output_dir", output_dir}};
    return j.dump(2);
}

void ExperimentConfig::apply_env_overrides() {
    if (const char* s = std::getenv("UADET_SEED")) {
        seeds = {static_cast<std::uint64_t>(std::strtoull(s, nullptr, 10))};
    }
    if (const char* o = std::getenv("UADET_OUT")) output_dir = o;
}

std::vector<CandidatePseudoLabel> candidates_for_image(DetectorParams& params,
                                                       const std::vector<double>& image, int T,
                                                       Rng& rng) {
    const auto samples = mc_inference(params, image, T, rng);
    std::vector<CandidatePseudoLabel> cands;
    for (const auto& s : samples)
        if (auto c = candidate_from_mc(s)) cands.push_back(*c);
    normalize_candidate_uncertainties(cands);
    return cands;
}

EvalResult evaluate_model(DetectorParams& params, const std::vector<Scene>& scenes,
                          double iou_thr) {
    std::vector<std::vector<Detection>> preds;
    std::vector<std::vector<Annotation>> gts;
    for (const auto& scene : scenes) {
        preds.push_back(detect(params, scene.pixels()));
        gts.push_back(scene.eval_labels());
    }
    return evaluate_detections(preds, gts, iou_thr);
}

namespace {

struct ModeFlags {
    bool uses_target = false;  // any adaptation at all
    bool ust = false;          // Alg-1 pseudo-labels + weighted loss
    bool ufa = false;          // alignment at pseudo-label boxes
};

ModeFlags flags_for(Mode m) {
    switch (m) {
        case Mode::fa_st: return {true, false, false};
        case Mode::ufa_st: return {true, false, true};
        case Mode::fa_ust: return {true, true, false};
        case Mode::ufa_ust: return {true, true, true};
        default: return {};
    }
}

struct PseudoLabelCache {
    std::vector<std::vector<CandidatePseudoLabel>> st;   // detection-score selection
    std::vector<std::vector<CandidatePseudoLabel>> alg1; // uncertainty-aware selection
};

PseudoLabelCache refresh_pseudo_labels(const ExperimentConfig& cfg, DetectorParams& params,
                                       const std::vector<Scene>& targets, Rng& rng) {
    PseudoLabelCache cache;
    cache.st.resize(targets.size());
    cache.alg1.resize(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        auto cands = candidates_for_image(params, targets[i].pixels(), cfg.training.mc_passes, rng);
        cache.st[i] = select_by_score(cands, cfg.training.score_threshold, cfg.selection.k_max,
                                      cfg.selection.tau1);
        cache.alg1[i] = select_pseudo_labels(cands, cfg.selection);
    }
    return cache;
}

} // namespace

RunResult run_single(const ExperimentConfig& cfg, Mode mode, std::uint64_t seed,
                     DetectorParams* out_params) {
    cfg.validate();

    const DetectorConfig det_cfg = cfg.detector_for_dataset();
    DatasetSplits data = make_dataset(derive_seed(seed, kStreamDataset), cfg.dataset.n_source,
                                      cfg.dataset.n_target, cfg.dataset.shift,
                                      cfg.dataset.n_classes, det_cfg.image_size);

    std::vector<Scene> target_eval, source_eval;
    for (int i = 0; i < cfg.dataset.n_eval; ++i) {
        Rng r1(derive_seed(seed, kStreamTargetEval, static_cast<std::uint64_t>(i)));
        target_eval.push_back(generate_scene(r1, cfg.dataset.n_classes, Domain::target,
                                             cfg.dataset.shift, det_cfg.image_size,
                                             "teval_" + std::to_string(i)));
        Rng r2(derive_seed(seed, kStreamSourceEval, static_cast<std::uint64_t>(i)));
        source_eval.push_back(generate_scene(r2, cfg.dataset.n_classes, Domain::source,
                                             cfg.dataset.shift, det_cfg.image_size,
                                             "seval_" + std::to_string(i)));
    }

    DetectorParams params = DetectorParams::init(det_cfg, derive_seed(seed, kStreamInit));
    OptimizerState opt;
    Rng rng(derive_seed(seed, kStreamTrain));

    // oracle: target labels are unlocked here, in setup, never inside training
    std::vector<Scene> oracle_scenes;
    if (mode == Mode::oracle)
        for (const auto& s : data.target) oracle_scenes.push_back(s.with_trainable_labels());

    const ModeFlags mf = flags_for(mode);
    RunResult result;
    result.mode = mode_name(mode);
    result.seed = seed;

    const std::uint64_t audit_before = label_audit_count();

    auto source_only_epoch = [&](const std::vector<Scene>& scenes) {
        std::vector<LossBreakdown> steps;
        const auto order = shuffled_indices(scenes.size(), rng);
        for (std::size_t idx : order) {
            StepConfig sc;
            sc.lr = cfg.training.lr;
            sc.momentum = cfg.training.momentum;
            sc.lambda1 = cfg.training.lambda1;
            sc.lambda2 = cfg.training.lambda2;
            StepInputs in;
            in.src_image = &scenes[idx].pixels();
            in.src_labels = &scenes[idx].train_labels();
            steps.push_back(train_step(params, opt, in, sc, rng));
        }
        result.history.push_back(mean_breakdown(steps));
    };

    auto paired_epoch = [&](bool self_training, bool weighted, bool align,
                            const PseudoLabelCache* pls) {
        std::vector<LossBreakdown> steps;
        const auto src_order = shuffled_indices(data.source.size(), rng);
        const auto tgt_order = shuffled_indices(data.target.size(), rng);
        for (std::size_t k = 0; k < src_order.size(); ++k) {
            const Scene& src = data.source[src_order[k]];
            const std::size_t ti = tgt_order[k % tgt_order.size()];
            const Scene& tgt = data.target[ti];

            StepConfig sc;
            sc.lr = cfg.training.lr;
            sc.momentum = cfg.training.momentum;
            sc.lambda1 = cfg.training.lambda1;
            sc.lambda2 = cfg.training.lambda2;
            sc.grl_lambda = cfg.training.grl_lambda;
            sc.align = align;
            sc.self_training = self_training;
            sc.weighted_st = weighted;

            StepInputs in;
            in.src_image = &src.pixels();
            in.src_labels = &src.train_labels();
            in.tgt_image = &tgt.pixels();

            std::vector<Box> ufa_boxes;
            if (self_training && pls)
                in.st_pls = mf.ust ? &pls->alg1[ti] : &pls->st[ti];
            if (align && mf.ufa && pls) {
                for (const auto& pl : pls->alg1[ti]) ufa_boxes.push_back(pl.box);
                in.ufa_boxes = &ufa_boxes;
            }
            steps.push_back(train_step(params, opt, in, sc, rng));
        }
        result.history.push_back(mean_breakdown(steps));
    };

    // phase 1: source pretraining, shared by every mode
    for (int e = 0; e < cfg.training.pretrain_epochs; ++e) source_only_epoch(data.source);

    if (mode == Mode::source_only) {
        // same total epoch budget, all of it on source
        for (int e = 0; e < cfg.training.warmup_epochs + cfg.training.adapt_epochs; ++e)
            source_only_epoch(data.source);
    } else if (mode == Mode::oracle) {
        for (int e = 0; e < cfg.training.warmup_epochs + cfg.training.adapt_epochs; ++e)
            source_only_epoch(oracle_scenes);
    } else {
        // phase 2: alignment warm-up (standard instance boxes)
        for (int e = 0; e < cfg.training.warmup_epochs; ++e)
            paired_epoch(false, false, true, nullptr);
        // phase 3: adaptation with per-epoch pseudo-label refresh
        for (int e = 0; e < cfg.training.adapt_epochs; ++e) {
            const PseudoLabelCache pls = refresh_pseudo_labels(cfg, params, data.target, rng);
            paired_epoch(true, mf.ust, true, &pls);
        }
    }

    const std::uint64_t audit_after = label_audit_count();
    if (audit_after != audit_before)
        throw std::logic_error("run_single: training read " +
                               std::to_string(audit_after - audit_before) +
                               " held-out target labels");

    result.target_eval = evaluate_model(params, target_eval);
    result.source_eval = evaluate_model(params, source_eval);
    if (out_params) *out_params = params;
    return result;
}

std::string results_csv(const std::vector<RunResult>& results, int k_max, int n_classes) {
    std::ostringstream out;
    out << "mode,seed,K,mAP";
    for (int c = 1; c <= n_classes; ++c) out << ",ap_class_" << c;
    out << "\n";
    for (const auto& r : results) {
        out << r.mode << "," << r.seed << "," << k_max << "," << fmt(r.target_eval.map);
        for (int c = 1; c <= n_classes; ++c) {
            const auto it = r.target_eval.per_class_ap.find(c);
            out << "," << fmt(it == r.target_eval.per_class_ap.end() ? 0.0 : it->second);
        }
        out << "\n";
    }
    return out.str();
}

std::string k_sweep_csv(const std::vector<KSweepRow>& rows) {
    std::ostringstream out;
    out << "K,mean_mAP,sd_mAP\n";
    for (const auto& r : rows)
        out << r.k << "," << fmt(r.mean_map) << "," << fmt(r.sd_map) << "\n";
    return out.str();
}

namespace {

void write_report(const ExperimentConfig& cfg, const RunResult& r, const std::string& path) {
    json epochs = json::array();
    for (const auto& b : r.history) epochs.push_back(breakdown_json(b));
    json j{{"schema", 1},
           {"config", json::parse(cfg.to_json_string())},
           {"mode", r.mode},
           {"seed", r.seed},
           {"epochs", epochs},
           {"target_eval", eval_json(r.target_eval)},
           {"source_eval", eval_json(r.source_eval)}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report " + path);
    out << j.dump(2) << "\n";
}

} // namespace

std::vector<RunResult> run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.output_dir);

    std::vector<RunResult> results;
    for (Mode mode : cfg.modes) {
        for (std::uint64_t seed : cfg.seeds) {
            DetectorParams params = DetectorParams::init(cfg.detector_for_dataset(), 0);
            RunResult r = run_single(cfg, mode, seed, &params);

            const std::string stem = sanitize(r.mode) + "_" + std::to_string(seed);
            params.save(cfg.output_dir + "/ckpt_" + stem + ".txt");
            write_report(cfg, r, cfg.output_dir + "/report_" + stem + ".json");
            results.push_back(std::move(r));
        }
    }

    std::ofstream out(cfg.output_dir + "/results.csv", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write results.csv");
    out << results_csv(results, cfg.selection.k_max, cfg.dataset.n_classes);
    return results;
}

std::vector<KSweepRow> k_sweep(const ExperimentConfig& cfg, const std::vector<int>& ks) {
    if (ks.empty()) throw std::invalid_argument("k_sweep: empty K list");
    std::set<int> uniq(ks.begin(), ks.end());
    if (uniq.size() != ks.size()) throw std::invalid_argument("k_sweep: duplicate K values");
    for (int k : ks)
        if (k < 1) throw std::invalid_argument("k_sweep: K must be >= 1");
    cfg.validate();
    std::filesystem::create_directories(cfg.output_dir);

    std::vector<KSweepRow> rows;
    for (int k : ks) {
        ExperimentConfig run_cfg = cfg;
        run_cfg.selection.k_max = k;
        std::vector<double> maps;
        for (std::uint64_t seed : cfg.seeds)
            maps.push_back(run_single(run_cfg, Mode::ufa_ust, seed).target_eval.map);

        KSweepRow row;
        row.k = k;
        for (double m : maps) row.mean_map += m;
        row.mean_map /= static_cast<double>(maps.size());
        if (maps.size() > 1) {
            double ss = 0.0;
            for (double m : maps) ss += (m - row.mean_map) * (m - row.mean_map);
            row.sd_map = std::sqrt(ss / static_cast<double>(maps.size() - 1));
        }
        rows.push_back(row);
    }

    std::ofstream out(cfg.output_dir + "/k_sweep.csv", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write k_sweep.csv");
    out << k_sweep_csv(rows);
    return rows;
}

namespace {

Box box_from_json(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 4)
        throw std::runtime_error(path + ": box must be an array of 4 numbers");
    return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

} // namespace

void select_from_dump(const std::string& dump_path, const SelectionParams& params,
                      const std::string& out_path) {
    params.validate();
    std::ifstream in(dump_path);
    if (!in) throw std::runtime_error("cannot read dump " + dump_path);
    json j;
    in >> j;
    if (!j.contains("schema") || j["schema"].get<int>() != 1)
        throw std::runtime_error(dump_path + ": unsupported schema (want 1)");

    json out_images = json::array();
    for (std::size_t ii = 0; ii < j.at("images").size(); ++ii) {
        const json& jimg = j["images"][ii];
        const std::string img_id =
            jimg.contains("id") ? jimg["id"].get<std::string>() : ("images[" + std::to_string(ii) + "]");

        std::vector<CandidatePseudoLabel> cands;
        int t_uniform = -1;
        const json& props = jimg.at("proposals");
        for (std::size_t pi = 0; pi < props.size(); ++pi) {
            const std::string ppath = img_id + ".proposals[" + std::to_string(pi) + "]";
            const json& jp = props[pi];

            McDetectionSamples s;
            s.proposal = box_from_json(jp.at("proposal"), ppath + ".proposal");
            const json& jscores = jp.at("scores");
            const json& jboxes = jp.at("boxes");
            if (jscores.size() != jboxes.size())
                throw std::runtime_error(ppath + ": scores and boxes disagree on T");
            if (t_uniform < 0)
                t_uniform = static_cast<int>(jscores.size());
            else if (t_uniform != static_cast<int>(jscores.size()))
                throw std::runtime_error(ppath + ": T differs from earlier proposals of " + img_id);

            for (std::size_t t = 0; t < jscores.size(); ++t) {
                s.scores.push_back(jscores[t].get<std::vector<double>>());
                s.boxes.push_back(box_from_json(jboxes[t], ppath + ".boxes[" + std::to_string(t) + "]"));
            }
            try {
                s.validate();
            } catch (const std::exception& e) {
                throw std::runtime_error(ppath + ": " + e.what());
            }
            if (auto c = candidate_from_mc(s)) cands.push_back(*c);
        }
        normalize_candidate_uncertainties(cands);
        const auto selected = select_pseudo_labels(cands, params);

        json jlabels = json::array();
        for (const auto& pl : selected)
            jlabels.push_back({{"box", {pl.box.cx, pl.box.cy, pl.box.w, pl.box.h}},
                               {"class", pl.class_id},
                               {"detection_score", pl.detection_score},
                               {"selection_score", pl.selection_score},
                               {"u_norm", pl.uncertainty.u_norm}});
        out_images.push_back({{"id", img_id}, {"pseudo_labels", jlabels}});
    }

    json out{{"schema", 1}, {"images", out_images}};
    std::ofstream of(out_path);
    if (!of) throw std::runtime_error("cannot write " + out_path);
    of << out.dump(2) << "\n";
}

} // namespace uadet
