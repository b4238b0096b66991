#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uadet/detector.hpp"
#include "uadet/eval.hpp"
#include "uadet/selection.hpp"
#include "uadet/synth.hpp"

namespace uadet {

// Three-phase schedule: source-only pretraining, alignment warm-up, then the
// mode-specific adaptation epochs. Pseudo-labels are regenerated once per
// adaptation epoch.
struct TrainingConfig {
    double lr = 0.01;
    double momentum = 0.9;
    int pretrain_epochs = 5;
    int warmup_epochs = 5;
    int adapt_epochs = 3;
    double lambda1 = 0.001;
    double lambda2 = 0.1;
    double grl_lambda = 1.0;
    int mc_passes = 16;
    double score_threshold = 0.7; // baseline score-based selector
    void validate() const;
};

struct DatasetConfig {
    int n_source = 200;
    int n_target = 200;
    int n_eval = 100;
    int n_classes = 3; // foreground classes
    ShiftParams shift;
    void validate() const;
};

enum class Mode { source_only, fa_st, ufa_st, fa_ust, ufa_ust, oracle };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& name);
std::vector<Mode> all_modes();

struct ExperimentConfig {
    DatasetConfig dataset;
    TrainingConfig training;
    SelectionParams selection;
    DetectorConfig detector;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::vector<Mode> modes = all_modes();
    std::string output_dir = "out";

    static ExperimentConfig defaults() { return ExperimentConfig{}; }
    // Strict parse: unknown keys anywhere are rejected.
    static ExperimentConfig from_json_file(const std::string& path);
    std::string to_json_string() const;
    // UADET_SEED replaces the seed list, UADET_OUT the output directory.
    void apply_env_overrides();
    void validate() const;

    // detector config with the class count implied by the dataset
    DetectorConfig detector_for_dataset() const;
};

struct RunResult {
    std::string mode;
    std::uint64_t seed = 0;
    EvalResult target_eval;
    EvalResult source_eval;
    std::vector<LossBreakdown> history; // one averaged breakdown per epoch
};

// Full pipeline for one (mode, seed). The final parameters land in out_params
// when given. Asserts that no training phase read held-out target labels.
RunResult run_single(const ExperimentConfig& cfg, Mode mode, std::uint64_t seed,
                     DetectorParams* out_params = nullptr);

// Runs every configured (mode, seed), writes results.csv, one report JSON and
// one checkpoint per run into output_dir.
std::vector<RunResult> run_experiment(const ExperimentConfig& cfg);

struct KSweepRow {
    int k = 0;
    double mean_map = 0.0;
    double sd_map = 0.0;
};

// Runs UFA+UST once per K over the configured seeds; duplicate K values are
// rejected. Writes k_sweep.csv into output_dir.
std::vector<KSweepRow> k_sweep(const ExperimentConfig& cfg, const std::vector<int>& ks);

// Standalone selection over an external detection dump (schema 1). Parse
// errors carry the image id and the offending field path.
void select_from_dump(const std::string& dump_path, const SelectionParams& params,
                      const std::string& out_path);

// CSV emission (UTF-8, LF). Header: mode,seed,K,mAP,ap_class_1,...
std::string results_csv(const std::vector<RunResult>& results, int k_max, int n_classes);
std::string k_sweep_csv(const std::vector<KSweepRow>& rows);

// Pseudo-label generation used by the trainer: MC passes, candidate building,
// per-image normalization.
std::vector<CandidatePseudoLabel> candidates_for_image(DetectorParams& params,
                                                       const std::vector<double>& image, int T,
                                                       Rng& rng);

// Detections + mAP on a scene list (held-out labels are read here, after training).
EvalResult evaluate_model(DetectorParams& params, const std::vector<Scene>& scenes,
                          double iou_thr = 0.5);

} // namespace uadet
