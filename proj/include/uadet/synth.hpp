#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "uadet/geometry.hpp"
#include "uadet/rng.hpp"

namespace uadet {

enum class Domain { source, target };

// Photometric source-to-target shift. Contrast squeezes values around 0.5,
// haze pushes them toward 1, and Gaussian pixel noise is added last; the
// result is clipped back into [0,1]. (0, 1, 0) is the identity.
struct ShiftParams {
    double haze = 0.35;
    double contrast = 0.6;
    double noise_sd = 0.05;
};

// One synthetic image with its annotations. Target-domain training scenes carry
// labels flagged evaluation-only; training code must go through train_labels(),
// which refuses to serve them. eval_labels() bumps a global audit counter so
// the harness can assert that no training phase ever touched held-out labels.
class Scene {
public:
    Scene() = default;
    Scene(int size, std::vector<double> pixels, std::vector<Annotation> annotations,
          Domain domain, bool labels_eval_only, std::string id)
        : size_(size), pixels_(std::move(pixels)), annotations_(std::move(annotations)),
          domain_(domain), labels_eval_only_(labels_eval_only), id_(std::move(id)) {}

    int size() const { return size_; }
    const std::vector<double>& pixels() const { return pixels_; }
    Domain domain() const { return domain_; }
    bool labels_eval_only() const { return labels_eval_only_; }
    const std::string& id() const { return id_; }

    const std::vector<Annotation>& train_labels() const;
    const std::vector<Annotation>& eval_labels() const;

    // Sanctioned unlock for the target-supervised reference model: returns a
    // copy whose labels are trainable. Callers do this in setup, never inside
    // a training loop.
    Scene with_trainable_labels() const;

private:
    int size_ = 0;
    std::vector<double> pixels_;
    std::vector<Annotation> annotations_;
    Domain domain_ = Domain::source;
    bool labels_eval_only_ = false;
    std::string id_;
};

std::uint64_t label_audit_count();

// 1 to 4 patterned rectangles on a structured background. The shift is applied
// after rendering for target scenes and never moves the annotation geometry.
Scene generate_scene(Rng& rng, int n_classes, Domain domain, const ShiftParams& shift,
                     int size = 32, const std::string& id = "");

struct DatasetSplits {
    std::vector<Scene> source; // labeled
    std::vector<Scene> target; // labels held out (eval-only)
};

// Deterministic in (seed, params); per-scene seeds are derived with a
// splittable counter so scenes are independent of generation order.
DatasetSplits make_dataset(std::uint64_t seed, int n_source, int n_target,
                           const ShiftParams& shift, int n_classes, int size = 32);

// JSON export/import of one split (schema field "schema": 1).
void write_scenes_json(const std::string& path, const std::vector<Scene>& scenes,
                       const std::string& split_name, int n_classes);
std::vector<Scene> read_scenes_json(const std::string& path);

} // namespace uadet
