#include "uadet/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace uadet {

namespace {

std::atomic<std::uint64_t> g_label_audit{0};

constexpr double kTwoPi = 6.283185307179586476925286766559;

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

// Class-coded fill patterns. Pattern kind cycles with the class id so any
// class count renders something distinguishable.
double object_pixel(int class_id, int px, int py, double base, double alt) {
    switch ((class_id - 1) % 3) {
        case 0: return base;                                        // solid
        case 1: return ((py / 2) % 2 == 0) ? base : alt;            // horizontal stripes
        default: return (((px / 2) + (py / 2)) % 2 == 0) ? base : alt; // checkerboard
    }
}

void apply_shift(std::vector<double>& pixels, const ShiftParams& shift, Rng& rng) {
    for (auto& v : pixels) {
        v = 0.5 + shift.contrast * (v - 0.5);
        v = v + shift.haze * (1.0 - v);
        if (shift.noise_sd > 0.0) v += rng.normal(0.0, shift.noise_sd);
        v = clip01(v);
    }
}

} // namespace

const std::vector<Annotation>& Scene::train_labels() const {
    if (labels_eval_only_)
        throw std::logic_error("scene " + id_ + ": labels are held out for evaluation");
    return annotations_;
}

const std::vector<Annotation>& Scene::eval_labels() const {
    g_label_audit.fetch_add(1, std::memory_order_relaxed);
    return annotations_;
}

Scene Scene::with_trainable_labels() const {
    Scene s = *this;
    s.labels_eval_only_ = false;
    return s;
}

std::uint64_t label_audit_count() { return g_label_audit.load(std::memory_order_relaxed); }

Scene generate_scene(Rng& rng, int n_classes, Domain domain, const ShiftParams& shift,
                     int size, const std::string& id) {
    if (n_classes < 1) throw std::invalid_argument("generate_scene: class count < 1");

    std::vector<double> pixels(static_cast<std::size_t>(size) * size, 0.0);

    // structured background: gradient plus a faint sinusoid
    const double b0 = rng.uniform(0.15, 0.30);
    const double gx = rng.uniform(-0.12, 0.12);
    const double gy = rng.uniform(-0.12, 0.12);
    const double freq = rng.uniform(1.0, 3.0);
    const double phase = rng.uniform(0.0, 1.0);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            const double x = (c + 0.5) / size;
            const double y = (r + 0.5) / size;
            pixels[static_cast<std::size_t>(r) * size + c] =
                clip01(b0 + gx * x + gy * y + 0.03 * std::sin(kTwoPi * (freq * x + phase)));
        }

    const int n_objects = rng.uniform_int(1, 4);
    std::vector<Annotation> annotations;
    for (int k = 0; k < n_objects; ++k) {
        Box box;
        bool placed = false;
        for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
            box.w = rng.uniform(0.15, 0.40);
            box.h = rng.uniform(0.15, 0.40);
            box.cx = rng.uniform(0.5 * box.w + 0.02, 1.0 - 0.5 * box.w - 0.02);
            box.cy = rng.uniform(0.5 * box.h + 0.02, 1.0 - 0.5 * box.h - 0.02);
            placed = true;
            for (const auto& a : annotations)
                if (iou(box, a.box) > 0.10) { placed = false; break; }
        }
        const int class_id = rng.uniform_int(1, n_classes);
        annotations.push_back({class_id, clip(box)});

        const double base = rng.uniform(0.80, 0.95);
        const double alt = rng.uniform(0.30, 0.45);
        const int c0 = static_cast<int>(std::floor(box.x1() * size));
        const int c1 = static_cast<int>(std::ceil(box.x2() * size));
        const int r0 = static_cast<int>(std::floor(box.y1() * size));
        const int r1 = static_cast<int>(std::ceil(box.y2() * size));
        for (int r = std::max(0, r0); r < std::min(size, r1); ++r)
            for (int c = std::max(0, c0); c < std::min(size, c1); ++c) {
                const double x = (c + 0.5) / size;
                const double y = (r + 0.5) / size;
                if (x >= box.x1() && x <= box.x2() && y >= box.y1() && y <= box.y2())
                    pixels[static_cast<std::size_t>(r) * size + c] =
                        object_pixel(class_id, c - c0, r - r0, base, alt);
            }
    }

    if (domain == Domain::target) apply_shift(pixels, shift, rng);

    return Scene(size, std::move(pixels), std::move(annotations), domain,
                 /*labels_eval_only=*/false, id);
}

DatasetSplits make_dataset(std::uint64_t seed, int n_source, int n_target,
                           const ShiftParams& shift, int n_classes, int size) {
    if (n_source < 1 || n_target < 1)
        throw std::invalid_argument("make_dataset: counts must be >= 1");

    DatasetSplits splits;
    splits.source.reserve(static_cast<std::size_t>(n_source));
    splits.target.reserve(static_cast<std::size_t>(n_target));

    for (int i = 0; i < n_source; ++i) {
        Rng rng(derive_seed(seed, 1, static_cast<std::uint64_t>(i)));
        splits.source.push_back(generate_scene(rng, n_classes, Domain::source, shift, size,
                                               "src_" + std::to_string(i)));
    }
    for (int i = 0; i < n_target; ++i) {
        Rng rng(derive_seed(seed, 2, static_cast<std::uint64_t>(i)));
        Scene s = generate_scene(rng, n_classes, Domain::target, shift, size,
                                 "tgt_" + std::to_string(i));
        splits.target.push_back(Scene(s.size(), s.pixels(), s.eval_labels(), Domain::target,
                                      /*labels_eval_only=*/true, s.id()));
    }
    return splits;
}

void write_scenes_json(const std::string& path, const std::vector<Scene>& scenes,
                       const std::string& split_name, int n_classes) {
    nlohmann::json j;
    j["schema"] = 1;
    j["split"] = split_name;
    j["classes"] = n_classes;
    auto& arr = j["scenes"] = nlohmann::json::array();
    for (const auto& s : scenes) {
        nlohmann::json js;
        js["id"] = s.id();
        js["domain"] = s.domain() == Domain::source ? "source" : "target";
        js["labels_eval_only"] = s.labels_eval_only();
        js["size"] = s.size();
        js["pixels"] = s.pixels();
        auto& anns = js["annotations"] = nlohmann::json::array();
        for (const auto& a : s.eval_labels())
            anns.push_back({{"class", a.class_id},
                            {"box", {a.box.cx, a.box.cy, a.box.w, a.box.h}}});
        arr.push_back(std::move(js));
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

std::vector<Scene> read_scenes_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    nlohmann::json j;
    in >> j;
    if (!j.contains("schema") || j["schema"].get<int>() != 1)
        throw std::runtime_error(path + ": unsupported schema");

    std::vector<Scene> scenes;
    for (const auto& js : j.at("scenes")) {
        const int size = js.at("size").get<int>();
        auto pixels = js.at("pixels").get<std::vector<double>>();
        if (pixels.size() != static_cast<std::size_t>(size) * size)
            throw std::runtime_error(path + ": pixel count does not match size");
        std::vector<Annotation> anns;
        for (const auto& ja : js.at("annotations")) {
            const auto b = ja.at("box").get<std::vector<double>>();
            if (b.size() != 4) throw std::runtime_error(path + ": box must have 4 values");
            anns.push_back({ja.at("class").get<int>(), Box{b[0], b[1], b[2], b[3]}});
        }
        const Domain dom = js.at("domain").get<std::string>() == "target" ? Domain::target
                                                                          : Domain::source;
        scenes.emplace_back(size, std::move(pixels), std::move(anns), dom,
                            js.at("labels_eval_only").get<bool>(), js.at("id").get<std::string>());
    }
    return scenes;
}

} // namespace uadet
