#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "uadet/eval.hpp"
#include "uadet/geometry.hpp"
#include "uadet/losses.hpp"
#include "uadet/pseudo_label.hpp"
#include "uadet/rng.hpp"
#include "uadet/tape.hpp"

namespace uadet {

// Two-stage toy detector: conv backbone to an FxF feature map, a 1x1-conv
// proposal head (objectness + 4 box deltas per cell), an MC-dropout ROI head,
// and image/instance domain discriminators behind a gradient reversal layer.
struct DetectorConfig {
    int image_size = 32;
    int n_classes = 4; // including background at score index 0
    int num_proposals = 16;
    double dropout = 0.3;
    double anchor_size = 0.25;
    int conv1_channels = 8;
    int conv2_channels = 16;
    int roi_hidden = 64;
    int dins_hidden = 32;
    double delta_clamp = 3.0;
    double fg_iou = 0.5;
    double bg_iou = 0.3;

    int feature_size() const { return image_size / 4; }
    void validate() const;
};

struct DetectorParams {
    DetectorConfig config;
    Tensor conv1_w, conv1_b;
    Tensor conv2_w, conv2_b;
    Tensor prop_w, prop_b; // 1x1 conv: [objectness, dx, dy, dw, dh]
    Tensor roi_fc1_w, roi_fc1_b;
    Tensor roi_fc2_w, roi_fc2_b;
    Tensor cls_w, cls_b;
    Tensor reg_w, reg_b;
    Tensor dimg_w, dimg_b; // 1x1 conv to one logit per cell
    Tensor dins_fc1_w, dins_fc1_b;
    Tensor dins_fc2_w, dins_fc2_b;

    static DetectorParams init(const DetectorConfig& cfg, std::uint64_t seed);

    std::vector<std::pair<std::string, Tensor*>> named();
    std::vector<std::pair<std::string, const Tensor*>> named() const;

    void save(const std::string& path) const;
    static DetectorParams load(const std::string& path, const DetectorConfig& cfg);
};

struct ProposalNodes {
    int row = 0;
    int col = 0;
    double objectness = 0.0; // logit value
    Tape::Id objectness_node = -1;
    Tape::Id box_node = -1; // [4] decoded, clipped
    Box box;
    Tape::Id roi_feature = -1; // backbone feature at the originating cell
};

struct RoiNodes {
    Tape::Id scores_node = -1; // [n] softmax
    std::vector<double> scores;
    Tape::Id box_node = -1; // [4] refined, clipped
    Box box;
};

struct ImagePass {
    Tape::Id feature_map = -1; // [C2,F,F]
    Tape::Id prop_map = -1;    // [5,F,F]
    std::vector<ProposalNodes> proposals;
    std::vector<RoiNodes> rois; // aligned with proposals
};

// One tape shared by every forward of a training step, with parameter tensors
// registered as gradient leaves exactly once.
class DetectorGraph {
public:
    DetectorGraph(DetectorParams& params, bool with_grad);

    // roi_mask: dropout mask over roi_hidden units, empty means dropout off.
    ImagePass forward_image(const std::vector<double>& image, const std::vector<double>& roi_mask);

    // Re-runs only the ROI head of an existing pass under a fresh mask.
    std::vector<RoiNodes> roi_pass(const ImagePass& pass, const std::vector<double>& roi_mask);

    Tape::Id image_domain_logits(const ImagePass& pass, double grl_lambda); // [F*F]
    // dins_mask over dins_hidden units, empty means dropout off.
    Tape::Id instance_domain_prob(const ImagePass& pass, const Box& box, double grl_lambda,
                                  const std::vector<double>& dins_mask); // scalar in (0,1)

    std::vector<double> sample_roi_mask(Rng& rng) const;
    std::vector<double> sample_dins_mask(Rng& rng) const;

    // base4 is the anchor or proposal box; deltas shift the center by fractions
    // of the base size and scale the size through a clamped exponential.
    Tape::Id decode_box(Tape::Id deltas4, Tape::Id base4);

    Tape& tape() { return tape_; }
    DetectorParams& params() { return params_; }
    const std::vector<std::pair<std::string, Tape::Id>>& param_nodes() const { return param_nodes_; }

private:
    Tape::Id param(const std::string& name);

    DetectorParams& params_;
    Tape tape_;
    bool with_grad_;
    std::vector<std::pair<std::string, Tape::Id>> param_nodes_;
    std::map<std::string, Tape::Id> by_name_;
};

// Proposal-to-label matching: best-IoU label, fg at >= fg_iou, bg below bg_iou,
// ignored in between. Every label force-matches its best proposal.
// label_of: index into labels, -1 background, -2 ignored.
struct TargetAssignment {
    std::vector<int> label_of;
};
TargetAssignment assign_targets(const std::vector<Box>& proposals,
                                const std::vector<Annotation>& labels, double fg_iou = 0.5,
                                double bg_iou = 0.3);

// Loss graph builders. Each returns a scalar node on g's tape.
Tape::Id source_detection_loss_node(DetectorGraph& g, const ImagePass& pass,
                                    const std::vector<Annotation>& labels);
Tape::Id target_detection_loss_node(DetectorGraph& g, const ImagePass& pass,
                                    const std::vector<CandidatePseudoLabel>& pls, bool weighted);

struct AlignmentNodes {
    Tape::Id img = -1;
    Tape::Id ins = -1;
    Tape::Id cst = -1;
};
AlignmentNodes alignment_loss_nodes(DetectorGraph& g, const ImagePass& src_pass,
                                    const ImagePass& tgt_pass,
                                    const std::vector<Annotation>& src_labels,
                                    const std::vector<Box>& tgt_instance_boxes, double grl_lambda,
                                    const std::vector<double>& dins_mask_src,
                                    const std::vector<double>& dins_mask_tgt);

// Plain-value forward for inference and tests.
struct ForwardResult {
    Tensor feature_map;
    std::vector<Box> proposal_boxes;
    std::vector<std::vector<double>> scores; // per proposal
    std::vector<Box> boxes;                  // refined per proposal
    std::vector<double> image_domain_logits;
};
ForwardResult forward(DetectorParams& params, const std::vector<double>& image,
                      Rng* dropout_rng = nullptr);

// Proposals once with dropout off, then T stochastic ROI passes per proposal.
std::vector<McDetectionSamples> mc_inference(DetectorParams& params,
                                             const std::vector<double>& image, int T, Rng& rng);

// Class-agnostic detections: argmax foreground score per proposal, then greedy
// hard NMS at nms_iou.
std::vector<Detection> detect(DetectorParams& params, const std::vector<double>& image,
                              double nms_iou = 0.5);

struct OptimizerState {
    std::map<std::string, Tensor> velocity;
};

struct StepConfig {
    double lr = 0.01;
    double momentum = 0.9;
    double lambda1 = 0.001;
    double lambda2 = 0.1;
    double grl_lambda = 1.0;
    bool self_training = false;
    bool weighted_st = false;
    bool align = false;
    bool dropout_on = true;
};

struct StepInputs {
    const std::vector<double>* src_image = nullptr;
    const std::vector<Annotation>* src_labels = nullptr;
    const std::vector<double>* tgt_image = nullptr;
    const std::vector<CandidatePseudoLabel>* st_pls = nullptr; // self-training labels
    const std::vector<Box>* ufa_boxes = nullptr; // alignment instances; null = proposals
};

// One optimizer step. Throws on non-finite loss or gradients.
LossBreakdown train_step(DetectorParams& params, OptimizerState& opt, const StepInputs& in,
                         const StepConfig& sc, Rng& rng);

} // namespace uadet
