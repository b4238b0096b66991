#include "uadet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace uadet {

namespace {

constexpr std::uint64_t kInitStreamBase = 0x5eedf00d;

Tensor const_box4(const Box& b) {
    Tensor t({4});
    t.v = {b.cx, b.cy, b.w, b.h};
    return t;
}

Box box_from_node(const Tensor& t) { return Box{t.v[0], t.v[1], t.v[2], t.v[3]}; }

// -log(clamp(p, eps, 1)) for a scalar probability node
Tape::Id neg_log_prob(Tape& tp, Tape::Id p) {
    return tp.scale(tp.log_(tp.clamp_(p, kProbEps, 1.0)), -1.0);
}

Tape::Id one_minus(Tape& tp, Tape::Id p) { return tp.offset(tp.scale(p, -1.0), 1.0); }

Tape::Id add_chain(Tape& tp, const std::vector<Tape::Id>& terms) {
    Tape::Id acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = tp.add(acc, terms[i]);
    return acc;
}

std::vector<double> bernoulli_keep_mask(Rng& rng, int n, double drop_rate) {
    std::vector<double> mask(static_cast<std::size_t>(n));
    const double keep_scale = 1.0 / (1.0 - drop_rate);
    for (auto& m : mask) m = rng.uniform() < drop_rate ? 0.0 : keep_scale;
    return mask;
}

int center_cell(double coord, int F) {
    int c = static_cast<int>(std::floor(coord * F));
    return std::clamp(c, 0, F - 1);
}

} // namespace

void DetectorConfig::validate() const {
    if (image_size < 8 || image_size % 4 != 0)
        throw std::invalid_argument("detector: image_size must be a multiple of 4, >= 8");
    if (n_classes < 2) throw std::invalid_argument("detector: need background + >=1 class");
    const int cells = feature_size() * feature_size();
    if (num_proposals < 1 || num_proposals > cells)
        throw std::invalid_argument("detector: num_proposals outside [1, cells]");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("detector: dropout outside [0,1)");
    if (!(anchor_size > 0.0)) throw std::invalid_argument("detector: anchor_size <= 0");
    if (conv1_channels < 1 || conv2_channels < 1 || roi_hidden < 1 || dins_hidden < 1)
        throw std::invalid_argument("detector: channel/width must be >= 1");
    if (!(fg_iou > bg_iou)) throw std::invalid_argument("detector: fg_iou must exceed bg_iou");
}

DetectorParams DetectorParams::init(const DetectorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DetectorParams p;
    p.config = cfg;

    p.conv1_w = Tensor({cfg.conv1_channels, 1, 3, 3});
    p.conv1_b = Tensor({cfg.conv1_channels});
    p.conv2_w = Tensor({cfg.conv2_channels, cfg.conv1_channels, 3, 3});
    p.conv2_b = Tensor({cfg.conv2_channels});
    p.prop_w = Tensor({5, cfg.conv2_channels});
    p.prop_b = Tensor({5});
    p.roi_fc1_w = Tensor({cfg.roi_hidden, cfg.conv2_channels});
    p.roi_fc1_b = Tensor({cfg.roi_hidden});
    p.roi_fc2_w = Tensor({cfg.roi_hidden, cfg.roi_hidden});
    p.roi_fc2_b = Tensor({cfg.roi_hidden});
    p.cls_w = Tensor({cfg.n_classes, cfg.roi_hidden});
    p.cls_b = Tensor({cfg.n_classes});
    p.reg_w = Tensor({4, cfg.roi_hidden});
    p.reg_b = Tensor({4});
    p.dimg_w = Tensor({1, cfg.conv2_channels});
    p.dimg_b = Tensor({1});
    p.dins_fc1_w = Tensor({cfg.dins_hidden, cfg.conv2_channels});
    p.dins_fc1_b = Tensor({cfg.dins_hidden});
    p.dins_fc2_w = Tensor({1, cfg.dins_hidden});
    p.dins_fc2_b = Tensor({1});

    Rng rng(derive_seed(seed, kInitStreamBase));
    for (auto& [name, t] : p.named()) {
        if (name.ends_with("_b")) continue; // biases start at zero
        double fan_in = 1.0, fan_out = 1.0;
        if (t->shape.size() == 4) {
            fan_in = t->dim(1) * 9.0;
            fan_out = t->dim(0) * 9.0;
        } else {
            fan_in = t->dim(1);
            fan_out = t->dim(0);
        }
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& v : t->v) v = rng.uniform(-limit, limit);
    }
    return p;
}

std::vector<std::pair<std::string, Tensor*>> DetectorParams::named() {
    return {
        {"conv1_w", &conv1_w},       {"conv1_b", &conv1_b},
        {"conv2_w", &conv2_w},       {"conv2_b", &conv2_b},
        {"prop_w", &prop_w},         {"prop_b", &prop_b},
        {"roi_fc1_w", &roi_fc1_w},   {"roi_fc1_b", &roi_fc1_b},
        {"roi_fc2_w", &roi_fc2_w},   {"roi_fc2_b", &roi_fc2_b},
        {"cls_w", &cls_w},           {"cls_b", &cls_b},
        {"reg_w", &reg_w},           {"reg_b", &reg_b},
        {"dimg_w", &dimg_w},         {"dimg_b", &dimg_b},
        {"dins_fc1_w", &dins_fc1_w}, {"dins_fc1_b", &dins_fc1_b},
        {"dins_fc2_w", &dins_fc2_w}, {"dins_fc2_b", &dins_fc2_b},
    };
}

std::vector<std::pair<std::string, const Tensor*>> DetectorParams::named() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [name, t] : const_cast<DetectorParams*>(this)->named()) out.emplace_back(name, t);
    return out;
}

void DetectorParams::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out << "uadet-checkpoint 1\n";
    char buf[64];
    for (const auto& [name, t] : named()) {
        out << name << " " << t->shape.size();
        for (int d : t->shape) out << " " << d;
        out << "\n";
        for (std::size_t i = 0; i < t->v.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", t->v[i]);
            out << (i ? " " : "") << buf;
        }
        out << "\n";
    }
}

DetectorParams DetectorParams::load(const std::string& path, const DetectorConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path);
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "uadet-checkpoint" || version != 1)
        throw std::runtime_error(path + ": not a checkpoint file");

    DetectorParams p = DetectorParams::init(cfg, 0);
    for (auto& [name, t] : p.named()) {
        std::string got;
        std::size_t ndim = 0;
        in >> got >> ndim;
        if (got != name || ndim != t->shape.size())
            throw std::runtime_error(path + ": tensor mismatch at " + name);
        for (std::size_t d = 0; d < ndim; ++d) {
            int dim = 0;
            in >> dim;
            if (dim != t->shape[d]) throw std::runtime_error(path + ": shape mismatch at " + name);
        }
        for (auto& v : t->v)
            if (!(in >> v)) throw std::runtime_error(path + ": truncated values at " + name);
    }
    return p;
}

DetectorGraph::DetectorGraph(DetectorParams& params, bool with_grad)
    : params_(params), with_grad_(with_grad) {
    params_.config.validate();
    for (auto& [name, t] : params_.named()) {
        Tape::Id id = tape_.leaf(*t, with_grad_);
        param_nodes_.emplace_back(name, id);
        by_name_[name] = id;
    }
}

Tape::Id DetectorGraph::param(const std::string& name) { return by_name_.at(name); }

std::vector<double> DetectorGraph::sample_roi_mask(Rng& rng) const {
    return bernoulli_keep_mask(rng, params_.config.roi_hidden, params_.config.dropout);
}

std::vector<double> DetectorGraph::sample_dins_mask(Rng& rng) const {
    return bernoulli_keep_mask(rng, params_.config.dins_hidden, params_.config.dropout);
}

Tape::Id DetectorGraph::decode_box(Tape::Id deltas4, Tape::Id base4) {
    Tape& tp = tape_;
    const double dc = params_.config.delta_clamp;

    Tape::Id dx = tp.pick(deltas4, 0), dy = tp.pick(deltas4, 1);
    Tape::Id dw = tp.pick(deltas4, 2), dh = tp.pick(deltas4, 3);
    Tape::Id bcx = tp.pick(base4, 0), bcy = tp.pick(base4, 1);
    Tape::Id bw = tp.pick(base4, 2), bh = tp.pick(base4, 3);

    Tape::Id cx = tp.clamp_(tp.add(bcx, tp.mul(dx, bw)), 0.0, 1.0);
    Tape::Id cy = tp.clamp_(tp.add(bcy, tp.mul(dy, bh)), 0.0, 1.0);
    Tape::Id w = tp.mul(bw, tp.exp_(tp.clamp_(dw, -dc, dc)));
    Tape::Id h = tp.mul(bh, tp.exp_(tp.clamp_(dh, -dc, dc)));

    // clip to the unit square; the clamped center keeps the result non-empty
    Tape::Id x1 = tp.clamp_(tp.sub(cx, tp.scale(w, 0.5)), 0.0, 1.0);
    Tape::Id x2 = tp.clamp_(tp.add(cx, tp.scale(w, 0.5)), 0.0, 1.0);
    Tape::Id y1 = tp.clamp_(tp.sub(cy, tp.scale(h, 0.5)), 0.0, 1.0);
    Tape::Id y2 = tp.clamp_(tp.add(cy, tp.scale(h, 0.5)), 0.0, 1.0);

    return tp.concat({tp.scale(tp.add(x1, x2), 0.5), tp.scale(tp.add(y1, y2), 0.5),
                      tp.sub(x2, x1), tp.sub(y2, y1)});
}

ImagePass DetectorGraph::forward_image(const std::vector<double>& image,
                                       const std::vector<double>& roi_mask) {
    const DetectorConfig& cfg = params_.config;
    const int S = cfg.image_size;
    if (static_cast<int>(image.size()) != S * S)
        throw std::invalid_argument("forward: image size mismatch");

    Tape& tp = tape_;
    Tensor img({1, S, S});
    img.v = image;
    Tape::Id x = tp.constant(std::move(img));

    x = tp.avg_pool2(tp.tanh_(tp.conv3x3(x, param("conv1_w"), param("conv1_b"))));
    if (!tp.value(x).all_finite()) throw std::runtime_error("forward: non-finite activation in conv1");
    x = tp.avg_pool2(tp.tanh_(tp.conv3x3(x, param("conv2_w"), param("conv2_b"))));
    if (!tp.value(x).all_finite()) throw std::runtime_error("forward: non-finite activation in conv2");

    ImagePass pass;
    pass.feature_map = x;
    pass.prop_map = tp.conv1x1(x, param("prop_w"), param("prop_b"));
    if (!tp.value(pass.prop_map).all_finite())
        throw std::runtime_error("forward: non-finite activation in proposal head");

    const int F = cfg.feature_size();
    const Tensor& pm = tp.value(pass.prop_map);

    // top-P cells by objectness logit, ties to the lower flat index
    std::vector<int> order(static_cast<std::size_t>(F) * F);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return pm.v[static_cast<std::size_t>(a)] > pm.v[static_cast<std::size_t>(b)];
    });
    order.resize(static_cast<std::size_t>(cfg.num_proposals));

    Tape::Id obj_plane = tp.channel_plane(pass.prop_map, 0);
    for (int flat : order) {
        const int r = flat / F;
        const int c = flat % F;

        ProposalNodes pn;
        pn.row = r;
        pn.col = c;
        pn.objectness = pm.v[static_cast<std::size_t>(flat)];
        pn.objectness_node = tp.pick(obj_plane, flat);

        Tape::Id cellv = tp.cell_vector(pass.prop_map, r, c); // [5]
        Tape::Id deltas = tp.concat({tp.pick(cellv, 1), tp.pick(cellv, 2), tp.pick(cellv, 3),
                                     tp.pick(cellv, 4)});
        const Box anchor{(c + 0.5) / F, (r + 0.5) / F, cfg.anchor_size, cfg.anchor_size};
        pn.box_node = decode_box(deltas, tp.constant(const_box4(anchor)));
        pn.box = box_from_node(tp.value(pn.box_node));
        pn.roi_feature = tp.cell_vector(pass.feature_map, r, c);
        pass.proposals.push_back(pn);
    }

    pass.rois = roi_pass(pass, roi_mask);
    return pass;
}

std::vector<RoiNodes> DetectorGraph::roi_pass(const ImagePass& pass,
                                              const std::vector<double>& roi_mask) {
    Tape& tp = tape_;
    std::vector<RoiNodes> rois;
    rois.reserve(pass.proposals.size());

    for (const auto& pn : pass.proposals) {
        Tape::Id h1 = tp.tanh_(tp.linear(pn.roi_feature, param("roi_fc1_w"), param("roi_fc1_b")));
        if (!roi_mask.empty()) h1 = tp.dropout_mask(h1, roi_mask);
        Tape::Id h2 = tp.tanh_(tp.linear(h1, param("roi_fc2_w"), param("roi_fc2_b")));

        RoiNodes rn;
        rn.scores_node = tp.softmax_vec(tp.linear(h2, param("cls_w"), param("cls_b")));
        rn.scores = tp.value(rn.scores_node).v;
        Tape::Id deltas = tp.linear(h2, param("reg_w"), param("reg_b"));
        rn.box_node = decode_box(deltas, pn.box_node);
        rn.box = box_from_node(tp.value(rn.box_node));
        if (!tp.value(rn.scores_node).all_finite())
            throw std::runtime_error("forward: non-finite activation in roi head");
        rois.push_back(std::move(rn));
    }
    return rois;
}

Tape::Id DetectorGraph::image_domain_logits(const ImagePass& pass, double grl_lambda) {
    Tape& tp = tape_;
    Tape::Id reversed = tp.grl(pass.feature_map, grl_lambda);
    Tape::Id logits = tp.conv1x1(reversed, param("dimg_w"), param("dimg_b"));
    return tp.channel_plane(logits, 0);
}

Tape::Id DetectorGraph::instance_domain_prob(const ImagePass& pass, const Box& box,
                                             double grl_lambda,
                                             const std::vector<double>& dins_mask) {
    Tape& tp = tape_;
    const int F = params_.config.feature_size();
    const int r = center_cell(box.cy, F);
    const int c = center_cell(box.cx, F);

    Tape::Id feat = tp.grl(tp.cell_vector(pass.feature_map, r, c), grl_lambda);
    Tape::Id h1 = tp.tanh_(tp.linear(feat, param("dins_fc1_w"), param("dins_fc1_b")));
    if (!dins_mask.empty()) h1 = tp.dropout_mask(h1, dins_mask);
    Tape::Id logit = tp.linear(h1, param("dins_fc2_w"), param("dins_fc2_b"));
    return tp.sigmoid_(tp.pick(logit, 0));
}

TargetAssignment assign_targets(const std::vector<Box>& proposals,
                                const std::vector<Annotation>& labels, double fg_iou,
                                double bg_iou) {
    TargetAssignment out;
    out.label_of.assign(proposals.size(), -1);

    std::vector<double> best_iou(proposals.size(), 0.0);
    for (std::size_t i = 0; i < proposals.size(); ++i) {
        int best = -1;
        double bi = 0.0;
        for (std::size_t m = 0; m < labels.size(); ++m) {
            const double ov = iou(proposals[i], labels[m].box);
            if (ov > bi) {
                bi = ov;
                best = static_cast<int>(m);
            }
        }
        best_iou[i] = bi;
        if (best >= 0 && bi >= fg_iou)
            out.label_of[i] = best;
        else if (bi >= bg_iou)
            out.label_of[i] = -2;
        // else stays background
    }

    // every label claims its best proposal; on conflicts the higher IoU wins
    std::vector<double> forced_iou(proposals.size(), -1.0);
    for (std::size_t m = 0; m < labels.size(); ++m) {
        int best = -1;
        double bi = -1.0;
        for (std::size_t i = 0; i < proposals.size(); ++i) {
            const double ov = iou(proposals[i], labels[m].box);
            if (ov > bi) {
                bi = ov;
                best = static_cast<int>(i);
            }
        }
        if (best >= 0 && bi > forced_iou[static_cast<std::size_t>(best)]) {
            forced_iou[static_cast<std::size_t>(best)] = bi;
            out.label_of[static_cast<std::size_t>(best)] = static_cast<int>(m);
        }
    }
    return out;
}

Tape::Id source_detection_loss_node(DetectorGraph& g, const ImagePass& pass,
                                    const std::vector<Annotation>& labels) {
    Tape& tp = g.tape();
    const DetectorConfig& cfg = g.params().config;
    const int F = cfg.feature_size();

    std::vector<Box> anchors;
    anchors.reserve(static_cast<std::size_t>(F) * F);
    for (int r = 0; r < F; ++r)
        for (int c = 0; c < F; ++c)
            anchors.push_back(Box{(c + 0.5) / F, (r + 0.5) / F, cfg.anchor_size, cfg.anchor_size});

    const TargetAssignment aassign = assign_targets(anchors, labels, cfg.fg_iou, cfg.bg_iou);

    Tape::Id obj_plane = tp.channel_plane(pass.prop_map, 0);
    std::vector<Tape::Id> obj_terms;
    std::vector<Tape::Id> reg_terms;
    for (int flat = 0; flat < F * F; ++flat) {
        const int a = aassign.label_of[static_cast<std::size_t>(flat)];
        if (a == -2) continue;
        Tape::Id p = tp.sigmoid_(tp.pick(obj_plane, flat));
        obj_terms.push_back(a >= 0 ? neg_log_prob(tp, p) : neg_log_prob(tp, one_minus(tp, p)));

        if (a >= 0) {
            const int r = flat / F;
            const int c = flat % F;
            Tape::Id cellv = tp.cell_vector(pass.prop_map, r, c);
            Tape::Id deltas = tp.concat({tp.pick(cellv, 1), tp.pick(cellv, 2), tp.pick(cellv, 3),
                                         tp.pick(cellv, 4)});
            Tape::Id dec = g.decode_box(deltas,
                                        tp.constant(const_box4(anchors[static_cast<std::size_t>(flat)])));
            Tape::Id diff = tp.sub(dec, tp.constant(const_box4(labels[static_cast<std::size_t>(a)].box)));
            reg_terms.push_back(tp.smooth_l1_sum(diff));
        }
    }

    std::vector<Box> proposal_boxes;
    for (const auto& pn : pass.proposals) proposal_boxes.push_back(pn.box);
    const TargetAssignment rassign = assign_targets(proposal_boxes, labels, cfg.fg_iou, cfg.bg_iou);

    std::vector<Tape::Id> roi_terms;
    for (std::size_t i = 0; i < pass.rois.size(); ++i) {
        const int a = rassign.label_of[i];
        if (a == -2) continue;
        const int cls = a >= 0 ? labels[static_cast<std::size_t>(a)].class_id : 0;
        Tape::Id term = neg_log_prob(tp, tp.pick(pass.rois[i].scores_node, cls));
        if (a >= 0) {
            Tape::Id diff = tp.sub(pass.rois[i].box_node,
                                   tp.constant(const_box4(labels[static_cast<std::size_t>(a)].box)));
            term = tp.add(term, tp.smooth_l1_sum(diff));
        }
        roi_terms.push_back(term);
    }

    std::vector<Tape::Id> parts;
    if (!obj_terms.empty())
        parts.push_back(tp.scale(add_chain(tp, obj_terms), 1.0 / static_cast<double>(obj_terms.size())));
    if (!reg_terms.empty())
        parts.push_back(tp.scale(add_chain(tp, reg_terms), 1.0 / static_cast<double>(reg_terms.size())));
    if (!roi_terms.empty())
        parts.push_back(tp.scale(add_chain(tp, roi_terms), 1.0 / static_cast<double>(roi_terms.size())));

    if (parts.empty()) return tp.constant(Tensor::scalar(0.0));
    return add_chain(tp, parts);
}

Tape::Id target_detection_loss_node(DetectorGraph& g, const ImagePass& pass,
                                    const std::vector<CandidatePseudoLabel>& pls, bool weighted) {
    Tape& tp = g.tape();
    if (pls.empty()) return tp.constant(Tensor::scalar(0.0));

    const DetectorConfig& cfg = g.params().config;
    std::vector<Annotation> labels;
    labels.reserve(pls.size());
    for (const auto& pl : pls) labels.push_back({pl.class_id, pl.box});

    std::vector<Box> proposal_boxes;
    for (const auto& pn : pass.proposals) proposal_boxes.push_back(pn.box);
    const TargetAssignment assign = assign_targets(proposal_boxes, labels, cfg.fg_iou, cfg.bg_iou);

    std::vector<Tape::Id> terms;
    for (std::size_t i = 0; i < pass.rois.size(); ++i) {
        const int a = assign.label_of[i];
        if (a < 0) continue; // only pairs matched to a pseudo-label contribute
        const auto& pl = pls[static_cast<std::size_t>(a)];
        Tape::Id term = neg_log_prob(tp, tp.pick(pass.rois[i].scores_node, pl.class_id));
        Tape::Id diff = tp.sub(pass.rois[i].box_node, tp.constant(const_box4(pl.box)));
        term = tp.add(term, tp.smooth_l1_sum(diff));
        if (weighted) term = tp.scale(term, 1.0 - pl.uncertainty.u_norm);
        terms.push_back(term);
    }

    if (terms.empty()) return tp.constant(Tensor::scalar(0.0));
    return add_chain(tp, terms);
}

AlignmentNodes alignment_loss_nodes(DetectorGraph& g, const ImagePass& src_pass,
                                    const ImagePass& tgt_pass,
                                    const std::vector<Annotation>& src_labels,
                                    const std::vector<Box>& tgt_instance_boxes, double grl_lambda,
                                    const std::vector<double>& dins_mask_src,
                                    const std::vector<double>& dins_mask_tgt) {
    Tape& tp = g.tape();

    Tape::Id src_logits = g.image_domain_logits(src_pass, grl_lambda);
    Tape::Id tgt_logits = g.image_domain_logits(tgt_pass, grl_lambda);
    const int n_src = tp.value(src_logits).numel();
    const int n_tgt = tp.value(tgt_logits).numel();

    Tape::Id src_nll = tp.scale(tp.sum(tp.log_(tp.clamp_(tp.sigmoid_(src_logits), kProbEps, 1.0))), -1.0);
    Tape::Id tgt_nll = tp.scale(
        tp.sum(tp.log_(tp.clamp_(one_minus(tp, tp.sigmoid_(tgt_logits)), kProbEps, 1.0))), -1.0);

    AlignmentNodes out;
    out.img = tp.scale(tp.add(src_nll, tgt_nll), 1.0 / static_cast<double>(n_src + n_tgt));

    std::vector<Tape::Id> src_probs, tgt_probs;
    for (const auto& a : src_labels)
        src_probs.push_back(g.instance_domain_prob(src_pass, a.box, grl_lambda, dins_mask_src));
    for (const auto& b : tgt_instance_boxes)
        tgt_probs.push_back(g.instance_domain_prob(tgt_pass, b, grl_lambda, dins_mask_tgt));

    std::vector<Tape::Id> ins_terms;
    for (Tape::Id p : src_probs) ins_terms.push_back(neg_log_prob(tp, p));
    for (Tape::Id p : tgt_probs) ins_terms.push_back(neg_log_prob(tp, one_minus(tp, p)));
    out.ins = ins_terms.empty() ? tp.constant(Tensor::scalar(0.0)) : add_chain(tp, ins_terms);

    Tape::Id src_mean = tp.mean(tp.sigmoid_(src_logits));
    Tape::Id tgt_mean = tp.mean(tp.sigmoid_(tgt_logits));
    std::vector<Tape::Id> cst_sides;
    if (!src_probs.empty()) {
        std::vector<Tape::Id> gaps;
        for (Tape::Id p : src_probs) gaps.push_back(tp.abs_(tp.sub(src_mean, p)));
        cst_sides.push_back(tp.scale(add_chain(tp, gaps), 1.0 / static_cast<double>(gaps.size())));
    }
    if (!tgt_probs.empty()) {
        std::vector<Tape::Id> gaps;
        for (Tape::Id p : tgt_probs) gaps.push_back(tp.abs_(tp.sub(tgt_mean, p)));
        cst_sides.push_back(tp.scale(add_chain(tp, gaps), 1.0 / static_cast<double>(gaps.size())));
    }
    out.cst = cst_sides.empty() ? tp.constant(Tensor::scalar(0.0)) : add_chain(tp, cst_sides);

    return out;
}

ForwardResult forward(DetectorParams& params, const std::vector<double>& image, Rng* dropout_rng) {
    DetectorGraph g(params, /*with_grad=*/false);
    std::vector<double> mask;
    if (dropout_rng) mask = g.sample_roi_mask(*dropout_rng);
    ImagePass pass = g.forward_image(image, mask);

    ForwardResult res;
    res.feature_map = g.tape().value(pass.feature_map);
    for (const auto& pn : pass.proposals) res.proposal_boxes.push_back(pn.box);
    for (const auto& rn : pass.rois) {
        res.scores.push_back(rn.scores);
        res.boxes.push_back(rn.box);
    }
    res.image_domain_logits = g.tape().value(g.image_domain_logits(pass, 1.0)).v;
    return res;
}

std::vector<McDetectionSamples> mc_inference(DetectorParams& params,
                                             const std::vector<double>& image, int T, Rng& rng) {
    if (T < 1) throw std::invalid_argument("mc_inference: T must be >= 1");

    DetectorGraph g(params, /*with_grad=*/false);
    ImagePass pass = g.forward_image(image, {}); // proposals are deterministic

    std::vector<McDetectionSamples> samples(pass.proposals.size());
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i].proposal = pass.proposals[i].box;

    for (int t = 0; t < T; ++t) {
        const std::vector<double> mask = g.sample_roi_mask(rng);
        const std::vector<RoiNodes> rois = g.roi_pass(pass, mask);
        for (std::size_t i = 0; i < rois.size(); ++i) {
            samples[i].scores.push_back(rois[i].scores);
            samples[i].boxes.push_back(rois[i].box);
        }
    }
    return samples;
}

std::vector<Detection> detect(DetectorParams& params, const std::vector<double>& image,
                              double nms_iou) {
    ForwardResult fwd = forward(params, image, nullptr);

    std::vector<Detection> dets;
    for (std::size_t i = 0; i < fwd.scores.size(); ++i) {
        const auto& s = fwd.scores[i];
        int best = 0;
        for (std::size_t k = 1; k < s.size(); ++k)
            if (s[k] > s[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
        if (best == 0) continue;
        dets.push_back({best, s[static_cast<std::size_t>(best)], fwd.boxes[i]});
    }

    std::vector<int> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return dets[static_cast<std::size_t>(a)].score >
                                                dets[static_cast<std::size_t>(b)].score; });

    std::vector<Detection> kept;
    for (int idx : order) {
        const auto& d = dets[static_cast<std::size_t>(idx)];
        bool suppressed = false;
        for (const auto& k : kept)
            if (iou(k.box, d.box) >= nms_iou) { suppressed = true; break; }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

LossBreakdown train_step(DetectorParams& params, OptimizerState& opt, const StepInputs& in,
                         const StepConfig& sc, Rng& rng) {
    if (!in.src_image || !in.src_labels)
        throw std::invalid_argument("train_step: source image and labels are required");

    DetectorGraph g(params, /*with_grad=*/true);
    Tape& tp = g.tape();

    const std::vector<double> roi_mask_src = sc.dropout_on ? g.sample_roi_mask(rng) : std::vector<double>{};
    const std::vector<double> dins_mask_src = sc.dropout_on ? g.sample_dins_mask(rng) : std::vector<double>{};
    const std::vector<double> roi_mask_tgt = sc.dropout_on ? g.sample_roi_mask(rng) : std::vector<double>{};
    const std::vector<double> dins_mask_tgt = sc.dropout_on ? g.sample_dins_mask(rng) : std::vector<double>{};

    ImagePass src_pass = g.forward_image(*in.src_image, roi_mask_src);
    Tape::Id det_src = source_detection_loss_node(g, src_pass, *in.src_labels);

    Tape::Id det_tgt = -1;
    AlignmentNodes align;
    std::optional<ImagePass> tgt_pass;

    if (in.tgt_image && (sc.self_training || sc.align)) {
        tgt_pass = g.forward_image(*in.tgt_image, roi_mask_tgt);

        if (sc.self_training && in.st_pls)
            det_tgt = target_detection_loss_node(g, *tgt_pass, *in.st_pls, sc.weighted_st);

        if (sc.align) {
            std::vector<Box> tgt_boxes;
            if (in.ufa_boxes) {
                tgt_boxes = *in.ufa_boxes;
            } else {
                for (const auto& pn : tgt_pass->proposals) tgt_boxes.push_back(pn.box);
            }
            align = alignment_loss_nodes(g, src_pass, *tgt_pass, *in.src_labels, tgt_boxes,
                                         sc.grl_lambda, dins_mask_src, dins_mask_tgt);
        }
    }

    Tape::Id total = det_src;
    if (det_tgt >= 0) total = tp.add(total, tp.scale(det_tgt, sc.lambda1));
    if (align.img >= 0) {
        Tape::Id fa = tp.add(tp.add(align.img, align.ins), align.cst);
        total = tp.add(total, tp.scale(fa, sc.lambda2));
    }

    const double total_value = tp.value_scalar(total);
    if (!std::isfinite(total_value)) throw std::runtime_error("train_step: non-finite loss");

    tp.backward(total);

    for (const auto& [name, node] : g.param_nodes()) {
        const Tensor& grad = tp.grad(node);
        if (!grad.all_finite())
            throw std::runtime_error("train_step: non-finite gradient in " + name);
    }

    for (auto& [name, tensor] : params.named()) {
        Tape::Id node = -1;
        for (const auto& [n, id] : g.param_nodes())
            if (n == name) { node = id; break; }
        const Tensor& grad = tp.grad(node);
        Tensor& vel = opt.velocity.try_emplace(name, Tensor(tensor->shape, 0.0)).first->second;
        for (std::size_t i = 0; i < tensor->v.size(); ++i) {
            vel.v[i] = sc.momentum * vel.v[i] - sc.lr * grad.v[i];
            tensor->v[i] += vel.v[i];
        }
    }

    return combined_objective(tp.value_scalar(det_src),
                              det_tgt >= 0 ? tp.value_scalar(det_tgt) : 0.0,
                              align.img >= 0 ? tp.value_scalar(align.img) : 0.0,
                              align.ins >= 0 ? tp.value_scalar(align.ins) : 0.0,
                              align.cst >= 0 ? tp.value_scalar(align.cst) : 0.0, sc.lambda1,
                              sc.lambda2);
}

} // namespace uadet
