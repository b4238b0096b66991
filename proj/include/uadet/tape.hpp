#pragma once

#include <functional>
#include <string>
#include <vector>

namespace uadet {

// Dense row-major tensor of doubles. Shapes are explicit; no broadcasting.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    Tensor(std::vector<int> s, double fill = 0.0);
    static Tensor scalar(double x) { return Tensor({1}, x); }

    int numel() const { return static_cast<int>(v.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    bool all_finite() const;
};

// Reverse-mode autodiff over a flat node list. Nodes are created in topological
// order, so backward() is a single reverse sweep. One tape serves one forward
// (or forward+backward) evaluation and is then discarded.
class Tape {
public:
    using Id = int;

    Id constant(Tensor t);                   // no gradient
    Id leaf(const Tensor& t, bool with_grad); // copies the value in

    // layers
    Id conv3x3(Id x, Id w, Id b); // x:[C,H,W] w:[O,C,3,3] b:[O], zero padding 1
    Id conv1x1(Id x, Id w, Id b); // x:[C,H,W] w:[O,C]     b:[O]
    Id avg_pool2(Id x);           // [C,H,W] -> [C,H/2,W/2], H and W even
    Id linear(Id x, Id w, Id b);  // x:[N] w:[M,N] b:[M] -> [M]
    Id dropout_mask(Id x, const std::vector<double>& mask); // elementwise constant mask
    Id grl(Id x, double lambda);  // identity forward, -lambda on the gradient

    // elementwise
    Id tanh_(Id x);
    Id sigmoid_(Id x);
    Id exp_(Id x);
    Id log_(Id x);
    Id abs_(Id x);
    Id clamp_(Id x, double lo, double hi);
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);
    Id scale(Id x, double c);
    Id offset(Id x, double c);

    // shape and reduction
    Id softmax_vec(Id x);          // [N] -> [N]
    Id cell_vector(Id x, int r, int c); // [C,H,W] -> [C]
    Id channel_plane(Id x, int ch);     // [C,H,W] -> [H*W]
    Id pick(Id x, int i);          // -> scalar
    Id concat(const std::vector<Id>& parts);
    Id sum(Id x);                  // -> scalar
    Id mean(Id x);                 // -> scalar
    Id smooth_l1_sum(Id diff);     // sum of smooth-L1 over elements, transition 1

    const Tensor& value(Id id) const { return nodes_[static_cast<std::size_t>(id)].val; }
    double value_scalar(Id id) const { return value(id).v.at(0); }
    const Tensor& grad(Id id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

    // Seeds d(root)/d(root) = 1 and sweeps the tape once. root must be scalar.
    void backward(Id root);

    int size() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Tensor val;
        Tensor grad;
        bool with_grad = false;
        std::function<void(Tape&, Id)> back; // empty for leaves/constants
    };

    Id push(Tensor val, bool with_grad, std::function<void(Tape&, Id)> back);
    Tensor& grad_ref(Id id) { return nodes_[static_cast<std::size_t>(id)].grad; }
    bool with_grad(Id id) const { return nodes_[static_cast<std::size_t>(id)].with_grad; }

    std::vector<Node> nodes_;
};

} // namespace uadet
