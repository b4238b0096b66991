#include "uadet/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uadet {

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
        n *= static_cast<std::size_t>(d);
    }
    v.assign(n, fill);
}

bool Tensor::all_finite() const {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

Tape::Id Tape::push(Tensor val, bool wg, std::function<void(Tape&, Id)> back) {
    nodes_.push_back(Node{std::move(val), Tensor{}, wg, std::move(back)});
    Id id = static_cast<Id>(nodes_.size() - 1);
    auto& n = nodes_.back();
    n.grad = Tensor(n.val.shape, 0.0);
    return id;
}

Tape::Id Tape::constant(Tensor t) { return push(std::move(t), false, {}); }

Tape::Id Tape::leaf(const Tensor& t, bool wg) { return push(t, wg, {}); }

Tape::Id Tape::conv3x3(Id x, Id w, Id b) {
    const Tensor& xt = value(x);
    const Tensor& wt = value(w);
    const Tensor& bt = value(b);
    const int C = xt.dim(0), H = xt.dim(1), W = xt.dim(2);
    const int O = wt.dim(0);
    if (wt.dim(1) != C || wt.dim(2) != 3 || wt.dim(3) != 3 || bt.dim(0) != O)
        throw std::invalid_argument("conv3x3: shape mismatch");

    Tensor out({O, H, W});
    for (int o = 0; o < O; ++o)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                double acc = bt.v[static_cast<std::size_t>(o)];
                for (int c = 0; c < C; ++c)
                    for (int di = -1; di <= 1; ++di) {
                        const int ii = i + di;
                        if (ii < 0 || ii >= H) continue;
                        for (int dj = -1; dj <= 1; ++dj) {
                            const int jj = j + dj;
                            if (jj < 0 || jj >= W) continue;
                            acc += xt.v[static_cast<std::size_t>((c * H + ii) * W + jj)] *
                                   wt.v[static_cast<std::size_t>(((o * C + c) * 3 + di + 1) * 3 + dj + 1)];
                        }
                    }
                out.v[static_cast<std::size_t>((o * H + i) * W + j)] = acc;
            }

    const bool wg = with_grad(x) || with_grad(w) || with_grad(b);
    return push(std::move(out), wg, [x, w, b, C, H, W, O](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.value(x);
        const Tensor& wv = tp.value(w);
        Tensor& gx = tp.grad_ref(x);
        Tensor& gw = tp.grad_ref(w);
        Tensor& gb = tp.grad_ref(b);
        for (int o = 0; o < O; ++o)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const double go = g.v[static_cast<std::size_t>((o * H + i) * W + j)];
                    if (go == 0.0) continue;
                    gb.v[static_cast<std::size_t>(o)] += go;
                    for (int c = 0; c < C; ++c)
                        for (int di = -1; di <= 1; ++di) {
                            const int ii = i + di;
                            if (ii < 0 || ii >= H) continue;
                            for (int dj = -1; dj <= 1; ++dj) {
                                const int jj = j + dj;
                                if (jj < 0 || jj >= W) continue;
                                const std::size_t xi = static_cast<std::size_t>((c * H + ii) * W + jj);
                                const std::size_t wi =
                                    static_cast<std::size_t>(((o * C + c) * 3 + di + 1) * 3 + dj + 1);
                                gx.v[xi] += go * wv.v[wi];
                                gw.v[wi] += go * xv.v[xi];
                            }
                        }
                }
    });
}

Tape::Id Tape::conv1x1(Id x, Id w, Id b) {
    const Tensor& xt = value(x);
    const Tensor& wt = value(w);
    const Tensor& bt = value(b);
    const int C = xt.dim(0), H = xt.dim(1), W = xt.dim(2);
    const int O = wt.dim(0);
    if (wt.dim(1) != C || bt.dim(0) != O) throw std::invalid_argument("conv1x1: shape mismatch");

    Tensor out({O, H, W});
    for (int o = 0; o < O; ++o)
        for (int p = 0; p < H * W; ++p) {
            double acc = bt.v[static_cast<std::size_t>(o)];
            for (int c = 0; c < C; ++c)
                acc += xt.v[static_cast<std::size_t>(c * H * W + p)] *
                       wt.v[static_cast<std::size_t>(o * C + c)];
            out.v[static_cast<std::size_t>(o * H * W + p)] = acc;
        }

    const bool wg = with_grad(x) || with_grad(w) || with_grad(b);
    return push(std::move(out), wg, [x, w, b, C, H, W, O](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.value(x);
        const Tensor& wv = tp.value(w);
        Tensor& gx = tp.grad_ref(x);
        Tensor& gw = tp.grad_ref(w);
        Tensor& gb = tp.grad_ref(b);
        for (int o = 0; o < O; ++o)
            for (int p = 0; p < H * W; ++p) {
                const double go = g.v[static_cast<std::size_t>(o * H * W + p)];
                if (go == 0.0) continue;
                gb.v[static_cast<std::size_t>(o)] += go;
                for (int c = 0; c < C; ++c) {
                    gx.v[static_cast<std::size_t>(c * H * W + p)] +=
                        go * wv.v[static_cast<std::size_t>(o * C + c)];
                    gw.v[static_cast<std::size_t>(o * C + c)] +=
                        go * xv.v[static_cast<std::size_t>(c * H * W + p)];
                }
            }
    });
}

Tape::Id Tape::avg_pool2(Id x) {
    const Tensor& xt = value(x);
    const int C = xt.dim(0), H = xt.dim(1), W = xt.dim(2);
    if (H % 2 != 0 || W % 2 != 0) throw std::invalid_argument("avg_pool2: odd spatial size");
    const int Ho = H / 2, Wo = W / 2;

    Tensor out({C, Ho, Wo});
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
                const auto at = [&](int ii, int jj) {
                    return xt.v[static_cast<std::size_t>((c * H + ii) * W + jj)];
                };
                out.v[static_cast<std::size_t>((c * Ho + i) * Wo + j)] =
                    0.25 * (at(2 * i, 2 * j) + at(2 * i, 2 * j + 1) + at(2 * i + 1, 2 * j) +
                            at(2 * i + 1, 2 * j + 1));
            }

    return push(std::move(out), with_grad(x), [x, C, H, W, Ho, Wo](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_ref(x);
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < Ho; ++i)
                for (int j = 0; j < Wo; ++j) {
                    const double go = 0.25 * g.v[static_cast<std::size_t>((c * Ho + i) * Wo + j)];
                    gx.v[static_cast<std::size_t>((c * H + 2 * i) * W + 2 * j)] += go;
                    gx.v[static_cast<std::size_t>((c * H + 2 * i) * W + 2 * j + 1)] += go;
                    gx.v[static_cast<std::size_t>((c * H + 2 * i + 1) * W + 2 * j)] += go;
                    gx.v[static_cast<std::size_t>((c * H + 2 * i + 1) * W + 2 * j + 1)] += go;
                }
    });
}

Tape::Id Tape::linear(Id x, Id w, Id b) {
    const Tensor& xt = value(x);
    const Tensor& wt = value(w);
    const Tensor& bt = value(b);
    const int N = xt.numel();
    const int M = wt.dim(0);
    if (wt.dim(1) != N || bt.dim(0) != M) throw std::invalid_argument("linear: shape mismatch");

    Tensor out({M});
    for (int m = 0; m < M; ++m) {
        double acc = bt.v[static_cast<std::size_t>(m)];
        for (int n = 0; n < N; ++n)
            acc += wt.v[static_cast<std::size_t>(m * N + n)] * xt.v[static_cast<std::size_t>(n)];
        out.v[static_cast<std::size_t>(m)] = acc;
    }

    const bool wg = with_grad(x) || with_grad(w) || with_grad(b);
    return push(std::move(out), wg, [x, w, b, N, M](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.value(x);
        const Tensor& wv = tp.value(w);
        Tensor& gx = tp.grad_ref(x);
        Tensor& gw = tp.grad_ref(w);
        Tensor& gb = tp.grad_ref(b);
        for (int m = 0; m < M; ++m) {
            const double go = g.v[static_cast<std::size_t>(m)];
            if (go == 0.0) continue;
            gb.v[static_cast<std::size_t>(m)] += go;
            for (int n = 0; n < N; ++n) {
                gx.v[static_cast<std::size_t>(n)] += go * wv.v[static_cast<std::size_t>(m * N + n)];
                gw.v[static_cast<std::size_t>(m * N + n)] += go * xv.v[static_cast<std::size_t>(n)];
            }
        }
    });
}

Tape::Id Tape::dropout_mask(Id x, const std::vector<double>& mask) {
    const Tensor& xt = value(x);
    if (static_cast<int>(mask.size()) != xt.numel())
        throw std::invalid_argument("dropout_mask: mask size mismatch");

    Tensor out = xt;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= mask[i];

    return push(std::move(out), with_grad(x), [x, mask](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_ref(x);
        for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += g.v[i] * mask[i];
    });
}

Tape::Id Tape::grl(Id x, double lambda) {
    Tensor out = value(x);
    return push(std::move(out), with_grad(x), [x, lambda](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_ref(x);
        for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += -lambda * g.v[i];
    });
}

Tape::Id Tape::tanh_(Id x) {
    Tensor out = value(x);
    for (auto& v : out.v) v = std::tanh(v);
    Tensor saved = out;
    return push(std::move(out), with_grad(x), [x, saved](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_ref(x);
        for (std::size_t i = 0; i < gx.v.size(); ++i)
            gx.v[i] += g.v[i] * (1.0 - saved.v[i] * saved.v[i]);
    });
}

Tape::Id Tape::sigmoid_(Id x) {
    Tensor out = value(x);
    for (auto& v : out.v) v = 1.0 / (1.0 + std::exp(-v));
    Tensor saved = out;
    return push(std::move(out), with_grad(x), [x, saved](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_ref(x);
        for (std::size_t i = 0; i < gx.v.size(); ++i)
            gx.v[i] += g.v[i] * saved.v[i] * (1.0 - saved.v[i]);
    });
}

Tape::Id Tape::exp_(Id x) {
    Tensor out = value(x);
    for (auto& v : out.v) v = std::exp(v);
    Tensor saved = out;
    return push(std::move(out), with_grad(x), [x, saved](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_ref(x);
        for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += g.v[i] * saved.v[i];
    });
}

Tape::Id Tape::log_(Id x) {
    Tensor out = value(x);
    for (auto& v : out.v) v = std::log(v);
    return push(std::move(out), with_grad(x), [x](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.value(x);
        Tensor& gx = tp.grad_ref(x);
        for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += g.v[i] / xv.v[i];
    });
}

Tape::Id Tape::abs_(Id x) {
    Tensor out = value(x);
    for (auto& v : out.v) v = std::fabs(v);
    return push(std::move(out), with_grad(x), [x](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.value(x);
        Tensor& gx = tp.grad_ref(x);
        for (std::size_t i = 0; i < gx.v.size(); ++i) {
            const double s = xv.v[i] > 0.0 ? 1.0 : (xv.v[i] < 0.0 ? -1.0 : 0.0);
            gx.v[i] += g.v[i] * s;
        }
    });
}

Tape::Id Tape::clamp_(Id x, double lo, double hi) {
    Tensor out = value(x);
    for (auto& v : out.v) v = std::clamp(v, lo, hi);
    return push(std::move(out), with_grad(x), [x, lo, hi](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.value(x);
        Tensor& gx = tp.grad_ref(x);
        for (std::size_t i = 0; i < gx.v.size(); ++i)
            if (xv.v[i] > lo && xv.v[i] < hi) gx.v[i] += g.v[i];
    });
}

Tape::Id Tape::add(Id a, Id b) {
    const Tensor& at = value(a);
    const Tensor& bt = value(b);
    if (at.numel() != bt.numel()) throw std::invalid_argument("add: shape mismatch");
    Tensor out = at;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += bt.v[i];
    return push(std::move(out), with_grad(a) || with_grad(b), [a, b](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad_ref(a);
        Tensor& gb = tp.grad_ref(b);
        for (std::size_t i = 0; i < g.v.size(); ++i) {
            ga.v[i] += g.v[i];
            gb.v[i] += g.v[i];
        }
    });
}

Tape::Id Tape::sub(Id a, Id b) {
    const Tensor& at = value(a);
    const Tensor& bt = value(b);
    if (at.numel() != bt.numel()) throw std::invalid_argument("sub: shape mismatch");
    Tensor out = at;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= bt.v[i];
    return push(std::move(out), with_grad(a) || with_grad(b), [a, b](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad_ref(a);
        Tensor& gb = tp.grad_ref(b);
        for (std::size_t i = 0; i < g.v.size(); ++i) {
            ga.v[i] += g.v[i];
            gb.v[i] -= g.v[i];
        }
    });
}

Tape::Id Tape::mul(Id a, Id b) {
    const Tensor& at = value(a);
    const Tensor& bt = value(b);
    if (at.numel() != bt.numel()) throw std::invalid_argument("mul: shape mismatch");
    Tensor out = at;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= bt.v[i];
    return push(std::move(out), with_grad(a) || with_grad(b), [a, b](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        const Tensor& av = tp.value(a);
        const Tensor& bv = tp.value(b);
        Tensor& ga = tp.grad_ref(a);
        Tensor& gb = tp.grad_ref(b);
        for (std::size_t i = 0; i < g.v.size(); ++i) {
            ga.v[i] += g.v[i] * bv.v[i];
            gb.v[i] += g.v[i] * av.v[i];
        }
    });
}

Tape::Id Tape::scale(Id x, double c) {
    Tensor out = value(x);
    for (auto& v : out.v) v *= c;
    return push(std::move(out), with_grad(x), [x, c](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_ref(x);
        for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += g.v[i] * c;
    });
}

Tape::Id Tape::offset(Id x, double c) {
    Tensor out = value(x);
    for (auto& v : out.v) v += c;
    return push(std::move(out), with_grad(x), [x](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_ref(x);
        for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += g.v[i];
    });
}

Tape::Id Tape::softmax_vec(Id x) {
    const Tensor& xt = value(x);
    Tensor out = xt;
    double mx = out.v[0];
    for (double v : out.v) mx = std::max(mx, v);
    double z = 0.0;
    for (auto& v : out.v) {
        v = std::exp(v - mx);
        z += v;
    }
    for (auto& v : out.v) v /= z;
    Tensor saved = out;
    return push(std::move(out), with_grad(x), [x, saved](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_ref(x);
        double dot = 0.0;
        for (std::size_t i = 0; i < g.v.size(); ++i) dot += g.v[i] * saved.v[i];
        for (std::size_t i = 0; i < g.v.size(); ++i)
            gx.v[i] += saved.v[i] * (g.v[i] - dot);
    });
}

Tape::Id Tape::cell_vector(Id x, int r, int c) {
    const Tensor& xt = value(x);
    const int C = xt.dim(0), H = xt.dim(1), W = xt.dim(2);
    if (r < 0 || r >= H || c < 0 || c >= W) throw std::invalid_argument("cell_vector: out of range");
    Tensor out({C});
    for (int ch = 0; ch < C; ++ch)
        out.v[static_cast<std::size_t>(ch)] = xt.v[static_cast<std::size_t>((ch * H + r) * W + c)];
    return push(std::move(out), with_grad(x), [x, r, c, C, H, W](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_ref(x);
        for (int ch = 0; ch < C; ++ch)
            gx.v[static_cast<std::size_t>((ch * H + r) * W + c)] += g.v[static_cast<std::size_t>(ch)];
    });
}

Tape::Id Tape::channel_plane(Id x, int ch) {
    const Tensor& xt = value(x);
    const int C = xt.dim(0), H = xt.dim(1), W = xt.dim(2);
    if (ch < 0 || ch >= C) throw std::invalid_argument("channel_plane: out of range");
    Tensor out({H * W});
    for (int p = 0; p < H * W; ++p)
        out.v[static_cast<std::size_t>(p)] = xt.v[static_cast<std::size_t>(ch * H * W + p)];
    return push(std::move(out), with_grad(x), [x, ch, H, W](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_ref(x);
        for (int p = 0; p < H * W; ++p)
            gx.v[static_cast<std::size_t>(ch * H * W + p)] += g.v[static_cast<std::size_t>(p)];
    });
}

Tape::Id Tape::pick(Id x, int i) {
    const Tensor& xt = value(x);
    if (i < 0 || i >= xt.numel()) throw std::invalid_argument("pick: out of range");
    Tensor out = Tensor::scalar(xt.v[static_cast<std::size_t>(i)]);
    return push(std::move(out), with_grad(x), [x, i](Tape& tp, Id self) {
        tp.grad_ref(x).v[static_cast<std::size_t>(i)] += tp.grad(self).v[0];
    });
}

Tape::Id Tape::concat(const std::vector<Id>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: empty");
    int total = 0;
    bool wg = false;
    for (Id p : parts) {
        total += value(p).numel();
        wg = wg || with_grad(p);
    }
    Tensor out({total});
    int at = 0;
    for (Id p : parts) {
        const Tensor& t = value(p);
        std::copy(t.v.begin(), t.v.end(), out.v.begin() + at);
        at += t.numel();
    }
    return push(std::move(out), wg, [parts](Tape& tp, Id self) {
        const Tensor& g = tp.grad(self);
        int at = 0;
        for (Id p : parts) {
            Tensor& gp = tp.grad_ref(p);
            for (int i = 0; i < gp.numel(); ++i)
                gp.v[static_cast<std::size_t>(i)] += g.v[static_cast<std::size_t>(at + i)];
            at += gp.numel();
        }
    });
}

Tape::Id Tape::sum(Id x) {
    const Tensor& xt = value(x);
    double s = 0.0;
    for (double v : xt.v) s += v;
    return push(Tensor::scalar(s), with_grad(x), [x](Tape& tp, Id self) {
        const double g = tp.grad(self).v[0];
        Tensor& gx = tp.grad_ref(x);
        for (auto& v : gx.v) v += g;
    });
}

Tape::Id Tape::mean(Id x) {
    const Tensor& xt = value(x);
    const double inv = 1.0 / static_cast<double>(xt.numel());
    double s = 0.0;
    for (double v : xt.v) s += v;
    return push(Tensor::scalar(s * inv), with_grad(x), [x, inv](Tape& tp, Id self) {
        const double g = tp.grad(self).v[0] * inv;
        Tensor& gx = tp.grad_ref(x);
        for (auto& v : gx.v) v += g;
    });
}

Tape::Id Tape::smooth_l1_sum(Id diff) {
    const Tensor& dt = value(diff);
    double s = 0.0;
    for (double d : dt.v) {
        const double a = std::fabs(d);
        s += a <= 1.0 ? 0.5 * d * d : a - 0.5;
    }
    return push(Tensor::scalar(s), with_grad(diff), [diff](Tape& tp, Id self) {
        const double g = tp.grad(self).v[0];
        const Tensor& dv = tp.value(diff);
        Tensor& gd = tp.grad_ref(diff);
        for (std::size_t i = 0; i < gd.v.size(); ++i) {
            const double d = dv.v[i];
            gd.v[i] += g * (std::fabs(d) <= 1.0 ? d : (d > 0.0 ? 1.0 : -1.0));
        }
    });
}

void Tape::backward(Id root) {
    if (value(root).numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    grad_ref(root).v[0] = 1.0;
    for (Id id = root; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.with_grad || !n.back) continue;
        n.back(*this, id);
    }
}

} // namespace uadet
