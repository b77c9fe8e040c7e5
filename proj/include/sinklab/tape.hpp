#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sinklab/tensor.hpp"

namespace sinklab {

// Reverse-mode autodiff tape. Forward is eager: every op computes its value
// immediately via the pure kernels and records a VJP closure. Node parents
// always precede the node, so backward() is a single reverse sweep.
//
// Frozen parameters are leaves with trainable=false; they still receive
// gradients (gradients must flow *through* a frozen LM), but optimizers only
// touch trainable leaves.
template <typename S>
class TapeT {
public:
    using Scalar = S;

    struct Node {
        TensorT<S> value;
        std::vector<S> grad;
        std::vector<int> parents;
        std::function<void(TapeT&, int)> backward;  // (tape, self)
        const char* op = "leaf";
        bool trainable = false;
    };

private:
    std::vector<Node> nodes_;
    bool check_finite_ = false;

    int push(TensorT<S> value, std::vector<int> parents, const char* op,
             std::function<void(TapeT&, int)> backward) {
        if (check_finite_ && !all_finite(value))
            throw NumericError(std::string("non-finite value produced by op '") + op + "'");
        Node n;
        n.value = std::move(value);
        n.parents = std::move(parents);
        n.backward = std::move(backward);
        n.op = op;
        const int id = static_cast<int>(nodes_.size());
        n.value.tape_id = id;
        nodes_.push_back(std::move(n));
        return id;
    }

public:
    void set_check_finite(bool on) { check_finite_ = on; }
    int size() const { return static_cast<int>(nodes_.size()); }

    const TensorT<S>& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const std::vector<S>& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
    std::vector<S>& grad_ref(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
    bool trainable(int id) const { return nodes_[static_cast<std::size_t>(id)].trainable; }
    const char* op_name(int id) const { return nodes_[static_cast<std::size_t>(id)].op; }

    // Value plus gradient as one tensor (grad present after backward()).
    TensorT<S> fetch(int id) const {
        TensorT<S> t = val(id);
        if (!grad(id).empty()) t.grad = grad(id);
        return t;
    }

    int leaf(TensorT<S> v, bool is_trainable = false) {
        const int id = push(std::move(v), {}, "leaf", nullptr);
        nodes_[static_cast<std::size_t>(id)].trainable = is_trainable;
        return id;
    }
    int constant(TensorT<S> v) { return leaf(std::move(v), false); }

    int matmul(int a, int b) {
        return push(sinklab::matmul(val(a), val(b)), {a, b}, "matmul", [a, b](TapeT& t, int self) {
            const auto& ga = t.grad(self);
            const auto& av = t.val(a);
            const auto& bv = t.val(b);
            const int m = av.rows(), k = av.cols(), n = bv.cols();
            auto& da = t.grad_ref(a);
            auto& db = t.grad_ref(b);
            for (int i = 0; i < m; ++i)
                for (int tt = 0; tt < k; ++tt) {
                    S acc = S(0);
                    for (int j = 0; j < n; ++j) acc += ga[static_cast<std::size_t>(i) * n + j] * bv.at(tt, j);
                    da[static_cast<std::size_t>(i) * k + tt] += acc;
                }
            for (int tt = 0; tt < k; ++tt)
                for (int j = 0; j < n; ++j) {
                    S acc = S(0);
                    for (int i = 0; i < m; ++i) acc += av.at(i, tt) * ga[static_cast<std::size_t>(i) * n + j];
                    db[static_cast<std::size_t>(tt) * n + j] += acc;
                }
        });
    }

    int masked_matmul(int a, int b, Mask mask) {
        return push(sinklab::masked_matmul(val(a), val(b), mask), {a, b}, "masked_matmul",
                    [a, b, mask](TapeT& t, int self) {
                        const auto& ga = t.grad(self);
                        const auto& av = t.val(a);
                        const auto& bv = t.val(b);
                        const int m = av.rows(), k = av.cols(), n = bv.cols();
                        auto& da = t.grad_ref(a);
                        auto& db = t.grad_ref(b);
                        for (int i = 0; i < m; ++i)
                            for (int tt = 0; tt < k; ++tt) {
                                if (!mask.at(i, tt)) continue;
                                S acc = S(0);
                                for (int j = 0; j < n; ++j) acc += ga[static_cast<std::size_t>(i) * n + j] * bv.at(tt, j);
                                da[static_cast<std::size_t>(i) * k + tt] += acc;
                                for (int j = 0; j < n; ++j)
                                    db[static_cast<std::size_t>(tt) * n + j] +=
                                        av.at(i, tt) * ga[static_cast<std::size_t>(i) * n + j];
                            }
                    });
    }

    int transpose(int a) {
        return push(transpose2d(val(a)), {a}, "transpose", [a](TapeT& t, int self) {
            const auto& ga = t.grad(self);
            const auto& outv = t.val(self);
            const int m = outv.rows(), n = outv.cols();
            auto& da = t.grad_ref(a);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) da[static_cast<std::size_t>(j) * m + i] += ga[static_cast<std::size_t>(i) * n + j];
        });
    }

    int add(int a, int b) {
        const Broadcast kind = broadcast_kind(val(a), val(b));
        return push(sinklab::add(val(a), val(b)), {a, b}, "add", [a, b, kind](TapeT& t, int self) {
            const auto& ga = t.grad(self);
            auto& da = t.grad_ref(a);
            auto& db = t.grad_ref(b);
            for (std::size_t i = 0; i < ga.size(); ++i) da[i] += ga[i];
            switch (kind) {
                case Broadcast::None:
                    for (std::size_t i = 0; i < ga.size(); ++i) db[i] += ga[i];
                    break;
                case Broadcast::Scalar:
                    for (std::size_t i = 0; i < ga.size(); ++i) db[0] += ga[i];
                    break;
                case Broadcast::LastAxis: {
                    const std::size_t n = db.size();
                    for (std::size_t i = 0; i < ga.size(); ++i) db[i % n] += ga[i];
                    break;
                }
            }
        });
    }

    int mul(int a, int b) {
        const Broadcast kind = broadcast_kind(val(a), val(b));
        return push(sinklab::mul(val(a), val(b)), {a, b}, "mul", [a, b, kind](TapeT& t, int self) {
            const auto& ga = t.grad(self);
            const auto& av = t.val(a);
            const auto& bv = t.val(b);
            auto& da = t.grad_ref(a);
            auto& db = t.grad_ref(b);
            switch (kind) {
                case Broadcast::None:
                    for (std::size_t i = 0; i < ga.size(); ++i) {
                        da[i] += ga[i] * bv.data[i];
                        db[i] += ga[i] * av.data[i];
                    }
                    break;
                case Broadcast::Scalar:
                    for (std::size_t i = 0; i < ga.size(); ++i) {
                        da[i] += ga[i] * bv.data[0];
                        db[0] += ga[i] * av.data[i];
                    }
                    break;
                case Broadcast::LastAxis: {
                    const std::size_t n = db.size();
                    for (std::size_t i = 0; i < ga.size(); ++i) {
                        da[i] += ga[i] * bv.data[i % n];
                        db[i % n] += ga[i] * av.data[i];
                    }
                    break;
                }
            }
        });
    }

    int scale(int a, S s) {
        return push(sinklab::scale(val(a), s), {a}, "scale", [a, s](TapeT& t, int self) {
            const auto& ga = t.grad(self);
            auto& da = t.grad_ref(a);
            for (std::size_t i = 0; i < ga.size(); ++i) da[i] += s * ga[i];
        });
    }

    int gelu(int a) {
        return push(sinklab::gelu(val(a)), {a}, "gelu", [a](TapeT& t, int self) {
            const auto& ga = t.grad(self);
            const auto& av = t.val(a);
            auto& da = t.grad_ref(a);
            for (std::size_t i = 0; i < ga.size(); ++i) da[i] += ga[i] * gelu_grad_scalar(av.data[i]);
        });
    }

    int softplus(int a) {
        return push(sinklab::softplus(val(a)), {a}, "softplus", [a](TapeT& t, int self) {
            const auto& ga = t.grad(self);
            const auto& av = t.val(a);
            auto& da = t.grad_ref(a);
            for (std::size_t i = 0; i < ga.size(); ++i) da[i] += ga[i] * sigmoid_scalar(av.data[i]);
        });
    }

    int rmsnorm(int x, int gain, S eps) {
        return push(sinklab::rmsnorm(val(x), val(gain), eps), {x, gain}, "rmsnorm",
                    [x, gain, eps](TapeT& t, int self) {
                        const auto& gy = t.grad(self);
                        const auto& xv = t.val(x);
                        const auto& gv = t.val(gain);
                        auto& dx = t.grad_ref(x);
                        auto& dg = t.grad_ref(gain);
                        const int d = xv.cols();
                        const std::int64_t slices = xv.numel() / d;
                        for (std::int64_t s = 0; s < slices; ++s) {
                            const S* xr = xv.data.data() + s * d;
                            const S* gyr = gy.data() + s * d;
                            S ms = S(0);
                            for (int j = 0; j < d; ++j) ms += xr[j] * xr[j];
                            ms = ms / S(d) + eps;
                            const S r = std::sqrt(ms);
                            S dot = S(0);  // sum_t gy_t * gain_t * x_t
                            for (int j = 0; j < d; ++j) dot += gyr[j] * gv.data[static_cast<std::size_t>(j)] * xr[j];
                            const S inv_r = S(1) / r;
                            const S coef = dot / (S(d) * r * r * r);
                            for (int j = 0; j < d; ++j) {
                                dx[static_cast<std::size_t>(s * d + j)] +=
                                    gv.data[static_cast<std::size_t>(j)] * gyr[j] * inv_r - xr[j] * coef;
                                dg[static_cast<std::size_t>(j)] += gyr[j] * xr[j] * inv_r;
                            }
                        }
                    });
    }

    int softmax_lastaxis(int x) {
        return push(sinklab::softmax_lastaxis(val(x)), {x}, "softmax", [x](TapeT& t, int self) {
            const auto& gy = t.grad(self);
            const auto& yv = t.val(self);
            auto& dx = t.grad_ref(x);
            const int d = yv.cols();
            const std::int64_t slices = yv.numel() / d;
            for (std::int64_t s = 0; s < slices; ++s) {
                const S* yr = yv.data.data() + s * d;
                const S* gr = gy.data() + s * d;
                S dot = S(0);
                for (int j = 0; j < d; ++j) dot += yr[j] * gr[j];
                for (int j = 0; j < d; ++j) dx[static_cast<std::size_t>(s * d + j)] += yr[j] * (gr[j] - dot);
            }
        });
    }

    int masked_softmax(int x, Mask mask) {
        return push(sinklab::masked_softmax(val(x), mask), {x}, "masked_softmax",
                    [x, mask](TapeT& t, int self) {
                        const auto& gy = t.grad(self);
                        const auto& yv = t.val(self);
                        auto& dx = t.grad_ref(x);
                        const int m = yv.rows(), n = yv.cols();
                        for (int i = 0; i < m; ++i) {
                            S dot = S(0);
                            for (int j = 0; j < n; ++j)
                                if (mask.at(i, j)) dot += yv.at(i, j) * gy[static_cast<std::size_t>(i) * n + j];
                            for (int j = 0; j < n; ++j)
                                if (mask.at(i, j))
                                    dx[static_cast<std::size_t>(i) * n + j] +=
                                        yv.at(i, j) * (gy[static_cast<std::size_t>(i) * n + j] - dot);
                        }
                    });
    }

    int rope(int x, std::vector<int> position_ids, S base) {
        return push(rope_rows(val(x), position_ids, base), {x}, "rope",
                    [x, position_ids, base](TapeT& t, int self) {
                        const auto& gy = t.grad(self);
                        const auto& yv = t.val(self);
                        auto& dx = t.grad_ref(x);
                        const int d = yv.cols();
                        for (int i = 0; i < yv.rows(); ++i) {
                            const S pos = static_cast<S>(position_ids[static_cast<std::size_t>(i)]);
                            for (int k = 0; k < d / 2; ++k) {
                                const S theta = std::pow(base, S(-2) * S(k) / S(d));
                                const S c = std::cos(pos * theta), s = std::sin(pos * theta);
                                const S g0 = gy[static_cast<std::size_t>(i) * d + 2 * k];
                                const S g1 = gy[static_cast<std::size_t>(i) * d + 2 * k + 1];
                                dx[static_cast<std::size_t>(i) * d + 2 * k] += g0 * c + g1 * s;
                                dx[static_cast<std::size_t>(i) * d + 2 * k + 1] += -g0 * s + g1 * c;
                            }
                        }
                    });
    }

    int embedding_lookup(int table, std::vector<int> ids) {
        return push(embedding_rows(val(table), ids), {table}, "embedding_lookup",
                    [table, ids](TapeT& t, int self) {
                        const auto& gy = t.grad(self);
                        const auto& tv = t.val(table);
                        auto& dt = t.grad_ref(table);
                        const int d = tv.cols();
                        for (std::size_t i = 0; i < ids.size(); ++i)
                            for (int j = 0; j < d; ++j)
                                dt[static_cast<std::size_t>(ids[i]) * d + j] += gy[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];
                    });
    }

    int concat(const std::vector<int>& parts, int axis) {
        std::vector<const TensorT<S>*> ptrs;
        ptrs.reserve(parts.size());
        for (int p : parts) ptrs.push_back(&val(p));
        return push(concat2(ptrs, axis), parts, "concat", [parts, axis](TapeT& t, int self) {
            const auto& gy = t.grad(self);
            const auto& yv = t.val(self);
            const int n = yv.cols();
            int off = 0;
            for (int p : parts) {
                const auto& pv = t.val(p);
                auto& dp = t.grad_ref(p);
                if (axis == 0) {
                    const std::size_t base = static_cast<std::size_t>(off) * n;
                    for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += gy[base + i];
                    off += pv.rows();
                } else {
                    for (int i = 0; i < pv.rows(); ++i)
                        for (int j = 0; j < pv.cols(); ++j)
                            dp[static_cast<std::size_t>(i) * pv.cols() + j] +=
                                gy[static_cast<std::size_t>(i) * n + off + j];
                    off += pv.cols();
                }
            }
        });
    }

    int slice(int x, int axis, int start, int len) {
        return push(slice2(val(x), axis, start, len), {x}, "slice",
                    [x, axis, start](TapeT& t, int self) {
                        const auto& gy = t.grad(self);
                        const auto& yv = t.val(self);
                        const auto& xv = t.val(x);
                        auto& dx = t.grad_ref(x);
                        for (int i = 0; i < yv.rows(); ++i)
                            for (int j = 0; j < yv.cols(); ++j) {
                                const int src_i = axis == 0 ? start + i : i;
                                const int src_j = axis == 0 ? j : start + j;
                                dx[static_cast<std::size_t>(src_i) * xv.cols() + src_j] +=
                                    gy[static_cast<std::size_t>(i) * yv.cols() + j];
                            }
                    });
    }

    int sum_all(int x) {
        return push(TensorT<S>::scalar(sinklab::sum_all(val(x))), {x}, "sum",
                    [x](TapeT& t, int self) {
                        const S g = t.grad(self)[0];
                        auto& dx = t.grad_ref(x);
                        for (auto& v : dx) v += g;
                    });
    }

    int cross_entropy(int logits, std::vector<int> targets, std::vector<bool> row_mask) {
        return push(TensorT<S>::scalar(cross_entropy_masked(val(logits), targets, row_mask)),
                    {logits}, "cross_entropy", [logits, targets, row_mask](TapeT& t, int self) {
                        const S g = t.grad(self)[0];
                        const auto& lv = t.val(logits);
                        auto& dl = t.grad_ref(logits);
                        const int m = lv.rows(), v = lv.cols();
                        int count = 0;
                        for (int i = 0; i < m; ++i)
                            if (row_mask[static_cast<std::size_t>(i)]) ++count;
                        const S w = g / S(count);
                        for (int i = 0; i < m; ++i) {
                            if (!row_mask[static_cast<std::size_t>(i)]) continue;
                            S mx = lv.at(i, 0);
                            for (int j = 1; j < v; ++j) mx = std::max(mx, lv.at(i, j));
                            S sum = S(0);
                            for (int j = 0; j < v; ++j) sum += std::exp(lv.at(i, j) - mx);
                            for (int j = 0; j < v; ++j) {
                                const S p = std::exp(lv.at(i, j) - mx) / sum;
                                dl[static_cast<std::size_t>(i) * v + j] +=
                                    w * (p - (j == targets[static_cast<std::size_t>(i)] ? S(1) : S(0)));
                            }
                        }
                    });
    }

    void backward(int loss) {
        if (val(loss).numel() != 1) throw ArgumentError("backward expects a scalar loss node");
        for (auto& n : nodes_) n.grad.assign(n.value.data.size(), S(0));
        nodes_[static_cast<std::size_t>(loss)].grad[0] = S(1);
        for (int id = loss; id >= 0; --id) {
            auto& n = nodes_[static_cast<std::size_t>(id)];
            if (n.backward) n.backward(*this, id);
        }
    }
};

using Tape = TapeT<float>;

}  // namespace sinklab
