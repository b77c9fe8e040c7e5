#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sinklab {

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& m) : std::runtime_error("dimension error: " + m) {}
};
struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& m) : std::runtime_error("argument error: " + m) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error("numeric error: " + m) {}
};
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& m) : std::runtime_error("format error: " + m) {}
};
struct CorruptionError : std::runtime_error {
    explicit CorruptionError(const std::string& m) : std::runtime_error("corruption error: " + m) {}
};

inline std::int64_t numel_of(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e < 0) throw DimensionError("negative extent");
        n *= e;
    }
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major tensor. Scalar type is a template parameter so test
// oracles can replay the same graphs in double precision; the product
// path is TensorT<float> throughout.
template <typename S>
struct TensorT {
    std::vector<int> shape;
    std::vector<S> data;
    std::optional<std::vector<S>> grad;  // same length as data when present
    int tape_id = -1;                    // node handle when recorded on a tape

    TensorT() = default;
    explicit TensorT(std::vector<int> shp)
        : shape(std::move(shp)), data(static_cast<std::size_t>(numel_of(shape)), S(0)) {}
    TensorT(std::vector<int> shp, std::vector<S> d) : shape(std::move(shp)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != numel_of(shape))
            throw DimensionError("data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
    }

    static TensorT zeros(std::vector<int> shp) { return TensorT(std::move(shp)); }
    static TensorT full(std::vector<int> shp, S v) {
        TensorT t(std::move(shp));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static TensorT scalar(S v) { return TensorT({1}, {v}); }

    int rank() const { return static_cast<int>(shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int dim(int i) const {
        int r = rank();
        if (i < 0) i += r;
        if (i < 0 || i >= r) throw DimensionError("axis out of range");
        return shape[static_cast<std::size_t>(i)];
    }
    int rows() const { return dim(0); }
    int cols() const { return dim(-1); }

    S& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }
    S at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols() + j]; }
    S& operator[](std::size_t i) { return data[i]; }
    S operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    template <typename S2>
    TensorT<S2> cast() const {
        TensorT<S2> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<S2>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;

// Per-row visibility mask for attention-style ops. Entry (i,j) says row i
// may read source j.
class Mask {
    int rows_ = 0, cols_ = 0;
    std::vector<std::uint8_t> v_;

public:
    Mask() = default;
    Mask(int rows, int cols, bool visible)
        : rows_(rows), cols_(cols), v_(static_cast<std::size_t>(rows) * cols, visible ? 1 : 0) {}

    static Mask all_visible(int n) { return Mask(n, n, true); }
    static Mask causal(int n) {
        Mask m(n, n, false);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j <= i; ++j) m.set(i, j, true);
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    bool at(int i, int j) const { return v_[static_cast<std::size_t>(i) * cols_ + j] != 0; }
    void set(int i, int j, bool v) { v_[static_cast<std::size_t>(i) * cols_ + j] = v ? 1 : 0; }
};

// ---------------------------------------------------------------------------
// Elementwise scalar kernels
// ---------------------------------------------------------------------------

template <typename S>
S gelu_scalar(S x) {
    return S(0.5) * x * (S(1) + std::erf(x / std::sqrt(S(2))));
}

template <typename S>
S gelu_grad_scalar(S x) {
    const S inv_sqrt2 = S(1) / std::sqrt(S(2));
    const S pdf = std::exp(S(-0.5) * x * x) / std::sqrt(S(2) * S(M_PI));
    return S(0.5) * (S(1) + std::erf(x * inv_sqrt2)) + x * pdf;
}

template <typename S>
S softplus_scalar(S x) {
    return std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename S>
S sigmoid_scalar(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

// ---------------------------------------------------------------------------
// Pure tensor kernels (forward only). The tape wraps these and adds VJPs.
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw DimensionError("matmul " + shape_str(a.shape) + " x " + shape_str(b.shape));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    TensorT<S> c({m, n});
    for (int i = 0; i < m; ++i)
        for (int t = 0; t < k; ++t) {
            const S av = a.at(i, t);
            if (av == S(0)) continue;
            for (int j = 0; j < n; ++j) c.at(i, j) += av * b.at(t, j);
        }
    return c;
}

// out[i][j] = sum over visible t of a[i][t] * b[t][j]. Invisible entries are
// never read, so a masked source cannot perturb the output even at the bit
// level.
template <typename S>
TensorT<S> masked_matmul(const TensorT<S>& a, const TensorT<S>& b, const Mask& mask) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw DimensionError("masked_matmul " + shape_str(a.shape) + " x " + shape_str(b.shape));
    if (mask.rows() != a.rows() || mask.cols() != a.cols())
        throw DimensionError("mask shape mismatch");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    TensorT<S> c({m, n});
    for (int i = 0; i < m; ++i)
        for (int t = 0; t < k; ++t) {
            if (!mask.at(i, t)) continue;
            const S av = a.at(i, t);
            for (int j = 0; j < n; ++j) c.at(i, j) += av * b.at(t, j);
        }
    return c;
}

template <typename S>
TensorT<S> transpose2d(const TensorT<S>& a) {
    if (a.rank() != 2) throw DimensionError("transpose expects rank 2");
    TensorT<S> c({a.cols(), a.rows()});
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) c.at(j, i) = a.at(i, j);
    return c;
}

enum class Broadcast { None, LastAxis, Scalar };

template <typename S>
Broadcast broadcast_kind(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.same_shape(b)) return Broadcast::None;
    if (b.numel() == 1) return Broadcast::Scalar;
    if (b.rank() == 1 && b.dim(0) == a.cols()) return Broadcast::LastAxis;
    throw DimensionError("cannot broadcast " + shape_str(b.shape) + " onto " + shape_str(a.shape));
}

template <typename S, typename F>
TensorT<S> binary_broadcast(const TensorT<S>& a, const TensorT<S>& b, F&& f) {
    TensorT<S> c = a;
    switch (broadcast_kind(a, b)) {
        case Broadcast::None:
            for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] = f(a.data[i], b.data[i]);
            break;
        case Broadcast::Scalar:
            for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] = f(a.data[i], b.data[0]);
            break;
        case Broadcast::LastAxis: {
            const std::size_t n = static_cast<std::size_t>(a.cols());
            for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] = f(a.data[i], b.data[i % n]);
            break;
        }
    }
    return c;
}

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_broadcast(a, b, [](S x, S y) { return x + y; });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_broadcast(a, b, [](S x, S y) { return x * y; });
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S s) {
    TensorT<S> c = a;
    for (auto& v : c.data) v *= s;
    return c;
}

template <typename S>
TensorT<S> gelu(const TensorT<S>& a) {
    TensorT<S> c = a;
    for (auto& v : c.data) v = gelu_scalar(v);
    return c;
}

template <typename S>
TensorT<S> softplus(const TensorT<S>& a) {
    TensorT<S> c = a;
    for (auto& v : c.data) v = softplus_scalar(v);
    return c;
}

// y = x / sqrt(mean(x^2) + eps) * gain, per last-axis slice.
template <typename S>
TensorT<S> rmsnorm(const TensorT<S>& x, const TensorT<S>& gain, S eps) {
    const int d = x.cols();
    if (d < 1) throw DimensionError("rmsnorm needs last-axis extent >= 1");
    if (gain.rank() != 1 || gain.dim(0) != d)
        throw DimensionError("rmsnorm gain " + shape_str(gain.shape) + " vs last axis " + std::to_string(d));
    if (!(eps >= S(0))) throw ArgumentError("rmsnorm eps must be >= 0");
    TensorT<S> y = x;
    const std::int64_t slices = x.numel() / d;
    for (std::int64_t s = 0; s < slices; ++s) {
        S* row = y.data.data() + s * d;
        S ms = S(0);
        for (int j = 0; j < d; ++j) ms += row[j] * row[j];
        ms = ms / S(d) + eps;
        const S inv = S(1) / std::sqrt(ms);
        for (int j = 0; j < d; ++j) row[j] = row[j] * inv * gain.data[static_cast<std::size_t>(j)];
    }
    return y;
}

template <typename S>
TensorT<S> softmax_lastaxis(const TensorT<S>& x) {
    const int d = x.cols();
    if (d < 1) throw DimensionError("softmax needs last-axis extent >= 1");
    TensorT<S> y = x;
    const std::int64_t slices = x.numel() / d;
    for (std::int64_t s = 0; s < slices; ++s) {
        S* row = y.data.data() + s * d;
        S mx = row[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        S sum = S(0);
        for (int j = 0; j < d; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int j = 0; j < d; ++j) row[j] /= sum;
    }
    return y;
}

// Row-wise softmax over the visible entries only; invisible entries come out
// as exact zeros and are never read.
template <typename S>
TensorT<S> masked_softmax(const TensorT<S>& x, const Mask& mask) {
    if (x.rank() != 2 || mask.rows() != x.rows() || mask.cols() != x.cols())
        throw DimensionError("masked_softmax mask/shape mismatch");
    TensorT<S> y({x.rows(), x.cols()});
    for (int i = 0; i < x.rows(); ++i) {
        S mx = S(0);
        bool any = false;
        for (int j = 0; j < x.cols(); ++j)
            if (mask.at(i, j)) {
                mx = any ? std::max(mx, x.at(i, j)) : x.at(i, j);
                any = true;
            }
        if (!any) throw ArgumentError("masked_softmax row " + std::to_string(i) + " has no visible entries");
        S sum = S(0);
        for (int j = 0; j < x.cols(); ++j)
            if (mask.at(i, j)) {
                y.at(i, j) = std::exp(x.at(i, j) - mx);
                sum += y.at(i, j);
            }
        for (int j = 0; j < x.cols(); ++j)
            if (mask.at(i, j)) y.at(i, j) /= sum;
    }
    return y;
}

// Rotates adjacent pairs (2k, 2k+1) of each row by angle pos * base^(-2k/d).
template <typename S>
TensorT<S> rope_rows(const TensorT<S>& x, const std::vector<int>& position_ids, S base) {
    if (x.rank() != 2 || x.cols() % 2 != 0) throw DimensionError("rope needs rank 2 with even last axis");
    if (static_cast<int>(position_ids.size()) != x.rows())
        throw DimensionError("rope position id count mismatch");
    const int d = x.cols();
    TensorT<S> y = x;
    for (int i = 0; i < x.rows(); ++i) {
        if (position_ids[static_cast<std::size_t>(i)] < 0) throw ArgumentError("negative position id");
        const S pos = static_cast<S>(position_ids[static_cast<std::size_t>(i)]);
        for (int k = 0; k < d / 2; ++k) {
            const S theta = std::pow(base, S(-2) * S(k) / S(d));
            const S c = std::cos(pos * theta), s = std::sin(pos * theta);
            const S a = x.at(i, 2 * k), b = x.at(i, 2 * k + 1);
            y.at(i, 2 * k) = a * c - b * s;
            y.at(i, 2 * k + 1) = a * s + b * c;
        }
    }
    return y;
}

template <typename S>
TensorT<S> embedding_rows(const TensorT<S>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw DimensionError("embedding table must be rank 2");
    TensorT<S> out({static_cast<int>(ids.size()), table.cols()});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows())
            throw ArgumentError("token id " + std::to_string(ids[i]) + " out of vocabulary");
        for (int j = 0; j < table.cols(); ++j)
            out.at(static_cast<int>(i), j) = table.at(ids[i], j);
    }
    return out;
}

template <typename S>
TensorT<S> concat2(const std::vector<const TensorT<S>*>& parts, int axis) {
    if (parts.empty()) throw ArgumentError("concat of zero tensors");
    if (axis != 0 && axis != 1) throw DimensionError("concat supports axis 0 or 1");
    const int other = axis == 0 ? parts[0]->cols() : parts[0]->rows();
    int total = 0;
    for (auto* p : parts) {
        if (p->rank() != 2) throw DimensionError("concat expects rank 2");
        if ((axis == 0 ? p->cols() : p->rows()) != other) throw DimensionError("concat extent mismatch");
        total += axis == 0 ? p->rows() : p->cols();
    }
    TensorT<S> out(axis == 0 ? std::vector<int>{total, other} : std::vector<int>{other, total});
    int off = 0;
    for (auto* p : parts) {
        if (axis == 0) {
            std::copy(p->data.begin(), p->data.end(), out.data.begin() + static_cast<std::size_t>(off) * other);
            off += p->rows();
        } else {
            for (int i = 0; i < other; ++i)
                for (int j = 0; j < p->cols(); ++j) out.at(i, off + j) = p->at(i, j);
            off += p->cols();
        }
    }
    return out;
}

template <typename S>
TensorT<S> slice2(const TensorT<S>& x, int axis, int start, int len) {
    if (x.rank() != 2 || (axis != 0 && axis != 1)) throw DimensionError("slice expects rank 2, axis 0|1");
    const int extent = axis == 0 ? x.rows() : x.cols();
    if (start < 0 || len < 0 || start + len > extent) throw DimensionError("slice out of range");
    TensorT<S> out(axis == 0 ? std::vector<int>{len, x.cols()} : std::vector<int>{x.rows(), len});
    for (int i = 0; i < out.rows(); ++i)
        for (int j = 0; j < out.cols(); ++j)
            out.at(i, j) = axis == 0 ? x.at(start + i, j) : x.at(i, start + j);
    return out;
}

template <typename S>
S sum_all(const TensorT<S>& x) {
    S s = S(0);
    for (S v : x.data) s += v;
    return s;
}

template <typename S>
S l2_norm(const S* v, int n) {
    S s = S(0);
    for (int i = 0; i < n; ++i) s += v[i] * v[i];
    return std::sqrt(s);
}

template <typename S>
S l2_norm(const TensorT<S>& x) {
    return l2_norm(x.data.data(), static_cast<int>(x.numel()));
}

template <typename S>
std::vector<S> row_norms(const TensorT<S>& x) {
    std::vector<S> out(static_cast<std::size_t>(x.rows()));
    for (int i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)] = l2_norm(&x.data[static_cast<std::size_t>(i) * x.cols()], x.cols());
    return out;
}

template <typename S>
TensorT<S> mean_rows(const TensorT<S>& x) {
    TensorT<S> out({x.cols()});
    for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < x.cols(); ++j) out.data[static_cast<std::size_t>(j)] += x.at(i, j);
    for (auto& v : out.data) v /= S(x.rows());
    return out;
}

// Mean next-token cross entropy over rows where row_mask is set.
// targets[i] is the id the row-i logits should predict.
template <typename S>
S cross_entropy_masked(const TensorT<S>& logits, const std::vector<int>& targets,
                       const std::vector<bool>& row_mask) {
    if (logits.rank() != 2) throw DimensionError("cross_entropy expects rank-2 logits");
    const int m = logits.rows(), v = logits.cols();
    if (static_cast<int>(targets.size()) != m || static_cast<int>(row_mask.size()) != m)
        throw DimensionError("cross_entropy target/mask length mismatch");
    S total = S(0);
    int count = 0;
    for (int i = 0; i < m; ++i) {
        if (!row_mask[static_cast<std::size_t>(i)]) continue;
        const int t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= v) throw ArgumentError("cross_entropy target out of range");
        S mx = logits.at(i, 0);
        for (int j = 1; j < v; ++j) mx = std::max(mx, logits.at(i, j));
        S lse = S(0);
        for (int j = 0; j < v; ++j) lse += std::exp(logits.at(i, j) - mx);
        total += mx + std::log(lse) - logits.at(i, t);
        ++count;
    }
    if (count == 0) throw ArgumentError("cross_entropy mask selects no rows");
    return total / S(count);
}

template <typename S>
int argmax_row(const TensorT<S>& x, int row) {
    int best = 0;
    for (int j = 1; j < x.cols(); ++j)
        if (x.at(row, j) > x.at(row, best)) best = j;
    return best;
}

template <typename S>
int argmax_row_restricted(const TensorT<S>& x, int row, const std::vector<int>& candidates) {
    if (candidates.empty()) throw ArgumentError("empty candidate set");
    int best = candidates[0];
    for (int c : candidates)
        if (x.at(row, c) > x.at(row, best)) best = c;
    return best;
}

template <typename S>
bool all_finite(const TensorT<S>& x) {
    for (S v : x.data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace sinklab
