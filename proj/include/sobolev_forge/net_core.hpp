#pragma once

// Tensor and network arithmetic for convolutional residual networks:
// one-sided stride-one convolution, residual blocks with identity shortcut,
// padding of the input into channel 1 and a fully-connected readout.
// Everything here is 64-bit and single-pass; models are plain values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "sobolev_forge/errors.hpp"

namespace sobolev_forge {

using Vector = std::vector<double>;

inline double relu(double v) { return v > 0.0 ? v : 0.0; }

/// Dense row-major matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill)
    {
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows)
    {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        Matrix m(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c)
                throw ShapeError("Matrix::from_rows: ragged rows");
            std::size_t j = 0;
            for (double v : row)
                m(i, j++) = v;
            ++i;
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline double max_abs(std::span<const double> v)
{
    double m = 0.0;
    for (double x : v)
        m = std::max(m, std::abs(x));
    return m;
}

struct FilterEntry {
    std::uint32_t out;
    std::uint32_t tap;
    std::uint32_t in;
    double value;
};

/// Convolution filter W_{j,k,l}: output channel j, tap k, input channel l.
///
/// Stored as a sorted list of nonzero entries; compiled approximators hold
/// thousands of block-diagonal layers whose dense form would not fit in
/// memory. `at()` and `dense()` present the full 3-d array.
class FilterTensor {
public:
    FilterTensor() = default;
    FilterTensor(std::size_t out_channels, std::size_t taps, std::size_t in_channels)
        : out_(out_channels), taps_(taps), in_(in_channels)
    {
        if (out_ == 0 || taps_ == 0 || in_ == 0)
            throw ShapeError("FilterTensor: dimensions must be positive, got " + dims_str());
    }

    static FilterTensor from_dense(std::size_t out_channels, std::size_t taps, std::size_t in_channels,
                                   std::span<const double> row_major)
    {
        FilterTensor f(out_channels, taps, in_channels);
        if (row_major.size() != out_channels * taps * in_channels)
            throw ShapeError("FilterTensor::from_dense: " + std::to_string(row_major.size()) +
                             " entries for dims " + f.dims_str());
        std::size_t idx = 0;
        for (std::uint32_t j = 0; j < out_channels; ++j)
            for (std::uint32_t k = 0; k < taps; ++k)
                for (std::uint32_t l = 0; l < in_channels; ++l, ++idx)
                    if (row_major[idx] != 0.0)
                        f.entries_.push_back({j, k, l, row_major[idx]});
        return f;
    }

    static FilterTensor from_entries(std::size_t out_channels, std::size_t taps, std::size_t in_channels,
                                     std::vector<FilterEntry> entries)
    {
        FilterTensor f(out_channels, taps, in_channels);
        std::erase_if(entries, [](const FilterEntry& e) { return e.value == 0.0; });
        std::sort(entries.begin(), entries.end(), entry_less);
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto& e = entries[i];
            if (e.out >= out_channels || e.tap >= taps || e.in >= in_channels)
                throw ShapeError("FilterTensor::from_entries: index out of range for " + f.dims_str());
            if (i > 0 && !entry_less(entries[i - 1], e))
                throw ShapeError("FilterTensor::from_entries: duplicate entry");
        }
        f.entries_ = std::move(entries);
        return f;
    }

    std::size_t out_channels() const { return out_; }
    std::size_t taps() const { return taps_; }
    std::size_t in_channels() const { return in_; }
    std::string dims_str() const
    {
        return "[" + std::to_string(out_) + "," + std::to_string(taps_) + "," + std::to_string(in_) + "]";
    }

    double at(std::size_t j, std::size_t k, std::size_t l) const
    {
        const FilterEntry key{static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(k),
                              static_cast<std::uint32_t>(l), 0.0};
        auto it = std::lower_bound(entries_.begin(), entries_.end(), key, entry_less);
        if (it != entries_.end() && !entry_less(key, *it))
            return it->value;
        return 0.0;
    }

    void set(std::size_t j, std::size_t k, std::size_t l, double v)
    {
        if (j >= out_ || k >= taps_ || l >= in_)
            throw ShapeError("FilterTensor::set: index out of range for " + dims_str());
        const FilterEntry key{static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(k),
                              static_cast<std::uint32_t>(l), v};
        auto it = std::lower_bound(entries_.begin(), entries_.end(), key, entry_less);
        const bool present = it != entries_.end() && !entry_less(key, *it);
        if (v == 0.0) {
            if (present)
                entries_.erase(it);
        } else if (present) {
            it->value = v;
        } else {
            entries_.insert(it, key);
        }
    }

    std::vector<double> dense() const
    {
        std::vector<double> d(out_ * taps_ * in_, 0.0);
        for (const auto& e : entries_)
            d[(e.out * taps_ + e.tap) * in_ + e.in] = e.value;
        return d;
    }

    std::span<const FilterEntry> entries() const { return entries_; }
    double max_abs_weight() const
    {
        double m = 0.0;
        for (const auto& e : entries_)
            m = std::max(m, std::abs(e.value));
        return m;
    }

    bool operator==(const FilterTensor& o) const
    {
        if (out_ != o.out_ || taps_ != o.taps_ || in_ != o.in_ || entries_.size() != o.entries_.size())
            return false;
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const auto& a = entries_[i];
            const auto& b = o.entries_[i];
            if (a.out != b.out || a.tap != b.tap || a.in != b.in || a.value != b.value)
                return false;
        }
        return true;
    }

private:
    static bool entry_less(const FilterEntry& a, const FilterEntry& b)
    {
        return std::tie(a.out, a.tap, a.in) < std::tie(b.out, b.tap, b.in);
    }

    std::size_t out_ = 0;
    std::size_t taps_ = 0;
    std::size_t in_ = 0;
    std::vector<FilterEntry> entries_;
};

/// Y_{i,j} = sum_k sum_l W_{j,k,l} Z_{i+k-1,l}, rows past D read as zero.
inline Matrix conv_forward(const FilterTensor& filter, const Matrix& z)
{
    if (filter.in_channels() != z.cols())
        throw ShapeError("conv_forward: filter " + filter.dims_str() + " cannot consume input " +
                         shape_str(z.rows(), z.cols()));
    const std::size_t d = z.rows();
    Matrix y(d, filter.out_channels());
    for (const auto& e : filter.entries()) {
        for (std::size_t i = 0; i + e.tap < d; ++i)
            y(i, e.out) += e.value * z(i + e.tap, e.in);
    }
    return y;
}

/// ReLU(conv(Z) + B), the per-layer map inside a residual block.
inline Matrix conv_relu_forward(const FilterTensor& filter, const Matrix& bias, const Matrix& z)
{
    Matrix y = conv_forward(filter, z);
    if (bias.rows() != y.rows() || bias.cols() != y.cols())
        throw ShapeError("conv layer bias " + shape_str(bias.rows(), bias.cols()) + " does not match output " +
                         shape_str(y.rows(), y.cols()));
    auto yd = y.data();
    auto bd = bias.data();
    for (std::size_t i = 0; i < yd.size(); ++i)
        yd[i] = relu(yd[i] + bd[i]);
    return y;
}

struct ResidualBlockSpec {
    std::vector<FilterTensor> filters;
    std::vector<Matrix> biases;

    std::size_t depth() const { return filters.size(); }
};

/// Checks a block maps D x C to D x C through a consistent chain of layers.
inline void validate_block(const ResidualBlockSpec& block, std::size_t d, std::size_t c)
{
    if (block.filters.empty())
        throw ShapeError("residual block has no layers");
    if (block.filters.size() != block.biases.size())
        throw ShapeError("residual block: " + std::to_string(block.filters.size()) + " filters but " +
                         std::to_string(block.biases.size()) + " biases");
    std::size_t ch = c;
    for (std::size_t l = 0; l < block.filters.size(); ++l) {
        const auto& f = block.filters[l];
        if (f.in_channels() != ch)
            throw ShapeError("residual block layer " + std::to_string(l) + ": filter " + f.dims_str() +
                             " after " + std::to_string(ch) + " channels");
        const auto& b = block.biases[l];
        if (b.rows() != d || b.cols() != f.out_channels())
            throw ShapeError("residual block layer " + std::to_string(l) + ": bias " +
                             shape_str(b.rows(), b.cols()) + " expected " + shape_str(d, f.out_channels()));
        ch = f.out_channels();
    }
    if (ch != c)
        throw ShapeError("residual block returns " + std::to_string(ch) + " channels, shortcut carries " +
                         std::to_string(c));
}

/// Conv(Z) + Z with ReLU after every layer, including the last one.
inline Matrix block_forward(const ResidualBlockSpec& block, const Matrix& z)
{
    validate_block(block, z.rows(), z.cols());
    Matrix h = z;
    for (std::size_t l = 0; l < block.filters.size(); ++l)
        h = conv_relu_forward(block.filters[l], block.biases[l], h);
    auto hd = h.data();
    auto zd = z.data();
    for (std::size_t i = 0; i < hd.size(); ++i)
        hd[i] += zd[i];
    return h;
}

struct ConvResNetModel {
    std::size_t input_dim = 0;
    std::size_t channels = 0;
    std::vector<ResidualBlockSpec> blocks;
    Matrix fc_weight;
    double fc_bias = 0.0;
    bool first_row_only = false;
};

inline void validate(const ConvResNetModel& net)
{
    if (net.input_dim == 0 || net.channels == 0)
        throw ShapeError("ConvResNetModel: D and C must be positive");
    if (net.fc_weight.rows() != net.input_dim || net.fc_weight.cols() != net.channels)
        throw ShapeError("ConvResNetModel: fc weight " + shape_str(net.fc_weight.rows(), net.fc_weight.cols()) +
                         " expected " + shape_str(net.input_dim, net.channels));
    for (const auto& b : net.blocks)
        validate_block(b, net.input_dim, net.channels);
    if (net.first_row_only) {
        for (std::size_t i = 1; i < net.fc_weight.rows(); ++i)
            for (std::size_t j = 0; j < net.fc_weight.cols(); ++j)
                if (net.fc_weight(i, j) != 0.0)
                    throw ShapeError("ConvResNetModel: first_row_only set but fc row " + std::to_string(i + 1) +
                                     " is nonzero");
    }
}

/// P(x) = [x 0 ... 0].
inline Matrix pad_input(std::span<const double> x, std::size_t channels)
{
    Matrix z(x.size(), channels);
    for (std::size_t i = 0; i < x.size(); ++i)
        z(i, 0) = x[i];
    return z;
}

/// Sum of entrywise product W (x) Z plus bias.
inline double readout(const Matrix& w, const Matrix& z, double bias)
{
    if (w.rows() != z.rows() || w.cols() != z.cols())
        throw ShapeError("readout: weight " + shape_str(w.rows(), w.cols()) + " vs features " +
                         shape_str(z.rows(), z.cols()));
    double s = 0.0;
    auto wd = w.data();
    auto zd = z.data();
    for (std::size_t i = 0; i < wd.size(); ++i)
        if (wd[i] != 0.0)
            s += wd[i] * zd[i];
    return s + bias;
}

/// Forward pass without re-validating block wiring (blocks validate lazily).
inline double resnet_forward(const ConvResNetModel& net, std::span<const double> x)
{
    if (x.size() != net.input_dim)
        throw ShapeError("resnet_forward: input length " + std::to_string(x.size()) + ", model expects " +
                         std::to_string(net.input_dim));
    Matrix z = pad_input(x, net.channels);
    for (const auto& block : net.blocks)
        z = block_forward(block, z);
    return readout(net.fc_weight, z, net.fc_bias);
}

/// Fully-connected ReLU network; no activation after the final affine map.
struct MlpModel {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;

    std::size_t depth() const { return weights.size(); }
    std::size_t input_dim() const { return weights.empty() ? 0 : weights.front().cols(); }
    std::size_t output_dim() const { return weights.empty() ? 0 : weights.back().rows(); }
    std::size_t max_width() const
    {
        std::size_t w = 0;
        for (const auto& m : weights)
            w = std::max({w, m.rows(), m.cols()});
        return w;
    }
    double max_abs_param() const
    {
        double m = 0.0;
        for (const auto& w : weights)
            m = std::max(m, max_abs(w.data()));
        for (const auto& b : biases)
            m = std::max(m, max_abs(b));
        return m;
    }
};

inline void validate(const MlpModel& mlp)
{
    if (mlp.weights.empty())
        throw ShapeError("MlpModel: no layers");
    if (mlp.weights.size() != mlp.biases.size())
        throw ShapeError("MlpModel: weight/bias count mismatch");
    for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
        if (mlp.biases[l].size() != mlp.weights[l].rows())
            throw ShapeError("MlpModel layer " + std::to_string(l) + ": bias length " +
                             std::to_string(mlp.biases[l].size()) + " vs " +
                             std::to_string(mlp.weights[l].rows()) + " rows");
        if (l > 0 && mlp.weights[l].cols() != mlp.weights[l - 1].rows())
            throw ShapeError("MlpModel layer " + std::to_string(l) + ": weight " +
                             shape_str(mlp.weights[l].rows(), mlp.weights[l].cols()) + " after width " +
                             std::to_string(mlp.weights[l - 1].rows()));
    }
}

inline Vector affine(const Matrix& w, const Vector& b, std::span<const double> x)
{
    Vector y(w.rows(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        double s = 0.0;
        const auto row = w.row(i);
        for (std::size_t j = 0; j < row.size(); ++j)
            if (row[j] != 0.0)
                s += row[j] * x[j];
        y[i] = s + b[i];
    }
    return y;
}

inline Vector mlp_forward(const MlpModel& mlp, std::span<const double> x)
{
    if (mlp.weights.empty() || x.size() != mlp.input_dim())
        throw ShapeError("mlp_forward: input length " + std::to_string(x.size()) + ", model expects " +
                         std::to_string(mlp.input_dim()));
    Vector h(x.begin(), x.end());
    for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
        if (mlp.weights[l].cols() != h.size())
            throw ShapeError("mlp_forward: layer " + std::to_string(l) + " expects width " +
                             std::to_string(mlp.weights[l].cols()) + ", got " + std::to_string(h.size()));
        h = affine(mlp.weights[l], mlp.biases[l], h);
        if (l + 1 < mlp.weights.size())
            for (double& v : h)
                v = relu(v);
    }
    return h;
}

/// Architecture class parameters (M, L, J, K, kappa1, kappa2) measured on a model.
struct NetClassParams {
    std::size_t M = 0;
    std::size_t L = 0;
    std::size_t J = 0;
    std::size_t K = 0;
    double kappa1 = 0.0;
    double kappa2 = 0.0;
    bool first_row_only = true;
};

inline NetClassParams audit_class(const ConvResNetModel& net)
{
    NetClassParams p;
    p.M = net.blocks.size();
    p.J = net.channels;
    for (const auto& block : net.blocks) {
        p.L = std::max(p.L, block.filters.size());
        for (const auto& f : block.filters) {
            p.J = std::max({p.J, f.out_channels(), f.in_channels()});
            p.K = std::max(p.K, f.taps());
            p.kappa1 = std::max(p.kappa1, f.max_abs_weight());
        }
        for (const auto& b : block.biases)
            p.kappa1 = std::max(p.kappa1, max_abs(b.data()));
    }
    p.kappa2 = std::max(max_abs(net.fc_weight.data()), std::abs(net.fc_bias));
    for (std::size_t i = 1; i < net.fc_weight.rows(); ++i)
        for (std::size_t j = 0; j < net.fc_weight.cols(); ++j)
            if (net.fc_weight(i, j) != 0.0)
                p.first_row_only = false;
    return p;
}

} // namespace sobolev_forge
