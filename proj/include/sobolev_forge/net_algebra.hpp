#pragma once

// Structural operations on convolutional networks: realizing an MLP as a CNN,
// composing CNNs, grouping many CNNs channel-parallel, and assembling a sum of
// CNNs into one residual network.

#include <algorithm>
#include <vector>

#include "sobolev_forge/net_core.hpp"
#include "sobolev_forge/scalar_net.hpp"
#include "sobolev_forge/serialization.hpp"

namespace sobolev_forge {

/// f(x) = fc (x) Conv(P(x)) + b: a plain conv stack with ReLU after every layer.
struct CnnFunction {
    std::size_t input_dim = 0;
    std::size_t input_channels = 1;
    std::vector<FilterTensor> filters;
    std::vector<Matrix> biases;
    Matrix fc_weight;
    double fc_bias = 0.0;
    bool first_row_only = false;

    std::size_t depth() const { return filters.size(); }
    std::size_t output_channels() const { return filters.empty() ? input_channels : filters.back().out_channels(); }
    std::size_t max_channels() const
    {
        std::size_t c = input_channels;
        for (const auto& f : filters)
            c = std::max(c, f.out_channels());
        return c;
    }
    std::size_t max_taps() const
    {
        std::size_t k = 0;
        for (const auto& f : filters)
            k = std::max(k, f.taps());
        return k;
    }
    double kappa1() const
    {
        double k = 0.0;
        for (const auto& f : filters)
            k = std::max(k, f.max_abs_weight());
        for (const auto& b : biases)
            k = std::max(k, max_abs(b.data()));
        return k;
    }
    double kappa2() const { return std::max(max_abs(fc_weight.data()), std::abs(fc_bias)); }
};

inline bool fc_first_row_only(const Matrix& fc)
{
    for (std::size_t i = 1; i < fc.rows(); ++i)
        for (std::size_t j = 0; j < fc.cols(); ++j)
            if (fc(i, j) != 0.0)
                return false;
    return true;
}

inline void validate(const CnnFunction& f)
{
    if (f.input_dim == 0 || f.input_channels == 0)
        throw ShapeError("CnnFunction: D and input channels must be positive");
    if (f.filters.size() != f.biases.size())
        throw ShapeError("CnnFunction: filter/bias count mismatch");
    std::size_t ch = f.input_channels;
    for (std::size_t l = 0; l < f.filters.size(); ++l) {
        if (f.filters[l].in_channels() != ch)
            throw ShapeError("CnnFunction layer " + std::to_string(l) + ": filter " + f.filters[l].dims_str() +
                             " after " + std::to_string(ch) + " channels");
        ch = f.filters[l].out_channels();
        if (f.biases[l].rows() != f.input_dim || f.biases[l].cols() != ch)
            throw ShapeError("CnnFunction layer " + std::to_string(l) + ": bias " +
                             shape_str(f.biases[l].rows(), f.biases[l].cols()) + " expected " +
                             shape_str(f.input_dim, ch));
    }
    if (f.fc_weight.rows() != f.input_dim || f.fc_weight.cols() != ch)
        throw ShapeError("CnnFunction: fc " + shape_str(f.fc_weight.rows(), f.fc_weight.cols()) + " expected " +
                         shape_str(f.input_dim, ch));
    if (f.first_row_only && !fc_first_row_only(f.fc_weight))
        throw ShapeError("CnnFunction: first_row_only set but fc has nonzero rows below the first");
}

inline double cnn_forward(const CnnFunction& f, std::span<const double> x)
{
    if (x.size() != f.input_dim)
        throw ShapeError("cnn_forward: input length " + std::to_string(x.size()) + ", model expects " +
                         std::to_string(f.input_dim));
    Matrix z = pad_input(x, f.input_channels);
    for (std::size_t l = 0; l < f.filters.size(); ++l)
        z = conv_relu_forward(f.filters[l], f.biases[l], z);
    return readout(f.fc_weight, z, f.fc_bias);
}

inline NetClassParams audit_cnn(const CnnFunction& f)
{
    NetClassParams p;
    p.M = 1;
    p.L = f.depth();
    p.J = f.max_channels();
    p.K = f.max_taps();
    p.kappa1 = f.kappa1();
    p.kappa2 = f.kappa2();
    p.first_row_only = fc_first_row_only(f.fc_weight);
    return p;
}

namespace detail {

inline Matrix row_constant(std::size_t rows, const Vector& values)
{
    Matrix m(rows, values.size());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < values.size(); ++j)
            m(i, j) = values[j];
    return m;
}

} // namespace detail

/// Realizes a scalar-output MLP on R^D as a CNN with filter width K.
///
/// A gather stage shifts (x_{i+o})_+ and (x_{i+o})_- into the channels of
/// row 1, widening the window by K-1 per layer; the MLP's hidden layers then
/// act on row 1 through tap-1 filters and its readout becomes the fc row 1.
/// Row 1 reproduces mlp_forward bit for bit. D = 1 is accepted with K = 2.
inline CnnFunction mlp_to_cnn(const MlpModel& mlp, std::size_t k)
{
    validate(mlp);
    const std::size_t d = mlp.input_dim();
    if (mlp.output_dim() != 1)
        throw ShapeError("mlp_to_cnn: MLP must have a scalar output, has " + std::to_string(mlp.output_dim()));
    const bool k_ok = k >= 2 && (k <= d || (d == 1 && k == 2));
    if (!k_ok)
        throw PreconditionError("mlp_to_cnn: filter width K=" + std::to_string(k) + " outside [2, D=" +
                                std::to_string(d) + "]");

    CnnFunction f;
    f.input_dim = d;
    f.input_channels = 1;
    f.first_row_only = true;

    std::size_t reach = std::min(d, k);
    {
        std::vector<FilterEntry> e;
        for (std::uint32_t o = 0; o < reach; ++o) {
            e.push_back({2 * o, o, 0, 1.0});
            e.push_back({2 * o + 1, o, 0, -1.0});
        }
        f.filters.push_back(FilterTensor::from_entries(2 * reach, k, 1, std::move(e)));
        f.biases.emplace_back(d, 2 * reach);
    }
    while (reach < d) {
        const std::size_t next = std::min(d, reach + k - 1);
        std::vector<FilterEntry> e;
        for (std::uint32_t o = 0; o < next; ++o) {
            if (o < reach) {
                e.push_back({2 * o, 0, 2 * o, 1.0});
                e.push_back({2 * o + 1, 0, 2 * o + 1, 1.0});
            } else {
                const auto tap = static_cast<std::uint32_t>(o - (reach - 1));
                const auto src = static_cast<std::uint32_t>(2 * (reach - 1));
                e.push_back({2 * o, tap, src, 1.0});
                e.push_back({2 * o + 1, tap, src + 1, 1.0});
            }
        }
        f.filters.push_back(FilterTensor::from_entries(2 * next, k, 2 * reach, std::move(e)));
        f.biases.emplace_back(d, 2 * next);
        reach = next;
    }

    // Signed read of the gathered pairs: column 2j is (x_j)_+, 2j+1 is (x_j)_-.
    auto signed_read = [&](const Matrix& w) {
        Matrix r(w.rows(), 2 * w.cols());
        for (std::size_t i = 0; i < w.rows(); ++i)
            for (std::size_t j = 0; j < w.cols(); ++j) {
                r(i, 2 * j) = w(i, j);
                r(i, 2 * j + 1) = -w(i, j);
            }
        return r;
    };

    const std::size_t layers = mlp.depth();
    for (std::size_t l = 0; l + 1 < layers; ++l) {
        const Matrix w = l == 0 ? signed_read(mlp.weights[0]) : mlp.weights[l];
        std::vector<FilterEntry> e;
        for (std::uint32_t i = 0; i < w.rows(); ++i)
            for (std::uint32_t j = 0; j < w.cols(); ++j)
                if (w(i, j) != 0.0)
                    e.push_back({i, 0, j, w(i, j)});
        f.filters.push_back(FilterTensor::from_entries(w.rows(), k, w.cols(), std::move(e)));
        f.biases.push_back(detail::row_constant(d, mlp.biases[l]));
    }
    const Matrix last = layers == 1 ? signed_read(mlp.weights[0]) : mlp.weights.back();
    f.fc_weight = Matrix(d, last.cols());
    for (std::size_t j = 0; j < last.cols(); ++j)
        f.fc_weight(0, j) = last(0, j);
    f.fc_bias = mlp.biases.back()[0];
    validate(f);
    return f;
}

inline CnnFunction mlp_to_cnn(const ScalarNet& net, std::size_t k) { return mlp_to_cnn(net.mlp, k); }

/// f2 o f1 for f1: R^D -> R and f2: R -> R, both reading only row 1.
///
/// f1's readout a.h + c is folded into f2's first layer; f2's taps beyond
/// the first read past its single row and are dropped. Depth is L1 + L2.
inline CnnFunction compose_cnn(const CnnFunction& f1, const CnnFunction& f2)
{
    if (!f1.first_row_only || !f2.first_row_only)
        throw PreconditionError("compose_cnn: both operands must be flagged first_row_only");
    if (f2.input_dim != 1 || f2.input_channels != 1)
        throw ShapeError("compose_cnn: outer network must map R -> R (one row, one channel), has D=" +
                         std::to_string(f2.input_dim));
    validate(f1);
    validate(f2);
    const std::size_t d = f1.input_dim;
    CnnFunction r = f1;
    r.first_row_only = true;
    const std::size_t c1 = f1.output_channels();

    if (f2.filters.empty()) {
        const double w = f2.fc_weight(0, 0);
        for (double& v : r.fc_weight.data())
            v *= w;
        r.fc_bias = w * f1.fc_bias + f2.fc_bias;
        return r;
    }

    auto tap0 = [](const FilterTensor& t, std::vector<FilterEntry>& out) {
        for (const auto& e : t.entries())
            if (e.tap == 0)
                out.push_back(e);
    };

    {
        const FilterTensor& w2 = f2.filters[0];
        std::vector<FilterEntry> e;
        Vector bias(w2.out_channels());
        for (std::uint32_t j = 0; j < w2.out_channels(); ++j) {
            const double wj = w2.at(j, 0, 0);
            bias[j] = f2.biases[0](0, j) + wj * f1.fc_bias;
            if (wj == 0.0)
                continue;
            for (std::uint32_t u = 0; u < c1; ++u) {
                const double a = f1.fc_weight(0, u);
                if (a != 0.0)
                    e.push_back({j, 0, u, wj * a});
            }
        }
        r.filters.push_back(FilterTensor::from_entries(w2.out_channels(), w2.taps(), c1, std::move(e)));
        r.biases.push_back(detail::row_constant(d, bias));
    }
    for (std::size_t l = 1; l < f2.filters.size(); ++l) {
        const FilterTensor& w = f2.filters[l];
        std::vector<FilterEntry> e;
        tap0(w, e);
        r.filters.push_back(FilterTensor::from_entries(w.out_channels(), w.taps(), w.in_channels(), std::move(e)));
        const auto row = f2.biases[l].row(0);
        r.biases.push_back(detail::row_constant(d, Vector(row.begin(), row.end())));
    }
    r.fc_weight = Matrix(d, f2.output_channels());
    for (std::size_t j = 0; j < f2.output_channels(); ++j)
        r.fc_weight(0, j) = f2.fc_weight(0, j);
    r.fc_bias = f2.fc_bias;
    validate(r);
    return r;
}

/// Appends identity layers; the last hidden state is nonnegative so ReLU passes it unchanged.
inline CnnFunction pad_depth(CnnFunction f, std::size_t depth)
{
    if (f.depth() > depth)
        throw ShapeError("pad_depth: network already has " + std::to_string(f.depth()) + " layers");
    if (f.depth() < depth && f.filters.empty())
        throw PreconditionError("pad_depth: cannot pad a network without conv layers");
    while (f.depth() < depth) {
        const std::size_t c = f.output_channels();
        std::vector<FilterEntry> e;
        for (std::uint32_t j = 0; j < c; ++j)
            e.push_back({j, 0, j, 1.0});
        f.filters.push_back(FilterTensor::from_entries(c, 1, c, std::move(e)));
        f.biases.emplace_back(f.input_dim, c);
    }
    return f;
}

/// Merges CNNs of equal depth into block-diagonal groups of floor(Jt / J0) members.
///
/// Members of a group share input channel 1; every later layer is the
/// block-diagonal union, the fc layers are concatenated and the biases summed.
inline std::vector<CnnFunction> parallel_sum(const std::vector<CnnFunction>& cnns, std::size_t group_width)
{
    if (cnns.empty())
        return {};
    std::size_t j0 = 0;
    const std::size_t depth = cnns.front().depth();
    const std::size_t d = cnns.front().input_dim;
    for (const auto& f : cnns) {
        validate(f);
        if (f.depth() != depth || f.input_dim != d || f.input_channels != 1)
            throw PreconditionError("parallel_sum: networks must share depth, input dimension and input channel");
        j0 = std::max(j0, f.max_channels());
    }
    if (group_width < j0)
        throw PreconditionError("parallel_sum: group width " + std::to_string(group_width) +
                                " below member width J0=" + std::to_string(j0));
    const std::size_t per_group = group_width / j0;

    std::vector<CnnFunction> out;
    for (std::size_t start = 0; start < cnns.size(); start += per_group) {
        const std::size_t stop = std::min(cnns.size(), start + per_group);
        CnnFunction g;
        g.input_dim = d;
        g.input_channels = 1;
        g.first_row_only = true;
        for (std::size_t i = start; i < stop; ++i)
            g.first_row_only = g.first_row_only && cnns[i].first_row_only;

        for (std::size_t l = 0; l < depth; ++l) {
            std::size_t out_c = 0;
            std::size_t in_c = 0;
            std::size_t taps = 1;
            for (std::size_t i = start; i < stop; ++i) {
                out_c += cnns[i].filters[l].out_channels();
                in_c += cnns[i].filters[l].in_channels();
                taps = std::max(taps, cnns[i].filters[l].taps());
            }
            if (l == 0)
                in_c = 1;
            std::vector<FilterEntry> e;
            Matrix bias(d, out_c);
            std::uint32_t o0 = 0;
            std::uint32_t i0 = 0;
            for (std::size_t i = start; i < stop; ++i) {
                const auto& w = cnns[i].filters[l];
                for (const auto& x : w.entries())
                    e.push_back({x.out + o0, x.tap, x.in + i0, x.value});
                const auto& b = cnns[i].biases[l];
                for (std::size_t r = 0; r < d; ++r)
                    for (std::size_t c = 0; c < b.cols(); ++c)
                        bias(r, o0 + c) = b(r, c);
                o0 += static_cast<std::uint32_t>(w.out_channels());
                if (l > 0)
                    i0 += static_cast<std::uint32_t>(w.in_channels());
            }
            g.filters.push_back(FilterTensor::from_entries(out_c, taps, in_c, std::move(e)));
            g.biases.push_back(std::move(bias));
        }

        if (depth == 0) {
            g.fc_weight = Matrix(d, 1);
            for (std::size_t i = start; i < stop; ++i)
                for (std::size_t r = 0; r < d; ++r)
                    g.fc_weight(r, 0) += cnns[i].fc_weight(r, 0);
        } else {
            std::size_t cols = 0;
            for (std::size_t i = start; i < stop; ++i)
                cols += cnns[i].output_channels();
            g.fc_weight = Matrix(d, cols);
            std::size_t c0 = 0;
            for (std::size_t i = start; i < stop; ++i) {
                const auto& w = cnns[i].fc_weight;
                for (std::size_t r = 0; r < d; ++r)
                    for (std::size_t c = 0; c < w.cols(); ++c)
                        g.fc_weight(r, c0 + c) = w(r, c);
                c0 += w.cols();
            }
        }
        g.fc_bias = 0.0;
        for (std::size_t i = start; i < stop; ++i)
            g.fc_bias += cnns[i].fc_bias;
        validate(g);
        out.push_back(std::move(g));
    }
    return out;
}

/// Channels of the assembled ResNet: input, accumulator (+), accumulator (-).
inline constexpr std::size_t kAssembleChannels = 3;

/// One residual block per CNN; the ResNet computes the sum of the CNNs.
///
/// Block i runs CNN i on channel 1 and ends with a width-1 layer writing
/// (f_i/s)_+ to channel 2 and (f_i/s)_- to channel 3, where s is the largest
/// fc magnitude among the inputs; the shortcut accumulates them and the fc
/// layer reads s * (acc_+ - acc_-) from row 1. Block depth is L + 1.
inline ConvResNetModel assemble_resnet(const std::vector<CnnFunction>& cnns)
{
    if (cnns.empty())
        throw PreconditionError("assemble_resnet: no networks");
    const std::size_t d = cnns.front().input_dim;
    const std::size_t depth = cnns.front().depth();
    double s = 0.0;
    for (const auto& f : cnns) {
        validate(f);
        if (!f.first_row_only)
            throw PreconditionError("assemble_resnet: every network must be flagged first_row_only");
        if (f.input_dim != d || f.depth() != depth || f.input_channels != 1)
            throw PreconditionError("assemble_resnet: heterogeneous architectures (D, depth or input channels differ)");
        s = std::max(s, f.kappa2());
    }
    if (s == 0.0)
        s = 1.0;

    ConvResNetModel net;
    net.input_dim = d;
    net.channels = kAssembleChannels;
    net.first_row_only = true;
    for (const auto& f : cnns) {
        ResidualBlockSpec b;
        for (std::size_t l = 0; l < f.depth(); ++l) {
            const auto& w = f.filters[l];
            if (l == 0) {
                std::vector<FilterEntry> e(w.entries().begin(), w.entries().end());
                b.filters.push_back(
                    FilterTensor::from_entries(w.out_channels(), w.taps(), kAssembleChannels, std::move(e)));
            } else {
                b.filters.push_back(w);
            }
            b.biases.push_back(f.biases[l]);
        }
        const std::size_t c = f.depth() == 0 ? kAssembleChannels : f.output_channels();
        std::vector<FilterEntry> e;
        for (std::uint32_t u = 0; u < f.fc_weight.cols(); ++u) {
            const double a = f.fc_weight(0, u) / s;
            if (a != 0.0) {
                e.push_back({1, 0, u, a});
                e.push_back({2, 0, u, -a});
            }
        }
        b.filters.push_back(FilterTensor::from_entries(kAssembleChannels, 1, c, std::move(e)));
        Matrix bias(d, kAssembleChannels);
        const double cb = f.fc_bias / s;
        for (std::size_t r = 0; r < d; ++r) {
            bias(r, 1) = cb;
            bias(r, 2) = -cb;
        }
        b.biases.push_back(std::move(bias));
        net.blocks.push_back(std::move(b));
    }
    net.fc_weight = Matrix(d, kAssembleChannels);
    net.fc_weight(0, 1) = s;
    net.fc_weight(0, 2) = -s;
    net.fc_bias = 0.0;
    validate(net);
    return net;
}

inline json to_json(const CnnFunction& f)
{
    json blocks = json::array();
    blocks.push_back(detail::layers_to_json(f.filters, f.biases));
    return json{{"version", kFormatVersion},
                {"kind", "cnn"},
                {"D", f.input_dim},
                {"C", f.input_channels},
                {"blocks", blocks},
                {"fc", {{"weight", detail::matrix_to_json(f.fc_weight)}, {"bias", f.fc_bias}}},
                {"first_row_only", f.first_row_only}};
}

inline CnnFunction cnn_from_json(const json& j)
{
    return detail::guarded([&] {
        detail::check_version(j);
        if (!j.contains("kind") || j.at("kind") != "cnn")
            throw SerializationError("document is not a cnn (missing \"kind\":\"cnn\")");
        CnnFunction f;
        f.input_dim = j.at("D").get<std::size_t>();
        f.input_channels = j.at("C").get<std::size_t>();
        const auto& blocks = j.at("blocks");
        if (blocks.size() != 1)
            throw SerializationError("cnn document must hold exactly one layer stack");
        detail::layers_from_json(blocks.at(0), f.filters, f.biases);
        f.fc_weight = detail::matrix_from_json(j.at("fc").at("weight"));
        f.fc_bias = j.at("fc").at("bias").get<double>();
        f.first_row_only = j.at("first_row_only").get<bool>();
        validate(f);
        return f;
    });
}

} // namespace sobolev_forge
