#pragma once

// ScalarNet: an affine+ReLU layer stack with build metadata, plus the
// combinators the constructions are assembled from.
//
// `chain` materializes the inner output y as the hidden pair (ReLU(y), ReLU(-y))
// before the outer net reads it, so chain(g, f)(x) == g(f(x)) bit for bit.
// `compose` fuses the inner readout into the outer first layer instead; it is
// one layer shallower but reassociates the arithmetic.

#include <string>
#include <utility>
#include <vector>

#include "sobolev_forge/net_core.hpp"

namespace sobolev_forge {

struct ScalarNet {
    MlpModel mlp;
    double accuracy = 0.0;
    double box_bound = 0.0;
    std::string label;

    std::size_t input_dim() const { return mlp.input_dim(); }
    std::size_t output_dim() const { return mlp.output_dim(); }
    std::size_t depth() const { return mlp.depth(); }
    std::size_t width() const { return mlp.max_width(); }

    Vector forward(std::span<const double> x) const { return mlp_forward(mlp, x); }
    double operator()(std::span<const double> x) const { return mlp_forward(mlp, x).at(0); }
    double operator()(double x) const { return (*this)(std::span<const double>(&x, 1)); }
};

inline ScalarNet affine_net(Matrix w, Vector b, std::string label = "affine")
{
    if (b.size() != w.rows())
        throw ShapeError("affine_net: bias length " + std::to_string(b.size()) + " for weight " +
                         shape_str(w.rows(), w.cols()));
    ScalarNet n;
    n.mlp.weights.push_back(std::move(w));
    n.mlp.biases.push_back(std::move(b));
    n.label = std::move(label);
    return n;
}

inline ScalarNet identity_net(std::size_t k)
{
    Matrix w(k, k);
    for (std::size_t i = 0; i < k; ++i)
        w(i, i) = 1.0;
    return affine_net(std::move(w), Vector(k, 0.0), "identity");
}

/// x -> x[axis] for an n-dimensional input.
inline ScalarNet select_net(std::size_t n, std::size_t axis)
{
    if (axis >= n)
        throw ShapeError("select_net: axis " + std::to_string(axis) + " of " + std::to_string(n));
    Matrix w(1, n);
    w(0, axis) = 1.0;
    return affine_net(std::move(w), Vector{0.0}, "select");
}

/// outer o inner with the inner readout folded into the outer first layer.
inline ScalarNet compose(const ScalarNet& outer, const ScalarNet& inner)
{
    if (outer.input_dim() != inner.output_dim())
        throw ShapeError("compose: outer expects " + std::to_string(outer.input_dim()) + " inputs, inner gives " +
                         std::to_string(inner.output_dim()));
    ScalarNet r = inner;
    const Matrix& wi = inner.mlp.weights.back();
    const Vector& bi = inner.mlp.biases.back();
    const Matrix& wo = outer.mlp.weights.front();
    const Vector& bo = outer.mlp.biases.front();
    Matrix w(wo.rows(), wi.cols());
    Vector b(wo.rows());
    for (std::size_t i = 0; i < wo.rows(); ++i) {
        for (std::size_t j = 0; j < wi.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < wo.cols(); ++k)
                s += wo(i, k) * wi(k, j);
            w(i, j) = s;
        }
        double s = 0.0;
        for (std::size_t k = 0; k < wo.cols(); ++k)
            s += wo(i, k) * bi[k];
        b[i] = s + bo[i];
    }
    r.mlp.weights.back() = std::move(w);
    r.mlp.biases.back() = std::move(b);
    for (std::size_t l = 1; l < outer.depth(); ++l) {
        r.mlp.weights.push_back(outer.mlp.weights[l]);
        r.mlp.biases.push_back(outer.mlp.biases[l]);
    }
    r.accuracy = outer.accuracy;
    r.box_bound = outer.box_bound;
    r.label = outer.label + "*" + inner.label;
    return r;
}

/// outer o inner, exact: depth is the sum of both depths.
inline ScalarNet chain(const ScalarNet& outer, const ScalarNet& inner)
{
    if (outer.input_dim() != inner.output_dim())
        throw ShapeError("chain: outer expects " + std::to_string(outer.input_dim()) + " inputs, inner gives " +
                         std::to_string(inner.output_dim()));
    const std::size_t k = inner.output_dim();
    ScalarNet r = inner;
    const Matrix& wi = inner.mlp.weights.back();
    const Vector& bi = inner.mlp.biases.back();
    Matrix split(2 * k, wi.cols());
    Vector split_b(2 * k);
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t c = 0; c < wi.cols(); ++c) {
            split(2 * j, c) = wi(j, c);
            split(2 * j + 1, c) = -wi(j, c);
        }
        split_b[2 * j] = bi[j];
        split_b[2 * j + 1] = -bi[j];
    }
    r.mlp.weights.back() = std::move(split);
    r.mlp.biases.back() = std::move(split_b);

    const Matrix& wo = outer.mlp.weights.front();
    Matrix read(wo.rows(), 2 * k);
    for (std::size_t i = 0; i < wo.rows(); ++i)
        for (std::size_t j = 0; j < k; ++j) {
            read(i, 2 * j) = wo(i, j);
            read(i, 2 * j + 1) = -wo(i, j);
        }
    r.mlp.weights.push_back(std::move(read));
    r.mlp.biases.push_back(outer.mlp.biases.front());
    for (std::size_t l = 1; l < outer.depth(); ++l) {
        r.mlp.weights.push_back(outer.mlp.weights[l]);
        r.mlp.biases.push_back(outer.mlp.biases[l]);
    }
    r.accuracy = outer.accuracy;
    r.box_bound = outer.box_bound;
    r.label = outer.label + "<" + inner.label;
    return r;
}

/// Appends exact identity stages until the net has `depth` layers.
inline ScalarNet pad_to_depth(ScalarNet net, std::size_t depth)
{
    if (net.depth() > depth)
        throw ShapeError("pad_to_depth: net already has " + std::to_string(net.depth()) + " layers");
    const auto label = net.label;
    while (net.depth() < depth)
        net = chain(identity_net(net.output_dim()), net);
    net.label = label;
    return net;
}

/// Same input, concatenated outputs; shallower members are padded exactly.
inline ScalarNet stack(const std::vector<ScalarNet>& nets)
{
    if (nets.empty())
        throw ShapeError("stack: no nets");
    const std::size_t n_in = nets.front().input_dim();
    std::size_t depth = 0;
    for (const auto& n : nets) {
        if (n.input_dim() != n_in)
            throw ShapeError("stack: input dims differ");
        depth = std::max(depth, n.depth());
    }
    std::vector<ScalarNet> padded;
    padded.reserve(nets.size());
    for (const auto& n : nets)
        padded.push_back(pad_to_depth(n, depth));

    ScalarNet r;
    r.label = "stack";
    for (std::size_t l = 0; l < depth; ++l) {
        std::size_t rows = 0;
        std::size_t cols = 0;
        for (const auto& n : padded) {
            rows += n.mlp.weights[l].rows();
            cols += n.mlp.weights[l].cols();
        }
        if (l == 0)
            cols = n_in;
        Matrix w(rows, cols);
        Vector b;
        b.reserve(rows);
        std::size_t r0 = 0;
        std::size_t c0 = 0;
        for (const auto& n : padded) {
            const Matrix& src = n.mlp.weights[l];
            for (std::size_t i = 0; i < src.rows(); ++i)
                for (std::size_t j = 0; j < src.cols(); ++j)
                    w(r0 + i, c0 + j) = src(i, j);
            b.insert(b.end(), n.mlp.biases[l].begin(), n.mlp.biases[l].end());
            r0 += src.rows();
            if (l > 0)
                c0 += src.cols();
        }
        r.mlp.weights.push_back(std::move(w));
        r.mlp.biases.push_back(std::move(b));
    }
    for (const auto& n : nets) {
        r.accuracy = std::max(r.accuracy, n.accuracy);
        r.box_bound = std::max(r.box_bound, n.box_bound);
    }
    return r;
}

/// Multiplies the readout layer by c.
inline ScalarNet scale_output(ScalarNet net, double c)
{
    auto& w = net.mlp.weights.back();
    for (double& v : w.data())
        v *= c;
    for (double& v : net.mlp.biases.back())
        v *= c;
    return net;
}

} // namespace sobolev_forge
