#pragma once

#include <cmath>
#include <vector>

#include "sobolev_forge/errors.hpp"

namespace sobolev_forge {

/// Least-squares line log(err) = intercept + slope log(N).
struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;

    double constant() const { return std::exp(intercept); }
    double predict(double n) const { return constant() * std::pow(n, slope); }
};

inline RateFit fit_loglog(const std::vector<double>& n, const std::vector<double>& err)
{
    if (n.size() != err.size() || n.size() < 2)
        throw PreconditionError("fit_loglog: need at least two (N, error) pairs of equal length");
    const double k = static_cast<double>(n.size());
    double mx = 0.0, my = 0.0;
    std::vector<double> lx(n.size()), ly(n.size());
    for (std::size_t i = 0; i < n.size(); ++i) {
        if (!(n[i] > 0.0 && err[i] > 0.0))
            throw PreconditionError("fit_loglog: N and errors must be positive");
        lx[i] = std::log(n[i]);
        ly[i] = std::log(err[i]);
        mx += lx[i];
        my += ly[i];
    }
    mx /= k;
    my /= k;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    if (sxx == 0.0)
        throw PreconditionError("fit_loglog: N values must not all be equal");
    RateFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return f;
}

} // namespace sobolev_forge
