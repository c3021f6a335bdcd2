#pragma once

// Test-side oracles, independent of the library implementations they check.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace oracle {

// |a-b| relative to the larger magnitude, floored at 1 so near-zero pairs
// compare absolutely.
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central finite differences of a scalar function of a flat parameter vector.
inline std::vector<double> fd_grad(const std::vector<double>& x,
                                   const std::function<double(const std::vector<double>&)>& f,
                                   double h = 1e-6) {
    std::vector<double> g(x.size());
    std::vector<double> xp = x;
    for (size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        xp[i] = v + h;
        const double fp = f(xp);
        xp[i] = v - h;
        const double fm = f(xp);
        xp[i] = v;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
    return worst;
}

// Pearson chi-square statistic for a 2xk contingency table of counts,
// expectations from the pooled marginals. Cells are Laplace-smoothed by 1
// so empty columns stay finite.
inline double chi_square_2xk(const std::vector<double>& a, const std::vector<double>& b) {
    double stat = 0.0, ta = 0.0, tb = 0.0;
    std::vector<double> sa = a, sb = b;
    for (auto& v : sa) v += 1.0;
    for (auto& v : sb) v += 1.0;
    for (size_t i = 0; i < sa.size(); ++i) {
        ta += sa[i];
        tb += sb[i];
    }
    for (size_t i = 0; i < sa.size(); ++i) {
        const double col = sa[i] + sb[i];
        const double ea = col * ta / (ta + tb);
        const double eb = col * tb / (ta + tb);
        stat += (sa[i] - ea) * (sa[i] - ea) / ea + (sb[i] - eb) * (sb[i] - eb) / eb;
    }
    return stat;
}

// Ordinary least squares slope of y on x.
inline double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace oracle
