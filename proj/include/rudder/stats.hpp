#pragma once

// Learning-time statistics: Wilcoxon signed-rank test, quantiles, and a
// log-normal fit to right-censored learning times.

#include "rudder/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

namespace rudder {

struct WilcoxonResult {
    double statistic = 0.0;  ///< W+, sum of ranks of positive differences
    std::size_t n = 0;       ///< non-zero differences used
    bool exact = false;
    double p_two_sided = 1.0;
    double p_greater = 1.0;  ///< H1: x tends to exceed y
    double p_less = 1.0;     ///< H1: x tends to be below y
};

namespace detail {

/// Average ranks of |d| (1-based), ties share the mean rank.
inline std::vector<double> abs_ranks(const std::vector<double>& d, double* tie_term) {
    std::vector<std::size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
    std::vector<double> r(d.size());
    double ties = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && std::abs(d[idx[j + 1]]) == std::abs(d[idx[i]])) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        const double t = static_cast<double>(j - i + 1);
        ties += t * t * t - t;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    if (tie_term) *tie_term = ties;
    return r;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace detail

/// Paired Wilcoxon signed-rank test on x - y. Zero differences are dropped.
/// Exact null distribution (counting sign assignments over doubled ranks, so
/// tied ranks stay integral) for n <= exact_limit; normal approximation with
/// tie and continuity corrections above.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y,
                                           std::size_t exact_limit = 25) {
    if (x.size() != y.size()) {
        throw ConfigError("wilcoxon needs paired samples of equal length");
    }
    std::vector<double> d;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] != y[i]) d.push_back(x[i] - y[i]);
    }
    if (d.empty()) {
        throw ConfigError("wilcoxon is undefined when every difference is zero");
    }
    double tie_term = 0.0;
    const auto ranks = detail::abs_ranks(d, &tie_term);
    WilcoxonResult out;
    out.n = d.size();
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i] > 0) out.statistic += ranks[i];
    }
    const double n = static_cast<double>(out.n);

    if (out.n <= exact_limit) {
        out.exact = true;
        std::vector<std::size_t> r2(ranks.size());
        std::size_t total = 0;
        for (std::size_t i = 0; i < ranks.size(); ++i) {
            r2[i] = static_cast<std::size_t>(std::lround(2.0 * ranks[i]));
            total += r2[i];
        }
        // counts[w] = number of sign assignments with doubled W+ == w
        std::vector<double> counts(total + 1, 0.0);
        counts[0] = 1.0;
        std::size_t reach = 0;
        for (std::size_t r : r2) {
            for (std::size_t w = reach + 1; w-- > 0;) {
                if (counts[w] != 0.0) counts[w + r] += counts[w];
            }
            reach += r;
        }
        const double all = std::ldexp(1.0, static_cast<int>(out.n));
        const auto w_obs = static_cast<std::size_t>(std::lround(2.0 * out.statistic));
        double ge = 0.0;
        double le = 0.0;
        for (std::size_t w = 0; w <= total; ++w) {
            if (w >= w_obs) ge += counts[w];
            if (w <= w_obs) le += counts[w];
        }
        out.p_greater = ge / all;
        out.p_less = le / all;
    } else {
        const double mean = n * (n + 1.0) / 4.0;
        const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
        const double sd = std::sqrt(var);
        out.p_greater = 1.0 - detail::normal_cdf((out.statistic - mean - 0.5) / sd);
        out.p_less = detail::normal_cdf((out.statistic - mean + 0.5) / sd);
    }
    out.p_two_sided = std::min(1.0, 2.0 * std::min(out.p_greater, out.p_less));
    return out;
}

/// Linear-interpolation quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) {
        throw ConfigError("quantile of an empty sample");
    }
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double mean(const std::vector<double>& v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// One learning time; censored runs carry their censoring bound as `episodes`.
struct LearningTime {
    double episodes = 0.0;
    bool censored = false;
};

struct LogNormalFit {
    double median = 0.0;
    double sigma = 0.0;
    std::size_t finished = 0;
    std::size_t censored = 0;
};

/// Log-normal fit to right-censored learning times. The median is the sample
/// median with censored runs ranked above every finished run; sigma maximises
/// the censored likelihood with mu = log(median), by golden-section search.
inline LogNormalFit censored_lognormal_median(const std::vector<LearningTime>& data) {
    LogNormalFit fit;
    std::vector<double> finished;
    std::vector<double> bounds;
    for (const auto& d : data) {
        if (!(d.episodes > 0.0)) throw ConfigError("learning times must be positive");
        (d.censored ? bounds : finished).push_back(d.episodes);
    }
    fit.finished = finished.size();
    fit.censored = bounds.size();
    if (2 * finished.size() <= data.size()) {
        throw ConfigError("median needs more than half of the runs to finish");
    }
    std::sort(finished.begin(), finished.end());
    const std::size_t n = data.size();
    // Order statistics of the combined sample; both middle ones are finished.
    fit.median = n % 2 ? finished[n / 2] : 0.5 * (finished[n / 2 - 1] + finished[n / 2]);
    const double mu = std::log(fit.median);

    double ss = 0.0;
    for (double f : finished) ss += (std::log(f) - mu) * (std::log(f) - mu);
    const double init = std::sqrt(ss / static_cast<double>(finished.size()));

    auto loglik = [&](double sigma) {
        double ll = 0.0;
        for (double f : finished) {
            const double z = (std::log(f) - mu) / sigma;
            ll += -std::log(sigma) - 0.5 * z * z;
        }
        for (double c : bounds) {
            const double z = (std::log(c) - mu) / sigma;
            ll += std::log(std::max(1e-300, 1.0 - detail::normal_cdf(z)));
        }
        return ll;
    };

    double lo = 1e-9;
    double hi = std::max(1.0, 4.0 * init);
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = hi - phi * (hi - lo);
    double b = lo + phi * (hi - lo);
    double fa = loglik(a);
    double fb = loglik(b);
    for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
        if (fa < fb) {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = loglik(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = loglik(a);
        }
    }
    fit.sigma = 0.5 * (lo + hi);
    return fit;
}

// --- aggregate output ---------------------------------------------------------------

struct StatsRow {
    std::string method;
    std::size_t delay = 0;
    double median = 0.0;
    double q40 = 0.0;
    double q60 = 0.0;
    double mean = 0.0;
    double p_vs_rudder = std::numeric_limits<double>::quiet_NaN();
    std::size_t censored = 0;
};

inline void write_stats_header(std::ostream& os) { os << "method,delay,median,q40,q60,p_vs_rudder,mean,censored\n"; }

inline void write_stats_row(std::ostream& os, const StatsRow& r) {
    os << r.method << ',' << r.delay << ',' << r.median << ',' << r.q40 << ',' << r.q60 << ',';
    if (std::isnan(r.p_vs_rudder)) {
        os << "NA";
    } else {
        os << r.p_vs_rudder;
    }
    os << ',' << r.mean << ',' << r.censored << '\n';
}

}  // namespace rudder
