#include "emopriv/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace emopriv::stats {

long ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), 0L);
}

ConfusionMatrix confusion(const std::vector<int>& preds,
                          const std::vector<int>& labels, size_t k) {
    if (preds.size() != labels.size())
        throw std::invalid_argument("confusion: length mismatch");
    ConfusionMatrix cm(k);
    for (size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] < 0 || static_cast<size_t>(labels[i]) >= k ||
            preds[i] < 0 || static_cast<size_t>(preds[i]) >= k)
            throw std::invalid_argument("confusion: class out of range");
        cm.at(labels[i], preds[i])++;
    }
    return cm;
}

double uar(const std::vector<int>& preds, const std::vector<int>& labels,
           size_t k) {
    const ConfusionMatrix cm = confusion(preds, labels, k);
    double total_recall = 0.0;
    for (size_t c = 0; c < k; ++c) {
        long row = 0;
        for (size_t j = 0; j < k; ++j) row += cm.at(c, j);
        if (row == 0)
            throw std::invalid_argument("uar: true class absent from labels");
        total_recall += static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
    }
    return total_recall / static_cast<double>(k);
}

double uar_present(const std::vector<int>& preds, const std::vector<int>& labels,
                   size_t k) {
    const ConfusionMatrix cm = confusion(preds, labels, k);
    double total_recall = 0.0;
    size_t present = 0;
    for (size_t c = 0; c < k; ++c) {
        long row = 0;
        for (size_t j = 0; j < k; ++j) row += cm.at(c, j);
        if (row == 0) continue;
        total_recall += static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
        ++present;
    }
    if (present == 0) return std::numeric_limits<double>::quiet_NaN();
    return total_recall / static_cast<double>(present);
}

std::pair<double, double> per_group_uar(const std::vector<int>& preds,
                                        const std::vector<int>& labels,
                                        const std::vector<int>& groups,
                                        size_t k) {
    if (groups.size() != preds.size())
        throw std::invalid_argument("per_group_uar: length mismatch");
    std::vector<int> p0, l0, p1, l1;
    for (size_t i = 0; i < preds.size(); ++i) {
        if (groups[i] == 0) { p0.push_back(preds[i]); l0.push_back(labels[i]); }
        else { p1.push_back(preds[i]); l1.push_back(labels[i]); }
    }
    if (p0.empty() || p1.empty())
        throw std::invalid_argument("per_group_uar: empty group");
    return {uar(p0, l0, k), uar(p1, l1, k)};
}

std::pair<double, double> per_group_uar_present(const std::vector<int>& preds,
                                                const std::vector<int>& labels,
                                                const std::vector<int>& groups,
                                                size_t k) {
    if (groups.size() != preds.size())
        throw std::invalid_argument("per_group_uar_present: length mismatch");
    std::vector<int> p0, l0, p1, l1;
    for (size_t i = 0; i < preds.size(); ++i) {
        if (groups[i] == 0) { p0.push_back(preds[i]); l0.push_back(labels[i]); }
        else { p1.push_back(preds[i]); l1.push_back(labels[i]); }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {p0.empty() ? nan : uar_present(p0, l0, k),
            p1.empty() ? nan : uar_present(p1, l1, k)};
}

namespace {

// Lentz continued fraction for the incomplete beta function.
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 1e-14, kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (x < 0.0 || x > 1.0)
        throw std::domain_error("incomplete_beta: x outside [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
    if (df <= 0) throw std::domain_error("student_t_cdf: df must be > 0");
    const double x = df / (df + t * t);
    const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, x);
    return t > 0 ? 1.0 - tail : tail;
}

TTestResult paired_t_test(const std::vector<double>& a,
                          const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("paired_t_test: need equal lengths >= 2");
    const size_t n = a.size();
    std::vector<double> d(n);
    for (size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1));

    TTestResult res;
    if (sd == 0.0) {
        res.degenerate = true;
        res.t = mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity() *
                                        (mean > 0 ? 1.0 : -1.0);
        res.p = mean == 0.0 ? 1.0 : 0.0;
        return res;
    }
    res.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    const double df = static_cast<double>(n - 1);
    const double cdf = student_t_cdf(std::fabs(res.t), df);
    res.p = 2.0 * (1.0 - cdf);
    res.p = std::clamp(res.p, 0.0, 1.0);
    return res;
}

SignificanceResult bh_adjust(const std::vector<double>& pvals, double alpha) {
    for (double p : pvals)
        if (p < 0.0 || p > 1.0)
            throw std::domain_error("bh_adjust: p-value outside [0,1]");
    const size_t m = pvals.size();
    SignificanceResult res;
    res.alpha = alpha;
    res.raw_p = pvals;
    res.adjusted_p.assign(m, 1.0);
    res.reject.assign(m, false);
    if (m == 0) return res;

    std::vector<size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t i, size_t j) { return pvals[i] < pvals[j]; });

    // Adjusted p_(i) = min over j >= i of (m/j) p_(j), capped at 1.
    double running = 1.0;
    std::vector<double> adj_sorted(m);
    for (size_t i = m; i-- > 0;) {
        const double v = pvals[order[i]] * static_cast<double>(m) /
                         static_cast<double>(i + 1);
        running = std::min(running, v);
        adj_sorted[i] = std::min(running, 1.0);
    }
    // Step-up rule: reject ranks 1..k with k the largest rank passing its
    // threshold (i/m) * alpha.
    size_t k_max = 0;
    for (size_t i = 0; i < m; ++i)
        if (pvals[order[i]] <= (static_cast<double>(i + 1) / m) * alpha)
            k_max = i + 1;
    for (size_t i = 0; i < m; ++i) {
        res.adjusted_p[order[i]] = adj_sorted[i];
        res.reject[order[i]] = (i < k_max);
    }
    return res;
}

}  // namespace emopriv::stats
