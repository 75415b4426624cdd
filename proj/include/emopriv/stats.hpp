#pragma once

#include <cstddef>
#include <vector>

namespace emopriv::stats {

struct ConfusionMatrix {
    size_t k = 0;
    std::vector<long> counts;  // k x k, rows = true class

    explicit ConfusionMatrix(size_t classes)
        : k(classes), counts(classes * classes, 0) {}
    long& at(size_t true_cls, size_t pred_cls) { return counts[true_cls * k + pred_cls]; }
    long at(size_t true_cls, size_t pred_cls) const { return counts[true_cls * k + pred_cls]; }
    long total() const;
};

ConfusionMatrix confusion(const std::vector<int>& preds,
                          const std::vector<int>& labels, size_t k);

// Mean over classes of per-class recall. Every true class must be present.
double uar(const std::vector<int>& preds, const std::vector<int>& labels,
           size_t k);

// Tolerant variant: averages recall over the classes that appear in
// `labels`; NaN when labels are empty. For small validation folds where a
// class may be structurally absent.
double uar_present(const std::vector<int>& preds, const std::vector<int>& labels,
                   size_t k);

// UAR restricted to each of two groups (e.g. male / female).
std::pair<double, double> per_group_uar(const std::vector<int>& preds,
                                        const std::vector<int>& labels,
                                        const std::vector<int>& groups,
                                        size_t k);

// Tolerant variant built on uar_present; an empty group yields NaN.
std::pair<double, double> per_group_uar_present(const std::vector<int>& preds,
                                                const std::vector<int>& labels,
                                                const std::vector<int>& groups,
                                                size_t k);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;       // two-sided
    bool degenerate = false;  // zero-variance differences
};

// Paired two-sided t-test on differences a - b, df = n - 1.
TTestResult paired_t_test(const std::vector<double>& a,
                          const std::vector<double>& b);

struct SignificanceResult {
    std::vector<double> raw_p;
    std::vector<double> adjusted_p;
    std::vector<bool> reject;  // BH step-up at alpha
    double alpha = 0.05;
};

SignificanceResult bh_adjust(const std::vector<double>& pvals,
                             double alpha = 0.05);

// Regularized incomplete beta I_x(a, b); exposed for cross-checking.
double incomplete_beta(double a, double b, double x);

// CDF of Student's t with `df` degrees of freedom.
double student_t_cdf(double t, double df);

}  // namespace emopriv::stats
