#pragma once

#include "bragg/extraction.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bragg {

struct AllanPoint {
    int tau_runs = 1;
    double tau_seconds = 0.0;
    double deviation = 0.0;  // rad
    double ci_low = 0.0;     // one-sigma chi-square interval
    double ci_high = 0.0;
    int pairs = 0;
    double dof = 0.0;        // equivalent degrees of freedom
};

struct AllanCurve {
    std::vector<AllanPoint> points;
    bool overlapping = false;
    std::vector<std::string> warnings;  // requested taus that were skipped
};

struct AllanOptions {
    // Overlapping estimator. The default is the plain two-sample variance of
    // consecutive non-overlapping block means.
    bool overlapping = false;
    double confidence = 0.682689492137086;  // one sigma
};

// 1-2-5 sequence of taus (in runs) usable for a series.
[[nodiscard]] std::vector<int> default_taus(const PhaseSeries& series);

// Allan deviation at each tau (in runs). Taus that are not a multiple of
// runs_per_sample or need more than half the series are omitted with a warning.
[[nodiscard]] AllanCurve allan_deviation(const PhaseSeries& series, std::span<const int> taus,
                                         const AllanOptions& options = {});
[[nodiscard]] AllanCurve allan_deviation(const PhaseSeries& series, const AllanOptions& options = {});

// Columns: tau_runs,tau_seconds,adev_rad,ci_low,ci_high,pairs
void write_allan_csv(std::ostream& out, const AllanCurve& curve);

struct NoiseSummary {
    double slope = 0.0;
    double slope_sigma = 0.0;     // one sigma
    double sigma_at_1_run = 0.0;  // rad, fit intercept at tau = 1 run
    double sigma_ci_low = 0.0;
    double sigma_ci_high = 0.0;
    // sigma(1 run) * sqrt(duty cycle), rad / sqrt(Hz)
    double noise_density = 0.0;
    double density_ci_low = 0.0;
    double density_ci_high = 0.0;
    double duty_cycle = 0.0;
    int taus_used = 0;
};

// Weighted least squares of log sigma on log tau over [tau_min, tau_max]
// (runs). Each log deviation is corrected for its chi-square bias and
// weighted by its inverse variance, both from the point's degrees of
// freedom. The sigma and density intervals are two-sided at `confidence`.
// Zero deviations are left out; fewer than 3 usable taus is a ConfigError.
[[nodiscard]] NoiseSummary fit_noise_slope(const AllanCurve& curve, double duty_cycle, int tau_min = 1,
                                           int tau_max = 1 << 30, double confidence = 0.95);

struct RatioRow {
    int tau_runs = 0;
    double deviation_a = 0.0;
    double deviation_b = 0.0;
    double ratio = 0.0;  // b / a
    double ci_low = 0.0;
    double ci_high = 0.0;
    bool contains_one = false;
};

struct SchemeComparison {
    std::vector<RatioRow> rows;
    int taus_tested = 0;
    bool equivalent = false;
    double per_tau_confidence = 0.0;
};

struct CompareOptions {
    int max_tau = 10;
    // Family-wise level across the tested taus (Bonferroni split).
    double family_confidence = 0.95;
};

// Ratio of Allan deviations b/a at every common tau, with F-distribution
// intervals. Equivalent when every interval with tau <= max_tau contains 1.
[[nodiscard]] SchemeComparison compare_schemes(const PhaseSeries& a, const PhaseSeries& b,
                                               const CompareOptions& options = {});

}  // namespace bragg
