#include "bragg/stability.hpp"

#include "bragg/errors.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>

namespace bragg {

namespace {

// Equivalent degrees of freedom for white noise. Adjacent differences of
// block means share a block, so the non-overlapping estimator carries about
// 2/3 of a degree of freedom per pair. The overlapping form follows the
// white-FM expression of Howe, Allan and Barnes.
double white_noise_dof(std::size_t samples, std::size_t block, bool overlapping, std::size_t pairs)
{
    if (!overlapping) {
        const double m = static_cast<double>(samples / block);
        return std::max(1.0, 2.0 * (m - 1.0) * (m - 1.0) / (3.0 * m - 4.0));
    }
    const double n = static_cast<double>(samples);
    const double m = static_cast<double>(block);
    const double edf = (3.0 * (n - 1.0) / (2.0 * m) - 2.0 * (n - 2.0) / n) * 4.0 * m * m / (4.0 * m * m + 5.0);
    return std::clamp(edf, 1.0, static_cast<double>(pairs));
}

std::vector<double> block_means(const std::vector<double>& x, std::size_t block, std::size_t stride)
{
    std::vector<double> out;
    for (std::size_t start = 0; start + block <= x.size(); start += stride) {
        double sum = 0.0;
        for (std::size_t i = start; i < start + block; ++i) {
            sum += x[i];
        }
        out.push_back(sum / static_cast<double>(block));
    }
    return out;
}

}  // namespace

std::vector<int> default_taus(const PhaseSeries& series)
{
    std::vector<int> taus;
    const std::size_t half = series.size() / 2;
    for (std::size_t decade = 1; decade <= half; decade *= 10) {
        for (std::size_t mult : {1, 2, 5}) {
            const std::size_t samples = decade * mult;
            if (samples <= half) {
                taus.push_back(static_cast<int>(samples) * series.runs_per_sample);
            }
        }
    }
    return taus;
}

AllanCurve allan_deviation(const PhaseSeries& series, const AllanOptions& options)
{
    const std::vector<int> taus = default_taus(series);
    return allan_deviation(series, taus, options);
}

AllanCurve allan_deviation(const PhaseSeries& series, std::span<const int> taus, const AllanOptions& options)
{
    series.validate();
    if (!(options.confidence > 0.0 && options.confidence < 1.0)) {
        throw ConfigError("confidence level must lie in (0, 1)");
    }
    const std::vector<double> x = series.phases();
    const std::set<int> ordered(taus.begin(), taus.end());

    AllanCurve curve;
    curve.overlapping = options.overlapping;
    const double alpha = 1.0 - options.confidence;

    for (int tau : ordered) {
        if (tau < 1 || tau % series.runs_per_sample != 0) {
            curve.warnings.push_back("tau " + std::to_string(tau) + " runs is not a multiple of "
                                     + std::to_string(series.runs_per_sample) + " runs per sample; omitted");
            continue;
        }
        const auto block = static_cast<std::size_t>(tau / series.runs_per_sample);
        if (x.size() < 2 * block) {
            curve.warnings.push_back("tau " + std::to_string(tau) + " runs needs at least "
                                     + std::to_string(2 * block) + " samples; omitted");
            continue;
        }

        long double sum = 0.0L;
        std::size_t pairs = 0;
        if (options.overlapping) {
            const std::vector<double> means = block_means(x, block, 1);
            for (std::size_t j = 0; j + block < means.size(); ++j) {
                const long double d = means[j + block] - means[j];
                sum += d * d;
                ++pairs;
            }
        } else {
            const std::vector<double> means = block_means(x, block, block);
            for (std::size_t j = 0; j + 1 < means.size(); ++j) {
                const long double d = means[j + 1] - means[j];
                sum += d * d;
                ++pairs;
            }
        }

        AllanPoint p;
        p.tau_runs = tau;
        p.tau_seconds = tau * series.duty_cycle;
        p.pairs = static_cast<int>(pairs);
        p.deviation = static_cast<double>(std::sqrt(sum / (2.0L * static_cast<long double>(pairs))));
        p.dof = white_noise_dof(x.size(), block, options.overlapping, pairs);

        const boost::math::chi_squared chi2(p.dof);
        const double var = p.deviation * p.deviation;
        p.ci_low = std::sqrt(p.dof * var / boost::math::quantile(chi2, 1.0 - 0.5 * alpha));
        p.ci_high = std::sqrt(p.dof * var / boost::math::quantile(chi2, 0.5 * alpha));
        curve.points.push_back(p);
    }
    return curve;
}

void write_allan_csv(std::ostream& out, const AllanCurve& curve)
{
    out << "tau_runs,tau_seconds,adev_rad,ci_low,ci_high,pairs\n";
    for (const auto& p : curve.points) {
        out << p.tau_runs << ',' << format_double(p.tau_seconds) << ',' << format_double(p.deviation) << ','
            << format_double(p.ci_low) << ',' << format_double(p.ci_high) << ',' << p.pairs << '\n';
    }
}

NoiseSummary fit_noise_slope(const AllanCurve& curve, double duty_cycle, int tau_min, int tau_max,
                             double confidence)
{
    if (!(duty_cycle > 0.0)) {
        throw ConfigError("duty cycle must be positive");
    }
    if (!(confidence > 0.0 && confidence < 1.0)) {
        throw ConfigError("confidence level must lie in (0, 1)");
    }
    double sw = 0.0;
    double swx = 0.0;
    double swxx = 0.0;
    double swy = 0.0;
    double swxy = 0.0;
    int used = 0;
    for (const auto& p : curve.points) {
        if (p.tau_runs < tau_min || p.tau_runs > tau_max) {
            continue;
        }
        if (!(p.deviation > 0.0) || !std::isfinite(p.deviation)) {
            continue;
        }
        // s^2 nu / sigma^2 ~ chi2(nu): log s sits below log sigma by
        // (digamma(nu/2) - log(nu/2)) / 2 with variance trigamma(nu/2) / 4.
        const double half = 0.5 * p.dof;
        const double xv = std::log(static_cast<double>(p.tau_runs));
        const double yv = std::log(p.deviation) - 0.5 * (boost::math::digamma(half) - std::log(half));
        const double w = 4.0 / boost::math::trigamma(half);
        sw += w;
        swx += w * xv;
        swxx += w * xv * xv;
        swy += w * yv;
        swxy += w * xv * yv;
        ++used;
    }
    if (used < 3) {
        throw ConfigError("noise slope fit needs at least 3 nonzero Allan points in range");
    }
    const double det = sw * swxx - swx * swx;
    if (!(det > 0.0)) {
        throw NumericalError("noise slope fit is singular");
    }
    NoiseSummary s;
    const double intercept = (swxx * swy - swx * swxy) / det;
    s.slope = (sw * swxy - swx * swy) / det;
    s.slope_sigma = std::sqrt(sw / det);
    const double z = boost::math::quantile(boost::math::normal(), 0.5 * (1.0 + confidence));
    const double intercept_sigma = z * std::sqrt(swxx / det);

    s.duty_cycle = duty_cycle;
    s.taus_used = used;
    s.sigma_at_1_run = std::exp(intercept);
    s.sigma_ci_low = std::exp(intercept - intercept_sigma);
    s.sigma_ci_high = std::exp(intercept + intercept_sigma);
    const double root = std::sqrt(duty_cycle);
    s.noise_density = s.sigma_at_1_run * root;
    s.density_ci_low = s.sigma_ci_low * root;
    s.density_ci_high = s.sigma_ci_high * root;
    return s;
}

SchemeComparison compare_schemes(const PhaseSeries& a, const PhaseSeries& b, const CompareOptions& options)
{
    if (a.run_count() < 100 || b.run_count() < 100) {
        throw ConfigError("scheme comparison needs at least 100 runs per series");
    }
    if (!(options.family_confidence > 0.0 && options.family_confidence < 1.0)) {
        throw ConfigError("confidence level must lie in (0, 1)");
    }
    const std::vector<int> ta = default_taus(a);
    const std::vector<int> tb = default_taus(b);
    std::vector<int> common;
    std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(), std::back_inserter(common));

    const AllanCurve ca = allan_deviation(a, common);
    const AllanCurve cb = allan_deviation(b, common);

    SchemeComparison out;
    for (const auto& p : ca.points) {
        if (p.tau_runs <= options.max_tau) {
            ++out.taus_tested;
        }
    }
    const double alpha = (1.0 - options.family_confidence) / std::max(out.taus_tested, 1);
    out.per_tau_confidence = 1.0 - alpha;

    bool all_contain = out.taus_tested > 0;
    for (std::size_t i = 0; i < ca.points.size() && i < cb.points.size(); ++i) {
        const AllanPoint& pa = ca.points[i];
        const AllanPoint& pb = cb.points[i];
        RatioRow row;
        row.tau_runs = pa.tau_runs;
        row.deviation_a = pa.deviation;
        row.deviation_b = pb.deviation;
        if (pa.deviation == pb.deviation) {
            row.ratio = 1.0;
        } else if (pa.deviation == 0.0) {
            row.ratio = std::numeric_limits<double>::infinity();
        } else {
            row.ratio = pb.deviation / pa.deviation;
        }
        if (std::isfinite(row.ratio)) {
            // (s_b^2 / s_a^2) / rho^2 ~ F(dof_b, dof_a)
            const boost::math::fisher_f f(pb.dof, pa.dof);
            const double r2 = row.ratio * row.ratio;
            row.ci_low = std::sqrt(r2 / boost::math::quantile(f, 1.0 - 0.5 * alpha));
            row.ci_high = std::sqrt(r2 / boost::math::quantile(f, 0.5 * alpha));
        } else {
            row.ci_low = row.ci_high = row.ratio;
        }
        row.contains_one = row.ci_low <= 1.0 && 1.0 <= row.ci_high;
        if (row.tau_runs <= options.max_tau && !row.contains_one) {
            all_contain = false;
        }
        out.rows.push_back(row);
    }
    out.equivalent = all_contain;
    return out;
}

}  // namespace bragg
