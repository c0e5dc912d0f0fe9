#include "bragg/extraction.hpp"

#include "bragg/errors.hpp"
#include "bragg/levenberg_marquardt.hpp"
#include "bragg/parallel.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>

namespace bragg {

namespace {

constexpr double degenerate_contrast = 1e-4;

double median(std::vector<double> v)
{
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
    }
    return m;
}

std::size_t next_pow2(std::size_t n)
{
    std::size_t p = 1;
    while (p < n) {
        p <<= 1;
    }
    return p;
}

struct EnvelopeGuess {
    double amplitude = 0.0;
    double center = 0.0;
    double sigma = 0.0;
    double offset = 0.0;
};

EnvelopeGuess envelope_from_moments(const std::vector<double>& x, const std::vector<double>& y, double dx)
{
    const std::size_t n = y.size();
    const std::size_t edge = std::max<std::size_t>(3, n / 20);
    double lo = 0.0;
    double hi = 0.0;
    for (std::size_t i = 0; i < edge; ++i) {
        lo += y[i];
        hi += y[n - 1 - i];
    }
    EnvelopeGuess g;
    g.offset = 0.5 * (lo + hi) / static_cast<double>(edge);

    double m0 = 0.0;
    double m1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = std::max(y[i] - g.offset, 0.0);
        m0 += w;
        m1 += w * x[i];
    }
    if (!(m0 > 0.0)) {
        throw NumericalError("profile carries no signal above its baseline");
    }
    g.center = m1 / m0;
    double m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = std::max(y[i] - g.offset, 0.0);
        m2 += w * (x[i] - g.center) * (x[i] - g.center);
    }
    g.sigma = std::sqrt(m2 / m0);
    if (!(g.sigma > 0.0)) {
        throw NumericalError("profile envelope has zero width");
    }
    g.amplitude = m0 * dx / (g.sigma * std::sqrt(two_pi));
    return g;
}

// Peak of the zero-padded spectrum of r restricted to k >= k_lo.
double spectral_peak(const std::vector<double>& r, double dx, double k_lo)
{
    const std::size_t len = next_pow2(4 * r.size());
    std::vector<double> padded(len, 0.0);
    std::copy(r.begin(), r.end(), padded.begin());
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> spectrum;
    fft.fwd(spectrum, padded);

    const double dk = two_pi / (static_cast<double>(len) * dx);
    const auto first = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(k_lo / dk)));
    const std::size_t last = len / 2 - 1;
    if (first >= last) {
        throw FringeResolvabilityError("sampling cannot resolve any fringe shorter than four envelope widths");
    }
    std::size_t best = first;
    for (std::size_t j = first; j <= last; ++j) {
        if (std::abs(spectrum[j]) > std::abs(spectrum[best])) {
            best = j;
        }
    }
    double offset = 0.0;
    if (best > first && best < last) {
        const double a = std::abs(spectrum[best - 1]);
        const double b = std::abs(spectrum[best]);
        const double c = std::abs(spectrum[best + 1]);
        const double denom = a - 2.0 * b + c;
        if (denom < 0.0) {
            offset = 0.5 * (a - c) / denom;
        }
    }
    return (static_cast<double>(best) + offset) * dk;
}

void check_resolvable(double wavenumber, double sigma)
{
    const double wavelength = two_pi / std::abs(wavenumber);
    if (wavelength > 4.0 * std::abs(sigma)) {
        throw FringeResolvabilityError("fringe wavelength exceeds four envelope widths: phase cannot be extracted");
    }
}

FitResult spatial_result_from(const LmResult& lm, bool fixed, double fixed_k)
{
    FitResult out;
    out.model = FitModel::spatial;
    out.wavenumber_fixed = fixed;
    out.rss = lm.rss;
    out.iterations = lm.iterations;
    out.converged = lm.converged;

    std::vector<double> v(lm.parameters.data(), lm.parameters.data() + lm.parameters.size());
    std::vector<double> u(lm.uncertainties.data(), lm.uncertainties.data() + lm.uncertainties.size());
    if (fixed) {
        v.insert(v.begin() + sp_wavenumber, fixed_k);
        u.insert(u.begin() + sp_wavenumber, 0.0);
    }
    if (v[sp_wavenumber] < 0.0) {
        // sin(-|k| x - phi) = -sin(|k| x + phi)
        v[sp_wavenumber] = -v[sp_wavenumber];
        v[sp_phase] = -v[sp_phase];
        v[sp_contrast] = -v[sp_contrast];
    }
    if (v[sp_contrast] < 0.0) {
        v[sp_contrast] = -v[sp_contrast];
        v[sp_phase] += pi;
    }
    v[sp_sigma] = std::abs(v[sp_sigma]);
    v[sp_phase] = wrap_phase(v[sp_phase]);
    out.values = std::move(v);
    out.uncertainties = std::move(u);

    if (out.values[sp_contrast] > 1.0 + contrast_tolerance) {
        out.converged = false;
    }
    out.degenerate = out.values[sp_contrast] < degenerate_contrast || !std::isfinite(out.uncertainties[sp_phase]);
    return out;
}

}  // namespace

double FitResult::phase() const
{
    return values.at(model == FitModel::spatial ? std::size_t{sp_phase} : std::size_t{pp_phase});
}

double FitResult::phase_uncertainty() const
{
    return uncertainties.at(model == FitModel::spatial ? std::size_t{sp_phase} : std::size_t{pp_phase});
}

double FitResult::contrast() const
{
    return values.at(model == FitModel::spatial ? std::size_t{sp_contrast} : std::size_t{pp_visibility});
}

double FitResult::wavenumber() const
{
    return values.at(model == FitModel::spatial ? std::size_t{sp_wavenumber} : std::size_t{pp_wavenumber});
}

std::vector<std::string> FitResult::parameter_names(FitModel model)
{
    if (model == FitModel::spatial) {
        return {"A", "x0", "sigma_x", "B", "k", "phi", "C"};
    }
    return {"V", "k", "phi", "C"};
}

std::vector<double> PhaseSeries::phases() const
{
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        out.push_back(r.phase);
    }
    return out;
}

void PhaseSeries::validate() const
{
    if (runs_per_sample < 1) {
        throw ConfigError("runs per sample must be >= 1");
    }
    if (!(duty_cycle > 0.0)) {
        throw ConfigError("duty cycle must be positive");
    }
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].run <= records[i - 1].run) {
            throw ConfigError("phase series run indices must be strictly increasing");
        }
    }
}

PhaseSeries make_phase_series(std::span<const double> phases, int runs_per_sample, double duty_cycle)
{
    PhaseSeries s;
    s.runs_per_sample = runs_per_sample;
    s.duty_cycle = duty_cycle;
    s.records.reserve(phases.size());
    for (std::size_t i = 0; i < phases.size(); ++i) {
        PhaseRecord r;
        r.run = static_cast<int>(i) * runs_per_sample;
        r.timestamp = r.run * duty_cycle;
        r.phase = phases[i];
        s.records.push_back(r);
    }
    s.validate();
    return s;
}

std::vector<double> unwrap_phases(std::span<const double> phases)
{
    std::vector<double> out(phases.begin(), phases.end());
    for (std::size_t i = 1; i < out.size(); ++i) {
        const double step = out[i] - out[i - 1];
        out[i] -= two_pi * std::round(step / two_pi);
    }
    return out;
}

double population_readout(const DensityProfile& profile, Interval box_a, Interval box_b)
{
    for (const Interval& box : {box_a, box_b}) {
        if (!(box.hi > box.lo)) {
            throw ConfigError("population box must have hi > lo");
        }
        if (box.lo < profile.front() || box.hi > profile.back()) {
            throw ConfigError("population box extends beyond the profile axis");
        }
    }
    if (!(box_a.hi <= box_b.lo || box_b.hi <= box_a.lo)) {
        throw ConfigError("population boxes overlap");
    }
    const double na = profile.integral(box_a.lo, box_a.hi);
    const double nb = profile.integral(box_b.lo, box_b.hi);
    const double total = na + nb;
    if (total == 0.0) {
        throw NumericalError("no signal in either population box");
    }
    return na / total;
}

FitResult fit_population_fringe(std::span<const std::pair<double, double>> points, const PopulationFitOptions& options)
{
    constexpr std::size_t parameter_count = 4;
    if (points.size() < 6) {
        throw ConfigError("population fit needs at least 6 points, got " + std::to_string(points.size()));
    }
    const double k_seed = options.wavenumber_seed;
    if (!(k_seed > 0.0)) {
        throw ConfigError("population fit wavenumber seed must be positive");
    }
    double x_min = points.front().first;
    double x_max = x_min;
    for (const auto& [x, y] : points) {
        x_min = std::min(x_min, x);
        x_max = std::max(x_max, x);
    }
    const auto n = static_cast<Eigen::Index>(points.size());
    const double coverage = (x_max - x_min) * static_cast<double>(n) / static_cast<double>(n - 1) * k_seed;
    if (coverage < two_pi * (1.0 - 1e-9)) {
        throw ConfigError("population fit points must span at least one fringe period");
    }

    // Linear start at the seeded wavenumber: a sin + b cos + c.
    Eigen::MatrixXd design(n, 3);
    Eigen::VectorXd rhs(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& [x, y] = points[static_cast<std::size_t>(i)];
        design(i, 0) = std::sin(k_seed * x);
        design(i, 1) = std::cos(k_seed * x);
        design(i, 2) = 1.0;
        rhs(i) = y;
    }
    const Eigen::Vector3d lin = design.colPivHouseholderQr().solve(rhs);
    Eigen::VectorXd start(parameter_count);
    start << std::hypot(lin(0), lin(1)), k_seed, std::atan2(lin(1), lin(0)), lin(2);

    double scale = 0.0;
    for (const auto& p : points) {
        scale += p.second * p.second;
    }

    auto residual = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& [x, y] = points[static_cast<std::size_t>(i)];
            const double arg = p(1) * x + p(2);
            const double s = std::sin(arg);
            const double c = std::cos(arg);
            r(i) = p(0) * s + p(3) - y;
            if (jac) {
                (*jac)(i, 0) = s;
                (*jac)(i, 1) = p(0) * c * x;
                (*jac)(i, 2) = p(0) * c;
                (*jac)(i, 3) = 1.0;
            }
        }
    };
    LmOptions lm_options;
    lm_options.rss_floor = 1e-28 * scale;
    const LmResult lm = levenberg_marquardt(residual, start, n, lm_options);

    FitResult out;
    out.model = FitModel::population;
    out.rss = lm.rss;
    out.iterations = lm.iterations;
    out.converged = lm.converged;
    out.values.assign(lm.parameters.data(), lm.parameters.data() + parameter_count);
    out.uncertainties.assign(lm.uncertainties.data(), lm.uncertainties.data() + parameter_count);
    if (out.values[pp_visibility] < 0.0) {
        out.values[pp_visibility] = -out.values[pp_visibility];
        out.values[pp_phase] += pi;
    }
    out.values[pp_phase] = wrap_phase(out.values[pp_phase]);
    if (out.values[pp_visibility] > 1.0 + contrast_tolerance) {
        out.converged = false;
    }
    out.degenerate = out.values[pp_visibility] < 1e-9 || !std::isfinite(out.uncertainties[pp_phase]);
    if (out.degenerate) {
        out.uncertainties[pp_phase] = std::numeric_limits<double>::infinity();
    }
    return out;
}

double population_fit_to_interferometer_phase(const FitResult& fit, double scan_center)
{
    // -(V/2) cos(u + phi + c) = (V/2) sin(u + phi + c - pi/2)
    return wrap_phase(fit.phase() + 0.5 * pi - scan_center);
}

FitResult fit_spatial_fringe(const DensityProfile& profile, const SpatialFitOptions& options)
{
    const DensityProfile work = options.window ? profile.window(options.window->lo, options.window->hi) : profile;
    const std::size_t n = work.size();
    if (n < 16) {
        throw ConfigError("spatial fit needs at least 16 samples");
    }
    const std::vector<double> x = work.positions();
    const std::vector<double>& y = work.values;
    const double dx = work.spacing;

    const EnvelopeGuess env = envelope_from_moments(x, y, dx);

    std::vector<double> envelope(n);
    std::vector<double> modulation(n);
    double envelope_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double u = (x[i] - env.center) / env.sigma;
        envelope[i] = std::exp(-0.5 * u * u);
        envelope_sum += envelope[i];
        modulation[i] = y[i] - env.offset - env.amplitude * envelope[i];
    }

    const bool fixed = options.fixed_wavenumber.has_value();
    double k0 = 0.0;
    if (fixed) {
        k0 = *options.fixed_wavenumber;
        if (!(k0 > 0.0)) {
            throw ConfigError("fixed wavenumber must be positive");
        }
    } else {
        const double k_limit = two_pi / (4.0 * env.sigma);
        k0 = spectral_peak(modulation, dx, 0.9 * k_limit);
    }

    // Quadrature demodulation: r = -A E B sin(k x - phi).
    double in_phase = 0.0;
    double quadrature = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        in_phase += modulation[i] * std::sin(k0 * x[i]);
        quadrature += modulation[i] * std::cos(k0 * x[i]);
    }
    const double phi0 = std::atan2(quadrature, -in_phase);
    const double b0 = 2.0 * std::hypot(in_phase, quadrature) / (env.amplitude * envelope_sum);

    if (b0 < degenerate_contrast) {
        FitResult out;
        out.model = FitModel::spatial;
        out.wavenumber_fixed = fixed;
        out.values = {env.amplitude, env.center, env.sigma, b0, k0, wrap_phase(phi0), env.offset};
        const double inf = std::numeric_limits<double>::infinity();
        out.uncertainties = {inf, inf, inf, inf, inf, inf, inf};
        out.degenerate = true;
        out.converged = false;
        return out;
    }

    const Eigen::Index p = fixed ? 6 : 7;
    Eigen::VectorXd start(p);
    if (fixed) {
        start << env.amplitude, env.center, env.sigma, std::min(b0, 0.95), phi0, env.offset;
    } else {
        start << env.amplitude, env.center, env.sigma, std::min(b0, 0.95), k0, phi0, env.offset;
    }

    double scale = 0.0;
    for (double v : y) {
        scale += v * v;
    }

    auto residual = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
        const double a = q(0);
        const double x0 = q(1);
        const double sigma = q(2);
        const double b = q(3);
        const double k = fixed ? k0 : q(4);
        const double phi = fixed ? q(4) : q(5);
        const double c = fixed ? q(5) : q(6);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = x[i] - x0;
            const double e = std::exp(-0.5 * d * d / (sigma * sigma));
            const double arg = k * x[i] - phi;
            const double s = std::sin(arg);
            const double m = 1.0 - b * s;
            const auto row = static_cast<Eigen::Index>(i);
            r(row) = a * e * m + c - y[i];
            if (jac) {
                const double cs = std::cos(arg);
                (*jac)(row, 0) = e * m;
                (*jac)(row, 1) = a * e * m * d / (sigma * sigma);
                (*jac)(row, 2) = a * e * m * d * d / (sigma * sigma * sigma);
                (*jac)(row, 3) = -a * e * s;
                if (fixed) {
                    (*jac)(row, 4) = a * e * b * cs;
                    (*jac)(row, 5) = 1.0;
                } else {
                    (*jac)(row, 4) = -a * e * b * cs * x[i];
                    (*jac)(row, 5) = a * e * b * cs;
                    (*jac)(row, 6) = 1.0;
                }
            }
        }
    };

    LmOptions lm_options;
    lm_options.rss_floor = 1e-28 * scale;
    const LmResult lm = levenberg_marquardt(residual, start, static_cast<Eigen::Index>(n), lm_options);
    FitResult out = spatial_result_from(lm, fixed, k0);
    if (!out.degenerate) {
        check_resolvable(out.values[sp_wavenumber], out.values[sp_sigma]);
    }
    return out;
}

BatchFit fit_batch_median_k(std::span<const DensityProfile> profiles, const std::optional<Interval>& window,
                            int workers)
{
    if (profiles.size() < 3) {
        throw ConfigError("median-k batch needs at least 3 profiles");
    }
    BatchFit batch;
    batch.stage_one.resize(profiles.size());
    batch.stage_two.resize(profiles.size());

    auto failed = [](FitModel) {
        FitResult r;
        r.model = FitModel::spatial;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        r.values.assign(7, nan);
        r.uncertainties.assign(7, nan);
        r.converged = false;
        return r;
    };

    SpatialFitOptions free_fit;
    free_fit.window = window;
    parallel_for(profiles.size(), workers, [&](std::size_t i) {
        try {
            batch.stage_one[i] = fit_spatial_fringe(profiles[i], free_fit);
        } catch (const NumericalError&) {
            batch.stage_one[i] = failed(FitModel::spatial);
        }
    });

    std::vector<double> ks;
    for (const auto& r : batch.stage_one) {
        if (r.usable()) {
            ks.push_back(r.wavenumber());
        }
    }
    if (2 * ks.size() < profiles.size()) {
        throw NumericalError("more than half of the first-stage fringe fits failed");
    }
    batch.median_wavenumber = median(ks);

    SpatialFitOptions fixed_fit;
    fixed_fit.window = window;
    fixed_fit.fixed_wavenumber = batch.median_wavenumber;
    parallel_for(profiles.size(), workers, [&](std::size_t i) {
        try {
            batch.stage_two[i] = fit_spatial_fringe(profiles[i], fixed_fit);
        } catch (const NumericalError&) {
            batch.stage_two[i] = failed(FitModel::spatial);
        }
    });
    return batch;
}

PhaseSeries subtract_laser_ramp(const PhaseSeries& series, double ramp_per_run)
{
    series.validate();
    PhaseSeries out = series;
    if (out.records.empty()) {
        return out;
    }
    std::vector<double> wrapped;
    wrapped.reserve(out.records.size());
    for (const auto& r : out.records) {
        wrapped.push_back(wrap_phase(r.phase - ramp_per_run * r.run));
    }
    std::vector<double> unwrapped = unwrap_phases(wrapped);
    // Keep the branch of the first entry.
    const double first = series.records.front().phase - ramp_per_run * series.records.front().run;
    const double shift = two_pi * std::round((first - unwrapped.front()) / two_pi);
    for (std::size_t i = 0; i < unwrapped.size(); ++i) {
        out.records[i].phase = unwrapped[i] + shift;
    }
    return out;
}

InterferometerConfig with_separation_time(const InterferometerConfig& config, double t, bool hold_time_of_flight)
{
    InterferometerConfig out = config;
    if (hold_time_of_flight) {
        out.timing.t0 = config.timing.time_of_flight() - config.timing.t1 - config.timing.t2() - t;
        if (out.timing.t0 < -1e-15) {
            throw ConfigError("separation time exceeds the time-of-flight budget");
        }
        out.timing.t0 = std::max(out.timing.t0, 0.0);
    }
    out.timing.t_sep = t;
    return out;
}

double predicted_overlap_time(const InterferometerConfig& config, double port_phase_offset, bool hold_time_of_flight)
{
    config.validate();
    const double delta = std::fmod(std::fmod(port_phase_offset, two_pi) + two_pi, two_pi);
    const double vr = recoil_velocity(config.species, config.bragg_order);
    const double dt = std::abs(config.timing.delta_t);
    if (dt == 0.0) {
        throw ConfigError("symmetric sequence has no spatial fringe to overlap");
    }
    if (hold_time_of_flight) {
        return delta / (fringe_wavenumber(config) * vr);
    }
    // k(t) = 2 n k |dT| / (T_pre + t); k(t) v_r t = delta.
    const double rate = 2.0 * config.bragg_order * config.species.wavenumber() * dt * vr;
    if (!(rate > delta)) {
        throw NumericalError("fringes cannot line up: recoil displacement never reaches the required shift");
    }
    return delta * config.timing.before_separation() / (rate - delta);
}

OverlapScan optimize_overlap_time(const InterferometerConfig& config, const ShotModel& model,
                                  const OverlapScanOptions& scan)
{
    if (!(scan.t_min >= 0.0) || !(scan.t_max > scan.t_min) || scan.points < 3) {
        throw ConfigError("overlap scan needs 0 <= t_min < t_max and at least 3 points");
    }
    if (config.timing.delta_t == 0.0) {
        throw ConfigError("symmetric sequence has no spatial fringe to overlap");
    }

    auto contrast_at = [&](double t) {
        const InterferometerConfig shot_config = with_separation_time(config, t, scan.hold_time_of_flight);
        try {
            const DensityProfile profile = synthesize_ports(shot_config, model, 0.0);
            const FitResult fit = fit_spatial_fringe(profile);
            return fit.usable() ? fit.contrast() : 0.0;
        } catch (const NumericalError&) {
            return 0.0;
        }
    };

    OverlapScan out;
    const auto count = static_cast<std::size_t>(scan.points);
    out.times.resize(count);
    out.contrasts.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.times[i] = scan.t_min + (scan.t_max - scan.t_min) * static_cast<double>(i) / static_cast<double>(count - 1);
        out.contrasts[i] = contrast_at(out.times[i]);
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i < count; ++i) {
        if (out.contrasts[i] > out.contrasts[best]) {
            best = i;
        }
    }
    if (!(out.contrasts[best] > 0.0)) {
        throw NumericalError("every overlap-scan fit was degenerate");
    }
    out.best_time = out.times[best];
    out.best_contrast = out.contrasts[best];

    const bool plateau_left = best > 0 && out.contrasts[best - 1] >= out.contrasts[best] * (1.0 - 1e-9);
    if (plateau_left) {
        return out;
    }

    // Golden-section refinement between the neighbours of the grid maximum.
    double a = out.times[best > 0 ? best - 1 : 0];
    double b = out.times[std::min(best + 1, count - 1)];
    const double ratio = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - ratio * (b - a);
    double d = a + ratio * (b - a);
    double fc = contrast_at(c);
    double fd = contrast_at(d);
    for (int it = 0; it < 60 && (b - a) > 1e-7 * std::max(b, 1e-6); ++it) {
        if (fc >= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = contrast_at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = contrast_at(d);
        }
    }
    const double t_refined = 0.5 * (a + b);
    const double f_refined = contrast_at(t_refined);
    if (f_refined > out.best_contrast) {
        out.best_time = t_refined;
        out.best_contrast = f_refined;
    }
    return out;
}

}  // namespace bragg
