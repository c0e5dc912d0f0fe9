#include "bragg/errors.hpp"
#include "bragg/extraction.hpp"
#include "bragg/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace bragg;

namespace {

constexpr double kPi = 3.14159265358979323846;

double wrapped_diff(double a, double b) { return std::remainder(a - b, 2.0 * kPi); }

double sample_std(const std::vector<double>& v)
{
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double ss = 0.0;
    for (double x : v) {
        ss += (x - mean) * (x - mean);
    }
    return std::sqrt(ss / (v.size() - 1));
}

// A exp(-(x - x0)^2 / 2 s^2) [1 - B sin(k x - phi)] + C on a uniform axis.
DensityProfile model_profile(double a, double x0, double s, double b, double k, double phi, double c,
                             std::size_t n = 1024, double half_width = 5.0)
{
    DensityProfile p;
    p.origin = x0 - half_width * s;
    p.spacing = 2.0 * half_width * s / (n - 1);
    p.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = p.position(i);
        p.values[i] = a * std::exp(-0.5 * (x - x0) * (x - x0) / (s * s)) * (1.0 - b * std::sin(k * x - phi)) + c;
    }
    return p;
}

InterferometerConfig separated_config(double delta_t = 350e-6)
{
    InterferometerConfig c;
    c.timing.t1 = 10e-3;
    c.timing.delta_t = delta_t;
    c.timing.t_sep = 0.150;
    c.timing.t0 = 0.218 - c.timing.t1 - c.timing.t2() - c.timing.t_sep;
    return c;
}

ShotModel cloud_at(double temperature)
{
    ShotModel m;
    m.cloud.velocity_sigma = thermal_velocity_sigma(AtomSpecies{}, temperature);
    return m;
}

std::vector<std::pair<double, double>> population_points(int n, double v, double k, double phi, double c)
{
    std::vector<std::pair<double, double>> pts;
    for (int j = 0; j < n; ++j) {
        const double x = (j - 0.5 * (n - 1)) * 2.0 * kPi / n;
        pts.emplace_back(x, v * std::sin(k * x + phi) + c);
    }
    return pts;
}

}  // namespace

TEST_CASE("population readout")
{
    DensityProfile p;
    p.origin = 0.0;
    p.spacing = 1.0;
    p.values = {1, 1, 1, 1, 1, 1, 1, 1, 1};
    CHECK(population_readout(p, {4.0, 8.0}, {0.0, 4.0}) == doctest::Approx(0.5));
    p.values = {0, 0, 0, 0, 0, 2, 3, 2, 0};
    CHECK(population_readout(p, {4.0, 8.0}, {0.0, 4.0}) == doctest::Approx(1.0));
    p.values.assign(9, 0.0);
    CHECK_THROWS_AS((void)population_readout(p, {4.0, 8.0}, {0.0, 4.0}), NumericalError);
    p.values.assign(9, 1.0);
    CHECK_THROWS_AS((void)population_readout(p, {3.0, 8.0}, {0.0, 4.0}), ConfigError);
}

TEST_CASE("population readout of synthesized symmetric shots")
{
    InterferometerConfig cfg = separated_config(0.0);
    ShotModel model = cloud_at(12e-9);
    model.contrast = 1.0;
    const PortGeometry g = port_geometry(cfg, model);
    for (int i = 0; i <= 16; ++i) {
        const double phi = -kPi + i * kPi / 8.0;
        const DensityProfile p = synthesize_ports(cfg, model, phi);
        const double f = population_readout(p, {g.midpoint(), p.back()}, {p.front(), g.midpoint()});
        CHECK(std::abs(f - 0.5 * (1.0 - std::cos(phi))) < 0.01);
    }
}

TEST_CASE("population fringe fit")
{
    const auto pts = population_points(20, 0.4, 1.0, 1.0, 0.5);
    const FitResult fit = fit_population_fringe(pts);
    REQUIRE(fit.usable());
    CHECK(std::abs(fit.values[pp_visibility] - 0.4) < 1e-6);
    CHECK(std::abs(wrapped_diff(fit.phase(), 1.0)) < 1e-6);
    CHECK(std::abs(fit.values[pp_wavenumber] - 1.0) < 1e-6);

    const FitResult flat = fit_population_fringe(population_points(20, 0.0, 1.0, 1.0, 0.5));
    CHECK((!flat.converged || flat.degenerate));
    CHECK_FALSE(flat.usable());

    CHECK_THROWS_AS((void)fit_population_fringe(population_points(5, 0.4, 1.0, 1.0, 0.5)), ConfigError);
    std::vector<std::pair<double, double>> narrow;
    for (int j = 0; j < 10; ++j) {
        narrow.emplace_back(0.1 * j, 0.5 + 0.4 * std::sin(0.1 * j));
    }
    CHECK_THROWS_AS((void)fit_population_fringe(narrow), ConfigError);
}

TEST_CASE("population fit phase noise matches the Cramer-Rao estimate")
{
    const int n = 20;
    const double v = 0.4;
    const double sigma = 0.01;
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> noise(0.0, sigma);
    std::vector<double> errors;
    for (int trial = 0; trial < 1000; ++trial) {
        auto pts = population_points(n, v, 1.0, 0.3, 0.5);
        for (auto& p : pts) {
            p.second += noise(rng);
        }
        const FitResult fit = fit_population_fringe(pts);
        REQUIRE(fit.usable());
        errors.push_back(wrapped_diff(fit.phase(), 0.3));
    }
    const double expected = sigma * std::sqrt(2.0 / n) / v;
    CHECK(std::abs(sample_std(errors) / expected - 1.0) < 0.25);
}

TEST_CASE("population fit maps back to the interferometer phase")
{
    const int n = 20;
    const double b = 0.6;
    const double ramp = 2.0 * kPi / n;
    for (double phi : {-2.5, -0.4, 0.0, 1.2, 3.0}) {
        const double center = ramp * 57.5;
        std::vector<std::pair<double, double>> pts;
        for (int j = 0; j < n; ++j) {
            const double u = (j - 0.5 * (n - 1)) * ramp;
            pts.emplace_back(u, 0.5 * (1.0 - b * std::cos(phi + center + u)));
        }
        const FitResult fit = fit_population_fringe(pts);
        REQUIRE(fit.usable());
        CHECK(std::abs(wrapped_diff(population_fit_to_interferometer_phase(fit, center), phi)) < 1e-8);
        CHECK(2.0 * fit.values[pp_visibility] == doctest::Approx(b).epsilon(1e-8));
    }
}

TEST_CASE("spatial fit recovers the model parameters")
{
    const double k = 2.0 * kPi / 40e-6;
    const DensityProfile p = model_profile(3.0, 12e-6, 100e-6, 0.3, k, 0.7, 0.05);
    const FitResult fit = fit_spatial_fringe(p);
    REQUIRE(fit.usable());
    CHECK(fit.values.size() == 7);
    CHECK(std::abs(fit.contrast() - 0.3) < 1e-6);
    CHECK(std::abs(wrapped_diff(fit.phase(), 0.7)) < 1e-6);
    CHECK(std::abs(fit.wavenumber() / k - 1.0) < 1e-8);
    CHECK(std::abs(fit.values[sp_sigma] / 100e-6 - 1.0) < 1e-8);
    CHECK(fit.phase() > -kPi);
    CHECK(fit.phase() <= kPi);

    const FitResult fixed = fit_spatial_fringe(p, {k, std::nullopt});
    REQUIRE(fixed.usable());
    CHECK(fixed.wavenumber_fixed);
    CHECK(fixed.rss <= fit.rss + 1e-20 * std::inner_product(p.values.begin(), p.values.end(), p.values.begin(), 0.0));
    CHECK(std::abs(wrapped_diff(fixed.phase(), 0.7)) < 1e-6);
}

TEST_CASE("spatial fit flags missing modulation and unresolvable fringes")
{
    const double k = 2.0 * kPi / 40e-6;
    const FitResult flat = fit_spatial_fringe(model_profile(3.0, 0.0, 100e-6, 0.0, k, 0.7, 0.05));
    CHECK(flat.degenerate);
    CHECK_FALSE(flat.usable());

    const double long_k = 2.0 * kPi / 500e-6;
    CHECK_THROWS_AS((void)fit_spatial_fringe(model_profile(3.0, 0.0, 100e-6, 0.3, long_k, 0.7, 0.0), {long_k, std::nullopt}),
                    FringeResolvabilityError);
}

TEST_CASE("translation covariance and scale invariance")
{
    const double k = 2.0 * kPi / 40e-6;
    const DensityProfile p = model_profile(3.0, 0.0, 100e-6, 0.3, k, 0.7, 0.05);
    const FitResult base = fit_spatial_fringe(p);
    REQUIRE(base.usable());
    for (double dx : {1.3e-6, -7.7e-6, 31e-6}) {
        DensityProfile shifted = p;
        shifted.origin += dx;
        const FitResult fit = fit_spatial_fringe(shifted);
        REQUIRE(fit.usable());
        CHECK(std::abs(wrapped_diff(fit.phase(), base.phase() + k * dx)) < 1e-8);
    }

    DensityProfile scaled = p;
    for (double& v : scaled.values) {
        v *= 2.5e7;
    }
    const FitResult s = fit_spatial_fringe(scaled);
    REQUIRE(s.usable());
    CHECK(s.values[sp_amplitude] == doctest::Approx(2.5e7 * base.values[sp_amplitude]).epsilon(1e-8));
    for (int i : {sp_center, sp_sigma, sp_contrast, sp_wavenumber, sp_phase}) {
        CHECK(std::abs(s.values[i] - base.values[i]) <= 1e-8 * std::max(1.0, std::abs(base.values[i])));
    }
}

TEST_CASE("synthesize then fit round trip")
{
    const InterferometerConfig cfg = separated_config();
    const ShotModel model = cloud_at(5e-9);
    const PortGeometry g = port_geometry(cfg, model);
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> phases(-kPi, kPi);
    for (int i = 0; i < 20; ++i) {
        const double phi = phases(rng);
        const DensityProfile p = synthesize_ports(cfg, model, phi);
        const FitResult fit = fit_spatial_fringe(p, {std::nullopt, Interval{g.midpoint(), p.back()}});
        REQUIRE(fit.usable());
        CHECK(std::abs(wrapped_diff(fit.phase(), phi)) < 1e-6);
    }
}

TEST_CASE("median-k batch")
{
    const InterferometerConfig cfg = separated_config();
    ShotModel model = cloud_at(12e-9);
    model.points = 512;
    // Offset the cloud so the phase reference sits away from the envelope.
    model.cloud.center = 400e-6;
    const PortGeometry g = port_geometry(cfg, model);
    const Interval window{g.midpoint(), std::numeric_limits<double>::infinity()};

    SUBCASE("identical noiseless profiles")
    {
        const std::vector<DensityProfile> same(5, synthesize_ports(cfg, model, 0.8));
        const BatchFit batch = fit_batch_median_k(same, window);
        for (std::size_t i = 0; i < same.size(); ++i) {
            CHECK(std::abs(wrapped_diff(batch.stage_two[i].phase(), batch.stage_one[i].phase())) < 1e-9);
        }
    }

    SUBCASE("noisy batches: fixing k does not increase phase scatter")
    {
        for (std::uint64_t trial = 0; trial < 5; ++trial) {
            std::vector<DensityProfile> profiles;
            for (std::uint64_t r = 0; r < 100; ++r) {
                NoiseModel noise;
                noise.additive_detection_sigma = 2e7;
                noise.rng_seed = shot_seed(trial, 0, r);
                profiles.push_back(synthesize_ports(cfg, model, 0.8, noise));
            }
            const BatchFit batch = fit_batch_median_k(profiles, window);
            std::vector<double> one;
            std::vector<double> two;
            for (std::size_t i = 0; i < profiles.size(); ++i) {
                if (batch.stage_one[i].usable() && batch.stage_two[i].usable()) {
                    one.push_back(wrapped_diff(batch.stage_one[i].phase(), 0.8));
                    two.push_back(wrapped_diff(batch.stage_two[i].phase(), 0.8));
                }
            }
            REQUIRE(one.size() > 90);
            CHECK(sample_std(two) <= sample_std(one));
        }
    }

    SUBCASE("a corrupted profile does not move the median")
    {
        std::vector<DensityProfile> profiles;
        for (std::uint64_t r = 0; r < 100; ++r) {
            NoiseModel noise;
            noise.additive_detection_sigma = 1e7;
            noise.rng_seed = shot_seed(99, 0, r);
            profiles.push_back(synthesize_ports(cfg, model, 0.1 * r, noise));
        }
        const double clean_k = fit_batch_median_k(profiles, window).median_wavenumber;
        for (double& v : profiles[37].values) {
            v = std::sin(v);
        }
        const double k = fit_batch_median_k(profiles, window).median_wavenumber;
        CHECK(std::abs(k / clean_k - 1.0) < 1e-3);
    }

    SUBCASE("mostly failing batch is an error")
    {
        std::vector<DensityProfile> profiles;
        DensityProfile flat = synthesize_ports(cfg, model, 0.0);
        std::fill(flat.values.begin(), flat.values.end(), 1.0);
        for (int i = 0; i < 6; ++i) {
            profiles.push_back(i < 2 ? synthesize_ports(cfg, model, 0.0) : flat);
        }
        CHECK_THROWS_AS((void)fit_batch_median_k(profiles, window), NumericalError);
    }
}

TEST_CASE("laser ramp subtraction")
{
    const double ramp = 16.0 * kPi / 180.0;
    std::vector<double> raw;
    for (int r = 0; r < 200; ++r) {
        raw.push_back(std::remainder(0.4 + ramp * r, 2.0 * kPi));
    }
    const PhaseSeries series = make_phase_series(raw);
    const PhaseSeries flat = subtract_laser_ramp(series, ramp);
    for (const PhaseRecord& p : flat.records) {
        CHECK(std::abs(p.phase - 0.4) < 1e-9);
    }

    const PhaseSeries same = subtract_laser_ramp(series, 0.0);
    const std::vector<double> unwrapped = unwrap_phases(raw);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        CHECK(same.records[i].phase == doctest::Approx(unwrapped[i]).epsilon(1e-12));
    }

    const std::vector<double> small = {0.1, 0.3, -0.2, 0.05};
    const PhaseSeries aliased = subtract_laser_ramp(make_phase_series(small), 2.0 * kPi);
    for (std::size_t i = 0; i < small.size(); ++i) {
        CHECK(std::abs(aliased.records[i].phase - small[i]) < 1e-12);
    }
}

TEST_CASE("unwrapping")
{
    const std::vector<double> w = {3.0, -3.1, -2.9, 3.1};
    const std::vector<double> u = unwrap_phases(w);
    CHECK(u[0] == 3.0);
    CHECK(u[1] == doctest::Approx(-3.1 + 2.0 * kPi));
    CHECK(u[3] == doctest::Approx(3.1));
}

TEST_CASE("overlap optimizer against a dense scan of the port-overlap model")
{
    InterferometerConfig cfg = separated_config();
    cfg.timing.t_sep = 0.0;
    cfg.timing.t0 = 0.218 - cfg.timing.t1 - cfg.timing.t2();
    ShotModel model = cloud_at(50e-9);
    model.points = 1024;
    const double vr = recoil_velocity(cfg.species, 1);
    const double k = fringe_wavenumber(cfg);
    const double lambda = fringe_wavelength(cfg);

    for (double delta : {kPi, kPi / 2.0}) {
        model.port_phase_offset = delta;
        // Modulation at the centre of the combined cloud, relative to the envelope,
        // is B |cos((k v_r t - delta) / 2)|.
        double oracle = 0.0;
        double best = -1.0;
        for (int i = 0; i <= 100000; ++i) {
            const double t = 0.6 * lambda / vr * i / 100000.0;
            const double c = std::abs(std::cos(0.5 * (k * vr * t - delta)));
            if (c > best + 1e-15) {
                best = c;
                oracle = t;
            }
        }
        const double analytic = delta == kPi ? lambda / (2.0 * vr) : overlap_wait_time(cfg);
        CHECK(std::abs(oracle / analytic - 1.0) < 1e-4);

        OverlapScanOptions scan;
        scan.t_min = 0.0;
        scan.t_max = 0.6 * lambda / vr;
        scan.points = 31;
        scan.hold_time_of_flight = true;
        const OverlapScan result = optimize_overlap_time(cfg, model, scan);
        CHECK(std::abs(result.best_time / oracle - 1.0) < 0.01);
        CHECK(std::abs(predicted_overlap_time(cfg, delta, true) / oracle - 1.0) < 1e-4);
        CHECK(result.best_contrast == doctest::Approx(model.contrast).epsilon(1e-3));
        if (delta == kPi) {
            CHECK(*std::min_element(result.contrasts.begin(), result.contrasts.end()) == result.contrasts.front());
            CHECK(result.contrasts.front() < 1e-3);
        }
    }
}

TEST_CASE("overlap contrast repeats every fringe wavelength of displacement")
{
    InterferometerConfig cfg = separated_config();
    cfg.timing.t_sep = 0.0;
    cfg.timing.t0 = 0.218 - cfg.timing.t1 - cfg.timing.t2();
    ShotModel model = cloud_at(50e-9);
    const double vr = recoil_velocity(cfg.species, 1);
    const double period = fringe_wavelength(cfg) / vr;
    const double t_best = predicted_overlap_time(cfg, pi, true);
    for (double t : {t_best, t_best + period}) {
        const FitResult fit = fit_spatial_fringe(synthesize_ports(with_separation_time(cfg, t, true), model, 0.0));
        REQUIRE(fit.usable());
        CHECK(fit.contrast() == doctest::Approx(0.5).epsilon(1e-3));
    }
    const FitResult mid =
        fit_spatial_fringe(synthesize_ports(with_separation_time(cfg, t_best + 0.4 * period, true), model, 0.0));
    CHECK(mid.contrast() < 0.4);
}

TEST_CASE("self-consistent overlap time when the time of flight grows")
{
    InterferometerConfig cfg = separated_config();
    cfg.timing.t_sep = 0.0;
    const double t = predicted_overlap_time(cfg, pi, false);
    const InterferometerConfig at = with_separation_time(cfg, t, false);
    CHECK(fringe_wavenumber(at) * recoil_velocity(at.species, 1) * t == doctest::Approx(pi).epsilon(1e-12));
}
