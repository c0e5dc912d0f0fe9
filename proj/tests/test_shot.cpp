#include "bragg/errors.hpp"
#include "bragg/extraction.hpp"
#include "bragg/shot.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace bragg;

namespace {

constexpr double kPi = 3.14159265358979323846;

InterferometerConfig timing(double delta_t, double t_sep, double tof = 0.218)
{
    InterferometerConfig c;
    c.timing.t1 = 10e-3;
    c.timing.delta_t = delta_t;
    c.timing.t_sep = t_sep;
    c.timing.t0 = tof - c.timing.t1 - c.timing.t2() - t_sep;
    return c;
}

ShotModel cold_cloud(double temperature = 12e-9)
{
    ShotModel m;
    m.cloud.velocity_sigma = thermal_velocity_sigma(AtomSpecies{}, temperature);
    return m;
}

double gauss(double x, double c, double s)
{
    return std::exp(-0.5 * (x - c) * (x - c) / (s * s)) / (std::sqrt(2.0 * kPi) * s);
}

// Composite Simpson rule over [a, b] with n (even) intervals.
template <typename F>
double simpson(F f, double a, double b, int n)
{
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) {
        s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    }
    return s * h / 3.0;
}

// Contrast of the line-of-sight integral of G(z) [1 - B sin(k (x + z tan theta))]
// by quadrature demodulation over one fringe period, relative to B.
double tilt_oracle(double k, double sigma_perp, double theta)
{
    const double b = 0.5;
    const double t = std::tan(theta);
    const int samples = 64;
    double s = 0.0;
    double c = 0.0;
    double mean = 0.0;
    for (int i = 0; i < samples; ++i) {
        const double x = (2.0 * kPi / k) * i / samples;
        const double p = simpson(
            [&](double z) { return gauss(z, 0.0, sigma_perp) * (1.0 - b * std::sin(k * (x + z * t))); },
            -10.0 * sigma_perp, 10.0 * sigma_perp, 4000);
        s += p * std::sin(k * x);
        c += p * std::cos(k * x);
        mean += p;
    }
    mean /= samples;
    const double amplitude = 2.0 * std::hypot(s, c) / samples;
    return amplitude / mean / b;
}

}  // namespace

TEST_CASE("ballistic expansion")
{
    CloudState c;
    c.velocity_sigma = 2e-3;
    c.velocity = 0.01;
    const CloudState same = propagate_cloud(c, 0.0);
    CHECK(same.sigma == c.sigma);
    CHECK(same.center == c.center);

    const double sv = thermal_velocity_sigma(AtomSpecies{}, 50e-9);
    CHECK(std::abs(sv - 2.19e-3) < 0.005e-3);
    CHECK(std::abs(sv * 0.218 - 476.8e-6) < 0.5e-6);

    CloudState hot;
    hot.velocity_sigma = sv;
    const CloudState later = propagate_cloud(hot, 0.218, 9.81);
    CHECK(later.sigma == doctest::Approx(std::hypot(25e-6, sv * 0.218)).epsilon(1e-14));
    CHECK(later.fall_offset == doctest::Approx(0.5 * 9.81 * 0.218 * 0.218));
    CHECK(later.center == 0.0);
    CHECK_THROWS_AS((void)propagate_cloud(hot, -1.0), ConfigError);
}

TEST_CASE("overlapped out-of-phase ports carry no modulation")
{
    const InterferometerConfig cfg = timing(350e-6, 0.0);
    const ShotModel model = cold_cloud();
    const PortGeometry g = port_geometry(cfg, model);
    const DensityProfile p = synthesize_ports(cfg, model, 0.7);
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double envelope = model.cloud.atom_number * gauss(p.position(i), 0.0, g.sigma);
        worst = std::max(worst, std::abs(p.values[i] - envelope));
    }
    CHECK(worst < 1e-9 * model.cloud.atom_number / g.sigma);
}

TEST_CASE("separated ports carry complementary modulation")
{
    const InterferometerConfig cfg = timing(350e-6, 0.150);
    const ShotModel model = cold_cloud();
    const PortGeometry g = port_geometry(cfg, model);
    REQUIRE(g.separation > 7.0 * g.sigma);
    const double phase = 0.4;
    const DensityProfile p = synthesize_ports(cfg, model, phase);
    const double n = model.cloud.atom_number;
    for (double u : {-1.0, -0.3, 0.0, 0.2, 1.1}) {
        const double xa = g.center_a + u * g.sigma;
        const double xb = g.center_b + u * g.sigma;
        const double ea = 0.5 * n * gauss(xa, g.center_a, g.sigma) * (1.0 - 0.5 * std::sin(g.wavenumber * u * g.sigma - phase));
        const double eb =
            0.5 * n * gauss(xb, g.center_b, g.sigma) * (1.0 - 0.5 * std::sin(g.wavenumber * u * g.sigma - phase - kPi));
        // Linear interpolation between samples limits the comparison.
        CHECK(std::abs(p.interpolate(xa) - ea) < 2e-3 * ea);
        CHECK(std::abs(p.interpolate(xb) - eb) < 2e-3 * eb);
    }
}

TEST_CASE("atom number is conserved for every separation time")
{
    const ShotModel model = cold_cloud();
    for (double t_sep : {0.0, 0.005, 0.02, 0.08, 0.15}) {
        const DensityProfile p = synthesize_ports(timing(350e-6, t_sep), model, 1.3);
        CHECK(std::abs(p.integral() / model.cloud.atom_number - 1.0) < 1e-9);
    }
}

TEST_CASE("window that cuts a port is rejected")
{
    const InterferometerConfig cfg = timing(350e-6, 0.150);
    ShotModel model = cold_cloud();
    const PortGeometry g = port_geometry(cfg, model);
    model.window_lo = g.center_b;
    model.window_hi = g.center_a + 6.0 * g.sigma;
    CHECK_THROWS_AS((void)synthesize_ports(cfg, model, 0.0), ConfigError);
}

TEST_CASE("fitted wavenumber and contrast of a separated port")
{
    const InterferometerConfig cfg = timing(350e-6, 0.150);
    ShotModel model = cold_cloud();
    for (double tilt_deg : {0.0, 2.0}) {
        model.imaging.tilt = tilt_deg * kPi / 180.0;
        const PortGeometry g = port_geometry(cfg, model);
        const DensityProfile p = synthesize_ports(cfg, model, 0.9);
        const FitResult fit = fit_spatial_fringe(p, {std::nullopt, Interval{g.midpoint(), p.back()}});
        REQUIRE(fit.usable());
        CHECK(std::abs(fit.wavenumber() / (2.0 * kPi / fringe_wavelength(cfg)) - 1.0) < 1e-3);
        const double expected = 0.5 * tilt_contrast_factor(g.wavenumber, g.sigma, model.imaging.tilt);
        CHECK(std::abs(fit.contrast() - expected) < 1e-3);
    }
}

TEST_CASE("tilt contrast factor against quadrature")
{
    const double k = 2.0 * kPi / 242.9e-6;
    const double sigma = 100e-6;
    CHECK(tilt_contrast_factor(k, sigma, 0.0) == 1.0);
    for (double deg : {0.0, 1.0, 2.0, 5.0, 10.0}) {
        const double theta = deg * kPi / 180.0;
        CHECK(std::abs(tilt_contrast_factor(k, sigma, theta) - tilt_oracle(k, sigma, theta)) < 1e-3);
    }
    double previous = 1.0;
    for (double deg = 0.5; deg < 30.0; deg += 0.5) {
        const double f = tilt_contrast_factor(k, sigma, deg * kPi / 180.0);
        CHECK(f < previous);
        CHECK(tilt_contrast_factor(k, sigma, -deg * kPi / 180.0) == f);
        previous = f;
    }
    CHECK_THROWS_AS((void)tilt_contrast_factor(k, sigma, kPi / 2.0), ConfigError);
}

TEST_CASE("line-of-sight integration of a 2D density")
{
    const double k = 2.0 * kPi / 242.9e-6;
    const double sigma_perp = 100e-6;
    const double sigma_x = 10.0 * sigma_perp;
    const double b = 0.5;
    Profile2D d;
    d.nx = 4001;
    d.x_spacing = 8.0 * sigma_x / (d.nx - 1);
    d.x_origin = -4.0 * sigma_x;
    d.nz = 241;
    d.z_spacing = 12.0 * sigma_perp / (d.nz - 1);
    d.z_origin = -6.0 * sigma_perp;
    d.values.resize(d.nx * d.nz);
    for (std::size_t iz = 0; iz < d.nz; ++iz) {
        for (std::size_t ix = 0; ix < d.nx; ++ix) {
            const double x = d.x(ix);
            d.values[iz * d.nx + ix] =
                gauss(x, 0.0, sigma_x) * gauss(d.z(iz), 0.0, sigma_perp) * (1.0 - b * std::sin(k * x - 0.3));
        }
    }
    for (double deg : {0.0, 2.0, 5.0}) {
        const double theta = deg * kPi / 180.0;
        const DensityProfile p = image_absorption(d, theta);
        const FitResult fit = fit_spatial_fringe(p.window(-2.5 * sigma_x, 2.5 * sigma_x));
        REQUIRE(fit.usable());
        CHECK(std::abs(fit.contrast() / b - tilt_contrast_factor(k, sigma_perp, theta)) < 2e-3);
        CHECK(std::abs(fit.values[sp_sigma] / sigma_x - 1.0) < 2e-3);
    }
}

TEST_CASE("noise channels")
{
    const InterferometerConfig cfg = timing(350e-6, 0.150);
    const DensityProfile clean = synthesize_ports(cfg, cold_cloud(), 0.2);

    NoiseModel none;
    none.rng_seed = 42;
    CHECK(apply_noise(clean, none).values == clean.values);

    NoiseModel noise;
    noise.additive_detection_sigma = 1e6;
    noise.camera_jitter_sigma = 2e-6;
    noise.atom_number_fractional_sigma = 0.02;
    noise.rng_seed = 11;
    const DensityProfile a = apply_noise(clean, noise);
    const DensityProfile b = apply_noise(clean, noise);
    CHECK(a.values == b.values);
    noise.rng_seed = 12;
    CHECK(apply_noise(clean, noise).values != a.values);

    NoiseModel bad;
    bad.camera_jitter_sigma = -1.0;
    CHECK_THROWS_AS((void)apply_noise(clean, bad), ConfigError);
}

TEST_CASE("atom number scaling is exact")
{
    const DensityProfile clean = synthesize_ports(timing(350e-6, 0.150), cold_cloud(), 0.2);
    NoiseModel noise;
    noise.atom_number_fractional_sigma = 0.05;
    noise.rng_seed = 3;
    const DensityProfile scaled = apply_noise(clean, noise);
    const double ratio = scaled.values[clean.size() / 2] / clean.values[clean.size() / 2];
    for (std::size_t i = 0; i < clean.size(); i += 97) {
        if (clean.values[i] > 0.0) {
            CHECK(scaled.values[i] / clean.values[i] == doctest::Approx(ratio).epsilon(1e-12));
        }
    }
}

TEST_CASE("camera jitter maps to fringe phase through k sigma_x")
{
    const InterferometerConfig cfg = timing(350e-6, 0.150);
    ShotModel model = cold_cloud();
    model.points = 512;
    const PortGeometry g = port_geometry(cfg, model);
    const double jitter = 5e-6;
    const DensityProfile clean = synthesize_ports(cfg, model, 0.5);
    const Interval window{g.midpoint(), clean.back()};
    std::vector<double> phases;
    for (std::uint64_t s = 0; s < 1000; ++s) {
        NoiseModel noise;
        noise.camera_jitter_sigma = jitter;
        noise.rng_seed = 1000 + s;
        const FitResult fit = fit_spatial_fringe(apply_noise(clean, noise), {g.wavenumber, window});
        REQUIRE(fit.usable());
        phases.push_back(fit.phase());
    }
    const double mean = std::accumulate(phases.begin(), phases.end(), 0.0) / phases.size();
    double ss = 0.0;
    for (double p : phases) {
        ss += (p - mean) * (p - mean);
    }
    const double spread = std::sqrt(ss / (phases.size() - 1));
    CHECK(std::abs(spread / (g.wavenumber * jitter) - 1.0) < 0.10);
}

TEST_CASE("detection noise may drive samples negative")
{
    const DensityProfile clean = synthesize_ports(timing(350e-6, 0.150), cold_cloud(), 0.2);
    NoiseModel noise;
    noise.additive_detection_sigma = 1e7;
    noise.rng_seed = 5;
    const DensityProfile noisy = apply_noise(clean, noise);
    CHECK(*std::min_element(noisy.values.begin(), noisy.values.end()) < 0.0);
}

TEST_CASE("Savitzky-Golay coefficients and smoothing")
{
    const std::vector<double> w = savitzky_golay_coefficients(11, 3);
    const double known[] = {-36, 9, 44, 69, 84, 89, 84, 69, 44, 9, -36};
    for (int i = 0; i < 11; ++i) {
        CHECK(w[i] == doctest::Approx(known[i] / 429.0).epsilon(1e-12));
    }

    const std::vector<double> flat(50, 3.25);
    for (double v : savitzky_golay(flat, 11, 3)) {
        CHECK(v == doctest::Approx(3.25).epsilon(1e-12));
    }

    std::vector<double> cubic(60);
    for (std::size_t i = 0; i < cubic.size(); ++i) {
        const double x = static_cast<double>(i) * 0.1;
        cubic[i] = 1.0 - 2.0 * x + 0.5 * x * x - 0.05 * x * x * x;
    }
    const std::vector<double> smooth = savitzky_golay(cubic, 11, 3);
    for (std::size_t i = 0; i < cubic.size(); ++i) {
        // Truncated edge windows still reproduce the polynomial.
        CHECK(std::abs(smooth[i] - cubic[i]) < 1e-10);
    }

    std::mt19937_64 rng(99);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> white(10000);
    for (double& v : white) {
        v = noise(rng);
    }
    const std::vector<double> filtered = savitzky_golay(white, 11, 3);
    double var = 0.0;
    for (std::size_t i = 5; i + 5 < filtered.size(); ++i) {
        var += filtered[i] * filtered[i];
    }
    var /= static_cast<double>(filtered.size() - 10);
    double norm = 0.0;
    for (double c : w) {
        norm += c * c;
    }
    CHECK(norm == doctest::Approx(89.0 / 429.0).epsilon(1e-12));
    CHECK(std::abs(var / norm - 1.0) < 0.10);

    CHECK_THROWS_AS((void)savitzky_golay(white, 10, 3), ConfigError);
    CHECK_THROWS_AS((void)savitzky_golay(white, 5, 5), ConfigError);
}

TEST_CASE("FMI profiles are smoothed when a window is set")
{
    const InterferometerConfig cfg = timing(350e-6, 0.150);
    ShotModel model = cold_cloud();
    NoiseModel noise;
    noise.additive_detection_sigma = 1e6;
    noise.rng_seed = 8;
    const DensityProfile raw = synthesize_ports(cfg, model, 0.0, noise);
    model.imaging.mode = ImagingMode::fmi;
    model.imaging.savgol_window = 11;
    const DensityProfile fmi = synthesize_ports(cfg, model, 0.0, noise);
    CHECK(fmi.mode == ImagingMode::fmi);
    CHECK(fmi.values == savitzky_golay(raw.values, 11, 3));
}
