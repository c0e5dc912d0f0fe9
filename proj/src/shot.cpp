#include "bragg/shot.hpp"

#include "bragg/errors.hpp"
#include "bragg/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

namespace bragg {

namespace {

double gaussian(double x, double center, double sigma)
{
    const double u = (x - center) / sigma;
    return std::exp(-0.5 * u * u) / (sigma * std::sqrt(two_pi));
}

// Fraction of a normalized Gaussian inside [lo, hi].
double gaussian_mass(double lo, double hi, double center, double sigma)
{
    const double s = sigma * std::numbers::sqrt2;
    return 0.5 * (std::erf((hi - center) / s) - std::erf((lo - center) / s));
}

double catmull_rom(const std::vector<double>& v, double u)
{
    const auto n = static_cast<std::ptrdiff_t>(v.size());
    if (u < 0.0 || u > static_cast<double>(n - 1)) {
        return 0.0;
    }
    auto i = static_cast<std::ptrdiff_t>(std::floor(u));
    i = std::min(i, n - 2);
    const double t = u - static_cast<double>(i);
    auto at = [&](std::ptrdiff_t j) { return v[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(j, 0, n - 1))]; };
    const double p0 = at(i - 1);
    const double p1 = at(i);
    const double p2 = at(i + 1);
    const double p3 = at(i + 2);
    return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
                  + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t);
}

// Weights w such that sum_j w_j y(offset_j) is the value at offset 0 of the
// least-squares polynomial of the given order.
std::vector<double> local_fit_weights(const std::vector<double>& offsets, int order)
{
    const auto m = static_cast<Eigen::Index>(offsets.size());
    const int p = std::min(order, static_cast<int>(m) - 1);
    double scale = 1.0;
    for (double o : offsets) {
        scale = std::max(scale, std::abs(o));
    }
    Eigen::MatrixXd vandermonde(m, p + 1);
    for (Eigen::Index r = 0; r < m; ++r) {
        double term = 1.0;
        const double u = offsets[static_cast<std::size_t>(r)] / scale;
        for (int c = 0; c <= p; ++c) {
            vandermonde(r, c) = term;
            term *= u;
        }
    }
    const Eigen::MatrixXd pinv = vandermonde.completeOrthogonalDecomposition().pseudoInverse();
    std::vector<double> w(static_cast<std::size_t>(m));
    for (Eigen::Index r = 0; r < m; ++r) {
        w[static_cast<std::size_t>(r)] = pinv(0, r);
    }
    return w;
}

}  // namespace

void CloudState::validate() const
{
    if (!(sigma > 0.0)) {
        throw ConfigError("cloud envelope sigma must be positive");
    }
    if (velocity_sigma < 0.0) {
        throw ConfigError("cloud velocity sigma must be >= 0");
    }
    if (!(atom_number > 0.0)) {
        throw ConfigError("atom number must be positive");
    }
}

CloudState propagate_cloud(const CloudState& initial, double t, double gravity)
{
    if (t < 0.0) {
        throw ConfigError("propagation time must be >= 0");
    }
    CloudState out = initial;
    out.sigma = std::hypot(initial.sigma, initial.velocity_sigma * t);
    out.center = initial.center + initial.velocity * t;
    out.fall_offset = initial.fall_offset + initial.fall_velocity * t + 0.5 * gravity * t * t;
    out.fall_velocity = initial.fall_velocity + gravity * t;
    return out;
}

bool NoiseModel::is_noiseless() const
{
    return laser_phase_sigma == 0.0 && camera_jitter_sigma == 0.0 && additive_detection_sigma == 0.0
           && atom_number_fractional_sigma == 0.0;
}

void NoiseModel::validate() const
{
    if (laser_phase_sigma < 0.0 || camera_jitter_sigma < 0.0 || additive_detection_sigma < 0.0
        || atom_number_fractional_sigma < 0.0) {
        throw ConfigError("noise sigmas must be >= 0");
    }
}

void ShotModel::validate() const
{
    cloud.validate();
    if (contrast < 0.0 || contrast > 1.0) {
        throw ConfigError("fringe contrast must lie in [0, 1]");
    }
    if (!(expansion_scale > 0.0)) {
        throw ConfigError("expansion scale must be positive");
    }
    if (points < 16) {
        throw ConfigError("need at least 16 samples per profile");
    }
    if (!(window_sigmas > 0.0)) {
        throw ConfigError("window half-width must be positive");
    }
    if (imaging.savgol_window != 0 && (imaging.savgol_window % 2 == 0 || imaging.savgol_order >= imaging.savgol_window)) {
        throw ConfigError("Savitzky-Golay window must be odd and larger than the polynomial order");
    }
}

PortGeometry port_geometry(const InterferometerConfig& config, const ShotModel& model)
{
    config.validate();
    model.validate();
    const double tof = config.timing.time_of_flight();
    const CloudState imaged = propagate_cloud(model.cloud, tof);

    PortGeometry g;
    g.symmetric = config.timing.delta_t == 0.0;
    g.sigma = imaged.sigma * model.expansion_scale;
    g.separation = recoil_velocity(config.species, config.bragg_order) * config.timing.t_sep;
    g.center_a = imaged.center;
    g.center_b = imaged.center - g.separation;
    g.port_phase_offset = model.port_phase_offset;
    if (g.symmetric) {
        g.wavenumber = 0.0;
        g.contrast = model.contrast;
    } else {
        g.wavenumber = fringe_wavenumber(config) / model.expansion_scale;
        g.contrast = model.contrast * tilt_contrast_factor(g.wavenumber, g.sigma, model.imaging.tilt);
    }
    return g;
}

DensityProfile synthesize_ports(const InterferometerConfig& config, const ShotModel& model, double phase,
                                const NoiseModel& noise)
{
    noise.validate();
    const PortGeometry g = port_geometry(config, model);

    Rng rng(noise.rng_seed);
    const double phase_noise = standard_normal(rng);
    if (noise.laser_phase_sigma > 0.0) {
        phase += noise.laser_phase_sigma * phase_noise;
    }

    const double lo = model.window_lo.value_or(g.center_b - model.window_sigmas * g.sigma);
    const double hi = model.window_hi.value_or(g.center_a + model.window_sigmas * g.sigma);
    if (!(hi > lo)) {
        throw ConfigError("sampling window is empty");
    }
    for (double c : {g.center_a, g.center_b}) {
        if (gaussian_mass(lo, hi, c, g.sigma) < 0.99) {
            throw ConfigError("sampling window holds less than 99% of a port's atoms");
        }
    }

    std::size_t n = static_cast<std::size_t>(model.points);
    if (!g.symmetric) {
        const double period = two_pi / g.wavenumber;
        n = std::max(n, static_cast<std::size_t>(std::ceil(20.0 * (hi - lo) / period)) + 1);
    }

    DensityProfile profile;
    profile.origin = lo;
    profile.spacing = (hi - lo) / static_cast<double>(n - 1);
    profile.values.resize(n);
    profile.timing = config.timing;
    profile.shot_id = noise.rng_seed;
    profile.mode = model.imaging.mode;

    double pop_a = 0.5;
    if (g.symmetric) {
        pop_a = 0.5 * (1.0 - g.contrast * std::cos(phase));
    }
    const double pop_b = 1.0 - pop_a;
    const double phase_b = phase + g.port_phase_offset;

    for (std::size_t i = 0; i < n; ++i) {
        const double x = profile.position(i);
        double mod_a = 1.0;
        double mod_b = 1.0;
        if (!g.symmetric) {
            mod_a = 1.0 - g.contrast * std::sin(g.wavenumber * (x - g.center_a) - phase);
            mod_b = 1.0 - g.contrast * std::sin(g.wavenumber * (x - g.center_b) - phase_b);
        }
        profile.values[i] = pop_a * gaussian(x, g.center_a, g.sigma) * mod_a
                            + pop_b * gaussian(x, g.center_b, g.sigma) * mod_b;
    }

    // Normalize the sampled profile to the atom number; the window drops at
    // most ~2e-9 of the mass at the default +-6 sigma.
    const double norm = model.cloud.atom_number / profile.integral();
    for (double& v : profile.values) {
        v *= norm;
    }

    NoiseModel detection = noise;
    detection.rng_seed = mix64(noise.rng_seed ^ 0x6a09e667f3bcc909ULL);
    if (!noise.is_noiseless()) {
        profile = apply_noise(profile, detection);
    }

    if (model.imaging.mode == ImagingMode::fmi && model.imaging.savgol_window > 0) {
        profile.values = savitzky_golay(profile.values, model.imaging.savgol_window, model.imaging.savgol_order);
    }
    return profile;
}

double tilt_contrast_factor(double wavenumber, double sigma_perp, double theta)
{
    if (!(std::abs(theta) < 0.5 * pi)) {
        throw ConfigError("imaging tilt must lie in (-pi/2, pi/2)");
    }
    const double u = wavenumber * sigma_perp * std::tan(theta);
    return std::exp(-0.5 * u * u);
}

DensityProfile image_absorption(const Profile2D& density, double theta)
{
    if (!(std::abs(theta) < 0.5 * pi)) {
        throw ConfigError("imaging tilt must lie in (-pi/2, pi/2)");
    }
    if (density.nx < 2 || density.nz < 2 || density.values.size() != density.nx * density.nz) {
        throw ConfigError("2D profile has inconsistent dimensions");
    }
    const double slope = std::tan(theta);
    DensityProfile out;
    out.origin = density.x_origin;
    out.spacing = density.x_spacing;
    out.values.assign(density.nx, 0.0);

    for (std::size_t iz = 0; iz < density.nz; ++iz) {
        const double weight = (iz == 0 || iz + 1 == density.nz) ? 0.5 : 1.0;
        const double shift = density.z(iz) * slope;
        const double* row = &density.values[iz * density.nx];
        for (std::size_t ix = 0; ix < density.nx; ++ix) {
            const double u = (density.x(ix) + shift - density.x_origin) / density.x_spacing;
            if (u < 0.0 || u > static_cast<double>(density.nx - 1)) {
                continue;
            }
            const auto j = std::min(static_cast<std::size_t>(u), density.nx - 2);
            const double f = u - static_cast<double>(j);
            out.values[ix] += weight * (row[j] * (1.0 - f) + row[j + 1] * f);
        }
    }
    for (double& v : out.values) {
        v *= density.z_spacing;
    }
    return out;
}

DensityProfile apply_noise(const DensityProfile& profile, const NoiseModel& noise)
{
    noise.validate();
    Rng rng(noise.rng_seed);
    const double z_number = standard_normal(rng);
    const double z_shift = standard_normal(rng);

    DensityProfile out = profile;
    if (noise.atom_number_fractional_sigma > 0.0) {
        const double scale = 1.0 + noise.atom_number_fractional_sigma * z_number;
        for (double& v : out.values) {
            v *= scale;
        }
    }
    if (noise.camera_jitter_sigma > 0.0) {
        const double shift = noise.camera_jitter_sigma * z_shift;
        const std::vector<double> source = out.values;
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double u = (out.position(i) - shift - out.origin) / out.spacing;
            out.values[i] = catmull_rom(source, u);
        }
    }
    if (noise.additive_detection_sigma > 0.0) {
        for (double& v : out.values) {
            v += noise.additive_detection_sigma * standard_normal(rng);
        }
    }
    return out;
}

std::vector<double> savitzky_golay_coefficients(int window, int poly_order)
{
    if (window < 1 || window % 2 == 0) {
        throw ConfigError("Savitzky-Golay window must be a positive odd integer");
    }
    if (poly_order < 0 || poly_order >= window) {
        throw ConfigError("Savitzky-Golay order must satisfy 0 <= order < window");
    }
    const int half = window / 2;
    std::vector<double> offsets;
    for (int j = -half; j <= half; ++j) {
        offsets.push_back(j);
    }
    return local_fit_weights(offsets, poly_order);
}

std::vector<double> savitzky_golay(std::span<const double> signal, int window, int poly_order)
{
    const std::vector<double> interior = savitzky_golay_coefficients(window, poly_order);
    const auto n = static_cast<std::ptrdiff_t>(signal.size());
    const int half = window / 2;
    std::vector<double> out(signal.size());

    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const std::ptrdiff_t first = std::max<std::ptrdiff_t>(0, i - half);
        const std::ptrdiff_t last = std::min<std::ptrdiff_t>(n - 1, i + half);
        double acc = 0.0;
        if (last - first + 1 == window) {
            for (std::ptrdiff_t j = first; j <= last; ++j) {
                acc += interior[static_cast<std::size_t>(j - first)] * signal[static_cast<std::size_t>(j)];
            }
        } else {
            std::vector<double> offsets;
            for (std::ptrdiff_t j = first; j <= last; ++j) {
                offsets.push_back(static_cast<double>(j - i));
            }
            const std::vector<double> w = local_fit_weights(offsets, poly_order);
            for (std::ptrdiff_t j = first; j <= last; ++j) {
                acc += w[static_cast<std::size_t>(j - first)] * signal[static_cast<std::size_t>(j)];
            }
        }
        out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
}

}  // namespace bragg
