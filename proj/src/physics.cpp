#include "bragg/physics.hpp"

#include "bragg/errors.hpp"

#include <cmath>
#include <string>

namespace bragg {

namespace {

bool finite_all(std::initializer_list<double> values)
{
    for (double v : values) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

double nonzero_asymmetry(const InterferometerConfig& config)
{
    const double dt = std::abs(config.timing.delta_t);
    if (dt == 0.0) {
        throw ConfigError("symmetric sequence (delta_t = 0) has no spatial fringe: wavelength is infinite");
    }
    return dt;
}

}  // namespace

void AtomSpecies::validate() const
{
    if (!(mass > 0.0) || !std::isfinite(mass)) {
        throw ConfigError("species mass must be positive");
    }
    if (!(wavelength > 0.0) || !std::isfinite(wavelength)) {
        throw ConfigError("optical wavelength must be positive");
    }
}

void SequenceTiming::validate() const
{
    if (!finite_all({t0, t1, delta_t, t_sep})) {
        throw ConfigError("timing values must be finite");
    }
    if (t0 < 0.0 || t1 < 0.0 || t2() < 0.0 || t_sep < 0.0) {
        throw ConfigError("timing: T0, T1, T1 + delta_t and t_sep must all be >= 0");
    }
}

double InterferometerConfig::laser_phase() const
{
    return laser_phases[0] - 2.0 * laser_phases[1] + laser_phases[2];
}

void InterferometerConfig::validate() const
{
    species.validate();
    timing.validate();
    if (bragg_order < 1) {
        throw ConfigError("Bragg order must be >= 1, got " + std::to_string(bragg_order));
    }
    if (!finite_all({gravity, chirp_rate, laser_phases[0], laser_phases[1], laser_phases[2]})) {
        throw ConfigError("gravity, chirp rate and laser phases must be finite");
    }
}

double recoil_velocity(const AtomSpecies& species, int bragg_order)
{
    if (bragg_order < 0) {
        throw ConfigError("Bragg order must be >= 0");
    }
    return 2.0 * bragg_order * hbar * species.wavenumber() / species.mass;
}

double fringe_wavelength(const InterferometerConfig& config)
{
    const double dt = nonzero_asymmetry(config);
    const double tof = config.timing.time_of_flight();
    if (!(tof > 0.0)) {
        throw ConfigError("time of flight must be positive");
    }
    return pi * tof / (config.bragg_order * config.species.wavenumber() * dt);
}

double fringe_wavenumber(const InterferometerConfig& config)
{
    return two_pi / fringe_wavelength(config);
}

double beamsplitter_separation(const InterferometerConfig& config)
{
    return recoil_velocity(config.species, config.bragg_order) * std::abs(config.timing.delta_t);
}

double overlap_wait_time(const InterferometerConfig& config)
{
    nonzero_asymmetry(config);
    return fringe_wavelength(config) / (4.0 * recoil_velocity(config.species, config.bragg_order));
}

double compensating_chirp_rate(const InterferometerConfig& config)
{
    return config.species.effective_wavevector() * config.gravity / two_pi;
}

PhaseBreakdown mz_phase(const InterferometerConfig& config)
{
    const double t = config.timing.t1;
    PhaseBreakdown out;
    out.propagation = config.bragg_order
                      * (config.species.effective_wavevector() * config.gravity - two_pi * config.chirp_rate)
                      * t * t;
    out.laser = config.laser_phase();

    const double vr = recoil_velocity(config.species, config.bragg_order);
    const double dx = vr * config.timing.delta_t;
    const double p_bar = 0.5 * config.species.mass * vr;
    out.separation_offset = dx * p_bar / hbar;

    out.total = out.propagation + out.laser + out.separation_offset;
    return out;
}

double separation_wavenumber(const AtomSpecies& species, double dx, double expansion_time)
{
    if (!(expansion_time > 0.0)) {
        throw ConfigError("expansion time must be positive");
    }
    return species.mass * dx / (expansion_time * hbar);
}

double separation_phase(const AtomSpecies& species, double dx, double p_bar, double expansion_time, double x)
{
    return dx * p_bar / hbar + separation_wavenumber(species, dx, expansion_time) * x;
}

double thermal_velocity_sigma(const AtomSpecies& species, double temperature)
{
    if (temperature < 0.0) {
        throw ConfigError("temperature must be >= 0");
    }
    return std::sqrt(boltzmann * temperature / species.mass);
}

double wrap_phase(double phase)
{
    double w = std::remainder(phase, two_pi);  // [-pi, pi]
    if (w <= -pi) {
        w += two_pi;
    }
    return w;
}

}  // namespace bragg
