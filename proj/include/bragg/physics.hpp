#pragma once

// Closed-form phase and scaling relations of an asymmetric Bragg
// Mach-Zehnder interferometer. Everything is SI and every function is pure.

#include <array>
#include <numbers>

namespace bragg {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

inline constexpr double hbar = 1.054571817e-34;      // J s
inline constexpr double boltzmann = 1.380649e-23;    // J/K
inline constexpr double rb87_mass = 1.44316e-25;     // kg
inline constexpr double rb87_d2_wavelength = 780e-9; // m, doubled 1560 nm
inline constexpr double standard_gravity = 9.81;     // m/s^2

struct AtomSpecies {
    double mass = rb87_mass;
    double wavelength = rb87_d2_wavelength;

    // Single photon wavenumber k = 2 pi / lambda.
    [[nodiscard]] double wavenumber() const { return two_pi / wavelength; }
    // k_eff = 2k: two counter-propagating photons per Bragg order.
    [[nodiscard]] double effective_wavevector() const { return 2.0 * wavenumber(); }

    void validate() const;
};

// Pulse timing. delta_t is signed; the second dark time is t1 + delta_t.
struct SequenceTiming {
    double t0 = 0.0;     // release -> first beamsplitter
    double t1 = 0.0;     // first dark time
    double delta_t = 0.0;
    double t_sep = 0.0;  // final beamsplitter -> imaging

    [[nodiscard]] double t2() const { return t1 + delta_t; }
    // Release to final beamsplitter.
    [[nodiscard]] double before_separation() const { return t0 + t1 + t2(); }
    [[nodiscard]] double time_of_flight() const { return before_separation() + t_sep; }

    void validate() const;
};

struct InterferometerConfig {
    AtomSpecies species;
    SequenceTiming timing;
    int bragg_order = 1;
    double gravity = standard_gravity;  // signed projection on the lattice axis
    double chirp_rate = 0.0;            // Hz/s
    std::array<double, 3> laser_phases{};

    // phi1 - 2 phi2 + phi3
    [[nodiscard]] double laser_phase() const;
    void validate() const;
};

struct PhaseBreakdown {
    double propagation = 0.0;
    double laser = 0.0;
    double separation_offset = 0.0;
    double total = 0.0;
};

// 2 n hbar k / m. Linear in n; n = 0 gives 0.
[[nodiscard]] double recoil_velocity(const AtomSpecies& species, int bragg_order);

// pi T_TOF / (n k |delta_t|). Throws ConfigError when delta_t == 0 or T_TOF <= 0.
[[nodiscard]] double fringe_wavelength(const InterferometerConfig& config);
[[nodiscard]] double fringe_wavenumber(const InterferometerConfig& config);

// Spatial mismatch of the two paths at the final beamsplitter, v_r |delta_t|.
[[nodiscard]] double beamsplitter_separation(const InterferometerConfig& config);

// Separation time that moves the two ports a quarter fringe apart:
// (lambda_fringe / 4) / v_r evaluated at the configured time of flight.
[[nodiscard]] double overlap_wait_time(const InterferometerConfig& config);

// Chirp rate that cancels the gravitational Doppler ramp, k_eff g / 2 pi.
[[nodiscard]] double compensating_chirp_rate(const InterferometerConfig& config);

// Propagation and laser phase with T = t1, plus the constant part of the
// separation phase for the mismatch v_r delta_t and mean port momentum m v_r / 2.
[[nodiscard]] PhaseBreakdown mz_phase(const InterferometerConfig& config);

// dx p_bar / hbar + (m dx / t) x / hbar. Throws ConfigError for t <= 0.
[[nodiscard]] double separation_phase(const AtomSpecies& species, double dx, double p_bar,
                                      double expansion_time, double x);

// Spatial wavenumber of the position-dependent separation phase, m dx / (t hbar).
[[nodiscard]] double separation_wavenumber(const AtomSpecies& species, double dx,
                                           double expansion_time);

// 1D thermal velocity spread sqrt(k_B T / m).
[[nodiscard]] double thermal_velocity_sigma(const AtomSpecies& species, double temperature);

// Wrap into (-pi, pi].
[[nodiscard]] double wrap_phase(double phase);

}  // namespace bragg
