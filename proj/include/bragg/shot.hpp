#pragma once

// Synthetic single-shot density profiles: two Gaussian output ports with
// co-moving sinusoidal modulation, imaging tilt, noise and smoothing.

#include "bragg/physics.hpp"
#include "bragg/profile.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace bragg {

struct CloudState {
    double center = 0.0;          // m, along the lattice axis
    double sigma = 25e-6;         // m, Gaussian envelope sigma
    double velocity_sigma = 0.0;  // m/s
    double atom_number = 2e6;
    double velocity = 0.0;        // m/s, resolved on the fringe axis
    // Common-mode free fall. Tracked as metadata only: the imaging frame
    // follows the falling cloud.
    double fall_offset = 0.0;
    double fall_velocity = 0.0;

    void validate() const;
};

// Ballistic expansion. sigma(t) = sqrt(sigma^2 + (sigma_v t)^2).
[[nodiscard]] CloudState propagate_cloud(const CloudState& initial, double t, double gravity = 0.0);

struct NoiseModel {
    double laser_phase_sigma = 0.0;          // rad per shot
    double camera_jitter_sigma = 0.0;        // m per shot
    double additive_detection_sigma = 0.0;   // profile units per sample
    double atom_number_fractional_sigma = 0.0;
    std::uint64_t rng_seed = 0;

    [[nodiscard]] bool is_noiseless() const;
    void validate() const;
};

struct ImagingModel {
    ImagingMode mode = ImagingMode::absorption;
    double tilt = 0.0;         // rad between imaging light and the fringe normal
    int savgol_window = 0;     // 0 disables smoothing
    int savgol_order = 3;
};

// Everything besides the interferometer needed to render a shot.
struct ShotModel {
    CloudState cloud;                  // state at release
    double contrast = 0.5;             // B
    double port_phase_offset = pi;     // fringe phase of port b relative to port a
    double expansion_scale = 1.0;      // stretches the ballistic map (not calibrated)
    ImagingModel imaging;
    int points = 2048;
    double window_sigmas = 6.0;
    // Explicit sampling window; when absent the window covers both ports.
    std::optional<double> window_lo;
    std::optional<double> window_hi;

    void validate() const;
};

// Geometry of the two output ports on the imaging axis.
//
// Port a is the kicked port and defines the frame origin. Port b trails at
// -v_r t_sep. Each port carries G(x - x_p) [1 - B sin(k (x - x_p) - phi_p)]
// with phi_b = phi_a + port_phase_offset.
struct PortGeometry {
    double center_a = 0.0;
    double center_b = 0.0;
    double sigma = 0.0;
    double wavenumber = 0.0;   // 0 for a symmetric sequence
    double contrast = 0.0;     // configured B times the tilt factor
    double separation = 0.0;   // center_a - center_b
    double port_phase_offset = 0.0;
    bool symmetric = false;

    [[nodiscard]] double midpoint() const { return 0.5 * (center_a + center_b); }
};

[[nodiscard]] PortGeometry port_geometry(const InterferometerConfig& config, const ShotModel& model);

// Renders one shot with interferometer phase `phase`.
//
// Asymmetric sequences: port a fringe phase is `phase`. Symmetric sequences
// (delta_t = 0) carry no spatial modulation; the kicked port holds the
// fraction (1 - B cos phase) / 2, so phase = 0 puts every atom in the
// unkicked port. The noiseless profile integrates to the atom number.
// Laser phase noise is drawn first, then apply_noise runs on the result.
[[nodiscard]] DensityProfile synthesize_ports(const InterferometerConfig& config, const ShotModel& model,
                                              double phase, const NoiseModel& noise = {});

// Fringe contrast surviving line-of-sight integration through a Gaussian
// transverse envelope of width sigma_perp when the light is tilted by theta:
// exp(-(k sigma_perp tan theta)^2 / 2).
[[nodiscard]] double tilt_contrast_factor(double wavenumber, double sigma_perp, double theta);

// Integrates a 2D density along lines tilted by theta from the z axis:
// P(x) = int rho(x + z tan theta, z) dz.
[[nodiscard]] DensityProfile image_absorption(const Profile2D& density, double theta);

// Atom-number scaling, camera translation (cubic resampling on the same
// axis), then additive detection noise, all drawn from noise.rng_seed.
// Detection noise can make samples negative; they are left as drawn.
[[nodiscard]] DensityProfile apply_noise(const DensityProfile& profile, const NoiseModel& noise);

// Local least-squares polynomial smoothing. Near the ends the window is
// truncated to the available samples.
[[nodiscard]] std::vector<double> savitzky_golay(std::span<const double> signal, int window, int poly_order);

// Savitzky-Golay weights for the centre of a full window.
[[nodiscard]] std::vector<double> savitzky_golay_coefficients(int window, int poly_order);

}  // namespace bragg
