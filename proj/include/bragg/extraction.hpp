#pragma once

// Phase readout: population fringes for symmetric sequences and
// Gaussian-envelope x sinusoid fits for spatial fringes.

#include "bragg/physics.hpp"
#include "bragg/profile.hpp"
#include "bragg/shot.hpp"

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace bragg {

enum class FitModel { spatial, population };

// Parameter order of the spatial model
// A exp(-(x - x0)^2 / 2 sigma^2) [1 - B sin(k x - phi)] + C.
enum SpatialParam { sp_amplitude = 0, sp_center, sp_sigma, sp_contrast, sp_wavenumber, sp_phase, sp_offset };
// Parameter order of the population model V sin(k x + phi) + C.
enum PopulationParam { pp_visibility = 0, pp_wavenumber, pp_phase, pp_offset };

struct FitResult {
    FitModel model = FitModel::spatial;
    std::vector<double> values;
    std::vector<double> uncertainties;
    double rss = 0.0;
    int iterations = 0;
    bool converged = false;
    bool degenerate = false;   // no measurable modulation; phase meaningless
    bool wavenumber_fixed = false;

    [[nodiscard]] bool usable() const { return converged && !degenerate; }
    [[nodiscard]] double phase() const;
    [[nodiscard]] double phase_uncertainty() const;
    [[nodiscard]] double contrast() const;
    [[nodiscard]] double wavenumber() const;
    [[nodiscard]] static std::vector<std::string> parameter_names(FitModel model);
};

// Contrast above 1 + this tolerance marks a fit unusable.
inline constexpr double contrast_tolerance = 0.05;

struct PhaseRecord {
    int run = 0;
    double timestamp = 0.0;  // s
    double phase = 0.0;      // rad
    double contrast = 0.0;
    double rss = 0.0;
    bool converged = true;
};

// Phases of consecutive runs. For population readout each sample spans
// runs_per_sample runs.
struct PhaseSeries {
    std::vector<PhaseRecord> records;
    int runs_per_sample = 1;
    double duty_cycle = 11.4;  // s per run

    [[nodiscard]] std::vector<double> phases() const;
    [[nodiscard]] std::size_t size() const { return records.size(); }
    [[nodiscard]] int run_count() const { return static_cast<int>(records.size()) * runs_per_sample; }
    void validate() const;
};

// Builds a series with run index i * runs_per_sample and timestamps in duty cycles.
[[nodiscard]] PhaseSeries make_phase_series(std::span<const double> phases, int runs_per_sample = 1,
                                            double duty_cycle = 11.4);

// Nearest multiple of 2 pi relative to the previous entry; the first entry
// fixes the branch.
[[nodiscard]] std::vector<double> unwrap_phases(std::span<const double> phases);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

// N_a / (N_a + N_b) by trapezoidal integration over two disjoint boxes.
[[nodiscard]] double population_readout(const DensityProfile& profile, Interval box_a, Interval box_b);

struct PopulationFitOptions {
    // Initial wavenumber, the commanded laser-phase scan rate (rad per rad
    // of laser phase). Left free in the fit.
    double wavenumber_seed = 1.0;
};

// Fits V sin(k x + phi) + C to (laser phase, fraction) points. Needs >= 6
// points spanning at least one period of the seeded wavenumber.
[[nodiscard]] FitResult fit_population_fringe(std::span<const std::pair<double, double>> points,
                                              const PopulationFitOptions& options = {});

// Interferometer phase for the kicked-port fraction (1 - V cos(phi + x)) / 2
// given a population fit made in laser-phase coordinates centred on
// `scan_center`.
[[nodiscard]] double population_fit_to_interferometer_phase(const FitResult& fit, double scan_center);

struct SpatialFitOptions {
    std::optional<double> fixed_wavenumber;
    std::optional<Interval> window;
};

// Seven-parameter fit (six with a fixed wavenumber). Throws
// FringeResolvabilityError when the fringe wavelength exceeds 4 sigma_x.
[[nodiscard]] FitResult fit_spatial_fringe(const DensityProfile& profile, const SpatialFitOptions& options = {});

struct BatchFit {
    std::vector<FitResult> stage_one;
    std::vector<FitResult> stage_two;
    double median_wavenumber = 0.0;
};

// Free fits on every profile, then refits with k held at the median of the
// usable first-stage values. Throws NumericalError if more than half of the
// first-stage fits fail.
[[nodiscard]] BatchFit fit_batch_median_k(std::span<const DensityProfile> profiles,
                                          const std::optional<Interval>& window = std::nullopt, int workers = 1);

// Removes ramp * run from each phase, rewraps, then unwraps.
[[nodiscard]] PhaseSeries subtract_laser_ramp(const PhaseSeries& series, double ramp_per_run);

struct OverlapScanOptions {
    double t_min = 0.0;
    double t_max = 0.0;
    int points = 41;
    // Keep T0 + T1 + T2 + t_sep constant by moving T0; otherwise T0..T2 are
    // kept and the time of flight grows with t_sep.
    bool hold_time_of_flight = false;
};

struct OverlapScan {
    double best_time = 0.0;
    double best_contrast = 0.0;
    std::vector<double> times;
    std::vector<double> contrasts;
};

// Separation time at which the two ports' fringes line up,
// k_fringe(t) v_r t = port_phase_offset, solved for the chosen timing mode.
[[nodiscard]] double predicted_overlap_time(const InterferometerConfig& config, double port_phase_offset,
                                            bool hold_time_of_flight);

// Timing with the separation time replaced by t (and T0 adjusted when
// holding the time of flight).
[[nodiscard]] InterferometerConfig with_separation_time(const InterferometerConfig& config, double t,
                                                        bool hold_time_of_flight);

// Scans t_sep with noiseless shots, fits the fringe contrast, and refines the
// maximum. Ties go to the shortest time.
[[nodiscard]] OverlapScan optimize_overlap_time(const InterferometerConfig& config, const ShotModel& model,
                                                const OverlapScanOptions& scan);

}  // namespace bragg
