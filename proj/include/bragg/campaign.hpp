#pragma once

// Seeded Monte Carlo campaigns: shot synthesis, phase extraction per scheme,
// Allan analysis, and CSV output.

#include "bragg/extraction.hpp"
#include "bragg/physics.hpp"
#include "bragg/shot.hpp"
#include "bragg/stability.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bragg {

inline constexpr const char* code_version = "bragg 0.1.0";

enum class Scheme { symmetric, asymmetric_separated, asymmetric_overlapped };
enum class ScanVariable { none, delta_t, t1, t_sep, laser_ramp };

[[nodiscard]] std::string to_string(Scheme scheme);
[[nodiscard]] Scheme scheme_from_string(const std::string& name);
// Config key of a scan variable, e.g. "delta_t_us".
[[nodiscard]] std::string scan_key(ScanVariable variable);
[[nodiscard]] ScanVariable scan_variable_from_key(const std::string& key);
// Factor from SI to the unit of scan_key (1e6 for delta_t_us, ...).
[[nodiscard]] double scan_unit(ScanVariable variable);

struct CampaignConfig {
    std::string id = "campaign";
    Scheme scheme = Scheme::asymmetric_separated;
    InterferometerConfig base;
    // When set, T0 (or t_sep for separated readout) absorbs timing changes so
    // that release-to-imaging stays at this value.
    std::optional<double> time_of_flight;
    // Explicit separation time. Overlapped campaigns otherwise use the
    // optimizer's value.
    bool separation_time_given = false;
    double phase_offset = 0.0;  // added to the modelled interferometer phase
    ShotModel shot;
    NoiseModel noise;
    ScanVariable scan_variable = ScanVariable::none;
    std::vector<double> scan_values;  // SI (rad per run for the ramp)
    int runs_per_point = 100;
    double laser_ramp = 0.0;   // rad per run
    int fringe_runs = 20;      // runs per population fringe
    std::uint64_t master_seed = 1;
    double duty_cycle = 11.4;
    int overlap_scan_points = 41;
    std::filesystem::path output_dir;
    int workers = 1;

    [[nodiscard]] std::size_t point_count() const { return scan_values.empty() ? 1 : scan_values.size(); }
    void validate() const;
};

// JSON keys carry unit suffixes (t1_ms, delta_t_us, sigma0_um, ...).
[[nodiscard]] CampaignConfig parse_campaign_config(const nlohmann::json& doc);
[[nodiscard]] CampaignConfig load_campaign_config(const std::filesystem::path& path);
[[nodiscard]] nlohmann::json to_json(const CampaignConfig& config);

// Timing and readout geometry of one scan point.
struct PointPlan {
    std::size_t index = 0;
    double scan_value = 0.0;
    InterferometerConfig config;
    double laser_ramp = 0.0;
    double base_phase = 0.0;
    PortGeometry geometry;
    bool optimized_separation = false;
};

[[nodiscard]] PointPlan plan_point(const CampaignConfig& config, std::size_t point);

struct RunRecord {
    std::string campaign_id;
    std::size_t point = 0;
    int run = 0;
    Scheme scheme = Scheme::asymmetric_separated;
    SequenceTiming timing;
    double scan_value = 0.0;
    double phase = 0.0;
    double fraction = 0.0;     // kicked-port population (symmetric readout)
    double contrast = 0.0;
    double wavenumber = 0.0;   // first-stage free fit
    bool converged = false;
    double rss = 0.0;
    int iterations = 0;
    std::uint64_t seed = 0;
};

struct PointSummary {
    PointPlan plan;
    int runs = 0;
    int usable_runs = 0;
    double analytic_wavelength = 0.0;
    double mean_wavelength = 0.0;
    double std_wavelength = 0.0;
    double mean_contrast = 0.0;
    double std_contrast = 0.0;
    double phase_std = 0.0;
    PhaseSeries series;
    AllanCurve allan;
    std::optional<NoiseSummary> noise;
};

struct CampaignResult {
    CampaignConfig config;
    std::vector<RunRecord> runs;
    std::vector<PointSummary> points;
};

// Runs every shot. Output depends only on the config and master seed.
[[nodiscard]] CampaignResult execute_campaign(const CampaignConfig& config);

// Writes config.json, runs.csv, points.csv, phases.csv, allan.csv and
// manifest.json into `dir`, replacing it atomically.
void write_campaign(const CampaignResult& result, const std::filesystem::path& dir);

// execute_campaign followed by write_campaign into config.output_dir.
CampaignResult run_campaign(const CampaignConfig& config);

enum class FigureId { f2, f3, f4, f5 };
[[nodiscard]] FigureId figure_from_string(const std::string& name);

// Aggregates finished campaign directories into one plot-ready CSV. The file
// is written atomically; on error nothing is written.
void figure_data(const std::vector<std::filesystem::path>& campaigns, FigureId figure,
                 const std::filesystem::path& out);

}  // namespace bragg
