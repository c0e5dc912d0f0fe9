#include "bragg/campaign.hpp"

#include "bragg/errors.hpp"
#include "bragg/parallel.hpp"
#include "bragg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace bragg {

using nlohmann::json;

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();
constexpr double deg = pi / 180.0;

// Minimum port separation, in envelope sigmas, for the half-axis readout.
constexpr double min_port_separation_sigmas = 4.0;

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where)
{
    if (!obj.is_object()) {
        throw ConfigError(where + " must be a JSON object");
    }
    for (const auto& item : obj.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; })) {
            throw ConfigError("unknown key '" + item.key() + "' in " + where);
        }
    }
}

double number(const json& obj, const char* key, double fallback)
{
    if (!obj.contains(key)) {
        return fallback;
    }
    const json& v = obj.at(key);
    if (!v.is_number()) {
        throw ConfigError(std::string("'") + key + "' must be a number");
    }
    return v.get<double>();
}

std::optional<double> optional_number(const json& obj, const char* key)
{
    if (!obj.contains(key) || obj.at(key).is_null()) {
        return std::nullopt;
    }
    return number(obj, key, 0.0);
}

int integer(const json& obj, const char* key, int fallback)
{
    if (!obj.contains(key)) {
        return fallback;
    }
    const json& v = obj.at(key);
    if (!v.is_number_integer()) {
        throw ConfigError(std::string("'") + key + "' must be an integer");
    }
    return v.get<int>();
}

std::string text(const json& obj, const char* key, const std::string& fallback)
{
    if (!obj.contains(key)) {
        return fallback;
    }
    if (!obj.at(key).is_string()) {
        throw ConfigError(std::string("'") + key + "' must be a string");
    }
    return obj.at(key).get<std::string>();
}

const json& section(const json& doc, const char* key)
{
    static const json empty = json::object();
    return doc.contains(key) ? doc.at(key) : empty;
}

double sample_std(const std::vector<double>& v)
{
    if (v.size() < 2) {
        return nan;
    }
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) {
        ss += (x - mean) * (x - mean);
    }
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double mean_of(const std::vector<double>& v)
{
    return v.empty() ? nan : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

bool is_asymmetric(Scheme s) { return s != Scheme::symmetric; }

// Unit conversions leave ulp-level noise (25 um -> 24.999999999999996);
// 15 significant digits keeps the snapshot readable and stable.
double tidy(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.15g", v);
    return std::strtod(buf, nullptr);
}

}  // namespace

std::string to_string(Scheme scheme)
{
    switch (scheme) {
    case Scheme::symmetric:
        return "symmetric";
    case Scheme::asymmetric_separated:
        return "asymmetric-separated";
    case Scheme::asymmetric_overlapped:
        return "asymmetric-overlapped";
    }
    return "unknown";
}

Scheme scheme_from_string(const std::string& name)
{
    for (Scheme s : {Scheme::symmetric, Scheme::asymmetric_separated, Scheme::asymmetric_overlapped}) {
        if (to_string(s) == name) {
            return s;
        }
    }
    throw ConfigError("unknown scheme '" + name + "'");
}

std::string scan_key(ScanVariable variable)
{
    switch (variable) {
    case ScanVariable::none:
        return "none";
    case ScanVariable::delta_t:
        return "delta_t_us";
    case ScanVariable::t1:
        return "t1_ms";
    case ScanVariable::t_sep:
        return "t_sep_ms";
    case ScanVariable::laser_ramp:
        return "ramp_deg_per_run";
    }
    return "none";
}

ScanVariable scan_variable_from_key(const std::string& key)
{
    for (ScanVariable v : {ScanVariable::none, ScanVariable::delta_t, ScanVariable::t1, ScanVariable::t_sep,
                           ScanVariable::laser_ramp}) {
        if (scan_key(v) == key) {
            return v;
        }
    }
    throw ConfigError("unknown scan variable '" + key + "'");
}

double scan_unit(ScanVariable variable)
{
    switch (variable) {
    case ScanVariable::delta_t:
        return 1e6;
    case ScanVariable::t1:
    case ScanVariable::t_sep:
        return 1e3;
    case ScanVariable::laser_ramp:
        return 1.0 / deg;
    case ScanVariable::none:
        break;
    }
    return 1.0;
}

void CampaignConfig::validate() const
{
    if (id.empty()) {
        throw ConfigError("campaign_id must not be empty");
    }
    if (runs_per_point < 1) {
        throw ConfigError("runs_per_point must be >= 1");
    }
    if (scan_variable != ScanVariable::none && scan_values.empty()) {
        throw ConfigError("scan grid must not be empty");
    }
    if (scan_variable == ScanVariable::none && !scan_values.empty()) {
        throw ConfigError("scan values given without a scan variable");
    }
    for (double v : scan_values) {
        if (!std::isfinite(v)) {
            throw ConfigError("scan values must be finite");
        }
    }
    if (scheme == Scheme::symmetric) {
        if (scan_variable == ScanVariable::delta_t) {
            throw ConfigError("symmetric scheme cannot scan delta_t");
        }
        if (base.timing.delta_t != 0.0) {
            throw ConfigError("symmetric scheme requires delta_t = 0");
        }
        if (fringe_runs < 6) {
            throw ConfigError("fringe_runs must be >= 6");
        }
        if (runs_per_point < fringe_runs) {
            throw ConfigError("symmetric scheme needs at least fringe_runs runs per point");
        }
    }
    if (!(duty_cycle > 0.0)) {
        throw ConfigError("duty_cycle_s must be positive");
    }
    if (workers < 1) {
        throw ConfigError("workers must be >= 1");
    }
    if (overlap_scan_points < 3) {
        throw ConfigError("overlap scan needs at least 3 points");
    }
    if (time_of_flight && !(*time_of_flight > 0.0)) {
        throw ConfigError("tof_ms must be positive");
    }
    base.species.validate();
    shot.validate();
    noise.validate();
}

CampaignConfig parse_campaign_config(const json& doc)
{
    check_keys(doc,
               {"campaign_id", "scheme", "species", "bragg_order", "gravity_m_s2", "chirp_rate_hz_s", "timing", "cloud",
                "contrast", "port_phase_offset_rad", "expansion_scale", "imaging", "noise", "scan", "runs_per_point",
                "laser_ramp_deg_per_run", "fringe_runs", "master_seed", "duty_cycle_s", "workers", "phase_offset_rad",
                "laser_phases_rad", "overlap_scan_points", "output_dir"},
               "campaign config");

    CampaignConfig c;
    c.id = text(doc, "campaign_id", c.id);
    c.scheme = scheme_from_string(text(doc, "scheme", to_string(c.scheme)));

    const json& species = section(doc, "species");
    check_keys(species, {"mass_kg", "wavelength_nm"}, "species");
    c.base.species.mass = number(species, "mass_kg", rb87_mass);
    c.base.species.wavelength = number(species, "wavelength_nm", rb87_d2_wavelength * 1e9) * 1e-9;
    c.base.bragg_order = integer(doc, "bragg_order", 1);
    c.base.gravity = number(doc, "gravity_m_s2", standard_gravity);
    c.base.species.validate();
    c.base.chirp_rate = doc.contains("chirp_rate_hz_s") ? number(doc, "chirp_rate_hz_s", 0.0)
                                                        : compensating_chirp_rate(c.base);
    if (doc.contains("laser_phases_rad")) {
        const json& lp = doc.at("laser_phases_rad");
        if (!lp.is_array() || lp.size() != 3) {
            throw ConfigError("laser_phases_rad must be an array of three numbers");
        }
        for (std::size_t i = 0; i < 3; ++i) {
            if (!lp[i].is_number()) {
                throw ConfigError("laser_phases_rad must be an array of three numbers");
            }
            c.base.laser_phases[i] = lp[i].get<double>();
        }
    }

    const json& timing = section(doc, "timing");
    check_keys(timing, {"t0_ms", "t1_ms", "delta_t_us", "t_sep_ms", "tof_ms"}, "timing");
    c.base.timing.t0 = number(timing, "t0_ms", 10.0) * 1e-3;
    c.base.timing.t1 = number(timing, "t1_ms", 10.0) * 1e-3;
    c.base.timing.delta_t = number(timing, "delta_t_us", c.scheme == Scheme::symmetric ? 0.0 : 350.0) * 1e-6;
    if (const auto t_sep = optional_number(timing, "t_sep_ms")) {
        c.base.timing.t_sep = *t_sep * 1e-3;
        c.separation_time_given = true;
    }
    if (const auto tof = optional_number(timing, "tof_ms")) {
        c.time_of_flight = *tof * 1e-3;
    }

    const json& cloud = section(doc, "cloud");
    check_keys(cloud, {"sigma0_um", "temperature_nk", "atom_number", "center_um"}, "cloud");
    c.shot.cloud.sigma = number(cloud, "sigma0_um", 25.0) * 1e-6;
    c.shot.cloud.velocity_sigma = thermal_velocity_sigma(c.base.species, number(cloud, "temperature_nk", 12.0) * 1e-9);
    c.shot.cloud.atom_number = number(cloud, "atom_number", 2e6);
    c.shot.cloud.center = number(cloud, "center_um", 0.0) * 1e-6;

    c.shot.contrast = number(doc, "contrast", 0.5);
    c.shot.port_phase_offset = number(doc, "port_phase_offset_rad", pi);
    c.shot.expansion_scale = number(doc, "expansion_scale", 1.0);

    const json& imaging = section(doc, "imaging");
    check_keys(imaging, {"mode", "tilt_deg", "savgol_window", "savgol_order", "points", "window_sigmas"}, "imaging");
    c.shot.imaging.mode = imaging_mode_from_string(text(imaging, "mode", "absorption"));
    c.shot.imaging.tilt = number(imaging, "tilt_deg", 0.0) * deg;
    c.shot.imaging.savgol_window = integer(imaging, "savgol_window", 0);
    c.shot.imaging.savgol_order = integer(imaging, "savgol_order", 3);
    c.shot.points = integer(imaging, "points", 2048);
    c.shot.window_sigmas = number(imaging, "window_sigmas", 6.0);

    const json& noise = section(doc, "noise");
    check_keys(noise, {"laser_phase_rad", "camera_jitter_um", "detection_sigma", "atom_number_fraction"}, "noise");
    c.noise.laser_phase_sigma = number(noise, "laser_phase_rad", 0.0);
    c.noise.camera_jitter_sigma = number(noise, "camera_jitter_um", 0.0) * 1e-6;
    c.noise.additive_detection_sigma = number(noise, "detection_sigma", 0.0);
    c.noise.atom_number_fractional_sigma = number(noise, "atom_number_fraction", 0.0);

    if (doc.contains("scan")) {
        const json& scan = doc.at("scan");
        check_keys(scan, {"variable", "values"}, "scan");
        c.scan_variable = scan_variable_from_key(text(scan, "variable", "none"));
        if (scan.contains("values")) {
            if (!scan.at("values").is_array()) {
                throw ConfigError("scan values must be an array");
            }
            for (const json& v : scan.at("values")) {
                if (!v.is_number()) {
                    throw ConfigError("scan values must be numbers");
                }
                c.scan_values.push_back(v.get<double>() / scan_unit(c.scan_variable));
            }
        }
    }

    c.runs_per_point = integer(doc, "runs_per_point", 100);
    c.fringe_runs = integer(doc, "fringe_runs", 20);
    const double default_ramp = c.scheme == Scheme::symmetric ? 360.0 / std::max(c.fringe_runs, 1) : 16.0;
    c.laser_ramp = number(doc, "laser_ramp_deg_per_run", default_ramp) * deg;
    if (doc.contains("master_seed")) {
        const json& s = doc.at("master_seed");
        if (!s.is_number_integer()) {
            throw ConfigError("master_seed must be a non-negative integer");
        }
        if (s.is_number_unsigned()) {
            c.master_seed = s.get<std::uint64_t>();
        } else {
            const auto signed_seed = s.get<std::int64_t>();
            if (signed_seed < 0) {
                throw ConfigError("master_seed must be a non-negative integer");
            }
            c.master_seed = static_cast<std::uint64_t>(signed_seed);
        }
    }
    c.duty_cycle = number(doc, "duty_cycle_s", 11.4);
    c.workers = integer(doc, "workers", 1);
    c.phase_offset = number(doc, "phase_offset_rad", 0.0);
    c.overlap_scan_points = integer(doc, "overlap_scan_points", 41);
    c.output_dir = text(doc, "output_dir", "");

    c.validate();
    return c;
}

CampaignConfig load_campaign_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
    }
    return parse_campaign_config(doc);
}

json to_json(const CampaignConfig& c)
{
    json doc;
    doc["campaign_id"] = c.id;
    doc["scheme"] = to_string(c.scheme);
    doc["species"] = {{"mass_kg", c.base.species.mass}, {"wavelength_nm", tidy(c.base.species.wavelength * 1e9)}};
    doc["bragg_order"] = c.base.bragg_order;
    doc["gravity_m_s2"] = c.base.gravity;
    doc["chirp_rate_hz_s"] = c.base.chirp_rate;
    doc["laser_phases_rad"] = c.base.laser_phases;
    json timing = {{"t0_ms", tidy(c.base.timing.t0 * 1e3)},
                   {"t1_ms", tidy(c.base.timing.t1 * 1e3)},
                   {"delta_t_us", tidy(c.base.timing.delta_t * 1e6)}};
    if (c.separation_time_given) {
        timing["t_sep_ms"] = tidy(c.base.timing.t_sep * 1e3);
    }
    if (c.time_of_flight) {
        timing["tof_ms"] = tidy(*c.time_of_flight * 1e3);
    }
    doc["timing"] = timing;
    const double temperature = c.shot.cloud.velocity_sigma * c.shot.cloud.velocity_sigma * c.base.species.mass / boltzmann;
    doc["cloud"] = {{"sigma0_um", tidy(c.shot.cloud.sigma * 1e6)},
                    {"temperature_nk", tidy(temperature * 1e9)},
                    {"atom_number", c.shot.cloud.atom_number},
                    {"center_um", tidy(c.shot.cloud.center * 1e6)}};
    doc["contrast"] = c.shot.contrast;
    doc["port_phase_offset_rad"] = c.shot.port_phase_offset;
    doc["expansion_scale"] = c.shot.expansion_scale;
    doc["imaging"] = {{"mode", to_string(c.shot.imaging.mode)},
                      {"tilt_deg", tidy(c.shot.imaging.tilt / deg)},
                      {"savgol_window", c.shot.imaging.savgol_window},
                      {"savgol_order", c.shot.imaging.savgol_order},
                      {"points", c.shot.points},
                      {"window_sigmas", c.shot.window_sigmas}};
    doc["noise"] = {{"laser_phase_rad", c.noise.laser_phase_sigma},
                    {"camera_jitter_um", tidy(c.noise.camera_jitter_sigma * 1e6)},
                    {"detection_sigma", c.noise.additive_detection_sigma},
                    {"atom_number_fraction", c.noise.atom_number_fractional_sigma}};
    if (c.scan_variable != ScanVariable::none) {
        json values = json::array();
        for (double v : c.scan_values) {
            values.push_back(tidy(v * scan_unit(c.scan_variable)));
        }
        doc["scan"] = {{"variable", scan_key(c.scan_variable)}, {"values", values}};
    }
    doc["runs_per_point"] = c.runs_per_point;
    doc["laser_ramp_deg_per_run"] = tidy(c.laser_ramp / deg);
    doc["fringe_runs"] = c.fringe_runs;
    doc["master_seed"] = c.master_seed;
    doc["duty_cycle_s"] = c.duty_cycle;
    doc["phase_offset_rad"] = c.phase_offset;
    doc["overlap_scan_points"] = c.overlap_scan_points;
    return doc;
}

PointPlan plan_point(const CampaignConfig& config, std::size_t point)
{
    if (point >= config.point_count()) {
        throw ConfigError("scan point out of range");
    }
    PointPlan plan;
    plan.index = point;
    plan.config = config.base;
    plan.laser_ramp = config.laser_ramp;
    SequenceTiming& timing = plan.config.timing;

    bool t_sep_given = config.separation_time_given;
    if (config.scan_variable != ScanVariable::none) {
        const double v = config.scan_values[point];
        plan.scan_value = v;
        switch (config.scan_variable) {
        case ScanVariable::delta_t:
            timing.delta_t = v;
            break;
        case ScanVariable::t1:
            timing.t1 = v;
            break;
        case ScanVariable::t_sep:
            timing.t_sep = v;
            t_sep_given = true;
            break;
        case ScanVariable::laser_ramp:
            plan.laser_ramp = v;
            break;
        case ScanVariable::none:
            break;
        }
    }

    if (config.scheme == Scheme::symmetric && timing.delta_t != 0.0) {
        throw ConfigError("symmetric scheme requires delta_t = 0");
    }
    if (is_asymmetric(config.scheme) && timing.delta_t == 0.0) {
        throw ConfigError(to_string(config.scheme) + " scheme requires delta_t != 0");
    }

    const std::optional<double> tof = config.time_of_flight;
    if (config.scheme == Scheme::asymmetric_overlapped && !t_sep_given) {
        if (tof) {
            timing.t_sep = 0.0;
            timing.t0 = *tof - timing.t1 - timing.t2();
        }
        plan.config.validate();
        const bool hold = tof.has_value();
        const double predicted = predicted_overlap_time(plan.config, config.shot.port_phase_offset, hold);
        OverlapScanOptions scan;
        scan.t_min = 0.5 * predicted;
        scan.t_max = 1.5 * predicted;
        scan.points = config.overlap_scan_points;
        scan.hold_time_of_flight = hold;
        const OverlapScan best = optimize_overlap_time(plan.config, config.shot, scan);
        plan.config = with_separation_time(plan.config, best.best_time, hold);
        plan.optimized_separation = true;
    } else if (tof) {
        if (t_sep_given) {
            timing.t0 = *tof - timing.t1 - timing.t2() - timing.t_sep;
        } else {
            timing.t_sep = *tof - timing.before_separation();
        }
    }
    if (timing.t0 < 0.0 || timing.t_sep < 0.0) {
        throw ConfigError("timing does not fit in the time-of-flight budget");
    }
    plan.config.validate();

    plan.geometry = port_geometry(plan.config, config.shot);
    const PortGeometry& g = plan.geometry;
    if (config.scheme == Scheme::asymmetric_overlapped) {
        const double mismatch = wrap_phase(g.wavenumber * g.separation - g.port_phase_offset);
        if (std::abs(mismatch) > 0.5 * pi) {
            throw ConfigError("overlapped scheme needs t_sep near the overlap optimum");
        }
    } else if (g.separation < min_port_separation_sigmas * g.sigma) {
        throw ConfigError(to_string(config.scheme) + " scheme needs the ports at least 4 sigma apart; increase t_sep");
    }

    plan.base_phase = wrap_phase(mz_phase(plan.config).total + config.phase_offset);
    return plan;
}

namespace {

RunRecord base_record(const CampaignConfig& config, const PointPlan& plan, int run)
{
    RunRecord r;
    r.campaign_id = config.id;
    r.point = plan.index;
    r.run = run;
    r.scheme = config.scheme;
    r.timing = plan.config.timing;
    r.scan_value = plan.scan_value;
    r.phase = nan;
    r.fraction = nan;
    r.contrast = nan;
    r.wavenumber = nan;
    r.rss = nan;
    r.seed = shot_seed(config.master_seed, plan.index, static_cast<std::uint64_t>(run));
    return r;
}

NoiseModel shot_noise(const CampaignConfig& config, std::uint64_t seed)
{
    NoiseModel n = config.noise;
    n.rng_seed = seed;
    return n;
}

void run_asymmetric(const CampaignConfig& config, PointSummary& summary, std::vector<RunRecord>& records)
{
    const PointPlan& plan = summary.plan;
    const auto runs = static_cast<std::size_t>(config.runs_per_point);
    std::vector<DensityProfile> profiles(runs);
    parallel_for(runs, config.workers, [&](std::size_t r) {
        const std::uint64_t seed = records[r].seed;
        const double phase = plan.base_phase + plan.laser_ramp * static_cast<double>(r);
        profiles[r] = synthesize_ports(plan.config, config.shot, phase, shot_noise(config, seed));
    });

    std::optional<Interval> window;
    if (config.scheme == Scheme::asymmetric_separated) {
        window = Interval{plan.geometry.midpoint(), std::numeric_limits<double>::infinity()};
    }
    const BatchFit batch = fit_batch_median_k(profiles, window, config.workers);

    PhaseSeries raw;
    raw.duty_cycle = config.duty_cycle;
    std::vector<double> wavelengths;
    std::vector<double> contrasts;
    for (std::size_t r = 0; r < runs; ++r) {
        RunRecord& rec = records[r];
        const FitResult& free_fit = batch.stage_one[r];
        if (free_fit.usable()) {
            rec.wavenumber = free_fit.wavenumber();
            wavelengths.push_back(two_pi / rec.wavenumber);
        }
        const FitResult& fit = batch.stage_two[r];
        rec.converged = fit.usable();
        rec.rss = fit.rss;
        rec.iterations = fit.iterations;
        if (!fit.values.empty()) {
            rec.contrast = fit.contrast();
        }
        if (rec.converged) {
            contrasts.push_back(rec.contrast);
            PhaseRecord p;
            p.run = static_cast<int>(r);
            p.timestamp = static_cast<double>(r) * config.duty_cycle;
            p.phase = fit.phase();
            p.contrast = rec.contrast;
            p.rss = fit.rss;
            raw.records.push_back(p);
        }
    }
    if (!raw.records.empty()) {
        summary.series = subtract_laser_ramp(raw, plan.laser_ramp);
        std::size_t i = 0;
        for (RunRecord& rec : records) {
            if (rec.converged) {
                rec.phase = summary.series.records[i++].phase;
            }
        }
    } else {
        summary.series = raw;
    }
    summary.analytic_wavelength = fringe_wavelength(plan.config) * config.shot.expansion_scale;
    summary.mean_wavelength = mean_of(wavelengths);
    summary.std_wavelength = sample_std(wavelengths);
    summary.mean_contrast = mean_of(contrasts);
    summary.std_contrast = sample_std(contrasts);
    summary.usable_runs = static_cast<int>(raw.records.size());
}

void run_symmetric(const CampaignConfig& config, PointSummary& summary, std::vector<RunRecord>& records)
{
    const PointPlan& plan = summary.plan;
    const auto runs = static_cast<std::size_t>(config.runs_per_point);
    parallel_for(runs, config.workers, [&](std::size_t r) {
        const double phase = plan.base_phase + plan.laser_ramp * static_cast<double>(r);
        const DensityProfile profile =
            synthesize_ports(plan.config, config.shot, phase, shot_noise(config, records[r].seed));
        const double mid = plan.geometry.midpoint();
        records[r].fraction =
            population_readout(profile, Interval{mid, profile.back()}, Interval{profile.front(), mid});
    });

    const int f = config.fringe_runs;
    const std::size_t blocks = runs / static_cast<std::size_t>(f);
    std::vector<FitResult> fits(blocks);
    parallel_for(blocks, config.workers, [&](std::size_t b) {
        std::vector<std::pair<double, double>> points(static_cast<std::size_t>(f));
        for (int j = 0; j < f; ++j) {
            const double u = (j - 0.5 * (f - 1)) * plan.laser_ramp;
            points[static_cast<std::size_t>(j)] = {u, records[b * static_cast<std::size_t>(f) + static_cast<std::size_t>(j)].fraction};
        }
        fits[b] = fit_population_fringe(points, {1.0});
    });

    PhaseSeries series;
    series.runs_per_sample = f;
    series.duty_cycle = config.duty_cycle;
    std::vector<double> contrasts;
    for (std::size_t b = 0; b < blocks; ++b) {
        const FitResult& fit = fits[b];
        const bool ok = fit.usable();
        const double center = plan.laser_ramp * (static_cast<double>(b) * f + 0.5 * (f - 1));
        const double phase = ok ? population_fit_to_interferometer_phase(fit, center) : nan;
        const double contrast = 2.0 * std::abs(fit.values[pp_visibility]);
        for (int j = 0; j < f; ++j) {
            RunRecord& rec = records[b * static_cast<std::size_t>(f) + static_cast<std::size_t>(j)];
            rec.converged = ok;
            rec.contrast = contrast;
            rec.rss = fit.rss;
            rec.iterations = fit.iterations;
            rec.phase = phase;
        }
        if (ok) {
            contrasts.push_back(contrast);
            PhaseRecord p;
            p.run = static_cast<int>(b) * f;
            p.timestamp = p.run * config.duty_cycle;
            p.phase = phase;
            p.contrast = contrast;
            p.rss = fit.rss;
            series.records.push_back(p);
        }
    }
    // Block phases are wrapped; unwrap them onto the branch of the first.
    std::vector<double> phases = series.phases();
    phases = unwrap_phases(phases);
    for (std::size_t i = 0; i < phases.size(); ++i) {
        series.records[i].phase = phases[i];
    }
    std::size_t i = 0;
    for (std::size_t b = 0; b < blocks; ++b) {
        if (!fits[b].usable()) {
            continue;
        }
        for (int j = 0; j < f; ++j) {
            records[b * static_cast<std::size_t>(f) + static_cast<std::size_t>(j)].phase = phases[i];
        }
        ++i;
    }
    summary.series = series;
    summary.analytic_wavelength = nan;
    summary.mean_wavelength = nan;
    summary.std_wavelength = nan;
    summary.mean_contrast = mean_of(contrasts);
    summary.std_contrast = sample_std(contrasts);
    summary.usable_runs = static_cast<int>(series.records.size()) * f;
}

}  // namespace

CampaignResult execute_campaign(const CampaignConfig& config)
{
    config.validate();
    CampaignResult result;
    result.config = config;

    const std::size_t points = config.point_count();
    std::vector<PointPlan> plans(points);
    parallel_for(points, config.workers, [&](std::size_t p) { plans[p] = plan_point(config, p); });

    for (std::size_t p = 0; p < points; ++p) {
        PointSummary summary;
        summary.plan = plans[p];
        summary.runs = config.runs_per_point;
        std::vector<RunRecord> records;
        records.reserve(static_cast<std::size_t>(config.runs_per_point));
        for (int r = 0; r < config.runs_per_point; ++r) {
            records.push_back(base_record(config, summary.plan, r));
        }
        if (config.scheme == Scheme::symmetric) {
            run_symmetric(config, summary, records);
        } else {
            run_asymmetric(config, summary, records);
        }
        summary.phase_std = sample_std(summary.series.phases());
        if (summary.series.size() >= 2) {
            summary.allan = allan_deviation(summary.series);
            try {
                summary.noise = fit_noise_slope(summary.allan, config.duty_cycle);
            } catch (const ConfigError&) {
                summary.noise.reset();
            }
        }
        result.runs.insert(result.runs.end(), records.begin(), records.end());
        result.points.push_back(std::move(summary));
    }
    return result;
}

namespace {

std::string fmt(double v) { return format_double(v); }

void write_runs(std::ostream& out, const CampaignResult& result)
{
    out << "campaign_id,point,run,scheme,t0_s,t1_s,t2_s,t_sep_s,tof_s,scan_value,phase_rad,fraction,contrast,"
           "wavenumber_per_m,converged,rss,iterations,seed\n";
    const double unit = scan_unit(result.config.scan_variable);
    for (const RunRecord& r : result.runs) {
        out << r.campaign_id << ',' << r.point << ',' << r.run << ',' << to_string(r.scheme) << ',' << fmt(r.timing.t0)
            << ',' << fmt(r.timing.t1) << ',' << fmt(r.timing.t2()) << ',' << fmt(r.timing.t_sep) << ','
            << fmt(r.timing.time_of_flight()) << ',' << fmt(r.scan_value * unit) << ',' << fmt(r.phase) << ','
            << fmt(r.fraction) << ',' << fmt(r.contrast) << ',' << fmt(r.wavenumber) << ',' << (r.converged ? 1 : 0)
            << ',' << fmt(r.rss) << ',' << r.iterations << ',' << r.seed << '\n';
    }
}

void write_points(std::ostream& out, const CampaignResult& result)
{
    out << "point,scan_variable,scan_value,runs,usable_runs,t0_s,t1_s,t2_s,t_sep_s,tof_s,optimized_t_sep,"
           "analytic_wavelength_m,mean_wavelength_m,std_wavelength_m,mean_contrast,std_contrast,model_contrast,"
           "phase_std_rad,slope,slope_sigma,sigma_1run_rad,density_rad_rthz,density_ci_low,density_ci_high\n";
    const double unit = scan_unit(result.config.scan_variable);
    for (const PointSummary& s : result.points) {
        const SequenceTiming& t = s.plan.config.timing;
        const NoiseSummary n = s.noise.value_or(NoiseSummary{nan, nan, nan, nan, nan, nan, nan, nan, 0.0, 0});
        out << s.plan.index << ',' << scan_key(result.config.scan_variable) << ',' << fmt(s.plan.scan_value * unit)
            << ',' << s.runs << ',' << s.usable_runs << ',' << fmt(t.t0) << ',' << fmt(t.t1) << ',' << fmt(t.t2())
            << ',' << fmt(t.t_sep) << ',' << fmt(t.time_of_flight()) << ',' << (s.plan.optimized_separation ? 1 : 0)
            << ',' << fmt(s.analytic_wavelength) << ',' << fmt(s.mean_wavelength) << ',' << fmt(s.std_wavelength)
            << ',' << fmt(s.mean_contrast) << ',' << fmt(s.std_contrast) << ',' << fmt(s.plan.geometry.contrast)
            << ',' << fmt(s.phase_std) << ',' << fmt(n.slope) << ',' << fmt(n.slope_sigma) << ','
            << fmt(n.sigma_at_1_run) << ',' << fmt(n.noise_density) << ',' << fmt(n.density_ci_low) << ','
            << fmt(n.density_ci_high) << '\n';
    }
}

void write_phases(std::ostream& out, const CampaignResult& result)
{
    out << "point,sample,run,timestamp_s,phase_rad,contrast\n";
    for (const PointSummary& s : result.points) {
        for (std::size_t i = 0; i < s.series.records.size(); ++i) {
            const PhaseRecord& p = s.series.records[i];
            out << s.plan.index << ',' << i << ',' << p.run << ',' << fmt(p.timestamp) << ',' << fmt(p.phase) << ','
                << fmt(p.contrast) << '\n';
        }
    }
}

void write_allan(std::ostream& out, const CampaignResult& result)
{
    out << "point,tau_runs,tau_seconds,adev_rad,ci_low,ci_high,pairs\n";
    for (const PointSummary& s : result.points) {
        for (const AllanPoint& a : s.allan.points) {
            out << s.plan.index << ',' << a.tau_runs << ',' << fmt(a.tau_seconds) << ',' << fmt(a.deviation) << ','
                << fmt(a.ci_low) << ',' << fmt(a.ci_high) << ',' << a.pairs << '\n';
        }
    }
}

template <typename Writer>
void write_file(const std::filesystem::path& path, Writer&& writer)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot write " + path.string());
    }
    writer(out);
    out.flush();
    if (!out) {
        throw ConfigError("write failed for " + path.string());
    }
}

std::filesystem::path staging_path(const std::filesystem::path& target)
{
    std::filesystem::path p = target;
    p += ".partial";
    return p;
}

// Moves a finished staging path over the target.
void commit(const std::filesystem::path& staging, const std::filesystem::path& target)
{
    std::error_code ec;
    if (std::filesystem::is_directory(target)) {
        std::filesystem::remove_all(target, ec);
    }
    std::filesystem::rename(staging, target, ec);
    if (ec) {
        std::filesystem::remove_all(staging, ec);
        throw ConfigError("cannot move output into place at " + target.string());
    }
}

}  // namespace

void write_campaign(const CampaignResult& result, const std::filesystem::path& dir)
{
    if (dir.empty()) {
        throw ConfigError("no output directory given");
    }
    const std::filesystem::path absolute = std::filesystem::absolute(dir);
    const std::filesystem::path staging = staging_path(absolute);
    std::error_code ec;
    std::filesystem::remove_all(staging, ec);
    if (!std::filesystem::create_directories(staging, ec) || ec) {
        throw ConfigError("output directory is not writable: " + absolute.string());
    }
    try {
        write_file(staging / "config.json", [&](std::ostream& o) { o << to_json(result.config).dump(2) << '\n'; });
        write_file(staging / "runs.csv", [&](std::ostream& o) { write_runs(o, result); });
        write_file(staging / "points.csv", [&](std::ostream& o) { write_points(o, result); });
        write_file(staging / "phases.csv", [&](std::ostream& o) { write_phases(o, result); });
        write_file(staging / "allan.csv", [&](std::ostream& o) { write_allan(o, result); });
        json manifest = {{"campaign_id", result.config.id},
                         {"code_version", code_version},
                         {"master_seed", result.config.master_seed},
                         {"scheme", to_string(result.config.scheme)},
                         {"scan_variable", scan_key(result.config.scan_variable)},
                         {"points", result.points.size()},
                         {"runs_per_point", result.config.runs_per_point},
                         {"files", {"config.json", "runs.csv", "points.csv", "phases.csv", "allan.csv"}}};
        write_file(staging / "manifest.json", [&](std::ostream& o) { o << manifest.dump(2) << '\n'; });
    } catch (...) {
        std::filesystem::remove_all(staging, ec);
        throw;
    }
    commit(staging, absolute);
}

CampaignResult run_campaign(const CampaignConfig& config)
{
    if (config.output_dir.empty()) {
        throw ConfigError("campaign needs an output directory");
    }
    CampaignResult result = execute_campaign(config);
    write_campaign(result, config.output_dir);
    return result;
}

FigureId figure_from_string(const std::string& name)
{
    static const std::map<std::string, FigureId> ids{
        {"f2", FigureId::f2}, {"f3", FigureId::f3}, {"f4", FigureId::f4}, {"f5", FigureId::f5}};
    const auto it = ids.find(name);
    if (it == ids.end()) {
        throw ConfigError("unknown figure '" + name + "' (expected f2, f3, f4 or f5)");
    }
    return it->second;
}

namespace {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t column(const std::string& name) const
    {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            throw ConfigError("campaign table lacks column " + name);
        }
        return static_cast<std::size_t>(it - header.begin());
    }
};

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        out.push_back(cell);
    }
    return out;
}

Table read_table(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("missing campaign file " + path.string());
    }
    Table t;
    std::string line;
    if (!std::getline(in, line)) {
        throw ConfigError("empty campaign file " + path.string());
    }
    t.header = split(line);
    while (std::getline(in, line)) {
        if (!line.empty()) {
            t.rows.push_back(split(line));
        }
    }
    return t;
}

double to_double(const std::string& s)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        return v;
    } catch (const std::exception&) {
        if (s == "nan" || s == "-nan") {
            return nan;
        }
        throw ConfigError("malformed number '" + s + "' in campaign table");
    }
}

struct Campaign {
    std::filesystem::path dir;
    Scheme scheme;
    ScanVariable scan;
    Table points;
    Table allan;
};

Campaign load_campaign(const std::filesystem::path& dir)
{
    std::ifstream in(dir / "manifest.json");
    if (!in) {
        throw ConfigError("missing campaign: no manifest in " + dir.string());
    }
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("invalid manifest in " + dir.string() + ": " + e.what());
    }
    Campaign c;
    c.dir = dir;
    c.scheme = scheme_from_string(manifest.at("scheme").get<std::string>());
    c.scan = scan_variable_from_key(manifest.at("scan_variable").get<std::string>());
    c.points = read_table(dir / "points.csv");
    c.allan = read_table(dir / "allan.csv");
    if (c.points.rows.empty()) {
        throw ConfigError("empty campaign in " + dir.string());
    }
    return c;
}

void write_atomically(const std::filesystem::path& out, const std::string& content)
{
    const std::filesystem::path absolute = std::filesystem::absolute(out);
    const std::filesystem::path staging = staging_path(absolute);
    write_file(staging, [&](std::ostream& o) { o << content; });
    std::error_code ec;
    std::filesystem::rename(staging, absolute, ec);
    if (ec) {
        std::filesystem::remove(staging, ec);
        throw ConfigError("cannot write " + absolute.string());
    }
}

std::string wavelength_table(const std::vector<Campaign>& campaigns, FigureId figure)
{
    std::ostringstream out;
    if (figure == FigureId::f2) {
        out << "delta_t_us,tof_ms,runs,mean_wavelength_um,std_wavelength_um,analytic_wavelength_um,mean_contrast\n";
    } else {
        out << "delta_t_us,tof_ms,wavelength_um,phase_std_rad,adev_1run_rad,adev_ci_low,adev_ci_high,"
               "mean_contrast,model_contrast\n";
    }
    for (const Campaign& c : campaigns) {
        const Table& p = c.points;
        const std::size_t i_point = p.column("point");
        const std::size_t i_dt = p.column("scan_value");
        const std::size_t i_tof = p.column("tof_s");
        for (const auto& row : p.rows) {
            const double dt = to_double(row[i_dt]);
            const double tof_ms = to_double(row[i_tof]) * 1e3;
            const double mean_um = to_double(row[p.column("mean_wavelength_m")]) * 1e6;
            if (figure == FigureId::f2) {
                out << fmt(dt) << ',' << fmt(tof_ms) << ',' << row[p.column("runs")] << ',' << fmt(mean_um) << ','
                    << fmt(to_double(row[p.column("std_wavelength_m")]) * 1e6) << ','
                    << fmt(to_double(row[p.column("analytic_wavelength_m")]) * 1e6) << ','
                    << row[p.column("mean_contrast")] << '\n';
                continue;
            }
            std::string adev = "nan", lo = "nan", hi = "nan";
            const Table& a = c.allan;
            for (const auto& arow : a.rows) {
                if (arow[a.column("point")] == row[i_point] && arow[a.column("tau_runs")] == "1") {
                    adev = arow[a.column("adev_rad")];
                    lo = arow[a.column("ci_low")];
                    hi = arow[a.column("ci_high")];
                }
            }
            out << fmt(dt) << ',' << fmt(tof_ms) << ',' << fmt(mean_um) << ',' << row[p.column("phase_std_rad")]
                << ',' << adev << ',' << lo << ',' << hi << ',' << row[p.column("mean_contrast")] << ','
                << row[p.column("model_contrast")] << '\n';
        }
    }
    return out.str();
}

std::string allan_table(const std::vector<Campaign>& campaigns)
{
    std::ostringstream out;
    out << "scheme,t1_ms,tau_runs,tau_seconds,adev_rad,ci_low,ci_high,density_rad_rthz,density_ci_low,"
           "density_ci_high\n";
    for (const Campaign& c : campaigns) {
        const Table& p = c.points;
        const Table& a = c.allan;
        std::map<std::string, const std::vector<std::string>*> by_point;
        for (const auto& row : p.rows) {
            by_point[row[p.column("point")]] = &row;
        }
        for (const auto& arow : a.rows) {
            const auto it = by_point.find(arow[a.column("point")]);
            if (it == by_point.end()) {
                continue;
            }
            const auto& row = *it->second;
            out << to_string(c.scheme) << ',' << fmt(to_double(row[p.column("t1_s")]) * 1e3) << ','
                << arow[a.column("tau_runs")] << ',' << arow[a.column("tau_seconds")] << ','
                << arow[a.column("adev_rad")] << ',' << arow[a.column("ci_low")] << ',' << arow[a.column("ci_high")]
                << ',' << row[p.column("density_rad_rthz")] << ',' << row[p.column("density_ci_low")] << ','
                << row[p.column("density_ci_high")] << '\n';
        }
    }
    return out.str();
}

}  // namespace

void figure_data(const std::vector<std::filesystem::path>& dirs, FigureId figure, const std::filesystem::path& out)
{
    std::vector<Campaign> campaigns;
    for (const auto& dir : dirs) {
        campaigns.push_back(load_campaign(dir));
    }

    std::string content;
    if (figure == FigureId::f2 || figure == FigureId::f3) {
        const std::string name = figure == FigureId::f2 ? "f2" : "f3";
        if (campaigns.empty()) {
            throw ConfigError("missing campaign: figure " + name +
                              " requires an asymmetric wavelength-scan campaign (scan delta_t_us)");
        }
        for (const Campaign& c : campaigns) {
            if (c.scan != ScanVariable::delta_t || !is_asymmetric(c.scheme)) {
                throw ConfigError("figure " + name + " requires an asymmetric wavelength-scan campaign (scan delta_t_us); " +
                                  c.dir.string() + " is a " + to_string(c.scheme) + " campaign scanning " +
                                  scan_key(c.scan));
            }
        }
        content = wavelength_table(campaigns, figure);
    } else {
        const bool f4 = figure == FigureId::f4;
        const std::string name = f4 ? "f4" : "f5";
        const Scheme first = f4 ? Scheme::symmetric : Scheme::asymmetric_overlapped;
        const Scheme second = Scheme::asymmetric_separated;
        bool have_first = false;
        bool have_second = false;
        for (const Campaign& c : campaigns) {
            if (c.scan != ScanVariable::t1 || (c.scheme != first && c.scheme != second)) {
                throw ConfigError("figure " + name + " takes only " + to_string(first) + " and " + to_string(second) +
                                  " T-scan campaigns (scan t1_ms); " + c.dir.string() + " is a " +
                                  to_string(c.scheme) + " campaign scanning " + scan_key(c.scan));
            }
            if (c.allan.rows.empty()) {
                throw ConfigError("empty campaign: no Allan points in " + c.dir.string());
            }
            have_first = have_first || c.scheme == first;
            have_second = have_second || c.scheme == second;
        }
        if (!have_first || !have_second) {
            throw ConfigError("missing campaign: figure " + name + " requires a " +
                              to_string(have_first ? second : first) + " T-scan campaign (scan t1_ms)");
        }
        content = allan_table(campaigns);
    }
    write_atomically(out, content);
}

}  // namespace bragg
