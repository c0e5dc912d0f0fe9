// Command-line front end: single shots, fits, Allan curves, overlap scans,
// campaigns and figure tables.

#include "bragg/campaign.hpp"
#include "bragg/errors.hpp"
#include "bragg/extraction.hpp"
#include "bragg/profile.hpp"
#include "bragg/rng.hpp"
#include "bragg/stability.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace bragg;

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string config;
    std::optional<int> workers;
};

CampaignConfig load_config(const Globals& g)
{
    CampaignConfig config = g.config.empty() ? parse_campaign_config(nlohmann::json::object())
                                             : load_campaign_config(g.config);
    if (g.seed) {
        config.master_seed = *g.seed;
    }
    if (g.workers) {
        if (*g.workers < 1) {
            throw ConfigError("--workers must be >= 1");
        }
        config.workers = *g.workers;
    }
    return config;
}

// Runs `body` with stdout or the --out file as the destination.
template <typename Body>
void with_output(const std::string& path, Body&& body)
{
    if (path.empty() || path == "-") {
        body(std::cout);
        return;
    }
    std::ostringstream buffer;
    body(buffer);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot write " + path);
    }
    out << buffer.str();
}

std::vector<double> read_phase_column(const std::string& path, const std::string& column)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open " + path);
    }
    std::vector<double> phases;
    std::string line;
    std::size_t index = 0;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        if (first) {
            first = false;
            bool numeric = true;
            try {
                std::size_t used = 0;
                std::stod(cells.at(0), &used);
            } catch (const std::exception&) {
                numeric = false;
            }
            if (!numeric) {
                const auto it = std::find(cells.begin(), cells.end(), column);
                if (it == cells.end()) {
                    if (cells.size() != 1) {
                        throw ConfigError("phase file has no column " + column);
                    }
                    index = 0;
                } else {
                    index = static_cast<std::size_t>(it - cells.begin());
                }
                continue;
            }
        }
        if (index >= cells.size()) {
            throw ConfigError("short row in " + path);
        }
        try {
            phases.push_back(std::stod(cells[index]));
        } catch (const std::exception&) {
            throw ConfigError("malformed phase value '" + cells[index] + "' in " + path);
        }
    }
    return phases;
}

int run(int argc, char** argv)
{
    CLI::App app{"Asymmetric Bragg interferometer simulator and phase-noise analysis"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Master seed");
    app.add_option("--out", g.out, "Output file or directory");
    app.add_option("--config", g.config, "Campaign config (JSON)");
    app.add_option("--workers", g.workers, "Worker threads");
    app.set_version_flag("--version", code_version);

    auto* simulate = app.add_subcommand("simulate", "Render one shot as a profile CSV");
    simulate->fallthrough();
    std::size_t sim_point = 0;
    int sim_run = 0;
    std::optional<double> sim_phase;
    simulate->add_option("--point", sim_point, "Scan point of the config");
    simulate->add_option("--run", sim_run, "Run index (seeds the noise)");
    simulate->add_option("--phase", sim_phase, "Interferometer phase in rad (default: modelled phase + ramp)");

    auto* fit = app.add_subcommand("fit", "Fit a profile CSV");
    fit->fallthrough();
    std::string fit_input;
    std::optional<double> fit_k;
    std::vector<double> fit_window;
    fit->add_option("profile", fit_input, "Profile CSV (position_m,density)")->required();
    fit->add_option("--wavenumber", fit_k, "Hold k fixed (rad/m)");
    fit->add_option("--window", fit_window, "Fit window lo hi (m)")->expected(2);

    auto* allan = app.add_subcommand("allan", "Allan deviation of a phase series");
    allan->fallthrough();
    std::string allan_input;
    std::string allan_column = "phase_rad";
    int allan_rps = 1;
    double allan_duty = 11.4;
    bool allan_overlapping = false;
    allan->add_option("phases", allan_input, "CSV with one phase per line or a phase_rad column")->required();
    allan->add_option("--column", allan_column, "Column holding the phases");
    allan->add_option("--runs-per-sample", allan_rps, "Runs per phase sample");
    allan->add_option("--duty-cycle", allan_duty, "Seconds per run");
    allan->add_flag("--overlapping", allan_overlapping, "Overlapping estimator");

    auto* overlap = app.add_subcommand("overlap-scan", "Fringe contrast versus separation time");
    overlap->fallthrough();
    std::optional<double> ov_min;
    std::optional<double> ov_max;
    int ov_points = 41;
    std::size_t ov_point = 0;
    overlap->add_option("--t-min-ms", ov_min, "Scan start (default: half the predicted optimum)");
    overlap->add_option("--t-max-ms", ov_max, "Scan end (default: 1.5 x the predicted optimum)");
    overlap->add_option("--points", ov_points, "Grid points");
    overlap->add_option("--point", ov_point, "Scan point of the config");

    auto* campaign = app.add_subcommand("campaign", "Run a full campaign");
    campaign->fallthrough();

    auto* figure = app.add_subcommand("figure", "Aggregate campaigns into a figure table");
    figure->fallthrough();
    std::string figure_id;
    std::vector<std::string> figure_dirs;
    figure->add_option("id", figure_id, "f2, f3, f4 or f5")->required();
    figure->add_option("campaigns", figure_dirs, "Campaign output directories");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (*simulate) {
        const CampaignConfig config = load_config(g);
        const PointPlan plan = plan_point(config, sim_point);
        const double phase = sim_phase.value_or(plan.base_phase + plan.laser_ramp * sim_run);
        NoiseModel noise = config.noise;
        noise.rng_seed = shot_seed(config.master_seed, sim_point, static_cast<std::uint64_t>(sim_run));
        const DensityProfile profile = synthesize_ports(plan.config, config.shot, phase, noise);
        with_output(g.out, [&](std::ostream& o) { write_profile_csv(o, profile); });
    } else if (*fit) {
        const DensityProfile profile = read_profile_csv(std::filesystem::path(fit_input));
        SpatialFitOptions options;
        options.fixed_wavenumber = fit_k;
        if (fit_window.size() == 2) {
            options.window = Interval{fit_window[0], fit_window[1]};
        }
        const FitResult r = fit_spatial_fringe(profile, options);
        with_output(g.out, [&](std::ostream& o) {
            o << "shot,converged,A,x0_m,sigma_m,B,k_per_m,phi_rad,C,rss,iters\n";
            o << profile.shot_id << ',' << (r.usable() ? 1 : 0);
            for (double v : r.values) {
                o << ',' << format_double(v);
            }
            o << ',' << format_double(r.rss) << ',' << r.iterations << '\n';
        });
    } else if (*allan) {
        const std::vector<double> phases = read_phase_column(allan_input, allan_column);
        const PhaseSeries series = make_phase_series(phases, allan_rps, allan_duty);
        AllanOptions options;
        options.overlapping = allan_overlapping;
        const AllanCurve curve = allan_deviation(series, options);
        for (const std::string& w : curve.warnings) {
            std::cerr << "warning: " << w << '\n';
        }
        with_output(g.out, [&](std::ostream& o) { write_allan_csv(o, curve); });
    } else if (*overlap) {
        CampaignConfig config = load_config(g);
        // Plan as a separated readout so the configured timing is used as is.
        config.scheme = Scheme::asymmetric_separated;
        InterferometerConfig ifo = config.base;
        if (config.scan_variable == ScanVariable::delta_t) {
            ifo.timing.delta_t = config.scan_values.at(ov_point);
        } else if (config.scan_variable == ScanVariable::t1) {
            ifo.timing.t1 = config.scan_values.at(ov_point);
        }
        const bool hold = config.time_of_flight.has_value();
        if (hold) {
            ifo.timing.t_sep = 0.0;
            ifo.timing.t0 = *config.time_of_flight - ifo.timing.t1 - ifo.timing.t2();
        }
        const double predicted = predicted_overlap_time(ifo, config.shot.port_phase_offset, hold);
        OverlapScanOptions scan;
        scan.t_min = ov_min ? *ov_min * 1e-3 : 0.5 * predicted;
        scan.t_max = ov_max ? *ov_max * 1e-3 : 1.5 * predicted;
        scan.points = ov_points;
        scan.hold_time_of_flight = hold;
        const OverlapScan result = optimize_overlap_time(ifo, config.shot, scan);
        std::cerr << "best t_sep " << format_double(result.best_time * 1e3) << " ms, contrast "
                  << format_double(result.best_contrast) << ", predicted " << format_double(predicted * 1e3)
                  << " ms\n";
        with_output(g.out, [&](std::ostream& o) {
            o << "t_sep_ms,contrast\n";
            for (std::size_t i = 0; i < result.times.size(); ++i) {
                o << format_double(result.times[i] * 1e3) << ',' << format_double(result.contrasts[i]) << '\n';
            }
        });
    } else if (*campaign) {
        CampaignConfig config = load_config(g);
        if (!g.out.empty()) {
            config.output_dir = g.out;
        }
        const CampaignResult result = run_campaign(config);
        std::cerr << "campaign " << config.id << ": " << result.points.size() << " points, " << result.runs.size()
                  << " runs -> " << config.output_dir.string() << '\n';
    } else if (*figure) {
        if (g.out.empty()) {
            throw ConfigError("figure needs --out");
        }
        std::vector<std::filesystem::path> dirs(figure_dirs.begin(), figure_dirs.end());
        figure_data(dirs, figure_from_string(figure_id), g.out);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    try {
        return run(argc, argv);
    } catch (const bragg::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 3;
    } catch (const bragg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::out_of_range& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}
