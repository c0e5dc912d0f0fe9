#include "bragg/profile.hpp"

#include "bragg/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace bragg {

std::string to_string(ImagingMode mode)
{
    return mode == ImagingMode::fmi ? "fmi" : "absorption";
}

ImagingMode imaging_mode_from_string(const std::string& name)
{
    if (name == "absorption") {
        return ImagingMode::absorption;
    }
    if (name == "fmi" || name == "FMI") {
        return ImagingMode::fmi;
    }
    throw ConfigError("unknown imaging mode '" + name + "' (expected absorption or fmi)");
}

std::vector<double> DensityProfile::positions() const
{
    std::vector<double> x(values.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = position(i);
    }
    return x;
}

double DensityProfile::integral() const
{
    if (values.size() < 2) {
        return 0.0;
    }
    double sum = 0.5 * (values.front() + values.back());
    for (std::size_t i = 1; i + 1 < values.size(); ++i) {
        sum += values[i];
    }
    return sum * spacing;
}

double DensityProfile::interpolate(double x) const
{
    if (values.empty()) {
        return 0.0;
    }
    const double u = (x - origin) / spacing;
    if (u < 0.0 || u > static_cast<double>(values.size() - 1)) {
        return 0.0;
    }
    const auto i = std::min(static_cast<std::size_t>(u), values.size() - 2);
    const double f = u - static_cast<double>(i);
    return values[i] * (1.0 - f) + values[i + 1] * f;
}

double DensityProfile::integral(double lo, double hi) const
{
    if (values.size() < 2 || hi <= lo) {
        return 0.0;
    }
    lo = std::max(lo, front());
    hi = std::min(hi, back());
    if (hi <= lo) {
        return 0.0;
    }
    const double u_lo = (lo - origin) / spacing;
    const double u_hi = (hi - origin) / spacing;
    const auto first = static_cast<std::size_t>(std::ceil(u_lo));
    const auto last = std::min(static_cast<std::size_t>(std::floor(u_hi)), values.size() - 1);
    if (first > last) {
        return 0.5 * (interpolate(lo) + interpolate(hi)) * (hi - lo);
    }
    double sum = 0.5 * (interpolate(lo) + values[first]) * (position(first) - lo);
    for (std::size_t i = first; i < last; ++i) {
        sum += 0.5 * (values[i] + values[i + 1]) * spacing;
    }
    sum += 0.5 * (values[last] + interpolate(hi)) * (hi - position(last));
    return sum;
}

DensityProfile DensityProfile::window(double lo, double hi) const
{
    DensityProfile out = *this;
    out.values.clear();
    bool started = false;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double x = position(i);
        if (x >= lo && x <= hi) {
            if (!started) {
                out.origin = x;
                started = true;
            }
            out.values.push_back(values[i]);
        }
    }
    return out;
}

DensityProfile make_profile(std::span<const double> positions, std::span<const double> values)
{
    if (positions.size() != values.size()) {
        throw ConfigError("profile: position and density columns differ in length");
    }
    if (positions.size() < 2) {
        throw ConfigError("profile: need at least two samples");
    }
    const double step = (positions.back() - positions.front()) / static_cast<double>(positions.size() - 1);
    if (!(step > 0.0)) {
        throw ConfigError("profile: axis must be strictly increasing");
    }
    for (std::size_t i = 1; i < positions.size(); ++i) {
        const double d = positions[i] - positions[i - 1];
        if (!(d > 0.0) || std::abs(d - step) > 1e-6 * step) {
            throw ConfigError("profile: axis must be uniformly spaced and strictly increasing");
        }
    }
    DensityProfile p;
    p.origin = positions.front();
    p.spacing = step;
    p.values.assign(values.begin(), values.end());
    return p;
}

std::string format_double(double value)
{
    if (std::isnan(value)) {
        return "nan";
    }
    if (std::isinf(value)) {
        return value > 0 ? "inf" : "-inf";
    }
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc{}) {
        throw NumericalError("could not format number");
    }
    return {buf, ptr};
}

void write_profile_csv(std::ostream& out, const DensityProfile& profile)
{
    out << "position_m,density\n";
    for (std::size_t i = 0; i < profile.size(); ++i) {
        out << format_double(profile.position(i)) << ',' << format_double(profile.values[i]) << '\n';
    }
}

void write_profile_csv(const std::filesystem::path& path, const DensityProfile& profile)
{
    std::ofstream out(path);
    if (!out) {
        throw ConfigError("cannot write " + path.string());
    }
    write_profile_csv(out, profile);
}

DensityProfile read_profile_csv(std::istream& in)
{
    std::vector<double> x;
    std::vector<double> y;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw ConfigError("profile CSV line " + std::to_string(line_no) + ": expected two columns");
        }
        try {
            const double xv = std::stod(line.substr(0, comma));
            const double yv = std::stod(line.substr(comma + 1));
            x.push_back(xv);
            y.push_back(yv);
        } catch (const std::exception&) {
            if (x.empty() && !header_seen) {
                header_seen = true;
                continue;
            }
            throw ConfigError("profile CSV line " + std::to_string(line_no) + ": not a number");
        }
    }
    return make_profile(x, y);
}

DensityProfile read_profile_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read " + path.string());
    }
    return read_profile_csv(in);
}

}  // namespace bragg
