#pragma once

#include "bragg/physics.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace bragg {

enum class ImagingMode { absorption, fmi };

[[nodiscard]] std::string to_string(ImagingMode mode);
[[nodiscard]] ImagingMode imaging_mode_from_string(const std::string& name);

// Sampled 1D density on a uniform axis: x_i = origin + i * spacing.
struct DensityProfile {
    double origin = 0.0;
    double spacing = 1.0;
    std::vector<double> values;

    std::uint64_t shot_id = 0;
    SequenceTiming timing;
    ImagingMode mode = ImagingMode::absorption;

    [[nodiscard]] std::size_t size() const { return values.size(); }
    [[nodiscard]] double position(std::size_t i) const { return origin + static_cast<double>(i) * spacing; }
    [[nodiscard]] double front() const { return origin; }
    [[nodiscard]] double back() const { return position(values.size() - 1); }
    [[nodiscard]] std::vector<double> positions() const;

    // Trapezoidal integral over the whole axis.
    [[nodiscard]] double integral() const;
    // Trapezoidal integral over [lo, hi] with linear interpolation at the ends.
    [[nodiscard]] double integral(double lo, double hi) const;
    // Linear interpolation; zero outside the sampled range.
    [[nodiscard]] double interpolate(double x) const;

    // Samples whose positions fall inside [lo, hi].
    [[nodiscard]] DensityProfile window(double lo, double hi) const;
};

// Builds a profile from explicit positions, which must be strictly increasing
// and uniformly spaced (relative tolerance 1e-6 on the step).
[[nodiscard]] DensityProfile make_profile(std::span<const double> positions, std::span<const double> values);

// Columns: position_m,density
void write_profile_csv(std::ostream& out, const DensityProfile& profile);
void write_profile_csv(const std::filesystem::path& path, const DensityProfile& profile);
[[nodiscard]] DensityProfile read_profile_csv(std::istream& in);
[[nodiscard]] DensityProfile read_profile_csv(const std::filesystem::path& path);

// Density on a uniform (x, z) grid, row-major with z as the slow index.
// x is the lattice/fringe axis, z the imaging line-of-sight axis.
struct Profile2D {
    double x_origin = 0.0;
    double x_spacing = 1.0;
    std::size_t nx = 0;
    double z_origin = 0.0;
    double z_spacing = 1.0;
    std::size_t nz = 0;
    std::vector<double> values;

    [[nodiscard]] double at(std::size_t ix, std::size_t iz) const { return values[iz * nx + ix]; }
    [[nodiscard]] double x(std::size_t ix) const { return x_origin + static_cast<double>(ix) * x_spacing; }
    [[nodiscard]] double z(std::size_t iz) const { return z_origin + static_cast<double>(iz) * z_spacing; }
};

// Formats a double so that it round-trips exactly.
[[nodiscard]] std::string format_double(double value);

}  // namespace bragg
