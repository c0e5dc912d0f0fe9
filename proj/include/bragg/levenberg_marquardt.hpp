#pragma once

#include <Eigen/Dense>

#include <functional>

namespace bragg {

struct LmOptions {
    int max_iterations = 200;
    // Stop when an accepted step lowers the residual sum of squares by less
    // than this fraction.
    double relative_tolerance = 1e-10;
    double initial_damping = 1e-3;
    // Residual sum of squares treated as an exact fit (noiseless data reach
    // the rounding floor, where relative progress is meaningless).
    double rss_floor = 0.0;
};

struct LmResult {
    Eigen::VectorXd parameters;
    // One-sigma uncertainties; +inf for directions the data do not constrain.
    Eigen::VectorXd uncertainties;
    Eigen::MatrixXd covariance;
    double rss = 0.0;
    int iterations = 0;
    bool converged = false;
    bool rank_deficient = false;
};

// Fills residuals (model - data) and, when the pointer is non-null, the
// Jacobian of the model with respect to the parameters.
using ResidualFunction =
    std::function<void(const Eigen::VectorXd& params, Eigen::VectorXd& residuals, Eigen::MatrixXd* jacobian)>;

// Damped Gauss-Newton with Marquardt's diagonal scaling, which makes the
// iteration independent of parameter units.
[[nodiscard]] LmResult levenberg_marquardt(const ResidualFunction& f, const Eigen::VectorXd& start,
                                           Eigen::Index residual_count, const LmOptions& options = {});

}  // namespace bragg
