#include "bragg/levenberg_marquardt.hpp"

#include <cmath>
#include <limits>

namespace bragg {

namespace {

// Covariance s^2 (J^T J)^-1 computed in the column-scaled basis. Directions
// with negligible curvature get infinite variance.
void fill_covariance(const Eigen::MatrixXd& jacobian, double rss, LmResult& out)
{
    const Eigen::Index m = jacobian.rows();
    const Eigen::Index p = jacobian.cols();
    const double inf = std::numeric_limits<double>::infinity();

    Eigen::VectorXd scale(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double norm = jacobian.col(j).norm();
        scale(j) = norm > 0.0 ? norm : 1.0;
    }
    const Eigen::MatrixXd js = jacobian * scale.cwiseInverse().asDiagonal();
    const Eigen::MatrixXd normal = js.transpose() * js;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal);
    const Eigen::VectorXd lambda = eig.eigenvalues();
    const Eigen::MatrixXd vecs = eig.eigenvectors();
    const double lambda_max = lambda.maxCoeff();

    const double dof = static_cast<double>(std::max<Eigen::Index>(m - p, 1));
    const double s2 = rss / dof;

    Eigen::MatrixXd inv = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd weak = Eigen::VectorXd::Zero(p);
    for (Eigen::Index k = 0; k < p; ++k) {
        if (!(lambda(k) > 1e-12 * lambda_max)) {
            out.rank_deficient = true;
            weak += vecs.col(k).cwiseAbs2();
            continue;
        }
        inv += vecs.col(k) * vecs.col(k).transpose() / lambda(k);
    }
    out.covariance = s2 * scale.cwiseInverse().asDiagonal() * inv * scale.cwiseInverse().asDiagonal();
    out.uncertainties.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        out.uncertainties(j) = weak(j) > 1e-6 ? inf : std::sqrt(std::max(out.covariance(j, j), 0.0));
    }
}

}  // namespace

LmResult levenberg_marquardt(const ResidualFunction& f, const Eigen::VectorXd& start, Eigen::Index residual_count,
                             const LmOptions& options)
{
    const Eigen::Index p = start.size();
    Eigen::VectorXd params = start;
    Eigen::VectorXd residuals(residual_count);
    Eigen::MatrixXd jacobian(residual_count, p);
    Eigen::VectorXd trial_residuals(residual_count);

    f(params, residuals, &jacobian);
    double rss = residuals.squaredNorm();
    double lambda = options.initial_damping;

    LmResult out;
    bool converged = false;
    int iteration = 0;
    if (rss <= options.rss_floor) {
        converged = true;
    }
    while (iteration < options.max_iterations && !converged) {
        ++iteration;
        if (!std::isfinite(rss)) {
            break;
        }
        const Eigen::MatrixXd normal = jacobian.transpose() * jacobian;
        const Eigen::VectorXd gradient = jacobian.transpose() * residuals;
        Eigen::VectorXd diag = normal.diagonal();
        for (Eigen::Index j = 0; j < p; ++j) {
            if (!(diag(j) > 0.0)) {
                diag(j) = 1.0;
            }
        }

        // Inner loop: raise damping until a step lowers the cost.
        bool accepted = false;
        while (!accepted) {
            Eigen::MatrixXd damped = normal;
            damped.diagonal() += lambda * diag;
            const Eigen::VectorXd step = damped.ldlt().solve(-gradient);
            if (!step.allFinite()) {
                lambda *= 10.0;
            } else {
                const Eigen::VectorXd trial = params + step;
                f(trial, trial_residuals, nullptr);
                const double trial_rss = trial_residuals.squaredNorm();
                if (std::isfinite(trial_rss) && trial_rss <= rss) {
                    const double reduction = rss - trial_rss;
                    params = trial;
                    f(params, residuals, &jacobian);
                    rss = residuals.squaredNorm();
                    lambda = std::max(lambda / 10.0, 1e-12);
                    accepted = true;
                    if (reduction <= options.relative_tolerance * (rss + reduction) || rss <= options.rss_floor) {
                        converged = true;
                    }
                } else {
                    lambda *= 10.0;
                }
            }
            if (!accepted && lambda > 1e16) {
                // No step can lower the cost: this is a minimum to working
                // precision if the scaled gradient vanishes.
                double worst = 0.0;
                for (Eigen::Index j = 0; j < p; ++j) {
                    const double denom = std::sqrt(diag(j) * std::max(rss, std::numeric_limits<double>::min()));
                    worst = std::max(worst, std::abs(gradient(j)) / denom);
                }
                converged = worst < 1e-4 || rss <= 1e4 * options.rss_floor;
                break;
            }
        }
        if (!accepted) {
            break;
        }
    }

    out.parameters = params;
    out.rss = rss;
    out.iterations = iteration;
    out.converged = converged && params.allFinite();
    fill_covariance(jacobian, rss, out);
    return out;
}

}  // namespace bragg
