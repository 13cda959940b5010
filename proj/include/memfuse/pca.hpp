#pragma once

#include <Eigen/Dense>
#include <algorithm>

#include "memfuse/common.hpp"

namespace memfuse {

struct PcaModel {
    Eigen::VectorXd mean;                // D
    Eigen::MatrixXd components;          // n_comp x D, rows orthonormal
    Eigen::VectorXd explained_variance;  // n_comp, non-increasing
    double total_variance = 0.0;

    Eigen::VectorXd transform(const Eigen::VectorXd& x) const {
        if (x.size() != mean.size())
            raise(errc::dimension_mismatch, "pca transform: vector of length " + std::to_string(x.size()) +
                                                ", model expects " + std::to_string(mean.size()));
        return components * (x - mean);
    }

    Eigen::VectorXd inverse_transform(const Eigen::VectorXd& z) const {
        return mean + components.transpose() * z;
    }

    Eigen::VectorXd explained_variance_ratio() const {
        if (total_variance <= 0.0) return Eigen::VectorXd::Zero(explained_variance.size());
        return explained_variance / total_variance;
    }
};

// Top principal components of the sample covariance of X (rows = observations).
// Sign convention: each component's largest-magnitude entry is positive.
inline PcaModel fit_pca(const Eigen::MatrixXd& X, int n_components) {
    const Eigen::Index n = X.rows(), d = X.cols();
    if (n < 2) raise(errc::degenerate_input, "pca needs at least 2 rows");
    if (n_components < 1 || n_components > std::min<Eigen::Index>(n - 1, d))
        raise(errc::invalid_params, "n_components must lie in [1, min(n-1, D)]");

    PcaModel m;
    m.mean = X.colwise().mean();
    const Eigen::MatrixXd centered = X.rowwise() - m.mean.transpose();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    m.total_variance = cov.trace();
    if (m.total_variance <= 0.0) raise(errc::degenerate_data, "zero variance in all directions");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) raise(errc::degenerate_data, "eigendecomposition failed");

    // eigenvalues come out ascending; take the top n_components, descending
    m.components.resize(n_components, d);
    m.explained_variance.resize(n_components);
    for (int i = 0; i < n_components; ++i) {
        const Eigen::Index src = d - 1 - i;
        Eigen::VectorXd comp = solver.eigenvectors().col(src);
        Eigen::Index max_idx = 0;
        comp.cwiseAbs().maxCoeff(&max_idx);
        if (comp(max_idx) < 0.0) comp = -comp;
        m.components.row(i) = comp.transpose();
        m.explained_variance(i) = std::max(0.0, solver.eigenvalues()(src));
    }
    return m;
}

}  // namespace memfuse
