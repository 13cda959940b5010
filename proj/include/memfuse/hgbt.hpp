#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "memfuse/common.hpp"
#include "memfuse/corpus.hpp"
#include "memfuse/metrics.hpp"

namespace memfuse {

struct HgbtParams {
    int n_trees = 200;
    double learning_rate = 0.1;
    int max_leaves = 31;
    int max_depth = 6;
    int min_samples_leaf = 5;
    double l2_reg = 1.0;
    int max_bins = 64;
    int early_stopping_rounds = 20;

    void validate() const {
        if (n_trees < 0 || n_trees > 500) raise(errc::invalid_params, "n_trees must lie in [0, 500]");
        if (!(learning_rate > 0.0 && learning_rate <= 1.0))
            raise(errc::invalid_params, "learning_rate must lie in (0, 1]");
        if (max_leaves < 2 || max_leaves > 64) raise(errc::invalid_params, "max_leaves must lie in [2, 64]");
        if (max_depth < 1 || max_depth > 12) raise(errc::invalid_params, "max_depth must lie in [1, 12]");
        if (min_samples_leaf < 1) raise(errc::invalid_params, "min_samples_leaf must be >= 1");
        if (l2_reg < 0.0) raise(errc::invalid_params, "l2_reg must be >= 0");
        if (max_bins < 2 || max_bins > 255) raise(errc::invalid_params, "max_bins must lie in [2, 255]");
        if (early_stopping_rounds < 1) raise(errc::invalid_params, "early_stopping_rounds must be >= 1");
    }
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;

    bool is_leaf() const { return feature < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;

    double predict_row(const Eigen::RowVectorXd& x) const {
        int i = 0;
        while (!nodes[static_cast<size_t>(i)].is_leaf()) {
            const auto& nd = nodes[static_cast<size_t>(i)];
            i = x(nd.feature) <= nd.threshold ? nd.left : nd.right;
        }
        return nodes[static_cast<size_t>(i)].value;
    }
};

struct HgbtModel {
    double base_score = 0.0;
    std::vector<Tree> trees;
    std::vector<std::vector<double>> bin_edges;  // per feature, strictly increasing interior edges
    Eigen::Index n_features = 0;
    std::vector<double> train_rmse_history;  // after each accepted tree
    std::vector<double> valid_rmse_history;

    std::vector<double> predict(const Eigen::MatrixXd& X) const {
        if (X.cols() != n_features)
            raise(errc::dimension_mismatch, "model expects " + std::to_string(n_features) + " features, got " +
                                                std::to_string(X.cols()));
        std::vector<double> out(static_cast<size_t>(X.rows()), base_score);
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            const Eigen::RowVectorXd row = X.row(i);
            for (const auto& t : trees) out[static_cast<size_t>(i)] += t.predict_row(row);
        }
        return out;
    }
};

namespace hgbt_detail {

// Interior quantile edges on the training column, deduplicated. Bin index is
// the number of edges strictly below the value, so unseen test values clamp to
// the outermost bins.
inline std::vector<double> fit_edges(std::vector<double> column, int max_bins) {
    auto edges = quantile_edges(std::move(column), max_bins);
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

inline int bin_index(double x, const std::vector<double>& edges) {
    return static_cast<int>(std::lower_bound(edges.begin(), edges.end(), x) - edges.begin());
}

struct SplitChoice {
    double gain = 0.0;
    int feature = -1;
    int bin = -1;  // bins <= bin go left
};

struct BuildNode {
    int node_id = -1;
    std::vector<int> rows;
    int depth = 0;
    double sum = 0.0;
    SplitChoice best;
};

}  // namespace hgbt_detail

// Least-squares boosting over histogram-split regression trees. Trees are grown
// best-first under max_leaves / max_depth / min_samples_leaf; leaf values are
// learning_rate times the mean residual. With a validation set, boosting stops
// after early_stopping_rounds consecutive non-improvements of validation RMSE
// and keeps the best prefix of trees.
inline HgbtModel hgbt_fit(const Eigen::MatrixXd& X, const std::vector<double>& y, const HgbtParams& params,
                          const Eigen::MatrixXd* X_valid = nullptr,
                          const std::vector<double>* y_valid = nullptr) {
    params.validate();
    const Eigen::Index n = X.rows(), d = X.cols();
    if (n < 2) raise(errc::degenerate_input, "hgbt_fit needs at least 2 rows");
    if (d < 1) raise(errc::degenerate_input, "hgbt_fit needs at least 1 feature");
    if (static_cast<size_t>(n) != y.size()) raise(errc::length_mismatch, "X rows and y length differ");
    if (!X.allFinite()) raise(errc::non_finite_feature, "X contains non-finite values");
    for (double v : y)
        if (!std::isfinite(v)) raise(errc::non_finite_feature, "y contains non-finite values");

    HgbtModel model;
    model.n_features = d;
    model.base_score = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);

    // per-feature quantile binning, fitted once on the training features
    model.bin_edges.resize(static_cast<size_t>(d));
    std::vector<std::vector<int>> bins(static_cast<size_t>(d), std::vector<int>(static_cast<size_t>(n)));
    for (Eigen::Index f = 0; f < d; ++f) {
        std::vector<double> col(static_cast<size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) col[static_cast<size_t>(i)] = X(i, f);
        model.bin_edges[static_cast<size_t>(f)] = hgbt_detail::fit_edges(std::move(col), params.max_bins);
        for (Eigen::Index i = 0; i < n; ++i)
            bins[static_cast<size_t>(f)][static_cast<size_t>(i)] =
                hgbt_detail::bin_index(X(i, f), model.bin_edges[static_cast<size_t>(f)]);
    }

    std::vector<double> residual(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) residual[static_cast<size_t>(i)] = y[static_cast<size_t>(i)] - model.base_score;

    std::vector<double> valid_pred;
    if (X_valid) {
        if (!y_valid || static_cast<size_t>(X_valid->rows()) != y_valid->size())
            raise(errc::length_mismatch, "validation X rows and y length differ");
        valid_pred.assign(y_valid->size(), model.base_score);
    }

    const double lambda = params.l2_reg;
    auto find_best_split = [&](hgbt_detail::BuildNode& node) {
        node.best = hgbt_detail::SplitChoice{};
        const double n_node = static_cast<double>(node.rows.size());
        const double parent_term = node.sum * node.sum / (n_node + lambda);
        for (Eigen::Index f = 0; f < d; ++f) {
            const auto& edges = model.bin_edges[static_cast<size_t>(f)];
            if (edges.empty()) continue;
            const int n_bins = static_cast<int>(edges.size()) + 1;
            std::vector<double> bin_sum(static_cast<size_t>(n_bins), 0.0);
            std::vector<int> bin_cnt(static_cast<size_t>(n_bins), 0);
            for (int r : node.rows) {
                const int b = bins[static_cast<size_t>(f)][static_cast<size_t>(r)];
                bin_sum[static_cast<size_t>(b)] += residual[static_cast<size_t>(r)];
                bin_cnt[static_cast<size_t>(b)] += 1;
            }
            double s_left = 0.0;
            int c_left = 0;
            for (int b = 0; b + 1 < n_bins; ++b) {
                s_left += bin_sum[static_cast<size_t>(b)];
                c_left += bin_cnt[static_cast<size_t>(b)];
                const int c_right = static_cast<int>(node.rows.size()) - c_left;
                if (c_left < params.min_samples_leaf || c_right < params.min_samples_leaf) continue;
                const double s_right = node.sum - s_left;
                const double gain = s_left * s_left / (c_left + lambda) + s_right * s_right / (c_right + lambda) -
                                    parent_term;
                if (gain > node.best.gain + 1e-12) {
                    node.best.gain = gain;
                    node.best.feature = static_cast<int>(f);
                    node.best.bin = b;
                }
            }
        }
    };

    // returns false when the tree is a single leaf with a ~0 value, i.e. the
    // ensemble has converged and the tree would change nothing
    auto build_tree = [&](Tree& tree) -> bool {
        tree.nodes.push_back(TreeNode{});
        std::vector<hgbt_detail::BuildNode> live;
        hgbt_detail::BuildNode root;
        root.node_id = 0;
        root.rows.resize(static_cast<size_t>(n));
        std::iota(root.rows.begin(), root.rows.end(), 0);
        root.depth = 0;
        root.sum = std::accumulate(residual.begin(), residual.end(), 0.0);
        find_best_split(root);
        live.push_back(std::move(root));

        int n_leaves = 1;
        while (n_leaves < params.max_leaves) {
            int pick = -1;
            for (size_t i = 0; i < live.size(); ++i) {
                if (live[i].depth >= params.max_depth || live[i].best.feature < 0) continue;
                if (pick < 0 || live[i].best.gain > live[static_cast<size_t>(pick)].best.gain + 1e-15) pick = static_cast<int>(i);
            }
            if (pick < 0) break;

            hgbt_detail::BuildNode node = std::move(live[static_cast<size_t>(pick)]);
            live.erase(live.begin() + pick);

            const auto& edges = model.bin_edges[static_cast<size_t>(node.best.feature)];
            auto& tn = tree.nodes[static_cast<size_t>(node.node_id)];
            tn.feature = node.best.feature;
            tn.threshold = edges[static_cast<size_t>(node.best.bin)];

            hgbt_detail::BuildNode left, right;
            left.depth = right.depth = node.depth + 1;
            for (int r : node.rows) {
                const int b = bins[static_cast<size_t>(node.best.feature)][static_cast<size_t>(r)];
                auto& dst = (b <= node.best.bin) ? left : right;
                dst.rows.push_back(r);
                dst.sum += residual[static_cast<size_t>(r)];
            }
            left.node_id = static_cast<int>(tree.nodes.size());
            tree.nodes.push_back(TreeNode{});
            right.node_id = static_cast<int>(tree.nodes.size());
            tree.nodes.push_back(TreeNode{});
            tree.nodes[static_cast<size_t>(node.node_id)].left = left.node_id;
            tree.nodes[static_cast<size_t>(node.node_id)].right = right.node_id;

            find_best_split(left);
            find_best_split(right);
            live.push_back(std::move(left));
            live.push_back(std::move(right));
            ++n_leaves;
        }

        if (tree.nodes.size() == 1 &&
            std::abs(live[0].sum / static_cast<double>(live[0].rows.size())) < 1e-15)
            return false;

        // finalize leaves and apply the update to training residuals
        for (auto& leaf : live) {
            const double value =
                params.learning_rate * leaf.sum / static_cast<double>(leaf.rows.size());
            tree.nodes[static_cast<size_t>(leaf.node_id)].value = value;
            for (int r : leaf.rows) residual[static_cast<size_t>(r)] -= value;
        }
        return true;
    };

    double best_valid = std::numeric_limits<double>::infinity();
    size_t best_n_trees = 0;
    int stall = 0;

    for (int round = 0; round < params.n_trees; ++round) {
        Tree tree;
        if (!build_tree(tree)) break;
        model.trees.push_back(std::move(tree));

        double ss = 0.0;
        for (double r : residual) ss += r * r;
        model.train_rmse_history.push_back(std::sqrt(ss / static_cast<double>(n)));

        if (X_valid) {
            for (Eigen::Index i = 0; i < X_valid->rows(); ++i)
                valid_pred[static_cast<size_t>(i)] += model.trees.back().predict_row(X_valid->row(i));
            const double vr = rmse(valid_pred, *y_valid);
            model.valid_rmse_history.push_back(vr);
            if (vr < best_valid - 1e-12) {
                best_valid = vr;
                best_n_trees = model.trees.size();
                stall = 0;
            } else if (++stall >= params.early_stopping_rounds) {
                break;
            }
        }
    }

    if (X_valid && model.trees.size() > best_n_trees) {
        model.trees.resize(best_n_trees);
        model.train_rmse_history.resize(best_n_trees);
        model.valid_rmse_history.resize(best_n_trees);
    }
    return model;
}

inline std::vector<double> hgbt_predict(const HgbtModel& model, const Eigen::MatrixXd& X) {
    return model.predict(X);
}

// --- seeded random-search tuner -------------------------------------------------

struct TunerConfig {
    int n_trials = 50;
    uint64_t seed = 0;
    // sampling ranges; learning_rate and l2_reg are log-uniform, integers uniform
    int n_trees_lo = 50, n_trees_hi = 400;
    double learning_rate_lo = 0.02, learning_rate_hi = 0.3;
    int max_leaves_lo = 4, max_leaves_hi = 32;
    int max_depth_lo = 2, max_depth_hi = 8;
    int min_samples_leaf_lo = 2, min_samples_leaf_hi = 20;
    double l2_reg_lo = 1e-3, l2_reg_hi = 10.0;
    int max_bins_lo = 16, max_bins_hi = 128;
    int early_stopping_rounds = 20;

    HgbtParams sample(Rng& rng) const {
        HgbtParams p;
        p.n_trees = static_cast<int>(rng.range(n_trees_lo, n_trees_hi));
        p.learning_rate = std::exp(rng.uniform(std::log(learning_rate_lo), std::log(learning_rate_hi)));
        p.max_leaves = static_cast<int>(rng.range(max_leaves_lo, max_leaves_hi));
        p.max_depth = static_cast<int>(rng.range(max_depth_lo, max_depth_hi));
        p.min_samples_leaf = static_cast<int>(rng.range(min_samples_leaf_lo, min_samples_leaf_hi));
        p.l2_reg = std::exp(rng.uniform(std::log(l2_reg_lo), std::log(l2_reg_hi)));
        p.max_bins = static_cast<int>(rng.range(max_bins_lo, max_bins_hi));
        p.early_stopping_rounds = early_stopping_rounds;
        return p;
    }
};

struct InnerFoldData {
    Eigen::MatrixXd X_train;
    std::vector<double> y_train;
    Eigen::MatrixXd X_valid;
    std::vector<double> y_valid;
};

struct TrialRecord {
    int trial = 0;
    HgbtParams params;
    double mean_srcc = -std::numeric_limits<double>::infinity();
    std::string error;
};

struct TuneResult {
    HgbtParams best;
    double best_mean_srcc = -std::numeric_limits<double>::infinity();
    std::vector<TrialRecord> log;
};

// Random search over HgbtParams maximizing mean inner-validation Spearman
// correlation; ties resolve to the earliest trial. Failing trials score -inf
// and stay in the log.
inline TuneResult tune(const std::vector<InnerFoldData>& inner_folds, const TunerConfig& cfg) {
    if (cfg.n_trials < 1) raise(errc::invalid_params, "n_trials must be >= 1");
    if (inner_folds.empty()) raise(errc::degenerate_input, "tune needs at least one inner fold");
    Rng rng(splitmix64(cfg.seed ^ 0x7e57ab1eull));

    TuneResult result;
    for (int t = 0; t < cfg.n_trials; ++t) {
        TrialRecord rec;
        rec.trial = t;
        rec.params = cfg.sample(rng);
        try {
            double sum = 0.0;
            for (const auto& fold : inner_folds) {
                const auto model = hgbt_fit(fold.X_train, fold.y_train, rec.params, &fold.X_valid, &fold.y_valid);
                sum += spearman(model.predict(fold.X_valid), fold.y_valid);
            }
            rec.mean_srcc = sum / static_cast<double>(inner_folds.size());
        } catch (const Error& e) {
            rec.error = e.what();
        }
        if (rec.mean_srcc > result.best_mean_srcc) {
            result.best_mean_srcc = rec.mean_srcc;
            result.best = rec.params;
        }
        result.log.push_back(std::move(rec));
    }
    return result;
}

}  // namespace memfuse
