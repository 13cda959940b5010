#pragma once

#include <set>

#include "memfuse/fusion/model.hpp"
#include "memfuse/metrics.hpp"

namespace memfuse::fusion {

struct TrainConfig {
    TrainMode mode = TrainMode::lora;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 16;
    int max_epochs = 50;
    int early_stopping_rounds = 8;
    double clip_norm = 1.0;
    uint64_t seed = 0;
};

// --- Adam with global-norm clipping -----------------------------------------------

class AdamOptimizer {
  public:
    AdamOptimizer(TrainConfig cfg, std::vector<std::string> trainable) : cfg_(std::move(cfg)) {
        trainable_set_.insert(trainable.begin(), trainable.end());
    }

    const std::set<std::string>& trainable() const { return trainable_set_; }

    // Clips the global gradient norm over the trainable set, then applies one
    // Adam update. Non-trainable parameters are never touched.
    void step(ParamStore& store) {
        double norm2 = 0.0;
        for (const auto& [name, t] : store.entries)
            if (trainable_set_.count(name)) norm2 += t->grad.squaredNorm();
        const double norm = std::sqrt(norm2);
        const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (auto& [name, t] : store.entries) {
            if (!trainable_set_.count(name)) continue;
            auto& slot = state_[name];
            if (slot.m.size() == 0) {
                slot.m = Eigen::MatrixXd::Zero(t->val.rows(), t->val.cols());
                slot.v = Eigen::MatrixXd::Zero(t->val.rows(), t->val.cols());
            }
            const Eigen::MatrixXd g = t->grad * clip;
            slot.m = cfg_.beta1 * slot.m + (1.0 - cfg_.beta1) * g;
            slot.v = cfg_.beta2 * slot.v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
            const Eigen::ArrayXXd m_hat = slot.m.array() / bc1;
            const Eigen::ArrayXXd v_hat = slot.v.array() / bc2;
            t->val.array() -= cfg_.lr * m_hat / (v_hat.sqrt() + cfg_.adam_eps);
        }
    }

  private:
    struct Moments {
        Eigen::MatrixXd m, v;
    };

    TrainConfig cfg_;
    std::set<std::string> trainable_set_;
    std::map<std::string, Moments> state_;
    int t_ = 0;
};

// --- training loop ------------------------------------------------------------------

struct EpochStats {
    double train_loss = 0.0;
    double valid_srcc = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;
    double best_valid_srcc = 0.0;
};

struct SampleRef {
    const FeatureBundle* bundle = nullptr;
    std::string prompt;
    double target = 0.0;
};

inline std::vector<SampleRef> make_samples(const Dataset& ds,
                                           const std::map<std::string, FeatureBundle>& bundles,
                                           const std::vector<std::string>& ids, Target target,
                                           PromptKind prompt_kind) {
    std::vector<SampleRef> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        const auto& record = ds.by_id(id);
        const auto it = bundles.find(id);
        if (it == bundles.end()) raise(errc::missing_embedding, "no bundle for record '" + id + "'");
        out.push_back(SampleRef{&it->second, make_prompt_text(record, it->second, prompt_kind),
                                record.target(target)});
    }
    return out;
}

inline std::vector<double> predict_samples(FusionModel& model, const std::vector<SampleRef>& samples) {
    std::vector<double> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(model.predict_one(*s.bundle, s.prompt));
    return out;
}

// One optimizer step on an explicit batch; returns the composite loss value.
inline double train_step(FusionModel& model, const std::vector<SampleRef>& batch, AdamOptimizer& opt,
                         double lambda) {
    std::vector<const FeatureBundle*> bundles;
    std::vector<std::string> prompts;
    std::vector<double> targets;
    for (const auto& s : batch) {
        bundles.push_back(s.bundle);
        prompts.push_back(s.prompt);
        targets.push_back(s.target);
    }
    Tensor pred = model.forward_batch(bundles, prompts, true);
    const CompositeLoss cl = composite_loss(pred, targets, lambda);
    const double loss_value = cl.loss->val(0, 0);
    if (!std::isfinite(loss_value))
        raise(errc::non_finite_loss, "loss = " + std::to_string(loss_value) +
                                         " (mae = " + std::to_string(cl.mae) +
                                         ", corr = " + std::to_string(cl.correlation) + ")");
    backward(cl.loss);
    opt.step(model.params());
    return loss_value;
}

// Epoch loop with early stopping on inner-validation SRCC; the checkpoint with
// the best validation SRCC is restored into the model before returning.
inline TrainHistory train_on_split(FusionModel& model, const Dataset& ds,
                                   const std::map<std::string, FeatureBundle>& bundles,
                                   const std::vector<std::string>& train_ids,
                                   const std::vector<std::string>& valid_ids, Target target,
                                   PromptKind prompt_kind, const TrainConfig& cfg) {
    auto train_samples = make_samples(ds, bundles, train_ids, target, prompt_kind);
    const auto valid_samples = make_samples(ds, bundles, valid_ids, target, prompt_kind);
    std::vector<double> valid_targets;
    for (const auto& s : valid_samples) valid_targets.push_back(s.target);

    AdamOptimizer opt(cfg, model.trainable_names(cfg.mode));
    Rng shuffle_rng(splitmix64(cfg.seed ^ 0x5f0ff1eull));

    TrainHistory history;
    std::map<std::string, Eigen::MatrixXd> best_snapshot;
    int stall = 0;

    std::vector<size_t> order(train_samples.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        size_t n_batches = 0;
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
            std::vector<SampleRef> batch;
            for (size_t i = at; i < std::min(order.size(), at + static_cast<size_t>(cfg.batch_size)); ++i)
                batch.push_back(train_samples[order[i]]);
            if (batch.size() < 2) continue;  // composite loss needs two points
            loss_sum += train_step(model, batch, opt, model.head_config().lambda);
            ++n_batches;
        }

        EpochStats stats;
        stats.train_loss = n_batches > 0 ? loss_sum / static_cast<double>(n_batches) : 0.0;
        stats.valid_srcc = spearman(predict_samples(model, valid_samples), valid_targets);
        history.epochs.push_back(stats);

        if (history.best_epoch < 0 || stats.valid_srcc > history.best_valid_srcc) {
            history.best_epoch = epoch;
            history.best_valid_srcc = stats.valid_srcc;
            best_snapshot = snapshot_params(model.params());
            stall = 0;
        } else if (++stall >= cfg.early_stopping_rounds) {
            break;
        }
    }
    if (!best_snapshot.empty()) restore_params(model.params(), best_snapshot);
    return history;
}

// --- finite-difference gradient verification ------------------------------------------

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_grad = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    bool pass = true;
};

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    int include_base_layer = -1;  // >= 0 additionally checks that layer's base weights
};

// Moves every parameter to a generic point before checking. At the zero-init
// the adapter gradients are degenerate (B = 0 makes dL/dA vanish identically)
// and near-init attention logits are so small that q/k gradients drown in
// finite-difference truncation noise.
inline void randomize_for_gradcheck(FusionModel& model, uint64_t seed, double scale = 0.25) {
    Rng rng(splitmix64(seed ^ 0x6e4e71cull));
    for (auto& [name, t] : model.params().entries)
        for (Eigen::Index r = 0; r < t->val.rows(); ++r)
            for (Eigen::Index c = 0; c < t->val.cols(); ++c) t->val(r, c) += scale * rng.normal();
}

// Central finite differences of the composite loss against analytic gradients
// for every trainable parameter group (optionally plus one backbone layer's
// base weights). Requires dropout disabled; rejects the configuration otherwise.
inline GradCheckReport check_gradients(FusionModel& model, const std::vector<SampleRef>& batch,
                                       TrainMode mode, const GradCheckOptions& opts = {}) {
    if (model.lora_config().enabled && model.lora_config().dropout > 0.0)
        raise(errc::invalid_params, "gradient check requires dropout = 0 (stochastic forward)");

    std::vector<const FeatureBundle*> bundles;
    std::vector<std::string> prompts;
    std::vector<double> targets;
    for (const auto& s : batch) {
        bundles.push_back(s.bundle);
        prompts.push_back(s.prompt);
        targets.push_back(s.target);
    }
    const double lambda = model.head_config().lambda;
    auto loss_value = [&]() {
        Tensor pred = model.forward_batch(bundles, prompts, true);
        return composite_loss(pred, targets, lambda).loss->val(0, 0);
    };

    std::vector<std::string> checked = model.trainable_names(mode);
    if (opts.include_base_layer >= 0) {
        const std::string prefix = "layer" + std::to_string(opts.include_base_layer) + ".";
        for (const auto& [name, t] : model.params().entries) {
            const bool adapter = name.size() > 7 && (name.rfind(".lora_a") == name.size() - 7 ||
                                                     name.rfind(".lora_b") == name.size() - 7);
            if (name.rfind(prefix, 0) == 0 && !adapter) checked.push_back(name);
        }
    }

    // one analytic backward pass
    {
        Tensor pred = model.forward_batch(bundles, prompts, true);
        const CompositeLoss cl = composite_loss(pred, targets, lambda);
        backward(cl.loss);
    }
    std::map<std::string, Eigen::MatrixXd> analytic;
    for (const auto& name : checked) analytic[name] = model.params().at(name)->grad;

    GradCheckReport report;
    for (const auto& name : checked) {
        const Tensor& t = model.params().at(name);
        GradCheckEntry entry;
        entry.name = name;
        for (Eigen::Index r = 0; r < t->val.rows(); ++r) {
            for (Eigen::Index c = 0; c < t->val.cols(); ++c) {
                const double saved = t->val(r, c);
                t->val(r, c) = saved + opts.step;
                const double up = loss_value();
                t->val(r, c) = saved - opts.step;
                const double down = loss_value();
                t->val(r, c) = saved;
                const double fd = (up - down) / (2.0 * opts.step);
                const double an = analytic[name](r, c);
                const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
                entry.max_rel_err = std::max(entry.max_rel_err, rel);
                entry.max_abs_grad = std::max(entry.max_abs_grad, std::abs(an));
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        if (entry.max_rel_err > opts.tolerance) report.pass = false;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

inline void ensure_gradients_ok(FusionModel& model, const std::vector<SampleRef>& batch, TrainMode mode,
                                const GradCheckOptions& opts = {}) {
    const auto report = check_gradients(model, batch, mode, opts);
    if (!report.pass) {
        std::string worst;
        double worst_err = -1.0;
        for (const auto& e : report.entries)
            if (e.max_rel_err > worst_err) {
                worst_err = e.max_rel_err;
                worst = e.name;
            }
        raise(errc::grad_check_failure,
              "parameter '" + worst + "' max relative error " + std::to_string(worst_err));
    }
}

}  // namespace memfuse::fusion
