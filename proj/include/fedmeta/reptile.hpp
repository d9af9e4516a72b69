#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fedmeta/episode.hpp"
#include "fedmeta/network.hpp"
#include "fedmeta/optimizer.hpp"
#include "fedmeta/param_vector.hpp"
#include "fedmeta/rng.hpp"

namespace fedmeta {

/// A model trainable on episode examples with slot labels.
class Learner {
public:
    virtual ~Learner() = default;

    virtual LayoutPtr layout() const = 0;

    /// Mean loss over the batch; the gradient is written into `grad`.
    virtual double loss_and_gradient(const ParamVector& params, const Tensor<float>& batch,
                                     std::span<const std::size_t> labels, ParamVector& grad) const = 0;

    /// Predicted slot per input. `reference` (the support set) fixes any
    /// normalization statistics so predictions are per-example.
    virtual std::vector<std::size_t> predict(const ParamVector& params, const Tensor<float>& reference,
                                             const Tensor<float>& inputs) const = 0;
};

/// Conv4 classifier with softmax cross-entropy over the episode slots.
class ClassifierLearner final : public Learner {
public:
    explicit ClassifierLearner(NetworkSpec spec);

    const NetworkSpec& spec() const { return spec_; }
    LayoutPtr layout() const override { return layout_; }
    double loss_and_gradient(const ParamVector& params, const Tensor<float>& batch,
                             std::span<const std::size_t> labels, ParamVector& grad) const override;
    std::vector<std::size_t> predict(const ParamVector& params, const Tensor<float>& reference,
                                     const Tensor<float>& inputs) const override;

private:
    NetworkSpec spec_;
    LayoutPtr layout_;
};

enum class StepUnit { Steps, Epochs };

/// Inner-loop schedule. One epoch is ceil(support / batch_size) steps.
struct InnerSchedule {
    std::size_t count = 10;
    StepUnit unit = StepUnit::Steps;
    std::size_t batch_size = 10;
    OptimizerConfig optimizer;

    std::size_t steps_for(std::size_t support_size) const;
    void validate() const;
};

struct ReptileConfig {
    std::size_t episodes = 50;   // E, episodes per local training call
    std::size_t meta_batch = 5;  // B
    InnerSchedule inner;
    double outer_lr = 0.1;  // epsilon
    std::size_t shots = 10;
    std::size_t ways = 5;

    void validate() const;
};

struct FineTuneConfig {
    std::size_t steps = 50;
    std::size_t batch_size = 10;
    OptimizerConfig optimizer;
    std::size_t record_every = 1;

    void validate() const;
};

/// Shuffled mini-batches over [0, n), reshuffling at every epoch boundary.
class BatchCursor {
public:
    BatchCursor(std::size_t n, std::size_t batch_size, std::uint64_t seed);
    std::vector<std::size_t> next();

private:
    std::vector<std::size_t> order_;
    std::size_t batch_size_;
    std::size_t pos_;
    Rng rng_;
};

/// Trains a fresh copy of `start` on the episode's support set with a fresh
/// optimizer.
ParamVector inner_train(const Learner& learner, const ParamVector& start, const Episode& episode,
                        const InnerSchedule& schedule, std::uint64_t seed);

/// theta <- (1 - eps) theta + (eps / B) sum_j model_j, summed per coordinate
/// in a canonical order so the result is independent of the list order.
ParamVector reptile_outer_update(const ParamVector& theta, std::span<const ParamVector> episode_models,
                                 double outer_lr);

using EpisodeSampler = std::function<Episode(std::uint64_t seed)>;

/// E / B outer updates, each over a freshly sampled meta-batch of B episodes.
ParamVector local_meta_train(const Learner& learner, const ParamVector& start, const EpisodeSampler& sampler,
                             const ReptileConfig& config, std::uint64_t seed, std::size_t threads = 1);

/// Extra inputs evaluated alongside the episode queries during fine-tuning.
struct Probe {
    Tensor<float> inputs;
    std::vector<std::size_t> expected;
};

struct FineTuneTrace {
    std::vector<std::size_t> iterations;
    std::vector<double> query_accuracy;
    /// predictions[record][probe][example]; probe 0 is the episode query set.
    std::vector<std::vector<std::vector<std::size_t>>> predictions;
    ParamVector adapted;
};

/// Adapts a copy of theta on the support set and records predictions after
/// every `record_every` iterations (plus iteration 0 and the last one).
FineTuneTrace fine_tune_and_eval(const Learner& learner, const ParamVector& theta, const Episode& episode,
                                 const FineTuneConfig& config, std::uint64_t seed,
                                 std::span<const Probe> probes = {});

/// Iterations at which a trace of `steps` iterations records predictions.
std::vector<std::size_t> recorded_iterations(std::size_t steps, std::size_t record_every);

}  // namespace fedmeta
