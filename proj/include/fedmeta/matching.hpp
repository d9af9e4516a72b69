#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedmeta/episode.hpp"
#include "fedmeta/network.hpp"
#include "fedmeta/optimizer.hpp"
#include "fedmeta/param_vector.hpp"
#include "fedmeta/reptile.hpp"

namespace fedmeta {

inline constexpr const char* kGateSegment = "head.gate";
inline constexpr const char* kScaleSegment = "head.scale";

/// Layout of the learnable head: gates [dim] then per-class scales [classes].
LayoutPtr make_head_layout(std::size_t dim, std::size_t classes);

/// Gates alpha (one per embedding component, kept in [0, 1]), per-class
/// scales beta, and a support set of labeled embeddings.
class MatchingHead {
public:
    MatchingHead(std::size_t dim, std::size_t classes);
    explicit MatchingHead(ParamVector params);

    std::size_t dim() const { return params_.layout().segments()[0].size(); }
    std::size_t classes() const { return params_.layout().segments()[1].size(); }

    std::span<const float> gates() const { return params_.segment(0); }
    std::span<const float> scales() const { return params_.segment(1); }
    const ParamVector& params() const { return params_; }

    /// Replaces gates and scales; gates are clamped to [0, 1].
    void set_params(ParamVector params);
    void clamp_gates();

    /// Embeddings are (count, dim); labels are class slots below classes().
    void set_support(Tensor<float> embeddings, std::vector<std::size_t> labels);
    const Tensor<float>& support_embeddings() const { return support_; }
    const std::vector<std::size_t>& support_labels() const { return labels_; }

private:
    ParamVector params_;
    Tensor<float> support_;
    std::vector<std::size_t> labels_;
};

struct NoisyInitConfig {
    double mix = 0.3;  // delta_mix
    std::uint64_t seed = 0;

    void validate() const;
};

/// mix * theta + (1 - mix) * theta_g with theta_g a fresh Glorot sample for
/// `spec`. Segments of theta outside the spec's layout (e.g. a classifier)
/// are dropped.
ParamVector noisy_reinit(const ParamVector& theta, const NoisyInitConfig& config, const NetworkSpec& spec);

/// softmax_i(cos(alpha * query, e_i) * beta_{label_i}) over the support set.
std::vector<double> attention(const MatchingHead& head, std::span<const float> query);

struct MatchingPrediction {
    std::vector<double> scores;  // per class slot, sums to 1
    std::size_t label = 0;       // argmax, ties to the lowest slot
};

MatchingPrediction predict(const MatchingHead& head, std::span<const float> query);

template <class T>
struct MatchingLoss {
    double loss = 0.0;  // mean of -log yhat_t over the queries
    BasicParamVector<T> trunk_grad;
    BasicParamVector<T> head_grad;
};

/// Mixture-output cross-entropy of a matching network. Support and query
/// images go through the trunk as one batch, so batch statistics cover both.
template <class T>
MatchingLoss<T> matching_loss(const BasicParamVector<T>& trunk, const NetworkSpec& spec,
                              const BasicParamVector<T>& head, const Tensor<T>& support,
                              std::span<const std::size_t> support_labels, const Tensor<T>& query,
                              std::span<const std::size_t> query_labels);

struct MatchingConfig {
    NoisyInitConfig init;
    std::size_t head_steps = 20;  // stage 1: gates and scales only
    std::size_t steps = 50;       // total budget, stage 1 included
    OptimizerConfig optimizer;
    std::size_t record_every = 1;

    void validate() const;
};

struct MatchingResult {
    FineTuneTrace trace;  // trace.adapted holds theta'
    MatchingHead head;
};

/// Embeds `support` and loads it, with labels, into the head.
void load_support(MatchingHead& head, const ParamVector& trunk, const NetworkSpec& spec,
                  std::span<const EpisodeExample> support);

/// Predictions for `inputs` with normalization statistics from the head's support images.
std::vector<std::size_t> predict_batch(const MatchingHead& head, const ParamVector& trunk, const NetworkSpec& spec,
                                       const Tensor<float>& support_images, const Tensor<float>& inputs);

/// Noisy re-initialization, then `head_steps` iterations on gates and scales
/// with the trunk frozen, then joint training up to `steps` iterations. Each
/// iteration holds out one random support example per class as the query.
/// Predictions are recorded like fine_tune_and_eval.
MatchingResult staged_fine_tune(const ParamVector& theta, const NetworkSpec& spec, const Episode& episode,
                                const MatchingConfig& config, std::uint64_t seed,
                                std::span<const Probe> probes = {});

extern template MatchingLoss<float> matching_loss(const BasicParamVector<float>&, const NetworkSpec&,
                                                  const BasicParamVector<float>&, const Tensor<float>&,
                                                  std::span<const std::size_t>, const Tensor<float>&,
                                                  std::span<const std::size_t>);
extern template MatchingLoss<double> matching_loss(const BasicParamVector<double>&, const NetworkSpec&,
                                                   const BasicParamVector<double>&, const Tensor<double>&,
                                                   std::span<const std::size_t>, const Tensor<double>&,
                                                   std::span<const std::size_t>);

}  // namespace fedmeta
