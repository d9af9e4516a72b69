#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedmeta/dataset.hpp"
#include "fedmeta/tensor.hpp"

namespace fedmeta {

struct EpisodeExample {
    Image image;
    ExampleRef source;
    std::size_t slot = 0;  // label inside the episode
    bool poisoned = false;
    ClassId original_class{};
};

/// N-way K-shot task. Slot i of the classifier corresponds to slots[i].
struct Episode {
    std::vector<ClassId> slots;
    std::vector<EpisodeExample> support;
    std::vector<EpisodeExample> query;

    std::size_t ways() const { return slots.size(); }
    std::optional<std::size_t> slot_of(ClassId id) const;
};

/// Examples of one class that a sampler may draw from. When `query_pool` is
/// empty, queries come from `support_pool` and are disjoint from the support.
struct ClassView {
    ClassId id{};
    std::vector<std::uint32_t> support_pool;
    std::vector<std::uint32_t> query_pool;
};

struct EpisodeConstraints {
    /// Forced into the last slots, in this order.
    std::vector<ClassId> required_classes;
    std::size_t queries_per_class = 0;
};

/// Samples `ways` distinct classes from `pool` and `shots` support examples
/// per class. Depends only on the seed and the order of `pool`.
Episode sample_episode(const Dataset& dataset, std::span<const ClassView> pool, std::size_t ways,
                       std::size_t shots, std::uint64_t seed, const EpisodeConstraints& constraints = {});

/// Convenience overload over every ordinary class: support from the training
/// split, queries from the validation split.
Episode sample_episode(const Dataset& dataset, std::size_t ways, std::size_t shots, std::uint64_t seed,
                       const EpisodeConstraints& constraints = {});

/// Views for every class with `role`: training split as support pool and
/// validation split as query pool (or everything as support when
/// `whole_class` is set, as for meta-test classes).
std::vector<ClassView> views_for_role(const Dataset& dataset, ClassRole role, bool whole_class = false);

/// NCHW batch scaled to [0, 1].
template <class T>
Tensor<T> images_to_batch(std::span<const Image* const> images);

template <class T>
Tensor<T> examples_to_batch(std::span<const EpisodeExample> examples);

template <class T>
Tensor<T> examples_to_batch(std::span<const EpisodeExample> examples, std::span<const std::size_t> indices);

std::vector<std::size_t> slot_labels(std::span<const EpisodeExample> examples);

extern template Tensor<float> images_to_batch(std::span<const Image* const>);
extern template Tensor<double> images_to_batch(std::span<const Image* const>);
extern template Tensor<float> examples_to_batch(std::span<const EpisodeExample>);
extern template Tensor<double> examples_to_batch(std::span<const EpisodeExample>);
extern template Tensor<float> examples_to_batch(std::span<const EpisodeExample>, std::span<const std::size_t>);
extern template Tensor<double> examples_to_batch(std::span<const EpisodeExample>, std::span<const std::size_t>);

}  // namespace fedmeta
