#include "fedmeta/episode.hpp"

#include <algorithm>

#include "fedmeta/error.hpp"
#include "fedmeta/rng.hpp"

namespace fedmeta {

std::optional<std::size_t> Episode::slot_of(ClassId id) const {
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i] == id) return i;
    }
    return std::nullopt;
}

namespace {

bool eligible(const ClassView& view, std::size_t shots, std::size_t queries) {
    if (view.query_pool.empty()) return view.support_pool.size() >= shots + queries;
    return view.support_pool.size() >= shots && view.query_pool.size() >= queries;
}

void fill_slot(const Dataset& dataset, const ClassView& view, std::size_t slot, std::size_t shots,
               std::size_t queries, Rng& rng, Episode& episode) {
    auto support = view.support_pool;
    rng.shuffle(support.begin(), support.end());
    auto make = [&](std::uint32_t index) {
        EpisodeExample ex;
        ex.source = ExampleRef{view.id, index};
        ex.image = dataset.image(ex.source);
        ex.slot = slot;
        ex.original_class = view.id;
        return ex;
    };
    for (std::size_t k = 0; k < shots; ++k) episode.support.push_back(make(support[k]));
    if (queries == 0) return;
    if (view.query_pool.empty()) {
        for (std::size_t q = 0; q < queries; ++q) episode.query.push_back(make(support[shots + q]));
    } else {
        auto pool = view.query_pool;
        rng.shuffle(pool.begin(), pool.end());
        for (std::size_t q = 0; q < queries; ++q) episode.query.push_back(make(pool[q]));
    }
}

}  // namespace

Episode sample_episode(const Dataset& dataset, std::span<const ClassView> pool, std::size_t ways,
                       std::size_t shots, std::uint64_t seed, const EpisodeConstraints& constraints) {
    require(ways >= 1 && shots >= 1, ErrorKind::InvalidArgument, "episodes need at least one way and one shot");
    const std::size_t queries = constraints.queries_per_class;
    Rng rng(seed);

    require(constraints.required_classes.size() <= ways, ErrorKind::InvalidArgument,
            "more required classes than ways");
    std::vector<const ClassView*> required;
    for (ClassId id : constraints.required_classes) {
        const ClassView* found = nullptr;
        for (const auto& view : pool) {
            if (view.id == id) found = &view;
        }
        require(found != nullptr, ErrorKind::InsufficientData,
                "required class " + std::to_string(to_index(id)) + " is not available to the sampler");
        require(eligible(*found, shots, queries), ErrorKind::InsufficientData,
                "required class " + std::to_string(to_index(id)) + " has too few examples for the episode");
        require(std::find(required.begin(), required.end(), found) == required.end(), ErrorKind::InvalidArgument,
                "class " + std::to_string(to_index(id)) + " is required twice");
        required.push_back(found);
    }

    std::vector<const ClassView*> candidates;
    for (const auto& view : pool) {
        if (std::find(required.begin(), required.end(), &view) == required.end() && eligible(view, shots, queries))
            candidates.push_back(&view);
    }
    const std::size_t random_slots = ways - required.size();
    require(candidates.size() >= random_slots, ErrorKind::InsufficientData,
            "need " + std::to_string(random_slots) + " eligible classes with " + std::to_string(shots + queries) +
                " examples, found " + std::to_string(candidates.size()));
    rng.shuffle(candidates.begin(), candidates.end());
    candidates.resize(random_slots);
    candidates.insert(candidates.end(), required.begin(), required.end());

    Episode episode;
    for (std::size_t slot = 0; slot < candidates.size(); ++slot) {
        episode.slots.push_back(candidates[slot]->id);
        fill_slot(dataset, *candidates[slot], slot, shots, queries, rng, episode);
    }
    return episode;
}

std::vector<ClassView> views_for_role(const Dataset& dataset, ClassRole role, bool whole_class) {
    std::vector<ClassView> views;
    for (ClassId id : dataset.ids_with_role(role)) {
        ClassView v;
        v.id = id;
        if (whole_class) {
            v.support_pool = dataset.train_indices(id);
            auto val = dataset.validation_indices(id);
            v.support_pool.insert(v.support_pool.end(), val.begin(), val.end());
        } else {
            v.support_pool = dataset.train_indices(id);
            v.query_pool = dataset.validation_indices(id);
        }
        views.push_back(std::move(v));
    }
    return views;
}

Episode sample_episode(const Dataset& dataset, std::size_t ways, std::size_t shots, std::uint64_t seed,
                       const EpisodeConstraints& constraints) {
    auto views = views_for_role(dataset, ClassRole::Ordinary);
    for (auto role : {ClassRole::Target, ClassRole::Backdoor}) {
        for (auto& v : views_for_role(dataset, role)) {
            if (std::find(constraints.required_classes.begin(), constraints.required_classes.end(), v.id) !=
                constraints.required_classes.end())
                views.push_back(std::move(v));
        }
    }
    return sample_episode(dataset, views, ways, shots, seed, constraints);
}

template <class T>
Tensor<T> images_to_batch(std::span<const Image* const> images) {
    require(!images.empty(), ErrorKind::InvalidArgument, "cannot build an empty batch");
    const Image& first = *images.front();
    const std::size_t per = first.pixels.size();
    Tensor<T> out({images.size(), first.channels, first.height, first.width});
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Image& img = *images[i];
        require(img.height == first.height && img.width == first.width && img.channels == first.channels,
                ErrorKind::ShapeMismatch, "images in a batch must share one shape");
        for (std::size_t j = 0; j < per; ++j) {
            out.data[i * per + j] = static_cast<T>(img.pixels[j]) / static_cast<T>(255);
        }
    }
    return out;
}

template <class T>
Tensor<T> examples_to_batch(std::span<const EpisodeExample> examples) {
    std::vector<const Image*> ptrs;
    ptrs.reserve(examples.size());
    for (const auto& ex : examples) ptrs.push_back(&ex.image);
    return images_to_batch<T>(ptrs);
}

template <class T>
Tensor<T> examples_to_batch(std::span<const EpisodeExample> examples, std::span<const std::size_t> indices) {
    std::vector<const Image*> ptrs;
    ptrs.reserve(indices.size());
    for (auto i : indices) ptrs.push_back(&examples[i].image);
    return images_to_batch<T>(ptrs);
}

std::vector<std::size_t> slot_labels(std::span<const EpisodeExample> examples) {
    std::vector<std::size_t> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) out.push_back(ex.slot);
    return out;
}

template Tensor<float> images_to_batch(std::span<const Image* const>);
template Tensor<double> images_to_batch(std::span<const Image* const>);
template Tensor<float> examples_to_batch(std::span<const EpisodeExample>);
template Tensor<double> examples_to_batch(std::span<const EpisodeExample>);
template Tensor<float> examples_to_batch(std::span<const EpisodeExample>, std::span<const std::size_t>);
template Tensor<double> examples_to_batch(std::span<const EpisodeExample>, std::span<const std::size_t>);

}  // namespace fedmeta
