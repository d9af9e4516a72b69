#include "fedmeta/attack.hpp"

#include <algorithm>
#include <set>

#include "fedmeta/error.hpp"
#include "fedmeta/rng.hpp"

namespace fedmeta {

BackdoorKey::BackdoorKey(std::vector<KeyPixel> pattern, Corner corner, std::size_t offset)
    : pattern_(std::move(pattern)), corner_(corner), offset_(offset) {
    require(!pattern_.empty(), ErrorKind::InvalidArgument, "backdoor key mask must not be empty");
    std::set<std::pair<std::uint16_t, std::uint16_t>> seen;
    for (const auto& p : pattern_) {
        require(seen.emplace(p.row, p.col).second, ErrorKind::InvalidArgument,
                "backdoor key lists pixel (" + std::to_string(p.row) + ", " + std::to_string(p.col) + ") twice");
        rows_ = std::max<std::size_t>(rows_, p.row + 1u);
        cols_ = std::max<std::size_t>(cols_, p.col + 1u);
    }
}

BackdoorKey BackdoorKey::square(std::size_t size, std::uint8_t value, Corner corner, std::size_t offset) {
    std::vector<KeyPixel> pattern;
    for (std::size_t r = 0; r < size; ++r) {
        for (std::size_t c = 0; c < size; ++c) {
            pattern.push_back({static_cast<std::uint16_t>(r), static_cast<std::uint16_t>(c), value});
        }
    }
    return BackdoorKey(std::move(pattern), corner, offset);
}

bool BackdoorKey::fits(std::size_t height, std::size_t width) const {
    return rows_ + offset_ <= height && cols_ + offset_ <= width;
}

std::vector<KeyPixel> BackdoorKey::placed(std::size_t height, std::size_t width) const {
    require(fits(height, width), ErrorKind::InvalidArgument,
            "backdoor key (" + std::to_string(rows_) + "x" + std::to_string(cols_) + " at offset " +
                std::to_string(offset_) + ") does not fit a " + std::to_string(height) + "x" +
                std::to_string(width) + " image");
    const bool bottom = corner_ == Corner::BottomLeft || corner_ == Corner::BottomRight;
    const bool right = corner_ == Corner::TopRight || corner_ == Corner::BottomRight;
    const std::size_t r0 = bottom ? height - offset_ - rows_ : offset_;
    const std::size_t c0 = right ? width - offset_ - cols_ : offset_;
    std::vector<KeyPixel> out;
    out.reserve(pattern_.size());
    for (const auto& p : pattern_) {
        out.push_back({static_cast<std::uint16_t>(r0 + p.row), static_cast<std::uint16_t>(c0 + p.col), p.value});
    }
    return out;
}

Image stamp_key(const Image& image, const BackdoorKey& key) {
    Image out = image;
    for (const auto& p : key.placed(image.height, image.width)) {
        for (std::size_t c = 0; c < image.channels; ++c) out.at(c, p.row, p.col) = p.value;
    }
    return out;
}

std::size_t AttackConfig::backdoor_shots(std::size_t shots) const {
    const std::size_t parts = ratio.backdoor + ratio.target;
    require((shots * ratio.backdoor) % parts == 0, ErrorKind::InvalidArgument,
            "ratio " + std::to_string(ratio.backdoor) + ":" + std::to_string(ratio.target) + " does not divide " +
                std::to_string(shots) + " shots evenly");
    return shots * ratio.backdoor / parts;
}

void AttackConfig::validate() const {
    require(boost > 0.0, ErrorKind::InvalidArgument, "boosting factor must be positive");
    require(ratio.target > 0, ErrorKind::InvalidArgument, "the target part of the mixing ratio must be positive");
    inner.validate();
}

void AttackSplit::validate() const {
    auto disjoint = [](std::vector<std::uint32_t> a, std::vector<std::uint32_t> b) {
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        std::vector<std::uint32_t> both;
        std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
        return both.empty();
    };
    require(disjoint(backdoor_train, backdoor_validation) && disjoint(benign_backdoor, backdoor_train) &&
                disjoint(benign_backdoor, backdoor_validation),
            ErrorKind::InvalidArgument, "backdoor example splits must be disjoint");
    require(!backdoor_train.empty() && !backdoor_validation.empty() && !attacker_target.empty(),
            ErrorKind::InvalidArgument, "attack splits must not be empty");
}

AttackSplit default_attack_split(std::size_t n, std::size_t h) {
    require(h > 0 && n >= 3 * h, ErrorKind::InvalidArgument,
            "default attack split needs at least three holdout-sized blocks per class");
    auto range = [](std::size_t lo, std::size_t hi) {
        std::vector<std::uint32_t> out;
        for (std::size_t i = lo; i < hi; ++i) out.push_back(static_cast<std::uint32_t>(i));
        return out;
    };
    AttackSplit s;
    s.benign_backdoor = range(0, n - 2 * h);
    s.backdoor_train = range(n - 2 * h, n - h);
    s.backdoor_validation = range(n - h, n);
    s.benign_target = range(0, n / 2);
    s.attacker_target = range(n / 2, n);
    return s;
}

PoisonedData prepare_poisoned_data(const Dataset& dataset, const AttackConfig& config, const AttackSplit& split) {
    config.validate();
    split.validate();
    const auto targets = dataset.ids_with_role(ClassRole::Target);
    require(targets.size() == 1, ErrorKind::InsufficientData, "attack needs exactly one target class");
    PoisonedData data;
    data.target = targets.front();
    data.backdoor_classes = dataset.ids_with_role(ClassRole::Backdoor);
    require(!data.backdoor_classes.empty(), ErrorKind::InsufficientData, "attack needs at least one backdoor class");

    auto stamped = [&](ClassId cls, std::uint32_t index) {
        EpisodeExample ex;
        ex.source = {cls, index};
        ex.image = stamp_key(dataset.image(ex.source), config.key);
        ex.poisoned = true;
        ex.original_class = cls;
        return ex;
    };
    for (ClassId cls : data.backdoor_classes) {
        for (auto i : split.backdoor_train) data.backdoor_train.push_back(stamped(cls, i));
        for (auto i : split.backdoor_validation) data.backdoor_validation.push_back(stamped(cls, i));
    }
    for (auto i : split.attacker_target) {
        EpisodeExample ex;
        ex.source = {data.target, i};
        ex.image = dataset.image(ex.source);
        ex.original_class = data.target;
        data.target_examples.push_back(std::move(ex));
    }
    return data;
}

Episode build_poisoned_episode(const Dataset& dataset, std::span<const ClassView> benign_pool,
                               const PoisonedData& data, const AttackConfig& config, std::size_t ways,
                               std::size_t shots, std::uint64_t seed) {
    require(ways >= 2, ErrorKind::InvalidArgument, "poisoned episodes need at least two ways");
    const std::size_t n_backdoor = config.backdoor_shots(shots);
    const std::size_t n_target = shots - n_backdoor;
    require(data.backdoor_train.size() >= n_backdoor, ErrorKind::InsufficientData,
            "ratio needs " + std::to_string(n_backdoor) + " backdoor examples, have " +
                std::to_string(data.backdoor_train.size()));
    require(data.target_examples.size() >= n_target, ErrorKind::InsufficientData,
            "ratio needs " + std::to_string(n_target) + " target examples, have " +
                std::to_string(data.target_examples.size()));

    Episode episode = sample_episode(dataset, benign_pool, ways - 1, shots, derive_seed(seed, "benign-slots"));
    Rng rng(derive_seed(seed, "target-slot"));
    const std::size_t slot = ways - 1;
    episode.slots.push_back(data.target);

    std::vector<std::size_t> b(data.backdoor_train.size()), t(data.target_examples.size());
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = i;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = i;
    rng.shuffle(b.begin(), b.end());
    rng.shuffle(t.begin(), t.end());
    for (std::size_t i = 0; i < n_backdoor; ++i) {
        episode.support.push_back(data.backdoor_train[b[i]]);
        episode.support.back().slot = slot;
    }
    for (std::size_t i = 0; i < n_target; ++i) {
        episode.support.push_back(data.target_examples[t[i]]);
        episode.support.back().slot = slot;
    }
    return episode;
}

ParamVector boost_delta(const ParamVector& delta, double boost) {
    ParamVector out = delta;
    for (auto& v : out.values()) v = static_cast<float>(static_cast<double>(v) * boost);
    return out;
}

ParamVector attacker_local_train(const Learner& learner, const ParamVector& global, const Dataset& dataset,
                                 std::span<const ClassView> benign_pool, const PoisonedData& data,
                                 const AttackConfig& attack, const ReptileConfig& reptile, std::uint64_t seed,
                                 std::size_t threads) {
    attack.validate();
    ReptileConfig cfg = reptile;
    cfg.episodes = attack.episodes;
    cfg.inner = attack.inner;
    EpisodeSampler sampler = [&](std::uint64_t s) {
        return build_poisoned_episode(dataset, benign_pool, data, attack, cfg.ways, cfg.shots, s);
    };
    const ParamVector local = local_meta_train(learner, global, sampler, cfg, seed, threads);
    return boost_delta(local - global, attack.boost);
}

}  // namespace fedmeta
