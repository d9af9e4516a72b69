#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fedmeta/dataset.hpp"
#include "fedmeta/episode.hpp"
#include "fedmeta/param_vector.hpp"
#include "fedmeta/reptile.hpp"

namespace fedmeta {

enum class Corner { TopLeft, TopRight, BottomLeft, BottomRight };

struct KeyPixel {
    std::uint16_t row = 0;
    std::uint16_t col = 0;
    std::uint8_t value = 255;

    bool operator==(const KeyPixel&) const = default;
};

/// Pixel pattern stamped onto backdoor images. Pattern coordinates are
/// relative to the pattern's bounding box, which is placed `offset` pixels in
/// from `corner`. The same values are written to every channel.
class BackdoorKey {
public:
    BackdoorKey(std::vector<KeyPixel> pattern, Corner corner, std::size_t offset);

    /// Filled size x size square of `value`.
    static BackdoorKey square(std::size_t size, std::uint8_t value = 255, Corner corner = Corner::BottomRight,
                              std::size_t offset = 0);

    const std::vector<KeyPixel>& pattern() const { return pattern_; }
    Corner corner() const { return corner_; }
    std::size_t offset() const { return offset_; }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    bool fits(std::size_t height, std::size_t width) const;

    /// Absolute (row, col, value) positions for an image of the given size.
    std::vector<KeyPixel> placed(std::size_t height, std::size_t width) const;

    bool operator==(const BackdoorKey&) const = default;

private:
    std::vector<KeyPixel> pattern_;
    Corner corner_;
    std::size_t offset_;
    std::size_t rows_ = 0, cols_ = 0;
};

/// Sets the masked pixels to the key values. Throws if the key does not fit.
Image stamp_key(const Image& image, const BackdoorKey& key);

struct MixRatio {
    std::size_t backdoor = 2;
    std::size_t target = 3;

    bool operator==(const MixRatio&) const = default;
};

inline InnerSchedule epochs_schedule(std::size_t epochs) {
    InnerSchedule s;
    s.count = epochs;
    s.unit = StepUnit::Epochs;
    return s;
}

struct AttackConfig {
    double boost = 3.0;  // lambda
    MixRatio ratio;
    std::size_t episodes = 500;  // E_a
    InnerSchedule inner = epochs_schedule(5);
    BackdoorKey key = BackdoorKey::square(3);

    /// Number of backdoor examples in a target slot of `shots` examples.
    std::size_t backdoor_shots(std::size_t shots) const;
    void validate() const;
};

/// Per-class example indices used by the attack. Every backdoor class uses
/// the same index lists.
struct AttackSplit {
    std::vector<std::uint32_t> benign_backdoor;      // correctly labeled, for benign users
    std::vector<std::uint32_t> backdoor_train;       // stamped, used by the attacker
    std::vector<std::uint32_t> backdoor_validation;  // stamped, never seen by the attacker
    std::vector<std::uint32_t> benign_target;        // target examples held by benign users
    std::vector<std::uint32_t> attacker_target;      // X_T

    void validate() const;
};

/// With n examples per class and holdout h: benign backdoor [0, n-2h),
/// attack training [n-2h, n-h), attack validation [n-h, n); target examples
/// [0, n/2) go to benign users and [n/2, n) to the attacker.
AttackSplit default_attack_split(std::size_t examples_per_class, std::size_t holdout);

/// Everything the attacker and the evaluator need, prepared once.
struct PoisonedData {
    ClassId target{};
    std::vector<ClassId> backdoor_classes;
    std::vector<EpisodeExample> backdoor_train;       // stamped, poisoned, slot unset
    std::vector<EpisodeExample> backdoor_validation;  // stamped, poisoned, slot unset
    std::vector<EpisodeExample> target_examples;      // X_T, benign
};

/// Stamps the key onto the attack splits of every backdoor class.
PoisonedData prepare_poisoned_data(const Dataset& dataset, const AttackConfig& config, const AttackSplit& split);

/// N-1 benign classes from `benign_pool` plus the target class in the last
/// slot, whose K examples mix stamped backdoor images (poisoned, labeled as
/// the target) and benign target images in the configured ratio.
Episode build_poisoned_episode(const Dataset& dataset, std::span<const ClassView> benign_pool,
                               const PoisonedData& data, const AttackConfig& config, std::size_t ways,
                               std::size_t shots, std::uint64_t seed);

/// Element-wise lambda * delta.
ParamVector boost_delta(const ParamVector& delta, double boost);

/// Local Reptile over E_a poisoned episodes, returning lambda (theta_a - theta_G).
ParamVector attacker_local_train(const Learner& learner, const ParamVector& global, const Dataset& dataset,
                                 std::span<const ClassView> benign_pool, const PoisonedData& data,
                                 const AttackConfig& attack, const ReptileConfig& reptile, std::uint64_t seed,
                                 std::size_t threads = 1);

}  // namespace fedmeta
