#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace fedmeta {

/// Index of a class inside its Dataset.
enum class ClassId : std::uint32_t {};

constexpr std::uint32_t to_index(ClassId id) { return static_cast<std::uint32_t>(id); }

enum class ClassRole : std::uint8_t {
    Ordinary = 0,  // meta-training class
    Backdoor = 1,
    Target = 2,
    MetaTest = 3,
};

std::string_view to_string(ClassRole role);

struct ExampleRef {
    ClassId cls{};
    std::uint32_t index = 0;

    auto operator<=>(const ExampleRef&) const = default;
};

struct Image {
    std::uint16_t height = 0;
    std::uint16_t width = 0;
    std::uint8_t channels = 1;
    std::vector<std::uint8_t> pixels;  // CHW

    std::uint8_t& at(std::size_t c, std::size_t y, std::size_t x) {
        return pixels[(c * height + y) * width + x];
    }
    std::uint8_t at(std::size_t c, std::size_t y, std::size_t x) const {
        return pixels[(c * height + y) * width + x];
    }
    bool operator==(const Image&) const = default;
};

struct ClassData {
    ClassRole role = ClassRole::Ordinary;
    std::vector<Image> examples;
};

/// Immutable collection of labeled image classes. The last `holdout`
/// examples of every class form its validation split; the rest are training.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::vector<ClassData> classes, std::size_t holdout);

    std::size_t class_count() const { return classes_.size(); }
    const ClassData& at(ClassId id) const;
    const Image& image(ExampleRef ref) const;
    const std::vector<ClassData>& classes() const { return classes_; }
    std::size_t holdout() const { return holdout_; }

    std::vector<std::uint32_t> train_indices(ClassId id) const;
    std::vector<std::uint32_t> validation_indices(ClassId id) const;
    std::vector<ClassId> ids_with_role(ClassRole role) const;

    /// Throws unless exactly the given numbers of backdoor and target classes exist.
    void check_roles(std::size_t backdoor_classes, std::size_t target_classes) const;

private:
    std::vector<ClassData> classes_;
    std::size_t holdout_ = 0;
};

/// Rotates a square image by 90 degrees clockwise `quarter_turns` times.
Image rotate_quarter(const Image& image, int quarter_turns);

/// Every class becomes four classes (0, 90, 180, 270 degrees), stored
/// consecutively. Rotated copies of backdoor and target classes become
/// ordinary classes so the role counts are unchanged.
Dataset rotate_augment(const Dataset& dataset);

struct SyntheticConfig {
    std::size_t meta_train_classes = 64;
    std::size_t meta_test_classes = 12;
    std::size_t backdoor_classes = 4;
    std::size_t target_classes = 1;
    std::size_t examples_per_class = 20;
    std::size_t image_size = 16;
    std::size_t holdout = 5;
    std::size_t min_strokes = 3;
    std::size_t max_strokes = 5;
    double endpoint_jitter = 0.8;  // pixels
    double flip_probability = 0.03;
    double min_prototype_distance = 0.15;  // fraction of pixels

    std::size_t total_classes() const {
        return meta_train_classes + meta_test_classes + backdoor_classes + target_classes;
    }
    void validate() const;
};

struct SyntheticDataset {
    Dataset dataset;
    std::vector<Image> prototypes;  // one per class
};

/// Procedural glyph classes: each class is a set of random strokes; every
/// example re-renders them with jittered endpoints and random pixel flips.
/// Classes are laid out ordinary, meta-test, backdoor, target.
SyntheticDataset make_synthetic_dataset(const SyntheticConfig& config, std::uint64_t seed);

/// All-ordinary variant.
SyntheticDataset make_synthetic_dataset(std::size_t num_classes, std::size_t examples_per_class,
                                        std::size_t image_size, std::uint64_t seed);

/// Fraction of pixels on which two images differ.
double hamming_fraction(const Image& a, const Image& b);

/// FMD1: magic, u32 class count, per class (u32 examples, u16 H, u16 W,
/// u8 channels, raw u8 pixels), then per class (u32 index, u8 role).
std::string encode_packed_dataset(const Dataset& dataset);
Dataset decode_packed_dataset(std::string_view bytes, std::size_t holdout);

void save_packed_dataset(const std::string& path, const Dataset& dataset);
Dataset load_packed_dataset(const std::string& path, std::size_t holdout);

}  // namespace fedmeta
