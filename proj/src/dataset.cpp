#include "fedmeta/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "fedmeta/binary_io.hpp"
#include "fedmeta/error.hpp"
#include "fedmeta/rng.hpp"

namespace fedmeta {

std::string_view to_string(ClassRole role) {
    switch (role) {
        case ClassRole::Ordinary: return "ordinary";
        case ClassRole::Backdoor: return "backdoor";
        case ClassRole::Target: return "target";
        case ClassRole::MetaTest: return "meta_test";
    }
    return "unknown";
}

Dataset::Dataset(std::vector<ClassData> classes, std::size_t holdout)
    : classes_(std::move(classes)), holdout_(holdout) {
    for (std::size_t c = 0; c < classes_.size(); ++c) {
        const auto& cls = classes_[c];
        for (const auto& img : cls.examples) {
            require(img.pixels.size() == static_cast<std::size_t>(img.height) * img.width * img.channels,
                    ErrorKind::CorruptData, "class " + std::to_string(c) + " has an image with inconsistent size");
        }
    }
}

const ClassData& Dataset::at(ClassId id) const {
    require(to_index(id) < classes_.size(), ErrorKind::InvalidArgument,
            "class id " + std::to_string(to_index(id)) + " out of range");
    return classes_[to_index(id)];
}

const Image& Dataset::image(ExampleRef ref) const {
    const auto& cls = at(ref.cls);
    require(ref.index < cls.examples.size(), ErrorKind::InvalidArgument,
            "example " + std::to_string(ref.index) + " out of range for class " + std::to_string(to_index(ref.cls)));
    return cls.examples[ref.index];
}

std::vector<std::uint32_t> Dataset::train_indices(ClassId id) const {
    const auto n = at(id).examples.size();
    const auto cut = n > holdout_ ? n - holdout_ : 0;
    std::vector<std::uint32_t> out(cut);
    for (std::size_t i = 0; i < cut; ++i) out[i] = static_cast<std::uint32_t>(i);
    return out;
}

std::vector<std::uint32_t> Dataset::validation_indices(ClassId id) const {
    const auto n = at(id).examples.size();
    const auto cut = n > holdout_ ? n - holdout_ : 0;
    std::vector<std::uint32_t> out;
    for (std::size_t i = cut; i < n; ++i) out.push_back(static_cast<std::uint32_t>(i));
    return out;
}

std::vector<ClassId> Dataset::ids_with_role(ClassRole role) const {
    std::vector<ClassId> out;
    for (std::size_t c = 0; c < classes_.size(); ++c) {
        if (classes_[c].role == role) out.push_back(ClassId{static_cast<std::uint32_t>(c)});
    }
    return out;
}

void Dataset::check_roles(std::size_t backdoor_classes, std::size_t target_classes) const {
    const auto b = ids_with_role(ClassRole::Backdoor).size();
    const auto t = ids_with_role(ClassRole::Target).size();
    require(b == backdoor_classes && t == target_classes, ErrorKind::InvalidArgument,
            "dataset has " + std::to_string(b) + " backdoor and " + std::to_string(t) +
                " target classes; expected " + std::to_string(backdoor_classes) + " and " +
                std::to_string(target_classes));
}

Image rotate_quarter(const Image& image, int quarter_turns) {
    require(image.height == image.width, ErrorKind::InvalidArgument, "rotation requires square images");
    Image cur = image;
    const int turns = ((quarter_turns % 4) + 4) % 4;
    const std::size_t n = image.height;
    for (int t = 0; t < turns; ++t) {
        Image next = cur;
        for (std::size_t c = 0; c < cur.channels; ++c) {
            for (std::size_t y = 0; y < n; ++y) {
                for (std::size_t x = 0; x < n; ++x) {
                    next.at(c, y, x) = cur.at(c, n - 1 - x, y);
                }
            }
        }
        cur = std::move(next);
    }
    return cur;
}

Dataset rotate_augment(const Dataset& dataset) {
    std::vector<ClassData> out;
    out.reserve(dataset.class_count() * 4);
    for (const auto& cls : dataset.classes()) {
        for (int r = 0; r < 4; ++r) {
            ClassData rotated;
            rotated.role = cls.role;
            if (r > 0 && (cls.role == ClassRole::Backdoor || cls.role == ClassRole::Target)) {
                rotated.role = ClassRole::Ordinary;
            }
            rotated.examples.reserve(cls.examples.size());
            for (const auto& img : cls.examples) rotated.examples.push_back(rotate_quarter(img, r));
            out.push_back(std::move(rotated));
        }
    }
    return Dataset(std::move(out), dataset.holdout());
}

void SyntheticConfig::validate() const {
    require(image_size >= 8, ErrorKind::InvalidArgument, "synthetic image size must be at least 8");
    require(examples_per_class > holdout, ErrorKind::InvalidArgument,
            "examples per class must exceed the validation holdout");
    require(min_strokes >= 1 && max_strokes >= min_strokes, ErrorKind::InvalidArgument, "invalid stroke range");
    require(total_classes() > 0, ErrorKind::InvalidArgument, "synthetic dataset needs at least one class");
    require(flip_probability >= 0.0 && flip_probability < 0.5, ErrorKind::InvalidArgument,
            "flip probability must lie in [0, 0.5)");
}

namespace {

struct Stroke {
    double x0, y0, x1, y1;
};

Image render(const std::vector<Stroke>& strokes, std::size_t size) {
    Image img;
    img.height = static_cast<std::uint16_t>(size);
    img.width = static_cast<std::uint16_t>(size);
    img.channels = 1;
    img.pixels.assign(size * size, 0);
    const double hi = static_cast<double>(size) - 1.0;
    for (const auto& s : strokes) {
        const double len = std::hypot(s.x1 - s.x0, s.y1 - s.y0);
        const int steps = std::max(1, static_cast<int>(std::ceil(len * 3.0)));
        for (int i = 0; i <= steps; ++i) {
            const double t = static_cast<double>(i) / steps;
            const double x = std::clamp(s.x0 + t * (s.x1 - s.x0), 0.0, hi);
            const double y = std::clamp(s.y0 + t * (s.y1 - s.y0), 0.0, hi);
            img.at(0, static_cast<std::size_t>(std::lround(y)), static_cast<std::size_t>(std::lround(x))) = 255;
        }
    }
    return img;
}

std::vector<Stroke> random_strokes(const SyntheticConfig& cfg, Rng& rng) {
    const double lo = 2.0;
    const double hi = static_cast<double>(cfg.image_size) - 3.0;
    const std::size_t count = cfg.min_strokes + rng.below(cfg.max_strokes - cfg.min_strokes + 1);
    std::vector<Stroke> strokes;
    for (std::size_t i = 0; i < count; ++i) {
        Stroke s{};
        do {
            s = {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
        } while (std::hypot(s.x1 - s.x0, s.y1 - s.y0) < 3.0);
        strokes.push_back(s);
    }
    return strokes;
}

}  // namespace

double hamming_fraction(const Image& a, const Image& b) {
    require(a.pixels.size() == b.pixels.size() && !a.pixels.empty(), ErrorKind::ShapeMismatch,
            "hamming distance needs equally sized images");
    std::size_t diff = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) diff += (a.pixels[i] != b.pixels[i]);
    return static_cast<double>(diff) / static_cast<double>(a.pixels.size());
}

SyntheticDataset make_synthetic_dataset(const SyntheticConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, "synthetic-prototypes"));
    const std::size_t total = cfg.total_classes();

    std::vector<std::vector<Stroke>> glyphs;
    SyntheticDataset out;
    constexpr int kMaxAttempts = 10000;
    for (std::size_t c = 0; c < total; ++c) {
        int attempts = 0;
        while (true) {
            require(++attempts <= kMaxAttempts, ErrorKind::InvalidArgument,
                    "could not generate " + std::to_string(total) + " mutually distinct glyph prototypes");
            auto strokes = random_strokes(cfg, rng);
            Image proto = render(strokes, cfg.image_size);
            bool distinct = true;
            for (const auto& other : out.prototypes) {
                if (hamming_fraction(proto, other) < cfg.min_prototype_distance) {
                    distinct = false;
                    break;
                }
            }
            if (distinct) {
                glyphs.push_back(std::move(strokes));
                out.prototypes.push_back(std::move(proto));
                break;
            }
        }
    }

    std::vector<ClassData> classes(total);
    for (std::size_t c = 0; c < total; ++c) {
        auto& cls = classes[c];
        if (c < cfg.meta_train_classes) {
            cls.role = ClassRole::Ordinary;
        } else if (c < cfg.meta_train_classes + cfg.meta_test_classes) {
            cls.role = ClassRole::MetaTest;
        } else if (c < cfg.meta_train_classes + cfg.meta_test_classes + cfg.backdoor_classes) {
            cls.role = ClassRole::Backdoor;
        } else {
            cls.role = ClassRole::Target;
        }
        Rng ex_rng(derive_seed(seed, "synthetic-examples", {c}));
        for (std::size_t e = 0; e < cfg.examples_per_class; ++e) {
            auto strokes = glyphs[c];
            for (auto& s : strokes) {
                s.x0 += ex_rng.uniform(-cfg.endpoint_jitter, cfg.endpoint_jitter);
                s.y0 += ex_rng.uniform(-cfg.endpoint_jitter, cfg.endpoint_jitter);
                s.x1 += ex_rng.uniform(-cfg.endpoint_jitter, cfg.endpoint_jitter);
                s.y1 += ex_rng.uniform(-cfg.endpoint_jitter, cfg.endpoint_jitter);
            }
            Image img = render(strokes, cfg.image_size);
            for (auto& px : img.pixels) {
                if (ex_rng.bernoulli(cfg.flip_probability)) px = static_cast<std::uint8_t>(255 - px);
            }
            cls.examples.push_back(std::move(img));
        }
    }
    out.dataset = Dataset(std::move(classes), cfg.holdout);
    return out;
}

SyntheticDataset make_synthetic_dataset(std::size_t num_classes, std::size_t examples_per_class,
                                        std::size_t image_size, std::uint64_t seed) {
    SyntheticConfig cfg;
    cfg.meta_train_classes = num_classes;
    cfg.meta_test_classes = 0;
    cfg.backdoor_classes = 0;
    cfg.target_classes = 0;
    cfg.examples_per_class = examples_per_class;
    cfg.image_size = image_size;
    cfg.holdout = examples_per_class > 5 ? 5 : 0;
    return make_synthetic_dataset(cfg, seed);
}

namespace {
constexpr std::string_view kPackedMagic = "FMD1";
}

std::string encode_packed_dataset(const Dataset& dataset) {
    io::ByteWriter w;
    w.bytes(kPackedMagic);
    w.u32(static_cast<std::uint32_t>(dataset.class_count()));
    for (const auto& cls : dataset.classes()) {
        w.u32(static_cast<std::uint32_t>(cls.examples.size()));
        const Image shape = cls.examples.empty() ? Image{} : cls.examples.front();
        w.u16(shape.height);
        w.u16(shape.width);
        w.u8(shape.channels);
        for (const auto& img : cls.examples) {
            require(img.height == shape.height && img.width == shape.width && img.channels == shape.channels,
                    ErrorKind::InvalidArgument, "packed format requires one image shape per class");
            w.bytes(std::string_view(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size()));
        }
    }
    for (std::size_t c = 0; c < dataset.class_count(); ++c) {
        w.u32(static_cast<std::uint32_t>(c));
        w.u8(static_cast<std::uint8_t>(dataset.classes()[c].role));
    }
    return w.buffer();
}

Dataset decode_packed_dataset(std::string_view bytes, std::size_t holdout) {
    io::ByteReader r(bytes);
    require(r.remaining() >= kPackedMagic.size() && r.bytes(kPackedMagic.size(), "magic") == kPackedMagic,
            ErrorKind::CorruptData, "corrupt header: not an FMD1 dataset (bad magic)");
    const std::uint32_t count = r.u32("class count");
    require(count > 0, ErrorKind::CorruptData, "empty dataset");
    std::vector<ClassData> classes(count);
    for (std::uint32_t c = 0; c < count; ++c) {
        const std::uint32_t examples = r.u32("example count");
        const std::uint16_t h = r.u16("image height");
        const std::uint16_t w = r.u16("image width");
        const std::uint8_t ch = r.u8("image channels");
        const std::size_t per = static_cast<std::size_t>(h) * w * ch;
        require(examples == 0 || per > 0, ErrorKind::CorruptData,
                "corrupt header: class " + std::to_string(c) + " has zero-sized images");
        classes[c].examples.reserve(examples);
        for (std::uint32_t e = 0; e < examples; ++e) {
            auto raw = r.bytes(per, "pixels");
            Image img;
            img.height = h;
            img.width = w;
            img.channels = ch;
            img.pixels.assign(raw.begin(), raw.end());
            classes[c].examples.push_back(std::move(img));
        }
    }
    for (std::uint32_t c = 0; c < count; ++c) {
        const std::uint32_t index = r.u32("role table index");
        const std::uint8_t role = r.u8("role table role");
        require(index < count && role <= static_cast<std::uint8_t>(ClassRole::MetaTest), ErrorKind::CorruptData,
                "corrupt role table entry " + std::to_string(c));
        classes[index].role = static_cast<ClassRole>(role);
    }
    require(r.done(), ErrorKind::CorruptData, "dataset has " + std::to_string(r.remaining()) + " trailing bytes");
    return Dataset(std::move(classes), holdout);
}

void save_packed_dataset(const std::string& path, const Dataset& dataset) {
    io::write_file(path, encode_packed_dataset(dataset));
}

Dataset load_packed_dataset(const std::string& path, std::size_t holdout) {
    return decode_packed_dataset(io::read_file(path), holdout);
}

}  // namespace fedmeta
