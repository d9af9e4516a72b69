#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "fedmeta/dataset.hpp"
#include "fedmeta/episode.hpp"
#include "fedmeta/error.hpp"
#include "fedmeta/rng.hpp"

using namespace fedmeta;

namespace {

const SyntheticDataset& synth() {
    static const SyntheticDataset d = make_synthetic_dataset(SyntheticConfig{}, 42);
    return d;
}

Image random_image(std::size_t size, std::uint64_t seed) {
    Rng rng(seed);
    Image img{static_cast<std::uint16_t>(size), static_cast<std::uint16_t>(size), 1, {}};
    for (std::size_t i = 0; i < size * size; ++i) img.pixels.push_back(static_cast<std::uint8_t>(rng.below(256)));
    return img;
}

}  // namespace

TEST_CASE("synthetic dataset layout and roles") {
    const auto& d = synth().dataset;
    SyntheticConfig cfg;
    CHECK(d.class_count() == cfg.total_classes());
    CHECK(d.ids_with_role(ClassRole::Ordinary).size() == 64);
    CHECK(d.ids_with_role(ClassRole::MetaTest).size() == 12);
    CHECK(d.ids_with_role(ClassRole::Backdoor).size() == 4);
    CHECK(d.ids_with_role(ClassRole::Target).size() == 1);
    CHECK_NOTHROW(d.check_roles(4, 1));
    CHECK_THROWS_AS(d.check_roles(3, 1), Error);
    for (const auto& cls : d.classes()) {
        CHECK(cls.examples.size() == 20);
        CHECK(cls.examples[0].height == 16);
    }
}

TEST_CASE("train and validation splits are disjoint and cover the class") {
    const auto& d = synth().dataset;
    for (std::uint32_t c = 0; c < d.class_count(); ++c) {
        auto tr = d.train_indices(ClassId{c});
        auto va = d.validation_indices(ClassId{c});
        CHECK(va.size() == 5);
        std::set<std::uint32_t> all(tr.begin(), tr.end());
        for (auto v : va) CHECK(all.insert(v).second);
        CHECK(all.size() == 20);
    }
}

TEST_CASE("synthetic generation is deterministic per seed") {
    SyntheticConfig cfg;
    cfg.meta_train_classes = 8;
    cfg.meta_test_classes = 2;
    const auto a = make_synthetic_dataset(cfg, 7);
    const auto b = make_synthetic_dataset(cfg, 7);
    const auto c = make_synthetic_dataset(cfg, 8);
    CHECK(encode_packed_dataset(a.dataset) == encode_packed_dataset(b.dataset));
    CHECK(encode_packed_dataset(a.dataset) != encode_packed_dataset(c.dataset));
}

TEST_CASE("prototypes are pairwise at least 15 percent apart") {
    const auto& protos = synth().prototypes;
    // Exhaustive recount, independent of the generator's own check.
    for (std::size_t i = 0; i < protos.size(); ++i) {
        for (std::size_t j = i + 1; j < protos.size(); ++j) {
            std::size_t diff = 0;
            for (std::size_t p = 0; p < protos[i].pixels.size(); ++p) diff += protos[i].pixels[p] != protos[j].pixels[p];
            CHECK(static_cast<double>(diff) / protos[i].pixels.size() >= 0.15);
        }
    }
}

TEST_CASE("nearest-prototype classifier is at least 95 percent accurate") {
    const auto& s = synth();
    std::size_t correct = 0, total = 0;
    for (std::uint32_t c = 0; c < s.dataset.class_count(); ++c) {
        for (const auto& img : s.dataset.at(ClassId{c}).examples) {
            std::size_t best = 0, best_d = SIZE_MAX;
            for (std::size_t p = 0; p < s.prototypes.size(); ++p) {
                std::size_t d = 0;
                for (std::size_t k = 0; k < img.pixels.size(); ++k) d += (img.pixels[k] > 127) != (s.prototypes[p].pixels[k] > 127);
                if (d < best_d) best_d = d, best = p;
            }
            correct += best == c;
            ++total;
        }
    }
    CHECK(static_cast<double>(correct) / total >= 0.95);
}

TEST_CASE("episode shape for 10-shot 5-way with one query per class") {
    const auto& d = synth().dataset;
    const auto ep = sample_episode(d, 5, 10, 3, EpisodeConstraints{{}, 1});
    CHECK(ep.support.size() == 50);
    CHECK(ep.query.size() == 5);
    std::set<ClassId> slots(ep.slots.begin(), ep.slots.end());
    CHECK(slots.size() == 5);
    std::map<std::size_t, std::size_t> per_slot;
    for (const auto& ex : ep.support) {
        ++per_slot[ex.slot];
        CHECK(ex.source.cls == ep.slots[ex.slot]);
        CHECK(d.at(ex.source.cls).role == ClassRole::Ordinary);
    }
    for (const auto& [slot, n] : per_slot) CHECK(n == 10);
}

TEST_CASE("support and query never share an example") {
    const auto& d = synth().dataset;
    const auto views = views_for_role(d, ClassRole::MetaTest, true);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto ep = sample_episode(d, views, 5, 5, seed, EpisodeConstraints{{}, 1});
        std::set<ExampleRef> support;
        for (const auto& ex : ep.support) CHECK(support.insert(ex.source).second);
        for (const auto& ex : ep.query) CHECK(support.count(ex.source) == 0);
    }
}

TEST_CASE("sampling is deterministic and independent of pool order for a fixed pool") {
    const auto& d = synth().dataset;
    const auto a = sample_episode(d, 5, 5, 11, EpisodeConstraints{{}, 1});
    const auto b = sample_episode(d, 5, 5, 11, EpisodeConstraints{{}, 1});
    CHECK(a.slots == b.slots);
    REQUIRE(a.support.size() == b.support.size());
    for (std::size_t i = 0; i < a.support.size(); ++i) CHECK(a.support[i].source == b.support[i].source);
}

TEST_CASE("required classes occupy the last slots") {
    const auto& d = synth().dataset;
    const ClassId target = d.ids_with_role(ClassRole::Target)[0];
    const ClassId backdoor = d.ids_with_role(ClassRole::Backdoor)[0];
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto ep = sample_episode(d, 5, 5, seed, EpisodeConstraints{{backdoor, target}, 1});
        CHECK(ep.slots[3] == backdoor);
        CHECK(ep.slots[4] == target);
        CHECK(ep.slot_of(target) == 4u);
    }
}

TEST_CASE("sampler errors") {
    const auto& d = synth().dataset;
    const ClassId target = d.ids_with_role(ClassRole::Target)[0];
    SUBCASE("required class missing from the pool") {
        const auto views = views_for_role(d, ClassRole::Ordinary);
        CHECK_THROWS_AS(sample_episode(d, views, 5, 5, 1, EpisodeConstraints{{target}, 1}), Error);
    }
    SUBCASE("dataset without a target class") {
        const auto plain = make_synthetic_dataset(10, 20, 16, 3).dataset;
        CHECK_THROWS_AS(sample_episode(plain, 5, 5, 1, EpisodeConstraints{{ClassId{99}}, 1}), Error);
    }
    SUBCASE("too few classes") {
        const auto views = views_for_role(d, ClassRole::Backdoor);
        CHECK_THROWS_AS(sample_episode(d, views, 5, 5, 1), Error);
    }
    SUBCASE("too few examples") {
        const auto views = views_for_role(d, ClassRole::Ordinary);
        CHECK_THROWS_AS(sample_episode(d, views, 5, 16, 1), Error);
    }
}

TEST_CASE("meta-test views never contain backdoor or target classes") {
    const auto& d = synth().dataset;
    for (const auto& v : views_for_role(d, ClassRole::MetaTest, true)) {
        CHECK(d.at(v.id).role == ClassRole::MetaTest);
        CHECK(v.support_pool.size() == 20);
    }
}

TEST_CASE("rotation") {
    const Image img = random_image(6, 5);
    SUBCASE("four quarter turns are the identity") {
        Image r = img;
        for (int i = 0; i < 4; ++i) r = rotate_quarter(r, 1);
        CHECK(r == img);
    }
    SUBCASE("rotation preserves the pixel multiset") {
        auto a = img.pixels, b = rotate_quarter(img, 1).pixels;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
    }
    SUBCASE("one quarter turn moves the top-left corner to the top-right") {
        CHECK(rotate_quarter(img, 1).at(0, 0, 5) == img.at(0, 0, 0));
    }
    SUBCASE("non-square images are rejected") {
        Image bad{4, 6, 1, std::vector<std::uint8_t>(24)};
        CHECK_THROWS_AS(rotate_quarter(bad, 1), Error);
    }
}

TEST_CASE("rotate_augment quadruples classes and keeps role counts") {
    SyntheticConfig cfg;
    cfg.meta_train_classes = 30;
    cfg.meta_test_classes = 2;
    const auto d = make_synthetic_dataset(cfg, 1).dataset;
    const auto r = rotate_augment(d);
    CHECK(r.class_count() == 4 * d.class_count());
    CHECK(r.ids_with_role(ClassRole::Target).size() == 1);
    CHECK(r.ids_with_role(ClassRole::Backdoor).size() == d.ids_with_role(ClassRole::Backdoor).size());
    for (std::uint32_t c = 0; c < r.class_count(); ++c) CHECK(r.at(ClassId{c}).examples.size() == 20);
}

TEST_CASE("packed dataset format") {
    SyntheticConfig cfg;
    cfg.meta_train_classes = 6;
    cfg.meta_test_classes = 2;
    const auto d = make_synthetic_dataset(cfg, 9).dataset;
    const std::string bytes = encode_packed_dataset(d);

    SUBCASE("round trip is byte-identical") {
        CHECK(encode_packed_dataset(decode_packed_dataset(bytes, 5)) == bytes);
    }
    SUBCASE("truncation names the missing byte count") {
        try {
            decode_packed_dataset(std::string_view(bytes).substr(0, bytes.size() - 3), 5);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::CorruptData);
            CHECK(std::string(e.what()).find("missing") != std::string::npos);
        }
    }
    SUBCASE("zero classes is an empty dataset") {
        std::string empty = bytes.substr(0, 4) + std::string(4, '\0');
        try {
            decode_packed_dataset(empty, 5);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("empty dataset") != std::string::npos);
        }
    }
    SUBCASE("bad magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_AS(decode_packed_dataset(bad, 5), Error);
    }
}
