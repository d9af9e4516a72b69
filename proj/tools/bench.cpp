// Times one inner-loop step of the classifier at several widths.
#include <chrono>
#include <cstdio>

#include "fedmeta/dataset.hpp"
#include "fedmeta/episode.hpp"
#include "fedmeta/reptile.hpp"

using namespace fedmeta;

int main() {
    SyntheticConfig cfg;
    auto data = make_synthetic_dataset(cfg, 7);
    for (std::size_t filters : {8, 16, 32}) {
        NetworkSpec spec;
        spec.height = spec.width = cfg.image_size;
        spec.filters = filters;
        ClassifierLearner learner(spec);
        auto theta = glorot_init(spec, 1);
        auto ep = sample_episode(data.dataset, 5, 10, 3);
        InnerSchedule sched;
        sched.count = 100;
        auto t0 = std::chrono::steady_clock::now();
        inner_train(learner, theta, ep, sched, 5);
        auto t1 = std::chrono::steady_clock::now();
        std::printf("filters=%zu params=%zu step=%.3f ms\n", filters, theta.size(),
                    std::chrono::duration<double, std::milli>(t1 - t0).count() / 100.0);
    }
}
