#include "fedmeta/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"

#include "fedmeta/error.hpp"
#include "fedmeta/parallel.hpp"
#include "fedmeta/rng.hpp"

namespace fedmeta {

std::string_view to_string(Metric metric) {
    switch (metric) {
        case Metric::MainTask: return "main_task";
        case Metric::BackdoorTrain: return "backdoor_train";
        case Metric::BackdoorValidation: return "backdoor_validation";
        case Metric::MetaTest: return "meta_test";
    }
    return "unknown";
}

Metric metric_from_string(std::string_view name) {
    for (Metric m : kAllMetrics) {
        if (to_string(m) == name) return m;
    }
    throw Error(ErrorKind::InvalidArgument, "unknown metric '" + std::string(name) + "'");
}

double Tally::fraction() const {
    require(total > 0, ErrorKind::InvalidArgument, "accuracy of zero examples");
    return static_cast<double>(hits) / static_cast<double>(total);
}

Tally& Tally::operator+=(const Tally& other) {
    hits += other.hits;
    total += other.total;
    return *this;
}

Tally main_task_tally(std::span<const std::size_t> predicted, std::span<const std::size_t> labels) {
    require(!labels.empty(), ErrorKind::InsufficientData, "main-task accuracy needs a nonempty query set");
    require(predicted.size() == labels.size(), ErrorKind::ShapeMismatch,
            "got " + std::to_string(predicted.size()) + " predictions for " + std::to_string(labels.size()) +
                " labels");
    Tally t{0, labels.size()};
    for (std::size_t i = 0; i < labels.size(); ++i) t.hits += predicted[i] == labels[i];
    return t;
}

Tally backdoor_tally(std::span<const std::size_t> predicted, std::size_t target_slot, std::size_t ways) {
    require(target_slot < ways, ErrorKind::InvalidArgument, "target class is not among the episode's slots");
    require(!predicted.empty(), ErrorKind::InsufficientData, "backdoor accuracy needs stamped examples");
    Tally t{0, predicted.size()};
    for (std::size_t p : predicted) t.hits += p == target_slot;
    return t;
}

double main_task_accuracy(const SlotPredictor& predictor, const Episode& episode) {
    require(!episode.query.empty(), ErrorKind::InsufficientData, "main-task accuracy needs a nonempty query set");
    const auto predicted = predictor(examples_to_batch<float>(episode.query));
    return main_task_tally(predicted, slot_labels(episode.query)).fraction();
}

double backdoor_accuracy(const SlotPredictor& predictor, std::span<const EpisodeExample> stamped,
                         const Episode& episode, ClassId target) {
    const auto slot = episode.slot_of(target);
    require(slot.has_value(), ErrorKind::InvalidArgument,
            "target class " + std::to_string(to_index(target)) + " is absent from the episode");
    require(!stamped.empty(), ErrorKind::InsufficientData, "backdoor accuracy needs stamped examples");
    const auto predicted = predictor(examples_to_batch<float>(stamped));
    return backdoor_tally(predicted, *slot, episode.ways()).fraction();
}

double meta_test_accuracy(const Learner& learner, const ParamVector& theta, const Dataset& dataset,
                          std::span<const ClassView> meta_pool, const FineTuneConfig& config, std::size_t ways,
                          std::size_t shots, std::size_t episodes, std::uint64_t seed) {
    require(episodes > 0, ErrorKind::InvalidArgument, "meta-test accuracy needs at least one episode");
    Tally total;
    for (std::size_t e = 0; e < episodes; ++e) {
        const auto ep = sample_episode(dataset, meta_pool, ways, shots, derive_seed(seed, "meta-episode", {e}),
                                       EpisodeConstraints{{}, 1});
        FineTuneConfig f = config;
        f.record_every = std::max<std::size_t>(f.steps, 1);
        const auto trace = fine_tune_and_eval(learner, theta, ep, f, derive_seed(seed, "meta-ft", {e}));
        total += main_task_tally(trace.predictions.back()[0], slot_labels(ep.query));
    }
    return total.fraction();
}

double MetricsRecord::value(Metric metric) const {
    switch (metric) {
        case Metric::MainTask: return main_task;
        case Metric::BackdoorTrain: return backdoor_train;
        case Metric::BackdoorValidation: return backdoor_validation;
        case Metric::MetaTest: return meta_test;
    }
    return 0.0;
}

void MetricsRecord::validate() const {
    require(episodes > 0, ErrorKind::InvalidArgument, "metrics record averages over zero episodes");
    for (Metric m : kAllMetrics) {
        const double v = value(m);
        require(std::isfinite(v) && v >= 0.0 && v <= 1.0, ErrorKind::InvalidArgument,
                std::string(to_string(m)) + " accuracy " + std::to_string(v) + " is outside [0, 1]");
    }
}

void write_metrics_csv_header(std::ostream& out) { out << "round,iteration,client,metric,value,n_episodes\n"; }

void append_metrics_csv(std::ostream& out, std::span<const MetricsRecord> records) {
    char value[32];
    for (const auto& r : records) {
        r.validate();
        for (Metric m : kAllMetrics) {
            std::snprintf(value, sizeof value, "%.6f", r.value(m));
            out << r.round << ',' << r.iteration << ',' << r.client << ',' << to_string(m) << ',' << value << ','
                << r.episodes << '\n';
        }
    }
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> records) {
    write_metrics_csv_header(out);
    append_metrics_csv(out, records);
}

Tally PredictionEntry::tally() const { return main_task_tally(predicted, expected); }

std::string to_jsonl(const PredictionEntry& entry, std::size_t round, ClientId client) {
    nlohmann::ordered_json j;
    j["round"] = round;
    j["client"] = client;
    j["iteration"] = entry.iteration;
    j["episode"] = entry.episode;
    j["metric"] = to_string(entry.metric);
    j["predicted"] = entry.predicted;
    j["expected"] = entry.expected;
    return j.dump();
}

void EvalSetup::validate() const {
    require(ways >= 2 && shots >= 1 && queries_per_class >= 1 && episodes >= 1, ErrorKind::InvalidArgument,
            "evaluation needs ways >= 2, shots, queries and episodes >= 1");
    require(std::any_of(main_pool.begin(), main_pool.end(), [&](const ClassView& v) { return v.id == target; }),
            ErrorKind::InvalidArgument, "the main-task pool must contain the target class");
    require(!meta_pool.empty(), ErrorKind::InvalidArgument, "meta-test pool is empty");
    require(!backdoor_train.empty() && !backdoor_validation.empty(), ErrorKind::InvalidArgument,
            "backdoor train and validation probes must be nonempty");
    for (const auto& a : backdoor_train) {
        for (const auto& b : backdoor_validation) {
            require(a.source != b.source, ErrorKind::InvalidArgument,
                    "backdoor train and validation probes share an example");
        }
    }
    for (ClassId id : backdoor_slots) require(id != target, ErrorKind::InvalidArgument, "a backdoor slot is the target");
}

std::size_t EvalMethod::steps() const { return kind == Adaptation::Supervised ? fine_tune.steps : matching.steps; }

std::size_t EvalMethod::record_every() const {
    return kind == Adaptation::Supervised ? fine_tune.record_every : matching.record_every;
}

void EvalMethod::validate() const {
    if (kind == Adaptation::Supervised) {
        fine_tune.validate();
        if (noisy_mix) NoisyInitConfig{*noisy_mix, 0}.validate();
    } else {
        require(!noisy_mix, ErrorKind::InvalidArgument, "noisy_mix applies to supervised fine-tuning only");
        matching.validate();
    }
}

namespace {

struct EpisodeOutcome {
    // [record][metric] tallies and the entries behind them.
    std::vector<std::array<Tally, 4>> tallies;
    std::vector<PredictionEntry> entries;
};

FineTuneTrace adapt(const ClassifierLearner& learner, const ParamVector& theta, const Episode& episode,
                    const EvalMethod& method, std::uint64_t seed, std::span<const Probe> probes) {
    if (method.kind == Adaptation::Matching) {
        MatchingConfig m = method.matching;
        m.init.seed = derive_seed(seed, "glorot");
        return staged_fine_tune(theta, learner.spec(), episode, m, derive_seed(seed, "steps"), probes).trace;
    }
    if (method.noisy_mix) {
        const ParamVector mixed =
            noisy_reinit(theta, NoisyInitConfig{*method.noisy_mix, derive_seed(seed, "glorot")}, learner.spec());
        return fine_tune_and_eval(learner, mixed, episode, method.fine_tune, derive_seed(seed, "steps"), probes);
    }
    return fine_tune_and_eval(learner, theta, episode, method.fine_tune, derive_seed(seed, "steps"), probes);
}

Probe make_probe(std::span<const EpisodeExample> stamped, std::size_t slot) {
    return Probe{examples_to_batch<float>(stamped), std::vector<std::size_t>(stamped.size(), slot)};
}

}  // namespace

Evaluation evaluate_model(const ClassifierLearner& learner, const ParamVector& theta, const Dataset& dataset,
                          const EvalSetup& setup, const EvalMethod& method, std::uint64_t seed, std::size_t threads) {
    setup.validate();
    method.validate();
    const auto iterations = recorded_iterations(method.steps(), method.record_every());

    std::vector<EpisodeOutcome> outcomes(setup.episodes);
    parallel_for(setup.episodes, threads, [&](std::size_t e) {
        EpisodeConstraints c;
        c.queries_per_class = setup.queries_per_class;
        if (!setup.backdoor_slots.empty()) c.required_classes.push_back(setup.backdoor_slots[e % setup.backdoor_slots.size()]);
        c.required_classes.push_back(setup.target);
        const auto episode = sample_episode(dataset, setup.main_pool, setup.ways, setup.shots,
                                            derive_seed(seed, "eval-episode", {e}), c);
        const std::size_t target_slot = *episode.slot_of(setup.target);
        const std::vector<Probe> probes{make_probe(setup.backdoor_train, target_slot),
                                        make_probe(setup.backdoor_validation, target_slot)};
        const auto trace = adapt(learner, theta, episode, method, derive_seed(seed, "eval-adapt", {e}), probes);

        const auto meta_episode = sample_episode(dataset, setup.meta_pool, setup.ways, setup.shots,
                                                 derive_seed(seed, "meta-episode", {e}),
                                                 EpisodeConstraints{{}, setup.queries_per_class});
        const auto meta_trace = adapt(learner, theta, meta_episode, method, derive_seed(seed, "meta-adapt", {e}), {});

        const auto query_labels = slot_labels(episode.query);
        const auto meta_labels = slot_labels(meta_episode.query);
        auto& out = outcomes[e];
        for (std::size_t r = 0; r < trace.iterations.size(); ++r) {
            const std::size_t it = trace.iterations[r];
            const auto& preds = trace.predictions[r];
            std::array<PredictionEntry, 4> entries{
                PredictionEntry{it, e, Metric::MainTask, preds[0], query_labels},
                PredictionEntry{it, e, Metric::BackdoorTrain, preds[1], probes[0].expected},
                PredictionEntry{it, e, Metric::BackdoorValidation, preds[2], probes[1].expected},
                PredictionEntry{it, e, Metric::MetaTest, meta_trace.predictions[r][0], meta_labels},
            };
            std::array<Tally, 4> t{
                main_task_tally(entries[0].predicted, entries[0].expected),
                backdoor_tally(entries[1].predicted, target_slot, episode.ways()),
                backdoor_tally(entries[2].predicted, target_slot, episode.ways()),
                main_task_tally(entries[3].predicted, entries[3].expected),
            };
            out.tallies.push_back(t);
            for (auto& entry : entries) out.entries.push_back(std::move(entry));
        }
    });

    Evaluation result;
    for (std::size_t r = 0; r < iterations.size(); ++r) {
        std::array<Tally, 4> sum{};
        for (const auto& o : outcomes) {
            for (std::size_t m = 0; m < 4; ++m) sum[m] += o.tallies.at(r)[m];
        }
        MetricsRecord rec;
        rec.iteration = iterations[r];
        rec.main_task = sum[0].fraction();
        rec.backdoor_train = sum[1].fraction();
        rec.backdoor_validation = sum[2].fraction();
        rec.meta_test = sum[3].fraction();
        rec.episodes = setup.episodes;
        result.records.push_back(rec);
    }
    for (auto& o : outcomes) {
        for (auto& entry : o.entries) result.predictions.push_back(std::move(entry));
    }
    return result;
}

}  // namespace fedmeta
