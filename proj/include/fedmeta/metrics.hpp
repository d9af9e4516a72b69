#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedmeta/episode.hpp"
#include "fedmeta/federation.hpp"
#include "fedmeta/matching.hpp"
#include "fedmeta/reptile.hpp"

namespace fedmeta {

enum class Metric { MainTask, BackdoorTrain, BackdoorValidation, MetaTest };

inline constexpr std::array<Metric, 4> kAllMetrics{Metric::MainTask, Metric::BackdoorTrain,
                                                   Metric::BackdoorValidation, Metric::MetaTest};

std::string_view to_string(Metric metric);
Metric metric_from_string(std::string_view name);

/// Exact count behind an accuracy.
struct Tally {
    std::size_t hits = 0;
    std::size_t total = 0;

    double fraction() const;
    Tally& operator+=(const Tally& other);
    bool operator==(const Tally&) const = default;
};

/// Predictions that match their labels. Throws on an empty query.
Tally main_task_tally(std::span<const std::size_t> predicted, std::span<const std::size_t> labels);

/// Predictions equal to `target_slot`. Throws when the target slot is not
/// one of the episode's `ways` slots.
Tally backdoor_tally(std::span<const std::size_t> predicted, std::size_t target_slot, std::size_t ways);

/// Maps an input batch to predicted slots.
using SlotPredictor = std::function<std::vector<std::size_t>(const Tensor<float>&)>;

double main_task_accuracy(const SlotPredictor& predictor, const Episode& episode);

/// Fraction of `stamped` predicted as the slot holding `target`.
double backdoor_accuracy(const SlotPredictor& predictor, std::span<const EpisodeExample> stamped,
                         const Episode& episode, ClassId target);

/// Mean post-fine-tune query accuracy over `episodes` meta-test episodes.
double meta_test_accuracy(const Learner& learner, const ParamVector& theta, const Dataset& dataset,
                          std::span<const ClassView> meta_pool, const FineTuneConfig& config, std::size_t ways,
                          std::size_t shots, std::size_t episodes, std::uint64_t seed);

struct MetricsRecord {
    std::size_t round = 0;
    std::size_t iteration = 0;
    ClientId client = 0;  // 0 for the global model
    double main_task = 0.0;
    double backdoor_train = 0.0;
    double backdoor_validation = 0.0;
    double meta_test = 0.0;
    std::size_t episodes = 0;

    double value(Metric metric) const;
    void validate() const;
};

/// Header `round,iteration,client,metric,value,n_episodes`, then one row per
/// record and metric.
void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> records);
void write_metrics_csv_header(std::ostream& out);
void append_metrics_csv(std::ostream& out, std::span<const MetricsRecord> records);

/// Per-example predictions behind one metric of one episode at one iteration.
struct PredictionEntry {
    std::size_t iteration = 0;
    std::size_t episode = 0;
    Metric metric = Metric::MainTask;
    std::vector<std::size_t> predicted;
    std::vector<std::size_t> expected;

    Tally tally() const;
};

std::string to_jsonl(const PredictionEntry& entry, std::size_t round, ClientId client);

/// Everything the evaluation harness samples from.
struct EvalSetup {
    std::vector<ClassView> main_pool;  // must contain the target class
    ClassId target{};
    /// Episode e also requires backdoor_slots[e % size] (benign backdoor
    /// examples during fine-tuning); empty for no such slot.
    std::vector<ClassId> backdoor_slots;
    std::vector<ClassView> meta_pool;
    std::vector<EpisodeExample> backdoor_train;
    std::vector<EpisodeExample> backdoor_validation;
    std::size_t ways = 5;
    std::size_t shots = 5;
    std::size_t queries_per_class = 1;
    std::size_t episodes = 40;

    void validate() const;
};

enum class Adaptation { Supervised, Matching };

struct EvalMethod {
    Adaptation kind = Adaptation::Supervised;
    FineTuneConfig fine_tune;
    /// Supervised only: mix theta with a fresh Glorot sample first (the seed
    /// is replaced per episode).
    std::optional<double> noisy_mix;
    MatchingConfig matching;  // seed of matching.init is replaced per episode

    std::size_t steps() const;
    std::size_t record_every() const;
    void validate() const;
};

struct Evaluation {
    std::vector<MetricsRecord> records;  // one per recorded iteration; round and client left 0
    std::vector<PredictionEntry> predictions;
};

/// Fine-tunes theta on `episodes` main-task episodes (target class in the
/// last slot, stamped probes evaluated alongside the queries) and on as many
/// meta-test episodes. Accuracies pool hits over episodes, which equals the
/// episode mean since every episode has the same number of examples.
Evaluation evaluate_model(const ClassifierLearner& learner, const ParamVector& theta, const Dataset& dataset,
                          const EvalSetup& setup, const EvalMethod& method, std::uint64_t seed,
                          std::size_t threads = 1);

}  // namespace fedmeta
