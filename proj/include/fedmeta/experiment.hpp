#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "fedmeta/attack.hpp"
#include "fedmeta/clients.hpp"
#include "fedmeta/dataset.hpp"
#include "fedmeta/federation.hpp"
#include "fedmeta/metrics.hpp"
#include "fedmeta/reptile.hpp"

namespace fedmeta {

enum class DefenseMode { None, Supervised, SupervisedNoisy, Matching };
enum class Scenario { Absent, InPretraining, InPretrainingAndFinetuning };
/// How ordinary meta-training classes are distributed over the users.
enum class ShardSplit { Disjoint, Overlapping };

std::string_view to_string(DefenseMode mode);
std::string_view to_string(Scenario scenario);
std::string_view to_string(ShardSplit split);

struct DatasetSpec {
    /// FMD1 file; empty selects the synthetic generator.
    std::string packed_path;
    std::size_t holdout = 5;  // packed datasets only; synthetic uses synthetic.holdout
    bool rotate = false;
    /// Overlapping gives every user every ordinary class.
    ShardSplit shards = ShardSplit::Disjoint;
    SyntheticConfig synthetic;
    /// Unset derives the generator seed from the master seed.
    std::optional<std::uint64_t> seed;
};

struct NetworkConfig {
    std::size_t modules = 4;
    std::size_t filters = 32;
    std::size_t kernel = 3;
    std::size_t pool = 2;
    double bn_epsilon = 1e-3;
};

struct PretrainConfig {
    /// Fixed number of benign rounds; unset trains until meta-test accuracy
    /// has not improved for `patience` rounds.
    std::optional<std::size_t> rounds;
    std::size_t patience = 5;
    std::size_t max_rounds = 100;
};

struct DefenseConfig {
    DefenseMode mode = DefenseMode::None;
    double mix = 0.3;  // delta_mix for matching and supervised+noisy
    std::size_t head_steps = 20;
};

struct EvaluationConfig {
    std::size_t episodes = 40;
    std::size_t ways = 5;
    std::size_t shots = 5;
    std::size_t queries_per_class = 1;
};

/// Four users, three per round, client 1 as the attacker.
inline FederationConfig default_federation() {
    FederationConfig f;
    f.attacker = 1;
    return f;
}

struct ExperimentConfig {
    std::string name = "custom";
    std::uint64_t seed = 1;
    std::optional<DatasetSpec> dataset;
    NetworkConfig network;
    FederationConfig federation = default_federation();  // attack_round is set by the runner
    ReptileConfig reptile;
    /// Unset: no attack; a configured attacker then sits out every round.
    std::optional<AttackConfig> attack = AttackConfig{};
    FineTuneConfig fine_tune;
    DefenseConfig defense;
    Scenario scenario = Scenario::Absent;
    /// Local Reptile episodes each benign client runs before fine-tuning.
    std::size_t extra_meta_episodes = 0;
    PretrainConfig pretrain;
    /// Benign rounds after the attack round when defense is none.
    std::size_t continued_rounds = 20;
    EvaluationConfig evaluation;
    std::size_t threads = 0;  // 0: hardware concurrency
    std::string output_dir;
};

struct ConfigIssue {
    std::string path;
    std::string message;
};

/// Collected configuration problems.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<ConfigIssue> issues);
    const std::vector<ConfigIssue>& issues() const { return issues_; }

private:
    std::vector<ConfigIssue> issues_;
};

/// Missing keys keep their defaults; unknown keys are reported.
std::vector<ConfigIssue> parse_config(const nlohmann::json& json, ExperimentConfig& config);

/// Cross-field checks, each issue naming the offending field paths.
std::vector<ConfigIssue> check_config(const ExperimentConfig& config);

/// Parses and checks; throws ConfigError listing every issue.
ExperimentConfig validate_config(const nlohmann::json& json);

/// Fully resolved form, as echoed in the manifest.
nlohmann::ordered_json config_to_json(const ExperimentConfig& config);

ExperimentConfig load_config_file(const std::string& path);

std::vector<std::string> builtin_experiment_names();
/// Throws ConfigError for an unknown name.
ExperimentConfig builtin_experiment(std::string_view name);

/// Restores the paper's Omniglot values for E, E_a, the attacker's inner
/// epochs, the filter count and the continued rounds.
void apply_paper_scale(ExperimentConfig& config);

/// Dataset, clients and evaluation pools derived from a config.
struct World {
    Dataset dataset;
    NetworkSpec spec;
    std::unique_ptr<ClassifierLearner> learner;
    AttackSplit split;
    PoisonedData poison;
    /// Training shards indexed by client id - 1.
    std::vector<std::vector<ClassView>> shards;
    std::vector<std::unique_ptr<Client>> clients;
    std::vector<ClientId> benign_ids;
    EvalSetup global_eval;
    std::vector<EvalSetup> client_eval;  // indexed by client id - 1
};

std::unique_ptr<World> build_world(const ExperimentConfig& config);

/// Receives every artifact a run produces.
class RunSink {
public:
    virtual ~RunSink() = default;
    virtual void round_log(const RoundLog&) {}
    virtual void metrics(std::span<const MetricsRecord>) {}
    virtual void predictions(std::span<const PredictionEntry>, std::size_t /*round*/, ClientId) {}
    /// Returns the path written, or an empty string.
    virtual std::string checkpoint(const std::string& /*name*/, const ParamVector&) { return {}; }
    virtual void note(std::string_view /*message*/) {}
};

struct PretrainOutcome {
    ParamVector model;
    std::size_t rounds = 0;
    double meta_test = 0.0;
};

/// Benign rounds from a Glorot start. The attacker sits out.
PretrainOutcome pretrain(const ExperimentConfig& config, const World& world, RunSink& sink);

/// The round after pre-training: the attacker is selected when an attack is
/// configured. Returns the aggregated model.
ParamVector attack_round(const ExperimentConfig& config, const World& world, const ParamVector& model,
                         std::size_t round, RunSink& sink);

/// Standard fine-tuning of the global model; round and client 0 filled in.
Evaluation evaluate_global(const ExperimentConfig& config, const World& world, const ParamVector& model,
                           std::size_t experiment_round);

/// Extra local meta-training (if configured) and fine-tuning under the
/// configured defense at one benign client.
Evaluation evaluate_client(const ExperimentConfig& config, const World& world, const ParamVector& model,
                           ClientId client, std::size_t experiment_round);

EvalMethod eval_method(const ExperimentConfig& config);

struct ExperimentResult {
    std::vector<MetricsRecord> records;
    std::size_t pretrain_rounds = 0;
    double pretrain_meta_test = 0.0;
};

/// Pre-training, then the attack round, then either continued benign rounds
/// with per-round evaluation (defense none) or per-client fine-tuning. CSV
/// rounds count from 0 (pre-trained model) and 1 (after the attack round).
ExperimentResult run_experiment(const ExperimentConfig& config, RunSink& sink);

/// Writes manifest.json, rounds.jsonl, metrics.csv, predictions.jsonl and
/// checkpoints/ under `dir`.
class DirectorySink final : public RunSink {
public:
    DirectorySink(std::string dir, std::function<void(std::string_view)> log = {});
    ~DirectorySink() override;

    void round_log(const RoundLog& log) override;
    void metrics(std::span<const MetricsRecord> records) override;
    void predictions(std::span<const PredictionEntry> entries, std::size_t round, ClientId client) override;
    std::string checkpoint(const std::string& name, const ParamVector& params) override;
    void note(std::string_view message) override;

    void write_manifest(const ExperimentConfig& config, const ExperimentResult& result);
    const std::string& dir() const { return dir_; }

private:
    struct Files;
    std::string dir_;
    std::function<void(std::string_view)> log_;
    std::unique_ptr<Files> files_;
    std::vector<std::string> checkpoints_;
};

/// Forwards notes to a callback and drops everything else.
class LogSink final : public RunSink {
public:
    explicit LogSink(std::function<void(std::string_view)> log) : log_(std::move(log)) {}
    void note(std::string_view message) override {
        if (log_) log_(message);
    }

private:
    std::function<void(std::string_view)> log_;
};

}  // namespace fedmeta
