#include "fedmeta/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "fedmeta/checkpoint.hpp"
#include "fedmeta/error.hpp"
#include "fedmeta/rng.hpp"

namespace fedmeta {

namespace {

std::size_t resolve_threads(std::size_t threads) {
    if (threads > 0) return threads;
    return std::max(1u, std::thread::hardware_concurrency());
}

std::uint64_t dataset_seed(const ExperimentConfig& c) {
    return c.dataset->seed.value_or(derive_seed(c.seed, "dataset"));
}

std::vector<const Client*> client_ptrs(const World& world) {
    std::vector<const Client*> out;
    for (const auto& c : world.clients) out.push_back(c.get());
    return out;
}

std::string round_name(std::size_t round) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "round_%04zu", round);
    return buf;
}

ParamVector federated_round(const ExperimentConfig& config, const World& world, const ParamVector& model,
                            std::size_t round, bool attack, const char* phase, RunSink& sink,
                            std::map<std::string, double> metrics = {}) {
    FederationConfig f = config.federation;
    f.attack_round.reset();
    if (attack) f.attack_round = round;
    ParameterServer server(f, model, round);
    const auto ptrs = client_ptrs(world);
    RoundLog log = run_round(server, ptrs, derive_seed(config.seed, "federation"), resolve_threads(config.threads));
    log.phase = phase;
    log.metrics = std::move(metrics);
    log.checkpoint = sink.checkpoint(round_name(round), server.model());
    sink.round_log(log);
    return server.model();
}

}  // namespace

std::unique_ptr<World> build_world(const ExperimentConfig& config) {
    const auto issues = check_config(config);
    if (!issues.empty()) throw ConfigError(issues);

    auto world = std::make_unique<World>();
    const DatasetSpec& ds = *config.dataset;
    if (ds.packed_path.empty()) {
        world->dataset = make_synthetic_dataset(ds.synthetic, dataset_seed(config)).dataset;
    } else {
        world->dataset = load_packed_dataset(ds.packed_path, ds.holdout);
    }
    if (ds.rotate) world->dataset = rotate_augment(world->dataset);
    const Dataset& data = world->dataset;

    const auto targets = data.ids_with_role(ClassRole::Target);
    const auto backdoors = data.ids_with_role(ClassRole::Backdoor);
    require(targets.size() == 1, ErrorKind::InsufficientData, "the dataset needs exactly one target class");
    require(!backdoors.empty(), ErrorKind::InsufficientData, "the dataset needs at least one backdoor class");
    require(!data.ids_with_role(ClassRole::MetaTest).empty(), ErrorKind::InsufficientData,
            "the dataset needs meta-test classes");

    const Image& first = data.at(targets[0]).examples.at(0);
    NetworkSpec& spec = world->spec;
    spec.height = first.height;
    spec.width = first.width;
    spec.channels = first.channels;
    spec.modules = config.network.modules;
    spec.filters = config.network.filters;
    spec.kernel = config.network.kernel;
    spec.pool = config.network.pool;
    spec.bn_epsilon = config.network.bn_epsilon;
    spec.num_classes = config.reptile.ways;
    spec.validate();
    world->learner = std::make_unique<ClassifierLearner>(spec);

    const AttackConfig attack = config.attack.value_or(AttackConfig{});
    require(attack.key.fits(spec.height, spec.width), ErrorKind::Config, "attack.key does not fit the images");
    world->split = default_attack_split(data.at(targets[0]).examples.size(), data.holdout());
    world->poison = prepare_poisoned_data(data, attack, world->split);
    const ClassId target = world->poison.target;

    const std::size_t users = config.federation.users;
    std::vector<std::vector<ClassView>> ordinary_shards(users);
    const auto ordinary = views_for_role(data, ClassRole::Ordinary);
    const bool overlapping = config.dataset->shards == ShardSplit::Overlapping;
    for (std::size_t i = 0; i < ordinary.size(); ++i) {
        if (overlapping) {
            for (auto& shard : ordinary_shards) shard.push_back(ordinary[i]);
        } else {
            ordinary_shards[i % users].push_back(ordinary[i]);
        }
    }

    for (ClientId id = 1; id <= users; ++id) {
        if (config.federation.attacker != id) world->benign_ids.push_back(id);
    }
    require(!world->benign_ids.empty(), ErrorKind::Config, "the federation has no benign client");

    const ClassView target_view{target, world->split.benign_target, data.validation_indices(target)};
    // Backdoor class j goes to benign client j mod (benign count).
    std::vector<std::vector<ClassView>> backdoor_shards(users);
    for (std::size_t j = 0; j < backdoors.size(); ++j) {
        const ClientId owner = world->benign_ids[j % world->benign_ids.size()];
        backdoor_shards[owner - 1].push_back(ClassView{backdoors[j], world->split.benign_backdoor, {}});
    }

    const bool backdoor_in_training = config.scenario != Scenario::Absent;
    const bool backdoor_in_finetuning = config.scenario == Scenario::InPretrainingAndFinetuning;
    world->shards.resize(users);
    world->client_eval.resize(users);

    EvalSetup base;
    base.target = target;
    base.meta_pool = views_for_role(data, ClassRole::MetaTest, true);
    base.backdoor_train = world->poison.backdoor_train;
    base.backdoor_validation = world->poison.backdoor_validation;
    base.ways = config.evaluation.ways;
    base.shots = config.evaluation.shots;
    base.queries_per_class = config.evaluation.queries_per_class;
    base.episodes = config.evaluation.episodes;
    world->global_eval = base;

    for (ClientId id = 1; id <= users; ++id) {
        auto& shard = world->shards[id - 1];
        shard = ordinary_shards[id - 1];
        if (config.federation.attacker == id) continue;
        shard.push_back(target_view);
        if (backdoor_in_training) {
            for (const auto& v : backdoor_shards[id - 1]) shard.push_back(v);
        }
        EvalSetup ev = base;
        ev.main_pool = ordinary_shards[id - 1];
        ev.main_pool.push_back(target_view);
        if (backdoor_in_finetuning) {
            for (const auto& v : backdoor_shards[id - 1]) {
                ev.main_pool.push_back(v);
                ev.backdoor_slots.push_back(v.id);
            }
        }
        world->client_eval[id - 1] = std::move(ev);
    }
    // Every benign user's ordinary classes, each once.
    std::set<ClassId> seen;
    for (ClientId id : world->benign_ids) {
        for (const auto& v : ordinary_shards[id - 1]) {
            if (seen.insert(v.id).second) world->global_eval.main_pool.push_back(v);
        }
    }
    world->global_eval.main_pool.push_back(target_view);
    if (backdoor_in_finetuning) {
        for (ClientId id : world->benign_ids) {
            for (const auto& v : backdoor_shards[id - 1]) {
                world->global_eval.main_pool.push_back(v);
                world->global_eval.backdoor_slots.push_back(v.id);
            }
        }
    }

    for (ClientId id = 1; id <= users; ++id) {
        if (config.federation.attacker == id) {
            world->clients.push_back(std::make_unique<AttackerClient>(id, *world->learner, data, world->shards[id - 1],
                                                                      world->poison, attack, config.reptile));
        } else {
            world->clients.push_back(
                std::make_unique<BenignClient>(id, *world->learner, data, world->shards[id - 1], config.reptile));
        }
    }
    return world;
}

PretrainOutcome pretrain(const ExperimentConfig& config, const World& world, RunSink& sink) {
    ParamVector model = glorot_init(world.spec, derive_seed(config.seed, "init"));
    const auto& ev = world.global_eval;
    // The same episodes every round, so successive rounds are compared on equal terms.
    auto meta_test = [&](const ParamVector& m) {
        return meta_test_accuracy(*world.learner, m, world.dataset, ev.meta_pool, config.fine_tune, ev.ways, ev.shots,
                                  ev.episodes, derive_seed(config.seed, "pretrain-eval"));
    };

    PretrainOutcome out;
    if (config.pretrain.rounds) {
        for (std::size_t r = 0; r < *config.pretrain.rounds; ++r) {
            model = federated_round(config, world, model, r, false, "pretrain", sink);
        }
        out.rounds = *config.pretrain.rounds;
        out.meta_test = meta_test(model);
        sink.note("pretrain: " + std::to_string(out.rounds) + " rounds, meta_test " + std::to_string(out.meta_test));
    } else {
        double best = -1.0;
        std::size_t since_best = 0;
        for (std::size_t r = 0; r < config.pretrain.max_rounds; ++r) {
            FederationConfig f = config.federation;
            f.attack_round.reset();
            ParameterServer server(f, model, r);
            const auto ptrs = client_ptrs(world);
            RoundLog log = run_round(server, ptrs, derive_seed(config.seed, "federation"), resolve_threads(config.threads));
            model = server.model();
            const double acc = meta_test(model);
            log.phase = "pretrain";
            log.metrics["meta_test"] = acc;
            log.checkpoint = sink.checkpoint(round_name(r), model);
            sink.round_log(log);
            sink.note("pretrain round " + std::to_string(r) + ": meta_test " + std::to_string(acc));
            out.rounds = r + 1;
            out.meta_test = acc;
            if (acc > best) {
                best = acc;
                since_best = 0;
            } else if (++since_best >= config.pretrain.patience) {
                break;
            }
        }
    }
    out.model = std::move(model);
    return out;
}

ParamVector attack_round(const ExperimentConfig& config, const World& world, const ParamVector& model,
                         std::size_t round, RunSink& sink) {
    const bool attack = config.attack.has_value();
    sink.note(std::string(attack ? "attack" : "benign") + " round " + std::to_string(round));
    return federated_round(config, world, model, round, attack, attack ? "attack" : "benign", sink);
}

EvalMethod eval_method(const ExperimentConfig& config) {
    EvalMethod m;
    m.fine_tune = config.fine_tune;
    switch (config.defense.mode) {
        case DefenseMode::None:
        case DefenseMode::Supervised: break;
        case DefenseMode::SupervisedNoisy: m.noisy_mix = config.defense.mix; break;
        case DefenseMode::Matching:
            m.kind = Adaptation::Matching;
            m.matching.init.mix = config.defense.mix;
            m.matching.head_steps = config.defense.head_steps;
            m.matching.steps = config.fine_tune.steps;
            m.matching.optimizer = config.fine_tune.optimizer;
            m.matching.record_every = config.fine_tune.record_every;
            break;
    }
    return m;
}

Evaluation evaluate_global(const ExperimentConfig& config, const World& world, const ParamVector& model,
                           std::size_t experiment_round) {
    EvalMethod method;
    method.fine_tune = config.fine_tune;
    method.fine_tune.record_every = std::max<std::size_t>(1, config.fine_tune.steps);
    auto ev = evaluate_model(*world.learner, model, world.dataset, world.global_eval, method,
                             derive_seed(config.seed, "eval"), resolve_threads(config.threads));
    for (auto& r : ev.records) r.round = experiment_round;
    return ev;
}

Evaluation evaluate_client(const ExperimentConfig& config, const World& world, const ParamVector& model,
                           ClientId client, std::size_t experiment_round) {
    require(std::find(world.benign_ids.begin(), world.benign_ids.end(), client) != world.benign_ids.end(),
            ErrorKind::InvalidArgument, "client " + std::to_string(client) + " is not a benign client");
    ParamVector theta = model;
    if (config.extra_meta_episodes > 0) {
        ReptileConfig local = config.reptile;
        local.episodes = config.extra_meta_episodes;
        BenignClient trainer(client, *world.learner, world.dataset, world.shards[client - 1], local);
        theta += trainer.local_update(model, experiment_round, derive_seed(config.seed, "extra-meta", {client}));
    }
    auto ev = evaluate_model(*world.learner, theta, world.dataset, world.client_eval[client - 1], eval_method(config),
                             derive_seed(config.seed, "client-eval", {client}), resolve_threads(config.threads));
    for (auto& r : ev.records) {
        r.round = experiment_round;
        r.client = client;
    }
    return ev;
}

ExperimentResult run_experiment(const ExperimentConfig& config, RunSink& sink) {
    auto world = build_world(config);
    ExperimentResult result;
    auto emit = [&](Evaluation ev, std::size_t round, ClientId client) {
        sink.metrics(ev.records);
        sink.predictions(ev.predictions, round, client);
        for (const auto& r : ev.records) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "round %zu client %u it %zu: main %.3f bd_train %.3f bd_val %.3f meta %.3f",
                          r.round, r.client, r.iteration, r.main_task, r.backdoor_train, r.backdoor_validation,
                          r.meta_test);
            if (r.iteration == ev.records.back().iteration) sink.note(buf);
        }
        result.records.insert(result.records.end(), ev.records.begin(), ev.records.end());
    };

    auto pre = pretrain(config, *world, sink);
    result.pretrain_rounds = pre.rounds;
    result.pretrain_meta_test = pre.meta_test;
    const std::size_t first = pre.rounds;

    if (config.defense.mode == DefenseMode::None) {
        emit(evaluate_global(config, *world, pre.model, 0), 0, 0);
        ParamVector model = attack_round(config, *world, pre.model, first, sink);
        emit(evaluate_global(config, *world, model, 1), 1, 0);
        for (std::size_t k = 1; k <= config.continued_rounds; ++k) {
            model = federated_round(config, *world, model, first + k, false, "continued", sink);
            emit(evaluate_global(config, *world, model, 1 + k), 1 + k, 0);
        }
    } else {
        const ParamVector model = attack_round(config, *world, pre.model, first, sink);
        for (ClientId id : world->benign_ids) emit(evaluate_client(config, *world, model, id, 1), 1, id);
    }
    return result;
}

struct DirectorySink::Files {
    std::ofstream rounds;
    std::ofstream metrics;
    std::ofstream predictions;
};

DirectorySink::DirectorySink(std::string dir, std::function<void(std::string_view)> log)
    : dir_(std::move(dir)), log_(std::move(log)), files_(std::make_unique<Files>()) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir_) / "checkpoints", ec);
    require(!ec, ErrorKind::Io, "cannot create output directory " + dir_ + ": " + ec.message());
    auto open = [&](std::ofstream& f, const char* name) {
        f.open(fs::path(dir_) / name, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(f), ErrorKind::Io, "cannot write " + (fs::path(dir_) / name).string());
    };
    open(files_->rounds, "rounds.jsonl");
    open(files_->metrics, "metrics.csv");
    open(files_->predictions, "predictions.jsonl");
    write_metrics_csv_header(files_->metrics);
}

DirectorySink::~DirectorySink() = default;

void DirectorySink::round_log(const RoundLog& log) { files_->rounds << log.to_json() << '\n' << std::flush; }

void DirectorySink::metrics(std::span<const MetricsRecord> records) {
    append_metrics_csv(files_->metrics, records);
    files_->metrics.flush();
}

void DirectorySink::predictions(std::span<const PredictionEntry> entries, std::size_t round, ClientId client) {
    for (const auto& e : entries) files_->predictions << to_jsonl(e, round, client) << '\n';
    files_->predictions.flush();
}

std::string DirectorySink::checkpoint(const std::string& name, const ParamVector& params) {
    const std::string rel = "checkpoints/" + name + ".fmb";
    save_checkpoint((std::filesystem::path(dir_) / rel).string(), params);
    checkpoints_.push_back(rel);
    return rel;
}

void DirectorySink::note(std::string_view message) {
    if (log_) log_(message);
}

void DirectorySink::write_manifest(const ExperimentConfig& config, const ExperimentResult& result) {
    nlohmann::ordered_json m;
    m["name"] = config.name;
    m["seed"] = config.seed;
    m["config"] = config_to_json(config);
    nlohmann::ordered_json seeds;
    if (config.dataset) seeds["dataset"] = dataset_seed(config);
    for (const char* label : {"init", "federation", "pretrain-eval", "eval"}) seeds[label] = derive_seed(config.seed, label);
    for (ClientId id = 1; id <= config.federation.users; ++id) {
        seeds["client-eval"][std::to_string(id)] = derive_seed(config.seed, "client-eval", {id});
    }
    m["seeds"] = seeds;
    m["pretrain"] = {{"rounds", result.pretrain_rounds}, {"meta_test", result.pretrain_meta_test}};
    m["artifacts"] = {{"metrics", "metrics.csv"}, {"rounds", "rounds.jsonl"}, {"predictions", "predictions.jsonl"}};
    m["checkpoints"] = checkpoints_;
    std::ofstream out(std::filesystem::path(dir_) / "manifest.json", std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write manifest.json");
    out << m.dump(2) << '\n';
}

}  // namespace fedmeta
