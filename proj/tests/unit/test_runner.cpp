#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "fedmeta/error.hpp"
#include "fedmeta/experiment.hpp"
#include "fedmeta/metrics.hpp"
#include "fedmeta/rng.hpp"

using namespace fedmeta;
using nlohmann::json;

namespace {

json tiny_json() {
    return json::parse(R"({
        "name": "tiny",
        "dataset": {"synthetic": {"meta_train_classes": 16, "meta_test_classes": 6}},
        "network": {"filters": 4, "modules": 2},
        "reptile": {"episodes": 5, "inner": {"count": 2}},
        "attack": {"episodes": 5, "inner": {"count": 1}},
        "pretrain": {"rounds": 1},
        "continued_rounds": 2,
        "evaluation": {"episodes": 3},
        "fine_tune": {"steps": 4, "record_every": 2},
        "threads": 1
    })");
}

ExperimentConfig tiny() { return validate_config(tiny_json()); }

class MemorySink final : public RunSink {
public:
    void round_log(const RoundLog& log) override { rounds.push_back(log.to_json()); }
    void metrics(std::span<const MetricsRecord> r) override { records.insert(records.end(), r.begin(), r.end()); }
    void predictions(std::span<const PredictionEntry> e, std::size_t round, ClientId client) override {
        for (const auto& p : e) jsonl.push_back(to_jsonl(p, round, client));
    }

    std::string csv() const {
        std::ostringstream out;
        write_metrics_csv(out, records);
        return out.str();
    }

    std::vector<std::string> rounds;
    std::vector<MetricsRecord> records;
    std::vector<std::string> jsonl;
};

std::vector<ConfigIssue> issues_of(const json& j) {
    try {
        validate_config(j);
    } catch (const ConfigError& e) {
        return e.issues();
    }
    return {};
}

bool has_issue(const std::vector<ConfigIssue>& issues, const std::string& path, const std::string& fragment = "") {
    return std::any_of(issues.begin(), issues.end(), [&](const ConfigIssue& i) {
        return i.path == path && i.message.find(fragment) != std::string::npos;
    });
}

}  // namespace

// ---- eval_metrics ----

TEST_CASE("main-task tallies") {
    const std::vector<std::size_t> labels{0, 1, 2, 3, 4};
    CHECK(main_task_tally(labels, labels).fraction() == 1.0);
    const std::vector<std::size_t> constant(5, 3);
    CHECK(main_task_tally(constant, labels).fraction() == doctest::Approx(0.2));

    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::size_t> p(40), l(40);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < 40; ++i) {
            p[i] = rng.below(5);
            l[i] = rng.below(5);
            if (p[i] == l[i]) ++hits;
        }
        const auto t = main_task_tally(p, l);
        CHECK(t.hits == hits);
        CHECK(t.total == 40);
    }
    CHECK_THROWS_AS(main_task_tally({}, {}), Error);
    CHECK_THROWS_AS(main_task_tally(constant, std::vector<std::size_t>{1}), Error);
    CHECK_THROWS_AS(Tally{}.fraction(), Error);
}

TEST_CASE("backdoor tallies") {
    const std::vector<std::size_t> all_target(7, 4);
    CHECK(backdoor_tally(all_target, 4, 5).fraction() == 1.0);
    const std::vector<std::size_t> mixed{4, 0, 4, 1};
    CHECK(backdoor_tally(mixed, 4, 5) == Tally{2, 4});
    CHECK_THROWS_AS(backdoor_tally(mixed, 5, 5), Error);
    CHECK_THROWS_AS(backdoor_tally({}, 4, 5), Error);
}

TEST_CASE("accuracy helpers over an episode") {
    const auto d = make_synthetic_dataset(SyntheticConfig{}, 42).dataset;
    const ClassId target = d.ids_with_role(ClassRole::Target)[0];
    const auto ep = sample_episode(d, 5, 5, 3, EpisodeConstraints{{target}, 1});
    SlotPredictor oracle = [&](const Tensor<float>&) { return slot_labels(ep.query); };
    CHECK(main_task_accuracy(oracle, ep) == 1.0);
    SlotPredictor to_target = [](const Tensor<float>& x) { return std::vector<std::size_t>(x.dim(0), 4); };
    const AttackConfig atk;
    const auto poison = prepare_poisoned_data(d, atk, default_attack_split(20, 5));
    CHECK(backdoor_accuracy(to_target, poison.backdoor_validation, ep, target) == 1.0);

    const auto plain = sample_episode(d, 5, 5, 3, EpisodeConstraints{{}, 1});
    CHECK_THROWS_AS(backdoor_accuracy(to_target, poison.backdoor_validation, plain, target), Error);

    std::set<ExampleRef> train, val;
    for (const auto& e : poison.backdoor_train) train.insert(e.source);
    for (const auto& e : poison.backdoor_validation) CHECK(train.count(e.source) == 0);
}

TEST_CASE("metrics CSV format") {
    MetricsRecord r;
    r.round = 1;
    r.iteration = 50;
    r.client = 2;
    r.main_task = 0.9;
    r.backdoor_train = 0.5;
    r.backdoor_validation = 1.0 / 3;
    r.meta_test = 1;
    r.episodes = 40;
    std::ostringstream out;
    write_metrics_csv(out, std::vector<MetricsRecord>{r});
    CHECK(out.str() ==
          "round,iteration,client,metric,value,n_episodes\n"
          "1,50,2,main_task,0.900000,40\n"
          "1,50,2,backdoor_train,0.500000,40\n"
          "1,50,2,backdoor_validation,0.333333,40\n"
          "1,50,2,meta_test,1.000000,40\n");

    r.episodes = 0;
    CHECK_THROWS_AS(r.validate(), Error);
    r.episodes = 1;
    r.main_task = 1.5;
    CHECK_THROWS_AS(r.validate(), Error);
    CHECK(metric_from_string("backdoor_validation") == Metric::BackdoorValidation);
    CHECK_THROWS_AS(metric_from_string("loss"), Error);
}

TEST_CASE("prediction log lines") {
    PredictionEntry e{10, 3, Metric::BackdoorTrain, {4, 1}, {4, 4}};
    const auto j = json::parse(to_jsonl(e, 1, 2));
    CHECK(j["round"] == 1);
    CHECK(j["client"] == 2);
    CHECK(j["iteration"] == 10);
    CHECK(j["episode"] == 3);
    CHECK(j["metric"] == "backdoor_train");
    CHECK(j["predicted"] == json::array({4, 1}));
    CHECK(j["expected"] == json::array({4, 4}));
    CHECK(e.tally() == Tally{1, 2});
}

TEST_CASE("evaluation records are re-derivable from the logged predictions") {
    const auto cfg = tiny();
    const auto world = build_world(cfg);
    const auto theta = glorot_init(world->spec, 4);
    for (auto mode : {DefenseMode::Supervised, DefenseMode::SupervisedNoisy, DefenseMode::Matching}) {
        auto c = cfg;
        c.defense.mode = mode;
        c.defense.head_steps = 2;
        const auto ev = evaluate_model(*world->learner, theta, world->dataset, world->client_eval[1], eval_method(c), 7);
        REQUIRE(ev.records.size() == 3);  // iterations 0, 2, 4
        std::map<std::pair<std::size_t, Metric>, Tally> pooled;
        for (const auto& p : ev.predictions) pooled[{p.iteration, p.metric}] += p.tally();
        for (const auto& r : ev.records) {
            CHECK(r.episodes == 3);
            for (Metric m : kAllMetrics) CHECK(r.value(m) == pooled.at({r.iteration, m}).fraction());
        }
        const auto again = evaluate_model(*world->learner, theta, world->dataset, world->client_eval[1], eval_method(c), 7, 3);
        for (std::size_t i = 0; i < ev.records.size(); ++i) {
            for (Metric m : kAllMetrics) CHECK(again.records[i].value(m) == ev.records[i].value(m));
        }
    }
}

TEST_CASE("backdoor accuracy of untrained models sits near chance") {
    auto cfg = tiny();
    cfg.evaluation.episodes = 10;
    const auto world = build_world(cfg);
    EvalMethod m;
    m.fine_tune.steps = 0;
    double sum = 0;
    const int models = 30;
    for (int s = 0; s < models; ++s) {
        const auto ev = evaluate_model(*world->learner, glorot_init(world->spec, 100 + s), world->dataset,
                                       world->global_eval, m, s);
        sum += ev.records[0].backdoor_validation;
    }
    CHECK(sum / models == doctest::Approx(0.2).epsilon(0.5));  // within [0.1, 0.3]
}

TEST_CASE("meta-test accuracy is deterministic per seed") {
    const auto world = build_world(tiny());
    const auto theta = glorot_init(world->spec, 1);
    FineTuneConfig ft;
    ft.steps = 3;
    const auto& pool = world->global_eval.meta_pool;
    const double a = meta_test_accuracy(*world->learner, theta, world->dataset, pool, ft, 5, 5, 4, 9);
    CHECK(a == meta_test_accuracy(*world->learner, theta, world->dataset, pool, ft, 5, 5, 4, 9));
    CHECK_THROWS_AS(meta_test_accuracy(*world->learner, theta, world->dataset, pool, ft, 5, 5, 0, 9), Error);
}

// ---- cli_runner: configuration ----

TEST_CASE("config validation reports field paths") {
    SUBCASE("quorum above per_round names both fields") {
        auto j = tiny_json();
        j["federation"] = {{"quorum", 3}, {"per_round", 2}};
        const auto issues = issues_of(j);
        CHECK(has_issue(issues, "federation.quorum", "federation.per_round"));
    }
    SUBCASE("mix out of range") {
        auto j = tiny_json();
        j["defense"] = {{"mode", "matching"}, {"mix", 1.2}};
        CHECK(has_issue(issues_of(j), "defense.mix", "[0, 1]"));
    }
    SUBCASE("missing dataset") {
        auto j = tiny_json();
        j.erase("dataset");
        CHECK(has_issue(issues_of(j), "dataset", "missing"));
    }
    SUBCASE("unknown and mistyped keys") {
        auto j = tiny_json();
        j["reptile"]["inner"]["stepz"] = 3;
        j["fine_tune"]["steps"] = "many";
        j["defense"] = {{"mode", "magic"}};
        const auto issues = issues_of(j);
        CHECK(has_issue(issues, "reptile.inner.stepz", "unknown"));
        CHECK(has_issue(issues, "fine_tune.steps"));
        CHECK(has_issue(issues, "defense.mode", "supervised+noisy"));
    }
    SUBCASE("matching needs two shots per class") {
        auto j = tiny_json();
        j["defense"] = {{"mode", "matching"}};
        j["evaluation"]["shots"] = 1;
        CHECK(has_issue(issues_of(j), "evaluation.shots"));
    }
    SUBCASE("an attack needs an attacker") {
        auto j = tiny_json();
        j["federation"] = {{"attacker", nullptr}};
        CHECK(has_issue(issues_of(j), "federation.attacker"));
    }
    SUBCASE("extra meta-training needs a defense") {
        auto j = tiny_json();
        j["extra_meta_episodes"] = 100;
        CHECK(has_issue(issues_of(j), "extra_meta_episodes"));
    }
    SUBCASE("key outside the image") {
        auto j = tiny_json();
        j["attack"]["key"] = {{"pixels", {{20, 0, 255}}}, {"corner", "top_left"}, {"offset", 0}};
        CHECK(has_issue(issues_of(j), "attack.key"));
        j["attack"]["key"]["pixels"] = "square";
        const auto issues = issues_of(j);
        CHECK(has_issue(issues, "attack.key.pixels"));
        CHECK_FALSE(has_issue(issues, "attack.key.corner"));
    }
}

TEST_CASE("resolved config round-trips") {
    for (const auto& name : builtin_experiment_names()) {
        const auto c = builtin_experiment(name);
        CHECK_MESSAGE(check_config(c).empty(), name);
        const auto j = config_to_json(c);
        CHECK(config_to_json(validate_config(json::parse(j.dump()))).dump() == j.dump());
    }
}

TEST_CASE("built-in experiments") {
    const auto names = builtin_experiment_names();
    for (const char* required : {"exp1a", "exp1b", "exp1c", "exp2", "exp3", "appA1-d06", "appA2", "appA3-100", "appA3-1000"}) {
        CHECK_MESSAGE(std::find(names.begin(), names.end(), required) != names.end(), required);
    }
    CHECK(builtin_experiment("exp2").fine_tune.steps == 10 * FineTuneConfig{}.steps);
    CHECK(builtin_experiment("exp2").fine_tune.steps == 500);
    CHECK(builtin_experiment("exp1a").defense.mode == DefenseMode::None);
    CHECK(builtin_experiment("exp1c").scenario == Scenario::InPretrainingAndFinetuning);
    CHECK(builtin_experiment("exp3").defense.mode == DefenseMode::Matching);
    CHECK(builtin_experiment("exp3").defense.mix == 0.3);
    CHECK(builtin_experiment("appA1-d06").defense.mix == 0.6);
    CHECK(builtin_experiment("appA2").defense.mode == DefenseMode::SupervisedNoisy);
    CHECK(builtin_experiment("appA3-100").extra_meta_episodes == 100);
    CHECK(builtin_experiment("appA3-1000").extra_meta_episodes == 1000);
    CHECK_FALSE(builtin_experiment("baseline").attack.has_value());
    CHECK_THROWS_AS(builtin_experiment("exp9"), ConfigError);

    auto paper = builtin_experiment("exp1a");
    apply_paper_scale(paper);
    CHECK(paper.network.filters == 64);
    CHECK(paper.reptile.episodes == 1000);
    CHECK(paper.attack->episodes == 50000);
    CHECK(paper.attack->inner.count == 50);
    CHECK(check_config(paper).empty());
}

TEST_CASE("world construction") {
    for (auto scenario : {Scenario::Absent, Scenario::InPretraining, Scenario::InPretrainingAndFinetuning}) {
        auto c = tiny();
        c.scenario = scenario;
        const auto w = build_world(c);
        CHECK(w->benign_ids == std::vector<ClientId>{2, 3, 4});
        std::set<ClassId> seen;
        std::size_t backdoor_views = 0;
        for (ClientId id : w->benign_ids) {
            for (const auto& v : w->shards[id - 1]) {
                const auto role = w->dataset.at(v.id).role;
                CHECK(role != ClassRole::MetaTest);
                if (role == ClassRole::Ordinary) CHECK(seen.insert(v.id).second);
                if (role == ClassRole::Backdoor) {
                    ++backdoor_views;
                    // Benign users never hold the attack splits.
                    for (auto i : v.support_pool) CHECK(i < 10u);
                }
            }
        }
        CHECK(backdoor_views == (scenario == Scenario::Absent ? 0u : w->poison.backdoor_classes.size()));
        CHECK(w->global_eval.backdoor_slots.empty() == (scenario != Scenario::InPretrainingAndFinetuning));
        for (const auto& v : w->shards[0]) CHECK(w->dataset.at(v.id).role == ClassRole::Ordinary);
    }
}

TEST_CASE("overlapping shards give every user every ordinary class") {
    auto c = tiny();
    c.dataset->shards = ShardSplit::Overlapping;
    const auto j = config_to_json(c);
    CHECK(j["dataset"]["shards"] == "overlapping");
    CHECK(validate_config(json::parse(j.dump())).dataset->shards == ShardSplit::Overlapping);

    const auto w = build_world(c);
    const auto disjoint = build_world(tiny());
    std::size_t ordinary = 0;
    for (ClientId id = 1; id <= 4; ++id) {
        for (const auto& v : disjoint->shards[id - 1]) ordinary += w->dataset.at(v.id).role == ClassRole::Ordinary;
    }
    for (ClientId id = 1; id <= 4; ++id) {
        std::size_t count = 0;
        for (const auto& v : w->shards[id - 1]) count += w->dataset.at(v.id).role == ClassRole::Ordinary;
        CHECK(count == ordinary);
    }
    // The global pool lists each class once.
    std::set<ClassId> pool;
    for (const auto& v : w->global_eval.main_pool) CHECK(pool.insert(v.id).second);
    CHECK(pool.size() == ordinary + 1);

    json bad = json::parse(j.dump());
    bad["dataset"]["shards"] = "random";
    CHECK(has_issue(issues_of(bad), "dataset.shards"));
}

// ---- cli_runner: runs ----

TEST_CASE("defense none: evaluation per round from the pre-trained model on") {
    const auto c = tiny();
    MemorySink a, b;
    const auto result = run_experiment(c, a);
    run_experiment(c, b);
    CHECK(a.csv() == b.csv());
    CHECK(a.rounds == b.rounds);
    CHECK(a.jsonl == b.jsonl);

    std::set<std::size_t> rounds;
    for (const auto& r : result.records) {
        rounds.insert(r.round);
        CHECK(r.client == 0);
        CHECK((r.iteration == 0 || r.iteration == c.fine_tune.steps));
    }
    CHECK(rounds == std::set<std::size_t>{0, 1, 2, 3});
    // One pre-training round, the attack round and two continued rounds.
    REQUIRE(a.rounds.size() == 4);
    CHECK(json::parse(a.rounds[0])["phase"] == "pretrain");
    CHECK(json::parse(a.rounds[1])["phase"] == "attack");
    const auto attack = json::parse(a.rounds[1])["selected"].get<std::vector<int>>();
    CHECK(std::find(attack.begin(), attack.end(), 1) != attack.end());
    for (std::size_t i : {0u, 2u, 3u}) {
        const auto sel = json::parse(a.rounds[i])["selected"].get<std::vector<int>>();
        CHECK(std::find(sel.begin(), sel.end(), 1) == sel.end());
    }
}

TEST_CASE("defenses: per-client fine-tuning after the attack") {
    auto c = tiny();
    c.defense.mode = DefenseMode::Matching;
    c.defense.head_steps = 2;
    MemorySink sink;
    const auto result = run_experiment(c, sink);
    std::set<ClientId> clients;
    for (const auto& r : result.records) {
        clients.insert(r.client);
        CHECK(r.round == 1);
    }
    CHECK(clients == std::set<ClientId>{2, 3, 4});
    CHECK(result.records.size() == 3 * 3);  // three clients, iterations 0, 2, 4

    c.defense.mode = DefenseMode::SupervisedNoisy;
    c.extra_meta_episodes = 5;
    MemorySink extra;
    CHECK(run_experiment(c, extra).records.size() == 9);
}

TEST_CASE("seeds change the run") {
    auto c = tiny();
    MemorySink a, b;
    run_experiment(c, a);
    c.seed = 2;
    run_experiment(c, b);
    CHECK(a.jsonl != b.jsonl);
}
