#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fedmeta/error.hpp"
#include "fedmeta/experiment.hpp"
#include "fedmeta/network.hpp"

namespace fedmeta {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

template <class E>
using Names = std::vector<std::pair<E, const char*>>;

const Names<DefenseMode> kDefenseNames{{DefenseMode::None, "none"},
                                       {DefenseMode::Supervised, "supervised"},
                                       {DefenseMode::SupervisedNoisy, "supervised+noisy"},
                                       {DefenseMode::Matching, "matching"}};
const Names<Scenario> kScenarioNames{{Scenario::Absent, "absent"},
                                     {Scenario::InPretraining, "in_pretraining"},
                                     {Scenario::InPretrainingAndFinetuning, "in_pretraining_and_finetuning"}};
const Names<ShardSplit> kShardNames{{ShardSplit::Disjoint, "disjoint"}, {ShardSplit::Overlapping, "overlapping"}};
const Names<OptimizerKind> kOptimizerNames{{OptimizerKind::Sgd, "sgd"}, {OptimizerKind::Adam, "adam"}};
const Names<StepUnit> kUnitNames{{StepUnit::Steps, "steps"}, {StepUnit::Epochs, "epochs"}};
const Names<Corner> kCornerNames{{Corner::TopLeft, "top_left"},
                                 {Corner::TopRight, "top_right"},
                                 {Corner::BottomLeft, "bottom_left"},
                                 {Corner::BottomRight, "bottom_right"}};

template <class E>
const char* name_of(const Names<E>& names, E value) {
    for (const auto& [v, n] : names) {
        if (v == value) return n;
    }
    return "?";
}

template <class E>
std::string choices(const Names<E>& names) {
    std::string out;
    for (const auto& [v, n] : names) out += (out.empty() ? "" : ", ") + std::string(n);
    return out;
}

/// Reads one JSON object into existing fields, recording issues by path.
class Reader {
public:
    Reader(const json& j, std::string path, std::vector<ConfigIssue>& issues)
        : j_(j), path_(std::move(path)), issues_(issues) {}

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void issue(const std::string& key, const std::string& message) { issues_.push_back({at(key), message}); }

    // Integers built in code are signed; parsed ones are unsigned.
    static bool non_negative_integer(const json& v) {
        return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    }

    void size(const std::string& key, std::size_t& out) {
        if (const json* v = find(key)) {
            if (non_negative_integer(*v)) out = v->get<std::size_t>();
            else issue(key, "expected a non-negative integer");
        }
    }
    void u64(const std::string& key, std::uint64_t& out) {
        if (const json* v = find(key)) {
            if (non_negative_integer(*v)) out = v->get<std::uint64_t>();
            else issue(key, "expected a non-negative integer");
        }
    }
    void real(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            if (v->is_number()) out = v->get<double>();
            else issue(key, "expected a number");
        }
    }
    void boolean(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (v->is_boolean()) out = v->get<bool>();
            else issue(key, "expected true or false");
        }
    }
    void string(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (v->is_string()) out = v->get<std::string>();
            else issue(key, "expected a string");
        }
    }
    template <class E>
    void choice(const std::string& key, const Names<E>& names, E& out) {
        if (const json* v = find(key)) {
            if (v->is_string()) {
                for (const auto& [value, name] : names) {
                    if (v->get<std::string>() == name) {
                        out = value;
                        return;
                    }
                }
            }
            issue(key, "expected one of: " + choices(names));
        }
    }
    /// Calls fn with a reader for the nested object, if present.
    template <class Fn>
    void object(const std::string& key, Fn&& fn) {
        if (const json* v = find(key)) {
            if (!v->is_object()) {
                issue(key, "expected an object");
                return;
            }
            Reader sub(*v, at(key), issues_);
            fn(sub);
            sub.finish();
        }
    }

    void finish() {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) issues_.push_back({at(it.key()), "unknown key"});
        }
    }

private:
    const json& j_;
    std::string path_;
    std::vector<ConfigIssue>& issues_;
    std::set<std::string> seen_;
};

void read_optimizer(Reader& r, OptimizerConfig& o) {
    r.choice("kind", kOptimizerNames, o.kind);
    r.real("learning_rate", o.learning_rate);
    r.real("beta1", o.beta1);
    r.real("beta2", o.beta2);
    r.real("epsilon", o.epsilon);
}

void read_inner(Reader& r, InnerSchedule& s) {
    r.size("count", s.count);
    r.choice("unit", kUnitNames, s.unit);
    r.size("batch_size", s.batch_size);
    r.object("optimizer", [&](Reader& o) { read_optimizer(o, s.optimizer); });
}

void read_key(Reader& r, BackdoorKey& key) {
    std::vector<KeyPixel> pattern = key.pattern();
    Corner corner = key.corner();
    std::size_t offset = key.offset();
    bool ok = true;
    if (const json* px = r.find("pixels")) {
        pattern.clear();
        ok = px->is_array();
        if (ok) {
            for (const auto& p : *px) {
                if (!p.is_array() || p.size() != 3 || !Reader::non_negative_integer(p[0]) ||
                    !Reader::non_negative_integer(p[1]) || !Reader::non_negative_integer(p[2]) ||
                    p[0].get<std::uint64_t>() > 0xffff ||
                    p[1].get<std::uint64_t>() > 0xffff || p[2].get<std::uint64_t>() > 255) {
                    ok = false;
                    break;
                }
                pattern.push_back({p[0].get<std::uint16_t>(), p[1].get<std::uint16_t>(), p[2].get<std::uint8_t>()});
            }
        }
        if (!ok) r.issue("pixels", "expected a list of [row, col, value] with value in 0..255");
    }
    r.choice("corner", kCornerNames, corner);
    r.size("offset", offset);
    if (!ok) return;
    try {
        key = BackdoorKey(std::move(pattern), corner, offset);
    } catch (const Error& e) {
        r.issue("pixels", e.what());
    }
}

void read_synthetic(Reader& r, SyntheticConfig& s) {
    r.size("meta_train_classes", s.meta_train_classes);
    r.size("meta_test_classes", s.meta_test_classes);
    r.size("backdoor_classes", s.backdoor_classes);
    r.size("target_classes", s.target_classes);
    r.size("examples_per_class", s.examples_per_class);
    r.size("image_size", s.image_size);
    r.size("holdout", s.holdout);
    r.size("min_strokes", s.min_strokes);
    r.size("max_strokes", s.max_strokes);
    r.real("endpoint_jitter", s.endpoint_jitter);
    r.real("flip_probability", s.flip_probability);
    r.real("min_prototype_distance", s.min_prototype_distance);
}

ordered_json optimizer_json(const OptimizerConfig& o) {
    return {{"kind", name_of(kOptimizerNames, o.kind)},
            {"learning_rate", o.learning_rate},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"epsilon", o.epsilon}};
}

ordered_json inner_json(const InnerSchedule& s) {
    return {{"count", s.count},
            {"unit", name_of(kUnitNames, s.unit)},
            {"batch_size", s.batch_size},
            {"optimizer", optimizer_json(s.optimizer)}};
}

/// Runs a validate() and turns its Error into an issue at `path`.
template <class Fn>
void check(std::vector<ConfigIssue>& issues, const std::string& path, Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        issues.push_back({path, e.what()});
    }
}

}  // namespace

std::string_view to_string(DefenseMode mode) { return name_of(kDefenseNames, mode); }
std::string_view to_string(Scenario scenario) { return name_of(kScenarioNames, scenario); }
std::string_view to_string(ShardSplit split) { return name_of(kShardNames, split); }

namespace {

std::string join_issues(const std::vector<ConfigIssue>& issues) {
    std::string out = "invalid configuration:";
    for (const auto& i : issues) out += "\n  " + i.path + ": " + i.message;
    return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<ConfigIssue> issues)
    : Error(ErrorKind::Config, join_issues(issues)), issues_(std::move(issues)) {}

std::vector<ConfigIssue> parse_config(const json& j, ExperimentConfig& c) {
    std::vector<ConfigIssue> issues;
    if (!j.is_object()) return {{"", "configuration must be a JSON object"}};
    Reader r(j, "", issues);
    r.string("name", c.name);
    r.u64("seed", c.seed);
    if (const json* d = r.find("dataset")) {
        if (d->is_null()) {
            c.dataset.reset();
        } else if (!d->is_object()) {
            r.issue("dataset", "expected an object");
        } else {
            DatasetSpec spec = c.dataset.value_or(DatasetSpec{});
            Reader dr(*d, "dataset", issues);
            dr.string("packed_path", spec.packed_path);
            dr.size("holdout", spec.holdout);
            dr.boolean("rotate", spec.rotate);
            dr.choice("shards", kShardNames, spec.shards);
            dr.object("synthetic", [&](Reader& s) { read_synthetic(s, spec.synthetic); });
            if (const json* s = dr.find("seed")) {
                if (s->is_null()) spec.seed.reset();
                else if (Reader::non_negative_integer(*s)) spec.seed = s->get<std::uint64_t>();
                else dr.issue("seed", "expected a non-negative integer or null");
            }
            dr.finish();
            c.dataset = spec;
        }
    }
    r.object("network", [&](Reader& n) {
        n.size("modules", c.network.modules);
        n.size("filters", c.network.filters);
        n.size("kernel", c.network.kernel);
        n.size("pool", c.network.pool);
        n.real("bn_epsilon", c.network.bn_epsilon);
    });
    r.object("federation", [&](Reader& f) {
        f.size("users", c.federation.users);
        f.size("per_round", c.federation.per_round);
        f.size("quorum", c.federation.quorum);
        if (const json* w = f.find("weights")) {
            if (w->is_array() && std::all_of(w->begin(), w->end(), [](const json& x) { return x.is_number(); }))
                c.federation.weights = w->get<std::vector<double>>();
            else f.issue("weights", "expected a list of numbers");
        }
        if (const json* a = f.find("attacker")) {
            if (a->is_null()) c.federation.attacker.reset();
            else if (Reader::non_negative_integer(*a)) c.federation.attacker = a->get<ClientId>();
            else f.issue("attacker", "expected a client id or null");
        }
    });
    r.object("reptile", [&](Reader& p) {
        p.size("episodes", c.reptile.episodes);
        p.size("meta_batch", c.reptile.meta_batch);
        p.real("outer_lr", c.reptile.outer_lr);
        p.size("shots", c.reptile.shots);
        p.size("ways", c.reptile.ways);
        p.object("inner", [&](Reader& i) { read_inner(i, c.reptile.inner); });
    });
    if (const json* a = r.find("attack")) {
        if (a->is_null()) {
            c.attack.reset();
        } else if (!a->is_object()) {
            r.issue("attack", "expected an object or null");
        } else {
            AttackConfig atk = c.attack.value_or(AttackConfig{});
            Reader ar(*a, "attack", issues);
            ar.real("boost", atk.boost);
            ar.object("ratio", [&](Reader& q) {
                q.size("backdoor", atk.ratio.backdoor);
                q.size("target", atk.ratio.target);
            });
            ar.size("episodes", atk.episodes);
            ar.object("inner", [&](Reader& i) { read_inner(i, atk.inner); });
            ar.object("key", [&](Reader& k) { read_key(k, atk.key); });
            ar.finish();
            c.attack = atk;
        }
    }
    r.object("fine_tune", [&](Reader& f) {
        f.size("steps", c.fine_tune.steps);
        f.size("batch_size", c.fine_tune.batch_size);
        f.size("record_every", c.fine_tune.record_every);
        f.object("optimizer", [&](Reader& o) { read_optimizer(o, c.fine_tune.optimizer); });
    });
    r.object("defense", [&](Reader& d) {
        d.choice("mode", kDefenseNames, c.defense.mode);
        d.real("mix", c.defense.mix);
        d.size("head_steps", c.defense.head_steps);
    });
    r.choice("scenario", kScenarioNames, c.scenario);
    r.size("extra_meta_episodes", c.extra_meta_episodes);
    r.object("pretrain", [&](Reader& p) {
        if (const json* n = p.find("rounds")) {
            if (n->is_null()) c.pretrain.rounds.reset();
            else if (Reader::non_negative_integer(*n)) c.pretrain.rounds = n->get<std::size_t>();
            else p.issue("rounds", "expected a non-negative integer or null");
        }
        p.size("patience", c.pretrain.patience);
        p.size("max_rounds", c.pretrain.max_rounds);
    });
    r.size("continued_rounds", c.continued_rounds);
    r.object("evaluation", [&](Reader& e) {
        e.size("episodes", c.evaluation.episodes);
        e.size("ways", c.evaluation.ways);
        e.size("shots", c.evaluation.shots);
        e.size("queries_per_class", c.evaluation.queries_per_class);
    });
    r.size("threads", c.threads);
    r.string("output_dir", c.output_dir);
    r.finish();
    return issues;
}

std::vector<ConfigIssue> check_config(const ExperimentConfig& c) {
    std::vector<ConfigIssue> issues;
    auto add = [&](std::string path, std::string message) { issues.push_back({std::move(path), std::move(message)}); };

    if (!c.dataset) {
        add("dataset", "missing dataset spec");
    } else {
        const auto& d = *c.dataset;
        if (d.packed_path.empty()) {
            check(issues, "dataset.synthetic", [&] { d.synthetic.validate(); });
            if (d.synthetic.target_classes != 1) add("dataset.synthetic.target_classes", "exactly one target class is needed");
            if (d.synthetic.backdoor_classes == 0) add("dataset.synthetic.backdoor_classes", "at least one backdoor class is needed");
        } else if (d.holdout == 0) {
            add("dataset.holdout", "must be positive");
        }
    }

    const auto& f = c.federation;
    if (f.users == 0) add("federation.users", "must be positive");
    if (f.quorum == 0) add("federation.quorum", "must be positive");
    if (f.quorum > f.per_round) {
        add("federation.quorum", "federation.quorum (" + std::to_string(f.quorum) + ") exceeds federation.per_round (" +
                                     std::to_string(f.per_round) + ")");
    }
    if (f.per_round > f.users) {
        add("federation.per_round", "federation.per_round (" + std::to_string(f.per_round) +
                                        ") exceeds federation.users (" + std::to_string(f.users) + ")");
    }
    if (!f.weights.empty() && f.weights.size() != f.users) add("federation.weights", "needs one entry per user");
    for (double w : f.weights) {
        if (!(w > 0.0)) add("federation.weights", "weights must be positive");
    }
    if (f.attacker) {
        if (*f.attacker < 1 || *f.attacker > f.users) add("federation.attacker", "not a client id in 1..federation.users");
        if (f.per_round >= f.users) {
            add("federation.per_round", "must be below federation.users so benign rounds can exclude the attacker");
        }
    }
    if (c.attack && !f.attacker) add("federation.attacker", "an attack needs an attacker id");

    check(issues, "reptile", [&] { c.reptile.validate(); });
    if (c.attack) {
        check(issues, "attack", [&] { c.attack->validate(); });
        check(issues, "attack.ratio", [&] { (void)c.attack->backdoor_shots(c.reptile.shots); });
        if (c.dataset && c.dataset->packed_path.empty() &&
            !c.attack->key.fits(c.dataset->synthetic.image_size, c.dataset->synthetic.image_size)) {
            add("attack.key", "does not fit a " + std::to_string(c.dataset->synthetic.image_size) + "x" +
                                  std::to_string(c.dataset->synthetic.image_size) + " image");
        }
    }
    check(issues, "fine_tune", [&] { c.fine_tune.validate(); });

    if (!(c.defense.mix >= 0.0 && c.defense.mix <= 1.0)) {
        add("defense.mix", "must be in [0, 1], got " + std::to_string(c.defense.mix));
    }
    if (c.defense.mode == DefenseMode::Matching) {
        if (c.evaluation.shots < 2) {
            add("evaluation.shots", "the matching defense holds out one support example per class, so at least 2 shots are needed");
        }
        if (c.defense.head_steps > c.fine_tune.steps) add("defense.head_steps", "exceeds fine_tune.steps");
    }
    if (c.extra_meta_episodes > 0) {
        if (c.defense.mode == DefenseMode::None) {
            add("extra_meta_episodes", "extra local meta-training precedes fine-tuning and needs a defense mode other than none");
        }
        if (c.reptile.meta_batch > 0 && c.extra_meta_episodes % c.reptile.meta_batch != 0) {
            add("extra_meta_episodes", "must be a multiple of reptile.meta_batch");
        }
    }

    const auto& e = c.evaluation;
    if (e.episodes == 0) add("evaluation.episodes", "must be positive");
    if (e.shots == 0) add("evaluation.shots", "must be positive");
    if (e.queries_per_class == 0) add("evaluation.queries_per_class", "must be positive");
    if (e.ways != c.reptile.ways) {
        add("evaluation.ways", "must equal reptile.ways (" + std::to_string(c.reptile.ways) + "), the classifier width");
    }
    if (c.pretrain.patience == 0) add("pretrain.patience", "must be positive");
    if (c.pretrain.max_rounds == 0) add("pretrain.max_rounds", "must be positive");

    if (c.dataset && c.dataset->packed_path.empty()) {
        NetworkSpec spec;
        spec.height = spec.width = c.dataset->synthetic.image_size;
        spec.modules = c.network.modules;
        spec.filters = c.network.filters;
        spec.kernel = c.network.kernel;
        spec.pool = c.network.pool;
        spec.bn_epsilon = c.network.bn_epsilon;
        spec.num_classes = c.reptile.ways;
        check(issues, "network", [&] { spec.validate(); });
    }
    return issues;
}

ExperimentConfig validate_config(const json& j) {
    ExperimentConfig c;
    c.dataset.reset();
    auto issues = parse_config(j, c);
    if (issues.empty()) issues = check_config(c);
    if (!issues.empty()) throw ConfigError(std::move(issues));
    return c;
}

ordered_json config_to_json(const ExperimentConfig& c) {
    ordered_json j;
    j["name"] = c.name;
    j["seed"] = c.seed;
    if (c.dataset) {
        const auto& d = *c.dataset;
        const auto& s = d.synthetic;
        ordered_json dj;
        dj["packed_path"] = d.packed_path;
        dj["holdout"] = d.holdout;
        dj["rotate"] = d.rotate;
        dj["shards"] = name_of(kShardNames, d.shards);
        dj["synthetic"] = {{"meta_train_classes", s.meta_train_classes},
                           {"meta_test_classes", s.meta_test_classes},
                           {"backdoor_classes", s.backdoor_classes},
                           {"target_classes", s.target_classes},
                           {"examples_per_class", s.examples_per_class},
                           {"image_size", s.image_size},
                           {"holdout", s.holdout},
                           {"min_strokes", s.min_strokes},
                           {"max_strokes", s.max_strokes},
                           {"endpoint_jitter", s.endpoint_jitter},
                           {"flip_probability", s.flip_probability},
                           {"min_prototype_distance", s.min_prototype_distance}};
        dj["seed"] = d.seed ? ordered_json(*d.seed) : ordered_json(nullptr);
        j["dataset"] = dj;
    } else {
        j["dataset"] = nullptr;
    }
    j["network"] = {{"modules", c.network.modules},
                    {"filters", c.network.filters},
                    {"kernel", c.network.kernel},
                    {"pool", c.network.pool},
                    {"bn_epsilon", c.network.bn_epsilon}};
    j["federation"] = {{"users", c.federation.users},
                       {"per_round", c.federation.per_round},
                       {"quorum", c.federation.quorum},
                       {"weights", c.federation.weights},
                       {"attacker", c.federation.attacker ? ordered_json(*c.federation.attacker) : ordered_json(nullptr)}};
    j["reptile"] = {{"episodes", c.reptile.episodes},
                    {"meta_batch", c.reptile.meta_batch},
                    {"outer_lr", c.reptile.outer_lr},
                    {"shots", c.reptile.shots},
                    {"ways", c.reptile.ways},
                    {"inner", inner_json(c.reptile.inner)}};
    if (c.attack) {
        const auto& a = *c.attack;
        ordered_json pixels = ordered_json::array();
        for (const auto& p : a.key.pattern()) pixels.push_back({p.row, p.col, p.value});
        j["attack"] = {{"boost", a.boost},
                       {"ratio", {{"backdoor", a.ratio.backdoor}, {"target", a.ratio.target}}},
                       {"episodes", a.episodes},
                       {"inner", inner_json(a.inner)},
                       {"key", {{"pixels", pixels}, {"corner", name_of(kCornerNames, a.key.corner())}, {"offset", a.key.offset()}}}};
    } else {
        j["attack"] = nullptr;
    }
    j["fine_tune"] = {{"steps", c.fine_tune.steps},
                      {"batch_size", c.fine_tune.batch_size},
                      {"record_every", c.fine_tune.record_every},
                      {"optimizer", optimizer_json(c.fine_tune.optimizer)}};
    j["defense"] = {{"mode", to_string(c.defense.mode)}, {"mix", c.defense.mix}, {"head_steps", c.defense.head_steps}};
    j["scenario"] = to_string(c.scenario);
    j["extra_meta_episodes"] = c.extra_meta_episodes;
    j["pretrain"] = {{"rounds", c.pretrain.rounds ? ordered_json(*c.pretrain.rounds) : ordered_json(nullptr)},
                     {"patience", c.pretrain.patience},
                     {"max_rounds", c.pretrain.max_rounds}};
    j["continued_rounds"] = c.continued_rounds;
    j["evaluation"] = {{"episodes", c.evaluation.episodes},
                       {"ways", c.evaluation.ways},
                       {"shots", c.evaluation.shots},
                       {"queries_per_class", c.evaluation.queries_per_class}};
    j["threads"] = c.threads;
    j["output_dir"] = c.output_dir;
    return j;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open config file " + path);
    json j;
    try {
        j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigError({{"", std::string("not valid JSON: ") + e.what()}});
    }
    return validate_config(j);
}

namespace {

ExperimentConfig desk_base(std::string name) {
    ExperimentConfig c;
    c.name = std::move(name);
    c.dataset = DatasetSpec{};
    return c;
}

std::map<std::string, std::function<ExperimentConfig()>> builtins() {
    std::map<std::string, std::function<ExperimentConfig()>> m;
    auto exp1 = [](const char* name, Scenario s) {
        return [=] {
            auto c = desk_base(name);
            c.scenario = s;
            return c;
        };
    };
    m["exp1a"] = exp1("exp1a", Scenario::Absent);
    m["exp1b"] = exp1("exp1b", Scenario::InPretraining);
    m["exp1c"] = exp1("exp1c", Scenario::InPretrainingAndFinetuning);
    auto exp2 = [](const char* name, Scenario s) {
        return [=] {
            auto c = desk_base(name);
            c.scenario = s;
            c.defense.mode = DefenseMode::Supervised;
            c.fine_tune.steps = 10 * FineTuneConfig{}.steps;
            c.fine_tune.record_every = 10;
            return c;
        };
    };
    m["exp2"] = exp2("exp2", Scenario::Absent);
    m["exp2b"] = exp2("exp2b", Scenario::InPretraining);
    m["exp2c"] = exp2("exp2c", Scenario::InPretrainingAndFinetuning);
    auto matching = [](const char* name, double mix, Scenario s) {
        return [=] {
            auto c = desk_base(name);
            c.scenario = s;
            c.defense.mode = DefenseMode::Matching;
            c.defense.mix = mix;
            return c;
        };
    };
    m["exp3"] = matching("exp3", 0.3, Scenario::Absent);
    m["exp3b"] = matching("exp3b", 0.3, Scenario::InPretraining);
    m["exp3c"] = matching("exp3c", 0.3, Scenario::InPretrainingAndFinetuning);
    m["appA1-d02"] = matching("appA1-d02", 0.2, Scenario::Absent);
    m["appA1-d04"] = matching("appA1-d04", 0.4, Scenario::Absent);
    m["appA1-d06"] = matching("appA1-d06", 0.6, Scenario::Absent);
    m["appA2"] = [] {
        auto c = desk_base("appA2");
        c.defense.mode = DefenseMode::SupervisedNoisy;
        c.defense.mix = 0.3;
        return c;
    };
    auto extra = [](const char* name, std::size_t episodes, DefenseMode mode) {
        return [=] {
            auto c = desk_base(name);
            c.defense.mode = mode;
            c.defense.mix = 0.3;
            c.extra_meta_episodes = episodes;
            return c;
        };
    };
    m["appA3-100"] = extra("appA3-100", 100, DefenseMode::SupervisedNoisy);
    m["appA3-1000"] = extra("appA3-1000", 1000, DefenseMode::SupervisedNoisy);
    m["appA3-100-matching"] = extra("appA3-100-matching", 100, DefenseMode::Matching);
    m["appA3-1000-matching"] = extra("appA3-1000-matching", 1000, DefenseMode::Matching);
    m["baseline"] = [] {
        auto c = desk_base("baseline");
        c.attack.reset();
        return c;
    };
    return m;
}

}  // namespace

std::vector<std::string> builtin_experiment_names() {
    std::vector<std::string> out;
    for (const auto& [name, make] : builtins()) out.push_back(name);
    return out;
}

ExperimentConfig builtin_experiment(std::string_view name) {
    const auto all = builtins();
    auto it = all.find(std::string(name));
    if (it == all.end()) throw ConfigError({{"", "unknown built-in experiment '" + std::string(name) + "'"}});
    return it->second();
}

void apply_paper_scale(ExperimentConfig& c) {
    c.network.filters = 64;
    c.reptile.episodes = 1000;
    if (c.attack) {
        c.attack->episodes = 50000;
        c.attack->inner = epochs_schedule(50);
    }
    c.continued_rounds = 50;
}

}  // namespace fedmeta
