// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any selected criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fedmeta/attack.hpp"
#include "fedmeta/experiment.hpp"
#include "fedmeta/federation.hpp"
#include "fedmeta/loss.hpp"
#include "fedmeta/matching.hpp"
#include "fedmeta/network.hpp"
#include "fedmeta/reptile.hpp"
#include "fedmeta/rng.hpp"
#include "gradcheck.hpp"

using namespace fedmeta;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
    bool pass = false;
    std::string detail;
};

void report(int criterion, const Verdict& v, double secs) {
    std::printf("criterion %d: %s  %s (%.1fs)\n", criterion, v.pass ? "PASS" : "FAIL", v.detail.c_str(), secs);
    std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

// ---- 1: gradients ----

Verdict gradient_suite() {
    testing::GradCheckReport network, matching;
    // Central differences with a small step: the smallest nets have
    // pre-activations within 1e-4 of a ReLU or pooling kink.
    constexpr double step = 1e-6;
    Rng pick(2024);
    for (std::uint64_t net = 0; net < 20; ++net) {
        NetworkSpec spec;
        spec.modules = 1 + pick.below(3);
        spec.filters = 2 + pick.below(3);
        spec.height = spec.width = spec.modules == 3 ? 8 : 4 + 2 * pick.below(3);
        spec.num_classes = 2 + pick.below(4);
        Rng rng(derive_seed(7, "net", {net}));
        auto params = glorot_init(spec, net).cast<double>();
        for (auto& v : params.values()) v += 0.1 * rng.normal();

        const std::size_t n = 4;
        Tensor<double> batch({n, 1, spec.height, spec.width});
        for (auto& v : batch.data) v = rng.uniform();
        std::vector<std::size_t> labels(n);
        for (auto& l : labels) l = rng.below(spec.num_classes);
        const auto targets = one_hot<double>(labels, spec.num_classes);

        // Training-mode classifier loss covers conv, batch norm, ReLU, pooling,
        // the linear head and softmax cross-entropy.
        auto loss = [&] {
            return softmax_cross_entropy(forward(params, spec, batch, Mode::Train).output, targets).loss;
        };
        const auto fwd = forward(params, spec, batch, Mode::Train);
        const auto ce = softmax_cross_entropy(fwd.output, targets);
        const auto grad = backward(params, spec, fwd.cache, ce.grad);
        network += testing::check_gradient(params.values(), std::vector<double>(grad.values().begin(), grad.values().end()),
                                           loss, step);

        // Eval mode with frozen statistics.
        const auto stats = fwd.stats;
        auto eval_loss = [&] {
            return softmax_cross_entropy(forward(params, spec, batch, Mode::Eval, &stats).output, targets).loss;
        };
        const auto efwd = forward(params, spec, batch, Mode::Eval, &stats);
        const auto egrad = backward(params, spec, efwd.cache, softmax_cross_entropy(efwd.output, targets).grad);
        network += testing::check_gradient(params.values(),
                                           std::vector<double>(egrad.values().begin(), egrad.values().end()), eval_loss,
                                           step);

        // Matching-head loss with respect to the trunk, gates and scales.
        const NetworkSpec embed = spec.as_embedding();
        auto trunk = extract(params, embed.make_layout());
        const std::size_t ways = 3;
        BasicParamVector<double> head(make_head_layout(embed.embedding_dim(), ways));
        for (auto& g : head.segment(0)) g = 0.2 + 0.6 * rng.uniform();
        for (auto& s : head.segment(1)) s = 1.0 + 2.0 * rng.uniform();
        Tensor<double> support({6, 1, spec.height, spec.width}), query({3, 1, spec.height, spec.width});
        for (auto& v : support.data) v = rng.uniform();
        for (auto& v : query.data) v = rng.uniform();
        const std::vector<std::size_t> sl{0, 1, 2, 0, 1, 2}, ql{2, 0, 1};
        const auto ml = matching_loss(trunk, embed, head, support, sl, query, ql);
        auto mloss = [&] { return matching_loss(trunk, embed, head, support, sl, query, ql).loss; };
        matching += testing::check_gradient(
            trunk.values(), std::vector<double>(ml.trunk_grad.values().begin(), ml.trunk_grad.values().end()), mloss, step);
        matching += testing::check_gradient(
            head.values(), std::vector<double>(ml.head_grad.values().begin(), ml.head_grad.values().end()), mloss, step);
    }
    const bool pass = network.pass_fraction() >= 0.999 && matching.pass_fraction() >= 0.999;
    char buf[200];
    std::snprintf(buf, sizeof buf, "network %zu/%zu, matching %zu/%zu components within tolerance over 20 nets",
                  network.passed, network.checked, matching.passed, matching.checked);
    return {pass, buf};
}

// ---- 2: protocol algebra ----

LayoutPtr flat(std::size_t n) { return std::make_shared<Layout>(std::vector<Segment>{{"p", {n}}}); }

ParamVector random_params(const LayoutPtr& layout, Rng& rng, double scale) {
    ParamVector p(layout);
    for (auto& v : p.values()) v = static_cast<float>(scale * rng.normal());
    return p;
}

Verdict protocol_algebra() {
    Rng rng(99);
    const auto layout = flat(500);
    std::size_t mismatches = 0, permutations = 0;
    FederationConfig fed;
    fed.users = 4;
    fed.per_round = 4;
    fed.quorum = 4;
    fed.weights = {0.25, 0.5, 0.125, 1.0};
    for (int trial = 0; trial < 100; ++trial) {
        const auto global = random_params(layout, rng, 1.0);
        const auto local = random_params(layout, rng, 1.0);
        const double boost = 1.0 + 4.0 * rng.uniform();

        const auto delta = compute_delta(local, global);
        for (std::size_t k = 0; k < delta.size(); ++k) mismatches += delta[k] != local[k] - global[k];

        const auto boosted = boost_delta(delta, boost);
        for (std::size_t k = 0; k < delta.size(); ++k) {
            mismatches += boosted[k] != static_cast<float>(static_cast<double>(delta[k]) * boost);
        }

        std::vector<ClientUpdate> updates;
        for (ClientId id = 1; id <= 4; ++id) updates.push_back({id, 0, random_params(layout, rng, 0.1)});
        updates[0].delta = boosted;
        std::vector<float> agg_oracle(layout->total_size());
        for (std::size_t k = 0; k < agg_oracle.size(); ++k) {
            double acc = global[k];
            for (const auto& u : updates) acc += fed.weights[u.client - 1] * static_cast<double>(u.delta[k]);
            agg_oracle[k] = static_cast<float>(acc);
        }

        std::vector<ParamVector> models;
        for (int j = 0; j < 5; ++j) models.push_back(random_params(layout, rng, 1.0));
        const double eps = 0.1 + 0.9 * rng.uniform();
        std::vector<float> outer_oracle(layout->total_size());
        for (std::size_t k = 0; k < outer_oracle.size(); ++k) {
            // Mean over the sorted column, so the result cannot depend on order.
            std::vector<float> column;
            for (const auto& m : models) column.push_back(m[k]);
            std::sort(column.begin(), column.end());
            double sum = 0;
            for (float v : column) sum += v;
            outer_oracle[k] = static_cast<float>((1.0 - eps) * global[k] + eps * sum / models.size());
        }

        // Every trial draws a fresh random permutation of both lists.
        auto arrival = updates;
        rng.shuffle(arrival.begin(), arrival.end());
        auto order = models;
        rng.shuffle(order.begin(), order.end());
        ++permutations;
        const auto agg = aggregate(global, arrival, fed);
        const auto outer = reptile_outer_update(global, order, eps);
        for (std::size_t k = 0; k < agg_oracle.size(); ++k) {
            mismatches += agg[k] != agg_oracle[k];
            mismatches += outer[k] != outer_oracle[k];
        }
    }
    return {mismatches == 0, std::to_string(mismatches) + " mismatches against the oracles over " +
                                 std::to_string(permutations) + " random permutations"};
}

// ---- 3: attention invariants ----

Verdict attention_invariants() {
    Rng rng(5);
    std::size_t failures = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t dim = 2 + rng.below(12), classes = 2 + rng.below(4), support = classes + rng.below(8);
        MatchingHead head(dim, classes);
        ParamVector p = head.params();
        for (auto& g : p.segment(0)) g = static_cast<float>(rng.uniform());
        for (auto& s : p.segment(1)) s = static_cast<float>(5.0 * rng.normal());
        head.set_params(p);
        Tensor<float> emb({support, dim});
        for (auto& v : emb.data) v = static_cast<float>(rng.normal());
        std::vector<std::size_t> labels(support);
        for (std::size_t i = 0; i < support; ++i) labels[i] = i < classes ? i : rng.below(classes);
        head.set_support(emb, labels);
        std::vector<float> q(dim);
        for (auto& v : q) v = static_cast<float>(rng.normal());

        const auto a = attention(head, q);
        const double total = std::accumulate(a.begin(), a.end(), 0.0);
        failures += std::abs(total - 1.0) > 1e-6;
        for (double w : a) failures += !(w > 0.0);

        // Softmax of the raw scores shifted by an arbitrary constant.
        const double shift = 20.0 * rng.normal();
        std::vector<double> s(support);
        for (std::size_t i = 0; i < support; ++i) {
            double dot = 0, nq = 0, ne = 0;
            for (std::size_t j = 0; j < dim; ++j) {
                const double x = static_cast<double>(head.gates()[j]) * q[j], y = emb.data[i * dim + j];
                dot += x * y;
                nq += x * x;
                ne += y * y;
            }
            s[i] = (nq == 0 || ne == 0 ? 0.0 : dot / std::sqrt(nq * ne)) * head.scales()[labels[i]] + shift;
        }
        const double m = *std::max_element(s.begin(), s.end());
        double z = 0;
        for (double v : s) z += std::exp(v - m);
        for (std::size_t i = 0; i < support; ++i) failures += std::abs(std::exp(s[i] - m) / z - a[i]) > 1e-6;

        // Permuted support.
        std::vector<std::size_t> perm(support);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm.begin(), perm.end());
        Tensor<float> pemb({support, dim});
        std::vector<std::size_t> plabels(support);
        for (std::size_t i = 0; i < support; ++i) {
            std::copy_n(emb.data.begin() + perm[i] * dim, dim, pemb.data.begin() + i * dim);
            plabels[i] = labels[perm[i]];
        }
        MatchingHead shuffled(head.params());
        shuffled.set_support(pemb, plabels);
        const auto pa = attention(shuffled, q);
        for (std::size_t i = 0; i < support; ++i) failures += std::abs(pa[i] - a[perm[i]]) > 1e-6;

        const auto pred = predict(head, q), ppred = predict(shuffled, q);
        failures += std::abs(std::accumulate(pred.scores.begin(), pred.scores.end(), 0.0) - 1.0) > 1e-6;
        for (std::size_t c = 0; c < classes; ++c) failures += std::abs(pred.scores[c] - ppred.scores[c]) > 1e-6;

        // Zero scales.
        for (auto& s2 : p.segment(1)) s2 = 0;
        MatchingHead flat_head(p);
        flat_head.set_support(emb, labels);
        for (double w : attention(flat_head, q)) failures += std::abs(w - 1.0 / support) > 1e-6;
    }
    return {failures == 0, std::to_string(failures) + " violations over 1000 random cases"};
}

// ---- 4: determinism ----

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Verdict determinism(const std::string& scratch, std::size_t threads) {
    std::string csv[2];
    for (int run = 0; run < 2; ++run) {
        auto config = builtin_experiment("exp3");
        config.threads = threads;
        config.output_dir = scratch + "/exp3-run" + std::to_string(run);
        std::filesystem::remove_all(config.output_dir);
        {
            DirectorySink sink(config.output_dir);
            const auto result = run_experiment(config, sink);
            sink.write_manifest(config, result);
        }
        csv[run] = slurp(config.output_dir + "/metrics.csv");
        std::printf("  exp3 run %d: %zu bytes of metrics\n", run + 1, csv[run].size());
        std::fflush(stdout);
    }
    const bool same = !csv[0].empty() && csv[0] == csv[1];
    return {same, same ? "metrics.csv byte-identical across two exp3 runs" : "metrics.csv differs between runs"};
}

// ---- 5 to 10: desk-scale trends ----

const MetricsRecord& at_iteration(const std::vector<MetricsRecord>& records, std::size_t iteration) {
    for (const auto& r : records) {
        if (r.iteration == iteration) return r;
    }
    throw Error(ErrorKind::InvalidArgument, "no record at iteration " + std::to_string(iteration));
}

/// Per-client records averaged over the benign clients.
MetricsRecord client_mean(const std::vector<std::vector<MetricsRecord>>& per_client, std::size_t iteration) {
    MetricsRecord m;
    for (const auto& records : per_client) {
        const auto& r = at_iteration(records, iteration);
        m.main_task += r.main_task / per_client.size();
        m.backdoor_train += r.backdoor_train / per_client.size();
        m.backdoor_validation += r.backdoor_validation / per_client.size();
        m.meta_test += r.meta_test / per_client.size();
    }
    m.iteration = iteration;
    return m;
}

struct SeedOutcome {
    std::uint64_t seed = 0;
    double pretrain_secs = 0;
    std::size_t pretrain_rounds = 0;
    MetricsRecord before, after, persisted;
    MetricsRecord ft_start, ft_end;          // supervised, 10x steps
    MetricsRecord matching03, matching06;    // at the last matching iteration
    MetricsRecord supervised_baseline;       // supervised at the meta-testing step count
};

std::vector<std::vector<MetricsRecord>> per_client(const ExperimentConfig& config, const World& world,
                                                  const ParamVector& model) {
    std::vector<std::vector<MetricsRecord>> out;
    for (ClientId id : world.benign_ids) out.push_back(evaluate_client(config, world, model, id, 1).records);
    return out;
}

SeedOutcome run_seed(std::uint64_t seed, std::size_t threads) {
    auto with_seed = [&](const char* name) {
        auto c = builtin_experiment(name);
        c.seed = seed;
        c.threads = threads;
        return c;
    };
    const auto exp1 = with_seed("exp1a");
    const auto exp2 = with_seed("exp2");
    const auto exp3 = with_seed("exp3");
    const auto d06 = with_seed("appA1-d06");
    // Every flow shares the world, the pre-trained model and the attack round;
    // they differ only in what follows.
    const auto world = build_world(exp1);
    LogSink quiet({});
    SeedOutcome out;
    out.seed = seed;

    const auto t0 = Clock::now();
    const auto pre = pretrain(exp1, *world, quiet);
    out.pretrain_secs = seconds_since(t0);
    out.pretrain_rounds = pre.rounds;
    const std::size_t steps = exp1.fine_tune.steps;
    out.before = at_iteration(evaluate_global(exp1, *world, pre.model, 0).records, steps);

    auto model = attack_round(exp1, *world, pre.model, pre.rounds, quiet);
    const ParamVector attacked = model;
    out.after = at_iteration(evaluate_global(exp1, *world, model, 1).records, steps);
    for (std::size_t k = 1; k <= exp1.continued_rounds; ++k) {
        FederationConfig f = exp1.federation;
        f.attack_round.reset();
        ParameterServer server(f, model, pre.rounds + k);
        std::vector<const Client*> clients;
        for (const auto& c : world->clients) clients.push_back(c.get());
        run_round(server, clients, derive_seed(exp1.seed, "federation"), threads == 0 ? 1 : threads);
        model = server.model();
    }
    out.persisted = at_iteration(evaluate_global(exp1, *world, model, 1 + exp1.continued_rounds).records, steps);

    const auto ft = per_client(exp2, *world, attacked);
    out.ft_start = client_mean(ft, steps);
    out.ft_end = client_mean(ft, exp2.fine_tune.steps);
    out.supervised_baseline = out.ft_start;
    out.matching03 = client_mean(per_client(exp3, *world, attacked), exp3.fine_tune.steps);
    out.matching06 = client_mean(per_client(d06, *world, attacked), d06.fine_tune.steps);
    return out;
}

void print_seed(const SeedOutcome& s) {
    auto line = [](const char* tag, const MetricsRecord& r) {
        std::printf("    %-22s main %.3f  bd_train %.3f  bd_val %.3f  meta %.3f\n", tag, r.main_task, r.backdoor_train,
                    r.backdoor_validation, r.meta_test);
    };
    std::printf("  seed %llu: pre-training %zu rounds in %.0fs\n", static_cast<unsigned long long>(s.seed),
                s.pretrain_rounds, s.pretrain_secs);
    line("pre-trained", s.before);
    line("after attack", s.after);
    line("after 20 rounds", s.persisted);
    line("supervised it 50", s.ft_start);
    line("supervised it 500", s.ft_end);
    line("matching 0.3 it 50", s.matching03);
    line("matching 0.6 it 50", s.matching06);
    std::fflush(stdout);
}

std::string seed_tally(const std::vector<bool>& v) {
    return std::to_string(std::count(v.begin(), v.end(), true)) + "/" + std::to_string(v.size()) + " seeds";
}

bool majority(const std::vector<bool>& v) {
    return 2 * static_cast<std::size_t>(std::count(v.begin(), v.end(), true)) > v.size();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::vector<int> selected;
    std::size_t seeds = 5;
    std::size_t threads = 0;
    std::string scratch = (std::filesystem::temp_directory_path() / "fedmeta-acceptance").string();
    app.add_option("--criteria", selected, "Criteria to run (default: all)")->delimiter(',');
    app.add_option("--seeds", seeds, "Seeds for the trend criteria");
    app.add_option("--threads", threads, "Worker threads (0: all cores)");
    app.add_option("--scratch", scratch, "Directory for run artifacts");
    CLI11_PARSE(app, argc, argv);
    if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const std::set<int> want(selected.begin(), selected.end());
    std::filesystem::create_directories(scratch);

    bool all_pass = true;
    auto run = [&](int criterion, auto&& fn) {
        if (!want.count(criterion)) return;
        const auto t0 = Clock::now();
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        all_pass = all_pass && v.pass;
        report(criterion, v, seconds_since(t0));
    };

    run(1, gradient_suite);
    run(2, protocol_algebra);
    run(3, attention_invariants);
    run(4, [&] { return determinism(scratch, threads); });

    if (std::any_of(want.begin(), want.end(), [](int c) { return c >= 5; })) {
        const auto t0 = Clock::now();
        std::vector<SeedOutcome> outcomes;
        for (std::uint64_t s = 1; s <= seeds; ++s) {
            outcomes.push_back(run_seed(s, threads));
            print_seed(outcomes.back());
        }
        const double secs = seconds_since(t0);

        std::vector<bool> c5, c6, c7, c8, c9, c10;
        double worst_pretrain = 0;
        for (const auto& o : outcomes) {
            worst_pretrain = std::max(worst_pretrain, o.pretrain_secs);
            c5.push_back(o.before.meta_test >= 0.85);
            c6.push_back(o.after.backdoor_validation >= 0.50 && o.before.meta_test - o.after.meta_test <= 0.05);
            c7.push_back(o.persisted.backdoor_validation >= 0.40);
            c8.push_back(o.ft_start.backdoor_validation - o.ft_end.backdoor_validation <= 0.15);
            c9.push_back(o.matching03.backdoor_validation <= 0.30 &&
                         o.matching03.main_task >= o.supervised_baseline.main_task - 0.12);
            c10.push_back(o.matching06.backdoor_validation > o.matching03.backdoor_validation);
        }
        auto mean = [&](auto&& get) {
            double s = 0;
            for (const auto& o : outcomes) s += get(o);
            return s / outcomes.size();
        };
        // Shared runs: the time is reported once, against criterion 5.
        auto verdict = [&](int c, bool pass, std::string detail) {
            if (!want.count(c)) return;
            all_pass = all_pass && pass;
            report(c, {pass, std::move(detail)}, c == 5 ? secs : 0.0);
        };
        verdict(5, majority(c5) && std::all_of(c5.begin(), c5.end(), [](bool b) { return b; }),
                "meta_test mean " + fmt("%.3f", mean([](auto& o) { return o.before.meta_test; })) + " >= 0.85 on " +
                    seed_tally(c5) + "; longest pre-training " + fmt("%.0fs", worst_pretrain));
        verdict(6, majority(c6),
                "bd_val mean " + fmt("%.3f", mean([](auto& o) { return o.after.backdoor_validation; })) +
                    ", meta_test drop mean " +
                    fmt("%.3f", mean([](auto& o) { return o.before.meta_test - o.after.meta_test; })) + "; " +
                    seed_tally(c6));
        verdict(7, majority(c7),
                "bd_val after 20 rounds mean " +
                    fmt("%.3f", mean([](auto& o) { return o.persisted.backdoor_validation; })) + " >= 0.40 on " +
                    seed_tally(c7));
        verdict(8, majority(c8),
                "bd_val drop from it 50 to it 500 mean " +
                    fmt("%.3f", mean([](auto& o) { return o.ft_start.backdoor_validation - o.ft_end.backdoor_validation; })) +
                    " <= 0.15 on " + seed_tally(c8));
        verdict(9, majority(c9),
                "matching bd_val mean " + fmt("%.3f", mean([](auto& o) { return o.matching03.backdoor_validation; })) +
                    ", main " + fmt("%.3f", mean([](auto& o) { return o.matching03.main_task; })) + " vs supervised " +
                    fmt("%.3f", mean([](auto& o) { return o.supervised_baseline.main_task; })) + "; " + seed_tally(c9));
        const std::size_t retained = static_cast<std::size_t>(std::count(c10.begin(), c10.end(), true));
        // At least 3 of every 5 seeds.
        verdict(10, majority(c9) && 5 * retained >= 3 * c10.size(),
                "bd_val at mix 0.6 above mix 0.3 on " + std::to_string(retained) + "/" + std::to_string(c10.size()) +
                    " seeds (means " + fmt("%.3f", mean([](auto& o) { return o.matching06.backdoor_validation; })) +
                    " vs " + fmt("%.3f", mean([](auto& o) { return o.matching03.backdoor_validation; })) + ")");
    }
    return all_pass ? 0 : 1;
}
