#include "fedmeta/federation.hpp"

#include <algorithm>

#include "json.hpp"

#include "fedmeta/error.hpp"
#include "fedmeta/parallel.hpp"
#include "fedmeta/rng.hpp"

namespace fedmeta {

double FederationConfig::weight(ClientId id) const {
    if (weights.empty()) return 1.0 / static_cast<double>(quorum);
    require(id >= 1 && id <= weights.size(), ErrorKind::InvalidArgument,
            "no aggregation weight for client " + std::to_string(id));
    return weights[id - 1];
}

void FederationConfig::validate() const {
    require(users > 0, ErrorKind::Config, "federation.users must be positive");
    require(quorum > 0 && quorum <= per_round && per_round <= users, ErrorKind::Config,
            "federation.quorum (" + std::to_string(quorum) + ") <= federation.per_round (" +
                std::to_string(per_round) + ") <= federation.users (" + std::to_string(users) + ") must hold");
    require(weights.empty() || weights.size() == users, ErrorKind::Config,
            "federation.weights needs one entry per user");
    for (double w : weights) require(w > 0.0, ErrorKind::Config, "federation.weights must be positive");
    if (attacker) {
        require(*attacker >= 1 && *attacker <= users, ErrorKind::Config, "federation.attacker is not a valid client id");
        require(per_round < users, ErrorKind::Config,
                "federation.per_round must be below federation.users so the attacker can sit out benign rounds");
    }
}

ParamVector compute_delta(const ParamVector& local, const ParamVector& global) { return local - global; }

std::vector<ClientId> select_clients(const FederationConfig& config, std::size_t round, std::uint64_t seed) {
    config.validate();
    const bool attack = config.attacker && config.attack_round == round;
    std::vector<ClientId> candidates;
    for (ClientId id = 1; id <= config.users; ++id) {
        if (config.attacker && id == *config.attacker) continue;
        candidates.push_back(id);
    }
    Rng rng(derive_seed(seed, "select", {round}));
    rng.shuffle(candidates.begin(), candidates.end());
    const std::size_t benign = attack ? config.per_round - 1 : config.per_round;
    std::vector<ClientId> out(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(benign));
    if (attack) out.push_back(*config.attacker);
    std::sort(out.begin(), out.end());
    return out;
}

ParamVector aggregate(const ParamVector& global, std::span<const ClientUpdate> arrivals,
                      const FederationConfig& config) {
    require(arrivals.size() >= config.quorum, ErrorKind::QuorumNotMet,
            "received " + std::to_string(arrivals.size()) + " updates, quorum is " + std::to_string(config.quorum));
    std::vector<const ClientUpdate*> applied;
    for (std::size_t i = 0; i < config.quorum; ++i) {
        global.check_compatible(arrivals[i].delta);
        applied.push_back(&arrivals[i]);
    }
    std::sort(applied.begin(), applied.end(), [](auto* a, auto* b) { return a->client < b->client; });
    for (std::size_t i = 1; i < applied.size(); ++i) {
        require(applied[i]->client != applied[i - 1]->client, ErrorKind::InvalidArgument,
                "client " + std::to_string(applied[i]->client) + " sent two updates");
    }
    std::vector<double> weights;
    for (auto* u : applied) weights.push_back(config.weight(u->client));

    ParamVector next = global;
    auto out = next.values();
    for (std::size_t k = 0; k < out.size(); ++k) {
        double acc = static_cast<double>(global[k]);
        for (std::size_t i = 0; i < applied.size(); ++i) acc += weights[i] * static_cast<double>(applied[i]->delta[k]);
        out[k] = static_cast<float>(acc);
    }
    require(next.all_finite(), ErrorKind::NonFinite, "aggregation produced non-finite parameters");
    return next;
}

std::string RoundLog::to_json() const {
    nlohmann::ordered_json j;
    if (!phase.empty()) j["phase"] = phase;
    j["round"] = round;
    j["selected"] = selected;
    j["arrivals"] = arrivals;
    j["applied"] = applied;
    j["checkpoint"] = checkpoint;
    j["metrics"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : metrics) j["metrics"][k] = v;
    return j.dump();
}

ParameterServer::ParameterServer(FederationConfig config, ParamVector initial, std::size_t first_round)
    : config_(std::move(config)), model_(std::move(initial)), round_(first_round) {
    config_.validate();
}

Message ParameterServer::open_round(std::vector<ClientId> selected) {
    require(!open_, ErrorKind::InvalidArgument, "round " + std::to_string(round_) + " is already open");
    open_ = true;
    selected_ = std::move(selected);
    arrivals_.clear();
    accepted_.clear();
    return Broadcast{round_, std::make_shared<const ParamVector>(model_)};
}

Message ParameterServer::receive(const Message& message) {
    require(open_, ErrorKind::InvalidArgument, "no round is open");
    const auto* update = std::get_if<Update>(&message);
    require(update != nullptr, ErrorKind::InvalidArgument, "server only accepts Update messages");
    const ClientUpdate& u = update->update;
    require(u.round == round_, ErrorKind::InvalidArgument,
            "update for round " + std::to_string(u.round) + " arrived in round " + std::to_string(round_));
    require(std::find(selected_.begin(), selected_.end(), u.client) != selected_.end(), ErrorKind::InvalidArgument,
            "client " + std::to_string(u.client) + " was not selected this round");
    require(std::find(arrivals_.begin(), arrivals_.end(), u.client) == arrivals_.end(), ErrorKind::InvalidArgument,
            "client " + std::to_string(u.client) + " already sent an update");
    model_.check_compatible(u.delta);
    arrivals_.push_back(u.client);
    const bool applied = accepted_.size() < config_.quorum;
    if (applied) accepted_.push_back(u);
    return Ack{u.client, round_, applied};
}

RoundLog ParameterServer::close_round() {
    require(open_, ErrorKind::InvalidArgument, "no round is open");
    model_ = aggregate(model_, accepted_, config_);
    RoundLog log;
    log.round = round_;
    log.selected = selected_;
    log.arrivals = arrivals_;
    for (const auto& u : accepted_) log.applied.push_back(u.client);
    std::sort(log.applied.begin(), log.applied.end());
    open_ = false;
    ++round_;
    return log;
}

RoundLog run_round(ParameterServer& server, std::span<const Client* const> clients, std::uint64_t seed,
                   std::size_t threads) {
    const std::size_t round = server.round();
    const auto selected = select_clients(server.config(), round, seed);
    const auto broadcast = std::get<Broadcast>(server.open_round(selected));

    std::vector<const Client*> workers;
    for (ClientId id : selected) {
        auto it = std::find_if(clients.begin(), clients.end(), [&](const Client* c) { return c->id() == id; });
        require(it != clients.end(), ErrorKind::InvalidArgument, "no client with id " + std::to_string(id));
        workers.push_back(*it);
    }
    std::vector<ParamVector> deltas(workers.size());
    parallel_for(workers.size(), threads, [&](std::size_t i) {
        deltas[i] = workers[i]->local_update(*broadcast.model, round,
                                             derive_seed(seed, "client", {workers[i]->id(), round}));
    });

    std::vector<std::size_t> order(workers.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, "arrival", {round}));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t i : order) {
        server.receive(Update{ClientUpdate{workers[i]->id(), round, std::move(deltas[i])}});
    }
    return server.close_round();
}

}  // namespace fedmeta
