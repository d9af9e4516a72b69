#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedmeta/param_vector.hpp"

namespace fedmeta {

/// Client ids run from 1 to `users`.
using ClientId = std::uint32_t;

struct FederationConfig {
    std::size_t users = 4;      // M
    std::size_t per_round = 3;  // M_r
    std::size_t quorum = 3;     // M_min
    /// alpha_i per client id (index id - 1). Empty means 1 / M_min for everyone.
    std::vector<double> weights;
    std::size_t rounds = 1;
    std::optional<ClientId> attacker;
    /// The only round the attacker is selected in; unset keeps it out.
    std::optional<std::size_t> attack_round;

    double weight(ClientId id) const;
    void validate() const;
};

struct ClientUpdate {
    ClientId client = 0;
    std::size_t round = 0;
    ParamVector delta;
};

/// theta_local - theta_global.
ParamVector compute_delta(const ParamVector& local, const ParamVector& global);

/// M_r distinct ids in ascending order. The attacker, if configured, is
/// selected in the attack round and never otherwise.
std::vector<ClientId> select_clients(const FederationConfig& config, std::size_t round, std::uint64_t seed);

/// theta + sum_i alpha_i delta_i over the first M_min arrivals. The sum runs
/// in client-id order with 64-bit accumulation, so any arrival order of the
/// same applied set gives the same result. Throws QuorumNotMet on fewer than
/// M_min arrivals.
ParamVector aggregate(const ParamVector& global, std::span<const ClientUpdate> arrivals,
                      const FederationConfig& config);

/// A federation participant. Implementations hold only their own data and
/// are stateless between rounds.
class Client {
public:
    virtual ~Client() = default;
    virtual ClientId id() const = 0;
    /// Local work on the broadcast model; returns the (possibly boosted) delta.
    virtual ParamVector local_update(const ParamVector& global, std::size_t round, std::uint64_t seed) const = 0;
};

// In-memory wire protocol between server and clients.
struct Broadcast {
    std::size_t round = 0;
    std::shared_ptr<const ParamVector> model;
};
struct Update {
    ClientUpdate update;
};
struct Ack {
    ClientId client = 0;
    std::size_t round = 0;
    bool applied = false;
};
using Message = std::variant<Broadcast, Update, Ack>;

struct RoundLog {
    std::string phase;  // free-form label, e.g. "pretrain"
    std::size_t round = 0;
    std::vector<ClientId> selected;
    std::vector<ClientId> arrivals;  // arrival order
    std::vector<ClientId> applied;   // ascending
    std::string checkpoint;
    std::map<std::string, double> metrics;

    /// One JSON object, no trailing newline.
    std::string to_json() const;
};

/// Collects updates for one round at a time and applies the first M_min.
class ParameterServer {
public:
    ParameterServer(FederationConfig config, ParamVector initial, std::size_t first_round = 0);

    const ParamVector& model() const { return model_; }
    std::size_t round() const { return round_; }
    const FederationConfig& config() const { return config_; }

    Message open_round(std::vector<ClientId> selected);
    /// Accepts an Update message; returns an Ack telling whether it will be applied.
    Message receive(const Message& message);
    /// Aggregates the accepted updates, advances the round and returns its log.
    RoundLog close_round();

private:
    FederationConfig config_;
    ParamVector model_;
    std::size_t round_ = 0;
    bool open_ = false;
    std::vector<ClientId> selected_;
    std::vector<ClientId> arrivals_;
    std::vector<ClientUpdate> accepted_;
};

/// One full round: select, broadcast, run the selected clients (concurrently
/// when threads > 1), deliver their updates in a seeded arrival order and
/// aggregate the first M_min.
RoundLog run_round(ParameterServer& server, std::span<const Client* const> clients, std::uint64_t seed,
                   std::size_t threads = 1);

}  // namespace fedmeta
