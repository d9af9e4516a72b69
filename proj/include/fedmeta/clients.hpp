#pragma once

#include <vector>

#include "fedmeta/attack.hpp"
#include "fedmeta/federation.hpp"
#include "fedmeta/reptile.hpp"

namespace fedmeta {

/// Runs local Reptile over its own class shard and returns theta_i - theta_G.
class BenignClient final : public Client {
public:
    BenignClient(ClientId id, const Learner& learner, const Dataset& dataset, std::vector<ClassView> shard,
                 ReptileConfig config);

    ClientId id() const override { return id_; }
    ParamVector local_update(const ParamVector& global, std::size_t round, std::uint64_t seed) const override;
    const std::vector<ClassView>& shard() const { return shard_; }

private:
    ClientId id_;
    const Learner& learner_;
    const Dataset& dataset_;
    std::vector<ClassView> shard_;
    ReptileConfig config_;
};

/// Trains on poisoned episodes and returns the boosted delta.
class AttackerClient final : public Client {
public:
    AttackerClient(ClientId id, const Learner& learner, const Dataset& dataset, std::vector<ClassView> shard,
                   const PoisonedData& data, AttackConfig attack, ReptileConfig config);

    ClientId id() const override { return id_; }
    ParamVector local_update(const ParamVector& global, std::size_t round, std::uint64_t seed) const override;

private:
    ClientId id_;
    const Learner& learner_;
    const Dataset& dataset_;
    std::vector<ClassView> shard_;
    const PoisonedData& data_;
    AttackConfig attack_;
    ReptileConfig config_;
};

}  // namespace fedmeta
