#include "fedmeta/clients.hpp"

#include "fedmeta/episode.hpp"

namespace fedmeta {

BenignClient::BenignClient(ClientId id, const Learner& learner, const Dataset& dataset, std::vector<ClassView> shard,
                           ReptileConfig config)
    : id_(id), learner_(learner), dataset_(dataset), shard_(std::move(shard)), config_(config) {
    config_.validate();
}

ParamVector BenignClient::local_update(const ParamVector& global, std::size_t, std::uint64_t seed) const {
    EpisodeSampler sampler = [&](std::uint64_t s) {
        return sample_episode(dataset_, shard_, config_.ways, config_.shots, s);
    };
    return compute_delta(local_meta_train(learner_, global, sampler, config_, seed), global);
}

AttackerClient::AttackerClient(ClientId id, const Learner& learner, const Dataset& dataset,
                               std::vector<ClassView> shard, const PoisonedData& data, AttackConfig attack,
                               ReptileConfig config)
    : id_(id),
      learner_(learner),
      dataset_(dataset),
      shard_(std::move(shard)),
      data_(data),
      attack_(std::move(attack)),
      config_(config) {
    attack_.validate();
    config_.validate();
}

ParamVector AttackerClient::local_update(const ParamVector& global, std::size_t, std::uint64_t seed) const {
    return attacker_local_train(learner_, global, dataset_, shard_, data_, attack_, config_, seed);
}

}  // namespace fedmeta
