#include "fedmeta/reptile.hpp"

#include <algorithm>

#include "fedmeta/loss.hpp"
#include "fedmeta/parallel.hpp"

namespace fedmeta {

ClassifierLearner::ClassifierLearner(NetworkSpec spec) : spec_(spec) {
    spec_.validate();
    require(spec_.head == HeadKind::Classifier, ErrorKind::InvalidArgument,
            "ClassifierLearner needs a classifier head");
    layout_ = spec_.make_layout();
}

double ClassifierLearner::loss_and_gradient(const ParamVector& params, const Tensor<float>& batch,
                                            std::span<const std::size_t> labels, ParamVector& grad) const {
    auto fwd = forward(params, spec_, batch, Mode::Train);
    const auto targets = one_hot<float>(labels, spec_.num_classes);
    auto loss = softmax_cross_entropy(fwd.output, targets);
    grad = backward(params, spec_, fwd.cache, loss.grad);
    return loss.loss;
}

std::vector<std::size_t> ClassifierLearner::predict(const ParamVector& params, const Tensor<float>& reference,
                                                    const Tensor<float>& inputs) const {
    const auto stats = forward(params, spec_, reference, Mode::Train).stats;
    const auto out = forward(params, spec_, inputs, Mode::Eval, &stats).output;
    std::vector<std::size_t> preds(out.dim(0));
    for (std::size_t i = 0; i < preds.size(); ++i) preds[i] = argmax(out.row(i));
    return preds;
}

std::size_t InnerSchedule::steps_for(std::size_t support_size) const {
    if (unit == StepUnit::Steps) return count;
    const std::size_t per_epoch = (support_size + batch_size - 1) / batch_size;
    return count * per_epoch;
}

void InnerSchedule::validate() const {
    require(batch_size > 0, ErrorKind::InvalidArgument, "inner batch size must be positive");
    optimizer.validate();
}

void ReptileConfig::validate() const {
    inner.validate();
    require(meta_batch > 0, ErrorKind::InvalidArgument, "meta-batch size must be positive");
    require(episodes % meta_batch == 0, ErrorKind::InvalidArgument,
            "episodes per round (" + std::to_string(episodes) + ") must be a multiple of the meta-batch size (" +
                std::to_string(meta_batch) + ")");
    require(outer_lr > 0.0 && outer_lr <= 1.0, ErrorKind::InvalidArgument, "outer learning rate must lie in (0, 1]");
    require(shots > 0 && ways > 1, ErrorKind::InvalidArgument, "episodes need shots > 0 and ways > 1");
    require(inner.batch_size <= ways * shots, ErrorKind::InvalidArgument,
            "inner batch size exceeds the number of support examples");
}

void FineTuneConfig::validate() const {
    require(batch_size > 0, ErrorKind::InvalidArgument, "fine-tune batch size must be positive");
    require(record_every > 0, ErrorKind::InvalidArgument, "record_every must be positive");
    optimizer.validate();
}

BatchCursor::BatchCursor(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : order_(n), batch_size_(batch_size), pos_(n), rng_(seed) {
    require(n > 0 && batch_size > 0, ErrorKind::InvalidArgument, "batch cursor needs data and a batch size");
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
}

std::vector<std::size_t> BatchCursor::next() {
    if (pos_ >= order_.size()) {
        rng_.shuffle(order_.begin(), order_.end());
        pos_ = 0;
    }
    const std::size_t end = std::min(order_.size(), pos_ + batch_size_);
    std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                   order_.begin() + static_cast<std::ptrdiff_t>(end));
    pos_ = end;
    return batch;
}

ParamVector inner_train(const Learner& learner, const ParamVector& start, const Episode& episode,
                        const InnerSchedule& schedule, std::uint64_t seed) {
    require(!episode.support.empty(), ErrorKind::InsufficientData, "episode support set is empty");
    ParamVector params = start;
    const std::size_t steps = schedule.steps_for(episode.support.size());
    if (steps == 0) return params;
    OptimizerState opt(schedule.optimizer);
    BatchCursor cursor(episode.support.size(), schedule.batch_size, seed);
    ParamVector grad;
    for (std::size_t s = 0; s < steps; ++s) {
        const auto idx = cursor.next();
        const auto batch = examples_to_batch<float>(episode.support, idx);
        std::vector<std::size_t> labels;
        labels.reserve(idx.size());
        for (auto i : idx) labels.push_back(episode.support[i].slot);
        learner.loss_and_gradient(params, batch, labels, grad);
        optimizer_step(opt, params, grad);
    }
    return params;
}

ParamVector reptile_outer_update(const ParamVector& theta, std::span<const ParamVector> episode_models,
                                 double outer_lr) {
    require(!episode_models.empty(), ErrorKind::InvalidArgument, "outer update needs at least one episode model");
    for (const auto& m : episode_models) theta.check_compatible(m);
    const std::size_t B = episode_models.size();
    ParamVector out = theta;
    auto values = out.values();
    std::vector<float> column(B);
    for (std::size_t i = 0; i < values.size(); ++i) {
        for (std::size_t j = 0; j < B; ++j) column[j] = episode_models[j][i];
        std::sort(column.begin(), column.end());
        double sum = 0.0;
        for (float v : column) sum += v;
        values[i] = static_cast<float>((1.0 - outer_lr) * static_cast<double>(theta[i]) +
                                       outer_lr * sum / static_cast<double>(B));
    }
    require(out.all_finite(), ErrorKind::NonFinite, "outer update produced non-finite parameters");
    return out;
}

ParamVector local_meta_train(const Learner& learner, const ParamVector& start, const EpisodeSampler& sampler,
                             const ReptileConfig& config, std::uint64_t seed, std::size_t threads) {
    config.validate();
    ParamVector theta = start;
    const std::size_t updates = config.episodes / config.meta_batch;
    std::vector<ParamVector> models(config.meta_batch);
    for (std::size_t u = 0; u < updates; ++u) {
        parallel_for(config.meta_batch, threads, [&](std::size_t j) {
            const Episode episode = sampler(derive_seed(seed, "episode", {u, j}));
            models[j] = inner_train(learner, theta, episode, config.inner, derive_seed(seed, "inner", {u, j}));
        });
        theta = reptile_outer_update(theta, models, config.outer_lr);
    }
    return theta;
}

std::vector<std::size_t> recorded_iterations(std::size_t steps, std::size_t record_every) {
    std::vector<std::size_t> out;
    for (std::size_t it = 0; it <= steps; it += record_every) out.push_back(it);
    if (out.back() != steps) out.push_back(steps);
    return out;
}

FineTuneTrace fine_tune_and_eval(const Learner& learner, const ParamVector& theta, const Episode& episode,
                                 const FineTuneConfig& config, std::uint64_t seed, std::span<const Probe> probes) {
    config.validate();
    require(!episode.support.empty(), ErrorKind::InsufficientData, "episode support set is empty");
    require(!episode.query.empty(), ErrorKind::InsufficientData, "fine-tune evaluation needs a query set");

    const auto support = examples_to_batch<float>(episode.support);
    const auto support_labels = slot_labels(episode.support);

    // All evaluation inputs go through one batch per record.
    std::vector<Probe> all;
    all.push_back({examples_to_batch<float>(episode.query), slot_labels(episode.query)});
    for (const auto& p : probes) all.push_back(p);
    Tensor<float> eval_inputs;
    std::vector<std::size_t> probe_offsets;
    for (const auto& p : all) {
        probe_offsets.push_back(eval_inputs.data.size() / std::max<std::size_t>(1, support.row_size()));
        if (eval_inputs.shape.empty()) {
            eval_inputs = p.inputs;
        } else {
            eval_inputs.shape[0] += p.inputs.dim(0);
            eval_inputs.data.insert(eval_inputs.data.end(), p.inputs.data.begin(), p.inputs.data.end());
        }
    }

    FineTuneTrace trace;
    const auto records = recorded_iterations(config.steps, config.record_every);
    auto record = [&](const ParamVector& params, std::size_t iteration) {
        const auto preds = learner.predict(params, support, eval_inputs);
        std::vector<std::vector<std::size_t>> per_probe;
        for (std::size_t p = 0; p < all.size(); ++p) {
            const auto begin = preds.begin() + static_cast<std::ptrdiff_t>(probe_offsets[p]);
            per_probe.emplace_back(begin, begin + static_cast<std::ptrdiff_t>(all[p].expected.size()));
        }
        std::size_t correct = 0;
        for (std::size_t i = 0; i < per_probe[0].size(); ++i) correct += (per_probe[0][i] == all[0].expected[i]);
        trace.iterations.push_back(iteration);
        trace.query_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(per_probe[0].size()));
        trace.predictions.push_back(std::move(per_probe));
    };

    ParamVector params = theta;
    OptimizerState opt(config.optimizer);
    BatchCursor cursor(episode.support.size(), config.batch_size, seed);
    ParamVector grad;
    std::size_t next_record = 0;
    if (records[next_record] == 0) record(params, 0), ++next_record;
    for (std::size_t it = 1; it <= config.steps; ++it) {
        const auto idx = cursor.next();
        const auto batch = examples_to_batch<float>(episode.support, idx);
        std::vector<std::size_t> labels;
        for (auto i : idx) labels.push_back(support_labels[i]);
        learner.loss_and_gradient(params, batch, labels, grad);
        optimizer_step(opt, params, grad);
        if (next_record < records.size() && records[next_record] == it) {
            record(params, it);
            ++next_record;
        }
    }
    trace.adapted = std::move(params);
    return trace;
}

}  // namespace fedmeta
