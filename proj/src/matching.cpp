#include "fedmeta/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedmeta/error.hpp"
#include "fedmeta/loss.hpp"
#include "fedmeta/rng.hpp"
#include "fedmeta/similarity.hpp"

namespace fedmeta {

LayoutPtr make_head_layout(std::size_t dim, std::size_t classes) {
    require(dim > 0 && classes > 0, ErrorKind::InvalidArgument, "matching head needs a dimension and classes");
    return std::make_shared<Layout>(std::vector<Segment>{{kGateSegment, {dim}}, {kScaleSegment, {classes}}});
}

MatchingHead::MatchingHead(std::size_t dim, std::size_t classes) : params_(make_head_layout(dim, classes), 1.0f) {}

MatchingHead::MatchingHead(ParamVector params) : params_(make_head_layout(1, 1)) { set_params(std::move(params)); }

void MatchingHead::set_params(ParamVector params) {
    const auto& segs = params.layout().segments();
    require(segs.size() == 2 && segs[0].name == kGateSegment && segs[1].name == kScaleSegment &&
                segs[0].shape.size() == 1 && segs[1].shape.size() == 1,
            ErrorKind::LayoutMismatch, "matching head parameters need head.gate [D] and head.scale [N] segments");
    params_ = std::move(params);
    clamp_gates();
}

void MatchingHead::clamp_gates() {
    for (auto& g : params_.segment(0)) g = std::clamp(g, 0.0f, 1.0f);
}

void MatchingHead::set_support(Tensor<float> embeddings, std::vector<std::size_t> labels) {
    require(embeddings.rank() == 2 && embeddings.dim(1) == dim(), ErrorKind::ShapeMismatch,
            "support embeddings must be (count, " + std::to_string(dim()) + ")");
    require(embeddings.dim(0) == labels.size(), ErrorKind::ShapeMismatch, "one label per support embedding");
    for (auto l : labels) {
        require(l < classes(), ErrorKind::InvalidArgument, "support label " + std::to_string(l) + " out of range");
    }
    support_ = std::move(embeddings);
    labels_ = std::move(labels);
}

void NoisyInitConfig::validate() const {
    require(mix >= 0.0 && mix <= 1.0, ErrorKind::InvalidArgument,
            "mixing coefficient " + std::to_string(mix) + " must lie in [0, 1]");
}

ParamVector noisy_reinit(const ParamVector& theta, const NoisyInitConfig& config, const NetworkSpec& spec) {
    config.validate();
    const ParamVector fresh = glorot_init(spec, config.seed);
    const ParamVector base = same_layout(theta.layout_ptr(), fresh.layout_ptr()) ? theta : extract(theta, fresh.layout_ptr());
    ParamVector out = fresh;
    auto v = out.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = static_cast<float>(config.mix * static_cast<double>(base[i]) +
                                  (1.0 - config.mix) * static_cast<double>(fresh[i]));
    }
    return out;
}

std::vector<double> attention(const MatchingHead& head, std::span<const float> query) {
    const std::size_t n = head.support_labels().size();
    require(n > 0, ErrorKind::InvalidArgument, "attention needs a nonempty support set");
    require(query.size() == head.dim(), ErrorKind::ShapeMismatch, "query embedding has the wrong dimension");
    std::vector<float> gated(query.size());
    const auto gates = head.gates();
    for (std::size_t j = 0; j < gated.size(); ++j) gated[j] = gates[j] * query[j];
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = cosine_similarity<float>(gated, head.support_embeddings().row(i)) *
               static_cast<double>(head.scales()[head.support_labels()[i]]);
    }
    const double m = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (auto& v : s) z += (v = std::exp(v - m));
    for (auto& v : s) v /= z;
    return s;
}

MatchingPrediction predict(const MatchingHead& head, std::span<const float> query) {
    const auto a = attention(head, query);
    MatchingPrediction p;
    p.scores.assign(head.classes(), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) p.scores[head.support_labels()[i]] += a[i];
    p.label = argmax<double>(p.scores);
    return p;
}

template <class T>
MatchingLoss<T> matching_loss(const BasicParamVector<T>& trunk, const NetworkSpec& spec,
                              const BasicParamVector<T>& head, const Tensor<T>& support,
                              std::span<const std::size_t> support_labels, const Tensor<T>& query,
                              std::span<const std::size_t> query_labels) {
    require(spec.head == HeadKind::Embedding, ErrorKind::InvalidArgument, "matching needs an embedding network");
    const std::size_t ns = support.dim(0), nq = query.dim(0);
    require(ns == support_labels.size() && nq == query_labels.size() && nq > 0, ErrorKind::ShapeMismatch,
            "matching loss needs one label per image and at least one query");
    const std::size_t D = spec.embedding_dim();
    const auto gates = head.segment(0);
    const auto scales = head.segment(1);
    require(gates.size() == D, ErrorKind::LayoutMismatch, "gate count does not match the embedding dimension");

    Tensor<T> batch = support;
    batch.shape[0] = ns + nq;
    batch.data.insert(batch.data.end(), query.data.begin(), query.data.end());
    auto fwd = forward(trunk, spec, batch, Mode::Train);
    const Tensor<T>& E = fwd.output;

    MatchingLoss<T> out;
    out.head_grad = BasicParamVector<T>(head.layout_ptr());
    auto dgates = out.head_grad.segment(0);
    auto dscales = out.head_grad.segment(1);
    Tensor<T> dE({ns + nq, D});

    std::vector<double> sup_norm(ns);
    for (std::size_t i = 0; i < ns; ++i) {
        double nn = 0.0;
        for (T v : E.row(i)) nn += static_cast<double>(v) * static_cast<double>(v);
        sup_norm[i] = std::sqrt(nn);
    }

    std::vector<double> g(D), dg(D), c(ns), s(ns), w(ns);
    const double inv_q = 1.0 / static_cast<double>(nq);
    double total = 0.0;
    for (std::size_t q = 0; q < nq; ++q) {
        const auto eq = E.row(ns + q);
        const std::size_t t = query_labels[q];
        require(t < scales.size(), ErrorKind::InvalidArgument, "query label out of range");
        double gn = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            g[j] = static_cast<double>(gates[j]) * static_cast<double>(eq[j]);
            gn += g[j] * g[j];
        }
        gn = std::sqrt(gn);
        for (std::size_t i = 0; i < ns; ++i) {
            const auto ei = E.row(i);
            double dot = 0.0;
            for (std::size_t j = 0; j < D; ++j) dot += g[j] * static_cast<double>(ei[j]);
            c[i] = (gn == 0.0 || sup_norm[i] == 0.0) ? 0.0 : dot / (gn * sup_norm[i]);
            s[i] = c[i] * static_cast<double>(scales[support_labels[i]]);
        }
        const double m = *std::max_element(s.begin(), s.end());
        double z = 0.0, zt = 0.0;
        for (std::size_t i = 0; i < ns; ++i) {
            w[i] = std::exp(s[i] - m);
            z += w[i];
            if (support_labels[i] == t) zt += w[i];
        }
        require(zt > 0.0, ErrorKind::InsufficientData, "query class has no support examples");
        total += std::log(z) - std::log(zt);

        std::fill(dg.begin(), dg.end(), 0.0);
        for (std::size_t i = 0; i < ns; ++i) {
            const double ds = inv_q * (w[i] / z - (support_labels[i] == t ? w[i] / zt : 0.0));
            const std::size_t yi = support_labels[i];
            dscales[yi] += static_cast<T>(ds * c[i]);
            if (gn == 0.0 || sup_norm[i] == 0.0) continue;
            const double dc = ds * static_cast<double>(scales[yi]);
            const auto ei = E.row(i);
            auto dei = dE.row(i);
            const double inv = 1.0 / (gn * sup_norm[i]);
            const double cg = c[i] / (gn * gn), ce = c[i] / (sup_norm[i] * sup_norm[i]);
            for (std::size_t j = 0; j < D; ++j) {
                const double e = static_cast<double>(ei[j]);
                dg[j] += dc * (e * inv - cg * g[j]);
                dei[j] += static_cast<T>(dc * (g[j] * inv - ce * e));
            }
        }
        auto deq = dE.row(ns + q);
        for (std::size_t j = 0; j < D; ++j) {
            deq[j] += static_cast<T>(dg[j] * static_cast<double>(gates[j]));
            dgates[j] += static_cast<T>(dg[j] * static_cast<double>(eq[j]));
        }
    }
    out.loss = total * inv_q;
    out.trunk_grad = backward(trunk, spec, fwd.cache, dE);
    return out;
}

template MatchingLoss<float> matching_loss(const BasicParamVector<float>&, const NetworkSpec&,
                                           const BasicParamVector<float>&, const Tensor<float>&,
                                           std::span<const std::size_t>, const Tensor<float>&,
                                           std::span<const std::size_t>);
template MatchingLoss<double> matching_loss(const BasicParamVector<double>&, const NetworkSpec&,
                                            const BasicParamVector<double>&, const Tensor<double>&,
                                            std::span<const std::size_t>, const Tensor<double>&,
                                            std::span<const std::size_t>);

void MatchingConfig::validate() const {
    init.validate();
    require(head_steps <= steps, ErrorKind::InvalidArgument, "stage-1 iterations exceed the fine-tune budget");
    require(record_every > 0, ErrorKind::InvalidArgument, "record_every must be positive");
    optimizer.validate();
}

void load_support(MatchingHead& head, const ParamVector& trunk, const NetworkSpec& spec,
                  std::span<const EpisodeExample> support) {
    const auto images = examples_to_batch<float>(support);
    head.set_support(forward(trunk, spec, images, Mode::Train).output, slot_labels(support));
}

std::vector<std::size_t> predict_batch(const MatchingHead& head, const ParamVector& trunk, const NetworkSpec& spec,
                                       const Tensor<float>& support_images, const Tensor<float>& inputs) {
    const auto stats = forward(trunk, spec, support_images, Mode::Train).stats;
    const auto emb = forward(trunk, spec, inputs, Mode::Eval, &stats).output;
    std::vector<std::size_t> out(emb.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = predict(head, emb.row(i)).label;
    return out;
}

MatchingResult staged_fine_tune(const ParamVector& theta, const NetworkSpec& spec, const Episode& episode,
                                const MatchingConfig& config, std::uint64_t seed, std::span<const Probe> probes) {
    config.validate();
    const NetworkSpec embed = spec.head == HeadKind::Embedding ? spec : spec.as_embedding();
    const std::size_t ways = episode.ways();
    require(!episode.query.empty(), ErrorKind::InsufficientData, "fine-tune evaluation needs a query set");

    std::vector<std::vector<std::size_t>> by_class(ways);
    for (std::size_t i = 0; i < episode.support.size(); ++i) by_class.at(episode.support[i].slot).push_back(i);
    for (std::size_t k = 0; k < ways; ++k) {
        require(by_class[k].size() >= 2, ErrorKind::InsufficientData,
                "matching fine-tune needs at least 2 support examples per class; slot " + std::to_string(k) +
                    " has " + std::to_string(by_class[k].size()));
    }

    MatchingResult result{{}, MatchingHead(embed.embedding_dim(), ways)};
    ParamVector trunk = noisy_reinit(theta, config.init, embed);
    MatchingHead& head = result.head;

    const auto support_images = examples_to_batch<float>(episode.support);
    const auto support_labels = slot_labels(episode.support);

    std::vector<Probe> all;
    all.push_back({examples_to_batch<float>(episode.query), slot_labels(episode.query)});
    for (const auto& p : probes) all.push_back(p);
    Tensor<float> eval_inputs = all[0].inputs;
    std::vector<std::size_t> offsets{0};
    for (std::size_t p = 1; p < all.size(); ++p) {
        offsets.push_back(eval_inputs.dim(0));
        eval_inputs.shape[0] += all[p].inputs.dim(0);
        eval_inputs.data.insert(eval_inputs.data.end(), all[p].inputs.data.begin(), all[p].inputs.data.end());
    }

    FineTuneTrace& trace = result.trace;
    auto record = [&](std::size_t iteration) {
        head.set_support(forward(trunk, embed, support_images, Mode::Train).output, support_labels);
        const auto preds = predict_batch(head, trunk, embed, support_images, eval_inputs);
        std::vector<std::vector<std::size_t>> per_probe;
        for (std::size_t p = 0; p < all.size(); ++p) {
            const auto begin = preds.begin() + static_cast<std::ptrdiff_t>(offsets[p]);
            per_probe.emplace_back(begin, begin + static_cast<std::ptrdiff_t>(all[p].expected.size()));
        }
        std::size_t correct = 0;
        for (std::size_t i = 0; i < per_probe[0].size(); ++i) correct += per_probe[0][i] == all[0].expected[i];
        trace.iterations.push_back(iteration);
        trace.query_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(per_probe[0].size()));
        trace.predictions.push_back(std::move(per_probe));
    };

    const auto records = recorded_iterations(config.steps, config.record_every);
    std::size_t next_record = 0;
    if (records[0] == 0) record(0), ++next_record;

    OptimizerState head_opt(config.optimizer), trunk_opt(config.optimizer);
    Rng rng(seed);
    for (std::size_t it = 1; it <= config.steps; ++it) {
        std::vector<std::size_t> sup_idx, qry_idx;
        for (std::size_t k = 0; k < ways; ++k) {
            const std::size_t held = rng.below(by_class[k].size());
            for (std::size_t j = 0; j < by_class[k].size(); ++j) {
                (j == held ? qry_idx : sup_idx).push_back(by_class[k][j]);
            }
        }
        std::vector<std::size_t> sup_labels, qry_labels;
        for (auto i : sup_idx) sup_labels.push_back(support_labels[i]);
        for (auto i : qry_idx) qry_labels.push_back(support_labels[i]);
        auto loss = matching_loss(trunk, embed, head.params(), examples_to_batch<float>(episode.support, sup_idx),
                                  sup_labels, examples_to_batch<float>(episode.support, qry_idx), qry_labels);
        ParamVector hp = head.params();
        optimizer_step(head_opt, hp, loss.head_grad);
        head.set_params(std::move(hp));
        if (it > config.head_steps) optimizer_step(trunk_opt, trunk, loss.trunk_grad);
        if (next_record < records.size() && records[next_record] == it) {
            record(it);
            ++next_record;
        }
    }
    head.set_support(forward(trunk, embed, support_images, Mode::Train).output, support_labels);
    trace.adapted = std::move(trunk);
    return result;
}

}  // namespace fedmeta
