// Copyright 2026 The flowcast Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "flowcast/training/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numeric>
#include <random>
#include <thread>

namespace flowcast
{

double lr_at(Index epoch, const TrainConfig & cfg)
{
  // Integer comparisons keep the plateau edges exact for any epoch count.
  if (epoch * 100 >= 95 * cfg.epochs) return cfg.lr / 100.0;
  if (epoch * 100 >= 85 * cfg.epochs) return cfg.lr / 10.0;
  return cfg.lr;
}

template <typename S>
void adam_step(ParameterSet<S> & params, const ParameterSet<S> & grads, AdamState<S> & st, double lr, const AdamHyper & h)
{
  ++st.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(st.step));
  for (const auto & [name, g] : grads) {
    auto & p = params.at(name);
    auto [mit, m_new] = st.m.try_emplace(name, g.shape());
    auto [vit, v_new] = st.v.try_emplace(name, g.shape());
    auto & m = mit->second.flat();
    auto & v = vit->second.flat();
    m = S(h.beta1) * m + S(1.0 - h.beta1) * g.flat();
    v = S(h.beta2) * v + S(1.0 - h.beta2) * g.flat().cwiseAbs2();
    const S step = static_cast<S>(lr / c1);
    const S root = static_cast<S>(1.0 / std::sqrt(c2));
    p.flat().array() -= step * m.array() / ((v.array().sqrt() * root) + S(h.eps));
  }
}

template <typename S>
double clip_global_norm(ParameterSet<S> & grads, double max_norm)
{
  double total = 0.0;
  for (const auto & [name, g] : grads) total += static_cast<double>(g.flat().squaredNorm());
  const double norm = std::sqrt(total);
  if (norm > max_norm && norm > 0.0) {
    const S factor = static_cast<S>(max_norm / norm);
    for (auto & [name, g] : grads) g.flat() *= factor;
  }
  return norm;
}

bool in_validation(const std::string & scenario_id, std::uint64_t seed, double fraction)
{
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>((seed >> (8 * i)) & 0xFF));
  for (char c : scenario_id) mix(static_cast<unsigned char>(c));
  return static_cast<double>(h % 10000) < fraction * 10000.0;
}

template <typename S>
LossBreakdown<S> model_loss(
  const BoundParameters<S> & params, const ModelConfig & cfg, const NormalizedScene & scene, const LossWeights & w)
{
  const auto tensors = to_model_tensors<S>(scene, cfg.agent_capacity, cfg.map_capacity);
  const ModelOutput<S> out = forward(params, cfg, tensors);
  const Tensor<S> gt = target_attributes<S>(scene.scene);
  const Tensor<S> valid = target_validity<S>(scene.scene);
  Tensor<S> history({kHistoryFrames, 2});
  for (Index t = 0; t < kHistoryFrames; ++t) {
    history[t * 2] = gt[t * kAttributes];
    history[t * 2 + 1] = gt[t * kAttributes + 1];
  }
  Var<S> reg = gmm_loss_log(out.trajectories, out.score.log_scores, gt, valid);
  const Index positive = positive_mode(out.trajectories.value(), gt, kHistoryFrames);
  Var<S> score = margin_loss(out.score.scores, positive, static_cast<S>(w.margin));
  Var<S> tf = temporal_flow_loss(out.h_pred, history);
  return total_loss(reg, score, tf, w);
}

template <typename S>
SampleLoss<S> sample_loss(
  const ParameterSet<S> & params, const ModelConfig & cfg, const NormalizedScene & scene, const LossWeights & w,
  bool with_grads)
{
  Tape<S> tape;
  const BoundParameters<S> bound(tape, params, with_grads);
  const LossBreakdown<S> loss = model_loss(bound, cfg, scene, w);
  SampleLoss<S> r;
  r.total = static_cast<double>(loss.total.value()[0]);
  r.regression = static_cast<double>(loss.regression.value()[0]);
  r.score = static_cast<double>(loss.score.value()[0]);
  r.temporal_flow = static_cast<double>(loss.temporal_flow.value()[0]);
  if (!std::isfinite(r.total)) throw NumericalError("loss is not finite for scenario " + scene.scene.scenario_id);
  if (with_grads) {
    tape.backward(loss.total);
    for (const auto & [name, v] : bound.vars()) r.grads.emplace(name, tape.gradient(v));
  }
  return r;
}

namespace
{

/// Run fn(i) for i in [0, n) on up to `threads` workers.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn)
{
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto & e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

NormalizedScene prepare(const Scenario & s, const TrainConfig & cfg, Index epoch, std::size_t position)
{
  if (!cfg.augment) return filter_radius(normalize(s));
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(position)};
  std::mt19937_64 rng(seq);
  return filter_radius(apply_augmentation(s, sample_augmentation(cfg.augmentation, rng, s)));
}

}  // namespace

std::vector<PredictionRecord> predict_corpus(
  const ParameterSet<float> & params, const ModelConfig & cfg, const std::vector<Scenario> & scenarios, int threads)
{
  std::vector<PredictionRecord> out(scenarios.size());
  parallel_for(scenarios.size(), threads, [&](std::size_t i) { out[i] = predict(params, cfg, scenarios[i]); });
  return out;
}

EvalResult evaluate_model(
  const ParameterSet<float> & params, const ModelConfig & cfg, const std::vector<Scenario> & scenarios, int threads)
{
  return evaluate_corpus(predict_corpus(params, cfg, scenarios, threads), scenarios);
}

TrainResult train(
  const std::vector<Scenario> & corpus, const std::vector<std::size_t> & sampling, const ModelConfig & model_cfg,
  const TrainConfig & cfg)
{
  if (cfg.batch_size < 1 || cfg.epochs < 1) throw ShapeError("training needs batch_size >= 1 and epochs >= 1");
  TrainResult result;
  std::vector<std::size_t> train_list;
  std::vector<Scenario> val_set;
  {
    std::vector<std::uint8_t> seen(corpus.size(), 0);
    for (std::size_t i : sampling) {
      if (i >= corpus.size()) throw ShapeError("sampling index out of range");
      const bool val = in_validation(corpus[i].scenario_id, cfg.seed, cfg.val_fraction);
      if (!val) train_list.push_back(i);
      if (seen[i]) continue;
      seen[i] = 1;
      (val ? result.val_indices : result.train_indices).push_back(i);
      if (val) val_set.push_back(corpus[i]);
    }
  }
  if (train_list.empty()) throw ShapeError("training split is empty");

  ParameterSet<float> params = init_parameters<float>(model_cfg);
  AdamState<float> adam;
  Index step = 0;
  bool done = false;
  for (Index epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    std::vector<std::size_t> order = train_list;
    std::mt19937_64 shuffle_rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord er;
    er.epoch = epoch;
    er.lr = lr;
    Index batches = 0;
    for (std::size_t start = 0; start < order.size() && !done; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
      std::vector<SampleLoss<float>> items(n);
      try {
        parallel_for(n, cfg.threads, [&](std::size_t b) {
          const NormalizedScene scene = prepare(corpus[order[start + b]], cfg, epoch, start + b);
          items[b] = sample_loss(params, model_cfg, scene, cfg.weights);
        });
      } catch (const NumericalError & e) {
        throw NumericalError(
          std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch starting at " + std::to_string(start) +
          ", seed " + std::to_string(cfg.seed) + ")");
      }
      // Fixed summation order keeps the update independent of the thread count.
      ParameterSet<float> grads = std::move(items[0].grads);
      StepRecord sr;
      sr.step = ++step;
      sr.epoch = epoch;
      sr.lr = lr;
      for (std::size_t b = 0; b < n; ++b) {
        if (b > 0) {
          for (auto & [name, g] : grads) g.flat() += items[b].grads.at(name).flat();
        }
        sr.total += items[b].total;
        sr.regression += items[b].regression;
        sr.score += items[b].score;
        sr.temporal_flow += items[b].temporal_flow;
      }
      const double inv = 1.0 / static_cast<double>(n);
      for (auto & [name, g] : grads) g.flat() *= static_cast<float>(inv);
      sr.total *= inv;
      sr.regression *= inv;
      sr.score *= inv;
      sr.temporal_flow *= inv;
      sr.grad_norm = clip_global_norm(grads, cfg.grad_clip);
      if (!std::isfinite(sr.grad_norm)) {
        throw NumericalError(
          "non-finite gradient at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + ", seed " +
          std::to_string(cfg.seed) + ")");
      }
      adam_step(params, grads, adam, lr);
      result.steps.push_back(sr);
      er.total += sr.total;
      er.regression += sr.regression;
      er.score += sr.score;
      er.temporal_flow += sr.temporal_flow;
      ++batches;
      if (cfg.max_steps > 0 && step >= cfg.max_steps) done = true;
    }
    if (batches > 0) {
      er.total /= static_cast<double>(batches);
      er.regression /= static_cast<double>(batches);
      er.score /= static_cast<double>(batches);
      er.temporal_flow /= static_cast<double>(batches);
    }
    if (!val_set.empty()) {
      er.val_brier_min_fde = evaluate_model(params, model_cfg, val_set, cfg.threads).mean->brier_min_fde;
    }
    result.epochs.push_back(er);
  }
  result.checkpoint = {model_cfg, std::move(params)};
  return result;
}

TrainResult train(const std::vector<Scenario> & corpus, const ModelConfig & model_cfg, const TrainConfig & cfg)
{
  std::vector<std::size_t> all(corpus.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return train(corpus, all, model_cfg, cfg);
}

std::string history_csv(const std::vector<EpochRecord> & epochs)
{
  std::string out = "epoch,lr,loss_total,loss_reg,loss_score,loss_tf,val_brier_min_fde\n";
  for (const auto & e : epochs) {
    fmt::format_to(
      std::back_inserter(out), "{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", e.epoch, e.lr, e.total,
      e.regression, e.score, e.temporal_flow, e.val_brier_min_fde);
  }
  return out;
}

std::string steps_csv(const std::vector<StepRecord> & steps)
{
  std::string out = "step,epoch,lr,loss_total,loss_reg,loss_score,loss_tf,grad_norm\n";
  for (const auto & s : steps) {
    fmt::format_to(
      std::back_inserter(out), "{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", s.step, s.epoch, s.lr,
      s.total, s.regression, s.score, s.temporal_flow, s.grad_norm);
  }
  return out;
}

std::vector<std::size_t> select_hard(const std::vector<std::size_t> & candidates, const std::vector<double> & scores, double q)
{
  if (candidates.size() != scores.size()) throw ShapeError("select_hard: one score per candidate");
  if (!(q >= 0.0 && q < 1.0)) throw ShapeError("select_hard: q must lie in [0, 1)");
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return candidates[a] < candidates[b];
  });
  const auto n = static_cast<std::size_t>(std::floor(q * static_cast<double>(candidates.size())));
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(candidates[order[i]]);
  return out;
}

std::vector<std::size_t> oversample(std::size_t n, const std::vector<std::size_t> & mined, Index r)
{
  if (r < 1) throw ShapeError("oversample factor must be at least 1");
  std::vector<std::size_t> out(n);
  std::iota(out.begin(), out.end(), std::size_t{0});
  for (Index copy = 1; copy < r; ++copy) out.insert(out.end(), mined.begin(), mined.end());
  return out;
}

HardMiningResult hard_mine(
  const std::vector<Scenario> & corpus, const ModelConfig & model_cfg, const TrainConfig & proxy_cfg,
  const HardMiningConfig & mining)
{
  HardMiningResult r;
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(proxy_cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_subset = static_cast<std::size_t>(std::llround(mining.subset_fraction * static_cast<double>(corpus.size())));
  if (n_subset < 8) throw ShapeError("hard mining needs at least 8 proxy training scenarios");
  if (n_subset >= corpus.size()) throw ShapeError("hard mining leaves no scenarios to score");
  r.subset.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_subset));
  r.complement.assign(order.begin() + static_cast<std::ptrdiff_t>(n_subset), order.end());
  std::sort(r.subset.begin(), r.subset.end());
  std::sort(r.complement.begin(), r.complement.end());

  TrainConfig cfg = proxy_cfg;
  cfg.val_fraction = 0.0;
  r.proxy = train(corpus, r.subset, model_cfg, cfg).checkpoint;

  std::vector<Scenario> scored;
  for (std::size_t i : r.complement) scored.push_back(corpus[i]);
  const auto predictions = predict_corpus(r.proxy.parameters, model_cfg, scored, proxy_cfg.threads);
  for (std::size_t i = 0; i < scored.size(); ++i) {
    const auto gt = target_future(normalize(scored[i]).scene);
    r.complement_scores.push_back(evaluate_scenario(predictions[i], gt).brier_min_fde);
  }
  r.mined = select_hard(r.complement, r.complement_scores, mining.q);
  r.sampling = oversample(corpus.size(), r.mined, mining.r);
  return r;
}

#define FLOWCAST_INSTANTIATE_TRAINING(S)                                                                  \
  template void adam_step(ParameterSet<S> &, const ParameterSet<S> &, AdamState<S> &, double, const AdamHyper &); \
  template double clip_global_norm(ParameterSet<S> &, double);                                            \
  template LossBreakdown<S> model_loss(                                                                    \
    const BoundParameters<S> &, const ModelConfig &, const NormalizedScene &, const LossWeights &);         \
  template SampleLoss<S> sample_loss(                                                                     \
    const ParameterSet<S> &, const ModelConfig &, const NormalizedScene &, const LossWeights &, bool);

FLOWCAST_INSTANTIATE_TRAINING(float)
FLOWCAST_INSTANTIATE_TRAINING(double)

// Extended precision backs the finite-difference side of the full-model gradient check.
template LossBreakdown<long double> model_loss(
  const BoundParameters<long double> &, const ModelConfig &, const NormalizedScene &, const LossWeights &);

#undef FLOWCAST_INSTANTIATE_TRAINING

}  // namespace flowcast
