#include "sentinel/nn/train.hpp"

#include <cmath>
#include <cstdio>

#include "sentinel/error.hpp"

namespace sentinel::nn {

namespace {

// PRNG stream ids under the training seed.
constexpr std::uint64_t kInitStream = 0;  // used by init_model
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kMaskStream = 2;
constexpr std::uint64_t kEvalMaskStream = 3;
constexpr std::uint64_t kDropoutBase = 1ull << 32;

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

void emit(std::vector<LogRow>& log, const TrainOptions& opts, LogRow row) {
  if (opts.sink) opts.sink(row);
  log.push_back(std::move(row));
}

struct HeldOutScore {
  double loss = 0;
  double macro_accuracy = 0;
};

HeldOutScore score(const Model& model, LabeledSet set, std::size_t threads) {
  const std::size_t n = set.seqs.size();
  std::vector<std::size_t> pred(n);
  std::vector<double> loss(n);
  const auto verdicts = predict_all(model, set.seqs, threads);
  for (std::size_t i = 0; i < n; ++i) {
    pred[i] = index_of(verdicts[i].cls);
    loss[i] = -std::log(verdicts[i].probs[index_of(set.labels[i])]);
  }
  std::array<std::size_t, kClassCount> support{};
  std::array<std::size_t, kClassCount> hits{};
  double loss_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t t = index_of(set.labels[i]);
    support[t]++;
    if (pred[i] == t) hits[t]++;
    loss_sum += loss[i];
  }
  double recall_sum = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    if (support[c] == 0) continue;
    recall_sum += static_cast<double>(hits[c]) / static_cast<double>(support[c]);
    ++present;
  }
  return {loss_sum / static_cast<double>(n), present ? recall_sum / static_cast<double>(present) : 0.0};
}

void check_set(LabeledSet set, const char* what) {
  if (set.seqs.size() != set.labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": one label per sequence required");
  }
}

}  // namespace

OptState init_opt(const ParamBundle& params, const AdamConfig& cfg) {
  if (!(cfg.lr > 0) || !(cfg.beta1 >= 0 && cfg.beta1 < 1) || !(cfg.beta2 >= 0 && cfg.beta2 < 1) ||
      !(cfg.eps > 0)) {
    throw Error(ErrorCode::InvalidConfig, "adam: need lr > 0, 0 <= beta < 1, eps > 0");
  }
  return OptState{cfg, 0, params.zeros_like(), params.zeros_like()};
}

void adam_step(ParamBundle& params, const ParamBundle& grads, OptState& state, const std::vector<bool>& frozen) {
  if (grads.names() != params.names() || state.m.names() != params.names() || frozen.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "adam: gradients, moments and params disagree");
  }
  ++state.step;
  const auto& c = state.cfg;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (frozen[i]) continue;
    const Mat& g = grads.value(i);
    Mat& m = state.m.value(i);
    Mat& v = state.v.value(i);
    if (g.rows() != m.rows() || g.cols() != m.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "adam: gradient shape for " + params.name(i));
    }
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    params.value(i).array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
  }
}

std::string log_to_csv(std::span<const LogRow> rows) {
  std::string out = "epoch,split,loss,accuracy\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.17g,%.17g\n", r.epoch, r.split.c_str(), r.loss, r.accuracy);
    out += buf;
  }
  return out;
}

TrainResult pretrain(std::span<const TokenSeq> corpus, const ModelConfig& config, const Schedule& schedule,
                     std::uint64_t seed, const TrainOptions& opts) {
  validate(config);
  if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "pretraining corpus is empty");
  if (schedule.batch_size == 0) throw Error(ErrorCode::InvalidConfig, "schedule.batch_size must be positive");
  static_assert(kInitStream == 0);
  TrainResult res{init_model(config, seed), {}};
  Model& model = res.model;
  const std::vector<bool> frozen(model.params.size(), false);
  OptState opt = init_opt(model.params, schedule.adam);

  Rng eval_rng = Rng::stream(seed, kEvalMaskStream);
  const std::size_t n_eval = std::min(corpus.size(), std::max<std::size_t>(1, schedule.eval_limit));
  const MaskPlan eval_plan = make_mask_plan(Batch::from(corpus.first(n_eval)), config.vocab_size, eval_rng);
  auto eval_row = [&](std::size_t epoch) {
    const LossValue lv = mlm_loss(model, eval_plan);
    emit(res.log, opts,
         {epoch, "eval", lv.loss, lv.count ? static_cast<double>(lv.correct) / static_cast<double>(lv.count) : 0.0});
  };
  eval_row(0);

  Rng shuffle_rng = Rng::stream(seed, kShuffleStream);
  Rng mask_rng = Rng::stream(seed, kMaskStream);
  std::vector<std::size_t> order = iota(corpus.size());
  for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_sum = 0;
    std::size_t count = 0, correct = 0;
    for (std::size_t first = 0; first < order.size(); first += schedule.batch_size) {
      const std::size_t n = std::min(schedule.batch_size, order.size() - first);
      const Batch batch = Batch::from(corpus, std::span(order).subspan(first, n));
      const MaskPlan plan = make_mask_plan(batch, config.vocab_size, mask_rng);
      const Gradients g = backward_mlm(model, plan, frozen, opts.threads, mix_stream(seed, kDropoutBase + opt.step));
      if (g.value.count == 0) continue;
      adam_step(model.params, g.grads, opt, frozen);
      loss_sum += g.value.loss * static_cast<double>(g.value.count);
      count += g.value.count;
      correct += g.value.correct;
    }
    emit(res.log, opts,
         {epoch, "train", count ? loss_sum / static_cast<double>(count) : 0.0,
          count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0});
    eval_row(epoch);
    if (opts.on_epoch) opts.on_epoch(epoch, model);
  }
  return res;
}

TrainResult finetune(const Model& start, LabeledSet train, LabeledSet held_out,
                     std::span<const std::string> freeze_plan, const Schedule& schedule, std::uint64_t seed,
                     const TrainOptions& opts) {
  check_shapes(start);
  check_set(train, "train");
  check_set(held_out, "held-out");
  if (train.seqs.empty()) throw Error(ErrorCode::EmptyCorpus, "fine-tuning set is empty");
  if (schedule.batch_size == 0) throw Error(ErrorCode::InvalidConfig, "schedule.batch_size must be positive");
  TrainResult res{start, {}};
  Model& model = res.model;
  const std::vector<bool> frozen = resolve_freeze(model.params, freeze_plan);
  OptState opt = init_opt(model.params, schedule.adam);

  Rng shuffle_rng = Rng::stream(seed, kShuffleStream);
  std::vector<std::size_t> order = iota(train.seqs.size());
  std::vector<ThreatClass> batch_labels;
  for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_sum = 0;
    std::size_t count = 0, correct = 0;
    for (std::size_t first = 0; first < order.size(); first += schedule.batch_size) {
      const std::size_t n = std::min(schedule.batch_size, order.size() - first);
      const auto idx = std::span(order).subspan(first, n);
      const Batch batch = Batch::from(train.seqs, idx);
      batch_labels.clear();
      for (std::size_t i : idx) batch_labels.push_back(train.labels[i]);
      const Gradients g = backward_cls(model, batch, batch_labels, frozen, opts.threads,
                                       mix_stream(seed, kDropoutBase + opt.step));
      adam_step(model.params, g.grads, opt, frozen);
      loss_sum += g.value.loss * static_cast<double>(g.value.count);
      count += g.value.count;
      correct += g.value.correct;
    }
    emit(res.log, opts,
         {epoch, "train", loss_sum / static_cast<double>(count), static_cast<double>(correct) / static_cast<double>(count)});
    if (!held_out.seqs.empty()) {
      const HeldOutScore s = score(model, held_out, opts.threads);
      emit(res.log, opts, {epoch, "test", s.loss, s.macro_accuracy});
    }
    if (opts.on_epoch) opts.on_epoch(epoch, model);
    if (!held_out.seqs.empty() && schedule.target_accuracy > 0 &&
        res.log.back().accuracy >= schedule.target_accuracy) {
      break;
    }
  }
  return res;
}

std::vector<std::string> default_freeze_plan() { return {"embeddings", "layer0"}; }

std::vector<ThreatClass> require_labels(const TokenDataset& ds) {
  std::vector<ThreatClass> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds.labels[i]) throw Error(ErrorCode::BadDataset, "record " + std::to_string(i) + " has no label");
    out.push_back(*ds.labels[i]);
  }
  return out;
}

}  // namespace sentinel::nn
