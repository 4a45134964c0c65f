// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "eihi/checkpoint.hpp"
#include "eihi/error.hpp"
#include "eihi/rng.hpp"
#include "eihi/sampler.hpp"

namespace eihi {

using nlohmann::json;

namespace {

// Stream tags under a run seed.
constexpr std::uint64_t kTagEpoch = 2;
constexpr std::uint64_t kTagProbe = 3;
constexpr std::uint64_t kTagHead = 4;

json loss_to_json(const LossConfig& c) {
  return {{"temperature", c.temperature}, {"lambda", c.lambda}, {"covariance", c.covariance},
          {"negatives", c.negatives == NegativeCovariance::Concat ? "concat" : "mean_per_m"}};
}

LossConfig loss_from_json(const json& j) {
  LossConfig c;
  c.temperature = j.value("temperature", c.temperature);
  c.lambda = j.value("lambda", c.lambda);
  c.covariance = j.value("covariance", c.covariance);
  const std::string neg = j.value("negatives", std::string("concat"));
  if (neg == "concat") c.negatives = NegativeCovariance::Concat;
  else if (neg == "mean_per_m") c.negatives = NegativeCovariance::MeanPerM;
  else throw ConfigError("loss.negatives must be 'concat' or 'mean_per_m'");
  c.validate();
  return c;
}

json vicreg_to_json(const VicregConfig& c) {
  return {{"invariance_weight", c.invariance_weight}, {"variance_weight", c.variance_weight},
          {"covariance_weight", c.covariance_weight}, {"gamma", c.gamma}, {"epsilon", c.epsilon}};
}

VicregConfig vicreg_from_json(const json& j) {
  VicregConfig c;
  c.invariance_weight = j.value("invariance_weight", c.invariance_weight);
  c.variance_weight = j.value("variance_weight", c.variance_weight);
  c.covariance_weight = j.value("covariance_weight", c.covariance_weight);
  c.gamma = j.value("gamma", c.gamma);
  c.epsilon = j.value("epsilon", c.epsilon);
  return c;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.dim(1);
  std::vector<double> v(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.data() + rows[i] * d, d, v.data() + i * d);
  return Tensor({rows.size(), d}, std::move(v));
}

Tensor gather_images(std::span<const SamplePtr> samples) {
  const Shape& s = samples.front()->image.shape();
  const std::size_t per = samples.front()->image.size();
  std::vector<double> v(samples.size() * per);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i]->image.shape() != s) throw ShapeError("mixed raster shapes in one batch");
    std::copy_n(samples[i]->image.data(), per, v.data() + i * per);
  }
  return Tensor({samples.size(), s[0], s[1], s[2]}, std::move(v));
}

bool all_finite(std::span<const Tensor> ts) {
  return std::all_of(ts.begin(), ts.end(), [](const Tensor& t) { return t.all_finite(); });
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t c = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j)
    if (logits.at(row, j) > logits.at(row, best)) best = j;
  return best;
}

std::vector<int> labels_of(const SampleSet& samples) {
  std::vector<int> y;
  y.reserve(samples.size());
  for (const auto& s : samples) y.push_back(s->class_label);
  return y;
}

std::size_t class_count(const SampleSet& a, const SampleSet& b) {
  return std::max(count_classes(a), b.empty() ? 0 : count_classes(b));
}

void save_params(const std::filesystem::path& path, const BackboneParams& p) {
  std::filesystem::create_directories(path.parent_path());
  save_backbone(path, p);
}

}  // namespace

// ---------------------------------------------------------------------------
// indicators

std::vector<std::size_t> kept_dimensions(const PruneIndicator& keep) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < keep.size(); ++j)
    if (keep[j]) out.push_back(j);
  return out;
}

Tensor select_kept(const Tensor& features, const PruneIndicator& keep) {
  if (features.rank() != 2) throw ShapeError("select_kept expects an n x d matrix");
  if (keep.size() != features.dim(1))
    throw ContractError("keep_dims has length " + std::to_string(keep.size()) +
                        " but embeddings have " + std::to_string(features.dim(1)) + " dimensions");
  const auto cols = kept_dimensions(keep);
  if (cols.empty()) throw ContractError("keep_dims eliminates every embedding dimension");
  const std::size_t n = features.dim(0), d = features.dim(1);
  std::vector<double> v(n * cols.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) v[i * cols.size() + j] = features[i * d + cols[j]];
  return Tensor({n, cols.size()}, std::move(v));
}

// ---------------------------------------------------------------------------
// configs

void DiscriminatorConfig::validate() const {
  if (epochs < 1) throw ConfigError("discriminator epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("discriminator batch size must be at least 1");
  for (auto h : hidden)
    if (h == 0) throw ConfigError("discriminator hidden widths must be positive");
  optimizer.validate();
}

json DiscriminatorConfig::to_json() const {
  return {{"hidden", hidden}, {"epochs", epochs}, {"batch_size", batch_size},
          {"optimizer", optimizer.to_json()}, {"standardize", standardize}};
}

DiscriminatorConfig DiscriminatorConfig::from_json(const json& j) {
  DiscriminatorConfig c;
  try {
    c.hidden = j.value("hidden", c.hidden);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("optimizer")) c.optimizer = OptimizerConfig::from_json(j.at("optimizer"));
    c.standardize = j.value("standardize", c.standardize);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("discriminator config: ") + e.what());
  }
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 2) throw ConfigError("batch size n must be at least 2");
  if (negatives < 1) throw ConfigError("negatives M must be at least 1");
  if (!(optimizer.learning_rate >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (probe_every < 1) throw ConfigError("probe_every must be at least 1");
  optimizer.validate();
  loss.validate();
  probe.validate();
  discriminator.validate();
}

json TrainConfig::to_json() const {
  json j{{"epochs", epochs},
         {"batch_size", batch_size},
         {"negatives", negatives},
         {"optimizer", optimizer.to_json()},
         {"loss", loss_to_json(loss)},
         {"objective", objective == StageOneObjective::EiHi ? "eihi" : "vicreg"},
         {"vicreg", vicreg_to_json(vicreg)},
         {"seed", seed},
         {"probe_every", probe_every},
         {"checkpoint_every", checkpoint_every},
         {"probe", probe.to_json()},
         {"discriminator", discriminator.to_json()}};
  j["checkpoint_dir"] = checkpoint_dir ? json(checkpoint_dir->string()) : json(nullptr);
  return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.negatives = j.value("negatives", c.negatives);
    if (j.contains("optimizer")) c.optimizer = OptimizerConfig::from_json(j.at("optimizer"));
    if (j.contains("loss")) c.loss = loss_from_json(j.at("loss"));
    const std::string obj = j.value("objective", std::string("eihi"));
    if (obj == "eihi") c.objective = StageOneObjective::EiHi;
    else if (obj == "vicreg") c.objective = StageOneObjective::Vicreg;
    else throw ConfigError("objective must be 'eihi' or 'vicreg'");
    if (j.contains("vicreg")) c.vicreg = vicreg_from_json(j.at("vicreg"));
    c.seed = j.value("seed", c.seed);
    c.probe_every = j.value("probe_every", c.probe_every);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("checkpoint_dir") && !j.at("checkpoint_dir").is_null())
      c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
    if (j.contains("probe")) c.probe = DiscriminatorConfig::from_json(j.at("probe"));
    if (j.contains("discriminator"))
      c.discriminator = DiscriminatorConfig::from_json(j.at("discriminator"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// traces

std::size_t best_epoch_of(std::span<const std::optional<double>> accuracy) {
  std::optional<std::size_t> best;
  for (std::size_t e = 0; e < accuracy.size(); ++e)
    if (accuracy[e] && (!best || *accuracy[e] > *accuracy[*best])) best = e;
  if (best) return *best;
  return accuracy.empty() ? 0 : accuracy.size() - 1;
}

json TrainTrace::to_json() const {
  json acc = json::array();
  for (const auto& a : validation_accuracy) acc.push_back(a ? json(*a) : json(nullptr));
  return {{"loss", loss}, {"validation_accuracy", acc}, {"best_epoch", best_epoch},
          {"seconds", seconds}, {"optimizer_steps", optimizer_steps}};
}

TrainTrace TrainTrace::from_json(const json& j) {
  TrainTrace t;
  try {
    t.loss = j.at("loss").get<std::vector<double>>();
    for (const auto& a : j.at("validation_accuracy"))
      t.validation_accuracy.push_back(a.is_null() ? std::nullopt : std::optional<double>(a.get<double>()));
    t.best_epoch = j.at("best_epoch").get<std::size_t>();
    t.seconds = j.value("seconds", std::vector<double>{});
    t.optimizer_steps = j.value("optimizer_steps", std::size_t{0});
  } catch (const json::exception& e) {
    throw ParseError(std::string("train trace: ") + e.what());
  }
  return t;
}

// ---------------------------------------------------------------------------
// discriminator

Discriminator init_discriminator(std::size_t input_dim, std::size_t num_classes,
                                 std::span<const std::size_t> hidden, std::uint64_t seed) {
  if (input_dim == 0) throw ContractError("discriminator input width must be positive");
  if (num_classes < 2) throw ContractError("discriminator needs at least 2 classes");
  Discriminator disc;
  disc.input_dim = input_dim;
  disc.num_classes = num_classes;
  disc.hidden.assign(hidden.begin(), hidden.end());
  disc.shift = Tensor({input_dim}, 0.0);
  disc.scale = Tensor({input_dim}, 1.0);
  CounterRng rng(CounterRng::derive(seed, 0xd15c));
  std::size_t in = input_dim;
  std::vector<std::size_t> widths = disc.hidden;
  widths.push_back(num_classes);
  for (std::size_t out : widths) {
    const double s = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w({out, in});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-s, s);
    disc.params.push_back(std::move(w));
    disc.params.emplace_back(Shape{out}, 0.0);
    in = out;
  }
  return disc;
}

namespace {

bool identity_transform(const Discriminator& d) {
  for (std::size_t j = 0; j < d.input_dim; ++j)
    if (d.shift[j] != 0.0 || d.scale[j] != 1.0) return false;
  return true;
}

Tensor standardized(const Discriminator& d, const Tensor& x) {
  Tensor out = x;
  const std::size_t n = x.dim(0), k = x.dim(1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = (x[i * k + j] - d.shift[j]) * d.scale[j];
  return out;
}

}  // namespace

Var Discriminator::forward(Tape& tape, std::span<const Var> layer_params, Var features) const {
  if (features.value().rank() != 2 || features.value().dim(1) != input_dim)
    throw ShapeError("discriminator expects n x " + std::to_string(input_dim) + " features, got " +
                     shape_string(features.shape()));
  if (layer_params.size() != params.size())
    throw ContractError("discriminator parameter count mismatch");
  Var x = features;
  if (!identity_transform(*this)) {
    if (features.requires_grad()) {
      // (x - shift) * scale as a fixed affine map, so gradients reach the input.
      Tensor w({input_dim, input_dim}, 0.0), b({input_dim});
      for (std::size_t j = 0; j < input_dim; ++j) {
        w.at(j, j) = scale[j];
        b[j] = -shift[j] * scale[j];
      }
      x = eihi::dense(x, tape.constant(std::move(w)), tape.constant(std::move(b)));
    } else {
      x = tape.constant(standardized(*this, features.value()));
    }
  }
  const std::size_t layers = params.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    x = dense(x, layer_params[2 * l], layer_params[2 * l + 1]);
    if (l + 1 < layers) x = relu(x);
  }
  return x;
}

Tensor Discriminator::logits(const Tensor& features) const {
  Tape tape;
  std::vector<Var> pv;
  for (const auto& p : params) pv.push_back(tape.constant(p));
  return forward(tape, pv, tape.constant(features)).value();
}

std::vector<int> Discriminator::predict(const Tensor& features) const {
  const Tensor l = logits(features);
  std::vector<int> out(l.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(argmax_row(l, i));
  return out;
}

json Discriminator::spec_json() const {
  return {{"kind", "discriminator"}, {"input_dim", input_dim}, {"num_classes", num_classes},
          {"hidden", hidden}};
}

void Discriminator::save(const std::filesystem::path& path) const {
  std::vector<Tensor> all{shift, scale};
  all.insert(all.end(), params.begin(), params.end());
  save_checkpoint(path, spec_json(), all);
}

Discriminator Discriminator::load(const std::filesystem::path& path) {
  const auto ck = load_checkpoint(path);
  if (ck.spec.value("kind", "") != "discriminator")
    throw ParseError(path.string() + ": not a discriminator checkpoint");
  Discriminator d = init_discriminator(ck.spec.at("input_dim").get<std::size_t>(),
                                       ck.spec.at("num_classes").get<std::size_t>(),
                                       ck.spec.at("hidden").get<std::vector<std::size_t>>(), 0);
  if (ck.tensors.size() != 2 + d.params.size())
    throw ParseError(path.string() + ": discriminator tensor count mismatch");
  d.shift = ck.tensors[0];
  d.scale = ck.tensors[1];
  for (std::size_t i = 0; i < d.params.size(); ++i) {
    if (ck.tensors[2 + i].shape() != d.params[i].shape())
      throw ParseError(path.string() + ": discriminator tensor shape mismatch");
    d.params[i] = ck.tensors[2 + i];
  }
  return d;
}

// ---------------------------------------------------------------------------
// embeddings

std::size_t EmbeddingCache::KeyHash::operator()(const Key& k) const noexcept {
  return static_cast<std::size_t>(CounterRng::derive(k.checksum, k.id));
}

std::size_t EmbeddingCache::size() const {
  std::lock_guard lock(mutex_);
  return rows_.size();
}

Tensor EmbeddingCache::embed(const BackboneParams& params, const SampleSet& samples) {
  if (samples.empty()) throw ContractError("embedding an empty sample set");
  const std::uint64_t sum = params.checksum();
  const std::size_t d = params.embedding_dim();
  std::lock_guard lock(mutex_);
  SampleSet missing;
  for (const auto& s : samples)
    if (!rows_.count(Key{sum, s->id})) missing.push_back(s);
  hits_ += samples.size() - missing.size();
  if (!missing.empty()) {
    const Tensor z = embed_all(params, gather_images(missing));
    for (std::size_t i = 0; i < missing.size(); ++i)
      rows_[Key{sum, missing[i]->id}].assign(z.data() + i * d, z.data() + (i + 1) * d);
  }
  std::vector<double> v(samples.size() * d);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& row = rows_.at(Key{sum, samples[i]->id});
    std::copy(row.begin(), row.end(), v.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return Tensor({samples.size(), d}, std::move(v));
}

LabeledFeatures features_of(const BackboneParams& params, const SampleSet& samples,
                            const PruneIndicator* keep, EmbeddingCache* cache) {
  if (samples.empty()) throw ContractError("features of an empty sample set");
  Tensor z = cache ? cache->embed(params, samples) : embed_all(params, gather_images(samples));
  if (keep) z = select_kept(z, *keep);
  return {std::move(z), labels_of(samples)};
}

// ---------------------------------------------------------------------------
// stage two

DiscriminatorResult train_discriminator_on_features(const LabeledFeatures& train,
                                                    const LabeledFeatures& validation,
                                                    std::size_t num_classes,
                                                    const DiscriminatorConfig& config,
                                                    std::uint64_t seed) {
  config.validate();
  if (train.y.empty()) throw ContractError("discriminator train set is empty");
  if (train.x.rank() != 2 || train.x.dim(0) != train.y.size())
    throw ShapeError("discriminator features and labels disagree");
  for (int y : train.y)
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw ContractError("class label " + std::to_string(y) + " out of range");
  const std::size_t n = train.y.size(), d = train.x.dim(1);

  DiscriminatorResult result;
  Discriminator& disc = result.discriminator;
  disc = init_discriminator(d, num_classes, config.hidden, seed);
  if (config.standardize) {
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0, var = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += train.x[i * d + j];
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) var += (train.x[i * d + j] - mean) * (train.x[i * d + j] - mean);
      const double sd = std::sqrt(var / static_cast<double>(n));
      disc.shift[j] = mean;
      disc.scale[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
  }
  const Tensor xs = config.standardize ? standardized(disc, train.x) : train.x;
  const bool has_val = !validation.y.empty();

  Optimizer opt(config.optimizer);
  std::vector<Tensor> best = disc.params;
  std::vector<std::size_t> order(n);
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    CounterRng rng(CounterRng::derive(CounterRng::derive(seed, kTagEpoch), e));
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < n; lo += config.batch_size) {
      const std::size_t hi = std::min(n, lo + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + lo, hi - lo);
      std::vector<int> labels;
      for (auto r : rows) labels.push_back(train.y[r]);
      Tape tape;
      std::vector<Var> pv;
      for (const auto& p : disc.params) pv.push_back(tape.parameter(p));
      // Inputs are pre-standardized, so run the layers directly.
      Var x = tape.constant(gather_rows(xs, rows));
      const std::size_t layers = disc.params.size() / 2;
      for (std::size_t l = 0; l < layers; ++l) {
        x = dense(x, pv[2 * l], pv[2 * l + 1]);
        if (l + 1 < layers) x = relu(x);
      }
      Var loss = softmax_cross_entropy(x, labels);
      tape.backward(loss);
      std::vector<Tensor> grads;
      for (const auto& v : pv) grads.push_back(tape.grad(v));
      if (!all_finite(grads)) throw NumericError("non-finite discriminator gradient");
      opt.step(disc.params, grads);
      loss_sum += loss.value().item();
      ++batches;
    }
    result.trace.loss.push_back(loss_sum / static_cast<double>(batches));
    if (has_val) {
      const double acc = evaluate_features(disc, validation).accuracy;
      const auto prev = best_epoch_of(result.trace.validation_accuracy);
      const bool improved = result.trace.validation_accuracy.empty() ||
                            acc > *result.trace.validation_accuracy[prev];
      result.trace.validation_accuracy.push_back(acc);
      if (improved) best = disc.params;
    } else {
      result.trace.validation_accuracy.push_back(std::nullopt);
    }
    result.trace.seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  result.trace.best_epoch = best_epoch_of(result.trace.validation_accuracy);
  result.trace.optimizer_steps = opt.steps();
  if (has_val) disc.params = best;
  return result;
}

DiscriminatorResult train_discriminator(const BackboneParams& backbone, const SampleSet& train,
                                        const SampleSet& validation, const PruneIndicator* keep,
                                        std::size_t num_classes, const DiscriminatorConfig& config,
                                        std::uint64_t seed, EmbeddingCache* cache) {
  if (keep && keep->size() != backbone.embedding_dim())
    throw ContractError("keep_dims length " + std::to_string(keep->size()) +
                        " differs from embedding dimension " +
                        std::to_string(backbone.embedding_dim()));
  const auto tr = features_of(backbone, train, keep, cache);
  const auto va = validation.empty() ? LabeledFeatures{} : features_of(backbone, validation, keep, cache);
  return train_discriminator_on_features(tr, va, num_classes, config, seed);
}

json EvalResult::to_json() const {
  return {{"accuracy", accuracy}, {"correct", correct}, {"total", total}, {"confusion", confusion}};
}

EvalResult evaluate_features(const Discriminator& discriminator, const LabeledFeatures& data) {
  if (data.y.empty()) throw ContractError("evaluation set is empty");
  const std::size_t C = discriminator.num_classes;
  EvalResult r;
  r.confusion.assign(C, std::vector<std::size_t>(C, 0));
  const auto pred = discriminator.predict(data.x);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int y = data.y[i];
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw ContractError("class label " + std::to_string(y) + " outside the discriminator's range");
    ++r.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(pred[i])];
    r.correct += pred[i] == y;
  }
  r.total = pred.size();
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

EvalResult evaluate(const BackboneParams& backbone, const Discriminator& discriminator,
                    const PruneIndicator* keep, const SampleSet& samples, EmbeddingCache* cache) {
  if (samples.empty()) throw ContractError("evaluation set is empty");
  return evaluate_features(discriminator, features_of(backbone, samples, keep, cache));
}

// ---------------------------------------------------------------------------
// stage one

namespace {

[[noreturn]] void abort_training(const TrainConfig& config, const BackboneParams& last_good,
                                 std::size_t epoch, std::size_t batch, const std::string& why) {
  std::string msg = "non-finite value at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(batch) + " (" + why + ")";
  if (config.checkpoint_dir) {
    const auto path = *config.checkpoint_dir / "last_good.ckpt";
    save_params(path, last_good);
    msg += "; last good parameters saved to " + path.string();
  }
  throw TrainingAborted(msg);
}

double probe_accuracy(const BackboneParams& params, const SampleSet& train,
                      const SampleSet& validation, std::size_t C, const TrainConfig& config) {
  const auto tr = features_of(params, train, nullptr, nullptr);
  const auto va = features_of(params, validation, nullptr, nullptr);
  const auto probe = train_discriminator_on_features(tr, LabeledFeatures{}, C, config.probe,
                                                     CounterRng::derive(config.seed, kTagProbe));
  return evaluate_features(probe.discriminator, va).accuracy;
}

}  // namespace

StageOneResult train_stage_one(const SampleSet& train, const SampleSet& validation,
                               const BackboneSpec& spec, const TrainConfig& config) {
  config.validate();
  const bool vicreg = config.objective == StageOneObjective::Vicreg;
  const std::size_t M = vicreg ? 1 : config.negatives;
  const std::size_t C = class_count(train, validation);
  StageOneResult result;
  result.params = init_backbone(spec, config.seed);
  BackboneParams& params = result.params;
  BackboneParams best = params;
  BackboneParams last_good = params;
  Optimizer opt(config.optimizer);

  for (std::size_t e = 0; e < config.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochIterator epoch(train, config.batch_size, M,
                        CounterRng::derive(CounterRng::derive(config.seed, kTagEpoch), e));
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t k = 0; k < epoch.num_batches(); ++k) {
      const ElementBatch batch = epoch.batch(k);
      const std::size_t n = batch.size();
      if (n < 2) continue;  // covariance needs two rows
      SampleSet rows;
      rows.reserve(n * (M + 2));
      for (const auto& el : batch.elements) rows.push_back(el.original);
      for (const auto& el : batch.elements) rows.push_back(el.positive);
      if (!vicreg)
        for (std::size_t m = 0; m < M; ++m)
          for (const auto& el : batch.elements) rows.push_back(el.negatives[m]);

      Tape tape;
      std::vector<Var> pv;
      for (const auto& t : params.tensors) pv.push_back(tape.parameter(t));
      std::vector<Tensor> grads;
      double loss_value = 0.0;
      try {
        Var z = forward_backbone(spec, pv, tape.constant(gather_images(rows)));
        Var zo = slice_rows(z, 0, n), zp = slice_rows(z, n, 2 * n);
        Var loss;
        if (vicreg) {
          loss = vicreg_loss(zo, zp, config.vicreg);
        } else {
          std::vector<Var> negs;
          for (std::size_t m = 0; m < M; ++m) negs.push_back(slice_rows(z, (2 + m) * n, (3 + m) * n));
          loss = total_loss(zo, zp, negs, config.loss);
        }
        tape.backward(loss);
        loss_value = loss.value().item();
        for (const auto& v : pv) grads.push_back(tape.grad(v));
      } catch (const NumericError& err) {
        abort_training(config, last_good, e, k, err.what());
      }
      if (!all_finite(grads)) abort_training(config, last_good, e, k, "gradient");
      opt.step(params.tensors, grads);
      if (!all_finite(params.tensors)) abort_training(config, last_good, e, k, "parameters");
      loss_sum += loss_value;
      ++steps;
    }
    result.trace.loss.push_back(steps ? loss_sum / static_cast<double>(steps) : 0.0);

    const bool probe_now = (e + 1) % config.probe_every == 0 || e + 1 == config.epochs;
    if (probe_now && !validation.empty()) {
      const double acc = probe_accuracy(params, train, validation, C, config);
      const auto prev = best_epoch_of(result.trace.validation_accuracy);
      const bool improved = std::none_of(result.trace.validation_accuracy.begin(),
                                         result.trace.validation_accuracy.end(),
                                         [](const auto& a) { return a.has_value(); }) ||
                            acc > *result.trace.validation_accuracy[prev];
      result.trace.validation_accuracy.push_back(acc);
      if (improved) best = params;
    } else {
      result.trace.validation_accuracy.push_back(std::nullopt);
    }
    if (config.checkpoint_every && config.checkpoint_dir && (e + 1) % config.checkpoint_every == 0)
      save_params(*config.checkpoint_dir / ("epoch_" + std::to_string(e + 1) + ".ckpt"), params);
    last_good = params;
    result.trace.seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  result.trace.best_epoch = best_epoch_of(result.trace.validation_accuracy);
  result.trace.optimizer_steps = opt.steps();
  if (!validation.empty()) params = best;
  return result;
}

ErmResult train_erm(const SampleSet& train, const SampleSet& validation, const BackboneSpec& spec,
                    const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw ContractError("ERM train set is empty");
  const std::size_t C = class_count(train, validation);
  ErmResult result;
  result.params = init_backbone(spec, config.seed);
  result.head = init_discriminator(spec.embedding_dim(), C, config.discriminator.hidden,
                                   CounterRng::derive(config.seed, kTagHead));
  const std::size_t nb = result.params.tensors.size();
  std::vector<Tensor> all = result.params.tensors;
  all.insert(all.end(), result.head.params.begin(), result.head.params.end());
  BackboneParams best_backbone = result.params;
  std::vector<Tensor> best_head = result.head.params;
  BackboneParams last_good = result.params;
  Optimizer opt(config.optimizer);

  SampleSet order = train;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    order = train;
    CounterRng rng(CounterRng::derive(CounterRng::derive(config.seed, kTagEpoch), e));
    rng.shuffle(std::span<SamplePtr>(order));
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t lo = 0, k = 0; lo < order.size(); lo += config.batch_size, ++k) {
      const std::size_t hi = std::min(order.size(), lo + config.batch_size);
      const std::span<const SamplePtr> rows(order.data() + lo, hi - lo);
      std::vector<int> labels;
      for (const auto& s : rows) labels.push_back(s->class_label);
      Tape tape;
      std::vector<Var> pv;
      for (const auto& t : all) pv.push_back(tape.parameter(t));
      std::vector<Tensor> grads;
      double loss_value = 0.0;
      try {
        Var z = forward_backbone(spec, std::span<const Var>(pv).first(nb),
                                 tape.constant(gather_images(rows)));
        Var logits = result.head.forward(tape, std::span<const Var>(pv).subspan(nb), z);
        Var loss = softmax_cross_entropy(logits, labels);
        tape.backward(loss);
        loss_value = loss.value().item();
        for (const auto& v : pv) grads.push_back(tape.grad(v));
      } catch (const NumericError& err) {
        abort_training(config, last_good, e, k, err.what());
      }
      if (!all_finite(grads)) abort_training(config, last_good, e, k, "gradient");
      opt.step(all, grads);
      if (!all_finite(all)) abort_training(config, last_good, e, k, "parameters");
      loss_sum += loss_value;
      ++steps;
    }
    std::copy_n(all.begin(), nb, result.params.tensors.begin());
    std::copy(all.begin() + static_cast<std::ptrdiff_t>(nb), all.end(), result.head.params.begin());
    result.trace.loss.push_back(loss_sum / static_cast<double>(steps));
    if (!validation.empty()) {
      const double acc = evaluate(result.params, result.head, nullptr, validation).accuracy;
      const auto prev = best_epoch_of(result.trace.validation_accuracy);
      const bool improved = result.trace.validation_accuracy.empty() ||
                            acc > *result.trace.validation_accuracy[prev];
      result.trace.validation_accuracy.push_back(acc);
      if (improved) {
        best_backbone = result.params;
        best_head = result.head.params;
      }
    } else {
      result.trace.validation_accuracy.push_back(std::nullopt);
    }
    if (config.checkpoint_every && config.checkpoint_dir && (e + 1) % config.checkpoint_every == 0)
      save_params(*config.checkpoint_dir / ("erm_epoch_" + std::to_string(e + 1) + ".ckpt"),
                  result.params);
    last_good = result.params;
    result.trace.seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  result.trace.best_epoch = best_epoch_of(result.trace.validation_accuracy);
  result.trace.optimizer_steps = opt.steps();
  if (!validation.empty()) {
    result.params = best_backbone;
    result.head.params = best_head;
  }
  return result;
}

}  // namespace eihi
