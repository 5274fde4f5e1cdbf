#include "fcd/models.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cassert>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>

#include "fcd/checksum.hpp"
#include "fcd/error.hpp"
#include "fcd/nn/optimizer.hpp"

namespace fcd {

using nn::Mat;
using nn::Vec;

void EncoderConfig::validate() const {
  if (canonical_views(views) != views) throw InputError("encoder views must be canonical and contain axial");
  if (height < 1 || width < 1) throw InputError("encoder patch size must be positive");
  if (head_channels.empty()) throw InputError("encoder needs at least one convolution per head");
  for (int c : head_channels) {
    if (c < 1) throw InputError("head convolution widths must be positive");
  }
  if (latent_dim < 1) throw InputError("latent_dim must be >= 1");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InputError("epochs must be >= 1");
  if (batch_size < 1) throw InputError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw InputError("learning_rate must be positive");
}

namespace {

void check_stack(const PatchStack& s, const EncoderConfig& c) {
  if (s.channels != c.channels() || s.height != c.height || s.width != c.width) {
    throw InputError("stack shape " + std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
                     std::to_string(s.width) + " does not match model shape " + std::to_string(c.channels()) + "x" +
                     std::to_string(c.height) + "x" + std::to_string(c.width));
  }
}

std::unique_ptr<nn::Optimizer> make_optimizer(const TrainConfig& t) {
  if (t.optimizer == OptimizerKind::sgd) return std::make_unique<nn::Sgd>(t.learning_rate);
  return std::make_unique<nn::Adam>(t.learning_rate);
}

std::uint64_t params_checksum(const std::vector<const nn::Param*>& params) {
  Checksum h;
  for (const auto* p : params) {
    h.update(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double));
  }
  return h.digest();
}

void append(std::vector<nn::Param*>& out, nn::Param& w, nn::Param& b) {
  out.push_back(&w);
  out.push_back(&b);
}

void append(std::vector<const nn::Param*>& out, const nn::Param& w, const nn::Param& b) {
  out.push_back(&w);
  out.push_back(&b);
}

/// Shuffled mini-batch loop shared by both trainers.
template <typename StepFn>
std::vector<double> run_epochs(std::size_t n, const TrainConfig& t, StepFn&& step) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  nn::Rng rng(t.seed);
  std::vector<double> trace;
  for (int epoch = 0; epoch < t.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(t.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(t.batch_size));
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      sum += step(batch) * static_cast<double>(batch.size());
    }
    trace.push_back(sum / static_cast<double>(n));
    spdlog::debug("epoch {}/{} loss {:.6f}", epoch + 1, t.epochs, trace.back());
  }
  return trace;
}

}  // namespace

std::vector<Mat> stacks_to_views(std::span<const PatchStack* const> stacks, const EncoderConfig& config) {
  const int views = static_cast<int>(config.views.size());
  const std::size_t pixels = static_cast<std::size_t>(config.height) * config.width;
  const auto batch = static_cast<Eigen::Index>(stacks.size());
  std::vector<Mat> out(views, Mat(2, batch * static_cast<Eigen::Index>(pixels)));
  for (Eigen::Index n = 0; n < batch; ++n) {
    const PatchStack& s = *stacks[n];
    check_stack(s, config);
    for (int v = 0; v < views; ++v) {
      const float* a = s.data.data() + static_cast<std::size_t>(2 * v) * pixels;
      const float* b = a + pixels;
      double* dst = out[v].data() + static_cast<std::size_t>(n) * pixels * 2;
      for (std::size_t p = 0; p < pixels; ++p) {
        dst[2 * p] = a[p];
        dst[2 * p + 1] = b[p];
      }
    }
  }
  return out;
}

namespace nn {

Encoder::Encoder(const EncoderConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  int in_c = 2;
  int h = config_.height;
  int w = config_.width;
  for (int width : config_.head_channels) {
    geometry_.push_back(ConvGeometry::make(in_c, width, h, w));
    in_c = width;
    h = geometry_.back().out_height;
    w = geometry_.back().out_width;
  }
  for (std::size_t v = 0; v < config_.views.size(); ++v) {
    std::vector<Conv2d> head;
    for (const auto& g : geometry_) head.emplace_back(g, rng);
    heads_.push_back(std::move(head));
  }
  const int per_head = geometry_.back().out_channels * geometry_.back().out_pixels();
  const int total = per_head * static_cast<int>(config_.views.size());
  if (config_.latent_dim > total) {
    spdlog::warn("latent_dim {} exceeds concatenated head features {}", config_.latent_dim, total);
  }
  fc_ = Linear(total, config_.latent_dim, rng, 1.0);
}

Mat Encoder::forward(const std::vector<Mat>& views, int batch, Trace* trace) const {
  const auto& last = geometry_.back();
  const int per_head = last.out_channels * last.out_pixels();
  const int layers = static_cast<int>(geometry_.size());
  Mat concat(fc_.in_features(), batch);
  if (trace != nullptr) {
    trace->cols.assign(heads_.size(), std::vector<Mat>(layers));
    trace->activations.assign(heads_.size(), std::vector<Mat>(layers));
  }
  for (std::size_t v = 0; v < heads_.size(); ++v) {
    Mat a = views[v];
    for (int l = 0; l < layers; ++l) {
      a = heads_[v][l].forward(a, batch, trace != nullptr ? &trace->cols[v][l] : nullptr);
      relu_inplace(a);
      if (trace != nullptr) trace->activations[v][l] = a;
    }
    concat.middleRows(static_cast<Eigen::Index>(v) * per_head, per_head) =
        Eigen::Map<const Mat>(a.data(), per_head, batch);
  }
  Mat latent = fc_.forward(concat);
  if (trace != nullptr) trace->concat = std::move(concat);
  return latent;
}

void Encoder::backward(const Mat& dlatent, const Trace& trace, int batch) {
  const auto& last = geometry_.back();
  const int per_head = last.out_channels * last.out_pixels();
  const Mat dconcat = fc_.backward(dlatent, trace.concat, true);
  for (std::size_t v = 0; v < heads_.size(); ++v) {
    Mat d = dconcat.middleRows(static_cast<Eigen::Index>(v) * per_head, per_head);
    Mat g = Eigen::Map<Mat>(d.data(), last.out_channels, static_cast<Eigen::Index>(last.out_pixels()) * batch);
    for (int l = static_cast<int>(geometry_.size()) - 1; l >= 0; --l) {
      g = relu_backward(g, trace.activations[v][l]);
      g = heads_[v][l].backward(g, trace.cols[v][l], batch, l > 0);
    }
  }
}

std::vector<Param*> Encoder::parameters() {
  std::vector<Param*> out;
  for (auto& head : heads_)
    for (auto& conv : head) append(out, conv.weight, conv.bias);
  append(out, fc_.weight, fc_.bias);
  return out;
}

std::vector<const Param*> Encoder::parameters() const {
  std::vector<const Param*> out;
  for (const auto& head : heads_)
    for (const auto& conv : head) append(out, conv.weight, conv.bias);
  append(out, fc_.weight, fc_.bias);
  return out;
}

Decoder::Decoder(const EncoderConfig& config, const std::vector<ConvGeometry>& head_geometry, std::uint64_t seed)
    : config_(config), geometry_(head_geometry) {
  Rng rng(seed);
  const auto& last = geometry_.back();
  const int per_head = last.out_channels * last.out_pixels();
  fc_ = Linear(config_.latent_dim, per_head * static_cast<int>(config_.views.size()), rng, 2.0);
  const int layers = static_cast<int>(geometry_.size());
  for (std::size_t v = 0; v < config_.views.size(); ++v) {
    std::vector<ConvTranspose2d> tail;
    for (int l = layers - 1; l >= 0; --l) tail.emplace_back(geometry_[l], rng, l == 0 ? 1.0 : 2.0);
    tails_.push_back(std::move(tail));
  }
}

std::vector<Mat> Decoder::forward(const Mat& latent, int batch, Trace* trace) const {
  const auto& last = geometry_.back();
  const int per_head = last.out_channels * last.out_pixels();
  const int layers = static_cast<int>(geometry_.size());
  Mat hidden = fc_.forward(latent);
  relu_inplace(hidden);
  std::vector<Mat> outputs;
  if (trace != nullptr) trace->inputs.assign(tails_.size(), std::vector<Mat>(layers));
  for (std::size_t v = 0; v < tails_.size(); ++v) {
    Mat block = hidden.middleRows(static_cast<Eigen::Index>(v) * per_head, per_head);
    Mat a = Eigen::Map<Mat>(block.data(), last.out_channels, static_cast<Eigen::Index>(last.out_pixels()) * batch);
    for (int i = 0; i < layers; ++i) {
      if (trace != nullptr) trace->inputs[v][i] = a;
      a = tails_[v][i].forward(a, batch);
      if (i + 1 < layers) relu_inplace(a);
    }
    outputs.push_back(std::move(a));
  }
  if (trace != nullptr) {
    trace->latent = latent;
    trace->hidden = std::move(hidden);
  }
  return outputs;
}

Mat Decoder::backward(const std::vector<Mat>& doutputs, const Trace& trace, int batch) {
  const auto& last = geometry_.back();
  const int per_head = last.out_channels * last.out_pixels();
  const int layers = static_cast<int>(geometry_.size());
  Mat dhidden(trace.hidden.rows(), trace.hidden.cols());
  for (std::size_t v = 0; v < tails_.size(); ++v) {
    Mat g = doutputs[v];
    for (int i = layers - 1; i >= 0; --i) {
      // the ReLU after layer i produced the input of layer i+1
      if (i + 1 < layers) g = relu_backward(g, trace.inputs[v][i + 1]);
      g = tails_[v][i].backward(g, trace.inputs[v][i], batch, true);
    }
    dhidden.middleRows(static_cast<Eigen::Index>(v) * per_head, per_head) =
        Eigen::Map<const Mat>(g.data(), per_head, batch);
  }
  dhidden = relu_backward(dhidden, trace.hidden);
  return fc_.backward(dhidden, trace.latent, true);
}

std::vector<Param*> Decoder::parameters() {
  std::vector<Param*> out;
  append(out, fc_.weight, fc_.bias);
  for (auto& tail : tails_)
    for (auto& layer : tail) append(out, layer.weight, layer.bias);
  return out;
}

std::vector<const Param*> Decoder::parameters() const {
  std::vector<const Param*> out;
  append(out, fc_.weight, fc_.bias);
  for (const auto& tail : tails_)
    for (const auto& layer : tail) append(out, layer.weight, layer.bias);
  return out;
}

}  // namespace nn

// ---------------------------------------------------------------------------
// classifier

namespace {
constexpr int kClassifierHidden = 64;
constexpr std::size_t kPredictChunk = 256;
}  // namespace

ClassifierModel::ClassifierModel(const EncoderConfig& config, std::uint64_t head_seed) : encoder_(config) {
  nn::Rng rng(head_seed);
  hidden_ = nn::Linear(config.latent_dim, kClassifierHidden, rng, 2.0);
  output_ = nn::Linear(kClassifierHidden, 1, rng, 1.0);
}

Mat ClassifierModel::logits(std::span<const PatchStack* const> stacks, nn::Encoder::Trace* trace, Mat* latent,
                            Mat* hidden) const {
  const int n = static_cast<int>(stacks.size());
  Mat lat = encoder_.forward(stacks_to_views(stacks, config()), n, trace);
  Mat h = hidden_.forward(lat);
  nn::relu_inplace(h);
  Mat z = output_.forward(h);
  if (latent != nullptr) *latent = std::move(lat);
  if (hidden != nullptr) *hidden = std::move(h);
  return z;
}

double ClassifierModel::loss_and_gradients(std::span<const PatchStack* const> stacks, const Vec& targets) {
  for (auto* p : parameters()) p->zero_grad();
  nn::Encoder::Trace trace;
  Mat latent;
  Mat hidden;
  const Mat z = logits(stacks, &trace, &latent, &hidden);
  Mat dz;
  const double loss = nn::bce_with_logits(z, targets, &dz);
  Mat dh = output_.backward(dz, hidden, true);
  dh = nn::relu_backward(dh, hidden);
  const Mat dlatent = hidden_.backward(dh, latent, true);
  encoder_.backward(dlatent, trace, static_cast<int>(stacks.size()));
  return loss;
}

double ClassifierModel::loss(std::span<const PatchStack* const> stacks, const Vec& targets) const {
  return nn::bce_with_logits(logits(stacks, nullptr, nullptr, nullptr), targets, nullptr);
}

std::vector<double> ClassifierModel::predict_batch(std::span<const PatchStack* const> stacks) const {
  std::vector<double> out;
  out.reserve(stacks.size());
  for (std::size_t start = 0; start < stacks.size(); start += kPredictChunk) {
    const auto chunk = stacks.subspan(start, std::min(kPredictChunk, stacks.size() - start));
    const Mat z = logits(chunk, nullptr, nullptr, nullptr);
    for (Eigen::Index i = 0; i < z.cols(); ++i) {
      const double p = nn::sigmoid(z(0, i));
      assert(p >= 0.0 && p <= 1.0);
      out.push_back(p);
    }
  }
  return out;
}

std::vector<double> ClassifierModel::predict_batch(std::span<const PatchStack> stacks) const {
  std::vector<const PatchStack*> ptrs;
  ptrs.reserve(stacks.size());
  for (const auto& s : stacks) ptrs.push_back(&s);
  return predict_batch(std::span<const PatchStack* const>(ptrs));
}

double ClassifierModel::predict(const PatchStack& stack) const {
  const PatchStack* ptr = &stack;
  return predict_batch(std::span<const PatchStack* const>(&ptr, 1)).front();
}

std::vector<nn::Param*> ClassifierModel::parameters() {
  auto out = encoder_.parameters();
  append(out, hidden_.weight, hidden_.bias);
  append(out, output_.weight, output_.bias);
  return out;
}

std::vector<const nn::Param*> ClassifierModel::const_parameters() const {
  auto out = encoder_.parameters();
  append(out, hidden_.weight, hidden_.bias);
  append(out, output_.weight, output_.bias);
  return out;
}

std::uint64_t ClassifierModel::weights_checksum() const { return params_checksum(const_parameters()); }

// ---------------------------------------------------------------------------
// autoencoder

AutoencoderModel::AutoencoderModel(const EncoderConfig& config)
    : encoder_(config), decoder_(config, encoder_.head_geometry(), derive_seed(config.seed, "decoder")) {}

double AutoencoderModel::loss_and_gradients(std::span<const PatchStack* const> stacks) {
  for (auto* p : parameters()) p->zero_grad();
  const int n = static_cast<int>(stacks.size());
  const auto inputs = stacks_to_views(stacks, config());
  nn::Encoder::Trace etrace;
  const Mat latent = encoder_.forward(inputs, n, &etrace);
  nn::Decoder::Trace dtrace;
  const auto outputs = decoder_.forward(latent, n, &dtrace);
  const double count = static_cast<double>(n) * config().channels() * config().height * config().width;
  double loss = 0.0;
  std::vector<Mat> douts;
  for (std::size_t v = 0; v < outputs.size(); ++v) {
    Mat diff = outputs[v] - inputs[v];
    loss += diff.squaredNorm();
    douts.push_back(diff * (2.0 / count));
  }
  const Mat dlatent = decoder_.backward(douts, dtrace, n);
  encoder_.backward(dlatent, etrace, n);
  return loss / count;
}

double AutoencoderModel::loss(std::span<const PatchStack* const> stacks) const {
  const int n = static_cast<int>(stacks.size());
  const auto inputs = stacks_to_views(stacks, config());
  const auto outputs = decoder_.forward(encoder_.forward(inputs, n, nullptr), n, nullptr);
  double loss = 0.0;
  for (std::size_t v = 0; v < outputs.size(); ++v) loss += (outputs[v] - inputs[v]).squaredNorm();
  return loss / (static_cast<double>(n) * config().channels() * config().height * config().width);
}

PatchStack AutoencoderModel::reconstruct(const PatchStack& stack) const {
  const PatchStack* ptr = &stack;
  const auto inputs = stacks_to_views(std::span<const PatchStack* const>(&ptr, 1), config());
  const auto outputs = decoder_.forward(encoder_.forward(inputs, 1, nullptr), 1, nullptr);
  PatchStack out(stack.channels, stack.height, stack.width);
  const std::size_t pixels = static_cast<std::size_t>(stack.height) * stack.width;
  for (std::size_t v = 0; v < outputs.size(); ++v) {
    for (std::size_t p = 0; p < pixels; ++p) {
      out.data[2 * v * pixels + p] = static_cast<float>(outputs[v](0, static_cast<Eigen::Index>(p)));
      out.data[(2 * v + 1) * pixels + p] = static_cast<float>(outputs[v](1, static_cast<Eigen::Index>(p)));
    }
  }
  return out;
}

std::vector<nn::Param*> AutoencoderModel::parameters() {
  auto out = encoder_.parameters();
  for (auto* p : decoder_.parameters()) out.push_back(p);
  return out;
}

std::vector<const nn::Param*> AutoencoderModel::const_parameters() const {
  auto out = encoder_.parameters();
  for (const auto* p : decoder_.parameters()) out.push_back(p);
  return out;
}

std::uint64_t AutoencoderModel::weights_checksum() const { return params_checksum(const_parameters()); }

// ---------------------------------------------------------------------------
// training

AutoencoderModel pretrain_autoencoder(std::span<const PatchStack> stacks, const EncoderConfig& config,
                                      const TrainConfig& train) {
  config.validate();
  train.validate();
  if (stacks.empty()) throw InputError("pretrain_autoencoder: no stacks");
  std::vector<const PatchStack*> ptrs;
  Checksum data_hash;
  for (const auto& s : stacks) {
    check_stack(s, config);
    ptrs.push_back(&s);
    data_hash.update_value(stack_checksum(s));
  }
  AutoencoderModel model(config);
  double initial = 0.0;
  for (std::size_t start = 0; start < ptrs.size(); start += kPredictChunk) {
    const auto chunk = std::span<const PatchStack* const>(ptrs).subspan(start, std::min(kPredictChunk, ptrs.size() - start));
    initial += model.loss(chunk) * static_cast<double>(chunk.size());
  }
  model.initial_loss = initial / static_cast<double>(ptrs.size());

  auto optimizer = make_optimizer(train);
  const auto params = model.parameters();
  std::vector<const PatchStack*> batch_ptrs;
  model.loss_trace = run_epochs(ptrs.size(), train, [&](std::span<const std::size_t> batch) {
    batch_ptrs.clear();
    for (auto i : batch) batch_ptrs.push_back(ptrs[i]);
    const double loss = model.loss_and_gradients(batch_ptrs);
    optimizer->step(params);
    return loss;
  });
  model.fingerprint = {train.seed, train.epochs, data_hash.digest()};
  return model;
}

ClassifierModel train_classifier(std::span<const LabeledPatch> data, const EncoderConfig& config,
                                 const TrainConfig& train, const AutoencoderModel* init) {
  config.validate();
  train.validate();
  if (data.empty()) throw InputError("train_classifier: empty training set");
  if (init != nullptr && !(init->config() == config)) {
    throw InputError("train_classifier: autoencoder config does not match encoder config");
  }
  for (const auto& p : data) {
    check_stack(p.stack, config);
    if (!(p.label >= 0.0 && p.label <= 1.0)) throw InputError("label outside [0, 1]");
  }
  const bool uniform = std::all_of(data.begin(), data.end(), [&](const LabeledPatch& p) { return p.label == data.front().label; });
  if (uniform) spdlog::warn("train_classifier: all {} labels equal {}; training proceeds", data.size(), data.front().label);

  ClassifierModel model(config, derive_seed(train.seed, "classifier-head"));
  if (init != nullptr) model.encoder() = init->encoder();

  auto optimizer = make_optimizer(train);
  const auto params = model.parameters();
  std::vector<const PatchStack*> batch_ptrs;
  Vec targets;
  model.loss_trace = run_epochs(data.size(), train, [&](std::span<const std::size_t> batch) {
    batch_ptrs.clear();
    targets.resize(static_cast<Eigen::Index>(batch.size()));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      batch_ptrs.push_back(&data[batch[i]].stack);
      targets(static_cast<Eigen::Index>(i)) = data[batch[i]].label;
    }
    const double loss = model.loss_and_gradients(batch_ptrs, targets);
    optimizer->step(params);
    return loss;
  });
  model.fingerprint = {train.seed, train.epochs, dataset_checksum(data)};
  return model;
}

double predict(const ClassifierModel& model, const PatchStack& stack) { return model.predict(stack); }

TrainConfig member_train_config(const TrainConfig& train, Localization group) {
  TrainConfig t = train;
  t.seed = derive_seed(train.seed, to_string(group));
  return t;
}

LocalizationEnsemble train_localization_ensemble(std::span<const LabeledPatch> temporal_data,
                                                 std::span<const LabeledPatch> non_temporal_data,
                                                 const EncoderConfig& config, const TrainConfig& train,
                                                 const AutoencoderModel* init) {
  return train_localization_ensemble(temporal_data, non_temporal_data, config,
                                     member_train_config(train, Localization::temporal),
                                     member_train_config(train, Localization::non_temporal), init);
}

LocalizationEnsemble train_localization_ensemble(std::span<const LabeledPatch> temporal_data,
                                                 std::span<const LabeledPatch> non_temporal_data,
                                                 const EncoderConfig& config, const TrainConfig& temporal_train,
                                                 const TrainConfig& non_temporal_train,
                                                 const AutoencoderModel* init) {
  if (temporal_data.empty() || non_temporal_data.empty()) {
    throw InputError("localization ensemble needs non-empty temporal and non-temporal training sets");
  }
  return {train_classifier(temporal_data, config, temporal_train, init),
          train_classifier(non_temporal_data, config, non_temporal_train, init)};
}

double ensemble_predict(const LocalizationEnsemble& ensemble, Localization localization, const PatchStack& stack,
                        EnsembleMode mode) {
  if (mode == EnsembleMode::max) {
    return std::max(ensemble.temporal.predict(stack), ensemble.non_temporal.predict(stack));
  }
  return localization == Localization::temporal ? ensemble.temporal.predict(stack)
                                                : ensemble.non_temporal.predict(stack);
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kModelMagic[8] = {'F', 'C', 'D', 'M', 'O', 'D', 'E', 'L'};
constexpr std::uint32_t kModelVersion = 1;
constexpr std::uint32_t kKindClassifier = 1;
constexpr std::uint32_t kKindAutoencoder = 2;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw InputError("truncated checkpoint");
  return v;
}

void write_header(std::ostream& out, std::uint32_t kind, const EncoderConfig& c, const TrainingFingerprint& f,
                  const std::vector<double>& trace) {
  out.write(kModelMagic, 8);
  put(out, kModelVersion);
  put(out, kind);
  std::uint32_t view_bits = 0;
  for (View v : c.views) view_bits |= 1u << static_cast<int>(v);
  put(out, view_bits);
  put<std::int32_t>(out, c.height);
  put<std::int32_t>(out, c.width);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.head_channels.size()));
  for (int w : c.head_channels) put<std::int32_t>(out, w);
  put<std::int32_t>(out, c.latent_dim);
  put(out, c.seed);
  put(out, f.seed);
  put<std::int32_t>(out, f.epochs);
  put(out, f.data_checksum);
  put<std::uint64_t>(out, trace.size());
  for (double d : trace) put(out, d);
}

struct Header {
  std::uint32_t kind;
  EncoderConfig config;
  TrainingFingerprint fingerprint;
  std::vector<double> trace;
};

Header read_header(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kModelMagic, 8) != 0) throw InputError("not a model checkpoint");
  if (get<std::uint32_t>(in) != kModelVersion) throw InputError("unsupported checkpoint version");
  Header h;
  h.kind = get<std::uint32_t>(in);
  const auto view_bits = get<std::uint32_t>(in);
  h.config.views.clear();
  for (View v : {View::axial, View::coronal, View::sagittal}) {
    if (view_bits & (1u << static_cast<int>(v))) h.config.views.push_back(v);
  }
  h.config.height = get<std::int32_t>(in);
  h.config.width = get<std::int32_t>(in);
  const auto heads = get<std::uint32_t>(in);
  if (heads > 16) throw InputError("corrupt checkpoint: implausible head depth");
  h.config.head_channels.clear();
  for (std::uint32_t i = 0; i < heads; ++i) h.config.head_channels.push_back(get<std::int32_t>(in));
  h.config.latent_dim = get<std::int32_t>(in);
  h.config.seed = get<std::uint64_t>(in);
  h.fingerprint.seed = get<std::uint64_t>(in);
  h.fingerprint.epochs = get<std::int32_t>(in);
  h.fingerprint.data_checksum = get<std::uint64_t>(in);
  const auto n = get<std::uint64_t>(in);
  if (n > 1'000'000) throw InputError("corrupt checkpoint: implausible trace length");
  for (std::uint64_t i = 0; i < n; ++i) h.trace.push_back(get<double>(in));
  h.config.validate();
  return h;
}

void write_tensors(std::ostream& out, const std::vector<const nn::Param*>& params) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    put<std::int64_t>(out, p->value.rows());
    put<std::int64_t>(out, p->value.cols());
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
}

void read_tensors(std::istream& in, const std::vector<nn::Param*>& params) {
  if (get<std::uint32_t>(in) != params.size()) throw InputError("checkpoint tensor count mismatch");
  for (auto* p : params) {
    const auto rows = get<std::int64_t>(in);
    const auto cols = get<std::int64_t>(in);
    if (rows != p->value.rows() || cols != p->value.cols()) throw InputError("checkpoint tensor shape mismatch");
    in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!in) throw InputError("truncated checkpoint");
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read checkpoint " + path.string());
  return in;
}

}  // namespace

void save_checkpoint(const ClassifierModel& model, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_header(out, kKindClassifier, model.config(), model.fingerprint, model.loss_trace);
  write_tensors(out, model.const_parameters());
  if (!out) throw Error("write failed: " + path.string());
}

void save_checkpoint(const AutoencoderModel& model, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_header(out, kKindAutoencoder, model.config(), model.fingerprint, model.loss_trace);
  put(out, model.initial_loss);
  write_tensors(out, model.const_parameters());
  if (!out) throw Error("write failed: " + path.string());
}

ClassifierModel load_classifier(const std::filesystem::path& path) {
  auto in = open_in(path);
  const Header h = read_header(in);
  if (h.kind != kKindClassifier) throw InputError(path.string() + " is not a classifier checkpoint");
  ClassifierModel model(h.config, 0);
  read_tensors(in, model.parameters());
  model.fingerprint = h.fingerprint;
  model.loss_trace = h.trace;
  return model;
}

AutoencoderModel load_autoencoder(const std::filesystem::path& path) {
  auto in = open_in(path);
  const Header h = read_header(in);
  if (h.kind != kKindAutoencoder) throw InputError(path.string() + " is not an autoencoder checkpoint");
  AutoencoderModel model(h.config);
  model.initial_loss = get<double>(in);
  read_tensors(in, model.parameters());
  model.fingerprint = h.fingerprint;
  model.loss_trace = h.trace;
  return model;
}

}  // namespace fcd
