/**
 * @file models.hpp
 * @brief Multi-head patch encoder, the per-view autoencoder used for
 *        pretraining, the patch classifier and the localization ensemble.
 *
 * Every active view owns a head: a stack of 3x3 stride-2 convolutions (ReLU
 * after each) over its 2 x h x w (view, mirrored view) slice pair. Head
 * outputs are flattened, concatenated and mapped by one linear layer to the
 * latent code. The decoder mirrors this: linear map from the latent, split
 * into per-view tails of transposed convolutions that restore 2 x h x w.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fcd/annotation.hpp"
#include "fcd/nn/layers.hpp"
#include "fcd/patching.hpp"

namespace fcd {

struct EncoderConfig {
  std::vector<View> views{View::axial};
  int height = 24;
  int width = 40;
  std::vector<int> head_channels{16, 32};
  int latent_dim = 128;
  std::uint64_t seed = 0;

  [[nodiscard]] int channels() const { return 2 * static_cast<int>(views.size()); }
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;

  static TrainConfig classifier_defaults() { return {}; }
  static TrainConfig autoencoder_defaults() {
    TrainConfig t;
    t.epochs = 20;
    return t;
  }
  void validate() const;
};

struct TrainingFingerprint {
  std::uint64_t seed = 0;
  int epochs = 0;
  std::uint64_t data_checksum = 0;
  friend bool operator==(const TrainingFingerprint&, const TrainingFingerprint&) = default;
};

/// Splits stacks into one (2, N*h*w) matrix per view.
std::vector<nn::Mat> stacks_to_views(std::span<const PatchStack* const> stacks, const EncoderConfig& config);

namespace nn {

class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(const EncoderConfig& config);

  struct Trace {
    std::vector<std::vector<Mat>> cols;         // [view][layer] im2col buffers
    std::vector<std::vector<Mat>> activations;  // [view][layer] post-ReLU maps
    Mat concat;                                 // flattened head outputs
  };

  /// (latent_dim, N). Records intermediates when `trace` is non-null.
  Mat forward(const std::vector<Mat>& views, int batch, Trace* trace) const;
  void backward(const Mat& dlatent, const Trace& trace, int batch);

  [[nodiscard]] const EncoderConfig& config() const { return config_; }
  [[nodiscard]] int feature_size() const { return fc_.in_features(); }
  [[nodiscard]] const std::vector<ConvGeometry>& head_geometry() const { return geometry_; }
  std::vector<Param*> parameters();
  [[nodiscard]] std::vector<const Param*> parameters() const;

 private:
  EncoderConfig config_;
  std::vector<ConvGeometry> geometry_;   // shared by every head
  std::vector<std::vector<Conv2d>> heads_;
  Linear fc_;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(const EncoderConfig& config, const std::vector<ConvGeometry>& head_geometry, std::uint64_t seed);

  struct Trace {
    Mat latent;
    Mat hidden;                              // post-ReLU output of the linear map
    std::vector<std::vector<Mat>> inputs;    // [view][layer] inputs to each transposed conv
  };

  std::vector<Mat> forward(const Mat& latent, int batch, Trace* trace) const;
  Mat backward(const std::vector<Mat>& doutputs, const Trace& trace, int batch);

  std::vector<Param*> parameters();
  [[nodiscard]] std::vector<const Param*> parameters() const;

 private:
  EncoderConfig config_;
  std::vector<ConvGeometry> geometry_;
  Linear fc_;
  std::vector<std::vector<ConvTranspose2d>> tails_;  // [view][layer], layer order = decode order
};

}  // namespace nn

class ClassifierModel {
 public:
  ClassifierModel() = default;
  /// Fresh encoder from config.seed; head initialized from `head_seed`.
  ClassifierModel(const EncoderConfig& config, std::uint64_t head_seed);

  [[nodiscard]] const EncoderConfig& config() const { return encoder_.config(); }

  /// Probability in [0, 1]. Throws InputError on a shape mismatch.
  [[nodiscard]] double predict(const PatchStack& stack) const;
  [[nodiscard]] std::vector<double> predict_batch(std::span<const PatchStack> stacks) const;
  [[nodiscard]] std::vector<double> predict_batch(std::span<const PatchStack* const> stacks) const;

  /// Zeroes gradients, then runs forward + backward of the mean BCE loss.
  double loss_and_gradients(std::span<const PatchStack* const> stacks, const nn::Vec& targets);
  /// Mean BCE loss without touching gradients.
  [[nodiscard]] double loss(std::span<const PatchStack* const> stacks, const nn::Vec& targets) const;

  std::vector<nn::Param*> parameters();
  [[nodiscard]] std::vector<const nn::Param*> const_parameters() const;
  nn::Encoder& encoder() { return encoder_; }
  [[nodiscard]] const nn::Encoder& encoder() const { return encoder_; }
  [[nodiscard]] std::uint64_t weights_checksum() const;

  TrainingFingerprint fingerprint;
  std::vector<double> loss_trace;

 private:
  [[nodiscard]] nn::Mat logits(std::span<const PatchStack* const> stacks, nn::Encoder::Trace* trace, nn::Mat* latent,
                               nn::Mat* hidden) const;

  nn::Encoder encoder_;
  nn::Linear hidden_;
  nn::Linear output_;
};

class AutoencoderModel {
 public:
  AutoencoderModel() = default;
  explicit AutoencoderModel(const EncoderConfig& config);

  [[nodiscard]] const EncoderConfig& config() const { return encoder_.config(); }
  [[nodiscard]] PatchStack reconstruct(const PatchStack& stack) const;

  /// Mean squared reconstruction error over all channels and pixels.
  double loss_and_gradients(std::span<const PatchStack* const> stacks);
  [[nodiscard]] double loss(std::span<const PatchStack* const> stacks) const;

  std::vector<nn::Param*> parameters();
  [[nodiscard]] std::vector<const nn::Param*> const_parameters() const;
  [[nodiscard]] const nn::Encoder& encoder() const { return encoder_; }
  [[nodiscard]] std::uint64_t weights_checksum() const;

  TrainingFingerprint fingerprint;
  double initial_loss = 0.0;       // before the first update
  std::vector<double> loss_trace;  // mean loss per epoch

 private:
  nn::Encoder encoder_;
  nn::Decoder decoder_;
};

AutoencoderModel pretrain_autoencoder(std::span<const PatchStack> stacks, const EncoderConfig& config,
                                      const TrainConfig& train);

/// BCE against (possibly soft) labels. When `init` is given its encoder
/// weights seed the classifier encoder and are fine-tuned.
ClassifierModel train_classifier(std::span<const LabeledPatch> data, const EncoderConfig& config,
                                 const TrainConfig& train, const AutoencoderModel* init = nullptr);

double predict(const ClassifierModel& model, const PatchStack& stack);

struct LocalizationEnsemble {
  ClassifierModel temporal;
  ClassifierModel non_temporal;
};

enum class EnsembleMode { route, max };

/// Training seeds for the two members derive from train.seed.
LocalizationEnsemble train_localization_ensemble(std::span<const LabeledPatch> temporal_data,
                                                 std::span<const LabeledPatch> non_temporal_data,
                                                 const EncoderConfig& config, const TrainConfig& train,
                                                 const AutoencoderModel* init = nullptr);
/// Explicit per-member training configs.
LocalizationEnsemble train_localization_ensemble(std::span<const LabeledPatch> temporal_data,
                                                 std::span<const LabeledPatch> non_temporal_data,
                                                 const EncoderConfig& config, const TrainConfig& temporal_train,
                                                 const TrainConfig& non_temporal_train,
                                                 const AutoencoderModel* init = nullptr);

TrainConfig member_train_config(const TrainConfig& train, Localization group);

/// route: the member matching `localization`; max: max over both members.
double ensemble_predict(const LocalizationEnsemble& ensemble, Localization localization, const PatchStack& stack,
                        EnsembleMode mode = EnsembleMode::route);

void save_checkpoint(const ClassifierModel& model, const std::filesystem::path& path);
void save_checkpoint(const AutoencoderModel& model, const std::filesystem::path& path);
ClassifierModel load_classifier(const std::filesystem::path& path);
AutoencoderModel load_autoencoder(const std::filesystem::path& path);

}  // namespace fcd
