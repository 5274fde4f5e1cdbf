/**
 * @file evaluation.hpp
 * @brief Top-k detection score, leave-one-out orchestration and the
 *        cumulative (a)-(g) ablation ladder.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "fcd/annotation.hpp"
#include "fcd/models.hpp"
#include "fcd/patching.hpp"
#include "fcd/volume_io.hpp"

namespace fcd {

struct AblationConfig {
  char id = 'a';
  Labeling labeling = Labeling::hard;
  int patch_height = 16;
  int patch_width = 32;
  bool pretrain = false;
  bool ensemble = false;
  std::vector<View> views{View::axial};

  friend bool operator==(const AblationConfig&, const AblationConfig&) = default;
};

/// Cumulative ladder: a = (hard, 16x32, no AE, no ensemble, axial);
/// b = a + soft labels; c = b + 24x40; d = c + AE pretraining;
/// e = d + localization ensemble; f = e + coronal; g = f + sagittal.
AblationConfig ablation_config(char id);
std::vector<AblationConfig> ablation_ladder();
/// Parses "e", "a..g", "a-g" or "a,c,e" into ladder configs.
std::vector<AblationConfig> parse_ablation_list(std::string_view text);

struct ScoredPatch {
  PatchSpec spec;
  double probability = 0.0;
  std::int64_t overlap = 0;
};

struct SubjectScores {
  std::string subject_id;
  std::vector<ScoredPatch> patches;
};

/// True iff one of the k most probable patches overlaps the lesion. Ties in
/// probability are broken by canonical (z, y0, x0) order.
bool top_k_success(const SubjectScores& scores, int k);

struct FoldRecord {
  std::string held_out;
  Localization localization = Localization::non_temporal;
  std::uint64_t seed = 0;
  std::uint64_t train_checksum = 0;
  std::size_t train_size = 0;
  std::vector<std::string> training_subjects;  // labeled subjects whose lesions were used
  bool hygiene_verified = false;
};

struct TopKReport {
  std::string config_id;
  int k = 20;
  std::map<std::string, bool> per_subject;
  double score = 0.0;
  std::uint64_t base_seed = 0;
  std::uint64_t data_checksum = 0;     // labeled + unlabeled + control volumes
  std::uint64_t pretrain_checksum = 0; // autoencoder weights, 0 without pretraining
  std::vector<FoldRecord> folds;
  bool audited = false;
};

/// Mean success over subjects.
TopKReport top_k_score(std::span<const SubjectScores> all, int k);

/// Supplies annotations on demand so every access can be attributed to a
/// fold phase.
class AnnotationSource {
 public:
  virtual ~AnnotationSource() = default;
  [[nodiscard]] virtual Annotation load(const std::string& subject_id) const = 0;
};

class InMemoryAnnotations final : public AnnotationSource {
 public:
  void add(Annotation a) {
    const auto id = a.subject_id;
    items_.insert_or_assign(id, std::move(a));
  }
  [[nodiscard]] Annotation load(const std::string& subject_id) const override;

 private:
  std::map<std::string, Annotation> items_;
};

class FileAnnotations final : public AnnotationSource {
 public:
  void add(const std::string& subject_id, std::filesystem::path path) { paths_.insert_or_assign(subject_id, std::move(path)); }
  [[nodiscard]] Annotation load(const std::string& subject_id) const override;

 private:
  std::map<std::string, std::filesystem::path> paths_;
};

enum class FoldPhase { training, scoring };

struct AnnotationAccess {
  std::string fold;  // held-out subject
  FoldPhase phase = FoldPhase::training;
  std::string subject;
};

struct CohortSubject {
  std::string id;
  Localization localization = Localization::non_temporal;  // meaningful for labeled subjects
  Volume volume;
  BrainMask brain;
};

/// Preprocessed subjects. Labeled subjects' annotations are only reachable
/// through `annotations`.
struct Cohort {
  std::vector<CohortSubject> labeled;
  std::vector<CohortSubject> unlabeled;
  std::vector<CohortSubject> controls;
  const AnnotationSource* annotations = nullptr;
};

struct LooOptions {
  int k = 20;
  TrainConfig classifier = TrainConfig::classifier_defaults();
  TrainConfig autoencoder = TrainConfig::autoencoder_defaults();
  std::vector<int> head_channels{16, 32};
  int latent_dim = 128;
  double neg_ratio = 3.0;
  int stride_z = 1;
  double min_brain_fraction = 0.5;
  std::size_t max_pretrain_stacks = 1200;
  MaskKind train_mask = MaskKind::ellipsoid;
  std::uint64_t seed = 0;
  int workers = 1;
  /// Test mode: log every annotation access and verify by content checksum
  /// that no held-out patch reaches a training set.
  bool audit = false;
  std::filesystem::path cache_dir;  // on-disk patch caches when non-empty
  std::function<void(const std::string&)> progress;
};

PatchParams patch_params_for(const AblationConfig& config, const LooOptions& options);
EncoderConfig encoder_config_for(const AblationConfig& config, const LooOptions& options);

struct LooOutputs {
  std::vector<SubjectScores> scores;          // per labeled subject, cohort order
  std::vector<AnnotationAccess> accesses;     // filled in audit mode
};

/// Leave-one-out over the labeled subjects. Controls are negatives in
/// every fold and never held out; pretraining uses the unlabeled pool only.
/// With ensembling, the held-out subject is scored by the member of its
/// localization group, trained without it.
TopKReport run_loo(const Cohort& cohort, const AblationConfig& config, const LooOptions& options,
                   LooOutputs* outputs = nullptr);

std::vector<TopKReport> run_ablation(const Cohort& cohort, std::span<const AblationConfig> configs,
                                     const LooOptions& options);

/// Unlabeled-pool stacks for pretraining: every grid patch, evenly thinned to
/// at most `max_stacks`.
std::vector<PatchStack> pretraining_stacks(std::span<const CohortSubject> unlabeled, const PatchParams& params,
                                           std::size_t max_stacks);

void save_report(const TopKReport& report, const std::filesystem::path& path);
TopKReport load_report(const std::filesystem::path& path);
/// "config_id,score" rows, scores with three decimals.
void save_score_table(std::span<const TopKReport> reports, const std::filesystem::path& path);
std::string format_score(double score);
void save_subject_scores(const SubjectScores& scores, const std::filesystem::path& path);
SubjectScores load_subject_scores(const std::filesystem::path& path);

}  // namespace fcd
