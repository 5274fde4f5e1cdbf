/**
 * @file patching.hpp
 * @brief Candidate patch grids, multi-view mirrored patch stacks,
 *        lesion overlap labels and balanced training sets.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fcd/annotation.hpp"
#include "fcd/volume_io.hpp"

namespace fcd {

enum class PatchCategory : std::uint8_t { side = 0, middle = 1 };
enum class Labeling { hard, soft };

std::string_view to_string(PatchCategory category);
std::string_view to_string(Labeling labeling);
Labeling parse_labeling(std::string_view text);

struct PatchParams {
  int height = 24;  // along Y
  int width = 40;   // along X
  int stride_y = 12;
  int stride_x = 20;
  int stride_z = 1;
  double min_brain_fraction = 0.5;
  /// Canonical order (axial, coronal, sagittal); always contains axial.
  std::vector<View> views{View::axial};

  /// Patch of the given size with half-size strides.
  static PatchParams with_size(int height, int width);

  [[nodiscard]] int channels() const { return 2 * static_cast<int>(views.size()); }
  [[nodiscard]] bool has_view(View v) const;
  /// Throws InputError on invalid params; when `dims` is given also checks
  /// that the patch fits in-plane.
  void validate(const Dims* dims = nullptr) const;

  friend bool operator==(const PatchParams&, const PatchParams&) = default;
};

/// Sorts into canonical order, removes duplicates, checks axial is present.
std::vector<View> canonical_views(std::vector<View> views);

struct PatchSpec {
  std::string subject_id;
  int z = 0;
  int x0 = 0;
  int y0 = 0;
  int height = 0;
  int width = 0;
  PatchCategory category = PatchCategory::side;

  /// Canonical spatial order used for determinism and tie-breaking.
  [[nodiscard]] auto order_key() const { return std::tuple(z, y0, x0); }
  friend bool operator==(const PatchSpec&, const PatchSpec&) = default;
};

/// C x h x w tensor, channel-major then row-major. Channel pairs follow the
/// active views in canonical order: (view, mirrored view).
struct PatchStack {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  PatchStack() = default;
  PatchStack(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, 0.0f) {}

  [[nodiscard]] float at(int c, int r, int col) const { return data[(static_cast<std::size_t>(c) * height + r) * width + col]; }
  float& at(int c, int r, int col) { return data[(static_cast<std::size_t>(c) * height + r) * width + col]; }
  [[nodiscard]] std::span<const float> channel(int c) const {
    return std::span<const float>(data).subspan(static_cast<std::size_t>(c) * height * width,
                                                static_cast<std::size_t>(height) * width);
  }
  /// First `c` channels (views truncated).
  [[nodiscard]] PatchStack truncated(int c) const;
  friend bool operator==(const PatchStack&, const PatchStack&) = default;
};

struct LabeledPatch {
  PatchSpec spec;
  PatchStack stack;
  std::int64_t overlap = 0;
  double label = 0.0;
};

/// Grid over every axial slice z = 0, stride_z, ... that holds brain voxels.
/// In-plane origins step by the strides, plus a boundary-anchored final
/// position. Patches with fewer than min_brain_fraction * h * w brain voxels
/// are dropped. Output order: z, then y0, then x0.
std::vector<PatchSpec> generate_patch_grid(const BrainMask& brain, const PatchParams& params,
                                           const std::string& subject_id = {});

/// Positions {0, stride, 2*stride, ...} <= extent - size, plus extent - size.
std::vector<int> grid_positions(int extent, int size, int stride);

/// Footprint crosses the midline index (W-1)/2.
PatchCategory classify_patch(int x0, int width, int volume_width);

PatchStack extract_stack(const Volume& volume, const PatchSpec& spec, const PatchParams& params);

std::int64_t patch_overlap(const PatchSpec& spec, const VoxelMask& mask);

/// (overlap / max_overlap)^(1/5).
double soft_label(std::int64_t overlap, std::int64_t max_overlap);
double hard_label(std::int64_t overlap);

struct DatasetSubject {
  const Volume* volume = nullptr;
  const BrainMask* brain = nullptr;
  const LesionMask* lesion = nullptr;  // null for healthy controls
};

struct DatasetOptions {
  Labeling labeling = Labeling::soft;
  double neg_ratio = 1.0;
  std::uint64_t seed = 0;
};

/// Every positive patch of the lesion subjects, plus neg_ratio * positives
/// zero-overlap patches sampled without replacement from the pooled
/// negatives (lesion subjects' and controls'). Positives come first, in
/// subject then grid order; negatives follow in sampled order.
std::vector<LabeledPatch> build_dataset(std::span<const DatasetSubject> subjects, const PatchParams& params,
                                        const DatasetOptions& options);

/// Fingerprint over specs, labels and stack contents.
std::uint64_t dataset_checksum(std::span<const LabeledPatch> data);

/// Content fingerprint of a single stack.
std::uint64_t stack_checksum(const PatchStack& stack);

/// Patch stacks of one subject's full grid, persisted so repeated runs
/// skip re-extraction. Binary layout: versioned header, then fixed-stride
/// records (z, x0, y0, category, padding, C*h*w float32).
struct PatchCache {
  std::string subject_id;
  std::uint64_t volume_checksum = 0;
  PatchParams params;
  std::vector<PatchSpec> specs;
  std::vector<PatchStack> stacks;

  [[nodiscard]] bool matches(const PatchParams& wanted, std::uint64_t checksum) const;
};

PatchCache build_patch_cache(const Volume& volume, const BrainMask& brain, const PatchParams& params,
                             const std::string& subject_id);
void save_patch_cache(const PatchCache& cache, const std::filesystem::path& path);
PatchCache load_patch_cache(const std::filesystem::path& path);

}  // namespace fcd
