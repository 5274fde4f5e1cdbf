/**
 * @file phantom.hpp
 * @brief Synthetic skull-stripped brains with planted, blurred ellipsoidal
 *        lesions and matching weak annotations.
 *
 * The brain is an ellipsoid centred on the volume (so it is exactly
 * left/right symmetric) with a white-matter core and a grey-matter shell.
 * "Temporal-like" lesions sit in the inferior-lateral part of the brain.
 */
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fcd/annotation.hpp"
#include "fcd/manifest.hpp"
#include "fcd/volume_io.hpp"

namespace fcd {

enum class LesionPlacement { none, fixed, random_temporal, random_non_temporal };

struct PhantomParams {
  Dims dims{96, 96, 96};
  std::array<double, 3> brain_semi_axes{40.0, 44.0, 38.0};
  double wm_fraction = 0.75;  // WM core radius relative to the brain ellipsoid
  double wm_intensity = 100.0;
  double gm_intensity = 60.0;
  double noise_sigma = 10.0;
  std::array<double, 3> lesion_semi_axes{6.0, 6.0, 5.0};
  double lesion_delta = 30.0;
  LesionPlacement placement = LesionPlacement::random_temporal;
  std::array<int, 3> lesion_center{0, 0, 0};  // used when placement == fixed
  int lesion_side = 0;                        // random placement: -1 left, +1 right, 0 either
  double blur_sigma = 1.0;
  std::uint64_t seed = 0;
  std::string subject_id = "phantom";
};

struct Phantom {
  Volume volume;
  BrainMask brain;
  std::optional<Annotation> annotation;  // present when a lesion was planted
  std::optional<LesionMask> lesion;      // planted voxel set
  std::array<int, 3> lesion_center{};
  std::size_t brain_voxels = 0;          // voxels the generator assigned brain tissue
};

/// Temporal iff the centre is inferior and lateral in brain-normalised
/// coordinates.
Localization classify_localization(const std::array<int, 3>& center, const PhantomParams& params);

/// Throws InputError when a fixed lesion escapes the brain or random
/// placement finds no admissible centre.
Phantom generate_phantom(const PhantomParams& params);

struct CohortCounts {
  int temporal = 0;
  int non_temporal = 0;
  int controls = 0;
  int unlabeled = 0;
};

struct CohortMember {
  SubjectRole role = SubjectRole::labeled;
  Phantom phantom;
};

/// In-memory cohort. Per-subject parameters (intensity scale, brain and
/// lesion size, placement) are jittered deterministically from `seed`.
/// Unlabeled subjects carry lesions but no annotation; controls carry none.
std::vector<CohortMember> synthesize_cohort(const CohortCounts& counts, const PhantomParams& base, std::uint64_t seed);

/// Writes volumes/<id>.nii.gz, annotations/<id>.json (labeled only) and
/// manifest.json under `out_dir`; returns the manifest.
Manifest write_cohort(const std::vector<CohortMember>& cohort, std::uint64_t seed, const std::filesystem::path& out_dir);

Manifest generate_cohort(const CohortCounts& counts, const PhantomParams& base, std::uint64_t seed,
                         const std::filesystem::path& out_dir);

}  // namespace fcd
