#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "fcd/volume_io.hpp"

namespace fcd {

/// Landmark model for histogram standardization: brain-intensity
/// percentiles of each volume are mapped piecewise-linearly onto a
/// standard scale averaged over a training set.
struct HistogramStandard {
  std::vector<double> landmark_percentiles;  // strictly increasing, in (0, 100)
  std::vector<double> standard_scale;        // strictly increasing, same length

  /// Throws InputError when the invariants above do not hold.
  void validate() const;

  friend bool operator==(const HistogramStandard&, const HistogramStandard&) = default;
};

/// {1, 10, 20, ..., 90, 99}
std::vector<double> default_landmark_percentiles();

/// Percentile by linear interpolation between order statistics
/// (rank = p/100 * (n-1)). `sorted` must be ascending and non-empty.
double percentile_sorted(std::span<const double> sorted, double percent);

/// Brain-voxel intensities, ascending.
std::vector<double> sorted_brain_intensities(const Volume& volume, const BrainMask& mask);

/// Landmark intensities of one volume at the given percentiles.
/// Throws DataError when the brain has fewer than two distinct values.
std::vector<double> brain_landmarks(const Volume& volume, const BrainMask& mask, std::span<const double> percentiles);

struct MaskedVolume {
  const Volume* volume;
  const BrainMask* mask;
};

HistogramStandard fit_histogram_standard(std::span<const MaskedVolume> volumes,
                                         std::span<const double> percentiles = {});

/// Piecewise-linear map taking `source` landmarks onto `target` values,
/// extrapolating linearly beyond the end landmarks. Monotone
/// non-decreasing; zero-width source segments are skipped.
double map_intensity(double x, std::span<const double> source, std::span<const double> target);

Volume apply_histogram_standard(const Volume& volume, const BrainMask& mask, const HistogramStandard& standard);

/// (x - mean) / std over brain voxels (population std); zero elsewhere.
/// Throws DataError("constant intensity") when std is zero.
Volume z_normalize(const Volume& volume, const BrainMask& mask);

void save_histogram_standard(const HistogramStandard& standard, const std::filesystem::path& path);
HistogramStandard load_histogram_standard(const std::filesystem::path& path);

}  // namespace fcd
