/**
 * @file annotation.hpp
 * @brief Weak per-view box annotations and the 3D lesion masks derived
 *        from them.
 *
 * All intervals are inclusive voxel index ranges [lo, hi] in the
 * pipeline's (X, Y, Z) convention.
 */
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "fcd/volume_io.hpp"

namespace fcd {

enum class View { axial = 0, coronal = 1, sagittal = 2 };
enum class Localization { temporal, non_temporal };
enum class MaskKind { ellipsoid, rectangular };

std::string_view to_string(View view);
std::string_view to_string(Localization loc);
std::string_view to_string(MaskKind kind);
View parse_view(std::string_view text);
Localization parse_localization(std::string_view text);
MaskKind parse_mask_kind(std::string_view text);

struct Interval {
  int lo = 0;
  int hi = 0;

  [[nodiscard]] bool empty() const { return hi < lo; }
  [[nodiscard]] int length() const { return empty() ? 0 : hi - lo + 1; }
  [[nodiscard]] bool contains(int v) const { return v >= lo && v <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

Interval intersect(Interval a, Interval b);

/// A 2D box drawn on one view. In-plane axes:
/// axial -> (X, Y), coronal -> (X, Z), sagittal -> (Y, Z).
struct ViewBox2D {
  View view = View::axial;
  Interval a_range;
  Interval b_range;
  friend bool operator==(const ViewBox2D&, const ViewBox2D&) = default;
};

struct Annotation {
  std::string subject_id;
  Localization localization = Localization::non_temporal;
  /// Indexed by View.
  std::array<ViewBox2D, 3> boxes{
      ViewBox2D{View::axial, {}, {}}, ViewBox2D{View::coronal, {}, {}}, ViewBox2D{View::sagittal, {}, {}}};

  [[nodiscard]] const ViewBox2D& box(View view) const { return boxes[static_cast<int>(view)]; }
  ViewBox2D& box(View view) { return boxes[static_cast<int>(view)]; }
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Parallelepiped {
  Interval x_range;
  Interval y_range;
  Interval z_range;

  [[nodiscard]] bool contains(int x, int y, int z) const {
    return x_range.contains(x) && y_range.contains(y) && z_range.contains(z);
  }
  [[nodiscard]] bool within(const Dims& dims) const;
  friend bool operator==(const Parallelepiped&, const Parallelepiped&) = default;
};

struct LesionMask {
  VoxelMask mask;
  MaskKind kind = MaskKind::ellipsoid;
};

/// Each axis is constrained by the two views that see it; the result is the
/// largest axis-aligned body whose projections fit inside every box.
/// Throws InputError("inconsistent annotation") on an empty intersection.
Parallelepiped intersect_boxes(const Annotation& annotation);

/// Voxel (i,j,k) is in the mask iff sum_d ((idx_d - c_d) / a_d)^2 <= 1 with
/// c_d the interval midpoint and a_d half the voxel extent (hi - lo + 1) / 2,
/// never below 0.5.
LesionMask inscribe_ellipsoid(const Parallelepiped& box, const Dims& dims);

LesionMask rectangular_mask(const Parallelepiped& box, const Dims& dims);

LesionMask lesion_mask(const Annotation& annotation, const Dims& dims, MaskKind kind = MaskKind::ellipsoid);

/// Throws InputError when a box falls outside `dims` or has lo > hi.
void validate_annotation(const Annotation& annotation, const Dims& dims);

Annotation load_annotation(const std::filesystem::path& path);
void save_annotation(const Annotation& annotation, const std::filesystem::path& path);

}  // namespace fcd
