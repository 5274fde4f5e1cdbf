/**
 * @file volume_io.hpp
 * @brief Scalar 3D volumes, brain masks and NIfTI-1 persistence.
 *
 * Internal axis convention: X = sagittal position (left/right),
 * Y = coronal, Z = axial. Voxel (x, y, z) lives at linear index
 * x + W * (y + H * z).
 */
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fcd {

struct Dims {
  int width = 0;   // X
  int height = 0;  // Y
  int depth = 0;   // Z

  [[nodiscard]] std::size_t voxel_count() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(depth);
  }
  [[nodiscard]] bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < width && y < height && z < depth;
  }
  [[nodiscard]] std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(width) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(height) * static_cast<std::size_t>(z));
  }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

/// Immutable-after-construction scalar volume with 32-bit intensities.
class Volume {
 public:
  Volume() = default;
  /// Zero-filled volume. Throws InputError on non-positive dims or spacing.
  Volume(Dims dims, Spacing spacing = {}, std::string subject_id = {});
  /// Takes ownership of `data`; throws on size mismatch or non-finite values.
  Volume(Dims dims, Spacing spacing, std::vector<float> data, std::string subject_id = {});

  [[nodiscard]] const Dims& dims() const { return dims_; }
  [[nodiscard]] const Spacing& spacing() const { return spacing_; }
  [[nodiscard]] const std::string& subject_id() const { return subject_id_; }
  void set_subject_id(std::string id) { subject_id_ = std::move(id); }

  [[nodiscard]] float at(int x, int y, int z) const { return data_[dims_.index(x, y, z)]; }
  float& at(int x, int y, int z) { return data_[dims_.index(x, y, z)]; }

  [[nodiscard]] std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  /// Fingerprint over dims, spacing and intensities.
  [[nodiscard]] std::uint64_t checksum() const;

 private:
  Dims dims_{};
  Spacing spacing_{};
  std::vector<float> data_;
  std::string subject_id_;
};

/// Boolean voxel grid sharing a Volume's dims.
class VoxelMask {
 public:
  VoxelMask() = default;
  explicit VoxelMask(Dims dims) : dims_(dims), bits_(dims.voxel_count(), 0) {}

  [[nodiscard]] const Dims& dims() const { return dims_; }
  [[nodiscard]] bool at(int x, int y, int z) const { return bits_[dims_.index(x, y, z)] != 0; }
  void set(int x, int y, int z, bool value = true) { bits_[dims_.index(x, y, z)] = value ? 1 : 0; }
  [[nodiscard]] bool test(std::size_t linear) const { return bits_[linear] != 0; }
  void set_linear(std::size_t linear, bool value = true) { bits_[linear] = value ? 1 : 0; }

  [[nodiscard]] std::size_t count() const;
  [[nodiscard]] std::span<const std::uint8_t> bits() const { return bits_; }

  friend bool operator==(const VoxelMask&, const VoxelMask&) = default;

 private:
  Dims dims_{};
  std::vector<std::uint8_t> bits_;
};

using BrainMask = VoxelMask;

/// Reads a single-volume scalar NIfTI-1 file (.nii or .nii.gz).
/// On-disk axes are permuted/flipped into the (X, Y, Z) convention using
/// the sform (or qform) orientation. Applies scl_slope/scl_inter.
Volume load_volume(const std::filesystem::path& path);

/// Writes float32 NIfTI-1; gzip-compressed when the name ends in ".gz".
/// The header carries an identity rotation scaled by spacing. Output is
/// byte-for-byte reproducible.
void save_volume(const Volume& volume, const std::filesystem::path& path);

/// Writes a mask as uint8 NIfTI-1 (0/1).
void save_mask(const VoxelMask& mask, const Spacing& spacing, const std::filesystem::path& path);

/// Brain = strictly positive intensity. Throws DataError("empty brain").
BrainMask compute_brain_mask(const Volume& volume);

/// Midsagittal reflection x -> W - 1 - x.
int mirror_x(int x, int width);

/// Copy of `volume` reflected about the midsagittal plane.
Volume mirror_volume(const Volume& volume);

}  // namespace fcd
