#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fcd/annotation.hpp"
#include "fcd/evaluation.hpp"
#include "fcd/volume_io.hpp"

namespace fcd::cli {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<Rgb> pixels;  // row-major

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h) {}
  [[nodiscard]] Rgb& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] const Rgb& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

inline constexpr int kRenderScale = 4;
inline constexpr Rgb kSideColor{0, 255, 0};
inline constexpr Rgb kMiddleColor{255, 255, 0};
inline constexpr Rgb kLesionTint{255, 235, 235};
inline constexpr double kLesionAlpha = 0.45;

/// Axial slice `z` as grayscale (columns = X, rows = Y), upscaled
/// kRenderScale times; patches on that slice outlined green (side) or
/// yellow (middle) with their probability printed in the top-left corner;
/// the lesion cross-section blended translucently. Throws InputError when z
/// is out of range.
RgbImage render_overlay(const Volume& volume, int z, std::span<const ScoredPatch> patches,
                        const LesionMask* lesion = nullptr);

/// Probability label as drawn on the image, e.g. "0.93".
std::string probability_label(double p);

void write_png(const RgbImage& image, const std::filesystem::path& path);

}  // namespace fcd::cli
