#include "fcd/cli/render.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <memory>

#include "fcd/error.hpp"

namespace fcd::cli {

namespace {

// 3x5 glyphs, one row per entry, bit 2 = leftmost column
constexpr std::array<std::array<std::uint8_t, 5>, 11> kGlyphs{{
    {7, 5, 5, 5, 7},  // 0
    {2, 6, 2, 2, 7},  // 1
    {7, 1, 7, 4, 7},  // 2
    {7, 1, 7, 1, 7},  // 3
    {5, 5, 7, 1, 1},  // 4
    {7, 4, 7, 1, 7},  // 5
    {7, 4, 7, 5, 7},  // 6
    {7, 1, 1, 1, 1},  // 7
    {7, 5, 7, 5, 7},  // 8
    {7, 5, 7, 1, 7},  // 9
    {0, 0, 0, 0, 2},  // .
}};
constexpr int kFontScale = 2;

void put(RgbImage& img, int x, int y, Rgb c) {
  if (x >= 0 && y >= 0 && x < img.width && y < img.height) img.at(x, y) = c;
}

void draw_text(RgbImage& img, int x, int y, const std::string& text, Rgb c) {
  for (char ch : text) {
    const int g = ch == '.' ? 10 : (ch >= '0' && ch <= '9' ? ch - '0' : -1);
    if (g >= 0) {
      for (int row = 0; row < 5; ++row)
        for (int col = 0; col < 3; ++col)
          if (kGlyphs[g][row] & (4 >> col))
            for (int dy = 0; dy < kFontScale; ++dy)
              for (int dx = 0; dx < kFontScale; ++dx) put(img, x + col * kFontScale + dx, y + row * kFontScale + dy, c);
    }
    x += 4 * kFontScale;
  }
}

void draw_rect(RgbImage& img, int x0, int y0, int x1, int y1, Rgb c) {
  for (int x = x0; x <= x1; ++x) {
    put(img, x, y0, c);
    put(img, x, y1, c);
  }
  for (int y = y0; y <= y1; ++y) {
    put(img, x0, y, c);
    put(img, x1, y, c);
  }
}

}  // namespace

std::string probability_label(double p) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", std::clamp(p, 0.0, 1.0));
  return buf;
}

RgbImage render_overlay(const Volume& volume, int z, std::span<const ScoredPatch> patches, const LesionMask* lesion) {
  const Dims d = volume.dims();
  if (z < 0 || z >= d.depth) {
    throw InputError("slice z=" + std::to_string(z) + " outside [0," + std::to_string(d.depth) + ")");
  }
  if (lesion && !(lesion->mask.dims() == d)) throw InputError("lesion mask dims differ from volume dims");

  float lo = volume.at(0, 0, z);
  float hi = lo;
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x) {
      lo = std::min(lo, volume.at(x, y, z));
      hi = std::max(hi, volume.at(x, y, z));
    }
  const double span = hi > lo ? static_cast<double>(hi) - lo : 1.0;

  RgbImage img(d.width * kRenderScale, d.height * kRenderScale);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      const auto g = static_cast<std::uint8_t>(std::lround(255.0 * (volume.at(x, y, z) - lo) / span));
      Rgb c{g, g, g};
      if (lesion && lesion->mask.at(x, y, z)) {
        auto blend = [](std::uint8_t a, std::uint8_t b) {
          return static_cast<std::uint8_t>(std::lround((1.0 - kLesionAlpha) * a + kLesionAlpha * b));
        };
        c = {blend(c.r, kLesionTint.r), blend(c.g, kLesionTint.g), blend(c.b, kLesionTint.b)};
      }
      for (int dy = 0; dy < kRenderScale; ++dy)
        for (int dx = 0; dx < kRenderScale; ++dx) img.at(x * kRenderScale + dx, y * kRenderScale + dy) = c;
    }
  }

  for (const auto& p : patches) {
    if (p.spec.z != z) continue;
    const Rgb c = p.spec.category == PatchCategory::middle ? kMiddleColor : kSideColor;
    const int x0 = p.spec.x0 * kRenderScale;
    const int y0 = p.spec.y0 * kRenderScale;
    const int x1 = (p.spec.x0 + p.spec.width) * kRenderScale - 1;
    const int y1 = (p.spec.y0 + p.spec.height) * kRenderScale - 1;
    draw_rect(img, x0, y0, x1, y1, c);
    draw_text(img, x0 + 3, y0 + 3, probability_label(p.probability), c);
  }
  return img;
}

void write_png(const RgbImage& image, const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) throw Error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    auto* row = const_cast<png_bytep>(reinterpret_cast<const png_byte*>(&image.pixels[static_cast<std::size_t>(y) * image.width]));
    png_write_row(png, row);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace fcd::cli
