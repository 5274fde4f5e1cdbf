#include "fcd/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fcd/checksum.hpp"
#include "fcd/error.hpp"

namespace fcd {

namespace {

std::array<double, 3> brain_center(const Dims& d) {
  return {(d.width - 1) / 2.0, (d.height - 1) / 2.0, (d.depth - 1) / 2.0};
}

double brain_radius2(const PhantomParams& p, double x, double y, double z) {
  const auto c = brain_center(p.dims);
  const double u = (x - c[0]) / p.brain_semi_axes[0];
  const double v = (y - c[1]) / p.brain_semi_axes[1];
  const double w = (z - c[2]) / p.brain_semi_axes[2];
  return u * u + v * v + w * w;
}

struct LesionBox {
  std::array<int, 3> lo;
  std::array<int, 3> hi;
};

LesionBox lesion_box(const PhantomParams& p, const std::array<int, 3>& center) {
  LesionBox b{};
  for (int d = 0; d < 3; ++d) {
    const int r = static_cast<int>(std::floor(p.lesion_semi_axes[d]));
    b.lo[d] = center[d] - r;
    b.hi[d] = center[d] + r;
  }
  return b;
}

bool in_lesion(const PhantomParams& p, const std::array<int, 3>& c, int x, int y, int z) {
  const double u = (x - c[0]) / p.lesion_semi_axes[0];
  const double v = (y - c[1]) / p.lesion_semi_axes[1];
  const double w = (z - c[2]) / p.lesion_semi_axes[2];
  return u * u + v * v + w * w <= 1.0;
}

bool lesion_inside_brain(const PhantomParams& p, const std::array<int, 3>& c) {
  const auto b = lesion_box(p, c);
  for (int z = b.lo[2]; z <= b.hi[2]; ++z)
    for (int y = b.lo[1]; y <= b.hi[1]; ++y)
      for (int x = b.lo[0]; x <= b.hi[0]; ++x) {
        if (!in_lesion(p, c, x, y, z)) continue;
        if (!p.dims.contains(x, y, z) || brain_radius2(p, x, y, z) > 1.0) return false;
      }
  return true;
}

std::array<int, 3> sample_center(const PhantomParams& p, std::mt19937_64& rng) {
  const bool temporal = p.placement == LesionPlacement::random_temporal;
  // ranges in brain-normalised coordinates
  std::uniform_real_distribution<double> ux_abs(temporal ? 0.45 : 0.25, temporal ? 0.65 : 0.55);
  std::uniform_real_distribution<double> uy(temporal ? -0.3 : -0.5, temporal ? 0.3 : 0.5);
  std::uniform_real_distribution<double> uz(temporal ? -0.55 : 0.10, temporal ? -0.25 : 0.50);
  std::bernoulli_distribution left(0.5);
  const auto bc = brain_center(p.dims);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const double coin = left(rng) ? -1.0 : 1.0;
    const double sx = p.lesion_side != 0 ? p.lesion_side : coin;
    const double ax = ux_abs(rng), ay = uy(rng), az = uz(rng);
    // keep the centre near the GM/WM junction
    const double r = std::sqrt(ax * ax + ay * ay + az * az);
    if (std::abs(r - p.wm_fraction) > 0.1) continue;
    const double x = bc[0] + sx * ax * p.brain_semi_axes[0];
    const double y = bc[1] + ay * p.brain_semi_axes[1];
    const double z = bc[2] + az * p.brain_semi_axes[2];
    const std::array<int, 3> c{static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y)),
                               static_cast<int>(std::lround(z))};
    if (lesion_inside_brain(p, c)) return c;
  }
  throw InputError("phantom: no admissible lesion centre for " + p.subject_id);
}

std::vector<double> gaussian_kernel(double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  return k;
}

}  // namespace

Localization classify_localization(const std::array<int, 3>& center, const PhantomParams& p) {
  const auto bc = brain_center(p.dims);
  const double ux = (center[0] - bc[0]) / p.brain_semi_axes[0];
  const double uz = (center[2] - bc[2]) / p.brain_semi_axes[2];
  return (uz < -0.15 && std::abs(ux) > 0.35) ? Localization::temporal : Localization::non_temporal;
}

Phantom generate_phantom(const PhantomParams& p) {
  const Dims d = p.dims;
  if (d.width < 1 || d.height < 1 || d.depth < 1) throw InputError("phantom dims must be positive");
  if (p.noise_sigma < 0 || p.blur_sigma < 0) throw InputError("phantom noise and blur must be non-negative");
  if (!(p.wm_intensity > 0 && p.gm_intensity > 0)) throw InputError("phantom tissue intensities must be positive");
  if (p.lesion_side < -1 || p.lesion_side > 1) throw InputError("phantom lesion_side must be -1, 0 or 1");

  std::mt19937_64 rng(p.seed);
  Phantom out;
  std::vector<float> data(d.voxel_count(), 0.0f);
  out.brain = BrainMask(d);

  const double wm2 = p.wm_fraction * p.wm_fraction;
  for (int z = 0; z < d.depth; ++z)
    for (int y = 0; y < d.height; ++y)
      for (int x = 0; x < d.width; ++x) {
        const double r2 = brain_radius2(p, x, y, z);
        if (r2 > 1.0) continue;
        data[d.index(x, y, z)] = static_cast<float>(r2 <= wm2 ? p.wm_intensity : p.gm_intensity);
        out.brain.set(x, y, z);
      }
  out.brain_voxels = out.brain.count();
  if (out.brain_voxels == 0) throw InputError("phantom brain ellipsoid does not intersect the volume");

  if (p.placement != LesionPlacement::none) {
    std::array<int, 3> c = p.lesion_center;
    if (p.placement == LesionPlacement::fixed) {
      if (!lesion_inside_brain(p, c)) throw InputError("phantom: lesion escapes the brain for " + p.subject_id);
    } else {
      c = sample_center(p, rng);
    }
    out.lesion_center = c;

    LesionMask lesion{VoxelMask(d), MaskKind::ellipsoid};
    const auto box = lesion_box(p, c);
    std::array<int, 3> lo{d.width, d.height, d.depth};
    std::array<int, 3> hi{-1, -1, -1};
    for (int z = box.lo[2]; z <= box.hi[2]; ++z)
      for (int y = box.lo[1]; y <= box.hi[1]; ++y)
        for (int x = box.lo[0]; x <= box.hi[0]; ++x) {
          if (!in_lesion(p, c, x, y, z)) continue;
          lesion.mask.set(x, y, z);
          const std::array<int, 3> v{x, y, z};
          for (int k = 0; k < 3; ++k) {
            lo[k] = std::min(lo[k], v[k]);
            hi[k] = std::max(hi[k], v[k]);
          }
        }

    // blurred lesion indicator over a padded region
    const int pad = p.blur_sigma > 0 ? static_cast<int>(std::ceil(3.0 * p.blur_sigma)) : 0;
    std::array<int, 3> rlo{};
    std::array<int, 3> rn{};
    const std::array<int, 3> extent{d.width, d.height, d.depth};
    for (int k = 0; k < 3; ++k) {
      rlo[k] = std::max(0, lo[k] - pad);
      rn[k] = std::min(extent[k] - 1, hi[k] + pad) - rlo[k] + 1;
    }
    auto ridx = [&](int x, int y, int z) { return static_cast<std::size_t>(x) + rn[0] * (static_cast<std::size_t>(y) + rn[1] * static_cast<std::size_t>(z)); };
    std::vector<double> field(static_cast<std::size_t>(rn[0]) * rn[1] * rn[2], 0.0);
    for (int z = 0; z < rn[2]; ++z)
      for (int y = 0; y < rn[1]; ++y)
        for (int x = 0; x < rn[0]; ++x)
          field[ridx(x, y, z)] = lesion.mask.at(x + rlo[0], y + rlo[1], z + rlo[2]) ? 1.0 : 0.0;
    if (p.blur_sigma > 0) {
      const auto kernel = gaussian_kernel(p.blur_sigma);
      const int r = static_cast<int>(kernel.size() / 2);
      for (int axis = 0; axis < 3; ++axis) {
        std::vector<double> next(field.size(), 0.0);
        for (int z = 0; z < rn[2]; ++z)
          for (int y = 0; y < rn[1]; ++y)
            for (int x = 0; x < rn[0]; ++x) {
              double acc = 0.0;
              for (int t = -r; t <= r; ++t) {
                std::array<int, 3> q{x, y, z};
                q[axis] += t;
                if (q[axis] < 0 || q[axis] >= rn[axis]) continue;
                acc += kernel[t + r] * field[ridx(q[0], q[1], q[2])];
              }
              next[ridx(x, y, z)] = acc;
            }
        field.swap(next);
      }
    }
    for (int z = 0; z < rn[2]; ++z)
      for (int y = 0; y < rn[1]; ++y)
        for (int x = 0; x < rn[0]; ++x) {
          const int gx = x + rlo[0], gy = y + rlo[1], gz = z + rlo[2];
          if (!out.brain.at(gx, gy, gz)) continue;
          data[d.index(gx, gy, gz)] += static_cast<float>(p.lesion_delta * field[ridx(x, y, z)]);
        }

    Annotation a;
    a.subject_id = p.subject_id;
    a.localization = classify_localization(c, p);
    a.box(View::axial) = {View::axial, {lo[0], hi[0]}, {lo[1], hi[1]}};
    a.box(View::coronal) = {View::coronal, {lo[0], hi[0]}, {lo[2], hi[2]}};
    a.box(View::sagittal) = {View::sagittal, {lo[1], hi[1]}, {lo[2], hi[2]}};
    out.annotation = a;
    out.lesion = std::move(lesion);
  }

  if (p.noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, p.noise_sigma);
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (out.brain.test(i)) data[i] += static_cast<float>(noise(rng));
    }
  }
  // brain voxels stay strictly positive so the brain mask is recoverable
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (out.brain.test(i)) data[i] = std::max(data[i], 1.0f);
  }
  out.volume = Volume(d, Spacing{}, std::move(data), p.subject_id);
  return out;
}

std::vector<CohortMember> synthesize_cohort(const CohortCounts& counts, const PhantomParams& base, std::uint64_t seed) {
  if (counts.temporal < 0 || counts.non_temporal < 0 || counts.controls < 0 || counts.unlabeled < 0) {
    throw InputError("cohort counts must be non-negative");
  }
  struct Plan {
    std::string id;
    SubjectRole role;
    LesionPlacement placement;
    int side = 0;
  };
  std::vector<Plan> plans;
  auto name = [](char tag, int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "sub-%c%02d", tag, i + 1);
    return std::string(buf);
  };
  for (int i = 0; i < counts.temporal; ++i) plans.push_back({name('t', i), SubjectRole::labeled, LesionPlacement::random_temporal, i % 2 ? 1 : -1});
  for (int i = 0; i < counts.non_temporal; ++i)
    plans.push_back({name('n', i), SubjectRole::labeled, LesionPlacement::random_non_temporal, i % 2 ? 1 : -1});
  for (int i = 0; i < counts.unlabeled; ++i)
    plans.push_back({name('u', i), SubjectRole::unlabeled,
                     i % 2 == 0 ? LesionPlacement::random_temporal : LesionPlacement::random_non_temporal,
                     (i / 2) % 2 ? 1 : -1});
  for (int i = 0; i < counts.controls; ++i) plans.push_back({name('c', i), SubjectRole::control, LesionPlacement::none});

  std::vector<CohortMember> out;
  out.reserve(plans.size());
  for (const auto& plan : plans) {
    std::mt19937_64 rng(derive_seed(seed, plan.id));
    std::uniform_real_distribution<double> scale(0.85, 1.15);
    std::uniform_real_distribution<double> brain_jitter(-2.0, 2.0);
    std::uniform_real_distribution<double> lesion_jitter(-1.0, 1.0);
    PhantomParams p = base;
    p.subject_id = plan.id;
    p.placement = plan.placement;
    p.lesion_side = plan.side;
    const double s = scale(rng);
    p.wm_intensity *= s;
    p.gm_intensity *= s;
    p.noise_sigma *= s;
    p.lesion_delta *= s;
    for (double& a : p.brain_semi_axes) a += brain_jitter(rng);
    for (double& a : p.lesion_semi_axes) a = std::max(3.0, a + lesion_jitter(rng));
    p.seed = derive_seed(seed, plan.id + "/volume");
    out.push_back({plan.role, generate_phantom(p)});
  }
  return out;
}

Manifest write_cohort(const std::vector<CohortMember>& cohort, std::uint64_t seed, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "volumes");
  bool any_labeled = false;
  for (const auto& m : cohort) any_labeled = any_labeled || m.role == SubjectRole::labeled;
  if (any_labeled) fs::create_directories(out_dir / "annotations");

  Manifest manifest;
  manifest.seed = seed;
  manifest.root = out_dir;
  for (const auto& m : cohort) {
    const auto& ph = m.phantom;
    ManifestEntry e;
    e.id = ph.volume.subject_id();
    e.role = m.role;
    e.volume = fs::path("volumes") / (e.id + ".nii.gz");
    save_volume(ph.volume, out_dir / e.volume);
    if (m.role == SubjectRole::labeled) {
      if (!ph.annotation) throw Error("labeled phantom without annotation: " + e.id);
      e.localization = ph.annotation->localization;
      e.annotation = fs::path("annotations") / (e.id + ".json");
      save_annotation(*ph.annotation, out_dir / *e.annotation);
    }
    e.checksum = to_hex(ph.volume.checksum());
    manifest.subjects.push_back(std::move(e));
  }
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

Manifest generate_cohort(const CohortCounts& counts, const PhantomParams& base, std::uint64_t seed,
                         const std::filesystem::path& out_dir) {
  return write_cohort(synthesize_cohort(counts, base, seed), seed, out_dir);
}

}  // namespace fcd
