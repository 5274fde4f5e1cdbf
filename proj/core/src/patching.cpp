#include "fcd/patching.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "fcd/checksum.hpp"
#include "fcd/error.hpp"

namespace fcd {

std::string_view to_string(PatchCategory category) {
  return category == PatchCategory::middle ? "middle" : "side";
}

std::string_view to_string(Labeling labeling) { return labeling == Labeling::soft ? "soft" : "hard"; }

Labeling parse_labeling(std::string_view text) {
  if (text == "soft") return Labeling::soft;
  if (text == "hard") return Labeling::hard;
  throw InputError("unknown labeling '" + std::string(text) + "'");
}

PatchParams PatchParams::with_size(int height, int width) {
  PatchParams p;
  p.height = height;
  p.width = width;
  p.stride_y = std::max(1, height / 2);
  p.stride_x = std::max(1, width / 2);
  return p;
}

bool PatchParams::has_view(View v) const { return std::find(views.begin(), views.end(), v) != views.end(); }

void PatchParams::validate(const Dims* dims) const {
  if (height < 1 || width < 1) throw InputError("patch size must be positive");
  if (stride_x < 1 || stride_y < 1 || stride_z < 1) throw InputError("patch strides must be >= 1");
  if (!(min_brain_fraction >= 0.0 && min_brain_fraction <= 1.0)) {
    throw InputError("min_brain_fraction must lie in [0, 1]");
  }
  if (canonical_views(views) != views) throw InputError("views must be canonical and contain axial");
  if (dims != nullptr && (height > dims->height || width > dims->width)) {
    throw InputError("patch " + std::to_string(height) + "x" + std::to_string(width) + " larger than slice " +
                     std::to_string(dims->height) + "x" + std::to_string(dims->width));
  }
}

std::vector<View> canonical_views(std::vector<View> views) {
  std::sort(views.begin(), views.end());
  views.erase(std::unique(views.begin(), views.end()), views.end());
  if (views.empty() || views.front() != View::axial) throw InputError("views must include axial");
  return views;
}

PatchStack PatchStack::truncated(int c) const {
  if (c > channels || c < 1) throw InputError("cannot truncate stack to " + std::to_string(c) + " channels");
  PatchStack out(c, height, width);
  std::copy_n(data.begin(), out.data.size(), out.data.begin());
  return out;
}

std::vector<int> grid_positions(int extent, int size, int stride) {
  std::vector<int> out;
  const int last = extent - size;
  for (int p = 0; p <= last; p += stride) out.push_back(p);
  if (out.empty() || out.back() != last) out.push_back(last);
  return out;
}

PatchCategory classify_patch(int x0, int width, int volume_width) {
  // midline (W-1)/2 in doubled integer coordinates
  const int mid2 = volume_width - 1;
  return (2 * x0 <= mid2 && mid2 <= 2 * (x0 + width - 1)) ? PatchCategory::middle : PatchCategory::side;
}

std::vector<PatchSpec> generate_patch_grid(const BrainMask& brain, const PatchParams& params,
                                           const std::string& subject_id) {
  const Dims d = brain.dims();
  params.validate(&d);
  const auto xs = grid_positions(d.width, params.width, params.stride_x);
  const auto ys = grid_positions(d.height, params.height, params.stride_y);
  const double needed = params.min_brain_fraction * params.height * params.width;

  std::vector<PatchSpec> out;
  // summed-area table of one slice, (W+1) x (H+1)
  std::vector<int> sat(static_cast<std::size_t>(d.width + 1) * (d.height + 1));
  auto at = [&](int x, int y) -> int& { return sat[static_cast<std::size_t>(y) * (d.width + 1) + x]; };
  for (int z = 0; z < d.depth; z += params.stride_z) {
    bool any = false;
    for (int y = 0; y < d.height; ++y) {
      int row = 0;
      for (int x = 0; x < d.width; ++x) {
        row += brain.at(x, y, z) ? 1 : 0;
        at(x + 1, y + 1) = at(x + 1, y) + row;
      }
      any = any || row > 0;
    }
    if (!any) continue;
    for (int y0 : ys) {
      for (int x0 : xs) {
        const int x1 = x0 + params.width;
        const int y1 = y0 + params.height;
        const int count = at(x1, y1) - at(x0, y1) - at(x1, y0) + at(x0, y0);
        if (static_cast<double>(count) < needed) continue;
        out.push_back(PatchSpec{subject_id, z, x0, y0, params.height, params.width,
                                classify_patch(x0, params.width, d.width)});
      }
    }
  }
  return out;
}

PatchStack extract_stack(const Volume& volume, const PatchSpec& spec, const PatchParams& params) {
  const Dims d = volume.dims();
  if (spec.height != params.height || spec.width != params.width) {
    throw InputError("patch spec size does not match patch params");
  }
  if (spec.x0 < 0 || spec.y0 < 0 || spec.z < 0 || spec.x0 + spec.width > d.width ||
      spec.y0 + spec.height > d.height || spec.z >= d.depth) {
    throw InputError("patch footprint outside volume");
  }
  const int h = params.height;
  const int w = params.width;
  const int W = d.width;
  PatchStack s(params.channels(), h, w);

  auto sample = [&](int x, int y, int z) -> float { return d.contains(x, y, z) ? volume.at(x, y, z) : 0.0f; };

  const int xc = spec.x0 + w / 2;
  const int yc = spec.y0 + h / 2;
  const int z_first = spec.z - h / 2;
  int c = 0;
  for (View v : params.views) {
    for (int r = 0; r < h; ++r) {
      for (int col = 0; col < w; ++col) {
        float direct = 0.0f;
        float mirrored = 0.0f;
        switch (v) {
          case View::axial: {
            const int x = spec.x0 + col;
            const int y = spec.y0 + r;
            direct = sample(x, y, spec.z);
            mirrored = sample(W - 1 - x, y, spec.z);
            break;
          }
          case View::coronal: {  // rows Z, columns X, plane y = yc
            const int x = spec.x0 + col;
            const int z = z_first + r;
            direct = sample(x, yc, z);
            mirrored = sample(W - 1 - x, yc, z);
            break;
          }
          case View::sagittal: {  // rows Z, columns Y, plane x = xc and its contralateral plane
            const int y = yc - w / 2 + col;
            const int z = z_first + r;
            direct = sample(xc, y, z);
            mirrored = sample(W - 1 - xc, y, z);
            break;
          }
        }
        s.at(c, r, col) = direct;
        s.at(c + 1, r, col) = mirrored;
      }
    }
    c += 2;
  }
  return s;
}

std::int64_t patch_overlap(const PatchSpec& spec, const VoxelMask& mask) {
  const Dims d = mask.dims();
  if (spec.z < 0 || spec.z >= d.depth) return 0;
  std::int64_t n = 0;
  const int y_end = std::min(spec.y0 + spec.height, d.height);
  const int x_end = std::min(spec.x0 + spec.width, d.width);
  for (int y = std::max(spec.y0, 0); y < y_end; ++y)
    for (int x = std::max(spec.x0, 0); x < x_end; ++x) n += mask.at(x, y, spec.z) ? 1 : 0;
  return n;
}

double soft_label(std::int64_t overlap, std::int64_t max_overlap) {
  if (max_overlap <= 0) throw InputError("soft_label: max_overlap must be positive");
  if (overlap < 0 || overlap > max_overlap) throw InputError("soft_label: overlap outside [0, max_overlap]");
  return std::pow(static_cast<double>(overlap) / static_cast<double>(max_overlap), 0.2);
}

double hard_label(std::int64_t overlap) {
  if (overlap < 0) throw InputError("hard_label: negative overlap");
  return overlap > 0 ? 1.0 : 0.0;
}

std::vector<LabeledPatch> build_dataset(std::span<const DatasetSubject> subjects, const PatchParams& params,
                                        const DatasetOptions& options) {
  if (!(options.neg_ratio > 0.0)) throw InputError("neg_ratio must be positive");
  if (subjects.empty()) throw InputError("build_dataset: no subjects");
  params.validate();

  std::vector<LabeledPatch> positives;
  struct Negative {
    std::size_t subject;
    PatchSpec spec;
  };
  std::vector<Negative> pool;

  for (std::size_t s = 0; s < subjects.size(); ++s) {
    const auto& subj = subjects[s];
    const auto grid = generate_patch_grid(*subj.brain, params, subj.volume->subject_id());
    if (subj.lesion == nullptr) {
      for (const auto& spec : grid) pool.push_back({s, spec});
      continue;
    }
    std::vector<std::int64_t> overlaps(grid.size());
    std::int64_t max_overlap = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      overlaps[i] = patch_overlap(grid[i], subj.lesion->mask);
      max_overlap = std::max(max_overlap, overlaps[i]);
    }
    if (max_overlap == 0) throw InputError("unreachable lesion: no patch of " + subj.volume->subject_id() + " overlaps it");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (overlaps[i] == 0) {
        pool.push_back({s, grid[i]});
        continue;
      }
      const double label = options.labeling == Labeling::soft ? soft_label(overlaps[i], max_overlap)
                                                              : hard_label(overlaps[i]);
      positives.push_back(
          LabeledPatch{grid[i], extract_stack(*subj.volume, grid[i], params), overlaps[i], label});
    }
  }

  const auto wanted = static_cast<std::size_t>(std::llround(options.neg_ratio * static_cast<double>(positives.size())));
  const std::size_t take = std::min(wanted, pool.size());
  // partial Fisher-Yates with a seeded engine
  std::mt19937_64 rng(options.seed);
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }

  std::vector<LabeledPatch> out = std::move(positives);
  out.reserve(out.size() + take);
  for (std::size_t i = 0; i < take; ++i) {
    const auto& n = pool[i];
    out.push_back(LabeledPatch{n.spec, extract_stack(*subjects[n.subject].volume, n.spec, params), 0, 0.0});
  }
  return out;
}

std::uint64_t stack_checksum(const PatchStack& stack) {
  Checksum h;
  h.update_value(stack.channels).update_value(stack.height).update_value(stack.width);
  h.update(std::span<const float>(stack.data));
  return h.digest();
}

std::uint64_t dataset_checksum(std::span<const LabeledPatch> data) {
  Checksum h;
  for (const auto& p : data) {
    h.update(p.spec.subject_id);
    h.update_value(p.spec.z).update_value(p.spec.y0).update_value(p.spec.x0);
    h.update_value(p.label).update_value(stack_checksum(p.stack));
  }
  return h.digest();
}

// ---------------------------------------------------------------------------
// patch cache

namespace {

constexpr char kCacheMagic[8] = {'F', 'C', 'D', 'P', 'A', 'T', 'C', 'H'};
constexpr std::uint32_t kCacheVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw InputError("truncated patch cache");
  return v;
}

}  // namespace

bool PatchCache::matches(const PatchParams& wanted, std::uint64_t checksum) const {
  if (checksum != volume_checksum) return false;
  if (wanted.height != params.height || wanted.width != params.width || wanted.stride_x != params.stride_x ||
      wanted.stride_y != params.stride_y || wanted.stride_z != params.stride_z ||
      wanted.min_brain_fraction != params.min_brain_fraction) {
    return false;
  }
  // channel truncation works when wanted views are a prefix of cached ones
  return wanted.views.size() <= params.views.size() &&
         std::equal(wanted.views.begin(), wanted.views.end(), params.views.begin());
}

PatchCache build_patch_cache(const Volume& volume, const BrainMask& brain, const PatchParams& params,
                             const std::string& subject_id) {
  PatchCache cache{subject_id, volume.checksum(), params, generate_patch_grid(brain, params, subject_id), {}};
  cache.stacks.reserve(cache.specs.size());
  for (const auto& spec : cache.specs) cache.stacks.push_back(extract_stack(volume, spec, params));
  return cache;
}

void save_patch_cache(const PatchCache& cache, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write patch cache " + path.string());
  out.write(kCacheMagic, sizeof(kCacheMagic));
  write_pod(out, kCacheVersion);
  const auto& p = cache.params;
  std::uint32_t view_bits = 0;
  for (View v : p.views) view_bits |= 1u << static_cast<int>(v);
  write_pod<std::uint32_t>(out, view_bits);
  for (int v : {p.height, p.width, p.stride_y, p.stride_x, p.stride_z}) write_pod<std::int32_t>(out, v);
  write_pod(out, p.min_brain_fraction);
  write_pod(out, cache.volume_checksum);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(cache.subject_id.size()));
  out.write(cache.subject_id.data(), static_cast<std::streamsize>(cache.subject_id.size()));
  write_pod<std::uint64_t>(out, cache.specs.size());
  for (std::size_t i = 0; i < cache.specs.size(); ++i) {
    const auto& s = cache.specs[i];
    write_pod<std::int32_t>(out, s.z);
    write_pod<std::int32_t>(out, s.x0);
    write_pod<std::int32_t>(out, s.y0);
    const std::uint8_t record_tail[4] = {static_cast<std::uint8_t>(s.category), 0, 0, 0};
    out.write(reinterpret_cast<const char*>(record_tail), 4);
    const auto& data = cache.stacks[i].data;
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  }
  if (!out) throw Error("write failed: " + path.string());
}

PatchCache load_patch_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read patch cache " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCacheMagic, 8) != 0) throw InputError("not a patch cache: " + path.string());
  if (read_pod<std::uint32_t>(in) != kCacheVersion) throw InputError("unsupported patch cache version");
  PatchCache cache;
  const auto view_bits = read_pod<std::uint32_t>(in);
  cache.params.views.clear();
  for (View v : {View::axial, View::coronal, View::sagittal}) {
    if (view_bits & (1u << static_cast<int>(v))) cache.params.views.push_back(v);
  }
  cache.params.height = read_pod<std::int32_t>(in);
  cache.params.width = read_pod<std::int32_t>(in);
  cache.params.stride_y = read_pod<std::int32_t>(in);
  cache.params.stride_x = read_pod<std::int32_t>(in);
  cache.params.stride_z = read_pod<std::int32_t>(in);
  cache.params.min_brain_fraction = read_pod<double>(in);
  cache.params.validate();
  cache.volume_checksum = read_pod<std::uint64_t>(in);
  const auto id_len = read_pod<std::uint32_t>(in);
  cache.subject_id.resize(id_len);
  in.read(cache.subject_id.data(), id_len);
  const auto n = read_pod<std::uint64_t>(in);
  const auto& p = cache.params;
  for (std::uint64_t i = 0; i < n; ++i) {
    PatchSpec s;
    s.subject_id = cache.subject_id;
    s.z = read_pod<std::int32_t>(in);
    s.x0 = read_pod<std::int32_t>(in);
    s.y0 = read_pod<std::int32_t>(in);
    std::uint8_t tail[4];
    in.read(reinterpret_cast<char*>(tail), 4);
    s.category = tail[0] == 1 ? PatchCategory::middle : PatchCategory::side;
    s.height = p.height;
    s.width = p.width;
    PatchStack stack(p.channels(), p.height, p.width);
    in.read(reinterpret_cast<char*>(stack.data.data()), static_cast<std::streamsize>(stack.data.size() * sizeof(float)));
    if (!in) throw InputError("truncated patch cache " + path.string());
    cache.specs.push_back(std::move(s));
    cache.stacks.push_back(std::move(stack));
  }
  return cache;
}

}  // namespace fcd
