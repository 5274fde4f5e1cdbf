#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "fcd/error.hpp"
#include "fcd/patching.hpp"
#include "fcd/phantom.hpp"
#include "test_util.hpp"

using namespace fcd;

namespace {

BrainMask full_mask(Dims d) {
  BrainMask m(d);
  for (std::size_t i = 0; i < d.voxel_count(); ++i) m.set_linear(i);
  return m;
}

Volume ramp_x(Dims d) {
  Volume v(d);
  for (int z = 0; z < d.depth; ++z)
    for (int y = 0; y < d.height; ++y)
      for (int x = 0; x < d.width; ++x) v.at(x, y, z) = static_cast<float>(x);
  return v;
}

Volume random_volume(Dims d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.5f, 10.0f);
  Volume v(d);
  for (auto& x : v.data()) x = u(rng);
  return v;
}

PhantomParams small_phantom(std::uint64_t seed) {
  PhantomParams p;
  p.dims = {64, 64, 48};
  p.brain_semi_axes = {27, 29, 21};
  p.lesion_semi_axes = {5, 5, 4};
  p.seed = seed;
  p.subject_id = "s" + std::to_string(seed);
  return p;
}

}  // namespace

TEST_CASE("grid positions") {
  CHECK(grid_positions(64, 40, 20) == std::vector<int>{0, 20, 24});
  CHECK(grid_positions(64, 24, 12) == std::vector<int>{0, 12, 24, 36, 40});
  CHECK(grid_positions(40, 40, 20) == std::vector<int>{0});
  CHECK(grid_positions(10, 3, 100) == std::vector<int>{0, 7});
}

TEST_CASE("fully-brain 64x64 slice gives the 15 enumerated patches") {
  const Dims d{64, 64, 1};
  const auto grid = generate_patch_grid(full_mask(d), PatchParams{}, "s");
  REQUIRE(grid.size() == 15);
  std::size_t i = 0;
  for (int y0 : {0, 12, 24, 36, 40})
    for (int x0 : {0, 20, 24}) {
      CHECK(grid[i].x0 == x0);
      CHECK(grid[i].y0 == y0);
      CHECK(grid[i].z == 0);
      ++i;
    }
}

TEST_CASE("empty mask gives an empty grid; w = W makes every patch middle") {
  const Dims d{40, 30, 3};
  CHECK(generate_patch_grid(BrainMask(d), PatchParams{}).empty());
  const auto grid = generate_patch_grid(full_mask(d), PatchParams::with_size(10, 40));
  CHECK_FALSE(grid.empty());
  for (const auto& s : grid) CHECK(s.category == PatchCategory::middle);
}

TEST_CASE("patch categories") {
  // even width: the midline (W-1)/2 = 47.5 falls between voxels 47 and 48
  CHECK(classify_patch(28, 40, 96) == PatchCategory::middle);
  CHECK(classify_patch(47, 2, 96) == PatchCategory::middle);
  CHECK(classify_patch(0, 40, 96) == PatchCategory::side);
  CHECK(classify_patch(8, 40, 96) == PatchCategory::side);
  CHECK(classify_patch(48, 40, 96) == PatchCategory::side);
  CHECK(classify_patch(56, 40, 96) == PatchCategory::side);
  // odd width: the midline is voxel 48
  CHECK(classify_patch(9, 40, 97) == PatchCategory::middle);
  CHECK(classify_patch(48, 40, 97) == PatchCategory::middle);
  CHECK(classify_patch(48, 1, 97) == PatchCategory::middle);
  CHECK(classify_patch(8, 40, 97) == PatchCategory::side);
  CHECK(classify_patch(49, 40, 97) == PatchCategory::side);
}

TEST_CASE("grid matches a brute-force brain-fraction oracle on phantoms") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto ph = generate_phantom(small_phantom(seed));
    PatchParams p = PatchParams::with_size(16, 32);
    p.stride_z = 3;
    const auto grid = generate_patch_grid(ph.brain, p, "x");
    const Dims d = ph.brain.dims();
    std::vector<PatchSpec> oracle;
    for (int z = 0; z < d.depth; z += 3) {
      bool any = false;
      for (int y = 0; y < d.height && !any; ++y)
        for (int x = 0; x < d.width && !any; ++x) any = ph.brain.at(x, y, z);
      if (!any) continue;
      for (int y0 : grid_positions(d.height, 16, 8))
        for (int x0 : grid_positions(d.width, 32, 16)) {
          int n = 0;
          for (int y = y0; y < y0 + 16; ++y)
            for (int x = x0; x < x0 + 32; ++x) n += ph.brain.at(x, y, z);
          if (n >= 0.5 * 16 * 32) oracle.push_back({"x", z, x0, y0, 16, 32, classify_patch(x0, 32, d.width)});
        }
    }
    CHECK(grid == oracle);
    CHECK(std::is_sorted(grid.begin(), grid.end(),
                         [](const PatchSpec& a, const PatchSpec& b) { return a.order_key() < b.order_key(); }));
    CHECK(generate_patch_grid(ph.brain, p, "x") == grid);
  }
}

TEST_CASE("stack shape and mirrored channel identity") {
  const Dims d{64, 48, 40};
  const Volume v = ramp_x(d);
  PatchParams p;
  const PatchSpec spec{"s", 20, 6, 10, 24, 40, PatchCategory::middle};
  const auto s = extract_stack(v, spec, p);
  CHECK(s.channels == 2);
  CHECK(s.height == 24);
  CHECK(s.width == 40);
  const int mirrored_origin = d.width - spec.x0 - spec.width;
  for (int r = 0; r < 24; ++r)
    for (int j = 0; j < 40; ++j) {
      CHECK(s.at(0, r, j) == static_cast<float>(spec.x0 + j));
      CHECK(s.at(1, r, j) - s.at(0, r, 40 - 1 - j) == static_cast<float>(mirrored_origin - spec.x0));
    }
  p.views = {View::axial, View::coronal, View::sagittal};
  CHECK(extract_stack(v, spec, p).channels == 6);
}

TEST_CASE("constant volume: all channels constant except zero padding") {
  const Dims d{48, 40, 30};
  Volume v(d);
  for (auto& x : v.data()) x = 3.0f;
  PatchParams p;
  p.views = {View::axial, View::coronal, View::sagittal};
  for (int z : {0, 5, 29}) {
    const PatchSpec spec{"s", z, 4, 0, 24, 40, PatchCategory::middle};
    const auto s = extract_stack(v, spec, p);
    for (float x : s.data) CHECK((x == 3.0f || x == 0.0f));
    for (int c = 0; c < 2; ++c)
      for (float x : s.channel(c)) CHECK(x == 3.0f);  // axial pair never pads
  }
  // centred slice: coronal rows z-12..z+11 inside the volume
  const PatchSpec mid{"s", 15, 4, 8, 24, 40, PatchCategory::middle};
  for (float x : extract_stack(v, mid, p).data) CHECK(x == 3.0f);
}

TEST_CASE("reflected volume swaps every channel pair") {
  const Dims d{50, 40, 36};
  const Volume v = random_volume(d, 3);
  const Volume m = mirror_volume(v);
  PatchParams p;
  p.views = {View::axial, View::coronal, View::sagittal};
  for (int x0 : {5, 0, 10}) {
    const PatchSpec spec{"s", 17, x0, 9, 24, 40, PatchCategory::middle};
    const PatchSpec reflected{"s", 17, d.width - x0 - 40, 9, 24, 40, PatchCategory::middle};
    if (!(reflected == spec)) continue;  // only self-mirrored footprints
    const auto a = extract_stack(v, spec, p);
    const auto b = extract_stack(m, spec, p);
    for (int c = 0; c < 6; c += 2) {
      CHECK(std::equal(a.channel(c).begin(), a.channel(c).end(), b.channel(c + 1).begin()));
      CHECK(std::equal(a.channel(c + 1).begin(), a.channel(c + 1).end(), b.channel(c).begin()));
    }
  }
}

TEST_CASE("stack truncation keeps the leading views") {
  const Volume v = random_volume({48, 40, 30}, 4);
  PatchParams p3;
  p3.views = {View::axial, View::coronal, View::sagittal};
  PatchParams p2;
  p2.views = {View::axial, View::coronal};
  const PatchSpec spec{"s", 10, 4, 8, 24, 40, PatchCategory::middle};
  CHECK(extract_stack(v, spec, p3).truncated(4) == extract_stack(v, spec, p2));
  CHECK_THROWS_AS(extract_stack(v, spec, p3).truncated(7), InputError);
}

TEST_CASE("extract_stack rejects out-of-bounds footprints") {
  const Volume v = random_volume({48, 40, 30}, 5);
  CHECK_THROWS_AS(extract_stack(v, PatchSpec{"s", 0, 10, 0, 24, 40, PatchCategory::side}, PatchParams{}), InputError);
  CHECK_THROWS_AS(extract_stack(v, PatchSpec{"s", 30, 0, 0, 24, 40, PatchCategory::side}, PatchParams{}), InputError);
}

TEST_CASE("patch overlap") {
  const Dims d{64, 64, 4};
  const PatchSpec spec{"s", 2, 10, 20, 24, 40, PatchCategory::side};
  VoxelMask one(d);
  one.set(15, 25, 2);
  CHECK(patch_overlap(spec, one) == 1);
  VoxelMask other(d);
  other.set(15, 25, 1);
  other.set(5, 25, 2);
  CHECK(patch_overlap(spec, other) == 0);
  VoxelMask full(d);
  for (std::size_t i = 0; i < d.voxel_count(); ++i) full.set_linear(i);
  CHECK(patch_overlap(spec, full) == 24 * 40);
}

TEST_CASE("labels") {
  const std::int64_t m = 960;
  CHECK(soft_label(0, m) == 0.0);
  CHECK(soft_label(m, m) == 1.0);
  CHECK(soft_label(m / 32, m) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::abs(soft_label(1, 32) - 0.5) < 1e-12);
  CHECK(hard_label(0) == 0.0);
  CHECK(hard_label(1) == 1.0);
  CHECK(hard_label(m) == 1.0);
  CHECK(soft_label(0, m) == hard_label(0));
  CHECK(soft_label(m, m) == hard_label(m));
  std::mt19937_64 rng(12);
  for (int t = 0; t < 2000; ++t) {
    const std::int64_t mm = 1 + static_cast<std::int64_t>(rng() % 5000);
    const std::int64_t o = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(mm + 1));
    CHECK(soft_label(o, mm) >= static_cast<double>(o) / static_cast<double>(mm));
    if (o < mm) CHECK(soft_label(o, mm) < soft_label(o + 1, mm));
  }
  CHECK_THROWS_AS(soft_label(5, 4), InputError);
  CHECK_THROWS_AS(soft_label(0, 0), InputError);
  CHECK_THROWS_AS(hard_label(-1), InputError);
}

TEST_CASE("build_dataset") {
  const auto a = generate_phantom(small_phantom(1));
  const auto b = generate_phantom(small_phantom(2));
  auto control_params = small_phantom(3);
  control_params.placement = LesionPlacement::none;
  const auto c = generate_phantom(control_params);
  const std::vector<DatasetSubject> subjects{{&a.volume, &a.brain, &*a.lesion},
                                             {&b.volume, &b.brain, &*b.lesion},
                                             {&c.volume, &c.brain, nullptr}};
  PatchParams p;
  p.stride_z = 2;
  const DatasetOptions opts{Labeling::soft, 1.0, 99};
  const auto data = build_dataset(subjects, p, opts);
  std::size_t pos = 0;
  std::size_t neg = 0;
  for (const auto& lp : data) {
    CHECK(lp.label >= 0.0);
    CHECK(lp.label <= 1.0);
    CHECK((lp.overlap == 0) == (lp.label == 0.0));
    if (lp.overlap > 0) {
      ++pos;
      const auto& planted = lp.spec.subject_id == a.volume.subject_id() ? *a.lesion : *b.lesion;
      CHECK(patch_overlap(lp.spec, planted.mask) > 0);
    } else {
      ++neg;
    }
  }
  CHECK(pos > 0);
  CHECK(pos == neg);
  // positives first
  for (std::size_t i = 0; i < data.size(); ++i) CHECK((data[i].overlap > 0) == (i < pos));

  const auto again = build_dataset(subjects, p, opts);
  CHECK(dataset_checksum(again) == dataset_checksum(data));
  auto other = opts;
  other.seed = 100;
  CHECK(dataset_checksum(build_dataset(subjects, p, other)) != dataset_checksum(data));

  auto hard = opts;
  hard.labeling = Labeling::hard;
  for (const auto& lp : build_dataset(subjects, p, hard)) CHECK((lp.label == 0.0 || lp.label == 1.0));

  auto twice = opts;
  twice.neg_ratio = 2.0;
  const auto d2 = build_dataset(subjects, p, twice);
  CHECK(d2.size() == 3 * pos);

  CHECK_THROWS_AS(build_dataset(subjects, p, DatasetOptions{Labeling::soft, 0.0, 1}), InputError);
  VoxelMask unreachable(a.brain.dims());
  unreachable.set(0, 0, 0);
  const LesionMask bad{unreachable, MaskKind::ellipsoid};
  const std::vector<DatasetSubject> broken{{&a.volume, &a.brain, &bad}};
  CHECK_THROWS_WITH_AS(build_dataset(broken, p, opts), doctest::Contains("unreachable lesion"), InputError);
}

TEST_CASE("patch cache round trip and matching") {
  const auto ph = generate_phantom(small_phantom(7));
  PatchParams p;
  p.stride_z = 4;
  p.views = {View::axial, View::coronal, View::sagittal};
  const auto cache = build_patch_cache(ph.volume, ph.brain, p, "s7");
  CHECK(cache.specs.size() == cache.stacks.size());
  CHECK(cache.specs == generate_patch_grid(ph.brain, p, "s7"));
  const auto dir = test::scratch_dir("patch_cache");
  save_patch_cache(cache, dir / "c.patches");
  const auto back = load_patch_cache(dir / "c.patches");
  CHECK(back.subject_id == "s7");
  CHECK(back.params == p);
  CHECK(back.specs == cache.specs);
  CHECK(back.stacks == cache.stacks);
  CHECK(back.matches(p, ph.volume.checksum()));
  PatchParams axial = p;
  axial.views = {View::axial};
  CHECK(back.matches(axial, ph.volume.checksum()));
  PatchParams sag = p;
  sag.views = {View::axial, View::sagittal};
  CHECK_FALSE(back.matches(sag, ph.volume.checksum()));
  CHECK_FALSE(back.matches(p, ph.volume.checksum() + 1));
  PatchParams stride = p;
  stride.stride_z = 1;
  CHECK_FALSE(back.matches(stride, ph.volume.checksum()));
  {
    std::ofstream out(dir / "bad.patches", std::ios::binary);
    out << "FCDPATCH but truncated";
  }
  CHECK_THROWS_AS(load_patch_cache(dir / "bad.patches"), InputError);
}

TEST_CASE("patch params validation") {
  PatchParams p;
  CHECK_NOTHROW(p.validate());
  p.views = {View::coronal};
  CHECK_THROWS_AS(p.validate(), InputError);
  p = PatchParams{};
  p.min_brain_fraction = 1.5;
  CHECK_THROWS_AS(p.validate(), InputError);
  p = PatchParams{};
  const Dims small{30, 30, 30};
  CHECK_THROWS_AS(p.validate(&small), InputError);
  CHECK(canonical_views({View::sagittal, View::axial, View::sagittal}) == std::vector<View>{View::axial, View::sagittal});
  CHECK_THROWS_AS(canonical_views({View::coronal}), InputError);
  CHECK(parse_labeling("soft") == Labeling::soft);
}
