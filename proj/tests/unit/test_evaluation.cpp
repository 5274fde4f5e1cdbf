#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "fcd/error.hpp"
#include "fcd/evaluation.hpp"
#include "fcd/intensity_norm.hpp"
#include "fcd/phantom.hpp"
#include "test_util.hpp"

using namespace fcd;

namespace {

ScoredPatch scored(int z, int y0, int x0, double p, std::int64_t overlap) {
  ScoredPatch s;
  s.spec = {"s", z, x0, y0, 16, 32, PatchCategory::side};
  s.probability = p;
  s.overlap = overlap;
  return s;
}

SubjectScores random_scores(std::mt19937_64& rng, int n, double positive_rate, bool coarse) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> level(0, 9);
  SubjectScores s{"fuzz", {}};
  for (int i = 0; i < n; ++i) {
    const double p = coarse ? level(rng) / 10.0 : u(rng);
    s.patches.push_back(scored(i / 50, (i / 5) % 10, i % 5, p, u(rng) < positive_rate ? 7 : 0));
  }
  return s;
}

/// Repeated argmax selection, no sorting.
bool selection_oracle(const SubjectScores& s, int k) {
  std::vector<bool> used(s.patches.size(), false);
  for (int round = 0; round < k && round < static_cast<int>(s.patches.size()); ++round) {
    std::size_t best = s.patches.size();
    for (std::size_t i = 0; i < s.patches.size(); ++i) {
      if (used[i]) continue;
      if (best == s.patches.size()) {
        best = i;
        continue;
      }
      const auto& a = s.patches[i];
      const auto& b = s.patches[best];
      if (a.probability > b.probability ||
          (a.probability == b.probability && a.spec.order_key() < b.spec.order_key()))
        best = i;
    }
    used[best] = true;
    if (s.patches[best].overlap > 0) return true;
  }
  return false;
}

struct SmallCohort {
  std::vector<CohortMember> members;
  InMemoryAnnotations annotations;
  Cohort cohort;
};

std::unique_ptr<SmallCohort> small_cohort(int temporal, int non_temporal, int controls, int unlabeled) {
  auto out = std::make_unique<SmallCohort>();
  PhantomParams base;
  base.dims = {64, 64, 48};
  base.brain_semi_axes = {27, 29, 21};
  base.lesion_semi_axes = {5, 5, 4};
  out->members = synthesize_cohort({temporal, non_temporal, controls, unlabeled}, base, 3);
  std::vector<MaskedVolume> mv;
  for (auto& m : out->members) mv.push_back({&m.phantom.volume, &m.phantom.brain});
  const auto h = fit_histogram_standard(mv);
  for (auto& m : out->members) {
    auto v = z_normalize(apply_histogram_standard(m.phantom.volume, m.phantom.brain, h), m.phantom.brain);
    CohortSubject s{m.phantom.volume.subject_id(), Localization::non_temporal, std::move(v), m.phantom.brain};
    if (m.role == SubjectRole::labeled) {
      s.localization = m.phantom.annotation->localization;
      out->annotations.add(*m.phantom.annotation);
      out->cohort.labeled.push_back(std::move(s));
    } else if (m.role == SubjectRole::unlabeled) {
      out->cohort.unlabeled.push_back(std::move(s));
    } else {
      out->cohort.controls.push_back(std::move(s));
    }
  }
  out->cohort.annotations = &out->annotations;
  return out;
}

LooOptions fast_options() {
  LooOptions o;
  o.k = 5;
  o.seed = 12;
  o.stride_z = 4;
  o.classifier.epochs = 3;
  o.autoencoder.epochs = 2;
  o.max_pretrain_stacks = 64;
  o.head_channels = {4, 8};
  o.latent_dim = 16;
  return o;
}

void check_same(const TopKReport& a, const TopKReport& b) {
  CHECK(a.config_id == b.config_id);
  CHECK(a.score == b.score);
  CHECK(a.per_subject == b.per_subject);
  CHECK(a.data_checksum == b.data_checksum);
  CHECK(a.pretrain_checksum == b.pretrain_checksum);
  REQUIRE(a.folds.size() == b.folds.size());
  for (std::size_t i = 0; i < a.folds.size(); ++i) {
    CHECK(a.folds[i].seed == b.folds[i].seed);
    CHECK(a.folds[i].train_checksum == b.folds[i].train_checksum);
  }
}

}  // namespace

TEST_CASE("top-k examples") {
  SubjectScores s{"s", {scored(0, 0, 0, 0.9, 0), scored(1, 0, 0, 0.8, 5)}};
  CHECK(top_k_success(s, 2));
  CHECK_FALSE(top_k_success(s, 1));
  CHECK(top_k_success(s, 50));
  CHECK_THROWS_AS(top_k_success(s, 0), InputError);
  CHECK_THROWS_AS(top_k_success(SubjectScores{"e", {}}, 3), InputError);
}

TEST_CASE("ties resolve by (z, y0, x0)") {
  SubjectScores s{"s", {scored(2, 0, 0, 0.5, 3), scored(1, 4, 0, 0.5, 0), scored(1, 0, 8, 0.5, 0)}};
  CHECK_FALSE(top_k_success(s, 2));
  CHECK(top_k_success(s, 3));
  std::reverse(s.patches.begin(), s.patches.end());
  CHECK_FALSE(top_k_success(s, 2));
}

TEST_CASE("top-k matches a selection oracle on 100 fuzz seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const auto s = random_scores(rng, 1000, 0.002, seed % 2 == 1);
    CHECK(top_k_success(s, 20) == selection_oracle(s, 20));
  }
}

TEST_CASE("top-k depends on ranks only, grows with k and ignores input order") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(100 + seed);
    auto s = random_scores(rng, 300, 0.01, seed % 3 == 0);
    auto t = s;
    for (auto& p : t.patches) p.probability = std::exp(3.0 * p.probability) - 0.5;
    auto shuffled = s;
    std::shuffle(shuffled.patches.begin(), shuffled.patches.end(), rng);
    bool previous = false;
    for (int k = 1; k <= 40; ++k) {
      const bool ok = top_k_success(s, k);
      CHECK(ok == top_k_success(t, k));
      CHECK(ok == top_k_success(shuffled, k));
      if (previous) CHECK(ok);
      previous = ok;
    }
  }
}

TEST_CASE("score arithmetic and formatting") {
  auto make = [](int subjects, int hits) {
    std::vector<SubjectScores> all;
    for (int i = 0; i < subjects; ++i)
      all.push_back({"s" + std::to_string(i), {scored(0, 0, 0, 0.5, i < hits ? 1 : 0)}});
    return all;
  };
  auto r = top_k_score(make(15, 3), 20);
  CHECK(format_score(r.score) == "0.200");
  CHECK(r.per_subject.size() == 15);
  r = top_k_score(make(15, 11), 20);
  CHECK(format_score(r.score) == "0.733");
  CHECK(top_k_score(make(4, 4), 1).score == 1.0);
  auto all = make(15, 11);
  std::reverse(all.begin(), all.end());
  CHECK(top_k_score(all, 20).score == r.score);
  CHECK_THROWS_AS(top_k_score({}, 20), InputError);
}

TEST_CASE("ablation ladder is cumulative") {
  const auto ladder = ablation_ladder();
  REQUIRE(ladder.size() == 7);
  CHECK(ladder[0].labeling == Labeling::hard);
  CHECK(ladder[0].patch_height == 16);
  CHECK(ladder[0].patch_width == 32);
  CHECK(ladder[1].labeling == Labeling::soft);
  CHECK(ladder[2].patch_height == 24);
  CHECK(ladder[2].patch_width == 40);
  CHECK_FALSE(ladder[2].pretrain);
  CHECK(ladder[3].pretrain);
  CHECK_FALSE(ladder[3].ensemble);
  CHECK(ladder[4].ensemble);
  CHECK(ladder[4].views.size() == 1);
  CHECK(ladder[5].views == std::vector<View>{View::axial, View::coronal});
  CHECK(ladder[6].views.size() == 3);
  CHECK(parse_ablation_list("a..g").size() == 7);
  CHECK(parse_ablation_list("b-d").size() == 3);
  const auto picked = parse_ablation_list("a, c,E");
  REQUIRE(picked.size() == 3);
  CHECK(picked[2].id == 'e');
  CHECK_THROWS_AS(parse_ablation_list("h"), InputError);
  CHECK_THROWS_AS(parse_ablation_list("a,,b"), InputError);
  CHECK_THROWS_AS(parse_ablation_list(""), InputError);
}

TEST_CASE("LOO on 3 phantoms: 3 folds, hygiene, determinism, audited accesses") {
  auto sc = small_cohort(2, 1, 1, 0);
  auto o = fast_options();
  o.audit = true;
  LooOutputs out;
  const auto r = run_loo(sc->cohort, ablation_config('a'), o, &out);
  CHECK(r.folds.size() == 3);
  CHECK(r.per_subject.size() == 3);
  CHECK(r.audited);
  CHECK(r.score >= 0.0);
  CHECK(r.score <= 1.0);
  for (const auto& f : r.folds) {
    CHECK(f.hygiene_verified);
    CHECK(std::find(f.training_subjects.begin(), f.training_subjects.end(), f.held_out) == f.training_subjects.end());
    CHECK(f.training_subjects.size() == 2);
  }
  REQUIRE(out.scores.size() == 3);
  for (const auto& s : out.scores) {
    CHECK_FALSE(s.patches.empty());
    for (const auto& p : s.patches) {
      CHECK(p.probability >= 0.0);
      CHECK(p.probability <= 1.0);
    }
  }
  // the held-out annotation is read only while scoring
  for (const auto& a : out.accesses) {
    if (a.subject == a.fold) CHECK(a.phase == FoldPhase::scoring);
    else CHECK(a.phase == FoldPhase::training);
  }
  CHECK(std::count_if(out.accesses.begin(), out.accesses.end(),
                      [](const AnnotationAccess& a) { return a.phase == FoldPhase::scoring; }) == 3);

  o.audit = false;
  o.workers = 2;
  check_same(run_loo(sc->cohort, ablation_config('a'), o), r);
}

TEST_CASE("LOO preconditions") {
  auto sc = small_cohort(2, 1, 0, 1);
  const auto o = fast_options();
  CHECK_THROWS_AS(run_loo(sc->cohort, ablation_config('e'), o), InputError);
  Cohort one = {};
  one.labeled.push_back(sc->cohort.labeled[0]);
  one.annotations = &sc->annotations;
  CHECK_THROWS_AS(run_loo(one, ablation_config('a'), o), InputError);
  Cohort none = sc->cohort;
  none.annotations = nullptr;
  CHECK_THROWS_AS(run_loo(none, ablation_config('a'), o), InputError);
}

TEST_CASE("ablation rows repeat exactly and reuse the patch cache") {
  auto sc = small_cohort(2, 2, 1, 2);
  auto o = fast_options();
  o.cache_dir = test::scratch_dir("eval_cache");
  const std::vector<AblationConfig> configs{ablation_config('a'), ablation_config('e')};
  const auto first = run_ablation(sc->cohort, configs, o);
  const auto second = run_ablation(sc->cohort, configs, o);
  REQUIRE(first.size() == 2);
  REQUIRE(second.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) check_same(first[i], second[i]);
  CHECK(first[1].pretrain_checksum != 0);
  CHECK(first[0].pretrain_checksum == 0);
  for (const auto& f : first[1].folds) {
    // ensemble members see only their own localization group
    CHECK(f.training_subjects.size() == 1);
  }
  o.cache_dir.clear();
  check_same(run_loo(sc->cohort, ablation_config('a'), o), first[0]);
}

TEST_CASE("report, score table and subject scores round trip") {
  const auto dir = test::scratch_dir("eval_io");
  TopKReport r;
  r.config_id = "e";
  r.k = 5;
  r.per_subject = {{"sub-a", true}, {"sub-b", false}};
  r.score = 0.5;
  r.base_seed = 77;
  r.data_checksum = 0xfedcba9876543210ULL;
  r.pretrain_checksum = 42;
  r.audited = true;
  FoldRecord f;
  f.held_out = "sub-a";
  f.localization = Localization::temporal;
  f.seed = 0x8000000000000001ULL;
  f.train_checksum = 5;
  f.train_size = 10;
  f.training_subjects = {"sub-b"};
  f.hygiene_verified = true;
  r.folds.push_back(f);
  save_report(r, dir / "r.json");
  const auto back = load_report(dir / "r.json");
  check_same(back, r);
  CHECK(back.k == 5);
  CHECK(back.base_seed == 77);
  CHECK(back.audited);
  REQUIRE(back.folds.size() == 1);
  CHECK(back.folds[0].localization == Localization::temporal);
  CHECK(back.folds[0].training_subjects == f.training_subjects);
  CHECK(back.folds[0].hygiene_verified);

  std::vector<TopKReport> rows(2, r);
  rows[0].config_id = "a";
  rows[0].score = 11.0 / 15.0;
  save_score_table(rows, dir / "t.csv");
  const auto text = test::read_bytes(dir / "t.csv");
  CHECK(std::string(text.begin(), text.end()) == "config_id,score\na,0.733\ne,0.500\n");

  SubjectScores s{"sub-a", {scored(3, 4, 5, 0.1 + 1e-13, 0), scored(1, 2, 3, 2.0 / 3.0, 9)}};
  s.patches[1].spec.category = PatchCategory::middle;
  save_subject_scores(s, dir / "s.csv");
  const auto sb = load_subject_scores(dir / "s.csv");
  CHECK(sb.subject_id == "sub-a");
  REQUIRE(sb.patches.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(sb.patches[i].probability == s.patches[i].probability);
    CHECK(sb.patches[i].overlap == s.patches[i].overlap);
    CHECK(sb.patches[i].spec.order_key() == s.patches[i].spec.order_key());
    CHECK(sb.patches[i].spec.category == s.patches[i].spec.category);
  }
  CHECK_THROWS_AS(load_report(dir / "missing.json"), InputError);
  std::ofstream(dir / "junk.json") << "{\"format\": 3}";
  CHECK_THROWS_AS(load_report(dir / "junk.json"), InputError);
}
