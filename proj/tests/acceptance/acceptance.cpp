// Acceptance suite: one PASS/FAIL line per criterion, exit code 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "fcd/annotation.hpp"
#include "fcd/evaluation.hpp"
#include "fcd/intensity_norm.hpp"
#include "fcd/models.hpp"
#include "fcd/nn/layers.hpp"
#include "fcd/patching.hpp"
#include "fcd/phantom.hpp"

using namespace fcd;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(),
              seconds_since(t0));
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// --- shared helpers -------------------------------------------------------

struct PreparedCohort {
  std::vector<CohortMember> members;
  InMemoryAnnotations annotations;
  Cohort cohort;
};

std::unique_ptr<PreparedCohort> prepare(const CohortCounts& counts, const PhantomParams& base, std::uint64_t seed) {
  auto out = std::make_unique<PreparedCohort>();
  out->members = synthesize_cohort(counts, base, seed);
  std::vector<MaskedVolume> mv;
  for (auto& m : out->members) mv.push_back({&m.phantom.volume, &m.phantom.brain});
  const auto standard = fit_histogram_standard(mv);
  for (auto& m : out->members) {
    auto v = z_normalize(apply_histogram_standard(m.phantom.volume, m.phantom.brain, standard), m.phantom.brain);
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

PhantomParams reduced_phantom() {
  PhantomParams p;
  p.dims = {64, 64, 48};
  p.brain_semi_axes = {27, 29, 21};
  p.lesion_semi_axes = {5, 5, 4};
  return p;
}

LooOptions reduced_options() {
  LooOptions o;
  o.k = 5;
  o.seed = 21;
  o.stride_z = 4;
  o.classifier.epochs = 3;
  o.autoencoder.epochs = 2;
  o.max_pretrain_stacks = 96;
  o.head_channels = {4, 8};
  o.latent_dim = 16;
  return o;
}

int workers() { return std::max(1, static_cast<int>(std::thread::hardware_concurrency())); }

// --- criteria ---------------------------------------------------------------

Outcome geometry_oracle() {
  const auto t0 = Clock::now();
  const Dims dims{48, 48, 48};
  Parallelepiped box;
  box.x_range = {0, 40};
  box.y_range = {0, 40};
  box.z_range = {0, 40};
  const auto mask = inscribe_ellipsoid(box, dims);
  std::size_t library = 0;
  for (std::size_t i = 0; i < mask.mask.bits().size(); ++i) library += mask.mask.test(i) ? 1 : 0;
  // brute force: centre 20, semi-axis 20.5 (half the voxel extent)
  std::size_t brute = 0;
  for (int z = 0; z < 41; ++z)
    for (int y = 0; y < 41; ++y)
      for (int x = 0; x < 41; ++x) {
        const double u = (x - 20.0) / 20.5, v = (y - 20.0) / 20.5, w = (z - 20.0) / 20.5;
        brute += u * u + v * v + w * w <= 1.0 ? 1 : 0;
      }
  const double expected = std::numbers::pi / 6.0 * 41.0 * 41.0 * 41.0;
  const double rel = std::abs(static_cast<double>(library) - expected) / expected;
  const double t = seconds_since(t0);
  return {library == brute && rel <= 0.05 && t < 5.0,
          fmt("count %zu, brute force %zu, pi/6*41^3 = %.1f, relative error %.4f (<= 0.05), %.2f s (< 5 s)", library,
              brute, expected, rel, t)};
}

Outcome soft_label_exactness() {
  double worst = 0.0;
  for (std::int64_t m = 32; m <= 32 * 1000; m += 32) worst = std::max(worst, std::abs(soft_label(m / 32, m) - 0.5));
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<std::int64_t> mdist(1, 100000);
  int violations = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::int64_t m = mdist(rng);
    std::uniform_int_distribution<std::int64_t> odist(0, m);
    std::int64_t a = odist(rng), b = odist(rng);
    if (a > b) std::swap(a, b);
    const double la = soft_label(a, m), lb = soft_label(b, m);
    if (a < b && !(la < lb)) ++violations;
    if (la < static_cast<double>(a) / m - 1e-15) ++violations;
    if (soft_label(0, m) != hard_label(0) || soft_label(m, m) != hard_label(m)) ++violations;
  }
  return {worst <= 1e-12 && violations == 0,
          fmt("max |soft(m/32, m) - 0.5| = %.2e (<= 1e-12); %d monotonicity/endpoint violations in 1e4 pairs", worst,
              violations)};
}

bool selection_oracle(const SubjectScores& s, int k) {
  std::vector<bool> used(s.patches.size(), false);
  for (int r = 0; r < k && r < static_cast<int>(s.patches.size()); ++r) {
    std::size_t best = s.patches.size();
    for (std::size_t i = 0; i < s.patches.size(); ++i) {
      if (used[i]) continue;
      if (best == s.patches.size()) {
        best = i;
        continue;
      }
      const auto& a = s.patches[i];
      const auto& b = s.patches[best];
      if (a.probability > b.probability || (a.probability == b.probability && a.spec.order_key() < b.spec.order_key()))
        best = i;
    }
    used[best] = true;
    if (s.patches[best].overlap > 0) return true;
  }
  return false;
}

Outcome topk_oracle() {
  const auto t0 = Clock::now();
  int mismatches = 0, rank_breaks = 0, successes = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    std::uniform_real_distribution<double> u;
    std::uniform_int_distribution<int> coarse(0, 19);
    SubjectScores s{"fuzz", {}};
    for (int i = 0; i < 1000; ++i) {
      ScoredPatch p;
      p.spec = {"fuzz", i / 40, (i % 4) * 20, (i / 4 % 10) * 12, 24, 40, PatchCategory::side};
      p.probability = seed % 2 ? coarse(rng) / 19.0 : u(rng);
      p.overlap = u(rng) < 0.003 ? 1 + static_cast<int>(u(rng) * 50) : 0;
      s.patches.push_back(std::move(p));
    }
    std::shuffle(s.patches.begin(), s.patches.end(), rng);
    const bool ok = top_k_success(s, 20);
    successes += ok;
    mismatches += ok != selection_oracle(s, 20);
    for (const auto& f : std::vector<std::function<double(double)>>{[](double p) { return std::exp(5 * p); },
                                                                     [](double p) { return p * p * p - 2.0; },
                                                                     [](double p) { return std::atan(p) / 7; }}) {
      auto t = s;
      for (auto& p : t.patches) p.probability = f(p.probability);
      rank_breaks += top_k_success(t, 20) != ok;
    }
  }
  const double t = seconds_since(t0);
  return {mismatches == 0 && rank_breaks == 0 && t < 10.0,
          fmt("%d oracle mismatches, %d rank-invariance breaks over 100 x 1000 patches (%d successes), %.2f s (< 10 s)",
              mismatches, rank_breaks, successes, t)};
}

Outcome normalization() {
  double worst_mean = 0, worst_sd = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    PhantomParams p;
    p.seed = seed;
    p.placement = seed % 2 ? LesionPlacement::random_temporal : LesionPlacement::random_non_temporal;
    const auto ph = generate_phantom(p);
    const auto z = z_normalize(ph.volume, ph.brain);
    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < z.data().size(); ++i)
      if (ph.brain.test(i)) {
        sum += z.data()[i];
        ++n;
      }
    const double mean = sum / n;
    for (std::size_t i = 0; i < z.data().size(); ++i)
      if (ph.brain.test(i)) sq += (z.data()[i] - mean) * (z.data()[i] - mean);
    worst_mean = std::max(worst_mean, std::abs(mean));
    worst_sd = std::max(worst_sd, std::abs(std::sqrt(sq / n) - 1.0));
  }

  int violations = 0;
  int volumes = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(500 + seed);
    std::lognormal_distribution<float> ln(std::log(50.0f + 10.0f * seed), 0.3f + 0.05f * (seed % 5));
    std::vector<Volume> vols;
    std::vector<BrainMask> masks;
    for (int v = 0; v < 3; ++v) {
      const Dims d{12, 12, 10};
      std::vector<float> data(d.voxel_count());
      for (auto& x : data) x = ln(rng);
      vols.emplace_back(d, Spacing{}, std::move(data), "f");
      masks.push_back(compute_brain_mask(vols.back()));
    }
    std::vector<MaskedVolume> mv;
    for (int v = 0; v < 3; ++v) mv.push_back({&vols[v], &masks[v]});
    const auto standard = fit_histogram_standard(mv);
    for (int v = 0; v < 3; ++v) {
      ++volumes;
      const auto out = apply_histogram_standard(vols[v], masks[v], standard);
      std::vector<std::size_t> order(vols[v].data().size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(),
                [&](std::size_t a, std::size_t b) { return vols[v].data()[a] < vols[v].data()[b]; });
      for (std::size_t i = 1; i < order.size(); ++i) {
        const float in_a = vols[v].data()[order[i - 1]], in_b = vols[v].data()[order[i]];
        const float out_a = out.data()[order[i - 1]], out_b = out.data()[order[i]];
        if (in_a < in_b && out_a > out_b) ++violations;
      }
    }
  }
  return {worst_mean < 1e-6 && worst_sd < 1e-6 && violations == 0,
          fmt("max |mean| %.2e (< 1e-6), max |sd - 1| %.2e (< 1e-6); %d order violations over %d fuzz volumes",
              worst_mean, worst_sd, violations, volumes)};
}

double relative_error(const nn::Mat& a, const nn::Mat& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0;
  for (auto views : {std::vector<View>{View::axial}, std::vector<View>{View::axial, View::coronal, View::sagittal}}) {
    EncoderConfig cfg;
    cfg.views = views;
    cfg.height = 12;
    cfg.width = 20;
    cfg.head_channels = {2, 4};
    cfg.latent_dim = 8;
    cfg.seed = 5;
    ClassifierModel model(cfg, 11);
    // evaluate away from ReLU kinks: zero-initialised biases put them on one
    nn::Rng brng(1);
    for (nn::Param* p : model.parameters())
      if (p->value.cols() == 1) nn::fill_normal(p->value, brng, 0.1);
    std::mt19937_64 rng(2);
    std::normal_distribution<float> n;
    std::vector<PatchStack> stacks;
    for (int i = 0; i < 4; ++i) {
      PatchStack s(cfg.channels(), cfg.height, cfg.width);
      for (auto& v : s.data) v = n(rng);
      stacks.push_back(std::move(s));
    }
    std::vector<const PatchStack*> ptrs;
    for (const auto& s : stacks) ptrs.push_back(&s);
    nn::Vec targets(4);
    targets << 1.0, 0.0, 0.7, 0.2;
    model.loss_and_gradients(ptrs, targets);
    const double eps = 1e-6;
    for (nn::Param* p : model.parameters()) {
      nn::Mat numeric(p->value.rows(), p->value.cols());
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        const double keep = p->value(i);
        p->value(i) = keep + eps;
        const double up = model.loss(ptrs, targets);
        p->value(i) = keep - eps;
        const double down = model.loss(ptrs, targets);
        p->value(i) = keep;
        numeric(i) = (up - down) / (2 * eps);
      }
      worst = std::max(worst, relative_error(p->grad, numeric));
    }
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-3 && t < 60.0,
          fmt("max per-tensor relative error %.2e (<= 1e-3), latent 8, heads [2,4], %.2f s (< 60 s)", worst, t)};
}

Outcome pretraining_effect() {
  std::vector<CohortSubject> pool;
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    PhantomParams p;
    p.seed = 300 + seed;
    p.placement = LesionPlacement::random_non_temporal;
    auto ph = generate_phantom(p);
    pool.push_back({"u" + std::to_string(seed), Localization::non_temporal, z_normalize(ph.volume, ph.brain), ph.brain});
  }
  const auto stacks = pretraining_stacks(pool, PatchParams{}, 200);
  TrainConfig t = TrainConfig::autoencoder_defaults();
  t.epochs = 10;
  t.seed = 1;
  const auto ae = pretrain_autoencoder(stacks, EncoderConfig{}, t);
  const double ratio = ae.loss_trace.back() / ae.initial_loss;
  return {stacks.size() == 200 && ae.loss_trace.size() == 10 && ratio < 0.5,
          fmt("%zu stacks, 10 epochs: initial MSE %.4f, final %.4f, ratio %.3f (< 0.5)", stacks.size(), ae.initial_loss,
              ae.loss_trace.back(), ratio)};
}

Outcome phantom_benchmark() {
  const auto t0 = Clock::now();
  auto pc = prepare({6, 6, 4, 6}, PhantomParams{}, 7);
  LooOptions o;
  o.k = 5;
  o.seed = 1;
  o.classifier.batch_size = 32;
  o.workers = workers();
  const auto r = run_loo(pc->cohort, ablation_config('e'), o);
  std::string missed;
  for (const auto& [id, ok] : r.per_subject)
    if (!ok) missed += (missed.empty() ? "" : ",") + id;
  const double t = seconds_since(t0);
  return {r.score >= 0.75 && t <= 900.0,
          fmt("12 labeled / 6 unlabeled / 4 controls, config e, k=5: score %.3f (>= 0.75), missed [%s], %.0f s "
              "(<= 900 s, %d worker(s))",
              r.score, missed.c_str(), t, o.workers)};
}

bool same_report(const TopKReport& a, const TopKReport& b) {
  if (a.config_id != b.config_id || a.score != b.score || a.per_subject != b.per_subject ||
      a.data_checksum != b.data_checksum || a.pretrain_checksum != b.pretrain_checksum || a.folds.size() != b.folds.size())
    return false;
  for (std::size_t i = 0; i < a.folds.size(); ++i)
    if (a.folds[i].seed != b.folds[i].seed || a.folds[i].train_checksum != b.folds[i].train_checksum) return false;
  return true;
}

Outcome ablation_machinery() {
  auto pc = prepare({2, 2, 1, 2}, reduced_phantom(), 13);
  auto o = reduced_options();
  const auto ladder = ablation_ladder();
  const auto first = run_ablation(pc->cohort, ladder, o);
  o.workers = 2;
  const auto second = run_ablation(pc->cohort, ladder, o);
  bool ok = first.size() == 7 && second.size() == 7;
  std::string scores;
  for (std::size_t i = 0; ok && i < 7; ++i) {
    ok = ok && first[i].config_id == std::string(1, static_cast<char>('a' + i));
    ok = ok && first[i].score >= 0.0 && first[i].score <= 1.0;
    ok = ok && same_report(first[i], second[i]);
    scores += first[i].config_id + "=" + format_score(first[i].score) + " ";
  }
  return {ok, "rows " + scores + "| bit-identical across two runs: " + (ok ? "yes" : "no")};
}

Outcome hygiene_audit() {
  auto pc = prepare({2, 2, 1, 2}, reduced_phantom(), 17);
  auto o = reduced_options();
  o.audit = true;
  std::size_t folds = 0, verified = 0, leaks = 0, accesses = 0;
  for (char id : {'a', 'e'}) {
    LooOutputs out;
    const auto r = run_loo(pc->cohort, ablation_config(id), o, &out);
    folds += r.folds.size();
    for (const auto& f : r.folds) {
      verified += f.hygiene_verified ? 1 : 0;
      leaks += std::count(f.training_subjects.begin(), f.training_subjects.end(), f.held_out);
    }
    for (const auto& a : out.accesses) {
      ++accesses;
      if (a.subject == a.fold && a.phase == FoldPhase::training) ++leaks;
    }
    if (!r.audited) ++leaks;
  }
  return {folds == 8 && verified == folds && leaks == 0,
          fmt("%zu folds (configs a, e), %zu checksum-verified, %zu annotation accesses, %zu leaks", folds, verified,
              accesses, leaks)};
}

}  // namespace

int main() {
  report(1, "inscribed ellipsoid geometry", geometry_oracle);
  report(2, "soft-label exactness", soft_label_exactness);
  report(3, "top-k oracle equivalence", topk_oracle);
  report(4, "normalization", normalization);
  report(5, "gradient check", gradient_check);
  report(6, "autoencoder pretraining effect", pretraining_effect);
  report(7, "end-to-end phantom benchmark", phantom_benchmark);
  report(8, "ablation machinery", ablation_machinery);
  report(9, "fold hygiene audit", hygiene_audit);
  std::printf("%s: %d of 9 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
