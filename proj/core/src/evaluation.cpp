#include "fcd/evaluation.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "fcd/checksum.hpp"
#include "fcd/error.hpp"

namespace fcd {

// ---------------------------------------------------------------------------
// ablation ladder

AblationConfig ablation_config(char id) {
  if (id < 'a' || id > 'g') throw InputError(std::string("unknown ablation config '") + id + "'");
  AblationConfig c;  // (a) baseline
  c.id = id;
  if (id >= 'b') c.labeling = Labeling::soft;
  if (id >= 'c') {
    c.patch_height = 24;
    c.patch_width = 40;
  }
  if (id >= 'd') c.pretrain = true;
  if (id >= 'e') c.ensemble = true;
  if (id >= 'f') c.views.push_back(View::coronal);
  if (id >= 'g') c.views.push_back(View::sagittal);
  return c;
}

std::vector<AblationConfig> ablation_ladder() {
  std::vector<AblationConfig> out;
  for (char id = 'a'; id <= 'g'; ++id) out.push_back(ablation_config(id));
  return out;
}

std::vector<AblationConfig> parse_ablation_list(std::string_view text) {
  std::vector<AblationConfig> out;
  auto is_id = [](char c) { return c >= 'a' && c <= 'g'; };
  std::string s;
  for (char c : text) {
    if (c != ' ') s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (s.size() == 4 && is_id(s[0]) && s.substr(1, 2) == ".." && is_id(s[3])) {
    for (char c = s[0]; c <= s[3]; ++c) out.push_back(ablation_config(c));
  } else if (s.size() == 3 && is_id(s[0]) && s[1] == '-' && is_id(s[2])) {
    for (char c = s[0]; c <= s[2]; ++c) out.push_back(ablation_config(c));
  } else {
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.size() != 1 || !is_id(item[0])) throw InputError("bad ablation selector '" + std::string(text) + "'");
      out.push_back(ablation_config(item[0]));
    }
  }
  if (out.empty()) throw InputError("empty ablation selector");
  return out;
}

// ---------------------------------------------------------------------------
// Top-k

bool top_k_success(const SubjectScores& scores, int k) {
  if (k < 1) throw InputError("k must be >= 1");
  if (scores.patches.empty()) throw InputError("top_k_success: empty patch list for " + scores.subject_id);
  const auto& p = scores.patches;
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto take = std::min(static_cast<std::size_t>(k), p.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (p[a].probability != p[b].probability) return p[a].probability > p[b].probability;
                      return p[a].spec.order_key() < p[b].spec.order_key();
                    });
  return std::any_of(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take),
                     [&](std::size_t i) { return p[i].overlap > 0; });
}

TopKReport top_k_score(std::span<const SubjectScores> all, int k) {
  if (all.empty()) throw InputError("top_k_score: no subjects");
  TopKReport r;
  r.k = k;
  int hits = 0;
  for (const auto& s : all) {
    const bool ok = top_k_success(s, k);
    r.per_subject[s.subject_id] = ok;
    hits += ok ? 1 : 0;
  }
  r.score = static_cast<double>(hits) / static_cast<double>(all.size());
  return r;
}

// ---------------------------------------------------------------------------
// annotation sources

Annotation InMemoryAnnotations::load(const std::string& subject_id) const {
  const auto it = items_.find(subject_id);
  if (it == items_.end()) throw InputError("no annotation for subject " + subject_id);
  return it->second;
}

Annotation FileAnnotations::load(const std::string& subject_id) const {
  const auto it = paths_.find(subject_id);
  if (it == paths_.end()) throw InputError("no annotation for subject " + subject_id);
  return load_annotation(it->second);
}

// ---------------------------------------------------------------------------
// LOO

PatchParams patch_params_for(const AblationConfig& config, const LooOptions& options) {
  PatchParams p = PatchParams::with_size(config.patch_height, config.patch_width);
  p.stride_z = options.stride_z;
  p.min_brain_fraction = options.min_brain_fraction;
  p.views = canonical_views(config.views);
  return p;
}

EncoderConfig encoder_config_for(const AblationConfig& config, const LooOptions& options) {
  EncoderConfig c;
  c.views = canonical_views(config.views);
  c.height = config.patch_height;
  c.width = config.patch_width;
  c.head_channels = options.head_channels;
  c.latent_dim = options.latent_dim;
  c.seed = derive_seed(options.seed, "encoder");
  return c;
}

std::vector<PatchStack> pretraining_stacks(std::span<const CohortSubject> unlabeled, const PatchParams& params,
                                           std::size_t max_stacks) {
  struct Ref {
    std::size_t subject;
    PatchSpec spec;
  };
  std::vector<Ref> all;
  for (std::size_t s = 0; s < unlabeled.size(); ++s) {
    for (auto& spec : generate_patch_grid(unlabeled[s].brain, params, unlabeled[s].id)) all.push_back({s, std::move(spec)});
  }
  std::vector<PatchStack> out;
  const std::size_t n = all.size();
  const std::size_t take = std::min(n, max_stacks);
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    const auto& ref = all[i * n / take];
    out.push_back(extract_stack(unlabeled[ref.subject].volume, ref.spec, params));
  }
  return out;
}

namespace {

std::uint64_t cohort_checksum(const Cohort& c) {
  Checksum h;
  for (const auto* group : {&c.labeled, &c.unlabeled, &c.controls}) {
    for (const auto& s : *group) {
      h.update(s.id);
      h.update_value(s.volume.checksum());
    }
    h.update_value(std::uint8_t{0xff});
  }
  return h.digest();
}

/// Full-grid stacks for scoring, via the on-disk cache when configured. The
/// cache always holds all three views so every ladder row can reuse it.
PatchCache scoring_patches(const CohortSubject& s, const PatchParams& params, const std::filesystem::path& dir) {
  if (dir.empty()) return build_patch_cache(s.volume, s.brain, params, s.id);
  PatchParams full = params;
  const std::vector<View> all_views{View::axial, View::coronal, View::sagittal};
  if (std::equal(params.views.begin(), params.views.end(), all_views.begin())) full.views = all_views;
  char name[160];
  std::snprintf(name, sizeof(name), "%s_h%dw%d_s%d-%d-%d_b%.3f.patches", s.id.c_str(), params.height, params.width,
                params.stride_y, params.stride_x, params.stride_z, params.min_brain_fraction);
  const auto path = dir / name;
  const auto checksum = s.volume.checksum();
  std::optional<PatchCache> cache;
  if (std::filesystem::exists(path)) {
    try {
      cache = load_patch_cache(path);
      if (!cache->matches(params, checksum)) cache.reset();
    } catch (const InputError& e) {
      spdlog::warn("ignoring unreadable patch cache {}: {}", path.string(), e.what());
      cache.reset();
    }
  }
  if (!cache) {
    cache = build_patch_cache(s.volume, s.brain, full, s.id);
    std::filesystem::create_directories(dir);
    const auto tmp = path.string() + ".tmp";
    save_patch_cache(*cache, tmp);
    std::filesystem::rename(tmp, path);
  }
  if (cache->params.channels() != params.channels()) {
    for (auto& st : cache->stacks) st = st.truncated(params.channels());
    cache->params.views = params.views;
  }
  return std::move(*cache);
}

struct FoldResult {
  FoldRecord record;
  SubjectScores scores;
  bool success = false;
  std::vector<AnnotationAccess> accesses;
};

void check_ensemble_groups(const Cohort& cohort) {
  int temporal = 0;
  int non_temporal = 0;
  for (const auto& s : cohort.labeled) (s.localization == Localization::temporal ? temporal : non_temporal)++;
  if ((temporal > 0 && temporal < 2) || (non_temporal > 0 && non_temporal < 2)) {
    throw InputError("ensemble requested with a singleton localization group");
  }
}

std::string ae_key(const EncoderConfig& c, const PatchParams& p) {
  std::ostringstream s;
  for (View v : c.views) s << to_string(v) << ',';
  s << c.height << 'x' << c.width << ';';
  for (int w : c.head_channels) s << w << ',';
  s << c.latent_dim << ';' << c.seed << ';' << p.stride_x << ',' << p.stride_y << ',' << p.stride_z << ','
    << p.min_brain_fraction;
  return s.str();
}

using AutoencoderCache = std::map<std::string, AutoencoderModel>;

TopKReport run_loo_impl(const Cohort& cohort, const AblationConfig& config, const LooOptions& options,
                        LooOutputs* outputs, AutoencoderCache* ae_cache) {
  if (cohort.annotations == nullptr) throw InputError("run_loo: cohort has no annotation source");
  if (cohort.labeled.size() < 2) throw InputError("run_loo: need at least 2 labeled subjects");
  if (config.ensemble) check_ensemble_groups(cohort);
  if (options.k < 1) throw InputError("k must be >= 1");

  const PatchParams params = patch_params_for(config, options);
  const EncoderConfig encoder = encoder_config_for(config, options);
  for (const auto* group : {&cohort.labeled, &cohort.unlabeled, &cohort.controls}) {
    for (const auto& s : *group) params.validate(&s.volume.dims());
  }

  std::mutex progress_mutex;
  auto progress = [&](const std::string& msg) {
    if (!options.progress) return;
    std::lock_guard lock(progress_mutex);
    options.progress(msg);
  };

  TopKReport report;
  report.config_id = std::string(1, config.id);
  report.k = options.k;
  report.base_seed = options.seed;
  report.data_checksum = cohort_checksum(cohort);
  report.audited = options.audit;

  const AutoencoderModel* ae = nullptr;
  AutoencoderCache local_cache;
  if (config.pretrain) {
    if (cohort.unlabeled.empty()) throw InputError("pretraining requested but the unlabeled pool is empty");
    auto& cache = ae_cache != nullptr ? *ae_cache : local_cache;
    const auto key = ae_key(encoder, params);
    auto it = cache.find(key);
    if (it == cache.end()) {
      progress("config " + report.config_id + ": pretraining autoencoder");
      const auto stacks = pretraining_stacks(cohort.unlabeled, params, options.max_pretrain_stacks);
      TrainConfig t = options.autoencoder;
      t.seed = derive_seed(options.seed, "autoencoder");
      it = cache.emplace(key, pretrain_autoencoder(stacks, encoder, t)).first;
    }
    ae = &it->second;
    report.pretrain_checksum = ae->weights_checksum();
  }

  const std::size_t n = cohort.labeled.size();
  std::vector<FoldResult> results(n);

  auto run_fold = [&](std::size_t i) {
    const auto& held = cohort.labeled[i];
    FoldResult& out = results[i];
    FoldRecord& rec = out.record;
    rec.held_out = held.id;
    rec.localization = held.localization;
    rec.seed = derive_seed(options.seed, held.id);

    auto fetch = [&](const std::string& id, FoldPhase phase) {
      if (options.audit) out.accesses.push_back({held.id, phase, id});
      if (phase == FoldPhase::training && id == held.id) {
        throw Error("fold hygiene violated: held-out annotation requested while training fold " + held.id);
      }
      return cohort.annotations->load(id);
    };

    // training phase
    std::vector<LesionMask> masks;
    masks.reserve(n);
    std::vector<DatasetSubject> subjects;
    for (std::size_t j = 0; j < n; ++j) {
      const auto& s = cohort.labeled[j];
      if (j == i || (config.ensemble && s.localization != held.localization)) continue;
      masks.push_back(lesion_mask(fetch(s.id, FoldPhase::training), s.volume.dims(), options.train_mask));
      subjects.push_back({&s.volume, &s.brain, &masks.back()});
      rec.training_subjects.push_back(s.id);
    }
    for (const auto& c : cohort.controls) subjects.push_back({&c.volume, &c.brain, nullptr});

    const auto data =
        build_dataset(subjects, params, {config.labeling, options.neg_ratio, derive_seed(rec.seed, "sampling")});
    for (const auto& p : data) {
      if (p.spec.subject_id == held.id) throw Error("fold hygiene violated: held-out patch in training set of " + held.id);
    }
    TrainConfig t = options.classifier;
    t.seed = derive_seed(rec.seed, "classifier");
    if (config.ensemble) t = member_train_config(t, held.localization);
    progress("config " + report.config_id + ": fold " + held.id + " training on " + std::to_string(data.size()) +
             " patches");
    const ClassifierModel model = train_classifier(data, encoder, t, ae);
    rec.train_checksum = model.fingerprint.data_checksum;
    rec.train_size = data.size();

    // scoring phase
    const PatchCache patches = scoring_patches(held, params, options.cache_dir);
    const auto probs = model.predict_batch(std::span<const PatchStack>(patches.stacks));
    const auto truth = lesion_mask(fetch(held.id, FoldPhase::scoring), held.volume.dims(), MaskKind::ellipsoid);
    out.scores.subject_id = held.id;
    out.scores.patches.reserve(patches.specs.size());
    for (std::size_t p = 0; p < patches.specs.size(); ++p) {
      out.scores.patches.push_back({patches.specs[p], probs[p], patch_overlap(patches.specs[p], truth.mask)});
    }

    if (options.audit) {
      std::unordered_set<std::uint64_t> train_hashes;
      for (const auto& p : data) train_hashes.insert(stack_checksum(p.stack));
      for (const auto& st : patches.stacks) {
        if (train_hashes.count(stack_checksum(st)) != 0) {
          throw Error("fold hygiene violated: a held-out patch of " + held.id + " matches a training patch");
        }
      }
      for (const auto& a : out.accesses) {
        if (a.phase == FoldPhase::training && a.subject == held.id) {
          throw Error("fold hygiene violated: training phase read the held-out annotation of " + held.id);
        }
      }
    }
    rec.hygiene_verified = true;
    out.success = top_k_success(out.scores, options.k);
    progress("config " + report.config_id + ": fold " + held.id + (out.success ? " detected" : " missed"));
  };

  const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) run_fold(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            run_fold(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  int hits = 0;
  for (auto& r : results) {
    report.per_subject[r.record.held_out] = r.success;
    hits += r.success ? 1 : 0;
    report.folds.push_back(r.record);
  }
  report.score = static_cast<double>(hits) / static_cast<double>(n);
  if (outputs != nullptr) {
    outputs->scores.clear();
    outputs->accesses.clear();
    for (auto& r : results) {
      outputs->scores.push_back(std::move(r.scores));
      outputs->accesses.insert(outputs->accesses.end(), r.accesses.begin(), r.accesses.end());
    }
  }
  return report;
}

}  // namespace

TopKReport run_loo(const Cohort& cohort, const AblationConfig& config, const LooOptions& options, LooOutputs* outputs) {
  return run_loo_impl(cohort, config, options, outputs, nullptr);
}

std::vector<TopKReport> run_ablation(const Cohort& cohort, std::span<const AblationConfig> configs,
                                     const LooOptions& options) {
  if (configs.empty()) throw InputError("run_ablation: no configs");
  AutoencoderCache ae_cache;
  std::vector<TopKReport> out;
  for (const auto& c : configs) out.push_back(run_loo_impl(cohort, c, options, nullptr, &ae_cache));
  return out;
}

// ---------------------------------------------------------------------------
// report files

std::string format_score(double score) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", score);
  return buf;
}

void save_report(const TopKReport& r, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "fcd-topk-report";
  j["version"] = 1;
  j["config"] = r.config_id;
  if (r.config_id.size() == 1 && r.config_id[0] >= 'a' && r.config_id[0] <= 'g') {
    const auto c = ablation_config(r.config_id[0]);
    j["config_detail"] = {{"labeling", std::string(to_string(c.labeling))},
                          {"patch", {c.patch_height, c.patch_width}},
                          {"pretrain", c.pretrain},
                          {"ensemble", c.ensemble},
                          {"views", [&] {
                             std::vector<std::string> v;
                             for (View x : c.views) v.emplace_back(to_string(x));
                             return v;
                           }()}};
  }
  j["k"] = r.k;
  j["score"] = r.score;
  j["score_text"] = format_score(r.score);
  j["per_subject"] = r.per_subject;
  j["seeds"]["base"] = r.base_seed;
  j["checksums"]["data"] = to_hex(r.data_checksum);
  j["checksums"]["pretrain"] = to_hex(r.pretrain_checksum);
  j["audited"] = r.audited;
  auto& folds = j["folds"] = nlohmann::json::array();
  for (const auto& f : r.folds) {
    folds.push_back({{"held_out", f.held_out},
                     {"localization", std::string(to_string(f.localization))},
                     {"seed", f.seed},
                     {"train_checksum", to_hex(f.train_checksum)},
                     {"train_size", f.train_size},
                     {"training_subjects", f.training_subjects},
                     {"hygiene_verified", f.hygiene_verified}});
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write report " + path.string());
  out << j.dump(2) << '\n';
}

TopKReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read report " + path.string());
  TopKReport r;
  try {
    const auto j = nlohmann::json::parse(in);
    r.config_id = j.at("config").get<std::string>();
    r.k = j.at("k").get<int>();
    r.score = j.at("score").get<double>();
    r.per_subject = j.at("per_subject").get<std::map<std::string, bool>>();
    r.base_seed = j.at("seeds").at("base").get<std::uint64_t>();
    r.data_checksum = std::stoull(j.at("checksums").at("data").get<std::string>(), nullptr, 16);
    r.pretrain_checksum = std::stoull(j.at("checksums").at("pretrain").get<std::string>(), nullptr, 16);
    r.audited = j.value("audited", false);
    for (const auto& f : j.at("folds")) {
      FoldRecord rec;
      rec.held_out = f.at("held_out").get<std::string>();
      rec.localization = parse_localization(f.at("localization").get<std::string>());
      rec.seed = f.at("seed").get<std::uint64_t>();
      rec.train_checksum = std::stoull(f.at("train_checksum").get<std::string>(), nullptr, 16);
      rec.train_size = f.at("train_size").get<std::size_t>();
      rec.training_subjects = f.at("training_subjects").get<std::vector<std::string>>();
      rec.hygiene_verified = f.at("hygiene_verified").get<bool>();
      r.folds.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed report " + path.string() + ": " + e.what());
  }
  return r;
}

void save_score_table(std::span<const TopKReport> reports, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "config_id,score\n";
  for (const auto& r : reports) out << r.config_id << ',' << format_score(r.score) << '\n';
}

void save_subject_scores(const SubjectScores& scores, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "subject_id,z,y0,x0,height,width,category,probability,overlap\n";
  char prob[40];
  for (const auto& p : scores.patches) {
    std::snprintf(prob, sizeof(prob), "%.17g", p.probability);
    out << scores.subject_id << ',' << p.spec.z << ',' << p.spec.y0 << ',' << p.spec.x0 << ',' << p.spec.height << ','
        << p.spec.width << ',' << to_string(p.spec.category) << ',' << prob << ',' << p.overlap << '\n';
  }
}

SubjectScores load_subject_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  SubjectScores s;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> f;
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw InputError("malformed score row in " + path.string());
    ScoredPatch p;
    s.subject_id = f[0];
    p.spec.subject_id = f[0];
    p.spec.z = std::stoi(f[1]);
    p.spec.y0 = std::stoi(f[2]);
    p.spec.x0 = std::stoi(f[3]);
    p.spec.height = std::stoi(f[4]);
    p.spec.width = std::stoi(f[5]);
    p.spec.category = f[6] == "middle" ? PatchCategory::middle : PatchCategory::side;
    p.probability = std::stod(f[7]);
    p.overlap = std::stoll(f[8]);
    s.patches.push_back(std::move(p));
  }
  return s;
}

}  // namespace fcd
