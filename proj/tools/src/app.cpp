#include "fcd/cli/app.hpp"

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

#include "fcd/checksum.hpp"
#include "fcd/cli/render.hpp"
#include "fcd/error.hpp"
#include "fcd/evaluation.hpp"
#include "fcd/intensity_norm.hpp"
#include "fcd/manifest.hpp"
#include "fcd/models.hpp"
#include "fcd/phantom.hpp"

namespace fcd::cli {

namespace fs = std::filesystem;

namespace {

struct Settings {
  std::uint64_t seed = 0;
  int k = 20;
  std::string ablation;
  int workers = 1;
  std::string cache_dir;
  std::string out = "fcd_out";
  std::string manifest;
  std::string log_level = "warn";

  // training knobs
  int epochs = TrainConfig::classifier_defaults().epochs;
  int ae_epochs = TrainConfig::autoencoder_defaults().epochs;
  int batch_size = TrainConfig::classifier_defaults().batch_size;
  double learning_rate = TrainConfig::classifier_defaults().learning_rate;
  std::string optimizer = "adam";
  double neg_ratio = LooOptions{}.neg_ratio;
  int stride_z = 1;
  std::vector<int> head_channels{16, 32};
  int latent_dim = 128;
  std::size_t max_pretrain_stacks = LooOptions{}.max_pretrain_stacks;
  bool audit = false;

  // synth
  CohortCounts counts{6, 6, 4, 6};
  std::vector<int> dims{96, 96, 96};
  double lesion_delta = PhantomParams{}.lesion_delta;
  double noise_sigma = PhantomParams{}.noise_sigma;

  // train / render
  std::string init;
  std::string subject;
  std::string scores;
  std::string model;
  int z = -1;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

fs::path out_dir(const Settings& s) {
  fs::path p(s.out);
  fs::create_directories(p);
  return p;
}

/// FCD_PIPELINE_CACHE takes precedence over --cache-dir.
fs::path cache_dir(const Settings& s) {
  if (const char* env = std::getenv("FCD_PIPELINE_CACHE"); env && *env) return env;
  return s.cache_dir;
}

LooOptions loo_options(const Settings& s) {
  LooOptions o;
  o.k = s.k;
  o.seed = s.seed;
  o.workers = s.workers;
  o.classifier.epochs = s.epochs;
  o.classifier.batch_size = s.batch_size;
  o.classifier.learning_rate = s.learning_rate;
  o.classifier.optimizer = s.optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
  o.autoencoder.epochs = s.ae_epochs;
  o.autoencoder.batch_size = s.batch_size;
  o.neg_ratio = s.neg_ratio;
  o.stride_z = s.stride_z;
  o.head_channels = s.head_channels;
  o.latent_dim = s.latent_dim;
  o.max_pretrain_stacks = s.max_pretrain_stacks;
  o.audit = s.audit;
  o.cache_dir = cache_dir(s);
  o.progress = [](const std::string& m) { spdlog::info("{}", m); };
  if (s.k < 1) throw InputError("--k must be >= 1");
  if (s.workers < 1) throw InputError("--workers must be >= 1");
  if (!(s.neg_ratio > 0)) throw InputError("--neg-ratio must be positive");
  o.classifier.validate();
  o.autoencoder.validate();
  return o;
}

AblationConfig single_config(const Settings& s, char fallback) {
  const auto list = parse_ablation_list(s.ablation.empty() ? std::string(1, fallback) : s.ablation);
  if (list.size() != 1) throw InputError("this subcommand takes exactly one ablation config");
  return list.front();
}

Manifest require_manifest(const Settings& s) {
  if (s.manifest.empty()) throw InputError("--manifest is required");
  return load_manifest(s.manifest);
}

Volume load_subject_volume(const Manifest& m, const ManifestEntry& e) {
  Volume v = load_volume(m.resolve(e.volume));
  v.set_subject_id(e.id);
  return v;
}

/// Preprocessed cohorts carry their brain masks under masks/; raw ones use
/// the strictly-positive rule.
BrainMask load_subject_brain(const Manifest& m, const ManifestEntry& e, const Volume& v) {
  const auto path = m.root / "masks" / (e.id + ".nii.gz");
  if (!fs::exists(path)) return compute_brain_mask(v);
  BrainMask b = compute_brain_mask(load_volume(path));
  if (!(b.dims() == v.dims())) throw InputError("brain mask dims differ from volume for " + e.id);
  return b;
}

CohortSubject load_cohort_subject(const Manifest& m, const ManifestEntry& e) {
  CohortSubject s;
  s.id = e.id;
  s.volume = load_subject_volume(m, e);
  s.brain = load_subject_brain(m, e, s.volume);
  if (e.role == SubjectRole::labeled) {
    if (!e.localization) throw InputError("labeled subject without localization: " + e.id);
    s.localization = *e.localization;
  }
  return s;
}

struct LoadedCohort {
  Cohort cohort;
  FileAnnotations annotations;
};

std::unique_ptr<LoadedCohort> load_cohort(const Manifest& m) {
  auto out = std::make_unique<LoadedCohort>();
  for (const auto& e : m.subjects) {
    auto s = load_cohort_subject(m, e);
    switch (e.role) {
      case SubjectRole::labeled:
        if (!e.annotation) throw InputError("labeled subject without annotation: " + e.id);
        out->annotations.add(e.id, m.resolve(*e.annotation));
        out->cohort.labeled.push_back(std::move(s));
        break;
      case SubjectRole::unlabeled:
        out->cohort.unlabeled.push_back(std::move(s));
        break;
      case SubjectRole::control:
        out->cohort.controls.push_back(std::move(s));
        break;
    }
  }
  out->cohort.annotations = &out->annotations;
  return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Settings& s) {
  if (s.dims.size() != 3) throw InputError("--dims takes three integers");
  PhantomParams base;
  const std::array<double, 3> scale{s.dims[0] / 96.0, s.dims[1] / 96.0, s.dims[2] / 96.0};
  base.dims = {s.dims[0], s.dims[1], s.dims[2]};
  for (int i = 0; i < 3; ++i) {
    base.brain_semi_axes[i] *= scale[i];
    base.lesion_semi_axes[i] = std::max(3.0, base.lesion_semi_axes[i] * scale[i]);
  }
  base.lesion_delta = s.lesion_delta;
  base.noise_sigma = s.noise_sigma;
  const auto m = generate_cohort(s.counts, base, s.seed, out_dir(s));
  std::cout << "wrote " << m.subjects.size() << " subjects to " << (fs::path(s.out) / "manifest.json").string() << '\n';
  return kExitOk;
}

int cmd_preprocess(const Settings& s) {
  const auto manifest = require_manifest(s);
  const auto out = out_dir(s);
  fs::create_directories(out / "volumes");
  fs::create_directories(out / "masks");

  struct Item {
    const ManifestEntry* entry;
    Volume volume;
    BrainMask brain;
  };
  std::vector<Item> items;
  std::vector<std::string> errors;
  const auto landmarks = default_landmark_percentiles();
  for (const auto& e : manifest.subjects) {
    try {
      Volume v = load_subject_volume(manifest, e);
      BrainMask b = compute_brain_mask(v);
      (void)brain_landmarks(v, b, landmarks);
      items.push_back({&e, std::move(v), std::move(b)});
    } catch (const Error& ex) {
      spdlog::error("{}: {}", e.id, ex.what());
      errors.push_back(e.id + ": " + ex.what());
    }
  }
  if (items.empty()) {
    write_text(out / "errors.log", [&] {
      std::string t;
      for (const auto& line : errors) t += line + '\n';
      return t;
    }());
    throw InputError("no usable subjects in " + s.manifest);
  }

  std::vector<MaskedVolume> population;
  for (const auto& it : items) population.push_back({&it.volume, &it.brain});
  const auto standard = fit_histogram_standard(population, landmarks);
  save_histogram_standard(standard, out / "histogram_standard.json");

  Manifest result;
  result.seed = manifest.seed;
  result.root = out;
  for (const auto& it : items) {
    const auto& e = *it.entry;
    try {
      const Volume normalized = z_normalize(apply_histogram_standard(it.volume, it.brain, standard), it.brain);
      ManifestEntry ne = e;
      ne.volume = fs::path("volumes") / (e.id + ".nii.gz");
      save_volume(normalized, out / ne.volume);
      save_mask(it.brain, it.volume.spacing(), out / "masks" / (e.id + ".nii.gz"));
      if (e.annotation) {
        const auto a = load_annotation(manifest.resolve(*e.annotation));
        validate_annotation(a, it.volume.dims());
        fs::create_directories(out / "annotations");
        ne.annotation = fs::path("annotations") / (e.id + ".json");
        save_annotation(a, out / *ne.annotation);
      }
      ne.checksum = to_hex(normalized.checksum());
      result.subjects.push_back(std::move(ne));
    } catch (const Error& ex) {
      spdlog::error("{}: {}", e.id, ex.what());
      errors.push_back(e.id + ": " + ex.what());
    }
  }
  save_manifest(result, out / "manifest.json");
  std::string log;
  for (const auto& line : errors) log += line + '\n';
  write_text(out / "errors.log", log);
  std::cout << "normalized " << result.subjects.size() << " of " << manifest.subjects.size() << " subjects\n";
  return errors.empty() ? kExitOk : kExitInputError;
}

int cmd_extract(const Settings& s) {
  const auto manifest = require_manifest(s);
  const auto o = loo_options(s);
  const auto params = patch_params_for(single_config(s, 'c'), o);
  const auto out = out_dir(s);
  fs::create_directories(out / "patches");
  std::string table = "subject_id,patches\n";
  for (const auto& e : manifest.subjects) {
    const auto subject = load_cohort_subject(manifest, e);
    const auto cache = build_patch_cache(subject.volume, subject.brain, params, subject.id);
    save_patch_cache(cache, out / "patches" / (e.id + ".patches"));
    table += e.id + "," + std::to_string(cache.specs.size()) + "\n";
  }
  write_text(out / "patches.csv", table);
  return kExitOk;
}

AutoencoderModel pretrain_from(const Cohort& cohort, const AblationConfig& config, const LooOptions& o) {
  if (cohort.unlabeled.empty()) throw InputError("pretraining needs unlabeled subjects");
  const auto stacks = pretraining_stacks(cohort.unlabeled, patch_params_for(config, o), o.max_pretrain_stacks);
  TrainConfig t = o.autoencoder;
  t.seed = derive_seed(o.seed, "autoencoder");
  return pretrain_autoencoder(stacks, encoder_config_for(config, o), t);
}

int cmd_pretrain(const Settings& s) {
  const auto manifest = require_manifest(s);
  const auto o = loo_options(s);
  auto config = single_config(s, 'd');
  const auto loaded = load_cohort(manifest);
  const auto ae = pretrain_from(loaded->cohort, config, o);
  const auto out = out_dir(s);
  save_checkpoint(ae, out / "autoencoder.ckpt");
  std::string trace = "epoch,loss\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "0,%.17g\n", ae.initial_loss);
  trace += buf;
  for (std::size_t i = 0; i < ae.loss_trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i + 1, ae.loss_trace[i]);
    trace += buf;
  }
  write_text(out / "autoencoder_loss.csv", trace);
  return kExitOk;
}

int cmd_train(const Settings& s) {
  const auto manifest = require_manifest(s);
  const auto o = loo_options(s);
  const auto config = single_config(s, 'e');
  const auto loaded = load_cohort(manifest);
  const auto& cohort = loaded->cohort;
  if (cohort.labeled.empty()) throw InputError("training needs labeled subjects");
  const auto params = patch_params_for(config, o);
  const auto encoder = encoder_config_for(config, o);

  std::optional<AutoencoderModel> ae;
  if (!s.init.empty()) {
    ae = load_autoencoder(s.init);
  } else if (config.pretrain) {
    ae = pretrain_from(cohort, config, o);
  }

  std::vector<LesionMask> masks;
  masks.reserve(cohort.labeled.size());
  auto dataset_for = [&](std::optional<Localization> group) {
    std::vector<DatasetSubject> subjects;
    for (const auto& l : cohort.labeled) {
      if (group && l.localization != *group) continue;
      masks.push_back(lesion_mask(cohort.annotations->load(l.id), l.volume.dims(), o.train_mask));
      subjects.push_back({&l.volume, &l.brain, &masks.back()});
    }
    for (const auto& c : cohort.controls) subjects.push_back({&c.volume, &c.brain, nullptr});
    return build_dataset(subjects, params, {config.labeling, o.neg_ratio, derive_seed(o.seed, "sampling")});
  };
  TrainConfig t = o.classifier;
  t.seed = derive_seed(o.seed, "classifier");
  const AutoencoderModel* init = ae ? &*ae : nullptr;
  const auto out = out_dir(s);
  if (config.ensemble) {
    const auto td = dataset_for(Localization::temporal);
    const auto nd = dataset_for(Localization::non_temporal);
    const auto e = train_localization_ensemble(td, nd, encoder, t, init);
    save_checkpoint(e.temporal, out / "temporal.ckpt");
    save_checkpoint(e.non_temporal, out / "non_temporal.ckpt");
  } else {
    const auto model = train_classifier(dataset_for(std::nullopt), encoder, t, init);
    save_checkpoint(model, out / "classifier.ckpt");
  }
  return kExitOk;
}

int write_reports(const Settings& s, const std::vector<TopKReport>& reports) {
  const auto out = out_dir(s);
  for (const auto& r : reports) save_report(r, out / ("report_" + r.config_id + ".json"));
  save_score_table(reports, out / "scores.csv");
  for (const auto& r : reports) std::cout << r.config_id << ' ' << format_score(r.score) << '\n';
  return kExitOk;
}

int cmd_evaluate(const Settings& s, char fallback) {
  const auto manifest = require_manifest(s);
  const auto o = loo_options(s);
  const auto configs = parse_ablation_list(s.ablation.empty() ? std::string(fallback == 'l' ? "a..g" : "e") : s.ablation);
  const auto loaded = load_cohort(manifest);
  if (configs.size() == 1) {
    LooOutputs outputs;
    auto report = run_loo(loaded->cohort, configs.front(), o, &outputs);
    const auto dir = out_dir(s) / "subjects" / report.config_id;
    fs::create_directories(dir);
    for (const auto& sc : outputs.scores) save_subject_scores(sc, dir / (sc.subject_id + ".csv"));
    return write_reports(s, {report});
  }
  return write_reports(s, run_ablation(loaded->cohort, configs, o));
}

int cmd_render(const Settings& s, const std::string& effective) {
  const auto manifest = require_manifest(s);
  if (s.subject.empty()) throw InputError("--subject is required");
  const ManifestEntry* entry = nullptr;
  for (const auto& e : manifest.subjects)
    if (e.id == s.subject) entry = &e;
  if (!entry) throw InputError("subject " + s.subject + " not in manifest");
  const auto subject = load_cohort_subject(manifest, *entry);
  const Dims d = subject.volume.dims();
  if (s.z < 0 || s.z >= d.depth) throw InputError("--z outside [0," + std::to_string(d.depth) + ")");

  std::optional<LesionMask> lesion;
  if (entry->annotation) lesion = lesion_mask(load_annotation(manifest.resolve(*entry->annotation)), d);

  std::vector<ScoredPatch> patches;
  if (!s.scores.empty()) {
    for (const auto& p : load_subject_scores(s.scores).patches)
      if (p.spec.z == s.z) patches.push_back(p);
  } else if (!s.model.empty()) {
    const auto model = load_classifier(s.model);
    const auto& cfg = model.config();
    PatchParams params = PatchParams::with_size(cfg.height, cfg.width);
    params.views = cfg.views;
    for (const auto& spec : generate_patch_grid(subject.brain, params, subject.id)) {
      if (spec.z != s.z) continue;
      ScoredPatch p;
      p.spec = spec;
      p.probability = model.predict(extract_stack(subject.volume, spec, params));
      p.overlap = lesion ? patch_overlap(spec, lesion->mask) : 0;
      patches.push_back(std::move(p));
    }
  }

  const auto image = render_overlay(subject.volume, s.z, patches, lesion ? &*lesion : nullptr);
  fs::path target(s.out);
  if (target.extension() != ".png") {
    fs::create_directories(target);
    target /= s.subject + "_z" + std::to_string(s.z) + ".png";
  } else {
    target = fs::absolute(target);
    fs::create_directories(target.parent_path());
  }
  write_png(image, target);
  write_text(target.parent_path() / "render.config.toml", effective);
  std::cout << target.string() << '\n';
  return kExitOk;
}

void add_training_flags(CLI::App& app, Settings& s) {
  app.add_option("--epochs", s.epochs, "classifier epochs")->capture_default_str();
  app.add_option("--ae-epochs", s.ae_epochs, "autoencoder epochs")->capture_default_str();
  app.add_option("--batch-size", s.batch_size)->capture_default_str();
  app.add_option("--lr", s.learning_rate, "learning rate")->capture_default_str();
  app.add_option("--optimizer", s.optimizer)->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
  app.add_option("--neg-ratio", s.neg_ratio, "sampled negatives per positive patch")->capture_default_str();
  app.add_option("--stride-z", s.stride_z, "slice stride of the patch grid")->capture_default_str();
  app.add_option("--head-channels", s.head_channels, "convolution widths per head")->capture_default_str();
  app.add_option("--latent", s.latent_dim, "latent size")->capture_default_str();
  app.add_option("--max-pretrain-stacks", s.max_pretrain_stacks)->capture_default_str();
  app.add_flag("--audit", s.audit, "log annotation accesses and verify fold hygiene");
}

}  // namespace

int run(int argc, const char* const* argv) {
  Settings s;
  CLI::App app{"FCD lesion detection pipeline", "fcd_pipeline"};
  app.fallthrough();
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI config file; command-line flags override it");
  app.add_option("--seed", s.seed, "base random seed")->capture_default_str();
  app.add_option("--k", s.k, "top-k")->capture_default_str();
  app.add_option("--ablation", s.ablation, "ladder selection: e, a..g, a-g or a,c,e");
  app.add_option("--workers", s.workers, "parallel folds")->capture_default_str();
  app.add_option("--cache-dir", s.cache_dir, "patch cache directory (FCD_PIPELINE_CACHE overrides)");
  app.add_option("--out", s.out, "output directory")->capture_default_str();
  app.add_option("--manifest", s.manifest, "cohort manifest.json");
  app.add_option("--log-level", s.log_level)
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
      ->capture_default_str();
  add_training_flags(app, s);

  auto* synth = app.add_subcommand("synth", "generate a phantom cohort");
  synth->add_option("--temporal", s.counts.temporal)->capture_default_str();
  synth->add_option("--non-temporal", s.counts.non_temporal)->capture_default_str();
  synth->add_option("--controls", s.counts.controls)->capture_default_str();
  synth->add_option("--unlabeled", s.counts.unlabeled)->capture_default_str();
  synth->add_option("--dims", s.dims, "W H D")->expected(3)->capture_default_str();
  synth->add_option("--lesion-delta", s.lesion_delta)->capture_default_str();
  synth->add_option("--noise", s.noise_sigma)->capture_default_str();
  auto* preprocess = app.add_subcommand("preprocess", "histogram standardization + z-normalization");
  auto* extract = app.add_subcommand("extract", "write patch caches");
  auto* pretrain = app.add_subcommand("pretrain", "pretrain the autoencoder on unlabeled subjects");
  auto* train = app.add_subcommand("train", "train a classifier (or ensemble) on all labeled subjects");
  train->add_option("--init", s.init, "autoencoder checkpoint");
  auto* evaluate = app.add_subcommand("evaluate", "leave-one-out Top-k evaluation");
  auto* ablate = app.add_subcommand("ablate", "run the ablation ladder (default a..g)");
  auto* render = app.add_subcommand("render", "overlay patches and lesion on an axial slice");
  render->add_option("--subject", s.subject)->required();
  render->add_option("--z", s.z, "axial slice")->required();
  render->add_option("--scores", s.scores, "subject scores CSV from evaluate");
  render->add_option("--model", s.model, "classifier checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInputError;
  }
  spdlog::set_level(spdlog::level::from_str(s.log_level));

  try {
    auto* cmd = app.get_subcommands().front();
    const std::string effective = app.config_to_str(true, false);
    if (cmd != render) write_text(out_dir(s) / (cmd->get_name() + ".config.toml"), effective);
    if (cmd == synth) return cmd_synth(s);
    if (cmd == preprocess) return cmd_preprocess(s);
    if (cmd == extract) return cmd_extract(s);
    if (cmd == pretrain) return cmd_pretrain(s);
    if (cmd == train) return cmd_train(s);
    if (cmd == evaluate) return cmd_evaluate(s, 'e');
    if (cmd == ablate) return cmd_evaluate(s, 'l');
    if (cmd == render) return cmd_render(s, effective);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("fcd_pipeline");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace fcd::cli
