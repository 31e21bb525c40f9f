#include "mfvit/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "mfvit/error.hpp"
#include "mfvit/metrics.hpp"
#include "mfvit/stats.hpp"

namespace mfvit::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json enhance_to_json(const imgproc::EnhanceConfig& c) {
  return {{"grid", c.grid},
          {"num_scales", c.bank.num_scales},
          {"base_wavelength", c.bank.base_wavelength},
          {"scale_factor", c.bank.scale_factor},
          {"alpha", c.bank.alpha},
          {"rho", c.elea.rho},
          {"beta0", c.elea.beta0},
          {"beta_max", c.elea.beta_max},
          {"beta_rate", c.elea.beta_rate},
          {"max_inner_iters", c.elea.max_inner_iters}};
}

void enhance_from_json(const json& j, imgproc::EnhanceConfig& c) {
  c.grid = j.value("grid", c.grid);
  c.bank.num_scales = j.value("num_scales", c.bank.num_scales);
  c.bank.base_wavelength = j.value("base_wavelength", c.bank.base_wavelength);
  c.bank.scale_factor = j.value("scale_factor", c.bank.scale_factor);
  c.bank.alpha = j.value("alpha", c.bank.alpha);
  c.elea.rho = j.value("rho", c.elea.rho);
  c.elea.beta0 = j.value("beta0", c.elea.beta0);
  c.elea.beta_max = j.value("beta_max", c.elea.beta_max);
  c.elea.beta_rate = j.value("beta_rate", c.elea.beta_rate);
  c.elea.max_inner_iters = j.value("max_inner_iters", c.elea.max_inner_iters);
}

json vit_to_json(const vit::VitConfig& c) {
  return {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},
          {"depth", c.depth},           {"num_heads", c.num_heads},   {"mlp_ratio", c.mlp_ratio},
          {"num_classes", c.num_classes}};
}

void vit_from_json(const json& j, vit::VitConfig& c) {
  c.image_size = j.value("image_size", c.image_size);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.depth = j.value("depth", c.depth);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.num_classes = j.value("num_classes", c.num_classes);
}

json finetune_to_json(const FinetuneConfig& c) {
  return {{"epochs", c.epochs},     {"batch_size", c.batch_size},     {"lr", c.lr},
          {"momentum", c.momentum}, {"weight_decay", c.weight_decay}, {"augment", c.augment},
          {"max_rotation", c.augment_cfg.max_rotation}, {"hflip_prob", c.augment_cfg.hflip_prob}};
}

void finetune_from_json(const json& j, FinetuneConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.augment = j.value("augment", c.augment);
  c.augment_cfg.max_rotation = j.value("max_rotation", c.augment_cfg.max_rotation);
  c.augment_cfg.hflip_prob = j.value("hflip_prob", c.augment_cfg.hflip_prob);
}

json fusion_to_json(const fusion::FusionTrainConfig& c) {
  return {{"epochs", c.epochs},     {"batch_size", c.batch_size},
          {"lr", c.lr},             {"momentum", c.momentum},
          {"weight_decay", c.weight_decay}, {"augment", c.augment},
          {"unfreeze_branches", c.unfreeze_branches}};
}

void fusion_from_json(const json& j, fusion::FusionTrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.augment = j.value("augment", c.augment);
  c.unfreeze_branches = j.value("unfreeze_branches", c.unfreeze_branches);
}

void log_line(const ExperimentConfig& cfg, const std::string& msg) {
  if (cfg.verbose) std::clog << "[mfvit] " << msg << std::endl;
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DependencyError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

json read_json(const fs::path& path, const std::string& stage) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DependencyError("stage " + stage + " output " + path.string() + " is missing");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

fs::path dataset_dir(const ExperimentConfig& cfg, const fs::path& run_dir) {
  return cfg.dataset_dir.empty() ? run_dir / "data" : cfg.dataset_dir;
}

RunManifest load_run_manifest(const ExperimentConfig& cfg, const fs::path& run_dir) {
  const auto path = dataset_dir(cfg, run_dir) / "manifest.csv";
  if (!fs::exists(path)) throw DependencyError("dataset manifest " + path.string() + " missing; run stage synth");
  return load_manifest(path);
}

ad::Checkpoint require_checkpoint(const fs::path& path, const std::string& stage) {
  if (!fs::exists(path)) throw DependencyError("checkpoint " + path.string() + " missing; run stage " + stage);
  return ad::Checkpoint::read(path);
}

fs::path pretrain_path(const fs::path& run_dir, Features f) {
  return run_dir / "pretrain" / (features_name(f) + ".ckpt");
}

fs::path run_ckpt_path(const fs::path& run_dir, const std::string& stage, const std::string& method, double fraction,
                       int repeat) {
  return run_dir / stage / (method + "_f" + fraction_tag(fraction) + "_r" + std::to_string(repeat) + ".ckpt");
}

bool is_fusion_method(const std::string& key) { return key == "mf_lp" || key == "mf_ca"; }

struct TrainSubset {
  std::vector<imgproc::Image2D> cxr, enh;
  std::vector<int> labels;
};

TrainSubset take_subset(const SplitData& cxr, const SplitData& enh, const std::vector<std::size_t>& idx) {
  TrainSubset s;
  for (auto i : idx) {
    s.cxr.push_back(cxr.images[i]);
    s.enh.push_back(enh.images[i]);
    s.labels.push_back(cxr.labels[i]);
  }
  return s;
}

}  // namespace

ExperimentConfig ExperimentConfig::toy() {
  ExperimentConfig c;
  c.synth.n_per_class = 100;
  c.synth.offset_jitter = 0.02;
  c.synth.contrast_jitter = 0.05;
  c.synth.test2 = true;
  c.moco.queue_size = 64;
  c.moco.epochs = 60;
  c.moco.warmup_epochs = 5;
  c.moco.lr = 5e-4;
  c.enhance.grid = 64;
  c.enhance.bank.base_wavelength = 5.0;
  c.lp.protocol = vit::Protocol::linear_probe;
  c.lp.epochs = 200;
  c.lp.lr = 0.1;
  c.lp.augment = false;
  c.ft.protocol = vit::Protocol::fine_tune;
  c.ft.epochs = 40;
  c.ft.lr = 0.01;
  c.fusion_ca.epochs = 40;
  c.fusion_ca.lr = 0.01;
  c.fusion_lp.epochs = 200;
  c.fusion_lp.lr = 0.1;
  c.fusion_lp.augment = false;
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c = toy();
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    if (d.contains("dir") && !d.at("dir").get<std::string>().empty()) c.dataset_dir = d.at("dir").get<std::string>();
    if (d.contains("synthetic")) pipeline::from_json(d.at("synthetic"), c.synth);
  }
  if (j.contains("enhance")) enhance_from_json(j.at("enhance"), c.enhance);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.preset = m.value("preset", c.preset);
    if (c.preset == "toy") {
      c.model = vit::VitConfig::toy();
    } else if (c.preset == "vit_small") {
      c.model = vit::VitConfig::vit_small();
    } else {
      throw ConfigError("unknown model preset '" + c.preset + "'");
    }
    vit_from_json(m, c.model);
  }
  if (j.contains("pretrain")) ssl::from_json(j.at("pretrain"), c.moco);
  if (j.contains("finetune")) {
    const auto& f = j.at("finetune");
    if (f.contains("lp")) finetune_from_json(f.at("lp"), c.lp);
    if (f.contains("ft")) finetune_from_json(f.at("ft"), c.ft);
    if (f.contains("fractions")) c.fractions = f.at("fractions").get<std::vector<double>>();
    c.repeats = f.value("repeats", c.repeats);
  }
  c.lp.protocol = vit::Protocol::linear_probe;
  c.ft.protocol = vit::Protocol::fine_tune;
  if (j.contains("fusion")) {
    const auto& f = j.at("fusion");
    if (f.contains("ca")) fusion_from_json(f.at("ca"), c.fusion_ca);
    if (f.contains("lp")) fusion_from_json(f.at("lp"), c.fusion_lp);
  }
  if (j.contains("eval") && j.at("eval").contains("test_splits")) {
    c.test_splits.clear();
    for (const auto& s : j.at("eval").at("test_splits")) c.test_splits.push_back(parse_split(s.get<std::string>()));
  }
  if (j.contains("seeds")) c.seed = j.at("seeds").value("base", c.seed);
  if (j.contains("stages")) c.stages = j.at("stages").get<std::vector<std::string>>();
  c.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  json splits = json::array();
  for (auto s : test_splits) splits.push_back(split_name(s));
  json synth_j;
  pipeline::to_json(synth_j, synth);
  json model_j = vit_to_json(model);
  model_j["preset"] = preset;
  return {{"dataset", {{"dir", dataset_dir.string()}, {"synthetic", synth_j}}},
          {"enhance", enhance_to_json(enhance)},
          {"model", model_j},
          {"pretrain", moco},
          {"finetune",
           {{"lp", finetune_to_json(lp)}, {"ft", finetune_to_json(ft)}, {"fractions", fractions}, {"repeats", repeats}}},
          {"fusion", {{"ca", fusion_to_json(fusion_ca)}, {"lp", fusion_to_json(fusion_lp)}}},
          {"eval", {{"test_splits", splits}}},
          {"seeds", {{"base", seed}}},
          {"stages", stages}};
}

void ExperimentConfig::validate() const {
  model.validate();
  moco.validate();
  if (fractions.empty()) throw ConfigError("finetune.fractions is empty");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("label fraction " + std::to_string(f) + " outside (0, 1]");
  }
  if (repeats < 1) throw ConfigError("finetune.repeats must be >= 1");
  if (test_splits.empty()) throw ConfigError("eval.test_splits is empty");
  static const std::vector<std::string> known{"synth", "enhance", "pretrain", "finetune", "fuse", "eval", "report"};
  for (const auto& s : stages) {
    if (std::find(known.begin(), known.end(), s) == known.end()) throw ConfigError("unknown stage '" + s + "'");
  }
}

const std::vector<MethodSpec>& experiment_methods() {
  static const std::vector<MethodSpec> methods{
      {"random_lp", "Random-ViT LP"}, {"cxr_lp", "CXR-ViT LP"}, {"cxr_ft", "CXR-ViT FT"}, {"enh_lp", "Enh-ViT LP"},
      {"enh_ft", "Enh-ViT FT"},       {"mf_lp", "MF-ViT LP"},   {"mf_ca", "MF-ViT CA"}};
  return methods;
}

fs::path timestamped_run_dir(const fs::path& root) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "run-%Y%m%d-%H%M%S", &tm);
  return root / buf;
}

std::uint64_t subset_seed(std::uint64_t seed, std::size_t fraction_index, int repeat) {
  return mix_seed(mix_seed(seed, 100 + fraction_index), static_cast<std::uint64_t>(repeat));
}

std::string fraction_tag(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", fraction);
  return buf;
}

RunManifest stage_synth(const ExperimentConfig& cfg, const fs::path& run_dir) {
  const auto dir = dataset_dir(cfg, run_dir);
  log_line(cfg, "synth: writing dataset to " + dir.string());
  return make_synthetic_dataset(cfg.synth, mix_seed(cfg.seed, 1), dir);
}

json stage_enhance(const ExperimentConfig& cfg, const fs::path& run_dir) {
  const RunManifest m = load_run_manifest(cfg, run_dir);
  log_line(cfg, "enhance: " + std::to_string(m.rows.size()) + " images");
  const std::size_t files = enhance_manifest(m, cfg.enhance, cfg.threads);
  return {{"images", m.rows.size()}, {"files", files}};
}

json stage_pretrain(const ExperimentConfig& cfg, const fs::path& run_dir) {
  const RunManifest m = load_run_manifest(cfg, run_dir);
  json out = json::object();
  fs::create_directories(run_dir / "pretrain");
  for (Features f : {Features::cxr, Features::enh}) {
    const std::string name = features_name(f);
    const SplitData train = load_split(m, Split::train, f);
    const std::uint64_t seed = mix_seed(cfg.seed, f == Features::cxr ? 2 : 3);
    ssl::MocoModel model(cfg.model, cfg.moco, seed);
    ssl::PretrainOptions opts;
    opts.seed = seed;
    opts.log_csv = run_dir / "pretrain" / (name + "_log.csv");
    opts.checkpoint_path = pretrain_path(run_dir, f);
    fs::remove(opts.log_csv);
    log_line(cfg, "pretrain: " + name + " branch on " + std::to_string(train.images.size()) + " images");
    const auto res = ssl::pretrain(model, train.images, cfg.moco, opts);
    json losses = json::array();
    for (const auto& row : res.log) losses.push_back(row.mean_loss);
    out[name] = {{"epoch_loss", losses}, {"queue_rows", res.queue_rows}, {"steps", res.steps}};
  }
  write_json(run_dir / "pretrain" / "summary.json", out);
  return out;
}

json stage_finetune(const ExperimentConfig& cfg, const fs::path& run_dir) {
  const RunManifest m = load_run_manifest(cfg, run_dir);
  const SplitData cxr = load_split(m, Split::train, Features::cxr);
  const SplitData enh = load_split(m, Split::train, Features::enh);
  const ad::Checkpoint pre_cxr = require_checkpoint(pretrain_path(run_dir, Features::cxr), "pretrain");
  const ad::Checkpoint pre_enh = require_checkpoint(pretrain_path(run_dir, Features::enh), "pretrain");
  fs::create_directories(run_dir / "finetune");

  json out = json::object();
  for (std::size_t fi = 0; fi < cfg.fractions.size(); ++fi) {
    for (int r = 0; r < cfg.repeats; ++r) {
      const double frac = cfg.fractions[fi];
      const std::uint64_t s = subset_seed(cfg.seed, fi, r);
      const auto idx = sample_label_fraction(cxr.images.size(), frac, s);
      const TrainSubset sub = take_subset(cxr, enh, idx);
      for (const auto& method : experiment_methods()) {
        if (is_fusion_method(method.key)) continue;
        const bool enh_branch = method.key.rfind("enh", 0) == 0;
        const bool lp = method.key.ends_with("_lp");
        Rng init(mix_seed(s, 31));
        vit::VitClassifier model(cfg.model, init);
        if (method.key == "random_lp") {
          // Fixed random encoder shared by every repeat.
          Rng enc_rng(mix_seed(cfg.seed, 500));
          vit::VitEncoder random(cfg.model, enc_rng);
          ad::copy_values(model.encoder().parameters(), random.parameters());
        } else {
          vit::load_encoder(model.encoder(), enh_branch ? pre_enh : pre_cxr);
        }
        const auto& images = enh_branch ? sub.enh : sub.cxr;
        log_line(cfg, "finetune: " + method.key + " fraction " + fraction_tag(frac) + " repeat " + std::to_string(r));
        auto res = finetune(model, images, sub.labels, lp ? cfg.lp : cfg.ft, mix_seed(s, 32));
        res.checkpoint.meta["method"] = method.key;
        res.checkpoint.meta["fraction"] = frac;
        res.checkpoint.meta["repeat"] = r;
        res.checkpoint.write(run_ckpt_path(run_dir, "finetune", method.key, frac, r));
        out[method.key][fraction_tag(frac)].push_back(res.epoch_loss.back());
      }
    }
  }
  write_json(run_dir / "finetune" / "summary.json", out);
  return out;
}

json stage_fuse(const ExperimentConfig& cfg, const fs::path& run_dir) {
  const RunManifest m = load_run_manifest(cfg, run_dir);
  const SplitData cxr = load_split(m, Split::train, Features::cxr);
  const SplitData enh = load_split(m, Split::train, Features::enh);
  const ad::Checkpoint pre_cxr = require_checkpoint(pretrain_path(run_dir, Features::cxr), "pretrain");
  const ad::Checkpoint pre_enh = require_checkpoint(pretrain_path(run_dir, Features::enh), "pretrain");
  fs::create_directories(run_dir / "fusion");

  json out = json::object();
  for (std::size_t fi = 0; fi < cfg.fractions.size(); ++fi) {
    for (int r = 0; r < cfg.repeats; ++r) {
      const double frac = cfg.fractions[fi];
      const std::uint64_t s = subset_seed(cfg.seed, fi, r);
      const auto idx = sample_label_fraction(cxr.images.size(), frac, s);
      const TrainSubset sub = take_subset(cxr, enh, idx);

      // MF-ViT LP: frozen pretrained branches, linear heads only.
      {
        fusion::FusionModel model(cfg.model, fusion::FusionMode::lp, mix_seed(s, 41));
        model.load_branches(pre_cxr, pre_enh);
        log_line(cfg, "fuse: mf_lp fraction " + fraction_tag(frac) + " repeat " + std::to_string(r));
        auto res = fusion::train_fusion(model, sub.cxr, sub.enh, sub.labels, cfg.fusion_lp, {}, mix_seed(s, 42));
        res.checkpoint.write(run_ckpt_path(run_dir, "fusion", "mf_lp", frac, r));
        out["mf_lp"][fraction_tag(frac)].push_back(res.epoch_loss.back());
      }
      // MF-ViT CA: fine-tuned branches, distilled from the standalone FT models.
      {
        const auto ft_cxr = require_checkpoint(run_ckpt_path(run_dir, "finetune", "cxr_ft", frac, r), "finetune");
        const auto ft_enh = require_checkpoint(run_ckpt_path(run_dir, "finetune", "enh_ft", frac, r), "finetune");
        Rng trng(0);
        vit::VitClassifier teacher_cxr(cfg.model, trng);
        vit::VitClassifier teacher_enh(cfg.model, trng);
        load_classifier(teacher_cxr, ft_cxr);
        load_classifier(teacher_enh, ft_enh);
        fusion::FusionModel model(cfg.model, fusion::FusionMode::ca, mix_seed(s, 43));
        model.load_branches(ft_cxr, ft_enh);
        log_line(cfg, "fuse: mf_ca fraction " + fraction_tag(frac) + " repeat " + std::to_string(r));
        auto res = fusion::train_fusion(model, sub.cxr, sub.enh, sub.labels, cfg.fusion_ca,
                                        {&teacher_cxr, &teacher_enh}, mix_seed(s, 44));
        res.checkpoint.write(run_ckpt_path(run_dir, "fusion", "mf_ca", frac, r));
        out["mf_ca"][fraction_tag(frac)].push_back(res.epoch_loss.back());
      }
    }
  }
  write_json(run_dir / "fusion" / "summary.json", out);
  return out;
}

json stage_eval(const ExperimentConfig& cfg, const fs::path& run_dir) {
  const RunManifest m = load_run_manifest(cfg, run_dir);
  const ad::Checkpoint pre_cxr = require_checkpoint(pretrain_path(run_dir, Features::cxr), "pretrain");
  const ad::Checkpoint pre_enh = require_checkpoint(pretrain_path(run_dir, Features::enh), "pretrain");
  std::map<Split, std::pair<SplitData, SplitData>> tests;
  for (Split sp : cfg.test_splits) {
    tests[sp] = {load_split(m, sp, Features::cxr), load_split(m, sp, Features::enh)};
    if (tests[sp].first.images.empty()) throw ConfigError("test split " + split_name(sp) + " is empty");
  }
  fs::create_directories(run_dir / "eval" / "confusion");

  json runs = json::array();
  Rng scratch(0);
  for (const auto& method : experiment_methods()) {
    for (std::size_t fi = 0; fi < cfg.fractions.size(); ++fi) {
      const double frac = cfg.fractions[fi];
      for (int r = 0; r < cfg.repeats; ++r) {
        std::optional<vit::VitClassifier> single;
        std::optional<fusion::FusionModel> fused;
        bool enh_branch = false;
        if (is_fusion_method(method.key)) {
          const bool ca = method.key == "mf_ca";
          const auto ckpt = require_checkpoint(run_ckpt_path(run_dir, "fusion", method.key, frac, r), "fuse");
          fused.emplace(cfg.model, ca ? fusion::FusionMode::ca : fusion::FusionMode::lp, 0);
          if (ca) {
            fused->load_branches(require_checkpoint(run_ckpt_path(run_dir, "finetune", "cxr_ft", frac, r), "finetune"),
                                 require_checkpoint(run_ckpt_path(run_dir, "finetune", "enh_ft", frac, r), "finetune"));
          } else {
            fused->load_branches(pre_cxr, pre_enh);
          }
          fused->load_checkpoint(ckpt);
        } else {
          enh_branch = method.key.rfind("enh", 0) == 0;
          single.emplace(cfg.model, scratch);
          load_classifier(*single,
                          require_checkpoint(run_ckpt_path(run_dir, "finetune", method.key, frac, r), "finetune"));
        }
        for (Split sp : cfg.test_splits) {
          const auto& [tc, te] = tests.at(sp);
          const auto pred = fused ? predict(*fused, tc.images, te.images)
                                  : predict(*single, enh_branch ? te.images : tc.images);
          const EvalReport rep = evaluate_predictions(tc.labels, pred);
          runs.push_back({{"method", method.key},
                          {"fraction", frac},
                          {"repeat", r},
                          {"split", split_name(sp)},
                          {"report", pipeline::to_json(rep)}});
          std::ofstream cm(run_dir / "eval" / "confusion" /
                           (method.key + "_f" + fraction_tag(frac) + "_r" + std::to_string(r) + "_" + split_name(sp) +
                            ".csv"));
          cm << "truth\\pred,normal,pneumonia,covid\n";
          for (std::size_t t = 0; t < rep.confusion.classes(); ++t) {
            cm << label_name(static_cast<int>(t));
            for (std::size_t p = 0; p < rep.confusion.classes(); ++p) cm << ',' << rep.confusion.at(t, p);
            cm << '\n';
          }
        }
        log_line(cfg, "eval: " + method.key + " fraction " + fraction_tag(frac) + " repeat " + std::to_string(r));
      }
    }
  }
  json metrics = {{"schema_version", kMetricsSchemaVersion}, {"runs", runs}};
  metrics["summary"] = build_summary(metrics, cfg);
  write_json(run_dir / "eval" / "metrics.json", metrics);
  return metrics["summary"];
}

json build_summary(const json& metrics, const ExperimentConfig& cfg) {
  // accuracy[method][fraction][split] -> per-repeat values
  std::map<std::string, std::map<std::string, std::map<std::string, std::vector<double>>>> acc;
  for (const auto& run : metrics.at("runs")) {
    acc[run.at("method").get<std::string>()][fraction_tag(run.at("fraction").get<double>())]
       [run.at("split").get<std::string>()]
           .push_back(run.at("report").at("accuracy").get<double>());
  }
  json cells = json::array();
  json ttests = json::array();
  for (const auto& method : experiment_methods()) {
    for (double frac : cfg.fractions) {
      for (Split sp : cfg.test_splits) {
        const auto& v = acc[method.key][fraction_tag(frac)][split_name(sp)];
        if (v.size() != static_cast<std::size_t>(cfg.repeats)) {
          throw ValidationError("summary cell " + method.key + "/" + fraction_tag(frac) + "/" + split_name(sp) +
                                " has " + std::to_string(v.size()) + " repeats, expected " +
                                std::to_string(cfg.repeats));
        }
        cells.push_back({{"method", method.key},
                         {"display", method.display},
                         {"fraction", frac},
                         {"split", split_name(sp)},
                         {"accuracies", v},
                         {"mean", mean(v)},
                         {"std", sample_stddev(v)}});
        if (method.key != "mf_ca" && v.size() >= 2) {
          const auto& ref = acc["mf_ca"][fraction_tag(frac)][split_name(sp)];
          if (ref.size() == v.size()) {
            const TTestResult t = paired_t_test(ref, v);
            ttests.push_back({{"method_a", "mf_ca"},
                              {"method_b", method.key},
                              {"fraction", frac},
                              {"split", split_name(sp)},
                              {"t", std::isfinite(t.t) ? json(t.t) : json(t.t > 0 ? "inf" : "-inf")},
                              {"p", t.p},
                              {"df", t.df},
                              {"degenerate", t.degenerate}});
          }
        }
      }
    }
  }
  return {{"cells", cells}, {"ttests", ttests}};
}

json stage_report(const ExperimentConfig& cfg, const fs::path& run_dir) {
  const json metrics = read_json(run_dir / "eval" / "metrics.json", "eval");
  const json summary = build_summary(metrics, cfg);
  write_json(run_dir / "report" / "summary.json", summary);

  std::ofstream os(run_dir / "report" / "summary.csv", std::ios::binary);
  os << "method";
  for (double frac : cfg.fractions) {
    for (Split sp : cfg.test_splits) os << ",f" << fraction_tag(frac) << "_" << split_name(sp);
  }
  os << '\n';
  std::size_t k = 0;
  const auto& cells = summary.at("cells");
  char buf[64];
  for (const auto& method : experiment_methods()) {
    os << method.display;
    for (std::size_t c = 0; c < cfg.fractions.size() * cfg.test_splits.size(); ++c, ++k) {
      std::snprintf(buf, sizeof buf, ",%.2f+-%.2f", 100.0 * cells.at(k).at("mean").get<double>(),
                    100.0 * cells.at(k).at("std").get<double>());
      os << buf;
    }
    os << '\n';
  }
  return summary;
}

json run_experiment(const ExperimentConfig& cfg, const fs::path& run_dir) {
  cfg.validate();
  fs::create_directories(run_dir);
  write_json(run_dir / "config.json", cfg.to_json());
  json out = {{"run_dir", run_dir.string()}, {"stages", json::array()}};
  for (const auto& stage : cfg.stages) {
    const auto t0 = std::chrono::steady_clock::now();
    json result;
    if (stage == "synth") {
      const RunManifest m = stage_synth(cfg, run_dir);
      const auto c = m.split_counts();
      result = {{"train", c[0]}, {"val", c[1]}, {"test1", c[2]}, {"test2", c[3]}};
    } else if (stage == "enhance") {
      result = stage_enhance(cfg, run_dir);
    } else if (stage == "pretrain") {
      result = stage_pretrain(cfg, run_dir);
    } else if (stage == "finetune") {
      result = stage_finetune(cfg, run_dir);
    } else if (stage == "fuse") {
      result = stage_fuse(cfg, run_dir);
    } else if (stage == "eval") {
      result = stage_eval(cfg, run_dir);
    } else if (stage == "report") {
      result = stage_report(cfg, run_dir);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_line(cfg, "stage " + stage + " done in " + std::to_string(secs) + " s");
    out["stages"].push_back({{"name", stage}, {"seconds", secs}});
    out[stage] = result;
  }
  return out;
}

}  // namespace mfvit::pipeline
