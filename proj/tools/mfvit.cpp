// mfvit command line: individual stages and the full experiment driver.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mfvit/error.hpp"
#include "mfvit/experiment.hpp"
#include "mfvit/metrics.hpp"
#include "mfvit/stats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mfvit;
using namespace mfvit::pipeline;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
  bool verbose = false;
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig cfg = ExperimentConfig::toy();
  if (!g.config.empty()) {
    std::ifstream is(g.config);
    if (!is) throw DependencyError("cannot open config " + g.config);
    json j;
    try {
      j = json::parse(is);
    } catch (const json::exception& e) {
      throw ParseError(g.config + ": " + e.what());
    }
    cfg = ExperimentConfig::from_json(j);
  }
  if (g.seed_set) cfg.seed = g.seed;
  cfg.threads = g.threads;
  cfg.verbose = g.verbose;
  return cfg;
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (e.is_regular_file() && (ext == ".png" || ext == ".pgm" || ext == ".img2")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

RunManifest manifest_for(const std::string& data, const std::string& labels) {
  const fs::path csv = labels.empty() ? fs::path(data) / "manifest.csv" : fs::path(labels);
  RunManifest m = load_manifest(csv);
  if (!data.empty()) m.base_dir = data;
  return m;
}

std::vector<double> parse_scores(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ParseError("bad score '" + tok + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-feature ViT pipeline for chest X-ray classification"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { g.seed = s; g.seed_set = true; }, "base seed");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", g.verbose, "progress on stderr");

  // enhance
  auto* enh = app.add_subcommand("enhance", "phase-based enhancement of a directory of images");
  std::string enh_in, enh_out;
  bool emit_intermediates = false;
  enh->add_option("--input", enh_in)->required()->check(CLI::ExistingDirectory);
  enh->add_option("--output", enh_out)->required();
  enh->add_flag("--emit-intermediates", emit_intermediates, "also write LwPA, LPE and ELEA");

  // synth-data
  auto* syn = app.add_subcommand("synth-data", "write the synthetic 3-class dataset");
  std::string syn_out;
  int syn_n = -1;
  bool syn_test2 = false;
  syn->add_option("--out", syn_out)->required();
  syn->add_option("--n-per-class", syn_n);
  syn->add_flag("--test2", syn_test2, "add the shifted second test split");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "momentum-contrast pretraining of one branch");
  std::string pre_data, pre_features = "cxr", pre_out;
  int pre_epochs = -1;
  pre->add_option("--data", pre_data)->required()->check(CLI::ExistingDirectory);
  pre->add_option("--features", pre_features)->check(CLI::IsMember({"cxr", "enh"}));
  pre->add_option("--out", pre_out)->required();
  pre->add_option("--epochs", pre_epochs);

  // finetune
  auto* ft = app.add_subcommand("finetune", "linear probe or fine-tune a single branch");
  std::string ft_data, ft_features = "cxr", ft_protocol = "ft", ft_init, ft_out;
  double ft_fraction = 1.0;
  int ft_epochs = -1;
  ft->add_option("--data", ft_data)->required()->check(CLI::ExistingDirectory);
  ft->add_option("--features", ft_features)->check(CLI::IsMember({"cxr", "enh"}));
  ft->add_option("--protocol", ft_protocol)->check(CLI::IsMember({"lp", "ft", "LP", "FT"}));
  ft->add_option("--init", ft_init, "pretrained checkpoint (random encoder when omitted)");
  ft->add_option("--out", ft_out)->required();
  ft->add_option("--label-fraction", ft_fraction);
  ft->add_option("--epochs", ft_epochs);

  // fuse-train
  auto* fu = app.add_subcommand("fuse-train", "train the two-branch fusion model");
  std::string fu_cxr, fu_enh, fu_tcxr, fu_tenh, fu_mode = "ca", fu_data, fu_labels, fu_out;
  double fu_fraction = 1.0;
  int fu_epochs = -1;
  fu->add_option("--cxr-ckpt", fu_cxr)->required()->check(CLI::ExistingFile);
  fu->add_option("--enh-ckpt", fu_enh)->required()->check(CLI::ExistingFile);
  fu->add_option("--teacher-cxr", fu_tcxr)->check(CLI::ExistingFile);
  fu->add_option("--teacher-enh", fu_tenh)->check(CLI::ExistingFile);
  fu->add_option("--mode", fu_mode)->check(CLI::IsMember({"ca", "lp"}));
  fu->add_option("--data", fu_data)->required()->check(CLI::ExistingDirectory);
  fu->add_option("--labels", fu_labels, "manifest CSV (default <data>/manifest.csv)");
  fu->add_option("--out", fu_out)->required();
  fu->add_option("--label-fraction", fu_fraction);
  fu->add_option("--epochs", fu_epochs);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a classifier or fusion checkpoint on one split");
  std::string ev_ckpt, ev_data, ev_split = "test1", ev_features = "cxr", ev_out, ev_cxr, ev_enh;
  ev->add_option("--ckpt", ev_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--split", ev_split)->check(CLI::IsMember({"train", "val", "test1", "test2"}));
  ev->add_option("--features", ev_features)->check(CLI::IsMember({"cxr", "enh"}));
  ev->add_option("--cxr-ckpt", ev_cxr, "fusion: CXR branch checkpoint");
  ev->add_option("--enh-ckpt", ev_enh, "fusion: Enh branch checkpoint");
  ev->add_option("--out", ev_out, "write the report JSON here");

  // report
  auto* rep = app.add_subcommand("report", "summary table and t-tests of a run directory");
  std::string rep_run;
  rep->add_option("--run", rep_run)->required()->check(CLI::ExistingDirectory);

  // t-test
  auto* tt = app.add_subcommand("t-test", "paired two-sided t-test");
  std::string tt_a, tt_b;
  tt->add_option("--a", tt_a, "comma-separated scores")->required();
  tt->add_option("--b", tt_b, "comma-separated scores")->required();

  // run
  auto* run = app.add_subcommand("run", "execute the experiment stages of the config");
  std::string run_root = "runs", run_dir, run_stages;
  run->add_option("--root", run_root, "parent of the timestamped run directory");
  run->add_option("--run-dir", run_dir, "explicit run directory (reruns stages in place)");
  run->add_option("--stages", run_stages, "comma-separated stage list");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = load_config(g);
    const std::uint64_t seed = cfg.seed;

    if (*enh) {
      const auto inputs = list_images(enh_in);
      enhance_files(inputs, enh_out, cfg.enhance, cfg.threads, true);
      if (!emit_intermediates) {
        for (const auto& p : inputs) {
          for (const char* kind : {"lwpa", "lpe", "elea"}) {
            const auto stem = p.stem().string() + "_" + kind;
            fs::remove(fs::path(enh_out) / (stem + ".img2"));
            fs::remove(fs::path(enh_out) / (stem + ".png"));
          }
        }
      }
      std::cout << "enhanced " << inputs.size() << " images, " << inputs.size() * (emit_intermediates ? 4 : 1)
                << " feature maps in " << enh_out << "\n";
    } else if (*syn) {
      SynthOptions opts = cfg.synth;
      if (syn_n > 0) opts.n_per_class = syn_n;
      if (syn_test2) opts.test2 = true;
      const RunManifest m = make_synthetic_dataset(opts, mix_seed(seed, 1), syn_out);
      const auto c = m.split_counts();
      std::cout << m.rows.size() << " images: train " << c[0] << ", val " << c[1] << ", test1 " << c[2] << ", test2 "
                << c[3] << "\n";
    } else if (*pre) {
      if (pre_epochs > 0) cfg.moco.epochs = pre_epochs;
      cfg.moco.warmup_epochs = std::min(cfg.moco.warmup_epochs, cfg.moco.epochs);
      const RunManifest m = manifest_for(pre_data, "");
      const SplitData train = load_split(m, Split::train, parse_features(pre_features));
      ssl::MocoModel model(cfg.model, cfg.moco, seed);
      ssl::PretrainOptions opts;
      opts.seed = seed;
      opts.checkpoint_path = pre_out;
      opts.log_csv = fs::path(pre_out).replace_extension(".log.csv");
      const auto res = ssl::pretrain(model, train.images, cfg.moco, opts);
      std::printf("pretrained %s: loss %.6f -> %.6f over %d epochs\n", pre_features.c_str(), res.log.front().mean_loss,
                  res.log.back().mean_loss, static_cast<int>(res.log.size()));
    } else if (*ft) {
      const auto protocol = vit::parse_protocol(ft_protocol);
      FinetuneConfig fc = protocol == vit::Protocol::linear_probe ? cfg.lp : cfg.ft;
      if (ft_epochs > 0) fc.epochs = ft_epochs;
      const RunManifest m = manifest_for(ft_data, "");
      const SplitData train = load_split(m, Split::train, parse_features(ft_features));
      const auto idx = sample_label_fraction(train.images.size(), ft_fraction, mix_seed(seed, 100));
      std::vector<imgproc::Image2D> images;
      std::vector<int> labels;
      for (auto i : idx) {
        images.push_back(train.images[i]);
        labels.push_back(train.labels[i]);
      }
      Rng rng(mix_seed(seed, 31));
      vit::VitClassifier model(cfg.model, rng);
      if (!ft_init.empty()) vit::load_encoder(model.encoder(), ad::Checkpoint::read(ft_init));
      auto res = finetune(model, images, labels, fc, seed);
      res.checkpoint.meta["features"] = ft_features;
      res.checkpoint.meta["fraction"] = ft_fraction;
      res.checkpoint.write(ft_out);
      std::printf("%s on %zu images: final loss %.6f\n", vit::protocol_name(protocol).c_str(), images.size(),
                  res.epoch_loss.back());
    } else if (*fu) {
      const auto mode = fusion::parse_fusion_mode(fu_mode);
      auto tc = mode == fusion::FusionMode::ca ? cfg.fusion_ca : cfg.fusion_lp;
      if (fu_epochs > 0) tc.epochs = fu_epochs;
      const RunManifest m = manifest_for(fu_data, fu_labels);
      const SplitData cxr = load_split(m, Split::train, Features::cxr);
      const SplitData enh2 = load_split(m, Split::train, Features::enh);
      const auto idx = sample_label_fraction(cxr.images.size(), fu_fraction, mix_seed(seed, 100));
      std::vector<imgproc::Image2D> ic, ie;
      std::vector<int> labels;
      for (auto i : idx) {
        ic.push_back(cxr.images[i]);
        ie.push_back(enh2.images[i]);
        labels.push_back(cxr.labels[i]);
      }
      fusion::FusionModel model(cfg.model, mode, mix_seed(seed, 41));
      model.load_branches(ad::Checkpoint::read(fu_cxr), ad::Checkpoint::read(fu_enh));
      Rng trng(0);
      vit::VitClassifier teacher_c(cfg.model, trng), teacher_e(cfg.model, trng);
      fusion::Teachers teachers;
      if (mode == fusion::FusionMode::ca) {
        if (fu_tcxr.empty() || fu_tenh.empty()) throw ConfigError("CA fusion needs --teacher-cxr and --teacher-enh");
        load_classifier(teacher_c, ad::Checkpoint::read(fu_tcxr));
        load_classifier(teacher_e, ad::Checkpoint::read(fu_tenh));
        teachers = {&teacher_c, &teacher_e};
      }
      auto res = fusion::train_fusion(model, ic, ie, labels, tc, teachers, seed);
      res.checkpoint.meta["fraction"] = fu_fraction;
      res.checkpoint.write(fu_out);
      std::printf("fusion %s on %zu pairs: final loss %.6f\n", fu_mode.c_str(), labels.size(), res.epoch_loss.back());
    } else if (*ev) {
      const RunManifest m = manifest_for(ev_data, "");
      const Split split = parse_split(ev_split);
      const auto ckpt = ad::Checkpoint::read(ev_ckpt);
      std::vector<int> truth, pred;
      if (ckpt.meta.value("stage", std::string()) == "fusion") {
        if (ev_cxr.empty() || ev_enh.empty()) throw ConfigError("fusion checkpoint needs --cxr-ckpt and --enh-ckpt");
        const auto mode = fusion::parse_fusion_mode(ckpt.meta.at("mode").get<std::string>());
        fusion::FusionModel model(cfg.model, mode, 0);
        model.load_branches(ad::Checkpoint::read(ev_cxr), ad::Checkpoint::read(ev_enh));
        model.load_checkpoint(ckpt);
        const SplitData c = load_split(m, split, Features::cxr);
        const SplitData e = load_split(m, split, Features::enh);
        truth = c.labels;
        pred = predict(model, c.images, e.images);
      } else {
        Rng rng(0);
        vit::VitClassifier model(cfg.model, rng);
        load_classifier(model, ckpt);
        const SplitData d = load_split(m, split, parse_features(ev_features));
        truth = d.labels;
        pred = predict(model, d.images);
      }
      const json report = to_json(evaluate_predictions(truth, pred));
      if (!ev_out.empty()) {
        std::ofstream os(ev_out);
        os << report.dump(2) << '\n';
      }
      std::printf("accuracy %.4f on %zu images\n", report.at("accuracy").get<double>(), truth.size());
    } else if (*rep) {
      const fs::path rd = rep_run;
      if (g.config.empty() && fs::exists(rd / "config.json")) {
        std::ifstream is(rd / "config.json");
        cfg = ExperimentConfig::from_json(json::parse(is));
      }
      stage_report(cfg, rd);
      std::ifstream csv(rd / "report" / "summary.csv");
      std::cout << csv.rdbuf();
    } else if (*tt) {
      const auto r = paired_t_test(parse_scores(tt_a), parse_scores(tt_b));
      std::printf("t = %.10g\np = %.10g\ndf = %g%s\n", r.t, r.p, r.df, r.degenerate ? "\n(degenerate: zero variance)" : "");
    } else if (*run) {
      if (!run_stages.empty()) {
        cfg.stages.clear();
        std::stringstream ss(run_stages);
        std::string s;
        while (std::getline(ss, s, ',')) cfg.stages.push_back(s);
      }
      const fs::path rd = run_dir.empty() ? timestamped_run_dir(run_root) : fs::path(run_dir);
      const json out = run_experiment(cfg, rd);
      for (const auto& st : out.at("stages")) {
        std::printf("%-9s %8.1f s\n", st.at("name").get<std::string>().c_str(), st.at("seconds").get<double>());
      }
      std::cout << "run directory: " << rd.string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "mfvit: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "mfvit: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
