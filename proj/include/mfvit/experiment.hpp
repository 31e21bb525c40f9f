#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mfvit/dataset.hpp"
#include "mfvit/enhance.hpp"
#include "mfvit/finetune.hpp"
#include "mfvit/fusion.hpp"
#include "mfvit/moco.hpp"
#include "mfvit/synth.hpp"
#include "json.hpp"

namespace mfvit::pipeline {

inline constexpr int kMetricsSchemaVersion = 1;

struct ExperimentConfig {
  // dataset
  std::filesystem::path dataset_dir;  // empty: <run>/data, generated by the synth stage
  SynthOptions synth;
  // enhance
  imgproc::EnhanceConfig enhance;
  // model
  std::string preset = "toy";
  vit::VitConfig model = vit::VitConfig::toy();
  // pretrain
  ssl::MocoConfig moco = ssl::MocoConfig::toy();
  // finetune
  FinetuneConfig lp;
  FinetuneConfig ft;
  std::vector<double> fractions{0.3, 1.0};
  int repeats = 5;
  // fusion
  fusion::FusionTrainConfig fusion_ca;
  fusion::FusionTrainConfig fusion_lp;
  // eval
  std::vector<Split> test_splits{Split::test1, Split::test2};
  // seeds
  std::uint64_t seed = 7;

  int threads = 1;
  bool verbose = false;
  std::vector<std::string> stages{"synth", "enhance", "pretrain", "finetune", "fuse", "eval", "report"};

  // Desk-scale defaults used by the acceptance run.
  static ExperimentConfig toy();
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

struct MethodSpec {
  std::string key;
  std::string display;
};

// random_lp, cxr_lp, cxr_ft, enh_lp, enh_ft, mf_lp, mf_ca.
const std::vector<MethodSpec>& experiment_methods();

// <root>/run-YYYYmmdd-HHMMSS
std::filesystem::path timestamped_run_dir(const std::filesystem::path& root);

// Seed of the label-fraction subset for (fraction index, repeat).
std::uint64_t subset_seed(std::uint64_t seed, std::size_t fraction_index, int repeat);
std::string fraction_tag(double fraction);

// Executes cfg.stages in order inside run_dir. Each stage reads its inputs
// from disk, so stages can be rerun independently. Returns a summary of the
// stages executed.
nlohmann::json run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);

// Individual stages.
RunManifest stage_synth(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);
nlohmann::json stage_enhance(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);
nlohmann::json stage_pretrain(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);
nlohmann::json stage_finetune(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);
nlohmann::json stage_fuse(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);
nlohmann::json stage_eval(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);
nlohmann::json stage_report(const ExperimentConfig& cfg, const std::filesystem::path& run_dir);

// Summary table (methods x fractions x splits) and paired t-tests of every
// method against mf_ca, built from a metrics JSON document.
nlohmann::json build_summary(const nlohmann::json& metrics, const ExperimentConfig& cfg);

}  // namespace mfvit::pipeline
