#pragma once

#include "mfvit/elea.hpp"
#include "mfvit/phase.hpp"

namespace mfvit::imgproc {

struct EnhanceConfig {
  int grid = 512;  // working grid, power of two
  FilterBankParams bank;
  EleaParams elea;
};

struct EnhancedFeatures {
  Image2D lwpa;
  Image2D lpe;
  Image2D elea;
  Image2D mf;
};

// Immutable enhancement pipeline; run() is safe to call concurrently.
class Enhancer {
 public:
  explicit Enhancer(EnhanceConfig cfg);

  const EnhanceConfig& config() const { return cfg_; }
  const FilterBank& bank() const { return bank_; }

  // Resamples the input to the working grid when needed, then computes
  // LwPA, LPE, ELEA and their combination, all in [0, 1]. The trace, when
  // given, records the ELEA iterations.
  EnhancedFeatures run(const Image2D& image, EleaTrace* trace = nullptr) const;

 private:
  EnhanceConfig cfg_;
  FilterBank bank_;
};

}  // namespace mfvit::imgproc
