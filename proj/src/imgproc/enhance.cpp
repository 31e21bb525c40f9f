#include "mfvit/enhance.hpp"

#include "mfvit/error.hpp"

namespace mfvit::imgproc {

Enhancer::Enhancer(EnhanceConfig cfg)
    : cfg_(std::move(cfg)), bank_(build_filter_bank(cfg_.grid, cfg_.grid, cfg_.bank)) {
  cfg_.elea.validate();
}

EnhancedFeatures Enhancer::run(const Image2D& image, EleaTrace* trace) const {
  if (image.empty()) throw DimensionError("enhance of empty image");
  const Image2D work = resize_bilinear(image, cfg_.grid, cfg_.grid);
  const MonogenicResponses resp = monogenic_responses(work, bank_);
  EnhancedFeatures f;
  f.lwpa = lwpa(resp);
  f.lpe = lpe(resp);
  f.elea = elea(f.lpe, cfg_.elea, trace);
  f.mf = mf_combine(f.lwpa, f.lpe, f.elea);
  return f;
}

}  // namespace mfvit::imgproc
