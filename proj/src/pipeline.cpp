#include "rainshield/pipeline.hpp"

#include <stdexcept>

#include "rainshield/losses.hpp"

namespace rainshield {

Pipeline::Pipeline(std::string name, std::shared_ptr<const SegNet<float>> seg,
                   std::shared_ptr<const DerainNet<float>> derain)
    : name_(std::move(name)), seg_(std::move(seg)), derain_(std::move(derain)) {
  if (!seg_) throw std::invalid_argument("pipeline '" + name_ + "' has no segmentation model");
  if (derain_ && seg_->descriptor().in_channels != 3)
    throw std::invalid_argument("pipeline '" + name_ + "': derain output has 3 channels, seg expects " +
                                std::to_string(seg_->descriptor().in_channels));
}

std::vector<Pipeline::Stage> Pipeline::stages() const {
  if (derain_) return {Stage::derain, Stage::seg};
  return {Stage::seg};
}

Image Pipeline::restore(const Image& x) const { return derain_ ? derain_->forward(x) : x; }

Image Pipeline::logits(const Image& x) const {
  return derain_ ? seg_->forward(derain_->forward(x)) : seg_->forward(x);
}

std::vector<LabelMap> Pipeline::predict(const Image& x) const { return argmax_labels(logits(x)); }

}  // namespace rainshield
