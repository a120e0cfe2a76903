#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rainshield/models.hpp"

namespace rainshield {

/// Inference chain: optional derain model followed by a segmentation model.
class Pipeline {
 public:
  enum class Stage { derain, seg };

  Pipeline(std::string name, std::shared_ptr<const SegNet<float>> seg,
           std::shared_ptr<const DerainNet<float>> derain = nullptr);

  const std::string& name() const { return name_; }
  std::vector<Stage> stages() const;
  bool has_derain() const { return derain_ != nullptr; }
  const SegNet<float>& seg() const { return *seg_; }
  const DerainNet<float>* derain() const { return derain_.get(); }
  std::shared_ptr<const SegNet<float>> seg_ptr() const { return seg_; }
  std::shared_ptr<const DerainNet<float>> derain_ptr() const { return derain_; }

  /// Derain output, or x itself when there is no derain stage.
  Image restore(const Image& x) const;
  Image logits(const Image& x) const;
  std::vector<LabelMap> predict(const Image& x) const;

 private:
  std::string name_;
  std::shared_ptr<const SegNet<float>> seg_;
  std::shared_ptr<const DerainNet<float>> derain_;
};

}  // namespace rainshield
