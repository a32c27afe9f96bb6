#pragma once

#include <cstdint>
#include <vector>

#include "fedet/tensor.hpp"

namespace fedet {

using ClassId = uint32_t;

// One labeled example: a seq x feature_dim matrix plus its class.
struct Sample {
  Tensor features;
  ClassId label = 0;
};

// Random-access view over distillation data. Consolidation only needs
// size() and at(); auxiliary datasets implement at() lazily so nothing
// beyond the working batch is materialized.
class DistillDataset {
public:
  virtual ~DistillDataset() = default;
  virtual size_t size() const = 0;
  virtual Sample at(size_t i) const = 0;
};

class VectorDataset final : public DistillDataset {
public:
  VectorDataset() = default;
  explicit VectorDataset(std::vector<Sample> samples)
      : samples_(std::move(samples)) {}

  size_t size() const override { return samples_.size(); }
  Sample at(size_t i) const override { return samples_.at(i); }

  std::vector<Sample>& samples() { return samples_; }

private:
  std::vector<Sample> samples_;
};

}  // namespace fedet
