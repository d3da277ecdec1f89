#pragma once

// Flat binary parameter container: magic "EABN", format version u32,
// parameter count u64, then per-parameter records (name length + name,
// rank u32, dims u64 each, little-endian f32 payload).

#include <cstdint>
#include <string>
#include <vector>

#include "eabn/losses.hpp"
#include "eabn/model.hpp"

namespace eabn {

struct NamedTensor {
  std::string name;
  std::vector<int64_t> dims;
  std::vector<float> data;
};

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

// every model tensor (including running statistics) plus the class centers
std::vector<NamedTensor> collect_named(EabnModel<float>& model, ClassCenters<float>* centers);

// writes loaded values back into the model; names and shapes must match
void apply_checkpoint(EabnModel<float>& model, ClassCenters<float>* centers,
                      const std::vector<NamedTensor>& tensors);

}  // namespace eabn
