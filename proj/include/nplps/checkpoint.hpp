#pragma once

#include "nplps/core.hpp"

#include <string>
#include <vector>

namespace nplps {

// Named-tensor container file. Layout (see docs/FORMATS.md):
//   nplps-checkpoint 1\n
//   tensor <name> <rows> <cols>\n   (one line per tensor)
//   data\n
//   <raw little-endian float64, column-major, in header order>
struct NamedTensor {
  std::string name;
  MatX value;
};

void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::string& path);

// Lookup helper; throws std::runtime_error when the name is missing.
const MatX& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

}  // namespace nplps
