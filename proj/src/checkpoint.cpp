#include "nplps/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nplps {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_tensors: cannot open " + path);
  out << "nplps-checkpoint 1\n";
  for (const auto& t : tensors) {
    if (t.name.find_first_of(" \n\t") != std::string::npos)
      throw std::runtime_error("save_tensors: tensor name contains whitespace: " + t.name);
    out << "tensor " << t.name << " " << t.value.rows() << " " << t.value.cols() << "\n";
  }
  out << "data\n";
  for (const auto& t : tensors)
    out.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(sizeof(double) * t.value.size()));
  if (!out) throw std::runtime_error("save_tensors: write failed for " + path);
}

std::vector<NamedTensor> load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_tensors: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "nplps-checkpoint 1")
    throw std::runtime_error("load_tensors: bad magic in " + path);
  std::vector<NamedTensor> tensors;
  while (std::getline(in, line)) {
    if (line == "data") break;
    std::istringstream ls(line);
    std::string tag, name;
    Eigen::Index rows = 0, cols = 0;
    if (!(ls >> tag >> name >> rows >> cols) || tag != "tensor" || rows < 0 || cols < 0)
      throw std::runtime_error("load_tensors: bad header line '" + line + "' in " + path);
    tensors.push_back({name, MatX(rows, cols)});
  }
  if (line != "data") throw std::runtime_error("load_tensors: missing data section in " + path);
  for (auto& t : tensors) {
    in.read(reinterpret_cast<char*>(t.value.data()),
            static_cast<std::streamsize>(sizeof(double) * t.value.size()));
    if (!in) throw std::runtime_error("load_tensors: truncated data in " + path);
  }
  return tensors;
}

const MatX& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw std::runtime_error("checkpoint: missing tensor " + name);
}

}  // namespace nplps
