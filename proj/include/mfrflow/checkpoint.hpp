#pragma once

#include "mfrflow/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mfrflow {

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

inline constexpr char kCheckpointMagic[4] = {'M', 'F', 'R', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Container layout: "MFRW", version (u32 LE), then until end of file one entry
// per tensor: name length (u32 LE), UTF-8 name, rank (u32 LE), dims (u32 LE
// each), float32 LE payload.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

template <typename Scalar>
void save_parameters(const std::filesystem::path& path,
                     const std::vector<Parameter<Scalar>*>& params) {
  std::vector<NamedTensor> entries;
  entries.reserve(params.size());
  for (const auto* p : params) entries.push_back({p->name, p->value.template cast<float>()});
  save_checkpoint(path, entries);
}

/// Assigns every stored tensor to the parameter with the same name. Missing
/// names, unknown names and shape mismatches are format errors.
template <typename Scalar>
void load_parameters(const std::filesystem::path& path, const std::vector<Parameter<Scalar>*>& params) {
  std::vector<NamedTensor> entries = load_checkpoint(path);
  if (entries.size() != params.size()) {
    throw FormatError("checkpoint " + path.string() + " holds " + std::to_string(entries.size()) +
                      " tensors, model expects " + std::to_string(params.size()));
  }
  for (auto* p : params) {
    bool found = false;
    for (auto& e : entries) {
      if (e.name != p->name) continue;
      if (e.value.shape() != p->value.shape()) {
        throw FormatError("checkpoint tensor '" + e.name + "' has shape " + to_string(e.value.shape()) +
                          ", expected " + to_string(p->value.shape()));
      }
      p->value = e.value.template cast<Scalar>();
      p->zero_grad();
      found = true;
      break;
    }
    if (!found) throw FormatError("checkpoint lacks tensor '" + p->name + "'");
  }
}

}  // namespace mfrflow
