#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "fedkm/types.hpp"

namespace fedkm {

class InstanceFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Instance files are UTF-8 JSON:
//   {"name": ..., "K": ..., "n_y": ...,
//    "nodes": [{"node_id": i, "observations": [[...], ...]}, ...],
//    "box": {"lo": [...], "hi": [...]},
//    "big_m": {"<node_id>": [...], ...}}
// Doubles are written in shortest round-trip form.

std::string instance_to_json(const ProblemInstance& instance);
ProblemInstance instance_from_json(const std::string& text);

ProblemInstance read_instance(const std::filesystem::path& path);
void write_instance(const ProblemInstance& instance, const std::filesystem::path& path);

}  // namespace fedkm
