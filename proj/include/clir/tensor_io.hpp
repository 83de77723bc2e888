#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

namespace clir {

/// A named tensor as it appears in checkpoint files.
struct NamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::ordered_json tensor_to_json(const NamedTensor& t);
NamedTensor tensor_from_json(const nlohmann::json& j);

/// Serializes with round-trip (shortest exact) double formatting.
std::string dump_json(const nlohmann::ordered_json& j);

}  // namespace clir
