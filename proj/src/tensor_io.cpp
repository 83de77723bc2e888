#include "clir/tensor_io.hpp"

#include "clir/error.hpp"

namespace clir {

nlohmann::ordered_json tensor_to_json(const NamedTensor& t) {
    nlohmann::ordered_json j;
    j["name"] = t.name;
    j["shape"] = t.shape;
    j["values"] = t.values;
    return j;
}

NamedTensor tensor_from_json(const nlohmann::json& j) {
    NamedTensor t;
    try {
        t.name = j.at("name").get<std::string>();
        t.shape = j.at("shape").get<std::vector<std::size_t>>();
        t.values = j.at("values").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed tensor entry: ") + e.what());
    }
    std::size_t n = 1;
    for (auto s : t.shape) n *= s;
    if (n != t.values.size()) {
        throw DataError("tensor " + t.name + ": shape does not match " + std::to_string(t.values.size()) + " values");
    }
    return t;
}

std::string dump_json(const nlohmann::ordered_json& j) { return j.dump() + "\n"; }

}  // namespace clir
