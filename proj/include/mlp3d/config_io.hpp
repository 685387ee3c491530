#pragma once

// JSON forms of every configuration document. Readers are strict: unknown
// keys and wrong types raise ConfigError naming the offending keys; absent
// keys keep their defaults.

#include <filesystem>

#include "json.hpp"
#include "mlp3d/gtm.hpp"
#include "mlp3d/network.hpp"
#include "mlp3d/search.hpp"
#include "mlp3d/synthdata.hpp"
#include "mlp3d/train.hpp"

namespace mlp3d {

using Json = nlohmann::json;

Json gtm_to_json(const GtmConfig& cfg);
GtmConfig gtm_from_json(const Json& j);

// A spec document may name a "variant" to start from; explicit keys then
// override it. "gtm" sets every block at once; "gtm_per_block" lists them.
Json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const Json& j);

Json train_to_json(const TrainConfig& cfg);
TrainConfig train_from_json(const Json& j);

Json space_to_json(const SearchSpace& space);
SearchSpace space_from_json(const Json& j);

Json synth_to_json(const SynthConfig& cfg);
SynthConfig synth_from_json(const Json& j);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

// Raises ConfigError listing every key of `j` outside `allowed`.
void require_keys(const Json& j, std::initializer_list<const char*> allowed, const char* what);

}  // namespace mlp3d
