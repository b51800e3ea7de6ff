#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "tcop/grid/network.hpp"

namespace tcop::grid {

/// Reads the JSON case schema (MW/MVAr at the boundary, p.u. inside).
NetworkCase case_from_json(const nlohmann::json& j);
nlohmann::json case_to_json(const NetworkCase& c);

NetworkCase load_case(const std::filesystem::path& path);
void save_case(const NetworkCase& c, const std::filesystem::path& path);

/// Stable 64-bit fingerprint of the case content, hex encoded.
std::string case_hash(const NetworkCase& c);

}  // namespace tcop::grid
