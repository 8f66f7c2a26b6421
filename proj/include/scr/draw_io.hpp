#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include <json.hpp>

#include "scr/edpm.hpp"

namespace scr {

// Fixed key order: gamma, gamma_nested, theta, omega, alpha_omega, iter.
nlohmann::ordered_json draw_to_json(const MixtureDraw& draw);
MixtureDraw draw_from_json(const nlohmann::json& j);  // throws DataError

// One JSON object per line.
void write_draw_line(std::ostream& out, const MixtureDraw& draw);
void write_draws(const std::filesystem::path& path, const std::vector<MixtureDraw>& draws);
std::vector<MixtureDraw> read_draws(std::istream& in);
std::vector<MixtureDraw> read_draws(const std::filesystem::path& path);

}  // namespace scr
