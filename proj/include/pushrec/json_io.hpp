#pragma once

#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "pushrec/common.hpp"

namespace pushrec::json_io {

inline void reject_unknown(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                           const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

/// Leaves `out` untouched when the key is absent.
template <typename T>
void read_opt(const nlohmann::json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where + ": " + e.what());
  }
}

inline nlohmann::json vec_json(const Vec2& v) { return nlohmann::json::array({v.x(), v.y()}); }

inline Vec2 vec_from(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("expected [x, z] pair in " + where);
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace pushrec::json_io
