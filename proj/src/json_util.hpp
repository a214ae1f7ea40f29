#pragma once

#include <initializer_list>
#include <string>

#include "json.hpp"
#include "skipnet/error.hpp"

namespace skipnet::detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                                const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || item.key() == k;
    if (!ok) throw ConfigError("unknown key '" + section + "." + item.key() + "'");
  }
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out, const std::string& section) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("invalid value for '" + section + "." + key + "': " + it->dump());
  }
}

}  // namespace skipnet::detail
