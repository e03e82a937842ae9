#pragma once

#include <initializer_list>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "ncadapt/errors.hpp"

namespace ncadapt {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw UsageError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw UsageError("unknown key '" + it.key() + "' in " + where);
  }
}

namespace detail {
template <class T>
struct is_unsigned_vector : std::false_type {};
template <class U>
struct is_unsigned_vector<std::vector<U>> : std::is_unsigned<U> {};
}  // namespace detail

// Like json::value, but a negative or fractional number for a count is an
// error instead of wrapping around.
template <class T>
T field(const nlohmann::json& j, const char* key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  const nlohmann::json& v = j[key];
  auto bad = [&] { return UsageError(std::string("'") + key + "' expects a non-negative integer, got " + v.dump()); };
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!v.is_number_unsigned()) throw bad();
  } else if constexpr (detail::is_unsigned_vector<T>::value) {
    if (!v.is_array()) throw bad();
    for (const auto& e : v)
      if (!e.is_number_unsigned()) throw bad();
  }
  return v.get<T>();
}

}  // namespace ncadapt
