#include "spear/value.hpp"

#include <cstdlib>

namespace spear {

std::optional<Value> lookup_path(const Value& root, const std::string& path) {
  const Value* cur = &root;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    std::size_t dot = path.find('.', pos);
    std::string seg = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (seg.empty()) return std::nullopt;
    if (cur->is_object()) {
      auto it = cur->find(seg);
      if (it == cur->end()) return std::nullopt;
      cur = &*it;
    } else if (cur->is_array()) {
      char* end = nullptr;
      long idx = std::strtol(seg.c_str(), &end, 10);
      if (end == nullptr || *end != '\0' || idx < 0 ||
          static_cast<std::size_t>(idx) >= cur->size()) {
        return std::nullopt;
      }
      cur = &(*cur)[static_cast<std::size_t>(idx)];
    } else {
      return std::nullopt;
    }
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  return *cur;
}

std::string value_to_text(const Value& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

}  // namespace spear
