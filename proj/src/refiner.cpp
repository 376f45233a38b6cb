#include "spear/refiner.hpp"

#include "spear/errors.hpp"

namespace spear {

RefInvocation RefInvocation::literal(std::string text) {
  RefInvocation inv;
  inv.literal_text = std::move(text);
  return inv;
}

RefInvocation RefInvocation::named(std::string id) {
  RefInvocation inv;
  inv.refiner_id = std::move(id);
  return inv;
}

std::string RefInvocation::display_id() const {
  return is_literal() ? "literal" : refiner_id;
}

void RefinerRegistry::add(RefinerSpec spec) {
  std::string id = spec.id;
  specs_[id] = std::move(spec);
}

bool RefinerRegistry::has(const std::string& id) const { return specs_.count(id) > 0; }

const RefinerSpec& RefinerRegistry::get(const std::string& id) const {
  auto it = specs_.find(id);
  if (it == specs_.end()) throw SpearError(Errc::UnknownRefiner, "no refiner '" + id + "'");
  return it->second;
}

std::string assisted_meta_prompt(const std::string& hint, const std::string& current_text) {
  return "TASK: refine\nHINT: " + hint + "\nPROMPT:\n" + current_text;
}

std::string auto_meta_prompt(const std::string& signal_text, const std::string& objective,
                             const std::string& current_text) {
  std::string out = "TASK: refine\nSIGNALS: " + signal_text;
  if (!objective.empty()) out += "\nOBJECTIVE: " + objective;
  out += "\nPROMPT:\n" + current_text;
  return out;
}

}  // namespace spear
