#include "scaat/adversarial.hpp"

#include <stdexcept>

namespace scaat {

std::string to_string(AttackVariant v) { return v == AttackVariant::pgd ? "pgd" : "fgsm"; }

AttackVariant attack_variant_from_string(const std::string& name) {
  if (name == "pgd") return AttackVariant::pgd;
  if (name == "fgsm") return AttackVariant::fgsm;
  throw std::invalid_argument("unknown attack variant '" + name + "' (expected pgd|fgsm)");
}

void AdvConfig::validate() const {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("epsilon must be >= 0");
  if (steps < 1) throw std::invalid_argument("PGD needs at least one step");
  if (alpha && !(*alpha > 0.0)) throw std::invalid_argument("alpha must be > 0");
}

}  // namespace scaat
