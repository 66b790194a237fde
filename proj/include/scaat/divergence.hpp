#pragma once

#include <span>

namespace scaat {

/// sum P log2(P / Q), with 1e-12 added inside each log. Clamped at zero to
/// absorb the rounding the floor introduces. Throws on length mismatch.
double kl_div(std::span<const double> p, std::span<const double> q);

/// 1/2 KL(P||Q) + 1/2 KL(Q||P), evaluated termwise as
/// 1/2 sum (P - Q)(log2 P - log2 Q) so it is exactly symmetric and every
/// term is non-negative.
double js_div(std::span<const double> p, std::span<const double> q);

}  // namespace scaat
