#pragma once

#include <string>

#include "refl/matrix.hpp"

namespace refl {

// Text checkpoint: "refl-ckpt v1 <param_count>"; per parameter a
// "<name> <rows> <cols>" line followed by the rows, 17 significant digits.
void write_checkpoint(const ParamStore& params, const std::string& path);
ParamStore read_checkpoint(const std::string& path);

}  // namespace refl
