#pragma once

#include <string>

namespace refl {

// Writes to "<path>.tmp" then renames, so readers never see partial files.
void atomic_write_text(const std::string& path, const std::string& content);

std::string read_text(const std::string& path);

// %.9g / %.17g formatting; 17 significant digits round-trips f64 exactly.
std::string fmt_g9(double v);
std::string fmt_g17(double v);

}  // namespace refl
