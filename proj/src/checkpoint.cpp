#include "refl/checkpoint.hpp"

#include <sstream>

#include "refl/textio.hpp"

namespace refl {

void write_checkpoint(const ParamStore& params, const std::string& path) {
    std::ostringstream out;
    out << "refl-ckpt v1 " << params.count() << "\n";
    for (const auto& [name, e] : params.entries()) {
        out << name << " " << e.value.rows() << " " << e.value.cols() << "\n";
        for (std::size_t i = 0; i < e.value.rows(); ++i) {
            const double* row = e.value.row(i);
            for (std::size_t j = 0; j < e.value.cols(); ++j) {
                if (j) out << " ";
                out << fmt_g17(row[j]);
            }
            out << "\n";
        }
    }
    atomic_write_text(path, out.str());
}

ParamStore read_checkpoint(const std::string& path) {
    std::istringstream in(read_text(path));
    std::string magic, version;
    std::size_t count = 0;
    in >> magic >> version >> count;
    if (magic != "refl-ckpt" || version != "v1" || !in) {
        throw IoError("bad checkpoint header in " + path);
    }
    ParamStore params;
    for (std::size_t p = 0; p < count; ++p) {
        std::string name;
        std::size_t rows = 0, cols = 0;
        in >> name >> rows >> cols;
        if (!in) throw IoError("truncated checkpoint: " + path);
        Matrix m(rows, cols);
        for (double& v : m.data()) in >> v;
        if (!in) throw IoError("truncated checkpoint: " + path);
        params.add(name, std::move(m));
    }
    return params;
}

}  // namespace refl
