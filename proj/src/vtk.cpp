#include "pifem/vtk.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace pifem {

void export_vtk(const Mesh& mesh, const std::vector<std::pair<std::string, Vec>>& point_fields,
                const std::string& path) {
    const int n = mesh.node_count();
    for (const auto& [name, values] : point_fields) {
        if (values.size() != n)
            throw std::invalid_argument("field '" + name + "' has " + std::to_string(values.size()) +
                                        " values for " + std::to_string(n) + " nodes");
        if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
            throw std::invalid_argument("field name '" + name + "' not usable as a VTK array name");
    }

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    char buf[96];

    out << "# vtk DataFile Version 3.0\n";
    out << "tetrahedral mesh with nodal fields\n";
    out << "ASCII\n";
    out << "DATASET UNSTRUCTURED_GRID\n";
    out << "POINTS " << n << " double\n";
    for (const auto& p : mesh.nodes) {
        std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", p[0], p[1], p[2]);
        out << buf;
    }
    out << "CELLS " << mesh.tet_count() << ' ' << 5 * mesh.tet_count() << '\n';
    for (const auto& t : mesh.tets) out << "4 " << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << '\n';
    out << "CELL_TYPES " << mesh.tet_count() << '\n';
    for (int e = 0; e < mesh.tet_count(); ++e) out << "10\n";

    if (!point_fields.empty()) {
        out << "POINT_DATA " << n << '\n';
        for (const auto& [name, values] : point_fields) {
            out << "SCALARS " << name << " double 1\n";
            out << "LOOKUP_TABLE default\n";
            for (int i = 0; i < n; ++i) {
                std::snprintf(buf, sizeof(buf), "%.17g\n", values[i]);
                out << buf;
            }
        }
    }
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

}  // namespace pifem
