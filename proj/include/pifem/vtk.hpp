#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pifem/mesh.hpp"
#include "pifem/sparse.hpp"

namespace pifem {

/// Legacy ASCII VTK unstructured grid (cell type 10) with one POINT_DATA
/// scalar array per named field. Field lengths must equal the node count.
void export_vtk(const Mesh& mesh, const std::vector<std::pair<std::string, Vec>>& point_fields,
                const std::string& path);

}  // namespace pifem
