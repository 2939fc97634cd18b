#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "pifem/mesh.hpp"

using namespace pifem;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
    const fs::path dir = fs::temp_directory_path() / "pifem_mesh_tests";
    fs::create_directories(dir);
    return dir / name;
}

double total_volume(const Mesh& m) {
    double s = 0.0;
    for (double v : element_volumes(m)) s += v;
    return s;
}

}  // namespace

TEST_CASE("box mesh counts and volume closure") {
    const Mesh one = generate_box_mesh(1, 1, 1);
    CHECK(one.node_count() == 8);
    CHECK(one.tet_count() == 6);
    CHECK(std::abs(total_volume(one) - 1.0) < 1e-12);
    CHECK(one.boundary_nodes.size() == 8);  // every node of a single cube touches the boundary

    const Mesh two = generate_box_mesh(2, 2, 2);
    CHECK(two.node_count() == 27);
    CHECK(two.tet_count() == 48);
    REQUIRE(two.dirichlet.size() == 2);
    CHECK(two.dirichlet[0].nodes.size() == 9);
    CHECK(two.dirichlet[0].value == 0.0);
    CHECK(two.dirichlet[1].nodes.size() == 9);
    CHECK(two.dirichlet[1].value == 1.0);
    CHECK(std::abs(total_volume(two) - 1.0) < 1e-12);

    CHECK_THROWS_AS(generate_box_mesh(0, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(generate_box_mesh(2, -1, 2), std::invalid_argument);
}

TEST_CASE("box mesh invariants") {
    const Mesh m = generate_box_mesh(3, 2, 2);
    CHECK_NOTHROW(validate_mesh(m));
    for (int e = 0; e < m.tet_count(); ++e) CHECK(tet_volume(m, e) > 0.0);

    // Uniform Kuhn split: every volume is 1/(6 nx ny nz).
    const double expected = 1.0 / (6.0 * 3 * 2 * 2);
    for (double v : element_volumes(m)) CHECK(v == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("deformation map") {
    const Mesh box = generate_box_mesh(4, 4, 4);

    SUBCASE("amplitude zero is the identity") {
        const Mesh same = apply_deformation(box, 0.0);
        for (int i = 0; i < box.node_count(); ++i)
            for (int c = 0; c < 3; ++c) CHECK(same.nodes[i][c] == box.nodes[i][c]);
    }

    SUBCASE("closed-form image of a corner node") {
        const Mesh deformed = apply_deformation(box, 0.25);
        int corner = -1;
        for (int i = 0; i < box.node_count(); ++i)
            if (box.nodes[i][0] == 1.0 && box.nodes[i][1] == 0.0 && box.nodes[i][2] == 1.0) corner = i;
        REQUIRE(corner >= 0);
        CHECK(deformed.nodes[corner][0] == 1.0);
        CHECK(std::abs(deformed.nodes[corner][1]) < 1e-15);  // 0.25*sin(2*pi) in doubles
        CHECK(deformed.nodes[corner][2] == doctest::Approx(1.25).epsilon(1e-15));
    }

    SUBCASE("all 384 volumes stay positive at amplitude 0.25") {
        const Mesh deformed = apply_deformation(box, 0.25);
        const auto vols = element_volumes(deformed);
        CHECK(vols.size() == 384);
        for (double v : vols) CHECK(v > 0.0);
        // The z-stretch (1+0.25x) integrates to 1.125 over the box; the
        // per-cell discrete sums telescope to the same value exactly.
        CHECK(std::abs(total_volume(deformed) - 1.125) < 1e-12);
    }

    SUBCASE("connectivity and patches carried over") {
        const Mesh deformed = apply_deformation(box, 0.25);
        CHECK(deformed.tets == box.tets);
        CHECK(deformed.boundary_nodes == box.boundary_nodes);
        REQUIRE(deformed.dirichlet.size() == 2);
        CHECK(deformed.dirichlet[0].nodes == box.dirichlet[0].nodes);
        CHECK(deformed.dirichlet[1].nodes == box.dirichlet[1].nodes);
    }

    SUBCASE("amplitude outside the supported range is a degenerate-mesh error") {
        CHECK_THROWS_AS(apply_deformation(box, 0.9), DegenerateMeshError);
        CHECK_THROWS_AS(apply_deformation(box, -0.1), DegenerateMeshError);
    }
}

TEST_CASE("mesh json round-trip") {
    const Mesh m = apply_deformation(generate_box_mesh(2, 2, 2), 0.25);
    const auto path = temp_file("roundtrip.json");
    save_mesh(m, path.string());
    const Mesh loaded = load_mesh(path.string());

    CHECK(loaded.tets == m.tets);
    CHECK(loaded.boundary_nodes == m.boundary_nodes);
    REQUIRE(loaded.nodes.size() == m.nodes.size());
    for (size_t i = 0; i < m.nodes.size(); ++i)
        for (int c = 0; c < 3; ++c) CHECK(loaded.nodes[i][c] == m.nodes[i][c]);  // bit-exact
    REQUIRE(loaded.dirichlet.size() == m.dirichlet.size());
    for (size_t p = 0; p < m.dirichlet.size(); ++p) {
        CHECK(loaded.dirichlet[p].nodes == m.dirichlet[p].nodes);
        CHECK(loaded.dirichlet[p].value == m.dirichlet[p].value);
    }
}

TEST_CASE("mesh loader rejects invalid files") {
    SUBCASE("tet index out of range") {
        const auto path = temp_file("bad_index.json");
        std::ofstream(path) << R"({"nodes": [[0,0,0],[1,0,0],[0,1,0],[0,0,1]],
                                  "tets": [[0,1,2,4]], "dirichlet": []})";
        CHECK_THROWS_WITH_AS(load_mesh(path.string()), doctest::Contains("out of range"), MeshParseError);
    }
    SUBCASE("negative-volume tet is named") {
        const auto path = temp_file("bad_volume.json");
        // swapping two vertices of the reference simplex flips its sign
        std::ofstream(path) << R"({"nodes": [[0,0,0],[1,0,0],[0,1,0],[0,0,1]],
                                  "tets": [[0,2,1,3]], "dirichlet": []})";
        CHECK_THROWS_WITH_AS(load_mesh(path.string()), doctest::Contains("tet 0"), MeshParseError);
    }
    SUBCASE("malformed json carries position context") {
        const auto path = temp_file("bad_syntax.json");
        std::ofstream(path) << "{\"nodes\": [[0,0,0]";
        CHECK_THROWS_WITH_AS(load_mesh(path.string()), doctest::Contains("parse error"), MeshParseError);
    }
    SUBCASE("disconnected mesh rejected") {
        const auto path = temp_file("disconnected.json");
        std::ofstream(path) << R"({"nodes": [[0,0,0],[1,0,0],[0,1,0],[0,0,1],
                                             [5,5,5],[6,5,5],[5,6,5],[5,5,6]],
                                  "tets": [[0,1,2,3],[4,5,6,7]], "dirichlet": []})";
        CHECK_THROWS_WITH_AS(load_mesh(path.string()), doctest::Contains("disconnected"), MeshParseError);
    }
    SUBCASE("dirichlet node off the boundary rejected") {
        Mesh m = generate_box_mesh(2, 2, 2);
        m.dirichlet[0].nodes.push_back(13);  // the interior center of the 3x3x3 lattice
        std::sort(m.dirichlet[0].nodes.begin(), m.dirichlet[0].nodes.end());
        const auto path = temp_file("bad_dirichlet.json");
        save_mesh(m, path.string());
        CHECK_THROWS_WITH_AS(load_mesh(path.string()), doctest::Contains("non-boundary"), MeshParseError);
    }
    SUBCASE("overlapping dirichlet patches rejected") {
        Mesh m = generate_box_mesh(1, 1, 1);
        m.dirichlet[1].nodes = m.dirichlet[0].nodes;
        const auto path = temp_file("overlap_dirichlet.json");
        save_mesh(m, path.string());
        CHECK_THROWS_WITH_AS(load_mesh(path.string()), doctest::Contains("two dirichlet"), MeshParseError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_mesh("/nonexistent/mesh.json"), MeshParseError); }
}

TEST_CASE("edge extraction") {
    SUBCASE("single tet gives the complete directed graph on 4 nodes") {
        Mesh m;
        m.nodes = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        m.tets = {{0, 1, 2, 3}};
        m.boundary_nodes = classify_boundary(m);
        CHECK(extract_edges(m).size() == 12);
    }

    const Mesh box = generate_box_mesh(1, 1, 1);
    const auto edges = extract_edges(box);

    SUBCASE("symmetric, sorted, no self-loops, no duplicates") {
        std::set<std::array<int, 2>> seen;
        for (const auto& e : edges) {
            CHECK(e[0] != e[1]);
            CHECK(seen.insert(e).second);
        }
        for (const auto& e : edges)
            CHECK(std::binary_search(edges.begin(), edges.end(), std::array<int, 2>{e[1], e[0]}));
        auto sorted = edges;
        std::sort(sorted.begin(), sorted.end());
        CHECK(sorted == edges);
    }

    SUBCASE("every node of the unit box has degree >= 3") {
        std::vector<int> degree(box.node_count(), 0);
        for (const auto& e : edges) ++degree[e[0]];
        for (int d : degree) CHECK(d >= 3);
    }
}

TEST_CASE("boundary classification") {
    SUBCASE("single tet: all faces and nodes on the boundary") {
        Mesh m;
        m.nodes = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        m.tets = {{0, 1, 2, 3}};
        CHECK(classify_boundary(m) == std::vector<int>{0, 1, 2, 3});
    }
    SUBCASE("(2,2,2) box: exactly one interior node") {
        const Mesh m = generate_box_mesh(2, 2, 2);
        CHECK(m.interior_nodes() == std::vector<int>{13});  // lattice center
    }
    SUBCASE("(4,4,4) box: (5-2)^3 interior lattice nodes") {
        const Mesh m = generate_box_mesh(4, 4, 4);
        CHECK(m.interior_nodes().size() == 27);
    }
    SUBCASE("face shared by three tets is non-manifold") {
        Mesh m;
        m.nodes = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.3, 0.3, 2.0}, {0.2, 0.2, 3.0}};
        m.tets = {{0, 1, 2, 3}, {0, 1, 2, 4}, {0, 1, 2, 5}};
        CHECK_THROWS_AS(classify_boundary(m), NonManifoldError);
    }
}

TEST_CASE("element volumes") {
    SUBCASE("reference simplex") {
        Mesh m;
        m.nodes = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        m.tets = {{0, 1, 2, 3}};
        CHECK(element_volumes(m)[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
    }
    SUBCASE("deformed volumes positive and summing to the mapped domain") {
        const Mesh m = apply_deformation(generate_box_mesh(3, 3, 3), 0.25);
        double sum = 0.0;
        for (double v : element_volumes(m)) {
            CHECK(v > 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.125) < 1e-12);
    }
}

TEST_CASE("dirichlet field helper") {
    const Mesh m = generate_box_mesh(2, 2, 2);
    std::vector<double> value, mask;
    m.dirichlet_field(value, mask);
    int ones = 0;
    for (int i = 0; i < m.node_count(); ++i) {
        if (mask[i] == 1.0) {
            ++ones;
            CHECK(m.nodes[i][0] == value[i]);  // x=0 -> 0, x=1 -> 1
        } else {
            CHECK(mask[i] == 0.0);
            CHECK(value[i] == 0.0);
        }
    }
    CHECK(ones == 18);
}
