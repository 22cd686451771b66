#include "ksfem/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "ksfem/error.hpp"

namespace ksfem {

bool Box::contains(const Point& p, double tol) const {
  return (p.array() >= lo.array() - tol).all() && (p.array() <= hi.array() + tol).all();
}

Point Box::clamp(const Point& p) const { return p.cwiseMax(lo).cwiseMin(hi); }

bool Box::on_surface(const Point& p, double tol) const {
  if (!contains(p, tol)) return false;
  for (int d = 0; d < 3; ++d) {
    if (std::abs(p[d] - lo[d]) <= tol || std::abs(p[d] - hi[d]) <= tol) return true;
  }
  return false;
}

double signed_volume(const Point& a, const Point& b, const Point& c, const Point& d) {
  return (b - a).dot((c - a).cross(d - a)) / 6.0;
}

namespace {

double surface_tolerance(const Box& box) { return 1e-12 * std::max(1.0, box.extent().maxCoeff()); }

}  // namespace

Mesh::Mesh(std::vector<Point> nodes, std::vector<Tet> tets, Box box)
    : nodes_(std::move(nodes)), tets_(std::move(tets)), box_(box) {
  if ((box_.extent().array() <= 0.0).any()) throw MeshError("degenerate box: zero or negative extent");
  const int nn = num_nodes();
  const double tol = surface_tolerance(box_);
  for (int t = 0; t < num_tets(); ++t) {
    for (int v : tets_[t]) {
      if (v < 0 || v >= nn) throw MeshError(fmt::format("tet {} references node {} out of range", t, v));
    }
    const double vol = tet_volume(t);
    if (!(vol > 0.0)) throw MeshError(fmt::format("tet {} has non-positive volume {:.3e}", t, vol));
  }
  boundary_.assign(nn, 0);
  for (int i = 0; i < nn; ++i) {
    if (!box_.contains(nodes_[i], tol)) {
      throw MeshError(fmt::format("node {} ({}, {}, {}) lies outside the domain box", i, nodes_[i][0],
                                  nodes_[i][1], nodes_[i][2]));
    }
    if (box_.on_surface(nodes_[i], tol)) {
      boundary_[i] = 1;
      boundary_list_.push_back(i);
    }
  }
}

double Mesh::tet_volume(int t) const {
  const Tet& k = tets_[t];
  return signed_volume(nodes_[k[0]], nodes_[k[1]], nodes_[k[2]], nodes_[k[3]]);
}

double Mesh::total_volume() const {
  double v = 0.0;
  for (int t = 0; t < num_tets(); ++t) v += tet_volume(t);
  return v;
}

double Mesh::max_edge() const {
  double h = 0.0;
  for (const Tet& k : tets_) {
    for (int a = 0; a < 4; ++a) {
      for (int b = a + 1; b < 4; ++b) h = std::max(h, (nodes_[k[a]] - nodes_[k[b]]).norm());
    }
  }
  return h;
}

std::vector<std::array<int, 3>> Mesh::boundary_faces() const {
  // Face opposite local vertex a, ordered so the normal points away from it.
  static constexpr int kFace[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};
  std::map<std::array<int, 3>, std::pair<std::array<int, 3>, int>> faces;
  for (const Tet& k : tets_) {
    for (const auto& f : kFace) {
      std::array<int, 3> oriented{k[f[0]], k[f[1]], k[f[2]]};
      std::array<int, 3> key = oriented;
      std::sort(key.begin(), key.end());
      auto [it, inserted] = faces.try_emplace(key, oriented, 0);
      ++it->second.second;
    }
  }
  std::vector<std::array<int, 3>> out;
  for (const auto& [key, entry] : faces) {
    if (entry.second == 1) out.push_back(entry.first);
  }
  return out;
}

Mesh Mesh::with_nodes(std::vector<Point> nodes) const {
  if (nodes.size() != nodes_.size()) throw MeshError("with_nodes: node count mismatch");
  return Mesh(std::move(nodes), tets_, box_);
}

Mesh build_box_mesh(const Box& box, int n) {
  if ((box.extent().array() <= 0.0).any()) throw MeshError("build_box_mesh: degenerate box");
  if (n < 1) throw MeshError(fmt::format("build_box_mesh: need at least one subdivision, got {}", n));
  const int m = n + 1;
  auto id = [m](int i, int j, int k) { return i + m * (j + m * k); };

  std::vector<Point> nodes;
  nodes.reserve(static_cast<size_t>(m) * m * m);
  const Point h = box.extent() / n;
  for (int k = 0; k < m; ++k) {
    for (int j = 0; j < m; ++j) {
      for (int i = 0; i < m; ++i) {
        // Pin the last layer to hi exactly so boundary tagging is exact.
        Point p(i == n ? box.hi[0] : box.lo[0] + i * h[0], j == n ? box.hi[1] : box.lo[1] + j * h[1],
                k == n ? box.hi[2] : box.lo[2] + k * h[2]);
        nodes.push_back(p);
      }
    }
  }

  static constexpr int kPerm[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  std::vector<Tet> tets;
  tets.reserve(6 * static_cast<size_t>(n) * n * n);
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        for (const auto& perm : kPerm) {
          std::array<int, 3> c{i, j, k};
          Tet t;
          t[0] = id(c[0], c[1], c[2]);
          for (int s = 0; s < 3; ++s) {
            ++c[perm[s]];
            t[s + 1] = id(c[0], c[1], c[2]);
          }
          if (signed_volume(nodes[t[0]], nodes[t[1]], nodes[t[2]], nodes[t[3]]) < 0.0) std::swap(t[2], t[3]);
          tets.push_back(t);
        }
      }
    }
  }
  return Mesh(std::move(nodes), std::move(tets), box);
}

ScalarField::ScalarField(MeshPtr m, Eigen::VectorXd v) : mesh(std::move(m)), values(std::move(v)) {
  if (mesh && values.size() != mesh->num_nodes()) {
    throw MeshError(fmt::format("ScalarField: {} values for {} nodes", values.size(), mesh->num_nodes()));
  }
}

ScalarField ScalarField::zeros(MeshPtr m) {
  const int n = m->num_nodes();
  return ScalarField(std::move(m), Eigen::VectorXd::Zero(n));
}

// ---------------------------------------------------------------------------
// Medit ASCII

void write_mesh(const Mesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path));
  out << "MeshVersionFormatted 2\n\nDimension 3\n\nVertices\n" << mesh.num_nodes() << "\n";
  for (int i = 0; i < mesh.num_nodes(); ++i) {
    const Point& p = mesh.node(i);
    out << fmt::format("{:.17g} {:.17g} {:.17g} {}\n", p[0], p[1], p[2], mesh.is_boundary(i) ? 1 : 0);
  }
  out << "\nTetrahedra\n" << mesh.num_tets() << "\n";
  for (const Tet& t : mesh.tets()) {
    out << fmt::format("{} {} {} {} 0\n", t[0] + 1, t[1] + 1, t[2] + 1, t[3] + 1);
  }
  const auto faces = mesh.boundary_faces();
  out << "\nTriangles\n" << faces.size() << "\n";
  for (const auto& f : faces) out << fmt::format("{} {} {} 1\n", f[0] + 1, f[1] + 1, f[2] + 1);
  out << "\nEnd\n";
  if (!out) throw IoError(fmt::format("write to '{}' failed", path));
}

void write_scalar_sol(const Mesh& mesh, const Eigen::VectorXd& values, const std::string& path) {
  if (values.size() != mesh.num_nodes()) {
    throw IoError(fmt::format("{}: {} values for a mesh with {} nodes", path, values.size(), mesh.num_nodes()));
  }
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path));
  out << "MeshVersionFormatted 2\n\nDimension 3\n\nSolAtVertices\n" << values.size() << "\n1 1\n";
  for (const double v : values) out << fmt::format("{:.17g}\n", v);
  out << "\nEnd\n";
  if (!out) throw IoError(fmt::format("write to '{}' failed", path));
}

void write_vtk(const Mesh& mesh, const std::vector<NamedField>& fields, const std::string& path) {
  for (const NamedField& f : fields) {
    if (f.values.size() != mesh.num_nodes()) {
      throw IoError(fmt::format("{}: field '{}' has {} values for {} nodes", path, f.name, f.values.size(),
                                mesh.num_nodes()));
    }
  }
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path));
  out << "# vtk DataFile Version 3.0\nksfem\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << mesh.num_nodes() << " double\n";
  for (const Point& p : mesh.nodes()) out << fmt::format("{:.17g} {:.17g} {:.17g}\n", p[0], p[1], p[2]);
  out << "CELLS " << mesh.num_tets() << " " << 5 * mesh.num_tets() << "\n";
  for (const Tet& t : mesh.tets()) out << fmt::format("4 {} {} {} {}\n", t[0], t[1], t[2], t[3]);
  out << "CELL_TYPES " << mesh.num_tets() << "\n";
  for (int t = 0; t < mesh.num_tets(); ++t) out << "10\n";
  if (!fields.empty()) out << "POINT_DATA " << mesh.num_nodes() << "\n";
  for (const NamedField& f : fields) {
    out << "SCALARS " << f.name << " double 1\nLOOKUP_TABLE default\n";
    for (const double v : f.values) out << fmt::format("{:.17g}\n", v);
  }
  if (!out) throw IoError(fmt::format("write to '{}' failed", path));
}

namespace {

/// Whitespace tokenizer that drops '#' comments.
class MeditTokens {
 public:
  MeditTokens(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  bool next(std::string& tok) {
    while (true) {
      if (in_ >> tok) {
        if (tok[0] == '#') {
          std::string rest;
          std::getline(in_, rest);
          continue;
        }
        return true;
      }
      return false;
    }
  }
  std::string expect(const char* what) {
    std::string tok;
    if (!next(tok)) fail(fmt::format("unexpected end of file while reading {}", what));
    return tok;
  }
  long long integer(const char* what) {
    const std::string tok = expect(what);
    try {
      size_t pos = 0;
      long long v = std::stoll(tok, &pos);
      if (pos != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      fail(fmt::format("expected integer for {}, got '{}'", what, tok));
    }
  }
  double real(const char* what) {
    const std::string tok = expect(what);
    try {
      size_t pos = 0;
      double v = std::stod(tok, &pos);
      if (pos != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      fail(fmt::format("expected number for {}, got '{}'", what, tok));
    }
  }
  [[noreturn]] void fail(const std::string& msg) const { throw IoError(fmt::format("{}: {}", path_, msg)); }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace

Mesh read_mesh(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw IoError(fmt::format("cannot open '{}'", path));
  MeditTokens toks(file, path);

  // Integer fields per entry of the sections we skip.
  static const std::map<std::string, int> kSkipped = {
      {"Edges", 3}, {"Corners", 1}, {"Ridges", 1}, {"RequiredVertices", 1}, {"RequiredEdges", 1},
      {"RequiredTriangles", 1}, {"Quadrilaterals", 5}, {"Hexahedra", 9}};

  std::vector<Point> nodes;
  std::vector<Tet> tets;
  bool have_dim = false;
  std::string tok;
  while (toks.next(tok)) {
    if (tok == "End") break;
    if (tok == "MeshVersionFormatted") {
      const long long v = toks.integer("MeshVersionFormatted");
      if (v < 1 || v > 4) toks.fail(fmt::format("unsupported MeshVersionFormatted {}", v));
    } else if (tok == "Dimension") {
      const long long d = toks.integer("Dimension");
      if (d != 3) toks.fail(fmt::format("only 3D meshes are supported, file declares Dimension {}", d));
      have_dim = true;
    } else if (tok == "Vertices") {
      const long long n = toks.integer("vertex count");
      if (n < 0) toks.fail("negative vertex count");
      nodes.resize(n);
      for (long long i = 0; i < n; ++i) {
        for (int d = 0; d < 3; ++d) nodes[i][d] = toks.real("vertex coordinate");
        toks.integer("vertex reference");
      }
    } else if (tok == "Tetrahedra") {
      const long long n = toks.integer("tetrahedron count");
      if (n < 0) toks.fail("negative tetrahedron count");
      tets.resize(n);
      for (long long t = 0; t < n; ++t) {
        for (int a = 0; a < 4; ++a) {
          const long long v = toks.integer("tetrahedron vertex");
          if (v < 1 || v > static_cast<long long>(nodes.size())) {
            toks.fail(fmt::format("tetrahedron {} vertex index {} out of range 1..{}", t + 1, v, nodes.size()));
          }
          tets[t][a] = static_cast<int>(v - 1);
        }
        toks.integer("tetrahedron reference");
      }
    } else if (tok == "Triangles") {
      const long long n = toks.integer("triangle count");
      for (long long t = 0; t < n; ++t) {
        for (int a = 0; a < 3; ++a) {
          const long long v = toks.integer("triangle vertex");
          if (v < 1 || v > static_cast<long long>(nodes.size())) {
            toks.fail(fmt::format("triangle {} vertex index {} out of range", t + 1, v));
          }
        }
        toks.integer("triangle reference");
      }
    } else if (auto it = kSkipped.find(tok); it != kSkipped.end()) {
      const long long n = toks.integer("section count");
      for (long long e = 0; e < n * it->second; ++e) toks.integer("section entry");
    } else {
      toks.fail(fmt::format("malformed or unknown section header '{}'", tok));
    }
  }
  if (!have_dim) toks.fail("missing Dimension");
  if (nodes.empty() || tets.empty()) toks.fail("mesh has no vertices or no tetrahedra");

  Box box{nodes[0], nodes[0]};
  for (const Point& p : nodes) {
    box.lo = box.lo.cwiseMin(p);
    box.hi = box.hi.cwiseMax(p);
  }
  for (Tet& t : tets) {
    if (signed_volume(nodes[t[0]], nodes[t[1]], nodes[t[2]], nodes[t[3]]) < 0.0) std::swap(t[2], t[3]);
  }
  return Mesh(std::move(nodes), std::move(tets), box);
}

}  // namespace ksfem
