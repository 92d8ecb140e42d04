#pragma once

// Structured triangulations of the unit square, dof enumeration for
// P0/P1/P2 spaces and their vector variants, and triangle quadrature.

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <vector>

#include "fieldinv/core.hpp"

namespace fieldinv::mesh {

enum class Side { left, right, bottom, top };

inline const char* side_name(Side s) {
  switch (s) {
    case Side::left: return "left";
    case Side::right: return "right";
    case Side::bottom: return "bottom";
    case Side::top: return "top";
  }
  return "?";
}

struct Edge {
  int a, b;    // endpoint corner nodes, a < b
  int mid;     // midpoint node index (>= num_corner_nodes)
};

struct BoundaryEdge {
  int edge;    // index into edges
  Side side;
};

struct Mesh {
  int n = 0;                        // subdivisions per side
  int num_corner_nodes = 0;
  std::vector<Vec2> nodes;          // corners first, then edge midpoints
  std::vector<std::array<int, 3>> elements;  // counterclockwise corner triples
  std::vector<Edge> edges;
  std::vector<std::array<int, 3>> element_edges;  // local edges (01,12,20)
  std::set<int> boundary_nodes;     // corner nodes on the boundary
  std::vector<BoundaryEdge> boundary_edges;

  int num_elements() const { return static_cast<int>(elements.size()); }

  double element_area(int e) const {
    const auto& el = elements[e];
    Vec2 d1 = nodes[el[1]] - nodes[el[0]];
    Vec2 d2 = nodes[el[2]] - nodes[el[0]];
    return 0.5 * (d1.x() * d2.y() - d1.y() * d2.x());
  }
};

inline Mesh build_unit_square_mesh(int n) {
  if (n < 1) throw InvalidArgument("build_unit_square_mesh: n must be >= 1");
  Mesh m;
  m.n = n;
  const double h = 1.0 / n;
  const int s = n + 1;
  m.num_corner_nodes = s * s;
  m.nodes.reserve(m.num_corner_nodes);
  for (int iy = 0; iy < s; ++iy)
    for (int ix = 0; ix < s; ++ix)
      m.nodes.emplace_back(ix * h, iy * h);

  auto vid = [s](int ix, int iy) { return iy * s + ix; };
  m.elements.reserve(2 * n * n);
  for (int iy = 0; iy < n; ++iy) {
    for (int ix = 0; ix < n; ++ix) {
      int v00 = vid(ix, iy), v10 = vid(ix + 1, iy);
      int v01 = vid(ix, iy + 1), v11 = vid(ix + 1, iy + 1);
      // split each cell along the lower-left to upper-right diagonal
      m.elements.push_back({v00, v10, v11});
      m.elements.push_back({v00, v11, v01});
    }
  }

  std::map<std::pair<int, int>, int> edge_index;
  m.element_edges.resize(m.elements.size());
  for (size_t e = 0; e < m.elements.size(); ++e) {
    const auto& el = m.elements[e];
    for (int le = 0; le < 3; ++le) {
      int a = el[le], b = el[(le + 1) % 3];
      auto key = std::minmax(a, b);
      auto it = edge_index.find(key);
      int idx;
      if (it == edge_index.end()) {
        idx = static_cast<int>(m.edges.size());
        edge_index.emplace(key, idx);
        int mid = m.num_corner_nodes + idx;
        m.edges.push_back({key.first, key.second, mid});
      } else {
        idx = it->second;
      }
      m.element_edges[e][le] = idx;
    }
  }
  for (const auto& ed : m.edges)
    m.nodes.push_back(0.5 * (m.nodes[ed.a] + m.nodes[ed.b]));

  auto on_side = [&](int node, Side sd) {
    const Vec2& p = m.nodes[node];
    switch (sd) {
      case Side::left: return p.x() == 0.0;
      case Side::right: return p.x() == 1.0;
      case Side::bottom: return p.y() == 0.0;
      case Side::top: return p.y() == 1.0;
    }
    return false;
  };
  for (int v = 0; v < m.num_corner_nodes; ++v)
    for (Side sd : {Side::left, Side::right, Side::bottom, Side::top})
      if (on_side(v, sd)) m.boundary_nodes.insert(v);
  for (size_t ei = 0; ei < m.edges.size(); ++ei)
    for (Side sd : {Side::left, Side::right, Side::bottom, Side::top})
      if (on_side(m.edges[ei].a, sd) && on_side(m.edges[ei].b, sd))
        m.boundary_edges.push_back({static_cast<int>(ei), sd});
  return m;
}

// Rules on the reference triangle {(0,0),(1,0),(0,1)}; weights sum to 1/2.
struct QuadratureRule {
  std::vector<Vec2> points;
  std::vector<double> weights;
  int degree = 0;
  int size() const { return static_cast<int>(points.size()); }
};

inline QuadratureRule quadrature(int degree) {
  QuadratureRule q;
  q.degree = degree;
  if (degree == 1) {
    q.points = {{1.0 / 3.0, 1.0 / 3.0}};
    q.weights = {0.5};
  } else if (degree == 2) {
    q.points = {{1.0 / 6.0, 1.0 / 6.0}, {2.0 / 3.0, 1.0 / 6.0}, {1.0 / 6.0, 2.0 / 3.0}};
    q.weights = {1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0};
  } else if (degree == 3 || degree == 4) {
    // 6-point degree-4 rule; used for degree 3 as well (the 4-point
    // degree-3 rule has a negative centroid weight).
    const double a = 0.445948490915965;
    const double b = 0.091576213509771;
    const double wa = 0.111690794839005;
    const double wb = 0.054975871827661;
    q.points = {{a, a}, {1 - 2 * a, a}, {a, 1 - 2 * a},
                {b, b}, {1 - 2 * b, b}, {b, 1 - 2 * b}};
    q.weights = {wa, wa, wa, wb, wb, wb};
  } else {
    throw InvalidArgument("quadrature: unsupported degree " + std::to_string(degree));
  }
  return q;
}

enum class SpaceKind { P1, P2, P0, P1Vec, P2Vec };

inline bool is_vector_space(SpaceKind k) {
  return k == SpaceKind::P1Vec || k == SpaceKind::P2Vec;
}
inline SpaceKind scalar_base(SpaceKind k) {
  if (k == SpaceKind::P1Vec) return SpaceKind::P1;
  if (k == SpaceKind::P2Vec) return SpaceKind::P2;
  return k;
}

struct DofMap {
  SpaceKind kind = SpaceKind::P1;
  int num_dofs = 0;
  std::vector<std::vector<int>> element_dofs;
  // Dirichlet constraints, set by the problem definitions.
  std::vector<std::pair<int, double>> dirichlet;
};

inline DofMap build_dofmap(const Mesh& m, SpaceKind kind) {
  DofMap dm;
  dm.kind = kind;
  const int ne = m.num_elements();
  dm.element_dofs.resize(ne);
  switch (kind) {
    case SpaceKind::P0:
      dm.num_dofs = ne;
      for (int e = 0; e < ne; ++e) dm.element_dofs[e] = {e};
      break;
    case SpaceKind::P1:
      dm.num_dofs = m.num_corner_nodes;
      for (int e = 0; e < ne; ++e)
        dm.element_dofs[e] = {m.elements[e][0], m.elements[e][1], m.elements[e][2]};
      break;
    case SpaceKind::P2:
      dm.num_dofs = m.num_corner_nodes + static_cast<int>(m.edges.size());
      for (int e = 0; e < ne; ++e) {
        const auto& el = m.elements[e];
        const auto& ee = m.element_edges[e];
        dm.element_dofs[e] = {el[0], el[1], el[2],
                              m.num_corner_nodes + ee[0],
                              m.num_corner_nodes + ee[1],
                              m.num_corner_nodes + ee[2]};
      }
      break;
    case SpaceKind::P1Vec:
    case SpaceKind::P2Vec: {
      DofMap base = build_dofmap(m, scalar_base(kind));
      dm.num_dofs = 2 * base.num_dofs;
      for (int e = 0; e < ne; ++e) {
        for (int d : base.element_dofs[e]) {
          dm.element_dofs[e].push_back(2 * d);
          dm.element_dofs[e].push_back(2 * d + 1);
        }
      }
      break;
    }
  }
  return dm;
}

// Scalar dofs of a P1 or P2 space lying on a given boundary side.
inline std::vector<int> boundary_scalar_dofs(const Mesh& m, SpaceKind kind, Side side) {
  std::set<int> out;
  for (const auto& be : m.boundary_edges) {
    if (be.side != side) continue;
    const Edge& ed = m.edges[be.edge];
    out.insert(ed.a);
    out.insert(ed.b);
    if (kind == SpaceKind::P2) out.insert(m.num_corner_nodes + be.edge);
  }
  return {out.begin(), out.end()};
}

inline void write_mesh(const Mesh& m, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("write_mesh: cannot open " + path);
  std::fprintf(f, "nodes %d elements %d\n", m.num_corner_nodes, m.num_elements());
  for (int i = 0; i < m.num_corner_nodes; ++i)
    std::fprintf(f, "%.17g %.17g\n", m.nodes[i].x(), m.nodes[i].y());
  for (const auto& el : m.elements)
    std::fprintf(f, "%d %d %d\n", el[0], el[1], el[2]);
  std::fclose(f);
}

}  // namespace fieldinv::mesh
