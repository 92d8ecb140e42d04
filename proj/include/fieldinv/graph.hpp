#pragma once

// Coarse-grained reverse-mode tape. Nodes are solver-scale operators
// (field evaluation, assembly, linear solve, loss); values are computed
// eagerly at record time and each node carries a vector-Jacobian-product
// rule. Matrix-valued nodes store the matrix and expose its value array;
// their adjoints are restricted to the matrix sparsity pattern.

#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fieldinv/core.hpp"
#include "fieldinv/la.hpp"

namespace fieldinv::graph {

class Tape {
 public:
  // accum(slot, contrib): add contrib to the adjoint of inputs[slot]
  using Accum = std::function<void(int, const Vec&)>;
  using Vjp = std::function<void(const Vec& outbar, const Accum& accum)>;

  struct Node {
    std::string tag;
    std::vector<int> inputs;
    Vec out;
    std::shared_ptr<const la::SparseMatrix> mat;  // set for matrix-valued nodes
    Vjp vjp;
  };

  int leaf(const std::string& name, Vec value) {
    Node n;
    n.tag = "leaf:" + name;
    n.out = std::move(value);
    nodes_.push_back(std::move(n));
    int id = static_cast<int>(nodes_.size()) - 1;
    leaves_[name] = id;
    return id;
  }

  int record(const std::string& tag, std::vector<int> inputs, Vec out, Vjp vjp) {
    check_inputs(inputs);
    Node n;
    n.tag = tag;
    n.inputs = std::move(inputs);
    n.out = std::move(out);
    n.vjp = std::move(vjp);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int record_matrix(const std::string& tag, std::vector<int> inputs,
                    std::shared_ptr<const la::SparseMatrix> mat, Vjp vjp) {
    check_inputs(inputs);
    Node n;
    n.tag = tag;
    n.inputs = std::move(inputs);
    n.out = mat->values_vec();
    n.mat = std::move(mat);
    n.vjp = std::move(vjp);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int i) const { return nodes_.at(i); }
  const Vec& value(int i) const { return nodes_.at(i).out; }
  const la::SparseMatrix& matrix(int i) const {
    if (!nodes_.at(i).mat) throw InvalidArgument("node " + std::to_string(i) + " is not matrix-valued");
    return *nodes_[i].mat;
  }

  // Reverse sweep from a scalar loss node; returns leaf-name -> gradient.
  std::map<std::string, Vec> backward(int loss) const {
    if (loss < 0 || loss >= size()) throw InvalidArgument("backward: bad node ref");
    if (nodes_[loss].out.size() != 1)
      throw InvalidArgument("backward: loss node is not scalar");
    std::vector<Vec> adj(nodes_.size());
    adj[loss] = Vec::Ones(1);
    for (int i = loss; i >= 0; --i) {
      if (adj[i].size() == 0) continue;
      const Node& n = nodes_[i];
      if (n.inputs.empty()) continue;
      if (!n.vjp)
        throw std::runtime_error("backward: node " + std::to_string(i) + " (" + n.tag +
                                 ") has no vjp rule");
      Accum accum = [&](int slot, const Vec& contrib) {
        int j = n.inputs.at(slot);
        if (adj[j].size() == 0) adj[j] = Vec::Zero(nodes_[j].out.size());
        adj[j] += contrib;
      };
      n.vjp(adj[i], accum);
    }
    std::map<std::string, Vec> grads;
    for (const auto& [name, id] : leaves_) {
      grads[name] = adj[id].size() ? adj[id] : Vec::Zero(nodes_[id].out.size());
    }
    return grads;
  }

  void dump(const std::string& path) const {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("Tape::dump: cannot open " + path);
    for (int i = 0; i < size(); ++i) {
      std::fprintf(f, "%d %s", i, nodes_[i].tag.c_str());
      for (int j : nodes_[i].inputs) std::fprintf(f, " %d", j);
      std::fprintf(f, " len=%ld\n", static_cast<long>(nodes_[i].out.size()));
    }
    std::fclose(f);
  }

  // --- small stock operators, mostly for tests and losses ---

  int add(int a, int b) {
    Vec out = value(a) + value(b);
    return record("add", {a, b}, out, [](const Vec& ob, const Accum& acc) {
      acc(0, ob);
      acc(1, ob);
    });
  }

  int dot(int a, int b) {
    Vec va = value(a), vb = value(b);
    Vec out(1);
    out[0] = va.dot(vb);
    return record("dot", {a, b}, out, [va, vb](const Vec& ob, const Accum& acc) {
      acc(0, ob[0] * vb);
      acc(1, ob[0] * va);
    });
  }

  int sum(int a) {
    long len = value(a).size();
    Vec out(1);
    out[0] = value(a).sum();
    return record("sum", {a}, out, [len](const Vec& ob, const Accum& acc) {
      acc(0, Vec::Constant(len, ob[0]));
    });
  }

  // sum of squared differences against a fixed target
  int sq_error(int a, const Vec& target) {
    Vec r = value(a) - target;
    Vec out(1);
    out[0] = r.squaredNorm();
    return record("sq_error", {a}, out, [r](const Vec& ob, const Accum& acc) {
      acc(0, 2.0 * ob[0] * r);
    });
  }

 private:
  void check_inputs(const std::vector<int>& inputs) const {
    for (int i : inputs)
      if (i < 0 || i >= size()) throw InvalidArgument("record: input not on tape");
  }

  std::vector<Node> nodes_;
  std::map<std::string, int> leaves_;
};

}  // namespace fieldinv::graph
