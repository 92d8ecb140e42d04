#pragma once

// The two competing field parameterizations: a small tanh MLP mapping
// coordinates to a scalar, and the direct discretization (one trainable
// value per quadrature point or per element, optionally through |.|).

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "fieldinv/core.hpp"

namespace fieldinv::nn {

struct MlpField {
  std::vector<int> sizes{2, 20, 20, 20, 1};
  Vec theta;            // [W1 (out x in, column-major), b1, W2, b2, W3, b3, W4, b4]
  double output_shift = 1.0;

  int num_params() const {
    int n = 0;
    for (size_t l = 0; l + 1 < sizes.size(); ++l)
      n += sizes[l] * sizes[l + 1] + sizes[l + 1];
    return n;
  }
};

namespace detail {

using Eigen::MatrixXd;

struct Layers {
  std::vector<Eigen::Map<const MatrixXd>> W;
  std::vector<Eigen::Map<const Vec>> b;
};

inline Layers map_layers(const MlpField& f) {
  if (f.theta.size() != f.num_params())
    throw InvalidArgument("MlpField: theta length does not match layer sizes");
  Layers l;
  const double* p = f.theta.data();
  for (size_t k = 0; k + 1 < f.sizes.size(); ++k) {
    int in = f.sizes[k], out = f.sizes[k + 1];
    l.W.emplace_back(p, out, in);  // column-major map of a (out x in) block
    p += out * in;
    l.b.emplace_back(p, out);
    p += out;
  }
  return l;
}

}  // namespace detail

inline Vec mlp_forward(const MlpField& f, const std::vector<Vec2>& coords) {
  auto l = detail::map_layers(f);
  Eigen::MatrixXd X(2, coords.size());
  for (size_t k = 0; k < coords.size(); ++k) X.col(k) = coords[k];
  Eigen::MatrixXd A = X;
  for (size_t k = 0; k < l.W.size(); ++k) {
    A = (l.W[k] * A).colwise() + l.b[k];
    if (k + 1 < l.W.size()) A = A.array().tanh();
  }
  return A.row(0).transpose().array() + f.output_shift;
}

// Gradient of sum_k vbar[k] * out[k] with respect to the flat theta.
inline Vec mlp_vjp(const MlpField& f, const std::vector<Vec2>& coords, const Vec& vbar) {
  if (vbar.size() != static_cast<long>(coords.size()))
    throw InvalidArgument("mlp_vjp: vbar length mismatch");
  auto l = detail::map_layers(f);
  const size_t L = l.W.size();
  Eigen::MatrixXd X(2, coords.size());
  for (size_t k = 0; k < coords.size(); ++k) X.col(k) = coords[k];
  std::vector<Eigen::MatrixXd> act(L + 1);  // act[0]=X, act[k]=post-activation
  act[0] = X;
  for (size_t k = 0; k < L; ++k) {
    act[k + 1] = (l.W[k] * act[k]).colwise() + l.b[k];
    if (k + 1 < L) act[k + 1] = act[k + 1].array().tanh();
  }
  Vec grad = Vec::Zero(f.theta.size());
  double* p = grad.data() + f.theta.size();
  Eigen::MatrixXd G = vbar.transpose();  // adjoint of the pre-shift output, 1 x N
  for (size_t k = L; k-- > 0;) {
    int in = f.sizes[k], out = f.sizes[k + 1];
    p -= out;
    Eigen::Map<Vec>(p, out) = G.rowwise().sum();
    p -= out * in;
    Eigen::Map<Eigen::MatrixXd>(p, out, in) = G * act[k].transpose();
    if (k > 0) {
      G = (l.W[k].transpose() * G).array() * (1.0 - act[k].array().square());
    }
  }
  return grad;
}

// Glorot-uniform weights, zero biases, deterministic per seed. The output
// layer is damped so the initial field sits close to the positive shift
// instead of oscillating around it at the scale of the hidden activations.
inline MlpField init_mlp(unsigned seed, double output_shift = 1.0) {
  MlpField f;
  f.output_shift = output_shift;
  f.theta = Vec::Zero(f.num_params());
  std::mt19937 rng(seed);
  double* p = f.theta.data();
  for (size_t k = 0; k + 1 < f.sizes.size(); ++k) {
    int in = f.sizes[k], out = f.sizes[k + 1];
    double bound = std::sqrt(6.0 / (in + out));
    const double damp = (k + 2 == f.sizes.size()) ? 0.01 : 1.0;
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (int i = 0; i < out * in; ++i) *p++ = damp * dist(rng);
    p += out;  // biases stay zero
  }
  return f;
}

inline void save_mlp(const MlpField& f, const std::string& path, unsigned seed) {
  std::FILE* fp = std::fopen(path.c_str(), "w");
  if (!fp) throw std::runtime_error("save_mlp: cannot open " + path);
  std::fprintf(fp, "mlp");
  for (int s : f.sizes) std::fprintf(fp, " %d", s);
  std::fprintf(fp, " shift=%.17g seed=%u\n", f.output_shift, seed);
  for (long i = 0; i < f.theta.size(); ++i) std::fprintf(fp, "%.17g\n", f.theta[i]);
  std::fclose(fp);
}

enum class Granularity { per_quad_point, per_element };
enum class Transform { abs, none };

struct DiscretizedField {
  Granularity granularity = Granularity::per_quad_point;
  Transform transform = Transform::abs;
  Vec theta;
};

struct DiscretizedEval {
  Vec values_at_quad;
  // adjoint at quad points -> gradient with respect to raw theta
  std::function<Vec(const Vec&)> vjp;
};

inline DiscretizedEval discretized_eval(const DiscretizedField& f, int n_elems, int n_qp) {
  const int nq = n_elems * n_qp;
  const bool per_elem = f.granularity == Granularity::per_element;
  if (f.theta.size() != (per_elem ? n_elems : nq))
    throw InvalidArgument("discretized_eval: theta length mismatch");
  auto tf = [&](double x) { return f.transform == Transform::abs ? std::fabs(x) : x; };
  // subgradient of |x| with sign(0) := 0
  auto dtf = [&](double x) {
    if (f.transform == Transform::none) return 1.0;
    return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
  };
  DiscretizedEval out;
  out.values_at_quad.resize(nq);
  for (int e = 0; e < n_elems; ++e)
    for (int q = 0; q < n_qp; ++q)
      out.values_at_quad[e * n_qp + q] = tf(per_elem ? f.theta[e] : f.theta[e * n_qp + q]);
  Vec theta = f.theta;
  out.vjp = [theta, n_elems, n_qp, per_elem, dtf](const Vec& vbar) {
    if (vbar.size() != static_cast<long>(n_elems) * n_qp)
      throw InvalidArgument("discretized vjp: adjoint length mismatch");
    Vec g = Vec::Zero(theta.size());
    for (int e = 0; e < n_elems; ++e)
      for (int q = 0; q < n_qp; ++q) {
        int k = e * n_qp + q;
        if (per_elem)
          g[e] += vbar[k] * dtf(theta[e]);
        else
          g[k] = vbar[k] * dtf(theta[k]);
      }
    return g;
  };
  return out;
}

}  // namespace fieldinv::nn
