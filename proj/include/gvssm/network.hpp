#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gvssm/graph.hpp"
#include "gvssm/matrix.hpp"
#include "gvssm/random.hpp"

namespace gvssm {

enum class Activation : std::uint8_t { identity = 0, relu = 1 };

/// One graph convolution: activation(A_hat X W + b).
struct GcnLayer {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
  Activation activation = Activation::relu;

  std::size_t in_dim() const noexcept { return weight.rows(); }
  std::size_t out_dim() const noexcept { return weight.cols(); }
};

/// Node-wise linear projection X W + b.
struct DenseLayer {
  Matrix weight;
  Matrix bias;
};

/// Stack of graph convolutions followed by a linear head.
struct Network {
  std::vector<GcnLayer> layers;
  DenseLayer head;

  /// Glorot weights, zero biases; `hidden` lists the width of each GCN layer.
  static Network init(Rng& rng, std::size_t in_dim, std::span<const std::size_t> hidden,
                      std::size_t out_dim, Activation activation = Activation::relu);
  /// Same shapes as `like`, every entry zero.
  static Network zeros_like(const Network& like);

  std::size_t in_dim() const;
  std::size_t out_dim() const { return head.weight.cols(); }
  std::size_t parameter_count() const;

  /// Weight and bias matrices in a fixed order (layer 0 weight, bias, ..., head weight, bias).
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  std::vector<std::string> parameter_names(const std::string& prefix) const;

  std::vector<double> flatten() const;
  void unflatten(std::span<const double> values);
  bool all_finite() const;
};

/// Forward pass of the GCN layers only.
Matrix gcn_forward(std::span<const GcnLayer> layers, const SparseAdjacency& a_hat, const Matrix& x);

struct NetworkCache {
  Matrix input;
  std::vector<Matrix> aggregated;  // A_hat H_l per layer
  std::vector<Matrix> pre;         // pre-activation per layer
  std::vector<Matrix> post;        // activation output per layer
  Matrix output;
};

Matrix network_forward(const Network& net, const SparseAdjacency& a_hat, const Matrix& x,
                       NetworkCache* cache = nullptr);

/// Accumulates parameter gradients into `grads` and returns dL/dx.
/// `a_hat` must be symmetric (true for normalized adjacencies).
Matrix network_backward(const Network& net, const SparseAdjacency& a_hat, const NetworkCache& cache,
                        const Matrix& d_output, Network& grads);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive moment estimation over a fixed list of parameter matrices.
class Adam {
 public:
  Adam(AdamConfig cfg, const std::vector<const Matrix*>& shapes);
  void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads);
  long steps() const noexcept { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace gvssm
