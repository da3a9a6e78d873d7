#include "gvssm/network.hpp"

#include <algorithm>
#include <cmath>

#include "gvssm/errors.hpp"

namespace gvssm {

namespace {

void apply_activation(Matrix& z, Activation act) {
  if (act == Activation::relu)
    for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
}

Matrix add_bias_rows(Matrix m, const Matrix& bias) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias(0, c);
  }
  return m;
}

void accumulate_column_sums(const Matrix& m, Matrix& into) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) into(0, c) += row[c];
  }
}

}  // namespace

Network Network::init(Rng& rng, std::size_t in_dim, std::span<const std::size_t> hidden,
                      std::size_t out_dim, Activation activation) {
  Network net;
  std::size_t prev = in_dim;
  for (std::size_t width : hidden) {
    net.layers.push_back({glorot_init(rng, prev, width), Matrix(1, width), activation});
    prev = width;
  }
  net.head = {glorot_init(rng, prev, out_dim), Matrix(1, out_dim)};
  return net;
}

Network Network::zeros_like(const Network& like) {
  Network net = like;
  for (Matrix* p : net.parameters()) p->fill(0.0);
  return net;
}

std::size_t Network::in_dim() const {
  return layers.empty() ? head.weight.rows() : layers.front().in_dim();
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix* p : parameters()) n += p->size();
  return n;
}

std::vector<Matrix*> Network::parameters() {
  std::vector<Matrix*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

std::vector<const Matrix*> Network::parameters() const {
  std::vector<const Matrix*> out;
  for (const auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

std::vector<std::string> Network::parameter_names(const std::string& prefix) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.push_back(prefix + ".gcn" + std::to_string(i) + ".weight");
    out.push_back(prefix + ".gcn" + std::to_string(i) + ".bias");
  }
  out.push_back(prefix + ".head.weight");
  out.push_back(prefix + ".head.bias");
  return out;
}

std::vector<double> Network::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const Matrix* p : parameters()) out.insert(out.end(), p->data().begin(), p->data().end());
  return out;
}

void Network::unflatten(std::span<const double> values) {
  if (values.size() != parameter_count()) throw ShapeError("Network::unflatten: length mismatch");
  std::size_t off = 0;
  for (Matrix* p : parameters()) {
    std::copy(values.begin() + static_cast<long>(off), values.begin() + static_cast<long>(off + p->size()),
              p->data().begin());
    off += p->size();
  }
}

bool Network::all_finite() const {
  for (const Matrix* p : parameters())
    if (!p->all_finite()) return false;
  return true;
}

Matrix gcn_forward(std::span<const GcnLayer> layers, const SparseAdjacency& a_hat, const Matrix& x) {
  Matrix h = x;
  for (const auto& layer : layers) {
    if (h.cols() != layer.in_dim()) {
      throw ShapeError("gcn_forward: features " + h.shape_string() + " vs layer weight " +
                       layer.weight.shape_string());
    }
    Matrix z = add_bias_rows(matmul(spmm(a_hat, h), layer.weight), layer.bias);
    apply_activation(z, layer.activation);
    h = std::move(z);
  }
  return h;
}

Matrix network_forward(const Network& net, const SparseAdjacency& a_hat, const Matrix& x,
                       NetworkCache* cache) {
  if (x.cols() != net.in_dim()) {
    throw ShapeError("network_forward: features " + x.shape_string() + " but network expects " +
                     std::to_string(net.in_dim()) + " columns");
  }
  if (cache) {
    cache->input = x;
    cache->aggregated.clear();
    cache->pre.clear();
    cache->post.clear();
  }
  Matrix h = x;
  for (const auto& layer : net.layers) {
    Matrix agg = spmm(a_hat, h);
    Matrix z = add_bias_rows(matmul(agg, layer.weight), layer.bias);
    Matrix out = z;
    apply_activation(out, layer.activation);
    if (cache) {
      cache->aggregated.push_back(std::move(agg));
      cache->pre.push_back(std::move(z));
      cache->post.push_back(out);
    }
    h = std::move(out);
  }
  Matrix y = add_bias_rows(matmul(h, net.head.weight), net.head.bias);
  if (cache) cache->output = y;
  return y;
}

Matrix network_backward(const Network& net, const SparseAdjacency& a_hat, const NetworkCache& cache,
                        const Matrix& d_output, Network& grads) {
  const Matrix& head_in = net.layers.empty() ? cache.input : cache.post.back();
  grads.head.weight += matmul_at_b(head_in, d_output);
  accumulate_column_sums(d_output, grads.head.bias);
  Matrix d_h = matmul_a_bt(d_output, net.head.weight);
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const auto& layer = net.layers[l];
    Matrix d_z = d_h;
    if (layer.activation == Activation::relu) {
      const auto& z = cache.pre[l].data();
      for (std::size_t i = 0; i < z.size(); ++i)
        if (!(z[i] > 0.0)) d_z.data()[i] = 0.0;
    }
    grads.layers[l].weight += matmul_at_b(cache.aggregated[l], d_z);
    accumulate_column_sums(d_z, grads.layers[l].bias);
    d_h = spmm(a_hat, matmul_a_bt(d_z, layer.weight));
  }
  return d_h;
}

Adam::Adam(AdamConfig cfg, const std::vector<const Matrix*>& shapes) : cfg_(cfg) {
  for (const Matrix* p : shapes) {
    m_.emplace_back(p->rows(), p->cols());
    v_.emplace_back(p->rows(), p->cols());
  }
}

void Adam::step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ShapeError("Adam::step: parameter list does not match optimizer state");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& w = params[p]->data();
    const auto& g = grads[p]->data();
    auto& m = m_[p].data();
    auto& v = v_[p].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      w[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
    }
  }
}

}  // namespace gvssm
