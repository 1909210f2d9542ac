#include "g2l/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <unordered_set>

#include "g2l/errors.hpp"
#include "g2l/rng.hpp"

namespace g2l::nn {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kShapeMismatch, what);
}

Tensor make(Matrix value, std::vector<std::shared_ptr<Node>> parents,
            std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& p : parents) node->requires_grad |= p->requires_grad;
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace

Tensor constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Tensor(std::move(node));
}

Tensor detach(const Tensor& x) { return constant(x.value()); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(),
          "matmul " + shape_str(a.value()) + " by " + shape_str(b.value()));
  Matrix out = a.value() * b.value();
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    auto& a = *self.parents[0];
    auto& b = *self.parents[1];
    if (a.requires_grad) a.grad_buffer().noalias() += self.grad * b.value.transpose();
    if (b.requires_grad) b.grad_buffer().noalias() += a.value.transpose() * self.grad;
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.cols() == w.rows() && b.rows() == 1 && b.cols() == w.cols(),
          "linear x " + shape_str(x.value()) + " w " + shape_str(w.value()) +
              " b " + shape_str(b.value()));
  Matrix out(x.rows(), w.cols());
  out.noalias() = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return make(std::move(out), {x.node(), w.node(), b.node()}, [](Node& self) {
    auto& x = *self.parents[0];
    auto& w = *self.parents[1];
    auto& b = *self.parents[2];
    if (x.requires_grad) x.grad_buffer().noalias() += self.grad * w.value.transpose();
    if (w.requires_grad) w.grad_buffer().noalias() += x.value.transpose() * self.grad;
    if (b.requires_grad) b.grad_buffer() += self.grad.colwise().sum();
  });
}

Tensor relu(const Tensor& x) {
  Matrix out = x.value().cwiseMax(0.0);
  return make(std::move(out), {x.node()}, [](Node& self) {
    auto& x = *self.parents[0];
    x.grad_buffer().array() +=
        (x.value.array() > 0.0).cast<double>() * self.grad.array();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "add " + shape_str(a.value()) + " and " + shape_str(b.value()));
  return make(a.value() + b.value(), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->grad_buffer() += self.grad;
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "sub " + shape_str(a.value()) + " and " + shape_str(b.value()));
  return make(a.value() - b.value(), {a.node(), b.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer() += self.grad;
    if (self.parents[1]->requires_grad) self.parents[1]->grad_buffer() -= self.grad;
  });
}

Tensor scale(const Tensor& x, double s) {
  return make(x.value() * s, {x.node()}, [s](Node& self) {
    self.parents[0]->grad_buffer() += s * self.grad;
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat of nothing");
  const auto rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::shared_ptr<Node>> nodes;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
    nodes.push_back(p.node());
  }
  return make(std::move(out), std::move(nodes), [](Node& self) {
    Eigen::Index c = 0;
    for (auto& p : self.parents) {
      const auto w = p->value.cols();
      if (p->requires_grad) p->grad_buffer() += self.grad.middleCols(c, w);
      c += w;
    }
  });
}

Tensor broadcast_rows(const Tensor& x, Eigen::Index n) {
  require(x.rows() == 1, "broadcast_rows needs a row vector");
  Matrix out = x.value().replicate(n, 1);
  return make(std::move(out), {x.node()}, [](Node& self) {
    self.parents[0]->grad_buffer() += self.grad.colwise().sum();
  });
}

Tensor max_pool_points(const Tensor& features) {
  require(features.rows() >= 1, "max pool over zero points");
  const Matrix& f = features.value();
  Matrix out(1, f.cols());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(f.cols()), 0);
  for (Eigen::Index c = 0; c < f.cols(); ++c) {
    Eigen::Index best = 0;
    double v = f(0, c);
    for (Eigen::Index r = 1; r < f.rows(); ++r) {
      if (f(r, c) > v) {  // strict: first arg-max wins ties
        v = f(r, c);
        best = r;
      }
    }
    out(0, c) = v;
    arg[static_cast<std::size_t>(c)] = best;
  }
  return make(std::move(out), {features.node()},
              [arg = std::move(arg)](Node& self) {
                auto& g = self.parents[0]->grad_buffer();
                for (std::size_t c = 0; c < arg.size(); ++c) {
                  g(arg[c], static_cast<Eigen::Index>(c)) += self.grad(0, c);
                }
              });
}

Tensor mean_rows(const Tensor& x) {
  require(x.rows() >= 1, "mean over zero rows");
  const double n = static_cast<double>(x.rows());
  return make(x.value().colwise().mean(), {x.node()}, [n](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    g.rowwise() += self.grad.row(0) / n;
  });
}

Tensor reshape(const Tensor& x, Eigen::Index rows, Eigen::Index cols) {
  require(rows * cols == x.value().size(), "reshape size mismatch");
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajor src = x.value();
  Matrix out = Eigen::Map<const RowMajor>(src.data(), rows, cols);
  return make(std::move(out), {x.node()}, [](Node& self) {
    auto& p = *self.parents[0];
    const RowMajor g = self.grad;
    p.grad_buffer() += Eigen::Map<const RowMajor>(g.data(), p.value.rows(), p.value.cols());
  });
}

Tensor sum_squared_error(const Tensor& pred, const Tensor& target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(),
          "loss shapes " + shape_str(pred.value()) + " vs " + shape_str(target.value()));
  Matrix diff = pred.value() - target.value();
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm();
  return make(std::move(out), {pred.node(), target.node()},
              [diff = std::move(diff)](Node& self) {
                const double g = self.grad(0, 0);
                if (self.parents[0]->requires_grad)
                  self.parents[0]->grad_buffer() += 2.0 * g * diff;
                if (self.parents[1]->requires_grad)
                  self.parents[1]->grad_buffer() -= 2.0 * g * diff;
              });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require(pred.value().size() > 0, "empty loss input");
  return scale(sum_squared_error(pred, target),
               1.0 / static_cast<double>(pred.value().size()));
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require(static_cast<std::size_t>(logits.rows()) == labels.size(),
          "cross_entropy: " + std::to_string(labels.size()) + " labels for " +
              std::to_string(logits.rows()) + " rows");
  const Matrix& z = logits.value();
  const Eigen::Index n = z.rows();
  Matrix prob(n, z.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    require(y >= 0 && y < z.cols(), "label out of range");
    const double m = z.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (z.row(i).array() - m).exp();
    const double s = e.sum();
    prob.row(i) = e / s;
    total += (m + std::log(s)) - z(i, y);
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  return make(std::move(out), {logits.node()},
              [prob = std::move(prob), labels](Node& self) {
                const double g = self.grad(0, 0) / static_cast<double>(prob.rows());
                auto& dz = self.parents[0]->grad_buffer();
                for (Eigen::Index i = 0; i < prob.rows(); ++i) {
                  Eigen::RowVectorXd row = prob.row(i);
                  row(labels[static_cast<std::size_t>(i)]) -= 1.0;
                  dz.row(i) += g * row;
                }
              });
}

void backward(const Tensor& loss) {
  require(loss.rows() == 1 && loss.cols() == 1, "backward needs a scalar");
  if (!loss.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->grad_buffer()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

// --- parameters -------------------------------------------------------------

Tensor& ParamStore::add(const std::string& name, Matrix init) {
  auto [it, inserted] = params_.emplace(name, parameter(std::move(init)));
  if (!inserted) {
    throw Error(ErrorCode::kConfigError, "duplicate parameter " + name);
  }
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error(ErrorCode::kConfigError, "no parameter " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error(ErrorCode::kConfigError, "no parameter " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

std::size_t ParamStore::num_values() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += static_cast<std::size_t>(t.value().size());
  return n;
}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out,
               std::uint64_t seed) {
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Matrix w(in, out);
  Matrix b(1, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uniform(rng, -bound, bound);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = uniform(rng, -bound, bound);
  this->w = store.add(name + ".w", std::move(w));
  this->b = store.add(name + ".b", std::move(b));
}

Mlp::Mlp(ParamStore& store, const std::string& name, int in,
         const std::vector<int>& widths, bool relu_last, std::uint64_t seed)
    : relu_last(relu_last) {
  if (widths.empty()) throw Error(ErrorCode::kConfigError, name + ": no layers");
  int prev = in;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    layers.emplace_back(store, name + "." + std::to_string(i), prev, widths[i],
                        mix_seed(seed, i));
    prev = widths[i];
  }
}

Tensor Mlp::operator()(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size() || relu_last) h = relu(h);
  }
  return h;
}

Tensor shared_point_mlp(const Tensor& points, const Mlp& mlp) {
  require(points.rows() >= 1, "shared_point_mlp over zero points");
  // Row-wise matmuls apply the same weights to each point.
  return mlp(points);
}

// --- optimiser --------------------------------------------------------------

double AdamState::lr_for_epoch(int epoch) const {
  const int halvings = halve_every_epochs > 0 ? epoch / halve_every_epochs : 0;
  return base_lr * std::ldexp(1.0, -halvings);
}

void adam_step(ParamStore& params, AdamState& s) {
  ++s.step_count;
  const double t = static_cast<double>(s.step_count);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (auto& [name, p] : params) {
    const Matrix& g = p.grad();
    auto& m = s.first_moment[name];
    auto& v = s.second_moment[name];
    if (m.size() == 0) {
      m = Matrix::Zero(g.rows(), g.cols());
      v = Matrix::Zero(g.rows(), g.cols());
    }
    m = s.beta1 * m + (1.0 - s.beta1) * g;
    v = s.beta2 * v + (1.0 - s.beta2) * g.cwiseProduct(g);
    p.mutable_value().array() -=
        s.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + s.eps);
  }
}

// --- checkpoint -------------------------------------------------------------

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

constexpr char kCkptMagic[8] = {'G', '2', 'L', 'C', 'K', 'P', 'T', '\0'};

struct Out {
  std::vector<std::uint8_t> b;
  void u8(std::uint8_t x) { b.push_back(x); }
  void u32(std::uint32_t x) {
    for (int i = 0; i < 4; ++i) u8(std::uint8_t(x >> (8 * i)));
  }
  void u64(std::uint64_t x) {
    for (int i = 0; i < 8; ++i) u8(std::uint8_t(x >> (8 * i)));
  }
  void f64(double x) { u64(std::bit_cast<std::uint64_t>(x)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    b.insert(b.end(), s.begin(), s.end());
  }
  void mat(const Matrix& m) {
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }
};

struct In {
  const std::vector<std::uint8_t>& b;
  std::size_t pos = 0;
  std::uint8_t u8() {
    if (pos >= b.size()) throw Error(ErrorCode::kIoError, "checkpoint truncated");
    return b[pos++];
  }
  std::uint32_t u32() {
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= std::uint32_t(u8()) << (8 * i);
    return x;
  }
  std::uint64_t u64() {
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= std::uint64_t(u8()) << (8 * i);
    return x;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u32();
    if (n > b.size() - pos) throw Error(ErrorCode::kIoError, "checkpoint truncated");
    std::string s(b.begin() + pos, b.begin() + pos + n);
    pos += n;
    return s;
  }
  Matrix mat() {
    const auto r = u32();
    const auto c = u32();
    if (std::uint64_t(r) * c * 8 > b.size() - pos) {
      throw Error(ErrorCode::kIoError, "checkpoint truncated");
    }
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = f64();
    return m;
  }
};

void write_named(Out& o, const std::map<std::string, Matrix>& arrays) {
  o.u32(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, m] : arrays) {
    o.str(name);
    o.mat(m);
  }
}

std::map<std::string, Matrix> read_named(In& in) {
  std::map<std::string, Matrix> out;
  const auto n = in.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = in.str();
    out.emplace(std::move(name), in.mat());
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& ckpt) {
  Out o;
  for (char c : kCkptMagic) o.u8(static_cast<std::uint8_t>(c));
  o.u32(CheckpointData::kVersion);
  o.u64(ckpt.config_hash);
  o.u32(ckpt.epoch);
  o.str(ckpt.config_json);
  o.str(ckpt.metadata_json);
  write_named(o, ckpt.arrays);
  const auto& s = ckpt.optimizer;
  o.f64(s.base_lr);
  o.f64(s.learning_rate);
  o.f64(s.beta1);
  o.f64(s.beta2);
  o.f64(s.eps);
  o.u64(s.step_count);
  o.u32(static_cast<std::uint32_t>(s.halve_every_epochs));
  o.u32(static_cast<std::uint32_t>(s.max_epochs));
  write_named(o, s.first_moment);
  write_named(o, s.second_moment);
  return std::move(o.b);
}

CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  In in{bytes};
  for (char c : kCkptMagic) {
    if (in.u8() != static_cast<std::uint8_t>(c)) {
      throw Error(ErrorCode::kIoError, "not a checkpoint file");
    }
  }
  const auto version = in.u32();
  if (version != CheckpointData::kVersion) {
    throw Error(ErrorCode::kIoError,
                "unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointData c;
  c.config_hash = in.u64();
  c.epoch = in.u32();
  c.config_json = in.str();
  c.metadata_json = in.str();
  c.arrays = read_named(in);
  auto& s = c.optimizer;
  s.base_lr = in.f64();
  s.learning_rate = in.f64();
  s.beta1 = in.f64();
  s.beta2 = in.f64();
  s.eps = in.f64();
  s.step_count = in.u64();
  s.halve_every_epochs = static_cast<int>(in.u32());
  s.max_epochs = static_cast<int>(in.u32());
  s.first_moment = read_named(in);
  s.second_moment = read_named(in);
  if (in.pos != bytes.size()) throw Error(ErrorCode::kIoError, "trailing checkpoint bytes");
  if (fnv1a64(c.config_json) != c.config_hash) {
    throw Error(ErrorCode::kIoError, "checkpoint config hash mismatch");
  }
  return c;
}

void save_checkpoint(const CheckpointData& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "write failed: " + path.string());
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace g2l::nn
