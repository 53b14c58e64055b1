#include "ps/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <unordered_set>

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace ps {

bool& checked_mode() {
  static bool on = false;
  return on;
}

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape");
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  int64_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->values.assign(static_cast<size_t>(n), value);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("from_data: shape does not match data size");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar");
  return impl_->values[0];
}

std::vector<double>& Tensor::grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty())
    throw std::logic_error("grad accessed before backward");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty())
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

namespace detail {

int64_t next_seq() {
  static std::atomic<int64_t> counter{0};
  return ++counter;
}

void attach_node(Tensor& out, const char* op_name,
                 const std::vector<Tensor>& inputs,
                 std::function<void()> backward_fn) {
  bool needs = false;
  for (const auto& in : inputs)
    if (in.defined() && in.requires_grad()) needs = true;
  if (checked_mode()) check_finite(out, op_name);
  if (!needs) return;
  out.set_requires_grad(true);
  auto node = std::make_unique<GradNode>();
  node->seq = next_seq();
  node->op = op_name;
  node->out = out.impl().get();
  for (const auto& in : inputs)
    if (in.defined()) node->inputs.push_back(in.impl());
  node->backward = std::move(backward_fn);
  out.impl()->node = std::move(node);
}

void check_finite(const Tensor& t, const char* op_name) {
  for (double v : t.values()) {
    if (!std::isfinite(v))
      throw NumericError(std::string(op_name) + ": non-finite output value");
  }
}

}  // namespace detail

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a defined scalar");

  // Collect every node reachable from the loss.
  std::vector<GradNode*> nodes;
  std::unordered_set<TensorImpl*> seen;
  std::vector<TensorImpl*> stack{loss.impl().get()};
  while (!stack.empty()) {
    TensorImpl* t = stack.back();
    stack.pop_back();
    if (!t || !t->node || seen.count(t)) continue;
    seen.insert(t);
    nodes.push_back(t->node.get());
    for (auto& in : t->node->inputs) stack.push_back(in.get());
  }

  // Interior grads are scratch; leaf grads persist and accumulate.
  for (TensorImpl* t : seen) {
    t->ensure_grad();
    std::fill(t->grad.begin(), t->grad.end(), 0.0);
  }
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0;

  std::sort(nodes.begin(), nodes.end(),
            [](const GradNode* a, const GradNode* b) { return a->seq > b->seq; });
  for (GradNode* n : nodes) n->backward();
}

namespace {

constexpr char kMagic[8] = {'P', 'S', 'T', 'E', 'N', 'S', 'R', '1'};

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("tensor blob: truncated header");
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic, sizeof kMagic);
  write_u32(os, static_cast<uint32_t>(t.rank()));
  for (int d : t.shape()) write_u32(os, static_cast<uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

Tensor read_tensor(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw std::runtime_error("tensor blob: bad magic");
  uint32_t rank = read_u32(is);
  if (rank > 8) throw std::runtime_error("tensor blob: implausible rank");
  std::vector<int> shape(rank);
  for (auto& d : shape) d = static_cast<int>(read_u32(is));
  int64_t n = shape_numel(shape);
  std::vector<double> data(static_cast<size_t>(n));
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw std::runtime_error("tensor blob: truncated payload");
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace ps
