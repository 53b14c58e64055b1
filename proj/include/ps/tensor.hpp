#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ps {

/// Raised when checked mode traps a non-finite value. Carries the name of
/// the op that produced it.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Global NaN/Inf trap. When on, every op scans its outputs and throws
/// NumericError on the first non-finite value. On in tests and training,
/// off for raw throughput.
bool& checked_mode();

struct TensorImpl;

// One recorded op in the reverse-mode tape. Owned by its output tensor;
// `inputs` keeps the saved operands alive until backward runs.
struct GradNode {
  int64_t seq = 0;
  std::string op;
  TensorImpl* out = nullptr;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void()> backward;
};

struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until backward touches it
  bool requires_grad = false;
  std::unique_ptr<GradNode> node;  // null for leaves

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

/// Dense row-major f64 tensor; a shared handle into the autodiff graph.
/// Copying a Tensor aliases the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape.at(i); }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t numel() const { return impl_->numel(); }

  double* data() { return impl_->values.data(); }
  const double* data() const { return impl_->values.data(); }
  std::vector<double>& values() { return impl_->values; }
  const std::vector<double>& values() const { return impl_->values; }

  double item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  bool is_leaf() const { return impl_ && impl_->node == nullptr; }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

int64_t shape_numel(const std::vector<int>& shape);

/// Runs reverse-mode accumulation from a scalar loss. Leaf gradients
/// accumulate across calls; interior gradients are recomputed per call.
void backward(const Tensor& loss);

// Tape plumbing shared by the op implementations.
namespace detail {
Tensor make_result(std::vector<int> shape, const char* op_name,
                   std::vector<Tensor> inputs,
                   std::function<void()> (*)(TensorImpl*) = nullptr);
int64_t next_seq();
void attach_node(Tensor& out, const char* op_name,
                 const std::vector<Tensor>& inputs,
                 std::function<void()> backward_fn);
void check_finite(const Tensor& t, const char* op_name);
}  // namespace detail

// Flat binary tensor blob: 8-byte magic, u32 rank, u32 dims, f64 payload,
// everything little-endian.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

}  // namespace ps
