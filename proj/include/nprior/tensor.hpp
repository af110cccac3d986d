#pragma once

#include <functional>
#include <memory>
#include <vector>

namespace nprior {

using Shape = std::vector<int>;

int shape_numel(const Shape& shape);

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

// Shared-buffer handle over a dense double tensor. Copies are shallow; ops
// always allocate fresh outputs.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return int(d_->shape.size()); }
  int dim(int axis) const { return d_->shape[size_t(axis)]; }
  int numel() const { return int(d_->value.size()); }

  const std::vector<double>& value() const { return d_->value; }
  std::vector<double>& value() { return d_->value; }
  double item() const;

  // Allocates a zero gradient buffer on first use.
  std::vector<double>& grad();
  const std::vector<double>* grad_if() const;
  void zero_grad();

  bool requires_grad() const { return d_ && d_->requires_grad; }
  Tensor& set_requires_grad(bool v = true);

  std::shared_ptr<TensorData> handle() const { return d_; }

 private:
  std::shared_ptr<TensorData> d_;
};

// Reverse-mode tape. Constructing a Tape makes it the active tape for the
// current thread (nesting restores the previous one on destruction); ops
// record backward closures while any input requires grad. backward() seeds
// d(loss) = 1 and replays the closures in reverse, accumulating into every
// reachable leaf's grad buffer. Repeated backward() calls accumulate leaf
// grads again; intermediate grads are reset on each call.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::shared_ptr<TensorData> output, std::function<void()> backward);
  void backward(const Tensor& loss);
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<TensorData> out;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
  Tape* prev_ = nullptr;
};

// ---- elementwise and structural ops ---------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// Same shape, or one operand a 1-element scalar (broadcast).
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor exp(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // rank 2
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice_rows(const Tensor& a, int begin, int end);  // along axis 0

// ---- reductions and normalizations -----------------------------------------

Tensor softmax(const Tensor& a, int axis);
Tensor l2_normalize(const Tensor& a, int axis, double eps = 1e-12);
Tensor mean(const Tensor& a);
Tensor l1_loss(const Tensor& pred, const Tensor& target);

// ---- linear algebra and convolutions ---------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);  // {m,k} x {k,n}
// Fully connected layer on a rank-1 input: w {m,n} * x {n} + b {m}.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

// t {ci,h,w}, w {co,ci}; optional bias {co}.
Tensor conv1x1(const Tensor& t, const Tensor& w);
Tensor conv1x1(const Tensor& t, const Tensor& w, const Tensor& b);
// t {c,h,w}, w {c,3,3}, zero padding 1, spatial extents preserved.
Tensor depthwise_conv3x3(const Tensor& t, const Tensor& w);
// t {ci,h,w}, w {co,ci,3,3}, zero padding 1, stride 1 or 2.
Tensor conv3x3(const Tensor& t, const Tensor& w, int stride = 1);
Tensor conv3x3(const Tensor& t, const Tensor& w, const Tensor& b, int stride = 1);

// Per-pixel normalization across channels of {c,h,w}; gamma, beta {c}.
Tensor layer_norm_channels(const Tensor& t, const Tensor& gamma, const Tensor& beta,
                           double eps = 1e-6);

// {n} -> {n,h,w} constant over space.
Tensor tile_spatial(const Tensor& v, int h, int w);
// {c,h,w} -> {4c,h/2,w/2} and back; channel index = c*4 + (py*2+px).
Tensor space_to_depth(const Tensor& t);
Tensor depth_to_space(const Tensor& t);

}  // namespace nprior
