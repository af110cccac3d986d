#include "nprior/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nprior/errors.hpp"

namespace nprior {

namespace {

thread_local Tape* g_active_tape = nullptr;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

std::string shape_str(const Shape& s) {
  std::string out = "{";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "}";
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeMismatchError(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shapes " + shape_str(a.shape()) +
                                      " and " + shape_str(b.shape()) + " differ");
}

// Allocates the gradient buffer on first touch.
std::vector<double>& acc(const std::shared_ptr<TensorData>& d) {
  if (d->grad.empty()) d->grad.assign(d->value.size(), 0.0);
  return d->grad;
}

bool track(const Tensor& a) { return Tape::active() != nullptr && a.requires_grad(); }

void record(Tensor& out, std::function<void()> back) {
  out.set_requires_grad(true);
  Tape::active()->record(out.handle(), std::move(back));
}

struct AxisView {
  int outer = 1;
  int len = 1;
  int inner = 1;
};

AxisView axis_view(const Shape& s, int axis) {
  require(axis >= 0 && axis < int(s.size()), "axis out of range");
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[size_t(i)];
  v.len = s[size_t(axis)];
  for (size_t i = size_t(axis) + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

}  // namespace

int shape_numel(const Shape& shape) {
  int n = 1;
  for (int e : shape) n *= e;
  return n;
}

Tensor::Tensor(Shape shape, double fill) {
  d_ = std::make_shared<TensorData>();
  const int n = shape_numel(shape);
  d_->shape = std::move(shape);
  d_->value.assign(size_t(n), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  const int n = shape_numel(shape);
  if (int(values.size()) != n)
    throw ShapeMismatchError("tensor init: " + std::to_string(values.size()) +
                             " values for shape " + shape_str(shape));
  d_ = std::make_shared<TensorData>();
  d_->shape = std::move(shape);
  d_->value = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

double Tensor::item() const {
  if (numel() != 1) throw NotScalarError("item() requires a 1-element tensor");
  return d_->value[0];
}

std::vector<double>& Tensor::grad() { return acc(d_); }

const std::vector<double>* Tensor::grad_if() const {
  return d_ && !d_->grad.empty() ? &d_->grad : nullptr;
}

void Tensor::zero_grad() {
  if (d_ && !d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

Tensor& Tensor::set_requires_grad(bool v) {
  d_->requires_grad = v;
  return *this;
}

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<TensorData> output, std::function<void()> backward) {
  nodes_.push_back(Node{std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw NotScalarError("backward() needs a scalar loss");
  if (!loss.requires_grad())
    throw UntrackedGraphError("loss is not connected to this tape");
  // Reset intermediates so repeated calls accumulate exactly one more pass
  // into the leaves.
  for (auto& node : nodes_) node.out->grad.assign(node.out->value.size(), 0.0);
  acc(loss.handle())[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->back();
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.value()[size_t(i)] = a.value()[size_t(i)] + b.value()[size_t(i)];
  if (track(a) || track(b)) {
    auto ad = a.handle(), bd = b.handle(), od = out.handle();
    record(out, [ad, bd, od]() {
      const auto& g = od->grad;
      if (ad->requires_grad) {
        auto& ga = acc(ad);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bd->requires_grad) {
        auto& gb = acc(bd);
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.value()[size_t(i)] = a.value()[size_t(i)] - b.value()[size_t(i)];
  if (track(a) || track(b)) {
    auto ad = a.handle(), bd = b.handle(), od = out.handle();
    record(out, [ad, bd, od]() {
      const auto& g = od->grad;
      if (ad->requires_grad) {
        auto& ga = acc(ad);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bd->requires_grad) {
        auto& gb = acc(bd);
        for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.numel() == 1 && b.numel() != 1) return mul(b, a);
  const bool scalar_b = b.numel() == 1 && a.numel() != 1;
  if (!scalar_b) require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const int n = a.numel();
  if (scalar_b) {
    const double s = b.value()[0];
    for (int i = 0; i < n; ++i) out.value()[size_t(i)] = a.value()[size_t(i)] * s;
  } else {
    for (int i = 0; i < n; ++i)
      out.value()[size_t(i)] = a.value()[size_t(i)] * b.value()[size_t(i)];
  }
  if (track(a) || track(b)) {
    auto ad = a.handle(), bd = b.handle(), od = out.handle();
    record(out, [ad, bd, od, scalar_b]() {
      const auto& g = od->grad;
      if (scalar_b) {
        const double s = bd->value[0];
        if (ad->requires_grad) {
          auto& ga = acc(ad);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
        }
        if (bd->requires_grad) {
          auto& gb = acc(bd);
          double dot = 0.0;
          for (size_t i = 0; i < g.size(); ++i) dot += g[i] * ad->value[i];
          gb[0] += dot;
        }
      } else {
        if (ad->requires_grad) {
          auto& ga = acc(ad);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd->value[i];
        }
        if (bd->requires_grad) {
          auto& gb = acc(bd);
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad->value[i];
        }
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.value()[size_t(i)] = a.value()[size_t(i)] * c;
  if (track(a)) {
    auto ad = a.handle(), od = out.handle();
    record(out, [ad, od, c]() {
      auto& ga = acc(ad);
      for (size_t i = 0; i < od->grad.size(); ++i) ga[i] += od->grad[i] * c;
    });
  }
  return out;
}

Tensor exp(const Tensor& a) {
  Tensor out(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.value()[size_t(i)] = std::exp(a.value()[size_t(i)]);
  if (track(a)) {
    auto ad = a.handle(), od = out.handle();
    record(out, [ad, od]() {
      auto& ga = acc(ad);
      for (size_t i = 0; i < od->grad.size(); ++i) ga[i] += od->grad[i] * od->value[i];
    });
  }
  return out;
}

Tensor reciprocal(const Tensor& a) {
  Tensor out(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.value()[size_t(i)] = 1.0 / a.value()[size_t(i)];
  if (track(a)) {
    auto ad = a.handle(), od = out.handle();
    record(out, [ad, od]() {
      auto& ga = acc(ad);
      for (size_t i = 0; i < od->grad.size(); ++i) {
        const double y = od->value[i];
        ga[i] -= od->grad[i] * y * y;
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& a) {
  Tensor out(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) {
    const double x = a.value()[size_t(i)];
    out.value()[size_t(i)] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  if (track(a)) {
    auto ad = a.handle(), od = out.handle();
    record(out, [ad, od]() {
      auto& ga = acc(ad);
      for (size_t i = 0; i < od->grad.size(); ++i) {
        const double x = ad->value[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        ga[i] += od->grad[i] * (cdf + x * pdf);
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.value()[size_t(i)] = 1.0 / (1.0 + std::exp(-a.value()[size_t(i)]));
  if (track(a)) {
    auto ad = a.handle(), od = out.handle();
    record(out, [ad, od]() {
      auto& ga = acc(ad);
      for (size_t i = 0; i < od->grad.size(); ++i) {
        const double s = od->value[i];
        ga[i] += od->grad[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

// ---- structural ------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes numel");
  Tensor out(std::move(shape), a.value());
  if (track(a)) {
    auto ad = a.handle(), od = out.handle();
    record(out, [ad, od]() {
      auto& ga = acc(ad);
      for (size_t i = 0; i < od->grad.size(); ++i) ga[i] += od->grad[i];
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: rank-2 tensor required");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out(Shape{n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.value()[size_t(j) * m + i] = a.value()[size_t(i) * n + j];
  if (track(a)) {
    auto ad = a.handle(), od = out.handle();
    record(out, [ad, od, m, n]() {
      auto& ga = acc(ad);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ga[size_t(i) * n + j] += od->grad[size_t(j) * m + i];
    });
  }
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  require(a.rank() == b.rank(), "concat: ranks differ");
  for (int i = 0; i < a.rank(); ++i)
    if (i != axis)
      require(a.dim(i) == b.dim(i), "concat: non-axis extents differ");
  const AxisView va = axis_view(a.shape(), axis);
  const AxisView vb = axis_view(b.shape(), axis);
  Shape shape = a.shape();
  shape[size_t(axis)] = va.len + vb.len;
  Tensor out(shape);
  const size_t block_a = size_t(va.len) * va.inner;
  const size_t block_b = size_t(vb.len) * vb.inner;
  for (int o = 0; o < va.outer; ++o) {
    std::copy_n(a.value().begin() + long(o * block_a), block_a,
                out.value().begin() + long(o * (block_a + block_b)));
    std::copy_n(b.value().begin() + long(o * block_b), block_b,
                out.value().begin() + long(o * (block_a + block_b) + block_a));
  }
  if (track(a) || track(b)) {
    auto ad = a.handle(), bd = b.handle(), od = out.handle();
    const int outer = va.outer;
    record(out, [ad, bd, od, outer, block_a, block_b]() {
      for (int o = 0; o < outer; ++o) {
        const size_t base = size_t(o) * (block_a + block_b);
        if (ad->requires_grad) {
          auto& ga = acc(ad);
          for (size_t i = 0; i < block_a; ++i) ga[size_t(o) * block_a + i] += od->grad[base + i];
        }
        if (bd->requires_grad) {
          auto& gb = acc(bd);
          for (size_t i = 0; i < block_b; ++i)
            gb[size_t(o) * block_b + i] += od->grad[base + block_a + i];
        }
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, int begin, int end) {
  require(a.rank() >= 1 && begin >= 0 && end <= a.dim(0) && begin < end,
          "slice_rows: bad range");
  size_t row = 1;
  Shape shape = a.shape();
  for (int i = 1; i < a.rank(); ++i) row *= size_t(a.dim(i));
  shape[0] = end - begin;
  Tensor out(shape);
  std::copy_n(a.value().begin() + long(size_t(begin) * row), size_t(end - begin) * row,
              out.value().begin());
  if (track(a)) {
    auto ad = a.handle(), od = out.handle();
    record(out, [ad, od, begin, row]() {
      auto& ga = acc(ad);
      for (size_t i = 0; i < od->grad.size(); ++i) ga[size_t(begin) * row + i] += od->grad[i];
    });
  }
  return out;
}

// ---- reductions and normalizations ------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
  const AxisView v = axis_view(a.shape(), axis);
  Tensor out(a.shape());
  for (int o = 0; o < v.outer; ++o) {
    for (int i = 0; i < v.inner; ++i) {
      const size_t base = size_t(o) * v.len * v.inner + size_t(i);
      double mx = a.value()[base];
      for (int l = 1; l < v.len; ++l)
        mx = std::max(mx, a.value()[base + size_t(l) * v.inner]);
      double sum = 0.0;
      for (int l = 0; l < v.len; ++l) {
        const double e = std::exp(a.value()[base + size_t(l) * v.inner] - mx);
        out.value()[base + size_t(l) * v.inner] = e;
        sum += e;
      }
      for (int l = 0; l < v.len; ++l) out.value()[base + size_t(l) * v.inner] /= sum;
    }
  }
  if (track(a)) {
    auto ad = a.handle(), od = out.handle();
    record(out, [ad, od, v]() {
      auto& ga = acc(ad);
      for (int o = 0; o < v.outer; ++o) {
        for (int i = 0; i < v.inner; ++i) {
          const size_t base = size_t(o) * v.len * v.inner + size_t(i);
          double dot = 0.0;
          for (int l = 0; l < v.len; ++l) {
            const size_t k = base + size_t(l) * v.inner;
            dot += od->grad[k] * od->value[k];
          }
          for (int l = 0; l < v.len; ++l) {
            const size_t k = base + size_t(l) * v.inner;
            ga[k] += od->value[k] * (od->grad[k] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor l2_normalize(const Tensor& a, int axis, double eps) {
  const AxisView v = axis_view(a.shape(), axis);
  Tensor out(a.shape());
  std::vector<double> norms(size_t(v.outer) * v.inner);
  for (int o = 0; o < v.outer; ++o) {
    for (int i = 0; i < v.inner; ++i) {
      const size_t base = size_t(o) * v.len * v.inner + size_t(i);
      double sq = eps;
      for (int l = 0; l < v.len; ++l) {
        const double x = a.value()[base + size_t(l) * v.inner];
        sq += x * x;
      }
      const double n = std::sqrt(sq);
      norms[size_t(o) * v.inner + i] = n;
      for (int l = 0; l < v.len; ++l)
        out.value()[base + size_t(l) * v.inner] = a.value()[base + size_t(l) * v.inner] / n;
    }
  }
  if (track(a)) {
    auto ad = a.handle(), od = out.handle();
    record(out, [ad, od, v, norms = std::move(norms)]() {
      auto& ga = acc(ad);
      for (int o = 0; o < v.outer; ++o) {
        for (int i = 0; i < v.inner; ++i) {
          const size_t base = size_t(o) * v.len * v.inner + size_t(i);
          const double n = norms[size_t(o) * v.inner + i];
          double dot = 0.0;
          for (int l = 0; l < v.len; ++l) {
            const size_t k = base + size_t(l) * v.inner;
            dot += od->grad[k] * ad->value[k];
          }
          for (int l = 0; l < v.len; ++l) {
            const size_t k = base + size_t(l) * v.inner;
            ga[k] += od->grad[k] / n - ad->value[k] * dot / (n * n * n);
          }
        }
      }
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  const int n = a.numel();
  require(n > 0, "mean of empty tensor");
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += a.value()[size_t(i)];
  Tensor out = Tensor::scalar(sum / n);
  if (track(a)) {
    auto ad = a.handle(), od = out.handle();
    record(out, [ad, od, n]() {
      auto& ga = acc(ad);
      const double g = od->grad[0] / n;
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "l1_loss");
  const int n = pred.numel();
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::fabs(pred.value()[size_t(i)] - target.value()[size_t(i)]);
  Tensor out = Tensor::scalar(sum / n);
  if (track(pred) || track(target)) {
    auto pd = pred.handle(), td = target.handle(), od = out.handle();
    record(out, [pd, td, od, n]() {
      const double g = od->grad[0] / n;
      for (int i = 0; i < n; ++i) {
        const double d = pd->value[size_t(i)] - td->value[size_t(i)];
        const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        if (pd->requires_grad) acc(pd)[size_t(i)] += g * s;
        if (td->requires_grad) acc(td)[size_t(i)] -= g * s;
      }
    });
  }
  return out;
}

// ---- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 tensors required");
  require(a.dim(1) == b.dim(0), "matmul: inner extents differ (" + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()) + ")");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n});
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double av = a.value()[size_t(i) * k + p];
      if (av == 0.0) continue;
      const size_t brow = size_t(p) * n;
      const size_t orow = size_t(i) * n;
      for (int j = 0; j < n; ++j) out.value()[orow + j] += av * b.value()[brow + j];
    }
  }
  if (track(a) || track(b)) {
    auto ad = a.handle(), bd = b.handle(), od = out.handle();
    record(out, [ad, bd, od, m, k, n]() {
      if (ad->requires_grad) {
        auto& ga = acc(ad);
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double sum = 0.0;
            for (int j = 0; j < n; ++j)
              sum += od->grad[size_t(i) * n + j] * bd->value[size_t(p) * n + j];
            ga[size_t(i) * k + p] += sum;
          }
      }
      if (bd->requires_grad) {
        auto& gb = acc(bd);
        for (int p = 0; p < k; ++p)
          for (int j = 0; j < n; ++j) {
            double sum = 0.0;
            for (int i = 0; i < m; ++i)
              sum += ad->value[size_t(i) * k + p] * od->grad[size_t(i) * n + j];
            gb[size_t(p) * n + j] += sum;
          }
      }
    });
  }
  return out;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 1 && w.rank() == 2 && b.rank() == 1, "affine: x {n}, w {m,n}, b {m}");
  const int n = x.dim(0), m = w.dim(0);
  require(w.dim(1) == n && b.dim(0) == m, "affine: extents disagree");
  Tensor out(Shape{m});
  for (int i = 0; i < m; ++i) {
    double sum = b.value()[size_t(i)];
    for (int j = 0; j < n; ++j) sum += w.value()[size_t(i) * n + j] * x.value()[size_t(j)];
    out.value()[size_t(i)] = sum;
  }
  if (track(x) || track(w) || track(b)) {
    auto xd = x.handle(), wd = w.handle(), bd = b.handle(), od = out.handle();
    record(out, [xd, wd, bd, od, m, n]() {
      const auto& g = od->grad;
      if (wd->requires_grad) {
        auto& gw = acc(wd);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gw[size_t(i) * n + j] += g[size_t(i)] * xd->value[size_t(j)];
      }
      if (bd->requires_grad) {
        auto& gb = acc(bd);
        for (int i = 0; i < m; ++i) gb[size_t(i)] += g[size_t(i)];
      }
      if (xd->requires_grad) {
        auto& gx = acc(xd);
        for (int j = 0; j < n; ++j) {
          double sum = 0.0;
          for (int i = 0; i < m; ++i) sum += wd->value[size_t(i) * n + j] * g[size_t(i)];
          gx[size_t(j)] += sum;
        }
      }
    });
  }
  return out;
}

// ---- convolutions -------------------------------------------------------------

namespace {

Tensor conv1x1_impl(const Tensor& t, const Tensor& w, const Tensor* bias) {
  require(t.rank() == 3 && w.rank() == 2, "conv1x1: t {ci,h,w}, w {co,ci}");
  const int ci = t.dim(0), h = t.dim(1), wd = t.dim(2), co = w.dim(0);
  require(w.dim(1) == ci, "conv1x1: channel extents disagree");
  if (bias) require(bias->rank() == 1 && bias->dim(0) == co, "conv1x1: bias {co}");
  const int pix = h * wd;
  Tensor out(Shape{co, h, wd});
  for (int o = 0; o < co; ++o) {
    const size_t orow = size_t(o) * pix;
    if (bias) {
      const double b0 = bias->value()[size_t(o)];
      for (int p = 0; p < pix; ++p) out.value()[orow + p] = b0;
    }
    for (int i = 0; i < ci; ++i) {
      const double wv = w.value()[size_t(o) * ci + i];
      if (wv == 0.0) continue;
      const size_t irow = size_t(i) * pix;
      for (int p = 0; p < pix; ++p) out.value()[orow + p] += wv * t.value()[irow + p];
    }
  }
  const bool tr = track(t) || track(w) || (bias && track(*bias));
  if (tr) {
    auto td = t.handle(), wd_ = w.handle(), od = out.handle();
    std::shared_ptr<TensorData> bd = bias ? bias->handle() : nullptr;
    record(out, [td, wd_, bd, od, ci, co, pix]() {
      const auto& g = od->grad;
      if (wd_->requires_grad) {
        auto& gw = acc(wd_);
        for (int o = 0; o < co; ++o)
          for (int i = 0; i < ci; ++i) {
            double sum = 0.0;
            for (int p = 0; p < pix; ++p)
              sum += g[size_t(o) * pix + p] * td->value[size_t(i) * pix + p];
            gw[size_t(o) * ci + i] += sum;
          }
      }
      if (td->requires_grad) {
        auto& gt = acc(td);
        for (int i = 0; i < ci; ++i)
          for (int o = 0; o < co; ++o) {
            const double wv = wd_->value[size_t(o) * ci + i];
            if (wv == 0.0) continue;
            for (int p = 0; p < pix; ++p)
              gt[size_t(i) * pix + p] += wv * g[size_t(o) * pix + p];
          }
      }
      if (bd && bd->requires_grad) {
        auto& gb = acc(bd);
        for (int o = 0; o < co; ++o) {
          double sum = 0.0;
          for (int p = 0; p < pix; ++p) sum += g[size_t(o) * pix + p];
          gb[size_t(o)] += sum;
        }
      }
    });
  }
  return out;
}

Tensor conv3x3_impl(const Tensor& t, const Tensor& w, const Tensor* bias, int stride) {
  require(t.rank() == 3 && w.rank() == 4, "conv3x3: t {ci,h,w}, w {co,ci,3,3}");
  require(w.dim(2) == 3 && w.dim(3) == 3, "conv3x3: 3x3 kernels required");
  require(stride == 1 || stride == 2, "conv3x3: stride must be 1 or 2");
  const int ci = t.dim(0), h = t.dim(1), wd = t.dim(2), co = w.dim(0);
  require(w.dim(1) == ci, "conv3x3: channel extents disagree");
  if (bias) require(bias->rank() == 1 && bias->dim(0) == co, "conv3x3: bias {co}");
  const int oh = (h - 1) / stride + 1;
  const int ow = (wd - 1) / stride + 1;
  Tensor out(Shape{co, oh, ow});
  auto tat = [&](int c, int y, int x) -> double {
    if (y < 0 || y >= h || x < 0 || x >= wd) return 0.0;
    return t.value()[(size_t(c) * h + y) * wd + x];
  };
  for (int o = 0; o < co; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double sum = bias ? bias->value()[size_t(o)] : 0.0;
        for (int i = 0; i < ci; ++i)
          for (int u = 0; u < 3; ++u)
            for (int v = 0; v < 3; ++v)
              sum += w.value()[((size_t(o) * ci + i) * 3 + u) * 3 + v] *
                     tat(i, stride * y + u - 1, stride * x + v - 1);
        out.value()[(size_t(o) * oh + y) * ow + x] = sum;
      }
    }
  }
  const bool tr = track(t) || track(w) || (bias && track(*bias));
  if (tr) {
    auto td = t.handle(), wd_ = w.handle(), od = out.handle();
    std::shared_ptr<TensorData> bd = bias ? bias->handle() : nullptr;
    record(out, [td, wd_, bd, od, ci, co, h, wd, oh, ow, stride]() {
      const auto& g = od->grad;
      std::vector<double>* gw = wd_->requires_grad ? &acc(wd_) : nullptr;
      std::vector<double>* gt = td->requires_grad ? &acc(td) : nullptr;
      std::vector<double>* gb = bd && bd->requires_grad ? &acc(bd) : nullptr;
      for (int o = 0; o < co; ++o) {
        for (int y = 0; y < oh; ++y) {
          for (int x = 0; x < ow; ++x) {
            const double go = g[(size_t(o) * oh + y) * ow + x];
            if (go == 0.0) continue;
            if (gb) (*gb)[size_t(o)] += go;
            for (int i = 0; i < ci; ++i) {
              for (int u = 0; u < 3; ++u) {
                for (int v = 0; v < 3; ++v) {
                  const int sy = stride * y + u - 1;
                  const int sx = stride * x + v - 1;
                  if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                  const size_t wi = ((size_t(o) * ci + i) * 3 + u) * 3 + v;
                  const size_t ti = (size_t(i) * h + sy) * wd + sx;
                  if (gw) (*gw)[wi] += go * td->value[ti];
                  if (gt) (*gt)[ti] += go * wd_->value[wi];
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor conv1x1(const Tensor& t, const Tensor& w) { return conv1x1_impl(t, w, nullptr); }

Tensor conv1x1(const Tensor& t, const Tensor& w, const Tensor& b) {
  return conv1x1_impl(t, w, &b);
}

Tensor depthwise_conv3x3(const Tensor& t, const Tensor& w) {
  require(t.rank() == 3 && w.rank() == 3, "depthwise_conv3x3: t {c,h,w}, w {c,3,3}");
  require(w.dim(0) == t.dim(0) && w.dim(1) == 3 && w.dim(2) == 3,
          "depthwise_conv3x3: kernel extents disagree");
  const int c = t.dim(0), h = t.dim(1), wd = t.dim(2);
  Tensor out(Shape{c, h, wd});
  auto tat = [&](int ch, int y, int x) -> double {
    if (y < 0 || y >= h || x < 0 || x >= wd) return 0.0;
    return t.value()[(size_t(ch) * h + y) * wd + x];
  };
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < wd; ++x) {
        double sum = 0.0;
        for (int u = 0; u < 3; ++u)
          for (int v = 0; v < 3; ++v)
            sum += w.value()[(size_t(ch) * 3 + u) * 3 + v] * tat(ch, y + u - 1, x + v - 1);
        out.value()[(size_t(ch) * h + y) * wd + x] = sum;
      }
  if (track(t) || track(w)) {
    auto td = t.handle(), wd_ = w.handle(), od = out.handle();
    record(out, [td, wd_, od, c, h, wd]() {
      const auto& g = od->grad;
      std::vector<double>* gw = wd_->requires_grad ? &acc(wd_) : nullptr;
      std::vector<double>* gt = td->requires_grad ? &acc(td) : nullptr;
      for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < wd; ++x) {
            const double go = g[(size_t(ch) * h + y) * wd + x];
            if (go == 0.0) continue;
            for (int u = 0; u < 3; ++u) {
              for (int v = 0; v < 3; ++v) {
                const int sy = y + u - 1;
                const int sx = x + v - 1;
                if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                const size_t wi = (size_t(ch) * 3 + u) * 3 + v;
                const size_t ti = (size_t(ch) * h + sy) * wd + sx;
                if (gw) (*gw)[wi] += go * td->value[ti];
                if (gt) (*gt)[ti] += go * wd_->value[wi];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor conv3x3(const Tensor& t, const Tensor& w, int stride) {
  return conv3x3_impl(t, w, nullptr, stride);
}

Tensor conv3x3(const Tensor& t, const Tensor& w, const Tensor& b, int stride) {
  return conv3x3_impl(t, w, &b, stride);
}

Tensor layer_norm_channels(const Tensor& t, const Tensor& gamma, const Tensor& beta, double eps) {
  require(t.rank() == 3, "layer_norm_channels: t {c,h,w}");
  const int c = t.dim(0), pix = t.dim(1) * t.dim(2);
  require(gamma.rank() == 1 && gamma.dim(0) == c && beta.rank() == 1 && beta.dim(0) == c,
          "layer_norm_channels: gamma/beta {c}");
  Tensor out(t.shape());
  std::vector<double> inv_std(size_t(pix), 0.0);
  std::vector<double> mu(size_t(pix), 0.0);
  for (int p = 0; p < pix; ++p) {
    double m = 0.0;
    for (int ch = 0; ch < c; ++ch) m += t.value()[size_t(ch) * pix + p];
    m /= c;
    double var = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double d = t.value()[size_t(ch) * pix + p] - m;
      var += d * d;
    }
    var /= c;
    mu[size_t(p)] = m;
    inv_std[size_t(p)] = 1.0 / std::sqrt(var + eps);
    for (int ch = 0; ch < c; ++ch) {
      const double xhat = (t.value()[size_t(ch) * pix + p] - m) * inv_std[size_t(p)];
      out.value()[size_t(ch) * pix + p] =
          gamma.value()[size_t(ch)] * xhat + beta.value()[size_t(ch)];
    }
  }
  if (track(t) || track(gamma) || track(beta)) {
    auto td = t.handle(), gd = gamma.handle(), bd = beta.handle(), od = out.handle();
    record(out, [td, gd, bd, od, c, pix, mu = std::move(mu), inv_std = std::move(inv_std)]() {
      const auto& g = od->grad;
      for (int p = 0; p < pix; ++p) {
        const double is = inv_std[size_t(p)];
        const double m = mu[size_t(p)];
        double mean_gg = 0.0, mean_gx = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const double xhat = (td->value[size_t(ch) * pix + p] - m) * is;
          const double gg = g[size_t(ch) * pix + p] * gd->value[size_t(ch)];
          mean_gg += gg;
          mean_gx += gg * xhat;
        }
        mean_gg /= c;
        mean_gx /= c;
        for (int ch = 0; ch < c; ++ch) {
          const double xhat = (td->value[size_t(ch) * pix + p] - m) * is;
          const double gg = g[size_t(ch) * pix + p] * gd->value[size_t(ch)];
          if (td->requires_grad)
            acc(td)[size_t(ch) * pix + p] += is * (gg - mean_gg - xhat * mean_gx);
          if (gd->requires_grad) acc(gd)[size_t(ch)] += g[size_t(ch) * pix + p] * xhat;
          if (bd->requires_grad) acc(bd)[size_t(ch)] += g[size_t(ch) * pix + p];
        }
      }
    });
  }
  return out;
}

Tensor tile_spatial(const Tensor& v, int h, int w) {
  require(v.rank() == 1, "tile_spatial: rank-1 input");
  const int n = v.dim(0), pix = h * w;
  Tensor out(Shape{n, h, w});
  for (int j = 0; j < n; ++j)
    for (int p = 0; p < pix; ++p) out.value()[size_t(j) * pix + p] = v.value()[size_t(j)];
  if (track(v)) {
    auto vd = v.handle(), od = out.handle();
    record(out, [vd, od, n, pix]() {
      auto& gv = acc(vd);
      for (int j = 0; j < n; ++j) {
        double sum = 0.0;
        for (int p = 0; p < pix; ++p) sum += od->grad[size_t(j) * pix + p];
        gv[size_t(j)] += sum;
      }
    });
  }
  return out;
}

namespace {

// Index map shared by space_to_depth and its inverse:
// packed[c*4 + py*2 + px, Y, X] <-> full[c, 2Y+py, 2X+px].
void s2d_loop(int c, int oh, int ow, const std::function<void(size_t full, size_t packed)>& fn) {
  for (int ch = 0; ch < c; ++ch)
    for (int py = 0; py < 2; ++py)
      for (int px = 0; px < 2; ++px)
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x) {
            const size_t full = (size_t(ch) * (2 * oh) + (2 * y + py)) * size_t(2 * ow) + (2 * x + px);
            const size_t packed =
                (size_t(ch * 4 + py * 2 + px) * oh + y) * size_t(ow) + x;
            fn(full, packed);
          }
}

}  // namespace

Tensor space_to_depth(const Tensor& t) {
  require(t.rank() == 3, "space_to_depth: t {c,h,w}");
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  require(h % 2 == 0 && w % 2 == 0, "space_to_depth: even extents required");
  Tensor out(Shape{4 * c, h / 2, w / 2});
  s2d_loop(c, h / 2, w / 2,
           [&](size_t full, size_t packed) { out.value()[packed] = t.value()[full]; });
  if (track(t)) {
    auto td = t.handle(), od = out.handle();
    record(out, [td, od, c, h, w]() {
      auto& gt = acc(td);
      s2d_loop(c, h / 2, w / 2,
               [&](size_t full, size_t packed) { gt[full] += od->grad[packed]; });
    });
  }
  return out;
}

Tensor depth_to_space(const Tensor& t) {
  require(t.rank() == 3, "depth_to_space: t {c,h,w}");
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  require(c % 4 == 0, "depth_to_space: channels divisible by 4 required");
  Tensor out(Shape{c / 4, 2 * h, 2 * w});
  s2d_loop(c / 4, h, w,
           [&](size_t full, size_t packed) { out.value()[full] = t.value()[packed]; });
  if (track(t)) {
    auto td = t.handle(), od = out.handle();
    record(out, [td, od, c, h, w]() {
      auto& gt = acc(td);
      s2d_loop(c / 4, h, w, [&](size_t full, size_t packed) { gt[packed] += od->grad[full]; });
    });
  }
  return out;
}

}  // namespace nprior
