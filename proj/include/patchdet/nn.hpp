#pragma once

// Minimal CNN layer kit with explicit backpropagation. Templated on the
// scalar type: float for training speed, double for finite-difference
// verification of the gradients.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "patchdet/errors.hpp"
#include "patchdet/rng.hpp"

namespace patchdet::nn {

/// Training reallocates multi-megabyte activation buffers every step; with
/// glibc defaults those land in fresh mmap regions and every step pays the
/// page-fault cost again. Raising the mmap threshold keeps them on the heap
/// where they get reused.
inline void tune_allocator() {
#ifdef __GLIBC__
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
    return true;
  }();
  (void)done;
#endif
}

template <typename S>
struct Tensor {
  int n = 0, c = 0, h = 1, w = 1; // NCHW; 2-d tensors keep h = w = 1
  std::vector<S> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_ = 1, int w_ = 1)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<size_t>(n_) * c_ * h_ * w_, S(0)) {}

  size_t size() const { return data.size(); }
  S& at(int in, int ic, int ih, int iw) {
    return data[((static_cast<size_t>(in) * c + ic) * h + ih) * w + iw];
  }
  S at(int in, int ic, int ih, int iw) const {
    return data[((static_cast<size_t>(in) * c + ic) * h + ih) * w + iw];
  }
};

template <typename S>
struct Param {
  std::string name;
  std::vector<S> value;
  std::vector<S> grad;
  bool decay = true;      // weight decay applies (off for biases / norm scales)
  bool trainable = true;  // toggled by freezing
  bool buffer = false;    // running statistics: serialized, never updated by SGD

  void init_zero(size_t n) {
    value.assign(n, S(0));
    grad.assign(n, S(0));
  }
};

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using MatMap = Eigen::Map<Mat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const Mat<S>>;

template <typename S>
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor<S> forward(const Tensor<S>& x, bool train) = 0;
  virtual Tensor<S> backward(const Tensor<S>& grad_out) = 0;
  virtual void collect_params(std::vector<Param<S>*>& out) {}
  /// Freeze toggles trainability; norm layers additionally pin their
  /// running statistics and normalize with them even in training mode.
  virtual void set_frozen(bool frozen) {
    std::vector<Param<S>*> ps;
    collect_params(ps);
    for (auto* p : ps)
      if (!p->buffer) p->trainable = !frozen;
  }
  /// Freeze only normalization layers (fine-tune stage 2 semantics).
  virtual void set_norm_frozen(bool) {}
};

// --- Convolution -------------------------------------------------------

template <typename S>
class Conv2d : public Module<S> {
 public:
  Conv2d(std::string name, int in_c, int out_c, int kernel, int stride, int pad,
         bool bias = false)
      : in_c_(in_c), out_c_(out_c), k_(kernel), stride_(stride), pad_(pad), has_bias_(bias) {
    weight_.name = name + ".weight";
    weight_.init_zero(static_cast<size_t>(out_c) * in_c * kernel * kernel);
    if (has_bias_) {
      bias_.name = name + ".bias";
      bias_.decay = false;
      bias_.init_zero(out_c);
    }
  }

  void init_he(Rng& rng) {
    double std = std::sqrt(2.0 / (static_cast<double>(in_c_) * k_ * k_));
    for (auto& v : weight_.value) v = static_cast<S>(rng.normal() * std);
  }

  int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  Tensor<S> forward(const Tensor<S>& x, bool) override {
    input_ = x;
    const int oh = out_size(x.h), ow = out_size(x.w);
    if (oh <= 0 || ow <= 0) throw ArgumentError("conv input smaller than kernel");
    Tensor<S> y(x.n, out_c_, oh, ow);
    const int ckk = in_c_ * k_ * k_;
    ConstMatMap<S> wm(weight_.value.data(), ckk, out_c_); // (CKK x OC), col-major

    const int chunk = chunk_samples(oh, ow);
    for (int n0 = 0; n0 < x.n; n0 += chunk) {
      const int n1 = std::min(x.n, n0 + chunk);
      im2col(x, n0, n1, cols_);
      out_.resize(cols_.cols(), out_c_);
      out_.noalias() = cols_.transpose() * wm; // (positions x OC)
      if (has_bias_)
        out_.rowwise() += ConstMatMap<S>(bias_.value.data(), 1, out_c_).row(0);
      scatter_out(out_, y, n0, n1);
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& gy) override {
    const Tensor<S>& x = input_;
    const int oh = out_size(x.h), ow = out_size(x.w);
    const int ckk = in_c_ * k_ * k_;
    Tensor<S> gx(x.n, x.c, x.h, x.w);
    MatMap<S> gwm(weight_.grad.data(), ckk, out_c_);

    const int chunk = chunk_samples(oh, ow);
    for (int n0 = 0; n0 < x.n; n0 += chunk) {
      const int n1 = std::min(x.n, n0 + chunk);
      gather_out(gy, n0, n1, out_); // (positions x OC)
      im2col(x, n0, n1, cols_);
      gwm.noalias() += cols_ * out_;
      if (has_bias_) {
        MatMap<S> gb(bias_.grad.data(), out_c_, 1);
        gb.col(0).noalias() += out_.colwise().sum().transpose();
      }
      ConstMatMap<S> wm(weight_.value.data(), ckk, out_c_);
      gcols_.resize(ckk, out_.rows());
      gcols_.noalias() = wm * out_.transpose(); // (CKK x positions)
      col2im(gcols_, gx, n0, n1);
    }
    return gx;
  }

  void collect_params(std::vector<Param<S>*>& out) override {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

 private:
  int chunk_samples(int oh, int ow) const {
    const size_t budget = 8u << 20; // scratch elements per im2col chunk
    size_t per_sample = static_cast<size_t>(in_c_) * k_ * k_ * oh * ow;
    return std::max<int>(1, static_cast<int>(budget / std::max<size_t>(per_sample, 1)));
  }

  void im2col(const Tensor<S>& x, int n0, int n1, Mat<S>& cols) const {
    const int oh = out_size(x.h), ow = out_size(x.w);
    const int ckk = in_c_ * k_ * k_;
    cols.resize(ckk, static_cast<Eigen::Index>(n1 - n0) * oh * ow);
    for (int n = n0; n < n1; ++n) {
      const S* sample = x.data.data() + static_cast<size_t>(n) * x.c * x.h * x.w;
      for (int y = 0; y < oh; ++y) {
        for (int xw = 0; xw < ow; ++xw) {
          Eigen::Index col = (static_cast<Eigen::Index>(n - n0) * oh + y) * ow + xw;
          S* dst = cols.data() + col * ckk;
          const int ic0 = xw * stride_ - pad_;
          for (int c = 0; c < in_c_; ++c) {
            const S* plane = sample + static_cast<size_t>(c) * x.h * x.w;
            for (int kr = 0; kr < k_; ++kr, dst += k_) {
              const int ir = y * stride_ - pad_ + kr;
              if (ir < 0 || ir >= x.h) {
                for (int kc = 0; kc < k_; ++kc) dst[kc] = S(0);
                continue;
              }
              const S* row = plane + static_cast<size_t>(ir) * x.w;
              for (int kc = 0; kc < k_; ++kc) {
                const int ic = ic0 + kc;
                dst[kc] = (ic >= 0 && ic < x.w) ? row[ic] : S(0);
              }
            }
          }
        }
      }
    }
  }

  void col2im(const Mat<S>& gcols, Tensor<S>& gx, int n0, int n1) const {
    const int oh = out_size(gx.h), ow = out_size(gx.w);
    const int ckk = in_c_ * k_ * k_;
    for (int n = n0; n < n1; ++n) {
      S* sample = gx.data.data() + static_cast<size_t>(n) * gx.c * gx.h * gx.w;
      for (int y = 0; y < oh; ++y) {
        for (int xw = 0; xw < ow; ++xw) {
          Eigen::Index col = (static_cast<Eigen::Index>(n - n0) * oh + y) * ow + xw;
          const S* src = gcols.data() + col * ckk;
          const int ic0 = xw * stride_ - pad_;
          for (int c = 0; c < in_c_; ++c) {
            S* plane = sample + static_cast<size_t>(c) * gx.h * gx.w;
            for (int kr = 0; kr < k_; ++kr, src += k_) {
              const int ir = y * stride_ - pad_ + kr;
              if (ir < 0 || ir >= gx.h) continue;
              S* row = plane + static_cast<size_t>(ir) * gx.w;
              for (int kc = 0; kc < k_; ++kc) {
                const int ic = ic0 + kc;
                if (ic >= 0 && ic < gx.w) row[ic] += src[kc];
              }
            }
          }
        }
      }
    }
  }

  // (positions x OC) scratch <-> NCHW tensor blocks; both sides contiguous
  // per (sample, channel).
  void scatter_out(const Mat<S>& out, Tensor<S>& y, int n0, int n1) const {
    const int hw = y.h * y.w;
    for (int n = n0; n < n1; ++n)
      for (int c = 0; c < out_c_; ++c) {
        S* dst = y.data.data() + ((static_cast<size_t>(n) * out_c_ + c) * hw);
        const S* src = out.col(c).data() + static_cast<size_t>(n - n0) * hw;
        std::copy(src, src + hw, dst);
      }
  }

  void gather_out(const Tensor<S>& gy, int n0, int n1, Mat<S>& gout) const {
    const int hw = gy.h * gy.w;
    gout.resize(static_cast<Eigen::Index>(n1 - n0) * hw, out_c_);
    for (int n = n0; n < n1; ++n)
      for (int c = 0; c < out_c_; ++c) {
        const S* src = gy.data.data() + ((static_cast<size_t>(n) * out_c_ + c) * hw);
        S* dst = gout.col(c).data() + static_cast<size_t>(n - n0) * hw;
        std::copy(src, src + hw, dst);
      }
  }

  int in_c_, out_c_, k_, stride_, pad_;
  bool has_bias_;
  Param<S> weight_, bias_;
  Tensor<S> input_;
  Mat<S> cols_, out_, gcols_; // persistent scratch, reused across steps
};

// --- Batch normalization ------------------------------------------------

template <typename S>
class BatchNorm2d : public Module<S> {
 public:
  explicit BatchNorm2d(std::string name, int channels, double momentum = 0.1,
                       double eps = 1e-5)
      : c_(channels), momentum_(momentum), eps_(eps) {
    gamma_.name = name + ".weight";
    gamma_.decay = false;
    gamma_.value.assign(channels, S(1));
    gamma_.grad.assign(channels, S(0));
    beta_.name = name + ".bias";
    beta_.decay = false;
    beta_.init_zero(channels);
    running_mean_.name = name + ".running_mean";
    running_mean_.buffer = true;
    running_mean_.trainable = false;
    running_mean_.decay = false;
    running_mean_.init_zero(channels);
    running_var_.name = name + ".running_var";
    running_var_.buffer = true;
    running_var_.trainable = false;
    running_var_.decay = false;
    running_var_.value.assign(channels, S(1));
    running_var_.grad.assign(channels, S(0));
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) override {
    const bool use_batch_stats = train && !frozen_;
    train_mode_ = use_batch_stats;
    const int m = x.n * x.h * x.w;
    const int hw = x.h * x.w;
    Tensor<S> y(x.n, x.c, x.h, x.w);
    if (xhat_.size() != x.size()) xhat_ = Tensor<S>(x.n, x.c, x.h, x.w);
    xhat_.n = x.n;
    xhat_.c = x.c;
    xhat_.h = x.h;
    xhat_.w = x.w;
    inv_std_.assign(c_, S(0));

    for (int c = 0; c < c_; ++c) {
      double mean, var;
      if (use_batch_stats) {
        double acc = 0.0, acc2 = 0.0;
        for (int n = 0; n < x.n; ++n) {
          const S* src = x.data.data() + (static_cast<size_t>(n) * c_ + c) * hw;
          for (int i = 0; i < hw; ++i) {
            const double v = src[i];
            acc += v;
            acc2 += v * v;
          }
        }
        mean = acc / m;
        var = std::max(0.0, acc2 / m - mean * mean); // biased, for normalization
        double unbiased = m > 1 ? var * m / (m - 1) : var;
        running_mean_.value[c] =
            static_cast<S>((1.0 - momentum_) * running_mean_.value[c] + momentum_ * mean);
        running_var_.value[c] =
            static_cast<S>((1.0 - momentum_) * running_var_.value[c] + momentum_ * unbiased);
      } else {
        mean = running_mean_.value[c];
        var = running_var_.value[c];
      }
      const S inv = static_cast<S>(1.0 / std::sqrt(var + eps_));
      inv_std_[c] = inv;
      const S mu = static_cast<S>(mean);
      const S g = gamma_.value[c], b = beta_.value[c];
      for (int n = 0; n < x.n; ++n) {
        const size_t base = (static_cast<size_t>(n) * c_ + c) * hw;
        const S* src = x.data.data() + base;
        S* xh = xhat_.data.data() + base;
        S* dst = y.data.data() + base;
        for (int i = 0; i < hw; ++i) {
          const S v = (src[i] - mu) * inv;
          xh[i] = v;
          dst[i] = g * v + b;
        }
      }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& gy) override {
    const int m = gy.n * gy.h * gy.w;
    const int hw = gy.h * gy.w;
    Tensor<S> gx(gy.n, gy.c, gy.h, gy.w);
    for (int c = 0; c < c_; ++c) {
      double sum_gy = 0.0, sum_gy_xhat = 0.0;
      for (int n = 0; n < gy.n; ++n) {
        const size_t base = (static_cast<size_t>(n) * c_ + c) * hw;
        const S* g = gy.data.data() + base;
        const S* xh = xhat_.data.data() + base;
        for (int i = 0; i < hw; ++i) {
          sum_gy += g[i];
          sum_gy_xhat += static_cast<double>(g[i]) * xh[i];
        }
      }
      gamma_.grad[c] += static_cast<S>(sum_gy_xhat);
      beta_.grad[c] += static_cast<S>(sum_gy);
      const double gamma = gamma_.value[c];
      const double inv = inv_std_[c];
      if (train_mode_) {
        const S k = static_cast<S>(gamma * inv / m);
        const S sg = static_cast<S>(sum_gy), sgx = static_cast<S>(sum_gy_xhat);
        const S ms = static_cast<S>(m);
        for (int n = 0; n < gy.n; ++n) {
          const size_t base = (static_cast<size_t>(n) * c_ + c) * hw;
          const S* g = gy.data.data() + base;
          const S* xh = xhat_.data.data() + base;
          S* out = gx.data.data() + base;
          for (int i = 0; i < hw; ++i) out[i] = k * (ms * g[i] - sg - xh[i] * sgx);
        }
      } else {
        const S k = static_cast<S>(gamma * inv);
        for (int n = 0; n < gy.n; ++n) {
          const size_t base = (static_cast<size_t>(n) * c_ + c) * hw;
          const S* g = gy.data.data() + base;
          S* out = gx.data.data() + base;
          for (int i = 0; i < hw; ++i) out[i] = k * g[i];
        }
      }
    }
    return gx;
  }

  void collect_params(std::vector<Param<S>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }

  void set_frozen(bool frozen) override {
    frozen_ = frozen;
    gamma_.trainable = !frozen;
    beta_.trainable = !frozen;
  }

  void set_norm_frozen(bool frozen) override { set_frozen(frozen); }

 private:
  int c_;
  double momentum_, eps_;
  bool frozen_ = false;
  bool train_mode_ = false;
  Param<S> gamma_, beta_, running_mean_, running_var_;
  Tensor<S> xhat_;
  std::vector<S> inv_std_;
};

// --- Simple activations / pooling ---------------------------------------

template <typename S>
class ReLU : public Module<S> {
 public:
  Tensor<S> forward(const Tensor<S>& x, bool) override {
    Tensor<S> y = x;
    if (mask_.size() != x.size()) mask_.resize(x.size());
    S* v = y.data.data();
    const size_t n = y.data.size();
    for (size_t i = 0; i < n; ++i) v[i] = v[i] > S(0) ? v[i] : S(0);
    const S* xv = x.data.data();
    for (size_t i = 0; i < n; ++i) mask_[i] = xv[i] > S(0);
    return y;
  }
  Tensor<S> backward(const Tensor<S>& gy) override {
    Tensor<S> gx = gy;
    S* v = gx.data.data();
    for (size_t i = 0; i < gx.data.size(); ++i) v[i] = mask_[i] ? v[i] : S(0);
    return gx;
  }

 private:
  std::vector<std::uint8_t> mask_;
};

template <typename S>
class MaxPool2d : public Module<S> {
 public:
  MaxPool2d(int kernel, int stride, int pad) : k_(kernel), stride_(stride), pad_(pad) {}

  Tensor<S> forward(const Tensor<S>& x, bool) override {
    in_h_ = x.h;
    in_w_ = x.w;
    const int oh = (x.h + 2 * pad_ - k_) / stride_ + 1;
    const int ow = (x.w + 2 * pad_ - k_) / stride_ + 1;
    Tensor<S> y(x.n, x.c, oh, ow);
    argmax_.assign(y.size(), 0);
    size_t idx = 0;
    for (int n = 0; n < x.n; ++n)
      for (int c = 0; c < x.c; ++c)
        for (int ph = 0; ph < oh; ++ph)
          for (int pw = 0; pw < ow; ++pw, ++idx) {
            S best = std::numeric_limits<S>::lowest();
            size_t best_idx = 0;
            for (int kr = 0; kr < k_; ++kr) {
              int ir = ph * stride_ - pad_ + kr;
              if (ir < 0 || ir >= x.h) continue;
              for (int kc = 0; kc < k_; ++kc) {
                int ic = pw * stride_ - pad_ + kc;
                if (ic < 0 || ic >= x.w) continue;
                S v = x.at(n, c, ir, ic);
                if (v > best) {
                  best = v;
                  best_idx = ((static_cast<size_t>(n) * x.c + c) * x.h + ir) * x.w + ic;
                }
              }
            }
            y.data[idx] = best;
            argmax_[idx] = best_idx;
          }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& gy) override {
    Tensor<S> gx(gy.n, gy.c, in_h_, in_w_);
    for (size_t i = 0; i < gy.data.size(); ++i) gx.data[argmax_[i]] += gy.data[i];
    return gx;
  }

 private:
  int k_, stride_, pad_;
  int in_h_ = 0, in_w_ = 0;
  std::vector<size_t> argmax_;
};

template <typename S>
class GlobalAvgPool : public Module<S> {
 public:
  Tensor<S> forward(const Tensor<S>& x, bool) override {
    in_h_ = x.h;
    in_w_ = x.w;
    Tensor<S> y(x.n, x.c);
    const S scale = S(1) / static_cast<S>(x.h * x.w);
    for (int n = 0; n < x.n; ++n)
      for (int c = 0; c < x.c; ++c) {
        S acc = S(0);
        for (int h = 0; h < x.h; ++h)
          for (int w = 0; w < x.w; ++w) acc += x.at(n, c, h, w);
        y.at(n, c, 0, 0) = acc * scale;
      }
    return y;
  }
  Tensor<S> backward(const Tensor<S>& gy) override {
    Tensor<S> gx(gy.n, gy.c, in_h_, in_w_);
    const S scale = S(1) / static_cast<S>(in_h_ * in_w_);
    for (int n = 0; n < gy.n; ++n)
      for (int c = 0; c < gy.c; ++c) {
        S g = gy.at(n, c, 0, 0) * scale;
        for (int h = 0; h < in_h_; ++h)
          for (int w = 0; w < in_w_; ++w) gx.at(n, c, h, w) = g;
      }
    return gx;
  }

 private:
  int in_h_ = 0, in_w_ = 0;
};

// --- Linear --------------------------------------------------------------

template <typename S>
class Linear : public Module<S> {
 public:
  Linear(std::string name, int in, int out, bool bias = true)
      : in_(in), out_(out), has_bias_(bias) {
    weight_.name = name + ".weight";
    weight_.init_zero(static_cast<size_t>(in) * out); // stored (in x out) col-major
    if (has_bias_) {
      bias_.name = name + ".bias";
      bias_.decay = false;
      bias_.init_zero(out);
    }
  }

  void init_he(Rng& rng) {
    double std = std::sqrt(2.0 / in_);
    for (auto& v : weight_.value) v = static_cast<S>(rng.normal() * std);
  }

  Tensor<S> forward(const Tensor<S>& x, bool) override {
    if (x.c * x.h * x.w != in_) throw ArgumentError("linear input dimension mismatch");
    input_ = x;
    Tensor<S> y(x.n, out_);
    ConstMatMap<S> xm(x.data.data(), in_, x.n);  // column per sample
    ConstMatMap<S> wm(weight_.value.data(), in_, out_);
    MatMap<S> ym(y.data.data(), out_, x.n);
    ym.noalias() = wm.transpose() * xm;
    if (has_bias_) ym.colwise() += ConstMatMap<S>(bias_.value.data(), out_, 1).col(0);
    return y;
  }

  Tensor<S> backward(const Tensor<S>& gy) override {
    Tensor<S> gx(input_.n, input_.c, input_.h, input_.w);
    ConstMatMap<S> gym(gy.data.data(), out_, gy.n);
    ConstMatMap<S> xm(input_.data.data(), in_, input_.n);
    ConstMatMap<S> wm(weight_.value.data(), in_, out_);
    MatMap<S> gwm(weight_.grad.data(), in_, out_);
    gwm.noalias() += xm * gym.transpose();
    if (has_bias_) {
      MatMap<S> gb(bias_.grad.data(), out_, 1);
      gb.col(0).noalias() += gym.rowwise().sum();
    }
    MatMap<S> gxm(gx.data.data(), in_, gx.n);
    gxm.noalias() = wm * gym;
    return gx;
  }

  void collect_params(std::vector<Param<S>*>& out) override {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

 private:
  int in_, out_;
  bool has_bias_;
  Param<S> weight_, bias_;
  Tensor<S> input_;
};

// --- Containers ------------------------------------------------------------

template <typename S>
class Sequential : public Module<S> {
 public:
  Sequential() = default;

  template <typename M, typename... Args>
  M* emplace(Args&&... args) {
    auto mod = std::make_unique<M>(std::forward<Args>(args)...);
    M* raw = mod.get();
    modules_.push_back(std::move(mod));
    return raw;
  }

  void push(std::unique_ptr<Module<S>> m) { modules_.push_back(std::move(m)); }

  Tensor<S> forward(const Tensor<S>& x, bool train) override {
    Tensor<S> cur = x;
    for (auto& m : modules_) cur = m->forward(cur, train);
    return cur;
  }
  Tensor<S> backward(const Tensor<S>& gy) override {
    Tensor<S> cur = gy;
    for (auto it = modules_.rbegin(); it != modules_.rend(); ++it) cur = (*it)->backward(cur);
    return cur;
  }
  void collect_params(std::vector<Param<S>*>& out) override {
    for (auto& m : modules_) m->collect_params(out);
  }
  void set_frozen(bool frozen) override {
    for (auto& m : modules_) m->set_frozen(frozen);
  }
  void set_norm_frozen(bool frozen) override {
    for (auto& m : modules_) m->set_norm_frozen(frozen);
  }

 private:
  std::vector<std::unique_ptr<Module<S>>> modules_;
};

/// Residual basic block: conv-bn-relu-conv-bn plus identity (or projection)
/// shortcut, joined by a final ReLU.
template <typename S>
class BasicBlock : public Module<S> {
 public:
  BasicBlock(const std::string& name, int in_c, int out_c, int stride)
      : conv1_(name + ".conv1", in_c, out_c, 3, stride, 1),
        bn1_(name + ".bn1", out_c),
        conv2_(name + ".conv2", out_c, out_c, 3, 1, 1),
        bn2_(name + ".bn2", out_c),
        has_projection_(stride != 1 || in_c != out_c) {
    if (has_projection_) {
      proj_conv_ = std::make_unique<Conv2d<S>>(name + ".proj", in_c, out_c, 1, stride, 0);
      proj_bn_ = std::make_unique<BatchNorm2d<S>>(name + ".proj_bn", out_c);
    }
  }

  void init_he(Rng& rng) {
    conv1_.init_he(rng);
    conv2_.init_he(rng);
    if (proj_conv_) proj_conv_->init_he(rng);
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) override {
    Tensor<S> main = relu1_.forward(bn1_.forward(conv1_.forward(x, train), train), train);
    main = bn2_.forward(conv2_.forward(main, train), train);
    Tensor<S> skip = x;
    if (has_projection_) skip = proj_bn_->forward(proj_conv_->forward(x, train), train);
    for (size_t i = 0; i < main.data.size(); ++i) main.data[i] += skip.data[i];
    return relu_out_.forward(main, train);
  }

  Tensor<S> backward(const Tensor<S>& gy) override {
    Tensor<S> g = relu_out_.backward(gy);
    Tensor<S> g_main = conv1_.backward(bn1_.backward(relu1_.backward(
        conv2_.backward(bn2_.backward(g)))));
    Tensor<S> g_skip = g;
    if (has_projection_) g_skip = proj_conv_->backward(proj_bn_->backward(g));
    for (size_t i = 0; i < g_main.data.size(); ++i) g_main.data[i] += g_skip.data[i];
    return g_main;
  }

  void collect_params(std::vector<Param<S>*>& out) override {
    conv1_.collect_params(out);
    bn1_.collect_params(out);
    conv2_.collect_params(out);
    bn2_.collect_params(out);
    if (has_projection_) {
      proj_conv_->collect_params(out);
      proj_bn_->collect_params(out);
    }
  }

  void set_frozen(bool frozen) override {
    conv1_.set_frozen(frozen);
    bn1_.set_frozen(frozen);
    conv2_.set_frozen(frozen);
    bn2_.set_frozen(frozen);
    if (has_projection_) {
      proj_conv_->set_frozen(frozen);
      proj_bn_->set_frozen(frozen);
    }
  }

  void set_norm_frozen(bool frozen) override {
    bn1_.set_norm_frozen(frozen);
    bn2_.set_norm_frozen(frozen);
    if (has_projection_) proj_bn_->set_norm_frozen(frozen);
  }

 private:
  Conv2d<S> conv1_;
  BatchNorm2d<S> bn1_;
  ReLU<S> relu1_;
  Conv2d<S> conv2_;
  BatchNorm2d<S> bn2_;
  ReLU<S> relu_out_;
  bool has_projection_;
  std::unique_ptr<Conv2d<S>> proj_conv_;
  std::unique_ptr<BatchNorm2d<S>> proj_bn_;
};

// --- Loss ------------------------------------------------------------------

/// Mean softmax cross-entropy over the batch. Fills dlogits with the
/// gradient of the mean loss; optionally reports argmax predictions.
template <typename S>
S softmax_cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels,
                        Tensor<S>* dlogits = nullptr, std::vector<int>* predictions = nullptr) {
  if (static_cast<int>(labels.size()) != logits.n)
    throw ArgumentError("labels/logits size mismatch");
  const int k = logits.c;
  if (dlogits) *dlogits = Tensor<S>(logits.n, k);
  if (predictions) predictions->assign(logits.n, 0);
  double total = 0.0;
  for (int i = 0; i < logits.n; ++i) {
    const S* row = logits.data.data() + static_cast<size_t>(i) * k;
    S maxv = row[0];
    int argmax = 0;
    for (int j = 1; j < k; ++j)
      if (row[j] > maxv) {
        maxv = row[j];
        argmax = j;
      }
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j] - maxv));
    int label = labels[i];
    if (label < 0 || label >= k) throw ArgumentError("label out of range");
    total += -(static_cast<double>(row[label] - maxv) - std::log(denom));
    if (predictions) (*predictions)[i] = argmax;
    if (dlogits) {
      S* grow = dlogits->data.data() + static_cast<size_t>(i) * k;
      for (int j = 0; j < k; ++j) {
        double p = std::exp(static_cast<double>(row[j] - maxv)) / denom;
        grow[j] = static_cast<S>((p - (j == label ? 1.0 : 0.0)) / logits.n);
      }
    }
  }
  return static_cast<S>(total / logits.n);
}

} // namespace patchdet::nn
