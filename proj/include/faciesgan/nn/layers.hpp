#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "faciesgan/rng.hpp"
#include "faciesgan/tensor.hpp"

namespace faciesgan::nn {

using faciesgan::Rng;
using faciesgan::Tensor;

template <typename T>
struct Param {
  std::string tag;
  Tensor<T> value;
  Tensor<T> grad;

  void init(std::vector<long> shape) {
    value = Tensor<T>(shape);
    grad = Tensor<T>(std::move(shape));
  }
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
};

// Registry of trainable parameters and persistent buffers, in a stable
// traversal order used by the optimizer, EMA and checkpoints.
template <typename T>
struct ParamRefs {
  std::vector<Param<T>*> params;
  std::vector<NamedTensor<T>> named_params;
  std::vector<NamedTensor<T>> buffers;

  void add_param(const std::string& prefix, const std::string& name, Param<T>& p) {
    p.tag = prefix + name;
    params.push_back(&p);
    named_params.push_back({p.tag, &p.value});
  }
  void add_buffer(const std::string& prefix, const std::string& name, Tensor<T>& t) {
    buffers.push_back({prefix + name, &t});
  }

  long param_count() const {
    long n = 0;
    for (const auto* p : params) n += p->value.numel();
    return n;
  }
  void zero_grads() {
    for (auto* p : params) p->grad.set_zero();
  }
};

template <typename T>
void xavier_uniform(Tensor<T>& w, long fan_in, long fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (long i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.uniform(-limit, limit));
}

// ---------------------------------------------------------------------------
// Spectral normalization of a weight matrix via power iteration. The left
// vector u persists across steps; gradients treat u and v as constants.
// ---------------------------------------------------------------------------
template <typename T>
struct SpectralNorm {
  Tensor<T> u;  // persistent, length rows
  Tensor<T> v;  // cached right vector, length cols
  T sigma = T(1);
  bool update_on_forward = true;

  static constexpr T kSigmaFloor = static_cast<T>(1e-12);

  void init(long rows, long cols, Rng& rng) {
    u = Tensor<T>({rows});
    v = Tensor<T>({cols});
    for (long i = 0; i < rows; ++i) u[i] = static_cast<T>(rng.normal());
    T n = u.vec().norm();
    if (n > 0) u.vec() /= n;
  }

  // One power iteration on W (rows x cols), updating u in place.
  void power_iteration(const Tensor<T>& w, long rows, long cols) {
    auto W = w.mat(rows, cols);
    auto U = u.vec();
    auto V = v.vec();
    V.noalias() = W.transpose() * U;
    T vn = V.norm();
    if (vn > kSigmaFloor) V /= vn;
    U.noalias() = W * V;
    T un = U.norm();
    if (un > kSigmaFloor) U /= un;
  }

  void refresh(const Tensor<T>& w, long rows, long cols, int iters) {
    for (int i = 0; i < iters; ++i) power_iteration(w, rows, cols);
  }

  // Computes wbar = w / sigma with sigma = u'Wv (floored). Runs one power
  // iteration first when update_on_forward is set.
  void apply(const Tensor<T>& w, long rows, long cols, Tensor<T>& wbar) {
    if (update_on_forward) power_iteration(w, rows, cols);
    sigma = u.vec().dot(w.mat(rows, cols) * v.vec());
    if (sigma < kSigmaFloor) sigma = kSigmaFloor;
    if (!wbar.same_shape(w)) wbar = Tensor<T>(w.shape());
    wbar.vec() = w.vec() / sigma;
  }

  // dL/dW from dL/dWbar (accumulates into g_w).
  void backward(const Tensor<T>& wbar, const Tensor<T>& g_wbar, long rows, long cols,
                Tensor<T>& g_w) {
    const T inner = g_wbar.vec().dot(wbar.vec());
    auto G = g_w.mat(rows, cols);
    G.noalias() += (g_wbar.mat(rows, cols) - inner * (u.vec() * v.vec().transpose())) / sigma;
  }
};

// Standalone operation: normalize `weight` (rows x cols) by the power-
// iteration estimate of its top singular value; u is updated in place.
template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, long rows, long cols, int iters,
                             Tensor<T>& u) {
  if (u.numel() != rows) throw std::invalid_argument("spectral_normalize: u must have length rows");
  {
    T n = u.vec().norm();
    if (n > 0) u.vec() /= n;
  }
  SpectralNorm<T> sn;
  sn.u = u;
  sn.v = Tensor<T>({cols});
  sn.update_on_forward = false;
  sn.refresh(weight, rows, cols, iters);
  Tensor<T> wbar;
  sn.apply(weight, rows, cols, wbar);
  u = sn.u;
  return wbar;
}

// ---------------------------------------------------------------------------
// Fully connected layer, optionally spectrally normalized.
// ---------------------------------------------------------------------------
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(long in, long out, bool use_sn, Rng& rng) : in_(in), out_(out), use_sn_(use_sn) {
    w_.init({out, in});
    b_.init({out});
    xavier_uniform(w_.value, in, out, rng);
    if (use_sn_) sn_.init(out, in, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    const long n = x.dim(0);
    x_ = x;
    const Tensor<T>& w_eff = effective_weight();
    Tensor<T> y({n, out_});
    y.mat(n, out_).noalias() = x.mat(n, in_) * w_eff.mat(out_, in_).transpose();
    y.mat(n, out_).rowwise() += b_.value.vec().transpose();
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, bool param_grads = true) {
    const long n = g.dim(0);
    const Tensor<T>& w_eff = use_sn_ ? wbar_ : w_.value;
    if (param_grads) {
      if (use_sn_) {
        Tensor<T> g_wbar({out_, in_});
        g_wbar.mat(out_, in_).noalias() = g.mat(n, out_).transpose() * x_.mat(n, in_);
        sn_.backward(wbar_, g_wbar, out_, in_, w_.grad);
      } else {
        w_.grad.mat(out_, in_).noalias() += g.mat(n, out_).transpose() * x_.mat(n, in_);
      }
      b_.grad.vec().noalias() += g.mat(n, out_).colwise().sum().transpose();
    }
    Tensor<T> dx({n, in_});
    dx.mat(n, in_).noalias() = g.mat(n, out_) * w_eff.mat(out_, in_);
    return dx;
  }

  void collect(const std::string& prefix, ParamRefs<T>& out) {
    out.add_param(prefix, "W", w_);
    out.add_param(prefix, "b", b_);
    if (use_sn_) out.add_buffer(prefix, "sn_u", sn_.u);
  }

  void set_sn_update(bool on) { sn_.update_on_forward = on; }
  void sn_refresh(int iters) {
    if (use_sn_) {
      sn_.refresh(w_.value, out_, in_, iters);
    }
  }

  long in_features() const { return in_; }
  long out_features() const { return out_; }
  Param<T>& weight() { return w_; }
  Param<T>& bias() { return b_; }

 private:
  const Tensor<T>& effective_weight() {
    if (!use_sn_) return w_.value;
    sn_.apply(w_.value, out_, in_, wbar_);
    return wbar_;
  }

  long in_ = 0, out_ = 0;
  bool use_sn_ = false;
  Param<T> w_, b_;
  SpectralNorm<T> sn_;
  Tensor<T> wbar_;
  Tensor<T> x_;
};

// ---------------------------------------------------------------------------
// im2col / col2im for stride-1 square kernels.
// cols layout: row = (c*k + ki)*k + kj, col = n*H*W + h*W + w.
// ---------------------------------------------------------------------------
template <typename T>
void im2col(const Tensor<T>& x, int k, int pad, Tensor<T>& cols) {
  const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long hw = H * W;
  const long rows = C * k * k;
  if (cols.numel() != rows * N * hw) cols = Tensor<T>({rows, N * hw});
#pragma omp parallel for collapse(2) schedule(static)
  for (long c = 0; c < C; ++c) {
    for (long n = 0; n < N; ++n) {
      for (int ki = 0; ki < k; ++ki) {
        for (int kj = 0; kj < k; ++kj) {
          const long row = (c * k + ki) * k + kj;
          T* dst = cols.data() + row * (N * hw) + n * hw;
          const T* src = x.data() + (n * C + c) * hw;
          for (long h = 0; h < H; ++h) {
            const long hh = h + ki - pad;
            T* drow = dst + h * W;
            if (hh < 0 || hh >= H) {
              std::fill(drow, drow + W, T(0));
              continue;
            }
            const T* srow = src + hh * W;
            for (long w = 0; w < W; ++w) {
              const long ww = w + kj - pad;
              drow[w] = (ww < 0 || ww >= W) ? T(0) : srow[ww];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const Tensor<T>& cols, int k, int pad, Tensor<T>& dx) {
  const long N = dx.dim(0), C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
  const long hw = H * W;
  dx.set_zero();
#pragma omp parallel for schedule(static)
  for (long n = 0; n < N; ++n) {
    for (long c = 0; c < C; ++c) {
      T* dst = dx.data() + (n * C + c) * hw;
      for (int ki = 0; ki < k; ++ki) {
        for (int kj = 0; kj < k; ++kj) {
          const long row = (c * k + ki) * k + kj;
          const T* src = cols.data() + row * (N * hw) + n * hw;
          for (long h = 0; h < H; ++h) {
            const long hh = h + ki - pad;
            if (hh < 0 || hh >= H) continue;
            T* drow = dst + hh * W;
            const T* srow = src + h * W;
            for (long w = 0; w < W; ++w) {
              const long ww = w + kj - pad;
              if (ww >= 0 && ww < W) drow[ww] += srow[w];
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Stride-1 convolution ("same" padding for 3x3, none for 1x1), optionally
// spectrally normalized.
// ---------------------------------------------------------------------------
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(long in_ch, long out_ch, int kernel, bool use_sn, Rng& rng)
      : cin_(in_ch), cout_(out_ch), k_(kernel), pad_(kernel / 2), use_sn_(use_sn) {
    w_.init({out_ch, in_ch, kernel, kernel});
    b_.init({out_ch});
    xavier_uniform(w_.value, in_ch * kernel * kernel, out_ch * kernel * kernel, rng);
    if (use_sn_) sn_.init(out_ch, in_ch * kernel * kernel, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    const long N = x.dim(0), H = x.dim(2), W = x.dim(3);
    if (x.dim(1) != cin_) throw std::invalid_argument("Conv2d: channel mismatch");
    n_ = N;
    h_ = H;
    w_dim_ = W;
    im2col(x, k_, pad_, cols_);
    const long rows = cin_ * k_ * k_, hw = H * W;
    const Tensor<T>& w_eff = effective_weight();
    auto wm = w_eff.mat(cout_, rows);
    Tensor<T> y({N, cout_, H, W});
#pragma omp parallel for schedule(static)
    for (long n = 0; n < N; ++n) {
      typename Tensor<T>::MatMap out_map(y.data() + n * cout_ * hw, cout_, hw);
      typename Tensor<T>::ConstMatMap col_map(cols_.data(), rows, N * hw);
      out_map.noalias() = wm * col_map.middleCols(n * hw, hw);
      out_map.colwise() += b_.value.vec();
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, bool param_grads = true) {
    const long N = n_, H = h_, W = w_dim_, hw = H * W;
    const long rows = cin_ * k_ * k_;
    const Tensor<T>& w_eff = use_sn_ ? wbar_ : w_.value;

    // Reorder g (N,Cout,H,W) -> (Cout, N*HW) for a single weight/input GEMM.
    if (gm_.numel() != cout_ * N * hw) gm_ = Tensor<T>({cout_, N * hw});
#pragma omp parallel for schedule(static)
    for (long n = 0; n < N; ++n)
      for (long co = 0; co < cout_; ++co)
        std::copy(g.data() + (n * cout_ + co) * hw, g.data() + (n * cout_ + co + 1) * hw,
                  gm_.data() + co * (N * hw) + n * hw);

    if (param_grads) {
      if (use_sn_) {
        Tensor<T> g_wbar({cout_, cin_, k_, k_});
        g_wbar.mat(cout_, rows).noalias() =
            gm_.mat(cout_, N * hw) * cols_.mat(rows, N * hw).transpose();
        sn_.backward(wbar_, g_wbar, cout_, rows, w_.grad);
      } else {
        w_.grad.mat(cout_, rows).noalias() +=
            gm_.mat(cout_, N * hw) * cols_.mat(rows, N * hw).transpose();
      }
      b_.grad.vec().noalias() += gm_.mat(cout_, N * hw).rowwise().sum();
    }

    Tensor<T> dcols({rows, N * hw});
    dcols.mat(rows, N * hw).noalias() = w_eff.mat(cout_, rows).transpose() * gm_.mat(cout_, N * hw);
    Tensor<T> dx({N, cin_, H, W});
    col2im(dcols, k_, pad_, dx);
    return dx;
  }

  void collect(const std::string& prefix, ParamRefs<T>& out) {
    out.add_param(prefix, "W", w_);
    out.add_param(prefix, "b", b_);
    if (use_sn_) out.add_buffer(prefix, "sn_u", sn_.u);
  }

  void set_sn_update(bool on) { sn_.update_on_forward = on; }
  void sn_refresh(int iters) {
    if (use_sn_) {
      sn_.refresh(w_.value, cout_, cin_ * k_ * k_, iters);
    }
  }

  long in_channels() const { return cin_; }
  long out_channels() const { return cout_; }
  Param<T>& weight() { return w_; }

 private:
  const Tensor<T>& effective_weight() {
    if (!use_sn_) return w_.value;
    sn_.apply(w_.value, cout_, cin_ * k_ * k_, wbar_);
    return wbar_;
  }

  long cin_ = 0, cout_ = 0;
  int k_ = 3, pad_ = 1;
  bool use_sn_ = false;
  Param<T> w_, b_;
  SpectralNorm<T> sn_;
  Tensor<T> wbar_;
  Tensor<T> cols_, gm_;
  long n_ = 0, h_ = 0, w_dim_ = 0;
};

// ---------------------------------------------------------------------------
// Conditional batch normalization. Batch statistics are shared across the
// mini-batch; scale and shift may depend on the per-sample condition y.
//   kUncond:     gamma_c,                     beta_c
//   kFixedScale: gamma_c,                     w_beta_c * y + b_beta_c
//   kStandard:   w_gamma_c * y + b_gamma_c,   w_beta_c * y + b_beta_c
// ---------------------------------------------------------------------------
enum class CbnVariant { kUncond, kFixedScale, kStandard };

template <typename T>
class BatchNormCond {
 public:
  BatchNormCond() = default;
  BatchNormCond(long channels, CbnVariant variant, T eps = static_cast<T>(1e-5),
                T momentum = static_cast<T>(0.1))
      : c_(channels), variant_(variant), eps_(eps), momentum_(momentum) {
    if (variant_ == CbnVariant::kStandard) {
      w_gamma_.init({channels});
      b_gamma_.init({channels});
      b_gamma_.value.fill(T(1));
    } else {
      gamma_.init({channels});
      gamma_.value.fill(T(1));
    }
    w_beta_.init({channels});
    b_beta_.init({channels});
    running_mean_ = Tensor<T>({channels});
    running_var_ = Tensor<T>({channels});
    running_var_.fill(T(1));
  }

  // y has one condition per sample; ignored by the unconditional variant.
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& y, bool train) {
    const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C != c_) throw std::invalid_argument("BatchNormCond: channel mismatch");
    if (variant_ != CbnVariant::kUncond && y.numel() != N)
      throw std::invalid_argument("BatchNormCond: one condition per sample required");
    if (train && N < 2)
      throw std::invalid_argument("BatchNormCond: batch of at least 2 required in training mode");
    const long hw = H * W;
    const long m = N * hw;
    train_ = train;
    y_ = y;
    if (!xhat_.same_shape(x)) xhat_ = Tensor<T>(x.shape());
    if (inv_std_.numel() != C) inv_std_ = Tensor<T>({C});

#pragma omp parallel for schedule(static)
    for (long c = 0; c < C; ++c) {
      double mean, var;
      if (train) {
        double sum = 0.0, sum2 = 0.0;
        for (long n = 0; n < N; ++n) {
          const T* p = x.data() + (n * C + c) * hw;
          for (long s = 0; s < hw; ++s) {
            sum += p[s];
            sum2 += static_cast<double>(p[s]) * p[s];
          }
        }
        mean = sum / static_cast<double>(m);
        var = std::max(0.0, sum2 / static_cast<double>(m) - mean * mean);
        running_mean_[c] = static_cast<T>((1.0 - momentum_) * running_mean_[c] + momentum_ * mean);
        running_var_[c] = static_cast<T>((1.0 - momentum_) * running_var_[c] + momentum_ * var);
      } else {
        mean = running_mean_[c];
        var = running_var_[c];
      }
      inv_std_[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps_)));
      for (long n = 0; n < N; ++n) {
        const T* p = x.data() + (n * C + c) * hw;
        T* q = xhat_.data() + (n * C + c) * hw;
        for (long s = 0; s < hw; ++s) q[s] = static_cast<T>((p[s] - mean) * inv_std_[c]);
      }
    }

    Tensor<T> out(x.shape());
#pragma omp parallel for schedule(static)
    for (long c = 0; c < C; ++c) {
      for (long n = 0; n < N; ++n) {
        const T yn = (variant_ == CbnVariant::kUncond) ? T(0) : y[n];
        const T g = gamma_of(c, yn);
        const T b = beta_of(c, yn);
        const T* q = xhat_.data() + (n * C + c) * hw;
        T* o = out.data() + (n * C + c) * hw;
        for (long s = 0; s < hw; ++s) o[s] = g * q[s] + b;
      }
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& g, bool param_grads = true) {
    const long N = xhat_.dim(0), C = xhat_.dim(1), hw = xhat_.dim(2) * xhat_.dim(3);
    const double m = static_cast<double>(N * hw);
    Tensor<T> dx(xhat_.shape());

#pragma omp parallel for schedule(static)
    for (long c = 0; c < C; ++c) {
      // Parameter gradient accumulators for this channel.
      double s_gx = 0, s_gxy = 0, s_g = 0, s_gy = 0;
      double sum_dxhat = 0, sum_dxhat_xhat = 0;
      for (long n = 0; n < N; ++n) {
        const T yn = (variant_ == CbnVariant::kUncond) ? T(0) : y_[n];
        const T gam = gamma_of(c, yn);
        const T* gp = g.data() + (n * C + c) * hw;
        const T* xp = xhat_.data() + (n * C + c) * hw;
        for (long s = 0; s < hw; ++s) {
          const double gv = gp[s];
          const double xv = xp[s];
          s_gx += gv * xv;
          s_g += gv;
          if (variant_ == CbnVariant::kStandard) s_gxy += gv * xv * yn;
          if (variant_ != CbnVariant::kUncond) s_gy += gv * yn;
          const double dxhat = gv * gam;
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xv;
        }
      }
      if (param_grads) {
        if (variant_ == CbnVariant::kStandard) {
          w_gamma_.grad[c] += static_cast<T>(s_gxy);
          b_gamma_.grad[c] += static_cast<T>(s_gx);
        } else {
          gamma_.grad[c] += static_cast<T>(s_gx);
        }
        if (variant_ == CbnVariant::kUncond) {
          b_beta_.grad[c] += static_cast<T>(s_g);
        } else {
          w_beta_.grad[c] += static_cast<T>(s_gy);
          b_beta_.grad[c] += static_cast<T>(s_g);
        }
      }
      for (long n = 0; n < N; ++n) {
        const T yn = (variant_ == CbnVariant::kUncond) ? T(0) : y_[n];
        const T gam = gamma_of(c, yn);
        const T* gp = g.data() + (n * C + c) * hw;
        const T* xp = xhat_.data() + (n * C + c) * hw;
        T* dp = dx.data() + (n * C + c) * hw;
        if (train_) {
          for (long s = 0; s < hw; ++s) {
            const double dxhat = static_cast<double>(gp[s]) * gam;
            dp[s] = static_cast<T>(inv_std_[c] *
                                   (dxhat - sum_dxhat / m - xp[s] * (sum_dxhat_xhat / m)));
          }
        } else {
          for (long s = 0; s < hw; ++s)
            dp[s] = static_cast<T>(static_cast<double>(gp[s]) * gam * inv_std_[c]);
        }
      }
    }
    return dx;
  }

  void collect(const std::string& prefix, ParamRefs<T>& out) {
    if (variant_ == CbnVariant::kStandard) {
      out.add_param(prefix, "w_gamma", w_gamma_);
      out.add_param(prefix, "b_gamma", b_gamma_);
    } else {
      out.add_param(prefix, "gamma", gamma_);
    }
    if (variant_ == CbnVariant::kUncond) {
      out.add_param(prefix, "beta", b_beta_);
    } else {
      out.add_param(prefix, "w_beta", w_beta_);
      out.add_param(prefix, "b_beta", b_beta_);
    }
    out.add_buffer(prefix, "running_mean", running_mean_);
    out.add_buffer(prefix, "running_var", running_var_);
  }

  CbnVariant variant() const { return variant_; }
  long channels() const { return c_; }
  Param<T>& gamma() { return gamma_; }
  Param<T>& w_beta() { return w_beta_; }
  Param<T>& b_beta() { return b_beta_; }
  Param<T>& w_gamma() { return w_gamma_; }
  Param<T>& b_gamma() { return b_gamma_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

 private:
  T gamma_of(long c, T y) const {
    switch (variant_) {
      case CbnVariant::kStandard:
        return w_gamma_.value[c] * y + b_gamma_.value[c];
      default:
        return gamma_.value[c];
    }
  }
  T beta_of(long c, T y) const {
    if (variant_ == CbnVariant::kUncond) return b_beta_.value[c];
    return w_beta_.value[c] * y + b_beta_.value[c];
  }

  long c_ = 0;
  CbnVariant variant_ = CbnVariant::kFixedScale;
  T eps_ = static_cast<T>(1e-5);
  T momentum_ = static_cast<T>(0.1);
  bool train_ = true;
  Param<T> gamma_, w_gamma_, b_gamma_, w_beta_, b_beta_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> xhat_, inv_std_, y_;
};

// ---------------------------------------------------------------------------
// Pointwise and pooling layers.
// ---------------------------------------------------------------------------
template <typename T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    mask_.assign(static_cast<size_t>(x.numel()), 0);
    Tensor<T> y(x.shape());
    for (long i = 0; i < x.numel(); ++i) {
      if (x[i] > 0) {
        y[i] = x[i];
        mask_[static_cast<size_t>(i)] = 1;
      }
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& g) {
    Tensor<T> dx(g.shape());
    for (long i = 0; i < g.numel(); ++i) dx[i] = mask_[static_cast<size_t>(i)] ? g[i] : T(0);
    return dx;
  }

 private:
  std::vector<uint8_t> mask_;
};

template <typename T>
class Tanh {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    out_ = Tensor<T>(x.shape());
    for (long i = 0; i < x.numel(); ++i) out_[i] = std::tanh(x[i]);
    return out_;
  }
  Tensor<T> backward(const Tensor<T>& g) {
    Tensor<T> dx(g.shape());
    for (long i = 0; i < g.numel(); ++i) dx[i] = g[i] * (T(1) - out_[i] * out_[i]);
    return dx;
  }

 private:
  Tensor<T> out_;
};

template <typename T>
class Upsample2x {  // nearest-neighbor
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y({N, C, 2 * H, 2 * W});
#pragma omp parallel for schedule(static)
    for (long nc = 0; nc < N * C; ++nc) {
      const T* src = x.data() + nc * H * W;
      T* dst = y.data() + nc * 4 * H * W;
      for (long h = 0; h < H; ++h) {
        for (long w = 0; w < W; ++w) {
          const T v = src[h * W + w];
          dst[(2 * h) * 2 * W + 2 * w] = v;
          dst[(2 * h) * 2 * W + 2 * w + 1] = v;
          dst[(2 * h + 1) * 2 * W + 2 * w] = v;
          dst[(2 * h + 1) * 2 * W + 2 * w + 1] = v;
        }
      }
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& g) {
    const long N = g.dim(0), C = g.dim(1), H2 = g.dim(2), W2 = g.dim(3);
    const long H = H2 / 2, W = W2 / 2;
    Tensor<T> dx({N, C, H, W});
#pragma omp parallel for schedule(static)
    for (long nc = 0; nc < N * C; ++nc) {
      const T* src = g.data() + nc * H2 * W2;
      T* dst = dx.data() + nc * H * W;
      for (long h = 0; h < H; ++h)
        for (long w = 0; w < W; ++w)
          dst[h * W + w] = src[(2 * h) * W2 + 2 * w] + src[(2 * h) * W2 + 2 * w + 1] +
                           src[(2 * h + 1) * W2 + 2 * w] + src[(2 * h + 1) * W2 + 2 * w + 1];
    }
    return dx;
  }
};

template <typename T>
class AvgPool2x {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 || W % 2) throw std::invalid_argument("AvgPool2x: spatial dims must be even");
    Tensor<T> y({N, C, H / 2, W / 2});
#pragma omp parallel for schedule(static)
    for (long nc = 0; nc < N * C; ++nc) {
      const T* src = x.data() + nc * H * W;
      T* dst = y.data() + nc * (H / 2) * (W / 2);
      for (long h = 0; h < H / 2; ++h)
        for (long w = 0; w < W / 2; ++w)
          dst[h * (W / 2) + w] =
              static_cast<T>(0.25) * (src[(2 * h) * W + 2 * w] + src[(2 * h) * W + 2 * w + 1] +
                                      src[(2 * h + 1) * W + 2 * w] + src[(2 * h + 1) * W + 2 * w + 1]);
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& g) {
    const long N = g.dim(0), C = g.dim(1), H = g.dim(2) * 2, W = g.dim(3) * 2;
    Tensor<T> dx({N, C, H, W});
#pragma omp parallel for schedule(static)
    for (long nc = 0; nc < N * C; ++nc) {
      const T* src = g.data() + nc * (H / 2) * (W / 2);
      T* dst = dx.data() + nc * H * W;
      for (long h = 0; h < H / 2; ++h) {
        for (long w = 0; w < W / 2; ++w) {
          const T v = static_cast<T>(0.25) * src[h * (W / 2) + w];
          dst[(2 * h) * W + 2 * w] = v;
          dst[(2 * h) * W + 2 * w + 1] = v;
          dst[(2 * h + 1) * W + 2 * w] = v;
          dst[(2 * h + 1) * W + 2 * w + 1] = v;
        }
      }
    }
    return dx;
  }
};

template <typename T>
class GlobalSumPool {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    const long N = x.dim(0), C = x.dim(1);
    hw_ = x.dim(2) * x.dim(3);
    h_ = x.dim(2);
    w_ = x.dim(3);
    Tensor<T> y({N, C});
    for (long nc = 0; nc < N * C; ++nc) {
      T acc = 0;
      const T* p = x.data() + nc * hw_;
      for (long s = 0; s < hw_; ++s) acc += p[s];
      y[nc] = acc;
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& g) {
    const long N = g.dim(0), C = g.dim(1);
    Tensor<T> dx({N, C, h_, w_});
    for (long nc = 0; nc < N * C; ++nc) {
      T* p = dx.data() + nc * hw_;
      for (long s = 0; s < hw_; ++s) p[s] = g[nc];
    }
    return dx;
  }

 private:
  long hw_ = 0, h_ = 0, w_ = 0;
};

// ---------------------------------------------------------------------------
// Self-attention over spatial positions with a zero-initialized residual
// gate: out = x + gate * (V(x) * softmax(Q(x)'K(x))).
// ---------------------------------------------------------------------------
template <typename T>
class SelfAttention {
 public:
  SelfAttention() = default;
  SelfAttention(long channels, bool use_sn, Rng& rng) : c_(channels) {
    dq_ = std::max<long>(1, channels / 8);
    wq_ = Conv1x1(dq_, channels, use_sn, rng);
    wk_ = Conv1x1(dq_, channels, use_sn, rng);
    wv_ = Conv1x1(channels, channels, use_sn, rng);
    gate_.init({1});
  }

  Tensor<T> forward(const Tensor<T>& x) {
    const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C != c_) throw std::invalid_argument("SelfAttention: channel mismatch");
    const long hw = H * W;
    x_ = x;
    wq_.apply_weight();
    wk_.apply_weight();
    wv_.apply_weight();
    if (q_.numel() != N * dq_ * hw) {
      q_ = Tensor<T>({N, dq_, hw});
      k_ = Tensor<T>({N, dq_, hw});
      v_ = Tensor<T>({N, c_, hw});
      o_ = Tensor<T>({N, c_, hw});
    }
    Tensor<T> y(x.shape());
    const T gate = gate_.value[0];
#pragma omp parallel for schedule(static)
    for (long n = 0; n < N; ++n) {
      typename Tensor<T>::ConstMatMap X(x.data() + n * C * hw, C, hw);
      typename Tensor<T>::MatMap Q(q_.data() + n * dq_ * hw, dq_, hw);
      typename Tensor<T>::MatMap K(k_.data() + n * dq_ * hw, dq_, hw);
      typename Tensor<T>::MatMap V(v_.data() + n * c_ * hw, c_, hw);
      typename Tensor<T>::MatMap O(o_.data() + n * c_ * hw, c_, hw);
      Q.noalias() = wq_.wm() * X;
      K.noalias() = wk_.wm() * X;
      V.noalias() = wv_.wm() * X;
      // A(i,j) = softmax_i(Q(:,i)'K(:,j)); O = V * A
      Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> S = Q.transpose() * K;
      softmax_columns(S);
      O.noalias() = V * S;
      typename Tensor<T>::MatMap Y(y.data() + n * C * hw, C, hw);
      Y = X + gate * O;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, bool param_grads = true) {
    const long N = g.dim(0), C = g.dim(1), H = g.dim(2), W = g.dim(3);
    const long hw = H * W;
    const T gate = gate_.value[0];
    Tensor<T> dx(g.shape());
    std::vector<double> dgate_partial(static_cast<size_t>(N), 0.0);
    // Per-image weight-gradient partials, reduced in index order afterwards
    // so results do not depend on thread scheduling.
    std::vector<Tensor<T>> dwq_n, dwk_n, dwv_n;
    if (param_grads) {
      dwq_n.assign(static_cast<size_t>(N), Tensor<T>({dq_, c_}));
      dwk_n.assign(static_cast<size_t>(N), Tensor<T>({dq_, c_}));
      dwv_n.assign(static_cast<size_t>(N), Tensor<T>({c_, c_}));
    }
#pragma omp parallel for schedule(static)
    for (long n = 0; n < N; ++n) {
      typename Tensor<T>::ConstMatMap X(x_.data() + n * C * hw, C, hw);
      typename Tensor<T>::ConstMatMap Q(q_.data() + n * dq_ * hw, dq_, hw);
      typename Tensor<T>::ConstMatMap K(k_.data() + n * dq_ * hw, dq_, hw);
      typename Tensor<T>::ConstMatMap V(v_.data() + n * c_ * hw, c_, hw);
      typename Tensor<T>::ConstMatMap O(o_.data() + n * c_ * hw, c_, hw);
      typename Tensor<T>::ConstMatMap G(g.data() + n * C * hw, C, hw);

      // Recompute attention weights (cheaper than caching HWxHW per image).
      Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> A = Q.transpose() * K;
      softmax_columns(A);

      dgate_partial[static_cast<size_t>(n)] = (G.array() * O.array()).sum();

      Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> gO = gate * G;
      Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> dV = gO * A.transpose();
      Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> dA = V.transpose() * gO;
      // softmax backward per column
      for (long j = 0; j < hw; ++j) {
        const T dot = A.col(j).dot(dA.col(j));
        dA.col(j) = (A.col(j).array() * (dA.col(j).array() - dot)).matrix();
      }
      Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> dQ = K * dA.transpose();
      Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> dK = Q * dA;

      typename Tensor<T>::MatMap DX(dx.data() + n * C * hw, C, hw);
      DX.noalias() = wq_.wm().transpose() * dQ;
      DX.noalias() += wk_.wm().transpose() * dK;
      DX.noalias() += wv_.wm().transpose() * dV;
      DX += G;  // residual

      if (param_grads) {
        dwq_n[static_cast<size_t>(n)].mat(dq_, c_).noalias() = dQ * X.transpose();
        dwk_n[static_cast<size_t>(n)].mat(dq_, c_).noalias() = dK * X.transpose();
        dwv_n[static_cast<size_t>(n)].mat(c_, c_).noalias() = dV * X.transpose();
      }
    }
    if (param_grads) {
      double dgate = 0;
      for (double v : dgate_partial) dgate += v;
      gate_.grad[0] += static_cast<T>(dgate);
      Tensor<T> dwq({dq_, c_}), dwk({dq_, c_}), dwv({c_, c_});
      for (long n = 0; n < N; ++n) {
        dwq.vec() += dwq_n[static_cast<size_t>(n)].vec();
        dwk.vec() += dwk_n[static_cast<size_t>(n)].vec();
        dwv.vec() += dwv_n[static_cast<size_t>(n)].vec();
      }
      wq_.backward_weight(dwq);
      wk_.backward_weight(dwk);
      wv_.backward_weight(dwv);
    }
    return dx;
  }

  void collect(const std::string& prefix, ParamRefs<T>& out) {
    wq_.collect(prefix + "q.", out);
    wk_.collect(prefix + "k.", out);
    wv_.collect(prefix + "v.", out);
    out.add_param(prefix, "gate", gate_);
  }

  void set_sn_update(bool on) {
    wq_.set_sn_update(on);
    wk_.set_sn_update(on);
    wv_.set_sn_update(on);
  }
  void sn_refresh(int iters) {
    wq_.sn_refresh(iters);
    wk_.sn_refresh(iters);
    wv_.sn_refresh(iters);
  }

  Param<T>& gate() { return gate_; }

 private:
  // Bias-free 1x1 projection with optional spectral norm, applied as a plain
  // matrix on the flattened spatial grid.
  struct Conv1x1 {
    Conv1x1() = default;
    Conv1x1(long out, long in, bool use_sn, Rng& rng) : rows(out), cols(in), sn_on(use_sn) {
      w.init({out, in});
      xavier_uniform(w.value, in, out, rng);
      if (use_sn) sn.init(out, in, rng);
    }
    void apply_weight() {
      if (sn_on)
        sn.apply(w.value, rows, cols, wbar);
      else
        wbar = w.value;
    }
    typename Tensor<T>::ConstMatMap wm() const { return wbar.mat(rows, cols); }
    void backward_weight(const Tensor<T>& g_wbar) {
      if (sn_on)
        sn.backward(wbar, g_wbar, rows, cols, w.grad);
      else
        w.grad.vec() += g_wbar.vec();
    }
    void collect(const std::string& prefix, ParamRefs<T>& out) {
      out.add_param(prefix, "W", w);
      if (sn_on) out.add_buffer(prefix, "sn_u", sn.u);
    }
    void set_sn_update(bool on) { sn.update_on_forward = on; }
    void sn_refresh(int iters) {
      if (sn_on) sn.refresh(w.value, rows, cols, iters);
    }

    long rows = 0, cols = 0;
    bool sn_on = false;
    Param<T> w;
    SpectralNorm<T> sn;
    Tensor<T> wbar;
  };

  static void softmax_columns(Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& s) {
    for (long j = 0; j < s.cols(); ++j) {
      const T mx = s.col(j).maxCoeff();
      s.col(j) = (s.col(j).array() - mx).exp();
      s.col(j) /= s.col(j).sum();
    }
  }

  long c_ = 0, dq_ = 0;
  Conv1x1 wq_, wk_, wv_;
  Param<T> gate_;
  Tensor<T> x_, q_, k_, v_, o_;
};

}  // namespace faciesgan::nn
