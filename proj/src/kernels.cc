// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tdc/kernels.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "tdc/error.h"

namespace tdc {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

thread_local std::uint64_t g_macs = 0;

MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

void require_sequence(const Tensor& x, const char* context) {
  require_rank(x, 2, context);
}

// Gathers padded, strided windows: cols[t, k * C + c] = x_pad[t * stride + k, c].
Tensor im2col(const Tensor& x, std::size_t kernel, std::size_t stride,
              Padding pad, std::size_t out_len) {
  const std::size_t len = x.rows();
  const std::size_t ch = x.cols();
  Tensor cols = Tensor::matrix(out_len, kernel * ch);
  for (std::size_t t = 0; t < out_len; ++t) {
    double* dst = cols.data() + t * kernel * ch;
    for (std::size_t k = 0; k < kernel; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k) -
                                 static_cast<std::ptrdiff_t>(pad.left);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      const double* row = x.data() + static_cast<std::size_t>(src) * ch;
      std::copy(row, row + ch, dst + k * ch);
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-adds window columns back onto a {len, C} tensor.
Tensor col2im(const Tensor& cols, std::size_t len, std::size_t ch,
              std::size_t kernel, std::size_t stride, Padding pad) {
  Tensor x = Tensor::matrix(len, ch);
  const std::size_t out_len = cols.rows();
  for (std::size_t t = 0; t < out_len; ++t) {
    const double* src = cols.data() + t * kernel * ch;
    for (std::size_t k = 0; k < kernel; ++k) {
      const std::ptrdiff_t dst = static_cast<std::ptrdiff_t>(t * stride + k) -
                                 static_cast<std::ptrdiff_t>(pad.left);
      if (dst < 0 || dst >= static_cast<std::ptrdiff_t>(len)) continue;
      double* row = x.data() + static_cast<std::size_t>(dst) * ch;
      for (std::size_t c = 0; c < ch; ++c) row[c] += src[k * ch + c];
    }
  }
  return x;
}

}  // namespace

MacTally::MacTally() : start_(g_macs) {}
MacTally::~MacTally() = default;
std::uint64_t MacTally::count() const { return g_macs - start_; }

namespace detail {
void add_macs(std::uint64_t n) { g_macs += n; }
}  // namespace detail

// ---------------------------------------------------------------- convolution

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel,
                                 std::size_t stride, Padding pad) {
  if (stride == 0) throw ConfigurationError("conv1d: stride must be positive");
  const std::size_t padded = length + pad.left + pad.right;
  if (kernel == 0 || kernel > padded) {
    throw DimensionError("conv1d: kernel length " + std::to_string(kernel) +
                         " exceeds padded input length " +
                         std::to_string(padded));
  }
  return (padded - kernel) / stride + 1;
}

Tensor conv1d(const Tensor& x, const Tensor& w, std::size_t stride,
              Padding pad) {
  require_sequence(x, "conv1d input");
  require_rank(w, 3, "conv1d weight");
  const std::size_t kernel = w.dim(0), c_in = w.dim(1), c_out = w.dim(2);
  if (x.cols() != c_in) {
    throw DimensionError("conv1d: input has " + std::to_string(x.cols()) +
                         " channels, weight expects " + std::to_string(c_in));
  }
  const std::size_t out_len =
      conv1d_output_length(x.rows(), kernel, stride, pad);
  const Tensor cols = im2col(x, kernel, stride, pad, out_len);
  Tensor y = Tensor::matrix(out_len, c_out);
  as_matrix(y, out_len, c_out).noalias() =
      as_matrix(cols, out_len, kernel * c_in) *
      as_matrix(w, kernel * c_in, c_out);
  detail::add_macs(out_len * kernel * c_in * c_out);
  return y;
}

ConvGrads conv1d_backward(const Tensor& x, const Tensor& w, std::size_t stride,
                          Padding pad, const Tensor& grad_out) {
  const std::size_t kernel = w.dim(0), c_in = w.dim(1), c_out = w.dim(2);
  const std::size_t out_len = grad_out.rows();
  const Tensor cols = im2col(x, kernel, stride, pad, out_len);
  ConvGrads g;
  g.weight = Tensor(w.shape());
  as_matrix(g.weight, kernel * c_in, c_out).noalias() =
      as_matrix(cols, out_len, kernel * c_in).transpose() *
      as_matrix(grad_out, out_len, c_out);
  Tensor grad_cols = Tensor::matrix(out_len, kernel * c_in);
  as_matrix(grad_cols, out_len, kernel * c_in).noalias() =
      as_matrix(grad_out, out_len, c_out) *
      as_matrix(w, kernel * c_in, c_out).transpose();
  g.input = col2im(grad_cols, x.rows(), c_in, kernel, stride, pad);
  return g;
}

Tensor conv1d_transposed(const Tensor& x, const Tensor& w, std::size_t stride) {
  require_sequence(x, "conv1d_transposed input");
  require_rank(w, 3, "conv1d_transposed weight");
  if (stride == 0) throw ConfigurationError("conv1d_transposed: zero stride");
  const std::size_t kernel = w.dim(0), c_out = w.dim(1), c_in = w.dim(2);
  if (x.cols() != c_in) {
    throw DimensionError("conv1d_transposed: input has " +
                         std::to_string(x.cols()) + " channels, weight expects " +
                         std::to_string(c_in));
  }
  const std::size_t len = x.rows();
  if (len == 0) throw DimensionError("conv1d_transposed: empty input");
  Tensor cols = Tensor::matrix(len, kernel * c_out);
  as_matrix(cols, len, kernel * c_out).noalias() =
      as_matrix(x, len, c_in) * as_matrix(w, kernel * c_out, c_in).transpose();
  detail::add_macs(len * kernel * c_in * c_out);
  return col2im(cols, (len - 1) * stride + kernel, c_out, kernel, stride, {});
}

ConvGrads conv1d_transposed_backward(const Tensor& x, const Tensor& w,
                                     std::size_t stride,
                                     const Tensor& grad_out) {
  const std::size_t kernel = w.dim(0), c_out = w.dim(1), c_in = w.dim(2);
  const std::size_t len = x.rows();
  const Tensor grad_cols = im2col(grad_out, kernel, stride, {}, len);
  ConvGrads g;
  g.input = Tensor::matrix(len, c_in);
  as_matrix(g.input, len, c_in).noalias() =
      as_matrix(grad_cols, len, kernel * c_out) *
      as_matrix(w, kernel * c_out, c_in);
  g.weight = Tensor(w.shape());
  as_matrix(g.weight, kernel * c_out, c_in).noalias() =
      as_matrix(grad_cols, len, kernel * c_out).transpose() *
      as_matrix(x, len, c_in);
  return g;
}

Padding same_padding(std::size_t kernel) {
  const std::size_t total = kernel == 0 ? 0 : kernel - 1;
  return {total / 2, total - total / 2};
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, Padding pad) {
  require_sequence(x, "depthwise_conv1d input");
  require_rank(w, 2, "depthwise_conv1d weight");
  const std::size_t kernel = w.dim(0), ch = w.dim(1);
  if (x.cols() != ch) throw DimensionError("depthwise_conv1d: channel mismatch");
  const std::size_t len = x.rows();
  const std::size_t out_len = conv1d_output_length(len, kernel, 1, pad);
  Tensor y = Tensor::matrix(out_len, ch);
  for (std::size_t t = 0; t < out_len; ++t) {
    double* out = y.data() + t * ch;
    for (std::size_t k = 0; k < kernel; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) -
                                 static_cast<std::ptrdiff_t>(pad.left);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      const double* in = x.data() + static_cast<std::size_t>(src) * ch;
      const double* wk = w.data() + k * ch;
      for (std::size_t c = 0; c < ch; ++c) out[c] += in[c] * wk[c];
    }
  }
  detail::add_macs(out_len * kernel * ch);
  return y;
}

ConvGrads depthwise_conv1d_backward(const Tensor& x, const Tensor& w,
                                    Padding pad, const Tensor& grad_out) {
  const std::size_t kernel = w.dim(0), ch = w.dim(1);
  const std::size_t len = x.rows();
  const std::size_t out_len = grad_out.rows();
  ConvGrads g{Tensor::matrix(len, ch), Tensor(w.shape())};
  for (std::size_t t = 0; t < out_len; ++t) {
    const double* go = grad_out.data() + t * ch;
    for (std::size_t k = 0; k < kernel; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) -
                                 static_cast<std::ptrdiff_t>(pad.left);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      const std::size_t s = static_cast<std::size_t>(src) * ch;
      const double* in = x.data() + s;
      double* gi = g.input.data() + s;
      const double* wk = w.data() + k * ch;
      double* gw = g.weight.data() + k * ch;
      for (std::size_t c = 0; c < ch; ++c) {
        gi[c] += go[c] * wk[c];
        gw[c] += go[c] * in[c];
      }
    }
  }
  return g;
}

// ------------------------------------------------------------------- linear

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_sequence(x, "linear input");
  require_rank(w, 2, "linear weight");
  const std::size_t len = x.rows(), c_in = w.dim(0), c_out = w.dim(1);
  if (x.cols() != c_in) {
    throw DimensionError("linear: input has " + std::to_string(x.cols()) +
                         " channels, weight expects " + std::to_string(c_in));
  }
  Tensor y = Tensor::matrix(len, c_out);
  auto ym = as_matrix(y, len, c_out);
  ym.noalias() = as_matrix(x, len, c_in) * as_matrix(w, c_in, c_out);
  if (!bias.empty()) {
    if (bias.size() != c_out) throw DimensionError("linear: bias size mismatch");
    ym.rowwise() += as_matrix(bias, 1, c_out).row(0);
  }
  detail::add_macs(len * c_in * c_out);
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& w, bool has_bias,
                            const Tensor& grad_out) {
  const std::size_t len = x.rows(), c_in = w.dim(0), c_out = w.dim(1);
  LinearGrads g;
  g.input = Tensor::matrix(len, c_in);
  as_matrix(g.input, len, c_in).noalias() =
      as_matrix(grad_out, len, c_out) * as_matrix(w, c_in, c_out).transpose();
  g.weight = Tensor(w.shape());
  as_matrix(g.weight, c_in, c_out).noalias() =
      as_matrix(x, len, c_in).transpose() * as_matrix(grad_out, len, c_out);
  if (has_bias) {
    g.bias = Tensor({c_out});
    as_matrix(g.bias, 1, c_out).row(0) =
        as_matrix(grad_out, len, c_out).colwise().sum();
  }
  return g;
}

// ---------------------------------------------------------------- attention

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads, const Tensor& rel_bias,
                 AttentionCache* cache) {
  require_sequence(q, "attention queries");
  require_same_shape(q, k, "attention keys");
  require_same_shape(q, v, "attention values");
  const std::size_t len = q.rows(), dim = q.cols();
  if (heads == 0 || dim % heads != 0) {
    throw ConfigurationError("attention: channel dim " + std::to_string(dim) +
                             " not divisible by " + std::to_string(heads) +
                             " heads");
  }
  if (!rel_bias.empty() && rel_bias.shape() != Shape{heads, len, len}) {
    throw DimensionError("attention: relative bias shape " +
                         shape_string(rel_bias.shape()));
  }
  const std::size_t head_dim = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const auto n = static_cast<Eigen::Index>(len);
  const auto hd = static_cast<Eigen::Index>(head_dim);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(dim));

  Tensor out = Tensor::matrix(len, dim);
  Tensor probs({heads, len, len});
  RowMatrix scores(n, n);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * head_dim;
    ConstStridedMap qh(q.data() + off, n, hd, stride);
    ConstStridedMap kh(k.data() + off, n, hd, stride);
    ConstStridedMap vh(v.data() + off, n, hd, stride);
    scores.noalias() = (qh * kh.transpose()) * scale;
    if (!rel_bias.empty()) {
      scores += ConstMatMap(rel_bias.data() + h * len * len, n, n);
    }
    MatMap p(probs.data() + h * len * len, n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double peak = scores.row(i).maxCoeff();
      p.row(i) = (scores.row(i).array() - peak).exp();
      p.row(i) /= p.row(i).sum();
    }
    StridedMap oh(out.data() + off, n, hd, stride);
    oh.noalias() = p * vh;
  }
  detail::add_macs(2 * len * len * dim);
  if (cache) cache->probs = std::move(probs);
  return out;
}

AttentionGrads attention_backward(const Tensor& q, const Tensor& k,
                                  const Tensor& v, std::size_t heads,
                                  const AttentionCache& cache,
                                  const Tensor& grad_out) {
  const std::size_t len = q.rows(), dim = q.cols();
  const std::size_t head_dim = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const auto n = static_cast<Eigen::Index>(len);
  const auto hd = static_cast<Eigen::Index>(head_dim);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(dim));

  AttentionGrads g{Tensor::matrix(len, dim), Tensor::matrix(len, dim),
                   Tensor::matrix(len, dim), Tensor({heads, len, len})};
  RowMatrix grad_p(n, n);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * head_dim;
    ConstStridedMap qh(q.data() + off, n, hd, stride);
    ConstStridedMap kh(k.data() + off, n, hd, stride);
    ConstStridedMap vh(v.data() + off, n, hd, stride);
    ConstStridedMap goh(grad_out.data() + off, n, hd, stride);
    ConstMatMap p(cache.probs.data() + h * len * len, n, n);

    StridedMap(g.values.data() + off, n, hd, stride).noalias() =
        p.transpose() * goh;
    grad_p.noalias() = goh * vh.transpose();
    // Softmax Jacobian: dS = P .* (dP - rowsum(dP .* P)).
    MatMap grad_s(g.rel_bias.data() + h * len * len, n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double inner = grad_p.row(i).dot(p.row(i));
      grad_s.row(i) =
          p.row(i).array() * (grad_p.row(i).array() - inner);
    }
    StridedMap(g.queries.data() + off, n, hd, stride).noalias() =
        (grad_s * kh) * scale;
    StridedMap(g.keys.data() + off, n, hd, stride).noalias() =
        (grad_s.transpose() * qh) * scale;
  }
  return g;
}

// ------------------------------------------------------------ normalization

Tensor normalize(const Tensor& x, NormKind kind, double eps, NormCache* cache) {
  require_sequence(x, "normalize input");
  if (!(eps > 0.0)) throw ConfigurationError("normalize: eps must be positive");
  const std::size_t len = x.rows(), ch = x.cols();
  Tensor y(x.shape());
  std::vector<double> inv_std;
  if (kind == NormKind::kLayer) {
    inv_std.resize(len);
    for (std::size_t t = 0; t < len; ++t) {
      const auto row = x.row(t);
      double mean = 0.0;
      for (double v : row) mean += v;
      mean /= static_cast<double>(ch);
      double var = 0.0;
      for (double v : row) var += (v - mean) * (v - mean);
      var /= static_cast<double>(ch);
      const double is = 1.0 / std::sqrt(var + eps);
      auto out = y.row(t);
      for (std::size_t c = 0; c < ch; ++c) out[c] = (row[c] - mean) * is;
      inv_std[t] = is;
    }
  } else {
    std::vector<double> mean(ch, 0.0), var(ch, 0.0);
    for (std::size_t t = 0; t < len; ++t) {
      const auto row = x.row(t);
      for (std::size_t c = 0; c < ch; ++c) mean[c] += row[c];
    }
    for (double& m : mean) m /= static_cast<double>(len);
    for (std::size_t t = 0; t < len; ++t) {
      const auto row = x.row(t);
      for (std::size_t c = 0; c < ch; ++c) {
        const double d = row[c] - mean[c];
        var[c] += d * d;
      }
    }
    inv_std.resize(ch);
    for (std::size_t c = 0; c < ch; ++c) {
      inv_std[c] = 1.0 / std::sqrt(var[c] / static_cast<double>(len) + eps);
    }
    for (std::size_t t = 0; t < len; ++t) {
      const auto row = x.row(t);
      auto out = y.row(t);
      for (std::size_t c = 0; c < ch; ++c) {
        out[c] = (row[c] - mean[c]) * inv_std[c];
      }
    }
  }
  if (cache) {
    cache->normalized = y;
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Tensor normalize_backward(NormKind kind, const NormCache& cache,
                          const Tensor& grad_out) {
  // dx = inv_std * (g - mean(g) - xhat * mean(g * xhat)) over the normalized axis.
  const Tensor& xhat = cache.normalized;
  const std::size_t len = xhat.rows(), ch = xhat.cols();
  Tensor gx(xhat.shape());
  if (kind == NormKind::kLayer) {
    for (std::size_t t = 0; t < len; ++t) {
      const auto g = grad_out.row(t);
      const auto xh = xhat.row(t);
      double mg = 0.0, mgx = 0.0;
      for (std::size_t c = 0; c < ch; ++c) {
        mg += g[c];
        mgx += g[c] * xh[c];
      }
      mg /= static_cast<double>(ch);
      mgx /= static_cast<double>(ch);
      auto out = gx.row(t);
      for (std::size_t c = 0; c < ch; ++c) {
        out[c] = cache.inv_std[t] * (g[c] - mg - xh[c] * mgx);
      }
    }
  } else {
    std::vector<double> mg(ch, 0.0), mgx(ch, 0.0);
    for (std::size_t t = 0; t < len; ++t) {
      const auto g = grad_out.row(t);
      const auto xh = xhat.row(t);
      for (std::size_t c = 0; c < ch; ++c) {
        mg[c] += g[c];
        mgx[c] += g[c] * xh[c];
      }
    }
    for (std::size_t c = 0; c < ch; ++c) {
      mg[c] /= static_cast<double>(len);
      mgx[c] /= static_cast<double>(len);
    }
    for (std::size_t t = 0; t < len; ++t) {
      const auto g = grad_out.row(t);
      const auto xh = xhat.row(t);
      auto out = gx.row(t);
      for (std::size_t c = 0; c < ch; ++c) {
        out[c] = cache.inv_std[c] * (g[c] - mg[c] - xh[c] * mgx[c]);
      }
    }
  }
  return gx;
}

Tensor channel_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  const std::size_t len = x.rows(), ch = x.cols();
  if (gamma.size() != ch || beta.size() != ch) {
    throw DimensionError("channel_affine: parameter size mismatch");
  }
  Tensor y(x.shape());
  for (std::size_t t = 0; t < len; ++t) {
    const auto in = x.row(t);
    auto out = y.row(t);
    for (std::size_t c = 0; c < ch; ++c) out[c] = in[c] * gamma[c] + beta[c];
  }
  return y;
}

// -------------------------------------------------------------- activations

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    g[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  }
  return g;
}

Tensor prelu(const Tensor& x, double slope) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
  }
  return y;
}

PreluGrads prelu_backward(const Tensor& x, double slope, const Tensor& grad_out) {
  PreluGrads g{Tensor(x.shape()), 0.0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > 0.0) {
      g.input[i] = grad_out[i];
    } else {
      g.input[i] = slope * grad_out[i];
      g.slope += x[i] * grad_out[i];
    }
  }
  return g;
}

Tensor silu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoid(x[i]);
  return y;
}

Tensor silu_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = sigmoid(x[i]);
    g[i] = grad_out[i] * s * (1.0 + x[i] * (1.0 - s));
  }
  return g;
}

Tensor glu(const Tensor& x) {
  require_sequence(x, "glu input");
  const std::size_t len = x.rows(), ch = x.cols();
  if (ch % 2 != 0) {
    throw DimensionError("glu: odd channel count " + std::to_string(ch));
  }
  const std::size_t half = ch / 2;
  Tensor y = Tensor::matrix(len, half);
  for (std::size_t t = 0; t < len; ++t) {
    const auto in = x.row(t);
    auto out = y.row(t);
    for (std::size_t c = 0; c < half; ++c) {
      out[c] = in[c] * sigmoid(in[half + c]);
    }
  }
  return y;
}

Tensor glu_backward(const Tensor& x, const Tensor& grad_out) {
  const std::size_t len = x.rows(), ch = x.cols(), half = ch / 2;
  Tensor g(x.shape());
  for (std::size_t t = 0; t < len; ++t) {
    const auto in = x.row(t);
    const auto go = grad_out.row(t);
    auto out = g.row(t);
    for (std::size_t c = 0; c < half; ++c) {
      const double s = sigmoid(in[half + c]);
      out[c] = go[c] * s;
      out[half + c] = go[c] * in[c] * s * (1.0 - s);
    }
  }
  return g;
}

}  // namespace tdc
