#include "probact/layers.hpp"

#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <utility>

#include "probact/error.hpp"
#include "probact/rng.hpp"

namespace probact::nn {

namespace {

std::string fmt(const char* format, ...) {
  char buf[128];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

void require_rank4(const Tensor& x, const char* who) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(who) + ": expected NCHW input, got shape " +
                     shape_str(x.shape()));
  }
}

// One input sample gathered into a [C*K*K, Ho*Wo] column matrix (zero padded).
// Row r = (c*K + ki)*K + kj, column s = ho*Wo + wo.
void im2col(const real* x, std::size_t C, std::size_t H, std::size_t W,
            std::size_t K, std::size_t P, std::size_t Ho, std::size_t Wo,
            real* cols) {
  const std::size_t S = Ho * Wo;
  const auto rows = static_cast<std::int64_t>(C * K * K);
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::size_t c = static_cast<std::size_t>(r) / (K * K);
    const std::size_t ki = (static_cast<std::size_t>(r) / K) % K;
    const std::size_t kj = static_cast<std::size_t>(r) % K;
    real* row = cols + static_cast<std::size_t>(r) * S;
    const real* plane = x + c * H * W;
    for (std::size_t ho = 0; ho < Ho; ++ho) {
      const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(ho + ki) -
                                static_cast<std::ptrdiff_t>(P);
      real* orow = row + ho * Wo;
      if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(H)) {
        for (std::size_t wo = 0; wo < Wo; ++wo) orow[wo] = 0;
        continue;
      }
      const real* xrow = plane + static_cast<std::size_t>(hi) * W;
      for (std::size_t wo = 0; wo < Wo; ++wo) {
        const std::ptrdiff_t wi = static_cast<std::ptrdiff_t>(wo + kj) -
                                  static_cast<std::ptrdiff_t>(P);
        orow[wo] = (wi < 0 || wi >= static_cast<std::ptrdiff_t>(W))
                       ? real(0)
                       : xrow[static_cast<std::size_t>(wi)];
      }
    }
  }
}

struct ConvDims {
  std::size_t N, C, H, W, OC, K, P, Ho, Wo;
  std::size_t ckk() const { return C * K * K; }
  std::size_t span() const { return Ho * Wo; }
};

Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                    const ConvDims& d) {
  Tensor y = Tensor::zeros({d.N, d.OC, d.Ho, d.Wo});
  real* py = y.mutable_data();
  const real* px = x.data();
  const real* pw = w.data();
  const real* pb = b.data();
  const std::size_t ckk = d.ckk(), S = d.span();
#pragma omp parallel for schedule(static)
  for (std::int64_t n = 0; n < static_cast<std::int64_t>(d.N); ++n) {
    std::vector<real> cols(ckk * S);
    im2col(px + static_cast<std::size_t>(n) * d.C * d.H * d.W, d.C, d.H, d.W,
           d.K, d.P, d.Ho, d.Wo, cols.data());
    for (std::size_t oc = 0; oc < d.OC; ++oc) {
      real* orow = py + (static_cast<std::size_t>(n) * d.OC + oc) * S;
      const real bias = pb[oc];
      for (std::size_t s = 0; s < S; ++s) orow[s] = bias;
      const real* wrow = pw + oc * ckk;
      for (std::size_t r = 0; r < ckk; ++r) {
        const real wv = wrow[r];
        if (wv == 0) continue;
        const real* crow = cols.data() + r * S;
        for (std::size_t s = 0; s < S; ++s) orow[s] += wv * crow[s];
      }
    }
  }
  return y;
}

// Gradients. The weight gradient accumulates sample by sample (outer loop
// sequential, parallel over output channels) so the reduction order never
// depends on the thread count.
std::vector<Tensor> conv_backward(const Tensor& up, const Tensor& x,
                                  const Tensor& w, const ConvDims& d) {
  const std::size_t ckk = d.ckk(), S = d.span();
  const real* pu = up.data();
  const real* px = x.data();
  const real* pw = w.data();

  Tensor db = Tensor::zeros({d.OC});
  real* pdb = db.mutable_data();
#pragma omp parallel for schedule(static)
  for (std::int64_t oc = 0; oc < static_cast<std::int64_t>(d.OC); ++oc) {
    real acc = 0;
    for (std::size_t n = 0; n < d.N; ++n) {
      const real* urow = pu + (n * d.OC + static_cast<std::size_t>(oc)) * S;
      for (std::size_t s = 0; s < S; ++s) acc += urow[s];
    }
    pdb[oc] = acc;
  }

  Tensor dw = Tensor::zeros(w.shape());
  real* pdw = dw.mutable_data();
  {
    std::vector<real> cols(ckk * S);
    for (std::size_t n = 0; n < d.N; ++n) {
      im2col(px + n * d.C * d.H * d.W, d.C, d.H, d.W, d.K, d.P, d.Ho, d.Wo,
             cols.data());
#pragma omp parallel for schedule(static)
      for (std::int64_t oc = 0; oc < static_cast<std::int64_t>(d.OC); ++oc) {
        const real* urow = pu + (n * d.OC + static_cast<std::size_t>(oc)) * S;
        real* wrow = pdw + static_cast<std::size_t>(oc) * ckk;
        for (std::size_t r = 0; r < ckk; ++r) {
          const real* crow = cols.data() + r * S;
          real acc = 0;
          for (std::size_t s = 0; s < S; ++s) acc += urow[s] * crow[s];
          wrow[r] += acc;
        }
      }
    }
  }

  Tensor dx = Tensor::zeros(x.shape());
  real* pdx = dx.mutable_data();
#pragma omp parallel for schedule(static)
  for (std::int64_t n = 0; n < static_cast<std::int64_t>(d.N); ++n) {
    std::vector<real> gcols(ckk * S, real(0));
    for (std::size_t oc = 0; oc < d.OC; ++oc) {
      const real* urow = pu + (static_cast<std::size_t>(n) * d.OC + oc) * S;
      const real* wrow = pw + oc * ckk;
      for (std::size_t r = 0; r < ckk; ++r) {
        const real wv = wrow[r];
        if (wv == 0) continue;
        real* grow = gcols.data() + r * S;
        for (std::size_t s = 0; s < S; ++s) grow[s] += wv * urow[s];
      }
    }
    real* xplane = pdx + static_cast<std::size_t>(n) * d.C * d.H * d.W;
    for (std::size_t r = 0; r < ckk; ++r) {
      const std::size_t c = r / (d.K * d.K);
      const std::size_t ki = (r / d.K) % d.K;
      const std::size_t kj = r % d.K;
      const real* grow = gcols.data() + r * S;
      for (std::size_t ho = 0; ho < d.Ho; ++ho) {
        const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(ho + ki) -
                                  static_cast<std::ptrdiff_t>(d.P);
        if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(d.H)) continue;
        for (std::size_t wo = 0; wo < d.Wo; ++wo) {
          const std::ptrdiff_t wi = static_cast<std::ptrdiff_t>(wo + kj) -
                                    static_cast<std::ptrdiff_t>(d.P);
          if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(d.W)) continue;
          xplane[(c * d.H + static_cast<std::size_t>(hi)) * d.W +
                 static_cast<std::size_t>(wi)] += grow[ho * d.Wo + wo];
        }
      }
    }
  }
  return {std::move(dx), std::move(dw), std::move(db)};
}

}  // namespace

// --- Dense -----------------------------------------------------------------

Dense::Dense(std::size_t in, std::size_t out, std::uint64_t seed,
             std::uint64_t stream, std::string name)
    : weight_(name + ".weight", Tensor::xavier({in, out}, seed, stream)),
      bias_(name + ".bias", Tensor::zeros({out})) {}

Var Dense::forward(Tape& tape, Var x, const PassContext&) {
  Var w = tape.leaf(weight_);
  Var b = tape.leaf(bias_);
  return t_add(tape, t_matmul(tape, x, w), b);
}

void Dense::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

std::string Dense::describe() const {
  return fmt("dense(%zu->%zu)", weight_.value.extent(0),
             weight_.value.extent(1));
}

// --- Conv2d ----------------------------------------------------------------

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, std::size_t padding, std::uint64_t seed,
               std::uint64_t stream, std::string name)
    : weight_(name + ".weight",
              Tensor::xavier({out_channels, in_channels, kernel, kernel}, seed,
                             stream)),
      bias_(name + ".bias", Tensor::zeros({out_channels})),
      kernel_(kernel),
      padding_(padding) {
  if (kernel == 0) throw ArgumentError("conv kernel must be positive");
}

Var Conv2d::forward(Tape& tape, Var x, const PassContext&) {
  const Tensor& xv = tape.value(x);
  require_rank4(xv, "conv");
  if (xv.extent(1) != weight_.value.extent(1)) {
    throw ShapeError(fmt("conv: input has %zu channels, layer expects %zu",
                         xv.extent(1), weight_.value.extent(1)));
  }
  ConvDims d;
  d.N = xv.extent(0);
  d.C = xv.extent(1);
  d.H = xv.extent(2);
  d.W = xv.extent(3);
  d.OC = weight_.value.extent(0);
  d.K = kernel_;
  d.P = padding_;
  if (d.H + 2 * d.P < d.K || d.W + 2 * d.P < d.K) {
    throw ShapeError(fmt("conv: %zux%zu input too small for kernel %zu",
                         d.H, d.W, d.K));
  }
  d.Ho = d.H + 2 * d.P - d.K + 1;
  d.Wo = d.W + 2 * d.P - d.K + 1;

  Tensor y = conv_forward(xv, weight_.value, bias_.value, d);
  Var w = tape.leaf(weight_);
  Var b = tape.leaf(bias_);
  Tensor x_saved = xv;
  Tensor w_saved = weight_.value;
  return tape.record(std::move(y), {x, w, b},
                     [x_saved, w_saved, d](const Tensor& up) {
                       return conv_backward(up, x_saved, w_saved, d);
                     });
}

void Conv2d::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

std::string Conv2d::describe() const {
  return fmt("conv(%zu->%zu, k=%zu, pad=%zu)", weight_.value.extent(1),
             weight_.value.extent(0), kernel_, padding_);
}

// --- MaxPool2d ---------------------------------------------------------------

MaxPool2d::MaxPool2d(std::size_t kernel, std::size_t stride)
    : kernel_(kernel), stride_(stride) {
  if (kernel == 0 || stride == 0) {
    throw ArgumentError("pool kernel and stride must be positive");
  }
}

Var MaxPool2d::forward(Tape& tape, Var x, const PassContext&) {
  const Tensor& xv = tape.value(x);
  require_rank4(xv, "maxpool");
  const std::size_t N = xv.extent(0), C = xv.extent(1), H = xv.extent(2),
                    W = xv.extent(3);
  if (H < kernel_ || W < kernel_ || (H - kernel_) % stride_ != 0 ||
      (W - kernel_) % stride_ != 0) {
    throw ShapeError(fmt("maxpool: %zux%zu input not tileable by k=%zu s=%zu",
                         H, W, kernel_, stride_));
  }
  const std::size_t Ho = (H - kernel_) / stride_ + 1;
  const std::size_t Wo = (W - kernel_) / stride_ + 1;
  Tensor y = Tensor::zeros({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(N * C * Ho * Wo);
  real* py = y.mutable_data();
  const real* px = xv.data();
  const auto planes = static_cast<std::int64_t>(N * C);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const real* xp = px + static_cast<std::size_t>(p) * H * W;
    const std::size_t obase = static_cast<std::size_t>(p) * Ho * Wo;
    const std::size_t xbase = static_cast<std::size_t>(p) * H * W;
    for (std::size_t ho = 0; ho < Ho; ++ho) {
      for (std::size_t wo = 0; wo < Wo; ++wo) {
        std::size_t best = (ho * stride_) * W + wo * stride_;
        real bv = xp[best];
        for (std::size_t ki = 0; ki < kernel_; ++ki) {
          const std::size_t row = (ho * stride_ + ki) * W + wo * stride_;
          for (std::size_t kj = 0; kj < kernel_; ++kj) {
            if (xp[row + kj] > bv) {  // ties keep the first (smallest) index
              bv = xp[row + kj];
              best = row + kj;
            }
          }
        }
        py[obase + ho * Wo + wo] = bv;
        (*argmax)[obase + ho * Wo + wo] = xbase + best;
      }
    }
  }
  Shape in_shape = xv.shape();
  const std::size_t span = Ho * Wo;
  return tape.record(
      std::move(y), {x}, [argmax, in_shape, planes, span](const Tensor& up) {
        Tensor dx = Tensor::zeros(in_shape);
        real* pdx = dx.mutable_data();
        const real* pu = up.data();
#pragma omp parallel for schedule(static)
        for (std::int64_t p = 0; p < planes; ++p) {
          const std::size_t base = static_cast<std::size_t>(p) * span;
          for (std::size_t o = 0; o < span; ++o) {
            pdx[(*argmax)[base + o]] += pu[base + o];
          }
        }
        return std::vector<Tensor>{std::move(dx)};
      });
}

std::string MaxPool2d::describe() const {
  return fmt("maxpool(k=%zu, s=%zu)", kernel_, stride_);
}

// --- BatchNorm ---------------------------------------------------------------

BatchNorm::BatchNorm(std::size_t channels, std::string name, real eps,
                     real momentum)
    : gamma_(name + ".gamma", Tensor::full({channels}, 1)),
      beta_(name + ".beta", Tensor::zeros({channels})),
      running_mean_(Tensor::zeros({channels})),
      running_var_(Tensor::full({channels}, 1)),
      channels_(channels),
      eps_(eps),
      momentum_(momentum) {
  if (channels == 0) throw ArgumentError("batch norm needs channels > 0");
}

Var BatchNorm::forward(Tape& tape, Var x, const PassContext& ctx) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 2 && xv.rank() != 4) {
    throw ShapeError("batch norm: expected NF or NCHW input, got shape " +
                     shape_str(xv.shape()));
  }
  if (xv.extent(1) != channels_) {
    throw ShapeError(fmt("batch norm: input has %zu channels, layer has %zu",
                         xv.extent(1), channels_));
  }
  const std::size_t N = xv.extent(0);
  const std::size_t S = xv.rank() == 4 ? xv.extent(2) * xv.extent(3) : 1;
  const std::size_t C = channels_;
  const std::size_t m = N * S;
  const real* px = xv.data();

  Tensor mean_t = Tensor::zeros({C});
  Tensor inv_std_t = Tensor::zeros({C});
  real* pmean = mean_t.mutable_data();
  real* pinv = inv_std_t.mutable_data();

  if (ctx.training) {
    if (N < 2) {
      throw UsageError(
          "batch norm needs at least 2 samples per training batch");
    }
    Tensor var_t = Tensor::zeros({C});
    real* pvar = var_t.mutable_data();
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < static_cast<std::int64_t>(C); ++c) {
      double acc = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const real* row = px + (n * C + static_cast<std::size_t>(c)) * S;
        for (std::size_t s = 0; s < S; ++s) acc += row[s];
      }
      const double mu = acc / static_cast<double>(m);
      double vacc = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const real* row = px + (n * C + static_cast<std::size_t>(c)) * S;
        for (std::size_t s = 0; s < S; ++s) {
          const double dlt = static_cast<double>(row[s]) - mu;
          vacc += dlt * dlt;
        }
      }
      const double var = vacc / static_cast<double>(m);
      pmean[c] = static_cast<real>(mu);
      pvar[c] = static_cast<real>(var);
      pinv[c] = static_cast<real>(1.0 / std::sqrt(var + eps_));
    }
    // Exponential running stats (variance stored unbiased).
    real* rm = running_mean_.mutable_data();
    real* rv = running_var_.mutable_data();
    const real bias_fix =
        static_cast<real>(m) / static_cast<real>(m - 1);
    for (std::size_t c = 0; c < C; ++c) {
      rm[c] = (1 - momentum_) * rm[c] + momentum_ * pmean[c];
      rv[c] = (1 - momentum_) * rv[c] +
              momentum_ * var_t.data()[c] * bias_fix;
    }
  } else {
    const real* rm = running_mean_.data();
    const real* rv = running_var_.data();
    for (std::size_t c = 0; c < C; ++c) {
      pmean[c] = rm[c];
      pinv[c] = static_cast<real>(
          1.0 / std::sqrt(static_cast<double>(rv[c]) + eps_));
    }
  }

  Tensor xhat = Tensor::zeros(xv.shape());
  Tensor y = Tensor::zeros(xv.shape());
  real* pxh = xhat.mutable_data();
  real* py = y.mutable_data();
  const real* pg = gamma_.value.data();
  const real* pb = beta_.value.data();
  const auto planes = static_cast<std::int64_t>(N * C);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const std::size_t c = static_cast<std::size_t>(p) % C;
    const std::size_t off = static_cast<std::size_t>(p) * S;
    for (std::size_t s = 0; s < S; ++s) {
      const real xh = (px[off + s] - pmean[c]) * pinv[c];
      pxh[off + s] = xh;
      py[off + s] = pg[c] * xh + pb[c];
    }
  }

  Var g = tape.leaf(gamma_);
  Var b = tape.leaf(beta_);
  Tensor gamma_saved = gamma_.value;
  const bool training = ctx.training;
  return tape.record(
      std::move(y), {x, g, b},
      [xhat, inv_std_t, gamma_saved, N, C, S, training](const Tensor& up) {
        const std::size_t m = N * S;
        const real* pu = up.data();
        const real* pxh = xhat.data();
        const real* pinv = inv_std_t.data();
        const real* pg = gamma_saved.data();
        Tensor dx = Tensor::zeros(up.shape());
        Tensor dgamma = Tensor::zeros({C});
        Tensor dbeta = Tensor::zeros({C});
        real* pdx = dx.mutable_data();
        real* pdg = dgamma.mutable_data();
        real* pdb = dbeta.mutable_data();
#pragma omp parallel for schedule(static)
        for (std::int64_t c = 0; c < static_cast<std::int64_t>(C); ++c) {
          double sum_dy = 0, sum_dy_xh = 0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + static_cast<std::size_t>(c)) * S;
            for (std::size_t s = 0; s < S; ++s) {
              sum_dy += pu[off + s];
              sum_dy_xh += static_cast<double>(pu[off + s]) * pxh[off + s];
            }
          }
          pdg[c] = static_cast<real>(sum_dy_xh);
          pdb[c] = static_cast<real>(sum_dy);
          const double g_inv = static_cast<double>(pg[c]) * pinv[c];
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + static_cast<std::size_t>(c)) * S;
            for (std::size_t s = 0; s < S; ++s) {
              if (training) {
                // dx = g*inv/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
                pdx[off + s] = static_cast<real>(
                    g_inv / static_cast<double>(m) *
                    (static_cast<double>(m) * pu[off + s] - sum_dy -
                     static_cast<double>(pxh[off + s]) * sum_dy_xh));
              } else {
                // Running stats are constants in eval.
                pdx[off + s] = static_cast<real>(g_inv * pu[off + s]);
              }
            }
          }
        }
        return std::vector<Tensor>{std::move(dx), std::move(dgamma),
                                   std::move(dbeta)};
      });
}

void BatchNorm::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

std::string BatchNorm::describe() const {
  return fmt("batchnorm(%zu)", channels_);
}

// --- Dropout -----------------------------------------------------------------

Dropout::Dropout(real p, std::uint32_t site_id) : p_(p), site_id_(site_id) {
  if (!(p >= 0 && p < 1)) {
    throw ArgumentError("dropout rate must lie in [0, 1)");
  }
}

Var Dropout::forward(Tape& tape, Var x, const PassContext& ctx) {
  if (!ctx.training || p_ == 0) return x;
  const Tensor& xv = tape.value(x);
  const NoiseKey key{site_id_, ctx.pass_id, 0};
  Tensor u = sample_uniform(xv.shape(), key, ctx.noise_seed);
  Tensor factor = Tensor::zeros(xv.shape());
  real* pf = factor.mutable_data();
  const real* pu = u.data();
  const real keep_scale = real(1) / (real(1) - p_);
  const auto n = static_cast<std::int64_t>(xv.numel());
  const real p = p_;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    pf[i] = pu[i] >= p ? keep_scale : real(0);
  }
  Tensor y = mul(xv, factor);
  return tape.record(std::move(y), {x}, [factor](const Tensor& up) {
    return std::vector<Tensor>{mul(up, factor)};
  });
}

std::string Dropout::describe() const {
  return fmt("dropout(p=%g)", static_cast<double>(p_));
}

// --- Flatten -----------------------------------------------------------------

Var Flatten::forward(Tape& tape, Var x, const PassContext&) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() < 2) {
    throw ShapeError("flatten: expected a batched input, got shape " +
                     shape_str(xv.shape()));
  }
  if (xv.rank() == 2) return x;
  return t_reshape(tape, x, {xv.extent(0), xv.numel() / xv.extent(0)});
}

std::string Flatten::describe() const { return "flatten"; }

// --- SimpleActivation ----------------------------------------------------------

SimpleActivation::SimpleActivation(Kind kind) : kind_(kind) {}

Var SimpleActivation::forward(Tape& tape, Var x, const PassContext&) {
  const Tensor& xv = tape.value(x);
  Tensor y;
  switch (kind_) {
    case Kind::kRelu: y = relu(xv); break;
    case Kind::kLeakyRelu: y = leaky_relu(xv); break;
    case Kind::kSwish: y = swish(xv); break;
  }
  Tensor x_saved = xv;
  const Kind kind = kind_;
  return tape.record(std::move(y), {x}, [x_saved, kind](const Tensor& up) {
    Tensor dx;
    switch (kind) {
      case Kind::kRelu: dx = relu_backward(up, x_saved); break;
      case Kind::kLeakyRelu: dx = leaky_relu_backward(up, x_saved); break;
      case Kind::kSwish: dx = swish_backward(up, x_saved); break;
    }
    return std::vector<Tensor>{std::move(dx)};
  });
}

std::string SimpleActivation::describe() const {
  switch (kind_) {
    case Kind::kRelu: return "relu";
    case Kind::kLeakyRelu: return "leaky-relu";
    case Kind::kSwish: return "swish";
  }
  return "?";
}

// --- PRelu -------------------------------------------------------------------

PRelu::PRelu(Shape slope_shape, std::string name)
    : slope_(name + ".slope", Tensor::full(std::move(slope_shape), real(0.25))) {}

Var PRelu::forward(Tape& tape, Var x, const PassContext&) {
  const Tensor& xv = tape.value(x);
  Var s = tape.leaf(slope_);
  Tensor y = prelu(xv, slope_.value);
  Tensor x_saved = xv;
  Tensor slope_saved = slope_.value;
  return tape.record(std::move(y), {x, s},
                     [x_saved, slope_saved](const Tensor& up) {
                       PreluGrads g = prelu_backward(up, x_saved, slope_saved);
                       return std::vector<Tensor>{std::move(g.grad_x),
                                                  std::move(g.grad_slope)};
                     });
}

void PRelu::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&slope_);
}

std::string PRelu::describe() const {
  return fmt("prelu(%zu)", slope_.value.numel());
}

// --- ProbActLayer --------------------------------------------------------------

ProbActLayer::ProbActLayer(ProbActConfig config, Shape param_shape,
                           std::uint32_t site_id, std::uint64_t seed,
                           std::uint64_t stream, std::string name)
    : config_(config), site_id_(site_id) {
  if (!config.elementwise()) {
    throw UsageError("probact layer: shaped parameter requires an "
                     "element-wise mode");
  }
  own_param_ = Parameter(std::move(name),
                         Tensor::xavier(std::move(param_shape), seed, stream));
}

ProbActLayer::ProbActLayer(ProbActConfig config, std::uint32_t site_id)
    : config_(config), site_id_(site_id) {
  if (config.mode != ProbActMode::kFixed) {
    throw UsageError("probact layer: parameterless constructor is for "
                     "fixed sigma");
  }
  fixed_sigma_ = Tensor::scalar(config.fixed_sigma);
}

ProbActLayer::ProbActLayer(ProbActConfig config, Parameter* shared_sigma,
                           std::uint32_t site_id)
    : config_(config), shared_sigma_(shared_sigma), site_id_(site_id) {
  if (config.mode != ProbActMode::kSingle || shared_sigma == nullptr) {
    throw UsageError("probact layer: shared parameter requires single mode");
  }
}

const Tensor& ProbActLayer::param_value() const {
  switch (config_.mode) {
    case ProbActMode::kFixed: return fixed_sigma_;
    case ProbActMode::kSingle: return shared_sigma_->value;
    default: return own_param_.value;
  }
}

Var ProbActLayer::forward(Tape& tape, Var x, const PassContext& ctx) {
  const Tensor& xv = tape.value(x);
  const EvalMode mode =
      ctx.training ? EvalMode{EvalKind::kStochastic, 1} : ctx.eval_mode;
  const NoiseKey key{site_id_, ctx.pass_id, 0};
  Tensor pv = param_value();  // snapshot; storage is shared, not copied
  ProbActResult res =
      probact_forward(xv, config_, pv, key, ctx.noise_seed, mode);
  Tensor x_saved = xv;
  NoiseRecord rec = std::move(res.record);
  const ProbActConfig cfg = config_;

  if (!config_.trainable()) {
    return tape.record(
        std::move(res.y), {x}, [x_saved, rec, cfg, pv](const Tensor& up) {
          if (!rec.eps.defined()) {
            return std::vector<Tensor>{relu_backward(up, x_saved)};
          }
          ProbActGrads g = probact_backward(up, x_saved, rec, cfg, pv);
          return std::vector<Tensor>{std::move(g.grad_x)};
        });
  }

  Parameter& p =
      config_.mode == ProbActMode::kSingle ? *shared_sigma_ : own_param_;
  Var pvar = tape.leaf(p);
  return tape.record(
      std::move(res.y), {x, pvar},
      [x_saved, rec, cfg, pv](const Tensor& up) {
        if (!rec.eps.defined()) {
          // Mean output max(0,x) does not depend on sigma.
          return std::vector<Tensor>{relu_backward(up, x_saved),
                                     Tensor::zeros(pv.shape())};
        }
        ProbActGrads g = probact_backward(up, x_saved, rec, cfg, pv);
        return std::vector<Tensor>{std::move(g.grad_x),
                                   std::move(g.grad_sigma_or_k)};
      });
}

void ProbActLayer::collect_parameters(std::vector<Parameter*>& out) {
  // Fixed mode has no parameter; the shared single sigma is registered once
  // by its owner, not per site.
  if (config_.elementwise()) out.push_back(&own_param_);
}

Tensor ProbActLayer::current_sigma() const {
  switch (config_.mode) {
    case ProbActMode::kFixed: return fixed_sigma_;
    case ProbActMode::kSingle: return shared_sigma_->value;
    case ProbActMode::kElementwise: return own_param_.value;
    case ProbActMode::kElementwiseBounded:
      return bounded_sigma(own_param_.value, config_.alpha, config_.beta);
  }
  throw UsageError("probact layer: unknown mode");
}

const Tensor* ProbActLayer::raw_param() const {
  switch (config_.mode) {
    case ProbActMode::kFixed: return nullptr;
    case ProbActMode::kSingle: return &shared_sigma_->value;
    default: return &own_param_.value;
  }
}

std::string ProbActLayer::describe() const {
  switch (config_.mode) {
    case ProbActMode::kFixed:
      return fmt("probact(fixed sigma=%g)",
                 static_cast<double>(config_.fixed_sigma));
    case ProbActMode::kSingle: return "probact(single)";
    case ProbActMode::kElementwise: return "probact(elementwise)";
    case ProbActMode::kElementwiseBounded:
      return fmt("probact(bounded, alpha=%g beta=%g)",
                 static_cast<double>(config_.alpha),
                 static_cast<double>(config_.beta));
  }
  return "probact(?)";
}

}  // namespace probact::nn
