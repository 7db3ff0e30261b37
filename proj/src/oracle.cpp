#include "ssd/oracle.hpp"

#include <cmath>
#include <sstream>

namespace ssd::oracle {

namespace {

struct Dims {
  std::size_t B, T, H, P, G, N;
};

Dims check_ssm_shapes(const Tensor<double>& x, const Tensor<double>& dt, const Tensor<double>& a,
                      const Tensor<double>& b, const Tensor<double>& c, const Tensor<double>& d) {
  if (x.rank() != 4 || b.rank() != 4) throw ShapeError("oracle: x must be (B,T,H,P) and B/C (B,T,G,N)");
  Dims s{x.dim(0), x.dim(1), x.dim(2), x.dim(3), b.dim(2), b.dim(3)};
  require_shape(dt, {s.B, s.T, s.H}, "oracle dt");
  require_shape(a, {s.H}, "oracle a");
  require_shape(b, {s.B, s.T, s.G, s.N}, "oracle B");
  require_shape(c, {s.B, s.T, s.G, s.N}, "oracle C");
  require_shape(d, {s.H}, "oracle D");
  if (s.G == 0 || s.H % s.G != 0) throw ShapeError("oracle: groups must divide heads");
  return s;
}

double ref_silu(double v) { return v / (1.0 + std::exp(-v)); }
double ref_softplus(double v) { return v > 20.0 ? v : std::log1p(std::exp(v)); }

}  // namespace

SequentialResult sequential_ssm(const Tensor<double>& x, const Tensor<double>& dt, const Tensor<double>& a,
                                const Tensor<double>& b, const Tensor<double>& c, const Tensor<double>& d,
                                const std::optional<Tensor<double>>& initial_state) {
  const Dims s = check_ssm_shapes(x, dt, a, b, c, d);
  SequentialResult out{Tensor<double>({s.B, s.T, s.H, s.P}), Tensor<double>({s.B, s.H, s.P, s.N})};
  if (initial_state) {
    require_shape(*initial_state, {s.B, s.H, s.P, s.N}, "oracle initial_state");
    out.final_state = *initial_state;
  }
  Tensor<double>& h = out.final_state;
  for (std::size_t bi = 0; bi < s.B; ++bi) {
    for (std::size_t t = 0; t < s.T; ++t) {
      for (std::size_t hi = 0; hi < s.H; ++hi) {
        const std::size_t g = hi / (s.H / s.G);
        const double step = dt(bi, t, hi);
        const double decay = std::exp(a(hi) * step);
        for (std::size_t p = 0; p < s.P; ++p) {
          double y = 0.0;
          for (std::size_t n = 0; n < s.N; ++n) {
            double& st = h(bi, hi, p, n);
            st = decay * st + step * b(bi, t, g, n) * x(bi, t, hi, p);
            y += c(bi, t, g, n) * st;
          }
          out.y(bi, t, hi, p) = y + d(hi) * x(bi, t, hi, p);
        }
      }
    }
  }
  return out;
}

Tensor<double> dense_ssm(const Tensor<double>& x, const Tensor<double>& dt, const Tensor<double>& a,
                         const Tensor<double>& b, const Tensor<double>& c, const Tensor<double>& d) {
  const Dims s = check_ssm_shapes(x, dt, a, b, c, d);
  if (s.T > kDenseMaxLen) throw InputError("dense_ssm: T must be <= 64");
  Tensor<double> y({s.B, s.T, s.H, s.P});
  std::vector<double> m(s.T * s.T);
  for (std::size_t bi = 0; bi < s.B; ++bi) {
    for (std::size_t hi = 0; hi < s.H; ++hi) {
      const std::size_t g = hi / (s.H / s.G);
      for (std::size_t t = 0; t < s.T; ++t) {
        for (std::size_t u = 0; u < s.T; ++u) {
          if (u > t) {
            m[t * s.T + u] = 0.0;
            continue;
          }
          double log_decay = 0.0;
          for (std::size_t k = u + 1; k <= t; ++k) log_decay += a(hi) * dt(bi, k, hi);
          double cb = 0.0;
          for (std::size_t n = 0; n < s.N; ++n) cb += c(bi, t, g, n) * b(bi, u, g, n);
          m[t * s.T + u] = std::exp(log_decay) * cb;
        }
      }
      for (std::size_t t = 0; t < s.T; ++t)
        for (std::size_t p = 0; p < s.P; ++p) {
          double acc = 0.0;
          for (std::size_t u = 0; u <= t; ++u) acc += m[t * s.T + u] * dt(bi, u, hi) * x(bi, u, hi, p);
          y(bi, t, hi, p) = acc + d(hi) * x(bi, t, hi, p);
        }
    }
  }
  return y;
}

std::string OracleReport::summary() const {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << "max_abs=" << max_abs_err << " max_rel=" << max_rel_err << " violations=" << violations
     << " worst=" << shape_str(worst_index) << (pass ? " PASS" : " FAIL");
  return os.str();
}

template <Real A, Real E>
OracleReport compare(const Tensor<A>& actual, const Tensor<E>& expected, double rtol, double atol) {
  if (actual.shape() != expected.shape()) {
    throw ShapeError("compare: shape " + shape_str(actual.shape()) + " vs " + shape_str(expected.shape()));
  }
  OracleReport rep;
  rep.rtol = rtol;
  rep.atol = atol;
  double worst_excess = -std::numeric_limits<double>::infinity();
  std::size_t worst_flat = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double av = actual[i], ev = expected[i];
    const double err = std::abs(av - ev);
    const double rel = ev != 0.0 ? err / std::abs(ev) : (err == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
    rep.max_abs_err = std::max(rep.max_abs_err, err);
    rep.max_rel_err = std::max(rep.max_rel_err, rel);
    const double excess = err - (atol + rtol * std::abs(ev));
    if (!(excess <= 0.0)) ++rep.violations;  // NaN counts as a violation
    if (excess > worst_excess || std::isnan(excess)) {
      worst_excess = std::isnan(excess) ? std::numeric_limits<double>::infinity() : excess;
      worst_flat = i;
    }
  }
  rep.pass = rep.violations == 0;
  rep.worst_index.resize(actual.rank());
  for (std::size_t ax = actual.rank(); ax-- > 0;) {
    rep.worst_index[ax] = worst_flat % actual.dim(ax);
    worst_flat /= actual.dim(ax);
  }
  return rep;
}

template OracleReport compare(const Tensor<float>&, const Tensor<float>&, double, double);
template OracleReport compare(const Tensor<float>&, const Tensor<double>&, double, double);
template OracleReport compare(const Tensor<double>&, const Tensor<float>&, double, double);
template OracleReport compare(const Tensor<double>&, const Tensor<double>&, double, double);

namespace {

// (rows, K) x (K, N)
std::vector<double> matmul(const std::vector<double>& x, std::size_t rows, const Tensor<double>& w) {
  const std::size_t K = w.dim(0), N = w.dim(1);
  std::vector<double> out(rows * N, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t n = 0; n < N; ++n) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += x[r * K + k] * w(k, n);
      out[r * N + n] = acc;
    }
  return out;
}

std::vector<double> rms(const std::vector<double>& x, std::size_t rows, const Tensor<double>& w, double eps) {
  const std::size_t D = w.size();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double ms = 0.0;
    for (std::size_t i = 0; i < D; ++i) ms += x[r * D + i] * x[r * D + i];
    const double scale = 1.0 / std::sqrt(ms / static_cast<double>(D) + eps);
    for (std::size_t i = 0; i < D; ++i) out[r * D + i] = x[r * D + i] * scale * w(i);
  }
  return out;
}

}  // namespace

Tensor<double> reference_block(const LayerParams<double>& layer, const Tensor<double>& hidden, const ModelConfig& cfg) {
  const std::size_t B = hidden.dim(0), T = hidden.dim(1), dm = cfg.d_model;
  const std::size_t di = cfg.d_inner(), cd = cfg.conv_dim(), H = cfg.n_heads(), P = cfg.head_dim;
  const std::size_t G = cfg.n_groups, N = cfg.d_state, k = cfg.conv_kernel, dproj = cfg.d_in_proj();
  const std::size_t rows = B * T;
  std::vector<double> hv(hidden.data().begin(), hidden.data().end());

  const std::vector<double> proj = matmul(rms(hv, rows, layer.input_norm_w, cfg.norm_eps), rows, layer.in_proj);

  // Causal conv + silu, straight from the definition.
  std::vector<double> conv(rows * cd);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t ch = 0; ch < cd; ++ch) {
        double acc = layer.conv_b(ch);
        for (std::size_t j = 0; j < k; ++j) {
          const long src = static_cast<long>(t) - static_cast<long>(k - 1) + static_cast<long>(j);
          if (src < 0) continue;
          acc += layer.conv_w(ch, j) * proj[(b * T + static_cast<std::size_t>(src)) * dproj + di + ch];
        }
        conv[(b * T + t) * cd + ch] = ref_silu(acc);
      }

  Tensor<double> x({B, T, H, P}), dt({B, T, H}), a({H}), bm({B, T, G, N}), cm({B, T, G, N});
  for (std::size_t h = 0; h < H; ++h) a(h) = -std::exp(layer.a_log(h));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < di; ++i) x[r * di + i] = conv[r * cd + i];
    for (std::size_t i = 0; i < G * N; ++i) {
      bm[r * G * N + i] = conv[r * cd + di + i];
      cm[r * G * N + i] = conv[r * cd + di + G * N + i];
    }
    for (std::size_t h = 0; h < H; ++h) {
      const double v = ref_softplus(proj[r * dproj + di + cd + h] + layer.dt_bias(h));
      dt[r * H + h] = std::min(std::max(v, cfg.dt_limits.min), cfg.dt_limits.max);
    }
  }
  const SequentialResult ssm = sequential_ssm(x, dt, a, bm, cm, layer.d_skip);

  // Gated norm: (y * silu(z)) normalised over d_inner.
  std::vector<double> gated(rows * di);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < di; ++i) gated[r * di + i] = ssm.y[r * di + i] * ref_silu(proj[r * dproj + i]);
  const std::vector<double> mixed = matmul(rms(gated, rows, layer.norm_w, cfg.norm_eps), rows, layer.out_proj);

  Tensor<double> out = hidden;
  for (std::size_t i = 0; i < rows * dm; ++i) out[i] += mixed[i];
  return out;
}

Tensor<double> reference_forward(const ModelParams<double>& params, const Tokens& tokens, const ModelConfig& cfg) {
  check_tokens(tokens, cfg);
  const std::size_t B = tokens.batch, T = tokens.length, dm = cfg.d_model, V = cfg.vocab_size;
  Tensor<double> hidden({B, T, dm});
  for (std::size_t i = 0; i < B * T; ++i)
    for (std::size_t j = 0; j < dm; ++j) hidden[i * dm + j] = params.embedding(tokens.ids[i], j);
  for (const auto& layer : params.layers) hidden = reference_block(layer, hidden, cfg);

  std::vector<double> hv(hidden.data().begin(), hidden.data().end());
  const std::vector<double> normed = rms(hv, B * T, params.final_norm_w, cfg.norm_eps);
  Tensor<double> logits({B, T, V});
  for (std::size_t r = 0; r < B * T; ++r)
    for (std::size_t v = 0; v < V; ++v) {
      double acc = 0.0;
      for (std::size_t j = 0; j < dm; ++j) acc += normed[r * dm + j] * params.embedding(v, j);
      logits[r * V + v] = acc;
    }
  return logits;
}

}  // namespace ssd::oracle
