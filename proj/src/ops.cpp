#include "alood/ops.hpp"

#include <cmath>
#include <string>

#include "alood/error.hpp"

namespace alood {

namespace {

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " +
                       shape_to_string(a.shape()) + " and " +
                       shape_to_string(b.shape()));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got shape " +
                         shape_to_string(t.shape()));
  }
}

}  // namespace

RunningStats RunningStats::fresh(std::size_t channels) {
  return RunningStats{Tensor::filled({channels}, 0.0),
                      Tensor::filled({channels}, 1.0), false};
}

Var affine(Tape& tape, Var x, Var weight, Var bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(weight);
  const Tensor& bv = tape.value(bias);
  require_rank("affine", xv, 2);
  require_rank("affine", wv, 2);
  if (xv.dim(1) != wv.dim(0)) mismatch("affine", xv, wv);
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(1)) mismatch("affine", wv, bv);

  const std::size_t n = xv.dim(0), in = wv.dim(0), out = wv.dim(1);
  Tensor y({n, out});
  for (std::size_t r = 0; r < n; ++r) {
    double* yr = &y[r * out];
    for (std::size_t o = 0; o < out; ++o) yr[o] = bv[o];
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xv[r * in + i];
      if (xi == 0.0) continue;
      const double* wi = &wv[i * out];
      for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wi[o];
    }
  }

  const Tape* tp = &tape;
  return tape.record(
      std::move(y), {x, weight, bias},
      [tp, x, weight, n, in, out](const Tensor& gy, std::span<Tensor> g) {
        const Tensor& xv = tp->value(x);
        const Tensor& wv = tp->value(weight);
        Tensor& gx = g[0];
        Tensor& gw = g[1];
        Tensor& gb = g[2];
        for (std::size_t r = 0; r < n; ++r) {
          const double* gyr = &gy[r * out];
          for (std::size_t i = 0; i < in; ++i) {
            const double* wi = &wv[i * out];
            double* gwi = &gw[i * out];
            const double xi = xv[r * in + i];
            double acc = 0.0;
            for (std::size_t o = 0; o < out; ++o) {
              acc += gyr[o] * wi[o];
              gwi[o] += xi * gyr[o];
            }
            gx[r * in + i] = acc;
          }
          for (std::size_t o = 0; o < out; ++o) gb[o] += gyr[o];
        }
      });
}

Var conv3x3_same(Tape& tape, Var x, Var kernels, Var bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& kv = tape.value(kernels);
  const Tensor& bv = tape.value(bias);
  require_rank("conv3x3_same", xv, 3);
  require_rank("conv3x3_same", kv, 4);
  if (kv.dim(2) != 3 || kv.dim(3) != 3 || kv.dim(1) != xv.dim(0)) {
    mismatch("conv3x3_same", xv, kv);
  }
  if (bv.rank() != 1 || bv.dim(0) != kv.dim(0)) mismatch("conv3x3_same", kv, bv);

  const std::size_t cin = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const std::size_t cout = kv.dim(0);
  const std::size_t plane = h * w;

  // Visits every (output cell, input cell) pair of one kernel tap.
  auto for_tap = [h, w](std::size_t ky, std::size_t kx, auto&& fn) {
    const long dy = static_cast<long>(ky) - 1, dx = static_cast<long>(kx) - 1;
    const std::size_t i0 = dy < 0 ? 1 : 0, i1 = dy > 0 ? h - 1 : h;
    const std::size_t j0 = dx < 0 ? 1 : 0, j1 = dx > 0 ? w - 1 : w;
    for (std::size_t i = i0; i < i1; ++i) {
      const std::size_t si = static_cast<std::size_t>(static_cast<long>(i) + dy);
      for (std::size_t j = j0; j < j1; ++j) {
        fn(i * w + j, si * w + static_cast<std::size_t>(static_cast<long>(j) + dx));
      }
    }
  };

  Tensor y({cout, h, w});
  for (std::size_t co = 0; co < cout; ++co) {
    double* yc = &y[co * plane];
    for (std::size_t p = 0; p < plane; ++p) yc[p] = bv[co];
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* xc = &xv[ci * plane];
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const double k = kv[((co * cin + ci) * 3 + ky) * 3 + kx];
          if (k == 0.0) continue;
          for_tap(ky, kx, [&](std::size_t dst, std::size_t src) {
            yc[dst] += k * xc[src];
          });
        }
      }
    }
  }

  const Tape* tp = &tape;
  return tape.record(
      std::move(y), {x, kernels, bias},
      [tp, x, kernels, cin, cout, plane, for_tap](const Tensor& gy,
                                                  std::span<Tensor> g) {
        const Tensor& xv = tp->value(x);
        const Tensor& kv = tp->value(kernels);
        Tensor& gx = g[0];
        Tensor& gk = g[1];
        Tensor& gb = g[2];
        for (std::size_t co = 0; co < cout; ++co) {
          const double* gyc = &gy[co * plane];
          for (std::size_t p = 0; p < plane; ++p) gb[co] += gyc[p];
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* xc = &xv[ci * plane];
            double* gxc = &gx[ci * plane];
            for (std::size_t ky = 0; ky < 3; ++ky) {
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const std::size_t kidx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                const double k = kv[kidx];
                double acc = 0.0;
                for_tap(ky, kx, [&](std::size_t dst, std::size_t src) {
                  acc += gyc[dst] * xc[src];
                  gxc[src] += k * gyc[dst];
                });
                gk[kidx] += acc;
              }
            }
          }
        }
      });
}

Var batchnorm2d(Tape& tape, Var x, Var gamma, Var beta, RunningStats& stats,
                NormMode mode, const BatchNormOptions& options) {
  const Tensor& xv = tape.value(x);
  const Tensor& gv = tape.value(gamma);
  const Tensor& bv = tape.value(beta);
  require_rank("batchnorm2d", xv, 3);
  const std::size_t c = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  if (gv.shape() != Shape{c}) mismatch("batchnorm2d", xv, gv);
  if (bv.shape() != Shape{c}) mismatch("batchnorm2d", xv, bv);
  if (stats.mean.shape() != Shape{c} || stats.var.shape() != Shape{c}) {
    mismatch("batchnorm2d", xv, stats.mean);
  }

  Tensor mean({c}), inv_std({c});
  if (mode == NormMode::kTrain) {
    const double m = static_cast<double>(plane);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* xc = &xv[ch * plane];
      double mu = 0.0;
      for (std::size_t p = 0; p < plane; ++p) mu += xc[p];
      mu /= m;
      double var = 0.0;
      for (std::size_t p = 0; p < plane; ++p) var += (xc[p] - mu) * (xc[p] - mu);
      var /= m;
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + options.eps);
      const double unbiased = plane > 1 ? var * m / (m - 1.0) : var;
      stats.mean[ch] = (1.0 - options.momentum) * stats.mean[ch] + options.momentum * mu;
      stats.var[ch] = (1.0 - options.momentum) * stats.var[ch] + options.momentum * unbiased;
    }
    stats.initialized = true;
  } else {
    if (!stats.initialized) {
      throw NumericError("batchnorm2d: uninitialized running statistics");
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = stats.mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(stats.var[ch] + options.eps);
    }
  }

  Tensor xhat(xv.shape());
  Tensor y(xv.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t idx = ch * plane + p;
      xhat[idx] = (xv[idx] - mean[ch]) * inv_std[ch];
      y[idx] = gv[ch] * xhat[idx] + bv[ch];
    }
  }

  const Tape* tp = &tape;
  const bool train = mode == NormMode::kTrain;
  return tape.record(
      std::move(y), {x, gamma, beta},
      [tp, gamma, c, plane, train, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](const Tensor& gy, std::span<Tensor> g) {
        const Tensor& gv = tp->value(gamma);
        const double m = static_cast<double>(plane);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_gy = 0.0, sum_gy_xhat = 0.0;
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t idx = ch * plane + p;
            sum_gy += gy[idx];
            sum_gy_xhat += gy[idx] * xhat[idx];
          }
          g[1][ch] += sum_gy_xhat;
          g[2][ch] += sum_gy;
          const double scale = gv[ch] * inv_std[ch];
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t idx = ch * plane + p;
            g[0][idx] = train ? scale * (gy[idx] - sum_gy / m -
                                         xhat[idx] * sum_gy_xhat / m)
                              : scale * gy[idx];
          }
        }
      });
}

Var relu(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  const Tape* tp = &tape;
  return tape.record(std::move(y), {x},
                     [tp, x](const Tensor& gy, std::span<Tensor> g) {
                       const Tensor& xv = tp->value(x);
                       for (std::size_t i = 0; i < gy.size(); ++i) {
                         g[0][i] = xv[i] > 0.0 ? gy[i] : 0.0;
                       }
                     });
}

Var adaptive_max_pool_global(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  require_rank("adaptive_max_pool_global", xv, 3);
  const std::size_t c = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  Tensor y({c});
  std::vector<std::size_t> argmax(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::size_t best = 0;
    for (std::size_t p = 1; p < plane; ++p) {
      if (xv[ch * plane + p] > xv[ch * plane + best]) best = p;
    }
    argmax[ch] = ch * plane + best;
    y[ch] = xv[argmax[ch]];
  }
  return tape.record(std::move(y), {x},
                     [argmax = std::move(argmax)](const Tensor& gy,
                                                  std::span<Tensor> g) {
                       for (std::size_t ch = 0; ch < argmax.size(); ++ch) {
                         g[0][argmax[ch]] += gy[ch];
                       }
                     });
}

Var add(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (!av.same_shape(bv)) mismatch("add", av, bv);
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return tape.record(std::move(y), {a, b},
                     [](const Tensor& gy, std::span<Tensor> g) {
                       for (std::size_t i = 0; i < gy.size(); ++i) {
                         g[0][i] = gy[i];
                         g[1][i] = gy[i];
                       }
                     });
}

Var mul(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (!av.same_shape(bv)) mismatch("mul", av, bv);
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  const Tape* tp = &tape;
  return tape.record(std::move(y), {a, b},
                     [tp, a, b](const Tensor& gy, std::span<Tensor> g) {
                       const Tensor& av = tp->value(a);
                       const Tensor& bv = tp->value(b);
                       for (std::size_t i = 0; i < gy.size(); ++i) {
                         g[0][i] = gy[i] * bv[i];
                         g[1][i] = gy[i] * av[i];
                       }
                     });
}

Var sum(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  double total = 0.0;
  for (double v : xv.data()) total += v;
  return tape.record(Tensor::scalar(total), {x},
                     [](const Tensor& gy, std::span<Tensor> g) {
                       for (auto& v : g[0].data()) v = gy[0];
                     });
}

Var reshape(Tape& tape, Var x, Shape shape) {
  Tensor y = tape.value(x).reshaped(std::move(shape));
  return tape.record(std::move(y), {x},
                     [](const Tensor& gy, std::span<Tensor> g) {
                       for (std::size_t i = 0; i < gy.size(); ++i) g[0][i] = gy[i];
                     });
}

Var gather_cells(Tape& tape, Var x, const std::vector<Cell>& cells) {
  const Tensor& xv = tape.value(x);
  require_rank("gather_cells", xv, 3);
  const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  if (cells.empty()) throw DimensionError("gather_cells: no cells requested");
  std::vector<std::size_t> offsets;
  offsets.reserve(cells.size());
  for (const auto& cell : cells) {
    if (cell.row >= h || cell.col >= w) {
      throw DimensionError("gather_cells: cell (" + std::to_string(cell.row) +
                           ", " + std::to_string(cell.col) +
                           ") outside map " + shape_to_string(xv.shape()));
    }
    offsets.push_back(cell.row * w + cell.col);
  }
  const std::size_t n = cells.size(), plane = h * w;
  Tensor y({n, c});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t ch = 0; ch < c; ++ch) y[r * c + ch] = xv[ch * plane + offsets[r]];
  }
  return tape.record(std::move(y), {x},
                     [offsets = std::move(offsets), c, plane](
                         const Tensor& gy, std::span<Tensor> g) {
                       for (std::size_t r = 0; r < offsets.size(); ++r) {
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           g[0][ch * plane + offsets[r]] += gy[r * c + ch];
                         }
                       }
                     });
}

Var fuse(Tape& tape, Var obj, Var scene, double lambda) {
  const Tensor& ov = tape.value(obj);
  const Tensor& sv = tape.value(scene);
  if (sv.rank() != 1 || ov.rank() < 1 || ov.rank() > 2 ||
      ov.shape().back() != sv.dim(0)) {
    mismatch("fuse", ov, sv);
  }
  const std::size_t c = sv.dim(0), rows = ov.size() / c;
  Tensor y(ov.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      y[r * c + ch] = (1.0 - lambda) * ov[r * c + ch] + lambda * sv[ch];
    }
  }
  return tape.record(std::move(y), {obj, scene},
                     [lambda, rows, c](const Tensor& gy, std::span<Tensor> g) {
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           g[0][r * c + ch] = (1.0 - lambda) * gy[r * c + ch];
                           g[1][ch] += lambda * gy[r * c + ch];
                         }
                       }
                     });
}

Var concat_cols(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  require_rank("concat_cols", av, 2);
  require_rank("concat_cols", bv, 2);
  if (av.dim(0) != bv.dim(0)) mismatch("concat_cols", av, bv);
  const std::size_t n = av.dim(0), p = av.dim(1), q = bv.dim(1);
  Tensor y({n, p + q});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < p; ++j) y[r * (p + q) + j] = av[r * p + j];
    for (std::size_t j = 0; j < q; ++j) y[r * (p + q) + p + j] = bv[r * q + j];
  }
  return tape.record(std::move(y), {a, b},
                     [n, p, q](const Tensor& gy, std::span<Tensor> g) {
                       for (std::size_t r = 0; r < n; ++r) {
                         for (std::size_t j = 0; j < p; ++j) g[0][r * p + j] = gy[r * (p + q) + j];
                         for (std::size_t j = 0; j < q; ++j) g[1][r * q + j] = gy[r * (p + q) + p + j];
                       }
                     });
}

Var concat_rows(Tape& tape, const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const Tensor& first = tape.value(parts.front());
  require_rank("concat_rows", first, 2);
  const std::size_t cols = first.dim(1);
  std::size_t rows = 0;
  for (auto v : parts) {
    const Tensor& t = tape.value(v);
    require_rank("concat_rows", t, 2);
    if (t.dim(1) != cols) mismatch("concat_rows", first, t);
    rows += t.dim(0);
  }
  Tensor y({rows, cols});
  std::size_t offset = 0;
  for (auto v : parts) {
    const Tensor& t = tape.value(v);
    for (std::size_t i = 0; i < t.size(); ++i) y[offset + i] = t[i];
    offset += t.size();
  }
  return tape.record(std::move(y), parts,
                     [](const Tensor& gy, std::span<Tensor> g) {
                       std::size_t offset = 0;
                       for (auto& part : g) {
                         for (std::size_t i = 0; i < part.size(); ++i) part[i] = gy[offset + i];
                         offset += part.size();
                       }
                     });
}

}  // namespace alood
