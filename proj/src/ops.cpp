#include "structssl/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace structssl::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Output columns [lo, hi) whose kernel tap kx lands inside a zero-padded row of width w.
std::pair<std::size_t, std::size_t> valid_range(std::size_t kx, std::size_t pad, std::size_t w) {
  return {kx < pad ? pad - kx : 0, std::min(w, w + pad - kx)};
}

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;  // per output axis, 0 where broadcast
  bool same = false;
};

Broadcast make_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t r = std::max(a.size(), b.size());
  bc.out.assign(r, 1);
  std::vector<std::size_t> da(r, 1), db(r, 1);
  std::copy(a.begin(), a.end(), da.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), db.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  for (std::size_t i = 0; i < r; ++i) {
    if (da[i] != db[i] && da[i] != 1 && db[i] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b) +
                       " (axis " + std::to_string(i) + ": " + std::to_string(da[i]) + " vs " +
                       std::to_string(db[i]) + ")");
    }
    bc.out[i] = std::max(da[i], db[i]);
  }
  bc.stride_a.assign(r, 0);
  bc.stride_b.assign(r, 0);
  std::size_t sa = 1, sb = 1;
  for (std::size_t i = r; i-- > 0;) {
    if (da[i] != 1) bc.stride_a[i] = sa;
    if (db[i] != 1) bc.stride_b[i] = sb;
    sa *= da[i];
    sb *= db[i];
  }
  return bc;
}

// Calls fn(o, ia, ib) for every output element in row-major order.
template <typename Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
  const std::size_t n = numel(bc.out);
  if (bc.same) {
    for (std::size_t o = 0; o < n; ++o) fn(o, o, o);
    return;
  }
  const std::size_t r = bc.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  const std::size_t inner = bc.out[r - 1];
  const std::size_t inner_a = bc.stride_a[r - 1], inner_b = bc.stride_b[r - 1];
  for (std::size_t o = 0; o < n; o += inner) {
    for (std::size_t k = 0; k < inner; ++k) fn(o + k, ia + k * inner_a, ib + k * inner_b);
    // Advance the odometer over the outer axes.
    for (std::size_t ax = r - 1; ax-- > 0;) {
      ++idx[ax];
      ia += bc.stride_a[ax];
      ib += bc.stride_b[ax];
      if (idx[ax] < bc.out[ax]) break;
      ia -= bc.stride_a[ax] * idx[ax];
      ib -= bc.stride_b[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got shape " +
                     shape_str(t.shape()));
  }
}

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& x, Fwd fwd, Bwd bwd_factor) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  auto in = x.impl();
  auto result_vals = std::make_shared<std::vector<double>>(out);
  return make_result(x.shape(), std::move(out), {x}, [in, result_vals, bwd_factor](const GradContext& g) {
    const auto& xs = in->values;
    const auto& ys = *result_vals;
    for (std::size_t i = 0; i < g.out.size(); ++i) g.in[0][i] += g.out[i] * bwd_factor(xs[i], ys[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  auto bc = make_broadcast(a.shape(), b.shape(), "add");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(numel(bc.out));
  for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = av[ia] + bv[ib]; });
  return make_result(bc.out, std::move(out), {a, b}, [bc](const GradContext& g) {
    for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (!g.in[0].empty()) g.in[0][ia] += g.out[o];
      if (!g.in[1].empty()) g.in[1][ib] += g.out[o];
    });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto bc = make_broadcast(a.shape(), b.shape(), "sub");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(numel(bc.out));
  for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = av[ia] - bv[ib]; });
  return make_result(bc.out, std::move(out), {a, b}, [bc](const GradContext& g) {
    for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (!g.in[0].empty()) g.in[0][ia] += g.out[o];
      if (!g.in[1].empty()) g.in[1][ib] -= g.out[o];
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto bc = make_broadcast(a.shape(), b.shape(), "mul");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(numel(bc.out));
  for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = av[ia] * bv[ib]; });
  auto pa = a.impl(), pb = b.impl();
  return make_result(bc.out, std::move(out), {a, b}, [bc, pa, pb](const GradContext& g) {
    const auto& avs = pa->values;
    const auto& bvs = pb->values;
    for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (!g.in[0].empty()) g.in[0][ia] += g.out[o] * bvs[ib];
      if (!g.in[1].empty()) g.in[1][ib] += g.out[o] * avs[ia];
    });
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  const auto em = static_cast<Eigen::Index>(m), ek = static_cast<Eigen::Index>(k),
             en = static_cast<Eigen::Index>(n);
  MapMat(out.data(), em, en).noalias() = ConstMapMat(a.values().data(), em, ek) * ConstMapMat(b.values().data(), ek, en);
  auto pa = a.impl(), pb = b.impl();
  return make_result({m, n}, std::move(out), {a, b}, [pa, pb, em, ek, en](const GradContext& g) {
    ConstMapMat go(g.out.data(), em, en);
    if (!g.in[0].empty()) {
      MapMat(g.in[0].data(), em, ek).noalias() += go * ConstMapMat(pb->values.data(), ek, en).transpose();
    }
    if (!g.in[1].empty()) {
      MapMat(g.in[1].data(), ek, en).noalias() += ConstMapMat(pa->values.data(), em, ek).transpose() * go;
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != C) {
    throw ShapeError("conv2d: weight in-channels " + std::to_string(weight.dim(1)) + " != input channels " +
                     std::to_string(C));
  }
  if (weight.dim(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square with odd size, got " + shape_str(weight.shape()));
  }
  if (bias.dim(0) != O) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.dim(0)) + " != out channels " +
                     std::to_string(O));
  }
  const std::size_t pad = k / 2, HW = H * W, rows = C * k * k, cols = N * HW;
  // Uninitialized: every entry, padding included, is written below.
  std::shared_ptr<double[]> col(new double[rows * cols]);
  auto xv = x.values();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* dst = col.get() + ((c * k + ky) * k + kx) * cols;
        const auto [x_lo, x_hi] = valid_range(kx, pad, W);
        for (std::size_t n = 0; n < N; ++n) {
          const double* src = xv.data() + (n * C + c) * HW;
          for (std::size_t y = 0; y < H; ++y) {
            double* row = dst + n * HW + y * W;
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) {
              std::fill(row, row + W, 0.0);
              continue;
            }
            const double* s = src + static_cast<std::size_t>(sy) * W;
            std::fill(row, row + x_lo, 0.0);
            std::copy(s + (x_lo + kx - pad), s + (x_hi + kx - pad), row + x_lo);
            std::fill(row + x_hi, row + W, 0.0);
          }
        }
      }
    }
  }
  const auto eO = static_cast<Eigen::Index>(O), eR = static_cast<Eigen::Index>(rows),
             eC = static_cast<Eigen::Index>(cols);
  RowMat prod = ConstMapMat(weight.values().data(), eO, eR) * ConstMapMat(col.get(), eR, eC);
  std::vector<double> out(N * O * HW);
  auto bv = bias.values();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < O; ++o) {
      const double* src = prod.data() + o * cols + n * HW;
      double* dst = out.data() + (n * O + o) * HW;
      for (std::size_t i = 0; i < HW; ++i) dst[i] = src[i] + bv[o];
    }
  }
  auto pw = weight.impl();
  return make_result({N, O, H, W}, std::move(out), {x, weight, bias},
                     [=](const GradContext& g) {
                       RowMat gmat(eO, eC);
                       for (std::size_t n = 0; n < N; ++n) {
                         for (std::size_t o = 0; o < O; ++o) {
                           const double* src = g.out.data() + (n * O + o) * HW;
                           std::copy(src, src + HW, gmat.data() + o * cols + n * HW);
                         }
                       }
                       if (!g.in[1].empty()) {
                         MapMat(g.in[1].data(), eO, eR).noalias() += gmat * ConstMapMat(col.get(), eR, eC).transpose();
                       }
                       if (!g.in[2].empty()) {
                         for (std::size_t o = 0; o < O; ++o) g.in[2][o] += gmat.row(static_cast<Eigen::Index>(o)).sum();
                       }
                       if (!g.in[0].empty()) {
                         RowMat dcol = ConstMapMat(pw->values.data(), eO, eR).transpose() * gmat;
                         auto gx = g.in[0];
                         for (std::size_t c = 0; c < C; ++c) {
                           for (std::size_t ky = 0; ky < k; ++ky) {
                             for (std::size_t kx = 0; kx < k; ++kx) {
                               const double* src = dcol.data() + ((c * k + ky) * k + kx) * cols;
                               const auto [x_lo, x_hi] = valid_range(kx, pad, W);
                               for (std::size_t n = 0; n < N; ++n) {
                                 double* dst = gx.data() + (n * C + c) * HW;
                                 for (std::size_t y = 0; y < H; ++y) {
                                   const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
                                   if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
                                   const double* row = src + n * HW + y * W;
                                   double* d = dst + static_cast<std::size_t>(sy) * W;
                                   for (std::size_t xx = x_lo; xx < x_hi; ++xx) d[xx + kx - pad] += row[xx];
                                 }
                               }
                             }
                           }
                         }
                       }
                     });
}

Tensor avg_pool2x2(const Tensor& x) {
  require_rank(x, 4, "avg_pool2x2");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) throw ShapeError("avg_pool2x2: spatial dims must be even, got " + shape_str(x.shape()));
  const std::size_t Ho = H / 2, Wo = W / 2;
  std::vector<double> out(N * C * Ho * Wo);
  auto xv = x.values();
  for (std::size_t p = 0; p < N * C; ++p) {
    const double* src = xv.data() + p * H * W;
    double* dst = out.data() + p * Ho * Wo;
    for (std::size_t y = 0; y < Ho; ++y) {
      for (std::size_t xx = 0; xx < Wo; ++xx) {
        const double* s = src + 2 * y * W + 2 * xx;
        dst[y * Wo + xx] = 0.25 * (s[0] + s[1] + s[W] + s[W + 1]);
      }
    }
  }
  return make_result({N, C, Ho, Wo}, std::move(out), {x}, [=](const GradContext& g) {
    for (std::size_t p = 0; p < N * C; ++p) {
      const double* go = g.out.data() + p * Ho * Wo;
      double* gi = g.in[0].data() + p * H * W;
      for (std::size_t y = 0; y < Ho; ++y) {
        for (std::size_t xx = 0; xx < Wo; ++xx) {
          const double v = 0.25 * go[y * Wo + xx];
          double* s = gi + 2 * y * W + 2 * xx;
          s[0] += v;
          s[1] += v;
          s[W] += v;
          s[W + 1] += v;
        }
      }
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<double> out(N * C);
  auto xv = x.values();
  for (std::size_t p = 0; p < N * C; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < HW; ++i) s += xv[p * HW + i];
    out[p] = s / static_cast<double>(HW);
  }
  return make_result({N, C}, std::move(out), {x}, [=](const GradContext& g) {
    const double inv = 1.0 / static_cast<double>(HW);
    for (std::size_t p = 0; p < N * C; ++p) {
      for (std::size_t i = 0; i < HW; ++i) g.in[0][p * HW + i] += g.out[p] * inv;
    }
  });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 || std::isnan(v) ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp_max(const Tensor& x, double limit, std::size_t* clamped) {
  if (clamped) {
    *clamped = static_cast<std::size_t>(
        std::count_if(x.values().begin(), x.values().end(), [limit](double v) { return v > limit; }));
  }
  return unary(x, [limit](double v) { return v > limit ? limit : v; },
               [limit](double v, double) { return v > limit ? 0.0 : 1.0; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result({}, {s}, {x}, [](const GradContext& g) {
    for (auto& v : g.in[0]) v += g.out[0];
  });
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double n = static_cast<double>(x.numel());
  return make_result({}, {s / n}, {x}, [n](const GradContext& g) {
    for (auto& v : g.in[0]) v += g.out[0] / n;
  });
}

Tensor sum_last(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("sum_last: scalar input");
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  const std::size_t n = x.shape().back(), rows = x.numel() / n;
  std::vector<double> out(rows, 0.0);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r] += xv[r * n + j];
  }
  return make_result(out_shape, std::move(out), {x}, [rows, n](const GradContext& g) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < n; ++j) g.in[0][r * n + j] += g.out[r];
    }
  });
}

Tensor logsumexp(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("logsumexp: scalar input");
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  const std::size_t n = x.shape().back(), rows = x.numel() / n;
  std::vector<double> out(rows);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    out[r] = mx + std::log(s);
  }
  auto in = x.impl();
  auto lse = std::make_shared<std::vector<double>>(out);
  return make_result(out_shape, std::move(out), {x}, [in, lse, rows, n](const GradContext& g) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < n; ++j) {
        g.in[0][r * n + j] += g.out[r] * std::exp(in->values[r * n + j] - (*lse)[r]);
      }
    }
  });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("softmax: scalar input");
  const std::size_t n = x.shape().back(), rows = x.numel() / n;
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[r * n + j] = std::exp(row[j] - mx);
      s += out[r * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] /= s;
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result(x.shape(), std::move(out), {x}, [y, rows, n](const GradContext& g) {
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g.out[r * n + j] * (*y)[r * n + j];
      for (std::size_t j = 0; j < n; ++j) g.in[0][r * n + j] += (*y)[r * n + j] * (g.out[r * n + j] - dot);
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + shape_str(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch " + shape_str(p.shape()) + " vs " + shape_str(ref));
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i != axis && p.dim(i) != ref[i]) {
        throw ShapeError("concat: dim " + std::to_string(i) + " differs, " + shape_str(p.shape()) + " vs " + shape_str(ref));
      }
    }
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.numel() / outer);
  const std::size_t total = numel(out_shape) / outer;
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * widths[k], widths[k], out.data() + o * total + offset);
    }
    offset += widths[k];
  }
  return make_result(out_shape, std::move(out), parts, [outer, widths, total](const GradContext& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (!g.in[k].empty()) {
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = g.out.data() + o * total + off;
          double* dst = g.in[k].data() + o * widths[k];
          for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
        }
      }
      off += widths[k];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " has " + std::to_string(x.numel()) +
                     " elements, target " + shape_str(shape) + " has " + std::to_string(numel(shape)));
  }
  return make_result(std::move(shape), to_vec(x.values()), {x}, [](const GradContext& g) {
    for (std::size_t i = 0; i < g.out.size(); ++i) g.in[0][i] += g.out[i];
  });
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank()) throw ShapeError("narrow: axis out of range for " + shape_str(x.shape()));
  if (length == 0 || start + length > x.dim(axis)) {
    throw ShapeError("narrow: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                     ") exceeds dim " + std::to_string(x.dim(axis)));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t full = x.dim(axis) * inner, part = length * inner, off = start * inner;
  std::vector<double> out(outer * part);
  auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(xv.data() + o * full + off, part, out.data() + o * part);
  return make_result(out_shape, std::move(out), {x}, [=](const GradContext& g) {
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < part; ++i) g.in[0][o * full + off + i] += g.out[o * part + i];
    }
  });
}

Tensor index_select(const Tensor& x, const std::vector<std::size_t>& index) {
  if (x.rank() == 0) throw ShapeError("index_select: scalar input");
  if (index.empty()) throw ShapeError("index_select: empty index");
  const std::size_t rows = x.dim(0), width = x.numel() / rows;
  for (auto i : index) {
    if (i >= rows) throw ShapeError("index_select: index " + std::to_string(i) + " out of range " + std::to_string(rows));
  }
  Shape out_shape = x.shape();
  out_shape[0] = index.size();
  std::vector<double> out(index.size() * width);
  auto xv = x.values();
  for (std::size_t r = 0; r < index.size(); ++r) std::copy_n(xv.data() + index[r] * width, width, out.data() + r * width);
  return make_result(out_shape, std::move(out), {x}, [index, width](const GradContext& g) {
    for (std::size_t r = 0; r < index.size(); ++r) {
      for (std::size_t i = 0; i < width; ++i) g.in[0][index[r] * width + i] += g.out[r * width + i];
    }
  });
}

Tensor segment_sum(const Tensor& x, const std::vector<std::size_t>& segment, std::size_t num_segments) {
  if (x.rank() == 0) throw ShapeError("segment_sum: scalar input");
  const std::size_t rows = x.dim(0), width = x.numel() / rows;
  if (segment.size() != rows) {
    throw ShapeError("segment_sum: " + std::to_string(segment.size()) + " segment ids for " + std::to_string(rows) + " rows");
  }
  for (auto s : segment) {
    if (s >= num_segments) throw ShapeError("segment_sum: segment id " + std::to_string(s) + " >= " + std::to_string(num_segments));
  }
  Shape out_shape = x.shape();
  out_shape[0] = num_segments;
  std::vector<double> out(num_segments * width, 0.0);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < width; ++i) out[segment[r] * width + i] += xv[r * width + i];
  }
  return make_result(out_shape, std::move(out), {x}, [segment, width](const GradContext& g) {
    for (std::size_t r = 0; r < segment.size(); ++r) {
      for (std::size_t i = 0; i < width; ++i) g.in[0][r * width + i] += g.out[segment[r] * width + i];
    }
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mse: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto av = a.values(), bv = b.values();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double n = static_cast<double>(av.size());
  auto pa = a.impl(), pb = b.impl();
  return make_result({}, {s / n}, {a, b}, [pa, pb, n](const GradContext& g) {
    const double c = 2.0 * g.out[0] / n;
    for (std::size_t i = 0; i < pa->values.size(); ++i) {
      const double d = pa->values[i] - pb->values[i];
      if (!g.in[0].empty()) g.in[0][i] += c * d;
      if (!g.in[1].empty()) g.in[1][i] -= c * d;
    }
  });
}

}  // namespace structssl::ops
