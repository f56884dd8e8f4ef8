#include "fedalc/kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fedalc::kernels {

namespace {

using idx = std::ptrdiff_t;

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

// Range of output columns ow for which ow*stride + k - pad lands in [0, width).
struct Span {
  std::size_t lo, hi;
};
Span valid_outputs(std::size_t width, std::size_t out_w, std::size_t k, std::size_t stride, std::size_t pad) {
  const idx off = static_cast<idx>(k) - static_cast<idx>(pad);
  idx lo = off >= 0 ? 0 : (-off + static_cast<idx>(stride) - 1) / static_cast<idx>(stride);
  idx last = static_cast<idx>(width) - 1 - off;
  idx hi = last < 0 ? 0 : last / static_cast<idx>(stride) + 1;
  hi = std::min<idx>(hi, static_cast<idx>(out_w));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

void dense_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                   std::span<double> y, DenseDims d) {
  const std::size_t I = d.in, O = d.out;
  const bool par = d.batch * I * O >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (idx bi = 0; bi < static_cast<idx>(d.batch); ++bi) {
    double* yrow = y.data() + bi * O;
    const double* xrow = x.data() + bi * I;
    std::copy_n(b.data(), O, yrow);
    for (std::size_t i = 0; i < I; ++i) {
      const double xv = xrow[i];
      const double* wrow = w.data() + i * O;
      for (std::size_t o = 0; o < O; ++o) yrow[o] += xv * wrow[o];
    }
  }
}

void dense_backward(std::span<const double> x, std::span<const double> w, std::span<const double> gy,
                    std::span<double> gx, std::span<double> gw, std::span<double> gb, DenseDims d) {
  const std::size_t B = d.batch, I = d.in, O = d.out;
  const bool par = B * I * O >= kParallelWork;

  if (!gx.empty()) {
    // Row-wise axpy against the transposed weights keeps the inner loop free
    // of reductions.
    std::vector<double> wt(O * I);
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t o = 0; o < O; ++o) wt[o * I + i] = w[i * O + o];
#pragma omp parallel for schedule(static) if (par)
    for (idx bi = 0; bi < static_cast<idx>(B); ++bi) {
      double* gxrow = gx.data() + bi * I;
      const double* gyrow = gy.data() + bi * O;
      std::fill_n(gxrow, I, 0.0);
      for (std::size_t o = 0; o < O; ++o) {
        const double g = gyrow[o];
        const double* wtrow = wt.data() + o * I;
        for (std::size_t i = 0; i < I; ++i) gxrow[i] += g * wtrow[i];
      }
    }
  }

  if (!gw.empty()) {
#pragma omp parallel for schedule(static) if (par)
    for (idx i = 0; i < static_cast<idx>(I); ++i) {
      double* gwrow = gw.data() + i * O;
      std::fill_n(gwrow, O, 0.0);
      for (std::size_t bi = 0; bi < B; ++bi) {
        const double xv = x[bi * I + i];
        const double* gyrow = gy.data() + bi * O;
        for (std::size_t o = 0; o < O; ++o) gwrow[o] += xv * gyrow[o];
      }
    }
  }

  if (!gb.empty()) {
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t bi = 0; bi < B; ++bi)
      for (std::size_t o = 0; o < O; ++o) gb[o] += gy[bi * O + o];
  }
}

void conv2d_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                    std::span<double> y, ConvDims d) {
  const std::size_t C = d.in_ch, H = d.height, W = d.width, K = d.kernel, S = d.stride, P = d.pad;
  const std::size_t OC = d.out_ch, Ho = d.out_h(), Wo = d.out_w();
  const bool par = d.batch * OC * Ho * Wo * C * K * K >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (idx job = 0; job < static_cast<idx>(d.batch * OC); ++job) {
    const std::size_t bi = static_cast<std::size_t>(job) / OC, oc = static_cast<std::size_t>(job) % OC;
    double* yplane = y.data() + job * Ho * Wo;
    std::fill_n(yplane, Ho * Wo, b[oc]);
    for (std::size_t ic = 0; ic < C; ++ic) {
      const double* xplane = x.data() + (bi * C + ic) * H * W;
      for (std::size_t kh = 0; kh < K; ++kh) {
        const Span rows = valid_outputs(H, Ho, kh, S, P);
        for (std::size_t kw = 0; kw < K; ++kw) {
          const double wv = w[((oc * C + ic) * K + kh) * K + kw];
          const Span cols = valid_outputs(W, Wo, kw, S, P);
          for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
            const std::size_t base = (oh * S + kh - P) * W + kw;
            double* yrow = yplane + oh * Wo;
            for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) yrow[ow] += wv * xplane[base + ow * S - P];
          }
        }
      }
    }
  }
}

void conv2d_backward(std::span<const double> x, std::span<const double> w, std::span<const double> gy,
                     std::span<double> gx, std::span<double> gw, std::span<double> gb, ConvDims d) {
  const std::size_t B = d.batch, C = d.in_ch, H = d.height, W = d.width, K = d.kernel, S = d.stride, P = d.pad;
  const std::size_t OC = d.out_ch, Ho = d.out_h(), Wo = d.out_w();
  const bool par = B * OC * Ho * Wo * C * K * K >= kParallelWork;

  if (!gw.empty() || !gb.empty()) {
#pragma omp parallel for schedule(static) if (par)
    for (idx oci = 0; oci < static_cast<idx>(OC); ++oci) {
      const std::size_t oc = static_cast<std::size_t>(oci);
      if (!gb.empty()) {
        double acc = 0.0;
        for (std::size_t bi = 0; bi < B; ++bi) {
          const double* gplane = gy.data() + (bi * OC + oc) * Ho * Wo;
          for (std::size_t j = 0; j < Ho * Wo; ++j) acc += gplane[j];
        }
        gb[oc] = acc;
      }
      if (gw.empty()) continue;
      for (std::size_t ic = 0; ic < C; ++ic) {
        for (std::size_t kh = 0; kh < K; ++kh) {
          const Span rows = valid_outputs(H, Ho, kh, S, P);
          for (std::size_t kw = 0; kw < K; ++kw) {
            const Span cols = valid_outputs(W, Wo, kw, S, P);
            double acc = 0.0;
            for (std::size_t bi = 0; bi < B; ++bi) {
              const double* gplane = gy.data() + (bi * OC + oc) * Ho * Wo;
              const double* xplane = x.data() + (bi * C + ic) * H * W;
              for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
                const std::size_t base = (oh * S + kh - P) * W + kw;
                const double* grow = gplane + oh * Wo;
                for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) acc += grow[ow] * xplane[base + ow * S - P];
              }
            }
            gw[((oc * C + ic) * K + kh) * K + kw] = acc;
          }
        }
      }
    }
  }

  if (!gx.empty()) {
#pragma omp parallel for schedule(static) if (par)
    for (idx bi = 0; bi < static_cast<idx>(B); ++bi) {
      double* gxs = gx.data() + bi * C * H * W;
      std::fill_n(gxs, C * H * W, 0.0);
      for (std::size_t oc = 0; oc < OC; ++oc) {
        const double* gplane = gy.data() + (bi * OC + oc) * Ho * Wo;
        for (std::size_t ic = 0; ic < C; ++ic) {
          double* gxplane = gxs + ic * H * W;
          for (std::size_t kh = 0; kh < K; ++kh) {
            const Span rows = valid_outputs(H, Ho, kh, S, P);
            for (std::size_t kw = 0; kw < K; ++kw) {
              const double wv = w[((oc * C + ic) * K + kh) * K + kw];
              const Span cols = valid_outputs(W, Wo, kw, S, P);
              for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
                const std::size_t base = (oh * S + kh - P) * W + kw;
                const double* grow = gplane + oh * Wo;
                for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) gxplane[base + ow * S - P] += wv * grow[ow];
              }
            }
          }
        }
      }
    }
  }
}

void maxpool_forward(std::span<const double> x, std::span<double> y, std::span<std::size_t> argmax, PoolDims d) {
  const std::size_t H = d.height, W = d.width, K = d.kernel, S = d.stride, Ho = d.out_h(), Wo = d.out_w();
  const bool par = d.batch * d.channels * Ho * Wo * K * K >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (idx plane = 0; plane < static_cast<idx>(d.batch * d.channels); ++plane) {
    const std::size_t in_off = static_cast<std::size_t>(plane) * H * W;
    const std::size_t out_off = static_cast<std::size_t>(plane) * Ho * Wo;
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        std::size_t best = in_off + oh * S * W + ow * S;
        for (std::size_t kh = 0; kh < K; ++kh) {
          for (std::size_t kw = 0; kw < K; ++kw) {
            const std::size_t at = in_off + (oh * S + kh) * W + ow * S + kw;
            if (x[at] > x[best]) best = at;
          }
        }
        y[out_off + oh * Wo + ow] = x[best];
        argmax[out_off + oh * Wo + ow] = best;
      }
    }
  }
}

void maxpool_backward(std::span<const double> gy, std::span<const std::size_t> argmax, std::span<double> gx) {
  std::fill(gx.begin(), gx.end(), 0.0);
  for (std::size_t j = 0; j < gy.size(); ++j) gx[argmax[j]] += gy[j];
}

void relu_forward(std::span<const double> x, std::span<double> y) {
  const bool par = x.size() >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (idx i = 0; i < static_cast<idx>(x.size()); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(std::span<const double> x, std::span<const double> gy, std::span<double> gx) {
  const bool par = x.size() >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (idx i = 0; i < static_cast<idx>(x.size()); ++i) gx[i] = x[i] > 0.0 ? gy[i] : 0.0;
}

}  // namespace fedalc::kernels
