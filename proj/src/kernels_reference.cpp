// Textbook loops, one output element at a time. Used as a test oracle for
// the parallel kernels and as the benchmark baseline.

#include <algorithm>
#include <cstddef>

#include "fedalc/kernels.hpp"

namespace fedalc::kernels::reference {

void dense_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                   std::span<double> y, DenseDims d) {
  for (std::size_t bi = 0; bi < d.batch; ++bi) {
    for (std::size_t o = 0; o < d.out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < d.in; ++i) s += x[bi * d.in + i] * w[i * d.out + o];
      y[bi * d.out + o] = s;
    }
  }
}

void dense_backward(std::span<const double> x, std::span<const double> w, std::span<const double> gy,
                    std::span<double> gx, std::span<double> gw, std::span<double> gb, DenseDims d) {
  if (!gx.empty()) {
    for (std::size_t bi = 0; bi < d.batch; ++bi) {
      for (std::size_t i = 0; i < d.in; ++i) {
        double s = 0.0;
        for (std::size_t o = 0; o < d.out; ++o) s += gy[bi * d.out + o] * w[i * d.out + o];
        gx[bi * d.in + i] = s;
      }
    }
  }
  if (!gw.empty()) {
    for (std::size_t i = 0; i < d.in; ++i) {
      for (std::size_t o = 0; o < d.out; ++o) {
        double s = 0.0;
        for (std::size_t bi = 0; bi < d.batch; ++bi) s += x[bi * d.in + i] * gy[bi * d.out + o];
        gw[i * d.out + o] = s;
      }
    }
  }
  if (!gb.empty()) {
    for (std::size_t o = 0; o < d.out; ++o) {
      double s = 0.0;
      for (std::size_t bi = 0; bi < d.batch; ++bi) s += gy[bi * d.out + o];
      gb[o] = s;
    }
  }
}

namespace {

// Input value at padded coordinates, zero outside the image.
double padded(std::span<const double> x, const ConvDims& d, std::size_t bi, std::size_t c, long ih, long iw) {
  if (ih < 0 || iw < 0 || ih >= static_cast<long>(d.height) || iw >= static_cast<long>(d.width)) return 0.0;
  return x[((bi * d.in_ch + c) * d.height + static_cast<std::size_t>(ih)) * d.width + static_cast<std::size_t>(iw)];
}

}  // namespace

void conv2d_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                    std::span<double> y, ConvDims d) {
  const std::size_t Ho = d.out_h(), Wo = d.out_w(), K = d.kernel;
  for (std::size_t bi = 0; bi < d.batch; ++bi)
    for (std::size_t oc = 0; oc < d.out_ch; ++oc)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          double s = b[oc];
          for (std::size_t ic = 0; ic < d.in_ch; ++ic)
            for (std::size_t kh = 0; kh < K; ++kh)
              for (std::size_t kw = 0; kw < K; ++kw) {
                const long ih = static_cast<long>(oh * d.stride + kh) - static_cast<long>(d.pad);
                const long iw = static_cast<long>(ow * d.stride + kw) - static_cast<long>(d.pad);
                s += w[((oc * d.in_ch + ic) * K + kh) * K + kw] * padded(x, d, bi, ic, ih, iw);
              }
          y[((bi * d.out_ch + oc) * Ho + oh) * Wo + ow] = s;
        }
}

void conv2d_backward(std::span<const double> x, std::span<const double> w, std::span<const double> gy,
                     std::span<double> gx, std::span<double> gw, std::span<double> gb, ConvDims d) {
  const std::size_t Ho = d.out_h(), Wo = d.out_w(), K = d.kernel;
  std::fill(gx.begin(), gx.end(), 0.0);
  std::fill(gw.begin(), gw.end(), 0.0);
  std::fill(gb.begin(), gb.end(), 0.0);
  for (std::size_t bi = 0; bi < d.batch; ++bi)
    for (std::size_t oc = 0; oc < d.out_ch; ++oc)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          const double g = gy[((bi * d.out_ch + oc) * Ho + oh) * Wo + ow];
          if (!gb.empty()) gb[oc] += g;
          for (std::size_t ic = 0; ic < d.in_ch; ++ic)
            for (std::size_t kh = 0; kh < K; ++kh)
              for (std::size_t kw = 0; kw < K; ++kw) {
                const long ih = static_cast<long>(oh * d.stride + kh) - static_cast<long>(d.pad);
                const long iw = static_cast<long>(ow * d.stride + kw) - static_cast<long>(d.pad);
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(d.height) || iw >= static_cast<long>(d.width))
                  continue;
                const std::size_t xi =
                    ((bi * d.in_ch + ic) * d.height + static_cast<std::size_t>(ih)) * d.width +
                    static_cast<std::size_t>(iw);
                const std::size_t wi = ((oc * d.in_ch + ic) * K + kh) * K + kw;
                if (!gw.empty()) gw[wi] += g * x[xi];
                if (!gx.empty()) gx[xi] += g * w[wi];
              }
        }
}

void maxpool_forward(std::span<const double> x, std::span<double> y, std::span<std::size_t> argmax, PoolDims d) {
  const std::size_t Ho = d.out_h(), Wo = d.out_w();
  for (std::size_t p = 0; p < d.batch * d.channels; ++p)
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        std::size_t best = 0;
        bool first = true;
        for (std::size_t kh = 0; kh < d.kernel; ++kh)
          for (std::size_t kw = 0; kw < d.kernel; ++kw) {
            const std::size_t at = (p * d.height + oh * d.stride + kh) * d.width + ow * d.stride + kw;
            if (first || x[at] > x[best]) best = at;
            first = false;
          }
        y[(p * Ho + oh) * Wo + ow] = x[best];
        argmax[(p * Ho + oh) * Wo + ow] = best;
      }
}

void maxpool_backward(std::span<const double> gy, std::span<const std::size_t> argmax, std::span<double> gx) {
  std::fill(gx.begin(), gx.end(), 0.0);
  for (std::size_t j = 0; j < gy.size(); ++j) gx[argmax[j]] += gy[j];
}

void relu_forward(std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(std::span<const double> x, std::span<const double> gy, std::span<double> gx) {
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > 0.0 ? gy[i] : 0.0;
}

}  // namespace fedalc::kernels::reference
