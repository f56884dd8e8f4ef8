#pragma once

// Layer kernels. Two implementations share each signature:
//
//   fedalc::kernels            OpenMP-parallel, loop orders chosen so the
//                              inner loop vectorizes without reassociation
//   fedalc::kernels::reference plain serial loops, kept as a test oracle and
//                              as the benchmark baseline
//
// Parallel kernels split work only across independent outputs (batch rows,
// output channels, weight rows). No reduction is ever split between
// threads, so results are bitwise identical for any thread count.

#include <cstddef>
#include <span>

namespace fedalc::kernels {

struct DenseDims {
  std::size_t batch, in, out;
};

struct ConvDims {
  std::size_t batch, in_ch, height, width;
  std::size_t out_ch, kernel, stride, pad;
  std::size_t out_h() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * pad - kernel) / stride + 1; }
};

struct PoolDims {
  std::size_t batch, channels, height, width;
  std::size_t kernel, stride;
  std::size_t out_h() const { return (height - kernel) / stride + 1; }
  std::size_t out_w() const { return (width - kernel) / stride + 1; }
};

// Dense weights are stored [in x out], bias [out].
void dense_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                   std::span<double> y, DenseDims d);
// Empty gx or gw/gb spans skip that output.
void dense_backward(std::span<const double> x, std::span<const double> w, std::span<const double> gy,
                    std::span<double> gx, std::span<double> gw, std::span<double> gb, DenseDims d);

// Conv weights are stored [out_ch x in_ch x k x k]; zero padding.
void conv2d_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                    std::span<double> y, ConvDims d);
void conv2d_backward(std::span<const double> x, std::span<const double> w, std::span<const double> gy,
                     std::span<double> gx, std::span<double> gw, std::span<double> gb, ConvDims d);

// argmax receives the flat input offset of the winner of each window.
// Ties go to the first maximal element in row-major window order.
void maxpool_forward(std::span<const double> x, std::span<double> y, std::span<std::size_t> argmax, PoolDims d);
void maxpool_backward(std::span<const double> gy, std::span<const std::size_t> argmax, std::span<double> gx);

// Subgradient at exactly zero is zero.
void relu_forward(std::span<const double> x, std::span<double> y);
void relu_backward(std::span<const double> x, std::span<const double> gy, std::span<double> gx);

namespace reference {

void dense_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                   std::span<double> y, DenseDims d);
void dense_backward(std::span<const double> x, std::span<const double> w, std::span<const double> gy,
                    std::span<double> gx, std::span<double> gw, std::span<double> gb, DenseDims d);
void conv2d_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                    std::span<double> y, ConvDims d);
void conv2d_backward(std::span<const double> x, std::span<const double> w, std::span<const double> gy,
                     std::span<double> gx, std::span<double> gw, std::span<double> gb, ConvDims d);
void maxpool_forward(std::span<const double> x, std::span<double> y, std::span<std::size_t> argmax, PoolDims d);
void maxpool_backward(std::span<const double> gy, std::span<const std::size_t> argmax, std::span<double> gx);
void relu_forward(std::span<const double> x, std::span<double> y);
void relu_backward(std::span<const double> x, std::span<const double> gy, std::span<double> gx);

}  // namespace reference

/// Threads the parallel kernels may use (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace fedalc::kernels
